//! Configuration layering: defaults, then a file, then `--set` overrides.

use mdcn::cli::{run_args, Config};

fn main() -> mdcn::Result<()> {
    let mut cfg = Config::parse("# tighter suppression\nnms_threshold = 0.3\nvariant = mdcn-i1\n")?;
    cfg.set("seed", "17")?;
    print!("{}", cfg.dump());

    let path = std::env::temp_dir().join("mdcn-example.cfg");
    std::fs::write(&path, cfg.dump())?;
    let path = path.to_str().expect("utf-8 temp dir");
    print!(
        "{}",
        run_args([
            "mdcn",
            "count-params",
            "--config",
            path,
            "--set",
            "model=full",
            "--variant",
            "mdcn-i1"
        ])?
    );
    Ok(())
}
