//! Trains a toy model for a few iterations through the command-line layer,
//! then runs detection on one of its validation images.

fn main() -> mdcn::Result<()> {
    let out = std::env::temp_dir().join("mdcn-detect-example");
    let out = out.to_str().expect("utf-8 temp dir");
    let report = mdcn::cli::run_args([
        "mdcn",
        "train-toy",
        "--iterations",
        "40",
        "--out",
        out,
        "--set",
        "train_images=64",
        "--set",
        "val_images=4",
    ])?;
    print!("{report}");

    let checkpoint = format!("{out}/checkpoint");
    let image = format!("{out}/val/image_2/000000.ppm");
    let dets = mdcn::cli::run_args(["mdcn", "detect", "--checkpoint", &checkpoint, "--image", &image])?;
    println!("top detections:");
    for line in dets.lines().take(5) {
        println!("  {line}");
    }
    Ok(())
}
