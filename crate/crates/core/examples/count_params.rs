//! Parameter totals per variant, the 3x3-stack saving and the width search.

use mdcn::netbuilder::{assemble_model, calibrate_widths, count_parameters, stacked_vs_direct_ratio, REFERENCE_PARAMS};

fn main() -> mdcn::Result<()> {
    for (variant, reference) in REFERENCE_PARAMS {
        let total = count_parameters(&assemble_model(variant)?).total;
        println!(
            "{:<8} {:>10}  reference {:.3e}  deviation {:+.2}%",
            variant.name(),
            total,
            reference,
            100.0 * (total as f64 / reference - 1.0)
        );
    }
    println!("two 3x3 vs one 5x5 at width 512: {:.4}", stacked_vs_direct_ratio(512));

    let cal = calibrate_widths(&[64, 128, 256])?;
    println!(
        "calibrated inception widths {:?}, worst error {:.4}",
        cal.widths, cal.max_rel_error
    );
    Ok(())
}
