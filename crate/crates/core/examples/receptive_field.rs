//! Receptive field growth through the SSD-300 backbone and extra layers.

use mdcn::netbuilder::{assemble_model, receptive_field, Variant};

fn main() -> mdcn::Result<()> {
    let graph = assemble_model(Variant::Ssd300)?;
    let rf = receptive_field(&graph)?;
    for tap in graph.source_taps() {
        let e = rf.get(tap).expect("tap in report");
        println!(
            "{:<14} rf {:>5}px  stride {:>3}  coverage {:.2}",
            e.id, e.size, e.stride, e.coverage
        );
    }
    Ok(())
}
