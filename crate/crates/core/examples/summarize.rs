//! Layer-by-layer summary of the full-size MDCN-I2 network.

use mdcn::netbuilder::{assemble_model, summarize, Variant};

fn main() -> mdcn::Result<()> {
    let graph = assemble_model(Variant::MdcnI2)?;
    let summary = summarize(&graph, graph.input_size())?;
    print!("{}", summary.to_text());
    Ok(())
}
