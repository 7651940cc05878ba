//! Checkpoint directories:
//!
//! ```text
//! graph.txt            graph text format
//! manifest.txt         iteration, optimizer constants, parameter list
//! params/<name>.mdt    one MDT1 tensor per parameter
//! velocity/<name>.mdt  matching momentum buffers
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::OptimizerState;
use crate::error::{Error, Result};
use crate::netbuilder::NetworkGraph;
use crate::network::Network;
use crate::tensor::Tensor;

pub fn save_checkpoint(dir: impl AsRef<Path>, net: &Network, state: &OptimizerState) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("params"))?;
    fs::create_dir_all(dir.join("velocity"))?;
    fs::write(dir.join("graph.txt"), net.graph().to_text())?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "iteration {}", state.iteration);
    let _ = writeln!(manifest, "momentum {:?}", state.momentum);
    let _ = writeln!(manifest, "weight_decay {:?}", state.weight_decay);
    for (i, name) in net.param_names().iter().enumerate() {
        let shape: Vec<String> = net.params()[i].shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(manifest, "param {name} {}", shape.join("x"));
        net.params()[i].save(dir.join("params").join(format!("{name}.mdt")))?;
        state.velocities[i].save(dir.join("velocity").join(format!("{name}.mdt")))?;
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

fn manifest_value<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .ok_or_else(|| Error::invalid("checkpoint", format!("manifest lacks `{key}`")))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(Network, OptimizerState)> {
    let dir = dir.as_ref();
    let graph = NetworkGraph::parse(&fs::read_to_string(dir.join("graph.txt"))?)?;
    let mut net = Network::new(graph)?;
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let num = |key: &str| -> Result<f64> {
        let v = manifest_value(&manifest, key)?;
        v.trim()
            .parse()
            .map_err(|_| Error::invalid("checkpoint", format!("bad `{key}` value `{v}`")))
    };
    let iteration = num("iteration")? as usize;
    let mut state = OptimizerState::new(net.params(), num("momentum")?, num("weight_decay")?);
    state.iteration = iteration;
    let listed = manifest.lines().filter(|l| l.starts_with("param ")).count();
    if listed != net.params().len() {
        return Err(Error::Mismatch(format!(
            "checkpoint lists {listed} parameters, graph has {}",
            net.params().len()
        )));
    }
    let names = net.param_names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let p = Tensor::load(dir.join("params").join(format!("{name}.mdt")))?;
        net.set_param(i, p)?;
        let v = Tensor::load(dir.join("velocity").join(format!("{name}.mdt")))?;
        if !v.same_shape(&state.velocities[i]) {
            return Err(Error::Mismatch(format!(
                "velocity for `{name}` has shape {:?}",
                v.shape()
            )));
        }
        state.velocities[i] = v;
    }
    Ok((net, state))
}
