//! Executes a [`NetworkGraph`] forward and backward with owned parameters.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{
    conv2d, conv2d_grad, l2_normalize_scale, l2_normalize_scale_backward, maxpool2d, maxpool2d_backward, relu,
    relu_backward,
};
use crate::netbuilder::{LayerKind, NetworkGraph};
use crate::tensor::Tensor;

/// Scale applied to the He deviation of prediction-head weights.
pub const HEAD_INIT_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binding {
    Conv { weight: usize, bias: usize },
    Scale { scale: usize },
}

/// Per-tap head shapes and the flat position of each tap's first anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub taps: Vec<TapHead>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapHead {
    pub loc_layer: usize,
    pub conf_layer: usize,
    pub boxes_per_cell: usize,
    pub height: usize,
    pub width: usize,
}

impl HeadLayout {
    pub fn num_anchors(&self) -> usize {
        self.taps.iter().map(|t| t.boxes_per_cell * t.height * t.width).sum()
    }
}

/// Layer outputs retained by a forward pass.
#[derive(Debug)]
pub struct Activations {
    outputs: Vec<Option<Tensor>>,
    pool_indices: Vec<Option<Vec<usize>>>,
}

impl Activations {
    pub fn output(&self, layer: usize) -> Option<&Tensor> {
        self.outputs[layer].as_ref()
    }

    /// Flat argmax positions of a pooling layer, kept when every output is.
    pub fn pool_indices(&self, layer: usize) -> Option<&[usize]> {
        self.pool_indices[layer].as_deref()
    }
}

/// A graph plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    graph: NetworkGraph,
    params: Vec<Tensor>,
    param_names: Vec<String>,
    bindings: Vec<Option<Binding>>,
    /// Last layer that reads each layer's output.
    last_use: Vec<usize>,
    heads: HeadLayout,
}

impl Network {
    /// All weights zero; scales at their configured initial value.
    pub fn new(graph: NetworkGraph) -> Result<Self> {
        let mut params = Vec::new();
        let mut param_names = Vec::new();
        let mut bindings = Vec::with_capacity(graph.layers().len());
        for (i, l) in graph.layers().iter().enumerate() {
            let cin = graph.in_channels(i);
            let b = match l.kind {
                LayerKind::Conv {
                    out_channels, kernel, ..
                } => {
                    params.push(Tensor::zeros(&[out_channels, cin, kernel, kernel]));
                    param_names.push(format!("{}.weight", l.id));
                    params.push(Tensor::zeros(&[out_channels]));
                    param_names.push(format!("{}.bias", l.id));
                    Some(Binding::Conv {
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    })
                }
                LayerKind::L2Norm { init_scale } => {
                    params.push(Tensor::filled(&[cin], init_scale));
                    param_names.push(format!("{}.scale", l.id));
                    Some(Binding::Scale {
                        scale: params.len() - 1,
                    })
                }
                _ => None,
            };
            bindings.push(b);
        }
        let mut last_use: Vec<usize> = (0..graph.layers().len()).collect();
        for i in 0..graph.layers().len() {
            for &j in graph.input_indices(i) {
                last_use[j] = last_use[j].max(i);
            }
        }
        let shapes = graph.shapes();
        let taps = graph
            .heads()?
            .into_iter()
            .map(|(t, loc_layer, conf_layer, boxes_per_cell)| TapHead {
                loc_layer,
                conf_layer,
                boxes_per_cell,
                height: shapes[t].height,
                width: shapes[t].width,
            })
            .collect();
        Ok(Network {
            graph,
            params,
            param_names,
            bindings,
            last_use,
            heads: HeadLayout { taps },
        })
    }

    /// He-normal (fan-in) convolution weights, zero biases. Prediction
    /// heads are drawn at [`HEAD_INIT_GAIN`] times the He deviation so the
    /// initial scores start near uniform.
    pub fn init_he<R: Rng>(&mut self, rng: &mut R) {
        let layers = self.graph.layers();
        for (i, b) in self.bindings.iter().enumerate() {
            if let Some(Binding::Conv { weight, bias }) = *b {
                let shape = self.params[weight].shape().to_vec();
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let is_head = self
                    .graph
                    .input_indices(i)
                    .iter()
                    .any(|&j| matches!(layers[j].kind, LayerKind::PredictTap { .. }));
                let gain = if is_head { HEAD_INIT_GAIN } else { 1.0 };
                let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("positive std");
                self.params[weight]
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = normal.sample(rng));
                self.params[bias].fill(0.0);
            } else if let Some(Binding::Scale { scale }) = *b {
                if let LayerKind::L2Norm { init_scale } = self.graph.layers()[i].kind {
                    self.params[scale].fill(init_scale);
                }
            }
        }
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn heads(&self) -> &HeadLayout {
        &self.heads
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Index of a named parameter tensor (e.g. `conv6_b3.weight`).
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn set_param(&mut self, index: usize, value: Tensor) -> Result<()> {
        let slot = &mut self.params[index];
        if !slot.same_shape(&value) {
            return Err(Error::Mismatch(format!(
                "parameter `{}`: shape {:?} vs {:?}",
                self.param_names[index],
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let [_, c, _, _] = input.dims4("forward")?;
        let want = self.graph.input_channels();
        if c != want {
            return Err(Error::shape("forward", "input channels", want, c));
        }
        Ok(())
    }

    /// Runs the graph on an `[N, C, H, W]` batch. With `keep_all` every
    /// intermediate output is retained for [`Network::backward`]; otherwise
    /// outputs are freed after their last reader and only the heads survive.
    pub fn forward(&self, input: &Tensor, keep_all: bool) -> Result<Activations> {
        self.check_input(input)?;
        let layers = self.graph.layers();
        let mut outputs: Vec<Option<Tensor>> = vec![None; layers.len()];
        let mut pool_indices: Vec<Option<Vec<usize>>> = vec![None; layers.len()];
        let mut keep = vec![keep_all; layers.len()];
        for t in &self.heads.taps {
            keep[t.loc_layer] = true;
            keep[t.conf_layer] = true;
        }
        for (i, l) in layers.iter().enumerate() {
            let ins = self.graph.input_indices(i);
            let arg = |k: usize| -> &Tensor { outputs[ins[k]].as_ref().expect("input computed before use") };
            let out = match &l.kind {
                LayerKind::Input { .. } => input.clone(),
                LayerKind::Conv { .. } => {
                    let Some(Binding::Conv { weight, bias }) = self.bindings[i] else {
                        unreachable!()
                    };
                    let g = l.kind.conv_geometry().expect("conv");
                    conv2d(arg(0), &self.params[weight], &self.params[bias], g)?
                }
                LayerKind::Pool { .. } => {
                    let (y, idx) = maxpool2d(arg(0), l.kind.pool_geometry().expect("pool"))?;
                    if keep_all {
                        pool_indices[i] = Some(idx);
                    }
                    y
                }
                LayerKind::Relu => relu(arg(0)),
                LayerKind::L2Norm { .. } => {
                    let Some(Binding::Scale { scale }) = self.bindings[i] else {
                        unreachable!()
                    };
                    l2_normalize_scale(arg(0), &self.params[scale])?
                }
                LayerKind::Concat => concat_channels(
                    &ins.iter()
                        .map(|&j| outputs[j].as_ref().expect("computed"))
                        .collect::<Vec<_>>(),
                )?,
                LayerKind::PredictTap { .. } => arg(0).clone(),
            };
            outputs[i] = Some(out);
            if !keep_all {
                for &j in ins {
                    if self.last_use[j] <= i && !keep[j] {
                        outputs[j] = None;
                    }
                }
            }
        }
        Ok(Activations { outputs, pool_indices })
    }

    /// `(loc, conf)` head outputs per tap.
    pub fn head_outputs<'a>(&self, acts: &'a Activations) -> Vec<(&'a Tensor, &'a Tensor)> {
        self.heads
            .taps
            .iter()
            .map(|t| {
                (
                    acts.output(t.loc_layer).expect("head kept"),
                    acts.output(t.conf_layer).expect("head kept"),
                )
            })
            .collect()
    }

    /// Parameter gradients given `(d loc, d conf)` for every tap, aligned
    /// with [`Network::params`].
    pub fn backward(&self, acts: &Activations, head_grads: &[(Tensor, Tensor)]) -> Result<Vec<Tensor>> {
        if head_grads.len() != self.heads.taps.len() {
            return Err(Error::shape(
                "backward",
                "tap count",
                self.heads.taps.len(),
                head_grads.len(),
            ));
        }
        let layers = self.graph.layers();
        let mut grads: Vec<Option<Tensor>> = vec![None; layers.len()];
        for (t, (gl, gc)) in self.heads.taps.iter().zip(head_grads) {
            accumulate(&mut grads[t.loc_layer], gl.clone())?;
            accumulate(&mut grads[t.conf_layer], gc.clone())?;
        }
        let mut pgrads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let act = |j: usize| -> Result<&Tensor> {
            acts.outputs[j]
                .as_ref()
                .ok_or_else(|| Error::invalid("backward", "forward pass did not keep activations"))
        };
        for i in (1..layers.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let l = &layers[i];
            let ins = self.graph.input_indices(i);
            match &l.kind {
                LayerKind::Input { .. } => {}
                LayerKind::Conv { .. } => {
                    let Some(Binding::Conv { weight, bias }) = self.bindings[i] else {
                        unreachable!()
                    };
                    let j = ins[0];
                    let need_input = !matches!(layers[j].kind, LayerKind::Input { .. });
                    let cg = conv2d_grad(
                        act(j)?,
                        &self.params[weight],
                        l.kind.conv_geometry().expect("conv"),
                        &g,
                        need_input,
                    )?;
                    pgrads[weight].add_assign(&cg.weights)?;
                    pgrads[bias].add_assign(&cg.bias)?;
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads[j], gi)?;
                    }
                }
                LayerKind::Pool { .. } => {
                    let j = ins[0];
                    let idx = acts.pool_indices[i]
                        .as_ref()
                        .ok_or_else(|| Error::invalid("backward", "forward pass did not keep pool indices"))?;
                    let gi = maxpool2d_backward(act(j)?.shape(), idx, &g)?;
                    accumulate(&mut grads[j], gi)?;
                }
                LayerKind::Relu => {
                    let gi = relu_backward(act(i)?, &g)?;
                    accumulate(&mut grads[ins[0]], gi)?;
                }
                LayerKind::L2Norm { .. } => {
                    let Some(Binding::Scale { scale }) = self.bindings[i] else {
                        unreachable!()
                    };
                    let (gi, gs) = l2_normalize_scale_backward(act(ins[0])?, &self.params[scale], &g)?;
                    pgrads[scale].add_assign(&gs)?;
                    accumulate(&mut grads[ins[0]], gi)?;
                }
                LayerKind::Concat => {
                    let parts: Vec<usize> = ins
                        .iter()
                        .map(|&j| act(j).map(|t| t.shape()[1]))
                        .collect::<Result<_>>()?;
                    for (k, gi) in split_channels(&g, &parts)?.into_iter().enumerate() {
                        accumulate(&mut grads[ins[k]], gi)?;
                    }
                }
                LayerKind::PredictTap { .. } => accumulate(&mut grads[ins[0]], g)?,
            }
        }
        Ok(pgrads)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(t) => t.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Concatenates `[N, C_i, H, W]` tensors along channels.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let [n, _, h, w] = parts[0].dims4("concat")?;
    let mut total_c = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.dims4("concat")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Mismatch(format!(
                "concat: shape {:?} does not match {:?}",
                p.shape(),
                parts[0].shape()
            )));
        }
        total_c += pc;
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total_c * hw);
    for b in 0..n {
        for p in parts {
            let c = p.shape()[1];
            data.extend_from_slice(&p.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], data)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(t: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let [n, c, h, w] = t.dims4("split")?;
    let total: usize = channels.iter().sum();
    if total != c {
        return Err(Error::shape("split", "channels", total, c));
    }
    let hw = h * w;
    let mut out: Vec<Vec<f64>> = channels.iter().map(|&k| Vec::with_capacity(n * k * hw)).collect();
    for b in 0..n {
        let mut off = b * c * hw;
        for (k, &ck) in channels.iter().enumerate() {
            out[k].extend_from_slice(&t.data()[off..off + ck * hw]);
            off += ck * hw;
        }
    }
    out.into_iter()
        .zip(channels)
        .map(|(d, &ck)| Tensor::new(vec![n, ck, h, w], d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netbuilder::{assemble, ModelConfig, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64);
        let b = Tensor::from_fn(&[2, 3, 2, 2], |i| -(i as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        let parts = split_channels(&cat, &[1, 3]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn toy_forward_shapes_and_inference_mode_agree() {
        let g = assemble(&ModelConfig::toy(Variant::MdcnI2, 150)).unwrap();
        let mut net = Network::new(g).unwrap();
        net.init_he(&mut ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::from_fn(&[1, 3, 150, 150], |i| ((i % 97) as f64) / 97.0);
        let full = net.forward(&x, true).unwrap();
        let lean = net.forward(&x, false).unwrap();
        for ((l1, c1), (l2, c2)) in net.head_outputs(&full).into_iter().zip(net.head_outputs(&lean)) {
            assert_eq!(l1, l2);
            assert_eq!(c1, c2);
        }
        let sizes: Vec<usize> = net.heads().taps.iter().map(|t| t.height).collect();
        assert_eq!(sizes, vec![19, 9, 5, 3, 1]);
    }
}
