//! Analytic versus central-difference gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{assign, batch_objective, Objective, TrainSample};
use crate::error::{Error, Result};
use crate::multibox::{combine_terms, encode, flatten_predictions, image_loss_terms, AnchorSet, BBox, LabeledBox};
use crate::netbuilder::{build_inception_unit, GraphBuilder, InceptionUnitSpec, LayerKind, NetworkGraph};
use crate::network::Network;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Label of the coordinate with the largest error.
    pub worst: String,
    pub checked: usize,
    /// Coordinates whose finite-difference window straddled a kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    fn record(&mut self, label: impl FnOnce() -> String, err: f64) {
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = label();
        }
    }
}

/// Compares `analytic[i]` with the derivative of `f` at `x` for every `i`
/// in `indices`. A coordinate is skipped when the one-sided slopes over
/// `step` disagree by more than `kink_tolerance`, which flags a non-smooth
/// point inside the window. Otherwise the central difference is refined by
/// Ridders extrapolation from a `100·step` window, falling back to the plain
/// difference when the two disagree by more than `kink_tolerance`.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    kink_tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let f0 = f(x)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut probe = x.to_vec();
    for &i in indices {
        probe[i] = x[i] + step;
        let fp = f(&probe)?;
        probe[i] = x[i] - step;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::NonFinite("loss".into()));
        }
        let (right, left) = ((fp - f0) / step, (f0 - fm) / step);
        if (right - left).abs() > kink_tolerance * right.abs().max(left.abs()).max(1.0) {
            report.skipped += 1;
            continue;
        }
        let plain = (fp - fm) / (2.0 * step);
        let mut central = |h: f64| -> Result<Option<f64>> {
            let mut ends = [0.0; 2];
            for (e, v) in ends.iter_mut().zip([x[i] + h, x[i] - h]) {
                probe[i] = v;
                *e = f(&probe)?;
            }
            probe[i] = x[i];
            Ok(Some((ends[0] - ends[1]) / (2.0 * h)))
        };
        let h0 = step * WIDEST;
        let d0 = central(h0)?.unwrap_or(plain);
        let wide = ridders(h0, d0, central)?;
        // a kink inside the wide window but outside the narrow one
        let numeric = if (wide - plain).abs() > kink_tolerance * plain.abs().max(1.0) {
            plain
        } else {
            wide
        };
        report.record(|| format!("x[{i}]"), relative_error(analytic[i], numeric));
    }
    Ok(report)
}

/// Windows run from `WIDEST·step` down to `NARROWEST·step` by halving.
/// Narrower windows lose too many digits to roundoff on small gradients.
const WIDEST: f64 = 100.0;
const NARROWEST: f64 = 10.0;
/// Nudges of a coordinate whose every window holds a kink.
const MAX_NUDGES: usize = 5;

/// Loss plus the discrete state that selects the smooth piece the loss is
/// on: ReLU signs, pooling winners, mined negatives and smooth-L1 branches.
/// Two points with equal state lie on the same piece unless a switch flips
/// and flips back between them.
fn loss_and_state(
    net: &Network,
    anchors: &AnchorSet,
    batch: &[TrainSample],
    objective: &Objective,
) -> Result<(f64, Vec<usize>)> {
    let classes = net.graph().num_classes() + 1;
    let mut state = Vec::new();
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let acts = net.forward(&Tensor::stack(std::slice::from_ref(&s.image))?, true)?;
        for (i, l) in net.graph().layers().iter().enumerate() {
            match l.kind {
                LayerKind::Relu => {
                    let y = acts.output(i).expect("kept");
                    state.extend(y.data().iter().map(|&v| usize::from(v > 0.0)));
                }
                LayerKind::Pool { .. } => state.extend_from_slice(acts.pool_indices(i).expect("kept")),
                _ => {}
            }
        }
        let flat = flatten_predictions(net.heads(), &net.head_outputs(&acts), 0, classes)?;
        let assignment = assign(s, anchors, objective.match_threshold)?;
        let t = image_loss_terms(
            &flat.conf,
            &flat.loc,
            classes,
            &assignment,
            &s.boxes,
            anchors,
            &objective.loss,
        )?;
        state.push(t.mined.len());
        state.extend_from_slice(&t.mined);
        for (a, g) in assignment.positives() {
            let target = encode(&s.boxes[g].bbox, &anchors.boxes[a], objective.loss.variances)?;
            for (k, tk) in target.iter().enumerate() {
                state.push(usize::from((flat.loc[a * 4 + k] - tk).abs() < 1.0));
            }
        }
        terms.push(t);
    }
    Ok((combine_terms(&terms, objective.loss.alpha).0.total, state))
}

/// Ridders extrapolation: window shrink factor, table depth and the growth
/// in error that stops the search.
const RIDDERS_SHRINK: f64 = 1.4;
const RIDDERS_DEPTH: usize = 10;
const RIDDERS_SAFE: f64 = 2.0;

/// Refines the central difference `d0` taken over `h0` by Ridders
/// extrapolation on shrinking windows. `central(h)` returns `None` when the
/// window at `h` is unusable, which ends the refinement.
fn ridders(h0: f64, d0: f64, mut central: impl FnMut(f64) -> Result<Option<f64>>) -> Result<f64> {
    let mut h = h0;
    let mut prev = vec![d0];
    let (mut best, mut err) = (d0, f64::INFINITY);
    for _ in 1..RIDDERS_DEPTH {
        h /= RIDDERS_SHRINK;
        let Some(d) = central(h)? else { break };
        let mut row = vec![d];
        let mut fac = RIDDERS_SHRINK * RIDDERS_SHRINK;
        for j in 1..=prev.len() {
            let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= RIDDERS_SHRINK * RIDDERS_SHRINK;
            let e = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = v;
            }
            row.push(v);
        }
        let diverging = (row[prev.len()] - prev[prev.len() - 1]).abs() >= RIDDERS_SAFE * err;
        prev = row;
        if diverging {
            break;
        }
    }
    Ok(best)
}

/// Derivative of the loss along parameter `p[i]`, extrapolated from central
/// differences whose windows keep both ends in the centre's state. The
/// first window is the widest of `100·step`, `50·step`, ... down to
/// `10·step` that qualifies, so the
/// extrapolation trades truncation against roundoff without crossing a
/// switch. `None` when no window qualifies.
fn smooth_derivative(
    work: &mut Network,
    anchors: &AnchorSet,
    batch: &[TrainSample],
    objective: &Objective,
    (p, i): (usize, usize),
    step: f64,
    centre: &[usize],
) -> Result<Option<f64>> {
    let x = work.params()[p].data()[i];
    let central = |work: &mut Network, h: f64| -> Result<Option<f64>> {
        let mut ends = [0.0; 2];
        for (e, v) in ends.iter_mut().zip([x + h, x - h]) {
            work.params_mut()[p].data_mut()[i] = v;
            let (f, s) = loss_and_state(work, anchors, batch, objective)?;
            if !f.is_finite() {
                return Err(Error::NonFinite("loss".into()));
            }
            if s != centre {
                return Ok(None);
            }
            *e = f;
        }
        Ok(Some((ends[0] - ends[1]) / (2.0 * h)))
    };

    let mut start = None;
    let mut h = step * WIDEST;
    while start.is_none() && h >= step * NARROWEST {
        start = central(work, h)?.map(|d| (h, d));
        h /= 2.0;
    }
    let Some((h0, d0)) = start else {
        work.params_mut()[p].data_mut()[i] = x;
        return Ok(None);
    };
    let best = ridders(h0, d0, |h| central(work, h));
    work.params_mut()[p].data_mut()[i] = x;
    best.map(Some)
}

/// Checks parameter gradients of the full detection objective on `batch`
/// for up to `samples_per_param` random coordinates of every parameter.
///
/// Each coordinate is differenced over the widest window between
/// `100·step` and `10·step` on which the loss stays on one smooth piece, then
/// refined by Ridders extrapolation over narrower windows. When
/// none qualifies, the coordinate is nudged by up to `100·step` and the
/// analytic gradient recomputed there; after [`MAX_NUDGES`] failures it is
/// counted as skipped.
pub fn grad_check_network<R: Rng>(
    net: &Network,
    anchors: &AnchorSet,
    batch: &[TrainSample],
    objective: &Objective,
    samples_per_param: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (base, grads) = batch_objective(net, anchors, batch, objective)?;
    if !base.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let (_, centre) = loss_and_state(net, anchors, batch, objective)?;
    let mut report = GradCheckReport::default();
    let mut work = net.clone();
    for (p, name) in net.param_names().iter().enumerate() {
        let len = net.params()[p].len();
        for i in sample(rng, len, samples_per_param.min(len)).into_vec() {
            let mut found = smooth_derivative(&mut work, anchors, batch, objective, (p, i), step, &centre)?
                .map(|n| (n, grads[p].data()[i]));
            let x = net.params()[p].data()[i];
            for _ in 0..MAX_NUDGES {
                if found.is_some() {
                    break;
                }
                let nudge = step * rng.gen_range(10.0..100.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                work.params_mut()[p].data_mut()[i] = x + nudge;
                let (_, g) = batch_objective(&work, anchors, batch, objective)?;
                let (_, c) = loss_and_state(&work, anchors, batch, objective)?;
                found = smooth_derivative(&mut work, anchors, batch, objective, (p, i), step, &c)?
                    .map(|n| (n, g[p].data()[i]));
            }
            work.params_mut()[p].data_mut()[i] = x;
            match found {
                Some((numeric, analytic)) => {
                    report.record(|| format!("{name}[{i}]"), relative_error(analytic, numeric))
                }
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}

/// A small detection network for gradient checks: two convolutions, a
/// pool, an L2-normalized tap, one inception unit feeding a second tap.
/// Input is `3×size×size` with `size ≥ 8`.
pub fn tiny_network_graph(size: usize, classes: usize) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new();
    let data = b.input(3);
    let c1 = b.conv_relu("conv1", &data, 4, 3, 1, 1, 1);
    let p1 = b.push(
        "pool1",
        LayerKind::Pool {
            window: 2,
            stride: 2,
            padding: 0,
            ceil_mode: true,
        },
        &[&c1],
    );
    let c2 = b.conv_relu("conv2", &p1, 6, 3, 1, 1, 1);
    let norm = b.push("conv2_norm", LayerKind::L2Norm { init_scale: 2.0 }, &[&c2]);
    let spec = InceptionUnitSpec {
        prefix: "conv3".into(),
        in_channels: 6,
        bottleneck_channels: 4,
        branch_channels: 2,
        stride: 2,
        padding: 1,
    };
    let (layers, cat) = build_inception_unit(&spec, &c2)?;
    for l in layers {
        let inputs: Vec<&str> = l.inputs.iter().map(String::as_str).collect();
        b.push(l.id.clone(), l.kind.clone(), &inputs);
    }
    let mut taps = Vec::new();
    for (name, src, k) in [("conv2", norm.as_str(), 2), ("conv3", cat.as_str(), 3)] {
        let tap = b.push(
            format!("{name}_tap"),
            LayerKind::PredictTap { boxes_per_cell: k },
            &[src],
        );
        let (loc, conf) = NetworkGraph::head_ids(&tap);
        b.conv(&loc, &tap, 4 * k, 3, 1, 1, 1);
        b.conv(&conf, &tap, (classes + 1) * k, 3, 1, 1, 1);
        taps.push(tap);
    }
    NetworkGraph::new("tiny", None, size, classes, b.into_layers(), taps)
}

/// [`tiny_network_graph`] with He weights, biases uniform in `±0.1` and
/// normalization scales in `[1, 3]`. Nonzero biases keep padded positions
/// away from the ReLU corner.
pub fn gradcheck_network<R: Rng>(rng: &mut R, size: usize, classes: usize) -> Result<Network> {
    let mut net = Network::new(tiny_network_graph(size, classes)?)?;
    net.init_he(rng);
    let names = net.param_names().to_vec();
    for (p, name) in names.iter().enumerate() {
        let range = if name.ends_with(".bias") {
            -0.1..0.1
        } else if name.ends_with(".scale") {
            1.0..3.0
        } else {
            continue;
        };
        for v in net.params_mut()[p].data_mut() {
            *v = rng.gen_range(range.clone());
        }
    }
    Ok(net)
}

/// Two noise images with small, medium and large boxes so that both taps
/// of [`tiny_network_graph`] receive matches.
pub fn gradcheck_batch<R: Rng>(rng: &mut R, size: usize) -> Vec<TrainSample> {
    let boxes = [
        [(0.5, 0.5, 0.85, 0.8, 0), (0.2, 0.25, 0.2, 0.25, 2)],
        [(0.6, 0.45, 0.5, 0.6, 1), (0.45, 0.5, 0.9, 0.9, 2)],
    ];
    boxes
        .iter()
        .map(|set| TrainSample {
            image: Tensor::from_fn(&[3, size, size], |_| rng.gen_range(0.0..1.0)),
            boxes: set
                .iter()
                .map(|&(cx, cy, w, h, class)| LabeledBox {
                    bbox: BBox::new(cx, cy, w, h).expect("valid box"),
                    class,
                })
                .collect(),
        })
        .collect()
}
