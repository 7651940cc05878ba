//! Static analysis: parameter counts, receptive fields and layer summaries.

use std::fmt::Write as _;

use super::{FeatureShape, LayerKind, NetworkGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    /// `(layer id, parameters)` for every layer that owns parameters.
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

/// Parameters owned by layer `i`: `k·k·in·out + out` for convolutions, one
/// scale per channel for L2 normalization, zero otherwise.
fn layer_params(g: &NetworkGraph, i: usize) -> usize {
    match g.layers()[i].kind {
        LayerKind::Conv {
            out_channels, kernel, ..
        } => kernel * kernel * g.in_channels(i) * out_channels + out_channels,
        LayerKind::L2Norm { .. } => g.in_channels(i),
        _ => 0,
    }
}

pub fn count_parameters(g: &NetworkGraph) -> ParamReport {
    let per_layer: Vec<(String, usize)> = (0..g.layers().len())
        .filter_map(|i| {
            let n = layer_params(g, i);
            (n > 0).then(|| (g.layers()[i].id.clone(), n))
        })
        .collect();
    let total = per_layer.iter().map(|(_, n)| n).sum();
    ParamReport { per_layer, total }
}

/// Parameters of two stacked 3×3 convolutions over a direct 5×5, all at
/// width `c`: `(2·9c² + 2c) / (25c² + c)`.
pub fn stacked_vs_direct_ratio(c: usize) -> f64 {
    let c = c as f64;
    (2.0 * (9.0 * c * c + c)) / (25.0 * c * c + c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfEntry {
    pub id: String,
    /// Receptive-field side length in input pixels.
    pub size: usize,
    /// Distance in input pixels between adjacent outputs.
    pub stride: usize,
    /// `size / input_size`, clamped to 1.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfReport {
    pub input_size: usize,
    pub entries: Vec<RfEntry>,
}

impl RfReport {
    pub fn get(&self, id: &str) -> Option<&RfEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Receptive fields by the recurrence `rf' = rf + (k−1)·dilation·stride_in`,
/// `stride' = stride_in · stride`. A concat takes the widest branch.
pub fn receptive_field(g: &NetworkGraph) -> Result<RfReport> {
    let input = g.input_size() as f64;
    let mut acc: Vec<(usize, usize)> = Vec::with_capacity(g.layers().len());
    for (i, l) in g.layers().iter().enumerate() {
        let ins: Vec<(usize, usize)> = g.input_indices(i).iter().map(|&j| acc[j]).collect();
        let next = match &l.kind {
            LayerKind::Input { .. } => (1, 1),
            LayerKind::Conv {
                kernel,
                stride,
                dilation,
                ..
            } => {
                let (rf, jump) = ins[0];
                (rf + (kernel - 1) * dilation * jump, jump * stride)
            }
            LayerKind::Pool { window, stride, .. } => {
                let (rf, jump) = ins[0];
                (rf + (window - 1) * jump, jump * stride)
            }
            LayerKind::Concat => (
                ins.iter().map(|a| a.0).max().unwrap_or(1),
                ins.iter().map(|a| a.1).max().unwrap_or(1),
            ),
            LayerKind::Relu | LayerKind::L2Norm { .. } | LayerKind::PredictTap { .. } => {
                if ins.len() != 1 {
                    return Err(Error::Graph(format!("unsupported fan-in at `{}`", l.id)));
                }
                ins[0]
            }
        };
        acc.push(next);
    }
    let entries = g
        .layers()
        .iter()
        .zip(acc)
        .map(|(l, (size, stride))| RfEntry {
            id: l.id.clone(),
            size,
            stride,
            coverage: (size as f64 / input).min(1.0),
        })
        .collect();
    Ok(RfReport {
        input_size: g.input_size(),
        entries,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub id: String,
    pub kind: String,
    pub shape: FeatureShape,
    pub params: usize,
    pub rf: usize,
    pub stride: usize,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTap {
    pub index: usize,
    pub id: String,
    pub size: usize,
    pub channels: usize,
    pub boxes: usize,
}

/// Per-layer shapes, parameters and receptive fields of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub name: String,
    pub input_size: usize,
    pub rows: Vec<SummaryRow>,
    pub taps: Vec<SummaryTap>,
    pub total_params: usize,
}

pub fn summarize(g: &NetworkGraph, input_size: usize) -> Result<Summary> {
    let g = if input_size == g.input_size() {
        g.clone()
    } else {
        NetworkGraph::new(
            g.name(),
            g.variant(),
            input_size,
            g.num_classes(),
            g.layers().to_vec(),
            g.source_taps().to_vec(),
        )?
    };
    let rf = receptive_field(&g)?;
    let rows: Vec<SummaryRow> = g
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| SummaryRow {
            id: l.id.clone(),
            kind: l.kind.name().to_string(),
            shape: g.shapes()[i],
            params: layer_params(&g, i),
            rf: rf.entries[i].size,
            stride: rf.entries[i].stride,
            coverage: rf.entries[i].coverage,
        })
        .collect();
    let taps = g
        .source_taps()
        .iter()
        .enumerate()
        .map(|(index, t)| {
            let i = g.layer_index(t).expect("validated");
            let boxes = match g.layers()[i].kind {
                LayerKind::PredictTap { boxes_per_cell } => boxes_per_cell,
                _ => 0,
            };
            SummaryTap {
                index,
                id: t.clone(),
                size: g.shapes()[i].height,
                channels: g.shapes()[i].channels,
                boxes,
            }
        })
        .collect();
    Ok(Summary {
        name: g.name().to_string(),
        input_size,
        total_params: rows.iter().map(|r| r.params).sum(),
        rows,
        taps,
    })
}

impl Summary {
    pub fn to_text(&self) -> String {
        let idw = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(2).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "model {} @ {}x{}", self.name, self.input_size, self.input_size);
        let _ = writeln!(
            s,
            "{:<idw$}  {:<11}  {:>16}  {:>10}  {:>5}  {:>6}  {:>8}",
            "layer", "kind", "output", "params", "rf", "stride", "coverage"
        );
        for r in &self.rows {
            let shape = format!("{}x{}x{}", r.shape.channels, r.shape.height, r.shape.width);
            let _ = writeln!(
                s,
                "{:<idw$}  {:<11}  {:>16}  {:>10}  {:>5}  {:>6}  {:>8.4}",
                r.id, r.kind, shape, r.params, r.rf, r.stride, r.coverage
            );
        }
        for t in &self.taps {
            let _ = writeln!(
                s,
                "tap {}: {} {}x{} channels={} boxes={}",
                t.index, t.id, t.size, t.size, t.channels, t.boxes
            );
        }
        let _ = writeln!(s, "total params: {}", self.total_params);
        s
    }

    /// One `key=value` record per line: `model`, `layer`, `tap` and `total`.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model name={} input={}", self.name, self.input_size);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "layer id={} kind={} c={} h={} w={} params={} rf={} stride={} coverage={}",
                r.id, r.kind, r.shape.channels, r.shape.height, r.shape.width, r.params, r.rf, r.stride, r.coverage
            );
        }
        for t in &self.taps {
            let _ = writeln!(
                s,
                "tap index={} id={} size={} channels={} boxes={}",
                t.index, t.id, t.size, t.channels, t.boxes
            );
        }
        let _ = writeln!(s, "total params={}", self.total_params);
        s
    }

    pub fn from_records(text: &str) -> Result<Summary> {
        let mut name = None;
        let mut input_size = None;
        let mut rows = Vec::new();
        let mut taps = Vec::new();
        let mut total = None;
        for (ln, line) in text.lines().enumerate() {
            let line_no = ln + 1;
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            let mut toks = line.split_whitespace();
            let Some(tag) = toks.next() else { continue };
            let kv: Vec<(&str, &str)> = toks
                .map(|t| {
                    t.split_once('=')
                        .ok_or_else(|| perr(format!("expected key=value, got `{t}`")))
                })
                .collect::<Result<_>>()?;
            let get = |k: &str| -> Result<&str> {
                kv.iter()
                    .find(|(key, _)| *key == k)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| perr(format!("missing `{k}`")))
            };
            let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| perr(format!("`{k}`: {e}"))) };
            match tag {
                "model" => {
                    name = Some(get("name")?.to_string());
                    input_size = Some(num("input")?);
                }
                "layer" => rows.push(SummaryRow {
                    id: get("id")?.to_string(),
                    kind: get("kind")?.to_string(),
                    shape: FeatureShape {
                        channels: num("c")?,
                        height: num("h")?,
                        width: num("w")?,
                    },
                    params: num("params")?,
                    rf: num("rf")?,
                    stride: num("stride")?,
                    coverage: get("coverage")?.parse().map_err(|e| perr(format!("`coverage`: {e}")))?,
                }),
                "tap" => taps.push(SummaryTap {
                    index: num("index")?,
                    id: get("id")?.to_string(),
                    size: num("size")?,
                    channels: num("channels")?,
                    boxes: num("boxes")?,
                }),
                "total" => total = Some(num("params")?),
                other => return Err(perr(format!("unknown record `{other}`"))),
            }
        }
        let missing = |w: &str| Error::Parse {
            line: 0,
            msg: format!("no `{w}` record"),
        };
        Ok(Summary {
            name: name.ok_or_else(|| missing("model"))?,
            input_size: input_size.ok_or_else(|| missing("model"))?,
            rows,
            taps,
            total_params: total.ok_or_else(|| missing("total"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netbuilder::{GraphBuilder, LayerKind};

    fn chain(build: impl FnOnce(&mut GraphBuilder, &str), size: usize) -> NetworkGraph {
        let mut b = GraphBuilder::new();
        let d = b.input(3);
        build(&mut b, &d);
        NetworkGraph::new("t", None, size, 0, b.into_layers(), vec![]).unwrap()
    }

    #[test]
    fn single_conv_params() {
        let g = chain(
            |b, d| {
                b.conv("c", d, 64, 3, 1, 1, 1);
            },
            8,
        );
        assert_eq!(count_parameters(&g).total, 1_792);
    }

    #[test]
    fn stacked_three_by_three_is_five() {
        let g = chain(
            |b, d| {
                let x = b.conv("a", d, 4, 3, 1, 1, 1);
                b.conv("b", &x, 4, 3, 1, 1, 1);
            },
            16,
        );
        let rf = receptive_field(&g).unwrap();
        assert_eq!(rf.get("b").unwrap().size, 5);
        assert_eq!(rf.get("b").unwrap().stride, 1);
    }

    #[test]
    fn conv_then_pool_recurrence() {
        // 3×3 conv (rf 3) followed by a 2/2 pool: 3 + (2−1)·1 = 4, stride 2
        let g = chain(
            |b, d| {
                let x = b.conv("c", d, 4, 3, 1, 1, 1);
                b.push(
                    "p",
                    LayerKind::Pool {
                        window: 2,
                        stride: 2,
                        padding: 0,
                        ceil_mode: false,
                    },
                    &[&x],
                );
            },
            16,
        );
        let e = receptive_field(&g).unwrap().get("p").unwrap().clone();
        assert_eq!((e.size, e.stride), (4, 2));
        // pool first: rf 2, stride 2; then 3×3: 2 + 2·2 = 6
        let g = chain(
            |b, d| {
                let x = b.push(
                    "p",
                    LayerKind::Pool {
                        window: 2,
                        stride: 2,
                        padding: 0,
                        ceil_mode: false,
                    },
                    &[d],
                );
                b.conv("c", &x, 4, 3, 1, 1, 1);
            },
            16,
        );
        let e = receptive_field(&g).unwrap().get("c").unwrap().clone();
        assert_eq!((e.size, e.stride), (6, 2));
    }

    #[test]
    fn ratio_approaches_eighteen_over_twenty_five() {
        assert!((stacked_vs_direct_ratio(512) - 18.0 / 25.0).abs() < 1e-3);
        assert!(stacked_vs_direct_ratio(8) > stacked_vs_direct_ratio(512));
    }
}
