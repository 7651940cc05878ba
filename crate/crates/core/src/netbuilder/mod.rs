//! Declarative network graphs: layer specs, validation, shape inference and
//! the line-oriented graph text format.
//!
//! A graph line looks like
//!
//! ```text
//! conv6_b3 conv out=256 k=3 s=1 p=1 d=1 in=conv6_2_relu
//! ```
//!
//! preceded by header lines (`name`, `variant`, `input_size`, `classes`,
//! `taps`).

mod analysis;
mod builder;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

pub use analysis::{
    count_parameters, receptive_field, stacked_vs_direct_ratio, summarize, ParamReport, RfEntry, RfReport, Summary,
    SummaryRow, SummaryTap,
};
pub use builder::{
    assemble, assemble_model, build_backbone, build_inception_unit, calibrate_widths, BackboneConfig, BackboneStage,
    Calibration, DeepUnit, GraphBuilder, InceptionUnitSpec, ModelConfig, REFERENCE_PARAMS,
};

use crate::error::{Error, Result};
use crate::kernels::{ConvGeometry, PoolGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Ssd300,
    MdcnI1,
    MdcnI2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Ssd300, Variant::MdcnI1, Variant::MdcnI2];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Ssd300 => "ssd-300",
            Variant::MdcnI1 => "mdcn-i1",
            Variant::MdcnI2 => "mdcn-i2",
        }
    }

    /// Number of deep units (starting at Conv_6) that carry an inception module.
    pub fn inception_units(&self) -> usize {
        match self {
            Variant::Ssd300 => 0,
            Variant::MdcnI1 => 2,
            Variant::MdcnI2 => 3,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssd-300" | "ssd300" | "ssd" => Ok(Variant::Ssd300),
            "mdcn-i1" | "mdcn_i1" | "i1" => Ok(Variant::MdcnI1),
            "mdcn-i2" | "mdcn_i2" | "i2" => Ok(Variant::MdcnI2),
            _ => Err(Error::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input {
        channels: usize,
    },
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    Pool {
        window: usize,
        stride: usize,
        padding: usize,
        ceil_mode: bool,
    },
    Relu,
    /// Channel-wise L2 normalization with a learned per-channel scale.
    L2Norm {
        init_scale: f64,
    },
    Concat,
    /// Marks a feature map wired into the multibox head.
    PredictTap {
        boxes_per_cell: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Pool { .. } => "pool",
            LayerKind::Relu => "relu",
            LayerKind::L2Norm { .. } => "l2norm",
            LayerKind::Concat => "concat",
            LayerKind::PredictTap { .. } => "predict-tap",
        }
    }

    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerKind::Conv {
                stride,
                padding,
                dilation,
                ..
            } => Some(ConvGeometry::new(stride, padding, dilation)),
            _ => None,
        }
    }

    pub fn pool_geometry(&self) -> Option<PoolGeometry> {
        match *self {
            LayerKind::Pool {
                window,
                stride,
                padding,
                ceil_mode,
            } => Some(PoolGeometry {
                window,
                stride,
                padding,
                ceil_mode,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

/// Output shape of one layer for a single image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn elements(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// A validated, topologically ordered layer graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    name: String,
    variant: Option<Variant>,
    input_size: usize,
    num_classes: usize,
    layers: Vec<LayerSpec>,
    source_taps: Vec<String>,
    index: HashMap<String, usize>,
    input_indices: Vec<Vec<usize>>,
    shapes: Vec<FeatureShape>,
}

impl NetworkGraph {
    /// Validates ids, ordering, arity, taps and shapes at `input_size`.
    pub fn new(
        name: impl Into<String>,
        variant: Option<Variant>,
        input_size: usize,
        num_classes: usize,
        layers: Vec<LayerSpec>,
        source_taps: Vec<String>,
    ) -> Result<Self> {
        let mut index = HashMap::new();
        let mut input_indices = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            if l.id.is_empty() || l.id.contains(char::is_whitespace) || l.id.contains(',') {
                return Err(Error::Graph(format!("invalid layer id `{}`", l.id)));
            }
            if index.insert(l.id.clone(), i).is_some() {
                return Err(Error::Graph(format!("duplicate layer id `{}`", l.id)));
            }
            let mut ins = Vec::with_capacity(l.inputs.len());
            for name in &l.inputs {
                match index.get(name) {
                    Some(&j) if j < i => ins.push(j),
                    _ => {
                        return Err(Error::Graph(format!(
                            "layer `{}` reads `{name}`, which is not defined before it",
                            l.id
                        )))
                    }
                }
            }
            let arity_ok = match l.kind {
                LayerKind::Input { .. } => ins.is_empty() && i == 0,
                LayerKind::Concat => !ins.is_empty(),
                _ => ins.len() == 1,
            };
            if !arity_ok {
                return Err(Error::Graph(format!(
                    "layer `{}` ({}) has {} inputs",
                    l.id,
                    l.kind.name(),
                    ins.len()
                )));
            }
            input_indices.push(ins);
        }
        if !matches!(layers.first().map(|l| &l.kind), Some(LayerKind::Input { .. })) {
            return Err(Error::Graph("the first layer must be the input".into()));
        }
        for t in &source_taps {
            match index.get(t).map(|&i| &layers[i].kind) {
                Some(LayerKind::PredictTap { .. }) => {}
                Some(_) => return Err(Error::Graph(format!("tap `{t}` is not a predict-tap layer"))),
                None => return Err(Error::Graph(format!("tap `{t}` does not exist"))),
            }
        }
        let mut g = NetworkGraph {
            name: name.into(),
            variant,
            input_size,
            num_classes,
            layers,
            source_taps,
            index,
            input_indices,
            shapes: Vec::new(),
        };
        g.shapes = g.shapes_at(input_size)?;
        Ok(g)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn variant(&self) -> Option<Variant> {
        self.variant
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn input_channels(&self) -> usize {
        match self.layers[0].kind {
            LayerKind::Input { channels } => channels,
            _ => unreachable!("validated in new"),
        }
    }

    /// Object classes, not counting background.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn source_taps(&self) -> &[String] {
        &self.source_taps
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layer_index(id).map(|i| &self.layers[i])
    }

    pub fn input_indices(&self, layer: usize) -> &[usize] {
        &self.input_indices[layer]
    }

    /// Per-layer output shapes at the graph's own input size.
    pub fn shapes(&self) -> &[FeatureShape] {
        &self.shapes
    }

    pub fn shape_of(&self, id: &str) -> Option<FeatureShape> {
        self.layer_index(id).map(|i| self.shapes[i])
    }

    /// Per-layer output shapes for an arbitrary square input.
    pub fn shapes_at(&self, input_size: usize) -> Result<Vec<FeatureShape>> {
        let mut out: Vec<FeatureShape> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let ins: Vec<FeatureShape> = self.input_indices[i].iter().map(|&j| out[j]).collect();
            let shape = match &l.kind {
                LayerKind::Input { channels } => FeatureShape {
                    channels: *channels,
                    height: input_size,
                    width: input_size,
                },
                LayerKind::Conv {
                    out_channels, kernel, ..
                } => {
                    let g = l.kind.conv_geometry().expect("conv");
                    let (h, w) = (
                        g.output_len(ins[0].height, *kernel),
                        g.output_len(ins[0].width, *kernel),
                    );
                    match (h, w) {
                        (Some(height), Some(width)) if *out_channels > 0 => FeatureShape {
                            channels: *out_channels,
                            height,
                            width,
                        },
                        _ => {
                            return Err(Error::Graph(format!(
                                "layer `{}`: {}x{} kernel does not fit a {}x{} input",
                                l.id, kernel, kernel, ins[0].height, ins[0].width
                            )))
                        }
                    }
                }
                LayerKind::Pool { .. } => {
                    let g = l.kind.pool_geometry().expect("pool");
                    match (g.output_len(ins[0].height), g.output_len(ins[0].width)) {
                        (Some(height), Some(width)) => FeatureShape {
                            channels: ins[0].channels,
                            height,
                            width,
                        },
                        _ => {
                            return Err(Error::Graph(format!(
                                "layer `{}`: pool window does not fit a {}x{} input",
                                l.id, ins[0].height, ins[0].width
                            )))
                        }
                    }
                }
                LayerKind::Concat => {
                    let first = ins[0];
                    if ins.iter().any(|s| s.height != first.height || s.width != first.width) {
                        return Err(Error::Graph(format!("concat `{}` inputs differ in spatial size", l.id)));
                    }
                    FeatureShape {
                        channels: ins.iter().map(|s| s.channels).sum(),
                        ..first
                    }
                }
                LayerKind::Relu | LayerKind::L2Norm { .. } | LayerKind::PredictTap { .. } => ins[0],
            };
            out.push(shape);
        }
        Ok(out)
    }

    /// Channels entering layer `i` (for convs and l2norm).
    pub fn in_channels(&self, i: usize) -> usize {
        self.input_indices[i].iter().map(|&j| self.shapes[j].channels).sum()
    }

    /// `(loc, conf)` head conv ids for a tap.
    pub fn head_ids(tap: &str) -> (String, String) {
        (format!("{tap}_loc"), format!("{tap}_conf"))
    }

    /// Per tap: (tap layer index, loc conv index, conf conv index, boxes per cell).
    pub fn heads(&self) -> Result<Vec<(usize, usize, usize, usize)>> {
        self.source_taps
            .iter()
            .map(|t| {
                let ti = self.layer_index(t).expect("validated");
                let k = match self.layers[ti].kind {
                    LayerKind::PredictTap { boxes_per_cell } => boxes_per_cell,
                    _ => unreachable!(),
                };
                let (loc, conf) = Self::head_ids(t);
                let li = self
                    .layer_index(&loc)
                    .ok_or_else(|| Error::Graph(format!("tap `{t}` has no `{loc}` head")))?;
                let ci = self
                    .layer_index(&conf)
                    .ok_or_else(|| Error::Graph(format!("tap `{t}` has no `{conf}` head")))?;
                Ok((ti, li, ci, k))
            })
            .collect()
    }

    /// Spatial sizes of the prediction taps, in tap order.
    pub fn tap_sizes(&self) -> Vec<usize> {
        self.source_taps
            .iter()
            .map(|t| self.shape_of(t).expect("validated").height)
            .collect()
    }

    /// Unit prefixes (e.g. `conv6`) that contain an inception concat.
    pub fn inception_units(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Concat)
            .map(|l| l.id.split('_').next().unwrap_or(&l.id).to_string())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# mdcn graph v1\n");
        s.push_str(&format!("name {}\n", self.name));
        s.push_str(&format!(
            "variant {}\n",
            self.variant.map(|v| v.name()).unwrap_or("none")
        ));
        s.push_str(&format!("input_size {}\n", self.input_size));
        s.push_str(&format!("classes {}\n", self.num_classes));
        s.push_str(&format!("taps {}\n", self.source_taps.join(",")));
        for l in &self.layers {
            s.push_str(&l.id);
            s.push(' ');
            s.push_str(l.kind.name());
            match &l.kind {
                LayerKind::Input { channels } => s.push_str(&format!(" channels={channels}")),
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    dilation,
                } => s.push_str(&format!(
                    " out={out_channels} k={kernel} s={stride} p={padding} d={dilation}"
                )),
                LayerKind::Pool {
                    window,
                    stride,
                    padding,
                    ceil_mode,
                } => s.push_str(&format!(
                    " k={window} s={stride} p={padding} ceil={}",
                    u8::from(*ceil_mode)
                )),
                LayerKind::L2Norm { init_scale } => s.push_str(&format!(" scale={init_scale}")),
                LayerKind::PredictTap { boxes_per_cell } => s.push_str(&format!(" boxes={boxes_per_cell}")),
                LayerKind::Relu | LayerKind::Concat => {}
            }
            if !l.inputs.is_empty() {
                s.push_str(&format!(" in={}", l.inputs.join(",")));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut variant = None;
        let mut input_size = None;
        let mut classes = None;
        let mut taps = Vec::new();
        let mut layers = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            let mut toks = line.split_whitespace();
            let head = toks.next().expect("non-empty");
            let rest: Vec<&str> = toks.collect();
            let single = || -> Result<&str> {
                match rest[..] {
                    [v] => Ok(v),
                    _ => Err(perr(format!("`{head}` takes one value"))),
                }
            };
            match head {
                "name" => name = Some(single()?.to_string()),
                "variant" => {
                    let v = single()?;
                    variant = if v == "none" { None } else { Some(v.parse()?) };
                }
                "input_size" => input_size = Some(single()?.parse::<usize>().map_err(|e| perr(e.to_string()))?),
                "classes" => classes = Some(single()?.parse::<usize>().map_err(|e| perr(e.to_string()))?),
                "taps" => {
                    taps = match rest[..] {
                        [] => Vec::new(),
                        [v] => v.split(',').map(str::to_string).collect(),
                        _ => return Err(perr("taps are comma separated".into())),
                    }
                }
                id => {
                    let (kind_name, kvs) = rest
                        .split_first()
                        .ok_or_else(|| perr(format!("layer `{id}` has no kind")))?;
                    let mut map = HashMap::new();
                    for kv in kvs {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| perr(format!("expected key=value, got `{kv}`")))?;
                        if map.insert(k, v).is_some() {
                            return Err(perr(format!("duplicate key `{k}`")));
                        }
                    }
                    let num = |k: &str| -> Result<usize> {
                        map.get(k)
                            .ok_or_else(|| perr(format!("missing `{k}`")))?
                            .parse::<usize>()
                            .map_err(|e| perr(format!("`{k}`: {e}")))
                    };
                    let kind = match *kind_name {
                        "input" => LayerKind::Input {
                            channels: num("channels")?,
                        },
                        "conv" => LayerKind::Conv {
                            out_channels: num("out")?,
                            kernel: num("k")?,
                            stride: num("s")?,
                            padding: num("p")?,
                            dilation: num("d")?,
                        },
                        "pool" => LayerKind::Pool {
                            window: num("k")?,
                            stride: num("s")?,
                            padding: num("p")?,
                            ceil_mode: num("ceil")? != 0,
                        },
                        "relu" => LayerKind::Relu,
                        "concat" => LayerKind::Concat,
                        "l2norm" => LayerKind::L2Norm {
                            init_scale: map
                                .get("scale")
                                .ok_or_else(|| perr("missing `scale`".into()))?
                                .parse::<f64>()
                                .map_err(|e| perr(format!("`scale`: {e}")))?,
                        },
                        "predict-tap" => LayerKind::PredictTap {
                            boxes_per_cell: num("boxes")?,
                        },
                        other => return Err(perr(format!("unknown layer kind `{other}`"))),
                    };
                    let inputs = map
                        .get("in")
                        .map(|v| v.split(',').map(str::to_string).collect())
                        .unwrap_or_default();
                    layers.push(LayerSpec {
                        id: id.to_string(),
                        kind,
                        inputs,
                    });
                }
            }
        }
        let missing = |what: &str| Error::Graph(format!("graph text has no `{what}` line"));
        NetworkGraph::new(
            name.ok_or_else(|| missing("name"))?,
            variant,
            input_size.ok_or_else(|| missing("input_size"))?,
            classes.ok_or_else(|| missing("classes"))?,
            layers,
            taps,
        )
    }
}
