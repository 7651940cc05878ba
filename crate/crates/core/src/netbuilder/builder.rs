//! Layouts: the VGG-16 backbone, deep units (plain and inception) and the
//! assembled SSD-300 / MDCN-I1 / MDCN-I2 models.

use super::{count_parameters, LayerKind, LayerSpec, NetworkGraph, Variant};
use crate::error::{Error, Result};

/// Parameter totals reported for the three 300×300 models.
pub const REFERENCE_PARAMS: [(Variant, f64); 3] = [
    (Variant::Ssd300, 2.41e7),
    (Variant::MdcnI1, 2.54e7),
    (Variant::MdcnI2, 2.55e7),
];

/// Appends layers while tracking ids.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    layers: Vec<LayerSpec>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<LayerSpec> {
        self.layers
    }

    pub fn push(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> String {
        let id = id.into();
        self.layers.push(LayerSpec {
            id: id.clone(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        id
    }

    pub fn input(&mut self, channels: usize) -> String {
        self.push("data", LayerKind::Input { channels }, &[])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        id: &str,
        input: &str,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> String {
        self.push(
            id,
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                dilation,
            },
            &[input],
        )
    }

    /// A convolution followed by its ReLU; returns the ReLU id.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_relu(
        &mut self,
        id: &str,
        input: &str,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> String {
        let c = self.conv(id, input, out_channels, kernel, stride, padding, dilation);
        self.push(format!("{id}_relu"), LayerKind::Relu, &[&c])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneStage {
    /// Output width of each 3×3 convolution in the stage.
    pub convs: Vec<usize>,
    /// Pooling after the stage as `(window, stride, padding, ceil_mode)`.
    pub pool: (usize, usize, usize, bool),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub stages: Vec<BackboneStage>,
    /// Stage whose last ReLU (before pooling) feeds the high-resolution tap.
    pub tap_stage: usize,
    pub fc6: usize,
    pub fc6_dilation: usize,
    pub fc7: usize,
}

impl BackboneConfig {
    /// VGG-16 with fc6/fc7 as a dilated 3×3 and a 1×1 convolution.
    pub fn vgg16() -> Self {
        let stage = |convs: &[usize], pool| BackboneStage {
            convs: convs.to_vec(),
            pool,
        };
        BackboneConfig {
            stages: vec![
                stage(&[64, 64], (2, 2, 0, false)),
                stage(&[128, 128], (2, 2, 0, false)),
                stage(&[256, 256, 256], (2, 2, 0, true)),
                stage(&[512, 512, 512], (2, 2, 0, false)),
                stage(&[512, 512, 512], (3, 1, 1, false)),
            ],
            tap_stage: 3,
            fc6: 1024,
            fc6_dilation: 6,
            fc7: 1024,
        }
    }

    /// The conv id of the high-resolution tap (`conv4_3` for VGG-16).
    pub fn tap_conv_id(&self) -> String {
        format!("conv{}_{}", self.tap_stage + 1, self.stages[self.tap_stage].convs.len())
    }

    /// Emits the backbone; returns `(high-resolution tap source, fc7 output)`.
    fn emit(&self, b: &mut GraphBuilder, input: &str) -> (String, String) {
        let mut x = input.to_string();
        let mut tap = String::new();
        for (si, stage) in self.stages.iter().enumerate() {
            for (ci, &out) in stage.convs.iter().enumerate() {
                x = b.conv_relu(&format!("conv{}_{}", si + 1, ci + 1), &x, out, 3, 1, 1, 1);
            }
            if si == self.tap_stage {
                tap = x.clone();
            }
            let (window, stride, padding, ceil_mode) = stage.pool;
            x = b.push(
                format!("pool{}", si + 1),
                LayerKind::Pool {
                    window,
                    stride,
                    padding,
                    ceil_mode,
                },
                &[&x],
            );
        }
        let d = self.fc6_dilation;
        x = b.conv_relu("fc6", &x, self.fc6, 3, 1, d, d);
        x = b.conv_relu("fc7", &x, self.fc7, 1, 1, 0, 1);
        (tap, x)
    }
}

/// One inception unit: a 1×1 bottleneck, a 3×3 entrance convolution that
/// sets the output resolution, then three parallel branches (1×1, 3×3, and
/// a second 3×3 stacked on the first) whose outputs are concatenated as
/// `[1×1, 3×3, 3×3, stacked]`. The 3×3 branch is a single layer listed twice.
#[derive(Clone, Debug, PartialEq)]
pub struct InceptionUnitSpec {
    pub prefix: String,
    pub in_channels: usize,
    pub bottleneck_channels: usize,
    pub branch_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl InceptionUnitSpec {
    pub fn out_channels(&self) -> usize {
        4 * self.branch_channels
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.bottleneck_channels == 0 || self.branch_channels == 0 {
            return Err(Error::Graph(format!(
                "inception unit `{}` has a zero width",
                self.prefix
            )));
        }
        if self.stride == 0 {
            return Err(Error::Graph(format!("inception unit `{}` has stride 0", self.prefix)));
        }
        Ok(())
    }
}

/// Builds the inception unit reading from `input`; returns its layers and
/// the id of the concatenated output.
pub fn build_inception_unit(spec: &InceptionUnitSpec, input: &str) -> Result<(Vec<LayerSpec>, String)> {
    spec.validate()?;
    let mut b = GraphBuilder::new();
    let out = emit_inception(&mut b, spec, input);
    let layers = b.into_layers();
    let concat = layers.last().expect("concat");
    if concat.inputs.len() != 4 {
        return Err(Error::Graph("inception concat must have four blocks".into()));
    }
    Ok((layers, out))
}

fn emit_inception(b: &mut GraphBuilder, spec: &InceptionUnitSpec, input: &str) -> String {
    let p = &spec.prefix;
    let (bn, c) = (spec.bottleneck_channels, spec.branch_channels);
    let x = b.conv_relu(&format!("{p}_1"), input, bn, 1, 1, 0, 1);
    let x = b.conv_relu(&format!("{p}_2"), &x, bn, 3, spec.stride, spec.padding, 1);
    let identity = b.conv_relu(&format!("{p}_b1"), &x, c, 1, 1, 0, 1);
    let shared = b.conv_relu(&format!("{p}_b3"), &x, c, 3, 1, 1, 1);
    let stacked = b.conv_relu(&format!("{p}_b5"), &shared, c, 3, 1, 1, 1);
    b.push(
        format!("{p}_cat"),
        LayerKind::Concat,
        &[&identity, &shared, &shared, &stacked],
    )
}

#[derive(Clone, Debug, PartialEq)]
pub enum DeepUnit {
    /// 1×1 bottleneck then a 3×3 convolution (the SSD extra-layer pattern).
    Plain {
        bottleneck: usize,
        out: usize,
        stride: usize,
        padding: usize,
    },
    Inception {
        bottleneck: usize,
        branch: usize,
        stride: usize,
        padding: usize,
    },
}

impl DeepUnit {
    fn emit(&self, b: &mut GraphBuilder, prefix: &str, input: &str, in_channels: usize) -> (String, usize) {
        match *self {
            DeepUnit::Plain {
                bottleneck,
                out,
                stride,
                padding,
            } => {
                let x = b.conv_relu(&format!("{prefix}_1"), input, bottleneck, 1, 1, 0, 1);
                (b.conv_relu(&format!("{prefix}_2"), &x, out, 3, stride, padding, 1), out)
            }
            DeepUnit::Inception {
                bottleneck,
                branch,
                stride,
                padding,
            } => {
                let spec = InceptionUnitSpec {
                    prefix: prefix.to_string(),
                    in_channels,
                    bottleneck_channels: bottleneck,
                    branch_channels: branch,
                    stride,
                    padding,
                };
                (emit_inception(b, &spec, input), spec.out_channels())
            }
        }
    }

    pub fn is_inception(&self) -> bool {
        matches!(self, DeepUnit::Inception { .. })
    }
}

/// Everything needed to assemble a detection network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub variant: Variant,
    pub input_size: usize,
    pub input_channels: usize,
    /// Object classes, not counting background.
    pub num_classes: usize,
    pub backbone: BackboneConfig,
    /// Units after fc7, named `conv6`, `conv7`, ...
    pub deep_units: Vec<DeepUnit>,
    /// Default boxes per cell for each tap (high-resolution tap, fc7, then
    /// one per deep unit).
    pub boxes_per_tap: Vec<usize>,
    pub l2norm_scale: f64,
}

/// Calibrated `(bottleneck, branch)` widths for the inception units at
/// Conv_6, Conv_7 and Conv_8; see [`calibrate_widths`].
const CANONICAL_INCEPTION: [(usize, usize); 3] = [(256, 256), (128, 128), (128, 128)];

impl ModelConfig {
    /// The 300×300 models with three object classes.
    pub fn canonical(variant: Variant) -> Self {
        Self::canonical_with(variant, CANONICAL_INCEPTION)
    }

    pub fn canonical_with(variant: Variant, inception: [(usize, usize); 3]) -> Self {
        // plain SSD extra layers, by unit: (bottleneck, out, stride, padding)
        let plain = [(256, 512, 2, 1), (128, 256, 2, 1), (128, 256, 1, 0), (128, 256, 1, 0)];
        let deep_units = plain
            .iter()
            .enumerate()
            .map(|(u, &(bottleneck, out, stride, padding))| {
                if u < variant.inception_units() {
                    let (bottleneck, branch) = inception[u];
                    DeepUnit::Inception {
                        bottleneck,
                        branch,
                        stride: 2,
                        padding: 1,
                    }
                } else {
                    DeepUnit::Plain {
                        bottleneck,
                        out,
                        stride,
                        padding,
                    }
                }
            })
            .collect();
        ModelConfig {
            name: variant.name().to_string(),
            variant,
            input_size: 300,
            input_channels: 3,
            num_classes: 3,
            backbone: BackboneConfig::vgg16(),
            deep_units,
            boxes_per_tap: vec![4, 6, 6, 6, 6, 4],
            l2norm_scale: 20.0,
        }
    }

    /// A narrow, shallower variant for desk-scale training at `input_size`
    /// (150 by default). Taps come out at 19, 9, 5, 3 and 1 for 150×150 input.
    pub fn toy(variant: Variant, input_size: usize) -> Self {
        let stage = |convs: &[usize], pool| BackboneStage {
            convs: convs.to_vec(),
            pool,
        };
        let backbone = BackboneConfig {
            stages: vec![
                stage(&[12], (2, 2, 0, false)),
                stage(&[24], (2, 2, 0, false)),
                stage(&[32, 32], (2, 2, 0, true)),
                stage(&[48, 48], (2, 2, 0, false)),
                stage(&[64], (3, 1, 1, false)),
            ],
            tap_stage: 3,
            fc6: 64,
            fc6_dilation: 1,
            fc7: 64,
        };
        let plain = [(32, 64, 2, 1), (32, 64, 2, 1), (32, 64, 1, 0)];
        let deep_units = plain
            .iter()
            .enumerate()
            .map(|(u, &(bottleneck, out, stride, padding))| {
                if u < variant.inception_units() {
                    DeepUnit::Inception {
                        bottleneck,
                        branch: out / 4,
                        stride,
                        padding,
                    }
                } else {
                    DeepUnit::Plain {
                        bottleneck,
                        out,
                        stride,
                        padding,
                    }
                }
            })
            .collect();
        ModelConfig {
            name: format!("{}-toy", variant.name()),
            variant,
            input_size,
            input_channels: 3,
            num_classes: 3,
            backbone,
            deep_units,
            boxes_per_tap: vec![4, 6, 6, 6, 4],
            l2norm_scale: 20.0,
        }
    }
}

/// The bare backbone (no taps or heads) for an `input_size × input_size` RGB input.
pub fn build_backbone(input_size: usize) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new();
    let data = b.input(3);
    BackboneConfig::vgg16().emit(&mut b, &data);
    NetworkGraph::new("vgg16", None, input_size, 0, b.into_layers(), Vec::new())
        .map_err(|e| Error::Graph(format!("input {input_size} too small for the backbone: {e}")))
}

pub fn assemble_model(variant: Variant) -> Result<NetworkGraph> {
    assemble(&ModelConfig::canonical(variant))
}

pub fn assemble(cfg: &ModelConfig) -> Result<NetworkGraph> {
    let taps_expected = 2 + cfg.deep_units.len();
    if cfg.boxes_per_tap.len() != taps_expected {
        return Err(Error::Graph(format!(
            "{} taps need {} box counts, got {}",
            taps_expected,
            taps_expected,
            cfg.boxes_per_tap.len()
        )));
    }
    let mut b = GraphBuilder::new();
    let data = b.input(cfg.input_channels);
    let (hi_res, fc7) = cfg.backbone.emit(&mut b, &data);
    let mut sources = Vec::with_capacity(taps_expected);
    let norm = b.push(
        format!("{}_norm", cfg.backbone.tap_conv_id()),
        LayerKind::L2Norm {
            init_scale: cfg.l2norm_scale,
        },
        &[&hi_res],
    );
    sources.push((cfg.backbone.tap_conv_id(), norm));
    sources.push(("fc7".to_string(), fc7.clone()));
    let mut x = fc7;
    let mut channels = cfg.backbone.fc7;
    for (u, unit) in cfg.deep_units.iter().enumerate() {
        let prefix = format!("conv{}", 6 + u);
        let (out, c) = unit.emit(&mut b, &prefix, &x, channels);
        sources.push((prefix, out.clone()));
        x = out;
        channels = c;
    }
    let heads = cfg.num_classes + 1;
    let mut taps = Vec::with_capacity(sources.len());
    for ((name, src), &k) in sources.iter().zip(&cfg.boxes_per_tap) {
        let tap = b.push(
            format!("{name}_tap"),
            LayerKind::PredictTap { boxes_per_cell: k },
            &[src],
        );
        let (loc, conf) = NetworkGraph::head_ids(&tap);
        b.conv(&loc, &tap, 4 * k, 3, 1, 1, 1);
        b.conv(&conf, &tap, heads * k, 3, 1, 1, 1);
        taps.push(tap);
    }
    NetworkGraph::new(
        cfg.name.clone(),
        Some(cfg.variant),
        cfg.input_size,
        cfg.num_classes,
        b.into_layers(),
        taps,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub widths: [(usize, usize); 3],
    /// `(variant, total parameters, relative error vs. the reported total)`.
    pub totals: Vec<(Variant, usize, f64)>,
    pub max_rel_error: f64,
}

/// Grid search over inception `(bottleneck, branch)` widths drawn from
/// `grid` for Conv_6..Conv_8, minimizing the worst relative error against
/// [`REFERENCE_PARAMS`] subject to SSD < I1 < I2. Ties keep the first
/// candidate in grid order.
pub fn calibrate_widths(grid: &[usize]) -> Result<Calibration> {
    let mut best: Option<Calibration> = None;
    let n = grid.len();
    for code in 0..n.pow(6) {
        let pick = |slot: u32| grid[(code / n.pow(5 - slot)) % n];
        let widths = [(pick(0), pick(1)), (pick(2), pick(3)), (pick(4), pick(5))];
        let mut totals = Vec::with_capacity(3);
        for (v, reported) in REFERENCE_PARAMS {
            let g = assemble(&ModelConfig::canonical_with(v, widths))?;
            let total = count_parameters(&g).total;
            totals.push((v, total, (total as f64 / reported - 1.0).abs()));
        }
        if !(totals[0].1 < totals[1].1 && totals[1].1 < totals[2].1) {
            continue;
        }
        let err = totals.iter().map(|t| t.2).fold(0.0, f64::max);
        if best.as_ref().is_none_or(|b| err < b.max_rel_error) {
            best = Some(Calibration {
                widths,
                totals,
                max_rel_error: err,
            });
        }
    }
    best.ok_or_else(|| Error::Graph("no width assignment satisfies the ordering".into()))
}
