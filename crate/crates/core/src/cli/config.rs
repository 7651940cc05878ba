//! Line-based `key = value` run configuration. `#` starts a comment.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::multibox::{AnchorConfig, DetectConfig, LossConfig, Variances};
use crate::netbuilder::{ModelConfig, Variant};
use crate::trainer::{Objective, Schedule, TrainConfig};

/// Which layout family to build for a variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelScale {
    /// The 300×300 models.
    Full,
    /// The narrow desk-scale models.
    Toy,
}

pub const FULL_INPUT_SIZE: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub variant: Variant,
    pub model: ModelScale,
    /// Toy models only; full models are fixed at 300.
    pub input_size: usize,
    pub seed: u64,

    pub anchor_min_scale: f64,
    pub anchor_max_scale: f64,
    pub match_threshold: f64,
    pub alpha: f64,
    pub neg_pos_ratio: f64,
    pub variance_center: f64,
    pub variance_size: f64,

    pub base_lr: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub flip: bool,
    pub checkpoint_every: usize,

    pub train_images: usize,
    pub val_images: usize,

    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub top_k: usize,
    pub eval_iou: f64,

    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            variant: Variant::MdcnI2,
            model: ModelScale::Toy,
            input_size: 150,
            seed: 0,
            anchor_min_scale: 0.2,
            anchor_max_scale: 0.9,
            match_threshold: 0.5,
            alpha: 1.0,
            neg_pos_ratio: 3.0,
            variance_center: 0.1,
            variance_size: 0.2,
            base_lr: 4e-4,
            iterations: 1200,
            warmup: 200,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 0.0005,
            flip: true,
            checkpoint_every: 0,
            train_images: 500,
            val_images: 100,
            conf_threshold: 0.01,
            nms_threshold: 0.45,
            top_k: 200,
            eval_iou: 0.5,
            out_dir: PathBuf::from("mdcn-run"),
        }
    }
}

/// Every accepted key, in dump order.
pub const KEYS: &[&str] = &[
    "variant",
    "model",
    "input_size",
    "seed",
    "anchor_min_scale",
    "anchor_max_scale",
    "match_threshold",
    "alpha",
    "neg_pos_ratio",
    "variance_center",
    "variance_size",
    "base_lr",
    "iterations",
    "warmup",
    "batch_size",
    "momentum",
    "weight_decay",
    "flip",
    "checkpoint_every",
    "train_images",
    "val_images",
    "conf_threshold",
    "nms_threshold",
    "top_k",
    "eval_iou",
    "out_dir",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn unit_open(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must lie in (0, 1), got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be ≥ 0, got {v}")))
    }
}

impl Config {
    /// Sets one key, validating the value on its own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "variant" => self.variant = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "model" => {
                self.model = match v {
                    "full" => ModelScale::Full,
                    "toy" => ModelScale::Toy,
                    _ => return Err(Error::Config(format!("`model` must be full or toy, got `{v}`"))),
                }
            }
            "input_size" => self.input_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "anchor_min_scale" => self.anchor_min_scale = unit_open(key, parse_num(key, v)?)?,
            "anchor_max_scale" => self.anchor_max_scale = positive(key, parse_num(key, v)?)?,
            "match_threshold" => self.match_threshold = unit_open(key, parse_num(key, v)?)?,
            "alpha" => self.alpha = non_negative(key, parse_num(key, v)?)?,
            "neg_pos_ratio" => self.neg_pos_ratio = non_negative(key, parse_num(key, v)?)?,
            "variance_center" => self.variance_center = positive(key, parse_num(key, v)?)?,
            "variance_size" => self.variance_size = positive(key, parse_num(key, v)?)?,
            "base_lr" => self.base_lr = non_negative(key, parse_num(key, v)?)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "warmup" => self.warmup = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "momentum" => {
                let m = non_negative(key, parse_num(key, v)?)?;
                if m >= 1.0 {
                    return Err(Error::Config(format!("`momentum` must be < 1, got {m}")));
                }
                self.momentum = m;
            }
            "weight_decay" => self.weight_decay = non_negative(key, parse_num(key, v)?)?,
            "flip" => self.flip = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "train_images" => self.train_images = parse_num(key, v)?,
            "val_images" => self.val_images = parse_num(key, v)?,
            "conf_threshold" => self.conf_threshold = unit_open(key, parse_num(key, v)?)?,
            "nms_threshold" => self.nms_threshold = unit_open(key, parse_num(key, v)?)?,
            "top_k" => self.top_k = parse_num(key, v)?,
            "eval_iou" => self.eval_iou = unit_open(key, parse_num(key, v)?)?,
            "out_dir" => {
                if v.is_empty() {
                    return Err(Error::Config("`out_dir` is empty".into()));
                }
                self.out_dir = PathBuf::from(v)
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks constraints spanning several keys.
    pub fn validate(&self) -> Result<()> {
        if self.anchor_max_scale <= self.anchor_min_scale {
            return Err(Error::Config(
                "`anchor_max_scale` must exceed `anchor_min_scale`".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("`batch_size` must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("`top_k` must be positive".into()));
        }
        if self.model == ModelScale::Toy && self.input_size < crate::trainer::MIN_SCENE_SIZE {
            return Err(Error::Config(format!(
                "`input_size` must be at least {}",
                crate::trainer::MIN_SCENE_SIZE
            )));
        }
        if self.iterations > 0 {
            self.schedule()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: ln + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.set(k.trim(), v).map_err(|e| Error::Parse {
                line: ln + 1,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "variant" => self.variant.name().to_string(),
            "model" => match self.model {
                ModelScale::Full => "full".into(),
                ModelScale::Toy => "toy".into(),
            },
            "input_size" => self.input_size.to_string(),
            "seed" => self.seed.to_string(),
            "anchor_min_scale" => self.anchor_min_scale.to_string(),
            "anchor_max_scale" => self.anchor_max_scale.to_string(),
            "match_threshold" => self.match_threshold.to_string(),
            "alpha" => self.alpha.to_string(),
            "neg_pos_ratio" => self.neg_pos_ratio.to_string(),
            "variance_center" => self.variance_center.to_string(),
            "variance_size" => self.variance_size.to_string(),
            "base_lr" => self.base_lr.to_string(),
            "iterations" => self.iterations.to_string(),
            "warmup" => self.warmup.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "flip" => self.flip.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "train_images" => self.train_images.to_string(),
            "val_images" => self.val_images.to_string(),
            "conf_threshold" => self.conf_threshold.to_string(),
            "nms_threshold" => self.nms_threshold.to_string(),
            "top_k" => self.top_k.to_string(),
            "eval_iou" => self.eval_iou.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// The network's square input side.
    pub fn image_size(&self) -> usize {
        match self.model {
            ModelScale::Full => FULL_INPUT_SIZE,
            ModelScale::Toy => self.input_size,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        match self.model {
            ModelScale::Full => ModelConfig::canonical(self.variant),
            ModelScale::Toy => ModelConfig::toy(self.variant, self.input_size),
        }
    }

    pub fn anchor_config(&self) -> AnchorConfig {
        AnchorConfig {
            min_scale: self.anchor_min_scale,
            max_scale: self.anchor_max_scale,
        }
    }

    pub fn variances(&self) -> Variances {
        Variances {
            center: self.variance_center,
            size: self.variance_size,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            loss: LossConfig {
                alpha: self.alpha,
                neg_pos_ratio: self.neg_pos_ratio,
                variances: self.variances(),
            },
            match_threshold: self.match_threshold,
        }
    }

    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            conf_threshold: self.conf_threshold,
            nms_threshold: self.nms_threshold,
            top_k: self.top_k,
            variances: self.variances(),
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::scaled(self.base_lr, self.iterations)?
            .with_warmup(self.warmup.min(self.iterations.saturating_sub(1)))
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.schedule()?, seed);
        t.batch_size = self.batch_size;
        t.objective = self.objective();
        t.flip = self.flip;
        t.checkpoint_every = (self.checkpoint_every > 0).then_some(self.checkpoint_every);
        Ok(t)
    }
}
