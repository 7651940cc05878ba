//! The `mdcn` command surface. Each command writes its report to a
//! caller-supplied writer so it can be driven from tests.
//!
//! Settings are resolved lowest to highest: built-in defaults, the
//! `--config` file, `--set key=value` pairs, then dedicated flags such as
//! `--seed` or `--variant`.

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_count_params, cmd_detect, cmd_eval, cmd_gen_anchors, cmd_gradcheck, cmd_rf_report, cmd_summarize,
    cmd_train_toy, derive_seed, EvalSource,
};
pub use config::{Config, ModelScale, KEYS};

use crate::error::{Error, Result};
use crate::netbuilder::Variant;

const PRECEDENCE: &str = "Settings precedence, lowest to highest: built-in defaults, --config file, \
--set key=value, dedicated flags (--seed, --variant, ...). Worker threads: MDCN_THREADS.";

#[derive(Debug, Parser)]
#[command(name = "mdcn", version, about = "Multi-scale deep inception single-shot detector", after_help = PRECEDENCE)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Records,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for every random choice of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// ssd-300, mdcn-i1 or mdcn-i2.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layer-by-layer description of a model.
    Summarize(Common),
    /// Parameter totals against the reference counts.
    CountParams(Common),
    /// Receptive field of every layer.
    RfReport(Common),
    /// Dump default boxes, one per line: tap row col ratio cx cy w h.
    GenAnchors(Common),
    /// Finite-difference check of the full objective on a tiny network.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 6)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Train a toy model on synthetic scenes and evaluate it.
    TrainToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        /// Output directory (checkpoint, trace, validation split).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect objects in one PPM or MDT1 image.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Evaluate on a KITTI-layout directory (image_2/, label_2/).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with_all = ["detections", "echo"])]
        checkpoint: Option<PathBuf>,
        /// Directory of `<id>.txt` detection files.
        #[arg(long, conflicts_with = "echo")]
        detections: Option<PathBuf>,
        /// Score the labels themselves as detections.
        #[arg(long)]
        echo: bool,
    },
}

impl Common {
    /// Defaults, then the config file, then `--set`, then flags.
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::parse(&fs::read_to_string(p)?)?,
            None => Config::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = &self.variant {
            cfg.variant = v.parse::<Variant>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Summarize(c) => cmd_summarize(&c.resolve()?, c.format, out),
        Command::CountParams(c) => cmd_count_params(&c.resolve()?, c.variant.is_some(), c.format, out),
        Command::RfReport(c) => cmd_rf_report(&c.resolve()?, c.format, out),
        Command::GenAnchors(c) => cmd_gen_anchors(&c.resolve()?, out),
        Command::Gradcheck {
            common,
            samples,
            tolerance,
        } => cmd_gradcheck(&common.resolve()?, *samples, *tolerance, out),
        Command::TrainToy {
            common,
            iterations,
            out: dir,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(n) = iterations {
                cfg.iterations = *n;
            }
            if let Some(d) = dir {
                cfg.out_dir = d.clone();
            }
            cfg.validate()?;
            cmd_train_toy(&cfg, out)
        }
        Command::Detect {
            common,
            checkpoint,
            image,
        } => cmd_detect(&common.resolve()?, checkpoint, image, out),
        Command::Eval {
            common,
            data,
            checkpoint,
            detections,
            echo,
        } => {
            let source = match (checkpoint, detections, echo) {
                (Some(c), _, _) => EvalSource::Checkpoint(c.clone()),
                (_, Some(d), _) => EvalSource::Detections(d.clone()),
                (_, _, true) => EvalSource::Echo,
                _ => return Err(Error::Config("eval needs --checkpoint, --detections or --echo".into())),
            };
            cmd_eval(&common.resolve()?, data, &source, common.format, out)
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning everything it printed.
pub fn run_args<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::new();
    execute(&cli, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Mismatch(e.to_string()))
}
