use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Config, ModelScale, OutputFormat};
use crate::error::{Error, Result};
use crate::kitti::{
    ap_table, format_detections, iou_sweep, load_detection_dir, load_image, load_kitti_dir, run_detector, save_ppm,
    sweep_thresholds, ApMethod, Detector, Difficulty, EchoDetector, EvalSample, GroundTruth, NetworkDetector,
};
use crate::multibox::anchors_for_graph;
use crate::netbuilder::{
    assemble, count_parameters, receptive_field, summarize, LayerKind, ModelConfig, Variant, REFERENCE_PARAMS,
};
use crate::network::Network;
use crate::trainer::{
    grad_check_network, gradcheck_batch, gradcheck_network, load_checkpoint, make_synthetic_dataset, save_checkpoint,
    thread_pool, train, OptimizerState, TrainSample, DEFAULT_STEP,
};

/// Independent 64-bit seed for `stream` derived from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_VAL_DATA: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_BATCHES: u64 = 4;
const STREAM_GRADCHECK: u64 = 5;

fn model_graph(cfg: &Config) -> Result<crate::netbuilder::NetworkGraph> {
    assemble(&cfg.model_config())
}

pub fn cmd_summarize(cfg: &Config, format: OutputFormat, out: &mut dyn Write) -> Result<()> {
    let g = model_graph(cfg)?;
    let s = summarize(&g, g.input_size())?;
    let text = match format {
        OutputFormat::Text => s.to_text(),
        OutputFormat::Records => s.to_records(),
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// Totals for the configured variant, or for all three when `single` is false.
pub fn cmd_count_params(cfg: &Config, single: bool, format: OutputFormat, out: &mut dyn Write) -> Result<()> {
    let variants: Vec<Variant> = if single {
        vec![cfg.variant]
    } else {
        Variant::ALL.to_vec()
    };
    if format == OutputFormat::Text {
        writeln!(
            out,
            "{:<14}{:>12}{:>12}{:>11}",
            "model", "params", "reference", "deviation"
        )?;
    }
    for v in variants {
        let mut mc: ModelConfig = cfg.model_config();
        if mc.variant != v {
            mc = match cfg.model {
                ModelScale::Full => ModelConfig::canonical(v),
                ModelScale::Toy => ModelConfig::toy(v, cfg.input_size),
            };
        }
        let g = assemble(&mc)?;
        let total = count_parameters(&g).total;
        let reference = REFERENCE_PARAMS
            .iter()
            .find(|r| r.0 == v)
            .map(|r| r.1)
            .filter(|_| cfg.model == ModelScale::Full);
        match format {
            OutputFormat::Text => {
                let (r, d) = match reference {
                    Some(r) => (format!("{r:.3e}"), format!("{:+.2}%", 100.0 * (total as f64 / r - 1.0))),
                    None => ("-".into(), "-".into()),
                };
                writeln!(out, "{:<14}{:>12}{:>12}{:>11}", g.name(), total, r, d)?;
            }
            OutputFormat::Records => {
                write!(out, "params model={} total={}", g.name(), total)?;
                if let Some(r) = reference {
                    write!(out, " reference={r} deviation={}", total as f64 / r - 1.0)?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

pub fn cmd_rf_report(cfg: &Config, format: OutputFormat, out: &mut dyn Write) -> Result<()> {
    let g = model_graph(cfg)?;
    let rf = receptive_field(&g)?;
    let shapes = g.shapes();
    if format == OutputFormat::Text {
        writeln!(out, "model {} @ {}x{}", g.name(), g.input_size(), g.input_size())?;
        writeln!(
            out,
            "{:<16}{:>8}{:>8}{:>8}{:>10}",
            "layer", "map", "rf", "stride", "coverage"
        )?;
    }
    for (i, (l, e)) in g.layers().iter().zip(&rf.entries).enumerate() {
        if !matches!(
            l.kind,
            LayerKind::Conv { .. } | LayerKind::Pool { .. } | LayerKind::Concat
        ) {
            continue;
        }
        match format {
            OutputFormat::Text => writeln!(
                out,
                "{:<16}{:>8}{:>8}{:>8}{:>10.4}",
                e.id, shapes[i].height, e.size, e.stride, e.coverage
            )?,
            OutputFormat::Records => writeln!(
                out,
                "rf layer={} map={} size={} stride={} coverage={}",
                e.id, shapes[i].height, e.size, e.stride, e.coverage
            )?,
        }
    }
    Ok(())
}

pub fn cmd_gen_anchors(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let g = model_graph(cfg)?;
    let anchors = anchors_for_graph(&g, &cfg.anchor_config())?;
    out.write_all(anchors.dump().as_bytes())?;
    Ok(())
}

pub fn cmd_gradcheck(cfg: &Config, samples: usize, tolerance: f64, out: &mut dyn Write) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_GRADCHECK));
    let size = 16;
    let net = gradcheck_network(&mut rng, size, 3)?;
    let anchors = anchors_for_graph(net.graph(), &cfg.anchor_config())?;
    let batch = gradcheck_batch(&mut rng, size);
    let report = grad_check_network(
        &net,
        &anchors,
        &batch,
        &cfg.objective(),
        samples,
        DEFAULT_STEP,
        &mut rng,
    )?;
    let verdict = if report.passed(tolerance) { "PASS" } else { "FAIL" };
    writeln!(
        out,
        "gradcheck params={} checked={} skipped={} max_rel_error={:.3e} worst={} tolerance={:e} {verdict}",
        net.num_parameters(),
        report.checked,
        report.skipped,
        report.max_rel_error,
        report.worst,
        tolerance
    )?;
    if verdict == "FAIL" {
        return Err(Error::Mismatch(format!(
            "gradient check failed: {:.3e} ≥ {tolerance:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn write_split(dir: &Path, samples: &[EvalSample]) -> Result<()> {
    let (img_dir, lbl_dir) = (dir.join("image_2"), dir.join("label_2"));
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&lbl_dir)?;
    for s in samples {
        save_ppm(&s.image, img_dir.join(format!("{}.ppm", s.id)))?;
        let text: String = s.labels.iter().map(|g| g.to_kitti_line() + "\n").collect();
        fs::write(lbl_dir.join(format!("{}.txt", s.id)), text)?;
    }
    Ok(())
}

/// Trains on `train_images` synthetic scenes and evaluates on a disjoint
/// validation split. Writes to `out_dir`:
/// `config.txt`, `trace.txt`, `checkpoint/`, `val/` and `report.txt`.
pub fn cmd_train_toy(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let pool = thread_pool()?;
    // the sink need not be Send, so progress is buffered inside the pool
    let mut buf = Vec::new();
    let res = pool.install(|| train_toy_inner(cfg, &mut buf));
    out.write_all(&buf)?;
    res
}

fn train_toy_inner(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    if cfg.train_images == 0 {
        return Err(Error::Config("`train_images` must be positive".into()));
    }
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.dump())?;

    let size = cfg.image_size();
    let train_set = make_synthetic_dataset(derive_seed(cfg.seed, STREAM_TRAIN_DATA), cfg.train_images, size)?;
    let val_set = make_synthetic_dataset(derive_seed(cfg.seed, STREAM_VAL_DATA), cfg.val_images, size)?;
    let samples: Vec<TrainSample> = train_set.iter().map(|s| s.to_sample()).collect();
    let val: Vec<EvalSample> = val_set
        .iter()
        .enumerate()
        .map(|(i, s)| EvalSample {
            id: format!("{i:06}"),
            image: s.image.clone(),
            labels: s.ground_truth(),
        })
        .collect();
    write_split(&dir.join("val"), &val)?;

    let mut net = Network::new(model_graph(cfg)?)?;
    net.init_he(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT)));
    let anchors = anchors_for_graph(net.graph(), &cfg.anchor_config())?;
    writeln!(
        out,
        "model {} params={} anchors={} train={} val={}",
        net.graph().name(),
        net.num_parameters(),
        anchors.len(),
        samples.len(),
        val.len()
    )?;
    let mut state = OptimizerState::new(net.params(), cfg.momentum, cfg.weight_decay);
    let ckpt = dir.join("checkpoint");
    let mut tcfg = cfg.train_config(derive_seed(cfg.seed, STREAM_BATCHES))?;
    tcfg.checkpoint_dir = Some(ckpt.clone());

    let mut trace_file = fs::File::create(dir.join("trace.txt"))?;
    let log_every = (cfg.iterations / 20).max(1);
    let mut io_err = None;
    if cfg.iterations > 0 {
        train(&mut net, &anchors, &samples, &tcfg, &mut state, |r| {
            let line = r.to_string();
            let res = writeln!(trace_file, "{line}").and_then(|_| {
                if r.iteration % log_every == 0 || r.iteration + 1 == cfg.iterations {
                    writeln!(out, "{line}")
                } else {
                    Ok(())
                }
            });
            if let Err(e) = res {
                io_err.get_or_insert(e);
            }
        })?;
    }
    if let Some(e) = io_err {
        return Err(e.into());
    }
    save_checkpoint(&ckpt, &net, &state)?;

    let det = NetworkDetector::new(net, &cfg.anchor_config(), cfg.detect_config())?;
    let report = evaluation_report(&det, &val, cfg.eval_iou, OutputFormat::Text)?;
    fs::write(dir.join("report.txt"), &report)?;
    out.write_all(report.as_bytes())?;
    Ok(())
}

pub fn cmd_detect(cfg: &Config, checkpoint: &Path, image: &Path, out: &mut dyn Write) -> Result<()> {
    let (net, _) = load_checkpoint(checkpoint)?;
    let det = NetworkDetector::new(net, &cfg.anchor_config(), cfg.detect_config())?;
    let img = load_image(image)?;
    let dets = thread_pool()?.install(|| det.detect(&img))?;
    out.write_all(format_detections(&dets).as_bytes())?;
    Ok(())
}

/// Where `eval` gets its detections.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    Detections(PathBuf),
    Echo,
}

fn report_from(
    dets: &[Vec<crate::kitti::DetectionRecord>],
    gts: &[Vec<GroundTruth>],
    iou: f64,
    format: OutputFormat,
) -> Result<String> {
    let table = ap_table(dets, gts, iou, ApMethod::ElevenPoint)?;
    let sweep = iou_sweep(
        dets,
        gts,
        Difficulty::Moderate,
        &sweep_thresholds(),
        ApMethod::ElevenPoint,
    )?;
    Ok(match format {
        OutputFormat::Text => format!("{}\n{}", table.to_text(), sweep.to_text()),
        OutputFormat::Records => format!("{}{}", table.to_records(), sweep.to_records()),
    })
}

fn evaluation_report<D: Detector + ?Sized>(
    det: &D,
    samples: &[EvalSample],
    iou: f64,
    format: OutputFormat,
) -> Result<String> {
    let dets = run_detector(det, samples)?;
    let gts: Vec<Vec<GroundTruth>> = samples.iter().map(|s| s.labels.clone()).collect();
    report_from(&dets, &gts, iou, format)
}

pub fn cmd_eval(
    cfg: &Config,
    data: &Path,
    source: &EvalSource,
    format: OutputFormat,
    out: &mut dyn Write,
) -> Result<()> {
    let samples = load_kitti_dir(data)?;
    let report = thread_pool()?.install(|| -> Result<String> {
        match source {
            EvalSource::Checkpoint(c) => {
                let (net, _) = load_checkpoint(c)?;
                let det = NetworkDetector::new(net, &cfg.anchor_config(), cfg.detect_config())?;
                evaluation_report(&det, &samples, cfg.eval_iou, format)
            }
            EvalSource::Echo => evaluation_report(&EchoDetector::new(&samples), &samples, cfg.eval_iou, format),
            EvalSource::Detections(d) => {
                let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
                let dets = load_detection_dir(d, &ids)?;
                let gts: Vec<Vec<GroundTruth>> = samples.iter().map(|s| s.labels.clone()).collect();
                report_from(&dets, &gts, cfg.eval_iou, format)
            }
        }
    })?;
    out.write_all(report.as_bytes())?;
    Ok(())
}
