//! Table-shaped evaluation: per-class × per-difficulty AP, the IoU sweep and
//! KITTI-layout dataset directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    average_precision_with, load_image, parse_detections, parse_kitti_labels, ApMethod, DetectionRecord, Difficulty,
    EvalClass, GroundTruth,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// IoU thresholds of the sweep: 0.50, 0.55, ..., 0.80.
pub fn sweep_thresholds() -> Vec<f64> {
    (0..=6).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Anything that turns an image into pixel-space detections.
pub trait Detector: Sync {
    fn detect(&self, image: &Tensor) -> Result<Vec<DetectionRecord>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub image: Tensor,
    pub labels: Vec<GroundTruth>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApTable {
    pub iou_threshold: f64,
    /// `ap[class][difficulty]`, classes and levels in canonical order.
    pub ap: [[f64; 3]; 3],
}

impl ApTable {
    pub fn get(&self, class: EvalClass, difficulty: Difficulty) -> f64 {
        let d = Difficulty::LEVELS
            .iter()
            .position(|&l| l == difficulty)
            .expect("evaluated level");
        self.ap[class.index()][d]
    }

    /// Mean over the nine cells.
    pub fn map(&self) -> f64 {
        self.ap.iter().flatten().sum::<f64>() / 9.0
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("AP (%) at IoU {:.2}\n", self.iou_threshold);
        let _ = writeln!(s, "{:<12}{:>10}{:>10}{:>10}", "class", "easy", "moderate", "hard");
        for c in EvalClass::ALL {
            let row = self.ap[c.index()];
            let _ = writeln!(
                s,
                "{:<12}{:>10.2}{:>10.2}{:>10.2}",
                c.name(),
                100.0 * row[0],
                100.0 * row[1],
                100.0 * row[2]
            );
        }
        let _ = writeln!(s, "mAP {:.2}", 100.0 * self.map());
        s
    }

    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for c in EvalClass::ALL {
            for (d, level) in Difficulty::LEVELS.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "ap class={} difficulty={} iou={:.2} value={:.6}",
                    c,
                    level,
                    self.iou_threshold,
                    self.ap[c.index()][d]
                );
            }
        }
        let _ = writeln!(s, "map iou={:.2} value={:.6}", self.iou_threshold, self.map());
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub difficulty: Difficulty,
    pub thresholds: Vec<f64>,
    /// `ap[class][threshold]`.
    pub ap: Vec<Vec<f64>>,
}

impl SweepTable {
    pub fn mean_row(&self) -> Vec<f64> {
        (0..self.thresholds.len())
            .map(|t| self.ap.iter().map(|r| r[t]).sum::<f64>() / self.ap.len() as f64)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("AP (%) by IoU threshold, {}\n", self.difficulty);
        let _ = write!(s, "{:<12}", "class");
        for t in &self.thresholds {
            let _ = write!(s, "{:>8.2}", t);
        }
        s.push('\n');
        let mean = self.mean_row();
        let rows = EvalClass::ALL
            .iter()
            .map(|c| (c.name(), &self.ap[c.index()]))
            .chain(std::iter::once(("mean", &mean)));
        for (name, row) in rows {
            let _ = write!(s, "{:<12}", name);
            for v in row {
                let _ = write!(s, "{:>8.2}", 100.0 * v);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for c in EvalClass::ALL {
            for (t, thr) in self.thresholds.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "sweep class={} difficulty={} iou={:.2} value={:.6}",
                    c,
                    self.difficulty,
                    thr,
                    self.ap[c.index()][t]
                );
            }
        }
        s
    }
}

fn check_pairing(dets: &[Vec<DetectionRecord>], gts: &[Vec<GroundTruth>]) -> Result<()> {
    if dets.len() != gts.len() {
        return Err(Error::Mismatch(format!(
            "{} detection lists for {} label lists",
            dets.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Every class at every difficulty for one IoU threshold.
pub fn ap_table(
    dets: &[Vec<DetectionRecord>],
    gts: &[Vec<GroundTruth>],
    iou_threshold: f64,
    method: ApMethod,
) -> Result<ApTable> {
    check_pairing(dets, gts)?;
    let mut ap = [[0.0; 3]; 3];
    for c in EvalClass::ALL {
        for (d, &level) in Difficulty::LEVELS.iter().enumerate() {
            ap[c.index()][d] = average_precision_with(dets, gts, c, level, iou_threshold, method)?.ap;
        }
    }
    Ok(ApTable { iou_threshold, ap })
}

/// Per-class AP at each threshold for one difficulty level.
pub fn iou_sweep(
    dets: &[Vec<DetectionRecord>],
    gts: &[Vec<GroundTruth>],
    difficulty: Difficulty,
    thresholds: &[f64],
    method: ApMethod,
) -> Result<SweepTable> {
    check_pairing(dets, gts)?;
    let mut ap = vec![vec![0.0; thresholds.len()]; 3];
    for c in EvalClass::ALL {
        for (t, &thr) in thresholds.iter().enumerate() {
            ap[c.index()][t] = average_precision_with(dets, gts, c, difficulty, thr, method)?.ap;
        }
    }
    Ok(SweepTable {
        difficulty,
        thresholds: thresholds.to_vec(),
        ap,
    })
}

/// Runs `detector` over every sample (in parallel, results kept in sample order).
pub fn run_detector<D: Detector + ?Sized>(detector: &D, samples: &[EvalSample]) -> Result<Vec<Vec<DetectionRecord>>> {
    samples.par_iter().map(|s| detector.detect(&s.image)).collect()
}

pub fn evaluate_model<D: Detector + ?Sized>(
    detector: &D,
    samples: &[EvalSample],
    iou_threshold: f64,
) -> Result<ApTable> {
    let dets = run_detector(detector, samples)?;
    let gts: Vec<Vec<GroundTruth>> = samples.iter().map(|s| s.labels.clone()).collect();
    ap_table(&dets, &gts, iou_threshold, ApMethod::ElevenPoint)
}

/// Emits every labelled box of the sample it was built from.
#[derive(Clone, Debug)]
pub struct EchoDetector {
    samples: Vec<(Tensor, Vec<DetectionRecord>)>,
}

impl EchoDetector {
    pub fn new(samples: &[EvalSample]) -> Self {
        let samples = samples
            .iter()
            .map(|s| {
                let dets = s
                    .labels
                    .iter()
                    .filter_map(|g| {
                        g.class.map(|class| DetectionRecord {
                            class,
                            bbox: g.bbox,
                            confidence: 1.0,
                        })
                    })
                    .collect();
                (s.image.clone(), dets)
            })
            .collect();
        EchoDetector { samples }
    }
}

impl Detector for EchoDetector {
    fn detect(&self, image: &Tensor) -> Result<Vec<DetectionRecord>> {
        Ok(self
            .samples
            .iter()
            .find(|(img, _)| img == image)
            .map(|(_, d)| d.clone())
            .unwrap_or_default())
    }
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads `dir/image_2/*.{ppm,mdt}` paired with `dir/label_2/<id>.txt`.
pub fn load_kitti_dir(dir: impl AsRef<Path>) -> Result<Vec<EvalSample>> {
    let dir = dir.as_ref();
    let labels_dir = dir.join("label_2");
    let mut out = Vec::new();
    for img in sorted_files(&dir.join("image_2"))? {
        let ext = img.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("ppm") | Some("mdt")) {
            continue;
        }
        let id = stem(&img);
        let label_path = labels_dir.join(format!("{id}.txt"));
        if !label_path.is_file() {
            return Err(Error::Mismatch(format!(
                "image {id} has no label file {}",
                label_path.display()
            )));
        }
        let labels = parse_kitti_labels(&fs::read_to_string(&label_path)?)
            .map_err(|e| Error::Mismatch(format!("{}: {e}", label_path.display())))?;
        out.push(EvalSample {
            id,
            image: load_image(&img)?,
            labels,
        });
    }
    let n_labels = sorted_files(&labels_dir)?.len();
    if n_labels != out.len() {
        return Err(Error::Mismatch(format!(
            "{} images but {n_labels} label files",
            out.len()
        )));
    }
    Ok(out)
}

/// Reads `dir/<id>.txt` detection files for the given sample ids; a missing
/// file means no detections.
pub fn load_detection_dir(dir: impl AsRef<Path>, ids: &[String]) -> Result<Vec<Vec<DetectionRecord>>> {
    let dir = dir.as_ref();
    ids.iter()
        .map(|id| {
            let p = dir.join(format!("{id}.txt"));
            if p.is_file() {
                parse_detections(&fs::read_to_string(&p)?)
            } else {
                Ok(Vec::new())
            }
        })
        .collect()
}
