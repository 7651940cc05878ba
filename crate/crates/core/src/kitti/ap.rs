//! Per-class, per-difficulty average precision.

use super::{DetectionRecord, Difficulty, EvalClass, GroundTruth};
use crate::error::{Error, Result};

/// Recall sampling used to interpolate the precision/recall curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ApMethod {
    /// Recall levels 0, 0.1, ..., 1.
    #[default]
    ElevenPoint,
    /// Recall levels 1/40, 2/40, ..., 1.
    FortyPoint,
}

impl ApMethod {
    fn recall_levels(&self) -> Vec<f64> {
        match self {
            ApMethod::ElevenPoint => (0..=10).map(|i| i as f64 / 10.0).collect(),
            ApMethod::FortyPoint => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApResult {
    pub class: EvalClass,
    pub difficulty: Difficulty,
    pub iou_threshold: f64,
    /// `(recall, precision)` after each counted detection, by descending confidence.
    pub curve: Vec<(f64, f64)>,
    pub num_positives: usize,
    pub ap: f64,
}

/// Outcome of matching one image's detections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

fn overlap_of_det(det: &[f64; 4], region: &[f64; 4]) -> f64 {
    let iw = det[2].min(region[2]) - det[0].max(region[0]);
    let ih = det[3].min(region[3]) - det[1].max(region[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    iw * ih / ((det[2] - det[0]) * (det[3] - det[1]))
}

/// Returns per-detection outcomes for `dets` (already sorted by descending
/// confidence) and the number of counted ground truths in the image.
fn match_image(
    dets: &[&DetectionRecord],
    gts: &[GroundTruth],
    class: EvalClass,
    level: Difficulty,
    thr: f64,
) -> (Vec<Outcome>, usize) {
    let min_height = level.limits().map(|l| l.0).unwrap_or(0.0);
    // 0 counted, 1 ignored, 2 not relevant
    let kind: Vec<u8> = gts
        .iter()
        .map(|g| match g.class {
            Some(c) if c == class && g.difficulty <= level => 0,
            Some(c) if c == class => 1,
            _ => 2,
        })
        .collect();
    let dont_care: Vec<[f64; 4]> = gts
        .iter()
        .filter(|g| g.is_dont_care())
        .map(|g| g.bbox.corners())
        .collect();
    let mut taken = vec![false; gts.len()];
    let npos = kind.iter().filter(|&&k| k == 0).count();
    let mut outcomes = Vec::with_capacity(dets.len());
    for d in dets {
        let best = |want: u8, taken: &[bool]| -> Option<usize> {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if kind[g] != want || taken[g] {
                    continue;
                }
                let o = d.bbox.iou(&gt.bbox);
                if o >= thr && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            best.map(|b| b.0)
        };
        let outcome = if let Some(g) = best(0, &taken) {
            taken[g] = true;
            Outcome::TruePositive
        } else if let Some(g) = best(1, &taken) {
            taken[g] = true;
            Outcome::Ignored
        } else if d.bbox.height() < min_height || dont_care.iter().any(|r| overlap_of_det(&d.bbox.corners(), r) >= thr)
        {
            Outcome::Ignored
        } else {
            Outcome::FalsePositive
        };
        outcomes.push(outcome);
    }
    (outcomes, npos)
}

/// Interpolated AP from a `(recall, precision)` curve.
pub fn interpolated_ap(curve: &[(f64, f64)], method: ApMethod) -> f64 {
    let levels = method.recall_levels();
    let total: f64 = levels
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|p| p.0 >= r - 1e-12)
                .map(|p| p.1)
                .fold(0.0, f64::max)
        })
        .sum();
    total / levels.len() as f64
}

/// AP of one class at one difficulty level with the 11-point rule.
///
/// `dets[i]` and `gts[i]` belong to image `i`. A ground truth counts if it is
/// of `class` and no harder than `difficulty`; harder instances of the class
/// and DontCare regions absorb detections without counting either way.
pub fn average_precision(
    dets: &[Vec<DetectionRecord>],
    gts: &[Vec<GroundTruth>],
    class: EvalClass,
    difficulty: Difficulty,
    iou_threshold: f64,
) -> Result<ApResult> {
    average_precision_with(dets, gts, class, difficulty, iou_threshold, ApMethod::ElevenPoint)
}

pub fn average_precision_with(
    dets: &[Vec<DetectionRecord>],
    gts: &[Vec<GroundTruth>],
    class: EvalClass,
    difficulty: Difficulty,
    iou_threshold: f64,
    method: ApMethod,
) -> Result<ApResult> {
    if dets.len() != gts.len() {
        return Err(Error::Mismatch(format!(
            "{} detection lists for {} label lists",
            dets.len(),
            gts.len()
        )));
    }
    if difficulty == Difficulty::Ignored {
        return Err(Error::invalid(
            "average_precision",
            "difficulty must be easy, moderate or hard",
        ));
    }
    // (confidence, image, rank within image, is true positive)
    let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut npos = 0;
    for (img, (d, g)) in dets.iter().zip(gts).enumerate() {
        let mut mine: Vec<&DetectionRecord> = d.iter().filter(|x| x.class == class).collect();
        mine.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let (outcomes, n) = match_image(&mine, g, class, difficulty, iou_threshold);
        npos += n;
        for (rank, (det, o)) in mine.iter().zip(outcomes).enumerate() {
            if o != Outcome::Ignored {
                scored.push((det.confidence, img, rank, o == Outcome::TruePositive));
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut curve = Vec::with_capacity(scored.len());
    let mut tp = 0usize;
    if npos > 0 {
        for (i, s) in scored.iter().enumerate() {
            if s.3 {
                tp += 1;
            }
            curve.push((tp as f64 / npos as f64, tp as f64 / (i + 1) as f64));
        }
    }
    let ap = if npos == 0 {
        0.0
    } else {
        interpolated_ap(&curve, method)
    };
    Ok(ApResult {
        class,
        difficulty,
        iou_threshold,
        curve,
        num_positives: npos,
        ap,
    })
}
