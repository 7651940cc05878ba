use super::{decode, AnchorSet, BBox, Variances};
use crate::error::{Error, Result};
use crate::kitti::nms_indices;

/// Candidates per class entering suppression.
const PRE_NMS_PER_CLASS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectConfig {
    /// Minimum class probability for a candidate.
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub top_k: usize,
    pub variances: Variances,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            conf_threshold: 0.01,
            nms_threshold: 0.45,
            top_k: 200,
            variances: Variances::default(),
        }
    }
}

/// A decoded detection; `class` is 0-based (background excluded) and the
/// box is clipped to the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Softmax, per-class thresholding and suppression, then the global top-k.
pub fn detect(
    loc: &[f64],
    conf_logits: &[f64],
    anchors: &AnchorSet,
    classes: usize,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    let na = anchors.len();
    if loc.len() != na * 4 || conf_logits.len() != na * classes {
        return Err(Error::shape("detect", "predictions per anchor", na, loc.len() / 4));
    }
    let mut probs = vec![0.0; na * classes];
    for a in 0..na {
        let row = &conf_logits[a * classes..(a + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for c in 0..classes {
            probs[a * classes + c] = (row[c] - max).exp() / total;
        }
    }
    let mut decoded: Vec<Option<BBox>> = vec![None; na];
    let mut out = Vec::new();
    for c in 1..classes {
        let mut cand: Vec<usize> = (0..na)
            .filter(|&a| probs[a * classes + c] > cfg.conf_threshold)
            .collect();
        cand.sort_by(|&a, &b| {
            probs[b * classes + c]
                .total_cmp(&probs[a * classes + c])
                .then(a.cmp(&b))
        });
        cand.truncate(PRE_NMS_PER_CLASS);
        let mut boxes = Vec::with_capacity(cand.len());
        let mut scores = Vec::with_capacity(cand.len());
        let mut kept_anchor = Vec::with_capacity(cand.len());
        for &a in &cand {
            if decoded[a].is_none() {
                let off = [loc[a * 4], loc[a * 4 + 1], loc[a * 4 + 2], loc[a * 4 + 3]];
                decoded[a] = decode(&off, &anchors.boxes[a], cfg.variances)
                    .ok()
                    .and_then(|b| b.clip_unit());
            }
            if let Some(b) = decoded[a] {
                boxes.push(b.corners());
                scores.push(probs[a * classes + c]);
                kept_anchor.push(a);
            }
        }
        for i in nms_indices(&boxes, &scores, cfg.nms_threshold) {
            out.push(Detection {
                class: c - 1,
                score: scores[i],
                bbox: decoded[kept_anchor[i]].expect("decoded"),
            });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out.truncate(cfg.top_k);
    Ok(out)
}
