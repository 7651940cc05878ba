//! The joint confidence + localization objective
//! `L = (L_conf + α·L_loc) / N` over matched anchors, with hard negative
//! mining for the confidence term.

use super::{encode, AnchorMatch, AnchorSet, LabeledBox, MatchAssignment, Variances};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    /// Mined negatives per positive.
    pub neg_pos_ratio: f64,
    pub variances: Variances,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            neg_pos_ratio: 3.0,
            variances: Variances::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Summed (unnormalized) confidence loss.
    pub conf: f64,
    /// Summed (unnormalized) localization loss.
    pub loc: f64,
    pub num_matched: usize,
    pub alpha: f64,
}

/// Gradients w.r.t. flattened predictions: `conf` is `A × classes`, `loc` is `A × 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub conf: Vec<f64>,
    pub loc: Vec<f64>,
}

/// Unnormalized per-image terms; combine images with [`combine_terms`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageLossTerms {
    pub conf: f64,
    pub loc: f64,
    pub num_positive: usize,
    /// Anchors selected by hard negative mining, ascending.
    pub mined: Vec<usize>,
    pub grads: LossGrads,
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Indices of the mined negatives: the `ratio·N` negatives with the largest
/// background cross-entropy, ties broken by anchor index.
pub fn mine_negatives(background_loss: &[f64], assignment: &MatchAssignment, ratio: f64) -> Vec<usize> {
    let mut negs: Vec<usize> = assignment
        .states
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, AnchorMatch::Negative))
        .map(|(a, _)| a)
        .collect();
    let keep = ((ratio * assignment.num_positive as f64).floor() as usize).min(negs.len());
    negs.sort_by(|&a, &b| background_loss[b].total_cmp(&background_loss[a]).then(a.cmp(&b)));
    negs.truncate(keep);
    negs.sort_unstable();
    negs
}

/// Loss terms and unnormalized gradients for one image.
///
/// `conf_logits` is `A × classes` (class 0 is background), `loc_preds` is
/// `A × 4`; `gts[g].class` is the 0-based object class.
pub fn image_loss_terms(
    conf_logits: &[f64],
    loc_preds: &[f64],
    classes: usize,
    assignment: &MatchAssignment,
    gts: &[LabeledBox],
    anchors: &AnchorSet,
    cfg: &LossConfig,
) -> Result<ImageLossTerms> {
    let na = anchors.len();
    if assignment.states.len() != na {
        return Err(Error::shape(
            "multibox_loss",
            "assignment length",
            na,
            assignment.states.len(),
        ));
    }
    if conf_logits.len() != na * classes {
        return Err(Error::shape(
            "multibox_loss",
            "confidence predictions",
            na * classes,
            conf_logits.len(),
        ));
    }
    if loc_preds.len() != na * 4 {
        return Err(Error::shape(
            "multibox_loss",
            "location predictions",
            na * 4,
            loc_preds.len(),
        ));
    }
    let mut grads = LossGrads {
        conf: vec![0.0; na * classes],
        loc: vec![0.0; na * 4],
    };
    if assignment.num_positive == 0 {
        return Ok(ImageLossTerms {
            conf: 0.0,
            loc: 0.0,
            num_positive: 0,
            mined: Vec::new(),
            grads,
        });
    }
    let mut logp = vec![0.0; na * classes];
    for a in 0..na {
        log_softmax_row(
            &conf_logits[a * classes..(a + 1) * classes],
            &mut logp[a * classes..(a + 1) * classes],
        );
    }
    let bg_loss: Vec<f64> = (0..na).map(|a| -logp[a * classes]).collect();
    let mined = mine_negatives(&bg_loss, assignment, cfg.neg_pos_ratio);

    let mut conf = 0.0;
    let mut loc = 0.0;
    let ce_grad = |a: usize, target: usize, grads: &mut LossGrads| {
        for c in 0..classes {
            let p = logp[a * classes + c].exp();
            grads.conf[a * classes + c] = p - if c == target { 1.0 } else { 0.0 };
        }
        -logp[a * classes + target]
    };
    for (a, g) in assignment.positives() {
        let gt = gts
            .get(g)
            .ok_or_else(|| Error::invalid("multibox_loss", format!("assignment references ground truth {g}")))?;
        if gt.class + 1 >= classes {
            return Err(Error::invalid(
                "multibox_loss",
                format!("class {} out of range", gt.class),
            ));
        }
        conf += ce_grad(a, gt.class + 1, &mut grads);
        let target = encode(&gt.bbox, &anchors.boxes[a], cfg.variances)?;
        for t in 0..4 {
            let d = loc_preds[a * 4 + t] - target[t];
            loc += smooth_l1(d);
            grads.loc[a * 4 + t] = cfg.alpha * smooth_l1_grad(d);
        }
    }
    for &a in &mined {
        conf += ce_grad(a, 0, &mut grads);
    }
    Ok(ImageLossTerms {
        conf,
        loc,
        num_positive: assignment.num_positive,
        mined,
        grads,
    })
}

/// Sums per-image terms and normalizes by the total number of matches.
/// Returns the report and the factor (`1/N`, or 0 when `N = 0`) that turns
/// the per-image gradients into gradients of the combined loss.
pub fn combine_terms(terms: &[ImageLossTerms], alpha: f64) -> (LossReport, f64) {
    let conf: f64 = terms.iter().map(|t| t.conf).sum();
    let loc: f64 = terms.iter().map(|t| t.loc).sum();
    let n: usize = terms.iter().map(|t| t.num_positive).sum();
    let (total, factor) = if n == 0 {
        (0.0, 0.0)
    } else {
        ((conf + alpha * loc) / n as f64, 1.0 / n as f64)
    };
    (
        LossReport {
            total,
            conf,
            loc,
            num_matched: n,
            alpha,
        },
        factor,
    )
}

/// Single-image loss with gradients of the normalized total.
pub fn multibox_loss(
    conf_logits: &[f64],
    loc_preds: &[f64],
    classes: usize,
    assignment: &MatchAssignment,
    gts: &[LabeledBox],
    anchors: &AnchorSet,
    cfg: &LossConfig,
) -> Result<(LossReport, LossGrads)> {
    let mut terms = image_loss_terms(conf_logits, loc_preds, classes, assignment, gts, anchors, cfg)?;
    let (report, factor) = combine_terms(std::slice::from_ref(&terms), cfg.alpha);
    terms.grads.conf.iter_mut().for_each(|g| *g *= factor);
    terms.grads.loc.iter_mut().for_each(|g| *g *= factor);
    Ok((report, terms.grads))
}
