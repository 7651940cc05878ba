use super::BBox;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorMatch {
    Positive(usize),
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchAssignment {
    pub states: Vec<AnchorMatch>,
    pub num_positive: usize,
}

impl MatchAssignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.iter().enumerate().filter_map(|(a, s)| match s {
            AnchorMatch::Positive(g) => Some((a, *g)),
            AnchorMatch::Negative => None,
        })
    }
}

/// Two-phase jaccard matching.
///
/// Phase 1 pairs every ground truth with a distinct anchor, repeatedly taking
/// the globally best remaining (gt, anchor) overlap; ties go to the lower gt
/// index, then the lower anchor index. Phase 2 marks every other anchor whose
/// best overlap exceeds `threshold` as positive for that best ground truth.
pub fn match_anchors(gts: &[BBox], anchors: &[BBox], threshold: f64) -> Result<MatchAssignment> {
    if anchors.is_empty() {
        return Err(Error::invalid("match", "empty anchor set"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("match", format!("threshold {threshold} outside (0, 1)")));
    }
    let na = anchors.len();
    let mut states = vec![AnchorMatch::Negative; na];
    if gts.is_empty() {
        return Ok(MatchAssignment {
            states,
            num_positive: 0,
        });
    }
    let overlaps: Vec<Vec<f64>> = gts.iter().map(|g| anchors.iter().map(|a| g.iou(a)).collect()).collect();

    let mut gt_done = vec![false; gts.len()];
    let mut anchor_used = vec![false; na];
    for _ in 0..gts.len().min(na) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (g, row) in overlaps.iter().enumerate() {
            if gt_done[g] {
                continue;
            }
            for (a, &o) in row.iter().enumerate() {
                if !anchor_used[a] && best.is_none_or(|(b, _, _)| o > b) {
                    best = Some((o, g, a));
                }
            }
        }
        let Some((_, g, a)) = best else { break };
        gt_done[g] = true;
        anchor_used[a] = true;
        states[a] = AnchorMatch::Positive(g);
    }

    for a in 0..na {
        if anchor_used[a] {
            continue;
        }
        let (mut bg, mut bo) = (0, overlaps[0][a]);
        for (g, row) in overlaps.iter().enumerate().skip(1) {
            if row[a] > bo {
                bg = g;
                bo = row[a];
            }
        }
        if bo > threshold {
            states[a] = AnchorMatch::Positive(bg);
        }
    }
    let num_positive = states.iter().filter(|s| matches!(s, AnchorMatch::Positive(_))).count();
    Ok(MatchAssignment { states, num_positive })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn low_overlap_best_match_is_positive() {
        let gt = b(0.5, 0.5, 0.2, 0.2);
        let anchor = b(0.62, 0.5, 0.2, 0.2);
        let iou = gt.iou(&anchor);
        assert!(iou > 0.0 && iou < 0.5);
        let m = match_anchors(&[gt], &[anchor], 0.5).unwrap();
        assert_eq!(m.states, vec![AnchorMatch::Positive(0)]);
    }

    #[test]
    fn exact_anchor_only_positive() {
        let anchors = vec![b(0.1, 0.1, 0.1, 0.1), b(0.5, 0.5, 0.2, 0.2), b(0.9, 0.9, 0.1, 0.1)];
        let m = match_anchors(&[anchors[1]], &anchors, 0.5).unwrap();
        assert_eq!(m.num_positive, 1);
        assert_eq!(m.states[1], AnchorMatch::Positive(0));
    }

    #[test]
    fn errors() {
        assert!(match_anchors(&[], &[], 0.5).is_err());
        assert!(match_anchors(&[], &[b(0.5, 0.5, 0.1, 0.1)], 1.0).is_err());
    }

    #[test]
    fn disjoint_gt_still_gets_an_anchor() {
        let anchors = vec![b(0.1, 0.1, 0.05, 0.05), b(0.2, 0.2, 0.05, 0.05)];
        let gt = b(0.8, 0.8, 0.1, 0.1);
        let m = match_anchors(&[gt], &anchors, 0.5).unwrap();
        assert_eq!(m.num_positive, 1);
    }
}
