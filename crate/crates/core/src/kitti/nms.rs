use super::DetectionRecord;
use crate::multibox::iou_corners;

/// Greedy non-maximum suppression over corner boxes.
///
/// Candidates are visited by descending score (ties keep input order); a
/// candidate survives unless its overlap with an already kept box exceeds
/// `threshold`. Returns the kept indices in visiting order.
pub fn nms_indices(boxes: &[[f64; 4]], scores: &[f64], threshold: f64) -> Vec<usize> {
    debug_assert_eq!(boxes.len(), scores.len());
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou_corners(&boxes[k], &boxes[i]) <= threshold) {
            keep.push(i);
        }
    }
    keep
}

/// Class-agnostic suppression over detection records, highest confidence first.
pub fn nms(dets: &[DetectionRecord], threshold: f64) -> Vec<DetectionRecord> {
    let boxes: Vec<[f64; 4]> = dets.iter().map(|d| d.bbox.corners()).collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    nms_indices(&boxes, &scores, threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}
