//! Default boxes, jaccard matching, offset coding, the multibox loss and
//! detection post-processing.

mod anchors;
mod detect;
mod encoding;
mod geometry;
mod head;
mod loss;
mod matching;

pub use anchors::{generate_anchors, AnchorConfig, AnchorMeta, AnchorSet, TapAnchorSpec, EXTRA_RATIOS};
pub use detect::{detect, DetectConfig, Detection};
pub use encoding::{decode, encode, Variances};
pub use geometry::{iou, iou_corners, BBox, LabeledBox};
pub use head::{flatten_predictions, head_output_counts, unflatten_gradients, FlatPredictions, HeadCount};
pub use loss::{
    combine_terms, image_loss_terms, mine_negatives, multibox_loss, smooth_l1, smooth_l1_grad, ImageLossTerms,
    LossConfig, LossGrads, LossReport,
};
pub use matching::{match_anchors, AnchorMatch, MatchAssignment};

use crate::error::Result;
use crate::netbuilder::NetworkGraph;

/// Anchors for every tap of `graph` under `cfg`.
pub fn anchors_for_graph(graph: &NetworkGraph, cfg: &AnchorConfig) -> Result<AnchorSet> {
    let heads = graph.heads()?;
    let sizes: Vec<usize> = heads.iter().map(|h| graph.shapes()[h.0].height).collect();
    let ks: Vec<usize> = heads.iter().map(|h| h.3).collect();
    generate_anchors(&cfg.tap_specs(&sizes, &ks)?)
}
