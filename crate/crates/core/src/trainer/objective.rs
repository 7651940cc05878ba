//! The training objective evaluated through a network: forward, flatten,
//! match, loss, backward.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multibox::{
    combine_terms, flatten_predictions, image_loss_terms, match_anchors, unflatten_gradients, AnchorSet, BBox,
    ImageLossTerms, LabeledBox, LossConfig, LossReport, MatchAssignment,
};
use crate::network::Network;
use crate::tensor::Tensor;

/// One training image: `3×S×S` pixels in `[0, 1]` and unit-square boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub boxes: Vec<LabeledBox>,
}

impl TrainSample {
    /// Mirror image and boxes left to right.
    pub fn flipped(&self) -> TrainSample {
        let shape = self.image.shape().to_vec();
        let w = *shape.last().expect("image rank");
        let src = self.image.data();
        let mut out = vec![0.0; src.len()];
        for (row_out, row_in) in out.chunks_mut(w).zip(src.chunks(w)) {
            for (x, v) in row_out.iter_mut().enumerate() {
                *v = row_in[w - 1 - x];
            }
        }
        TrainSample {
            image: Tensor::new(shape, out).expect("same shape"),
            boxes: self
                .boxes
                .iter()
                .map(|b| LabeledBox {
                    bbox: BBox {
                        cx: 1.0 - b.bbox.cx,
                        ..b.bbox
                    },
                    class: b.class,
                })
                .collect(),
        }
    }
}

/// Objective settings shared by training and gradient checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub loss: LossConfig,
    /// Overlap above which an anchor becomes positive in the second matching phase.
    pub match_threshold: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            loss: LossConfig::default(),
            match_threshold: 0.5,
        }
    }
}

fn as_batch(image: &Tensor) -> Result<Tensor> {
    match image.shape() {
        &[c, h, w] => image.clone().reshape(vec![1, c, h, w]),
        &[1, _, _, _] => Ok(image.clone()),
        s => Err(Error::invalid(
            "objective",
            format!("expected a CxHxW image, got {s:?}"),
        )),
    }
}

pub fn assign(sample: &TrainSample, anchors: &AnchorSet, threshold: f64) -> Result<MatchAssignment> {
    let gts: Vec<BBox> = sample.boxes.iter().map(|b| b.bbox).collect();
    match_anchors(&gts, &anchors.boxes, threshold)
}

/// Unnormalized loss terms and parameter gradients for one image.
pub fn image_objective(
    net: &Network,
    anchors: &AnchorSet,
    sample: &TrainSample,
    objective: &Objective,
    with_grads: bool,
) -> Result<(ImageLossTerms, Option<Vec<Tensor>>)> {
    let classes = net.graph().num_classes() + 1;
    let acts = net.forward(&as_batch(&sample.image)?, with_grads)?;
    let heads = net.head_outputs(&acts);
    let flat = flatten_predictions(net.heads(), &heads, 0, classes)?;
    let assignment = assign(sample, anchors, objective.match_threshold)?;
    let terms = image_loss_terms(
        &flat.conf,
        &flat.loc,
        classes,
        &assignment,
        &sample.boxes,
        anchors,
        &objective.loss,
    )?;
    if !with_grads {
        return Ok((terms, None));
    }
    let head_grads = unflatten_gradients(net.heads(), &terms.grads.loc, &terms.grads.conf, classes)?;
    let grads = net.backward(&acts, &head_grads)?;
    Ok((terms, Some(grads)))
}

/// Loss over a batch and gradients of the normalized total. Images run in
/// parallel on the current rayon pool; gradients are summed in batch order.
pub fn batch_objective(
    net: &Network,
    anchors: &AnchorSet,
    batch: &[TrainSample],
    objective: &Objective,
) -> Result<(LossReport, Vec<Tensor>)> {
    let per_image: Vec<(ImageLossTerms, Option<Vec<Tensor>>)> = batch
        .par_iter()
        .map(|s| image_objective(net, anchors, s, objective, true))
        .collect::<Result<_>>()?;
    let mut total: Vec<Tensor> = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut terms = Vec::with_capacity(per_image.len());
    for (mut t, g) in per_image {
        for (acc, g) in total.iter_mut().zip(g.expect("requested")) {
            acc.add_assign(&g)?;
        }
        t.grads.conf = Vec::new();
        t.grads.loc = Vec::new();
        terms.push(t);
    }
    let (report, factor) = combine_terms(&terms, objective.loss.alpha);
    total.iter_mut().for_each(|g| g.scale(factor));
    Ok((report, total))
}

/// Loss over a batch without gradients.
pub fn batch_loss(
    net: &Network,
    anchors: &AnchorSet,
    batch: &[TrainSample],
    objective: &Objective,
) -> Result<LossReport> {
    let terms: Vec<ImageLossTerms> = batch
        .par_iter()
        .map(|s| image_objective(net, anchors, s, objective, false).map(|r| r.0))
        .collect::<Result<_>>()?;
    Ok(combine_terms(&terms, objective.loss.alpha).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_twice_is_identity() {
        let s = TrainSample {
            image: Tensor::from_fn(&[3, 4, 5], |i| i as f64),
            boxes: vec![LabeledBox {
                bbox: BBox::new(0.3, 0.4, 0.2, 0.1).unwrap(),
                class: 2,
            }],
        };
        let f = s.flipped();
        assert_eq!(f.image.data()[0], 4.0);
        assert!((f.boxes[0].bbox.cx - 0.7).abs() < 1e-15);
        let back = f.flipped();
        assert_eq!(back.image, s.image);
        assert!((back.boxes[0].bbox.cx - 0.3).abs() < 1e-15);
    }
}
