use super::{resize_bilinear, DetectionRecord, Detector, EvalClass, PixelBox};
use crate::error::{Error, Result};
use crate::multibox::{
    anchors_for_graph, detect, flatten_predictions, AnchorConfig, AnchorSet, DetectConfig, Detection,
};
use crate::network::Network;
use crate::tensor::Tensor;

/// Wraps a network as a [`Detector`]: images are rescaled to the network
/// input, and boxes are mapped back to the original pixel grid.
pub struct NetworkDetector {
    network: Network,
    anchors: AnchorSet,
    config: DetectConfig,
}

impl NetworkDetector {
    pub fn new(network: Network, anchor_config: &AnchorConfig, config: DetectConfig) -> Result<Self> {
        let anchors = anchors_for_graph(network.graph(), anchor_config)?;
        Ok(NetworkDetector {
            network,
            anchors,
            config,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    /// Detections in unit coordinates for a `3×S×S` image already at the input size.
    pub fn detect_normalized(&self, image: &Tensor) -> Result<Vec<Detection>> {
        let s = self.network.graph().input_size();
        if image.shape() != [3, s, s] {
            return Err(Error::invalid(
                "detect",
                format!("expected a 3x{s}x{s} image, got {:?}", image.shape()),
            ));
        }
        let batch = image.clone().reshape(vec![1, 3, s, s])?;
        let acts = self.network.forward(&batch, false)?;
        let heads = self.network.head_outputs(&acts);
        let classes = self.network.graph().num_classes() + 1;
        let flat = flatten_predictions(self.network.heads(), &heads, 0, classes)?;
        detect(&flat.loc, &flat.conf, &self.anchors, classes, &self.config)
    }
}

impl Detector for NetworkDetector {
    fn detect(&self, image: &Tensor) -> Result<Vec<DetectionRecord>> {
        let (h, w) = match image.shape() {
            &[3, h, w] => (h as f64, w as f64),
            s => return Err(Error::invalid("detect", format!("expected a 3xHxW image, got {s:?}"))),
        };
        let s = self.network.graph().input_size();
        let resized = resize_bilinear(image, s, s)?;
        let mut out = Vec::new();
        for d in self.detect_normalized(&resized)? {
            let Some(class) = EvalClass::from_index(d.class) else {
                continue;
            };
            let [x0, y0, x1, y1] = d.bbox.corners();
            if let Ok(bbox) = PixelBox::new(x0 * w, y0 * h, x1 * w, y1 * h) {
                out.push(DetectionRecord {
                    class,
                    bbox,
                    confidence: d.score.clamp(0.0, 1.0),
                });
            }
        }
        Ok(out)
    }
}
