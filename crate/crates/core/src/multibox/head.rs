//! Maps per-tap head tensors to per-anchor rows and back.
//!
//! A tap with `k` boxes per cell emits `[N, 4k, H, W]` offsets and
//! `[N, k·classes, H, W]` scores. Anchor `(row, col, slot)` reads channels
//! `slot·4 .. slot·4+4` and `slot·classes .. (slot+1)·classes` at `(row, col)`.

use crate::error::{Error, Result};
use crate::netbuilder::NetworkGraph;
use crate::network::HeadLayout;
use crate::tensor::Tensor;

/// Flattened predictions for one image: `loc` is `A × 4`, `conf` is `A × classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatPredictions {
    pub loc: Vec<f64>,
    pub conf: Vec<f64>,
}

pub fn flatten_predictions(
    layout: &HeadLayout,
    heads: &[(&Tensor, &Tensor)],
    image: usize,
    classes: usize,
) -> Result<FlatPredictions> {
    if heads.len() != layout.taps.len() {
        return Err(Error::shape(
            "flatten_predictions",
            "taps",
            layout.taps.len(),
            heads.len(),
        ));
    }
    let na = layout.num_anchors();
    let mut loc = Vec::with_capacity(na * 4);
    let mut conf = Vec::with_capacity(na * classes);
    for (t, (lt, ct)) in layout.taps.iter().zip(heads) {
        let k = t.boxes_per_cell;
        let hw = t.height * t.width;
        let [ln, lc, lh, lw] = lt.dims4("flatten_predictions")?;
        let [cn, cc, ch, cw] = ct.dims4("flatten_predictions")?;
        if lc != 4 * k || cc != classes * k || (lh, lw, ch, cw) != (t.height, t.width, t.height, t.width) {
            return Err(Error::Mismatch(format!(
                "head shapes {:?}/{:?} do not fit k={k}, classes={classes}, {}x{}",
                lt.shape(),
                ct.shape(),
                t.height,
                t.width
            )));
        }
        if image >= ln || image >= cn {
            return Err(Error::invalid(
                "flatten_predictions",
                format!("image {image} out of batch"),
            ));
        }
        let ld = &lt.data()[image * lc * hw..(image + 1) * lc * hw];
        let cd = &ct.data()[image * cc * hw..(image + 1) * cc * hw];
        for p in 0..hw {
            for s in 0..k {
                for j in 0..4 {
                    loc.push(ld[(s * 4 + j) * hw + p]);
                }
                for j in 0..classes {
                    conf.push(cd[(s * classes + j) * hw + p]);
                }
            }
        }
    }
    Ok(FlatPredictions { loc, conf })
}

/// Inverse of [`flatten_predictions`] for a single image: returns
/// `[1, 4k, H, W]` / `[1, k·classes, H, W]` gradient tensors per tap.
pub fn unflatten_gradients(
    layout: &HeadLayout,
    grad_loc: &[f64],
    grad_conf: &[f64],
    classes: usize,
) -> Result<Vec<(Tensor, Tensor)>> {
    let na = layout.num_anchors();
    if grad_loc.len() != na * 4 || grad_conf.len() != na * classes {
        return Err(Error::shape("unflatten_gradients", "anchors", na, grad_loc.len() / 4));
    }
    let mut out = Vec::with_capacity(layout.taps.len());
    let mut anchor = 0;
    for t in &layout.taps {
        let k = t.boxes_per_cell;
        let hw = t.height * t.width;
        let mut gl = vec![0.0; 4 * k * hw];
        let mut gc = vec![0.0; classes * k * hw];
        for p in 0..hw {
            for s in 0..k {
                for j in 0..4 {
                    gl[(s * 4 + j) * hw + p] = grad_loc[anchor * 4 + j];
                }
                for j in 0..classes {
                    gc[(s * classes + j) * hw + p] = grad_conf[anchor * classes + j];
                }
                anchor += 1;
            }
        }
        out.push((
            Tensor::new(vec![1, 4 * k, t.height, t.width], gl)?,
            Tensor::new(vec![1, classes * k, t.height, t.width], gc)?,
        ));
    }
    Ok(out)
}

/// Per-tap head output element counts for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadCount {
    pub tap: String,
    pub map_height: usize,
    pub map_width: usize,
    pub boxes_per_cell: usize,
    pub loc_elements: usize,
    pub conf_elements: usize,
}

impl HeadCount {
    pub fn total(&self) -> usize {
        self.loc_elements + self.conf_elements
    }
}

/// Reads the head output sizes off the graph's shape inference.
pub fn head_output_counts(graph: &NetworkGraph) -> Result<Vec<HeadCount>> {
    let shapes = graph.shapes();
    graph
        .heads()?
        .into_iter()
        .map(|(t, l, c, k)| {
            Ok(HeadCount {
                tap: graph.layers()[t].id.clone(),
                map_height: shapes[t].height,
                map_width: shapes[t].width,
                boxes_per_cell: k,
                loc_elements: shapes[l].elements(),
                conf_elements: shapes[c].elements(),
            })
        })
        .collect()
}
