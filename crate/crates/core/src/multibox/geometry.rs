use crate::error::{Error, Result};

/// An axis-aligned box in normalized image coordinates, center form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { cx, cy, w, h };
        if !(w > 0.0 && h > 0.0) || ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("box", format!("invalid box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_corners(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin < xmax && ymin < ymax) {
            return Err(Error::invalid(
                "box",
                format!("degenerate corners ({xmin}, {ymin}, {xmax}, {ymax})"),
            ));
        }
        BBox::new((xmin + xmax) / 2.0, (ymin + ymax) / 2.0, xmax - xmin, ymax - ymin)
    }

    /// `[xmin, ymin, xmax, ymax]`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Clips to the unit square; `None` if nothing is left.
    pub fn clip_unit(&self) -> Option<BBox> {
        let [x0, y0, x1, y1] = self.corners();
        BBox::from_corners(x0.max(0.0), y0.max(0.0), x1.min(1.0), y1.min(1.0)).ok()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou_corners(&self.corners(), &other.corners())
    }
}

/// Jaccard overlap (intersection over union) of two corner-form boxes.
pub fn iou_corners(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// A ground-truth box with a 0-based object class (background excluded).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class: usize,
}
