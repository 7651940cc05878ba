use super::BBox;
use crate::error::{Error, Result};

/// Scales applied to center offsets and log size ratios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variances {
    pub center: f64,
    pub size: f64,
}

impl Default for Variances {
    fn default() -> Self {
        Variances { center: 0.1, size: 0.2 }
    }
}

/// Offsets of `gt` relative to `anchor`:
/// `(Δcx/(w_a·v₁), Δcy/(h_a·v₁), ln(w_g/w_a)/v₂, ln(h_g/h_a)/v₂)`.
pub fn encode(gt: &BBox, anchor: &BBox, v: Variances) -> Result<[f64; 4]> {
    if !(gt.w > 0.0 && gt.h > 0.0 && anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(Error::invalid("encode", "box sizes must be positive"));
    }
    Ok([
        (gt.cx - anchor.cx) / (anchor.w * v.center),
        (gt.cy - anchor.cy) / (anchor.h * v.center),
        (gt.w / anchor.w).ln() / v.size,
        (gt.h / anchor.h).ln() / v.size,
    ])
}

pub fn decode(offsets: &[f64; 4], anchor: &BBox, v: Variances) -> Result<BBox> {
    if !(anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(Error::invalid("decode", "anchor size must be positive"));
    }
    BBox::new(
        anchor.cx + offsets[0] * v.center * anchor.w,
        anchor.cy + offsets[1] * v.center * anchor.h,
        anchor.w * (offsets[2] * v.size).exp(),
        anchor.h * (offsets[3] * v.size).exp(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_boxes_encode_to_zero() {
        let a = BBox::new(0.3, 0.6, 0.2, 0.1).unwrap();
        assert_eq!(encode(&a, &a, Variances::default()).unwrap(), [0.0; 4]);
    }

    #[test]
    fn hand_computed_center_offset() {
        let anchor = BBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let gt = BBox::new(0.52, 0.5, 0.2, 0.2).unwrap();
        let t = encode(&gt, &anchor, Variances::default()).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-12);
        assert_eq!(&t[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn decode_inverts_encode() {
        let anchor = BBox::new(0.4, 0.45, 0.3, 0.15).unwrap();
        let gt = BBox::new(0.47, 0.41, 0.12, 0.33).unwrap();
        let v = Variances::default();
        let back = decode(&encode(&gt, &anchor, v).unwrap(), &anchor, v).unwrap();
        for (a, b) in [(back.cx, gt.cx), (back.cy, gt.cy), (back.w, gt.w), (back.h, gt.h)] {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
