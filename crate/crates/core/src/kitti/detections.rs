//! Detection records and their text form, one per line:
//! `class confidence xmin ymin xmax ymax`.

use std::fmt::Write as _;

use super::{EvalClass, PixelBox};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub class: EvalClass,
    pub bbox: PixelBox,
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn new(class: EvalClass, bbox: PixelBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(
                "detection",
                format!("confidence {confidence} outside [0, 1]"),
            ));
        }
        Ok(DetectionRecord {
            class,
            bbox,
            confidence,
        })
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {:.6} {:.2} {:.2} {:.2} {:.2}",
            self.class, self.confidence, self.bbox.xmin, self.bbox.ymin, self.bbox.xmax, self.bbox.ymax
        )
    }
}

pub fn format_detections(dets: &[DetectionRecord]) -> String {
    let mut s = String::new();
    for d in dets {
        let _ = writeln!(s, "{}", d.to_line());
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: ln + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(perr(format!("expected 6 fields, found {}", f.len())));
        }
        let class: EvalClass = f[0].parse().map_err(|e: Error| perr(e.to_string()))?;
        let mut v = [0.0; 5];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = f[i + 1]
                .parse()
                .map_err(|_| perr(format!("`{}` is not a number", f[i + 1])))?;
        }
        let bbox = PixelBox::new(v[1], v[2], v[3], v[4]).map_err(|e| perr(e.to_string()))?;
        out.push(DetectionRecord::new(class, bbox, v[0]).map_err(|e| perr(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let d = DetectionRecord::new(
            EvalClass::Pedestrian,
            PixelBox::new(1.5, 2.0, 10.25, 40.0).unwrap(),
            0.5,
        )
        .unwrap();
        let back = parse_detections(&format_detections(std::slice::from_ref(&d))).unwrap();
        assert_eq!(back, vec![d]);
    }

    #[test]
    fn bad_line() {
        assert!(matches!(
            parse_detections("Car 0.5 1 2 3"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_detections("Car 1.5 0 0 3 3").is_err());
    }
}
