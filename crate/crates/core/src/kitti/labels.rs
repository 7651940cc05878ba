//! KITTI object label files: one object per line,
//! `type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::multibox::iou_corners;

/// The three evaluated categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl EvalClass {
    pub const ALL: [EvalClass; 3] = [EvalClass::Car, EvalClass::Pedestrian, EvalClass::Cyclist];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn from_index(i: usize) -> Option<EvalClass> {
        Self::ALL.get(i).copied()
    }

    pub fn name(&self) -> &'static str {
        match self {
            EvalClass::Car => "Car",
            EvalClass::Pedestrian => "Pedestrian",
            EvalClass::Cyclist => "Cyclist",
        }
    }
}

impl fmt::Display for EvalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Car" => Ok(EvalClass::Car),
            "Pedestrian" => Ok(EvalClass::Pedestrian),
            "Cyclist" => Ok(EvalClass::Cyclist),
            _ => Err(Error::invalid("class", format!("unknown class `{s}`"))),
        }
    }
}

/// Ordered so that a harder level admits every easier one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    /// Too small, occluded or truncated for any level, or a DontCare region.
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    /// `(min box height px, max occlusion, max truncation)`.
    pub fn limits(&self) -> Option<(f64, u8, f64)> {
        match self {
            Difficulty::Easy => Some((40.0, 0, 0.15)),
            Difficulty::Moderate => Some((25.0, 1, 0.30)),
            Difficulty::Hard => Some((25.0, 2, 0.50)),
            Difficulty::Ignored => None,
        }
    }

    /// The easiest level whose limits the object satisfies.
    pub fn classify(height: f64, occlusion: u8, truncation: f64) -> Difficulty {
        Self::LEVELS
            .into_iter()
            .find(|d| {
                let (h, o, t) = d.limits().expect("level");
                height >= h && occlusion <= o && truncation <= t
            })
            .unwrap_or(Difficulty::Ignored)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "moderate" => Ok(Difficulty::Moderate),
            "hard" => Ok(Difficulty::Hard),
            _ => Err(Error::invalid("difficulty", format!("unknown difficulty `{s}`"))),
        }
    }
}

/// Pixel-space corner box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl PixelBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = PixelBox { xmin, ymin, xmax, ymax };
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) || xmin >= xmax || ymin >= ymax {
            return Err(Error::invalid("box", format!("invalid pixel box {b:?}")));
        }
        Ok(b)
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn iou(&self, other: &PixelBox) -> f64 {
        iou_corners(&self.corners(), &other.corners())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Evaluated category, or `None` for DontCare and unevaluated types.
    pub class: Option<EvalClass>,
    /// The raw KITTI type string.
    pub label: String,
    pub bbox: PixelBox,
    pub truncation: f64,
    pub occlusion: u8,
    pub difficulty: Difficulty,
}

impl GroundTruth {
    pub fn new(class: EvalClass, bbox: PixelBox, truncation: f64, occlusion: u8) -> Self {
        GroundTruth {
            class: Some(class),
            label: class.name().to_string(),
            bbox,
            truncation,
            occlusion,
            difficulty: Difficulty::classify(bbox.height(), occlusion, truncation),
        }
    }

    pub fn is_dont_care(&self) -> bool {
        self.label == "DontCare"
    }

    /// A KITTI label line with zeroed 3-D fields.
    pub fn to_kitti_line(&self) -> String {
        format!(
            "{} {:.2} {} 0.00 {:.2} {:.2} {:.2} {:.2} 0.00 0.00 0.00 0.00 0.00 0.00 0.00",
            self.label, self.truncation, self.occlusion, self.bbox.xmin, self.bbox.ymin, self.bbox.xmax, self.bbox.ymax
        )
    }
}

/// Maps a KITTI type to an evaluated class. Vans merge into Car.
fn eval_class(label: &str) -> Option<EvalClass> {
    match label {
        "Car" | "Van" => Some(EvalClass::Car),
        "Pedestrian" => Some(EvalClass::Pedestrian),
        "Cyclist" => Some(EvalClass::Cyclist),
        _ => None,
    }
}

pub fn parse_kitti_labels(text: &str) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: ln + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 15 && f.len() != 16 {
            return Err(perr(format!("expected 15 fields, found {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|_| perr(format!("field {} (`{}`) is not a number", i + 1, f[i])))
        };
        for i in 1..f.len() {
            num(i)?;
        }
        let label = f[0].to_string();
        let truncation = num(1)?;
        let occ = num(2)?;
        let bbox = PixelBox::new(num(4)?, num(5)?, num(6)?, num(7)?).map_err(|e| perr(e.to_string()))?;
        let dont_care = label == "DontCare";
        let occlusion = if dont_care {
            // DontCare rows carry -1 placeholders
            3
        } else {
            if !(0.0..=3.0).contains(&occ) || occ.fract() != 0.0 {
                return Err(perr(format!("occlusion {occ} not in 0..=3")));
            }
            occ as u8
        };
        let class = eval_class(&label);
        let difficulty = if dont_care || class.is_none() {
            Difficulty::Ignored
        } else {
            Difficulty::classify(bbox.height(), occlusion, truncation)
        };
        out.push(GroundTruth {
            class,
            label,
            bbox,
            truncation,
            occlusion,
            difficulty,
        });
    }
    Ok(out)
}
