//! Reproducible three-class scenes: rectangles (Car), ellipses
//! (Pedestrian) and triangles (Cyclist) over a textured background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainSample;
use crate::error::{Error, Result};
use crate::kitti::{Difficulty, EvalClass, GroundTruth, PixelBox};
use crate::multibox::{BBox, LabeledBox};
use crate::tensor::Tensor;

pub const MIN_SCENE_SIZE: usize = 75;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub class: EvalClass,
    pub bbox: PixelBox,
    /// 0 visible, 1 partly covered, 2 largely covered by later objects.
    pub occlusion: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// `3×S×S`, values in `[0, 1]`.
    pub image: Tensor,
    pub objects: Vec<SceneObject>,
}

impl SyntheticScene {
    pub fn size(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.objects
            .iter()
            .map(|o| GroundTruth::new(o.class, o.bbox, 0.0, o.occlusion))
            .collect()
    }

    pub fn to_sample(&self) -> TrainSample {
        let s = self.size() as f64;
        let boxes = self
            .objects
            .iter()
            .map(|o| LabeledBox {
                bbox: BBox::from_corners(o.bbox.xmin / s, o.bbox.ymin / s, o.bbox.xmax / s, o.bbox.ymax / s)
                    .expect("objects have positive extent"),
                class: o.class.index(),
            })
            .collect();
        TrainSample {
            image: self.image.clone(),
            boxes,
        }
    }
}

/// Base colour per class; each object is jittered around it.
fn class_color(class: EvalClass) -> [f64; 3] {
    match class {
        EvalClass::Car => [0.85, 0.25, 0.2],
        EvalClass::Pedestrian => [0.25, 0.8, 0.3],
        EvalClass::Cyclist => [0.25, 0.35, 0.9],
    }
}

/// Width over height range per class.
fn aspect_range(class: EvalClass) -> (f64, f64) {
    match class {
        EvalClass::Car => (1.3, 2.0),
        EvalClass::Pedestrian => (0.4, 0.7),
        EvalClass::Cyclist => (0.8, 1.25),
    }
}

fn inside(class: EvalClass, b: &PixelBox, x: f64, y: f64) -> bool {
    let u = (x - b.xmin) / (b.xmax - b.xmin);
    let v = (y - b.ymin) / (b.ymax - b.ymin);
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return false;
    }
    match class {
        EvalClass::Car => true,
        EvalClass::Pedestrian => (2.0 * u - 1.0).powi(2) + (2.0 * v - 1.0).powi(2) <= 1.0,
        // apex at the top centre
        EvalClass::Cyclist => (2.0 * u - 1.0).abs() <= v,
    }
}

fn occlusion_level(covered: f64) -> u8 {
    if covered < 0.1 {
        0
    } else if covered < 0.4 {
        1
    } else {
        2
    }
}

fn intersection(a: &PixelBox, b: &PixelBox) -> f64 {
    let w = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let h = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

fn make_scene(rng: &mut ChaCha8Rng, size: usize, next_class: &mut usize) -> SyntheticScene {
    let s = size as f64;
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    // smooth two-tone gradient plus grain
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.6));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.15..0.15));
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let g = tilt[c] * ((x + y) as f64 / (2.0 * s) - 0.5);
                data[c * plane + y * size + x] = base[c] + g + rng.gen_range(-0.04..0.04);
            }
        }
    }

    let count = rng.gen_range(1..=4);
    let (min_side, max_side) = (12.0 * s / 150.0, 75.0 * s / 150.0);
    let mut placed: Vec<(EvalClass, PixelBox)> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = EvalClass::from_index(*next_class % 3).expect("three classes");
        let (lo, hi) = aspect_range(class);
        let mut chosen = None;
        for _ in 0..30 {
            let long = rng.gen_range(min_side..=max_side);
            let aspect = rng.gen_range(lo..=hi);
            let (w, h) = if aspect >= 1.0 {
                (long, (long / aspect).max(min_side * 0.5))
            } else {
                ((long * aspect).max(min_side * 0.5), long)
            };
            let x0 = rng.gen_range(0.0..=(s - w));
            let y0 = rng.gen_range(0.0..=(s - h));
            let b = PixelBox::new(x0.round(), y0.round(), (x0 + w).round().min(s), (y0 + h).round().min(s));
            let Ok(b) = b else { continue };
            if placed.iter().all(|(_, p)| p.iou(&b) <= 0.3) {
                chosen = Some(b);
                break;
            }
        }
        let Some(b) = chosen else { continue };
        *next_class += 1;
        placed.push((class, b));
    }

    for (class, b) in &placed {
        let base = class_color(*class);
        let color: [f64; 3] = std::array::from_fn(|c| (base[c] + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0));
        for y in b.ymin as usize..b.ymax as usize {
            for x in b.xmin as usize..b.xmax as usize {
                if inside(*class, b, x as f64 + 0.5, y as f64 + 0.5) {
                    for (c, &v) in color.iter().enumerate() {
                        data[c * plane + y * size + x] = v + rng.gen_range(-0.03..0.03);
                    }
                }
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let objects = placed
        .iter()
        .enumerate()
        .map(|(i, (class, b))| {
            let area = (b.xmax - b.xmin) * (b.ymax - b.ymin);
            let covered: f64 = placed[i + 1..]
                .iter()
                .map(|(_, later)| intersection(b, later))
                .sum::<f64>()
                / area;
            SceneObject {
                class: *class,
                bbox: *b,
                occlusion: occlusion_level(covered.min(1.0)),
            }
        })
        .collect();
    SyntheticScene {
        image: Tensor::new(vec![3, size, size], data).expect("sized buffer"),
        objects,
    }
}

/// `n` scenes of `size × size` pixels; classes are assigned round-robin
/// across the whole set.
pub fn make_synthetic_dataset(seed: u64, n: usize, size: usize) -> Result<Vec<SyntheticScene>> {
    if size < MIN_SCENE_SIZE {
        return Err(Error::invalid(
            "synthetic",
            format!("scene size {size} below the minimum {MIN_SCENE_SIZE}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_class = 0;
    Ok((0..n).map(|_| make_scene(&mut rng, size, &mut next_class)).collect())
}

/// Share of objects counted at `level` (for reporting dataset composition).
pub fn difficulty_share(scenes: &[SyntheticScene], level: Difficulty) -> f64 {
    let all: Vec<GroundTruth> = scenes.iter().flat_map(|s| s.ground_truth()).collect();
    if all.is_empty() {
        return 0.0;
    }
    all.iter().filter(|g| g.difficulty <= level).count() as f64 / all.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let a = make_synthetic_dataset(7, 5, 96).unwrap();
        let b = make_synthetic_dataset(7, 5, 96).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic_dataset(8, 5, 96).unwrap());
    }

    #[test]
    fn empty_and_too_small() {
        assert!(make_synthetic_dataset(1, 0, 150).unwrap().is_empty());
        assert!(make_synthetic_dataset(1, 1, 74).is_err());
    }

    #[test]
    fn balanced_classes() {
        let d = make_synthetic_dataset(3, 60, 150).unwrap();
        let mut counts = [0usize; 3];
        for o in d.iter().flat_map(|s| &s.objects) {
            counts[o.class.index()] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn sample_boxes_normalized() {
        let d = make_synthetic_dataset(4, 10, 150).unwrap();
        for s in &d {
            for b in s.to_sample().boxes {
                let [x0, y0, x1, y1] = b.bbox.corners();
                assert!(x0 >= -1e-12 && y0 >= -1e-12 && x1 <= 1.0 + 1e-12 && y1 <= 1.0 + 1e-12);
            }
        }
    }
}
