//! Default boxes tiled over the prediction taps.
//!
//! Boxes are ordered by `(tap, row, col, slot)`. Within a cell, slot 0 is
//! the ratio-1 box at the tap scale `s`, slot 1 the ratio-1 box at
//! `√(s·s_next)`, then ratios 2, 1/2, 3, 1/3 for as many slots as the tap has.

use std::fmt::Write as _;

use super::BBox;
use crate::error::{Error, Result};

/// Aspect ratios after the two ratio-1 slots.
pub const EXTRA_RATIOS: [f64; 4] = [2.0, 0.5, 3.0, 1.0 / 3.0];

#[derive(Clone, Debug, PartialEq)]
pub struct TapAnchorSpec {
    pub map_size: usize,
    pub scale: f64,
    /// Scale of the tap after this one (or 1 for the last tap).
    pub next_scale: f64,
    pub boxes_per_cell: usize,
}

impl TapAnchorSpec {
    /// `(aspect ratio, scale)` per slot.
    pub fn slots(&self) -> Vec<(f64, f64)> {
        let mut slots = vec![(1.0, self.scale), (1.0, (self.scale * self.next_scale).sqrt())];
        slots.extend(EXTRA_RATIOS.iter().map(|&r| (r, self.scale)));
        slots.truncate(self.boxes_per_cell);
        slots
    }
}

/// Linearly spaced scales between `min_scale` and `max_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorConfig {
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            min_scale: 0.2,
            max_scale: 0.9,
        }
    }
}

impl AnchorConfig {
    pub fn scales(&self, taps: usize) -> Vec<f64> {
        match taps {
            0 => Vec::new(),
            1 => vec![self.min_scale],
            m => (0..m)
                .map(|k| self.min_scale + (self.max_scale - self.min_scale) * k as f64 / (m - 1) as f64)
                .collect(),
        }
    }

    /// Pairs tap sizes with box counts and scales.
    pub fn tap_specs(&self, map_sizes: &[usize], boxes_per_cell: &[usize]) -> Result<Vec<TapAnchorSpec>> {
        if map_sizes.len() != boxes_per_cell.len() {
            return Err(Error::shape(
                "anchors",
                "box counts per tap",
                map_sizes.len(),
                boxes_per_cell.len(),
            ));
        }
        let scales = self.scales(map_sizes.len());
        Ok(map_sizes
            .iter()
            .zip(boxes_per_cell)
            .enumerate()
            .map(|(i, (&map_size, &k))| TapAnchorSpec {
                map_size,
                scale: scales[i],
                next_scale: scales.get(i + 1).copied().unwrap_or(1.0),
                boxes_per_cell: k,
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorMeta {
    pub tap: usize,
    pub row: usize,
    pub col: usize,
    pub slot: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub meta: Vec<AnchorMeta>,
    pub taps: Vec<TapAnchorSpec>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// `Σ_tap k · map²`.
    pub fn expected_len(taps: &[TapAnchorSpec]) -> usize {
        taps.iter().map(|t| t.boxes_per_cell * t.map_size * t.map_size).sum()
    }

    /// One box per line: `tap row col ratio cx cy w h`.
    pub fn dump(&self) -> String {
        let mut s = String::with_capacity(self.len() * 64);
        for (b, m) in self.boxes.iter().zip(&self.meta) {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {}",
                m.tap, m.row, m.col, m.ratio, b.cx, b.cy, b.w, b.h
            );
        }
        s
    }
}

pub fn generate_anchors(taps: &[TapAnchorSpec]) -> Result<AnchorSet> {
    let mut prev_scale = 0.0;
    for t in taps {
        if t.map_size == 0 || t.boxes_per_cell == 0 || t.boxes_per_cell > 2 + EXTRA_RATIOS.len() {
            return Err(Error::invalid("generate_anchors", format!("invalid tap {t:?}")));
        }
        if t.scale.partial_cmp(&prev_scale) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid("generate_anchors", "scales must increase across taps"));
        }
        prev_scale = t.scale;
    }
    let total = AnchorSet::expected_len(taps);
    let mut boxes = Vec::with_capacity(total);
    let mut meta = Vec::with_capacity(total);
    for (ti, t) in taps.iter().enumerate() {
        let slots = t.slots();
        let m = t.map_size as f64;
        for row in 0..t.map_size {
            for col in 0..t.map_size {
                let (cx, cy) = ((col as f64 + 0.5) / m, (row as f64 + 0.5) / m);
                for (slot, &(ratio, s)) in slots.iter().enumerate() {
                    let raw = BBox {
                        cx,
                        cy,
                        w: s * ratio.sqrt(),
                        h: s / ratio.sqrt(),
                    };
                    boxes.push(raw.clip_unit().expect("anchor centers lie inside the image"));
                    meta.push(AnchorMeta {
                        tap: ti,
                        row,
                        col,
                        slot,
                        ratio,
                    });
                }
            }
        }
    }
    Ok(AnchorSet {
        boxes,
        meta,
        taps: taps.to_vec(),
    })
}
