//! Pseudo ground truth from averaged aligned part maps.
//!
//! The labeller repeatedly takes the global maximum of the averaged tensor,
//! assigns its channel to that cell and retires the cell. Each
//! non-background channel may claim at most `max_per_channel` cells; the last
//! channel is background and is never capped, so every cell ends up labelled.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// Per-cell channel labels, row-major `height × width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoGT {
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl PseudoGT {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    /// Number of cells carrying each label, for `channels` labels.
    pub fn counts(&self, channels: usize) -> Vec<usize> {
        let mut out = vec![0; channels];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }
}

/// Per-cell mean over the maps whose mask is set at that cell.
///
/// Cells where no mask is set take the first map's value.
pub fn average_aligned<T: Real>(maps: &[&FeatureMap<T>], masks: &[&[bool]]) -> Result<FeatureMap<T>> {
    let Some(first) = maps.first() else {
        return Err(Error::Insufficient("no maps to average".into()));
    };
    if masks.len() != maps.len() {
        return Err(Error::Shape(format!(
            "{} masks for {} maps",
            masks.len(),
            maps.len()
        )));
    }
    let (h, w, c) = first.shape();
    for (m, mask) in maps.iter().zip(masks) {
        if m.shape() != (h, w, c) {
            return Err(Error::Shape("maps to average differ in shape".into()));
        }
        if mask.len() != h * w {
            return Err(Error::Shape("mask does not match the map grid".into()));
        }
    }
    let mut data = vec![T::zero(); h * w * c];
    let mut acc = vec![0.0f64; c];
    for cell in 0..h * w {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut count = 0usize;
        for (m, mask) in maps.iter().zip(masks) {
            if mask[cell] {
                count += 1;
                for (a, v) in acc.iter_mut().zip(m.cell_at(cell)) {
                    *a += v.as_f64();
                }
            }
        }
        let out = &mut data[cell * c..(cell + 1) * c];
        if count == 0 {
            out.copy_from_slice(first.cell_at(cell));
        } else {
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = T::from_f64(*a / count as f64);
            }
        }
    }
    FeatureMap::new(h, w, c, data)
}

/// Labels every cell by iterated global argmax with per-channel caps.
///
/// Ties go to the smallest `(row, col, channel)` linear index. With
/// `suppress_radius > 0`, picking a non-background channel also retires that
/// channel within the surrounding `(2r + 1) × (2r + 1)` square.
pub fn generate_pseudo_gt<T: Real>(
    mean_map: &FeatureMap<T>,
    max_per_channel: usize,
    suppress_radius: usize,
) -> Result<PseudoGT> {
    let (h, w, c) = mean_map.shape();
    validate_labeller_input(mean_map, max_per_channel)?;
    let cells = h * w;
    let background = c - 1;
    let values: Vec<f64> = mean_map.data().iter().map(|v| v.as_f64()).collect();

    // Each channel's cells in pick order; a cursor skips retired entries.
    let order: Vec<Vec<u32>> = (0..c)
        .map(|ch| {
            let mut idx: Vec<u32> = (0..cells as u32).collect();
            idx.sort_by(|&a, &b| {
                let va = values[a as usize * c + ch];
                let vb = values[b as usize * c + ch];
                vb.partial_cmp(&va).unwrap_or(Ordering::Equal).then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let mut cursor = vec![0usize; c];
    let mut labeled = vec![false; cells];
    let mut suppressed = vec![false; if suppress_radius > 0 { cells * c } else { 0 }];
    let mut dead = vec![false; c];
    let mut count = vec![0usize; c];
    let mut labels = vec![background; cells];

    for _ in 0..cells {
        let mut best: Option<(f64, usize, usize)> = None;
        for ch in 0..c {
            if dead[ch] {
                continue;
            }
            let list = &order[ch];
            let cur = &mut cursor[ch];
            while *cur < cells {
                let cell = list[*cur] as usize;
                if labeled[cell] || (!suppressed.is_empty() && suppressed[cell * c + ch]) {
                    *cur += 1;
                } else {
                    break;
                }
            }
            if *cur == cells {
                continue;
            }
            let cell = list[*cur] as usize;
            let v = values[cell * c + ch];
            let better = match best {
                None => true,
                Some((bv, bcell, bch)) => v > bv || (v == bv && cell * c + ch < bcell * c + bch),
            };
            if better {
                best = Some((v, cell, ch));
            }
        }
        let (_, cell, ch) = best.expect("background keeps a candidate while cells remain");
        labels[cell] = ch;
        labeled[cell] = true;
        if suppress_radius > 0 && ch != background {
            let (row, col) = (cell / w, cell % w);
            for r in row.saturating_sub(suppress_radius)..=(row + suppress_radius).min(h - 1) {
                for q in col.saturating_sub(suppress_radius)..=(col + suppress_radius).min(w - 1) {
                    suppressed[(r * w + q) * c + ch] = true;
                }
            }
        }
        count[ch] += 1;
        if count[ch] == max_per_channel && ch < background {
            dead[ch] = true;
        }
    }
    PseudoGT::new(h, w, labels)
}

pub(crate) fn validate_labeller_input<T: Real>(mean_map: &FeatureMap<T>, max_per_channel: usize) -> Result<()> {
    if mean_map.channels() < 2 {
        return Err(Error::InvalidArgument(
            "pseudo labels need at least one part channel plus background".into(),
        ));
    }
    if max_per_channel == 0 {
        return Err(Error::InvalidArgument("max_per_channel must be positive".into()));
    }
    if mean_map.data().iter().any(|v| *v < T::zero()) {
        return Err(Error::InvalidArgument(
            "averaged map must be non-negative".into(),
        ));
    }
    Ok(())
}
