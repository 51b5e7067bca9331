//! Synthetic scenes with planted parts, and slow reference oracles.
//!
//! A canonical template lives on a `grid × grid` canvas. Its backbone
//! vectors are a random texture (a lattice of sparse codes over the texture
//! channels, blended bilinearly), except near the planted parts, where they
//! turn into one-hot part prototypes. Each image resamples the template under a random
//! similarity transform, plants a few decoys and adds bounded noise.
//!
//! A decoy is a part prototype tagged with a shared marker channel. It looks
//! like the part to anything clustered on raw vectors, but sits at a random
//! place in every image, so only training on aligned evidence learns to
//! reject it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alignment::{AffineTransform, Match, Point};
use crate::detect::BBox;
use crate::math::{exp, floor, norm, sin_cos};
use crate::pseudo_gt::{validate_labeller_input, PseudoGT};
use crate::tensor::{FeatureMap, Real};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_images: usize,
    pub n_parts: usize,
    pub channels: usize,
    pub grid: usize,
    /// Upper bound on the L2 norm of the per-cell noise vector.
    pub noise: f64,
    pub seed: u64,
    /// Pixels per grid cell.
    pub stride: f64,
    /// Side of the ground-truth part boxes, in pixels.
    pub box_side: f64,
    pub max_rotation_deg: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    /// Largest shift along each axis, in cells.
    pub max_translation: f64,
    /// Decoy cells per image.
    pub decoys: usize,
    /// Weight of the marker channel inside a decoy, relative to the unit
    /// part prototype.
    pub decoy_marker: f64,
    /// Each image draws every part's visibility uniformly from
    /// `[min_part_strength, 1]`; weak parts blend into the texture.
    pub min_part_strength: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 40,
            n_parts: 5,
            channels: 64,
            grid: 14,
            noise: 0.05,
            seed: 0,
            stride: 16.0,
            box_side: 100.0,
            max_rotation_deg: 10.0,
            min_scale: 0.9,
            max_scale: 1.1,
            max_translation: 2.0,
            decoys: 4,
            decoy_marker: 0.35,
            min_part_strength: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_images == 0 || self.n_parts == 0 {
            return bad("need at least one image and one part");
        }
        if self.grid < 8 {
            return bad("grid must be at least 8 cells");
        }
        if self.n_parts + 1 + 2 * TEXTURE_DIMS > self.channels {
            return bad("channels must exceed n_parts by at least 7");
        }
        if !(0.0..=0.1).contains(&self.noise) {
            return bad("noise must lie in [0, 0.1]");
        }
        if !(self.stride > 0.0 && self.box_side > 0.0) {
            return bad("stride and box side must be positive");
        }
        if !(self.min_scale > 0.0 && self.min_scale <= self.max_scale) {
            return bad("scale range must be positive and ordered");
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_translation >= 0.0 && self.decoy_marker >= 0.0) {
            return bad("transform ranges must be non-negative");
        }
        if !(self.min_part_strength > 0.0 && self.min_part_strength <= 1.0) {
            return bad("min_part_strength must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn image_size(&self) -> f64 {
        self.grid as f64 * self.stride
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePart {
    pub part: usize,
    /// Continuous `(row, col)` grid coordinate.
    pub cell: Point,
}

impl TruePart {
    /// `(x, y)` pixel center.
    pub fn pixel(&self, stride: f64) -> (f64, f64) {
        ((self.cell.1 + 0.5) * stride, (self.cell.0 + 0.5) * stride)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image_id: String,
    pub backbone: FeatureMap<f32>,
    pub true_parts: Vec<TruePart>,
    /// Template grid to image grid.
    pub transform: AffineTransform,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn part_box(&self, part: usize, cfg: &SynthConfig) -> Option<BBox> {
        self.true_parts.iter().find(|p| p.part == part).map(|p| {
            let (x, y) = p.pixel(cfg.stride);
            BBox::centered(x, y, cfg.box_side)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub template_parts: Vec<Point>,
    pub scenes: Vec<SyntheticScene>,
}

pub fn part_name(part: usize) -> String {
    format!("part{part}")
}

/// Texture field plus part prototypes, evaluated in template coordinates.
struct Template {
    n_parts: usize,
    channels: usize,
    /// Lattice of sparse texture codes covering the canvas plus a margin.
    codes: Vec<[usize; TEXTURE_DIMS]>,
    side: usize,
    parts: Vec<Point>,
}

/// Channels active in one texture code; two random codes rarely share
/// enough of them to pass a cosine matching threshold.
const TEXTURE_DIMS: usize = 3;
const PART_SIGMA: f64 = 1.0;
/// Lattice points beyond each canvas edge, enough for the largest warps.
const TEXTURE_MARGIN: usize = 8;

impl Template {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        // one channel per part, one decoy marker, the rest texture
        let first = cfg.n_parts + 1;
        let free = cfg.channels - first;
        let side = cfg.grid + 2 * TEXTURE_MARGIN;
        let codes = (0..side * side)
            .map(|_| {
                let picked = rand::seq::index::sample(rng, free, TEXTURE_DIMS);
                let mut code = [0; TEXTURE_DIMS];
                for (c, i) in code.iter_mut().zip(picked) {
                    *c = first + i;
                }
                code
            })
            .collect();
        Ok(Self {
            n_parts: cfg.n_parts,
            channels: cfg.channels,
            codes,
            side,
            parts: place_parts(cfg, rng)?,
        })
    }

    /// Bilinear blend of the four surrounding lattice codes.
    fn texture(&self, u: Point, out: &mut [f64]) {
        let m = TEXTURE_MARGIN as f64;
        let top = self.side as f64 - 1.0;
        let r = (u.0 + m).clamp(0.0, top);
        let c = (u.1 + m).clamp(0.0, top);
        let (r0, c0) = (floor(r).min(top - 1.0), floor(c).min(top - 1.0));
        let (fr, fc) = (r - r0, c - c0);
        let (r0, c0) = (r0 as usize, c0 as usize);
        for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
            for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                for &dim in &self.codes[(r0 + dr) * self.side + c0 + dc] {
                    out[dim] += wr * wc;
                }
            }
        }
        normalize(out);
    }

    /// Clean unit vector at template coordinate `u`, with part `k` shown at
    /// visibility `strength[k]`.
    fn vector(&self, u: Point, strength: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.channels];
        self.texture(u, &mut v);
        let s2 = 2.0 * PART_SIGMA * PART_SIGMA;
        let mut bump = 0.0f64;
        let mut part = 0;
        for (k, p) in self.parts.iter().enumerate() {
            let d2 = (u.0 - p.0) * (u.0 - p.0) + (u.1 - p.1) * (u.1 - p.1);
            let b = strength[k] * exp(-d2 / s2);
            if b > bump {
                bump = b;
                part = k;
            }
        }
        if bump > 1e-3 {
            v.iter_mut().for_each(|x| *x *= 1.0 - bump);
            v[part] += bump;
            normalize(&mut v);
        }
        debug_assert!(part < self.n_parts);
        v
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Part cells in the central region, at least three cells apart.
fn place_parts(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Point>> {
    let margin = (cfg.grid / 4).clamp(1, 4);
    let (lo, hi) = (margin, cfg.grid - 1 - margin);
    let mut min_sep = 3usize;
    loop {
        for _ in 0..1000 {
            let mut parts: Vec<(usize, usize)> = Vec::with_capacity(cfg.n_parts);
            for _ in 0..50 * cfg.n_parts {
                if parts.len() == cfg.n_parts {
                    break;
                }
                let c = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
                if parts.iter().all(|p| p.0.abs_diff(c.0).max(p.1.abs_diff(c.1)) >= min_sep) {
                    parts.push(c);
                }
            }
            if parts.len() == cfg.n_parts {
                return Ok(parts.into_iter().map(|(r, c)| (r as f64, c as f64)).collect());
            }
        }
        if min_sep == 1 {
            return Err(Error::InvalidArgument(format!(
                "cannot place {} parts on a {}-cell grid",
                cfg.n_parts, cfg.grid
            )));
        }
        min_sep -= 1;
    }
}

fn random_transform(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<AffineTransform> {
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let angle = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg).to_radians();
    let scale = uniform(rng, cfg.min_scale, cfg.max_scale);
    let tr = uniform(rng, -cfg.max_translation, cfg.max_translation);
    let tc = uniform(rng, -cfg.max_translation, cfg.max_translation);
    let (s, c) = sin_cos(angle);
    let center = 0.5 * (cfg.grid as f64 - 1.0);
    let (a, b, cc, d) = (scale * c, -scale * s, scale * s, scale * c);
    // x = center + A (u - center) + t
    AffineTransform::from_rows([
        [a, b, center - a * center - b * center + tr],
        [cc, d, center - cc * center - d * center + tc],
    ])
}

/// Builds the dataset; image `i` depends only on `(seed, i)`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX]));
    let template = Template::new(cfg, &mut rng)?;
    let scenes = (0..cfg.n_images)
        .map(|i| generate_scene(cfg, &template, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        config: cfg.clone(),
        template_parts: template.parts.clone(),
        scenes,
    })
}

fn generate_scene(cfg: &SynthConfig, template: &Template, index: usize) -> Result<SyntheticScene> {
    let seed = derive_seed(cfg.seed, &[index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transform = random_transform(cfg, &mut rng)?;
    let inverse = transform.inverse()?;
    let strength: Vec<f64> = (0..cfg.n_parts)
        .map(|_| {
            if cfg.min_part_strength < 1.0 {
                rng.random_range(cfg.min_part_strength..=1.0)
            } else {
                1.0
            }
        })
        .collect();
    let g = cfg.grid;
    let true_parts: Vec<TruePart> = template
        .parts
        .iter()
        .enumerate()
        .map(|(part, p)| TruePart {
            part,
            cell: transform.apply(*p),
        })
        .collect();

    let mut data = Vec::with_capacity(g * g * cfg.channels);
    let mut clean: Vec<Vec<f64>> = (0..g * g)
        .map(|cell| inverse.apply(((cell / g) as f64, (cell % g) as f64)))
        .map(|u| template.vector(u, &strength))
        .collect();

    // decoys keep two cells away from every planted part
    let mut placed = 0;
    let mut tries = 0;
    let mut used = vec![false; g * g];
    while placed < cfg.decoys && tries < 100 * (cfg.decoys + 1) {
        tries += 1;
        let cell = rng.random_range(0..g * g);
        let (r, c) = ((cell / g) as f64, (cell % g) as f64);
        let near_part = true_parts
            .iter()
            .any(|p| (p.cell.0 - r).abs().max((p.cell.1 - c).abs()) < 2.5);
        if near_part || used[cell] {
            continue;
        }
        used[cell] = true;
        let part = rng.random_range(0..cfg.n_parts);
        let v = &mut clean[cell];
        v.iter_mut().for_each(|x| *x = 0.0);
        v[part] = 1.0;
        v[cfg.n_parts] = cfg.decoy_marker;
        normalize(v);
        placed += 1;
    }

    let mut noise = vec![0.0; cfg.channels];
    for v in clean {
        if cfg.noise > 0.0 {
            for n in noise.iter_mut() {
                *n = rng.sample(StandardNormal);
            }
            let len = norm(&noise);
            let target = cfg.noise * rng.random::<f64>();
            data.extend(v.iter().zip(&noise).map(|(x, n)| (x + n * target / len) as f32));
        } else {
            data.extend(v.iter().map(|x| *x as f32));
        }
    }
    Ok(SyntheticScene {
        image_id: format!("img{index:04}"),
        backbone: FeatureMap::new(g, g, cfg.channels, data)?,
        true_parts,
        transform,
        seed,
    })
}

/// Reference pseudo labeller: repeated full scans for the global maximum,
/// retiring entries by overwriting them with `-1`.
pub fn oracle_pseudo_gt<T: Real>(mean_map: &FeatureMap<T>, cap: usize, radius: usize) -> Result<PseudoGT> {
    validate_labeller_input(mean_map, cap)?;
    let (h, w, c) = mean_map.shape();
    let mut o: Vec<f64> = mean_map.data().iter().map(|v| v.as_f64()).collect();
    let mut gt = vec![usize::MAX; h * w];
    let mut cnt = vec![0usize; c];
    for _ in 0..h * w {
        let mut arg = 0;
        for i in 1..o.len() {
            if o[i] > o[arg] {
                arg = i;
            }
        }
        let (cell, ci) = (arg / c, arg % c);
        gt[cell] = ci;
        for ch in 0..c {
            o[cell * c + ch] = -1.0;
        }
        cnt[ci] += 1;
        if radius > 0 && ci < c - 1 {
            let (hi, wi) = ((cell / w) as i64, (cell % w) as i64);
            for r in 0..h as i64 {
                for q in 0..w as i64 {
                    if (r - hi).abs() <= radius as i64 && (q - wi).abs() <= radius as i64 {
                        o[(r as usize * w + q as usize) * c + ci] = -1.0;
                    }
                }
            }
        }
        if cnt[ci] == cap && ci < c - 1 {
            for cell in 0..h * w {
                o[cell * c + ci] = -1.0;
            }
        }
    }
    PseudoGT::new(h, w, gt)
}

/// Least-squares affine fit from the closed-form normal equations, solved
/// by Cramer's rule.
pub fn oracle_affine_fit(matches: &[Match]) -> Result<AffineTransform> {
    if matches.len() < 3 {
        return Err(Error::Insufficient("affine fit needs 3 matches".into()));
    }
    // G = Σ [r s 1]ᵀ[r s 1], b_k = Σ [r s 1]ᵀ dst_k
    let mut g = [[0.0f64; 3]; 3];
    let mut b = [[0.0f64; 3]; 2];
    for m in matches {
        let x = [m.src.0, m.src.1, 1.0];
        let y = [m.dst.0, m.dst.1];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += x[i] * x[j];
            }
            for k in 0..2 {
                b[k][i] += x[i] * y[k];
            }
        }
    }
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&g);
    let scale = g.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if d.abs() <= 1e-12 * scale * scale * scale {
        return Err(Error::Degenerate("matches are collinear".into()));
    }
    let mut theta = [[0.0; 3]; 2];
    for k in 0..2 {
        for col in 0..3 {
            let mut m = g;
            for row in 0..3 {
                m[row][col] = b[k][row];
            }
            theta[k][col] = det3(&m) / d;
        }
    }
    AffineTransform::from_rows(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sqrt;

    fn still(cfg: SynthConfig) -> SynthConfig {
        SynthConfig {
            max_rotation_deg: 0.0,
            min_scale: 1.0,
            max_scale: 1.0,
            max_translation: 0.0,
            min_part_strength: 1.0,
            ..cfg
        }
    }

    #[test]
    fn noiseless_identity_images_equal_template() {
        let cfg = still(SynthConfig {
            n_images: 4,
            noise: 0.0,
            decoys: 0,
            ..SynthConfig::default()
        });
        let ds = generate_dataset(&cfg).unwrap();
        for s in &ds.scenes[1..] {
            assert_eq!(s.backbone, ds.scenes[0].backbone);
        }
        for (p, t) in ds.scenes[0].true_parts.iter().zip(&ds.template_parts) {
            assert_eq!(p.cell, *t);
            let (r, c) = (t.0 as usize, t.1 as usize);
            let v = ds.scenes[0].backbone.cell(r, c);
            assert_eq!(v[p.part], 1.0);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = SynthConfig {
            n_images: 3,
            ..SynthConfig::default()
        };
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_dataset(&cfg).unwrap().scenes, generate_dataset(&other).unwrap().scenes);
    }

    #[test]
    fn every_image_has_all_parts() {
        let ds = generate_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(ds.scenes.len(), 40);
        for s in &ds.scenes {
            let mut ids: Vec<usize> = s.true_parts.iter().map(|p| p.part).collect();
            ids.dedup();
            assert_eq!(ids, [0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn noise_is_bounded() {
        let cfg = SynthConfig {
            n_images: 3,
            noise: 0.1,
            ..SynthConfig::default()
        };
        let noisy = generate_dataset(&cfg).unwrap();
        let clean = generate_dataset(&SynthConfig { noise: 0.0, ..cfg }).unwrap();
        for (a, b) in noisy.scenes.iter().zip(&clean.scenes) {
            for cell in 0..a.backbone.cells() {
                let d: f64 = a
                    .backbone
                    .cell_at(cell)
                    .iter()
                    .zip(b.backbone.cell_at(cell))
                    .map(|(x, y)| ((x - y) as f64).powi(2))
                    .sum();
                assert!(sqrt(d) <= 0.1 + 1e-6);
            }
        }
    }

    #[test]
    fn parts_are_distinct_peaks_of_their_dimension() {
        let ds = generate_dataset(&SynthConfig {
            noise: 0.0,
            decoys: 0,
            n_images: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        for s in &ds.scenes {
            for p in &s.true_parts {
                let (h, w, _) = s.backbone.shape();
                let best = (0..h * w)
                    .max_by(|&a, &b| {
                        s.backbone.cell_at(a)[p.part].total_cmp(&s.backbone.cell_at(b)[p.part])
                    })
                    .unwrap();
                let (r, c) = ((best / w) as f64, (best % w) as f64);
                assert!((r - p.cell.0).abs() <= 0.5 + 1e-9 && (c - p.cell.1).abs() <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        for cfg in [
            SynthConfig { grid: 7, ..SynthConfig::default() },
            SynthConfig { n_parts: 60, ..SynthConfig::default() },
            SynthConfig { noise: 0.2, ..SynthConfig::default() },
            SynthConfig { min_part_strength: 0.0, ..SynthConfig::default() },
        ] {
            assert!(generate_dataset(&cfg).is_err());
        }
    }

    #[test]
    fn oracle_examples() {
        let m = FeatureMap::new(2, 2, 2, vec![0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8]).unwrap();
        assert_eq!(oracle_pseudo_gt(&m, 3, 0).unwrap().labels(), &[0, 0, 1, 1]);
        let m = FeatureMap::new(2, 2, 2, vec![0.9f64, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1]).unwrap();
        assert_eq!(oracle_pseudo_gt(&m, 3, 0).unwrap().labels(), &[0, 0, 0, 1]);
    }

    #[test]
    fn oracle_affine_exact_and_collinear() {
        let planted = AffineTransform::from_rows([[1.1, 0.2, -0.5], [-0.1, 0.9, 2.0]]).unwrap();
        let ms: Vec<Match> = [(0.0, 0.0), (3.0, 1.0), (1.0, 5.0), (4.0, 4.0)]
            .iter()
            .map(|&src| Match {
                dst: planted.apply(src),
                src,
                score: 1.0,
            })
            .collect();
        assert!(oracle_affine_fit(&ms).unwrap().max_abs_diff(&planted) < 1e-9);
        let line: Vec<Match> = (0..4)
            .map(|i| Match {
                dst: (i as f64, i as f64),
                src: (i as f64, i as f64),
                score: 1.0,
            })
            .collect();
        assert!(oracle_affine_fit(&line).is_err());
    }
}
