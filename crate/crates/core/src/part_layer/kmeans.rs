use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PartLayer;
use crate::math::{dot, floor, norm};
use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// Draws up to `max_count` backbone vectors (row-major, `c_in` wide) from
/// `maps`. All cells are taken, in order, when they fit.
pub fn sample_backbone_vectors<T: Real>(
    maps: &[&FeatureMap<T>],
    max_count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let Some(first) = maps.first() else {
        return Err(Error::Insufficient("no maps to sample from".into()));
    };
    let dim = first.channels();
    if maps.iter().any(|m| m.channels() != dim) {
        return Err(Error::Shape("backbone maps differ in channel count".into()));
    }
    let total: usize = maps.iter().map(|m| m.cells()).sum();
    let picks: Vec<usize> = if total <= max_count {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = index::sample(&mut rng, total, max_count).into_vec();
        v.sort_unstable();
        v
    };
    let mut out = Vec::with_capacity(picks.len() * dim);
    let mut map_idx = 0;
    let mut offset = 0;
    for p in picks {
        while p >= offset + maps[map_idx].cells() {
            offset += maps[map_idx].cells();
            map_idx += 1;
        }
        out.extend(maps[map_idx].cell_at(p - offset).iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Spherical k-means (cosine assignment, unit-norm centers) with k-means++
/// seeding. `sample` is row-major with `dim` columns; zero rows are ignored.
/// Returns `k × dim` centers in seeding order.
pub fn spherical_kmeans(sample: &[f64], dim: usize, k: usize, seed: u64, max_iter: usize) -> Result<Vec<f64>> {
    if dim == 0 || sample.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "sample of length {} is not a multiple of {dim}",
            sample.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let points: Vec<f64> = sample
        .chunks_exact(dim)
        .filter_map(|v| {
            let n = norm(v);
            (n > 0.0).then(|| v.iter().map(|x| x / n).collect::<Vec<_>>())
        })
        .flatten()
        .collect();
    let n = points.len() / dim;
    if n < k {
        return Err(Error::Insufficient(format!(
            "{n} usable vectors for {k} clusters"
        )));
    }
    let distinct = count_distinct(&points, dim);
    if distinct < k {
        return Err(Error::Degenerate(format!(
            "sample has {distinct} distinct directions, fewer than {k} clusters"
        )));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| chord_sq(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("all vectors coincide with chosen centers".into()));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, d) in d2.iter().enumerate() {
            if *d <= 0.0 {
                continue;
            }
            acc += d;
            chosen = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen = chosen.expect("positive total implies a candidate");
        centers.extend_from_slice(point(chosen));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(chord_sq(point(i), point(chosen)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (best, _) = nearest(point(i), &centers, dim);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            let s = &sums[j * dim..(j + 1) * dim];
            let sn = norm(s);
            if counts[j] == 0 || sn == 0.0 {
                // reseed with the point farthest from its center
                let far = (0..n)
                    .min_by(|&a, &b| {
                        let ca = dot(point(a), &centers[assign[a] * dim..(assign[a] + 1) * dim]);
                        let cb = dot(point(b), &centers[assign[b] * dim..(assign[b] + 1) * dim]);
                        ca.partial_cmp(&cb).unwrap_or(Ordering::Equal)
                    })
                    .expect("non-empty sample");
                centers[j * dim..(j + 1) * dim].copy_from_slice(point(far));
                assign[far] = j;
            } else {
                for (c, v) in centers[j * dim..(j + 1) * dim].iter_mut().zip(s) {
                    *c = v / sn;
                }
            }
        }
    }
    Ok(centers)
}

/// Part layer whose first `k` rows are spherical k-means centers of
/// `sample` and whose last row (background) is zero.
pub fn init_from_clusters(
    sample: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    logit_scale: f64,
) -> Result<PartLayer> {
    let mut weights = spherical_kmeans(sample, dim, k, seed, max_iter)?;
    weights.extend(core::iter::repeat_n(0.0, dim));
    PartLayer::new(dim, k + 1, weights, logit_scale)
}

fn chord_sq(a: &[f64], b: &[f64]) -> f64 {
    (2.0 - 2.0 * dot(a, b)).max(0.0)
}

fn nearest(v: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, c) in centers.chunks_exact(dim).enumerate() {
        let s = dot(v, c);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Distinct rows after quantizing unit vectors to 1e-9.
fn count_distinct(points: &[f64], dim: usize) -> usize {
    let mut rows: Vec<Vec<i64>> = points
        .chunks_exact(dim)
        .map(|r| r.iter().map(|v| floor(v * 1e9 + 0.5) as i64).collect())
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}
