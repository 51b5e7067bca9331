//! Image similarity from part-response maps.
//!
//! Two images are compared by resizing their softmax maps to a common grid
//! and averaging the per-location Jensen-Shannon divergence of the channel
//! distributions. Lower divergence means more similar; pools are the `k`
//! candidates with the smallest divergence to a query.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::ln;
use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// Default side of the comparison grid.
pub const DEFAULT_COMMON_SIZE: usize = 14;

/// Floor applied to per-location probabilities before renormalization.
pub const PROB_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-5;

/// Jensen-Shannon divergence (natural log) of two probability vectors.
///
/// Terms with zero mass contribute zero. The result lies in `[0, ln 2]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    for (name, v) in [("p", p), ("q", q)] {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and non-negative"
            )));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
        }
    }
    Ok(js_unchecked(p, q))
}

fn js_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        total += 0.5 * (kl_term(a, m) + kl_term(b, m));
    }
    total.clamp(0.0, LN_2)
}

#[inline]
fn kl_term(x: f64, m: f64) -> f64 {
    if x > 0.0 {
        x * ln(x / m)
    } else {
        0.0
    }
}

/// A map resized to the comparison grid with every location renormalized
/// into a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionGrid {
    channels: usize,
    cells: usize,
    probs: Vec<f64>,
}

impl DistributionGrid {
    pub fn from_map<T: Real>(map: &FeatureMap<T>, common_size: usize) -> Result<Self> {
        let resized = map.cast::<f64>().resize_bilinear(common_size, common_size)?;
        let channels = resized.channels();
        let cells = resized.cells();
        let mut probs = resized.into_data();
        for cell in probs.chunks_exact_mut(channels) {
            cell.iter_mut().for_each(|v| *v = v.max(PROB_FLOOR));
            let s: f64 = cell.iter().sum();
            cell.iter_mut().for_each(|v| *v /= s);
        }
        Ok(Self {
            channels,
            cells,
            probs,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Mean per-location JS divergence against `other`.
    pub fn divergence(&self, other: &Self) -> Result<f64> {
        if self.channels != other.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: other.channels,
            });
        }
        if self.cells != other.cells {
            return Err(Error::Shape("distribution grids differ in size".into()));
        }
        let c = self.channels;
        let total: f64 = self
            .probs
            .chunks_exact(c)
            .zip(other.probs.chunks_exact(c))
            .map(|(p, q)| js_unchecked(p, q))
            .sum();
        Ok(total / self.cells as f64)
    }
}

/// Divergence between two softmax maps after resizing both to
/// `common_size × common_size`.
pub fn map_divergence<T: Real>(
    a: &FeatureMap<T>,
    b: &FeatureMap<T>,
    common_size: usize,
) -> Result<f64> {
    if a.channels() != b.channels() {
        return Err(Error::ChannelMismatch {
            expected: a.channels(),
            found: b.channels(),
        });
    }
    DistributionGrid::from_map(a, common_size)?.divergence(&DistributionGrid::from_map(b, common_size)?)
}

/// Symmetric matrix of pairwise divergences.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    ids: Vec<String>,
    scores: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wraps a row-major `n × n` score buffer, checking the diagonal,
    /// symmetry and range.
    pub fn from_scores(ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if scores.len() != n * n {
            return Err(Error::Shape(format!(
                "{} scores for {n} ids",
                scores.len()
            )));
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate id {id}")));
            }
        }
        for i in 0..n {
            if scores[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument("non-zero diagonal".into()));
            }
            for j in 0..n {
                let s = scores[i * n + j];
                if s != scores[j * n + i] || !(0.0..=LN_2).contains(&s) {
                    return Err(Error::InvalidArgument(format!(
                        "score ({i}, {j}) = {s} breaks symmetry or range"
                    )));
                }
            }
        }
        Ok(Self { ids, scores })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.ids.len() + j]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Computes the full matrix, evaluating each unordered pair once.
pub fn build_similarity_matrix<T: Real>(
    ids: &[String],
    maps: &[FeatureMap<T>],
    common_size: usize,
) -> Result<SimilarityMatrix> {
    if maps.len() < 2 {
        return Err(Error::Insufficient(format!(
            "similarity needs at least 2 maps, got {}",
            maps.len()
        )));
    }
    if ids.len() != maps.len() {
        return Err(Error::Shape("ids and maps differ in length".into()));
    }
    let grids = maps
        .iter()
        .map(|m| DistributionGrid::from_map(m, common_size))
        .collect::<Result<Vec<_>>>()?;
    let pairs = upper_pairs(grids.len());
    let values = pairs
        .iter()
        .map(|&(i, j)| grids[i].divergence(&grids[j]))
        .collect::<Result<Vec<_>>>()?;
    assemble_matrix(ids.to_vec(), &pairs, &values)
}

/// All `(i, j)` with `i < j`, in row-major order.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// Fills a symmetric matrix from per-pair values computed in any order.
pub fn assemble_matrix(
    ids: Vec<String>,
    pairs: &[(usize, usize)],
    values: &[f64],
) -> Result<SimilarityMatrix> {
    let n = ids.len();
    let mut scores = vec![0.0; n * n];
    for (&(i, j), &v) in pairs.iter().zip(values) {
        scores[i * n + j] = v;
        scores[j * n + i] = v;
    }
    SimilarityMatrix::from_scores(ids, scores)
}

/// The `k` candidates closest to `query`, ascending by divergence, ties by id.
///
/// `candidates` of `None` means every other id in the matrix. The query is
/// never part of its own pool.
pub fn top_k_pool(
    matrix: &SimilarityMatrix,
    query: &str,
    k: usize,
    candidates: Option<&[String]>,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let qi = matrix
        .index_of(query)
        .ok_or_else(|| Error::UnknownId(query.to_string()))?;
    let scored = match candidates {
        None => matrix
            .ids
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != qi)
            .map(|(j, id)| (matrix.get(qi, j), id.as_str()))
            .collect::<Vec<_>>(),
        Some(subset) => {
            let mut out = Vec::with_capacity(subset.len());
            for id in subset {
                let j = matrix
                    .index_of(id)
                    .ok_or_else(|| Error::UnknownId(id.clone()))?;
                if j != qi {
                    out.push((matrix.get(qi, j), id.as_str()));
                }
            }
            out
        }
    };
    Ok(rank_smallest(scored, k)
        .into_iter()
        .map(ToString::to_string)
        .collect())
}

/// The candidate subset pools are drawn from: all `n` indices when
/// `n <= size`, otherwise `size` indices sampled without replacement, in
/// ascending order.
pub fn choose_subset(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if n <= size {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = rand::seq::index::sample(&mut rng, n, size).into_vec();
    v.sort_unstable();
    v
}

/// Sorts `(score, key)` ascending by score then key and keeps the first `k`.
pub fn rank_smallest<K: Ord>(mut scored: Vec<(f64, K)>, k: usize) -> Vec<K> {
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.cmp(&b.1))
    });
    scored.dedup_by(|a, b| a.1 == b.1);
    scored.into_iter().take(k).map(|(_, key)| key).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn one_hot_map(h: usize, w: usize, c: usize, hot: usize) -> FeatureMap<f64> {
        FeatureMap::from_fn(h, w, c, |_, _, ch| if ch == hot { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let d = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - LN_2).abs() < 1e-12);
        let d = js_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((d - 0.215762).abs() < 1e-6, "{d}");
    }

    #[test]
    fn js_errors() {
        assert!(matches!(js_divergence(&[1.0], &[0.5, 0.5]), Err(Error::Shape(_))));
        assert!(matches!(
            js_divergence(&[0.6, 0.6], &[0.5, 0.5]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn map_divergence_extremes() {
        let a = one_hot_map(3, 4, 3, 0);
        assert_eq!(map_divergence(&a, &a, 5).unwrap(), 0.0);
        let b = one_hot_map(2, 2, 3, 1);
        let d = map_divergence(&a, &b, 4).unwrap();
        assert!((d - LN_2).abs() < 1e-9, "{d}");
        let c = one_hot_map(2, 2, 4, 1);
        assert!(matches!(
            map_divergence(&a, &c, 4),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn matrix_requires_two_maps() {
        let a = one_hot_map(2, 2, 2, 0);
        assert!(matches!(
            build_similarity_matrix(&["a".to_string()], &[a], 2),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn identical_pair_matrix_is_zero() {
        let a = one_hot_map(2, 2, 2, 0);
        let m = build_similarity_matrix(&["a".to_string(), "b".to_string()], &[a.clone(), a], 2)
            .unwrap();
        assert_eq!(m.scores(), &[0.0; 4]);
    }

    #[test]
    fn pool_tie_break_and_clamping() {
        let ids: Vec<String> = ["q", "b", "a", "c"].iter().map(|s| s.to_string()).collect();
        // q is equidistant (0.1) from a and b, c farther
        let scores = vec![
            0.0, 0.1, 0.1, 0.3, //
            0.1, 0.0, 0.2, 0.2, //
            0.1, 0.2, 0.0, 0.2, //
            0.3, 0.2, 0.2, 0.0,
        ];
        let m = SimilarityMatrix::from_scores(ids, scores).unwrap();
        assert_eq!(top_k_pool(&m, "q", 2, None).unwrap(), ["a", "b"]);
        assert_eq!(top_k_pool(&m, "q", 15, None).unwrap(), ["a", "b", "c"]);
        let subset = ["c".to_string(), "b".to_string()];
        assert_eq!(top_k_pool(&m, "q", 15, Some(&subset)).unwrap(), ["b", "c"]);
        assert!(matches!(top_k_pool(&m, "zz", 1, None), Err(Error::UnknownId(_))));
    }
}
