use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Point;
use crate::math::sqrt;
use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// A pair of cells whose feature vectors agree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// Cell on the destination (training) map.
    pub dst: Point,
    /// Cell on the source (similar) map.
    pub src: Point,
    pub score: f64,
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (sqrt(aa) * sqrt(bb))
    }
}

/// Every cell pair whose cosine similarity exceeds `threshold`, in
/// destination-major order.
pub fn match_features<T: Real>(
    dst_map: &FeatureMap<T>,
    src_map: &FeatureMap<T>,
    threshold: f64,
) -> Result<Vec<Match>> {
    if dst_map.channels() != src_map.channels() {
        return Err(Error::ChannelMismatch {
            expected: dst_map.channels(),
            found: src_map.channels(),
        });
    }
    let unit = |m: &FeatureMap<T>| -> Vec<Vec<f64>> {
        (0..m.cells())
            .map(|i| {
                let v: Vec<f64> = m.cell_at(i).iter().map(|x| x.as_f64()).collect();
                let n = sqrt(v.iter().map(|x| x * x).sum());
                if n == 0.0 {
                    v
                } else {
                    v.into_iter().map(|x| x / n).collect()
                }
            })
            .collect()
    };
    let dst_unit = unit(dst_map);
    let src_unit = unit(src_map);
    let mut out = Vec::new();
    for (di, a) in dst_unit.iter().enumerate() {
        let dst = ((di / dst_map.width()) as f64, (di % dst_map.width()) as f64);
        for (si, b) in src_unit.iter().enumerate() {
            let score = crate::math::dot(a, b);
            if score > threshold {
                out.push(Match {
                    dst,
                    src: ((si / src_map.width()) as f64, (si % src_map.width()) as f64),
                    score,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one_hot(h: usize, w: usize, c: usize, hot: impl Fn(usize, usize) -> usize) -> FeatureMap<f64> {
        FeatureMap::from_fn(h, w, c, |r, q, ch| if ch == hot(r, q) { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn identical_one_hot_cells_match_themselves() {
        let m = one_hot(2, 2, 4, |r, q| r * 2 + q);
        let matches = match_features(&m, &m, 0.6).unwrap();
        assert_eq!(matches.len(), 4);
        for mt in matches {
            assert_eq!(mt.dst, mt.src);
            assert!((mt.score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_channels_never_match() {
        let a = one_hot(2, 2, 4, |_, _| 0);
        let b = one_hot(2, 2, 4, |_, _| 1);
        assert!(match_features(&a, &b, 0.6).unwrap().is_empty());
    }

    #[test]
    fn zero_vectors_have_zero_cosine() {
        assert_eq!(cosine(&[0.0f64, 0.0], &[1.0, 0.0]), 0.0);
        let z = FeatureMap::<f64>::zeros(2, 2, 3).unwrap();
        assert!(match_features(&z, &z, -0.5).unwrap().len() == 16);
        assert!(match_features(&z, &z, 0.0).unwrap().is_empty());
    }

    #[test]
    fn shared_distinctive_vector_brute_force() {
        // one shared distinctive vector plus assorted others
        let a = FeatureMap::new(
            2,
            2,
            3,
            vec![1.0, 0.0, 0.0, 0.2, 0.9, 0.1, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0],
        )
        .unwrap();
        let b = FeatureMap::new(
            2,
            2,
            3,
            vec![0.0, 1.0, 0.0, 0.0, 0.1, 1.0, 0.9, 0.1, 0.0, 0.3, 0.3, 0.3],
        )
        .unwrap();
        let got = match_features(&a, &b, 0.6).unwrap();
        let mut expected = Vec::new();
        for p in 0..2 {
            for q in 0..2 {
                for r in 0..2 {
                    for s in 0..2 {
                        let x = a.cell(p, q);
                        let y = b.cell(r, s);
                        let dot: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
                        let nx: f64 = x.iter().map(|u| u * u).sum::<f64>().sqrt();
                        let ny: f64 = y.iter().map(|u| u * u).sum::<f64>().sqrt();
                        let c = dot / (nx * ny);
                        if c > 0.6 {
                            expected.push(((p as f64, q as f64), (r as f64, s as f64)));
                        }
                    }
                }
            }
        }
        let got_pairs: Vec<_> = got.iter().map(|m| (m.dst, m.src)).collect();
        assert_eq!(got_pairs, expected);
        assert!(!expected.is_empty());
    }

    #[test]
    fn channel_mismatch() {
        let a = FeatureMap::<f64>::zeros(1, 1, 2).unwrap();
        let b = FeatureMap::<f64>::zeros(1, 1, 3).unwrap();
        assert!(matches!(
            match_features(&a, &b, 0.6),
            Err(Error::ChannelMismatch { .. })
        ));
    }
}
