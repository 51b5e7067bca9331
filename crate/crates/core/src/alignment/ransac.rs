use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AffineTransform, Homography, Match, SpatialTransform};
use crate::config::TransformFamily;
use crate::linalg::{ridge_least_squares, solve};
use crate::math::sqrt;
use crate::{Error, Result};

/// Winning hypothesis of a RANSAC run.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    /// Least-squares refit on `inliers`.
    pub transform: SpatialTransform,
    /// Indices into the match list supporting the winning hypothesis.
    pub inliers: Vec<usize>,
}

pub(crate) fn sample_size(family: TransformFamily) -> Option<usize> {
    match family {
        TransformFamily::Translation => Some(1),
        TransformFamily::Affine => Some(3),
        TransformFamily::Homography => Some(4),
        TransformFamily::None => None,
    }
}

/// RANSAC over affine hypotheses.
pub fn ransac_affine(
    matches: &[Match],
    iterations: usize,
    inlier_tol: f64,
    rng_seed: u64,
) -> Result<(AffineTransform, Vec<usize>)> {
    let fit = ransac(matches, TransformFamily::Affine, iterations, inlier_tol, rng_seed)?;
    let affine = *fit
        .transform
        .as_affine()
        .expect("affine family yields affine transforms");
    Ok((affine, fit.inliers))
}

/// Samples minimal subsets uniformly without replacement, keeps the
/// hypothesis with the most inliers (first found on ties) and refits it by
/// least squares on its inlier set.
pub fn ransac(
    matches: &[Match],
    family: TransformFamily,
    iterations: usize,
    inlier_tol: f64,
    rng_seed: u64,
) -> Result<RansacFit> {
    let Some(k) = sample_size(family) else {
        return Err(Error::InvalidArgument(
            "RANSAC needs a transform family with parameters".into(),
        ));
    };
    if matches.len() < k {
        return Err(Error::Insufficient(format!(
            "RANSAC needs at least {} matches, got {}",
            k,
            matches.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best: Option<(SpatialTransform, Vec<usize>)> = None;
    let mut subset = Vec::with_capacity(k);
    for _ in 0..iterations {
        subset.clear();
        subset.extend(index::sample(&mut rng, matches.len(), k).into_iter().map(|i| matches[i]));
        let Ok(hypothesis) = fit_minimal(family, &subset) else {
            continue;
        };
        let inliers = inliers_of(&hypothesis, matches, inlier_tol);
        if best.as_ref().is_none_or(|(_, b)| inliers.len() > b.len()) {
            best = Some((hypothesis, inliers));
        }
    }
    let Some((hypothesis, inliers)) = best else {
        return Err(Error::Degenerate(format!(
            "every sampled subset was degenerate after {iterations} iterations"
        )));
    };
    let support: Vec<Match> = inliers.iter().map(|&i| matches[i]).collect();
    let transform = if support.len() >= k {
        fit_least_squares(family, &support).unwrap_or(hypothesis)
    } else {
        hypothesis
    };
    Ok(RansacFit { transform, inliers })
}

fn inliers_of(t: &SpatialTransform, matches: &[Match], tol: f64) -> Vec<usize> {
    matches
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let (p, q) = t.apply(m.src)?;
            let d = sqrt((p - m.dst.0) * (p - m.dst.0) + (q - m.dst.1) * (q - m.dst.1));
            (d <= tol).then_some(i)
        })
        .collect()
}

/// Exact fit from a minimal sample (1, 3 or 4 matches).
pub fn fit_minimal(family: TransformFamily, sample: &[Match]) -> Result<SpatialTransform> {
    match family {
        TransformFamily::Translation => fit_translation(&sample[..1]),
        TransformFamily::Affine => {
            let [a, b, c] = [sample[0].src, sample[1].src, sample[2].src];
            let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if area.abs() < 1e-9 {
                return Err(Error::Degenerate("collinear affine sample".into()));
            }
            fit_affine(&sample[..3])
        }
        TransformFamily::Homography => fit_homography(&sample[..4]),
        TransformFamily::None => Err(Error::InvalidArgument("no transform to fit".into())),
    }
}

/// Least-squares fit over any number of matches.
pub fn fit_least_squares(family: TransformFamily, matches: &[Match]) -> Result<SpatialTransform> {
    match family {
        TransformFamily::Translation => fit_translation(matches),
        TransformFamily::Affine => fit_affine(matches),
        TransformFamily::Homography => fit_homography(matches),
        TransformFamily::None => Err(Error::InvalidArgument("no transform to fit".into())),
    }
}

fn fit_translation(matches: &[Match]) -> Result<SpatialTransform> {
    if matches.is_empty() {
        return Err(Error::Insufficient("translation needs one match".into()));
    }
    let n = matches.len() as f64;
    let (dr, dc) = matches.iter().fold((0.0, 0.0), |(a, b), m| {
        (a + m.dst.0 - m.src.0, b + m.dst.1 - m.src.1)
    });
    Ok(SpatialTransform::Affine(AffineTransform::translation(dr / n, dc / n)))
}

fn fit_affine(matches: &[Match]) -> Result<SpatialTransform> {
    let n = matches.len();
    if n < 3 {
        return Err(Error::Insufficient("affine needs three matches".into()));
    }
    let mut design = Vec::with_capacity(3 * n);
    let mut target = Vec::with_capacity(2 * n);
    for m in matches {
        design.extend_from_slice(&[m.src.0, m.src.1, 1.0]);
        target.extend_from_slice(&[m.dst.0, m.dst.1]);
    }
    let x = if n == 3 {
        solve(&design, &target, 3, 2)?
    } else {
        ridge_least_squares(&design, &target, n, 3, 2, 0.0, &[])?
    };
    let t = AffineTransform::from_rows([[x[0], x[2], x[4]], [x[1], x[3], x[5]]])?;
    Ok(SpatialTransform::Affine(t))
}

fn fit_homography(matches: &[Match]) -> Result<SpatialTransform> {
    let n = matches.len();
    if n < 4 {
        return Err(Error::Insufficient("homography needs four matches".into()));
    }
    let mut design = Vec::with_capacity(16 * n);
    let mut target = Vec::with_capacity(2 * n);
    for m in matches {
        let (r, s) = m.src;
        let (p, q) = m.dst;
        design.extend_from_slice(&[r, s, 1.0, 0.0, 0.0, 0.0, -p * r, -p * s]);
        design.extend_from_slice(&[0.0, 0.0, 0.0, r, s, 1.0, -q * r, -q * s]);
        target.push(p);
        target.push(q);
    }
    let h = if n == 4 {
        solve(&design, &target, 8, 1)?
    } else {
        ridge_least_squares(&design, &target, 2 * n, 8, 1, 0.0, &[])?
    };
    let hm = Homography::from_rows([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])?;
    Ok(SpatialTransform::Homography(hm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(src: (f64, f64), dst: (f64, f64)) -> Match {
        Match { dst, src, score: 1.0 }
    }

    #[test]
    fn identity_recovery() {
        let matches: Vec<Match> = (0..12)
            .map(|i| {
                let p = ((i % 4) as f64, (i / 4) as f64 * 1.5);
                m(p, p)
            })
            .collect();
        let (t, inliers) = ransac_affine(&matches, 50, 0.5, 3).unwrap();
        assert!(t.max_abs_diff(&AffineTransform::identity()) < 1e-12);
        assert_eq!(inliers.len(), matches.len());
    }

    #[test]
    fn minimal_shear_is_exact() {
        let planted = AffineTransform::from_rows([[1.0, 0.5, 2.0], [0.25, 1.0, -1.0]]).unwrap();
        let sample: Vec<Match> = [(0.0, 0.0), (3.0, 1.0), (1.0, 4.0)]
            .iter()
            .map(|&p| m(p, planted.apply(p)))
            .collect();
        let got = fit_minimal(TransformFamily::Affine, &sample).unwrap();
        assert!(got.as_affine().unwrap().max_abs_diff(&planted) < 1e-9);
    }

    #[test]
    fn collinear_samples_fail() {
        let line: Vec<Match> = (0..5).map(|i| m((i as f64, i as f64), (i as f64, 0.0))).collect();
        assert!(matches!(
            ransac_affine(&line, 20, 0.5, 0),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            ransac_affine(&line[..2], 20, 0.5, 0),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn translation_and_homography_families() {
        let planted = Homography::from_rows([[1.0, 0.05, 1.0], [0.02, 1.0, 2.0], [0.001, 0.0, 1.0]]).unwrap();
        let matches: Vec<Match> = (0..20)
            .map(|i| {
                let p = ((i % 5) as f64 * 2.0, (i / 5) as f64 * 3.0);
                m(p, planted.apply(p).unwrap())
            })
            .collect();
        let fit = ransac(&matches, TransformFamily::Homography, 50, 0.1, 9).unwrap();
        assert_eq!(fit.inliers.len(), 20);
        let SpatialTransform::Homography(h) = fit.transform else { panic!() };
        for (a, b) in h.rows().iter().flatten().zip(planted.rows().iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }

        let shifted: Vec<Match> = (0..6).map(|i| m((i as f64, 0.0), (i as f64 + 2.0, 3.0))).collect();
        let fit = ransac(&shifted, TransformFamily::Translation, 10, 0.5, 1).unwrap();
        let t = fit.transform.as_affine().unwrap();
        assert!(t.max_abs_diff(&AffineTransform::translation(2.0, 3.0)) < 1e-12);
    }
}
