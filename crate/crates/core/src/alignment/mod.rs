//! Feature-map alignment: cosine matching, RANSAC and inverse warping.
//!
//! Coordinates are `(row, col)` cell centers with cell `(0, 0)` at the
//! origin. Transforms map a coordinate on the similar (source) map onto the
//! training (destination) canvas.

mod matching;
mod ransac;
mod transform;
mod warp;

pub use matching::{cosine, match_features, Match};
pub use ransac::{fit_least_squares, fit_minimal, ransac, ransac_affine, RansacFit};
pub use transform::{AffineTransform, Homography, Point, SpatialTransform};
pub use warp::{warp_to_canvas, WarpPlan};

use alloc::vec::Vec;

use crate::config::TransformFamily;
use crate::tensor::{FeatureMap, Real};
use crate::Result;

/// Knobs for [`align_pair`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignParams {
    pub family: TransformFamily,
    pub threshold: f64,
    pub iterations: usize,
    pub inlier_tol: f64,
    pub min_inliers: usize,
}

/// How a pool member is placed on the training canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub transform: SpatialTransform,
    pub inlier_count: usize,
    pub match_count: usize,
    /// True when the estimate was rejected (or not attempted) and the map
    /// is stretched onto the canvas instead.
    pub fallback: bool,
}

impl Placement {
    /// The warp that realizes this placement for a source of `src_shape`.
    pub fn plan(&self, src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Result<WarpPlan> {
        WarpPlan::build(&self.transform, src_h, src_w, dst_h, dst_w, self.fallback)
    }
}

/// The result of aligning one map onto a canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult<T: Real> {
    pub placement: Placement,
    pub warped: FeatureMap<T>,
    pub validity: Vec<bool>,
}

/// Affine map that stretches a `src_h × src_w` grid onto `dst_h × dst_w`
/// (the identity when the shapes agree).
pub fn stretch_transform(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> AffineTransform {
    let sr = dst_h as f64 / src_h as f64;
    let sc = dst_w as f64 / src_w as f64;
    AffineTransform::from_rows([
        [sr, 0.0, 0.5 * sr - 0.5],
        [0.0, sc, 0.5 * sc - 0.5],
    ])
    .expect("stretch of non-empty grids is invertible")
}

/// Estimates where `src` lands on the `dst` canvas.
///
/// Both maps should already be max-normalized. When the family is
/// [`TransformFamily::None`], when too few matches exist, or when the best
/// hypothesis has fewer than `min_inliers` inliers, the source is stretched
/// onto the canvas unchanged.
pub fn align_pair<T: Real>(
    dst: &FeatureMap<T>,
    src: &FeatureMap<T>,
    params: &AlignParams,
    seed: u64,
) -> Result<Placement> {
    let fallback = |match_count| Placement {
        transform: SpatialTransform::Affine(stretch_transform(
            src.height(),
            src.width(),
            dst.height(),
            dst.width(),
        )),
        inlier_count: 0,
        match_count,
        fallback: true,
    };
    if params.family == TransformFamily::None {
        return Ok(fallback(0));
    }
    let matches = match_features(dst, src, params.threshold)?;
    let Some(sample) = ransac::sample_size(params.family) else {
        return Ok(fallback(matches.len()));
    };
    if matches.len() < sample.max(params.min_inliers) {
        return Ok(fallback(matches.len()));
    }
    match ransac(&matches, params.family, params.iterations, params.inlier_tol, seed) {
        Ok(fit) if fit.inliers.len() >= params.min_inliers => Ok(Placement {
            transform: fit.transform,
            inlier_count: fit.inliers.len(),
            match_count: matches.len(),
            fallback: false,
        }),
        _ => Ok(fallback(matches.len())),
    }
}

/// [`align_pair`] followed by the warp onto the canvas.
pub fn align_and_warp<T: Real>(
    dst: &FeatureMap<T>,
    src: &FeatureMap<T>,
    params: &AlignParams,
    seed: u64,
) -> Result<AlignmentResult<T>> {
    let placement = align_pair(dst, src, params, seed)?;
    let plan = placement.plan(src.height(), src.width(), dst.height(), dst.width())?;
    let warped = plan.apply(src)?;
    Ok(AlignmentResult {
        placement,
        validity: plan.validity().to_vec(),
        warped,
    })
}
