use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::SpatialTransform;
use crate::math::floor;
use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

const BOUNDS_EPS: f64 = 1e-9;

/// Precomputed inverse warp from a source grid onto a destination canvas.
///
/// Each destination cell holds up to four bilinear taps into the source.
/// The same plan samples forward and scatters gradients backward.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPlan {
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
    taps: Vec<[(usize, f64); 4]>,
    valid: Vec<bool>,
}

impl WarpPlan {
    /// Inverts `transform` and records the bilinear taps of every
    /// destination cell. With `clamp`, out-of-range source coordinates are
    /// pulled to the border and stay valid; otherwise they are invalid and
    /// sample zero.
    pub fn build(
        transform: &SpatialTransform,
        src_h: usize,
        src_w: usize,
        dst_h: usize,
        dst_w: usize,
        clamp: bool,
    ) -> Result<Self> {
        if src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0 {
            return Err(Error::Shape("warp grids must be non-empty".into()));
        }
        let inverse = transform.inverse()?;
        let max_r = (src_h - 1) as f64;
        let max_c = (src_w - 1) as f64;
        let mut taps = Vec::with_capacity(dst_h * dst_w);
        let mut valid = Vec::with_capacity(dst_h * dst_w);
        for p in 0..dst_h {
            for q in 0..dst_w {
                let src = inverse.apply((p as f64, q as f64));
                let inside = src.is_some_and(|(r, s)| {
                    (-BOUNDS_EPS..=max_r + BOUNDS_EPS).contains(&r)
                        && (-BOUNDS_EPS..=max_c + BOUNDS_EPS).contains(&s)
                });
                match src {
                    Some((r, s)) if inside || clamp => {
                        taps.push(bilinear_taps(r.clamp(0.0, max_r), s.clamp(0.0, max_c), src_w, src_h));
                        valid.push(true);
                    }
                    _ => {
                        taps.push([(0, 0.0); 4]);
                        valid.push(false);
                    }
                }
            }
        }
        Ok(Self {
            src_h,
            src_w,
            dst_h,
            dst_w,
            taps,
            valid,
        })
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn dst_shape(&self) -> (usize, usize) {
        (self.dst_h, self.dst_w)
    }

    pub fn src_shape(&self) -> (usize, usize) {
        (self.src_h, self.src_w)
    }

    /// Taps of destination cell `index` as `(source cell, weight)`.
    pub fn taps(&self, index: usize) -> &[(usize, f64); 4] {
        &self.taps[index]
    }

    /// Samples `src` onto the destination canvas.
    pub fn apply<T: Real>(&self, src: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if (src.height(), src.width()) != (self.src_h, self.src_w) {
            return Err(Error::Shape(format!(
                "warp plan built for {}x{}, map is {}x{}",
                self.src_h,
                self.src_w,
                src.height(),
                src.width()
            )));
        }
        let c = src.channels();
        let mut data = vec![T::zero(); self.dst_h * self.dst_w * c];
        let mut acc = vec![0.0f64; c];
        for (i, cell_taps) in self.taps.iter().enumerate() {
            if !self.valid[i] {
                continue;
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(si, w) in cell_taps {
                if w == 0.0 {
                    continue;
                }
                for (a, v) in acc.iter_mut().zip(src.cell_at(si)) {
                    *a += w * v.as_f64();
                }
            }
            for (o, a) in data[i * c..(i + 1) * c].iter_mut().zip(&acc) {
                *o = T::from_f64(*a);
            }
        }
        FeatureMap::new(self.dst_h, self.dst_w, c, data)
    }

    /// Adds `Wᵀ · grad_dst` into `grad_src`, where `W` is the sampling
    /// operator of [`apply`](Self::apply). Both buffers are `(cells, c)`
    /// row-major.
    pub fn accumulate_transpose(&self, grad_dst: &[f64], grad_src: &mut [f64], channels: usize) {
        for (i, cell_taps) in self.taps.iter().enumerate() {
            if !self.valid[i] {
                continue;
            }
            let g = &grad_dst[i * channels..(i + 1) * channels];
            for &(si, w) in cell_taps {
                if w == 0.0 {
                    continue;
                }
                let out = &mut grad_src[si * channels..(si + 1) * channels];
                for (o, gv) in out.iter_mut().zip(g) {
                    *o += w * gv;
                }
            }
        }
    }
}

fn bilinear_taps(r: f64, s: f64, width: usize, height: usize) -> [(usize, f64); 4] {
    let r0 = (floor(r) as usize).min(height - 1);
    let c0 = (floor(s) as usize).min(width - 1);
    let r1 = (r0 + 1).min(height - 1);
    let c1 = (c0 + 1).min(width - 1);
    let fr = r - r0 as f64;
    let fc = s - c0 as f64;
    [
        (r0 * width + c0, (1.0 - fr) * (1.0 - fc)),
        (r0 * width + c1, (1.0 - fr) * fc),
        (r1 * width + c0, fr * (1.0 - fc)),
        (r1 * width + c1, fr * fc),
    ]
}

/// Inverse-warps `src_map` onto a `dst_h × dst_w` canvas.
///
/// Destination cells whose preimage falls outside the source grid are zero
/// and marked invalid in the returned mask.
pub fn warp_to_canvas<T: Real>(
    src_map: &FeatureMap<T>,
    transform: impl Into<SpatialTransform>,
    dst_h: usize,
    dst_w: usize,
) -> Result<(FeatureMap<T>, Vec<bool>)> {
    let plan = WarpPlan::build(
        &transform.into(),
        src_map.height(),
        src_map.width(),
        dst_h,
        dst_w,
        false,
    )?;
    let warped = plan.apply(src_map)?;
    Ok((warped, plan.valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::AffineTransform;

    fn ramp(h: usize, w: usize, c: usize) -> FeatureMap<f64> {
        FeatureMap::from_fn(h, w, c, |r, q, ch| (r * 100 + q * 10 + ch) as f64).unwrap()
    }

    #[test]
    fn identity_warp() {
        let m = ramp(3, 4, 2);
        let (w, valid) = warp_to_canvas(&m, AffineTransform::identity(), 3, 4).unwrap();
        assert_eq!(w, m);
        assert!(valid.iter().all(|v| *v));
    }

    #[test]
    fn shift_down_one_row() {
        let m = ramp(3, 3, 1);
        let (w, valid) = warp_to_canvas(&m, AffineTransform::translation(1.0, 0.0), 3, 3).unwrap();
        for q in 0..3 {
            assert!(!valid[q]);
            assert_eq!(w.get(0, q, 0), 0.0);
        }
        for r in 1..3 {
            for q in 0..3 {
                assert!(valid[r * 3 + q]);
                assert_eq!(w.get(r, q, 0), m.get(r - 1, q, 0));
            }
        }
    }

    #[test]
    fn scaling_constant_map() {
        let m = FeatureMap::<f64>::filled(4, 4, 2, 0.3).unwrap();
        let scale = AffineTransform::from_rows([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]).unwrap();
        let (w, valid) = warp_to_canvas(&m, scale, 8, 8).unwrap();
        for i in 0..64 {
            let (p, q) = (i / 8, i % 8);
            let inside = p as f64 / 2.0 <= 3.0 && q as f64 / 2.0 <= 3.0;
            assert_eq!(valid[i], inside);
            let expected = if inside { 0.3 } else { 0.0 };
            assert!((w.get(p, q, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_canvas_rejected() {
        let m = ramp(2, 2, 1);
        assert!(matches!(
            warp_to_canvas(&m, AffineTransform::identity(), 0, 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn transpose_matches_adjoint() {
        // <W x, y> == <x, Wᵀ y> for a fractional transform
        let t = AffineTransform::from_rows([[0.9, 0.1, 0.3], [-0.2, 1.1, 0.4]]).unwrap();
        let plan = WarpPlan::build(&t.into(), 4, 5, 5, 4, false).unwrap();
        let x = FeatureMap::from_fn(4, 5, 2, |r, q, ch| ((r * 7 + q * 3 + ch) % 5) as f64 * 0.1).unwrap();
        let y: Vec<f64> = (0..5 * 4 * 2).map(|i| ((i * 13) % 7) as f64 * 0.2 - 0.5).collect();
        let wx = plan.apply(&x).unwrap();
        let lhs: f64 = wx.data().iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut wty = vec![0.0; 4 * 5 * 2];
        plan.accumulate_transpose(&y, &mut wty, 2);
        let rhs: f64 = x.data().iter().zip(&wty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
