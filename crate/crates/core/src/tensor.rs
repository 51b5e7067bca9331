//! Dense `height × width × channels` feature maps.
//!
//! Every stage of the pipeline exchanges [`FeatureMap`]s: backbone maps are
//! stored as `f32` (the on-disk precision) and part-response maps are kept as
//! `f64` while training so the analytic gradient can be checked against
//! finite differences.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;

use crate::{Error, Result};

/// Channels whose spatial maximum is at or below this value are left
/// untouched by [`FeatureMap::spatial_max_normalize`].
pub const DEAD_CHANNEL_EPS: f64 = 1e-12;

/// Scalar element type of a [`FeatureMap`].
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major `(h, w, c)` tensor of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    /// Wraps `data` after checking its length and that every value is finite.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Shape("feature map size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Shape("feature map size overflows".into()))?;
        Self::new(height, width, channels, vec![value; len])
    }

    /// Builds a map by evaluating `f(row, col, channel)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Number of spatial cells.
    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Channel vector at `(row, col)`.
    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[T] {
        self.cell_at(row * self.width + col)
    }

    /// Channel vector at flat cell index `row * width + col`.
    #[inline]
    pub fn cell_at(&self, index: usize) -> &[T] {
        let start = index * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Converts the element type, e.g. `f32` storage to `f64` compute.
    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Bilinear resize of every channel to `out_h × out_w`.
    ///
    /// Uses the align-corners-false convention: output sample `i` reads the
    /// input at `(i + 0.5) * in / out - 0.5`, clamped to the valid range.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "resize target must be non-empty, got {out_h}x{out_w}"
            )));
        }
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let rows = axis_taps(self.height, out_h);
        let cols = axis_taps(self.width, out_w);
        let c = self.channels;
        let mut data = vec![T::zero(); out_h * out_w * c];
        let mut acc = vec![0.0f64; c];
        for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (q, &(c0, c1, fc)) in cols.iter().enumerate() {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let taps = [
                    (r0, c0, (1.0 - fr) * (1.0 - fc)),
                    (r0, c1, (1.0 - fr) * fc),
                    (r1, c0, fr * (1.0 - fc)),
                    (r1, c1, fr * fc),
                ];
                for (tr, tc, w) in taps {
                    if w == 0.0 {
                        continue;
                    }
                    for (a, v) in acc.iter_mut().zip(self.cell(tr, tc)) {
                        *a += w * v.as_f64();
                    }
                }
                let out = &mut data[(r * out_w + q) * c..(r * out_w + q + 1) * c];
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o = T::from_f64(*a);
                }
            }
        }
        Self::new(out_h, out_w, c, data)
    }

    /// Divides each channel by its spatial maximum.
    ///
    /// Channels whose maximum does not exceed [`DEAD_CHANNEL_EPS`] are copied
    /// unchanged. Inputs must be non-negative.
    pub fn spatial_max_normalize(&self) -> Result<Self> {
        if self.data.iter().any(|v| *v < T::zero()) {
            return Err(Error::InvalidArgument(
                "spatial max-normalization requires non-negative values".into(),
            ));
        }
        let c = self.channels;
        let mut max = vec![T::zero(); c];
        for cell in self.data.chunks_exact(c) {
            for (m, v) in max.iter_mut().zip(cell) {
                if *v > *m {
                    *m = *v;
                }
            }
        }
        let mut data = self.data.clone();
        for cell in data.chunks_exact_mut(c) {
            for (v, m) in cell.iter_mut().zip(&max) {
                if m.as_f64() > DEAD_CHANNEL_EPS {
                    *v = *v / *m;
                }
            }
        }
        Self::new(self.height, self.width, c, data)
    }
}

/// For each output index, the two source taps and the weight of the second.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn map(h: usize, w: usize, c: usize, data: Vec<f64>) -> FeatureMap<f64> {
        FeatureMap::new(h, w, c, data).unwrap()
    }

    #[test]
    fn rejects_bad_length_and_non_finite() {
        assert!(matches!(
            FeatureMap::<f32>::new(2, 2, 1, vec![0.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            FeatureMap::<f32>::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(FeatureMap::<f32>::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn resize_identity_and_zero_target() {
        let m = map(2, 3, 2, (0..12).map(|v| v as f64).collect());
        assert_eq!(m.resize_bilinear(2, 3).unwrap(), m);
        assert!(matches!(m.resize_bilinear(0, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn resize_ramp_two_to_four() {
        let m = map(2, 1, 1, vec![0.0, 1.0]);
        let r = m.resize_bilinear(4, 1).unwrap();
        let expected = [0.0, 0.25, 0.75, 1.0];
        for (got, want) in r.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn resize_keeps_constants() {
        let m = FeatureMap::<f32>::filled(3, 5, 4, 0.7).unwrap();
        let r = m.resize_bilinear(7, 2).unwrap();
        assert_eq!(r.channels(), 4);
        assert!(r.data().iter().all(|v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn normalize_examples() {
        let m = map(2, 1, 1, vec![0.2, 0.4]);
        let n = m.spatial_max_normalize().unwrap();
        assert!((n.data()[0] - 0.5).abs() < 1e-12);
        assert!((n.data()[1] - 1.0).abs() < 1e-12);

        let zero = map(2, 2, 1, vec![0.0; 4]);
        assert_eq!(zero.spatial_max_normalize().unwrap(), zero);

        let neg = map(1, 2, 1, vec![0.1, -0.1]);
        assert!(neg.spatial_max_normalize().is_err());
    }

    #[test]
    fn normalize_channels_independently() {
        // cells: (1, 5), (2, 10)
        let m = map(2, 1, 2, vec![1.0, 5.0, 2.0, 10.0]);
        let n = m.spatial_max_normalize().unwrap();
        // scalar loop oracle
        let mut expected = vec![0.0; 4];
        for ch in 0..2 {
            let max = (0..2).map(|cell| m.data()[cell * 2 + ch]).fold(0.0, f64::max);
            for cell in 0..2 {
                expected[cell * 2 + ch] = m.data()[cell * 2 + ch] / max;
            }
        }
        assert_eq!(n.data(), &expected[..]);
        assert_eq!(n.data(), &[0.5, 0.5, 1.0, 1.0]);
    }
}
