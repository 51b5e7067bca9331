use alloc::format;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `(row, col)` in grid coordinates.
pub type Point = (f64, f64);

const MIN_DET: f64 = 1e-9;

/// 2×3 matrix `θ` with `(p, q)ᵀ = θ · (r, s, 1)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    theta: [[f64; 3]; 2],
}

impl AffineTransform {
    /// Checks finiteness and that the linear block is invertible.
    pub fn from_rows(theta: [[f64; 3]; 2]) -> Result<Self> {
        if theta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine transform"));
        }
        let t = Self { theta };
        if t.linear_det().abs() <= MIN_DET {
            return Err(Error::Degenerate(format!(
                "affine linear block has determinant {}",
                t.linear_det()
            )));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            theta: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Shift by `rows` down and `cols` right.
    pub fn translation(rows: f64, cols: f64) -> Self {
        Self {
            theta: [[1.0, 0.0, rows], [0.0, 1.0, cols]],
        }
    }

    pub fn rows(&self) -> [[f64; 3]; 2] {
        self.theta
    }

    pub fn linear_det(&self) -> f64 {
        self.theta[0][0] * self.theta[1][1] - self.theta[0][1] * self.theta[1][0]
    }

    #[inline]
    pub fn apply(&self, (r, s): Point) -> Point {
        let t = &self.theta;
        (
            t[0][0] * r + t[0][1] * s + t[0][2],
            t[1][0] * r + t[1][1] * s + t[1][2],
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.linear_det();
        if det.abs() <= MIN_DET {
            return Err(Error::Degenerate("affine transform is not invertible".into()));
        }
        let [[a, b, tx], [c, d, ty]] = self.theta;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Self::from_rows([
            [ia, ib, -(ia * tx + ib * ty)],
            [ic, id, -(ic * tx + id * ty)],
        ])
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        let a = &self.theta;
        let b = &other.theta;
        let mut out = [[0.0; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
            out[i][2] += a[i][2];
        }
        Self::from_rows(out)
    }

    /// Largest absolute coefficient difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.theta
            .iter()
            .flatten()
            .zip(other.theta.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Projective map normalized so that `h[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    h: [[f64; 3]; 3],
}

impl Homography {
    pub fn from_rows(h: [[f64; 3]; 3]) -> Result<Self> {
        if h.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("homography"));
        }
        if det3(&h).abs() <= MIN_DET {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        Ok(Self { h })
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.h
    }

    /// Maps a point, or `None` when it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, (r, s): Point) -> Option<Point> {
        let h = &self.h;
        let w = h[2][0] * r + h[2][1] * s + h[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some((
            (h[0][0] * r + h[0][1] * s + h[0][2]) / w,
            (h[1][0] * r + h[1][1] * s + h[1][2]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.h;
        let det = det3(m);
        if det.abs() <= MIN_DET {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let scale = if adj[2][2].abs() > 1e-12 { adj[2][2] } else { det };
        let mut inv = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                inv[i][j] = adj[i][j] / scale;
            }
        }
        Self::from_rows(inv)
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Any transform the aligner can estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "lowercase")]
pub enum SpatialTransform {
    Affine(AffineTransform),
    Homography(Homography),
}

impl SpatialTransform {
    #[inline]
    pub fn apply(&self, p: Point) -> Option<Point> {
        match self {
            SpatialTransform::Affine(a) => Some(a.apply(p)),
            SpatialTransform::Homography(h) => h.apply(p),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(match self {
            SpatialTransform::Affine(a) => SpatialTransform::Affine(a.inverse()?),
            SpatialTransform::Homography(h) => SpatialTransform::Homography(h.inverse()?),
        })
    }

    pub fn as_affine(&self) -> Option<&AffineTransform> {
        match self {
            SpatialTransform::Affine(a) => Some(a),
            SpatialTransform::Homography(_) => None,
        }
    }
}

impl From<AffineTransform> for SpatialTransform {
    fn from(a: AffineTransform) -> Self {
        SpatialTransform::Affine(a)
    }
}

impl From<Homography> for SpatialTransform {
    fn from(h: Homography) -> Self {
        SpatialTransform::Homography(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_inverse_roundtrip() {
        let t = AffineTransform::from_rows([[1.1, 0.2, 3.0], [-0.1, 0.9, -2.0]]).unwrap();
        let inv = t.inverse().unwrap();
        let p = (4.0, -1.5);
        let back = inv.apply(t.apply(p));
        assert!((back.0 - p.0).abs() < 1e-12 && (back.1 - p.1).abs() < 1e-12);
        assert!(t.compose(&inv).unwrap().max_abs_diff(&AffineTransform::identity()) < 1e-12);
    }

    #[test]
    fn singular_affine_rejected() {
        assert!(matches!(
            AffineTransform::from_rows([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]),
            Err(Error::Degenerate(_))
        ));
        assert!(AffineTransform::from_rows([[f64::NAN, 0.0, 0.0], [0.0, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn homography_inverse_roundtrip() {
        let h = Homography::from_rows([[1.0, 0.1, 2.0], [0.05, 0.95, -1.0], [0.001, 0.002, 1.0]]).unwrap();
        let inv = h.inverse().unwrap();
        let p = (3.0, 5.0);
        let back = inv.apply(h.apply(p).unwrap()).unwrap();
        assert!((back.0 - p.0).abs() < 1e-9 && (back.1 - p.1).abs() < 1e-9);
    }
}
