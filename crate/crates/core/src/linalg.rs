//! Small dense linear solves.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
///
/// `a` is `n × n` and `b` is `n × m`, both row-major. Returns `X` (`n × m`).
/// Fails when a pivot falls below `1e-12` times the largest entry of `a`.
pub fn solve(a: &[f64], b: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n * m {
        return Err(Error::Shape(format!(
            "solve expects {n}x{n} and {n}x{m} operands"
        )));
    }
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Degenerate("zero or non-finite system matrix".into()));
    }
    let tol = 1e-12 * scale;

    for col in 0..n {
        let (pivot, pivot_abs) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= tol {
            return Err(Error::Degenerate(format!("singular system at column {col}")));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            for k in 0..m {
                x.swap(col * m + k, pivot * m + k);
            }
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            for k in 0..m {
                x[r * m + k] -= f * x[col * m + k];
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[col * n + col];
        for k in 0..m {
            let mut s = x[col * m + k];
            for j in col + 1..n {
                s -= a[col * n + j] * x[j * m + k];
            }
            x[col * m + k] = s / d;
        }
    }
    Ok(x)
}

/// Least squares `min ‖D X − Y‖² + λ Σ_{j ∉ unpenalized} ‖X_j‖²` via the
/// normal equations. `d` is `rows × n`, `y` is `rows × m`.
pub fn ridge_least_squares(
    d: &[f64],
    y: &[f64],
    rows: usize,
    n: usize,
    m: usize,
    lambda: f64,
    unpenalized: &[usize],
) -> Result<Vec<f64>> {
    if d.len() != rows * n || y.len() != rows * m {
        return Err(Error::Shape("least squares operand sizes disagree".into()));
    }
    let mut gram = alloc::vec![0.0; n * n];
    let mut rhs = alloc::vec![0.0; n * m];
    for r in 0..rows {
        let dr = &d[r * n..(r + 1) * n];
        let yr = &y[r * m..(r + 1) * m];
        for i in 0..n {
            if dr[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                gram[i * n + j] += dr[i] * dr[j];
            }
            for k in 0..m {
                rhs[i * m + k] += dr[i] * yr[k];
            }
        }
    }
    for i in 0..n {
        if !unpenalized.contains(&i) {
            gram[i * n + i] += lambda;
        }
    }
    solve(&gram, &rhs, n, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // 2x + y = 5, x + 3y = 10 -> x = 1, y = 3
        let x = solve(&[2.0, 1.0, 1.0, 3.0], &[5.0, 10.0], 2, 1).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn needs_pivoting() {
        let x = solve(&[0.0, 1.0, 1.0, 0.0], &[2.0, 3.0], 2, 1).unwrap();
        assert_eq!(x, [3.0, 2.0]);
    }

    #[test]
    fn singular_is_degenerate() {
        assert!(matches!(
            solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0], 2, 1),
            Err(Error::Degenerate(_))
        ));
    }
}
