//! Dense linear-algebra helpers on top of `nalgebra`.

use alloc::format;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Diagonal jitter ladder tried, in order, when a plain Cholesky fails.
/// Values are relative to the mean absolute diagonal.
pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Falls back to the jitter ladder before giving up. Returns the factor and the
/// absolute jitter that was added (0 when none was needed).
pub fn cholesky_lower(m: &Matrix, what: &str) -> Result<(Matrix, f64)> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what}: matrix has non-finite entries")));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok((c.l(), 0.0));
    }
    let n = m.nrows().max(1);
    let scale = (m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1e-300);
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = shifted.cholesky() {
            return Ok((c.l(), jitter));
        }
    }
    Err(Error::Numerical(format!(
        "{what}: Cholesky factorization failed (smallest eigenvalue {:.3e})",
        min_eigenvalue(m)
    )))
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    l.solve_lower_triangular(b)
        .ok_or_else(|| Error::Numerical("singular lower-triangular system".into()))
}

/// Solves `U x = b` for upper-triangular `U`.
pub fn solve_upper(u: &Matrix, b: &Matrix) -> Result<Matrix> {
    u.solve_upper_triangular(b)
        .ok_or_else(|| Error::Numerical("singular upper-triangular system".into()))
}

/// Solves `M X = B` given the lower Cholesky factor `L` of `M`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let y = solve_lower(l, b)?;
    solve_upper(&l.transpose(), &y)
}

/// Inverse of an SPD matrix through its Cholesky factor, symmetrized.
pub fn spd_inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    let (l, _) = cholesky_lower(m, what)?;
    let mut inv = cholesky_solve(&l, &Matrix::identity(m.nrows(), m.nrows()))?;
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().min()
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().max()
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn from_diagonal(d: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(d))
}
