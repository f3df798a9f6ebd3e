//! Small dense real matrices (m ≤ 3 in practice) with symmetric
//! eigendecomposition.
//!
//! Weight dimensions in this crate are tiny (the suite ships m ∈ {1, 2, 3}),
//! so everything here is a straightforward dense implementation: Gauss–Jordan
//! inversion, closed-form symmetric eigenvalues for m ≤ 2, and a cyclic
//! Jacobi iteration for larger m. No external linear-algebra dependency is
//! pulled in for three-by-three matrices.
//!
//! Spectral norms of *nonsymmetric* products (for instance `A_Q W^{-1}(y)`)
//! go through `sqrt(λ_max(MᵀM))`, which only ever needs the symmetric path.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tolerances::EIGEN_TOL;

/// Dense row-major m×m real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    m: usize,
    a: Vec<f64>,
}

impl Mat {
    /// Zero matrix of size m×m.
    pub fn zeros(m: usize) -> Self {
        Mat { m, a: vec![0.0; m * m] }
    }

    /// Identity matrix of size m×m.
    pub fn identity(m: usize) -> Self {
        let mut out = Mat::zeros(m);
        for i in 0..m {
            out.set(i, i, 1.0);
        }
        out
    }

    /// Diagonal matrix from the given entries.
    pub fn diagonal(d: &[f64]) -> Self {
        let mut out = Mat::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            out.set(i, i, v);
        }
        out
    }

    /// Build from rows; panics if the rows are not square.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let m = rows.len();
        let mut a = Vec::with_capacity(m * m);
        for r in rows {
            assert_eq!(r.len(), m, "matrix rows must form a square");
            a.extend_from_slice(r);
        }
        Mat { m, a }
    }

    /// Build from a row-major flat slice of length m².
    pub fn from_flat(m: usize, a: &[f64]) -> Self {
        assert_eq!(a.len(), m * m, "flat matrix data must have length m²");
        Mat { m, a: a.to_vec() }
    }

    /// Matrix dimension m.
    pub fn dim(&self) -> usize {
        self.m
    }

    /// Entry (i, j).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.m + j]
    }

    /// Set entry (i, j).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.m + j] = v;
    }

    /// Raw row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.a
    }

    /// Transpose.
    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.m);
        for i in 0..self.m {
            for j in 0..self.m {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.m, other.m, "dimension mismatch in matrix product");
        let m = self.m;
        let mut out = Mat::zeros(m);
        for i in 0..m {
            for k in 0..m {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..m {
                    out.a[i * m + j] += aik * other.get(k, j);
                }
            }
        }
        out
    }

    /// Entrywise sum.
    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.m, other.m);
        let mut out = self.clone();
        for (x, y) in out.a.iter_mut().zip(&other.a) {
            *x += y;
        }
        out
    }

    /// Entrywise scale.
    pub fn scale(&self, c: f64) -> Mat {
        let mut out = self.clone();
        for x in &mut out.a {
            *x *= c;
        }
        out
    }

    /// Matrix-vector product on a real vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.m);
        (0..self.m)
            .map(|i| (0..self.m).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Matrix-vector product on a complex vector (real matrix applied to the
    /// real and imaginary parts independently).
    pub fn mul_cvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.m);
        (0..self.m)
            .map(|i| {
                (0..self.m)
                    .map(|j| v[j] * self.get(i, j))
                    .sum::<Complex64>()
            })
            .collect()
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Symmetry check against a relative tolerance.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.frobenius().max(1.0);
        for i in 0..self.m {
            for j in (i + 1)..self.m {
                if (self.get(i, j) - self.get(j, i)).abs() > rel_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Mat> {
        let m = self.m;
        let mut work = self.clone();
        let mut inv = Mat::identity(m);
        let scale = self.frobenius().max(f64::MIN_POSITIVE);
        for col in 0..m {
            // Partial pivot: largest magnitude on or below the diagonal.
            let pivot_row = (col..m)
                .max_by(|&r1, &r2| {
                    work.get(r1, col)
                        .abs()
                        .total_cmp(&work.get(r2, col).abs())
                })
                .unwrap();
            let pivot = work.get(pivot_row, col);
            if pivot.abs() <= 1e-300 * scale.max(1.0) {
                return Err(Error::Singular(format!(
                    "pivot {pivot:.3e} in column {col} (scale {scale:.3e})"
                )));
            }
            if pivot_row != col {
                for j in 0..m {
                    let (x, y) = (work.get(col, j), work.get(pivot_row, j));
                    work.set(col, j, y);
                    work.set(pivot_row, j, x);
                    let (x, y) = (inv.get(col, j), inv.get(pivot_row, j));
                    inv.set(col, j, y);
                    inv.set(pivot_row, j, x);
                }
            }
            let d = work.get(col, col);
            for j in 0..m {
                work.set(col, j, work.get(col, j) / d);
                inv.set(col, j, inv.get(col, j) / d);
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = work.get(r, col);
                if f == 0.0 {
                    continue;
                }
                for j in 0..m {
                    work.set(r, j, work.get(r, j) - f * work.get(col, j));
                    inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
                }
            }
        }
        Ok(inv)
    }

    /// Determinant (closed form up to 3×3, the only sizes shipped).
    pub fn det(&self) -> f64 {
        match self.m {
            0 => 1.0,
            1 => self.get(0, 0),
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(1, 0),
            3 => {
                let a = |i: usize, j: usize| self.get(i, j);
                a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                    - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                    + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
            }
            _ => lu_det(self),
        }
    }
}

/// Determinant by LU with partial pivoting, for the (unshipped) m > 3 case.
fn lu_det(m: &Mat) -> f64 {
    let n = m.dim();
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| a.get(r1, col).abs().total_cmp(&a.get(r2, col).abs()))
            .unwrap();
        let pivot = a.get(pivot_row, col);
        if pivot == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            det = -det;
            for j in 0..n {
                let (x, y) = (a.get(col, j), a.get(pivot_row, j));
                a.set(col, j, y);
                a.set(pivot_row, j, x);
            }
        }
        det *= pivot;
        for r in (col + 1)..n {
            let f = a.get(r, col) / pivot;
            for j in col..n {
                a.set(r, j, a.get(r, j) - f * a.get(col, j));
            }
        }
    }
    det
}

/// Eigenvalues of a symmetric matrix, ascending.
///
/// Closed form for m ≤ 2; cyclic Jacobi (tolerance [`EIGEN_TOL`]) above.
pub fn sym_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    match a.dim() {
        0 => Ok(vec![]),
        1 => Ok(vec![a.get(0, 0)]),
        2 => {
            let (p, q, r) = (a.get(0, 0), a.get(1, 1), 0.5 * (a.get(0, 1) + a.get(1, 0)));
            let mean = 0.5 * (p + q);
            let disc = (0.5 * (p - q)).hypot(r);
            Ok(vec![mean - disc, mean + disc])
        }
        _ => {
            let (vals, _) = sym_eigen(a)?;
            Ok(vals)
        }
    }
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns `(values ascending, V)` with `a = V diag(values) Vᵀ` and V
/// orthonormal columns. Fails only if the off-diagonal mass refuses to drop
/// below [`EIGEN_TOL`] relative within the sweep cap, which for m ≤ 3 does
/// not happen for finite inputs.
pub fn sym_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let m = a.dim();
    let mut w = a.clone();
    // Symmetrize defensively: callers pass products like V D Vᵀ whose
    // rounding can leave ~1 ulp of asymmetry.
    for i in 0..m {
        for j in (i + 1)..m {
            let s = 0.5 * (w.get(i, j) + w.get(j, i));
            w.set(i, j, s);
            w.set(j, i, s);
        }
    }
    let mut v = Mat::identity(m);
    let scale = w.frobenius().max(f64::MIN_POSITIVE);
    const MAX_SWEEPS: usize = 60;
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                off += w.get(i, j) * w.get(i, j);
            }
        }
        if (2.0 * off).sqrt() <= EIGEN_TOL * scale {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = w.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let tau = (w.get(q, q) - w.get(p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of w, and columns of v.
                for k in 0..m {
                    let wkp = w.get(k, p);
                    let wkq = w.get(k, q);
                    w.set(k, p, c * wkp - s * wkq);
                    w.set(k, q, s * wkp + c * wkq);
                }
                for k in 0..m {
                    let wpk = w.get(p, k);
                    let wqk = w.get(q, k);
                    w.set(p, k, c * wpk - s * wqk);
                    w.set(q, k, s * wpk + c * wqk);
                }
                for k in 0..m {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut off = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            off += w.get(i, j) * w.get(i, j);
        }
    }
    if (2.0 * off).sqrt() > 1e3 * EIGEN_TOL * scale {
        return Err(Error::Numerical(format!(
            "Jacobi iteration stalled with off-diagonal {:.3e} (scale {:.3e})",
            (2.0 * off).sqrt(),
            scale
        )));
    }
    // Sort ascending, permuting eigenvector columns alongside.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| w.get(i, i).total_cmp(&w.get(j, j)));
    let vals: Vec<f64> = order.iter().map(|&i| w.get(i, i)).collect();
    let mut vecs = Mat::zeros(m);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..m {
            vecs.set(r, new_col, v.get(r, old_col));
        }
    }
    Ok((vals, vecs))
}

/// Spectral (operator 2-) norm of a general square matrix via
/// `sqrt(λ_max(MᵀM))`.
pub fn spectral_norm(m: &Mat) -> f64 {
    let g = m.transpose().mul(m);
    match sym_eigenvalues(&g) {
        Ok(vals) => vals.last().copied().unwrap_or(0.0).max(0.0).sqrt(),
        // Unreachable for finite inputs of the shipped sizes; fall back to
        // the Frobenius upper bound rather than panicking mid-suite.
        Err(_) => m.frobenius(),
    }
}

/// Symmetric positive-(semi)definite square root via eigendecomposition.
///
/// Fails if an eigenvalue is materially negative.
pub fn sym_sqrt(a: &Mat) -> Result<Mat> {
    let (vals, v) = sym_eigen(a)?;
    let scale = vals.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let mut d = Mat::zeros(a.dim());
    for (i, &lam) in vals.iter().enumerate() {
        if lam < -1e-10 * scale.max(1.0) {
            return Err(Error::Singular(format!(
                "negative eigenvalue {lam:.3e} in matrix square root"
            )));
        }
        d.set(i, i, lam.max(0.0).sqrt());
    }
    Ok(v.mul(&d).mul(&v.transpose()))
}

/// Euclidean norm of a real vector.
pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean norm of a complex vector.
pub fn cvec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_2x2_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let a = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let vals = sym_eigenvalues(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_matches_closed_form_on_3x3_diagonal_plus_rotation() {
        // Conjugate diag(1,4,9) by a rotation in the (0,1) plane; spectrum
        // is invariant.
        let th: f64 = 0.7;
        let (c, s) = (th.cos(), th.sin());
        let r = Mat::from_rows(&[&[c, -s, 0.0], &[s, c, 0.0], &[0.0, 0.0, 1.0]]);
        let d = Mat::diagonal(&[1.0, 4.0, 9.0]);
        let a = r.mul(&d).mul(&r.transpose());
        let (vals, v) = sym_eigen(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-10);
        assert!((vals[1] - 4.0).abs() < 1e-10);
        assert!((vals[2] - 9.0).abs() < 1e-10);
        // Reconstruction.
        let recon = v.mul(&Mat::diagonal(&vals)).mul(&v.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((recon.get(i, j) - a.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let a = Mat::from_rows(&[&[3.0, 1.0, 0.0], &[1.0, 2.0, 0.5], &[0.0, 0.5, 1.0]]);
        let inv = a.inverse().unwrap();
        let prod = a.mul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_reports_error() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(a.inverse().is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal_is_max_abs() {
        let a = Mat::diagonal(&[-5.0, 3.0]);
        assert!((spectral_norm(&a) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let a = Mat::from_rows(&[&[4.0, 1.0], &[1.0, 2.0]]);
        let s = sym_sqrt(&a).unwrap();
        let sq = s.mul(&s);
        for i in 0..2 {
            for j in 0..2 {
                assert!((sq.get(i, j) - a.get(i, j)).abs() < 1e-12);
            }
        }
    }
}
