//! Dense complex linear-algebra helpers shared by the estimators.
//!
//! All systems here are Hermitian by construction up to floating-point
//! assembly noise, so solves symmetrize first and then use a Cholesky
//! factorization; rank-deficient Hermitian systems go through an
//! eigendecomposition pseudo-inverse with a relative eigenvalue floor.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// `(m + m^H) / 2`; Gram assembly breaks exact Hermiticity at the 1e-16 level.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Solves `m x = rhs` for Hermitian positive-definite `m`.
pub fn solve_hermitian(m: &CMatrix, rhs: &CVector) -> Result<CVector> {
    let chol = hermitize(m)
        .cholesky()
        .ok_or_else(|| Error::numeric("Hermitian system is not positive definite"))?;
    Ok(chol.solve(rhs))
}

/// Solves `m X = rhs` with a matrix right-hand side.
pub fn solve_hermitian_matrix(m: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let chol = hermitize(m)
        .cholesky()
        .ok_or_else(|| Error::numeric("Hermitian system is not positive definite"))?;
    Ok(chol.solve(rhs))
}

/// Pseudo-inverse of a Hermitian PSD matrix via eigendecomposition.
///
/// Eigenvalues below `rel_floor * lambda_max` are treated as zero
/// (minimum-norm solve semantics). Also reports the condition estimate
/// `lambda_max / floor` used, so callers can surface it in errors.
pub struct HermitianPinv {
    pub pinv: CMatrix,
    pub lambda_max: f64,
    pub rank: usize,
}

pub fn hermitian_pinv(m: &CMatrix, rel_floor: f64) -> Result<HermitianPinv> {
    let sym = hermitize(m);
    let n = sym.nrows();
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if !lambda_max.is_finite() || lambda_max <= 0.0 {
        return Err(Error::numeric(format!(
            "Hermitian matrix is numerically zero or non-finite (lambda_max = {lambda_max})"
        )));
    }
    let floor = rel_floor * lambda_max;
    let mut rank = 0;
    let mut pinv = CMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > floor {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            let scale = Complex64::new(1.0 / lam, 0.0);
            // pinv += v * v^H / lam
            for i in 0..n {
                for j in 0..n {
                    pinv[(i, j)] += v[i] * v[j].conj() * scale;
                }
            }
        }
    }
    Ok(HermitianPinv {
        pinv,
        lambda_max,
        rank,
    })
}

/// Minimum-norm solve of a Hermitian PSD system through its
/// eigendecomposition, zeroing directions whose eigenvalue falls below
/// `rel_floor * lambda_max`.
pub fn solve_hermitian_floored(m: &CMatrix, rhs: &CVector, rel_floor: f64) -> Result<CVector> {
    let sym = hermitize(m);
    let n = sym.nrows();
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if !lambda_max.is_finite() || lambda_max <= 0.0 {
        return Err(Error::numeric(format!(
            "Hermitian system is numerically zero or non-finite (lambda_max = {lambda_max})"
        )));
    }
    let floor = rel_floor * lambda_max;
    let mut out = CVector::zeros(n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > floor {
            let v = eig.eigenvectors.column(k);
            let proj = v.dotc(rhs) / Complex64::new(lam, 0.0);
            out += v * proj;
        }
    }
    Ok(out)
}

/// Minimum-norm pseudo-inverse via SVD with a relative singular-value floor.
///
/// Preferred over squaring into the normal matrix when the operator itself is
/// available: the condition number is not squared.
pub fn svd_pinv(m: &CMatrix, rel_floor: f64) -> Result<CMatrix> {
    let svd = m.clone().svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::numeric("SVD did not produce U"))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::numeric("SVD did not produce V^H"))?;
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if !sigma_max.is_finite() || sigma_max <= 0.0 {
        return Err(Error::numeric(format!(
            "matrix is numerically zero or non-finite (sigma_max = {sigma_max})"
        )));
    }
    let floor = rel_floor * sigma_max;
    // pinv = V diag(1/sigma) U^H over the kept spectrum
    let mut scaled_uh = u.adjoint();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let inv = if s > floor { 1.0 / s } else { 0.0 };
        for c in 0..scaled_uh.ncols() {
            scaled_uh[(i, c)] *= inv;
        }
    }
    Ok(v_t.adjoint() * scaled_uh)
}

/// Smallest and largest eigenvalues of a Hermitian matrix (for PSD checks).
pub fn hermitian_eig_bounds(m: &CMatrix) -> (f64, f64) {
    let eig = hermitize(m).symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hpd(n: usize, seed: u64) -> CMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        &a * a.adjoint() + CMatrix::identity(n, n) * Complex64::new(0.1, 0.0)
    }

    #[test]
    fn hermitian_solve_roundtrip() {
        let m = random_hpd(8, 1);
        let x = CVector::from_fn(8, |i, _| Complex64::new(i as f64, -(i as f64)));
        let rhs = &m * &x;
        let got = solve_hermitian(&m, &rhs).unwrap();
        assert!((got - x).norm() < 1e-10);
    }

    #[test]
    fn pinv_recovers_inverse_for_full_rank() {
        let m = random_hpd(6, 2);
        let p = hermitian_pinv(&m, 1e-12).unwrap();
        assert_eq!(p.rank, 6);
        let id = &m * &p.pinv;
        assert!((id - CMatrix::identity(6, 6)).norm() < 1e-9);
    }

    #[test]
    fn pinv_handles_rank_deficiency() {
        // rank-2 PSD matrix from two outer products
        let v1 = CVector::from_fn(5, |i, _| Complex64::new(1.0 + i as f64, 0.3));
        let v2 = CVector::from_fn(5, |i, _| Complex64::new(0.2, 1.0 - i as f64));
        let m = &v1 * v1.adjoint() + &v2 * v2.adjoint();
        let p = hermitian_pinv(&m, 1e-12).unwrap();
        assert_eq!(p.rank, 2);
        // m * pinv * m == m on the range
        let back = &m * &p.pinv * &m;
        assert!((back - &m).norm() < 1e-9 * m.norm());
    }

    #[test]
    fn singular_solve_reports_error() {
        let m = CMatrix::zeros(3, 3);
        let rhs = CVector::zeros(3);
        assert!(solve_hermitian(&m, &rhs).is_err());
        assert!(hermitian_pinv(&m, 1e-12).is_err());
    }
}
