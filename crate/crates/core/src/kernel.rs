//! Kernel functions for incident and scattered sound fields and their Gram
//! matrices over microphone positions, including the radial normal-derivative
//! Grams that feed the boundary constraint.
//!
//! Three kernels are provided:
//! * the diffuse-field (Bessel) kernel `j_0(k |r - r'|)`;
//! * the multidirectional kernel, a non-negative mixture over bias directions
//!   `d_q` of directionally sharpened terms
//!   `j_0(sqrt(z^T z)) / C(zeta_q)` with `z = k(r - r') - i zeta_q d_q`,
//!   where `z^T z` is the unconjugated bilinear square (complex-analytic in
//!   `zeta`, which is what makes the `C(zeta) = sinh(zeta)/zeta` normalization
//!   exact at `r = r'`) and the principal square-root branch is irrelevant
//!   because `j_0` is even;
//! * the source-region kernel, the spatial correlation of a uniform
//!   distribution of virtual point sources inside the scatterer, expanded on
//!   the radiating basis `psi_{nu,mu}(r) = h_nu(k|r|) Y_{nu,mu}(r/|r|)` with
//!   analytic modal weights `xi_nu`.
//!
//! Normal derivatives are taken along the outward radial direction at the
//! first argument, which on a sphere is the boundary normal.

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{DirectionGrid, MicArray};
use crate::linalg::CMatrix;
use crate::special::{
    sinc_sph_complex, sph_bessel_j_upto, sph_hankel1_deriv_upto, sph_hankel1_upto, sph_j1_ratio,
    sph_harmonics_upto, UnitDirection, MAX_ORDER,
};

/// Frequency, sound speed, and the wavenumber derived from them.
///
/// The wavenumber is always recomputed as `2 pi f / c` so the three can never
/// disagree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveContext {
    frequency_hz: f64,
    sound_speed_mps: f64,
}

impl WaveContext {
    pub fn new(frequency_hz: f64, sound_speed_mps: f64) -> Result<Self> {
        if !(frequency_hz > 0.0 && frequency_hz.is_finite()) {
            return Err(Error::validation(format!(
                "frequency must be positive, got {frequency_hz}"
            )));
        }
        if !(sound_speed_mps > 0.0 && sound_speed_mps.is_finite()) {
            return Err(Error::validation(format!(
                "sound speed must be positive, got {sound_speed_mps}"
            )));
        }
        Ok(WaveContext {
            frequency_hz,
            sound_speed_mps,
        })
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    pub fn sound_speed_mps(&self) -> f64 {
        self.sound_speed_mps
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz / self.sound_speed_mps
    }
}

/// Parameters of the multidirectional kernel: per-direction mixture weights
/// `gamma_q >= 0` and concentrations `zeta_q >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdParams {
    pub grid: DirectionGrid,
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl MdParams {
    pub fn new(grid: DirectionGrid, gamma: Vec<f64>, zeta: Vec<f64>) -> Result<Self> {
        if gamma.len() != grid.len() || zeta.len() != grid.len() {
            return Err(Error::validation(format!(
                "gamma/zeta lengths ({}, {}) must equal the direction count {}",
                gamma.len(),
                zeta.len(),
                grid.len()
            )));
        }
        if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::validation("gamma entries must be finite and >= 0"));
        }
        if zeta.iter().any(|z| !z.is_finite() || *z < 0.0) {
            return Err(Error::validation("zeta entries must be finite and >= 0"));
        }
        Ok(MdParams { grid, gamma, zeta })
    }
}

/// Modal-weight mode of the source-region kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrWeightMode {
    /// Closed-form weights of a uniform source ball.
    Analytic,
    /// All weights 1: the scattered model spans the plain radiating basis.
    Unit,
}

/// Source-region kernel parameters: scatterer radius, series truncation, and
/// weight mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SrParams {
    pub radius_m: f64,
    pub n_ext: usize,
    pub weight_mode: SrWeightMode,
}

impl SrParams {
    pub fn new(radius_m: f64, n_ext: usize, weight_mode: SrWeightMode) -> Result<Self> {
        if !(radius_m > 0.0 && radius_m.is_finite()) {
            return Err(Error::validation("source-region radius must be positive"));
        }
        if n_ext + 1 > MAX_ORDER {
            return Err(Error::validation(format!(
                "n_ext {n_ext} exceeds the supported order ceiling {MAX_ORDER}"
            )));
        }
        Ok(SrParams {
            radius_m,
            n_ext,
            weight_mode,
        })
    }
}

/// Kernel selector used by the estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Bessel,
    MultiDirectional(MdParams),
    SourceRegion(SrParams),
}

/// A kernel Gram matrix over microphone positions together with the matrix of
/// radial normal derivatives at the first argument.
#[derive(Debug, Clone)]
pub struct GramPair {
    pub k: CMatrix,
    pub dk_dn: CMatrix,
}

/// `C(zeta)`: 1 at zero, `sinh(zeta)/zeta` otherwise.
fn md_normalizer(zeta: f64) -> f64 {
    if zeta == 0.0 {
        1.0
    } else {
        zeta.sinh() / zeta
    }
}

/// Unconjugated bilinear square `z^T z` for `z = k*delta + i*zeta*d`.
///
/// The sign pairs the bias with the `exp(-i omega t)` time convention so
/// that `d` is the direction of arrival: in the strong-concentration limit
/// the term tends to `exp(-i k d . delta)`, the covariance of a plane wave
/// arriving from `d` (propagating toward `-d`).
fn md_bilinear_square(k: f64, delta: &Vector3<f64>, zeta: f64, d: &UnitDirection) -> Complex64 {
    let d2 = delta.norm_squared();
    let dd = delta.x * d.x() + delta.y * d.y() + delta.z * d.z();
    Complex64::new(k * k * d2 - zeta * zeta, 2.0 * k * zeta * dd)
}

/// Diffuse-field kernel `j_0(k |r - r'|)`; real-valued and symmetric.
pub fn bessel_kernel(r: &Vector3<f64>, rp: &Vector3<f64>, ctx: &WaveContext) -> Complex64 {
    let x = ctx.wavenumber() * (r - rp).norm();
    sinc_sph_complex(Complex64::new(x, 0.0))
}

/// One directional term of the multidirectional kernel at unit weight.
fn md_term(
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    ctx: &WaveContext,
    d: &UnitDirection,
    zeta: f64,
) -> Complex64 {
    let delta = r - rp;
    let w2 = md_bilinear_square(ctx.wavenumber(), &delta, zeta, d);
    sinc_sph_complex(w2.sqrt()) / md_normalizer(zeta)
}

/// Radial normal derivative of one directional term at `r`.
fn md_term_normal_deriv(
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    ctx: &WaveContext,
    d: &UnitDirection,
    zeta: f64,
    normal: &Vector3<f64>,
) -> Complex64 {
    let k = ctx.wavenumber();
    let delta = r - rp;
    let w2 = md_bilinear_square(k, &delta, zeta, d);
    let w = w2.sqrt();
    // grad_r j_0(w) = -j_1(w)/w * k * z, with z = k*delta + i*zeta*d
    let zn = Complex64::new(
        k * (delta.x * normal.x + delta.y * normal.y + delta.z * normal.z),
        zeta * (d.x() * normal.x + d.y() * normal.y + d.z() * normal.z),
    );
    -k * sph_j1_ratio(w) * zn / md_normalizer(zeta)
}

/// Multidirectional kernel `sum_q gamma_q j_0(sqrt(z^T z)) / C(zeta_q)`.
pub fn md_kernel(
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    ctx: &WaveContext,
    params: &MdParams,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (q, d) in params.grid.directions().iter().enumerate() {
        if params.gamma[q] == 0.0 {
            continue;
        }
        acc += params.gamma[q] * md_term(r, rp, ctx, d, params.zeta[q]);
    }
    acc
}

/// Modal weight of the source-region kernel.
///
/// Analytic mode evaluates
/// `(3 k^2 / 8 pi) [ j_nu(kR)^2 - j_{nu-1}(kR) j_{nu+1}(kR) ]`,
/// the closed form of `k^2 int_0^R r^2 j_nu(kr)^2 w(r) dr` with the uniform
/// ball density `w = 3/(4 pi R^3)`; `j_{-1}(x) = cos(x)/x` extends the formula
/// to `nu = 0`. Unit mode returns 1.
pub fn sr_weight(nu: usize, ctx: &WaveContext, radius_m: f64, mode: SrWeightMode) -> f64 {
    match mode {
        SrWeightMode::Unit => 1.0,
        SrWeightMode::Analytic => {
            let k = ctx.wavenumber();
            let x = k * radius_m;
            let j = sph_bessel_j_upto(nu + 1, x);
            let j_prev = if nu == 0 {
                if x == 0.0 {
                    // limit of cos(x)/x is singular; with k>0 and R>0 this
                    // branch is unreachable, kept for totality
                    f64::INFINITY
                } else {
                    x.cos() / x
                }
            } else {
                j[nu - 1]
            };
            3.0 * k * k / (8.0 * std::f64::consts::PI) * (j[nu] * j[nu] - j_prev * j[nu + 1])
        }
    }
}

/// Modal weights for every packed index `nu^2 + nu + mu` up to `n_ext`.
pub(crate) fn sr_xi_packed(ctx: &WaveContext, sr: &SrParams) -> Vec<f64> {
    let mut xi = Vec::with_capacity((sr.n_ext + 1) * (sr.n_ext + 1));
    for nu in 0..=sr.n_ext {
        let w = sr_weight(nu, ctx, sr.radius_m, sr.weight_mode);
        for _ in 0..(2 * nu + 1) {
            xi.push(w);
        }
    }
    xi
}

/// Radiating-basis rows `psi_{nu,mu}` and radial-derivative rows
/// `psi'_{nu,mu}` for a list of positions, packed as `points x (n_ext+1)^2`
/// matrices.
pub(crate) struct SrBasis {
    pub psi: CMatrix,
    pub dpsi: CMatrix,
    pub xi: Vec<f64>,
}

pub(crate) fn sr_basis(
    positions: &[Vector3<f64>],
    ctx: &WaveContext,
    sr: &SrParams,
) -> Result<SrBasis> {
    let k = ctx.wavenumber();
    let n = sr.n_ext;
    let cols = (n + 1) * (n + 1);
    let mut psi = CMatrix::zeros(positions.len(), cols);
    let mut dpsi = CMatrix::zeros(positions.len(), cols);
    for (row, p) in positions.iter().enumerate() {
        let radius = p.norm();
        if radius == 0.0 {
            return Err(Error::numeric(
                "radiating basis is singular at the origin (zero-radius position)",
            ));
        }
        let dir = UnitDirection::from_vector([p.x, p.y, p.z])?;
        let harm = sph_harmonics_upto(n, &dir);
        let h = sph_hankel1_upto(n, k * radius)?;
        let hd = sph_hankel1_deriv_upto(n, k * radius)?;
        for nu in 0..=n {
            for mu in -(nu as i32)..=(nu as i32) {
                let idx = (nu * nu + nu) as i64 + mu as i64;
                let idx = idx as usize;
                psi[(row, idx)] = h[nu] * harm[idx];
                dpsi[(row, idx)] = k * hd[nu] * harm[idx];
            }
        }
    }
    Ok(SrBasis {
        psi,
        dpsi,
        xi: sr_xi_packed(ctx, sr),
    })
}

/// Source-region kernel: truncated radiating-basis expansion with modal
/// weights. Both arguments must be away from the origin.
pub fn sr_kernel(
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    ctx: &WaveContext,
    params: &SrParams,
) -> Result<Complex64> {
    let basis = sr_basis(&[*r, *rp], ctx, params)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for idx in 0..basis.xi.len() {
        acc += basis.xi[idx] * basis.psi[(0, idx)] * basis.psi[(1, idx)].conj();
    }
    Ok(acc)
}

/// Kernel value at arbitrary positions (incident kernels and the
/// source-region kernel alike).
pub fn kernel_value(
    spec: &KernelSpec,
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    ctx: &WaveContext,
) -> Result<Complex64> {
    match spec {
        KernelSpec::Bessel => Ok(bessel_kernel(r, rp, ctx)),
        KernelSpec::MultiDirectional(p) => Ok(md_kernel(r, rp, ctx, p)),
        KernelSpec::SourceRegion(p) => sr_kernel(r, rp, ctx, p),
    }
}

/// Radial normal derivative `d kappa(r, rp) / d n(r)` with
/// `n = r / |r|`.
pub fn kernel_normal_deriv(
    spec: &KernelSpec,
    r: &Vector3<f64>,
    rp: &Vector3<f64>,
    ctx: &WaveContext,
) -> Result<Complex64> {
    let radius = r.norm();
    if radius == 0.0 {
        return Err(Error::numeric(
            "normal derivative undefined at the origin",
        ));
    }
    let n = r / radius;
    match spec {
        KernelSpec::Bessel => {
            let zero = UnitDirection::new([0.0, 0.0, 1.0]).expect("static");
            Ok(md_term_normal_deriv(r, rp, ctx, &zero, 0.0, &n))
        }
        KernelSpec::MultiDirectional(p) => {
            let mut acc = Complex64::new(0.0, 0.0);
            for (q, d) in p.grid.directions().iter().enumerate() {
                if p.gamma[q] == 0.0 {
                    continue;
                }
                acc += p.gamma[q] * md_term_normal_deriv(r, rp, ctx, d, p.zeta[q], &n);
            }
            Ok(acc)
        }
        KernelSpec::SourceRegion(p) => {
            let basis = sr_basis(&[*r, *rp], ctx, p)?;
            let mut acc = Complex64::new(0.0, 0.0);
            for idx in 0..basis.xi.len() {
                acc += basis.xi[idx] * basis.dpsi[(0, idx)] * basis.psi[(1, idx)].conj();
            }
            Ok(acc)
        }
    }
}

/// Gram matrix and normal-derivative Gram of a kernel over the microphone
/// positions. Rows parallelize; no shared mutable state.
pub fn gram(spec: &KernelSpec, array: &MicArray, ctx: &WaveContext) -> Result<GramPair> {
    match spec {
        KernelSpec::SourceRegion(p) => {
            // Split the modal weights symmetrically across both factors so
            // the products stay balanced: the radiating basis grows at the
            // rate the weights decay, and an unbalanced product inflates the
            // floating-point noise floor of the rank-deficient result.
            let basis = sr_basis(array.positions(), ctx, p)?;
            let sqrt_xi: Vec<f64> = basis.xi.iter().map(|x| x.max(0.0).sqrt()).collect();
            let psi_w = scale_columns(&basis.psi, &sqrt_xi);
            let dpsi_w = scale_columns(&basis.dpsi, &sqrt_xi);
            let k = &psi_w * psi_w.adjoint();
            let dk = &dpsi_w * psi_w.adjoint();
            Ok(GramPair { k, dk_dn: dk })
        }
        _ => {
            let m = array.len();
            let positions = array.positions();
            let rows: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..m)
                .into_par_iter()
                .map(|i| {
                    let mut krow = vec![Complex64::new(0.0, 0.0); m];
                    let mut drow = vec![Complex64::new(0.0, 0.0); m];
                    for j in 0..m {
                        krow[j] = kernel_value(spec, &positions[i], &positions[j], ctx)
                            .expect("incident kernels are total");
                        drow[j] = kernel_normal_deriv(spec, &positions[i], &positions[j], ctx)
                            .expect("microphones are off the origin");
                    }
                    (krow, drow)
                })
                .collect();
            let mut k = CMatrix::zeros(m, m);
            let mut dk = CMatrix::zeros(m, m);
            for (i, (krow, drow)) in rows.into_iter().enumerate() {
                for j in 0..m {
                    k[(i, j)] = krow[j];
                    dk[(i, j)] = drow[j];
                }
            }
            Ok(GramPair { k, dk_dn: dk })
        }
    }
}

/// `m * diag(w)`.
fn scale_columns(m: &CMatrix, w: &[f64]) -> CMatrix {
    let mut out = m.clone();
    for (c, &s) in w.iter().enumerate() {
        for r in 0..out.nrows() {
            out[(r, c)] *= s;
        }
    }
    out
}

/// Gram and normal-derivative Gram of a single multidirectional term at unit
/// weight; the mixture Gram is the gamma-weighted sum of these slices, which
/// lets optimizers refresh only the slice whose concentration changed.
pub(crate) fn md_direction_slices(
    array: &MicArray,
    ctx: &WaveContext,
    d: &UnitDirection,
    zeta: f64,
) -> (CMatrix, CMatrix) {
    let m = array.len();
    let positions = array.positions();
    let mut g = CMatrix::zeros(m, m);
    let mut dg = CMatrix::zeros(m, m);
    for i in 0..m {
        let n = positions[i] / positions[i].norm();
        for j in 0..m {
            g[(i, j)] = md_term(&positions[i], &positions[j], ctx, d, zeta);
            dg[(i, j)] = md_term_normal_deriv(&positions[i], &positions[j], ctx, d, zeta, &n);
        }
    }
    (g, dg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lebedev_order7, tdesign_60};
    use crate::linalg::hermitian_eig_bounds;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ctx_1khz() -> WaveContext {
        WaveContext::new(1000.0, 340.26).unwrap()
    }

    fn test_array() -> MicArray {
        tdesign_60().scaled(0.05).unwrap()
    }

    fn rand_point(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            scale * (rng.gen::<f64>() - 0.5),
            scale * (rng.gen::<f64>() - 0.5),
            scale * (rng.gen::<f64>() - 0.5),
        )
    }

    #[test]
    fn wave_context_wavenumber() {
        let ctx = ctx_1khz();
        assert_relative_eq!(ctx.wavenumber(), 2.0 * PI * 1000.0 / 340.26);
        assert!(WaveContext::new(0.0, 340.0).is_err());
        assert!(WaveContext::new(100.0, -1.0).is_err());
    }

    #[test]
    fn bessel_kernel_basics() {
        let ctx = ctx_1khz();
        let r = Vector3::new(0.1, 0.2, -0.05);
        assert_relative_eq!(bessel_kernel(&r, &r, &ctx).re, 1.0);
        // first zero: k |delta| = pi
        let k = ctx.wavenumber();
        let rp = r + Vector3::new(PI / k, 0.0, 0.0);
        assert!(bessel_kernel(&r, &rp, &ctx).norm() < 1e-14);
        // cross-check against the complex sinc on the real axis
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = rand_point(&mut rng, 0.3);
            let b = rand_point(&mut rng, 0.3);
            let expect = sinc_sph_complex(Complex64::new(k * (a - b).norm(), 0.0));
            assert!((bessel_kernel(&a, &b, &ctx) - expect).norm() < 1e-14);
        }
    }

    fn md_uniform(zeta: f64) -> MdParams {
        let grid = lebedev_order7();
        let q = grid.len();
        MdParams::new(grid, vec![1.0 / q as f64; q], vec![zeta; q]).unwrap()
    }

    #[test]
    fn md_kernel_zero_concentration_degenerates_to_bessel() {
        let ctx = ctx_1khz();
        let params = md_uniform(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = rand_point(&mut rng, 0.2);
            let b = rand_point(&mut rng, 0.2);
            let md = md_kernel(&a, &b, &ctx, &params);
            let bs = bessel_kernel(&a, &b, &ctx);
            assert!((md - bs).norm() < 1e-14);
        }
    }

    #[test]
    fn md_kernel_diagonal_sums_gamma() {
        let ctx = ctx_1khz();
        let params = md_uniform(20.0);
        let r = Vector3::new(0.05, 0.0, 0.0);
        let v = md_kernel(&r, &r, &ctx, &params);
        let total: f64 = params.gamma.iter().sum();
        assert_relative_eq!(v.re, total, max_relative = 1e-12);
        assert!(v.im.abs() < 1e-12);
    }

    #[test]
    fn md_kernel_single_direction_matches_direct_formula() {
        let ctx = ctx_1khz();
        let k = ctx.wavenumber();
        let d = UnitDirection::new([1.0, 0.0, 0.0]).unwrap();
        let zeta = 5.0;
        let grid = DirectionGrid::new(vec![d]).unwrap();
        let params = MdParams::new(grid, vec![1.0], vec![zeta]).unwrap();
        // displacement along the bias direction
        let a = Vector3::new(0.1, 0.0, 0.0);
        let b = Vector3::new(0.02, 0.0, 0.0);
        let delta = (a - b).x;
        // z = (k*delta + i*zeta, 0, 0): direct complex sinc evaluation
        let z = Complex64::new(k * delta, zeta);
        let expect = z.sin() / z / (zeta.sinh() / zeta);
        let got = md_kernel(&a, &b, &ctx, &params);
        assert!((got - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn md_kernel_linear_in_gamma() {
        let ctx = ctx_1khz();
        let grid = lebedev_order7();
        let q = grid.len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g1: Vec<f64> = (0..q).map(|_| rng.gen::<f64>()).collect();
        let g2: Vec<f64> = (0..q).map(|_| rng.gen::<f64>()).collect();
        let zeta: Vec<f64> = (0..q).map(|_| 30.0 * rng.gen::<f64>()).collect();
        let (a, b) = (2.0, 0.7);
        let mix: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
        let p1 = MdParams::new(grid.clone(), g1, zeta.clone()).unwrap();
        let p2 = MdParams::new(grid.clone(), g2, zeta.clone()).unwrap();
        let pm = MdParams::new(grid, mix, zeta).unwrap();
        let ra = Vector3::new(0.05, 0.01, 0.0);
        let rb = Vector3::new(-0.03, 0.02, 0.04);
        let lhs = md_kernel(&ra, &rb, &ctx, &pm);
        let rhs = a * md_kernel(&ra, &rb, &ctx, &p1) + b * md_kernel(&ra, &rb, &ctx, &p2);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    /// Adaptive Simpson quadrature with a relative target, an independent
    /// oracle for the modal weight integral.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: usize,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, m, left, tol / 2.0, depth - 1)
                    + recurse(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        let whole = simpson(f, a, b);
        let tol = rel_tol * whole.abs().max(1e-300);
        recurse(f, a, b, whole, tol, 48)
    }

    #[test]
    fn sr_weight_unit_mode_and_quadrature_oracle() {
        let ctx = ctx_1khz();
        assert_eq!(sr_weight(3, &ctx, 0.05, SrWeightMode::Unit), 1.0);

        // choose R so that kR = 1
        let k = ctx.wavenumber();
        let radius = 1.0 / k;
        for nu in [0usize, 1, 3] {
            let w = 3.0 / (4.0 * PI * radius.powi(3));
            let integrand = move |r: f64| {
                let j = crate::special::sph_bessel_j(nu, k * r);
                r * r * j * j * w
            };
            let oracle = k * k * adaptive_simpson(&integrand, 0.0, radius, 1e-12);
            let closed = sr_weight(nu, &ctx, radius, SrWeightMode::Analytic);
            assert_relative_eq!(closed, oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn sr_weight_decays_beyond_cutoff() {
        let ctx = ctx_1khz();
        let radius = 0.05; // kR ~ 0.92
        let cutoff = (std::f64::consts::E * ctx.wavenumber() * radius / 2.0).ceil() as usize;
        let mut prev = sr_weight(cutoff, &ctx, radius, SrWeightMode::Analytic);
        for nu in (cutoff + 1)..=(cutoff + 12) {
            let w = sr_weight(nu, &ctx, radius, SrWeightMode::Analytic);
            assert!(w < prev, "weight must decay at nu={nu}");
            assert!(w >= 0.0);
            prev = w;
        }
    }

    #[test]
    fn sr_kernel_hermitian_and_addition_theorem() {
        let ctx = ctx_1khz();
        let sr = SrParams::new(0.05, 8, SrWeightMode::Analytic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let mut a = rand_point(&mut rng, 0.4);
            let mut b = rand_point(&mut rng, 0.4);
            // keep well away from the origin
            a += Vector3::new(0.1, 0.0, 0.0);
            b -= Vector3::new(0.0, 0.1, 0.0);
            let kab = sr_kernel(&a, &b, &ctx, &sr).unwrap();
            let kba = sr_kernel(&b, &a, &ctx, &sr).unwrap();
            assert!((kab - kba.conj()).norm() < 1e-12 * kab.norm().max(1.0));

            // addition theorem: mu-sum collapses onto Legendre P_nu(cos Theta)
            let k = ctx.wavenumber();
            let ha = sph_hankel1_upto(sr.n_ext, k * a.norm()).unwrap();
            let hb = sph_hankel1_upto(sr.n_ext, k * b.norm()).unwrap();
            let cos_t = a.dot(&b) / (a.norm() * b.norm());
            // Legendre recurrence oracle
            let mut p_prev = 1.0;
            let mut p = cos_t;
            let mut expect = Complex64::new(0.0, 0.0);
            for nu in 0..=sr.n_ext {
                let pn = match nu {
                    0 => 1.0,
                    1 => cos_t,
                    _ => {
                        let pn = ((2 * nu - 1) as f64 * cos_t * p - (nu - 1) as f64 * p_prev)
                            / nu as f64;
                        p_prev = p;
                        p = pn;
                        pn
                    }
                };
                let xi = sr_weight(nu, &ctx, sr.radius_m, sr.weight_mode);
                expect += xi * (2 * nu + 1) as f64 / (4.0 * PI) * ha[nu] * hb[nu].conj() * pn;
            }
            assert!(
                (kab - expect).norm() < 1e-10 * expect.norm().max(1.0),
                "addition theorem mismatch: {kab} vs {expect}"
            );
        }
    }

    #[test]
    fn sr_kernel_rejects_origin() {
        let ctx = ctx_1khz();
        let sr = SrParams::new(0.05, 5, SrWeightMode::Analytic).unwrap();
        let origin = Vector3::zeros();
        let r = Vector3::new(0.1, 0.0, 0.0);
        assert!(sr_kernel(&origin, &r, &ctx, &sr).is_err());
    }

    #[test]
    fn sr_kernel_truncation_rates() {
        // The modal weights are evanescent, but on the sphere surface the
        // radiating basis grows at the matching rate, so the on-surface Gram
        // converges only polynomially (a few percent from order 5 to 10).
        // Away from the surface the (R/r)^(2 nu) evanescent factor takes
        // over: at 3.5R the order-5 truncation is already converged to 1e-6.
        let ctx = WaveContext::new(2000.0, 340.26).unwrap(); // kR ~ 1.85
        let sr5 = SrParams::new(0.05, 5, SrWeightMode::Analytic).unwrap();
        let sr10 = SrParams::new(0.05, 10, SrWeightMode::Analytic).unwrap();
        let arr = test_array();
        let g5 = gram(&KernelSpec::SourceRegion(sr5.clone()), &arr, &ctx).unwrap();
        let g10 = gram(&KernelSpec::SourceRegion(sr10.clone()), &arr, &ctx).unwrap();
        let on_surface = (&g5.k - &g10.k).norm() / g10.k.norm();
        assert!(on_surface < 0.05, "on-surface truncation change {on_surface}");
        assert!(on_surface > 1e-6, "surface convergence should be slow");

        let a = Vector3::new(0.175, 0.02, -0.01);
        let b = Vector3::new(-0.05, 0.17, 0.03);
        let k5 = sr_kernel(&a, &b, &ctx, &sr5).unwrap();
        let k10 = sr_kernel(&a, &b, &ctx, &sr10).unwrap();
        assert!(
            (k5 - k10).norm() / k10.norm() < 1e-6,
            "exterior truncation change {}",
            (k5 - k10).norm() / k10.norm()
        );
    }

    #[test]
    fn bessel_gram_real_symmetric_unit_diagonal() {
        let ctx = ctx_1khz();
        let arr = test_array();
        let g = gram(&KernelSpec::Bessel, &arr, &ctx).unwrap();
        for i in 0..arr.len() {
            assert_relative_eq!(g.k[(i, i)].re, 1.0, max_relative = 1e-14);
            for j in 0..arr.len() {
                assert!(g.k[(i, j)].im.abs() < 1e-14);
                assert!((g.k[(i, j)] - g.k[(j, i)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn grams_hermitian_and_psd() {
        let ctx = ctx_1khz();
        let arr = test_array();
        let specs = [
            KernelSpec::Bessel,
            KernelSpec::MultiDirectional(md_uniform(20.0)),
            KernelSpec::SourceRegion(SrParams::new(0.05, 5, SrWeightMode::Analytic).unwrap()),
        ];
        for spec in &specs {
            let g = gram(spec, &arr, &ctx).unwrap();
            let herm_dev = (&g.k - g.k.adjoint()).norm();
            assert!(herm_dev < 1e-12 * g.k.norm().max(1.0), "{spec:?} not Hermitian");
            let (lo, hi) = hermitian_eig_bounds(&g.k);
            assert!(lo >= -1e-10 * hi.abs(), "{spec:?} not PSD: eig in [{lo}, {hi}]");
        }
    }

    #[test]
    fn normal_derivative_matches_finite_differences() {
        let ctx = ctx_1khz();
        let arr = tdesign_60().scaled(0.05).unwrap();
        let step = 1e-6 * arr.radius_m();
        let specs = [
            KernelSpec::Bessel,
            KernelSpec::MultiDirectional(md_uniform(20.0)),
            KernelSpec::SourceRegion(SrParams::new(0.05, 5, SrWeightMode::Analytic).unwrap()),
        ];
        for spec in &specs {
            let g = gram(spec, &arr, &ctx).unwrap();
            // spot-check a handful of entries including the diagonal
            for &(i, j) in &[(0usize, 0usize), (0, 17), (23, 5), (59, 59), (42, 13)] {
                let ri = arr.positions()[i];
                let rj = arr.positions()[j];
                let n = ri / ri.norm();
                let plus = kernel_value(spec, &(ri + step * n), &rj, &ctx).unwrap();
                let minus = kernel_value(spec, &(ri - step * n), &rj, &ctx).unwrap();
                let fd = (plus - minus) / Complex64::new(2.0 * step, 0.0);
                assert!(
                    (g.dk_dn[(i, j)] - fd).norm() < 1e-6,
                    "{spec:?} dK[{i},{j}] = {} vs fd {fd}",
                    g.dk_dn[(i, j)]
                );
            }
        }
    }

    #[test]
    fn sr_unit_mode_factorizes_as_psi_psih() {
        let ctx = ctx_1khz();
        let arr = test_array();
        let sr = SrParams::new(0.05, 5, SrWeightMode::Unit).unwrap();
        let g = gram(&KernelSpec::SourceRegion(sr.clone()), &arr, &ctx).unwrap();
        let basis = sr_basis(arr.positions(), &ctx, &sr).unwrap();
        let direct = &basis.psi * basis.psi.adjoint();
        assert!((g.k - direct).norm() < 1e-12 * basis.psi.norm());
    }

    #[test]
    fn md_slices_recompose_the_gram()
    {
        let ctx = ctx_1khz();
        let arr = test_array();
        let params = md_uniform(17.0);
        let g = gram(
            &KernelSpec::MultiDirectional(params.clone()),
            &arr,
            &ctx,
        )
        .unwrap();
        let mut k = CMatrix::zeros(arr.len(), arr.len());
        let mut dk = CMatrix::zeros(arr.len(), arr.len());
        for (q, d) in params.grid.directions().iter().enumerate() {
            let (gq, dgq) = md_direction_slices(&arr, &ctx, d, params.zeta[q]);
            k += gq * Complex64::new(params.gamma[q], 0.0);
            dk += dgq * Complex64::new(params.gamma[q], 0.0);
        }
        assert!((&g.k - &k).norm() < 1e-12 * k.norm());
        assert!((&g.dk_dn - &dk).norm() < 1e-12 * dk.norm().max(1.0));
    }
}
