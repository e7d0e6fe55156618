//! The three fitting procedures and field evaluation.
//!
//! * [`swf_estimate`] — regularized least squares on the rigid-sphere modal
//!   response, recovering regular-basis (interior) expansion coefficients of
//!   the incident field.
//! * [`krr_open_estimate`] — kernel ridge regression for the incident field
//!   with a radiating-basis term absorbing the scattered field, solved by
//!   block elimination.
//! * [`proposed_estimate`] — kernel ridge regression for both fields where
//!   the scattered coefficients are eliminated through the rigid-sphere
//!   boundary constraint (vanishing total normal derivative at the surface),
//!   leaving a single regularized solve in the incident coefficients.
//!
//! Every estimator is linear in the measured pressures at fixed
//! hyperparameters. Linear solves symmetrize and use a Hermitian
//! positive-definite factorization; the possibly rank-deficient
//! boundary-constraint operator goes through an eigenvalue-floored
//! pseudo-inverse (minimum-norm semantics).

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::MicArray;
use crate::kernel::{
    gram, kernel_value, sr_basis, sr_xi_packed, KernelSpec, SrParams, WaveContext,
};
use crate::linalg::{solve_hermitian, solve_hermitian_floored, svd_pinv, CMatrix, CVector};
use crate::special::{
    sph_bessel_j_upto, sph_hankel1_deriv_upto, sph_hankel1_upto, sph_harmonics_upto, Order,
    UnitDirection,
};

/// Complex pressures measured at the microphones of an array at one
/// frequency.
#[derive(Debug, Clone)]
pub struct PressureSnapshot {
    pub ctx: WaveContext,
    pub array: MicArray,
    pub pressures: CVector,
}

impl PressureSnapshot {
    pub fn new(ctx: WaveContext, array: MicArray, pressures: CVector) -> Result<Self> {
        if pressures.len() != array.len() {
            return Err(Error::validation(format!(
                "pressure count {} does not match microphone count {}",
                pressures.len(),
                array.len()
            )));
        }
        Ok(PressureSnapshot {
            ctx,
            array,
            pressures,
        })
    }

    pub fn len(&self) -> usize {
        self.array.len()
    }

    pub fn is_empty(&self) -> bool {
        self.array.is_empty()
    }
}

/// Packed spherical-wave-function coefficients up to a truncation order,
/// indexed `nu^2 + nu + mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwfCoefficients {
    order: usize,
    coeffs: CVector,
}

impl SwfCoefficients {
    pub fn new(order: usize, coeffs: CVector) -> Result<Self> {
        let expect = (order + 1) * (order + 1);
        if coeffs.len() != expect {
            return Err(Error::validation(format!(
                "coefficient vector length {} does not match (N+1)^2 = {expect}",
                coeffs.len()
            )));
        }
        Ok(SwfCoefficients { order, coeffs })
    }

    pub fn zeros(order: usize) -> Self {
        SwfCoefficients {
            order,
            coeffs: CVector::zeros((order + 1) * (order + 1)),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &CVector {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut CVector {
        &mut self.coeffs
    }
}

/// Ridge weights. Single-parameter methods read `lambda1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Regularization {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if lambda1 < 0.0 || lambda2 < 0.0 {
            return Err(Error::validation("regularization weights must be >= 0"));
        }
        Ok(Regularization { lambda1, lambda2 })
    }

    /// One shared weight for both penalty terms.
    pub fn shared(lambda: f64) -> Self {
        Regularization {
            lambda1: lambda,
            lambda2: lambda,
        }
    }
}

/// Form of the quadratic penalty in the boundary-constrained solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QMode {
    /// Kernel-weighted penalty `lambda1 K_inc + lambda2 B^H K_sct B`.
    Kernel,
    /// Plain ridge `lambda I` (used during kernel-parameter optimization).
    Ridge(f64),
}

/// Weighting of the radiating-basis coefficients in the open-field solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WMode {
    Identity,
    /// `W = diag(1/xi_nu(R))` replicated per degree: smooth scattered fields
    /// are penalized less in the strongly radiating low orders.
    InverseSrWeight,
}

/// Which part of the total field to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldPart {
    Incident,
    Scattered,
    Total,
}

/// Scattered-field model attached to a kernel estimate.
#[derive(Debug, Clone)]
pub enum ScatteredModel {
    /// Radiating-basis coefficients.
    Swf(SwfCoefficients),
    /// Source-region kernel sections with their weights, together with the
    /// equivalent radiating-basis coefficients `Xi Psi^H beta` (the same
    /// finite sum regrouped). Field evaluation goes through the
    /// coefficients: the kernel sections span many decades at low
    /// frequencies and summing them directly would lose the field to
    /// rounding.
    Kernel {
        params: SrParams,
        beta: CVector,
        coeffs: SwfCoefficients,
    },
}

/// Kernel-regression estimate: incident representer weights plus an optional
/// scattered model.
#[derive(Debug, Clone)]
pub struct KrrEstimate {
    pub ctx: WaveContext,
    pub array: MicArray,
    pub spec_inc: KernelSpec,
    pub alpha: CVector,
    pub scattered: Option<ScatteredModel>,
}

/// Modal estimate from the rigid-sphere response.
#[derive(Debug, Clone)]
pub struct SwfEstimate {
    pub ctx: WaveContext,
    pub coeffs: SwfCoefficients,
}

/// A fitted estimator, evaluable at arbitrary field points.
#[derive(Debug, Clone)]
pub enum Estimate {
    Swf(SwfEstimate),
    Krr(KrrEstimate),
}

// ---------------------------------------------------------------------------
// Rigid-sphere modal response
// ---------------------------------------------------------------------------

/// Total-pressure response of a rigid sphere of radius `radius_m` at a
/// surface microphone, per unit regular-basis coefficient of order
/// `(nu, mu)`: `i / ((kR)^2 h_nu'(kR)) * Y_{nu,mu}(mic direction)`.
pub fn rigid_sphere_response(
    order: Order,
    mic: &Vector3<f64>,
    ctx: &WaveContext,
    radius_m: f64,
) -> Result<Complex64> {
    if ((mic.norm() - radius_m) / radius_m).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "microphone at distance {} is not on the sphere of radius {radius_m}",
            mic.norm()
        )));
    }
    let x = ctx.wavenumber() * radius_m;
    let hd = sph_hankel1_deriv_upto(order.nu() as usize, x)?[order.nu() as usize];
    let modal = modal_response_factor(hd, x, order.nu())?;
    let dir = UnitDirection::from_vector([mic.x, mic.y, mic.z])?;
    let table = sph_harmonics_upto(order.nu() as usize, &dir);
    Ok(modal * table[order.index()])
}

fn modal_response_factor(hd: Complex64, x: f64, nu: u32) -> Result<Complex64> {
    if !hd.is_finite() || hd.norm() == 0.0 {
        return Err(Error::numeric(format!(
            "rigid-sphere response underflow at order {nu} (h' = {hd} at kR = {x}); \
             truncate below this order"
        )));
    }
    let c = Complex64::i() / (Complex64::new(x * x, 0.0) * hd);
    if !c.is_finite() {
        return Err(Error::numeric(format!(
            "rigid-sphere response overflow at order {nu} (kR = {x})"
        )));
    }
    Ok(c)
}

/// The full `M x (N+1)^2` rigid-sphere response matrix of an array.
#[allow(clippy::needless_range_loop)]
pub fn rigid_sphere_response_matrix(
    array: &MicArray,
    ctx: &WaveContext,
    n: usize,
) -> Result<CMatrix> {
    let x = ctx.wavenumber() * array.radius_m();
    let hd = sph_hankel1_deriv_upto(n, x)?;
    let cols = (n + 1) * (n + 1);
    let mut c = CMatrix::zeros(array.len(), cols);
    let mut modal = Vec::with_capacity(n + 1);
    for (nu, h) in hd.iter().enumerate() {
        modal.push(modal_response_factor(*h, x, nu as u32)?);
    }
    for (m, mic) in array.positions().iter().enumerate() {
        let dir = UnitDirection::from_vector([mic.x, mic.y, mic.z])?;
        let table = sph_harmonics_upto(n, &dir);
        for nu in 0..=n {
            for mu in -(nu as i32)..=(nu as i32) {
                let idx = ((nu * nu + nu) as i64 + mu as i64) as usize;
                c[(m, idx)] = modal[nu] * table[idx];
            }
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Modal (SWF) estimator
// ---------------------------------------------------------------------------

/// Ridge solution of the rigid-sphere modal system:
/// `(C^H C + lambda I)^-1 C^H s`.
pub fn swf_estimate(snap: &PressureSnapshot, n: usize, lambda: f64) -> Result<Estimate> {
    let c = rigid_sphere_response_matrix(&snap.array, &snap.ctx, n)?;
    let mut normal = c.adjoint() * &c;
    for i in 0..normal.nrows() {
        normal[(i, i)] += Complex64::new(lambda, 0.0);
    }
    let rhs = c.adjoint() * &snap.pressures;
    let coeffs = solve_hermitian(&normal, &rhs).map_err(|_| {
        Error::numeric(
            "modal normal matrix is singular; the configuration is ill-posed at lambda = 0",
        )
    })?;
    Ok(Estimate::Swf(SwfEstimate {
        ctx: snap.ctx,
        coeffs: SwfCoefficients::new(n, coeffs)?,
    }))
}

// ---------------------------------------------------------------------------
// Open-field kernel ridge regression
// ---------------------------------------------------------------------------

/// Inverse scattered-coefficient weight `W^-1` as a diagonal.
fn w_inverse_diagonal(mode: WMode, snap: &PressureSnapshot, n: usize) -> Vec<f64> {
    match mode {
        WMode::Identity => vec![1.0; (n + 1) * (n + 1)],
        WMode::InverseSrWeight => {
            // W = diag(1/xi) so W^-1 = diag(xi), with the analytic weights at
            // the array radius
            let sr = SrParams {
                radius_m: snap.array.radius_m(),
                n_ext: n,
                weight_mode: crate::kernel::SrWeightMode::Analytic,
            };
            sr_xi_packed(&snap.ctx, &sr)
        }
    }
}

/// Open-field kernel ridge regression with a radiating-basis scattered term,
/// eliminated in closed form:
/// `alpha = (K_inc + lambda1 I + (lambda1/lambda2) Psi W^-1 Psi^H)^-1 s`.
///
/// The scattered coefficients are recovered for diagnostics from the
/// residual's weighted normal equations at the fitted `alpha`, which
/// reproduces the joint minimizer exactly.
pub fn krr_open_estimate(
    snap: &PressureSnapshot,
    spec_inc: &KernelSpec,
    n: usize,
    reg: Regularization,
    w_mode: WMode,
) -> Result<Estimate> {
    if reg.lambda2 <= 0.0 {
        return Err(Error::validation(
            "open-field solve needs lambda2 > 0 (the scattered penalty is eliminated in closed form)",
        ));
    }
    let g = gram(spec_inc, &snap.array, &snap.ctx)?;
    let basis = sr_basis(
        snap.array.positions(),
        &snap.ctx,
        &SrParams {
            radius_m: snap.array.radius_m(),
            n_ext: n,
            weight_mode: crate::kernel::SrWeightMode::Unit,
        },
    )?;
    let w_inv = w_inverse_diagonal(w_mode, snap, n);

    let m = snap.len();
    let mut system = g.k.clone();
    for i in 0..m {
        system[(i, i)] += Complex64::new(reg.lambda1, 0.0);
    }
    let ratio = reg.lambda1 / reg.lambda2;
    if ratio > 0.0 {
        // system += ratio * Psi W^-1 Psi^H
        let mut scaled = basis.psi.clone();
        for (c, &w) in w_inv.iter().enumerate() {
            for r in 0..m {
                scaled[(r, c)] *= ratio * w;
            }
        }
        system += scaled * basis.psi.adjoint();
    }
    let alpha = solve_hermitian(&system, &snap.pressures)
        .map_err(|_| Error::numeric("open-field system is singular (all penalties zero?)"))?;

    // scattered coefficients: (Psi^H Psi + lambda2 W)^-1 Psi^H (s - K alpha)
    let residual = &snap.pressures - &g.k * &alpha;
    let mut normal = basis.psi.adjoint() * &basis.psi;
    for (i, &w) in w_inv.iter().enumerate() {
        // W = 1/w on the diagonal (w > 0 for supported orders)
        normal[(i, i)] += Complex64::new(reg.lambda2 / w, 0.0);
    }
    let rhs = basis.psi.adjoint() * residual;
    let u_sct = solve_hermitian(&normal, &rhs)?;

    Ok(Estimate::Krr(KrrEstimate {
        ctx: snap.ctx,
        array: snap.array.clone(),
        spec_inc: spec_inc.clone(),
        alpha,
        scattered: Some(ScatteredModel::Swf(SwfCoefficients::new(n, u_sct)?)),
    }))
}

// ---------------------------------------------------------------------------
// Boundary-constrained estimator
// ---------------------------------------------------------------------------

/// Relative singular-value floor of the boundary-operator pseudo-inverses.
const MSCT_PINV_FLOOR: f64 = 1e-12;

/// Scattered-kernel operators in factored form.
///
/// `D_sct = Psi' Xi Psi^H` has full column/row rank factors, so its
/// minimum-norm pseudo-inverse splits exactly as
/// `pinv(D_sct) = pinv(Xi Psi^H) pinv(Psi')`. Each factor is column-
/// normalized before its SVD: the radiating basis grows over many decades
/// with the order while the modal weights decay, and a pseudo-inverse of the
/// assembled operator would cut genuine low-order directions. The extreme
/// scales live in exact diagonal factors instead. A consequence worth
/// noting: the effective map `A = K_inc - Psi_n diag(s/s') pinv(Psi'_n)
/// D_inc` is independent of the modal weights, which enter only through
/// `beta` and the scattered penalty.
pub(crate) struct SctOps {
    pub psi: CMatrix,
    pub dpsi: CMatrix,
    pub xi: Vec<f64>,
    /// `Psi Xi Psi^H` assembled with balanced `sqrt(Xi)` factors.
    pub k_sct: CMatrix,
    /// `Psi' Xi Psi^H`, same balancing.
    pub d_sct: CMatrix,
    /// `T` such that `A = K_inc - T D_inc`.
    pub t_eff: CMatrix,
    route: PinvRoute,
}

/// How the boundary-operator pseudo-inverse is realized. The factored split
/// requires the basis factors to have full column/row rank P, so it applies
/// when the array has at least as many microphones as retained modes; a
/// wider basis falls back to the pseudo-inverse of the assembled operator.
enum PinvRoute {
    Factored {
        /// Left factor of `B`: `pinv(Psi_n^H)` (M x P).
        b_left: CMatrix,
        /// Middle diagonal of `B`: `1 / (s xi s')`.
        b_mid: Vec<f64>,
        /// Right factor of `B`: `pinv(Psi'_n)` (P x M).
        b_right: CMatrix,
        /// Column norms of `Psi'`.
        s_dpsi: Vec<f64>,
    },
    Direct {
        /// `pinv(D_sct)` of the assembled operator.
        pinv: CMatrix,
    },
}

fn column_norms(m: &CMatrix) -> Vec<f64> {
    (0..m.ncols()).map(|c| m.column(c).norm()).collect()
}

fn scale_columns(m: &CMatrix, w: &[f64]) -> CMatrix {
    let mut out = m.clone();
    for (c, &s) in w.iter().enumerate() {
        for r in 0..out.nrows() {
            out[(r, c)] *= s;
        }
    }
    out
}

impl SctOps {
    pub fn build(array: &MicArray, ctx: &WaveContext, sr: &SrParams) -> Result<Self> {
        let basis = sr_basis(array.positions(), ctx, sr)?;
        let (psi, dpsi, xi) = (basis.psi, basis.dpsi, basis.xi);
        let sqrt_xi: Vec<f64> = xi.iter().map(|x| x.max(0.0).sqrt()).collect();
        let psi_w = scale_columns(&psi, &sqrt_xi);
        let dpsi_w = scale_columns(&dpsi, &sqrt_xi);
        let k_sct = &psi_w * psi_w.adjoint();
        let d_sct = &dpsi_w * psi_w.adjoint();

        if psi.ncols() <= psi.nrows() {
            let s_psi = column_norms(&psi);
            let s_dpsi = column_norms(&dpsi);
            if s_psi.iter().chain(&s_dpsi).any(|s| *s == 0.0 || !s.is_finite()) {
                return Err(Error::numeric(
                    "radiating basis has a zero or non-finite column",
                ));
            }
            let inv = |v: &[f64]| -> Vec<f64> { v.iter().map(|s| 1.0 / s).collect() };
            let psi_n = scale_columns(&psi, &inv(&s_psi));
            let dpsi_n = scale_columns(&dpsi, &inv(&s_dpsi));

            let psi_n_pinv = svd_pinv(&psi_n, MSCT_PINV_FLOOR).map_err(|e| {
                Error::numeric(format!("radiating basis is numerically singular: {e}"))
            })?;
            let dpsi_n_pinv = svd_pinv(&dpsi_n, MSCT_PINV_FLOOR).map_err(|e| {
                Error::numeric(format!(
                    "boundary operator is numerically singular beyond the regularization floor: {e}"
                ))
            })?;

            // T = Psi_n diag(s/s') pinv(Psi'_n)
            let ratio: Vec<f64> = s_psi.iter().zip(&s_dpsi).map(|(s, sp)| s / sp).collect();
            let t_eff = scale_columns(&psi_n, &ratio) * &dpsi_n_pinv;

            let b_left = psi_n_pinv.adjoint();
            let b_mid: Vec<f64> = s_psi
                .iter()
                .zip(&xi)
                .zip(&s_dpsi)
                .map(|((s, x), sp)| if *x > 0.0 { 1.0 / (s * x * sp) } else { 0.0 })
                .collect();
            Ok(SctOps {
                psi,
                dpsi,
                xi,
                k_sct,
                d_sct,
                t_eff,
                route: PinvRoute::Factored {
                    b_left,
                    b_mid,
                    b_right: dpsi_n_pinv,
                    s_dpsi,
                },
            })
        } else {
            let pinv = svd_pinv(&d_sct, MSCT_PINV_FLOOR).map_err(|e| {
                Error::numeric(format!(
                    "boundary operator is numerically singular beyond the regularization floor: {e}"
                ))
            })?;
            let t_eff = &k_sct * &pinv;
            Ok(SctOps {
                psi,
                dpsi,
                xi,
                k_sct,
                d_sct,
                t_eff,
                route: PinvRoute::Direct { pinv },
            })
        }
    }

    /// Map from `alpha` to the scattered radiating-basis coefficients
    /// `Xi Psi^H B`. On the factored route this is
    /// `-diag(1/s') pinv(Psi'_n) D_inc` — notably independent of the modal
    /// weights: the boundary condition pins the scattered field.
    pub fn scattered_coeff_map(&self, d_inc: &CMatrix) -> CMatrix {
        match &self.route {
            PinvRoute::Factored {
                b_right, s_dpsi, ..
            } => {
                let mut c = b_right * d_inc;
                for r in 0..c.nrows() {
                    let scale = -1.0 / s_dpsi[r];
                    for col in 0..c.ncols() {
                        c[(r, col)] *= scale;
                    }
                }
                c
            }
            PinvRoute::Direct { .. } => {
                let b = self.representer_map(d_inc);
                let mut c = self.psi.adjoint() * b;
                for (r, &x) in self.xi.iter().enumerate() {
                    for col in 0..c.ncols() {
                        c[(r, col)] *= x;
                    }
                }
                c
            }
        }
    }

    /// `B` such that `beta = B alpha` is the minimum-norm stationary point
    /// of the boundary residual.
    pub fn representer_map(&self, d_inc: &CMatrix) -> CMatrix {
        match &self.route {
            PinvRoute::Factored {
                b_left,
                b_mid,
                b_right,
                ..
            } => -(scale_columns(b_left, b_mid) * (b_right * d_inc)),
            PinvRoute::Direct { pinv } => -(pinv * d_inc),
        }
    }

    /// Scattered penalty `B^H K_sct B`; on the factored route computed as
    /// `W^H diag(1/xi) W` with `W = diag(1/s') pinv(Psi'_n) D_inc`, keeping
    /// the extreme scales in exact diagonals.
    pub fn scattered_penalty(&self, d_inc: &CMatrix) -> CMatrix {
        match &self.route {
            PinvRoute::Factored {
                b_right, s_dpsi, ..
            } => {
                let mut w = b_right * d_inc;
                for r in 0..w.nrows() {
                    let scale = 1.0 / s_dpsi[r];
                    for c in 0..w.ncols() {
                        w[(r, c)] *= scale;
                    }
                }
                let mut scaled = w.clone();
                for (r, &x) in self.xi.iter().enumerate() {
                    let ix = if x > 0.0 { 1.0 / x } else { 0.0 };
                    for c in 0..scaled.ncols() {
                        scaled[(r, c)] *= ix;
                    }
                }
                w.adjoint() * scaled
            }
            PinvRoute::Direct { .. } => {
                let b = self.representer_map(d_inc);
                b.adjoint() * &self.k_sct * b
            }
        }
    }
}

/// Precomputed operators of the boundary-constrained estimator for one
/// (array, frequency, kernel) combination; fitting for a given snapshot and
/// penalty is then a single Hermitian solve.
pub struct ProposedOperator {
    pub ctx: WaveContext,
    pub array: MicArray,
    pub spec_inc: KernelSpec,
    pub sr: SrParams,
    pub k_inc: CMatrix,
    pub d_inc: CMatrix,
    pub k_sct: CMatrix,
    pub d_sct: CMatrix,
    pub m_mix: CMatrix,
    pub m_sct: CMatrix,
    /// `beta = B alpha`, the minimum-norm boundary-stationary map.
    pub b: CMatrix,
    /// Effective forward map `A = K_inc + K_sct B`.
    pub a: CMatrix,
    /// `B^H K_sct B`, the substituted scattered penalty.
    pub bh_ksct_b: CMatrix,
    /// Map from `alpha` to the scattered radiating coefficients.
    c_map: CMatrix,
    sct: SctOps,
}

impl ProposedOperator {
    pub fn build(
        array: &MicArray,
        ctx: &WaveContext,
        spec_inc: &KernelSpec,
        sr: &SrParams,
    ) -> Result<Self> {
        let gi = gram(spec_inc, array, ctx)?;
        let sct = SctOps::build(array, ctx, sr)?;
        let (k_inc, d_inc) = (gi.k, gi.dk_dn);
        let m_mix = sct.d_sct.adjoint() * &d_inc;
        let m_sct = sct.d_sct.adjoint() * &sct.d_sct;
        let b = sct.representer_map(&d_inc);
        let a = &k_inc - &sct.t_eff * &d_inc;
        let bh_ksct_b = sct.scattered_penalty(&d_inc);
        let c_map = sct.scattered_coeff_map(&d_inc);
        Ok(ProposedOperator {
            ctx: *ctx,
            array: array.clone(),
            spec_inc: spec_inc.clone(),
            sr: sr.clone(),
            k_inc,
            d_inc,
            k_sct: sct.k_sct.clone(),
            d_sct: sct.d_sct.clone(),
            m_mix,
            m_sct,
            b,
            a,
            bh_ksct_b,
            c_map,
            sct,
        })
    }

    /// Penalty matrix for the eliminated solve.
    pub fn q_matrix(&self, reg: Regularization, q_mode: QMode) -> CMatrix {
        match q_mode {
            QMode::Kernel => {
                &self.k_inc * Complex64::new(reg.lambda1, 0.0)
                    + &self.bh_ksct_b * Complex64::new(reg.lambda2, 0.0)
            }
            QMode::Ridge(lambda) => {
                CMatrix::identity(self.a.nrows(), self.a.ncols()) * Complex64::new(lambda, 0.0)
            }
        }
    }

    /// Solves `(A^H A + Q) alpha = A^H s` and derives `beta = B alpha` plus
    /// the scattered radiating coefficients.
    pub fn fit(
        &self,
        pressures: &CVector,
        reg: Regularization,
        q_mode: QMode,
    ) -> Result<Estimate> {
        let alpha = self.solve_alpha(pressures, reg, q_mode)?;
        let beta = &self.b * &alpha;
        let coeffs = SwfCoefficients::new(self.sr.n_ext, &self.c_map * &alpha)?;
        Ok(Estimate::Krr(KrrEstimate {
            ctx: self.ctx,
            array: self.array.clone(),
            spec_inc: self.spec_inc.clone(),
            alpha,
            scattered: Some(ScatteredModel::Kernel {
                params: self.sr.clone(),
                beta,
                coeffs,
            }),
        }))
    }

    pub fn solve_alpha(
        &self,
        pressures: &CVector,
        reg: Regularization,
        q_mode: QMode,
    ) -> Result<CVector> {
        let mut system = self.a.adjoint() * &self.a;
        system += self.q_matrix(reg, q_mode);
        let rhs = self.a.adjoint() * pressures;
        match q_mode {
            // lambda*I bounds the spectrum away from zero
            QMode::Ridge(_) => solve_hermitian(&system, &rhs).map_err(|_| {
                Error::numeric("boundary-constrained system is singular (all penalties zero?)")
            }),
            // The kernel-weighted penalty vanishes on the kernel Gram's
            // numerical null space, exactly where the data term does, so the
            // system can be singular to machine precision. A floored
            // eigendecomposition solve leaves those directions at zero
            // (minimum-norm) instead of filling them with rounding noise.
            QMode::Kernel => solve_hermitian_floored(&system, &rhs, 1e-14),
        }
    }

    /// First-order-condition residual of the boundary elimination:
    /// `|M_mix alpha + M_sct beta| / |M_mix alpha|` with `beta = B alpha`.
    ///
    /// Both sides are evaluated through the factored scattered operators and
    /// the collapsed coefficients `c = Xi Psi^H beta`: at low frequencies
    /// the kernel sections span enough decades that any route through the
    /// assembled matrices (or a beta round trip) drowns the residual in
    /// rounding noise long before the 1e-8 scale.
    pub fn stationarity_rel(&self, alpha: &CVector) -> f64 {
        let u = &self.d_inc * alpha;
        let apply_dsct_h = |v: &CVector| -> CVector {
            // D_sct^H v = Psi Xi (Psi'^H v)
            let mut t = self.sct.dpsi.adjoint() * v;
            for (i, &x) in self.sct.xi.iter().enumerate() {
                t[i] *= x;
            }
            &self.sct.psi * t
        };
        // D_sct beta = Psi' (Xi Psi^H beta) = Psi' (c_map alpha)
        let c = &self.c_map * alpha;
        let v = &u + &self.sct.dpsi * c;
        let num = apply_dsct_h(&v).norm();
        let den = apply_dsct_h(&u).norm();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// The same first-order condition measured in the column-normalized
    /// boundary metric `|Psi'_n^H v| / |Psi'_n^H u|` (identical zero set:
    /// `D_sct^H x = Psi Xi Psi'^H x` vanishes iff `Psi'^H x` does). Unlike
    /// the literal matrix form, this stays measurable in double precision
    /// when the unit-weight kernel sections span many decades.
    pub fn stationarity_rel_normalized(&self, alpha: &CVector) -> f64 {
        let u = &self.d_inc * alpha;
        let c = &self.c_map * alpha;
        let v = &u + &self.sct.dpsi * c;
        let norms = column_norms(&self.sct.dpsi);
        let apply = |x: &CVector| -> f64 {
            let mut t = self.sct.dpsi.adjoint() * x;
            for (i, n) in norms.iter().enumerate() {
                t[i] /= n;
            }
            t.norm()
        };
        let num = apply(&v);
        let den = apply(&u);
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// Normal-derivative residual of the total field at the microphones,
    /// relative to the incident normal derivative alone.
    pub fn boundary_residual_rel(&self, alpha: &CVector) -> f64 {
        let inc = &self.d_inc * alpha;
        let c = &self.c_map * alpha;
        let total = &inc + &self.sct.dpsi * c;
        total.norm() / inc.norm()
    }
}

/// Boundary-constrained estimate: builds the operators and fits once.
pub fn proposed_estimate(
    snap: &PressureSnapshot,
    spec_inc: &KernelSpec,
    spec_sct: &SrParams,
    reg: Regularization,
    q_mode: QMode,
) -> Result<Estimate> {
    let op = ProposedOperator::build(&snap.array, &snap.ctx, spec_inc, spec_sct)?;
    op.fit(&snap.pressures, reg, q_mode)
}

// ---------------------------------------------------------------------------
// Field evaluation
// ---------------------------------------------------------------------------

/// Evaluates the regular-basis (interior) expansion at arbitrary points.
#[allow(clippy::needless_range_loop)]
pub fn regular_basis_eval(
    coeffs: &SwfCoefficients,
    ctx: &WaveContext,
    points: &[Vector3<f64>],
) -> Vec<Complex64> {
    let k = ctx.wavenumber();
    let n = coeffs.order();
    points
        .iter()
        .map(|p| {
            let radius = p.norm();
            if radius == 0.0 {
                // only the monopole term survives at the origin
                return coeffs.coeffs()[0]
                    * Complex64::new(1.0 / (4.0 * std::f64::consts::PI).sqrt(), 0.0);
            }
            let dir = UnitDirection::from_vector([p.x, p.y, p.z]).expect("nonzero radius");
            let harm = sph_harmonics_upto(n, &dir);
            let j = sph_bessel_j_upto(n, k * radius);
            let mut acc = Complex64::new(0.0, 0.0);
            for nu in 0..=n {
                let base = nu * nu + nu;
                for mu in -(nu as i32)..=(nu as i32) {
                    let idx = (base as i64 + mu as i64) as usize;
                    acc += coeffs.coeffs()[idx] * j[nu] * harm[idx];
                }
            }
            acc
        })
        .collect()
}

/// Evaluates the radiating-basis (exterior) expansion; singular at the
/// origin.
#[allow(clippy::needless_range_loop)]
pub fn radiating_basis_eval(
    coeffs: &SwfCoefficients,
    ctx: &WaveContext,
    points: &[Vector3<f64>],
) -> Result<Vec<Complex64>> {
    let k = ctx.wavenumber();
    let n = coeffs.order();
    points
        .iter()
        .map(|p| {
            let radius = p.norm();
            if radius == 0.0 {
                return Err(Error::numeric(
                    "radiating expansion is singular at the origin",
                ));
            }
            let dir = UnitDirection::from_vector([p.x, p.y, p.z])?;
            let harm = sph_harmonics_upto(n, &dir);
            let h = sph_hankel1_upto(n, k * radius)?;
            let mut acc = Complex64::new(0.0, 0.0);
            for nu in 0..=n {
                let base = nu * nu + nu;
                for mu in -(nu as i32)..=(nu as i32) {
                    let idx = (base as i64 + mu as i64) as usize;
                    acc += coeffs.coeffs()[idx] * h[nu] * harm[idx];
                }
            }
            Ok(acc)
        })
        .collect()
}

/// Evaluates a fitted estimate at arbitrary points.
///
/// `Scattered` and `Total` require a scattered model; kernel-section
/// scattered models are regrouped into a radiating expansion
/// (`u_sct = sum_idx [xi . (Psi^H beta)]_idx psi_idx`), which is the same
/// finite sum reorganized.
pub fn evaluate_field(
    est: &Estimate,
    points: &[Vector3<f64>],
    part: FieldPart,
) -> Result<Vec<Complex64>> {
    if points.is_empty() {
        return Err(Error::validation("no evaluation points supplied"));
    }
    match est {
        Estimate::Swf(e) => match part {
            FieldPart::Incident => Ok(regular_basis_eval(&e.coeffs, &e.ctx, points)),
            _ => Err(Error::validation(
                "modal estimate carries no scattered model",
            )),
        },
        Estimate::Krr(e) => {
            let incident = |pts: &[Vector3<f64>]| -> Result<Vec<Complex64>> {
                pts.iter()
                    .map(|p| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (m, center) in e.array.positions().iter().enumerate() {
                            acc += e.alpha[m] * kernel_value(&e.spec_inc, p, center, &e.ctx)?;
                        }
                        Ok(acc)
                    })
                    .collect()
            };
            let scattered = |pts: &[Vector3<f64>]| -> Result<Vec<Complex64>> {
                match &e.scattered {
                    None => Err(Error::validation(
                        "estimate carries no scattered model",
                    )),
                    Some(ScatteredModel::Swf(coeffs)) => {
                        radiating_basis_eval(coeffs, &e.ctx, pts)
                    }
                    Some(ScatteredModel::Kernel { coeffs, .. }) => {
                        radiating_basis_eval(coeffs, &e.ctx, pts)
                    }
                }
            };
            match part {
                FieldPart::Incident => incident(points),
                FieldPart::Scattered => scattered(points),
                FieldPart::Total => {
                    let inc = incident(points)?;
                    let sct = scattered(points)?;
                    Ok(inc.iter().zip(sct).map(|(a, b)| a + b).collect())
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Hyperparameter selection
// ---------------------------------------------------------------------------

/// The ridge grid `10^l` for `l` in `lmin..=lmax`.
pub fn lambda_grid(lmin: i32, lmax: i32) -> Vec<f64> {
    (lmin..=lmax).map(|l| 10f64.powi(l)).collect()
}

/// Exhaustive scan of a ridge grid against an NMSE evaluator; ties break
/// toward the larger weight. Returns the winning weight and its NMSE.
pub fn select_lambda<F>(grid: &[f64], mut nmse_of: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    let mut best = None;
    for &lambda in grid {
        let nmse = nmse_of(lambda)?;
        best = match best {
            None => Some((lambda, nmse)),
            Some((_, bn)) if nmse <= bn => Some((lambda, nmse)),
            keep => keep,
        };
    }
    Ok(best.expect("grid nonempty"))
}
