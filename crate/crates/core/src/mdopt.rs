//! Adaptation of the multidirectional kernel's mixture weights (proximal
//! gradient with soft thresholding) and concentrations (projected gradient
//! descent) under a leave-one-out cross-validation loss.
//!
//! The loss of a candidate kernel is the sum of squared leave-one-out
//! prediction errors of the boundary-constrained estimator with the plain
//! ridge penalty `Q = lambda I`. Because that fit is a linear smoother whose
//! representer basis and boundary rows stay on the full array (the hardware
//! does not change when one observation is withheld), the holdout errors come
//! from the closed-form identity `e_m / (1 - H_mm)` with `H` the hat matrix;
//! explicit row-deletion refits are kept as a fallback for degenerate hat
//! diagonals and as the test oracle.
//!
//! Gradients are central finite differences with a relative step of 1e-5 per
//! coordinate, so the loss definition stays the single source of truth. The
//! mixture Gram is linear in the weights, which lets the inner loop reuse
//! per-direction Gram slices; only the slice whose concentration moved is
//! re-evaluated.

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimator::{PressureSnapshot, SctOps};
use crate::geometry::DirectionGrid;
use crate::kernel::{md_direction_slices, MdParams, SrParams};
use crate::linalg::{CMatrix, CVector};

/// Hyperparameters of the kernel optimization.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdOptConfig {
    /// Sparsity weight of the soft threshold.
    pub tau: f64,
    /// Learning rate for the mixture weights.
    pub eta_gamma: f64,
    /// Learning rate for the concentrations.
    pub eta_zeta: f64,
    /// Fixed iteration count (the stopping criterion).
    pub iterations: usize,
    /// Ridge weight of the `Q = lambda I` penalty used by every inner fit.
    pub lambda_fixed: f64,
    /// Initial mixture weight per direction; `None` means `1/Q`.
    pub gamma_init: Option<f64>,
    /// Initial concentration per direction.
    pub zeta_init: f64,
    /// Projection ceiling for the concentrations; `sinh` overflows double
    /// precision near 710, and the unbounded step `eta_zeta = 1e2` would get
    /// there in a few iterations.
    pub zeta_max: f64,
}

impl Default for MdOptConfig {
    fn default() -> Self {
        MdOptConfig {
            tau: 1e-2,
            eta_gamma: 1e-1,
            eta_zeta: 1e2,
            iterations: 400,
            lambda_fixed: 1e-2,
            gamma_init: None,
            zeta_init: 20.0,
            zeta_max: 50.0,
        }
    }
}

/// One optimization step's snapshot.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
    pub nnz_gamma: usize,
}

/// Per-iteration history of the optimization.
#[derive(Debug, Clone, Default)]
pub struct MdOptTrace {
    pub records: Vec<TraceRecord>,
}

impl MdOptTrace {
    /// CSV export: iteration, loss, nnz(gamma), and a zeta summary over the
    /// active (gamma > 0) directions.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,nnz_gamma,zeta_min,zeta_mean,zeta_max\n");
        for r in &self.records {
            let active: Vec<f64> = r
                .zeta
                .iter()
                .zip(&r.gamma)
                .filter(|(_, g)| **g > 0.0)
                .map(|(z, _)| *z)
                .collect();
            let (zmin, zmean, zmax) = if active.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                let sum: f64 = active.iter().sum();
                (
                    active.iter().cloned().fold(f64::INFINITY, f64::min),
                    sum / active.len() as f64,
                    active.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration, r.loss, r.nnz_gamma, zmin, zmean, zmax
            ));
        }
        out
    }
}

/// Result of an optimization run.
#[derive(Debug, Clone)]
pub struct MdOptOutcome {
    pub params: MdParams,
    pub trace: MdOptTrace,
    /// A non-finite loss aborted the loop early; the trace stops there.
    pub diverged: bool,
    /// Final loss exceeded the initial loss (fixed-step methods may
    /// oscillate; no descent guarantee is asserted).
    pub loss_increased: bool,
}

/// Which parameter block a gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    Gamma,
    Zeta,
}

/// Soft-thresholded non-negative gradient step:
/// `gamma_q <- max(0, gamma_q - eta*g_q - eta*tau)`.
pub fn prox_step_gamma(gamma: &[f64], grad: &[f64], eta_gamma: f64, tau: f64) -> Vec<f64> {
    gamma
        .iter()
        .zip(grad)
        .map(|(g, d)| (g - eta_gamma * d - eta_gamma * tau).max(0.0))
        .collect()
}

// ---------------------------------------------------------------------------
// Leave-one-out loss of the ridge-penalized boundary-constrained fit
// ---------------------------------------------------------------------------

/// Hat-matrix-based leave-one-out loss for the linear smoother
/// `fitted = A (A^H A + lambda I)^-1 A^H s`. Falls back to explicit
/// row-deletion refits when the hat diagonal approaches 1.
fn loo_from_effective(a: &CMatrix, s: &CVector, lambda: f64) -> Result<f64> {
    let m = a.nrows();
    let mut normal = a.adjoint() * a;
    for i in 0..m {
        normal[(i, i)] += Complex64::new(lambda, 0.0);
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::numeric("leave-one-out system is not positive definite"))?;
    let alpha = chol.solve(&(a.adjoint() * s));
    let fitted = a * alpha;
    // H_mm = |L^-1 a_m^H|^2: column norms of one triangular solve
    let w = chol
        .l()
        .solve_lower_triangular(&a.adjoint())
        .ok_or_else(|| Error::numeric("triangular solve failed"))?;
    let mut loss = 0.0;
    for i in 0..m {
        let h_ii = w.column(i).norm_squared();
        let denom = 1.0 - h_ii;
        if denom.abs() < 1e-8 {
            return explicit_loo(a, s, lambda);
        }
        loss += ((s[i] - fitted[i]) / denom).norm_sqr();
    }
    Ok(loss)
}

/// Explicit leave-one-out: refit with row `m` deleted (kernel sections and
/// boundary rows stay on the full array) and predict the held-out pressure.
fn explicit_loo(a: &CMatrix, s: &CVector, lambda: f64) -> Result<f64> {
    let m = a.nrows();
    let n = a.ncols();
    let mut loss = 0.0;
    for hold in 0..m {
        let reduced = a.clone().remove_row(hold);
        let mut s_red = CVector::zeros(m - 1);
        let mut k = 0;
        for i in 0..m {
            if i != hold {
                s_red[k] = s[i];
                k += 1;
            }
        }
        let mut normal = reduced.adjoint() * &reduced;
        for i in 0..n {
            normal[(i, i)] += Complex64::new(lambda, 0.0);
        }
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::numeric("holdout system is not positive definite"))?;
        let alpha = chol.solve(&(reduced.adjoint() * &s_red));
        let pred: Complex64 = (0..n).map(|j| a[(hold, j)] * alpha[j]).sum();
        loss += (s[hold] - pred).norm_sqr();
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Cached workspace
// ---------------------------------------------------------------------------

/// Operators that stay fixed while the multidirectional parameters move:
/// everything derived from the scattered kernel, plus per-direction Gram
/// slices at the current concentrations.
struct MdWorkspace<'a> {
    snap: &'a PressureSnapshot,
    grid: &'a DirectionGrid,
    lambda: f64,
    /// `T = K_sct pinv(D_sct)`, so the effective map is `A = K - T D`.
    t: CMatrix,
    /// Per-direction unit-weight Gram and derivative-Gram slices.
    slices: Vec<(CMatrix, CMatrix)>,
    /// Effective per-direction maps `S_q = G_q - T dG_q`.
    eff: Vec<CMatrix>,
}

impl<'a> MdWorkspace<'a> {
    fn new(
        snap: &'a PressureSnapshot,
        grid: &'a DirectionGrid,
        sr: &SrParams,
        lambda: f64,
        zeta: &[f64],
    ) -> Result<Self> {
        let t = SctOps::build(&snap.array, &snap.ctx, sr)?.t_eff;
        let mut ws = MdWorkspace {
            snap,
            grid,
            lambda,
            t,
            slices: Vec::with_capacity(grid.len()),
            eff: Vec::with_capacity(grid.len()),
        };
        for (q, d) in grid.directions().iter().enumerate() {
            let pair = md_direction_slices(&snap.array, &snap.ctx, d, zeta[q]);
            let eff = ws.effective(&pair);
            ws.slices.push(pair);
            ws.eff.push(eff);
        }
        Ok(ws)
    }

    fn effective(&self, (g, dg): &(CMatrix, CMatrix)) -> CMatrix {
        g - &self.t * dg
    }

    fn slice_at(&self, q: usize, zeta: f64) -> CMatrix {
        let pair = md_direction_slices(
            &self.snap.array,
            &self.snap.ctx,
            &self.grid.directions()[q],
            zeta,
        );
        self.effective(&pair)
    }

    fn set_zeta(&mut self, q: usize, zeta: f64) {
        let pair = md_direction_slices(
            &self.snap.array,
            &self.snap.ctx,
            &self.grid.directions()[q],
            zeta,
        );
        let eff = self.effective(&pair);
        self.slices[q] = pair;
        self.eff[q] = eff;
    }

    fn a_matrix(&self, gamma: &[f64]) -> CMatrix {
        let m = self.snap.len();
        let mut a = CMatrix::zeros(m, m);
        for (q, eff) in self.eff.iter().enumerate() {
            if gamma[q] != 0.0 {
                a += eff * Complex64::new(gamma[q], 0.0);
            }
        }
        a
    }

    fn loss(&self, gamma: &[f64]) -> Result<f64> {
        loo_from_effective(&self.a_matrix(gamma), &self.snap.pressures, self.lambda)
    }

    /// Loss with one gamma coordinate displaced; the effective map shifts by
    /// `h * S_q` without re-evaluating any kernel.
    fn loss_gamma_shift(&self, gamma: &[f64], q: usize, h: f64) -> Result<f64> {
        let a = self.a_matrix(gamma) + &self.eff[q] * Complex64::new(h, 0.0);
        loo_from_effective(&a, &self.snap.pressures, self.lambda)
    }

    /// Loss with one zeta coordinate displaced; only slice `q` is fresh.
    fn loss_zeta_shift(&self, gamma: &[f64], q: usize, zeta_q: f64) -> Result<f64> {
        let eff = self.slice_at(q, zeta_q);
        let mut a = self.a_matrix(gamma);
        if gamma[q] != 0.0 {
            a += (&eff - &self.eff[q]) * Complex64::new(gamma[q], 0.0);
        }
        loo_from_effective(&a, &self.snap.pressures, self.lambda)
    }

    /// Central-difference gradients; a zero gamma masks its zeta coordinate
    /// (the loss is flat there and finite differences would random-walk it).
    fn gradient(&self, gamma: &[f64], zeta: &[f64], which: ParamSet) -> Result<Vec<f64>> {
        let q_count = self.grid.len();
        let mut grad = vec![0.0; q_count];
        for q in 0..q_count {
            match which {
                ParamSet::Gamma => {
                    let h = fd_step(gamma[q]);
                    let plus = self.loss_gamma_shift(gamma, q, h)?;
                    let minus = self.loss_gamma_shift(gamma, q, -h)?;
                    grad[q] = (plus - minus) / (2.0 * h);
                }
                ParamSet::Zeta => {
                    if gamma[q] == 0.0 {
                        continue;
                    }
                    let h = fd_step(zeta[q]);
                    let plus = self.loss_zeta_shift(gamma, q, zeta[q] + h)?;
                    let minus = self.loss_zeta_shift(gamma, q, zeta[q] - h)?;
                    grad[q] = (plus - minus) / (2.0 * h);
                }
            }
        }
        Ok(grad)
    }
}

/// Relative finite-difference step (1e-5), with the same absolute step at a
/// zero coordinate.
fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Leave-one-out cross-validation loss of the boundary-constrained fit with
/// the given multidirectional incident kernel and `Q = lambda I`.
pub fn loocv_loss(
    snap: &PressureSnapshot,
    md: &MdParams,
    sr: &SrParams,
    lambda_fixed: f64,
) -> Result<f64> {
    if snap.len() < 2 {
        return Err(Error::validation(
            "leave-one-out needs at least two microphones",
        ));
    }
    let ws = MdWorkspace::new(snap, &md.grid, sr, lambda_fixed, &md.zeta)?;
    ws.loss(&md.gamma)
}

/// Finite-difference gradient of [`loocv_loss`] with respect to one
/// parameter block.
pub fn grad_loss(
    snap: &PressureSnapshot,
    md: &MdParams,
    sr: &SrParams,
    lambda_fixed: f64,
    which: ParamSet,
) -> Result<Vec<f64>> {
    let ws = MdWorkspace::new(snap, &md.grid, sr, lambda_fixed, &md.zeta)?;
    ws.gradient(&md.gamma, &md.zeta, which)
}

/// Runs exactly `cfg.iterations` iterations of {gamma prox step, zeta
/// projected gradient step} from the uniform initial condition, recording a
/// trace row before the first step and after each iteration.
pub fn optimize_md(
    snap: &PressureSnapshot,
    grid: &DirectionGrid,
    sr: &SrParams,
    cfg: &MdOptConfig,
) -> Result<MdOptOutcome> {
    if snap.len() < 2 {
        return Err(Error::validation(
            "leave-one-out needs at least two microphones",
        ));
    }
    if grid.is_empty() {
        return Err(Error::validation("direction grid is empty"));
    }
    let q_count = grid.len();
    let mut gamma = vec![cfg.gamma_init.unwrap_or(1.0 / q_count as f64); q_count];
    let mut zeta = vec![cfg.zeta_init; q_count];
    let mut ws = MdWorkspace::new(snap, grid, sr, cfg.lambda_fixed, &zeta)?;

    let mut trace = MdOptTrace::default();
    let mut diverged = false;
    let initial_loss = ws.loss(&gamma)?;
    trace.records.push(TraceRecord {
        iteration: 0,
        loss: initial_loss,
        gamma: gamma.clone(),
        zeta: zeta.clone(),
        nnz_gamma: gamma.iter().filter(|g| **g > 0.0).count(),
    });

    for it in 1..=cfg.iterations {
        let g_gamma = ws.gradient(&gamma, &zeta, ParamSet::Gamma)?;
        gamma = prox_step_gamma(&gamma, &g_gamma, cfg.eta_gamma, cfg.tau);

        let g_zeta = ws.gradient(&gamma, &zeta, ParamSet::Zeta)?;
        for q in 0..q_count {
            if gamma[q] == 0.0 {
                continue;
            }
            let updated = (zeta[q] - cfg.eta_zeta * g_zeta[q]).clamp(0.0, cfg.zeta_max);
            if updated != zeta[q] {
                zeta[q] = updated;
                ws.set_zeta(q, updated);
            }
        }

        let loss = ws.loss(&gamma)?;
        trace.records.push(TraceRecord {
            iteration: it,
            loss,
            gamma: gamma.clone(),
            zeta: zeta.clone(),
            nnz_gamma: gamma.iter().filter(|g| **g > 0.0).count(),
        });
        if !loss.is_finite() {
            diverged = true;
            break;
        }
    }

    let final_loss = trace.records.last().expect("trace nonempty").loss;
    let params = MdParams::new(grid.clone(), gamma, zeta)?;
    Ok(MdOptOutcome {
        params,
        trace,
        diverged,
        loss_increased: final_loss > initial_loss,
    })
}
