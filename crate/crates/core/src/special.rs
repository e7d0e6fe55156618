//! Spherical special functions: Bessel/Hankel functions of integer order,
//! their derivatives, the order-zero spherical Bessel function of a complex
//! argument, and complex orthonormal spherical harmonics.
//!
//! Conventions:
//! * `j_nu` is computed by Miller's downward recurrence (stable for all
//!   orders), `y_nu` by upward recurrence (stable), and `h_nu = j_nu + i*y_nu`.
//! * Spherical harmonics are complex orthonormal on the unit sphere and carry
//!   the Condon-Shortley phase, so `Y_{nu,-mu} = (-1)^mu * conj(Y_{nu,mu})`.
//!
//! All functions here are pure; they can be called concurrently without any
//! shared state.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Declared support ceiling for the expansion order.
pub const MAX_ORDER: usize = 64;

/// Below this argument the Bessel power series is used for every order.
const SERIES_X: f64 = 0.5;

/// Threshold under which `sin(z)/z` switches to its power series.
const SINC_SERIES_Z: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Expansion order `nu` and degree `mu` with `|mu| <= nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Order {
    nu: u32,
    mu: i32,
}

impl Order {
    pub fn new(nu: u32, mu: i32) -> Result<Self> {
        if mu.unsigned_abs() > nu {
            return Err(Error::validation(format!(
                "harmonic degree |mu|={} exceeds order nu={nu}",
                mu.unsigned_abs()
            )));
        }
        Ok(Order { nu, mu })
    }

    pub fn nu(&self) -> u32 {
        self.nu
    }

    pub fn mu(&self) -> i32 {
        self.mu
    }

    /// Zero-based position `nu^2 + nu + mu` in a packed coefficient vector.
    pub fn index(&self) -> usize {
        (self.nu as i64 * (self.nu as i64 + 1) + self.mu as i64) as usize
    }
}

/// A unit vector in R^3; the argument of a spherical harmonic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDirection([f64; 3]);

impl UnitDirection {
    /// Accepts a vector whose norm is 1 within 1e-12.
    pub fn new(components: [f64; 3]) -> Result<Self> {
        let norm = (components[0] * components[0]
            + components[1] * components[1]
            + components[2] * components[2])
            .sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "direction norm {norm} is not 1 within 1e-12"
            )));
        }
        Ok(UnitDirection(components))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::numeric("cannot normalize a zero direction"));
        }
        Ok(UnitDirection([v[0] / norm, v[1] / norm, v[2] / norm]))
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, other: &UnitDirection) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }
}

// ---------------------------------------------------------------------------
// Spherical Bessel functions of the first kind
// ---------------------------------------------------------------------------

/// `j_nu(x)` for all orders `0..=n_max` at once.
///
/// `x = 0` returns the exact limits `j_0(0)=1`, `j_nu(0)=0`. Small arguments
/// use the power series per order; otherwise Miller's downward recurrence with
/// overflow rescaling, normalized against whichever of `j_0`, `j_1` is larger
/// in magnitude (their zeros interlace, so one is always well away from zero).
pub fn sph_bessel_j_upto(n_max: usize, x: f64) -> Vec<f64> {
    assert!(x >= 0.0, "spherical Bessel argument must be non-negative");
    if x == 0.0 {
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        return out;
    }
    if x < SERIES_X {
        return (0..=n_max).map(|n| bessel_j_series(n, x)).collect();
    }

    let start = n_max.max(x.ceil() as usize) + 32 + x.sqrt() as usize;
    let mut buf = vec![0.0_f64; start + 2];
    buf[start + 1] = 0.0;
    buf[start] = 1e-30;
    for k in (0..start).rev() {
        buf[k] = (2 * k + 3) as f64 / x * buf[k + 1] - buf[k + 2];
        if buf[k].abs() > 1e250 {
            for v in buf[k..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }

    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let scale = if j0.abs() >= j1.abs() {
        j0 / buf[0]
    } else {
        j1 / buf[1]
    };
    buf.truncate(n_max + 1);
    for v in buf.iter_mut() {
        *v *= scale;
    }
    buf
}

/// `j_nu(x)`, the spherical Bessel function of the first kind.
pub fn sph_bessel_j(nu: usize, x: f64) -> f64 {
    sph_bessel_j_upto(nu, x)[nu]
}

/// Power series of `j_n` at small argument; every term ratio is below
/// `x^2/6`, so the loop terminates quickly.
fn bessel_j_series(n: usize, x: f64) -> f64 {
    // prefactor x^n / (2n+1)!!
    let mut pref = 1.0;
    for k in 1..=n {
        pref *= x / (2 * k + 1) as f64;
        if pref == 0.0 {
            return 0.0;
        }
    }
    let half_x2 = 0.5 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..60 {
        term *= -half_x2 / (m as f64 * (2 * n + 2 * m + 1) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    pref * sum
}

/// Derivative `j_nu'(x)` via the identity `f' = f_{nu-1} - (nu+1)/x * f_nu`.
pub fn sph_bessel_j_deriv(nu: usize, x: f64) -> f64 {
    if x == 0.0 {
        // limits: j_0'(0) = 0, j_1'(0) = 1/3, higher orders 0
        return if nu == 1 { 1.0 / 3.0 } else { 0.0 };
    }
    let j = sph_bessel_j_upto(nu + 1, x);
    if nu == 0 {
        -j[1]
    } else {
        j[nu - 1] - (nu + 1) as f64 / x * j[nu]
    }
}

// ---------------------------------------------------------------------------
// Spherical Bessel functions of the second kind (Neumann)
// ---------------------------------------------------------------------------

/// `y_nu(x)` for all orders `0..=n_max`; upward recurrence from the closed
/// forms of `y_0` and `y_1`.
pub fn sph_bessel_y_upto(n_max: usize, x: f64) -> Result<Vec<f64>> {
    if x <= 0.0 {
        return Err(Error::numeric(format!(
            "spherical Neumann function needs a positive argument, got {x}"
        )));
    }
    let (s, c) = (x.sin(), x.cos());
    let mut out = vec![0.0; n_max + 1];
    out[0] = -c / x;
    if n_max >= 1 {
        out[1] = -c / (x * x) - s / x;
    }
    for n in 2..=n_max {
        out[n] = (2 * n - 1) as f64 / x * out[n - 1] - out[n - 2];
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Spherical Hankel functions of the first kind
// ---------------------------------------------------------------------------

/// `h_nu(x) = j_nu(x) + i*y_nu(x)` for all orders `0..=n_max`.
pub fn sph_hankel1_upto(n_max: usize, x: f64) -> Result<Vec<Complex64>> {
    if x <= 0.0 {
        return Err(Error::numeric(format!(
            "spherical Hankel function needs a positive radial argument, got {x}"
        )));
    }
    let j = sph_bessel_j_upto(n_max, x);
    let y = sph_bessel_y_upto(n_max, x)?;
    Ok(j.iter()
        .zip(y.iter())
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect())
}

/// `h_nu(x)`, the spherical Hankel function of the first kind.
pub fn sph_hankel1(nu: usize, x: f64) -> Result<Complex64> {
    Ok(sph_hankel1_upto(nu, x)?[nu])
}

/// Derivative `h_nu'(x)` via the same recurrence identity as `j_nu'`.
pub fn sph_hankel1_deriv(nu: usize, x: f64) -> Result<Complex64> {
    let h = sph_hankel1_upto(nu + 1, x)?;
    Ok(hankel_deriv_from_values(&h, nu, x))
}

/// Derivatives `h_nu'(x)` for all orders `0..=n_max`.
pub fn sph_hankel1_deriv_upto(n_max: usize, x: f64) -> Result<Vec<Complex64>> {
    let h = sph_hankel1_upto(n_max + 1, x)?;
    Ok((0..=n_max)
        .map(|nu| hankel_deriv_from_values(&h, nu, x))
        .collect())
}

fn hankel_deriv_from_values(h: &[Complex64], nu: usize, x: f64) -> Complex64 {
    if nu == 0 {
        -h[1]
    } else {
        h[nu - 1] - (nu + 1) as f64 / x * h[nu]
    }
}

// ---------------------------------------------------------------------------
// Complex-argument order-zero functions
// ---------------------------------------------------------------------------

/// `j_0(z) = sin(z)/z` for complex `z`, with a series fallback near the
/// removable singularity. On a purely imaginary axis `z = i*zeta` this equals
/// `sinh(zeta)/zeta`.
pub fn sinc_sph_complex(z: Complex64) -> Complex64 {
    if z.norm() < SINC_SERIES_Z {
        let z2 = z * z;
        Complex64::new(1.0, 0.0) - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// `j_1(z)/z`, an even entire function; the radial gradient of `j_0` factors
/// through it. Uses the series well inside the cancellation zone of
/// `(sin z - z cos z)/z^3`.
pub fn sph_j1_ratio(z: Complex64) -> Complex64 {
    if z.norm() < 0.5 {
        let neg_half_z2 = -0.5 * z * z;
        let mut term = Complex64::new(1.0 / 3.0, 0.0);
        let mut sum = term;
        for m in 1..24 {
            term = term * neg_half_z2 / (m as f64 * (2 * m + 3) as f64);
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum
    } else {
        (z.sin() - z * z.cos()) / (z * z * z)
    }
}

// ---------------------------------------------------------------------------
// Spherical harmonics
// ---------------------------------------------------------------------------

/// All harmonics `Y_{nu,mu}` for `nu <= n_max`, packed at index
/// `nu^2 + nu + mu`.
///
/// Computed from the fully normalized associated Legendre recurrences (the
/// 1/sqrt(4 pi) factor is folded into the seed), which stay in range for all
/// supported orders.
pub fn sph_harmonics_upto(n_max: usize, dir: &UnitDirection) -> Vec<Complex64> {
    let cos_t = dir.z();
    let sin_t = (dir.x() * dir.x() + dir.y() * dir.y()).sqrt();
    let phi = dir.y().atan2(dir.x());

    // pbar[m] holds P-bar_l^m for the current l as l sweeps upward.
    let size = (n_max + 1) * (n_max + 1);
    let mut out = vec![Complex64::new(0.0, 0.0); size];

    // P-bar_m^m diagonal seeds.
    let mut diag = vec![0.0; n_max + 1];
    diag[0] = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
    for m in 1..=n_max {
        let f = -((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        diag[m] = f * sin_t * diag[m - 1];
    }

    // e^{i m phi} table.
    let mut expi = vec![Complex64::new(1.0, 0.0); n_max + 1];
    for m in 1..=n_max {
        expi[m] = expi[m - 1] * Complex64::from_polar(1.0, phi);
    }

    for m in 0..=n_max {
        let mut p_prev2 = diag[m]; // P-bar_m^m
        store_harmonic(&mut out, m, m as i32, p_prev2 * expi[m]);
        if m == n_max {
            break;
        }
        let mut p_prev1 = ((2 * m + 3) as f64).sqrt() * cos_t * p_prev2; // P-bar_{m+1}^m
        store_harmonic(&mut out, m + 1, m as i32, p_prev1 * expi[m]);
        for l in (m + 2)..=n_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = (((2.0 * lf - 1.0) * (2.0 * lf + 1.0)) / ((lf - mf) * (lf + mf))).sqrt();
            let b = (((2.0 * lf + 1.0) * (lf - mf - 1.0) * (lf + mf - 1.0))
                / ((lf - mf) * (lf + mf) * (2.0 * lf - 3.0)))
                .sqrt();
            let p = a * cos_t * p_prev1 - b * p_prev2;
            store_harmonic(&mut out, l, m as i32, p * expi[m]);
            p_prev2 = p_prev1;
            p_prev1 = p;
        }
    }
    out
}

fn store_harmonic(out: &mut [Complex64], nu: usize, mu: i32, value: Complex64) {
    let base = nu * nu + nu;
    out[(base as i64 + mu as i64) as usize] = value;
    if mu != 0 {
        // Y_{nu,-mu} = (-1)^mu conj(Y_{nu,mu})
        let sign = if mu % 2 == 0 { 1.0 } else { -1.0 };
        out[(base as i64 - mu as i64) as usize] = sign * value.conj();
    }
}

/// A single orthonormal spherical harmonic `Y_{nu,mu}(dir)`.
pub fn sph_harmonic(order: Order, dir: &UnitDirection) -> Complex64 {
    let table = sph_harmonics_upto(order.nu() as usize, dir);
    table[order.index()]
}
