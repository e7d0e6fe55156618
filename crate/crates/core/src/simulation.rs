//! Ground-truth incident fields and rigid-sphere microphone observations for
//! point-source scenes, with calibrated additive noise.
//!
//! Time convention `exp(-i omega t)`: outgoing waves carry `exp(+ikr)` and
//! the free-field Green's function is `exp(ik|r - r_s|) / (4 pi |r - r_s|)`.
//! The interior expansion of a unit point source at `r_s` is
//! `i k h_nu(k |r_s|) conj(Y_{nu,mu})` per regular-basis mode, which the
//! expansion-vs-closed-form tests pin down end to end.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::estimator::{rigid_sphere_response_matrix, PressureSnapshot, SwfCoefficients};
use crate::geometry::MicArray;
use crate::kernel::WaveContext;
use crate::linalg::CVector;
use crate::special::{sph_hankel1_upto, sph_harmonics_upto, UnitDirection};

/// A monochromatic point source.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSource {
    pub position: Vector3<f64>,
    pub amplitude: Complex64,
}

/// The source constellation of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    pub sources: Vec<PointSource>,
}

impl SourceScene {
    pub fn new(sources: Vec<PointSource>) -> Self {
        SourceScene { sources }
    }

    pub fn single(position: Vector3<f64>, amplitude: Complex64) -> Self {
        SourceScene {
            sources: vec![PointSource {
                position,
                amplitude,
            }],
        }
    }

    /// Every source must sit strictly outside the given radius (scatterer or
    /// evaluation region).
    pub fn validate_outside(&self, radius_m: f64) -> Result<()> {
        for (i, s) in self.sources.iter().enumerate() {
            if s.position.norm() <= radius_m {
                return Err(Error::validation(format!(
                    "source {i} at distance {} lies inside the protected radius {radius_m}",
                    s.position.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Additive-noise description; an infinite SNR means no noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub rng_seed: u64,
}

/// Free-field Green's function `exp(ik d) / (4 pi d)`.
pub fn greens_function(
    r: &Vector3<f64>,
    rs: &Vector3<f64>,
    ctx: &WaveContext,
) -> Result<Complex64> {
    let d = (r - rs).norm();
    if d == 0.0 {
        return Err(Error::numeric(
            "Green's function is singular at coincident points",
        ));
    }
    let k = ctx.wavenumber();
    Ok(Complex64::from_polar(1.0, k * d) / (4.0 * std::f64::consts::PI * d))
}

/// Regular-basis expansion coefficients of a point source seen from inside
/// its radius: `amplitude * i k h_nu(k |r_s|) conj(Y_{nu,mu}(r_s/|r_s|))`.
#[allow(clippy::needless_range_loop)]
pub fn point_source_swf_coeffs(
    rs: &Vector3<f64>,
    amplitude: Complex64,
    ctx: &WaveContext,
    n: usize,
) -> Result<SwfCoefficients> {
    let radius = rs.norm();
    if radius == 0.0 {
        return Err(Error::numeric("point source at the origin"));
    }
    let k = ctx.wavenumber();
    let h = sph_hankel1_upto(n, k * radius)?;
    let dir = UnitDirection::from_vector([rs.x, rs.y, rs.z])?;
    let harm = sph_harmonics_upto(n, &dir);
    let mut coeffs = CVector::zeros((n + 1) * (n + 1));
    let scale = amplitude * Complex64::i() * k;
    for nu in 0..=n {
        let base = nu * nu + nu;
        for mu in -(nu as i32)..=(nu as i32) {
            let idx = (base as i64 + mu as i64) as usize;
            coeffs[idx] = scale * h[nu] * harm[idx].conj();
        }
    }
    SwfCoefficients::new(n, coeffs)
}

/// Superposed expansion coefficients of a whole scene.
pub fn scene_swf_coeffs(
    scene: &SourceScene,
    ctx: &WaveContext,
    n: usize,
) -> Result<SwfCoefficients> {
    let mut total = SwfCoefficients::zeros(n);
    for s in &scene.sources {
        let c = point_source_swf_coeffs(&s.position, s.amplitude, ctx, n)?;
        *total.coeffs_mut() += c.coeffs();
    }
    Ok(total)
}

/// Clean total pressures at the microphones of a rigid-sphere array via the
/// modal response applied to the scene's expansion coefficients.
pub fn rigid_sphere_pressures(
    scene: &SourceScene,
    array: &MicArray,
    ctx: &WaveContext,
    n: usize,
) -> Result<PressureSnapshot> {
    scene.validate_outside(array.radius_m())?;
    let coeffs = scene_swf_coeffs(scene, ctx, n)?;
    let response = rigid_sphere_response_matrix(array, ctx, n)?;
    let pressures = response * coeffs.coeffs();
    PressureSnapshot::new(*ctx, array.clone(), pressures)
}

/// Adds circularly symmetric complex Gaussian noise calibrated so that the
/// per-microphone SNR equals `snr_db` against the snapshot's mean square
/// pressure. Deterministic under the seed; an infinite SNR returns the
/// snapshot unchanged.
pub fn add_noise(snap: &PressureSnapshot, spec: &NoiseSpec) -> PressureSnapshot {
    if spec.snr_db.is_infinite() {
        return snap.clone();
    }
    let m = snap.len();
    let mean_sq: f64 = snap.pressures.iter().map(|p| p.norm_sqr()).sum::<f64>() / m as f64;
    let sigma2 = mean_sq * 10f64.powf(-spec.snr_db / 10.0);
    let per_component = (sigma2 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut pressures = snap.pressures.clone();
    for p in pressures.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *p += Complex64::new(per_component * re, per_component * im);
    }
    PressureSnapshot {
        ctx: snap.ctx,
        array: snap.array.clone(),
        pressures,
    }
}

/// Incident-field ground truth: the free-field superposition of the scene's
/// sources at the given points.
pub fn incident_truth(
    scene: &SourceScene,
    points: &[Vector3<f64>],
    ctx: &WaveContext,
) -> Result<Vec<Complex64>> {
    points
        .iter()
        .map(|p| {
            let mut acc = Complex64::new(0.0, 0.0);
            for s in &scene.sources {
                acc += s.amplitude * greens_function(p, &s.position, ctx)?;
            }
            Ok(acc)
        })
        .collect()
}
