//! C ABI for the sound field estimation library.
//!
//! Conventions:
//! * Opaque handles (`SfeArray`, `SfeSnapshot`, `SfeEstimate`) are created
//!   and destroyed by this library; never free them with anything but the
//!   matching `sfe_*_free`.
//! * Constructors return null on failure; value-producing functions return a
//!   status code. The message of the last failure on the current thread is
//!   available through `sfe_last_error`.
//! * Complex data crosses the boundary as separate `re`/`im` arrays;
//!   positions as flat `[x0, y0, z0, x1, ...]` arrays in meters.

use std::cell::RefCell;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::Vector3;
use num_complex::Complex64;

use sfe::estimator::{
    evaluate_field, krr_open_estimate, proposed_estimate, swf_estimate, Estimate, FieldPart,
    PressureSnapshot, QMode, Regularization, WMode,
};
use sfe::geometry::{tdesign_60, MicArray};
use sfe::kernel::{KernelSpec, SrParams, SrWeightMode, WaveContext};
use sfe::linalg::CVector;
use sfe::simulation::{add_noise, rigid_sphere_pressures, NoiseSpec, SourceScene};

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status codes returned by fallible calls; they mirror the library's error
/// taxonomy (validation 2, numeric 3, I/O 4).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfeStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

fn status_of(err: &sfe::Error) -> SfeStatus {
    match err.exit_code() {
        2 => SfeStatus::Validation,
        3 => SfeStatus::Numeric,
        _ => SfeStatus::Io,
    }
}

/// Which field component to evaluate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfeFieldPart {
    Incident = 0,
    Scattered = 1,
    Total = 2,
}

/// Opaque microphone array handle.
pub struct SfeArray(MicArray);

/// Opaque pressure snapshot handle (one frequency).
pub struct SfeSnapshot(PressureSnapshot);

/// Opaque fitted estimate handle.
pub struct SfeEstimate(Estimate);

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (then only the
/// length is returned).
#[no_mangle]
pub unsafe extern "C" fn sfe_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

fn guard_ptr<T>(body: impl FnOnce() -> Option<Box<T>>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Some(b)) => Box::into_raw(b),
        Ok(None) => std::ptr::null_mut(),
        Err(_) => {
            set_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

fn guard_status(body: impl FnOnce() -> SfeStatus) -> SfeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            SfeStatus::Panic
        }
    }
}

// ---------------------------------------------------------------------------
// Arrays
// ---------------------------------------------------------------------------

/// The built-in 60-microphone spherical design scaled to `radius_m`.
#[no_mangle]
pub extern "C" fn sfe_array_tdesign60(radius_m: f64) -> *mut SfeArray {
    guard_ptr(|| match tdesign_60().scaled(radius_m) {
        Ok(a) => Some(Box::new(SfeArray(a))),
        Err(e) => {
            set_error(e.to_string());
            None
        }
    })
}

/// An array from `n_mics` positions (flat xyz, meters), all on the sphere of
/// radius `radius_m`.
///
/// # Safety
/// `xyz` must point to `3 * n_mics` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn sfe_array_new(
    xyz: *const f64,
    n_mics: usize,
    radius_m: f64,
) -> *mut SfeArray {
    if xyz.is_null() {
        set_error("xyz is null");
        return std::ptr::null_mut();
    }
    let coords = std::slice::from_raw_parts(xyz, 3 * n_mics);
    guard_ptr(|| {
        let positions = coords
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        match MicArray::new(radius_m, positions) {
            Ok(a) => Some(Box::new(SfeArray(a))),
            Err(e) => {
                set_error(e.to_string());
                None
            }
        }
    })
}

/// Number of microphones (0 for a null handle).
///
/// # Safety
/// `array` must be a live handle from an `sfe_array_*` constructor or null.
#[no_mangle]
pub unsafe extern "C" fn sfe_array_len(array: *const SfeArray) -> usize {
    if array.is_null() {
        return 0;
    }
    (*array).0.len()
}

/// # Safety
/// `array` must come from an `sfe_array_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sfe_array_free(array: *mut SfeArray) {
    if !array.is_null() {
        drop(Box::from_raw(array));
    }
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

/// Wraps measured complex pressures (length = microphone count) at one
/// frequency.
///
/// # Safety
/// `re` and `im` must point to `n` readable doubles; `array` must be a live
/// handle.
#[no_mangle]
pub unsafe extern "C" fn sfe_snapshot_new(
    array: *const SfeArray,
    frequency_hz: f64,
    sound_speed_mps: f64,
    re: *const f64,
    im: *const f64,
    n: usize,
) -> *mut SfeSnapshot {
    if array.is_null() || re.is_null() || im.is_null() {
        set_error("null pointer argument");
        return std::ptr::null_mut();
    }
    let arr = &(*array).0;
    let re = std::slice::from_raw_parts(re, n);
    let im = std::slice::from_raw_parts(im, n);
    guard_ptr(|| {
        let run = || -> sfe::Result<PressureSnapshot> {
            let ctx = WaveContext::new(frequency_hz, sound_speed_mps)?;
            let pressures =
                CVector::from_iterator(n, re.iter().zip(im).map(|(r, i)| Complex64::new(*r, *i)));
            PressureSnapshot::new(ctx, arr.clone(), pressures)
        };
        match run() {
            Ok(s) => Some(Box::new(SfeSnapshot(s))),
            Err(e) => {
                set_error(e.to_string());
                None
            }
        }
    })
}

/// Simulates rigid-sphere pressures for a single point source, optionally
/// adding calibrated complex Gaussian noise (`snr_db = INFINITY` for none).
///
/// # Safety
/// `source_xyz` must point to 3 readable doubles; `array` must be live.
#[no_mangle]
pub unsafe extern "C" fn sfe_simulate(
    array: *const SfeArray,
    frequency_hz: f64,
    sound_speed_mps: f64,
    source_xyz: *const f64,
    amplitude_re: f64,
    amplitude_im: f64,
    forward_order: u32,
    snr_db: f64,
    seed: u64,
) -> *mut SfeSnapshot {
    if array.is_null() || source_xyz.is_null() {
        set_error("null pointer argument");
        return std::ptr::null_mut();
    }
    let arr = &(*array).0;
    let src = std::slice::from_raw_parts(source_xyz, 3);
    guard_ptr(|| {
        let run = || -> sfe::Result<PressureSnapshot> {
            let ctx = WaveContext::new(frequency_hz, sound_speed_mps)?;
            let scene = SourceScene::single(
                Vector3::new(src[0], src[1], src[2]),
                Complex64::new(amplitude_re, amplitude_im),
            );
            let clean = rigid_sphere_pressures(&scene, arr, &ctx, forward_order as usize)?;
            Ok(add_noise(
                &clean,
                &NoiseSpec {
                    snr_db,
                    rng_seed: seed,
                },
            ))
        };
        match run() {
            Ok(s) => Some(Box::new(SfeSnapshot(s))),
            Err(e) => {
                set_error(e.to_string());
                None
            }
        }
    })
}

/// Copies the snapshot's complex pressures into `re`/`im`.
///
/// # Safety
/// `re` and `im` must point to at least `sfe_array_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sfe_snapshot_pressures(
    snapshot: *const SfeSnapshot,
    re: *mut f64,
    im: *mut f64,
) -> SfeStatus {
    if snapshot.is_null() || re.is_null() || im.is_null() {
        set_error("null pointer argument");
        return SfeStatus::NullPointer;
    }
    let snap = &(*snapshot).0;
    for (i, p) in snap.pressures.iter().enumerate() {
        *re.add(i) = p.re;
        *im.add(i) = p.im;
    }
    SfeStatus::Ok
}

/// # Safety
/// `snapshot` must come from a constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sfe_snapshot_free(snapshot: *mut SfeSnapshot) {
    if !snapshot.is_null() {
        drop(Box::from_raw(snapshot));
    }
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

fn fit_ptr(body: impl FnOnce() -> sfe::Result<Estimate>) -> *mut SfeEstimate {
    guard_ptr(|| match body() {
        Ok(e) => Some(Box::new(SfeEstimate(e))),
        Err(e) => {
            set_error(e.to_string());
            None
        }
    })
}

/// Modal least-squares fit on the rigid-sphere response up to `order`,
/// ridge weight `lambda`.
///
/// # Safety
/// `snapshot` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sfe_fit_swf(
    snapshot: *const SfeSnapshot,
    order: u32,
    lambda: f64,
) -> *mut SfeEstimate {
    if snapshot.is_null() {
        set_error("snapshot is null");
        return std::ptr::null_mut();
    }
    let snap = &(*snapshot).0;
    fit_ptr(|| swf_estimate(snap, order as usize, lambda))
}

/// Open-field kernel ridge regression with the diffuse-field kernel and a
/// radiating-basis scattered term up to `order`.
///
/// # Safety
/// `snapshot` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sfe_fit_krr_bessel(
    snapshot: *const SfeSnapshot,
    order: u32,
    lambda1: f64,
    lambda2: f64,
) -> *mut SfeEstimate {
    if snapshot.is_null() {
        set_error("snapshot is null");
        return std::ptr::null_mut();
    }
    let snap = &(*snapshot).0;
    fit_ptr(|| {
        krr_open_estimate(
            snap,
            &KernelSpec::Bessel,
            order as usize,
            Regularization::new(lambda1, lambda2)?,
            WMode::Identity,
        )
    })
}

/// Boundary-constrained fit with the diffuse-field incident kernel and the
/// source-region scattered kernel truncated at `n_ext`.
///
/// `analytic_weight` selects the uniform-source modal weights (otherwise
/// unit weights); `ridge_penalty` replaces the kernel-weighted penalty with
/// `ridge_lambda * I`.
///
/// # Safety
/// `snapshot` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sfe_fit_boundary_constrained(
    snapshot: *const SfeSnapshot,
    n_ext: u32,
    analytic_weight: bool,
    lambda1: f64,
    lambda2: f64,
    ridge_penalty: bool,
    ridge_lambda: f64,
) -> *mut SfeEstimate {
    if snapshot.is_null() {
        set_error("snapshot is null");
        return std::ptr::null_mut();
    }
    let snap = &(*snapshot).0;
    fit_ptr(|| {
        let weight = if analytic_weight {
            SrWeightMode::Analytic
        } else {
            SrWeightMode::Unit
        };
        let sr = SrParams::new(snap.array.radius_m(), n_ext as usize, weight)?;
        let q_mode = if ridge_penalty {
            QMode::Ridge(ridge_lambda)
        } else {
            QMode::Kernel
        };
        proposed_estimate(
            snap,
            &KernelSpec::Bessel,
            &sr,
            Regularization::new(lambda1, lambda2)?,
            q_mode,
        )
    })
}

/// Evaluates a fitted estimate at `n_points` positions (flat xyz).
///
/// # Safety
/// `points_xyz` must hold `3 * n_points` readable doubles; `out_re`/`out_im`
/// must hold `n_points` writable doubles; `estimate` must be live.
#[no_mangle]
pub unsafe extern "C" fn sfe_estimate_eval(
    estimate: *const SfeEstimate,
    points_xyz: *const f64,
    n_points: usize,
    part: SfeFieldPart,
    out_re: *mut f64,
    out_im: *mut f64,
) -> SfeStatus {
    if estimate.is_null() || points_xyz.is_null() || out_re.is_null() || out_im.is_null() {
        set_error("null pointer argument");
        return SfeStatus::NullPointer;
    }
    let est = &(*estimate).0;
    let coords = std::slice::from_raw_parts(points_xyz, 3 * n_points);
    guard_status(|| {
        let points: Vec<Vector3<f64>> = coords
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        let field_part = match part {
            SfeFieldPart::Incident => FieldPart::Incident,
            SfeFieldPart::Scattered => FieldPart::Scattered,
            SfeFieldPart::Total => FieldPart::Total,
        };
        match evaluate_field(est, &points, field_part) {
            Ok(values) => {
                for (i, v) in values.iter().enumerate() {
                    *out_re.add(i) = v.re;
                    *out_im.add(i) = v.im;
                }
                SfeStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `estimate` must come from a fit constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sfe_estimate_free(estimate: *mut SfeEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

// ---------------------------------------------------------------------------
// Metrics and references
// ---------------------------------------------------------------------------

/// Normalized mean squared error in dB between complex vectors.
///
/// # Safety
/// All arrays must hold `n` readable doubles; `out_db` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfe_nmse_db(
    est_re: *const f64,
    est_im: *const f64,
    truth_re: *const f64,
    truth_im: *const f64,
    n: usize,
    out_db: *mut f64,
) -> SfeStatus {
    if est_re.is_null()
        || est_im.is_null()
        || truth_re.is_null()
        || truth_im.is_null()
        || out_db.is_null()
    {
        set_error("null pointer argument");
        return SfeStatus::NullPointer;
    }
    let ere = std::slice::from_raw_parts(est_re, n);
    let eim = std::slice::from_raw_parts(est_im, n);
    let tre = std::slice::from_raw_parts(truth_re, n);
    let tim = std::slice::from_raw_parts(truth_im, n);
    guard_status(|| {
        let est: Vec<Complex64> = ere
            .iter()
            .zip(eim)
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect();
        let truth: Vec<Complex64> = tre
            .iter()
            .zip(tim)
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect();
        match sfe::evaluation::nmse_db(&est, &truth) {
            Ok(v) => {
                *out_db = v;
                SfeStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Free-field pressure of a point source at `n_points` positions.
///
/// # Safety
/// `source_xyz` holds 3 doubles, `points_xyz` holds `3 * n_points`, and the
/// output arrays hold `n_points` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sfe_point_source_field(
    source_xyz: *const f64,
    amplitude_re: f64,
    amplitude_im: f64,
    frequency_hz: f64,
    sound_speed_mps: f64,
    points_xyz: *const f64,
    n_points: usize,
    out_re: *mut f64,
    out_im: *mut f64,
) -> SfeStatus {
    if source_xyz.is_null() || points_xyz.is_null() || out_re.is_null() || out_im.is_null() {
        set_error("null pointer argument");
        return SfeStatus::NullPointer;
    }
    let src = std::slice::from_raw_parts(source_xyz, 3);
    let coords = std::slice::from_raw_parts(points_xyz, 3 * n_points);
    guard_status(|| {
        let run = || -> sfe::Result<Vec<Complex64>> {
            let ctx = WaveContext::new(frequency_hz, sound_speed_mps)?;
            let scene = SourceScene::single(
                Vector3::new(src[0], src[1], src[2]),
                Complex64::new(amplitude_re, amplitude_im),
            );
            let points: Vec<Vector3<f64>> = coords
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect();
            sfe::simulation::incident_truth(&scene, &points, &ctx)
        };
        match run() {
            Ok(values) => {
                for (i, v) in values.iter().enumerate() {
                    *out_re.add(i) = v.re;
                    *out_im.add(i) = v.im;
                }
                SfeStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}
