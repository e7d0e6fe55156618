//! Quantitative evaluation: NMSE of the reconstructed incident field,
//! multi-method frequency sweeps with oracle-tuned ridge weights, and planar
//! field/error maps.

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{direction_grid_by_name, sr_weight_mode, ExperimentConfig, MethodConfig};
use crate::error::{Error, Result};
use crate::estimator::{
    evaluate_field, swf_estimate, Estimate, FieldPart, PressureSnapshot, ProposedOperator, QMode,
    Regularization, WMode,
};
use crate::geometry::{filter_exterior, PlaneSpec};
use crate::kernel::{KernelSpec, WaveContext};
use crate::mdopt::optimize_md;
use crate::simulation::{add_noise, incident_truth, rigid_sphere_pressures, SourceScene};

/// Floor applied to the NMSE in dB so perfect reconstructions stay finite.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Normalized mean squared error in dB:
/// `10 log10( sum |est - truth|^2 / sum |truth|^2 )`, floored at -300 dB.
pub fn nmse_db(estimated: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(Error::validation(format!(
            "nmse needs equal nonempty lengths, got {} and {}",
            estimated.len(),
            truth.len()
        )));
    }
    let denom: f64 = truth.iter().map(|t| t.norm_sqr()).sum();
    if denom == 0.0 {
        return Err(Error::numeric("nmse denominator is zero (truth vanishes)"));
    }
    let num: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).norm_sqr())
        .sum();
    if num == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (num / denom).log10()).max(NMSE_FLOOR_DB))
}

/// One sweep cell's result.
#[derive(Debug, Clone)]
pub struct NmseResult {
    pub frequency_hz: f64,
    pub method_id: String,
    pub nmse_db: f64,
    pub lambda: Regularization,
}

/// Sweep over every (frequency, method) cell; failures are recorded and the
/// sweep continues.
#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub results: Vec<NmseResult>,
    pub failures: Vec<SweepFailure>,
}

#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub frequency_hz: f64,
    pub method_id: String,
    pub message: String,
}

/// The fixed per-frequency inputs a method fit consumes.
pub struct SweepCellInputs {
    pub ctx: WaveContext,
    pub snapshot: PressureSnapshot,
    pub eval_points: Vec<Vector3<f64>>,
    pub truth: Vec<Complex64>,
    pub interior_excluded: usize,
}

/// Builds the simulated observation and ground truth for one frequency.
pub fn prepare_cell_inputs(cfg: &ExperimentConfig, frequency_hz: f64) -> Result<SweepCellInputs> {
    let ctx = WaveContext::new(frequency_hz, cfg.wave.sound_speed_mps)?;
    let array = cfg.array()?;
    let scene = cfg.scene()?;
    let clean = rigid_sphere_pressures(&scene, &array, &ctx, cfg.forward.n_truncation)?;
    let snapshot = match cfg.noise_spec(frequency_hz) {
        Some(spec) => add_noise(&clean, &spec),
        None => clean,
    };
    let (eval_points, interior_excluded) =
        filter_exterior(cfg.eval_region()?.points(), cfg.array.radius_m);
    if eval_points.is_empty() {
        return Err(Error::validation(
            "no evaluation points remain outside the scatterer",
        ));
    }
    let truth = incident_truth(&scene, &eval_points, &ctx)?;
    Ok(SweepCellInputs {
        ctx,
        snapshot,
        eval_points,
        truth,
        interior_excluded,
    })
}

/// Fits one method on prepared inputs, tuning ridge weights on the oracle
/// grid where the method calls for it. Returns the winning estimate, the
/// weights used, and the NMSE.
pub fn fit_method(
    cfg: &ExperimentConfig,
    method: &MethodConfig,
    inputs: &SweepCellInputs,
) -> Result<(Estimate, Regularization, f64)> {
    let grid = cfg.lambda_grid_values();
    let snap = &inputs.snapshot;
    let score = |est: &Estimate| -> Result<f64> {
        let field = evaluate_field(est, &inputs.eval_points, FieldPart::Incident)?;
        nmse_db(&field, &inputs.truth)
    };

    match method {
        MethodConfig::Swf { n, .. } => {
            let mut best: Option<(Estimate, Regularization, f64)> = None;
            for &l in &grid {
                let est = swf_estimate(snap, *n, l)?;
                let nm = score(&est)?;
                if best.as_ref().is_none_or(|(_, _, b)| nm <= *b) {
                    best = Some((est, Regularization::new(l, 0.0)?, nm));
                }
            }
            Ok(best.expect("grid nonempty"))
        }
        MethodConfig::Krr {
            kernel,
            n,
            w_inverse_sr_weight,
            ..
        } => {
            let spec = kernel.to_spec()?;
            let w_mode = if *w_inverse_sr_weight {
                WMode::InverseSrWeight
            } else {
                WMode::Identity
            };
            let mut best: Option<(Estimate, Regularization, f64)> = None;
            for reg in reg_grid(&grid, cfg.lambda_grid.joint) {
                let est = crate::estimator::krr_open_estimate(snap, &spec, *n, reg, w_mode)?;
                let nm = score(&est)?;
                if best.as_ref().is_none_or(|(_, _, b)| nm <= *b) {
                    best = Some((est, reg, nm));
                }
            }
            Ok(best.expect("grid nonempty"))
        }
        MethodConfig::Proposed {
            kernel,
            n_ext,
            sr_weight,
            q_mode,
            ridge_lambda,
            ..
        } => {
            let spec = kernel.to_spec()?;
            let sr = cfg.sr_params(*n_ext, sr_weight_mode(sr_weight)?)?;
            let op = ProposedOperator::build(&snap.array, &snap.ctx, &spec, &sr)?;
            match q_mode.as_str() {
                "ridge" => {
                    if let Some(l) = ridge_lambda {
                        let est = op.fit(&snap.pressures, Regularization::shared(*l), QMode::Ridge(*l))?;
                        let nm = score(&est)?;
                        Ok((est, Regularization::shared(*l), nm))
                    } else {
                        let mut best: Option<(Estimate, Regularization, f64)> = None;
                        for &l in &grid {
                            let est =
                                op.fit(&snap.pressures, Regularization::shared(l), QMode::Ridge(l))?;
                            let nm = score(&est)?;
                            if best.as_ref().is_none_or(|(_, _, b)| nm <= *b) {
                                best = Some((est, Regularization::shared(l), nm));
                            }
                        }
                        Ok(best.expect("grid nonempty"))
                    }
                }
                _ => {
                    let mut best: Option<(Estimate, Regularization, f64)> = None;
                    for reg in reg_grid(&grid, cfg.lambda_grid.joint) {
                        let est = op.fit(&snap.pressures, reg, QMode::Kernel)?;
                        let nm = score(&est)?;
                        if best.as_ref().is_none_or(|(_, _, b)| nm <= *b) {
                            best = Some((est, reg, nm));
                        }
                    }
                    Ok(best.expect("grid nonempty"))
                }
            }
        }
        MethodConfig::ProposedMd {
            n_ext,
            sr_weight,
            directions,
            mdopt,
            ..
        } => {
            let sr = cfg.sr_params(*n_ext, sr_weight_mode(sr_weight)?)?;
            let dir_grid = direction_grid_by_name(directions)?;
            let outcome = optimize_md(snap, &dir_grid, &sr, mdopt)?;
            let spec = KernelSpec::MultiDirectional(outcome.params);
            let op = ProposedOperator::build(&snap.array, &snap.ctx, &spec, &sr)?;
            let reg = Regularization::shared(mdopt.lambda_fixed);
            let est = op.fit(&snap.pressures, reg, QMode::Ridge(mdopt.lambda_fixed))?;
            let nm = score(&est)?;
            Ok((est, reg, nm))
        }
    }
}

/// Shared-weight grid by default; the joint flag scans `(lambda1, lambda2)`
/// pairs exhaustively.
fn reg_grid(grid: &[f64], joint: bool) -> Vec<Regularization> {
    if joint {
        let mut out = Vec::with_capacity(grid.len() * grid.len());
        for &l1 in grid {
            for &l2 in grid {
                out.push(Regularization { lambda1: l1, lambda2: l2 });
            }
        }
        out
    } else {
        grid.iter().map(|&l| Regularization::shared(l)).collect()
    }
}

/// Runs every (frequency, method) cell, optionally restricted to a roster
/// subset. Cells are independent jobs; results keep the (frequency, method)
/// config order regardless of scheduling.
pub fn frequency_sweep(cfg: &ExperimentConfig, methods: Option<&[String]>) -> Result<SweepOutcome> {
    let roster: Vec<&MethodConfig> = cfg
        .methods
        .iter()
        .filter(|m| methods.is_none_or(|ids| ids.iter().any(|id| id == m.id())))
        .collect();
    if roster.is_empty() {
        return Err(Error::validation("method filter matched nothing"));
    }
    let cells: Vec<(f64, &MethodConfig)> = cfg
        .frequencies()
        .into_iter()
        .flat_map(|f| roster.iter().map(move |m| (f, *m)))
        .collect();
    let computed: Vec<std::result::Result<NmseResult, SweepFailure>> = cells
        .par_iter()
        .map(|(f, m)| {
            let run = || -> Result<NmseResult> {
                let inputs = prepare_cell_inputs(cfg, *f)?;
                let (_, lambda, nmse) = fit_method(cfg, m, &inputs)?;
                Ok(NmseResult {
                    frequency_hz: *f,
                    method_id: m.id().to_string(),
                    nmse_db: nmse,
                    lambda,
                })
            };
            run().map_err(|e| SweepFailure {
                frequency_hz: *f,
                method_id: m.id().to_string(),
                message: e.to_string(),
            })
        })
        .collect();
    let mut outcome = SweepOutcome::default();
    for c in computed {
        match c {
            Ok(r) => outcome.results.push(r),
            Err(f) => outcome.failures.push(f),
        }
    }
    Ok(outcome)
}

/// Planar field and error map of a fitted estimate.
#[derive(Debug, Clone)]
pub struct FieldMap {
    pub plane: PlaneSpec,
    pub points: Vec<Vector3<f64>>,
    pub estimated: Vec<Complex64>,
    pub truth: Vec<Complex64>,
    /// `|est - truth|^2 / mean_over_exterior(|truth|^2)` per point.
    pub norm_err: Vec<f64>,
    /// NMSE over the exterior points only.
    pub aggregate_nmse_db: f64,
    pub interior_excluded: usize,
}

/// Evaluates one estimate on a plane against the scene's incident truth.
/// Points inside the scatterer stay in the map rows but are excluded from the
/// aggregate NMSE and the error normalizer.
pub fn error_map(
    est: &Estimate,
    plane: &PlaneSpec,
    scene: &SourceScene,
    ctx: &WaveContext,
    scatterer_radius_m: f64,
) -> Result<FieldMap> {
    let points = crate::geometry::grid_plane(plane);
    let estimated = evaluate_field(est, &points, FieldPart::Incident)?;
    let truth = incident_truth(scene, &points, ctx)?;

    let exterior: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].norm() > scatterer_radius_m)
        .collect();
    if exterior.is_empty() {
        return Err(Error::validation("plane lies entirely inside the scatterer"));
    }
    let est_ext: Vec<Complex64> = exterior.iter().map(|&i| estimated[i]).collect();
    let truth_ext: Vec<Complex64> = exterior.iter().map(|&i| truth[i]).collect();
    let aggregate_nmse_db = nmse_db(&est_ext, &truth_ext)?;
    let mean_sq =
        truth_ext.iter().map(|t| t.norm_sqr()).sum::<f64>() / exterior.len() as f64;
    let norm_err: Vec<f64> = estimated
        .iter()
        .zip(&truth)
        .map(|(e, t)| (e - t).norm_sqr() / mean_sq)
        .collect();
    let interior_excluded = points.len() - exterior.len();
    Ok(FieldMap {
        plane: plane.clone(),
        points,
        estimated,
        truth,
        norm_err,
        aggregate_nmse_db,
        interior_excluded,
    })
}

/// `sweep.csv` content: frequency_hz, method, nmse_db, lambda1, lambda2.
pub fn sweep_csv(results: &[NmseResult], header_note: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {header_note}\n"));
    out.push_str("frequency_hz,method,nmse_db,lambda1,lambda2\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.frequency_hz, r.method_id, r.nmse_db, r.lambda.lambda1, r.lambda.lambda2
        ));
    }
    out
}

/// `map_<method>_<freq>.csv` content:
/// x, y, z, re_est, im_est, re_truth, im_truth, norm_err.
pub fn map_csv(map: &FieldMap, header_note: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {header_note}\n"));
    out.push_str(&format!(
        "# aggregate_nmse_db={} interior_excluded={}\n",
        map.aggregate_nmse_db, map.interior_excluded
    ));
    out.push_str("x,y,z,re_est,im_est,re_truth,im_truth,norm_err\n");
    for i in 0..map.points.len() {
        let p = &map.points[i];
        let e = &map.estimated[i];
        let t = &map.truth[i];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.x, p.y, p.z, e.re, e.im, t.re, t.im, map.norm_err[i]
        ));
    }
    out
}

/// Per-cell content hash for cache keys and output headers.
pub fn cell_hash(config_text: &str, seed: u64, frequency_hz: f64, method_id: &str) -> u64 {
    crate::config::fnv1a(&[
        config_text.as_bytes(),
        &seed.to_le_bytes(),
        &frequency_hz.to_bits().to_le_bytes(),
        method_id.as_bytes(),
    ])
}

// re-export used by the CLI for convenience
pub use crate::config::fnv1a;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use approx::assert_relative_eq;

    fn small_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
seed = 7
[wave]
sound_speed_mps = 340.26
[array]
radius_m = 0.05
layout = "tdesign60"
[[scene.sources]]
position = [3.0, 0.0, 0.0]
[frequencies]
list = [500.0]
[eval_region]
kind = "ball"
radius_m = 0.175
n_points = 120
{extra}
"#
        );
        ExperimentConfig::from_str_toml(&text).unwrap()
    }

    #[test]
    fn nmse_trivial_values() {
        let truth = vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.3)];
        assert_eq!(nmse_db(&truth, &truth).unwrap(), NMSE_FLOOR_DB);
        let zeros = vec![Complex64::new(0.0, 0.0); 2];
        assert_relative_eq!(nmse_db(&zeros, &truth).unwrap(), 0.0, epsilon = 1e-12);
        let double: Vec<Complex64> = truth.iter().map(|t| 2.0 * t).collect();
        assert_relative_eq!(nmse_db(&double, &truth).unwrap(), 0.0, epsilon = 1e-12);
        assert!(nmse_db(&zeros, &zeros).is_err());
        assert!(nmse_db(&zeros, &truth[..1]).is_err());
    }

    #[test]
    fn nmse_invariant_under_global_phase() {
        let truth = vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.3)];
        let est = vec![Complex64::new(0.9, 2.1), Complex64::new(-0.4, 0.2)];
        let phase = Complex64::from_polar(1.0, 1.234);
        let a = nmse_db(&est, &truth).unwrap();
        let est_r: Vec<Complex64> = est.iter().map(|e| e * phase).collect();
        let truth_r: Vec<Complex64> = truth.iter().map(|t| t * phase).collect();
        let b = nmse_db(&est_r, &truth_r).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn single_cell_sweep_produces_one_row() {
        let cfg = small_config(
            r#"
[[methods]]
kind = "swf"
id = "swf"
n = 5
"#,
        );
        let out = frequency_sweep(&cfg, None).unwrap();
        assert_eq!(out.results.len(), 1);
        assert!(out.failures.is_empty());
        let r = &out.results[0];
        assert_eq!(r.method_id, "swf");
        assert_eq!(r.frequency_hz, 500.0);
        assert!(r.nmse_db.is_finite());
    }

    #[test]
    fn noiseless_swf_at_200hz_is_accurate() {
        // low kR is fully in-model for order 5
        let cfg = small_config(
            r#"
[[methods]]
kind = "swf"
id = "swf"
n = 5
"#,
        );
        let mut cfg = cfg;
        cfg.frequencies = crate::config::FrequenciesConfig::List { list: vec![200.0] };
        let out = frequency_sweep(&cfg, None).unwrap();
        assert!(
            out.results[0].nmse_db < -40.0,
            "noiseless modal NMSE {}",
            out.results[0].nmse_db
        );
    }

    #[test]
    fn noiseless_boundary_constraint_beats_open_field_at_500hz() {
        // identical noiseless data, matched ridge grids
        let cfg = small_config(
            r#"
[[methods]]
kind = "krr"
id = "krr"
kernel = "bessel"
n = 5
[[methods]]
kind = "proposed"
id = "proposed"
kernel = "bessel"
n_ext = 5
"#,
        );
        let out = frequency_sweep(&cfg, None).unwrap();
        let get = |id: &str| {
            out.results
                .iter()
                .find(|r| r.method_id == id)
                .unwrap()
                .nmse_db
        };
        assert!(
            get("proposed") < get("krr"),
            "proposed {} !< krr {}",
            get("proposed"),
            get("krr")
        );
    }

    #[test]
    fn sweep_is_reproducible_bitwise() {
        let cfg = small_config(
            r#"
[noise]
snr_db = 20.0
[[methods]]
kind = "krr"
id = "krr"
kernel = "bessel"
n = 5
"#,
        );
        let a = frequency_sweep(&cfg, None).unwrap();
        let b = frequency_sweep(&cfg, None).unwrap();
        assert_eq!(a.results.len(), b.results.len());
        for (x, y) in a.results.iter().zip(&b.results) {
            assert_eq!(x.nmse_db.to_bits(), y.nmse_db.to_bits());
            assert_eq!(x.lambda.lambda1.to_bits(), y.lambda.lambda1.to_bits());
        }
    }

    #[test]
    fn method_filter_selects_subset() {
        let cfg = small_config(
            r#"
[[methods]]
kind = "swf"
id = "swf"
n = 5
[[methods]]
kind = "krr"
id = "krr"
kernel = "bessel"
n = 5
"#,
        );
        let out = frequency_sweep(&cfg, Some(&["krr".to_string()])).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.results[0].method_id, "krr");
        assert!(frequency_sweep(&cfg, Some(&["nope".to_string()])).is_err());
    }

    #[test]
    fn error_map_aggregate_matches_nmse_definition() {
        let cfg = small_config(
            r#"
[[methods]]
kind = "proposed"
id = "proposed"
kernel = "bessel"
n_ext = 5
"#,
        );
        let inputs = prepare_cell_inputs(&cfg, 500.0).unwrap();
        let (est, _, _) = fit_method(&cfg, &cfg.methods[0], &inputs).unwrap();
        let plane = PlaneSpec {
            axes: crate::geometry::PlaneAxes::Xy,
            extent_m: [0.3, 0.3],
            spacing_m: 0.05,
            offset_m: 0.0,
        };
        let scene = cfg.scene().unwrap();
        let map = error_map(&est, &plane, &scene, &inputs.ctx, 0.05).unwrap();
        assert_eq!(map.points.len(), 49);
        assert_eq!(map.estimated.len(), map.truth.len());
        assert_eq!(map.norm_err.len(), map.points.len());
        assert!(map.interior_excluded > 0);

        // aggregate equals the nmse over exterior points, by definition
        let ext: Vec<usize> = (0..map.points.len())
            .filter(|&i| map.points[i].norm() > 0.05)
            .collect();
        let e: Vec<Complex64> = ext.iter().map(|&i| map.estimated[i]).collect();
        let t: Vec<Complex64> = ext.iter().map(|&i| map.truth[i]).collect();
        assert_eq!(map.aggregate_nmse_db, nmse_db(&e, &t).unwrap());

        // truth column is the free-field superposition
        let direct = incident_truth(&scene, &map.points, &inputs.ctx).unwrap();
        for (a, b) in map.truth.iter().zip(&direct) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_formats_are_stable() {
        let results = vec![NmseResult {
            frequency_hz: 500.0,
            method_id: "swf".into(),
            nmse_db: -12.5,
            lambda: Regularization::new(1e-4, 0.0).unwrap(),
        }];
        let csv = sweep_csv(&results, "hash=42");
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# hash=42");
        assert_eq!(
            lines.next().unwrap(),
            "frequency_hz,method,nmse_db,lambda1,lambda2"
        );
        assert_eq!(lines.next().unwrap(), "500,swf,-12.5,0.0001,0");
    }
}
