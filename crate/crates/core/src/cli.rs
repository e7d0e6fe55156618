//! Experiment drivers behind the `sfe` binary: simulate, sweep (with a
//! per-cell cache for resumability), map, optimize-md, and ingest.
//!
//! Every output file starts with a `# config_hash=... seed=...` comment so
//! identical inputs can be recognized; all writes are deterministic.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{direction_grid_by_name, fnv1a, sr_weight_mode, ExperimentConfig, MethodConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    cell_hash, error_map, fit_method, map_csv, prepare_cell_inputs, sweep_csv, NmseResult,
};
use crate::geometry::DirectionGrid;
use crate::ingest::{ir_to_snapshot, load_ir_csv};
use crate::kernel::MdParams;
use crate::mdopt::optimize_md;
use crate::special::UnitDirection;

/// A loaded configuration plus the raw text it came from (hashed into output
/// headers) and the resolved output directory.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub config_text: String,
    pub out_dir: PathBuf,
}

impl RunContext {
    pub fn load(
        config_path: &Path,
        out_override: Option<PathBuf>,
        seed_override: Option<u64>,
    ) -> Result<Self> {
        let mut config_text = std::fs::read_to_string(config_path)?;
        if let Some(seed) = seed_override {
            // the override participates in the hash through the text
            config_text.push_str(&format!("\n# seed override: {seed}\n"));
        }
        let mut config = ExperimentConfig::from_str_toml(&std::fs::read_to_string(config_path)?)?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        let out_dir = out_override.unwrap_or_else(|| config.out_dir.clone());
        Ok(RunContext {
            config,
            config_text,
            out_dir,
        })
    }

    pub fn from_parts(config: ExperimentConfig, config_text: String, out_dir: PathBuf) -> Self {
        RunContext {
            config,
            config_text,
            out_dir,
        }
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a(&[
            self.config_text.as_bytes(),
            &self.config.seed.to_le_bytes(),
        ])
    }

    pub fn header_note(&self) -> String {
        format!(
            "config_hash={:016x} seed={}",
            self.config_hash(),
            self.config.seed
        )
    }

    fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }
}

fn format_freq(frequency_hz: f64) -> String {
    if frequency_hz.fract() == 0.0 {
        format!("{}", frequency_hz as i64)
    } else {
        format!("{frequency_hz}")
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Writes per-frequency microphone snapshots and evaluation-point truth
/// values to CSV.
pub fn run_simulate(rc: &RunContext) -> Result<Vec<PathBuf>> {
    rc.ensure_out_dir()?;
    let note = rc.header_note();
    let mut written = Vec::new();
    for f in rc.config.frequencies() {
        let inputs = prepare_cell_inputs(&rc.config, f)?;
        let tag = format_freq(f);

        let mut snap_csv = format!("# {note}\n");
        let _ = writeln!(snap_csv, "# frequency_hz={f}");
        snap_csv.push_str("mic,x,y,z,re,im\n");
        for (m, p) in inputs.snapshot.array.positions().iter().enumerate() {
            let v = inputs.snapshot.pressures[m];
            let _ = writeln!(snap_csv, "{m},{},{},{},{},{}", p.x, p.y, p.z, v.re, v.im);
        }
        let snap_path = rc.out_dir.join(format!("snapshot_{tag}.csv"));
        std::fs::write(&snap_path, snap_csv)?;
        written.push(snap_path);

        let mut truth_csv = format!("# {note}\n");
        let _ = writeln!(
            truth_csv,
            "# frequency_hz={f} interior_excluded={}",
            inputs.interior_excluded
        );
        truth_csv.push_str("x,y,z,re,im\n");
        for (p, v) in inputs.eval_points.iter().zip(&inputs.truth) {
            let _ = writeln!(truth_csv, "{},{},{},{},{}", p.x, p.y, p.z, v.re, v.im);
        }
        let truth_path = rc.out_dir.join(format!("truth_{tag}.csv"));
        std::fs::write(&truth_path, truth_csv)?;
        written.push(truth_path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Outcome counters of a sweep run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRunStats {
    pub rows: usize,
    pub computed_cells: usize,
    pub cached_cells: usize,
    pub failed_cells: usize,
    pub sweep_path: PathBuf,
}

/// Runs the multi-method sweep, one cache file per (frequency, method) cell;
/// cells whose cache file exists are reused without recomputation, making
/// interrupted sweeps resumable. Failures are recorded and the sweep
/// continues.
pub fn run_sweep(rc: &RunContext, methods: Option<&[String]>) -> Result<SweepRunStats> {
    rc.ensure_out_dir()?;
    let cells_dir = rc.out_dir.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    let note = rc.header_note();

    let roster: Vec<&MethodConfig> = rc
        .config
        .methods
        .iter()
        .filter(|m| methods.is_none_or(|ids| ids.iter().any(|id| id == m.id())))
        .collect();
    if roster.is_empty() {
        return Err(Error::validation("method filter matched nothing"));
    }

    let mut results: Vec<NmseResult> = Vec::new();
    let mut stats = SweepRunStats {
        rows: 0,
        computed_cells: 0,
        cached_cells: 0,
        failed_cells: 0,
        sweep_path: rc.out_dir.join("sweep.csv"),
    };

    for f in rc.config.frequencies() {
        for m in &roster {
            let hash = cell_hash(&rc.config_text, rc.config.seed, f, m.id());
            let cell_path = cells_dir.join(format!("cell_{hash:016x}.csv"));
            if cell_path.exists() {
                match read_cell_file(&cell_path) {
                    Ok(row) => {
                        results.push(row);
                        stats.cached_cells += 1;
                        continue;
                    }
                    Err(_) => {
                        // corrupt cache entry: recompute below
                        std::fs::remove_file(&cell_path)?;
                    }
                }
            }
            let computed = (|| -> Result<NmseResult> {
                let inputs = prepare_cell_inputs(&rc.config, f)?;
                let (_, lambda, nmse) = fit_method(&rc.config, m, &inputs)?;
                Ok(NmseResult {
                    frequency_hz: f,
                    method_id: m.id().to_string(),
                    nmse_db: nmse,
                    lambda,
                })
            })();
            match computed {
                Ok(row) => {
                    let body = sweep_csv(std::slice::from_ref(&row), &note);
                    std::fs::write(&cell_path, body)?;
                    results.push(row);
                    stats.computed_cells += 1;
                }
                Err(e) => {
                    eprintln!("cell ({f} Hz, {}) failed: {e}", m.id());
                    stats.failed_cells += 1;
                }
            }
        }
    }

    stats.rows = results.len();
    std::fs::write(&stats.sweep_path, sweep_csv(&results, &note))?;
    Ok(stats)
}

fn read_cell_file(path: &Path) -> Result<NmseResult> {
    let text = std::fs::read_to_string(path)?;
    let row = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.starts_with("frequency_hz"))
        .ok_or_else(|| Error::parse(1, "cell file has no data row"))?;
    let cols: Vec<&str> = row.split(',').collect();
    if cols.len() != 5 {
        return Err(Error::parse(1, "cell row needs 5 columns"));
    }
    Ok(NmseResult {
        frequency_hz: cols[0]
            .parse()
            .map_err(|e| Error::parse(1, format!("bad frequency: {e}")))?,
        method_id: cols[1].to_string(),
        nmse_db: cols[2]
            .parse()
            .map_err(|e| Error::parse(1, format!("bad nmse: {e}")))?,
        lambda: crate::estimator::Regularization::new(
            cols[3]
                .parse()
                .map_err(|e| Error::parse(1, format!("bad lambda1: {e}")))?,
            cols[4]
                .parse()
                .map_err(|e| Error::parse(1, format!("bad lambda2: {e}")))?,
        )?,
    })
}

// ---------------------------------------------------------------------------
// map
// ---------------------------------------------------------------------------

/// Fits one (method, frequency) cell exactly as the sweep would and renders
/// the configured plane as field and error maps.
pub fn run_map(rc: &RunContext, method_id: &str, frequency_hz: f64) -> Result<PathBuf> {
    rc.ensure_out_dir()?;
    let method = rc
        .config
        .methods
        .iter()
        .find(|m| m.id() == method_id)
        .ok_or_else(|| Error::validation(format!("unknown method id {method_id:?}")))?;
    let plane = rc
        .config
        .map
        .as_ref()
        .ok_or_else(|| Error::validation("config has no [map] section"))?
        .to_spec()?;
    let inputs = prepare_cell_inputs(&rc.config, frequency_hz)?;
    let (est, _, _) = fit_method(&rc.config, method, &inputs)?;
    let scene = rc.config.scene()?;
    let map = error_map(&est, &plane, &scene, &inputs.ctx, rc.config.array.radius_m)?;
    let path = rc.out_dir.join(format!(
        "map_{}_{}.csv",
        method_id,
        format_freq(frequency_hz)
    ));
    std::fs::write(&path, map_csv(&map, &rc.header_note()))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// optimize-md
// ---------------------------------------------------------------------------

/// Runs the multidirectional-kernel optimization at one frequency and writes
/// the optimized parameters and the iteration trace.
pub fn run_optimize_md(rc: &RunContext, frequency_hz: f64) -> Result<(PathBuf, PathBuf)> {
    rc.ensure_out_dir()?;
    let method = rc
        .config
        .methods
        .iter()
        .find_map(|m| match m {
            MethodConfig::ProposedMd {
                n_ext,
                sr_weight,
                directions,
                mdopt,
                ..
            } => Some((n_ext, sr_weight, directions, mdopt)),
            _ => None,
        })
        .ok_or_else(|| Error::validation("config has no proposed_md method"))?;
    let (n_ext, sr_weight, directions, cfg) = method;
    let inputs = prepare_cell_inputs(&rc.config, frequency_hz)?;
    let sr = rc.config.sr_params(*n_ext, sr_weight_mode(sr_weight)?)?;
    let grid = direction_grid_by_name(directions)?;
    let outcome = optimize_md(&inputs.snapshot, &grid, &sr, cfg)?;

    let note = rc.header_note();
    let tag = format_freq(frequency_hz);
    let final_loss = outcome.trace.records.last().map_or(f64::NAN, |r| r.loss);
    let initial_loss = outcome.trace.records.first().map_or(f64::NAN, |r| r.loss);

    let mut params_csv = format!("# {note}\n");
    let _ = writeln!(
        params_csv,
        "# frequency_hz={frequency_hz} initial_loss={initial_loss} final_loss={final_loss} \
         diverged={} loss_increased={}",
        outcome.diverged, outcome.loss_increased
    );
    params_csv.push_str("q,dx,dy,dz,gamma,zeta\n");
    for (q, d) in outcome.params.grid.directions().iter().enumerate() {
        let _ = writeln!(
            params_csv,
            "{q},{},{},{},{},{}",
            d.x(),
            d.y(),
            d.z(),
            outcome.params.gamma[q],
            outcome.params.zeta[q]
        );
    }
    let params_path = rc.out_dir.join(format!("mdopt_params_{tag}.csv"));
    std::fs::write(&params_path, params_csv)?;

    let trace_path = rc.out_dir.join(format!("mdopt_trace_{tag}.csv"));
    std::fs::write(
        &trace_path,
        format!("# {note}\n{}", outcome.trace.to_csv()),
    )?;
    Ok((params_path, trace_path))
}

/// Reads an optimized-parameter CSV back into a kernel parameter set.
pub fn read_md_params_csv(path: &Path) -> Result<MdParams> {
    let text = std::fs::read_to_string(path)?;
    let mut dirs = Vec::new();
    let mut gamma = Vec::new();
    let mut zeta = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') || line.starts_with("q,") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(Error::parse(lineno, "parameter row needs 6 columns"));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::parse(lineno, format!("bad number {s:?}: {e}")))
        };
        dirs.push(UnitDirection::new([
            parse(cols[1])?,
            parse(cols[2])?,
            parse(cols[3])?,
        ])?);
        gamma.push(parse(cols[4])?);
        zeta.push(parse(cols[5])?);
    }
    MdParams::new(DirectionGrid::new(dirs)?, gamma, zeta)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

/// Converts a measured impulse-response file to a pressure-snapshot CSV at
/// the DFT bin nearest the requested frequency.
pub fn run_ingest(
    rc: &RunContext,
    input: &Path,
    frequency_hz: f64,
    out_file: Option<PathBuf>,
) -> Result<PathBuf> {
    rc.ensure_out_dir()?;
    let irs = load_ir_csv(input)?;
    let report = ir_to_snapshot(&irs, frequency_hz, rc.config.wave.sound_speed_mps)?;
    let mut csv = format!("# {}\n", rc.header_note());
    let _ = writeln!(
        csv,
        "# requested_hz={frequency_hz} bin={} bin_hz={} deviation_hz={}",
        report.bin, report.bin_frequency_hz, report.deviation_hz
    );
    csv.push_str("mic,x,y,z,re,im\n");
    for (m, p) in report.snapshot.array.positions().iter().enumerate() {
        let v = report.snapshot.pressures[m];
        let _ = writeln!(csv, "{m},{},{},{},{},{}", p.x, p.y, p.z, v.re, v.im);
    }
    let path = out_file.unwrap_or_else(|| {
        rc.out_dir
            .join(format!("ingest_{}.csv", format_freq(frequency_hz)))
    });
    std::fs::write(&path, csv)?;
    Ok(path)
}
