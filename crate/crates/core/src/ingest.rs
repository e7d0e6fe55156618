//! Measured-data ingestion: impulse responses per channel from CSV, and
//! frequency-domain pressure snapshots via a single-bin discrete Fourier
//! transform.
//!
//! CSV schema (documented in the README):
//!
//! ```text
//! # sample_rate_hz=48000
//! # channel,<id>,<x>,<y>,<z>     (one line per channel)
//! <id>,<id>,...                  (column header binding order to ids)
//! v,v,...                        (one row per sample)
//! ```
//!
//! With the `exp(-i omega t)` field convention, the pressure phasor of a
//! measured response is its DFT with the `exp(+2 pi i b n / N)` kernel: a
//! pure delay `delta[n - n0]` then maps to `exp(+i omega n0 / fs)`, matching
//! outgoing waves `exp(+ikr)`.

use nalgebra::Vector3;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::PressureSnapshot;
use crate::geometry::MicArray;
use crate::kernel::WaveContext;
use crate::linalg::CVector;

/// A set of equal-length impulse responses with per-channel geometry.
#[derive(Debug, Clone)]
pub struct ImpulseResponseSet {
    pub sample_rate_hz: f64,
    /// Channel order follows the column-header row.
    pub channel_ids: Vec<String>,
    pub channels: BTreeMap<String, Vec<f64>>,
    pub geometry: BTreeMap<String, Vector3<f64>>,
}

impl ImpulseResponseSet {
    pub fn len_samples(&self) -> usize {
        self.channel_ids
            .first()
            .and_then(|id| self.channels.get(id))
            .map_or(0, Vec::len)
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }
}

/// Parses the impulse-response CSV; every malformed construct reports its
/// 1-based line number.
pub fn load_ir_csv(path: &Path) -> Result<ImpulseResponseSet> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut sample_rate_hz: Option<f64> = None;
    let mut geometry: BTreeMap<String, Vector3<f64>> = BTreeMap::new();
    let mut channel_ids: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut header_done = false;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(value) = rest.strip_prefix("sample_rate_hz=") {
                let rate: f64 = value
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(lineno, format!("bad sample rate: {e}")))?;
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::parse(
                        lineno,
                        format!("sample rate must be positive, got {rate}"),
                    ));
                }
                sample_rate_hz = Some(rate);
            } else if let Some(rest) = rest.strip_prefix("channel,") {
                let cols: Vec<&str> = rest.split(',').map(str::trim).collect();
                if cols.len() != 4 {
                    return Err(Error::parse(
                        lineno,
                        "channel declaration needs: # channel,<id>,x,y,z",
                    ));
                }
                let id = cols[0].to_string();
                let mut xyz = [0.0; 3];
                for (k, c) in cols[1..].iter().enumerate() {
                    xyz[k] = c.parse::<f64>().map_err(|e| {
                        Error::parse(lineno, format!("bad coordinate {c:?}: {e}"))
                    })?;
                }
                if geometry
                    .insert(id.clone(), Vector3::new(xyz[0], xyz[1], xyz[2]))
                    .is_some()
                {
                    return Err(Error::parse(lineno, format!("duplicate channel {id:?}")));
                }
            } else {
                return Err(Error::parse(
                    lineno,
                    format!("unrecognized header comment {rest:?}"),
                ));
            }
            continue;
        }
        if !header_done {
            // the column-header row binds column order to channel ids
            channel_ids = trimmed.split(',').map(|s| s.trim().to_string()).collect();
            if channel_ids.is_empty() || channel_ids.iter().any(String::is_empty) {
                return Err(Error::parse(lineno, "empty column header row"));
            }
            for id in &channel_ids {
                if !geometry.contains_key(id) {
                    return Err(Error::parse(
                        lineno,
                        format!("missing position for channel {id:?}"),
                    ));
                }
            }
            header_done = true;
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cols.len() != channel_ids.len() {
            return Err(Error::parse(
                lineno,
                format!(
                    "ragged row: expected {} columns, got {}",
                    channel_ids.len(),
                    cols.len()
                ),
            ));
        }
        let mut row = Vec::with_capacity(cols.len());
        for c in cols {
            row.push(
                c.parse::<f64>()
                    .map_err(|e| Error::parse(lineno, format!("bad sample {c:?}: {e}")))?,
            );
        }
        rows.push(row);
    }

    let sample_rate_hz =
        sample_rate_hz.ok_or_else(|| Error::parse(1, "missing '# sample_rate_hz=' header"))?;
    if !header_done {
        return Err(Error::parse(1, "missing column header row"));
    }
    if rows.is_empty() {
        return Err(Error::parse(1, "no sample rows"));
    }

    let mut channels = BTreeMap::new();
    for (k, id) in channel_ids.iter().enumerate() {
        channels.insert(id.clone(), rows.iter().map(|r| r[k]).collect::<Vec<f64>>());
    }
    Ok(ImpulseResponseSet {
        sample_rate_hz,
        channel_ids,
        channels,
        geometry,
    })
}

/// Single-bin DFT with the `exp(+2 pi i b n / N)` kernel.
pub fn dft_bin(samples: &[f64], bin: usize) -> Complex64 {
    let n = samples.len() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &x) in samples.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * bin as f64 * i as f64 / n;
        acc += x * Complex64::from_polar(1.0, phase);
    }
    acc
}

/// Result of a snapshot conversion: the snapshot plus the DFT bin actually
/// used and its deviation from the requested frequency.
#[derive(Debug, Clone)]
pub struct SnapshotBinReport {
    pub snapshot: PressureSnapshot,
    pub bin: usize,
    pub bin_frequency_hz: f64,
    pub deviation_hz: f64,
}

/// Converts an impulse-response set to a complex pressure snapshot at the DFT
/// bin nearest the requested frequency. The channel geometry must lie on a
/// common sphere (the rigid array surface).
pub fn ir_to_snapshot(
    irs: &ImpulseResponseSet,
    frequency_hz: f64,
    sound_speed_mps: f64,
) -> Result<SnapshotBinReport> {
    if frequency_hz > irs.nyquist_hz() {
        return Err(Error::validation(format!(
            "frequency {frequency_hz} Hz is above Nyquist {} Hz",
            irs.nyquist_hz()
        )));
    }
    let n = irs.len_samples();
    if n == 0 {
        return Err(Error::validation("impulse responses are empty"));
    }
    let bin_width = irs.sample_rate_hz / n as f64;
    let bin = (frequency_hz / bin_width).round() as usize;
    let bin_frequency_hz = bin as f64 * bin_width;

    let positions: Vec<Vector3<f64>> = irs
        .channel_ids
        .iter()
        .map(|id| irs.geometry[id])
        .collect();
    let radius = positions
        .iter()
        .map(|p| p.norm())
        .fold(0.0_f64, f64::max);
    let array = MicArray::new(radius, positions)?;
    let ctx = WaveContext::new(bin_frequency_hz.max(f64::MIN_POSITIVE), sound_speed_mps)?;
    let pressures = CVector::from_iterator(
        irs.channel_ids.len(),
        irs.channel_ids
            .iter()
            .map(|id| dft_bin(&irs.channels[id], bin)),
    );
    Ok(SnapshotBinReport {
        snapshot: PressureSnapshot::new(ctx, array, pressures)?,
        bin,
        bin_frequency_hz,
        deviation_hz: bin_frequency_hz - frequency_hz,
    })
}
