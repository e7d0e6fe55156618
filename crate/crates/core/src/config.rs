//! Experiment configuration: a TOML file that carries every experiment-level
//! constant (scene, array, noise, frequency grid, evaluation region, method
//! roster, seeds, output directory). The schema is validated strictly;
//! unknown keys are rejected.

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{
    lebedev_order7, tdesign_60, DirectionGrid, EvalRegion, MicArray, PlaneAxes, PlaneSpec,
};
use crate::kernel::{KernelSpec, MdParams, SrParams, SrWeightMode};
use crate::mdopt::MdOptConfig;
use crate::simulation::{NoiseSpec, PointSource, SourceScene};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub seed: u64,
    pub wave: WaveConfig,
    pub array: ArrayConfig,
    pub scene: SceneConfig,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    pub frequencies: FrequenciesConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub lambda_grid: LambdaGridConfig,
    pub eval_region: EvalRegionConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub map: Option<PlaneConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    pub sound_speed_mps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub radius_m: f64,
    pub layout: LayoutConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LayoutConfig {
    /// `"tdesign60"`.
    Named(String),
    /// Unit-vector CSV file (header `x,y,z`).
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub sources: Vec<SourceConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub position: [f64; 3],
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
}

fn default_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub snr_db: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FrequenciesConfig {
    List { list: Vec<f64> },
    Range { start_hz: f64, stop_hz: f64, step_hz: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    /// Truncation order of the simulation forward model.
    pub n_truncation: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig { n_truncation: 50 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGridConfig {
    pub log10_min: i32,
    pub log10_max: i32,
    /// Scan (lambda1, lambda2) jointly instead of a shared weight.
    #[serde(default)]
    pub joint: bool,
}

impl Default for LambdaGridConfig {
    fn default() -> Self {
        LambdaGridConfig {
            log10_min: -10,
            log10_max: 5,
            joint: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalRegionConfig {
    Ball {
        radius_m: f64,
        n_points: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Box {
        extents_m: [f64; 3],
        spacing_m: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    Plane {
        #[serde(flatten)]
        plane: PlaneConfig,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    /// "xy", "xz", or "yz".
    pub plane: String,
    pub extent_m: [f64; 2],
    pub spacing_m: f64,
    #[serde(default)]
    pub offset_m: f64,
}

impl PlaneConfig {
    pub fn to_spec(&self) -> Result<PlaneSpec> {
        let axes = match self.plane.as_str() {
            "xy" => PlaneAxes::Xy,
            "xz" => PlaneAxes::Xz,
            "yz" => PlaneAxes::Yz,
            other => {
                return Err(Error::validation(format!(
                    "unknown plane {other:?} (expected xy, xz, or yz)"
                )))
            }
        };
        if self.spacing_m <= 0.0 {
            return Err(Error::validation("plane spacing must be positive"));
        }
        Ok(PlaneSpec {
            axes,
            extent_m: self.extent_m,
            spacing_m: self.spacing_m,
            offset_m: self.offset_m,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum KernelConfig {
    /// `"bessel"`.
    Named(String),
    /// Fixed multidirectional kernel on the Lebedev grid.
    Md {
        directions: String,
        gamma: Vec<f64>,
        zeta: Vec<f64>,
    },
}

impl KernelConfig {
    pub fn to_spec(&self) -> Result<KernelSpec> {
        match self {
            KernelConfig::Named(s) if s == "bessel" => Ok(KernelSpec::Bessel),
            KernelConfig::Named(s) => Err(Error::validation(format!(
                "unknown kernel {s:?} (expected \"bessel\" or an md table)"
            ))),
            KernelConfig::Md {
                directions,
                gamma,
                zeta,
            } => {
                let grid = direction_grid_by_name(directions)?;
                Ok(KernelSpec::MultiDirectional(MdParams::new(
                    grid,
                    gamma.clone(),
                    zeta.clone(),
                )?))
            }
        }
    }
}

pub fn direction_grid_by_name(name: &str) -> Result<DirectionGrid> {
    match name {
        "lebedev7" => Ok(lebedev_order7()),
        other => Err(Error::validation(format!(
            "unknown direction grid {other:?} (expected \"lebedev7\")"
        ))),
    }
}

fn default_sr_weight() -> String {
    "analytic".to_string()
}

fn default_q_mode() -> String {
    "kernel".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Swf {
        id: String,
        n: usize,
    },
    Krr {
        id: String,
        kernel: KernelConfig,
        n: usize,
        #[serde(default)]
        w_inverse_sr_weight: bool,
    },
    Proposed {
        id: String,
        kernel: KernelConfig,
        n_ext: usize,
        #[serde(default = "default_sr_weight")]
        sr_weight: String,
        #[serde(default = "default_q_mode")]
        q_mode: String,
        /// Fixed ridge weight when `q_mode = "ridge"`; otherwise the grid is
        /// scanned.
        #[serde(default)]
        ridge_lambda: Option<f64>,
    },
    ProposedMd {
        id: String,
        n_ext: usize,
        #[serde(default = "default_sr_weight")]
        sr_weight: String,
        #[serde(default = "default_directions")]
        directions: String,
        #[serde(default)]
        mdopt: MdOptConfig,
    },
}

fn default_directions() -> String {
    "lebedev7".to_string()
}

impl MethodConfig {
    pub fn id(&self) -> &str {
        match self {
            MethodConfig::Swf { id, .. }
            | MethodConfig::Krr { id, .. }
            | MethodConfig::Proposed { id, .. }
            | MethodConfig::ProposedMd { id, .. } => id,
        }
    }
}

pub fn sr_weight_mode(name: &str) -> Result<SrWeightMode> {
    match name {
        "analytic" => Ok(SrWeightMode::Analytic),
        "unit" => Ok(SrWeightMode::Unit),
        other => Err(Error::validation(format!(
            "unknown sr_weight {other:?} (expected \"analytic\" or \"unit\")"
        ))),
    }
}

impl ExperimentConfig {
    pub fn from_str_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::validation(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_toml(&text)
    }

    /// Physical and structural consistency checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        if self.array.radius_m <= 0.0 {
            return Err(Error::validation("array radius must be positive"));
        }
        if self.wave.sound_speed_mps <= 0.0 {
            return Err(Error::validation("sound speed must be positive"));
        }
        if self.scene.sources.is_empty() {
            return Err(Error::validation("scene needs at least one source"));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("method roster is empty"));
        }
        let mut ids: Vec<&str> = self.methods.iter().map(|m| m.id()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.methods.len() {
            return Err(Error::validation("method ids must be unique"));
        }
        if self.lambda_grid.log10_min > self.lambda_grid.log10_max {
            return Err(Error::validation("lambda grid bounds are inverted"));
        }
        let scene = self.scene()?;
        scene.validate_outside(self.array.radius_m)?;
        if let EvalRegionConfig::Ball { radius_m, .. } = &self.eval_region {
            scene.validate_outside(*radius_m)?;
        }
        if self.frequencies().is_empty() {
            return Err(Error::validation("frequency grid is empty"));
        }
        for f in self.frequencies() {
            if f <= 0.0 {
                return Err(Error::validation(format!("non-positive frequency {f}")));
            }
        }
        // reject method parameter combinations early
        for m in &self.methods {
            match m {
                MethodConfig::Krr { kernel, .. } => {
                    kernel.to_spec()?;
                }
                MethodConfig::Proposed {
                    kernel,
                    sr_weight,
                    q_mode,
                    ridge_lambda,
                    ..
                } => {
                    kernel.to_spec()?;
                    sr_weight_mode(sr_weight)?;
                    match q_mode.as_str() {
                        "kernel" => {}
                        "ridge" => {
                            if let Some(l) = ridge_lambda {
                                if *l <= 0.0 {
                                    return Err(Error::validation(
                                        "ridge_lambda must be positive",
                                    ));
                                }
                            }
                        }
                        other => {
                            return Err(Error::validation(format!(
                                "unknown q_mode {other:?} (expected \"kernel\" or \"ridge\")"
                            )))
                        }
                    }
                }
                MethodConfig::ProposedMd {
                    sr_weight,
                    directions,
                    mdopt,
                    ..
                } => {
                    sr_weight_mode(sr_weight)?;
                    direction_grid_by_name(directions)?;
                    if mdopt.lambda_fixed <= 0.0 {
                        return Err(Error::validation("mdopt lambda_fixed must be positive"));
                    }
                }
                MethodConfig::Swf { .. } => {}
            }
        }
        if let Some(map) = &self.map {
            map.to_spec()?;
        }
        Ok(())
    }

    pub fn array(&self) -> Result<MicArray> {
        match &self.array.layout {
            LayoutConfig::Named(name) if name == "tdesign60" => {
                tdesign_60().scaled(self.array.radius_m)
            }
            LayoutConfig::Named(name) => Err(Error::validation(format!(
                "unknown layout {name:?} (expected \"tdesign60\" or a csv table)"
            ))),
            LayoutConfig::Csv { csv } => MicArray::from_layout_csv(csv, self.array.radius_m),
        }
    }

    pub fn scene(&self) -> Result<SourceScene> {
        Ok(SourceScene::new(
            self.scene
                .sources
                .iter()
                .map(|s| PointSource {
                    position: Vector3::new(s.position[0], s.position[1], s.position[2]),
                    amplitude: Complex64::new(s.amplitude[0], s.amplitude[1]),
                })
                .collect(),
        ))
    }

    pub fn frequencies(&self) -> Vec<f64> {
        match &self.frequencies {
            FrequenciesConfig::List { list } => list.clone(),
            FrequenciesConfig::Range {
                start_hz,
                stop_hz,
                step_hz,
            } => {
                let mut out = Vec::new();
                if *step_hz > 0.0 {
                    let mut f = *start_hz;
                    let mut i = 0u32;
                    while f <= *stop_hz + 1e-9 {
                        out.push(f);
                        i += 1;
                        f = start_hz + step_hz * i as f64;
                    }
                }
                out
            }
        }
    }

    /// Noise specification with the seed derived from the global seed when
    /// not pinned explicitly.
    pub fn noise_spec(&self, frequency_hz: f64) -> Option<NoiseSpec> {
        self.noise.as_ref().map(|n| NoiseSpec {
            snr_db: n.snr_db,
            rng_seed: n
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, &["noise", &format!("{frequency_hz}")])),
        })
    }

    pub fn eval_region(&self) -> Result<EvalRegion> {
        Ok(match &self.eval_region {
            EvalRegionConfig::Ball {
                radius_m,
                n_points,
                seed,
            } => EvalRegion::Ball {
                radius_m: *radius_m,
                n_points: *n_points,
                rng_seed: seed.unwrap_or_else(|| derive_seed(self.seed, &["eval-ball"])),
            },
            EvalRegionConfig::Box {
                extents_m,
                spacing_m,
                center,
            } => EvalRegion::BoxGrid {
                extents_m: *extents_m,
                spacing_m: *spacing_m,
                center: *center,
            },
            EvalRegionConfig::Plane { plane } => EvalRegion::PlaneGrid(plane.to_spec()?),
        })
    }

    pub fn lambda_grid_values(&self) -> Vec<f64> {
        crate::estimator::lambda_grid(self.lambda_grid.log10_min, self.lambda_grid.log10_max)
    }

    pub fn sr_params(&self, n_ext: usize, weight: SrWeightMode) -> Result<SrParams> {
        SrParams::new(self.array.radius_m, n_ext, weight)
    }
}

/// FNV-1a hash of arbitrary labeled content; used for config and cell hashes
/// in output headers and the sweep cache.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        // separator to keep part boundaries unambiguous
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic sub-seed derivation from the global seed and a label path.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut parts: Vec<&[u8]> = vec![];
    let base_bytes = base.to_le_bytes();
    parts.push(&base_bytes);
    for l in labels {
        parts.push(l.as_bytes());
    }
    fnv1a(&parts)
}
