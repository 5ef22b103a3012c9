//! The TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use demf::fem::{Mesh2D, TimeGrid};
use demf::gmrf::GammaEPlacement;
use demf::params::{InterpretableParams, Model, ModelConfig, SmoothnessParams};
use demf::priors::{Parameterization, PcPriorSpec};
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: Option<ModelConfig>,
    pub mesh: Option<MeshConfig>,
    pub time: Option<TimeConfig>,
    pub observations: Option<ObservationConfig>,
    pub prior: Option<PcPriorSpec>,
    pub output: Option<OutputConfig>,
    pub covariance: Option<CovarianceConfig>,
    pub forecast: Option<ForecastConfig>,
    pub fit: Option<FitConfig>,
    pub validate: Option<ValidateConfig>,
}

/// Either a mesh file or a structured mesh around a region of interest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub file: Option<PathBuf>,
    /// `[x0, x1, y0, y1]`.
    pub roi: Option<[f64; 4]>,
    pub spacing: Option<f64>,
    /// Extension beyond the region of interest; defaults to the spatial range.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub n_t: usize,
    pub h: f64,
    #[serde(default)]
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub file: Option<PathBuf>,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
}

/// The three standardised examples with `σ = r_s = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `(1, 0, 2)`, `r_t = 1`.
    Separable,
    /// `(1, 2, 1)`, `r_t = 1.9`.
    Diffusion,
    /// `(3/2, 2, 0)`, `r_t = 1.8`.
    FullyNonseparable,
}

impl Preset {
    pub fn model(self) -> Model {
        let (sp, r_t) = match self {
            Preset::Separable => (SmoothnessParams::SEPARABLE, 1.0),
            Preset::Diffusion => (SmoothnessParams::DIFFUSION, 1.9),
            Preset::FullyNonseparable => (SmoothnessParams::FULLY_NONSEPARABLE, 1.8),
        };
        Model::from_interpretable(sp, InterpretableParams { sigma: 1.0, r_s: 1.0, r_t }).expect("preset parameters are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    pub preset: Option<Preset>,
    #[serde(default = "defaults::lag_max")]
    pub h_s_max: f64,
    #[serde(default = "defaults::lag_max")]
    pub h_t_max: f64,
    #[serde(default = "defaults::lag_points")]
    pub n_s: usize,
    #[serde(default = "defaults::lag_points")]
    pub n_t: usize,
    #[serde(default = "defaults::rel_tol")]
    pub rel_tol: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            preset: None,
            h_s_max: defaults::lag_max(),
            h_t_max: defaults::lag_max(),
            n_s: defaults::lag_points(),
            n_t: defaults::lag_points(),
            rel_tol: defaults::rel_tol(),
        }
    }
}

/// Settings of the two-model forecasting experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    #[serde(default = "defaults::one")]
    pub sigma: f64,
    #[serde(default = "defaults::forecast_r_s")]
    pub r_s: f64,
    /// Temporal range of the separable model.
    #[serde(default = "defaults::forecast_r_t")]
    pub r_t: f64,
    /// The non-separable model uses `r_t` times this factor.
    #[serde(default = "defaults::range_factor")]
    pub range_factor: f64,
    /// Times at which predictions are written.
    #[serde(default = "defaults::forecast_times")]
    pub times: Vec<f64>,
    /// Observation time and lattice side of the built-in simulated data.
    #[serde(default = "defaults::one")]
    pub data_time: f64,
    #[serde(default = "defaults::lattice")]
    pub lattice: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            r_s: defaults::forecast_r_s(),
            r_t: defaults::forecast_r_t(),
            range_factor: defaults::range_factor(),
            times: defaults::forecast_times(),
            data_time: 1.0,
            lattice: defaults::lattice(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterizationConfig {
    #[default]
    Log,
    Natural,
}

impl From<ParameterizationConfig> for Parameterization {
    fn from(p: ParameterizationConfig) -> Self {
        match p {
            ParameterizationConfig::Log => Parameterization::Log,
            ParameterizationConfig::Natural => Parameterization::Natural,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "defaults::budget")]
    pub budget: usize,
    #[serde(default)]
    pub parameterization: ParameterizationConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { budget: defaults::budget(), parameterization: ParameterizationConfig::Log }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaEConfig {
    #[default]
    Once,
    DoubleCounted,
}

impl From<GammaEConfig> for GammaEPlacement {
    fn from(g: GammaEConfig) -> Self {
        match g {
            GammaEConfig::Once => GammaEPlacement::Once,
            GammaEConfig::DoubleCounted => GammaEPlacement::DoubleCounted,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default)]
    pub gamma_e: GammaEConfig,
}

mod defaults {
    pub fn lag_max() -> f64 {
        3.0
    }
    pub fn lag_points() -> usize {
        31
    }
    pub fn rel_tol() -> f64 {
        1e-8
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn forecast_r_s() -> f64 {
        2.5
    }
    pub fn forecast_r_t() -> f64 {
        4.0
    }
    pub fn range_factor() -> f64 {
        1.8
    }
    pub fn forecast_times() -> Vec<f64> {
        vec![1.0, 2.0, 3.0]
    }
    pub fn lattice() -> usize {
        21
    }
    pub fn budget() -> usize {
        200
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = cfg.mesh.as_mut().and_then(|m| m.file.as_mut()) {
            resolve(f);
        }
        if let Some(f) = cfg.observations.as_mut().and_then(|o| o.file.as_mut()) {
            resolve(f);
        }
        if let Some(o) = cfg.output.as_mut() {
            resolve(&mut o.path);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn model(&self) -> Result<Model> {
        match &self.model {
            Some(m) => Ok(m.model()?),
            None => usage("missing [model] block"),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        match &self.time {
            Some(t) => Ok(TimeGrid::new(t.n_t, t.h, t.t0)?),
            None => usage("missing [time] block"),
        }
    }

    /// The mesh from its file, or generated with the margin defaulting to
    /// `default_margin`.
    pub fn mesh(&self, default_margin: f64) -> Result<Mesh2D> {
        let Some(m) = &self.mesh else {
            return usage("missing [mesh] block");
        };
        match (&m.file, m.roi, m.spacing) {
            (Some(f), None, None) => {
                if m.margin.is_some() {
                    return usage("[mesh] margin applies only to generated meshes");
                }
                Mesh2D::read(f).map_err(|e| CliError::File { path: f.clone(), source: e })
            }
            (None, Some(roi), Some(spacing)) => Ok(Mesh2D::structured_with_margin(roi, spacing, m.margin.unwrap_or(default_margin))?),
            (None, _, _) => usage("[mesh] needs either file, or roi and spacing"),
            (Some(_), _, _) => usage("[mesh] file cannot be combined with roi or spacing"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses() {
        let text = r#"
seed = 7

[model]
alpha_t = 1.0
alpha_s = 2.0
alpha_e = 1.0
sigma = 1.0
r_s = 1.0
r_t = 1.9

[mesh]
roi = [0.0, 1.0, 0.0, 1.0]
spacing = 0.25

[time]
n_t = 4
h = 0.5

[observations]
file = "obs.csv"
noise_variance = 0.01

[prior]
lambda_e = 3.0
r_s = { threshold = 0.5, probability = 0.05 }
lambda_t = 1.0

[output]
path = "out/result.csv"
"#;
        let cfg = RunConfig::parse(text, Path::new("/data/run.toml")).unwrap();
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.observations.as_ref().unwrap().file.as_deref(), Some(Path::new("/data/obs.csv")));
        assert_eq!(cfg.output.as_ref().unwrap().path, Path::new("/data/out/result.csv"));
        assert_eq!(cfg.model().unwrap().smoothness, SmoothnessParams::DIFFUSION);
        // margin defaults to what the caller passes
        let mesh = cfg.mesh(0.5).unwrap();
        let (lo, hi) = mesh.bounding_box();
        assert_eq!((lo, hi), ([-0.5, -0.5], [1.5, 1.5]));
        assert_eq!(cfg.time_grid().unwrap().n_t, 4);
        assert!(cfg.prior.unwrap().rates().is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_double_scales() {
        assert!(RunConfig::parse("sed = 1", Path::new("x.toml")).is_err());
        let cfg = RunConfig::parse(
            "[model]\nalpha_t = 1.0\nalpha_s = 0.0\nalpha_e = 2.0\nsigma = 1.0\nr_s = 1.0\nr_t = 1.0\ngamma_t = 1.0\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert!(cfg.model().is_err());
    }

    #[test]
    fn presets_are_standardised() {
        for p in [Preset::Separable, Preset::Diffusion, Preset::FullyNonseparable] {
            let ip = p.model().interpretable().unwrap();
            assert!((ip.sigma - 1.0).abs() < 1e-12 && (ip.r_s - 1.0).abs() < 1e-12);
        }
    }
}
