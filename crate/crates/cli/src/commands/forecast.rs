//! Condition a separable and a non-separable model on the same data and
//! predict forward in time.

use demf::fem::{FemMatrices, Mesh2D, TimeGrid};
use demf::gmrf::{space_time_precision, GmrfOptions};
use demf::params::{InterpretableParams, Model, SmoothnessParams};
use demf::solver::{condition, factorize, ObservationSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::config::{ForecastConfig, MeshConfig, RunConfig, TimeConfig};
use crate::error::{usage, Result};
use crate::io::{num, read_observations, write_table, Metadata, Sink};

/// Default nugget: one percent of the marginal variance.
const NUGGET_FRACTION: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ModelForecast {
    pub label: &'static str,
    pub model: Model,
    /// `mean[k][i]` at output time `k`, vertex `i`.
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct Forecast {
    pub mesh: Mesh2D,
    pub fem: FemMatrices,
    pub times: Vec<f64>,
    pub time_indices: Vec<usize>,
    pub observations: ObservationSet,
    pub separable: ModelForecast,
    pub diffusion: ModelForecast,
}

impl ForecastConfig {
    pub fn separable_model(&self) -> Result<Model> {
        Ok(Model::from_interpretable(SmoothnessParams::SEPARABLE, InterpretableParams::new(self.sigma, self.r_s, self.r_t)?)?)
    }

    pub fn diffusion_model(&self) -> Result<Model> {
        let ip = InterpretableParams::new(self.sigma, self.r_s, self.r_t * self.range_factor)?;
        Ok(Model::from_interpretable(SmoothnessParams::DIFFUSION, ip)?)
    }
}

/// Grid knots for the requested output times.
pub fn knot_indices(grid: &TimeGrid, times: &[f64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            let j = grid.nearest_index(t);
            if (grid.time(j) - t).abs() > 1e-9 * grid.h.max(1.0) {
                return usage(format!("output time {t} is not a knot of the time grid"));
            }
            Ok(j)
        })
        .collect()
}

/// Noisy values of a separable draw on a `lattice × lattice` grid over `roi`
/// at time `fc.data_time`.
pub fn simulate_data(mesh: &Mesh2D, grid: &TimeGrid, roi: [f64; 4], fc: &ForecastConfig, noise_variance: f64, seed: u64) -> Result<ObservationSet> {
    if fc.lattice < 2 {
        return usage("forecast lattice needs at least 2 points per side");
    }
    let fem = FemMatrices::new(mesh, grid)?;
    let q = space_time_precision(&fc.separable_model()?, &fem, &GmrfOptions::default())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let field = factorize(&q.matrix)?.sample_with(&mut rng);
    let n = fc.lattice;
    let step = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (n - 1) as f64;
    let locations: Vec<[f64; 2]> =
        (0..n).flat_map(|j| (0..n).map(move |i| [step(roi[0], roi[1], i), step(roi[2], roi[3], j)])).collect();
    let times = vec![fc.data_time; locations.len()];
    let design = ObservationSet::new(locations.clone(), times.clone(), vec![0.0; locations.len()], noise_variance)?.design(mesh, grid)?;
    let values = design
        .matvec(&field)
        .into_iter()
        .map(|u| u + noise_variance.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(ObservationSet::new(locations, times, values, noise_variance)?)
}

fn predict(label: &'static str, model: Model, fem: &FemMatrices, obs: &ObservationSet, mesh: &Mesh2D, idx: &[usize]) -> Result<ModelForecast> {
    let q = space_time_precision(&model, fem, &GmrfOptions::default())?;
    let a = obs.design(mesh, &fem.grid)?;
    let post = condition(&q.matrix, &a, &obs.values, obs.noise_variance)?;
    let ns = fem.n_space();
    let mut mean = Vec::with_capacity(idx.len());
    let mut sd = Vec::with_capacity(idx.len());
    for &j in idx {
        let cols: Vec<usize> = (0..ns).map(|i| q.index(i, j)).collect();
        mean.push(cols.iter().map(|&c| post.mean[c]).collect());
        sd.push(post.factor.variances_at(&cols).into_iter().map(f64::sqrt).collect());
    }
    Ok(ModelForecast { label, model, mean, sd })
}

pub fn forecast(mesh: Mesh2D, grid: &TimeGrid, fc: &ForecastConfig, observations: ObservationSet) -> Result<Forecast> {
    let time_indices = knot_indices(grid, &fc.times)?;
    let fem = FemMatrices::new(&mesh, grid)?;
    let separable = predict("separable", fc.separable_model()?, &fem, &observations, &mesh, &time_indices)?;
    let diffusion = predict("diffusion", fc.diffusion_model()?, &fem, &observations, &mesh, &time_indices)?;
    Ok(Forecast { mesh, fem, times: fc.times.clone(), time_indices, observations, separable, diffusion })
}

/// The region of interest used for generated meshes and built-in data.
const DEFAULT_ROI: [f64; 4] = [0.0, 10.0, 0.0, 10.0];

/// Mesh, grid and data as configured, with the experiment's defaults for
/// anything left out.
pub fn setup(cfg: &RunConfig) -> Result<(Mesh2D, TimeGrid, ForecastConfig, ObservationSet)> {
    let fc = cfg.forecast.clone().unwrap_or_default();
    let mut cfg = cfg.clone();
    let mesh_cfg = cfg.mesh.get_or_insert_with(|| MeshConfig { spacing: Some(0.5), ..Default::default() });
    if mesh_cfg.file.is_none() && mesh_cfg.roi.is_none() {
        mesh_cfg.roi = Some(DEFAULT_ROI);
    }
    let roi = mesh_cfg.roi;
    cfg.time.get_or_insert(TimeConfig { n_t: 9, h: 0.25, t0: 1.0 });
    let mesh = cfg.mesh(fc.r_s)?;
    let grid = cfg.time_grid()?;
    let noise = cfg.observations.as_ref().map_or(NUGGET_FRACTION * fc.sigma * fc.sigma, |o| o.noise_variance);
    let obs = match cfg.observations.as_ref().and_then(|o| o.file.as_ref()) {
        Some(f) => read_observations(f, noise)?,
        None => {
            let roi = roi.unwrap_or_else(|| {
                let (lo, hi) = mesh.bounding_box();
                [lo[0], hi[0], lo[1], hi[1]]
            });
            simulate_data(&mesh, &grid, roi, &fc, noise, cfg.seed())?
        }
    };
    Ok((mesh, grid, fc, obs))
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let (mesh, grid, fc, obs) = setup(cfg)?;
    let simulated = cfg.observations.as_ref().and_then(|o| o.file.as_ref()).is_none();
    let f = forecast(mesh, &grid, &fc, obs)?;

    let mut meta = Metadata::default();
    meta.push("command", "forecast");
    meta.model("separable.", &f.separable.model)?;
    meta.model("diffusion.", &f.diffusion.model)?;
    meta.push("data", if simulated { "simulated" } else { "file" });
    if simulated {
        meta.push("seed", cfg.seed());
    }
    meta.push("n_observations", f.observations.len());
    meta.push("noise_variance", f.observations.noise_variance);
    meta.push("n_vertices", f.mesh.n_vertices());
    meta.push("n_t", grid.n_t);
    meta.push("h_t", grid.h);
    meta.push("t0", grid.t0);
    let mut rows = Vec::new();
    for m in [&f.separable, &f.diffusion] {
        for (k, &t) in f.times.iter().enumerate() {
            for (i, &[x, y]) in f.mesh.vertices().iter().enumerate() {
                rows.push([m.label.to_string(), i.to_string(), num(x), num(y), num(t), num(m.mean[k][i]), num(m.sd[k][i])]);
            }
        }
    }
    write_table(Sink::from_config(cfg.output.as_ref()).open()?, &meta, &["model", "vertex", "x", "y", "t", "mean", "sd"], rows)
}
