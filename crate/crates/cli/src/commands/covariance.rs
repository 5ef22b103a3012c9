//! `C(h_s, h_t)` on a regular lag grid.

use demf::params::Model;
use demf::spectral::{QuadratureSpec, SpectrumEvaluator};
use rayon::prelude::*;

use crate::config::{CovarianceConfig, RunConfig};
use crate::error::{usage, Result};
use crate::io::{num, write_table, Metadata, Sink};

#[derive(Debug, Clone)]
pub struct CovarianceGrid {
    pub h_s: Vec<f64>,
    pub h_t: Vec<f64>,
    /// `values[i_t][i_s]`.
    pub values: Vec<Vec<f64>>,
}

fn lags(max: f64, n: usize) -> Vec<f64> {
    match n {
        0 | 1 => vec![0.0],
        _ => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn covariance_grid(model: &Model, cfg: &CovarianceConfig) -> Result<CovarianceGrid> {
    if !(cfg.h_s_max >= 0.0 && cfg.h_t_max >= 0.0) {
        return usage("lag ranges must be non-negative");
    }
    let ev = SpectrumEvaluator::from_model(model)?;
    let q = QuadratureSpec { rel_tol: cfg.rel_tol, ..Default::default() };
    let h_s = lags(cfg.h_s_max, cfg.n_s);
    let h_t = lags(cfg.h_t_max, cfg.n_t);
    let pairs: Vec<(f64, f64)> = h_t.iter().flat_map(|&t| h_s.iter().map(move |&s| (s, t))).collect();
    let flat = pairs.par_iter().map(|&(s, t)| ev.spacetime_cov(s, t, &q)).collect::<demf::Result<Vec<f64>>>()?;
    let values = flat.chunks(h_s.len()).map(<[f64]>::to_vec).collect();
    Ok(CovarianceGrid { h_s, h_t, values })
}

/// The preset if one is named, otherwise the `[model]` block.
pub fn resolve_model(cfg: &RunConfig) -> Result<Model> {
    let preset = cfg.covariance.as_ref().and_then(|c| c.preset);
    match (preset, &cfg.model) {
        (Some(_), Some(_)) => usage("give either [covariance] preset or a [model] block, not both"),
        (Some(p), None) => Ok(p.model()),
        (None, _) => cfg.model(),
    }
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let model = resolve_model(cfg)?;
    let cov_cfg = cfg.covariance.clone().unwrap_or_default();
    let grid = covariance_grid(&model, &cov_cfg)?;
    let mut meta = Metadata::default();
    meta.push("command", "covariance");
    meta.model("", &model)?;
    if let Some(p) = cov_cfg.preset {
        meta.push("preset", format!("{p:?}"));
    }
    meta.push("rel_tol", cov_cfg.rel_tol);
    let rows = grid
        .h_t
        .iter()
        .zip(&grid.values)
        .flat_map(|(&t, row)| grid.h_s.iter().zip(row).map(move |(&s, &c)| [num(s), num(t), num(c)]));
    write_table(Sink::from_config(cfg.output.as_ref()).open()?, &meta, &["h_s", "h_t", "covariance"], rows)
}
