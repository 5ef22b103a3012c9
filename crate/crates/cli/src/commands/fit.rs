//! MAP estimation of `(σ, r_s, r_t)` with the exponents held fixed.

use std::io::Write;

use demf::fem::FemMatrices;
use demf::gmrf::GmrfOptions;
use demf::priors::{fit_map, FitOptions, FitProblem, FitResult};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{usage, Result};
use crate::io::{read_observations, Sink};

/// Everything the report file records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub alpha_t: f64,
    pub alpha_s: f64,
    pub alpha_e: f64,
    pub sigma: f64,
    pub r_s: f64,
    pub r_t: f64,
    pub log_posterior: f64,
    pub evaluations: usize,
    pub budget: usize,
    pub converged: bool,
    pub n_observations: usize,
    pub noise_variance: f64,
    pub lambda_e: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub trace: Vec<f64>,
}

/// Fit as configured; the `[model]` scales are the starting point.
pub fn fit(cfg: &RunConfig) -> Result<(FitResult, FitReport)> {
    let model = cfg.model()?;
    let init = model.interpretable()?;
    let Some(obs_cfg) = &cfg.observations else {
        return usage("fit needs an [observations] block");
    };
    let Some(file) = &obs_cfg.file else {
        return usage("fit needs [observations] file");
    };
    let Some(prior) = &cfg.prior else {
        return usage("fit needs a [prior] block");
    };
    let rates = prior.rates()?;
    let obs = read_observations(file, obs_cfg.noise_variance)?;
    let mesh = cfg.mesh(init.r_s)?;
    let grid = cfg.time_grid()?;
    let fem = FemMatrices::new(&mesh, &grid)?;
    let problem = FitProblem::from_observations(model.smoothness, &mesh, &fem, GmrfOptions::default(), &obs, rates)?;
    let fit_cfg = cfg.fit.clone().unwrap_or_default();
    let opts = FitOptions { budget: fit_cfg.budget, parameterization: fit_cfg.parameterization.into(), ..Default::default() };
    let result = fit_map(&problem, init, &opts)?;
    let sp = model.smoothness;
    let report = FitReport {
        alpha_t: sp.alpha_t,
        alpha_s: sp.alpha_s,
        alpha_e: sp.alpha_e,
        sigma: result.params.sigma,
        r_s: result.params.r_s,
        r_t: result.params.r_t,
        log_posterior: result.log_posterior,
        evaluations: result.evaluations,
        budget: fit_cfg.budget,
        converged: result.converged,
        n_observations: obs.len(),
        noise_variance: obs.noise_variance,
        lambda_e: rates.lambda_e,
        lambda_s: rates.lambda_s,
        lambda_t: rates.lambda_t,
        trace: result.trace.clone(),
    };
    Ok((result, report))
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let (_, report) = fit(cfg)?;
    if !report.converged {
        eprintln!("warning: budget of {} evaluations exhausted before convergence", report.budget);
    }
    let text = toml::to_string(&report).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut w = Sink::from_config(cfg.output.as_ref()).open()?;
    writeln!(w, "# command = fit")?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}
