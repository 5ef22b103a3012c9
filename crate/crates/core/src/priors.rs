//! Penalised-complexity priors on `(σ, r_s, r_t)` and MAP fitting.
//!
//! The three priors are independent exponentials on `σ`, `1/r_s` and
//! `1/√r_t`. Densities are reported with respect to `(σ, r_s, r_t)`.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fem::FemMatrices;
use crate::gmrf::{space_time_precision, GmrfOptions};
use crate::params::{InterpretableParams, Model, SmoothnessParams};
use crate::solver::{condition_with, factorize, log_marginal_likelihood, CholeskyFactor, ObservationSet, SymbolicCholesky};
use crate::sparse::{Csr, SparseSymmetric};

/// Rates of the three exponential priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcRates {
    pub lambda_e: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
}

impl PcRates {
    pub fn new(lambda_e: f64, lambda_s: f64, lambda_t: f64) -> Result<Self> {
        let r = Self { lambda_e, lambda_s, lambda_t };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_e", self.lambda_e), ("lambda_s", self.lambda_s), ("lambda_t", self.lambda_t)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    /// `P(σ > σ₀)`.
    pub fn prob_sigma_above(&self, sigma0: f64) -> f64 {
        (-self.lambda_e * sigma0).exp()
    }

    /// `P(r_s < r₀)`.
    pub fn prob_r_s_below(&self, r0: f64) -> f64 {
        (-self.lambda_s / r0).exp()
    }

    /// `P(r_t < t₀)`.
    pub fn prob_r_t_below(&self, t0: f64) -> f64 {
        (-self.lambda_t / t0.sqrt()).exp()
    }

    /// Joint mode of the densities in `r_s` and `r_t`. The density of `σ`
    /// peaks at zero, so its mean `1/λ_e` stands in.
    pub fn mode(&self) -> InterpretableParams {
        InterpretableParams {
            sigma: 1.0 / self.lambda_e,
            r_s: self.lambda_s / 2.0,
            r_t: self.lambda_t * self.lambda_t / 9.0,
        }
    }
}

/// A user statement `P(X ⋚ threshold) = probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantile {
    pub threshold: f64,
    pub probability: f64,
}

impl Quantile {
    pub fn new(threshold: f64, probability: f64) -> Result<Self> {
        let q = Self { threshold, probability };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return invalid(format!("quantile threshold must be positive, got {}", self.threshold));
        }
        if !(self.probability > 0.0 && self.probability < 1.0) {
            return invalid(format!("tail probability must lie in (0, 1), got {}", self.probability));
        }
        Ok(())
    }
}

/// Which tail the temporal-range statement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailConvention {
    /// `P(r_t < t₀) = p`.
    #[default]
    Lower,
    /// `P(r_t > t₀) = p`.
    Upper,
}

/// `λ_e` from `P(σ > σ₀) = p`.
pub fn elicit_lambda_e(q: Quantile) -> Result<f64> {
    q.validate()?;
    Ok(-q.probability.ln() / q.threshold)
}

/// `λ_s` from `P(r_s < r₀) = p`.
pub fn elicit_lambda_s(q: Quantile) -> Result<f64> {
    q.validate()?;
    Ok(-q.probability.ln() * q.threshold)
}

/// `λ_t` from a statement about `r_t` in the given tail.
pub fn elicit_lambda_t(q: Quantile, tail: TailConvention) -> Result<f64> {
    q.validate()?;
    let p = match tail {
        TailConvention::Lower => q.probability,
        TailConvention::Upper => 1.0 - q.probability,
    };
    Ok(-p.ln() * q.threshold.sqrt())
}

pub fn elicit_rates(sigma: Quantile, r_s: Quantile, r_t: Quantile, tail: TailConvention) -> Result<PcRates> {
    PcRates::new(elicit_lambda_e(sigma)?, elicit_lambda_s(r_s)?, elicit_lambda_t(r_t, tail)?)
}

/// Prior block as written in a config: per parameter either a rate or a
/// quantile statement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcPriorSpec {
    pub lambda_e: Option<f64>,
    pub lambda_s: Option<f64>,
    pub lambda_t: Option<f64>,
    pub sigma: Option<Quantile>,
    pub r_s: Option<Quantile>,
    pub r_t: Option<Quantile>,
    #[serde(default)]
    pub r_t_tail: TailConvention,
}

impl PcPriorSpec {
    pub fn rates(&self) -> Result<PcRates> {
        fn pick(name: &str, rate: Option<f64>, q: Option<Quantile>, elicit: impl Fn(Quantile) -> Result<f64>) -> Result<f64> {
            match (rate, q) {
                (Some(r), None) => Ok(r),
                (None, Some(q)) => elicit(q),
                (Some(_), Some(_)) => invalid(format!("prior for {name}: give a rate or a quantile, not both")),
                (None, None) => invalid(format!("prior for {name}: missing rate or quantile")),
            }
        }
        PcRates::new(
            pick("sigma", self.lambda_e, self.sigma, elicit_lambda_e)?,
            pick("r_s", self.lambda_s, self.r_s, elicit_lambda_s)?,
            pick("r_t", self.lambda_t, self.r_t, |q| elicit_lambda_t(q, self.r_t_tail))?,
        )
    }
}

pub fn log_density_sigma(sigma: f64, lambda_e: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    lambda_e.ln() - lambda_e * sigma
}

pub fn log_density_r_s(r_s: f64, lambda_s: f64) -> f64 {
    if !(r_s > 0.0) {
        return f64::NEG_INFINITY;
    }
    lambda_s.ln() - lambda_s / r_s - 2.0 * r_s.ln()
}

pub fn log_density_r_t(r_t: f64, lambda_t: f64) -> f64 {
    if !(r_t > 0.0) {
        return f64::NEG_INFINITY;
    }
    (lambda_t / 2.0).ln() - lambda_t / r_t.sqrt() - 1.5 * r_t.ln()
}

/// Joint log density; `-∞` for any non-positive component.
pub fn log_prior(ip: &InterpretableParams, rates: &PcRates) -> f64 {
    log_density_sigma(ip.sigma, rates.lambda_e) + log_density_r_s(ip.r_s, rates.lambda_s) + log_density_r_t(ip.r_t, rates.lambda_t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { budget: 200, initial_step: 0.5, f_tol: 1e-8, x_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

/// Derivative-free simplex minimisation with reflection 1, expansion 2,
/// contraction 0.5 and shrink 0.5. Non-finite values count as `+∞`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<Minimum> {
    let n = x0.len();
    if n == 0 || opts.budget == 0 {
        return invalid("simplex search needs at least one dimension and a positive budget");
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    for x in &simplex {
        if evals >= opts.budget {
            break;
        }
        values.push(eval(x, &mut evals));
    }
    if values.len() < n + 1 {
        let best = (0..values.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        return Ok(Minimum { x: simplex[best].clone(), value: values[best], evaluations: evals, converged: false, trace: vec![values[best]] });
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let point = |c: &[f64], d: &[f64], t: f64| -> Vec<f64> { c.iter().zip(d).map(|(a, b)| a + t * (b - a)).collect() };
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        trace.push(values[0]);

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= opts.f_tol * (1.0 + values[0].abs()) && size <= opts.x_tol {
            converged = true;
            break;
        }
        if evals >= opts.budget {
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|x| x[k]).sum::<f64>() / n as f64).collect();
        let reflected = point(&centroid, &simplex[n], -1.0);
        let fr = eval(&reflected, &mut evals);
        if fr < values[0] {
            if evals < opts.budget {
                let expanded = point(&centroid, &simplex[n], -2.0);
                let fe = eval(&expanded, &mut evals);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                    continue;
                }
            }
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        if evals >= opts.budget {
            break;
        }
        // contract towards the better of the worst and reflected points
        let (contracted, threshold) =
            if fr < values[n] { (point(&centroid, &reflected, 0.5), fr) } else { (point(&centroid, &simplex[n], 0.5), values[n]) };
        let fc = eval(&contracted, &mut evals);
        if fc < threshold {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            if evals >= opts.budget {
                break;
            }
            simplex[i] = point(&simplex[0], &simplex[i], 0.5);
            values[i] = eval(&simplex[i], &mut evals);
        }
    }
    Ok(Minimum { x: simplex[0].clone(), value: values[0], evaluations: evals, converged, trace })
}

/// Coordinates the simplex search moves in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parameterization {
    /// `(ln σ, ln r_s, ln r_t)`.
    #[default]
    Log,
    /// `(σ, r_s, r_t)` directly, with a relative initial step.
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub budget: usize,
    pub parameterization: Parameterization,
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { budget: 200, parameterization: Parameterization::Log, initial_step: 0.5, f_tol: 1e-8, x_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: InterpretableParams,
    pub log_posterior: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Everything held fixed while `(σ, r_s, r_t)` vary.
#[derive(Debug)]
pub struct FitProblem<'a> {
    smoothness: SmoothnessParams,
    fem: &'a FemMatrices,
    options: GmrfOptions,
    design: Csr,
    values: Vec<f64>,
    noise_variance: f64,
    rates: PcRates,
    prior_symbolic: OnceLock<Arc<SymbolicCholesky>>,
    post_symbolic: OnceLock<Arc<SymbolicCholesky>>,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        smoothness: SmoothnessParams,
        fem: &'a FemMatrices,
        options: GmrfOptions,
        design: Csr,
        values: Vec<f64>,
        noise_variance: f64,
        rates: PcRates,
    ) -> Result<Self> {
        smoothness.validate()?;
        rates.validate()?;
        if design.nrows() != values.len() || design.ncols() != fem.n_space() * fem.n_time() {
            return Err(Error::DimensionMismatch(format!(
                "design is {}×{}, expected {}×{}",
                design.nrows(),
                design.ncols(),
                values.len(),
                fem.n_space() * fem.n_time()
            )));
        }
        if !(noise_variance > 0.0) {
            return invalid(format!("noise variance must be positive, got {noise_variance}"));
        }
        Ok(Self {
            smoothness,
            fem,
            options,
            design,
            values,
            noise_variance,
            rates,
            prior_symbolic: OnceLock::new(),
            post_symbolic: OnceLock::new(),
        })
    }

    pub fn from_observations(
        smoothness: SmoothnessParams,
        mesh: &crate::fem::Mesh2D,
        fem: &'a FemMatrices,
        options: GmrfOptions,
        obs: &ObservationSet,
        rates: PcRates,
    ) -> Result<Self> {
        let design = obs.design(mesh, &fem.grid)?;
        Self::new(smoothness, fem, options, design, obs.values.clone(), obs.noise_variance, rates)
    }

    pub fn rates(&self) -> &PcRates {
        &self.rates
    }

    pub fn n_observations(&self) -> usize {
        self.values.len()
    }

    fn prior_factor(&self, q: &SparseSymmetric) -> Result<CholeskyFactor> {
        if let Some(s) = self.prior_symbolic.get() {
            if s.matches(q) {
                return s.factorize(q);
            }
            return factorize(q);
        }
        let f = factorize(q)?;
        let _ = self.prior_symbolic.set(Arc::clone(f.symbolic()));
        Ok(f)
    }

    /// `ln p(y | σ, r_s, r_t)`; zero without observations.
    pub fn log_likelihood(&self, ip: &InterpretableParams) -> Result<f64> {
        if self.values.is_empty() {
            return Ok(0.0);
        }
        let model = Model::from_interpretable(self.smoothness, *ip)?;
        let q = space_time_precision(&model, self.fem, &self.options)?.matrix;
        let prior = self.prior_factor(&q)?;
        let post = condition_with(&q, &self.design, &self.values, self.noise_variance, self.post_symbolic.get())?;
        let _ = self.post_symbolic.set(Arc::clone(post.factor.symbolic()));
        Ok(log_marginal_likelihood(&prior, &post, &self.values, self.noise_variance))
    }

    /// Log-likelihood plus log prior, or the reason it could not be computed.
    pub fn try_log_posterior(&self, ip: &InterpretableParams) -> Result<f64> {
        let lp = log_prior(ip, &self.rates);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(self.log_likelihood(ip)? + lp)
    }

    /// As [`try_log_posterior`](Self::try_log_posterior) with failures mapped to `-∞`.
    pub fn log_posterior(&self, ip: &InterpretableParams) -> f64 {
        self.try_log_posterior(ip).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Maximise the log posterior from `init`. Without observations the prior
/// mode is returned unchanged.
pub fn fit_map(problem: &FitProblem<'_>, init: InterpretableParams, opts: &FitOptions) -> Result<FitResult> {
    init.validate()?;
    if opts.budget == 0 {
        return invalid("fit budget must be positive");
    }
    if problem.n_observations() == 0 {
        let mode = problem.rates.mode();
        let lp = log_prior(&mode, &problem.rates);
        return Ok(FitResult { params: mode, log_posterior: lp, evaluations: 0, converged: true, trace: vec![lp] });
    }
    let to_params = |x: &[f64]| match opts.parameterization {
        Parameterization::Log => InterpretableParams { sigma: x[0].exp(), r_s: x[1].exp(), r_t: x[2].exp() },
        Parameterization::Natural => InterpretableParams { sigma: x[0], r_s: x[1], r_t: x[2] },
    };
    let (x0, step) = match opts.parameterization {
        Parameterization::Log => (vec![init.sigma.ln(), init.r_s.ln(), init.r_t.ln()], opts.initial_step),
        Parameterization::Natural => (vec![init.sigma, init.r_s, init.r_t], opts.initial_step),
    };
    // a natural-scale simplex needs steps proportional to each coordinate
    let scale = match opts.parameterization {
        Parameterization::Log => vec![1.0; 3],
        Parameterization::Natural => x0.clone(),
    };
    let unit_x0: Vec<f64> = x0.iter().zip(&scale).map(|(x, s)| x / s).collect();
    let nm = NelderMeadOptions { budget: opts.budget, initial_step: step, f_tol: opts.f_tol, x_tol: opts.x_tol };
    let min = nelder_mead(
        |u| {
            let x: Vec<f64> = u.iter().zip(&scale).map(|(a, s)| a * s).collect();
            -problem.log_posterior(&to_params(&x))
        },
        &unit_x0,
        &nm,
    )?;
    let x: Vec<f64> = min.x.iter().zip(&scale).map(|(a, s)| a * s).collect();
    Ok(FitResult {
        params: to_params(&x),
        log_posterior: -min.value,
        evaluations: min.evaluations,
        converged: min.converged,
        trace: min.trace.iter().map(|v| -v).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_semi_infinite, Tolerance};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn elicitation_examples() {
        let l = elicit_lambda_e(Quantile::new(1.0, 0.05).unwrap()).unwrap();
        assert_relative_eq!(l, 2.995732273553991, max_relative = 1e-15);
        let l = elicit_lambda_s(Quantile::new(1.0, 0.05).unwrap()).unwrap();
        assert_relative_eq!(l, 2.995732273553991, max_relative = 1e-15);
        assert!(Quantile::new(1.0, 0.0).is_err());
        assert!(Quantile::new(1.0, 1.0).is_err());
        assert!(Quantile::new(-1.0, 0.5).is_err());
    }

    #[test]
    fn upper_tail_switch() {
        let q = Quantile::new(4.0, 0.9).unwrap();
        let lt = elicit_lambda_t(q, TailConvention::Upper).unwrap();
        let r = PcRates::new(1.0, 1.0, lt).unwrap();
        assert!((1.0 - r.prob_r_t_below(4.0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn marginals_integrate_to_one() {
        let tol = Tolerance::relative(1e-10);
        for &lam in &[0.3, 1.0, 2.9957, 7.5] {
            for f in [log_density_sigma, log_density_r_s, log_density_r_t] {
                let i = integrate_semi_infinite(|x| f(x, lam).exp(), 0.0, tol).unwrap();
                assert!((i.value - 1.0).abs() < 1e-6, "λ={lam}: {}", i.value);
            }
        }
    }

    #[test]
    fn prior_sentinels_and_mode() {
        let r = PcRates::new(3.0, 2.0, 3.0).unwrap();
        assert_eq!(log_prior(&InterpretableParams { sigma: 0.0, r_s: 1.0, r_t: 1.0 }, &r), f64::NEG_INFINITY);
        assert_eq!(log_prior(&InterpretableParams { sigma: 1.0, r_s: -1.0, r_t: 1.0 }, &r), f64::NEG_INFINITY);
        let m = r.mode();
        let at = |rs: f64, rt: f64| log_density_r_s(rs, r.lambda_s) + log_density_r_t(rt, r.lambda_t);
        for d in [0.99, 1.01] {
            assert!(at(m.r_s * d, m.r_t) < at(m.r_s, m.r_t));
            assert!(at(m.r_s, m.r_t * d) < at(m.r_s, m.r_t));
        }
    }

    #[test]
    fn spec_requires_one_source_per_parameter() {
        let mut s = PcPriorSpec { lambda_e: Some(1.0), lambda_s: Some(1.0), lambda_t: Some(1.0), ..Default::default() };
        assert!(s.rates().is_ok());
        s.sigma = Some(Quantile::new(1.0, 0.05).unwrap());
        assert!(s.rates().is_err());
        s.lambda_e = None;
        assert_relative_eq!(s.rates().unwrap().lambda_e, 2.995732273553991, max_relative = 1e-15);
        s.lambda_t = None;
        assert!(s.rates().is_err());
    }

    #[test]
    fn nelder_mead_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * (x[2] - 0.3).powi(2) + 0.2 * x[0] * x[1];
        let opts = NelderMeadOptions { budget: 2000, f_tol: 1e-14, x_tol: 1e-9, ..Default::default() };
        let m = nelder_mead(f, &[0.0, 0.0, 0.0], &opts).unwrap();
        assert!(m.converged);
        // stationary point of the quadratic
        let a = nalgebra::Matrix3::new(2.0, 0.2, 0.0, 0.2, 6.0, 0.0, 0.0, 0.0, 1.0);
        let b = nalgebra::Vector3::new(2.0, -12.0, 0.3);
        let xs = a.lu().solve(&b).unwrap();
        for k in 0..3 {
            assert!((m.x[k] - xs[k]).abs() < 1e-6, "{:?} vs {xs}", m.x);
        }
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0]));
        // restarting at the optimum moves nowhere useful
        let again = nelder_mead(f, &m.x, &NelderMeadOptions { initial_step: 1e-6, ..opts }).unwrap();
        assert!(again.value >= m.value - 1e-12);
    }

    #[test]
    fn nelder_mead_budget() {
        let m = nelder_mead(|x: &[f64]| x[0].powi(2) + x[1].powi(2), &[5.0, 5.0], &NelderMeadOptions { budget: 10, ..Default::default() }).unwrap();
        assert!(!m.converged);
        assert!(m.evaluations <= 10);
        assert!(m.value < 50.0);
    }

    proptest! {
        #[test]
        fn elicitation_round_trips(t in 0.01f64..100.0, p in 0.001f64..0.999) {
            let q = Quantile::new(t, p).unwrap();
            let r = elicit_rates(q, q, q, TailConvention::Lower).unwrap();
            prop_assert!((r.prob_sigma_above(t) - p).abs() <= 1e-12);
            prop_assert!((r.prob_r_s_below(t) - p).abs() <= 1e-12);
            prop_assert!((r.prob_r_t_below(t) - p).abs() <= 1e-12);
        }

        #[test]
        fn sigma_prior_decreasing(s in 0.01f64..10.0, d in 0.01f64..5.0) {
            let r = PcRates::new(2.0, 1.0, 1.0).unwrap();
            let a = log_prior(&InterpretableParams { sigma: s, r_s: 1.0, r_t: 1.0 }, &r);
            let b = log_prior(&InterpretableParams { sigma: s + d, r_s: 1.0, r_t: 1.0 }, &r);
            prop_assert!(b < a && a.is_finite());
        }
    }
}
