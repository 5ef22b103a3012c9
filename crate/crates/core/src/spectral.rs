//! Continuous-model oracle: the space-time spectrum and the covariances
//! obtained by integrating it.
//!
//! `spacetime_cov` inverts the spectrum in two stages. The ω_t transform of
//! `(γ_t²ω² + A)^{-α_t}` has the closed Matérn form, so only the radial
//! Hankel transform is done numerically. `variance_by_quadrature` and the
//! non-separable branch of `temporal_cov` integrate independently of that
//! closed form, which keeps them usable as cross-checks.

use std::f64::consts::PI;

use crate::error::Result;
use crate::params::{marginal_variance, DerivedSmoothness, Model, ScaleParams, SmoothnessParams};
use crate::quadrature::{
    fourier_cosine, integrate, integrate_semi_infinite, oscillatory_panels, Integral, Tolerance,
};
use crate::special::{bessel_j0, ln_gamma, matern_correlation};

/// Accuracy controls for the numerical transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Relative tolerance; absolute tolerance is this times σ².
    pub rel_tol: f64,
    /// Tolerance for the inner radial integral defining the temporal spectrum.
    pub inner_rel_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { rel_tol: 1e-8, inner_rel_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpectrumEvaluator {
    pub sp: SmoothnessParams,
    pub sc: ScaleParams,
    derived: DerivedSmoothness,
    sigma2: f64,
}

impl SpectrumEvaluator {
    pub fn new(sp: SmoothnessParams, sc: ScaleParams) -> Result<Self> {
        sc.validate()?;
        let derived = sp.derived()?;
        let sigma2 = marginal_variance(&sp, &sc)?;
        Ok(Self { sp, sc, derived, sigma2 })
    }

    pub fn from_model(m: &Model) -> Result<Self> {
        Self::new(m.smoothness, m.scales)
    }

    pub fn derived(&self) -> DerivedSmoothness {
        self.derived
    }

    /// Marginal variance from the closed form.
    pub fn variance(&self) -> f64 {
        self.sigma2
    }

    fn prefactor(&self) -> f64 {
        (2.0 * PI).powi(-3) / (self.sc.gamma_e * self.sc.gamma_e)
    }

    /// `S_u(ω_s, ω_t)` with `omega_s_norm = |ω_s|`.
    pub fn spectrum(&self, omega_s_norm: f64, omega_t: f64) -> f64 {
        let ScaleParams { gamma_t, gamma_s, .. } = self.sc;
        let base = gamma_s * gamma_s + omega_s_norm * omega_s_norm;
        let temporal = gamma_t * gamma_t * omega_t * omega_t + base.powf(self.sp.alpha_s);
        self.prefactor() * temporal.powf(-self.sp.alpha_t) * base.powf(-self.sp.alpha_e)
    }

    /// Marginal spatial covariance: Matérn with smoothness `ν_s` and scale `γ_s`.
    pub fn spatial_matern_cov(&self, h_s: f64) -> f64 {
        self.sigma2 * matern_correlation(self.derived.nu_s, self.sc.gamma_s * h_s)
    }

    /// Dimensionless temporal-spectrum shape
    /// `J(w) = ∫_0^∞ (1+x)^{-(α_e-1)/α_s-1} (w²+1+x)^{-α_t} dx`.
    ///
    /// Evaluated after `1+x = 1/v²`, which turns it into
    /// `∫_0^1 2 v^{2ν_s/α_s} (1 + w² v²)^{-α_t} dv` with a bounded integrand.
    pub fn temporal_shape(&self, w: f64, rel_tol: f64) -> Result<f64> {
        let p = 2.0 * self.derived.nu_s / self.sp.alpha_s;
        let w2 = w * w;
        let alpha_t = self.sp.alpha_t;
        let f = |v: f64| 2.0 * v.powf(p) * (1.0 + w2 * v * v).powf(-alpha_t);
        // the integrand turns over near v = 1/w; split there so both halves are tame
        let knee = if w > 1.0 { 1.0 / w } else { 1.0 };
        let tol = Tolerance::relative(rel_tol);
        let mut total = integrate(f, 0.0, knee, tol)?.value;
        if knee < 1.0 {
            total += integrate(f, knee, 1.0, tol)?.value;
        }
        Ok(total)
    }

    /// Marginal temporal spectrum `S_t(ω_t) = ∫ S_u(ω_s, ω_t) dω_s`.
    pub fn temporal_spectrum(&self, omega_t: f64, q: &QuadratureSpec) -> Result<f64> {
        let ScaleParams { gamma_t, gamma_s, .. } = self.sc;
        let alpha_t = self.sp.alpha_t;
        if self.sp.is_separable() {
            let norm = (ln_gamma(alpha_t) - ln_gamma(alpha_t - 0.5)).exp() / PI.sqrt();
            return Ok(self.sigma2 * norm * gamma_t * (1.0 + (gamma_t * omega_t).powi(2)).powf(-alpha_t));
        }
        let alpha_s = self.sp.alpha_s;
        let w = omega_t * gamma_t / gamma_s.powf(alpha_s);
        let scale = (2.0 * PI).powi(-2) / (self.sc.gamma_e * self.sc.gamma_e)
            * 0.5
            * gamma_s.powf(2.0 - 2.0 * (alpha_s * alpha_t + self.sp.alpha_e))
            / alpha_s;
        Ok(scale * self.temporal_shape(w, q.inner_rel_tol)?)
    }

    /// `∫_{-∞}^{∞} (γ_t²ω² + A)^{-α_t} cos(ω h) dω`, in closed form.
    fn temporal_pair(&self, a_big: f64, h_t: f64) -> f64 {
        let alpha_t = self.sp.alpha_t;
        let gamma_t = self.sc.gamma_t;
        let a = a_big.sqrt() / gamma_t;
        let ln_mass = -2.0 * alpha_t * gamma_t.ln() + 0.5 * PI.ln() + ln_gamma(alpha_t - 0.5)
            - ln_gamma(alpha_t)
            + (1.0 - 2.0 * alpha_t) * a.ln();
        ln_mass.exp() * matern_correlation(alpha_t - 0.5, a * h_t)
    }

    /// Radial integrand `2π r S̃(r, h_t)` with the ω_t transform already done.
    fn radial_density(&self, r: f64, h_t: f64) -> f64 {
        let base = self.sc.gamma_s * self.sc.gamma_s + r * r;
        let a_big = base.powf(self.sp.alpha_s);
        2.0 * PI * r * self.prefactor() * base.powf(-self.sp.alpha_e) * self.temporal_pair(a_big, h_t)
    }

    /// Upper bound of `radial_density(r, ·)` valid for all `r > 0`, of the form `c r^{1-2α}`.
    fn radial_envelope_coefficient(&self) -> f64 {
        let alpha_t = self.sp.alpha_t;
        let gamma_t = self.sc.gamma_t;
        let ln_c = -2.0 * alpha_t * gamma_t.ln() + 0.5 * PI.ln() + ln_gamma(alpha_t - 0.5)
            - ln_gamma(alpha_t)
            + (2.0 * alpha_t - 1.0) * gamma_t.ln();
        2.0 * PI * self.prefactor() * ln_c.exp()
    }

    /// Space-time covariance `C(h_s, h_t)` by inverting the spectrum.
    pub fn spacetime_cov(&self, h_s: f64, h_t: f64, q: &QuadratureSpec) -> Result<f64> {
        Ok(self.spacetime_cov_detailed(h_s, h_t, q)?.value)
    }

    pub fn spacetime_cov_detailed(&self, h_s: f64, h_t: f64, q: &QuadratureSpec) -> Result<Integral> {
        let (h_s, h_t) = (h_s.abs(), h_t.abs());
        let tol = Tolerance::new(q.rel_tol * self.sigma2, q.rel_tol);
        if h_s == 0.0 {
            return integrate_semi_infinite(|r| self.radial_density(r, h_t), 0.0, tol);
        }
        let step = PI / h_s;
        let c = self.radial_envelope_coefficient();
        let expo = 1.5 - 2.0 * self.derived.alpha;
        // |J0(z)| ≤ sqrt(2/(π z)) for z > 0
        let tail = |r: f64| c * (2.0 / (PI * h_s)).sqrt() * r.powf(expo) / (-expo);
        oscillatory_panels(
            |r| self.radial_density(r, h_t) * bessel_j0(r * h_s),
            0.75 * step,
            step,
            tol,
            tail,
        )
    }

    /// Marginal temporal covariance.
    pub fn temporal_cov(&self, h_t: f64, q: &QuadratureSpec) -> Result<f64> {
        let h_t = h_t.abs();
        if self.sp.is_separable() {
            return Ok(self.sigma2 * matern_correlation(self.sp.alpha_t - 0.5, h_t / self.sc.gamma_t));
        }
        let tol = Tolerance::new(q.rel_tol * self.sigma2 * 0.5, q.rel_tol);
        let half = fourier_cosine(
            |w| self.temporal_spectrum(w, q).unwrap_or(f64::NAN),
            h_t,
            tol,
        )?;
        if !half.value.is_finite() {
            return Err(crate::Error::Quadrature { achieved: f64::NAN, requested: tol.rel });
        }
        Ok(2.0 * half.value)
    }

    /// σ² from a direct numerical integral of the spectrum over (ω_s, ω_t).
    ///
    /// The ω_t integral is mapped with `ω = √A/γ_t · tan θ`, which turns it into
    /// `2 A^{1/2-α_t}/γ_t ∫_0^{π/2} cos^{2α_t-2} θ dθ`; both that and the radial
    /// integral are evaluated numerically.
    pub fn variance_by_quadrature(&self, q: &QuadratureSpec) -> Result<f64> {
        let alpha_t = self.sp.alpha_t;
        let tol = Tolerance::relative(q.rel_tol);
        let angular = integrate(|th: f64| th.cos().powf(2.0 * alpha_t - 2.0), 0.0, 0.5 * PI, tol)?.value;
        let gamma_s2 = self.sc.gamma_s * self.sc.gamma_s;
        let radial = integrate_semi_infinite(
            |r| {
                let base = gamma_s2 + r * r;
                let a_big = base.powf(self.sp.alpha_s);
                2.0 * PI * r * base.powf(-self.sp.alpha_e) * a_big.powf(0.5 - alpha_t)
            },
            0.0,
            tol,
        )?
        .value;
        Ok(self.prefactor() * 2.0 / self.sc.gamma_t * angular * radial)
    }
}
