//! Smoothness exponents, raw scales and the interpretable (σ, r_s, r_t) triple.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::special::ln_gamma;

/// The three exponents `(α_t, α_s, α_e)` of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub alpha_t: f64,
    pub alpha_s: f64,
    pub alpha_e: f64,
}

/// Quantities derived from the exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedSmoothness {
    pub alpha: f64,
    pub nu_s: f64,
    pub nu_t: f64,
    pub beta_s: f64,
}

/// Raw scales: `γ_t` (time), `γ_s` (inverse spatial length), `γ_e` (noise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub gamma_t: f64,
    pub gamma_s: f64,
    pub gamma_e: f64,
}

/// Marginal standard deviation and the spatial and temporal ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpretableParams {
    pub sigma: f64,
    pub r_s: f64,
    pub r_t: f64,
}

impl SmoothnessParams {
    pub fn new(alpha_t: f64, alpha_s: f64, alpha_e: f64) -> Result<Self> {
        let sp = Self { alpha_t, alpha_s, alpha_e };
        sp.validate()?;
        Ok(sp)
    }

    /// The separable model `(1, 0, 2)`.
    pub const SEPARABLE: Self = Self { alpha_t: 1.0, alpha_s: 0.0, alpha_e: 2.0 };
    /// The diffusion model `(1, 2, 1)`.
    pub const DIFFUSION: Self = Self { alpha_t: 1.0, alpha_s: 2.0, alpha_e: 1.0 };
    /// The fully non-separable model `(3/2, 2, 0)`.
    pub const FULLY_NONSEPARABLE: Self = Self { alpha_t: 1.5, alpha_s: 2.0, alpha_e: 0.0 };

    pub fn alpha(&self) -> f64 {
        self.alpha_e + self.alpha_s * (self.alpha_t - 0.5)
    }

    pub fn is_separable(&self) -> bool {
        self.alpha_s == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_t", self.alpha_t), ("alpha_s", self.alpha_s), ("alpha_e", self.alpha_e)] {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.alpha_t <= 0.5 {
            return invalid(format!("alpha_t must exceed 1/2, got {}", self.alpha_t));
        }
        let alpha = self.alpha();
        if alpha <= 1.0 {
            return invalid(format!("alpha = alpha_e + alpha_s (alpha_t - 1/2) must exceed 1, got {alpha}"));
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<DerivedSmoothness> {
        self.validate()?;
        let alpha = self.alpha();
        let nu_s = alpha - 1.0;
        let nu_t = if self.is_separable() {
            self.alpha_t - 0.5
        } else {
            (self.alpha_t - 0.5).min(nu_s / self.alpha_s)
        };
        let beta_s = self.alpha_s * nu_t / nu_s;
        if !(0.0..=1.0 + 1e-12).contains(&beta_s) {
            return invalid(format!("separability parameter {beta_s} outside [0, 1]"));
        }
        Ok(DerivedSmoothness { alpha, nu_s, nu_t, beta_s: beta_s.min(1.0) })
    }

    /// `ln c1`, where `σ² = c1 γ_e^{-2} γ_t^{-1} γ_s^{-2(α-1)}`.
    pub fn ln_c1(&self) -> Result<f64> {
        self.validate()?;
        let alpha = self.alpha();
        let v = ln_gamma(self.alpha_t - 0.5) + ln_gamma(alpha - 1.0)
            - ln_gamma(self.alpha_t)
            - ln_gamma(alpha)
            - (8.0 * PI.powf(1.5)).ln();
        if !v.is_finite() || v.abs() > 700.0 {
            return invalid(format!("variance constant out of floating-point range (ln c1 = {v})"));
        }
        Ok(v)
    }

    pub fn c1(&self) -> Result<f64> {
        Ok(self.ln_c1()?.exp())
    }
}

fn check_positive(values: &[(&str, f64)]) -> Result<()> {
    for &(name, v) in values {
        if !(v.is_finite() && v > 0.0) {
            return invalid(format!("{name} must be positive and finite, got {v}"));
        }
    }
    Ok(())
}

impl ScaleParams {
    pub fn new(gamma_t: f64, gamma_s: f64, gamma_e: f64) -> Result<Self> {
        let sc = Self { gamma_t, gamma_s, gamma_e };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive(&[("gamma_t", self.gamma_t), ("gamma_s", self.gamma_s), ("gamma_e", self.gamma_e)])
    }
}

impl InterpretableParams {
    pub fn new(sigma: f64, r_s: f64, r_t: f64) -> Result<Self> {
        let ip = Self { sigma, r_s, r_t };
        ip.validate()?;
        Ok(ip)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive(&[("sigma", self.sigma), ("r_s", self.r_s), ("r_t", self.r_t)])
    }
}

/// Marginal variance implied by a set of scales.
pub fn marginal_variance(sp: &SmoothnessParams, sc: &ScaleParams) -> Result<f64> {
    let alpha = sp.alpha();
    let ln = sp.ln_c1()? - 2.0 * sc.gamma_e.ln() - sc.gamma_t.ln() - 2.0 * (alpha - 1.0) * sc.gamma_s.ln();
    Ok(ln.exp())
}

pub fn scales_to_interpretable(sp: &SmoothnessParams, sc: &ScaleParams) -> Result<InterpretableParams> {
    sc.validate()?;
    let d = sp.derived()?;
    let sigma = (0.5 * (sp.ln_c1()? - sc.gamma_t.ln() - 2.0 * (d.alpha - 1.0) * sc.gamma_s.ln())).exp()
        / sc.gamma_e;
    let r_s = (8.0 * d.nu_s).sqrt() / sc.gamma_s;
    let r_t = sc.gamma_t * (8.0 * (sp.alpha_t - 0.5)).sqrt() * sc.gamma_s.powf(-sp.alpha_s);
    let ip = InterpretableParams { sigma, r_s, r_t };
    ip.validate()?;
    Ok(ip)
}

pub fn interpretable_to_scales(sp: &SmoothnessParams, ip: &InterpretableParams) -> Result<ScaleParams> {
    ip.validate()?;
    let d = sp.derived()?;
    let gamma_s = (8.0 * d.nu_s).sqrt() / ip.r_s;
    let gamma_t = ip.r_t * gamma_s.powf(sp.alpha_s) / (8.0 * (sp.alpha_t - 0.5)).sqrt();
    let gamma_e = (0.5 * (sp.ln_c1()? - gamma_t.ln() - 2.0 * (d.alpha - 1.0) * gamma_s.ln())).exp() / ip.sigma;
    let sc = ScaleParams { gamma_t, gamma_s, gamma_e };
    sc.validate()?;
    Ok(sc)
}

/// A complete model: exponents plus scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub smoothness: SmoothnessParams,
    pub scales: ScaleParams,
}

impl Model {
    pub fn from_interpretable(sp: SmoothnessParams, ip: InterpretableParams) -> Result<Self> {
        Ok(Self { smoothness: sp, scales: interpretable_to_scales(&sp, &ip)? })
    }

    pub fn from_scales(sp: SmoothnessParams, sc: ScaleParams) -> Result<Self> {
        sp.validate()?;
        sc.validate()?;
        Ok(Self { smoothness: sp, scales: sc })
    }

    pub fn interpretable(&self) -> Result<InterpretableParams> {
        scales_to_interpretable(&self.smoothness, &self.scales)
    }

    pub fn variance(&self) -> Result<f64> {
        marginal_variance(&self.smoothness, &self.scales)
    }
}

/// Flat configuration block: the exponents plus exactly one scale group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha_t: f64,
    pub alpha_s: f64,
    pub alpha_e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_t: Option<f64>,
}

impl ModelConfig {
    pub fn from_interpretable(sp: SmoothnessParams, ip: InterpretableParams) -> Self {
        Self {
            alpha_t: sp.alpha_t,
            alpha_s: sp.alpha_s,
            alpha_e: sp.alpha_e,
            sigma: Some(ip.sigma),
            r_s: Some(ip.r_s),
            r_t: Some(ip.r_t),
            ..Default::default()
        }
    }

    pub fn model(&self) -> Result<Model> {
        let sp = SmoothnessParams::new(self.alpha_t, self.alpha_s, self.alpha_e)?;
        let raw = [self.gamma_t, self.gamma_s, self.gamma_e];
        let interp = [self.sigma, self.r_s, self.r_t];
        let raw_any = raw.iter().any(Option::is_some);
        let interp_any = interp.iter().any(Option::is_some);
        match (raw_any, interp_any) {
            (true, true) => invalid("give either gamma_t/gamma_s/gamma_e or sigma/r_s/r_t, not both"),
            (false, false) => invalid("missing scales: give gamma_t/gamma_s/gamma_e or sigma/r_s/r_t"),
            (true, false) => match raw {
                [Some(t), Some(s), Some(e)] => Model::from_scales(sp, ScaleParams::new(t, s, e)?),
                _ => invalid("incomplete scale group: gamma_t, gamma_s and gamma_e are all required"),
            },
            (false, true) => match interp {
                [Some(sigma), Some(r_s), Some(r_t)] => {
                    Model::from_interpretable(sp, InterpretableParams::new(sigma, r_s, r_t)?)
                }
                _ => invalid("incomplete scale group: sigma, r_s and r_t are all required"),
            },
        }
    }
}
