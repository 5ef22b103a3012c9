//! Special functions used by the covariance oracles.
//!
//! `bessel_j0` splits between the power series and the Hankel asymptotic
//! expansion at |x| = 12, which keeps both branches near 1e-12 absolute.
//! `ln_bessel_k_scaled` integrates `exp(-x cosh t) cosh(nu t)` with the
//! trapezoidal rule, which converges geometrically for this analytic,
//! even integrand.

use std::f64::consts::{FRAC_PI_4, LN_2, PI};

pub use statrs::function::gamma::ln_gamma;

const J0_SPLIT: f64 = 12.0;

/// Bessel function of the first kind of order zero.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < J0_SPLIT {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= -q / (k * k);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > q.sqrt() {
                break;
            }
            k += 1.0;
        }
        sum
    } else {
        // a_k = prod_{j<=k} (-(2j-1)^2) / (k! 8^k)
        let mut p = 1.0;
        let mut q = 0.0;
        let mut a = 1.0;
        let mut prev = f64::INFINITY;
        let mut xpow = 1.0;
        for k in 1..60 {
            let kf = k as f64;
            a *= -((2.0 * kf - 1.0).powi(2)) / (8.0 * kf);
            xpow *= x;
            let term = a / xpow;
            if term.abs() > prev || term.abs() < 1e-18 {
                break;
            }
            prev = term.abs();
            // even k feeds P with sign (-1)^{k/2}; odd k feeds Q with sign (-1)^{(k-1)/2}
            match k % 4 {
                0 => p += term,
                1 => q += term,
                2 => p -= term,
                _ => q -= term,
            }
        }
        let w = x - FRAC_PI_4;
        (2.0 / (PI * x)).sqrt() * (p * w.cos() - q * w.sin())
    }
}

/// `ln(exp(x) K_nu(x))` for `x > 0`, `nu >= 0`.
pub fn ln_bessel_k_scaled(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0 && nu >= 0.0);
    let nu = nu.abs();
    // log of the dominant half of the integrand, g(t) = nu t - x (cosh t - 1)
    let g = |t: f64| nu * t - x * (t.cosh() - 1.0);
    let t_peak = (nu / x).asinh();
    let g_peak = g(t_peak);
    let mut t_end = t_peak + 0.5;
    while g(t_end) - g_peak > -50.0 {
        t_end += (t_end - t_peak).max(0.5);
    }
    let f = |t: f64| {
        let gt = g(t) - g_peak;
        0.5 * (gt.exp() + (gt - 2.0 * nu * t).exp())
    };

    let mut n = 64usize;
    let mut h = t_end / n as f64;
    let mut sum = 0.5 * f(0.0) + (1..n).map(|i| f(i as f64 * h)).sum::<f64>();
    let mut estimate = h * sum;
    for _ in 0..12 {
        let mids: f64 = (0..n).map(|i| f((i as f64 + 0.5) * h)).sum();
        sum += mids;
        n *= 2;
        h *= 0.5;
        let refined = h * sum;
        let done = (refined - estimate).abs() <= 1e-15 * refined.abs();
        estimate = refined;
        if done {
            break;
        }
    }
    g_peak + estimate.ln()
}

/// Modified Bessel function of the second kind, `K_nu(x)`, `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    (ln_bessel_k_scaled(nu, x) - x).exp()
}

/// Matérn correlation `2^{1-nu}/Gamma(nu) x^nu K_nu(x)`, equal to 1 at `x = 0`.
pub fn matern_correlation(nu: f64, x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 1.0;
    }
    if (nu - 0.5).abs() < 1e-15 {
        return (-x).exp();
    }
    let ln = (1.0 - nu) * LN_2 - ln_gamma(nu) + nu * x.ln() - x + ln_bessel_k_scaled(nu, x);
    ln.exp()
}

/// `exp(ln Γ(a) - ln Γ(b))`, stable for large arguments.
pub fn gamma_ratio(a: f64, b: f64) -> f64 {
    (ln_gamma(a) - ln_gamma(b)).exp()
}
