//! Sparse precision matrices: spatial `Q_α`, the stationary temporal
//! AR2/OU precision, and the separable and non-separable space-time
//! precisions. Coefficients are ordered space-fastest: `u_{i,j}` sits at
//! index `j·N_s + i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{FemMatrices, TimeGrid};
use crate::params::{Model, ScaleParams, SmoothnessParams};
use crate::sparse::SparseSymmetric;

/// How the temporal boundary rows of the space-time precision are corrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CornerCorrection {
    /// The plain `2γ_t M₁` boundary term, the small-`hκ` limit of the stationary correction.
    #[default]
    Boundary,
    /// The mode-dependent stationary correction; only expressible through the
    /// eigen-decomposition route.
    Exact,
}

/// Where `γ_e²` enters the space-time precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaEPlacement {
    /// Once, as a global factor.
    #[default]
    Once,
    /// Also inside every spatial `Q_α`; wrong, kept as a negative control.
    DoubleCounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GmrfOptions {
    pub correction: CornerCorrection,
    pub gamma_e: GammaEPlacement,
}

/// Spatial precision `Q_α` without the `γ_e²` factor.
pub fn spatial_precision(order: usize, gamma_s: f64, c_lumped: &[f64], g: &SparseSymmetric) -> Result<SparseSymmetric> {
    if !(gamma_s > 0.0 && gamma_s.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma_s must be positive, got {gamma_s}")));
    }
    if c_lumped.len() != g.dim() {
        return Err(Error::DimensionMismatch("lumped mass and stiffness differ in size".into()));
    }
    let k = SparseSymmetric::from_diagonal(c_lumped).add_scaled(gamma_s * gamma_s, g, 1.0)?;
    let inv: Vec<f64> = c_lumped.iter().map(|m| 1.0 / m).collect();
    let q = match order {
        1 => k,
        2 => k.sandwich(&inv, &k)?,
        3 => k.sandwich(&inv, &k)?.sandwich(&inv, &k)?,
        _ => return Err(Error::InvalidParameter(format!("spatial order must be 1, 2 or 3, got {order}"))),
    };
    if q.diagonal().iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: 0.0 });
    }
    Ok(q)
}

/// Coefficients `(a₀, a₁, a₂)` with `q0 = a₀²+a₁²+a₂²`, `q1 = a₁(a₀+a₂)`, `q2 = a₀a₂`.
pub fn ar2_factor(q0: f64, q1: f64, q2: f64) -> Result<(f64, f64, f64)> {
    let bp2 = q0 + 2.0 * q1 + 2.0 * q2;
    let bm2 = q0 - 2.0 * q1 + 2.0 * q2;
    if !(bp2 > 0.0) {
        return Err(Error::Ar2Precondition(format!("q0 + 2 q1 + 2 q2 = {bp2} must be positive")));
    }
    if !(bm2 > 0.0) {
        return Err(Error::Ar2Precondition(format!("q0 - 2 q1 + 2 q2 = {bm2} must be positive")));
    }
    let (bp, bm) = (bp2.sqrt(), bm2.sqrt());
    let bs = bp + bm;
    let disc = bs * bs - 16.0 * q2;
    if disc < 0.0 {
        return Err(Error::Ar2Precondition(format!("(b+ + b-)² - 16 q2 = {disc} must be non-negative")));
    }
    let a0 = (bs + disc.sqrt()) / 4.0;
    let a2 = (bs - disc.sqrt()) / 4.0;
    let a1 = (bp - bm) / 2.0;
    let scale = q0.abs().max(q1.abs()).max(q2.abs());
    let residual = (a0 * a0 + a1 * a1 + a2 * a2 - q0)
        .abs()
        .max((a1 * (a0 + a2) - q1).abs())
        .max((a0 * a2 - q2).abs());
    if residual > 1e-12 * scale {
        return Err(Error::Ar2Precondition(format!("factorisation residual {residual:.3e}")));
    }
    Ok((a0, a1, a2))
}

/// Precision of `n` consecutive values of the stationary AR2 process with
/// interior bands `(q0, q1, q2)`.
pub fn ar2_stationary_precision(q0: f64, q1: f64, q2: f64, n: usize) -> Result<SparseSymmetric> {
    if n < 4 {
        return Err(Error::Ar2Precondition(format!("need n ≥ 4, got {n}")));
    }
    let (a0, a1, _) = ar2_factor(q0, q1, q2)?;
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        let diag = if i == 0 || i == n - 1 {
            a0 * a0
        } else if i == 1 || i == n - 2 {
            a0 * a0 + a1 * a1
        } else {
            q0
        };
        t.push((i, i, diag));
        if i >= 1 {
            let off = if i == 1 || i == n - 1 { a1 * a0 } else { q1 };
            t.push((i, i - 1, off));
        }
        if i >= 2 && q2 != 0.0 {
            t.push((i, i - 2, q2));
        }
    }
    SparseSymmetric::from_lower_triplets(n, &t)
}

/// Stationary temporal OU precision.
#[derive(Debug, Clone)]
pub struct TemporalPrecision {
    pub matrix: SparseSymmetric,
    pub kappa: f64,
    pub b: f64,
    /// Factor multiplying `2bκ M₁` implied by the corners.
    pub c: f64,
}

/// `b(κ²M₀ + 2κ c M₁ + M₂)` with the corner factor `c` chosen so that the
/// covariance is exactly stationary (`c = √(1 + h²κ²/12)`).
pub fn ou_precision(kappa: f64, b: f64, grid: &TimeGrid) -> Result<TemporalPrecision> {
    if !(kappa > 0.0 && kappa.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa and b must be positive, got {kappa}, {b}")));
    }
    let h = grid.h;
    let q0 = b * (kappa * kappa * 2.0 * h / 3.0 + 2.0 / h);
    let q1 = b * (kappa * kappa * h / 6.0 - 1.0 / h);
    let matrix = ar2_stationary_precision(q0, q1, 0.0, grid.n_t)?;
    let corner_without = b * (kappa * kappa * h / 3.0 + 1.0 / h);
    let c = (matrix.get(0, 0) - corner_without) / (b * kappa);
    Ok(TemporalPrecision { matrix, kappa, b, c })
}

/// `b(κ²M₀ + 2κ M₁ + M₂)` without any stationarity correction.
pub fn ou_precision_uncorrected(kappa: f64, b: f64, fem: &FemMatrices) -> Result<SparseSymmetric> {
    let t = &fem.temporal;
    t.m0
        .scale(kappa * kappa)
        .add_scaled(1.0, &t.m1, 2.0 * kappa)?
        .add_scaled(1.0, &t.m2, 1.0)
        .map(|m| m.scale(b))
}

/// Space-time precision with its block dimensions.
#[derive(Debug, Clone)]
pub struct SpaceTimePrecision {
    pub matrix: SparseSymmetric,
    pub n_space: usize,
    pub n_time: usize,
}

impl SpaceTimePrecision {
    pub fn index(&self, vertex: usize, time: usize) -> usize {
        time * self.n_space + vertex
    }
}

fn gamma_e_factor(sc: &ScaleParams, opts: &GmrfOptions) -> f64 {
    let g2 = sc.gamma_e * sc.gamma_e;
    match opts.gamma_e {
        GammaEPlacement::Once => g2,
        GammaEPlacement::DoubleCounted => g2 * g2,
    }
}

/// `γ_e²(M₀⊗Q₃ + 2γ_t M₁⊗Q₂ + γ_t² M₂⊗Q₁)` for the diffusion model `(1, 2, 1)`.
pub fn demf121_precision(sc: &ScaleParams, fem: &FemMatrices, opts: &GmrfOptions) -> Result<SpaceTimePrecision> {
    sc.validate()?;
    if opts.correction == CornerCorrection::Exact {
        return Err(Error::InvalidParameter(
            "the exact corner correction is mode dependent; use eigen_oracle".into(),
        ));
    }
    let q1 = spatial_precision(1, sc.gamma_s, &fem.c_lumped, &fem.g)?;
    let q2 = spatial_precision(2, sc.gamma_s, &fem.c_lumped, &fem.g)?;
    let q3 = spatial_precision(3, sc.gamma_s, &fem.c_lumped, &fem.g)?;
    let t = &fem.temporal;
    let gt = sc.gamma_t;
    let q = t
        .m0
        .kron(&q3)
        .add_scaled(1.0, &t.m1.kron(&q2), 2.0 * gt)?
        .add_scaled(1.0, &t.m2.kron(&q1), gt * gt)?
        .scale(gamma_e_factor(sc, opts));
    Ok(SpaceTimePrecision { matrix: q, n_space: fem.n_space(), n_time: fem.n_time() })
}

/// Separable model `(1, 0, 2)`: `R_t ⊗ Q_s` with a unit-variance OU factor
/// `R_t` (κ = 1/γ_t) and `Q_s = 2γ_tγ_e² Q₂(γ_s)`.
pub fn separable_precision(sc: &ScaleParams, fem: &FemMatrices, opts: &GmrfOptions) -> Result<SpaceTimePrecision> {
    sc.validate()?;
    let kappa = 1.0 / sc.gamma_t;
    let b = sc.gamma_t / 2.0;
    let rt = match opts.correction {
        CornerCorrection::Exact => ou_precision(kappa, b, &fem.grid)?.matrix,
        CornerCorrection::Boundary => ou_precision_uncorrected(kappa, b, fem)?,
    };
    let qs = spatial_precision(2, sc.gamma_s, &fem.c_lumped, &fem.g)?.scale(2.0 * sc.gamma_t * gamma_e_factor(sc, opts));
    Ok(SpaceTimePrecision { matrix: rt.kron(&qs), n_space: fem.n_space(), n_time: fem.n_time() })
}

/// Precision for any supported model.
pub fn space_time_precision(model: &Model, fem: &FemMatrices, opts: &GmrfOptions) -> Result<SpaceTimePrecision> {
    let sp = model.smoothness;
    if sp == SmoothnessParams::DIFFUSION {
        demf121_precision(&model.scales, fem, opts)
    } else if sp == SmoothnessParams::SEPARABLE {
        // the separable factor is always built stationary
        let opts = GmrfOptions { correction: CornerCorrection::Exact, ..*opts };
        separable_precision(&model.scales, fem, &opts)
    } else {
        Err(Error::InvalidParameter(format!(
            "no sparse discretisation for (alpha_t, alpha_s, alpha_e) = ({}, {}, {}); supported: (1, 2, 1) and (1, 0, 2)",
            sp.alpha_t, sp.alpha_s, sp.alpha_e
        )))
    }
}

/// Dense construction through the generalised eigenproblem `G V = C̃ V Λ`.
#[derive(Debug, Clone)]
pub struct EigenOracle {
    /// Eigenvalues `λ_m ≥ 0`, ascending.
    pub lambda: DVector<f64>,
    /// Generalised eigenvectors with `Vᵀ C̃ V = I`.
    pub v: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

pub fn eigen_oracle(sc: &ScaleParams, fem: &FemMatrices, correction: CornerCorrection) -> Result<EigenOracle> {
    sc.validate()?;
    let ns = fem.n_space();
    let nt = fem.n_time();
    if ns > 400 {
        return Err(Error::Eigen(format!("dense oracle limited to 400 vertices, got {ns}")));
    }
    let sqrt_m: Vec<f64> = fem.c_lumped.iter().map(|m| m.sqrt()).collect();
    let mut s = fem.g.to_dense();
    for i in 0..ns {
        for j in 0..ns {
            s[(i, j)] /= sqrt_m[i] * sqrt_m[j];
        }
    }
    let eig = s.symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..ns).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda = DVector::from_iterator(ns, order.iter().map(|&k| eig.eigenvalues[k].max(0.0)));
    let w = DMatrix::from_fn(ns, ns, |i, k| eig.eigenvectors[(i, order[k])]);
    // C̃^{1/2} W, so each block is (C̃^{1/2}W) D (C̃^{1/2}W)ᵀ
    let cw = DMatrix::from_fn(ns, ns, |i, k| sqrt_m[i] * w[(i, k)]);
    let v = DMatrix::from_fn(ns, ns, |i, k| w[(i, k)] / sqrt_m[i]);

    let t = &fem.temporal;
    let (m0, m1, m2) = (t.m0.to_dense(), t.m1.to_dense(), t.m2.to_dense());
    let ge2 = sc.gamma_e * sc.gamma_e;
    let gt = sc.gamma_t;
    let mut per_mode: Vec<DMatrix<f64>> = Vec::with_capacity(ns);
    for m in 0..ns {
        let a = sc.gamma_s * sc.gamma_s + lambda[m];
        let kappa = a / gt;
        let block = match correction {
            CornerCorrection::Boundary => (&m0 * (a * a * a) + &m1 * (2.0 * gt * a * a) + &m2 * (gt * gt * a)) * ge2,
            CornerCorrection::Exact => ou_precision(kappa, ge2 * a * gt * gt, &fem.grid)?.matrix.to_dense(),
        };
        per_mode.push(block);
    }
    let mut precision = DMatrix::zeros(ns * nt, ns * nt);
    for j in 0..nt {
        for l in 0..nt {
            if m0[(j, l)] == 0.0 && m2[(j, l)] == 0.0 {
                continue;
            }
            let d = DVector::from_iterator(ns, per_mode.iter().map(|b| b[(j, l)]));
            let mut scaled = cw.clone();
            for k in 0..ns {
                scaled.column_mut(k).scale_mut(d[k]);
            }
            let block = scaled * cw.transpose();
            precision.view_mut((j * ns, l * ns), (ns, ns)).copy_from(&block);
        }
    }
    Ok(EigenOracle { lambda, v, precision })
}
