//! Sparse Cholesky factorisation and the Gaussian operations built on it.
//!
//! The factorisation is the classic up-looking algorithm: row `k` of `L` is
//! found by a sparse triangular solve whose pattern is the reach of column
//! `k` in the elimination tree. The symbolic part (ordering, tree, column
//! counts, permuted pattern) is kept separately so repeated factorisations of
//! one pattern, as in hyperparameter fitting, skip it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{Mesh2D, TimeGrid};
use crate::sparse::{Csr, SparseSymmetric};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    /// Approximate minimum degree.
    #[default]
    Amd,
    /// Identity permutation.
    Natural,
}

/// Everything about a factorisation that depends only on the pattern.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `pinv[old] = new`.
    pinv: Vec<usize>,
    parent: Vec<usize>,
    /// Column pointers of `L`.
    lp: Vec<usize>,
    /// Upper triangle of `P Q Pᵀ` in compressed-column form.
    cp: Vec<usize>,
    ci: Vec<usize>,
    /// Position in the source matrix's value array for each entry of `ci`.
    source: Vec<usize>,
    pattern_indptr: Vec<usize>,
    pattern_indices: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(q: &SparseSymmetric, ordering: Ordering) -> Result<Self> {
        let a = q.csr();
        let n = a.nrows();
        let perm = match ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::Amd => amd_order(a)?,
        };
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        // upper triangle of C = P A Pᵀ by columns; A is symmetric so its rows are its columns
        let mut counts = vec![0usize; n + 1];
        for new_j in 0..n {
            let (rows, _) = a.row(perm[new_j]);
            counts[new_j + 1] = rows.iter().filter(|&&old_i| pinv[old_i] <= new_j).count();
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let cp = counts;
        let mut ci = Vec::with_capacity(cp[n]);
        let mut source = Vec::with_capacity(cp[n]);
        for new_j in 0..n {
            let old_j = perm[new_j];
            let start = a.indptr()[old_j];
            let (rows, _) = a.row(old_j);
            for (k, &old_i) in rows.iter().enumerate() {
                let new_i = pinv[old_i];
                if new_i <= new_j {
                    ci.push(new_i);
                    source.push(start + k);
                }
            }
        }
        let parent = etree(n, &cp, &ci);

        // column counts of L by walking every row pattern once
        let mut colcount = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(n, &cp, &ci, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..n] {
                colcount[i] += 1;
            }
            colcount[k] += 1;
        }
        let mut lp = vec![0usize; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + colcount[j];
        }
        Ok(Self {
            n,
            perm,
            pinv,
            parent,
            lp,
            cp,
            ci,
            source,
            pattern_indptr: a.indptr().to_vec(),
            pattern_indices: a.indices().to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// True when `q` has exactly the pattern this analysis was made for.
    pub fn matches(&self, q: &SparseSymmetric) -> bool {
        q.csr().indptr() == self.pattern_indptr.as_slice() && q.csr().indices() == self.pattern_indices.as_slice()
    }

    /// Numeric factorisation of a matrix with the analysed pattern.
    pub fn factorize(self: &Arc<Self>, q: &SparseSymmetric) -> Result<CholeskyFactor> {
        if !self.matches(q) {
            return Err(Error::DimensionMismatch("matrix pattern differs from the analysed one".into()));
        }
        let n = self.n;
        let values = q.csr().values();
        let mut li = vec![0usize; self.nnz_l()];
        let mut lx = vec![0.0; self.nnz_l()];
        let mut next = self.lp[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(n, &self.cp, &self.ci, k, &self.parent, &mut stack, &mut mark);
            x[k] = 0.0;
            for p in self.cp[k]..self.cp[k + 1] {
                x[self.ci[p]] = values[self.source[p]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / lx[self.lp[i]];
                x[i] = 0.0;
                for p in self.lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: self.perm[k], value: d });
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        let log_det = 2.0 * (0..n).map(|j| lx[self.lp[j]].ln()).sum::<f64>();
        Ok(CholeskyFactor { symbolic: Arc::clone(self), li, lx, log_det })
    }
}

fn amd_order(a: &Csr) -> Result<Vec<usize>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (p, _, _) = amd::order(n, a.indptr(), a.indices(), &amd::Control::default())
        .map_err(|s| Error::InvalidParameter(format!("ordering failed: {s:?}")))?;
    Ok(p)
}

/// Elimination tree of the matrix whose upper triangle is `(cp, ci)`.
fn etree(n: usize, cp: &[usize], ci: &[usize]) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &start in &ci[cp[k]..cp[k + 1]] {
            let mut i = start;
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Pattern of row `k` of `L`, written to `stack[top..n]` in topological order.
fn ereach(n: usize, cp: &[usize], ci: &[usize], k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let mut top = n;
    mark[k] = k;
    for &start in &ci[cp[k]..cp[k + 1]] {
        let mut i = start;
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// `P Q Pᵀ = L Lᵀ` with `L` stored by columns, diagonal first.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    li: Vec<usize>,
    lx: Vec<f64>,
    log_det: f64,
}

/// Factorise with the default (minimum-degree) ordering.
pub fn factorize(q: &SparseSymmetric) -> Result<CholeskyFactor> {
    factorize_with(q, Ordering::Amd)
}

pub fn factorize_with(q: &SparseSymmetric, ordering: Ordering) -> Result<CholeskyFactor> {
    Arc::new(SymbolicCholesky::analyze(q, ordering)?).factorize(q)
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    /// `ln det Q`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn nnz_l(&self) -> usize {
        self.lx.len()
    }

    fn lower_solve_in_place(&self, y: &mut [f64], from: usize) {
        let lp = &self.symbolic.lp;
        for j in from..self.dim() {
            let yj = y[j] / self.lx[lp[j]];
            y[j] = yj;
            if yj != 0.0 {
                for p in lp[j] + 1..lp[j + 1] {
                    y[self.li[p]] -= self.lx[p] * yj;
                }
            }
        }
    }

    fn upper_solve_in_place(&self, y: &mut [f64]) {
        let lp = &self.symbolic.lp;
        for j in (0..self.dim()).rev() {
            let mut s = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= self.lx[p] * y[self.li[p]];
            }
            y[j] = s / self.lx[lp[j]];
        }
    }

    /// Solve `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim(), "right-hand side has the wrong length");
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.lower_solve_in_place(&mut y, 0);
        self.upper_solve_in_place(&mut y);
        let mut x = vec![0.0; y.len()];
        for (new, &old) in perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// One draw from `N(0, Q⁻¹)`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.upper_solve_in_place(&mut w);
        let mut x = vec![0.0; w.len()];
        for (new, &old) in self.symbolic.perm.iter().enumerate() {
            x[old] = w[new];
        }
        x
    }

    /// Deterministic draw for a 64-bit seed (ChaCha20 stream).
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        self.sample_with(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    /// `(Q⁻¹)_ii = ‖L⁻¹ P e_i‖²`, one sparse forward solve per index.
    pub fn variance(&self, i: usize) -> f64 {
        let start = self.symbolic.pinv[i];
        let mut y = vec![0.0; self.dim()];
        y[start] = 1.0;
        self.lower_solve_in_place(&mut y, start);
        y[start..].iter().map(|v| v * v).sum()
    }

    pub fn variances_at(&self, indices: &[usize]) -> Vec<f64> {
        indices.par_iter().map(|&i| self.variance(i)).collect()
    }

    /// Full diagonal of `Q⁻¹` by column solves.
    pub fn marginal_variances(&self) -> Vec<f64> {
        (0..self.dim()).into_par_iter().map(|i| self.variance(i)).collect()
    }

    /// Column `i` of `Q⁻¹`.
    pub fn covariance_column(&self, i: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[i] = 1.0;
        self.solve(&e)
    }

    /// Dense `L` in the permuted ordering (tests and diagnostics).
    pub fn dense_l(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let lp = &self.symbolic.lp;
        let mut l = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            for p in lp[j]..lp[j + 1] {
                l[(self.li[p], j)] = self.lx[p];
            }
        }
        l
    }
}

/// Design matrix mapping basis coefficients to values at `(s, t)` points.
pub fn project(mesh: &Mesh2D, grid: &TimeGrid, points: &[([f64; 2], f64)]) -> Result<Csr> {
    let ns = mesh.n_vertices();
    let mut triplets = Vec::with_capacity(6 * points.len());
    for (row, &(s, t)) in points.iter().enumerate() {
        let (tri, bary) = mesh.locate(s).ok_or(Error::OutsideDomain { index: row })?;
        let (j, w) = grid.locate(t).ok_or(Error::OutsideDomain { index: row })?;
        let verts = mesh.triangles()[tri];
        for (time, tw) in [(j, 1.0 - w), (j + 1, w)] {
            if tw == 0.0 {
                continue;
            }
            for k in 0..3 {
                if bary[k] != 0.0 {
                    triplets.push((row, time * ns + verts[k], bary[k] * tw));
                }
            }
        }
    }
    Csr::from_triplets(points.len(), ns * grid.n_t, &triplets)
}

/// Noisy point observations `y = u(s, t) + ε`, `ε ~ N(0, σ_n²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub locations: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub noise_variance: f64,
}

impl ObservationSet {
    pub fn new(locations: Vec<[f64; 2]>, times: Vec<f64>, values: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if locations.len() != times.len() || times.len() != values.len() {
            return Err(Error::DimensionMismatch("locations, times and values differ in length".into()));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance must be positive, got {noise_variance}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("observation values must be finite".into()));
        }
        Ok(Self { locations, times, values, noise_variance })
    }

    pub fn empty(noise_variance: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), Vec::new(), noise_variance)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> Vec<([f64; 2], f64)> {
        self.locations.iter().copied().zip(self.times.iter().copied()).collect()
    }

    pub fn design(&self, mesh: &Mesh2D, grid: &TimeGrid) -> Result<Csr> {
        project(mesh, grid, &self.points())
    }
}

/// Gaussian posterior of the coefficients given observations.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub precision: SparseSymmetric,
    pub factor: CholeskyFactor,
    /// `Aᵀy / σ_n²`, kept for the likelihood.
    pub rhs: Vec<f64>,
}

impl Posterior {
    pub fn marginal_variances(&self) -> Vec<f64> {
        self.factor.marginal_variances()
    }
}

/// `Q + AᵀA/σ_n²`.
pub fn posterior_precision(q: &SparseSymmetric, a: &Csr, noise_variance: f64) -> Result<SparseSymmetric> {
    if a.ncols() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, precision has dimension {}",
            a.ncols(),
            q.dim()
        )));
    }
    let ata = SparseSymmetric::new(a.transpose().matmul(a)?)?;
    q.add_scaled(1.0, &ata, 1.0 / noise_variance)
}

/// Condition `N(0, Q⁻¹)` on `y = A u + ε`.
pub fn condition(q: &SparseSymmetric, a: &Csr, y: &[f64], noise_variance: f64) -> Result<Posterior> {
    condition_with(q, a, y, noise_variance, None)
}

/// As [`condition`], reusing a symbolic analysis when the pattern matches.
pub fn condition_with(
    q: &SparseSymmetric,
    a: &Csr,
    y: &[f64],
    noise_variance: f64,
    symbolic: Option<&Arc<SymbolicCholesky>>,
) -> Result<Posterior> {
    if y.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!("{} observations but {} design rows", y.len(), a.nrows())));
    }
    if !(noise_variance > 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance must be positive, got {noise_variance}")));
    }
    let precision = posterior_precision(q, a, noise_variance)?;
    let factor = match symbolic {
        Some(s) if s.matches(&precision) => s.factorize(&precision)?,
        _ => factorize(&precision)?,
    };
    let rhs: Vec<f64> = a.matvec_transpose(y).iter().map(|v| v / noise_variance).collect();
    let mean = factor.solve(&rhs);
    Ok(Posterior { mean, precision, factor, rhs })
}

/// `ln p(y)` for `y ~ N(0, A Q⁻¹ Aᵀ + σ_n² I)`, from the prior and
/// posterior factorisations.
pub fn log_marginal_likelihood(prior: &CholeskyFactor, post: &Posterior, y: &[f64], noise_variance: f64) -> f64 {
    let n = y.len() as f64;
    let yty: f64 = y.iter().map(|v| v * v).sum();
    let mu_b: f64 = post.mean.iter().zip(&post.rhs).map(|(m, b)| m * b).sum();
    -0.5 * n * (2.0 * std::f64::consts::PI * noise_variance).ln() + 0.5 * prior.log_det()
        - 0.5 * post.factor.log_det()
        - 0.5 * (yty / noise_variance - mu_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_spd(n: usize, seed: u64, density: f64) -> SparseSymmetric {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        let mut diag = vec![1.0; n];
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < density {
                    let v: f64 = rng.random::<f64>() - 0.5;
                    t.push((i, j, v));
                    diag[i] += v.abs();
                    diag[j] += v.abs();
                }
            }
        }
        t.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
        SparseSymmetric::from_lower_triplets(n, &t).unwrap()
    }

    #[test]
    fn identity_factor() {
        let f = factorize(&SparseSymmetric::identity(7)).unwrap();
        assert_eq!(f.log_det(), 0.0);
        assert_eq!(f.dense_l(), DMatrix::identity(7, 7));
        assert!(f.marginal_variances().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_by_two() {
        let q = SparseSymmetric::from_lower_triplets(2, &[(0, 0, 4.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        for ord in [Ordering::Amd, Ordering::Natural] {
            let f = factorize_with(&q, ord).unwrap();
            assert_relative_eq!(f.log_det(), 11f64.ln(), max_relative = 1e-15);
        }
    }

    #[test]
    fn diagonal_variances_are_reciprocals() {
        let d = [2.0, 4.0, 0.5, 8.0];
        let f = factorize(&SparseSymmetric::from_diagonal(&d)).unwrap();
        for (v, di) in f.marginal_variances().iter().zip(d) {
            assert_relative_eq!(*v, 1.0 / di, max_relative = 1e-15);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let q = SparseSymmetric::from_lower_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(factorize(&q), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn dense_oracles() {
        let q = random_spd(50, 3, 0.1);
        let dense = q.to_dense();
        let inv = dense.clone().try_inverse().unwrap();
        let f = factorize(&q).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b);
        let xd = &inv * DVector::from_vec(b.clone());
        for i in 0..50 {
            assert!((x[i] - xd[i]).abs() < 1e-10);
        }
        let r = q.matvec(&x);
        let res: f64 = r.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(res / b.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10);
        assert_relative_eq!(f.log_det(), dense.determinant().ln(), max_relative = 1e-10);
        let v = f.marginal_variances();
        for i in 0..50 {
            assert!((v[i] - inv[(i, i)]).abs() < 1e-9);
        }
        // P Q Pᵀ = L Lᵀ
        let l = f.dense_l();
        let p = f.symbolic().permutation();
        let pqp = DMatrix::from_fn(50, 50, |i, j| dense[(p[i], p[j])]);
        assert!((l.clone() * l.transpose() - pqp).abs().max() < 1e-12);
    }

    #[test]
    fn refactorisation_reuses_symbolic() {
        let q = random_spd(30, 5, 0.2);
        let f = factorize(&q).unwrap();
        let q2 = q.scale(3.0);
        let f2 = f.symbolic().factorize(&q2).unwrap();
        assert_relative_eq!(f2.log_det(), f.log_det() + 30.0 * 3f64.ln(), max_relative = 1e-12);
        assert!(f.symbolic().factorize(&SparseSymmetric::identity(30)).is_err());
    }

    #[test]
    fn sampling_matches_covariance() {
        let q = SparseSymmetric::from_lower_triplets(
            4,
            &[(0, 0, 2.0), (1, 0, -0.8), (1, 1, 2.0), (2, 1, -0.8), (2, 2, 2.0), (3, 2, -0.8), (3, 3, 2.0), (3, 0, 0.3)],
        )
        .unwrap();
        let inv = q.to_dense().try_inverse().unwrap();
        let f = factorize(&q).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let m = 20_000;
        let mut cov = DMatrix::<f64>::zeros(4, 4);
        let mut mean = [0.0; 4];
        for _ in 0..m {
            let x = f.sample_with(&mut rng);
            for i in 0..4 {
                mean[i] += x[i] / m as f64;
                for j in 0..4 {
                    cov[(i, j)] += x[i] * x[j] / m as f64;
                }
            }
        }
        for i in 0..4 {
            let se = (inv[(i, i)] / m as f64).sqrt();
            assert!(mean[i].abs() < 3.0 * se, "mean {i}: {}", mean[i]);
            for j in 0..4 {
                let tol = 0.05 * inv[(i, j)].abs().max(0.05 * inv[(i, i)]);
                assert!((cov[(i, j)] - inv[(i, j)]).abs() < tol, "({i},{j}) {} vs {}", cov[(i, j)], inv[(i, j)]);
            }
        }
        assert_eq!(f.sample(42), f.sample(42));
        assert_ne!(f.sample(42), f.sample(43));
    }

    #[test]
    fn projection_rows() {
        let mesh = Mesh2D::structured(4, 4, [0.0, 1.0], [0.0, 1.0]).unwrap();
        let grid = TimeGrid::new(4, 1.0, 0.0).unwrap();
        let a = project(&mesh, &grid, &[([0.25, 0.5], 2.0), ([0.25, 0.5], 1.5), ([0.3, 0.7], 0.2)]).unwrap();
        let (c, v) = a.row(0);
        assert_eq!(v, &[1.0]);
        assert_eq!(c[0], 2 * 25 + 2 * 5 + 1);
        let (_, v) = a.row(1);
        assert_eq!(v, &[0.5, 0.5]);
        assert!(a.row_sums().iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(a.row(2).0.len() <= 6);
        assert!(matches!(project(&mesh, &grid, &[([0.5, 0.5], 0.0), ([1.5, 0.5], 0.0)]), Err(Error::OutsideDomain { index: 1 })));
        assert!(matches!(project(&mesh, &grid, &[([0.5, 0.5], 3.5)]), Err(Error::OutsideDomain { index: 0 })));
    }

    #[test]
    fn conditioning_matches_dense() {
        let n = 30;
        let q = random_spd(n, 9, 0.15);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut t = Vec::new();
        for r in 0..8 {
            for _ in 0..3 {
                t.push((r, rng.random_range(0..n), rng.random::<f64>()));
            }
        }
        let a = Csr::from_triplets(8, n, &t).unwrap();
        let y: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let s2 = 0.3;
        let post = condition(&q, &a, &y, s2).unwrap();

        let qd = q.to_dense();
        let ad = a.to_dense();
        let qp = &qd + ad.transpose() * &ad / s2;
        let cov = qp.clone().try_inverse().unwrap();
        let mu = &cov * ad.transpose() * DVector::from_vec(y.clone()) / s2;
        let var = post.marginal_variances();
        for i in 0..n {
            assert!((post.mean[i] - mu[i]).abs() < 1e-8);
            assert!((var[i] - cov[(i, i)]).abs() < 1e-8);
        }
        // marginal likelihood against the dense Gaussian density
        let prior = factorize(&q).unwrap();
        let ll = log_marginal_likelihood(&prior, &post, &y, s2);
        let sigma = &ad * qd.try_inverse().unwrap() * ad.transpose() + DMatrix::identity(8, 8) * s2;
        let yv = DVector::from_vec(y.clone());
        let quad = (yv.transpose() * sigma.clone().try_inverse().unwrap() * &yv)[(0, 0)];
        let dense_ll = -0.5 * (8.0 * (2.0 * std::f64::consts::PI).ln() + sigma.determinant().ln() + quad);
        assert!((ll - dense_ll).abs() < 1e-8, "{ll} vs {dense_ll}");

        // no data: posterior is the prior
        let empty = Csr::zeros(0, n);
        let p0 = condition(&q, &empty, &[], s2).unwrap();
        assert!(p0.mean.iter().all(|&m| m == 0.0));
        assert_relative_eq!(p0.factor.log_det(), prior.log_det(), max_relative = 1e-14);
    }

    #[test]
    fn near_noiseless_interpolates() {
        let mesh = Mesh2D::structured(3, 3, [0.0, 1.0], [0.0, 1.0]).unwrap();
        let grid = TimeGrid::new(3, 1.0, 0.0).unwrap();
        let n = 16 * 3;
        let q = random_spd(n, 4, 0.05);
        let a = project(&mesh, &grid, &[([1.0 / 3.0, 2.0 / 3.0], 1.0)]).unwrap();
        let post = condition(&q, &a, &[1.7], 1e-10).unwrap();
        let fitted = a.matvec(&post.mean)[0];
        assert!((fitted - 1.7).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn conditioning_is_order_invariant(seed in 0u64..1000) {
            let n = 20;
            let q = random_spd(n, seed, 0.2);
            let mut rng = ChaCha20Rng::seed_from_u64(seed + 1);
            let rows: Vec<(usize, f64, f64)> = (0..6).map(|_| (rng.random_range(0..n), rng.random::<f64>(), rng.random::<f64>() - 0.5)).collect();
            let build = |order: &[usize]| {
                let t: Vec<_> = order.iter().enumerate().map(|(r, &k)| (r, rows[k].0, rows[k].1)).collect();
                let y: Vec<f64> = order.iter().map(|&k| rows[k].2).collect();
                (Csr::from_triplets(6, n, &t).unwrap(), y)
            };
            let (a1, y1) = build(&[0, 1, 2, 3, 4, 5]);
            let (a2, y2) = build(&[5, 3, 1, 0, 4, 2]);
            let m1 = condition(&q, &a1, &y1, 0.1).unwrap().mean;
            let m2 = condition(&q, &a2, &y2, 0.1).unwrap().mean;
            for i in 0..n {
                prop_assert!((m1[i] - m2[i]).abs() < 1e-12);
            }
        }
    }
}
