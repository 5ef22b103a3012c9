//! Compressed sparse row matrices and the symmetric wrapper used for all
//! finite-element and precision matrices.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// CSR matrix with sorted, duplicate-free column indices in each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({i}, {j}) outside a {nrows}x{ncols} matrix"
                )));
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_unstable_by_key(|e| e.0);
            for &(j, v) in &row {
                if indices.len() > indptr[i] && *indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows, ncols, indptr, indices, values })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: d.to_vec() }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                indices[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, values }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] *= left[i] * right[self.indices[k]];
            }
        }
        out
    }

    /// `a * self + b * other`; the result pattern is the union of both.
    pub fn add_scaled(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {}x{} and {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        indptr.push(0);
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    indices.push(ja);
                    values.push(a * va[p] + b * vb[q]);
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    indices.push(ja);
                    values.push(a * va[p]);
                    p += 1;
                } else {
                    indices.push(jb);
                    values.push(b * vb[q]);
                    q += 1;
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows: self.nrows, ncols: self.ncols, indptr, indices, values })
    }

    /// Sparse product `self * other` (row-wise accumulation).
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.nrows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let n = other.ncols;
        let mut acc = vec![0.0; n];
        let mut marker = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            touched.clear();
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, &b) in cb.iter().zip(vb) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows: self.nrows, ncols: n, indptr, indices, values })
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (rb, cb) = (other.nrows, other.ncols);
        let mut indptr = Vec::with_capacity(self.nrows * rb + 1);
        let mut indices = Vec::with_capacity(self.nnz() * other.nnz());
        let mut values = Vec::with_capacity(self.nnz() * other.nnz());
        indptr.push(0);
        for ia in 0..self.nrows {
            let (ca, va) = self.row(ia);
            for ib in 0..rb {
                let (cbs, vbs) = other.row(ib);
                for (&ja, &a) in ca.iter().zip(va) {
                    for (&jb, &b) in cbs.iter().zip(vbs) {
                        indices.push(ja * cb + jb);
                        values.push(a * b);
                    }
                }
                indptr.push(indices.len());
            }
        }
        Self { nrows: self.nrows * rb, ncols: self.ncols * cb, indptr, indices, values }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        (0..self.nrows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    /// `selfᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec dimension mismatch");
        let mut out = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                out[j] += a * xi;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// Largest `|a_ij - a_ji|`, or `None` when the pattern is not symmetric.
    pub fn symmetry_defect(&self) -> Option<f64> {
        if self.nrows != self.ncols {
            return None;
        }
        let t = self.transpose();
        if t.indptr != self.indptr || t.indices != self.indices {
            return None;
        }
        Some(self.values.iter().zip(&t.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Symmetric sparse matrix. The full pattern is kept so that rows can be
/// read directly; the lower triangle is the canonical exported form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    inner: Csr,
}

impl SparseSymmetric {
    /// Wrap a matrix after checking structural and numerical symmetry.
    pub fn new(m: Csr) -> Result<Self> {
        let defect = m
            .symmetry_defect()
            .ok_or_else(|| Error::DimensionMismatch("matrix is not structurally symmetric".into()))?;
        let scale = m.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if defect > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::DimensionMismatch(format!("matrix is not symmetric (defect {defect:.3e})")));
        }
        if m.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
        }
        Ok(Self { inner: m.symmetrised() })
    }

    /// Build from the lower (or upper) triangle; the mirror half is filled in.
    pub fn from_lower_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut all = Vec::with_capacity(2 * triplets.len());
        for &(i, j, v) in triplets {
            all.push((i, j, v));
            if i != j {
                all.push((j, i, v));
            }
        }
        Self::new(Csr::from_triplets(n, n, &all)?)
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: Csr::identity(n) }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self { inner: Csr::from_diagonal(d) }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows
    }

    pub fn csr(&self) -> &Csr {
        &self.inner
    }

    pub fn into_csr(self) -> Csr {
        self.inner
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    /// Stored nonzeros of the full matrix.
    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn nnz_lower(&self) -> usize {
        (self.inner.nnz() + self.dim()) / 2
    }

    pub fn lower_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz_lower());
        for i in 0..self.dim() {
            let (c, v) = self.inner.row(i);
            for (&j, &a) in c.iter().zip(v) {
                if j > i {
                    break;
                }
                out.push((i, j, a));
            }
        }
        out
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { inner: self.inner.scale(alpha) }
    }

    pub fn add_scaled(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        Ok(Self { inner: self.inner.add_scaled(a, &other.inner, b)? })
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self { inner: self.inner.kron(&other.inner) }
    }

    /// `D self D` for a diagonal `D`.
    pub fn congruence_diagonal(&self, d: &[f64]) -> Self {
        Self { inner: self.inner.scale_rows_cols(d, d) }
    }

    /// `self D other` where the result is known to be symmetric
    /// (e.g. `K C⁻¹ K`).
    pub fn sandwich(&self, d: &[f64], other: &Self) -> Result<Self> {
        let left = self.inner.scale_rows_cols(&vec![1.0; self.dim()], d);
        Ok(Self { inner: left.matmul(&other.inner)?.symmetrised() })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.inner.matvec(x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.inner.to_dense()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.inner.diagonal()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.inner.row_sums()
    }

    /// Number of structural neighbours of vertex `i` (off-diagonal entries).
    pub fn neighbour_count(&self, i: usize) -> usize {
        let (c, _) = self.inner.row(i);
        c.iter().filter(|&&j| j != i).count()
    }

    /// Coordinate-format export with 1-based indices and a symmetric header.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        let lower = self.lower_triplets();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.dim(), self.dim(), lower.len())?;
        for (i, j, v) in lower {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

impl Csr {
    /// Average with the transpose so rounding asymmetry from products disappears.
    fn symmetrised(&self) -> Self {
        let t = self.transpose();
        match self.add_scaled(0.5, &t, 0.5) {
            Ok(m) => m,
            Err(_) => self.clone(),
        }
    }
}
