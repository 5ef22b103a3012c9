//! Piecewise-linear finite elements: a triangulated spatial mesh, a regular
//! time grid, and the mass/stiffness matrices on both.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::SparseSymmetric;

/// A 2-D triangulation with validated geometry.
#[derive(Debug, Clone)]
pub struct Mesh2D {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    locator: Locator,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh2D {
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh needs at least one vertex and one triangle".into()));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        let n = vertices.len();
        let (lo, hi) = bounding_box(&vertices);
        let diameter = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();

        let mut used = vec![false; n];
        let mut areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a vertex outside 0..{n}")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle { index: t, area: 0.0 });
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]).abs();
            if area <= 1e-14 * diameter * diameter {
                return Err(Error::DegenerateTriangle { index: t, area });
            }
            areas.push(area);
            tri.iter().for_each(|&v| used[v] = true);
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {v} belongs to no triangle")));
        }
        check_duplicates(&vertices, 1e-12 * diameter)?;
        check_edge_connected(&triangles)?;
        let locator = Locator::new(&vertices, &triangles);
        Ok(Self { vertices, triangles, areas, locator })
    }

    /// Regular `nx × ny` cell grid on a rectangle; each cell is split in two
    /// triangles with alternating diagonals.
    pub fn structured(nx: usize, ny: usize, x: [f64; 2], y: [f64; 2]) -> Result<Self> {
        if nx == 0 || ny == 0 || !(x[1] > x[0]) || !(y[1] > y[0]) {
            return Err(Error::InvalidMesh("structured mesh needs nx, ny ≥ 1 and a non-empty rectangle".into()));
        }
        let (hx, hy) = ((x[1] - x[0]) / nx as f64, (y[1] - y[0]) / ny as f64);
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let px = if i == nx { x[1] } else { x[0] + i as f64 * hx };
                let py = if j == ny { y[1] } else { y[0] + j as f64 * hy };
                vertices.push([px, py]);
            }
        }
        let v = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
            }
        }
        Self::new(vertices, triangles)
    }

    /// Structured mesh covering a region of interest `[x0,x1]×[y0,y1]` plus a
    /// margin on every side. Vertices fall on the region's boundary.
    pub fn structured_with_margin(roi: [f64; 4], spacing: f64, margin: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(margin >= 0.0) {
            return Err(Error::InvalidMesh("spacing must be positive and margin non-negative".into()));
        }
        let axis = |a: f64, b: f64| {
            let cells = ((b - a) / spacing).round().max(1.0) as usize;
            let h = (b - a) / cells as f64;
            let extra = (margin / h - 1e-9).ceil().max(0.0) as usize;
            (cells + 2 * extra, [a - extra as f64 * h, b + extra as f64 * h])
        };
        let (nx, xr) = axis(roi[0], roi[1]);
        let (ny, yr) = axis(roi[2], roi[3]);
        Self::structured(nx, ny, xr, yr)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        bounding_box(&self.vertices)
    }

    /// Vertex closest to `p`.
    pub fn nearest_vertex(&self, p: [f64; 2]) -> usize {
        let d = |v: &[f64; 2]| (v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2);
        (0..self.vertices.len())
            .min_by(|&a, &b| d(&self.vertices[a]).total_cmp(&d(&self.vertices[b])))
            .expect("mesh has vertices")
    }

    /// Triangle containing `p` and its barycentric coordinates.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        self.locator.locate(&self.vertices, &self.triangles, p)
    }

    /// Parse the plain-text format: vertex count, `x y` lines, triangle
    /// count, `i j k` lines (0-based). Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse { line: 0, message: format!("unexpected end of file, expected {what}") })
        };
        fn count(line: usize, s: &str) -> Result<usize> {
            s.parse().map_err(|_| Error::Parse { line, message: format!("expected a count, found {s:?}") })
        }
        fn numbers<T: std::str::FromStr>(line: usize, s: &str, n: usize) -> Result<Vec<T>> {
            let parts: Vec<&str> = s.split_whitespace().collect();
            if parts.len() != n {
                return Err(Error::Parse { line, message: format!("expected {n} fields, found {}", parts.len()) });
            }
            parts
                .iter()
                .map(|p| p.parse().map_err(|_| Error::Parse { line, message: format!("cannot parse {p:?}") }))
                .collect()
        }
        let (ln, s) = next("vertex count")?;
        let nv = count(ln, s)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, s) = next("vertex")?;
            let xy: Vec<f64> = numbers(ln, s, 2)?;
            vertices.push([xy[0], xy[1]]);
        }
        let (ln, s) = next("triangle count")?;
        let nt = count(ln, s)?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, s) = next("triangle")?;
            let ijk: Vec<usize> = numbers(ln, s, 3)?;
            triangles.push([ijk[0], ijk[1], ijk[2]]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::Parse { line: ln, message: "trailing content after the last triangle".into() });
        }
        Self::new(vertices, triangles)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        let _ = writeln!(s, "{}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}

fn bounding_box(vertices: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for v in vertices {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (lo, hi)
}

fn check_duplicates(vertices: &[[f64; 2]], tol: f64) -> Result<()> {
    let cell = tol.max(f64::MIN_POSITIVE) * 4.0;
    let key = |v: &[f64; 2]| ((v[0] / cell).floor() as i64, (v[1] / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, v) in vertices.iter().enumerate() {
        let (kx, ky) = key(v);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = buckets.get(&(kx + dx, ky + dy)) {
                    for &j in list {
                        let w = vertices[j];
                        if (w[0] - v[0]).abs() <= tol && (w[1] - v[1]).abs() <= tol {
                            return Err(Error::InvalidMesh(format!("vertices {j} and {i} coincide")));
                        }
                    }
                }
            }
        }
        buckets.entry((kx, ky)).or_default().push(i);
    }
    Ok(())
}

fn check_edge_connected(triangles: &[[usize; 3]]) -> Result<()> {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..triangles.len()).collect();
    let mut edges: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let e = (a.min(b), a.max(b));
            let entry = edges.entry(e).or_insert((t, 0));
            entry.1 += 1;
            if entry.1 > 2 {
                return Err(Error::InvalidMesh(format!("edge {}-{} is shared by more than two triangles", e.0, e.1)));
            }
            let (ra, rb) = (find(&mut parent, entry.0), find(&mut parent, t));
            parent[ra] = rb;
        }
    }
    let root = find(&mut parent, 0);
    if (0..triangles.len()).any(|t| find(&mut parent, t) != root) {
        return Err(Error::InvalidMesh("mesh is not edge-connected".into()));
    }
    Ok(())
}

/// Uniform bucket grid over triangle bounding boxes.
#[derive(Debug, Clone)]
struct Locator {
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(vertices: &[[f64; 2]], triangles: &[[usize; 3]]) -> Self {
        let (lo, hi) = bounding_box(vertices);
        let side = (triangles.len() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut buckets = vec![Vec::new(); side * side];
        let mut me = Self { origin: lo, cell, dims, buckets: Vec::new() };
        for (t, tri) in triangles.iter().enumerate() {
            let pts = tri.map(|v| vertices[v]);
            let (tlo, thi) = bounding_box(&pts);
            let (i0, j0) = me.cell_of(tlo);
            let (i1, j1) = me.cell_of(thi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * side + i].push(t);
                }
            }
        }
        me.buckets = buckets;
        me
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let f = |k: usize| (((p[k] - self.origin[k]) / self.cell[k]).floor().max(0.0) as usize).min(self.dims[k] - 1);
        (f(0), f(1))
    }

    fn locate(&self, vertices: &[[f64; 2]], triangles: &[[usize; 3]], p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let (i, j) = self.cell_of(p);
        let eps = 1e-10;
        for &t in &self.buckets[j * self.dims[0] + i] {
            let [a, b, c] = triangles[t].map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            let l0 = signed_area(p, b, c) / area;
            let l1 = signed_area(a, p, c) / area;
            let l2 = 1.0 - l0 - l1;
            if l0 >= -eps && l1 >= -eps && l2 >= -eps {
                let clamp = |x: f64| x.max(0.0);
                let (l0, l1, l2) = (clamp(l0), clamp(l1), clamp(l2));
                let s = l0 + l1 + l2;
                return Some((t, [l0 / s, l1 / s, l2 / s]));
            }
        }
        None
    }
}

/// Regular time grid `t_j = t0 + j h`, `j = 0..n_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub n_t: usize,
    pub h: f64,
    pub t0: f64,
}

impl TimeGrid {
    pub fn new(n_t: usize, h: f64, t0: f64) -> Result<Self> {
        if n_t < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 time points, got {n_t}")));
        }
        if !(h > 0.0 && h.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidGrid(format!("time step must be positive and finite, got {h}")));
        }
        Ok(Self { n_t, h, t0 })
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.h
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_t - 1)
    }

    /// Index of the knot at (or nearest to) `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        (((t - self.t0) / self.h).round().max(0.0) as usize).min(self.n_t - 1)
    }

    /// Interval `j` and weight `w` such that `t` sits at `(1-w) t_j + w t_{j+1}`.
    pub fn locate(&self, t: f64) -> Option<(usize, f64)> {
        let s = (t - self.t0) / self.h;
        let eps = 1e-10;
        if !(s >= -eps && s <= (self.n_t - 1) as f64 + eps) {
            return None;
        }
        let s = s.clamp(0.0, (self.n_t - 1) as f64);
        let j = (s.floor() as usize).min(self.n_t - 2);
        Some((j, s - j as f64))
    }

    /// `h κ ≤ 0.5` is the resolution the temporal discretisation is designed for.
    pub fn resolves(&self, kappa: f64) -> bool {
        self.h * kappa <= 0.5
    }
}

/// One element's local matrix on a triangle.
fn element_stiffness(p: [[f64; 2]; 3], area: f64) -> [[f64; 3]; 3] {
    let e = |i: usize| {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        [b[0] - a[0], b[1] - a[1]]
    };
    let edges = [e(0), e(1), e(2)];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (edges[i][0] * edges[j][0] + edges[i][1] * edges[j][1]) / (4.0 * area);
        }
    }
    k
}

fn assemble(mesh: &Mesh2D, local: impl Fn(usize) -> [[f64; 3]; 3] + Sync) -> SparseSymmetric {
    let triplets: Vec<(usize, usize, f64)> = (0..mesh.triangles.len())
        .into_par_iter()
        .flat_map_iter(|t| {
            let m = local(t);
            let tri = mesh.triangles[t];
            (0..9).map(move |k| (tri[k / 3], tri[k % 3], m[k / 3][k % 3]))
        })
        .collect();
    let n = mesh.n_vertices();
    let csr = crate::sparse::Csr::from_triplets(n, n, &triplets).expect("indices validated");
    SparseSymmetric::new(csr).expect("element matrices are symmetric")
}

/// Consistent mass matrix `C_ij = ⟨ψ_i, ψ_j⟩`.
pub fn assemble_mass(mesh: &Mesh2D) -> SparseSymmetric {
    assemble(mesh, |t| {
        let a = mesh.areas[t];
        let mut m = [[a / 12.0; 3]; 3];
        (0..3).for_each(|i| m[i][i] = a / 6.0);
        m
    })
}

/// Stiffness matrix `G_ij = ⟨∇ψ_i, ∇ψ_j⟩`.
pub fn assemble_stiffness(mesh: &Mesh2D) -> SparseSymmetric {
    assemble(mesh, |t| {
        let p = mesh.triangles[t].map(|v| mesh.vertices[v]);
        element_stiffness(p, mesh.areas[t])
    })
}

/// Diagonal matrix of the row sums of `c`.
pub fn lumped_mass(c: &SparseSymmetric) -> SparseSymmetric {
    SparseSymmetric::from_diagonal(&c.row_sums())
}

/// Temporal mass `M0`, boundary matrix `M1` and stiffness `M2`.
#[derive(Debug, Clone)]
pub struct TemporalMatrices {
    pub m0: SparseSymmetric,
    pub m1: SparseSymmetric,
    pub m2: SparseSymmetric,
}

pub fn temporal_matrices(grid: &TimeGrid) -> Result<TemporalMatrices> {
    let TimeGrid { n_t: n, h, .. } = *grid;
    if n < 3 {
        return Err(Error::InvalidGrid(format!("need at least 3 time points, got {n}")));
    }
    let band = |diag: f64, edge: f64, off: f64| {
        let mut t = Vec::with_capacity(2 * n);
        for i in 0..n {
            t.push((i, i, if i == 0 || i == n - 1 { edge } else { diag }));
            if i > 0 {
                t.push((i, i - 1, off));
            }
        }
        SparseSymmetric::from_lower_triplets(n, &t).expect("tridiagonal pattern")
    };
    let m0 = band(2.0 * h / 3.0, h / 3.0, h / 6.0);
    let m2 = band(2.0 / h, 1.0 / h, -1.0 / h);
    let m1 = SparseSymmetric::from_lower_triplets(n, &[(0, 0, 0.5), (n - 1, n - 1, 0.5)]).expect("diagonal");
    Ok(TemporalMatrices { m0, m1, m2 })
}

/// All finite-element matrices needed by the precision builders.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub c: SparseSymmetric,
    /// Diagonal of the lumped mass `C̃`.
    pub c_lumped: Vec<f64>,
    pub g: SparseSymmetric,
    pub temporal: TemporalMatrices,
    pub grid: TimeGrid,
}

impl FemMatrices {
    pub fn new(mesh: &Mesh2D, grid: &TimeGrid) -> Result<Self> {
        let c = assemble_mass(mesh);
        let c_lumped = c.row_sums();
        Ok(Self { g: assemble_stiffness(mesh), c, c_lumped, temporal: temporal_matrices(grid)?, grid: *grid })
    }

    /// Spatial-only matrices from explicit `C̃` and `G`, for tests and
    /// degenerate one-vertex "meshes".
    pub fn from_parts(c: SparseSymmetric, c_lumped: Vec<f64>, g: SparseSymmetric, grid: &TimeGrid) -> Result<Self> {
        if c.dim() != g.dim() || c_lumped.len() != g.dim() {
            return Err(Error::DimensionMismatch("C, C̃ and G must share a dimension".into()));
        }
        if c_lumped.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidParameter("lumped mass entries must be positive".into()));
        }
        Ok(Self { c, c_lumped, g, temporal: temporal_matrices(grid)?, grid: *grid })
    }

    pub fn n_space(&self) -> usize {
        self.g.dim()
    }

    pub fn n_time(&self) -> usize {
        self.grid.n_t
    }
}
