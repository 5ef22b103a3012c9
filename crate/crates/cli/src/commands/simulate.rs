//! One seeded draw of the discretised field.

use demf::fem::{FemMatrices, Mesh2D, TimeGrid};
use demf::gmrf::{space_time_precision, GmrfOptions};
use demf::params::Model;
use demf::solver::factorize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::io::{num, write_table, Metadata, Sink};

/// Coefficients ordered space-fastest, `values[j·N_s + i]`.
pub fn simulate(model: &Model, mesh: &Mesh2D, grid: &TimeGrid, seed: u64) -> Result<Vec<f64>> {
    let fem = FemMatrices::new(mesh, grid)?;
    let q = space_time_precision(model, &fem, &GmrfOptions::default())?;
    Ok(factorize(&q.matrix)?.sample(seed))
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let model = cfg.model()?;
    let mesh = cfg.mesh(model.interpretable()?.r_s)?;
    let grid = cfg.time_grid()?;
    let seed = cfg.seed();
    let values = simulate(&model, &mesh, &grid, seed)?;

    let mut meta = Metadata::default();
    meta.push("command", "simulate");
    meta.model("", &model)?;
    meta.push("seed", seed);
    meta.push("n_vertices", mesh.n_vertices());
    meta.push("n_t", grid.n_t);
    meta.push("h_t", grid.h);
    meta.push("t0", grid.t0);
    let ns = mesh.n_vertices();
    let rows = values.iter().enumerate().map(|(k, &v)| {
        let (i, j) = (k % ns, k / ns);
        let [x, y] = mesh.vertices()[i];
        [i.to_string(), j.to_string(), num(x), num(y), num(grid.time(j)), num(v)]
    });
    write_table(Sink::from_config(cfg.output.as_ref()).open()?, &meta, &["vertex", "time_index", "x", "y", "t", "value"], rows)
}
