use anyhow::{bail, Result};
use imgtransport::barycenter::{barycenter_descent, triangle_weights, BarycenterProblem, BarycenterSolution};
use imgtransport::fe::ImageField;
use imgtransport::geodesic::ModelParams;

use super::geodesic::write_frames;
use super::load_inputs;
use crate::config::RunConfig;
use crate::output::{Csv, Staging};
use crate::row;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let paths = cfg.inputs();
    if paths.is_empty() {
        bail!("barycenter needs at least one input image");
    }
    let weights = cfg.weights(paths.len())?;
    let params = cfg.model_params(cfg.boundary())?;
    if params.k < 2 {
        bail!("barycenter paths need K >= 2");
    }
    if cfg.levels() > 1 {
        bail!("barycenters run on the input grid only; drop --levels");
    }
    if cfg.triangle.is_some() && paths.len() != 3 {
        bail!("the weight triangle needs exactly three inputs, got {}", paths.len());
    }
    let inputs = load_inputs(cfg, paths)?;
    let stage = Staging::new(&cfg.out())?;

    let sol = solve(&inputs, &weights, params, cfg.nonnegative())?;
    stage.image("barycenter.png", &sol.barycenter, cfg.display())?;
    for (m, path) in sol.paths.iter().enumerate() {
        write_frames(&stage, &format!("path_{m:02}"), path, cfg.display())?;
    }
    let mut csv = Csv::new(&["input", "weight", "transport", "source", "viscous", "total"]);
    for (m, (e, w)) in sol.energies.iter().zip(&weights).enumerate() {
        csv.row(row![m, *w, e.transport, e.source, e.viscous, e.total]);
    }
    stage.write("energies.csv", &csv.into_string())?;
    let mut conv = Csv::new(&["sweep", "k", "l2_delta", "energy_total"]);
    for (i, s) in sol.log.iter().enumerate() {
        conv.row(row![i + 1, s.k, s.l2_delta, s.energy]);
    }
    stage.write("convergence.csv", &conv.into_string())?;
    stage.write("summary.csv", &{
        let mut c = Csv::new(&["weighted_energy", "converged"]);
        c.row(row![sol.weighted_energy, sol.converged]);
        c.into_string()
    })?;

    if let Some(n) = cfg.triangle {
        let dir = stage.subdir("triangle")?;
        let mut csv = Csv::new(&["index", "lambda_0", "lambda_1", "lambda_2", "weighted_energy"]);
        for (i, w) in triangle_weights(n).into_iter().enumerate() {
            let s = solve(&inputs, &w, params, cfg.nonnegative())?;
            crate::io::save_image(&s.barycenter, &dir.join(format!("barycenter_{i:03}.png")), cfg.display())?;
            csv.row(row![i, w[0], w[1], w[2], s.weighted_energy]);
        }
        stage.write("triangle.csv", &csv.into_string())?;
    }
    stage.commit(cfg)?;
    Ok(())
}

fn solve(inputs: &[ImageField], weights: &[f64], params: ModelParams, clamp: bool) -> Result<BarycenterSolution> {
    let mut problem = BarycenterProblem::new(inputs.to_vec(), weights.to_vec(), params)?;
    problem.clamp = clamp;
    Ok(barycenter_descent(&problem)?)
}
