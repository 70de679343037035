use anyhow::Result;
use imgtransport::bb::{bb_geodesic, SpaceTimeGrid};

use super::load_inputs;
use crate::config::RunConfig;
use crate::output::{frame_name, Csv, Staging};
use crate::row;

pub const DEFAULT_NT: usize = 60;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let paths = cfg.expect_inputs(2)?;
    let images = load_inputs(cfg, paths)?;
    let nt = cfg.nt.unwrap_or(DEFAULT_NT);
    let st = SpaceTimeGrid::new(*images[0].grid(), nt)?;
    let stage = Staging::new(&cfg.out())?;
    let res = bb_geodesic(
        &images[0],
        &images[1],
        st,
        cfg.r.unwrap_or(1.0),
        cfg.delta(),
        cfg.max_iters.unwrap_or(500),
        cfg.bb_tol.unwrap_or(1e-6),
    )?;

    let mut wanted: Vec<usize> = match &cfg.times {
        Some(ts) => ts.iter().map(|t| (t * nt as f64).round() as usize).collect(),
        None => (0..=nt).collect(),
    };
    wanted.sort_unstable();
    wanted.dedup();
    for n in wanted {
        stage.image(&frame_name("slice", n), &res.slices[n], cfg.display())?;
    }

    let mut log = Csv::new(&["iteration", "primal_residual", "transport", "source", "pcg_iterations"]);
    for r in &res.log {
        log.row(row![r.iteration, r.primal_residual, r.transport, r.source, r.pcg_iterations]);
    }
    stage.write("residuals.csv", &log.into_string())?;
    let mut summary = Csv::new(&["nt", "transport", "source", "distance", "iterations", "converged"]);
    summary.row(row![nt, res.transport, res.source, res.distance, res.log.len(), res.converged]);
    stage.write("summary.csv", &summary.into_string())?;
    stage.commit(cfg)?;
    Ok(())
}
