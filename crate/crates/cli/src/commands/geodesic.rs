use anyhow::{bail, Result};
use imgtransport::energy::EnergyBreakdown;
use imgtransport::geodesic::{
    alternating_descent, alternating_descent_nonnegative, cascadic_solve, CascadicSchedule, DiscretePath, SweepRecord,
};

use super::load_inputs;
use crate::config::{Display, RunConfig};
use crate::output::{frame_name, Csv, Staging};
use crate::row;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let paths = cfg.expect_inputs(2)?;
    let images = load_inputs(cfg, paths)?;
    let (u_a, u_b) = (&images[0], &images[1]);
    let params = cfg.model_params(cfg.boundary())?;
    let fine = u_a.grid().level();
    let levels = cfg.levels();
    let min_level = if u_a.grid().is_periodic() { 1 } else { 0 };
    if levels > 1 && fine + 1 < min_level + levels {
        bail!("{levels} cascade levels do not fit below level {fine}");
    }
    if levels > 1 && cfg.nonnegative() {
        bail!("nonnegative runs are single-level; drop --levels or --nonnegative");
    }
    let stage = Staging::new(&cfg.out())?;

    let (path, sweeps) = if levels > 1 {
        let schedule = CascadicSchedule::levels(fine + 1 - levels, fine, params.k, params.tolerances.outer_max_sweeps)?;
        let res = cascadic_solve(u_a, u_b, &schedule, &params)?;
        let sweeps: Vec<SweepRecord> = res.stages.into_iter().flat_map(|s| s.sweeps).collect();
        (res.path, sweeps)
    } else {
        let res = if cfg.nonnegative() {
            alternating_descent_nonnegative(u_a, u_b, &params, None)?
        } else {
            alternating_descent(u_a, u_b, &params, None)?
        };
        (res.path, res.log)
    };

    write_frames(&stage, "", &path, cfg.display())?;
    stage.write("energy_report.csv", &energy_report(&path, &params)?)?;
    let mut conv = Csv::new(&["sweep", "l2_delta", "energy_total"]);
    for (i, s) in sweeps.iter().enumerate() {
        conv.row(row![i + 1, s.l2_delta, s.energy.total]);
    }
    stage.write("convergence.csv", &conv.into_string())?;
    if cfg.emit_source() {
        for (k, z) in path.source_images()?.iter().enumerate() {
            stage.image(&frame_name("source", k + 1), z, Display::Rescale)?;
        }
    }
    stage.commit(cfg)?;
    Ok(())
}

/// `frame_000.png ... frame_K.png`, optionally inside `dir`.
pub(crate) fn write_frames(stage: &Staging, dir: &str, path: &DiscretePath, display: Display) -> Result<()> {
    let base = if dir.is_empty() { stage.path().to_path_buf() } else { stage.subdir(dir)? };
    for (i, u) in path.images().iter().enumerate() {
        crate::io::save_image(u, &base.join(frame_name("frame", i)), display)?;
    }
    Ok(())
}

/// Per-step channels and the aggregate `K * sum` row.
pub(crate) fn energy_report(path: &DiscretePath, params: &imgtransport::geodesic::ModelParams) -> Result<String> {
    let steps = path.step_energies(params)?;
    let mut csv = Csv::new(&["k", "transport", "source", "viscous", "total"]);
    for (k, e) in steps.iter().enumerate() {
        csv.row(row![k + 1, e.transport, e.source, e.viscous, e.total]);
    }
    let agg = EnergyBreakdown::sum(&steps).scaled(path.k() as f64);
    csv.row(row!["aggregate", agg.transport, agg.source, agg.viscous, agg.total]);
    Ok(csv.into_string())
}
