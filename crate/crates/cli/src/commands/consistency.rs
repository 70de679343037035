use anyhow::Result;
use imgtransport::fe::{Boundary, Grid};
use imgtransport::geodesic::{consistency_check, observed_order, LinearInTime, SmoothPath, TranslatingBump};

use crate::config::{ConsistencyCase, RunConfig};
use crate::output::{Cell, Csv, Staging};
use crate::row;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let case = cfg.case.unwrap_or(ConsistencyCase::Bump);
    let (path, boundary): (Box<dyn SmoothPath>, Boundary) = match case {
        ConsistencyCase::Bump => (Box::new(TranslatingBump::default()), Boundary::Periodic),
        ConsistencyCase::Linear => (Box::new(LinearInTime), Boundary::DirichletIdentity),
    };
    let grid = Grid::new(cfg.level.unwrap_or(6), boundary)?;
    let params = cfg.model_params(boundary)?;
    let ks = cfg.ks.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
    let stage = Staging::new(&cfg.out())?;
    let table = consistency_check(path.as_ref(), grid, &ks, cfg.reference_k.unwrap_or(128), &params)?;

    let errors: Vec<f64> = table.rows.iter().map(|r| r.error_vs_reference).collect();
    let orders = observed_order(&errors);
    let mut csv = Csv::new(&["k", "discrete_energy", "error", "error_vs_reference", "observed_order"]);
    for (i, r) in table.rows.iter().enumerate() {
        let order = if i == 0 { Cell::Empty } else { Cell::Float(orders[i - 1]) };
        csv.row(&[r.k.into(), r.discrete_energy.into(), r.error.into(), r.error_vs_reference.into(), order]);
    }
    stage.write("consistency.csv", &csv.into_string())?;
    let mut summary = Csv::new(&["continuous_energy", "reference_k", "reference_energy"]);
    summary.row(row![table.continuous_energy, table.reference_k, table.reference_energy]);
    stage.write("summary.csv", &summary.into_string())?;
    stage.commit(cfg)?;
    Ok(())
}
