use super::descent::{alternating_descent, DescentResult, SweepRecord};
use super::{DiscretePath, ModelParams};
use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::fe::{prolongate, prolongate_deformation, restrict, Deformation, Grid, ImageField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub level: u32,
    pub k: usize,
    pub sweeps: usize,
}

/// Coarse-to-fine stages; levels and `K` never decrease and each `K`
/// divides the next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CascadicSchedule {
    stages: Vec<Stage>,
}

impl CascadicSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidParameter("empty cascadic schedule".into()));
        }
        for s in &stages {
            if s.k < 1 || s.sweeps < 1 {
                return Err(Error::InvalidParameter(format!("invalid stage {s:?}")));
            }
        }
        for w in stages.windows(2) {
            if w[1].level < w[0].level || w[1].k < w[0].k || w[1].k % w[0].k != 0 {
                return Err(Error::InvalidParameter(format!(
                    "stage {:?} cannot follow {:?}",
                    w[1], w[0]
                )));
            }
        }
        Ok(Self { stages })
    }

    /// `K = k0, 2 k0, 4 k0, ...` on a fixed level.
    pub fn doubling(level: u32, k0: usize, count: usize, sweeps: usize) -> Result<Self> {
        Self::new((0..count).map(|i| Stage { level, k: k0 << i, sweeps }).collect())
    }

    /// One stage per level from `coarse` to `fine` with a fixed `K`.
    pub fn levels(coarse: u32, fine: u32, k: usize, sweeps: usize) -> Result<Self> {
        Self::new((coarse..=fine).map(|level| Stage { level, k, sweeps }).collect())
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }
}

#[derive(Clone, Debug)]
pub struct StageLog {
    pub stage: Stage,
    pub initial_energy: EnergyBreakdown,
    pub final_energy: EnergyBreakdown,
    pub converged: bool,
    pub sweeps: Vec<SweepRecord>,
}

#[derive(Clone, Debug)]
pub struct CascadicResult {
    pub path: DiscretePath,
    pub stages: Vec<StageLog>,
}

/// Refines a path in time by the integer factor `k_new / K`: new images are
/// linear intensity interpolants of their neighbors and every deformation
/// restarts from the identity.
pub fn refine_in_time(path: &DiscretePath, k_new: usize) -> Result<DiscretePath> {
    let k = path.k();
    if k_new < k || k_new % k != 0 {
        return Err(Error::InvalidParameter(format!("cannot refine K = {k} to K = {k_new}")));
    }
    let r = k_new / k;
    let ims = path.images();
    let mut images = Vec::with_capacity(k_new + 1);
    for i in 0..k {
        images.push(ims[i].clone());
        for s in 1..r {
            let t = s as f64 / r as f64;
            images.push(ims[i].lerp(&ims[i + 1], 1.0 - t, t)?);
        }
    }
    images.push(ims[k].clone());
    if r == 1 {
        return DiscretePath::new(images, path.deformations().to_vec());
    }
    DiscretePath::new(images, vec![Deformation::identity(*path.grid()); k_new])
}

fn endpoint_at(u: &ImageField, level: u32) -> Result<ImageField> {
    let mut out = u.clone();
    while out.grid().level() > level {
        let coarse = out.grid().coarser()?;
        out = restrict(&out, &coarse)?;
    }
    Ok(out)
}

fn prolongate_path(path: &DiscretePath, level: u32, u_a: &ImageField, u_b: &ImageField) -> Result<DiscretePath> {
    let mut grid: Grid = *path.grid();
    let (mut images, mut defs) = path.clone().into_parts();
    while grid.level() < level {
        grid = grid.finer()?;
        images = images.iter().map(|u| prolongate(u, &grid)).collect::<Result<_>>()?;
        defs = defs.iter().map(|d| prolongate_deformation(d, &grid)).collect::<Result<_>>()?;
    }
    let k = defs.len();
    images[0] = u_a.clone();
    images[k] = u_b.clone();
    DiscretePath::new(images, defs)
}

/// Runs [`alternating_descent`] per stage, carrying the path to the next
/// stage by spatial prolongation and temporal refinement. Endpoints on
/// coarse levels are nodal restrictions of the fine inputs.
pub fn cascadic_solve(
    u_a: &ImageField,
    u_b: &ImageField,
    schedule: &CascadicSchedule,
    params: &ModelParams,
) -> Result<CascadicResult> {
    u_a.grid().ensure_same(u_b.grid())?;
    let finest = schedule.stages().last().expect("nonempty").level;
    if finest != u_a.grid().level() {
        return Err(Error::InvalidParameter(format!(
            "schedule ends on level {finest} but the inputs live on level {}",
            u_a.grid().level()
        )));
    }
    let mut path: Option<DiscretePath> = None;
    let mut logs = Vec::new();
    for stage in schedule.stages() {
        let a = endpoint_at(u_a, stage.level)?;
        let b = endpoint_at(u_b, stage.level)?;
        let init = match path.take() {
            None => None,
            Some(p) => {
                let p = refine_in_time(&p, stage.k)?;
                let mut p = prolongate_path(&p, stage.level, &a, &b)?;
                if !p.energy(&params.with_k(stage.k))?.is_finite() {
                    for d in p.deformations_mut() {
                        *d = Deformation::identity(*d.grid());
                    }
                }
                Some(p)
            }
        };
        let mut p = params.with_k(stage.k);
        p.tolerances.outer_max_sweeps = stage.sweeps;
        let DescentResult { path: out, initial_energy, log, converged } = alternating_descent(&a, &b, &p, init)?;
        logs.push(StageLog {
            stage: *stage,
            initial_energy,
            final_energy: out.energy(&p)?,
            converged,
            sweeps: log,
        });
        path = Some(out);
    }
    Ok(CascadicResult { path: path.expect("nonempty"), stages: logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::Boundary;

    #[test]
    fn schedules_are_validated() {
        let s = |level, k| Stage { level, k, sweeps: 1 };
        assert!(CascadicSchedule::new(vec![]).is_err());
        assert!(CascadicSchedule::new(vec![s(3, 2), s(2, 2)]).is_err());
        assert!(CascadicSchedule::new(vec![s(3, 4), s(3, 2)]).is_err());
        assert!(CascadicSchedule::new(vec![s(3, 2), s(3, 3)]).is_err());
        assert_eq!(CascadicSchedule::doubling(3, 2, 4, 5).unwrap().stages().last().unwrap().k, 16);
    }

    #[test]
    fn time_refinement_interpolates_images() {
        let g = Grid::new(2, Boundary::Periodic).unwrap();
        let a = ImageField::constant(g, 0.0);
        let b = ImageField::constant(g, 1.0);
        let p = DiscretePath::linear_blend(&a, &b, 2).unwrap();
        let q = refine_in_time(&p, 4).unwrap();
        for (i, u) in q.images().iter().enumerate() {
            assert!((u.values()[0] - i as f64 / 4.0).abs() < 1e-15);
        }
        assert!(q.deformations().iter().all(|d| d.is_identity()));
    }

    #[test]
    fn two_stage_run_descends() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let a = ImageField::from_fn(g, |x| 0.1 + (-((x[0] - 0.4).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp());
        let b = ImageField::from_fn(g, |x| 0.1 + (-((x[0] - 0.6).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp());
        let p = ModelParams::new(0.1, 0.01, 2, Boundary::DirichletIdentity).unwrap();
        let sched = CascadicSchedule::new(vec![
            Stage { level: 2, k: 2, sweeps: 3 },
            Stage { level: 3, k: 4, sweeps: 3 },
        ])
        .unwrap();
        let res = cascadic_solve(&a, &b, &sched, &p).unwrap();
        assert_eq!(res.path.k(), 4);
        for s in &res.stages {
            assert!(s.initial_energy.is_finite());
            assert!(s.final_energy.total <= s.initial_energy.total);
        }
    }
}
