use super::deformations::{optimize_deformations, NcgOutcome};
use super::images::solve_image_system;
use super::qp::pointwise_qp;
use super::{DiscretePath, ModelParams};
use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::fe::ImageField;

/// One outer sweep: deformation update followed by the image update.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    /// `l2` distance between consecutive interior image stacks.
    pub l2_delta: f64,
    /// Total energy after the deformation half-sweep.
    pub energy_after_deformations: f64,
    /// Energy after the full sweep.
    pub energy: EnergyBreakdown,
    pub ncg: Vec<NcgOutcome>,
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub path: DiscretePath,
    pub initial_energy: EnergyBreakdown,
    pub log: Vec<SweepRecord>,
    /// The image increment fell below `outer_stall_tol`.
    pub converged: bool,
}

/// Alternates deformation and image updates. With `nonnegative` the image
/// update uses the node-wise constrained QP instead of the linear system.
pub fn alternating_descent(
    u_a: &ImageField,
    u_b: &ImageField,
    params: &ModelParams,
    init: Option<DiscretePath>,
) -> Result<DescentResult> {
    run(u_a, u_b, params, init, false)
}

pub(crate) fn run(
    u_a: &ImageField,
    u_b: &ImageField,
    params: &ModelParams,
    init: Option<DiscretePath>,
    nonnegative: bool,
) -> Result<DescentResult> {
    params.validate()?;
    let mut path = match init {
        Some(p) => {
            if p.k() != params.k {
                return Err(Error::InvalidParameter(format!(
                    "initial path has K = {} but the parameters ask for K = {}",
                    p.k(),
                    params.k
                )));
            }
            if &p.images()[0] != u_a || &p.images()[p.k()] != u_b {
                return Err(Error::InvalidParameter("initial path endpoints differ from the inputs".into()));
            }
            p
        }
        None => DiscretePath::linear_blend(u_a, u_b, params.k)?,
    };
    let initial_energy = path.energy(params)?;
    if !initial_energy.is_finite() {
        return Err(Error::InfiniteEnergy);
    }
    let tol = params.tolerances;
    let mut log = Vec::new();
    let mut energy = initial_energy;
    let mut converged = false;
    for sweep in 1..=tol.outer_max_sweeps {
        let ncg = optimize_deformations(&mut path, params)?;
        let after_def = path.energy(params)?;
        debug_assert!(after_def.total <= energy.total);

        let interior = if nonnegative {
            pointwise_qp(u_a, u_b, path.deformations(), params)?
        } else {
            solve_image_system(path.deformations(), u_a, u_b, params, Some(path.interior_images()))?
        };
        let mut candidate = path.clone();
        candidate.set_interior(interior);
        let after_img = candidate.energy(params)?;
        let l2_delta;
        if after_img.total <= after_def.total {
            l2_delta = candidate.interior_l2_distance(&path)?;
            path = candidate;
            energy = after_img;
        } else {
            // rounding at the minimum; keep the current images
            l2_delta = 0.0;
            energy = after_def;
        }
        log.push(SweepRecord {
            sweep,
            l2_delta,
            energy_after_deformations: after_def.total,
            energy,
            ncg,
        });
        if l2_delta < tol.outer_stall_tol {
            converged = true;
            break;
        }
    }
    Ok(DescentResult { path, initial_energy, log, converged })
}

/// Alternating descent with the nonnegativity-constrained image update.
pub fn alternating_descent_nonnegative(
    u_a: &ImageField,
    u_b: &ImageField,
    params: &ModelParams,
    init: Option<DiscretePath>,
) -> Result<DescentResult> {
    run(u_a, u_b, params, init, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::{Boundary, Grid};

    #[test]
    fn equal_endpoints_converge_immediately() {
        let g = Grid::new(3, Boundary::Periodic).unwrap();
        let u = ImageField::from_fn(g, |x| 1.0 + 0.3 * (6.283185307179586 * x[0]).sin());
        let p = ModelParams::new(0.1, 0.1, 3, Boundary::Periodic).unwrap();
        let res = alternating_descent(&u, &u, &p, None).unwrap();
        assert!(res.converged);
        assert_eq!(res.log.len(), 1);
        assert!(res.log[0].energy.total < 1e-10);
    }

    #[test]
    fn energy_is_monotone_and_endpoints_pinned() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let a = ImageField::from_fn(g, |x| 0.1 + (-((x[0] - 0.4).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp());
        let b = ImageField::from_fn(g, |x| 0.1 + (-((x[0] - 0.6).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp());
        let mut p = ModelParams::new(0.1, 0.01, 2, Boundary::DirichletIdentity).unwrap();
        p.tolerances.outer_max_sweeps = 4;
        let res = alternating_descent(&a, &b, &p, None).unwrap();
        let mut prev = res.initial_energy.total;
        for r in &res.log {
            assert!(r.energy_after_deformations <= prev);
            assert!(r.energy.total <= r.energy_after_deformations);
            prev = r.energy.total;
        }
        assert_eq!(res.path.images()[0].values(), a.values());
        assert_eq!(res.path.images()[2].values(), b.values());
    }
}
