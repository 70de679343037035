use rayon::prelude::*;

use super::{DiscretePath, ModelParams, Tolerances};
use crate::energy::MatchingFunctional;
use crate::error::{Error, Result};
use crate::fe::Deformation;
use crate::linalg::{axpy, dot, norm};

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NcgOutcome {
    pub iterations: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub grad_norm: f64,
    /// The line search failed along steepest descent before the gradient
    /// tolerance was met.
    pub stalled: bool,
}

/// Nonlinear conjugate gradients (Polak-Ribiere+, Armijo backtracking) on
/// the free displacement components. Trial steps with infinite energy are
/// rejected, so the iterate stays orientation preserving and the energy
/// never increases.
pub fn minimize_matching(f: &MatchingFunctional, phi: &mut Deformation, tol: &Tolerances) -> Result<NcgOutcome> {
    let (e0, mut g) = f.energy_and_gradient(phi)?;
    let mut e = e0.total;
    let mut x = phi.free_values();
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut trial = phi.clone();
    let h = phi.grid().cell_width();
    let mut alpha_prev: Option<f64> = None;
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < tol.ncg_max_iters {
        let gn = norm(&g);
        if gn < tol.ncg_grad_tol {
            break;
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut steepest = d.iter().zip(&g).all(|(a, b)| *a == -*b);
        let accepted = loop {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // never move a node by more than one cell per step
            let cap = h / dmax;
            let mut alpha = alpha_prev.map_or(0.25 * cap, |a| (2.0 * a).min(cap));
            let mut found = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut xt = x.clone();
                axpy(alpha, &d, &mut xt);
                trial.set_free_values(&xt);
                let et = f.energy(&trial)?;
                if et.is_finite() && et.total <= e + ARMIJO_C1 * alpha * slope {
                    found = Some((alpha, xt, et.total));
                    break;
                }
                alpha *= BACKTRACK;
            }
            if found.is_some() || steepest {
                break found;
            }
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
            steepest = true;
        };
        let Some((alpha, xt, et)) = accepted else {
            stalled = true;
            break;
        };
        iterations += 1;
        alpha_prev = Some(alpha);
        phi.set_free_values(&xt);
        x = xt;
        let (_, g_new) = f.energy_and_gradient(phi)?;
        let gg = dot(&g, &g);
        let beta = if gg > 0.0 {
            (g_new.iter().zip(&g).map(|(a, b)| a * (a - b)).sum::<f64>() / gg).max(0.0)
        } else {
            0.0
        };
        for (di, gi) in d.iter_mut().zip(&g_new) {
            *di = -gi + beta * *di;
        }
        g = g_new;
        let decrease = e - et;
        e = et;
        if decrease <= 1e-15 * e.abs().max(1e-300) {
            break;
        }
    }
    Ok(NcgOutcome {
        iterations,
        energy_before: e0.total,
        energy_after: e,
        grad_norm: norm(&g),
        stalled,
    })
}

/// Minimizes every matching functional `F[U_{k-1}, U_k, .]` of the path
/// over its deformation. The `K` problems are independent.
pub fn optimize_deformations(path: &mut DiscretePath, params: &ModelParams) -> Result<Vec<NcgOutcome>> {
    let images = path.images().to_vec();
    let tol = params.tolerances;
    let run = |(k, phi): (usize, &mut Deformation)| -> Result<NcgOutcome> {
        let f = MatchingFunctional::new(&images[k], &images[k + 1], params.delta, params.gamma, params.elastic)?;
        match minimize_matching(&f, phi, &tol) {
            Err(Error::InfiniteEnergy) => {
                let det = (0..phi.grid().num_cells())
                    .map(|c| {
                        let (ci, cj) = phi.grid().cell_coords(c);
                        crate::fe::det2(&phi.jacobian_in_cell(ci, cj, 0.5, 0.5))
                    })
                    .fold(f64::INFINITY, f64::min);
                Err(Error::NotDiffeomorphic { det })
            }
            other => other,
        }
    };
    if params.parallel {
        path.deformations_mut().par_iter_mut().enumerate().map(run).collect()
    } else {
        path.deformations_mut().iter_mut().enumerate().map(run).collect()
    }
}
