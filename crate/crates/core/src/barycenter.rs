//! Weighted discrete barycenters: `M` paths that all start at the same image
//! `u^lambda` and end at the inputs, minimizing `sum_m lambda_m E^K[path m]`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::fe::{Deformation, Grid, ImageField};
use crate::geodesic::{optimize_deformations, refine_in_time, solve_image_system, DiscretePath, ImageSystem, ModelParams, NcgOutcome};
use crate::linalg::{pcg, PcgStats};
use crate::oracles::DenseSystem;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct BarycenterProblem {
    inputs: Vec<ImageField>,
    weights: Vec<f64>,
    pub params: ModelParams,
    /// Project `u^lambda` onto nonnegative values after each image solve.
    pub clamp: bool,
}

impl BarycenterProblem {
    pub fn new(inputs: Vec<ImageField>, weights: Vec<f64>, params: ModelParams) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidParameter("a barycenter needs at least one input".into()));
        }
        if weights.len() != inputs.len() {
            return Err(Error::InvalidParameter(format!(
                "{} inputs but {} weights",
                inputs.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("weights must be nonnegative, got {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter(format!("weights must sum to 1, got {sum}")));
        }
        let grid = *inputs[0].grid();
        for u in &inputs {
            grid.ensure_same(u.grid())?;
        }
        params.validate()?;
        if params.k < 2 {
            return Err(Error::InvalidParameter("barycenter paths need K >= 2".into()));
        }
        Ok(Self { inputs, weights, params, clamp: false })
    }

    /// Rescales arbitrary nonnegative weights to sum 1.
    pub fn normalized(inputs: Vec<ImageField>, weights: &[f64], params: ModelParams) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidParameter("weights must have a positive sum".into()));
        }
        Self::new(inputs, weights.iter().map(|w| w / sum).collect(), params)
    }

    pub fn inputs(&self) -> &[ImageField] {
        &self.inputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &Grid {
        self.inputs[0].grid()
    }
}

/// Joint optimality system in `u^lambda` and the interior images of every
/// path with positive weight. Path rows are scaled by their weight, which
/// keeps the system symmetric.
pub struct BarycenterSystem {
    nd: usize,
    k: usize,
    active: Vec<usize>,
    lambdas: Vec<f64>,
    systems: Vec<ImageSystem>,
    mass_weight: f64,
    rhs: Vec<f64>,
    diag: Vec<f64>,
}

impl BarycenterSystem {
    pub fn assemble(deformations: &[Vec<Deformation>], problem: &BarycenterProblem) -> Result<Self> {
        let grid = *problem.grid();
        let nd = grid.num_dofs();
        let k = problem.params.k;
        if deformations.len() != problem.inputs.len() || deformations.iter().any(|d| d.len() != k) {
            return Err(Error::InvalidParameter("need K deformations for every input".into()));
        }
        let zero = ImageField::zeros(grid);
        let delta = problem.params.delta;
        let active: Vec<usize> = (0..problem.weights.len()).filter(|m| problem.weights[*m] > 0.0).collect();
        let systems: Vec<ImageSystem> = active
            .par_iter()
            .map(|&m| ImageSystem::assemble(&deformations[m], &zero, &problem.inputs[m], delta))
            .collect::<Result<_>>()?;
        let lambdas: Vec<f64> = active.iter().map(|m| problem.weights[*m]).collect();
        let mass_weight: f64 = lambdas.iter().sum();

        let mut rhs = vec![0.0; nd];
        let mut diag: Vec<f64> = systems[0].mass().diagonal().iter().map(|v| mass_weight * v).collect();
        for (sys, lam) in systems.iter().zip(&lambdas) {
            for (r, t) in rhs.iter_mut().zip(&sys.transport_vectors()[0]) {
                *r -= 0.5 * delta * lam * t;
            }
        }
        for (sys, lam) in systems.iter().zip(&lambdas) {
            rhs.extend(sys.rhs().iter().map(|v| lam * v));
            diag.extend(sys.diagonal().iter().map(|v| lam * v));
        }
        Ok(Self { nd, k, active, lambdas, systems, mass_weight, rhs, diag })
    }

    pub fn num_unknowns(&self) -> usize {
        self.rhs.len()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    fn block_len(&self) -> usize {
        (self.k - 1) * self.nd
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nd = self.nd;
        let bl = self.block_len();
        let (xu, xp) = x.split_at(nd);
        let (yu, yp) = y.split_at_mut(nd);
        self.systems[0].mass().matvec(xu, yu);
        yu.iter_mut().for_each(|v| *v *= self.mass_weight);
        yp.par_chunks_mut(bl).enumerate().for_each(|(i, out)| {
            let sys = &self.systems[i];
            let lam = self.lambdas[i];
            sys.apply(&xp[i * bl..(i + 1) * bl], out);
            out.iter_mut().for_each(|v| *v *= lam);
            sys.first_coupling().matvec_add(-lam, xu, &mut out[..nd]);
        });
        for (i, sys) in self.systems.iter().enumerate() {
            sys.first_coupling().matvec_transpose_add(-self.lambdas[i], &xp[i * bl..i * bl + nd], yu);
        }
    }

    pub fn to_dense(&self) -> Result<DenseSystem> {
        let nd = self.nd;
        let bl = self.block_len();
        let n = self.num_unknowns();
        let mut a = DMatrix::zeros(n, n);
        for r in 0..nd {
            for (c, v) in self.systems[0].mass().row(r) {
                a[(r, c)] += self.mass_weight * v;
            }
        }
        for (i, sys) in self.systems.iter().enumerate() {
            let lam = self.lambdas[i];
            let off = nd + i * bl;
            let block = sys.to_dense()?.matrix;
            for r in 0..bl {
                for c in 0..bl {
                    a[(off + r, off + c)] += lam * block[(r, c)];
                }
            }
            for r in 0..nd {
                for (c, v) in sys.first_coupling().row(r) {
                    a[(off + r, c)] -= lam * v;
                    a[(c, off + r)] -= lam * v;
                }
            }
        }
        DenseSystem::new(a, DVector::from_column_slice(&self.rhs))
    }

    /// Splits a solution into `u^lambda` and the interior images per active path.
    pub fn split(&self, x: &[f64], grid: Grid) -> Result<(ImageField, Vec<Vec<ImageField>>)> {
        let nd = self.nd;
        let u = ImageField::from_dofs(grid, &x[..nd])?;
        let paths = x[nd..]
            .chunks(self.block_len())
            .map(|c| c.chunks(nd).map(|d| ImageField::from_dofs(grid, d)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok((u, paths))
    }

    pub fn solve(&self, initial: Option<&[f64]>, rel_tol: f64, max_iters: usize) -> Result<(Vec<f64>, PcgStats)> {
        let mut x = match initial {
            Some(v) if v.len() == self.num_unknowns() => v.to_vec(),
            _ => vec![0.0; self.num_unknowns()],
        };
        let stats = pcg(|v, out| self.apply(v, out), &self.diag, &self.rhs, &mut x, rel_tol, max_iters)?;
        Ok((x, stats))
    }
}

/// Optimal `u^lambda` and interior images of all paths for frozen
/// deformations. Paths with zero weight do not influence `u^lambda`; their
/// images are solved afterwards between `u^lambda` and their input.
pub fn barycenter_system_solve(
    deformations: &[Vec<Deformation>],
    problem: &BarycenterProblem,
) -> Result<(ImageField, Vec<Vec<ImageField>>)> {
    let grid = *problem.grid();
    let sys = BarycenterSystem::assemble(deformations, problem)?;
    let tol = &problem.params.tolerances;
    let (x, _) = sys.solve(None, tol.pcg_rel_tol, tol.pcg_max_iters)?;
    let (u, active_images) = sys.split(&x, grid)?;
    finish_paths(u, active_images, &sys.active, deformations, problem)
}

fn finish_paths(
    u: ImageField,
    active_images: Vec<Vec<ImageField>>,
    active: &[usize],
    deformations: &[Vec<Deformation>],
    problem: &BarycenterProblem,
) -> Result<(ImageField, Vec<Vec<ImageField>>)> {
    let mut out: Vec<Option<Vec<ImageField>>> = vec![None; problem.inputs.len()];
    for (ims, &m) in active_images.into_iter().zip(active) {
        out[m] = Some(ims);
    }
    let out = out
        .into_iter()
        .enumerate()
        .map(|(m, ims)| match ims {
            Some(ims) => Ok(ims),
            None => solve_image_system(&deformations[m], &u, &problem.inputs[m], &problem.params, None),
        })
        .collect::<Result<_>>()?;
    Ok((u, out))
}

/// One outer sweep of [`barycenter_descent`].
#[derive(Clone, Debug, PartialEq)]
pub struct BarycenterSweep {
    pub k: usize,
    pub sweep: usize,
    pub energy_after_deformations: f64,
    pub energy: f64,
    /// `l2` change of `u^lambda` and all interior images.
    pub l2_delta: f64,
    pub ncg: Vec<Vec<NcgOutcome>>,
}

#[derive(Clone, Debug)]
pub struct BarycenterSolution {
    pub barycenter: ImageField,
    /// `paths[m]` runs from the barycenter to input `m`.
    pub paths: Vec<DiscretePath>,
    pub weighted_energy: f64,
    /// Per-input energy channels of each path.
    pub energies: Vec<EnergyBreakdown>,
    pub log: Vec<BarycenterSweep>,
    pub converged: bool,
    /// Some deformation solve hit its backtracking limit.
    pub stalled: bool,
}

fn weighted_energy(paths: &[DiscretePath], weights: &[f64], params: &ModelParams) -> Result<(f64, Vec<EnergyBreakdown>)> {
    let energies: Vec<EnergyBreakdown> = paths.iter().map(|p| p.energy(params)).collect::<Result<_>>()?;
    let total = energies.iter().zip(weights).map(|(e, w)| if *w > 0.0 { w * e.total } else { 0.0 }).sum();
    Ok((total, energies))
}

fn stacked_distance(a: &[DiscretePath], b: &[DiscretePath]) -> Result<f64> {
    let mut s = a[0].images()[0].l2_distance(&b[0].images()[0])?.powi(2);
    for (p, q) in a.iter().zip(b) {
        for (u, v) in p.interior_images().iter().zip(q.interior_images()) {
            s += u.l2_distance(v)?.powi(2);
        }
    }
    Ok(s.sqrt())
}

/// Coarse-to-fine time steps ending at `K`: halve while the result stays even
/// and at least 2.
pub fn default_k_cascade(k: usize) -> Vec<usize> {
    let mut ks = vec![k];
    let mut c = k;
    while c % 2 == 0 && c / 2 >= 2 {
        c /= 2;
        ks.push(c);
    }
    ks.reverse();
    ks
}

/// Alternating descent with the default time cascade.
pub fn barycenter_descent(problem: &BarycenterProblem) -> Result<BarycenterSolution> {
    barycenter_descent_with(problem, &default_k_cascade(problem.params.k))
}

/// Alternates the deformation updates of all `M * K` steps with the joint
/// image solve, for each `K` of `ks` (each dividing the next, ending at the
/// problem's `K`). Paths are carried between stages by time refinement.
pub fn barycenter_descent_with(problem: &BarycenterProblem, ks: &[usize]) -> Result<BarycenterSolution> {
    if ks.is_empty() || *ks.last().unwrap() != problem.params.k || ks[0] < 2 {
        return Err(Error::InvalidParameter(format!("invalid K cascade {ks:?}")));
    }
    if ks.windows(2).any(|w| w[1] % w[0] != 0) {
        return Err(Error::InvalidParameter(format!("each K must divide the next: {ks:?}")));
    }
    if problem.inputs.iter().any(|u| u.min() < 0.0) {
        return Err(Error::InvalidParameter("barycenter inputs must be nonnegative".into()));
    }
    let grid = *problem.grid();
    let weights = &problem.weights;
    let mut start = ImageField::zeros(grid);
    for (u, w) in problem.inputs.iter().zip(weights) {
        start = start.lerp(u, 1.0, *w)?;
    }
    let mut paths: Vec<DiscretePath> = problem
        .inputs
        .iter()
        .map(|u| DiscretePath::linear_blend(&start, u, ks[0]))
        .collect::<Result<_>>()?;
    let mut log = Vec::new();
    let mut converged = false;
    let mut stalled = false;
    for &k in ks {
        if paths[0].k() != k {
            paths = paths.iter().map(|p| refine_in_time(p, k)).collect::<Result<_>>()?;
        }
        let mut stage = problem.clone();
        stage.params = problem.params.with_k(k);
        let params = &stage.params;
        let (mut energy, _) = weighted_energy(&paths, weights, params)?;
        converged = false;
        for sweep in 1..=params.tolerances.outer_max_sweeps {
            let ncg: Vec<Vec<NcgOutcome>> = paths
                .par_iter_mut()
                .map(|p| optimize_deformations(p, params))
                .collect::<Result<_>>()?;
            stalled |= ncg.iter().flatten().any(|o| o.stalled);
            let (after_def, _) = weighted_energy(&paths, weights, params)?;
            debug_assert!(after_def <= energy * (1.0 + 1e-12) + 1e-300);

            let defs: Vec<Vec<Deformation>> = paths.iter().map(|p| p.deformations().to_vec()).collect();
            let (mut u, mut interiors) = barycenter_system_solve(&defs, &stage)?;
            if stage.clamp && u.min() < 0.0 {
                u = u.map(|v| v.max(0.0));
                interiors = defs
                    .iter()
                    .zip(&problem.inputs)
                    .map(|(d, target)| solve_image_system(d, &u, target, params, None))
                    .collect::<Result<_>>()?;
            }
            let mut candidate = paths.clone();
            for (p, ims) in candidate.iter_mut().zip(interiors) {
                p.set_first(u.clone());
                p.set_interior(ims);
            }
            let (after_img, _) = weighted_energy(&candidate, weights, params)?;
            let l2_delta = if after_img <= after_def {
                let d = stacked_distance(&candidate, &paths)?;
                paths = candidate;
                energy = after_img;
                d
            } else {
                energy = after_def;
                0.0
            };
            log.push(BarycenterSweep { k, sweep, energy_after_deformations: after_def, energy, l2_delta, ncg });
            if l2_delta < params.tolerances.outer_stall_tol {
                converged = true;
                break;
            }
        }
    }
    let (weighted, energies) = weighted_energy(&paths, weights, &problem.params)?;
    Ok(BarycenterSolution {
        barycenter: paths[0].images()[0].clone(),
        paths,
        weighted_energy: weighted,
        energies,
        log,
        converged,
        stalled,
    })
}

/// All weight triples on the lattice `{0, 1/n, ..., 1}` with unit sum.
pub fn triangle_weights(n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for i in (0..=n).rev() {
        for j in (0..=n - i).rev() {
            let l = n - i - j;
            out.push([i as f64 / n as f64, j as f64 / n as f64, l as f64 / n as f64]);
        }
    }
    out
}

/// Barycenters of three inputs for every weight triple of [`triangle_weights`].
pub fn triangle_sweep(
    inputs: &[ImageField; 3],
    params: &ModelParams,
    n: usize,
) -> Result<Vec<([f64; 3], BarycenterSolution)>> {
    triangle_weights(n)
        .into_iter()
        .map(|w| {
            let problem = BarycenterProblem::new(inputs.to_vec(), w.to_vec(), *params)?;
            Ok((w, barycenter_descent(&problem)?))
        })
        .collect()
}
