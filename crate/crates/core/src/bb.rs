//! Benamou-Brenier transport with a relaxed mass constraint, solved by the
//! augmented Lagrangian iteration ALG2 on a collocated space-time grid.
//!
//! Potentials `phi` live on the nodes `(t_n, x_i)`, `n = 0..N_t`. Every
//! interval `[t_n, t_{n+1}]` and spatial node carries four samples, one per
//! choice of forward/backward spatial difference in `x_1` and `x_2`. A
//! sample holds the space-time gradient `(a, b) = (d_t phi, D_x phi_bar)`
//! with `phi_bar` the mean of the two time levels, the relaxed variable `q`
//! and the multiplier `mu = (rho, m)`.
//!
//! The objective is `1/2 int |m|^2 / rho + 1/delta int z^2`; the source is
//! eliminated through `z = (delta/2) phi`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fe::{Boundary, Grid, ImageField};
use crate::linalg::{dot, pcg, PcgStats};

/// Densities at or below this value are treated as vacuum in the energy.
pub const VACUUM: f64 = 1e-12;
const ORIENTATIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    grid: Grid,
    nt: usize,
}

impl SpaceTimeGrid {
    pub fn new(grid: Grid, nt: usize) -> Result<Self> {
        if nt < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 time steps, got {nt}")));
        }
        Ok(Self { grid, nt })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.nt as f64
    }

    /// Spatial unknowns per time level; non-periodic grids use every node.
    pub fn nd(&self) -> usize {
        match self.grid.boundary() {
            Boundary::Periodic => self.grid.num_dofs(),
            Boundary::DirichletIdentity => self.grid.num_nodes(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        (self.nt + 1) * self.nd()
    }

    pub fn num_samples(&self) -> usize {
        self.nt * self.nd() * ORIENTATIONS
    }

    fn side(&self) -> usize {
        match self.grid.boundary() {
            Boundary::Periodic => self.grid.cells_per_side(),
            Boundary::DirichletIdentity => self.grid.nodes_per_side(),
        }
    }

    /// Spatial quadrature weight of a node (trapezoidal rule).
    fn spatial_weight(&self, i: usize, j: usize) -> f64 {
        let h2 = self.grid.cell_area();
        match self.grid.boundary() {
            Boundary::Periodic => h2,
            Boundary::DirichletIdentity => {
                let last = self.side() - 1;
                let f = |k: usize| if k == 0 || k == last { 0.5 } else { 1.0 };
                h2 * f(i) * f(j)
            }
        }
    }

    /// Neighbor in direction `axis` with offset `+1` or `-1`, if any.
    fn neighbor(&self, i: usize, j: usize, axis: usize, forward: bool) -> Option<(usize, usize)> {
        let s = self.side();
        let periodic = self.grid.is_periodic();
        let step = |k: usize| -> Option<usize> {
            if forward {
                if k + 1 < s {
                    Some(k + 1)
                } else if periodic {
                    Some(0)
                } else {
                    None
                }
            } else if k > 0 {
                Some(k - 1)
            } else if periodic {
                Some(s - 1)
            } else {
                None
            }
        };
        if axis == 0 {
            step(i).map(|ii| (ii, j))
        } else {
            step(j).map(|jj| (i, jj))
        }
    }

    /// Position of spatial unknown `idx`.
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let s = self.side();
        let h = self.grid.cell_width();
        [(idx % s) as f64 * h, (idx / s) as f64 * h]
    }

    fn image_to_nodal(&self, u: &ImageField) -> Result<Vec<f64>> {
        self.grid.ensure_same(u.grid())?;
        Ok(match self.grid.boundary() {
            Boundary::Periodic => u.to_dofs(),
            Boundary::DirichletIdentity => u.values().to_vec(),
        })
    }

    fn nodal_to_image(&self, v: &[f64]) -> Result<ImageField> {
        match self.grid.boundary() {
            Boundary::Periodic => ImageField::from_dofs(self.grid, v),
            Boundary::DirichletIdentity => ImageField::new(self.grid, v.to_vec()),
        }
    }
}

/// Space-time gradient `B`, its weighted adjoint and the screened operator
/// `A = r B^T W B + (delta/2) W_phi`.
pub struct SpaceTimeOperator {
    st: SpaceTimeGrid,
    r: f64,
    delta: f64,
    /// Spatial weights per node, sample weights are `tau * w / 4`.
    wx: Vec<f64>,
    /// Neighbor table `[x fwd, x bwd, y fwd, y bwd]` per spatial node.
    nbr: Vec<[Option<usize>; 4]>,
    diag: Vec<f64>,
}

impl SpaceTimeOperator {
    pub fn new(st: SpaceTimeGrid, r: f64, delta: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("r and delta must be positive, got {r}, {delta}")));
        }
        let s = st.side();
        let nd = st.nd();
        let mut wx = Vec::with_capacity(nd);
        let mut nbr = Vec::with_capacity(nd);
        for idx in 0..nd {
            let (i, j) = (idx % s, idx / s);
            wx.push(st.spatial_weight(i, j));
            let f = |axis, fwd| st.neighbor(i, j, axis, fwd).map(|(a, b)| b * s + a);
            nbr.push([f(0, true), f(0, false), f(1, true), f(1, false)]);
        }
        let mut op = Self { st, r, delta, wx, nbr, diag: Vec::new() };
        op.diag = op.compute_diagonal();
        Ok(op)
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.st
    }

    /// Weight of every sample.
    pub fn sample_weight(&self, sample: usize) -> f64 {
        let nd = self.st.nd();
        self.st.tau() * self.wx[(sample / ORIENTATIONS) % nd] / ORIENTATIONS as f64
    }

    /// Trapezoidal space-time weight of node `(n, idx)`.
    pub fn node_weight(&self, n: usize, idx: usize) -> f64 {
        let tau = self.st.tau();
        let wt = if n == 0 || n == self.st.nt { 0.5 * tau } else { tau };
        wt * self.wx[idx]
    }

    /// Spatial difference of `v` at node `idx` for orientation bit `back`
    /// along `axis`; zero where the stencil leaves a non-periodic grid.
    #[inline]
    fn diff(&self, v: &[f64], idx: usize, axis: usize, back: bool) -> f64 {
        let inv_h = 1.0 / self.st.grid.cell_width();
        let slot = 2 * axis + back as usize;
        match self.nbr[idx][slot] {
            None => 0.0,
            Some(o) if back => (v[idx] - v[o]) * inv_h,
            Some(o) => (v[o] - v[idx]) * inv_h,
        }
    }

    /// `B phi`: time differences and spatial differences of the time mean.
    pub fn gradient(&self, phi: &[f64], a: &mut [f64], b: &mut [[f64; 2]]) {
        let nd = self.st.nd();
        let tau = self.st.tau();
        a.par_chunks_mut(nd * ORIENTATIONS)
            .zip(b.par_chunks_mut(nd * ORIENTATIONS))
            .enumerate()
            .for_each(|(n, (a_n, b_n))| {
                let p0 = &phi[n * nd..(n + 1) * nd];
                let p1 = &phi[(n + 1) * nd..(n + 2) * nd];
                let mean: Vec<f64> = p0.iter().zip(p1).map(|(x, y)| 0.5 * (x + y)).collect();
                for idx in 0..nd {
                    let dt = (p1[idx] - p0[idx]) / tau;
                    for o in 0..ORIENTATIONS {
                        let s = idx * ORIENTATIONS + o;
                        a_n[s] = dt;
                        b_n[s] = [self.diff(&mean, idx, 0, o & 1 == 1), self.diff(&mean, idx, 1, o & 2 == 2)];
                    }
                }
            });
    }

    /// `B^T W (a, b)`, the weighted adjoint of [`Self::gradient`].
    pub fn divergence(&self, a: &[f64], b: &[[f64; 2]], out: &mut [f64]) {
        let nd = self.st.nd();
        let nt = self.st.nt;
        let tau = self.st.tau();
        let inv_h = 1.0 / self.st.grid.cell_width();
        // per interval: contribution to the mean (shared by both levels) and
        // to the time difference (opposite signs)
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..nt)
            .into_par_iter()
            .map(|n| {
                let mut dt_part = vec![0.0; nd];
                let mut mean_part = vec![0.0; nd];
                for idx in 0..nd {
                    let w = tau * self.wx[idx] / ORIENTATIONS as f64;
                    for o in 0..ORIENTATIONS {
                        let s = (n * nd + idx) * ORIENTATIONS + o;
                        dt_part[idx] += w * a[s] / tau;
                        for axis in 0..2 {
                            let back = if axis == 0 { o & 1 == 1 } else { o & 2 == 2 };
                            let slot = 2 * axis + back as usize;
                            if let Some(other) = self.nbr[idx][slot] {
                                let g = w * b[s][axis] * inv_h;
                                if back {
                                    mean_part[idx] += g;
                                    mean_part[other] -= g;
                                } else {
                                    mean_part[other] += g;
                                    mean_part[idx] -= g;
                                }
                            }
                        }
                    }
                }
                (dt_part, mean_part)
            })
            .collect();
        out.par_chunks_mut(nd).enumerate().for_each(|(n, o)| {
            o.iter_mut().for_each(|v| *v = 0.0);
            if n > 0 {
                let (dt, mean) = &parts[n - 1];
                for k in 0..nd {
                    o[k] += dt[k] + 0.5 * mean[k];
                }
            }
            if n < nt {
                let (dt, mean) = &parts[n];
                for k in 0..nd {
                    o[k] += -dt[k] + 0.5 * mean[k];
                }
            }
        });
    }

    /// `A phi`, with `B^T W B` fused per time interval.
    pub fn apply(&self, phi: &[f64], out: &mut [f64]) {
        let nd = self.st.nd();
        let nt = self.st.nt;
        let tau = self.st.tau();
        let inv_h = 1.0 / self.st.grid.cell_width();
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..nt)
            .into_par_iter()
            .map(|n| {
                let p0 = &phi[n * nd..(n + 1) * nd];
                let p1 = &phi[(n + 1) * nd..(n + 2) * nd];
                let mean: Vec<f64> = p0.iter().zip(p1).map(|(x, y)| 0.5 * (x + y)).collect();
                let dt_part: Vec<f64> = (0..nd).map(|k| self.wx[k] * (p1[k] - p0[k]) / tau).collect();
                let mut mean_part = vec![0.0; nd];
                for idx in 0..nd {
                    // two of the four samples use each one-sided difference
                    let w = 0.5 * tau * self.wx[idx] * inv_h;
                    for nb in self.nbr[idx] {
                        if let Some(o) = nb {
                            let g = w * (mean[o] - mean[idx]) * inv_h;
                            mean_part[o] += g;
                            mean_part[idx] -= g;
                        }
                    }
                }
                (dt_part, mean_part)
            })
            .collect();
        let half_delta = 0.5 * self.delta;
        out.par_chunks_mut(nd).enumerate().for_each(|(n, o)| {
            for k in 0..nd {
                let mut v = 0.0;
                if n > 0 {
                    v += parts[n - 1].0[k] + 0.5 * parts[n - 1].1[k];
                }
                if n < nt {
                    v += -parts[n].0[k] + 0.5 * parts[n].1[k];
                }
                o[k] = self.r * v + half_delta * self.node_weight(n, k) * phi[n * nd + k];
            }
        });
    }

    fn compute_diagonal(&self) -> Vec<f64> {
        let nd = self.st.nd();
        let nt = self.st.nt;
        let tau = self.st.tau();
        let inv_h2 = 1.0 / self.st.grid.cell_area();
        let mut diag = vec![0.0; self.st.num_nodes()];
        for n in 0..=nt {
            let intervals = (n > 0) as usize + (n < nt) as usize;
            for idx in 0..nd {
                // time differences: every sample of an adjacent interval
                let mut d = intervals as f64 * self.wx[idx] / tau;
                // spatial differences of the mean carry 1/(2h); each existing
                // link is seen by two own samples and two of the neighbor's
                let links: f64 = self.nbr[idx].iter().flatten().map(|o| self.wx[idx] + self.wx[*o]).sum();
                d += intervals as f64 * tau * inv_h2 * links / 8.0;
                diag[n * nd + idx] = self.r * d + 0.5 * self.delta * self.node_weight(n, idx);
            }
        }
        diag
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Solves `A phi = rhs` by Jacobi-preconditioned CG from the incoming `phi`.
    pub fn solve(&self, rhs: &[f64], phi: &mut [f64], rel_tol: f64, max_iters: usize) -> Result<PcgStats> {
        pcg(|x, y| self.apply(x, y), &self.diag, rhs, phi, rel_tol, max_iters)
    }
}

/// Euclidean projection onto `K = {(a, b) : a + |b|^2 / 2 <= 0}`.
pub fn project_paraboloid(a: f64, b: [f64; 2]) -> (f64, [f64; 2]) {
    let b2 = b[0] * b[0] + b[1] * b[1];
    if a + 0.5 * b2 <= 0.0 {
        return (a, b);
    }
    // a' = a - s, b' = b / (1 + s) with f(s) = a - s + |b|^2 / (2 (1+s)^2) = 0
    // f is convex and decreasing, so Newton from s = 0 increases monotonically
    let f = |s: f64| a - s + 0.5 * b2 / ((1.0 + s) * (1.0 + s));
    let df = |s: f64| -1.0 - b2 / ((1.0 + s) * (1.0 + s) * (1.0 + s));
    let mut s = 0.0f64;
    for _ in 0..100 {
        let step = -f(s) / df(s);
        if !(step > 0.0) {
            break;
        }
        s += step;
        if step <= 1e-16 * (1.0 + s) {
            break;
        }
    }
    (a - s, [b[0] / (1.0 + s), b[1] / (1.0 + s)])
}

/// ALG2 iterate: potentials on nodes, relaxed gradients and multipliers on samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeState {
    pub phi: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
    pub m: Vec<[f64; 2]>,
    pub r: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alg2Record {
    pub iteration: usize,
    /// `|B phi - q|` in the weighted sample norm.
    pub primal_residual: f64,
    pub transport: f64,
    pub source: f64,
    pub pcg_iterations: usize,
}

/// Endpoint data and operator of one relaxed transport problem.
pub struct Alg2Problem {
    op: SpaceTimeOperator,
    u_a: Vec<f64>,
    u_b: Vec<f64>,
    pub pcg_rel_tol: f64,
    pub pcg_max_iters: usize,
}

impl Alg2Problem {
    pub fn new(u_a: &ImageField, u_b: &ImageField, st: SpaceTimeGrid, r: f64, delta: f64) -> Result<Self> {
        u_a.grid().ensure_same(u_b.grid())?;
        Ok(Self {
            op: SpaceTimeOperator::new(st, r, delta)?,
            u_a: st.image_to_nodal(u_a)?,
            u_b: st.image_to_nodal(u_b)?,
            pcg_rel_tol: 1e-6,
            pcg_max_iters: 5000,
        })
    }

    pub fn operator(&self) -> &SpaceTimeOperator {
        &self.op
    }

    /// `phi = 0`, `q = 0`, `rho` the linear intensity blend and `m = 0`.
    pub fn initial_state(&self) -> SpaceTimeState {
        let st = &self.op.st;
        let nd = st.nd();
        let ns = st.num_samples();
        let mut rho = vec![0.0; ns];
        for (s, r) in rho.iter_mut().enumerate() {
            let idx = (s / ORIENTATIONS) % nd;
            let n = s / (ORIENTATIONS * nd);
            let t = (n as f64 + 0.5) * st.tau();
            *r = (1.0 - t) * self.u_a[idx] + t * self.u_b[idx];
        }
        SpaceTimeState {
            phi: vec![0.0; st.num_nodes()],
            a: vec![0.0; ns],
            b: vec![[0.0; 2]; ns],
            rho,
            m: vec![[0.0; 2]; ns],
            r: self.op.r,
            delta: self.op.delta,
        }
    }

    /// Right-hand side of the potential step:
    /// `g - B^T W mu + r B^T W q`, with `g` the endpoint densities on the
    /// first and last time levels.
    fn potential_rhs(&self, state: &SpaceTimeState) -> Vec<f64> {
        let ns = self.op.st.num_samples();
        let r = self.op.r;
        let mut ca = vec![0.0; ns];
        let mut cb = vec![[0.0; 2]; ns];
        ca.par_iter_mut()
            .zip(cb.par_iter_mut())
            .enumerate()
            .for_each(|(s, (x, y))| {
                *x = r * state.a[s] - state.rho[s];
                *y = [r * state.b[s][0] - state.m[s][0], r * state.b[s][1] - state.m[s][1]];
            });
        let mut rhs = vec![0.0; self.op.st.num_nodes()];
        self.op.divergence(&ca, &cb, &mut rhs);
        let nd = self.op.st.nd();
        let last = self.op.st.nt * nd;
        for idx in 0..nd {
            rhs[idx] -= self.op.wx[idx] * self.u_a[idx];
            rhs[last + idx] += self.op.wx[idx] * self.u_b[idx];
        }
        rhs
    }

    /// One sweep: potential solve, projection onto `K`, dual ascent.
    pub fn iterate(&self, state: &mut SpaceTimeState, iteration: usize) -> Result<Alg2Record> {
        let rhs = self.potential_rhs(state);
        let stats = self.op.solve(&rhs, &mut state.phi, self.pcg_rel_tol, self.pcg_max_iters)?;
        let ns = self.op.st.num_samples();
        let mut ga = vec![0.0; ns];
        let mut gb = vec![[0.0; 2]; ns];
        self.op.gradient(&state.phi, &mut ga, &mut gb);
        let r = self.op.r;
        let residual2: f64 = state
            .a
            .par_iter_mut()
            .zip(state.b.par_iter_mut())
            .zip(state.rho.par_iter_mut().zip(state.m.par_iter_mut()))
            .enumerate()
            .map(|(s, ((qa, qb), (rho, m)))| {
                let (pa, pb) = project_paraboloid(ga[s] + *rho / r, [gb[s][0] + m[0] / r, gb[s][1] + m[1] / r]);
                *qa = pa;
                *qb = pb;
                let da = ga[s] - pa;
                let db = [gb[s][0] - pb[0], gb[s][1] - pb[1]];
                *rho += r * da;
                m[0] += r * db[0];
                m[1] += r * db[1];
                self.op.sample_weight(s) * (da * da + db[0] * db[0] + db[1] * db[1])
            })
            .sum();
        let (transport, source) = self.energy(state);
        Ok(Alg2Record {
            iteration,
            primal_residual: residual2.sqrt(),
            transport,
            source,
            pcg_iterations: stats.iterations,
        })
    }

    /// `(int |m|^2 / rho, 2/delta int z^2)` with `z = (delta/2) phi`; samples
    /// with `rho <= VACUUM` contribute nothing to the transport.
    pub fn energy(&self, state: &SpaceTimeState) -> (f64, f64) {
        let transport: f64 = (0..state.rho.len())
            .into_par_iter()
            .map(|s| {
                let rho = state.rho[s];
                if rho <= VACUUM {
                    0.0
                } else {
                    let m = state.m[s];
                    self.op.sample_weight(s) * (m[0] * m[0] + m[1] * m[1]) / rho
                }
            })
            .sum();
        let nd = self.op.st.nd();
        let half = 0.5 * self.op.delta;
        let source: f64 = state
            .phi
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let z = half * p;
                self.op.node_weight(k / nd, k % nd) * z * z
            })
            .sum::<f64>()
            * 2.0
            / self.op.delta;
        (transport, source)
    }

    /// Density per time level: endpoints are the inputs, interior levels
    /// average the samples of both adjacent intervals.
    pub fn slices(&self, state: &SpaceTimeState) -> Result<Vec<ImageField>> {
        let st = &self.op.st;
        let nd = st.nd();
        let mut out = Vec::with_capacity(st.nt + 1);
        out.push(st.nodal_to_image(&self.u_a)?);
        for n in 1..st.nt {
            let vals: Vec<f64> = (0..nd)
                .map(|idx| {
                    let mut s = 0.0;
                    for k in [n - 1, n] {
                        for o in 0..ORIENTATIONS {
                            s += state.rho[(k * nd + idx) * ORIENTATIONS + o];
                        }
                    }
                    s / (2 * ORIENTATIONS) as f64
                })
                .collect();
            out.push(st.nodal_to_image(&vals)?);
        }
        out.push(st.nodal_to_image(&self.u_b)?);
        Ok(out)
    }
}

/// Solves the screened space-time problem of the potential step for a given
/// nodal source `rhs` (integrated against the trapezoidal weights), endpoint
/// data and current `(q, mu)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_spacetime_elliptic(
    st: SpaceTimeGrid,
    rhs: &[f64],
    r: f64,
    delta: f64,
    u_a: &ImageField,
    u_b: &ImageField,
    state: &SpaceTimeState,
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let problem = Alg2Problem::new(u_a, u_b, st, r, delta)?;
    if rhs.len() != st.num_nodes() {
        return Err(Error::GridMismatch(format!("expected {} nodal values, got {}", st.num_nodes(), rhs.len())));
    }
    let mut b = problem.potential_rhs(state);
    let nd = st.nd();
    for (k, v) in b.iter_mut().enumerate() {
        *v += problem.op.node_weight(k / nd, k % nd) * rhs[k];
    }
    let mut phi = state.phi.clone();
    problem.op.solve(&b, &mut phi, rel_tol, 20 * st.num_nodes().max(100))?;
    Ok(phi)
}

#[derive(Clone, Debug)]
pub struct BbResult {
    pub slices: Vec<ImageField>,
    /// `int |m|^2 / rho`.
    pub transport: f64,
    /// `2/delta int z^2`.
    pub source: f64,
    /// `transport + source`, the squared distance estimate.
    pub distance: f64,
    pub log: Vec<Alg2Record>,
    pub converged: bool,
    pub state: SpaceTimeState,
}

/// Runs ALG2 until the primal residual drops below `tol` or `max_iters`.
pub fn bb_geodesic(
    u_a: &ImageField,
    u_b: &ImageField,
    st: SpaceTimeGrid,
    r: f64,
    delta: f64,
    max_iters: usize,
    tol: f64,
) -> Result<BbResult> {
    if u_a.min() < 0.0 || u_b.min() < 0.0 {
        return Err(Error::InvalidParameter("endpoint densities must be nonnegative".into()));
    }
    let problem = Alg2Problem::new(u_a, u_b, st, r, delta)?;
    let mut state = problem.initial_state();
    let mut log = Vec::new();
    let mut converged = false;
    for it in 1..=max_iters {
        let rec = problem.iterate(&mut state, it)?;
        log.push(rec);
        if rec.primal_residual < tol {
            converged = true;
            break;
        }
    }
    let (transport, source) = problem.energy(&state);
    Ok(BbResult {
        slices: problem.slices(&state)?,
        transport,
        source,
        distance: transport + source,
        log,
        converged,
        state,
    })
}

/// `<x, y>` helper for symmetry checks.
pub fn weighted_dot(x: &[f64], y: &[f64]) -> f64 {
    dot(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_paraboloid(-1.0, [0.0, 0.0]), (-1.0, [0.0, 0.0]));
        let (a, b) = project_paraboloid(1.0, [0.0, 0.0]);
        assert!(a.abs() < 1e-15 && b == [0.0, 0.0]);
        let (a, b) = project_paraboloid(0.0, [2.0, 0.0]);
        let beta = b[0];
        assert!((beta.powi(3) + 2.0 * beta - 4.0).abs() < 1e-12);
        assert!((beta - 1.179_509_0).abs() < 1e-6);
        assert!((a + 0.5 * beta * beta).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent() {
        for k in 0..50 {
            let t = k as f64 * 0.37;
            let p = project_paraboloid(t.sin() * 3.0, [t.cos() * 2.0, (2.0 * t).sin()]);
            let q = project_paraboloid(p.0, p.1);
            assert!((p.0 - q.0).abs() < 1e-12 && (p.1[0] - q.1[0]).abs() < 1e-12 && (p.1[1] - q.1[1]).abs() < 1e-12, "{k}: {p:?} {q:?}");
        }
    }

    fn operator(boundary: Boundary) -> SpaceTimeOperator {
        let st = SpaceTimeGrid::new(Grid::new(2, boundary).unwrap(), 3).unwrap();
        SpaceTimeOperator::new(st, 1.3, 0.7).unwrap()
    }

    #[test]
    fn divergence_is_weighted_adjoint_and_operator_symmetric() {
        for boundary in [Boundary::Periodic, Boundary::DirichletIdentity] {
            let op = operator(boundary);
            let nn = op.st.num_nodes();
            let ns = op.st.num_samples();
            let x: Vec<f64> = (0..nn).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
            let y: Vec<f64> = (0..nn).map(|k| ((k * 104729) % 17) as f64 - 8.0).collect();
            let qa: Vec<f64> = (0..ns).map(|k| ((k * 31) % 7) as f64 - 3.0).collect();
            let qb: Vec<[f64; 2]> = (0..ns).map(|k| [((k * 17) % 5) as f64 - 2.0, ((k * 13) % 11) as f64 - 5.0]).collect();
            let mut ga = vec![0.0; ns];
            let mut gb = vec![[0.0; 2]; ns];
            op.gradient(&x, &mut ga, &mut gb);
            let lhs: f64 = (0..ns)
                .map(|s| op.sample_weight(s) * (ga[s] * qa[s] + gb[s][0] * qb[s][0] + gb[s][1] * qb[s][1]))
                .sum();
            let mut div = vec![0.0; nn];
            op.divergence(&qa, &qb, &mut div);
            let rhs = dot(&x, &div);
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");

            let mut ax = vec![0.0; nn];
            let mut ay = vec![0.0; nn];
            op.apply(&x, &mut ax);
            op.apply(&y, &mut ay);
            assert!((dot(&ax, &y) - dot(&x, &ay)).abs() < 1e-12 * dot(&ax, &y).abs().max(1.0));
            assert!(dot(&ax, &x) > 0.0);
        }
    }

    #[test]
    fn diagonal_matches_operator() {
        for boundary in [Boundary::Periodic, Boundary::DirichletIdentity] {
            let op = operator(boundary);
            let nn = op.st.num_nodes();
            for k in 0..nn {
                let mut e = vec![0.0; nn];
                e[k] = 1.0;
                let mut ae = vec![0.0; nn];
                op.apply(&e, &mut ae);
                assert!((ae[k] - op.diagonal()[k]).abs() < 1e-10 * ae[k], "{boundary:?} {k}: {} vs {}", ae[k], op.diagonal()[k]);
            }
        }
    }

    #[test]
    fn projection_is_optimal() {
        let inside = [(-1.0, [0.5, 0.3]), (-0.2, [0.0, 0.6]), (-3.0, [2.0, -1.0]), (0.0, [0.0, 0.0])];
        for k in 0..20 {
            let t = k as f64 * 0.71;
            let x = (1.5 * t.cos(), [2.0 * t.sin(), (3.0 * t).cos()]);
            let p = project_paraboloid(x.0, x.1);
            for y in inside {
                let v = (x.0 - p.0) * (y.0 - p.0) + (x.1[0] - p.1[0]) * (y.1[0] - p.1[0]) + (x.1[1] - p.1[1]) * (y.1[1] - p.1[1]);
                assert!(v <= 1e-12, "{x:?} -> {p:?}: {v}");
            }
        }
    }

    fn zero_state(st: SpaceTimeGrid) -> SpaceTimeState {
        let ns = st.num_samples();
        SpaceTimeState {
            phi: vec![0.0; st.num_nodes()],
            a: vec![0.0; ns],
            b: vec![[0.0; 2]; ns],
            rho: vec![0.0; ns],
            m: vec![[0.0; 2]; ns],
            r: 1.0,
            delta: 1.0,
        }
    }

    #[test]
    fn constant_source_gives_constant_potential() {
        for boundary in [Boundary::Periodic, Boundary::DirichletIdentity] {
            let g = Grid::new(3, boundary).unwrap();
            let st = SpaceTimeGrid::new(g, 6).unwrap();
            let zero = ImageField::constant(g, 0.0);
            let (c, delta) = (0.7, 0.4);
            let rhs = vec![c; st.num_nodes()];
            let phi = solve_spacetime_elliptic(st, &rhs, 1.0, delta, &zero, &zero, &zero_state(st), 1e-12).unwrap();
            assert!(phi.iter().all(|p| (p - 2.0 * c / delta).abs() < 1e-9));
        }
    }

    #[test]
    fn manufactured_solution_converges_second_order() {
        use std::f64::consts::PI;
        let (r, delta) = (1.0, 2.0);
        let exact = |t: f64, x: [f64; 2]| (PI * t).cos() * (2.0 * PI * x[0]).cos();
        let mut errors = Vec::new();
        for level in 3..=5 {
            let g = Grid::new(level, Boundary::Periodic).unwrap();
            let st = SpaceTimeGrid::new(g, 1 << level).unwrap();
            let nd = st.nd();
            let zero = ImageField::constant(g, 0.0);
            let rhs: Vec<f64> = (0..st.num_nodes())
                .map(|k| {
                    let t = (k / nd) as f64 * st.tau();
                    (r * 5.0 * PI * PI + 0.5 * delta) * exact(t, st.position(k % nd))
                })
                .collect();
            let phi = solve_spacetime_elliptic(st, &rhs, r, delta, &zero, &zero, &zero_state(st), 1e-12).unwrap();
            let op = SpaceTimeOperator::new(st, r, delta).unwrap();
            let err2: f64 = phi
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let t = (k / nd) as f64 * st.tau();
                    op.node_weight(k / nd, k % nd) * (p - exact(t, st.position(k % nd))).powi(2)
                })
                .sum();
            errors.push(err2.sqrt());
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.8, "{errors:?}");
        }
    }

    fn bump(g: Grid, cx: f64) -> ImageField {
        ImageField::from_fn(g, |x| {
            let wrap = |d: f64| d - d.round();
            let (dx, dy) = (wrap(x[0] - cx), wrap(x[1] - 0.5));
            (-(dx * dx + dy * dy) / (2.0 * 0.08 * 0.08)).exp()
        })
    }

    #[test]
    fn equal_endpoints_have_zero_distance() {
        let g = Grid::new(4, Boundary::Periodic).unwrap();
        let u = ImageField::from_fn(g, |x| 0.5 + bump(g, 0.5).eval(x).unwrap());
        let st = SpaceTimeGrid::new(g, 8).unwrap();
        let res = bb_geodesic(&u, &u, st, 1.0, 1.0, 500, 1e-10).unwrap();
        assert!(res.transport < 1e-6, "{}", res.transport);
        assert!(res.distance < 1e-4);
    }

    #[test]
    fn translated_bump_distance_and_residual_trend() {
        let g = Grid::new(4, Boundary::Periodic).unwrap();
        let (a, b) = (bump(g, 0.4), bump(g, 0.6));
        let st = SpaceTimeGrid::new(g, 16).unwrap();
        let res = bb_geodesic(&a, &b, st, 1.0, 1e-3, 400, 1e-12).unwrap();
        let expected = a.integral() * 0.2 * 0.2;
        assert!((res.distance - expected).abs() < 0.05 * expected, "{} vs {expected}", res.distance);
        let log = &res.log;
        assert!(log[199].primal_residual < log[19].primal_residual);
    }
}
