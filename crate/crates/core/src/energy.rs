//! Pairwise matching functional: transport, source and viscous costs of
//! matching an image `u` to its successor `u_next` through a deformation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fe::{det2, CellQuadrature, Deformation, Grid, ImageField, POINTS_PER_CELL};

/// Determinants at or below this value count as orientation reversing.
pub const DET_FLOOR: f64 = 1e-12;

/// Lame-type parameters of the stored energy density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticParams {
    pub lambda: f64,
    pub mu: f64,
}

impl ElasticParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "elastic parameters must be positive (lambda = {lambda}, mu = {mu})"
            )));
        }
        Ok(Self { lambda, mu })
    }
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            mu: 1.0,
        }
    }
}

/// Energy split into its three channels. `infinite` marks the barrier state
/// (some Jacobian determinant is not positive); all values are then `+inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub transport: f64,
    pub source: f64,
    pub viscous: f64,
    pub total: f64,
    pub infinite: bool,
}

impl EnergyBreakdown {
    pub fn new(transport: f64, source: f64, viscous: f64) -> Self {
        if !viscous.is_finite() || !transport.is_finite() || !source.is_finite() {
            return Self::infinite();
        }
        Self {
            transport,
            source,
            viscous,
            total: transport + source + viscous,
            infinite: false,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn infinite() -> Self {
        Self {
            transport: f64::INFINITY,
            source: f64::INFINITY,
            viscous: f64::INFINITY,
            total: f64::INFINITY,
            infinite: true,
        }
    }

    pub fn is_finite(&self) -> bool {
        !self.infinite
    }

    pub fn scaled(&self, factor: f64) -> Self {
        if self.infinite {
            return *self;
        }
        Self::new(
            self.transport * factor,
            self.source * factor,
            self.viscous * factor,
        )
    }

    /// Channel-wise sum.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a EnergyBreakdown>) -> Self {
        let mut t = 0.0;
        let mut s = 0.0;
        let mut v = 0.0;
        for p in parts {
            if p.infinite {
                return Self::infinite();
            }
            t += p.transport;
            s += p.source;
            v += p.viscous;
        }
        Self::new(t, s, v)
    }
}

/// `W(F) = mu/2 |F|^2 + lambda/4 det(F)^2 - (mu + lambda/2) log det(F) - mu - lambda/4`,
/// or `+inf` when `det F <= DET_FLOOR`.
pub fn hyperelastic_density(f: &[[f64; 2]; 2], params: &ElasticParams) -> f64 {
    let det = det2(f);
    if det <= DET_FLOOR {
        return f64::INFINITY;
    }
    let ElasticParams { lambda, mu } = *params;
    let frob = f[0][0] * f[0][0] + f[0][1] * f[0][1] + f[1][0] * f[1][0] + f[1][1] * f[1][1];
    0.5 * mu * frob + 0.25 * lambda * det * det - (mu + 0.5 * lambda) * det.ln() - mu - 0.25 * lambda
}

/// First derivative `DW(F)`; `None` on the barrier.
pub fn hyperelastic_stress(f: &[[f64; 2]; 2], params: &ElasticParams) -> Option<[[f64; 2]; 2]> {
    let det = det2(f);
    if det <= DET_FLOOR {
        return None;
    }
    let ElasticParams { lambda, mu } = *params;
    let cof = cofactor(f);
    let c = 0.5 * lambda * det - (mu + 0.5 * lambda) / det;
    Some([
        [mu * f[0][0] + c * cof[0][0], mu * f[0][1] + c * cof[0][1]],
        [mu * f[1][0] + c * cof[1][0], mu * f[1][1] + c * cof[1][1]],
    ])
}

/// Derivative of `det F` with respect to the entries of `F`.
#[inline]
fn cofactor(f: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[f[1][1], -f[1][0]], [-f[0][1], f[0][0]]]
}

/// Which channels a kernel evaluation should produce.
#[derive(Clone, Copy)]
struct Channels {
    transport: bool,
    source: bool,
    viscous: bool,
}

const ALL: Channels = Channels {
    transport: true,
    source: true,
    viscous: true,
};

/// Outcome of the per-cell kernel.
enum CellResult {
    Finite([f64; 3], [[f64; 2]; 4]),
    Barrier,
}

/// The matching functional for a fixed pair of images, evaluated with
/// 3x3 Simpson quadrature on every cell.
pub struct MatchingFunctional<'a> {
    u: &'a ImageField,
    u_next: &'a ImageField,
    delta: f64,
    gamma: f64,
    elastic: ElasticParams,
    grid: Grid,
    quad: CellQuadrature,
    node_to_free: Vec<Option<usize>>,
    num_free: usize,
}

impl<'a> MatchingFunctional<'a> {
    pub fn new(
        u: &'a ImageField,
        u_next: &'a ImageField,
        delta: f64,
        gamma: f64,
        elastic: ElasticParams,
    ) -> Result<Self> {
        u.grid().ensure_same(u_next.grid())?;
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be nonnegative, got {gamma}")));
        }
        let grid = *u.grid();
        let free = Deformation::free_nodes(&grid);
        let mut node_to_free = vec![None; grid.num_nodes()];
        for (k, node) in free.iter().enumerate() {
            node_to_free[*node] = Some(k);
        }
        if grid.is_periodic() {
            let c = grid.cells_per_side();
            for node in 0..grid.num_nodes() {
                let (i, j) = grid.node_coords(node);
                node_to_free[node] = node_to_free[grid.node(i % c, j % c)];
            }
        }
        Ok(Self {
            u,
            u_next,
            delta,
            gamma,
            elastic,
            grid,
            quad: CellQuadrature::new(&grid),
            node_to_free,
            num_free: free.len(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of scalar unknowns in the gradient (two per free node).
    pub fn num_unknowns(&self) -> usize {
        2 * self.num_free
    }

    fn cell(&self, phi: &Deformation, cell: usize, which: Channels, with_grad: bool) -> CellResult {
        let (ci, cj) = self.grid.cell_coords(cell);
        let disp = phi.cell_displacements(ci, cj);
        let uc = self.u.cell_values(ci, cj);
        let mut acc = [0.0; 3];
        let mut grad = [[0.0; 2]; 4];
        for q in 0..POINTS_PER_CELL {
            let w = self.quad.weights[q];
            let n = &self.quad.shape[q];
            let g = &self.quad.shape_grad[q];
            let mut d = [0.0; 2];
            let mut f = [[1.0, 0.0], [0.0, 1.0]];
            let mut uq = 0.0;
            for a in 0..4 {
                d[0] += n[a] * disp[a][0];
                d[1] += n[a] * disp[a][1];
                uq += n[a] * uc[a];
                for c in 0..2 {
                    f[c][0] += disp[a][c] * g[a][0];
                    f[c][1] += disp[a][c] * g[a][1];
                }
            }
            let det = det2(&f);
            if det <= DET_FLOOR {
                return CellResult::Barrier;
            }
            if which.transport {
                let d2 = d[0] * d[0] + d[1] * d[1];
                acc[0] += w * d2 * uq;
                if with_grad {
                    for a in 0..4 {
                        let s = 2.0 * w * uq * n[a];
                        grad[a][0] += s * d[0];
                        grad[a][1] += s * d[1];
                    }
                }
            }
            if which.source {
                let x = self.quad.point(ci, cj, q);
                let y = [x[0] + d[0], x[1] + d[1]];
                let cp = match self.grid.locate(y) {
                    Ok(cp) => cp,
                    Err(_) => return CellResult::Barrier,
                };
                let (vy, gv) = self.u_next.eval_located_with_grad(&cp);
                let r = det * vy - uq;
                acc[1] += w * r * r / self.delta;
                if with_grad {
                    let cof = cofactor(&f);
                    let s = 2.0 * w * r / self.delta;
                    for a in 0..4 {
                        for c in 0..2 {
                            let ddet = cof[c][0] * g[a][0] + cof[c][1] * g[a][1];
                            grad[a][c] += s * (vy * ddet + det * gv[c] * n[a]);
                        }
                    }
                }
            }
            if which.viscous && self.gamma > 0.0 {
                acc[2] += self.gamma * w * hyperelastic_density(&f, &self.elastic);
                if with_grad {
                    let dw = hyperelastic_stress(&f, &self.elastic).expect("det checked above");
                    let s = self.gamma * w;
                    for a in 0..4 {
                        for c in 0..2 {
                            grad[a][c] += s * (dw[c][0] * g[a][0] + dw[c][1] * g[a][1]);
                        }
                    }
                }
            }
        }
        CellResult::Finite(acc, grad)
    }

    fn run(&self, phi: &Deformation, which: Channels, with_grad: bool) -> Result<(EnergyBreakdown, Option<Vec<f64>>)> {
        self.grid.ensure_same(phi.grid())?;
        let cells: Vec<CellResult> = (0..self.grid.num_cells())
            .into_par_iter()
            .map(|c| self.cell(phi, c, which, with_grad))
            .collect();
        let mut acc = [0.0; 3];
        let mut grad = if with_grad { Some(vec![0.0; self.num_unknowns()]) } else { None };
        for (c, res) in cells.iter().enumerate() {
            match res {
                CellResult::Barrier => return Ok((EnergyBreakdown::infinite(), None)),
                CellResult::Finite(e, g) => {
                    acc[0] += e[0];
                    acc[1] += e[1];
                    acc[2] += e[2];
                    if let Some(out) = grad.as_mut() {
                        let (ci, cj) = self.grid.cell_coords(c);
                        for (a, node) in self.grid.cell_nodes(ci, cj).iter().enumerate() {
                            if let Some(k) = self.node_to_free[*node] {
                                out[2 * k] += g[a][0];
                                out[2 * k + 1] += g[a][1];
                            }
                        }
                    }
                }
            }
        }
        Ok((EnergyBreakdown::new(acc[0], acc[1], acc[2]), grad))
    }

    pub fn energy(&self, phi: &Deformation) -> Result<EnergyBreakdown> {
        Ok(self.run(phi, ALL, false)?.0)
    }

    /// Energy and its exact gradient with respect to the free displacement
    /// components, ordered like [`Deformation::free_values`].
    pub fn energy_and_gradient(&self, phi: &Deformation) -> Result<(EnergyBreakdown, Vec<f64>)> {
        match self.run(phi, ALL, true)? {
            (e, Some(g)) => Ok((e, g)),
            _ => Err(Error::InfiniteEnergy),
        }
    }
}

/// `int |phi - id|^2 u dx`
pub fn transport_cost(u: &ImageField, phi: &Deformation) -> Result<f64> {
    let f = MatchingFunctional::new(u, u, 1.0, 0.0, ElasticParams::default())?;
    let which = Channels {
        transport: true,
        source: false,
        viscous: false,
    };
    Ok(f.run(phi, which, false)?.0.transport)
}

/// `(1/delta) int |det(D phi) u_next o phi - u|^2 dx`
pub fn source_cost(u: &ImageField, u_next: &ImageField, phi: &Deformation, delta: f64) -> Result<f64> {
    let f = MatchingFunctional::new(u, u_next, delta, 0.0, ElasticParams::default())?;
    let which = Channels {
        transport: false,
        source: true,
        viscous: false,
    };
    Ok(f.run(phi, which, false)?.0.source)
}

/// `gamma int W(D phi) dx`, `+inf` when the deformation folds and `gamma > 0`.
pub fn viscous_cost(phi: &Deformation, gamma: f64, params: &ElasticParams) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let zero = ImageField::zeros(*phi.grid());
    let f = MatchingFunctional::new(&zero, &zero, 1.0, gamma, *params)?;
    let which = Channels {
        transport: false,
        source: false,
        viscous: true,
    };
    Ok(f.run(phi, which, false)?.0.viscous)
}

pub fn matching_energy(
    u: &ImageField,
    u_next: &ImageField,
    phi: &Deformation,
    delta: f64,
    gamma: f64,
    params: &ElasticParams,
) -> Result<EnergyBreakdown> {
    MatchingFunctional::new(u, u_next, delta, gamma, *params)?.energy(phi)
}

/// Gradient of [`matching_energy`] with respect to the free displacement
/// components (see [`Deformation::free_values`] for the layout).
pub fn matching_gradient_deformation(
    u: &ImageField,
    u_next: &ImageField,
    phi: &Deformation,
    delta: f64,
    gamma: f64,
    params: &ElasticParams,
) -> Result<Vec<f64>> {
    Ok(MatchingFunctional::new(u, u_next, delta, gamma, *params)?
        .energy_and_gradient(phi)?
        .1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::Boundary;

    fn p() -> ElasticParams {
        ElasticParams::default()
    }

    #[test]
    fn density_reference_values() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(hyperelastic_density(&id, &p()), 0.0);
        let two = [[2.0, 0.0], [0.0, 2.0]];
        let expected = 4.0 + 40.0 - 6.0 * 4f64.ln() - 3.5;
        assert!((hyperelastic_density(&two, &p()) - expected).abs() < 1e-12);
        assert!((expected - 32.182233).abs() < 1e-6);
        let aniso = [[1.0, 0.0], [0.0, 0.5]];
        let expected = 0.625 + 0.625 + 6.0 * 2f64.ln() - 3.5;
        assert!((hyperelastic_density(&aniso, &p()) - expected).abs() < 1e-12);
        assert!((expected - 1.908883).abs() < 1e-6);
        assert_eq!(hyperelastic_density(&[[1.0, 0.0], [0.0, -1.0]], &p()), f64::INFINITY);
        assert_eq!(hyperelastic_density(&[[1.0, 1.0], [1.0, 1.0]], &p()), f64::INFINITY);
    }

    #[test]
    fn stress_vanishes_at_identity() {
        let s = hyperelastic_stress(&[[1.0, 0.0], [0.0, 1.0]], &p()).unwrap();
        assert!(s.iter().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn stress_matches_finite_differences() {
        let f = [[1.1, 0.2], [-0.15, 0.9]];
        let s = hyperelastic_stress(&f, &p()).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..2 {
                let mut fp = f;
                let mut fm = f;
                fp[r][c] += h;
                fm[r][c] -= h;
                let fd = (hyperelastic_density(&fp, &p()) - hyperelastic_density(&fm, &p())) / (2.0 * h);
                assert!((fd - s[r][c]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn costs_vanish_at_identity() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let u = ImageField::from_fn(g, |x| 1.0 + x[0] * x[1]);
        let id = Deformation::identity(g);
        assert_eq!(transport_cost(&u, &id).unwrap(), 0.0);
        assert_eq!(source_cost(&u, &u, &id, 0.3).unwrap(), 0.0);
        assert_eq!(viscous_cost(&id, 2.0, &p()).unwrap(), 0.0);
        let e = matching_energy(&u, &u, &id, 0.3, 2.0, &p()).unwrap();
        assert_eq!(e, EnergyBreakdown::zero());
    }

    #[test]
    fn transport_of_constant_shift() {
        let g = Grid::new(3, Boundary::Periodic).unwrap();
        let shift = Deformation::from_fn(g, |_| [0.1, 0.0]);
        let one = ImageField::constant(g, 1.0);
        assert!((transport_cost(&one, &shift).unwrap() - 0.01).abs() < 1e-14);
    }

    #[test]
    fn transport_of_ramp_under_shift() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let u = ImageField::from_fn(g, |x| x[0]);
        let shift = Deformation::from_nodal_unchecked(g, vec![[0.1, 0.0]; g.num_nodes()]).unwrap();
        assert!((transport_cost(&u, &shift).unwrap() - 0.005).abs() < 1e-15);

        // periodic analogue with a wrapped profile of mean 1/2
        let gp = Grid::new(3, Boundary::Periodic).unwrap();
        let shift = Deformation::from_fn(gp, |_| [0.1, 0.0]);
        let wave = ImageField::from_fn(gp, |x| 0.5 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos());
        assert!((transport_cost(&wave, &shift).unwrap() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn source_reference_values() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let id = Deformation::identity(g);
        let one = ImageField::constant(g, 1.0);
        let two = ImageField::constant(g, 2.0);
        assert!((source_cost(&one, &two, &id, 1.0).unwrap() - 1.0).abs() < 1e-14);
        let zero = ImageField::zeros(g);
        let ramp = ImageField::from_fn(g, |x| x[0]);
        assert!((source_cost(&zero, &ramp, &id, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn viscous_of_uniform_dilation() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let disp = (0..g.num_nodes())
            .map(|n| {
                let (i, j) = g.node_coords(n);
                let x = g.node_position(i, j);
                [0.05 * x[0], 0.05 * x[1]]
            })
            .collect();
        let phi = Deformation::from_nodal_unchecked(g, disp).unwrap();
        let expected = 1.1025 + 2.5 * 1.1025 * 1.1025 - 6.0 * 1.1025f64.ln() - 3.5;
        assert!((expected - 0.0557837).abs() < 1e-6);
        let got = viscous_cost(&phi, 1.0, &p()).unwrap();
        assert!((got - expected).abs() < 1e-13);
        assert_eq!(viscous_cost(&phi, 0.0, &p()).unwrap(), 0.0);
    }

    #[test]
    fn barrier_is_flagged() {
        let g = Grid::new(2, Boundary::DirichletIdentity).unwrap();
        let mut disp = vec![[0.0; 2]; g.num_nodes()];
        disp[g.node(2, 2)] = [0.3, 0.0];
        let phi = Deformation::from_displacement(g, disp).unwrap();
        let u = ImageField::constant(g, 1.0);
        let e = matching_energy(&u, &u, &phi, 1.0, 0.0, &p()).unwrap();
        assert!(e.infinite && e.total == f64::INFINITY);
        assert_eq!(
            matching_gradient_deformation(&u, &u, &phi, 1.0, 1.0, &p()),
            Err(Error::InfiniteEnergy)
        );
    }
}
