//! Time-discrete geodesics: minimization of the discrete path energy
//! `K * sum_k F[U_{k-1}, U_k, Phi_k]` over interior images and matching
//! deformations with pinned endpoints.

mod cascadic;
mod consistency;
mod deformations;
mod descent;
mod images;
mod qp;

pub use cascadic::{cascadic_solve, refine_in_time, CascadicResult, CascadicSchedule, Stage, StageLog};
pub use consistency::{
    consistency_check, continuous_energy, observed_order, ConsistencyRow, ConsistencyTable, LinearInTime, SmoothPath,
    TranslatingBump,
};
pub use deformations::{minimize_matching, optimize_deformations, NcgOutcome};
pub use descent::{alternating_descent, alternating_descent_nonnegative, DescentResult, SweepRecord};
pub use images::{solve_image_system, ImageSystem};
pub use qp::{pointwise_qp, solve_bound_qp, PathQp};

use crate::energy::{ElasticParams, EnergyBreakdown, MatchingFunctional};
use crate::error::{Error, Result};
use crate::fe::{Boundary, Deformation, Grid, ImageField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub ncg_grad_tol: f64,
    pub ncg_max_iters: usize,
    pub pcg_rel_tol: f64,
    pub pcg_max_iters: usize,
    pub outer_max_sweeps: usize,
    pub outer_stall_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ncg_grad_tol: 1e-9,
            ncg_max_iters: 50,
            pcg_rel_tol: 1e-10,
            pcg_max_iters: 20_000,
            outer_max_sweeps: 15,
            outer_stall_tol: 5e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Penalty on density modulation; the source term is weighted by `1/delta`.
    pub delta: f64,
    /// Weight of the viscous dissipation.
    pub gamma: f64,
    pub elastic: ElasticParams,
    /// Number of time steps.
    pub k: usize,
    pub boundary: Boundary,
    pub tolerances: Tolerances,
    /// Solve the independent deformation subproblems concurrently.
    pub parallel: bool,
}

impl ModelParams {
    pub fn new(delta: f64, gamma: f64, k: usize, boundary: Boundary) -> Result<Self> {
        let p = Self {
            delta,
            gamma,
            elastic: ElasticParams::default(),
            k,
            boundary,
            tolerances: Tolerances::default(),
            parallel: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_k(&self, k: usize) -> Self {
        Self { k, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.k < 1 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        ElasticParams::new(self.elastic.lambda, self.elastic.mu)?;
        let t = &self.tolerances;
        let positive = [t.ncg_grad_tol, t.pcg_rel_tol, t.outer_stall_tol];
        if positive.iter().any(|v| !(*v > 0.0)) || t.ncg_max_iters == 0 || t.pcg_max_iters == 0 || t.outer_max_sweeps == 0 {
            return Err(Error::InvalidParameter("all tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Images `U_0..U_K` and deformations `Phi_1..Phi_K`, where `Phi_k` matches
/// `U_{k-1}` to `U_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath {
    images: Vec<ImageField>,
    deformations: Vec<Deformation>,
}

impl DiscretePath {
    pub fn new(images: Vec<ImageField>, deformations: Vec<Deformation>) -> Result<Self> {
        if images.len() < 2 || deformations.len() + 1 != images.len() {
            return Err(Error::InvalidParameter(format!(
                "a path needs K+1 images and K deformations, got {} and {}",
                images.len(),
                deformations.len()
            )));
        }
        let grid = *images[0].grid();
        for im in &images {
            grid.ensure_same(im.grid())?;
        }
        for d in &deformations {
            grid.ensure_same(d.grid())?;
        }
        Ok(Self { images, deformations })
    }

    /// Identity deformations and the linear intensity blend between the
    /// endpoints (the image-system solution for identity deformations).
    pub fn linear_blend(u_a: &ImageField, u_b: &ImageField, k: usize) -> Result<Self> {
        u_a.grid().ensure_same(u_b.grid())?;
        if k < 1 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        let mut images = Vec::with_capacity(k + 1);
        images.push(u_a.clone());
        for i in 1..k {
            let t = i as f64 / k as f64;
            images.push(u_a.lerp(u_b, 1.0 - t, t)?);
        }
        images.push(u_b.clone());
        let deformations = vec![Deformation::identity(*u_a.grid()); k];
        Self::new(images, deformations)
    }

    /// Every step shifts by `shift / K` on a periodic grid; interior images
    /// are the optimal ones for these deformations. A second starting point
    /// for descents where the intensity blend sits in a poor basin.
    pub fn rigid_translation(u_a: &ImageField, u_b: &ImageField, shift: [f64; 2], params: &ModelParams) -> Result<Self> {
        let grid = *u_a.grid();
        if !grid.is_periodic() {
            return Err(Error::InvalidParameter("rigid translations need a periodic grid".into()));
        }
        let k = params.k;
        let step = [shift[0] / k as f64, shift[1] / k as f64];
        let phi = Deformation::from_displacement(grid, vec![step; grid.num_nodes()])?;
        let deformations = vec![phi; k];
        let mut path = Self::linear_blend(u_a, u_b, k)?;
        let interior = images::solve_image_system(&deformations, u_a, u_b, params, None)?;
        path.deformations = deformations;
        path.set_interior(interior);
        Ok(path)
    }

    pub fn k(&self) -> usize {
        self.deformations.len()
    }

    pub fn grid(&self) -> &Grid {
        self.images[0].grid()
    }

    pub fn images(&self) -> &[ImageField] {
        &self.images
    }

    pub fn deformations(&self) -> &[Deformation] {
        &self.deformations
    }

    pub fn interior_images(&self) -> &[ImageField] {
        &self.images[1..self.images.len() - 1]
    }

    pub(crate) fn deformations_mut(&mut self) -> &mut [Deformation] {
        &mut self.deformations
    }

    /// Replaces `U_1..U_{K-1}`; the endpoints are untouched.
    pub(crate) fn set_interior(&mut self, interior: Vec<ImageField>) {
        let k = self.k();
        assert_eq!(interior.len(), k - 1);
        for (slot, im) in self.images[1..k].iter_mut().zip(interior) {
            *slot = im;
        }
    }

    /// Replaces `U_0`, used where several paths share their first image.
    pub(crate) fn set_first(&mut self, u: ImageField) {
        self.images[0] = u;
    }

    pub fn into_parts(self) -> (Vec<ImageField>, Vec<Deformation>) {
        (self.images, self.deformations)
    }

    /// `F[U_{k-1}, U_k, Phi_k]` for every step, unscaled.
    pub fn step_energies(&self, params: &ModelParams) -> Result<Vec<EnergyBreakdown>> {
        (0..self.k())
            .map(|k| {
                MatchingFunctional::new(
                    &self.images[k],
                    &self.images[k + 1],
                    params.delta,
                    params.gamma,
                    params.elastic,
                )?
                .energy(&self.deformations[k])
            })
            .collect()
    }

    /// The discrete path energy `K * sum_k F_k`, channel by channel.
    pub fn energy(&self, params: &ModelParams) -> Result<EnergyBreakdown> {
        let steps = self.step_energies(params)?;
        Ok(EnergyBreakdown::sum(&steps).scaled(self.k() as f64))
    }

    /// Nodal source terms `z_k = det(D Phi_k) U_k o Phi_k - U_{k-1}`, `k = 1..K`.
    pub fn source_images(&self) -> Result<Vec<ImageField>> {
        let grid = *self.grid();
        (0..self.k())
            .map(|k| {
                let (phi, next, prev) = (&self.deformations[k], &self.images[k + 1], &self.images[k]);
                let dofs = (0..grid.num_dofs())
                    .map(|d| {
                        let x = grid.dof_position(d);
                        Ok(phi.jacobian_det(x)? * next.eval(phi.eval(x)?)? - prev.eval(x)?)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                ImageField::from_dofs(grid, &dofs)
            })
            .collect()
    }

    /// Stacked interior nodal values, for l2 differences between iterates.
    pub(crate) fn interior_l2_distance(&self, other: &DiscretePath) -> Result<f64> {
        let mut s = 0.0;
        for (a, b) in self.interior_images().iter().zip(other.interior_images()) {
            let d = a.l2_distance(b)?;
            s += d * d;
        }
        Ok(s.sqrt())
    }
}

/// Aggregated path energy, scaled by `K`.
pub fn path_energy(path: &DiscretePath, params: &ModelParams) -> Result<EnergyBreakdown> {
    path.energy(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize) -> ModelParams {
        ModelParams::new(0.1, 0.1, k, Boundary::DirichletIdentity).unwrap()
    }

    #[test]
    fn params_are_validated() {
        assert!(ModelParams::new(0.0, 0.1, 2, Boundary::Periodic).is_err());
        assert!(ModelParams::new(0.1, -1.0, 2, Boundary::Periodic).is_err());
        assert!(ModelParams::new(0.1, 0.0, 0, Boundary::Periodic).is_err());
        let mut p = params(2);
        p.tolerances.pcg_rel_tol = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rigid_translation_carries_a_shifted_image() {
        let g = Grid::new(4, Boundary::Periodic).unwrap();
        let f = |c: f64| ImageField::from_fn(g, move |x| 1.0 + (6.283185307179586 * (x[0] - c)).cos());
        let p = ModelParams::new(0.1, 0.1, 2, Boundary::Periodic).unwrap();
        let path = DiscretePath::rigid_translation(&f(0.0), &f(0.25), [0.25, 0.0], &p).unwrap();
        let e = path.energy(&p).unwrap();
        assert!(e.viscous.abs() < 1e-12);
        assert!(path.images()[1].l2_distance(&f(0.125)).unwrap() < 0.05);
        assert!(DiscretePath::rigid_translation(&f(0.0), &f(0.0), [0.1, 0.0], &p.with_k(1)).is_ok());
    }

    #[test]
    fn source_images_of_a_blend_are_the_increments() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let a = ImageField::from_fn(g, |x| x[0]);
        let b = ImageField::constant(g, 1.0);
        let path = DiscretePath::linear_blend(&a, &b, 2).unwrap();
        for z in path.source_images().unwrap() {
            let expected = ImageField::from_fn(g, |x| 0.5 * (1.0 - x[0]));
            assert!(z.l2_distance(&expected).unwrap() < 1e-12);
        }
    }

    #[test]
    fn constant_path_has_zero_energy() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let u = ImageField::from_fn(g, |x| x[0] * x[1]);
        let path = DiscretePath::linear_blend(&u, &u, 4).unwrap();
        assert_eq!(path_energy(&path, &params(4)).unwrap(), EnergyBreakdown::zero());
    }

    #[test]
    fn single_step_path_equals_matching_energy() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let a = ImageField::from_fn(g, |x| x[0]);
        let b = ImageField::from_fn(g, |x| x[1] + 0.5);
        let path = DiscretePath::linear_blend(&a, &b, 1).unwrap();
        let direct = crate::energy::matching_energy(&a, &b, &Deformation::identity(g), 0.1, 0.1, &ElasticParams::default()).unwrap();
        assert_eq!(path_energy(&path, &params(1)).unwrap(), direct);
    }

    #[test]
    fn path_energy_is_k_times_step_sum() {
        let g = Grid::new(2, Boundary::DirichletIdentity).unwrap();
        let a = ImageField::from_fn(g, |x| x[0]);
        let b = ImageField::from_fn(g, |x| 1.0 - x[0]);
        let path = DiscretePath::linear_blend(&a, &b, 3).unwrap();
        let p = params(3);
        let steps = path.step_energies(&p).unwrap();
        let sum: f64 = steps.iter().map(|e| e.total).sum();
        assert!((path.energy(&p).unwrap().total - 3.0 * sum).abs() < 1e-14);
    }
}
