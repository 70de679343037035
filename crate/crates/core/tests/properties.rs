//! Randomized structural properties of the discretization and solvers.

use imgtransport::barycenter::{barycenter_descent, BarycenterProblem};
use imgtransport::energy::{hyperelastic_density, matching_energy, ElasticParams};
use imgtransport::fe::{assemble_mass_matrix, weights, Boundary, Deformation, Grid, ImageField};
use imgtransport::geodesic::{
    alternating_descent, pointwise_qp, solve_image_system, DiscretePath, ImageSystem, ModelParams,
};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smooth interior-vanishing displacement; amplitude well inside the
/// orientation-preserving range.
fn wobble(g: Grid, amp: f64, phase: f64) -> Deformation {
    Deformation::from_fn(g, move |x| {
        let bub = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
        [amp * bub * (3.0 * x[1] + phase).sin(), amp * bub * (2.0 * x[0] - phase).cos()]
    })
}

fn image(g: Grid, seed: &[f64]) -> ImageField {
    let dofs: Vec<f64> = (0..g.num_dofs()).map(|i| seed[i % seed.len()]).collect();
    ImageField::from_dofs(g, &dofs).unwrap()
}

fn bump(g: Grid, c: [f64; 2]) -> ImageField {
    ImageField::from_fn(g, |x| {
        let d = [x[0] - c[0], x[1] - c[1]];
        let d = if g.is_periodic() { [d[0] - d[0].round(), d[1] - d[1].round()] } else { d };
        (-(d[0] * d[0] + d[1] * d[1]) / 0.02).exp()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_matrix_is_positive_definite(
        amp in -1.5f64..1.5,
        phase in 0.0f64..6.0,
        x in prop::collection::vec(-1.0f64..1.0, 25),
    ) {
        let g = Grid::new(2, Boundary::DirichletIdentity).unwrap();
        let phi = wobble(g, amp, phase);
        let m = assemble_mass_matrix(&weights::ones(&g), &phi, &phi).unwrap();
        let q = dot(&x, &m.apply(&x));
        prop_assert!(q > 0.0 || x.iter().all(|v| *v == 0.0));
        let y: Vec<f64> = x.iter().rev().copied().collect();
        prop_assert!((dot(&y, &m.apply(&x)) - dot(&x, &m.apply(&y))).abs() < 1e-14);
    }

    #[test]
    fn hyperelastic_log_det_lower_bound(a in 0.01f64..5.0, b in 0.01f64..5.0, theta in 0.0f64..3.2) {
        // SPD matrix R diag(a, b) R^T
        let (c, s) = (theta.cos(), theta.sin());
        let f = [[a * c * c + b * s * s, (a - b) * c * s], [(a - b) * c * s, a * s * s + b * c * c]];
        let p = ElasticParams::default();
        let alpha0 = p.mu + 0.5 * p.lambda;
        let w = hyperelastic_density(&f, &p);
        prop_assert!(w >= alpha0 * (a * b).ln().abs() - 10.0, "W = {w}");
    }

    #[test]
    fn matching_energy_is_nonnegative(
        u in prop::collection::vec(0.0f64..1.0, 7),
        v in prop::collection::vec(0.0f64..1.0, 5),
        amp in -1.5f64..1.5,
        delta in 0.01f64..2.0,
        gamma in 0.0f64..2.0,
    ) {
        let g = Grid::new(2, Boundary::DirichletIdentity).unwrap();
        let e = matching_energy(&image(g, &u), &image(g, &v), &wobble(g, amp, 0.3), delta, gamma, &ElasticParams::default()).unwrap();
        prop_assert!(e.transport >= 0.0 && e.source >= 0.0 && e.viscous >= 0.0 && e.total >= 0.0);
    }

    #[test]
    fn image_system_is_symmetric_positive_definite(
        amps in prop::collection::vec(-1.5f64..1.5, 3),
        x in prop::collection::vec(-1.0f64..1.0, 50),
        delta in 0.01f64..2.0,
    ) {
        let g = Grid::new(2, Boundary::DirichletIdentity).unwrap();
        let defs: Vec<Deformation> = amps.iter().enumerate().map(|(i, a)| wobble(g, *a, i as f64)).collect();
        let sys = ImageSystem::assemble(&defs, &ImageField::zeros(g), &ImageField::zeros(g), delta).unwrap();
        prop_assert_eq!(sys.num_unknowns(), 50);
        let y: Vec<f64> = x.iter().map(|v| v * v - 0.3).collect();
        let (mut ax, mut ay) = (vec![0.0; 50], vec![0.0; 50]);
        sys.apply(&x, &mut ax);
        sys.apply(&y, &mut ay);
        prop_assert!(dot(&x, &ax) > 0.0);
        prop_assert!((dot(&y, &ax) - dot(&x, &ay)).abs() < 1e-12 * (1.0 + dot(&x, &ax).abs()));
    }
}

fn mass_defect(level: u32, u: impl Fn([f64; 2]) -> f64) -> f64 {
    let g = Grid::new(level, Boundary::DirichletIdentity).unwrap();
    let phi = wobble(g, 1.2, 0.4);
    let u = ImageField::from_fn(g, u);
    let ones = vec![1.0; g.num_dofs()];
    let pulled = assemble_mass_matrix(&weights::jacobian_det(&phi), &phi, &Deformation::identity(g)).unwrap();
    let plain = assemble_mass_matrix(&weights::ones(&g), &Deformation::identity(g), &Deformation::identity(g)).unwrap();
    let d = u.to_dofs();
    (dot(&d, &pulled.apply(&ones)) - dot(&d, &plain.apply(&ones))).abs()
}

#[test]
fn change_of_variables_is_exact_for_affine_images() {
    // det(DPhi) * (U o Phi) is a per-cell polynomial Simpson integrates exactly
    for level in [2, 3, 4] {
        let e = mass_defect(level, |x| 1.0 + 0.7 * x[0] - 0.4 * x[1]);
        assert!(e < 1e-13, "level {level}: {e:e}");
    }
}

#[test]
fn change_of_variables_converges_for_general_images() {
    // U o Phi has kinks inside cells, so only low order is available
    let u = |x: [f64; 2]| 1.0 + (2.0 * x[0] + x[1]).sin() * x[1];
    let (coarse, fine) = (mass_defect(3, u), mass_defect(5, u));
    let order = (coarse / fine).log2() / 2.0;
    assert!(order >= 1.0, "errors {coarse:e} -> {fine:e}, order {order:.2}");
}

#[test]
fn pointwise_qp_matches_linear_solve_for_identity_deformations() {
    let g = Grid::new(3, Boundary::Periodic).unwrap();
    let a = ImageField::from_fn(g, |x| 1.0 + 0.5 * (6.283185307179586 * x[0]).sin());
    let b = ImageField::from_fn(g, |x| 1.2 + 0.3 * (6.283185307179586 * x[1]).cos());
    let p = ModelParams::new(0.2, 0.1, 4, Boundary::Periodic).unwrap();
    let defs = vec![Deformation::identity(g); 4];
    let qp = pointwise_qp(&a, &b, &defs, &p).unwrap();
    let fe = solve_image_system(&defs, &a, &b, &p, None).unwrap();
    for (x, y) in qp.iter().zip(&fe) {
        let worst = x.values().iter().zip(y.values()).fold(0.0f64, |m, (s, t)| m.max((s - t).abs()));
        assert!(worst < 1e-8, "{worst:e}");
    }
}

#[test]
fn periodic_descent_is_translation_equivariant() {
    let g = Grid::new(4, Boundary::Periodic).unwrap();
    let mut p = ModelParams::new(0.1, 0.1, 2, Boundary::Periodic).unwrap();
    // one sweep: later sweeps amplify summation-order rounding through NCG
    p.tolerances.outer_max_sweeps = 1;
    let shift = 3;
    let h = g.cell_width();
    let run = |dx: f64| {
        let a = bump(g, [0.35 + dx, 0.5]);
        let b = bump(g, [0.55 + dx, 0.5]);
        alternating_descent(&a, &b, &p, None).unwrap().path
    };
    let base = run(0.0);
    let moved = run(shift as f64 * h);
    let c = g.cells_per_side();
    let (u, v) = (base.images()[1].to_dofs(), moved.images()[1].to_dofs());
    let mut s = 0.0;
    for j in 0..c {
        for i in 0..c {
            let d = v[j * c + (i + shift) % c] - u[j * c + i];
            s += d * d;
        }
    }
    assert!(s.sqrt() < 1e-8, "l2 mismatch {:e}", s.sqrt());
}

#[test]
fn barycenter_is_invariant_under_weight_scaling_and_permutation() {
    let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
    let (a, b) = (bump(g, [0.4, 0.45]), bump(g, [0.6, 0.55]));
    let mut p = ModelParams::new(0.1, 0.1, 2, Boundary::DirichletIdentity).unwrap();
    p.tolerances.outer_max_sweeps = 1;
    p.tolerances.pcg_rel_tol = 1e-14;
    let solve = |pr: BarycenterProblem| barycenter_descent(&pr).unwrap().barycenter;
    let base = solve(BarycenterProblem::new(vec![a.clone(), b.clone()], vec![0.25, 0.75], p).unwrap());
    let scaled = solve(BarycenterProblem::normalized(vec![a.clone(), b.clone()], &[2.0, 6.0], p).unwrap());
    let swapped = solve(BarycenterProblem::new(vec![b, a], vec![0.75, 0.25], p).unwrap());
    let (ds, dp) = (base.l2_distance(&scaled).unwrap(), base.l2_distance(&swapped).unwrap());
    assert!(ds < 1e-10 && dp < 1e-10, "scaled {ds:e}, swapped {dp:e}");
}

#[test]
fn endpoints_survive_every_operation() {
    let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
    let (a, b) = (bump(g, [0.4, 0.5]), bump(g, [0.6, 0.5]));
    let p = ModelParams::new(0.1, 0.1, 3, Boundary::DirichletIdentity).unwrap();
    let init = DiscretePath::linear_blend(&a, &b, 3).unwrap();
    let res = alternating_descent(&a, &b, &p, Some(init)).unwrap();
    assert_eq!(res.path.images()[0].values(), a.values());
    assert_eq!(res.path.images()[3].values(), b.values());
}
