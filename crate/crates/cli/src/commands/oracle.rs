//! Runs the production solvers against the slow reference implementations
//! on small seeded instances.

use anyhow::{bail, Result};
use imgtransport::barycenter::{BarycenterProblem, BarycenterSystem};
use imgtransport::energy::{ElasticParams, MatchingFunctional};
use imgtransport::fe::{Boundary, Deformation, Grid, ImageField};
use imgtransport::geodesic::{pointwise_qp, ImageSystem, ModelParams, PathQp};
use imgtransport::oracles::{brute_force_qp, dense_solve, fd_gradient, translation_distance, DenseSystem};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::config::RunConfig;
use crate::output::{Csv, Staging};
use crate::row;

struct Check {
    name: &'static str,
    instances: usize,
    error: f64,
    tolerance: f64,
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let stage = Staging::new(&cfg.out())?;
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let checks = [
        gradient(&mut rng)?,
        image_system(&mut rng)?,
        barycenter_system(&mut rng)?,
        qp(&mut rng)?,
        closed_forms()?,
    ];
    let mut csv = Csv::new(&["check", "instances", "max_error", "tolerance", "pass"]);
    let mut failed = Vec::new();
    for c in &checks {
        let pass = c.error < c.tolerance;
        if !pass {
            failed.push(c.name);
        }
        csv.row(row![c.name, c.instances, c.error, c.tolerance, pass]);
    }
    stage.write("oracle_report.csv", &csv.into_string())?;
    stage.commit(cfg)?;
    if !failed.is_empty() {
        bail!("oracle checks failed: {}", failed.join(", "));
    }
    Ok(())
}

fn random_image(g: Grid, rng: &mut StdRng) -> ImageField {
    let dofs: Vec<f64> = (0..g.num_dofs()).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImageField::from_dofs(g, &dofs).expect("dof count")
}

fn random_deformation(g: Grid, rng: &mut StdRng) -> Deformation {
    let a = 0.3 * g.cell_width();
    let mut phi = Deformation::identity(g);
    let free: Vec<f64> = (0..phi.free_values().len()).map(|_| rng.gen_range(-a..a)).collect();
    phi.set_free_values(&free);
    phi
}

fn rel_max_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn boundary(i: usize) -> Boundary {
    if i % 2 == 0 {
        Boundary::DirichletIdentity
    } else {
        Boundary::Periodic
    }
}

fn gradient(rng: &mut StdRng) -> Result<Check> {
    let n = 6;
    let mut worst = 0.0f64;
    for i in 0..n {
        let g = Grid::new(2, boundary(i))?;
        let (u, v, phi) = (random_image(g, rng), random_image(g, rng), random_deformation(g, rng));
        let f = MatchingFunctional::new(&u, &v, 0.2, 0.3, ElasticParams::default())?;
        let (_, grad) = f.energy_and_gradient(&phi)?;
        let fd = fd_gradient(
            |x| {
                let mut p = phi.clone();
                p.set_free_values(x);
                f.energy(&p).map_or(f64::INFINITY, |e| e.total)
            },
            &phi.free_values(),
            1e-6,
        )?;
        let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(num / den.max(1e-300));
    }
    Ok(Check { name: "matching_gradient_vs_fd", instances: n, error: worst, tolerance: 1e-5 })
}

fn image_system(rng: &mut StdRng) -> Result<Check> {
    let n = 10;
    let mut worst = 0.0f64;
    for i in 0..n {
        let g = Grid::new(2, boundary(i))?;
        let k = 2 + i % 3;
        let defs: Vec<Deformation> = (0..k).map(|_| random_deformation(g, rng)).collect();
        let (a, b) = (random_image(g, rng), random_image(g, rng));
        let sys = ImageSystem::assemble(&defs, &a, &b, 0.1 + 0.1 * i as f64)?;
        let reference = dense_solve(&sys.to_dense()?)?;
        let (ims, _) = sys.solve(None, 1e-13, 10_000)?;
        let x: Vec<f64> = ims.iter().flat_map(|u| u.to_dofs()).collect();
        worst = worst.max(rel_max_diff(&x, &reference));
    }
    Ok(Check { name: "image_system_pcg_vs_dense", instances: n, error: worst, tolerance: 1e-8 })
}

fn barycenter_system(rng: &mut StdRng) -> Result<Check> {
    let n = 6;
    let mut worst = 0.0f64;
    for i in 0..n {
        let g = Grid::new(2, boundary(i))?;
        let (k, m) = (2 + i % 2, 2 + i % 3);
        let inputs: Vec<ImageField> = (0..m).map(|_| random_image(g, rng)).collect();
        let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let mut params = ModelParams::new(0.3, 0.1, k, g.boundary())?;
        params.tolerances.pcg_rel_tol = 1e-13;
        let problem = BarycenterProblem::new(inputs, raw.iter().map(|w| w / sum).collect(), params)?;
        let defs: Vec<Vec<Deformation>> = (0..m).map(|_| (0..k).map(|_| random_deformation(g, rng)).collect()).collect();
        let sys = BarycenterSystem::assemble(&defs, &problem)?;
        let reference = dense_solve(&sys.to_dense()?)?;
        let (x, _) = sys.solve(None, 1e-13, 10_000)?;
        worst = worst.max(rel_max_diff(&x, &reference));
    }
    Ok(Check { name: "barycenter_system_pcg_vs_dense", instances: n, error: worst, tolerance: 1e-8 })
}

fn qp(rng: &mut StdRng) -> Result<Check> {
    let g = Grid::new(3, Boundary::Periodic)?;
    let u_a = ImageField::from_fn(g, |x| (0.8 * (std::f64::consts::TAU * x[0]).sin()).max(0.0));
    let u_b = ImageField::from_fn(g, |x| (0.8 * (std::f64::consts::TAU * (x[0] + x[1])).cos()).max(0.0));
    let mut worst = 0.0f64;
    let mut nodes = 0;
    for k in 2..=4 {
        let defs: Vec<Deformation> = (0..k).map(|_| random_deformation(g, rng)).collect();
        let p = ModelParams::new(5.0, 0.1, k, Boundary::Periodic)?;
        let images = pointwise_qp(&u_a, &u_b, &defs, &p)?;
        let dofs: Vec<Vec<f64>> = images.iter().map(|u| u.to_dofs()).collect();
        for d in 0..g.num_dofs() {
            let q = PathQp::at_point(g.dof_position(d), &u_a, &u_b, &defs, p.delta)?;
            let brute = brute_force_qp(&q.hessian, &q.linear)?;
            let ours: Vec<f64> = dofs.iter().map(|v| v[d]).collect();
            let scale = brute.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(ours.iter().zip(&brute).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale);
            nodes += 1;
        }
    }
    Ok(Check { name: "pointwise_qp_vs_brute_force", instances: nodes, error: worst, tolerance: 1e-10 })
}

fn closed_forms() -> Result<Check> {
    let mut worst = 0.0f64;
    for (mass, offset, expected) in [(0.04, [0.3, 0.0], 0.0036), (1.0, [0.1, 0.1], 0.02), (2.0, [0.0, 0.0], 0.0)] {
        worst = worst.max((translation_distance(mass, offset) - expected).abs());
    }
    let x = dense_solve(&DenseSystem::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0])?)?;
    worst = worst.max((x[0] - 1.0).abs()).max((x[1] - 1.0).abs());
    Ok(Check { name: "closed_forms", instances: 4, error: worst, tolerance: 1e-12 })
}
