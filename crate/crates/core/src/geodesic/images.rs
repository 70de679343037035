use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::fe::{assemble_from_points, weights, Deformation, DeformedPoints, Grid, ImageField, SparseBlock};
use crate::linalg::{pcg, PcgStats};
use crate::oracles::DenseSystem;

/// Block tridiagonal optimality system for the interior images with all
/// deformations frozen. The unknown is `[U_1, ..., U_{K-1}]` in dof order and
/// block row `k` reads
/// `(Mdet2_k + M0) U_k - Mdet_k U_{k-1} - Mdet_{k+1}^T U_{k+1} = -(delta/2) t_{k+1}`,
/// where `Mdet_k = M[det DPhi_k, Phi_k, id]`, `Mdet2_k = M[det^2, Phi_k, Phi_k]`,
/// `M0 = M[1, id, id]` and `t_k = M[|Phi_k - id|^2, id, id] 1`.
pub struct ImageSystem {
    grid: Grid,
    k: usize,
    m0: SparseBlock,
    mdet: Vec<SparseBlock>,
    mdet2: Vec<SparseBlock>,
    transport: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    diag: Vec<f64>,
}

impl ImageSystem {
    pub fn assemble(deformations: &[Deformation], u_a: &ImageField, u_b: &ImageField, delta: f64) -> Result<Self> {
        let k = deformations.len();
        if k < 2 {
            return Err(Error::InvalidParameter("the image system needs K >= 2".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        let grid = *u_a.grid();
        grid.ensure_same(u_b.grid())?;
        for phi in deformations {
            grid.ensure_same(phi.grid())?;
        }
        let id = Deformation::identity(grid);
        let id_points = DeformedPoints::new(&id)?;
        let m0 = assemble_from_points(&grid, &weights::ones(&grid), &id_points, &id_points)?;
        let blocks: Vec<(SparseBlock, SparseBlock, Vec<f64>)> = deformations
            .par_iter()
            .map(|phi| {
                let pts = DeformedPoints::new(phi)?;
                let mdet = assemble_from_points(&grid, &weights::jacobian_det(phi), &pts, &id_points)?;
                let mdet2 = assemble_from_points(&grid, &weights::jacobian_det_squared(phi), &pts, &pts)?;
                let mt = assemble_from_points(&grid, &weights::displacement_sq(phi), &id_points, &id_points)?;
                let t = mt.apply(&vec![1.0; grid.num_dofs()]);
                Ok((mdet, mdet2, t))
            })
            .collect::<Result<_>>()?;
        let mut mdet = Vec::with_capacity(k);
        let mut mdet2 = Vec::with_capacity(k);
        let mut transport = Vec::with_capacity(k);
        for (a, b, t) in blocks {
            mdet.push(a);
            mdet2.push(b);
            transport.push(t);
        }

        let nd = grid.num_dofs();
        let m = k - 1;
        let mut rhs = vec![0.0; m * nd];
        for blk in 0..m {
            let out = &mut rhs[blk * nd..(blk + 1) * nd];
            for (o, t) in out.iter_mut().zip(&transport[blk + 1]) {
                *o = -0.5 * delta * t;
            }
        }
        mdet[0].matvec_add(1.0, &u_a.to_dofs(), &mut rhs[0..nd]);
        mdet[k - 1].matvec_transpose_add(1.0, &u_b.to_dofs(), &mut rhs[(m - 1) * nd..m * nd]);

        let d0 = m0.diagonal();
        let mut diag = Vec::with_capacity(m * nd);
        for blk in 0..m {
            diag.extend(mdet2[blk].diagonal().iter().zip(&d0).map(|(a, b)| a + b));
        }
        Ok(Self { grid, k, m0, mdet, mdet2, transport, rhs, diag })
    }

    pub fn num_unknowns(&self) -> usize {
        (self.k - 1) * self.grid.num_dofs()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn transport_vectors(&self) -> &[Vec<f64>] {
        &self.transport
    }

    pub fn mass(&self) -> &SparseBlock {
        &self.m0
    }

    /// `Mdet_1`, the coupling of `U_1` to the first image.
    pub fn first_coupling(&self) -> &SparseBlock {
        &self.mdet[0]
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nd = self.grid.num_dofs();
        let m = self.k - 1;
        y.par_chunks_mut(nd).enumerate().for_each(|(blk, out)| {
            let xk = &x[blk * nd..(blk + 1) * nd];
            self.mdet2[blk].matvec(xk, out);
            self.m0.matvec_add(1.0, xk, out);
            if blk > 0 {
                self.mdet[blk].matvec_add(-1.0, &x[(blk - 1) * nd..blk * nd], out);
            }
            if blk + 1 < m {
                self.mdet[blk + 1].matvec_transpose_add(-1.0, &x[(blk + 1) * nd..(blk + 2) * nd], out);
            }
        });
    }

    /// The same system as a dense symmetric matrix; reference for small grids.
    pub fn to_dense(&self) -> Result<DenseSystem> {
        let nd = self.grid.num_dofs();
        let m = self.k - 1;
        let n = m * nd;
        let mut a = DMatrix::zeros(n, n);
        let mut add = |r0: usize, c0: usize, block: &SparseBlock, transpose: bool, s: f64| {
            for r in 0..nd {
                for (c, v) in block.row(r) {
                    if transpose {
                        a[(c0 + c, r0 + r)] += s * v;
                    } else {
                        a[(r0 + r, c0 + c)] += s * v;
                    }
                }
            }
        };
        // the transposed entries land at (row of U_k, col of U_{k+1})
        for blk in 0..m {
            let r0 = blk * nd;
            add(r0, r0, &self.mdet2[blk], false, 1.0);
            add(r0, r0, &self.m0, false, 1.0);
            if blk > 0 {
                add(r0, (blk - 1) * nd, &self.mdet[blk], false, -1.0);
            }
            if blk + 1 < m {
                add((blk + 1) * nd, r0, &self.mdet[blk + 1], true, -1.0);
            }
        }
        DenseSystem::new(a, DVector::from_column_slice(&self.rhs))
    }

    pub fn split(&self, x: &[f64]) -> Result<Vec<ImageField>> {
        x.chunks(self.grid.num_dofs())
            .map(|c| ImageField::from_dofs(self.grid, c))
            .collect()
    }

    /// PCG with a Jacobi preconditioner, warm-started from `initial`.
    pub fn solve(&self, initial: Option<&[ImageField]>, rel_tol: f64, max_iters: usize) -> Result<(Vec<ImageField>, PcgStats)> {
        let mut x = match initial {
            Some(ims) if ims.len() == self.k - 1 => ims.iter().flat_map(|u| u.to_dofs()).collect(),
            _ => vec![0.0; self.num_unknowns()],
        };
        let stats = pcg(|v, out| self.apply(v, out), &self.diag, &self.rhs, &mut x, rel_tol, max_iters)?;
        Ok((self.split(&x)?, stats))
    }
}

/// Optimal interior images `U_1..U_{K-1}` for frozen deformations. `K = 1`
/// has no interior images and returns an empty vector.
pub fn solve_image_system(
    deformations: &[Deformation],
    u_a: &ImageField,
    u_b: &ImageField,
    params: &ModelParams,
    initial: Option<&[ImageField]>,
) -> Result<Vec<ImageField>> {
    if deformations.len() == 1 {
        return Ok(Vec::new());
    }
    let sys = ImageSystem::assemble(deformations, u_a, u_b, params.delta)?;
    let t = &params.tolerances;
    Ok(sys.solve(initial, t.pcg_rel_tol, t.pcg_max_iters)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::Boundary;
    use crate::oracles::dense_solve;

    fn setup(boundary: Boundary) -> (Vec<Deformation>, ImageField, ImageField) {
        let g = Grid::new(2, boundary).unwrap();
        let a = ImageField::from_fn(g, |x| 0.3 + (6.28 * x[0]).sin().abs() * 0.2);
        let b = ImageField::from_fn(g, |x| 0.5 + 0.1 * (6.28 * x[1]).cos());
        let defs = (0..3)
            .map(|k| {
                Deformation::from_fn(g, move |x| {
                    let s = 0.02 * (k as f64 + 1.0);
                    [s * (6.28 * x[1]).sin(), -s * (6.28 * x[0]).sin()]
                })
            })
            .collect();
        (defs, a, b)
    }

    #[test]
    fn identity_deformations_give_linear_blend() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let a = ImageField::from_fn(g, |x| x[0]);
        let b = ImageField::from_fn(g, |x| 1.0 - x[1] * x[0]);
        let defs = vec![Deformation::identity(g); 4];
        let p = ModelParams::new(0.1, 0.0, 4, Boundary::DirichletIdentity).unwrap();
        let ims = solve_image_system(&defs, &a, &b, &p, None).unwrap();
        for (i, u) in ims.iter().enumerate() {
            let t = (i + 1) as f64 / 4.0;
            let expect = a.lerp(&b, 1.0 - t, t).unwrap();
            assert!(u.l2_distance(&expect).unwrap() < 1e-9);
        }
    }

    #[test]
    fn pcg_matches_dense_solve() {
        for boundary in [Boundary::DirichletIdentity, Boundary::Periodic] {
            let (defs, a, b) = setup(boundary);
            let sys = ImageSystem::assemble(&defs, &a, &b, 0.1).unwrap();
            let dense = sys.to_dense().unwrap();
            let x_ref = dense_solve(&dense).unwrap();
            let (ims, _) = sys.solve(None, 1e-13, 1000).unwrap();
            let x: Vec<f64> = ims.iter().flat_map(|u| u.to_dofs()).collect();
            let scale = x_ref.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (p, q) in x.iter().zip(&x_ref) {
                assert!((p - q).abs() <= 1e-9 * scale, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn operator_matches_dense_matrix() {
        let (defs, a, b) = setup(Boundary::DirichletIdentity);
        let sys = ImageSystem::assemble(&defs, &a, &b, 0.1).unwrap();
        let dense = sys.to_dense().unwrap();
        let x: Vec<f64> = (0..sys.num_unknowns()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let mut y = vec![0.0; x.len()];
        sys.apply(&x, &mut y);
        let y_ref = &dense.matrix * DVector::from_column_slice(&x);
        for (p, q) in y.iter().zip(y_ref.iter()) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn single_step_has_no_interior_images() {
        let (defs, a, b) = setup(Boundary::Periodic);
        let p = ModelParams::new(0.1, 0.0, 1, Boundary::Periodic).unwrap();
        assert!(solve_image_system(&defs[..1], &a, &b, &p, None).unwrap().is_empty());
    }
}
