use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ModelParams;
use crate::energy::DET_FLOOR;
use crate::error::{Error, Result};
use crate::fe::{Deformation, ImageField};

/// The quadratic `Q(u_1..u_{K-1}) = 1/2 u^T H u + g^T u (+ const)` along the
/// discrete transport path `X_k = Phi_k(X_{k-1})` of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct PathQp {
    pub hessian: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
}

impl PathQp {
    /// Path quantities: `c_k = det DPhi_k(X_{k-1})`, `J_k = c_1 ... c_k`,
    /// `d_k = |X_k - X_{k-1}|^2`, with `u_0 = u_A(x)` and `u_K = u_B(X_K)`.
    pub fn at_point(
        x: [f64; 2],
        u_a: &ImageField,
        u_b: &ImageField,
        deformations: &[Deformation],
        delta: f64,
    ) -> Result<Self> {
        let k = deformations.len();
        let mut c = Vec::with_capacity(k);
        let mut d = Vec::with_capacity(k);
        let mut pos = x;
        for phi in deformations {
            let det = phi.jacobian_det(pos)?;
            if det <= DET_FLOOR {
                return Err(Error::NotDiffeomorphic { det });
            }
            let next = phi.eval(pos)?;
            c.push(det);
            d.push((next[0] - pos[0]).powi(2) + (next[1] - pos[1]).powi(2));
            pos = next;
        }
        let u0 = u_a.eval(x)?;
        let uk = u_b.eval(pos)?;
        Ok(Self::from_path(&c, &d, u0, uk, delta))
    }

    /// Assembles `H`, `g` from the path quantities (`c`, `d` indexed from step 1).
    pub fn from_path(c: &[f64], d: &[f64], u0: f64, uk: f64, delta: f64) -> Self {
        let k = c.len();
        let n = k.saturating_sub(1);
        let mut j = vec![1.0; k + 1];
        for i in 1..=k {
            j[i] = j[i - 1] * c[i - 1];
        }
        let s = 2.0 / delta;
        let mut hessian = vec![vec![0.0; n]; n];
        let mut linear = vec![0.0; n];
        // variable r holds u_{r+1}
        for r in 0..n {
            let kk = r + 1;
            hessian[r][r] = s * (j[kk - 1] * c[kk - 1] * c[kk - 1] + j[kk]);
            if r + 1 < n {
                let off = -s * j[kk] * c[kk];
                hessian[r][r + 1] = off;
                hessian[r + 1][r] = off;
            }
            linear[r] = j[kk] * d[kk];
        }
        if n > 0 {
            linear[0] -= s * c[0] * u0;
            linear[n - 1] -= s * j[k - 1] * c[k - 1] * uk;
        }
        Self { hessian, linear }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for (r, row) in self.hessian.iter().enumerate() {
            let hx: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            v += 0.5 * x[r] * hx + self.linear[r] * x[r];
        }
        v
    }

    pub fn unconstrained(&self) -> Result<Vec<f64>> {
        let n = self.linear.len();
        let h = DMatrix::from_fn(n, n, |r, c| self.hessian[r][c]);
        let chol = h.cholesky().ok_or(Error::Singular { pivot: 0.0 })?;
        let x = chol.solve(&DVector::from_fn(n, |r, _| -self.linear[r]));
        Ok(x.iter().copied().collect())
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        solve_bound_qp(&self.hessian, &self.linear)
    }
}

/// Minimizes `1/2 x^T H x + g^T x` over `x >= 0` for positive definite `H`
/// with a primal active-set method started at `x = 0`.
pub fn solve_bound_qp(hessian: &[Vec<f64>], linear: &[f64]) -> Result<Vec<f64>> {
    let n = linear.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let h = DMatrix::from_fn(n, n, |r, c| hessian[r][c]);
    let scale = h.amax().max(linear.iter().fold(0.0f64, |m, v| m.max(v.abs()))).max(1e-300);
    let tol = 1e-14 * scale;
    let grad = |x: &[f64], i: usize| -> f64 { (0..n).map(|j| h[(i, j)] * x[j]).sum::<f64>() + linear[i] };
    let sub_solve = |free: &[bool]| -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..n).filter(|i| free[*i]).collect();
        let m = idx.len();
        let hff = DMatrix::from_fn(m, m, |r, c| h[(idx[r], idx[c])]);
        let rhs = DVector::from_fn(m, |r, _| -linear[idx[r]]);
        let chol = hff.cholesky().ok_or(Error::Singular { pivot: 0.0 })?;
        let z = chol.solve(&rhs);
        let mut out = vec![0.0; n];
        for (r, i) in idx.iter().enumerate() {
            out[*i] = z[r];
        }
        Ok(out)
    };

    let mut x = vec![0.0; n];
    let mut free = vec![false; n];
    for _outer in 0..(4 * n + 8) {
        // most negative multiplier among the active bounds
        let candidate = (0..n)
            .filter(|i| !free[*i])
            .map(|i| (i, grad(&x, i)))
            .filter(|(_, g)| *g < -tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((enter, _)) = candidate else {
            return Ok(x);
        };
        free[enter] = true;
        for _inner in 0..=n {
            let z = sub_solve(&free)?;
            if (0..n).all(|i| !free[i] || z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = 1.0f64;
            for i in 0..n {
                if free[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            for i in 0..n {
                x[i] += alpha * (z[i] - x[i]);
                if free[i] && x[i] <= tol {
                    x[i] = 0.0;
                    free[i] = false;
                }
            }
        }
    }
    Err(Error::NoKktPoint)
}

/// Interior images with `U_k >= 0` from the node-wise path QPs. Each node
/// `x` labels its own path, so `U_k(x)` receives the value carried at
/// `X_k(x)`; for identity deformations this is the nodal image itself.
pub fn pointwise_qp(
    u_a: &ImageField,
    u_b: &ImageField,
    deformations: &[Deformation],
    params: &ModelParams,
) -> Result<Vec<ImageField>> {
    let grid = *u_a.grid();
    grid.ensure_same(u_b.grid())?;
    let k = deformations.len();
    if k < 2 {
        return Ok(Vec::new());
    }
    let per_dof: Vec<Vec<f64>> = (0..grid.num_dofs())
        .into_par_iter()
        .map(|dof| {
            PathQp::at_point(grid.dof_position(dof), u_a, u_b, deformations, params.delta)?.solve()
        })
        .collect::<Result<_>>()?;
    (0..k - 1)
        .map(|step| {
            let vals: Vec<f64> = per_dof.iter().map(|v| v[step]).collect();
            ImageField::from_dofs(grid, &vals)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::brute_force_qp;

    #[test]
    fn scalar_case_is_projection() {
        let qp = PathQp::from_path(&[1.2, 0.9], &[0.01, 0.02], 0.3, 0.1, 0.1);
        let u = qp.unconstrained().unwrap()[0];
        assert!((qp.solve().unwrap()[0] - u.max(0.0)).abs() < 1e-15);
        let qp = PathQp::from_path(&[1.0, 1.0], &[0.5, 0.5], 0.0, 0.0, 0.1);
        assert!(qp.unconstrained().unwrap()[0] < 0.0);
        assert_eq!(qp.solve().unwrap(), vec![0.0]);
    }

    #[test]
    fn identity_path_gives_linear_interpolation() {
        let qp = PathQp::from_path(&[1.0; 4], &[0.0; 4], 0.2, 1.0, 0.3);
        let x = qp.solve().unwrap();
        for (i, v) in x.iter().enumerate() {
            let t = (i + 1) as f64 / 4.0;
            assert!((v - (0.8 * t + 0.2)).abs() < 1e-13);
        }
    }

    #[test]
    fn agrees_with_enumeration() {
        let mut seed = 7u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let k = 2 + (rnd() * 3.0) as usize;
            let c: Vec<f64> = (0..k).map(|_| 0.5 + rnd()).collect();
            let d: Vec<f64> = (0..k).map(|_| 0.2 * rnd()).collect();
            let qp = PathQp::from_path(&c, &d, rnd(), rnd(), 0.05 + rnd());
            let a = qp.solve().unwrap();
            let b = brute_force_qp(&qp.hessian, &qp.linear).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-10, "{a:?} vs {b:?}");
            }
        }
    }
}
