//! Slow, independent reference implementations: dense direct solves,
//! central finite differences, closed-form translation costs and
//! enumeration of active sets for small bound-constrained QPs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest admissible pivot magnitude in [`dense_solve`].
pub const MIN_PIVOT: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl DenseSystem {
    pub fn new(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != rhs.len() {
            return Err(Error::InvalidParameter(format!(
                "dense system is {}x{} with a right-hand side of length {}",
                matrix.nrows(),
                matrix.ncols(),
                rhs.len()
            )));
        }
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidParameter(format!(
                "dense system is not symmetric (max deviation {asym:e})"
            )));
        }
        Ok(Self { matrix, rhs })
    }

    pub fn from_rows(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Self> {
        let n = rows.len();
        let matrix = DMatrix::from_fn(n, n, |r, c| rows[r][c]);
        Self::new(matrix, DVector::from_column_slice(rhs))
    }
}

/// LU factorization with partial pivoting.
pub fn dense_solve(system: &DenseSystem) -> Result<Vec<f64>> {
    let lu = system.matrix.clone().lu();
    let u = lu.u();
    let pivot = (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(pivot > MIN_PIVOT) {
        return Err(Error::Singular { pivot });
    }
    let x = lu.solve(&system.rhs).ok_or(Error::Singular { pivot })?;
    Ok(x.iter().copied().collect())
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::InfiniteEnergy);
        }
        out.push((fp - fm) / (2.0 * step));
    }
    Ok(out)
}

/// Squared Wasserstein cost of rigidly translating a density of the given
/// mass: `mass * |offset|^2`.
pub fn translation_distance(mass: f64, offset: [f64; 2]) -> f64 {
    mass * (offset[0] * offset[0] + offset[1] * offset[1])
}

/// Minimizes `1/2 x^T H x + g^T x` subject to `x >= 0` by trying every
/// active set. Only meant for a handful of variables.
pub fn brute_force_qp(hessian: &[Vec<f64>], linear: &[f64]) -> Result<Vec<f64>> {
    let n = linear.len();
    assert!(n <= 16, "brute force QP limited to 16 variables");
    let h = DMatrix::from_fn(n, n, |r, c| hessian[r][c]);
    let eig = h.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| *l < -1e-12 * h.amax().max(1.0)) {
        return Err(Error::InvalidParameter("QP Hessian is not positive semidefinite".into()));
    }
    let g = DVector::from_column_slice(linear);
    let value = |x: &DVector<f64>| 0.5 * x.dot(&(&h * x)) + g.dot(x);
    let tol = 1e-12 * (1.0 + h.amax() + g.amax());

    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << n) {
        // bit set = variable pinned at zero
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
        let mut x = DVector::zeros(n);
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
            let gf = DVector::from_fn(free.len(), |r, _| -g[free[r]]);
            let Some(sol) = hff.lu().solve(&gf) else { continue };
            for (k, i) in free.iter().enumerate() {
                x[*i] = sol[k];
            }
        }
        if x.iter().any(|v| *v < -tol) {
            continue;
        }
        let grad = &h * &x + &g;
        let kkt = (0..n).all(|i| {
            if mask & (1 << i) != 0 {
                grad[i] >= -tol
            } else {
                grad[i].abs() <= tol * 1e3
            }
        });
        if !kkt {
            continue;
        }
        let v = value(&x);
        if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
            best = Some((v, x));
        }
    }
    best.map(|(_, x)| x.iter().map(|v| v.max(0.0)).collect())
        .ok_or(Error::NoKktPoint)
}
