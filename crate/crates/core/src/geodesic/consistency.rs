use rayon::prelude::*;

use super::{DiscretePath, ModelParams};
use crate::error::{Error, Result};
use crate::fe::{Deformation, Grid, ImageField};

/// A smooth density path `u(t, x)` with velocity `v(t, x)` on `[0,1] x [0,1]^2`.
pub trait SmoothPath: Sync {
    fn density(&self, t: f64, x: [f64; 2]) -> f64;
    fn density_dt(&self, t: f64, x: [f64; 2]) -> f64;
    fn density_grad(&self, t: f64, x: [f64; 2]) -> [f64; 2];
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2];
    fn velocity_jacobian(&self, t: f64, x: [f64; 2]) -> [[f64; 2]; 2];
}

/// `u(t, x) = 1 + t g(x)` at rest, with `g = x_1`. Only the source channel
/// is active.
#[derive(Clone, Copy, Debug)]
pub struct LinearInTime;

impl SmoothPath for LinearInTime {
    fn density(&self, t: f64, x: [f64; 2]) -> f64 {
        1.0 + t * x[0]
    }
    fn density_dt(&self, _t: f64, x: [f64; 2]) -> f64 {
        x[0]
    }
    fn density_grad(&self, t: f64, _x: [f64; 2]) -> [f64; 2] {
        [t, 0.0]
    }
    fn velocity(&self, _t: f64, _x: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn velocity_jacobian(&self, _t: f64, _x: [f64; 2]) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
}

/// A Gaussian bump on a constant background, translated along `x_1` with
/// the accelerating speed `w(t) = w0 (1 + t)`. Intended for periodic grids.
#[derive(Clone, Copy, Debug)]
pub struct TranslatingBump {
    pub background: f64,
    pub center: [f64; 2],
    pub width: f64,
    pub w0: f64,
}

impl Default for TranslatingBump {
    fn default() -> Self {
        Self {
            background: 0.2,
            center: [0.35, 0.5],
            width: 0.08,
            w0: 0.1,
        }
    }
}

impl TranslatingBump {
    fn shift(&self, t: f64) -> f64 {
        self.w0 * (t + 0.5 * t * t)
    }

    /// Periodic offset from the current center and the bump value there.
    fn offset(&self, t: f64, x: [f64; 2]) -> ([f64; 2], f64) {
        let wrap = |d: f64| d - d.round();
        let r = [wrap(x[0] - self.center[0] - self.shift(t)), wrap(x[1] - self.center[1])];
        let s2 = self.width * self.width;
        (r, (-(r[0] * r[0] + r[1] * r[1]) / (2.0 * s2)).exp())
    }

    pub fn mass(&self) -> f64 {
        // the Gaussian tail outside the periodic cell is far below rounding
        self.background + 2.0 * std::f64::consts::PI * self.width * self.width
    }

    /// The exact continuous energy: the bump is transported without
    /// distortion, so only `int_0^1 w(t)^2 dt * mass` remains.
    pub fn exact_energy(&self) -> f64 {
        self.mass() * self.w0 * self.w0 * 7.0 / 3.0
    }
}

impl SmoothPath for TranslatingBump {
    fn density(&self, t: f64, x: [f64; 2]) -> f64 {
        self.background + self.offset(t, x).1
    }
    fn density_dt(&self, t: f64, x: [f64; 2]) -> f64 {
        let (r, b) = self.offset(t, x);
        b * r[0] / (self.width * self.width) * self.w0 * (1.0 + t)
    }
    fn density_grad(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let (r, b) = self.offset(t, x);
        let s2 = self.width * self.width;
        [-b * r[0] / s2, -b * r[1] / s2]
    }
    fn velocity(&self, t: f64, _x: [f64; 2]) -> [f64; 2] {
        [self.w0 * (1.0 + t), 0.0]
    }
    fn velocity_jacobian(&self, _t: f64, _x: [f64; 2]) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyRow {
    pub k: usize,
    pub discrete_energy: f64,
    /// `|E^{K,D} - E|` against the quadrature of the continuous energy.
    pub error: f64,
    /// `|E^{K,D} - E^{K_ref,D}|` on the same grid, which isolates the
    /// time discretization error.
    pub error_vs_reference: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyTable {
    pub continuous_energy: f64,
    pub reference_k: usize,
    pub reference_energy: f64,
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyTable {
    /// `error_vs_reference(K) / error_vs_reference(2K)` for consecutive rows.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[0].error_vs_reference / w[1].error_vs_reference)
            .collect()
    }
}

/// `log2` of consecutive error ratios.
pub fn observed_order(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// The discrete energy of the sampled path: `u_k = u(k/K)` and
/// `Phi_k = id + v(t_{k-1}) / K`, nodally interpolated.
fn discrete_energy(path: &dyn SmoothPath, grid: Grid, k: usize, params: &ModelParams) -> Result<f64> {
    let images: Vec<ImageField> = (0..=k)
        .map(|i| {
            let t = i as f64 / k as f64;
            ImageField::from_fn(grid, |x| path.density(t, x))
        })
        .collect();
    let deformations: Vec<Deformation> = (0..k)
        .map(|i| {
            let t = i as f64 / k as f64;
            Deformation::from_fn(grid, |x| {
                let v = path.velocity(t, x);
                [v[0] / k as f64, v[1] / k as f64]
            })
        })
        .collect();
    let p = params.with_k(k);
    let e = DiscretePath::new(images, deformations)?.energy(&p)?;
    if !e.is_finite() {
        return Err(Error::InfiniteEnergy);
    }
    Ok(e.total)
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// `int_0^1 int u|v|^2 + z^2/delta + gamma (mu |sym Dv|^2 + lambda/2 (div v)^2)`
/// with `z = du/dt + div(u v)`, by tensor Gauss quadrature on a fine
/// space-time lattice.
pub fn continuous_energy(path: &dyn SmoothPath, params: &ModelParams, cells: usize, intervals: usize) -> f64 {
    let (mu, lambda) = (params.elastic.mu, params.elastic.lambda);
    let h = 1.0 / cells as f64;
    let tau = 1.0 / intervals as f64;
    let density = |t: f64, x: [f64; 2]| -> f64 {
        let u = path.density(t, x);
        let v = path.velocity(t, x);
        let dv = path.velocity_jacobian(t, x);
        let gu = path.density_grad(t, x);
        let div = dv[0][0] + dv[1][1];
        let z = path.density_dt(t, x) + gu[0] * v[0] + gu[1] * v[1] + u * div;
        let off = 0.5 * (dv[0][1] + dv[1][0]);
        let sym2 = dv[0][0] * dv[0][0] + dv[1][1] * dv[1][1] + 2.0 * off * off;
        u * (v[0] * v[0] + v[1] * v[1]) + z * z / params.delta + params.gamma * (mu * sym2 + 0.5 * lambda * div * div)
    };
    (0..intervals * cells)
        .into_par_iter()
        .map(|idx| {
            let (it, ci) = (idx / cells, idx % cells);
            let mut s = 0.0;
            for (gt, wt) in GAUSS4 {
                let t = tau * (it as f64 + 0.5 * (gt + 1.0));
                for cj in 0..cells {
                    for (gx, wx) in GAUSS4 {
                        for (gy, wy) in GAUSS4 {
                            let x = [h * (ci as f64 + 0.5 * (gx + 1.0)), h * (cj as f64 + 0.5 * (gy + 1.0))];
                            s += wt * wx * wy * density(t, x);
                        }
                    }
                }
            }
            s * 0.125 * tau * h * h
        })
        .sum()
}

/// Tabulates the discrete path energy of the sampled smooth path for every
/// `K` in `ks` against the continuous energy and a fine-in-time reference.
pub fn consistency_check(
    path: &dyn SmoothPath,
    grid: Grid,
    ks: &[usize],
    reference_k: usize,
    params: &ModelParams,
) -> Result<ConsistencyTable> {
    if ks.is_empty() || ks.iter().any(|k| *k == 0) || reference_k == 0 {
        return Err(Error::InvalidParameter("consistency check needs positive K values".into()));
    }
    let continuous = continuous_energy(path, params, 64, 32);
    let reference = discrete_energy(path, grid, reference_k, params)?;
    let rows = ks
        .iter()
        .map(|&k| {
            let e = discrete_energy(path, grid, k, params)?;
            Ok(ConsistencyRow {
                k,
                discrete_energy: e,
                error: (e - continuous).abs(),
                error_vs_reference: (e - reference).abs(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConsistencyTable {
        continuous_energy: continuous,
        reference_k,
        reference_energy: reference,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::Boundary;

    #[test]
    fn linear_in_time_is_exact() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let p = ModelParams::new(0.5, 0.1, 1, Boundary::DirichletIdentity).unwrap();
        let table = consistency_check(&LinearInTime, g, &[1, 2, 4, 8], 16, &p).unwrap();
        let exact = 1.0 / (3.0 * 0.5);
        assert!((table.continuous_energy - exact).abs() < 1e-12);
        for row in &table.rows {
            assert!(row.error < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn bump_continuous_energy_matches_closed_form() {
        let bump = TranslatingBump::default();
        let p = ModelParams::new(10.0, 0.0, 1, Boundary::Periodic).unwrap();
        let e = continuous_energy(&bump, &p, 64, 32);
        assert!((e - bump.exact_energy()).abs() < 1e-9 * bump.exact_energy(), "{e} vs {}", bump.exact_energy());
    }
}
