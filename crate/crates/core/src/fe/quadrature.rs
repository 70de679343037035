use super::grid::{bilinear_shape, bilinear_shape_grad, Grid};

pub const POINTS_PER_CELL: usize = 9;

/// Tensor 3x3 Simpson rule on the reference cell `[0,1]^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: [[f64; 2]; POINTS_PER_CELL],
    pub weights: [f64; POINTS_PER_CELL],
}

impl QuadratureRule {
    pub fn simpson() -> Self {
        const NODES: [f64; 3] = [0.0, 0.5, 1.0];
        const W: [f64; 3] = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
        let mut points = [[0.0; 2]; POINTS_PER_CELL];
        let mut weights = [0.0; POINTS_PER_CELL];
        for b in 0..3 {
            for a in 0..3 {
                points[3 * b + a] = [NODES[a], NODES[b]];
                weights[3 * b + a] = W[a] * W[b];
            }
        }
        Self { points, weights }
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::simpson()
    }
}

/// Quadrature data shared by every cell of a uniform grid: physical weights
/// (reference weight times cell area) and shape function tables.
#[derive(Clone, Debug)]
pub struct CellQuadrature {
    pub rule: QuadratureRule,
    pub weights: [f64; POINTS_PER_CELL],
    pub shape: [[f64; 4]; POINTS_PER_CELL],
    /// Physical gradients of the four cell shape functions.
    pub shape_grad: [[[f64; 2]; 4]; POINTS_PER_CELL],
    h: f64,
}

impl CellQuadrature {
    pub fn new(grid: &Grid) -> Self {
        let rule = QuadratureRule::simpson();
        let h = grid.cell_width();
        let area = h * h;
        let mut weights = [0.0; POINTS_PER_CELL];
        let mut shape = [[0.0; 4]; POINTS_PER_CELL];
        let mut shape_grad = [[[0.0; 2]; 4]; POINTS_PER_CELL];
        for q in 0..POINTS_PER_CELL {
            let [s, t] = rule.points[q];
            weights[q] = rule.weights[q] * area;
            shape[q] = bilinear_shape(s, t);
            let g = bilinear_shape_grad(s, t);
            for a in 0..4 {
                shape_grad[q][a] = [g[a][0] / h, g[a][1] / h];
            }
        }
        Self {
            rule,
            weights,
            shape,
            shape_grad,
            h,
        }
    }

    #[inline]
    pub fn point(&self, ci: usize, cj: usize, q: usize) -> [f64; 2] {
        let [s, t] = self.rule.points[q];
        [(ci as f64 + s) * self.h, (cj as f64 + t) * self.h]
    }
}

/// Per-quadrature-point data over the whole grid, indexed `cell * 9 + q`.
pub fn quadrature_len(grid: &Grid) -> usize {
    grid.num_cells() * POINTS_PER_CELL
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_reference(f: impl Fn(f64, f64) -> f64) -> f64 {
        let rule = QuadratureRule::simpson();
        rule.points
            .iter()
            .zip(rule.weights.iter())
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }

    #[test]
    fn weights_are_tensor_simpson() {
        let rule = QuadratureRule::simpson();
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((rule.weights[4] - 16.0 / 36.0).abs() < 1e-15);
        assert!((rule.weights[0] - 1.0 / 36.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_cubic_tensor_polynomials() {
        // integral of s^a t^b over the unit square is 1/((a+1)(b+1))
        for a in 0..=3 {
            for b in 0..=3 {
                let got = integrate_reference(|s, t| s.powi(a) * t.powi(b));
                let exact = 1.0 / (((a + 1) * (b + 1)) as f64);
                assert!(
                    ((got - exact) / exact).abs() < 1e-13,
                    "degree ({a},{b}): {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn not_exact_for_quartics() {
        let got = integrate_reference(|s, _| s.powi(4));
        assert!((got - 0.2).abs() > 1e-3);
    }
}
