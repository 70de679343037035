use rayon::prelude::*;

use super::field::{det2, Deformation};
use super::grid::Grid;
use super::quadrature::{quadrature_len, CellQuadrature, POINTS_PER_CELL};
use super::sparse::SparseBlock;
use crate::error::{Error, Result};

/// Location of every quadrature point under a deformation, as
/// `(dofs, basis values)` of the cell hit by `phi(x_q)`.
#[derive(Clone, Debug)]
pub struct DeformedPoints {
    pub dofs: Vec<[usize; 4]>,
    pub shape: Vec<[f64; 4]>,
}

impl DeformedPoints {
    pub fn new(phi: &Deformation) -> Result<Self> {
        let grid = *phi.grid();
        let quad = CellQuadrature::new(&grid);
        let per_cell: Vec<Result<Vec<([usize; 4], [f64; 4])>>> = (0..grid.num_cells())
            .into_par_iter()
            .map(|cell| {
                let (ci, cj) = grid.cell_coords(cell);
                let disp = phi.cell_displacements(ci, cj);
                let mut out = Vec::with_capacity(POINTS_PER_CELL);
                for q in 0..POINTS_PER_CELL {
                    let x = quad.point(ci, cj, q);
                    let n = &quad.shape[q];
                    let mut y = x;
                    for a in 0..4 {
                        y[0] += n[a] * disp[a][0];
                        y[1] += n[a] * disp[a][1];
                    }
                    let cp = grid.locate(y)?;
                    out.push((grid.cell_dofs(cp.ci, cp.cj), cp.shape()));
                }
                Ok(out)
            })
            .collect();
        let mut dofs = Vec::with_capacity(quadrature_len(&grid));
        let mut shape = Vec::with_capacity(quadrature_len(&grid));
        for cell in per_cell {
            for (d, s) in cell? {
                dofs.push(d);
                shape.push(s);
            }
        }
        Ok(Self { dofs, shape })
    }
}

/// Weighted mass matrix
/// `M[w, Phi, Psi]_ij = sum_l sum_q w_q^l w(x_q^l) (xi^i o Phi)(x_q^l) (xi^j o Psi)(x_q^l)`
/// over the scalar dofs of the grid.
pub fn assemble_mass_matrix(
    weight: &[f64],
    phi: &Deformation,
    psi: &Deformation,
) -> Result<SparseBlock> {
    phi.grid().ensure_same(psi.grid())?;
    let rows = DeformedPoints::new(phi)?;
    let cols = if phi == psi { rows.clone() } else { DeformedPoints::new(psi)? };
    assemble_from_points(phi.grid(), weight, &rows, &cols)
}

pub fn assemble_from_points(
    grid: &Grid,
    weight: &[f64],
    rows: &DeformedPoints,
    cols: &DeformedPoints,
) -> Result<SparseBlock> {
    let len = quadrature_len(grid);
    if weight.len() != len {
        return Err(Error::GridMismatch(format!(
            "expected {len} quadrature weights, got {}",
            weight.len()
        )));
    }
    if let Some(k) = weight.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFiniteWeight {
            cell: k / POINTS_PER_CELL,
            point: k % POINTS_PER_CELL,
        });
    }
    let quad = CellQuadrature::new(grid);
    let triplets: Vec<(usize, usize, f64)> = (0..grid.num_cells())
        .into_par_iter()
        .flat_map_iter(|cell| {
            let mut local = Vec::with_capacity(POINTS_PER_CELL * 16);
            for q in 0..POINTS_PER_CELL {
                let k = cell * POINTS_PER_CELL + q;
                let w = quad.weights[q] * weight[k];
                if w == 0.0 {
                    continue;
                }
                for a in 0..4 {
                    let ra = w * rows.shape[k][a];
                    if ra == 0.0 {
                        continue;
                    }
                    for b in 0..4 {
                        let v = ra * cols.shape[k][b];
                        if v != 0.0 {
                            local.push((rows.dofs[k][a], cols.dofs[k][b], v));
                        }
                    }
                }
            }
            local
        })
        .collect();
    let n = grid.num_dofs();
    Ok(SparseBlock::from_triplets(n, n, triplets))
}

/// Per-quadrature-point weights derived from a deformation.
pub mod weights {
    use super::*;

    pub fn ones(grid: &Grid) -> Vec<f64> {
        vec![1.0; quadrature_len(grid)]
    }

    /// `det D phi` at every quadrature point, using the integrating cell.
    pub fn jacobian_det(phi: &Deformation) -> Vec<f64> {
        map_jacobian(phi, |j| det2(&j))
    }

    pub fn jacobian_det_squared(phi: &Deformation) -> Vec<f64> {
        map_jacobian(phi, |j| {
            let d = det2(&j);
            d * d
        })
    }

    /// `|phi - id|^2` at every quadrature point.
    pub fn displacement_sq(phi: &Deformation) -> Vec<f64> {
        let grid = *phi.grid();
        let quad = CellQuadrature::new(&grid);
        let mut out = Vec::with_capacity(quadrature_len(&grid));
        for cell in 0..grid.num_cells() {
            let (ci, cj) = grid.cell_coords(cell);
            let disp = phi.cell_displacements(ci, cj);
            for n in quad.shape.iter() {
                let mut d = [0.0; 2];
                for a in 0..4 {
                    d[0] += n[a] * disp[a][0];
                    d[1] += n[a] * disp[a][1];
                }
                out.push(d[0] * d[0] + d[1] * d[1]);
            }
        }
        out
    }

    pub fn map_jacobian(phi: &Deformation, f: impl Fn([[f64; 2]; 2]) -> f64) -> Vec<f64> {
        let grid = *phi.grid();
        let quad = CellQuadrature::new(&grid);
        let mut out = Vec::with_capacity(quadrature_len(&grid));
        for cell in 0..grid.num_cells() {
            let (ci, cj) = grid.cell_coords(cell);
            for q in 0..POINTS_PER_CELL {
                let [s, t] = quad.rule.points[q];
                out.push(f(phi.jacobian_in_cell(ci, cj, s, t)));
            }
        }
        out
    }
}
