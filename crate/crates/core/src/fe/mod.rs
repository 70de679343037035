//! Regular grids on the unit square, piecewise bilinear fields, Simpson
//! quadrature and weighted mass matrices.

mod field;
mod grid;
mod mass;
mod quadrature;
mod sparse;

pub use field::{det2, prolongate, prolongate_deformation, restrict, Deformation, ImageField};
pub use grid::{bilinear_shape, bilinear_shape_grad, Boundary, CellPoint, Grid, DOMAIN_TOLERANCE};
pub use mass::{assemble_from_points, assemble_mass_matrix, weights, DeformedPoints};
pub use quadrature::{quadrature_len, CellQuadrature, QuadratureRule, POINTS_PER_CELL};
pub use sparse::SparseBlock;
