use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the unit square")]
    OutOfDomain { x: f64, y: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite weight at cell {cell}, quadrature point {point}")]
    NonFiniteWeight { cell: usize, point: usize },

    #[error("energy is infinite (deformation is not orientation preserving)")]
    InfiniteEnergy,

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular matrix (pivot magnitude {pivot:e})")]
    Singular { pivot: f64 },

    #[error("deformation is not diffeomorphic along the discrete path (det = {det:e})")]
    NotDiffeomorphic { det: f64 },

    #[error("no feasible KKT point found")]
    NoKktPoint,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
