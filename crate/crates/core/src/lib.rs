pub mod error;
pub mod barycenter;
pub mod bb;
pub mod energy;
pub mod fe;
pub mod geodesic;
pub mod linalg;
pub mod oracles;

pub use error::{Error, Result};
