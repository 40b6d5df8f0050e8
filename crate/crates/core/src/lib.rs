pub mod error;
pub mod assumptions;
pub mod bounds;
pub mod cache;
pub mod diagonalizer;
pub mod dispersive;
pub mod expr;
pub mod fit;
pub mod fresnel;
pub mod jet;
pub mod linalg;
pub mod oscillatory;
pub mod ode;
pub mod quad;
pub mod runner;
pub mod propagator;
pub mod spectral;
pub mod symbol;
pub mod systems;

pub use error::{Error, Result};
