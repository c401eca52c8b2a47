//! Numerical laboratory for a horseshoe with a cubic tangency.

pub mod basemap;
pub mod cones;
pub mod critmap;
pub mod error;
pub mod hyper;
pub mod manifolds;
pub mod params;
pub mod real;
pub mod symbolic;
pub mod thermo;

pub use error::{LabError, Result};
