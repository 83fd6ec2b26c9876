pub mod endpoints;
pub mod energies;
pub mod error;
pub mod fields;
pub mod fixtures;
pub mod pdhg;
pub mod rototrans;
pub mod spectral;

pub use error::{Error, Result};
