pub mod error;
pub mod lattice;
pub mod spectral;
pub mod integrator;
pub mod observables;
pub mod nls;
pub mod correction;
pub mod run;

pub use error::{Error, Result};
