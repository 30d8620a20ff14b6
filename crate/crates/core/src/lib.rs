pub mod analysis;
pub mod cli;
pub mod ddouble;
pub mod diffkernel;
pub mod error;
pub mod feature;
pub mod io;
pub mod metrics;
pub mod protoseg;

pub use error::{Error, Result};
