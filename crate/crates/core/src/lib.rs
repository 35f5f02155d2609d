pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod mfie;
pub mod model;
pub mod msba;
pub mod objectives;
pub mod params;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
