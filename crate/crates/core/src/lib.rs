//! Secret key rates for QKD over quantum repeater chains whose elementary
//! links carry repetition-code encoded Bell pairs.

pub mod cache;
pub mod chain;
pub mod codes;
pub mod dmat;
pub mod error;
pub mod keyrate;
pub mod params;
pub mod scalar;
pub mod throughput;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use params::ErrorParams;
pub use scalar::{Poly, Scalar};
