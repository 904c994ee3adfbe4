//! Radiative transfer solvers and single-functional source reconstruction
//! for ultrasound modulated bioluminescence tomography in two dimensions.

pub mod error;
pub mod grid;
pub mod medium;
pub mod transport;
pub mod functional;
pub mod inversion;
pub mod phantoms;

pub use error::{Error, Result};
