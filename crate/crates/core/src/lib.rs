//! Simulates how a parameterized space-borne imaging system would have
//! captured existing overhead imagery, and scores the result.

pub mod error;
pub mod formats;
pub mod harness;
pub mod imaging;
pub mod fourier;
pub mod optics;
pub mod pipeline;
pub mod radiometry;
pub mod recognition;
pub mod utility;

pub use error::{Error, Result};
