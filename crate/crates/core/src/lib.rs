//! Projected-Bellman policy iteration with a PSD-constrained quadratic
//! Q-function, applied to tuning the impedance parameters of a four-phase
//! prosthetic knee controller.

pub mod config;
pub mod driver;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod improver;
pub mod io;
pub mod matspace;
pub mod oracle;
pub mod plant;
pub mod valuefn;

pub use error::{Error, Result};
pub use nalgebra;
