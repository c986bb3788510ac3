//! Photon-pair source, filter chain and trapped-ion heralded absorption:
//! Monte Carlo simulation and time-tag analysis.

pub mod budget;
pub mod error;
pub mod figures;
pub mod fit;
pub mod io;
pub mod ion;
pub mod model;
pub mod optics;
mod par;
pub mod pipeline;
pub mod rng;
pub mod source;
pub mod tagcorr;

pub use error::{Error, Result};
pub use par::configure_threads;
