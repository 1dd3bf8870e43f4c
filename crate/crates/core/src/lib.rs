//! Latent neural ODE reconciliation of irregularly sampled, multi-rate
//! distribution-grid measurements.

pub mod diffcore;
pub mod error;
pub mod eval;
pub mod griddata;
pub mod lode;
pub mod odesolve;
pub mod rng;
pub mod workflow;

pub use error::{Error, Result};
