//! Deep queueing toolkit: a recurrent point process for customer arrivals,
//! censored neural and adversarial service-time models, a mempool variant,
//! synthetic G/G/inf generators, and distributional evaluation.

pub mod adv;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod eventlog;
pub mod mempool;
pub mod nn;
pub mod nsx;
pub mod quad;
pub mod rng;
pub mod rpp;
pub mod service;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
