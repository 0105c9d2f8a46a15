//! Recurrent point process for arrivals.

pub mod head;
pub mod model;

pub use head::{IntensityHead, QuadConfig};
pub use model::{train, RppConfig, RppModel, RppState};
