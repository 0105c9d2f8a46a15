//! Reference implementations used only by tests. Everything here is written
//! from first principles with plain loops, independent of the main crate.

pub mod fd;
pub mod linalg;
pub mod nets;
pub mod quad;
pub mod queue;
pub mod sampling;
pub mod special;
pub mod stats;
