//! Neural service models: an MLP head emitting the parameters of a
//! parametric family, trained by censored maximum likelihood.

pub mod family;
pub mod model;

pub use family::Family;
pub use model::{loss_ns, Batch, predict_ns, train_ns, train_ns_data, NsConfig, NsxModel};
