//! Adversarial service models: a static generator and two recurrent ones,
//! trained against a critic with the Wasserstein objective.

pub mod model;
pub mod penalties;

pub use model::{predict_adv, train_adversarial, train_adversarial_data, AdvConfig, AdvModel, GenState, Generator, Selection, Variant};
pub use penalties::{censor_penalty, lipschitz_penalty, match_penalty, wasserstein_loss, ObjectiveParts};
