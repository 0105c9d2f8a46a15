//! Numeric substrate: reverse-mode tape, parameter storage, layers, Adam and
//! checkpoints. All arithmetic is `f64`.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use layers::{Dense, Gru, LayerKind, LayerSpec, Lstm, Mlp};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{Gradients, Tape, Unary, Var};

pub use crate::special::softplus;

/// Zeroes grads, runs a backward sweep from `loss` and accumulates into `store`.
pub fn backprop(tape: &Tape, loss: Var, store: &mut ParamStore) {
    store.zero_grad();
    tape.backward(loss).accumulate(store);
}

/// Per-epoch losses recorded by the training loops.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Held-out loss per epoch; empty when no validation data was given.
    pub val_loss: Vec<f64>,
}

/// Maps a non-finite step into a divergence error carrying `last_good`.
pub(crate) fn diverged(stage: &str, epoch: usize, last_good: &ParamStore) -> crate::Error {
    log::error!("{stage}: non-finite loss or gradient at epoch {epoch}");
    crate::Error::Diverged {
        stage: stage.to_string(),
        epoch,
        last_good: Some(Box::new(last_good.clone())),
    }
}
