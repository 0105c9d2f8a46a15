//! Mempool variant: a backlog recurrence, a block-creation point process
//! driven by both histories, and a model of accepted counts per block.

pub mod model;
pub mod series;

pub use model::{train_mempool, MempoolConfig, MempoolModel, MempoolObjective, MempoolStates, MempoolVariant};
pub use series::{ingest_mempool_csv, read_mempool_csv, simulate_sawtooth, split_mempool, MempoolRecord, MempoolSeries};
