//! Ground-truth generators for synthetic queues.

pub mod dataset;
pub mod hawkes;
pub mod phase_type;
pub mod ps;

pub use dataset::{make_dataset, make_trace, sample_services, DatasetSpec, DatasetFamily, ServiceLaw};
pub use hawkes::{simulate_hawkes, simulate_nonlinear_hawkes, HawkesSpec, Link};
pub use phase_type::{sample_phase_type, PhaseTypeSpec};
pub use ps::simulate_ps_queue;
