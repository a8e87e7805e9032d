//! Desk-scale gradient-flow laboratory for positively homogeneous binary
//! classifiers.
//!
//! The crate simulates late-phase classification training with a
//! loss-normalized descent scheme, instruments every trajectory with margin,
//! alignment, and path-length diagnostics, and ships independent oracles
//! (polytope distance, matrix games, sphere covering) that check the expected
//! limiting behavior: directional convergence, gradient alignment, and margin
//! maximization.

pub mod flow;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod params;
pub mod verify;

pub use flow::{FlowConfig, FlowError, FlowState, Trajectory};
pub use losses::{LossKind, MarginSnapshot};
pub use metrics::MetricsRecord;
pub use models::{Example, NtkBase, PredictorSpec};
pub use params::{ParamVec, RadialSpherical, Segment};
