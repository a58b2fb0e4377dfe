//! Consensus-on-measurement distributed filtering with mismatched noise
//! covariances.
//!
//! Three covariance indices are propagated side by side for every sensor:
//! the standard index `Σ` (actual covariances known), the nominal index `Σf`
//! (what the filter computes) and the true error covariance `Σt` of the
//! nominal filter. The modules compare them one step at a time, recursively
//! and in steady state.

pub mod analysis;
pub mod error;
pub mod filter;
pub mod generate;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod network;
pub mod stats;
pub mod steady_state;

pub use analysis::{ClassifyOptions, OneStep, PhiSet, RelationReport, TheoremId};
pub use error::{Error, Result};
pub use filter::{Cmdf, FilterState, IndexPropagator, IndexTriple};
pub use linalg::{LoewnerOrdering, LoewnerVerdict, Matrix, SymMatrix, Vector};
pub use model::{NoiseSpec, StackedOperators, SystemModel};
pub use montecarlo::{McConfig, McReport};
pub use network::{ConsensusMatrix, NeighborConvention, Topology};
pub use steady_state::{IterOptions, SteadyState};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
