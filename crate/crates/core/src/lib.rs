//! Bistable lattice model of hierarchical predictive coding.
//!
//! Each layer `j` carries an activity `v_j` driven by feed-forward input from
//! below, error correction from above and top-down feedback. The crate covers
//! the homogeneous equilibria, the linear stability of those states, time
//! integration on truncated lattices, travelling-front speeds and the input
//! thresholds that separate propagation from failure.

pub mod equilibria;
pub mod error;
pub mod export;
pub mod lattice;
pub mod model;
mod parallel;
pub mod thresholds;
pub mod waves;

pub use equilibria::{Branch, BranchSet, FoldPoints};
pub use error::{Error, Result};
pub use lattice::{Direction, InputSignal, LatticeState, Method, Topology, TopologyKind};
pub use model::{CouplingParams, ParamSet, ParamValues, SigmoidParams};
