//! Expert-to-GPU placement optimization for Mixture-of-Experts serving.
//!
//! The library turns token-routing statistics into an optimized expert
//! placement in three steps:
//!
//! 1. [`trace`] — capture (or synthesize) per-layer expert loads and
//!    inter-layer expert transition counts.
//! 2. [`cluster`] — partition each layer's experts into per-GPU clusters
//!    with balanced token processing load.
//! 3. [`place`] — assign each layer's clusters to GPUs, minimizing the
//!    worst bandwidth-normalized token volume over GPU pairs.
//!
//! [`cost`] scores any placement with an analytical latency model and
//! compares it against the contiguous baseline; [`topology`] describes the
//! GPU fleet and its interconnect bandwidths.

pub mod cluster;
pub mod cost;
pub mod place;
pub mod topology;
pub mod trace;

pub use cluster::Clustering;
pub use cost::{CostParams, CostReport};
pub use place::{CommCostTensor, Placement};
pub use topology::Topology;
pub use trace::{RoutingStats, TraceGenSpec};
