//! Point-and-read screen reading over Hierarchical Layout Trees.
//!
//! The pipeline turns a screenshot plus a pointed coordinate into a content
//! description and a layout description:
//!
//! 1. [`hierarchy`] builds a three-layer tree from region detections (or
//!    from a view-hierarchy dump via [`ashl`]).
//! 2. [`lens`] picks the local/global target path for the point and renders
//!    the two annotated lens images.
//! 3. [`describer`] sends the lenses and the prompt to a chat-vision model
//!    and splits the reply.
//!
//! [`eval`] scores screen readers with cycle-consistency tasks and
//! [`verify`] uses the reader to vet mobile-agent actions.

pub mod ashl;
pub mod config;
pub mod describer;
pub mod eval;
pub mod geometry;
pub mod hierarchy;
pub mod lens;
pub mod scalar;
pub mod verify;

pub use geometry::{iou, PointNorm, PointPx, Rect};
pub use hierarchy::{build_tree, HierarchicalLayoutTree, ScoredRegion, TreeConfig};
pub use scalar::Scalar;

/// Exact rational used by oracle comparisons.
pub type Exact = num_rational::Ratio<i64>;

pub type RougeScore = eval::rouge::RougeScore<f64>;
pub type ExactRougeScore = eval::rouge::RougeScore<Exact>;
pub type VerificationMetrics = verify::VerificationMetrics<f64>;
pub type ExactVerificationMetrics = verify::VerificationMetrics<Exact>;
