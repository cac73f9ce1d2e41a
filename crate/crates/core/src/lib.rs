//! Multi-agent play alignment and retrieval for tracking data.
//!
//! Plays are fixed-length windows of player and ball trajectories. A tree of
//! per-team templates orders each team's agents consistently, and the leaf a
//! play reaches doubles as its hash key for retrieval.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the coordinate type.

pub mod assignment;
pub mod ingest;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod scalar;
pub mod template;
pub mod tree;

pub use assignment::{align_play, solve_assignment, CostMetric};
pub use model::{AgentSelection, GameId, PermutationMap, PlayId, RosterConfig, Team, TeamPerms};
pub use retrieval::{build_index, build_window_index, IndexConfig, Method};
pub use scalar::Scalar;
pub use template::{learn_template, TemplateLearnConfig};
pub use tree::{align_with_tree, grow_tree, KRange, TreeConfig};

pub type Play32 = model::Play<f32>;
pub type Play64 = model::Play<f64>;
pub type Template32 = model::Template<f32>;
pub type Template64 = model::Template<f64>;
pub type Tree32 = tree::AlignmentTree<f32>;
pub type Tree64 = tree::AlignmentTree<f64>;
pub type WindowIndex32 = retrieval::WindowIndex<f32>;
pub type WindowIndex64 = retrieval::WindowIndex<f64>;
pub type PlayIndex32 = retrieval::PlayIndex<f32>;
pub type PlayIndex64 = retrieval::PlayIndex<f64>;
pub type Query32 = retrieval::Query<f32>;
pub type Query64 = retrieval::Query<f64>;
