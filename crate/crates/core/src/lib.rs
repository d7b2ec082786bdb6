//! Pruning-space exploration for convolutional networks.
//!
//! The crate parametrizes populations of filter-pruned subnetworks by per-unit
//! pruning recipes, samples them under FLOPs / parameter / recipe-std / mCB
//! constraints, prunes and retrains a small CNN, and summarizes the resulting
//! populations.

pub mod arch;
pub mod builtin;
pub mod cost;
pub mod error;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod recipe;
pub mod spaces;

pub use arch::{ArchitectureSpec, LayerKind, LayerSpec, SubnetworkPlan};
pub use cost::CostReport;
pub use error::{Error, Result};
pub use recipe::{PruningRecipe, SpaceSpec};
