//! Expanded-action reinforcement learning at desk scale.
//!
//! A small policy reasons in a token vocabulary and acts directly in
//! external environments (calculator, compare, swap) through routing
//! actions. Training uses counterfactual policy optimization with a GRPO
//! baseline; `sortlab` holds the exact oracles used to audit the sorting
//! strategies a trained policy discovers.

pub mod catalog;
pub mod envs;
pub mod error;
pub mod eval;
pub mod optim;
pub mod policy;
pub mod rollout;
pub mod sortlab;
pub mod tasks;

pub use catalog::{ActionCatalog, ActionId, ActionKind, EnvId, EnvKind, TokenId};
pub use error::{Error, Result};
