//! Symbolic regression by deep reinforcement learning.
//!
//! Expressions are pre-order traversals of operator trees. A single-layer
//! LSTM policy samples traversals autoregressively under in-situ constraint
//! masking; sampled expressions get their constants fitted by BFGS, are
//! scored with a squashed NRMSE reward, and the policy is trained with a
//! risk-seeking REINFORCE update. A tournament-selection genetic-programming
//! baseline and a benchmark harness round out the crate.

pub mod benchmarks;
pub mod campaign;
pub mod constopt;
pub mod dataset;
pub mod error;
pub mod expr;
pub mod gp;
pub mod infix;
pub mod policy;
pub mod sampler;
pub mod token;
pub mod trainer;

pub use dataset::Dataset;
pub use error::CoreError;
pub use expr::Expression;
pub use token::{Library, Token};
