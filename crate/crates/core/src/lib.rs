//! MuZero training with off-policy targets read greedily from search trees.

pub mod envs;
pub mod error;
pub mod harness;
pub mod mcts;
pub mod net;
pub mod replay;
pub mod trainer;

pub use error::{Error, Result};
