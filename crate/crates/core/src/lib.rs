//! Offline reinforcement learning for adaptive policy retrieval over a
//! synthetic prior-authorization corpus.

pub mod corpus;
pub mod embed;
pub mod env;
pub mod eval;
pub mod error;
pub mod neural;
pub mod offline;
pub mod pipeline;
pub mod trainers;

pub use error::{Error, Result};
