//! Question-guided navigation over document trees with Q-learning agents.

pub mod baselines;
pub mod dataset;
pub mod doctree;
pub mod env;
pub mod error;
pub mod eval;
pub mod parallel;
pub mod qnet;
pub mod reader;
pub mod replay;
pub mod seed;
pub mod text;
pub mod train;

pub use error::{Error, Result};
