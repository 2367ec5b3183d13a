//! Cost-aware multi-hop routing of queries across a pool of language-model
//! backends, with a PPO-trained routing policy.

pub mod backends;
pub mod config;
pub mod data;
pub mod encoder;
pub mod env;
pub mod error;
pub mod evalkit;
pub mod policy;
pub mod ppo;
pub mod report;
pub mod scenario;
pub mod seed;
pub mod simulation;

pub use error::{BackendError, Error, Result};
