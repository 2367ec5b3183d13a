//! The black-box generation/cost port and its implementations.
//!
//! Every backend turns an input text into a response plus token counts. The
//! cost of a call is `base_rate * (tokens_in + tokens_out)`; backends never
//! compute cost themselves, so the same formula applies to every kind.

mod registry;
mod remote;
mod replay;
mod simulated;

use std::collections::HashMap;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};

pub use registry::{BackendFactory, BackendRegistry, BuildContext};
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{ReplayBackend, ReplayScript};
pub use simulated::{SimulatedBackend, SpecialistProfile};

/// Descriptor of one model in the candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// Cost per token, in normalized cost units.
    pub base_rate: f64,
    /// Registry key of the backend implementation ("simulated", "replay", "remote").
    pub kind: String,
    /// Kind-specific parameters, decoded by the backend factory.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("model name is empty".into()));
        }
        if !(self.base_rate.is_finite() && self.base_rate > 0.0) {
            return Err(Error::Config(format!(
                "model {}: base_rate must be positive, got {}",
                self.name, self.base_rate
            )));
        }
        Ok(())
    }
}

/// One generation outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenResult {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl GenResult {
    /// Builds a result whose token counts follow the local counting rule.
    pub fn counted(input: &str, text: String) -> Self {
        GenResult {
            tokens_in: count_tokens(input),
            tokens_out: count_tokens(&text),
            text,
        }
    }
}

/// A model backend. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    fn generate(&self, input: &str, rng: &mut dyn RngCore) -> Result<GenResult, BackendError>;
}

/// Number of maximal whitespace-delimited chunks.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub fn estimate_cost(model: &ModelSpec, tokens_in: u64, tokens_out: u64) -> f64 {
    model.base_rate * (tokens_in + tokens_out) as f64
}

/// Ordered set of backends the router chooses among.
#[derive(Clone)]
pub struct Pool {
    backends: Vec<Arc<dyn Backend>>,
}

impl std::fmt::Debug for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl Pool {
    pub fn new(backends: Vec<Arc<dyn Backend>>) -> Result<Self> {
        if backends.is_empty() {
            return Err(Error::Config("model pool is empty".into()));
        }
        let mut seen = HashMap::new();
        for (i, b) in backends.iter().enumerate() {
            b.spec().validate()?;
            if let Some(prev) = seen.insert(b.spec().name.clone(), i) {
                return Err(Error::Config(format!(
                    "duplicate model name {:?} at positions {prev} and {i}",
                    b.spec().name
                )));
            }
        }
        Ok(Pool { backends })
    }

    pub fn len(&self) -> usize {
        self.backends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Arc<dyn Backend>> {
        self.backends.get(index)
    }

    pub fn names(&self) -> Vec<&str> {
        self.backends.iter().map(|b| b.spec().name.as_str()).collect()
    }

    pub fn specs(&self) -> impl Iterator<Item = &ModelSpec> {
        self.backends.iter().map(|b| b.spec())
    }
}
