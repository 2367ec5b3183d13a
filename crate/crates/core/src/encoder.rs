//! State featurization: context embedding, stage embedding and cost scalar.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::RoutingState;
use crate::error::{Error, Result};
use crate::policy::PolicyParameters;

fn default_kind() -> String {
    "hashing".into()
}
fn default_embed_dim() -> usize {
    64
}
fn default_max_context_tokens() -> usize {
    512
}
fn default_cost_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Registry key of the text embedder.
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_max_context_tokens")]
    pub max_context_tokens: usize,
    #[serde(default)]
    pub hash_seed: u64,
    /// Multiplier applied to the cumulative-cost feature.
    #[serde(default = "default_cost_scale")]
    pub cost_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: default_kind(),
            embed_dim: default_embed_dim(),
            max_context_tokens: default_max_context_tokens(),
            hash_seed: 0,
            cost_scale: default_cost_scale(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("encoder.embed_dim must be at least 1".into()));
        }
        if !self.cost_scale.is_finite() {
            return Err(Error::Config("encoder.cost_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        2 * self.embed_dim + 1
    }
}

/// Maps text to a fixed-length vector. Implementations must be pure.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing over the most recent whitespace tokens, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    max_tokens: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, max_tokens: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder {
            dim,
            max_tokens,
            seed,
        }
    }

    // FNV-1a over seed bytes then token bytes.
    fn hash(&self, token: &str) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for b in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(PRIME);
        }
        // final avalanche so low bits (bucket) and the top bit (sign) decorrelate
        h ^= h >> 33;
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
        h
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let start = tokens.len().saturating_sub(self.max_tokens);
        let mut v = vec![0.0; self.dim];
        let mut counts = vec![0.0; self.dim];
        for tok in &tokens[start..] {
            let h = self.hash(tok);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
            counts[bucket] += 1.0;
        }
        // signed collisions can cancel out completely; fall back to plain counts
        if v.iter().all(|x| *x == 0.0) {
            v = counts;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub type EmbedderFactory = Box<dyn Fn(&EncoderConfig) -> Result<Arc<dyn Embedder>> + Send + Sync>;

/// Embedder implementations keyed by `EncoderConfig::kind`.
pub struct EmbedderRegistry {
    factories: BTreeMap<String, EmbedderFactory>,
}

impl Default for EmbedderRegistry {
    fn default() -> Self {
        let mut reg = EmbedderRegistry {
            factories: BTreeMap::new(),
        };
        reg.register("hashing", |cfg| {
            Ok(Arc::new(HashingEmbedder::new(
                cfg.embed_dim,
                cfg.max_context_tokens,
                cfg.hash_seed,
            )))
        });
        reg
    }
}

impl EmbedderRegistry {
    pub fn register<F>(&mut self, kind: impl Into<String>, factory: F)
    where
        F: Fn(&EncoderConfig) -> Result<Arc<dyn Embedder>> + Send + Sync + 'static,
    {
        self.factories.insert(kind.into(), Box::new(factory));
    }

    pub fn build(&self, cfg: &EncoderConfig) -> Result<StateEncoder> {
        cfg.validate()?;
        let factory = self
            .factories
            .get(&cfg.kind)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "embedder",
                name: cfg.kind.clone(),
                known: self.factories.keys().cloned().collect::<Vec<_>>().join(", "),
            })?;
        let embedder = factory(cfg)?;
        if embedder.dim() != cfg.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "embedder {} produces {} dims, config says {}",
                cfg.kind,
                embedder.dim(),
                cfg.embed_dim
            )));
        }
        Ok(StateEncoder {
            embedder,
            cfg: cfg.clone(),
        })
    }
}

/// Policy input: `[context embedding (d) | stage row (d) | scaled cost]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub vector: Vec<f64>,
    /// Hop index whose stage row fills the middle block.
    pub depth: usize,
}

impl StateFeatures {
    pub fn embed_dim(&self) -> usize {
        (self.vector.len() - 1) / 2
    }

    pub fn context_block(&self) -> &[f64] {
        &self.vector[..self.embed_dim()]
    }

    pub fn stage_block(&self) -> &[f64] {
        let d = self.embed_dim();
        &self.vector[d..2 * d]
    }

    pub fn cost_feature(&self) -> f64 {
        self.vector[self.vector.len() - 1]
    }
}

#[derive(Clone)]
pub struct StateEncoder {
    embedder: Arc<dyn Embedder>,
    cfg: EncoderConfig,
}

impl std::fmt::Debug for StateEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateEncoder").field("cfg", &self.cfg).finish()
    }
}

impl StateEncoder {
    pub fn new(embedder: Arc<dyn Embedder>, cfg: EncoderConfig) -> Self {
        StateEncoder { embedder, cfg }
    }

    pub fn hashing(cfg: &EncoderConfig) -> Result<Self> {
        EmbedderRegistry::default().build(cfg)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        self.embedder.embed(text)
    }

    pub fn encode_state(&self, state: &RoutingState, params: &PolicyParameters) -> Result<StateFeatures> {
        let d = self.cfg.embed_dim;
        if params.dims().embed_dim != d {
            return Err(Error::ShapeMismatch(format!(
                "policy expects embed_dim {}, encoder has {d}",
                params.dims().embed_dim
            )));
        }
        let stage = params
            .stage_row(state.depth)
            .ok_or(Error::DepthOutOfRange {
                depth: state.depth,
                max_hops: params.dims().stages,
            })?;
        let mut vector = Vec::with_capacity(2 * d + 1);
        vector.extend(self.embedder.embed(&state.context));
        vector.extend_from_slice(stage);
        vector.push(state.cum_cost * self.cfg.cost_scale);
        if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue(format!("state feature {i}")));
        }
        Ok(StateFeatures {
            vector,
            depth: state.depth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;
    use proptest::prelude::*;

    fn encoder(d: usize) -> StateEncoder {
        StateEncoder::hashing(&EncoderConfig {
            embed_dim: d,
            ..EncoderConfig::default()
        })
        .unwrap()
    }

    fn params(d: usize) -> PolicyParameters {
        PolicyParameters::init(
            PolicyDims {
                embed_dim: d,
                hidden: 8,
                actions: 3,
                stages: 2,
            },
            7,
        )
    }

    #[test]
    fn empty_text_is_zero() {
        assert_eq!(encoder(8).embed_text(""), vec![0.0; 8]);
        assert_eq!(encoder(8).embed_text("  \n"), vec![0.0; 8]);
    }

    #[test]
    fn truncation_keeps_recent_tokens() {
        let e = HashingEmbedder::new(16, 2, 0);
        assert_eq!(e.embed("old words here now"), e.embed("here now"));
        assert_ne!(e.embed("old words here now"), e.embed("old words"));
    }

    #[test]
    fn seed_changes_embedding() {
        let a = HashingEmbedder::new(16, 512, 0).embed("hello world again");
        let b = HashingEmbedder::new(16, 512, 1).embed("hello world again");
        assert_ne!(a, b);
    }

    #[test]
    fn encode_state_layout() {
        let enc = encoder(4);
        let p = params(4);
        let s0 = RoutingState::new("what is 2+2?").unwrap();
        let f0 = enc.encode_state(&s0, &p).unwrap();
        assert_eq!(f0.vector.len(), 9);
        assert_eq!(f0.cost_feature(), 0.0);
        assert_eq!(f0.stage_block(), p.stage_row(0).unwrap());

        let s1 = RoutingState {
            depth: 1,
            ..s0.clone()
        };
        let f1 = enc.encode_state(&s1, &p).unwrap();
        assert_eq!(f0.context_block(), f1.context_block());
        assert_eq!(f0.cost_feature(), f1.cost_feature());
        assert_ne!(f0.stage_block(), f1.stage_block());
    }

    #[test]
    fn depth_out_of_range() {
        let s = RoutingState {
            context: "x".into(),
            depth: 2,
            cum_cost: 0.0,
        };
        assert!(matches!(
            encoder(4).encode_state(&s, &params(4)),
            Err(Error::DepthOutOfRange { depth: 2, .. })
        ));
    }

    #[test]
    fn unknown_kind() {
        let cfg = EncoderConfig {
            kind: "mpnet".into(),
            ..EncoderConfig::default()
        };
        assert!(matches!(
            EmbedderRegistry::default().build(&cfg),
            Err(Error::UnknownStrategy { .. })
        ));
    }

    proptest! {
        #[test]
        fn nonempty_text_has_unit_norm(words in proptest::collection::vec("[a-z0-9]{1,6}", 1..40)) {
            let text = words.join(" ");
            let v = encoder(64).embed_text(&text);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
            prop_assert_eq!(v, encoder(64).embed_text(&text));
        }
    }
}
