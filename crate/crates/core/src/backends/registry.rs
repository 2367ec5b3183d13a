use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Backend, ModelSpec, Pool, RemoteBackend, ReplayBackend, SimulatedBackend};
use crate::data::AnswerKey;
use crate::error::{Error, Result};

/// Shared inputs available to backend factories.
#[derive(Debug, Clone, Default)]
pub struct BuildContext {
    /// Reference answers simulated specialists may draw on.
    pub answer_key: Arc<AnswerKey>,
}

pub type BackendFactory =
    Box<dyn Fn(&ModelSpec, &BuildContext) -> Result<Arc<dyn Backend>> + Send + Sync>;

/// Backend implementations keyed by `ModelSpec::kind`.
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut reg = BackendRegistry::empty();
        reg.register("simulated", |spec, ctx| {
            Ok(Arc::new(SimulatedBackend::from_spec(spec, ctx.answer_key.clone())?))
        });
        reg.register("replay", |spec, _| Ok(Arc::new(ReplayBackend::from_spec(spec)?)));
        reg.register("remote", |spec, _| Ok(Arc::new(RemoteBackend::from_spec(spec)?)));
        reg
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registers (or replaces) the factory for `kind`.
    pub fn register<F>(&mut self, kind: impl Into<String>, factory: F)
    where
        F: Fn(&ModelSpec, &BuildContext) -> Result<Arc<dyn Backend>> + Send + Sync + 'static,
    {
        self.factories.insert(kind.into(), Box::new(factory));
    }

    pub fn kinds(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &ModelSpec, ctx: &BuildContext) -> Result<Arc<dyn Backend>> {
        spec.validate()?;
        let factory = self
            .factories
            .get(&spec.kind)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "backend kind",
                name: spec.kind.clone(),
                known: self.kinds().join(", "),
            })?;
        factory(spec, ctx)
    }

    pub fn build_pool(&self, specs: &[ModelSpec], ctx: &BuildContext) -> Result<Pool> {
        let backends = specs
            .iter()
            .map(|s| self.build(s, ctx))
            .collect::<Result<Vec<_>>>()?;
        Pool::new(backends)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn unknown_kind_lists_registered() {
        let reg = BackendRegistry::default();
        let spec = ModelSpec {
            name: "x".into(),
            base_rate: 0.002,
            kind: "gpu".into(),
            params: json!({}),
        };
        let err = reg.build(&spec, &BuildContext::default()).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("gpu") && msg.contains("simulated"), "{msg}");
    }

    #[test]
    fn custom_factory_is_selectable() {
        let mut reg = BackendRegistry::empty();
        reg.register("echo", |spec, _| {
            let script = super::super::ReplayScript::default();
            Ok(Arc::new(ReplayBackend::new(spec.clone(), script)))
        });
        let spec = ModelSpec {
            name: "e".into(),
            base_rate: 1.0,
            kind: "echo".into(),
            params: json!(null),
        };
        let b = reg.build(&spec, &BuildContext::default()).unwrap();
        assert_eq!(b.spec().name, "e");
    }

    #[test]
    fn duplicate_names_rejected() {
        let reg = BackendRegistry::default();
        let spec = ModelSpec {
            name: "dup".into(),
            base_rate: 0.002,
            kind: "replay".into(),
            params: json!({"script": {"q": "a"}}),
        };
        let err = reg
            .build_pool(&[spec.clone(), spec], &BuildContext::default())
            .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
