use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::RngCore;
use serde::Deserialize;

use super::{Backend, GenResult, ModelSpec};
use crate::error::{BackendError, Error, Result};

/// Scripted input-to-output mapping.
///
/// A key matches when it equals the whole input, or else when it equals one
/// of the input's trimmed lines (so a script can be keyed on the query while
/// layer prompts and earlier responses surround it). Exact matches win; among
/// line matches the earliest line wins.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct ReplayScript {
    #[serde(default)]
    pub entries: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayParams {
    #[serde(default)]
    script: BTreeMap<String, String>,
    /// JSON-lines file of `{"input": ..., "output": ...}` records.
    #[serde(default)]
    script_path: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ScriptLine {
    input: String,
    output: String,
}

impl ReplayScript {
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        ReplayScript {
            entries: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    pub fn lookup(&self, input: &str) -> Option<&str> {
        if let Some(v) = self.entries.get(input) {
            return Some(v);
        }
        input
            .lines()
            .find_map(|line| self.entries.get(line.trim()))
            .map(String::as_str)
    }
}

/// Deterministic record/replay backend. Never fabricates text.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    spec: ModelSpec,
    script: ReplayScript,
}

impl ReplayBackend {
    pub fn new(spec: ModelSpec, script: ReplayScript) -> Self {
        ReplayBackend { spec, script }
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let params: ReplayParams = if spec.params.is_null() {
            ReplayParams {
                script: BTreeMap::new(),
                script_path: None,
            }
        } else {
            serde_json::from_value(spec.params.clone())
                .map_err(|e| Error::Config(format!("model {}: {e}", spec.name)))?
        };
        let mut entries = params.script;
        if let Some(path) = params.script_path {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ScriptLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(rec.input, rec.output);
            }
        }
        Ok(ReplayBackend::new(spec.clone(), ReplayScript { entries }))
    }
}

impl Backend for ReplayBackend {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn generate(&self, input: &str, _rng: &mut dyn RngCore) -> Result<GenResult, BackendError> {
        if input.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let text = self
            .script
            .lookup(input)
            .ok_or_else(|| BackendError::Unscripted(input.chars().take(80).collect()))?;
        Ok(GenResult::counted(input, text.to_string()))
    }
}
