//! Dataset ingestion, capping and train/test splitting.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_CAP: usize = 300;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

/// One query with its reference answers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub query: String,
    pub answers: Vec<String>,
    pub task: String,
}

impl Example {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("query is empty".into());
        }
        if self.answers.is_empty() {
            return Err("answers is empty".into());
        }
        Ok(())
    }

    fn canonical_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.task.as_bytes());
        h.update([0]);
        h.update(self.query.as_bytes());
        for a in &self.answers {
            h.update([0]);
            h.update(a.as_bytes());
        }
        h.finalize().into()
    }
}

/// Lookup from a (trimmed) query line to its example.
#[derive(Debug, Clone, Default)]
pub struct AnswerKey {
    entries: HashMap<String, Example>,
}

impl AnswerKey {
    pub fn from_examples(examples: &[Example]) -> Self {
        let entries = examples
            .iter()
            .map(|e| (e.query.trim().to_string(), e.clone()))
            .collect();
        AnswerKey { entries }
    }

    pub fn get(&self, query: &str) -> Option<&Example> {
        self.entries.get(query)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads a JSON-lines dataset. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let ex: Example = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        ex.validate().map_err(parse_err)?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex).expect("example serializes");
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Seeded shuffle, truncate to `cap`, then split off the first
/// `floor(n * train_fraction)` examples for training.
///
/// Examples are first put into canonical hash order, so the result does not
/// depend on input order.
pub fn cap_and_split(
    examples: &[Example],
    cap: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut keyed: Vec<([u8; 32], &Example)> =
        examples.iter().map(|e| (e.canonical_hash(), e)).collect();
    keyed.sort_by_key(|a| a.0);
    let mut ordered: Vec<Example> = keyed.into_iter().map(|(_, e)| e.clone()).collect();
    ordered.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ordered.truncate(cap);
    let n_train = (ordered.len() as f64 * train_fraction).floor() as usize;
    let test = ordered.split_off(n_train);
    Ok((ordered, test))
}
