use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Backend, GenResult, ModelSpec};
use crate::data::AnswerKey;
use crate::error::{BackendError, Error, Result};
use crate::evalkit::normalize_text;

fn default_distractors() -> Vec<String> {
    ["unsure", "unknown", "undetermined", "unclear"]
        .into_iter()
        .map(String::from)
        .collect()
}

fn default_filler() -> String {
    "step".into()
}

/// Behavior of a simulated specialist model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecialistProfile {
    /// Task tag to probability of producing the gold answer.
    pub skill: BTreeMap<String, f64>,
    /// Output length in tokens; responses are padded with `filler` up to this.
    pub out_tokens: usize,
    #[serde(default = "default_distractors", rename = "distractors")]
    pub wrong_answer_vocabulary: Vec<String>,
    #[serde(default = "default_filler")]
    pub filler: String,
}

impl SpecialistProfile {
    pub fn validate(&self) -> Result<()> {
        for (task, p) in &self.skill {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!(
                    "skill for task {task:?} must be in [0, 1], got {p}"
                )));
            }
        }
        if self.out_tokens < 1 {
            return Err(Error::Config("out_tokens must be at least 1".into()));
        }
        if self.filler.split_whitespace().count() != 1 {
            return Err(Error::Config("filler must be a single token".into()));
        }
        Ok(())
    }

    pub fn skill_for(&self, task: &str) -> f64 {
        self.skill.get(task).copied().unwrap_or(0.0)
    }
}

/// Desk-scale stand-in for a specialized small LLM.
///
/// The backend locates the original query by scanning the input lines for an
/// entry in the shared answer key. With probability `skill[task]` it answers
/// with the first reference answer, otherwise with a distractor that never
/// normalizes to any reference. Either way the response is padded to
/// `out_tokens` tokens. Unknown queries always get a distractor.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    spec: ModelSpec,
    profile: SpecialistProfile,
    key: Arc<AnswerKey>,
}

impl SimulatedBackend {
    pub fn new(spec: ModelSpec, profile: SpecialistProfile, key: Arc<AnswerKey>) -> Result<Self> {
        profile.validate()?;
        Ok(SimulatedBackend { spec, profile, key })
    }

    pub fn from_spec(spec: &ModelSpec, key: Arc<AnswerKey>) -> Result<Self> {
        let profile: SpecialistProfile = serde_json::from_value(spec.params.clone())
            .map_err(|e| Error::Config(format!("model {}: {e}", spec.name)))?;
        SimulatedBackend::new(spec.clone(), profile, key)
    }

    pub fn profile(&self) -> &SpecialistProfile {
        &self.profile
    }

    fn distractor(&self, answers: &[String], rng: &mut dyn RngCore) -> String {
        let gold: Vec<String> = answers.iter().map(|a| normalize_text(a)).collect();
        let allowed: Vec<&String> = self
            .profile
            .wrong_answer_vocabulary
            .iter()
            .filter(|d| !gold.contains(&normalize_text(d)))
            .collect();
        if allowed.is_empty() {
            let fallback = "unanswerable";
            return if gold.iter().any(|g| g == fallback) {
                "no".into()
            } else {
                fallback.into()
            };
        }
        allowed[rng.random_range(0..allowed.len())].clone()
    }

    fn pad(&self, answer: &str) -> String {
        let mut text = answer.trim().to_string();
        let mut n = text.split_whitespace().count();
        while n < self.profile.out_tokens {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&self.profile.filler);
            n += 1;
        }
        text
    }
}

impl Backend for SimulatedBackend {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn generate(&self, input: &str, rng: &mut dyn RngCore) -> Result<GenResult, BackendError> {
        if input.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let entry = input.lines().find_map(|l| self.key.get(l.trim()));
        let draw: f64 = rng.random();
        let answer = match entry {
            Some(e) if draw < self.profile.skill_for(&e.task) => e.answers[0].clone(),
            Some(e) => self.distractor(&e.answers, rng),
            None => self.distractor(&[], rng),
        };
        Ok(GenResult::counted(input, self.pad(&answer)))
    }
}
