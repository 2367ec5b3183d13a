//! Self-contained simulation scenarios: synthetic specialists, a synthetic
//! task mix, and an analytic oracle over all static model sequences.
//!
//! Synthetic answers are single tokens that never occur in the query, in any
//! distractor or in any filler, so the quality of a final context is
//! `2 / (N + 1)` when the answer appears in it (N = normalized context length)
//! and 0 otherwise. That makes the expected net reward of every static
//! sequence a closed form over success probabilities and token counts.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{count_tokens, ModelSpec, SpecialistProfile};
use crate::data::Example;
use crate::encoder::EncoderConfig;
use crate::ppo::PpoConfig;
use crate::error::{Error, Result};
use crate::evalkit::normalize_text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioModel {
    pub name: String,
    pub base_rate: f64,
    pub profile: SpecialistProfile,
}

impl ScenarioModel {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            name: self.name.clone(),
            base_rate: self.base_rate,
            kind: "simulated".into(),
            params: serde_json::to_value(&self.profile).expect("profile serializes"),
        }
    }
}

fn d_examples() -> usize {
    300
}
fn d_hops() -> usize {
    2
}
fn d_alpha() -> f64 {
    crate::env::DEFAULT_ALPHA
}
fn d_repeats() -> usize {
    16
}
fn d_hidden() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Task tag to sampling weight.
    pub tasks: BTreeMap<String, f64>,
    pub specialists: Vec<ScenarioModel>,
    #[serde(default = "d_examples")]
    pub n_examples: usize,
    #[serde(default = "d_hops")]
    pub max_hops: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Greedy evaluation passes over the test split (fresh backend randomness each pass).
    #[serde(default = "d_repeats")]
    pub eval_repeats: usize,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
}

fn specialist(name: &str, rate: f64, skills: &[(&str, f64)], out: usize, filler: &str) -> ScenarioModel {
    ScenarioModel {
        name: name.into(),
        base_rate: rate,
        profile: SpecialistProfile {
            skill: skills.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
            out_tokens: out,
            wrong_answer_vocabulary: ["unsure", "unknown", "undetermined", "unclear"]
                .into_iter()
                .map(String::from)
                .collect(),
            filler: filler.into(),
        },
    }
}

impl Default for Scenario {
    /// Three specialists over {math, code}; no single model is best at both.
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            tasks: [("math".to_string(), 0.5), ("code".to_string(), 0.5)]
                .into_iter()
                .collect(),
            specialists: vec![
                specialist("math-specialist", 0.002, &[("math", 0.9), ("code", 0.1)], 12, "derive"),
                specialist("code-specialist", 0.003, &[("math", 0.1), ("code", 0.9)], 12, "compile"),
                specialist("generalist", 0.003, &[("math", 0.55), ("code", 0.55)], 12, "consider"),
            ],
            n_examples: d_examples(),
            max_hops: d_hops(),
            alpha: d_alpha(),
            eval_repeats: d_repeats(),
            ppo: PpoConfig::default(),
            encoder: EncoderConfig::default(),
            hidden: d_hidden(),
        }
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.specialists.is_empty() {
            return Err(Error::Config("scenario has no specialists".into()));
        }
        if self.tasks.is_empty() || self.tasks.values().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::Config("scenario task weights must be non-negative".into()));
        }
        if self.tasks.values().sum::<f64>() <= 0.0 {
            return Err(Error::Config("scenario task weights sum to zero".into()));
        }
        if self.max_hops == 0 || self.n_examples == 0 || self.eval_repeats == 0 {
            return Err(Error::Config(
                "scenario max_hops, n_examples and eval_repeats must be >= 1".into(),
            ));
        }
        self.ppo.validate()?;
        self.encoder.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("scenario hidden width must be >= 1".into()));
        }
        for m in &self.specialists {
            m.spec().validate()?;
            m.profile.validate()?;
        }
        Ok(())
    }

    pub fn model_specs(&self) -> Vec<ModelSpec> {
        self.specialists.iter().map(ScenarioModel::spec).collect()
    }

    /// Words that synthetic answers must avoid.
    fn reserved_words(&self) -> HashSet<String> {
        self.specialists
            .iter()
            .flat_map(|m| {
                m.profile
                    .wrong_answer_vocabulary
                    .iter()
                    .chain(std::iter::once(&m.profile.filler))
                    .map(|w| normalize_text(w))
            })
            .collect()
    }

    /// Generates `n_examples` distinct synthetic examples.
    pub fn generate_examples(&self, seed: u64) -> Result<Vec<Example>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reserved = self.reserved_words();
        let tags: Vec<(&String, f64)> = self.tasks.iter().map(|(t, w)| (t, *w)).collect();
        let total: f64 = tags.iter().map(|t| t.1).sum();
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.n_examples);
        let mut attempts = 0usize;
        while out.len() < self.n_examples {
            attempts += 1;
            if attempts > 100 * self.n_examples + 1000 {
                return Err(Error::Config(
                    "could not generate enough distinct synthetic examples".into(),
                ));
            }
            let mut u = rng.random::<f64>() * total;
            let mut task = tags[tags.len() - 1].0;
            for (t, w) in &tags {
                if u < *w {
                    task = t;
                    break;
                }
                u -= w;
            }
            let ex = synth_example(task, &mut rng);
            let answer = normalize_text(&ex.answers[0]);
            let query_words: HashSet<String> =
                normalize_text(&ex.query).split(' ').map(String::from).collect();
            if reserved.contains(&answer) || query_words.contains(&answer) {
                continue;
            }
            if seen.insert(ex.query.clone()) {
                out.push(ex);
            }
        }
        Ok(out)
    }
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

fn synth_example(task: &str, rng: &mut ChaCha8Rng) -> Example {
    let (query, answer) = match task {
        "math" => {
            let a = rng.random_range(10..100u32);
            let b = rng.random_range(10..100u32);
            (format!("math: compute the sum of {a} and {b}"), (a + b).to_string())
        }
        "code" => {
            let w = random_word(rng, 6);
            let rev: String = w.chars().rev().collect();
            (format!("code: write a function that reverses the string {w}"), rev)
        }
        other => {
            let id = rng.random_range(0..100_000u32);
            (format!("{other}: recall the key for item {id}"), random_word(rng, 7))
        }
    };
    Example {
        query,
        answers: vec![answer],
        task: task.to_string(),
    }
}

/// Analytic value of one static model sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticValue {
    pub sequence: Vec<usize>,
    pub models: Vec<String>,
    pub expected_quality: f64,
    pub expected_cost: f64,
    pub expected_net_reward: f64,
}

/// Closed-form expected quality, cost and net reward of every one of the
/// `M^L` static sequences, averaged over `examples`.
///
/// `layer_prompts` are the per-hop instructions prepended to backend input;
/// their tokens count toward input cost.
pub fn static_oracle(
    scenario: &Scenario,
    examples: &[Example],
    layer_prompts: &[String],
) -> Result<Vec<StaticValue>> {
    scenario.validate()?;
    let m = scenario.specialists.len();
    let l = scenario.max_hops;
    if layer_prompts.len() != l {
        return Err(Error::Config("one layer prompt per hop required".into()));
    }
    if examples.is_empty() {
        return Err(Error::Config("oracle needs at least one example".into()));
    }
    let reserved = scenario.reserved_words();
    for ex in examples {
        let ans = normalize_text(&ex.answers[0]);
        let q: HashSet<String> = normalize_text(&ex.query).split(' ').map(String::from).collect();
        if ans.contains(' ') || ans.is_empty() || reserved.contains(&ans) || q.contains(&ans) {
            return Err(Error::Domain(format!(
                "example {:?} violates the closed-form preconditions",
                ex.query
            )));
        }
    }
    for s in &scenario.specialists {
        if s.profile.wrong_answer_vocabulary.iter().any(|d| d.split_whitespace().count() != 1) {
            return Err(Error::Domain(format!("{}: distractors must be single tokens", s.name)));
        }
    }
    let prompt_tokens: Vec<f64> = layer_prompts.iter().map(|p| count_tokens(p) as f64).collect();

    let total = m.pow(l as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut seq = Vec::with_capacity(l);
        let mut c = code;
        for _ in 0..l {
            seq.push(c % m);
            c /= m;
        }
        seq.reverse();

        let mut q_sum = 0.0;
        let mut c_sum = 0.0;
        for ex in examples {
            let query_tokens = count_tokens(&ex.query) as f64;
            let query_norm = normalize_text(&ex.query).split(' ').filter(|t| !t.is_empty()).count() as f64;
            let mut context = query_tokens;
            let mut cost = 0.0;
            let mut miss = 1.0;
            let mut out_total = 0.0;
            for (hop, &idx) in seq.iter().enumerate() {
                let s = &scenario.specialists[idx];
                let out_tokens = s.profile.out_tokens as f64;
                cost += s.base_rate * (prompt_tokens[hop] + context + out_tokens);
                context += out_tokens;
                out_total += out_tokens;
                miss *= 1.0 - s.profile.skill_for(&ex.task);
            }
            let n = query_norm + out_total;
            q_sum += (1.0 - miss) * 2.0 / (n + 1.0);
            c_sum += cost;
        }
        let k = examples.len() as f64;
        let expected_quality = q_sum / k;
        let expected_cost = c_sum / k;
        out.push(StaticValue {
            models: seq.iter().map(|&i| scenario.specialists[i].name.clone()).collect(),
            sequence: seq,
            expected_quality,
            expected_cost,
            expected_net_reward: expected_quality - scenario.alpha * expected_cost,
        });
    }
    Ok(out)
}

/// Expected net reward of an oracle that picks the best static sequence for
/// each example separately: an upper bound for any router on `examples`.
pub fn routing_oracle(
    scenario: &Scenario,
    examples: &[Example],
    layer_prompts: &[String],
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let values = static_oracle(scenario, std::slice::from_ref(ex), layer_prompts)?;
        total += values
            .iter()
            .map(|v| v.expected_net_reward)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Best sequence overall and best constant (single-model) sequence.
pub fn best_static(values: &[StaticValue]) -> (Option<&StaticValue>, Option<&StaticValue>) {
    fn best<'a>(it: impl Iterator<Item = &'a StaticValue>) -> Option<&'a StaticValue> {
        it.fold(None, |b: Option<&StaticValue>, v| match b {
            Some(b) if b.expected_net_reward >= v.expected_net_reward => Some(b),
            _ => Some(v),
        })
    }
    let overall = best(values.iter());
    let single = best(values.iter().filter(|v| v.sequence.windows(2).all(|w| w[0] == w[1])));
    (overall, single)
}
