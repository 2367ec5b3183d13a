//! Evaluation of a routing policy and of static model sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::encoder::StateEncoder;
use crate::env::{Environment, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{PolicyParameters, SampleMode};
use crate::seed::derive_seed;

/// Aggregate outcome of one policy on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    /// "router" or "static:<model>+<model>...".
    pub policy: String,
    pub mean_quality: f64,
    pub mean_cost: f64,
    /// `mean_quality - alpha * mean_cost`.
    pub net_reward: f64,
    pub n_examples: usize,
    pub n_episodes: usize,
    pub mean_tokens: f64,
    /// Cost per 1000 processed tokens (input plus output).
    pub cost_per_1k_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub rows: Vec<ReportRow>,
}

/// How a policy is driven during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EvalPolicy<'a> {
    Router {
        params: &'a PolicyParameters,
        encoder: &'a StateEncoder,
        mode: SampleMode,
    },
    Static(&'a [usize]),
}

/// Per-run evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSettings {
    pub seed: u64,
    /// Passes over the example set, each with fresh backend randomness.
    pub repeats: usize,
}

fn summarize(
    dataset: &str,
    policy: String,
    n_examples: usize,
    trajectories: &[Trajectory],
    alpha: f64,
) -> Result<ReportRow> {
    if trajectories.is_empty() {
        return Err(Error::Domain(format!("no episodes to summarize for {dataset}")));
    }
    let n = trajectories.len() as f64;
    let mut quality = 0.0;
    let mut cost = 0.0;
    let mut tokens = 0u64;
    for t in trajectories {
        quality += t.final_quality.ok_or(Error::MissingGold)?;
        cost += t.final_cost;
        tokens += t.transitions.iter().map(|s| s.tokens_in + s.tokens_out).sum::<u64>();
    }
    let mean_quality = quality / n;
    let mean_cost = cost / n;
    Ok(ReportRow {
        dataset: dataset.to_string(),
        policy,
        mean_quality,
        mean_cost,
        net_reward: mean_quality - alpha * mean_cost,
        n_examples,
        n_episodes: trajectories.len(),
        mean_tokens: tokens as f64 / n,
        cost_per_1k_tokens: if tokens == 0 { 0.0 } else { 1000.0 * cost / tokens as f64 },
    })
}

/// Label of a static sequence, e.g. `static:a+b`.
pub fn static_label(env: &Environment, models: &[usize]) -> String {
    let names = env.pool.names();
    let parts: Vec<&str> = models.iter().map(|&i| names.get(i).copied().unwrap_or("?")).collect();
    format!("static:{}", parts.join("+"))
}

/// Runs `policy` over `examples` and aggregates the outcomes.
///
/// Episode `(repeat, i)` uses the RNG stream `derive_seed(seed, [repeat, i])`
/// whatever the policy, so policies are compared on common randomness.
pub fn evaluate(
    env: &Environment,
    dataset: &str,
    examples: &[Example],
    policy: EvalPolicy<'_>,
    settings: EvalSettings,
) -> Result<ReportRow> {
    if examples.is_empty() {
        return Err(Error::Config(format!("dataset {dataset} has no evaluation examples")));
    }
    let mut env = env.clone();
    env.require_gold = true;
    let mut trajectories = Vec::with_capacity(examples.len() * settings.repeats);
    for r in 0..settings.repeats {
        for (i, ex) in examples.iter().enumerate() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, &[r as u64, i as u64]));
            let gold = Some(ex.answers.as_slice());
            let t = match policy {
                EvalPolicy::Router {
                    params,
                    encoder,
                    mode,
                } => env.run_episode(&ex.query, gold, params, encoder, &mut rng, mode)?,
                EvalPolicy::Static(models) => env.run_static(&ex.query, gold, models, &mut rng)?,
            };
            trajectories.push(t);
        }
    }
    let label = match policy {
        EvalPolicy::Router { .. } => "router".to_string(),
        EvalPolicy::Static(models) => static_label(&env, models),
    };
    summarize(dataset, label, examples.len(), &trajectories, env.reward.alpha)
}

/// The constant sequences `(m, m, ..., m)`, one per pool member.
pub fn constant_sequences(env: &Environment) -> Vec<Vec<usize>> {
    (0..env.pool.len())
        .map(|m| vec![m; env.episode.max_hops])
        .collect()
}

impl EvalReport {
    /// Fixed-width text table, one line per row.
    pub fn to_table(&self) -> String {
        let header = [
            "dataset", "policy", "quality", "cost", "net_reward", "cost/1k_tok", "episodes",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.dataset.clone(),
                r.policy.clone(),
                format!("{:.4}", r.mean_quality),
                format!("{:.4}", r.mean_cost),
                format!("{:.4}", r.net_reward),
                format!("{:.5}", r.cost_per_1k_tokens),
                r.n_episodes.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c < 2 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
