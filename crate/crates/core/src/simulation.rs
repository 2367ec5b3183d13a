//! End-to-end simulated run: synthesize data, train a router, and compare it
//! with the analytic values of every static model sequence.

use std::sync::Arc;

use serde::Serialize;

use crate::backends::{BackendRegistry, BuildContext};
use crate::config::{DataConfig, PolicyConfig, RunConfig};
use crate::data::{cap_and_split, AnswerKey, Example};
use crate::encoder::EmbedderRegistry;
use crate::env::{EpisodeConfig, Environment, RewardConfig};
use crate::error::{Error, Result};
use crate::evalkit::TokenF1;
use crate::policy::{PolicyParameters, SampleMode};
use crate::ppo::{self, MetricsRow, TrainOptions};
use crate::report::{evaluate, EvalPolicy, EvalSettings, ReportRow};
use crate::scenario::{best_static, routing_oracle, static_oracle, Scenario, StaticValue};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Greedy router on the test split.
    pub router: ReportRow,
    /// Analytic values on the test split, all `M^L` sequences.
    pub static_sequences: Vec<StaticValue>,
    pub best_static: StaticValue,
    pub best_single_model: StaticValue,
    /// Best static sequence chosen per example; no router can exceed it in expectation.
    pub routing_oracle_net_reward: f64,
    /// `(router - best single) / |best single|`.
    pub relative_margin_vs_single: f64,
    pub relative_margin_vs_best_static: f64,
    pub train_metrics: Vec<MetricsRow>,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    pub params: PolicyParameters,
    #[serde(skip)]
    pub train: Vec<Example>,
    #[serde(skip)]
    pub test: Vec<Example>,
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b) / b.abs().max(1e-12)
}

/// Run config equivalent to the scenario, pointing at `dataset_path`.
pub fn scenario_run_config(scenario: &Scenario, seed: u64, dataset_path: &str) -> RunConfig {
    let mut ppo = scenario.ppo.clone();
    ppo.seed = seed;
    RunConfig {
        seed,
        output_dir: "run".into(),
        evaluator: "f1".into(),
        data: DataConfig {
            datasets: vec![dataset_path.into()],
            cap: scenario.n_examples,
            train_fraction: crate::data::DEFAULT_TRAIN_FRACTION,
        },
        episode: EpisodeConfig {
            max_hops: scenario.max_hops,
            halting_enabled: false,
            layer_prompts: Vec::new(),
        },
        reward: RewardConfig {
            alpha: scenario.alpha,
        },
        ppo,
        encoder: scenario.encoder.clone(),
        policy: PolicyConfig {
            hidden: scenario.hidden,
        },
        models: scenario.model_specs(),
    }
}

/// Synthesizes data from `scenario`, trains with PPO and evaluates.
pub fn run_simulation(scenario: &Scenario, seed: u64, opts: TrainOptions) -> Result<SimulationSummary> {
    let start = std::time::Instant::now();
    scenario.validate()?;
    let examples = scenario.generate_examples(derive_seed(seed, &[0xda7a]))?;
    let (train, test) = cap_and_split(
        &examples,
        scenario.n_examples,
        crate::data::DEFAULT_TRAIN_FRACTION,
        derive_seed(seed, &[0x5e1, 0]),
    )?;
    if test.is_empty() {
        return Err(Error::Config("scenario test split is empty".into()));
    }

    let ctx = BuildContext {
        answer_key: Arc::new(AnswerKey::from_examples(&examples)),
    };
    let pool = BackendRegistry::default().build_pool(&scenario.model_specs(), &ctx)?;
    let cfg = scenario_run_config(scenario, seed, "scenario.jsonl");
    let episode = cfg.episode.clone().normalized()?;
    let prompts = episode.layer_prompts.clone();
    let env = Environment::new(
        pool,
        Arc::new(TokenF1),
        RewardConfig {
            alpha: scenario.alpha,
        },
        episode,
    )?;
    let encoder = EmbedderRegistry::default().build(&scenario.encoder)?;
    let params = PolicyParameters::init(cfg.policy_dims(), derive_seed(seed, &[0x1a17]));
    let report = ppo::train(&env, &encoder, &train, params, &cfg.ppo, opts)?;

    let router = evaluate(
        &env,
        &scenario.name,
        &test,
        EvalPolicy::Router {
            params: &report.params,
            encoder: &encoder,
            mode: SampleMode::Greedy,
        },
        EvalSettings {
            seed: derive_seed(seed, &[0xe7a1]),
            repeats: scenario.eval_repeats,
        },
    )?;

    let values = static_oracle(scenario, &test, &prompts)?;
    let routing_oracle_net_reward = routing_oracle(scenario, &test, &prompts)?;
    let (best, single) = best_static(&values);
    let best = best.cloned().ok_or_else(|| Error::Config("no static sequences".into()))?;
    let single = single.cloned().ok_or_else(|| Error::Config("no static sequences".into()))?;
    Ok(SimulationSummary {
        scenario: scenario.name.clone(),
        seed,
        n_train: train.len(),
        n_test: test.len(),
        relative_margin_vs_single: relative(router.net_reward, single.expected_net_reward),
        relative_margin_vs_best_static: relative(router.net_reward, best.expected_net_reward),
        router,
        static_sequences: values,
        best_static: best,
        best_single_model: single,
        routing_oracle_net_reward,
        train_metrics: report.metrics,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        params: report.params,
        train,
        test,
    })
}
