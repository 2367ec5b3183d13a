//! The routing MDP: state, actions, the environment step and episode rollout.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::backends::{estimate_cost, Pool};
use crate::encoder::{StateEncoder, StateFeatures};
use crate::error::{Error, Result};
use crate::evalkit::QualityEvaluator;
use crate::policy::{self, PolicyParameters, SampleMode};

/// Instruction for the analysis hop.
pub const LAYER0_PROMPT: &str = "Describe the problem in detail, then plan how you would solve it. Analyze the problem step by step, identifying key constraints and requirements.";
/// Instruction for the solving hop.
pub const LAYER1_PROMPT: &str = "Using the previous analysis and plan, verify if the approach is correct and solve the problem methodically. Ensure completeness and correctness in your solution.";

/// Separator placed between the context and each appended response.
pub const CONTEXT_SEPARATOR: &str = "\n";

pub const DEFAULT_ALPHA: f64 = 0.005;

/// MDP state: context history, hop index and cumulative cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingState {
    pub context: String,
    pub depth: usize,
    pub cum_cost: f64,
}

impl RoutingState {
    /// Initial state for `query`.
    pub fn new(query: &str) -> Result<Self> {
        if query.trim().is_empty() {
            return Err(Error::EmptyQuery);
        }
        Ok(RoutingState {
            context: query.to_string(),
            depth: 0,
            cum_cost: 0.0,
        })
    }
}

pub fn init_state(query: &str) -> Result<RoutingState> {
    RoutingState::new(query)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingAction {
    pub model_index: usize,
    /// Ends the episode after this hop; only honored when halting is enabled.
    pub halt: bool,
}

impl RoutingAction {
    pub fn model(model_index: usize) -> Self {
        RoutingAction {
            model_index,
            halt: false,
        }
    }

    /// Decodes a flat policy action. With halting, indices `M..2M` mean
    /// "use model `i - M`, then stop".
    pub fn from_index(index: usize, pool_size: usize, halting: bool) -> Result<Self> {
        let actions = action_count(pool_size, halting);
        if index >= actions {
            return Err(Error::InvalidAction { index, actions });
        }
        Ok(RoutingAction {
            model_index: index % pool_size,
            halt: index >= pool_size,
        })
    }

    pub fn to_index(self, pool_size: usize, halting: bool) -> usize {
        if halting && self.halt {
            self.model_index + pool_size
        } else {
            self.model_index
        }
    }
}

pub fn action_count(pool_size: usize, halting: bool) -> usize {
    if halting {
        2 * pool_size
    } else {
        pool_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: RoutingState,
    pub action: RoutingAction,
    pub response: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub step_cost: f64,
    pub reward: f64,
    pub done: bool,
    pub log_prob: f64,
    pub value_estimate: f64,
    /// Policy input observed at `state`; empty when the step was not policy-driven.
    pub features: Option<StateFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub final_context: String,
    pub final_cost: f64,
    /// Absent when no reference answers were available.
    pub final_quality: Option<f64>,
    pub final_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: DEFAULT_ALPHA,
        }
    }
}

fn default_max_hops() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    #[serde(default = "default_max_hops")]
    pub max_hops: usize,
    #[serde(default)]
    pub halting_enabled: bool,
    /// One instruction per hop; defaults to the built-in prompts when `max_hops == 2`.
    #[serde(default)]
    pub layer_prompts: Vec<String>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_hops: 2,
            halting_enabled: false,
            layer_prompts: vec![LAYER0_PROMPT.into(), LAYER1_PROMPT.into()],
        }
    }
}

impl EpisodeConfig {
    /// Fills in default prompts and checks invariants.
    pub fn normalized(mut self) -> Result<Self> {
        if self.max_hops == 0 {
            return Err(Error::Config("episode.max_hops must be at least 1".into()));
        }
        if self.layer_prompts.is_empty() {
            self.layer_prompts = match self.max_hops {
                2 => vec![LAYER0_PROMPT.into(), LAYER1_PROMPT.into()],
                n => vec![String::new(); n],
            };
        }
        if self.layer_prompts.len() != self.max_hops {
            return Err(Error::Config(format!(
                "episode.layer_prompts has {} entries for {} hops",
                self.layer_prompts.len(),
                self.max_hops
            )));
        }
        Ok(self)
    }
}

/// `quality - alpha * cum_cost`.
pub fn terminal_reward(quality: f64, cum_cost: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&quality) {
        return Err(Error::Domain(format!("quality {quality} outside [0, 1]")));
    }
    if cum_cost.is_nan() || cum_cost < 0.0 {
        return Err(Error::Domain(format!("negative cumulative cost {cum_cost}")));
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Domain(format!("negative alpha {alpha}")));
    }
    Ok(quality - alpha * cum_cost)
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: RoutingState,
    pub reward: f64,
    pub done: bool,
    pub quality: Option<f64>,
    pub transition: Transition,
}

/// The routing environment: a candidate pool, an evaluator and the configs.
/// Holds no mutable state, so episodes may run concurrently.
#[derive(Clone)]
pub struct Environment {
    pub pool: Pool,
    pub evaluator: Arc<dyn QualityEvaluator>,
    pub reward: RewardConfig,
    pub episode: EpisodeConfig,
    /// Fail terminal steps that lack reference answers.
    pub require_gold: bool,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("pool", &self.pool)
            .field("evaluator", &self.evaluator.name())
            .field("reward", &self.reward)
            .field("episode", &self.episode)
            .finish()
    }
}

impl Environment {
    pub fn new(
        pool: Pool,
        evaluator: Arc<dyn QualityEvaluator>,
        reward: RewardConfig,
        episode: EpisodeConfig,
    ) -> Result<Self> {
        if reward.alpha.is_nan() || reward.alpha < 0.0 {
            return Err(Error::Config(format!("reward.alpha must be >= 0, got {}", reward.alpha)));
        }
        Ok(Environment {
            pool,
            evaluator,
            reward,
            episode: episode.normalized()?,
            require_gold: false,
        })
    }

    pub fn action_count(&self) -> usize {
        action_count(self.pool.len(), self.episode.halting_enabled)
    }

    fn backend_input(&self, state: &RoutingState) -> String {
        let prompt = &self.episode.layer_prompts[state.depth];
        if prompt.trim().is_empty() {
            state.context.clone()
        } else {
            format!("{prompt}\n{}", state.context)
        }
    }

    /// Advances `state` by one hop.
    pub fn step(
        &self,
        state: &RoutingState,
        action: RoutingAction,
        gold: Option<&[String]>,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome> {
        let max_hops = self.episode.max_hops;
        if state.depth >= max_hops {
            return Err(Error::DepthOutOfRange {
                depth: state.depth,
                max_hops,
            });
        }
        let backend = self.pool.get(action.model_index).ok_or(Error::InvalidAction {
            index: action.model_index,
            actions: self.pool.len(),
        })?;
        let input = self.backend_input(state);
        let gen = backend
            .generate(&input, rng)
            .map_err(|source| Error::BackendFailure {
                model: backend.spec().name.clone(),
                source,
            })?;
        let step_cost = estimate_cost(backend.spec(), gen.tokens_in, gen.tokens_out);
        let next = RoutingState {
            context: format!("{}{CONTEXT_SEPARATOR}{}", state.context, gen.text),
            depth: state.depth + 1,
            cum_cost: state.cum_cost + step_cost,
        };
        let done = (self.episode.halting_enabled && action.halt) || next.depth == max_hops;
        let (reward, quality) = match (done, gold) {
            (true, Some(truths)) => {
                let q = self.evaluator.score(&next.context, truths)?.value();
                (terminal_reward(q, next.cum_cost, self.reward.alpha)?, Some(q))
            }
            (true, None) if self.require_gold => return Err(Error::MissingGold),
            _ => (0.0, None),
        };
        let transition = Transition {
            state: state.clone(),
            action,
            response: gen.text,
            tokens_in: gen.tokens_in,
            tokens_out: gen.tokens_out,
            step_cost,
            reward,
            done,
            log_prob: 0.0,
            value_estimate: 0.0,
            features: None,
        };
        Ok(StepOutcome {
            next,
            reward,
            done,
            quality,
            transition,
        })
    }

    /// Rolls out one episode under `params`.
    pub fn run_episode(
        &self,
        query: &str,
        gold: Option<&[String]>,
        params: &PolicyParameters,
        encoder: &StateEncoder,
        rng: &mut dyn RngCore,
        mode: SampleMode,
    ) -> Result<Trajectory> {
        let dims = params.dims();
        if dims.actions != self.action_count() || dims.stages != self.episode.max_hops {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} actions / {} stages, environment needs {} / {}",
                dims.actions,
                dims.stages,
                self.action_count(),
                self.episode.max_hops
            )));
        }
        let mut state = init_state(query)?;
        let mut transitions = Vec::with_capacity(self.episode.max_hops);
        loop {
            let features = encoder.encode_state(&state, params)?;
            let out = policy::forward(params, &features)?;
            let dist = policy::action_distribution(&out.logits)
                .map_err(|e| Error::NonFiniteValue(format!("policy logits: {e}")))?;
            let index = policy::sample(&dist, rng, mode);
            let (log_prob, _) = policy::log_prob_entropy(&out.logits, index)?;
            let action =
                RoutingAction::from_index(index, self.pool.len(), self.episode.halting_enabled)?;
            let step = self.step(&state, action, gold, rng)?;
            let mut t = step.transition;
            t.log_prob = log_prob;
            t.value_estimate = out.value;
            t.features = Some(features);
            transitions.push(t);
            state = step.next;
            if step.done {
                return Ok(Trajectory {
                    transitions,
                    final_context: state.context,
                    final_cost: state.cum_cost,
                    final_quality: step.quality,
                    final_reward: step.reward,
                });
            }
        }
    }

    /// Runs a fixed model sequence (no policy), e.g. a static baseline.
    pub fn run_static(
        &self,
        query: &str,
        gold: Option<&[String]>,
        models: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<Trajectory> {
        let mut state = init_state(query)?;
        let mut transitions = Vec::new();
        for (hop, &m) in models.iter().enumerate() {
            let halt = hop + 1 == models.len();
            let action = RoutingAction {
                model_index: m,
                halt,
            };
            let step = self.step(&state, action, gold, rng)?;
            transitions.push(step.transition);
            state = step.next;
            if step.done {
                return Ok(Trajectory {
                    transitions,
                    final_context: state.context,
                    final_cost: state.cum_cost,
                    final_quality: step.quality,
                    final_reward: step.reward,
                });
            }
        }
        Err(Error::Config(format!(
            "static sequence of {} hops does not terminate an episode of {} hops",
            models.len(),
            self.episode.max_hops
        )))
    }
}
