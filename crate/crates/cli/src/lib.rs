//! Command implementations for the `hoprouter` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use hoprouter_core::config::{RunConfig, Runtime};
use hoprouter_core::data::write_dataset;
use hoprouter_core::env::Trajectory;
use hoprouter_core::policy::{Checkpoint, PolicyParameters, SampleMode};
use hoprouter_core::ppo::{self, MetricsRow, TrainOptions};
use hoprouter_core::report::{constant_sequences, evaluate, EvalPolicy, EvalReport, EvalSettings};
use hoprouter_core::scenario::Scenario;
use hoprouter_core::seed::derive_seed;
use hoprouter_core::simulation::{run_simulation, scenario_run_config};
use hoprouter_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hoprouter", version, about = "Cost-aware multi-hop LLM routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a routing policy with PPO.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Collect rollouts sequentially.
        #[arg(long)]
        deterministic: bool,
    },
    /// Evaluate a trained policy and the single-model baselines on the test splits.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Passes over each test split.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Report path; defaults to <output_dir>/eval_report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Route one query greedily and print the hop trace as JSON.
    Route {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        query: String,
        /// Overrides the run config stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate on a synthetic specialist scenario.
    Simulate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Scenario TOML; the built-in three-specialist scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
        #[arg(long)]
        deterministic: bool,
    },
}

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::CheckpointMismatch(_)
            | Error::UnknownStrategy { .. }
            | Error::EmptyQuery => EXIT_INPUT,
            _ => EXIT_RUNTIME,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError {
        code: EXIT_RUNTIME,
        message: format!("{}: {e}", dir.display()),
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, contents).map_err(|e| CliError {
        code: EXIT_RUNTIME,
        message: format!("{}: {e}", path.display()),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            config,
            deterministic,
        } => train(&config, deterministic),
        Command::Eval {
            config,
            checkpoint,
            repeats,
            out,
        } => eval(config.as_deref(), &checkpoint, repeats, out.as_deref()),
        Command::Route {
            checkpoint,
            query,
            config,
            seed,
        } => route(&checkpoint, &query, config.as_deref(), seed),
        Command::Simulate {
            seed,
            scenario,
            out,
            deterministic,
        } => simulate(seed, scenario.as_deref(), &out, deterministic),
    }
}

fn train(config_path: &Path, deterministic: bool) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let rt = Runtime::build(config)?;
    let train_set = rt.train_set();
    let report = ppo::train(
        &rt.env,
        &rt.encoder,
        &train_set,
        rt.init_params(),
        &rt.config.ppo,
        TrainOptions {
            parallel: !deterministic,
        },
    )?;
    let out = &rt.config.output_dir;
    create_dir(out)?;
    let ckpt = Checkpoint::from_params(&report.params, Some(rt.config.to_json()));
    ckpt.save(out.join("policy.ckpt"))?;
    write_file(&out.join("train_metrics.csv"), MetricsRow::to_csv(&report.metrics))?;
    if let Some(last) = report.metrics.last() {
        println!(
            "trained {} iterations on {} examples; final mean reward {:.4}, mean cost {:.4}",
            report.metrics.len(),
            train_set.len(),
            last.mean_reward,
            last.mean_cost
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn load_policy(
    checkpoint: &Path,
    config: Option<&Path>,
) -> Result<(Runtime, PolicyParameters), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let config = match config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let run = ckpt.run.as_ref().ok_or_else(|| {
                input_error(format!(
                    "{} carries no run config; pass --config",
                    checkpoint.display()
                ))
            })?;
            RunConfig::from_json(run)?
        }
    };
    let params = ckpt.params()?;
    if params.dims() != config.policy_dims() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint dims {:?} do not match config dims {:?}",
            params.dims(),
            config.policy_dims()
        ))
        .into());
    }
    Ok((Runtime::build(config)?, params))
}

fn eval(
    config: Option<&Path>,
    checkpoint: &Path,
    repeats: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if repeats == 0 {
        return Err(input_error("--repeats must be at least 1"));
    }
    let (rt, params) = load_policy(checkpoint, config)?;
    let settings = EvalSettings {
        seed: derive_seed(rt.config.seed, &[0xe7a1]),
        repeats,
    };
    let mut rows = Vec::new();
    for d in &rt.datasets {
        rows.push(evaluate(
            &rt.env,
            &d.name,
            &d.test,
            EvalPolicy::Router {
                params: &params,
                encoder: &rt.encoder,
                mode: SampleMode::Greedy,
            },
            settings,
        )?);
        for seq in constant_sequences(&rt.env) {
            rows.push(evaluate(&rt.env, &d.name, &d.test, EvalPolicy::Static(&seq), settings)?);
        }
    }
    let report = EvalReport {
        alpha: rt.env.reward.alpha,
        rows,
    };
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| rt.config.output_dir.join("eval_report.json"));
    write_file(&path, to_json(&report))?;
    print!("{}", report.to_table());
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct HopTrace {
    depth: usize,
    model: String,
    tokens_in: u64,
    tokens_out: u64,
    step_cost: f64,
    cum_cost: f64,
    response: String,
}

#[derive(Debug, Serialize)]
struct RouteTrace {
    query: String,
    hops: Vec<HopTrace>,
    total_cost: f64,
    final_context: String,
}

fn trace(query: &str, t: &Trajectory, names: &[&str]) -> RouteTrace {
    let mut cum = 0.0;
    let hops = t
        .transitions
        .iter()
        .map(|s| {
            cum += s.step_cost;
            HopTrace {
                depth: s.state.depth,
                model: names[s.action.model_index].to_string(),
                tokens_in: s.tokens_in,
                tokens_out: s.tokens_out,
                step_cost: s.step_cost,
                cum_cost: cum,
                response: s.response.clone(),
            }
        })
        .collect();
    RouteTrace {
        query: query.to_string(),
        hops,
        total_cost: t.final_cost,
        final_context: t.final_context.clone(),
    }
}

fn route(
    checkpoint: &Path,
    query: &str,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    if query.trim().is_empty() {
        return Err(Error::EmptyQuery.into());
    }
    let (rt, params) = load_policy(checkpoint, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(rt.config.seed));
    let t = rt.env.run_episode(
        query,
        None,
        &params,
        &rt.encoder,
        &mut rng,
        SampleMode::Greedy,
    )?;
    print!("{}", to_json(&trace(query, &t, &rt.env.pool.names())));
    Ok(())
}

fn simulate(
    seed: u64,
    scenario: Option<&Path>,
    out: &Path,
    deterministic: bool,
) -> Result<(), CliError> {
    let scenario = match scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    let summary = run_simulation(
        &scenario,
        seed,
        TrainOptions {
            parallel: !deterministic,
        },
    )?;
    create_dir(out)?;
    let mut examples = summary.train.clone();
    examples.extend(summary.test.iter().cloned());
    write_dataset(out.join("scenario.jsonl"), &examples)?;
    let config = scenario_run_config(&scenario, seed, "scenario.jsonl");
    write_file(&out.join("config.toml"), config.to_toml()?)?;
    let mut stored = config.clone();
    stored.resolve_paths(&std::path::absolute(out).unwrap_or_else(|_| out.to_path_buf()));
    Checkpoint::from_params(&summary.params, Some(stored.to_json()))
        .save(out.join("policy.ckpt"))?;
    write_file(&out.join("train_metrics.csv"), MetricsRow::to_csv(&summary.train_metrics))?;
    write_file(&out.join("summary.json"), to_json(&summary))?;

    println!(
        "router net reward {:.4} (quality {:.4}, cost {:.4})",
        summary.router.net_reward, summary.router.mean_quality, summary.router.mean_cost
    );
    println!(
        "best single model {} expected {:.4}; best static {} expected {:.4}",
        summary.best_single_model.models.join("+"),
        summary.best_single_model.expected_net_reward,
        summary.best_static.models.join("+"),
        summary.best_static.expected_net_reward
    );
    println!(
        "margin vs best single model {:+.1}%; wrote {}",
        100.0 * summary.relative_margin_vs_single,
        out.display()
    );
    Ok(())
}
