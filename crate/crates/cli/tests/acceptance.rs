//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hoprouter_core::backends::{estimate_cost, ModelSpec};
use hoprouter_core::config::{RunConfig, Runtime};
use hoprouter_core::data::{cap_and_split, write_dataset, Example};
use hoprouter_core::encoder::StateFeatures;
use hoprouter_core::env::terminal_reward;
use hoprouter_core::evalkit::f1_score;
use hoprouter_core::policy::{gradients, PolicyDims, PolicyParameters, SampleMode};
use hoprouter_core::ppo::{compute_gae, ppo_loss, train, Minibatch, PpoConfig, PpoLoss, TrainOptions};
use hoprouter_core::scenario::Scenario;
use hoprouter_core::simulation::{run_simulation, scenario_run_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- F1

fn oracle_tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !(c.is_ascii_graphic() && !c.is_ascii_alphanumeric()))
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn oracle_f1(response: &str, truths: &[String]) -> f64 {
    let r = oracle_tokens(response);
    let mut best = 0.0f64;
    for truth in truths {
        let g = oracle_tokens(truth);
        let mut used = vec![false; g.len()];
        let mut common = 0usize;
        for tok in &r {
            if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *tok) {
                used[j] = true;
                common += 1;
            }
        }
        if common > 0 {
            let p = common as f64 / r.len() as f64;
            let rc = common as f64 / g.len() as f64;
            best = best.max(2.0 * p * rc / (p + rc));
        }
    }
    best.min(1.0)
}

fn f1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let vocab = [
        "the", "The", "cat", "cat,", "sat", "SAT", "mat", "a", "on", "(on)", "42", "4.2", "x-y", "xy",
        "é", "É", "...", "!", "don't", "dont",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let text = |rng: &mut ChaCha8Rng, max: usize| {
        let n = rng.random_range(0..=max);
        (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
    };
    for i in 0..1000 {
        let response = text(&mut rng, 10);
        let k = rng.random_range(1..=3);
        let truths: Vec<String> = (0..k).map(|_| text(&mut rng, 6)).collect();
        let got = f1_score(&response, &truths).map_err(|e| e.to_string())?.value();
        let want = oracle_f1(&response, &truths);
        ensure(got.to_bits() == want.to_bits(), || {
            format!("pair {i}: {response:?} vs {truths:?}: {got} != {want}")
        })?;
    }
    let fixed = f1_score("the cat sat", &["the cat".to_string()]).unwrap().value();
    ensure((fixed - 0.8).abs() < 1e-15, || format!("fixed vector gave {fixed}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.3} s"))?;
    Ok(format!("1000 random pairs bit-identical, (\"the cat sat\", [\"the cat\"]) = {fixed}, {secs:.3} s"))
}

// ---------------------------------------------------------------- reward and cost

fn reward_identity() -> Outcome {
    let r = terminal_reward(0.139, 0.0163, 0.005).map_err(|e| e.to_string())?;
    ensure((r - 0.1389185).abs() <= 1e-12, || format!("got {r}"))?;
    Ok(format!("R(0.139, 0.0163, 0.005) = {r}"))
}

/// Writes the default scenario data and config into `dir`.
fn scenario_config(dir: &Path, seed: u64) -> RunConfig {
    let scenario = Scenario::default();
    let summary_examples = scenario
        .generate_examples(hoprouter_core::seed::derive_seed(seed, &[0xda7a]))
        .unwrap();
    write_dataset(dir.join("scenario.jsonl"), &summary_examples).unwrap();
    let cfg = scenario_run_config(&scenario, seed, "scenario.jsonl");
    std::fs::write(dir.join("config.toml"), cfg.to_toml().unwrap()).unwrap();
    RunConfig::load(dir.join("config.toml")).unwrap()
}

fn cost_formula() -> Outcome {
    let rates = [0.003, 0.002, 0.003, 0.008, 0.007, 0.014];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (i, &rate) in rates.iter().enumerate() {
        let spec = ModelSpec {
            name: format!("m{i}"),
            base_rate: rate,
            kind: "simulated".into(),
            params: serde_json::Value::Null,
        };
        for _ in 0..1000 {
            let (a, b) = (rng.random_range(0..100_000u64), rng.random_range(0..100_000u64));
            let c = estimate_cost(&spec, a, b);
            let want = rate * (a + b) as f64;
            ensure(c == want, || format!("rate {rate}, ({a}, {b}): {c} != {want}"))?;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = scenario_config(dir.path(), 42);
    // every rate from the table appears in the pool
    let base = cfg.models[0].clone();
    cfg.models = rates
        .iter()
        .enumerate()
        .map(|(i, &r)| ModelSpec {
            name: format!("m{i}"),
            base_rate: r,
            ..base.clone()
        })
        .collect();
    let rt = Runtime::build(cfg).map_err(|e| e.to_string())?;
    let params = PolicyParameters::init(rt.config.policy_dims(), 3);
    let examples = rt.train_set();
    for ep in 0..100 {
        let ex = &examples[rng.random_range(0..examples.len())];
        let t = rt
            .env
            .run_episode(&ex.query, Some(&ex.answers), &params, &rt.encoder, &mut rng, SampleMode::Stochastic)
            .map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        for s in &t.transitions {
            let spec = rt.env.pool.get(s.action.model_index).unwrap().spec();
            ensure(s.step_cost == estimate_cost(spec, s.tokens_in, s.tokens_out), || {
                format!("episode {ep}: step cost mismatch")
            })?;
            sum += s.step_cost;
        }
        ensure(t.final_cost == sum, || format!("episode {ep}: {} != {sum}", t.final_cost))?;
    }
    Ok("6 table rates x 1000 token pairs exact; 100 episodes' cumulative cost equals per-hop sum".into())
}

// ---------------------------------------------------------------- gradients

fn random_batch(rng: &mut ChaCha8Rng, params: &PolicyParameters, n: usize) -> Minibatch {
    let dims = params.dims();
    let mut batch = Minibatch::default();
    for _ in 0..n {
        let depth = rng.random_range(0..dims.stages);
        let mut vector: Vec<f64> = (0..dims.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        vector[dims.embed_dim..2 * dims.embed_dim].copy_from_slice(params.stage_row(depth).unwrap());
        let features = StateFeatures { vector, depth };
        let out = hoprouter_core::policy::forward(params, &features).unwrap();
        let action = rng.random_range(0..dims.actions);
        let (lp, _) = hoprouter_core::policy::log_prob_entropy(&out.logits, action).unwrap();
        batch.features.push(features);
        batch.actions.push(action);
        // shifted old log-probs put some samples in the clipped region
        batch.old_log_probs.push(lp + rng.random_range(-0.4..0.4));
        batch.advantages.push(rng.random_range(-2.0..2.0));
        batch.returns.push(rng.random_range(-1.0..1.0));
    }
    batch
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let dims = PolicyDims {
        embed_dim: 4,
        hidden: 8,
        actions: 3,
        stages: 2,
    };
    let cfg = PpoConfig::default();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let mut params = PolicyParameters::init(dims, trial);
        for v in params.as_mut_slice() {
            *v += rng.random_range(-0.5..0.5);
        }
        let batch = random_batch(&mut rng, &params, 16);
        let loss = PpoLoss::new(&batch, &cfg);
        let (_, analytic) = gradients(&params, &batch.features, &loss).map_err(|e| e.to_string())?;
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[k] -= h;
            let lp = ppo_loss(&plus, &batch, &cfg).map_err(|e| e.to_string())?.0;
            let lm = ppo_loss(&minus, &batch, &cfg).map_err(|e| e.to_string())?.0;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.as_slice()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("50 trials, max relative error {worst:.2e}, {secs:.2} s"))
}

// ---------------------------------------------------------------- GAE

fn gae_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for ep in 0..200 {
        let n = rng.random_range(1..=5);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let (gamma, lambda) = if ep % 10 == 0 {
            (1.0, 1.0)
        } else {
            (rng.random_range(0.01..=1.0), rng.random_range(0.01..=1.0))
        };
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda).map_err(|e| e.to_string())?;
        for t in 0..n {
            let mut want = 0.0;
            for k in t..n {
                let next = if k + 1 < n { values[k + 1] } else { 0.0 };
                let delta = rewards[k] + gamma * next - values[k];
                want += (gamma * lambda).powi((k - t) as i32) * delta;
            }
            worst = worst.max((adv[t] - want).abs());
            worst = worst.max((ret[t] - (want + values[t])).abs());
            if gamma == 1.0 && lambda == 1.0 {
                let to_go: f64 = rewards[t..].iter().sum();
                worst = worst.max((adv[t] - (to_go - values[t])).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("200 episodes, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- PPO mechanics

fn ppo_mechanics() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = scenario_config(dir.path(), 42);
    let rt = Runtime::build(cfg).map_err(|e| e.to_string())?;
    let report = train(
        &rt.env,
        &rt.encoder,
        &rt.train_set(),
        rt.init_params(),
        &rt.config.ppo,
        TrainOptions { parallel: true },
    )
    .map_err(|e| e.to_string())?;
    let max_norm = rt.config.ppo.max_grad_norm;
    ensure(max_norm == 0.3, || format!("max_grad_norm {max_norm}"))?;
    let mut worst_norm = 0.0f64;
    for u in &report.updates {
        worst_norm = worst_norm.max(u.clipped_grad_norm);
        if u.epoch == 0 {
            ensure(u.clip_fraction == 0.0, || {
                format!("iter {} minibatch {}: first-epoch clip fraction {}", u.iter, u.minibatch, u.clip_fraction)
            })?;
        }
        if u.epoch == 0 && u.minibatch == 0 {
            ensure(u.max_ratio_deviation == 0.0, || {
                format!("iter {}: ratio deviates by {} before any update", u.iter, u.max_ratio_deviation)
            })?;
        }
    }
    ensure(worst_norm <= 0.3 + 1e-9, || format!("post-clip norm {worst_norm}"))?;
    Ok(format!(
        "{} updates, first-epoch clip fraction 0, max post-clip norm {worst_norm:.6}",
        report.updates.len()
    ))
}

// ---------------------------------------------------------------- determinism

fn run_train(config: &Path, extra: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hoprouter"))
        .arg("train")
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("train exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    let cfg = RunConfig::load(config).map_err(|e| e.to_string())?;
    std::fs::read(cfg.output_dir.join("train_metrics.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = scenario_config(dir.path(), 42);
    let mut paths = Vec::new();
    for name in ["a", "b", "c"] {
        let mut cfg = base.clone();
        cfg.output_dir = dir.path().join(name);
        let p = dir.path().join(format!("{name}.toml"));
        std::fs::write(&p, cfg.to_toml().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        paths.push(p);
    }
    let a = run_train(&paths[0], &["--deterministic"])?;
    let b = run_train(&paths[1], &["--deterministic"])?;
    ensure(a == b, || "deterministic runs differ".into())?;
    let c = run_train(&paths[2], &[])?;
    ensure(a == c, || "parallel run differs from deterministic run".into())?;
    let ckpt_a = std::fs::read(dir.path().join("a/policy.ckpt")).map_err(|e| e.to_string())?;
    let ckpt_b = std::fs::read(dir.path().join("b/policy.ckpt")).map_err(|e| e.to_string())?;
    // checkpoints embed their own output_dir; compare the parameter blocks
    let blocks = |bytes: &[u8]| -> Result<serde_json::Value, String> {
        let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        Ok(v["blocks"].clone())
    };
    ensure(blocks(&ckpt_a)? == blocks(&ckpt_b)?, || "checkpoint parameters differ".into())?;
    Ok(format!(
        "seed 42: two --deterministic runs and one parallel run give identical {}-byte metrics CSVs",
        a.len()
    ))
}

// ---------------------------------------------------------------- central claim

fn central_claim() -> Outcome {
    let start = Instant::now();
    let scenario = Scenario::default();
    ensure(
        scenario.specialists.len() == 3
            && scenario.tasks.len() == 2
            && scenario.max_hops == 2
            && scenario.alpha == 0.005
            && scenario.ppo.iterations == 8
            && scenario.ppo.rollouts_per_iter == 128,
        || "default scenario does not match the stated setup".into(),
    )?;
    let s = run_simulation(&scenario, 42, TrainOptions { parallel: true }).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let single = s.best_single_model.expected_net_reward;
    let margin = s.relative_margin_vs_single;
    ensure(margin >= 0.05, || {
        format!("router {:.5} vs best single {single:.5}: margin {:+.2}%", s.router.net_reward, 100.0 * margin)
    })?;
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "router {:.5} vs best single model {} {single:.5}: {:+.1}% (best static {:.5}, routing oracle {:.5}), {secs:.1} s",
        s.router.net_reward,
        s.best_single_model.models.join("+"),
        100.0 * margin,
        s.best_static.expected_net_reward,
        s.routing_oracle_net_reward
    ))
}

// ---------------------------------------------------------------- data

fn data_contract() -> Outcome {
    let examples: Vec<Example> = (0..500)
        .map(|i| Example {
            query: format!("question {i}"),
            answers: vec![format!("answer {i}")],
            task: "qa".into(),
        })
        .collect();
    let (train, test) = cap_and_split(&examples, 300, 0.7, 42).map_err(|e| e.to_string())?;
    ensure(train.len() == 210 && test.len() == 90, || format!("{}/{}", train.len(), test.len()))?;
    let overlap = train.iter().filter(|e| test.contains(e)).count();
    ensure(overlap == 0, || format!("{overlap} shared examples"))?;
    let again = cap_and_split(&examples, 300, 0.7, 42).map_err(|e| e.to_string())?;
    ensure(again == (train.clone(), test.clone()), || "split not deterministic".into())?;
    let mut reversed = examples.clone();
    reversed.reverse();
    let rev = cap_and_split(&reversed, 300, 0.7, 42).map_err(|e| e.to_string())?;
    ensure(rev == (train, test), || "split depends on input order".into())?;
    Ok("210/90 disjoint, identical on rerun and under input reordering".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("f1-oracle-equivalence", f1_oracle_equivalence),
        ("reward-identity", reward_identity),
        ("cost-formula", cost_formula),
        ("gradient-correctness", gradient_check),
        ("gae-oracle", gae_oracle),
        ("ppo-mechanics", ppo_mechanics),
        ("determinism", determinism),
        ("central-claim", central_claim),
        ("data-contract", data_contract),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
