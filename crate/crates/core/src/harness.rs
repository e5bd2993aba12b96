//! End-to-end experiment runner and comparison matrix.
//!
//! A run writes `metrics.csv` (one system row and one row per agent for
//! every step), `summary.json`, the effective `config.toml` and, when
//! enabled, the final `weights/` checkpoint.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::env::{StepResult, WirelessEnv};
use crate::error::{Error, Result};
use crate::fedwgt::{estimate_divergence, fed_weights, loss_bound, DivergenceBoundParams, RewardStats, Strategy};
use crate::marl::{IterationReport, Trainer};
use crate::par;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const WEIGHTS_DIR: &str = "weights";
pub const MATRIX_FILE: &str = "matrix.csv";

pub const METRIC_COLUMNS: [&str; 19] = [
    "iteration",
    "episode",
    "step",
    "row",
    "agent",
    "class",
    "reward",
    "throughput_mbps",
    "latency_s",
    "energy_j",
    "snr_db",
    "loss_rate",
    "idle",
    "divergence",
    "weight",
    "noise",
    "critic_loss",
    "actor_value",
    "bound",
];

/// Trailing window and relative tolerance of the convergence rule.
pub const CONVERGENCE_WINDOW: usize = 20;
pub const CONVERGENCE_TOLERANCE: f64 = 0.05;
/// Episodes averaged at each end of a run.
pub const EDGE_EPISODES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub episodes: u32,
    pub steps_per_episode: u32,
    /// Mean system reward over the last episode.
    pub final_mean_reward: f64,
    pub mean_throughput_mbps: f64,
    pub mean_latency_s: f64,
    pub total_energy_j: f64,
    pub convergence_iteration: u64,
    pub episode_mean_rewards: Vec<f64>,
    /// Mean system reward over the first and last `EDGE_EPISODES` episodes.
    pub head_mean_reward: f64,
    pub tail_mean_reward: f64,
    pub tail_mean_throughput_mbps: f64,
    /// Share of agent-steps over their latency cap, over the whole run and
    /// over the last `EDGE_EPISODES` episodes.
    pub violation_fraction: f64,
    pub tail_violation_fraction: f64,
}

/// First 1-based iteration whose trailing `window` average lies within
/// `tol` (relative) of the final trailing average. Falls back to the run
/// length.
pub fn convergence_iteration(rewards: &[f64], window: usize, tol: f64) -> u64 {
    let n = rewards.len();
    if n == 0 {
        return 0;
    }
    let window = window.max(1);
    let mut averages = Vec::with_capacity(n);
    let mut sum = 0.0;
    for i in 0..n {
        sum += rewards[i];
        if i >= window {
            sum -= rewards[i - window];
        }
        averages.push(sum / (i + 1).min(window) as f64);
    }
    let last = averages[n - 1];
    averages
        .iter()
        .position(|a| (a - last).abs() <= tol * last.abs())
        .map_or(n as u64, |i| i as u64 + 1)
}

fn mix(seed: u64, lane: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ lane.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

struct StepContext<'a> {
    iteration: u64,
    episode: u32,
    step: u32,
    noise: f64,
    divergence: &'a [f64],
    weights: &'a [f64],
    bound: Option<f64>,
}

fn write_rows<W: Write>(
    w: &mut csv::Writer<W>,
    ctx: &StepContext<'_>,
    res: &StepResult,
    report: &IterationReport,
) -> Result<()> {
    let head = [ctx.iteration.to_string(), ctx.episode.to_string(), ctx.step.to_string()];
    let sys = &res.system;
    let mut row: Vec<String> = head.to_vec();
    row.extend([
        "system".into(),
        String::new(),
        String::new(),
        num(sys.mean_reward),
        num(sys.throughput_bps / 1e6),
        num(sys.mean_latency_s),
        num(sys.energy_j),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        num(ctx.noise),
        opt(mean_of(report.critic_losses.iter().flatten().copied())),
        opt(mean_of(report.actor_values.iter().flatten().copied())),
        opt(ctx.bound),
    ]);
    w.write_record(&row)?;
    for (k, a) in res.agents.iter().enumerate() {
        let mut row: Vec<String> = head.to_vec();
        row.extend([
            "agent".into(),
            k.to_string(),
            a.privacy.as_str().into(),
            num(res.rewards[k]),
            num(a.throughput_bps / 1e6),
            num(a.latency_s),
            num(a.energy_j),
            num(a.snr_db),
            num(res.observations[k].loss_rate),
            num(res.observations[k].idle),
            num(ctx.divergence[k]),
            num(ctx.weights[k]),
            String::new(),
            opt(report.critic_losses[k]),
            opt(report.actor_values[k]),
            String::new(),
        ]);
        w.write_record(&row)?;
    }
    Ok(())
}

fn diverged(trainer: &Trainer, out_dir: &Path, iteration: u64) -> Error {
    let dir = out_dir.join("weights-diverged");
    if let Err(e) = checkpoint::save(trainer, &dir) {
        return e;
    }
    Error::Diverged {
        iteration,
        checkpoint: dir,
    }
}

/// Runs the full training loop for one seed and writes its outputs into
/// `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;

    let s = &cfg.scenario;
    let strategy = cfg.federation.strategy;
    let mut env = WirelessEnv::new(cfg, mix(seed, 1))?;
    let mut trainer = Trainer::new(
        &cfg.training,
        s.sensitive_agents,
        s.insensitive_agents,
        mix(seed, 2),
        strategy,
        cfg.run.parallelism,
    )?;
    let n = env.agents();
    let mut stats = RewardStats::new(n);
    let mut metrics = csv::Writer::from_writer(BufWriter::new(File::create(out_dir.join(METRICS_FILE))?));
    metrics.write_record(METRIC_COLUMNS)?;

    let steps = cfg.run.steps_per_episode;
    let mut step_rewards = Vec::new();
    let mut episode_rewards = Vec::with_capacity(cfg.run.episodes as usize);
    let mut episode_violations = Vec::with_capacity(cfg.run.episodes as usize);
    let mut throughput_mbps = Vec::new();
    let (mut latency_sum, mut energy_sum) = (0.0, 0.0);
    let mut iteration = 0u64;

    for episode in 0..cfg.run.episodes {
        let noise = cfg.noise.value(f64::from(episode));
        let mut obs: Vec<Vec<f64>> = env.reset()?.iter().map(|o| o.features().to_vec()).collect();
        stats.reset();
        let (mut ep_reward, mut ep_violations) = (0.0, 0u64);
        for step in 0..steps {
            let actions = trainer.select_actions(&obs, noise)?;
            let raw: Vec<[f64; 4]> = actions.iter().map(|a| [a[0], a[1], a[2], a[3]]).collect();
            let res = match env.step(&raw) {
                Err(Error::NonFinite(_)) => return Err(diverged(&trainer, out_dir, iteration)),
                other => other?,
            };
            let next: Vec<Vec<f64>> = res.observations.iter().map(|o| o.features().to_vec()).collect();
            trainer.store(&obs, &actions, &res.rewards, &next)?;
            stats.record(&res.rewards);

            let divergence = estimate_divergence(&stats)?;
            let weights = match strategy {
                Strategy::FedWgt => fed_weights(&divergence)?.weights,
                _ => crate::fedwgt::uniform_weights(n),
            };
            iteration += 1;
            let report = match trainer.train_iteration(&weights, strategy) {
                Err(Error::NonFinite(_)) => return Err(diverged(&trainer, out_dir, iteration)),
                other => other?,
            };
            if !trainer.is_finite() {
                return Err(diverged(&trainer, out_dir, iteration));
            }
            let bound = if strategy == Strategy::FedWgt && trainer.federation_rounds() > 0 {
                let p = DivergenceBoundParams {
                    learning_rate: cfg.training.lr_critic,
                    lipschitz: cfg.federation.lipschitz,
                    smoothness: cfg.federation.smoothness,
                    rounds: trainer.federation_rounds().min(u64::from(u32::MAX)) as u32,
                };
                loss_bound(&p, &weights, &divergence).ok()
            } else {
                None
            };
            let ctx = StepContext {
                iteration,
                episode,
                step,
                noise,
                divergence: &divergence,
                weights: &weights,
                bound,
            };
            write_rows(&mut metrics, &ctx, &res, &report)?;

            step_rewards.push(res.system.mean_reward);
            ep_reward += res.system.mean_reward;
            ep_violations += res.agents.iter().filter(|a| a.latency_violated).count() as u64;
            throughput_mbps.push(res.system.throughput_bps / 1e6);
            latency_sum += res.system.mean_latency_s;
            energy_sum += res.system.energy_j;
            obs = next;
        }
        let ep_mean = ep_reward / f64::from(steps);
        debug!("seed {seed} episode {episode}: mean reward {ep_mean:.4}, noise {noise:.3}");
        episode_rewards.push(ep_mean);
        episode_violations.push(ep_violations);
    }
    metrics.flush()?;
    drop(metrics);

    if cfg.run.checkpoint {
        checkpoint::save(&trainer, &out_dir.join(WEIGHTS_DIR))?;
    }

    let k = episode_rewards.len();
    let edge = EDGE_EPISODES.min(k);
    let per_episode = f64::from(steps) * n as f64;
    let iterations = step_rewards.len() as f64;
    let tail_steps = edge * steps as usize;
    let summary = Summary {
        seed,
        episodes: cfg.run.episodes,
        steps_per_episode: steps,
        final_mean_reward: episode_rewards[k - 1],
        mean_throughput_mbps: throughput_mbps.iter().sum::<f64>() / iterations,
        mean_latency_s: latency_sum / iterations,
        total_energy_j: energy_sum,
        convergence_iteration: convergence_iteration(&step_rewards, CONVERGENCE_WINDOW, CONVERGENCE_TOLERANCE),
        head_mean_reward: episode_rewards[..edge].iter().sum::<f64>() / edge as f64,
        tail_mean_reward: episode_rewards[k - edge..].iter().sum::<f64>() / edge as f64,
        tail_mean_throughput_mbps: throughput_mbps[throughput_mbps.len() - tail_steps..]
            .iter()
            .sum::<f64>()
            / tail_steps as f64,
        violation_fraction: episode_violations.iter().sum::<u64>() as f64 / (per_episode * k as f64),
        tail_violation_fraction: episode_violations[k - edge..].iter().sum::<u64>() as f64
            / (per_episode * edge as f64),
        episode_mean_rewards: episode_rewards,
    };
    let mut w = BufWriter::new(File::create(out_dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    info!(
        "seed {seed}: head {:.4} tail {:.4} throughput {:.1} Mbps, converged at {}",
        summary.head_mean_reward, summary.tail_mean_reward, summary.mean_throughput_mbps, summary.convergence_iteration
    );
    Ok(summary)
}

/// Keys a matrix may sweep.
pub const MATRIX_KEYS: [&str; 5] = [
    "noise.kind",
    "noise.rate",
    "noise.n0",
    "federation.strategy",
    "reward.scheme",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    /// Parses `KEY=V1,V2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(vec![format!("axis {s:?} is not KEY=V1,V2")]))?;
        let values: Vec<String> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if values.is_empty() {
            return Err(Error::Config(vec![format!("axis {key:?} has no values")]));
        }
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRun {
    pub cell: usize,
    pub seed: u64,
    /// `(key, value)` per axis, in axis order.
    pub assignment: Vec<(String, String)>,
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Metrics emitted per run into the long-format table.
pub fn summary_metrics(s: &Summary) -> Vec<(&'static str, f64)> {
    vec![
        ("final_mean_reward", s.final_mean_reward),
        ("head_mean_reward", s.head_mean_reward),
        ("tail_mean_reward", s.tail_mean_reward),
        ("mean_throughput_mbps", s.mean_throughput_mbps),
        ("tail_mean_throughput_mbps", s.tail_mean_throughput_mbps),
        ("mean_latency_s", s.mean_latency_s),
        ("total_energy_j", s.total_energy_j),
        ("convergence_iteration", s.convergence_iteration as f64),
        ("violation_fraction", s.violation_fraction),
        ("tail_violation_fraction", s.tail_violation_fraction),
    ]
}

/// Every combination of axis values, in row-major order over `axes`.
pub fn cells(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    out
}

/// Runs the Cartesian product of `axes` for every seed. Each run writes into
/// `out_dir/cell-NNN/seed-S`; the merged table goes to `out_dir/matrix.csv`.
pub fn run_matrix(base: &ExperimentConfig, axes: &[Axis], seeds: &[u64], out_dir: &Path) -> Result<Vec<MatrixRun>> {
    if axes.is_empty() {
        return Err(Error::Config(vec!["a matrix needs at least one axis".into()]));
    }
    if seeds.is_empty() {
        return Err(Error::Config(vec!["a matrix needs at least one seed".into()]));
    }
    let mut bad = Vec::new();
    for axis in axes {
        if !MATRIX_KEYS.contains(&axis.key.as_str()) {
            bad.push(format!("axis {:?} is not one of {}", axis.key, MATRIX_KEYS.join(", ")));
        }
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }

    let mut jobs = Vec::new();
    for (c, assignment) in cells(axes).into_iter().enumerate() {
        let mut cfg = base.clone();
        for (k, v) in &assignment {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        for &seed in seeds {
            let dir = out_dir.join(format!("cell-{c:03}")).join(format!("seed-{seed}"));
            jobs.push((c, seed, assignment.clone(), cfg.clone(), dir));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    info!("matrix: {} runs", jobs.len());
    let results = par::map(base.run.parallelism, &jobs, |_, (c, seed, assignment, cfg, dir)| {
        run_experiment(cfg, *seed, dir).map(|summary| MatrixRun {
            cell: *c,
            seed: *seed,
            assignment: assignment.clone(),
            dir: dir.clone(),
            summary,
        })
    });
    let runs: Vec<MatrixRun> = results.into_iter().collect::<Result<_>>()?;

    let mut w = csv::Writer::from_path(out_dir.join(MATRIX_FILE))?;
    let mut header = vec!["cell".to_string(), "seed".to_string()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(["metric".to_string(), "value".to_string()]);
    w.write_record(&header)?;
    for run in &runs {
        for (metric, value) in summary_metrics(&run.summary) {
            let mut row = vec![run.cell.to_string(), run.seed.to_string()];
            row.extend(run.assignment.iter().map(|(_, v)| v.clone()));
            row.extend([metric.to_string(), num(value)]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(runs)
}

/// Plain-text table of a metric's per-cell mean across seeds.
pub fn format_matrix(runs: &[MatrixRun], metric: &str) -> String {
    let mut out = String::new();
    let mut cells: Vec<usize> = runs.iter().map(|r| r.cell).collect();
    cells.dedup();
    for c in cells {
        let members: Vec<&MatrixRun> = runs.iter().filter(|r| r.cell == c).collect();
        let values: Vec<f64> = members
            .iter()
            .filter_map(|r| {
                summary_metrics(&r.summary)
                    .into_iter()
                    .find(|(m, _)| *m == metric)
                    .map(|(_, v)| v)
            })
            .collect();
        let label: Vec<String> = members[0].assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let _ = writeln!(
            out,
            "cell {c:3} [{}] {metric} mean {mean:.6} over {} seeds",
            label.join(" "),
            values.len()
        );
    }
    out
}
