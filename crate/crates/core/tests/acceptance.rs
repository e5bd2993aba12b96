//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `FEDMARL_ACCEPT_ONLY=1,4,10` restricts the run to a subset. Criteria in
//! `KNOWN_FAILING` are still executed and reported, but only fail the
//! process when `FEDMARL_ACCEPT_STRICT=1` is set.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use fedmarl::channel::{path_loss, snr, PathLossParams, RadioParams};
use fedmarl::config::{ExperimentConfig, Placement};
use fedmarl::energy::{actor_local, ComputeProfile, TrainingLoad};
use fedmarl::fedwgt::{aggregate_class, bound_factor, fed_weights, uniform_weights, DivergenceBoundParams, Strategy};
use fedmarl::harness::{format_matrix, run_experiment, run_matrix, Axis, MatrixRun, METRICS_FILE};
use fedmarl::mac::{simulate_slot, MacAction, TxQueue};
use fedmarl::marl::{
    actor_net, update_insensitive_actor, update_sensitive_actor, Hyperparams, JointTransition, QuadraticProbe, Trainer,
    Transition,
};
use fedmarl::nn::testing::max_fd_relative_error;
use fedmarl::nn::{Activation, Mlp};
use fedmarl::noise::{validate, NoiseSchedule, ScheduleKind};
use fedmarl::par::Parallelism;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria this model cannot meet; see "Known failing criteria" in the README.
const KNOWN_FAILING: &[u8] = &[8, 9];

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gradients() -> Verdict {
    let archs: [(&str, Vec<usize>, Activation); 3] = [
        ("actor", vec![3, 8, 8, 8, 4], Activation::Tanh),
        ("sensitive critic", vec![7, 8, 8, 8, 1], Activation::Identity),
        ("centralized critic", vec![56, 8, 8, 8, 1], Activation::Identity),
    ];
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, sizes, out) in &archs {
        let mut arch_worst: f64 = 0.0;
        for _ in 0..20 {
            let net = Mlp::new(sizes, Activation::Relu, *out, &mut r);
            let x: Vec<f64> = (0..sizes[0]).map(|_| r.random_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..sizes[sizes.len() - 1]).map(|_| r.random_range(-1.0..1.0)).collect();
            arch_worst = arch_worst.max(max_fd_relative_error(&net, &x, &up, 1e-5));
        }
        parts.push(format!("{name} {arch_worst:.2e}"));
        worst = worst.max(arch_worst);
    }
    verdict(worst < 1e-4, format!("max relative error: {}", parts.join(", ")))
}

fn fedwgt_algebra() -> Verdict {
    let w = fed_weights(&[1.0, 2.0]).unwrap().weights;
    let exact = w == [0.8, 0.2];

    let mut r = rng(2);
    let mut identical = true;
    for _ in 0..20 {
        let psi = vec![r.random_range(0.0..5.0); 4];
        let weights = fed_weights(&psi).unwrap().weights;
        let base: Vec<Mlp> = (0..4)
            .map(|_| Mlp::new(&[7, 8, 8, 8, 1], Activation::Relu, Activation::Identity, &mut r))
            .collect();
        let mut a = base.clone();
        let mut b = base;
        let mut ra: Vec<&mut Mlp> = a.iter_mut().collect();
        let mut rb: Vec<&mut Mlp> = b.iter_mut().collect();
        aggregate_class(&mut ra, &weights, Strategy::FedWgt).unwrap();
        aggregate_class(&mut rb, &uniform_weights(4), Strategy::FedAvg).unwrap();
        identical &= a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.params().zip(y.params()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    let mut worst_sum: f64 = 0.0;
    for _ in 0..10_000 {
        let n = r.random_range(1..=32);
        let scale = 10f64.powf(r.random_range(-6.0..3.0));
        let psi: Vec<f64> = (0..n)
            .map(|_| {
                if r.random::<f64>() < 0.05 {
                    0.0
                } else {
                    scale * r.random::<f64>()
                }
            })
            .collect();
        let s: f64 = fed_weights(&psi).unwrap().weights.iter().sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
    }

    let tau = bound_factor(&DivergenceBoundParams {
        learning_rate: 0.1,
        lipschitz: 1.0,
        smoothness: 1.0,
        rounds: 2,
    })
    .unwrap();
    let tau_ok = (tau - 0.19).abs() <= 1e-12;
    verdict(
        exact && identical && worst_sum <= 1e-12 && tau_ok,
        format!("psi=[1,2] -> {w:?}; equal psi bit-identical: {identical}; max |sum-1| {worst_sum:.1e}; bound factor {tau:.15}"),
    )
}

fn noise_validator() -> Verdict {
    let mut r = rng(3);
    let (mut cubic_pass, mut linear_fail) = (0, 0);
    for _ in 0..100 {
        let rate = r.random_range(0.001..0.1);
        let n0 = r.random_range(0.1..10.0);
        let sched = |kind| NoiseSchedule {
            kind,
            rate,
            n0,
            floor: 0.0,
        };
        cubic_pass += usize::from(validate(&sched(ScheduleKind::Cubic), None, 1000).unwrap().passed());
        linear_fail += usize::from(!validate(&sched(ScheduleKind::Linear), None, 1000).unwrap().passed());
    }

    let mut shape_ok = true;
    for kind in [ScheduleKind::Cubic, ScheduleKind::Linear] {
        let s = NoiseSchedule {
            kind,
            rate: 0.02,
            n0: 1.0,
            floor: 0.05,
        };
        let mut ts: Vec<f64> = (0..10_000).map(|_| r.random_range(0.0..200.0)).collect();
        ts.sort_by(f64::total_cmp);
        let values: Vec<f64> = ts.iter().map(|&t| s.value(t)).collect();
        shape_ok &= values.windows(2).all(|w| w[1] <= w[0]) && values.iter().all(|&v| v >= s.floor);
    }
    verdict(
        cubic_pass == 100 && linear_fail == 100 && shape_ok,
        format!("cubic passed {cubic_pass}/100, linear rejected {linear_fail}/100, monotone and floored: {shape_ok}"),
    )
}

fn spot_values() -> Verdict {
    let pl_params = PathLossParams {
        tx_gain_dbi: 0.0,
        rx_gain_dbi: 0.0,
        ..PathLossParams::default()
    };
    let pl1 = path_loss(&pl_params, 1.0, 0.0).unwrap();
    let pl_ok = (pl1 - 46.43).abs() <= 0.05;

    let pl10 = path_loss(&PathLossParams::default(), 10.0, 0.0).unwrap();
    let s = snr(&RadioParams::default(), pl10);
    let snr_ok = (s / 2.84e4 - 1.0).abs() <= 0.01;

    let profile = ComputeProfile {
        gradient_bits: 0.0,
        task_bits: 1e6,
        ..ComputeProfile::station()
    };
    let load = TrainingLoad {
        batch: 8,
        flops_actor: 0.0,
        flops_critic: 0.0,
    };
    let e = actor_local(&profile, &load).unwrap();
    let e_ok = (e.energy_j - 0.825).abs() <= 1e-9 && (e.latency_s - 0.66).abs() <= 1e-9;

    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = ComputeProfile {
            kappa: 10f64.powf(r.random_range(-28.0..-24.0)),
            frequency_hz: r.random_range(1e6..5e9),
            max_frequency_hz: 5e9,
            cycles_per_bit: r.random_range(1.0..1000.0),
            gradient_bits: r.random_range(0.0..1e5),
            task_bits: r.random_range(1.0..1e7),
            ..ComputeProfile::station()
        };
        let load = TrainingLoad {
            batch: r.random_range(1..64),
            flops_actor: 0.0,
            flops_critic: 0.0,
        };
        let c = actor_local(&p, &load).unwrap();
        let identity = p.power_w() * c.latency_s;
        worst = worst.max(((c.energy_j - identity) / identity).abs());
    }
    verdict(
        pl_ok && snr_ok && e_ok && worst <= 1e-12,
        format!(
            "PL(1 m) {pl1:.4} dB, SNR {s:.4e}, E {:.12} J / T {:.12} s, energy identity max rel err {worst:.1e}",
            e.energy_j, e.latency_s
        ),
    )
}

fn mac_invariants() -> Verdict {
    let mut r = rng(5);
    let tau = 0.2;
    let (mut cap_bad, mut ack_bad, mut queue_bad, mut busy_bad) = (0, 0, 0, 0);
    for _ in 0..10_000 {
        let actions: Vec<MacAction> = (0..16)
            .map(|_| MacAction {
                cw: r.random_range(15..=1023),
                frame_bits: r.random_range(0..=524_280),
            })
            .collect();
        let rates: Vec<f64> = (0..16).map(|_| 10f64.powf(r.random_range(5.0..9.5))).collect();
        let mut queues: Vec<TxQueue> = (0..16)
            .map(|_| TxQueue::with_backlog(r.random_range(0..5_000_000), 5_000_000))
            .collect();
        let before: Vec<u64> = queues.iter().map(TxQueue::backlog).collect();
        let rep = simulate_slot(&actions, &rates, &mut queues, tau, 9e-6, &mut r).unwrap();
        for (k, o) in rep.outcomes.iter().enumerate() {
            cap_bad += usize::from(o.delivered_bits as f64 / tau > rates[k]);
            ack_bad += usize::from(o.frames_acked > o.frames_sent);
            queue_bad += usize::from(before[k] - queues[k].backlog() != o.delivered_bits);
            busy_bad += usize::from(!(0.0..=o.slot_s).contains(&o.busy_s));
        }
    }

    let actions = [MacAction {
        cw: 15,
        frame_bits: 524_280,
    }; 2];
    let (mut rounds, mut collisions) = (0u64, 0u64);
    for _ in 0..10_000 {
        let mut queues = [TxQueue::full(1_000_000_000); 2];
        let rep = simulate_slot(&actions, &[1e8, 1e8], &mut queues, tau, 9e-6, &mut r).unwrap();
        rounds += rep.rounds.rounds;
        collisions += rep.rounds.collisions;
    }
    let p: f64 = 2.0 / 16.0;
    let freq = collisions as f64 / rounds as f64;
    let rel = (freq / (p * p) - 1.0).abs();
    verdict(
        cap_bad + ack_bad + queue_bad + busy_bad == 0 && rel <= 0.10,
        format!(
            "violations: rate cap {cap_bad}, acks {ack_bad}, queue {queue_bad}, busy {busy_bad}; collision frequency {freq:.5} vs {:.5} ({:+.2}%)",
            p * p,
            100.0 * (freq / (p * p) - 1.0)
        ),
    )
}

const PROBE_UPDATES: usize = 2000;
const PROBE_TOL: f64 = 0.02;

/// Single-observation probes: the action-value ignores the observation, so
/// the optimum is a constant action.
fn probes() -> Verdict {
    let hp = Hyperparams::default();
    let mut worst_single = 0;
    let mut worst_joint = 0;
    let mut failures = 0;
    for seed in 0..5u64 {
        let mut r = rng(600 + seed);
        let obs: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let t = Transition {
            obs: obs.clone(),
            action: vec![0.0],
            reward: 0.0,
            next_obs: obs.clone(),
        };
        let batch = vec![&t; hp.batch_size];
        let mut actor = actor_net(&hp, 3, 1, &mut r);
        let probe = QuadraticProbe {
            input_dim: 4,
            centers: vec![(3, 0.3)],
        };
        let hit = (1..=PROBE_UPDATES).find(|_| {
            update_sensitive_actor(&mut actor, &probe, &batch, &hp).unwrap();
            (actor.forward(&obs).unwrap()[0] - 0.3).abs() <= PROBE_TOL
        });
        match hit {
            Some(i) => worst_single = worst_single.max(i),
            None => failures += 1,
        }

        let obs2: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let mut actors = [actor_net(&hp, 3, 1, &mut r), actor_net(&hp, 3, 1, &mut r)];
        let probe = QuadraticProbe {
            input_dim: 8,
            centers: vec![(6, 0.5), (7, -0.5)],
        };
        let optimum = [0.5, -0.5];
        let hit = (1..=PROBE_UPDATES).find(|_| {
            let replayed: Vec<JointTransition> = (0..hp.batch_size)
                .map(|_| JointTransition {
                    obs: obs2.clone(),
                    actions: (0..2).map(|_| vec![r.random_range(-1.0..1.0)]).collect(),
                    rewards: vec![0.0; 2],
                    next_obs: obs2.clone(),
                })
                .collect();
            let batch: Vec<&JointTransition> = replayed.iter().collect();
            for (k, actor) in actors.iter_mut().enumerate() {
                update_insensitive_actor(actor, &probe, &batch, k, &hp).unwrap();
            }
            (0..2).all(|k| (actors[k].forward(&obs2[k]).unwrap()[0] - optimum[k]).abs() <= PROBE_TOL)
        });
        match hit {
            Some(i) => worst_joint = worst_joint.max(i),
            None => failures += 1,
        }
    }
    verdict(
        failures == 0,
        format!(
            "lr {}: single-agent worst {worst_single} updates, two-agent worst {worst_joint} updates, {failures} misses over 5 seeds",
            hp.lr_actor
        ),
    )
}

fn scheme_runs(dir: &Path) -> Vec<MatrixRun> {
    let axis: Axis = "reward.scheme=1,2".parse().unwrap();
    run_matrix(&ExperimentConfig::default(), &[axis], &SEEDS, dir).unwrap()
}

fn for_scheme(runs: &[MatrixRun], scheme: &str) -> Vec<MatrixRun> {
    runs.iter().filter(|r| r.assignment[0].1 == scheme).cloned().collect()
}

fn learning_signal(runs: &[MatrixRun]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for scheme in ["1", "2"] {
        let rs = for_scheme(runs, scheme);
        let improved = rs
            .iter()
            .filter(|r| r.summary.tail_mean_reward > r.summary.head_mean_reward)
            .count();
        pass &= improved >= 4;
        let pairs: Vec<String> = rs
            .iter()
            .map(|r| format!("{:.3}->{:.3}", r.summary.head_mean_reward, r.summary.tail_mean_reward))
            .collect();
        parts.push(format!("scheme {scheme}: {improved}/5 improved [{}]", pairs.join(" ")));
    }
    verdict(pass, parts.join("; "))
}

fn latency_constraint(runs: &[MatrixRun]) -> Verdict {
    let mean = |scheme| {
        let rs = for_scheme(runs, scheme);
        rs.iter().map(|r| r.summary.tail_violation_fraction).sum::<f64>() / rs.len() as f64
    };
    let (one, two) = (mean("1"), mean("2"));
    verdict(
        two < one,
        format!("post-convergence violation fraction: scheme 1 {one:.6}, scheme 2 {two:.6}"),
    )
}

fn heterogeneous_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.placement = Placement::Spread;
    cfg.scenario.inner_radius_m = 1.0;
    cfg.scenario.placement_radius_m = 7.5;
    cfg.channel.shadowing_sigma_db = 4.0;
    cfg.noise.rate = 0.02;
    cfg
}

fn fedwgt_trend(dir: &Path) -> Verdict {
    let axis: Axis = "federation.strategy=fedavg,fedwgt".parse().unwrap();
    let runs = run_matrix(&heterogeneous_config(), &[axis], &SEEDS, dir).unwrap();
    print!("{}", format_matrix(&runs, "tail_mean_reward"));
    let reward = |strategy: &str, seed: u64| {
        runs.iter()
            .find(|r| r.assignment[0].1 == strategy && r.seed == seed)
            .map(|r| r.summary.tail_mean_reward)
            .unwrap()
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let (w, a) = (reward("fedwgt", seed), reward("fedavg", seed));
        wins += usize::from(w >= a);
        parts.push(format!("{w:.5}/{a:.5}"));
    }
    verdict(
        wins >= 3,
        format!(
            "fedwgt >= fedavg in {wins}/5 seeds [fedwgt/fedavg: {}]",
            parts.join(" ")
        ),
    )
}

fn op_scaling() -> Verdict {
    let hp = Hyperparams::default();
    let counts = |m: usize, n: usize| {
        let mut t = Trainer::new(&hp, m, n, 7, Strategy::FedWgt, Parallelism::Sequential).unwrap();
        let mut r = rng(8);
        let agents = m + n;
        for _ in 0..hp.batch_size {
            let obs: Vec<Vec<f64>> = (0..agents)
                .map(|_| (0..3).map(|_| r.random::<f64>()).collect())
                .collect();
            let act: Vec<Vec<f64>> = (0..agents)
                .map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect();
            let rew: Vec<f64> = (0..agents).map(|_| r.random::<f64>()).collect();
            t.store(&obs, &act, &rew, &obs).unwrap();
        }
        t.train_iteration(&uniform_weights(agents), Strategy::FedWgt).unwrap();
        t.op_counts()
    };

    // Per-agent passes measured on a lone agent of each class.
    let lone_s = counts(1, 0);
    let lone_i = counts(0, 1);
    let per_sensitive = lone_s.sensitive();
    let per_insensitive_station = lone_i.insensitive_actor;
    let per_insensitive_server = lone_i.server_critic;
    let fed = lone_s.federation;

    let mut ok = true;
    let mut rows = Vec::new();
    for (m, n) in [(1, 0), (2, 0), (4, 0), (0, 1), (0, 2), (0, 4)] {
        let c = counts(m, n);
        let station = per_sensitive * m as u64 + per_insensitive_station * n as u64 + fed;
        let server = per_insensitive_server * n as u64;
        ok &= c.station_side() == station && c.server_critic == server && c.federation == fed;
        rows.push(format!(
            "({m},{n}) station {} server {}",
            c.station_side(),
            c.server_critic
        ));
    }
    let slopes = |xs: [(usize, u64); 3]| (xs[1].1 - xs[0].1, (xs[2].1 - xs[1].1) / 2);
    let s = slopes([1, 2, 4].map(|m| (m, counts(m, 0).station_side())));
    let i = slopes([1, 2, 4].map(|n| (n, counts(0, n).station_side())));
    ok &= s == (per_sensitive, per_sensitive) && i == (per_insensitive_station, per_insensitive_station);
    ok &= counts(0, 0).total() == 0;
    verdict(
        ok,
        format!(
            "per-agent passes: sensitive {per_sensitive}, insensitive station {per_insensitive_station} + server {per_insensitive_server}, federation {fed}; {}",
            rows.join(", ")
        ),
    )
}

fn determinism(first: &MatrixRun, dir: &Path) -> Verdict {
    let mut cfg = ExperimentConfig::default();
    cfg.set(&first.assignment[0].0, &first.assignment[0].1).unwrap();
    let original = std::fs::read(first.dir.join(METRICS_FILE)).unwrap();
    let again = run_experiment(&cfg, first.seed, &dir.join("rerun")).unwrap();
    let rerun = std::fs::read(dir.join("rerun").join(METRICS_FILE)).unwrap();
    cfg.run.parallelism = Parallelism::Sequential;
    run_experiment(&cfg, first.seed, &dir.join("sequential")).unwrap();
    let sequential = std::fs::read(dir.join("sequential").join(METRICS_FILE)).unwrap();
    verdict(
        original == rerun && original == sequential && again == first.summary,
        format!(
            "metrics.csv {} bytes; rerun identical: {}, sequential identical: {}",
            original.len(),
            original == rerun,
            original == sequential
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u8>> = std::env::var("FEDMARL_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let strict = std::env::var("FEDMARL_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));
    let tmp = tempfile::tempdir().unwrap();

    let mut results: Vec<(u8, &str, Verdict, f64)> = Vec::new();
    let mut record = |id: u8, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} criterion {id:2} {name}: {} ({secs:.1} s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((id, name, v, secs));
    };

    record(1, "gradient check", &mut gradients);
    record(2, "fedwgt algebra", &mut fedwgt_algebra);
    record(3, "noise validator", &mut noise_validator);
    record(4, "channel and energy spot values", &mut spot_values);
    record(5, "mac invariants", &mut mac_invariants);
    record(6, "actor probe convergence", &mut probes);

    let scheme_dir = tmp.path().join("schemes");
    let mut runs: Option<Vec<MatrixRun>> = None;
    let mut scheme_matrix = || runs.get_or_insert_with(|| scheme_runs(&scheme_dir)).clone();
    if wanted(7) || wanted(9) || wanted(11) {
        let start = Instant::now();
        let rs = scheme_matrix();
        println!(
            "     scheme matrix: {} runs in {:.1} s",
            rs.len(),
            start.elapsed().as_secs_f64()
        );
        print!("{}", format_matrix(&rs, "tail_mean_reward"));
    }
    record(7, "end-to-end learning signal", &mut || {
        learning_signal(&scheme_matrix())
    });
    record(8, "fedwgt vs fedavg trend", &mut || {
        fedwgt_trend(&tmp.path().join("federation"))
    });
    record(9, "latency constraint", &mut || latency_constraint(&scheme_matrix()));
    record(10, "op-count scaling", &mut op_scaling);
    record(11, "determinism", &mut || {
        let rs = scheme_matrix();
        let first = rs.iter().find(|r| r.assignment[0].1 == "2" && r.seed == 0).unwrap();
        determinism(first, &tmp.path().join("determinism"))
    });

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    let unexpected: Vec<u8> = failed
        .iter()
        .copied()
        .filter(|id| strict || !KNOWN_FAILING.contains(id))
        .collect();
    println!(
        "acceptance: {}/{} passed; failed {:?}; known failures {:?}",
        results.len() - failed.len(),
        results.len(),
        failed,
        KNOWN_FAILING
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
