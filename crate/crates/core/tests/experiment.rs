use fedmarl::checkpoint;
use fedmarl::config::{Placement, RewardScheme};
use fedmarl::env::{decode_action, reward, WirelessEnv, ACTION_DIM};
use fedmarl::fedwgt::Strategy;
use fedmarl::harness::{
    run_experiment, run_matrix, Axis, CONFIG_FILE, MATRIX_FILE, METRICS_FILE, METRIC_COLUMNS, SUMMARY_FILE, WEIGHTS_DIR,
};
use fedmarl::marl::Trainer;
use fedmarl::par::Parallelism;
use fedmarl::{Error, ExperimentConfig, Summary};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.sensitive_agents = 2;
    cfg.scenario.insensitive_agents = 2;
    cfg.run.episodes = 3;
    cfg.run.steps_per_episode = 12;
    cfg
}

#[test]
fn default_config_round_trips_through_toml() {
    let cfg = ExperimentConfig::default();
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
}

#[test]
fn config_rejects_unknown_keys_and_reports_every_violation() {
    assert!(ExperimentConfig::from_toml_str("[scenario]\nbogus = 1\n").is_err());
    let mut cfg = ExperimentConfig::default();
    cfg.noise.rate = -1.0;
    cfg.training.batch_size = 0;
    match cfg.validate() {
        Err(Error::Config(msgs)) => assert!(msgs.len() >= 2, "{msgs:?}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn dotted_overrides() {
    let mut cfg = ExperimentConfig::default();
    cfg.set("federation.strategy", "fedavg").unwrap();
    cfg.set("noise.rate", "0.01").unwrap();
    cfg.set("reward.scheme", "1").unwrap();
    cfg.set("scenario.placement", "spread").unwrap();
    assert_eq!(cfg.federation.strategy, Strategy::FedAvg);
    assert_eq!(cfg.noise.rate, 0.01);
    assert_eq!(cfg.reward.scheme, RewardScheme::ThroughputLatency);
    assert_eq!(cfg.scenario.placement, Placement::Spread);
    assert_eq!(cfg.get("noise.rate").unwrap(), "0.01");
    assert!(cfg.set("noise.nope", "1").is_err());
    assert!(cfg.set("noise.rate", "fast").is_err());
}

#[test]
fn environment_is_seed_deterministic() {
    let cfg = small();
    let roll = |seed| {
        let mut env = WirelessEnv::new(&cfg, seed).unwrap();
        env.reset().unwrap();
        (0..5)
            .map(|i| {
                let a = [[0.1 * i as f64, -0.2, 0.3, 0.4]; 4];
                env.step(&a).unwrap().rewards
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(roll(3), roll(3));
    assert_ne!(roll(3), roll(4));
}

#[test]
fn environment_rejects_bad_actions() {
    let cfg = small();
    let mut env = WirelessEnv::new(&cfg, 0).unwrap();
    env.reset().unwrap();
    assert!(env.step(&[[0.0; ACTION_DIM]; 3]).is_err());
    assert!(env.step(&[[f64::NAN, 0.0, 0.0, 0.0]; 4]).is_err());
}

#[test]
fn spread_placement_covers_the_radius_range() {
    let mut cfg = small();
    cfg.scenario.placement = Placement::Spread;
    cfg.scenario.speed_mps = 0.0;
    let mut env = WirelessEnv::new(&cfg, 1).unwrap();
    env.reset().unwrap();
    let radii: Vec<f64> = env.positions().iter().map(|p| p.distance_to(0.0, 0.0)).collect();
    assert!((radii[0] - 1.0).abs() < 1e-9, "{radii:?}");
    assert!((radii[3] - 7.5).abs() < 1e-9, "{radii:?}");
}

#[test]
fn rewards_stay_bounded_and_track_the_latency_cap() {
    let cfg = small();
    let mut env = WirelessEnv::new(&cfg, 2).unwrap();
    env.reset().unwrap();
    for _ in 0..20 {
        let res = env.step(&[[0.0, 0.5, -0.5, 0.9]; 4]).unwrap();
        for (k, (r, info)) in res.rewards.iter().zip(&res.agents).enumerate() {
            assert!(r.abs() < 1.0);
            let spec = env.spec(k);
            assert_eq!(info.latency_violated, info.latency_s > spec.latency_cap_s);
            let expected = reward(
                info.throughput_bps / cfg.reward.throughput_unit_bps,
                info.energy_j,
                info.latency_s,
                spec.latency_cap_s,
                cfg.reward.scheme,
            );
            assert_eq!(*r, expected);
        }
    }
    let spec = env.spec(0);
    let d = decode_action(&[-1.0, 1.0, -1.0, 1.0], spec);
    assert_eq!((d.cw, d.frame_bits), (spec.cw_min, spec.frame_max_bits));
}

#[test]
fn run_writes_artifacts_and_reproduces_byte_for_byte() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&cfg, 5, &dir.path().join("a")).unwrap();
    let b = run_experiment(&cfg, 5, &dir.path().join("b")).unwrap();
    assert_eq!(a, b);
    for f in [METRICS_FILE, SUMMARY_FILE, CONFIG_FILE] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    assert!(dir
        .path()
        .join("a")
        .join(WEIGHTS_DIR)
        .join(checkpoint::MANIFEST_FILE)
        .exists());

    let metrics = std::fs::read_to_string(dir.path().join("a").join(METRICS_FILE)).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), METRIC_COLUMNS.join(","));
    // one system row plus one row per agent for every step
    assert_eq!(lines.count(), 3 * 12 * 5);

    let summary: Summary =
        serde_json::from_slice(&std::fs::read(dir.path().join("a").join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary, a);
    assert_eq!(a.episode_mean_rewards.len(), 3);
    assert!((0.0..=1.0).contains(&a.violation_fraction));

    let written = ExperimentConfig::load(dir.path().join("a").join(CONFIG_FILE)).unwrap();
    assert_eq!(written, cfg);
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let mut cfg = small();
    let dir = tempfile::tempdir().unwrap();
    cfg.run.parallelism = Parallelism::Sequential;
    run_experiment(&cfg, 1, &dir.path().join("seq")).unwrap();
    cfg.run.parallelism = Parallelism::Rayon;
    run_experiment(&cfg, 1, &dir.path().join("par")).unwrap();
    let read = |d: &str| std::fs::read(dir.path().join(d).join(METRICS_FILE)).unwrap();
    assert_eq!(read("seq"), read("par"));
}

#[test]
fn checkpoint_restores_networks_and_rng_positions() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, 7, dir.path()).unwrap();
    let weights = dir.path().join(WEIGHTS_DIR);

    let mut restored = Trainer::new(&cfg.training, 2, 2, 999, Strategy::FedWgt, Parallelism::Sequential).unwrap();
    let manifest = checkpoint::load(&mut restored, &weights).unwrap();
    assert_eq!(manifest.iteration, 36);
    assert_eq!(restored.iteration(), 36);

    let again = tempfile::tempdir().unwrap();
    let second = checkpoint::save(&restored, again.path()).unwrap();
    assert_eq!(second, manifest);
    for f in &manifest.files {
        assert_eq!(
            std::fs::read(weights.join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap()
        );
    }

    let mut wrong = Trainer::new(&cfg.training, 3, 2, 0, Strategy::FedWgt, Parallelism::Sequential).unwrap();
    assert!(checkpoint::load(&mut wrong, &weights).is_err());
}

#[test]
fn matrix_writes_a_long_table() {
    let mut cfg = small();
    cfg.run.checkpoint = false;
    let dir = tempfile::tempdir().unwrap();
    let axes: Vec<Axis> = vec![
        "federation.strategy=fedavg,fedwgt".parse().unwrap(),
        "reward.scheme=1,2".parse().unwrap(),
    ];
    let runs = run_matrix(&cfg, &axes, &[0, 1], dir.path()).unwrap();
    assert_eq!(runs.len(), 8);
    assert!(dir.path().join("cell-003").join("seed-1").join(METRICS_FILE).exists());
    let table = std::fs::read_to_string(dir.path().join(MATRIX_FILE)).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "cell,seed,federation.strategy,reward.scheme,metric,value"
    );
    assert_eq!(lines.count(), 8 * 10);
    assert!(run_matrix(&cfg, &["training.batch_size=4".parse().unwrap()], &[0], dir.path()).is_err());
}
