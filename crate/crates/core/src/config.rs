//! Experiment configuration, loaded from TOML.
//!
//! Every section and every key is optional; missing values take the
//! defaults below. `ExperimentConfig::set` overrides a single dotted key and
//! is what the matrix runner uses to build its cells.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{PathLossParams, RadioParams};
use crate::energy::ComputeProfile;
use crate::error::{Error, Result};
use crate::fedwgt::Strategy;
use crate::mac::MacParams;
use crate::marl::Hyperparams;
use crate::noise::NoiseSchedule;
use crate::par::Parallelism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Uniform over the placement disc.
    Uniform,
    /// Station k sits at a radius spaced evenly between the inner and outer
    /// placement radii, at a random bearing.
    Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sensitive_agents: usize,
    pub insensitive_agents: usize,
    pub placement: Placement,
    pub placement_radius_m: f64,
    pub inner_radius_m: f64,
    /// How far a station may wander from where it was placed.
    pub max_radius_m: f64,
    pub speed_mps: f64,
    pub step_s: f64,
    pub bs_antennas: usize,
    pub ue_antennas: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            sensitive_agents: 8,
            insensitive_agents: 8,
            placement: Placement::Uniform,
            placement_radius_m: 7.5,
            inner_radius_m: 1.0,
            max_radius_m: 20.0,
            speed_mps: 1.0,
            step_s: 0.2,
            bs_antennas: 4,
            ue_antennas: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeConfig {
    pub kappa: f64,
    pub cycles_per_bit: f64,
    pub flops_per_cycle: f64,
    pub gradient_bits: f64,
    pub state_bits: f64,
    pub task_bits: f64,
    pub server_task_bits: f64,
    pub station_max_hz: f64,
    pub server_max_hz: f64,
    /// Decoded frequencies are raised to at least this before costing.
    pub min_frequency_hz: f64,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        let s = ComputeProfile::station();
        let ap = ComputeProfile::access_point();
        Self {
            kappa: s.kappa,
            cycles_per_bit: s.cycles_per_bit,
            flops_per_cycle: s.flops_per_cycle,
            gradient_bits: s.gradient_bits,
            state_bits: s.state_bits,
            task_bits: s.task_bits,
            server_task_bits: ap.task_bits,
            station_max_hz: s.max_frequency_hz,
            server_max_hz: ap.max_frequency_hz,
            min_frequency_hz: 1e6,
        }
    }
}

impl ComputeConfig {
    pub fn station(&self, frequency_hz: f64) -> ComputeProfile {
        ComputeProfile {
            kappa: self.kappa,
            frequency_hz,
            max_frequency_hz: self.station_max_hz,
            cycles_per_bit: self.cycles_per_bit,
            flops_per_cycle: self.flops_per_cycle,
            gradient_bits: self.gradient_bits,
            state_bits: self.state_bits,
            task_bits: self.task_bits,
        }
    }

    pub fn server(&self, frequency_hz: f64) -> ComputeProfile {
        ComputeProfile {
            max_frequency_hz: self.server_max_hz,
            task_bits: self.server_task_bits,
            ..self.station(frequency_hz)
        }
    }

    fn validate(&self, bad: &mut Vec<String>) {
        bad.extend(self.station(self.station_max_hz).validate());
        bad.extend(self.server(self.server_max_hz).validate());
        if !(self.min_frequency_hz > 0.0 && self.min_frequency_hz <= self.station_max_hz.min(self.server_max_hz)) {
            bad.push(format!(
                "min_frequency_hz must lie in (0, min(station_max_hz, server_max_hz)] (got {})",
                self.min_frequency_hz
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RewardScheme {
    /// Throughput per unit latency, no cap.
    ThroughputLatency,
    /// Throughput per unit energy, with a latency-cap penalty.
    ThroughputEnergy,
}

impl TryFrom<u8> for RewardScheme {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::ThroughputLatency),
            2 => Ok(Self::ThroughputEnergy),
            other => Err(format!("reward scheme must be 1 or 2 (got {other})")),
        }
    }
}

impl From<RewardScheme> for u8 {
    fn from(s: RewardScheme) -> u8 {
        match s {
            RewardScheme::ThroughputLatency => 1,
            RewardScheme::ThroughputEnergy => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub scheme: RewardScheme,
    pub sensitive_latency_cap_s: f64,
    pub insensitive_latency_cap_s: f64,
    /// Throughput is divided by this before entering the reward ratio.
    pub throughput_unit_bps: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            scheme: RewardScheme::ThroughputEnergy,
            sensitive_latency_cap_s: 0.5,
            insensitive_latency_cap_s: 0.5,
            throughput_unit_bps: 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub strategy: Strategy,
    pub lipschitz: f64,
    pub smoothness: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::FedWgt,
            lipschitz: 1.0,
            smoothness: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episodes: u32,
    pub steps_per_episode: u32,
    pub seeds: Vec<u64>,
    pub parallelism: Parallelism,
    pub checkpoint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episodes: 120,
            steps_per_episode: 50,
            seeds: vec![0, 1, 2, 3, 4],
            parallelism: Parallelism::default(),
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub channel: PathLossParams,
    pub radio: RadioParams,
    pub mac: MacParams,
    pub compute: ComputeConfig,
    pub reward: RewardConfig,
    pub training: Hyperparams,
    pub noise: NoiseSchedule,
    pub federation: FederationConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn agents(&self) -> usize {
        self.scenario.sensitive_agents + self.scenario.insensitive_agents
    }

    /// Checks every bound and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let s = &self.scenario;
        if self.agents() == 0 {
            bad.push("at least one agent is required".into());
        }
        if !(s.placement_radius_m > 0.0) {
            bad.push(format!("placement_radius_m must be > 0 (got {})", s.placement_radius_m));
        }
        if !(s.inner_radius_m >= 0.0 && s.inner_radius_m <= s.placement_radius_m) {
            bad.push(format!(
                "inner_radius_m must lie in [0, placement_radius_m] (got {})",
                s.inner_radius_m
            ));
        }
        if !(s.max_radius_m > 0.0) {
            bad.push(format!("max_radius_m must be > 0 (got {})", s.max_radius_m));
        }
        if !(s.speed_mps >= 0.0) {
            bad.push(format!("speed_mps must be >= 0 (got {})", s.speed_mps));
        }
        if !(s.step_s > 0.0) {
            bad.push(format!("step_s must be > 0 (got {})", s.step_s));
        }
        if s.bs_antennas == 0 || s.ue_antennas == 0 {
            bad.push("antenna counts must be >= 1".into());
        }
        bad.extend(self.channel.validate());
        bad.extend(self.radio.validate());
        bad.extend(self.mac.validate());
        if self.mac.mini_slot_s >= s.step_s {
            bad.push("mini_slot_s must be shorter than step_s".into());
        }
        self.compute.validate(&mut bad);
        let r = &self.reward;
        for (name, v) in [
            ("sensitive_latency_cap_s", r.sensitive_latency_cap_s),
            ("insensitive_latency_cap_s", r.insensitive_latency_cap_s),
            ("throughput_unit_bps", r.throughput_unit_bps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be > 0 (got {v})"));
            }
        }
        bad.extend(self.training.validate());
        bad.extend(self.noise.validate());
        if self.federation.strategy == Strategy::FedWgt {
            let f = &self.federation;
            if !(f.lipschitz > 0.0 && f.smoothness > 0.0) {
                bad.push("federation lipschitz and smoothness must be > 0".into());
            }
        }
        if self.run.episodes == 0 {
            bad.push("run.episodes must be >= 1".into());
        }
        if self.run.steps_per_episode == 0 {
            bad.push("run.steps_per_episode must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// Overrides one dotted key, e.g. `noise.rate` or `federation.strategy`.
    /// The value is parsed according to the type of the current value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(vec![format!("unknown config key {key:?}")]))?;
        }
        *slot =
            parse_like(slot, value).ok_or_else(|| Error::Config(vec![format!("cannot parse {value:?} for {key}")]))?;
        *self = root.try_into()?;
        Ok(())
    }

    /// Reads one dotted key back as a string.
    pub fn get(&self, key: &str) -> Result<String> {
        let root = toml::Value::try_from(self).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let mut slot = &root;
        for part in key.split('.') {
            slot = slot
                .get(part)
                .ok_or_else(|| Error::Config(vec![format!("unknown config key {key:?}")]))?;
        }
        Ok(match slot {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }
}

fn parse_like(current: &toml::Value, s: &str) -> Option<toml::Value> {
    use toml::Value;
    Some(match current {
        Value::String(_) => Value::String(s.to_string()),
        Value::Integer(_) => Value::Integer(s.parse().ok()?),
        Value::Float(_) => Value::Float(s.parse().ok()?),
        Value::Boolean(_) => Value::Boolean(s.parse().ok()?),
        Value::Array(_) => {
            let items: Option<Vec<i64>> = s.split(',').map(|x| x.trim().parse().ok()).collect();
            Value::Array(items?.into_iter().map(Value::Integer).collect())
        }
        _ => return None,
    })
}
