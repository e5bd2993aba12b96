//! Multi-agent wireless edge environment.
//!
//! Agents `0..sensitive_agents` train fully locally; the remaining agents
//! offload critic work to the access point. The access point sits at the
//! origin. Each step moves every station, redraws its link, runs one MAC
//! slot and costs the slot's compute.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{evaluate_link, mobility_step, LinkState, Position};
use crate::config::{ExperimentConfig, Placement, RewardScheme};
use crate::energy::{mlp_flops, system_energy, CostBreakdown, TrainingLoad};
use crate::error::{Error, Result};
use crate::mac::{idle_fraction, packet_loss_rate, simulate_slot, MacAction, SlotOutcome, TxQueue};

pub const OBS_DIM: usize = 3;
pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Privacy {
    Sensitive,
    Insensitive,
}

impl Privacy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sensitive => "sensitive",
            Self::Insensitive => "insensitive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub privacy: Privacy,
    pub antennas: usize,
    pub latency_cap_s: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub frame_max_bits: u64,
    pub server_max_hz: f64,
    pub station_max_hz: f64,
}

impl AgentSpec {
    pub fn from_config(cfg: &ExperimentConfig, privacy: Privacy) -> Self {
        Self {
            privacy,
            antennas: cfg.scenario.ue_antennas,
            latency_cap_s: match privacy {
                Privacy::Sensitive => cfg.reward.sensitive_latency_cap_s,
                Privacy::Insensitive => cfg.reward.insensitive_latency_cap_s,
            },
            cw_min: cfg.mac.cw_min,
            cw_max: cfg.mac.cw_max,
            frame_max_bits: cfg.mac.frame_max_bits,
            server_max_hz: cfg.compute.server_max_hz,
            station_max_hz: cfg.compute.station_max_hz,
        }
    }
}

/// What a station sees of its own link after a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub snr_db: f64,
    pub loss_rate: f64,
    pub idle: f64,
}

impl Observation {
    /// Network input. SNR is scaled by 1/100 dB so all features are O(1).
    pub fn features(&self) -> [f64; OBS_DIM] {
        [self.snr_db / 100.0, self.loss_rate, self.idle]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedAction {
    pub cw: u32,
    pub frame_bits: u64,
    pub server_hz: f64,
    pub station_hz: f64,
}

fn unit(raw: f64) -> f64 {
    (raw.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// Maps a policy output in `[-1, 1]^4` affinely onto the action bounds.
/// Out-of-range components are clamped.
pub fn decode_action(raw: &[f64; ACTION_DIM], spec: &AgentSpec) -> DecodedAction {
    let span = f64::from(spec.cw_max - spec.cw_min);
    DecodedAction {
        cw: spec.cw_min + (unit(raw[0]) * span).round() as u32,
        frame_bits: (unit(raw[1]) * spec.frame_max_bits as f64).round() as u64,
        server_hz: unit(raw[2]) * spec.server_max_hz,
        station_hz: unit(raw[3]) * spec.station_max_hz,
    }
}

/// Inverse of [`decode_action`] up to rounding.
pub fn encode_action(action: &DecodedAction, spec: &AgentSpec) -> [f64; ACTION_DIM] {
    let to_raw = |v: f64, hi: f64| if hi > 0.0 { 2.0 * v / hi - 1.0 } else { -1.0 };
    [
        to_raw(f64::from(action.cw - spec.cw_min), f64::from(spec.cw_max - spec.cw_min)),
        to_raw(action.frame_bits as f64, spec.frame_max_bits as f64),
        to_raw(action.server_hz, spec.server_max_hz),
        to_raw(action.station_hz, spec.station_max_hz),
    ]
}

/// `(2 / pi) * atan(x)`, kept strictly inside `(-1, 1)`.
pub fn squash(x: f64) -> f64 {
    const EDGE: f64 = 1.0 - f64::EPSILON;
    (2.0 / PI * x.atan()).clamp(-EDGE, EDGE)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-agent reward. `throughput` is already in the configured unit.
pub fn reward(throughput: f64, energy_j: f64, latency_s: f64, latency_cap_s: f64, scheme: RewardScheme) -> f64 {
    match scheme {
        RewardScheme::ThroughputLatency => squash(ratio(throughput, latency_s)),
        RewardScheme::ThroughputEnergy => {
            if latency_s <= latency_cap_s {
                squash(ratio(throughput, energy_j))
            } else {
                squash(-latency_s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentInfo {
    pub privacy: Privacy,
    pub action: DecodedAction,
    pub throughput_bps: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub snr_db: f64,
    pub rate_bps: f64,
    pub distance_m: f64,
    pub latency_violated: bool,
    pub mac: SlotOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemInfo {
    pub throughput_bps: f64,
    pub energy_j: f64,
    pub mean_latency_s: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub agents: Vec<AgentInfo>,
    pub system: SystemInfo,
}

struct Station {
    spec: AgentSpec,
    position: Position,
    queue: TxQueue,
    load: TrainingLoad,
}

pub struct WirelessEnv {
    cfg: ExperimentConfig,
    stations: Vec<Station>,
    links: Vec<LinkState>,
    rng: ChaCha8Rng,
}

/// Layer widths of the actor and both critic kinds for a scenario.
pub fn network_sizes(cfg: &ExperimentConfig) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let hidden = &cfg.training.hidden_layers;
    let with = |input: usize, output: usize| {
        let mut s = vec![input];
        s.extend_from_slice(hidden);
        s.push(output);
        s
    };
    let joint = cfg.scenario.insensitive_agents * (OBS_DIM + ACTION_DIM);
    (
        with(OBS_DIM, ACTION_DIM),
        with(OBS_DIM + ACTION_DIM, 1),
        with(joint.max(1), 1),
    )
}

impl WirelessEnv {
    /// Builds the stations without placing them; call [`WirelessEnv::reset`]
    /// before stepping.
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (actor, sensitive_critic, joint_critic) = network_sizes(cfg);
        let batch = cfg.training.batch_size as u32;
        let s = &cfg.scenario;
        let stations = (0..cfg.agents())
            .map(|k| {
                let privacy = if k < s.sensitive_agents {
                    Privacy::Sensitive
                } else {
                    Privacy::Insensitive
                };
                let critic = match privacy {
                    Privacy::Sensitive => &sensitive_critic,
                    Privacy::Insensitive => &joint_critic,
                };
                Station {
                    spec: AgentSpec::from_config(cfg, privacy),
                    position: Position::at_anchor(0.0, 0.0, s.max_radius_m),
                    queue: TxQueue::full(cfg.mac.queue_capacity_bits),
                    load: TrainingLoad {
                        batch,
                        flops_actor: mlp_flops(&actor) * f64::from(batch),
                        flops_critic: mlp_flops(critic) * f64::from(batch),
                    },
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            stations,
            links: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn agents(&self) -> usize {
        self.stations.len()
    }

    pub fn spec(&self, k: usize) -> &AgentSpec {
        &self.stations[k].spec
    }

    pub fn specs(&self) -> Vec<AgentSpec> {
        self.stations.iter().map(|s| s.spec).collect()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.stations.iter().map(|s| s.position).collect()
    }

    pub fn links(&self) -> &[LinkState] {
        &self.links
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Places every station, draws its link and runs one warm-up slot with
    /// midpoint actions so the MAC counters are populated.
    pub fn reset(&mut self) -> Result<Vec<Observation>> {
        let s = &self.cfg.scenario;
        let n = self.stations.len();
        for (k, st) in self.stations.iter_mut().enumerate() {
            let bearing = self.rng.random_range(0.0..2.0 * PI);
            let radius = match s.placement {
                Placement::Uniform => s.placement_radius_m * self.rng.random::<f64>().sqrt(),
                Placement::Spread if n > 1 => {
                    s.inner_radius_m + (s.placement_radius_m - s.inner_radius_m) * k as f64 / (n - 1) as f64
                }
                Placement::Spread => s.inner_radius_m,
            };
            st.position = Position::at_anchor(radius * bearing.cos(), radius * bearing.sin(), s.max_radius_m);
            st.queue.refill();
        }
        let actions = vec![[0.0; ACTION_DIM]; n];
        let result = self.advance(&actions, false)?;
        Ok(result.observations)
    }

    /// Applies one raw action per agent and advances one slot.
    pub fn step(&mut self, actions: &[[f64; ACTION_DIM]]) -> Result<StepResult> {
        if actions.len() != self.stations.len() {
            return Err(Error::Dimension {
                expected: self.stations.len(),
                actual: actions.len(),
            });
        }
        if actions.iter().flatten().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("agent actions"));
        }
        self.advance(actions, true)
    }

    fn advance(&mut self, raw: &[[f64; ACTION_DIM]], moving: bool) -> Result<StepResult> {
        let cfg = &self.cfg;
        let tau = cfg.scenario.step_s;
        let decoded: Vec<DecodedAction> = raw
            .iter()
            .zip(&self.stations)
            .map(|(a, st)| decode_action(a, &st.spec))
            .collect();

        let mut links = Vec::with_capacity(self.stations.len());
        for st in &mut self.stations {
            if moving {
                st.position = mobility_step(&st.position, cfg.scenario.speed_mps, tau, &mut self.rng);
            }
            links.push(evaluate_link(
                &cfg.channel,
                &cfg.radio,
                st.position.distance_to(0.0, 0.0),
                cfg.scenario.bs_antennas,
                st.spec.antennas,
                &mut self.rng,
            )?);
            st.queue.refill();
        }

        let mac_actions: Vec<MacAction> = decoded
            .iter()
            .map(|d| MacAction {
                cw: d.cw,
                frame_bits: d.frame_bits,
            })
            .collect();
        let rates: Vec<f64> = links.iter().map(|l| l.rate_bps).collect();
        let mut queues: Vec<TxQueue> = self.stations.iter().map(|s| s.queue).collect();
        let report = simulate_slot(
            &mac_actions,
            &rates,
            &mut queues,
            tau,
            cfg.mac.mini_slot_s,
            &mut self.rng,
        )?;
        for (st, q) in self.stations.iter_mut().zip(queues) {
            st.queue = q;
        }

        let floor = cfg.compute.min_frequency_hz;
        let mut costs = Vec::with_capacity(self.stations.len());
        let mut agents = Vec::with_capacity(self.stations.len());
        let mut rewards = Vec::with_capacity(self.stations.len());
        let mut observations = Vec::with_capacity(self.stations.len());
        for (k, st) in self.stations.iter().enumerate() {
            let d = decoded[k];
            let out = report.outcomes[k];
            let link = &links[k];
            let station = cfg.compute.station(d.station_hz.max(floor));
            let cost = match st.spec.privacy {
                Privacy::Sensitive => CostBreakdown::sensitive(&station, &st.load)?,
                Privacy::Insensitive => {
                    let server = cfg.compute.server(d.server_hz.max(floor));
                    CostBreakdown::insensitive(&station, &server, &st.load)?
                }
            };
            let total = cost.total();
            let throughput_bps = out.delivered_bits as f64 / tau;
            debug_assert!(throughput_bps <= link.rate_bps * (1.0 + 1e-12));
            let r = reward(
                throughput_bps / cfg.reward.throughput_unit_bps,
                total.energy_j,
                total.latency_s,
                st.spec.latency_cap_s,
                cfg.reward.scheme,
            );
            rewards.push(r);
            observations.push(Observation {
                snr_db: link.snr_db(),
                loss_rate: packet_loss_rate(&out),
                idle: idle_fraction(&out),
            });
            agents.push(AgentInfo {
                privacy: st.spec.privacy,
                action: d,
                throughput_bps,
                latency_s: total.latency_s,
                energy_j: total.energy_j,
                snr_db: link.snr_db(),
                rate_bps: link.rate_bps,
                distance_m: link.distance_m,
                latency_violated: total.latency_s > st.spec.latency_cap_s,
                mac: out,
            });
            costs.push(cost);
        }
        self.links = links;

        let n = agents.len() as f64;
        let system = SystemInfo {
            throughput_bps: agents.iter().map(|a| a.throughput_bps).sum(),
            energy_j: system_energy(&costs),
            mean_latency_s: agents.iter().map(|a| a.latency_s).sum::<f64>() / n,
            mean_reward: rewards.iter().sum::<f64>() / n,
        };
        Ok(StepResult {
            observations,
            rewards,
            agents,
            system,
        })
    }
}

/// Builds and resets an environment in one call.
pub fn reset(cfg: &ExperimentConfig, seed: u64) -> Result<(WirelessEnv, Vec<Observation>)> {
    let mut env = WirelessEnv::new(cfg, seed)?;
    let obs = env.reset()?;
    Ok((env, obs))
}
