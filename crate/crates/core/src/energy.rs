//! Dynamic-power CPU cost model for local compute, on-device training and
//! server-side critic work. Dynamic power is `kappa * f^3`, so every cost is
//! `kappa * cycles * f^2` joules over `cycles / f` seconds.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// Effective switched capacitance.
    pub kappa: f64,
    pub frequency_hz: f64,
    pub max_frequency_hz: f64,
    pub cycles_per_bit: f64,
    pub flops_per_cycle: f64,
    /// Bits per returned gradient vector.
    pub gradient_bits: f64,
    /// Bits per channel-state sample.
    pub state_bits: f64,
    /// Task bits processed per slot.
    pub task_bits: f64,
}

impl ComputeProfile {
    /// Station defaults: 500 MHz, 330 cycles/bit, 8 flops/cycle, kappa 1e-26.
    pub fn station() -> Self {
        Self {
            kappa: 1e-26,
            frequency_hz: 5e8,
            max_frequency_hz: 5e8,
            cycles_per_bit: 330.0,
            flops_per_cycle: 8.0,
            gradient_bits: 1e3,
            state_bits: 1e3,
            task_bits: 1e5,
        }
    }

    /// Access-point server defaults: 2 GHz.
    pub fn access_point() -> Self {
        Self {
            frequency_hz: 2e9,
            max_frequency_hz: 2e9,
            ..Self::station()
        }
    }

    pub fn at_frequency(self, frequency_hz: f64) -> Self {
        Self { frequency_hz, ..self }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let positive = [
            ("kappa", self.kappa),
            ("max_frequency_hz", self.max_frequency_hz),
            ("cycles_per_bit", self.cycles_per_bit),
            ("flops_per_cycle", self.flops_per_cycle),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be > 0 (got {v})"));
            }
        }
        let nonneg = [
            ("gradient_bits", self.gradient_bits),
            ("state_bits", self.state_bits),
            ("task_bits", self.task_bits),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be >= 0 (got {v})"));
            }
        }
        if !(self.frequency_hz >= 0.0 && self.frequency_hz <= self.max_frequency_hz) {
            bad.push(format!(
                "frequency_hz must lie in [0, {}] (got {})",
                self.max_frequency_hz, self.frequency_hz
            ));
        }
        bad
    }

    pub fn power_w(&self) -> f64 {
        self.kappa * self.frequency_hz.powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingLoad {
    /// Samples per mini-batch.
    pub batch: u32,
    pub flops_actor: f64,
    pub flops_critic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLatency {
    pub energy_j: f64,
    pub latency_s: f64,
}

impl Add for EnergyLatency {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            energy_j: self.energy_j + rhs.energy_j,
            latency_s: self.latency_s + rhs.latency_s,
        }
    }
}

impl AddAssign for EnergyLatency {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for EnergyLatency {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

fn cycle_cost(kappa: f64, frequency_hz: f64, cycles: f64) -> Result<EnergyLatency> {
    if cycles == 0.0 {
        return Ok(EnergyLatency::default());
    }
    if frequency_hz <= 0.0 {
        return Err(Error::InfeasibleFrequency { work: cycles });
    }
    Ok(EnergyLatency {
        energy_j: kappa * cycles * frequency_hz * frequency_hz,
        latency_s: cycles / frequency_hz,
    })
}

/// Local processing of gradient returns plus the slot's task on a
/// privacy-insensitive station.
pub fn actor_local(profile: &ComputeProfile, load: &TrainingLoad) -> Result<EnergyLatency> {
    let bits = profile.gradient_bits * f64::from(load.batch) + profile.task_bits;
    cycle_cost(profile.kappa, profile.frequency_hz, bits * profile.cycles_per_bit)
}

/// Cost of `flops` floating-point operations of network training.
pub fn nn_training_cost(profile: &ComputeProfile, flops: f64) -> Result<EnergyLatency> {
    cycle_cost(profile.kappa, profile.frequency_hz, flops / profile.flops_per_cycle)
}

/// Server-side critic computation for one privacy-insensitive station.
/// `state_bits` and `batch` come from the station; the rest from the server.
pub fn critic_server_cost(server: &ComputeProfile, state_bits: f64, batch: u32) -> Result<EnergyLatency> {
    let bits = state_bits * f64::from(batch) + server.task_bits;
    cycle_cost(server.kappa, server.frequency_hz, bits * server.cycles_per_bit)
}

/// Everything a privacy-sensitive station runs on its own CPU: compute over
/// gradients, channel states and the task, then actor and critic training.
pub fn sensitive_local(profile: &ComputeProfile, load: &TrainingLoad) -> Result<EnergyLatency> {
    let bits = (profile.gradient_bits + profile.state_bits) * f64::from(load.batch) + profile.task_bits;
    let compute = cycle_cost(profile.kappa, profile.frequency_hz, bits * profile.cycles_per_bit)?;
    let training = nn_training_cost(profile, load.flops_actor + load.flops_critic)?;
    Ok(compute + training)
}

/// Per-station cost terms for one slot, split by training regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostBreakdown {
    Insensitive {
        actor_local: EnergyLatency,
        actor_training: EnergyLatency,
        critic_server: EnergyLatency,
        critic_training: EnergyLatency,
    },
    Sensitive {
        local: EnergyLatency,
    },
}

impl CostBreakdown {
    /// Insensitive station: local actor work at `station`, critic work on `server`.
    pub fn insensitive(station: &ComputeProfile, server: &ComputeProfile, load: &TrainingLoad) -> Result<Self> {
        Ok(Self::Insensitive {
            actor_local: actor_local(station, load)?,
            actor_training: nn_training_cost(station, load.flops_actor)?,
            critic_server: critic_server_cost(server, station.state_bits, load.batch)?,
            critic_training: nn_training_cost(server, load.flops_critic)?,
        })
    }

    pub fn sensitive(station: &ComputeProfile, load: &TrainingLoad) -> Result<Self> {
        Ok(Self::Sensitive {
            local: sensitive_local(station, load)?,
        })
    }

    pub fn is_sensitive(&self) -> bool {
        matches!(self, Self::Sensitive { .. })
    }

    /// Energy and latency attributed to the owning station, server parts included.
    pub fn total(&self) -> EnergyLatency {
        match *self {
            Self::Insensitive {
                actor_local,
                actor_training,
                critic_server,
                critic_training,
            } => actor_local + actor_training + critic_server + critic_training,
            Self::Sensitive { local } => local,
        }
    }
}

/// Slot energy of the whole system: insensitive four-term sums plus
/// sensitive local totals.
pub fn system_energy(costs: &[CostBreakdown]) -> f64 {
    let insensitive: f64 = costs
        .iter()
        .filter(|c| !c.is_sensitive())
        .map(|c| c.total().energy_j)
        .sum();
    let sensitive: f64 = costs
        .iter()
        .filter(|c| c.is_sensitive())
        .map(|c| c.total().energy_j)
        .sum();
    insensitive + sensitive
}

/// Flops for one forward plus backward pass of a dense network over one
/// sample: two per multiply-accumulate forward, twice that backward.
pub fn mlp_flops(layer_sizes: &[usize]) -> f64 {
    let macs: usize = layer_sizes.windows(2).map(|w| w[0] * w[1]).sum();
    6.0 * macs as f64
}
