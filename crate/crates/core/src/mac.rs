//! Abstract contention MAC.
//!
//! A slot of length `tau` is split into access rounds. In every round each
//! backlogged station transmits with probability `2 / (cw + 1)`. A lone
//! transmitter delivers one aggregated frame at its link rate, two or more
//! transmitters collide, and a round nobody uses costs one mini-slot. Busy
//! rounds also pay one mini-slot of contention before the frame airtime.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacParams {
    pub cw_min: u32,
    pub cw_max: u32,
    pub frame_max_bits: u64,
    pub queue_capacity_bits: u64,
    pub mini_slot_s: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            cw_min: 15,
            cw_max: 1023,
            frame_max_bits: 524_280,
            queue_capacity_bits: 1_000_000_000,
            mini_slot_s: 9e-6,
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.cw_min < 1 || self.cw_min > self.cw_max {
            bad.push(format!(
                "contention window bounds must satisfy 1 <= cw_min <= cw_max (got {}..{})",
                self.cw_min, self.cw_max
            ));
        }
        if self.frame_max_bits == 0 {
            bad.push("frame_max_bits must be > 0".into());
        }
        if self.queue_capacity_bits == 0 {
            bad.push("queue_capacity_bits must be > 0".into());
        }
        if !(self.mini_slot_s > 0.0) {
            bad.push(format!("mini_slot_s must be > 0 (got {})", self.mini_slot_s));
        }
        bad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacAction {
    pub cw: u32,
    pub frame_bits: u64,
}

impl MacAction {
    pub fn access_probability(&self) -> f64 {
        2.0 / (f64::from(self.cw) + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxQueue {
    backlog: u64,
    capacity: u64,
}

impl TxQueue {
    pub fn full(capacity: u64) -> Self {
        Self {
            backlog: capacity,
            capacity,
        }
    }

    pub fn empty(capacity: u64) -> Self {
        Self { backlog: 0, capacity }
    }

    pub fn with_backlog(backlog: u64, capacity: u64) -> Self {
        Self {
            backlog: backlog.min(capacity),
            capacity,
        }
    }

    pub fn backlog(&self) -> u64 {
        self.backlog
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn refill(&mut self) {
        self.backlog = self.capacity;
    }

    fn drain(&mut self, bits: u64) {
        debug_assert!(bits <= self.backlog);
        self.backlog -= bits;
    }
}

/// Per-station MAC counters for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub delivered_bits: u64,
    pub frames_sent: u64,
    pub frames_acked: u64,
    pub busy_s: f64,
    pub slot_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundStats {
    pub rounds: u64,
    pub idle: u64,
    pub successes: u64,
    pub collisions: u64,
}

impl RoundStats {
    pub fn collision_fraction(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.collisions as f64 / self.rounds as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotReport {
    pub outcomes: Vec<SlotOutcome>,
    pub rounds: RoundStats,
}

/// Runs one slot of contention for all stations.
///
/// `rates_bps[k]` is station k's Shannon rate for the slot. Deliveries are
/// drained from `queues`; no station ever delivers more than `rate * slot_s`.
pub fn simulate_slot<R: Rng + ?Sized>(
    actions: &[MacAction],
    rates_bps: &[f64],
    queues: &mut [TxQueue],
    slot_s: f64,
    mini_slot_s: f64,
    rng: &mut R,
) -> Result<SlotReport> {
    let n = actions.len();
    if n == 0 {
        return Err(Error::Empty("agent list"));
    }
    for len in [rates_bps.len(), queues.len()] {
        if len != n {
            return Err(Error::Dimension {
                expected: n,
                actual: len,
            });
        }
    }
    if !(slot_s > 0.0) || !(mini_slot_s > 0.0) {
        return Err(Error::Config(vec![format!(
            "slot ({slot_s}) and mini-slot ({mini_slot_s}) must be > 0"
        )]));
    }
    if rates_bps.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::NonFinite("link rates"));
    }

    let mut outcomes = vec![
        SlotOutcome {
            slot_s,
            ..Default::default()
        };
        n
    ];
    let mut stats = RoundStats::default();
    // Integer Shannon budget per station for the whole slot.
    let caps: Vec<u64> = rates_bps.iter().map(|r| (r * slot_s).floor() as u64).collect();
    let probs: Vec<f64> = actions.iter().map(MacAction::access_probability).collect();
    let mut transmitters: Vec<usize> = Vec::with_capacity(n);
    let mut elapsed = 0.0;

    loop {
        let remaining = slot_s - elapsed;
        if remaining < mini_slot_s {
            break;
        }
        let contending = |k: usize| {
            let budget = caps[k] - outcomes[k].delivered_bits;
            queues[k].backlog() > 0 && actions[k].frame_bits > 0 && budget > 0
        };
        if !(0..n).any(contending) {
            break;
        }

        transmitters.clear();
        for (k, &p) in probs.iter().enumerate() {
            if contending(k) && rng.random::<f64>() < p {
                transmitters.push(k);
            }
        }
        stats.rounds += 1;
        let airtime_budget = remaining - mini_slot_s;

        match transmitters.len() {
            0 => {
                stats.idle += 1;
                elapsed += mini_slot_s;
            }
            1 => {
                let k = transmitters[0];
                let budget = caps[k] - outcomes[k].delivered_bits;
                let fit = (airtime_budget * rates_bps[k]).floor() as u64;
                let bits = actions[k].frame_bits.min(queues[k].backlog()).min(budget).min(fit);
                if bits == 0 {
                    // frame cannot fit in what is left of the slot
                    elapsed = slot_s;
                    stats.idle += 1;
                    continue;
                }
                let airtime = bits as f64 / rates_bps[k];
                let out = &mut outcomes[k];
                out.frames_sent += 1;
                out.frames_acked += 1;
                out.delivered_bits += bits;
                out.busy_s += airtime;
                queues[k].drain(bits);
                stats.successes += 1;
                elapsed += mini_slot_s + airtime;
            }
            _ => {
                let mut longest: f64 = 0.0;
                for &k in &transmitters {
                    let bits = actions[k].frame_bits.min(queues[k].backlog());
                    let airtime = (bits as f64 / rates_bps[k]).min(airtime_budget);
                    let out = &mut outcomes[k];
                    out.frames_sent += 1;
                    out.busy_s += airtime;
                    longest = longest.max(airtime);
                }
                stats.collisions += 1;
                elapsed += mini_slot_s + longest;
            }
        }
    }

    for out in &mut outcomes {
        out.busy_s = out.busy_s.min(slot_s);
    }
    Ok(SlotReport {
        outcomes,
        rounds: stats,
    })
}

pub fn throughput(delivered_bits: f64, slot_s: f64) -> f64 {
    delivered_bits / slot_s
}

/// Aggregate throughput of a run: every station's deliveries over every slot,
/// divided by the total elapsed time.
pub fn aggregate_throughput(slots: &[Vec<SlotOutcome>], total_s: f64) -> f64 {
    let bits: u64 = slots.iter().flatten().map(|o| o.delivered_bits).sum();
    bits as f64 / total_s
}

pub fn packet_loss_rate(outcome: &SlotOutcome) -> f64 {
    if outcome.frames_sent == 0 {
        0.0
    } else {
        (outcome.frames_sent - outcome.frames_acked) as f64 / outcome.frames_sent as f64
    }
}

pub fn idle_fraction(outcome: &SlotOutcome) -> f64 {
    ((outcome.slot_s - outcome.busy_s) / outcome.slot_s).clamp(0.0, 1.0)
}
