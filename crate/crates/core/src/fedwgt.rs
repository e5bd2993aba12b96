//! Divergence-weighted critic federation.
//!
//! Each agent's divergence is the gap between its mean reward and the global
//! mean reward. Weights are proportional to the inverse squared divergence,
//! so agents whose experience tracks the population dominate the fused model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Divergences below this are floored before inversion.
pub const DIVERGENCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedWgt,
    FedAvg,
    None,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedwgt" => Ok(Self::FedWgt),
            "fedavg" => Ok(Self::FedAvg),
            "none" => Ok(Self::None),
            other => Err(Error::Config(vec![format!("unknown federation strategy {other:?}")])),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FedWgt => "fedwgt",
            Self::FedAvg => "fedavg",
            Self::None => "none",
        })
    }
}

/// Running reward sums per agent over the current federation window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardStats {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl RewardStats {
    pub fn new(agents: usize) -> Self {
        Self {
            sums: vec![0.0; agents],
            counts: vec![0; agents],
        }
    }

    pub fn from_means(means: &[f64]) -> Self {
        Self {
            sums: means.to_vec(),
            counts: vec![1; means.len()],
        }
    }

    pub fn agents(&self) -> usize {
        self.sums.len()
    }

    pub fn record(&mut self, rewards: &[f64]) {
        debug_assert_eq!(rewards.len(), self.sums.len());
        for ((s, c), r) in self.sums.iter_mut().zip(&mut self.counts).zip(rewards) {
            *s += r;
            *c += 1;
        }
    }

    pub fn reset(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn means(&self) -> Result<Vec<f64>> {
        if self.counts.contains(&0) {
            return Err(Error::Empty("reward window"));
        }
        Ok(self.sums.iter().zip(&self.counts).map(|(s, &c)| s / c as f64).collect())
    }

    /// Mean over every recorded reward of every agent.
    pub fn global_mean(&self) -> Result<f64> {
        let n: u64 = self.counts.iter().sum();
        if n == 0 || self.counts.contains(&0) {
            return Err(Error::Empty("reward window"));
        }
        Ok(self.sums.iter().sum::<f64>() / n as f64)
    }
}

/// Per-agent divergence: absolute gap between local and global mean reward.
pub fn estimate_divergence(stats: &RewardStats) -> Result<Vec<f64>> {
    if stats.agents() == 0 {
        return Err(Error::Empty("reward statistics"));
    }
    let global = stats.global_mean()?;
    Ok(stats.means()?.into_iter().map(|m| (m - global).abs()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FedWeights {
    pub divergence: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Inverse-square weights normalised onto the simplex.
pub fn fed_weights(divergence: &[f64]) -> Result<FedWeights> {
    if divergence.is_empty() {
        return Err(Error::Empty("divergence vector"));
    }
    if divergence.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::NonFinite("divergence"));
    }
    // All-equal inputs take the uniform path so they match FedAvg bit for bit.
    if divergence
        .iter()
        .all(|&p| p.max(DIVERGENCE_FLOOR) == divergence[0].max(DIVERGENCE_FLOOR))
    {
        return Ok(FedWeights {
            divergence: divergence.to_vec(),
            weights: uniform_weights(divergence.len()),
        });
    }
    let inv: Vec<f64> = divergence
        .iter()
        .map(|&p| {
            let p = p.max(DIVERGENCE_FLOOR);
            1.0 / (p * p)
        })
        .collect();
    let total: f64 = inv.iter().sum();
    Ok(FedWeights {
        divergence: divergence.to_vec(),
        weights: inv.iter().map(|v| v / total).collect(),
    })
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceBoundParams {
    pub learning_rate: f64,
    pub lipschitz: f64,
    pub smoothness: f64,
    /// Number of rounds the bound accumulates over.
    pub rounds: u32,
}

/// Geometric accumulation factor of the accuracy-loss bound.
pub fn bound_factor(p: &DivergenceBoundParams) -> Result<f64> {
    let eta = p.learning_rate;
    let radicand = 1.0 + eta * eta * p.lipschitz * p.lipschitz - 2.0 * eta * p.smoothness;
    if !(radicand > 0.0) {
        return Err(Error::BoundUndefined {
            radicand,
            root: f64::NAN,
        });
    }
    let root = radicand.sqrt();
    if root >= 1.0 {
        return Err(Error::BoundUndefined { radicand, root });
    }
    Ok(eta * (1.0 - root.powi(p.rounds as i32)) / (1.0 - root))
}

/// Upper bound on the accuracy loss caused by divergent agents.
pub fn loss_bound(p: &DivergenceBoundParams, weights: &[f64], divergence: &[f64]) -> Result<f64> {
    if weights.len() != divergence.len() {
        return Err(Error::Dimension {
            expected: weights.len(),
            actual: divergence.len(),
        });
    }
    let factor = bound_factor(p)?;
    Ok(factor * weights.iter().zip(divergence).map(|(w, p)| w * p).sum::<f64>())
}

/// Fuses a class of identically-shaped critics into one weighted average and
/// writes it back into every member. `weights` are renormalised over the
/// class. Returns the fused parameters.
pub fn aggregate_class(models: &mut [&mut Mlp], weights: &[f64], strategy: Strategy) -> Result<Option<Mlp>> {
    if strategy == Strategy::None || models.is_empty() {
        return Ok(None);
    }
    if weights.len() != models.len() {
        return Err(Error::Dimension {
            expected: models.len(),
            actual: weights.len(),
        });
    }
    if models.iter().any(|m| !m.same_shape(models[0])) {
        return Err(Error::ShapeMismatch);
    }
    let class_weights = match strategy {
        Strategy::FedAvg => uniform_weights(models.len()),
        _ => {
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::NonFinite("class weight sum"));
            }
            if weights.iter().all(|&w| w == weights[0]) {
                uniform_weights(models.len())
            } else {
                weights.iter().map(|w| w / total).collect()
            }
        }
    };

    let mut fused = models[0].clone();
    fused.params_mut().for_each(|p| *p = 0.0);
    for (m, w) in models.iter().zip(&class_weights) {
        for (f, v) in fused.params_mut().zip(m.params()) {
            *f += w * v;
        }
    }
    for m in models.iter_mut() {
        **m = fused.clone();
    }
    Ok(Some(fused))
}
