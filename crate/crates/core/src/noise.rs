//! Exploration-noise schedules and the concavity checker used to vet them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `n0 - rate * t`
    Linear,
    /// `n0 - (rate * t)^3`
    Cubic,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "cubic" => Ok(Self::Cubic),
            other => Err(Error::Config(vec![format!("unknown noise kind {other:?}")])),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Cubic => "cubic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub rate: f64,
    pub n0: f64,
    pub floor: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cubic,
            rate: 0.02,
            n0: 1.0,
            floor: 0.0,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.n0 > 0.0) {
            bad.push(format!("noise n0 must be > 0 (got {})", self.n0));
        }
        if !(self.rate > 0.0) {
            bad.push(format!("noise rate must be > 0 (got {})", self.rate));
        }
        if !(self.floor >= 0.0) {
            bad.push(format!("noise floor must be >= 0 (got {})", self.floor));
        }
        bad
    }

    /// The unfloored decay curve.
    pub fn raw(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => self.n0 - self.rate * t,
            ScheduleKind::Cubic => self.n0 - (self.rate * t).powi(3),
        }
    }

    /// Noise scale at iteration `t`, never below the floor.
    pub fn value(&self, t: f64) -> f64 {
        self.raw(t).max(self.floor)
    }

    /// First `t` at which the raw curve reaches the floor.
    pub fn floor_time(&self) -> f64 {
        let drop = (self.n0 - self.floor).max(0.0);
        match self.kind {
            ScheduleKind::Linear => drop / self.rate,
            ScheduleKind::Cubic => drop.cbrt() / self.rate,
        }
    }
}

/// Which validity condition a candidate schedule broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    Decreasing,
    Concave,
    /// Divided differences of the slope must grow strictly along every triple.
    SlopeDifferences,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub condition: Condition,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub first_violation: Option<Violation>,
    pub points_checked: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

const RANDOM_TRIPLES: usize = 2_000;

/// Checks on the open interval `(t_lo, t_hi)` that `f` is strictly
/// decreasing, strictly concave, and that for triples `x0 < x1 < x2` the
/// slope drop per unit length grows: `(f'(x0) - f'(x1)) / |x0 - x1| <
/// (f'(x1) - f'(x2)) / |x1 - x2|`.
///
/// Derivatives are central differences with step `(t_hi - t_lo) / 1e4` on
/// `grid` interior points. A condition only counts as met when it holds by
/// more than the floating-point error bound of the difference quotient.
pub fn validate_schedule<F: Fn(f64) -> f64>(f: F, t_lo: f64, t_hi: f64, grid: usize) -> Result<ValidationReport> {
    if !(t_lo.is_finite() && t_hi.is_finite() && t_lo < t_hi) || grid < 3 {
        return Err(Error::DegenerateDomain { lo: t_lo, hi: t_hi });
    }
    let h = (t_hi - t_lo) / 1e4;
    let eps = f64::EPSILON;
    let span = t_hi - t_lo;
    // interior points, kept at least h away from both ends
    let ts: Vec<f64> = (1..=grid)
        .map(|i| t_lo + h + (span - 2.0 * h) * i as f64 / (grid + 1) as f64)
        .collect();

    let mut slopes = Vec::with_capacity(grid);
    let mut slope_err = Vec::with_capacity(grid);
    for &t in &ts {
        let (fm, f0, fp) = (f(t - h), f(t), f(t + h));
        let d1 = (fp - fm) / (2.0 * h);
        let e1 = 4.0 * eps * (fp.abs() + fm.abs() + f0.abs()) / (2.0 * h);
        if !(d1 < -e1) {
            return Ok(report(Condition::Decreasing, t, grid));
        }
        let d2 = (fp - 2.0 * f0 + fm) / (h * h);
        let e2 = 8.0 * eps * (fp.abs() + 2.0 * f0.abs() + fm.abs()) / (h * h);
        if !(d2 < -e2) {
            return Ok(report(Condition::Concave, t, grid));
        }
        slopes.push(d1);
        slope_err.push(e1);
    }

    let holds = |i: usize, j: usize, k: usize| {
        let lhs = (slopes[i] - slopes[j]) / (ts[j] - ts[i]);
        let rhs = (slopes[j] - slopes[k]) / (ts[k] - ts[j]);
        let tol = (slope_err[i] + slope_err[j]) / (ts[j] - ts[i]) + (slope_err[j] + slope_err[k]) / (ts[k] - ts[j]);
        lhs + tol < rhs
    };
    for i in 0..grid - 2 {
        if !holds(i, i + 1, i + 2) {
            return Ok(report(Condition::SlopeDifferences, ts[i + 1], grid));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..RANDOM_TRIPLES {
        let mut idx = [0usize; 3];
        for v in &mut idx {
            *v = rng.random_range(0..grid);
        }
        idx.sort_unstable();
        if idx[0] == idx[1] || idx[1] == idx[2] {
            continue;
        }
        if !holds(idx[0], idx[1], idx[2]) {
            return Ok(report(Condition::SlopeDifferences, ts[idx[1]], grid));
        }
    }
    Ok(ValidationReport {
        first_violation: None,
        points_checked: grid,
    })
}

fn report(condition: Condition, t: f64, grid: usize) -> ValidationReport {
    ValidationReport {
        first_violation: Some(Violation { condition, t }),
        points_checked: grid,
    }
}

/// Validates a schedule's raw curve on `(0, t_end)`, where `t_end` defaults
/// to the time the curve reaches its floor.
pub fn validate(schedule: &NoiseSchedule, t_end: Option<f64>, grid: usize) -> Result<ValidationReport> {
    let hi = t_end.unwrap_or_else(|| schedule.floor_time());
    validate_schedule(|t| schedule.raw(t), 0.0, hi, grid)
}

/// i.i.d. zero-mean Gaussian perturbation with standard deviation `scale`.
pub fn sample_noise<R: Rng + ?Sized>(scale: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    if scale == 0.0 {
        return vec![0.0; dim];
    }
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}
