//! Log-distance propagation, SNR, Shannon rate, Rayleigh channel matrices and
//! the constant-speed random walk that moves stations between slots.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Mobility retries before falling back to a reflected step.
const MAX_HEADING_RETRIES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossParams {
    pub carrier_frequency_hz: f64,
    pub reference_distance_m: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 5e9,
            reference_distance_m: 1.0,
            path_loss_exponent: 3.0,
            shadowing_sigma_db: 0.0,
            tx_gain_dbi: 3.0,
            rx_gain_dbi: 3.0,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.carrier_frequency_hz > 0.0) {
            bad.push(format!(
                "carrier_frequency_hz must be > 0 (got {})",
                self.carrier_frequency_hz
            ));
        }
        if !(self.reference_distance_m > 0.0) {
            bad.push(format!(
                "reference_distance_m must be > 0 (got {})",
                self.reference_distance_m
            ));
        }
        if !(self.path_loss_exponent >= 1.0) {
            bad.push(format!(
                "path_loss_exponent must be >= 1 (got {})",
                self.path_loss_exponent
            ));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            bad.push(format!(
                "shadowing_sigma_db must be >= 0 (got {})",
                self.shadowing_sigma_db
            ));
        }
        bad
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            noise_psd_dbm_hz: -174.0,
            bandwidth_hz: 80e6,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.bandwidth_hz > 0.0) {
            bad.push(format!("bandwidth_hz must be > 0 (got {})", self.bandwidth_hz));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_psd_dbm_hz.is_finite() {
            bad.push("tx_power_dbm and noise_psd_dbm_hz must be finite".to_string());
        }
        bad
    }

    /// Thermal noise power over the whole band, in watts.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz) * self.bandwidth_hz
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Friis loss at the close-in reference distance, in dB.
pub fn free_space_ref_loss(params: &PathLossParams) -> f64 {
    20.0 * (4.0 * PI * params.reference_distance_m / params.wavelength_m()).log10()
}

/// Log-distance path loss with additive shadowing `shadowing_db`, net of antenna gains.
pub fn path_loss(params: &PathLossParams, distance_m: f64, shadowing_db: f64) -> Result<f64> {
    let d0 = params.reference_distance_m;
    if !(distance_m >= d0) {
        return Err(Error::BelowReferenceDistance {
            distance: distance_m,
            reference: d0,
        });
    }
    Ok(
        free_space_ref_loss(params) + 10.0 * params.path_loss_exponent * (distance_m / d0).log10() + shadowing_db
            - params.tx_gain_dbi
            - params.rx_gain_dbi,
    )
}

/// Linear SNR. Received power and noise are both converted to watts first.
pub fn snr(radio: &RadioParams, path_loss_db: f64) -> f64 {
    dbm_to_watts(radio.tx_power_dbm - path_loss_db) / radio.noise_power_w()
}

pub fn shannon_rate(bandwidth_hz: f64, snr: f64) -> f64 {
    bandwidth_hz * (1.0 + snr).log2()
}

/// Draws the per-slot shadowing term, zero-mean normal with the configured sigma.
pub fn sample_shadowing<R: Rng + ?Sized>(params: &PathLossParams, rng: &mut R) -> f64 {
    if params.shadowing_sigma_db == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    z * params.shadowing_sigma_db
}

/// Complex channel gains between a station and the access point.
///
/// Rows index station antennas, columns index access-point antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.cols + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Squared Frobenius norm divided by the number of entries.
    pub fn mean_power_gain(&self) -> f64 {
        self.entries.iter().map(|h| h.norm_sqr()).sum::<f64>() / self.entries.len() as f64
    }

    /// Sum over spatial streams of `H x` for a transmit vector `x`.
    pub fn combined_stream(&self, x: &[Complex64]) -> Result<Complex64> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok(self
            .entries
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(h, xi)| h * xi).sum::<Complex64>())
            .sum())
    }
}

/// i.i.d. unit-variance circularly-symmetric complex Gaussian (Rayleigh) entries.
pub fn sample_channel_matrix<R: Rng + ?Sized>(
    bs_antennas: usize,
    ue_antennas: usize,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    if ue_antennas == 0 || ue_antennas > bs_antennas {
        return Err(Error::Config(vec![format!(
            "station antennas ({ue_antennas}) must be in 1..={bs_antennas}"
        )]));
    }
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let entries = (0..ue_antennas * bs_antennas)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    Ok(ChannelMatrix {
        rows: ue_antennas,
        cols: bs_antennas,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub anchor: (f64, f64),
    pub max_radius: f64,
}

impl Position {
    pub fn at_anchor(x: f64, y: f64, max_radius: f64) -> Self {
        Self {
            x,
            y,
            anchor: (x, y),
            max_radius,
        }
    }

    pub fn distance_from_anchor(&self) -> f64 {
        (self.x - self.anchor.0).hypot(self.y - self.anchor.1)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        (x - self.anchor.0).hypot(y - self.anchor.1) <= self.max_radius
    }
}

/// One constant-speed step in a uniformly random heading, kept inside the
/// anchor disc. Headings that would leave the disc are redrawn; after
/// `MAX_HEADING_RETRIES` failures the step is reflected at the boundary.
pub fn mobility_step<R: Rng + ?Sized>(pos: &Position, speed: f64, dt: f64, rng: &mut R) -> Position {
    let step = speed * dt;
    if step <= 0.0 {
        return *pos;
    }
    let mut heading = 0.0;
    for _ in 0..MAX_HEADING_RETRIES {
        heading = rng.random_range(0.0..2.0 * PI);
        let (nx, ny) = (pos.x + step * heading.cos(), pos.y + step * heading.sin());
        if pos.inside(nx, ny) {
            return Position { x: nx, y: ny, ..*pos };
        }
    }
    reflect(pos, step, heading)
}

fn reflect(pos: &Position, step: f64, heading: f64) -> Position {
    let (ax, ay) = pos.anchor;
    let (mut nx, mut ny) = (pos.x + step * heading.cos(), pos.y + step * heading.sin());
    let (dx, dy) = (nx - ax, ny - ay);
    let r = dx.hypot(dy);
    if r > pos.max_radius {
        // mirror the overshoot back along the radial direction
        let target = (2.0 * pos.max_radius - r).max(0.0);
        nx = ax + dx / r * target;
        ny = ay + dy / r * target;
    }
    Position { x: nx, y: ny, ..*pos }
}

/// Per-slot snapshot of one station's link.
#[derive(Debug, Clone)]
pub struct LinkState {
    pub distance_m: f64,
    pub shadowing_db: f64,
    pub path_loss_db: f64,
    pub snr: f64,
    pub rate_bps: f64,
    pub channel: ChannelMatrix,
}

impl LinkState {
    pub fn snr_db(&self) -> f64 {
        linear_to_db(self.snr)
    }
}

/// Composes path loss, SNR and rate for one station. Distances below the
/// reference distance are evaluated at the reference distance.
pub fn evaluate_link<R: Rng + ?Sized>(
    pl: &PathLossParams,
    radio: &RadioParams,
    distance_m: f64,
    bs_antennas: usize,
    ue_antennas: usize,
    rng: &mut R,
) -> Result<LinkState> {
    let shadowing_db = sample_shadowing(pl, rng);
    let d = distance_m.max(pl.reference_distance_m);
    let path_loss_db = path_loss(pl, d, shadowing_db)?;
    let snr = snr(radio, path_loss_db);
    let channel = sample_channel_matrix(bs_antennas, ue_antennas, rng)?;
    Ok(LinkState {
        distance_m: d,
        shadowing_db,
        path_loss_db,
        snr,
        rate_bps: shannon_rate(radio.bandwidth_hz, snr),
        channel,
    })
}
