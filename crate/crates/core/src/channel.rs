//! Per-round wireless channel realizations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};
use crate::sysmodel::{DeviceRound, SystemParams};

/// Source of per-round channel realizations.
///
/// Gains are real and nonnegative; no fading phase is modeled.
pub trait ChannelSampler {
    fn sample_round(&self, params: &SystemParams, round_index: u64) -> Vec<DeviceRound>;
}

/// Rayleigh block-fading channel, independent across devices and rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Rayleigh scale of the device-to-BS links.
    pub scale_b: f64,
    /// Rayleigh scale of the device-to-eavesdropper links.
    pub scale_e: f64,
    pub seed: u64,
}

impl ChannelModel {
    pub fn new(scale_b: f64, scale_e: f64, seed: u64) -> Result<Self> {
        for (name, value) in [("scale_b", scale_b), ("scale_e", scale_e)] {
            if !(value > 0.0) {
                return Err(Error::NonPositiveVariance { name, value });
            }
        }
        Ok(Self {
            scale_b,
            scale_e,
            seed,
        })
    }

    /// Same model with a different seed; used to derive per-replicate channels.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// Rayleigh draw by inverse transform: `scale * sqrt(-2 ln(1 - u))`.
fn rayleigh(rng: &mut impl Rng, scale: f64) -> f64 {
    let u: f64 = rng.random();
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

impl ChannelSampler for ChannelModel {
    fn sample_round(&self, params: &SystemParams, round_index: u64) -> Vec<DeviceRound> {
        (0..params.n_devices)
            .map(|n| {
                let mut rb = stream_rng(self.seed, round_index, n as u64, Purpose::BsGain);
                let mut re = stream_rng(self.seed, round_index, n as u64, Purpose::EveGain);
                let h_b = rayleigh(&mut rb, self.scale_b);
                let h_e = rayleigh(&mut re, self.scale_e);
                DeviceRound::new(h_b, h_e, params.power_budgets[n])
                    .expect("validated params yield nonnegative gains")
            })
            .collect()
    }
}

/// Deterministic channel with fixed gains, for controlled experiments.
#[derive(Debug, Clone)]
pub struct FixedChannel {
    pub h_b: Vec<f64>,
    pub h_e: Vec<f64>,
}

impl ChannelSampler for FixedChannel {
    fn sample_round(&self, params: &SystemParams, _round_index: u64) -> Vec<DeviceRound> {
        assert_eq!(self.h_b.len(), params.n_devices);
        (0..params.n_devices)
            .map(|n| DeviceRound::new(self.h_b[n], self.h_e[n], params.power_budgets[n]).unwrap())
            .collect()
    }
}

/// Effective coefficients `(h_b * sqrt(power), h_e * sqrt(power))`.
pub fn effective_coefficients(h_b: f64, h_e: f64, power: f64) -> Result<(f64, f64)> {
    for (name, value) in [("h_b", h_b), ("h_e", h_e)] {
        if !(value >= 0.0) {
            return Err(Error::NegativeInput { name, value });
        }
    }
    if !(power > 0.0) {
        return Err(Error::NegativeInput {
            name: "power",
            value: power,
        });
    }
    let root = power.sqrt();
    Ok((h_b * root, h_e * root))
}
