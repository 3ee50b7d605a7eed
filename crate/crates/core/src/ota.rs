//! Over-the-air transmission: uploader/jammer signal construction, reception
//! at the base station and the eavesdropper, and post-processing.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};
use crate::sysmodel::{DeviceRound, Schedule, SystemParams};

/// d-dimensional real vector.
pub type GradientVec = Vec<f64>;

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// All signals of one round.
#[derive(Debug, Clone)]
pub struct RoundSignals {
    pub uploader_signals: BTreeMap<usize, GradientVec>,
    pub jammer_signals: BTreeMap<usize, GradientVec>,
    pub y_bs: GradientVec,
    pub z_eve: GradientVec,
}

/// How uploaders scale their gradients onto the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadEncoding {
    /// Full-power transmission `x = (sqrt(P) / G) g`; the receiver rescales.
    Cwpp,
    /// Alignment to the weakest uploader's coefficient; `verbatim` selects
    /// the product form `min(h P)` instead of the power-consistent
    /// `min(h sqrt(P))`.
    Aligned { verbatim: bool },
}

/// Uploader signal `x = (sqrt(power) / grad_bound) * g`.
pub fn encode_uploader(g: &[f64], power: f64, grad_bound: f64) -> Result<GradientVec> {
    let norm = l2_norm(g);
    if norm > grad_bound * (1.0 + 1e-12) {
        return Err(Error::GradientTooLarge {
            norm,
            bound: grad_bound,
        });
    }
    let scale = power.sqrt() / grad_bound;
    Ok(g.iter().map(|x| scale * x).collect())
}

/// Jammer signal with i.i.d. `N(0, power / dim)` entries, so the expected
/// squared norm equals the power budget.
pub fn sample_jammer(rng: &mut impl Rng, power: f64, dim: usize) -> GradientVec {
    let scale = (power / dim as f64).sqrt();
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Superposed reception `y = sum h_i x_i + r` with per-entry noise variance
/// `noise_variance`.
pub fn receive(
    signals: &[GradientVec],
    gains: &[f64],
    noise_variance: f64,
    rng: &mut impl Rng,
) -> Result<GradientVec> {
    if signals.len() != gains.len() {
        return Err(Error::DimensionMismatch {
            name: "gains",
            got: gains.len(),
            expected: signals.len(),
        });
    }
    let dim = signals.first().map_or(0, Vec::len);
    for s in signals {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                name: "signal",
                got: s.len(),
                expected: dim,
            });
        }
    }
    let sd = noise_variance.sqrt();
    let mut y = vec![0.0; dim];
    for (s, &h) in signals.iter().zip(gains) {
        for (yi, xi) in y.iter_mut().zip(s) {
            *yi += h * xi;
        }
    }
    for yi in y.iter_mut() {
        *yi += sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(y)
}

/// Alignment coefficient of the aligned baseline: the weakest uploader's
/// channel-power product.
pub fn alignment_coefficient(
    schedule: &Schedule,
    devices: &[DeviceRound],
    verbatim: bool,
) -> Result<f64> {
    schedule
        .uploaders()
        .map(|n| {
            let d = &devices[n];
            if verbatim {
                d.h_b * d.power
            } else {
                d.p_b
            }
        })
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.min(c))))
        .ok_or(Error::NoUploaders)
}

/// Aligned-baseline uploader signal `x = c / (h_b * grad_bound) * g`.
pub fn encode_aligned(g: &[f64], c: f64, h_b: f64, grad_bound: f64) -> Result<GradientVec> {
    if !(h_b > 0.0) {
        return Err(Error::NegativeInput {
            name: "h_b",
            value: h_b,
        });
    }
    let scale = c / (h_b * grad_bound);
    Ok(g.iter().map(|x| scale * x).collect())
}

/// Channel-weighted post-processing: `g~ = (grad_bound / H) y` with
/// `H = sum of p_b over uploaders`.
pub fn cwpp_aggregate(
    y_bs: &[f64],
    schedule: &Schedule,
    devices: &[DeviceRound],
    grad_bound: f64,
) -> Result<GradientVec> {
    if schedule.uploader_count() == 0 {
        return Err(Error::NoUploaders);
    }
    let h: f64 = schedule.uploaders().map(|n| devices[n].p_b).sum();
    let scale = grad_bound / h;
    Ok(y_bs.iter().map(|y| scale * y).collect())
}

/// Aligned-baseline post-processing: divides the received signal by
/// `|K| c / grad_bound`, recovering the unweighted gradient mean plus noise
/// amplified by `grad_bound / (|K| c)`.
pub fn aligned_aggregate(
    y_bs: &[f64],
    schedule: &Schedule,
    devices: &[DeviceRound],
    grad_bound: f64,
    verbatim: bool,
) -> Result<GradientVec> {
    let count = schedule.uploader_count();
    if count == 0 {
        return Err(Error::NoUploaders);
    }
    let c = alignment_coefficient(schedule, devices, verbatim)?;
    let scale = grad_bound / (count as f64 * c);
    Ok(y_bs.iter().map(|y| scale * y).collect())
}

/// Builds all transmit signals for one round and receives them at the BS and
/// the eavesdropper. Jammer signals and receiver noise come from streams
/// keyed on `(seed, round, device, purpose)`.
pub fn transmit_round(
    uploader_gradients: &BTreeMap<usize, GradientVec>,
    schedule: &Schedule,
    devices: &[DeviceRound],
    params: &SystemParams,
    encoding: UploadEncoding,
    seed: u64,
    round: u64,
) -> Result<RoundSignals> {
    let dim = params.model_dim;
    let mut uploader_signals = BTreeMap::new();
    for n in schedule.uploaders() {
        let g = uploader_gradients
            .get(&n)
            .ok_or(Error::LengthMismatch {
                name: "uploader_gradients",
                got: uploader_gradients.len(),
                expected: schedule.uploader_count(),
            })?;
        if g.len() != dim {
            return Err(Error::DimensionMismatch {
                name: "gradient",
                got: g.len(),
                expected: dim,
            });
        }
        let x = match encoding {
            UploadEncoding::Cwpp => encode_uploader(g, devices[n].power, params.grad_bound)?,
            UploadEncoding::Aligned { verbatim } => {
                let c = alignment_coefficient(schedule, devices, verbatim)?;
                encode_aligned(g, c, devices[n].h_b, params.grad_bound)?
            }
        };
        uploader_signals.insert(n, x);
    }
    let mut jammer_signals = BTreeMap::new();
    for n in schedule.jammers() {
        let mut rng = stream_rng(seed, round, n as u64, Purpose::JammerSignal);
        jammer_signals.insert(n, sample_jammer(&mut rng, devices[n].power, dim));
    }

    let active: Vec<usize> = uploader_signals
        .keys()
        .chain(jammer_signals.keys())
        .copied()
        .collect();
    let mut signals: Vec<GradientVec> = active
        .iter()
        .map(|n| {
            uploader_signals
                .get(n)
                .unwrap_or_else(|| &jammer_signals[n])
                .clone()
        })
        .collect();
    let mut gains_b: Vec<f64> = active.iter().map(|&n| devices[n].h_b).collect();
    let mut gains_e: Vec<f64> = active.iter().map(|&n| devices[n].h_e).collect();
    if active.is_empty() {
        // nothing transmitted: the receivers see pure noise
        signals.push(vec![0.0; dim]);
        gains_b.push(0.0);
        gains_e.push(0.0);
    }

    let mut rng_b = stream_rng(seed, round, 0, Purpose::BsNoise);
    let mut rng_e = stream_rng(seed, round, 0, Purpose::EveNoise);
    let y_bs = receive(&signals, &gains_b, params.sigma_b, &mut rng_b)?;
    let z_eve = receive(&signals, &gains_e, params.sigma_e, &mut rng_e)?;
    Ok(RoundSignals {
        uploader_signals,
        jammer_signals,
        y_bs,
        z_eve,
    })
}

/// Error of the eavesdropper's lowest-variance unbiased estimator,
/// `e(z) - g_ave = (G / (|K| Lambda)) r_E_tot`, reconstructed from the round's
/// signals with full schedule knowledge.
pub fn eve_unbiased_estimator_error(
    signals: &RoundSignals,
    schedule: &Schedule,
    devices: &[DeviceRound],
    params: &SystemParams,
) -> Result<GradientVec> {
    let count = schedule.uploader_count();
    if count == 0 {
        return Err(Error::NoUploaders);
    }
    let lambda = schedule
        .uploaders()
        .map(|n| devices[n].p_b)
        .fold(0.0_f64, f64::max);
    let mut r_tot = signals.z_eve.clone();
    for (n, x) in &signals.uploader_signals {
        let h = devices[*n].h_e;
        for (r, xi) in r_tot.iter_mut().zip(x) {
            *r -= h * xi;
        }
    }
    let scale = params.grad_bound / (count as f64 * lambda);
    Ok(r_tot.into_iter().map(|r| scale * r).collect())
}
