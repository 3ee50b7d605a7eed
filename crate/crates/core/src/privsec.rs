//! Privacy and security accounting: aggregated noise variance, per-uploader
//! DP epsilon, the security coefficient, the MMSE function Xi and the
//! MSE-security floor, and the critical channel-power point.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::sysmodel::{DeviceRound, Schedule, SystemParams};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Per-round privacy accounting; only uploaders appear.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    pub per_uploader_epsilon: Vec<(usize, f64)>,
    pub zeta: f64,
    pub kappa: f64,
}

impl PrivacyReport {
    pub fn max_epsilon(&self) -> Option<f64> {
        self.per_uploader_epsilon
            .iter()
            .map(|(_, e)| *e)
            .fold(None, |m, e| Some(m.map_or(e, |m: f64| m.max(e))))
    }
}

/// Per-round security accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityReport {
    /// Variance of the eavesdropper's best unbiased estimate.
    pub gamma_e: f64,
    /// Guaranteed minimum MSE of any eavesdropper estimator.
    pub mse_floor: f64,
}

/// `kappa = sqrt(2 ln(1.25 / zeta))` of the Gaussian mechanism.
pub fn kappa(zeta: f64) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::ZetaOutOfRange(zeta));
    }
    Ok((2.0 * (1.25 / zeta).ln()).sqrt())
}

/// Variance of the aggregated noise at the base station:
/// `sum over jammers of p_b^2 / d + sigma_b`. Offline devices add nothing.
pub fn bs_noise_variance(
    schedule: &Schedule,
    devices: &[DeviceRound],
    params: &SystemParams,
) -> f64 {
    let jam: f64 = schedule
        .jammers()
        .map(|n| devices[n].p_b * devices[n].p_b)
        .sum();
    jam / params.model_dim as f64 + params.sigma_b
}

/// DP level of one uploader: `2 p_b kappa / sqrt(sigma_tot_sq)`.
pub fn dp_epsilon(uploader: &DeviceRound, sigma_tot_sq: f64, kappa: f64) -> Result<f64> {
    if !(sigma_tot_sq > 0.0) {
        return Err(Error::ZeroNoise);
    }
    Ok(2.0 * uploader.p_b * kappa / sigma_tot_sq.sqrt())
}

/// DP epsilon of every uploader under the given schedule.
pub fn privacy_report(
    schedule: &Schedule,
    devices: &[DeviceRound],
    params: &SystemParams,
) -> Result<PrivacyReport> {
    let k = kappa(params.zeta)?;
    let sigma_tot = bs_noise_variance(schedule, devices, params);
    let per_uploader_epsilon = schedule
        .uploaders()
        .map(|n| Ok((n, dp_epsilon(&devices[n], sigma_tot, k)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrivacyReport {
        per_uploader_epsilon,
        zeta: params.zeta,
        kappa: k,
    })
}

/// Security coefficient
/// `gamma_E = G^2 / (|K| Lambda)^2 * (sum over jammers of p_e^2 / d + sigma_e)`
/// with `Lambda = max p_b over uploaders`.
pub fn security_coefficient(
    schedule: &Schedule,
    devices: &[DeviceRound],
    params: &SystemParams,
) -> Result<f64> {
    let count = schedule.uploader_count();
    if count == 0 {
        return Err(Error::NoUploaders);
    }
    let lambda = schedule
        .uploaders()
        .map(|n| devices[n].p_b)
        .fold(0.0_f64, f64::max);
    let jam: f64 = schedule
        .jammers()
        .map(|n| devices[n].p_e * devices[n].p_e)
        .sum();
    let g2 = params.grad_bound * params.grad_bound;
    let denom = (count as f64 * lambda).powi(2);
    Ok(g2 / denom * (jam / params.model_dim as f64 + params.sigma_e))
}

/// Security coefficient together with its MSE floor for the configured
/// gradient-entry range.
pub fn security_report(
    schedule: &Schedule,
    devices: &[DeviceRound],
    params: &SystemParams,
) -> Result<SecurityReport> {
    let gamma_e = security_coefficient(schedule, devices, params)?;
    let mse_floor = mse_security_floor(gamma_e, params.grad_range_lo, params.grad_range_hi)?;
    Ok(SecurityReport { gamma_e, mse_floor })
}

/// Critical channel-power point below which channel noise alone covers both
/// the privacy and the security requirement:
/// `min(epsilon sqrt(sigma_b) / (2 kappa), G sqrt(sigma_e) / (N sqrt(upsilon)))`.
pub fn critical_point(params: &SystemParams) -> Result<f64> {
    let k = kappa(params.zeta)?;
    let privacy = params.epsilon * params.sigma_b.sqrt() / (2.0 * k);
    let security =
        params.grad_bound * params.sigma_e.sqrt() / (params.n_devices as f64 * params.upsilon.sqrt());
    Ok(privacy.min(security))
}

/// MSE floor `gamma_e * Xi((hi - lo) / sqrt(gamma_e))`; zero when the noise or
/// the prior is degenerate.
pub fn mse_security_floor(gamma_e: f64, lo: f64, hi: f64) -> Result<f64> {
    if hi < lo {
        return Err(Error::InvalidRange { lo, hi });
    }
    if !(gamma_e >= 0.0) {
        return Err(Error::NegativeInput {
            name: "gamma_e",
            value: gamma_e,
        });
    }
    if gamma_e == 0.0 || hi == lo {
        return Ok(0.0);
    }
    Ok(gamma_e * xi((hi - lo) / gamma_e.sqrt())?)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `P(a <= Z <= b)` for standard normal `Z`, stable in both tails.
pub fn normal_cdf_diff(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a >= 0.0 {
        0.5 * (erfc(a / SQRT_2) - erfc(b / SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / SQRT_2) - erfc(-a / SQRT_2))
    } else {
        0.5 * (erfc(a / SQRT_2) - erfc(b / SQRT_2))
    }
}

/// Posterior mean `E[u | v]` for `u ~ Uniform(0, width)` observed through unit
/// Gaussian noise as `v = u + z`: the mean of a standard normal centered at
/// `v` truncated to `[0, width]`. When the truncation mass underflows below
/// 1e-300 the mean collapses to the interval endpoint nearer to `v`.
pub(crate) fn uniform_unit_posterior_mean(v: f64, width: f64) -> f64 {
    let mass = normal_cdf_diff(-v, width - v);
    if mass < 1e-300 {
        return if v < 0.0 { 0.0 } else { width };
    }
    let m = v + (normal_pdf(-v) - normal_pdf(width - v)) / mass;
    m.clamp(0.0, width)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Conditional MSE `E[(E[u|v] - u)^2 | u]` for the unit-noise uniform prior,
/// integrating the observation around `u`. The Gaussian weight outside
/// `|v - u| <= 12` is below 1e-31, so the window is clipped to that band
/// inside the overall `[-10, width + 10]` truncation.
fn conditional_mse(u: f64, width: f64) -> f64 {
    let lo = (-10.0_f64).max(u - 12.0);
    let hi = (width + 10.0).min(u + 12.0);
    let f = |v: f64| {
        let err = uniform_unit_posterior_mean(v, width) - u;
        err * err * normal_pdf(v - u)
    };
    // Fixed knots around u keep the adaptive rule from stepping over the peak.
    let mut knots = [
        lo,
        u - 8.0,
        u - 4.0,
        u - 2.0,
        u - 1.0,
        u,
        u + 1.0,
        u + 2.0,
        u + 4.0,
        u + 8.0,
        hi,
    ];
    for k in knots.iter_mut() {
        *k = k.clamp(lo, hi);
    }
    let mut total = 0.0;
    for w in knots.windows(2) {
        if w[1] > w[0] {
            total += adaptive_simpson(&f, w[0], w[1], 1e-7);
        }
    }
    total
}

/// MMSE of a `Uniform(0, t)` variable observed through unit Gaussian noise,
/// by nested adaptive Simpson quadrature. Absolute error is below 1e-4 on
/// the tested range; `xi(0) = 0` and `xi(t) -> 1` as `t` grows.
pub fn xi(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::NegativeArgument(t));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let n_panels = (t.ceil() as usize).clamp(4, 64);
    let g = |u: f64| conditional_mse(u, t) / t;
    let mut total = 0.0;
    for i in 0..n_panels {
        let a = t * i as f64 / n_panels as f64;
        let b = t * (i + 1) as f64 / n_panels as f64;
        total += adaptive_simpson(&g, a, b, 1e-5 / n_panels as f64);
    }
    Ok(total)
}
