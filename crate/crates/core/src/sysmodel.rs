//! Shared domain types: system parameters, per-round device state, schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global system constants, validated once and then immutable.
///
/// Noise figures `sigma_b` / `sigma_e` are *variances*, not standard
/// deviations; every formula in this crate is written against variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Number of devices N.
    pub n_devices: usize,
    /// Model dimension d.
    pub model_dim: usize,
    /// L2 bound G on stochastic gradients.
    pub grad_bound: f64,
    /// Receiver noise variance at the base station.
    pub sigma_b: f64,
    /// Receiver noise variance at the eavesdropper.
    pub sigma_e: f64,
    /// Per-device transmit power budgets, length N.
    pub power_budgets: Vec<f64>,
    /// Differential-privacy budget epsilon.
    pub epsilon: f64,
    /// Differential-privacy slack zeta, in (0, 1).
    pub zeta: f64,
    /// MSE-security requirement Upsilon.
    pub upsilon: f64,
    /// Lower end of the uniform gradient-entry range used by the security model.
    pub grad_range_lo: f64,
    /// Upper end of the uniform gradient-entry range.
    pub grad_range_hi: f64,
}

impl SystemParams {
    /// Validates a raw record, returning it unchanged when every invariant holds.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::EmptySystem);
        }
        if self.model_dim == 0 {
            return Err(Error::NonPositiveVariance {
                name: "model_dim",
                value: 0.0,
            });
        }
        for (name, value) in [
            ("grad_bound", self.grad_bound),
            ("sigma_b", self.sigma_b),
            ("sigma_e", self.sigma_e),
            ("epsilon", self.epsilon),
            ("upsilon", self.upsilon),
        ] {
            if !(value > 0.0) {
                return Err(Error::NonPositiveVariance { name, value });
            }
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::ZetaOutOfRange(self.zeta));
        }
        if self.power_budgets.len() != self.n_devices {
            return Err(Error::LengthMismatch {
                name: "power_budgets",
                got: self.power_budgets.len(),
                expected: self.n_devices,
            });
        }
        if let Some(&p) = self.power_budgets.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::NonPositiveVariance {
                name: "power_budgets",
                value: p,
            });
        }
        if !(self.grad_range_lo < self.grad_range_hi) {
            return Err(Error::InvalidRange {
                lo: self.grad_range_lo,
                hi: self.grad_range_hi,
            });
        }
        Ok(())
    }
}

/// Validates a raw parameter record.
pub fn validate_params(raw: SystemParams) -> Result<SystemParams> {
    raw.validated()
}

/// Per-device, per-round channel realization and effective coefficients.
///
/// `p_b = h_b * sqrt(power)` and `p_e = h_e * sqrt(power)` always hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceRound {
    pub h_b: f64,
    pub h_e: f64,
    pub power: f64,
    pub p_b: f64,
    pub p_e: f64,
}

impl DeviceRound {
    pub fn new(h_b: f64, h_e: f64, power: f64) -> Result<Self> {
        let (p_b, p_e) = crate::channel::effective_coefficients(h_b, h_e, power)?;
        Ok(Self {
            h_b,
            h_e,
            power,
            p_b,
            p_e,
        })
    }
}

/// Per-round role of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Transmits its scaled gradient.
    Uploader,
    /// Transmits Gaussian artificial noise.
    Jammer,
    /// Transmits nothing this round.
    Offline,
}

/// Role assignment for one round, indexed by device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub roles: Vec<Role>,
}

impl Schedule {
    pub fn new(roles: Vec<Role>) -> Self {
        Self { roles }
    }

    /// Uploader/jammer schedule from a binary vector: `true` uploads, `false` jams.
    pub fn from_binary(a: &[bool]) -> Self {
        Self {
            roles: a
                .iter()
                .map(|&up| if up { Role::Uploader } else { Role::Jammer })
                .collect(),
        }
    }

    pub fn all_uploaders(n: usize) -> Self {
        Self {
            roles: vec![Role::Uploader; n],
        }
    }

    pub fn all_jammers(n: usize) -> Self {
        Self {
            roles: vec![Role::Jammer; n],
        }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn uploaders(&self) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Role::Uploader)
            .map(|(i, _)| i)
    }

    pub fn jammers(&self) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Role::Jammer)
            .map(|(i, _)| i)
    }

    pub fn uploader_count(&self) -> usize {
        self.uploaders().count()
    }

    pub fn jammer_count(&self) -> usize {
        self.jammers().count()
    }

    pub fn has_offline(&self) -> bool {
        self.roles.contains(&Role::Offline)
    }
}

/// Derived quantities of a schedule against one round's channel realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleMetrics {
    /// H = sum of p_b over uploaders.
    pub h_sum: f64,
    /// Lambda = max p_b over uploaders (0 when there are none).
    pub lambda_max: f64,
    /// Scheduling objective; +inf iff there are no uploaders.
    pub psi: f64,
    pub uploader_count: usize,
    pub jammer_count: usize,
}
