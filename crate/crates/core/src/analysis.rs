//! Convergence-bound evaluation against empirical traces, convexity-constant
//! estimation for the desk-scale learners, and the Monte-Carlo MMSE oracle
//! for the eavesdropper.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fedlearn::{loss_and_gradient, LocalDataset, LossKind, ModelState, TrainingTrace};
use crate::privsec;
use crate::scheduler;
use crate::seeding::{stream_rng, Purpose};
use crate::sysmodel::{DeviceRound, Schedule, SystemParams};

/// Constants of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    /// Smoothness theta.
    pub theta: f64,
    /// Strong convexity rho (rho <= theta).
    pub rho: f64,
    /// Stochastic-gradient variance bound.
    pub var_bound: f64,
    /// Heterogeneity bound Gamma.
    pub gamma_het: f64,
    /// Step-size constant `(rho T + 2 theta) / 2`.
    pub varrho: f64,
}

impl ConvergenceParams {
    pub fn new(theta: f64, rho: f64, var_bound: f64, gamma_het: f64, rounds: u64) -> Self {
        Self {
            theta,
            rho,
            var_bound,
            gamma_het,
            varrho: (rho * rounds as f64 + 2.0 * theta) / 2.0,
        }
    }

    pub fn tau(&self, t: u64) -> f64 {
        2.0 / (self.rho * t as f64 + 2.0 * self.theta)
    }
}

/// Convexity constants and optima estimated from the dataset ensemble.
#[derive(Debug, Clone)]
pub struct EstimatedConvexity {
    pub theta: f64,
    pub rho: f64,
    pub m_star: Vec<f64>,
    pub local_optima: Vec<Vec<f64>>,
    pub gamma_het: f64,
    pub var_bound: f64,
}

impl EstimatedConvexity {
    pub fn convergence_params(&self, rounds: u64) -> ConvergenceParams {
        ConvergenceParams::new(self.theta, self.rho, self.var_bound, self.gamma_het, rounds)
    }
}

/// (theta, rho, global optimum, per-device optima)
type ConvexConstants = (f64, f64, Vec<f64>, Vec<Vec<f64>>);

const VAR_PROBE_SEED: u64 = 0xA11A;
const VAR_PROBE_BATCHES: usize = 200;

/// Estimates smoothness, strong convexity, the global and local optima, the
/// heterogeneity bound and the batch-gradient variance bound.
///
/// Linear regression is closed form: theta and rho are the extreme
/// eigenvalues of the averaged empirical Hessian and the optima solve the
/// normal equations. The squared-SVM path estimates its optima by subgradient
/// descent with rho = iota. The variance bound is the largest per-device
/// empirical batch-gradient variance, probed at the zero initial model with
/// a fixed internal seed.
pub fn estimate_convex_params(
    datasets: &[LocalDataset],
    loss_kind: &LossKind,
) -> Result<EstimatedConvexity> {
    if datasets.is_empty() {
        return Err(Error::EmptySystem);
    }
    let dim = datasets[0].samples[0].0.len();
    let (theta, rho, m_star, local_optima) = match loss_kind {
        LossKind::Linreg => linreg_constants(datasets, dim)?,
        LossKind::Svm { iota } => svm_constants(datasets, dim, *iota)?,
    };
    let gamma_het = local_optima
        .iter()
        .map(|local| {
            let worst = m_star
                .iter()
                .zip(local)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            theta * dim as f64 / 2.0 * worst * worst
        })
        .fold(0.0_f64, f64::max);
    let var_bound = batch_variance_bound(datasets, loss_kind, dim)?;
    Ok(EstimatedConvexity {
        theta,
        rho,
        m_star,
        local_optima,
        gamma_het,
        var_bound,
    })
}

fn linreg_constants(datasets: &[LocalDataset], dim: usize) -> Result<ConvexConstants> {
    let n = datasets.len();
    let mut h_global = DMatrix::<f64>::zeros(dim, dim);
    let mut b_global = DVector::<f64>::zeros(dim);
    let mut locals = Vec::with_capacity(n);
    for ds in datasets {
        let d_n = ds.samples.len() as f64;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for (u, v) in &ds.samples {
            for i in 0..dim {
                b[i] += v * u[i] / d_n;
                for j in 0..dim {
                    h[(i, j)] += u[i] * u[j] / d_n;
                }
            }
        }
        let local = h
            .clone()
            .cholesky()
            .ok_or(Error::SingularSystem)?
            .solve(&b);
        locals.push(local.iter().copied().collect());
        h_global += h / n as f64;
        b_global += b / n as f64;
    }
    let m_star = h_global
        .clone()
        .cholesky()
        .ok_or(Error::SingularSystem)?
        .solve(&b_global);
    let eigen = h_global.symmetric_eigen();
    let theta = eigen.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
    let rho = eigen.eigenvalues.iter().copied().fold(f64::MAX, f64::min);
    if !(rho > 0.0) {
        return Err(Error::SingularSystem);
    }
    Ok((theta, rho, m_star.iter().copied().collect(), locals))
}

fn svm_constants(datasets: &[LocalDataset], dim: usize, iota: f64) -> Result<ConvexConstants> {
    if !(iota > 0.0) {
        return Err(Error::NonPositiveVariance {
            name: "iota",
            value: iota,
        });
    }
    // data-curvature estimate for the smoothness scale; the hinge itself is
    // piecewise linear
    let mut h_mean = DMatrix::<f64>::zeros(dim, dim);
    for ds in datasets {
        let d_n = ds.samples.len() as f64;
        for (u, _) in &ds.samples {
            for i in 0..dim {
                for j in 0..dim {
                    h_mean[(i, j)] += u[i] * u[j] / (2.0 * d_n * datasets.len() as f64);
                }
            }
        }
    }
    let lam_max = h_mean
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::MIN, f64::max);
    let theta = iota + lam_max;
    let rho = iota;
    let kind = LossKind::Svm { iota };
    let all: Vec<&LocalDataset> = datasets.iter().collect();
    let m_star = subgradient_descent(&all, dim, &kind, rho);
    let locals = datasets
        .iter()
        .map(|ds| subgradient_descent(&[ds], dim, &kind, rho))
        .collect();
    Ok((theta, rho, m_star, locals))
}

fn subgradient_descent(
    datasets: &[&LocalDataset],
    dim: usize,
    kind: &LossKind,
    rho: f64,
) -> Vec<f64> {
    let mut m = ModelState::zeros(dim);
    for t in 0..2000u64 {
        let mut g = vec![0.0; dim];
        for ds in datasets {
            let (_, gn) = loss_and_gradient(&m, &ds.samples, kind).expect("nonempty dataset");
            for (a, b) in g.iter_mut().zip(&gn) {
                *a += b / datasets.len() as f64;
            }
        }
        let tau = 2.0 / (rho * (t as f64 + 1.0) + 2.0);
        for (w, gi) in m.weights.iter_mut().zip(&g) {
            *w -= tau * gi;
        }
    }
    m.weights
}

fn batch_variance_bound(
    datasets: &[LocalDataset],
    loss_kind: &LossKind,
    dim: usize,
) -> Result<f64> {
    let probe = ModelState::zeros(dim);
    let mut worst = 0.0_f64;
    for (n, ds) in datasets.iter().enumerate() {
        let (_, full) = loss_and_gradient(&probe, &ds.samples, loss_kind)?;
        if ds.batch_size == ds.samples.len() {
            continue; // full-batch gradient carries no sampling variance
        }
        let mut acc = 0.0;
        let mut rng = stream_rng(VAR_PROBE_SEED, 0, n as u64, Purpose::Batch);
        for _ in 0..VAR_PROBE_BATCHES {
            let idx = rand::seq::index::sample(&mut rng, ds.samples.len(), ds.batch_size);
            let batch: Vec<_> = idx.iter().map(|i| ds.samples[i].clone()).collect();
            let (_, g) = loss_and_gradient(&probe, &batch, loss_kind)?;
            acc += g
                .iter()
                .zip(&full)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        worst = worst.max(acc / VAR_PROBE_BATCHES as f64);
    }
    Ok(worst)
}

/// Scheduling objective of a recorded round; same formula as the solver
/// objective, tolerant of Offline roles. +inf when no device uploads.
pub fn psi_of_round(schedule: &Schedule, devices: &[DeviceRound], params: &SystemParams) -> f64 {
    scheduler::psi_formula(
        schedule,
        devices,
        params.n_devices,
        params.model_dim,
        params.sigma_b,
    )
}

/// One step of the convergence recursion:
/// `(1 - rho tau) omega + tau^2 (2 varrho Gamma + vartheta^2 + G^2 psi)`.
///
/// The contraction is proved for `1/varrho <= tau <= 1/theta`; values outside
/// that band are accepted but logged.
pub fn bound_step(
    omega_t: f64,
    tau: f64,
    cp: &ConvergenceParams,
    psi_t: f64,
    grad_bound: f64,
) -> f64 {
    if tau < 1.0 / cp.varrho - 1e-12 || tau > 1.0 / cp.theta + 1e-12 {
        log::warn!(
            "step size {tau} outside [{}, {}]; bound step may not contract",
            1.0 / cp.varrho,
            1.0 / cp.theta
        );
    }
    (1.0 - cp.rho * tau) * omega_t
        + tau * tau * (2.0 * cp.varrho * cp.gamma_het + cp.var_bound + grad_bound * grad_bound * psi_t)
}

/// Optimality-gap bound after `T` rounds under the inverse-time step-size
/// schedule:
/// `theta / (rho T + 2 theta) * (2 / rho) (vartheta^2 + G^2 max_psi) + 2 Gamma theta / rho`.
pub fn optimality_gap_bound(rounds: u64, cp: &ConvergenceParams, max_psi: f64, grad_bound: f64) -> f64 {
    let t = rounds as f64;
    cp.theta / (cp.rho * t + 2.0 * cp.theta)
        * (2.0 / cp.rho * (cp.var_bound + grad_bound * grad_bound * max_psi))
        + 2.0 * cp.gamma_het * cp.theta / cp.rho
}

/// One round of the bound/empirical comparison.
#[derive(Debug, Clone, Copy)]
pub struct BoundRow {
    pub round: u64,
    pub omega_bound: f64,
    pub omega_empirical: f64,
    /// `omega_bound - (omega_empirical - 3 se)`.
    pub margin: f64,
    pub holds: bool,
}

/// Result of validating the bound recursion against replicated traces.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub holds: bool,
    /// Set when fewer than two replicates make the comparison high variance.
    pub low_replicates: bool,
}

impl BoundReport {
    /// Stable CSV rendering of the per-round comparison.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,omega_bound,omega_empirical,margin,holds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.round, r.omega_bound, r.omega_empirical, r.margin, r.holds
            ));
        }
        out
    }
}

/// Iterates the bound recursion per replicate from `omega^0 = |m^0 - m*|^2`
/// (skipped rounds keep omega) and checks that the averaged bound dominates
/// the averaged empirical gap minus three standard errors at every round.
pub fn validate_bound(
    traces: &[TrainingTrace],
    cp: &ConvergenceParams,
    grad_bound: f64,
) -> Result<BoundReport> {
    if traces.is_empty() {
        return Err(Error::MissingOptimum);
    }
    let rounds = traces[0].rows.len() - 1;
    for tr in traces {
        if tr.rows.len() != rounds + 1 {
            return Err(Error::LengthMismatch {
                name: "trace",
                got: tr.rows.len(),
                expected: rounds + 1,
            });
        }
        if !tr.rows[0].gap_sq.is_finite() {
            return Err(Error::MissingOptimum);
        }
    }
    let reps = traces.len();
    let mut omegas: Vec<f64> = traces.iter().map(|t| t.rows[0].gap_sq).collect();
    let mut rows = Vec::with_capacity(rounds + 1);
    let push_row = |round: u64, omegas: &[f64]| -> BoundRow {
        let emp: Vec<f64> = traces
            .iter()
            .map(|t| t.rows[round as usize].gap_sq)
            .collect();
        let emp_mean = emp.iter().sum::<f64>() / reps as f64;
        let se = if reps > 1 {
            let var =
                emp.iter().map(|x| (x - emp_mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
            (var / reps as f64).sqrt()
        } else {
            0.0
        };
        let bound_mean = omegas.iter().sum::<f64>() / reps as f64;
        let margin = bound_mean - (emp_mean - 3.0 * se);
        BoundRow {
            round,
            omega_bound: bound_mean,
            omega_empirical: emp_mean,
            margin,
            holds: margin >= -1e-9,
        }
    };
    rows.push(push_row(0, &omegas));
    for t in 0..rounds {
        let tau = cp.tau(t as u64);
        for (r, omega) in omegas.iter_mut().enumerate() {
            let psi = traces[r].rows[t + 1].psi;
            if psi.is_finite() {
                *omega = bound_step(*omega, tau, cp, psi, grad_bound);
            }
            // skipped round: model unchanged, bound unchanged
        }
        rows.push(push_row(t as u64 + 1, &omegas));
    }
    let holds = rows.iter().all(|r| r.holds);
    Ok(BoundReport {
        rows,
        holds,
        low_replicates: reps < 2,
    })
}

/// Monte-Carlo MMSE of a `Uniform(lo, hi)` scalar observed through Gaussian
/// noise of variance `gamma_e`, using the analytic truncated-normal
/// conditional mean. Intended for `trials >= 10^4`.
pub fn empirical_eve_mmse(
    gamma_e: f64,
    lo: f64,
    hi: f64,
    trials: usize,
    rng: &mut impl Rng,
) -> f64 {
    if gamma_e <= 0.0 || hi <= lo {
        return 0.0;
    }
    let sd = gamma_e.sqrt();
    let width = (hi - lo) / sd;
    let mut acc = 0.0;
    for _ in 0..trials {
        let u: f64 = lo + (hi - lo) * rng.random::<f64>();
        let v = u + sd * rng.sample::<f64, _>(StandardNormal);
        let est = lo + sd * privsec::uniform_unit_posterior_mean((v - lo) / sd, width);
        acc += (est - u) * (est - u);
    }
    acc / trials as f64
}
