//! Device scheduling: case classification, Policy-1 thresholding, and the
//! Policy-2 solvers (exhaustive search, BnB-based sequential promotion,
//! high-dimension closed form, random baseline).

use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::privsec::{critical_point, kappa};
use crate::sysmodel::{DeviceRound, Role, Schedule, ScheduleMetrics, SystemParams};

/// Hard cap on exhaustive search.
pub const ESM_MAX_DEVICES: usize = 20;

/// One round's scheduling problem.
#[derive(Debug, Clone)]
pub struct SchedulingInstance {
    pub devices: Vec<DeviceRound>,
    pub params: SystemParams,
    pub kappa: f64,
    /// Replace the uploader count with N in the security constraint, the
    /// stronger form used by the critical-point derivation. Off by default:
    /// the constraint is enforced as written.
    pub security_count_as_n: bool,
}

impl SchedulingInstance {
    pub fn new(devices: Vec<DeviceRound>, params: SystemParams) -> Result<Self> {
        if devices.len() != params.n_devices {
            return Err(Error::LengthMismatch {
                name: "devices",
                got: devices.len(),
                expected: params.n_devices,
            });
        }
        let kappa = kappa(params.zeta)?;
        Ok(Self {
            devices,
            params,
            kappa,
            security_count_as_n: false,
        })
    }

    pub fn with_security_count_as_n(mut self, on: bool) -> Self {
        self.security_count_as_n = on;
        self
    }

    fn n(&self) -> usize {
        self.devices.len()
    }
}

/// Channel-noise regime of one round relative to the critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    /// Channel noise covers every device: full participation is safe.
    Case1,
    /// Channel noise covers a subset: Policy-1 or Policy-2 applies.
    Case2,
    /// Channel noise covers no device: only Policy-2 applies.
    Case3,
}

/// Outcome of one solver invocation.
#[derive(Debug, Clone)]
pub struct SolverResult {
    pub schedule: Schedule,
    pub metrics: ScheduleMetrics,
    pub feasible: bool,
    pub solver_name: &'static str,
    pub elapsed: Duration,
}

/// Scheduler selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerChoice {
    Full,
    Policy1,
    Spa,
    Esm,
    ClosedForm,
    Random,
}

impl SchedulerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Policy1 => "policy1",
            Self::Spa => "spa",
            Self::Esm => "esm",
            Self::ClosedForm => "closed-form",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for SchedulerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "policy1" => Ok(Self::Policy1),
            "spa" => Ok(Self::Spa),
            "esm" => Ok(Self::Esm),
            "closed-form" => Ok(Self::ClosedForm),
            "random" => Ok(Self::Random),
            other => Err(Error::ConfigParse(format!(
                "unknown scheduler '{other}' (expected full|policy1|spa|esm|closed-form|random)"
            ))),
        }
    }
}

/// Scalar form of the privacy constraint: every uploader's DP level stays
/// within epsilon. `lambda` is the largest uploader p_b; `None` means no
/// uploaders, which satisfies the constraint vacuously.
fn privacy_ok(lambda: Option<f64>, jam_qb: f64, inst: &SchedulingInstance) -> bool {
    let Some(lambda) = lambda else { return true };
    let sigma_tot = jam_qb / inst.params.model_dim as f64 + inst.params.sigma_b;
    2.0 * inst.kappa * lambda / sigma_tot.sqrt() <= inst.params.epsilon
}

/// Scalar form of the security constraint. False when there are no uploaders.
fn security_ok(count_k: usize, lambda: f64, jam_qe: f64, inst: &SchedulingInstance) -> bool {
    if count_k == 0 {
        return false;
    }
    let count = if inst.security_count_as_n {
        inst.n()
    } else {
        count_k
    };
    let g = inst.params.grad_bound;
    let noise = jam_qe / inst.params.model_dim as f64 + inst.params.sigma_e;
    g * g / (count as f64 * lambda).powi(2) * noise >= inst.params.upsilon
}

fn jam_sums(schedule: &Schedule, devices: &[DeviceRound]) -> (f64, f64) {
    let mut qb = 0.0;
    let mut qe = 0.0;
    for n in schedule.jammers() {
        qb += devices[n].p_b * devices[n].p_b;
        qe += devices[n].p_e * devices[n].p_e;
    }
    (qb, qe)
}

fn lambda_of(schedule: &Schedule, devices: &[DeviceRound]) -> Option<f64> {
    schedule
        .uploaders()
        .map(|n| devices[n].p_b)
        .fold(None, |m, p| Some(m.map_or(p, |m: f64| m.max(p))))
}

/// Privacy constraint on a schedule.
pub fn check_privacy_constraint(schedule: &Schedule, inst: &SchedulingInstance) -> bool {
    let (qb, _) = jam_sums(schedule, &inst.devices);
    privacy_ok(lambda_of(schedule, &inst.devices), qb, inst)
}

/// Security constraint on a schedule.
pub fn check_security_constraint(schedule: &Schedule, inst: &SchedulingInstance) -> bool {
    let (_, qe) = jam_sums(schedule, &inst.devices);
    match lambda_of(schedule, &inst.devices) {
        Some(lambda) => security_ok(schedule.uploader_count(), lambda, qe, inst),
        None => false,
    }
}

/// Scheduling objective over roles; Offline devices enter neither sum.
/// Returns +inf when there are no uploaders.
pub(crate) fn psi_formula(
    schedule: &Schedule,
    devices: &[DeviceRound],
    n_devices: usize,
    model_dim: usize,
    sigma_b: f64,
) -> f64 {
    let h: f64 = schedule.uploaders().map(|n| devices[n].p_b).sum();
    if schedule.uploader_count() == 0 {
        return f64::INFINITY;
    }
    let jam_qb: f64 = schedule
        .jammers()
        .map(|n| devices[n].p_b * devices[n].p_b)
        .sum();
    (n_devices as f64 * jam_qb + model_dim as f64 * sigma_b) / (h * h)
}

/// Scheduling objective for an uploader/jammer schedule.
pub fn psi_objective(schedule: &Schedule, inst: &SchedulingInstance) -> Result<f64> {
    if schedule.has_offline() {
        return Err(Error::OfflineRolePresent);
    }
    Ok(psi_formula(
        schedule,
        &inst.devices,
        inst.params.n_devices,
        inst.params.model_dim,
        inst.params.sigma_b,
    ))
}

/// Metrics of a schedule against this instance's channel realizations.
pub fn compute_metrics(schedule: &Schedule, inst: &SchedulingInstance) -> ScheduleMetrics {
    let h_sum: f64 = schedule.uploaders().map(|n| inst.devices[n].p_b).sum();
    ScheduleMetrics {
        h_sum,
        lambda_max: lambda_of(schedule, &inst.devices).unwrap_or(0.0),
        psi: psi_formula(
            schedule,
            &inst.devices,
            inst.params.n_devices,
            inst.params.model_dim,
            inst.params.sigma_b,
        ),
        uploader_count: schedule.uploader_count(),
        jammer_count: schedule.jammer_count(),
    }
}

fn is_feasible(schedule: &Schedule, inst: &SchedulingInstance) -> bool {
    check_privacy_constraint(schedule, inst) && check_security_constraint(schedule, inst)
}

/// Classifies the round against the critical point. Boundary ties resolve
/// toward the larger participation case: `p_M = p_hat` is Case 1 and
/// `p_m = p_hat` (with `p_M > p_hat`) is Case 2.
pub fn classify_case(inst: &SchedulingInstance, p_hat: f64) -> Case {
    let p_max = inst.devices.iter().map(|d| d.p_b).fold(f64::MIN, f64::max);
    let p_min = inst.devices.iter().map(|d| d.p_b).fold(f64::MAX, f64::min);
    if p_max <= p_hat {
        Case::Case1
    } else if p_hat < p_min {
        Case::Case3
    } else {
        Case::Case2
    }
}

/// Policy-1: devices at or below the critical point upload, the rest stay
/// offline. No jammers.
pub fn policy1_select(inst: &SchedulingInstance, p_hat: f64) -> Result<Schedule> {
    let roles: Vec<Role> = inst
        .devices
        .iter()
        .map(|d| {
            if d.p_b <= p_hat {
                Role::Uploader
            } else {
                Role::Offline
            }
        })
        .collect();
    if !roles.contains(&Role::Uploader) {
        return Err(Error::EmptySelection);
    }
    Ok(Schedule::new(roles))
}

/// Policy-1 with the critical point derived from the instance parameters.
pub fn policy1_select_auto(inst: &SchedulingInstance) -> Result<Schedule> {
    let p_hat = critical_point(&inst.params)?;
    policy1_select(inst, p_hat)
}

fn finish(
    schedule: Schedule,
    inst: &SchedulingInstance,
    feasible: bool,
    solver_name: &'static str,
    start: Instant,
) -> SolverResult {
    SolverResult {
        metrics: compute_metrics(&schedule, inst),
        schedule,
        feasible,
        solver_name,
        elapsed: start.elapsed(),
    }
}

fn infeasible_result(
    inst: &SchedulingInstance,
    solver_name: &'static str,
    start: Instant,
) -> SolverResult {
    finish(
        Schedule::all_jammers(inst.n()),
        inst,
        false,
        solver_name,
        start,
    )
}

/// Exhaustive search over all 2^N role vectors; the optimality oracle.
/// Ties break toward more uploaders, then the lexicographically smallest
/// vector. Infeasible instances yield `feasible = false` with the all-jammer
/// schedule.
pub fn solve_esm(inst: &SchedulingInstance) -> Result<SolverResult> {
    let start = Instant::now();
    let n = inst.n();
    if n > ESM_MAX_DEVICES {
        return Err(Error::TooLarge {
            n,
            cap: ESM_MAX_DEVICES,
        });
    }
    let mut best: Option<(f64, usize, u64)> = None;
    for mask in 0u64..(1u64 << n) {
        let mut lambda: Option<f64> = None;
        let mut count = 0usize;
        let mut sum_p = 0.0;
        let mut jam_qb = 0.0;
        let mut jam_qe = 0.0;
        for (i, d) in inst.devices.iter().enumerate() {
            if (mask >> i) & 1 == 1 {
                count += 1;
                sum_p += d.p_b;
                lambda = Some(lambda.map_or(d.p_b, |m: f64| m.max(d.p_b)));
            } else {
                jam_qb += d.p_b * d.p_b;
                jam_qe += d.p_e * d.p_e;
            }
        }
        if count == 0 {
            continue;
        }
        if !privacy_ok(lambda, jam_qb, inst) {
            continue;
        }
        if !security_ok(count, lambda.unwrap(), jam_qe, inst) {
            continue;
        }
        let psi = (n as f64 * jam_qb + inst.params.model_dim as f64 * inst.params.sigma_b)
            / (sum_p * sum_p);
        let better = match &best {
            None => true,
            Some((b_psi, b_count, b_mask)) => {
                if psi != *b_psi {
                    psi < *b_psi
                } else if count != *b_count {
                    count > *b_count
                } else {
                    lex_smaller(mask, *b_mask, n)
                }
            }
        };
        if better {
            best = Some((psi, count, mask));
        }
    }
    Ok(match best {
        Some((_, _, mask)) => {
            let a: Vec<bool> = (0..n).map(|i| (mask >> i) & 1 == 1).collect();
            let schedule = Schedule::from_binary(&a);
            let feasible = is_feasible(&schedule, inst);
            finish(schedule, inst, feasible, "esm", start)
        }
        None => infeasible_result(inst, "esm", start),
    })
}

/// True when vector `a` (bit i = device i) is lexicographically smaller than `b`.
fn lex_smaller(a: u64, b: u64, n: usize) -> bool {
    for i in 0..n {
        let ai = (a >> i) & 1;
        let bi = (b >> i) & 1;
        if ai != bi {
            return ai < bi;
        }
    }
    false
}

/// BnB-based sequential promotion over the full scheduling problem.
///
/// Devices are sorted by ascending p_b. Each pass `iter` starts from the
/// all-jammer vector and walks indices `iter..N`, tentatively promoting each
/// device to uploader and reverting immediately if the current vector breaks
/// either constraint; unvisited positions count as jammers. The best pass by
/// objective wins. After every step the working vector is feasible or all
/// zero, so whenever any single-uploader schedule is feasible the result is
/// feasible.
pub fn solve_spa(inst: &SchedulingInstance) -> SolverResult {
    let start = Instant::now();
    let n = inst.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        inst.devices[a]
            .p_b
            .partial_cmp(&inst.devices[b].p_b)
            .unwrap()
            .then(a.cmp(&b))
    });
    let p: Vec<f64> = order.iter().map(|&i| inst.devices[i].p_b).collect();
    let qb: Vec<f64> = order.iter().map(|&i| inst.devices[i].p_b.powi(2)).collect();
    let qe: Vec<f64> = order.iter().map(|&i| inst.devices[i].p_e.powi(2)).collect();
    let mut suffix_qb = vec![0.0; n + 1];
    let mut suffix_qe = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix_qb[i] = suffix_qb[i + 1] + qb[i];
        suffix_qe[i] = suffix_qe[i + 1] + qe[i];
    }
    let mut prefix_qb = vec![0.0; n + 1];
    let mut prefix_qe = vec![0.0; n + 1];
    for i in 0..n {
        prefix_qb[i + 1] = prefix_qb[i] + qb[i];
        prefix_qe[i + 1] = prefix_qe[i] + qe[i];
    }

    let mut best_psi = f64::INFINITY;
    let mut best_a: Option<Vec<bool>> = None;
    for iter in 0..n {
        let mut a = vec![false; n];
        // reverted devices accumulate here; all sums are add-only
        let mut reverted_qb = 0.0;
        let mut reverted_qe = 0.0;
        let mut count = 0usize;
        let mut sum_p = 0.0;
        for idx in iter..n {
            // ascending order makes the candidate the new uploader maximum
            let jam_qb = prefix_qb[iter] + reverted_qb + suffix_qb[idx + 1];
            let jam_qe = prefix_qe[iter] + reverted_qe + suffix_qe[idx + 1];
            if privacy_ok(Some(p[idx]), jam_qb, inst)
                && security_ok(count + 1, p[idx], jam_qe, inst)
            {
                a[idx] = true;
                count += 1;
                sum_p += p[idx];
            } else {
                reverted_qb += qb[idx];
                reverted_qe += qe[idx];
            }
        }
        let psi = if count == 0 {
            f64::INFINITY
        } else {
            let jam_qb = prefix_qb[iter] + reverted_qb;
            (n as f64 * jam_qb + inst.params.model_dim as f64 * inst.params.sigma_b)
                / (sum_p * sum_p)
        };
        if psi <= best_psi {
            best_psi = psi;
            best_a = Some(a);
        }
    }

    match best_a {
        Some(a) if best_psi.is_finite() => {
            let mut orig = vec![false; n];
            for (slot, &dev) in order.iter().enumerate() {
                orig[dev] = a[slot];
            }
            let schedule = Schedule::from_binary(&orig);
            let feasible = is_feasible(&schedule, inst);
            finish(schedule, inst, feasible, "spa", start)
        }
        _ => infeasible_result(inst, "spa", start),
    }
}

/// Closed-form Policy-2 solution in the high-dimension limit, where the
/// jammer terms vanish and the objective reduces to maximizing the uploaded
/// channel-power sum.
///
/// With devices sorted by descending p_b, let `i` be the first position whose
/// p_b passes the jammer-free privacy test. Candidate `x` uploads the
/// block of `K_x = min(N - i - x + 2, floor(G sqrt(sigma_e) / (p_{i+x-1} sqrt(upsilon))))`
/// consecutive devices starting at position `i + x - 1`; the block with the
/// largest uploaded p_b sum wins. Blocks with `K_x <= 0` are skipped.
pub fn solve_closed_form_highdim(inst: &SchedulingInstance) -> Result<SolverResult> {
    let start = Instant::now();
    let n = inst.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        inst.devices[b]
            .p_b
            .partial_cmp(&inst.devices[a].p_b)
            .unwrap()
            .then(a.cmp(&b))
    });
    let ps: Vec<f64> = order.iter().map(|&i| inst.devices[i].p_b).collect();
    let threshold = inst.params.epsilon * inst.params.sigma_b.sqrt() / (2.0 * inst.kappa);
    let Some(i0) = ps.iter().position(|&p| p <= threshold) else {
        return Err(Error::NoFeasibleUploader);
    };
    let i = i0 + 1; // 1-based, as in the block-count formula

    let sec_budget = inst.params.grad_bound * inst.params.sigma_e.sqrt() / inst.params.upsilon.sqrt();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for x in 1..=(n - i + 1) {
        let first = i + x - 1; // 1-based block start
        let p_first = ps[first - 1];
        let cap_f = (sec_budget / p_first).floor();
        let cap = if cap_f >= n as f64 { n } else { cap_f as usize };
        let k_x = cap.min(n + 2 - i - x); // x <= n - i + 1 keeps this positive
        if k_x == 0 {
            continue;
        }
        let mut members: Vec<usize> = (first - 1..first - 1 + k_x).map(|s| order[s]).collect();
        members.sort_unstable();
        let sum: f64 = members.iter().map(|&m| inst.devices[m].p_b).sum();
        if best.as_ref().is_none_or(|(b, _)| sum > *b) {
            best = Some((sum, members));
        }
    }
    Ok(match best {
        Some((_, members)) => {
            let mut a = vec![false; n];
            for m in members {
                a[m] = true;
            }
            let schedule = Schedule::from_binary(&a);
            let feasible = is_feasible(&schedule, inst);
            finish(schedule, inst, feasible, "closed-form", start)
        }
        None => infeasible_result(inst, "closed-form", start),
    })
}

/// Random baseline: draws uniform role vectors until one is feasible or 1000
/// attempts elapse.
pub fn solve_random(inst: &SchedulingInstance, rng: &mut impl Rng) -> SolverResult {
    let start = Instant::now();
    let n = inst.n();
    for _ in 0..1000 {
        let a: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let schedule = Schedule::from_binary(&a);
        if is_feasible(&schedule, inst) {
            return finish(schedule, inst, true, "random", start);
        }
    }
    infeasible_result(inst, "random", start)
}
