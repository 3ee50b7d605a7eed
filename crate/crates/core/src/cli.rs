//! Experiment runner: configuration files, replicated runs with CSV
//! artifacts, solver comparison, and the bound-validation harness.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::analysis::{self, BoundReport};
use crate::channel::{ChannelModel, ChannelSampler};
use crate::error::{Error, Result};
use crate::fedlearn::{
    generate_datasets, run_training, AggregatorChoice, LearningSchedule, LossKind, TrainingSetup,
    TrainingTrace,
};
use crate::privsec;
use crate::scheduler::{self, SchedulerChoice, SchedulingInstance, ESM_MAX_DEVICES};
use crate::seeding::split_seed;
use crate::sysmodel::SystemParams;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    privacy: RawPrivacy,
    security: RawSecurity,
    learning: RawLearning,
    experiment: RawExperiment,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n_devices: usize,
    model_dim: usize,
    grad_bound: f64,
    sigma_b: f64,
    sigma_e: f64,
    /// Uniform per-device power budget; `power_budgets` overrides it.
    power_budget: Option<f64>,
    power_budgets: Option<Vec<f64>>,
    scale_b: f64,
    scale_e: f64,
    channel_seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrivacy {
    epsilon: f64,
    zeta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSecurity {
    upsilon: f64,
    grad_range_lo: f64,
    grad_range_hi: f64,
    /// Enforce the stronger constraint with N in place of the uploader count.
    count_as_n: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLearning {
    loss: String,
    svm_iota: Option<f64>,
    rounds: u64,
    batch_size: usize,
    samples_per_device: usize,
    heterogeneity: f64,
    label_noise: f64,
    data_seed: u64,
    rate_mode: String,
    tau0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    scheduler: String,
    aggregator: String,
    replicates: usize,
    master_seed: u64,
    output_dir: String,
    instances: Option<usize>,
    aligned_verbatim: Option<bool>,
}

/// Learning-rate selection from the config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateMode {
    Constant { tau0: f64 },
    /// `tau_t = 2 / (rho t + 2 theta)` with constants estimated from data.
    InverseTime,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub channel: ChannelModel,
    pub loss_kind: LossKind,
    pub rounds: u64,
    pub batch_size: usize,
    pub samples_per_device: usize,
    pub heterogeneity: f64,
    pub label_noise: f64,
    pub data_seed: u64,
    pub rate: RateMode,
    pub scheduler: SchedulerChoice,
    pub aggregator: AggregatorChoice,
    pub replicates: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub instances: usize,
    pub aligned_verbatim: bool,
    pub security_count_as_n: bool,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scheduler: Option<SchedulerChoice>,
    pub aggregator: Option<AggregatorChoice>,
    pub replicates: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Parses and validates a config file, applying any overrides.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;

    let power_budgets = match (&raw.system.power_budgets, raw.system.power_budget) {
        (Some(list), _) => list.clone(),
        (None, Some(p)) => vec![p; raw.system.n_devices],
        (None, None) => {
            return Err(Error::ConfigParse(
                "system.power_budget or system.power_budgets is required".into(),
            ))
        }
    };
    let system = SystemParams {
        n_devices: raw.system.n_devices,
        model_dim: raw.system.model_dim,
        grad_bound: raw.system.grad_bound,
        sigma_b: raw.system.sigma_b,
        sigma_e: raw.system.sigma_e,
        power_budgets,
        epsilon: raw.privacy.epsilon,
        zeta: raw.privacy.zeta,
        upsilon: raw.security.upsilon,
        grad_range_lo: raw.security.grad_range_lo,
        grad_range_hi: raw.security.grad_range_hi,
    }
    .validated()?;
    let channel = ChannelModel::new(raw.system.scale_b, raw.system.scale_e, raw.system.channel_seed)?;

    let mut loss_kind = LossKind::from_str(&raw.learning.loss)?;
    if let (LossKind::Svm { .. }, Some(iota)) = (&loss_kind, raw.learning.svm_iota) {
        loss_kind = LossKind::Svm { iota };
    }
    let rate = match raw.learning.rate_mode.as_str() {
        "inverse-time" => RateMode::InverseTime,
        "constant" => RateMode::Constant {
            tau0: raw.learning.tau0.ok_or_else(|| {
                Error::ConfigParse("learning.tau0 is required for rate_mode = \"constant\"".into())
            })?,
        },
        other => {
            return Err(Error::ConfigParse(format!(
                "unknown learning.rate_mode '{other}' (expected constant|inverse-time)"
            )))
        }
    };
    if raw.learning.batch_size == 0 || raw.learning.batch_size > raw.learning.samples_per_device {
        return Err(Error::ConfigParse(format!(
            "learning.batch_size must lie in [1, samples_per_device], got {}",
            raw.learning.batch_size
        )));
    }
    if raw.experiment.replicates == 0 {
        return Err(Error::ConfigParse("experiment.replicates must be >= 1".into()));
    }

    let mut cfg = ExperimentConfig {
        system,
        channel,
        loss_kind,
        rounds: raw.learning.rounds,
        batch_size: raw.learning.batch_size,
        samples_per_device: raw.learning.samples_per_device,
        heterogeneity: raw.learning.heterogeneity,
        label_noise: raw.learning.label_noise,
        data_seed: raw.learning.data_seed,
        rate,
        scheduler: SchedulerChoice::from_str(&raw.experiment.scheduler)?,
        aggregator: AggregatorChoice::from_str(&raw.experiment.aggregator)?,
        replicates: raw.experiment.replicates,
        master_seed: raw.experiment.master_seed,
        output_dir: PathBuf::from(raw.experiment.output_dir),
        instances: raw.experiment.instances.unwrap_or(20),
        aligned_verbatim: raw.experiment.aligned_verbatim.unwrap_or(false),
        security_count_as_n: raw.security.count_as_n.unwrap_or(false),
    };
    if let Some(seed) = overrides.seed {
        cfg.master_seed = seed;
    }
    if let Some(s) = overrides.scheduler {
        cfg.scheduler = s;
    }
    if let Some(a) = overrides.aggregator {
        cfg.aggregator = a;
    }
    if let Some(r) = overrides.replicates {
        if r == 0 {
            return Err(Error::ConfigParse("--replicates must be >= 1".into()));
        }
        cfg.replicates = r;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Runs every replicate of the configured training experiment.
pub fn run_replicates(cfg: &ExperimentConfig) -> Result<Vec<TrainingTrace>> {
    if cfg.scheduler == SchedulerChoice::Esm && cfg.system.n_devices > ESM_MAX_DEVICES {
        return Err(Error::ConfigParse(format!(
            "scheduler 'esm' enumerates 2^N schedules and supports at most {ESM_MAX_DEVICES} \
             devices (got {}); use 'spa' instead",
            cfg.system.n_devices
        )));
    }
    let datasets = generate_datasets(
        cfg.data_seed,
        cfg.system.n_devices,
        cfg.system.model_dim,
        cfg.samples_per_device,
        cfg.batch_size,
        cfg.heterogeneity,
        cfg.label_noise,
        &cfg.loss_kind,
    )?;
    let est = analysis::estimate_convex_params(&datasets, &cfg.loss_kind)?;
    let schedule = match cfg.rate {
        RateMode::Constant { tau0 } => LearningSchedule::Constant { tau0 },
        RateMode::InverseTime => LearningSchedule::InverseTime {
            rho: est.rho,
            theta: est.theta,
        },
    };
    let traces: Result<Vec<(usize, TrainingTrace)>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let channel = cfg
                .channel
                .with_seed(split_seed(cfg.channel.seed, rep as u64));
            let setup = TrainingSetup {
                params: &cfg.system,
                channel: &channel,
                datasets: &datasets,
                loss_kind: cfg.loss_kind,
                schedule,
                scheduler: cfg.scheduler,
                aggregator: cfg.aggregator,
                rounds: cfg.rounds,
                m_star: Some(est.m_star.clone()),
                init: vec![0.0; cfg.system.model_dim],
                aligned_verbatim: cfg.aligned_verbatim,
                security_count_as_n: cfg.security_count_as_n,
            };
            let seed = split_seed(cfg.master_seed, rep as u64);
            run_training(&setup, seed).map(|t| (rep, t))
        })
        .collect();
    let mut traces = traces?;
    traces.sort_by_key(|(rep, _)| *rep);
    Ok(traces.into_iter().map(|(_, t)| t).collect())
}

fn bound_report_if_applicable(
    cfg: &ExperimentConfig,
    traces: &[TrainingTrace],
) -> Result<Option<BoundReport>> {
    if cfg.rate != RateMode::InverseTime || !matches!(cfg.loss_kind, LossKind::Linreg) {
        return Ok(None);
    }
    let datasets = generate_datasets(
        cfg.data_seed,
        cfg.system.n_devices,
        cfg.system.model_dim,
        cfg.samples_per_device,
        cfg.batch_size,
        cfg.heterogeneity,
        cfg.label_noise,
        &cfg.loss_kind,
    )?;
    let est = analysis::estimate_convex_params(&datasets, &cfg.loss_kind)?;
    let cp = est.convergence_params(cfg.rounds);
    analysis::validate_bound(traces, &cp, cfg.system.grad_bound).map(Some)
}

/// Runs the experiment and writes per-replicate traces, a bound report when
/// the run supports one, and `summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let traces = run_replicates(cfg)?;
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::ConfigParse(format!("cannot create output dir: {e}")))?;
    let mut written = Vec::new();
    for (rep, trace) in traces.iter().enumerate() {
        let path = cfg.output_dir.join(format!("trace_rep{rep:03}.csv"));
        fs::write(&path, trace.to_csv())
            .map_err(|e| Error::ConfigParse(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    if let Some(report) = bound_report_if_applicable(cfg, &traces)? {
        let path = cfg.output_dir.join("bound_report.csv");
        fs::write(&path, report.to_csv())
            .map_err(|e| Error::ConfigParse(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    let path = cfg.output_dir.join("summary.csv");
    fs::write(&path, summary_csv(cfg, &traces))
        .map_err(|e| Error::ConfigParse(format!("cannot write {}: {e}", path.display())))?;
    written.push(path);
    Ok(written)
}

fn summary_csv(cfg: &ExperimentConfig, traces: &[TrainingTrace]) -> String {
    let reps = traces.len() as f64;
    let final_loss = traces.iter().map(TrainingTrace::final_loss).sum::<f64>() / reps;
    let final_gap = traces.iter().map(TrainingTrace::final_gap).sum::<f64>() / reps;
    let mut psi_sum = 0.0;
    let mut psi_count = 0usize;
    let mut max_eps = f64::NAN;
    let mut min_gamma = f64::NAN;
    for trace in traces {
        for row in &trace.rows[1..] {
            if row.psi.is_finite() {
                psi_sum += row.psi;
                psi_count += 1;
            }
            if row.max_epsilon.is_finite() && !(row.max_epsilon <= max_eps) {
                max_eps = row.max_epsilon;
            }
            if row.gamma_e.is_finite() && !(row.gamma_e >= min_gamma) {
                min_gamma = row.gamma_e;
            }
        }
    }
    let mean_psi = if psi_count > 0 {
        psi_sum / psi_count as f64
    } else {
        f64::NAN
    };
    let mut out = String::from(
        "scheduler,aggregator,replicates,master_seed,final_loss,final_gap,mean_psi,max_epsilon,min_gamma_e\n",
    );
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{}\n",
        cfg.scheduler.name(),
        cfg.aggregator.name(),
        traces.len(),
        cfg.master_seed,
        final_loss,
        final_gap,
        mean_psi,
        max_eps,
        min_gamma,
    ));
    out
}

/// Solves freshly sampled instances with every applicable solver and writes
/// one CSV row per (instance, solver). ESM joins only when N fits its cap.
/// Timing columns vary between invocations; the schedule columns do not.
pub fn compare_solvers(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut out = String::from("instance,solver,psi,feasible,elapsed_us\n");
    for i in 0..cfg.instances {
        let devices = cfg.channel.sample_round(&cfg.system, i as u64);
        let inst = SchedulingInstance::new(devices, cfg.system.clone())?
            .with_security_count_as_n(cfg.security_count_as_n);
        let mut results = Vec::new();
        results.push(scheduler::solve_spa(&inst));
        match scheduler::solve_closed_form_highdim(&inst) {
            Ok(r) => results.push(r),
            Err(Error::NoFeasibleUploader) => {}
            Err(e) => return Err(e),
        }
        let mut rng = crate::seeding::stream_rng(
            cfg.master_seed,
            i as u64,
            0,
            crate::seeding::Purpose::SchedulerDraw,
        );
        results.push(scheduler::solve_random(&inst, &mut rng));
        if cfg.system.n_devices <= ESM_MAX_DEVICES {
            results.push(scheduler::solve_esm(&inst)?);
        }
        for r in results {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                r.solver_name,
                r.metrics.psi,
                r.feasible,
                r.elapsed.as_micros(),
            ));
        }
    }
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::ConfigParse(format!("cannot create output dir: {e}")))?;
    let path = cfg.output_dir.join("solvers.csv");
    fs::write(&path, out)
        .map_err(|e| Error::ConfigParse(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Runs the experiment and validates the convergence bound against it,
/// writing `bound_report.csv`.
pub fn validate_bound_cmd(cfg: &ExperimentConfig) -> Result<BoundReport> {
    if cfg.rate != RateMode::InverseTime || !matches!(cfg.loss_kind, LossKind::Linreg) {
        return Err(Error::ConfigParse(
            "validate-bound needs loss = \"linreg\" and rate_mode = \"inverse-time\"".into(),
        ));
    }
    let traces = run_replicates(cfg)?;
    let report = bound_report_if_applicable(cfg, &traces)?.expect("preconditions checked");
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::ConfigParse(format!("cannot create output dir: {e}")))?;
    let path = cfg.output_dir.join("bound_report.csv");
    fs::write(&path, report.to_csv())
        .map_err(|e| Error::ConfigParse(format!("cannot write {}: {e}", path.display())))?;
    Ok(report)
}

/// CSV table of Xi over a uniform grid.
pub fn xi_table(t_max: f64, t_step: f64) -> Result<String> {
    if !(t_step > 0.0) || !(t_max >= 0.0) {
        return Err(Error::ConfigParse(
            "xi-table needs t_max >= 0 and t_step > 0".into(),
        ));
    }
    let mut out = String::from("t,xi\n");
    let steps = (t_max / t_step).round() as usize;
    for i in 0..=steps {
        let t = i as f64 * t_step;
        out.push_str(&format!("{},{}\n", t, privsec::xi(t)?));
    }
    Ok(out)
}
