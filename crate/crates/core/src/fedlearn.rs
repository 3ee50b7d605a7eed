//! Desk-scale federated learners: synthetic datasets, convex losses and
//! stochastic gradients, clipping, and the end-to-end training loop over the
//! wireless round.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::ChannelSampler;
use crate::error::{Error, Result};
use crate::ota::{self, GradientVec, UploadEncoding};
use crate::privsec;
use crate::scheduler::{self, SchedulerChoice, SchedulingInstance};
use crate::seeding::{stream_rng, Purpose};
use crate::sysmodel::{Schedule, SystemParams};

/// One device's training data.
#[derive(Debug, Clone)]
pub struct LocalDataset {
    pub samples: Vec<(Vec<f64>, f64)>,
    pub batch_size: usize,
}

impl LocalDataset {
    pub fn new(samples: Vec<(Vec<f64>, f64)>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > samples.len() {
            return Err(Error::LengthMismatch {
                name: "batch_size",
                got: batch_size,
                expected: samples.len(),
            });
        }
        Ok(Self {
            samples,
            batch_size,
        })
    }
}

/// Model parameters plus the round counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub weights: GradientVec,
    pub round: u64,
}

impl ModelState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            round: 0,
        }
    }
}

/// Convex loss family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `l = 1/2 (v - m.u)^2`
    Linreg,
    /// `l = iota/2 |m|^2 + 1/2 max(0, 1 - v m.u)`
    Svm { iota: f64 },
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linreg" => Ok(Self::Linreg),
            "svm" => Ok(Self::Svm { iota: 0.1 }),
            other => Err(Error::ConfigParse(format!(
                "unknown loss '{other}' (expected linreg|svm)"
            ))),
        }
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningSchedule {
    Constant { tau0: f64 },
    /// `tau_t = 2 / (rho t + 2 theta)`
    InverseTime { rho: f64, theta: f64 },
}

impl LearningSchedule {
    pub fn tau(&self, t: u64) -> f64 {
        match self {
            Self::Constant { tau0 } => *tau0,
            Self::InverseTime { rho, theta } => 2.0 / (rho * t as f64 + 2.0 * theta),
        }
    }
}

/// Aggregation mechanism at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorChoice {
    Cwpp,
    Aligned,
    /// No wireless channel: plain equally-weighted average of the clipped
    /// uploader gradients.
    Ideal,
}

impl AggregatorChoice {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cwpp => "cwpp",
            Self::Aligned => "aligned",
            Self::Ideal => "ideal",
        }
    }
}

impl std::str::FromStr for AggregatorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cwpp" => Ok(Self::Cwpp),
            "aligned" => Ok(Self::Aligned),
            "ideal" => Ok(Self::Ideal),
            other => Err(Error::ConfigParse(format!(
                "unknown aggregator '{other}' (expected cwpp|aligned|ideal)"
            ))),
        }
    }
}

/// Loss and gradient averaged over a batch.
pub fn loss_and_gradient(
    model: &ModelState,
    batch: &[(Vec<f64>, f64)],
    loss_kind: &LossKind,
) -> Result<(f64, GradientVec)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = model.weights.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim];
    for (u, v) in batch {
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                name: "feature",
                got: u.len(),
                expected: dim,
            });
        }
        let score: f64 = model.weights.iter().zip(u).map(|(m, x)| m * x).sum();
        match loss_kind {
            LossKind::Linreg => {
                let r = v - score;
                loss += 0.5 * r * r;
                for (g, x) in grad.iter_mut().zip(u) {
                    *g -= r * x;
                }
            }
            LossKind::Svm { iota } => {
                let margin = 1.0 - v * score;
                let reg: f64 = model.weights.iter().map(|m| m * m).sum();
                loss += 0.5 * iota * reg + 0.5 * margin.max(0.0);
                for (i, (g, x)) in grad.iter_mut().zip(u).enumerate() {
                    *g += iota * model.weights[i];
                    // subgradient 0 at the hinge kink
                    if margin > 0.0 {
                        *g -= 0.5 * v * x;
                    }
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    Ok((loss, grad))
}

/// Projects onto the L2 ball of radius `grad_bound`.
pub fn clip_gradient(g: &[f64], grad_bound: f64) -> GradientVec {
    let norm = ota::l2_norm(g);
    if norm <= grad_bound || norm == 0.0 {
        g.to_vec()
    } else {
        let s = grad_bound / norm;
        g.iter().map(|x| s * x).collect()
    }
}

/// SGD step `m' = m - tau g_agg`, incrementing the round counter.
pub fn global_update(m: &ModelState, tau: f64, g_agg: &[f64]) -> Result<ModelState> {
    if g_agg.len() != m.weights.len() {
        return Err(Error::DimensionMismatch {
            name: "g_agg",
            got: g_agg.len(),
            expected: m.weights.len(),
        });
    }
    Ok(ModelState {
        weights: m
            .weights
            .iter()
            .zip(g_agg)
            .map(|(w, g)| w - tau * g)
            .collect(),
        round: m.round + 1,
    })
}

/// Global loss `(1/N) sum_n L_n(m)` over the full datasets.
pub fn global_loss(model: &ModelState, datasets: &[LocalDataset], loss_kind: &LossKind) -> f64 {
    let mut acc = 0.0;
    for ds in datasets {
        let (l, _) = loss_and_gradient(model, &ds.samples, loss_kind).expect("nonempty dataset");
        acc += l;
    }
    acc / datasets.len() as f64
}

/// Synthetic per-device datasets: standard-normal features, labels from a
/// planted linear model perturbed per device by `heterogeneity`, plus
/// Gaussian label noise. SVM labels are the sign of the linear response.
#[allow(clippy::too_many_arguments)]
pub fn generate_datasets(
    seed: u64,
    n_devices: usize,
    dim: usize,
    samples_per_device: usize,
    batch_size: usize,
    heterogeneity: f64,
    label_noise: f64,
    loss_kind: &LossKind,
) -> Result<Vec<LocalDataset>> {
    let mut base_rng = stream_rng(seed, 0, u64::MAX, Purpose::DataGen);
    let base: Vec<f64> = (0..dim)
        .map(|_| base_rng.sample::<f64, _>(StandardNormal))
        .collect();
    (0..n_devices)
        .map(|n| {
            let mut rng = stream_rng(seed, 0, n as u64, Purpose::DataGen);
            let planted: Vec<f64> = base
                .iter()
                .map(|b| b + heterogeneity * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let samples = (0..samples_per_device)
                .map(|_| {
                    let u: Vec<f64> = (0..dim)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let response: f64 = u.iter().zip(&planted).map(|(x, w)| x * w).sum::<f64>()
                        + label_noise * rng.sample::<f64, _>(StandardNormal);
                    let v = match loss_kind {
                        LossKind::Linreg => response,
                        LossKind::Svm { .. } => {
                            if response >= 0.0 {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                    };
                    (u, v)
                })
                .collect();
            LocalDataset::new(samples, batch_size)
        })
        .collect()
}

/// One recorded state/round of a training run. Row 0 is the initial state;
/// row `t >= 1` is the state after round `t` together with that round's
/// schedule metrics. A skipped round (no uploaders) keeps the model and
/// records `psi = +inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: u64,
    pub loss: f64,
    pub gap_sq: f64,
    pub psi: f64,
    pub gamma_e: f64,
    pub max_epsilon: f64,
    pub n_uploaders: usize,
    pub n_jammers: usize,
}

/// Full record of one training run.
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    pub scheduler: SchedulerChoice,
    pub aggregator: AggregatorChoice,
    pub seed: u64,
    pub final_model: ModelState,
}

impl TrainingTrace {
    pub fn final_gap(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.gap_sq)
    }

    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Stable CSV rendering: fixed column order, header, newline-terminated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "round,loss,gap_sq,psi,gamma_e,max_epsilon,n_uploaders,n_jammers,scheduler,aggregator,seed\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.loss,
                r.gap_sq,
                r.psi,
                r.gamma_e,
                r.max_epsilon,
                r.n_uploaders,
                r.n_jammers,
                self.scheduler.name(),
                self.aggregator.name(),
                self.seed,
            ));
        }
        out
    }
}

/// Everything a training run needs besides its seed.
pub struct TrainingSetup<'a> {
    pub params: &'a SystemParams,
    pub channel: &'a dyn ChannelSampler,
    pub datasets: &'a [LocalDataset],
    pub loss_kind: LossKind,
    pub schedule: LearningSchedule,
    pub scheduler: SchedulerChoice,
    pub aggregator: AggregatorChoice,
    pub rounds: u64,
    /// Known global optimum for gap tracking, when available.
    pub m_star: Option<GradientVec>,
    pub init: GradientVec,
    /// Aligned baseline: use the raw channel-power product `min(h P)` as the
    /// alignment coefficient instead of `min(h sqrt(P))`.
    pub aligned_verbatim: bool,
    /// Enforce the stronger security constraint with N in place of the
    /// uploader count.
    pub security_count_as_n: bool,
}

fn gap_sq(weights: &[f64], m_star: &Option<GradientVec>) -> f64 {
    match m_star {
        Some(m) => weights
            .iter()
            .zip(m)
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
        None => f64::NAN,
    }
}

/// Runs the four-step FL round for `rounds` iterations: broadcast, local
/// stochastic gradients with clipping, device scheduling on fresh channels,
/// over-the-air aggregation, and the global model update.
pub fn run_training(setup: &TrainingSetup, seed: u64) -> Result<TrainingTrace> {
    let params = setup.params;
    params.validate()?;
    if setup.datasets.len() != params.n_devices {
        return Err(Error::LengthMismatch {
            name: "datasets",
            got: setup.datasets.len(),
            expected: params.n_devices,
        });
    }
    if setup.init.len() != params.model_dim {
        return Err(Error::DimensionMismatch {
            name: "init",
            got: setup.init.len(),
            expected: params.model_dim,
        });
    }
    let mut model = ModelState {
        weights: setup.init.clone(),
        round: 0,
    };
    let mut rows = Vec::with_capacity(setup.rounds as usize + 1);
    rows.push(TraceRow {
        round: 0,
        loss: global_loss(&model, setup.datasets, &setup.loss_kind),
        gap_sq: gap_sq(&model.weights, &setup.m_star),
        psi: f64::NAN,
        gamma_e: f64::NAN,
        max_epsilon: f64::NAN,
        n_uploaders: 0,
        n_jammers: 0,
    });

    for t in 0..setup.rounds {
        let devices = setup.channel.sample_round(params, t);
        let instance = SchedulingInstance::new(devices, params.clone())?
            .with_security_count_as_n(setup.security_count_as_n);
        let schedule = select_schedule(setup.scheduler, &instance, seed, t)?;
        let tau = setup.schedule.tau(t);
        let row = match schedule {
            None => {
                // no uploaders this round: model unchanged
                TraceRow {
                    round: t + 1,
                    loss: rows.last().unwrap().loss,
                    gap_sq: rows.last().unwrap().gap_sq,
                    psi: f64::INFINITY,
                    gamma_e: f64::NAN,
                    max_epsilon: f64::NAN,
                    n_uploaders: 0,
                    n_jammers: 0,
                }
            }
            Some(schedule) => {
                let g_agg = run_round(setup, &schedule, &instance, &model, seed, t)?;
                model = global_update(&model, tau, &g_agg)?;
                let metrics = scheduler::compute_metrics(&schedule, &instance);
                let gamma_e =
                    privsec::security_coefficient(&schedule, &instance.devices, params)
                        .unwrap_or(f64::NAN);
                let max_eps = privsec::privacy_report(&schedule, &instance.devices, params)?
                    .max_epsilon()
                    .unwrap_or(f64::NAN);
                TraceRow {
                    round: t + 1,
                    loss: global_loss(&model, setup.datasets, &setup.loss_kind),
                    gap_sq: gap_sq(&model.weights, &setup.m_star),
                    psi: metrics.psi,
                    gamma_e,
                    max_epsilon: max_eps,
                    n_uploaders: metrics.uploader_count,
                    n_jammers: metrics.jammer_count,
                }
            }
        };
        rows.push(row);
    }
    Ok(TrainingTrace {
        rows,
        scheduler: setup.scheduler,
        aggregator: setup.aggregator,
        seed,
        final_model: model,
    })
}

/// Resolves the per-round schedule; `None` means the round is skipped.
fn select_schedule(
    choice: SchedulerChoice,
    instance: &SchedulingInstance,
    seed: u64,
    round: u64,
) -> Result<Option<Schedule>> {
    let n = instance.devices.len();
    match choice {
        SchedulerChoice::Full => Ok(Some(Schedule::all_uploaders(n))),
        SchedulerChoice::Policy1 => match scheduler::policy1_select_auto(instance) {
            Ok(s) => Ok(Some(s)),
            Err(Error::EmptySelection) => Ok(None),
            Err(e) => Err(e),
        },
        SchedulerChoice::Spa => {
            let r = scheduler::solve_spa(instance);
            Ok(r.feasible.then_some(r.schedule))
        }
        SchedulerChoice::Esm => {
            let r = scheduler::solve_esm(instance)?;
            Ok(r.feasible.then_some(r.schedule))
        }
        SchedulerChoice::ClosedForm => match scheduler::solve_closed_form_highdim(instance) {
            Ok(r) => Ok(r.feasible.then_some(r.schedule)),
            Err(Error::NoFeasibleUploader) => Ok(None),
            Err(e) => Err(e),
        },
        SchedulerChoice::Random => {
            let mut rng = stream_rng(seed, round, 0, Purpose::SchedulerDraw);
            let r = scheduler::solve_random(instance, &mut rng);
            Ok(r.feasible.then_some(r.schedule))
        }
    }
}

/// Local training, transmission and aggregation for one scheduled round.
fn run_round(
    setup: &TrainingSetup,
    schedule: &Schedule,
    instance: &SchedulingInstance,
    model: &ModelState,
    seed: u64,
    t: u64,
) -> Result<GradientVec> {
    let params = setup.params;
    let mut gradients: BTreeMap<usize, GradientVec> = BTreeMap::new();
    for n in schedule.uploaders() {
        let ds = &setup.datasets[n];
        let mut rng = stream_rng(seed, t, n as u64, Purpose::Batch);
        let idx = rand::seq::index::sample(&mut rng, ds.samples.len(), ds.batch_size);
        let batch: Vec<(Vec<f64>, f64)> = idx.iter().map(|i| ds.samples[i].clone()).collect();
        let (_, g) = loss_and_gradient(model, &batch, &setup.loss_kind)?;
        gradients.insert(n, clip_gradient(&g, params.grad_bound));
    }

    match setup.aggregator {
        AggregatorChoice::Ideal => {
            let count = gradients.len() as f64;
            let mut mean = vec![0.0; params.model_dim];
            for g in gradients.values() {
                for (m, x) in mean.iter_mut().zip(g) {
                    *m += x / count;
                }
            }
            Ok(mean)
        }
        AggregatorChoice::Cwpp => {
            let signals = ota::transmit_round(
                &gradients,
                schedule,
                &instance.devices,
                params,
                UploadEncoding::Cwpp,
                seed,
                t,
            )?;
            ota::cwpp_aggregate(&signals.y_bs, schedule, &instance.devices, params.grad_bound)
        }
        AggregatorChoice::Aligned => {
            let signals = ota::transmit_round(
                &gradients,
                schedule,
                &instance.devices,
                params,
                UploadEncoding::Aligned {
                    verbatim: setup.aligned_verbatim,
                },
                seed,
                t,
            )?;
            ota::aligned_aggregate(
                &signals.y_bs,
                schedule,
                &instance.devices,
                params.grad_bound,
                setup.aligned_verbatim,
            )
        }
    }
}
