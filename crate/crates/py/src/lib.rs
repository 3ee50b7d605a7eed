//! Python bindings: system parameters, channel sampling, the privacy and
//! security formulas, the Policy-2 solvers, and the experiment runner.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use airfed_core::channel::{ChannelModel as CoreChannel, ChannelSampler};
use airfed_core::cli::{load_config, run_experiment, Overrides};
use airfed_core::fedlearn::AggregatorChoice;
use airfed_core::privsec;
use airfed_core::scheduler::{self, SchedulerChoice, SchedulingInstance};
use airfed_core::seeding::{stream_rng, Purpose};
use airfed_core::sysmodel::{DeviceRound, Role, Schedule, SystemParams as CoreParams};

fn err(e: airfed_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Validated system parameters.
#[pyclass(name = "SystemParams", skip_from_py_object)]
#[derive(Clone)]
struct PySystemParams {
    inner: CoreParams,
}

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (n_devices, model_dim, grad_bound, sigma_b, sigma_e, power_budget,
                        epsilon, zeta, upsilon, grad_range_lo=-1.0, grad_range_hi=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_devices: usize,
        model_dim: usize,
        grad_bound: f64,
        sigma_b: f64,
        sigma_e: f64,
        power_budget: f64,
        epsilon: f64,
        zeta: f64,
        upsilon: f64,
        grad_range_lo: f64,
        grad_range_hi: f64,
    ) -> PyResult<Self> {
        let inner = CoreParams {
            n_devices,
            model_dim,
            grad_bound,
            sigma_b,
            sigma_e,
            power_budgets: vec![power_budget; n_devices],
            epsilon,
            zeta,
            upsilon,
            grad_range_lo,
            grad_range_hi,
        }
        .validated()
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_devices(&self) -> usize {
        self.inner.n_devices
    }

    #[getter]
    fn model_dim(&self) -> usize {
        self.inner.model_dim
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemParams(n_devices={}, model_dim={}, epsilon={}, upsilon={})",
            self.inner.n_devices, self.inner.model_dim, self.inner.epsilon, self.inner.upsilon
        )
    }
}

/// Rayleigh block-fading channel.
#[pyclass(name = "ChannelModel", skip_from_py_object)]
#[derive(Clone)]
struct PyChannelModel {
    inner: CoreChannel,
}

#[pymethods]
impl PyChannelModel {
    #[new]
    fn new(scale_b: f64, scale_e: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreChannel::new(scale_b, scale_e, seed).map_err(err)?,
        })
    }

    /// One round of `(h_b, h_e, p_b, p_e)` tuples, one per device.
    fn sample_round(
        &self,
        params: &PySystemParams,
        round_index: u64,
    ) -> Vec<(f64, f64, f64, f64)> {
        self.inner
            .sample_round(&params.inner, round_index)
            .into_iter()
            .map(|d| (d.h_b, d.h_e, d.p_b, d.p_e))
            .collect()
    }
}

/// Schedule returned by a solver.
#[pyclass(name = "SolveOutcome")]
struct PySolveOutcome {
    /// "uploader" / "jammer" per device.
    #[pyo3(get)]
    roles: Vec<String>,
    #[pyo3(get)]
    psi: f64,
    #[pyo3(get)]
    feasible: bool,
    #[pyo3(get)]
    solver: String,
    #[pyo3(get)]
    uploader_count: usize,
}

#[pymethods]
impl PySolveOutcome {
    fn __repr__(&self) -> String {
        format!(
            "SolveOutcome(solver='{}', psi={}, feasible={}, uploaders={})",
            self.solver, self.psi, self.feasible, self.uploader_count
        )
    }
}

fn outcome(r: scheduler::SolverResult) -> PySolveOutcome {
    PySolveOutcome {
        roles: r
            .schedule
            .roles
            .iter()
            .map(|role| {
                match role {
                    Role::Uploader => "uploader",
                    Role::Jammer => "jammer",
                    Role::Offline => "offline",
                }
                .to_string()
            })
            .collect(),
        psi: r.metrics.psi,
        feasible: r.feasible,
        solver: r.solver_name.to_string(),
        uploader_count: r.metrics.uploader_count,
    }
}

fn instance_of(
    h_b: Vec<f64>,
    h_e: Vec<f64>,
    params: &PySystemParams,
) -> PyResult<SchedulingInstance> {
    if h_b.len() != params.inner.n_devices || h_e.len() != params.inner.n_devices {
        return Err(PyValueError::new_err(format!(
            "expected {} channel gains, got {} / {}",
            params.inner.n_devices,
            h_b.len(),
            h_e.len()
        )));
    }
    let devices = h_b
        .iter()
        .zip(&h_e)
        .zip(&params.inner.power_budgets)
        .map(|((&b, &e), &p)| DeviceRound::new(b, e, p))
        .collect::<airfed_core::Result<Vec<_>>>()
        .map_err(err)?;
    SchedulingInstance::new(devices, params.inner.clone()).map_err(err)
}

/// `kappa = sqrt(2 ln(1.25 / zeta))`.
#[pyfunction]
fn kappa(zeta: f64) -> PyResult<f64> {
    privsec::kappa(zeta).map_err(err)
}

/// MMSE of a Uniform(0, t) variable observed through unit Gaussian noise.
#[pyfunction]
fn xi(t: f64) -> PyResult<f64> {
    privsec::xi(t).map_err(err)
}

/// MSE-security floor `gamma_e * Xi((hi - lo) / sqrt(gamma_e))`.
#[pyfunction]
fn mse_security_floor(gamma_e: f64, lo: f64, hi: f64) -> PyResult<f64> {
    privsec::mse_security_floor(gamma_e, lo, hi).map_err(err)
}

/// Channel-power threshold below which channel noise alone protects both
/// privacy and security.
#[pyfunction]
fn critical_point(params: &PySystemParams) -> PyResult<f64> {
    privsec::critical_point(&params.inner).map_err(err)
}

/// Scheduling objective of an uploader/jammer assignment.
#[pyfunction]
fn psi_objective(
    uploads: Vec<bool>,
    h_b: Vec<f64>,
    h_e: Vec<f64>,
    params: &PySystemParams,
) -> PyResult<f64> {
    let inst = instance_of(h_b, h_e, params)?;
    scheduler::psi_objective(&Schedule::from_binary(&uploads), &inst).map_err(err)
}

/// BnB-based sequential-promotion solver.
#[pyfunction]
fn solve_spa(h_b: Vec<f64>, h_e: Vec<f64>, params: &PySystemParams) -> PyResult<PySolveOutcome> {
    Ok(outcome(scheduler::solve_spa(&instance_of(h_b, h_e, params)?)))
}

/// Exhaustive-search oracle (N <= 20).
#[pyfunction]
fn solve_esm(h_b: Vec<f64>, h_e: Vec<f64>, params: &PySystemParams) -> PyResult<PySolveOutcome> {
    scheduler::solve_esm(&instance_of(h_b, h_e, params)?)
        .map(outcome)
        .map_err(err)
}

/// High-dimension closed-form solver.
#[pyfunction]
fn solve_closed_form(
    h_b: Vec<f64>,
    h_e: Vec<f64>,
    params: &PySystemParams,
) -> PyResult<PySolveOutcome> {
    scheduler::solve_closed_form_highdim(&instance_of(h_b, h_e, params)?)
        .map(outcome)
        .map_err(err)
}

/// Random feasible-schedule baseline.
#[pyfunction]
fn solve_random(
    h_b: Vec<f64>,
    h_e: Vec<f64>,
    params: &PySystemParams,
    seed: u64,
) -> PyResult<PySolveOutcome> {
    let inst = instance_of(h_b, h_e, params)?;
    let mut rng = stream_rng(seed, 0, 0, Purpose::SchedulerDraw);
    Ok(outcome(scheduler::solve_random(&inst, &mut rng)))
}

/// Runs a configured experiment, returning the written artifact paths.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, scheduler=None, aggregator=None, seed=None, replicates=None))]
fn run(
    config_path: &str,
    out_dir: Option<&str>,
    scheduler: Option<&str>,
    aggregator: Option<&str>,
    seed: Option<u64>,
    replicates: Option<usize>,
) -> PyResult<Vec<String>> {
    let overrides = Overrides {
        seed,
        scheduler: scheduler
            .map(SchedulerChoice::from_str)
            .transpose()
            .map_err(err)?,
        aggregator: aggregator
            .map(AggregatorChoice::from_str)
            .transpose()
            .map_err(err)?,
        replicates,
        out: out_dir.map(PathBuf::from),
    };
    let cfg = load_config(Path::new(config_path), &overrides).map_err(err)?;
    let files = run_experiment(&cfg).map_err(err)?;
    Ok(files
        .into_iter()
        .map(|p| p.display().to_string())
        .collect())
}

#[pymodule]
fn airfed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemParams>()?;
    m.add_class::<PyChannelModel>()?;
    m.add_class::<PySolveOutcome>()?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    m.add_function(wrap_pyfunction!(xi, m)?)?;
    m.add_function(wrap_pyfunction!(mse_security_floor, m)?)?;
    m.add_function(wrap_pyfunction!(critical_point, m)?)?;
    m.add_function(wrap_pyfunction!(psi_objective, m)?)?;
    m.add_function(wrap_pyfunction!(solve_spa, m)?)?;
    m.add_function(wrap_pyfunction!(solve_esm, m)?)?;
    m.add_function(wrap_pyfunction!(solve_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(solve_random, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
