//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measurements (visible with `--nocapture`).

use std::time::Instant;

use airfed_core::analysis::{self};
use airfed_core::channel::{ChannelModel, ChannelSampler, FixedChannel};
use airfed_core::fedlearn::{
    self, generate_datasets, loss_and_gradient, AggregatorChoice, LearningSchedule, LossKind,
    ModelState, TrainingSetup,
};
use airfed_core::ota;
use airfed_core::privsec;
use airfed_core::scheduler::{
    self, check_privacy_constraint, check_security_constraint, SchedulerChoice, SchedulingInstance,
};
use airfed_core::seeding::{split_seed, stream_rng, Purpose};
use airfed_core::sysmodel::{DeviceRound, Role, Schedule, SystemParams};
use rand::Rng;

fn paper_like_params(n: usize, model_dim: usize) -> SystemParams {
    SystemParams {
        n_devices: n,
        model_dim,
        grad_bound: 10.0,
        sigma_b: 1.0,
        sigma_e: 1.0,
        power_budgets: vec![5.0; n],
        epsilon: 12.0,
        zeta: 0.05,
        upsilon: 1.5,
        grad_range_lo: -1.0,
        grad_range_hi: 1.0,
    }
    .validated()
    .unwrap()
}

fn rayleigh_instance(params: &SystemParams, seed: u64, round: u64) -> SchedulingInstance {
    let channel = ChannelModel::new(1.0, 1.0, seed).unwrap();
    let devices = channel.sample_round(params, round);
    SchedulingInstance::new(devices, params.clone()).unwrap()
}

#[test]
fn c01_solver_optimality_spa_equals_esm() {
    let start = Instant::now();
    let mut equal = 0usize;
    let mut worst_ratio = 1.0f64;
    let total = 200;
    let mut rng = stream_rng(101, 0, 0, Purpose::SchedulerDraw);
    for i in 0..total {
        let n = 4 + (rng.random::<u64>() % 9) as usize; // N in [4, 12]
        let params = paper_like_params(n, 21840);
        let inst = rayleigh_instance(&params, 9000 + i as u64, i as u64);
        let esm = scheduler::solve_esm(&inst).unwrap();
        let spa = scheduler::solve_spa(&inst);
        if !esm.feasible {
            assert!(!spa.feasible, "instance {i}: SPA feasible where ESM is not");
            equal += 1;
            continue;
        }
        assert!(spa.feasible, "instance {i}: SPA infeasible where ESM is not");
        let ratio = spa.metrics.psi / esm.metrics.psi;
        assert!(
            ratio <= 1.05 + 1e-12,
            "instance {i}: psi ratio {ratio} above 1.05"
        );
        if (spa.metrics.psi - esm.metrics.psi).abs() <= 1e-9 {
            equal += 1;
        } else {
            worst_ratio = worst_ratio.max(ratio);
            println!(
                "instance {i}: SPA {} vs ESM {} on p_b {:?}",
                spa.metrics.psi,
                esm.metrics.psi,
                inst.devices.iter().map(|d| d.p_b).collect::<Vec<_>>()
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(
        equal as f64 >= 0.95 * total as f64,
        "SPA matched ESM on only {equal}/{total}"
    );
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "criterion 1 (solver optimality): PASS - {equal}/{total} exact, worst ratio {worst_ratio:.6}, {elapsed:?}"
    );
}

/// Brute-force optimum of the high-dimension problem: maximize the uploaded
/// p_b sum subject to the per-device privacy test and the security cap.
fn brute_force_p2(inst: &SchedulingInstance) -> Option<(f64, Vec<bool>)> {
    let n = inst.devices.len();
    let threshold = inst.params.epsilon * inst.params.sigma_b.sqrt() / (2.0 * inst.kappa);
    let budget = inst.params.grad_bound * inst.params.sigma_e.sqrt() / inst.params.upsilon.sqrt();
    let mut best: Option<(f64, Vec<bool>)> = None;
    for mask in 1u64..(1u64 << n) {
        let mut sum = 0.0;
        let mut lambda = 0.0f64;
        let mut count = 0usize;
        let mut ok = true;
        for (i, d) in inst.devices.iter().enumerate() {
            if (mask >> i) & 1 == 1 {
                if d.p_b > threshold {
                    ok = false;
                    break;
                }
                sum += d.p_b;
                lambda = lambda.max(d.p_b);
                count += 1;
            }
        }
        if !ok || count as f64 * lambda > budget {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| sum > *b) {
            best = Some((sum, (0..n).map(|i| (mask >> i) & 1 == 1).collect()));
        }
    }
    best
}

#[test]
fn c02_closed_form_equals_brute_force() {
    let start = Instant::now();
    let mut rng = stream_rng(202, 0, 0, Purpose::SchedulerDraw);
    let epsilons = [6.0, 12.0, 24.0];
    for i in 0..200u64 {
        let n = 4 + (rng.random::<u64>() % 9) as usize;
        let mut params = paper_like_params(n, 64);
        params.epsilon = epsilons[(i % 3) as usize];
        let inst = rayleigh_instance(&params, 7000 + i, i);
        let brute = brute_force_p2(&inst);
        match scheduler::solve_closed_form_highdim(&inst) {
            Ok(r) if r.feasible => {
                let (best_sum, _) = brute.expect("oracle must agree on feasibility");
                assert_eq!(
                    r.metrics.h_sum, best_sum,
                    "instance {i}: closed form {} vs brute force {best_sum}",
                    r.metrics.h_sum
                );
            }
            _ => assert!(brute.is_none(), "instance {i}: oracle found a solution"),
        }
    }

    // worked example: p_b = [4,3,2,1] with thresholds 3.5 and 6.5 selects {3, 2}
    let kappa = privsec::kappa(0.05).unwrap();
    let mut params = paper_like_params(4, 64);
    params.epsilon = 7.0 * kappa;
    params.grad_bound = 6.5;
    params.upsilon = 1.0;
    params.power_budgets = vec![1.0; 4];
    let devices: Vec<DeviceRound> = [4.0, 3.0, 2.0, 1.0]
        .iter()
        .map(|&h| DeviceRound::new(h, 0.5, 1.0).unwrap())
        .collect();
    let inst = SchedulingInstance::new(devices, params).unwrap();
    let r = scheduler::solve_closed_form_highdim(&inst).unwrap();
    assert_eq!(
        r.schedule.roles,
        vec![Role::Jammer, Role::Uploader, Role::Uploader, Role::Jammer]
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 2.0, "took {elapsed:?}");
    println!("criterion 2 (closed form): PASS - 200 instances exact, worked example ok, {elapsed:?}");
}

#[test]
fn c03_xi_cross_validation() {
    let start = Instant::now();
    assert_eq!(privsec::xi(0.0).unwrap(), 0.0);

    // quadrature against the Monte-Carlo conditional-mean oracle
    for &t in &[0.5, 1.0, 2.0, 5.0, 10.0] {
        let quad = privsec::xi(t).unwrap();
        let mut rng = stream_rng(303, t.to_bits(), 0, Purpose::SchedulerDraw);
        let mc = analysis::empirical_eve_mmse(1.0, 0.0, t, 1_000_000, &mut rng);
        let tol = f64::max(0.02 * mc, 5e-3);
        assert!(
            (quad - mc).abs() <= tol,
            "t={t}: quadrature {quad} vs Monte Carlo {mc}"
        );
    }

    // nondecreasing and capped on [0, 50] at 0.1 spacing
    let mut prev = -1.0;
    let mut i = 0u64;
    while i <= 500 {
        let t = i as f64 * 0.1;
        let v = privsec::xi(t).unwrap();
        assert!(v >= prev - 1e-9, "xi decreasing at t = {t}");
        assert!(
            v <= (t * t / 12.0).min(1.0) + 1e-3,
            "xi({t}) = {v} above the prior/noise cap"
        );
        prev = v;
        i += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!("criterion 3 (xi cross-validation): PASS - 5 oracle points, 501-sample grid, {elapsed:?}");
}

#[test]
fn c04_security_bookkeeping() {
    let start = Instant::now();
    let dim = 8;
    let params = paper_like_params(3, dim);
    let devices = vec![
        DeviceRound::new(0.9, 0.6, 5.0).unwrap(),
        DeviceRound::new(1.4, 0.3, 5.0).unwrap(),
        DeviceRound::new(0.7, 1.1, 5.0).unwrap(),
    ];
    let schedule = Schedule::new(vec![Role::Uploader, Role::Uploader, Role::Jammer]);
    let gamma = privsec::security_coefficient(&schedule, &devices, &params).unwrap();

    let g0: Vec<f64> = (0..dim).map(|i| 0.4 * (i as f64).sin()).collect();
    let g1: Vec<f64> = (0..dim).map(|i| 0.3 * (i as f64).cos()).collect();
    let mut grads = std::collections::BTreeMap::new();
    grads.insert(0usize, g0);
    grads.insert(1usize, g1);
    let rounds = 100_000u64;
    let mut acc = 0.0;
    for t in 0..rounds {
        let signals = ota::transmit_round(
            &grads,
            &schedule,
            &devices,
            &params,
            ota::UploadEncoding::Cwpp,
            404,
            t,
        )
        .unwrap();
        let err =
            ota::eve_unbiased_estimator_error(&signals, &schedule, &devices, &params).unwrap();
        acc += err.iter().map(|e| e * e).sum::<f64>();
    }
    let mse = acc / (rounds as f64 * dim as f64);
    let rel = (mse - gamma).abs() / gamma;
    assert!(
        rel <= 0.03,
        "empirical Eve MSE {mse} vs gamma_E {gamma} (rel {rel})"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 4 (security bookkeeping): PASS - MSE {mse:.5} vs gamma {gamma:.5} (rel {rel:.4}), {elapsed:?}"
    );
}

#[test]
fn c05_feasibility_fuzz() {
    let start = Instant::now();
    let mut rng = stream_rng(505, 0, 0, Purpose::SchedulerDraw);
    let mut checked = 0usize;
    for i in 0..10_000u64 {
        let n = 3 + (rng.random::<u64>() % 8) as usize;
        let mut params = paper_like_params(n, [8, 64, 21840][(i % 3) as usize]);
        params.epsilon = [3.0, 12.0, 20.0][(i % 3) as usize];
        params.upsilon = [0.5, 1.5, 5.0][((i / 3) % 3) as usize];
        let inst = rayleigh_instance(&params, 20_000 + i, i);
        let mut results = vec![scheduler::solve_spa(&inst)];
        if let Ok(r) = scheduler::solve_closed_form_highdim(&inst) {
            results.push(r);
        }
        if n <= 8 {
            results.push(scheduler::solve_esm(&inst).unwrap());
        }
        let mut draw = stream_rng(505, i, 1, Purpose::SchedulerDraw);
        results.push(scheduler::solve_random(&inst, &mut draw));
        for r in results {
            if r.feasible {
                checked += 1;
                assert!(
                    check_privacy_constraint(&r.schedule, &inst),
                    "instance {i}: {} violates privacy",
                    r.solver_name
                );
                assert!(
                    check_security_constraint(&r.schedule, &inst),
                    "instance {i}: {} violates security",
                    r.solver_name
                );
            }
        }
    }
    let elapsed = start.elapsed();
    println!(
        "criterion 5 (feasibility invariant): PASS - {checked} feasible schedules revalidated, zero violations, {elapsed:?}"
    );
}

#[test]
fn c06_convergence_bound_dominates() {
    let start = Instant::now();
    let reps = 100usize;
    let rounds = 200u64;
    for dim in [1usize, 4, 16] {
        let mut params = paper_like_params(10, dim);
        params.grad_bound = 12.0;
        params.sigma_b = 0.25;
        let datasets =
            generate_datasets(600 + dim as u64, 10, dim, 64, 32, 0.05, 0.1, &LossKind::Linreg)
                .unwrap();
        let est = analysis::estimate_convex_params(&datasets, &LossKind::Linreg).unwrap();
        let schedule = LearningSchedule::InverseTime {
            rho: est.rho,
            theta: est.theta,
        };
        let base_channel = ChannelModel::new(1.0, 1.0, 0).unwrap();
        let traces: Vec<_> = (0..reps)
            .map(|rep| {
                let channel = base_channel.with_seed(split_seed(61, rep as u64));
                let setup = TrainingSetup {
                    params: &params,
                    channel: &channel,
                    datasets: &datasets,
                    loss_kind: LossKind::Linreg,
                    schedule,
                    scheduler: SchedulerChoice::Full,
                    aggregator: AggregatorChoice::Cwpp,
                    rounds,
                    m_star: Some(est.m_star.clone()),
                    init: vec![0.0; dim],
                    aligned_verbatim: false,
                    security_count_as_n: false,
                };
                fedlearn::run_training(&setup, split_seed(62, rep as u64)).unwrap()
            })
            .collect();
        let cp = est.convergence_params(rounds);
        let report = analysis::validate_bound(&traces, &cp, params.grad_bound).unwrap();
        assert!(report.holds, "bound violated for dim {dim}");
        assert!(!report.low_replicates);

        // asymptotic limit: the T -> inf bound settles at 2 Gamma theta / rho
        let max_psi = traces
            .iter()
            .flat_map(|t| t.rows[1..].iter().map(|r| r.psi))
            .filter(|p| p.is_finite())
            .fold(0.0f64, f64::max);
        let limit = 2.0 * cp.gamma_het * cp.theta / cp.rho;
        let far = analysis::optimality_gap_bound(100_000_000, &cp, max_psi, params.grad_bound);
        assert!(
            (far - limit).abs() < 1e-6,
            "dim {dim}: gap bound {far} vs limit {limit}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "criterion 6 (convergence bound): PASS - dims 1/4/16, {reps} replicates each, {elapsed:?}"
    );
}

#[test]
fn c07_cwpp_beats_aligned_with_weak_channel() {
    let start = Instant::now();
    let dim = 8;
    let n = 5;
    let mut params = paper_like_params(n, dim);
    params.grad_bound = 12.0;
    params.sigma_b = 0.25;
    params.power_budgets = vec![4.0; n];
    // weakest p_b is exactly 0.05 of the largest, every round
    let channel = FixedChannel {
        h_b: vec![0.05, 1.0, 1.0, 1.0, 1.0],
        h_e: vec![0.5; n],
    };
    let datasets = generate_datasets(700, n, dim, 64, 16, 0.0, 0.1, &LossKind::Linreg).unwrap();
    let est = analysis::estimate_convex_params(&datasets, &LossKind::Linreg).unwrap();
    let schedule = LearningSchedule::InverseTime {
        rho: est.rho,
        theta: est.theta,
    };
    let reps = 50usize;
    let mean_gap = |aggregator: AggregatorChoice| -> f64 {
        (0..reps)
            .map(|rep| {
                let setup = TrainingSetup {
                    params: &params,
                    channel: &channel,
                    datasets: &datasets,
                    loss_kind: LossKind::Linreg,
                    schedule,
                    scheduler: SchedulerChoice::Full,
                    aggregator,
                    rounds: 100,
                    m_star: Some(est.m_star.clone()),
                    init: vec![0.0; dim],
                    aligned_verbatim: false,
                    security_count_as_n: false,
                };
                fedlearn::run_training(&setup, split_seed(71, rep as u64))
                    .unwrap()
                    .final_gap()
            })
            .sum::<f64>()
            / reps as f64
    };
    let cwpp = mean_gap(AggregatorChoice::Cwpp);
    let aligned = mean_gap(AggregatorChoice::Aligned);
    assert!(
        cwpp < aligned,
        "CWPP mean gap {cwpp} not below aligned {aligned}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "criterion 7 (CWPP vs aligned): PASS - mean gap {cwpp:.4} vs {aligned:.4}, {elapsed:?}"
    );
}

#[test]
fn c08_policy_trend_with_device_count() {
    let start = Instant::now();
    let dim = 8;
    let reps = 30usize;
    let mut diffs = Vec::new();
    for &n in &[10usize, 50, 100] {
        let mut params = paper_like_params(n, dim);
        params.epsilon = 20.0;
        params.upsilon = 0.5;
        params.grad_bound = 12.0;
        params.sigma_e = 1e4;
        let datasets =
            generate_datasets(800 + n as u64, n, dim, 64, 16, 0.05, 0.1, &LossKind::Linreg)
                .unwrap();
        let est = analysis::estimate_convex_params(&datasets, &LossKind::Linreg).unwrap();
        let schedule = LearningSchedule::InverseTime {
            rho: est.rho,
            theta: est.theta,
        };
        let base_channel = ChannelModel::new(3.0, 3.0, 80).unwrap();
        let mean_gap = |choice: SchedulerChoice| -> f64 {
            (0..reps)
                .map(|rep| {
                    let channel = base_channel.with_seed(split_seed(81 + n as u64, rep as u64));
                    let setup = TrainingSetup {
                        params: &params,
                        channel: &channel,
                        datasets: &datasets,
                        loss_kind: LossKind::Linreg,
                        schedule,
                        scheduler: choice,
                        aggregator: AggregatorChoice::Cwpp,
                        rounds: 150,
                        m_star: Some(est.m_star.clone()),
                        init: vec![0.0; dim],
                        aligned_verbatim: false,
                        security_count_as_n: false,
                    };
                    fedlearn::run_training(&setup, split_seed(82, rep as u64))
                        .unwrap()
                        .final_gap()
                })
                .sum::<f64>()
                / reps as f64
        };
        let p1 = mean_gap(SchedulerChoice::Policy1);
        let p2 = mean_gap(SchedulerChoice::Spa);
        println!("N={n}: policy1 gap {p1:.4}, policy2 gap {p2:.4}, diff {:.4}", p1 - p2);
        diffs.push(p1 - p2);
    }
    assert!(
        diffs[0] >= diffs[1] && diffs[1] >= diffs[2],
        "policy1-minus-policy2 gap not monotone toward policy1: {diffs:?}"
    );
    let elapsed = start.elapsed();
    println!(
        "criterion 8 (policy trend): PASS - diffs {:?} over N = 10/50/100, {elapsed:?}",
        diffs
    );
}

#[test]
#[allow(clippy::needless_range_loop)]
fn c10_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = stream_rng(1010, 0, 0, Purpose::SchedulerDraw);
    for kind in [LossKind::Linreg, LossKind::Svm { iota: 0.3 }] {
        let mut accepted = 0usize;
        while accepted < 100 {
            let dim = 1 + (rng.random::<u64>() % 6) as usize;
            let weights: Vec<f64> = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let model = ModelState { weights, round: 0 };
            let batch: Vec<(Vec<f64>, f64)> = (0..4)
                .map(|_| {
                    let u: Vec<f64> =
                        (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                    let v = match kind {
                        LossKind::Linreg => 2.0 * rng.random::<f64>() - 1.0,
                        LossKind::Svm { .. } => {
                            if rng.random::<bool>() {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                    };
                    (u, v)
                })
                .collect();
            if let LossKind::Svm { .. } = kind {
                // the hinge subgradient jumps at the kink; finite differences
                // are only meaningful away from it
                let near = batch.iter().any(|(u, v)| {
                    let s: f64 = model.weights.iter().zip(u).map(|(a, b)| a * b).sum();
                    (1.0 - v * s).abs() < 1e-3
                });
                if near {
                    continue;
                }
            }
            accepted += 1;
            let (_, grad) = loss_and_gradient(&model, &batch, &kind).unwrap();
            let h = 1e-5;
            for i in 0..dim {
                let mut plus = model.clone();
                plus.weights[i] += h;
                let mut minus = model.clone();
                minus.weights[i] -= h;
                let (lp, _) = loss_and_gradient(&plus, &batch, &kind).unwrap();
                let (lm, _) = loss_and_gradient(&minus, &batch, &kind).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let tol = 1e-5 * grad[i].abs().max(1.0);
                assert!(
                    (fd - grad[i]).abs() <= tol,
                    "{kind:?}: finite difference {fd} vs analytic {}",
                    grad[i]
                );
            }
        }
    }
    let elapsed = start.elapsed();
    println!("criterion 10 (gradient correctness): PASS - 100 points per loss, {elapsed:?}");
}
