//! Acceptance suite: nine closed-loop and solver-level checks, each printing
//! a single `criterion N: PASS/FAIL` line (visible with `--nocapture`). Every
//! tolerance is pinned here on purpose — loosening one is a design change,
//! not a test fix.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdmpc::certificates::{
    bound_delta_mu, bound_state, bound_suboptimality, compute_certificates,
};
use tdmpc::condensed::{build_condensed, spectral_data, sym_inv_sqrt, CondensedQp, SpectralData};
use tdmpc::lti::{discretize_zoh, solve_dare, CostSpec, LtiModel};
use tdmpc::pgm::{active_set_enumerate, pgm_iterate, solve_optimal, BoxSet};
use tdmpc::presets::preset;
use tdmpc::scenario::{load_scenario, run_benchmark, run_scenario, BuiltScenario};
use tdmpc::sim::Trajectory;

fn unif(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    lo + (hi - lo) * u
}

fn pendulum() -> (LtiModel, CostSpec) {
    let ac = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 14.715, 0.0]);
    let bc = DMatrix::from_row_slice(2, 1, &[0.0, 30.0]);
    let model = discretize_zoh(&ac, &bc, 0.1).unwrap();
    let q = DMatrix::identity(2, 2);
    let r = DMatrix::identity(1, 1);
    let cost = solve_dare(&model, &q, &r).unwrap();
    (model, cost)
}

fn pendulum_design(horizon: usize) -> (LtiModel, CostSpec, CondensedQp, SpectralData, BoxSet) {
    let (model, cost) = pendulum();
    let qp = build_condensed(&model, &cost, horizon).unwrap();
    let sp = spectral_data(&qp).unwrap();
    let bx = BoxSet::new(DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)).unwrap();
    (model, cost, qp, sp, bx)
}

fn verdict(criterion: u32, ok: bool, detail: &str) {
    println!("criterion {criterion}: {} — {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn built(name: &str) -> BuiltScenario {
    load_scenario(preset(name).unwrap()).unwrap()
}

/// First step index from which |x_coord| stays at or below `level` through
/// the end of the run; None when it never settles.
fn settle(traj: &Trajectory, coord: usize, level: f64) -> Option<usize> {
    traj.settled_from(coord, level)
}

#[test]
fn criterion_1_solver_matches_enumeration() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut checked = 0usize;
    let mut worst_v = 0.0f64;
    let mut worst_obj = 0.0f64;
    while checked < 500 {
        let n = 1 + (rng.next_u64() % 2) as usize;
        let m = 1 + (rng.next_u64() % 2) as usize;
        let horizon = 1 + (rng.next_u64() % 3) as usize;
        let a = DMatrix::from_fn(n, n, |_, _| unif(&mut rng, -1.2, 1.2));
        let b = DMatrix::from_fn(n, m, |_, _| unif(&mut rng, -1.0, 1.0));
        let Ok(model) = LtiModel::new(a, b) else { continue };
        let q = DMatrix::identity(n, n) * unif(&mut rng, 0.5, 2.0);
        let r = DMatrix::identity(m, m) * unif(&mut rng, 0.5, 2.0);
        let Ok(cost) = solve_dare(&model, &q, &r) else { continue };
        let qp = build_condensed(&model, &cost, horizon).unwrap();
        let sp = spectral_data(&qp).unwrap();
        let lo = DVector::from_fn(m, |_, _| -unif(&mut rng, 0.5, 2.0));
        let hi = DVector::from_fn(m, |_, _| unif(&mut rng, 0.5, 2.0));
        let bx = BoxSet::new(lo, hi).unwrap();
        let x = DVector::from_fn(n, |_, _| unif(&mut rng, -3.0, 3.0));
        let fast = solve_optimal(&qp, &sp, &x, &bx, 1e-10).unwrap();
        let exact = active_set_enumerate(&qp, &x, &bx).unwrap();
        worst_v = worst_v.max((&fast - &exact).norm());
        worst_obj = worst_obj.max((qp.cost(&x, &fast) - qp.cost(&x, &exact)).abs());
        checked += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = worst_v <= 1e-6 && worst_obj <= 1e-8 && elapsed < 10.0;
    verdict(
        1,
        ok,
        &format!(
            "{checked} instances, worst |Δν| = {worst_v:.3e} (tol 1e-6), worst |ΔJ| = {worst_obj:.3e} (tol 1e-8), {elapsed:.2} s"
        ),
    );
}

#[test]
fn criterion_2_iteration_contraction() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut samples = 0usize;
    let mut worst_slack = f64::NEG_INFINITY;

    let mut designs: Vec<(CondensedQp, SpectralData, BoxSet)> = Vec::new();
    let (_, _, qp, sp, bx) = pendulum_design(3);
    designs.push((qp, sp, bx));
    while designs.len() < 11 {
        let n = 1 + (rng.next_u64() % 2) as usize;
        let m = 1 + (rng.next_u64() % 2) as usize;
        let horizon = 1 + (rng.next_u64() % 3) as usize;
        let a = DMatrix::from_fn(n, n, |_, _| unif(&mut rng, -1.2, 1.2));
        let b = DMatrix::from_fn(n, m, |_, _| unif(&mut rng, -1.0, 1.0));
        let Ok(model) = LtiModel::new(a, b) else { continue };
        let q = DMatrix::identity(n, n) * unif(&mut rng, 0.5, 2.0);
        let r = DMatrix::identity(m, m) * unif(&mut rng, 0.5, 2.0);
        let Ok(cost) = solve_dare(&model, &q, &r) else { continue };
        let qp = build_condensed(&model, &cost, horizon).unwrap();
        let sp = spectral_data(&qp).unwrap();
        let lo = DVector::from_fn(m, |_, _| -unif(&mut rng, 0.5, 2.0));
        let hi = DVector::from_fn(m, |_, _| unif(&mut rng, 0.5, 2.0));
        let bx = BoxSet::new(lo, hi).unwrap();
        designs.push((qp, sp, bx));
    }

    for (qp, sp, bx) in &designs {
        for _ in 0..100 {
            let x = DVector::from_fn(qp.n, |_, _| unif(&mut rng, -2.0, 2.0));
            let v0 = DVector::from_fn(qp.dim(), |_, _| unif(&mut rng, -2.0, 2.0));
            let star = solve_optimal(qp, sp, &x, bx, 1e-13).unwrap();
            let before = (&v0 - &star).norm();
            for ell in [1u64, 5, 20] {
                let after = (pgm_iterate(qp, sp, &x, &v0, bx, ell) - &star).norm();
                worst_slack = worst_slack.max(after - sp.eta.powi(ell as i32) * before);
            }
            samples += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = samples >= 1000 && worst_slack <= 1e-9 && elapsed < 30.0;
    verdict(
        2,
        ok,
        &format!(
            "{samples} samples x budgets {{1,5,20}}, worst bound slack = {worst_slack:.3e} (tol 1e-9), {elapsed:.2} s"
        ),
    );
}

#[test]
fn criterion_3_value_function_decay_in_region() {
    let started = Instant::now();
    let (model, cost, qp, sp, bx) = pendulum_design(15);
    let cert = compute_certificates(&model, &cost, &qp, &sp, &bx).unwrap();
    let w_inv_sqrt = sym_inv_sqrt(&qp.w).unwrap();
    let beta_sq = cert.beta * cert.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(3003);

    let mut worst_lower = f64::NEG_INFINITY; // ||x||_P^2 - V
    let mut worst_upper = f64::NEG_INFINITY; // V - ||x||_W^2
    let mut worst_decay = f64::NEG_INFINITY; // V(f(x)) - beta^2 V(x)
    for _ in 0..500 {
        let angle = unif(&mut rng, 0.0, std::f64::consts::TAU);
        let radius = cert.r_region * unif(&mut rng, 0.0, 1.0);
        let y = DVector::from_row_slice(&[angle.cos(), angle.sin()]);
        let x = &w_inv_sqrt * y * radius; // ||x||_W = radius <= r, so x ∈ Γ

        let mu = solve_optimal(&qp, &sp, &x, &bx, 1e-10).unwrap();
        let v = qp.cost(&x, &mu);
        let xp_sq = (x.transpose() * &cost.p * &x)[(0, 0)];
        let xw_sq = (x.transpose() * &qp.w * &x)[(0, 0)];
        worst_lower = worst_lower.max(xp_sq - v);
        worst_upper = worst_upper.max(v - xw_sq);

        let x_next = &model.a * &x + &qp.bbar * &mu;
        let mu_next = solve_optimal(&qp, &sp, &x_next, &bx, 1e-10).unwrap();
        let v_next = qp.cost(&x_next, &mu_next);
        worst_decay = worst_decay.max(v_next - beta_sq * v);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok =
        worst_lower <= 1e-8 && worst_upper <= 1e-8 && worst_decay <= 1e-8 && elapsed < 60.0;
    verdict(
        3,
        ok,
        &format!(
            "500 region samples: sandwich slacks {worst_lower:.3e}/{worst_upper:.3e}, decay slack {worst_decay:.3e} (tol 1e-8), {elapsed:.2} s"
        ),
    );
}

/// Runs one certified scenario and returns (steps in the combined region,
/// total steps, worst Lyapunov decay slack over steps inside the region).
fn lyapunov_decay_run(scn: &BuiltScenario) -> (usize, usize, f64) {
    let cert = &scn.phases[0].cert;
    assert_eq!(
        cert.declared_budget,
        Some(cert.ell_reference),
        "the certified preset must run exactly the computed reference budget"
    );
    let traj = run_scenario(scn).unwrap();
    let t = traj.t();
    let ball = (1.0 - cert.beta) * cert.r_region / cert.sigma;
    let in_sigma =
        |k: usize| traj.psi_values[k] <= cert.r_region && traj.d_norms[k] <= ball;
    let mut inside = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..t {
        if !in_sigma(k) {
            continue;
        }
        inside += 1;
        if k + 1 < t {
            worst = worst.max(traj.lyapunov_values[k + 1] - cert.epsilon * traj.lyapunov_values[k]);
        }
    }
    (inside, t, worst)
}

#[test]
fn criterion_4_certified_lyapunov_decay() {
    let started = Instant::now();
    let pend = built("pendulum_certified");
    let (inside_p, t_p, worst_p) = lyapunov_decay_run(&pend);
    let scal = built("scalar_certified");
    let (inside_s, t_s, worst_s) = lyapunov_decay_run(&scal);
    let elapsed = started.elapsed().as_secs_f64();
    let ok = inside_p == t_p
        && inside_s == t_s
        && worst_p <= 1e-8
        && worst_s <= 1e-8
        && elapsed < 60.0;
    verdict(
        4,
        ok,
        &format!(
            "pendulum: {inside_p}/{t_p} steps in region, decay slack {worst_p:.3e}; 1-state: {inside_s}/{t_s}, slack {worst_s:.3e} (tol 1e-8), {elapsed:.2} s"
        ),
    );
}

/// Checks the three trajectory bounds on one certified scenario; returns the
/// worst (empirical − theoretical) over all indices per bound.
fn bound_slacks(scn: &BuiltScenario) -> (f64, f64, f64) {
    let cert = &scn.phases[0].cert;
    let ell = cert.declared_budget.unwrap();
    let traj = run_scenario(scn).unwrap();
    let opt = run_benchmark(scn).unwrap();
    let t = traj.t();
    let ells = vec![ell; t];
    let w = &scn.phases[0].qp.w;
    let x0_norm_w = (scn.x0.transpose() * w * &scn.x0)[(0, 0)].max(0.0).sqrt();

    let mut worst_dmu = f64::NEG_INFINITY;
    for k in 0..t {
        let emp = (&traj.z_history[k] - &opt.z_history[k]).norm();
        worst_dmu = worst_dmu.max(emp - bound_delta_mu(cert, x0_norm_w, &ells, k).unwrap());
    }
    let mut worst_state = f64::NEG_INFINITY;
    for k in 0..=t {
        let emp = traj.states[k].norm();
        worst_state = worst_state.max(emp - bound_state(cert, x0_norm_w, &ells, k).unwrap());
    }
    let (finite, _) = bound_suboptimality(cert, x0_norm_w, &ells, t).unwrap();
    let r_emp = traj.total_cost() - opt.total_cost();
    (worst_dmu, worst_state, r_emp - finite)
}

#[test]
fn criterion_5_error_bounds_hold_on_certified_runs() {
    let started = Instant::now();
    let (dmu_p, state_p, r_p) = bound_slacks(&built("pendulum_certified"));
    let (dmu_s, state_s, r_s) = bound_slacks(&built("scalar_certified"));
    let elapsed = started.elapsed().as_secs_f64();
    let ok = dmu_p <= 0.0
        && state_p <= 0.0
        && r_p <= 0.0
        && dmu_s <= 0.0
        && state_s <= 0.0
        && r_s <= 0.0
        && elapsed < 60.0;
    verdict(
        5,
        ok,
        &format!(
            "worst empirical-minus-bound: pendulum Δμ {dmu_p:.3e}, state {state_p:.3e}, R {r_p:.3e}; 1-state Δμ {dmu_s:.3e}, state {state_s:.3e}, R {r_s:.3e}; {elapsed:.2} s"
        ),
    );
}

#[test]
fn criterion_6_scenario_a_reproduction() {
    let started = Instant::now();
    let td = built("pendulum_tdmpc");
    let dim = built("pendulum_dim_a");
    let traj_td = run_scenario(&td).unwrap();
    let traj_dim = run_scenario(&dim).unwrap();
    let opt = run_benchmark(&td).unwrap();

    let td_settle = settle(&traj_td, 0, 1e-3);
    let dim_settle = settle(&traj_dim, 0, 1e-3);
    let td_final = traj_td.states.last().unwrap()[0].abs();

    // flop drop at each switch: with equal budgets the iteration term must
    // shrink by exactly (new dim / old dim)^2
    let n = dim.model.n as u64;
    let mut ratios_exact = true;
    for (j, &kj) in dim.schedule.switch_times.iter().enumerate() {
        let (kj, prev_dim, new_dim) = (
            kj as usize,
            (dim.schedule.horizons[j] * dim.model.m) as u64,
            (dim.schedule.horizons[j + 1] * dim.model.m) as u64,
        );
        let before = traj_dim.flop_proxy[kj - 1] - prev_dim * n;
        let after = traj_dim.flop_proxy[kj] - new_dim * n;
        ratios_exact &= after * prev_dim * prev_dim == before * new_dim * new_dim;
    }

    let r_td = traj_td.total_cost() - opt.total_cost();
    let r_dim = traj_dim.total_cost() - opt.total_cost();
    let r_ok = r_td.is_finite() && r_td > 0.0 && r_dim.is_finite() && r_dim > 0.0;

    let elapsed = started.elapsed().as_secs_f64();
    let ok = td_settle.is_some() && dim_settle.is_some() && ratios_exact && r_ok && elapsed < 120.0;
    verdict(
        6,
        ok,
        &format!(
            "TD settles: {td_settle:?} (|θ_150| = {td_final:.3e}, needs ≤ 1e-3); Dim settles: {dim_settle:?}; switch flop ratios exact: {ratios_exact}; R_td = {r_td:.4e}, R_dim = {r_dim:.4e}; {elapsed:.2} s"
        ),
    );
}

#[test]
fn criterion_7_scenario_b_reproduction() {
    let started = Instant::now();
    let td = built("pendulum_tdmpc");
    let dim = built("pendulum_dim_b");
    let traj_td = run_scenario(&td).unwrap();
    let traj_dim = run_scenario(&dim).unwrap();

    let flops_td = traj_td.total_flops() as f64;
    let flops_dim = traj_dim.total_flops() as f64;
    let ratio = flops_dim / flops_td;
    let parity = (0.9..=1.1).contains(&ratio);

    let td_settle = settle(&traj_td, 0, 1e-3);
    let dim_settle = settle(&traj_dim, 0, 1e-3);
    let earlier = match (dim_settle, td_settle) {
        (Some(d), Some(t)) => d < t,
        (Some(_), None) => true,
        _ => false,
    };

    let elapsed = started.elapsed().as_secs_f64();
    let ok = parity && earlier && elapsed < 120.0;
    verdict(
        7,
        ok,
        &format!(
            "flop ratio dim/td = {ratio:.4} (needs 0.9..=1.1, td {flops_td:.4e}, dim {flops_dim:.4e}); settles earlier: {earlier} (dim {dim_settle:?} vs td {td_settle:?}); {elapsed:.2} s"
        ),
    );
}

#[test]
fn criterion_8_certified_switch_transitions() {
    let started = Instant::now();
    let scn = built("scalar_dim_certified");
    assert!(!scn.tainted, "the transition study must be fully certified");
    assert!(scn.auto_switch_times, "switch times must come out of the transition rule");
    let traj = run_scenario(&scn).unwrap();

    let mut worst = f64::NEG_INFINITY;
    let mut detail = String::new();
    for (j, &kj) in scn.schedule.switch_times.iter().enumerate() {
        let cert = &scn.phases[j + 1].cert;
        let level = (scn.schedule.horizons[j + 1] as f64) * cert.d + cert.c_terminal;
        let v = traj.v_values[kj as usize];
        worst = worst.max(v - level);
        detail.push_str(&format!("k_{}={kj}: V={v:.3e} level={level:.4}; ", j + 1));
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = worst <= 1e-6 && elapsed < 60.0;
    verdict(8, ok, &format!("{detail}worst excess {worst:.3e} (tol 1e-6), {elapsed:.2} s"));
}

#[test]
fn criterion_9_repeat_runs_are_bit_identical() {
    let started = Instant::now();
    let mut all_ok = true;
    let mut detail = String::new();
    for name in tdmpc::presets::NAMES {
        let run = || {
            let scn = built(name);
            let traj = run_scenario(&scn).unwrap();
            tdmpc::report::write_csv(&scn, &traj, None)
        };
        let (a, b) = (run(), run());
        let strip = |csv: &str| {
            csv.lines()
                .map(|line| {
                    if line.starts_with('#') {
                        line.to_string()
                    } else {
                        let cells: Vec<&str> = line.split(',').collect();
                        cells[..cells.len() - 1].join(",")
                    }
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let same = strip(&a) == strip(&b);
        all_ok &= same;
        if !same {
            detail.push_str(&format!("{name} differs; "));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = all_ok && elapsed < 30.0;
    if detail.is_empty() {
        detail = format!("{} presets run twice, timing column excluded", tdmpc::presets::NAMES.len());
    }
    verdict(9, ok, &format!("{detail}, {elapsed:.2} s"));
}
