use serde_json::{json, Value};

use crate::certificates::{BoundReport, CertificateSet, Membership};
use crate::scenario::BuiltScenario;
use crate::sim::{RunMode, Trajectory};

/// Rounds to `sig` significant digits so reported constants are stable
/// across platforms that differ in the last ulp or two.
pub fn round_sig(x: f64, sig: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = sig - 1 - x.abs().log10().floor() as i32;
    let factor = 10f64.powi(scale);
    (x * factor).round() / factor
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(round_sig(x, 12))
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// Conventions that a reader of the output files may need; these mirror
/// what the code does, not a configuration surface.
pub fn decisions(scn: &BuiltScenario) -> Value {
    json!({
        "terminal_weight": "dare fixed point from q, gain-reconstruction checked",
        "gradient_step": "alpha = 1/(lam_max + lam_min), step nu - 2*alpha*(H nu + G x)",
        "symmetrization": "0.5*(M + M^T) after product assembly",
        "switch_times": "offline from x0, cumulative, forced strictly increasing",
        "switch_h": if scn.auto_switch_times { "previous design h unless use_displayed_h_next" } else { "given by config" },
        "warm_start": format!("{:?}", scn.opts.warm_start).to_lowercase(),
        "flop_model": "per step ell*(N*m)^2 + N*m*n; benchmark and diagnostic solves excluded",
        "discretization": scn.discretization,
    })
}

fn certificate_json(cert: &CertificateSet) -> Value {
    json!({
        "horizon": cert.horizon,
        "alpha": num(cert.alpha),
        "eta": num(cert.eta),
        "beta": num(cert.beta),
        "sigma": num(cert.sigma),
        "omega": num(cert.omega),
        "kappa": num(cert.kappa),
        "lipschitz": num(cert.lipschitz),
        "ell_star": num(cert.ell_star),
        "ell_reference": cert.ell_reference,
        "declared_budget": cert.declared_budget,
        "budget_below_threshold": cert.budget_below_threshold,
        "tau": num(cert.tau),
        "tau_interval": [num(cert.tau_interval.0), num(cert.tau_interval.1)],
        "epsilon": num(cert.epsilon),
        "h0": num(cert.h0),
        "c_terminal": num(cert.c_terminal),
        "d": num(cert.d),
        "r_N": num(cert.r_region),
        "c_lemma4": num(cert.c_lemma4),
        "b0": num(cert.b0),
        "cbar": num(cert.cbar),
    })
}

pub fn membership_json(mem: &Membership) -> Value {
    json!({
        "in_gamma": mem.in_gamma,
        "in_sigma": mem.in_sigma,
        "psi": num(mem.psi),
        "dist": num(mem.dist),
    })
}

pub fn certify_report(scn: &BuiltScenario) -> Value {
    let mut out = json!({
        "name": scn.name,
        "mode": scn.mode.as_str(),
        "config_sha256": scn.config_sha256,
        "tainted": scn.tainted,
        "decisions": decisions(scn),
        "model": {
            "n": scn.model.n,
            "m": scn.model.m,
        },
        "phases": scn.phases.iter().map(|p| certificate_json(&p.cert)).collect::<Vec<_>>(),
    });
    if scn.mode == RunMode::DimSumpc {
        out["schedule"] = json!({
            "horizons": scn.schedule.horizons,
            "switch_times": scn.schedule.switch_times,
            "auto_switch_times": scn.auto_switch_times,
            "switch_raw": scn.switch_raw.iter().map(|&r| num(r)).collect::<Vec<_>>(),
        });
    }
    out
}

pub fn bound_json(b: &BoundReport) -> Value {
    json!({
        "kind": b.kind.as_str(),
        "satisfied": b.satisfied,
        "margin": num(b.margin),
        "theoretical": b.theoretical.iter().map(|&v| num(v)).collect::<Vec<_>>(),
        "empirical": b.empirical.iter().map(|&v| num(v)).collect::<Vec<_>>(),
    })
}

pub struct SummaryInputs<'a> {
    pub scn: &'a BuiltScenario,
    pub traj: &'a Trajectory,
    pub optimal_cost: Option<f64>,
    pub curve: Option<&'a [f64]>,
    pub bounds: &'a [BoundReport],
    /// (coordinate, level): report the first step from which |x_coord| stays
    /// at or below the level.
    pub settle: Option<(usize, f64)>,
}

pub fn summary_report(inp: &SummaryInputs) -> Value {
    let traj = inp.traj;
    let wall_total: u64 = traj.step_wall_time_us.iter().sum();
    let wall_max = traj.step_wall_time_us.iter().copied().max().unwrap_or(0);
    let mut out = json!({
        "name": inp.scn.name,
        "mode": traj.mode.as_str(),
        "config_sha256": inp.scn.config_sha256,
        "tainted": inp.scn.tainted,
        "t": traj.t(),
        "j_t": num(traj.total_cost()),
        "terminal_cost": num(traj.terminal_cost),
        "final_v": num(*traj.v_values.last().unwrap_or(&f64::NAN)),
        "total_flops": traj.total_flops(),
        "total_iterations": traj.iter_counts.iter().sum::<u64>(),
        "wall_time_us": { "total": wall_total, "max_step": wall_max },
        "decisions": decisions(inp.scn),
    });
    if let Some(mem) = &traj.start_membership {
        out["start_membership"] = membership_json(mem);
    }
    if let Some(j_opt) = inp.optimal_cost {
        out["optimal_cost"] = num(j_opt);
        out["incurred_suboptimality"] = num(traj.total_cost() - j_opt);
    }
    if let Some(curve) = inp.curve {
        out["cumulative_suboptimality_final"] = num(*curve.last().unwrap_or(&f64::NAN));
    }
    if let Some((coord, level)) = inp.settle {
        out["settle"] = json!({
            "coordinate": coord,
            "level": num(level),
            "step": traj.settled_from(coord, level),
        });
    }
    if !inp.bounds.is_empty() {
        out["bounds"] = Value::Array(inp.bounds.iter().map(bound_json).collect());
        out["all_bounds_satisfied"] = json!(inp.bounds.iter().all(|b| b.satisfied));
    }
    out
}

fn push_f(row: &mut Vec<String>, x: f64) {
    row.push(format!("{x}"));
}

/// Per-step trajectory table. The final row carries the terminal state,
/// value and cost totals; columns that only exist per step stay empty there.
pub fn write_csv(scn: &BuiltScenario, traj: &Trajectory, curve: Option<&[f64]>) -> String {
    let n = scn.model.n;
    let m = scn.model.m;
    let t = traj.t();
    let mut out = String::new();
    out.push_str(&format!(
        "# config_sha256={} mode={} tainted={}\n",
        scn.config_sha256,
        traj.mode.as_str(),
        scn.tainted
    ));
    out.push_str(&format!("# decisions={}\n", decisions(scn)));
    let mut header: Vec<String> = vec!["k".into()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    for name in [
        "V", "psi", "lyapunov", "d_norm", "ell_k", "horizon", "stage_cost", "cum_cost",
        "cum_suboptimality", "flop_proxy", "wall_time_us",
    ] {
        header.push(name.into());
    }
    out.push_str(&header.join(","));
    out.push('\n');

    let mut cum_cost = 0.0;
    for k in 0..=t {
        let mut row: Vec<String> = vec![k.to_string()];
        for i in 0..n {
            push_f(&mut row, traj.states[k][i]);
        }
        if k < t {
            for i in 0..m {
                push_f(&mut row, traj.inputs[k][i]);
            }
            push_f(&mut row, traj.v_values[k]);
            push_f(&mut row, traj.psi_values[k]);
            push_f(&mut row, traj.lyapunov_values[k]);
            push_f(&mut row, traj.d_norms[k]);
            row.push(traj.iter_counts[k].to_string());
            row.push(traj.horizon_at_step[k].to_string());
            push_f(&mut row, traj.stage_costs[k]);
            cum_cost += traj.stage_costs[k];
            push_f(&mut row, cum_cost);
            match curve {
                Some(c) => push_f(&mut row, c[k]),
                None => row.push(String::new()),
            }
            row.push(traj.flop_proxy[k].to_string());
            row.push(traj.step_wall_time_us[k].to_string());
        } else {
            for _ in 0..m {
                row.push(String::new());
            }
            push_f(&mut row, traj.v_values[k]);
            push_f(&mut row, traj.psi_values[k]);
            row.push(String::new()); // lyapunov
            row.push(String::new()); // d_norm
            row.push(String::new()); // ell_k
            row.push(String::new()); // horizon
            push_f(&mut row, traj.terminal_cost);
            push_f(&mut row, cum_cost + traj.terminal_cost);
            match curve {
                Some(c) => push_f(&mut row, c[k]),
                None => row.push(String::new()),
            }
            row.push(String::new()); // flop_proxy
            row.push(String::new()); // wall_time_us
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
