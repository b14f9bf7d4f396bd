use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use tdmpc::certificates::{
    bound_delta_mu, bound_dim_sumpc, bound_state, bound_suboptimality, check_bound, BoundKind,
    BoundReport,
};
use tdmpc::error::{Error, Result};
use tdmpc::presets;
use tdmpc::report::{certify_report, decisions, round_sig, summary_report, write_csv, SummaryInputs};
use tdmpc::scenario::{load_scenario, run_benchmark, run_scenario, step_budgets, BuiltScenario};
use tdmpc::sim::{cumulative_suboptimality_curve, RunMode, Trajectory};

#[derive(Parser)]
#[command(name = "tdmpc-lab", version, about = "Budgeted linear MPC lab: certificates, closed-loop runs, bound checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Source {
    /// Path to a scenario JSON file
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in scenario (see `--preset help`)
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the certificate set of a scenario and print it as JSON
    Certify {
        #[command(flatten)]
        src: Source,
        /// Directory for certificates.json (stdout only when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed loop; writes trajectory.csv + summary.json under --out
    Simulate {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Re-run the same scenario this many times (wall-clock spread)
        #[arg(long, default_value_t = 1)]
        repeat: u32,
        /// Also run the benchmark controller and report suboptimality
        #[arg(long)]
        baseline: bool,
        /// State coordinate watched for settling
        #[arg(long)]
        settle_coord: Option<usize>,
        /// Settling level on |x_coord|
        #[arg(long)]
        settle_level: Option<f64>,
    },
    /// Run two scenarios from the same start and compare cost and effort
    Compare {
        /// Scenario JSON paths (may repeat)
        #[arg(long = "config")]
        configs: Vec<PathBuf>,
        /// Built-in scenario names (may repeat)
        #[arg(long = "preset")]
        presets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        settle_coord: usize,
        #[arg(long, default_value_t = 1e-3)]
        settle_level: f64,
    },
    /// Check the closed-loop error bounds of a certified scenario
    VerifyBounds {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_source(src: &Source) -> Result<(String, BuiltScenario)> {
    let raw = match (&src.config, &src.preset) {
        (Some(path), None) => fs::read_to_string(path)?,
        (None, Some(name)) => match presets::preset(name) {
            Some(raw) => raw.to_string(),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset '{name}'; available: {}",
                    presets::NAMES.join(", ")
                )))
            }
        },
        _ => {
            return Err(Error::InvalidConfig(
                "give exactly one of --config <file> or --preset <name>".into(),
            ))
        }
    };
    let scn = load_scenario(&raw)?;
    Ok((raw, scn))
}

fn write_out(dir: &Path, file: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(file), contents)?;
    Ok(())
}

/// stdout print that survives the consumer hanging up (e.g. `| head`);
/// any other write failure still propagates.
fn say(line: std::fmt::Arguments<'_>) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(out: &Option<PathBuf>, file: &str, value: &Value) -> Result<()> {
    let pretty = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => write_out(dir, file, &pretty)?,
        None => say(format_args!("{pretty}"))?,
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Certify { src, out } => {
            let (_, scn) = load_source(&src)?;
            let report = certify_report(&scn);
            emit(&out, "certificates.json", &report)?;
            if out.is_some() {
                say(format_args!(
                    "certified {} ({} phase(s)), tainted={}",
                    scn.name,
                    scn.phases.len(),
                    scn.tainted
                ))?;
            }
            Ok(())
        }
        Cmd::Simulate { src, out, repeat, baseline, settle_coord, settle_level } => {
            let (_, scn) = load_source(&src)?;
            simulate(&scn, out, repeat.max(1), baseline, settle_coord, settle_level)
        }
        Cmd::Compare { configs, presets, out, settle_coord, settle_level } => {
            let mut sources: Vec<Source> = Vec::new();
            for c in configs {
                sources.push(Source { config: Some(c), preset: None });
            }
            for p in presets {
                sources.push(Source { config: None, preset: Some(p) });
            }
            if sources.len() != 2 {
                return Err(Error::InvalidConfig(format!(
                    "compare needs exactly two scenarios, got {}",
                    sources.len()
                )));
            }
            compare(&sources[0], &sources[1], out, settle_coord, settle_level)
        }
        Cmd::VerifyBounds { src, out } => {
            let (_, scn) = load_source(&src)?;
            verify_bounds(&scn, out)
        }
    }
}

fn simulate(
    scn: &BuiltScenario,
    out: Option<PathBuf>,
    repeat: u32,
    baseline: bool,
    settle_coord: Option<usize>,
    settle_level: Option<f64>,
) -> Result<()> {
    let mut traj = run_scenario(scn)?;
    let mut wall_totals = vec![traj.step_wall_time_us.iter().sum::<u64>()];
    for _ in 1..repeat {
        traj = run_scenario(scn)?;
        wall_totals.push(traj.step_wall_time_us.iter().sum::<u64>());
    }
    if let Some(mem) = &traj.start_membership {
        if !mem.in_sigma {
            eprintln!(
                "warning: start lies outside the certified region (psi={:.6}, dist={:.6}); the error bounds are not in force",
                mem.psi, mem.dist
            );
        }
    }

    let (opt_cost, curve) = if baseline && scn.mode != RunMode::Optimal {
        let opt = run_benchmark(scn)?;
        let curve = cumulative_suboptimality_curve(&traj, &opt)?;
        (Some(opt.total_cost()), Some(curve))
    } else {
        (None, None)
    };

    let settle = match (settle_coord, settle_level) {
        (None, None) => None,
        (c, l) => Some((c.unwrap_or(0), l.unwrap_or(1e-3))),
    };
    let mut summary = summary_report(&SummaryInputs {
        scn,
        traj: &traj,
        optimal_cost: opt_cost,
        curve: curve.as_deref(),
        bounds: &[],
        settle,
    });
    if repeat > 1 {
        summary["repeat"] = json!({ "count": repeat, "wall_totals_us": wall_totals });
    }

    if let Some(dir) = &out {
        write_out(dir, "trajectory.csv", &write_csv(scn, &traj, curve.as_deref()))?;
        write_out(dir, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
        write_out(dir, "certificates.json", &serde_json::to_string_pretty(&certify_report(scn))?)?;
        say(format_args!(
            "{}: J_T={} flops={} -> {}",
            scn.name,
            round_sig(traj.total_cost(), 12),
            traj.total_flops(),
            dir.display()
        ))?;
    } else {
        say(format_args!("{}", serde_json::to_string_pretty(&summary)?))?;
    }
    Ok(())
}

fn run_lite(src: &Source, settle_coord: usize, settle_level: f64) -> Result<(BuiltScenario, Trajectory, Value)> {
    let (_, scn) = load_source(src)?;
    let traj = run_scenario(&scn)?;
    let (r, settle_opt_step) = if scn.mode != RunMode::Optimal {
        let opt = run_benchmark(&scn)?;
        (
            Some(traj.total_cost() - opt.total_cost()),
            opt.settled_from(settle_coord, settle_level),
        )
    } else {
        (None, None)
    };
    let lite = json!({
        "name": scn.name,
        "mode": scn.mode.as_str(),
        "config_sha256": scn.config_sha256,
        "decisions": decisions(&scn),
        "j_t": round_sig(traj.total_cost(), 12),
        "total_flops": traj.total_flops(),
        "settle_step": traj.settled_from(settle_coord, settle_level),
        "benchmark_settle_step": settle_opt_step,
        "incurred_suboptimality": r.map(|v| round_sig(v, 12)),
        "tainted": scn.tainted,
    });
    Ok((scn, traj, lite))
}

fn compare(
    a: &Source,
    b: &Source,
    out: Option<PathBuf>,
    settle_coord: usize,
    settle_level: f64,
) -> Result<()> {
    let (scn_a, traj_a, lite_a) = run_lite(a, settle_coord, settle_level)?;
    let (scn_b, traj_b, lite_b) = run_lite(b, settle_coord, settle_level)?;
    // effort and cost figures are only like-for-like on the same problem
    let mut off: Vec<&str> = Vec::new();
    if scn_a.model.a != scn_b.model.a || scn_a.model.b != scn_b.model.b {
        off.push("plant");
    }
    if scn_a.cost.q != scn_b.cost.q || scn_a.cost.r != scn_b.cost.r {
        off.push("cost");
    }
    if scn_a.x0 != scn_b.x0 {
        off.push("x0");
    }
    if scn_a.t != scn_b.t {
        off.push("t");
    }
    if !off.is_empty() {
        return Err(Error::TrajectoryMismatch(format!(
            "scenarios must share plant, cost, x0 and t; they differ in: {}",
            off.join(", ")
        )));
    }
    let fa = traj_a.total_flops();
    let fb = traj_b.total_flops();
    let report = json!({
        "settle": { "coordinate": settle_coord, "level": settle_level },
        "a": lite_a,
        "b": lite_b,
        "flop_ratio_b_over_a": if fa > 0 { Some(round_sig(fb as f64 / fa as f64, 12)) } else { None },
        "cost_delta_b_minus_a": round_sig(traj_b.total_cost() - traj_a.total_cost(), 12),
    });
    emit(&out, "compare.json", &report)?;
    if out.is_some() {
        say(format_args!("compared {} vs {}", scn_a.name, scn_b.name))?;
    }
    Ok(())
}

fn verify_bounds(scn: &BuiltScenario, out: Option<PathBuf>) -> Result<()> {
    if scn.mode == RunMode::Optimal {
        return Err(Error::InvalidConfig(
            "verify-bounds needs a budgeted scenario (tdmpc or dimsumpc mode)".into(),
        ));
    }
    if scn.opts.allow_uncertified || scn.tainted {
        return Err(Error::InvalidConfig(
            "verify-bounds refuses uncertified scenarios: drop allow_uncertified and meet the iteration threshold".into(),
        ));
    }
    let traj = run_scenario(scn)?;
    let opt = run_benchmark(scn)?;
    let r_emp = traj.total_cost() - opt.total_cost();
    let w0 = &scn.phases[0].qp.w;
    let x0_norm_w = (scn.x0.transpose() * w0 * &scn.x0)[(0, 0)].max(0.0).sqrt();

    let mut bounds: Vec<BoundReport> = Vec::new();
    match scn.mode {
        RunMode::TdMpc => {
            let cert = &scn.phases[0].cert;
            let ells = step_budgets(scn);
            let t = traj.t();

            let mut theo = Vec::with_capacity(t);
            let mut emp = Vec::with_capacity(t);
            for k in 0..t {
                theo.push(bound_delta_mu(cert, x0_norm_w, &ells, k)?);
                emp.push((&traj.z_history[k] - &opt.z_history[k]).norm());
            }
            bounds.push(check_bound(BoundKind::DeltaMu, theo, emp)?);

            let mut theo = Vec::with_capacity(t + 1);
            let mut emp = Vec::with_capacity(t + 1);
            for k in 0..=t {
                theo.push(bound_state(cert, x0_norm_w, &ells, k)?);
                emp.push(traj.states[k].norm());
            }
            bounds.push(check_bound(BoundKind::StateNorm, theo, emp)?);

            let (finite, _geometric) = bound_suboptimality(cert, x0_norm_w, &ells, t)?;
            let constant = ells.windows(2).all(|w| w[0] == w[1]);
            let kind = if constant { BoundKind::SuboptimalityFixed } else { BoundKind::SuboptimalityVarying };
            bounds.push(check_bound(kind, vec![finite], vec![r_emp])?);
        }
        RunMode::DimSumpc => {
            let certs: Vec<_> = scn.phases.iter().map(|p| &p.cert).collect();
            let budgets: Vec<u64> = scn
                .phases
                .iter()
                .map(|p| p.cert.declared_budget.unwrap_or(p.cert.ell_reference))
                .collect();
            let theo = bound_dim_sumpc(&certs, &budgets, &scn.schedule.switch_times, x0_norm_w)?;
            bounds.push(check_bound(BoundKind::DimSumpc, vec![theo], vec![r_emp])?);
        }
        RunMode::Optimal => unreachable!(),
    }

    let summary = summary_report(&SummaryInputs {
        scn,
        traj: &traj,
        optimal_cost: Some(opt.total_cost()),
        curve: None,
        bounds: &bounds,
        settle: None,
    });
    emit(&out, "bounds.json", &summary)?;
    let ok = bounds.iter().all(|b| b.satisfied);
    if out.is_some() {
        for b in &bounds {
            say(format_args!(
                "{}: {} (margin {:.3e})",
                b.kind.as_str(),
                if b.satisfied { "ok" } else { "VIOLATED" },
                b.margin
            ))?;
        }
    }
    if !ok {
        return Err(Error::CertificateInfeasible(
            "an error bound was violated by the measured run".into(),
        ));
    }
    Ok(())
}
