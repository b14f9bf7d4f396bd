use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificates::{compute_certificates_with_budget, h0_for, switch_time};
use crate::condensed::{build_condensed, spectral_data};
use crate::error::{Error, Result};
use crate::lti::{discretize_euler, discretize_zoh, solve_dare, CostSpec, LtiModel};
use crate::pgm::{solve_optimal, BoxSet};
use crate::sim::{Budget, DimSchedule, Phase, RunMode, SimOptions, WarmStart};

/// On-disk scenario description. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub model: ModelCfg,
    pub cost: CostCfg,
    #[serde(rename = "box")]
    pub box_cfg: BoxCfg,
    pub mode: String,
    pub x0: Vec<f64>,
    pub t: usize,
    pub horizon: Option<usize>,
    pub budget: Option<u64>,
    pub budgets: Option<Vec<u64>>,
    pub schedule: Option<ScheduleCfg>,
    pub tol: Option<f64>,
    pub iter_tol: Option<f64>,
    pub warm_start: Option<String>,
    pub z_init: Option<ZInitCfg>,
    pub allow_uncertified: Option<bool>,
    pub use_displayed_h_next: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    pub continuous: Option<ContinuousCfg>,
    pub discrete: Option<DiscreteCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousCfg {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub ts: f64,
    pub method: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteCfg {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCfg {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxCfg {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCfg {
    pub horizons: Vec<usize>,
    /// Absolute switch steps; omit to derive them from the certified
    /// transition rule, cumulatively from the initial state.
    pub switch_times: Option<Vec<u64>>,
    pub budgets: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZInitCfg {
    Named(String),
    Values(Vec<f64>),
}

/// A scenario compiled down to runnable pieces.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub name: String,
    pub model: LtiModel,
    pub cost: CostSpec,
    pub bx: BoxSet,
    pub mode: RunMode,
    pub phases: Vec<Phase>,
    pub schedule: DimSchedule,
    pub x0: DVector<f64>,
    pub z_init: Option<DVector<f64>>,
    pub t: usize,
    pub opts: SimOptions,
    /// Benchmark solver tolerance.
    pub tol: f64,
    pub config_sha256: String,
    /// Some declared budget sits at or below its phase's ℓ*.
    pub tainted: bool,
    /// Switch times were derived (not overridden by the config).
    pub auto_switch_times: bool,
    /// Raw (un-rounded) derived switch values, for reporting.
    pub switch_raw: Vec<f64>,
    pub discretization: &'static str,
    pub seed: u64,
}

pub fn parse_config(json: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(json)
        .map_err(|e| Error::InvalidConfig(format!("schema: {e}")))?;
    Ok(cfg)
}

pub fn config_sha256(raw: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(raw.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn matrix_from(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InvalidConfig(format!("{field}: matrix must be non-empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!("{field}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("{field}: entries must be finite")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn build_model(cfg: &ModelCfg) -> Result<(LtiModel, &'static str)> {
    match (&cfg.continuous, &cfg.discrete) {
        (Some(_), Some(_)) => Err(Error::InvalidConfig(
            "model: give either continuous or discrete, not both".into(),
        )),
        (None, None) => Err(Error::InvalidConfig(
            "model: one of continuous or discrete is required".into(),
        )),
        (Some(c), None) => {
            let a = matrix_from(&c.a, "model.continuous.a")?;
            let b = matrix_from(&c.b, "model.continuous.b")?;
            match c.method.as_deref().unwrap_or("zoh") {
                "zoh" => Ok((discretize_zoh(&a, &b, c.ts)?, "zoh")),
                "euler" => Ok((discretize_euler(&a, &b, c.ts)?, "euler")),
                other => Err(Error::InvalidConfig(format!(
                    "model.continuous.method: unknown method '{other}'"
                ))),
            }
        }
        (None, Some(d)) => {
            let a = matrix_from(&d.a, "model.discrete.a")?;
            let b = matrix_from(&d.b, "model.discrete.b")?;
            Ok((LtiModel::new(a, b)?, "discrete"))
        }
    }
}

fn parse_mode(mode: &str) -> Result<RunMode> {
    match mode {
        "optimal" => Ok(RunMode::Optimal),
        "tdmpc" => Ok(RunMode::TdMpc),
        "dimsumpc" => Ok(RunMode::DimSumpc),
        other => Err(Error::InvalidConfig(format!(
            "mode: expected optimal | tdmpc | dimsumpc, got '{other}'"
        ))),
    }
}

fn parse_warm_start(s: Option<&str>) -> Result<WarmStart> {
    match s.unwrap_or("truncate") {
        "truncate" => Ok(WarmStart::Truncate),
        "zero_pad" => Ok(WarmStart::ZeroPad),
        "cold" => Ok(WarmStart::Cold),
        other => Err(Error::InvalidConfig(format!(
            "warm_start: expected truncate | zero_pad | cold, got '{other}'"
        ))),
    }
}

/// Compiles a config into phases, schedule and options, computing every
/// phase certificate along the way. Budgets at or below ℓ* are refused
/// unless the config opts into uncertified operation, which taints the run.
pub fn build_scenario(cfg: &ScenarioConfig, raw_json: &str) -> Result<BuiltScenario> {
    let (model, discretization) = build_model(&cfg.model)?;
    let q = matrix_from(&cfg.cost.q, "cost.q")?;
    let r = matrix_from(&cfg.cost.r, "cost.r")?;
    let cost = solve_dare(&model, &q, &r)?;
    let bx = BoxSet::new(
        DVector::from_row_slice(&cfg.box_cfg.lower),
        DVector::from_row_slice(&cfg.box_cfg.upper),
    )?;
    if bx.dim() != model.m {
        return Err(Error::InvalidConfig(format!(
            "box: dimension {} does not match the {} plant inputs",
            bx.dim(),
            model.m
        )));
    }
    let mode = parse_mode(&cfg.mode)?;
    if cfg.x0.len() != model.n {
        return Err(Error::InvalidConfig(format!(
            "x0: length {} does not match the state dimension {}",
            cfg.x0.len(),
            model.n
        )));
    }
    let x0 = DVector::from_row_slice(&cfg.x0);
    if cfg.t == 0 {
        return Err(Error::InvalidConfig("t: must be at least 1".into()));
    }
    let allow_uncertified = cfg.allow_uncertified.unwrap_or(false);
    let tol = cfg.tol.unwrap_or(1e-10);

    // horizons and per-phase declared budgets
    let (horizons, phase_budgets): (Vec<usize>, Vec<u64>) = match mode {
        RunMode::DimSumpc => {
            let sch = cfg.schedule.as_ref().ok_or_else(|| {
                Error::InvalidConfig("schedule: required for dimsumpc mode".into())
            })?;
            if sch.budgets.len() != sch.horizons.len() {
                return Err(Error::InvalidConfig(format!(
                    "schedule.budgets: {} entries for {} horizons",
                    sch.budgets.len(),
                    sch.horizons.len()
                )));
            }
            (sch.horizons.clone(), sch.budgets.clone())
        }
        _ => {
            let n = cfg.horizon.ok_or_else(|| {
                Error::InvalidConfig("horizon: required outside dimsumpc mode".into())
            })?;
            let declared = match (&cfg.budgets, cfg.budget) {
                (Some(per_step), _) => {
                    if per_step.len() != cfg.t {
                        return Err(Error::InvalidConfig(format!(
                            "budgets: {} entries for t = {}",
                            per_step.len(),
                            cfg.t
                        )));
                    }
                    *per_step.iter().min().unwrap_or(&0)
                }
                (None, Some(b)) => b,
                (None, None) => {
                    if mode == RunMode::TdMpc {
                        return Err(Error::InvalidConfig(
                            "budget: required for tdmpc mode".into(),
                        ));
                    }
                    0
                }
            };
            (vec![n], vec![declared])
        }
    };

    let mut phases = Vec::with_capacity(horizons.len());
    let mut tainted = false;
    for (idx, &n) in horizons.iter().enumerate() {
        let qp = build_condensed(&model, &cost, n)?;
        let sp = spectral_data(&qp)?;
        let declared = match mode {
            RunMode::Optimal => None,
            _ => Some(phase_budgets[idx]),
        };
        let cert = compute_certificates_with_budget(&model, &cost, &qp, &sp, &bx, declared)?;
        if cert.budget_below_threshold {
            if !allow_uncertified {
                return Err(Error::BudgetBelowThreshold {
                    budget: phase_budgets[idx],
                    threshold: cert.ell_star,
                });
            }
            tainted = true;
        }
        phases.push(Phase { qp, sp, cert });
    }

    // schedule assembly
    let mut auto_switch_times = false;
    let mut switch_raw = Vec::new();
    let schedule = match mode {
        RunMode::DimSumpc => {
            let sch = cfg.schedule.as_ref().unwrap();
            let switch_times = match &sch.switch_times {
                Some(ks) => ks.clone(),
                None => {
                    auto_switch_times = true;
                    let mut ks: Vec<u64> = Vec::new();
                    for j in 1..phases.len() {
                        let prev = &phases[j - 1];
                        let norm_w =
                            (x0.transpose() * &prev.qp.w * &x0)[(0, 0)].max(0.0).sqrt();
                        let h_override = if cfg.use_displayed_h_next.unwrap_or(false) {
                            Some(h0_for(&phases[j].cert, phase_budgets[j]))
                        } else {
                            None
                        };
                        let (raw, k) = switch_time(
                            &prev.cert,
                            phases[j].qp.horizon,
                            norm_w,
                            phase_budgets[j - 1],
                            h_override,
                        )?;
                        switch_raw.push(raw);
                        let k_min = ks.last().map(|p| p + 1).unwrap_or(1);
                        ks.push(k.max(k_min));
                    }
                    ks
                }
            };
            DimSchedule {
                horizons: horizons.clone(),
                switch_times,
                budgets: phase_budgets.iter().map(|&b| Budget::Fixed(b)).collect(),
            }
        }
        _ => {
            let budgets = match (&cfg.budgets, cfg.budget) {
                (Some(per_step), _) => Budget::PerStep(per_step.clone()),
                (None, Some(b)) => Budget::Fixed(b),
                (None, None) => Budget::Fixed(1), // optimal mode: unused
            };
            DimSchedule {
                horizons: horizons.clone(),
                switch_times: vec![],
                budgets: vec![budgets],
            }
        }
    };
    if mode != RunMode::Optimal {
        schedule.validate(cfg.t)?;
    }

    let opts = SimOptions {
        diag_tol: 1e-10,
        iter_tol: cfg.iter_tol,
        warm_start: parse_warm_start(cfg.warm_start.as_deref())?,
        allow_uncertified,
    };

    let z_init = match &cfg.z_init {
        None => None,
        Some(ZInitCfg::Named(name)) => match name.as_str() {
            "cold" => None,
            "optimal" => {
                let p0 = &phases[0];
                Some(solve_optimal(&p0.qp, &p0.sp, &x0, &bx, 1e-10)?)
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "z_init: expected cold | optimal | numeric array, got '{other}'"
                )))
            }
        },
        Some(ZInitCfg::Values(vals)) => {
            if vals.len() != phases[0].qp.dim() {
                return Err(Error::InvalidConfig(format!(
                    "z_init: {} entries, first design needs {}",
                    vals.len(),
                    phases[0].qp.dim()
                )));
            }
            Some(DVector::from_row_slice(vals))
        }
    };

    Ok(BuiltScenario {
        name: cfg.name.clone().unwrap_or_else(|| "unnamed".into()),
        model,
        cost,
        bx,
        mode,
        phases,
        schedule,
        x0,
        z_init,
        t: cfg.t,
        opts,
        tol,
        config_sha256: config_sha256(raw_json),
        tainted,
        auto_switch_times,
        switch_raw,
        discretization,
        seed: cfg.seed.unwrap_or(0),
    })
}

/// Parses and builds in one step.
pub fn load_scenario(raw_json: &str) -> Result<BuiltScenario> {
    let cfg = parse_config(raw_json)?;
    build_scenario(&cfg, raw_json)
}

/// Per-step iteration counts for a single-design run.
pub fn step_budgets(scn: &BuiltScenario) -> Vec<u64> {
    match &scn.schedule.budgets[0] {
        Budget::Fixed(l) => vec![*l; scn.t],
        Budget::PerStep(v) => v.clone(),
    }
}

/// Runs the scenario in its configured mode.
pub fn run_scenario(scn: &BuiltScenario) -> Result<crate::sim::Trajectory> {
    match scn.mode {
        RunMode::Optimal => crate::sim::run_optimal(
            &scn.model, &scn.cost, &scn.phases[0], &scn.bx, &scn.x0, scn.t, scn.tol,
        ),
        RunMode::TdMpc => {
            let budgets = step_budgets(scn);
            crate::sim::run_tdmpc(
                &scn.model,
                &scn.cost,
                &scn.phases[0],
                &scn.bx,
                &scn.x0,
                scn.z_init.as_ref(),
                scn.t,
                &budgets,
                &scn.opts,
            )
        }
        RunMode::DimSumpc => crate::sim::run_dim_sumpc(
            &scn.model,
            &scn.cost,
            &scn.phases,
            &scn.schedule,
            &scn.bx,
            &scn.x0,
            scn.z_init.as_ref(),
            scn.t,
            &scn.opts,
        ),
    }
}

/// Benchmark controller on the first design, same start and length; the
/// reference every suboptimality figure is measured against.
pub fn run_benchmark(scn: &BuiltScenario) -> Result<crate::sim::Trajectory> {
    crate::sim::run_optimal(
        &scn.model, &scn.cost, &scn.phases[0], &scn.bx, &scn.x0, scn.t, scn.tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "scalar",
        "model": { "discrete": { "a": [[1.2]], "b": [[1.0]] } },
        "cost": { "q": [[1.0]], "r": [[1.0]] },
        "box": { "lower": [-1.0], "upper": [1.0] },
        "mode": "tdmpc",
        "horizon": 3,
        "budget": 26,
        "x0": [0.04],
        "t": 40
    }"#;

    #[test]
    fn minimal_tdmpc_config_builds() {
        let scn = load_scenario(MINIMAL).unwrap();
        assert_eq!(scn.phases.len(), 1);
        assert!(!scn.tainted);
        assert_eq!(scn.mode, RunMode::TdMpc);
        assert_eq!(scn.config_sha256.len(), 64);
        let cert = &scn.phases[0].cert;
        assert!(cert.ell_star < 26.0 && cert.ell_star > 20.0);
    }

    #[test]
    fn config_round_trips_through_serialization() {
        // parse -> serialize -> parse must be the identity, for every preset
        for name in crate::presets::NAMES {
            let raw = crate::presets::preset(name).unwrap();
            let cfg = parse_config(raw).unwrap();
            let echoed = serde_json::to_string(&cfg).unwrap();
            let again = parse_config(&echoed).unwrap();
            assert_eq!(cfg, again, "round trip changed {name}");
        }
        let cfg = parse_config(MINIMAL).unwrap();
        let again = parse_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn uncertified_budget_needs_the_flag() {
        let raw = MINIMAL.replace("\"budget\": 26", "\"budget\": 5");
        match load_scenario(&raw) {
            Err(Error::BudgetBelowThreshold { budget, .. }) => assert_eq!(budget, 5),
            other => panic!("expected refusal, got {other:?}"),
        }
        let raw2 = raw.replace("\"mode\": \"tdmpc\"", "\"mode\": \"tdmpc\", \"allow_uncertified\": true");
        let scn = load_scenario(&raw2).unwrap();
        assert!(scn.tainted);
    }

    #[test]
    fn config_errors_name_the_offending_field() {
        let no_model = MINIMAL.replace(
            "\"model\": { \"discrete\": { \"a\": [[1.2]], \"b\": [[1.0]] } },",
            "\"model\": {},",
        );
        let err = load_scenario(&no_model).unwrap_err();
        assert!(err.to_string().contains("model"), "got: {err}");

        let bad_x0 = MINIMAL.replace("\"x0\": [0.04]", "\"x0\": [0.04, 0.0]");
        let err = load_scenario(&bad_x0).unwrap_err();
        assert!(err.to_string().contains("x0"), "got: {err}");

        let ragged = MINIMAL.replace("[[1.2]]", "[[1.2, 0.0]]");
        let err = load_scenario(&ragged).unwrap_err();
        assert!(err.to_string().to_lowercase().contains("square") || err.to_string().contains("a"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let raw = MINIMAL.replace("\"t\": 40", "\"t\": 40, \"mystery\": 1");
        assert!(matches!(load_scenario(&raw), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn auto_switch_times_are_monotone() {
        let raw = r#"{
            "name": "dim-auto",
            "model": { "discrete": { "a": [[1.05]], "b": [[1.0]] } },
            "cost": { "q": [[1.0]], "r": [[1.0]] },
            "box": { "lower": [-1.0], "upper": [1.0] },
            "mode": "dimsumpc",
            "schedule": { "horizons": [6, 4, 2], "budgets": [224, 24, 7] },
            "x0": [0.8],
            "z_init": "optimal",
            "t": 40
        }"#;
        let scn = load_scenario(raw).unwrap();
        assert!(scn.auto_switch_times);
        assert_eq!(scn.schedule.switch_times, vec![13, 20]);
        assert_eq!(scn.switch_raw.len(), 2);
        assert!(!scn.tainted);
    }

    #[test]
    fn continuous_model_discretizes_and_matches_direct_zoh() {
        let raw = r#"{
            "model": { "continuous": { "a": [[0.0, 1.0], [14.715, 0.0]], "b": [[0.0], [30.0]], "ts": 0.1 } },
            "cost": { "q": [[1.0, 0.0], [0.0, 1.0]], "r": [[1.0]] },
            "box": { "lower": [-1.0], "upper": [1.0] },
            "mode": "optimal",
            "horizon": 2,
            "x0": [0.1, 0.0],
            "t": 10
        }"#;
        let scn = load_scenario(raw).unwrap();
        assert_eq!(scn.discretization, "zoh");
        assert!((scn.model.a[(0, 0)] - 1.0744816504418602).abs() < 1e-10);
    }
}
