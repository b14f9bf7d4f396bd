use std::time::Instant;

use nalgebra::DVector;

use crate::certificates::{region_membership, CertificateSet, Membership};
use crate::condensed::{CondensedQp, SpectralData};
use crate::error::{Error, Result};
use crate::lti::{CostSpec, LtiModel};
use crate::pgm::{pgm_iterate_counted, solve_optimal, BoxSet};

/// One horizon design ready to run: condensed program, its spectral data, and
/// the certificate computed for it (possibly flagged when the declared budget
/// sits below ℓ*).
#[derive(Debug, Clone)]
pub struct Phase {
    pub qp: CondensedQp,
    pub sp: SpectralData,
    pub cert: CertificateSet,
}

/// How the optimizer iterate is re-initialized when the decision dimension
/// changes at a horizon switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    /// Keep the leading entries (the imminent planned inputs); pad with zeros
    /// if the dimension grows. Preserves box feasibility exactly.
    Truncate,
    /// Same head-keeping rule, spelled for the growing direction.
    ZeroPad,
    /// Restart from the zero sequence.
    Cold,
}

impl WarmStart {
    fn resize(&self, z: &DVector<f64>, dim: usize) -> DVector<f64> {
        match self {
            WarmStart::Cold => DVector::zeros(dim),
            WarmStart::Truncate | WarmStart::ZeroPad => {
                DVector::from_fn(dim, |i, _| if i < z.len() { z[i] } else { 0.0 })
            }
        }
    }
}

/// Knobs shared by the budgeted runners.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Tolerance of the diagnostic μ* solves.
    pub diag_tol: f64,
    /// Optional fixed-point residual at which a budgeted loop may stop early
    /// (used by the ℓ → ∞ proxy experiments); None runs the full budget.
    pub iter_tol: Option<f64>,
    pub warm_start: WarmStart,
    /// Accept budgets below ℓ* (the certificate flags them); refused otherwise.
    pub allow_uncertified: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            diag_tol: 1e-10,
            iter_tol: None,
            warm_start: WarmStart::Truncate,
            allow_uncertified: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Optimal,
    TdMpc,
    DimSumpc,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Optimal => "optimal",
            RunMode::TdMpc => "tdmpc",
            RunMode::DimSumpc => "dimsumpc",
        }
    }
}

/// Closed-loop record. States run 0..=T; per-step sequences run 0..T.
/// V and ψ are also evaluated at the terminal state (length T+1); the
/// iterate-dependent diagnostics (d, 𝓛) exist only where an iterate does.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mode: RunMode,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub z_history: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    pub terminal_cost: f64,
    pub v_values: Vec<f64>,
    pub psi_values: Vec<f64>,
    pub lyapunov_values: Vec<f64>,
    pub d_norms: Vec<f64>,
    pub iter_counts: Vec<u64>,
    pub horizon_at_step: Vec<usize>,
    pub step_wall_time_us: Vec<u64>,
    pub flop_proxy: Vec<u64>,
    /// Membership of the initial combined state in Σ of the first design.
    pub start_membership: Option<Membership>,
}

impl Trajectory {
    pub fn t(&self) -> usize {
        self.inputs.len()
    }

    /// J_T = Σ stage costs + terminal cost.
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum::<f64>() + self.terminal_cost
    }

    pub fn total_flops(&self) -> u64 {
        self.flop_proxy.iter().sum()
    }

    /// First step index from which every later |x₁| stays below `level`
    /// (component `coord` of the state), if any.
    pub fn settled_from(&self, coord: usize, level: f64) -> Option<usize> {
        let mut idx = None;
        for (k, x) in self.states.iter().enumerate() {
            if x[coord].abs() <= level {
                if idx.is_none() {
                    idx = Some(k);
                }
            } else {
                idx = None;
            }
        }
        idx
    }
}

/// Checks x_{k+1} = A x_k + B u_k on a finished trajectory.
pub fn validate_reconstruction(traj: &Trajectory, model: &LtiModel) -> Result<()> {
    for k in 0..traj.t() {
        let pred = model.step(&traj.states[k], &traj.inputs[k]);
        let gap = (&pred - &traj.states[k + 1]).norm();
        if gap > 1e-10 {
            return Err(Error::TrajectoryMismatch(format!(
                "plant reconstruction failed at step {k}: gap {gap:.3e}"
            )));
        }
    }
    Ok(())
}

fn stage_cost(cost: &CostSpec, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (x.transpose() * &cost.q * x)[(0, 0)] + (u.transpose() * &cost.r * u)[(0, 0)]
}

fn terminal_cost(cost: &CostSpec, x: &DVector<f64>) -> f64 {
    (x.transpose() * &cost.p * x)[(0, 0)]
}

struct DiagRow {
    v: f64,
    psi: f64,
    d_norm: f64,
    lyap: f64,
}

/// μ*-based diagnostics for the combined state (x, z). Solver work here is
/// bookkeeping, never counted against the controller budget.
fn diagnostics(
    phase: &Phase,
    bx: &BoxSet,
    x: &DVector<f64>,
    z: &DVector<f64>,
    tol: f64,
) -> Result<DiagRow> {
    let mu = solve_optimal(&phase.qp, &phase.sp, x, bx, tol)?;
    let v = phase.qp.cost(x, &mu).max(0.0);
    let psi = v.sqrt();
    let d_norm = (z - &mu).norm();
    Ok(DiagRow { v, psi, d_norm, lyap: psi + phase.cert.tau * d_norm })
}

/// Benchmark controller: solves the horizon problem to tolerance each step
/// and applies its first input.
pub fn run_optimal(
    model: &LtiModel,
    cost: &CostSpec,
    phase: &Phase,
    bx: &BoxSet,
    x0: &DVector<f64>,
    t: usize,
    tol: f64,
) -> Result<Trajectory> {
    if t == 0 {
        return Err(Error::InvalidConfig("simulation length must be at least 1".into()));
    }
    if x0.len() != model.n {
        return Err(Error::Dimension(format!(
            "x0 has length {}, plant expects {}",
            x0.len(),
            model.n
        )));
    }
    let mut traj = empty_trajectory(RunMode::Optimal, t);
    let mut x = x0.clone();
    for k in 0..t {
        let started = Instant::now();
        let mu = solve_optimal(&phase.qp, &phase.sp, &x, bx, tol)
            .map_err(|e| Error::StepFailed { step: k, source: Box::new(e) })?;
        let u = phase.qp.first_input(&mu);
        let next = model.step(&x, &u);
        let elapsed = started.elapsed().as_micros() as u64;

        let v = phase.qp.cost(&x, &mu).max(0.0);
        traj.v_values.push(v);
        traj.psi_values.push(v.sqrt());
        traj.d_norms.push(0.0);
        traj.lyapunov_values.push(v.sqrt());
        traj.stage_costs.push(stage_cost(cost, &x, &u));
        traj.states.push(x.clone());
        traj.inputs.push(u);
        traj.z_history.push(mu);
        traj.iter_counts.push(0);
        traj.horizon_at_step.push(phase.qp.horizon);
        traj.step_wall_time_us.push(elapsed);
        // the benchmark's active-set solve is outside the gradient-flop model
        traj.flop_proxy.push(0);
        x = next;
    }
    finish_trajectory(&mut traj, cost, phase, bx, x)?;
    Ok(traj)
}

/// Budgeted controller: ℓ_k projected gradient steps on the warm-started
/// iterate, then the head of the iterate is applied to the plant.
pub fn run_tdmpc(
    model: &LtiModel,
    cost: &CostSpec,
    phase: &Phase,
    bx: &BoxSet,
    x0: &DVector<f64>,
    z_init: Option<&DVector<f64>>,
    t: usize,
    budgets: &[u64],
    opts: &SimOptions,
) -> Result<Trajectory> {
    let schedule = DimSchedule {
        horizons: vec![phase.qp.horizon],
        switch_times: vec![],
        budgets: vec![Budget::PerStep(budgets.to_vec())],
    };
    let mut traj = run_dim_sumpc(
        model,
        cost,
        std::slice::from_ref(phase),
        &schedule,
        bx,
        x0,
        z_init,
        t,
        opts,
    )?;
    traj.mode = RunMode::TdMpc;
    Ok(traj)
}

/// Per-phase iteration budget.
#[derive(Debug, Clone)]
pub enum Budget {
    Fixed(u64),
    /// Indexed by step offset within the phase.
    PerStep(Vec<u64>),
}

impl Budget {
    fn at(&self, offset: usize) -> u64 {
        match self {
            Budget::Fixed(l) => *l,
            Budget::PerStep(v) => v[offset.min(v.len().saturating_sub(1))],
        }
    }

    fn validate(&self, span: Option<usize>) -> Result<()> {
        match self {
            Budget::Fixed(l) if *l == 0 => {
                Err(Error::InvalidSchedule("budgets must be positive".into()))
            }
            Budget::PerStep(v) if v.is_empty() || v.contains(&0) => {
                Err(Error::InvalidSchedule("per-step budgets must be positive".into()))
            }
            Budget::PerStep(v) => {
                if let Some(s) = span {
                    if v.len() != s {
                        return Err(Error::InvalidSchedule(format!(
                            "per-step budget list has {} entries for a phase of {} steps",
                            v.len(),
                            s
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Diminishing-horizon plan: strictly decreasing horizons, strictly
/// increasing absolute switch times, one budget rule per phase.
#[derive(Debug, Clone)]
pub struct DimSchedule {
    pub horizons: Vec<usize>,
    pub switch_times: Vec<u64>,
    pub budgets: Vec<Budget>,
}

impl DimSchedule {
    pub fn validate(&self, t: usize) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::InvalidSchedule("at least one phase is required".into()));
        }
        if self.switch_times.len() + 1 != self.horizons.len()
            || self.budgets.len() != self.horizons.len()
        {
            return Err(Error::InvalidSchedule(format!(
                "{} horizons need {} switch times and {} budgets, got {} and {}",
                self.horizons.len(),
                self.horizons.len() - 1,
                self.horizons.len(),
                self.switch_times.len(),
                self.budgets.len()
            )));
        }
        for w in self.horizons.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::InvalidSchedule(format!(
                    "horizons must strictly decrease, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, w) in self.switch_times.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::InvalidSchedule(format!(
                    "switch times must strictly increase, got k_{} = {} then k_{} = {}",
                    i + 1,
                    w[0],
                    i + 2,
                    w[1]
                )));
            }
        }
        if let Some(first) = self.switch_times.first() {
            if *first == 0 {
                return Err(Error::InvalidSchedule("first switch time must be positive".into()));
            }
        }
        if let Some(last) = self.switch_times.last() {
            if *last as usize >= t {
                return Err(Error::InvalidSchedule(format!(
                    "last switch time {last} does not precede the run length {t}"
                )));
            }
        }
        for (j, b) in self.budgets.iter().enumerate() {
            let start = if j == 0 { 0 } else { self.switch_times[j - 1] as usize };
            let end = if j < self.switch_times.len() {
                self.switch_times[j] as usize
            } else {
                t
            };
            b.validate(Some(end - start))?;
        }
        Ok(())
    }

    fn phase_at(&self, k: usize) -> usize {
        self.switch_times.iter().filter(|&&s| (s as usize) <= k).count()
    }

    fn phase_start(&self, j: usize) -> usize {
        if j == 0 {
            0
        } else {
            self.switch_times[j - 1] as usize
        }
    }
}

/// Diminishing-horizon run: TD-MPC steps within each phase; at each switch
/// time the design shrinks and the iterate is carried over per the warm-start
/// rule. The initial combined state's Σ-membership is measured and recorded
/// (a violation is reported, not fatal — override scenarios run outside the
/// certified region on purpose).
#[allow(clippy::too_many_arguments)]
pub fn run_dim_sumpc(
    model: &LtiModel,
    cost: &CostSpec,
    phases: &[Phase],
    schedule: &DimSchedule,
    bx: &BoxSet,
    x0: &DVector<f64>,
    z_init: Option<&DVector<f64>>,
    t: usize,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if t == 0 {
        return Err(Error::InvalidConfig("simulation length must be at least 1".into()));
    }
    schedule.validate(t)?;
    if phases.len() != schedule.horizons.len() {
        return Err(Error::InvalidSchedule(format!(
            "{} phases supplied for {} scheduled horizons",
            phases.len(),
            schedule.horizons.len()
        )));
    }
    for (phase, &n) in phases.iter().zip(schedule.horizons.iter()) {
        if phase.qp.horizon != n {
            return Err(Error::InvalidSchedule(format!(
                "phase design horizon {} disagrees with schedule entry {}",
                phase.qp.horizon, n
            )));
        }
        if phase.cert.budget_below_threshold && !opts.allow_uncertified {
            return Err(Error::BudgetBelowThreshold {
                budget: phase.cert.declared_budget.unwrap_or(0),
                threshold: phase.cert.ell_star,
            });
        }
    }
    if x0.len() != model.n {
        return Err(Error::Dimension(format!(
            "x0 has length {}, plant expects {}",
            x0.len(),
            model.n
        )));
    }

    let mut z = match z_init {
        Some(z0) => {
            if z0.len() != phases[0].qp.dim() {
                return Err(Error::Dimension(format!(
                    "z_init has length {}, first design expects {}",
                    z0.len(),
                    phases[0].qp.dim()
                )));
            }
            if !bx.contains_seq(z0, 1e-12) {
                return Err(Error::InvalidConfig(
                    "z_init violates the input box".into(),
                ));
            }
            z0.clone()
        }
        None => DVector::zeros(phases[0].qp.dim()),
    };

    let mut traj = empty_trajectory(
        if phases.len() > 1 { RunMode::DimSumpc } else { RunMode::TdMpc },
        t,
    );
    traj.start_membership = Some(region_membership(
        &phases[0].cert,
        &phases[0].qp,
        &phases[0].sp,
        x0,
        &z,
        bx,
    )?);

    let mut x = x0.clone();
    let mut current = 0usize;
    for k in 0..t {
        let j = schedule.phase_at(k);
        if j != current {
            z = opts.warm_start.resize(&z, phases[j].qp.dim());
            current = j;
        }
        let phase = &phases[j];
        let ell = schedule.budgets[j].at(k - schedule.phase_start(j));

        let started = Instant::now();
        let (z_next, used) =
            pgm_iterate_counted(&phase.qp, &phase.sp, &x, &z, bx, ell, opts.iter_tol);
        let u = phase.qp.first_input(&z_next);
        let next = model.step(&x, &u);
        let elapsed = started.elapsed().as_micros() as u64;

        z = z_next;
        let dim = phase.qp.dim() as u64;
        let diag = diagnostics(phase, bx, &x, &z, opts.diag_tol)
            .map_err(|e| Error::StepFailed { step: k, source: Box::new(e) })?;
        traj.v_values.push(diag.v);
        traj.psi_values.push(diag.psi);
        traj.d_norms.push(diag.d_norm);
        traj.lyapunov_values.push(diag.lyap);
        traj.stage_costs.push(stage_cost(cost, &x, &u));
        traj.states.push(x.clone());
        traj.inputs.push(u);
        traj.z_history.push(z.clone());
        traj.iter_counts.push(used);
        traj.horizon_at_step.push(phase.qp.horizon);
        traj.step_wall_time_us.push(elapsed);
        traj.flop_proxy.push(used * dim * dim + dim * model.n as u64);
        x = next;
    }
    let last = phases.last().unwrap();
    finish_trajectory(&mut traj, cost, last, bx, x)?;
    Ok(traj)
}

fn empty_trajectory(mode: RunMode, t: usize) -> Trajectory {
    Trajectory {
        mode,
        states: Vec::with_capacity(t + 1),
        inputs: Vec::with_capacity(t),
        z_history: Vec::with_capacity(t),
        stage_costs: Vec::with_capacity(t),
        terminal_cost: 0.0,
        v_values: Vec::with_capacity(t + 1),
        psi_values: Vec::with_capacity(t + 1),
        lyapunov_values: Vec::with_capacity(t),
        d_norms: Vec::with_capacity(t),
        iter_counts: Vec::with_capacity(t),
        horizon_at_step: Vec::with_capacity(t),
        step_wall_time_us: Vec::with_capacity(t),
        flop_proxy: Vec::with_capacity(t),
        start_membership: None,
    }
}

fn finish_trajectory(
    traj: &mut Trajectory,
    cost: &CostSpec,
    phase: &Phase,
    bx: &BoxSet,
    x_final: DVector<f64>,
) -> Result<()> {
    let step = traj.inputs.len();
    let mu = solve_optimal(&phase.qp, &phase.sp, &x_final, bx, 1e-10)
        .map_err(|e| Error::StepFailed { step, source: Box::new(e) })?;
    let v = phase.qp.cost(&x_final, &mu).max(0.0);
    traj.v_values.push(v);
    traj.psi_values.push(v.sqrt());
    traj.terminal_cost = terminal_cost(cost, &x_final);
    traj.states.push(x_final);
    Ok(())
}

/// R = J_T(sub) − J_T(opt). Rejects pairs that do not share the initial
/// state and length.
pub fn incurred_suboptimality(sub: &Trajectory, opt: &Trajectory) -> Result<f64> {
    check_comparable(sub, opt)?;
    Ok(sub.total_cost() - opt.total_cost())
}

/// Partial-sum gap: element k < T compares stage costs through step k; the
/// final element adds the terminal costs and equals incurred_suboptimality.
pub fn cumulative_suboptimality_curve(sub: &Trajectory, opt: &Trajectory) -> Result<Vec<f64>> {
    check_comparable(sub, opt)?;
    let t = sub.t();
    let mut out = Vec::with_capacity(t + 1);
    let mut acc = 0.0;
    for k in 0..t {
        acc += sub.stage_costs[k] - opt.stage_costs[k];
        out.push(acc);
    }
    out.push(acc + sub.terminal_cost - opt.terminal_cost);
    Ok(out)
}

fn check_comparable(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.t() != b.t() {
        return Err(Error::TrajectoryMismatch(format!(
            "lengths differ: {} vs {}",
            a.t(),
            b.t()
        )));
    }
    let gap = (&a.states[0] - &b.states[0]).norm();
    if gap > 1e-12 {
        return Err(Error::TrajectoryMismatch(format!(
            "initial states differ by {gap:.3e}"
        )));
    }
    Ok(())
}
