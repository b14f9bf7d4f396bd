use nalgebra::{DMatrix, DVector};

use crate::condensed::{
    sym_inv_sqrt, sym_sqrt, weighted_eig_bounds, CondensedQp, SpectralData,
};
use crate::error::{Error, Result};
use crate::lti::{operator_norm, symmetric_eig_range, CostSpec, LtiModel};
use crate::pgm::{solve_optimal, BoxSet};

/// Every scalar the contraction analysis produces for one horizon design:
/// decay and coupling constants, the iteration threshold, the selected τ with
/// its feasible interval, the certified per-step rate, and the region levels.
/// Spectral norms that the bound evaluators reuse ride along.
#[derive(Debug, Clone)]
pub struct CertificateSet {
    pub horizon: usize,
    pub alpha: f64,
    pub eta: f64,
    pub beta: f64,
    pub sigma: f64,
    pub omega: f64,
    pub kappa: f64,
    pub lipschitz: f64,
    pub ell_star: f64,
    /// Budget at which τ, ε and h₀ below were selected.
    pub ell_reference: u64,
    pub declared_budget: Option<u64>,
    /// True when a declared budget failed to clear ℓ* and the reference
    /// budget ⌈ℓ*⌉ + 1 was used for selection instead.
    pub budget_below_threshold: bool,
    pub tau: f64,
    pub tau_interval: (f64, f64),
    pub epsilon: f64,
    pub h0: f64,
    /// Largest sublevel of ‖x‖²_P on which the terminal law respects the box.
    pub c_terminal: f64,
    pub d: f64,
    pub r_region: f64,
    /// max{1/τ, ‖H^{-1/2}‖‖H^{-1/2}GP^{-1/2}‖}: contraction-to-plant constant.
    pub c_lemma4: f64,
    pub b0: f64,
    pub cbar: f64,
    // retained operator data for bound evaluation and scheduling
    pub w_inv_sqrt_norm: f64,
    pub p_inv_sqrt_norm: f64,
    pub lam_w_min_p: f64,
    pub lam_w_max: f64,
    pub lam_p_min: f64,
    pub r_norm: f64,
    pub q_bar_norm: f64,
}

pub(crate) fn beta_of(w: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    let (lam, _) = weighted_eig_bounds(q, w)?;
    if lam <= 0.0 || lam >= 1.0 - 1e-12 {
        return Err(Error::CertificateInfeasible(format!(
            "lambda_W^-(Q) = {lam:.6} outside (0,1); decay constant undefined"
        )));
    }
    Ok((1.0 - lam).sqrt())
}

fn eta_pow(eta: f64, ell: u64) -> f64 {
    if eta <= 0.0 {
        return if ell == 0 { 1.0 } else { 0.0 };
    }
    let p = eta.powf(ell as f64);
    if p < 1e-300 {
        0.0
    } else {
        p
    }
}

/// Iteration threshold ℓ* = [log(1−β) − log(σκ + ω(1−β))]/log(η); any budget
/// strictly above it admits a feasible τ.
pub fn ell_star(beta: f64, sigma: f64, omega: f64, kappa: f64, eta: f64) -> Result<f64> {
    let denom = sigma * kappa + omega * (1.0 - beta);
    if denom <= 0.0 {
        return Err(Error::CertificateInfeasible(format!(
            "sigma*kappa + omega*(1-beta) = {denom:.6e} must be positive"
        )));
    }
    if eta <= 0.0 {
        return Ok(0.0);
    }
    Ok(((1.0 - beta).ln() - denom.ln()) / eta.ln())
}

/// Picks τ inside the feasible interval (σ/(1−η^ℓω), (1−β)/(η^ℓκ)) minimizing
/// ε(τ) = max{β + τκη^ℓ, σ/τ + η^ℓω}: the two branches cross at the returned
/// point, located by bisection and clipped into the interval shrunk by 1e-9.
pub fn select_tau(
    beta: f64,
    sigma: f64,
    omega: f64,
    kappa: f64,
    eta: f64,
    ell: u64,
) -> Result<(f64, (f64, f64))> {
    let threshold = ell_star(beta, sigma, omega, kappa, eta)?;
    let el = eta_pow(eta, ell);
    if el == 0.0 {
        // both inequality couplings vanish; balance β against σ/τ
        let tau = sigma / beta;
        return Ok((tau, (sigma, f64::INFINITY)));
    }
    if el * omega >= 1.0 {
        return Err(Error::BudgetBelowThreshold { budget: ell, threshold });
    }
    let lo0 = sigma / (1.0 - el * omega);
    let hi0 = if el * kappa > 0.0 {
        (1.0 - beta) / (el * kappa)
    } else {
        f64::INFINITY
    };
    if lo0 >= hi0 {
        return Err(Error::BudgetBelowThreshold { budget: ell, threshold });
    }
    let g = |tau: f64| beta + tau * kappa * el - sigma / tau - el * omega;
    let mut lo = lo0 * (1.0 + 1e-9);
    let mut hi = if hi0.is_finite() {
        hi0 * (1.0 - 1e-9)
    } else {
        // expand until the increasing branch dominates
        let mut probe = (2.0 * lo).max(1.0);
        let mut hits = 0;
        while g(probe) < 0.0 && hits < 200 {
            probe *= 2.0;
            hits += 1;
        }
        probe
    };
    if g(lo) >= 0.0 {
        // crossing sits at or below the interval floor; the floor is optimal
        return Ok((lo, (lo0, hi0)));
    }
    if g(hi) <= 0.0 {
        return Ok((hi, (lo0, hi0)));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    let tau = (0.5 * (lo + hi)).clamp(lo0 * (1.0 + 1e-9), hi0 * (1.0 - 1e-9));
    Ok((tau, (lo0, hi0)))
}

fn epsilon_of(beta: f64, sigma: f64, omega: f64, kappa: f64, eta: f64, tau: f64, ell: u64) -> f64 {
    let el = eta_pow(eta, ell);
    (beta + tau * kappa * el).max(sigma / tau + el * omega)
}

/// Certified per-step decay ε_k = max{β + τκη^{ℓ_k}, (σ + τη^{ℓ_k}ω)/τ} for a
/// budget ℓ_k, using the τ already selected in the certificate.
pub fn epsilon_rate(cert: &CertificateSet, ell_k: u64) -> Result<f64> {
    if (ell_k as f64) <= cert.ell_star {
        return Err(Error::BudgetBelowThreshold {
            budget: ell_k,
            threshold: cert.ell_star,
        });
    }
    let eps = epsilon_of(
        cert.beta,
        cert.sigma,
        cert.omega,
        cert.kappa,
        cert.eta,
        cert.tau,
        ell_k,
    );
    if eps >= 1.0 {
        return Err(Error::CertificateInfeasible(format!(
            "epsilon({ell_k}) = {eps:.9} not below 1 for the selected tau"
        )));
    }
    Ok(eps)
}

/// Warm-start inflation h₀ = 1 + τη^{ℓ₀}L‖W^{-1/2}‖ for a declared first
/// budget ℓ₀.
pub fn h0_for(cert: &CertificateSet, ell0: u64) -> f64 {
    1.0 + cert.tau * eta_pow(cert.eta, ell0) * cert.lipschitz * cert.w_inv_sqrt_norm
}

fn cbar_for(cert: &CertificateSet, h0: f64) -> f64 {
    let bc = cert.c_lemma4 * h0 + cert.c_lemma4;
    let first = cert.r_norm * bc * (bc + 2.0 * cert.lipschitz / cert.lam_p_min.sqrt());
    let second =
        cert.q_bar_norm * (cert.p_inv_sqrt_norm.powi(2) * h0 * h0 + 1.0 / cert.lam_p_min);
    first.max(second)
}

/// Assembles the full certificate at the reference budget ⌈ℓ*⌉ + 1.
pub fn compute_certificates(
    model: &LtiModel,
    cost: &CostSpec,
    qp: &CondensedQp,
    sp: &SpectralData,
    bx: &BoxSet,
) -> Result<CertificateSet> {
    compute_certificates_with_budget(model, cost, qp, sp, bx, None)
}

/// Same, but selects τ/ε/h₀ at a declared budget when it clears ℓ*; budgets
/// at or below ℓ* fall back to the reference budget and set the
/// `budget_below_threshold` flag so callers can refuse or taint the run.
pub fn compute_certificates_with_budget(
    model: &LtiModel,
    cost: &CostSpec,
    qp: &CondensedQp,
    sp: &SpectralData,
    bx: &BoxSet,
    declared: Option<u64>,
) -> Result<CertificateSet> {
    if bx.dim() != model.m {
        return Err(Error::Dimension("box dimension must match the input dimension".into()));
    }
    let beta = beta_of(&qp.w, &cost.q)?;

    let w_sqrt = sym_sqrt(&qp.w)?;
    let sigma = operator_norm(&(&w_sqrt * &qp.bbar));

    let h_inv_sqrt = sym_inv_sqrt(&qp.h)?;
    let h_inv_sqrt_norm = operator_norm(&h_inv_sqrt);
    let gbar = &qp.g * &qp.bbar;
    let omega = 1.0 + h_inv_sqrt_norm * operator_norm(&(&h_inv_sqrt * &gbar));

    let p_inv_sqrt = sym_inv_sqrt(&cost.p)?;
    let a_shift = &model.a - DMatrix::<f64>::identity(model.n, model.n);
    let kappa_drift =
        h_inv_sqrt_norm * operator_norm(&(&h_inv_sqrt * &qp.g * a_shift * &p_inv_sqrt));
    let (_, lam_h_gbar) = weighted_eig_bounds(&gbar, &qp.h)?;
    let (_, lam_p_w) = weighted_eig_bounds(&qp.w, &cost.p)?;
    if lam_p_w < 1.0 {
        return Err(Error::CertificateInfeasible(format!(
            "lambda_P^+(W) = {lam_p_w:.9} < 1 contradicts W ⪰ P; square root would be imaginary"
        )));
    }
    let sq_arg = lam_h_gbar * (lam_p_w - 1.0);
    if sq_arg < -1e-10 {
        return Err(Error::CertificateInfeasible(format!(
            "lambda_H^+(sym(G B̄)) (lam_p_w - 1) = {sq_arg:.3e} is negative"
        )));
    }
    let kappa = kappa_drift + h_inv_sqrt_norm * sq_arg.max(0.0).sqrt();

    let lipschitz = h_inv_sqrt_norm * operator_norm(&(&h_inv_sqrt * &qp.g));
    let star = ell_star(beta, sigma, omega, kappa, sp.eta)?;

    // terminal level: largest t with {‖x‖²_P ≤ t} ⊂ {−Kx inside the box}
    let p_inv = (&p_inv_sqrt * &p_inv_sqrt + (&p_inv_sqrt * &p_inv_sqrt).transpose()) * 0.5;
    let mut c_terminal = f64::INFINITY;
    for i in 0..model.m {
        let ki = cost.k_gain.row(i).transpose();
        let gain = (ki.transpose() * &p_inv * &ki)[(0, 0)];
        let level = bx.upper[i].min(-bx.lower[i]);
        if gain > 0.0 {
            c_terminal = c_terminal.min(level * level / gain);
        }
    }
    if !c_terminal.is_finite() {
        // K = 0: the terminal law never touches the box
        c_terminal = f64::MAX;
    }
    let (lam_q_min, _) = symmetric_eig_range(&cost.q);
    let (lam_p_min, lam_p_max) = symmetric_eig_range(&cost.p);
    let d = c_terminal * lam_q_min / lam_p_max;
    let r_region = ((qp.horizon as f64) * d + c_terminal).sqrt();

    let reference = star.ceil() as u64 + 1;
    let (ell_sel, budget_below) = match declared {
        Some(ell) if (ell as f64) > star => (ell, false),
        Some(_) => (reference, true),
        None => (reference, false),
    };
    let (tau, tau_interval) = select_tau(beta, sigma, omega, kappa, sp.eta, ell_sel)?;
    let epsilon = epsilon_of(beta, sigma, omega, kappa, sp.eta, tau, ell_sel);
    if epsilon >= 1.0 {
        return Err(Error::CertificateInfeasible(format!(
            "selected tau yields epsilon = {epsilon:.9} at budget {ell_sel}"
        )));
    }

    let w_inv_sqrt_norm = operator_norm(&sym_inv_sqrt(&qp.w)?);
    let p_inv_sqrt_norm = operator_norm(&p_inv_sqrt);
    let h0 = 1.0 + tau * eta_pow(sp.eta, ell_sel) * lipschitz * w_inv_sqrt_norm;
    let c_lemma4 = (1.0 / tau)
        .max(h_inv_sqrt_norm * operator_norm(&(&h_inv_sqrt * &qp.g * &p_inv_sqrt)));
    let b0 = c_lemma4 * h0;

    let (lam_w_min_p, _) = weighted_eig_bounds(&cost.p, &qp.w)?;
    let (_, lam_w_max) = symmetric_eig_range(&qp.w);
    let r_norm = operator_norm(&cost.r);
    let q_bar_norm = operator_norm(&cost.q).max(operator_norm(&cost.p));

    let mut cert = CertificateSet {
        horizon: qp.horizon,
        alpha: sp.alpha,
        eta: sp.eta,
        beta,
        sigma,
        omega,
        kappa,
        lipschitz,
        ell_star: star,
        ell_reference: ell_sel,
        declared_budget: declared,
        budget_below_threshold: budget_below,
        tau,
        tau_interval,
        epsilon,
        h0,
        c_terminal,
        d,
        r_region,
        c_lemma4,
        b0,
        cbar: 0.0,
        w_inv_sqrt_norm,
        p_inv_sqrt_norm,
        lam_w_min_p,
        lam_w_max,
        lam_p_min,
        r_norm,
        q_bar_norm,
    };
    cert.cbar = cbar_for(&cert, h0);
    Ok(cert)
}

/// Measurements of a state/sequence pair against the certified regions:
/// Γ = {ψ ≤ r} for the state, and the warm-start ball ‖z − μ*(x)‖ ≤ (1−β)r/σ
/// on top of it.
#[derive(Debug, Clone, Copy)]
pub struct Membership {
    pub in_gamma: bool,
    pub in_sigma: bool,
    pub psi: f64,
    pub dist: f64,
}

pub fn region_membership(
    cert: &CertificateSet,
    qp: &CondensedQp,
    sp: &SpectralData,
    x: &DVector<f64>,
    z: &DVector<f64>,
    bx: &BoxSet,
) -> Result<Membership> {
    let mu = solve_optimal(qp, sp, x, bx, 1e-10)?;
    let v = qp.cost(x, &mu).max(0.0);
    let psi = v.sqrt();
    let dist = (z - &mu).norm();
    let in_gamma = psi <= cert.r_region;
    let ball = (1.0 - cert.beta) * cert.r_region / cert.sigma;
    let in_sigma = in_gamma && dist <= ball;
    Ok(Membership { in_gamma, in_sigma, psi, dist })
}

/// Steps needed inside phase j−1 before the state provably enters the next
/// region: k_j = [log(λ⁻_{W}(P)(N_j d + c)) − 2 log(h‖x₀‖_W)] / (2 log ε),
/// clamped below at zero and rounded up. `h_override` substitutes a different
/// warm-start inflation (the displayed variant uses the next design's h).
pub fn switch_time(
    cert_prev: &CertificateSet,
    n_next: usize,
    x0_norm_w: f64,
    ell: u64,
    h_override: Option<f64>,
) -> Result<(f64, u64)> {
    if n_next >= cert_prev.horizon {
        return Err(Error::InvalidSchedule(format!(
            "next horizon {n_next} must shrink below {}",
            cert_prev.horizon
        )));
    }
    let eps = epsilon_rate(cert_prev, ell)?;
    let h = h_override.unwrap_or_else(|| h0_for(cert_prev, ell));
    let target = cert_prev.lam_w_min_p * ((n_next as f64) * cert_prev.d + cert_prev.c_terminal);
    if x0_norm_w <= 0.0 {
        return Ok((0.0, 0));
    }
    let raw = (target.ln() - 2.0 * (h * x0_norm_w).ln()) / (2.0 * eps.ln());
    let k = raw.max(0.0).ceil() as u64;
    Ok((raw, k))
}

fn eps_schedule(cert: &CertificateSet, ells: &[u64]) -> Result<Vec<f64>> {
    ells.iter().map(|&l| epsilon_rate(cert, l)).collect()
}

fn ell_at(ells: &[u64], i: usize) -> u64 {
    if ells.is_empty() {
        0
    } else {
        ells[i.min(ells.len() - 1)]
    }
}

/// Warm-start drift bound b₀‖x₀‖_W ∏_{i=-1}^{k-1} ε_i + c‖x₀‖_W β^k with
/// ε_{-1} = 1 and h₀ evaluated at the first scheduled budget.
pub fn bound_delta_mu(
    cert: &CertificateSet,
    x0_norm_w: f64,
    ells: &[u64],
    k: usize,
) -> Result<f64> {
    if ells.is_empty() {
        return Err(Error::InvalidSchedule("empty budget schedule".into()));
    }
    let h0 = h0_for(cert, ells[0]);
    let b0 = cert.c_lemma4 * h0;
    let mut prod = 1.0;
    for i in 0..k {
        prod *= epsilon_rate(cert, ell_at(ells, i))?;
    }
    Ok(b0 * x0_norm_w * prod + cert.c_lemma4 * x0_norm_w * cert.beta.powi(k as i32))
}

/// State norm bound h₀‖P^{-1/2}‖‖x₀‖_W ∏_{i=-1}^{k} ε_i (product inclusive of
/// index k, per the displayed form).
pub fn bound_state(
    cert: &CertificateSet,
    x0_norm_w: f64,
    ells: &[u64],
    k: usize,
) -> Result<f64> {
    if ells.is_empty() {
        return Err(Error::InvalidSchedule("empty budget schedule".into()));
    }
    let h0 = h0_for(cert, ells[0]);
    let mut prod = 1.0;
    for i in 0..=k {
        prod *= epsilon_rate(cert, ell_at(ells, i))?;
    }
    Ok(h0 * cert.p_inv_sqrt_norm * x0_norm_w * prod)
}

/// Cumulative suboptimality bound: the finite partial sum
/// c̄‖x₀‖²_W Σ_{k=0}^{T} ∏_{i=0}^{k} ε²_{i-1} and its geometric closure
/// c̄‖x₀‖²_W / (1 − ε̄²) with ε̄ taken at the smallest scheduled budget.
pub fn bound_suboptimality(
    cert: &CertificateSet,
    x0_norm_w: f64,
    ells: &[u64],
    t: usize,
) -> Result<(f64, f64)> {
    if ells.is_empty() {
        return Err(Error::InvalidSchedule("empty budget schedule".into()));
    }
    let h0 = h0_for(cert, ells[0]);
    let cbar = cbar_for(cert, h0);
    let scale = cbar * x0_norm_w * x0_norm_w;
    let eps = eps_schedule(cert, ells)?;
    let mut sum = 0.0;
    let mut prod = 1.0; // ∏ ε²_{i-1} up to the current k, with ε_{-1} = 1
    for k in 0..=t {
        if k > 0 {
            let e = eps[(k - 1).min(eps.len() - 1)];
            prod *= e * e;
        }
        sum += prod;
    }
    let ell_min = *ells.iter().min().unwrap();
    let eps_bar = epsilon_rate(cert, ell_min)?;
    let geometric = scale / (1.0 - eps_bar * eps_bar);
    let finite = scale * sum;
    if finite > geometric * (1.0 + 1e-12) {
        return Err(Error::CertificateInfeasible(format!(
            "partial sum {finite:.6e} exceeded its geometric closure {geometric:.6e}"
        )));
    }
    Ok((finite, geometric))
}

/// Diminishing-horizon suboptimality bound
/// (c̄_m‖x₀‖²_{W₀}/(1−ε̲)) Σ_{j=0}^{p} ε_{k_j}^{2k_j} ∏_{i=1}^{j} d̄_i with
/// k₀ = 0, d̄_i = h²(N_i) λ⁺(W_i) ‖P^{-1/2}‖², c̄_m = max_j c̄(N_j) and
/// ε̲ = max_j ε_{k_j} (phase-j design rate at its own budget).
pub fn bound_dim_sumpc(
    certs: &[&CertificateSet],
    budgets: &[u64],
    switch_times: &[u64],
    x0_norm_w0: f64,
) -> Result<f64> {
    let p = certs.len();
    if p == 0 || budgets.len() != p || switch_times.len() + 1 != p {
        return Err(Error::InvalidSchedule(format!(
            "phase counts disagree: {} certificates, {} budgets, {} switches",
            p,
            budgets.len(),
            switch_times.len()
        )));
    }
    let mut cbar_m = 0.0f64;
    let mut eps_lo = 0.0f64;
    let mut eps_j = Vec::with_capacity(p);
    let mut dbar = Vec::with_capacity(p);
    for j in 0..p {
        let h = h0_for(certs[j], budgets[j]);
        cbar_m = cbar_m.max(cbar_for(certs[j], h));
        let e = epsilon_rate(certs[j], budgets[j])?;
        eps_lo = eps_lo.max(e);
        eps_j.push(e);
        dbar.push(h * h * certs[j].lam_w_max * certs[j].p_inv_sqrt_norm.powi(2));
    }
    let mut sum = 0.0;
    let mut dprod = 1.0;
    for j in 0..p {
        let kj = if j == 0 { 0 } else { switch_times[j - 1] };
        if j > 0 {
            dprod *= dbar[j];
        }
        sum += eps_j[j].powf(2.0 * kj as f64) * dprod;
    }
    Ok(cbar_m * x0_norm_w0 * x0_norm_w0 / (1.0 - eps_lo) * sum)
}

/// Outcome of comparing an empirical sequence against its theoretical bound.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub theoretical: Vec<f64>,
    pub empirical: Vec<f64>,
    pub satisfied: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    DeltaMu,
    StateNorm,
    SuboptimalityFixed,
    SuboptimalityVarying,
    DimSumpc,
}

impl BoundKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundKind::DeltaMu => "delta_mu",
            BoundKind::StateNorm => "state_norm",
            BoundKind::SuboptimalityFixed => "suboptimality_fixed",
            BoundKind::SuboptimalityVarying => "suboptimality_varying",
            BoundKind::DimSumpc => "dim_sumpc",
        }
    }
}

/// satisfied ⇔ empirical ≤ theoretical + 1e-9 at every index; margin is the
/// worst theoretical − empirical gap.
pub fn check_bound(kind: BoundKind, theoretical: Vec<f64>, empirical: Vec<f64>) -> Result<BoundReport> {
    if theoretical.len() != empirical.len() || theoretical.is_empty() {
        return Err(Error::TrajectoryMismatch(format!(
            "bound comparison needs matching non-empty sequences, got {} and {}",
            theoretical.len(),
            empirical.len()
        )));
    }
    let mut satisfied = true;
    let mut margin = f64::INFINITY;
    for (t, e) in theoretical.iter().zip(empirical.iter()) {
        margin = margin.min(t - e);
        if *e > t + 1e-9 {
            satisfied = false;
        }
    }
    Ok(BoundReport { kind, theoretical, empirical, satisfied, margin })
}
