use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Discrete-time plant x⁺ = A x + B u with a cached stabilizability verdict.
#[derive(Debug, Clone)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
}

impl LtiModel {
    /// Wraps (A, B), checking shapes and stabilizability of the pair.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("model entries must be finite".into()));
        }
        let n = a.nrows();
        let m = b.ncols();
        check_stabilizable(&a, &b)?;
        Ok(LtiModel { a, b, n, m })
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Hautus test: every eigenvalue of A on or outside the unit circle must keep
/// [A - λI, B] at full row rank.
fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let eigs = a.clone().complex_eigenvalues();
    for lam in eigs.iter() {
        if lam.norm() < 1.0 - 1e-9 {
            continue;
        }
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            pencil[(i, i)] -= *lam;
            for j in 0..b.ncols() {
                pencil[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = pencil.singular_values();
        let smax = sv.iter().fold(0.0f64, |acc, s| acc.max(*s));
        let rank = sv.iter().filter(|s| **s > smax * 1e-10).count();
        if rank < n {
            return Err(Error::NotStabilizable(format!(
                "mode at eigenvalue {:.6}{:+.6}i (|lambda| = {:.6}) is uncontrollable",
                lam.re,
                lam.im,
                lam.norm()
            )));
        }
    }
    Ok(())
}

/// Exact zero-order-hold discretization through the augmented exponential
/// exp([[Ac, Bc], [0, 0]] Ts).
pub fn discretize_zoh(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> Result<LtiModel> {
    if ac.nrows() != ac.ncols() || bc.nrows() != ac.nrows() {
        return Err(Error::Dimension(format!(
            "continuous pair has shapes {}x{} and {}x{}",
            ac.nrows(),
            ac.ncols(),
            bc.nrows(),
            bc.ncols()
        )));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::InvalidConfig(format!("sampling time must be positive, got {ts}")));
    }
    let n = ac.nrows();
    let m = bc.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * ts));
    let e = aug.exp();
    let a = e.view((0, 0), (n, n)).into_owned();
    let b = e.view((0, n), (n, m)).into_owned();
    LtiModel::new(a, b)
}

/// Forward-Euler discretization A = I + Ts Ac, B = Ts Bc. Coarser than ZOH;
/// kept selectable for experiments that want the cheaper map.
pub fn discretize_euler(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> Result<LtiModel> {
    if ac.nrows() != ac.ncols() || bc.nrows() != ac.nrows() {
        return Err(Error::Dimension("continuous pair shapes disagree".into()));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::InvalidConfig(format!("sampling time must be positive, got {ts}")));
    }
    let a = DMatrix::<f64>::identity(ac.nrows(), ac.ncols()) + ac * ts;
    let b = bc * ts;
    LtiModel::new(a, b)
}

/// Stage weights together with the Riccati solution P and gain K that define
/// the terminal ingredients of the horizon-N cost.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k_gain: DMatrix<f64>,
}

/// Solves P = Q + Kᵀ R K + (A - BK)ᵀ P (A - BK) by the standard fixed-point
/// recursion started at P = Q, then validates the residual and that the
/// closed-loop A - BK is Schur.
pub fn solve_dare(model: &LtiModel, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<CostSpec> {
    require_spd(q, "Q")?;
    require_spd(r, "R")?;
    if q.nrows() != model.n || r.nrows() != model.m {
        return Err(Error::Dimension(format!(
            "Q is {}x{} and R is {}x{} for n = {}, m = {}",
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols(),
            model.n,
            model.m
        )));
    }
    let a = &model.a;
    let b = &model.b;
    let cap = 100_000usize;
    let mut p = q.clone();
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let chol = nalgebra::Cholesky::new(s)
            .ok_or_else(|| Error::NotPositiveDefinite("R + Bᵀ P B".into()))?;
        let btpa = &btp * a;
        let k = chol.solve(&btpa);
        let mut pn = q + a.transpose() * &p * a - btpa.transpose() * &k;
        pn = (&pn + pn.transpose()) * 0.5;
        residual = (&pn - &p).norm() / pn.norm().max(1.0);
        p = pn;
        if residual <= 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::DareDiverged { residual, iterations: cap });
    }
    let btp = b.transpose() * &p;
    let s = r + &btp * b;
    let chol = nalgebra::Cholesky::new(s)
        .ok_or_else(|| Error::NotPositiveDefinite("R + Bᵀ P B".into()))?;
    let k_gain = chol.solve(&(&btp * a));
    let acl = a - b * &k_gain;
    let rho = spectral_radius(&acl);
    if rho >= 1.0 - 1e-9 {
        return Err(Error::DareDiverged { residual: rho, iterations: cap });
    }
    // Closed-loop Lyapunov form of the same equation; guards against silent
    // convergence to a non-stabilizing fixed point.
    let recon = q + k_gain.transpose() * r * &k_gain + acl.transpose() * &p * &acl;
    let defect = (&recon - &p).norm() / p.norm().max(1.0);
    if defect > 1e-8 {
        return Err(Error::DareDiverged { residual: defect, iterations: cap });
    }
    Ok(CostSpec { q: q.clone(), r: r.clone(), p, k_gain })
}

pub fn spectral_radius(mat: &DMatrix<f64>) -> f64 {
    mat.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, lam| acc.max(lam.norm()))
}

/// Largest singular value.
pub fn operator_norm(mat: &DMatrix<f64>) -> f64 {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0.0;
    }
    mat.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s))
}

pub(crate) fn require_spd(mat: &DMatrix<f64>, name: &str) -> Result<()> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    let asym = (mat - mat.transpose()).norm();
    if asym > 1e-10 * mat.norm().max(1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "{name} is not symmetric (asymmetry {asym:.3e})"
        )));
    }
    let eig = mat.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "{name} has minimum eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn symmetric_eig_range(mat: &DMatrix<f64>) -> (f64, f64) {
    let eig = mat.clone().symmetric_eigen();
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}
