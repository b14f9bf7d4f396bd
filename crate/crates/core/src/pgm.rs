use std::collections::HashSet;

use nalgebra::DVector;

use crate::condensed::{CondensedQp, SpectralData};
use crate::error::{Error, Result};

/// Box input set 𝒰 = [lower, upper] ⊂ R^m with the origin in its interior.
/// Input sequences live in the N-fold product of this box.
#[derive(Debug, Clone)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension(format!(
                "box bounds must share a positive length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) {
                return Err(Error::InvalidConfig(format!("box bound {i} is not finite")));
            }
            if !(lower[i] < 0.0 && 0.0 < upper[i]) {
                return Err(Error::InvalidConfig(format!(
                    "box must contain the origin in its interior; component {i} is [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(BoxSet { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Euclidean projection of a stacked sequence onto the tiled box.
    pub fn project_seq(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = self.dim();
        DVector::from_fn(v.len(), |i, _| v[i].clamp(self.lower[i % m], self.upper[i % m]))
    }

    pub fn contains_seq(&self, v: &DVector<f64>, tol: f64) -> bool {
        let m = self.dim();
        (0..v.len()).all(|i| v[i] >= self.lower[i % m] - tol && v[i] <= self.upper[i % m] + tol)
    }
}

/// One projected gradient step
/// T(x, v) = Π[v − α ∇_v J(x, v)] = Π[v − 2α (H v + G x)].
pub fn pgm_step(
    qp: &CondensedQp,
    sp: &SpectralData,
    x: &DVector<f64>,
    v: &DVector<f64>,
    bx: &BoxSet,
) -> DVector<f64> {
    let target = v - qp.grad(x, v) * sp.alpha;
    bx.project_seq(&target)
}

/// ‖T(x, v) − v‖: zero exactly at the minimizer.
pub fn fixed_point_residual(
    qp: &CondensedQp,
    sp: &SpectralData,
    x: &DVector<f64>,
    v: &DVector<f64>,
    bx: &BoxSet,
) -> f64 {
    (pgm_step(qp, sp, x, v, bx) - v).norm()
}

/// Applies `ell` projected gradient steps.
pub fn pgm_iterate(
    qp: &CondensedQp,
    sp: &SpectralData,
    x: &DVector<f64>,
    v0: &DVector<f64>,
    bx: &BoxSet,
    ell: u64,
) -> DVector<f64> {
    pgm_iterate_counted(qp, sp, x, v0, bx, ell, None).0
}

/// Budgeted iteration with an optional early stop once the fixed-point
/// residual falls below `stop_tol`. Returns the iterate and the number of
/// steps actually taken.
pub fn pgm_iterate_counted(
    qp: &CondensedQp,
    sp: &SpectralData,
    x: &DVector<f64>,
    v0: &DVector<f64>,
    bx: &BoxSet,
    ell: u64,
    stop_tol: Option<f64>,
) -> (DVector<f64>, u64) {
    let mut v = v0.clone();
    for i in 0..ell {
        let next = pgm_step(qp, sp, x, &v, bx);
        if let Some(tol) = stop_tol {
            if (&next - &v).norm() <= tol {
                return (next, i + 1);
            }
        }
        v = next;
    }
    (v, ell)
}

/// Distances ‖v_{i+1} − v_i‖ along the iteration, for convergence diagnostics.
pub fn pgm_iterate_traced(
    qp: &CondensedQp,
    sp: &SpectralData,
    x: &DVector<f64>,
    v0: &DVector<f64>,
    bx: &BoxSet,
    ell: u64,
) -> (DVector<f64>, Vec<f64>) {
    let mut v = v0.clone();
    let mut trace = Vec::with_capacity(ell as usize);
    for _ in 0..ell {
        let next = pgm_step(qp, sp, x, &v, bx);
        trace.push((&next - &v).norm());
        v = next;
    }
    (v, trace)
}

/// Clamp pattern of an unprojected gradient target.
fn pattern_of(target: &DVector<f64>, bx: &BoxSet) -> Vec<i8> {
    let m = bx.dim();
    (0..target.len())
        .map(|i| {
            if target[i] < bx.lower[i % m] {
                -1
            } else if target[i] > bx.upper[i % m] {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Equality-constrained solve for a fixed clamp pattern: clamped coordinates
/// sit on their bounds, free ones solve H_FF v_F = −(G x)_F − H_FC v_C.
fn solve_pattern(
    qp: &CondensedQp,
    gx: &DVector<f64>,
    bx: &BoxSet,
    pattern: &[i8],
) -> Option<DVector<f64>> {
    let d = qp.dim();
    let m = bx.dim();
    let free: Vec<usize> = (0..d).filter(|&i| pattern[i] == 0).collect();
    let mut v = DVector::zeros(d);
    for i in 0..d {
        match pattern[i] {
            -1 => v[i] = bx.lower[i % m],
            1 => v[i] = bx.upper[i % m],
            _ => {}
        }
    }
    if free.is_empty() {
        return Some(v);
    }
    let nf = free.len();
    let mut hff = nalgebra::DMatrix::<f64>::zeros(nf, nf);
    let mut rhs = DVector::<f64>::zeros(nf);
    for (a, &i) in free.iter().enumerate() {
        let mut acc = -gx[i];
        for j in 0..d {
            if pattern[j] != 0 {
                acc -= qp.h[(i, j)] * v[j];
            }
        }
        rhs[a] = acc;
        for (b, &j) in free.iter().enumerate() {
            hff[(a, b)] = qp.h[(i, j)];
        }
    }
    let chol = nalgebra::Cholesky::new(hff)?;
    let sol = chol.solve(&rhs);
    for (a, &i) in free.iter().enumerate() {
        v[i] = sol[a];
    }
    Some(v)
}

/// Solves the box-constrained program to fixed-point residual `tol`:
/// plain projected gradient iterations, accelerated by periodically guessing
/// the active set from the current gradient target and refining that guess by
/// re-deriving it from its own equality solve. Acceptance is always through
/// the residual of the projected gradient map, so the accelerator cannot
/// change what the routine returns, only how fast it gets there.
pub fn solve_optimal(
    qp: &CondensedQp,
    sp: &SpectralData,
    x: &DVector<f64>,
    bx: &BoxSet,
    tol: f64,
) -> Result<DVector<f64>> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidConfig(format!("solver tolerance must be positive, got {tol}")));
    }
    if qp.dim() % bx.dim() != 0 || bx.dim() != qp.m {
        return Err(Error::Dimension(format!(
            "box dimension {} does not tile the decision dimension {}",
            bx.dim(),
            qp.dim()
        )));
    }
    let mut v = DVector::<f64>::zeros(qp.dim());
    let d0 = fixed_point_residual(qp, sp, x, &v, bx);
    if d0 <= tol {
        return Ok(v);
    }
    let cap: u64 = if sp.eta <= 0.0 {
        10_000
    } else {
        ((tol / d0).ln() / sp.eta.ln()).ceil().max(0.0) as u64 + 10_000
    };

    let gx = &qp.g * x;
    let accept = 0.5 * tol;
    let mut iterations = 0u64;
    loop {
        if iterations % 16 == 0 {
            // active-set guess from the current unprojected target
            let target = &v - qp.grad(x, &v) * sp.alpha;
            let mut pattern = pattern_of(&target, bx);
            let mut seen: HashSet<Vec<i8>> = HashSet::new();
            for _ in 0..40 {
                if !seen.insert(pattern.clone()) {
                    break;
                }
                let Some(cand) = solve_pattern(qp, &gx, bx, &pattern) else {
                    break;
                };
                let step = pgm_step(qp, sp, x, &cand, bx);
                if (&step - &cand).norm() <= accept {
                    return Ok(step);
                }
                let cand_target = &cand - qp.grad(x, &cand) * sp.alpha;
                pattern = pattern_of(&cand_target, bx);
            }
        }
        if iterations >= cap {
            break;
        }
        v = pgm_step(qp, sp, x, &v, bx);
        iterations += 1;
        if fixed_point_residual(qp, sp, x, &v, bx) <= tol {
            return Ok(v);
        }
    }
    let residual = fixed_point_residual(qp, sp, x, &v, bx);
    if residual <= tol {
        Ok(v)
    } else {
        Err(Error::SolverStalled { residual, iterations })
    }
}

/// Brute-force oracle: enumerates every lower/free/upper assignment of the
/// constraints, solves the corresponding equality system, and keeps the
/// feasible KKT point with smallest objective (lexicographic tie-break).
/// Exponential in the decision dimension, hence the size guard.
pub fn active_set_enumerate(
    qp: &CondensedQp,
    x: &DVector<f64>,
    bx: &BoxSet,
) -> Result<DVector<f64>> {
    let d = qp.dim();
    if d > 12 {
        return Err(Error::OracleUnavailable(format!(
            "enumeration over 3^{d} assignments refused (decision dimension > 12)"
        )));
    }
    if bx.dim() != qp.m {
        return Err(Error::Dimension("box dimension must equal the input dimension".into()));
    }
    let gx = &qp.g * x;
    let m = bx.dim();
    let total = 3usize.pow(d as u32);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let feas_tol = 1e-9;
    for code in 0..total {
        let mut pattern = vec![0i8; d];
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = match c % 3 {
                0 => 0,
                1 => -1,
                _ => 1,
            };
            c /= 3;
        }
        let Some(v) = solve_pattern(qp, &gx, bx, &pattern) else {
            continue;
        };
        // primal feasibility of the free coordinates
        let mut ok = true;
        for i in 0..d {
            if pattern[i] == 0
                && (v[i] < bx.lower[i % m] - feas_tol || v[i] > bx.upper[i % m] + feas_tol)
            {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        // dual feasibility: gradient must push into the active bound
        let grad = qp.grad(x, &v);
        for i in 0..d {
            match pattern[i] {
                -1 if grad[i] < -feas_tol => ok = false,
                1 if grad[i] > feas_tol => ok = false,
                _ => {}
            }
            if !ok {
                break;
            }
        }
        if !ok {
            continue;
        }
        let obj = qp.cost(x, &v);
        let better = match &best {
            None => true,
            Some((bobj, bv)) => {
                if obj < bobj - 1e-12 * bobj.abs().max(1.0) {
                    true
                } else if obj > bobj + 1e-12 * bobj.abs().max(1.0) {
                    false
                } else {
                    // lexicographic tie-break for reproducibility
                    (0..d).any(|i| {
                        if (v[i] - bv[i]).abs() > 1e-12 {
                            v[i] < bv[i]
                        } else {
                            false
                        }
                    })
                }
            }
        };
        if better {
            best = Some((obj, v));
        }
    }
    best.map(|(_, v)| v)
        .ok_or_else(|| Error::OracleUnavailable("no KKT point passed the sign checks".into()))
}
