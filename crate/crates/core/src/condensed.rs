use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{require_spd, symmetric_eig_range, CostSpec, LtiModel};

/// Condensed horizon-N program: after eliminating the state sequence, the
/// horizon cost becomes the parametric quadratic
///
///   J(x, v) = xᵀ W x + 2 vᵀ G x + vᵀ H v = ‖(x, v)‖²_M,
///
/// over the stacked input sequence v ∈ R^{Nm}, with M = [[W, Gᵀ], [G, H]].
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// B̄ = B S with S the selector of the first input block: applying the
    /// plant to the head of an input sequence is x⁺ = A x + B̄ v.
    pub bbar: DMatrix<f64>,
}

impl CondensedQp {
    pub fn dim(&self) -> usize {
        self.horizon * self.m
    }

    /// First input block of a stacked sequence (the one applied to the plant).
    pub fn first_input(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.m, |i, _| v[i])
    }

    /// J(x, v) = xᵀ W x + 2 vᵀ G x + vᵀ H v.
    pub fn cost(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (x.transpose() * &self.w * x)[(0, 0)]
            + 2.0 * (v.transpose() * &self.g * x)[(0, 0)]
            + (v.transpose() * &self.h * v)[(0, 0)]
    }

    /// Gradient of J in v: 2 (H v + G x).
    pub fn grad(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (&self.h * v + &self.g * x) * 2.0
    }

    /// Full joint weight M = [[W, Gᵀ], [G, H]].
    pub fn joint_weight(&self) -> DMatrix<f64> {
        let n = self.n;
        let d = self.dim();
        let mut m = DMatrix::zeros(n + d, n + d);
        m.view_mut((0, 0), (n, n)).copy_from(&self.w);
        m.view_mut((n, 0), (d, n)).copy_from(&self.g);
        m.view_mut((0, n), (n, d)).copy_from(&self.g.transpose());
        m.view_mut((n, n), (d, d)).copy_from(&self.h);
        m
    }
}

fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Assembles the condensed matrices by explicit prediction:
/// stacked states X = Â x + B̂ v, stage weights Ĥ = blkdiag(Q, …, Q, P), so
/// H = B̂ᵀ Ĥ B̂ + I_N ⊗ R, G = B̂ᵀ Ĥ Â, W = Âᵀ Ĥ Â (the identity row of Â
/// supplies the stage-0 Q term).
pub fn build_condensed(model: &LtiModel, cost: &CostSpec, horizon: usize) -> Result<CondensedQp> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let (n, m) = (model.n, model.m);
    let rows = (horizon + 1) * n;
    let cols = horizon * m;

    let mut ahat = DMatrix::<f64>::zeros(rows, n);
    let mut apow = DMatrix::<f64>::identity(n, n);
    for i in 0..=horizon {
        ahat.view_mut((i * n, 0), (n, n)).copy_from(&apow);
        if i < horizon {
            apow = &model.a * &apow;
        }
    }

    let mut bhat = DMatrix::<f64>::zeros(rows, cols);
    for i in 1..=horizon {
        for j in 0..i {
            let blk = matrix_power(&model.a, i - 1 - j) * &model.b;
            bhat.view_mut((i * n, j * m), (n, m)).copy_from(&blk);
        }
    }

    let mut hhat = DMatrix::<f64>::zeros(rows, rows);
    for i in 0..horizon {
        hhat.view_mut((i * n, i * n), (n, n)).copy_from(&cost.q);
    }
    hhat.view_mut((horizon * n, horizon * n), (n, n)).copy_from(&cost.p);

    let mut h = bhat.transpose() * &hhat * &bhat;
    for j in 0..horizon {
        let mut blk = h.view_mut((j * m, j * m), (m, m));
        blk += &cost.r;
    }
    h = (&h + h.transpose()) * 0.5;

    let g = bhat.transpose() * &hhat * &ahat;
    let mut w = ahat.transpose() * &hhat * &ahat;
    w = (&w + w.transpose()) * 0.5;

    let mut bbar = DMatrix::<f64>::zeros(n, cols);
    bbar.view_mut((0, 0), (n, m)).copy_from(&model.b);

    let qp = CondensedQp { horizon, n, m, h, g, w, bbar };

    require_spd(&qp.h, "H")?;
    let (wq_min, _) = symmetric_eig_range(&(&qp.w - &cost.q));
    if wq_min < -1e-9 * qp.w.norm().max(1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "W - Q has eigenvalue {wq_min:.3e}; condensed assembly inconsistent"
        )));
    }
    let (wp_min, _) = symmetric_eig_range(&(&qp.w - &cost.p));
    if wp_min < -1e-9 * qp.w.norm().max(1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "W - P has eigenvalue {wp_min:.3e}; condensed assembly inconsistent"
        )));
    }
    Ok(qp)
}

/// Horizon cost evaluated the slow way: roll the plant forward and sum
/// stage costs plus the terminal term. Ground truth for the condensed form.
pub fn rollout_cost(
    model: &LtiModel,
    cost: &CostSpec,
    x: &DVector<f64>,
    v: &DVector<f64>,
    horizon: usize,
) -> f64 {
    let mut state = x.clone();
    let mut total = 0.0;
    for k in 0..horizon {
        let u = DVector::from_fn(model.m, |i, _| v[k * model.m + i]);
        total += (state.transpose() * &cost.q * &state)[(0, 0)]
            + (u.transpose() * &cost.r * &u)[(0, 0)];
        state = model.step(&state, &u);
    }
    total + (state.transpose() * &cost.p * &state)[(0, 0)]
}

/// Extremal eigenvalues of H together with the derived step size and
/// contraction factor of the projected gradient map:
/// α = 1/(λ⁺ + λ⁻), η = (λ⁺ − λ⁻)/(λ⁺ + λ⁻).
#[derive(Debug, Clone, Copy)]
pub struct SpectralData {
    pub lam_min: f64,
    pub lam_max: f64,
    pub alpha: f64,
    pub eta: f64,
}

pub fn spectral_data(qp: &CondensedQp) -> Result<SpectralData> {
    let (lam_min, lam_max) = symmetric_eig_range(&qp.h);
    if lam_min <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "H has minimum eigenvalue {lam_min:.3e}"
        )));
    }
    let alpha = 1.0 / (lam_max + lam_min);
    let eta = (lam_max - lam_min) / (lam_max + lam_min);
    Ok(SpectralData { lam_min, lam_max, alpha, eta })
}

/// Symmetric square root of an SPD matrix.
pub fn sym_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_map(mat, f64::sqrt, "matrix square root")
}

/// Symmetric inverse square root; refuses condition numbers above 1e12.
pub fn sym_inv_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_map(mat, |lam| 1.0 / lam.sqrt(), "matrix inverse square root")
}

fn spectral_map(
    mat: &DMatrix<f64>,
    f: impl Fn(f64) -> f64,
    what: &str,
) -> Result<DMatrix<f64>> {
    require_spd(mat, what)?;
    let eig = mat.clone().symmetric_eigen();
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let cond = max / min;
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::IllConditioned { what: what.into(), cond });
    }
    let mut diag = DMatrix::zeros(mat.nrows(), mat.ncols());
    for i in 0..mat.nrows() {
        diag[(i, i)] = f(eig.eigenvalues[i]);
    }
    let out = &eig.eigenvectors * diag * eig.eigenvectors.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Eigenvalue range of X measured in the metric of SPD weight S, i.e. the
/// spectrum of S^{-1/2} (X + Xᵀ)/2 S^{-1/2}.
pub fn weighted_eig_bounds(x: &DMatrix<f64>, weight: &DMatrix<f64>) -> Result<(f64, f64)> {
    if x.nrows() != x.ncols() || x.nrows() != weight.nrows() {
        return Err(Error::Dimension(format!(
            "weighted bounds need square X matching the weight, got {}x{} against {}x{}",
            x.nrows(),
            x.ncols(),
            weight.nrows(),
            weight.ncols()
        )));
    }
    let wis = sym_inv_sqrt(weight)?;
    let sym = (x + x.transpose()) * 0.5;
    let mapped = &wis * sym * &wis;
    Ok(symmetric_eig_range(&((&mapped + mapped.transpose()) * 0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{discretize_zoh, solve_dare, operator_norm};
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unif(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    fn pendulum() -> (LtiModel, CostSpec) {
        let ac = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0 * 9.81 / 2.0, 0.0]);
        let bc = DMatrix::from_row_slice(2, 1, &[0.0, 30.0]);
        let model = discretize_zoh(&ac, &bc, 0.1).unwrap();
        let cost = solve_dare(&model, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        (model, cost)
    }

    #[test]
    fn horizon_one_collapses_to_terminal_riccati_form() {
        let (model, cost) = pendulum();
        let qp = build_condensed(&model, &cost, 1).unwrap();
        let h_expected = model.b.transpose() * &cost.p * &model.b + &cost.r;
        let g_expected = model.b.transpose() * &cost.p * &model.a;
        let w_expected = &cost.q + model.a.transpose() * &cost.p * &model.a;
        assert_relative_eq!(qp.h, h_expected, epsilon = 1e-10);
        assert_relative_eq!(qp.g, g_expected, epsilon = 1e-10);
        assert_relative_eq!(qp.w, w_expected, epsilon = 1e-10);
    }

    #[test]
    fn horizon_two_blocks_match_hand_expansion() {
        let (model, cost) = pendulum();
        let (a, b) = (&model.a, &model.b);
        let (q, r, p) = (&cost.q, &cost.r, &cost.p);
        let qp = build_condensed(&model, &cost, 2).unwrap();

        let h11 = b.transpose() * q * b + b.transpose() * a.transpose() * p * a * b + r;
        let h12 = b.transpose() * a.transpose() * p * b;
        let h22 = b.transpose() * p * b + r;
        assert_relative_eq!(qp.h.view((0, 0), (1, 1)).into_owned(), h11, epsilon = 1e-9);
        assert_relative_eq!(qp.h.view((0, 1), (1, 1)).into_owned(), h12, epsilon = 1e-9);
        assert_relative_eq!(qp.h.view((1, 1), (1, 1)).into_owned(), h22, epsilon = 1e-9);

        let g1 = b.transpose() * q * a + b.transpose() * a.transpose() * p * a * a;
        let g2 = b.transpose() * p * a * a;
        assert_relative_eq!(qp.g.view((0, 0), (1, 2)).into_owned(), g1, epsilon = 1e-9);
        assert_relative_eq!(qp.g.view((1, 0), (1, 2)).into_owned(), g2, epsilon = 1e-9);

        let w = q + a.transpose() * q * a + (a * a).transpose() * p * (a * a);
        assert_relative_eq!(qp.w, w, epsilon = 1e-8);
    }

    #[test]
    fn condensed_cost_equals_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..200 {
            let n = 1 + (rng.next_u64() % 2) as usize;
            let m = 1 + (rng.next_u64() % 2) as usize;
            let horizon = 1 + (rng.next_u64() % 3) as usize;
            let a = DMatrix::from_fn(n, n, |_, _| unif(&mut rng, -1.2, 1.2));
            let b = DMatrix::from_fn(n, m, |_, _| unif(&mut rng, -1.0, 1.0));
            let model = match LtiModel::new(a, b) {
                Ok(mo) => mo,
                Err(_) => continue,
            };
            let q = DMatrix::identity(n, n) * unif(&mut rng, 0.5, 2.0);
            let r = DMatrix::identity(m, m) * unif(&mut rng, 0.5, 2.0);
            let cost = match solve_dare(&model, &q, &r) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let qp = build_condensed(&model, &cost, horizon).unwrap();
            let x = DVector::from_fn(n, |_, _| unif(&mut rng, -2.0, 2.0));
            let v = DVector::from_fn(horizon * m, |_, _| unif(&mut rng, -2.0, 2.0));
            let direct = qp.cost(&x, &v);
            let rolled = rollout_cost(&model, &cost, &x, &v, horizon);
            assert_relative_eq!(direct, rolled, max_relative = 1e-9, epsilon = 1e-9);

            // same identity through the joint weight
            let joint = qp.joint_weight();
            let mut xv = DVector::zeros(n + horizon * m);
            xv.rows_mut(0, n).copy_from(&x);
            xv.rows_mut(n, horizon * m).copy_from(&v);
            let quad = (xv.transpose() * &joint * &xv)[(0, 0)];
            assert_relative_eq!(quad, rolled, max_relative = 1e-9, epsilon = 1e-9);
            let _ = trial;
        }
    }

    #[test]
    fn pendulum_spectral_constants_are_stable() {
        let (model, cost) = pendulum();
        let qp2 = build_condensed(&model, &cost, 2).unwrap();
        let sp2 = spectral_data(&qp2).unwrap();
        assert_relative_eq!(sp2.eta, 0.803418775685, max_relative = 1e-9);

        let qp15 = build_condensed(&model, &cost, 15).unwrap();
        let sp15 = spectral_data(&qp15).unwrap();
        assert_relative_eq!(sp15.eta, 0.999993391931, max_relative = 1e-8);
        let cond = sp15.lam_max / sp15.lam_min;
        assert_relative_eq!(cond, 3.0266e5, max_relative = 1e-3);
        assert_relative_eq!(sp15.alpha, 1.0 / (sp15.lam_max + sp15.lam_min), epsilon = 1e-16);
    }

    #[test]
    fn sqrt_and_inv_sqrt_are_inverses() {
        let (model, cost) = pendulum();
        let qp = build_condensed(&model, &cost, 4).unwrap();
        let s = sym_sqrt(&qp.h).unwrap();
        let si = sym_inv_sqrt(&qp.h).unwrap();
        assert_relative_eq!(&s * &s, qp.h.clone(), max_relative = 1e-9, epsilon = 1e-9);
        let eye = DMatrix::identity(qp.dim(), qp.dim());
        assert_relative_eq!(&s * &si, eye, max_relative = 1e-8, epsilon = 1e-8);
    }

    #[test]
    fn inv_sqrt_refuses_badly_conditioned_input() {
        let mut mat = DMatrix::identity(2, 2);
        mat[(1, 1)] = 1e-14;
        match sym_inv_sqrt(&mat) {
            Err(Error::IllConditioned { cond, .. }) => assert!(cond > 1e12),
            other => panic!("expected conditioning refusal, got {other:?}"),
        }
    }

    #[test]
    fn weighted_bounds_scalar_sanity() {
        // weight 4, X = 3: spectrum of 4^{-1/2} 3 4^{-1/2} = 3/4
        let w = DMatrix::from_row_slice(1, 1, &[4.0]);
        let x = DMatrix::from_row_slice(1, 1, &[3.0]);
        let (lo, hi) = weighted_eig_bounds(&x, &w).unwrap();
        assert_relative_eq!(lo, 0.75, epsilon = 1e-12);
        assert_relative_eq!(hi, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn bbar_applies_first_input_only() {
        let (model, cost) = pendulum();
        let qp = build_condensed(&model, &cost, 3).unwrap();
        let v = DVector::from_row_slice(&[0.7, -0.3, 0.9]);
        let via_bbar = &qp.bbar * &v;
        let direct = &model.b * qp.first_input(&v);
        assert_relative_eq!(via_bbar, direct, epsilon = 1e-14);
        assert!(operator_norm(&qp.bbar) > 0.0);
    }
}
