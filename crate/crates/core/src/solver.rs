//! Block coordinate descent for the joint (JE) and rowwise (RE) estimators.
//!
//! Each iteration takes a projected-gradient step on `ω` inside the box
//! `C_λ × C_η` (all decay parameters at once, gradients evaluated at the current
//! iterate) followed by a proximal-gradient step `g ← S_{αλ_g}(g - α∇_g L)` with the
//! predictors rebuilt at the new `ω`. Both steps backtrack on the usual
//! quadratic-majorization condition, so the penalized objective never increases.

use std::f64::consts::PI;
use std::sync::Arc;

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Result, SpvarError};
use crate::linalg::{max_abs, top_eigen_psd, top_singular_sq};
use crate::loss::{
    build_predictors_mat, fill_decay_blocks, grad_g_from_residual, grad_omega_from_residual, residual_mat, sum_sq, PredictorPanel,
};
use crate::model::{canonicalize, lag_weights, CoefSet, Eta, ModelOrders, Omega, SpvarModel};
use crate::panel::SeriesPanel;

/// Joint or rowwise estimation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Je,
    Re,
}

impl std::str::FromStr for Estimator {
    type Err = SpvarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "je" => Ok(Estimator::Je),
            "re" => Ok(Estimator::Re),
            other => invalid(format!("unknown estimator '{other}', expected je or re")),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Je => "je",
            Estimator::Re => "re",
        })
    }
}

/// Starting values for `ω`.
#[derive(Clone, Debug, PartialEq)]
pub enum OmegaInit {
    /// The grid of [`init_omega_candidates`].
    AutoGrid,
    Explicit(Vec<Omega>),
}

/// Starting value for `g`.
#[derive(Clone, Debug, PartialEq)]
pub enum GInit {
    Zero,
    /// Lasso VAR(P) with `P = ⌊1.5√T⌋`, mapped through `L⁺(ω⁽⁰⁾)`.
    VarLasso,
    /// Precomputed VAR(P) lag matrices `A_1..A_P` mapped through `L⁺(ω⁽⁰⁾)`.
    VarCoefs(Arc<Vec<DMatrix<f64>>>),
    /// The same coefficients for every start.
    Explicit(CoefSet),
}

/// How the `ω` blocks share an iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OmegaUpdate {
    /// Every block uses the gradient at the start of the iteration.
    #[default]
    Jacobi,
    /// Blocks are updated one after the other, each seeing the latest values.
    GaussSeidel,
}

/// Short runs for every start, then only the best few continue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Screening {
    pub iters: usize,
    pub keep: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub lambda_g: f64,
    /// Initial `g` step; `None` means `1/L̂` from power iteration.
    pub step: Option<f64>,
    pub backtracking: bool,
    pub epsilon_box: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub omega_init: OmegaInit,
    pub g_init: GInit,
    pub omega_update: OmegaUpdate,
    pub screening: Option<Screening>,
    /// Penalty of the preliminary VAR(P) fit; defaults to `lambda_g`.
    pub var_lasso_lambda: Option<f64>,
    /// Lag order of the preliminary VAR(P) fit; defaults to `⌊1.5√T⌋`.
    pub var_lasso_p: Option<usize>,
    /// Keep every start's trace and outcome in the result.
    pub record_starts: bool,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(lambda_g: f64) -> Self {
        Self {
            lambda_g,
            step: None,
            backtracking: true,
            epsilon_box: 0.05,
            max_iter: 5000,
            tol: 1e-6,
            omega_init: OmegaInit::AutoGrid,
            g_init: GInit::VarLasso,
            omega_update: OmegaUpdate::Jacobi,
            screening: None,
            var_lasso_lambda: None,
            var_lasso_p: None,
            record_starts: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_g >= 0.0) || !self.lambda_g.is_finite() {
            return invalid(format!("lambda_g = {} must be finite and nonnegative", self.lambda_g));
        }
        if !(self.epsilon_box > 0.0 && self.epsilon_box < 0.5) {
            return invalid(format!("epsilon_box = {} must lie in (0, 0.5)", self.epsilon_box));
        }
        if !(self.tol > 0.0) {
            return invalid("tol must be positive");
        }
        if self.max_iter == 0 {
            return invalid("max_iter must be positive");
        }
        if let Some(a) = self.step {
            if !(a > 0.0) || !a.is_finite() {
                return invalid(format!("step = {a} must be positive"));
            }
        }
        if let Some(s) = self.screening {
            if s.keep == 0 || s.iters == 0 {
                return invalid("screening needs positive iters and keep");
            }
        }
        Ok(())
    }
}

/// Outcome of one start.
#[derive(Clone, Debug, PartialEq)]
pub struct StartSummary {
    pub omega0: Omega,
    pub loss: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: SpvarModel,
    pub estimator: Estimator,
    /// Penalized objective after each iteration, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Unpenalized zero-initialized loss `L̃_T`.
    pub in_sample_loss: f64,
    pub nnz: usize,
    pub config_used: FitConfig,
    /// RE only: the `ω̂_i` of every row.
    pub per_row_omega: Option<Vec<Omega>>,
    /// `L̃_{i,T}`; they sum to `in_sample_loss`.
    pub row_losses: Vec<f64>,
    /// Final accepted `g` step.
    pub step: f64,
    /// `‖S_{αλ_g}(ĝ - α∇_g L̃_T) - ĝ‖_∞` at the returned point.
    pub fixed_point_residual: f64,
    /// Whether every recorded objective trace was nonincreasing.
    pub monotone: bool,
    pub starts: Vec<StartSummary>,
}

impl FitResult {
    /// Penalized objective at the returned point.
    pub fn objective(&self) -> f64 {
        self.in_sample_loss + self.config_used.lambda_g * self.model.coefs().mats().iter().map(crate::linalg::l1_norm).sum::<f64>()
    }
}

/// Componentwise `sign(z)·max(|z| - τ, 0)`.
pub fn soft_threshold(z: &[f64], tau: f64) -> Vec<f64> {
    z.iter().map(|v| soft(*v, tau)).collect()
}

#[inline]
fn soft(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Componentwise clamp onto `[-1+ε, 1-ε]^r × ([0, 1-ε] × [ε, π-ε])^s`.
pub fn project_omega(omega: &Omega, eps: f64) -> Omega {
    Omega {
        lambdas: omega.lambdas.iter().map(|l| l.clamp(-1.0 + eps, 1.0 - eps)).collect(),
        etas: omega.etas.iter().map(|e| Eta::new(e.gamma.clamp(0.0, 1.0 - eps), e.theta.clamp(eps, PI - eps))).collect(),
    }
}

fn project_vec(v: &mut [f64], r: usize, eps: f64) {
    for (idx, x) in v.iter_mut().enumerate() {
        *x = if idx < r {
            x.clamp(-1.0 + eps, 1.0 - eps)
        } else if (idx - r).is_multiple_of(2) {
            x.clamp(0.0, 1.0 - eps)
        } else {
            x.clamp(eps, PI - eps)
        };
    }
}

const LAMBDA_COARSE: [f64; 4] = [-0.6, -0.3, 0.3, 0.6];
const LAMBDA_DENSE: [f64; 8] = [-0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8];
const LAMBDA_WIDE: [f64; 10] = [-0.8, -0.6, -0.4, -0.3, -0.2, 0.2, 0.3, 0.4, 0.6, 0.8];
const GAMMA_COARSE: [f64; 2] = [0.3, 0.6];
const GAMMA_DENSE: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const THETA_COARSE: [f64; 2] = [PI / 4.0, 3.0 * PI / 4.0];
const THETA_DENSE: [f64; 3] = [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];

/// Upper bound on the number of grid starts for large `r` or `s`.
pub const MAX_GRID_CANDIDATES: usize = 128;

fn combinations<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    fn rec<T: Clone>(items: &[T], k: usize, start: usize, cur: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i].clone());
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Grid of starting values for `ω`, one per set of distinct slot values.
pub fn init_omega_candidates(orders: ModelOrders) -> Vec<Omega> {
    let lam_grid: Vec<f64> = match orders.r {
        1 => LAMBDA_DENSE.to_vec(),
        r if r <= 4 => LAMBDA_COARSE.to_vec(),
        _ => LAMBDA_WIDE.to_vec(),
    };
    let (gammas, thetas): (&[f64], &[f64]) = match orders.s {
        1 => (&GAMMA_DENSE, &THETA_DENSE),
        s if s <= 4 => (&GAMMA_COARSE, &THETA_COARSE),
        _ => (&GAMMA_DENSE, &THETA_DENSE),
    };
    let eta_grid: Vec<Eta> = gammas.iter().flat_map(|&g| thetas.iter().map(move |&t| Eta::new(g, t))).collect();
    let lam_sets = combinations(&lam_grid, orders.r);
    let eta_sets = combinations(&eta_grid, orders.s);
    let mut out = Vec::with_capacity(lam_sets.len() * eta_sets.len());
    for ls in &lam_sets {
        for es in &eta_sets {
            let om = Omega::new(ls.clone(), es.clone());
            let m = SpvarModel::zeros(1, orders, om).expect("grid values are valid");
            out.push(canonicalize(&m).omega().clone());
        }
    }
    out.dedup();
    if out.len() > MAX_GRID_CANDIDATES {
        let len = out.len();
        out = (0..MAX_GRID_CANDIDATES).map(|i| out[i * len / MAX_GRID_CANDIDATES].clone()).collect();
    }
    out
}

/// `P = ⌊1.5√T⌋`, at least 1.
pub fn default_var_order(t: usize) -> usize {
    ((1.5 * (t as f64).sqrt()).floor() as usize).max(1)
}

/// Lasso VAR(P) by accelerated proximal gradient on the Gram form of the least-squares loss.
pub fn var_lasso_fit(y: &SeriesPanel, p: usize, lambda_g: f64, config: &FitConfig) -> Result<Vec<DMatrix<f64>>> {
    var_lasso_mat(y.data(), p, lambda_g, config.tol, config.max_iter)
}

pub(crate) fn var_lasso_mat(y: &DMatrix<f64>, p: usize, lambda: f64, tol: f64, max_iter: usize) -> Result<Vec<DMatrix<f64>>> {
    let (t, n) = y.shape();
    if p == 0 || p >= t {
        return invalid(format!("VAR order P = {p} must satisfy 1 <= P < T = {t}"));
    }
    if !(lambda >= 0.0) {
        return invalid("lambda must be nonnegative");
    }
    let x = build_predictors_mat(y, ModelOrders::new(p, 0, 0), &Omega::empty(), false)?.z;
    let tf = t as f64;
    let q = x.tr_mul(&x) / tf;
    let c = y.tr_mul(&x) / tf;
    let yy = y.norm_squared() / tf;
    let f = |a: &DMatrix<f64>, aq: &DMatrix<f64>| yy - 2.0 * a.dot(&c) + a.dot(aq);
    let mut lip = 2.0 * top_eigen_psd(&q, 100) * 1.01;
    if lip <= 0.0 {
        return Ok(vec![DMatrix::zeros(n, n); p]);
    }
    let k = n * p;
    let mut a = DMatrix::<f64>::zeros(n, k);
    let mut aq = DMatrix::<f64>::zeros(n, k);
    let mut a_prev = a.clone();
    let mut aq_prev = aq.clone();
    let mut tk = 1.0f64;
    let mut obj = yy;
    let mut converged = false;
    for _ in 0..max_iter {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let beta = (tk - 1.0) / t_next;
        let ym = &a + (&a - &a_prev) * beta;
        let yq = &aq + (&aq - &aq_prev) * beta;
        let fy = f(&ym, &yq);
        let grad = (&yq - &c) * 2.0;
        let (a_new, aq_new, f_new) = loop {
            let mut cand = &ym - &grad * (1.0 / lip);
            cand.apply(|v| *v = soft(*v, lambda / lip));
            let cq = &cand * &q;
            let fc = f(&cand, &cq);
            let diff = &cand - &ym;
            if fc <= fy + grad.dot(&diff) + 0.5 * lip * diff.norm_squared() + 1e-14 * fy.abs() {
                break (cand, cq, fc);
            }
            lip *= 2.0;
        };
        let obj_new = f_new + lambda * crate::linalg::l1_norm(&a_new);
        let step = max_abs(&(&a_new - &a));
        let scale = 1.0 + max_abs(&a_new);
        if obj_new > obj {
            // Adaptive restart of the momentum.
            tk = 1.0;
        } else {
            tk = t_next;
        }
        a_prev = std::mem::replace(&mut a, a_new);
        aq_prev = std::mem::replace(&mut aq, aq_new);
        let rel = (obj - obj_new).abs() / obj.abs().max(1.0);
        obj = obj_new;
        if !obj.is_finite() {
            return Err(SpvarError::Fit("VAR lasso objective is not finite".into()));
        }
        if rel < tol && step <= tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        debug!("VAR({p}) lasso stopped at max_iter");
    }
    Ok((0..p).map(|h| a.columns(h * n, n).into_owned()).collect())
}

/// Maps VAR lag matrices to `G⁽⁰⁾` through the pseudoinverse of the `P × d` truncation of `L(ω⁽⁰⁾)`.
pub fn init_g_from_var(a: &[DMatrix<f64>], omega0: &Omega, orders: ModelOrders, n: usize) -> Result<CoefSet> {
    if !omega0.matches(&orders) {
        return invalid("omega0 does not match orders");
    }
    let d = orders.d();
    let p_lags = a.len();
    if d == 0 {
        return Ok(CoefSet::empty(n));
    }
    if p_lags == 0 || a.iter().all(|m| m.iter().all(|v| *v == 0.0)) {
        return Ok(CoefSet::zeros(n, d));
    }
    let mut l = DMatrix::zeros(p_lags, d);
    for h in 1..=p_lags {
        for (k, w) in lag_weights(h, &orders, omega0).into_iter().enumerate() {
            l[(h - 1, k)] = w;
        }
    }
    let ltl = l.tr_mul(&l);
    let inv = match ltl.clone().cholesky() {
        Some(ch) if ch.l().diagonal().iter().all(|v| *v > 1e-10) => ch.inverse(),
        _ => {
            warn!("L(omega0)'L(omega0) is singular; adding a 1e-8 ridge");
            let ridged = &ltl + DMatrix::identity(d, d) * 1e-8;
            ridged.try_inverse().ok_or_else(|| SpvarError::Fit("ridge-stabilized pseudoinverse failed".into()))?
        }
    };
    let lplus = inv * l.transpose();
    let mats = (0..d)
        .map(|k| {
            let mut g = DMatrix::zeros(n, n);
            for (h, ah) in a.iter().enumerate() {
                let w = lplus[(k, h)];
                if w != 0.0 {
                    g += ah * w;
                }
            }
            g
        })
        .collect();
    CoefSet::with_dim(n, mats)
}

// ---------------------------------------------------------------------------
// Engine

/// A least-squares target: rows `targets` of the model, predictors from all of `y`.
struct Problem<'a> {
    y: &'a DMatrix<f64>,
    targets: DMatrix<f64>,
    orders: ModelOrders,
    lambda_g: f64,
    cfg: &'a FitConfig,
}

struct Iterate {
    omega: Vec<f64>,
    panel: PredictorPanel,
    g: DMatrix<f64>,
    resid: DMatrix<f64>,
    loss: f64,
}

struct StartOutcome {
    omega: Omega,
    g: DMatrix<f64>,
    loss: f64,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
    step: f64,
    fixed_point: f64,
    monotone: bool,
}

impl<'a> Problem<'a> {
    fn tf(&self) -> f64 {
        self.y.nrows() as f64
    }

    fn penalty(&self, g: &DMatrix<f64>) -> f64 {
        self.lambda_g * crate::linalg::l1_norm(g)
    }

    fn omega_from(&self, v: &[f64]) -> Omega {
        Omega::from_vec(self.orders.r, self.orders.s, v).expect("length checked")
    }

    fn evaluate(&self, omega: &[f64], g: DMatrix<f64>, base: Option<&PredictorPanel>) -> Result<Iterate> {
        let om = self.omega_from(omega);
        let panel = match base {
            Some(b) => {
                let mut z = b.z.clone();
                let derivs = fill_decay_blocks(self.y, self.orders, &om, &mut z, true);
                PredictorPanel { z, derivs, orders: self.orders }
            }
            None => build_predictors_mat(self.y, self.orders, &om, true)?,
        };
        let resid = residual_mat(&self.targets, &panel.z, &g);
        let loss = sum_sq(&resid) / self.tf();
        if !loss.is_finite() {
            return Err(SpvarError::Fit("objective is not finite".into()));
        }
        Ok(Iterate { omega: omega.to_vec(), panel, g, resid, loss })
    }

    /// Residual with the AR blocks only, reused across `ω` trials while `g` is fixed.
    fn ar_residual(&self, it: &Iterate) -> DMatrix<f64> {
        let n = self.y.ncols();
        let cols = n * self.orders.p;
        let mut r = self.targets.clone();
        if cols > 0 {
            r.gemm(-1.0, &it.panel.z.columns(0, cols), &it.g.columns(0, cols).transpose(), 1.0);
        }
        r
    }

    fn ma_residual(&self, r_ar: &DMatrix<f64>, z: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.y.ncols();
        let start = n * self.orders.p;
        let cols = n * self.orders.n_omega();
        let mut r = r_ar.clone();
        if cols > 0 {
            r.gemm(-1.0, &z.columns(start, cols), &g.columns(start, cols).transpose(), 1.0);
        }
        r
    }

    fn omega_step(&self, it: Iterate, alpha: &mut f64) -> Result<Iterate> {
        let n_om = self.orders.n_omega();
        if n_om == 0 {
            return Ok(it);
        }
        let n = self.y.ncols();
        let ma = it.g.columns(n * self.orders.p, n * n_om);
        if ma.iter().all(|v| *v == 0.0) {
            return Ok(it);
        }
        let r_ar = self.ar_residual(&it);
        match self.cfg.omega_update {
            OmegaUpdate::Jacobi => {
                let grad = grad_omega_from_residual(&it.resid, it.panel.derivs.as_ref().expect("derivs"), &it.g, self.orders);
                self.try_omega_move(it, &grad, None, &r_ar, alpha)
            }
            OmegaUpdate::GaussSeidel => {
                let mut cur = it;
                let blocks: Vec<Vec<usize>> = (0..self.orders.r)
                    .map(|j| vec![j])
                    .chain((0..self.orders.s).map(|m| vec![self.orders.r + 2 * m, self.orders.r + 2 * m + 1]))
                    .collect();
                for b in &blocks {
                    let grad = grad_omega_from_residual(&cur.resid, cur.panel.derivs.as_ref().expect("derivs"), &cur.g, self.orders);
                    cur = self.try_omega_move(cur, &grad, Some(b), &r_ar, alpha)?;
                }
                Ok(cur)
            }
        }
    }

    fn try_omega_move(
        &self,
        it: Iterate,
        grad: &[f64],
        only: Option<&Vec<usize>>,
        r_ar: &DMatrix<f64>,
        alpha: &mut f64,
    ) -> Result<Iterate> {
        let eps = self.cfg.epsilon_box;
        for attempt in 0..60 {
            let mut cand = it.omega.clone();
            for (idx, c) in cand.iter_mut().enumerate() {
                if only.is_none_or(|b| b.contains(&idx)) {
                    *c -= *alpha * grad[idx];
                }
            }
            project_vec(&mut cand, self.orders.r, eps);
            let delta: Vec<f64> = cand.iter().zip(&it.omega).map(|(a, b)| a - b).collect();
            let dn2: f64 = delta.iter().map(|d| d * d).sum();
            if dn2 == 0.0 {
                return Ok(it);
            }
            let om = self.omega_from(&cand);
            let mut z = it.panel.z.clone();
            let derivs = fill_decay_blocks(self.y, self.orders, &om, &mut z, true);
            let resid = self.ma_residual(r_ar, &z, &it.g);
            let loss = sum_sq(&resid) / self.tf();
            let lin: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
            let ok = loss.is_finite()
                && (!self.cfg.backtracking && loss <= it.loss || loss <= it.loss + lin + dn2 / (2.0 * *alpha) + 1e-14 * it.loss.abs());
            if ok {
                if attempt == 0 {
                    *alpha = (*alpha * 2.0).min(1e6);
                }
                return Ok(Iterate { omega: cand, panel: PredictorPanel { z, derivs, orders: self.orders }, g: it.g, resid, loss });
            }
            *alpha *= 0.5;
        }
        Ok(it)
    }

    fn g_step(&self, it: Iterate, alpha: &mut f64) -> Result<(Iterate, f64)> {
        let grad = grad_g_from_residual(&it.resid, &it.panel.z);
        let pen_old = self.penalty(&it.g);
        for _ in 0..80 {
            let a = *alpha;
            let mut cand = &it.g - &grad * a;
            cand.apply(|v| *v = soft(*v, a * self.lambda_g));
            let diff = &cand - &it.g;
            let resid = residual_mat(&self.targets, &it.panel.z, &cand);
            let loss = sum_sq(&resid) / self.tf();
            let ok = if self.cfg.backtracking {
                loss <= it.loss + grad.dot(&diff) + diff.norm_squared() / (2.0 * a) + 1e-14 * it.loss.abs()
            } else {
                loss + self.penalty(&cand) <= it.loss + pen_old
            };
            if ok && loss.is_finite() {
                let moved = max_abs(&diff);
                return Ok((Iterate { omega: it.omega, panel: it.panel, g: cand, resid, loss }, moved));
            }
            if !loss.is_finite() && !self.cfg.backtracking {
                return Err(SpvarError::Fit("objective is not finite".into()));
            }
            *alpha *= 0.5;
        }
        Ok((it, 0.0))
    }

    fn fixed_point_residual(&self, it: &Iterate, alpha: f64) -> f64 {
        let grad = grad_g_from_residual(&it.resid, &it.panel.z);
        let mut cand = &it.g - &grad * alpha;
        cand.apply(|v| *v = soft(*v, alpha * self.lambda_g));
        max_abs(&(cand - &it.g))
    }

    fn initial_step(&self, panel: &PredictorPanel) -> f64 {
        if let Some(a) = self.cfg.step {
            return a;
        }
        let l_hat = 2.0 * top_singular_sq(&panel.z, 20) / self.tf();
        if l_hat > 0.0 {
            1.0 / l_hat
        } else {
            1.0
        }
    }

    fn run(&self, omega0: &Omega, g0: DMatrix<f64>, max_iter: usize) -> Result<StartOutcome> {
        let w0 = {
            let mut v = omega0.to_vec();
            project_vec(&mut v, self.orders.r, self.cfg.epsilon_box);
            v
        };
        let mut it = self.evaluate(&w0, g0, None)?;
        let mut trace = vec![it.loss + self.penalty(&it.g)];
        if self.orders.d() == 0 {
            return Ok(StartOutcome {
                omega: self.omega_from(&it.omega),
                g: it.g,
                loss: it.loss,
                trace,
                converged: true,
                iterations: 0,
                step: 0.0,
                fixed_point: 0.0,
                monotone: true,
            });
        }
        let mut alpha_g = self.initial_step(&it.panel);
        let mut alpha_w = 1.0;
        let mut converged = false;
        let mut iterations = 0;
        let mut monotone = true;
        for _ in 0..max_iter {
            iterations += 1;
            let w_before = it.omega.clone();
            it = self.omega_step(it, &mut alpha_w)?;
            let moved_w = it.omega.iter().zip(&w_before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let (next, moved_g) = self.g_step(it, &mut alpha_g)?;
            it = next;
            let obj = it.loss + self.penalty(&it.g);
            if !obj.is_finite() {
                return Err(SpvarError::Fit("objective is not finite".into()));
            }
            let prev = *trace.last().expect("nonempty");
            if obj > prev + 1e-12 * prev.abs().max(1.0) {
                monotone = false;
            }
            trace.push(obj);
            let rel = (prev - obj).abs() / prev.abs().max(1.0);
            let tol = self.cfg.tol;
            if rel < tol && moved_g <= tol * (1.0 + max_abs(&it.g)) && moved_w <= tol {
                converged = true;
                break;
            }
        }
        let fixed_point = self.fixed_point_residual(&it, alpha_g);
        Ok(StartOutcome {
            omega: self.omega_from(&it.omega),
            loss: it.loss,
            g: it.g,
            trace,
            converged,
            iterations,
            step: alpha_g,
            fixed_point,
            monotone,
        })
    }
}

fn omega_candidates(orders: ModelOrders, cfg: &FitConfig) -> Result<Vec<Omega>> {
    match &cfg.omega_init {
        OmegaInit::AutoGrid => Ok(init_omega_candidates(orders)),
        OmegaInit::Explicit(list) => {
            if list.is_empty() {
                return invalid("explicit omega initial values are empty");
            }
            for om in list {
                if !om.matches(&orders) {
                    return invalid(format!("initial omega does not match orders {orders}"));
                }
            }
            Ok(list.clone())
        }
    }
}

/// Lag matrices of the preliminary VAR(P) fit, if the configuration asks for them.
fn var_coefs_for(y: &DMatrix<f64>, cfg: &FitConfig) -> Result<Option<Arc<Vec<DMatrix<f64>>>>> {
    match &cfg.g_init {
        GInit::VarLasso => {
            let t = y.nrows();
            let p = cfg.var_lasso_p.unwrap_or_else(|| default_var_order(t)).min(t.saturating_sub(1)).max(1);
            if t < 2 {
                return Ok(None);
            }
            let lam = cfg.var_lasso_lambda.unwrap_or(cfg.lambda_g);
            Ok(Some(Arc::new(var_lasso_mat(y, p, lam, cfg.tol.max(1e-6), cfg.max_iter)?)))
        }
        GInit::VarCoefs(a) => Ok(Some(a.clone())),
        _ => Ok(None),
    }
}

fn initial_g(var: &Option<Arc<Vec<DMatrix<f64>>>>, cfg: &FitConfig, omega0: &Omega, orders: ModelOrders, n: usize) -> Result<CoefSet> {
    match (&cfg.g_init, var) {
        (GInit::Explicit(g), _) => {
            if g.n() != n || g.d() != orders.d() {
                return Err(SpvarError::Shape("explicit initial coefficients do not match N and d".into()));
            }
            Ok(g.clone())
        }
        (_, Some(a)) => init_g_from_var(a, omega0, orders, n),
        _ => Ok(CoefSet::zeros(n, orders.d())),
    }
}

struct MultiOutcome {
    best: StartOutcome,
    summaries: Vec<StartSummary>,
    monotone: bool,
}

/// Runs every start on one problem and keeps the minimum-loss solution.
fn multi_start_problem(prob: &Problem<'_>, starts: Vec<(Omega, DMatrix<f64>)>) -> Result<MultiOutcome> {
    let cfg = prob.cfg;
    let run_all = |items: Vec<(Omega, DMatrix<f64>)>, budget: usize| -> Vec<(Omega, Result<StartOutcome>)> {
        items
            .into_par_iter()
            .map(|(om, g0)| {
                let out = prob.run(&om, g0, budget);
                (om, out)
            })
            .collect()
    };
    let results: Vec<(Omega, Result<StartOutcome>)> = match cfg.screening {
        Some(sc) if starts.len() > sc.keep => {
            let short = run_all(starts, sc.iters.min(cfg.max_iter));
            let mut ranked: Vec<usize> = (0..short.len()).filter(|&i| short[i].1.is_ok()).collect();
            ranked.sort_by(|&a, &b| {
                let la = short[a].1.as_ref().map(|o| o.loss).unwrap_or(f64::INFINITY);
                let lb = short[b].1.as_ref().map(|o| o.loss).unwrap_or(f64::INFINITY);
                la.partial_cmp(&lb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
            });
            ranked.truncate(sc.keep);
            ranked.sort_unstable();
            let budget = cfg.max_iter.saturating_sub(sc.iters);
            let cont: Vec<(usize, Omega, StartOutcome)> = short
                .into_iter()
                .enumerate()
                .filter(|(i, _)| ranked.contains(i))
                .filter_map(|(i, (om, r))| r.ok().map(|o| (i, om, o)))
                .collect();
            cont.into_par_iter()
                .map(|(_, om0, first)| {
                    if first.converged || budget == 0 {
                        return (om0, Ok(first));
                    }
                    let more = prob.run(&first.omega, first.g.clone(), budget).map(|second| {
                        let mut trace = first.trace.clone();
                        trace.extend_from_slice(&second.trace[1..]);
                        StartOutcome {
                            trace,
                            iterations: first.iterations + second.iterations,
                            monotone: first.monotone
                                && second.monotone
                                && second.trace[0] <= first.trace.last().copied().unwrap_or(f64::INFINITY) * (1.0 + 1e-12),
                            ..second
                        }
                    });
                    (om0, more)
                })
                .collect()
        }
        _ => run_all(starts, cfg.max_iter),
    };
    let mut summaries = Vec::with_capacity(results.len());
    let mut best: Option<(usize, StartOutcome)> = None;
    let mut monotone = true;
    for (idx, (om0, res)) in results.into_iter().enumerate() {
        match res {
            Ok(out) => {
                monotone &= out.monotone;
                summaries.push(StartSummary {
                    omega0: om0,
                    loss: Some(out.loss),
                    converged: out.converged,
                    iterations: out.iterations,
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => {
                        let nnz_o = out.g.iter().filter(|v| **v != 0.0).count();
                        let nnz_b = b.g.iter().filter(|v| **v != 0.0).count();
                        out.loss < b.loss || (out.loss == b.loss && nnz_o < nnz_b)
                    }
                };
                if better {
                    best = Some((idx, out));
                }
            }
            Err(e) => {
                warn!("start from {:?} failed: {e}", om0);
                summaries.push(StartSummary { omega0: om0, loss: None, converged: false, iterations: 0, error: Some(e.to_string()) });
            }
        }
    }
    match best {
        Some((_, b)) => Ok(MultiOutcome { best: b, summaries, monotone }),
        None => Err(SpvarError::Fit("every start failed".into())),
    }
}

fn check_inputs(y: &SeriesPanel, orders: ModelOrders, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    if y.t() < 2 {
        return invalid("at least two observations are needed to fit");
    }
    if orders.p >= y.t() {
        return invalid(format!("p = {} must be smaller than T = {}", orders.p, y.t()));
    }
    Ok(())
}

fn row_losses(y: &DMatrix<f64>, resid: &DMatrix<f64>) -> Vec<f64> {
    let t = y.nrows() as f64;
    resid.column_iter().map(|c| c.norm_squared() / t).collect()
}

/// Joint estimator, with multi-start over the configured `ω` initial values.
pub fn fit_je(y: &SeriesPanel, orders: ModelOrders, config: &FitConfig) -> Result<FitResult> {
    check_inputs(y, orders, config)?;
    let n = y.n();
    let data = y.data();
    let candidates = omega_candidates(orders, config)?;
    let var = var_coefs_for(data, config)?;
    let starts =
        candidates.iter().map(|om| Ok((om.clone(), initial_g(&var, config, om, orders, n)?.concat()))).collect::<Result<Vec<_>>>()?;
    let prob = Problem { y: data, targets: data.clone(), orders, lambda_g: config.lambda_g, cfg: config };
    let multi = multi_start_problem(&prob, starts)?;
    let best = multi.best;
    let coefs = if orders.d() == 0 { CoefSet::empty(n) } else { CoefSet::from_concat(&best.g)? };
    let model = SpvarModel::new(orders, best.omega.clone(), coefs)?;
    let resid = residual_mat(data, &build_predictors_mat(data, orders, &best.omega, false)?.z, &best.g);
    Ok(FitResult {
        nnz: model.coefs().nnz(0.0),
        model,
        estimator: Estimator::Je,
        objective_trace: best.trace,
        converged: best.converged,
        iterations: best.iterations,
        in_sample_loss: best.loss,
        config_used: config.clone(),
        per_row_omega: None,
        row_losses: row_losses(data, &resid),
        step: best.step,
        fixed_point_residual: best.fixed_point,
        monotone: multi.monotone,
        starts: if config.record_starts { multi.summaries } else { Vec::new() },
    })
}

/// Rowwise estimator: `N` independent problems, each with its own `ω̂_i`.
pub fn fit_re(y: &SeriesPanel, orders: ModelOrders, config: &FitConfig) -> Result<FitResult> {
    check_inputs(y, orders, config)?;
    let n = y.n();
    let data = y.data();
    let candidates = omega_candidates(orders, config)?;
    let var = var_coefs_for(data, config)?;
    let g_inits: Vec<DMatrix<f64>> =
        candidates.iter().map(|om| Ok(initial_g(&var, config, om, orders, n)?.concat())).collect::<Result<Vec<_>>>()?;
    let rows: Vec<Result<MultiOutcome>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let prob = Problem { y: data, targets: data.columns(i, 1).into_owned(), orders, lambda_g: config.lambda_g, cfg: config };
            let starts = candidates.iter().zip(&g_inits).map(|(om, g)| (om.clone(), g.rows(i, 1).into_owned())).collect();
            multi_start_problem(&prob, starts)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(n);
    for (i, r) in rows.into_iter().enumerate() {
        outcomes.push(r.map_err(|e| SpvarError::Fit(format!("row {i}: {e}")))?);
    }
    let nd = n * orders.d();
    let mut g = DMatrix::zeros(n, nd);
    let mut per_row = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    let mut best_row = 0;
    let mut best_gain = f64::NEG_INFINITY;
    let tf = y.t() as f64;
    for (i, mo) in outcomes.iter().enumerate() {
        if nd > 0 {
            g.row_mut(i).copy_from(&mo.best.g.row(0));
        }
        per_row.push(mo.best.omega.clone());
        losses.push(mo.best.loss);
        let gain = data.column(i).norm_squared() / tf - mo.best.loss;
        if gain > best_gain {
            best_gain = gain;
            best_row = i;
        }
    }
    let max_len = outcomes.iter().map(|o| o.best.trace.len()).max().unwrap_or(0);
    let trace = (0..max_len).map(|k| outcomes.iter().map(|o| o.best.trace[k.min(o.best.trace.len() - 1)]).sum()).collect();
    let coefs = if orders.d() == 0 { CoefSet::empty(n) } else { CoefSet::from_concat(&g)? };
    let model = SpvarModel::new(orders, per_row[best_row].clone(), coefs)?;
    Ok(FitResult {
        nnz: model.coefs().nnz(0.0),
        model,
        estimator: Estimator::Re,
        objective_trace: trace,
        converged: outcomes.iter().all(|o| o.best.converged),
        iterations: outcomes.iter().map(|o| o.best.iterations).max().unwrap_or(0),
        in_sample_loss: losses.iter().sum(),
        config_used: config.clone(),
        per_row_omega: Some(per_row),
        row_losses: losses,
        step: outcomes.iter().map(|o| o.best.step).fold(f64::INFINITY, f64::min),
        fixed_point_residual: outcomes.iter().map(|o| o.best.fixed_point).fold(0.0, f64::max),
        monotone: outcomes.iter().all(|o| o.monotone),
        starts: if config.record_starts { outcomes.into_iter().flat_map(|o| o.summaries).collect() } else { Vec::new() },
    })
}

/// Dispatches on the estimator.
pub fn fit(y: &SeriesPanel, orders: ModelOrders, estimator: Estimator, config: &FitConfig) -> Result<FitResult> {
    match estimator {
        Estimator::Je => fit_je(y, orders, config),
        Estimator::Re => fit_re(y, orders, config),
    }
}

/// Multi-start JE; kept as its own entry point for callers that think in those terms.
pub fn multi_start(y: &SeriesPanel, orders: ModelOrders, config: &FitConfig) -> Result<FitResult> {
    fit_je(y, orders, config)
}

/// `max |∇_g L̃_T|` at `g = 0` over the configured starting values: the smallest
/// penalty whose solution is all zeros at those `ω`.
pub fn lambda_max(y: &SeriesPanel, orders: ModelOrders, config: &FitConfig) -> Result<f64> {
    let data = y.data();
    let mut best = 0.0f64;
    for om in omega_candidates(orders, config)? {
        let z = build_predictors_mat(data, orders, &om, false)?;
        best = best.max(max_abs(&grad_g_from_residual(data, &z.z)));
    }
    Ok(best)
}
