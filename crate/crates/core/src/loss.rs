//! Zero-initialized least-squares loss and its gradients.
//!
//! The predictor for block `k` at time `t` is `x_t^{[k]} = Σ_{h=1}^{t-1} ℓ_{h,k}(ω) y_{t-h}`,
//! with `y_s = 0` for `s ≤ 0`. Stacking them gives the row `z_t` of the panel `Z`, and
//! the loss is `(1/T) Σ_t ‖y_t - G z_t‖²` with `G = (G_1, .., G_d)`.
//!
//! Decay blocks use O(1)-per-step recursions. With 0-based time and `y_{-k} = 0`:
//!
//! * real rate: `u_{t+1} = λ (u_t + y_{t-p})`, derivative `v_{t+1} = (u_t + y_{t-p}) + λ v_t`;
//! * complex pair, `w = γ e^{iθ}`: `c_{t+1} = w (c_t + y_{t-p})`. The cosine block is
//!   `Re c`, the sine block `Im c`. Derivatives follow from
//!   `∂_γ c_{t+1} = e^{iθ}(c_t + y_{t-p}) + w ∂_γ c_t` and
//!   `∂_θ c_{t+1} = i w (c_t + y_{t-p}) + w ∂_θ c_t`.
//!
//! With residuals `R = Y - Z Gᵀ` the gradients are `∇_G = -(2/T) Rᵀ Z` and, for a decay
//! parameter `φ` entering block `k` through the derivative panel `V`,
//! `∂L/∂φ = -(2/T) Σ_{a,b} (G_k)_{ab} (RᵀV)_{ab}`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Result, SpvarError};
use crate::model::{weight_unchecked, CoefSet, ModelOrders, Omega, SpvarModel};
use crate::panel::SeriesPanel;

/// `∂x_t^{[k]}/∂φ` for each decay parameter, every panel `T × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativePanels {
    pub lambda: Vec<DMatrix<f64>>,
    /// `(∂cos-block, ∂sin-block)` with respect to `γ_m`.
    pub gamma: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// `(∂cos-block, ∂sin-block)` with respect to `θ_m`.
    pub theta: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Stacked predictors `Z` (`T × Nd`) and optional derivative panels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorPanel {
    pub z: DMatrix<f64>,
    pub derivs: Option<DerivativePanels>,
    pub orders: ModelOrders,
}

impl PredictorPanel {
    pub fn n(&self) -> usize {
        if self.orders.d() == 0 {
            0
        } else {
            self.z.ncols() / self.orders.d()
        }
    }

    /// Columns of block `k` (0-based).
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        let n = self.n();
        self.z.columns(k * n, n).into_owned()
    }
}

pub fn build_predictors(y: &SeriesPanel, orders: ModelOrders, omega: &Omega, with_derivatives: bool) -> Result<PredictorPanel> {
    build_predictors_mat(y.data(), orders, omega, with_derivatives)
}

/// Same as [`build_predictors`] on a raw `T × N` matrix.
pub fn build_predictors_mat(y: &DMatrix<f64>, orders: ModelOrders, omega: &Omega, with_derivatives: bool) -> Result<PredictorPanel> {
    if !omega.matches(&orders) {
        return invalid(format!("omega (r={}, s={}) does not match orders {orders}", omega.r(), omega.s()));
    }
    let (t, n) = y.shape();
    let mut z = DMatrix::zeros(t, n * orders.d());
    fill_ar_blocks(y, orders.p, &mut z);
    let derivs = fill_decay_blocks(y, orders, omega, &mut z, with_derivatives);
    Ok(PredictorPanel { z, derivs, orders })
}

pub(crate) fn fill_ar_blocks(y: &DMatrix<f64>, p: usize, z: &mut DMatrix<f64>) {
    let (t, n) = y.shape();
    for k in 0..p {
        let lag = k + 1;
        if lag >= t {
            continue;
        }
        for i in 0..n {
            let src = y.column(i);
            let mut dst = z.column_mut(k * n + i);
            dst.rows_mut(lag, t - lag).copy_from(&src.rows(0, t - lag));
        }
    }
}

/// Rewrites the decay blocks of `z` for a new `ω`; AR blocks are left alone.
pub(crate) fn fill_decay_blocks(
    y: &DMatrix<f64>,
    orders: ModelOrders,
    omega: &Omega,
    z: &mut DMatrix<f64>,
    with_derivatives: bool,
) -> Option<DerivativePanels> {
    let (t, n) = y.shape();
    let p = orders.p;
    let mut derivs = with_derivatives.then(|| DerivativePanels {
        lambda: Vec::with_capacity(orders.r),
        gamma: Vec::with_capacity(orders.s),
        theta: Vec::with_capacity(orders.s),
    });
    let lagged = |col: &[f64], t0: usize| if t0 >= p { col[t0 - p] } else { 0.0 };

    let ys = y.as_slice();
    for (j, &lam) in omega.lambdas.iter().enumerate() {
        let k = p + j;
        let mut dv = derivs.as_ref().map(|_| DMatrix::zeros(t, n));
        for i in 0..n {
            let col = &ys[i * t..(i + 1) * t];
            let off = (k * n + i) * t;
            let out = &mut z.as_mut_slice()[off..off + t];
            out[0] = 0.0;
            let (mut u, mut v) = (0.0, 0.0);
            match dv.as_mut() {
                Some(dm) => {
                    let dcol = &mut dm.as_mut_slice()[i * t..(i + 1) * t];
                    dcol[0] = 0.0;
                    for t0 in 0..t.saturating_sub(1) {
                        let a = u + lagged(col, t0);
                        v = a + lam * v;
                        u = lam * a;
                        out[t0 + 1] = u;
                        dcol[t0 + 1] = v;
                    }
                }
                None => {
                    for t0 in 0..t.saturating_sub(1) {
                        u = lam * (u + lagged(col, t0));
                        out[t0 + 1] = u;
                    }
                }
            }
        }
        if let (Some(d), Some(dv)) = (derivs.as_mut(), dv) {
            d.lambda.push(dv);
        }
    }

    for (m, eta) in omega.etas.iter().enumerate() {
        let kc = p + orders.r + 2 * m;
        let ks = kc + 1;
        let rot = Complex64::from_polar(1.0, eta.theta);
        let w = rot * eta.gamma;
        let iw = Complex64::new(0.0, 1.0) * w;
        let mut dg = derivs.as_ref().map(|_| (DMatrix::zeros(t, n), DMatrix::zeros(t, n)));
        let mut dt = derivs.as_ref().map(|_| (DMatrix::zeros(t, n), DMatrix::zeros(t, n)));
        for i in 0..n {
            let col = &ys[i * t..(i + 1) * t];
            let (oc, os) = ((kc * n + i) * t, (ks * n + i) * t);
            let zs = z.as_mut_slice();
            zs[oc] = 0.0;
            zs[os] = 0.0;
            let mut c = Complex64::new(0.0, 0.0);
            let mut cg = Complex64::new(0.0, 0.0);
            let mut ct = Complex64::new(0.0, 0.0);
            for t0 in 0..t.saturating_sub(1) {
                let a = c + lagged(col, t0);
                if let (Some(dg), Some(dt)) = (dg.as_mut(), dt.as_mut()) {
                    cg = rot * a + w * cg;
                    ct = iw * a + w * ct;
                    dg.0[(t0 + 1, i)] = cg.re;
                    dg.1[(t0 + 1, i)] = cg.im;
                    dt.0[(t0 + 1, i)] = ct.re;
                    dt.1[(t0 + 1, i)] = ct.im;
                }
                c = w * a;
                zs[oc + t0 + 1] = c.re;
                zs[os + t0 + 1] = c.im;
            }
        }
        if let (Some(d), Some(dg), Some(dt)) = (derivs.as_mut(), dg, dt) {
            d.gamma.push(dg);
            d.theta.push(dt);
        }
    }
    derivs
}

/// O(T²) reference evaluation of the predictor panel straight from the weights.
pub fn build_predictors_bruteforce(y: &SeriesPanel, orders: ModelOrders, omega: &Omega) -> Result<PredictorPanel> {
    if !omega.matches(&orders) {
        return invalid("omega does not match orders");
    }
    let data = y.data();
    let (t, n) = data.shape();
    let d = orders.d();
    let mut z = DMatrix::zeros(t, n * d);
    for t0 in 0..t {
        for k in 0..d {
            for h in 1..=t0 {
                let w = weight_unchecked(h, k, &orders, omega);
                if w == 0.0 {
                    continue;
                }
                for i in 0..n {
                    z[(t0, k * n + i)] += w * data[(t0 - h, i)];
                }
            }
        }
    }
    Ok(PredictorPanel { z, derivs: None, orders })
}

fn check_shapes(y: &DMatrix<f64>, z: &PredictorPanel, g: &CoefSet) -> Result<()> {
    if z.z.nrows() != y.nrows() {
        return Err(SpvarError::Shape(format!("predictors have {} rows, data has {}", z.z.nrows(), y.nrows())));
    }
    if g.d() != z.orders.d() || (g.d() > 0 && g.n() * g.d() != z.z.ncols()) || g.n() != y.ncols() {
        return Err(SpvarError::Shape(format!(
            "coefficients (N={}, d={}) do not match predictors ({} columns) and data (N={})",
            g.n(),
            g.d(),
            z.z.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `R = Y - Z Gᵀ` for a (possibly row-restricted) concatenated coefficient block `g`.
pub(crate) fn residual_mat(y: &DMatrix<f64>, z: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut r = y.clone();
    if g.ncols() > 0 {
        r.gemm(-1.0, z, &g.transpose(), 1.0);
    }
    r
}

/// Sum of squares, compensated for long panels.
pub(crate) fn sum_sq(m: &DMatrix<f64>) -> f64 {
    if m.nrows() <= 10_000 {
        return m.norm_squared();
    }
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in m.iter() {
        let y = v * v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// `(1/T) Σ_t ‖y_t - G z_t‖²`.
pub fn loss_value(y: &SeriesPanel, z: &PredictorPanel, g: &CoefSet) -> Result<f64> {
    check_shapes(y.data(), z, g)?;
    let r = residual_mat(y.data(), &z.z, &g.concat());
    Ok(sum_sq(&r) / y.t() as f64)
}

/// `-(2/T) Σ_t (y_t - G z_t) z_tᵀ`, an `N × Nd` matrix.
pub fn grad_g(y: &SeriesPanel, z: &PredictorPanel, g: &CoefSet) -> Result<DMatrix<f64>> {
    check_shapes(y.data(), z, g)?;
    let r = residual_mat(y.data(), &z.z, &g.concat());
    Ok(grad_g_from_residual(&r, &z.z))
}

pub(crate) fn grad_g_from_residual(r: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let t = r.nrows() as f64;
    let mut out = DMatrix::zeros(r.ncols(), z.ncols());
    out.gemm_tr(-2.0 / t, r, z, 0.0);
    out
}

/// `∂L/∂ω` in the order of [`Omega::to_vec`].
pub fn grad_omega(y: &SeriesPanel, z: &PredictorPanel, g: &CoefSet, orders: ModelOrders) -> Result<Vec<f64>> {
    check_shapes(y.data(), z, g)?;
    if orders != z.orders {
        return Err(SpvarError::Shape(format!("orders {orders} differ from predictor orders {}", z.orders)));
    }
    let derivs = z.derivs.as_ref().ok_or_else(|| SpvarError::Precondition("predictors were built without derivative panels".into()))?;
    let r = residual_mat(y.data(), &z.z, &g.concat());
    Ok(grad_omega_from_residual(&r, derivs, &g.concat(), orders))
}

/// `g` is the `m × Nd` coefficient block matching the `m` residual columns.
pub(crate) fn grad_omega_from_residual(r: &DMatrix<f64>, derivs: &DerivativePanels, g: &DMatrix<f64>, orders: ModelOrders) -> Vec<f64> {
    let t = r.nrows() as f64;
    let n = if orders.d() == 0 { 0 } else { g.ncols() / orders.d() };
    let scale = -2.0 / t;
    let contrib = |k: usize, v: &DMatrix<f64>| -> f64 {
        let gk = g.columns(k * n, n);
        if gk.iter().all(|x| *x == 0.0) {
            return 0.0;
        }
        let rv = r.tr_mul(v);
        gk.component_mul(&rv).sum()
    };
    let mut out = Vec::with_capacity(orders.n_omega());
    for (j, v) in derivs.lambda.iter().enumerate() {
        out.push(scale * contrib(orders.p + j, v));
    }
    for m in 0..orders.s {
        let kc = orders.p + orders.r + 2 * m;
        let (gc, gs) = &derivs.gamma[m];
        let (tc, ts) = &derivs.theta[m];
        out.push(scale * (contrib(kc, gc) + contrib(kc + 1, gs)));
        out.push(scale * (contrib(kc, tc) + contrib(kc + 1, ts)));
    }
    out
}

/// `ε̂_t = y_t - Σ_{h<t} A_h y_{t-h}` for every `t`, as a `T × N` matrix.
pub fn residuals(model: &SpvarModel, y: &SeriesPanel) -> Result<DMatrix<f64>> {
    if model.n() != y.n() {
        return Err(SpvarError::Shape(format!("model has N={}, data has N={}", model.n(), y.n())));
    }
    let z = build_predictors(y, model.orders(), model.omega(), false)?;
    Ok(residual_mat(y.data(), &z.z, &model.coefs().concat()))
}

/// Streaming form of the predictor recursions: holds `z_t` for the next time point
/// and advances one observation at a time.
#[derive(Clone, Debug)]
pub struct PredictorState {
    orders: ModelOrders,
    lambdas: Vec<f64>,
    rates: Vec<Complex64>,
    n: usize,
    /// `hist[k] = y_{t-1-k}` for `k < p`.
    hist: std::collections::VecDeque<Vec<f64>>,
    real: Vec<Vec<f64>>,
    cplx: Vec<Vec<Complex64>>,
}

impl PredictorState {
    pub fn new(n: usize, orders: ModelOrders, omega: &Omega) -> Result<Self> {
        if !omega.matches(&orders) {
            return invalid("omega does not match orders");
        }
        Ok(Self {
            orders,
            lambdas: omega.lambdas.clone(),
            rates: omega.etas.iter().map(|e| Complex64::from_polar(e.gamma, e.theta)).collect(),
            n,
            hist: (0..orders.p).map(|_| vec![0.0; n]).collect(),
            real: vec![vec![0.0; n]; orders.r],
            cplx: vec![vec![Complex64::new(0.0, 0.0); n]; orders.s],
        })
    }

    /// Conditional mean `Σ_k G_k x_t^{[k]}` of the next observation.
    pub fn predict(&self, g: &CoefSet) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        let mut add = |gk: &DMatrix<f64>, x: &mut dyn Iterator<Item = f64>| {
            for (j, xj) in x.enumerate() {
                if xj == 0.0 {
                    continue;
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o += gk[(i, j)] * xj;
                }
            }
        };
        let p = self.orders.p;
        let r = self.orders.r;
        for k in 0..p {
            add(g.get(k), &mut self.hist[k].iter().copied());
        }
        for j in 0..r {
            add(g.get(p + j), &mut self.real[j].iter().copied());
        }
        for m in 0..self.orders.s {
            add(g.get(p + r + 2 * m), &mut self.cplx[m].iter().map(|c| c.re));
            add(g.get(p + r + 2 * m + 1), &mut self.cplx[m].iter().map(|c| c.im));
        }
        out
    }

    /// Feeds the observation `y_t`.
    pub fn push(&mut self, y: &[f64]) {
        let p = self.orders.p;
        let lagged: Vec<f64> = if p == 0 { y.to_vec() } else { self.hist[p - 1].clone() };
        for (u, &lam) in self.real.iter_mut().zip(&self.lambdas) {
            for (ui, yi) in u.iter_mut().zip(&lagged) {
                *ui = lam * (*ui + yi);
            }
        }
        for (c, &w) in self.cplx.iter_mut().zip(&self.rates) {
            for (ci, yi) in c.iter_mut().zip(&lagged) {
                *ci = w * (*ci + yi);
            }
        }
        if p > 0 {
            self.hist.pop_back();
            self.hist.push_front(y.to_vec());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Eta;

    fn panel(v: &[f64], t: usize, n: usize) -> SeriesPanel {
        SeriesPanel::from_matrix(DMatrix::from_row_slice(t, n, v)).unwrap()
    }

    #[test]
    fn first_row_is_zero_and_ma_block_hand_value() {
        let y = panel(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2);
        let lam = 0.7;
        let pp = build_predictors(&y, ModelOrders::new(1, 1, 0), &Omega::new(vec![lam], vec![]), false).unwrap();
        assert!(pp.z.row(0).iter().all(|v| *v == 0.0));
        // t = 3: AR block is y_2, decay block is λ y_1.
        assert_eq!(pp.z[(2, 0)], 3.0);
        assert_eq!(pp.z[(2, 1)], 4.0);
        assert_eq!(pp.z[(2, 2)], lam * 1.0);
        assert_eq!(pp.z[(2, 3)], lam * 2.0);
    }

    #[test]
    fn scalar_loss_hand_value() {
        let y = panel(&[1.0, 1.0], 2, 1);
        let o = ModelOrders::new(1, 0, 0);
        let pp = build_predictors(&y, o, &Omega::empty(), false).unwrap();
        let g = CoefSet::new(vec![DMatrix::from_element(1, 1, 0.5)]).unwrap();
        assert!((loss_value(&y, &pp, &g).unwrap() - 0.625).abs() < 1e-15);
    }

    #[test]
    fn zero_g_loss_is_mean_square() {
        let y = panel(&[1.0, -2.0, 0.5, 3.0], 2, 2);
        let o = ModelOrders::new(1, 1, 0);
        let pp = build_predictors(&y, o, &Omega::new(vec![0.4], vec![]), false).unwrap();
        let l = loss_value(&y, &pp, &CoefSet::zeros(2, 2)).unwrap();
        assert!((l - (1.0 + 4.0 + 0.25 + 9.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_zero_kills_complex_blocks() {
        let y = SeriesPanel::from_matrix(DMatrix::from_fn(12, 2, |t, i| (t as f64 + 1.0) * (i as f64 - 0.5))).unwrap();
        let o = ModelOrders::new(0, 0, 1);
        let om = Omega::new(vec![], vec![Eta::new(0.0, 1.0)]);
        let bf = build_predictors_bruteforce(&y, o, &om).unwrap();
        let rec = build_predictors(&y, o, &om, false).unwrap();
        assert!(bf.z.iter().all(|v| *v == 0.0));
        assert!(rec.z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_omega_needs_derivatives() {
        let y = panel(&[1.0, 2.0, 3.0], 3, 1);
        let o = ModelOrders::new(0, 1, 0);
        let pp = build_predictors(&y, o, &Omega::new(vec![0.2], vec![]), false).unwrap();
        let g = CoefSet::zeros(1, 1);
        assert!(matches!(grad_omega(&y, &pp, &g, o), Err(SpvarError::Precondition(_))));
    }

    #[test]
    fn single_row_gradient_is_zero() {
        let y = panel(&[1.3], 1, 1);
        let o = ModelOrders::new(1, 0, 0);
        let pp = build_predictors(&y, o, &Omega::empty(), false).unwrap();
        let g = CoefSet::new(vec![DMatrix::from_element(1, 1, 0.3)]).unwrap();
        assert_eq!(grad_g(&y, &pp, &g).unwrap()[(0, 0)], 0.0);
    }
}
