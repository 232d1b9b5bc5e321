//! Synthetic data: sparse SPVAR(∞) designs and VARMA(1,1) processes.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpvarError};
use crate::linalg::spectral_radius;
use crate::loss::PredictorState;
use crate::model::{stationarity_numerical, sufficient_lhs, CoefSet, Eta, ModelOrders, NumericalCheckOptions, Omega, SpvarModel};
use crate::panel::SeriesPanel;

pub const DEFAULT_BURN_IN: usize = 500;

/// The generator used everywhere a seed is accepted.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Where the nonzeros of each `G_k` go.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sparsity {
    /// Exactly this many nonzeros in every row.
    PerRow(usize),
    /// `c·N` nonzeros per matrix at uniformly random positions.
    Total(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub orders: ModelOrders,
    pub omega: Omega,
    pub sparsity: Sparsity,
    pub coef_range: (f64, f64),
    pub stationarity_target: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(n: usize, orders: ModelOrders, omega: Omega, sparsity: Sparsity) -> Self {
        Self { n, orders, omega, sparsity, coef_range: (-0.5, 0.5), stationarity_target: 0.8, noise_sd: 0.2, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return invalid("N must be positive");
        }
        if !self.omega.matches(&self.orders) {
            return invalid("omega does not match orders");
        }
        self.omega.validate()?;
        if !(self.stationarity_target > 0.0 && self.stationarity_target < 1.0) {
            return invalid(format!("stationarity target {} must lie in (0, 1)", self.stationarity_target));
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return invalid(format!("noise sd {} must be positive", self.noise_sd));
        }
        let (lo, hi) = self.coef_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return invalid(format!("coefficient range [{lo}, {hi}] is empty"));
        }
        match self.sparsity {
            Sparsity::PerRow(c) if c > self.n => invalid(format!("{c} nonzeros per row is infeasible for N = {}", self.n)),
            Sparsity::Total(c) if c > self.n => invalid(format!("{c}N nonzeros per matrix is infeasible for N = {}", self.n)),
            _ => Ok(()),
        }
    }
}

/// Outcome of [`rescale_for_stationarity`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rescaled {
    pub coefs: CoefSet,
    pub factor: f64,
    /// Set when the criterion is identically zero, so no factor can reach the target.
    pub unchanged: bool,
}

/// Draws sparse coefficients and rescales them to the stationarity target.
pub fn gen_sparse_coefs<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<CoefSet> {
    spec.validate()?;
    let n = spec.n;
    let unif = Uniform::new(spec.coef_range.0, spec.coef_range.1);
    let mut mats = Vec::with_capacity(spec.orders.d());
    for _ in 0..spec.orders.d() {
        let mut g = DMatrix::zeros(n, n);
        match spec.sparsity {
            Sparsity::PerRow(c) => {
                for i in 0..n {
                    for j in sample(rng, n, c).into_iter() {
                        g[(i, j)] = nonzero(&unif, rng);
                    }
                }
            }
            Sparsity::Total(c) => {
                for pos in sample(rng, n * n, c * n).into_iter() {
                    g[(pos / n, pos % n)] = nonzero(&unif, rng);
                }
            }
        }
        mats.push(g);
    }
    let coefs = CoefSet::with_dim(n, mats)?;
    Ok(rescale_for_stationarity(&coefs, spec.orders.p, &spec.omega, spec.stationarity_target)?.coefs)
}

fn nonzero<R: Rng + ?Sized>(unif: &Uniform<f64>, rng: &mut R) -> f64 {
    loop {
        let v = unif.sample(rng);
        if v != 0.0 {
            return v;
        }
    }
}

/// Finds `c > 0` with `ρ(cḠ₁) + ρ̄/(1-ρ̄) Σ ρ(cG_{p+k}) = target` by bisection on `log c`.
pub fn rescale_for_stationarity(coefs: &CoefSet, p: usize, omega: &Omega, target: f64) -> Result<Rescaled> {
    if !(target > 0.0 && target < 1.0) {
        return invalid(format!("target {target} must lie in (0, 1)"));
    }
    let rho_bar = omega.max_rate();
    if rho_bar >= 1.0 {
        return invalid(format!("decay rates must be below one in modulus, max is {rho_bar}"));
    }
    if p > coefs.d() {
        return invalid(format!("p = {p} exceeds d = {}", coefs.d()));
    }
    let lhs = |c: f64| sufficient_lhs(&coefs.scaled(c), p, rho_bar).0;
    if lhs(1.0) == 0.0 {
        return Ok(Rescaled { coefs: coefs.clone(), factor: 1.0, unchanged: true });
    }
    let (mut lo, mut hi) = (1e-8f64.ln(), 1e8f64.ln());
    if lhs(hi.exp()) < target {
        return Err(SpvarError::Precondition("stationarity target not reachable within the scaling bracket".into()));
    }
    let mut c = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        c = mid.exp();
        let v = lhs(c);
        if (v - target).abs() <= 1e-10 {
            break;
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Rescaled { coefs: coefs.scaled(c), factor: c, unchanged: false })
}

fn check_simulatable(model: &SpvarModel) -> Result<()> {
    let rho_bar = model.omega().max_rate();
    if rho_bar < 1.0 && sufficient_lhs(model.coefs(), model.orders().p, rho_bar).0 < 1.0 {
        return Ok(());
    }
    let rep = stationarity_numerical(model, &NumericalCheckOptions { j_max: 400, ..Default::default() })?;
    if rep.numerical_ok {
        Ok(())
    } else {
        Err(SpvarError::NotStationary(
            "the sufficient condition fails and the VMA partial sums do not settle; pass force to simulate anyway".into(),
        ))
    }
}

/// Draws `T + burn_in` rows of `N(0, σ²I)` innovations.
pub fn draw_innovations<R: Rng + ?Sized>(rows: usize, n: usize, noise_sd: f64, rng: &mut R) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(rows, n);
    for t in 0..rows {
        for i in 0..n {
            let z: f64 = StandardNormal.sample(rng);
            e[(t, i)] = noise_sd * z;
        }
    }
    e
}

/// Simulates `T` observations after `burn_in` warm-up steps from zero initial values.
pub fn simulate_spvar<R: Rng + ?Sized>(
    model: &SpvarModel,
    t: usize,
    burn_in: usize,
    noise_sd: f64,
    rng: &mut R,
    force: bool,
) -> Result<SeriesPanel> {
    if !(noise_sd > 0.0) {
        return invalid("noise sd must be positive");
    }
    if !force {
        check_simulatable(model)?;
    }
    if t == 0 {
        return invalid("T must be positive");
    }
    let eps = draw_innovations(t + burn_in, model.n(), noise_sd, rng);
    simulate_spvar_with_innovations(model, &eps, burn_in)
}

/// Runs the model equation on a given innovation panel and drops the first `burn_in` rows.
pub fn simulate_spvar_with_innovations(model: &SpvarModel, eps: &DMatrix<f64>, burn_in: usize) -> Result<SeriesPanel> {
    let n = model.n();
    if eps.ncols() != n {
        return Err(SpvarError::Shape(format!("innovations have {} columns, model N = {n}", eps.ncols())));
    }
    if eps.nrows() <= burn_in {
        return invalid("innovation panel must be longer than the burn-in");
    }
    let mut state = PredictorState::new(n, model.orders(), model.omega())?;
    let total = eps.nrows();
    let mut out = DMatrix::zeros(total - burn_in, n);
    for t in 0..total {
        let mut y = state.predict(model.coefs());
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += eps[(t, i)];
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SpvarError::NotStationary(format!("simulated path overflowed at step {t}")));
        }
        state.push(&y);
        if t >= burn_in {
            out.row_mut(t - burn_in).copy_from_slice(&y);
        }
    }
    SeriesPanel::from_matrix(out)
}

/// `Θ^{h-1}(Φ - Θ)`.
pub fn varma11_ar_coef(phi: &DMatrix<f64>, theta: &DMatrix<f64>, h: usize) -> Result<DMatrix<f64>> {
    if h == 0 {
        return Err(SpvarError::IndexOutOfRange { what: "h", index: 0, lo: 1, hi: usize::MAX });
    }
    if phi.shape() != theta.shape() || !phi.is_square() {
        return Err(SpvarError::Shape("Phi and Theta must be square of equal size".into()));
    }
    let mut a = phi - theta;
    for _ in 1..h {
        a = theta * a;
    }
    Ok(a)
}

/// A random orthogonal `k × k` matrix: QR of a Gaussian matrix with the signs of `diag(R)` fixed positive.
pub fn random_orthogonal<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Builds `Θ = B J B⁻¹` with `B = diag{B₀, I}` and
/// `J = diag{λ_1..λ_r, C_1..C_s, 0}`, `C_m = γ_m [[cos θ_m, sin θ_m], [-sin θ_m, cos θ_m]]`,
/// together with the SPVAR(∞) model with `p = 1` reproducing `A_h = Θ^{h-1}(Φ - Θ)`.
pub fn varma11_from_jordan(phi: &DMatrix<f64>, lambdas: &[f64], etas: &[Eta], b0: &DMatrix<f64>) -> Result<(SpvarModel, DMatrix<f64>)> {
    let n = phi.nrows();
    if !phi.is_square() || n == 0 {
        return Err(SpvarError::Shape("Phi must be square and non-empty".into()));
    }
    let (r, s) = (lambdas.len(), etas.len());
    let q = r + 2 * s;
    if q > n {
        return invalid(format!("r + 2s = {q} exceeds N = {n}"));
    }
    if !b0.is_square() || b0.nrows() > n {
        return Err(SpvarError::Shape(format!("B0 must be square with side at most N = {n}")));
    }
    let mut eig: Vec<num_complex::Complex64> = Vec::new();
    for &l in lambdas {
        if !(l.abs() < 1.0) || l == 0.0 {
            return invalid(format!("real eigenvalue {l} must be nonzero with modulus below one"));
        }
        eig.push(num_complex::Complex64::new(l, 0.0));
    }
    for e in etas {
        if !(e.gamma > 0.0 && e.gamma < 1.0) {
            return invalid(format!("complex modulus {} must lie in (0, 1)", e.gamma));
        }
        if !(e.theta > 0.0 && e.theta < std::f64::consts::PI) {
            return invalid(format!("complex angle {} must lie in (0, pi)", e.theta));
        }
        eig.push(num_complex::Complex64::from_polar(e.gamma, e.theta));
    }
    for a in 0..eig.len() {
        for b in a + 1..eig.len() {
            if (eig[a] - eig[b]).norm() < 1e-12 {
                return invalid("eigenvalues must be distinct");
            }
        }
    }
    let k0 = b0.nrows();
    let mut b = DMatrix::identity(n, n);
    b.view_mut((0, 0), (k0, k0)).copy_from(b0);
    let b_inv = b.clone().try_inverse().ok_or_else(|| SpvarError::InvalidArgument("B is singular".into()))?;
    let mut j = DMatrix::zeros(n, n);
    for (idx, &l) in lambdas.iter().enumerate() {
        j[(idx, idx)] = l;
    }
    for (m, e) in etas.iter().enumerate() {
        let o = r + 2 * m;
        let (c, sn) = (e.gamma * e.theta.cos(), e.gamma * e.theta.sin());
        j[(o, o)] = c;
        j[(o, o + 1)] = sn;
        j[(o + 1, o)] = -sn;
        j[(o + 1, o + 1)] = c;
    }
    let theta = &b * &j * &b_inv;
    let g1 = phi - &theta;
    let right = &b_inv * &g1;
    let outer = |a: usize, c: usize| -> DMatrix<f64> { b.column(a) * right.row(c) };
    let mut mats = vec![g1];
    for idx in 0..r {
        mats.push(outer(idx, idx));
    }
    for m in 0..s {
        let o = r + 2 * m;
        mats.push(outer(o, o) + outer(o + 1, o + 1));
        mats.push(outer(o, o + 1) - outer(o + 1, o));
    }
    let model = SpvarModel::new(ModelOrders::new(1, r, s), Omega::new(lambdas.to_vec(), etas.to_vec()), CoefSet::with_dim(n, mats)?)?;
    Ok((model, theta))
}

fn check_varma(phi: &DMatrix<f64>, theta: &DMatrix<f64>) -> Result<()> {
    if phi.shape() != theta.shape() || !phi.is_square() || phi.nrows() == 0 {
        return Err(SpvarError::Shape("Phi and Theta must be square of equal, positive size".into()));
    }
    let rp = spectral_radius(phi);
    if !(rp < 1.0) {
        return invalid(format!("Phi has spectral radius {rp} >= 1"));
    }
    let rt = spectral_radius(theta);
    if !(rt < 1.0) {
        return invalid(format!("Theta has spectral radius {rt} >= 1"));
    }
    Ok(())
}

/// `y_t = Φ y_{t-1} + ε_t - Θ ε_{t-1}` from zero initial values.
pub fn simulate_varma11<R: Rng + ?Sized>(
    phi: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    t: usize,
    burn_in: usize,
    noise_sd: f64,
    rng: &mut R,
) -> Result<SeriesPanel> {
    check_varma(phi, theta)?;
    if t == 0 {
        return invalid("T must be positive");
    }
    if !(noise_sd > 0.0) {
        return invalid("noise sd must be positive");
    }
    let eps = draw_innovations(t + burn_in, phi.nrows(), noise_sd, rng);
    simulate_varma11_with_innovations(phi, theta, &eps, burn_in)
}

pub fn simulate_varma11_with_innovations(
    phi: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    eps: &DMatrix<f64>,
    burn_in: usize,
) -> Result<SeriesPanel> {
    check_varma(phi, theta)?;
    let n = phi.nrows();
    if eps.ncols() != n || eps.nrows() <= burn_in {
        return Err(SpvarError::Shape("innovation panel has the wrong shape".into()));
    }
    let total = eps.nrows();
    let mut out = DMatrix::zeros(total - burn_in, n);
    let mut y_prev = DVector::zeros(n);
    let mut e_prev = DVector::zeros(n);
    for t in 0..total {
        let e: DVector<f64> = eps.row(t).transpose();
        let y = phi * &y_prev + &e - theta * &e_prev;
        if t >= burn_in {
            out.row_mut(t - burn_in).copy_from(&y.transpose());
        }
        y_prev = y;
        e_prev = e;
    }
    SeriesPanel::from_matrix(out)
}
