//! The SPVAR(∞) parameterization.
//!
//! Lag matrices are linear combinations `A_h = Σ_k ℓ_{h,k}(ω) G_k` of `d = p + r + 2s`
//! base matrices. The first `p` weights are lag indicators, the next `r` are
//! exponential decays `λ_j^{h-p}` and the last `2s` are damped cosine / sine
//! pairs `γ_m^{h-p} cos((h-p)θ_m)`, `γ_m^{h-p} sin((h-p)θ_m)`, all switched on
//! for `h > p`.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpvarError};
use crate::linalg::{companion, spectral_radius};

/// Default cap on each of p, r and s.
pub const DEFAULT_MAX_ORDER: usize = 6;

/// Orders `(p, r, s)` of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelOrders {
    pub p: usize,
    pub r: usize,
    pub s: usize,
}

impl ModelOrders {
    pub const fn new(p: usize, r: usize, s: usize) -> Self {
        Self { p, r, s }
    }

    /// Number of coefficient matrices, `p + r + 2s`.
    pub const fn d(&self) -> usize {
        self.p + self.r + 2 * self.s
    }

    /// Length of the decay-parameter vector, `r + 2s`.
    pub const fn n_omega(&self) -> usize {
        self.r + 2 * self.s
    }

    pub fn check_max(&self, max: ModelOrders) -> Result<()> {
        if self.p > max.p || self.r > max.r || self.s > max.s {
            return invalid(format!("orders {self} exceed the configured maxima {max}"));
        }
        Ok(())
    }
}

impl std::fmt::Display for ModelOrders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.r, self.s)
    }
}

impl std::str::FromStr for ModelOrders {
    type Err = SpvarError;

    /// Parses `"p,r,s"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return invalid(format!("expected orders as p,r,s but got '{s}'"));
        }
        let mut v = [0usize; 3];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part.parse().map_err(|_| SpvarError::InvalidArgument(format!("bad order '{part}' in '{s}'")))?;
        }
        Ok(Self::new(v[0], v[1], v[2]))
    }
}

/// Parameters `(γ, θ)` of one damped cosine/sine pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eta {
    pub gamma: f64,
    pub theta: f64,
}

impl Eta {
    pub const fn new(gamma: f64, theta: f64) -> Self {
        Self { gamma, theta }
    }
}

/// The decay-parameter vector `ω = (λ_1..λ_r, η_1..η_s)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Omega {
    pub lambdas: Vec<f64>,
    pub etas: Vec<Eta>,
}

impl Omega {
    pub fn new(lambdas: Vec<f64>, etas: Vec<Eta>) -> Self {
        Self { lambdas, etas }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn r(&self) -> usize {
        self.lambdas.len()
    }

    pub fn s(&self) -> usize {
        self.etas.len()
    }

    /// Flattened as `[λ_1, .., λ_r, γ_1, θ_1, .., γ_s, θ_s]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.lambdas.clone();
        for e in &self.etas {
            v.push(e.gamma);
            v.push(e.theta);
        }
        v
    }

    pub fn from_vec(r: usize, s: usize, v: &[f64]) -> Result<Self> {
        if v.len() != r + 2 * s {
            return invalid(format!("omega vector has length {}, expected {}", v.len(), r + 2 * s));
        }
        let lambdas = v[..r].to_vec();
        let etas = (0..s).map(|m| Eta::new(v[r + 2 * m], v[r + 2 * m + 1])).collect();
        Ok(Self { lambdas, etas })
    }

    /// `max{|λ_j|, γ_m}`, or 0 when ω is empty.
    pub fn max_rate(&self) -> f64 {
        self.lambdas.iter().map(|l| l.abs()).chain(self.etas.iter().map(|e| e.gamma)).fold(0.0, f64::max)
    }

    pub fn matches(&self, orders: &ModelOrders) -> bool {
        self.r() == orders.r && self.s() == orders.s
    }

    /// Membership in the open parameter space `(-1,1)^r × ([0,1) × (0,π))^s`.
    pub fn validate(&self) -> Result<()> {
        for (j, l) in self.lambdas.iter().enumerate() {
            if !l.is_finite() || l.abs() >= 1.0 {
                return invalid(format!("lambda[{j}] = {l} must lie in (-1, 1)"));
            }
        }
        for (m, e) in self.etas.iter().enumerate() {
            if !e.gamma.is_finite() || !(0.0..1.0).contains(&e.gamma) {
                return invalid(format!("gamma[{m}] = {} must lie in [0, 1)", e.gamma));
            }
            if !e.theta.is_finite() || e.theta <= 0.0 || e.theta >= std::f64::consts::PI {
                return invalid(format!("theta[{m}] = {} must lie in (0, pi)", e.theta));
            }
        }
        Ok(())
    }

    /// Whether every component lies inside the closed search box with margin `eps`.
    pub fn in_box(&self, eps: f64) -> bool {
        let pi = std::f64::consts::PI;
        self.lambdas.iter().all(|l| *l >= -1.0 + eps && *l <= 1.0 - eps)
            && self.etas.iter().all(|e| e.gamma >= 0.0 && e.gamma <= 1.0 - eps && e.theta >= eps && e.theta <= pi - eps)
    }
}

/// The `d` coefficient matrices `G_1..G_d`, each `N × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefSet {
    n: usize,
    mats: Vec<DMatrix<f64>>,
}

impl CoefSet {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = match mats.first() {
            Some(m) => m.nrows(),
            None => return invalid("a coefficient set needs at least one matrix; use CoefSet::empty"),
        };
        Self::with_dim(n, mats)
    }

    /// A set for dimension `n`, allowing zero matrices (white-noise orders).
    pub fn with_dim(n: usize, mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if n == 0 {
            return invalid("series dimension must be positive");
        }
        for (k, m) in mats.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(SpvarError::Shape(format!("G_{} is {}x{}, expected {n}x{n}", k + 1, m.nrows(), m.ncols())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return invalid(format!("G_{} has non-finite entries", k + 1));
            }
        }
        Ok(Self { n, mats })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { n, mats: vec![DMatrix::zeros(n, n); d] }
    }

    pub fn empty(n: usize) -> Self {
        Self { n, mats: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.mats.len()
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn mats_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.mats
    }

    pub fn get(&self, k: usize) -> &DMatrix<f64> {
        &self.mats[k]
    }

    pub fn into_mats(self) -> Vec<DMatrix<f64>> {
        self.mats
    }

    /// Horizontal concatenation `(G_1, .., G_d)`, an `N × Nd` matrix.
    pub fn concat(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n * self.d());
        for (k, g) in self.mats.iter().enumerate() {
            out.view_mut((0, k * n), (n, n)).copy_from(g);
        }
        out
    }

    /// Inverse of [`CoefSet::concat`].
    pub fn from_concat(g: &DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        if n == 0 || !g.ncols().is_multiple_of(n) {
            return Err(SpvarError::Shape(format!("concatenated coefficients {}x{} are not N x Nd", g.nrows(), g.ncols())));
        }
        let d = g.ncols() / n;
        let mats = (0..d).map(|k| g.columns(k * n, n).into_owned()).collect();
        Ok(Self { n, mats })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, mats: self.mats.iter().map(|m| m * c).collect() }
    }

    pub fn nnz(&self, zero_tol: f64) -> usize {
        self.mats.iter().flat_map(|m| m.iter()).filter(|v| v.abs() > zero_tol).count()
    }

    pub fn is_zero(&self) -> bool {
        self.mats.iter().all(|m| m.iter().all(|v| *v == 0.0))
    }
}

/// A complete SPVAR(∞) model.
#[derive(Clone, Debug, PartialEq)]
pub struct SpvarModel {
    orders: ModelOrders,
    omega: Omega,
    coefs: CoefSet,
}

impl SpvarModel {
    pub fn new(orders: ModelOrders, omega: Omega, coefs: CoefSet) -> Result<Self> {
        if !omega.matches(&orders) {
            return invalid(format!("omega has r={}, s={} but orders are {orders}", omega.r(), omega.s()));
        }
        if coefs.d() != orders.d() {
            return invalid(format!("{} coefficient matrices for d = {}", coefs.d(), orders.d()));
        }
        omega.validate()?;
        Ok(Self { orders, omega, coefs })
    }

    /// The all-zero model of the given orders.
    pub fn zeros(n: usize, orders: ModelOrders, omega: Omega) -> Result<Self> {
        Self::new(orders, omega, CoefSet::zeros(n, orders.d()))
    }

    pub fn orders(&self) -> ModelOrders {
        self.orders
    }

    pub fn omega(&self) -> &Omega {
        &self.omega
    }

    pub fn coefs(&self) -> &CoefSet {
        &self.coefs
    }

    pub fn n(&self) -> usize {
        self.coefs.n()
    }

    pub fn into_parts(self) -> (ModelOrders, Omega, CoefSet) {
        (self.orders, self.omega, self.coefs)
    }

    /// `A_h` for lag `h ≥ 1`.
    pub fn coef_matrix(&self, h: usize) -> Result<DMatrix<f64>> {
        coef_matrix(h, self)
    }

    pub fn vma_coeffs(&self, horizon: usize) -> Vec<DMatrix<f64>> {
        vma_coeffs(self, horizon)
    }
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(SpvarError::IndexOutOfRange { what: "k", index: k, lo: 1, hi: d });
    }
    Ok(())
}

/// The weight `ℓ_{h,k}(ω)` for lag `h ≥ 1` and 1-based coefficient index `k`.
pub fn weight(h: usize, k: usize, orders: &ModelOrders, omega: &Omega) -> Result<f64> {
    if h == 0 {
        return Err(SpvarError::IndexOutOfRange { what: "h", index: 0, lo: 1, hi: usize::MAX });
    }
    check_k(k, orders.d())?;
    if !omega.matches(orders) {
        return invalid("omega does not match orders");
    }
    Ok(weight_unchecked(h, k - 1, orders, omega))
}

/// 0-based `k`, no validation.
pub(crate) fn weight_unchecked(h: usize, k: usize, orders: &ModelOrders, omega: &Omega) -> f64 {
    let p = orders.p;
    if k < p {
        return if h == k + 1 { 1.0 } else { 0.0 };
    }
    if h <= p {
        return 0.0;
    }
    let e = (h - p) as i32;
    let j = k - p;
    if j < orders.r {
        return omega.lambdas[j].powi(e);
    }
    let m = (j - orders.r) / 2;
    let eta = omega.etas[m];
    let amp = eta.gamma.powi(e);
    let ang = e as f64 * eta.theta;
    if (j - orders.r).is_multiple_of(2) {
        amp * ang.cos()
    } else {
        amp * ang.sin()
    }
}

/// All `d` weights for lag `h`.
pub fn lag_weights(h: usize, orders: &ModelOrders, omega: &Omega) -> Vec<f64> {
    (0..orders.d()).map(|k| weight_unchecked(h, k, orders, omega)).collect()
}

/// `A_h = Σ_k ℓ_{h,k}(ω) G_k`.
pub fn coef_matrix(h: usize, model: &SpvarModel) -> Result<DMatrix<f64>> {
    if h == 0 {
        return Err(SpvarError::IndexOutOfRange { what: "h", index: 0, lo: 1, hi: usize::MAX });
    }
    let n = model.n();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (k, w) in lag_weights(h, &model.orders, &model.omega).into_iter().enumerate() {
        if w != 0.0 {
            a += model.coefs.get(k) * w;
        }
    }
    Ok(a)
}

/// VMA(∞) coefficients `Ψ_1..Ψ_J` via `Ψ_j = Σ_{h=1}^{j} A_h Ψ_{j-h}`, `Ψ_0 = I`.
pub fn vma_coeffs(model: &SpvarModel, horizon: usize) -> Vec<DMatrix<f64>> {
    let n = model.n();
    let a: Vec<DMatrix<f64>> = (1..=horizon).map(|h| coef_matrix(h, model).expect("h >= 1")).collect();
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    psi.push(DMatrix::identity(n, n));
    for j in 1..=horizon {
        let mut acc = DMatrix::zeros(n, n);
        for h in 1..=j {
            acc.gemm(1.0, &a[h - 1], &psi[j - h], 1.0);
        }
        psi.push(acc);
    }
    psi.remove(0);
    psi
}

/// `(Σ_h ‖A_h(a) − A_h(b)‖_F²)^{1/2}`, summed until both decay weights fall below `1e-12` (at most 10000 lags).
pub fn lag_distance(a: &SpvarModel, b: &SpvarModel) -> Result<f64> {
    if a.n() != b.n() {
        return Err(SpvarError::Shape(format!("models have N = {} and N = {}", a.n(), b.n())));
    }
    let rate = a.omega.max_rate().max(b.omega.max_rate());
    let p = a.orders.p.max(b.orders.p);
    let mut acc = 0.0;
    for h in 1..=10_000usize {
        if h > p && rate.powi((h - p) as i32) < 1e-12 {
            break;
        }
        acc += (coef_matrix(h, a)? - coef_matrix(h, b)?).norm_squared();
    }
    Ok(acc.sqrt())
}

/// Outcome of the sufficient (spectral-radius) stationarity check.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientCheck {
    pub holds: bool,
    /// `ρ(Ḡ₁)`, 0 when p = 0.
    pub rho_companion: f64,
    /// `Σ_k ρ(G_{p+k})` over the decay blocks.
    pub ma_radius_sum: f64,
    /// `ρ(Ḡ₁) + ρ̄/(1-ρ̄) Σ_k ρ(G_{p+k})`.
    pub lhs: f64,
}

/// Left-hand side of the sufficient condition, for any `ρ̄ ∈ [0, 1)`.
pub(crate) fn sufficient_lhs(coefs: &CoefSet, p: usize, rho_bar: f64) -> (f64, f64, f64) {
    let rho_comp = if p == 0 { 0.0 } else { spectral_radius(&companion(&coefs.mats()[..p])) };
    let ma_sum: f64 = coefs.mats()[p..].iter().map(spectral_radius).sum();
    let lhs = if ma_sum == 0.0 { rho_comp } else { rho_comp + rho_bar / (1.0 - rho_bar) * ma_sum };
    (lhs, rho_comp, ma_sum)
}

/// Checks `ρ(Ḡ₁) + ρ̄(1-ρ̄)⁻¹ Σ_k ρ(G_{p+k}) < 1` for the given `ρ̄`.
pub fn stationarity_sufficient(model: &SpvarModel, rho_bar: f64) -> Result<SufficientCheck> {
    if !(rho_bar > 0.0 && rho_bar < 1.0) {
        return invalid(format!("rho_bar = {rho_bar} must lie in (0, 1)"));
    }
    for (j, l) in model.omega.lambdas.iter().enumerate() {
        if l.abs() > rho_bar {
            return Err(SpvarError::Precondition(format!("|lambda[{j}]| = {} exceeds rho_bar = {rho_bar}", l.abs())));
        }
    }
    for (m, e) in model.omega.etas.iter().enumerate() {
        if e.gamma > rho_bar {
            return Err(SpvarError::Precondition(format!("gamma[{m}] = {} exceeds rho_bar = {rho_bar}", e.gamma)));
        }
    }
    let (lhs, rho_companion, ma_radius_sum) = sufficient_lhs(&model.coefs, model.orders.p, rho_bar);
    Ok(SufficientCheck { holds: lhs < 1.0, rho_companion, ma_radius_sum, lhs })
}

/// Submultiplicative norm used for the partial-sum check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixNorm {
    #[default]
    Frobenius,
    /// Maximum absolute column sum.
    One,
    /// Maximum absolute row sum.
    Inf,
}

impl MatrixNorm {
    pub fn eval(&self, m: &DMatrix<f64>) -> f64 {
        match self {
            MatrixNorm::Frobenius => m.norm(),
            MatrixNorm::One => m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
            MatrixNorm::Inf => m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericalCheckOptions {
    pub j_max: usize,
    pub tail_window: usize,
    pub tol: f64,
    pub norm: MatrixNorm,
}

impl Default for NumericalCheckOptions {
    fn default() -> Self {
        Self { j_max: 200, tail_window: 10, tol: 1e-8, norm: MatrixNorm::Frobenius }
    }
}

/// Stationarity diagnostics of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct StationarityReport {
    /// Sufficient condition evaluated at `ρ̄ = max{|λ_j|, γ_m}`.
    pub sufficient_ok: bool,
    /// `S_J = Σ_{j≤J} ‖Ψ_j‖` for `J = 1..j_used`.
    pub partial_sums: Vec<f64>,
    pub numerical_ok: bool,
    pub j_used: usize,
    pub rho_companion: f64,
}

const DIVERGENCE_BOUND: f64 = 1e150;

/// Partial-sum convergence check of `Σ_j ‖Ψ_j‖`.
///
/// Declares convergence when the last `tail_window` increments are all below `tol`.
/// Stops early (with `numerical_ok = false`) once a norm overflows.
pub fn stationarity_numerical(model: &SpvarModel, opts: &NumericalCheckOptions) -> Result<StationarityReport> {
    if opts.tail_window == 0 || opts.j_max < opts.tail_window {
        return invalid(format!("need j_max >= tail_window >= 1, got j_max = {}, tail_window = {}", opts.j_max, opts.tail_window));
    }
    if !(opts.tol > 0.0) {
        return invalid("tol must be positive");
    }
    let rho_bar = model.omega.max_rate();
    let (lhs, rho_companion, _) = sufficient_lhs(&model.coefs, model.orders.p, rho_bar.min(1.0 - f64::EPSILON));
    let sufficient_ok = rho_bar < 1.0 && lhs < 1.0;

    let n = model.n();
    let a: Vec<DMatrix<f64>> = (1..=opts.j_max).map(|h| coef_matrix(h, model).expect("h >= 1")).collect();
    let mut psi: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
    let mut partial_sums = Vec::with_capacity(opts.j_max);
    let mut total = 0.0;
    let mut below = 0usize;
    for j in 1..=opts.j_max {
        let mut acc = DMatrix::zeros(n, n);
        for h in 1..=j {
            acc.gemm(1.0, &a[h - 1], &psi[j - h], 1.0);
        }
        let norm = opts.norm.eval(&acc);
        if !norm.is_finite() || norm > DIVERGENCE_BOUND {
            return Ok(StationarityReport { sufficient_ok, partial_sums, numerical_ok: false, j_used: j, rho_companion });
        }
        total += norm;
        partial_sums.push(total);
        psi.push(acc);
        if norm < opts.tol {
            below += 1;
        } else {
            below = 0;
        }
        if below >= opts.tail_window {
            return Ok(StationarityReport { sufficient_ok, partial_sums, numerical_ok: true, j_used: j, rho_companion });
        }
    }
    Ok(StationarityReport { sufficient_ok, partial_sums, numerical_ok: false, j_used: opts.j_max, rho_companion })
}

/// Sorts λ descending and η by θ ascending (then γ descending), permuting the
/// decay blocks of G consistently. `coef_matrix` is unchanged for every lag.
pub fn canonicalize(model: &SpvarModel) -> SpvarModel {
    let ModelOrders { p, r, s } = model.orders;
    let mut lam_idx: Vec<usize> = (0..r).collect();
    lam_idx.sort_by(|&a, &b| model.omega.lambdas[b].partial_cmp(&model.omega.lambdas[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut eta_idx: Vec<usize> = (0..s).collect();
    eta_idx.sort_by(|&a, &b| {
        let (ea, eb) = (model.omega.etas[a], model.omega.etas[b]);
        ea.theta
            .partial_cmp(&eb.theta)
            .unwrap_or(Ordering::Equal)
            .then(eb.gamma.partial_cmp(&ea.gamma).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mats = model.coefs.mats();
    let mut new_mats: Vec<DMatrix<f64>> = mats[..p].to_vec();
    new_mats.extend(lam_idx.iter().map(|&j| mats[p + j].clone()));
    for &m in &eta_idx {
        new_mats.push(mats[p + r + 2 * m].clone());
        new_mats.push(mats[p + r + 2 * m + 1].clone());
    }
    let omega = Omega {
        lambdas: lam_idx.iter().map(|&j| model.omega.lambdas[j]).collect(),
        etas: eta_idx.iter().map(|&m| model.omega.etas[m]).collect(),
    };
    SpvarModel { orders: model.orders, omega, coefs: CoefSet { n: model.coefs.n, mats: new_mats } }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrdersDoc {
    p: usize,
    r: usize,
    s: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OmegaDoc {
    lambdas: Vec<f64>,
    etas: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    orders: OrdersDoc,
    omega: OmegaDoc,
    #[serde(rename = "G")]
    g: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(default)]
    names: Vec<String>,
}

/// Serializes a model (plus series names) to its JSON document.
pub fn model_to_json(model: &SpvarModel, names: &[String]) -> Result<String> {
    let doc = ModelDoc {
        orders: OrdersDoc { p: model.orders.p, r: model.orders.r, s: model.orders.s },
        omega: OmegaDoc { lambdas: model.omega.lambdas.clone(), etas: model.omega.etas.iter().map(|e| [e.gamma, e.theta]).collect() },
        g: model.coefs.mats().iter().map(|m| m.row_iter().map(|row| row.iter().copied().collect()).collect()).collect(),
        n: model.n(),
        names: names.to_vec(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parses a model JSON document, returning the model and the series names
/// (defaulting to `y1..yN` when absent).
pub fn model_from_json(text: &str) -> Result<(SpvarModel, Vec<String>)> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    let orders = ModelOrders::new(doc.orders.p, doc.orders.r, doc.orders.s);
    let n = doc.n;
    let mut mats = Vec::with_capacity(doc.g.len());
    for (k, rows) in doc.g.iter().enumerate() {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(SpvarError::Shape(format!("G_{} in model JSON is not {n}x{n}", k + 1)));
        }
        mats.push(DMatrix::from_fn(n, n, |i, j| rows[i][j]));
    }
    let coefs = CoefSet::with_dim(n, mats)?;
    let omega = Omega::new(doc.omega.lambdas, doc.omega.etas.iter().map(|e| Eta::new(e[0], e[1])).collect());
    let model = SpvarModel::new(orders, omega, coefs)?;
    let names = if doc.names.is_empty() {
        default_names(n)
    } else if doc.names.len() == n {
        doc.names
    } else {
        return invalid(format!("model JSON lists {} names for N = {n}", doc.names.len()));
    };
    Ok((model, names))
}

pub fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("y{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn diag(n: usize, v: f64) -> DMatrix<f64> {
        DMatrix::identity(n, n) * v
    }

    #[test]
    fn weight_examples() {
        let o = ModelOrders::new(1, 1, 0);
        let om = Omega::new(vec![-0.45], vec![]);
        assert_eq!(weight(2, 2, &o, &om).unwrap(), -0.45);
        assert_eq!(weight(1, 1, &o, &om).unwrap(), 1.0);
        assert_eq!(weight(1, 2, &o, &om).unwrap(), 0.0);

        let o = ModelOrders::new(1, 0, 1);
        let om = Omega::new(vec![], vec![Eta::new(0.6, PI / 2.0)]);
        let w = weight(3, 2, &o, &om).unwrap();
        assert!((w + 0.36).abs() < 1e-15);
    }

    #[test]
    fn weight_rejects_bad_index() {
        let o = ModelOrders::new(1, 1, 0);
        let om = Omega::new(vec![0.5], vec![]);
        assert!(matches!(weight(1, 0, &o, &om), Err(SpvarError::IndexOutOfRange { .. })));
        assert!(matches!(weight(1, 3, &o, &om), Err(SpvarError::IndexOutOfRange { .. })));
        assert!(matches!(weight(0, 1, &o, &om), Err(SpvarError::IndexOutOfRange { .. })));
    }

    #[test]
    fn coef_matrix_selects_ar_block_and_decays() {
        let g1 = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let g2 = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let lam = -0.7;
        let m =
            SpvarModel::new(ModelOrders::new(1, 1, 0), Omega::new(vec![lam], vec![]), CoefSet::new(vec![g1.clone(), g2.clone()]).unwrap())
                .unwrap();
        assert_eq!(coef_matrix(1, &m).unwrap(), g1);
        assert_eq!(coef_matrix(3, &m).unwrap(), &g2 * (lam * lam));
    }

    #[test]
    fn white_noise_orders_allowed() {
        let m = SpvarModel::zeros(3, ModelOrders::new(0, 0, 0), Omega::empty()).unwrap();
        assert_eq!(coef_matrix(5, &m).unwrap(), DMatrix::zeros(3, 3));
        assert!(vma_coeffs(&m, 4).iter().all(|p| p.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn vma_closed_forms() {
        let g1 = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, -0.3, 0.4]);
        let g2 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.25, -0.1]);
        let lam = 0.5;
        let m =
            SpvarModel::new(ModelOrders::new(1, 1, 0), Omega::new(vec![lam], vec![]), CoefSet::new(vec![g1.clone(), g2.clone()]).unwrap())
                .unwrap();
        let psi = vma_coeffs(&m, 3);
        assert_eq!(psi[0], g1);
        let psi2 = &g1 * &g1 + &g2 * lam;
        assert!((&psi[1] - psi2).amax() < 1e-15);
        let psi3 = &g1 * &g1 * &g1 + (&g1 * &g2) * lam + (&g2 * &g1) * lam + &g2 * (lam * lam);
        assert!((&psi[2] - psi3).amax() < 1e-15);
    }

    #[test]
    fn sufficient_condition_var1() {
        let ok = SpvarModel::new(ModelOrders::new(1, 0, 0), Omega::empty(), CoefSet::new(vec![diag(3, 0.5)]).unwrap()).unwrap();
        assert!(stationarity_sufficient(&ok, 0.5).unwrap().holds);
        let bad = SpvarModel::new(ModelOrders::new(1, 0, 0), Omega::empty(), CoefSet::new(vec![diag(3, 1.1)]).unwrap()).unwrap();
        let chk = stationarity_sufficient(&bad, 0.5).unwrap();
        assert!(!chk.holds);
        assert!((chk.rho_companion - 1.1).abs() < 1e-12);
    }

    #[test]
    fn sufficient_condition_errors() {
        let m =
            SpvarModel::new(ModelOrders::new(0, 1, 0), Omega::new(vec![0.7], vec![]), CoefSet::new(vec![diag(2, 0.1)]).unwrap()).unwrap();
        assert!(matches!(stationarity_sufficient(&m, 1.0), Err(SpvarError::InvalidArgument(_))));
        assert!(matches!(stationarity_sufficient(&m, 0.0), Err(SpvarError::InvalidArgument(_))));
        let err = stationarity_sufficient(&m, 0.5).unwrap_err();
        assert!(err.to_string().contains("lambda[0]"));
    }

    #[test]
    fn numerical_check_examples() {
        let zero = SpvarModel::zeros(2, ModelOrders::new(1, 1, 0), Omega::new(vec![0.3], vec![])).unwrap();
        let rep = stationarity_numerical(&zero, &NumericalCheckOptions::default()).unwrap();
        assert!(rep.numerical_ok);
        assert!(rep.partial_sums.iter().all(|s| *s == 0.0));

        let half = SpvarModel::new(ModelOrders::new(1, 0, 0), Omega::empty(), CoefSet::new(vec![diag(1, 0.5)]).unwrap()).unwrap();
        let rep = stationarity_numerical(&half, &NumericalCheckOptions::default()).unwrap();
        assert!(rep.numerical_ok);
        let last = *rep.partial_sums.last().unwrap();
        assert!((last - 1.0).abs() < 1e-7);
        assert!(rep.partial_sums.windows(2).all(|w| w[1] >= w[0]));

        let explode = SpvarModel::new(ModelOrders::new(1, 0, 0), Omega::empty(), CoefSet::new(vec![diag(1, 1.2)]).unwrap()).unwrap();
        let rep = stationarity_numerical(&explode, &NumericalCheckOptions::default()).unwrap();
        assert!(!rep.numerical_ok);
        assert!(rep.partial_sums.windows(2).all(|w| w[1] - w[0] > 0.0));

        let huge = SpvarModel::new(ModelOrders::new(1, 0, 0), Omega::empty(), CoefSet::new(vec![diag(1, 1e10)]).unwrap()).unwrap();
        let rep = stationarity_numerical(&huge, &NumericalCheckOptions::default()).unwrap();
        assert!(!rep.numerical_ok);
        assert!(rep.j_used < 200);
    }

    #[test]
    fn numerical_check_bad_options() {
        let m = SpvarModel::zeros(1, ModelOrders::new(1, 0, 0), Omega::empty()).unwrap();
        let opts = NumericalCheckOptions { j_max: 5, tail_window: 10, ..Default::default() };
        assert!(stationarity_numerical(&m, &opts).is_err());
    }

    #[test]
    fn canonicalize_swaps_blocks() {
        let g = |v: f64| diag(2, v);
        let m = SpvarModel::new(
            ModelOrders::new(1, 2, 0),
            Omega::new(vec![-0.3, 0.6], vec![]),
            CoefSet::new(vec![g(1.0), g(2.0), g(3.0)]).unwrap(),
        )
        .unwrap();
        let c = canonicalize(&m);
        assert_eq!(c.omega().lambdas, vec![0.6, -0.3]);
        assert_eq!(c.coefs().get(1), &g(3.0));
        assert_eq!(c.coefs().get(2), &g(2.0));
        assert_eq!(canonicalize(&c), c);
        for h in 1..=20 {
            assert_eq!(coef_matrix(h, &m).unwrap(), coef_matrix(h, &c).unwrap());
        }
    }

    #[test]
    fn json_round_trip() {
        let m = SpvarModel::new(
            ModelOrders::new(1, 1, 1),
            Omega::new(vec![-0.45], vec![Eta::new(0.6, std::f64::consts::FRAC_PI_4)]),
            CoefSet::new(vec![diag(2, 0.1), diag(2, 1.0 / 3.0), diag(2, -0.2), diag(2, 0.05)]).unwrap(),
        )
        .unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let text = model_to_json(&m, &names).unwrap();
        let (back, nm) = model_from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(nm, names);
    }

    #[test]
    fn json_rejects_unknown_and_bad_shapes() {
        let bad = r#"{"orders":{"p":1,"r":0,"s":0},"omega":{"lambdas":[],"etas":[]},"G":[[[0.1,0.2]]],"N":2}"#;
        assert!(model_from_json(bad).is_err());
        let extra = r#"{"orders":{"p":0,"r":0,"s":0},"omega":{"lambdas":[],"etas":[]},"G":[],"N":1,"foo":1}"#;
        assert!(model_from_json(extra).is_err());
        let ok = r#"{"orders":{"p":0,"r":0,"s":0},"omega":{"lambdas":[],"etas":[]},"G":[],"N":1}"#;
        let (m, names) = model_from_json(ok).unwrap();
        assert_eq!(m.orders().d(), 0);
        assert_eq!(names, vec!["y1"]);
    }

    #[test]
    fn orders_parse() {
        let o: ModelOrders = "1, 2,0".parse().unwrap();
        assert_eq!(o, ModelOrders::new(1, 2, 0));
        assert_eq!(o.d(), 3);
        assert!("1,2".parse::<ModelOrders>().is_err());
        assert!(ModelOrders::new(7, 0, 0).check_max(ModelOrders::new(6, 6, 6)).is_err());
    }
}
