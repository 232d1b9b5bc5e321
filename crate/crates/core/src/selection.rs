//! High-dimensional BIC for model orders and the sparsity BIC for `λ_g`.

use log::warn;
use rayon::prelude::*;

use crate::error::{invalid, Result, SpvarError};
use crate::model::ModelOrders;
use crate::panel::{fmt_f64, SeriesPanel};
use crate::solver::{fit, lambda_max, Estimator, FitConfig, FitResult, GInit, OmegaInit};

pub const DEFAULT_TAU: f64 = 0.05;
pub const LOSS_FLOOR: f64 = 1e-300;
/// Rate-rule constant used when neither `λ_g` nor a constant is given.
pub const DEFAULT_LAMBDA_C: f64 = 2.0;

/// `log(loss) + τ·d·[log(N·max(p,1))/T]^{1-q/2}·log T`.
pub fn bic_score(loss: f64, orders: ModelOrders, n: usize, t: usize, tau: f64, q: f64) -> Result<f64> {
    if !(loss > 0.0) || !loss.is_finite() {
        return invalid(format!("loss = {loss} must be positive"));
    }
    if t < 2 {
        return invalid("BIC needs T >= 2");
    }
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("q = {q} must lie in [0, 1]"));
    }
    if !(tau >= 0.0) {
        return invalid("tau must be nonnegative");
    }
    let tf = t as f64;
    let base = ((n * orders.p.max(1)) as f64).ln() / tf;
    Ok(loss.ln() + tau * orders.d() as f64 * base.powf(1.0 - q / 2.0) * tf.ln())
}

/// How `λ_g` is set for each candidate order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaRule {
    Fixed(f64),
    /// `c·v̄·√(log(N·max(p,1))/T)` with `v̄` the mean sample variance of the series.
    Rate(f64),
}

/// `c·v̄·√(log(N·max(p,1))/T)`.
pub fn rate_lambda(y: &SeriesPanel, orders: ModelOrders, c: f64) -> f64 {
    let (t, n) = (y.t() as f64, y.n());
    let data = y.data();
    let vbar = data
        .column_iter()
        .map(|col| {
            let m = col.mean();
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t
        })
        .sum::<f64>()
        / n as f64;
    let np = (n * orders.p.max(1)) as f64;
    c * vbar * (np.ln().max(f64::MIN_POSITIVE) / t).sqrt()
}

impl LambdaRule {
    pub fn lambda_for(&self, y: &SeriesPanel, orders: ModelOrders) -> f64 {
        match *self {
            LambdaRule::Fixed(l) => l,
            LambdaRule::Rate(c) => rate_lambda(y, orders, c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionConfig {
    pub max_orders: ModelOrders,
    pub tau: f64,
    pub q: f64,
    pub estimator: Estimator,
    pub lambda: LambdaRule,
    pub fit: FitConfig,
}

impl SelectionConfig {
    pub fn new(max_orders: ModelOrders, lambda: LambdaRule, fit: FitConfig) -> Self {
        Self { max_orders, tau: DEFAULT_TAU, q: 0.0, estimator: Estimator::Je, lambda, fit }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BicRow {
    pub orders: ModelOrders,
    pub lambda_g_used: f64,
    pub loss: f64,
    pub bic: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BicTable {
    pub rows: Vec<BicRow>,
    pub chosen: usize,
    /// Set when no cell converged and the argmin was taken over every successful cell.
    pub fallback: bool,
}

impl BicTable {
    pub fn chosen_orders(&self) -> ModelOrders {
        self.rows[self.chosen].orders
    }

    /// Picks the minimum BIC among converged rows; ties go to smaller `d`, then smaller `(p, r, s)`.
    pub fn from_rows(rows: Vec<BicRow>) -> Result<Self> {
        let ok = |r: &BicRow| r.error.is_none() && r.bic.is_finite();
        let pick = |need_converged: bool| {
            rows.iter()
                .enumerate()
                .filter(|(_, r)| ok(r) && (!need_converged || r.converged))
                .min_by(|(_, a), (_, b)| {
                    a.bic
                        .partial_cmp(&b.bic)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.orders.d().cmp(&b.orders.d()))
                        .then((a.orders.p, a.orders.r, a.orders.s).cmp(&(b.orders.p, b.orders.r, b.orders.s)))
                })
                .map(|(i, _)| i)
        };
        if let Some(i) = pick(true) {
            return Ok(Self { rows, chosen: i, fallback: false });
        }
        match pick(false) {
            Some(i) => {
                warn!("no candidate order converged; choosing among unconverged fits");
                Ok(Self { rows, chosen: i, fallback: true })
            }
            None => Err(SpvarError::Selection("every candidate order failed to fit".into())),
        }
    }

    /// Columns `p,r,s,d,lambda_g,loss,bic,converged,chosen,error`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["p", "r", "s", "d", "lambda_g", "loss", "bic", "converged", "chosen", "error"])?;
        for (i, row) in self.rows.iter().enumerate() {
            let o = row.orders;
            w.write_record([
                o.p.to_string(),
                o.r.to_string(),
                o.s.to_string(),
                o.d().to_string(),
                fmt_f64(row.lambda_g_used),
                fmt_f64(row.loss),
                fmt_f64(row.bic),
                u8::from(row.converged).to_string(),
                u8::from(i == self.chosen).to_string(),
                row.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Every `(p, r, s)` with each component up to the maximum, in lexicographic order.
pub fn order_grid(max: ModelOrders) -> Vec<ModelOrders> {
    let mut out = Vec::with_capacity((max.p + 1) * (max.r + 1) * (max.s + 1));
    for p in 0..=max.p {
        for r in 0..=max.r {
            for s in 0..=max.s {
                out.push(ModelOrders::new(p, r, s));
            }
        }
    }
    out
}

/// Fits every order in the grid and tabulates the BIC.
pub fn select_orders(y: &SeriesPanel, cfg: &SelectionConfig) -> Result<BicTable> {
    let grid = order_grid(cfg.max_orders);
    select_orders_over(y, &grid, cfg)
}

/// Same as [`select_orders`] on an explicit list of candidate orders.
pub fn select_orders_over(y: &SeriesPanel, grid: &[ModelOrders], cfg: &SelectionConfig) -> Result<BicTable> {
    if grid.is_empty() {
        return invalid("empty order grid");
    }
    let (n, t) = (y.n(), y.t());
    let rows: Vec<BicRow> = grid
        .par_iter()
        .map(|&orders| {
            let lam = cfg.lambda.lambda_for(y, orders);
            let mut fc = cfg.fit.clone();
            fc.lambda_g = lam;
            match fit(y, orders, cfg.estimator, &fc) {
                Ok(res) => {
                    let mut loss = res.in_sample_loss;
                    if loss < LOSS_FLOOR {
                        warn!("loss {loss} for orders {orders} clamped to {LOSS_FLOOR}");
                        loss = LOSS_FLOOR;
                    }
                    match bic_score(loss, orders, n, t, cfg.tau, cfg.q) {
                        Ok(bic) => BicRow { orders, lambda_g_used: lam, loss, bic, converged: res.converged, error: None },
                        Err(e) => failed_row(orders, lam, e),
                    }
                }
                Err(e) => failed_row(orders, lam, e),
            }
        })
        .collect();
    BicTable::from_rows(rows)
}

fn failed_row(orders: ModelOrders, lam: f64, e: SpvarError) -> BicRow {
    BicRow { orders, lambda_g_used: lam, loss: f64::NAN, bic: f64::NAN, converged: false, error: Some(e.to_string()) }
}

/// `log(loss) + nnz·log(T)·log(N²d)/T`.
pub fn sparsity_bic(loss: f64, nnz: usize, n: usize, d: usize, t: usize) -> f64 {
    let tf = t as f64;
    loss.max(LOSS_FLOOR).ln() + nnz as f64 * tf.ln() * ((n * n * d.max(1)) as f64).ln() / tf
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaPathPoint {
    pub lambda_g: f64,
    pub loss: f64,
    pub nnz: usize,
    pub bic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSelection {
    pub lambda_g: f64,
    pub path: Vec<LambdaPathPoint>,
    /// Multi-start refit at the selected value.
    pub fit: FitResult,
}

/// `count` log-spaced values spanning `[1e-3, 1]·λ_max`, in decreasing order.
pub fn default_lambda_grid(y: &SeriesPanel, orders: ModelOrders, config: &FitConfig, count: usize) -> Result<Vec<f64>> {
    let lmax = lambda_max(y, orders, config)?;
    if !(lmax > 0.0) {
        return invalid("the data give a zero gradient at g = 0; no penalty grid can be formed");
    }
    Ok(log_grid(lmax * 1e-3, lmax, count))
}

pub(crate) fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Chooses `λ_g` by the sparsity BIC along a warm-started path (largest value first),
/// then refits at the winner with the configured starts.
pub fn select_lambda_g(
    y: &SeriesPanel,
    orders: ModelOrders,
    grid: &[f64],
    estimator: Estimator,
    config: &FitConfig,
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return invalid("lambda grid is empty");
    }
    if grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return invalid("lambda grid values must be positive");
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].partial_cmp(&grid[a]).unwrap().then(a.cmp(&b)));
    let (n, t, d) = (y.n(), y.t(), orders.d());
    let mut path: Vec<Option<LambdaPathPoint>> = vec![None; grid.len()];
    let mut warm: Option<FitResult> = None;
    for &idx in &order {
        let mut fc = config.clone();
        fc.lambda_g = grid[idx];
        if let (Some(prev), Estimator::Je) = (&warm, estimator) {
            fc.omega_init = OmegaInit::Explicit(vec![prev.model.omega().clone()]);
            fc.g_init = GInit::Explicit(prev.model.coefs().clone());
        }
        match fit(y, orders, estimator, &fc) {
            Ok(res) => {
                let bic = sparsity_bic(res.in_sample_loss, res.nnz, n, d, t);
                path[idx] = Some(LambdaPathPoint { lambda_g: grid[idx], loss: res.in_sample_loss, nnz: res.nnz, bic });
                warm = Some(res);
            }
            Err(e) => warn!("fit at lambda_g = {} failed: {e}", grid[idx]),
        }
    }
    let best = path
        .iter()
        .flatten()
        .min_by(|a, b| {
            a.bic
                .partial_cmp(&b.bic)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.lambda_g.partial_cmp(&a.lambda_g).unwrap_or(std::cmp::Ordering::Equal))
        })
        .cloned()
        .ok_or_else(|| SpvarError::Selection("every fit along the lambda path failed".into()))?;
    let mut fc = config.clone();
    fc.lambda_g = best.lambda_g;
    let refit = fit(y, orders, estimator, &fc)?;
    Ok(LambdaSelection { lambda_g: best.lambda_g, path: path.into_iter().flatten().collect(), fit: refit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_hand_value() {
        let v = bic_score(1.0, ModelOrders::new(1, 1, 0), 40, 500, 0.05, 0.0).unwrap();
        let expect = 0.05 * 2.0 * (40f64.ln() / 500.0) * 500f64.ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.004586).abs() < 2e-6);
    }

    #[test]
    fn bic_tau_zero_is_log_loss() {
        let v = bic_score(0.3, ModelOrders::new(2, 1, 1), 10, 100, 0.0, 0.0).unwrap();
        assert_eq!(v, 0.3f64.ln());
    }

    #[test]
    fn bic_rejects_nonpositive_loss() {
        assert!(bic_score(0.0, ModelOrders::new(1, 0, 0), 3, 10, 0.05, 0.0).is_err());
        assert!(bic_score(-1.0, ModelOrders::new(1, 0, 0), 3, 10, 0.05, 0.0).is_err());
        assert!(bic_score(1.0, ModelOrders::new(1, 0, 0), 3, 1, 0.05, 0.0).is_err());
    }

    #[test]
    fn bic_q_changes_only_exponent() {
        let o = ModelOrders::new(2, 1, 0);
        let (n, t) = (20usize, 300usize);
        let base = (40f64).ln() / 300.0;
        for q in [0.0, 0.3, 1.0] {
            let v = bic_score(0.5, o, n, t, 0.05, q).unwrap();
            let direct = 0.5f64.ln() + 0.05 * 3.0 * base.powf(1.0 - q / 2.0) * 300f64.ln();
            assert!((v - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_cardinality() {
        assert_eq!(order_grid(ModelOrders::new(3, 3, 3)).len(), 64);
        assert_eq!(order_grid(ModelOrders::new(0, 0, 0)), vec![ModelOrders::new(0, 0, 0)]);
    }

    fn row(p: usize, r: usize, s: usize, bic: f64, converged: bool) -> BicRow {
        BicRow { orders: ModelOrders::new(p, r, s), lambda_g_used: 0.1, loss: 1.0, bic, converged, error: None }
    }

    #[test]
    fn table_tie_breaks() {
        let t = BicTable::from_rows(vec![row(0, 0, 1, 1.0, true), row(1, 0, 0, 1.0, true), row(0, 1, 0, 1.0, true)]).unwrap();
        assert_eq!(t.chosen_orders(), ModelOrders::new(0, 1, 0));
        let t = BicTable::from_rows(vec![row(0, 0, 0, 0.5, false), row(1, 0, 0, 1.0, true)]).unwrap();
        assert_eq!(t.chosen_orders(), ModelOrders::new(1, 0, 0));
        let t = BicTable::from_rows(vec![row(0, 0, 0, 0.5, false), row(1, 0, 0, 1.0, false)]).unwrap();
        assert!(t.fallback);
        assert_eq!(t.chosen, 0);
        let mut bad = row(0, 0, 0, f64::NAN, false);
        bad.error = Some("x".into());
        assert!(BicTable::from_rows(vec![bad]).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1.0).abs() < 1e-15);
        assert!((g[19] - 1e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }
}
