//! One-step-ahead prediction and rolling evaluation.

use std::io::Write;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result, SpvarError};
use crate::loss::PredictorState;
use crate::model::{ModelOrders, Omega, SpvarModel};
use crate::panel::{fmt_f64, SeriesPanel};
use crate::solver::{fit, var_lasso_fit, Estimator, FitConfig, FitResult};

/// `ŷ_{T+1} = Σ_h A_h y_{T+1-h}` with zero pre-sample values.
pub fn one_step_forecast(model: &SpvarModel, history: &SeriesPanel) -> Result<Vec<f64>> {
    if history.n() != model.n() {
        return Err(SpvarError::Shape(format!("history has {} series, model has {}", history.n(), model.n())));
    }
    let state = feed(model.n(), model.orders(), model.omega(), history.data())?;
    Ok(state.predict(model.coefs()))
}

fn feed(n: usize, orders: ModelOrders, omega: &Omega, data: &DMatrix<f64>) -> Result<PredictorState> {
    let mut state = PredictorState::new(n, orders, omega)?;
    let mut row = vec![0.0; n];
    for t in 0..data.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = data[(t, j)];
        }
        state.push(&row);
    }
    Ok(state)
}

/// Forecast from a fit; rowwise fits use each row's own `ω̂_i`.
pub fn forecast_from_fit(res: &FitResult, history: &SeriesPanel) -> Result<Vec<f64>> {
    match &res.per_row_omega {
        None => one_step_forecast(&res.model, history),
        Some(omegas) => {
            let model = &res.model;
            let n = model.n();
            if history.n() != n {
                return Err(SpvarError::Shape(format!("history has {} series, model has {}", history.n(), n)));
            }
            let mut out = vec![0.0; n];
            for (i, om) in omegas.iter().enumerate() {
                let state = feed(n, model.orders(), om, history.data())?;
                out[i] = state.predict(model.coefs())[i];
            }
            Ok(out)
        }
    }
}

/// `Σ_{h=1}^{P} A_h y_{T+1-h}`.
pub fn var_forecast(a: &[DMatrix<f64>], history: &DMatrix<f64>) -> Vec<f64> {
    let t = history.nrows();
    let n = history.ncols();
    let mut out = DMatrix::<f64>::zeros(n, 1);
    for (h, ah) in a.iter().enumerate() {
        if h >= t {
            break;
        }
        let y = history.row(t - 1 - h).transpose();
        out.gemm(1.0, ah, &y, 1.0);
    }
    out.iter().copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Refit {
    EveryStep,
    Once,
}

impl std::str::FromStr for Refit {
    type Err = SpvarError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "every" | "every-step" | "everystep" => Ok(Refit::EveryStep),
            "once" => Ok(Refit::Once),
            other => Err(SpvarError::InvalidArgument(format!("unknown refit schedule '{other}'"))),
        }
    }
}

impl std::fmt::Display for Refit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Refit::EveryStep => "every",
            Refit::Once => "once",
        })
    }
}

/// What is fitted on each window.
#[derive(Clone, Debug)]
pub enum ForecastMethod {
    Spvar {
        orders: ModelOrders,
        estimator: Estimator,
        config: FitConfig,
    },
    VarLasso {
        p: usize,
        lambda: f64,
        config: FitConfig,
    },
    /// A given model, never refitted.
    Fixed(SpvarModel),
}

impl ForecastMethod {
    pub fn label(&self) -> String {
        match self {
            ForecastMethod::Spvar { estimator, .. } => format!("spvar-{estimator}"),
            ForecastMethod::VarLasso { .. } => "var-lasso".into(),
            ForecastMethod::Fixed(_) => "fixed".into(),
        }
    }
}

enum Fitted {
    Spvar(Box<FitResult>),
    Var(Vec<DMatrix<f64>>),
    Fixed(SpvarModel),
}

impl Fitted {
    fn predict(&self, history: &SeriesPanel) -> Result<Vec<f64>> {
        match self {
            Fitted::Spvar(res) => forecast_from_fit(res, history),
            Fitted::Var(a) => Ok(var_forecast(a, history.data())),
            Fitted::Fixed(m) => one_step_forecast(m, history),
        }
    }
}

fn fit_window(method: &ForecastMethod, window: &SeriesPanel) -> Result<Fitted> {
    match method {
        ForecastMethod::Spvar { orders, estimator, config } => Ok(Fitted::Spvar(Box::new(fit(window, *orders, *estimator, config)?))),
        ForecastMethod::VarLasso { p, lambda, config } => {
            let p = (*p).min(window.t().saturating_sub(1)).max(1);
            Ok(Fitted::Var(var_lasso_fit(window, p, *lambda, config)?))
        }
        ForecastMethod::Fixed(m) => Ok(Fitted::Fixed(m.clone())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastStep {
    /// Number of rows used as history; the forecast is for the next row.
    pub origin: usize,
    pub forecast: Vec<f64>,
    pub realized: Vec<f64>,
    /// `‖ŷ_t − y_t‖₂`, `None` if the window's fit failed.
    pub l2_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RollingReport {
    pub steps: Vec<ForecastStep>,
    /// Mean over the steps that succeeded; `NaN` if none did.
    pub mean_error: f64,
    pub method: String,
    pub refit: Refit,
    pub failed: usize,
}

/// For `k = 1..=steps`: fit on rows `1..origin+k-1`, forecast row `origin+k`.
pub fn rolling_eval(y: &SeriesPanel, method: &ForecastMethod, origin: usize, steps: usize, refit: Refit) -> Result<RollingReport> {
    if origin + steps > y.t() {
        return invalid(format!("origin {origin} + steps {steps} exceeds T = {}", y.t()));
    }
    if origin < 2 && steps > 0 {
        return invalid("origin must leave at least two rows for fitting");
    }
    let label = method.label();
    let once = match refit {
        Refit::Once if steps > 0 => Some(fit_window(method, &y.slice_rows(0, origin)?)),
        _ => None,
    };
    let steps_out: Vec<ForecastStep> = (0..steps)
        .into_par_iter()
        .map(|k| {
            let end = origin + k;
            let realized: Vec<f64> = y.data().row(end).iter().copied().collect();
            let outcome = (|| -> Result<Vec<f64>> {
                let history = y.slice_rows(0, end)?;
                match &once {
                    Some(Ok(f)) => f.predict(&history),
                    Some(Err(e)) => Err(SpvarError::Fit(e.to_string())),
                    None => fit_window(method, &history)?.predict(&history),
                }
            })();
            match outcome {
                Ok(forecast) => {
                    let err = forecast.iter().zip(&realized).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    ForecastStep { origin: end, forecast, realized, l2_error: Some(err), error: None }
                }
                Err(e) => {
                    warn!("forecast step at origin {end} failed: {e}");
                    ForecastStep { origin: end, forecast: Vec::new(), realized, l2_error: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let ok: Vec<f64> = steps_out.iter().filter_map(|s| s.l2_error).collect();
    let mean_error = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    Ok(RollingReport { failed: steps_out.len() - ok.len(), steps: steps_out, mean_error, method: label, refit })
}

/// Outcome of [`tune_by_holdout`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoldoutChoice {
    pub value: f64,
    pub mean_error: f64,
}

/// Picks the candidate whose method, fitted once on all but the last `holdout` rows of `y`,
/// forecasts those rows best one step ahead. Ties keep the earlier candidate.
pub fn tune_by_holdout<F>(y: &SeriesPanel, candidates: &[f64], holdout: usize, build: F) -> Result<HoldoutChoice>
where
    F: Fn(f64, &SeriesPanel) -> Result<ForecastMethod>,
{
    if candidates.is_empty() {
        return invalid("no tuning candidates");
    }
    if holdout == 0 || holdout + 2 > y.t() {
        return invalid(format!("holdout {holdout} must be positive and leave two rows of T = {}", y.t()));
    }
    let origin = y.t() - holdout;
    let fit_rows = y.slice_rows(0, origin)?;
    let mut best: Option<HoldoutChoice> = None;
    for &c in candidates {
        let method = build(c, &fit_rows)?;
        let rep = rolling_eval(y, &method, origin, holdout, Refit::Once)?;
        if !rep.mean_error.is_finite() {
            continue;
        }
        if best.is_none_or(|b| rep.mean_error < b.mean_error) {
            best = Some(HoldoutChoice { value: c, mean_error: rep.mean_error });
        }
    }
    best.ok_or_else(|| SpvarError::Fit("every tuning candidate failed on the holdout rows".into()))
}

impl RollingReport {
    /// One row per step: `origin,l2_error,failed,yhat_1..yhat_N,y_1..y_N`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.steps.first().map_or(0, |s| s.realized.len());
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["origin".to_string(), "l2_error".into(), "failed".into()];
        header.extend((1..=n).map(|i| format!("yhat_{i}")));
        header.extend((1..=n).map(|i| format!("y_{i}")));
        w.write_record(&header)?;
        for s in &self.steps {
            let mut rec =
                vec![s.origin.to_string(), s.l2_error.map(fmt_f64).unwrap_or_default(), u8::from(s.l2_error.is_none()).to_string()];
            if s.forecast.is_empty() {
                rec.extend(std::iter::repeat_n(String::new(), n));
            } else {
                rec.extend(s.forecast.iter().map(|v| fmt_f64(*v)));
            }
            rec.extend(s.realized.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
