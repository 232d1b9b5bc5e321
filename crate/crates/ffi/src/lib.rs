//! C ABI over the `spvar` library.
//!
//! Every function returns an [`SpvarStatus`]; on failure a message is kept per thread and can
//! be read with [`spvar_last_error`]. Objects are opaque handles released by their `_free`
//! function. Matrices cross the boundary row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use spvar::forecast::one_step_forecast;
use spvar::model::{model_from_json, model_to_json, Eta, ModelOrders, Omega};
use spvar::selection::{select_orders, LambdaRule, SelectionConfig};
use spvar::simulate::{gen_sparse_coefs, rng_from_seed, simulate_spvar, DgpSpec, Sparsity, DEFAULT_BURN_IN};
use spvar::solver::{fit, Estimator, FitConfig, FitResult};
use spvar::{SeriesPanel, SpvarError, SpvarModel};

/// Status codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpvarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NotStationary = 4,
    FitFailed = 5,
    Parse = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Other = 10,
}

/// Joint (`0`) or rowwise (`1`) estimation.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpvarEstimator {
    Joint = 0,
    Rowwise = 1,
}

/// A `T × N` data panel.
pub struct SpvarPanel(SeriesPanel);

/// A model with its decay parameters and coefficient matrices.
pub struct SpvarModelHandle(SpvarModel);

/// The outcome of a fit.
pub struct SpvarFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &SpvarError) -> SpvarStatus {
    match e {
        SpvarError::InvalidArgument(_) | SpvarError::IndexOutOfRange { .. } | SpvarError::Precondition(_) | SpvarError::Config(_) => {
            SpvarStatus::InvalidArgument
        }
        SpvarError::Shape(_) => SpvarStatus::Shape,
        SpvarError::NotStationary(_) => SpvarStatus::NotStationary,
        SpvarError::Fit(_) | SpvarError::Selection(_) => SpvarStatus::FitFailed,
        SpvarError::Parse { .. } | SpvarError::Json(_) | SpvarError::Csv(_) => SpvarStatus::Parse,
        SpvarError::Io(_) => SpvarStatus::Io,
    }
}

struct Failure(SpvarStatus, String);

impl From<SpvarError> for Failure {
    fn from(e: SpvarError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SpvarStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SpvarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpvarStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SpvarStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn fill(out: *mut f64, cap: usize, values: &[f64]) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if cap < values.len() {
        return Err(Failure(SpvarStatus::BufferTooSmall, format!("buffer holds {cap} values, {} needed", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn omega_from(r: usize, s: usize, lambdas: &[f64], etas: &[f64]) -> Omega {
    Omega::new(lambdas[..r].to_vec(), (0..s).map(|m| Eta::new(etas[2 * m], etas[2 * m + 1])).collect())
}

/// Copies the message of the last failure on this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length, or 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn spvar_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Builds a panel from `t × n` row-major values.
///
/// # Safety
/// `data` must point to `t * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spvar_panel_new(data: *const f64, t: usize, n: usize, out: *mut *mut SpvarPanel) -> SpvarStatus {
    guard(|| {
        let len = t.checked_mul(n).ok_or_else(|| Failure(SpvarStatus::InvalidArgument, "t * n overflows".into()))?;
        let v = slice(data, len, "data")?;
        let panel = SeriesPanel::from_matrix(DMatrix::from_row_slice(t, n, v))?;
        write_out(out, SpvarPanel(panel), "out")
    })
}

/// # Safety
/// `panel` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spvar_panel_free(panel: *mut SpvarPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel`, `t` and `n` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn spvar_panel_shape(panel: *const SpvarPanel, t: *mut usize, n: *mut usize) -> SpvarStatus {
    guard(|| {
        let p = deref(panel, "panel")?;
        if t.is_null() || n.is_null() {
            return Err(null("shape output"));
        }
        *t = p.0.t();
        *n = p.0.n();
        Ok(())
    })
}

/// Copies the panel row-major into `out` (capacity `cap` doubles).
///
/// # Safety
/// `panel` must be valid; `out` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spvar_panel_data(panel: *const SpvarPanel, out: *mut f64, cap: usize) -> SpvarStatus {
    guard(|| {
        let p = &deref(panel, "panel")?.0;
        let rows: Vec<f64> = p.data().transpose().iter().copied().collect();
        fill(out, cap, &rows)
    })
}

/// Draws a sparse model of orders `(p, r, s)` and simulates `t` rows from it.
/// `lambdas` holds `r` rates; `etas` holds `s` pairs `(gamma, theta)`.
///
/// # Safety
/// Array arguments must hold the stated counts; `out_panel` and `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spvar_simulate(
    n: usize,
    t: usize,
    p: usize,
    r: usize,
    s: usize,
    lambdas: *const f64,
    etas: *const f64,
    nonzeros_per_row: usize,
    noise_sd: f64,
    seed: u64,
    out_panel: *mut *mut SpvarPanel,
    out_model: *mut *mut SpvarModelHandle,
) -> SpvarStatus {
    guard(|| {
        let l = slice(lambdas, r, "lambdas")?;
        let e = slice(etas, 2 * s, "etas")?;
        let orders = ModelOrders::new(p, r, s);
        let mut spec = DgpSpec::new(n, orders, omega_from(r, s, l, e), Sparsity::PerRow(nonzeros_per_row));
        spec.noise_sd = noise_sd;
        spec.validate()?;
        let mut rng = rng_from_seed(seed);
        let coefs = gen_sparse_coefs(&spec, &mut rng)?;
        let model = SpvarModel::new(orders, spec.omega.clone(), coefs)?;
        let y = simulate_spvar(&model, t, DEFAULT_BURN_IN, noise_sd, &mut rng, false)?;
        if out_panel.is_null() || out_model.is_null() {
            return Err(null("output handle"));
        }
        write_out(out_panel, SpvarPanel(y), "out_panel")?;
        write_out(out_model, SpvarModelHandle(model), "out_model")
    })
}

/// Fits orders `(p, r, s)` with penalty `lambda_g` and default solver settings.
///
/// # Safety
/// `panel` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spvar_fit(
    panel: *const SpvarPanel,
    p: usize,
    r: usize,
    s: usize,
    lambda_g: f64,
    estimator: SpvarEstimator,
    out: *mut *mut SpvarFit,
) -> SpvarStatus {
    guard(|| {
        let y = &deref(panel, "panel")?.0;
        let est = match estimator {
            SpvarEstimator::Joint => Estimator::Je,
            SpvarEstimator::Rowwise => Estimator::Re,
        };
        let res = fit(y, ModelOrders::new(p, r, s), est, &FitConfig::new(lambda_g))?;
        write_out(out, SpvarFit(res), "out")
    })
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spvar_fit_free(fit: *mut SpvarFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Convergence flag, unpenalized loss, penalized objective and iteration count.
///
/// # Safety
/// `fit` must be valid; each output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn spvar_fit_summary(
    fit: *const SpvarFit,
    converged: *mut bool,
    loss: *mut f64,
    objective: *mut f64,
    iterations: *mut usize,
) -> SpvarStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.0;
        if let Some(c) = converged.as_mut() {
            *c = f.converged;
        }
        if let Some(l) = loss.as_mut() {
            *l = f.in_sample_loss;
        }
        if let Some(o) = objective.as_mut() {
            *o = f.objective();
        }
        if let Some(i) = iterations.as_mut() {
            *i = f.iterations;
        }
        Ok(())
    })
}

/// A new handle holding a copy of the fitted model.
///
/// # Safety
/// `fit` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spvar_fit_model(fit: *const SpvarFit, out: *mut *mut SpvarModelHandle) -> SpvarStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.0;
        write_out(out, SpvarModelHandle(f.model.clone()), "out")
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spvar_model_free(model: *mut SpvarModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn spvar_model_dims(
    model: *const SpvarModelHandle,
    n: *mut usize,
    p: *mut usize,
    r: *mut usize,
    s: *mut usize,
) -> SpvarStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        if n.is_null() || p.is_null() || r.is_null() || s.is_null() {
            return Err(null("dimension output"));
        }
        let o = m.orders();
        *n = m.n();
        *p = o.p;
        *r = o.r;
        *s = o.s;
        Ok(())
    })
}

/// Writes `ω` as `λ_1..λ_r, γ_1, θ_1, .., γ_s, θ_s` (`r + 2s` values).
///
/// # Safety
/// `model` must be valid; `out` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spvar_model_omega(model: *const SpvarModelHandle, out: *mut f64, cap: usize) -> SpvarStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        fill(out, cap, &m.omega().to_vec())
    })
}

/// Writes the lag-`h` matrix `A_h` (`h ≥ 1`) row-major into `out` (`N²` values).
///
/// # Safety
/// `model` must be valid; `out` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spvar_model_lag_matrix(model: *const SpvarModelHandle, h: usize, out: *mut f64, cap: usize) -> SpvarStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let a = m.coef_matrix(h)?;
        let rows: Vec<f64> = a.transpose().iter().copied().collect();
        fill(out, cap, &rows)
    })
}

/// One-step-ahead forecast of the row after `history`, written to `out` (`N` values).
///
/// # Safety
/// `model` and `history` must be valid; `out` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spvar_forecast(
    model: *const SpvarModelHandle,
    history: *const SpvarPanel,
    out: *mut f64,
    cap: usize,
) -> SpvarStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let y = &deref(history, "history")?.0;
        fill(out, cap, &one_step_forecast(m, y)?)
    })
}

/// Serializes the model to JSON. The string must be released with [`spvar_string_free`].
///
/// # Safety
/// `model` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spvar_model_to_json(model: *const SpvarModelHandle, out: *mut *mut c_char) -> SpvarStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = model_to_json(m, &spvar::model::default_names(m.n()))?;
        let c = CString::new(text).map_err(|e| Failure(SpvarStatus::Other, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spvar_model_from_json(json: *const c_char, out: *mut *mut SpvarModelHandle) -> SpvarStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| Failure(SpvarStatus::Parse, format!("json is not UTF-8: {e}")))?;
        let (m, _) = model_from_json(text)?;
        write_out(out, SpvarModelHandle(m), "out")
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn spvar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// BIC order selection over `0..=max_p × 0..=max_r × 0..=max_s` with the rate-rule penalty
/// constant `lambda_c`; writes the chosen orders.
///
/// # Safety
/// `panel` must be valid; the three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn spvar_select_orders(
    panel: *const SpvarPanel,
    max_p: usize,
    max_r: usize,
    max_s: usize,
    tau: f64,
    q: f64,
    lambda_c: f64,
    p: *mut usize,
    r: *mut usize,
    s: *mut usize,
) -> SpvarStatus {
    guard(|| {
        let y = &deref(panel, "panel")?.0;
        if p.is_null() || r.is_null() || s.is_null() {
            return Err(null("order output"));
        }
        let mut cfg = SelectionConfig::new(ModelOrders::new(max_p, max_r, max_s), LambdaRule::Rate(lambda_c), FitConfig::new(0.0));
        cfg.tau = tau;
        cfg.q = q;
        let o = select_orders(y, &cfg)?.chosen_orders();
        *p = o.p;
        *r = o.r;
        *s = o.s;
        Ok(())
    })
}
