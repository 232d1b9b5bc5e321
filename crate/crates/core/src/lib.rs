//! Sparse parametric VAR(∞) models.
//!
//! Lag matrices are `A_h = Σ_k ℓ_{h,k}(ω) G_k` with a handful of decay
//! parameters `ω` and sparse coefficient matrices `G_k`. The crate covers
//! simulation, ℓ1-penalized estimation by block coordinate descent (joint and
//! rowwise), BIC order selection, Granger networks, impulse responses and
//! rolling one-step forecasts.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod forecast;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod panel;
pub mod selection;
pub mod simulate;
pub mod solver;

pub use error::{Result, SpvarError};
pub use model::{CoefSet, Eta, ModelOrders, Omega, SpvarModel};
pub use panel::SeriesPanel;
pub use solver::{FitConfig, FitResult};
