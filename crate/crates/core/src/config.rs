//! Flat TOML run configuration; command-line flags override file values.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Result, SpvarError};
use crate::model::{Eta, ModelOrders};
use crate::solver::{FitConfig, GInit, OmegaUpdate, Screening};

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,

    pub lambda_g: Option<f64>,
    pub lambda_c: Option<f64>,
    pub step: Option<f64>,
    pub backtracking: Option<bool>,
    pub epsilon_box: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    /// `"zero"` or `"var-lasso"`.
    pub g_init: Option<String>,
    /// `"jacobi"` or `"gauss-seidel"`.
    pub omega_update: Option<String>,
    pub screening_iters: Option<usize>,
    pub screening_keep: Option<usize>,
    pub var_lasso_lambda: Option<f64>,
    pub var_lasso_p: Option<usize>,
    pub estimator: Option<String>,
    pub orders: Option<String>,
    pub standardize: Option<bool>,

    pub max_orders: Option<String>,
    pub tau: Option<f64>,
    pub q: Option<f64>,

    pub n: Option<usize>,
    pub t: Option<usize>,
    pub burn_in: Option<usize>,
    pub lambdas: Option<Vec<f64>>,
    /// `[[gamma, theta], ...]`.
    pub etas: Option<Vec<[f64; 2]>>,
    pub nonzeros_per_row: Option<usize>,
    pub nonzeros_total: Option<usize>,
    pub coef_low: Option<f64>,
    pub coef_high: Option<f64>,
    pub stationarity_target: Option<f64>,
    pub noise_sd: Option<f64>,

    pub origin: Option<usize>,
    pub steps: Option<usize>,
    /// `"every"` or `"once"`.
    pub refit: Option<String>,

    pub zero_tol: Option<f64>,
    pub lambda_eps: Option<f64>,
    pub horizon: Option<usize>,

    pub replicates: Option<usize>,
    pub t_values: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SpvarError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| SpvarError::Config(format!("{}: {e}", path.display())))
    }

    pub fn etas(&self) -> Option<Vec<Eta>> {
        self.etas.as_ref().map(|v| v.iter().map(|[g, t]| Eta::new(*g, *t)).collect())
    }

    pub fn orders(&self) -> Result<Option<ModelOrders>> {
        self.orders.as_deref().map(str::parse).transpose()
    }

    pub fn max_orders(&self) -> Result<Option<ModelOrders>> {
        self.max_orders.as_deref().map(str::parse).transpose()
    }

    /// Copies every solver setting present in the file onto `cfg`.
    pub fn apply_fit(&self, cfg: &mut FitConfig) -> Result<()> {
        if let Some(v) = self.lambda_g {
            cfg.lambda_g = v;
        }
        if let Some(v) = self.step {
            cfg.step = Some(v);
        }
        if let Some(v) = self.backtracking {
            cfg.backtracking = v;
        }
        if let Some(v) = self.epsilon_box {
            cfg.epsilon_box = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = &self.g_init {
            cfg.g_init = match v.as_str() {
                "zero" => GInit::Zero,
                "var-lasso" => GInit::VarLasso,
                other => return Err(SpvarError::Config(format!("g_init: unknown value '{other}'"))),
            };
        }
        if let Some(v) = &self.omega_update {
            cfg.omega_update = match v.as_str() {
                "jacobi" => OmegaUpdate::Jacobi,
                "gauss-seidel" => OmegaUpdate::GaussSeidel,
                other => return Err(SpvarError::Config(format!("omega_update: unknown value '{other}'"))),
            };
        }
        match (self.screening_iters, self.screening_keep) {
            (Some(iters), Some(keep)) => cfg.screening = Some(Screening { iters, keep }),
            (None, None) => {}
            _ => return Err(SpvarError::Config("screening_iters and screening_keep must be set together".into())),
        }
        if let Some(v) = self.var_lasso_lambda {
            cfg.var_lasso_lambda = Some(v);
        }
        if let Some(v) = self.var_lasso_p {
            cfg.var_lasso_p = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("lamda_g = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("lamda_g"), "{err}");
    }

    #[test]
    fn values_reach_fit_config() {
        let rc = RunConfig::from_toml("lambda_g = 0.2\ntol = 1e-5\ng_init = \"zero\"\nscreening_iters = 4\nscreening_keep = 2\n").unwrap();
        let mut fc = FitConfig::new(0.0);
        rc.apply_fit(&mut fc).unwrap();
        assert_eq!(fc.lambda_g, 0.2);
        assert_eq!(fc.tol, 1e-5);
        assert_eq!(fc.g_init, GInit::Zero);
        assert_eq!(fc.screening, Some(Screening { iters: 4, keep: 2 }));
    }

    #[test]
    fn bad_enum_value() {
        let rc = RunConfig::from_toml("omega_update = \"sideways\"\n").unwrap();
        assert!(rc.apply_fit(&mut FitConfig::new(0.1)).is_err());
    }

    #[test]
    fn etas_and_orders() {
        let rc = RunConfig::from_toml("orders = \"1,0,1\"\netas = [[0.5, 1.0]]\n").unwrap();
        assert_eq!(rc.orders().unwrap(), Some(ModelOrders::new(1, 0, 1)));
        assert_eq!(rc.etas().unwrap(), vec![Eta::new(0.5, 1.0)]);
    }
}
