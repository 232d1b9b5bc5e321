//! Granger-causal network, impulse responses and the thresholded residual covariance.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::loss::residuals;
use crate::model::{vma_coeffs, SpvarModel};
use crate::panel::{fmt_f64, SeriesPanel};

pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    ShortOnly,
    LongOnly,
    Both,
}

impl EdgeKind {
    pub fn label(&self) -> &'static str {
        match self {
            EdgeKind::ShortOnly => "short",
            EdgeKind::LongOnly => "long",
            EdgeKind::Both => "both",
        }
    }
}

impl std::fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Edge `from → to` (0-based series indices).
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    /// `max_k |g_{to,from,k}|`.
    pub magnitude: f64,
    /// 1-based `k` with a nonzero entry.
    pub support: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrangerNetwork {
    pub n: usize,
    pub edges: Vec<Edge>,
    pub zero_tol: f64,
}

/// Edges ordered by target row, then source column.
pub fn granger_network(model: &SpvarModel, zero_tol: f64) -> Result<GrangerNetwork> {
    if !(zero_tol >= 0.0) {
        return invalid("zero_tol must be nonnegative");
    }
    let n = model.n();
    let p = model.orders().p;
    let mats = model.coefs().mats();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let support: Vec<usize> = (0..mats.len()).filter(|&k| mats[k][(i, j)].abs() > zero_tol).map(|k| k + 1).collect();
            if support.is_empty() {
                continue;
            }
            let short = support.iter().any(|&k| k <= p);
            let long = support.iter().any(|&k| k > p);
            let kind = match (short, long) {
                (true, false) => EdgeKind::ShortOnly,
                (false, true) => EdgeKind::LongOnly,
                _ => EdgeKind::Both,
            };
            let magnitude = mats.iter().map(|g| g[(i, j)].abs()).fold(0.0, f64::max);
            edges.push(Edge { from: j, to: i, kind, magnitude, support });
        }
    }
    Ok(GrangerNetwork { n, edges, zero_tol })
}

impl GrangerNetwork {
    /// Columns `from,to,kind,magnitude,support` with `support` a `;`-separated list of `k`.
    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["from", "to", "kind", "magnitude", "support"])?;
        for e in &self.edges {
            let support = e.support.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([name_of(names, e.from), name_of(names, e.to), e.kind.label().to_string(), fmt_f64(e.magnitude), support])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_dot<W: Write>(&self, mut writer: W, names: &[String]) -> Result<()> {
        writeln!(writer, "digraph granger {{")?;
        for i in 0..self.n {
            writeln!(writer, "  \"{}\";", name_of(names, i))?;
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::ShortOnly => "solid",
                EdgeKind::LongOnly => "dashed",
                EdgeKind::Both => "bold",
            };
            writeln!(
                writer,
                "  \"{}\" -> \"{}\" [kind={}, style={}, weight=\"{}\"];",
                name_of(names, e.from),
                name_of(names, e.to),
                e.kind.label(),
                style,
                fmt_f64(e.magnitude)
            )?;
        }
        writeln!(writer, "}}")?;
        Ok(())
    }
}

fn name_of(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("y{}", i + 1))
}

/// `Ψ_1..Ψ_J`.
pub fn impulse_responses(model: &SpvarModel, horizon: usize) -> Vec<DMatrix<f64>> {
    vma_coeffs(model, horizon)
}

/// Long format `j,row,col,value` with 1-based indices.
pub fn write_irf_csv<W: Write>(psi: &[DMatrix<f64>], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["j", "row", "col", "value"])?;
    for (j, m) in psi.iter().enumerate() {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_record([(j + 1).to_string(), (r + 1).to_string(), (c + 1).to_string(), fmt_f64(m[(r, c)])])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Hard-thresholds off-diagonal entries with `|σ_ij| <= λ_ε`; the diagonal is kept.
pub fn threshold_cov(cov: &DMatrix<f64>, lambda_eps: f64) -> Result<DMatrix<f64>> {
    if !(lambda_eps >= 0.0) {
        return invalid("lambda_eps must be nonnegative");
    }
    let mut out = cov.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            if i != j && out[(i, j)].abs() <= lambda_eps {
                out[(i, j)] = 0.0;
            }
        }
    }
    Ok(out)
}

/// `THR_{λ_ε}(T⁻¹ Σ ε̂_t ε̂_tᵀ)` from the zero-initialized residuals.
pub fn sigma_eps_estimate(model: &SpvarModel, y: &SeriesPanel, lambda_eps: f64) -> Result<DMatrix<f64>> {
    if !(lambda_eps >= 0.0) {
        return invalid("lambda_eps must be nonnegative");
    }
    let e = residuals(model, y)?;
    let mut cov = e.transpose() * &e / y.t() as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    threshold_cov(&cov, lambda_eps)
}

/// Rule of thumb `2·√(log N / T)·max_i σ̂_ii`.
pub fn default_lambda_eps(cov: &DMatrix<f64>, t: usize) -> f64 {
    let n = cov.nrows().max(2) as f64;
    let dmax = cov.diagonal().iter().copied().fold(0.0, f64::max);
    2.0 * (n.ln() / t as f64).sqrt() * dmax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefSet, ModelOrders, Omega};

    fn model_110(g1: DMatrix<f64>, g2: DMatrix<f64>) -> SpvarModel {
        SpvarModel::new(ModelOrders::new(1, 1, 0), Omega::new(vec![0.5], vec![]), CoefSet::new(vec![g1, g2]).unwrap()).unwrap()
    }

    #[test]
    fn empty_network_for_zero_model() {
        let m = SpvarModel::zeros(3, ModelOrders::new(1, 1, 0), Omega::new(vec![0.5], vec![])).unwrap();
        assert!(granger_network(&m, DEFAULT_ZERO_TOL).unwrap().edges.is_empty());
    }

    #[test]
    fn edge_kinds() {
        let mut g1 = DMatrix::zeros(3, 3);
        let mut g2 = DMatrix::zeros(3, 3);
        g1[(0, 1)] = 0.3;
        g2[(0, 2)] = -0.4;
        g1[(2, 1)] = 0.1;
        g2[(2, 1)] = 0.2;
        g1[(1, 1)] = 0.9;
        let net = granger_network(&model_110(g1, g2), DEFAULT_ZERO_TOL).unwrap();
        let kinds: Vec<(usize, usize, EdgeKind)> = net.edges.iter().map(|e| (e.from, e.to, e.kind)).collect();
        assert_eq!(kinds, vec![(1, 0, EdgeKind::ShortOnly), (2, 0, EdgeKind::LongOnly), (1, 2, EdgeKind::Both)]);
        assert_eq!(net.edges[2].magnitude, 0.2);
        assert_eq!(net.edges[2].support, vec![1, 2]);
    }

    #[test]
    fn edges_shrink_with_tolerance() {
        let g1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.05, 0.3, 0.0]);
        let m = model_110(g1, DMatrix::zeros(2, 2));
        assert_eq!(granger_network(&m, 0.0).unwrap().edges.len(), 2);
        assert_eq!(granger_network(&m, 0.1).unwrap().edges.len(), 1);
        assert!(granger_network(&m, -1.0).is_err());
    }

    #[test]
    fn threshold_keeps_diagonal() {
        let c = DMatrix::from_row_slice(2, 2, &[0.01, 0.3, 0.3, 0.02]);
        assert_eq!(threshold_cov(&c, 0.0).unwrap(), c);
        let t = threshold_cov(&c, 1.0).unwrap();
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, 0.02]));
    }

    #[test]
    fn dot_output_has_kind_attribute() {
        let g1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]);
        let net = granger_network(&model_110(g1, DMatrix::zeros(2, 2)), 0.0).unwrap();
        let mut buf = Vec::new();
        net.write_dot(&mut buf, &["a".into(), "b".into()]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("\"b\" -> \"a\" [kind=short"));
    }
}
