//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Largest eigenvalue modulus of a square matrix. Empty matrices have radius 0.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Block companion matrix of `blocks = [G_1, ..., G_p]` (each N x N):
/// first block row holds the G's, identity blocks on the sub-diagonal.
pub fn companion(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = blocks.len();
    if p == 0 {
        return DMatrix::zeros(0, 0);
    }
    let n = blocks[0].nrows();
    let mut c = DMatrix::zeros(n * p, n * p);
    for (k, g) in blocks.iter().enumerate() {
        c.view_mut((0, k * n), (n, n)).copy_from(g);
    }
    for k in 1..p {
        for i in 0..n {
            c[(k * n + i, (k - 1) * n + i)] = 1.0;
        }
    }
    c
}

/// Estimate of the largest eigenvalue of `AᵀA` by power iteration.
pub fn top_singular_sq(a: &DMatrix<f64>, iters: usize) -> f64 {
    let cols = a.ncols();
    if cols == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start vector.
    let mut v = nalgebra::DVector::from_fn(cols, |i, _| 1.0 + 0.01 * (i % 7) as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let av = a * &v;
        let w = a.transpose() * av;
        let nw = w.norm();
        if nw == 0.0 || !nw.is_finite() {
            return est;
        }
        est = nw;
        v = w / nw;
    }
    est
}

/// Same as [`top_singular_sq`] but for a symmetric PSD matrix directly.
pub fn top_eigen_psd(s: &DMatrix<f64>, iters: usize) -> f64 {
    let n = s.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.01 * (i % 7) as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = s * &v;
        let nw = w.norm();
        if nw == 0.0 || !nw.is_finite() {
            return est;
        }
        est = nw;
        v = w / nw;
    }
    est
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, -0.9, 0.5]));
        assert!((spectral_radius(&m) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn radius_of_rotation() {
        let t = std::f64::consts::FRAC_PI_4;
        let m = DMatrix::from_row_slice(2, 2, &[0.6 * t.cos(), 0.6 * t.sin(), -0.6 * t.sin(), 0.6 * t.cos()]);
        assert!((spectral_radius(&m) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn companion_layout() {
        let g1 = DMatrix::from_element(2, 2, 1.0);
        let g2 = DMatrix::from_element(2, 2, 2.0);
        let c = companion(&[g1, g2]);
        assert_eq!(c.shape(), (4, 4));
        assert_eq!(c[(0, 2)], 2.0);
        assert_eq!(c[(2, 0)], 1.0);
        assert_eq!(c[(3, 1)], 1.0);
        assert_eq!(c[(2, 2)], 0.0);
    }

    #[test]
    fn power_iteration_matches_svd() {
        let a = DMatrix::<f64>::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.2]);
        let sv = a.clone().svd(false, false).singular_values;
        let expect = sv.max().powi(2);
        assert!((top_singular_sq(&a, 200) - expect).abs() < 1e-8 * expect);
    }
}
