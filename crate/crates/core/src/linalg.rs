//! Thin wrappers over nalgebra's dense factorizations.

use nalgebra::{DMatrix, DVector};

/// Thin SVD with singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let sigma = svd.singular_values;
        let mut order: Vec<usize> = (0..sigma.len()).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
        let sigma = DVector::from_iterator(order.len(), order.iter().map(|&i| sigma[i]));
        Self { u, sigma, v_t }
    }

    /// Rebuilds `U diag(f(sigma)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (c, &s) in self.sigma.iter().enumerate() {
            let fs = f(s);
            us.column_mut(c).scale_mut(fs);
        }
        us * &self.v_t
    }

    /// `sqrt(sum_{i >= k} sigma_i^2)`: the Frobenius error of the best rank-`k` fit.
    pub fn tail_norm(&self, k: usize) -> f64 {
        self.sigma.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Solves `x (G + ridge I) = rhs` for `x`, i.e. `x = rhs (G + ridge I)^{-1}`
/// with symmetric positive semi-definite `G`. Falls back to an extra ridge
/// when the Cholesky factorization fails.
pub fn solve_right_spd(rhs: &DMatrix<f64>, gram: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let k = gram.nrows();
    let mut reg = ridge;
    loop {
        let mut g = gram.clone();
        for i in 0..k {
            g[(i, i)] += reg;
        }
        if let Some(ch) = g.cholesky() {
            // x G = rhs  <=>  G x^T = rhs^T
            return ch.solve(&rhs.transpose()).transpose();
        }
        let scale = (0..k).map(|i| gram[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 10.0 };
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
pub fn spd_max_eigenvalue(g: &DMatrix<f64>) -> f64 {
    g.clone().symmetric_eigenvalues().iter().copied().fold(0.0, f64::max)
}
