//! Alternating least squares for the vertical/horizontal factorization.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{solve_right_spd, SortedSvd};
use crate::lowrank::{layer_from_factors, max_rank, oriented_matrix, Scheme2Layer, SublayerOrder};
use crate::scalar::Scalar;
use crate::tensor::FilterBank;

/// Starting point of the alternation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlsInit {
    /// Truncated SVD, already optimal.
    Svd,
    /// Gaussian factors with standard deviation `sigma`.
    Random { seed: u64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    pub init: AlsInit,
    pub max_sweeps: usize,
    /// Stop when a full sweep lowers the residual by less than this fraction.
    pub tol: f64,
    /// Ridge added to each normal-equation system.
    pub ridge: f64,
    pub order: SublayerOrder,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { init: AlsInit::Svd, max_sweeps: 5000, tol: 1e-13, ridge: 1e-10, order: SublayerOrder::VerticalFirst }
    }
}

#[derive(Debug, Clone)]
pub struct AlsResult<T> {
    pub layer: Scheme2Layer<T>,
    /// Residual `||W - W~||_F` after initialization and after every half-sweep.
    pub trace: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
    /// False when `max_sweeps` was reached first.
    pub converged: bool,
}

/// Rank-`K` filter reconstruction by alternating exact least-squares solves
/// for the vertical factors given the horizontal ones and vice versa. A
/// half-step that would raise the residual (possible only through the ridge)
/// is rejected, so the trace never increases.
pub fn scheme2_filter_recon_als<T: Scalar>(bank: &FilterBank<T>, k: usize, cfg: &AlsConfig) -> Result<AlsResult<T>> {
    let m = oriented_matrix(bank, cfg.order)?;
    let max = max_rank(bank);
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { rank: k, max });
    }
    let (mut v, mut h) = match cfg.init {
        AlsInit::Svd => {
            let svd = SortedSvd::new(&m);
            (
                DMatrix::from_fn(m.nrows(), k, |r, c| svd.u[(r, c)] * svd.sigma[c].sqrt()),
                DMatrix::from_fn(m.ncols(), k, |r, c| svd.v_t[(c, r)] * svd.sigma[c].sqrt()),
            )
        }
        AlsInit::Random { seed, sigma } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let v = DMatrix::from_fn(m.nrows(), k, |_, _| normal.sample(&mut rng));
            let h = DMatrix::from_fn(m.ncols(), k, |_, _| normal.sample(&mut rng));
            (v, h)
        }
    };
    let resid = |v: &DMatrix<f64>, h: &DMatrix<f64>| (&m - v * h.transpose()).norm();
    let mut r = resid(&v, &h);
    let mut trace = vec![r];
    let mut sweeps = 0;
    let mut converged = false;
    let mt = m.transpose();
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let start = r;
        let v_new = solve_right_spd(&(&m * &h), &(h.transpose() * &h), cfg.ridge);
        let rv = resid(&v_new, &h);
        if rv <= r {
            v = v_new;
            r = rv;
        }
        trace.push(r);
        let h_new = solve_right_spd(&(&mt * &v), &(v.transpose() * &v), cfg.ridge);
        let rh = resid(&v, &h_new);
        if rh <= r {
            h = h_new;
            r = rh;
        }
        trace.push(r);
        if start - r <= cfg.tol * start.max(1e-300) {
            converged = true;
            break;
        }
    }
    let layer = layer_from_factors(&v, &h, bank.filters(), bank.channels(), bank.kh(), bank.bias().to_vec(), cfg.order)?;
    Ok(AlsResult { layer, trace, residual: r, sweeps, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::{filter_residual, scheme2_init_svd_ordered};
    use rand_distr::StandardNormal;

    fn random_bank(n: usize, c: usize, d: usize, seed: u64) -> FilterBank<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FilterBank::from_fn(n, c, d, d, |_, _, _, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn svd_start_is_a_fixed_point() {
        let b = random_bank(4, 3, 5, 1);
        for k in [1, 3, 7] {
            let svd = scheme2_init_svd_ordered(&b, k, SublayerOrder::VerticalFirst).unwrap();
            let r = scheme2_filter_recon_als(&b, k, &AlsConfig::default()).unwrap();
            assert!(r.sweeps <= 2, "k={k} took {} sweeps", r.sweeps);
            assert!((r.residual - svd.residual).abs() <= 1e-6 * svd.residual.max(1e-12));
        }
    }

    #[test]
    fn random_start_reaches_svd_residual() {
        let b = random_bank(4, 3, 5, 2);
        let svd = scheme2_init_svd_ordered(&b, 2, SublayerOrder::VerticalFirst).unwrap();
        let cfg = AlsConfig { init: AlsInit::Random { seed: 3, sigma: 0.1 }, ..Default::default() };
        let r = scheme2_filter_recon_als(&b, 2, &cfg).unwrap();
        assert!((r.residual - svd.residual).abs() <= 1e-4 * svd.residual);
        assert!(r.residual >= svd.residual * (1.0 - 1e-6));
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((filter_residual(&b, &r.layer.effective_filters()) - r.residual).abs() < 1e-9);
    }

    #[test]
    fn full_rank_is_exact_in_both_orders() {
        let b = random_bank(3, 2, 4, 4);
        let norm = b.weights().iter().map(|x| x * x).sum::<f64>().sqrt();
        for order in [SublayerOrder::VerticalFirst, SublayerOrder::HorizontalFirst] {
            let cfg = AlsConfig { init: AlsInit::Random { seed: 5, sigma: 0.1 }, order, ..Default::default() };
            let r = scheme2_filter_recon_als(&b, max_rank(&b), &cfg).unwrap();
            assert!(r.residual <= 1e-6 * norm);
            assert_eq!(r.layer.order(), order);
        }
    }

    #[test]
    fn rank_is_checked() {
        let b = random_bank(2, 2, 3, 6);
        assert!(matches!(scheme2_filter_recon_als(&b, 0, &AlsConfig::default()), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(scheme2_filter_recon_als(&b, 7, &AlsConfig::default()), Err(Error::RankOutOfRange { .. })));
    }
}
