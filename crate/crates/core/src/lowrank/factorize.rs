use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SortedSvd;
use crate::lowrank::{Scheme2Layer, SublayerOrder};
use crate::scalar::Scalar;
use crate::tensor::{rearrange_bank, FilterBank};

/// A Scheme-2 layer obtained from a truncated SVD together with its
/// filter-reconstruction residual.
#[derive(Debug, Clone)]
pub struct SvdFactorization<T> {
    pub layer: Scheme2Layer<T>,
    /// Frobenius norm of the discarded singular values.
    pub residual: f64,
    pub singular_values: Vec<f64>,
}

/// The rearranged matrix for the given sublayer order. Vertical-first uses
/// rows `(c, i)` and columns `(n, j)`; horizontal-first swaps `i` and `j`.
pub(crate) fn oriented_matrix<T: Scalar>(bank: &FilterBank<T>, order: SublayerOrder) -> Result<DMatrix<f64>> {
    let m = rearrange_bank(bank)?;
    Ok(match order {
        SublayerOrder::VerticalFirst => m,
        SublayerOrder::HorizontalFirst => {
            let (n, c, d) = (bank.filters(), bank.channels(), bank.kh());
            DMatrix::from_fn(c * d, n * d, |r, col| {
                bank.weight(col / d, r / d, col % d, r % d).to_f64()
            })
        }
    })
}

/// Highest admissible rank for a square bank, `min(C*d, N*d)`.
pub fn max_rank<T: Scalar>(bank: &FilterBank<T>) -> usize {
    (bank.channels() * bank.kh()).min(bank.filters() * bank.kh())
}

/// Builds a Scheme-2 layer from factors `V` (`C*d x K`) and `H` (`N*d x K`)
/// with `M ~= V H^T`.
pub(crate) fn layer_from_factors<T: Scalar>(
    v: &DMatrix<f64>,
    h: &DMatrix<f64>,
    filters: usize,
    channels: usize,
    d: usize,
    bias: Vec<T>,
    order: SublayerOrder,
) -> Result<Scheme2Layer<T>> {
    let k = v.ncols();
    let (fh, fw, sh, sw) = match order {
        SublayerOrder::VerticalFirst => (d, 1, 1, d),
        SublayerOrder::HorizontalFirst => (1, d, d, 1),
    };
    let first = FilterBank::from_fn(k, channels, fh, fw, |ki, c, i, j| T::of(v[(c * d + i + j, ki)]));
    let second = FilterBank::from_fn(filters, k, sh, sw, |n, ki, i, j| T::of(h[(n * d + i + j, ki)]))
        .with_bias(bias)?;
    Scheme2Layer::new(first, second, order)
}

/// Globally optimal rank-`K` Scheme-2 filter reconstruction via truncated
/// SVD of the rearranged bank, singular values split symmetrically.
pub fn scheme2_init_svd<T: Scalar>(bank: &FilterBank<T>, k: usize) -> Result<SvdFactorization<T>> {
    scheme2_init_svd_ordered(bank, k, SublayerOrder::VerticalFirst)
}

pub fn scheme2_init_svd_ordered<T: Scalar>(
    bank: &FilterBank<T>,
    k: usize,
    order: SublayerOrder,
) -> Result<SvdFactorization<T>> {
    let m = oriented_matrix(bank, order)?;
    let max = max_rank(bank);
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { rank: k, max });
    }
    let svd = SortedSvd::new(&m);
    let v = DMatrix::from_fn(m.nrows(), k, |r, c| svd.u[(r, c)] * svd.sigma[c].sqrt());
    let h = DMatrix::from_fn(m.ncols(), k, |r, c| svd.v_t[(c, r)] * svd.sigma[c].sqrt());
    let layer = layer_from_factors(&v, &h, bank.filters(), bank.channels(), bank.kh(), bank.bias().to_vec(), order)?;
    Ok(SvdFactorization {
        layer,
        residual: svd.tail_norm(k),
        singular_values: svd.sigma.iter().copied().collect(),
    })
}

/// Frobenius distance between two banks' weights (biases excluded).
pub fn filter_residual<T: Scalar>(a: &FilterBank<T>, b: &FilterBank<T>) -> f64 {
    a.weights()
        .iter()
        .zip(b.weights())
        .map(|(&x, &y)| (x.to_f64() - y.to_f64()).powi(2))
        .sum::<f64>()
        .sqrt()
}
