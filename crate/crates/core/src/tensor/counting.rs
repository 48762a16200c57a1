//! Instrumented reference kernels that count every multiply-accumulate.
//!
//! These are plain nested loops, independent of the GEMM path, and are used
//! to check the closed-form cost model.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::conv::check_conv;
use crate::tensor::{BasisBank, CoeffTensor, FeatureMap, FilterBank};

/// Running multiply-accumulate count.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter {
    pub macs: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Direct convolution, one counted MAC per weight-pixel product.
pub fn conv2d_counted<T: Scalar>(
    x: &FeatureMap<T>,
    bank: &FilterBank<T>,
    counter: &mut MacCounter,
) -> Result<FeatureMap<T>> {
    let (c, h, w) = x.shape();
    check_conv(c, h, w, bank)?;
    let (kh, kw) = (bank.kh(), bank.kw());
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    let mut out = FeatureMap::zeros(bank.filters(), oh, ow);
    let mut data = vec![T::zero(); bank.filters() * oh * ow];
    for n in 0..bank.filters() {
        for u in 0..oh {
            for v in 0..ow {
                let mut acc = bank.bias()[n];
                for ci in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            acc += bank.weight(n, ci, i, j) * x.get(ci, u + i, v + j);
                            counter.macs += 1;
                        }
                    }
                }
                data[(n * oh + u) * ow + v] = acc;
            }
        }
    }
    out = FeatureMap::from_raw(out.channels(), oh, ow, data);
    Ok(out)
}

/// Separable per-channel filtering: a vertical pass over the full input
/// width, then a horizontal pass.
pub fn per_channel_counted<T: Scalar>(
    x: &FeatureMap<T>,
    bases: &[BasisBank<T>],
    counter: &mut MacCounter,
) -> Result<FeatureMap<T>> {
    let (c, h, w) = x.shape();
    let (m, d) = (bases[0].len(), bases[0].d());
    if d > h || d > w {
        return Err(crate::Error::KernelTooLarge { kh: d, kw: d, h, w });
    }
    let (oh, ow) = (h + 1 - d, w + 1 - d);
    let mut data = vec![T::zero(); c * m * oh * ow];
    let mut tmp = vec![T::zero(); oh * w];
    for ci in 0..c {
        let basis = if bases.len() == 1 { &bases[0] } else { &bases[ci] };
        for mi in 0..m {
            let (vv, hh) = (basis.v(mi), basis.h(mi));
            for u in 0..oh {
                for col in 0..w {
                    let mut acc = T::zero();
                    for (i, &vi) in vv.iter().enumerate() {
                        acc += vi * x.get(ci, u + i, col);
                        counter.macs += 1;
                    }
                    tmp[u * w + col] = acc;
                }
            }
            let ch = ci * m + mi;
            for u in 0..oh {
                for col in 0..ow {
                    let mut acc = T::zero();
                    for (j, &hj) in hh.iter().enumerate() {
                        acc += hj * tmp[u * w + col + j];
                        counter.macs += 1;
                    }
                    data[(ch * oh + u) * ow + col] = acc;
                }
            }
        }
    }
    Ok(FeatureMap::from_raw(c * m, oh, ow, data))
}

/// Pointwise recombination, one counted MAC per coefficient-pixel product.
pub fn linear_combine_counted<T: Scalar>(
    maps: &FeatureMap<T>,
    coeffs: &CoeffTensor<T>,
    bias: &[T],
    counter: &mut MacCounter,
) -> Result<FeatureMap<T>> {
    let (cm, oh, ow) = maps.shape();
    if cm != coeffs.channels() * coeffs.basis() {
        return Err(crate::error::shape_err("maps and coefficients disagree"));
    }
    let n = coeffs.filters();
    let mut data = vec![T::zero(); n * oh * ow];
    for ni in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let mut acc = bias[ni];
                for k in 0..cm {
                    acc += coeffs.data()[ni * cm + k] * maps.get(k, u, v);
                    counter.macs += 1;
                }
                data[(ni * oh + u) * ow + v] = acc;
            }
        }
    }
    Ok(FeatureMap::from_raw(n, oh, ow, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_valid;

    #[test]
    fn counted_conv_matches_fast_path_and_counts_exactly() {
        let x = FeatureMap::<f64>::from_fn(2, 6, 7, |c, u, v| ((c * 13 + u * 5 + v) % 7) as f64);
        let bank = FilterBank::<f64>::from_fn(3, 2, 3, 2, |n, c, i, j| (n + c + i * j) as f64 * 0.1);
        let mut counter = MacCounter::new();
        let y = conv2d_counted(&x, &bank, &mut counter).unwrap();
        let z = conv2d_valid(&x, &bank).unwrap();
        for (a, b) in y.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(counter.macs, 3 * 2 * 3 * 2 * 4 * 6);
    }
}
