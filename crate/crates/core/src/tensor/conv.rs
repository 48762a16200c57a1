//! Valid-mode, stride-1 convolution (cross-correlation convention).
//!
//! Batched convolution lowers to one GEMM per layer: `im2col` gathers every
//! receptive field into a `(C*kh*kw) x (B*H'*W')` matrix which is multiplied by
//! the `N x (C*kh*kw)` weight matrix. The `[C][B][H][W]` batch layout makes the
//! product land directly in the output layout.

use std::borrow::Cow;

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::separable::per_channel_forward;
use crate::tensor::{BasisBank, Batch, CoeffTensor, FeatureMap, FilterBank};

pub(crate) fn check_conv(c: usize, h: usize, w: usize, bank: &FilterBank<impl Scalar>) -> Result<()> {
    if bank.channels() != c {
        return Err(shape_err(format!(
            "input has {c} channels, filters expect {}",
            bank.channels()
        )));
    }
    if bank.kh() > h || bank.kw() > w {
        return Err(Error::KernelTooLarge { kh: bank.kh(), kw: bank.kw(), h, w });
    }
    Ok(())
}

/// Gathers receptive fields into a `(C*kh*kw) x (B*oh*ow)` row-major matrix.
pub(crate) fn im2col<T: Scalar>(x: &Batch<T>, kh: usize, kw: usize) -> Vec<T> {
    let (c, b, h, w) = x.dims();
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    let cols = b * oh * ow;
    let mut col = vec![T::zero(); c * kh * kw * cols];
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for bi in 0..b {
                    let src = x.image(ci, bi);
                    for u in 0..oh {
                        let s = (u + i) * w + j;
                        let o = (bi * oh + u) * ow;
                        dst[o..o + ow].copy_from_slice(&src[s..s + ow]);
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a column matrix back onto an input-shaped batch.
pub(crate) fn col2im<T: Scalar>(dcol: &[T], dx: &mut Batch<T>, kh: usize, kw: usize) {
    let (c, b, h, w) = dx.dims();
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    let cols = b * oh * ow;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let src = &dcol[row * cols..(row + 1) * cols];
                for bi in 0..b {
                    let dst = dx.image_mut(ci, bi);
                    for u in 0..oh {
                        let d0 = (u + i) * w + j;
                        let s0 = (bi * oh + u) * ow;
                        for (a, &g) in dst[d0..d0 + ow].iter_mut().zip(&src[s0..s0 + ow]) {
                            *a += g;
                        }
                    }
                }
            }
        }
    }
}

fn columns<'a, T: Scalar>(x: &'a Batch<T>, kh: usize, kw: usize) -> Cow<'a, [T]> {
    if kh == 1 && kw == 1 {
        Cow::Borrowed(&x.data)
    } else {
        Cow::Owned(im2col(x, kh, kw))
    }
}

/// Forward convolution of a batch. Returns the output and, when requested,
/// the column matrix for reuse in the backward pass.
pub(crate) fn conv_forward<T: Scalar>(
    x: &Batch<T>,
    bank: &FilterBank<T>,
    keep_columns: bool,
) -> Result<(Batch<T>, Option<Vec<T>>)> {
    let (c, b, h, w) = x.dims();
    check_conv(c, h, w, bank)?;
    let (kh, kw) = (bank.kh(), bank.kw());
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    let n = bank.filters();
    let cols = b * oh * ow;
    let col = columns(x, kh, kw);
    let mut out = Batch::zeros(n, b, oh, ow);
    gemm(false, false, n, cols, bank.fan_in(), T::one(), bank.weights(), &col, T::zero(), &mut out.data);
    for (ni, &bias) in bank.bias().iter().enumerate() {
        if bias != T::zero() {
            for y in &mut out.data[ni * cols..(ni + 1) * cols] {
                *y += bias;
            }
        }
    }
    let kept = if keep_columns { Some(col.into_owned()) } else { None };
    Ok((out, kept))
}

/// Gradients of one convolution.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Batch<T>>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv_backward<T: Scalar>(
    x: &Batch<T>,
    bank: &FilterBank<T>,
    columns_cache: Option<&[T]>,
    dy: &Batch<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let (kh, kw) = (bank.kh(), bank.kw());
    let n = bank.filters();
    let k = bank.fan_in();
    let cols = dy.channel_len();
    let owned;
    let col: &[T] = match columns_cache {
        Some(c) => c,
        None => {
            owned = columns(x, kh, kw).into_owned();
            &owned
        }
    };
    let mut weights = vec![T::zero(); n * k];
    gemm(false, true, n, k, cols, T::one(), &dy.data, col, T::zero(), &mut weights);
    let bias = (0..n)
        .map(|ni| dy.data[ni * cols..(ni + 1) * cols].iter().copied().sum())
        .collect();
    let input = need_input.then(|| {
        let mut dcol = vec![T::zero(); k * cols];
        gemm(true, false, k, cols, n, T::one(), bank.weights(), &dy.data, T::zero(), &mut dcol);
        if kh == 1 && kw == 1 {
            Batch { channels: x.channels, batch: x.batch, height: x.height, width: x.width, data: dcol }
        } else {
            let mut dx = Batch::zeros(x.channels, x.batch, x.height, x.width);
            col2im(&dcol, &mut dx, kh, kw);
            dx
        }
    });
    ConvGrads { input, weights, bias }
}

/// Valid 2D convolution of a feature map with a filter bank.
///
/// `out[n](u, v) = bias[n] + sum_{c,i,j} W[n][c][i][j] * x[c](u + i, v + j)`.
pub fn conv2d_valid<T: Scalar>(input: &FeatureMap<T>, bank: &FilterBank<T>) -> Result<FeatureMap<T>> {
    let (y, _) = conv_forward(&Batch::from_map(input), bank, false)?;
    Ok(FeatureMap::from_raw(y.channels, y.height, y.width, y.data))
}

/// Applies every basis filter to every input channel separately. Output
/// channel `c*M + m` holds `s_m` applied to channel `c`.
pub fn conv2d_per_channel<T: Scalar>(
    input: &FeatureMap<T>,
    basis: &BasisBank<T>,
) -> Result<FeatureMap<T>> {
    let out = per_channel_forward(&Batch::from_map(input), std::slice::from_ref(basis), false)?;
    let m = out.maps;
    Ok(FeatureMap::from_raw(m.channels, m.height, m.width, m.data))
}

/// Pointwise recombination `out[n] = bias[n] + sum_{c,m} a[n][c][m] maps[c*M + m]`.
pub fn linear_combine<T: Scalar>(
    maps: &FeatureMap<T>,
    coeffs: &CoeffTensor<T>,
    bias: &[T],
) -> Result<FeatureMap<T>> {
    let cm = coeffs.channels() * coeffs.basis();
    if maps.channels() != cm {
        return Err(shape_err(format!(
            "maps have {} channels, coefficients expect {cm}",
            maps.channels()
        )));
    }
    if bias.len() != coeffs.filters() {
        return Err(shape_err("bias length differs from coefficient filter count"));
    }
    let n = coeffs.filters();
    let p = maps.height() * maps.width();
    let mut out = vec![T::zero(); n * p];
    gemm(false, false, n, p, cm, T::one(), coeffs.data(), maps.data(), T::zero(), &mut out);
    for (ni, &b) in bias.iter().enumerate() {
        for y in &mut out[ni * p..(ni + 1) * p] {
            *y += b;
        }
    }
    Ok(FeatureMap::from_raw(n, maps.height(), maps.width(), out))
}

/// Rearranges a square bank into the `(C*d) x (N*d)` matrix with entry
/// `[(c*d + i), (n*d + j)] = W[n][c][i][j]`. A rank-`K` factorization of this
/// matrix is exactly a `K`-filter vertical/horizontal factorization.
pub fn rearrange_bank<T: Scalar>(bank: &FilterBank<T>) -> Result<DMatrix<f64>> {
    if !bank.is_square() {
        return Err(Error::NonSquareKernel { kh: bank.kh(), kw: bank.kw() });
    }
    let (n, c, d) = (bank.filters(), bank.channels(), bank.kh());
    Ok(DMatrix::from_fn(c * d, n * d, |r, col| {
        bank.weight(col / d, r / d, r % d, col % d).to_f64()
    }))
}

/// Inverse of [`rearrange_bank`].
pub fn unrearrange_bank<T: Scalar>(
    matrix: &DMatrix<f64>,
    filters: usize,
    channels: usize,
    d: usize,
    bias: Vec<T>,
) -> Result<FilterBank<T>> {
    if matrix.nrows() != channels * d || matrix.ncols() != filters * d {
        return Err(shape_err(format!(
            "matrix {}x{} does not match {filters} filters, {channels} channels, d={d}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    FilterBank::from_fn(filters, channels, d, d, |n, c, i, j| T::of(matrix[(c * d + i, n * d + j)]))
        .with_bias(bias)
}
