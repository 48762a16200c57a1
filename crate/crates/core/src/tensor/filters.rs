use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// `N` filters of shape `C x kh x kw` plus one bias per filter. Weights are
/// ordered `[n][c][row][col]`.
///
/// Square, vertical (`kw = 1`) and horizontal (`kh = 1`) banks share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T = f32> {
    filters: usize,
    channels: usize,
    kh: usize,
    kw: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn new(
        filters: usize,
        channels: usize,
        kh: usize,
        kw: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if filters == 0 || channels == 0 || kh == 0 || kw == 0 {
            return Err(shape_err(format!(
                "filter bank dims must be >= 1, got {filters}x{channels}x{kh}x{kw}"
            )));
        }
        if weights.len() != filters * channels * kh * kw {
            return Err(shape_err(format!(
                "filter bank {filters}x{channels}x{kh}x{kw} needs {} weights, got {}",
                filters * channels * kh * kw,
                weights.len()
            )));
        }
        if bias.len() != filters {
            return Err(shape_err(format!("bias needs {filters} values, got {}", bias.len())));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("filter bank contains non-finite values".into()));
        }
        Ok(Self { filters, channels, kh, kw, weights, bias })
    }

    pub fn zeros(filters: usize, channels: usize, kh: usize, kw: usize) -> Self {
        Self {
            filters,
            channels,
            kh,
            kw,
            weights: vec![T::zero(); filters * channels * kh * kw],
            bias: vec![T::zero(); filters],
        }
    }

    pub fn from_fn(
        filters: usize,
        channels: usize,
        kh: usize,
        kw: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut bank = Self::zeros(filters, channels, kh, kw);
        let mut idx = 0;
        for n in 0..filters {
            for c in 0..channels {
                for i in 0..kh {
                    for j in 0..kw {
                        bank.weights[idx] = f(n, c, i, j);
                        idx += 1;
                    }
                }
            }
        }
        bank
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Result<Self> {
        if bias.len() != self.filters {
            return Err(shape_err(format!("bias needs {} values, got {}", self.filters, bias.len())));
        }
        self.bias = bias;
        Ok(self)
    }

    pub fn filters(&self) -> usize {
        self.filters
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn kh(&self) -> usize {
        self.kh
    }
    pub fn kw(&self) -> usize {
        self.kw
    }
    pub fn is_square(&self) -> bool {
        self.kh == self.kw
    }
    /// Values per filter, `C * kh * kw`.
    pub fn fan_in(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub(crate) fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }
    #[cfg(test)]
    pub(crate) fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }
    pub(crate) fn weights_and_bias_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.weights, &mut self.bias)
    }

    #[inline]
    pub fn weight(&self, n: usize, c: usize, i: usize, j: usize) -> T {
        self.weights[((n * self.channels + c) * self.kh + i) * self.kw + j]
    }

    /// The `kh x kw` slice `W_n^c`.
    pub fn kernel(&self, n: usize, c: usize) -> &[T] {
        let s = self.kh * self.kw;
        let o = (n * self.channels + c) * s;
        &self.weights[o..o + s]
    }

    pub fn cast<U: Scalar>(&self) -> FilterBank<U> {
        FilterBank {
            filters: self.filters,
            channels: self.channels,
            kh: self.kh,
            kw: self.kw,
            weights: self.weights.iter().map(|&x| U::of(x.to_f64())).collect(),
            bias: self.bias.iter().map(|&x| U::of(x.to_f64())).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// `M` rank-1 basis filters `s_m = v_m ⊗ h_m`, each `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisBank<T = f32> {
    size: usize,
    d: usize,
    vertical: Vec<T>,
    horizontal: Vec<T>,
}

impl<T: Scalar> BasisBank<T> {
    /// `vertical` and `horizontal` hold `M` consecutive length-`d` vectors.
    pub fn new(d: usize, vertical: Vec<T>, horizontal: Vec<T>) -> Result<Self> {
        if d == 0 || vertical.is_empty() || vertical.len() % d != 0 {
            return Err(shape_err(format!(
                "basis vectors must be non-empty multiples of d={d}, got {}",
                vertical.len()
            )));
        }
        if vertical.len() != horizontal.len() {
            return Err(shape_err("vertical and horizontal basis lengths differ"));
        }
        if vertical.iter().chain(&horizontal).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("basis contains non-finite values".into()));
        }
        Ok(Self { size: vertical.len() / d, d, vertical, horizontal })
    }

    pub fn len(&self) -> usize {
        self.size
    }
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn v(&self, m: usize) -> &[T] {
        &self.vertical[m * self.d..(m + 1) * self.d]
    }
    pub fn h(&self, m: usize) -> &[T] {
        &self.horizontal[m * self.d..(m + 1) * self.d]
    }
    pub fn vertical(&self) -> &[T] {
        &self.vertical
    }
    pub fn horizontal(&self) -> &[T] {
        &self.horizontal
    }
    pub(crate) fn split_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.vertical, &mut self.horizontal)
    }

    /// Dense `d x d` rendering of `s_m`, row-major: `s(i, j) = v(i) * h(j)`.
    pub fn dense(&self, m: usize) -> Vec<T> {
        let (v, h) = (self.v(m), self.h(m));
        let mut out = Vec::with_capacity(self.d * self.d);
        for &vi in v {
            for &hj in h {
                out.push(vi * hj);
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> BasisBank<U> {
        BasisBank {
            size: self.size,
            d: self.d,
            vertical: self.vertical.iter().map(|&x| U::of(x.to_f64())).collect(),
            horizontal: self.horizontal.iter().map(|&x| U::of(x.to_f64())).collect(),
        }
    }
}

/// Recombination weights `a[n][c][m]` of a Scheme-1 layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTensor<T = f32> {
    filters: usize,
    channels: usize,
    basis: usize,
    data: Vec<T>,
}

impl<T: Scalar> CoeffTensor<T> {
    pub fn new(filters: usize, channels: usize, basis: usize, data: Vec<T>) -> Result<Self> {
        if filters == 0 || channels == 0 || basis == 0 {
            return Err(shape_err("coefficient tensor dims must be >= 1"));
        }
        if data.len() != filters * channels * basis {
            return Err(shape_err(format!(
                "coefficients {filters}x{channels}x{basis} need {} values, got {}",
                filters * channels * basis,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("coefficients contain non-finite values".into()));
        }
        Ok(Self { filters, channels, basis, data })
    }

    pub fn zeros(filters: usize, channels: usize, basis: usize) -> Self {
        Self { filters, channels, basis, data: vec![T::zero(); filters * channels * basis] }
    }

    pub fn filters(&self) -> usize {
        self.filters
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn basis(&self) -> usize {
        self.basis
    }
    /// Row-major `N x (C*M)` view.
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, n: usize, c: usize, m: usize) -> T {
        self.data[(n * self.channels + c) * self.basis + m]
    }
    #[inline]
    pub fn set(&mut self, n: usize, c: usize, m: usize, v: T) {
        self.data[(n * self.channels + c) * self.basis + m] = v;
    }

    pub fn cast<U: Scalar>(&self) -> CoeffTensor<U> {
        CoeffTensor {
            filters: self.filters,
            channels: self.channels,
            basis: self.basis,
            data: self.data.iter().map(|&x| U::of(x.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_validates_lengths() {
        assert!(FilterBank::<f32>::new(1, 1, 2, 2, vec![0.0; 4], vec![0.0]).is_ok());
        assert!(FilterBank::<f32>::new(1, 1, 2, 2, vec![0.0; 3], vec![0.0]).is_err());
        assert!(FilterBank::<f32>::new(2, 1, 1, 1, vec![0.0; 2], vec![0.0]).is_err());
        assert!(FilterBank::<f32>::new(0, 1, 1, 1, vec![], vec![]).is_err());
    }

    #[test]
    fn dense_basis_is_full_convolution_of_column_and_row() {
        let b = BasisBank::<f64>::new(3, vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]).unwrap();
        // Full 2D convolution of a 3x1 column with a 1x3 row: out(i, j) = v(i) h(j).
        let mut full = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                full[i * 3 + j] += b.v(0)[i] * b.h(0)[j];
            }
        }
        assert_eq!(b.dense(0), full);
        // Rank one: every 2x2 minor vanishes.
        let s = b.dense(0);
        assert_eq!(s[0] * s[4] - s[1] * s[3], 0.0);
    }
}
