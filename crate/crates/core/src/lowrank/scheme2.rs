use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv_backward, conv_forward, Batch, FeatureMap, FilterBank};

/// Which 1D sublayer runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SublayerOrder {
    /// `K` filters of size `d x 1`, then `N` filters of size `1 x d`.
    #[default]
    VerticalFirst,
    /// `K` filters of size `1 x d`, then `N` filters of size `d x 1`.
    HorizontalFirst,
}

/// A convolution factored into two rectangular convolutions through `K`
/// intermediate channels. The first bank has no bias; the second carries the
/// original layer's bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheme2Layer<T = f32> {
    first: FilterBank<T>,
    second: FilterBank<T>,
    order: SublayerOrder,
}

pub(crate) struct Scheme2Cache<T> {
    mid: Batch<T>,
    first_cols: Option<Vec<T>>,
    second_cols: Option<Vec<T>>,
}

pub(crate) struct Scheme2Grads<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Batch<T>>,
}

impl<T: Scalar> Scheme2Layer<T> {
    /// `first` is `K x C x d x 1` (or `K x C x 1 x d` for horizontal-first),
    /// `second` is `N x K x 1 x d` (or `N x K x d x 1`). Any bias on `first`
    /// is discarded.
    pub fn new(first: FilterBank<T>, second: FilterBank<T>, order: SublayerOrder) -> Result<Self> {
        let (k, c) = (first.filters(), first.channels());
        let d = first.kh().max(first.kw());
        let (fh, fw, sh, sw) = match order {
            SublayerOrder::VerticalFirst => (d, 1, 1, d),
            SublayerOrder::HorizontalFirst => (1, d, d, 1),
        };
        if (first.kh(), first.kw()) != (fh, fw) || (second.kh(), second.kw()) != (sh, sw) {
            return Err(shape_err(format!(
                "scheme-2 sublayers must be {fh}x{fw} then {sh}x{sw}, got {}x{} then {}x{}",
                first.kh(),
                first.kw(),
                second.kh(),
                second.kw()
            )));
        }
        if second.channels() != k {
            return Err(shape_err(format!(
                "second sublayer expects {} channels, first produces {k}",
                second.channels()
            )));
        }
        let max = (c * d).min(second.filters() * d);
        if k == 0 || k > max {
            return Err(Error::RankOutOfRange { rank: k, max });
        }
        let first = first.with_bias(vec![T::zero(); k])?;
        Ok(Self { first, second, order })
    }

    pub fn first(&self) -> &FilterBank<T> {
        &self.first
    }
    pub fn second(&self) -> &FilterBank<T> {
        &self.second
    }
    pub fn order(&self) -> SublayerOrder {
        self.order
    }
    pub fn rank(&self) -> usize {
        self.first.filters()
    }
    pub fn filters(&self) -> usize {
        self.second.filters()
    }
    pub fn channels(&self) -> usize {
        self.first.channels()
    }
    pub fn kernel_size(&self) -> usize {
        self.first.kh().max(self.first.kw())
    }
    pub fn bias(&self) -> &[T] {
        self.second.bias()
    }
    pub fn param_count(&self) -> usize {
        self.first.weights().len() + self.second.param_count()
    }

    /// Trainable slices: first weights, second weights, second bias.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut [T]> {
        let (first, second) = (&mut self.first, &mut self.second);
        let (w2, b2) = second.weights_and_bias_mut();
        vec![first.weights_mut(), w2, b2]
    }

    pub(crate) fn params(&self) -> Vec<&[T]> {
        vec![self.first.weights(), self.second.weights(), self.second.bias()]
    }

    pub fn forward(&self, z: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let (y, _) = self.forward_batch(&Batch::from_map(z), false)?;
        Ok(FeatureMap::from_raw(y.channels, y.height, y.width, y.data))
    }

    pub(crate) fn forward_batch(
        &self,
        x: &Batch<T>,
        keep: bool,
    ) -> Result<(Batch<T>, Option<Scheme2Cache<T>>)> {
        let (mid, first_cols) = conv_forward(x, &self.first, keep)?;
        let (out, second_cols) = conv_forward(&mid, &self.second, keep)?;
        let cache = keep.then_some(Scheme2Cache { mid, first_cols, second_cols });
        Ok((out, cache))
    }

    pub(crate) fn backward_batch(
        &self,
        x: &Batch<T>,
        cache: &Scheme2Cache<T>,
        dy: &Batch<T>,
        need_input: bool,
    ) -> Scheme2Grads<T> {
        let g2 = conv_backward(&cache.mid, &self.second, cache.second_cols.as_deref(), dy, true);
        let dmid = g2.input.expect("requested");
        let g1 = conv_backward(x, &self.first, cache.first_cols.as_deref(), &dmid, need_input);
        Scheme2Grads { first: g1.weights, second: g2.weights, bias: g2.bias, input: g1.input }
    }

    /// Dense equivalent bank: `W~_n^c(i, j) = sum_k v_k^c(i) h_n^k(j)`.
    pub fn effective_filters(&self) -> FilterBank<T> {
        let (k, n, c, d) = (self.rank(), self.filters(), self.channels(), self.kernel_size());
        FilterBank::from_fn(n, c, d, d, |ni, ci, i, j| {
            let mut acc = T::zero();
            for ki in 0..k {
                // First bank stores its 1D taps contiguously in either orientation.
                let (a, b) = match self.order {
                    SublayerOrder::VerticalFirst => {
                        (self.first.kernel(ki, ci)[i], self.second.kernel(ni, ki)[j])
                    }
                    SublayerOrder::HorizontalFirst => {
                        (self.first.kernel(ki, ci)[j], self.second.kernel(ni, ki)[i])
                    }
                };
                acc += a * b;
            }
            acc
        })
        .with_bias(self.second.bias().to_vec())
        .expect("consistent shapes")
    }

    pub fn cast<U: Scalar>(&self) -> Scheme2Layer<U> {
        Scheme2Layer { first: self.first.cast(), second: self.second.cast(), order: self.order }
    }
}

/// Scheme-2 forward pass: the first rectangular convolution, then the second
/// (which adds the bias).
pub fn scheme2_forward<T: Scalar>(layer: &Scheme2Layer<T>, z: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    layer.forward(z)
}
