use crate::error::{shape_err, Error, Result};
use crate::lowrank::{ApproxLayer, Scheme1Layer, Scheme2Layer};
use crate::scalar::Scalar;
use crate::tensor::FilterBank;

/// One stage of a network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    Conv(FilterBank<T>),
    /// Pointwise maximum over groups of `group` consecutive channels.
    Maxout { group: usize },
    /// Softmax across channels at every pixel.
    Softmax,
    /// Inverted dropout; identity outside training.
    Dropout { rate: f64 },
    Scheme1(Scheme1Layer<T>),
    Scheme2(Scheme2Layer<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Maxout { .. } => "maxout",
            Layer::Softmax => "softmax",
            Layer::Dropout { .. } => "dropout",
            Layer::Scheme1(_) => "scheme1",
            Layer::Scheme2(_) => "scheme2",
        }
    }

    /// Convolution or one of its approximations.
    pub fn is_conv_like(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Scheme1(_) | Layer::Scheme2(_))
    }

    pub fn is_approximation(&self) -> bool {
        matches!(self, Layer::Scheme1(_) | Layer::Scheme2(_))
    }

    /// Kernel extent `(kh, kw)` of conv-like layers.
    pub fn kernel(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Conv(b) => Some((b.kh(), b.kw())),
            Layer::Scheme1(l) => Some((l.kernel_size(), l.kernel_size())),
            Layer::Scheme2(l) => Some((l.kernel_size(), l.kernel_size())),
            _ => None,
        }
    }

    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let conv_shape = |in_c: usize, n: usize, kh: usize, kw: usize| {
            if in_c != c {
                return Err(shape_err(format!("layer expects {in_c} channels, got {c}")));
            }
            if kh > h || kw > w {
                return Err(Error::KernelTooLarge { kh, kw, h, w });
            }
            Ok((n, h + 1 - kh, w + 1 - kw))
        };
        match self {
            Layer::Conv(b) => conv_shape(b.channels(), b.filters(), b.kh(), b.kw()),
            Layer::Scheme1(l) => conv_shape(l.channels(), l.filters(), l.kernel_size(), l.kernel_size()),
            Layer::Scheme2(l) => conv_shape(l.channels(), l.filters(), l.kernel_size(), l.kernel_size()),
            Layer::Maxout { group } => {
                if *group == 0 || c % group != 0 {
                    Err(Error::BadGroupSize { group: *group, channels: c })
                } else {
                    Ok((c / group, h, w))
                }
            }
            Layer::Softmax | Layer::Dropout { .. } => Ok((c, h, w)),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Conv(b) => vec![b.weights(), b.bias()],
            Layer::Scheme1(l) => l.params(),
            Layer::Scheme2(l) => l.params(),
            _ => Vec::new(),
        }
    }

    /// Mutable views of the slices returned by [`Layer::params`].
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Conv(b) => {
                let (w, bias) = b.weights_and_bias_mut();
                vec![w, bias]
            }
            Layer::Scheme1(l) => l.params_mut(),
            Layer::Scheme2(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// The dense filters this layer evaluates.
    pub fn effective_filters(&self) -> Option<FilterBank<T>> {
        match self {
            Layer::Conv(b) => Some(b.clone()),
            Layer::Scheme1(l) => Some(l.effective_filters()),
            Layer::Scheme2(l) => Some(l.effective_filters()),
            _ => None,
        }
    }

    pub fn as_approximation(&self) -> Option<ApproxLayer<T>> {
        match self {
            Layer::Scheme1(l) => Some(ApproxLayer::Scheme1(l.clone())),
            Layer::Scheme2(l) => Some(ApproxLayer::Scheme2(l.clone())),
            _ => None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(b) => Layer::Conv(b.cast()),
            Layer::Maxout { group } => Layer::Maxout { group: *group },
            Layer::Softmax => Layer::Softmax,
            Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
            Layer::Scheme1(l) => Layer::Scheme1(l.cast()),
            Layer::Scheme2(l) => Layer::Scheme2(l.cast()),
        }
    }
}

impl<T> From<ApproxLayer<T>> for Layer<T> {
    fn from(a: ApproxLayer<T>) -> Self {
        match a {
            ApproxLayer::Scheme1(l) => Layer::Scheme1(l),
            ApproxLayer::Scheme2(l) => Layer::Scheme2(l),
        }
    }
}
