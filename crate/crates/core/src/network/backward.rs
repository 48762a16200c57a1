use crate::error::{shape_err, Error, Result};
use crate::network::forward::{run_layers, LayerCache, Mode, Trace};
use crate::network::{Layer, Network};
use crate::scalar::Scalar;
use crate::tensor::{conv_backward, Batch, FeatureMap};

/// Objective for [`backward`].
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a, T> {
    /// Negative log-likelihood of `label` under the softmax output, summed over
    /// output pixels. The last layer must be a softmax.
    CrossEntropy { label: usize },
    /// `sum (out_l - target)^2` on the output of layer `layer`.
    L2 { layer: usize, target: &'a FeatureMap<T> },
}

pub(crate) enum BatchLoss<'a, T> {
    CrossEntropy(&'a [usize]),
    L2 { layer: usize, target: &'a Batch<T> },
}

/// Gradients for every trainable slice, indexed like [`Layer::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| l.params().iter().map(|p| vec![T::zero(); p.len()]).collect())
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in a.iter_mut().zip(b) {
                for (x, &y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.layers.iter_mut().flatten().flatten() {
            *v *= s;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers.iter().flatten().flatten().map(|&v| v.to_f64().powi(2)).sum()
    }
}

/// Loss and exact parameter gradients for one sample.
pub fn backward<T: Scalar>(net: &Network<T>, x: &FeatureMap<T>, loss: LossSpec<'_, T>) -> Result<(f64, Gradients<T>)> {
    let xb = Batch::from_map(x);
    match loss {
        LossSpec::CrossEntropy { label } => {
            backward_batch(net, xb, BatchLoss::CrossEntropy(&[label]), Mode::Eval, None)
        }
        LossSpec::L2 { layer, target } => {
            let t = Batch::from_map(target);
            backward_batch(net, xb, BatchLoss::L2 { layer, target: &t }, Mode::Eval, None)
        }
    }
}

/// Loss summed over the batch and its gradients. Layers with `trainable[i] == false`
/// get zero gradients and backpropagation stops below the lowest trainable layer.
pub(crate) fn backward_batch<T: Scalar>(
    net: &Network<T>,
    x: Batch<T>,
    loss: BatchLoss<'_, T>,
    mode: Mode,
    trainable: Option<&[bool]>,
) -> Result<(f64, Gradients<T>)> {
    if x.sample_shape() != net.input_shape() {
        return Err(Error::LayerShapeMismatch {
            index: 0,
            detail: format!("input shape {:?}, network expects {:?}", x.sample_shape(), net.input_shape()),
        });
    }
    let end = match loss {
        BatchLoss::CrossEntropy(labels) => {
            if !matches!(net.layers().last(), Some(Layer::Softmax)) {
                return Err(Error::InvalidArgument("cross-entropy needs a final softmax layer".into()));
            }
            if labels.len() != x.batch {
                return Err(shape_err(format!("{} labels for {} samples", labels.len(), x.batch)));
            }
            net.len()
        }
        BatchLoss::L2 { layer, .. } => {
            if layer >= net.len() {
                return Err(Error::IndexOutOfRange { index: layer, len: net.len() });
            }
            layer + 1
        }
    };
    let is_trainable = |i: usize| trainable.map_or(true, |t| t.get(i).copied().unwrap_or(false));
    let mut grads = Gradients::zeros(net);
    let lo = (0..end).find(|&i| is_trainable(i) && net.layers()[i].param_count() > 0);

    let Some(lo) = lo else {
        let t = run_layers(net, x, 0, end, mode, false)?;
        let loss = match loss {
            BatchLoss::CrossEntropy(labels) => cross_entropy(t.activations.last().expect("output"), labels)?.0,
            BatchLoss::L2 { target, .. } => l2(t.activations.last().expect("output"), target)?.0,
        };
        return Ok((loss, grads));
    };

    let head = run_layers(net, x, 0, lo, mode, false)?;
    let input = head.activations.into_iter().last().expect("input");
    let Trace { activations, caches } = run_layers(net, input, lo, end, mode, true)?;
    let out = activations.last().expect("output");
    let (value, mut dy, mut top) = match loss {
        BatchLoss::CrossEntropy(labels) => {
            let (v, d) = cross_entropy(out, labels)?;
            (v, d, end - 1)
        }
        BatchLoss::L2 { target, .. } => {
            let (v, d) = l2(out, target)?;
            (v, d, end)
        }
    };
    while top > lo {
        top -= 1;
        let k = top - lo;
        let need_input = top > lo;
        let layer = &net.layers()[top];
        let x = &activations[k];
        let g = &mut grads.layers[top];
        let train_here = is_trainable(top);
        let dx = match (layer, &caches[k]) {
            (Layer::Conv(bank), LayerCache::Conv(cols)) => {
                let r = conv_backward(x, bank, cols.as_deref(), &dy, need_input);
                if train_here {
                    g[0] = r.weights;
                    g[1] = r.bias;
                }
                r.input
            }
            (Layer::Scheme1(l), LayerCache::Scheme1(cache)) => {
                let r = l.backward_batch(x, cache, &dy, need_input);
                if train_here {
                    let mut p = 0;
                    for (v, h) in r.vertical.into_iter().zip(r.horizontal) {
                        g[p] = v;
                        g[p + 1] = h;
                        p += 2;
                    }
                    g[p] = r.coeffs;
                    g[p + 1] = r.bias;
                }
                r.input
            }
            (Layer::Scheme2(l), LayerCache::Scheme2(cache)) => {
                let r = l.backward_batch(x, cache, &dy, need_input);
                if train_here {
                    g[0] = r.first;
                    g[1] = r.second;
                    g[2] = r.bias;
                }
                r.input
            }
            (Layer::Maxout { group }, LayerCache::Maxout(arg)) => {
                need_input.then(|| maxout_backward(x, *group, arg, &dy))
            }
            (Layer::Dropout { .. }, LayerCache::Dropout(mask)) => need_input.then(|| {
                let mut d = dy.clone();
                for (v, &m) in d.data.iter_mut().zip(mask) {
                    *v *= m;
                }
                d
            }),
            (Layer::Dropout { .. }, LayerCache::Empty) => need_input.then(|| dy.clone()),
            (Layer::Softmax, _) => need_input.then(|| softmax_backward(&activations[k + 1], &dy)),
            _ => unreachable!("cache does not match layer"),
        };
        match dx {
            Some(d) => dy = d,
            None => break,
        }
    }
    Ok((value, grads))
}

fn cross_entropy<T: Scalar>(p: &Batch<T>, labels: &[usize]) -> Result<(f64, Batch<T>)> {
    let (c, b, _, _) = p.dims();
    let plane = p.plane();
    let len = p.channel_len();
    let mut d = p.clone();
    let mut loss = 0.0;
    for (bi, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::IndexOutOfRange { index: label, len: c });
        }
        for q in 0..plane {
            let idx = label * len + bi * plane + q;
            // Clamp zero probabilities but let NaN through.
            let prob = p.data[idx].to_f64();
            loss -= if prob < 1e-300 { 1e-300f64.ln() } else { prob.ln() };
            d.data[idx] -= T::one();
        }
    }
    debug_assert_eq!(b, labels.len());
    Ok((loss, d))
}

fn l2<T: Scalar>(out: &Batch<T>, target: &Batch<T>) -> Result<(f64, Batch<T>)> {
    if out.dims() != target.dims() {
        return Err(shape_err(format!("target dims {:?}, output dims {:?}", target.dims(), out.dims())));
    }
    let mut d = out.clone();
    let mut loss = 0.0;
    for (g, &t) in d.data.iter_mut().zip(&target.data) {
        let r = *g - t;
        loss += r.to_f64().powi(2);
        *g = r + r;
    }
    Ok((loss, d))
}

fn maxout_backward<T: Scalar>(x: &Batch<T>, g: usize, arg: &[u8], dy: &Batch<T>) -> Batch<T> {
    let len = x.channel_len();
    let mut dx = Batch::zeros(x.channels, x.batch, x.height, x.width);
    for j in 0..dy.channels {
        for p in 0..len {
            let k = arg[j * len + p] as usize;
            dx.data[(j * g + k) * len + p] = dy.data[j * len + p];
        }
    }
    dx
}

fn softmax_backward<T: Scalar>(p: &Batch<T>, dy: &Batch<T>) -> Batch<T> {
    let len = p.channel_len();
    let mut dx = dy.clone();
    for q in 0..len {
        let mut s = T::zero();
        for c in 0..p.channels {
            s += p.data[c * len + q] * dy.data[c * len + q];
        }
        for c in 0..p.channels {
            let i = c * len + q;
            dx.data[i] = p.data[i] * (dy.data[i] - s);
        }
    }
    dx
}
