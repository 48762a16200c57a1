use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lowrank::{Scheme1Cache, Scheme2Cache};
use crate::network::{Layer, Network};
use crate::par::{self, Execution};
use crate::scalar::Scalar;
use crate::tensor::{conv_forward, Batch, FeatureMap};

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Eval,
    /// Dropout masks are drawn from a generator seeded with `seed` and the layer index.
    Train { seed: u64 },
}

/// Result of a single-sample forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T = f32> {
    /// Output of the last layer, flattened.
    pub probabilities: Vec<T>,
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    /// Conv outputs are pre-activation; the following maxout holds the post-activation.
    pub activations: Vec<FeatureMap<T>>,
}

pub(crate) enum LayerCache<T> {
    Empty,
    Conv(Option<Vec<T>>),
    /// Winning channel offset inside its group, per output element.
    Maxout(Vec<u8>),
    /// Per-element scale: `0` or `1 / keep`.
    Dropout(Vec<T>),
    Scheme1(Scheme1Cache<T>),
    Scheme2(Scheme2Cache<T>),
}

pub(crate) struct Trace<T> {
    /// Input of layer `from` followed by every computed output.
    pub activations: Vec<Batch<T>>,
    pub caches: Vec<LayerCache<T>>,
}

fn dropout_rng(seed: u64, layer: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) fn maxout_batch<T: Scalar>(x: &Batch<T>, g: usize, keep: bool) -> Result<(Batch<T>, Vec<u8>)> {
    if g == 0 || x.channels % g != 0 || g > 256 {
        return Err(Error::BadGroupSize { group: g, channels: x.channels });
    }
    let len = x.channel_len();
    let oc = x.channels / g;
    let mut out = Batch::zeros(oc, x.batch, x.height, x.width);
    let mut arg = if keep { vec![0u8; oc * len] } else { Vec::new() };
    for j in 0..oc {
        let dst = &mut out.data[j * len..(j + 1) * len];
        dst.copy_from_slice(&x.data[j * g * len..(j * g + 1) * len]);
        for k in 1..g {
            let src = &x.data[(j * g + k) * len..(j * g + k + 1) * len];
            if keep {
                let a = &mut arg[j * len..(j + 1) * len];
                for ((d, &s), a) in dst.iter_mut().zip(src).zip(a.iter_mut()) {
                    if s > *d {
                        *d = s;
                        *a = k as u8;
                    }
                }
            } else {
                for (d, &s) in dst.iter_mut().zip(src) {
                    if s > *d {
                        *d = s;
                    }
                }
            }
        }
    }
    Ok((out, arg))
}

pub(crate) fn softmax_batch<T: Scalar>(x: &Batch<T>) -> Batch<T> {
    let len = x.channel_len();
    let c = x.channels;
    let mut out = x.clone();
    let mut col = vec![T::zero(); c];
    for p in 0..len {
        for (ci, v) in col.iter_mut().enumerate() {
            *v = x.data[ci * len + p];
        }
        softmax_in_place(&mut col);
        for (ci, &v) in col.iter().enumerate() {
            out.data[ci * len + p] = v;
        }
    }
    out
}

fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    if !out.is_empty() {
        softmax_in_place(&mut out);
    }
    out
}

/// Maximum over groups of `g` consecutive channels.
pub fn maxout<T: Scalar>(z: &FeatureMap<T>, g: usize) -> Result<FeatureMap<T>> {
    let (y, _) = maxout_batch(&Batch::from_map(z), g, false)?;
    Ok(FeatureMap::from_raw(y.channels, y.height, y.width, y.data))
}

/// Runs layers `from..to` on `x`. With `keep`, retains what backward needs.
pub(crate) fn run_layers<T: Scalar>(
    net: &Network<T>,
    x: Batch<T>,
    from: usize,
    to: usize,
    mode: Mode,
    keep: bool,
) -> Result<Trace<T>> {
    let mut activations = Vec::with_capacity(to - from + 1);
    let mut caches = Vec::with_capacity(to - from);
    activations.push(x);
    for i in from..to {
        let x = activations.last().expect("nonempty");
        let (y, cache) = apply_layer(&net.layers()[i], i, x, mode, keep).map_err(|e| match e {
            Error::ShapeMismatch(detail) => Error::LayerShapeMismatch { index: i, detail },
            other => other,
        })?;
        activations.push(y);
        caches.push(cache);
    }
    Ok(Trace { activations, caches })
}

fn apply_layer<T: Scalar>(
    layer: &Layer<T>,
    index: usize,
    x: &Batch<T>,
    mode: Mode,
    keep: bool,
) -> Result<(Batch<T>, LayerCache<T>)> {
    Ok(match layer {
        Layer::Conv(bank) => {
            let (y, cols) = conv_forward(x, bank, keep)?;
            (y, LayerCache::Conv(cols))
        }
        Layer::Maxout { group } => {
            let (y, arg) = maxout_batch(x, *group, keep)?;
            (y, LayerCache::Maxout(arg))
        }
        Layer::Softmax => (softmax_batch(x), LayerCache::Empty),
        Layer::Dropout { rate } => match mode {
            Mode::Train { seed } if *rate > 0.0 => {
                let keep_p = 1.0 - rate;
                let scale = T::of(1.0 / keep_p);
                let mut rng = dropout_rng(seed, index);
                let mask: Vec<T> = (0..x.data.len())
                    .map(|_| if rng.random::<f64>() < keep_p { scale } else { T::zero() })
                    .collect();
                let mut y = x.clone();
                for (v, &m) in y.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                (y, if keep { LayerCache::Dropout(mask) } else { LayerCache::Empty })
            }
            _ => (x.clone(), LayerCache::Empty),
        },
        Layer::Scheme1(l) => {
            let (y, c) = l.forward_batch(x, keep)?;
            (y, c.map_or(LayerCache::Empty, LayerCache::Scheme1))
        }
        Layer::Scheme2(l) => {
            let (y, c) = l.forward_batch(x, keep)?;
            (y, c.map_or(LayerCache::Empty, LayerCache::Scheme2))
        }
    })
}

fn check_input<T: Scalar>(net: &Network<T>, shape: (usize, usize, usize)) -> Result<()> {
    if shape != net.input_shape() {
        return Err(Error::LayerShapeMismatch {
            index: 0,
            detail: format!("input shape {shape:?}, network expects {:?}", net.input_shape()),
        });
    }
    Ok(())
}

fn to_map<T: Scalar>(b: Batch<T>) -> FeatureMap<T> {
    FeatureMap::from_raw(b.channels, b.height, b.width, b.data)
}

/// Evaluates the whole network on one sample.
pub fn forward<T: Scalar>(net: &Network<T>, x: &FeatureMap<T>) -> Result<ForwardOutput<T>> {
    check_input(net, x.shape())?;
    let trace = run_layers(net, Batch::from_map(x), 0, net.len(), Mode::Eval, false)?;
    let activations: Vec<FeatureMap<T>> = trace.activations.into_iter().map(to_map).collect();
    let probabilities = activations.last().expect("input present").data().to_vec();
    Ok(ForwardOutput { probabilities, activations })
}

/// Output of layer `l` (inclusive).
pub fn forward_to_layer<T: Scalar>(net: &Network<T>, x: &FeatureMap<T>, l: usize) -> Result<FeatureMap<T>> {
    if l >= net.len() {
        return Err(Error::IndexOutOfRange { index: l, len: net.len() });
    }
    check_input(net, x.shape())?;
    let mut t = run_layers(net, Batch::from_map(x), 0, l + 1, Mode::Eval, false)?;
    Ok(to_map(t.activations.pop().expect("output")))
}

/// Runs layers `l..` on `z`, the input of layer `l`.
pub fn forward_from<T: Scalar>(net: &Network<T>, z: &FeatureMap<T>, l: usize) -> Result<FeatureMap<T>> {
    if l > net.len() {
        return Err(Error::IndexOutOfRange { index: l, len: net.len() });
    }
    let mut t = run_layers(net, Batch::from_map(z), l, net.len(), Mode::Eval, false)?;
    Ok(to_map(t.activations.pop().expect("output")))
}

/// Outputs of layer `l` for many samples, evaluated in chunks.
pub fn forward_to_layer_batch<T: Scalar>(
    net: &Network<T>,
    inputs: &[FeatureMap<T>],
    l: usize,
    exec: Execution,
) -> Result<Vec<FeatureMap<T>>> {
    run_range_batch(net, inputs, 0, l + 1, exec)
}

/// Runs layers `from..to` on many samples, evaluated in chunks.
pub fn run_range_batch<T: Scalar>(
    net: &Network<T>,
    inputs: &[FeatureMap<T>],
    from: usize,
    to: usize,
    exec: Execution,
) -> Result<Vec<FeatureMap<T>>> {
    if to > net.len() || from > to {
        return Err(Error::IndexOutOfRange { index: to, len: net.len() });
    }
    const CHUNK: usize = 32;
    let chunks: Vec<&[FeatureMap<T>]> = inputs.chunks(CHUNK).collect();
    let parts = par::map(exec, &chunks, |c| -> Result<Vec<FeatureMap<T>>> {
        let mut t = run_layers(net, Batch::from_maps(c)?, from, to, Mode::Eval, false)?;
        Ok(t.activations.pop().expect("output").to_maps())
    });
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Class distributions for many samples.
pub fn predict<T: Scalar>(net: &Network<T>, inputs: &[FeatureMap<T>], exec: Execution) -> Result<Vec<Vec<T>>> {
    if let Some(x) = inputs.first() {
        check_input(net, x.shape())?;
    }
    let out = run_range_batch(net, inputs, 0, net.len(), exec)?;
    Ok(out.into_iter().map(|m| m.into_data()).collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::test_model;
    use crate::tensor::FilterBank;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0f64, 0.0]);
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[1] - 0.5).abs() < 1e-15);
        let s = softmax(&[2f64.ln(), 0.0]);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12 && (s[1] - 1.0 / 3.0).abs() < 1e-12);
        let s = softmax(&[1000.0f64, -1000.0]);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn maxout_examples() {
        let z = FeatureMap::<f32>::new(4, 1, 1, vec![1.0, 5.0, 2.0, 3.0]).unwrap();
        assert_eq!(maxout(&z, 2).unwrap().data(), &[5.0, 3.0]);
        assert_eq!(maxout(&z, 1).unwrap(), z);
        assert_eq!(maxout(&z, 4).unwrap().data(), &[5.0]);
        assert!(matches!(maxout(&z, 3), Err(Error::BadGroupSize { .. })));
    }

    #[test]
    fn test_model_shapes_and_zero_weights() {
        let net = test_model::<f32>(3, 0.5);
        let x = FeatureMap::from_fn(1, 24, 24, |_, u, v| ((u * 7 + v * 3) % 5) as f32 - 2.0);
        let out = forward(&net, &x).unwrap();
        let shapes: Vec<_> = out.activations.iter().map(|a| a.shape()).collect();
        assert_eq!(shapes[1], (96, 16, 16));
        assert_eq!(shapes[2], (48, 16, 16));
        assert_eq!(shapes[4], (128, 8, 8));
        assert_eq!(shapes[5], (64, 8, 8));
        assert_eq!(shapes[7], (512, 1, 1));
        assert_eq!(shapes[8], (128, 1, 1));
        assert_eq!(shapes[10], (148, 1, 1));
        assert_eq!(shapes[11], (37, 1, 1));
        let total: f32 = out.probabilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);

        let mut zero = net.clone();
        for l in zero.layers_mut() {
            for p in l.params_mut() {
                p.fill(0.0);
            }
        }
        let p = forward(&zero, &x).unwrap().probabilities;
        assert!(p.iter().all(|&v| (v - 1.0 / 37.0).abs() < 1e-7));
    }

    #[test]
    fn wrong_input_shape_is_reported() {
        let net = test_model::<f32>(3, 0.5);
        let x = FeatureMap::<f32>::zeros(1, 20, 24);
        assert!(matches!(forward(&net, &x), Err(Error::LayerShapeMismatch { index: 0, .. })));
        assert!(matches!(
            forward_to_layer(&net, &FeatureMap::zeros(1, 24, 24), 12),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn tiny_net_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let w1 = FilterBank::from_fn(4, 2, 3, 3, |_, _, _, _| g()).with_bias(vec![g(), g(), g(), g()]).unwrap();
        let w2 = FilterBank::from_fn(3, 2, 4, 4, |_, _, _, _| g()).with_bias(vec![g(), g(), g()]).unwrap();
        let net = Network::new(
            (2, 6, 6),
            vec![Layer::Conv(w1.clone()), Layer::Maxout { group: 2 }, Layer::Conv(w2.clone()), Layer::Softmax],
            None,
        )
        .unwrap();
        let x = FeatureMap::from_fn(2, 6, 6, |_, _, _| g());

        let mut h = [[[0.0f64; 4]; 4]; 4];
        for (n, hn) in h.iter_mut().enumerate() {
            for (u, row) in hn.iter_mut().enumerate() {
                for (v, out) in row.iter_mut().enumerate() {
                    let mut s = w1.bias()[n];
                    for c in 0..2 {
                        for i in 0..3 {
                            for j in 0..3 {
                                s += w1.weight(n, c, i, j) * x.get(c, u + i, v + j);
                            }
                        }
                    }
                    *out = s;
                }
            }
        }
        let mut m = [[[0.0f64; 4]; 4]; 2];
        for c in 0..2 {
            for u in 0..4 {
                for v in 0..4 {
                    m[c][u][v] = h[2 * c][u][v].max(h[2 * c + 1][u][v]);
                }
            }
        }
        let mut logits = [0.0f64; 3];
        for (n, l) in logits.iter_mut().enumerate() {
            *l = w2.bias()[n];
            for c in 0..2 {
                for i in 0..4 {
                    for j in 0..4 {
                        *l += w2.weight(n, c, i, j) * m[c][i][j];
                    }
                }
            }
        }
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p = forward(&net, &x).unwrap().probabilities;
        for n in 0..3 {
            assert!((p[n] - logits[n].exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_to_layer_composes() {
        let net = test_model::<f64>(5, 0.5);
        let x = FeatureMap::from_fn(1, 24, 24, |_, u, v| ((u * 3 + v) % 7) as f64 / 7.0 - 0.5);
        let full = forward(&net, &x).unwrap();
        for l in [0, 3, 6, 9] {
            let z = forward_to_layer(&net, &x, l).unwrap();
            assert_eq!(z, full.activations[l + 1]);
            let rest = forward_from(&net, &z, l + 1).unwrap();
            for (a, b) in rest.data().iter().zip(&full.probabilities) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let last = forward_to_layer(&net, &x, net.len() - 1).unwrap();
        assert_eq!(last.data(), &full.probabilities[..]);
    }

    #[test]
    fn batched_prediction_matches_single() {
        let net = test_model::<f32>(2, 0.5);
        let xs: Vec<_> = (0..40)
            .map(|k| FeatureMap::from_fn(1, 24, 24, |_, u, v| ((u * k + v) % 11) as f32 / 11.0))
            .collect();
        let seq = predict(&net, &xs, Execution::Sequential).unwrap();
        let par = predict(&net, &xs, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        let single = forward(&net, &xs[17]).unwrap().probabilities;
        for (a, b) in single.iter().zip(&seq[17]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let net = Network::<f64>::new((4, 2, 2), vec![Layer::Dropout { rate: 0.5 }], None).unwrap();
        let x = Batch::from_map(&FeatureMap::from_fn(4, 2, 2, |_, _, _| 1.0));
        let eval = run_layers(&net, x.clone(), 0, 1, Mode::Eval, false).unwrap();
        assert_eq!(eval.activations[1], x);
        let t = run_layers(&net, x.clone(), 0, 1, Mode::Train { seed: 1 }, false).unwrap();
        assert!(t.activations[1].data.iter().all(|&v| v == 0.0 || v == 2.0));
        let t2 = run_layers(&net, x, 0, 1, Mode::Train { seed: 1 }, false).unwrap();
        assert_eq!(t.activations[1], t2.activations[1]);
    }
}
