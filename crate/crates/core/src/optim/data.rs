//! Output-reconstruction training of approximation layers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::lowrank::ApproxLayer;
use crate::network::{backward_batch, run_range_batch, sgd_update, BatchLoss, Gradients, Layer, Mode, Network, SgdState};
use crate::par::{self, Execution};
use crate::scalar::Scalar;
use crate::tensor::{Batch, FeatureMap};

/// Where the approximation layer's inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedMode {
    /// Outputs of the original network up to the previous layer.
    #[default]
    Reference,
    /// Outputs of a network whose earlier layers are already approximated.
    Stacked,
}

/// SGD settings for reconstruction training.
#[derive(Debug, Clone, PartialEq)]
pub struct DataReconConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Also fine-tune the copied bias.
    pub train_bias: bool,
    pub execution: Execution,
    /// Samples per gradient work item.
    pub chunk: usize,
}

impl Default for DataReconConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            train_bias: true,
            execution: Execution::default(),
            chunk: 16,
        }
    }
}

impl DataReconConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) || !(self.learning_rate >= 0.0) || self.batch_size == 0 || self.chunk == 0 {
            return Err(Error::InvalidArgument("need momentum in [0,1), lr >= 0, positive batch and chunk".into()));
        }
        Ok(())
    }
}

/// One layer-wise reconstruction problem.
#[derive(Debug, Clone)]
pub struct DataReconTask<'a, T> {
    pub reference: &'a Network<T>,
    /// Index of the convolution being replaced.
    pub layer: usize,
    pub candidate: ApproxLayer<T>,
    pub feed: FeedMode,
    /// Network with earlier approximations in place; required for [`FeedMode::Stacked`].
    pub stacked: Option<&'a Network<T>>,
    pub samples: &'a [FeatureMap<T>],
    pub config: DataReconConfig,
}

#[derive(Debug, Clone)]
pub struct DataReconResult<T> {
    /// Parameters with the lowest objective seen.
    pub layer: ApproxLayer<T>,
    /// Best objective so far, at start and after every epoch.
    pub trace: Vec<f64>,
    /// Objective at start and after every epoch.
    pub objectives: Vec<f64>,
}

/// Inputs and pre-activation targets of layer `l` for every sample.
pub struct ReconPairs<T> {
    pub inputs: Vec<FeatureMap<T>>,
    pub targets: Vec<FeatureMap<T>>,
}

/// Builds `(input, target)` pairs for layer `layer`: targets are the
/// reference network's layer output, inputs come from `feed_net`.
pub fn recon_pairs<T: Scalar>(
    reference: &Network<T>,
    feed_net: &Network<T>,
    layer: usize,
    samples: &[FeatureMap<T>],
    exec: Execution,
) -> Result<ReconPairs<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if layer >= reference.len() {
        return Err(Error::IndexOutOfRange { index: layer, len: reference.len() });
    }
    let ref_inputs = if layer == 0 { samples.to_vec() } else { run_range_batch(reference, samples, 0, layer, exec)? };
    let targets = run_range_batch(reference, &ref_inputs, layer, layer + 1, exec)?;
    let inputs = if std::ptr::eq(reference, feed_net) || layer == 0 {
        ref_inputs
    } else {
        run_range_batch(feed_net, samples, 0, layer, exec)?
    };
    Ok(ReconPairs { inputs, targets })
}

/// Mean over samples and output positions of the squared error summed over
/// output channels.
pub fn recon_objective<T: Scalar>(
    net: &Network<T>,
    inputs: &[FeatureMap<T>],
    targets: &[FeatureMap<T>],
    exec: Execution,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outs = run_range_batch(net, inputs, 0, net.len(), exec)?;
    let mut total = 0.0;
    for (o, t) in outs.iter().zip(targets) {
        if o.shape() != t.shape() {
            return Err(shape_err(format!("target shape {:?}, output shape {:?}", t.shape(), o.shape())));
        }
        total += o.data().iter().zip(t.data()).map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2)).sum::<f64>();
    }
    let plane = targets[0].height() * targets[0].width();
    Ok(total / (inputs.len() * plane) as f64)
}

struct Fitted<T> {
    net: Network<T>,
    trace: Vec<f64>,
    objectives: Vec<f64>,
}

/// Minimizes the reconstruction objective of `net`'s last output over the
/// layers marked trainable, keeping the best iterate.
fn fit_subnet<T: Scalar>(
    mut net: Network<T>,
    inputs: &[FeatureMap<T>],
    targets: &[FeatureMap<T>],
    trainable: &[bool],
    lr_scale: &[f64],
    cfg: &DataReconConfig,
) -> Result<Fitted<T>> {
    cfg.validate()?;
    let out_layer = net.len() - 1;
    let plane = targets[0].height() * targets[0].width();
    let exec = cfg.execution;
    let mut best = recon_objective(&net, inputs, targets, exec)?;
    let mut best_net = net.clone();
    let mut trace = vec![best];
    let mut objectives = vec![best];
    let mut state = SgdState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let pieces: Vec<&[usize]> = batch.chunks(cfg.chunk).collect();
            let net_ref = &net;
            let parts = par::map(exec, &pieces, |idx| -> Result<Gradients<T>> {
                let x = Batch::gather(inputs, idx)?;
                let t = Batch::gather(targets, idx)?;
                let loss = BatchLoss::L2 { layer: out_layer, target: &t };
                Ok(backward_batch(net_ref, x, loss, Mode::Eval, Some(trainable))?.1)
            });
            let mut g = Gradients::zeros(&net);
            for p in parts {
                g.add_assign(&p?);
            }
            g.scale(T::of(1.0 / (batch.len() * plane) as f64));
            for (i, layer) in net.layers_mut().iter_mut().enumerate() {
                if !trainable[i] {
                    continue;
                }
                let mut params = layer.params_mut();
                let slices = if cfg.train_bias { params.len() } else { params.len() - 1 };
                for (k, p) in params.iter_mut().enumerate().take(slices) {
                    sgd_update(p, &g.layers[i][k], &mut state.velocity.layers[i][k], cfg.learning_rate * lr_scale[i], cfg.momentum, 0.0);
                }
            }
        }
        let obj = recon_objective(&net, inputs, targets, exec)?;
        objectives.push(obj);
        if !obj.is_finite() {
            break;
        }
        if obj < best {
            best = obj;
            best_net = net.clone();
        }
        trace.push(best);
    }
    Ok(Fitted { net: best_net, trace, objectives })
}

/// Trains an approximation layer to reproduce the original layer's
/// pre-activation outputs on the task samples.
pub fn data_recon<T: Scalar>(task: &DataReconTask<'_, T>) -> Result<DataReconResult<T>> {
    let reference = task.reference;
    let l = task.layer;
    match reference.layer(l)? {
        Layer::Conv(_) => {}
        other => return Err(Error::InvalidArgument(format!("layer {l} is {}, not a convolution", other.kind()))),
    }
    let feed_net = match task.feed {
        FeedMode::Reference => reference,
        FeedMode::Stacked => task
            .stacked
            .ok_or_else(|| Error::InvalidArgument("stacked feeding needs the partially approximated network".into()))?,
    };
    let input_shape = reference.layer_input_shape(l)?;
    let candidate: Layer<T> = task.candidate.clone().into();
    let want = reference.layer(l)?.output_shape(input_shape)?;
    if candidate.output_shape(input_shape)? != want {
        return Err(shape_err("candidate layer does not match the target layer's shape"));
    }
    let pairs = recon_pairs(reference, feed_net, l, task.samples, task.config.execution)?;
    let sub = Network::new(input_shape, vec![candidate], None)?;
    let fitted = fit_subnet(sub, &pairs.inputs, &pairs.targets, &[true], &[1.0], &task.config)?;
    let layer = fitted.net.layers()[0].as_approximation().expect("approximation layer");
    Ok(DataReconResult { layer, trace: fitted.trace, objectives: fitted.objectives })
}

/// Joint reconstruction of every approximation layer in `approximated`.
#[derive(Debug, Clone)]
pub struct JointTask<'a, T> {
    pub reference: &'a Network<T>,
    /// The reference network with some convolutions replaced by approximations.
    pub approximated: &'a Network<T>,
    pub samples: &'a [FeatureMap<T>],
    pub config: DataReconConfig,
    /// Learning-rate multiplier per approximation layer, in network order;
    /// zero freezes a layer. Defaults to all ones.
    pub lr_scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct JointResult<T> {
    pub network: Network<T>,
    pub trace: Vec<f64>,
    pub objectives: Vec<f64>,
}

/// Fine-tunes all approximation layers together so the approximated network
/// reproduces the reference network's output at the last approximated layer.
pub fn joint_finetune<T: Scalar>(task: &JointTask<'_, T>) -> Result<JointResult<T>> {
    let (reference, approx) = (task.reference, task.approximated);
    if reference.shapes()? != approx.shapes()? || reference.input_shape() != approx.input_shape() {
        return Err(shape_err("approximated network does not match the reference shapes"));
    }
    let idx: Vec<usize> = (0..approx.len()).filter(|&i| approx.layers()[i].is_approximation()).collect();
    let (&lo, &hi) = match (idx.first(), idx.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidArgument("no approximation layers to fine-tune".into())),
    };
    let scales = task.lr_scale.clone().unwrap_or_else(|| vec![1.0; idx.len()]);
    if scales.len() != idx.len() {
        return Err(Error::InvalidArgument(format!("{} learning-rate scales for {} layers", scales.len(), idx.len())));
    }
    if task.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let exec = task.config.execution;
    let inputs = if lo == 0 { task.samples.to_vec() } else { run_range_batch(approx, task.samples, 0, lo, exec)? };
    let targets = run_range_batch(reference, task.samples, 0, hi + 1, exec)?;
    let sub = Network::new(approx.layer_input_shape(lo)?, approx.layers()[lo..=hi].to_vec(), None)?;
    let mut trainable = vec![false; sub.len()];
    let mut lr_scale = vec![0.0; sub.len()];
    for (&i, &s) in idx.iter().zip(&scales) {
        trainable[i - lo] = s > 0.0;
        lr_scale[i - lo] = s;
    }
    let fitted = fit_subnet(sub, &inputs, &targets, &trainable, &lr_scale, &task.config)?;
    let mut network = approx.clone();
    for (k, layer) in fitted.net.layers().iter().enumerate() {
        network.layers_mut()[lo + k] = layer.clone();
    }
    Ok(JointResult { network, trace: fitted.trace, objectives: fitted.objectives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::{max_rank, scheme2_init_svd};
    use crate::network::random_bank;
    use crate::optim::{scheme2_filter_recon_als, AlsConfig};
    use rand_distr::{Distribution, StandardNormal};

    fn small_net(seed: u64) -> Network<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            Layer::Conv(random_bank(&mut rng, 6, 2, 3, 3)),
            Layer::Maxout { group: 2 },
            Layer::Conv(random_bank(&mut rng, 4, 3, 3, 3)),
            Layer::Maxout { group: 2 },
            Layer::Conv(random_bank(&mut rng, 4, 2, 3, 3)),
        ];
        Network::new((2, 9, 9), layers, None).unwrap()
    }

    fn samples(n: usize, seed: u64) -> Vec<FeatureMap<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| FeatureMap::from_fn(2, 9, 9, |_, _, _| StandardNormal.sample(&mut rng))).collect()
    }

    fn bank_of(net: &Network<f64>, l: usize) -> crate::tensor::FilterBank<f64> {
        net.layers()[l].effective_filters().unwrap()
    }

    #[test]
    fn exact_candidate_stays_exact() {
        let net = small_net(1);
        let xs = samples(20, 2);
        let b = bank_of(&net, 2);
        let exact = scheme2_init_svd(&b, max_rank(&b)).unwrap().layer;
        let task = DataReconTask {
            reference: &net,
            layer: 2,
            candidate: ApproxLayer::Scheme2(exact),
            feed: FeedMode::Reference,
            stacked: None,
            samples: &xs,
            config: DataReconConfig { epochs: 5, batch_size: 8, ..Default::default() },
        };
        let r = data_recon(&task).unwrap();
        assert!(r.trace[0] <= 1e-8);
        assert!(*r.trace.last().unwrap() <= 1e-8);
    }

    #[test]
    fn trace_never_increases_from_filter_reconstruction() {
        let net = small_net(3);
        let xs = samples(40, 4);
        let b = bank_of(&net, 2);
        let init = scheme2_filter_recon_als(&b, 2, &AlsConfig::default()).unwrap().layer;
        let task = DataReconTask {
            reference: &net,
            layer: 2,
            candidate: ApproxLayer::Scheme2(init),
            feed: FeedMode::Reference,
            stacked: None,
            samples: &xs,
            config: DataReconConfig { epochs: 15, batch_size: 8, learning_rate: 0.01, ..Default::default() },
        };
        let r = data_recon(&task).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.trace.last().unwrap() < &r.trace[0]);
    }

    /// Full-batch momentum descent with central-difference gradients.
    fn fd_descent(layer: &Layer<f64>, x: &FeatureMap<f64>, t: &FeatureMap<f64>, lr: f64, mu: f64, steps: usize) -> f64 {
        let shape = x.shape();
        let objective = |l: &Layer<f64>| {
            let net = Network::new(shape, vec![l.clone()], None).unwrap();
            recon_objective(&net, std::slice::from_ref(x), std::slice::from_ref(t), Execution::Sequential).unwrap()
        };
        let mut cur = layer.clone();
        let sizes: Vec<usize> = cur.params().iter().map(|p| p.len()).collect();
        let mut vel: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let eps = 1e-6;
        for _ in 0..steps {
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for (s, g) in grads.iter_mut().enumerate() {
                for (k, gk) in g.iter_mut().enumerate() {
                    let mut p = cur.clone();
                    p.params_mut()[s][k] += eps;
                    let mut m = cur.clone();
                    m.params_mut()[s][k] -= eps;
                    *gk = (objective(&p) - objective(&m)) / (2.0 * eps);
                }
            }
            for (s, p) in cur.params_mut().into_iter().enumerate() {
                for (k, pk) in p.iter_mut().enumerate() {
                    vel[s][k] = mu * vel[s][k] - lr * grads[s][k];
                    *pk += vel[s][k];
                }
            }
        }
        objective(&cur)
    }

    #[test]
    fn single_sample_matches_finite_difference_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let conv = random_bank(&mut rng, 3, 2, 3, 3);
        let net = Network::new((2, 5, 5), vec![Layer::Conv(conv.clone())], None).unwrap();
        let x = FeatureMap::from_fn(2, 5, 5, |_, _, _| StandardNormal.sample(&mut rng));
        let init = scheme2_init_svd(&conv, 1).unwrap().layer;
        let (lr, epochs) = (0.02, 25);
        let task = DataReconTask {
            reference: &net,
            layer: 0,
            candidate: ApproxLayer::Scheme2(init.clone()),
            feed: FeedMode::Reference,
            stacked: None,
            samples: std::slice::from_ref(&x),
            config: DataReconConfig { epochs, batch_size: 1, learning_rate: lr, ..Default::default() },
        };
        let r = data_recon(&task).unwrap();
        let t = crate::network::forward_to_layer(&net, &x, 0).unwrap();
        let oracle = fd_descent(&Layer::Scheme2(init), &x, &t, lr, 0.9, epochs);
        let ours = *r.objectives.last().unwrap();
        assert!((ours - oracle).abs() <= 1e-3 * oracle.abs().max(1e-12), "ours {ours} oracle {oracle}");
    }

    /// Replaces `layers` by rank-`k` factorizations; `k = 0` means full rank.
    fn approximate(net: &Network<f64>, layers: &[usize], k: usize) -> Network<f64> {
        let mut out = net.clone();
        for &l in layers {
            let b = bank_of(net, l);
            let k = if k == 0 { max_rank(&b) } else { k };
            out.replace_layer(l, Layer::Scheme2(scheme2_init_svd(&b, k).unwrap().layer)).unwrap();
        }
        out
    }

    #[test]
    fn joint_exact_layers_stay_exact() {
        let net = small_net(5);
        let xs = samples(16, 6);
        let approx = approximate(&net, &[2, 4], 0);
        let task = JointTask {
            reference: &net,
            approximated: &approx,
            samples: &xs,
            config: DataReconConfig { epochs: 3, batch_size: 8, ..Default::default() },
            lr_scale: None,
        };
        let r = joint_finetune(&task).unwrap();
        assert!(*r.trace.last().unwrap() <= 1e-8);
    }

    #[test]
    fn joint_beats_stacked_layerwise() {
        let net = small_net(7);
        let xs = samples(60, 8);
        let approx = approximate(&net, &[2, 4], 1);
        let cfg = DataReconConfig { epochs: 10, batch_size: 10, learning_rate: 0.005, ..Default::default() };
        // Layer-wise: conv2 against reference inputs, then conv3 on stacked inputs.
        let first = data_recon(&DataReconTask {
            reference: &net,
            layer: 2,
            candidate: approx.layers()[2].as_approximation().unwrap(),
            feed: FeedMode::Reference,
            stacked: None,
            samples: &xs,
            config: cfg.clone(),
        })
        .unwrap();
        let mut stacked = approx.clone();
        stacked.replace_layer(2, first.layer.clone().into()).unwrap();
        let second = data_recon(&DataReconTask {
            reference: &net,
            layer: 4,
            candidate: approx.layers()[4].as_approximation().unwrap(),
            feed: FeedMode::Stacked,
            stacked: Some(&stacked),
            samples: &xs,
            config: cfg.clone(),
        })
        .unwrap();
        stacked.replace_layer(4, second.layer.into()).unwrap();
        let pairs = recon_pairs(&net, &net, 4, &xs, Execution::Sequential).unwrap();
        let end = |n: &Network<f64>| {
            let outs = run_range_batch(n, &xs, 0, 5, Execution::Sequential).unwrap();
            outs.iter()
                .zip(&pairs.targets)
                .map(|(o, t)| o.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>()
        };
        let layerwise = end(&stacked);
        let joint = joint_finetune(&JointTask { reference: &net, approximated: &stacked, samples: &xs, config: cfg, lr_scale: None }).unwrap();
        assert!(end(&joint.network) <= layerwise + 1e-12);
        assert!(joint.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn freezing_one_layer_reduces_to_layerwise() {
        let net = small_net(9);
        let xs = samples(24, 10);
        let approx = approximate(&net, &[2, 4], 1);
        let cfg = DataReconConfig { epochs: 4, batch_size: 8, learning_rate: 0.005, ..Default::default() };
        let joint = joint_finetune(&JointTask {
            reference: &net,
            approximated: &approx,
            samples: &xs,
            config: cfg.clone(),
            lr_scale: Some(vec![0.0, 1.0]),
        })
        .unwrap();
        assert_eq!(joint.network.layers()[2], approx.layers()[2]);
        let single = data_recon(&DataReconTask {
            reference: &net,
            layer: 4,
            candidate: approx.layers()[4].as_approximation().unwrap(),
            feed: FeedMode::Stacked,
            stacked: Some(&approx),
            samples: &xs,
            config: cfg,
        })
        .unwrap();
        for (a, b) in joint.objectives.iter().zip(&single.objectives) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_tasks() {
        let net = small_net(1);
        let xs = samples(4, 2);
        let b = bank_of(&net, 2);
        let cand = ApproxLayer::Scheme2(scheme2_init_svd(&b, 1).unwrap().layer);
        let mut task = DataReconTask {
            reference: &net,
            layer: 1,
            candidate: cand.clone(),
            feed: FeedMode::Reference,
            stacked: None,
            samples: &xs,
            config: DataReconConfig::default(),
        };
        assert!(data_recon(&task).is_err());
        task.layer = 0;
        assert!(data_recon(&task).is_err());
        task.layer = 2;
        task.samples = &[];
        assert!(matches!(data_recon(&task), Err(Error::EmptyDataset)));
        task.samples = &xs;
        task.feed = FeedMode::Stacked;
        assert!(data_recon(&task).is_err());
    }
}
