use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::backward::{backward_batch, BatchLoss, Gradients};
use crate::network::forward::{argmax, predict, Mode};
use crate::network::Network;
use crate::par::{self, Execution};
use crate::scalar::Scalar;
use crate::tensor::{Batch, FeatureMap};

/// Mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Overrides the rate of every dropout layer when set.
    pub dropout: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without held-out improvement before the learning rate is cut.
    pub lr_patience: usize,
    /// Factor applied to the learning rate on each cut.
    pub lr_decay: f64,
    pub execution: Execution,
    /// Samples per gradient work item; fixed so results do not depend on thread count.
    pub chunk: usize,
    /// Rescales each mini-batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            dropout: None,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            lr_patience: 3,
            lr_decay: 0.5,
            execution: Execution::default(),
            chunk: 16,
            clip_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if let Some(r) = self.dropout {
            if !(0.0..1.0).contains(&r) {
                return bad("dropout rate must lie in [0, 1)");
            }
        }
        if self.batch_size == 0 || self.chunk == 0 {
            return bad("batch size and chunk must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning-rate decay must lie in (0, 1]");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

/// One momentum step: `v <- mu v - lr (g + decay p)`, `p <- p + v`.
pub fn sgd_update<T: Scalar>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: f64, momentum: f64, decay: f64) {
    assert!(param.len() == grad.len() && param.len() == velocity.len(), "sgd slices differ in length");
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(decay));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v - lr * (g + wd * *p);
        *p += *v;
    }
}

/// Momentum buffers shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T = f32> {
    pub velocity: Gradients<T>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self { velocity: Gradients::zeros(net) }
    }
}

/// Applies [`sgd_update`] to every layer with `trainable[i]` (all when `None`).
pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    state: &mut SgdState<T>,
    lr: f64,
    momentum: f64,
    decay: f64,
    trainable: Option<&[bool]>,
) {
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        if !trainable.map_or(true, |t| t[i]) {
            continue;
        }
        for ((p, g), v) in layer.params_mut().into_iter().zip(&grads.layers[i]).zip(&mut state.velocity.layers[i]) {
            sgd_update(p, g, v, lr, momentum, decay);
        }
    }
}

/// Per-epoch training history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean cross-entropy per sample.
    pub train_loss: Vec<f64>,
    /// Empty when no held-out set was given.
    pub heldout_accuracy: Vec<f64>,
    /// Learning rate used during each epoch.
    pub learning_rates: Vec<f64>,
}

/// Loss summed over a mini-batch and the summed gradients, computed in
/// fixed-size chunks and reduced in order.
pub(crate) fn minibatch_gradients<T: Scalar>(
    net: &Network<T>,
    inputs: &[FeatureMap<T>],
    labels: &[usize],
    indices: &[usize],
    seed: u64,
    chunk: usize,
    exec: Execution,
) -> Result<(f64, Gradients<T>)> {
    let pieces: Vec<&[usize]> = indices.chunks(chunk).collect();
    let parts = par::map_range(exec, pieces.len(), |k| -> Result<(f64, Gradients<T>)> {
        let idx = pieces[k];
        let x = Batch::gather(inputs, idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mode = Mode::Train { seed: seed.wrapping_add(k as u64).wrapping_mul(0xD134_2543_DE82_EF95) };
        backward_batch(net, x, BatchLoss::CrossEntropy(&y), mode, None)
    });
    let mut total = 0.0;
    let mut acc = Gradients::zeros(net);
    for p in parts {
        let (l, g) = p?;
        total += l;
        acc.add_assign(&g);
    }
    Ok((total, acc))
}

/// Fraction of samples whose most probable class equals the label.
pub fn classification_accuracy<T: Scalar>(
    net: &Network<T>,
    inputs: &[FeatureMap<T>],
    labels: &[usize],
    exec: Execution,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = predict(net, inputs, exec)?;
    let hits = probs.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count();
    Ok(hits as f64 / inputs.len() as f64)
}

/// Trains `net` in place with shuffled mini-batch SGD and cross-entropy loss.
///
/// The learning rate is multiplied by `lr_decay` whenever held-out accuracy
/// (or, without a held-out set, training loss) has not improved for
/// `lr_patience` epochs.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    inputs: &[FeatureMap<T>],
    labels: &[usize],
    heldout: Option<(&[FeatureMap<T>], &[usize])>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let classes = net.classes();
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange { index: l, len: classes });
    }
    if let Some(r) = cfg.dropout {
        net.set_dropout(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut state = SgdState::new(net);
    let mut report = TrainReport::default();
    let mut lr = cfg.learning_rate;
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let scale = |n: usize| T::of(1.0 / n as f64);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let seed = cfg.seed ^ ((epoch as u64) << 40) ^ ((bi as u64) << 8);
            let (loss, mut g) = minibatch_gradients(net, inputs, labels, batch, seed, cfg.chunk, cfg.execution)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            epoch_loss += loss;
            g.scale(scale(batch.len()));
            if let Some(c) = cfg.clip_norm {
                let norm = g.sq_norm().sqrt();
                if norm > c {
                    g.scale(T::of(c / norm));
                }
            }
            sgd_step(net, &g, &mut state, lr, cfg.momentum, cfg.weight_decay, None);
        }
        let mean_loss = epoch_loss / inputs.len() as f64;
        report.train_loss.push(mean_loss);
        report.learning_rates.push(lr);
        let score = match heldout {
            Some((hx, hy)) => {
                let a = classification_accuracy(net, hx, hy, cfg.execution)?;
                report.heldout_accuracy.push(a);
                a
            }
            None => -mean_loss,
        };
        if score > best {
            best = score;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.lr_patience {
                lr *= cfg.lr_decay;
                stale = 0;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{random_bank, Layer};

    #[test]
    fn sgd_update_examples() {
        let (mut p, mut v) = ([1.0f64], [0.0f64]);
        sgd_update(&mut p, &[0.0], &mut v, 1.0, 0.9, 0.0005);
        assert!((v[0] + 0.0005).abs() < 1e-15 && (p[0] - 0.9995).abs() < 1e-15);

        let (mut p, mut v) = ([3.0f64], [0.25f64]);
        sgd_update(&mut p, &[2.0], &mut v, 0.0, 0.0, 0.1);
        assert_eq!(p[0], 3.0);

        let (p0, g, lr) = (2.0f64, 0.3, 0.1);
        let (mut p, mut v) = ([p0], [0.0]);
        sgd_update(&mut p, &[g], &mut v, lr, 0.9, 0.0);
        sgd_update(&mut p, &[g], &mut v, lr, 0.9, 0.0);
        assert!((p[0] - (p0 - lr * g - lr * g * 1.9)).abs() < 1e-14);
    }

    fn toy_problem() -> (Network<f32>, Vec<FeatureMap<f32>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layers = vec![
            Layer::Conv(random_bank(&mut rng, 16, 1, 5, 5)),
            Layer::Maxout { group: 2 },
            Layer::Conv(random_bank(&mut rng, 4, 8, 4, 4)),
            Layer::Softmax,
        ];
        let net = Network::new((1, 8, 8), layers, None).unwrap();
        let normal = rand_distr::StandardNormal;
        let xs: Vec<FeatureMap<f32>> = (0..32)
            .map(|_| FeatureMap::from_fn(1, 8, 8, |_, _, _| rand_distr::Distribution::sample(&normal, &mut rng)))
            .collect();
        let ys = (0..32).map(|k| k % 4).collect();
        (net, xs, ys)
    }

    #[test]
    fn overfits_a_small_dataset() {
        let (mut net, xs, ys) = toy_problem();
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: 8, epochs: 200, seed: 3, weight_decay: 0.0, ..Default::default() };
        let r = train(&mut net, &xs, &ys, None, &cfg).unwrap();
        assert!(r.train_loss.last().unwrap() < &r.train_loss[0]);
        let acc = classification_accuracy(&net, &xs, &ys, Execution::Sequential).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (mut net, xs, ys) = toy_problem();
        let before = net.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 8, ..Default::default() };
        let r = train(&mut net, &xs, &ys, None, &cfg).unwrap();
        assert_eq!(net, before);
        assert!(r.train_loss.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9));
    }

    #[test]
    fn training_is_deterministic_across_execution_modes() {
        let (net, xs, ys) = toy_problem();
        let run = |exec| {
            let mut n = net.clone();
            let cfg = TrainConfig { epochs: 4, batch_size: 16, chunk: 4, execution: exec, seed: 5, ..Default::default() };
            let r = train(&mut n, &xs, &ys, Some((&xs, &ys)), &cfg).unwrap();
            (n, r)
        };
        let a = run(Execution::Sequential);
        let b = run(Execution::Sequential);
        let c = run(Execution::Parallel);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_bad_input() {
        let (mut net, xs, _) = toy_problem();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&mut net, &[], &[], None, &cfg), Err(Error::EmptyDataset)));
        let bad = vec![9; xs.len()];
        assert!(train(&mut net, &xs, &bad, None, &cfg).is_err());
        let cfg = TrainConfig { momentum: 1.0, ..Default::default() };
        assert!(train(&mut net, &xs, &vec![0; xs.len()], None, &cfg).is_err());
        let cfg = TrainConfig { clip_norm: Some(0.0), ..Default::default() };
        assert!(train(&mut net, &xs, &vec![0; xs.len()], None, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (mut net, mut xs, ys) = toy_problem();
        xs[5] = FeatureMap::from_fn(1, 8, 8, |_, _, _| f32::NAN);
        let cfg = TrainConfig { batch_size: 8, ..Default::default() };
        let r = train(&mut net, &xs, &ys, None, &cfg);
        assert!(matches!(r, Err(Error::Diverged { epoch: 0, .. })), "{r:?}");
    }

    #[test]
    fn clipping_bounds_the_first_step() {
        let (net, xs, ys) = toy_problem();
        let mut a = net.clone();
        let cfg = TrainConfig { learning_rate: 1.0, momentum: 0.0, weight_decay: 0.0, batch_size: 32, epochs: 1, clip_norm: Some(0.5), ..Default::default() };
        train(&mut a, &xs, &ys, None, &cfg).unwrap();
        let step: f64 = a
            .layers()
            .iter()
            .zip(net.layers())
            .flat_map(|(x, y)| x.params().into_iter().zip(y.params()).flat_map(|(p, q)| p.iter().zip(q).map(|(u, v)| ((u - v) as f64).powi(2)).collect::<Vec<_>>()))
            .sum::<f64>()
            .sqrt();
        assert!(step <= 0.5 + 1e-5, "step {step}");
    }
}
