use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::network::forward::{run_layers, Mode};
use crate::network::{forward, Layer, Network};
use crate::scalar::Scalar;
use crate::tensor::{Batch, FeatureMap};

/// Wall-time statistics in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub runs: usize,
    pub warmup: usize,
    pub samples: Vec<f64>,
}

impl TimingStats {
    fn from_samples(samples: Vec<f64>, warmup: usize) -> Self {
        let n = samples.len();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        Self { median, mean, min: sorted[0], std: var.sqrt(), runs: n, warmup, samples }
    }
}

fn check_runs(runs: usize, warmup: usize) -> Result<()> {
    if runs < 5 || warmup < 1 {
        return Err(Error::InvalidArgument(format!("need runs >= 5 and warmup >= 1, got {runs} and {warmup}")));
    }
    Ok(())
}

/// Times `f` after `warmup` discarded calls.
pub fn time_fn<F: FnMut()>(runs: usize, warmup: usize, mut f: F) -> Result<TimingStats> {
    check_runs(runs, warmup)?;
    for _ in 0..warmup {
        f();
    }
    let samples = (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    Ok(TimingStats::from_samples(samples, warmup))
}

/// Times one layer on the given input. Evaluation runs on the calling thread.
pub fn time_layer_on<T: Scalar>(layer: &Layer<T>, input: &FeatureMap<T>, runs: usize, warmup: usize) -> Result<TimingStats> {
    check_runs(runs, warmup)?;
    let net = Network::new(input.shape(), vec![layer.clone()], None)?;
    let x = Batch::from_map(input);
    let mut failure = None;
    let stats = time_fn(runs, warmup, || {
        if let Err(e) = run_layers(&net, black_box(x.clone()), 0, 1, Mode::Eval, false).map(black_box) {
            failure = Some(e);
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}

/// Times one layer on a standard-normal input of `input_shape` drawn from a
/// fixed seed.
pub fn time_layer<T: Scalar>(
    layer: &Layer<T>,
    input_shape: (usize, usize, usize),
    runs: usize,
    warmup: usize,
) -> Result<TimingStats> {
    layer.output_shape(input_shape)?;
    let (c, h, w) = input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let x = FeatureMap::from_fn(c, h, w, |_, _, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::of(v)
    });
    time_layer_on(layer, &x, runs, warmup)
}

/// One row of a per-layer profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub name: String,
    pub kind: &'static str,
    /// Median time in milliseconds.
    pub ms: f64,
    /// Share of the summed medians.
    pub percent: f64,
}

/// Median forward time of every layer on the activations produced by `input`.
pub fn profile_network<T: Scalar>(net: &Network<T>, input: &FeatureMap<T>, runs: usize, warmup: usize) -> Result<Vec<ProfileRow>> {
    let acts = forward(net, input)?.activations;
    let mut rows = Vec::with_capacity(net.len());
    for (i, layer) in net.layers().iter().enumerate() {
        let s = time_layer_on(layer, &acts[i], runs, warmup)?;
        rows.push(ProfileRow { name: net.layer_name(i), kind: layer.kind(), ms: s.median, percent: 0.0 });
    }
    let total: f64 = rows.iter().map(|r| r.ms).sum();
    for r in &mut rows {
        r.percent = if total > 0.0 { 100.0 * r.ms / total } else { 100.0 / net.len() as f64 };
    }
    Ok(rows)
}
