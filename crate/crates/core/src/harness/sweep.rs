use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::harness::metrics::{accuracy, output_error_at};
use crate::harness::timing::time_layer;
use crate::lowrank::{scheme2_init_svd_ordered, ApproxLayer, SublayerOrder};
use crate::network::{Layer, Network};
use crate::optim::{
    data_recon, joint_finetune, scheme1_filter_recon, DataReconConfig, DataReconTask, FeedMode, JointTask,
    Scheme1ReconConfig,
};
use crate::par::Execution;
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Column names of the curve CSV.
pub const CSV_HEADER: &str =
    "layer,scheme,capacity,optimizer,theoretical_speedup,measured_speedup,rel_error,accuracy,accuracy_drop_pp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeId {
    Scheme1,
    Scheme2,
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeId::Scheme1 => "scheme1",
            SchemeId::Scheme2 => "scheme2",
        })
    }
}

impl FromStr for SchemeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "scheme1" => Ok(SchemeId::Scheme1),
            "2" | "scheme2" => Ok(SchemeId::Scheme2),
            _ => Err(Error::InvalidArgument(format!("unknown scheme {s:?}"))),
        }
    }
}

/// How approximation parameters are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerId {
    /// Filter reconstruction only.
    Filter,
    /// Layer-wise data reconstruction fed by the original network.
    DataRef,
    /// Layer-wise data reconstruction fed by the already approximated layers.
    DataStacked,
    /// All approximated layers fine-tuned together.
    Joint,
}

impl fmt::Display for OptimizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerId::Filter => "filter",
            OptimizerId::DataRef => "data-ref",
            OptimizerId::DataStacked => "data-stacked",
            OptimizerId::Joint => "joint",
        })
    }
}

impl FromStr for OptimizerId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(OptimizerId::Filter),
            "data-ref" => Ok(OptimizerId::DataRef),
            "data-stacked" => Ok(OptimizerId::DataStacked),
            "joint" => Ok(OptimizerId::Joint),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?}"))),
        }
    }
}

/// Samples used for data reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputSource {
    /// The training inputs.
    #[default]
    Data,
    /// Unit Gaussian pixels instead of real inputs.
    Noise { count: usize, seed: u64 },
}

/// `count` images of independent standard-normal pixels.
pub fn gaussian_noise<T: Scalar>(shape: (usize, usize, usize), count: usize, seed: u64) -> Vec<FeatureMap<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            FeatureMap::from_fn(shape.0, shape.1, shape.2, |_, _, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                T::of(v)
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Convolutions to approximate, all at the same capacity.
    pub layers: Vec<usize>,
    pub scheme: SchemeId,
    pub capacities: Vec<usize>,
    pub optimizer: OptimizerId,
    pub order: SublayerOrder,
    pub scheme1: Scheme1ReconConfig,
    pub recon: DataReconConfig,
    pub source: InputSource,
    /// Timed runs per layer; zero skips timing and reports a measured speedup of NaN.
    pub timing_runs: usize,
    pub timing_warmup: usize,
    pub execution: Execution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            layers: Vec::new(),
            scheme: SchemeId::Scheme2,
            capacities: Vec::new(),
            optimizer: OptimizerId::Filter,
            order: SublayerOrder::VerticalFirst,
            scheme1: Scheme1ReconConfig::default(),
            recon: DataReconConfig::default(),
            source: InputSource::Data,
            timing_runs: 10,
            timing_warmup: 2,
            execution: Execution::default(),
        }
    }
}

/// Inputs for a sweep: reconstruction samples and a labeled test split.
#[derive(Debug, Clone, Copy)]
pub struct SweepData<'a, T> {
    pub train: &'a [FeatureMap<T>],
    pub test: &'a [FeatureMap<T>],
    pub test_labels: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub layer: String,
    pub scheme: SchemeId,
    pub capacity: usize,
    pub optimizer: OptimizerId,
    pub theoretical_speedup: f64,
    pub measured_speedup: f64,
    pub rel_error: f64,
    pub accuracy: f64,
    pub accuracy_drop_pp: f64,
}

fn filter_recon<T: Scalar>(
    reference: &Network<T>,
    layer: usize,
    scheme: SchemeId,
    capacity: usize,
    order: SublayerOrder,
    scheme1: &Scheme1ReconConfig,
) -> Result<ApproxLayer<T>> {
    let bank = match reference.layer(layer)? {
        Layer::Conv(b) => b,
        other => return Err(Error::InvalidArgument(format!("layer {layer} is {}, not a convolution", other.kind()))),
    };
    Ok(match scheme {
        SchemeId::Scheme1 => ApproxLayer::Scheme1(scheme1_filter_recon(bank, capacity, scheme1)?.layer),
        SchemeId::Scheme2 => ApproxLayer::Scheme2(scheme2_init_svd_ordered(bank, capacity, order)?.layer),
    })
}

/// Replaces each `(layer, capacity)` convolution of `reference` by an
/// approximation fitted with `optimizer`, processing layers in network order.
pub fn approximate_layers<T: Scalar>(
    reference: &Network<T>,
    targets: &[(usize, usize)],
    cfg: &SweepConfig,
    optimizer: OptimizerId,
    samples: &[FeatureMap<T>],
) -> Result<Network<T>> {
    let mut targets = targets.to_vec();
    targets.sort_unstable();
    if targets.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("layer selected twice".into()));
    }
    let mut net = reference.clone();
    for &(l, k) in &targets {
        let init = filter_recon(reference, l, cfg.scheme, k, cfg.order, &cfg.scheme1)?;
        let fitted = match optimizer {
            OptimizerId::Filter | OptimizerId::Joint => init,
            OptimizerId::DataRef | OptimizerId::DataStacked => {
                let feed = if optimizer == OptimizerId::DataRef { FeedMode::Reference } else { FeedMode::Stacked };
                let task = DataReconTask {
                    reference,
                    layer: l,
                    candidate: init,
                    feed,
                    stacked: Some(&net),
                    samples,
                    config: cfg.recon.clone(),
                };
                data_recon(&task)?.layer
            }
        };
        net.replace_layer(l, fitted.into())?;
    }
    if optimizer == OptimizerId::Joint && !targets.is_empty() {
        let task = JointTask { reference, approximated: &net, samples, config: cfg.recon.clone(), lr_scale: None };
        net = joint_finetune(&task)?.network;
    }
    Ok(net)
}

fn speedups<T: Scalar>(reference: &Network<T>, approx: &Network<T>, layers: &[usize], cfg: &SweepConfig) -> Result<(f64, f64)> {
    let (mut direct, mut cheap) = (0u64, 0u64);
    let (mut t_direct, mut t_cheap) = (0.0, 0.0);
    let a = approx.summary()?;
    for &l in layers {
        direct += a[l].direct_macs;
        cheap += a[l].macs;
        if cfg.timing_runs > 0 {
            let shape = reference.layer_input_shape(l)?;
            t_direct += time_layer(reference.layer(l)?, shape, cfg.timing_runs, cfg.timing_warmup)?.median;
            t_cheap += time_layer(approx.layer(l)?, shape, cfg.timing_runs, cfg.timing_warmup)?.median;
        }
    }
    let measured = if cfg.timing_runs > 0 { t_direct / t_cheap } else { f64::NAN };
    Ok((direct as f64 / cheap as f64, measured))
}

/// Approximates the selected layers at every capacity and measures
/// speedups, output error at the last selected layer, and test accuracy.
/// Rows come back in capacity order.
pub fn sweep_curve<T: Scalar>(net: &Network<T>, cfg: &SweepConfig, data: SweepData<'_, T>) -> Result<Vec<CurveRow>> {
    if cfg.layers.is_empty() {
        return Err(Error::InvalidArgument("no layers selected".into()));
    }
    let mut layers = cfg.layers.clone();
    layers.sort_unstable();
    let last = *layers.last().expect("nonempty");
    let noise;
    let samples = match cfg.source {
        InputSource::Data => data.train,
        InputSource::Noise { count, seed } => {
            noise = gaussian_noise(net.input_shape(), count, seed);
            &noise[..]
        }
    };
    let base = accuracy(net, data.test, data.test_labels, true, cfg.execution)?;
    let name = layers.iter().map(|&l| net.layer_name(l)).collect::<Vec<_>>().join("+");
    let mut rows = Vec::with_capacity(cfg.capacities.len());
    for &k in &cfg.capacities {
        let targets: Vec<(usize, usize)> = layers.iter().map(|&l| (l, k)).collect();
        let approx = approximate_layers(net, &targets, cfg, cfg.optimizer, samples)?;
        let (theoretical_speedup, measured_speedup) = speedups(net, &approx, &layers, cfg)?;
        let rel_error = output_error_at(net, &approx, last, data.test, cfg.execution)?;
        let acc = accuracy(&approx, data.test, data.test_labels, true, cfg.execution)?;
        rows.push(CurveRow {
            layer: name.clone(),
            scheme: cfg.scheme,
            capacity: k,
            optimizer: cfg.optimizer,
            theoretical_speedup,
            measured_speedup,
            rel_error,
            accuracy: acc,
            accuracy_drop_pp: 100.0 * (base - acc),
        });
    }
    Ok(rows)
}

/// `x` with six significant digits, `%g` style.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..6).contains(&exp) {
        trim(&format!("{:.*}", (5 - exp).max(0) as usize, x))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

/// Writes the header and one line per row.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.layer,
            r.scheme,
            r.capacity,
            r.optimizer,
            format_sig6(r.theoretical_speedup),
            format_sig6(r.measured_speedup),
            format_sig6(r.rel_error),
            format_sig6(r.accuracy),
            format_sig6(r.accuracy_drop_pp)
        )?;
    }
    Ok(())
}
