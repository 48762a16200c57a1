use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lrcnn_core::harness::{
    accuracy, approximate_layers, format_sig6, gaussian_noise, profile_network, sweep_curve, write_curve_csv,
    InputSource, OptimizerId, SchemeId, SweepConfig, SweepData,
};
use lrcnn_core::io::{
    atomic_write, generate_glyphs, load_dataset, load_model, normalize_patch, read_pgm, save_dataset, save_model,
    Dataset, Split,
};
use lrcnn_core::network::{dense_apply, test_model, train as fit, Network, TrainConfig};
use lrcnn_core::optim::DataReconConfig;
use lrcnn_core::tensor::FeatureMap;
use lrcnn_core::Execution;

use crate::{Approximate, Bench, Curve, Detmap, Eval, GenData, Inspect, ReconArgs, Train};

const THREADS_VAR: &str = "LRCNN_THREADS";

/// Sizes the worker pool from `LRCNN_THREADS` (default 1).
pub fn init_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(v) => v.trim().parse::<usize>().with_context(|| format!("{THREADS_VAR}={v:?} is not a thread count"))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global().context("starting worker threads")?;
    Ok(())
}

fn model(path: &Path) -> Result<Network<f32>> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn split(tag: &str) -> Result<Split> {
    Ok(match tag {
        "train" => Split::Train,
        "test" => Split::Test,
        _ => bail!("split must be train or test, got {tag:?}"),
    })
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(|p| p.trim().parse::<usize>().with_context(|| format!("bad number {p:?}"))).collect()
}

pub fn gen_data(a: GenData) -> Result<()> {
    if a.per_class == 0 {
        bail!("--per-class must be at least 1");
    }
    let ds = generate_glyphs(a.seed, a.per_class, a.background_fraction, split(&a.split)?);
    save_dataset(&a.out, &ds)?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

pub fn train(a: Train) -> Result<()> {
    let data = dataset(&a.data)?;
    let heldout = a.heldout.as_deref().map(dataset).transpose()?;
    let mut net = test_model::<f32>(a.seed, a.dropout);
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        batch_size: a.batch_size,
        execution: Execution::Parallel,
        ..Default::default()
    };
    let held = heldout.as_ref().map(|h| (&h.samples[..], &h.labels[..]));
    let report = fit(&mut net, &data.samples, &data.labels, held, &cfg)?;
    let mut log = String::from("epoch,train_loss,heldout_accuracy,learning_rate\n");
    for (e, loss) in report.train_loss.iter().enumerate() {
        let acc = report.heldout_accuracy.get(e).map_or(String::new(), |&x| format_sig6(x));
        let lr = format_sig6(report.learning_rates[e]);
        writeln!(log, "{},{},{acc},{lr}", e + 1, format_sig6(*loss))?;
        println!("epoch {:>3}  loss {:.6}  lr {lr}{}", e + 1, loss, if acc.is_empty() { String::new() } else { format!("  heldout {acc}") });
    }
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        p.into()
    });
    save_model(&a.out, &net)?;
    atomic_write(&log_path, log.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: Eval) -> Result<()> {
    let net = model(&a.model)?;
    let data = dataset(&a.data)?;
    let acc = accuracy(&net, &data.samples, &data.labels, true, Execution::Parallel)?;
    println!("accuracy {acc:.6}");
    Ok(())
}

fn recon_config(r: &ReconArgs) -> DataReconConfig {
    DataReconConfig {
        learning_rate: r.recon_lr,
        epochs: r.recon_epochs,
        seed: r.recon_seed,
        execution: Execution::Parallel,
        ..Default::default()
    }
}

/// Resolves layer names, refusing the first and last convolutions unless forced.
fn resolve_layers(net: &Network<f32>, names: &str, force: bool) -> Result<Vec<usize>> {
    let convs: Vec<usize> = (0..net.len()).filter(|&i| net.layers()[i].is_conv_like()).collect();
    let mut out = Vec::new();
    for name in names.split(',').map(str::trim) {
        let i = net.layer_index(name)?;
        if !convs.contains(&i) {
            bail!("layer {name} is not a convolution");
        }
        let edge = convs.first() == Some(&i) || convs.last() == Some(&i);
        if edge && !force {
            bail!("refusing to approximate {name}: only inner convolutions are approximated (pass --force to override)");
        }
        out.push(i);
    }
    Ok(out)
}

fn sweep_config(scheme: &str, optimizer: &str, recon: &ReconArgs) -> Result<SweepConfig> {
    Ok(SweepConfig {
        scheme: scheme.parse::<SchemeId>()?,
        optimizer: optimizer.parse::<OptimizerId>()?,
        recon: recon_config(recon),
        execution: Execution::Parallel,
        ..Default::default()
    })
}

pub fn approximate(a: Approximate) -> Result<()> {
    let net = model(&a.model)?;
    let layers = resolve_layers(&net, &a.layer, a.force)?;
    let caps = parse_list(&a.capacity)?;
    let caps = match caps.len() {
        1 => vec![caps[0]; layers.len()],
        n if n == layers.len() => caps,
        n => bail!("{n} capacities for {} layers", layers.len()),
    };
    let cfg = sweep_config(&a.scheme, &a.optimizer, &a.recon)?;
    let samples = match (cfg.optimizer, &a.data) {
        (OptimizerId::Filter, _) => Vec::new(),
        (_, Some(p)) => dataset(p)?.truncated(a.recon.samples).samples,
        (_, None) => bail!("optimizer {} needs --data", cfg.optimizer),
    };
    let targets: Vec<(usize, usize)> = layers.into_iter().zip(caps).collect();
    let approx = approximate_layers(&net, &targets, &cfg, cfg.optimizer, &samples)?;
    save_model(&a.out, &approx)?;
    let (macs, direct) = approx.total_macs()?;
    println!("wrote {}  MACs {macs} (direct {direct}, speedup {:.4})", a.out.display(), direct as f64 / macs as f64);
    Ok(())
}

pub fn bench(a: Bench) -> Result<()> {
    let net = model(&a.model)?;
    let x = gaussian_noise::<f32>(net.input_shape(), 1, 0).remove(0);
    let rows = profile_network(&net, &x, a.runs, a.warmup)?;
    println!("{:<10} {:<8} {:>12} {:>8}", "layer", "kind", "median_ms", "share");
    for r in &rows {
        println!("{:<10} {:<8} {:>12.4} {:>7.1}%", r.name, r.kind, r.ms, r.percent);
    }
    println!("{:<10} {:<8} {:>12.4} {:>7.1}%", "total", "", rows.iter().map(|r| r.ms).sum::<f64>(), 100.0);
    Ok(())
}

pub fn curve(a: Curve) -> Result<()> {
    let net = model(&a.model)?;
    let mut cfg = sweep_config(&a.scheme, &a.optimizer, &a.recon)?;
    cfg.layers = resolve_layers(&net, &a.layer, a.force)?;
    cfg.capacities = parse_list(&a.capacities)?;
    cfg.timing_runs = a.runs;
    cfg.timing_warmup = a.warmup;
    if let Some(count) = a.noise_probe {
        cfg.source = InputSource::Noise { count, seed: a.recon.recon_seed };
    }
    let train = dataset(&a.data)?.truncated(a.recon.samples);
    let test = match &a.test {
        Some(p) => dataset(p)?,
        None => dataset(&a.data)?,
    };
    let rows = sweep_curve(&net, &cfg, SweepData { train: &train.samples, test: &test.samples, test_labels: &test.labels })?;
    let mut csv = Vec::new();
    write_curve_csv(&rows, &mut csv)?;
    atomic_write(&a.out, &csv)?;
    print!("{}", String::from_utf8(csv)?);
    Ok(())
}

pub fn detmap(a: Detmap) -> Result<()> {
    let net = model(&a.model)?;
    let img = read_pgm(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let (c, h, w) = img.shape();
    let mut data = img.into_data();
    normalize_patch(&mut data);
    let img = FeatureMap::new(c, h, w, data)?;
    let map = dense_apply(&net, &img, Execution::Parallel)?;
    let mut csv = String::new();
    for u in 0..map.height {
        let row: Vec<String> = (0..map.width).map(|v| format_sig6(map.get(u, v) as f64)).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    atomic_write(&a.out, csv.as_bytes())?;
    println!("wrote {}x{} map to {}", map.height, map.width, a.out.display());
    Ok(())
}

pub fn inspect(a: Inspect) -> Result<()> {
    let net = model(&a.model)?;
    let (c, h, w) = net.input_shape();
    println!("input {c}x{h}x{w}, {} classes, background {:?}", net.classes(), net.background());
    println!("{:<10} {:<8} {:>12} {:>12} {:>10} {:>12} {:>12}", "layer", "kind", "input", "output", "params", "macs", "direct_macs");
    let shape = |s: (usize, usize, usize)| format!("{}x{}x{}", s.0, s.1, s.2);
    for s in net.summary()? {
        println!(
            "{:<10} {:<8} {:>12} {:>12} {:>10} {:>12} {:>12}",
            s.name,
            s.kind,
            shape(s.input),
            shape(s.output),
            s.params,
            s.macs,
            s.direct_macs
        );
    }
    let (macs, direct) = net.total_macs()?;
    println!("total params {}  MACs {macs}  direct {direct}  speedup {:.4}", net.param_count(), direct as f64 / macs as f64);
    Ok(())
}
