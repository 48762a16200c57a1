use crate::error::{shape_err, Error, Result};
use crate::network::{predict, run_range_batch, Layer, Network};
use crate::par::Execution;
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// `sqrt(sum ||a_i - b_i||^2) / sqrt(sum ||a_i||^2)`, accumulated in `f64`.
/// Zero when both sides vanish.
pub fn relative_error<T: Scalar>(reference: &[FeatureMap<T>], approx: &[FeatureMap<T>]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if reference.len() != approx.len() {
        return Err(shape_err(format!("{} reference outputs vs {} approximations", reference.len(), approx.len())));
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (a, b) in reference.iter().zip(approx) {
        if a.shape() != b.shape() {
            return Err(shape_err(format!("output {:?} vs {:?}", a.shape(), b.shape())));
        }
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let (x, y) = (x.to_f64(), y.to_f64());
            num += (x - y) * (x - y);
            den += x * x;
        }
    }
    Ok(if num == 0.0 { 0.0 } else { (num / den).sqrt() })
}

/// Relative Frobenius error between two layers' pre-activation outputs over
/// the given layer inputs.
pub fn layer_output_error<T: Scalar>(
    orig: &Layer<T>,
    approx: &Layer<T>,
    samples: &[FeatureMap<T>],
    exec: Execution,
) -> Result<f64> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let a = Network::new(first.shape(), vec![orig.clone()], None)?;
    let b = Network::new(first.shape(), vec![approx.clone()], None)?;
    if a.shapes()? != b.shapes()? {
        return Err(shape_err("layers produce different output shapes"));
    }
    relative_error(&run_range_batch(&a, samples, 0, 1, exec)?, &run_range_batch(&b, samples, 0, 1, exec)?)
}

/// Relative error of layer `layer`'s output when both networks are fed the
/// same raw inputs, so upstream approximations contribute too.
pub fn output_error_at<T: Scalar>(
    reference: &Network<T>,
    approx: &Network<T>,
    layer: usize,
    samples: &[FeatureMap<T>],
    exec: Execution,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let a = run_range_batch(reference, samples, 0, layer + 1, exec)?;
    let b = run_range_batch(approx, samples, 0, layer + 1, exec)?;
    relative_error(&a, &b)
}

/// Fraction of samples whose highest score is the label. With `exclude`,
/// that class is dropped from both the prediction and the ground truth.
/// Ties go to the lowest class index.
pub fn accuracy_from_scores<T: Scalar>(scores: &[Vec<T>], labels: &[usize], exclude: Option<usize>) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(shape_err(format!("{} score vectors for {} labels", scores.len(), labels.len())));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (s, &label) in scores.iter().zip(labels) {
        if Some(label) == exclude {
            continue;
        }
        let mut best: Option<(usize, T)> = None;
        for (k, &v) in s.iter().enumerate() {
            if Some(k) == exclude {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        total += 1;
        hits += usize::from(best.map(|(k, _)| k) == Some(label));
    }
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(hits as f64 / total as f64)
}

/// Classification accuracy of `net`. With `ignore_background`, the
/// network's background class is excluded from prediction and ground truth.
pub fn accuracy<T: Scalar>(
    net: &Network<T>,
    inputs: &[FeatureMap<T>],
    labels: &[usize],
    ignore_background: bool,
    exec: Execution,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != labels.len() {
        return Err(shape_err(format!("{} inputs for {} labels", inputs.len(), labels.len())));
    }
    let exclude = if ignore_background { net.background() } else { None };
    let scores = predict(net, inputs, exec)?;
    accuracy_from_scores(&scores, labels, exclude)
}
