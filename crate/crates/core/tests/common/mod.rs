#![allow(dead_code)]

use lrcnn_core::lowrank::{Scheme1Layer, Scheme2Layer, SublayerOrder};
use lrcnn_core::network::{Layer, Network};
use lrcnn_core::tensor::{BasisBank, CoeffTensor, FeatureMap, FilterBank};
use lrcnn_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::of(v)
}

pub fn vec_of<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn map<T: Scalar>(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<T> {
    FeatureMap::from_fn(c, h, w, |_, _, _| normal(rng))
}

pub fn bank<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, c: usize, kh: usize, kw: usize) -> FilterBank<T> {
    FilterBank::from_fn(n, c, kh, kw, |_, _, _, _| normal(rng))
}

pub fn bank_with_bias<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, c: usize, kh: usize, kw: usize) -> FilterBank<T> {
    let b = bank(rng, n, c, kh, kw);
    let bias = vec_of(rng, n);
    b.with_bias(bias).unwrap()
}

pub fn scheme1<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, c: usize, m: usize, d: usize, shared: bool) -> Scheme1Layer<T> {
    let bases = (0..if shared { 1 } else { c })
        .map(|_| BasisBank::new(d, vec_of(rng, m * d), vec_of(rng, m * d)).unwrap())
        .collect();
    let coeffs = CoeffTensor::new(n, c, m, vec_of(rng, n * c * m)).unwrap();
    Scheme1Layer::new(bases, coeffs, vec_of(rng, n)).unwrap()
}

pub fn scheme2<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, c: usize, k: usize, d: usize, order: SublayerOrder) -> Scheme2Layer<T> {
    let (first, second) = match order {
        SublayerOrder::VerticalFirst => (bank(rng, k, c, d, 1), bank_with_bias(rng, n, k, 1, d)),
        SublayerOrder::HorizontalFirst => (bank(rng, k, c, 1, d), bank_with_bias(rng, n, k, d, 1)),
    };
    Scheme2Layer::new(first, second, order).unwrap()
}

/// A random valid network mixing every layer kind.
pub fn random_network(seed: u64) -> Network<f32> {
    let mut r = rng(seed);
    let mut shape = (r.random_range(1..=3), r.random_range(4..=10), r.random_range(4..=10));
    let input = shape;
    let mut layers = Vec::new();
    for _ in 0..r.random_range(0..=6) {
        let (c, h, w) = shape;
        let d_max = h.min(w).min(4);
        let layer = match r.random_range(0..6) {
            0 => {
                let (n, kh, kw) = (r.random_range(1..=6), r.random_range(1..=d_max), r.random_range(1..=d_max));
                Layer::Conv(bank_with_bias(&mut r, n, c, kh, kw))
            }
            1 => {
                let divisors: Vec<usize> = (1..=c).filter(|g| c % g == 0).collect();
                Layer::Maxout { group: divisors[r.random_range(0..divisors.len())] }
            }
            2 => Layer::Softmax,
            3 => Layer::Dropout { rate: r.random_range(0.0..0.9) },
            4 => {
                let (n, d) = (r.random_range(1..=5), r.random_range(1..=d_max));
                let (m, shared) = (r.random_range(1..=3), r.random_bool(0.5));
                Layer::Scheme1(scheme1(&mut r, n, c, m, d, shared))
            }
            _ => {
                let (n, d) = (r.random_range(1..=5), r.random_range(1..=d_max));
                let k = r.random_range(1..=(c * d).min(n * d));
                let order = if r.random_bool(0.5) { SublayerOrder::VerticalFirst } else { SublayerOrder::HorizontalFirst };
                Layer::Scheme2(scheme2(&mut r, n, c, k, d, order))
            }
        };
        shape = layer.output_shape(shape).unwrap();
        layers.push(layer);
    }
    let background = if r.random_bool(0.5) { Some(r.random_range(0..shape.0)) } else { None };
    Network::new(input, layers, background).unwrap()
}

pub fn rel_err<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&x, &y)| (x.to_f64() - y.to_f64()).powi(2)).sum();
    let den: f64 = a.iter().map(|&x| x.to_f64().powi(2)).sum();
    if num == 0.0 {
        0.0
    } else {
        (num / den.max(1e-300)).sqrt()
    }
}
