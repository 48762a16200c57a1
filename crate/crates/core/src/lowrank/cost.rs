//! Exact multiply-accumulate counts for direct and approximated layers.

use crate::error::Result;
use crate::lowrank::{Scheme1Layer, Scheme2Layer, SublayerOrder};
use crate::scalar::Scalar;
use crate::tensor::counting::{
    conv2d_counted, linear_combine_counted, per_channel_counted, MacCounter,
};
use crate::tensor::FeatureMap;

/// MAC count of one (possibly approximated) layer against its direct form.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// MACs of the direct convolution being replaced.
    pub direct_macs: u64,
    /// Exact MACs of this evaluation.
    pub macs: u64,
    /// Constant-free asymptotic form of the approximation cost.
    pub asymptotic_macs: u64,
    /// Per-sublayer breakdown, summing to `macs`.
    pub parts: Vec<(&'static str, u64)>,
    /// Wall-clock speedup, when measured by the harness.
    pub measured_speedup: Option<f64>,
}

impl CostReport {
    pub fn theoretical_speedup(&self) -> f64 {
        self.direct_macs as f64 / self.macs as f64
    }

    /// The speedup as a reduced fraction `direct / approx`.
    pub fn speedup_ratio(&self) -> (u64, u64) {
        let g = gcd(self.direct_macs, self.macs);
        (self.direct_macs / g, self.macs / g)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// `N * C * d^2 * H' * W'`.
pub fn flops_direct(n: usize, c: usize, d: usize, out_h: usize, out_w: usize) -> u64 {
    flops_conv(n, c, d, d, out_h, out_w)
}

/// `N * C * kh * kw * H' * W'` for rectangular kernels.
pub fn flops_conv(n: usize, c: usize, kh: usize, kw: usize, out_h: usize, out_w: usize) -> u64 {
    [n, c, kh, kw, out_h, out_w].iter().map(|&x| x as u64).product()
}

/// Scheme-1 count with the convention that each separable pass costs `d`
/// MACs per final output pixel: `M*C*2d*H'*W' + N*C*M*H'*W'`.
///
/// This is the nominal figure; the executable count is
/// [`flops_scheme1`], whose vertical pass runs over the full input width.
pub fn flops_scheme1_nominal(m: usize, c: usize, d: usize, n: usize, out_h: usize, out_w: usize) -> u64 {
    let (m, c, d, n, p) = (m as u64, c as u64, d as u64, n as u64, (out_h * out_w) as u64);
    m * c * 2 * d * p + n * c * m * p
}

/// Exact Scheme-1 count for an `in_h x in_w` input: vertical pass
/// `M*C*d*H'*W`, horizontal pass `M*C*d*H'*W'`, recombination `N*C*M*H'*W'`.
pub fn flops_scheme1(m: usize, c: usize, d: usize, n: usize, in_h: usize, in_w: usize) -> CostReport {
    let (oh, ow) = (in_h + 1 - d, in_w + 1 - d);
    let u = |x: usize| x as u64;
    let vertical = u(m) * u(c) * u(d) * u(oh) * u(in_w);
    let horizontal = u(m) * u(c) * u(d) * u(oh) * u(ow);
    let combine = u(n) * u(c) * u(m) * u(oh) * u(ow);
    CostReport {
        direct_macs: flops_direct(n, c, d, oh, ow),
        macs: vertical + horizontal + combine,
        asymptotic_macs: u(m) * u(c) * (u(d) + u(n)) * u(oh) * u(ow),
        parts: vec![("vertical", vertical), ("horizontal", horizontal), ("combine", combine)],
        measured_speedup: None,
    }
}

/// Scheme 1 is only worthwhile when `M` is well below `d * min(d, N)`.
pub fn scheme1_is_efficient(m: usize, d: usize, n: usize) -> bool {
    m < d * d.min(n)
}

/// Exact Scheme-2 count, vertical-first: `K*C*d*H'*W + N*K*d*H'*W'`.
pub fn flops_scheme2(k: usize, n: usize, c: usize, d: usize, in_h: usize, in_w: usize) -> CostReport {
    flops_scheme2_ordered(k, n, c, d, in_h, in_w, SublayerOrder::VerticalFirst)
}

/// Exact Scheme-2 count for either sublayer order. Horizontal-first costs
/// `K*C*d*H*W' + N*K*d*H'*W'`.
pub fn flops_scheme2_ordered(
    k: usize,
    n: usize,
    c: usize,
    d: usize,
    in_h: usize,
    in_w: usize,
    order: SublayerOrder,
) -> CostReport {
    let (oh, ow) = (in_h + 1 - d, in_w + 1 - d);
    let u = |x: usize| x as u64;
    let first = match order {
        SublayerOrder::VerticalFirst => u(k) * u(c) * u(d) * u(oh) * u(in_w),
        SublayerOrder::HorizontalFirst => u(k) * u(c) * u(d) * u(in_h) * u(ow),
    };
    let second = u(n) * u(k) * u(d) * u(oh) * u(ow);
    CostReport {
        direct_macs: flops_direct(n, c, d, oh, ow),
        macs: first + second,
        asymptotic_macs: u(k) * (u(n) + u(c)) * u(d) * u(oh) * u(ow),
        parts: vec![("first", first), ("second", second)],
        measured_speedup: None,
    }
}

impl<T: Scalar> Scheme1Layer<T> {
    pub fn cost(&self, in_h: usize, in_w: usize) -> CostReport {
        flops_scheme1(self.basis_size(), self.channels(), self.kernel_size(), self.filters(), in_h, in_w)
    }
}

impl<T: Scalar> Scheme2Layer<T> {
    pub fn cost(&self, in_h: usize, in_w: usize) -> CostReport {
        flops_scheme2_ordered(
            self.rank(),
            self.filters(),
            self.channels(),
            self.kernel_size(),
            in_h,
            in_w,
            self.order(),
        )
    }
}

/// Scheme-1 forward through the instrumented loop kernels.
pub fn scheme1_forward_counted<T: Scalar>(
    layer: &Scheme1Layer<T>,
    z: &FeatureMap<T>,
    counter: &mut MacCounter,
) -> Result<FeatureMap<T>> {
    let maps = per_channel_counted(z, layer.bases(), counter)?;
    linear_combine_counted(&maps, layer.coeffs(), layer.bias(), counter)
}

/// Scheme-2 forward through the instrumented loop kernels.
pub fn scheme2_forward_counted<T: Scalar>(
    layer: &Scheme2Layer<T>,
    z: &FeatureMap<T>,
    counter: &mut MacCounter,
) -> Result<FeatureMap<T>> {
    let mid = conv2d_counted(z, layer.first(), counter)?;
    conv2d_counted(&mid, layer.second(), counter)
}

/// Largest Scheme-2 rank whose theoretical speedup is at least `target`,
/// or `None` when even `K = 1` falls short.
pub fn max_rank_for_speedup(
    n: usize,
    c: usize,
    d: usize,
    in_h: usize,
    in_w: usize,
    target: f64,
) -> Option<usize> {
    let kmax = (c * d).min(n * d);
    (1..=kmax)
        .rev()
        .find(|&k| flops_scheme2(k, n, c, d, in_h, in_w).theoretical_speedup() >= target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_examples() {
        assert_eq!(flops_direct(128, 48, 9, 8, 8), 31_850_496);
        assert_eq!(flops_direct(1, 1, 1, 1, 1), 1);
        assert_eq!(flops_direct(256, 48, 9, 8, 8), 2 * 31_850_496);
    }

    #[test]
    fn scheme1_examples() {
        assert_eq!(flops_scheme1_nominal(1, 1, 1, 1, 1, 1), 3);
        assert_eq!(flops_scheme1_nominal(8, 48, 9, 128, 8, 8), 442_368 + 3_145_728);
        assert_eq!(flops_scheme1_nominal(8, 48, 9, 128, 8, 8), 3_588_096);
        // d = 1 has no wide intermediate, so exact and nominal agree.
        assert_eq!(flops_scheme1(1, 1, 1, 1, 1, 1).macs, 3);
        let r = flops_scheme1(8, 48, 9, 128, 16, 16);
        assert_eq!(r.parts[0].1, 8 * 48 * 9 * 8 * 16);
        assert_eq!(r.parts[1].1, 8 * 48 * 9 * 8 * 8);
        assert_eq!(r.macs, 3_809_280);
        assert!(scheme1_is_efficient(8, 9, 128));
        assert!(!scheme1_is_efficient(81, 9, 128));
        assert!(!scheme1_is_efficient(12, 9, 1));
    }

    #[test]
    fn scheme2_examples() {
        let r = flops_scheme2(31, 128, 48, 9, 16, 16);
        assert_eq!(r.parts, vec![("first", 1_714_176), ("second", 2_285_568)]);
        assert_eq!(r.macs, 3_999_744);
        assert_eq!(r.direct_macs, 31_850_496);
        assert!((r.theoretical_speedup() - 7.963).abs() < 0.001);
        assert_eq!(flops_scheme2(1, 1, 1, 1, 1, 1).macs, 2);
        let one = flops_scheme2(1, 128, 48, 9, 16, 16).macs;
        assert_eq!(flops_scheme2(7, 128, 48, 9, 16, 16).macs, 7 * one);
    }

    #[test]
    fn speedup_ratio_is_reduced() {
        let r = flops_scheme2(31, 128, 48, 9, 16, 16);
        let (a, b) = r.speedup_ratio();
        assert_eq!(a as f64 / b as f64, r.theoretical_speedup());
        assert_eq!(gcd(a, b), 1);
    }

    #[test]
    fn rank_for_speedup() {
        let k = max_rank_for_speedup(128, 48, 9, 16, 16, 7.96).unwrap();
        assert_eq!(k, 31);
        assert!(max_rank_for_speedup(1, 1, 1, 1, 1, 1.0).is_none());
    }
}
