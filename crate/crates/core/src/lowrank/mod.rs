//! Separable approximation layers, their exact cost model, and the SVD
//! factorization of Scheme 2.

mod cost;
mod factorize;
mod scheme1;
mod scheme2;

pub use cost::{
    flops_conv, flops_direct, flops_scheme1, flops_scheme1_nominal, flops_scheme2,
    flops_scheme2_ordered, max_rank_for_speedup, scheme1_forward_counted, scheme1_is_efficient,
    scheme2_forward_counted, CostReport,
};
pub(crate) use factorize::{layer_from_factors, oriented_matrix};
pub use factorize::{
    filter_residual, max_rank, scheme2_init_svd, scheme2_init_svd_ordered, SvdFactorization,
};
pub(crate) use scheme1::Scheme1Cache;
pub use scheme1::{scheme1_forward, Scheme1Layer};
pub(crate) use scheme2::Scheme2Cache;
pub use scheme2::{scheme2_forward, Scheme2Layer, SublayerOrder};

/// Either approximation structure.
#[derive(Debug, Clone, PartialEq)]
pub enum ApproxLayer<T = f32> {
    Scheme1(Scheme1Layer<T>),
    Scheme2(Scheme2Layer<T>),
}

impl<T: crate::Scalar> ApproxLayer<T> {
    pub fn effective_filters(&self) -> crate::tensor::FilterBank<T> {
        match self {
            ApproxLayer::Scheme1(l) => l.effective_filters(),
            ApproxLayer::Scheme2(l) => l.effective_filters(),
        }
    }

    pub fn forward(&self, z: &crate::tensor::FeatureMap<T>) -> crate::Result<crate::tensor::FeatureMap<T>> {
        match self {
            ApproxLayer::Scheme1(l) => l.forward(z),
            ApproxLayer::Scheme2(l) => l.forward(z),
        }
    }

    pub fn cost(&self, in_h: usize, in_w: usize) -> CostReport {
        match self {
            ApproxLayer::Scheme1(l) => l.cost(in_h, in_w),
            ApproxLayer::Scheme2(l) => l.cost(in_h, in_w),
        }
    }

    /// `M` for Scheme 1, `K` for Scheme 2.
    pub fn capacity(&self) -> usize {
        match self {
            ApproxLayer::Scheme1(l) => l.basis_size(),
            ApproxLayer::Scheme2(l) => l.rank(),
        }
    }
}

/// Effective dense filters of either scheme.
pub fn effective_filters<T: crate::Scalar>(layer: &ApproxLayer<T>) -> crate::tensor::FilterBank<T> {
    layer.effective_filters()
}
