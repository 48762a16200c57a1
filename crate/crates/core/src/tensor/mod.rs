//! Feature-map and filter containers with exact valid-mode convolution.

mod conv;
pub mod counting;
mod feature_map;
mod filters;
pub(crate) mod separable;

pub(crate) use conv::{conv_backward, conv_forward};
pub use conv::{
    conv2d_per_channel, conv2d_valid, linear_combine, rearrange_bank, unrearrange_bank,
};
pub use feature_map::{Batch, FeatureMap};
pub use filters::{BasisBank, CoeffTensor, FilterBank};
