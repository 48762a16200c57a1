//! Fitting approximation layers: filter reconstruction for both schemes and
//! data reconstruction, layer-wise or joint.

mod als;
mod basis;
mod data;
mod svt;

pub use als::{scheme2_filter_recon_als, AlsConfig, AlsInit, AlsResult};
pub use basis::{
    scheme1_filter_recon, scheme1_filter_recon_auto, Scheme1Recon, Scheme1ReconConfig, LAMBDA_GRID,
};
pub use data::{
    data_recon, joint_finetune, recon_objective, recon_pairs, DataReconConfig, DataReconResult,
    DataReconTask, FeedMode, JointResult, JointTask, ReconPairs,
};
pub use svt::{nuclear_norm, svt};
