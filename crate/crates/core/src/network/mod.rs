//! Layer stacks, forward and backward evaluation, SGD training and dense
//! sliding-window application.

mod backward;
mod dense;
pub(crate) mod forward;
mod layer;
mod model;
mod train;

pub(crate) use backward::{backward_batch, BatchLoss};
pub use backward::{backward, Gradients, LossSpec};
pub use dense::{dense_apply, dense_class_maps, ResponseMap};
pub use forward::{
    argmax, forward, forward_from, forward_to_layer, forward_to_layer_batch, maxout, predict,
    run_range_batch, softmax, ForwardOutput, Mode,
};
pub use layer::Layer;
pub use model::{
    random_bank, test_model, LayerSummary, Network, BACKGROUND_CLASS, CHARACTER_CLASSES,
    TEST_MODEL_CLASSES,
};
pub use train::{
    classification_accuracy, sgd_step, sgd_update, train, SgdState, TrainConfig, TrainReport,
};
