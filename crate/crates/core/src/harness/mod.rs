//! Timing, profiling, accuracy and reconstruction-error measurement, and
//! speedup sweeps.

mod metrics;
mod sweep;
mod timing;

pub use metrics::{accuracy, accuracy_from_scores, layer_output_error, output_error_at, relative_error};
pub use sweep::{
    approximate_layers, format_sig6, gaussian_noise, sweep_curve, write_curve_csv, CurveRow, InputSource,
    OptimizerId, SchemeId, SweepConfig, SweepData, CSV_HEADER,
};
pub use timing::{profile_network, time_fn, time_layer, time_layer_on, ProfileRow, TimingStats};
