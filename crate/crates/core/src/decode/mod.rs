//! Greedy decoding and evaluation metrics.

mod edit;
mod greedy;
mod metrics;
mod predict;

pub use edit::edit_distance;
pub use greedy::{default_max_len, greedy_decode, DecodeOptions, Decoded, MaxLen};
pub use metrics::{
    error_length_histogram, evaluate, parse_predictions, read_predictions, write_predictions,
    LengthBin, MetricsReport, Prediction,
};
pub use predict::{predict_examples, source_label};
