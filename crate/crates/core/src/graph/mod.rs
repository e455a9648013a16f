//! Adjacency logits, the derived adjacency tensor, temperature re-scaling,
//! binarization and explicit cross derivation.

pub mod adjacency;
pub mod cross;
pub mod schedule;

pub use adjacency::{
    adjacency_on_tape, binarize, compute_adjacency, compute_independent_adjacency, compute_soft_adjacency,
    rescale, AdjLogits, AdjMode, AdjTensor, AdjacencyBuild, AdjacencyMode, AdjacencySnapshot, LogitSource,
    Thresholds, DEFAULT_THRESHOLD,
};
pub use cross::{
    dedupe_crosses, derive_cross_features, load_crosses_csv, read_crosses_csv, save_crosses_csv,
    write_crosses_csv, CrossFeature, CrossOptions,
};
pub use schedule::{ScheduleShape, TemperatureSchedule};
