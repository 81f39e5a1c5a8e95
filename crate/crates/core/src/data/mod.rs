//! Dataset loading, geometry, normalization, windowing, splitting and synthesis.

mod dataset;
mod geometry;
mod norm;
mod split;
mod synth;
mod window;

pub use dataset::{
    benchmark, load_dataset, read_coordinates, read_distances, read_observations, write_coordinates,
    write_observations, DatasetInfo, Geometry, GeometryKind, SeriesDataset, BENCHMARKS,
};
pub use geometry::{distance_matrix, gaussian_adjacency, mean_distance, validate_distances, DistanceMetric};
pub use norm::{zscore, NormStats, ZScoreMode, SIGMA_FLOOR};
pub use split::{split_dataset, SplitPart, SplitSpec, Splits};
pub use synth::{synth_generate, SynthOutput, SynthSpec};
pub use window::{make_windows, window_count, WindowSet};
