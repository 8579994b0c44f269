//! Road graphs, flow series and the supervised windows built from them.

mod features;
mod flows;
mod graph;
mod window;

pub use features::{engineer_features, FEATURES};
pub use flows::{impute_missing, load_flows, parse_flows, FlowDataset};
pub use graph::{load_edges, parse_edges, sample_neighbors, spatial_weights, Edge, NeighborSampler, NeighborSet, RoadGraph, SpatialWeights};
pub use window::{chronological_split, Batch, SampleIndex, Split, TimeRange, WindowConfig, WindowSample, Windower};
