pub mod config;
pub mod gmeans;
pub mod graph;
pub mod labeler;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod relatedness;
pub mod scheduler;
pub mod sparse;
pub mod taxonomy;
