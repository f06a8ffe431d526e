//! Experiment runner for ancilla-assisted Rydberg tomography: configuration,
//! random layouts, rank studies, the reconstruction pipeline and reports.

pub mod config;
pub mod error;
pub mod graph;
pub mod parallel;
pub mod pipeline;
pub mod rank_study;
pub mod report;

pub use config::{preset, preset_names, Estimator, ExperimentConfig};
pub use error::{Result, TomoError};
pub use graph::{generate_random_graph, RandomGraphConfig};
pub use pipeline::{run_tomography_pipeline, PipelineOptions, PipelineOutput};
pub use rank_study::{run_rank_study, write_rank_csv, RankRow};
pub use report::{emit_report, load_report, ReconstructionReport};
