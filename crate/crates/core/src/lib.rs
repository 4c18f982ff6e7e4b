//! Deterministic federated-learning simulator built around grouped
//! sequential-to-parallel training.
//!
//! * [`datagen`]: synthetic non-i.i.d. client tasks.
//! * [`mcf`]: exact integral minimum-cost flow.
//! * [`grouping`]: balanced clustering and inter-cluster group assembly.
//! * [`trainer`]: local models, mini-batch SGD, evaluation.
//! * [`orchestrator`]: growth schedules, rounds, baselines, checkpoints.
//! * [`metrics`]: class-probability distance and cost models.
//! * [`config`] and [`runner`]: experiment files, outputs and the CLI verbs.

pub mod config;
pub mod datagen;
pub mod grouping;
pub mod mcf;
pub mod metrics;
pub mod orchestrator;
pub mod rng;
pub mod runner;
pub mod trainer;

pub use datagen::{ClassDistribution, ClientDataset, Skew, SyntheticTaskSpec};
pub use grouping::{GroupingPlan, IcgOutcome};
pub use orchestrator::{Algorithm, ExperimentConfig, GrowthFunction, GrowthKind, RoundRecord};
pub use trainer::{ModelParams, ModelSpec, SgdConfig};
