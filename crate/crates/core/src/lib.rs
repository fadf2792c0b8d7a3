//! Value-of-information fidelity selection for cost-aware question
//! answering.
//!
//! A [`bank::PredictorBank`] estimates, from question text alone, the
//! probability that a downstream model answers correctly at each input
//! fidelity. [`policy`] turns those estimates and the acquisition costs of
//! [`cost_model`] into a routing decision, and [`harness`] evaluates routing
//! policies under question-level cross-validation.

pub mod bank;
pub mod boosted_trees;
pub mod calibration;
pub mod corpus;
pub mod cost_model;
mod error;
pub mod features;
pub mod harness;
pub mod policy;
pub mod synthworld;

pub use bank::{train_bank, CalibrationMethod, Calibrator, FeaturizerConfig, ModelArtifacts, PredictorBank};
pub use boosted_trees::{BoostedModel, TrainConfig};
pub use calibration::{brier, ece, fit_isotonic, pava, IsotonicCalibrator};
pub use corpus::{assign_folds, load_records, CorrectnessRecord, Dataset, FoldAssignment};
pub use cost_model::{CostProfile, FidelityLevel};
pub use error::{Error, Result};
pub use features::{featurize, fit_vocabulary, tokenize, FeatureVector, Vocabulary};
pub use harness::{run_cv, CvOptions, EvalReport, GridSpec, Policy};
pub use policy::{route_greedy, PolicyConfig, RoutingDecision};
pub use synthworld::{generate, GeneratedCorpus, WorldSpec};
