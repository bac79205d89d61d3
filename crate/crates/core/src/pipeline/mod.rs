//! Experiment pipeline: configuration, patient-grouped folds, training loops,
//! CDAE refinement with fusion, and fold evaluation.

pub mod config;
pub mod evaluate;
pub mod folds;
pub mod fusion;
pub mod train;

pub use config::{PreprocessConfig, TrainConfig};
pub use evaluate::{evaluate_fold, predict_case, CaseOutput, FoldEvaluation, VARIANT_FUSED, VARIANT_UNET};
pub use folds::{make_folds, FoldPlan, FoldSets, PatientVolume};
pub use fusion::{fuse, refine, FusionOptions, FusionResult};
pub use train::{train_cdae, train_unet, EpochLog, LabeledVolume, NamedShape, TrainOutcome};
