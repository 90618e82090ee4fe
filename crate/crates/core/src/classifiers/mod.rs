//! Lookup-table weak classifiers, AdaBoost strong classifiers and cascades.

mod cascade;
mod model;
mod strong;
mod weak;

pub use cascade::{
    train_cascade, train_cascade_with, Cascade, CascadeConfig, CascadeDecision, CascadeTrace, DetectorLabel,
    NegativeMiner, PatchMiner, StageTrace, StopReason,
};
pub use model::{lut_from_hex, lut_to_hex, MODEL_FORMAT, MODEL_VERSION};
pub use strong::{train_strong, BoostTrace, FeatureMatrix, RoundTrace, StageTargets, StrongClassifier};
pub use weak::{code_count, train_weak, HaarBins, LutFit, WeakClassifier, HAAR_BINS};
