//! Mitigation of adversarial image perturbations by moving-average
//! estimation.
//!
//! A benign image is close to its own moving average, so the gap
//! `X_adv - W_avg * X_adv` estimates the perturbation. [`mitigator`] applies
//! that estimate repeatedly, bounded by the moving average of the input, and
//! asks a [`classifier`] after a [`soothing`] filter whether predictions have
//! settled.

pub mod attack;
pub mod classifier;
pub mod error;
pub mod estimator;
pub mod image;
pub mod mitigator;
pub mod moving_average;
pub mod probability;
pub mod report;
pub mod soothing;

pub use attack::{
    saturation_stats, synth_perturb, AttackMode, AttackSpec, Perturbed, SaturationStats,
};
pub use classifier::{toy_predict, Classifier, ClassifierError, PredictionRecord, ToyClassifier};
pub use error::{Error, Result};
pub use estimator::{estimate, magnitude_pair, Direction, EstimatedPerturbation};
pub use image::{linf_distance, load_image, load_kernel, save_image, ImageBuffer, Kernel};
pub use mitigator::{
    mitigation_step, run_mitigation, run_mitigation_observed, BoundaryMode, GuardReference,
    MitigationConfig, MitigationResult, MitigationState, StepOutcome, StepRecord, StopReason,
};
pub use moving_average::{convolve_mean, convolve_mean_with, local_mean_at, Border};
pub use soothing::{jpeg_soothe, mean_soothe, Soother};
