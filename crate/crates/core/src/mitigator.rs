//! Multi-level mitigation: estimate → guarded update → boundary check →
//! soothe → classify → stopping test, repeated until the classifier's last
//! `k - 1` labels agree or the step cap is hit.
//!
//! Each step estimates from the current image. A direction's normalized
//! magnitude is applied only if it does not exceed the reference magnitude
//! of the previous step, and a sample moves only if it lands strictly on its
//! own side of the boundary `W_avg * X_adv`, computed once from the input.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, PredictionRecord};
use crate::error::{Error, Result};
use crate::estimator::{estimate, magnitude_pair, Direction, EstimatedPerturbation};
use crate::image::{ImageBuffer, Kernel};
use crate::moving_average::convolve_mean;
use crate::soothing::Soother;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MAX_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// `W_avg * X_adv` of the original input, never refreshed.
    #[default]
    Fixed,
    /// Recomputed from the current image at the top of every step.
    Refresh,
}

/// What a step's magnitudes are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardReference {
    /// Per direction, the magnitude of the most recent step whose guard
    /// passed (the step-0 estimate initially).
    #[default]
    LastAccepted,
    /// The previous step's estimate, whether or not it was applied.
    LastEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationConfig {
    pub k: usize,
    pub max_steps: usize,
    pub boundary: BoundaryMode,
    pub guard_reference: GuardReference,
    /// Stop once a step proves the image is a fixed point.
    pub stop_on_stall: bool,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_steps: DEFAULT_MAX_STEPS,
            boundary: BoundaryMode::Fixed,
            guard_reference: GuardReference::LastAccepted,
            stop_on_stall: true,
        }
    }
}

impl MitigationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "k = {} (must be at least 2)",
                self.k
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument(
                "max_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Index of the step just taken (0-based).
    pub step: usize,
    pub mag_sub: f64,
    pub mag_add: f64,
    /// Guard passed for the direction and its magnitude was used.
    pub applied_sub: bool,
    pub applied_add: bool,
    /// Samples moved this step.
    pub updated: usize,
    /// Samples whose update was attempted but rejected by the boundary.
    pub held: usize,
    /// Samples with a direction whose guard failed (or step 0).
    pub skipped: usize,
    /// Every later step would leave the image unchanged.
    pub fixed_point: bool,
}

impl StepOutcome {
    pub fn active(&self) -> usize {
        self.updated + self.held + self.skipped
    }
}

#[derive(Debug, Clone)]
pub struct MitigationState {
    current: ImageBuffer,
    boundary: ImageBuffer,
    reference: Option<(f64, f64)>,
    step: usize,
    ring: VecDeque<PredictionRecord>,
    k: usize,
    held_last_step: usize,
    boundary_mode: BoundaryMode,
    guard_reference: GuardReference,
}

impl MitigationState {
    pub fn new(input: ImageBuffer, kernel: &Kernel) -> Self {
        Self::with_config(input, kernel, &MitigationConfig::default())
    }

    pub fn with_config(input: ImageBuffer, kernel: &Kernel, config: &MitigationConfig) -> Self {
        let boundary = convolve_mean(&input, kernel);
        Self {
            current: input,
            boundary,
            reference: None,
            step: 0,
            ring: VecDeque::with_capacity(config.k),
            k: config.k,
            held_last_step: 0,
            boundary_mode: config.boundary,
            guard_reference: config.guard_reference,
        }
    }

    pub fn current(&self) -> &ImageBuffer {
        &self.current
    }

    pub fn into_current(self) -> ImageBuffer {
        self.current
    }

    pub fn boundary(&self) -> &ImageBuffer {
        &self.boundary
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Reference magnitudes for the next guard, absent before step 0.
    pub fn reference_magnitudes(&self) -> Option<(f64, f64)> {
        self.reference
    }

    pub fn held_last_step(&self) -> usize {
        self.held_last_step
    }

    pub fn predictions(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.ring.iter()
    }

    /// Keeps the latest `k` predictions.
    pub fn push_prediction(&mut self, p: PredictionRecord) {
        if self.ring.len() == self.k {
            self.ring.pop_front();
        }
        self.ring.push_back(p);
    }

    /// The last `k - 1` predictions carry the same label.
    pub fn predictions_converged(&self) -> bool {
        let need = self.k - 1;
        if self.ring.len() < need {
            return false;
        }
        let mut recent = self.ring.iter().rev().take(need);
        let first = recent.next().map(|p| &p.label);
        recent.all(|p| Some(&p.label) == first)
    }

    /// Estimates from the current image and applies one guarded update.
    pub fn step(&mut self, kernel: &Kernel) -> StepOutcome {
        if self.boundary_mode == BoundaryMode::Refresh {
            self.boundary = convolve_mean(&self.current, kernel);
        }
        let est = estimate(&self.current, kernel);
        self.apply_estimate(&est)
    }

    /// Applies a precomputed estimate. `est` must match the image shape.
    pub fn apply_estimate(&mut self, est: &EstimatedPerturbation) -> StepOutcome {
        let (w, h, c) = est.dimensions();
        assert_eq!(
            (w, h, c),
            (
                self.current.width(),
                self.current.height(),
                self.current.channels()
            )
        );

        let (mag_sub, mag_add) = magnitude_pair(est);
        let (pass_sub, pass_add) = match self.reference {
            None => (false, false),
            Some((ref_sub, ref_add)) => (mag_sub <= ref_sub, mag_add <= ref_add),
        };

        let mut samples = self.current.samples().to_vec();
        let boundary = self.boundary.samples();
        let (mut updated, mut held, mut skipped) = (0, 0, 0);
        let (mut failed_sub, mut failed_add) = (false, false);
        for (i, dir) in est.direction().iter().enumerate() {
            match dir {
                Direction::None => {}
                Direction::Subtract if !pass_sub => {
                    skipped += 1;
                    failed_sub = true;
                }
                Direction::Add if !pass_add => {
                    skipped += 1;
                    failed_add = true;
                }
                Direction::Subtract => {
                    let candidate = samples[i] - mag_sub;
                    if candidate > boundary[i] {
                        samples[i] = candidate;
                        updated += 1;
                    } else {
                        held += 1;
                    }
                }
                Direction::Add => {
                    let candidate = samples[i] + mag_add;
                    if candidate < boundary[i] {
                        samples[i] = candidate;
                        updated += 1;
                    } else {
                        held += 1;
                    }
                }
            }
        }
        if updated > 0 {
            self.current = self.current.with_samples(samples);
        }

        let first = self.reference.is_none();
        self.reference = Some(match (self.guard_reference, self.reference) {
            (GuardReference::LastAccepted, Some((ref_sub, ref_add))) => (
                if pass_sub { mag_sub } else { ref_sub },
                if pass_add { mag_add } else { ref_add },
            ),
            _ => (mag_sub, mag_add),
        });

        // Unchanged image + unchanged reference repeats this step exactly.
        let reference_stable =
            self.guard_reference == GuardReference::LastAccepted || !(failed_sub || failed_add);
        let fixed_point = !first && updated == 0 && reference_stable;

        let outcome = StepOutcome {
            step: self.step,
            mag_sub,
            mag_add,
            applied_sub: pass_sub,
            applied_add: pass_add,
            updated,
            held,
            skipped,
            fixed_point,
        };
        self.held_last_step = held;
        self.step += 1;
        outcome
    }
}

/// Value-style wrapper around [`MitigationState::step`].
pub fn mitigation_step(mut state: MitigationState, kernel: &Kernel) -> MitigationState {
    state.step(kernel);
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    ConvergedPredictions,
    MaxSteps,
    MagnitudeStall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub label: String,
    pub confidence: f64,
    pub mag_sub: f64,
    pub mag_add: f64,
    pub applied_sub: bool,
    pub applied_add: bool,
    pub updated: usize,
    pub held: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct MitigationResult {
    pub final_image: ImageBuffer,
    pub steps_run: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<StepRecord>,
}

pub fn run_mitigation(
    input: &ImageBuffer,
    kernel: &Kernel,
    config: &MitigationConfig,
    soother: &Soother,
    classifier: &mut dyn Classifier,
) -> Result<MitigationResult> {
    run_mitigation_observed(input, kernel, config, soother, classifier, |_, _| {})
}

/// [`run_mitigation`] with a callback after every step, seeing the state
/// (prediction already pushed) and the step outcome.
pub fn run_mitigation_observed<F>(
    input: &ImageBuffer,
    kernel: &Kernel,
    config: &MitigationConfig,
    soother: &Soother,
    classifier: &mut dyn Classifier,
    mut observer: F,
) -> Result<MitigationResult>
where
    F: FnMut(&MitigationState, &StepOutcome),
{
    config.validate()?;
    let mut state = MitigationState::with_config(input.clone(), kernel, config);
    let mut trace = Vec::new();
    let stop_reason = loop {
        let outcome = state.step(kernel);
        let soothed = soother.apply(state.current())?;
        let prediction = classifier
            .predict(&soothed)
            .map_err(|source| Error::Classifier {
                step: outcome.step,
                source,
            })?;
        trace.push(StepRecord {
            step: outcome.step,
            label: prediction.label.clone(),
            confidence: prediction.confidence,
            mag_sub: outcome.mag_sub,
            mag_add: outcome.mag_add,
            applied_sub: outcome.applied_sub,
            applied_add: outcome.applied_add,
            updated: outcome.updated,
            held: outcome.held,
            skipped: outcome.skipped,
        });
        state.push_prediction(prediction);
        observer(&state, &outcome);

        if state.predictions_converged() {
            break StopReason::ConvergedPredictions;
        }
        if state.step_index() >= config.max_steps {
            break StopReason::MaxSteps;
        }
        if config.stop_on_stall && outcome.fixed_point {
            break StopReason::MagnitudeStall;
        }
    };
    Ok(MitigationResult {
        steps_run: trace.len(),
        final_image: state.into_current(),
        stop_reason,
        trace,
    })
}
