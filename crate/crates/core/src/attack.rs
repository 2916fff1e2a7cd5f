//! Synthetic sign-model perturbations with known ground truth, and
//! saturated-sample statistics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_sample, round_sample, ImageBuffer, MAX_SAMPLE};

/// Identifies the generator behind every seeded draw, for run summaries.
pub const PRNG_ID: &str = "ChaCha8Rng(seed_from_u64)/rand_chacha-0.9";

pub const DEFAULT_ITERATIONS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// One application of a `{-ε, 0, +ε}` field, clamped to `[0, 255]`.
    FastUnclipped,
    /// `iterations` rounds of `±ε/iterations` steps with fresh signs each
    /// round, clipped to the `clean ± ε` tube and to `[0, 255]`.
    IterativeClipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub mode: AttackMode,
    pub iterations: u32,
    pub seed: u64,
}

impl AttackSpec {
    pub fn fast(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            mode: AttackMode::FastUnclipped,
            iterations: 1,
            seed,
        }
    }

    pub fn iterative(epsilon: f64, iterations: u32, seed: u64) -> Self {
        Self {
            epsilon,
            mode: AttackMode::IterativeClipped,
            iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_SAMPLE).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} outside [0, 255]",
                self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Perturbed {
    pub image: ImageBuffer,
    /// Realized perturbation, `image - clean`, per sample.
    pub delta: Vec<f64>,
    /// Drawn sign per sample (`-1`, `0`, `+1`). For the iterative mode this is
    /// the sign of the realized perturbation.
    pub signs: Vec<i8>,
}

fn draw_sign(rng: &mut ChaCha8Rng) -> i8 {
    rng.random_range(0..3u8) as i8 - 1
}

pub fn synth_perturb(clean: &ImageBuffer, spec: &AttackSpec) -> Result<Perturbed> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eps = spec.epsilon;
    let (samples, signs): (Vec<f64>, Vec<i8>) = match spec.mode {
        AttackMode::FastUnclipped => clean
            .samples()
            .iter()
            .map(|&x| {
                let s = draw_sign(&mut rng);
                (clamp_sample(x + eps * f64::from(s)), s)
            })
            .unzip(),
        AttackMode::IterativeClipped => {
            let step = eps / f64::from(spec.iterations);
            let mut cur = clean.samples().to_vec();
            for _ in 0..spec.iterations {
                for (c, &x) in cur.iter_mut().zip(clean.samples()) {
                    let s = draw_sign(&mut rng);
                    let lo = (x - eps).max(0.0);
                    let hi = (x + eps).min(MAX_SAMPLE);
                    *c = (*c + step * f64::from(s)).clamp(lo, hi);
                }
            }
            let signs = cur
                .iter()
                .zip(clean.samples())
                .map(|(a, x)| (a - x).partial_cmp(&0.0).map_or(0, |o| o as i8))
                .collect();
            (cur, signs)
        }
    };
    let delta = samples
        .iter()
        .zip(clean.samples())
        .map(|(a, x)| a - x)
        .collect();
    let image = clean.with_samples(samples);
    Ok(Perturbed {
        image,
        delta,
        signs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationStats {
    /// Pixels whose every channel rounds to 0.
    pub black_tuples: u64,
    /// Pixels whose every channel rounds to 255.
    pub white_tuples: u64,
    /// Rounded sample value → number of samples, over all channels.
    pub histogram: BTreeMap<u8, u64>,
}

impl SaturationStats {
    pub fn saturated_tuples(&self) -> u64 {
        self.black_tuples + self.white_tuples
    }
}

pub fn saturation_stats(img: &ImageBuffer) -> SaturationStats {
    let bytes = img.to_bytes();
    let mut histogram = BTreeMap::new();
    for &b in &bytes {
        *histogram.entry(b).or_insert(0) += 1;
    }
    let (mut black_tuples, mut white_tuples) = (0, 0);
    for px in bytes.chunks_exact(img.channels()) {
        if px.iter().all(|&b| b == 0) {
            black_tuples += 1;
        } else if px.iter().all(|&b| b == 255) {
            white_tuples += 1;
        }
    }
    SaturationStats {
        black_tuples,
        white_tuples,
        histogram,
    }
}

/// Samples at exactly 0 or 255 after rounding.
pub fn saturated_samples(img: &ImageBuffer) -> usize {
    img.samples()
        .iter()
        .filter(|&&s| matches!(round_sample(s), 0 | 255))
        .count()
}
