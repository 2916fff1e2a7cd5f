//! Perturbation estimate from the gap between an image and its moving average.
//!
//! The per-sample sign of `X - W_avg*X` picks the direction of correction;
//! the magnitude applied in that direction is one global scalar, the mean
//! gap over all samples of that sign (across every pixel and channel).

use serde::Serialize;

use crate::image::{ImageBuffer, Kernel};
use crate::moving_average::convolve_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    /// Sample sits above its local mean; correction subtracts.
    Subtract,
    /// Sample sits below its local mean; correction adds.
    Add,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedPerturbation {
    width: usize,
    height: usize,
    channels: usize,
    direction: Vec<Direction>,
    raw_diff: Vec<f64>,
    mag_subtract: f64,
    mag_add: f64,
}

impl EstimatedPerturbation {
    pub fn direction(&self) -> &[Direction] {
        &self.direction
    }

    /// `X - W_avg*X` per sample.
    pub fn raw_diff(&self) -> &[f64] {
        &self.raw_diff
    }

    pub fn mag_subtract(&self) -> f64 {
        self.mag_subtract
    }

    pub fn mag_add(&self) -> f64 {
        self.mag_add
    }

    pub fn dimensions(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn count(&self, dir: Direction) -> usize {
        self.direction.iter().filter(|&&d| d == dir).count()
    }

    /// Replaces the normalized magnitudes, leaving directions untouched.
    /// Used to drive the mitigation step with forced values.
    pub fn with_magnitudes(mut self, mag_subtract: f64, mag_add: f64) -> Self {
        self.mag_subtract = mag_subtract.max(0.0);
        self.mag_add = mag_add.max(0.0);
        self
    }

    /// `|raw_diff|` scaled to 0..=255 (largest gap maps to 255), one
    /// grayscale sample per pixel (channel maximum).
    pub fn heat_image(&self) -> ImageBuffer {
        let per_pixel: Vec<f64> = self
            .raw_diff
            .chunks_exact(self.channels)
            .map(|px| px.iter().fold(0.0f64, |m, d| m.max(d.abs())))
            .collect();
        let peak = per_pixel.iter().copied().fold(0.0, f64::max);
        let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
        ImageBuffer::from_clamped(
            self.width,
            self.height,
            1,
            per_pixel.iter().map(|v| v * scale).collect(),
        )
        .expect("estimate dimensions are valid")
    }
}

pub fn estimate(img: &ImageBuffer, kernel: &Kernel) -> EstimatedPerturbation {
    let averaged = convolve_mean(img, kernel);
    let n = img.samples().len();
    let mut direction = Vec::with_capacity(n);
    let mut raw_diff = Vec::with_capacity(n);
    let (mut sum_pos, mut n_pos, mut sum_neg, mut n_neg) = (0.0, 0usize, 0.0, 0usize);
    for (&x, &m) in img.samples().iter().zip(averaged.samples()) {
        let d = x - m;
        raw_diff.push(d);
        if d > 0.0 {
            direction.push(Direction::Subtract);
            sum_pos += d;
            n_pos += 1;
        } else if d < 0.0 {
            direction.push(Direction::Add);
            sum_neg -= d;
            n_neg += 1;
        } else {
            direction.push(Direction::None);
        }
    }
    let mean = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    EstimatedPerturbation {
        width: img.width(),
        height: img.height(),
        channels: img.channels(),
        direction,
        raw_diff,
        mag_subtract: mean(sum_pos, n_pos),
        mag_add: mean(sum_neg, n_neg),
    }
}

/// `(mag_subtract, mag_add)`, the scalars compared between steps.
pub fn magnitude_pair(e: &EstimatedPerturbation) -> (f64, f64) {
    (e.mag_subtract, e.mag_add)
}
