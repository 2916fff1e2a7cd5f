//! Exact and sampled probabilities for moving-averaged sign fields.
//!
//! Each of the `n²` samples in an `n × n` window independently takes one of
//! `v` evenly spaced values in `[-ε, +ε]` (`v = 3` gives `{-ε, 0, +ε}`).
//! The window mean equals `+ε` only when every sample is `+ε`; the exact
//! routines establish that by enumeration rather than assuming it.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest number of assignments enumerated exactly.
pub const MAX_ENUMERATION: u128 = 1 << 24;

pub type Probability = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowCounts {
    pub total: u64,
    /// Assignments whose mean is exactly `+ε`.
    pub mean_plus_eps: u64,
    /// Assignments whose mean is exactly `-ε`.
    pub mean_minus_eps: u64,
}

/// Enumerates every assignment of the window. Values are integers
/// `-(v-1), -(v-1)+2, …, v-1` in units of `ε/(v-1)`.
pub fn enumerate_window(n: usize, values_per_sample: u32) -> Result<WindowCounts> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "kernel side must be at least 1".into(),
        ));
    }
    if values_per_sample < 2 {
        return Err(Error::InvalidArgument(
            "need at least two values per sample".into(),
        ));
    }
    let cells = (n * n) as u32;
    let v = values_per_sample as u128;
    let total = v.checked_pow(cells).filter(|&t| t <= MAX_ENUMERATION);
    let Some(total) = total else {
        return Err(Error::EnumerationTooLarge(v.saturating_pow(cells)));
    };

    let top = i64::from(values_per_sample) - 1;
    let value = |digit: u32| 2 * i64::from(digit) - top;
    let target = top * i64::from(cells);

    let mut digits = vec![0u32; cells as usize];
    let mut sum: i64 = i64::from(cells) * value(0);
    let (mut plus, mut minus) = (0u64, 0u64);
    for _ in 0..total {
        if sum == target {
            plus += 1;
        } else if sum == -target {
            minus += 1;
        }
        // odometer increment, keeping the running sum in step
        for d in digits.iter_mut() {
            if *d + 1 < values_per_sample {
                sum += 2;
                *d += 1;
                break;
            }
            sum -= 2 * top;
            *d = 0;
        }
    }
    Ok(WindowCounts {
        total: total as u64,
        mean_plus_eps: plus,
        mean_minus_eps: minus,
    })
}

/// P[window mean == +ε], exactly.
pub fn exact_equal_prob(n: usize, values_per_sample: u32) -> Result<Probability> {
    let c = enumerate_window(n, values_per_sample)?;
    Ok(Ratio::new(c.mean_plus_eps, c.total))
}

/// P[|window mean| < ε] for the three-valued sign model, exactly.
pub fn exact_strict_reduction_prob(n: usize) -> Result<Probability> {
    let c = enumerate_window(n, 3)?;
    Ok(Ratio::new(
        c.total - c.mean_plus_eps - c.mean_minus_eps,
        c.total,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub trials: u64,
}

impl MonteCarloEstimate {
    pub fn contains(&self, p: f64) -> bool {
        (self.estimate - p).abs() <= self.half_width
    }
}

/// Fraction of random `{-ε, 0, +ε}` windows with `|mean| < ε`.
pub fn monte_carlo_reduction_prob(n: usize, trials: u64, seed: u64) -> Result<MonteCarloEstimate> {
    if n == 0 || trials == 0 {
        return Err(Error::InvalidArgument("need n >= 1 and trials >= 1".into()));
    }
    let cells = n * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        let first = rng.random_range(0..3u8);
        let mut uniform = first != 1;
        for _ in 1..cells {
            if rng.random_range(0..3u8) != first {
                uniform = false;
            }
        }
        if !uniform {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    Ok(MonteCarloEstimate {
        estimate: p,
        half_width: 1.96 * (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
    })
}

pub fn to_f64(p: Probability) -> f64 {
    *p.numer() as f64 / *p.denom() as f64
}
