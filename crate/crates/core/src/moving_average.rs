//! Normalized weighted moving-average convolution (`W_avg * X`).
//!
//! Every output sample is `Σ coeff · neighbour / weight_sum`, summed
//! row-major over the kernel window, one channel at a time. Out-of-frame
//! neighbours come from the configured [`Border`] policy.

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Border {
    /// Repeat the nearest edge sample.
    #[default]
    Replicate,
    /// Mirror about the edge sample without repeating it (`dcb|abcd|cba`).
    Reflect,
}

impl Border {
    #[inline]
    fn map(self, i: isize, len: usize) -> usize {
        let last = len as isize - 1;
        match self {
            Border::Replicate => i.clamp(0, last) as usize,
            Border::Reflect => {
                if last == 0 {
                    return 0;
                }
                let period = 2 * last;
                let mut j = i.rem_euclid(period);
                if j > last {
                    j = period - j;
                }
                j as usize
            }
        }
    }
}

pub fn convolve_mean(img: &ImageBuffer, kernel: &Kernel) -> ImageBuffer {
    convolve_mean_with(img, kernel, Border::Replicate)
}

pub fn convolve_mean_with(img: &ImageBuffer, kernel: &Kernel, border: Border) -> ImageBuffer {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(img.samples().len());
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                out.push(window_mean(img, kernel, border, row, col, ch));
            }
        }
    }
    img.with_samples(out)
}

/// The moving average at one position; equals the corresponding sample of
/// [`convolve_mean`].
pub fn local_mean_at(
    img: &ImageBuffer,
    kernel: &Kernel,
    row: usize,
    col: usize,
    channel: usize,
) -> Result<f64> {
    if row >= img.height() || col >= img.width() || channel >= img.channels() {
        return Err(Error::OutOfBounds { row, col, channel });
    }
    Ok(window_mean(
        img,
        kernel,
        Border::Replicate,
        row,
        col,
        channel,
    ))
}

#[inline]
fn window_mean(
    img: &ImageBuffer,
    kernel: &Kernel,
    border: Border,
    row: usize,
    col: usize,
    ch: usize,
) -> f64 {
    let n = kernel.size();
    let r = kernel.radius() as isize;
    let mut acc = 0.0;
    for dr in 0..n {
        let y = border.map(row as isize + dr as isize - r, img.height());
        for dc in 0..n {
            let x = border.map(col as isize + dc as isize - r, img.width());
            acc += kernel.coefficient(dr, dc) * img.get(y, x, ch);
        }
    }
    acc / kernel.weight_sum()
}
