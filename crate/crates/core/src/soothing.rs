//! Soothing filters applied before classification: JPEG encode/decode at a
//! fixed quality, or the moving-average filter.

use std::fmt;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::ImageFormat;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Kernel};
use crate::moving_average::convolve_mean;

pub const DEFAULT_JPEG_QUALITY: u8 = 20;

/// Describes the JPEG codec for run summaries.
pub const JPEG_ENCODER_SETTINGS: &str =
    "image-rs JpegEncoder: baseline DCT, libjpeg-scaled standard tables, YCbCr with 1x1 sampling on all components; zune-jpeg decoder";

#[derive(Debug, Clone, PartialEq)]
pub enum Soother {
    Jpeg { quality: u8 },
    Mean(Kernel),
}

impl Default for Soother {
    fn default() -> Self {
        Soother::Jpeg {
            quality: DEFAULT_JPEG_QUALITY,
        }
    }
}

impl Soother {
    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        match self {
            Soother::Jpeg { quality } => jpeg_soothe(img, *quality),
            Soother::Mean(kernel) => Ok(mean_soothe(img, kernel)),
        }
    }
}

impl fmt::Display for Soother {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Soother::Jpeg { quality } => write!(f, "jpeg:{quality}"),
            Soother::Mean(k) => write!(f, "mean:{}", k.size()),
        }
    }
}

/// `jpeg:Q` (1..=100) or `mean:N` (odd N, all-ones kernel).
impl FromStr for Soother {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("soother {s:?}: expected jpeg:Q or mean:N"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "jpeg" => {
                let quality: u8 = arg.parse().map_err(|_| bad())?;
                if !(1..=100).contains(&quality) {
                    return Err(Error::InvalidArgument(format!(
                        "jpeg quality {quality} outside 1..=100"
                    )));
                }
                Ok(Soother::Jpeg { quality })
            }
            "mean" => Ok(Soother::Mean(Kernel::ones(
                arg.parse().map_err(|_| bad())?,
            )?)),
            _ => Err(bad()),
        }
    }
}

pub fn jpeg_bytes(img: &ImageBuffer, quality: u8) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!(
            "jpeg quality {quality} outside 1..=100"
        )));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(
            &img.to_bytes(),
            img.width() as u32,
            img.height() as u32,
            img.color_type(),
        )
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(buf)
}

pub fn jpeg_soothe(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    let bytes = jpeg_bytes(img, quality)?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let out = ImageBuffer::from_dynamic(decoded)?;
    if !out.same_shape(img) {
        return Err(Error::Codec(format!(
            "decoded {}x{}x{} from {}x{}x{}",
            out.width(),
            out.height(),
            out.channels(),
            img.width(),
            img.height(),
            img.channels()
        )));
    }
    Ok(out)
}

pub fn mean_soothe(img: &ImageBuffer, kernel: &Kernel) -> ImageBuffer {
    convolve_mean(img, kernel)
}
