//! Image and kernel value types, PNG/PNM I/O and sample arithmetic.
//!
//! Samples are kept as `f64` in `[0, 255]` so repeated fractional updates
//! do not accumulate quantization error. Rounding to 8 bits happens only
//! when an image is written out.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{Error, Result};

pub const MAX_SAMPLE: f64 = 255.0;

/// An `height × width × channels` grid of samples in `[0, 255]`,
/// stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        let expected = width * height * channels;
        if samples.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{} samples for {width}x{height}x{channels} (expected {expected})",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|s| !(0.0..=MAX_SAMPLE).contains(*s)) {
            return Err(Error::InvalidImage(format!(
                "sample {bad} outside [0, 255]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Like [`ImageBuffer::new`] but clamps every sample into `[0, 255]`
    /// (NaN maps to 0).
    pub fn from_clamped(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        let samples = samples.into_iter().map(clamp_sample).collect();
        Self::new(width, height, channels, samples)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    /// Builds an image from `f(row, col, channel)`; values are clamped.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut samples = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    samples.push(f(row, col, ch));
                }
            }
        }
        Self::from_clamped(width, height, channels, samples)
    }

    pub fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| f64::from(b)).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.samples[self.index(row, col, channel)]
    }

    pub fn try_get(&self, row: usize, col: usize, channel: usize) -> Result<f64> {
        if row >= self.height || col >= self.width || channel >= self.channels {
            return Err(Error::OutOfBounds { row, col, channel });
        }
        Ok(self.get(row, col, channel))
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Same shape, new samples. Caller guarantees the length and range.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self { samples, ..*self }
    }

    pub fn min_sample(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_sample(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Samples rounded half away from zero and clamped to bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.samples.iter().map(|&s| round_sample(s)).collect()
    }

    /// The image with every sample rounded to the nearest integer.
    pub fn rounded(&self) -> Self {
        self.with_samples(
            self.samples
                .iter()
                .map(|&s| f64::from(round_sample(s)))
                .collect(),
        )
    }

    /// Interleaved RGBA bytes, grayscale replicated into the colour channels.
    pub fn to_rgba(&self) -> Vec<u8> {
        let bytes = self.to_bytes();
        let mut out = Vec::with_capacity(self.pixel_count() * 4);
        for px in bytes.chunks_exact(self.channels) {
            match *px {
                [g] => out.extend_from_slice(&[g, g, g, 255]),
                [r, g, b] => out.extend_from_slice(&[r, g, b, 255]),
                _ => unreachable!("channels is 1 or 3"),
            }
        }
        out
    }

    pub(crate) fn color_type(&self) -> ExtendedColorType {
        if self.channels == 1 {
            ExtendedColorType::L8
        } else {
            ExtendedColorType::Rgb8
        }
    }

    pub(crate) fn from_dynamic(img: DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color() {
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => {
                Self::from_bytes(w, h, 1, img.to_luma8().as_raw())
            }
            _ => Self::from_bytes(w, h, 3, img.to_rgb8().as_raw()),
        }
    }
}

#[inline]
pub fn clamp_sample(s: f64) -> f64 {
    if s.is_nan() {
        0.0
    } else {
        s.clamp(0.0, MAX_SAMPLE)
    }
}

#[inline]
pub fn round_sample(s: f64) -> u8 {
    clamp_sample(s).round() as u8
}

/// An odd-sized square grid of nonnegative weights; convolution with it is
/// normalized by `weight_sum`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    coefficients: Vec<f64>,
    weight_sum: f64,
}

impl Kernel {
    pub fn new(size: usize, coefficients: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!(
                "size {size} must be odd and positive"
            )));
        }
        if coefficients.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "{} coefficients for a {size}x{size} kernel",
                coefficients.len()
            )));
        }
        if let Some(c) = coefficients.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidKernel(format!(
                "coefficient {c} is negative or not finite"
            )));
        }
        let weight_sum: f64 = coefficients.iter().sum();
        if weight_sum <= 0.0 {
            return Err(Error::InvalidKernel("coefficients sum to zero".into()));
        }
        Ok(Self {
            size,
            coefficients,
            weight_sum,
        })
    }

    /// The all-ones `size × size` moving-average kernel.
    pub fn ones(size: usize) -> Result<Self> {
        Self::new(size, vec![1.0; size * size])
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            coefficients: vec![1.0],
            weight_sum: 1.0,
        }
    }

    /// Parses `N` followed by `N²` row-major coefficients, whitespace separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let size: usize = tokens
            .next()
            .ok_or_else(|| Error::InvalidKernel("empty kernel file".into()))?
            .parse()
            .map_err(|e| Error::InvalidKernel(format!("bad size: {e}")))?;
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!(
                "size {size} must be odd and positive"
            )));
        }
        let coefficients = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::InvalidKernel(format!("bad coefficient {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(size, coefficients)
    }

    /// `ones:N` shorthand or a path to a kernel text file.
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec.strip_prefix("ones:") {
            Some(n) => Self::ones(
                n.parse()
                    .map_err(|e| Error::InvalidKernel(format!("bad size {n:?}: {e}")))?,
            ),
            None => load_kernel(spec),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    #[inline]
    pub fn coefficient(&self, dr: usize, dc: usize) -> f64 {
        self.coefficients[dr * self.size + dc]
    }
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<Kernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Kernel::parse(&text)
}

/// Loads a PNG or binary PNM (P5/P6) file. Format is sniffed from content.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let unreadable = |reason: String| Error::Unreadable {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => {
            return Err(Error::UnsupportedFormat(format!(
                "unrecognized content in {}",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| unreadable(e.to_string()))?;
    ImageBuffer::from_dynamic(decoded)
}

/// Writes a lossless PNG, or binary PGM/PPM when the extension is
/// `.pgm`, `.ppm` or `.pnm`. Samples are rounded.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let mut out = BufWriter::new(fs::File::create(path)?);
    match ext.as_str() {
        "pgm" | "ppm" | "pnm" => write_pnm(img, &mut out)?,
        _ => write_png(img, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_png(img, &mut buf)?;
    Ok(buf)
}

fn write_png<W: Write>(img: &ImageBuffer, out: W) -> Result<()> {
    PngEncoder::new(out)
        .write_image(
            &img.to_bytes(),
            img.width() as u32,
            img.height() as u32,
            img.color_type(),
        )
        .map_err(|e| Error::Codec(e.to_string()))
}

fn write_pnm<W: Write>(img: &ImageBuffer, out: W) -> Result<()> {
    let subtype = if img.channels() == 1 {
        PnmSubtype::Graymap(SampleEncoding::Binary)
    } else {
        PnmSubtype::Pixmap(SampleEncoding::Binary)
    };
    PnmEncoder::new(out)
        .with_subtype(subtype)
        .write_image(
            &img.to_bytes(),
            img.width() as u32,
            img.height() as u32,
            img.color_type(),
        )
        .map_err(|e| Error::Codec(e.to_string()))
}

/// Largest absolute per-sample difference.
pub fn linf_distance(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_shape(b)?;
    Ok(a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
