//! Prediction backends consulted by the mitigation stopping rule.
//!
//! [`ToyClassifier`] is a deterministic nearest-prototype matcher over 8×8
//! grayscale thumbnails. With the `external` feature, [`ExternalClassifier`]
//! drives a child process over a line protocol:
//! the parent writes `<absolute-png-path>\n`, the child answers
//! `<label> <confidence>\n`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{load_image, ImageBuffer};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("gallery: {0}")]
    Gallery(String),
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
    #[error("malformed reply {0:?}")]
    Malformed(String),
    #[error("no reply within {0:?}")]
    Timeout(std::time::Duration),
    #[error("child process failed: {0}")]
    Crashed(String),
    #[error("cannot launch {command:?}: {reason}")]
    Spawn { command: String, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub label: String,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn new(label: impl Into<String>, confidence: f64) -> Result<Self, ClassifierError> {
        let label = label.into();
        if label.is_empty() {
            return Err(ClassifierError::InvalidPrediction("empty label".into()));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ClassifierError::InvalidPrediction(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { label, confidence })
    }
}

impl fmt::Display for PredictionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.label, self.confidence)
    }
}

pub trait Classifier {
    fn predict(&mut self, img: &ImageBuffer) -> Result<PredictionRecord, ClassifierError>;
}

impl<F> Classifier for F
where
    F: FnMut(&ImageBuffer) -> Result<PredictionRecord, ClassifierError>,
{
    fn predict(&mut self, img: &ImageBuffer) -> Result<PredictionRecord, ClassifierError> {
        self(img)
    }
}

const THUMB: usize = 8;
/// Softmin temperature, in RMS sample units.
const TEMPERATURE: f64 = 8.0;

type Thumbnail = [f64; THUMB * THUMB];

/// 8×8 block means of the channel-averaged image. Images smaller than 8 in
/// a dimension reuse rows/columns.
fn thumbnail(img: &ImageBuffer) -> Thumbnail {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let span = |i: usize, len: usize| {
        let lo = (i * len / THUMB).min(len - 1);
        let hi = ((i + 1) * len / THUMB).max(lo + 1);
        lo..hi
    };
    let mut out = [0.0; THUMB * THUMB];
    for by in 0..THUMB {
        for bx in 0..THUMB {
            let (mut sum, mut n) = (0.0, 0usize);
            for row in span(by, h) {
                for col in span(bx, w) {
                    for ch in 0..c {
                        sum += img.get(row, col, ch);
                    }
                    n += c;
                }
            }
            out[by * THUMB + bx] = sum / n as f64;
        }
    }
    out
}

fn rms_distance(a: &Thumbnail, b: &Thumbnail) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / (THUMB * THUMB) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct ToyClassifier {
    prototypes: Vec<(String, Thumbnail)>,
}

impl ToyClassifier {
    pub fn new<'a, I>(gallery: I) -> Result<Self, ClassifierError>
    where
        I: IntoIterator<Item = (&'a str, &'a ImageBuffer)>,
    {
        let prototypes: Vec<_> = gallery
            .into_iter()
            .map(|(l, img)| (l.to_string(), thumbnail(img)))
            .collect();
        if prototypes.is_empty() {
            return Err(ClassifierError::EmptyGallery);
        }
        if prototypes
            .iter()
            .any(|(l, _)| l.is_empty() || l.contains(char::is_whitespace))
        {
            return Err(ClassifierError::Gallery(
                "labels must be nonempty single tokens".into(),
            ));
        }
        Ok(Self { prototypes })
    }

    /// Every PNG/PGM/PPM in `dir`, sorted by file name; the label is the file stem.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| ClassifierError::Gallery(format!("{}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                    matches!(
                        e.to_ascii_lowercase().as_str(),
                        "png" | "pgm" | "ppm" | "pnm"
                    )
                })
            })
            .collect();
        paths.sort();
        let mut gallery = Vec::with_capacity(paths.len());
        for p in paths {
            let label = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let img = load_image(&p).map_err(|e| ClassifierError::Gallery(e.to_string()))?;
            gallery.push((label, img));
        }
        Self::new(gallery.iter().map(|(l, i)| (l.as_str(), i)))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.prototypes.iter().map(|(l, _)| l.as_str())
    }

    pub fn classify(&self, img: &ImageBuffer) -> PredictionRecord {
        let query = thumbnail(img);
        let distances: Vec<f64> = self
            .prototypes
            .iter()
            .map(|(_, p)| rms_distance(&query, p))
            .collect();
        // strict < keeps the first of equally distant prototypes
        let mut best = 0;
        for (i, &d) in distances.iter().enumerate().skip(1) {
            if d < distances[best] {
                best = i;
            }
        }
        let d_min = distances[best];
        let total: f64 = distances
            .iter()
            .map(|d| (-(d - d_min) / TEMPERATURE).exp())
            .sum();
        PredictionRecord {
            label: self.prototypes[best].0.clone(),
            confidence: (1.0 / total).clamp(0.0, 1.0),
        }
    }
}

impl Classifier for ToyClassifier {
    fn predict(&mut self, img: &ImageBuffer) -> Result<PredictionRecord, ClassifierError> {
        Ok(self.classify(img))
    }
}

pub fn toy_predict(
    img: &ImageBuffer,
    gallery: &[(String, ImageBuffer)],
) -> Result<PredictionRecord, ClassifierError> {
    Ok(ToyClassifier::new(gallery.iter().map(|(l, i)| (l.as_str(), i)))?.classify(img))
}

/// Parses one reply line (without its trailing newline).
pub fn parse_reply(line: &str) -> Result<PredictionRecord, ClassifierError> {
    let malformed = || ClassifierError::Malformed(line.to_string());
    let (label, conf) = line.split_once(' ').ok_or_else(malformed)?;
    if label.is_empty() || conf.contains(' ') {
        return Err(malformed());
    }
    let confidence: f64 = conf.parse().map_err(|_| malformed())?;
    PredictionRecord::new(label, confidence).map_err(|_| malformed())
}

#[cfg(feature = "external")]
pub use external::{external_predict, ExternalClassifier, DEFAULT_TIMEOUT};

#[cfg(feature = "external")]
mod external {
    use std::io::{BufRead, BufReader, Write};
    use std::process::{Child, ChildStdin, Command, Stdio};
    use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
    use std::thread;
    use std::time::Duration;

    use super::{parse_reply, Classifier, ClassifierError, PredictionRecord};
    use crate::image::{save_image, ImageBuffer};

    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    /// A long-lived child process answering one query at a time.
    pub struct ExternalClassifier {
        command: String,
        child: Child,
        stdin: ChildStdin,
        replies: Receiver<std::io::Result<String>>,
        timeout: Duration,
        scratch: tempfile::TempDir,
        queries: u64,
    }

    impl ExternalClassifier {
        /// Launches `command` through `sh -c`.
        pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ClassifierError> {
            let spawn_err = |reason: String| ClassifierError::Spawn {
                command: command.to_string(),
                reason,
            };
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(command)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| spawn_err(e.to_string()))?;
            let stdin = child
                .stdin
                .take()
                .ok_or_else(|| spawn_err("no stdin".into()))?;
            let stdout = child
                .stdout
                .take()
                .ok_or_else(|| spawn_err("no stdout".into()))?;
            let (tx, replies) = mpsc::channel();
            thread::spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let mut line = String::new();
                    match reader.read_line(&mut line) {
                        Ok(0) => break,
                        Ok(_) => {
                            if tx.send(Ok(line)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            });
            let scratch = tempfile::Builder::new()
                .prefix("xmas-query")
                .tempdir()
                .map_err(|e| spawn_err(e.to_string()))?;
            Ok(Self {
                command: command.to_string(),
                child,
                stdin,
                replies,
                timeout,
                scratch,
                queries: 0,
            })
        }

        pub fn command(&self) -> &str {
            &self.command
        }

        fn exit_status(&mut self) -> String {
            match self.child.try_wait() {
                Ok(Some(status)) => status.to_string(),
                _ => "closed its output".into(),
            }
        }
    }

    impl Classifier for ExternalClassifier {
        fn predict(&mut self, img: &ImageBuffer) -> Result<PredictionRecord, ClassifierError> {
            self.queries += 1;
            let path = self
                .scratch
                .path()
                .join(format!("query-{}.png", self.queries));
            save_image(img, &path).map_err(|e| ClassifierError::Io(e.to_string()))?;
            let path =
                std::fs::canonicalize(&path).map_err(|e| ClassifierError::Io(e.to_string()))?;
            let request = format!("{}\n", path.display());
            if let Err(e) = self
                .stdin
                .write_all(request.as_bytes())
                .and_then(|_| self.stdin.flush())
            {
                return Err(ClassifierError::Crashed(format!(
                    "{e} ({})",
                    self.exit_status()
                )));
            }
            let reply = match self.replies.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ClassifierError::Io(e.to_string())),
                Err(RecvTimeoutError::Timeout) => {
                    let _ = self.child.kill();
                    return Err(ClassifierError::Timeout(self.timeout));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let _ = self.child.wait();
                    return Err(ClassifierError::Crashed(self.exit_status()));
                }
            };
            let _ = std::fs::remove_file(&path);
            let line = reply
                .strip_suffix('\n')
                .ok_or_else(|| ClassifierError::Malformed(reply.clone()))?;
            parse_reply(line)
        }
    }

    impl Drop for ExternalClassifier {
        fn drop(&mut self) {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }

    /// One-shot query: launch, ask once, shut down.
    pub fn external_predict(
        img: &ImageBuffer,
        command: &str,
        timeout: Duration,
    ) -> Result<PredictionRecord, ClassifierError> {
        ExternalClassifier::spawn(command, timeout)?.predict(img)
    }
}
