use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use xmas_core::attack::{DEFAULT_ITERATIONS, PRNG_ID};
use xmas_core::classifier::{ExternalClassifier, DEFAULT_TIMEOUT};
use xmas_core::mitigator::{DEFAULT_K, DEFAULT_MAX_STEPS};
use xmas_core::probability::{exact_equal_prob, exact_strict_reduction_prob, to_f64};
use xmas_core::report::{accuracy_curve, write_curve_csv, RunSummary};
use xmas_core::soothing::{jpeg_bytes, JPEG_ENCODER_SETTINGS};
use xmas_core::{
    estimate, load_image, run_mitigation_observed, saturation_stats, save_image, synth_perturb,
    AttackSpec, BoundaryMode, Classifier, GuardReference, ImageBuffer, Kernel, MitigationConfig,
    Soother, StepRecord, ToyClassifier,
};

#[derive(Parser)]
#[command(
    name = "xmas",
    version,
    about = "Adversarial perturbation mitigation by moving-average estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add a seeded sign perturbation of size epsilon to an image.
    Perturb(PerturbArgs),
    /// Run the multi-step mitigation loop.
    Mitigate(MitigateArgs),
    /// Dump the estimated perturbation as a heat map plus its magnitudes.
    Estimate(EstimateArgs),
    /// Apply one soothing filter.
    Soothe(SootheArgs),
    /// Print saturation statistics as JSON.
    Stats(StatsArgs),
    /// Print the exact window-equality probabilities.
    VerifyProbability(ProbArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fast,
    Iterative,
}

#[derive(clap::Args)]
struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "fast")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rounds for the iterative mode.
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: u32,
    /// Sidecar JSON path (default: <out>.json).
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Fixed,
    Refresh,
}

#[derive(Clone, Copy, ValueEnum)]
enum GuardArg {
    LastAccepted,
    LastEstimate,
}

#[derive(clap::Args)]
struct MitigateArgs {
    /// Input image (omit with --batch).
    #[arg(
        long = "in",
        required_unless_present = "batch",
        conflicts_with = "batch"
    )]
    input: Option<PathBuf>,
    /// Output image, or output directory with --batch.
    #[arg(long)]
    out: PathBuf,
    /// Kernel file or `ones:N`.
    #[arg(long, default_value = "ones:3")]
    kernel: String,
    /// Stop once the last k-1 labels agree.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// `jpeg:Q` or `mean:N`.
    #[arg(long, default_value = "jpeg:20")]
    soother: String,
    /// `toy:<gallery-dir>` or `cmd:<command>`.
    #[arg(long)]
    classifier: String,
    /// Per-step CSV (default: <out>.csv; ignored with --batch).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Run summary JSON (default: <out>.json; ignored with --batch).
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fixed")]
    boundary: BoundaryArg,
    #[arg(long, value_enum, default_value = "last-accepted")]
    guard_reference: GuardArg,
    /// Keep running when a step changes nothing.
    #[arg(long)]
    no_stall_stop: bool,
    /// Seconds to wait for each external classifier reply.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
    timeout: u64,
    /// Directory receiving the JPEG bytes of every step (jpeg soother only).
    #[arg(long)]
    emit_jpeg: Option<PathBuf>,
    /// Mitigate every PNG/PNM in this directory; outputs go to --out.
    #[arg(long)]
    batch: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Heat map output (PGM).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ones:3")]
    kernel: String,
    /// Magnitude JSON (default: <out>.json).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SootheArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "jpeg:20")]
    soother: String,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(clap::Args)]
struct ProbArgs {
    /// Window side length.
    #[arg(long, default_value_t = 3)]
    n: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Perturb(a) => cmd_perturb(a),
        Command::Mitigate(a) => cmd_mitigate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Soothe(a) => cmd_soothe(a),
        Command::Stats(a) => cmd_stats(a),
        Command::VerifyProbability(a) => cmd_verify_probability(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_perturb(a: PerturbArgs) -> Result<()> {
    let clean = load_image(&a.input)?;
    let spec = match a.mode {
        ModeArg::Fast => AttackSpec::fast(a.epsilon, a.seed),
        ModeArg::Iterative => AttackSpec::iterative(a.epsilon, a.iterations, a.seed),
    };
    let perturbed = synth_perturb(&clean, &spec)?;
    save_image(&perturbed.image, &a.out)?;
    let sidecar = a.sidecar.unwrap_or_else(|| with_ext(&a.out, "json"));
    write_json(
        &sidecar,
        &json!({
            "input": a.input,
            "output": a.out,
            "spec": spec,
            "saturation": saturation_stats(&perturbed.image.rounded()),
            "prng": PRNG_ID,
        }),
    )
}

enum ClassifierSpec {
    Toy(ToyClassifier),
    Cmd(String),
}

impl ClassifierSpec {
    fn parse(s: &str) -> Result<Self> {
        if let Some(dir) = s.strip_prefix("toy:") {
            Ok(Self::Toy(ToyClassifier::from_dir(dir)?))
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            Ok(Self::Cmd(cmd.to_string()))
        } else {
            bail!("classifier {s:?}: expected toy:<gallery-dir> or cmd:<command>")
        }
    }

    fn instantiate(&self, timeout: Duration) -> Result<Box<dyn Classifier + Send>> {
        Ok(match self {
            Self::Toy(t) => Box::new(t.clone()),
            Self::Cmd(c) => Box::new(ExternalClassifier::spawn(c, timeout)?),
        })
    }
}

struct Job {
    input: PathBuf,
    output: PathBuf,
    trace: PathBuf,
    summary: PathBuf,
    jpeg_dir: Option<PathBuf>,
}

/// The run summary with the full step trace attached.
#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    summary: RunSummary,
    trace: &'a [StepRecord],
}

struct Shared<'a> {
    kernel: &'a Kernel,
    kernel_name: &'a str,
    config: MitigationConfig,
    soother: &'a Soother,
    classifier_name: &'a str,
    classifier: &'a ClassifierSpec,
    timeout: Duration,
}

fn run_job(job: &Job, sh: &Shared) -> Result<()> {
    let input = load_image(&job.input)?;
    let mut classifier = sh.classifier.instantiate(sh.timeout)?;
    if let Some(dir) = &job.jpeg_dir {
        fs::create_dir_all(dir)?;
    }
    let quality = match sh.soother {
        Soother::Jpeg { quality } => Some(*quality),
        Soother::Mean(_) => None,
    };
    let mut emit_err = None;
    let result = run_mitigation_observed(
        &input,
        sh.kernel,
        &sh.config,
        sh.soother,
        classifier.as_mut(),
        |state, outcome| {
            let (Some(dir), Some(q)) = (&job.jpeg_dir, quality) else {
                return;
            };
            if emit_err.is_some() {
                return;
            }
            let path = dir.join(format!("step_{:03}.jpg", outcome.step));
            if let Err(e) = jpeg_bytes(state.current(), q)
                .map_err(anyhow::Error::from)
                .and_then(|b| fs::write(&path, b).map_err(Into::into))
            {
                emit_err = Some(e);
            }
        },
    )
    .with_context(|| format!("mitigating {}", job.input.display()))?;
    if let Some(e) = emit_err {
        return Err(e.context("writing step JPEG"));
    }

    save_image(&result.final_image, &job.output)?;
    let file =
        fs::File::create(&job.trace).with_context(|| format!("writing {}", job.trace.display()))?;
    write_curve_csv(&accuracy_curve(&result), file)?;

    let last = result.trace.last();
    let summary = RunSummary {
        input: job.input.display().to_string(),
        output: job.output.display().to_string(),
        stop_reason: result.stop_reason,
        steps_run: result.steps_run,
        k: sh.config.k,
        max_steps: sh.config.max_steps,
        boundary: sh.config.boundary,
        guard_reference: sh.config.guard_reference,
        kernel: sh.kernel_name.to_string(),
        kernel_size: sh.kernel.size(),
        kernel_weight_sum: sh.kernel.weight_sum(),
        soother: sh.soother.to_string(),
        classifier: sh.classifier_name.to_string(),
        encoder_settings: JPEG_ENCODER_SETTINGS.to_string(),
        prng: PRNG_ID.to_string(),
        final_label: last.map(|r| r.label.clone()),
        final_confidence: last.map(|r| r.confidence),
    };
    write_json(
        &job.summary,
        &SummaryFile {
            summary,
            trace: &result.trace,
        },
    )
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "pgm" | "ppm" | "pnm")
    )
}

fn cmd_mitigate(a: MitigateArgs) -> Result<()> {
    let kernel = Kernel::from_spec(&a.kernel)?;
    let soother: Soother = a.soother.parse()?;
    let classifier = ClassifierSpec::parse(&a.classifier)?;
    let config = MitigationConfig {
        k: a.k,
        max_steps: a.max_steps,
        boundary: match a.boundary {
            BoundaryArg::Fixed => BoundaryMode::Fixed,
            BoundaryArg::Refresh => BoundaryMode::Refresh,
        },
        guard_reference: match a.guard_reference {
            GuardArg::LastAccepted => GuardReference::LastAccepted,
            GuardArg::LastEstimate => GuardReference::LastEstimate,
        },
        stop_on_stall: !a.no_stall_stop,
    };
    config.validate()?;
    let shared = Shared {
        kernel: &kernel,
        kernel_name: &a.kernel,
        config,
        soother: &soother,
        classifier_name: &a.classifier,
        classifier: &classifier,
        timeout: Duration::from_secs(a.timeout),
    };

    let Some(batch) = &a.batch else {
        let input = a.input.clone().expect("clap enforces --in without --batch");
        let job = Job {
            trace: a.trace.clone().unwrap_or_else(|| with_ext(&a.out, "csv")),
            summary: a
                .summary
                .clone()
                .unwrap_or_else(|| with_ext(&a.out, "json")),
            jpeg_dir: a.emit_jpeg.clone(),
            input,
            output: a.out.clone(),
        };
        return run_job(&job, &shared);
    };

    let mut inputs: Vec<PathBuf> = fs::read_dir(batch)
        .with_context(|| format!("reading {}", batch.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    inputs.retain(|p| p.is_file() && is_image(p));
    inputs.sort();
    fs::create_dir_all(&a.out)?;
    let jobs: Vec<Job> = inputs
        .into_iter()
        .map(|input| {
            let stem = input
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            Job {
                output: a.out.join(format!("{stem}.png")),
                trace: a.out.join(format!("{stem}.csv")),
                summary: a.out.join(format!("{stem}.json")),
                jpeg_dir: a.emit_jpeg.as_ref().map(|d| d.join(&stem)),
                input,
            }
        })
        .collect();

    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(workers).max(1);
    let failures: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                let shared = &shared;
                s.spawn(move || {
                    part.iter()
                        .filter_map(|job| run_job(job, shared).err().map(|e| format!("{e:#}")))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap_or_else(|_| vec!["worker panicked".into()]))
            .collect()
    });
    if !failures.is_empty() {
        bail!(
            "{} of {} images failed:\n{}",
            failures.len(),
            jobs.len(),
            failures.join("\n")
        );
    }
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let img = load_image(&a.input)?;
    let kernel = Kernel::from_spec(&a.kernel)?;
    let est = estimate(&img, &kernel);
    save_image(&est.heat_image(), &a.out)?;
    let path = a.json.unwrap_or_else(|| with_ext(&a.out, "json"));
    write_json(
        &path,
        &json!({
            "input": a.input,
            "kernel": a.kernel,
            "mag_sub": est.mag_subtract(),
            "mag_add": est.mag_add(),
            "subtract_count": est.count(xmas_core::Direction::Subtract),
            "add_count": est.count(xmas_core::Direction::Add),
            "none_count": est.count(xmas_core::Direction::None),
        }),
    )
}

fn cmd_soothe(a: SootheArgs) -> Result<()> {
    let img = load_image(&a.input)?;
    let soother: Soother = a.soother.parse()?;
    save_image(&soother.apply(&img)?, &a.out)?;
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let img: ImageBuffer = load_image(&a.input)?;
    println!("{}", serde_json::to_string_pretty(&saturation_stats(&img))?);
    Ok(())
}

fn cmd_verify_probability(a: ProbArgs) -> Result<()> {
    let n = a.n;
    let equal = exact_equal_prob(n, 3)?;
    let reduce = exact_strict_reduction_prob(n)?;
    println!("window {n}x{n}, samples drawn from {{-eps, 0, +eps}} with probability 1/3 each");
    println!(
        "{:<28} {:>14} {:>22} {:>10}",
        "event", "exact", "decimal", "quoted"
    );
    println!(
        "{:<28} {:>14} {:>22.12e} {:>10}",
        "window mean == +eps",
        equal.to_string(),
        to_f64(equal),
        if n == 3 { "about 5e-5" } else { "-" }
    );
    println!(
        "{:<28} {:>14} {:>22.12} {:>10}",
        "|window mean| < eps",
        reduce.to_string(),
        to_f64(reduce),
        if n == 3 { "~0.9999" } else { "-" }
    );
    Ok(())
}
