use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use xmas_core::image::encode_png;
use xmas_core::report::read_curve_csv;
use xmas_core::{load_image, save_image, ImageBuffer};

fn xmas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = xmas(args);
    assert!(
        out.status.success(),
        "xmas {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scene(kind: usize, size: usize) -> ImageBuffer {
    let s = size as f64;
    ImageBuffer::from_fn(size, size, 3, |r, c, ch| {
        let (y, x) = (r as f64 / s, c as f64 / s);
        let chf = ch as f64;
        match kind {
            0 => 40.0 + 170.0 * (0.5 * x + 0.5 * y) - 15.0 * chf,
            1 => 200.0 - 150.0 * x * y + 10.0 * chf,
            _ => 128.0 + 90.0 * (std::f64::consts::TAU * (x + 0.3 * chf)).sin(),
        }
        .round()
    })
    .unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn image(&self, name: &str, img: &ImageBuffer) -> PathBuf {
        let path = self.path(name);
        save_image(img, &path).unwrap();
        path
    }

    fn gallery(&self) -> PathBuf {
        let dir = self.path("gallery");
        fs::create_dir_all(&dir).unwrap();
        for (label, kind) in [("gradient", 0), ("saddle", 1), ("waves", 2)] {
            save_image(&scene(kind, 32), dir.join(format!("{label}.png"))).unwrap();
        }
        dir
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }
}

#[test]
fn perturb_with_zero_epsilon_is_identity() {
    let fx = Fixture::new();
    let input = fx.image("clean.png", &scene(0, 24));
    let out = fx.path("adv.png");
    ok(&[
        "perturb",
        "--in",
        p(&input),
        "--out",
        p(&out),
        "--epsilon",
        "0",
        "--seed",
        "9",
    ]);
    let expected = encode_png(&load_image(&input).unwrap()).unwrap();
    assert_eq!(fs::read(&out).unwrap(), expected);
    let sidecar = fx.json("adv.png.json");
    assert_eq!(sidecar["spec"]["epsilon"], 0.0);
    assert_eq!(sidecar["spec"]["seed"], 9);
    assert!(sidecar["prng"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn larger_epsilon_saturates_more_tuples() {
    let fx = Fixture::new();
    let input = fx.image("clean.png", &scene(1, 40));
    let saturated = |eps: &str| {
        let out = fx.path(&format!("adv{eps}.png"));
        ok(&[
            "perturb",
            "--in",
            p(&input),
            "--out",
            p(&out),
            "--epsilon",
            eps,
            "--mode",
            "fast",
            "--seed",
            "3",
        ]);
        let stats: Value = serde_json::from_str(&ok(&["stats", "--in", p(&out)])).unwrap();
        stats["black_tuples"].as_u64().unwrap() + stats["white_tuples"].as_u64().unwrap()
    };
    assert!(saturated("64") > saturated("16"));
}

#[test]
fn missing_input_flag_exits_2_with_usage() {
    let out = xmas(&["perturb", "--out", "x.png", "--epsilon", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unreadable_input_exits_1() {
    let fx = Fixture::new();
    let out = xmas(&["stats", "--in", p(&fx.path("missing.png"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_probability_prints_exact_values() {
    let text = ok(&["verify-probability", "--n", "3"]);
    assert!(text.contains("1/19683"), "{text}");
    assert!(text.contains("19681/19683"), "{text}");
    assert!(text.contains("0.999898"), "{text}");
    assert!(text.contains("about 5e-5"), "{text}");
}

#[test]
fn soothe_mean_1_is_identity() {
    let fx = Fixture::new();
    let img = scene(2, 20);
    let input = fx.image("in.png", &img);
    let out = fx.path("out.png");
    ok(&[
        "soothe",
        "--in",
        p(&input),
        "--out",
        p(&out),
        "--soother",
        "mean:1",
    ]);
    assert_eq!(load_image(&out).unwrap(), img);
}

#[test]
fn stats_on_black_counts_every_pixel() {
    let fx = Fixture::new();
    let input = fx.image("black.png", &ImageBuffer::filled(7, 5, 3, 0.0).unwrap());
    let stats: Value = serde_json::from_str(&ok(&["stats", "--in", p(&input)])).unwrap();
    assert_eq!(stats["black_tuples"], 35);
    assert_eq!(stats["white_tuples"], 0);
}

#[test]
fn estimate_writes_heat_map_and_magnitudes() {
    let fx = Fixture::new();
    let input = fx.image(
        "in.pgm",
        &ImageBuffer::from_fn(
            5,
            5,
            1,
            |r, c, _| {
                if (r, c) == (2, 2) {
                    109.0
                } else {
                    100.0
                }
            },
        )
        .unwrap(),
    );
    let out = fx.path("heat.pgm");
    ok(&["estimate", "--in", p(&input), "--out", p(&out)]);
    let heat = load_image(&out).unwrap();
    assert_eq!((heat.width(), heat.height(), heat.channels()), (5, 5, 1));
    assert_eq!(heat.get(2, 2, 0), 255.0);
    let mags = fx.json("heat.pgm.json");
    assert_eq!(mags["mag_sub"], 8.0);
    assert_eq!(mags["mag_add"], 1.0);
}

#[test]
fn mitigate_keeps_benign_constant_input() {
    let fx = Fixture::new();
    let gallery = fx.gallery();
    let img = ImageBuffer::filled(16, 16, 3, 90.0).unwrap();
    let input = fx.image("flat.png", &img);
    let out = fx.path("final.png");
    let classifier = format!("toy:{}", p(&gallery));
    ok(&[
        "mitigate",
        "--in",
        p(&input),
        "--out",
        p(&out),
        "--classifier",
        &classifier,
    ]);
    assert_eq!(load_image(&out).unwrap(), img);
    let summary = fx.json("final.png.json");
    assert!(summary["steps_run"].as_u64().unwrap() <= 5);
    assert_eq!(summary["k"], 5);
    assert_eq!(summary["max_steps"], 100);
    assert!(summary["encoder_settings"]
        .as_str()
        .unwrap()
        .contains("JpegEncoder"));
    assert!(summary["prng"].as_str().unwrap().contains("ChaCha8"));
}

fn attacked_fixture(fx: &Fixture) -> PathBuf {
    let clean = fx.image("clean.png", &scene(0, 32));
    let adv = fx.path("adv.png");
    ok(&[
        "perturb",
        "--in",
        p(&clean),
        "--out",
        p(&adv),
        "--epsilon",
        "32",
        "--seed",
        "11",
    ]);
    adv
}

#[test]
fn mitigate_trace_has_monotone_applied_magnitudes() {
    let fx = Fixture::new();
    let gallery = fx.gallery();
    let adv = attacked_fixture(&fx);
    let out = fx.path("final.png");
    let trace = fx.path("trace.csv");
    let classifier = format!("toy:{}", p(&gallery));
    ok(&[
        "mitigate",
        "--in",
        p(&adv),
        "--out",
        p(&out),
        "--classifier",
        &classifier,
        "--trace",
        p(&trace),
        "--k",
        "101",
        "--max-steps",
        "30",
        "--soother",
        "jpeg:20",
    ]);
    let text = fs::read_to_string(&trace).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("step,label,confidence,mag_sub,mag_add,held")
    );
    let rows = read_curve_csv(text.as_bytes()).unwrap();
    let summary = fx.json("final.png.json");
    let steps = summary["trace"].as_array().unwrap();
    assert_eq!(rows.len(), steps.len());
    assert_eq!(rows.len() as u64, summary["steps_run"].as_u64().unwrap());

    let mut last = (f64::INFINITY, f64::INFINITY);
    let mut applied = 0;
    for (row, step) in rows.iter().zip(steps) {
        // serde_json's default float parser may differ by one ulp
        assert!((row.mag_sub - step["mag_sub"].as_f64().unwrap()).abs() < 1e-12);
        assert!((row.mag_add - step["mag_add"].as_f64().unwrap()).abs() < 1e-12);
        if step["applied_sub"].as_bool().unwrap() {
            assert!(row.mag_sub <= last.0, "step {}: mag_sub rose", row.step);
            last.0 = row.mag_sub;
            applied += 1;
        }
        if step["applied_add"].as_bool().unwrap() {
            assert!(row.mag_add <= last.1, "step {}: mag_add rose", row.step);
            last.1 = row.mag_add;
            applied += 1;
        }
    }
    assert!(applied >= 4, "too few applied steps to be meaningful");
}

#[test]
fn external_child_reproduces_toy_trace() {
    let fx = Fixture::new();
    let gallery = fx.gallery();
    let adv = attacked_fixture(&fx);
    let common = ["--k", "4", "--max-steps", "12", "--soother", "mean:3"];

    let toy_out = fx.path("toy.png");
    let toy_trace = fx.path("toy.csv");
    let classifier = format!("toy:{}", p(&gallery));
    let mut args = vec![
        "mitigate",
        "--in",
        p(&adv),
        "--out",
        p(&toy_out),
        "--classifier",
        &classifier,
        "--trace",
        p(&toy_trace),
    ];
    args.extend(common);
    ok(&args);

    // replay the toy's answers from a child speaking the line protocol
    let rows = read_curve_csv(fs::File::open(&toy_trace).unwrap()).unwrap();
    let replies: String = rows
        .iter()
        .map(|r| format!("{} {}\n", r.label, r.confidence))
        .collect();
    let replies_path = fx.path("replies.txt");
    fs::write(&replies_path, replies).unwrap();
    let cmd = format!(
        "cmd:exec 3<'{}'; while read -r img; do test -f \"$img\" || exit 7; read -r reply <&3; echo \"$reply\"; done",
        p(&replies_path)
    );

    let ext_out = fx.path("ext.png");
    let ext_trace = fx.path("ext.csv");
    let mut args = vec![
        "mitigate",
        "--in",
        p(&adv),
        "--out",
        p(&ext_out),
        "--classifier",
        &cmd,
        "--trace",
        p(&ext_trace),
    ];
    args.extend(common);
    ok(&args);

    assert_eq!(
        fs::read_to_string(&ext_trace).unwrap(),
        fs::read_to_string(&toy_trace).unwrap()
    );
    assert_eq!(fs::read(&ext_out).unwrap(), fs::read(&toy_out).unwrap());
    let (a, b) = (fx.json("toy.png.json"), fx.json("ext.png.json"));
    assert_eq!(a["stop_reason"], b["stop_reason"]);
    assert_eq!(a["trace"], b["trace"]);
}

#[test]
fn classifier_failure_exits_1_with_step() {
    let fx = Fixture::new();
    let input = fx.image("in.png", &scene(1, 16));
    let out = xmas(&[
        "mitigate",
        "--in",
        p(&input),
        "--out",
        p(&fx.path("o.png")),
        "--classifier",
        "cmd:read -r img; echo 'label 0.5'; read -r img; echo garbage",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step 1"), "{err}");
}

#[test]
fn unknown_classifier_scheme_exits_1() {
    let fx = Fixture::new();
    let input = fx.image("in.png", &scene(1, 8));
    let out = xmas(&[
        "mitigate",
        "--in",
        p(&input),
        "--out",
        p(&fx.path("o.png")),
        "--classifier",
        "resnet",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn batch_processes_every_image_and_emits_jpeg() {
    let fx = Fixture::new();
    let gallery = fx.gallery();
    let batch = fx.path("batch");
    fs::create_dir_all(&batch).unwrap();
    for kind in 0..3 {
        save_image(&scene(kind, 16), batch.join(format!("img{kind}.png"))).unwrap();
    }
    fs::write(batch.join("notes.txt"), "skip me").unwrap();
    let out = fx.path("out");
    let jpegs = fx.path("jpegs");
    let classifier = format!("toy:{}", p(&gallery));
    ok(&[
        "mitigate",
        "--batch",
        p(&batch),
        "--out",
        p(&out),
        "--classifier",
        &classifier,
        "--emit-jpeg",
        p(&jpegs),
        "--max-steps",
        "3",
    ]);
    for kind in 0..3 {
        let stem = format!("img{kind}");
        assert!(out.join(format!("{stem}.png")).is_file());
        assert!(out.join(format!("{stem}.csv")).is_file());
        let summary: Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("{stem}.json"))).unwrap())
                .unwrap();
        let steps = summary["steps_run"].as_u64().unwrap();
        let emitted = fs::read_dir(jpegs.join(&stem)).unwrap().count() as u64;
        assert_eq!(emitted, steps);
        assert_eq!(
            &fs::read(jpegs.join(&stem).join("step_000.jpg")).unwrap()[..2],
            &[0xFF, 0xD8]
        );
    }
    assert!(!out.join("notes.png").exists());
}
