use proptest::prelude::*;
use xmas_core::mitigator::DEFAULT_MAX_STEPS;
use xmas_core::*;

fn fixed_label(_: &ImageBuffer) -> Result<PredictionRecord, ClassifierError> {
    PredictionRecord::new("x", 1.0)
}

fn deep() -> MitigationConfig {
    MitigationConfig {
        k: DEFAULT_MAX_STEPS + 1,
        ..Default::default()
    }
}

#[test]
fn error_budget_on_interior() {
    let kernel = Kernel::ones(3).unwrap();
    let clean =
        ImageBuffer::from_fn(20, 20, 1, |r, c, _| 70.0 + 3.0 * r as f64 + 2.0 * c as f64).unwrap();
    for seed in 0..15 {
        for eps in [8.0, 24.0, 48.0] {
            let adv = synth_perturb(&clean, &AttackSpec::fast(eps, seed)).unwrap();
            let r = run_mitigation(
                &adv.image,
                &kernel,
                &deep(),
                &Soother::Mean(Kernel::identity()),
                &mut fixed_label,
            )
            .unwrap();
            let smoothed_delta = convolve_mean(&adv.image, &kernel);
            for row in 1..19 {
                for col in 1..19 {
                    let i = row * 20 + col;
                    let err = r.final_image.samples()[i] - clean.samples()[i];
                    assert!(
                        err.abs() <= eps,
                        "seed {seed} eps {eps} ({row},{col}): {err}"
                    );
                    // W_avg*δ on the same side as δ keeps the polarity
                    let wd = smoothed_delta.samples()[i] - clean.samples()[i];
                    match adv.signs[i] {
                        1 if wd >= 0.0 => assert!(err >= 0.0),
                        -1 if wd <= 0.0 => assert!(err <= 0.0),
                        _ => {}
                    }
                }
            }
        }
    }
}

#[test]
fn update_path_ignores_the_soother() {
    let kernel = Kernel::ones(3).unwrap();
    let clean = ImageBuffer::from_fn(32, 32, 3, |r, c, ch| {
        60.0 + 3.0 * r as f64 + 2.0 * c as f64 + 5.0 * ch as f64
    })
    .unwrap();
    let adv = synth_perturb(&clean, &AttackSpec::iterative(32.0, 10, 3))
        .unwrap()
        .image;
    let run = |soother: Soother| {
        let mut saturated_at = None;
        let mut images = Vec::new();
        let r = run_mitigation_observed(
            &adv,
            &kernel,
            &deep(),
            &soother,
            &mut fixed_label,
            |state, out| {
                if saturated_at.is_none() && out.step > 0 && out.held + out.skipped == out.active()
                {
                    saturated_at = Some(out.step);
                }
                images.push(state.current().clone());
            },
        )
        .unwrap();
        (r.stop_reason, saturated_at, images)
    };
    let jpeg = run(Soother::Jpeg { quality: 20 });
    let mean = run(Soother::Mean(Kernel::ones(3).unwrap()));
    assert_eq!(jpeg.0, mean.0);
    assert!(jpeg.1.is_some());
    assert_eq!(jpeg.1, mean.1);
    assert_eq!(jpeg.2, mean.2);
}

#[test]
fn benign_constant_runs_stay_put() {
    let kernel = Kernel::ones(3).unwrap();
    let img = ImageBuffer::filled(20, 20, 3, 101.0).unwrap();
    let r = run_mitigation(
        &img,
        &kernel,
        &MitigationConfig::default(),
        &Soother::default(),
        &mut fixed_label,
    )
    .unwrap();
    assert!(r.steps_run <= MitigationConfig::default().k);
    assert_eq!(r.final_image, img);
}

#[test]
fn mitigation_reduces_linf_error_on_flat_base() {
    let kernel = Kernel::ones(3).unwrap();
    let clean = ImageBuffer::filled(24, 24, 1, 100.0).unwrap();
    let scenes = [
        ImageBuffer::filled(24, 24, 1, 100.0).unwrap(),
        ImageBuffer::filled(24, 24, 1, 200.0).unwrap(),
    ];
    let mut toy = ToyClassifier::new([("dim", &scenes[0]), ("bright", &scenes[1])]).unwrap();
    let config = MitigationConfig {
        max_steps: 100,
        ..Default::default()
    };
    for seed in 0..20 {
        let adv = synth_perturb(&clean, &AttackSpec::fast(32.0, seed)).unwrap();
        let r =
            run_mitigation(&adv.image, &kernel, &config, &Soother::default(), &mut toy).unwrap();
        // with a constant label the run ends after k-1 predictions
        assert_eq!(r.steps_run, config.k - 1);
        let interior = |img: &ImageBuffer| {
            let mut m = 0.0f64;
            for row in 1..23 {
                for col in 1..23 {
                    m = m.max((img.get(row, col, 0) - 100.0).abs());
                }
            }
            m
        };
        assert!(linf_distance(&r.final_image, &clean).unwrap() <= 32.0);
        assert!(interior(&r.final_image) <= interior(&adv.image));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn samples_never_cross_their_boundary(
        seed in any::<u64>(),
        eps in prop::sample::select(vec![0.0, 4.0, 8.0, 16.0, 32.0, 64.0]),
        iterative in any::<bool>(),
        gray in any::<bool>(),
        n in prop::sample::select(vec![3usize, 5]),
    ) {
        let kernel = Kernel::ones(n).unwrap();
        let c = if gray { 1 } else { 3 };
        let clean = ImageBuffer::from_fn(14, 11, c, |r, col, ch| ((r * 17 + col * 29 + ch * 7) % 180) as f64 + 30.0).unwrap();
        let spec = if iterative { AttackSpec::iterative(eps, 5, seed) } else { AttackSpec::fast(eps, seed) };
        let adv = synth_perturb(&clean, &spec).unwrap().image;
        let boundary = convolve_mean(&adv, &kernel);
        let mut violations = 0;
        let r = run_mitigation_observed(&adv, &kernel, &deep(), &Soother::Mean(Kernel::identity()), &mut fixed_label, |state, _| {
            for ((x0, x), b) in adv.samples().iter().zip(state.current().samples()).zip(boundary.samples()) {
                let crossed = (x0 > b && x <= b) || (x0 < b && x >= b) || (x0 == b && x != x0);
                violations += usize::from(crossed);
            }
        }).unwrap();
        prop_assert_eq!(violations, 0);
        prop_assert!(r.steps_run <= DEFAULT_MAX_STEPS);
        prop_assert_eq!(r.trace.len(), r.steps_run);
    }
}
