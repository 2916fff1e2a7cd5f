use xmas_core::ImageBuffer;
use xmas_wasm::{from_rgba, heat_map, perturb_and_mitigate, probability_row, DemoParams};

fn scene_rgba(size: usize) -> Vec<u8> {
    (0..size * size)
        .flat_map(|i| {
            let (r, c) = (i / size, i % size);
            [(40 + 3 * c) as u8, (60 + 2 * r) as u8, 120, 255]
        })
        .collect()
}

fn params(epsilon: f64) -> DemoParams {
    DemoParams {
        epsilon,
        iterative: false,
        seed: 5,
        kernel_size: 3,
        k: 5,
        max_steps: 40,
        jpeg_quality: 20,
    }
}

#[test]
fn rgba_roundtrip_drops_alpha() {
    let rgba = scene_rgba(6);
    let img = from_rgba(6, 6, &rgba).unwrap();
    assert_eq!(img.channels(), 3);
    assert_eq!(img.to_rgba(), rgba);
    assert!(from_rgba(6, 5, &rgba).is_err());
}

#[test]
fn demo_run_does_not_increase_error() {
    let clean = from_rgba(32, 32, &scene_rgba(32)).unwrap();
    let out = perturb_and_mitigate(&clean, params(24.0)).unwrap();
    assert_eq!(out.linf_before, 24.0);
    assert!(out.linf_after <= out.linf_before);
    assert!(out.mae_after < out.mae_before);
    assert!(!out.steps.is_empty() && out.steps.len() <= 40);
    assert!(out
        .steps
        .iter()
        .all(|s| s.label == "clean" || s.label == "adversarial"));
}

#[test]
fn demo_run_with_zero_epsilon_stays_put() {
    let clean = ImageBuffer::filled(16, 16, 3, 140.0).unwrap();
    let out = perturb_and_mitigate(&clean, params(0.0)).unwrap();
    assert_eq!(out.perturbed, clean);
    assert_eq!(out.mitigated, clean);
}

#[test]
fn heat_map_of_flat_image_is_black() {
    let flat = ImageBuffer::filled(8, 8, 3, 77.0).unwrap();
    let (heat, sub, add) = heat_map(&flat, 3).unwrap();
    assert!(heat.samples().iter().all(|&s| s == 0.0));
    assert_eq!((sub, add), (0.0, 0.0));
    assert!(heat_map(&flat, 4).is_err());
}

#[test]
fn probability_row_is_exact() {
    let row = probability_row(3).unwrap();
    assert_eq!(row.equal, "1/19683");
    assert_eq!(row.reduction, "19681/19683");
    assert!(probability_row(5).is_err());
}
