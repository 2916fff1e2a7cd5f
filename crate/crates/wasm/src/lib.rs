//! Browser bindings: perturb-and-mitigate, the estimate heat map, and the
//! exact window probabilities.
//!
//! Each export is a thin wrapper over a plain function that also builds
//! natively, so the logic is testable without a JS host.

use wasm_bindgen::prelude::*;
use xmas_core::probability::{exact_equal_prob, exact_strict_reduction_prob, to_f64};
use xmas_core::{
    estimate, linf_distance, run_mitigation, synth_perturb, AttackSpec, ImageBuffer, Kernel,
    MitigationConfig, Soother, StopReason, ToyClassifier,
};

/// Canvas RGBA to a 3-channel buffer; alpha is dropped.
pub fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<ImageBuffer, String> {
    if rgba.len() != width * height * 4 {
        return Err(format!(
            "expected {} RGBA bytes for {width}x{height}, got {}",
            width * height * 4,
            rgba.len()
        ));
    }
    let rgb: Vec<u8> = rgba
        .chunks_exact(4)
        .flat_map(|px| [px[0], px[1], px[2]])
        .collect();
    ImageBuffer::from_bytes(width, height, 3, &rgb).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub label: String,
    pub confidence: f64,
    pub mag_sub: f64,
    pub mag_add: f64,
    pub updated: usize,
    pub held: usize,
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub perturbed: ImageBuffer,
    pub mitigated: ImageBuffer,
    pub linf_before: f64,
    pub linf_after: f64,
    pub mae_before: f64,
    pub mae_after: f64,
    pub stop_reason: StopReason,
    pub steps: Vec<StepRow>,
}

#[derive(Debug, Clone, Copy)]
pub struct DemoParams {
    pub epsilon: f64,
    pub iterative: bool,
    pub seed: u64,
    pub kernel_size: usize,
    pub k: usize,
    pub max_steps: usize,
    pub jpeg_quality: u8,
}

/// Perturbs `clean`, then mitigates it. The classifier is a two-image toy
/// gallery (`clean` vs `adversarial`), so the label trace shows when the
/// soothed image drifts back toward the original.
pub fn perturb_and_mitigate(clean: &ImageBuffer, p: DemoParams) -> Result<DemoOutcome, String> {
    let spec = if p.iterative {
        AttackSpec::iterative(p.epsilon, xmas_core::attack::DEFAULT_ITERATIONS, p.seed)
    } else {
        AttackSpec::fast(p.epsilon, p.seed)
    };
    let perturbed = synth_perturb(clean, &spec)
        .map_err(|e| e.to_string())?
        .image;
    let kernel = Kernel::ones(p.kernel_size).map_err(|e| e.to_string())?;
    let config = MitigationConfig {
        k: p.k,
        max_steps: p.max_steps,
        ..Default::default()
    };
    let soother = Soother::Jpeg {
        quality: p.jpeg_quality,
    };
    let mut classifier = ToyClassifier::new([("clean", clean), ("adversarial", &perturbed)])
        .map_err(|e| e.to_string())?;
    let result = run_mitigation(&perturbed, &kernel, &config, &soother, &mut classifier)
        .map_err(|e| e.to_string())?;
    let steps = result
        .trace
        .iter()
        .map(|r| StepRow {
            step: r.step,
            label: r.label.clone(),
            confidence: r.confidence,
            mag_sub: r.mag_sub,
            mag_add: r.mag_add,
            updated: r.updated,
            held: r.held,
        })
        .collect();
    Ok(DemoOutcome {
        mae_before: mean_abs_error(clean, &perturbed),
        mae_after: mean_abs_error(clean, &result.final_image),
        linf_before: linf_distance(clean, &perturbed).map_err(|e| e.to_string())?,
        linf_after: linf_distance(clean, &result.final_image).map_err(|e| e.to_string())?,
        perturbed,
        mitigated: result.final_image,
        stop_reason: result.stop_reason,
        steps,
    })
}

fn mean_abs_error(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let n = a.samples().len().max(1) as f64;
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n
}

/// Heat map of `|X - W_avg * X|` plus the two direction magnitudes.
pub fn heat_map(img: &ImageBuffer, kernel_size: usize) -> Result<(ImageBuffer, f64, f64), String> {
    let kernel = Kernel::ones(kernel_size).map_err(|e| e.to_string())?;
    let est = estimate(img, &kernel);
    Ok((est.heat_image(), est.mag_subtract(), est.mag_add()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    pub equal: String,
    pub equal_decimal: f64,
    pub reduction: String,
    pub reduction_decimal: f64,
}

pub fn probability_row(n: usize) -> Result<ProbabilityRow, String> {
    let equal = exact_equal_prob(n, 3).map_err(|e| e.to_string())?;
    let reduction = exact_strict_reduction_prob(n).map_err(|e| e.to_string())?;
    Ok(ProbabilityRow {
        equal: equal.to_string(),
        equal_decimal: to_f64(equal),
        reduction: reduction.to_string(),
        reduction_decimal: to_f64(reduction),
    })
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

fn stop_name(r: StopReason) -> &'static str {
    match r {
        StopReason::ConvergedPredictions => "CONVERGED_PREDICTIONS",
        StopReason::MaxSteps => "MAX_STEPS",
        StopReason::MagnitudeStall => "MAGNITUDE_STALL",
    }
}

#[wasm_bindgen]
pub struct DemoRun {
    inner: DemoOutcome,
}

#[wasm_bindgen]
impl DemoRun {
    #[wasm_bindgen(getter)]
    pub fn perturbed(&self) -> Vec<u8> {
        self.inner.perturbed.to_rgba()
    }

    #[wasm_bindgen(getter)]
    pub fn mitigated(&self) -> Vec<u8> {
        self.inner.mitigated.to_rgba()
    }

    #[wasm_bindgen(getter, js_name = linfBefore)]
    pub fn linf_before(&self) -> f64 {
        self.inner.linf_before
    }

    #[wasm_bindgen(getter, js_name = linfAfter)]
    pub fn linf_after(&self) -> f64 {
        self.inner.linf_after
    }

    #[wasm_bindgen(getter, js_name = maeBefore)]
    pub fn mae_before(&self) -> f64 {
        self.inner.mae_before
    }

    #[wasm_bindgen(getter, js_name = maeAfter)]
    pub fn mae_after(&self) -> f64 {
        self.inner.mae_after
    }

    #[wasm_bindgen(getter, js_name = stopReason)]
    pub fn stop_reason(&self) -> String {
        stop_name(self.inner.stop_reason).into()
    }

    #[wasm_bindgen(getter, js_name = stepCount)]
    pub fn step_count(&self) -> usize {
        self.inner.steps.len()
    }

    /// Tab-separated `step label confidence mag_sub mag_add updated held`.
    #[wasm_bindgen(js_name = stepRow)]
    pub fn step_row(&self, i: usize) -> Option<String> {
        self.inner.steps.get(i).map(|r| {
            format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
                r.step, r.label, r.confidence, r.mag_sub, r.mag_add, r.updated, r.held
            )
        })
    }
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn run_demo(
    width: usize,
    height: usize,
    rgba: &[u8],
    epsilon: f64,
    iterative: bool,
    seed: u32,
    kernel_size: usize,
    k: usize,
    max_steps: usize,
    jpeg_quality: u8,
) -> Result<DemoRun, JsError> {
    let clean = from_rgba(width, height, rgba).map_err(js_err)?;
    let params = DemoParams {
        epsilon,
        iterative,
        seed: u64::from(seed),
        kernel_size,
        k,
        max_steps,
        jpeg_quality,
    };
    perturb_and_mitigate(&clean, params)
        .map(|inner| DemoRun { inner })
        .map_err(js_err)
}

#[wasm_bindgen]
pub struct HeatMap {
    rgba: Vec<u8>,
    mag_sub: f64,
    mag_add: f64,
}

#[wasm_bindgen]
impl HeatMap {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter, js_name = magSub)]
    pub fn mag_sub(&self) -> f64 {
        self.mag_sub
    }

    #[wasm_bindgen(getter, js_name = magAdd)]
    pub fn mag_add(&self) -> f64 {
        self.mag_add
    }
}

#[wasm_bindgen]
pub fn estimate_heat(
    width: usize,
    height: usize,
    rgba: &[u8],
    kernel_size: usize,
) -> Result<HeatMap, JsError> {
    let img = from_rgba(width, height, rgba).map_err(js_err)?;
    let (heat, mag_sub, mag_add) = heat_map(&img, kernel_size).map_err(js_err)?;
    Ok(HeatMap {
        rgba: heat.to_rgba(),
        mag_sub,
        mag_add,
    })
}

/// `[equal, equal_decimal, reduction, reduction_decimal]` as strings.
#[wasm_bindgen]
pub fn window_probability(n: usize) -> Result<Vec<String>, JsError> {
    let row = probability_row(n).map_err(js_err)?;
    Ok(vec![
        row.equal,
        format!("{:.6e}", row.equal_decimal),
        row.reduction,
        format!("{:.9}", row.reduction_decimal),
    ])
}
