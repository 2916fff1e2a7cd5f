//! Machine-readable run reports: the per-step curve as CSV and the run
//! summary as JSON.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mitigator::{
    BoundaryMode, GuardReference, MitigationConfig, MitigationResult, StopReason,
};

/// One CSV row, header `step,label,confidence,mag_sub,mag_add,held`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub label: String,
    pub confidence: f64,
    pub mag_sub: f64,
    pub mag_add: f64,
    pub held: usize,
}

pub fn accuracy_curve(result: &MitigationResult) -> Vec<CurveRow> {
    result
        .trace
        .iter()
        .map(|r| CurveRow {
            step: r.step,
            label: r.label.clone(),
            confidence: r.confidence,
            mag_sub: r.mag_sub,
            mag_add: r.mag_add,
            held: r.held,
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    // header is emitted with the first row; keep it for empty traces too
    if rows.is_empty() {
        w.write_record(["step", "label", "confidence", "mag_sub", "mag_add", "held"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: Read>(input: R) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub input: String,
    pub output: String,
    pub stop_reason: StopReason,
    pub steps_run: usize,
    pub k: usize,
    pub max_steps: usize,
    pub boundary: BoundaryMode,
    pub guard_reference: GuardReference,
    pub kernel: String,
    pub kernel_size: usize,
    pub kernel_weight_sum: f64,
    pub soother: String,
    pub classifier: String,
    pub encoder_settings: String,
    pub prng: String,
    pub final_label: Option<String>,
    pub final_confidence: Option<f64>,
}

impl RunSummary {
    pub fn config(&self) -> MitigationConfig {
        MitigationConfig {
            k: self.k,
            max_steps: self.max_steps,
            boundary: self.boundary,
            guard_reference: self.guard_reference,
            ..Default::default()
        }
    }
}
