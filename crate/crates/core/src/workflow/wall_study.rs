use super::plan::{PlanSource, Step, WorkflowPlan};
use crate::analysis::CannyParams;
use crate::be::PartialBeParams;
use crate::tools::default_bias_waveform;
use crate::trajectory::Region;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid wall-study parameter {field}: {reason}")]
pub struct WallStudyError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WallStudyParams {
    pub region: [f64; 4],
    /// `[ny, nx]` of both raster scans.
    pub scan_res: [usize; 2],
    pub canny: CannyParams,
    pub bias_waveform: Vec<f64>,
    pub pulse_v: f64,
    pub pulse_ms: f64,
    pub max_walls: usize,
    /// BE fields to set explicitly; the rest take defaults.
    pub be: PartialBeParams,
}

impl Default for WallStudyParams {
    fn default() -> Self {
        Self {
            region: [0.0, 0.0, 5.0, 5.0],
            scan_res: [64, 64],
            canny: CannyParams::default(),
            bias_waveform: default_bias_waveform(),
            pulse_v: 8.0,
            pulse_ms: 10.0,
            max_walls: 3,
            be: PartialBeParams::default(),
        }
    }
}

/// Scan, find walls, BEPS at a uniform-stride subset of wall points, pulse
/// each of them, then scan again.
pub fn wall_study_plan(p: &WallStudyParams) -> Result<WorkflowPlan, WallStudyError> {
    let bad = |field, reason: String| Err(WallStudyError { field, reason });
    let r = Region::new(p.region[0], p.region[1], p.region[2], p.region[3]);
    if !(p.region.iter().all(|v| v.is_finite()) && r.x1 > r.x0 && r.y1 > r.y0) {
        return bad("region", format!("{:?} is empty", p.region));
    }
    if p.scan_res.iter().any(|&n| n < 8) {
        return bad("scan_res", format!("{:?} is below 8x8", p.scan_res));
    }
    p.canny.validate().map_err(|e| WallStudyError { field: "canny", reason: e.to_string() })?;
    if p.bias_waveform.is_empty() || p.bias_waveform.iter().any(|v| !v.is_finite()) {
        return bad("bias_waveform", "must be a non-empty list of finite voltages".into());
    }
    if !p.pulse_v.is_finite() {
        return bad("pulse_v", format!("{} is not finite", p.pulse_v));
    }
    if !(p.pulse_ms.is_finite() && p.pulse_ms > 0.0) {
        return bad("pulse_ms", format!("{} must be positive", p.pulse_ms));
    }
    p.be.resolve().validate().map_err(|e| WallStudyError { field: "be", reason: e.to_string() })?;

    let [ny, nx] = p.scan_res;
    let scan = |id: &str| Step::new(id, "raster_scan").param("region", p.region.to_vec()).param("ny", ny).param("nx", nx);
    let mut be = Step::new("be", "define_be_parms");
    be.params = serde_json::to_value(p.be)
        .expect("BE params serialize")
        .as_object()
        .expect("object")
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    let mut plan = WorkflowPlan::new("wall-study", PlanSource::Human);
    plan.push(be);
    plan.push(scan("scan"));
    plan.push(
        Step::new("walls", "detect_domain_walls")
            .bind("image", "scan", "phase")
            .param("gaussian_sigma_px", p.canny.gaussian_sigma_px)
            .param("low_ratio", p.canny.low_ratio)
            .param("high_ratio", p.canny.high_ratio),
    );
    if p.max_walls == 0 {
        return Ok(plan);
    }
    plan.push(
        Step::new("select", "select_wall_points")
            .bind("coordinates", "walls", "coordinates")
            .bind("shape", "walls", "shape")
            .param("region", p.region.to_vec())
            .param("max_walls", p.max_walls),
    );
    plan.push(
        Step::new("beps", "do_beps_specific")
            .bind("locations", "select", "points_um")
            .param("bias_waveform", json!(p.bias_waveform)),
    );
    for k in 0..p.max_walls {
        plan.push(
            Step::new(&format!("move_{k}"), "tip_control")
                .bind("x_um", "select", &format!("x_{k}"))
                .bind("y_um", "select", &format!("y_{k}")),
        );
        plan.push(Step::new(&format!("pulse_{k}"), "apply_pulse").param("v", p.pulse_v).param("duration_ms", p.pulse_ms));
    }
    plan.push(scan("rescan"));
    Ok(plan)
}
