use aescope_core::assistant::{extract_protocol, propose_plan, AssistantError, AssistantExchange, MockClient, Role};
use aescope_core::be::BeParams;
use aescope_core::tools::{build_tool_registry, DiagnosticCode};
use aescope_core::workflow::{parse_plan, validate_plan, PlanSource, WorkflowPlan};
use serde_json::json;
use std::path::PathBuf;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"))
}

/// Compares against the pinned document; `AESCOPE_BLESS=1` rewrites it.
fn check_golden(name: &str, plan: &WorkflowPlan) {
    let path = golden_path(name);
    let doc = plan.to_document();
    if std::env::var_os("AESCOPE_BLESS").is_some() {
        std::fs::write(&path, &doc).unwrap();
    }
    let pinned = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc, pinned, "{name} drifted from its golden file");
    assert_eq!(&parse_plan(&pinned).unwrap(), plan);
}

fn propose(instruction: &str) -> AssistantExchange {
    let ex = propose_plan(instruction, AssistantExchange::default(), &MockClient).unwrap();
    assert!(ex.is_executable());
    let plan = ex.proposed.as_ref().unwrap();
    validate_plan(plan, build_tool_registry()).unwrap();
    assert_eq!(plan.metadata.source, PlanSource::Assistant);
    ex
}

fn ops(plan: &WorkflowPlan) -> Vec<&str> {
    plan.steps.iter().map(|s| s.op.as_str()).collect()
}

#[test]
fn tip_move() {
    let ex = propose("move the tip to (2.5, 1.0) µm");
    let plan = ex.proposed.as_ref().unwrap();
    assert_eq!(ops(plan), ["tip_control"]);
    assert_eq!(plan.steps[0].params["x_um"], json!(2.5));
    assert_eq!(plan.steps[0].params["y_um"], json!(1.0));
    check_golden("tip_move", plan);
}

#[test]
fn be_parameters_leave_five_defaults() {
    let ex = propose("set the BE amplitude to 1 V and the center frequency to 380 kHz");
    let plan = ex.proposed.as_ref().unwrap();
    assert_eq!(ops(plan), ["define_be_parms"]);
    let given: aescope_core::be::PartialBeParams =
        serde_json::from_value(serde_json::to_value(&plan.steps[0].params).unwrap()).unwrap();
    let r = given.resolve();
    let d = BeParams::default();
    assert_eq!((r.center_frequency_khz, r.amplitude_v), (380.0, 1.0));
    assert_eq!(
        (r.band_width_khz, r.num_bins, r.repeats, r.duration_ms, r.waveform),
        (d.band_width_khz, d.num_bins, d.repeats, d.duration_ms, d.waveform)
    );
    check_golden("be_parameters", plan);
}

#[test]
fn line_scan() {
    let ex = propose("perform a BE line scan from (1,1) to (5,5) µm with center frequency 380 kHz");
    let plan = ex.proposed.as_ref().unwrap();
    assert_eq!(ops(plan), ["define_be_parms", "do_line_scan"]);
    assert_eq!(plan.steps[0].params.len(), 1);
    assert_eq!(plan.steps[0].params["center_frequency_khz"], json!(380.0));
    assert_eq!(plan.steps[1].params["start"], json!([1.0, 1.0]));
    assert_eq!(plan.steps[1].params["end"], json!([5.0, 5.0]));
    assert_eq!(ex.repair_turns, 0);
    check_golden("line_scan", plan);
}

#[test]
fn spiral_with_bias_is_repaired() {
    let ex = propose("conduct a spiral scan with 5 V on the tip");
    assert_eq!(ex.repair_turns, 1);
    let first: WorkflowPlan = ex
        .conversation
        .iter()
        .find(|t| t.role == Role::Assistant)
        .map(|t| parse_plan(&t.content).unwrap())
        .unwrap();
    let diags = validate_plan(&first, build_tool_registry()).unwrap_err();
    assert_eq!(diags.len(), 1);
    assert_eq!(diags[0].code, DiagnosticCode::UnknownParameter);
    assert_eq!(diags[0].param.as_deref(), Some("tip_voltage_v"));

    let plan = ex.proposed.as_ref().unwrap();
    assert_eq!(ops(plan), ["define_be_parms", "set_tip_bias", "spiral_waveform", "do_trajectory_scan"]);
    assert_eq!(plan.steps[1].params["bias_v"], json!(5.0));
    let spiral = &plan.steps[2];
    assert!(spiral.params.keys().all(|k| !k.contains("volt") && !k.ends_with("_v")));
    assert_eq!(plan.steps[3].bindings["trajectory"].step, "path");
    check_golden("spiral_bias", plan);
}

#[test]
fn wall_study_request() {
    let ex = propose("run a domain wall study: find the walls, do BEPS on them, switch them with pulses and re-image");
    let plan = ex.proposed.as_ref().unwrap();
    let o = ops(plan);
    assert_eq!(&o[..5], ["define_be_parms", "raster_scan", "detect_domain_walls", "select_wall_points", "do_beps_specific"]);
    assert_eq!(o.last(), Some(&"raster_scan"));
    assert_eq!(plan.steps[2].bindings["image"].output, "phase");
    check_golden("wall_study", plan);
}

#[test]
fn unrecognised_request_is_unparseable() {
    let e = propose_plan("sing me a song", AssistantExchange::default(), &MockClient).unwrap_err();
    assert_eq!(e.code(), "unparseable-reply");
    let AssistantError::UnparseableReply(ex) = e else { unreachable!() };
    assert_eq!(ex.repair_turns, 2);
    assert!(ex.proposed.is_none());
}

#[test]
fn protocol_extraction_fixture() {
    let src = "BE-PFM was performed with a 1 V ac drive at a center frequency of 350 kHz";
    let x = extract_protocol(src, &MockClient).unwrap();
    assert_eq!(x.params.amplitude_v, Some(1.0));
    assert_eq!(x.params.center_frequency_khz, Some(350.0));
    assert_eq!(x.spans.len(), 2);
    for s in &x.spans {
        let quoted: String = src.chars().skip(s.start).take(s.end - s.start).collect();
        assert_eq!(quoted, s.quote);
    }
    let amp = x.spans.iter().find(|s| s.name == "amplitude_v").unwrap();
    assert_eq!((amp.start, amp.end), (28, 40));
    let cf = x.spans.iter().find(|s| s.name == "center_frequency_khz").unwrap();
    assert_eq!((cf.start, cf.end), (46, 73));
    assert_eq!(ops(&x.plan), ["define_be_parms", "raster_scan"]);
    validate_plan(&x.plan, build_tool_registry()).unwrap();
    assert_eq!(x.params.resolve().band_width_khz, BeParams::default().band_width_khz);
}

#[test]
fn protocol_without_settings_is_empty() {
    let x = extract_protocol("The film was grown by pulsed laser deposition on SrTiO3.", &MockClient).unwrap();
    assert!(x.is_empty());
    assert!(x.plan.steps[0].params.is_empty());
}
