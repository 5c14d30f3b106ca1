use super::protocol::EXTRACTION_PREAMBLE;
use super::{AssistantError, LlmClient, Role, Turn, REPAIR_PREFIX};
use crate::workflow::{wall_study_plan, PlanSource, Step, WallStudyParams, WorkflowPlan};
use regex::{Captures, Regex};
use serde_json::{json, Value as Json};
use std::sync::OnceLock;

/// Deterministic stand-in for a chat model: a fixed table of regex rules
/// mapping an instruction to a plan template. The reply depends only on the
/// conversation it is given.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockClient;

const NUM: &str = r"(-?\d+(?:\.\d+)?)";

const FALLBACK: &str = "I can only propose plans built from the operations in the tool schemas. \
Could you describe the measurement in terms of moving the tip, setting band-excitation parameters, \
or running a line, raster, spiral, flower or domain-wall study?";

struct Patterns {
    wall: Regex,
    spiral: Regex,
    flower: Regex,
    line: Regex,
    raster: Regex,
    tip: Regex,
    point: Regex,
    from_to: Regex,
    volts: Regex,
    khz: Regex,
    amp: Regex,
    region: Regex,
    res: Regex,
    extract: Vec<(&'static str, Regex)>,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(&format!("(?i){s}")).expect("mock pattern");
        let pt = format!(r"\(\s*{NUM}\s*,\s*{NUM}\s*\)");
        Patterns {
            wall: re(r"domain[- ]wall|wall study"),
            spiral: re(r"\bspiral\b"),
            flower: re(r"\bflower\b"),
            line: re(r"\bline scan\b"),
            raster: re(r"\braster\b|\bimage\b"),
            tip: re(r"\bmove\b.*\btip\b|\btip\b.*\bmove\b"),
            point: re(&pt),
            from_to: re(&format!(r"from\s*{pt}\s*(?:µm|um)?\s*to\s*{pt}")),
            volts: re(&format!(r"{NUM}\s*V\b")),
            khz: re(&format!(r"center frequency (?:of |to |at )?{NUM}\s*kHz")),
            amp: re(&format!(r"amplitude (?:of |to |at )?{NUM}\s*V\b")),
            region: re(&format!(r"\[\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*\]")),
            res: re(r"(\d+)\s*[x×]\s*(\d+)"),
            extract: vec![
                ("center_frequency_khz", re(&format!(r"center frequency of {NUM}\s*kHz"))),
                ("band_width_khz", re(&format!(r"band ?width of {NUM}\s*kHz"))),
                ("amplitude_v", re(&format!(r"{NUM}\s*V (?:ac|AC) drive"))),
                ("amplitude_v", re(&format!(r"(?:ac|drive) amplitude of {NUM}\s*V\b"))),
                ("num_bins", re(r"(\d+) frequency bins")),
                ("duration_ms", re(&format!(r"{NUM}\s*ms (?:long )?(?:BE )?(?:pulses|chirps|excitation)"))),
            ],
        }
    })
}

fn num(c: &Captures, i: usize) -> f64 {
    c[i].parse().expect("pattern admits only numbers")
}

/// Where the conversation stands: the operator's instruction and how many
/// repair messages followed it.
fn instruction(conversation: &[Turn]) -> (&str, usize) {
    let users: Vec<&Turn> = conversation.iter().filter(|t| t.role == Role::User).collect();
    let Some(pos) = users.iter().rposition(|t| !t.content.starts_with(REPAIR_PREFIX)) else {
        return ("", 0);
    };
    (&users[pos].content, users.len() - pos - 1)
}

impl LlmClient for MockClient {
    fn complete(&self, conversation: &[Turn]) -> Result<String, AssistantError> {
        let extracting = conversation
            .first()
            .is_some_and(|t| t.role == Role::System && t.content.starts_with(EXTRACTION_PREAMBLE));
        let (text, repairs) = instruction(conversation);
        if extracting {
            return Ok(extract_reply(text));
        }
        Ok(match plan_for(text, repairs) {
            Some(plan) => plan.to_document(),
            None => FALLBACK.to_string(),
        })
    }
}

fn extract_reply(text: &str) -> String {
    let mut found = Vec::new();
    for (name, re) in &patterns().extract {
        if found.iter().any(|(n, _, _): &(&str, f64, &str)| n == name) {
            continue;
        }
        if let Some(c) = re.captures(text) {
            found.push((*name, num(&c, 1), c.get(0).expect("whole match").as_str()));
        }
    }
    let parameters: Vec<Json> = found
        .into_iter()
        .map(|(name, value, quote)| {
            let value = if name == "num_bins" { json!(value as u64) } else { json!(value) };
            json!({"name": name, "value": value, "quote": quote})
        })
        .collect();
    json!({ "parameters": parameters }).to_string()
}

fn be_step(text: &str) -> Step {
    let p = patterns();
    let mut step = Step::new("be", "define_be_parms");
    if let Some(c) = p.khz.captures(text) {
        step = step.param("center_frequency_khz", num(&c, 1));
    }
    if let Some(c) = p.amp.captures(text) {
        step = step.param("amplitude_v", num(&c, 1));
    }
    step
}

fn center(text: &str) -> Vec<f64> {
    match patterns().point.captures(text) {
        Some(c) => vec![num(&c, 1), num(&c, 2)],
        None => vec![2.5, 2.5],
    }
}

fn plan_for(text: &str, repairs: usize) -> Option<WorkflowPlan> {
    let p = patterns();
    let plan = |name: &str| WorkflowPlan::new(name, PlanSource::Assistant);
    if p.wall.is_match(text) {
        let mut w = wall_study_plan(&WallStudyParams::default()).expect("default wall study");
        w.metadata.source = PlanSource::Assistant;
        return Some(w);
    }
    if p.spiral.is_match(text) {
        let mut out = plan("spiral-scan");
        out.push(be_step(text));
        let bias = p.volts.captures(text).map(|c| num(&c, 1));
        let mut spiral = Step::new("path", "spiral_waveform").param("center", center(text));
        match bias {
            // First reply puts the voltage inside the spiral call.
            Some(v) if repairs == 0 => spiral = spiral.param("tip_voltage_v", v),
            Some(v) => out.push(Step::new("bias", "set_tip_bias").param("bias_v", v)),
            None => {}
        }
        out.push(spiral);
        out.push(Step::new("scan", "do_trajectory_scan").bind("trajectory", "path", "trajectory"));
        return Some(out);
    }
    if p.flower.is_match(text) {
        let mut out = plan("flower-scan");
        out.push(be_step(text));
        if let Some(c) = p.volts.captures(text) {
            out.push(Step::new("bias", "set_tip_bias").param("bias_v", num(&c, 1)));
        }
        out.push(Step::new("path", "flower_waveform").param("center", center(text)));
        out.push(Step::new("scan", "do_trajectory_scan").bind("trajectory", "path", "trajectory"));
        return Some(out);
    }
    if p.line.is_match(text) {
        let c = p.from_to.captures(text)?;
        let mut out = plan("line-scan");
        out.push(be_step(text));
        out.push(
            Step::new("scan", "do_line_scan")
                .param("start", vec![num(&c, 1), num(&c, 2)])
                .param("end", vec![num(&c, 3), num(&c, 4)]),
        );
        return Some(out);
    }
    if p.raster.is_match(text) {
        let region = match p.region.captures(text) {
            Some(c) => (1..=4).map(|i| num(&c, i)).collect(),
            None => vec![0.0, 0.0, 5.0, 5.0],
        };
        let mut scan = Step::new("scan", "raster_scan").param("region", region);
        if let Some(c) = p.res.captures(text) {
            scan = scan.param("ny", c[1].parse::<u64>().ok()?).param("nx", c[2].parse::<u64>().ok()?);
        }
        let mut out = plan("raster-scan");
        out.push(be_step(text));
        out.push(scan);
        return Some(out);
    }
    let be = be_step(text);
    if !be.params.is_empty() {
        let mut out = plan("be-parameters");
        out.push(be);
        return Some(out);
    }
    if p.tip.is_match(text) {
        let c = p.point.captures(text)?;
        let mut out = plan("tip-move");
        out.push(Step::new("move", "tip_control").param("x_um", num(&c, 1)).param("y_um", num(&c, 2)));
        return Some(out);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(s: &str) -> Turn {
        Turn::new(Role::User, s)
    }

    #[test]
    fn repair_count_follows_last_instruction() {
        let conv = vec![
            user("move the tip to (1, 2)"),
            user(&format!("{REPAIR_PREFIX} x")),
            user("conduct a spiral scan"),
            user(&format!("{REPAIR_PREFIX} y")),
        ];
        assert_eq!(instruction(&conv), ("conduct a spiral scan", 1));
        assert_eq!(instruction(&[]), ("", 0));
    }

    #[test]
    fn pure_function_of_conversation() {
        let conv = vec![user("perform a BE line scan from (1,1) to (5,5) µm with center frequency 380 kHz")];
        assert_eq!(MockClient.complete(&conv).unwrap(), MockClient.complete(&conv).unwrap());
    }

    #[test]
    fn unknown_request_is_prose() {
        let r = MockClient.complete(&[user("tell me a joke")]).unwrap();
        assert!(serde_json::from_str::<Json>(&r).is_err());
    }

    #[test]
    fn extraction_finds_only_present_fields() {
        let r: Json = serde_json::from_str(&extract_reply("measured at a center frequency of 350 kHz")).unwrap();
        assert_eq!(r["parameters"].as_array().unwrap().len(), 1);
        let r: Json = serde_json::from_str(&extract_reply("no numbers")).unwrap();
        assert!(r["parameters"].as_array().unwrap().is_empty());
    }
}
