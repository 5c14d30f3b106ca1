use super::{AssistantError, LlmClient, Role, Turn};
use crate::be::PartialBeParams;
use crate::workflow::{PlanSource, Step, WorkflowPlan};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use std::sync::OnceLock;

pub const EXTRACTION_PREAMBLE: &str = "You extract band-excitation measurement settings from \
experimental-methods text.";

const EXTRACTION_CONTRACT: &str = "Report only settings stated explicitly in the text. Respond with \
one JSON object {\"parameters\": [{\"name\": <field>, \"value\": <number or waveform>, \"quote\": \
<exact substring of the text stating it>}]}. Fields: center_frequency_khz, band_width_khz, \
amplitude_v, num_bins, repeats, duration_ms, waveform (chirp or sinc). Convert units to the ones in \
the field names. Use an empty list when nothing is stated.";

/// Where in the source text a setting was stated, in character offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpan {
    pub name: String,
    pub value: Json,
    pub start: usize,
    pub end: usize,
    pub quote: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolExtraction {
    pub params: PartialBeParams,
    pub spans: Vec<ParamSpan>,
    /// Entries of the reply that were dropped, with the reason.
    pub rejected: Vec<(String, String)>,
    /// define_be_parms with the extracted fields, then a raster scan.
    pub plan: WorkflowPlan,
}

impl ProtocolExtraction {
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

#[derive(Deserialize)]
struct Reply {
    parameters: Vec<Entry>,
}

#[derive(Deserialize)]
struct Entry {
    name: String,
    value: Json,
    quote: String,
}

const FIELDS: [&str; 7] =
    ["center_frequency_khz", "band_width_khz", "amplitude_v", "num_bins", "repeats", "duration_ms", "waveform"];

fn numbers(s: &str) -> Vec<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?").expect("number pattern"));
    re.find_iter(s).filter_map(|m| m.as_str().parse().ok()).collect()
}

/// The quote must occur in the source and state the value; numbers must
/// appear literally in the quote, waveform names as words.
fn check(entry: &Entry, source: &str) -> Result<(usize, usize), String> {
    if !FIELDS.contains(&entry.name.as_str()) {
        return Err("not a band-excitation field".into());
    }
    if entry.quote.is_empty() {
        return Err("empty quote".into());
    }
    let Some(byte) = source.find(&entry.quote) else {
        return Err("quote does not occur in the text".into());
    };
    let stated = match &entry.value {
        Json::Number(n) => {
            let v = n.as_f64().unwrap_or(f64::NAN);
            numbers(&entry.quote).contains(&v)
        }
        Json::String(s) => entry.quote.to_lowercase().contains(&s.to_lowercase()),
        _ => false,
    };
    if !stated {
        return Err(format!("quote does not state {}", entry.value));
    }
    let start = source[..byte].chars().count();
    Ok((start, start + entry.quote.chars().count()))
}

/// Asks the client for the settings stated in `source` and keeps only those
/// whose quote is found verbatim in the text and carries the value.
pub fn extract_protocol(source: &str, client: &dyn LlmClient) -> Result<ProtocolExtraction, AssistantError> {
    if source.trim().is_empty() {
        return Err(AssistantError::EmptySource);
    }
    let conversation = [
        Turn::new(Role::System, format!("{EXTRACTION_PREAMBLE}\n\n{EXTRACTION_CONTRACT}\n")),
        Turn::new(Role::User, source),
    ];
    let reply = client.complete(&conversation)?;
    let reply: Reply = serde_json::from_str(super::plan_text(&reply))
        .map_err(|e| AssistantError::BadResponse(format!("extraction reply: {e}")))?;

    let mut fields = Map::new();
    let mut spans = Vec::new();
    let mut rejected = Vec::new();
    for entry in reply.parameters {
        if fields.contains_key(&entry.name) {
            rejected.push((entry.name, "stated more than once".to_string()));
            continue;
        }
        let (start, end) = match check(&entry, source) {
            Ok(span) => span,
            Err(reason) => {
                rejected.push((entry.name, reason));
                continue;
            }
        };
        let mut trial = fields.clone();
        trial.insert(entry.name.clone(), entry.value.clone());
        let ok = serde_json::from_value::<PartialBeParams>(Json::Object(trial.clone()))
            .map(|p| p.resolve().validate().is_ok())
            .unwrap_or(false);
        if !ok {
            rejected.push((entry.name, format!("{} is not an admissible value", entry.value)));
            continue;
        }
        fields = trial;
        spans.push(ParamSpan { name: entry.name, value: entry.value, start, end, quote: entry.quote });
    }
    let params: PartialBeParams = serde_json::from_value(Json::Object(fields.clone())).expect("checked above");

    let mut plan = WorkflowPlan::new("protocol-reproduction", PlanSource::Assistant);
    let mut be = Step::new("be", "define_be_parms");
    be.params = fields.into_iter().collect();
    plan.push(be);
    plan.push(Step::new("scan", "raster_scan").param("region", vec![0.0, 0.0, 5.0, 5.0]));
    Ok(ProtocolExtraction { params, spans, rejected, plan })
}
