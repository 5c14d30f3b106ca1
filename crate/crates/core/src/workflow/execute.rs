use super::plan::WorkflowPlan;
use super::validate::validate_plan;
use crate::control::Microscope;
use crate::dataset::Dataset;
use crate::experiment_log::LogRecord;
use crate::tools::{build_tool_registry, resolve_args, run_resolved, Args, Diagnostic, Outputs, Value};
use serde::Serialize;
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Caller-issued permission to execute one specific plan. Any edit to the
/// plan after granting invalidates it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Approval {
    fingerprint: String,
}

impl Approval {
    pub fn grant(plan: &WorkflowPlan) -> Self {
        Self { fingerprint: plan_fingerprint(plan) }
    }

    pub fn from_fingerprint(fingerprint: &str) -> Self {
        Self { fingerprint: fingerprint.to_string() }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn covers(&self, plan: &WorkflowPlan) -> bool {
        self.fingerprint == plan_fingerprint(plan)
    }
}

/// CRC-32 and length of the canonical plan document.
pub fn plan_fingerprint(plan: &WorkflowPlan) -> String {
    let doc = plan.to_document();
    format!("{:08x}-{}", crc32fast::hash(doc.as_bytes()), doc.len())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("plan was not approved for execution")]
    NotApproved,
    #[error("plan failed validation with {} diagnostic(s)", .0.len())]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum StepStatus {
    Ok,
    Failed { code: String, message: String },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub id: String,
    pub op: String,
    #[serde(flatten)]
    pub status: StepStatus,
    /// Sequence numbers of log records this step wrote.
    pub log_seqs: Vec<u64>,
    /// JSON outputs; images and datasets are omitted.
    pub outputs: BTreeMap<String, Json>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFailure {
    pub step: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub plan: String,
    pub steps: Vec<StepReport>,
    pub records: Vec<LogRecord>,
    pub failure: Option<StepFailure>,
    pub cancelled: bool,
    /// Every output of every completed step, for inspection and binding.
    #[serde(skip)]
    pub values: BTreeMap<String, Outputs>,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.failure.is_none() && !self.cancelled && self.steps.iter().all(|s| s.status == StepStatus::Ok)
    }

    pub fn value(&self, step: &str, output: &str) -> Option<&Value> {
        self.values.get(step)?.get(output)
    }

    /// Datasets produced by the run, in step order.
    pub fn datasets(&self) -> Vec<(&str, &Arc<Dataset>)> {
        self.steps
            .iter()
            .filter_map(|s| match self.value(&s.id, "dataset") {
                Some(Value::Dataset(d)) => Some((s.id.as_str(), d)),
                _ => None,
            })
            .collect()
    }
}

/// Runs every step in order, binding outputs to later inputs. Stops at the
/// first failing step unless that step sets `continue_on_error`, and stops
/// after any step during which the microscope's cancel token fired.
pub fn execute_plan(plan: &WorkflowPlan, approval: &Approval, scope: &mut Microscope) -> Result<RunReport, ExecError> {
    if !approval.covers(plan) {
        return Err(ExecError::NotApproved);
    }
    let registry = build_tool_registry();
    validate_plan(plan, registry).map_err(ExecError::Invalid)?;
    let cancel = scope.cancel_token();
    cancel.reset();
    let mut report = RunReport { plan: plan.name.clone(), ..Default::default() };
    let total = plan.steps.len();
    for (index, step) in plan.steps.iter().enumerate() {
        if report.failure.is_some() || report.cancelled {
            report.steps.push(StepReport {
                id: step.id.clone(),
                op: step.op.clone(),
                status: StepStatus::Skipped,
                log_seqs: vec![],
                outputs: BTreeMap::new(),
            });
            continue;
        }
        let tool = registry.get(&step.op).expect("validated op");
        let log_before = scope.log().len();
        let result = bind(step, &report.values)
            .and_then(|given| resolve_args(tool, &given, &step.id).map_err(|d| ("invalid-params".to_string(), join(&d))))
            .and_then(|args: Args| run_resolved(scope, tool, &args).map_err(|e| (e.code().to_string(), e.to_string())));
        let new_records = scope.log().records()[log_before..].to_vec();
        let log_seqs = new_records.iter().map(|r| r.seq).collect();
        report.records.extend(new_records);
        let (status, outputs) = match result {
            Ok(out) => {
                let summary = out
                    .iter()
                    .filter_map(|(k, v)| match v {
                        Value::Json(j) => Some((k.clone(), j.clone())),
                        _ => None,
                    })
                    .collect();
                report.values.insert(step.id.clone(), out);
                (StepStatus::Ok, summary)
            }
            Err((code, message)) => {
                if !step.continue_on_error {
                    report.failure = Some(StepFailure { step: step.id.clone(), code: code.clone(), message: message.clone() });
                }
                (StepStatus::Failed { code, message }, BTreeMap::new())
            }
        };
        scope.emit(
            "step_done",
            json!({
                "plan": plan.name,
                "step": step.id,
                "op": step.op,
                "index": index,
                "total": total,
                "status": serde_json::to_value(&status).expect("status serializes"),
            }),
        );
        report.steps.push(StepReport { id: step.id.clone(), op: step.op.clone(), status, log_seqs, outputs });
        if cancel.is_cancelled() {
            report.cancelled = true;
        }
    }
    Ok(report)
}

fn join(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn bind(step: &super::plan::Step, values: &BTreeMap<String, Outputs>) -> Result<Args, (String, String)> {
    let mut args: Args = step.params.iter().map(|(k, v)| (k.clone(), Value::Json(v.clone()))).collect();
    for (param, b) in &step.bindings {
        let v = values.get(&b.step).and_then(|o| o.get(&b.output)).ok_or_else(|| {
            ("unbound-output".to_string(), format!("{param}: step {} produced no output {}", b.step, b.output))
        })?;
        args.insert(param.clone(), v.clone());
    }
    Ok(args)
}
