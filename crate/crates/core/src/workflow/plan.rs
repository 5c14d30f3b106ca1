//! Plan documents: JSON with top-level `name`, `metadata` and
//! `steps: [{id, op, params, bindings}]`.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown field at line {line}, column {column}: {message}")]
    UnknownField { line: usize, column: usize, message: String },
    #[error("duplicate step id {0}")]
    DuplicateId(String),
    #[error("step {step} binds to undeclared step id {target}")]
    Binding { step: String, target: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanSource {
    #[default]
    Human,
    Assistant,
    LogReplay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanMetadata {
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub created_at: String,
    #[serde(default)]
    pub source: PlanSource,
}

/// Reference to an earlier step's named output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binding {
    pub step: String,
    pub output: String,
}

impl Binding {
    pub fn new(step: &str, output: &str) -> Self {
        Self { step: step.into(), output: output.into() }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub id: String,
    pub op: String,
    #[serde(default)]
    pub params: BTreeMap<String, Json>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bindings: BTreeMap<String, Binding>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub continue_on_error: bool,
}

impl Step {
    pub fn new(id: &str, op: &str) -> Self {
        Self { id: id.into(), op: op.into(), params: BTreeMap::new(), bindings: BTreeMap::new(), continue_on_error: false }
    }

    pub fn param(mut self, name: &str, value: impl Into<Json>) -> Self {
        self.params.insert(name.into(), value.into());
        self
    }

    pub fn bind(mut self, param: &str, step: &str, output: &str) -> Self {
        self.bindings.insert(param.into(), Binding::new(step, output));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowPlan {
    pub name: String,
    #[serde(default)]
    pub metadata: PlanMetadata,
    pub steps: Vec<Step>,
}

impl WorkflowPlan {
    pub fn new(name: &str, source: PlanSource) -> Self {
        Self { name: name.into(), metadata: PlanMetadata { source, ..Default::default() }, steps: Vec::new() }
    }

    pub fn push(&mut self, step: Step) {
        self.steps.push(step);
    }

    /// Structural checks shared by parsing and construction: unique ids and
    /// bindings that point at earlier steps.
    pub fn check_structure(&self) -> Result<(), PlanError> {
        let mut seen = HashSet::new();
        for step in &self.steps {
            for b in step.bindings.values() {
                if !seen.contains(b.step.as_str()) {
                    return Err(PlanError::Binding { step: step.id.clone(), target: b.step.clone() });
                }
            }
            if !seen.insert(step.id.as_str()) {
                return Err(PlanError::DuplicateId(step.id.clone()));
            }
        }
        Ok(())
    }

    /// Canonical document text: pretty JSON, fixed field order, sorted maps,
    /// trailing newline.
    pub fn to_document(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }
}

pub fn parse_plan(text: &str) -> Result<WorkflowPlan, PlanError> {
    let plan: WorkflowPlan = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        let (line, column) = (e.line(), e.column());
        if message.starts_with("unknown field") {
            PlanError::UnknownField { line, column, message }
        } else {
            PlanError::Syntax { line, column, message }
        }
    })?;
    plan.check_structure()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_plan_is_valid() {
        let p = parse_plan(r#"{"name":"empty","steps":[]}"#).unwrap();
        assert!(p.steps.is_empty());
        assert_eq!(p.metadata.source, PlanSource::Human);
    }

    #[test]
    fn unknown_field_located() {
        let e = parse_plan("{\"name\":\"x\",\n\"steps\":[],\"colour\":1}").unwrap_err();
        assert!(matches!(e, PlanError::UnknownField { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn syntax_error_located() {
        let e = parse_plan("{\"name\":\"x\",\n\"steps\":[}").unwrap_err();
        assert!(matches!(e, PlanError::Syntax { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn undeclared_binding_names_target() {
        let text = r#"{"name":"x","steps":[{"id":"a","op":"raster_scan","bindings":{"image":{"step":"ghost","output":"phase"}}}]}"#;
        assert_eq!(
            parse_plan(text).unwrap_err(),
            PlanError::Binding { step: "a".into(), target: "ghost".into() }
        );
    }

    #[test]
    fn duplicate_ids() {
        let text = r#"{"name":"x","steps":[{"id":"a","op":"o"},{"id":"a","op":"o"}]}"#;
        assert_eq!(parse_plan(text).unwrap_err(), PlanError::DuplicateId("a".into()));
    }

    #[test]
    fn document_round_trip_and_stable_order() {
        let mut p = WorkflowPlan::new("line", PlanSource::Assistant);
        p.push(Step::new("be", "define_be_parms").param("center_frequency_khz", 380.0));
        p.push(Step::new("scan", "do_line_scan").param("num_points", 64).param("end", vec![5.0, 5.0]));
        let doc = p.to_document();
        assert_eq!(parse_plan(&doc).unwrap(), p);
        assert_eq!(parse_plan(&doc).unwrap().to_document(), doc);
        assert!(doc.find("\"name\"").unwrap() < doc.find("\"metadata\"").unwrap());
        assert!(doc.find("\"metadata\"").unwrap() < doc.find("\"steps\"").unwrap());
    }
}
