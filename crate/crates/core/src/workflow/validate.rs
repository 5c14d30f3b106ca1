use super::plan::WorkflowPlan;
use crate::tools::{coerce, Diagnostic, DiagnosticCode, Registry};
use std::collections::{HashMap, HashSet};

/// Static checks of a plan against the registry. Touches no instrument.
pub fn validate_plan(plan: &WorkflowPlan, registry: &Registry) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut earlier_ops: HashSet<&str> = HashSet::new();
    let mut step_ops: HashMap<&str, &str> = HashMap::new();
    for step in &plan.steps {
        let mut d = |code, param: Option<&str>, message: String| {
            diags.push(Diagnostic { step: step.id.clone(), code, param: param.map(String::from), message })
        };
        if step_ops.contains_key(step.id.as_str()) {
            d(DiagnosticCode::DuplicateId, None, format!("step id {} is used more than once", step.id));
        }
        let Some(tool) = registry.get(&step.op) else {
            d(DiagnosticCode::UnknownOp, None, format!("no operation named {}", step.op));
            step_ops.entry(&step.id).or_insert(&step.op);
            continue;
        };
        for (name, value) in &step.params {
            match tool.param(name) {
                None => d(DiagnosticCode::UnknownParameter, Some(name), format!("{} has no parameter {name}", tool.name)),
                Some(spec) => {
                    if let Err(m) = coerce(spec, value) {
                        d(DiagnosticCode::TypeMismatch, Some(name), m);
                    }
                    if step.bindings.contains_key(name) {
                        d(DiagnosticCode::TypeMismatch, Some(name), format!("{name} is both given and bound"));
                    }
                }
            }
        }
        for (name, b) in &step.bindings {
            let Some(spec) = tool.param(name) else {
                d(DiagnosticCode::UnknownParameter, Some(name), format!("{} has no parameter {name}", tool.name));
                continue;
            };
            let Some(src_op) = step_ops.get(b.step.as_str()) else {
                d(DiagnosticCode::UnknownBindingStep, Some(name), format!("{name} binds to {}, which is not an earlier step", b.step));
                continue;
            };
            let Some(src) = registry.get(src_op) else { continue };
            match src.output(&b.output) {
                None => d(
                    DiagnosticCode::UnknownOutput,
                    Some(name),
                    format!("step {} ({}) has no output {}", b.step, src.name, b.output),
                ),
                Some(o) if !o.ty.feeds(spec.ty) => d(
                    DiagnosticCode::BindingTypeMismatch,
                    Some(name),
                    format!("{}.{} is {:?} but {name} expects {:?}", b.step, b.output, o.ty, spec.ty),
                ),
                Some(_) => {}
            }
        }
        for spec in &tool.params {
            let given = step.params.contains_key(spec.name) || step.bindings.contains_key(spec.name);
            if spec.required && spec.default.is_none() && !given {
                d(DiagnosticCode::MissingParameter, Some(spec.name), format!("{} requires {}", tool.name, spec.name));
            }
        }
        if !tool.requires_prior.is_empty() && !tool.requires_prior.iter().any(|op| earlier_ops.contains(op)) {
            d(
                DiagnosticCode::OrderingViolation,
                None,
                format!("{} must come after {}", tool.name, tool.requires_prior.join(" or ")),
            );
        }
        earlier_ops.insert(tool.name);
        step_ops.entry(&step.id).or_insert(&step.op);
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::build_tool_registry;
    use crate::workflow::plan::{PlanSource, Step};

    fn codes(p: &WorkflowPlan) -> Vec<DiagnosticCode> {
        validate_plan(p, build_tool_registry()).err().unwrap_or_default().iter().map(|d| d.code).collect()
    }

    #[test]
    fn spiral_voltage_is_unknown_parameter() {
        let mut p = WorkflowPlan::new("spiral", PlanSource::Assistant);
        p.push(Step::new("traj", "spiral_waveform").param("center", vec![2.5, 2.5]).param("tip_voltage_v", 5.0));
        let d = validate_plan(&p, build_tool_registry()).unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagnosticCode::UnknownParameter);
        assert_eq!(d[0].step, "traj");
        assert_eq!(d[0].param.as_deref(), Some("tip_voltage_v"));
    }

    #[test]
    fn line_scan_before_be_is_ordering_violation() {
        let mut p = WorkflowPlan::new("line", PlanSource::Human);
        p.push(Step::new("scan", "do_line_scan").param("start", vec![1.0, 1.0]).param("end", vec![5.0, 5.0]));
        p.push(Step::new("be", "define_be_parms"));
        assert_eq!(codes(&p), vec![DiagnosticCode::OrderingViolation]);
    }

    #[test]
    fn binding_problems() {
        let mut p = WorkflowPlan::new("b", PlanSource::Human);
        p.push(Step::new("be", "define_be_parms"));
        p.push(Step::new("scan", "raster_scan").param("region", vec![0.0, 0.0, 5.0, 5.0]));
        p.push(Step::new("w1", "detect_domain_walls").bind("image", "scan", "phase_map"));
        p.push(Step::new("w2", "detect_domain_walls").bind("image", "scan", "shape"));
        p.push(Step::new("w3", "detect_domain_walls").bind("image", "later", "phase"));
        p.push(Step::new("later", "roughness").bind("image", "scan", "topography").bind("extra", "scan", "phase"));
        assert_eq!(
            codes(&p),
            vec![
                DiagnosticCode::UnknownOutput,
                DiagnosticCode::BindingTypeMismatch,
                DiagnosticCode::UnknownBindingStep,
                DiagnosticCode::UnknownParameter,
            ]
        );
    }

    #[test]
    fn unknown_op_missing_param_and_duplicate() {
        let mut p = WorkflowPlan::new("x", PlanSource::Human);
        p.push(Step::new("a", "teleport"));
        p.push(Step::new("b", "tip_control").param("x_um", 1.0));
        p.push(Step::new("b", "set_tip_bias").param("bias_v", "five"));
        assert_eq!(
            codes(&p),
            vec![
                DiagnosticCode::UnknownOp,
                DiagnosticCode::MissingParameter,
                DiagnosticCode::DuplicateId,
                DiagnosticCode::TypeMismatch
            ]
        );
    }

    #[test]
    fn pulse_needs_prior_move() {
        let mut p = WorkflowPlan::new("x", PlanSource::Human);
        p.push(Step::new("pulse", "apply_pulse").param("v", 6.0));
        assert_eq!(codes(&p), vec![DiagnosticCode::OrderingViolation]);
    }
}
