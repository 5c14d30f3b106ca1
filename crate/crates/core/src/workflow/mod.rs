//! Declarative plans: parsing, validation against the tool registry,
//! execution with data bindings, and the composite wall study.

pub mod execute;
pub mod plan;
pub mod validate;
pub mod wall_study;

pub use execute::{execute_plan, plan_fingerprint, Approval, ExecError, RunReport, StepReport, StepStatus};
pub use plan::{parse_plan, Binding, PlanError, PlanMetadata, PlanSource, Step, WorkflowPlan};
pub use validate::validate_plan;
pub use wall_study::{wall_study_plan, WallStudyError, WallStudyParams};
