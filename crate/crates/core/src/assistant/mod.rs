//! Language interface: turns instructions into validated plans through a
//! pluggable chat client, and pulls BE settings out of literature text.

mod live;
mod mock;
mod protocol;

pub use live::{LiveClient, LiveConfig};
pub use mock::MockClient;
pub use protocol::{extract_protocol, ParamSpan, ProtocolExtraction, EXTRACTION_PREAMBLE};

use crate::tools::{build_tool_registry, Diagnostic, Registry};
use crate::workflow::{parse_plan, validate_plan, Approval, PlanSource, WorkflowPlan};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The platform guide shipped with the crate.
pub const GUIDELINE: &str = include_str!("../../assets/guideline.md");

pub const MAX_REPAIR_TURNS: usize = 2;

/// First words of every automatic repair message.
pub const REPAIR_PREFIX: &str = "The previous reply was rejected.";

const PREAMBLE: &str = "You are the planning assistant of aescope, an automated band-excitation \
piezoresponse force microscope. You translate an operator's instruction into a plan document that \
the platform validates and, after the operator approves it, executes.";

const CONTRACT: &str = "Respond with a plan document only: one JSON object with `name`, `metadata` \
and `steps`, no prose and no code fences. Use only the operations and parameters in the tool \
schemas. Set `metadata.source` to \"assistant\".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AssistantExchange {
    pub conversation: Vec<Turn>,
    pub proposed: Option<WorkflowPlan>,
    pub diagnostics: Vec<Diagnostic>,
    pub repair_turns: usize,
    executable: bool,
}

impl AssistantExchange {
    /// True only when the current proposal passed `validate_plan`.
    pub fn is_executable(&self) -> bool {
        self.executable
    }

    /// Issues the approval token for the validated proposal. This is the
    /// human decision point; nothing in this module calls it.
    pub fn approve(&self) -> Result<Approval, AssistantError> {
        match (&self.proposed, self.executable) {
            (Some(p), true) => Ok(Approval::grant(p)),
            _ => Err(AssistantError::NotExecutable),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssistantError {
    #[error("guideline document is empty")]
    EmptyGuideline,
    #[error("source text is empty")]
    EmptySource,
    #[error("language model endpoint unreachable: {0}")]
    ClientUnreachable(String),
    #[error("language model reply malformed: {0}")]
    BadResponse(String),
    #[error("no plan document after {} repair turns", MAX_REPAIR_TURNS)]
    UnparseableReply(Box<AssistantExchange>),
    #[error("proposal still has {} diagnostic(s) after {} repair turns", .0.diagnostics.len(), MAX_REPAIR_TURNS)]
    ValidationFailed(Box<AssistantExchange>),
    #[error("proposal is not marked executable")]
    NotExecutable,
}

impl AssistantError {
    pub fn code(&self) -> &'static str {
        match self {
            AssistantError::EmptyGuideline => "empty-guideline",
            AssistantError::EmptySource => "empty-source",
            AssistantError::ClientUnreachable(_) => "client-unreachable",
            AssistantError::BadResponse(_) => "bad-response",
            AssistantError::UnparseableReply(_) => "unparseable-reply",
            AssistantError::ValidationFailed(_) => "validation-failed",
            AssistantError::NotExecutable => "not-executable",
        }
    }
}

/// A chat-completion backend.
pub trait LlmClient: Send + Sync {
    fn complete(&self, conversation: &[Turn]) -> Result<String, AssistantError>;
}

/// Which backend to use; the live variant reads its key from the named
/// environment variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum LlmClientConfig {
    Mock,
    Live(LiveConfig),
}

impl LlmClientConfig {
    pub fn build(&self) -> Box<dyn LlmClient> {
        match self {
            LlmClientConfig::Mock => Box::new(MockClient),
            LlmClientConfig::Live(c) => Box::new(LiveClient::new(c.clone())),
        }
    }
}

pub fn build_system_prompt(guideline: &str, registry: &Registry) -> Result<String, AssistantError> {
    if guideline.trim().is_empty() {
        return Err(AssistantError::EmptyGuideline);
    }
    let schemas = serde_json::to_string_pretty(registry.tools()).expect("registry serializes");
    Ok(format!(
        "{PREAMBLE}\n\n# Platform guide\n\n{}\n\n# Tool schemas\n\n{schemas}\n\n# Output format\n\n{CONTRACT}\n",
        guideline.trim_end()
    ))
}

/// Accepts a bare JSON object or one wrapped in a fenced block.
fn plan_text(reply: &str) -> &str {
    let t = reply.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = rest.split_once('\n').map_or(rest, |(_, b)| b);
        return body.rsplit_once("```").map_or(body, |(b, _)| b).trim();
    }
    t
}

fn repair_message(problem: &str) -> String {
    format!("{REPAIR_PREFIX} {problem}\nRespond with a corrected plan document only.")
}

/// Sends the instruction, parses the reply as a plan and validates it,
/// feeding problems back for at most [`MAX_REPAIR_TURNS`] further replies.
/// Never executes anything.
pub fn propose_plan(
    instruction: &str,
    mut ctx: AssistantExchange,
    client: &dyn LlmClient,
) -> Result<AssistantExchange, AssistantError> {
    let registry = build_tool_registry();
    if !ctx.conversation.iter().any(|t| t.role == Role::System) {
        let prompt = build_system_prompt(GUIDELINE, registry)?;
        ctx.conversation.insert(0, Turn::new(Role::System, prompt));
    }
    ctx.conversation.push(Turn::new(Role::User, instruction));
    ctx.proposed = None;
    ctx.diagnostics.clear();
    ctx.executable = false;
    ctx.repair_turns = 0;
    loop {
        let reply = client.complete(&ctx.conversation)?;
        ctx.conversation.push(Turn::new(Role::Assistant, reply.clone()));
        let problem = match parse_plan(plan_text(&reply)) {
            Err(e) => {
                ctx.proposed = None;
                format!("It is not a valid plan document: {e}.")
            }
            Ok(mut plan) => {
                plan.metadata.source = PlanSource::Assistant;
                let result = validate_plan(&plan, registry);
                ctx.proposed = Some(plan);
                match result {
                    Ok(()) => {
                        ctx.diagnostics.clear();
                        ctx.executable = true;
                        return Ok(ctx);
                    }
                    Err(d) => {
                        let text = d.iter().map(|d| format!("- {d}")).collect::<Vec<_>>().join("\n");
                        ctx.diagnostics = d;
                        format!("Validation reported:\n{text}")
                    }
                }
            }
        };
        if ctx.repair_turns == MAX_REPAIR_TURNS {
            return Err(if ctx.proposed.is_some() {
                AssistantError::ValidationFailed(Box::new(ctx))
            } else {
                AssistantError::UnparseableReply(Box::new(ctx))
            });
        }
        ctx.repair_turns += 1;
        ctx.conversation.push(Turn::new(Role::User, repair_message(&problem)));
    }
}
