//! Actions proposed by the assistant and the autonomy gate that decides
//! their fate.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AutonomyLevel, AutonomyPolicy, ResearchPhase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Analysis,
    Code,
    TestGeneration,
    TrainingRun,
    Figure,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Analysis => "analysis",
            ActionKind::Code => "code",
            ActionKind::TestGeneration => "test_generation",
            ActionKind::TrainingRun => "training_run",
            ActionKind::Figure => "figure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionState {
    Pending,
    Approved,
    Rejected,
    Executed,
    FlaggedForReview,
    Failed,
}

impl ActionState {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionState::Pending => "pending",
            ActionState::Approved => "approved",
            ActionState::Rejected => "rejected",
            ActionState::Executed => "executed",
            ActionState::FlaggedForReview => "flagged_for_review",
            ActionState::Failed => "failed",
        }
    }

    pub fn can_become(self, next: ActionState) -> bool {
        use ActionState::*;
        matches!(
            (self, next),
            (Pending, Approved | Rejected | Executed | Failed) | (Approved, Executed | Failed) | (Executed, FlaggedForReview)
        )
    }
}

impl fmt::Display for ActionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pointer to an artifact produced by executing an action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRef {
    /// `run`, `figure`, `report` or `artifact`.
    pub kind: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingAction {
    pub action_id: String,
    pub kind: ActionKind,
    pub payload: Value,
    pub state: ActionState,
    pub phase: ResearchPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ProposedAction {
    pub kind: ActionKind,
    #[serde(default)]
    pub payload: Value,
    #[serde(default)]
    pub phase: Option<ResearchPhase>,
}

/// Fenced blocks tagged `action` whose body is a JSON object with `kind`,
/// `payload` and an optional `phase`. Blocks that fail to parse are
/// returned as errors alongside the good ones.
pub fn parse_action_blocks(reply: &str) -> (Vec<ProposedAction>, Vec<String>) {
    let mut found = Vec::new();
    let mut errors = Vec::new();
    let mut lines = reply.lines();
    while let Some(line) = lines.next() {
        if line.trim() != "```action" {
            continue;
        }
        let mut body = String::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim() == "```" {
                closed = true;
                break;
            }
            body.push_str(inner);
            body.push('\n');
        }
        if !closed {
            errors.push("unterminated action block".into());
            break;
        }
        match serde_json::from_str::<ProposedAction>(&body) {
            Ok(a) => found.push(a),
            Err(e) => errors.push(format!("bad action block: {e}")),
        }
    }
    (found, errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    /// Level 0: recorded as rejected, the proposal is advisory only.
    Advisory,
    /// Level 1: waits for a human decision.
    AwaitApproval,
    /// Level 2: runs now and lands in the review queue.
    ExecuteAndFlag,
    /// Level 3.
    Execute,
}

pub fn disposition_for(level: AutonomyLevel) -> Disposition {
    match level {
        0 => Disposition::Advisory,
        1 => Disposition::AwaitApproval,
        2 => Disposition::ExecuteAndFlag,
        _ => Disposition::Execute,
    }
}

pub fn gate(action: &PendingAction, policy: &AutonomyPolicy) -> Disposition {
    disposition_for(policy.level(action.phase))
}

/// Runs an approved or auto-level action and names the artifact it made.
pub trait Executor {
    fn execute(&mut self, action: &PendingAction) -> Result<ResultRef, String>;
}

/// Refuses everything; for sessions with no workspace attached.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoExecutor;

impl Executor for NoExecutor {
    fn execute(&mut self, action: &PendingAction) -> Result<ResultRef, String> {
        Err(format!("no executor configured for {:?} actions", action.kind))
    }
}
