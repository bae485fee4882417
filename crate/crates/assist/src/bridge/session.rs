//! A chat session: provider calls, transcript, and the action queue.

use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::Serialize;

use super::actions::{
    gate, parse_action_blocks, ActionState, Disposition, Executor, PendingAction, ProposedAction, ResultRef,
};
use super::provider::{GenerationParams, Provider, RetryPolicy, WireMessage};
use super::transcript::{ActionEvent, Clock, Transcript, TranscriptRecord};
use super::{level_name, AutonomyPolicy, ChatMessage, ResearchPhase, Role};
use crate::error::{AssistError, Result};
use crate::knowledge::ContextBundle;

const OPENED: &str = "session opened";
const POLICY_SET: &str = "autonomy policy updated";

/// Everything that replaying a transcript must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionState {
    pub session_id: String,
    pub policy: AutonomyPolicy,
    pub messages: Vec<ChatMessage>,
    pub actions: Vec<PendingAction>,
    pub artifacts: Vec<ResultRef>,
}

impl SessionState {
    fn empty(session_id: &str) -> Self {
        Self {
            session_id: session_id.to_string(),
            policy: AutonomyPolicy::default(),
            messages: Vec::new(),
            actions: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn from_records(session_id: &str, records: &[TranscriptRecord]) -> Result<Self> {
        let mut st = Self::empty(session_id);
        let mut actions: IndexMap<String, PendingAction> = IndexMap::new();
        for (i, rec) in records.iter().enumerate() {
            if let Some(p) = &rec.policy {
                st.policy = p.clone();
            }
            match &rec.action_event {
                None if rec.policy.is_none() => st.messages.push(ChatMessage {
                    role: rec.role,
                    content: rec.content.clone(),
                    ts: rec.ts,
                    phase: rec.phase,
                }),
                None => {}
                Some(ev) if ev.state == ActionState::Pending => {
                    let kind = ev
                        .kind
                        .ok_or_else(|| AssistError::Document(format!("record {i}: proposal without kind")))?;
                    let action = PendingAction {
                        action_id: ev.action_id.clone(),
                        kind,
                        payload: ev.payload.clone().unwrap_or_default(),
                        state: ActionState::Pending,
                        phase: rec.phase,
                        result: None,
                        error: None,
                        note: ev.note.clone(),
                    };
                    if actions.insert(ev.action_id.clone(), action).is_some() {
                        return Err(AssistError::Document(format!("record {i}: duplicate action {}", ev.action_id)));
                    }
                }
                Some(ev) => {
                    let a = actions
                        .get_mut(&ev.action_id)
                        .ok_or_else(|| AssistError::Document(format!("record {i}: unknown action {}", ev.action_id)))?;
                    if !a.state.can_become(ev.state) {
                        return Err(AssistError::Document(format!(
                            "record {i}: {} cannot go from {} to {}",
                            ev.action_id, a.state, ev.state
                        )));
                    }
                    a.state = ev.state;
                    if let Some(r) = &ev.result {
                        a.result = Some(r.clone());
                        st.artifacts.push(r.clone());
                    }
                    if ev.error.is_some() {
                        a.error = ev.error.clone();
                    }
                    if ev.note.is_some() {
                        a.note = ev.note.clone();
                    }
                }
            }
        }
        st.actions = actions.into_values().collect();
        Ok(st)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Turn {
    pub reply: ChatMessage,
    pub actions: Vec<PendingAction>,
    pub parse_errors: Vec<String>,
}

impl Turn {
    pub fn pending(&self) -> impl Iterator<Item = &PendingAction> {
        self.actions.iter().filter(|a| a.state == ActionState::Pending)
    }
}

pub struct ChatSession {
    id: String,
    provider: Arc<dyn Provider>,
    params: GenerationParams,
    retry: RetryPolicy,
    policy: AutonomyPolicy,
    transcript: Transcript,
    clock: Box<dyn Clock>,
    messages: Vec<ChatMessage>,
    actions: IndexMap<String, PendingAction>,
    artifacts: Vec<ResultRef>,
}

impl ChatSession {
    pub fn open(
        id: impl Into<String>,
        provider: Arc<dyn Provider>,
        policy: AutonomyPolicy,
        transcript: Transcript,
        clock: Box<dyn Clock>,
    ) -> Result<Self> {
        let mut s = Self {
            id: id.into(),
            provider,
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
            policy: policy.clone(),
            transcript,
            clock,
            messages: Vec::new(),
            actions: IndexMap::new(),
            artifacts: Vec::new(),
        };
        s.record(Role::System, OPENED.into(), ResearchPhase::ALL[0], None, Some(policy))?;
        Ok(s)
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn policy(&self) -> &AutonomyPolicy {
        &self.policy
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn provider_is_offline(&self) -> bool {
        self.provider.is_offline()
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn action(&self, action_id: &str) -> Option<&PendingAction> {
        self.actions.get(action_id)
    }

    pub fn actions(&self) -> impl Iterator<Item = &PendingAction> {
        self.actions.values()
    }

    pub fn artifacts(&self) -> &[ResultRef] {
        &self.artifacts
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            session_id: self.id.clone(),
            policy: self.policy.clone(),
            messages: self.messages.clone(),
            actions: self.actions.values().cloned().collect(),
            artifacts: self.artifacts.clone(),
        }
    }

    /// Rebuild the state of a session from its transcript file.
    pub fn replay(session_id: &str, path: &Path) -> Result<SessionState> {
        SessionState::from_records(session_id, &Transcript::read(path)?)
    }

    fn record(
        &mut self,
        role: Role,
        content: String,
        phase: ResearchPhase,
        action_event: Option<ActionEvent>,
        policy: Option<AutonomyPolicy>,
    ) -> Result<u64> {
        let ts = self.clock.now();
        let plain = action_event.is_none() && policy.is_none();
        self.transcript.append(TranscriptRecord { ts, role, content: content.clone(), phase, action_event, policy })?;
        if plain {
            self.messages.push(ChatMessage { role, content, ts, phase });
        }
        Ok(ts)
    }

    pub fn set_policy(&mut self, policy: AutonomyPolicy) -> Result<()> {
        self.policy = policy.clone();
        self.record(Role::System, POLICY_SET.into(), ResearchPhase::ALL[0], None, Some(policy))?;
        Ok(())
    }

    /// Append a system notice, e.g. a background run finishing.
    pub fn notify(&mut self, content: impl Into<String>, phase: ResearchPhase) -> Result<()> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(AssistError::Precondition("notice content is empty".into()));
        }
        self.record(Role::System, content, phase, None, None)?;
        Ok(())
    }

    /// One provider round trip. The context goes out as a system message
    /// ahead of the history but is not itself recorded.
    pub fn send(&mut self, content: &str, phase: ResearchPhase, context: &ContextBundle) -> Result<ChatMessage> {
        if content.trim().is_empty() {
            return Err(AssistError::Precondition("message content is empty".into()));
        }
        let mut wire = Vec::with_capacity(self.messages.len() + 2);
        if !context.is_empty() {
            wire.push(WireMessage { role: Role::System, content: context.render() });
        }
        wire.extend(
            self.messages
                .iter()
                .filter(|m| m.role != Role::System)
                .map(|m| WireMessage { role: m.role, content: m.content.clone() }),
        );
        wire.push(WireMessage { role: Role::Human, content: content.to_string() });
        self.record(Role::Human, content.to_string(), phase, None, None)?;
        match self.retry.run(self.provider.as_ref(), &wire, &self.params) {
            Ok(reply) if !reply.trim().is_empty() => {
                let ts = self.record(Role::Assistant, reply.clone(), phase, None, None)?;
                Ok(ChatMessage { role: Role::Assistant, content: reply, ts, phase })
            }
            Ok(_) => {
                let msg = "provider returned an empty reply".to_string();
                self.record(Role::System, format!("provider error: {msg}"), phase, None, None)?;
                Err(AssistError::Provider(msg))
            }
            Err(failures) => {
                let msg = failures.join("; ");
                self.record(Role::System, format!("provider error: {msg}"), phase, None, None)?;
                Err(AssistError::Provider(msg))
            }
        }
    }

    /// `send`, then gate every action block in the reply.
    pub fn respond(
        &mut self,
        content: &str,
        phase: ResearchPhase,
        context: &ContextBundle,
        executor: &mut dyn Executor,
    ) -> Result<Turn> {
        let reply = self.send(content, phase, context)?;
        let (proposed, parse_errors) = parse_action_blocks(&reply.content);
        let mut actions = Vec::with_capacity(proposed.len());
        for p in proposed {
            actions.push(self.propose(p, phase, executor)?);
        }
        Ok(Turn { reply, actions, parse_errors })
    }

    /// Register a proposal and apply the gate for its phase.
    pub fn propose(
        &mut self,
        proposed: ProposedAction,
        default_phase: ResearchPhase,
        executor: &mut dyn Executor,
    ) -> Result<PendingAction> {
        let action_id = format!("act-{:04}", self.actions.len() + 1);
        let action = PendingAction {
            action_id: action_id.clone(),
            kind: proposed.kind,
            payload: proposed.payload,
            state: ActionState::Pending,
            phase: proposed.phase.unwrap_or(default_phase),
            result: None,
            error: None,
            note: None,
        };
        let event = ActionEvent {
            action_id: action_id.clone(),
            state: ActionState::Pending,
            kind: Some(action.kind),
            payload: Some(action.payload.clone()),
            result: None,
            error: None,
            note: None,
        };
        let phase = action.phase;
        let disposition = gate(&action, &self.policy);
        self.actions.insert(action_id.clone(), action);
        self.record(Role::System, format!("action {action_id} proposed"), phase, Some(event), None)?;
        match disposition {
            Disposition::AwaitApproval => {}
            Disposition::Advisory => {
                let note = format!("advisory only: {phase} is at level 0 ({})", level_name(0));
                self.transition(&action_id, ActionState::Rejected, None, None, Some(note))?;
            }
            Disposition::Execute => self.execute(&action_id, executor)?,
            Disposition::ExecuteAndFlag => {
                self.execute(&action_id, executor)?;
                if self.actions[&action_id].state == ActionState::Executed {
                    self.transition(&action_id, ActionState::FlaggedForReview, None, None, None)?;
                }
            }
        }
        Ok(self.actions[&action_id].clone())
    }

    pub fn approve(&mut self, action_id: &str, executor: &mut dyn Executor) -> Result<PendingAction> {
        self.require_pending(action_id)?;
        self.transition(action_id, ActionState::Approved, None, None, None)?;
        self.execute(action_id, executor)?;
        Ok(self.actions[action_id].clone())
    }

    pub fn reject(&mut self, action_id: &str, reason: Option<String>) -> Result<PendingAction> {
        self.require_pending(action_id)?;
        self.transition(action_id, ActionState::Rejected, None, None, reason)?;
        Ok(self.actions[action_id].clone())
    }

    fn require_pending(&self, action_id: &str) -> Result<()> {
        let a = self.actions.get(action_id).ok_or_else(|| AssistError::NotFound(format!("action {action_id}")))?;
        if a.state != ActionState::Pending {
            return Err(AssistError::State { action_id: action_id.into(), state: a.state.to_string() });
        }
        Ok(())
    }

    fn execute(&mut self, action_id: &str, executor: &mut dyn Executor) -> Result<()> {
        let outcome = executor.execute(&self.actions[action_id]);
        match outcome {
            Ok(r) => self.transition(action_id, ActionState::Executed, Some(r), None, None),
            Err(e) => self.transition(action_id, ActionState::Failed, None, Some(e), None),
        }
    }

    fn transition(
        &mut self,
        action_id: &str,
        state: ActionState,
        result: Option<ResultRef>,
        error: Option<String>,
        note: Option<String>,
    ) -> Result<()> {
        let a = self.actions.get_mut(action_id).ok_or_else(|| AssistError::NotFound(format!("action {action_id}")))?;
        if !a.state.can_become(state) {
            return Err(AssistError::State { action_id: action_id.into(), state: a.state.to_string() });
        }
        a.state = state;
        if let Some(r) = &result {
            a.result = Some(r.clone());
            self.artifacts.push(r.clone());
        }
        if error.is_some() {
            a.error = error.clone();
        }
        if note.is_some() {
            a.note = note.clone();
        }
        let phase = a.phase;
        let content = match (&result, &error) {
            (Some(r), _) => format!("action {action_id} {state}: {} {}", r.kind, r.id),
            (_, Some(e)) => format!("action {action_id} {state}: {e}"),
            _ => format!("action {action_id} {state}"),
        };
        let event = ActionEvent { action_id: action_id.into(), state, kind: None, payload: None, result, error, note };
        self.record(Role::System, content, phase, Some(event), None)?;
        Ok(())
    }
}
