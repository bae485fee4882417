//! Turns approved actions into reports, runs, figures and artifacts.

use std::fs;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use chatbci_assist::{ActionKind, Executor, PendingAction, ResearchPhase, ResultRef};
use chatbci_core::data::Session;
use chatbci_core::figures::{ErpFigureSpec, Figure};
use chatbci_core::synth::{generate, SynthSpec};

use crate::error::{from_value_at, Result, ServiceError};
use crate::registry::{RunRegistry, RunRequest, RunSnapshot, RunState};
use crate::workspace::{parse_params, valid_id, AnalysisKind, AnalysisParams, Workspace, ARTIFACT_PREFIX};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    #[serde(alias = "op")]
    pub kind: AnalysisKind,
    #[serde(default)]
    pub params: Option<Value>,
}

/// Either an ERP figure from a report or learning curves from runs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureRequest {
    #[serde(default, alias = "erp_result_id")]
    pub report_id: Option<String>,
    #[serde(default)]
    pub spec: Option<ErpFigureSpec>,
    #[serde(default)]
    pub run_ids: Option<Vec<String>>,
}

impl FigureRequest {
    pub fn render(&self, ws: &Workspace) -> Result<Figure> {
        match (&self.report_id, &self.run_ids) {
            (Some(id), None) => ws.erp_figure(id, &self.spec.clone().unwrap_or_default()),
            (None, Some(ids)) if !ids.is_empty() => {
                if self.spec.is_some() {
                    return Err(ServiceError::field("spec", "only applies to ERP figures"));
                }
                ws.curves_figure(ids)
            }
            (None, Some(_)) => Err(ServiceError::field("run_ids", "must not be empty")),
            _ => Err(ServiceError::field("report_id", "give exactly one of report_id or run_ids")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeArtifact {
    #[serde(default = "default_filename")]
    pub filename: String,
    pub content: String,
}

fn default_filename() -> String {
    "snippet.txt".into()
}

/// Mock recordings for exercising an analysis before real data is used.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRequest {
    pub subject_id: String,
    #[serde(default = "default_trials")]
    pub trials_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    12
}

impl SynthRequest {
    /// Both sessions in the IV 2a channel layout, then a validation report.
    pub fn run(&self, ws: &Workspace) -> Result<String> {
        if !valid_id(&self.subject_id) {
            return Err(ServiceError::field("subject_id", "letters, digits, '-' and '_' only"));
        }
        if self.trials_per_class == 0 {
            return Err(ServiceError::field("trials_per_class", "must be positive"));
        }
        if ws.store().subjects()?.contains(&self.subject_id) {
            return Err(ServiceError::new(409, "StateError", format!("subject {} already exists", self.subject_id)));
        }
        for (i, session) in [Session::Train, Session::Eval].into_iter().enumerate() {
            let spec = SynthSpec::iv2a_like(&self.subject_id, session, self.trials_per_class, self.seed + i as u64);
            ws.store().save(&generate(&spec)?)?;
        }
        let params = AnalysisParams { subjects: vec![self.subject_id.clone()], ..AnalysisParams::default() };
        Ok(ws.analyze(AnalysisKind::Validate, params)?.report_id)
    }
}

pub fn save_artifact(ws: &Workspace, code: &CodeArtifact) -> Result<String> {
    let name = std::path::Path::new(&code.filename);
    let ok = name.file_name().map(|f| f == name.as_os_str()).unwrap_or(false) && !code.filename.starts_with('.');
    if !ok {
        return Err(ServiceError::field("filename", "must be a plain file name"));
    }
    let id = ws.next_id(ARTIFACT_PREFIX);
    let dir = ws.artifact_dir(&id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(name), &code.content)?;
    Ok(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Training blocks until the run ends; used by the CLI chat and tests.
    Inline,
    /// Training returns once queued and reports back through the notifier.
    Background,
}

pub type Notifier = Arc<dyn Fn(String, ResearchPhase) + Send + Sync>;

pub struct WorkspaceExecutor {
    runs: Arc<RunRegistry>,
    mode: ExecMode,
    notifier: Option<Notifier>,
}

pub fn run_notice(s: &RunSnapshot) -> String {
    match (s.status, s.eval_accuracy) {
        (RunState::Finished, Some(acc)) => format!(
            "run {} finished after {} epochs, evaluation accuracy {:.3}",
            s.run_id, s.epochs_completed, acc
        ),
        (status, _) => {
            let status = serde_json::to_value(status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            match &s.error {
                Some(e) => format!("run {} {status}: {e}", s.run_id),
                None => format!("run {} {status} after {} epochs", s.run_id, s.epochs_completed),
            }
        }
    }
}

impl WorkspaceExecutor {
    pub fn new(runs: Arc<RunRegistry>, mode: ExecMode) -> Self {
        Self { runs, mode, notifier: None }
    }

    pub fn with_notifier(mut self, notifier: Notifier) -> Self {
        self.notifier = Some(notifier);
        self
    }

    fn ws(&self) -> &Workspace {
        self.runs.workspace()
    }

    pub fn run(&mut self, action: &PendingAction) -> Result<ResultRef> {
        let payload = action.payload.clone();
        let (kind, id) = match action.kind {
            ActionKind::Analysis => {
                let req: AnalysisRequest = from_value_at("payload", payload)?;
                let params = parse_params("payload.params", req.params)?;
                ("report", self.ws().analyze(req.kind, params)?.report_id)
            }
            ActionKind::TrainingRun => {
                let req: RunRequest = from_value_at("payload", payload)?;
                let spec = req.to_spec(self.ws())?;
                let hook = match (self.mode, &self.notifier) {
                    (ExecMode::Background, Some(n)) => {
                        let (n, phase) = (n.clone(), action.phase);
                        Some(Box::new(move |s: &RunSnapshot| n(run_notice(s), phase)) as crate::registry::DoneHook)
                    }
                    _ => None,
                };
                let run_id = self.runs.submit(spec, hook);
                if self.mode == ExecMode::Inline {
                    let done = self.runs.wait(&run_id)?;
                    if done.status == RunState::Failed {
                        return Err(ServiceError::new(422, "TrainingError", run_notice(&done)));
                    }
                }
                ("run", run_id)
            }
            ActionKind::Figure => {
                let req: FigureRequest = from_value_at("payload", payload)?;
                ("figure", req.render(self.ws())?.figure_id)
            }
            ActionKind::Code => {
                let code: CodeArtifact = from_value_at("payload", payload)?;
                ("artifact", save_artifact(self.ws(), &code)?)
            }
            ActionKind::TestGeneration => {
                let req: SynthRequest = from_value_at("payload", payload)?;
                ("report", req.run(self.ws())?)
            }
        };
        Ok(ResultRef { kind: kind.into(), id })
    }
}

impl Executor for WorkspaceExecutor {
    fn execute(&mut self, action: &PendingAction) -> Result<ResultRef, String> {
        self.run(action).map_err(|e| e.to_string())
    }
}
