//! Background training runs, at most `max_parallel_runs` at a time.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use chatbci_core::decoder::DecoderConfig;
use chatbci_core::preprocess::Pipeline;
use chatbci_core::training::{train_subject, EpochRecord, RunHooks, RunSpec, RunStatus, TrainConfig, TrainRun};

use crate::error::{from_value_at, Result, ServiceError};
use crate::workspace::{Workspace, RUN_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Queued,
    Running,
    Finished,
    Failed,
    Stopped,
}

impl From<RunStatus> for RunState {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Running => RunState::Running,
            RunStatus::Finished => RunState::Finished,
            RunStatus::Failed => RunState::Failed,
            RunStatus::Stopped => RunState::Stopped,
        }
    }
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Finished | RunState::Failed | RunState::Stopped)
    }
}

/// What GET /api/runs/{id} returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub run_id: String,
    pub subject_id: String,
    pub status: RunState,
    pub epochs_completed: usize,
    pub metrics: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub confusion: Option<Vec<Vec<usize>>>,
    pub class_labels: Vec<String>,
    pub error: Option<String>,
}

impl RunSnapshot {
    fn from_run(run: &TrainRun) -> Self {
        Self {
            run_id: run.run_id.clone(),
            subject_id: run.subject_id.clone(),
            status: run.status.into(),
            epochs_completed: run.epochs.len(),
            metrics: run.epochs.clone(),
            best_epoch: run.best_epoch,
            best_val_acc: run.best_val_acc,
            eval_accuracy: run.eval_accuracy,
            confusion: run.confusion.clone(),
            class_labels: run.class_labels.clone(),
            error: run.error.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Default,
    /// Few filters, short training; for smoke tests and demos.
    Tiny,
}

impl Preset {
    pub fn decoder(self) -> DecoderConfig {
        match self {
            Preset::Default => DecoderConfig::default(),
            Preset::Tiny => DecoderConfig {
                temporal_filters: 4,
                spatial_filters: 4,
                pool_length: 50,
                pool_stride: 25,
                ..DecoderConfig::default()
            },
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Default => TrainConfig::default(),
            Preset::Tiny => TrainConfig { max_epochs: 3, early_stop_patience: 3, batch_size: 32, ..TrainConfig::default() },
        }
    }
}

/// Body of POST /api/runs; the configs are partial and merged onto the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub subject_id: String,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub decoder_cfg: Option<Value>,
    #[serde(default)]
    pub train_cfg: Option<Value>,
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    #[serde(default)]
    pub include_eog: Option<bool>,
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn merged<T: Serialize + serde::de::DeserializeOwned>(field: &str, base: &T, patch: Option<&Value>) -> Result<T> {
    let Some(patch) = patch else {
        return from_value_at(field, serde_json::to_value(base)?);
    };
    if !patch.is_object() {
        return Err(ServiceError::field(field, "must be an object"));
    }
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, patch);
    from_value_at(field, v)
}

impl RunRequest {
    /// Resolve presets and patches into a full spec; `run_id` left empty.
    pub fn to_spec(&self, ws: &Workspace) -> Result<RunSpec> {
        if self.subject_id.trim().is_empty() {
            return Err(ServiceError::field("subject_id", "must not be empty"));
        }
        let subject_id = ws.resolve_subject(&self.subject_id)?;
        let mut decoder = merged("decoder_cfg", &self.preset.decoder(), self.decoder_cfg.as_ref())?;
        if let Some(e) = self.include_eog {
            decoder.include_eog = e;
        }
        let train: TrainConfig = merged("train_cfg", &self.preset.train(), self.train_cfg.as_ref())?;
        train.validate().map_err(|e| ServiceError::field("train_cfg", e.to_string()))?;
        // channel and sample counts come from the data at train time
        let probe = DecoderConfig { n_channels: 1, n_samples: usize::MAX / 2, ..decoder.clone() };
        probe.validate().map_err(|e| ServiceError::field("decoder_cfg", e.to_string()))?;
        Ok(RunSpec {
            run_id: String::new(),
            subject_id,
            decoder,
            train,
            pipeline: self.pipeline.clone().unwrap_or_else(Pipeline::decoding_default),
        })
    }
}

pub type DoneHook = Box<dyn FnOnce(&RunSnapshot) + Send>;

struct Entry {
    snapshot: RunSnapshot,
    cancel: Arc<AtomicBool>,
    on_done: Option<DoneHook>,
}

struct Job {
    spec: RunSpec,
}

struct Shared {
    ws: Arc<Workspace>,
    runs: Mutex<HashMap<String, Entry>>,
    changed: Condvar,
    queue: Mutex<(VecDeque<Job>, bool)>,
    work: Condvar,
}

pub struct RunRegistry {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl RunRegistry {
    pub fn new(ws: Arc<Workspace>, max_parallel_runs: usize) -> Self {
        let shared = Arc::new(Shared {
            ws,
            runs: Mutex::new(HashMap::new()),
            changed: Condvar::new(),
            queue: Mutex::new((VecDeque::new(), false)),
            work: Condvar::new(),
        });
        let workers = (0..max_parallel_runs.max(1))
            .map(|i| {
                let s = shared.clone();
                std::thread::Builder::new()
                    .name(format!("run-worker-{i}"))
                    .spawn(move || worker(s))
                    .expect("spawn run worker")
            })
            .collect();
        Self { shared, workers }
    }

    pub fn workspace(&self) -> &Arc<Workspace> {
        &self.shared.ws
    }

    pub fn submit(&self, mut spec: RunSpec, on_done: Option<DoneHook>) -> String {
        let run_id = self.shared.ws.next_id(RUN_PREFIX);
        spec.run_id = run_id.clone();
        let snapshot = RunSnapshot {
            status: RunState::Queued,
            ..RunSnapshot::from_run(&TrainRun::new(&run_id, &spec.subject_id))
        };
        lock(&self.shared.runs)
            .insert(run_id.clone(), Entry { snapshot, cancel: Arc::new(AtomicBool::new(false)), on_done });
        let mut q = lock(&self.shared.queue);
        q.0.push_back(Job { spec });
        self.shared.work.notify_one();
        run_id
    }

    /// In-memory state if the run belongs to this process, else its files.
    pub fn snapshot(&self, run_id: &str) -> Result<RunSnapshot> {
        if let Some(e) = lock(&self.shared.runs).get(run_id) {
            return Ok(e.snapshot.clone());
        }
        Ok(RunSnapshot::from_run(&self.shared.ws.load_run(run_id)?))
    }

    pub fn list(&self) -> Vec<RunSnapshot> {
        let mut v: Vec<RunSnapshot> = lock(&self.shared.runs).values().map(|e| e.snapshot.clone()).collect();
        v.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        v
    }

    pub fn cancel(&self, run_id: &str) -> Result<RunSnapshot> {
        let mut runs = lock(&self.shared.runs);
        let e = runs.get_mut(run_id).ok_or_else(|| ServiceError::not_found(format!("run {run_id}")))?;
        e.cancel.store(true, Ordering::SeqCst);
        Ok(e.snapshot.clone())
    }

    /// Block until the run reaches a terminal state.
    pub fn wait(&self, run_id: &str) -> Result<RunSnapshot> {
        let mut runs = lock(&self.shared.runs);
        loop {
            let e = runs.get(run_id).ok_or_else(|| ServiceError::not_found(format!("run {run_id}")))?;
            if e.snapshot.status.is_terminal() {
                return Ok(e.snapshot.clone());
            }
            runs = self.shared.changed.wait(runs).unwrap_or_else(|e| e.into_inner());
        }
    }
}

impl Drop for RunRegistry {
    fn drop(&mut self) {
        for e in lock(&self.shared.runs).values() {
            e.cancel.store(true, Ordering::SeqCst);
        }
        lock(&self.shared.queue).1 = true;
        self.shared.work.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn worker(shared: Arc<Shared>) {
    loop {
        let job = {
            let mut q = lock(&shared.queue);
            loop {
                if q.1 {
                    return;
                }
                if let Some(j) = q.0.pop_front() {
                    break j;
                }
                q = shared.work.wait(q).unwrap_or_else(|e| e.into_inner());
            }
        };
        run_job(&shared, job);
    }
}

fn run_job(shared: &Arc<Shared>, job: Job) {
    let run_id = job.spec.run_id.clone();
    let cancel = {
        let mut runs = lock(&shared.runs);
        let Some(e) = runs.get_mut(&run_id) else { return };
        e.snapshot.status = RunState::Running;
        e.cancel.clone()
    };
    shared.changed.notify_all();
    let progress = shared.clone();
    let id = run_id.clone();
    let hooks = RunHooks {
        cancel: Some(cancel),
        on_epoch: Some(Box::new(move |rec: &EpochRecord| {
            if let Some(e) = lock(&progress.runs).get_mut(&id) {
                e.snapshot.metrics.push(rec.clone());
                e.snapshot.epochs_completed = e.snapshot.metrics.len();
            }
            progress.changed.notify_all();
        })),
    };
    let dir = shared.ws.run_dir(&run_id);
    let outcome = train_subject(shared.ws.store(), &job.spec, &dir, hooks);
    let (snapshot, hook) = {
        let mut runs = lock(&shared.runs);
        let Some(e) = runs.get_mut(&run_id) else { return };
        e.snapshot = match &outcome {
            Ok(run) => RunSnapshot::from_run(run),
            Err(err) => RunSnapshot {
                status: RunState::Failed,
                error: Some(format!("{}: {err}", err.kind())),
                ..e.snapshot.clone()
            },
        };
        (e.snapshot.clone(), e.on_done.take())
    };
    shared.changed.notify_all();
    if let Some(h) = hook {
        h(&snapshot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chatbci_core::data::Session;
    use chatbci_core::synth::{generate, SynthSpec};

    fn workspace(dir: &std::path::Path) -> Arc<Workspace> {
        let ws = Workspace::open(dir.join("ws"), dir.join("data")).unwrap();
        for session in [Session::Train, Session::Eval] {
            let spec = SynthSpec { subject_id: "A01".into(), trials_per_class: 8, session, ..SynthSpec::default() };
            ws.store().save(&generate(&spec).unwrap()).unwrap();
        }
        Arc::new(ws)
    }

    fn tiny_request() -> RunRequest {
        RunRequest {
            subject_id: "1".into(),
            preset: Preset::Tiny,
            decoder_cfg: Some(serde_json::json!({"temporal_kernel": 11, "pool_length": 20, "pool_stride": 10})),
            train_cfg: Some(serde_json::json!({"max_epochs": 2, "early_stop_patience": 2})),
            pipeline: Some(Pipeline { window_s: (0.0, 1.0), ..Pipeline::decoding_default() }),
            include_eog: None,
        }
    }

    #[test]
    fn request_merges_onto_preset() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let spec = tiny_request().to_spec(&ws).unwrap();
        assert_eq!(spec.subject_id, "A01");
        assert_eq!(spec.decoder.temporal_filters, 4);
        assert_eq!(spec.decoder.temporal_kernel, 11);
        assert_eq!(spec.train.max_epochs, 2);
        assert_eq!(spec.train.batch_size, 32);

        let bad = RunRequest { train_cfg: Some(serde_json::json!({"max_epoch": 2})), ..tiny_request() };
        assert!(bad.to_spec(&ws).unwrap_err().fields.contains_key("train_cfg.max_epoch"));
        let bad = RunRequest { decoder_cfg: Some(serde_json::json!({"dropout_p": "high"})), ..tiny_request() };
        assert!(bad.to_spec(&ws).unwrap_err().fields.contains_key("decoder_cfg.dropout_p"));
        let bad = RunRequest { subject_id: "A09".into(), ..tiny_request() };
        assert_eq!(bad.to_spec(&ws).unwrap_err().status, 404);
    }

    #[test]
    fn runs_complete_and_notify() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let reg = RunRegistry::new(ws.clone(), 1);
        let (tx, rx) = std::sync::mpsc::channel();
        let spec = tiny_request().to_spec(&ws).unwrap();
        let id = reg.submit(spec.clone(), Some(Box::new(move |s: &RunSnapshot| tx.send(s.status).unwrap())));
        let second = reg.submit(spec, None);
        assert_eq!((id.as_str(), second.as_str()), ("run-0001", "run-0002"));
        let done = reg.wait(&id).unwrap();
        assert_eq!(done.status, RunState::Finished);
        assert_eq!(done.metrics.len(), done.epochs_completed);
        assert_eq!(rx.recv().unwrap(), RunState::Finished);
        reg.wait(&second).unwrap();
        assert_eq!(reg.list().len(), 2);
        drop(reg);
        // a fresh registry falls back to the files
        let reg = RunRegistry::new(ws, 1);
        assert_eq!(reg.snapshot("run-0001").unwrap().status, RunState::Finished);
        assert_eq!(reg.snapshot("run-0404").unwrap_err().status, 404);
    }
}
