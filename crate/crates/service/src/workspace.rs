//! Filesystem layout for everything the service produces:
//!
//! ```text
//! <root>/reports/<report_id>.json
//! <root>/runs/<run_id>/...
//! <root>/figures/<figure_id>.png, <figure_id>.data.json
//! <root>/sessions/<session_id>/transcript.jsonl
//! <root>/artifacts/<artifact_id>/<file>
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use chatbci_core::analysis::{class_channel_stats, erp, psd, ErpResult, WelchParams};
use chatbci_core::data::{validate, DataStore, Session, ValidationReport};
use chatbci_core::figures::{curves_figure, erp_figure, ErpFigureSpec, Figure};
use chatbci_core::preprocess::{EpochSet, FilterSpec, Pipeline};
use chatbci_core::training::{read_metrics, TrainRun};

use crate::error::{from_value_at, Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisKind {
    Erp,
    Psd,
    Stats,
    Validate,
}

impl AnalysisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisKind::Erp => "erp",
            AnalysisKind::Psd => "psd",
            AnalysisKind::Stats => "stats",
            AnalysisKind::Validate => "validate",
        }
    }

    pub fn default_pipeline(self) -> Pipeline {
        match self {
            AnalysisKind::Erp => Pipeline::erp_default(),
            _ => Pipeline::decoding_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// Subject ids or bare numbers; empty means every subject.
    pub subjects: Vec<String>,
    pub session: Session,
    /// Replaces the kind's default pipeline.
    pub pipeline: Option<Pipeline>,
    /// Filter tokens (`lp:40`, `hp:4`, `bp:8-30`) replacing the pipeline's.
    pub filters: Option<Vec<String>>,
    pub window_s: Option<(f64, f64)>,
    pub include_eog: Option<bool>,
    pub car: Option<bool>,
    pub welch: WelchParams,
    pub outlier_k: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            subjects: Vec::new(),
            session: Session::Train,
            pipeline: None,
            filters: None,
            window_s: None,
            include_eog: None,
            car: None,
            welch: WelchParams::default(),
            outlier_k: 6.0,
        }
    }
}

impl AnalysisParams {
    pub fn resolved_pipeline(&self, kind: AnalysisKind) -> Result<Pipeline> {
        let mut p = self.pipeline.clone().unwrap_or_else(|| kind.default_pipeline());
        if let Some(tokens) = &self.filters {
            p.filters = tokens
                .iter()
                .map(|t| FilterSpec::parse_token(t).map_err(|e| ServiceError::field("filters", e.to_string())))
                .collect::<Result<_>>()?;
        }
        if let Some(w) = self.window_s {
            p.window_s = w;
        }
        if let Some(e) = self.include_eog {
            p.include_eog = e;
        }
        if let Some(c) = self.car {
            p.car = c;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub kind: AnalysisKind,
    pub status: ReportStatus,
    pub params: AnalysisParams,
    #[serde(default)]
    pub subjects: Vec<String>,
    #[serde(default)]
    pub result: Option<Value>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetEntry {
    pub subject_id: String,
    pub session: Session,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sampling_rate_hz: f64,
    pub n_events: usize,
    pub pass: bool,
    pub summary: String,
}

#[derive(Debug, Default)]
struct Counters(HashMap<&'static str, usize>);

pub struct Workspace {
    root: PathBuf,
    store: DataStore,
    counters: Mutex<Counters>,
}

pub const REPORT_PREFIX: &str = "rep";
pub const RUN_PREFIX: &str = "run";
pub const SESSION_PREFIX: &str = "sess";
pub const ARTIFACT_PREFIX: &str = "art";

fn highest_id(dir: &Path, prefix: &str) -> usize {
    let Ok(rd) = fs::read_dir(dir) else { return 0 };
    rd.filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let stem = name.split('.').next()?.to_string();
            stem.strip_prefix(&format!("{prefix}-"))?.parse::<usize>().ok()
        })
        .max()
        .unwrap_or(0)
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>, data_root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in ["reports", "runs", "figures", "sessions", "artifacts"] {
            fs::create_dir_all(root.join(d))?;
        }
        let mut counters = Counters::default();
        counters.0.insert(REPORT_PREFIX, highest_id(&root.join("reports"), REPORT_PREFIX));
        counters.0.insert(RUN_PREFIX, highest_id(&root.join("runs"), RUN_PREFIX));
        counters.0.insert(SESSION_PREFIX, highest_id(&root.join("sessions"), SESSION_PREFIX));
        counters.0.insert(ARTIFACT_PREFIX, highest_id(&root.join("artifacts"), ARTIFACT_PREFIX));
        Ok(Self { root, store: DataStore::new(data_root), counters: Mutex::new(counters) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self) -> &DataStore {
        &self.store
    }

    /// Next id of the form `<prefix>-0001`.
    pub fn next_id(&self, prefix: &'static str) -> String {
        let mut c = self.counters.lock().unwrap_or_else(|e| e.into_inner());
        let n = c.0.entry(prefix).or_insert(0);
        *n += 1;
        format!("{prefix}-{:04}", *n)
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn figures_dir(&self) -> PathBuf {
        self.root.join("figures")
    }

    pub fn session_dir(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(session_id)
    }

    pub fn artifact_dir(&self, artifact_id: &str) -> PathBuf {
        self.root.join("artifacts").join(artifact_id)
    }

    pub fn report_path(&self, report_id: &str) -> PathBuf {
        self.root.join("reports").join(format!("{report_id}.json"))
    }

    fn resolve_subjects(&self, wanted: &[String]) -> Result<Vec<String>> {
        if wanted.is_empty() {
            let all = self.store.subjects()?;
            if all.is_empty() {
                return Err(ServiceError::not_found(format!("no recordings under {}", self.store.root().display())));
            }
            return Ok(all);
        }
        wanted
            .iter()
            .map(|q| {
                self.store
                    .resolve_subject(q)
                    .ok_or_else(|| ServiceError::not_found(format!("subject {q:?}")))
            })
            .collect()
    }

    pub fn resolve_subject(&self, query: &str) -> Result<String> {
        self.store.resolve_subject(query).ok_or_else(|| ServiceError::not_found(format!("subject {query:?}")))
    }

    pub fn datasets(&self) -> Result<Vec<DatasetEntry>> {
        let mut out = Vec::new();
        for e in self.store.entries()? {
            let rec = self.store.load(&e.subject_id, e.session)?;
            let report = validate(&rec);
            out.push(DatasetEntry {
                subject_id: e.subject_id,
                session: e.session,
                n_channels: rec.n_channels(),
                n_samples: rec.n_samples(),
                sampling_rate_hz: rec.sampling_rate_hz,
                n_events: rec.events.len(),
                pass: report.pass,
                summary: report.summary(),
            });
        }
        Ok(out)
    }

    pub fn validation_reports(&self, subjects: &[String]) -> Result<Vec<ValidationReport>> {
        let subjects = self.resolve_subjects(subjects)?;
        let mut out = Vec::new();
        for e in self.store.entries()? {
            if subjects.contains(&e.subject_id) {
                out.push(validate(&self.store.load(&e.subject_id, e.session)?));
            }
        }
        Ok(out)
    }

    /// Epochs of every requested subject, pooled.
    pub fn epochs(&self, subjects: &[String], session: Session, pipeline: &Pipeline) -> Result<EpochSet> {
        let mut sets = Vec::with_capacity(subjects.len());
        for s in subjects {
            sets.push(pipeline.run(&self.store.load(s, session)?)?);
        }
        Ok(EpochSet::concat(&sets)?)
    }

    pub fn compute(&self, kind: AnalysisKind, params: &AnalysisParams) -> Result<(Vec<String>, Value)> {
        let subjects = self.resolve_subjects(&params.subjects)?;
        if kind == AnalysisKind::Validate {
            let reports = self.validation_reports(&subjects)?;
            let pass = reports.iter().all(|r| r.pass);
            return Ok((subjects, json!({"pass": pass, "reports": reports})));
        }
        let pipeline = params.resolved_pipeline(kind)?;
        let ep = self.epochs(&subjects, params.session, &pipeline)?;
        let mut value = match kind {
            AnalysisKind::Erp => erp(&ep)?.to_json(),
            AnalysisKind::Psd => psd(&ep, &params.welch)?.to_json(),
            AnalysisKind::Stats => class_channel_stats(&ep, params.outlier_k)?.to_json(),
            AnalysisKind::Validate => unreachable!(),
        };
        if let Value::Object(m) = &mut value {
            m.insert("pipeline".into(), serde_json::to_value(&pipeline)?);
            m.insert("n_trials".into(), json!(ep.n_trials()));
        }
        Ok((subjects, value))
    }

    pub fn write_report(&self, report: &Report) -> Result<()> {
        let path = self.report_path(&report.report_id);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(report)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load_report(&self, report_id: &str) -> Result<Report> {
        if !valid_id(report_id) {
            return Err(ServiceError::not_found(format!("report {report_id}")));
        }
        let bytes = fs::read(self.report_path(report_id))
            .map_err(|_| ServiceError::not_found(format!("report {report_id}")))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Reserve an id and write a pending report.
    pub fn begin_analysis(&self, kind: AnalysisKind, params: AnalysisParams) -> Result<Report> {
        params.resolved_pipeline(kind)?;
        let report = Report {
            report_id: self.next_id(REPORT_PREFIX),
            kind,
            status: ReportStatus::Pending,
            params,
            subjects: Vec::new(),
            result: None,
            error: None,
        };
        self.write_report(&report)?;
        Ok(report)
    }

    pub fn finish_analysis(&self, mut report: Report) -> Report {
        match self.compute(report.kind, &report.params) {
            Ok((subjects, value)) => {
                report.subjects = subjects;
                report.result = Some(value);
                report.status = ReportStatus::Done;
            }
            Err(e) => {
                report.status = ReportStatus::Failed;
                report.error = Some(e.to_string());
            }
        }
        if let Err(e) = self.write_report(&report) {
            report.status = ReportStatus::Failed;
            report.error = Some(e.to_string());
        }
        report
    }

    /// Synchronous analysis; the report is on disk when this returns.
    pub fn analyze(&self, kind: AnalysisKind, params: AnalysisParams) -> Result<Report> {
        let report = self.finish_analysis(self.begin_analysis(kind, params)?);
        match report.status {
            ReportStatus::Done => Ok(report),
            _ => Err(ServiceError::new(422, "AnalysisError", report.error.clone().unwrap_or_default())),
        }
    }

    pub fn erp_figure(&self, report_id: &str, spec: &ErpFigureSpec) -> Result<Figure> {
        let report = self.load_report(report_id)?;
        if report.kind != AnalysisKind::Erp {
            return Err(ServiceError::field("report_id", format!("{report_id} is a {} report", report.kind.as_str())));
        }
        let result = report
            .result
            .ok_or_else(|| ServiceError::new(409, "PreconditionError", format!("report {report_id} is not done")))?;
        let fig = erp_figure(&ErpResult::from_json(&result)?, spec)?;
        fig.save(&self.figures_dir())?;
        Ok(fig)
    }

    pub fn load_run(&self, run_id: &str) -> Result<TrainRun> {
        if !valid_id(run_id) {
            return Err(ServiceError::not_found(format!("run {run_id}")));
        }
        let dir = self.run_dir(run_id);
        let bytes = fs::read(dir.join("status.json")).map_err(|_| ServiceError::not_found(format!("run {run_id}")))?;
        let mut run: TrainRun = serde_json::from_slice(&bytes)?;
        if dir.join("metrics.jsonl").exists() {
            run.epochs = read_metrics(&dir)?;
        }
        Ok(run)
    }

    pub fn curves_figure(&self, run_ids: &[String]) -> Result<Figure> {
        let runs = run_ids.iter().map(|id| self.load_run(id)).collect::<Result<Vec<_>>>()?;
        let fig = curves_figure(&runs)?;
        fig.save(&self.figures_dir())?;
        Ok(fig)
    }

    pub fn figure_png(&self, figure_id: &str) -> Result<Vec<u8>> {
        if !valid_id(figure_id) {
            return Err(ServiceError::not_found(format!("figure {figure_id}")));
        }
        fs::read(Figure::png_path(&self.figures_dir(), figure_id))
            .map_err(|_| ServiceError::not_found(format!("figure {figure_id}")))
    }

    pub fn figure_sidecar(&self, figure_id: &str) -> Result<Vec<u8>> {
        if !valid_id(figure_id) {
            return Err(ServiceError::not_found(format!("figure {figure_id}")));
        }
        fs::read(Figure::sidecar_path(&self.figures_dir(), figure_id))
            .map_err(|_| ServiceError::not_found(format!("figure {figure_id}")))
    }
}

/// Ids never contain path separators or dots.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn parse_params<T: serde::de::DeserializeOwned + Default>(field: &str, value: Option<Value>) -> Result<T> {
    match value {
        None | Some(Value::Null) => Ok(T::default()),
        Some(v) => from_value_at(field, v),
    }
}
