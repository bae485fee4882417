use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use chatbci_assist::bridge::provider::MockProvider;
use chatbci_assist::ideation::{generate_ideas, novelty_check, save_ideas};
use chatbci_assist::{summarize_directory, Provider, ResearchPhase};
use chatbci_core::data::{load_recording, validate, Session, META_FILE};
use chatbci_core::figures::ErpFigureSpec;
use chatbci_core::synth::{generate, SynthSpec};

use crate::api::App;
use crate::config::{Config, ProviderKind};
use crate::error::{Result, ServiceError};
use crate::registry::{Preset, RunRequest, RunState};
use crate::workspace::{AnalysisKind, AnalysisParams, Workspace};

#[derive(Debug, Parser)]
#[command(name = "chatbci", version, about = "EEG analysis, decoding and assisted research sessions")]
pub struct Cli {
    /// Settings file; defaults to ./chatbci.json when present.
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Output directory; replaces the configured workspace.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Converted recordings; replaces the configured data root.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct AnalysisArgs {
    /// Comma-separated subject ids or numbers; all subjects when omitted.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Vec<String>,
    /// Filter tokens such as lp:40, hp:4 or bp:8-30.
    #[arg(long, value_delimiter = ',')]
    pub filters: Option<Vec<String>>,
    /// Epoch window in seconds relative to the cue, e.g. -0.5,2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    pub window: Option<Vec<f64>>,
    #[arg(long, default_value = "train")]
    pub session: String,
    #[arg(long)]
    pub include_eog: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check converted recordings: a data root or one recording directory.
    Validate {
        dataset_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trial-averaged potentials per class; also renders the ERP figure.
    Erp(AnalysisArgs),
    /// Welch spectra per class.
    Psd(AnalysisArgs),
    /// Per-class, per-channel statistics and outlier flags.
    Stats(AnalysisArgs),
    /// Train and evaluate the decoder for one subject.
    Train {
        #[arg(long)]
        subject: String,
        #[arg(long)]
        include_eog: bool,
        #[arg(long, value_enum, default_value = "default")]
        preset: PresetArg,
        /// JSON object merged onto the preset's training settings.
        #[arg(long)]
        train_cfg: Option<String>,
        /// JSON object merged onto the preset's decoder settings.
        #[arg(long)]
        decoder_cfg: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Ask the assistant for research ideas and score their novelty.
    Ideate {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value = "motor imagery EEG decoding")]
        topic: String,
        /// Mock provider and mock literature only.
        #[arg(long)]
        offline: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe a directory at granularity 0, 1 or 2.
    Summarize {
        dir: PathBuf,
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=2))]
        level: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the REST API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        common: Common,
    },
    /// Terminal chat session.
    Chat {
        #[arg(long, default_value = "experiment_design")]
        phase: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write mock recordings in the IV 2a layout.
    Synth {
        #[arg(long, default_value_t = 2)]
        subjects: usize,
        #[arg(long, default_value_t = 12)]
        trials_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PresetArg {
    Default,
    Tiny,
}

fn config_with(cfg: &Config, common: &Common) -> Config {
    let mut cfg = cfg.clone();
    if let Some(o) = &common.out {
        cfg.workspace = o.clone();
    }
    if let Some(d) = &common.data {
        cfg.data_root = d.clone();
    }
    cfg
}

fn workspace(cfg: &Config) -> Result<Workspace> {
    Workspace::open(&cfg.workspace, &cfg.data_root)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn parse_json_arg(field: &str, text: &Option<String>) -> Result<Option<Value>> {
    text.as_deref()
        .map(|t| serde_json::from_str(t).map_err(|e| ServiceError::field(field, e.to_string())))
        .transpose()
}

fn analysis(cfg: &Config, kind: AnalysisKind, a: &AnalysisArgs) -> Result<Value> {
    let cfg = config_with(cfg, &a.common);
    let ws = workspace(&cfg)?;
    let window_s = match a.window.as_deref() {
        None => None,
        Some([lo, hi]) => Some((*lo, *hi)),
        Some(_) => return Err(ServiceError::field("window", "expects two numbers, e.g. -0.5,2")),
    };
    let session: Session = serde_json::from_value(json!(a.session))
        .map_err(|_| ServiceError::field("session", "train or eval"))?;
    let params = AnalysisParams {
        subjects: a.subjects.clone(),
        session,
        filters: a.filters.clone(),
        window_s,
        include_eog: a.include_eog.then_some(true),
        ..AnalysisParams::default()
    };
    let report = ws.analyze(kind, params)?;
    let mut out = json!({
        "report_id": report.report_id,
        "report": ws.report_path(&report.report_id),
        "subjects": report.subjects,
    });
    if kind == AnalysisKind::Erp {
        let fig = ws.erp_figure(&report.report_id, &ErpFigureSpec::default())?;
        out["figure_id"] = json!(fig.figure_id);
    }
    Ok(out)
}

fn validate_cmd(dataset_dir: &Path, out: Option<&Path>) -> Result<Value> {
    let reports = if dataset_dir.join(META_FILE).is_file() {
        vec![validate(&load_recording(dataset_dir)?)]
    } else {
        let ws = Workspace::open(out.unwrap_or(Path::new("out")), dataset_dir)?;
        ws.validation_reports(&[])?
    };
    let pass = reports.iter().all(|r| r.pass);
    let doc = json!({ "pass": pass, "reports": reports });
    let path = out.unwrap_or(Path::new("out")).join("validation.json");
    write_json(&path, &doc)?;
    if !pass {
        let failing: Vec<String> =
            reports.iter().filter(|r| !r.pass).map(|r| format!("{}/{}", r.subject_id, r.session.as_str())).collect();
        return Err(ServiceError::new(422, "ValidationFailed", format!("failing recordings: {}", failing.join(", "))));
    }
    Ok(json!({
        "pass": true,
        "recordings": reports.len(),
        "report": path,
        "summaries": reports.iter().map(|r| r.summary()).collect::<Vec<_>>(),
    }))
}

fn ideate(cfg: &Config, n: usize, topic: &str, offline: bool, out: Option<&Path>) -> Result<Value> {
    if n == 0 {
        return Err(ServiceError::field("n", "must be positive"));
    }
    let provider: Arc<dyn Provider> = if offline && cfg.llm.provider != ProviderKind::Mock {
        Arc::new(MockProvider::new())
    } else {
        cfg.provider()?
    };
    let batch = generate_ideas(n, topic, provider.as_ref(), &cfg.llm.params(), &cfg.llm.retry)?;
    let literature = cfg.literature_client(offline)?;
    let mut cards = batch.cards;
    let mut novelty = Vec::with_capacity(cards.len());
    for card in &mut cards {
        let report = novelty_check(card, literature.as_ref());
        card.novelty_score = report.score;
        novelty.push(json!({ "id": card.id, "report": report }));
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.workspace.clone());
    let ideas_path = out.join("ideas.jsonl");
    save_ideas(&ideas_path, &cards)?;
    write_json(&out.join("novelty.json"), &json!(novelty))?;
    Ok(json!({
        "ideas": ideas_path,
        "parsed": batch.report.parsed,
        "dropped": batch.report.dropped,
        "cards": cards,
    }))
}

fn train(
    cfg: &Config,
    subject: &str,
    include_eog: bool,
    preset: PresetArg,
    train_cfg: Option<Value>,
    decoder_cfg: Option<Value>,
) -> Result<Value> {
    let app = App::new(cfg.clone())?;
    let req = RunRequest {
        subject_id: subject.to_string(),
        preset: match preset {
            PresetArg::Default => Preset::Default,
            PresetArg::Tiny => Preset::Tiny,
        },
        decoder_cfg,
        train_cfg,
        pipeline: None,
        include_eog: include_eog.then_some(true),
    };
    let spec = req.to_spec(&app.ws)?;
    let run_id = app.runs.submit(spec, None);
    let done = app.runs.wait(&run_id)?;
    let dir = app.ws.run_dir(&run_id);
    if done.status != RunState::Finished {
        return Err(ServiceError::new(
            422,
            "TrainingError",
            done.error.clone().unwrap_or_else(|| format!("run {run_id} ended early")),
        ));
    }
    Ok(json!({
        "run_id": run_id,
        "run_dir": dir,
        "epochs": done.epochs_completed,
        "best_epoch": done.best_epoch,
        "best_val_acc": done.best_val_acc,
        "eval_accuracy": done.eval_accuracy,
    }))
}

fn synth(cfg: &Config, subjects: usize, trials_per_class: usize, seed: u64) -> Result<Value> {
    let store = chatbci_core::data::DataStore::new(&cfg.data_root);
    let mut written = Vec::new();
    for i in 1..=subjects {
        let sid = format!("A{i:02}");
        for (j, session) in [Session::Train, Session::Eval].into_iter().enumerate() {
            let spec = SynthSpec::iv2a_like(&sid, session, trials_per_class, seed + (i as u64) * 2 + j as u64);
            written.push(store.save(&generate(&spec)?)?);
        }
    }
    Ok(json!({ "data_root": cfg.data_root, "recordings": written }))
}

/// Run one command. Long-lived commands (serve, chat) return when done.
pub fn run(cli: Cli) -> Result<Value> {
    let cfg = Config::discover(cli.config.as_deref())?;
    match cli.command {
        Command::Validate { dataset_dir, out } => validate_cmd(&dataset_dir, out.as_deref()),
        Command::Erp(a) => analysis(&cfg, AnalysisKind::Erp, &a),
        Command::Psd(a) => analysis(&cfg, AnalysisKind::Psd, &a),
        Command::Stats(a) => analysis(&cfg, AnalysisKind::Stats, &a),
        Command::Train { subject, include_eog, preset, train_cfg, decoder_cfg, common } => {
            let t = parse_json_arg("train_cfg", &train_cfg)?;
            let d = parse_json_arg("decoder_cfg", &decoder_cfg)?;
            train(&config_with(&cfg, &common), &subject, include_eog, preset, t, d)
        }
        Command::Ideate { n, topic, offline, out } => ideate(&cfg, n, &topic, offline, out.as_deref()),
        Command::Summarize { dir, level, out } => {
            let text = summarize_directory(&dir, level)?;
            let out = out.unwrap_or_else(|| cfg.workspace.clone());
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("summary-level{level}.txt"));
            std::fs::write(&path, &text)?;
            print!("{text}");
            std::io::stdout().flush()?;
            Ok(json!({ "summary": path }))
        }
        Command::Serve { port, host, common } => {
            let cfg = config_with(&cfg, &common);
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| ServiceError::field("host", format!("{host}:{port} is not a socket address")))?;
            let app = App::new(cfg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(app, addr))?;
            Ok(json!({ "stopped": true }))
        }
        Command::Chat { phase, common } => {
            let phase: ResearchPhase = phase.parse()?;
            let app = App::new(config_with(&cfg, &common))?;
            let stdin = std::io::stdin();
            let id = crate::chat::run_chat(&app, phase, stdin.lock(), std::io::stdout())?;
            Ok(json!({ "session_id": id, "transcript": app.ws.session_dir(&id).join("transcript.jsonl") }))
        }
        Command::Synth { subjects, trials_per_class, seed, common } => {
            synth(&config_with(&cfg, &common), subjects, trials_per_class, seed)
        }
    }
}
