//! Release criteria, one line each. Runs without the test harness so every
//! line prints; exits nonzero when any criterion fails.

mod common;

#[path = "../../core/tests/common/mod.rs"]
mod core_oracles;

#[path = "../../assist/tests/common/mod.rs"]
mod assist_oracles;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use chatbci_assist::bridge::provider::{GenerationParams, MockProvider, RetryPolicy};
use chatbci_assist::bridge::transcript::Transcript;
use chatbci_assist::ideation::{generate_ideas, novelty_check, MockLiterature};
use chatbci_assist::{assemble_context, summarize_directory, ChatSession, KnowledgeDoc, ResearchPhase};
use chatbci_core::analysis::{class_channel_stats, erp, psd, WelchParams};
use chatbci_core::data::{ChannelKind, DataStore};
use chatbci_core::decoder::{gradient_check, tiny_config, ConvOrder, DecoderConfig, DecoderModel};
use chatbci_core::preprocess::{common_average_reference, FilterSpec, Pipeline, SosFilter};
use chatbci_core::synth::{generate, SynthSpec};
use chatbci_core::training::{split, train_subject, AugmentSpec, RunHooks, RunSpec, TrainConfig, Trainer};
use chatbci_service::chat::run_chat;
use chatbci_service::App;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn assist_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../assist/tests/fixtures")
}

struct Line {
    ok: Option<bool>,
    text: String,
}

fn criterion(name: &str, limit: Duration, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let took = start.elapsed();
    let res = res.and_then(|d| {
        if took <= limit {
            Ok(d)
        } else {
            Err(format!("{d}; took {took:.1?}, limit {limit:?}"))
        }
    });
    let (ok, detail) = match res {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    let tag = if ok { "PASS" } else { "FAIL" };
    Line { ok: Some(ok), text: format!("{tag} {name} [{took:.1?}] {detail}") }
}

fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin()).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn dsp_suite() -> Check {
    let mut worst_mean = 0.0f64;
    let mut worst_idem = 0.0f64;
    for seed in 0..20 {
        let rec = core_oracles::random_recording(22, 3, 1500, 0, seed);
        let once = common_average_reference(&rec).map_err(|e| e.to_string())?;
        let eeg = once.indices_of_kind(ChannelKind::Eeg);
        for t in 0..once.n_samples() {
            let m = eeg.iter().map(|&c| once.signal[[c, t]]).sum::<f64>() / eeg.len() as f64;
            worst_mean = worst_mean.max(m.abs());
        }
        let twice = common_average_reference(&once).map_err(|e| e.to_string())?;
        let d = (&twice.signal - &once.signal).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst_idem = worst_idem.max(d);
    }
    ensure(worst_mean < 1e-6, format!("CAR mean {worst_mean:e}"))?;
    ensure(worst_idem < 1e-9, format!("CAR not idempotent: {worst_idem:e}"))?;

    let fs = 250.0;
    let lp = SosFilter::design(&FilterSpec::lowpass(40.0), fs).map_err(|e| e.to_string())?;
    let hp = SosFilter::design(&FilterSpec::highpass(4.0), fs).map_err(|e| e.to_string())?;
    let (lp_dc, hp_dc) = (lp.magnitude(0.0), hp.magnitude(0.0));
    ensure((lp_dc - 1.0).abs() < 1e-3, format!("low-pass DC gain {lp_dc}"))?;
    ensure(hp_dc.abs() < 1e-3, format!("high-pass DC gain {hp_dc}"))?;

    let x = sine(50.0, fs, 5000);
    let y = lp.filtfilt(&x);
    let measured = rms(&y[1000..4000]) / rms(&x[1000..4000]);
    let expected = core_oracles::butter_power_gain(false, 4, 40.0, fs, 50.0);
    let att_err = (measured / expected - 1.0).abs();
    ensure(att_err < 0.05, format!("50 Hz gain {measured} vs {expected}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
    for spec in [FilterSpec::lowpass(40.0), FilterSpec::highpass(4.0), FilterSpec::bandpass(8.0, 30.0)] {
        let f = SosFilter::design(&spec, fs).map_err(|e| e.to_string())?;
        let lag = core_oracles::xcorr_peak_lag(&noise, &f.filtfilt(&noise), 25);
        ensure(lag == 0, format!("{spec:?} lag {lag}"))?;
    }
    Ok(format!(
        "car_mean={worst_mean:.1e} idem={worst_idem:.1e} lp_dc={lp_dc:.6} hp_dc={hp_dc:.1e} 50Hz_rel_err={att_err:.4} lag=0"
    ))
}

fn analysis_suite() -> Check {
    use core_oracles::{mean_two_pass, naive_welch, random_epochs, rel_err, var_two_pass};
    let mut worst = 0.0f64;
    let ep = random_epochs(23, 5, 120, 250.0, 1);
    let res = erp(&ep).map_err(|e| e.to_string())?;
    for k in 0..4 {
        let trials: Vec<usize> = (0..23).filter(|&i| ep.labels[i] == k).collect();
        for c in 0..5 {
            for t in 0..120 {
                let want = trials.iter().map(|&i| ep.data[[i, c, t]]).sum::<f64>() / trials.len() as f64;
                worst = worst.max(rel_err(res.data[[k, c, t]], want));
            }
        }
    }
    let ep = random_epochs(30, 4, 200, 250.0, 2);
    let st = class_channel_stats(&ep, 6.0).map_err(|e| e.to_string())?;
    for k in 0..4 {
        for c in 0..4 {
            let pooled: Vec<f64> =
                (0..30).filter(|&i| ep.labels[i] == k).flat_map(|i| ep.data.slice(s![i, c, ..]).to_vec()).collect();
            worst = worst.max(rel_err(st.mean[[k, c]], mean_two_pass(&pooled)));
            worst = worst.max(rel_err(st.variance[[k, c]], var_two_pass(&pooled)));
        }
    }
    let ep = random_epochs(8, 2, 250, 250.0, 4);
    let params = WelchParams { segment_s: 0.4, overlap: 0.5, ..WelchParams::default() };
    let res = psd(&ep, &params).map_err(|e| e.to_string())?;
    for k in 0..4 {
        let trials: Vec<usize> = (0..8).filter(|&i| ep.labels[i] == k).collect();
        for c in 0..2 {
            let per: Vec<Vec<(f64, f64)>> =
                trials.iter().map(|&i| naive_welch(&ep.data.slice(s![i, c, ..]).to_vec(), 250.0, 100, 50)).collect();
            for f in 0..res.freqs_hz.len() {
                let want = per.iter().map(|p| p[f].1).sum::<f64>() / trials.len() as f64;
                worst = worst.max(rel_err(res.data[[k, c, f]], want));
            }
        }
    }
    ensure(worst < 1e-9, format!("oracle mismatch {worst:e}"))?;

    let sigma = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut ep = random_epochs(40, 2, 1000, 250.0, 0);
    ep.data = Array3::from_shape_simple_fn((40, 2, 1000), || normal.sample(&mut rng));
    let res = psd(&ep, &WelchParams::default()).map_err(|e| e.to_string())?;
    let mut worst_var = 0.0f64;
    for k in 0..4 {
        for c in 0..2 {
            let total = res.density(k, c).iter().sum::<f64>() * res.resolution_hz();
            worst_var = worst_var.max((total / (sigma * sigma) - 1.0).abs());
        }
    }
    ensure(worst_var < 0.10, format!("white-noise variance off by {worst_var:.3}"))?;
    Ok(format!("max_rel_err={worst:.1e} white_noise_var_err={worst_var:.3}"))
}

fn decoder_suite() -> Check {
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    let default = DecoderConfig::default();
    let count = default.param_count();
    let built = DecoderModel::build(&default, 0).map_err(|e| e.to_string())?.n_params();
    notes.push(format!("params={count}"));
    if count != 6660 {
        failures.push(format!("parameter count {count} != 6660"));
    }
    if built != count {
        failures.push(format!("built model has {built} parameters, closed form {count}"));
    }

    let mut worst = 0.0f64;
    for (seed, order) in [(0, ConvOrder::TemporalFirst), (1, ConvOrder::TemporalFirst), (2, ConvOrder::SpatialFirst)] {
        let cfg = DecoderConfig { conv_order: order, ..tiny_config(3, 40) };
        let gc = gradient_check(&cfg, seed).map_err(|e| e.to_string())?;
        if !gc.all_finite {
            failures.push("non-finite gradient".into());
        }
        worst = worst.max(gc.max_rel_error);
    }
    notes.push(format!("grad_rel_err={worst:.1e}"));
    if worst >= 1e-4 {
        failures.push(format!("gradient check {worst:e}"));
    }

    let ep = core_oracles::random_epochs(6, 22, 1000, 250.0, 7);
    let a = DecoderModel::build(&default, 3).map_err(|e| e.to_string())?;
    let b = DecoderModel::build(&default, 3).map_err(|e| e.to_string())?;
    let x = a.forward_eval(ep.data.view()).map_err(|e| e.to_string())?;
    let y = a.forward_eval(ep.data.view()).map_err(|e| e.to_string())?;
    let z = b.forward_eval(ep.data.view()).map_err(|e| e.to_string())?;
    if x != y || x != z {
        failures.push("eval-mode outputs differ".into());
    }

    let small = DecoderConfig { temporal_filters: 4, spatial_filters: 8, ..DecoderConfig::new(4, 250) };
    let ep = core_oracles::random_epochs(8, 4, 250, 250.0, 3);
    let stop = Arc::new(AtomicBool::new(false));
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 200,
        early_stop_patience: 200,
        augmentation: AugmentSpec::disabled(),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(small, cfg);
    trainer.cancel = Some(stop.clone());
    let flag = stop.clone();
    trainer.on_epoch = Some(Box::new(move |rec, _, _| {
        if rec.train_acc == 1.0 {
            flag.store(true, Ordering::SeqCst);
        }
        Ok(())
    }));
    let out = trainer.fit(&ep, &ep).map_err(|e| e.to_string())?;
    let last = out.epochs.last().map(|r| r.train_acc).unwrap_or(0.0);
    notes.push(format!("overfit_epochs={}", out.epochs.len()));
    if last != 1.0 {
        failures.push(format!("8-trial overfit reached only {last}"));
    }
    if failures.is_empty() {
        Ok(notes.join(" "))
    } else {
        Err(format!("{}; {}", failures.join("; "), notes.join(" ")))
    }
}

fn separability() -> Check {
    let rec = generate(&SynthSpec { trials_per_class: 200, seed: 1, ..SynthSpec::default() }).map_err(|e| e.to_string())?;
    let ep = Pipeline { window_s: (0.0, 1.0), ..Pipeline::decoding_default() }.run(&rec).map_err(|e| e.to_string())?;
    ensure(ep.n_channels() == 4 && ep.n_samples() == 250, format!("shape {}x{}", ep.n_channels(), ep.n_samples()))?;
    let (train, val) = split(&ep, 0.2, 0).map_err(|e| e.to_string())?;
    let oracle = core_oracles::logistic_accuracy(
        &core_oracles::band_power_features(&train, 8.0, 12.0),
        &train.labels,
        &core_oracles::band_power_features(&val, 8.0, 12.0),
        &val.labels,
        4,
    );
    ensure(oracle >= 0.95, format!("band-power oracle {oracle:.3}"))?;
    let decoder = DecoderConfig { n_channels: 4, n_samples: 250, ..DecoderConfig::default() };
    let cfg = TrainConfig { max_epochs: 50, early_stop_patience: 50, ..TrainConfig::default() };
    let out = Trainer::new(decoder, cfg).fit(&train, &val).map_err(|e| e.to_string())?;
    let best = out.epochs.iter().map(|r| r.val_acc).fold(0.0f64, f64::max);
    let first = out.epochs.iter().position(|r| r.val_acc >= 0.90);
    ensure(best >= 0.90, format!("best val accuracy {best:.3} in {} epochs; oracle {oracle:.3}", out.epochs.len()))?;
    Ok(format!("val_acc={best:.3} first_epoch>=0.90={} oracle={oracle:.3}", first.unwrap_or(0) + 1))
}

fn real_iv2a(root: &Path) -> Check {
    let store = DataStore::new(root);
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut accs = Vec::new();
    for n in 1..=9 {
        let sid = store.resolve_subject(&n.to_string()).ok_or(format!("subject {n} missing under {}", root.display()))?;
        let spec = RunSpec {
            run_id: format!("iv2a-{sid}"),
            subject_id: sid.clone(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
            pipeline: Pipeline::decoding_default(),
        };
        let run = train_subject(&store, &spec, &out.path().join(&sid), RunHooks::none()).map_err(|e| e.to_string())?;
        accs.push(run.eval_accuracy.unwrap_or(0.0));
    }
    let above = accs.iter().filter(|a| **a >= 0.31).count();
    let listed: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
    ensure(above >= 7, format!("{above}/9 subjects at >= 0.31: {}", listed.join(" ")))?;
    Ok(format!("{above}/9 subjects >= 0.31: {}", listed.join(" ")))
}

fn autonomy_audit() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut actions, mut executed, mut violations, mut mismatches) = (0, 0, 0, 0);
    for seed in 0..1000 {
        let o = assist_oracles::audit_sequence(seed, dir.path());
        actions += o.actions;
        executed += o.executed;
        violations += o.unapproved_low_level_executions;
        mismatches += usize::from(!o.replay_matches);
    }
    ensure(violations == 0, format!("{violations} unapproved executions at level <= 1"))?;
    ensure(mismatches == 0, format!("{mismatches} replays differ from live state"))?;
    ensure(actions > 1000 && executed > 0, format!("too little exercised: {actions} actions"))?;
    Ok(format!("sequences=1000 actions={actions} executed={executed} violations=0 replay_mismatches=0"))
}

fn knowledge_base() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut used = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(0..12);
        let docs: Vec<KnowledgeDoc> = (0..n)
            .map(|i| {
                let a = rng.random_range(1..60);
                let doc = KnowledgeDoc::new(format!("d{i:03}"), &["x"], "a".repeat(a));
                if rng.random_bool(0.5) {
                    let b = a + rng.random_range(0..200);
                    doc.with_levels("b".repeat(b), "c".repeat(b + rng.random_range(0..800)))
                } else {
                    doc
                }
            })
            .collect();
        let budget = rng.random_range(1..400);
        let refs: Vec<&KnowledgeDoc> = docs.iter().collect();
        let bundle = assemble_context(&refs, budget);
        let counted: usize = bundle.excerpts.iter().map(|e| assist_oracles::oracle_tokens(&e.text)).sum();
        ensure(counted <= budget, format!("{counted} tokens over budget {budget}"))?;
        ensure(counted == bundle.total_tokens, format!("reported {} tokens, counted {counted}", bundle.total_tokens))?;
        used += counted;
    }
    let tree = assist_fixtures().join("summarize/tree");
    for level in 0..=2u8 {
        let got = summarize_directory(&tree, level).map_err(|e| e.to_string())?;
        let want = std::fs::read_to_string(assist_fixtures().join(format!("summarize/golden/level{level}.txt")))
            .map_err(|e| e.to_string())?;
        ensure(got == want, format!("summary level {level} differs from golden"))?;
    }
    Ok(format!("stores=1000 tokens_assembled={used} golden_levels=0,1,2"))
}

fn ideation_offline() -> Check {
    let reply = std::fs::read_to_string(assist_fixtures().join("frequency_band_idea.txt")).map_err(|e| e.to_string())?;
    let p = MockProvider::new().with_fallback(reply);
    let batch = generate_ideas(1, "motor imagery decoding", &p, &GenerationParams::default(), &RetryPolicy::none())
        .map_err(|e| e.to_string())?;
    let c = batch.cards.first().ok_or("no card parsed")?;
    let want = [
        "What are the optimal EEG frequency bands for decoding, and how do they vary across subjects?",
        "Inconsistent findings on band contributions.",
        "Personalization can improve performance.",
        "Perform detailed frequency band analysis.",
    ];
    let got = [c.research_question.as_str(), c.gap.as_str(), c.motivation.as_str(), c.approach.as_str()];
    ensure(got == want, format!("fields {got:?}"))?;

    let lit = MockLiterature::load(&assist_fixtures().join("abstracts.json")).map_err(|e| e.to_string())?;
    let rep = novelty_check(c, &lit);
    let mut sims: Vec<f64> = lit
        .corpus
        .iter()
        .map(|p| {
            assist_oracles::oracle_jaccard(
                &c.research_question,
                &format!("{} {}", p.title, p.abstract_text.clone().unwrap_or_default()),
            )
        })
        .collect();
    sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let got: Vec<f64> = rep.matches.iter().map(|m| m.similarity).collect();
    ensure(got.len() == sims.len(), "match count differs")?;
    let worst = got.iter().zip(&sims).map(|(g, w)| (g - w).abs()).fold(0.0f64, f64::max);
    let score = rep.score.ok_or("no novelty score")?;
    ensure(worst < 1e-12 && (score - (1.0 - sims[0])).abs() < 1e-12, format!("novelty off by {worst:e}"))?;
    Ok(format!("fields=4/4 novelty={score:.4} oracle_err={worst:.0e}"))
}

fn scripted_replies() -> Vec<(&'static str, String)> {
    use common::action;
    vec![
        (
            "Please check the converted recordings.",
            format!("I will validate every recording first.\n{}", action("analysis", "execution", json!({"op": "validate"}))),
        ),
        (
            "Show the cue-locked potentials for subject 1.",
            format!(
                "Averaging per class, then plotting.\n{}{}",
                action("analysis", "execution", json!({"op": "erp", "params": {"subjects": ["1"]}})),
                action("figure", "visualization", json!({"report_id": "rep-0002"}))
            ),
        ),
        (
            "Train the tiny decoder on subject 1.",
            format!(
                "Starting a short run.\n{}{}",
                action("training_run", "execution", json!({"subject_id": "A01", "preset": "tiny"})),
                action("figure", "visualization", json!({"run_ids": ["run-0001"]}))
            ),
        ),
        (
            "What do these results tell us?",
            "The early components follow the cue in every class, so part of what a decoder sees is the \
             stimulus response. Accuracy from a three-epoch run is not meaningful yet."
                .to_string(),
        ),
    ]
}

const SCRIPT: &str = "\
/phase experiment_design
Please check the converted recordings.
/approve act-0001
Show the cue-locked potentials for subject 1.
/approve act-0002
/approve act-0003
/policy execution 3
Train the tiny decoder on subject 1.
/approve act-0005
/phase interpretation
What do these results tell us?
/quit
";

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn one_scripted_session(dir: &Path) -> Result<(Vec<u8>, BTreeMap<String, Vec<u8>>), String> {
    let app = App::new(common::config_in(dir, &scripted_replies())).map_err(|e| e.to_string())?;
    let mut stdout = Vec::new();
    let id = run_chat(&app, ResearchPhase::ExperimentDesign, SCRIPT.as_bytes(), &mut stdout).map_err(|e| e.to_string())?;
    let session = app.session(&id).map_err(|e| e.to_string())?;
    let s = session.lock().unwrap();
    ensure(s.provider_is_offline(), "provider is not the offline mock")?;
    let text = String::from_utf8_lossy(&stdout).into_owned();
    ensure(!text.contains("error:"), format!("session reported an error:\n{text}"))?;
    let kinds: Vec<&str> = s.artifacts().iter().map(|r| r.kind.as_str()).collect();
    ensure(kinds == ["report", "report", "figure", "run", "figure"], format!("artifacts {kinds:?}\n{text}"))?;
    let path = app.ws.session_dir(&id).join("transcript.jsonl");
    let replay = ChatSession::replay(&id, &path).map_err(|e| e.to_string())?;
    ensure(replay == s.state(), "replay differs from live session")?;
    let (_, _, violations) = assist_oracles::audit_records(&Transcript::read(&path).map_err(|e| e.to_string())?);
    ensure(violations == 0, "unapproved execution in transcript")?;
    let last = s.messages().last().ok_or("empty transcript")?;
    ensure(last.phase == ResearchPhase::Interpretation, "interpretation reply missing")?;
    drop(s);
    let files = files_under(&app.ws.root().to_path_buf());
    Ok((stdout, files))
}

fn scripted_session() -> Check {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (out_a, files_a) = one_scripted_session(a.path())?;
    let (out_b, files_b) = one_scripted_session(b.path())?;
    ensure(out_a == out_b, "terminal output differs between runs")?;
    let names: Vec<&String> = files_a.keys().collect();
    ensure(names == files_b.keys().collect::<Vec<_>>(), "file sets differ between runs")?;
    let differing: Vec<&String> = files_a.iter().filter(|(k, v)| files_b[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), format!("bytes differ: {differing:?}"))?;
    let bytes: usize = files_a.values().map(Vec::len).sum();
    Ok(format!("steps=validate,erp,figure,train,curves,interpret files={} bytes={bytes} identical=yes network=none ui=none", files_a.len()))
}

fn main() {
    let mut lines = vec![
        criterion("dsp-suite", Duration::from_secs(30), dsp_suite),
        criterion("analysis-oracles", Duration::from_secs(60), analysis_suite),
        criterion("decoder-suite", Duration::from_secs(300), decoder_suite),
        criterion("synthetic-separability", Duration::from_secs(600), separability),
    ];
    match std::env::var_os("CHATBCI_IV2A_ROOT") {
        Some(root) => lines.push(criterion("iv2a-above-chance", Duration::MAX, || real_iv2a(Path::new(&root)))),
        None => lines.push(Line { ok: None, text: "SKIP iv2a-above-chance (set CHATBCI_IV2A_ROOT to converted data)".into() }),
    }
    lines.push(criterion("autonomy-audit", Duration::MAX, autonomy_audit));
    lines.push(criterion("knowledge-base", Duration::MAX, knowledge_base));
    lines.push(criterion("ideation-offline", Duration::MAX, ideation_offline));
    lines.push(criterion("scripted-mock-session", Duration::MAX, scripted_session));

    println!();
    for l in &lines {
        println!("{}", l.text);
    }
    let failed = lines.iter().filter(|l| l.ok == Some(false)).count();
    let passed = lines.iter().filter(|l| l.ok == Some(true)).count();
    println!("\nacceptance: {passed} passed, {failed} failed, {} skipped", lines.len() - passed - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
