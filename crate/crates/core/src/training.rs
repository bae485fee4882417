//! Within-subject training: stratified validation split, augmentation, Adam,
//! early stopping on validation accuracy, and a single final evaluation on
//! the held-out session.
//!
//! A run directory holds `config.json`, `metrics.jsonl` (one [`EpochRecord`]
//! per line, appended as epochs finish), `best.ckpt`, `confusion.json` and
//! `status.json`.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataStore, Session};
use crate::decoder::{accuracy, argmax_rows, cross_entropy, DecoderConfig, DecoderModel};
use crate::error::{Error, Result};
use crate::preprocess::{EpochSet, Pipeline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseAugment {
    pub p: f64,
    /// Multiple of the per-channel training-set standard deviation.
    pub sigma_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftAugment {
    pub p: f64,
    pub max_shift_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelDropoutAugment {
    pub p_per_channel: f64,
}

impl Default for NoiseAugment {
    fn default() -> Self {
        Self { p: 0.5, sigma_scale: 0.1 }
    }
}

impl Default for ShiftAugment {
    fn default() -> Self {
        Self { p: 0.5, max_shift_s: 0.25 }
    }
}

impl Default for ChannelDropoutAugment {
    fn default() -> Self {
        Self { p_per_channel: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub gaussian_noise: NoiseAugment,
    pub circular_time_shift: ShiftAugment,
    pub channel_dropout: ChannelDropoutAugment,
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        Self {
            gaussian_noise: NoiseAugment { p: 0.0, ..NoiseAugment::default() },
            circular_time_shift: ShiftAugment { p: 0.0, ..ShiftAugment::default() },
            channel_dropout: ChannelDropoutAugment { p_per_channel: 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("gaussian_noise.p", self.gaussian_noise.p),
            ("circular_time_shift.p", self.circular_time_shift.p),
            ("channel_dropout.p_per_channel", self.channel_dropout.p_per_channel),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    pub augmentation: AugmentSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            early_stop_patience: 30,
            val_fraction: 0.2,
            augmentation: AugmentSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::Config("early_stop_patience exceeds max_epochs".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.augmentation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Per-class validation counts: `round(fraction × count)`, ties to even.
pub fn split_indices(labels: &[usize], n_classes: usize, val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Split(format!("class {class} has {} trial(s); at least 2 are needed", members.len())));
        }
        let n_val = (val_fraction * members.len() as f64).round_ties_even() as usize;
        members.shuffle(&mut rng);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val })
}

pub fn split(ep: &EpochSet, val_fraction: f64, seed: u64) -> Result<(EpochSet, EpochSet)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let idx = split_indices(&ep.labels, ep.n_classes(), val_fraction, seed)?;
    Ok((ep.select_trials(&idx.train), ep.select_trials(&idx.val)))
}

/// Rotate every channel of one trial right by `shift` samples (negative: left).
pub fn circular_shift(trial: &mut ndarray::ArrayViewMut2<'_, f64>, shift: isize) {
    let t = trial.ncols();
    if t == 0 {
        return;
    }
    let k = shift.rem_euclid(t as isize) as usize;
    for mut row in trial.rows_mut() {
        let mut v = row.to_vec();
        v.rotate_right(k);
        row.assign(&ndarray::ArrayView1::from(&v));
    }
}

/// In-place augmentation of a (trials × channels × samples) batch.
/// `channel_sd` scales the noise; `sampling_rate_hz` converts the shift.
pub fn augment<R: Rng + ?Sized>(
    batch: &mut Array3<f64>,
    spec: &AugmentSpec,
    channel_sd: &[f64],
    sampling_rate_hz: f64,
    rng: &mut R,
) {
    let max_shift = (spec.circular_time_shift.max_shift_s * sampling_rate_hz).round() as i64;
    for mut trial in batch.axis_iter_mut(Axis(0)) {
        if spec.gaussian_noise.p > 0.0 && rng.random::<f64>() < spec.gaussian_noise.p {
            for (c, mut row) in trial.rows_mut().into_iter().enumerate() {
                let sigma = spec.gaussian_noise.sigma_scale * channel_sd[c];
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sigma * z;
                }
            }
        }
        if spec.circular_time_shift.p > 0.0 && rng.random::<f64>() < spec.circular_time_shift.p {
            let shift = rng.random_range(-max_shift..=max_shift) as isize;
            circular_shift(&mut trial, shift);
        }
        if spec.channel_dropout.p_per_channel > 0.0 {
            for mut row in trial.rows_mut() {
                if rng.random::<f64>() < spec.channel_dropout.p_per_channel {
                    row.fill(0.0);
                }
            }
        }
    }
}

/// Population SD per channel across all trials and samples.
pub fn channel_sd(data: &Array3<f64>) -> Vec<f64> {
    (0..data.dim().1)
        .map(|c| {
            let view = data.slice(s![.., c, ..]);
            let n = view.len() as f64;
            let mean = view.sum() / n;
            (view.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Finished,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub run_id: String,
    pub subject_id: String,
    pub status: RunStatus,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub eval_accuracy: Option<f64>,
    /// Rows: true class, columns: predicted class.
    pub confusion: Option<Vec<Vec<usize>>>,
    pub class_labels: Vec<String>,
    pub error: Option<String>,
}

impl TrainRun {
    pub fn new(run_id: impl Into<String>, subject_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            subject_id: subject_id.into(),
            status: RunStatus::Running,
            epochs: Vec::new(),
            best_epoch: None,
            best_val_acc: None,
            eval_accuracy: None,
            confusion: None,
            class_labels: Vec::new(),
            error: None,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Content fingerprint of one trial.
pub fn trial_fingerprint(trial: ndarray::ArrayView2<'_, f64>) -> u64 {
    let mut h = Sha256::new();
    for v in trial.iter() {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

pub fn set_fingerprints(ep: &EpochSet) -> Vec<u64> {
    ep.data.axis_iter(Axis(0)).map(trial_fingerprint).collect()
}

/// SHA-256 over every trial and label of a set.
pub fn set_digest(ep: &EpochSet) -> String {
    let mut h = Sha256::new();
    for v in ep.data.iter() {
        h.update(v.to_le_bytes());
    }
    for l in &ep.labels {
        h.update((*l as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Which trials touched a parameter update or a model-selection decision.
#[derive(Debug, Clone, Default)]
pub struct DataAccounting {
    pub batches_drawn: usize,
    pub update_trials: HashSet<u64>,
    pub selection_trials: HashSet<u64>,
}

pub struct FitOutcome {
    pub model: DecoderModel,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub accounting: DataAccounting,
}

pub type EpochCallback<'a> = Box<dyn FnMut(&EpochRecord, &DecoderModel, bool) -> Result<()> + 'a>;

/// Fitting loop with optional cancellation and a per-epoch hook. The hook
/// receives the record, the current model, and whether it is a new best.
pub struct Trainer<'a> {
    pub decoder: DecoderConfig,
    pub config: TrainConfig,
    pub cancel: Option<Arc<AtomicBool>>,
    pub on_epoch: Option<EpochCallback<'a>>,
}

/// Eval-mode loss and accuracy, in chunks of `chunk` trials.
pub fn evaluate(model: &DecoderModel, ep: &EpochSet, chunk: usize) -> Result<(f64, f64, Vec<usize>)> {
    let n = ep.n_trials();
    if n == 0 {
        return Ok((f64::NAN, 0.0, Vec::new()));
    }
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(n);
    for start in (0..n).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(n);
        let logits = model.forward_eval(ep.data.slice(s![start..end, .., ..]))?;
        loss += cross_entropy(logits.view(), &ep.labels[start..end]).0 * (end - start) as f64;
        preds.extend(argmax_rows(logits.view()));
    }
    Ok((loss / n as f64, accuracy(&preds, &ep.labels), preds))
}

pub fn confusion_matrix(labels: &[usize], predicted: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&l, &p) in labels.iter().zip(predicted) {
        m[l][p] += 1;
    }
    m
}

impl<'a> Trainer<'a> {
    pub fn new(decoder: DecoderConfig, config: TrainConfig) -> Self {
        Self { decoder, config, cancel: None, on_epoch: None }
    }

    pub fn fit(&mut self, train: &EpochSet, val: &EpochSet) -> Result<FitOutcome> {
        self.config.validate()?;
        let cfg = &self.config;
        let mut model = DecoderModel::build(&self.decoder, cfg.seed)?;
        let mut best = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
        let mut adam = Adam::new(model.n_params(), cfg.learning_rate);
        let sd = channel_sd(&train.data);
        let train_fp = set_fingerprints(train);
        let mut accounting = DataAccounting::default();
        accounting.selection_trials.extend(set_fingerprints(val));

        let mut epochs = Vec::new();
        let mut best_epoch: Option<usize> = None;
        let mut best_acc = f64::NEG_INFINITY;
        let mut order: Vec<usize> = (0..train.n_trials()).collect();
        let mut status = RunStatus::Finished;
        let mut error = None;

        'outer: for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                if self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
                    status = RunStatus::Stopped;
                    break 'outer;
                }
                accounting.batches_drawn += 1;
                accounting.update_trials.extend(chunk.iter().map(|&i| train_fp[i]));
                let mut batch = train.data.select(Axis(0), chunk);
                augment(&mut batch, &cfg.augmentation, &sd, train.sampling_rate_hz, &mut rng);
                let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
                let (logits, cache) = model.forward_train(batch.view(), &mut rng)?;
                let (loss, dlogits) = cross_entropy(logits.view(), &labels);
                if !loss.is_finite() {
                    status = RunStatus::Failed;
                    error = Some(format!("loss diverged at epoch {epoch}"));
                    break 'outer;
                }
                let grad = model.backward(&cache, dlogits.view());
                adam.step(&mut model.params, &grad);
            }

            let (train_loss, train_acc, _) = evaluate(&model, train, cfg.batch_size)?;
            let (val_loss, val_acc, _) = evaluate(&model, val, cfg.batch_size)?;
            if !train_loss.is_finite() {
                status = RunStatus::Failed;
                error = Some(format!("loss diverged at epoch {epoch}"));
                break;
            }
            let record = EpochRecord { epoch, train_loss, train_acc, val_loss, val_acc };
            let improved = val_acc > best_acc;
            if improved {
                best_acc = val_acc;
                best_epoch = Some(epoch);
                best = model.clone();
            }
            if let Some(cb) = self.on_epoch.as_mut() {
                cb(&record, &model, improved)?;
            }
            epochs.push(record);
            if best_epoch.is_some_and(|b| epoch - b >= cfg.early_stop_patience) {
                break;
            }
        }
        Ok(FitOutcome { model: best, epochs, best_epoch, status, error, accounting })
    }
}

/// Everything a subject-level run needs besides the data store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub subject_id: String,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub pipeline: Pipeline,
}

pub struct RunHooks {
    pub cancel: Option<Arc<AtomicBool>>,
    /// Receives each epoch record after it reaches metrics.jsonl.
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord) + Send>>,
}

impl RunHooks {
    pub fn none() -> Self {
        Self { cancel: None, on_epoch: None }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn read_metrics(run_dir: &Path) -> Result<Vec<EpochRecord>> {
    let path = run_dir.join("metrics.jsonl");
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Train on the subject's training session and score the best checkpoint
/// once on its evaluation session. Artifacts go to `run_dir`.
pub fn train_subject(store: &DataStore, spec: &RunSpec, run_dir: &Path, mut hooks: RunHooks) -> Result<TrainRun> {
    fs::create_dir_all(run_dir)?;
    let mut run = TrainRun::new(&spec.run_id, &spec.subject_id);
    let result = train_subject_inner(store, spec, run_dir, &mut hooks, &mut run);
    if let Err(e) = &result {
        run.status = RunStatus::Failed;
        run.error = Some(format!("{}: {e}", e.kind()));
    }
    write_json(&run_dir.join("status.json"), &run)?;
    result.map(|_| run)
}

fn train_subject_inner(
    store: &DataStore,
    spec: &RunSpec,
    run_dir: &Path,
    hooks: &mut RunHooks,
    run: &mut TrainRun,
) -> Result<()> {
    spec.train.validate()?;
    let pipeline = Pipeline { include_eog: spec.decoder.include_eog, ..spec.pipeline.clone() };
    let train_rec = store.load(&spec.subject_id, Session::Train)?;
    let eval_rec = store.load(&spec.subject_id, Session::Eval)?;
    let train_all = pipeline.run(&train_rec)?;
    let eval_set = pipeline.run(&eval_rec)?;
    let eval_digest_before = set_digest(&eval_set);
    run.class_labels = train_all.class_labels.clone();

    let decoder = DecoderConfig {
        n_channels: train_all.n_channels(),
        n_samples: train_all.n_samples(),
        n_classes: train_all.n_classes(),
        ..spec.decoder.clone()
    };
    let resolved = RunSpec { decoder: decoder.clone(), pipeline, ..spec.clone() };
    write_json(&run_dir.join("config.json"), &resolved)?;
    let (train, val) = split(&train_all, spec.train.val_fraction, spec.train.seed)?;

    let metrics_path = run_dir.join("metrics.jsonl");
    let _ = fs::remove_file(&metrics_path);
    let ckpt_path = run_dir.join("best.ckpt");
    let mut external = hooks.on_epoch.take();
    let mut trainer = Trainer::new(decoder, spec.train.clone());
    trainer.cancel = hooks.cancel.clone();
    trainer.on_epoch = Some(Box::new(|rec: &EpochRecord, model: &DecoderModel, improved: bool| {
        if improved {
            model.save_checkpoint(&ckpt_path)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&metrics_path)?;
        writeln!(f, "{}", serde_json::to_string(rec)?)?;
        if let Some(cb) = external.as_mut() {
            cb(rec);
        }
        Ok(())
    }));
    let outcome = trainer.fit(&train, &val)?;
    drop(trainer);

    run.epochs = outcome.epochs;
    run.best_epoch = outcome.best_epoch;
    run.best_val_acc = outcome.best_epoch.map(|b| run.epochs[b].val_acc);
    run.status = outcome.status;
    run.error = outcome.error;
    if run.status != RunStatus::Finished {
        return Ok(());
    }

    let (_, acc, preds) = evaluate(&outcome.model, &eval_set, spec.train.batch_size)?;
    debug_assert_eq!(eval_digest_before, set_digest(&eval_set));
    let confusion = confusion_matrix(&eval_set.labels, &preds, eval_set.n_classes());
    write_json(
        &run_dir.join("confusion.json"),
        &serde_json::json!({
            "class_labels": eval_set.class_labels,
            "matrix": confusion,
            "eval_accuracy": acc,
            "eval_digest": eval_digest_before,
        }),
    )?;
    run.eval_accuracy = Some(acc);
    run.confusion = Some(confusion);
    Ok(())
}

pub fn run_dir(workspace: &Path, run_id: &str) -> PathBuf {
    workspace.join("runs").join(run_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ChannelInfo;
    use ndarray::Array3;

    fn set(labels: Vec<usize>, c: usize, t: usize, seed: u64) -> EpochSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EpochSet {
            data: Array3::from_shape_simple_fn((labels.len(), c, t), || rng.random_range(-1.0..1.0)),
            labels,
            class_labels: ["left_hand", "right_hand", "feet", "tongue"].map(String::from).to_vec(),
            window_s: (0.0, t as f64 / 100.0),
            sampling_rate_hz: 100.0,
            channels: (0..c).map(|i| ChannelInfo::eeg(format!("E{i}"))).collect(),
            subject_id: "S01".into(),
        }
    }

    #[test]
    fn split_72_per_class() {
        let labels: Vec<usize> = (0..288).map(|i| i % 4).collect();
        let idx = split_indices(&labels, 4, 0.2, 3).unwrap();
        // 0.2 × 72 = 14.4 → 14
        for c in 0..4 {
            assert_eq!(idx.val.iter().filter(|&&i| labels[i] == c).count(), 14);
        }
        let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..288).collect::<Vec<_>>());
        assert_eq!(idx, split_indices(&labels, 4, 0.2, 3).unwrap());
    }

    #[test]
    fn split_ties_to_even() {
        // 0.25 × 10 = 2.5 → 2 ; 0.5 × 5 = 2.5 → 2 ; 0.5 × 7 = 3.5 → 4
        for (n, f, expect) in [(10, 0.25, 2), (5, 0.5, 2), (7, 0.5, 4)] {
            let idx = split_indices(&vec![0; n], 1, f, 0).unwrap();
            assert_eq!(idx.val.len(), expect, "n={n} f={f}");
        }
    }

    #[test]
    fn split_single_trial_class() {
        let err = split_indices(&[0, 0, 1], 2, 0.2, 0).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
    }

    #[test]
    fn disabled_augment_is_identity() {
        let ep = set(vec![0, 1, 2], 3, 50, 1);
        let mut b = ep.data.clone();
        augment(&mut b, &AugmentSpec::disabled(), &[1.0; 3], 100.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(b, ep.data);
    }

    #[test]
    fn shift_inverse() {
        let ep = set(vec![0], 2, 37, 2);
        for s in [-40isize, -5, 0, 3, 36, 80] {
            let mut t = ep.data.index_axis(Axis(0), 0).to_owned();
            circular_shift(&mut t.view_mut(), s);
            circular_shift(&mut t.view_mut(), -s);
            assert_eq!(t, ep.data.index_axis(Axis(0), 0));
        }
    }

    #[test]
    fn noise_monte_carlo_mean() {
        let spec = AugmentSpec {
            gaussian_noise: NoiseAugment { p: 1.0, sigma_scale: 0.1 },
            ..AugmentSpec::disabled()
        };
        let sd = [2.0];
        let n = 10_000;
        let t = 8;
        let mut batch = Array3::zeros((n, 1, t));
        augment(&mut batch, &spec, &sd, 100.0, &mut ChaCha8Rng::seed_from_u64(9));
        let sigma = 0.1 * 2.0;
        let se = sigma / (n as f64).sqrt();
        for k in 0..t {
            let col = batch.slice(s![.., 0, k]);
            let mean = col.sum() / n as f64;
            assert!(mean.abs() < 3.0 * se, "sample {k}: mean {mean}, se {se}");
            let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            assert!((var.sqrt() / sigma - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn channel_dropout_all() {
        let ep = set(vec![0, 1], 3, 10, 3);
        let mut b = ep.data.clone();
        let spec = AugmentSpec { channel_dropout: ChannelDropoutAugment { p_per_channel: 1.0 }, ..AugmentSpec::disabled() };
        augment(&mut b, &spec, &[1.0; 3], 100.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig { val_fraction: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { early_stop_patience: 300, ..TrainConfig::default() }.validate().is_err());
        let bad_aug = AugmentSpec { channel_dropout: ChannelDropoutAugment { p_per_channel: 1.5 }, ..AugmentSpec::default() };
        assert!(TrainConfig { augmentation: bad_aug, ..TrainConfig::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut adam = Adam::new(2, 0.01);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.001]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn confusion_rows_sum_to_counts() {
        let m = confusion_matrix(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 0, 2], 3);
        assert_eq!(m.iter().map(|r| r.iter().sum::<usize>()).collect::<Vec<_>>(), vec![2, 1, 3]);
        assert_eq!(m[2][0], 1);
    }

    fn small_decoder(c: usize, t: usize) -> DecoderConfig {
        DecoderConfig {
            temporal_filters: 4,
            temporal_kernel: 5,
            spatial_filters: 4,
            pool_length: 10,
            pool_stride: 5,
            ..DecoderConfig::new(c, t)
        }
    }

    #[test]
    fn deterministic_without_augmentation() {
        let ep = set((0..24).map(|i| i % 4).collect(), 3, 40, 4);
        let (tr, va) = split(&ep, 0.25, 1).unwrap();
        let cfg = TrainConfig { max_epochs: 3, batch_size: 8, augmentation: AugmentSpec::disabled(), ..TrainConfig::default() };
        let cfg = TrainConfig { early_stop_patience: 3, ..cfg };
        let a = Trainer::new(small_decoder(3, 40), cfg.clone()).fit(&tr, &va).unwrap();
        let b = Trainer::new(small_decoder(3, 40), cfg).fit(&tr, &va).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn cancellation_stops() {
        let ep = set((0..16).map(|i| i % 4).collect(), 2, 40, 5);
        let (tr, va) = split(&ep, 0.25, 1).unwrap();
        let flag = Arc::new(AtomicBool::new(false));
        let mut trainer = Trainer::new(small_decoder(2, 40), TrainConfig { max_epochs: 50, early_stop_patience: 50, ..TrainConfig::default() });
        trainer.cancel = Some(flag.clone());
        let f2 = flag.clone();
        trainer.on_epoch = Some(Box::new(move |rec, _, _| {
            if rec.epoch == 2 {
                f2.store(true, Ordering::SeqCst);
            }
            Ok(())
        }));
        let out = trainer.fit(&tr, &va).unwrap();
        assert_eq!(out.status, RunStatus::Stopped);
        assert_eq!(out.epochs.len(), 3);
    }

    #[test]
    fn best_matches_log_maximum() {
        let ep = set((0..32).map(|i| i % 4).collect(), 2, 40, 6);
        let (tr, va) = split(&ep, 0.25, 2).unwrap();
        let cfg = TrainConfig { max_epochs: 12, early_stop_patience: 4, batch_size: 8, ..TrainConfig::default() };
        let out = Trainer::new(small_decoder(2, 40), cfg).fit(&tr, &va).unwrap();
        let max = out.epochs.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
        let best = out.best_epoch.unwrap();
        assert_eq!(out.epochs[best].val_acc, max);
        assert!(out.epochs.iter().take(best).all(|r| r.val_acc < max));
        let (_, acc, _) = evaluate(&out.model, &va, 8).unwrap();
        assert_eq!(acc, max);
    }
}
