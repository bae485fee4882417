//! Signal conditioning: common-average re-referencing, zero-phase band
//! filtering and epoching into trials. Every operation is a pure function
//! returning a new value.

mod butterworth;

pub use butterworth::{Biquad, FilterKind, FilterSpec, SosFilter};

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{ChannelInfo, ChannelKind, Recording};
use crate::error::{Error, Result};

/// Subtract the per-sample mean of the EEG channels from every EEG channel.
/// EOG channels pass through untouched.
pub fn common_average_reference(rec: &Recording) -> Result<Recording> {
    let eeg = rec.indices_of_kind(ChannelKind::Eeg);
    if eeg.len() < 2 {
        return Err(Error::Precondition(format!(
            "common average reference needs at least 2 EEG channels, found {}",
            eeg.len()
        )));
    }
    let mut signal = rec.signal.clone();
    let scale = 1.0 / eeg.len() as f64;
    for t in 0..rec.n_samples() {
        let mean = eeg.iter().map(|&c| rec.signal[[c, t]]).sum::<f64>() * scale;
        for &c in &eeg {
            signal[[c, t]] -= mean;
        }
    }
    Ok(rec.with_signal(signal))
}

/// Filter each channel independently.
pub fn filter_signal(rec: &Recording, spec: &FilterSpec) -> Result<Recording> {
    let filt = SosFilter::design(spec, rec.sampling_rate_hz)?;
    let mut signal = Array2::zeros(rec.signal.dim());
    for (src, mut dst) in rec.signal.rows().into_iter().zip(signal.rows_mut()) {
        let x: Vec<f64> = src.iter().copied().collect();
        for (d, v) in dst.iter_mut().zip(filt.apply(&x, spec.zero_phase)) {
            *d = v;
        }
    }
    Ok(rec.with_signal(signal))
}

/// Which events become trials.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Every event (all carry a class label).
    #[default]
    AllClasses,
    Labels(Vec<String>),
}

impl Anchor {
    fn accepts(&self, label: &str) -> bool {
        match self {
            Anchor::AllClasses => true,
            Anchor::Labels(ls) => ls.iter().any(|l| l == label),
        }
    }
}

/// trials × channels × samples, with per-trial class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub data: Array3<f64>,
    pub labels: Vec<usize>,
    /// Index → label.
    pub class_labels: Vec<String>,
    /// Seconds relative to the anchor event onset.
    pub window_s: (f64, f64),
    pub sampling_rate_hz: f64,
    pub channels: Vec<ChannelInfo>,
    pub subject_id: String,
}

pub fn window_samples(window_s: (f64, f64), sampling_rate_hz: f64) -> usize {
    ((window_s.1 - window_s.0) * sampling_rate_hz).round() as usize
}

impl EpochSet {
    pub fn n_trials(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn n_channels(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn n_samples(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn trials_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.n_trials()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn select_trials(&self, indices: &[usize]) -> EpochSet {
        EpochSet {
            data: self.data.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    pub fn select_channels(&self, indices: &[usize]) -> EpochSet {
        EpochSet {
            data: self.data.select(Axis(1), indices),
            labels: self.labels.clone(),
            channels: indices.iter().map(|&i| self.channels[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    /// Drop EOG channels unless `include_eog`.
    pub fn eeg_only(&self, include_eog: bool) -> EpochSet {
        if include_eog {
            return self.clone();
        }
        let keep: Vec<usize> = self
            .channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ChannelKind::Eeg)
            .map(|(i, _)| i)
            .collect();
        self.select_channels(&keep)
    }

    fn clone_meta(&self) -> EpochSet {
        EpochSet {
            data: Array3::zeros((0, 0, 0)),
            labels: Vec::new(),
            class_labels: self.class_labels.clone(),
            window_s: self.window_s,
            sampling_rate_hz: self.sampling_rate_hz,
            channels: self.channels.clone(),
            subject_id: self.subject_id.clone(),
        }
    }

    /// Subtract, per trial and channel, the mean over `pre_window_s`
    /// (anchor-relative seconds, must lie inside the epoch window).
    pub fn baseline_corrected(&self, pre_window_s: (f64, f64)) -> Result<EpochSet> {
        let fs = self.sampling_rate_hz;
        let start = ((pre_window_s.0 - self.window_s.0) * fs).round();
        let end = ((pre_window_s.1 - self.window_s.0) * fs).round();
        if start < 0.0 || end <= start || end as usize > self.n_samples() {
            return Err(Error::Spec(format!(
                "baseline window {pre_window_s:?} is not inside the epoch window {:?}",
                self.window_s
            )));
        }
        let (a, b) = (start as usize, end as usize);
        let mut out = self.clone();
        for mut trial in out.data.outer_iter_mut() {
            for mut ch in trial.outer_iter_mut() {
                let mean = ch.slice(s![a..b]).mean().unwrap_or(0.0);
                ch.mapv_inplace(|v| v - mean);
            }
        }
        Ok(out)
    }

    /// Stack epoch sets sharing channels, window and sampling rate.
    pub fn concat(sets: &[EpochSet]) -> Result<EpochSet> {
        let first = sets.first().ok_or_else(|| Error::Precondition("nothing to concatenate".into()))?;
        for other in &sets[1..] {
            if other.channels != first.channels
                || other.window_s != first.window_s
                || other.sampling_rate_hz != first.sampling_rate_hz
                || other.class_labels != first.class_labels
            {
                return Err(Error::Precondition(format!(
                    "epoch sets {} and {} are not compatible",
                    first.subject_id, other.subject_id
                )));
            }
        }
        let views: Vec<_> = sets.iter().map(|e| e.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Precondition(e.to_string()))?;
        let ids: Vec<&str> = sets.iter().map(|e| e.subject_id.as_str()).collect();
        Ok(EpochSet {
            data,
            labels: sets.iter().flat_map(|e| e.labels.iter().copied()).collect(),
            subject_id: ids.join("+"),
            ..first.clone_meta()
        })
    }
}

/// Cut one trial per anchored event: trial `t`, channel `c`, sample `k`
/// is `signal[c, onset + round(start·fs) + k]`.
pub fn epoch(rec: &Recording, window_s: (f64, f64), anchor: &Anchor) -> Result<EpochSet> {
    if !(window_s.0 < window_s.1) {
        return Err(Error::Spec(format!("epoch window start must precede end: {window_s:?}")));
    }
    let fs = rec.sampling_rate_hz;
    let n = window_samples(window_s, fs);
    let offset = (window_s.0 * fs).round() as i64;

    let anchored: Vec<(usize, &crate::data::EventMarker)> =
        rec.events.iter().enumerate().filter(|(_, e)| anchor.accepts(&e.label)).collect();
    let offending: Vec<usize> = anchored
        .iter()
        .filter(|(_, e)| {
            let first = e.onset_sample as i64 + offset;
            first < 0 || first as usize + n > rec.n_samples()
        })
        .map(|(i, _)| *i)
        .collect();
    if !offending.is_empty() {
        return Err(Error::Bounds { offending });
    }

    let mut data = Array3::zeros((anchored.len(), rec.n_channels(), n));
    let mut labels = Vec::with_capacity(anchored.len());
    for (t, (_, ev)) in anchored.iter().enumerate() {
        let first = (ev.onset_sample as i64 + offset) as usize;
        data.slice_mut(s![t, .., ..]).assign(&rec.signal.slice(s![.., first..first + n]));
        labels.push(rec.class_map[&ev.label]);
    }
    Ok(EpochSet {
        data,
        labels,
        class_labels: rec.class_labels(),
        window_s,
        sampling_rate_hz: fs,
        channels: rec.channels.clone(),
        subject_id: rec.subject_id.clone(),
    })
}

/// Conditioning applied before epoching, plus the epoch window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub car: bool,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
    /// Seconds relative to each cue event.
    pub window_s: (f64, f64),
    #[serde(default)]
    pub include_eog: bool,
    /// Optional per-trial baseline window (cue-relative seconds).
    #[serde(default)]
    pub baseline_s: Option<(f64, f64)>,
}

impl Pipeline {
    /// Decoding input: CAR, 40 Hz low-pass, cue onset to cue + 4 s, EEG only.
    pub fn decoding_default() -> Self {
        Self {
            car: true,
            filters: vec![FilterSpec::lowpass(40.0)],
            window_s: (0.0, 4.0),
            include_eog: false,
            baseline_s: None,
        }
    }

    /// ERP view: CAR, 40 Hz low-pass, EOG kept. The window spans 4 s starting
    /// 2 s before the cue, i.e. the whole trial in the IV 2a timing where the
    /// cue appears 2 s after trial start.
    pub fn erp_default() -> Self {
        Self { window_s: (-2.0, 2.0), include_eog: true, ..Self::decoding_default() }
    }

    pub fn condition(&self, rec: &Recording) -> Result<Recording> {
        let mut out = if self.car { common_average_reference(rec)? } else { rec.clone() };
        for spec in &self.filters {
            out = filter_signal(&out, spec)?;
        }
        Ok(out)
    }

    pub fn run(&self, rec: &Recording) -> Result<EpochSet> {
        let conditioned = self.condition(rec)?;
        let mut ep = epoch(&conditioned, self.window_s, &Anchor::AllClasses)?;
        if let Some(b) = self.baseline_s {
            ep = ep.baseline_corrected(b)?;
        }
        Ok(ep.eeg_only(self.include_eog))
    }
}
