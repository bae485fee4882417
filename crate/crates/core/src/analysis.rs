//! Exploratory triad over an [`EpochSet`]: per-class channel statistics
//! with robust outlier flags, class-averaged ERPs, and Welch PSD.
//!
//! Results serialize as nested `class → channel → values` JSON.

use std::f64::consts::PI;

use indexmap::IndexMap;
use ndarray::{Array2, Array3, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::EpochSet;

/// Scale factor turning a MAD into a consistent σ estimate for Gaussian data.
pub const MAD_TO_SIGMA: f64 = 1.4826;

fn require_all_classes(ep: &EpochSet) -> Result<Vec<Vec<usize>>> {
    (0..ep.n_classes())
        .map(|c| {
            let idx = ep.trials_of_class(c);
            if idx.is_empty() {
                Err(Error::EmptyClass(ep.class_labels[c].clone()))
            } else {
                Ok(idx)
            }
        })
        .collect()
}

fn channel_names(ep: &EpochSet) -> Vec<String> {
    ep.channels.iter().map(|c| c.name.clone()).collect()
}

type Nested<T> = IndexMap<String, IndexMap<String, T>>;

fn nest<T, F: Fn(usize, usize) -> T>(classes: &[String], channels: &[String], f: F) -> Nested<T> {
    classes
        .iter()
        .enumerate()
        .map(|(k, cl)| {
            let inner = channels.iter().enumerate().map(|(c, ch)| (ch.clone(), f(k, c))).collect();
            (cl.clone(), inner)
        })
        .collect()
}

fn unnest(nested: &Nested<Vec<f64>>, classes: &[String], channels: &[String], len: usize) -> Result<Array3<f64>> {
    let mut out = Array3::zeros((classes.len(), channels.len(), len));
    for (k, cl) in classes.iter().enumerate() {
        let row = nested.get(cl).ok_or_else(|| Error::Format(format!("missing class {cl:?}")))?;
        for (c, ch) in channels.iter().enumerate() {
            let v = row.get(ch).ok_or_else(|| Error::Format(format!("missing channel {ch:?}")))?;
            if v.len() != len {
                return Err(Error::Format(format!("{cl}/{ch}: expected {len} values, got {}", v.len())));
            }
            for (t, &x) in v.iter().enumerate() {
                out[[k, c, t]] = x;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// statistics

#[derive(Debug, Clone, PartialEq)]
pub struct ClassChannelStats {
    pub class_labels: Vec<String>,
    pub channels: Vec<String>,
    /// class × channel, µV
    pub mean: Array2<f64>,
    /// class × channel, µV (population, ddof = 0)
    pub std: Array2<f64>,
    /// class × channel, µV²
    pub variance: Array2<f64>,
    pub outlier_k: f64,
    /// Per-channel robust scale (MAD · 1.4826) pooled over all trials.
    pub channel_sigma: Vec<f64>,
    /// One flag per trial.
    pub outliers: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub std: f64,
    pub variance: f64,
}

#[derive(Serialize, Deserialize)]
struct StatsWire {
    kind: String,
    class_labels: Vec<String>,
    channels: Vec<String>,
    outlier_k: f64,
    channel_sigma: Vec<f64>,
    outliers: Vec<bool>,
    stats: Nested<MomentSummary>,
}

impl ClassChannelStats {
    pub fn summary(&self, class: usize, channel: usize) -> MomentSummary {
        MomentSummary {
            mean: self.mean[[class, channel]],
            std: self.std[[class, channel]],
            variance: self.variance[[class, channel]],
        }
    }

    pub fn outlier_trials(&self) -> Vec<usize> {
        self.outliers.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let wire = StatsWire {
            kind: "stats".into(),
            class_labels: self.class_labels.clone(),
            channels: self.channels.clone(),
            outlier_k: self.outlier_k,
            channel_sigma: self.channel_sigma.clone(),
            outliers: self.outliers.clone(),
            stats: nest(&self.class_labels, &self.channels, |k, c| self.summary(k, c)),
        };
        serde_json::to_value(wire).expect("stats serialize")
    }
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Per (class, channel) moments pooled over every sample of every trial of
/// the class. A trial is flagged when, on any channel, its peak deviation
/// from the channel median exceeds `outlier_k · MAD · 1.4826`.
pub fn class_channel_stats(ep: &EpochSet, outlier_k: f64) -> Result<ClassChannelStats> {
    let by_class = require_all_classes(ep)?;
    let (n_cls, n_ch) = (ep.n_classes(), ep.n_channels());
    let mut mean = Array2::zeros((n_cls, n_ch));
    let mut variance = Array2::zeros((n_cls, n_ch));

    for (k, trials) in by_class.iter().enumerate() {
        for c in 0..n_ch {
            // Welford
            let (mut n, mut m, mut m2) = (0.0f64, 0.0f64, 0.0f64);
            for &t in trials {
                for &x in ep.data.index_axis(Axis(0), t).index_axis(Axis(0), c) {
                    n += 1.0;
                    let d = x - m;
                    m += d / n;
                    m2 += d * (x - m);
                }
            }
            mean[[k, c]] = m;
            variance[[k, c]] = m2 / n;
        }
    }
    let std = variance.mapv(f64::sqrt);

    let mut channel_median = Vec::with_capacity(n_ch);
    let mut channel_sigma = Vec::with_capacity(n_ch);
    for c in 0..n_ch {
        let mut all: Vec<f64> = ep.data.index_axis(Axis(1), c).iter().copied().collect();
        let med = median_in_place(&mut all);
        let mut dev: Vec<f64> = all.iter().map(|x| (x - med).abs()).collect();
        channel_median.push(med);
        channel_sigma.push(median_in_place(&mut dev) * MAD_TO_SIGMA);
    }

    let outliers = (0..ep.n_trials())
        .map(|t| {
            (0..n_ch).any(|c| {
                let peak = ep
                    .data
                    .index_axis(Axis(0), t)
                    .index_axis(Axis(0), c)
                    .iter()
                    .fold(0.0f64, |p, &x| p.max((x - channel_median[c]).abs()));
                peak > outlier_k * channel_sigma[c]
            })
        })
        .collect();

    Ok(ClassChannelStats {
        class_labels: ep.class_labels.clone(),
        channels: channel_names(ep),
        mean,
        std,
        variance,
        outlier_k,
        channel_sigma,
        outliers,
    })
}

// ---------------------------------------------------------------------------
// ERP

#[derive(Debug, Clone, PartialEq)]
pub struct ErpResult {
    pub class_labels: Vec<String>,
    pub channels: Vec<String>,
    /// Milliseconds from epoch start.
    pub time_ms: Vec<f64>,
    pub trial_counts: Vec<usize>,
    /// class × channel × time, µV
    pub data: Array3<f64>,
    /// Anchor-relative epoch window the ERP was computed over.
    pub window_s: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct ErpWire {
    kind: String,
    class_labels: Vec<String>,
    channels: Vec<String>,
    time_ms: Vec<f64>,
    trial_counts: Vec<usize>,
    window_s: (f64, f64),
    erp: Nested<Vec<f64>>,
}

impl ErpResult {
    pub fn series(&self, class: usize, channel: usize) -> Vec<f64> {
        self.data.index_axis(Axis(0), class).index_axis(Axis(0), channel).to_vec()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let wire = ErpWire {
            kind: "erp".into(),
            class_labels: self.class_labels.clone(),
            channels: self.channels.clone(),
            time_ms: self.time_ms.clone(),
            trial_counts: self.trial_counts.clone(),
            window_s: self.window_s,
            erp: nest(&self.class_labels, &self.channels, |k, c| self.series(k, c)),
        };
        serde_json::to_value(wire).expect("erp serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let wire: ErpWire = serde_json::from_value(value.clone())?;
        if wire.kind != "erp" {
            return Err(Error::Format(format!("expected an erp result, got {:?}", wire.kind)));
        }
        let data = unnest(&wire.erp, &wire.class_labels, &wire.channels, wire.time_ms.len())?;
        Ok(Self {
            class_labels: wire.class_labels,
            channels: wire.channels,
            time_ms: wire.time_ms,
            trial_counts: wire.trial_counts,
            data,
            window_s: wire.window_s,
        })
    }
}

/// Pointwise mean across each class's trials, per channel.
pub fn erp(ep: &EpochSet) -> Result<ErpResult> {
    let by_class = require_all_classes(ep)?;
    let mut data = Array3::zeros((ep.n_classes(), ep.n_channels(), ep.n_samples()));
    for (k, trials) in by_class.iter().enumerate() {
        let mut acc = data.index_axis_mut(Axis(0), k);
        for &t in trials {
            acc += &ep.data.index_axis(Axis(0), t);
        }
        acc /= trials.len() as f64;
    }
    let fs = ep.sampling_rate_hz;
    Ok(ErpResult {
        class_labels: ep.class_labels.clone(),
        channels: channel_names(ep),
        time_ms: (0..ep.n_samples()).map(|k| k as f64 * 1000.0 / fs).collect(),
        trial_counts: by_class.iter().map(Vec::len).collect(),
        data,
        window_s: ep.window_s,
    })
}

// ---------------------------------------------------------------------------
// PSD

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchParams {
    pub segment_s: f64,
    pub overlap: f64,
    pub window: WindowKind,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self { segment_s: 1.0, overlap: 0.5, window: WindowKind::Hann }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchUsed {
    pub segment_samples: usize,
    pub overlap_samples: usize,
    pub window: WindowKind,
    pub sampling_rate_hz: f64,
    /// Segments taken from each trial.
    pub segments_per_trial: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdResult {
    pub class_labels: Vec<String>,
    pub channels: Vec<String>,
    pub freqs_hz: Vec<f64>,
    /// class × channel × frequency, µV²/Hz, one-sided
    pub data: Array3<f64>,
    pub params: WelchUsed,
}

#[derive(Serialize, Deserialize)]
struct PsdWire {
    kind: String,
    class_labels: Vec<String>,
    channels: Vec<String>,
    freqs_hz: Vec<f64>,
    params: WelchUsed,
    psd: Nested<Vec<f64>>,
}

impl PsdResult {
    pub fn density(&self, class: usize, channel: usize) -> Vec<f64> {
        self.data.index_axis(Axis(0), class).index_axis(Axis(0), channel).to_vec()
    }

    pub fn resolution_hz(&self) -> f64 {
        self.params.sampling_rate_hz / self.params.segment_samples as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        let wire = PsdWire {
            kind: "psd".into(),
            class_labels: self.class_labels.clone(),
            channels: self.channels.clone(),
            freqs_hz: self.freqs_hz.clone(),
            params: self.params,
            psd: nest(&self.class_labels, &self.channels, |k, c| self.density(k, c)),
        };
        serde_json::to_value(wire).expect("psd serialize")
    }
}

fn window_coefficients(kind: WindowKind, n: usize) -> Vec<f64> {
    match kind {
        // periodic Hann, the spectral-analysis convention
        WindowKind::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
    }
}

/// Welch average of windowed periodograms over all segments of all trials
/// of each class, density-scaled so that `Σ psd · Δf` approximates the
/// signal variance.
pub fn psd(ep: &EpochSet, params: &WelchParams) -> Result<PsdResult> {
    let fs = ep.sampling_rate_hz;
    let nperseg = (params.segment_s * fs).round() as usize;
    if nperseg < 8 {
        return Err(Error::Spec(format!("segment of {nperseg} samples is shorter than 8")));
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(Error::Spec(format!("overlap must be in [0, 1), got {}", params.overlap)));
    }
    if nperseg > ep.n_samples() {
        return Err(Error::Spec(format!(
            "segment of {nperseg} samples is longer than the {}-sample epoch",
            ep.n_samples()
        )));
    }
    let by_class = require_all_classes(ep)?;

    let noverlap = ((params.overlap * nperseg as f64).floor() as usize).min(nperseg - 1);
    let step = nperseg - noverlap;
    let starts: Vec<usize> = (0..).map(|i| i * step).take_while(|s| s + nperseg <= ep.n_samples()).collect();
    let window = window_coefficients(params.window, nperseg);
    let scale = 1.0 / (fs * window.iter().map(|w| w * w).sum::<f64>());
    let n_freqs = nperseg / 2 + 1;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(nperseg);
    let mut buf = vec![Complex64::new(0.0, 0.0); nperseg];
    let mut data = Array3::zeros((ep.n_classes(), ep.n_channels(), n_freqs));

    for (k, trials) in by_class.iter().enumerate() {
        let n_segments = (trials.len() * starts.len()) as f64;
        for c in 0..ep.n_channels() {
            let mut acc = vec![0.0f64; n_freqs];
            for &t in trials {
                let x = ep.data.index_axis(Axis(0), t);
                let x = x.index_axis(Axis(0), c);
                for &s0 in &starts {
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b = Complex64::new(x[s0 + i] * window[i], 0.0);
                    }
                    fft.process(&mut buf);
                    for (f, a) in acc.iter_mut().enumerate() {
                        *a += buf[f].norm_sqr();
                    }
                }
            }
            for (f, a) in acc.iter().enumerate() {
                let one_sided = if f == 0 || (nperseg % 2 == 0 && f == nperseg / 2) { 1.0 } else { 2.0 };
                data[[k, c, f]] = a * scale * one_sided / n_segments;
            }
        }
    }

    Ok(PsdResult {
        class_labels: ep.class_labels.clone(),
        channels: channel_names(ep),
        freqs_hz: (0..n_freqs).map(|f| f as f64 * fs / nperseg as f64).collect(),
        data,
        params: WelchUsed {
            segment_samples: nperseg,
            overlap_samples: noverlap,
            window: params.window,
            sampling_rate_hz: fs,
            segments_per_trial: starts.len(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ChannelInfo;
    use ndarray::Array3;

    pub(crate) fn epochs(data: Array3<f64>, labels: Vec<usize>, n_classes: usize, fs: f64) -> EpochSet {
        let n_ch = data.dim().1;
        EpochSet {
            data,
            labels,
            class_labels: (0..n_classes).map(|i| format!("class{i}")).collect(),
            window_s: (0.0, 1.0),
            sampling_rate_hz: fs,
            channels: (0..n_ch).map(|i| ChannelInfo::eeg(format!("E{i}"))).collect(),
            subject_id: "S".into(),
        }
    }

    #[test]
    fn constant_signal_stats() {
        let ep = epochs(Array3::from_elem((4, 2, 10), 3.5), vec![0, 1, 0, 1], 2, 100.0);
        let s = class_channel_stats(&ep, 6.0).unwrap();
        assert!(s.mean.iter().all(|&m| m == 3.5));
        assert!(s.std.iter().all(|&v| v == 0.0));
        assert!(s.variance.iter().all(|&v| v == 0.0));
        assert!(s.outliers.iter().all(|&f| !f));
    }

    #[test]
    fn empty_class_named() {
        let ep = epochs(Array3::zeros((2, 1, 10)), vec![0, 0], 2, 100.0);
        match class_channel_stats(&ep, 6.0) {
            Err(Error::EmptyClass(name)) => assert_eq!(name, "class1"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(erp(&ep), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn erp_of_two_trials() {
        let data = Array3::from_shape_vec((2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = erp(&epochs(data, vec![0, 0], 1, 100.0)).unwrap();
        assert_eq!(r.series(0, 0), vec![2.0, 3.0]);
        assert_eq!(r.trial_counts, vec![2]);
        assert_eq!(r.time_ms, vec![0.0, 10.0]);
    }

    #[test]
    fn single_trial_erp_is_verbatim() {
        let data = Array3::from_shape_fn((1, 2, 5), |(_, c, t)| (c * 10 + t) as f64 * 0.37);
        let ep = epochs(data.clone(), vec![0], 1, 100.0);
        let r = erp(&ep).unwrap();
        assert_eq!(r.data.index_axis(Axis(0), 0), data.index_axis(Axis(0), 0));
    }

    #[test]
    fn erp_json_round_trip() {
        let data = Array3::from_shape_fn((3, 2, 4), |(t, c, k)| (t * 7 + c * 3 + k) as f64 / 3.0);
        let r = erp(&epochs(data, vec![0, 1, 1], 2, 250.0)).unwrap();
        let back = ErpResult::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn psd_peak_at_ten_hz() {
        let fs = 250.0;
        let data = Array3::from_shape_fn((2, 1, 1000), |(_, _, t)| (2.0 * PI * 10.0 * t as f64 / fs).sin());
        let r = psd(&epochs(data, vec![0, 0], 1, fs), &WelchParams::default()).unwrap();
        let d = r.density(0, 0);
        let argmax = d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(r.freqs_hz[argmax], 10.0);
        assert_eq!(r.resolution_hz(), 1.0);
        assert_eq!(*r.freqs_hz.last().unwrap(), 125.0);
        // 1 s segments, 50 % overlap over 4 s → 7 segments
        assert_eq!(r.params.segments_per_trial, 7);
    }

    #[test]
    fn psd_of_zero_is_zero() {
        let r = psd(&epochs(Array3::zeros((2, 2, 500)), vec![0, 0], 1, 250.0), &WelchParams::default()).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psd_rejects_bad_params() {
        let ep = epochs(Array3::zeros((1, 1, 100)), vec![0], 1, 250.0);
        assert!(matches!(psd(&ep, &WelchParams::default()), Err(Error::Spec(_))));
        let short = WelchParams { segment_s: 0.02, ..Default::default() };
        assert!(matches!(psd(&ep, &short), Err(Error::Spec(_))));
        let overlap = WelchParams { segment_s: 0.2, overlap: 1.0, ..Default::default() };
        assert!(matches!(psd(&ep, &overlap), Err(Error::Spec(_))));
    }
}
