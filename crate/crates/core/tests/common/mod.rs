//! Brute-force reference implementations used as test oracles. Nothing here
//! shares code with the library under test.
#![allow(dead_code)]

use std::f64::consts::PI;

use chatbci_core::data::{iv2a_class_map, ChannelInfo, EventMarker, Recording, Session};
use chatbci_core::preprocess::EpochSet;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// |H(f)|² of a digital Butterworth low-pass or high-pass designed by the
/// bilinear transform with prewarping.
pub fn butter_power_gain(highpass: bool, order: usize, cutoff_hz: f64, fs: f64, f: f64) -> f64 {
    let w = (PI * f / fs).tan();
    let wc = (PI * cutoff_hz / fs).tan();
    let ratio = if highpass { wc / w } else { w / wc };
    1.0 / (1.0 + ratio.powi(2 * order as i32))
}

pub fn mean_two_pass(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn var_two_pass(x: &[f64]) -> f64 {
    let m = mean_two_pass(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Naive DFT periodogram with a periodic Hann window, averaged over the
/// given segments, one-sided density.
pub fn naive_welch(x: &[f64], fs: f64, nperseg: usize, noverlap: usize) -> Vec<(f64, f64)> {
    let step = nperseg - noverlap;
    let w: Vec<f64> = (0..nperseg).map(|n| (PI * n as f64 / nperseg as f64).sin().powi(2)).collect();
    let u: f64 = w.iter().map(|v| v * v).sum();
    let nf = nperseg / 2 + 1;
    let mut acc = vec![0.0; nf];
    let mut segs = 0;
    let mut start = 0;
    while start + nperseg <= x.len() {
        for (k, a) in acc.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..nperseg {
                let ang = -2.0 * PI * (k * n) as f64 / nperseg as f64;
                let v = x[start + n] * w[n];
                re += v * ang.cos();
                im += v * ang.sin();
            }
            *a += re * re + im * im;
        }
        segs += 1;
        start += step;
    }
    acc.iter()
        .enumerate()
        .map(|(k, a)| {
            let edge = k == 0 || (nperseg % 2 == 0 && k == nperseg / 2);
            let density = a / (fs * u) * if edge { 1.0 } else { 2.0 } / segs as f64;
            (k as f64 * fs / nperseg as f64, density)
        })
        .collect()
}

/// Lag (in samples, |lag| ≤ max_lag) maximizing Σ a[t]·b[t+lag].
pub fn xcorr_peak_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
    let n = a.len() as i64;
    (-max_lag..=max_lag)
        .map(|lag| {
            let s: f64 = (0..n)
                .filter(|&t| t + lag >= 0 && t + lag < n)
                .map(|t| a[t as usize] * b[(t + lag) as usize])
                .sum();
            (lag, s)
        })
        .fold((0, f64::NEG_INFINITY), |best, (l, s)| if s > best.1 { (l, s) } else { best })
        .0
}

pub fn random_recording(n_eeg: usize, n_eog: usize, n_samples: usize, n_events: usize, seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_eeg + n_eog;
    let signal = Array2::from_shape_simple_fn((n, n_samples), || rng.random_range(-50.0..50.0));
    let labels = ["left_hand", "right_hand", "feet", "tongue"];
    let events = (0..n_events)
        .map(|i| EventMarker {
            onset_sample: rng.random_range(0..n_samples),
            duration_samples: 0,
            label: labels[i % 4].to_string(),
        })
        .collect();
    let channels = (0..n_eeg)
        .map(|i| ChannelInfo::eeg(format!("E{i}")))
        .chain((0..n_eog).map(|i| ChannelInfo::eog(format!("EOG{}", i + 1))))
        .collect();
    Recording::new("S01", Session::Train, 250.0, channels, signal, events, iv2a_class_map()).unwrap()
}

pub fn random_epochs(n_trials: usize, n_ch: usize, n_t: usize, fs: f64, seed: u64) -> EpochSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EpochSet {
        data: Array3::from_shape_simple_fn((n_trials, n_ch, n_t), || rng.random_range(-20.0..20.0)),
        labels: (0..n_trials).map(|i| i % 4).collect(),
        class_labels: ["left_hand", "right_hand", "feet", "tongue"].map(String::from).to_vec(),
        window_s: (0.0, n_t as f64 / fs),
        sampling_rate_hz: fs,
        channels: (0..n_ch).map(|i| ChannelInfo::eeg(format!("E{i}"))).collect(),
        subject_id: "S01".into(),
    }
}

/// log band power in [lo, hi] Hz per channel, by direct DFT of the whole trial.
pub fn band_power_features(ep: &EpochSet, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let (n, c, t) = ep.data.dim();
    let fs = ep.sampling_rate_hz;
    let bins: Vec<usize> = (0..=t / 2).filter(|&k| {
        let f = k as f64 * fs / t as f64;
        f >= lo && f <= hi
    }).collect();
    (0..n)
        .map(|i| {
            (0..c)
                .map(|ch| {
                    let p: f64 = bins
                        .iter()
                        .map(|&k| {
                            let (mut re, mut im) = (0.0, 0.0);
                            for s in 0..t {
                                let ang = -2.0 * PI * (k * s) as f64 / t as f64;
                                re += ep.data[[i, ch, s]] * ang.cos();
                                im += ep.data[[i, ch, s]] * ang.sin();
                            }
                            re * re + im * im
                        })
                        .sum();
                    (p + 1e-12).ln()
                })
                .collect()
        })
        .collect()
}

/// Multinomial logistic regression by full-batch gradient descent on
/// standardized features. Returns test accuracy.
pub fn logistic_accuracy(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    n_classes: usize,
) -> f64 {
    let d = train_x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| train_x.iter().map(|r| r[j]).sum::<f64>() / train_x.len() as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (train_x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / train_x.len() as f64).sqrt().max(1e-12))
        .collect();
    let z = |r: &Vec<f64>| -> Vec<f64> { (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = train_x.iter().map(z).collect();
    let mut w = vec![vec![0.0; d + 1]; n_classes];
    let scores = |w: &Vec<Vec<f64>>, x: &[f64]| -> Vec<f64> {
        w.iter().map(|wk| wk[d] + (0..d).map(|j| wk[j] * x[j]).sum::<f64>()).collect()
    };
    for _ in 0..500 {
        let mut g = vec![vec![0.0; d + 1]; n_classes];
        for (x, &y) in xs.iter().zip(train_y) {
            let s = scores(&w, x);
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            for k in 0..n_classes {
                let r = e[k] / tot - if k == y { 1.0 } else { 0.0 };
                for j in 0..d {
                    g[k][j] += r * x[j];
                }
                g[k][d] += r;
            }
        }
        for k in 0..n_classes {
            for j in 0..=d {
                w[k][j] -= 0.5 * g[k][j] / xs.len() as f64;
            }
        }
    }
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| {
            let s = scores(&w, &z(x));
            let pred = (0..n_classes).fold(0, |b, k| if s[k] > s[b] { k } else { b });
            pred == y
        })
        .count();
    correct as f64 / test_y.len() as f64
}
