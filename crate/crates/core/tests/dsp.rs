mod common;

use chatbci_core::data::ChannelKind;
use chatbci_core::preprocess::{common_average_reference, filter_signal, FilterSpec, SosFilter};
use common::{butter_power_gain, random_recording, xcorr_peak_lag};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin()).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn car_zeroes_the_eeg_mean() {
    let rec = random_recording(22, 3, 2000, 0, 11);
    let out = common_average_reference(&rec).unwrap();
    let eeg = out.indices_of_kind(ChannelKind::Eeg);
    for t in 0..out.n_samples() {
        let m: f64 = eeg.iter().map(|&c| out.signal[[c, t]]).sum::<f64>() / eeg.len() as f64;
        assert!(m.abs() < 1e-6, "sample {t}: {m}");
    }
    for c in out.indices_of_kind(ChannelKind::Eog) {
        assert_eq!(out.signal.row(c), rec.signal.row(c));
    }
}

#[test]
fn dc_gains() {
    let fs = 250.0;
    let lp = SosFilter::design(&FilterSpec::lowpass(40.0), fs).unwrap();
    let hp = SosFilter::design(&FilterSpec::highpass(4.0), fs).unwrap();
    assert!((lp.magnitude(0.0) - 1.0).abs() < 1e-3);
    assert!(hp.magnitude(0.0) < 1e-3);
    let dc = vec![5.0; 3000];
    let y = lp.filtfilt(&dc);
    assert!(y.iter().all(|v| (v - 5.0).abs() < 5e-3));
    let y = hp.filtfilt(&dc);
    assert!(y[1000..2000].iter().all(|v| v.abs() < 5e-3));
}

#[test]
fn fifty_hz_attenuation_matches_closed_form() {
    let fs = 250.0;
    let lp = SosFilter::design(&FilterSpec::lowpass(40.0), fs).unwrap();
    let x = sine(50.0, fs, 5000);
    let y = lp.filtfilt(&x);
    let measured = rms(&y[1000..4000]) / rms(&x[1000..4000]);
    let expected = butter_power_gain(false, 4, 40.0, fs, 50.0);
    assert!((measured / expected - 1.0).abs() < 0.05, "measured {measured}, expected {expected}");
    // the designed response itself agrees much more tightly
    assert!((lp.magnitude(50.0).powi(2) / expected - 1.0).abs() < 1e-9);
}

#[test]
fn highpass_response_matches_closed_form() {
    let fs = 250.0;
    for order in [2, 4, 5] {
        let spec = FilterSpec { order, ..FilterSpec::highpass(4.0) };
        let hp = SosFilter::design(&spec, fs).unwrap();
        for f in [1.0, 2.0, 4.0, 8.0, 30.0, 100.0] {
            let want = butter_power_gain(true, order, 4.0, fs, f).sqrt();
            assert!((hp.magnitude(f) - want).abs() < 1e-9, "order {order} f {f}");
        }
    }
}

#[test]
fn zero_phase_has_no_lag() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
    for spec in [FilterSpec::lowpass(40.0), FilterSpec::bandpass(8.0, 30.0)] {
        let f = SosFilter::design(&spec, 250.0).unwrap();
        assert_eq!(xcorr_peak_lag(&x, &f.filtfilt(&x), 25), 0);
        // a causal pass is delayed, for contrast
        assert!(xcorr_peak_lag(&x, &f.filter(&x), 25) > 0);
    }
}

#[test]
fn filter_signal_applies_per_channel() {
    let rec = random_recording(3, 1, 1500, 0, 2);
    let out = filter_signal(&rec, &FilterSpec::lowpass(40.0)).unwrap();
    let f = SosFilter::design(&FilterSpec::lowpass(40.0), 250.0).unwrap();
    for c in 0..4 {
        let want = f.filtfilt(&rec.signal.row(c).to_vec());
        assert_eq!(out.signal.row(c).to_vec(), want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn car_is_idempotent(n_eeg in 2usize..12, n_eog in 0usize..3, seed in any::<u64>()) {
        let rec = random_recording(n_eeg, n_eog, 64, 0, seed);
        let once = common_average_reference(&rec).unwrap();
        let twice = common_average_reference(&once).unwrap();
        for (a, b) in once.signal.iter().zip(twice.signal.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn car_nullspace(n_eeg in 2usize..24, seed in any::<u64>()) {
        let rec = random_recording(n_eeg, 1, 50, 0, seed);
        let out = common_average_reference(&rec).unwrap();
        for t in 0..50 {
            let m: f64 = (0..n_eeg).map(|c| out.signal[[c, t]]).sum::<f64>() / n_eeg as f64;
            prop_assert!(m.abs() < 1e-6);
        }
    }

    #[test]
    fn filtfilt_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>(), cutoff in 5.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = SosFilter::design(&FilterSpec::lowpass(cutoff), 250.0).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = f.filtfilt(&mix);
        let fx = f.filtfilt(&x);
        let fy = f.filtfilt(&y);
        for i in 0..300 {
            prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_response_matches_closed_form(order in 1usize..9, cutoff in 1.0f64..120.0, f in 0.0f64..124.0) {
        let spec = FilterSpec { order, ..FilterSpec::lowpass(cutoff) };
        let lp = SosFilter::design(&spec, 250.0).unwrap();
        let want = butter_power_gain(false, order, cutoff, 250.0, f).sqrt();
        prop_assert!((lp.magnitude(f) - want).abs() < 1e-8);
    }
}
