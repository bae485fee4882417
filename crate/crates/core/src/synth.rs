//! Synthetic recordings with a known class structure.
//!
//! Each class sets a 10 Hz oscillation amplitude on two designated channels
//! (class bit 0 → first channel high, bit 1 → second channel high) on top of
//! white noise everywhere, so band power on those two channels separates the
//! four classes.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{iv2a_class_map, ChannelInfo, EventMarker, Recording, Session};
use crate::error::Result;

pub const IV2A_EEG: [&str; 22] = [
    "Fz", "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "CP3", "CP1", "CPz", "CP2",
    "CP4", "P1", "Pz", "P2", "POz",
];
pub const IV2A_EOG: [&str; 3] = ["EOG1", "EOG2", "EOG3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub subject_id: String,
    pub session: Session,
    pub sampling_rate_hz: f64,
    pub eeg_channels: Vec<String>,
    pub eog_channels: Vec<String>,
    /// Indices (into the EEG list) carrying the class signal.
    pub signal_channels: (usize, usize),
    pub trials_per_class: usize,
    /// Signal before each cue.
    pub lead_s: f64,
    /// Signal after each cue carrying the oscillation.
    pub trial_s: f64,
    pub gap_s: f64,
    pub freq_hz: f64,
    pub low_amplitude: f64,
    pub high_amplitude: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subject_id: "S01".into(),
            session: Session::Train,
            sampling_rate_hz: 250.0,
            eeg_channels: vec!["C3".into(), "C4".into(), "Cz".into(), "Pz".into()],
            eog_channels: Vec::new(),
            signal_channels: (0, 1),
            trials_per_class: 200,
            lead_s: 0.0,
            trial_s: 1.0,
            gap_s: 0.5,
            freq_hz: 10.0,
            low_amplitude: 1.0,
            high_amplitude: 3.0,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// 22 EEG + 3 EOG channels with IV 2a names, 2 s before and 4 s after
    /// each cue, class signal on C3 and C4.
    pub fn iv2a_like(subject_id: &str, session: Session, trials_per_class: usize, seed: u64) -> Self {
        Self {
            subject_id: subject_id.into(),
            session,
            eeg_channels: IV2A_EEG.iter().map(|s| s.to_string()).collect(),
            eog_channels: IV2A_EOG.iter().map(|s| s.to_string()).collect(),
            signal_channels: (7, 11),
            trials_per_class,
            lead_s: 2.0,
            trial_s: 4.0,
            gap_s: 1.5,
            seed,
            ..Self::default()
        }
    }

    pub fn class_amplitudes(&self, class: usize) -> (f64, f64) {
        let pick = |bit: usize| if class & bit != 0 { self.high_amplitude } else { self.low_amplitude };
        (pick(1), pick(2))
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Recording> {
    let class_map: BTreeMap<String, usize> = iv2a_class_map();
    let labels = crate::data::class_labels(&class_map);
    let fs = spec.sampling_rate_hz;
    let lead = (spec.lead_s * fs).round() as usize;
    let body = (spec.trial_s * fs).round() as usize;
    let gap = (spec.gap_s * fs).round() as usize;
    let block = lead + body + gap;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..labels.len()).flat_map(|c| std::iter::repeat_n(c, spec.trials_per_class)).collect();
    order.shuffle(&mut rng);

    let n_eeg = spec.eeg_channels.len();
    let n_ch = n_eeg + spec.eog_channels.len();
    let n_samples = block * order.len() + lead;
    let noise = Normal::new(0.0, spec.noise_sd).expect("finite noise sd");
    let mut signal = Array2::from_shape_simple_fn((n_ch, n_samples), || noise.sample(&mut rng));

    let mut events = Vec::with_capacity(order.len());
    for (i, &class) in order.iter().enumerate() {
        let onset = i * block + lead;
        let (a0, a1) = spec.class_amplitudes(class);
        for (ch, amp) in [(spec.signal_channels.0, a0), (spec.signal_channels.1, a1)] {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for t in 0..body {
                let x = std::f64::consts::TAU * spec.freq_hz * t as f64 / fs + phase;
                signal[[ch, onset + t]] += amp * x.sin();
            }
        }
        events.push(EventMarker { onset_sample: onset, duration_samples: body, label: labels[class].clone() });
    }

    let channels = spec
        .eeg_channels
        .iter()
        .map(ChannelInfo::eeg)
        .chain(spec.eog_channels.iter().map(ChannelInfo::eog))
        .collect();
    Recording::new(spec.subject_id.clone(), spec.session, fs, channels, signal, events, class_map)
}
