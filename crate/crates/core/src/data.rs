//! Recording container format, loading, saving and validation.
//!
//! A recording lives in its own directory:
//!
//! ```text
//! <dir>/meta.json    subject_id, session, sampling_rate_hz, channels, class_map, n_samples
//! <dir>/signals.f32  little-endian f32, row-major channels × samples (µV)
//! <dir>/events.tsv   header row, then onset_sample \t duration_samples \t label
//! ```
//!
//! A dataset root groups recordings as `<root>/<subject_id>/<session>/`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const SIGNAL_FILE: &str = "signals.f32";
pub const EVENTS_FILE: &str = "events.tsv";
pub const EVENTS_HEADER: &str = "onset_sample\tduration_samples\tlabel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    #[serde(rename = "EEG")]
    Eeg,
    #[serde(rename = "EOG")]
    Eog,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub kind: ChannelKind,
    pub unit: String,
}

impl ChannelInfo {
    pub fn eeg(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ChannelKind::Eeg, unit: "uV".into() }
    }

    pub fn eog(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ChannelKind::Eog, unit: "uV".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMarker {
    pub onset_sample: usize,
    pub duration_samples: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Session {
    Train,
    Eval,
}

impl Session {
    pub fn as_str(&self) -> &'static str {
        match self {
            Session::Train => "train",
            Session::Eval => "eval",
        }
    }
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Session {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Session::Train),
            "eval" => Ok(Session::Eval),
            other => Err(Error::Format(format!("unknown session {other:?}"))),
        }
    }
}

/// Label → class index map used by the converted IV 2a recordings.
pub fn iv2a_class_map() -> BTreeMap<String, usize> {
    [("left_hand", 0), ("right_hand", 1), ("feet", 2), ("tongue", 3)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// One subject-session of multichannel signal with event markers.
///
/// Immutable once constructed; every constructor path goes through
/// [`Recording::new`], which enforces the container invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub session: Session,
    pub sampling_rate_hz: f64,
    pub channels: Vec<ChannelInfo>,
    /// channels × samples, µV.
    pub signal: Array2<f64>,
    /// Sorted by onset (stable).
    pub events: Vec<EventMarker>,
    pub class_map: BTreeMap<String, usize>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        session: Session,
        sampling_rate_hz: f64,
        channels: Vec<ChannelInfo>,
        signal: Array2<f64>,
        mut events: Vec<EventMarker>,
        class_map: BTreeMap<String, usize>,
    ) -> Result<Self> {
        if !(sampling_rate_hz > 0.0) || !sampling_rate_hz.is_finite() {
            return Err(Error::Integrity(format!("sampling rate must be positive, got {sampling_rate_hz}")));
        }
        if signal.nrows() != channels.len() {
            return Err(Error::Integrity(format!(
                "signal has {} rows but {} channels are declared",
                signal.nrows(),
                channels.len()
            )));
        }
        let mut seen = HashSet::new();
        for ch in &channels {
            if !seen.insert(ch.name.as_str()) {
                return Err(Error::Integrity(format!("duplicate channel name {:?}", ch.name)));
            }
        }
        let n_classes = class_map.len();
        let mut indices: Vec<usize> = class_map.values().copied().collect();
        indices.sort_unstable();
        indices.dedup();
        if indices.len() != n_classes || indices.iter().any(|&i| i >= n_classes) {
            return Err(Error::Integrity(format!(
                "class indices must be unique and within [0, {n_classes}): {class_map:?}"
            )));
        }
        let n_samples = signal.ncols();
        for ev in &events {
            if !class_map.contains_key(&ev.label) {
                return Err(Error::Label { label: ev.label.clone(), line: 0 });
            }
            if ev.onset_sample + ev.duration_samples > n_samples {
                return Err(Error::Integrity(format!(
                    "event at {} (+{}) runs past the end of the recording ({n_samples} samples)",
                    ev.onset_sample, ev.duration_samples
                )));
            }
        }
        events.sort_by_key(|e| e.onset_sample);
        Ok(Self {
            subject_id: subject_id.into(),
            session,
            sampling_rate_hz,
            channels,
            signal,
            events,
            class_map,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.signal.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_map.len()
    }

    /// Labels ordered by class index.
    pub fn class_labels(&self) -> Vec<String> {
        class_labels(&self.class_map)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn indices_of_kind(&self, kind: ChannelKind) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Same metadata and events, different signal of identical shape.
    pub(crate) fn with_signal(&self, signal: Array2<f64>) -> Self {
        debug_assert_eq!(signal.dim(), self.signal.dim());
        Self { signal, ..self.clone() }
    }
}

pub fn class_labels(class_map: &BTreeMap<String, usize>) -> Vec<String> {
    let mut labels: Vec<(usize, &String)> = class_map.iter().map(|(k, &v)| (v, k)).collect();
    labels.sort();
    labels.into_iter().map(|(_, k)| k.clone()).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    subject_id: String,
    session: Session,
    sampling_rate_hz: f64,
    channels: Vec<ChannelInfo>,
    class_map: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_samples: Option<usize>,
}

fn read_required(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Format(format!("missing {}", path.display())),
        _ => Error::Io(e),
    })
}

/// Load a recording directory. Events come back sorted by onset.
pub fn load_recording(dir: impl AsRef<Path>) -> Result<Recording> {
    let dir = dir.as_ref();
    let meta_bytes = read_required(&dir.join(META_FILE))?;
    let signal_bytes = read_required(&dir.join(SIGNAL_FILE))?;
    let events_bytes = read_required(&dir.join(EVENTS_FILE))?;

    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.join(META_FILE).display())))?;

    let n_channels = meta.channels.len();
    if n_channels == 0 {
        return Err(Error::Integrity("meta.json declares no channels".into()));
    }
    if signal_bytes.len() % (4 * n_channels) != 0 {
        return Err(Error::Integrity(format!(
            "signals.f32 holds {} bytes, not a multiple of 4 × {n_channels} channels",
            signal_bytes.len()
        )));
    }
    let n_samples = signal_bytes.len() / (4 * n_channels);
    if let Some(declared) = meta.n_samples {
        if declared != n_samples {
            return Err(Error::Integrity(format!(
                "meta.json declares {declared} samples but signals.f32 holds {n_samples}"
            )));
        }
    }
    let values: Vec<f64> = signal_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let signal = Array2::from_shape_vec((n_channels, n_samples), values)
        .map_err(|e| Error::Integrity(e.to_string()))?;

    let events = parse_events(&events_bytes, &meta.class_map)?;

    Recording::new(
        meta.subject_id,
        meta.session,
        meta.sampling_rate_hz,
        meta.channels,
        signal,
        events,
        meta.class_map,
    )
}

fn parse_events(bytes: &[u8], class_map: &BTreeMap<String, usize>) -> Result<Vec<EventMarker>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("events.tsv: {e}")))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == EVENTS_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Format(format!("events.tsv: unexpected header {header:?}")));
        }
        None => return Err(Error::Format("events.tsv: empty file".into())),
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!("events.tsv line {line_no}: expected 3 fields")));
        }
        let parse = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("events.tsv line {line_no}: bad {what} {s:?}")))
        };
        let onset_sample = parse(fields[0], "onset_sample")?;
        let duration_samples = parse(fields[1], "duration_samples")?;
        let label = fields[2].trim().to_string();
        if !class_map.contains_key(&label) {
            return Err(Error::Label { label, line: line_no });
        }
        events.push(EventMarker { onset_sample, duration_samples, label });
    }
    Ok(events)
}

pub fn save_recording(rec: &Recording, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let meta = Meta {
        subject_id: rec.subject_id.clone(),
        session: rec.session,
        sampling_rate_hz: rec.sampling_rate_hz,
        channels: rec.channels.clone(),
        class_map: rec.class_map.clone(),
        n_samples: Some(rec.n_samples()),
    };
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;

    let mut bytes = Vec::with_capacity(rec.signal.len() * 4);
    for row in rec.signal.rows() {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(SIGNAL_FILE), bytes)?;

    let mut events = fs::File::create(dir.join(EVENTS_FILE))?;
    writeln!(events, "{EVENTS_HEADER}")?;
    for ev in &rec.events {
        writeln!(events, "{}\t{}\t{}", ev.onset_sample, ev.duration_samples, ev.label)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub name: String,
    pub nan_count: usize,
    /// Runs of identical consecutive values lasting at least one second.
    pub flat_segments: usize,
    /// The whole channel is a single constant run.
    pub all_flat: bool,
    /// (min, max) over finite values; `None` if there are none.
    pub amplitude_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub subject_id: String,
    pub session: Session,
    pub channels: Vec<ChannelReport>,
    pub class_counts: BTreeMap<String, usize>,
    pub missing_classes: Vec<String>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn total_nans(&self) -> usize {
        self.channels.iter().map(|c| c.nan_count).sum()
    }

    /// One-line human summary used by the CLI and the dataset inventory.
    pub fn summary(&self) -> String {
        let flat: Vec<&str> =
            self.channels.iter().filter(|c| c.all_flat).map(|c| c.name.as_str()).collect();
        format!(
            "{} {}: {} (nan={}, flat_channels={:?}, missing_classes={:?}, events={:?})",
            self.subject_id,
            self.session,
            if self.pass { "pass" } else { "FAIL" },
            self.total_nans(),
            flat,
            self.missing_classes,
            self.class_counts
        )
    }
}

fn channel_report(name: &str, row: ndarray::ArrayView1<'_, f64>, min_flat_len: usize) -> ChannelReport {
    let mut nan_count = 0;
    let mut flat_segments = 0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut run_value = f64::NAN;
    let mut run_len = 0usize;
    let mut longest_run = 0usize;

    let mut close_run = |len: usize, longest: &mut usize| {
        if len >= min_flat_len {
            flat_segments += 1;
        }
        *longest = (*longest).max(len);
    };

    for &v in row {
        if v.is_nan() {
            nan_count += 1;
            close_run(run_len, &mut longest_run);
            run_len = 0;
            run_value = f64::NAN;
            continue;
        }
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if run_len > 0 && v == run_value {
            run_len += 1;
        } else {
            close_run(run_len, &mut longest_run);
            run_value = v;
            run_len = 1;
        }
    }
    close_run(run_len, &mut longest_run);

    ChannelReport {
        name: name.to_string(),
        nan_count,
        flat_segments,
        all_flat: !row.is_empty() && longest_run == row.len(),
        amplitude_range: (lo <= hi).then_some((lo, hi)),
    }
}

/// Pure, deterministic data-quality report. Problems are report content.
pub fn validate(rec: &Recording) -> ValidationReport {
    let min_flat_len = (rec.sampling_rate_hz.round() as usize).max(1);
    let channels: Vec<ChannelReport> = rec
        .channels
        .iter()
        .zip(rec.signal.rows())
        .map(|(ch, row)| channel_report(&ch.name, row, min_flat_len))
        .collect();

    let mut class_counts: BTreeMap<String, usize> =
        rec.class_map.keys().map(|k| (k.clone(), 0)).collect();
    for ev in &rec.events {
        *class_counts.entry(ev.label.clone()).or_default() += 1;
    }
    let missing_classes: Vec<String> = rec
        .class_labels()
        .into_iter()
        .filter(|l| class_counts.get(l).copied().unwrap_or(0) == 0)
        .collect();

    let pass = channels.iter().all(|c| c.nan_count == 0 && !c.all_flat) && missing_classes.is_empty();
    ValidationReport {
        subject_id: rec.subject_id.clone(),
        session: rec.session,
        channels,
        class_counts,
        missing_classes,
        pass,
    }
}

/// Recordings laid out as `<root>/<subject_id>/<session>/`.
#[derive(Debug, Clone)]
pub struct DataStore {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordingEntry {
    pub subject_id: String,
    pub session: Session,
    pub path: PathBuf,
}

impl DataStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn recording_dir(&self, subject_id: &str, session: Session) -> PathBuf {
        self.root.join(subject_id).join(session.as_str())
    }

    pub fn load(&self, subject_id: &str, session: Session) -> Result<Recording> {
        load_recording(self.recording_dir(subject_id, session))
    }

    pub fn save(&self, rec: &Recording) -> Result<PathBuf> {
        let dir = self.recording_dir(&rec.subject_id, rec.session);
        save_recording(rec, &dir)?;
        Ok(dir)
    }

    /// All recording directories under the root, sorted by subject then session.
    pub fn entries(&self) -> Result<Vec<RecordingEntry>> {
        let mut out = Vec::new();
        if !self.root.is_dir() {
            return Ok(out);
        }
        for subject in fs::read_dir(&self.root)? {
            let subject = subject?;
            if !subject.file_type()?.is_dir() {
                continue;
            }
            let subject_id = subject.file_name().to_string_lossy().into_owned();
            for session in [Session::Train, Session::Eval] {
                let path = subject.path().join(session.as_str());
                if path.join(META_FILE).is_file() {
                    out.push(RecordingEntry { subject_id: subject_id.clone(), session, path });
                }
            }
        }
        out.sort_by(|a, b| (&a.subject_id, a.session).cmp(&(&b.subject_id, b.session)));
        Ok(out)
    }

    pub fn subjects(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = self.entries()?.into_iter().map(|e| e.subject_id).collect();
        ids.dedup();
        Ok(ids)
    }

    /// Accepts an exact subject id, or a bare number mapped to the `A0N` naming.
    pub fn resolve_subject(&self, query: &str) -> Option<String> {
        let subjects = self.subjects().ok()?;
        if subjects.iter().any(|s| s == query) {
            return Some(query.to_string());
        }
        let n: usize = query.parse().ok()?;
        let candidate = format!("A{n:02}");
        subjects.into_iter().find(|s| *s == candidate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(signal: Array2<f64>) -> Recording {
        let channels = (0..signal.nrows()).map(|i| ChannelInfo::eeg(format!("E{i}"))).collect();
        Recording::new("S01", Session::Train, 250.0, channels, signal, vec![], iv2a_class_map()).unwrap()
    }

    #[test]
    fn two_by_four_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = tiny(array![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]);
        save_recording(&rec, dir.path()).unwrap();
        let back = load_recording(dir.path()).unwrap();
        assert_eq!(back.signal, array![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]);
        assert_eq!(back, rec);
    }

    #[test]
    fn signal_bytes_are_little_endian_row_major() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&tiny(array![[1.0, 2.0], [3.0, 4.0]]), dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(SIGNAL_FILE)).unwrap();
        let expect: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(bytes, expect);
    }

    #[test]
    fn point_one_survives_as_nearest_f32() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&tiny(array![[0.1, 0.0]]), dir.path()).unwrap();
        let back = load_recording(dir.path()).unwrap();
        assert_eq!(back.signal[[0, 0]], 0.1f32 as f64);
    }

    #[test]
    fn file_size_is_channels_times_samples_times_four() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&tiny(Array2::zeros((25, 1000))), dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join(SIGNAL_FILE)).unwrap().len(), 100_000);
    }

    #[test]
    fn missing_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&tiny(Array2::zeros((2, 4))), dir.path()).unwrap();
        fs::remove_file(dir.path().join(EVENTS_FILE)).unwrap();
        assert!(matches!(load_recording(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_signal_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&tiny(Array2::zeros((2, 4))), dir.path()).unwrap();
        let path = dir.path().join(SIGNAL_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_recording(dir.path()), Err(Error::Integrity(_))));

        // whole-sample truncation is caught by the declared sample count
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_recording(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn unknown_label_is_label_error() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&tiny(Array2::zeros((2, 40))), dir.path()).unwrap();
        fs::write(dir.path().join(EVENTS_FILE), format!("{EVENTS_HEADER}\n3\t1\tleft_hand\n5\t1\telbow\n")).unwrap();
        match load_recording(dir.path()) {
            Err(Error::Label { label, line }) => {
                assert_eq!(label, "elbow");
                assert_eq!(line, 3);
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn events_sorted_after_load() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&tiny(Array2::zeros((1, 40))), dir.path()).unwrap();
        fs::write(
            dir.path().join(EVENTS_FILE),
            format!("{EVENTS_HEADER}\n30\t1\ttongue\n3\t1\tleft_hand\n10\t2\tfeet\n"),
        )
        .unwrap();
        let rec = load_recording(dir.path()).unwrap();
        let onsets: Vec<usize> = rec.events.iter().map(|e| e.onset_sample).collect();
        assert_eq!(onsets, vec![3, 10, 30]);
    }

    #[test]
    fn duplicate_channel_names_rejected() {
        let err = Recording::new(
            "S",
            Session::Train,
            100.0,
            vec![ChannelInfo::eeg("C3"), ChannelInfo::eeg("C3")],
            Array2::zeros((2, 3)),
            vec![],
            iv2a_class_map(),
        );
        assert!(matches!(err, Err(Error::Integrity(_))));
    }

    fn clean_recording() -> Recording {
        let n = 2000;
        let signal = Array2::from_shape_fn((3, n), |(c, t)| ((t as f64) * 0.1 + c as f64).sin());
        let events = ["left_hand", "right_hand", "feet", "tongue"]
            .iter()
            .enumerate()
            .map(|(i, l)| EventMarker { onset_sample: 100 + 300 * i, duration_samples: 50, label: l.to_string() })
            .collect();
        let channels = vec![ChannelInfo::eeg("C3"), ChannelInfo::eeg("C4"), ChannelInfo::eog("EOG1")];
        Recording::new("S01", Session::Train, 250.0, channels, signal, events, iv2a_class_map()).unwrap()
    }

    #[test]
    fn clean_recording_passes() {
        let report = validate(&clean_recording());
        assert!(report.pass, "{}", report.summary());
        assert!(report.channels.iter().all(|c| c.nan_count == 0 && c.flat_segments == 0));
        assert_eq!(report.class_counts["tongue"], 1);
    }

    #[test]
    fn constant_channel_fails() {
        let mut rec = clean_recording();
        rec.signal.row_mut(1).fill(0.0);
        let report = validate(&rec);
        assert!(report.channels[1].flat_segments >= 1);
        assert!(report.channels[1].all_flat);
        assert!(!report.pass);
    }

    #[test]
    fn missing_class_fails() {
        let mut rec = clean_recording();
        rec.events.retain(|e| e.label != "tongue");
        let report = validate(&rec);
        assert_eq!(report.class_counts["tongue"], 0);
        assert_eq!(report.missing_classes, vec!["tongue".to_string()]);
        assert!(!report.pass);
    }

    #[test]
    fn nan_counted_and_fails() {
        let mut rec = clean_recording();
        rec.signal[[0, 10]] = f64::NAN;
        rec.signal[[0, 11]] = f64::NAN;
        let report = validate(&rec);
        assert_eq!(report.channels[0].nan_count, 2);
        assert!(!report.pass);
    }

    #[test]
    fn short_flat_run_is_not_a_segment() {
        let mut rec = clean_recording();
        rec.signal.row_mut(0).slice_mut(ndarray::s![0..249]).fill(3.0);
        assert_eq!(validate(&rec).channels[0].flat_segments, 0);
        rec.signal.row_mut(0).slice_mut(ndarray::s![0..250]).fill(3.0);
        assert_eq!(validate(&rec).channels[0].flat_segments, 1);
    }

    #[test]
    fn store_layout_and_subject_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::new(dir.path());
        let mut rec = clean_recording();
        rec.subject_id = "A03".into();
        store.save(&rec).unwrap();
        rec.session = Session::Eval;
        store.save(&rec).unwrap();
        let entries = store.entries().unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(store.subjects().unwrap(), vec!["A03".to_string()]);
        assert_eq!(store.resolve_subject("3").as_deref(), Some("A03"));
        assert_eq!(store.resolve_subject("A03").as_deref(), Some("A03"));
        assert_eq!(store.resolve_subject("4"), None);
    }
}
