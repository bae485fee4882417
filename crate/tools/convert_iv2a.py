#!/usr/bin/env python3
"""Convert the BCI Competition IV 2a download into chatbci recording directories.

Usage:
    pip install mne scipy numpy
    python tools/convert_iv2a.py --gdf path/to/BCICIV_2a_gdf --labels path/to/true_labels --out data

Writes <out>/A0N/{train,eval}/ with meta.json, signals.f32 and events.tsv.
Evaluation-session cues carry no class in the GDF files; their labels are
read from the A0NE.mat true-label files.
"""

import argparse
import json
import sys
from pathlib import Path

import mne
import numpy as np
from scipy.io import loadmat

EEG = [
    "Fz", "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP3", "CP1", "CPz", "CP2", "CP4", "P1", "Pz", "P2", "POz",
]
EOG = ["EOG1", "EOG2", "EOG3"]
CLASS_MAP = {"left_hand": 0, "right_hand": 1, "feet": 2, "tongue": 3}
LABELS = ["left_hand", "right_hand", "feet", "tongue"]
CUE_CODES = {"769": 0, "770": 1, "771": 2, "772": 3}
UNKNOWN_CUE = "783"


def cue_events(raw, true_labels):
    fs = raw.info["sfreq"]
    events = []
    for ann in raw.annotations:
        code = str(ann["description"])
        if code in CUE_CODES:
            cls = CUE_CODES[code]
        elif code == UNKNOWN_CUE and true_labels is not None:
            cls = None
        else:
            continue
        onset = int(round(ann["onset"] * fs))
        duration = int(round(ann["duration"] * fs))
        events.append([onset, duration, cls])
    if true_labels is not None:
        unknown = [e for e in events if e[2] is None]
        if len(unknown) != len(true_labels):
            sys.exit(f"{len(unknown)} unlabeled cues but {len(true_labels)} true labels")
        for e, y in zip(unknown, true_labels):
            e[2] = int(y) - 1
    return [(o, d, LABELS[c]) for o, d, c in events]


def convert(gdf, subject, session, true_labels, out):
    raw = mne.io.read_raw_gdf(str(gdf), preload=True, verbose="error")
    data = raw.get_data() * 1e6
    if data.shape[0] != len(EEG) + len(EOG):
        sys.exit(f"{gdf}: expected 25 channels, found {data.shape[0]}")
    bad = int(np.isnan(data).sum())
    if bad:
        print(f"{gdf.name}: {bad} NaN samples set to 0", file=sys.stderr)
        data = np.nan_to_num(data, nan=0.0)
    events = cue_events(raw, true_labels)

    dest = out / subject / session
    dest.mkdir(parents=True, exist_ok=True)
    channels = [{"name": n, "kind": "EEG", "unit": "uV"} for n in EEG]
    channels += [{"name": n, "kind": "EOG", "unit": "uV"} for n in EOG]
    meta = {
        "subject_id": subject,
        "session": session,
        "sampling_rate_hz": float(raw.info["sfreq"]),
        "channels": channels,
        "class_map": CLASS_MAP,
        "n_samples": int(data.shape[1]),
    }
    (dest / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    data.astype("<f4").tofile(dest / "signals.f32")
    with open(dest / "events.tsv", "w") as f:
        f.write("onset_sample\tduration_samples\tlabel\n")
        for onset, duration, label in events:
            f.write(f"{onset}\t{duration}\t{label}\n")
    print(f"{subject}/{session}: {data.shape[1]} samples, {len(events)} cues")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gdf", type=Path, required=True, help="directory holding A01T.gdf .. A09E.gdf")
    ap.add_argument("--labels", type=Path, required=True, help="directory holding A01E.mat .. A09E.mat")
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--subjects", type=int, nargs="*", default=list(range(1, 10)))
    args = ap.parse_args()
    for n in args.subjects:
        subject = f"A{n:02d}"
        convert(args.gdf / f"{subject}T.gdf", subject, "train", None, args.out)
        labels = loadmat(args.labels / f"{subject}E.mat")["classlabel"].ravel()
        convert(args.gdf / f"{subject}E.gdf", subject, "eval", labels, args.out)


if __name__ == "__main__":
    main()
