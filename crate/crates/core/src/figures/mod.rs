//! ERP grids and training-curve panels.
//!
//! Every figure is a PNG plus a sidecar JSON holding the exact arrays that
//! were drawn. The figure id is derived from the sidecar bytes, so identical
//! inputs always map to the same `figures/<id>.png` and `figures/<id>.data.json`.

pub mod raster;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::ErpResult;
use crate::error::{Error, Result};
use crate::training::TrainRun;
use raster::{Canvas, Rgb, BLACK, DARK_GREY, GREY};

pub const DEFAULT_ERP_CHANNELS: [&str; 7] = ["Fz", "C3", "Cz", "C4", "Pz", "EOG1", "EOG3"];

/// Class index → trace color.
pub const CLASS_PALETTE: [Rgb; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

const PANEL_W: usize = 320;
const PANEL_H: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErpFigureSpec {
    pub channels: Vec<String>,
    /// Added to cue-relative times; 2000 puts trial start at 0 ms when the
    /// cue appears 2 s into the trial.
    pub time_origin_ms: f64,
    pub fixation_ms: Option<(f64, f64)>,
    pub cue_ms: Option<(f64, f64)>,
    pub zoom_ms: Option<(f64, f64)>,
}

impl Default for ErpFigureSpec {
    fn default() -> Self {
        Self {
            channels: DEFAULT_ERP_CHANNELS.iter().map(|s| s.to_string()).collect(),
            time_origin_ms: 2000.0,
            fixation_ms: Some((0.0, 2000.0)),
            cue_ms: Some((2000.0, 3250.0)),
            zoom_ms: None,
        }
    }
}

pub struct Figure {
    pub figure_id: String,
    pub png: Vec<u8>,
    pub sidecar: Value,
}

impl Figure {
    fn new(canvas: &Canvas, sidecar: Value) -> Result<Self> {
        let bytes = serde_json::to_vec(&sidecar)?;
        let digest = Sha256::digest(&bytes);
        Ok(Self { figure_id: format!("fig-{}", &hex::encode(digest)[..16]), png: canvas.to_png()?, sidecar })
    }

    pub fn png_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.png"))
    }

    pub fn sidecar_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.data.json"))
    }

    /// Write `<id>.png` and `<id>.data.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let png = Self::png_path(dir, &self.figure_id);
        let side = Self::sidecar_path(dir, &self.figure_id);
        fs::write(&png, &self.png)?;
        fs::write(&side, serde_json::to_vec_pretty(&self.sidecar)?)?;
        Ok((png, side))
    }
}

pub fn color_hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn grid_dims(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (cols, n.div_ceil(cols))
}

/// Data range padded by 5%, never degenerate.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.05 };
    (lo - pad, hi + pad)
}

struct Axes {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Axes {
    fn in_panel(col: usize, row: usize, xr: (f64, f64), yr: (f64, f64), top: i64, h: i64) -> Self {
        let left = (col * PANEL_W) as i64;
        let up = (row * PANEL_H) as i64;
        Self { x0: left + 44, y0: up + top, w: PANEL_W as i64 - 56, h, xr, yr }
    }

    fn px(&self, x: f64) -> i64 {
        self.x0 + ((x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w as f64).round() as i64
    }

    fn py(&self, y: f64) -> i64 {
        self.y0 + self.h - ((y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h as f64).round() as i64
    }

    fn frame(&self, canvas: &mut Canvas) {
        canvas.stroke_rect(self.x0, self.y0, self.x0 + self.w, self.y0 + self.h, DARK_GREY);
        let lo = format!("{:.1}", self.yr.0);
        let hi = format!("{:.1}", self.yr.1);
        canvas.text(self.x0 - 4 - Canvas::text_width(&lo), self.y0 + self.h - 7, &lo, DARK_GREY);
        canvas.text(self.x0 - 4 - Canvas::text_width(&hi), self.y0, &hi, DARK_GREY);
    }

    fn x_labels(&self, canvas: &mut Canvas) {
        let lo = format!("{:.0}", self.xr.0);
        let hi = format!("{:.0}", self.xr.1);
        canvas.text(self.x0, self.y0 + self.h + 4, &lo, DARK_GREY);
        canvas.text(self.x0 + self.w - Canvas::text_width(&hi), self.y0 + self.h + 4, &hi, DARK_GREY);
    }

    fn trace(&self, canvas: &mut Canvas, xs: &[f64], ys: &[f64], c: Rgb) {
        let pts: Vec<(i64, i64)> = xs.iter().zip(ys).map(|(&x, &y)| (self.px(x), self.py(y))).collect();
        canvas.polyline(&pts, c);
    }
}

/// One panel per spec channel, one trace per class, fixation and cue boxes.
pub fn erp_figure(erp: &ErpResult, spec: &ErpFigureSpec) -> Result<Figure> {
    if spec.channels.is_empty() {
        return Err(Error::Spec("no channels requested".into()));
    }
    let n_classes = erp.class_labels.len();
    if n_classes > CLASS_PALETTE.len() {
        return Err(Error::Spec(format!("at most {} classes can be colored", CLASS_PALETTE.len())));
    }
    let channel_idx = spec
        .channels
        .iter()
        .map(|name| erp.channel_index(name).ok_or_else(|| Error::Spec(format!("unknown channel {name:?}"))))
        .collect::<Result<Vec<_>>>()?;

    let x_all: Vec<f64> = erp.time_ms.iter().map(|t| t + spec.time_origin_ms).collect();
    let keep: Vec<usize> = match spec.zoom_ms {
        Some((a, b)) => (0..x_all.len()).filter(|&i| x_all[i] >= a && x_all[i] <= b).collect(),
        None => (0..x_all.len()).collect(),
    };
    if keep.len() < 2 {
        return Err(Error::Spec("zoom window contains fewer than two samples".into()));
    }
    let xs: Vec<f64> = keep.iter().map(|&i| x_all[i]).collect();
    let xr = spec.zoom_ms.unwrap_or((xs[0], xs[xs.len() - 1]));

    let (cols, rows) = grid_dims(channel_idx.len());
    let mut canvas = Canvas::new(cols * PANEL_W, rows * PANEL_H);
    let mut panels = Vec::new();
    for (p, (&ch, name)) in channel_idx.iter().zip(&spec.channels).enumerate() {
        let traces: Vec<Vec<f64>> = (0..n_classes)
            .map(|c| {
                let full = erp.series(c, ch);
                if spec.zoom_ms.is_some() {
                    keep.iter().map(|&i| full[i]).collect()
                } else {
                    full
                }
            })
            .collect();
        let yr = padded_range(traces.iter().flatten().copied());
        let axes = Axes::in_panel(p % cols, p / cols, xr, yr, 16, PANEL_H as i64 - 40);
        let mut overlays = Vec::new();
        if let Some((a, b)) = spec.fixation_ms {
            let (a, b) = (a.max(xr.0), b.min(xr.1));
            if a < b {
                canvas.fill_rect(axes.px(a), axes.y0, axes.px(b), axes.y0 + axes.h, GREY, 0.45);
            }
            overlays.push(json!({"kind": "fixation", "start_ms": spec.fixation_ms.unwrap().0, "end_ms": spec.fixation_ms.unwrap().1, "style": "grey_fill"}));
        }
        if let Some((a, b)) = spec.cue_ms {
            let (ca, cb) = (a.max(xr.0), b.min(xr.1));
            if ca < cb {
                canvas.stroke_rect(axes.px(ca), axes.y0 + 1, axes.px(cb), axes.y0 + axes.h - 1, BLACK);
            }
            overlays.push(json!({"kind": "cue", "start_ms": a, "end_ms": b, "style": "black_outline"}));
        }
        if yr.0 < 0.0 && yr.1 > 0.0 {
            canvas.line(axes.x0, axes.py(0.0), axes.x0 + axes.w, axes.py(0.0), GREY);
        }
        axes.frame(&mut canvas);
        axes.x_labels(&mut canvas);
        canvas.text(axes.x0, axes.y0 - 12, name, BLACK);
        let mut trace_json = Vec::new();
        for (c, ys) in traces.iter().enumerate() {
            axes.trace(&mut canvas, &xs, ys, CLASS_PALETTE[c]);
            trace_json.push(json!({
                "class": erp.class_labels[c],
                "color": color_hex(CLASS_PALETTE[c]),
                "y_uv": ys,
            }));
        }
        panels.push(json!({
            "channel": name,
            "y_range_uv": [yr.0, yr.1],
            "traces": trace_json,
            "overlays": overlays,
        }));
    }
    let sidecar = json!({
        "kind": "erp",
        "spec": spec,
        "x_ms": xs,
        "x_range_ms": [xr.0, xr.1],
        "trial_counts": erp.trial_counts,
        "panels": panels,
    });
    Figure::new(&canvas, sidecar)
}

/// One panel per run: accuracy on top, loss below, train and validation series.
pub fn curves_figure(runs: &[TrainRun]) -> Result<Figure> {
    if runs.is_empty() {
        return Err(Error::Spec("no runs given".into()));
    }
    if let Some(r) = runs.iter().find(|r| r.epochs.is_empty()) {
        return Err(Error::Spec(format!("run {} has no metrics", r.run_id)));
    }
    let (cols, rows) = grid_dims(runs.len());
    let mut canvas = Canvas::new(cols * PANEL_W, rows * PANEL_H);
    let (train_c, val_c) = (CLASS_PALETTE[0], CLASS_PALETTE[1]);
    let mut panels = Vec::new();
    for (p, run) in runs.iter().enumerate() {
        let xs: Vec<f64> = run.epochs.iter().map(|e| e.epoch as f64).collect();
        let xr = if xs.len() > 1 { (xs[0], xs[xs.len() - 1]) } else { (xs[0] - 0.5, xs[0] + 0.5) };
        let pick = |f: fn(&crate::training::EpochRecord) -> f64| run.epochs.iter().map(f).collect::<Vec<f64>>();
        let (ta, va) = (pick(|e| e.train_acc), pick(|e| e.val_acc));
        let (tl, vl) = (pick(|e| e.train_loss), pick(|e| e.val_loss));
        let acc_r = padded_range(ta.iter().chain(&va).copied().chain([0.0, 1.0]));
        let loss_r = padded_range(tl.iter().chain(&vl).copied());
        let half = (PANEL_H as i64 - 48) / 2;
        let acc_axes = Axes::in_panel(p % cols, p / cols, xr, acc_r, 14, half);
        let loss_axes = Axes::in_panel(p % cols, p / cols, xr, loss_r, 22 + half, half);
        for (axes, a, b) in [(&acc_axes, &ta, &va), (&loss_axes, &tl, &vl)] {
            axes.frame(&mut canvas);
            axes.trace(&mut canvas, &xs, a, train_c);
            axes.trace(&mut canvas, &xs, b, val_c);
        }
        loss_axes.x_labels(&mut canvas);
        canvas.text(acc_axes.x0, acc_axes.y0 - 11, &format!("{} {}", run.subject_id, run.run_id), BLACK);
        panels.push(json!({
            "run_id": run.run_id,
            "subject_id": run.subject_id,
            "metrics": run.epochs,
            "accuracy_range": [acc_r.0, acc_r.1],
            "loss_range": [loss_r.0, loss_r.1],
            "colors": {"train": color_hex(train_c), "val": color_hex(val_c)},
        }));
    }
    Figure::new(&canvas, json!({ "kind": "curves", "panels": panels }))
}
