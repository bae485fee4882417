//! Butterworth IIR design (analog prototype → frequency transform →
//! bilinear transform) realized as cascaded second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
}

fn default_order() -> usize {
    4
}

fn default_zero_phase() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// One cutoff for low/high-pass, `[low, high]` for band-pass.
    pub cutoff_hz: Vec<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_zero_phase")]
    pub zero_phase: bool,
}

impl FilterSpec {
    pub fn lowpass(cutoff_hz: f64) -> Self {
        Self { kind: FilterKind::Lowpass, cutoff_hz: vec![cutoff_hz], order: 4, zero_phase: true }
    }

    pub fn highpass(cutoff_hz: f64) -> Self {
        Self { kind: FilterKind::Highpass, cutoff_hz: vec![cutoff_hz], order: 4, zero_phase: true }
    }

    pub fn bandpass(low_hz: f64, high_hz: f64) -> Self {
        Self { kind: FilterKind::Bandpass, cutoff_hz: vec![low_hz, high_hz], order: 4, zero_phase: true }
    }

    pub fn validate(&self, sampling_rate_hz: f64) -> Result<()> {
        let nyquist = sampling_rate_hz / 2.0;
        if self.order == 0 {
            return Err(Error::Spec("filter order must be positive".into()));
        }
        let expected = match self.kind {
            FilterKind::Lowpass | FilterKind::Highpass => 1,
            FilterKind::Bandpass => 2,
        };
        if self.cutoff_hz.len() != expected {
            return Err(Error::Spec(format!(
                "{:?} takes {expected} cutoff(s), got {:?}",
                self.kind, self.cutoff_hz
            )));
        }
        for &f in &self.cutoff_hz {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::Spec(format!("cutoff must be positive, got {f}")));
            }
            if f >= nyquist {
                return Err(Error::Spec(format!("cutoff {f} Hz is not below Nyquist ({nyquist} Hz)")));
            }
        }
        if self.kind == FilterKind::Bandpass && self.cutoff_hz[0] >= self.cutoff_hz[1] {
            return Err(Error::Spec(format!("band-pass needs low < high, got {:?}", self.cutoff_hz)));
        }
        Ok(())
    }

    /// Compact token form used on the command line: `lp:40`, `hp:4`, `bp:8-30`.
    pub fn parse_token(token: &str) -> Result<Self> {
        let (kind, rest) = token
            .split_once(':')
            .ok_or_else(|| Error::Spec(format!("filter token {token:?} is not kind:cutoff")))?;
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Spec(format!("bad cutoff {s:?}")));
        match kind {
            "lp" => Ok(Self::lowpass(num(rest)?)),
            "hp" => Ok(Self::highpass(num(rest)?)),
            "bp" => {
                let (lo, hi) = rest
                    .split_once('-')
                    .ok_or_else(|| Error::Spec(format!("band-pass token {token:?} needs low-high")))?;
                Ok(Self::bandpass(num(lo)?, num(hi)?))
            }
            other => Err(Error::Spec(format!("unknown filter kind {other:?}"))),
        }
    }
}

/// One direct-form-II-transposed biquad; `a[0]` is always 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// State that makes a constant unit input produce a constant output.
    fn steady_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a[2] * g]
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub sampling_rate_hz: f64,
}

impl SosFilter {
    pub fn design(spec: &FilterSpec, sampling_rate_hz: f64) -> Result<Self> {
        spec.validate(sampling_rate_hz)?;
        let n = spec.order;
        let fs2 = 2.0 * sampling_rate_hz;
        let warp = |f: f64| fs2 * (PI * f / sampling_rate_hz).tan();

        // analog prototype, unit cutoff
        let proto: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
            .collect();

        let (zeros, poles, gain) = match spec.kind {
            FilterKind::Lowpass => {
                let wo = warp(spec.cutoff_hz[0]);
                let poles: Vec<Complex64> = proto.iter().map(|p| p * wo).collect();
                (Vec::new(), poles, wo.powi(n as i32))
            }
            FilterKind::Highpass => {
                let wo = warp(spec.cutoff_hz[0]);
                let poles: Vec<Complex64> = proto.iter().map(|p| wo / p).collect();
                let prod: Complex64 = proto.iter().map(|p| -p).product();
                (vec![Complex64::new(0.0, 0.0); n], poles, (1.0 / prod).re)
            }
            FilterKind::Bandpass => {
                let (wl, wh) = (warp(spec.cutoff_hz[0]), warp(spec.cutoff_hz[1]));
                let bw = wh - wl;
                let wo2 = wl * wh;
                let mut poles = Vec::with_capacity(2 * n);
                for p in &proto {
                    let lp = p * (bw / 2.0);
                    let root = (lp * lp - wo2).sqrt();
                    poles.push(lp + root);
                    poles.push(lp - root);
                }
                (vec![Complex64::new(0.0, 0.0); n], poles, bw.powi(n as i32))
            }
        };

        // bilinear transform; zeros at infinity land on z = -1
        let to_z = |s: &Complex64| (fs2 + s) / (fs2 - s);
        let mut zd: Vec<Complex64> = zeros.iter().map(to_z).collect();
        zd.resize(poles.len(), Complex64::new(-1.0, 0.0));
        let pd: Vec<Complex64> = poles.iter().map(to_z).collect();
        let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
        let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
        let kd = gain * (num / den).re;

        let mut sections = pair_into_sections(&zd, &pd);
        for v in sections[0].b.iter_mut() {
            *v *= kd;
        }
        Ok(Self { sections, sampling_rate_hz })
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sampling_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Equivalent single-stage coefficient count, used for edge padding.
    pub fn equivalent_length(&self) -> usize {
        2 * self.sections.len() + 1
    }

    pub fn default_padlen(&self) -> usize {
        3 * self.equivalent_length()
    }

    fn run(&self, x: &mut [f64], initial_input: Option<f64>) {
        let mut scale = initial_input.unwrap_or(0.0);
        for s in &self.sections {
            let [mut z0, mut z1] = match initial_input {
                Some(_) => {
                    let ss = s.steady_state();
                    [ss[0] * scale, ss[1] * scale]
                }
                None => [0.0, 0.0],
            };
            scale *= s.dc_gain();
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z0;
                z0 = s.b[1] * xin - s.a[1] * y + z1;
                z1 = s.b[2] * xin - s.a[2] * y;
                *v = y;
            }
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, None);
        y
    }

    /// Forward-backward filtering with odd-reflection edge padding and
    /// steady-state initial conditions. Zero group delay, |H|² magnitude.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.default_padlen().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.run(&mut ext, Some(first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, Some(first));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    pub fn apply(&self, x: &[f64], zero_phase: bool) -> Vec<f64> {
        if zero_phase {
            self.filtfilt(x)
        } else {
            self.filter(x)
        }
    }
}

const REAL_TOL: f64 = 1e-12;

fn pair_into_sections(zeros: &[Complex64], poles: &[Complex64]) -> Vec<Biquad> {
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > REAL_TOL).collect();
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= REAL_TOL).map(|p| p.re).collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.total_cmp(b));

    let mut denominators: Vec<[f64; 3]> =
        complex.iter().map(|p| [1.0, -2.0 * p.re, p.norm_sqr()]).collect();
    for pair in real.chunks(2) {
        denominators.push(match pair {
            [p1, p2] => [1.0, -(p1 + p2), p1 * p2],
            [p] => [1.0, -p, 0.0],
            _ => unreachable!(),
        });
    }

    // Butterworth digital zeros are all real (±1). Pair outermost first so a
    // band-pass gets one +1 and one -1 per section.
    let mut zr: Vec<f64> = zeros.iter().map(|z| z.re).collect();
    zr.sort_by(|a, b| a.total_cmp(b));
    let mut lo = 0usize;
    let mut hi = zr.len();
    denominators
        .into_iter()
        .map(|a| {
            let order = if a[2] == 0.0 { 1 } else { 2 };
            let b = if order == 2 && hi - lo >= 2 {
                let (z1, z2) = (zr[lo], zr[hi - 1]);
                lo += 1;
                hi -= 1;
                [1.0, -(z1 + z2), z1 * z2]
            } else if hi > lo {
                let z = zr[lo];
                lo += 1;
                [1.0, -z, 0.0]
            } else {
                [1.0, 0.0, 0.0]
            };
            Biquad { b, a }
        })
        .collect()
}
