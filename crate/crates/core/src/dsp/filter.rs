//! Maximally-flat IIR filtering as cascaded second-order sections.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterFamily {
    #[default]
    MaximallyFlat,
}

/// Band-pass specification. `order` is the order of each band edge: the
/// high-pass and low-pass halves are each `order`-th order Butterworth
/// sections, realised as `order / 2` biquads. `low_hz == 0` disables the
/// high-pass half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub family: FilterFamily,
    #[serde(default = "default_true")]
    pub zero_phase: bool,
}

fn default_order() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl FilterSpec {
    pub fn bandpass(low_hz: f64, high_hz: f64) -> Self {
        Self {
            low_hz,
            high_hz,
            order: 4,
            family: FilterFamily::MaximallyFlat,
            zero_phase: true,
        }
    }

    /// 4–45 Hz EEG band.
    pub fn eeg_default() -> Self {
        Self::bandpass(4.0, 45.0)
    }

    /// 0.01–0.2 Hz hemodynamic band.
    pub fn fnirs_default() -> Self {
        Self::bandpass(0.01, 0.2)
    }

    pub fn validate(&self, fs: f64) -> Result<(), DspError> {
        let nyquist = fs / 2.0;
        if !(fs > 0.0) {
            return Err(DspError::Parameter(format!("sampling rate {fs} must be positive")));
        }
        if !(self.low_hz >= 0.0 && self.low_hz < self.high_hz) {
            return Err(DspError::Parameter(format!(
                "band edges must satisfy 0 <= low < high, got {}..{}",
                self.low_hz, self.high_hz
            )));
        }
        if self.high_hz >= nyquist {
            return Err(DspError::Parameter(format!(
                "high cutoff {} Hz is at or above Nyquist ({nyquist} Hz)",
                self.high_hz
            )));
        }
        if self.order < 2 || !self.order.is_multiple_of(2) {
            return Err(DspError::Parameter(format!(
                "filter order must be even and >= 2, got {}",
                self.order
            )));
        }
        Ok(())
    }
}

/// Transposed direct-form II biquad coefficients, `a0` normalised to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant input `x0` pass through without transient.
    fn steady_state(&self, x0: f64) -> (f64, [f64; 2]) {
        let y0 = self.dc_gain() * x0;
        let z2 = self.b[2] * x0 - self.a[1] * y0;
        let z1 = self.b[1] * x0 - self.a[0] * y0 + z2;
        (y0, [z1, z2])
    }

    /// Complex frequency response magnitude at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = -(self.b[1] * s1 + self.b[2] * s2);
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = -(self.a[0] * s1 + self.a[1] * s2);
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Edge {
    Low,
    High,
}

fn butterworth_sections(order: usize, cutoff: f64, fs: f64, edge: Edge) -> Vec<Biquad> {
    let k = (std::f64::consts::PI * cutoff / fs).tan();
    (0..order / 2)
        .map(|i| {
            let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let q = 1.0 / (2.0 * theta.cos());
            let norm = 1.0 / (1.0 + k / q + k * k);
            let a = [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm];
            let b = match edge {
                Edge::Low => {
                    let b0 = k * k * norm;
                    [b0, 2.0 * b0, b0]
                }
                Edge::High => [norm, -2.0 * norm, norm],
            };
            Biquad { b, a }
        })
        .collect()
}

/// Second-order sections for a band-pass spec (high-pass first).
pub fn design_bandpass(spec: &FilterSpec, fs: f64) -> Result<Vec<Biquad>, DspError> {
    spec.validate(fs)?;
    let mut sos = Vec::new();
    if spec.low_hz > 0.0 {
        sos.extend(butterworth_sections(spec.order, spec.low_hz, fs, Edge::High));
    }
    sos.extend(butterworth_sections(spec.order, spec.high_hz, fs, Edge::Low));
    Ok(sos)
}

pub fn design_lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Vec<Biquad>, DspError> {
    if !(cutoff > 0.0 && cutoff < fs / 2.0) || order < 2 || !order.is_multiple_of(2) {
        return Err(DspError::Parameter(format!(
            "invalid low-pass: order {order}, cutoff {cutoff} Hz at {fs} Hz"
        )));
    }
    Ok(butterworth_sections(order, cutoff, fs, Edge::Low))
}

/// Magnitude response of a cascade.
pub fn cascade_magnitude(sos: &[Biquad], f: f64, fs: f64) -> f64 {
    sos.iter().map(|s| s.magnitude(f, fs)).product()
}

/// One causal pass, each section started in steady state for the first sample.
fn sosfilt_steady(sos: &[Biquad], x: &mut [f64]) {
    let Some(&first) = x.first() else {
        return;
    };
    let mut x0 = first;
    for s in sos {
        let (y0, mut z) = s.steady_state(x0);
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b[0] * xin + z[0];
            z[0] = s.b[1] * xin - s.a[0] * y + z[1];
            z[1] = s.b[2] * xin - s.a[1] * y;
            *v = y;
        }
        x0 = y0;
    }
}

/// Forward pass, reverse, second pass, reverse, on an odd-reflection padded copy.
fn forward_backward(sos: &[Biquad], x: ArrayView1<f64>, pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (x_first, x_last) = (x[0], x[n - 1]);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x_first - x[i]);
    }
    ext.extend(x.iter());
    for i in 1..=pad {
        ext.push(2.0 * x_last - x[n - 1 - i]);
    }
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase application. The forward-backward pass is averaged with its
/// time-mirrored counterpart, which makes the result exactly equivariant
/// under time reversal while keeping the squared magnitude response.
pub(crate) fn zero_phase(sos: &[Biquad], x: ArrayView1<f64>, pad: usize) -> Vec<f64> {
    let fwd = forward_backward(sos, x, pad);
    let rev: Vec<f64> = x.iter().rev().copied().collect();
    let mirrored = forward_backward(sos, ArrayView1::from(&rev), pad);
    fwd.iter()
        .zip(mirrored.iter().rev())
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

pub(crate) fn causal(sos: &[Biquad], x: ArrayView1<f64>) -> Vec<f64> {
    let mut v = x.to_vec();
    sosfilt_steady(sos, &mut v);
    v
}

/// Band-pass every channel of a `[C × T]` signal.
pub fn bandpass_filter(signal: &Array2<f64>, spec: &FilterSpec, fs: f64) -> Result<Array2<f64>, DspError> {
    let sos = design_bandpass(spec, fs)?;
    let t = signal.ncols();
    let pad = 3 * spec.order;
    if t <= pad {
        return Err(DspError::Length {
            needed: pad + 1,
            got: t,
        });
    }
    Ok(apply_rows(signal, |row| {
        if spec.zero_phase {
            zero_phase(&sos, row, pad)
        } else {
            causal(&sos, row)
        }
    }))
}

pub(crate) fn apply_rows(signal: &Array2<f64>, f: impl Fn(ArrayView1<f64>) -> Vec<f64>) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = signal.axis_iter(Axis(0)).map(f).collect();
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((signal.nrows(), cols), flat).expect("rows have equal length")
}
