//! Phase-modulation pulses and their power spectra.
//!
//! A pulse is `φ(t) = A [1 − cos(2π f t)]` on `[0, T]`, `T = cycles / f`. Only the
//! resonant part of the carrier couples at the transition frequency, so the
//! spectrum is `|(A/2) ∫₀ᵀ e^{2πi(f−ν)t} dt|² = (A/2)² T² sinc²((ν − f) T)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit;
use crate::grid::FrequencyAxis;

/// Fraction of the spectral mass a grid must capture.
pub const MIN_COVERAGE: f64 = 0.99;
/// Half-width, in units of 1/T, of default spectrum axes and convolution kernels.
pub const SUPPORT_HALF_WIDTH: f64 = 16.0;
/// Main-lobe cut for width fits, as a fraction of the peak.
pub const MAIN_LOBE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Modulation frequency f = ω_m/2π (kHz).
    #[serde(rename = "omega_m_khz")]
    pub frequency_khz: f64,
    #[serde(rename = "amplitude_rad", default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_cycles")]
    pub cycles: u32,
}

fn default_amplitude() -> f64 {
    2.0 * PI / 72.0
}

fn default_cycles() -> u32 {
    8
}

impl PulseSpec {
    pub fn new(frequency_khz: f64, cycles: u32) -> Self {
        Self { frequency_khz, amplitude: default_amplitude(), cycles }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_khz > 0.0) || !self.frequency_khz.is_finite() {
            return Err(Error::params(format!("modulation frequency {} must be positive", self.frequency_khz)));
        }
        if self.cycles == 0 {
            return Err(Error::params("pulse needs at least one cycle"));
        }
        if !self.amplitude.is_finite() || self.amplitude == 0.0 {
            return Err(Error::params("pulse amplitude must be finite and non-zero"));
        }
        Ok(())
    }

    /// Pulse length (ms).
    pub fn duration_ms(&self) -> f64 {
        self.cycles as f64 / self.frequency_khz
    }

    /// Phase φ(t) in radians, `t` in ms.
    pub fn waveform(&self, t: f64) -> f64 {
        if (0.0..=self.duration_ms()).contains(&t) {
            self.amplitude * (1.0 - (2.0 * PI * self.frequency_khz * t).cos())
        } else {
            0.0
        }
    }

    /// Unnormalized power at offset `d = ν − f` from the carrier.
    #[inline]
    pub fn power_at_offset(&self, d: f64) -> f64 {
        let t = self.duration_ms();
        let a = 0.5 * self.amplitude * t;
        a * a * sinc_sq(d * t)
    }

    /// Unnormalized power at frequency `nu` (kHz).
    pub fn power_at(&self, nu: f64) -> f64 {
        self.power_at_offset(nu - self.frequency_khz)
    }

    /// Total power over all frequencies, `(A/2)² T` by Parseval.
    pub fn total_power(&self) -> f64 {
        let a = 0.5 * self.amplitude;
        a * a * self.duration_ms()
    }

    /// Axis centred on the carrier spanning ±16/T with 32 points per 1/T.
    pub fn default_axis(&self) -> FrequencyAxis {
        let t = self.duration_ms();
        let step = 1.0 / (32.0 * t);
        let half = (SUPPORT_HALF_WIDTH * 32.0) as usize;
        FrequencyAxis { start: self.frequency_khz - half as f64 * step, step, len: 2 * half + 1 }
    }

    /// Spectrum on `axis`, normalized to unit Riemann mass.
    pub fn power_spectrum(&self, axis: &FrequencyAxis) -> Result<PowerSpectrum> {
        self.validate()?;
        let freq_khz = axis.values();
        let raw: Vec<f64> = freq_khz.iter().map(|&nu| self.power_at(nu)).collect();
        let mass = raw.iter().sum::<f64>() * axis.step;
        let captured = mass / self.total_power();
        if captured < MIN_COVERAGE {
            return Err(Error::Coverage { captured, required: MIN_COVERAGE });
        }
        let values = raw.into_iter().map(|v| v / mass).collect();
        Ok(PowerSpectrum { freq_khz, values, captured })
    }

    /// Convolution kernel on a grid of spacing `step`: weights at offsets
    /// `k·step`, `|k·step| ≤ 16/T`, summing to one. Index `half` is the carrier.
    pub fn kernel(&self, step: f64) -> Kernel {
        let reach = SUPPORT_HALF_WIDTH / self.duration_ms();
        let half = (reach / step).floor() as usize;
        let mut weights: Vec<f64> =
            (0..=2 * half).map(|k| self.power_at_offset((k as f64 - half as f64) * step)).collect();
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        Kernel { weights, half }
    }

    /// r.m.s. width (Hz) of a Gaussian fit to the main lobe of this pulse's spectrum.
    pub fn spectral_width_hz(&self) -> Result<f64> {
        self.validate()?;
        let axis = self.default_axis();
        let x: Vec<f64> = axis.values().iter().map(|v| v - self.frequency_khz).collect();
        let y: Vec<f64> = x.iter().map(|&d| self.power_at_offset(d)).collect();
        width_hz(&x, &y)
    }
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self::new(6.0, 8)
    }
}

#[inline]
fn sinc_sq(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        let s = (PI * x).sin() / (PI * x);
        s * s
    }
}

fn width_hz(x: &[f64], y: &[f64]) -> Result<f64> {
    match fit::fit_main_lobe(x, y, MAIN_LOBE_FRACTION) {
        Ok(g) => Ok(1000.0 * g.sigma),
        Err(Error::GaussianFit { reason, fallback_width }) => {
            Err(Error::GaussianFit { reason, fallback_width: 1000.0 * fallback_width })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub freq_khz: Vec<f64>,
    /// Unit Riemann mass on `freq_khz`.
    pub values: Vec<f64>,
    /// Fraction of the total pulse power that fell on the grid before normalization.
    pub captured: f64,
}

impl PowerSpectrum {
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * crate::grid::axis_step(&self.freq_khz)
    }

    pub fn peak_frequency(&self) -> f64 {
        self.freq_khz
            .iter()
            .zip(&self.values)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, _)| *f)
            .unwrap_or(f64::NAN)
    }
}

/// Discrete, unit-sum convolution kernel centred at index `half`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub weights: Vec<f64>,
    pub half: usize,
}

impl Kernel {
    /// Convolves `src` (uniform spacing) with the kernel. Each source sample's
    /// kernel is clipped to the grid and renormalized, so the total is conserved.
    pub fn apply(&self, src: &[f64], dst: &mut [f64]) {
        debug_assert_eq!(src.len(), dst.len());
        dst.iter_mut().for_each(|d| *d = 0.0);
        let n = src.len() as isize;
        let h = self.half as isize;
        for (i, &s) in src.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let i = i as isize;
            let lo = (i - h).max(0);
            let hi = (i + h).min(n - 1);
            let klo = (lo - i + h) as usize;
            let khi = (hi - i + h) as usize;
            let w = &self.weights[klo..=khi];
            let norm: f64 = w.iter().sum();
            let scale = s / norm;
            for (d, &k) in dst[lo as usize..=hi as usize].iter_mut().zip(w) {
                *d += scale * k;
            }
        }
    }

    /// Value of the convolution at output index `j` only.
    pub fn apply_at(&self, src: &[f64], j: usize, norms: &[f64]) -> f64 {
        let n = src.len() as isize;
        let h = self.half as isize;
        let j = j as isize;
        let lo = (j - h).max(0);
        let hi = (j + h).min(n - 1);
        (lo..=hi).map(|i| src[i as usize] * self.weights[(j - i + h) as usize] / norms[i as usize]).sum()
    }

    /// Per-source clipped kernel sums for a grid of length `n`, used by [`Kernel::apply_at`].
    pub fn clip_norms(&self, n: usize) -> Vec<f64> {
        let h = self.half as isize;
        let n = n as isize;
        (0..n)
            .map(|i| {
                let lo = (i - h).max(0);
                let hi = (i + h).min(n - 1);
                self.weights[(lo - i + h) as usize..=(hi - i + h) as usize].iter().sum()
            })
            .collect()
    }
}

/// r.m.s. width (Hz) of a Gaussian fit to the main lobe of the pump ⊛ probe spectrum,
/// both re-centred on zero offset.
pub fn instrumental_width(pump: &PulseSpec, probe: &PulseSpec) -> Result<f64> {
    pump.validate()?;
    probe.validate()?;
    let (x, y) = combined_response(pump, probe);
    width_hz(&x, &y)
}

/// The pump ⊛ probe power spectrum on a grid fine enough for the narrower pulse.
/// Returns offsets (kHz) and unit-sum values.
pub fn combined_response(pump: &PulseSpec, probe: &PulseSpec) -> (Vec<f64>, Vec<f64>) {
    let (tp, tq) = (pump.duration_ms(), probe.duration_ms());
    let step = 1.0 / (32.0 * tp.max(tq));
    let reach = SUPPORT_HALF_WIDTH * (1.0 / tp + 1.0 / tq);
    let half = (reach / step).ceil() as usize;
    let n = 2 * half + 1;
    let offsets: Vec<f64> = (0..n).map(|i| (i as f64 - half as f64) * step).collect();
    let kp = pump.kernel(step);
    let mut src = vec![0.0; n];
    for (k, w) in kp.weights.iter().enumerate() {
        src[half + k - kp.half] = *w;
    }
    let mut out = vec![0.0; n];
    probe.kernel(step).apply(&src, &mut out);
    (offsets, out)
}
