use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform, ascending frequency axis (kHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyAxis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl FrequencyAxis {
    /// Axis from `start` to `stop` inclusive. `stop - start` must be a whole number of steps.
    pub fn span(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(stop > start) || !start.is_finite() || !stop.is_finite() {
            return Err(Error::input(format!("bad axis {start}..{stop} step {step}")));
        }
        let n = (stop - start) / step;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-6 {
            return Err(Error::input(format!(
                "axis {start}..{stop} is not a whole number of {step} steps"
            )));
        }
        Ok(Self { start, step, len: rounded as usize + 1 })
    }

    pub fn stop(&self) -> f64 {
        self.at(self.len - 1)
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.at(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.start - 1e-9 * self.step && x <= self.stop() + 1e-9 * self.step
    }

    /// Index of the node closest to `x`, if `x` lies within the axis.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let i = ((x - self.start) / self.step).round();
        Some((i.max(0.0) as usize).min(self.len - 1))
    }

    /// Linear interpolation weights `(i, 1-t, t)` for evaluating at `x` from nodes `i` and `i+1`.
    pub fn bracket(&self, x: f64) -> Option<(usize, f64, f64)> {
        if !self.contains(x) {
            return None;
        }
        let u = ((x - self.start) / self.step).clamp(0.0, (self.len - 1) as f64);
        let i = (u.floor() as usize).min(self.len.saturating_sub(2));
        let t = u - i as f64;
        Some((i, 1.0 - t, t))
    }
}


/// What a [`SpectrumGrid2D`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Measured,
    BareMarginal,
    ConvolvedMarginal,
    HoleDifference,
    IncrementDensity,
}

impl SpectrumKind {
    pub fn is_density(self) -> bool {
        !matches!(self, SpectrumKind::Measured | SpectrumKind::HoleDifference)
    }
}

/// Values on a pump-frequency x probe-frequency grid, one row per pump frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumGrid2D {
    pub pump_khz: Vec<f64>,
    pub probe_khz: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub delay_ms: f64,
    pub kind: SpectrumKind,
}

impl SpectrumGrid2D {
    pub fn new(
        pump_khz: Vec<f64>,
        probe_khz: Vec<f64>,
        values: Vec<Vec<f64>>,
        delay_ms: f64,
        kind: SpectrumKind,
    ) -> Result<Self> {
        let g = Self { pump_khz, probe_khz, values, delay_ms, kind };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, ax) in [("pump", &self.pump_khz), ("probe", &self.probe_khz)] {
            if ax.is_empty() || ax.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::input(format!("{name} axis must be non-empty and strictly ascending")));
            }
        }
        if self.values.len() != self.pump_khz.len()
            || self.values.iter().any(|r| r.len() != self.probe_khz.len())
        {
            return Err(Error::input("value array does not match axes"));
        }
        for &v in self.values.iter().flatten() {
            if !v.is_finite() {
                return Err(Error::input("non-finite spectrum value"));
            }
            if self.kind.is_density() && v < 0.0 {
                return Err(Error::input("negative density value"));
            }
        }
        Ok(())
    }

    /// Riemann mass on the (uniform) grid.
    pub fn mass(&self) -> f64 {
        let dp = axis_step(&self.pump_khz);
        let dq = axis_step(&self.probe_khz);
        self.values.iter().flatten().sum::<f64>() * dp * dq
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().flatten().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn len(&self) -> usize {
        self.pump_khz.len() * self.probe_khz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row of the grid closest to the pump frequency.
    pub fn row_near(&self, pump_khz: f64) -> Option<&[f64]> {
        let (lo, hi) = (self.pump_khz[0], *self.pump_khz.last()?);
        if pump_khz < lo || pump_khz > hi {
            return None;
        }
        let i = self
            .pump_khz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - pump_khz).abs().total_cmp(&(b.1 - pump_khz).abs()))?
            .0;
        Some(&self.values[i])
    }

    /// Long-format CSV: pump_khz, probe_khz, value.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pump_khz", "probe_khz", "value"])?;
        for (p, row) in self.pump_khz.iter().zip(&self.values) {
            for (q, v) in self.probe_khz.iter().zip(row) {
                out.write_record([fmt_sig(*p), fmt_sig(*q), fmt_sig(*v)])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// A one-dimensional spectrum on a frequency axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum1D {
    pub freq_khz: Vec<f64>,
    pub values: Vec<f64>,
}

impl Spectrum1D {
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * axis_step(&self.freq_khz)
    }

    pub fn mean(&self) -> f64 {
        let m: f64 = self.values.iter().sum();
        self.freq_khz.iter().zip(&self.values).map(|(x, v)| x * v).sum::<f64>() / m
    }

    pub fn rms_width(&self) -> f64 {
        let m: f64 = self.values.iter().sum();
        let mean = self.mean();
        (self.freq_khz.iter().zip(&self.values).map(|(x, v)| (x - mean).powi(2) * v).sum::<f64>() / m).sqrt()
    }

    pub fn peak(&self) -> (f64, f64) {
        self.freq_khz
            .iter()
            .zip(&self.values)
            .fold((f64::NAN, f64::NEG_INFINITY), |acc, (&x, &v)| if v > acc.1 { (x, v) } else { acc })
    }
}

pub(crate) fn axis_step(ax: &[f64]) -> f64 {
    if ax.len() < 2 {
        1.0
    } else {
        (ax[ax.len() - 1] - ax[0]) / (ax.len() - 1) as f64
    }
}

/// Rounds to 9 significant digits and prints the shortest representation of the result.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub fn fmt_sig(x: f64) -> String {
    format!("{}", round_sig(x))
}

/// Pretty JSON with every float rounded to 9 significant digits.
pub fn to_json_sig<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

fn round_json(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x))) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}
