//! Model spectra: convolved marginals, probe-alone spectra, hole slices and
//! synthetic datasets.
//!
//! Everything is evaluated on a fine *model* axis and, for datasets, sampled at
//! the points of a coarser *data* axis that must lie on the model axis.
//! Convolution is separable: the pump kernel acts along the pump (first) axis,
//! the probe kernel along the probe axis. Each source sample's kernel is clipped
//! to the grid and renormalized, so convolution conserves mass exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::{Node, SkewNormal, SkewNormalParams};
use crate::error::{Error, Result};
use crate::fit;
use crate::grid::{FrequencyAxis, Spectrum1D, SpectrumGrid2D, SpectrumKind};
use crate::pulses::{self, Kernel, PulseSpec};

/// Delays of the three measured joint spectra (ms).
pub const DELAYS_MS: [f64; 3] = [2.0, 3.0, 5.0];
/// Minimum bare-marginal mass the model axis must hold.
pub const MIN_GRID_MASS: f64 = 1.0 - 1e-3;

pub fn default_model_axis() -> FrequencyAxis {
    FrequencyAxis { start: 3.5, step: 0.05, len: 131 }
}

pub fn default_data_axis() -> FrequencyAxis {
    FrequencyAxis { start: 4.0, step: 0.25, len: 21 }
}

/// Node pair whose convolved marginal models the joint spectrum at `delay_ms`.
/// The 3 ms spectrum maps to (ω2, ω5) by stationarity.
pub fn delay_pair(delay_ms: f64) -> Result<(Node, Node)> {
    match delay_ms {
        d if (d - 2.0).abs() < 1e-9 => Ok((Node::T0, Node::T2)),
        d if (d - 3.0).abs() < 1e-9 => Ok((Node::T2, Node::T5)),
        d if (d - 5.0).abs() < 1e-9 => Ok((Node::T0, Node::T5)),
        d => Err(Error::input(format!("no node pair models a {d} ms delay"))),
    }
}

/// Separable pump/probe convolution on one square model axis.
#[derive(Debug, Clone)]
pub struct Convolver {
    axis: FrequencyAxis,
    pump: Kernel,
    probe: Kernel,
    pump_norms: Vec<f64>,
    probe_norms: Vec<f64>,
    probe_inv_norms: Vec<f64>,
}

impl Convolver {
    pub fn new(axis: FrequencyAxis, pump: &PulseSpec, probe: &PulseSpec) -> Result<Self> {
        pump.validate()?;
        probe.validate()?;
        let pk = pump.kernel(axis.step);
        let qk = probe.kernel(axis.step);
        let probe_norms = qk.clip_norms(axis.len);
        Ok(Self {
            probe_inv_norms: probe_norms.iter().map(|v| 1.0 / v).collect(),
            probe_norms,
            pump_norms: pk.clip_norms(axis.len),
            pump: pk,
            probe: qk,
            axis,
        })
    }

    pub fn axis(&self) -> &FrequencyAxis {
        &self.axis
    }

    /// Full convolution of a row-major `n x n` grid.
    pub fn convolve_2d(&self, m: &[f64]) -> Vec<f64> {
        let n = self.axis.len;
        let mut tmp = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        let mut out_col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = m[i * n + j];
            }
            self.pump.apply(&col, &mut out_col);
            for i in 0..n {
                tmp[i * n + j] = out_col[i];
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            self.probe.apply(&tmp[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        out
    }

    /// Convolution evaluated only at (`rows[k]`, `cols[l]`), row-major `rows.len() x cols.len()`.
    /// `scratch` must hold `rows.len() * n` values.
    pub fn convolve_2d_at(&self, m: &[f64], rows: &[usize], cols: &[usize], scratch: &mut [f64], out: &mut [f64]) {
        let n = self.axis.len;
        let (ph, qh) = (self.pump.half as isize, self.probe.half as isize);
        for (r, &pi) in rows.iter().enumerate() {
            let acc = &mut scratch[r * n..(r + 1) * n];
            acc.iter_mut().for_each(|v| *v = 0.0);
            let pi = pi as isize;
            let lo = (pi - ph).max(0) as usize;
            let hi = (pi + ph).min(n as isize - 1) as usize;
            for x in lo..=hi {
                let w = self.pump.weights[(pi - x as isize + ph) as usize] / self.pump_norms[x];
                let src = &m[x * n..(x + 1) * n];
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += w * s;
                }
            }
        }
        for (r, _) in rows.iter().enumerate() {
            let acc = &mut scratch[r * n..(r + 1) * n];
            for (a, inv) in acc.iter_mut().zip(&self.probe_inv_norms) {
                *a *= inv;
            }
            let acc = &*acc;
            for (c, &qj) in cols.iter().enumerate() {
                let qj = qj as isize;
                let lo = (qj - qh).max(0) as usize;
                let hi = (qj + qh).min(n as isize - 1) as usize;
                // symmetric kernel: weight for source y is weights[qh - qj + y]
                let k0 = (qh - qj + lo as isize) as usize;
                let w = &self.probe.weights[k0..k0 + (hi - lo + 1)];
                out[r * cols.len() + c] = acc[lo..=hi].iter().zip(w).map(|(a, k)| a * k).sum();
            }
        }
    }

    /// Probe-kernel convolution of a 1D spectrum.
    pub fn convolve_probe(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        self.probe.apply(m, &mut out);
        out
    }

    pub fn convolve_probe_at(&self, m: &[f64], j: usize) -> f64 {
        self.probe.apply_at(m, j, &self.probe_norms)
    }
}

fn grid_from_flat(axis: &FrequencyAxis, flat: Vec<f64>, delay_ms: f64, kind: SpectrumKind) -> Result<SpectrumGrid2D> {
    let values = flat.chunks(axis.len).map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
    SpectrumGrid2D::new(axis.values(), axis.values(), values, delay_ms, kind)
}

fn bare_flat(sn: &SkewNormal, (a, b): (Node, Node), axis: &FrequencyAxis) -> Result<Vec<f64>> {
    let m = sn.marginal_2d(a, b)?.on_grid(axis, axis)?;
    let flat: Vec<f64> = m.into_iter().flatten().collect();
    let mass = flat.iter().sum::<f64>() * axis.step * axis.step;
    if mass < MIN_GRID_MASS {
        return Err(Error::Coverage { captured: mass, required: MIN_GRID_MASS });
    }
    Ok(flat)
}

fn pair_delay(sn: &SkewNormal, (a, b): (Node, Node)) -> f64 {
    let t = sn.params().node_times;
    (t[b.index()] - t[a.index()]).abs()
}

/// Bare bivariate marginal M on `axis` x `axis` (rows: first node of `keep`).
pub fn bare_marginal(params: &SkewNormalParams, keep: (Node, Node), axis: &FrequencyAxis) -> Result<SpectrumGrid2D> {
    let sn = SkewNormal::new(*params)?;
    let flat = bare_flat(&sn, keep, axis)?;
    grid_from_flat(axis, flat, pair_delay(&sn, keep), SpectrumKind::BareMarginal)
}

/// Convolved marginal g = M ⊛ pump ⊛ probe on `axis` x `axis`.
pub fn convolved_marginal(
    params: &SkewNormalParams,
    keep: (Node, Node),
    pump: &PulseSpec,
    probe: &PulseSpec,
    axis: &FrequencyAxis,
) -> Result<SpectrumGrid2D> {
    let sn = SkewNormal::new(*params)?;
    let conv = Convolver::new(*axis, pump, probe)?;
    let flat = conv.convolve_2d(&bare_flat(&sn, keep, axis)?);
    grid_from_flat(axis, flat, pair_delay(&sn, keep), SpectrumKind::ConvolvedMarginal)
}

/// Univariate marginal of `node` convolved with the probe spectrum.
pub fn probe_alone_spectrum(
    params: &SkewNormalParams,
    node: Node,
    probe: &PulseSpec,
    axis: &FrequencyAxis,
) -> Result<Spectrum1D> {
    let sn = SkewNormal::new(*params)?;
    let m = sn.marginal_1d(node).on_axis(axis)?;
    let conv = Convolver::new(*axis, probe, probe)?;
    let values = conv.convolve_probe(&m).into_iter().map(|v| v.max(0.0)).collect();
    Ok(Spectrum1D { freq_khz: axis.values(), values })
}

/// Shape-normalized model of the ΔP1 hole burnt at `pump_khz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleSpectrum {
    pub pump_khz: f64,
    pub delay_ms: f64,
    pub probe_khz: Vec<f64>,
    /// Unit peak, or all zeros when `empty`.
    pub values: Vec<f64>,
    /// The pump frequency lies outside the grid or where the joint density vanishes.
    pub empty: bool,
}

/// Relative level below which a conditional slice counts as empty.
const EMPTY_HOLE_LEVEL: f64 = 1e-12;

fn hole_from_grid(g: &SpectrumGrid2D, axis: &FrequencyAxis, pump_khz: f64, delay_ms: f64) -> HoleSpectrum {
    let empty = |probe_khz: Vec<f64>| HoleSpectrum {
        pump_khz,
        delay_ms,
        values: vec![0.0; probe_khz.len()],
        probe_khz,
        empty: true,
    };
    let Some((i, a, b)) = axis.bracket(pump_khz) else {
        return empty(g.probe_khz.clone());
    };
    let row: Vec<f64> = if i + 1 < g.values.len() {
        g.values[i].iter().zip(&g.values[i + 1]).map(|(x, y)| a * x + b * y).collect()
    } else {
        g.values[i].clone()
    };
    let peak = row.iter().cloned().fold(0.0, f64::max);
    if !(peak > EMPTY_HOLE_LEVEL * g.peak()) {
        return empty(g.probe_khz.clone());
    }
    HoleSpectrum { pump_khz, delay_ms, probe_khz: g.probe_khz.clone(), values: row.iter().map(|v| v / peak).collect(), empty: false }
}

/// Hole spectrum at `pump_khz` for one of the delays in [`DELAYS_MS`].
pub fn hole_spectrum(
    params: &SkewNormalParams,
    pump_khz: f64,
    delay_ms: f64,
    pump: &PulseSpec,
    probe: &PulseSpec,
    axis: &FrequencyAxis,
) -> Result<HoleSpectrum> {
    let g = convolved_marginal(params, delay_pair(delay_ms)?, pump, probe, axis)?;
    Ok(hole_from_grid(&g, axis, pump_khz, delay_ms))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleWidth {
    pub delay_ms: f64,
    pub width_hz: f64,
    /// The Gaussian fit failed and `width_hz` is the raw second-moment width.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleWidthCurve {
    pub pump_khz: f64,
    pub points: Vec<HoleWidth>,
    /// Width of the pump ⊛ probe response, the floor for any hole.
    pub instrumental_hz: f64,
}

impl HoleWidthCurve {
    pub fn is_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].width_hz > w[0].width_hz)
    }

    /// CSV: delay_ms, width_hz, fallback, instrumental_hz.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["delay_ms", "width_hz", "fallback", "instrumental_hz"])?;
        for p in &self.points {
            out.write_record([
                crate::grid::fmt_sig(p.delay_ms),
                crate::grid::fmt_sig(p.width_hz),
                (p.fallback as u8).to_string(),
                crate::grid::fmt_sig(self.instrumental_hz),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// r.m.s. width (Hz) of a Gaussian fit to the hole's main lobe; `(width, fallback)`.
pub fn hole_width(hole: &HoleSpectrum) -> Result<(f64, bool)> {
    if hole.empty {
        return Err(Error::input(format!("no hole at {} kHz", hole.pump_khz)));
    }
    match fit::fit_main_lobe(&hole.probe_khz, &hole.values, pulses::MAIN_LOBE_FRACTION) {
        Ok(g) => Ok((1000.0 * g.sigma, false)),
        Err(Error::GaussianFit { fallback_width, .. }) => Ok((1000.0 * fallback_width, true)),
        Err(e) => Err(e),
    }
}

/// Hole widths at 2, 3 and 5 ms.
pub fn hole_width_curve(
    params: &SkewNormalParams,
    pump_khz: f64,
    pump: &PulseSpec,
    probe: &PulseSpec,
    axis: &FrequencyAxis,
) -> Result<HoleWidthCurve> {
    let points = DELAYS_MS
        .iter()
        .map(|&d| {
            let hole = hole_spectrum(params, pump_khz, d, pump, probe, axis)?;
            let (width_hz, fallback) = hole_width(&hole)?;
            Ok(HoleWidth { delay_ms: d, width_hz, fallback })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HoleWidthCurve { pump_khz, points, instrumental_hz: pulses::instrumental_width(pump, probe)? })
}

/// Where the model is evaluated and where the data live.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub model: FrequencyAxis,
    pub data: FrequencyAxis,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { model: default_model_axis(), data: default_data_axis() }
    }
}

impl GridSpec {
    /// Model-axis index of every data point.
    pub fn data_indices(&self) -> Result<Vec<usize>> {
        self.data
            .values()
            .into_iter()
            .map(|x| {
                let i = self.model.nearest(x).ok_or_else(|| Error::input(format!("data point {x} outside model axis")))?;
                if (self.model.at(i) - x).abs() > 1e-9 * self.model.step.max(1.0) {
                    return Err(Error::input(format!("data point {x} is not a model-axis node")));
                }
                Ok(i)
            })
            .collect()
    }
}

/// How the bare marginals are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalRoute {
    /// Panel quadrature over the dropped coordinates.
    Quadrature,
    /// Gaussian-conditional closed form; same function, much cheaper.
    ClosedForm,
}

/// Model values at the data points: three joint grids (delays 2, 3, 5 ms, row-major
/// `data x data`) and three probe-alone spectra (nodes 0, 2, 5).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelValues {
    pub grids: [Vec<f64>; 3],
    pub spectra: [Vec<f64>; 3],
}

/// Reusable forward model for one grid specification and pulse pair.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    grid: GridSpec,
    conv: Convolver,
    idx: Vec<usize>,
}

/// Per-evaluation buffers for [`ForwardModel::evaluate_into`].
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    bare: Vec<f64>,
    scratch: Vec<f64>,
    line: Vec<f64>,
}

impl ForwardModel {
    pub fn new(grid: GridSpec, pump: &PulseSpec, probe: &PulseSpec) -> Result<Self> {
        let idx = grid.data_indices()?;
        Ok(Self { conv: Convolver::new(grid.model, pump, probe)?, grid, idx })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn evaluate(&self, sn: &SkewNormal, route: MarginalRoute) -> Result<ModelValues> {
        let nd = self.idx.len();
        let mut out = ModelValues { grids: std::array::from_fn(|_| vec![0.0; nd * nd]), spectra: std::array::from_fn(|_| vec![0.0; nd]) };
        self.evaluate_into(sn, route, &mut Workspace::default(), &mut out)?;
        Ok(out)
    }

    pub fn evaluate_into(&self, sn: &SkewNormal, route: MarginalRoute, ws: &mut Workspace, out: &mut ModelValues) -> Result<()> {
        let ax = &self.grid.model;
        let n = ax.len;
        let nd = self.idx.len();
        ws.bare.resize(n * n, 0.0);
        ws.scratch.resize(nd * n, 0.0);
        for (k, &d) in DELAYS_MS.iter().enumerate() {
            let (a, b) = delay_pair(d)?;
            match route {
                MarginalRoute::Quadrature => {
                    let m = sn.marginal_2d(a, b)?.on_grid(ax, ax)?;
                    for (dst, v) in ws.bare.iter_mut().zip(m.into_iter().flatten()) {
                        *dst = v;
                    }
                }
                MarginalRoute::ClosedForm => sn.closed_marginal_2d(a, b)?.fill_grid(ax, ax, &mut ws.bare),
            }
            out.grids[k].resize(nd * nd, 0.0);
            self.conv.convolve_2d_at(&ws.bare, &self.idx, &self.idx, &mut ws.scratch, &mut out.grids[k]);
        }
        for (k, node) in Node::ALL.into_iter().enumerate() {
            ws.line.resize(n, 0.0);
            match route {
                MarginalRoute::Quadrature => {
                    let m = sn.marginal_1d(node).on_axis(ax)?;
                    ws.line.copy_from_slice(&m);
                }
                MarginalRoute::ClosedForm => {
                    let m = sn.closed_marginal_1d(node);
                    for (i, v) in ws.line.iter_mut().enumerate() {
                        *v = m.density(ax.at(i));
                    }
                }
            }
            out.spectra[k].resize(nd, 0.0);
            for (c, &j) in self.idx.iter().enumerate() {
                out.spectra[k][c] = self.conv.convolve_probe_at(&ws.line, j);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub noise_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<SkewNormalParams>,
}

/// Three joint spectra (2, 3, 5 ms) and three probe-alone spectra (nodes 0, 2, 5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub grid: GridSpec,
    pub delays_ms: Vec<f64>,
    pub joint: Vec<SpectrumGrid2D>,
    pub probe_alone: Vec<Spectrum1D>,
    pub pump: PulseSpec,
    pub probe: PulseSpec,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.joint.len() != 3 || self.probe_alone.len() != 3 {
            return Err(Error::input("dataset needs three joint and three probe-alone spectra"));
        }
        let axis = self.grid.data.values();
        for (g, d) in self.joint.iter().zip(DELAYS_MS) {
            g.validate()?;
            if (g.delay_ms - d).abs() > 1e-9 {
                return Err(Error::input(format!("joint spectrum has delay {} ms, expected {d}", g.delay_ms)));
            }
            if !same_axis(&g.pump_khz, &axis) || !same_axis(&g.probe_khz, &axis) {
                return Err(Error::input("joint spectrum axes differ from the data axis"));
            }
        }
        for s in &self.probe_alone {
            if !same_axis(&s.freq_khz, &axis) || s.values.len() != axis.len() {
                return Err(Error::input("probe-alone spectrum axis differs from the data axis"));
            }
        }
        self.grid.data_indices()?;
        Ok(())
    }

    /// Measured values in [`ModelValues`] layout.
    pub fn observed(&self) -> ModelValues {
        ModelValues {
            grids: std::array::from_fn(|k| self.joint[k].values.iter().flatten().copied().collect()),
            spectra: std::array::from_fn(|k| self.probe_alone[k].values.clone()),
        }
    }

    /// Number of data points entering the residual sum.
    pub fn point_count(&self) -> usize {
        self.joint.iter().map(|g| g.len()).sum::<usize>() + self.probe_alone.iter().map(|s| s.values.len()).sum::<usize>()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, crate::grid::to_json_sig(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let d: Dataset = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        d.validate()?;
        Ok(d)
    }

    /// One CSV per joint spectrum (`joint_<delay>ms.csv`) and one for the probe-alone spectra.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for g in &self.joint {
            g.write_csv(std::fs::File::create(dir.join(format!("joint_{}ms.csv", g.delay_ms)))?)?;
        }
        let mut w = csv::Writer::from_path(dir.join("probe_alone.csv"))?;
        w.write_record(["node_ms", "probe_khz", "value"])?;
        for (s, t) in self.probe_alone.iter().zip([0.0, 2.0, 5.0]) {
            for (f, v) in s.freq_khz.iter().zip(&s.values) {
                w.write_record([crate::grid::fmt_sig(t), crate::grid::fmt_sig(*f), crate::grid::fmt_sig(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn same_axis(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
}

/// Synthetic dataset from `truth`. Noise is Gaussian with standard deviation
/// `noise_sigma` times the peak of each spectrum.
pub fn synth_dataset(
    truth: &SkewNormalParams,
    pump: &PulseSpec,
    probe: &PulseSpec,
    grid: &GridSpec,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::input(format!("noise level {noise_sigma} must be non-negative")));
    }
    let sn = SkewNormal::new(*truth)?;
    let model = ForwardModel::new(*grid, pump, probe)?;
    let mut values = model.evaluate(&sn, MarginalRoute::Quadrature)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut add_noise = |v: &mut [f64]| {
        let sd = noise_sigma * v.iter().cloned().fold(0.0, f64::max);
        for x in v.iter_mut() {
            let z: f64 = std_normal.sample(&mut rng);
            *x += sd * z;
        }
    };
    if noise_sigma > 0.0 {
        values.grids.iter_mut().for_each(|g| add_noise(g));
        values.spectra.iter_mut().for_each(|s| add_noise(s));
    }
    let axis = grid.data.values();
    let nd = axis.len();
    let joint = values
        .grids
        .iter()
        .zip(DELAYS_MS)
        .map(|(g, d)| {
            SpectrumGrid2D::new(axis.clone(), axis.clone(), g.chunks(nd).map(<[f64]>::to_vec).collect(), d, SpectrumKind::Measured)
        })
        .collect::<Result<Vec<_>>>()?;
    let probe_alone = values.spectra.iter().map(|s| Spectrum1D { freq_khz: axis.clone(), values: s.clone() }).collect();
    Ok(Dataset {
        grid: *grid,
        delays_ms: DELAYS_MS.to_vec(),
        joint,
        probe_alone,
        pump: *pump,
        probe: *probe,
        meta: DatasetMeta { seed, noise_sigma, truth: Some(*truth) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_axis() -> FrequencyAxis {
        FrequencyAxis { start: 3.5, step: 0.1, len: 66 }
    }

    #[test]
    fn delay_mapping() {
        assert_eq!(delay_pair(2.0).unwrap(), (Node::T0, Node::T2));
        assert_eq!(delay_pair(3.0).unwrap(), (Node::T2, Node::T5));
        assert_eq!(delay_pair(5.0).unwrap(), (Node::T0, Node::T5));
        assert!(delay_pair(4.0).is_err());
    }

    #[test]
    fn partial_convolution_matches_full() {
        let ax = FrequencyAxis { start: 0.0, step: 0.05, len: 30 };
        let conv = Convolver::new(ax, &PulseSpec::default(), &PulseSpec::new(6.0, 12)).unwrap();
        let m: Vec<f64> = (0..900).map(|k| ((k * 37 % 101) as f64) / 101.0).collect();
        let full = conv.convolve_2d(&m);
        let rows = [0, 7, 29];
        let cols = [3, 15];
        let mut scratch = vec![0.0; rows.len() * 30];
        let mut out = vec![0.0; 6];
        conv.convolve_2d_at(&m, &rows, &cols, &mut scratch, &mut out);
        for (r, &i) in rows.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                assert!((out[r * 2 + c] - full[i * 30 + j]).abs() < 1e-13);
            }
        }
        assert!((full.iter().sum::<f64>() - m.iter().sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn closed_and_quadrature_routes_agree() {
        let grid = GridSpec { model: small_axis(), data: FrequencyAxis { start: 4.0, step: 0.5, len: 11 } };
        let model = ForwardModel::new(grid, &PulseSpec::default(), &PulseSpec::default()).unwrap();
        let sn = SkewNormal::new(SkewNormalParams::reference_fit()).unwrap();
        let q = model.evaluate(&sn, MarginalRoute::Quadrature).unwrap();
        let c = model.evaluate(&sn, MarginalRoute::ClosedForm).unwrap();
        for (a, b) in q.grids.iter().flatten().zip(c.grids.iter().flatten()) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
        for (a, b) in q.spectra.iter().flatten().zip(c.spectra.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_hole_outside_grid() {
        let g = convolved_marginal(
            &SkewNormalParams::reference_fit(),
            (Node::T0, Node::T2),
            &PulseSpec::default(),
            &PulseSpec::default(),
            &small_axis(),
        )
        .unwrap();
        let h = hole_from_grid(&g, &small_axis(), 20.0, 2.0);
        assert!(h.empty);
        assert!(h.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn data_axis_must_lie_on_model_nodes() {
        let bad = GridSpec { model: default_model_axis(), data: FrequencyAxis { start: 4.01, step: 0.25, len: 3 } };
        assert!(bad.data_indices().is_err());
        assert_eq!(GridSpec::default().data_indices().unwrap()[0], 10);
    }
}
