//! Echo amplitude ε(τ) predicted from a trajectory distribution, plateau
//! detection, correlation sweeps and free dephasing.
//!
//! For a refocusing pulse at t1 and echo at τ = 2t1 each trajectory picks up
//! `φ = 2π [∫_{t1}^{2t1} ω − ∫_0^{t1} ω]` and `ε(τ) = |E[e^{−iφ}]|`.
//!
//! The skew-normal average is a tensor-product Gauss-Legendre rule in rotated,
//! whitened coordinates: `ω = μ + L H y` with `LLᵀ = Ω` and `H` a reflection
//! taking the first axis onto `Lᵀα`. There the density is
//! `2 φ₃(y) Φ(|Lᵀα| y₁)`, so the skew acts along `y₁` alone and that axis is
//! split at 0. Weights are normalized on the grid, which makes ε(0) = 1 exactly.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{FrequencyTriple, Node, SkewNormal, SkewNormalParams};
use crate::error::{Error, Result};
use crate::grid::fmt_sig;
use crate::quadrature::GaussLegendre;
use crate::special::norm_cdf;
use crate::trajectories::{interpolate, Extension, Interpolation, Trajectory};

/// Half-width of the quadrature box in whitened units.
pub const QUADRATURE_HALF_WIDTH: f64 = 6.0;
pub const DEFAULT_NODES: usize = 48;
/// Extra nodes per axis for the convergence check.
pub const CONVERGENCE_STEP: usize = 8;
/// Largest |Δε| between the two resolutions still counted as converged.
pub const CONVERGENCE_TOL: f64 = 0.01;

/// Net phase (radians) at the echo time `2 t1`.
pub fn accumulated_phase(traj: &Trajectory, t1: f64) -> f64 {
    2.0 * PI * (traj.integral(t1, 2.0 * t1) - traj.integral(0.0, t1))
}

/// τ from 0 to `stop` (ms) inclusive in steps of `step`.
pub fn tau_grid(stop: f64, step: f64) -> Vec<f64> {
    let n = (stop / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Default τ grid: 0–6 ms in 0.05 ms steps.
pub fn default_tau_grid() -> Vec<f64> {
    tau_grid(6.0, 0.05)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EchoSource {
    Quadrature { nodes_per_axis: usize },
    MonteCarlo { samples: usize, seed: u64 },
    Trajectories { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoCurve {
    pub tau_ms: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// Quadrature: |Δε| under refinement stayed below [`CONVERGENCE_TOL`]. Sampling: always true.
    pub converged: Vec<bool>,
    /// τ beyond the last node time, where the extension policy shapes ε.
    pub model_dependent: Vec<bool>,
    /// Monte Carlo standard error of each ε, when sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<Vec<f64>>,
    pub interpolation: Interpolation,
    pub extension: Extension,
    pub source: EchoSource,
}

impl EchoCurve {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn max_std_error(&self) -> Option<f64> {
        self.std_error.as_ref().map(|s| s.iter().cloned().fold(0.0, f64::max))
    }

    /// CSV: tau_ms, epsilon, converged_flag.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tau_ms", "epsilon", "converged_flag"])?;
        for ((t, e), c) in self.tau_ms.iter().zip(&self.epsilon).zip(&self.converged) {
            out.write_record([fmt_sig(*t), fmt_sig(*e), (*c as u8).to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoOptions {
    pub interpolation: Interpolation,
    pub extension: Extension,
    pub nodes_per_axis: usize,
    /// Repeat with `nodes_per_axis + 8` and flag points that move by more than 0.01.
    pub check_convergence: bool,
}

impl Default for EchoOptions {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::MonotoneCubic,
            extension: Extension::Hold,
            nodes_per_axis: DEFAULT_NODES,
            check_convergence: true,
        }
    }
}

impl EchoOptions {
    pub fn with_interpolation(interpolation: Interpolation) -> Self {
        Self { interpolation, ..Self::default() }
    }
}

/// Unnormalized phasor sums Σ w e^{iφ(τ)} and Σ w.
struct PhasorSums {
    re: Vec<f64>,
    im: Vec<f64>,
    re2: Vec<f64>,
    mass: f64,
    count: usize,
}

impl PhasorSums {
    fn new(n: usize) -> Self {
        Self { re: vec![0.0; n], im: vec![0.0; n], re2: vec![0.0; n], mass: 0.0, count: 0 }
    }

    fn add(&mut self, traj: &Trajectory, w: f64, taus: &[f64]) {
        self.mass += w;
        self.count += 1;
        for (k, &tau) in taus.iter().enumerate() {
            let (s, c) = accumulated_phase(traj, 0.5 * tau).sin_cos();
            self.re[k] += w * c;
            self.im[k] += w * s;
            self.re2[k] += w * c * c;
        }
    }

    fn epsilon(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| (r.hypot(*i) / self.mass).min(1.0)).collect()
    }

    /// Standard error of |mean phasor| for equal-weight samples, from the
    /// spread of the phasor component along the mean direction.
    fn std_error(&self, eps: &[f64]) -> Vec<f64> {
        let n = self.count as f64;
        (0..eps.len())
            .map(|k| {
                let (mr, mi) = (self.re[k] / self.mass, self.im[k] / self.mass);
                let m = mr.hypot(mi);
                // E[(z·u)²] with u the unit mean direction, using E[cos²] and E[sin²] = 1 − E[cos²];
                // cross terms vanish for a symmetric-enough phase distribution and are ignored.
                let c2 = self.re2[k] / self.mass;
                let proj2 = if m > 0.0 { (mr * mr * c2 + mi * mi * (1.0 - c2)) / (m * m) } else { 0.5 };
                ((proj2 - eps[k] * eps[k]).max(0.0) / n).sqrt()
            })
            .collect()
    }
}

fn model_dependent(taus: &[f64], last_node: f64) -> Vec<bool> {
    taus.iter().map(|&t| t > last_node + 1e-12).collect()
}

/// Quadrature nodes `(ω triple, weight)` for the skew-normal with `n` points per axis.
pub fn quadrature_nodes(sn: &SkewNormal, n: usize) -> Result<Vec<([f64; 3], f64)>> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::input(format!("nodes per axis must be even and at least 4, got {n}")));
    }
    let l = *sn.cholesky();
    let alpha = Vector3::from(sn.params().alpha);
    let beta = l.transpose() * alpha;
    let bn = beta.norm();
    let h = if bn > 1e-14 {
        let v = Vector3::x() - beta / bn;
        let vv = v.dot(&v);
        if vv > 1e-24 { Matrix3::identity() - 2.0 * v * v.transpose() / vv } else { Matrix3::identity() }
    } else {
        Matrix3::identity()
    };
    let map = l * h;
    let mu = Vector3::from(sn.params().mu);
    let c = QUADRATURE_HALF_WIDTH;
    // y1 < 0 carries weight φ(y1)Φ(|β|y1), of width ~ 1/√(1+|β|²); for y1 > 0
    // the skew factor rises over ~ 1/|β|.
    let neg = (8.0 / (1.0 + bn * bn).sqrt()).min(c);
    let mut ax1: Vec<(f64, f64)> = GaussLegendre::new(n / 2).mapped(-neg, 0.0).collect();
    let knee = 4.0 / bn;
    if knee < 0.5 * c {
        ax1.extend(GaussLegendre::new(n / 4).mapped(0.0, knee));
        ax1.extend(GaussLegendre::new(n / 2 - n / 4).mapped(knee, c));
    } else {
        ax1.extend(GaussLegendre::new(n / 2).mapped(0.0, c));
    }
    let full: Vec<(f64, f64)> = GaussLegendre::new(n).mapped(-c, c).collect();
    let mut out = Vec::with_capacity(n * n * n);
    for &(y1, w1) in &ax1 {
        let skew = 2.0 * norm_cdf(bn * y1);
        if skew == 0.0 {
            continue;
        }
        for &(y2, w2) in &full {
            for &(y3, w3) in &full {
                let w = w1 * w2 * w3 * (-0.5 * (y1 * y1 + y2 * y2 + y3 * y3)).exp() * skew;
                if w == 0.0 {
                    continue;
                }
                let x = mu + map * Vector3::new(y1, y2, y3);
                out.push(([x[0], x[1], x[2]], w));
            }
        }
    }
    Ok(out)
}

fn quadrature_epsilon(sn: &SkewNormal, taus: &[f64], n: usize, opts: &EchoOptions) -> Result<Vec<f64>> {
    let mut sums = PhasorSums::new(taus.len());
    let times = sn.params().node_times;
    for (x, w) in quadrature_nodes(sn, n)? {
        let traj = interpolate(&FrequencyTriple::from_array(x), times, opts.interpolation, opts.extension)?;
        sums.add(&traj, w, taus);
    }
    Ok(sums.epsilon())
}

/// ε(τ) by deterministic quadrature over the skew-normal.
pub fn echo_amplitude(params: &SkewNormalParams, taus: &[f64], opts: &EchoOptions) -> Result<EchoCurve> {
    let sn = SkewNormal::new(*params)?;
    if taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::input("echo times must be non-negative"));
    }
    let epsilon = quadrature_epsilon(&sn, taus, opts.nodes_per_axis, opts)?;
    let converged = if opts.check_convergence {
        let finer = quadrature_epsilon(&sn, taus, opts.nodes_per_axis + CONVERGENCE_STEP, opts)?;
        epsilon.iter().zip(&finer).map(|(a, b)| (a - b).abs() <= CONVERGENCE_TOL).collect()
    } else {
        vec![true; taus.len()]
    };
    Ok(EchoCurve {
        tau_ms: taus.to_vec(),
        model_dependent: model_dependent(taus, params.node_times[2]),
        epsilon,
        converged,
        std_error: None,
        interpolation: opts.interpolation,
        extension: opts.extension,
        source: EchoSource::Quadrature { nodes_per_axis: opts.nodes_per_axis },
    })
}

/// ε(τ) as the equal-weight average over `samples` skew-normal draws.
pub fn monte_carlo_echo(
    params: &SkewNormalParams,
    taus: &[f64],
    samples: usize,
    seed: u64,
    interpolation: Interpolation,
    extension: Extension,
) -> Result<EchoCurve> {
    if samples == 0 {
        return Err(Error::input("need at least one sample"));
    }
    let sn = SkewNormal::new(*params)?;
    let sampler = sn.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = PhasorSums::new(taus.len());
    for _ in 0..samples {
        let w = sampler.draw(&mut rng);
        sums.add(&interpolate(&w, params.node_times, interpolation, extension)?, 1.0, taus);
    }
    let epsilon = sums.epsilon();
    Ok(EchoCurve {
        tau_ms: taus.to_vec(),
        model_dependent: model_dependent(taus, params.node_times[2]),
        std_error: Some(sums.std_error(&epsilon)),
        converged: vec![true; taus.len()],
        epsilon,
        interpolation,
        extension,
        source: EchoSource::MonteCarlo { samples, seed },
    })
}

/// ε(τ) as the equal-weight average over given trajectories.
pub fn echo_from_trajectories(trajectories: &[Trajectory], taus: &[f64]) -> Result<EchoCurve> {
    let first = trajectories.first().ok_or_else(|| Error::input("no trajectories"))?;
    let mut sums = PhasorSums::new(taus.len());
    for t in trajectories {
        sums.add(t, 1.0, taus);
    }
    let last = first.times().last().copied().unwrap_or(0.0);
    let epsilon = sums.epsilon();
    Ok(EchoCurve {
        tau_ms: taus.to_vec(),
        model_dependent: model_dependent(taus, last),
        std_error: Some(sums.std_error(&epsilon)),
        converged: vec![true; taus.len()],
        epsilon,
        interpolation: first.method,
        extension: first.extension,
        source: EchoSource::Trajectories { count: trajectories.len() },
    })
}

/// Free-induction decay of the ω0 marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeDephasing {
    pub t_ms: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// First time the amplitude falls to 1/e (linear interpolation), if it does.
    pub t_1e_ms: Option<f64>,
}

/// |∫ M₀(ω) e^{−2πiωt} dω| on `t_grid`, with M₀ the univariate ω0 marginal.
pub fn free_dephasing(params: &SkewNormalParams, t_grid: &[f64]) -> Result<FreeDephasing> {
    let sn = SkewNormal::new(*params)?;
    let m = sn.closed_marginal_1d(Node::T0);
    let rule = GaussLegendre::new(crate::quadrature::PANEL_ORDER);
    let (lo, hi) = (m.mu - 10.0 * m.sd, m.mu + 10.0 * m.sd);
    let nodes: Vec<(f64, f64)> = rule.composite(lo, hi, 256).into_iter().map(|(x, w)| (x, w * m.density(x))).collect();
    let mass: f64 = nodes.iter().map(|(_, w)| w).sum();
    let amplitude: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            let (mut re, mut im) = (0.0, 0.0);
            for &(x, w) in &nodes {
                let (s, c) = (2.0 * PI * (x - m.mu) * t).sin_cos();
                re += w * c;
                im += w * s;
            }
            re.hypot(im) / mass
        })
        .collect();
    Ok(FreeDephasing { t_1e_ms: first_crossing(t_grid, &amplitude, (-1.0f64).exp()), t_ms: t_grid.to_vec(), amplitude })
}

fn first_crossing(t: &[f64], y: &[f64], level: f64) -> Option<f64> {
    for i in 1..y.len() {
        if y[i] <= level && y[i - 1] > level {
            let f = (y[i - 1] - level) / (y[i - 1] - y[i]);
            return Some(t[i - 1] + f * (t[i] - t[i - 1]));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    /// Largest |dε/dτ| / ε (per ms) counted as flat.
    pub slope_threshold: f64,
    /// Shortest flat stretch (ms) reported as a plateau.
    pub min_length_ms: f64,
    /// Flat stretches below this ε are a noise floor, not a plateau.
    pub min_level: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { slope_threshold: 0.05, min_length_ms: 0.5, min_level: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    /// Absent when ε does not fall over the initial segment.
    pub initial_decay_ms: Option<f64>,
    /// End of the segment the initial decay was fitted on.
    pub initial_segment_end_ms: f64,
    pub detected: bool,
    /// Longest flat stretch after the initial decay, whether or not long enough.
    pub flat_start_ms: Option<f64>,
    pub flat_end_ms: Option<f64>,
    pub flat_length_ms: f64,
    pub plateau_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_decay_ms: Option<f64>,
}

/// Least-squares slope of ln y against t; `None` when fewer than two usable points.
fn log_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, y)| **y > 0.0).map(|(t, y)| (*t, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Two-stage decay analysis of an echo curve.
pub fn detect_plateau(curve: &EchoCurve, cfg: &PlateauConfig) -> Result<PlateauReport> {
    let (t, e) = (&curve.tau_ms, &curve.epsilon);
    let n = t.len();
    if n < 3 || t[n - 1] - t[0] < 2.0 {
        return Err(Error::input("echo curve must span at least 2 ms"));
    }
    if t.windows(2).any(|w| !(w[1] > w[0]) || w[1] - w[0] > 0.1 + 1e-9) {
        return Err(Error::input("echo curve must be sampled at increasing steps of at most 0.1 ms"));
    }
    let slope = |i: usize| -> f64 {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
        (e[b] - e[a]) / (t[b] - t[a])
    };

    // Initial segment: until ε ≤ 1/e or the slope stops being negative.
    let mut end = n - 1;
    for i in 1..n {
        if e[i] <= (-1.0f64).exp() || slope(i) >= 0.0 {
            end = i;
            break;
        }
    }
    let initial_decay_ms = log_slope(&t[..=end], &e[..=end]).filter(|k| *k < 0.0).map(|k| -1.0 / k);

    let flat = |i: usize| e[i] >= cfg.min_level && slope(i).abs() < cfg.slope_threshold * e[i];
    let (mut best, mut run): (Option<(usize, usize)>, Option<usize>) = (None, None);
    for i in end..n {
        if flat(i) {
            let s = *run.get_or_insert(i);
            let len = t[i] - t[s];
            if best.is_none_or(|(a, b)| len > t[b] - t[a]) {
                best = Some((s, i));
            }
        } else {
            run = None;
        }
    }
    let flat_length_ms = best.map_or(0.0, |(a, b)| t[b] - t[a]);
    let detected = best.is_some() && flat_length_ms >= cfg.min_length_ms - 1e-9;
    let plateau_level = best.map(|(a, b)| e[a..=b].iter().sum::<f64>() / (b - a + 1) as f64);
    let final_decay_ms = best.filter(|_| detected).and_then(|(_, b)| {
        let k = log_slope(&t[b + 1..], &e[b + 1..])?;
        (k < 0.0 && n - b >= 4).then(|| -1.0 / k)
    });
    Ok(PlateauReport {
        initial_decay_ms,
        initial_segment_end_ms: t[end],
        detected,
        flat_start_ms: best.map(|(a, _)| t[a]),
        flat_end_ms: best.map(|(_, b)| t[b]),
        flat_length_ms,
        plateau_level,
        final_decay_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rho25: f64,
    pub rho05: f64,
    /// Covariance positive definite; infeasible cells carry no report.
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PlateauReport>,
}

impl SweepCell {
    pub fn plateau(&self) -> Option<bool> {
        self.report.as_ref().map(|r| r.detected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSweep {
    pub cells: Vec<SweepCell>,
}

impl CorrelationSweep {
    /// CSV: rho25, rho05, feasible, plateau_detected, flat_length_ms.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["rho25", "rho05", "feasible", "plateau_detected", "flat_length_ms"])?;
        for c in &self.cells {
            let (d, l) = match &c.report {
                Some(r) => ((r.detected as u8).to_string(), fmt_sig(r.flat_length_ms)),
                None => (String::new(), String::new()),
            };
            out.write_record([fmt_sig(c.rho25), fmt_sig(c.rho05), (c.feasible as u8).to_string(), d, l])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Smallest ρ25 − ρ05 among feasible cells without a plateau, and the largest
    /// among cells with one.
    pub fn boundary(&self) -> (Option<f64>, Option<f64>) {
        let gap = |c: &SweepCell| c.rho25 - c.rho05;
        let absent = self.cells.iter().filter(|c| c.plateau() == Some(false)).map(gap).reduce(f64::min);
        let present = self.cells.iter().filter(|c| c.plateau() == Some(true)).map(gap).reduce(f64::max);
        (absent, present)
    }
}

/// Echo + plateau detection over a (ρ25, ρ05) grid, other parameters fixed.
pub fn correlation_sweep(
    params: &SkewNormalParams,
    rho25_values: &[f64],
    rho05_values: &[f64],
    taus: &[f64],
    opts: &EchoOptions,
    plateau: &PlateauConfig,
) -> Result<CorrelationSweep> {
    let mut cells = Vec::new();
    for &r25 in rho25_values {
        for &r05 in rho05_values {
            let p = params.with_rho([params.rho[0], r25, r05]);
            let report = if p.is_valid() { Some(detect_plateau(&echo_amplitude(&p, taus, opts)?, plateau)?) } else { None };
            cells.push(SweepCell { rho25: r25, rho05: r05, feasible: report.is_some(), report });
        }
    }
    Ok(CorrelationSweep { cells })
}
