//! Ballistic counter-model: atoms fly freely through a transverse Gaussian
//! profile of lattice depths, and each atom's vibrational frequency follows
//! its local depth.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::FrequencyTriple;
use crate::echo::{detect_plateau, echo_from_trajectories, EchoCurve, PlateauConfig, PlateauReport};
use crate::error::{Error, Result};
use crate::trajectories::{Extension, Interpolation, Trajectory};

/// Planck constant (J s), exact SI value.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Atomic mass constant (kg), CODATA 2018.
pub const ATOMIC_MASS: f64 = 1.660_539_066_60e-27;
/// Rb-85 atomic mass (u).
pub const RB85_MASS_U: f64 = 84.911_789_738;

/// Plane waves per Bloch Hamiltonian: indices −100..=100.
pub const BASIS_HALF: usize = 100;
/// Quasi-momenta averaged over for band centres.
const QUASI_MOMENTA: usize = 8;
/// Largest change (kHz) in ν01 allowed when the basis is doubled.
pub const BASIS_TOL_KHZ: f64 = 1e-3;
/// Monte Carlo standard error above which a baseline echo is flagged.
pub const MAX_ECHO_STD_ERROR: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyMode {
    /// 2√s E_R/h.
    Harmonic,
    /// Band-centre splitting of the sinusoidal lattice.
    #[default]
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub spacing_um: f64,
    pub angle_deg: f64,
    pub wavelength_nm: f64,
    /// Cloud-averaged depth (E_R).
    pub depth_er: f64,
    /// Gravitational tilt per site (E_R). Recorded only; the dynamics ignore it.
    pub tilt_er_per_site: f64,
    /// 1/e² intensity radius of the depth profile (μm).
    pub waist_um: f64,
    /// Per-axis r.m.s. size of the initial cloud (μm).
    pub cloud_sigma_um: f64,
    pub temperature_uk: f64,
    pub frequency_mode: FrequencyMode,
    /// Trajectories are tabulated every `step_ms` up to `horizon_ms`.
    pub step_ms: f64,
    pub horizon_ms: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            spacing_um: 0.930,
            angle_deg: 49.0,
            wavelength_nm: 780.0,
            depth_er: 24.0,
            tilt_er_per_site: 2.86,
            waist_um: 300.0,
            cloud_sigma_um: 75.0,
            temperature_uk: 10.0,
            frequency_mode: FrequencyMode::Numeric,
            step_ms: 0.05,
            horizon_ms: 6.0,
        }
    }
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("spacing_um", self.spacing_um),
            ("angle_deg", self.angle_deg),
            ("wavelength_nm", self.wavelength_nm),
            ("depth_er", self.depth_er),
            ("tilt_er_per_site", self.tilt_er_per_site),
            ("waist_um", self.waist_um),
            ("cloud_sigma_um", self.cloud_sigma_um),
            ("step_ms", self.step_ms),
            ("horizon_ms", self.horizon_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::params(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.temperature_uk >= 0.0) || !self.temperature_uk.is_finite() {
            return Err(Error::params("temperature must be non-negative"));
        }
        if self.horizon_ms < 5.0 {
            return Err(Error::params("trajectories must reach the last node at 5 ms"));
        }
        Ok(())
    }

    pub fn mass_kg(&self) -> f64 {
        RB85_MASS_U * ATOMIC_MASS
    }

    /// E_R/h = h / (8 m L²), in Hz.
    pub fn recoil_hz(&self) -> f64 {
        let l = self.spacing_um * 1e-6;
        PLANCK / (8.0 * self.mass_kg() * l * l)
    }

    /// Per-axis thermal velocity √(kT/m) in μm/ms.
    pub fn thermal_velocity(&self) -> f64 {
        (BOLTZMANN * self.temperature_uk * 1e-6 / self.mass_kg()).sqrt() * 1e3
    }

    /// Peak depth whose cloud average `⟨s_peak e^{−2r²/w²}⟩` equals `depth_er`.
    pub fn peak_depth_er(&self) -> f64 {
        let q = self.cloud_sigma_um / self.waist_um;
        self.depth_er * (1.0 + 4.0 * q * q)
    }

    pub fn depth_at(&self, r_um: f64) -> f64 {
        let x = r_um / self.waist_um;
        self.peak_depth_er() * (-2.0 * x * x).exp()
    }
}

/// Lowest two eigenvalues of the symmetric tridiagonal matrix with diagonal
/// `d` and constant off-diagonal `e`, by Sturm-count bisection.
fn lowest_two(d: &[f64], e: f64) -> [f64; 2] {
    let count_below = |x: f64| {
        let mut q = 1.0;
        let mut n = 0;
        for (i, &di) in d.iter().enumerate() {
            q = di - x - if i == 0 { 0.0 } else { e * e / q };
            if q == 0.0 {
                q = -f64::EPSILON * (di.abs() + e.abs());
            }
            if q < 0.0 {
                n += 1;
            }
        }
        n
    };
    let lo0 = d.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 * e.abs();
    let hi0 = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 * e.abs();
    let mut out = [0.0; 2];
    for (k, slot) in out.iter_mut().enumerate() {
        let (mut lo, mut hi) = (lo0, hi0);
        while hi - lo > 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        *slot = 0.5 * (lo + hi);
    }
    out
}

/// Band-centre splitting E1 − E0 (units of E_R) of `V = s sin²(πx/L)` with
/// `2·half + 1` plane waves.
fn band_gap_er(s: f64, half: usize) -> f64 {
    let n = 2 * half + 1;
    let mut d = vec![0.0; n];
    let mut gap = 0.0;
    for m in 0..QUASI_MOMENTA {
        let q = -1.0 + (2 * m + 1) as f64 / QUASI_MOMENTA as f64;
        for (j, dj) in d.iter_mut().enumerate() {
            let k = q + 2.0 * (j as f64 - half as f64);
            *dj = k * k + 0.5 * s;
        }
        let [e0, e1] = lowest_two(&d, -0.25 * s);
        gap += e1 - e0;
    }
    gap / QUASI_MOMENTA as f64
}

/// Vibrational transition frequency ν01 (kHz) at depth `s` (E_R).
pub fn depth_to_frequency(config: &LatticeConfig, s: f64, mode: FrequencyMode) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::params(format!("lattice depth must be positive, got {s}")));
    }
    let er = config.recoil_hz() * 1e-3;
    match mode {
        FrequencyMode::Harmonic => Ok(2.0 * s.sqrt() * er),
        FrequencyMode::Numeric => {
            let nu = band_gap_er(s, BASIS_HALF) * er;
            let check = band_gap_er(s, 2 * BASIS_HALF) * er;
            if (nu - check).abs() > BASIS_TOL_KHZ {
                return Err(Error::Convergence {
                    what: "plane-wave basis".into(),
                    detail: format!("ν01 moved by {:.3e} kHz on doubling", (nu - check).abs()),
                });
            }
            Ok(nu)
        }
    }
}

/// ν01(s) tabulated on a uniform depth grid from 0 to `s_max`, linearly interpolated.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    step: f64,
    values: Vec<f64>,
}

const TABLE_POINTS: usize = 2048;

impl FrequencyTable {
    pub fn new(config: &LatticeConfig, s_max: f64, mode: FrequencyMode) -> Result<Self> {
        // Convergence is checked once, at the deepest point.
        depth_to_frequency(config, s_max, mode)?;
        let er = config.recoil_hz() * 1e-3;
        let step = s_max / (TABLE_POINTS - 1) as f64;
        let values = (0..TABLE_POINTS)
            .map(|i| {
                let s = i as f64 * step;
                match mode {
                    FrequencyMode::Harmonic => 2.0 * s.sqrt() * er,
                    FrequencyMode::Numeric => band_gap_er(s, BASIS_HALF) * er,
                }
            })
            .collect();
        Ok(Self { step, values })
    }

    pub fn eval(&self, s: f64) -> f64 {
        let x = (s / self.step).clamp(0.0, (self.values.len() - 1) as f64);
        let i = (x as usize).min(self.values.len() - 2);
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

#[derive(Debug, Clone)]
pub struct BallisticEnsemble {
    pub trajectories: Vec<Trajectory>,
    /// Exact frequencies at 0, 2 and 5 ms.
    pub node_triples: Vec<FrequencyTriple>,
    pub times: Vec<f64>,
}

/// Frequency at time `t` for an atom at `r0` with velocity `v` (μm, μm/ms).
fn frequency_at(config: &LatticeConfig, table: &FrequencyTable, r0: [f64; 2], v: [f64; 2], t: f64) -> f64 {
    let x = r0[0] + v[0] * t;
    let y = r0[1] + v[1] * t;
    table.eval(config.depth_at(x.hypot(y)))
}

/// Samples `n` atoms (Gaussian cloud, Maxwell-Boltzmann velocities in the
/// transverse plane) and tabulates their frequency trajectories.
pub fn ballistic_ensemble(config: &LatticeConfig, n: usize, seed: u64) -> Result<BallisticEnsemble> {
    config.validate()?;
    if n == 0 {
        return Err(Error::input("ensemble needs at least one atom"));
    }
    let table = FrequencyTable::new(config, config.peak_depth_er(), config.frequency_mode)?;
    let steps = (config.horizon_ms / config.step_ms).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * config.step_ms).collect();
    let (sc, sv) = (config.cloud_sigma_um, config.thermal_velocity());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(n);
    let mut node_triples = Vec::with_capacity(n);
    for _ in 0..n {
        let g: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let (r0, v) = ([sc * g[0], sc * g[1]], [sv * g[2], sv * g[3]]);
        let freqs: Vec<f64> = times.iter().map(|&t| frequency_at(config, &table, r0, v, t)).collect();
        trajectories.push(Trajectory::new(times.clone(), freqs, Interpolation::Linear, Extension::Hold)?);
        let [a, b, c] = [0.0, 2.0, 5.0].map(|t| frequency_at(config, &table, r0, v, t));
        node_triples.push(FrequencyTriple::new(a, b, c));
    }
    Ok(BallisticEnsemble { trajectories, node_triples, times })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEcho {
    pub curve: EchoCurve,
    pub plateau: PlateauReport,
    /// Largest Monte Carlo standard error exceeded [`MAX_ECHO_STD_ERROR`].
    pub resolution_warning: bool,
}

/// Equal-weight echo over the ensemble, followed by plateau detection.
pub fn baseline_echo(ensemble: &BallisticEnsemble, taus: &[f64], plateau: &PlateauConfig) -> Result<BaselineEcho> {
    let curve = echo_from_trajectories(&ensemble.trajectories, taus)?;
    let report = detect_plateau(&curve, plateau)?;
    let resolution_warning = curve.max_std_error().is_some_and(|s| s > MAX_ECHO_STD_ERROR);
    Ok(BaselineEcho { curve, plateau: report, resolution_warning })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    fn of(x: f64) -> Self {
        if x.abs() <= 1e-12 {
            Sign::Zero
        } else if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Counts of (sign(ω2−ω0), sign(ω5−ω2)); `counts[first][second]` indexed
/// Negative, Zero, Positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCensus {
    pub counts: [[usize; 3]; 3],
    pub total: usize,
    /// corr(ω2−ω0, ω5−ω2) over the ensemble; NaN when an increment has no spread.
    pub increment_correlation: f64,
}

impl SignCensus {
    pub fn count(&self, first: Sign, second: Sign) -> usize {
        self.counts[first.index()][second.index()]
    }

    pub fn fraction(&self, first: Sign, second: Sign) -> f64 {
        self.count(first, second) as f64 / self.total as f64
    }

    /// Binomial standard error of [`SignCensus::fraction`].
    pub fn std_error(&self, first: Sign, second: Sign) -> f64 {
        let p = self.fraction(first, second);
        (p * (1.0 - p) / self.total as f64).sqrt()
    }

    /// Fraction whose frequency first falls and then rises.
    pub fn down_up_fraction(&self) -> f64 {
        self.fraction(Sign::Negative, Sign::Positive)
    }
}

pub fn baseline_trajectory_census(triples: &[FrequencyTriple]) -> SignCensus {
    let mut counts = [[0usize; 3]; 3];
    let incs: Vec<(f64, f64)> = triples.iter().map(|t| (t.w2 - t.w0, t.w5 - t.w2)).collect();
    for &(a, b) in &incs {
        counts[Sign::of(a).index()][Sign::of(b).index()] += 1;
    }
    SignCensus { counts, total: triples.len(), increment_correlation: correlation(&incs) }
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a / n, y + b / n));
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
        sab += (a - ma) * (b - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Harmonic-oscillator limit ν = 2√s E_R/h in kHz, for reference.
pub fn harmonic_frequency_khz(config: &LatticeConfig, s: f64) -> f64 {
    2.0 * s.sqrt() * config.recoil_hz() * 1e-3
}

/// Intensity-grating spacing λ / (2 sin(θ/2)) (μm) implied by the beam geometry.
pub fn grating_spacing_um(config: &LatticeConfig) -> f64 {
    config.wavelength_nm * 1e-3 / (2.0 * (0.5 * config.angle_deg * PI / 180.0).sin())
}
