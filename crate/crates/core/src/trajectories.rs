//! Frequency trajectories through node frequencies, and windowed statistics
//! of the skew-normal over them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{FrequencyTriple, Node, SkewNormal, SkewNormalParams, MARGINAL_REL_TOL};
use crate::error::{Error, Result};
use crate::grid::{fmt_sig, FrequencyAxis, Spectrum1D};
use crate::quadrature::{self, GaussLegendre};

/// Smallest acceptance rate [`sample_trajectories`] tolerates.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Shape-preserving piecewise cubic Hermite (harmonic-mean slopes).
    MonotoneCubic,
}

/// Behaviour after the last node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    #[default]
    Hold,
    LinearExtend,
}

/// ω(t) (kHz, t in ms) through `(times[i], freqs[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    freqs: Vec<f64>,
    slopes: Vec<f64>,
    /// ∫ ω dt from times[0] to times[i].
    prefix: Vec<f64>,
    pub method: Interpolation,
    pub extension: Extension,
    /// Probability weight attached by the producer (skew-normal density for sampled trajectories).
    pub weight: f64,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, freqs: Vec<f64>, method: Interpolation, extension: Extension) -> Result<Self> {
        if times.len() < 2 || times.len() != freqs.len() {
            return Err(Error::input("a trajectory needs at least two nodes and one frequency per node"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::input("node times must be strictly increasing"));
        }
        if freqs.iter().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::input("trajectory nodes must be finite"));
        }
        let slopes = match method {
            Interpolation::Linear => secants(&times, &freqs),
            Interpolation::MonotoneCubic => pchip_slopes(&times, &freqs),
        };
        let mut t = Self { times, freqs, slopes, prefix: Vec::new(), method, extension, weight: 1.0 };
        let mut acc = 0.0;
        t.prefix.push(0.0);
        for k in 0..t.times.len() - 1 {
            acc += t.segment_integral(k, t.times[k + 1]);
            t.prefix.push(acc);
        }
        Ok(t)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    fn segment(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i.min(self.times.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.times.len() - 2),
        }
    }

    fn tail_slope(&self) -> f64 {
        match self.extension {
            Extension::Hold => 0.0,
            Extension::LinearExtend => *self.slopes.last().expect("at least two nodes"),
        }
    }

    /// ω(t). Before the first node the first frequency is held.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.freqs[0];
        }
        if t >= self.times[n - 1] {
            return self.freqs[n - 1] + self.tail_slope() * (t - self.times[n - 1]);
        }
        let k = self.segment(t);
        self.eval_segment(k, t)
    }

    #[inline]
    fn eval_segment(&self, k: usize, t: f64) -> f64 {
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (y0, y1) = (self.freqs[k], self.freqs[k + 1]);
        let h = t1 - t0;
        match self.method {
            Interpolation::Linear => y0 + (y1 - y0) * (t - t0) / h,
            Interpolation::MonotoneCubic => {
                let s = (t - t0) / h;
                let s2 = s * s;
                let s3 = s2 * s;
                (2.0 * s3 - 3.0 * s2 + 1.0) * y0
                    + (s3 - 2.0 * s2 + s) * h * self.slopes[k]
                    + (-2.0 * s3 + 3.0 * s2) * y1
                    + (s3 - s2) * h * self.slopes[k + 1]
            }
        }
    }

    /// ∫ ω from times[k] to `t` (t inside segment k).
    fn segment_integral(&self, k: usize, t: f64) -> f64 {
        let t0 = self.times[k];
        match self.method {
            Interpolation::Linear => 0.5 * (self.freqs[k] + self.eval_segment(k, t)) * (t - t0),
            Interpolation::MonotoneCubic => {
                // Three-point Gauss-Legendre is exact for the cubic.
                let half = 0.5 * (t - t0);
                let mid = t0 + half;
                let r = 0.6f64.sqrt() * half;
                half * (5.0 / 9.0 * (self.eval_segment(k, mid - r) + self.eval_segment(k, mid + r))
                    + 8.0 / 9.0 * self.eval_segment(k, mid))
            }
        }
    }

    /// ∫ ω dt from the first node to `t`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.freqs[0] * (t - self.times[0]);
        }
        if t >= self.times[n - 1] {
            let d = t - self.times[n - 1];
            return self.prefix[n - 1] + self.freqs[n - 1] * d + 0.5 * self.tail_slope() * d * d;
        }
        let k = self.segment(t);
        self.prefix[k] + self.segment_integral(k, t)
    }

    /// ∫ₐᵇ ω dt (kHz·ms, i.e. cycles).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }
}

fn secants(t: &[f64], y: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = t.windows(2).zip(y.windows(2)).map(|(t, y)| (y[1] - y[0]) / (t[1] - t[0])).collect();
    let mut s = d.clone();
    s.push(*d.last().expect("at least one segment"));
    s
}

/// Node derivatives of the shape-preserving cubic: weighted harmonic mean of the
/// adjacent secants at interior nodes (zero at local extrema) and the
/// three-point one-sided rule at the ends, limited to keep monotone segments monotone.
pub fn pchip_slopes(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = y.windows(2).zip(&h).map(|(w, h)| (w[1] - w[0]) / h).collect();
    if n == 2 {
        return vec![del[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (del[k - 1], del[k]);
        if a * b > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() || d0 == 0.0 {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > (3.0 * d0).abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

/// Trajectory through a frequency triple at the given node times.
pub fn interpolate(
    triple: &FrequencyTriple,
    node_times: [f64; 3],
    method: Interpolation,
    extension: Extension,
) -> Result<Trajectory> {
    Trajectory::new(node_times.to_vec(), triple.to_array().to_vec(), method, extension)
}

/// A frequency window on one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub center_khz: f64,
    pub width_khz: f64,
    pub node: Node,
}

impl WindowSpec {
    pub fn new(center_khz: f64, width_khz: f64, node: Node) -> Self {
        Self { center_khz, width_khz, node }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_khz > 0.0) || !self.center_khz.is_finite() {
            return Err(Error::input(format!("window width {} must be positive", self.width_khz)));
        }
        Ok(())
    }

    pub fn lo(&self) -> f64 {
        self.center_khz - 0.5 * self.width_khz
    }

    pub fn hi(&self) -> f64 {
        self.center_khz + 0.5 * self.width_khz
    }

    pub fn contains(&self, w: f64) -> bool {
        (self.lo()..=self.hi()).contains(&w)
    }
}

/// `P_f(ω)` on `axis` for the node not covered by the two windows: the skew-normal
/// integrated over both windows.
pub fn windowed_final_probability(
    params: &SkewNormalParams,
    first: &WindowSpec,
    second: &WindowSpec,
    axis: &FrequencyAxis,
) -> Result<Spectrum1D> {
    first.validate()?;
    second.validate()?;
    if first.node == second.node {
        return Err(Error::input("the two windows must constrain different nodes"));
    }
    let sn = SkewNormal::new(*params)?;
    let out = Node::third(first.node, second.node).index();
    let (a, b) = (first.node.index(), second.node.index());
    let mut x = [0.0; 3];
    let values = axis
        .values()
        .into_iter()
        .map(|w| {
            x[out] = w;
            quadrature::integrate_2d(
                "windowed final probability",
                |u, v| {
                    x[a] = u;
                    x[b] = v;
                    sn.density_at(x)
                },
                (first.lo(), first.hi()),
                (second.lo(), second.hi()),
                MARGINAL_REL_TOL,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum1D { freq_khz: axis.values(), values })
}

/// Mass of the skew-normal inside both windows, by Gauss-Legendre over the
/// windows and ±8σ of the free node.
pub fn window_mass(params: &SkewNormalParams, first: &WindowSpec, second: &WindowSpec) -> Result<f64> {
    let sn = SkewNormal::new(*params)?;
    let free = Node::third(first.node, second.node);
    let (mu, s) = (params.mu[free.index()], params.sigma[free.index()]);
    let rule = GaussLegendre::new(quadrature::PANEL_ORDER);
    let mut total = 0.0;
    let mut x = [0.0; 3];
    for (w, wt) in rule.composite(mu - 8.0 * s, mu + 8.0 * s, 32) {
        x[free.index()] = w;
        let inner = quadrature::integrate_2d(
            "window mass",
            |u, v| {
                x[first.node.index()] = u;
                x[second.node.index()] = v;
                sn.density_at(x)
            },
            (first.lo(), first.hi()),
            (second.lo(), second.hi()),
            MARGINAL_REL_TOL,
        )?;
        total += wt * inner;
    }
    Ok(total)
}

/// Trajectories whose node frequencies fall in both windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub trajectories: Vec<Trajectory>,
    pub draws: usize,
    pub acceptance_rate: f64,
}

impl TrajectorySample {
    /// Equal-weight mean and covariance of the node frequencies (the draws
    /// already follow the skew-normal, so no reweighting is needed).
    pub fn node_moments(&self) -> ([f64; 3], [[f64; 3]; 3]) {
        node_moments(&self.trajectories)
    }
}

/// Sample mean and covariance of the first three node frequencies.
pub fn node_moments(trajectories: &[Trajectory]) -> ([f64; 3], [[f64; 3]; 3]) {
    let n = trajectories.len() as f64;
    let mut mean = [0.0; 3];
    for t in trajectories {
        for (m, f) in mean.iter_mut().zip(t.freqs()) {
            *m += f / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for t in trajectories {
        let f = t.freqs();
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (f[i] - mean[i]) * (f[j] - mean[j]) / (n - 1.0).max(1.0);
            }
        }
    }
    (mean, cov)
}

/// Rejection-samples `n` skew-normal triples inside both windows and
/// interpolates them. Each trajectory's weight is the density at its nodes.
pub fn sample_trajectories(
    params: &SkewNormalParams,
    first: &WindowSpec,
    second: &WindowSpec,
    n: usize,
    seed: u64,
    method: Interpolation,
) -> Result<TrajectorySample> {
    first.validate()?;
    second.validate()?;
    if n == 0 {
        return Err(Error::input("need at least one trajectory"));
    }
    let sn = SkewNormal::new(*params)?;
    let sampler = sn.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_draws = ((n as f64 / MIN_ACCEPTANCE).ceil() as usize).max(100_000);
    let mut draws = 0;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if draws >= 100_000 && (out.len() as f64) < MIN_ACCEPTANCE * draws as f64 || draws >= max_draws {
            return Err(Error::WindowTooNarrow { rate: out.len() as f64 / draws as f64, min: MIN_ACCEPTANCE });
        }
        draws += 1;
        let w = sampler.draw(&mut rng);
        if first.contains(w.get(first.node)) && second.contains(w.get(second.node)) {
            let t = interpolate(&w, params.node_times, method, Extension::Hold)?.with_weight(sn.density(&w));
            out.push(t);
        }
    }
    Ok(TrajectorySample { trajectories: out, draws, acceptance_rate: n as f64 / draws as f64 })
}

/// Long-format CSV (time_ms, freq_khz, trajectory_id, weight) sampled on `times`.
pub fn write_trajectories_csv<W: std::io::Write>(trajectories: &[Trajectory], times: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time_ms", "freq_khz", "trajectory_id", "weight"])?;
    for (id, traj) in trajectories.iter().enumerate() {
        for &t in times {
            out.write_record([fmt_sig(t), fmt_sig(traj.eval(t)), id.to_string(), fmt_sig(traj.weight)])?;
        }
    }
    out.flush()?;
    Ok(())
}
