//! Trivariate skew-normal model of transition frequencies at three times.
//!
//! The density is `2 ψ(ω; Ω) Φ(αᵀω)` with `ω = ω̃ − μ`, where ψ is the centered
//! trivariate normal density, Φ the standard normal CDF, and Ω built from the
//! scales σ and the mutual correlations ρ. The shape vector α acts on the
//! *unstandardized* offsets in kHz.
//!
//! Marginals are computed by Gauss-Legendre panel quadrature over the dropped
//! coordinates (±8σ). [`SkewNormal::closed_marginal_2d`] and
//! [`SkewNormal::closed_marginal_1d`] provide the same functions through the
//! Gaussian-conditional identity, for inner loops where quadrature is too slow.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FrequencyAxis, SpectrumGrid2D, SpectrumKind};
use crate::quadrature::{self, GaussLegendre};
use crate::special::{ln_2pi, norm_cdf};

/// Half-width of the integration range, in units of the dropped coordinate's σ.
pub const MARGINAL_HALF_WIDTH: f64 = 8.0;
/// Relative agreement required between successive panel doublings.
pub const MARGINAL_REL_TOL: f64 = 1e-8;

/// One of the three node times at which the distribution is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    T0,
    T2,
    T5,
}

impl Node {
    pub const ALL: [Node; 3] = [Node::T0, Node::T2, Node::T5];

    pub fn index(self) -> usize {
        match self {
            Node::T0 => 0,
            Node::T2 => 1,
            Node::T5 => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Node> {
        Node::ALL.get(i).copied()
    }

    pub fn others(self) -> [Node; 2] {
        match self {
            Node::T0 => [Node::T2, Node::T5],
            Node::T2 => [Node::T0, Node::T5],
            Node::T5 => [Node::T0, Node::T2],
        }
    }

    /// The node that is neither `a` nor `b` (for distinct `a`, `b`).
    pub fn third(a: Node, b: Node) -> Node {
        Node::ALL.into_iter().find(|&n| n != a && n != b).expect("three nodes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalParams {
    #[serde(rename = "mu_khz")]
    pub mu: [f64; 3],
    #[serde(rename = "sigma_khz")]
    pub sigma: [f64; 3],
    /// Correlations in the order (ρ02, ρ25, ρ05).
    pub rho: [f64; 3],
    pub alpha: [f64; 3],
    #[serde(rename = "node_times_ms", default = "default_node_times")]
    pub node_times: [f64; 3],
}

fn default_node_times() -> [f64; 3] {
    SkewNormalParams::DEFAULT_NODE_TIMES
}

impl SkewNormalParams {
    pub const DEFAULT_NODE_TIMES: [f64; 3] = [0.0, 2.0, 5.0];

    pub fn new(mu: [f64; 3], sigma: [f64; 3], rho: [f64; 3], alpha: [f64; 3]) -> Self {
        Self { mu, sigma, rho, alpha, node_times: Self::DEFAULT_NODE_TIMES }
    }

    /// Average of the 12 best-fit parameter sets obtained from the measured
    /// 2, 3 and 5 ms spectra at 24 E_R.
    pub fn reference_fit() -> Self {
        Self::new([5.92, 5.92, 5.96], [0.77, 0.82, 0.83], [0.88, 0.82, 0.80], [2.6, 3.2, 4.0])
    }

    /// Run-to-run standard deviations reported with [`Self::reference_fit`].
    pub fn reference_fit_spread() -> Self {
        Self::new([0.04, 0.03, 0.06], [0.05, 0.04, 0.07], [0.02, 0.03, 0.04], [0.5, 0.4, 2.0])
    }

    pub fn with_alpha(mut self, alpha: [f64; 3]) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_rho(mut self, rho: [f64; 3]) -> Self {
        self.rho = rho;
        self
    }

    /// Correlation coefficient between two nodes.
    pub fn correlation(&self, a: Node, b: Node) -> f64 {
        match (a.index().min(b.index()), a.index().max(b.index())) {
            (0, 1) => self.rho[0],
            (1, 2) => self.rho[1],
            (0, 2) => self.rho[2],
            _ => 1.0,
        }
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for a in Node::ALL {
            for b in Node::ALL {
                let (i, j) = (a.index(), b.index());
                m[(i, j)] = self.sigma[i] * self.sigma[j] * self.correlation(a, b);
            }
        }
        m
    }

    /// Checks everything except positive definiteness.
    fn check_components(&self) -> Result<()> {
        let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
        if !finite(&self.mu) || !finite(&self.alpha) || !finite(&self.node_times) {
            return Err(Error::params("non-finite mu, alpha or node time"));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::params(format!("sigma must be positive, got {:?}", self.sigma)));
        }
        if self.rho.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::params(format!("|rho| must be < 1, got {:?}", self.rho)));
        }
        if !(self.node_times[0] < self.node_times[1] && self.node_times[1] < self.node_times[2]) {
            return Err(Error::params("node times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        SkewNormal::new(*self).map(|_| ())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }
}

/// Frequencies (kHz) at the three node times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTriple {
    pub w0: f64,
    pub w2: f64,
    pub w5: f64,
}

impl FrequencyTriple {
    pub fn new(w0: f64, w2: f64, w5: f64) -> Self {
        Self { w0, w2, w5 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.w0, self.w2, self.w5]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { w0: a[0], w2: a[1], w5: a[2] }
    }

    pub fn get(&self, node: Node) -> f64 {
        self.to_array()[node.index()]
    }
}

/// A validated skew-normal distribution with its factorizations precomputed.
#[derive(Debug, Clone)]
pub struct SkewNormal {
    params: SkewNormalParams,
    mu: Vector3<f64>,
    alpha: Vector3<f64>,
    cov: Matrix3<f64>,
    chol: Matrix3<f64>,
    prec: Matrix3<f64>,
    /// log of the normal density's normalizing constant.
    log_norm: f64,
    delta: Vector3<f64>,
}

impl SkewNormal {
    pub fn new(params: SkewNormalParams) -> Result<Self> {
        params.check_components()?;
        let cov = params.covariance();
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::params(format!("covariance is not positive definite (rho = {:?})", params.rho)))?;
        let l = chol.l();
        let det = l.diagonal().iter().product::<f64>().powi(2);
        let prec = chol.inverse();
        let alpha = Vector3::from(params.alpha);
        let oa = cov * alpha;
        let delta = oa / (1.0 + alpha.dot(&oa)).sqrt();
        Ok(Self {
            params,
            mu: Vector3::from(params.mu),
            alpha,
            cov,
            chol: l,
            prec,
            log_norm: -1.5 * ln_2pi() - 0.5 * det.ln(),
            delta,
        })
    }

    pub fn params(&self) -> &SkewNormalParams {
        &self.params
    }

    pub fn covariance(&self) -> &Matrix3<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of Ω.
    pub fn cholesky(&self) -> &Matrix3<f64> {
        &self.chol
    }

    /// δ = Ωα / √(1 + αᵀΩα), the covariance of the latent sign variable with ω.
    pub fn delta(&self) -> [f64; 3] {
        self.delta.into()
    }

    #[inline]
    pub fn density(&self, w: &FrequencyTriple) -> f64 {
        self.density_at(w.to_array())
    }

    #[inline]
    pub fn density_at(&self, x: [f64; 3]) -> f64 {
        let d = Vector3::from(x) - self.mu;
        let q = d.dot(&(self.prec * d));
        2.0 * (self.log_norm - 0.5 * q).exp() * norm_cdf(self.alpha.dot(&d))
    }

    /// Mean vector, μ + √(2/π) δ.
    pub fn mean(&self) -> [f64; 3] {
        (self.mu + (2.0 / PI).sqrt() * self.delta).into()
    }

    /// Covariance of the distribution, Ω − (2/π) δδᵀ.
    pub fn moment_covariance(&self) -> Matrix3<f64> {
        self.cov - (2.0 / PI) * self.delta * self.delta.transpose()
    }

    fn range(&self, node: Node) -> (f64, f64) {
        let i = node.index();
        let h = MARGINAL_HALF_WIDTH * self.params.sigma[i];
        (self.params.mu[i] - h, self.params.mu[i] + h)
    }

    /// Bivariate marginal over the two kept nodes, by quadrature over the third.
    pub fn marginal_2d(&self, a: Node, b: Node) -> Result<Marginal2d> {
        if a == b {
            return Err(Error::input("marginal_2d needs two distinct nodes"));
        }
        Ok(Marginal2d { sn: self.clone(), keep: (a, b), drop: Node::third(a, b) })
    }

    /// Univariate marginal, by quadrature over the other two nodes.
    pub fn marginal_1d(&self, keep: Node) -> Marginal1d {
        Marginal1d { sn: self.clone(), keep }
    }

    /// Bivariate marginal in closed form: 2 ψ₂(x; Ω_kk) Φ(γᵀx).
    pub fn closed_marginal_2d(&self, a: Node, b: Node) -> Result<ClosedMarginal2d> {
        if a == b {
            return Err(Error::input("closed_marginal_2d needs two distinct nodes"));
        }
        let (i, j, c) = (a.index(), b.index(), Node::third(a, b).index());
        let okk = Matrix2::new(self.cov[(i, i)], self.cov[(i, j)], self.cov[(j, i)], self.cov[(j, j)]);
        let okc = Vector2::new(self.cov[(i, c)], self.cov[(j, c)]);
        let okk_inv = okk.try_inverse().ok_or_else(|| Error::params("singular 2x2 block"))?;
        let reg = okk_inv * okc;
        let cond_var = self.cov[(c, c)] - okc.dot(&reg);
        let ac = self.alpha[c];
        let gamma = (Vector2::new(self.alpha[i], self.alpha[j]) + ac * reg) / (1.0 + ac * ac * cond_var).sqrt();
        Ok(ClosedMarginal2d {
            mu: [self.mu[i], self.mu[j]],
            prec: [okk_inv[(0, 0)], okk_inv[(0, 1)], okk_inv[(1, 1)]],
            log_norm: -ln_2pi() - 0.5 * okk.determinant().ln(),
            gamma: gamma.into(),
        })
    }

    pub fn closed_marginal_1d(&self, keep: Node) -> ClosedMarginal1d {
        let i = keep.index();
        let r = keep.others().map(Node::index);
        let var = self.cov[(i, i)];
        let oir = Vector2::new(self.cov[(i, r[0])], self.cov[(i, r[1])]);
        let orr = Matrix2::new(
            self.cov[(r[0], r[0])],
            self.cov[(r[0], r[1])],
            self.cov[(r[1], r[0])],
            self.cov[(r[1], r[1])],
        );
        let cond = orr - oir * oir.transpose() / var;
        let ar = Vector2::new(self.alpha[r[0]], self.alpha[r[1]]);
        let gamma = (self.alpha[i] + oir.dot(&ar) / var) / (1.0 + ar.dot(&(cond * ar))).sqrt();
        ClosedMarginal1d { mu: self.mu[i], sd: var.sqrt(), gamma }
    }

    /// Deterministic draws via the augmented-normal construction: (u, x) jointly
    /// normal with Var u = 1, Cov(x, u) = δ, Var x = Ω; return μ + sign(u)·x.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<FrequencyTriple> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampler = self.sampler();
        (0..n).map(|_| sampler.draw(&mut rng)).collect()
    }

    pub fn sampler(&self) -> Sampler {
        let mut aug = Matrix4::zeros();
        aug[(0, 0)] = 1.0;
        for i in 0..3 {
            aug[(0, i + 1)] = self.delta[i];
            aug[(i + 1, 0)] = self.delta[i];
            for j in 0..3 {
                aug[(i + 1, j + 1)] = self.cov[(i, j)];
            }
        }
        // 1 − δᵀΩ⁻¹δ = 1/(1 + αᵀΩα) > 0, so the augmented matrix is always PD.
        let l = aug.cholesky().expect("augmented covariance is positive definite").l();
        Sampler { mu: self.params.mu, l }
    }

    /// Density of the increments (ω2 − ω0, ω5 − ω2) on `grid`, by quadrature along ω0.
    pub fn increment_projection(&self, grid: &IncrementGrid) -> Result<IncrementProjection> {
        let cov = increment_matrix() * self.cov * increment_matrix().transpose();
        let (w1, w2) = (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt());
        let need = IncrementGrid::COVERAGE_WIDTHS;
        let mean = increment_matrix() * Vector3::from(self.mean());
        for (ax, m, w, name) in [(&grid.rise, mean[0], w1, "rise"), (&grid.fall, mean[1], w2, "fall")] {
            if ax.start > m - need * w || ax.stop() < m + need * w {
                return Err(Error::input(format!(
                    "{name} axis [{}, {}] does not cover ±{need} widths ({w:.3} kHz) of the increment",
                    ax.start,
                    ax.stop()
                )));
            }
        }
        let (lo, hi) = self.range(Node::T0);
        let mut density = Vec::with_capacity(grid.rise.len);
        for d1 in grid.rise.values() {
            let mut row = Vec::with_capacity(grid.fall.len);
            for d2 in grid.fall.values() {
                let v = quadrature::integrate(
                    "increment projection",
                    |x0| self.density_at([x0, x0 + d1, x0 + d1 + d2]),
                    lo,
                    hi,
                    MARGINAL_REL_TOL,
                )?;
                row.push(v.max(0.0));
            }
            density.push(row);
        }
        let mc = increment_matrix() * self.moment_covariance() * increment_matrix().transpose();
        let grid = SpectrumGrid2D::new(
            grid.rise.values(),
            grid.fall.values(),
            density,
            self.params.node_times[2] - self.params.node_times[0],
            SpectrumKind::IncrementDensity,
        )?;
        Ok(IncrementProjection {
            grid,
            covariance: [[mc[(0, 0)], mc[(0, 1)]], [mc[(1, 0)], mc[(1, 1)]]],
            correlation: mc[(0, 1)] / (mc[(0, 0)] * mc[(1, 1)]).sqrt(),
        })
    }
}

fn increment_matrix() -> nalgebra::Matrix2x3<f64> {
    nalgebra::Matrix2x3::new(-1.0, 1.0, 0.0, 0.0, -1.0, 1.0)
}

/// Draws from a fixed distribution with a caller-supplied RNG.
#[derive(Debug, Clone)]
pub struct Sampler {
    mu: [f64; 3],
    l: Matrix4<f64>,
}

impl Sampler {
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> FrequencyTriple {
        let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let mut y = [0.0; 4];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..=i).map(|k| self.l[(i, k)] * z[k]).sum();
        }
        let s = if y[0] < 0.0 { -1.0 } else { 1.0 };
        FrequencyTriple::new(self.mu[0] + s * y[1], self.mu[1] + s * y[2], self.mu[2] + s * y[3])
    }
}

#[derive(Debug, Clone)]
pub struct Marginal2d {
    sn: SkewNormal,
    keep: (Node, Node),
    drop: Node,
}

impl Marginal2d {
    pub fn keep(&self) -> (Node, Node) {
        self.keep
    }

    pub fn density(&self, wa: f64, wb: f64) -> Result<f64> {
        let (a, b, c) = (self.keep.0.index(), self.keep.1.index(), self.drop.index());
        let (lo, hi) = self.sn.range(self.drop);
        let mut x = [0.0; 3];
        x[a] = wa;
        x[b] = wb;
        quadrature::integrate(
            "bivariate marginal",
            |t| {
                x[c] = t;
                self.sn.density_at(x)
            },
            lo,
            hi,
            MARGINAL_REL_TOL,
        )
    }

    /// Values on `axis_a` x `axis_b`, row per `axis_a` node.
    pub fn on_grid(&self, axis_a: &FrequencyAxis, axis_b: &FrequencyAxis) -> Result<Vec<Vec<f64>>> {
        axis_a
            .values()
            .into_iter()
            .map(|wa| axis_b.values().into_iter().map(|wb| self.density(wa, wb)).collect())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Marginal1d {
    sn: SkewNormal,
    keep: Node,
}

impl Marginal1d {
    pub fn density(&self, w: f64) -> Result<f64> {
        let i = self.keep.index();
        let [p, q] = self.keep.others();
        let (pi, qi) = (p.index(), q.index());
        let mut x = [0.0; 3];
        x[i] = w;
        quadrature::integrate_2d(
            "univariate marginal",
            |u, v| {
                x[pi] = u;
                x[qi] = v;
                self.sn.density_at(x)
            },
            self.sn.range(p),
            self.sn.range(q),
            MARGINAL_REL_TOL,
        )
    }

    pub fn on_axis(&self, axis: &FrequencyAxis) -> Result<Vec<f64>> {
        axis.values().into_iter().map(|w| self.density(w)).collect()
    }

    /// Mean of the marginal by quadrature of x·f(x) over μ ± 8σ.
    pub fn mean(&self) -> Result<f64> {
        let (lo, hi) = self.sn.range(self.keep);
        let rule = GaussLegendre::new(quadrature::PANEL_ORDER);
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for (x, w) in rule.composite(lo, hi, 16) {
            let f = self.density(x)?;
            m0 += w * f;
            m1 += w * x * f;
        }
        Ok(m1 / m0)
    }
}

/// Closed-form bivariate skew-normal marginal.
#[derive(Debug, Clone, Copy)]
pub struct ClosedMarginal2d {
    mu: [f64; 2],
    /// Upper triangle of the inverse 2x2 covariance block.
    prec: [f64; 3],
    log_norm: f64,
    gamma: [f64; 2],
}

impl ClosedMarginal2d {
    #[inline]
    pub fn density(&self, wa: f64, wb: f64) -> f64 {
        let (x, y) = (wa - self.mu[0], wb - self.mu[1]);
        let q = self.prec[0] * x * x + 2.0 * self.prec[1] * x * y + self.prec[2] * y * y;
        2.0 * (self.log_norm - 0.5 * q).exp() * norm_cdf(self.gamma[0] * x + self.gamma[1] * y)
    }

    /// Fills a row-major grid using the tabulated Φ; points where the Gaussian
    /// factor is below e^-700 are left at 0.
    pub fn fill_grid(&self, axis_a: &FrequencyAxis, axis_b: &FrequencyAxis, out: &mut [f64]) {
        debug_assert_eq!(out.len(), axis_a.len * axis_b.len);
        for i in 0..axis_a.len {
            let x = axis_a.at(i) - self.mu[0];
            let row = &mut out[i * axis_b.len..(i + 1) * axis_b.len];
            for (j, v) in row.iter_mut().enumerate() {
                let y = axis_b.at(j) - self.mu[1];
                let q = self.prec[0] * x * x + 2.0 * self.prec[1] * x * y + self.prec[2] * y * y;
                let e = self.log_norm - 0.5 * q;
                *v = if e < -700.0 {
                    0.0
                } else {
                    2.0 * e.exp() * crate::special::norm_cdf_fast(self.gamma[0] * x + self.gamma[1] * y)
                };
            }
        }
    }
}

/// Closed-form univariate skew-normal marginal: (2/sd) φ(z) Φ(γ sd z), z = (x − μ)/sd.
#[derive(Debug, Clone, Copy)]
pub struct ClosedMarginal1d {
    pub mu: f64,
    pub sd: f64,
    pub gamma: f64,
}

impl ClosedMarginal1d {
    #[inline]
    pub fn density(&self, w: f64) -> f64 {
        let x = w - self.mu;
        let z = x / self.sd;
        2.0 / self.sd * crate::special::norm_pdf(z) * norm_cdf(self.gamma * x)
    }
}

/// Axes for [`SkewNormal::increment_projection`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementGrid {
    /// ω2 − ω0 (kHz).
    pub rise: FrequencyAxis,
    /// ω5 − ω2 (kHz).
    pub fall: FrequencyAxis,
}

impl IncrementGrid {
    pub const COVERAGE_WIDTHS: f64 = 4.0;

    /// Symmetric grid around the increments' means with `n` points per axis,
    /// spanning ±4.5 of the Ω-based widths.
    pub fn covering(sn: &SkewNormal, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::input("increment grid needs at least 3 points per axis"));
        }
        let cov = increment_matrix() * sn.cov * increment_matrix().transpose();
        let mean = increment_matrix() * Vector3::from(sn.mean());
        let half = Self::COVERAGE_WIDTHS + 0.5;
        let axis = |m: f64, w: f64| {
            let step = 2.0 * half * w / (n - 1) as f64;
            FrequencyAxis { start: m - half * w, step, len: n }
        };
        Ok(Self { rise: axis(mean[0], cov[(0, 0)].sqrt()), fall: axis(mean[1], cov[(1, 1)].sqrt()) })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementProjection {
    pub grid: SpectrumGrid2D,
    /// Exact covariance of the increments from the skew-normal moments.
    pub covariance: [[f64; 2]; 2],
    pub correlation: f64,
}

impl IncrementProjection {
    /// Correlation coefficient estimated from the gridded density itself.
    pub fn grid_correlation(&self) -> f64 {
        let g = &self.grid;
        let (mut m0, mut mx, mut my) = (0.0, 0.0, 0.0);
        for (x, row) in g.pump_khz.iter().zip(&g.values) {
            for (y, v) in g.probe_khz.iter().zip(row) {
                m0 += v;
                mx += x * v;
                my += y * v;
            }
        }
        let (cx, cy) = (mx / m0, my / m0);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (x, row) in g.pump_khz.iter().zip(&g.values) {
            for (y, v) in g.probe_khz.iter().zip(row) {
                sxx += (x - cx).powi(2) * v;
                syy += (y - cy).powi(2) * v;
                sxy += (x - cx) * (y - cy) * v;
            }
        }
        sxy / (sxx * syy).sqrt()
    }
}
