//! Genetic-algorithm fit of [`SkewNormalParams`] to a [`Dataset`].
//!
//! A chromosome has 16 genes: μ, σ, ρ, α (three each) and four scale factors,
//! one per joint spectrum (2, 3, 5 ms) and one shared by the probe-alone
//! spectra. The objective is the summed squared residual over every data
//! point. Scale genes enter the residual linearly, so by default each
//! evaluation replaces them with their bounded least-squares optimum and writes
//! the result back into the chromosome.
//!
//! The evolutionary phase runs the forward model on a coarser frequency step;
//! its best individual is then re-scored and refined by Levenberg-Marquardt on
//! the dataset's own model axis.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{SkewNormal, SkewNormalParams};
use crate::error::{Error, Result};
use crate::forward::{Dataset, ForwardModel, GridSpec, MarginalRoute, ModelValues, Workspace};
use crate::grid::FrequencyAxis;

pub const N_PARAMS: usize = 12;
pub const N_SCALES: usize = 4;
pub const N_GENES: usize = N_PARAMS + N_SCALES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub mu_khz: [f64; 2],
    pub sigma_khz: [f64; 2],
    pub rho: [f64; 2],
    pub alpha: [f64; 2],
    pub scale: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Self { mu_khz: [4.0, 8.0], sigma_khz: [0.2, 2.0], rho: [-0.999, 0.999], alpha: [-10.0, 10.0], scale: [0.1, 10.0] }
    }
}

impl Bounds {
    pub fn gene(&self, i: usize) -> [f64; 2] {
        match i {
            0..=2 => self.mu_khz,
            3..=5 => self.sigma_khz,
            6..=8 => self.rho,
            9..=11 => self.alpha,
            _ => self.scale,
        }
    }

    fn validate(&self) -> Result<()> {
        for i in 0..N_GENES {
            let [lo, hi] = self.gene(i);
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::params(format!("bounds for gene {i} are not ordered: [{lo}, {hi}]")));
            }
        }
        if self.sigma_khz[0] <= 0.0 {
            return Err(Error::params("sigma lower bound must be positive"));
        }
        if self.rho[0] <= -1.0 || self.rho[1] >= 1.0 {
            return Err(Error::params("rho bounds must lie inside (-1, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each gene's range.
    pub mutation_scale: f64,
    pub elite_fraction: f64,
    pub tournament_size: usize,
    /// Stop when the best SSR has not improved by `stall_tolerance` (relative)
    /// for this many generations. 0 disables.
    pub stall_generations: usize,
    pub stall_tolerance: f64,
    /// Levenberg-Marquardt evaluations after the GA. 0 disables.
    pub polish_evaluations: usize,
    /// Model step (kHz) for the evolutionary phase; must place the data points on
    /// model nodes and be coarser than the dataset's model step, otherwise the
    /// dataset's own model axis is used. The polish always uses the dataset's.
    pub search_step_khz: Option<f64>,
    /// Replace scale genes by their least-squares optimum at each evaluation.
    pub profile_scales: bool,
    pub bounds: Bounds,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            population: 120,
            generations: 300,
            crossover_rate: 0.8,
            mutation_rate: 0.08,
            mutation_scale: 0.05,
            elite_fraction: 0.05,
            tournament_size: 3,
            stall_generations: 40,
            stall_tolerance: 1e-6,
            polish_evaluations: 1500,
            search_step_khz: Some(0.125),
            profile_scales: true,
            bounds: Bounds::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.population < 10 {
            return Err(Error::params("population must be at least 10"));
        }
        for (name, v) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("elite_fraction", self.elite_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::params(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if !(self.mutation_scale > 0.0) {
            return Err(Error::params("mutation_scale must be positive"));
        }
        if self.tournament_size == 0 {
            return Err(Error::params("tournament_size must be at least 1"));
        }
        Ok(())
    }

    fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population as f64).ceil() as usize).min(self.population)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SkewNormalParams,
    /// Joint 2, 3, 5 ms, probe-alone.
    pub scales: [f64; N_SCALES],
    pub ssr: f64,
    /// Best search-phase SSR after each generation.
    pub history: Vec<f64>,
    /// SSR of the best GA individual before polishing.
    pub ga_ssr: f64,
    pub generations_run: usize,
    pub evaluations: usize,
    pub seed: u64,
    /// Fitted covariance is positive definite.
    pub valid: bool,
}

fn genes_to_params(g: &[f64]) -> SkewNormalParams {
    SkewNormalParams::new([g[0], g[1], g[2]], [g[3], g[4], g[5]], [g[6], g[7], g[8]], [g[9], g[10], g[11]])
}

#[cfg(test)]
fn params_to_genes(p: &SkewNormalParams, scales: &[f64; N_SCALES]) -> [f64; N_GENES] {
    let mut g = [0.0; N_GENES];
    g[0..3].copy_from_slice(&p.mu);
    g[3..6].copy_from_slice(&p.sigma);
    g[6..9].copy_from_slice(&p.rho);
    g[9..12].copy_from_slice(&p.alpha);
    g[12..16].copy_from_slice(scales);
    g
}

/// Reusable residual evaluator for one dataset.
#[derive(Debug, Clone)]
pub struct SsrEvaluator {
    model: ForwardModel,
    observed: ModelValues,
    values: ModelValues,
    ws: Workspace,
    node_times: [f64; 3],
}

impl SsrEvaluator {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        Self::with_model_axis(dataset, dataset.grid.model)
    }

    /// Evaluator whose model is computed on `model` instead of the dataset's model axis.
    pub fn with_model_axis(dataset: &Dataset, model: FrequencyAxis) -> Result<Self> {
        dataset.validate()?;
        let grid = GridSpec { model, data: dataset.grid.data };
        let model = ForwardModel::new(grid, &dataset.pump, &dataset.probe)?;
        let observed = dataset.observed();
        Ok(Self {
            values: observed.clone(),
            observed,
            model,
            ws: Workspace::default(),
            node_times: dataset.meta.truth.map(|t| t.node_times).unwrap_or(SkewNormalParams::DEFAULT_NODE_TIMES),
        })
    }

    fn model_values(&mut self, params: &SkewNormalParams) -> bool {
        let mut p = *params;
        p.node_times = self.node_times;
        let Ok(sn) = SkewNormal::new(p) else { return false };
        self.model.evaluate_into(&sn, MarginalRoute::ClosedForm, &mut self.ws, &mut self.values).is_ok()
    }

    /// (model, observed) slices grouped by scale factor.
    fn blocks(&self) -> [Vec<(&[f64], &[f64])>; N_SCALES] {
        let g = |k: usize| vec![(self.values.grids[k].as_slice(), self.observed.grids[k].as_slice())];
        [
            g(0),
            g(1),
            g(2),
            self.values.spectra.iter().zip(&self.observed.spectra).map(|(m, d)| (m.as_slice(), d.as_slice())).collect(),
        ]
    }

    /// SSR with fixed scales; +∞ for an invalid covariance.
    pub fn ssr(&mut self, params: &SkewNormalParams, scales: &[f64; N_SCALES]) -> f64 {
        if !self.model_values(params) {
            return f64::INFINITY;
        }
        self.blocks()
            .iter()
            .zip(scales)
            .flat_map(|(block, &s)| block.iter().map(move |(m, d)| m.iter().zip(*d).map(|(m, d)| (s * m - d).powi(2)).sum::<f64>()))
            .sum()
    }

    fn optimal_scales(&self, bounds: [f64; 2]) -> ([f64; N_SCALES], f64) {
        let mut scales = [1.0; N_SCALES];
        let mut total = 0.0;
        for (k, block) in self.blocks().iter().enumerate() {
            let (mut mm, mut md, mut dd) = (0.0, 0.0, 0.0);
            for (m, d) in block {
                for (m, d) in m.iter().zip(*d) {
                    mm += m * m;
                    md += m * d;
                    dd += d * d;
                }
            }
            let s = if mm > 0.0 { (md / mm).clamp(bounds[0], bounds[1]) } else { 1.0 };
            scales[k] = s;
            total += (dd - 2.0 * s * md + s * s * mm).max(0.0);
        }
        (scales, total)
    }

    /// SSR with each scale set to its least-squares optimum within `bounds`.
    pub fn ssr_profiled(&mut self, params: &SkewNormalParams, bounds: [f64; 2]) -> (f64, [f64; N_SCALES]) {
        if !self.model_values(params) {
            return (f64::INFINITY, [1.0; N_SCALES]);
        }
        let (scales, total) = self.optimal_scales(bounds);
        (total, scales)
    }

    /// Residual vector `s·model − observed` for the given scales, or `None` for
    /// an invalid covariance. With `profile`, the scales are replaced by their optimum first.
    pub fn residuals(
        &mut self,
        params: &SkewNormalParams,
        scales: &mut [f64; N_SCALES],
        profile: Option<[f64; 2]>,
        out: &mut Vec<f64>,
    ) -> bool {
        if !self.model_values(params) {
            return false;
        }
        if let Some(bounds) = profile {
            *scales = self.optimal_scales(bounds).0;
        }
        out.clear();
        for (block, &s) in self.blocks().iter().zip(scales.iter()) {
            for (m, d) in block {
                out.extend(m.iter().zip(*d).map(|(m, d)| s * m - d));
            }
        }
        true
    }
}

/// Summed squared residual of the scaled model against `dataset`.
pub fn residual_ssr(params: &SkewNormalParams, scales: &[f64; N_SCALES], dataset: &Dataset) -> Result<f64> {
    Ok(SsrEvaluator::new(dataset)?.ssr(params, scales))
}

struct Objective<'a> {
    eval: SsrEvaluator,
    config: &'a FitConfig,
    count: usize,
}

impl Objective<'_> {
    /// Evaluates and, when profiling, writes the optimal scales back into `genes`.
    fn apply(&mut self, genes: &mut [f64; N_GENES]) -> f64 {
        self.count += 1;
        let p = genes_to_params(genes);
        if self.config.profile_scales {
            let (ssr, s) = self.eval.ssr_profiled(&p, self.config.bounds.scale);
            genes[N_PARAMS..].copy_from_slice(&s);
            ssr
        } else {
            let s: [f64; N_SCALES] = genes[N_PARAMS..].try_into().expect("4 scales");
            self.eval.ssr(&p, &s)
        }
    }
}

fn random_genes(rng: &mut ChaCha8Rng, b: &Bounds) -> [f64; N_GENES] {
    std::array::from_fn(|i| {
        let [lo, hi] = b.gene(i);
        rng.random_range(lo..=hi)
    })
}

fn tournament<'a>(rng: &mut ChaCha8Rng, pop: &'a [([f64; N_GENES], f64)], k: usize) -> &'a [f64; N_GENES] {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..k {
        let c = rng.random_range(0..pop.len());
        if pop[c].1 < pop[best].1 {
            best = c;
        }
    }
    &pop[best].0
}

/// Blend crossover (BLX-0.5) followed by Gaussian mutation, clipped to bounds.
fn offspring(rng: &mut ChaCha8Rng, a: &[f64; N_GENES], b: &[f64; N_GENES], c: &FitConfig) -> [f64; N_GENES] {
    let cross = rng.random::<f64>() < c.crossover_rate;
    std::array::from_fn(|i| {
        let [lo, hi] = c.bounds.gene(i);
        let mut x = if cross {
            let (l, h) = (a[i].min(b[i]), a[i].max(b[i]));
            let d = 0.5 * (h - l);
            rng.random_range((l - d)..=(h + d))
        } else {
            a[i]
        };
        if rng.random::<f64>() < c.mutation_rate {
            let z: f64 = StandardNormal.sample(rng);
            x += z * c.mutation_scale * (hi - lo);
        }
        x.clamp(lo, hi)
    })
}

/// The coarser axis the evolutionary phase runs on, if `step` is usable for this dataset.
fn search_axis(dataset: &Dataset, step: f64) -> Option<FrequencyAxis> {
    let m = dataset.grid.model;
    if !(step > m.step) {
        return None;
    }
    let len = ((m.stop() - m.start) / step + 1e-9).floor() as usize + 1;
    let axis = FrequencyAxis { start: m.start, step, len };
    GridSpec { model: axis, data: dataset.grid.data }.data_indices().ok()?;
    Some(axis)
}

/// Seeded evolutionary minimization of [`residual_ssr`], then a Levenberg-Marquardt polish.
pub fn ga_fit(dataset: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let search = match config.search_step_khz.and_then(|s| search_axis(dataset, s)) {
        Some(axis) => SsrEvaluator::with_model_axis(dataset, axis)?,
        None => SsrEvaluator::new(dataset)?,
    };
    let mut obj = Objective { eval: search, config, count: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pop: Vec<([f64; N_GENES], f64)> = Vec::with_capacity(config.population);
    let max_attempts = 1000 * config.population;
    let mut attempts = 0;
    while pop.len() < config.population {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Initialization(format!(
                "found only {} valid individuals in {max_attempts} draws",
                pop.len()
            )));
        }
        let mut g = random_genes(&mut rng, &config.bounds);
        if !genes_to_params(&g).is_valid() {
            continue;
        }
        let f = obj.apply(&mut g);
        if f.is_finite() {
            pop.push((g, f));
        }
    }
    pop.sort_by(|a, b| a.1.total_cmp(&b.1));

    let elites = config.elite_count();
    let mut history = vec![pop[0].1];
    let mut stall = 0;
    let mut generations_run = 0;
    for _ in 0..config.generations {
        generations_run += 1;
        let mut next: Vec<([f64; N_GENES], f64)> = pop[..elites].to_vec();
        while next.len() < config.population {
            let mut child = [0.0; N_GENES];
            let mut ok = false;
            for _ in 0..20 {
                let a = tournament(&mut rng, &pop, config.tournament_size);
                let b = tournament(&mut rng, &pop, config.tournament_size);
                child = offspring(&mut rng, a, b, config);
                if genes_to_params(&child).is_valid() {
                    ok = true;
                    break;
                }
            }
            let f = if ok { obj.apply(&mut child) } else { f64::INFINITY };
            next.push((child, f));
        }
        next.sort_by(|a, b| a.1.total_cmp(&b.1));
        let prev = pop[0].1;
        pop = next;
        history.push(pop[0].1);
        if pop[0].1 < prev * (1.0 - config.stall_tolerance) {
            stall = 0;
        } else {
            stall += 1;
        }
        if config.stall_generations > 0 && stall >= config.stall_generations {
            break;
        }
    }

    // Re-score on the dataset's own model axis.
    let mut best = pop[0].0;
    let mut exact = Objective { eval: SsrEvaluator::new(dataset)?, config, count: 0 };
    let mut best_f = exact.apply(&mut best);
    let ga_ssr = best_f;
    if config.polish_evaluations > 0 {
        let (g, f) = lm_polish(&mut exact, &best, config);
        if f < best_f {
            best = g;
            best_f = f;
        }
    }
    let params = genes_to_params(&best);
    Ok(FitResult {
        valid: SkewNormal::new(params).is_ok(),
        params,
        scales: best[N_PARAMS..].try_into().expect("4 scales"),
        ssr: best_f,
        history,
        ga_ssr,
        generations_run,
        evaluations: obj.count + exact.count,
        seed: config.seed,
    })
}

/// Levenberg-Marquardt on the residual vector in range-normalized coordinates,
/// with bound clipping and forward-difference Jacobians. Scales are profiled
/// out when the config says so, otherwise they are free coordinates.
fn lm_polish(obj: &mut Objective, start: &[f64; N_GENES], config: &FitConfig) -> ([f64; N_GENES], f64) {
    let b = config.bounds;
    let profile = config.profile_scales.then_some(b.scale);
    let free = if config.profile_scales { N_PARAMS } else { N_GENES };
    let range = |i: usize| {
        let [lo, hi] = b.gene(i);
        (lo, hi - lo)
    };
    let to_genes = |u: &[f64], base: &[f64; N_GENES]| -> [f64; N_GENES] {
        let mut g = *base;
        for (i, ui) in u.iter().enumerate() {
            let (lo, w) = range(i);
            g[i] = (lo + ui.clamp(0.0, 1.0) * w).clamp(lo, lo + w);
        }
        g
    };
    let mut residual = |g: &mut [f64; N_GENES], out: &mut Vec<f64>| -> bool {
        obj.count += 1;
        let p = genes_to_params(g);
        let mut s: [f64; N_SCALES] = g[N_PARAMS..].try_into().expect("4 scales");
        if !p.is_valid() || !obj.eval.residuals(&p, &mut s, profile, out) {
            return false;
        }
        g[N_PARAMS..].copy_from_slice(&s);
        true
    };

    let mut best = *start;
    let mut r = Vec::new();
    if !residual(&mut best, &mut r) {
        return (best, f64::INFINITY);
    }
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut u: Vec<f64> = (0..free).map(|i| (best[i] - range(i).0) / range(i).1).collect();
    let mut lambda = 1e-3;
    let mut used = 1;
    let mut rj = Vec::new();
    let m = r.len();
    while used + free < config.polish_evaluations {
        let mut jac = DMatrix::<f64>::zeros(m, free);
        for k in 0..free {
            let h = if u[k] + 1e-7 <= 1.0 { 1e-7 } else { -1e-7 };
            let mut uk = u.clone();
            uk[k] += h;
            let mut g = to_genes(&uk, &best);
            used += 1;
            if !residual(&mut g, &mut rj) {
                continue;
            }
            for i in 0..m {
                jac[(i, k)] = (rj[i] - r[i]) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(&r);
        let mut accepted = false;
        while lambda < 1e12 && used < config.polish_evaluations {
            let mut a = jtj.clone();
            for k in 0..free {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial_u: Vec<f64> = u.iter().zip(step.iter()).map(|(x, d)| (x + d).clamp(0.0, 1.0)).collect();
            let mut g = to_genes(&trial_u, &best);
            used += 1;
            if residual(&mut g, &mut rj) {
                let c: f64 = rj.iter().map(|v| v * v).sum();
                if c < cost {
                    let gain = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    u = trial_u;
                    best = g;
                    std::mem::swap(&mut r, &mut rj);
                    cost = c;
                    lambda = (lambda / 3.0).max(1e-9);
                    accepted = gain > 1e-12;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    (best, cost)
}

/// Mean and standard deviation of each parameter over the successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub mu_khz: ParamStats,
    pub sigma_khz: ParamStats,
    pub rho: ParamStats,
    pub alpha: ParamStats,
    pub runs: usize,
    pub failed_runs: usize,
    pub seeds: Vec<u64>,
}

impl FitSummary {
    pub fn mean_params(&self) -> SkewNormalParams {
        SkewNormalParams::new(self.mu_khz.mean, self.sigma_khz.mean, self.rho.mean, self.alpha.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFit {
    pub summary: FitSummary,
    pub runs: Vec<FitResult>,
}

impl MultiFit {
    pub fn write_json(&self, summary: &Path, log: &Path) -> Result<()> {
        std::fs::write(summary, crate::grid::to_json_sig(&self.summary)?)?;
        std::fs::write(log, crate::grid::to_json_sig(&self.runs)?)?;
        Ok(())
    }
}

/// `runs` independent fits with seeds `base_seed + i`.
pub fn multi_fit(dataset: &Dataset, config: &FitConfig, runs: usize, base_seed: u64) -> Result<MultiFit> {
    if runs < 2 {
        return Err(Error::params("multi_fit needs at least 2 runs"));
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed.wrapping_add(i)).collect();
    multi_fit_seeds(dataset, config, &seeds)
}

/// Independent fits, one per seed; fails only if every run fails.
pub fn multi_fit_seeds(dataset: &Dataset, config: &FitConfig, seeds: &[u64]) -> Result<MultiFit> {
    let mut results = Vec::new();
    let mut last_err = None;
    for &seed in seeds {
        match ga_fit(dataset, &FitConfig { seed, ..*config }) {
            Ok(r) => results.push(r),
            Err(e) => last_err = Some(e),
        }
    }
    if results.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::params("no seeds given")));
    }
    let stats = |get: &dyn Fn(&SkewNormalParams) -> [f64; 3]| -> ParamStats {
        let n = results.len() as f64;
        let mut mean = [0.0; 3];
        for r in &results {
            for (m, v) in mean.iter_mut().zip(get(&r.params)) {
                *m += v / n;
            }
        }
        let mut std = [0.0; 3];
        if results.len() > 1 {
            for r in &results {
                for ((s, v), m) in std.iter_mut().zip(get(&r.params)).zip(mean) {
                    *s += (v - m).powi(2) / (n - 1.0);
                }
            }
        }
        ParamStats { mean, std: std.map(f64::sqrt) }
    };
    let summary = FitSummary {
        mu_khz: stats(&|p| p.mu),
        sigma_khz: stats(&|p| p.sigma),
        rho: stats(&|p| p.rho),
        alpha: stats(&|p| p.alpha),
        runs: seeds.len(),
        failed_runs: seeds.len() - results.len(),
        seeds: seeds.to_vec(),
    };
    Ok(MultiFit { summary, runs: results })
}
