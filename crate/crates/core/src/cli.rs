//! Batch front-end: `echolab <synth|fit|echo|traj|baseline|report>`.
//!
//! Every command reads an optional JSON [`RunConfig`] (missing fields take
//! their defaults), writes into `--out`, and copies the effective config to
//! `run_config.json` there.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baseline::{self, LatticeConfig, SignCensus};
use crate::distributions::{IncrementGrid, Node, SkewNormal, SkewNormalParams};
use crate::echo::{self, EchoCurve, EchoOptions, PlateauConfig, PlateauReport};
use crate::error::{Error, Result};
use crate::forward::{self, Dataset, ForwardModel, GridSpec, HoleWidthCurve, MarginalRoute};
use crate::grid::{fmt_sig, to_json_sig, FrequencyAxis, SpectrumGrid2D, SpectrumKind};
use crate::inference::{self, FitConfig, FitResult, FitSummary, MultiFit};
use crate::pulses::{self, PulseSpec};
use crate::trajectories::{self, Extension, Interpolation, Trajectory, WindowSpec};

#[derive(Debug, Parser)]
#[command(name = "echolab", version, about = "Skew-normal trajectory inference and echo prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a pump-probe dataset from the configured truth.
    Synth(CommonArgs),
    /// Fit the skew-normal to a dataset with repeated genetic-algorithm runs.
    Fit(CommonArgs),
    /// Echo curves, plateau reports, optional per-run family and correlation sweep.
    Echo(CommonArgs),
    /// Windowed trajectory samples and final-time probabilities.
    Traj(CommonArgs),
    /// Ballistic-expansion counter-model.
    Baseline(CommonArgs),
    /// synth → fit → trajectories → echo → baseline, as a bundle of data files.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub truth: SkewNormalParams,
    pub pump: PulseSpec,
    pub probe: PulseSpec,
    pub grid: GridSpec,
    /// Noise level for synthesis, relative to each spectrum's peak.
    pub noise_sigma: f64,
    /// Dataset to fit; synthesized from `truth` when absent.
    pub dataset: Option<PathBuf>,
    pub fit: FitConfig,
    pub runs: usize,
    pub echo: EchoSpec,
    pub traj: TrajSpec,
    pub baseline: BaselineSpec,
    pub report: ReportSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            truth: SkewNormalParams::reference_fit(),
            pump: PulseSpec::default(),
            probe: PulseSpec::default(),
            grid: GridSpec::default(),
            noise_sigma: 0.0,
            dataset: None,
            fit: FitConfig::default(),
            runs: 12,
            echo: EchoSpec::default(),
            traj: TrajSpec::default(),
            baseline: BaselineSpec::default(),
            report: ReportSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EchoSpec {
    /// Parameters for the echo; `truth` when absent.
    pub params: Option<SkewNormalParams>,
    /// Per-run fit log (`fit_runs.json`) to draw a curve family from.
    pub fit_runs: Option<PathBuf>,
    pub tau_stop_ms: f64,
    pub tau_step_ms: f64,
    /// The first entry is the headline method.
    pub interpolations: Vec<Interpolation>,
    pub extension: Extension,
    pub nodes_per_axis: usize,
    pub check_convergence: bool,
    pub plateau: PlateauConfig,
    pub sweep: Option<SweepSpec>,
}

impl Default for EchoSpec {
    fn default() -> Self {
        Self {
            params: None,
            fit_runs: None,
            tau_stop_ms: 6.0,
            tau_step_ms: 0.05,
            interpolations: vec![Interpolation::MonotoneCubic, Interpolation::Linear],
            extension: Extension::Hold,
            nodes_per_axis: echo::DEFAULT_NODES,
            check_convergence: true,
            plateau: PlateauConfig::default(),
            sweep: None,
        }
    }
}

impl EchoSpec {
    fn taus(&self) -> Result<Vec<f64>> {
        if !(self.tau_step_ms > 0.0) || !(self.tau_stop_ms > 0.0) {
            return Err(Error::input("echo τ grid needs a positive step and stop"));
        }
        Ok(echo::tau_grid(self.tau_stop_ms, self.tau_step_ms))
    }

    fn options(&self, interpolation: Interpolation) -> EchoOptions {
        EchoOptions {
            interpolation,
            extension: self.extension,
            nodes_per_axis: self.nodes_per_axis,
            check_convergence: self.check_convergence,
        }
    }

    fn headline(&self) -> Result<Interpolation> {
        self.interpolations.first().copied().ok_or_else(|| Error::input("no interpolation methods configured"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub rho25: Vec<f64>,
    pub rho05: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajGroup {
    pub name: String,
    pub first: WindowSpec,
    pub second: WindowSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajSpec {
    pub params: Option<SkewNormalParams>,
    pub groups: Vec<TrajGroup>,
    pub count: usize,
    pub interpolation: Interpolation,
    /// Time step of the exported trajectory samples.
    pub time_step_ms: f64,
    /// Axis for the final-node probability.
    pub final_axis: FrequencyAxis,
}

impl Default for TrajSpec {
    fn default() -> Self {
        let start = WindowSpec::new(6.5, 0.5, Node::T0);
        let group = |name: &str, c: f64| TrajGroup { name: name.into(), first: start, second: WindowSpec::new(c, 0.52, Node::T2) };
        Self {
            params: None,
            groups: vec![group("a", 6.5), group("b", 7.07), group("c", 5.93)],
            count: 50,
            interpolation: Interpolation::MonotoneCubic,
            time_step_ms: 0.05,
            final_axis: FrequencyAxis { start: 3.5, step: 0.05, len: 131 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSpec {
    pub lattice: LatticeConfig,
    pub atoms: usize,
    /// Trajectories written to the ensemble CSV.
    pub export: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { lattice: LatticeConfig::default(), atoms: 20_000, export: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSpec {
    /// Pump frequency for the hole-width curve.
    pub pump_khz: f64,
    /// Points per axis of the increment projection.
    pub increment_points: usize,
    /// Include one echo curve per fit run.
    pub echo_family: bool,
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self { pump_khz: 6.45, increment_points: 81, echo_family: true }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.pump.validate()?;
        self.probe.validate()?;
        self.grid.data_indices()?;
        self.fit.validate()?;
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::input("noise_sigma must be non-negative"));
        }
        if self.runs < 2 {
            return Err(Error::params("runs must be at least 2"));
        }
        self.echo.taus()?;
        self.echo.headline()?;
        self.baseline.lattice.validate()?;
        Ok(())
    }
}

/// Files a command wrote, relative to its output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub files: Vec<String>,
}

struct Sink<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn file(&mut self, name: &str) -> Result<File> {
        Ok(File::create(self.path(name))?)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        fs::write(self.path(name), to_json_sig(value)?)?;
        Ok(())
    }

    fn done(self) -> Outputs {
        Outputs { files: self.files }
    }
}

fn need_seed(args: &CommonArgs) -> Result<u64> {
    args.seed.ok_or_else(|| Error::input("--seed is required for this command"))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outputs> {
    let (args, f): (&CommonArgs, fn(&RunConfig, &CommonArgs) -> Result<Outputs>) = match &cli.command {
        Command::Synth(a) => (a, cmd_synth),
        Command::Fit(a) => (a, cmd_fit),
        Command::Echo(a) => (a, cmd_echo),
        Command::Traj(a) => (a, cmd_traj),
        Command::Baseline(a) => (a, cmd_baseline),
        Command::Report(a) => (a, cmd_report),
    };
    let cfg = RunConfig::load(args.config.as_deref())?;
    cfg.validate()?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("run_config.json"), to_json_sig(&cfg)?)?;
    f(&cfg, args)
}

fn dataset_for(cfg: &RunConfig, seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        Some(p) => Dataset::read_json(p),
        None => forward::synth_dataset(&cfg.truth, &cfg.pump, &cfg.probe, &cfg.grid, cfg.noise_sigma, seed),
    }
}

pub fn cmd_synth(cfg: &RunConfig, args: &CommonArgs) -> Result<Outputs> {
    let seed = need_seed(args)?;
    let mut sink = Sink::new(&args.out)?;
    let ds = forward::synth_dataset(&cfg.truth, &cfg.pump, &cfg.probe, &cfg.grid, cfg.noise_sigma, seed)?;
    ds.write_json(&sink.path("dataset.json"))?;
    if args.format == Format::Csv {
        ds.write_csv_dir(&sink.path("dataset_csv"))?;
    }
    Ok(sink.done())
}

fn write_fit_runs_csv<W: std::io::Write>(runs: &[FitResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["run".to_string(), "seed".into(), "ssr".into()];
    for name in ["mu", "sigma", "rho", "alpha"] {
        let tags: [&str; 3] = if name == "rho" { ["02", "25", "05"] } else { ["0", "2", "5"] };
        header.extend(tags.iter().map(|t| format!("{name}{t}")));
    }
    out.write_record(&header)?;
    for (i, r) in runs.iter().enumerate() {
        let p = &r.params;
        let mut row = vec![i.to_string(), r.seed.to_string(), fmt_sig(r.ssr)];
        row.extend(p.mu.iter().chain(&p.sigma).chain(&p.rho).chain(&p.alpha).map(|v| fmt_sig(*v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_fit(cfg: &RunConfig, args: &CommonArgs) -> Result<Outputs> {
    let seed = need_seed(args)?;
    let mut sink = Sink::new(&args.out)?;
    let ds = dataset_for(cfg, seed)?;
    let fit = inference::multi_fit(&ds, &cfg.fit, cfg.runs, seed)?;
    let (s, l) = (sink.path("fit_summary.json"), sink.path("fit_runs.json"));
    fit.write_json(&s, &l)?;
    if args.format == Format::Csv {
        write_fit_runs_csv(&fit.runs, sink.file("fit_runs.csv")?)?;
    }
    Ok(sink.done())
}

fn interp_tag(i: Interpolation) -> &'static str {
    match i {
        Interpolation::Linear => "linear",
        Interpolation::MonotoneCubic => "monotone_cubic",
    }
}

/// Convergence status of one curve, for metadata files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStatus {
    pub label: String,
    pub interpolation: Interpolation,
    pub all_converged: bool,
    pub unconverged_tau_ms: Vec<f64>,
    /// τ from which the extension policy shapes ε.
    pub model_dependent_from_ms: Option<f64>,
    pub plateau: PlateauReport,
}

fn curve_status(label: &str, c: &EchoCurve, plateau: PlateauReport) -> CurveStatus {
    CurveStatus {
        label: label.into(),
        interpolation: c.interpolation,
        all_converged: c.all_converged(),
        unconverged_tau_ms: c.tau_ms.iter().zip(&c.converged).filter(|(_, ok)| !**ok).map(|(t, _)| *t).collect(),
        model_dependent_from_ms: c.tau_ms.iter().zip(&c.model_dependent).find(|(_, m)| **m).map(|(t, _)| *t),
        plateau,
    }
}

fn write_curve(sink: &mut Sink, stem: &str, c: &EchoCurve, format: Format) -> Result<()> {
    match format {
        Format::Csv => c.write_csv(sink.file(&format!("{stem}.csv"))?),
        Format::Json => sink.json(&format!("{stem}.json"), c),
    }
}

/// Long-format CSV of labelled echo curves: curve, interpolation, tau_ms, epsilon, converged_flag.
fn write_family_csv<W: std::io::Write>(curves: &[(String, EchoCurve)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["curve", "interpolation", "tau_ms", "epsilon", "converged_flag"])?;
    for (label, c) in curves {
        for ((t, e), ok) in c.tau_ms.iter().zip(&c.epsilon).zip(&c.converged) {
            out.write_record([label.as_str(), interp_tag(c.interpolation), &fmt_sig(*t), &fmt_sig(*e), &(*ok as u8).to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Echo curves for each labelled parameter set: every configured interpolation
/// for `full`, the headline one for `family`.
fn echo_curves(
    spec: &EchoSpec,
    full: &[(String, SkewNormalParams)],
    family: &[(String, SkewNormalParams)],
) -> Result<(Vec<(String, EchoCurve)>, Vec<CurveStatus>)> {
    let taus = spec.taus()?;
    let mut curves = Vec::new();
    let mut status = Vec::new();
    let mut push = |label: &String, p: &SkewNormalParams, m: Interpolation| -> Result<()> {
        let c = echo::echo_amplitude(p, &taus, &spec.options(m))?;
        let r = echo::detect_plateau(&c, &spec.plateau)?;
        status.push(curve_status(label, &c, r));
        curves.push((label.clone(), c));
        Ok(())
    };
    for (label, p) in full {
        for &m in &spec.interpolations {
            push(label, p, m)?;
        }
    }
    let headline = spec.headline()?;
    for (label, p) in family {
        push(label, p, headline)?;
    }
    Ok((curves, status))
}

fn read_fit_runs(path: &Path) -> Result<Vec<FitResult>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn cmd_echo(cfg: &RunConfig, args: &CommonArgs) -> Result<Outputs> {
    let mut sink = Sink::new(&args.out)?;
    let spec = &cfg.echo;
    let params = spec.params.unwrap_or(cfg.truth);
    let family: Vec<(String, SkewNormalParams)> = match &spec.fit_runs {
        Some(p) => read_fit_runs(p)?.into_iter().enumerate().map(|(i, r)| (format!("run_{i}"), r.params)).collect(),
        None => Vec::new(),
    };
    let (curves, status) = echo_curves(spec, &[("params".into(), params)], &family)?;
    for ((label, c), st) in curves.iter().zip(&status) {
        if label == "params" {
            let tag = interp_tag(c.interpolation);
            write_curve(&mut sink, &format!("echo_{tag}"), c, args.format)?;
            sink.json(&format!("plateau_{tag}.json"), &st.plateau)?;
        }
    }
    if !family.is_empty() {
        write_family_csv(&curves, sink.file("echo_family.csv")?)?;
    }
    if let Some(sw) = &spec.sweep {
        let taus = spec.taus()?;
        let sweep = echo::correlation_sweep(&params, &sw.rho25, &sw.rho05, &taus, &spec.options(spec.headline()?), &spec.plateau)?;
        match args.format {
            Format::Csv => sweep.write_csv(sink.file("sweep.csv")?)?,
            Format::Json => sink.json("sweep.json", &sweep)?,
        }
    }
    sink.json("echo_summary.json", &status)?;
    Ok(sink.done())
}

/// Trajectory groups and their final-node probabilities.
#[derive(Debug, Clone)]
struct TrajOutput {
    groups: Vec<(TrajGroup, trajectories::TrajectorySample, crate::grid::Spectrum1D)>,
    times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajGroupMeta {
    pub name: String,
    pub first: WindowSpec,
    pub second: WindowSpec,
    pub acceptance_rate: f64,
    pub draws: usize,
    /// ∫ P_f over the final axis.
    pub final_mass: f64,
}

fn run_traj(spec: &TrajSpec, params: &SkewNormalParams, seed: u64) -> Result<TrajOutput> {
    if spec.groups.is_empty() {
        return Err(Error::input("no trajectory groups configured"));
    }
    if !(spec.time_step_ms > 0.0) {
        return Err(Error::input("trajectory time step must be positive"));
    }
    let mut groups = Vec::new();
    for (i, g) in spec.groups.iter().enumerate() {
        let s = trajectories::sample_trajectories(params, &g.first, &g.second, spec.count, seed.wrapping_add(i as u64), spec.interpolation)?;
        let pf = trajectories::windowed_final_probability(params, &g.first, &g.second, &spec.final_axis)?;
        groups.push((g.clone(), s, pf));
    }
    let last = params.node_times[2];
    Ok(TrajOutput { groups, times: echo::tau_grid(last, spec.time_step_ms) })
}

impl TrajOutput {
    fn meta(&self) -> Vec<TrajGroupMeta> {
        self.groups
            .iter()
            .map(|(g, s, pf)| TrajGroupMeta {
                name: g.name.clone(),
                first: g.first,
                second: g.second,
                acceptance_rate: s.acceptance_rate,
                draws: s.draws,
                final_mass: pf.mass(),
            })
            .collect()
    }

    /// CSV: time_ms, freq_khz, trajectory_id, weight, group.
    fn write_trajectories<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_ms", "freq_khz", "trajectory_id", "weight", "group"])?;
        let mut id = 0usize;
        for (g, s, _) in &self.groups {
            for tr in &s.trajectories {
                for &t in &self.times {
                    out.write_record([fmt_sig(t), fmt_sig(tr.eval(t)), id.to_string(), fmt_sig(tr.weight), g.name.clone()])?;
                }
                id += 1;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// CSV: freq_khz, then one P_f column per group.
    fn write_final<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["freq_khz".to_string()];
        header.extend(self.groups.iter().map(|(g, _, _)| format!("p_{}", g.name)));
        out.write_record(&header)?;
        let freqs = &self.groups[0].2.freq_khz;
        for (k, f) in freqs.iter().enumerate() {
            let mut row = vec![fmt_sig(*f)];
            row.extend(self.groups.iter().map(|(_, _, pf)| fmt_sig(pf.values[k])));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn cmd_traj(cfg: &RunConfig, args: &CommonArgs) -> Result<Outputs> {
    let seed = need_seed(args)?;
    let mut sink = Sink::new(&args.out)?;
    let params = cfg.traj.params.unwrap_or(cfg.truth);
    let out = run_traj(&cfg.traj, &params, seed)?;
    match args.format {
        Format::Csv => {
            out.write_trajectories(sink.file("trajectories.csv")?)?;
            out.write_final(sink.file("final_probability.csv")?)?;
        }
        Format::Json => {
            let trajs: Vec<(&str, &[Trajectory])> =
                out.groups.iter().map(|(g, s, _)| (g.name.as_str(), s.trajectories.as_slice())).collect();
            sink.json("trajectories.json", &trajs)?;
            let finals: Vec<(&str, &crate::grid::Spectrum1D)> = out.groups.iter().map(|(g, _, pf)| (g.name.as_str(), pf)).collect();
            sink.json("final_probability.json", &finals)?;
        }
    }
    sink.json("trajectories_meta.json", &out.meta())?;
    Ok(sink.done())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub recoil_hz: f64,
    pub peak_depth_er: f64,
    pub node_mean_khz: [f64; 3],
    pub node_sd_khz: [f64; 3],
    pub census: SignCensus,
    pub plateau: PlateauReport,
    pub resolution_warning: bool,
}

fn run_baseline(spec: &BaselineSpec, taus: &[f64], plateau: &PlateauConfig, seed: u64) -> Result<(baseline::BallisticEnsemble, baseline::BaselineEcho, BaselineSummary)> {
    let ens = baseline::ballistic_ensemble(&spec.lattice, spec.atoms, seed)?;
    let be = baseline::baseline_echo(&ens, taus, plateau)?;
    let census = baseline::baseline_trajectory_census(&ens.node_triples);
    let n = ens.node_triples.len() as f64;
    let mut mean = [0.0; 3];
    let mut sd = [0.0; 3];
    for t in &ens.node_triples {
        for (m, v) in mean.iter_mut().zip(t.to_array()) {
            *m += v / n;
        }
    }
    for t in &ens.node_triples {
        for ((s, v), m) in sd.iter_mut().zip(t.to_array()).zip(mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let summary = BaselineSummary {
        recoil_hz: spec.lattice.recoil_hz(),
        peak_depth_er: spec.lattice.peak_depth_er(),
        node_mean_khz: mean,
        node_sd_khz: sd.map(f64::sqrt),
        census,
        plateau: be.plateau.clone(),
        resolution_warning: be.resolution_warning,
    };
    Ok((ens, be, summary))
}

pub fn cmd_baseline(cfg: &RunConfig, args: &CommonArgs) -> Result<Outputs> {
    let seed = need_seed(args)?;
    let mut sink = Sink::new(&args.out)?;
    let (ens, be, summary) = run_baseline(&cfg.baseline, &cfg.echo.taus()?, &cfg.echo.plateau, seed)?;
    write_curve(&mut sink, "baseline_echo", &be.curve, args.format)?;
    sink.json("baseline_summary.json", &summary)?;
    let k = cfg.baseline.export.min(ens.trajectories.len());
    trajectories::write_trajectories_csv(&ens.trajectories[..k], &ens.times, sink.file("baseline_trajectories.csv")?)?;
    Ok(sink.done())
}

/// Largest deviations of a fit from the truth it was synthesized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub mu_abs_khz: f64,
    pub sigma_rel: f64,
    pub rho_abs: f64,
    pub alpha_abs: f64,
}

impl Recovery {
    pub fn new(fit: &SkewNormalParams, truth: &SkewNormalParams) -> Self {
        let max_abs = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Self {
            mu_abs_khz: max_abs(&fit.mu, &truth.mu),
            sigma_rel: fit.sigma.iter().zip(&truth.sigma).map(|(x, y)| (x / y - 1.0).abs()).fold(0.0, f64::max),
            rho_abs: max_abs(&fit.rho, &truth.rho),
            alpha_abs: max_abs(&fit.alpha, &truth.alpha),
        }
    }

    /// μ within 0.05 kHz, σ within 10 %, ρ within 0.05, α within 1.
    pub fn within_noise_free_tolerance(&self) -> bool {
        self.mu_abs_khz <= 0.05 && self.sigma_rel <= 0.10 && self.rho_abs <= 0.05 && self.alpha_abs <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionFailure {
    pub section: String,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportSummary {
    pub seed: u64,
    pub truth: Option<SkewNormalParams>,
    pub noise_sigma: f64,
    pub instrumental_width_hz: Option<f64>,
    pub hole_widths: Option<HoleWidthCurve>,
    pub fit: Option<FitSummary>,
    pub recovery: Option<Recovery>,
    pub increment_correlation: Option<f64>,
    pub echo: Vec<CurveStatus>,
    pub baseline: Option<BaselineSummary>,
    /// Sections that failed; their files are missing from the bundle.
    pub partial: Vec<SectionFailure>,
    pub files: Vec<String>,
}

/// The seven files of a complete report bundle.
pub const REPORT_FILES: [&str; 7] = [
    "fig2c_hole_widths.csv",
    "fig3_spectra.json",
    "fig4_trajectories.csv",
    "fig4_final_probability.csv",
    "fig4d_increment_projection.csv",
    "fig5_echo_family.csv",
    "summary.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpectraBundle {
    delays_ms: Vec<f64>,
    data: Vec<SpectrumGrid2D>,
    /// Model at the fitted mean parameters, scaled by the best run's scales.
    model: Vec<SpectrumGrid2D>,
}

fn spectra_bundle(ds: &Dataset, fit: &MultiFit) -> Result<SpectraBundle> {
    let best = fit
        .runs
        .iter()
        .min_by(|a, b| a.ssr.total_cmp(&b.ssr))
        .ok_or_else(|| Error::input("fit produced no runs"))?;
    let mean = fit.summary.mean_params();
    let model = ForwardModel::new(ds.grid, &ds.pump, &ds.probe)?;
    let values = model.evaluate(&SkewNormal::new(mean)?, MarginalRoute::ClosedForm)?;
    let axis = ds.grid.data.values();
    let n = axis.len();
    let grids = values
        .grids
        .iter()
        .zip(&ds.delays_ms)
        .enumerate()
        .map(|(k, (flat, &d))| {
            let rows = flat.chunks(n).map(|r| r.iter().map(|v| v * best.scales[k]).collect()).collect();
            SpectrumGrid2D::new(axis.clone(), axis.clone(), rows, d, SpectrumKind::ConvolvedMarginal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectraBundle { delays_ms: ds.delays_ms.clone(), data: ds.joint.clone(), model: grids })
}

fn write_increment_csv<W: std::io::Write>(g: &SpectrumGrid2D, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rise_khz", "fall_khz", "density"])?;
    for (x, row) in g.pump_khz.iter().zip(&g.values) {
        for (y, v) in g.probe_khz.iter().zip(row) {
            out.write_record([fmt_sig(*x), fmt_sig(*y), fmt_sig(*v)])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig, args: &CommonArgs) -> Result<Outputs> {
    let seed = need_seed(args)?;
    let mut sink = Sink::new(&args.out)?;
    let mut summary = ReportSummary { seed, truth: Some(cfg.truth), noise_sigma: cfg.noise_sigma, ..Default::default() };
    let mut failures: Vec<(String, Error)> = Vec::new();
    let section = |name: &str, r: Result<()>, failures: &mut Vec<(String, Error)>| {
        if let Err(e) = r {
            failures.push((name.to_string(), e));
        }
    };

    let r = (|| -> Result<()> {
        let curve = forward::hole_width_curve(&cfg.truth, cfg.report.pump_khz, &cfg.pump, &cfg.probe, &cfg.grid.model)?;
        curve.write_csv(sink.file("fig2c_hole_widths.csv")?)?;
        summary.instrumental_width_hz = Some(pulses::instrumental_width(&cfg.pump, &cfg.probe)?);
        summary.hole_widths = Some(curve);
        Ok(())
    })();
    section("hole_widths", r, &mut failures);

    let mut fitted: Option<MultiFit> = None;
    let r = (|| -> Result<()> {
        let ds = dataset_for(cfg, seed)?;
        let fit = inference::multi_fit(&ds, &cfg.fit, cfg.runs, seed)?;
        sink.json("fig3_spectra.json", &spectra_bundle(&ds, &fit)?)?;
        summary.recovery = Some(Recovery::new(&fit.summary.mean_params(), &cfg.truth));
        summary.fit = Some(fit.summary.clone());
        fitted = Some(fit);
        Ok(())
    })();
    section("fit", r, &mut failures);
    let fitted_mean = fitted.as_ref().map(|f| f.summary.mean_params()).filter(|p| p.is_valid());

    let r = (|| -> Result<()> {
        let params = fitted_mean.ok_or_else(|| Error::input("no valid fitted parameters"))?;
        let out = run_traj(&cfg.traj, &params, seed)?;
        out.write_trajectories(sink.file("fig4_trajectories.csv")?)?;
        out.write_final(sink.file("fig4_final_probability.csv")?)?;
        let sn = SkewNormal::new(params)?;
        let proj = sn.increment_projection(&IncrementGrid::covering(&sn, cfg.report.increment_points)?)?;
        write_increment_csv(&proj.grid, sink.file("fig4d_increment_projection.csv")?)?;
        summary.increment_correlation = Some(proj.correlation);
        Ok(())
    })();
    section("trajectories", r, &mut failures);

    let r = (|| -> Result<()> {
        let mut full = vec![("truth".to_string(), cfg.truth)];
        if let Some(p) = fitted_mean {
            full.push(("fit_mean".into(), p));
        }
        let family: Vec<(String, SkewNormalParams)> = match (&fitted, cfg.report.echo_family) {
            (Some(f), true) => {
                f.runs.iter().enumerate().filter(|(_, r)| r.valid).map(|(i, r)| (format!("run_{i}"), r.params)).collect()
            }
            _ => Vec::new(),
        };
        let (curves, status) = echo_curves(&cfg.echo, &full, &family)?;
        write_family_csv(&curves, sink.file("fig5_echo_family.csv")?)?;
        summary.echo = status;
        Ok(())
    })();
    section("echo", r, &mut failures);

    let r = (|| -> Result<()> {
        let (_, _, b) = run_baseline(&cfg.baseline, &cfg.echo.taus()?, &cfg.echo.plateau, seed)?;
        summary.baseline = Some(b);
        Ok(())
    })();
    section("baseline", r, &mut failures);

    summary.partial = failures
        .iter()
        .map(|(s, e)| SectionFailure { section: s.clone(), error: e.to_string(), exit_code: e.exit_code() })
        .collect();
    summary.files = sink.files.clone();
    summary.files.push("summary.json".into());
    sink.json("summary.json", &summary)?;
    match failures.into_iter().next() {
        Some((_, e)) => Err(e),
        None => Ok(sink.done()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = to_json_sig(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(to_json_sig(&back).unwrap(), text);
        assert_eq!(back.fit, cfg.fit);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"runs": 3, "echo": {"nodes_per_axis": 24}}"#).unwrap();
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.echo.nodes_per_axis, 24);
        assert_eq!(cfg.echo.tau_step_ms, 0.05);
        assert_eq!(cfg.truth, SkewNormalParams::reference_fit());
    }

    #[test]
    fn parses_command_line() {
        let cli = Cli::try_parse_from(["echolab", "echo", "--out", "x", "--seed", "3", "--format", "json"]).unwrap();
        match cli.command {
            Command::Echo(a) => {
                assert_eq!(a.seed, Some(3));
                assert_eq!(a.format, Format::Json);
            }
            _ => panic!("wrong command"),
        }
        assert!(Cli::try_parse_from(["echolab", "fit"]).is_err());
    }

    #[test]
    fn recovery_tolerance() {
        let t = SkewNormalParams::reference_fit();
        assert!(Recovery::new(&t, &t).within_noise_free_tolerance());
        let off = t.with_rho([0.80, 0.82, 0.80]);
        assert!(!Recovery::new(&off, &t).within_noise_free_tolerance());
    }
}
