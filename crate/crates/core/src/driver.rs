//! Run configuration, the time loop, convergence studies and the CLI.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::Parser;

use crate::adapt::{adapt_step, solve_with, AdaptParams, AdaptState, CoarsenRule};
use crate::assembly::{assemble_system, ConstrainedSolver, PenaltySpec};
use crate::error::{ConfigError, Error};
use crate::estimator::{effectivity, Estimate};
use crate::io::{csv_number, write_mesh_svg, write_vtk};
use crate::mesh::Mesh;
use crate::problems::{self, ProblemSpec};
use crate::space::{broken_h1_error, interpolate, DiscreteField, EgSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Example1,
    Example2,
    SmokeLinear,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Example1 => "example1",
            ProblemKind::Example2 => "example2",
            ProblemKind::SmokeLinear => "smoke_linear",
        }
    }

    pub fn spec(self) -> ProblemSpec {
        problems::by_name(self.name()).expect("every kind has a definition")
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "example1" => Ok(ProblemKind::Example1),
            "example2" => Ok(ProblemKind::Example2),
            "smoke_linear" => Ok(ProblemKind::SmokeLinear),
            _ => Err("expected example1, example2 or smoke_linear".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Uniform,
    AdaptivePureRefine,
    AdaptiveFull,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Mode::Uniform),
            "adaptive_pure_refine" => Ok(Mode::AdaptivePureRefine),
            "adaptive_full" => Ok(Mode::AdaptiveFull),
            _ => Err("expected uniform, adaptive_pure_refine or adaptive_full".into()),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Uniform => "uniform",
            Mode::AdaptivePureRefine => "adaptive_pure_refine",
            Mode::AdaptiveFull => "adaptive_full",
        })
    }
}

/// Keys accepted in config files, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "problem",
    "mode",
    "k",
    "theta",
    "alpha",
    "h0",
    "dt",
    "T_final",
    "tau",
    "theta_coarse",
    "theta_refine",
    "max_iters",
    "cycles",
    "output_dir",
    "snapshot_times",
    "coarsen_rule",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub mode: Mode,
    pub k: usize,
    pub theta: i32,
    pub alpha: f64,
    pub h0: f64,
    pub dt: f64,
    pub t_final: f64,
    pub tau: f64,
    pub theta_coarse: f64,
    pub theta_refine: f64,
    pub max_iters: usize,
    pub cycles: usize,
    pub output_dir: Option<PathBuf>,
    pub snapshot_times: Vec<f64>,
    pub coarsen_rule: CoarsenRule,
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: reason.into() }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| invalid(key, value, e.to_string()))
}

/// Splits `key = value` lines; blank lines and `#` comments are skipped.
/// Returns `(line number, key, value)`.
pub fn parse_config_text(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Malformed { line: i + 1, text: raw.to_string() });
        };
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line: i + 1, key: key.into(), text: raw.to_string() });
        }
        out.push((i + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Parses a whole config file.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let pairs: Vec<(String, String)> = parse_config_text(text)?.into_iter().map(|(_, k, v)| (k, v)).collect();
        Self::from_pairs(&pairs)
    }

    /// Builds and validates a config from `key, value` pairs; later pairs win.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        for (k, v) in pairs {
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey { line: 0, key: k.clone(), text: format!("{k} = {v}") });
            }
        }
        let problem: ProblemKind = parse_value("problem", get("problem").ok_or(ConfigError::Missing("problem".into()))?)?;
        let h0_text = get("h0").ok_or(ConfigError::Missing("h0".into()))?;
        let h0: f64 = parse_value("h0", h0_text)?;
        let exponent = h0.log2();
        if !(h0 > 0.0 && h0.is_finite()) || (exponent - exponent.round()).abs() > 1e-12 || !(-20.0..=0.0).contains(&exponent.round()) {
            return Err(invalid("h0", h0_text, "must be 2^-j with 0 <= j <= 20"));
        }
        let mode = get("mode").map(|v| parse_value("mode", v)).transpose()?.unwrap_or(Mode::Uniform);
        let k: usize = get("k").map(|v| parse_value("k", v)).transpose()?.unwrap_or(1);
        if !(1..=2).contains(&k) {
            return Err(invalid("k", &k.to_string(), "supported degrees are 1 and 2"));
        }
        let theta: i32 = get("theta").map(|v| parse_value("theta", v)).transpose()?.unwrap_or(0);
        if !(-1..=1).contains(&theta) {
            return Err(invalid("theta", &theta.to_string(), "must be -1, 0 or 1"));
        }
        let alpha: f64 = get("alpha").map(|v| parse_value("alpha", v)).transpose()?.unwrap_or(1.0);
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", &alpha.to_string(), "must be positive"));
        }
        let dt: f64 = get("dt").map(|v| parse_value("dt", v)).transpose()?.unwrap_or(0.01);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", &dt.to_string(), "must be positive"));
        }
        let t_final: f64 = match get("T_final") {
            Some(v) => parse_value("T_final", v)?,
            None => problem.spec().final_time,
        };
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(invalid("T_final", &t_final.to_string(), "must be positive"));
        }
        let steps = (t_final / dt).round();
        if steps < 1.0 || (steps * dt - t_final).abs() > 1e-9 * t_final {
            return Err(ConfigError::Inconsistent(format!("dt = {dt} does not divide T_final = {t_final}")));
        }

        let (def_tau, def_coarse, def_refine, def_iters) = match mode {
            Mode::AdaptivePureRefine => (0.0, 0.0, 0.1, 1),
            _ => (1e-3, 0.5, 0.4, AdaptParams::DEFAULT_MAX_ITERS),
        };
        let tau: f64 = get("tau").map(|v| parse_value("tau", v)).transpose()?.unwrap_or(def_tau);
        let theta_coarse: f64 = get("theta_coarse").map(|v| parse_value("theta_coarse", v)).transpose()?.unwrap_or(def_coarse);
        let theta_refine: f64 = get("theta_refine").map(|v| parse_value("theta_refine", v)).transpose()?.unwrap_or(def_refine);
        let max_iters: usize = get("max_iters").map(|v| parse_value("max_iters", v)).transpose()?.unwrap_or(def_iters);
        if mode == Mode::AdaptivePureRefine && (tau != 0.0 || theta_coarse != 0.0) {
            return Err(ConfigError::Inconsistent("adaptive_pure_refine uses no tolerance and no coarsening".into()));
        }
        if mode == Mode::AdaptiveFull && !(tau > 0.0) {
            return Err(invalid("tau", &tau.to_string(), "must be positive"));
        }
        if !(0.0..1.0).contains(&theta_coarse) {
            return Err(invalid("theta_coarse", &theta_coarse.to_string(), "must lie in [0, 1)"));
        }
        if !(theta_refine > 0.0 && theta_refine < 1.0) {
            return Err(invalid("theta_refine", &theta_refine.to_string(), "must lie in (0, 1)"));
        }
        if max_iters == 0 {
            return Err(invalid("max_iters", "0", "must be positive"));
        }
        let cycles: usize = get("cycles").map(|v| parse_value("cycles", v)).transpose()?.unwrap_or(1);
        if cycles == 0 || exponent.round() - (cycles as f64 - 1.0) < -20.0 {
            return Err(invalid("cycles", &cycles.to_string(), "need 1 <= cycles and h0 / 2^(cycles-1) >= 2^-20"));
        }
        let snapshot_times = match get("snapshot_times") {
            Some(v) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| parse_value::<f64>("snapshot_times", s))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![0.1, 0.25, 0.5],
        };
        let coarsen_rule = match get("coarsen_rule") {
            None | Some("threshold") => CoarsenRule::Threshold,
            Some("percentile") => CoarsenRule::Percentile,
            Some(v) => return Err(invalid("coarsen_rule", v, "expected threshold or percentile")),
        };
        Ok(RunConfig {
            problem,
            mode,
            k,
            theta,
            alpha,
            h0: 2f64.powi(exponent.round() as i32),
            dt,
            t_final,
            tau,
            theta_coarse,
            theta_refine,
            max_iters,
            cycles,
            output_dir: get("output_dir").map(PathBuf::from),
            snapshot_times,
            coarsen_rule,
        })
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// `t_n = T n / N`, so that `t_N = T` exactly.
    pub fn time(&self, n: usize) -> f64 {
        self.t_final * n as f64 / self.steps() as f64
    }

    pub fn penalty(&self) -> PenaltySpec {
        PenaltySpec::new(self.alpha, self.theta)
    }

    pub fn adapt_params(&self) -> AdaptParams {
        AdaptParams {
            tau: self.tau,
            theta_coarse: self.theta_coarse,
            theta_refine: self.theta_refine,
            max_iters: self.max_iters,
            coarsen_rule: self.coarsen_rule,
        }
    }

    /// Initial cell size of cycle `j` (0-based).
    pub fn cycle_h0(&self, j: usize) -> f64 {
        self.h0 / 2f64.powi(j as i32)
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub n: usize,
    pub t: f64,
    pub dofs: usize,
    pub h_min: f64,
    /// `sqrt(sum eta_T^2)`.
    pub eta_total: f64,
    /// `sum eta_T`.
    pub eta_sum: f64,
    /// Running maximum of `eta_sum`.
    pub eta_linf: f64,
    pub error_h1: Option<f64>,
    /// Running maximum of `error_h1`.
    pub error_linf: Option<f64>,
    pub ei: Option<f64>,
    pub adapt_iters: usize,
    pub hit_cap: bool,
    pub eta2_max: f64,
    pub eta4_max: f64,
    pub eta5_max: f64,
    pub orthogonality: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str =
        "n,t_n,dofs,h_min_n,eta_total,eta_sum,eta_linf,error_h1,error_linf,ei,adapt_iters";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            csv_number(Some(self.t)),
            self.dofs,
            csv_number(Some(self.h_min)),
            csv_number(Some(self.eta_total)),
            csv_number(Some(self.eta_sum)),
            csv_number(Some(self.eta_linf)),
            csv_number(self.error_h1),
            csv_number(self.error_linf),
            csv_number(self.ei),
            self.adapt_iters
        )
    }
}

/// Outcome of a full time loop.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<StepReport>,
    pub final_solution: DiscreteField,
}

impl RunSummary {
    pub fn last(&self) -> &StepReport {
        self.reports.last().expect("at least one step")
    }

    pub fn h_min(&self) -> f64 {
        self.reports.iter().map(|r| r.h_min).fold(f64::INFINITY, f64::min)
    }
}

/// Receives each step's report and solution as soon as the step is accepted.
pub trait StepObserver {
    fn on_step(&mut self, report: &StepReport, solution: &DiscreteField) -> io::Result<()>;
}

impl StepObserver for () {
    fn on_step(&mut self, _: &StepReport, _: &DiscreteField) -> io::Result<()> {
        Ok(())
    }
}

struct Tracker<'a> {
    problem: &'a ProblemSpec,
    eta_linf: f64,
    error_linf: Option<f64>,
}

impl Tracker<'_> {
    #[allow(clippy::too_many_arguments)]
    fn report(
        &mut self,
        n: usize,
        t: f64,
        solution: &DiscreteField,
        est: &Estimate,
        adapt_iters: usize,
        hit_cap: bool,
        orthogonality: f64,
    ) -> StepReport {
        self.eta_linf = self.eta_linf.max(est.eta_sum);
        let error_h1 = self.problem.exact.as_ref().map(|ex| {
            broken_h1_error(solution, |x| (ex.value)(x, t), |x| (ex.gradient)(x, t))
        });
        if let Some(e) = error_h1 {
            self.error_linf = Some(self.error_linf.map_or(e, |m: f64| m.max(e)));
        }
        let mesh = solution.space().mesh();
        StepReport {
            n,
            t,
            dofs: solution.space().n_dofs(),
            h_min: mesh.h_min(),
            eta_total: est.eta_total,
            eta_sum: est.eta_sum,
            eta_linf: self.eta_linf,
            error_h1,
            error_linf: self.error_linf,
            ei: self.error_linf.and_then(|e| effectivity(self.eta_linf, e)),
            adapt_iters,
            hit_cap,
            eta2_max: est.max_edge(|e| e.eta2),
            eta4_max: est.max_edge(|e| e.eta4),
            eta5_max: est.max_edge(|e| e.eta5),
            orthogonality,
        }
    }
}

/// Backward-Euler time loop from the interpolated initial condition on a
/// uniform mesh of side `h0`.
pub fn run_timeloop(
    config: &RunConfig,
    problem: &ProblemSpec,
    h0: f64,
    observer: &mut dyn StepObserver,
) -> Result<RunSummary, Error> {
    let mesh = Arc::new(Mesh::build_with_partition(problem.shape, h0, problem.partition.clone())?);
    let space = Arc::new(EgSpace::build(mesh, config.k)?);
    let initial = problem.initial.clone();
    let mut current = interpolate(&space, |x| initial(x));
    let penalty = config.penalty();
    let mut tracker = Tracker { problem, eta_linf: 0.0, error_linf: None };
    let mut reports = Vec::with_capacity(config.steps());

    match config.mode {
        Mode::Uniform => {
            let matrix = assemble_system(&space, &problem.permeability, penalty, config.dt);
            let solver = ConstrainedSolver::new(space.clone(), &matrix)?;
            for n in 1..=config.steps() {
                let t = config.time(n);
                let step = solve_with(&solver, &matrix, problem, penalty, &current, t, config.dt)?;
                let report = tracker.report(n, t, &step.solution, &step.estimate, 0, false, step.orthogonality);
                observer.on_step(&report, &step.solution)?;
                reports.push(report);
                current = step.solution;
            }
        }
        Mode::AdaptivePureRefine | Mode::AdaptiveFull => {
            let params = config.adapt_params();
            let mut state = AdaptState { solution: current, estimate: None };
            for n in 1..=config.steps() {
                let t = config.time(n);
                let (next, out) = adapt_step(&state, problem, &params, penalty, t, config.dt)?;
                let report =
                    tracker.report(n, t, &next.solution, &out.estimate, out.iterations, out.hit_cap, out.orthogonality);
                observer.on_step(&report, &next.solution)?;
                reports.push(report);
                state = next;
            }
            current = state.solution;
        }
    }
    Ok(RunSummary { reports, final_solution: current })
}

/// `Order(j) = 2 (log E_j - log E_{j-1}) / (log D_{j-1} - log D_j)`; the first
/// entry is always `None`, as is any pair with a non-positive error.
pub fn order_dofs(errors: &[f64], dofs: &[usize]) -> Vec<Option<f64>> {
    assert_eq!(errors.len(), dofs.len());
    (0..errors.len())
        .map(|j| {
            if j == 0 || errors[j] <= 0.0 || errors[j - 1] <= 0.0 || dofs[j] == dofs[j - 1] {
                return None;
            }
            let num = errors[j].ln() - errors[j - 1].ln();
            let den = (dofs[j - 1] as f64).ln() - (dofs[j] as f64).ln();
            Some(2.0 * num / den)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleSummary {
    /// 1-based.
    pub cycle: usize,
    pub h0: f64,
    pub dofs: usize,
    pub error_linf: Option<f64>,
    pub eta_final: f64,
    pub h_min: f64,
    pub order_dofs: Option<f64>,
}

impl CycleSummary {
    pub const CSV_HEADER: &'static str = "cycle,dofs,error_linf,eta_final,order_dofs";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.cycle,
            self.dofs,
            csv_number(self.error_linf),
            csv_number(Some(self.eta_final)),
            csv_number(self.order_dofs)
        )
    }
}

/// Runs every cycle and fills in the rates.
pub fn run_study(
    config: &RunConfig,
    mut observer_for: impl FnMut(usize) -> io::Result<Box<dyn StepObserver>>,
) -> Result<(Vec<CycleSummary>, Vec<RunSummary>), Error> {
    let problem = config.problem.spec();
    let mut cycles = Vec::new();
    let mut runs = Vec::new();
    for j in 0..config.cycles {
        let h0 = config.cycle_h0(j);
        let mut observer = observer_for(j + 1)?;
        let run = run_timeloop(config, &problem, h0, observer.as_mut())?;
        let last = run.last();
        log::info!(
            "cycle {}: h0 = {h0}, dofs = {}, error = {:?}, eta = {:.3e}",
            j + 1,
            last.dofs,
            last.error_linf,
            last.eta_total
        );
        cycles.push(CycleSummary {
            cycle: j + 1,
            h0,
            dofs: last.dofs,
            error_linf: last.error_linf,
            eta_final: last.eta_total,
            h_min: run.h_min(),
            order_dofs: None,
        });
        runs.push(run);
    }
    let errors: Vec<f64> = cycles.iter().map(|c| c.error_linf.unwrap_or(0.0)).collect();
    let dofs: Vec<usize> = cycles.iter().map(|c| c.dofs).collect();
    for (c, r) in cycles.iter_mut().zip(order_dofs(&errors, &dofs)) {
        c.order_dofs = r;
    }
    Ok((cycles, runs))
}

/// Writes the step CSV row by row and snapshots at the configured times.
pub struct FileObserver {
    csv: BufWriter<File>,
    dir: PathBuf,
    prefix: String,
    snapshot_times: Vec<f64>,
    dt: f64,
}

impl FileObserver {
    pub fn create(dir: &Path, prefix: &str, snapshot_times: &[f64], dt: f64) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join(format!("{prefix}steps.csv")))?);
        writeln!(csv, "{}", StepReport::CSV_HEADER)?;
        csv.flush()?;
        Ok(Self { csv, dir: dir.to_path_buf(), prefix: prefix.into(), snapshot_times: snapshot_times.to_vec(), dt })
    }
}

impl StepObserver for FileObserver {
    fn on_step(&mut self, report: &StepReport, solution: &DiscreteField) -> io::Result<()> {
        writeln!(self.csv, "{}", report.csv_row())?;
        self.csv.flush()?;
        if self.snapshot_times.iter().any(|&s| (s - report.t).abs() < 0.5 * self.dt) {
            let tag = format!("{}t{:.4}", self.prefix, report.t);
            write_mesh_svg(solution.space().mesh(), BufWriter::new(File::create(self.dir.join(format!("mesh_{tag}.svg")))?))?;
            let title = format!("pressure at t = {}", report.t);
            write_vtk(solution, &title, BufWriter::new(File::create(self.dir.join(format!("solution_{tag}.vtk")))?))?;
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "eg-adapt", version, about = "Adaptive enriched Galerkin solver for p_t - div(K grad p) = f")]
struct Cli {
    /// Config file with `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    h0: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "T_final", alias = "T")]
    t_final: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long = "theta_coarse", alias = "theta-coarse")]
    theta_coarse: Option<String>,
    #[arg(long = "theta_refine", alias = "theta-refine")]
    theta_refine: Option<String>,
    #[arg(long = "max_iters", alias = "max-iters")]
    max_iters: Option<String>,
    #[arg(long)]
    cycles: Option<String>,
    #[arg(long = "output_dir", alias = "output-dir")]
    output_dir: Option<String>,
    #[arg(long = "snapshot_times", alias = "snapshot-times")]
    snapshot_times: Option<String>,
    #[arg(long = "coarsen_rule", alias = "coarsen-rule")]
    coarsen_rule: Option<String>,
}

impl Cli {
    fn flag_pairs(&self) -> Vec<(String, String)> {
        let flags = [
            ("problem", &self.problem),
            ("mode", &self.mode),
            ("k", &self.k),
            ("theta", &self.theta),
            ("alpha", &self.alpha),
            ("h0", &self.h0),
            ("dt", &self.dt),
            ("T_final", &self.t_final),
            ("tau", &self.tau),
            ("theta_coarse", &self.theta_coarse),
            ("theta_refine", &self.theta_refine),
            ("max_iters", &self.max_iters),
            ("cycles", &self.cycles),
            ("output_dir", &self.output_dir),
            ("snapshot_times", &self.snapshot_times),
            ("coarsen_rule", &self.coarsen_rule),
        ];
        flags
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 1;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::Mesh(_) | Error::Space(_) | Error::Solve(_) => EXIT_SOLVER,
    }
}

/// Caps rayon's global pool at `EG_ADAPT_THREADS` (default 1).
pub fn configure_threads() {
    let n = std::env::var("EG_ADAPT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1);
    // a pool configured earlier in the process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut pairs = Vec::new();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)?;
        pairs.extend(parse_config_text(&text)?.into_iter().map(|(_, k, v)| (k, v)));
    }
    pairs.extend(cli.flag_pairs());
    if !pairs.iter().any(|(k, _)| k == "output_dir") {
        pairs.push(("output_dir".into(), "output".into()));
    }
    Ok(RunConfig::from_pairs(&pairs)?)
}

fn run_cli(cli: &Cli) -> Result<(), Error> {
    let config = load_config(cli)?;
    let dir = config.output_dir.clone().expect("output_dir defaulted");
    let single = config.cycles == 1;
    let (cycles, _) = run_study(&config, |c| {
        let prefix = if single { String::new() } else { format!("cycle{c}_") };
        Ok(Box::new(FileObserver::create(&dir, &prefix, &config.snapshot_times, config.dt)?) as Box<dyn StepObserver>)
    })?;
    let mut out = BufWriter::new(File::create(dir.join("cycles.csv"))?);
    writeln!(out, "{}", CycleSummary::CSV_HEADER)?;
    for c in &cycles {
        writeln!(out, "{}", c.csv_row())?;
    }
    out.flush()?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{}", CycleSummary::CSV_HEADER)?;
    for c in &cycles {
        writeln!(stdout, "{}", c.csv_row())?;
    }
    Ok(())
}

/// Parses arguments, runs, and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    configure_threads();
    match run_cli(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
