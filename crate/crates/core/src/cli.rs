//! `breit-lab` front end: task dispatch, run records and convergence studies.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::darwin::{DarwinError, DarwinSystem};
use crate::derivation::{self, DerivationError};
use crate::model::{Config, ConfigError, ConvergeAxis, GridSpec, ParticleParams, RawConfig, Task, TermFlags};
use crate::oracle::{self, ComparisonRow, KernelPart, OracleError};
use crate::solver::{self, HamiltonianSpec, SolveOptions, SolverError, SpectrumResult};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no task given (pass one on the command line or set `task` in the config)")]
    NoTask,
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Derivation(#[from] DerivationError),
    #[error(transparent)]
    Darwin(#[from] DarwinError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Parser)]
#[command(name = "breit-lab", version, about = "Two-fermion Breit equation laboratory")]
pub struct Args {
    /// spectrum | perturb | dynamics | verify | converge
    pub task: Option<String>,
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Where to write the JSON run record.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write each computed state of a spectrum run to `<PREFIX>.<i>.bin`.
    #[arg(long, value_name = "PREFIX")]
    pub dump_states: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TaskRequest {
    pub task: Task,
    pub config: Config,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub output: PathBuf,
    pub dump_states: Option<PathBuf>,
}

impl TaskRequest {
    /// Parse the file, apply overrides in order and validate the result.
    pub fn from_args(args: &Args) -> Result<Self, CliError> {
        let text = match &args.config {
            Some(p) => fs::read_to_string(p).map_err(|source| CliError::Read {
                path: p.clone(),
                source,
            })?,
            None => String::new(),
        };
        let mut raw = RawConfig::parse(&text)?;
        for o in &args.overrides {
            raw.set(o)?;
        }
        if let Some(t) = &args.task {
            raw.set(&format!("task={t}"))?;
        }
        let config = raw.validate()?;
        let task = config.task.ok_or(CliError::NoTask)?;
        let output = args
            .out
            .clone()
            .or_else(|| config.output_path.clone())
            .unwrap_or_else(|| PathBuf::from(format!("{}.json", task.as_str())));
        Ok(Self {
            task,
            config,
            config_path: args.config.clone(),
            overrides: args.overrides.clone(),
            output,
            dump_states: args.dump_states.clone(),
        })
    }

    pub fn new(task: Task, config: Config, output: PathBuf) -> Self {
        Self {
            task,
            config,
            config_path: None,
            overrides: Vec::new(),
            output,
            dump_states: None,
        }
    }

    /// Sibling file of the run record with another extension.
    pub fn companion(&self, ext: &str) -> PathBuf {
        self.output.with_extension(ext)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceOutcome {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl ToleranceOutcome {
    /// Passes when `value <= limit`.
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.to_owned(),
            value,
            limit,
            passed: value <= limit,
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.to_owned(),
            value: if ok { 1.0 } else { 0.0 },
            limit: 1.0,
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: Task,
    /// Effective configuration after overrides, in file syntax.
    pub config_text: String,
    pub config: Config,
    pub results: Value,
    pub versions: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub tolerances: Vec<ToleranceOutcome>,
    pub error: Option<String>,
    pub passed: bool,
}

impl RunRecord {
    fn new(req: &TaskRequest) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("breit-core".to_owned(), env!("CARGO_PKG_VERSION").to_owned());
        versions.insert("record_format".to_owned(), "1".to_owned());
        Self {
            task: req.task,
            config_text: req.config.to_text(),
            config: req.config.clone(),
            results: Value::Null,
            versions,
            wall_time_s: 0.0,
            tolerances: Vec::new(),
            error: None,
            passed: false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Invalid(e.to_string()))?;
        write_file(path, text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let wrap = |source| CliError::Write {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    fs::write(path, bytes).map_err(wrap)
}

pub fn hamiltonian_spec(c: &Config) -> HamiltonianSpec {
    HamiltonianSpec {
        particles: c.particles,
        coupling: c.coupling,
        grid: c.grid,
        terms: c.terms,
        projection: c.projection,
    }
}

fn solve_options(c: &Config) -> SolveOptions {
    let mut o = SolveOptions::new(c.n_states, c.tol);
    o.max_iter = c.max_iter;
    o.seed = c.seed;
    o
}

/// Spectrum payload without timing so that payloads are reproducible.
fn spectrum_payload(r: &SpectrumResult) -> Value {
    let mut v = serde_json::to_value(r).unwrap_or(Value::Null);
    if let Value::Object(m) = &mut v {
        m.remove("wall_time_s");
    }
    v
}

/// Run one task. Task-level failures are captured in the record (with
/// whatever partial results exist); the outer error is reserved for output
/// problems.
pub fn run(req: &TaskRequest) -> RunRecord {
    let start = Instant::now();
    let mut record = RunRecord::new(req);
    let outcome = match req.task {
        Task::Spectrum => run_spectrum(req, &mut record),
        Task::Perturb => run_perturb(req, &mut record),
        Task::Dynamics => run_dynamics(req, &mut record),
        Task::Verify => run_verify(&mut record),
        Task::Converge => run_converge(req, &mut record),
    };
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    record.passed = record.error.is_none() && !record.tolerances.is_empty() && record.tolerances.iter().all(|t| t.passed);
    record
}

fn run_spectrum(req: &TaskRequest, rec: &mut RunRecord) -> Result<(), CliError> {
    let c = &req.config;
    let r = solver::solve_spectrum(&hamiltonian_spec(c), &solve_options(c))?;
    let worst = r.residual_norms.iter().cloned().fold(0.0, f64::max);
    rec.tolerances.push(ToleranceOutcome::at_most("max_residual", worst, c.tol));
    if c.coupling.alpha_eff == 0.0 {
        let b = r.binding_energies.first().copied().unwrap_or(f64::NAN).abs();
        rec.tolerances.push(ToleranceOutcome::at_most("free_binding", b, 1e-8));
    }
    rec.results = spectrum_payload(&r);
    if let Some(prefix) = &req.dump_states {
        let mut paths = Vec::new();
        for (i, psi) in r.states.iter().enumerate() {
            let path = PathBuf::from(format!("{}.{i}.bin", prefix.display()));
            let mut buf = Vec::new();
            psi.write_binary(&mut buf)?;
            write_file(&path, &buf)?;
            paths.push(path);
        }
        if let Value::Object(m) = &mut rec.results {
            m.insert("state_files".into(), json!(paths));
        }
    }
    Ok(())
}

fn kernel_parts(terms: TermFlags) -> Vec<KernelPart> {
    let mut parts = Vec::new();
    if terms.gaunt {
        parts.push(KernelPart::Gaunt);
    }
    if terms.retardation {
        parts.push(KernelPart::Retardation);
    }
    parts
}

/// Ratio tolerance for the full-minus-Coulomb shift against first-order
/// perturbation theory.
pub fn perturbative_band(alpha_eff: f64) -> f64 {
    5.0 * alpha_eff * alpha_eff
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbComparison {
    pub alpha_eff: f64,
    pub coulomb_eigenvalues: Vec<f64>,
    pub full_eigenvalues: Vec<f64>,
    pub solver_shifts: Vec<f64>,
    pub oracle_shifts: Vec<f64>,
    pub ratios: Vec<f64>,
    pub coulomb_converged: bool,
    pub full_converged: bool,
}

/// Solve with Coulomb only, then with the configured terms starting from
/// the Coulomb states, and compare the level shifts with first-order
/// degenerate perturbation theory on the Coulomb multiplet.
pub fn perturbative_comparison(c: &Config) -> Result<PerturbComparison, CliError> {
    let parts = kernel_parts(c.terms);
    if parts.is_empty() {
        return Err(CliError::Invalid("perturb needs gaunt or retardation in `terms`".into()));
    }
    let mut coulomb = hamiltonian_spec(c);
    coulomb.terms = TermFlags {
        coulomb: true,
        gaunt: false,
        retardation: false,
    };
    let mut full = hamiltonian_spec(c);
    full.terms.coulomb = true;
    let opts = solve_options(c);
    let r0 = solver::solve_spectrum(&coulomb, &opts)?;
    let mut o1 = opts.clone();
    o1.initial = r0.states.clone();
    let r1 = solver::solve_spectrum(&full, &o1)?;
    let solver_shifts: Vec<f64> = r1.eigenvalues.iter().zip(&r0.eigenvalues).map(|(a, b)| a - b).collect();
    let oracle_shifts = oracle::degenerate_shifts(&r0.states, &r0.eigenvalues, &parts, &c.coupling);
    let ratios = solver_shifts.iter().zip(&oracle_shifts).map(|(a, b)| a / b).collect();
    Ok(PerturbComparison {
        alpha_eff: c.coupling.alpha_eff,
        coulomb_eigenvalues: r0.eigenvalues,
        full_eigenvalues: r1.eigenvalues,
        solver_shifts,
        oracle_shifts,
        ratios,
        coulomb_converged: r0.converged,
        full_converged: r1.converged,
    })
}

fn run_perturb(req: &TaskRequest, rec: &mut RunRecord) -> Result<(), CliError> {
    let c = &req.config;
    let cmp = perturbative_comparison(c)?;
    let band = perturbative_band(c.coupling.alpha_eff);
    rec.tolerances.push(ToleranceOutcome::flag("coulomb_converged", cmp.coulomb_converged));
    rec.tolerances.push(ToleranceOutcome::flag("full_converged", cmp.full_converged));
    for (i, r) in cmp.ratios.iter().enumerate() {
        rec.tolerances.push(ToleranceOutcome::at_most(&format!("ratio_{i}"), (r - 1.0).abs(), band));
    }
    let rows: Vec<ComparisonRow> = cmp
        .solver_shifts
        .iter()
        .zip(&cmp.oracle_shifts)
        .map(|(s, o)| ComparisonRow::new(cmp.alpha_eff, "gaunt+retardation", *s, *o))
        .collect();
    let mut csv = Vec::new();
    oracle::write_comparison_csv(&rows, &mut csv).map_err(|e| CliError::Invalid(e.to_string()))?;
    let csv_path = req.companion("csv");
    write_file(&csv_path, &csv)?;
    rec.results = json!({
        "comparison": cmp,
        "fitted_constant": oracle::fitted_constant(&rows),
        "ratio_band": band,
        "csv": csv_path,
    });
    Ok(())
}

/// Classical charges for light speed c: e² = α c, so that c = 1 reproduces
/// the quantum convention e₁e₂ = −α.
pub fn darwin_system(c: &Config) -> Result<DarwinSystem, CliError> {
    let alpha = c.coupling.alpha_eff;
    let e = (alpha.abs() * c.light_speed).sqrt();
    let p1 = ParticleParams::new(c.particles[0].mass, e)?;
    let p2 = ParticleParams::new(c.particles[1].mass, -alpha.signum() * e)?;
    Ok(DarwinSystem::new(vec![p1, p2], c.light_speed)?)
}

/// Relative energy drift limit for the dynamics task.
pub const ENERGY_DRIFT_LIMIT: f64 = 1e-8;
/// Absolute total-momentum drift limit for the dynamics task.
pub const MOMENTUM_DRIFT_LIMIT: f64 = 1e-10;

fn run_dynamics(req: &TaskRequest, rec: &mut RunRecord) -> Result<(), CliError> {
    let c = &req.config;
    let sys = darwin_system(c)?;
    let orbit = sys.circular_orbit(c.orbit_radius)?;
    let dt = c.dt.unwrap_or(orbit.period() / 1000.0);
    rec.results = json!({
        "omega": orbit.omega,
        "kepler_omega": orbit.kepler_omega,
        "relative_shift": orbit.relative_shift(),
        "period": orbit.period(),
        "dt": dt,
        "n_steps": c.n_steps,
    });
    let traj = sys.integrate(&orbit.state, dt, c.n_steps)?;
    let csv_path = req.companion("csv");
    let mut buf = Vec::new();
    traj.write_csv_to(&mut buf).map_err(|e| CliError::Invalid(e.to_string()))?;
    write_file(&csv_path, &buf)?;
    let eb = traj.points[0].binding_energy;
    let de = traj.energy_drift() / eb.abs();
    let dp = traj.momentum_drift();
    rec.tolerances.push(ToleranceOutcome::at_most("energy_drift", de, ENERGY_DRIFT_LIMIT));
    rec.tolerances.push(ToleranceOutcome::at_most("momentum_drift", dp, MOMENTUM_DRIFT_LIMIT));
    if let Value::Object(m) = &mut rec.results {
        m.insert("binding_energy".into(), json!(eb));
        m.insert("energy_drift_relative".into(), json!(de));
        m.insert("momentum_drift".into(), json!(dp));
        m.insert("trajectory_csv".into(), json!(csv_path));
    }
    Ok(())
}

fn run_verify(rec: &mut RunRecord) -> Result<(), CliError> {
    let reports = derivation::run_suite()?;
    print!("{}", derivation::render_table(&reports));
    for r in &reports {
        rec.tolerances.push(ToleranceOutcome::flag(&r.name, r.passed));
    }
    rec.results = serde_json::to_value(&reports).unwrap_or(Value::Null);
    Ok(())
}

/// a + c·x^(−p) fitted to (x, y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub limit: f64,
    pub coefficient: f64,
    pub order: f64,
    pub rms: f64,
}

fn linear_fit(x: &[f64], y: &[f64], p: f64) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let u: Vec<f64> = x.iter().map(|v| v.powf(-p)).collect();
    let (mu, my) = (u.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let suu: f64 = u.iter().map(|a| (a - mu) * (a - mu)).sum();
    let suy: f64 = u.iter().zip(y).map(|(a, b)| (a - mu) * (b - my)).sum();
    let c = suy / suu;
    let a = my - c * mu;
    let rms = (u.iter().zip(y).map(|(ui, yi)| (a + c * ui - yi).powi(2)).sum::<f64>() / n).sqrt();
    (a, c, rms)
}

/// Scan the order over [0.25, 12], solving the linear least-squares problem
/// for (a, c) at each p, then refine by golden section.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Option<PowerLawFit> {
    if x.len() < 3 || x.len() != y.len() || x.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let cost = |p: f64| linear_fit(x, y, p).2;
    let (mut best, mut best_cost) = (0.25, f64::INFINITY);
    let mut p = 0.25;
    while p <= 12.0 {
        let c = cost(p);
        if c < best_cost {
            best = p;
            best_cost = c;
        }
        p += 0.01;
    }
    let (mut lo, mut hi) = ((best - 0.01f64).max(0.25), best + 0.01);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if cost(a) < cost(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let order = 0.5 * (lo + hi);
    let (limit, coefficient, rms) = linear_fit(x, y, order);
    Some(PowerLawFit {
        limit,
        coefficient,
        order,
        rms,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: f64,
    pub grid_n: usize,
    pub box_length: f64,
    pub softening: f64,
    pub binding_energy: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub axis: ConvergeAxis,
    pub rows: Vec<ConvergenceRow>,
    /// −μα²/2, for reference.
    pub nonrelativistic_reference: f64,
    pub fit: Option<PowerLawFit>,
    pub monotone: bool,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,grid_n,box_length,softening,binding_energy,converged\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.level,
                r.grid_n,
                r.box_length,
                r.softening,
                r.binding_energy.map_or("nan".to_owned(), |e| format!("{e:.15e}")),
                r.converged
            ));
        }
        s
    }
}

fn level_grid(base: &GridSpec, axis: ConvergeAxis, level: f64) -> Result<GridSpec, CliError> {
    let g = match axis {
        ConvergeAxis::GridN => {
            let n = level.round() as usize;
            GridSpec::with_softening(n, base.box_length, base.softening, base.sampling)?
        }
        ConvergeAxis::BoxLength => {
            // Fixed spacing: the point count follows the box.
            let h = base.spacing();
            let mut n = (level / h).round() as usize;
            n += n % 2;
            GridSpec::with_softening(n, n as f64 * h, base.softening, base.sampling)?
        }
        ConvergeAxis::Softening => GridSpec::with_softening(base.n, base.box_length, level, base.sampling)?,
    };
    Ok(g)
}

/// Ground binding energy per level along one axis; a failing level is
/// recorded and the study continues.
pub fn convergence_study(c: &Config, axis: ConvergeAxis, levels: &[f64]) -> Result<ConvergenceTable, CliError> {
    if levels.len() < 3 {
        return Err(CliError::Invalid("a convergence study needs at least three levels".into()));
    }
    let mut rows = Vec::new();
    let mut initial: Option<Vec<_>> = None;
    for &level in levels {
        let grid = level_grid(&c.grid, axis, level);
        let row = match grid {
            Err(e) => ConvergenceRow {
                level,
                grid_n: 0,
                box_length: f64::NAN,
                softening: f64::NAN,
                binding_energy: None,
                converged: false,
                error: Some(e.to_string()),
            },
            Ok(g) => {
                let mut spec = hamiltonian_spec(c);
                spec.grid = g;
                let mut opts = solve_options(c);
                // Reuse the previous level's states when the grid matches.
                if let Some(prev) = initial.take() {
                    opts.initial = prev;
                }
                if opts.initial.iter().any(|f: &solver::BilocalField| f.grid() != &g) {
                    opts.initial.clear();
                }
                match solver::solve_spectrum(&spec, &opts) {
                    Ok(r) => {
                        let row = ConvergenceRow {
                            level,
                            grid_n: g.n,
                            box_length: g.box_length,
                            softening: g.softening,
                            binding_energy: r.binding_energies.first().copied(),
                            converged: r.converged,
                            error: None,
                        };
                        initial = Some(r.states);
                        row
                    }
                    Err(e) => ConvergenceRow {
                        level,
                        grid_n: g.n,
                        box_length: g.box_length,
                        softening: g.softening,
                        binding_energy: None,
                        converged: false,
                        error: Some(e.to_string()),
                    },
                }
            }
        };
        rows.push(row);
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.binding_energy.map(|e| (r.level, e)))
        .collect();
    let xs: Vec<f64> = pts
        .iter()
        .map(|(l, _)| match axis {
            ConvergeAxis::Softening => 1.0 / l,
            _ => *l,
        })
        .collect();
    let ys: Vec<f64> = pts.iter().map(|(_, e)| *e).collect();
    let fit = power_law_fit(&xs, &ys);
    let monotone = ys.windows(2).all(|w| w[1] <= w[0]) || ys.windows(2).all(|w| w[1] >= w[0]);
    let mu = c.reduced_mass();
    let alpha = c.coupling.alpha_eff;
    Ok(ConvergenceTable {
        axis,
        rows,
        nonrelativistic_reference: -mu * alpha * alpha / 2.0,
        fit,
        monotone,
    })
}

fn run_converge(req: &TaskRequest, rec: &mut RunRecord) -> Result<(), CliError> {
    let c = &req.config;
    let table = convergence_study(c, c.converge_axis, &c.converge_levels)?;
    let all_ok = table.rows.iter().all(|r| r.error.is_none() && r.converged);
    rec.tolerances.push(ToleranceOutcome::flag("all_levels_converged", all_ok));
    rec.tolerances.push(ToleranceOutcome::flag("monotone", table.monotone));
    write_file(&req.companion("csv"), table.to_csv().as_bytes())?;
    rec.results = serde_json::to_value(&table).unwrap_or(Value::Null);
    Ok(())
}

/// Entry point used by the binary; returns the process exit status
/// (0 all tolerances met, 1 a tolerance failed or the task errored,
/// 2 the request itself was invalid or the record could not be written).
pub fn main_with(args: Args) -> i32 {
    let req = match TaskRequest::from_args(&args) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("breit-lab: {e}");
            return 2;
        }
    };
    let record = run(&req);
    if let Some(e) = &record.error {
        eprintln!("breit-lab: {} failed: {e}", req.task.as_str());
    }
    for t in &record.tolerances {
        eprintln!(
            "{:<28} {:>12.4e} limit {:>10.3e} {}",
            t.name,
            t.value,
            t.limit,
            if t.passed { "ok" } else { "FAILED" }
        );
    }
    if let Err(e) = record.write(&req.output) {
        eprintln!("breit-lab: {e}");
        return 2;
    }
    record.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_fit_recovers_parameters() {
        let x = [16.0, 24.0, 32.0, 40.0, 48.0];
        let y: Vec<f64> = x.iter().map(|n: &f64| -0.5 + 3.0 * n.powf(-2.5)).collect();
        let f = power_law_fit(&x, &y).unwrap();
        assert!((f.order - 2.5).abs() < 1e-6, "{f:?}");
        assert!((f.limit + 0.5).abs() < 1e-9);
        assert!((f.coefficient - 3.0).abs() < 1e-5);
    }

    #[test]
    fn power_law_fit_needs_three_points() {
        assert!(power_law_fit(&[1.0, 2.0], &[0.0, 1.0]).is_none());
    }

    fn request(extra: &[&str]) -> Result<TaskRequest, CliError> {
        let mut v = vec!["breit-lab".to_owned(), "spectrum".to_owned()];
        for s in ["mass2=1", "alpha_eff=0", "grid_n=8", "box_length=10"] {
            v.push("--set".into());
            v.push(s.into());
        }
        v.extend(extra.iter().map(|s| s.to_string()));
        TaskRequest::from_args(&Args::parse_from(v))
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let dir = std::env::temp_dir().join("breit_lab_cli_test");
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("a.cfg");
        fs::write(&cfg, "mass2 = 2\nalpha_eff = 0.1\ngrid_n = 8\nbox_length = 20\n").unwrap();
        let args = Args::parse_from(["breit-lab", "spectrum", "--config", cfg.to_str().unwrap(), "--set", "grid_n=12"]);
        let req = TaskRequest::from_args(&args).unwrap();
        assert_eq!(req.config.grid.n, 12);
        assert_eq!(req.config.mass2(), 2.0);
        assert_eq!(req.output, PathBuf::from("spectrum.json"));
    }

    #[test]
    fn invalid_override_is_rejected() {
        assert!(matches!(request(&["--set", "grid_n=7"]), Err(CliError::Config(_))));
        assert!(matches!(request(&["--set", "bogus=1"]), Err(CliError::Config(_))));
    }

    #[test]
    fn free_spectrum_passes_and_records_config() {
        let dir = std::env::temp_dir().join("breit_lab_cli_free");
        let mut req = request(&[]).unwrap();
        req.output = dir.join("free.json");
        let rec = run(&req);
        assert!(rec.passed, "{:?}", rec.tolerances);
        assert!(rec.config_text.contains("grid_n = 8"));
        rec.write(&req.output).unwrap();
        let back: RunRecord = serde_json::from_str(&fs::read_to_string(&req.output).unwrap()).unwrap();
        assert_eq!(back.config, req.config);
    }

    #[test]
    fn state_dump_reads_back() {
        let dir = std::env::temp_dir().join("breit_lab_cli_dump");
        let mut req = request(&["--set", "alpha_eff=0.2", "--set", "n_states=2"]).unwrap();
        req.output = dir.join("dump.json");
        req.dump_states = Some(dir.join("psi"));
        let rec = run(&req);
        assert_eq!(rec.results["state_files"].as_array().unwrap().len(), 2);
        let bytes = fs::read(dir.join("psi.1.bin")).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * 8 * 8 * 16 * 16);
        let psi = solver::BilocalField::read_binary(&req.config.grid, bytes.as_slice()).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unreachable_tolerance_fails_with_diagnostics() {
        let mut req = request(&["--set", "alpha_eff=0.3", "--set", "tol=1e-14", "--set", "max_iter=3"]).unwrap();
        req.output = std::env::temp_dir().join("breit_lab_cli_fail.json");
        let rec = run(&req);
        assert!(!rec.passed);
        assert_eq!(rec.exit_code(), 1);
        assert!(rec.results.get("residual_norms").is_some());
    }

    #[test]
    fn payload_is_deterministic() {
        let req = request(&["--set", "alpha_eff=0.2"]).unwrap();
        let a = serde_json::to_string(&run(&req).results).unwrap();
        let b = serde_json::to_string(&run(&req).results).unwrap();
        assert_eq!(a, b);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn power_law_fit_recovers_random_laws(a in -1.0f64..1.0, c in 0.5f64..5.0, p in 0.5f64..6.0) {
            let x = [16.0, 20.0, 24.0, 32.0, 40.0, 48.0];
            let y: Vec<f64> = x.iter().map(|n: &f64| a + c * n.powf(-p)).collect();
            let f = power_law_fit(&x, &y).unwrap();
            prop_assert!((f.order - p).abs() < 1e-4, "{:?}", f);
            prop_assert!((f.limit - a).abs() < 1e-8 * (1.0 + c));
        }
    }
}
