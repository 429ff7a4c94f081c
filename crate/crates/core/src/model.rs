//! Shared domain types and the flat `key = value` configuration file.
//!
//! Internal units are ħ = c = m₁ = 1. Energies are reported in units of
//! m₁c², lengths in units of ħ/(m₁c).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        msg: msg.into(),
    }
}

/// Unit bookkeeping. Kernels never see anything but ħ = c = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub c: f64,
    pub mass_scale: f64,
}

impl UnitSystem {
    /// m₁c² in eV for an electron, used only when a report wants eV.
    pub const ELECTRON_REST_ENERGY_EV: f64 = 510_998.95;
    /// ħ/(m_e c²) in seconds.
    pub const ELECTRON_TIME_UNIT_S: f64 = 1.288_088_667e-21;

    pub const fn internal() -> Self {
        Self {
            hbar: 1.0,
            c: 1.0,
            mass_scale: 1.0,
        }
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::internal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    pub mass: f64,
    pub charge: f64,
}

impl ParticleParams {
    pub fn new(mass: f64, charge: f64) -> Result<Self, ConfigError> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(invalid("mass", format!("must be positive, got {mass}")));
        }
        if !charge.is_finite() {
            return Err(invalid("charge", "must be finite"));
        }
        Ok(Self { mass, charge })
    }
}

/// Dimensionless coupling. `alpha_eff > 0` is attraction; the charge product
/// entering every kernel is `e₁e₂ = −alpha_eff` (ħ = c = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub alpha_eff: f64,
}

impl CouplingSpec {
    pub fn new(alpha_eff: f64) -> Result<Self, ConfigError> {
        if !alpha_eff.is_finite() {
            return Err(invalid("alpha_eff", "must be finite"));
        }
        Ok(Self { alpha_eff })
    }

    pub fn off() -> Self {
        Self { alpha_eff: 0.0 }
    }

    #[inline]
    pub fn e1e2(&self) -> f64 {
        -self.alpha_eff
    }

    pub fn is_attractive(&self) -> bool {
        self.alpha_eff > 0.0
    }

    /// Charges (e₁, e₂) with e₁ ≥ 0 whose product is `e1e2()`.
    pub fn charges(&self) -> (f64, f64) {
        let e = self.alpha_eff.abs().sqrt();
        (e, -self.alpha_eff.signum() * e)
    }
}

/// How the radial Coulomb profile is represented on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSampling {
    /// Fourier projection of the sphere-truncated, softened profile onto the
    /// modes the grid carries.
    #[default]
    BandLimited,
    /// Direct evaluation of 1/sqrt(r² + a²) at grid points.
    Pointwise,
}

impl PotentialSampling {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::BandLimited => "band_limited",
            Self::Pointwise => "pointwise",
        }
    }
}

impl FromStr for PotentialSampling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "band_limited" => Ok(Self::BandLimited),
            "pointwise" => Ok(Self::Pointwise),
            other => Err(format!("unknown sampling `{other}`")),
        }
    }
}

/// Periodic cubic grid for the relative coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub box_length: f64,
    pub softening: f64,
    pub sampling: PotentialSampling,
}

impl GridSpec {
    /// Grid with the default softening for the given sampling.
    pub fn new(n: usize, box_length: f64, sampling: PotentialSampling) -> Result<Self, ConfigError> {
        let softening = Self::default_softening(n, box_length, sampling);
        Self::with_softening(n, box_length, softening, sampling)
    }

    pub fn with_softening(
        n: usize,
        box_length: f64,
        softening: f64,
        sampling: PotentialSampling,
    ) -> Result<Self, ConfigError> {
        let g = Self {
            n,
            box_length,
            softening,
            sampling,
        };
        g.validate()?;
        Ok(g)
    }

    /// h/2 for pointwise sampling, 0 for band-limited sampling (the Fourier
    /// projection is already finite at the origin).
    pub fn default_softening(n: usize, box_length: f64, sampling: PotentialSampling) -> f64 {
        match sampling {
            PotentialSampling::Pointwise => 0.5 * box_length / n as f64,
            PotentialSampling::BandLimited => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 8 || self.n % 2 != 0 {
            return Err(invalid("grid_n", format!("must be even and >= 8, got {}", self.n)));
        }
        if !(self.box_length.is_finite() && self.box_length > 0.0) {
            return Err(invalid("box_length", format!("must be positive, got {}", self.box_length)));
        }
        if !(self.softening.is_finite() && self.softening >= 0.0) {
            return Err(invalid("softening", format!("must be >= 0, got {}", self.softening)));
        }
        if self.softening >= self.box_length / 4.0 {
            return Err(invalid("softening", "must be below box_length/4"));
        }
        if self.sampling == PotentialSampling::Pointwise && self.softening == 0.0 {
            return Err(invalid("softening", "pointwise sampling needs softening > 0"));
        }
        Ok(())
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.box_length / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    /// Signed integer offset of axis index `i` under the minimum-image rule.
    #[inline]
    pub fn wrap(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    #[inline]
    pub fn unindex(&self, p: usize) -> (usize, usize, usize) {
        let n = self.n;
        (p / (n * n), (p / n) % n, p % n)
    }

    /// Minimum-image position of grid point `p`.
    pub fn position(&self, p: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.unindex(p);
        let h = self.spacing();
        [
            self.wrap(ix) as f64 * h,
            self.wrap(iy) as f64 * h,
            self.wrap(iz) as f64 * h,
        ]
    }

    /// Angular wavevector of FFT bin `p`; modes 2πk/L with k ∈ [−n/2, n/2).
    pub fn wavevector(&self, p: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.unindex(p);
        let dk = 2.0 * std::f64::consts::PI / self.box_length;
        [
            self.wrap(ix) as f64 * dk,
            self.wrap(iy) as f64 * dk,
            self.wrap(iz) as f64 * dk,
        ]
    }

    /// Grid index of the point at −r (or mode −k), wrapping periodically.
    pub fn mirror(&self, p: usize) -> usize {
        let n = self.n;
        let (ix, iy, iz) = self.unindex(p);
        self.index((n - ix) % n, (n - iy) % n, (n - iz) % n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Spectrum,
    Perturb,
    Dynamics,
    Verify,
    Converge,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Spectrum => "spectrum",
            Task::Perturb => "perturb",
            Task::Dynamics => "dynamics",
            Task::Verify => "verify",
            Task::Converge => "converge",
        }
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "spectrum" => Task::Spectrum,
            "perturb" => Task::Perturb,
            "dynamics" => Task::Dynamics,
            "verify" => Task::Verify,
            "converge" => Task::Converge,
            other => return Err(format!("unknown task `{other}`")),
        })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which interaction pieces enter the Hamiltonian. Kinetic and mass terms are
/// always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFlags {
    pub coulomb: bool,
    pub gaunt: bool,
    pub retardation: bool,
}

impl TermFlags {
    pub const FREE: Self = Self {
        coulomb: false,
        gaunt: false,
        retardation: false,
    };
    pub const COULOMB: Self = Self {
        coulomb: true,
        gaunt: false,
        retardation: false,
    };
    pub const BREIT: Self = Self {
        coulomb: true,
        gaunt: true,
        retardation: true,
    };

    pub fn any(&self) -> bool {
        self.coulomb || self.gaunt || self.retardation
    }

    fn render(&self) -> String {
        let mut parts = Vec::new();
        if self.coulomb {
            parts.push("coulomb");
        }
        if self.gaunt {
            parts.push("gaunt");
        }
        if self.retardation {
            parts.push("retardation");
        }
        if parts.is_empty() {
            "none".to_owned()
        } else {
            parts.join(",")
        }
    }
}

impl FromStr for TermFlags {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut t = TermFlags::FREE;
        if s.trim() == "none" {
            return Ok(t);
        }
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "coulomb" => t.coulomb = true,
                "gaunt" => t.gaunt = true,
                "retardation" => t.retardation = true,
                "breit" => t = TermFlags::BREIT,
                other => return Err(format!("unknown term `{other}`")),
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    None,
    PositiveEnergy,
}

impl FromStr for Projection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Projection::None),
            "positive_energy" => Ok(Projection::PositiveEnergy),
            other => Err(format!("unknown projection `{other}`")),
        }
    }
}

impl Projection {
    pub fn as_str(self) -> &'static str {
        match self {
            Projection::None => "none",
            Projection::PositiveEnergy => "positive_energy",
        }
    }
}

/// Axis scanned by the `converge` task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergeAxis {
    GridN,
    BoxLength,
    Softening,
}

impl ConvergeAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvergeAxis::GridN => "grid_n",
            ConvergeAxis::BoxLength => "box_length",
            ConvergeAxis::Softening => "softening",
        }
    }
}

impl FromStr for ConvergeAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grid_n" => Ok(Self::GridN),
            "box_length" => Ok(Self::BoxLength),
            "softening" => Ok(Self::Softening),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

/// Fully validated run configuration. Every key of the file maps to exactly
/// one field here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub units: UnitSystem,
    pub particles: [ParticleParams; 2],
    pub coupling: CouplingSpec,
    pub grid: GridSpec,
    pub terms: TermFlags,
    pub projection: Projection,
    pub n_states: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub task: Option<Task>,
    pub output_path: Option<PathBuf>,
    /// Light speed for the classical Darwin runs, in units where the quantum
    /// kernels have c = 1.
    pub light_speed: f64,
    pub orbit_radius: f64,
    pub dt: Option<f64>,
    pub n_steps: usize,
    pub converge_axis: ConvergeAxis,
    pub converge_levels: Vec<f64>,
}

/// Keys accepted in a config file, in the order they are written back out.
pub const CONFIG_KEYS: &[&str] = &[
    "mass2",
    "alpha_eff",
    "grid_n",
    "box_length",
    "softening",
    "sampling",
    "terms",
    "projection",
    "n_states",
    "tol",
    "max_iter",
    "seed",
    "task",
    "output_path",
    "light_speed",
    "orbit_radius",
    "dt",
    "n_steps",
    "converge_axis",
    "converge_levels",
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw key/value pairs with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("unknown key `{k}`"),
                });
            }
            if entries.contains_key(k) {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("duplicate key `{k}`"),
                });
            }
            entries.insert(
                k.to_owned(),
                Entry {
                    value: v.to_owned(),
                    line,
                },
            );
        }
        Ok(Self { entries })
    }

    /// Apply a `key=value` override; later overrides win.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let Some((k, v)) = assignment.split_once('=') else {
            return Err(ConfigError::Parse {
                line: 0,
                msg: format!("override `{assignment}` is not key=value"),
            });
        };
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(ConfigError::Parse {
                line: 0,
                msg: format!("unknown key `{k}`"),
            });
        }
        self.entries.insert(
            k.to_owned(),
            Entry {
                value: v.trim().to_owned(),
                line: 0,
            },
        );
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| ConfigError::Parse {
                line: e.line,
                msg: format!("`{key}`: {err}"),
            }),
        }
    }

    fn require<T: FromStr>(&self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or(ConfigError::Missing(key))
    }

    pub fn validate(&self) -> Result<Config, ConfigError> {
        let mass2: f64 = self.require("mass2")?;
        let coupling = CouplingSpec::new(self.require("alpha_eff")?)?;
        let (e1, e2) = coupling.charges();
        let p1 = ParticleParams::new(1.0, e1)?;
        let p2 = ParticleParams::new(mass2, e2)?;

        let n: usize = self.require("grid_n")?;
        let box_length: f64 = self.require("box_length")?;
        let sampling: PotentialSampling = self.get("sampling")?.unwrap_or_default();
        let softening = self
            .get("softening")?
            .unwrap_or_else(|| GridSpec::default_softening(n, box_length, sampling));
        let grid = GridSpec::with_softening(n, box_length, softening, sampling)?;

        let n_states: usize = self.get("n_states")?.unwrap_or(1);
        if n_states == 0 {
            return Err(invalid("n_states", "must be >= 1"));
        }
        let tol: f64 = self.get("tol")?.unwrap_or(1e-7);
        if !(tol.is_finite() && tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        let light_speed: f64 = self.get("light_speed")?.unwrap_or(137.035_999);
        if !(light_speed.is_finite() && light_speed > 0.0) {
            return Err(invalid("light_speed", "must be positive"));
        }
        let orbit_radius: f64 = self.get("orbit_radius")?.unwrap_or(1.0);
        if !(orbit_radius.is_finite() && orbit_radius > 0.0) {
            return Err(invalid("orbit_radius", "must be positive"));
        }
        let dt: Option<f64> = self.get("dt")?;
        if let Some(dt) = dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(invalid("dt", "must be positive"));
            }
        }
        let levels = match self.entries.get("converge_levels") {
            None => Vec::new(),
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|err| ConfigError::Parse {
                        line: e.line,
                        msg: format!("`converge_levels`: {err}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };

        Ok(Config {
            units: UnitSystem::internal(),
            particles: [p1, p2],
            coupling,
            grid,
            terms: self.get("terms")?.unwrap_or(TermFlags::BREIT),
            projection: self.get("projection")?.unwrap_or(Projection::PositiveEnergy),
            n_states,
            tol,
            max_iter: self.get("max_iter")?.unwrap_or(300),
            seed: self.get("seed")?.unwrap_or(0),
            task: self.get("task")?,
            output_path: self.get::<String>("output_path")?.map(PathBuf::from),
            light_speed,
            orbit_radius,
            dt,
            n_steps: self.get("n_steps")?.unwrap_or(10_000),
            converge_axis: self.get("converge_axis")?.unwrap_or(ConvergeAxis::GridN),
            converge_levels: levels,
        })
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        RawConfig::parse(text)?.validate()
    }

    pub fn mass2(&self) -> f64 {
        self.particles[1].mass
    }

    /// Reduced mass m₁m₂/(m₁+m₂).
    pub fn reduced_mass(&self) -> f64 {
        let (m1, m2) = (self.particles[0].mass, self.particles[1].mass);
        m1 * m2 / (m1 + m2)
    }

    /// Render back to the file format; `Config::parse(&c.to_text())` is `c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("mass2", self.mass2().to_string());
        kv("alpha_eff", self.coupling.alpha_eff.to_string());
        kv("grid_n", self.grid.n.to_string());
        kv("box_length", self.grid.box_length.to_string());
        kv("softening", self.grid.softening.to_string());
        kv("sampling", self.grid.sampling.as_str().to_owned());
        kv("terms", self.terms.render());
        kv("projection", self.projection.as_str().to_owned());
        kv("n_states", self.n_states.to_string());
        kv("tol", self.tol.to_string());
        kv("max_iter", self.max_iter.to_string());
        kv("seed", self.seed.to_string());
        if let Some(t) = self.task {
            kv("task", t.as_str().to_owned());
        }
        if let Some(p) = &self.output_path {
            kv("output_path", p.display().to_string());
        }
        kv("light_speed", self.light_speed.to_string());
        kv("orbit_radius", self.orbit_radius.to_string());
        if let Some(dt) = self.dt {
            kv("dt", dt.to_string());
        }
        kv("n_steps", self.n_steps.to_string());
        kv("converge_axis", self.converge_axis.as_str().to_owned());
        if !self.converge_levels.is_empty() {
            let levels: Vec<String> = self.converge_levels.iter().map(f64::to_string).collect();
            kv("converge_levels", levels.join(","));
        }
        out
    }
}

/// Read and validate a config file.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    Config::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "mass2 = 1\nalpha_eff = 0.3\ngrid_n = 32\nbox_length = 60\n";

    #[test]
    fn valid_config() {
        let c = Config::parse(BASE).unwrap();
        assert_eq!(c.grid.n, 32);
        assert_eq!(c.coupling.alpha_eff, 0.3);
        assert_eq!(c.mass2(), 1.0);
        assert!((c.coupling.e1e2() + 0.3).abs() < 1e-15);
        let (e1, e2) = c.coupling.charges();
        assert!((e1 * e2 + 0.3).abs() < 1e-15);
    }

    #[test]
    fn negative_mass_names_mass() {
        let err = Config::parse(&BASE.replace("mass2 = 1", "mass2 = -1")).unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn default_softening_pointwise_is_half_spacing() {
        let c = Config::parse(&format!("{BASE}sampling = pointwise\n")).unwrap();
        assert_eq!(c.grid.softening, 60.0 / 32.0 / 2.0);
        let c = Config::parse(BASE).unwrap();
        assert_eq!(c.grid.softening, 0.0);
    }

    #[test]
    fn parse_error_reports_line() {
        let err = Config::parse("mass2 = 1\nalpha_eff 0.3\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        let err = Config::parse("mass2 = 1\nalpha_eff = x\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(Config::parse(&format!("{BASE}mass = 3\n")).is_err());
        assert!(Config::parse(&format!("{BASE}grid_n = 16\n")).is_err());
    }

    #[test]
    fn grid_invariants() {
        assert!(GridSpec::new(6, 10.0, PotentialSampling::BandLimited).is_err());
        assert!(GridSpec::new(9, 10.0, PotentialSampling::BandLimited).is_err());
        assert!(GridSpec::new(8, -1.0, PotentialSampling::BandLimited).is_err());
        assert!(GridSpec::with_softening(8, 10.0, 2.5, PotentialSampling::Pointwise).is_err());
        let g = GridSpec::new(8, 16.0, PotentialSampling::BandLimited).unwrap();
        assert_eq!(g.spacing(), 2.0);
        assert_eq!(g.wrap(3), 3);
        assert_eq!(g.wrap(4), -4);
        assert_eq!(g.position(g.index(7, 0, 4)), [-2.0, 0.0, -8.0]);
        for p in 0..g.len() {
            assert_eq!(g.mirror(g.mirror(p)), p);
        }
    }

    #[test]
    fn overrides_revalidate() {
        let mut raw = RawConfig::parse(BASE).unwrap();
        raw.set("grid_n=5").unwrap();
        assert!(raw.validate().is_err());
        raw.set("grid_n=16").unwrap();
        assert_eq!(raw.validate().unwrap().grid.n, 16);
    }

    #[test]
    fn to_text_round_trip_full() {
        let text = format!(
            "{BASE}softening = 0.3\nsampling = pointwise\nterms = coulomb,gaunt\n\
             task = converge\noutput_path = out/x.json\ndt = 0.01\nconverge_levels = 16,24,32\n"
        );
        let c = Config::parse(&text).unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_key_is_written_once() {
        let text = format!("{BASE}task = spectrum\noutput_path = o.json\ndt = 0.5\nconverge_levels = 1,2,3\n");
        let c = Config::parse(&text).unwrap();
        let written = c.to_text();
        for key in CONFIG_KEYS {
            let count = written
                .lines()
                .filter(|l| l.split('=').next().map(str::trim) == Some(key))
                .count();
            assert_eq!(count, 1, "{key}");
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn config_text_round_trips(
            mass2 in 0.01f64..1e4,
            alpha in 0.0f64..0.9,
            half_n in 4usize..40,
            box_length in 1.0f64..1e3,
            soft_frac in 0.0f64..0.2,
            mask in 0u8..8,
            projected in any::<bool>(),
            n_states in 1usize..9,
            seed in any::<u64>(),
            tol in 1e-12f64..1e-3,
        ) {
            let terms = TermFlags { coulomb: mask & 1 != 0, gaunt: mask & 2 != 0, retardation: mask & 4 != 0 };
            let text = format!(
                "mass2 = {mass2}\nalpha_eff = {alpha}\ngrid_n = {}\nbox_length = {box_length}\nsoftening = {}\nterms = {}\nprojection = {}\nn_states = {n_states}\nseed = {seed}\ntol = {tol}\nconverge_levels = 16,24,32\n",
                2 * half_n,
                soft_frac * box_length,
                terms.render(),
                if projected { "positive_energy" } else { "none" },
            );
            let c = Config::parse(&text).unwrap();
            prop_assert_eq!(Config::parse(&c.to_text()).unwrap(), c.clone());
            prop_assert_eq!(c.terms, terms);
            prop_assert!((c.reduced_mass() - mass2 / (1.0 + mass2)).abs() < 1e-12);
        }

        #[test]
        fn odd_grid_is_rejected(half_n in 4usize..40) {
            let text = format!("mass2 = 1\nalpha_eff = 0.1\ngrid_n = {}\nbox_length = 10\n", 2 * half_n + 1);
            prop_assert!(Config::parse(&text).is_err());
        }
    }
}
