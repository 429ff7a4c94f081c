//! Stationary two-body problem in the center-of-mass frame on a periodic
//! Fourier grid.
//!
//! The relative-coordinate Hamiltonian (total momentum zero, so particle 2
//! carries −p⃗) is
//!
//! ```text
//! H = α⃗₁·p⃗ − α⃗₂·p⃗ + m₁β₁ + m₂β₂ + V(r⃗)
//! ```
//!
//! with the kinetic part diagonal in momentum space and the interaction
//! diagonal in position space. Bound states are sought in the range of the
//! free positive-energy projector Λ₊⁽¹⁾(k)⊗Λ₊⁽²⁾(−k); without it the lowest
//! eigenvalues belong to the negative-energy continuum.

use std::io::{Read, Write};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::breit::KernelField;
use crate::eigen::{self, HermitianOperator, LobpcgOptions};
use crate::fft::Fft3;
use crate::model::{CouplingSpec, GridSpec, ParticleParams, Projection, TermFlags};
use crate::spinor::{alpha_dot, beta, embed, Particle, SpinMatrix16, SpinMatrix4};
use crate::SPIN_DIM;

/// Eigenvalues closer than this (in m₁c²) are reported as one cluster.
pub const CLUSTER_GAP: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("field grid {found:?} does not match operator grid {expected:?}")]
    GridMismatch { expected: GridSpec, found: GridSpec },
    #[error("cannot normalize a zero field")]
    ZeroField,
    #[error("amplitude array has length {found}, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("n_states must be at least 1")]
    NoStates,
    #[error("field dump: {0}")]
    Io(#[from] std::io::Error),
    #[error("field dump header: {0}")]
    Header(String),
}

/// Discretized Ψ(r⃗) over the relative coordinate, 16 spinor components per
/// grid point (point-major, component index `4a + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct BilocalField {
    grid: GridSpec,
    amplitudes: Vec<Complex64>,
}

impl BilocalField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            amplitudes: vec![Complex64::default(); grid.len() * SPIN_DIM],
        }
    }

    pub fn from_amplitudes(grid: &GridSpec, amplitudes: Vec<Complex64>) -> Result<Self, SolverError> {
        let expected = grid.len() * SPIN_DIM;
        if amplitudes.len() != expected {
            return Err(SolverError::Shape {
                expected,
                found: amplitudes.len(),
            });
        }
        Ok(Self {
            grid: *grid,
            amplitudes,
        })
    }

    /// Uniform random amplitudes in [−½, ½)² per component.
    pub fn random(grid: &GridSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitudes = (0..grid.len() * SPIN_DIM)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        Self {
            grid: *grid,
            amplitudes,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn spinor(&self, p: usize) -> &[Complex64] {
        &self.amplitudes[p * SPIN_DIM..(p + 1) * SPIN_DIM]
    }

    /// ⟨self|other⟩ = h³ Σ conj(self)·other.
    pub fn inner(&self, other: &Self) -> Complex64 {
        eigen::dot(&self.amplitudes, &other.amplitudes) * self.grid.cell_volume()
    }

    /// Discrete L² norm, sqrt(h³ Σ |Ψ|²).
    pub fn norm(&self) -> f64 {
        eigen::norm(&self.amplitudes) * self.grid.cell_volume().sqrt()
    }

    pub fn scaled(mut self, s: Complex64) -> Self {
        self.amplitudes.iter_mut().for_each(|z| *z *= s);
        self
    }

    /// Flat binary dump: `u64 n`, `u64 16`, then `n³·16` little-endian
    /// `(re, im)` float64 pairs in point-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), SolverError> {
        w.write_all(&(self.grid.n as u64).to_le_bytes())?;
        w.write_all(&(SPIN_DIM as u64).to_le_bytes())?;
        for z in &self.amplitudes {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read a dump written by [`write_binary`](Self::write_binary); the grid
    /// geometry must be supplied since only `n` is stored.
    pub fn read_binary<R: Read>(grid: &GridSpec, mut r: R) -> Result<Self, SolverError> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let comps = u64::from_le_bytes(word) as usize;
        if n != grid.n || comps != SPIN_DIM {
            return Err(SolverError::Header(format!("n={n}, components={comps}")));
        }
        let mut amplitudes = Vec::with_capacity(grid.len() * SPIN_DIM);
        for _ in 0..grid.len() * SPIN_DIM {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            amplitudes.push(Complex64::new(re, f64::from_le_bytes(word)));
        }
        Self::from_amplitudes(grid, amplitudes)
    }
}

/// Scale to unit discrete norm.
pub fn normalize(psi: &BilocalField) -> Result<BilocalField, SolverError> {
    let n = psi.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(SolverError::ZeroField);
    }
    Ok(psi.clone().scaled(Complex64::from(1.0 / n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub particles: [ParticleParams; 2],
    pub coupling: CouplingSpec,
    pub grid: GridSpec,
    pub terms: TermFlags,
    pub projection: Projection,
}

impl HamiltonianSpec {
    pub fn total_mass(&self) -> f64 {
        self.particles[0].mass + self.particles[1].mass
    }

    pub fn reduced_mass(&self) -> f64 {
        let (m1, m2) = (self.particles[0].mass, self.particles[1].mass);
        m1 * m2 / (m1 + m2)
    }
}

type Block = [[Complex64; 4]; 4];

fn block(m: &SpinMatrix4) -> Block {
    let mut b = [[Complex64::default(); 4]; 4];
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    b
}

/// A X Bᵀ on a 16-component spinor stored as X[a][b] = x[4a + b].
#[inline]
fn left_right(a: &Block, b: &Block, x: &[Complex64], out: &mut [Complex64]) {
    let mut ax = [[Complex64::default(); 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            for j in 0..4 {
                ax[i][j] += aik * x[4 * k + j];
            }
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = Complex64::default();
            for l in 0..4 {
                acc += ax[i][l] * b[j][l];
            }
            out[4 * i + j] = acc;
        }
    }
}

/// T₁X + XT₂ᵀ.
#[inline]
fn kinetic_action(t1: &Block, t2: &Block, x: &[Complex64], out: &mut [Complex64]) {
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = Complex64::default();
            for l in 0..4 {
                acc += t1[i][l] * x[4 * l + j] + x[4 * i + l] * t2[j][l];
            }
            out[4 * i + j] = acc;
        }
    }
}

/// α⃗·k + βm for particle momentum `k`.
pub fn one_body_free(k: [f64; 3], mass: f64) -> SpinMatrix4 {
    alpha_dot(k) + beta() * Complex64::from(mass)
}

/// (E + α⃗·k + βm) / 2E.
pub fn one_body_projector(k: [f64; 3], mass: f64) -> SpinMatrix4 {
    let e = (mass * mass + k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    (SpinMatrix4::identity() * Complex64::from(e) + one_body_free(k, mass)) * Complex64::from(0.5 / e)
}

/// 16×16 free two-body matrix of relative momentum mode `k`.
pub fn free_mode_matrix(particles: &[ParticleParams; 2], k: [f64; 3]) -> SpinMatrix16 {
    let mk = [-k[0], -k[1], -k[2]];
    embed(&one_body_free(k, particles[0].mass), Particle::One)
        + embed(&one_body_free(mk, particles[1].mass), Particle::Two)
}

/// Λ₊⁽¹⁾(k) ⊗ Λ₊⁽²⁾(−k).
pub fn mode_projector(particles: &[ParticleParams; 2], k: [f64; 3]) -> SpinMatrix16 {
    let mk = [-k[0], -k[1], -k[2]];
    one_body_projector(k, particles[0].mass).kronecker(&one_body_projector(mk, particles[1].mass))
}

#[derive(Debug, Clone)]
struct ModeBlocks {
    t1: Block,
    t2: Block,
    l1: Block,
    l2: Block,
    /// E₁ + E₂ − (m₁ + m₂).
    kinetic: f64,
}

/// Matrix-free discretized Hamiltonian with precomputed per-mode blocks.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    spec: HamiltonianSpec,
    fft: Fft3,
    kernel: Option<KernelField>,
    modes: Vec<ModeBlocks>,
    lowest_nonzero_kinetic: f64,
}

impl Hamiltonian {
    pub fn new(spec: &HamiltonianSpec) -> Self {
        let grid = spec.grid;
        let (m1, m2) = (spec.particles[0].mass, spec.particles[1].mass);
        let modes: Vec<ModeBlocks> = (0..grid.len())
            .into_par_iter()
            .map(|p| {
                let k = grid.wavevector(p);
                let mk = [-k[0], -k[1], -k[2]];
                let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                ModeBlocks {
                    t1: block(&one_body_free(k, m1)),
                    t2: block(&one_body_free(mk, m2)),
                    l1: block(&one_body_projector(k, m1)),
                    l2: block(&one_body_projector(mk, m2)),
                    kinetic: (m1 * m1 + k2).sqrt() + (m2 * m2 + k2).sqrt() - m1 - m2,
                }
            })
            .collect();
        let lowest_nonzero_kinetic = modes
            .iter()
            .map(|m| m.kinetic)
            .filter(|&k| k > 0.0)
            .fold(f64::INFINITY, f64::min);
        let kernel = spec.terms.any().then(|| KernelField::new(&grid, &spec.coupling));
        Self {
            spec: *spec,
            fft: Fft3::new(grid.n),
            kernel,
            modes,
            lowest_nonzero_kinetic,
        }
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn kernel(&self) -> Option<&KernelField> {
        self.kernel.as_ref()
    }

    fn check(&self, psi: &BilocalField) -> Result<(), SolverError> {
        if psi.grid != self.spec.grid {
            return Err(SolverError::GridMismatch {
                expected: self.spec.grid,
                found: psi.grid,
            });
        }
        Ok(())
    }

    fn per_mode(&self, data: &mut [Complex64], f: impl Fn(&ModeBlocks, &[Complex64], &mut [Complex64]) + Sync) {
        data.par_chunks_mut(SPIN_DIM)
            .zip(self.modes.par_iter())
            .for_each(|(chunk, m)| {
                let x: [Complex64; SPIN_DIM] = chunk.try_into().unwrap();
                f(m, &x, chunk);
            });
    }

    fn add_potential(&self, x: &[Complex64], out: &mut [Complex64]) {
        if let Some(kernel) = &self.kernel {
            let terms = self.spec.terms;
            out.par_chunks_mut(SPIN_DIM)
                .zip(x.par_chunks(SPIN_DIM))
                .enumerate()
                .for_each(|(p, (o, xi))| kernel.apply_point(p, terms, xi, o));
        }
    }

    /// y = H x on raw amplitude arrays.
    pub fn apply_raw(&self, x: &[Complex64], y: &mut [Complex64]) {
        let mut xk = x.to_vec();
        self.fft.forward_spinor(&mut xk);
        self.per_mode(&mut xk, |m, xi, o| kinetic_action(&m.t1, &m.t2, xi, o));
        self.fft.inverse_spinor(&mut xk);
        y.copy_from_slice(&xk);
        self.add_potential(x, y);
    }

    /// x ← P x.
    pub fn project_raw(&self, x: &mut [Complex64]) {
        self.fft.forward_spinor(x);
        self.per_mode(x, |m, xi, o| left_right(&m.l1, &m.l2, xi, o));
        self.fft.inverse_spinor(x);
    }

    /// y = P H P x, fused so that only two forward and two inverse
    /// transforms are needed.
    pub fn apply_projected_raw(&self, x: &[Complex64], y: &mut [Complex64]) {
        let mut xk = x.to_vec();
        self.fft.forward_spinor(&mut xk);
        self.per_mode(&mut xk, |m, xi, o| left_right(&m.l1, &m.l2, xi, o));
        let mut px = xk.clone();
        self.fft.inverse_spinor(&mut px);
        let mut vx = vec![Complex64::default(); x.len()];
        self.add_potential(&px, &mut vx);
        self.fft.forward_spinor(&mut vx);
        vx.par_chunks_mut(SPIN_DIM)
            .zip(xk.par_chunks(SPIN_DIM))
            .zip(self.modes.par_iter())
            .for_each(|((v, xi), m)| {
                let mut kin = [Complex64::default(); SPIN_DIM];
                kinetic_action(&m.t1, &m.t2, xi, &mut kin);
                let mut sum = [Complex64::default(); SPIN_DIM];
                for i in 0..SPIN_DIM {
                    sum[i] = v[i] + kin[i];
                }
                left_right(&m.l1, &m.l2, &sum, v);
            });
        self.fft.inverse_spinor(&mut vx);
        y.copy_from_slice(&vx);
    }

    pub fn apply(&self, psi: &BilocalField) -> Result<BilocalField, SolverError> {
        self.check(psi)?;
        let mut out = BilocalField::zeros(&psi.grid);
        self.apply_raw(&psi.amplitudes, &mut out.amplitudes);
        Ok(out)
    }

    pub fn project(&self, psi: &BilocalField) -> Result<BilocalField, SolverError> {
        self.check(psi)?;
        let mut out = psi.clone();
        self.project_raw(&mut out.amplitudes);
        Ok(out)
    }

    /// The operator whose spectrum is computed: PHP or H.
    pub fn apply_effective(&self, psi: &BilocalField) -> Result<BilocalField, SolverError> {
        self.check(psi)?;
        let mut out = BilocalField::zeros(&psi.grid);
        HermitianOperator::apply(self, &psi.amplitudes, &mut out.amplitudes);
        Ok(out)
    }

    /// ⟨ψ|H_eff|ψ⟩ / ⟨ψ|ψ⟩.
    pub fn rayleigh_quotient(&self, psi: &BilocalField) -> Result<f64, SolverError> {
        let hpsi = self.apply_effective(psi)?;
        Ok(psi.inner(&hpsi).re / psi.inner(psi).re)
    }
}

impl HermitianOperator for Hamiltonian {
    fn dim(&self) -> usize {
        self.spec.grid.len() * SPIN_DIM
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        match self.spec.projection {
            Projection::PositiveEnergy => self.apply_projected_raw(x, y),
            Projection::None => self.apply_raw(x, y),
        }
    }

    fn precondition(&self, r: &mut [Complex64], sigma: f64) {
        if self.spec.projection == Projection::None {
            return;
        }
        // 1 / (kinetic + δ) per mode; δ tracks the current binding depth.
        let shift = (self.spec.total_mass() - sigma).max(self.lowest_nonzero_kinetic);
        self.fft.forward_spinor(r);
        self.per_mode(r, |m, xi, o| {
            let s = 1.0 / (m.kinetic + shift);
            let mut scaled = [Complex64::default(); SPIN_DIM];
            for i in 0..SPIN_DIM {
                scaled[i] = xi[i] * s;
            }
            left_right(&m.l1, &m.l2, &scaled, o);
        });
        self.fft.inverse_spinor(r);
    }

    fn restrict(&self, x: &mut [Complex64]) {
        if self.spec.projection == Projection::PositiveEnergy {
            self.project_raw(x);
        }
    }
}

/// H ψ for the raw (unprojected) operator.
pub fn apply_hamiltonian(spec: &HamiltonianSpec, psi: &BilocalField) -> Result<BilocalField, SolverError> {
    Hamiltonian::new(spec).apply(psi)
}

/// Free positive-energy projection of ψ.
pub fn positive_energy_projector(spec: &HamiltonianSpec, psi: &BilocalField) -> Result<BilocalField, SolverError> {
    Hamiltonian::new(spec).project(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub first: usize,
    pub size: usize,
    pub mean: f64,
}

/// Group sorted eigenvalues whose neighbours are closer than `gap`.
pub fn clusters(eigenvalues: &[f64], gap: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    for (i, &e) in eigenvalues.iter().enumerate() {
        match out.last_mut() {
            Some(c) if (e - eigenvalues[i - 1]).abs() < gap => {
                c.mean = (c.mean * c.size as f64 + e) / (c.size + 1) as f64;
                c.size += 1;
            }
            _ => out.push(Cluster {
                first: i,
                size: 1,
                mean: e,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub binding_energies: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub tolerance: f64,
    pub clusters: Vec<Cluster>,
    pub terms: TermFlags,
    pub projection: Projection,
    pub grid: GridSpec,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub states: Vec<BilocalField>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub n_states: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub guard: usize,
    /// Starting vectors, e.g. converged states of a nearby problem.
    pub initial: Vec<BilocalField>,
}

impl SolveOptions {
    pub fn new(n_states: usize, tol: f64) -> Self {
        Self {
            n_states,
            tol,
            max_iter: 300,
            seed: 0,
            guard: 3,
            initial: Vec::new(),
        }
    }
}

/// Lowest eigenvalues of PHP restricted to range(P) (or of H when the
/// projection is off). Non-convergence is reported in the result, not as an
/// error.
pub fn solve_spectrum(spec: &HamiltonianSpec, opts: &SolveOptions) -> Result<SpectrumResult, SolverError> {
    let h = Hamiltonian::new(spec);
    solve_with(&h, opts)
}

pub fn solve_with(h: &Hamiltonian, opts: &SolveOptions) -> Result<SpectrumResult, SolverError> {
    if opts.n_states == 0 {
        return Err(SolverError::NoStates);
    }
    for f in &opts.initial {
        h.check(f)?;
    }
    let start = Instant::now();
    let spec = h.spec;
    let initial = (!opts.initial.is_empty())
        .then(|| opts.initial.iter().map(|f| f.amplitudes.clone()).collect());
    let out = eigen::lobpcg(
        h,
        &LobpcgOptions {
            n_wanted: opts.n_states,
            guard: opts.guard,
            tol: opts.tol,
            max_iter: opts.max_iter,
            seed: opts.seed,
            ..Default::default()
        },
        initial,
    );
    let total = spec.total_mass();
    let states = out
        .vectors
        .into_iter()
        .map(|v| {
            let f = BilocalField {
                grid: spec.grid,
                amplitudes: v,
            };
            normalize(&f).unwrap_or(f)
        })
        .collect();
    Ok(SpectrumResult {
        binding_energies: out.eigenvalues.iter().map(|e| e - total).collect(),
        clusters: clusters(&out.eigenvalues, CLUSTER_GAP),
        eigenvalues: out.eigenvalues,
        residual_norms: out.residuals,
        iterations: out.iterations,
        converged: out.converged,
        tolerance: opts.tol,
        terms: spec.terms,
        projection: spec.projection,
        grid: spec.grid,
        wall_time_s: start.elapsed().as_secs_f64(),
        states,
    })
}
