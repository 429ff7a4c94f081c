//! First-order perturbation theory from closed forms.
//!
//! Nonrelativistic Coulomb states (with reduced mass) are embedded into
//! 16-component fields and the magnetic parts of the kernel are evaluated as
//! expectation values. Nothing here calls into the solver's kernel code: the
//! Dirac matrices, the radial profile and the contractions are written out
//! again so that agreement between the two is a real check.

use std::f64::consts::PI;
use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::Fft3;
use crate::model::{CouplingSpec, GridSpec, PotentialSampling};
use crate::solver::{normalize, BilocalField, SolverError};
use crate::SPIN_DIM;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid quantum numbers n={n}, l={l}, m={m}")]
    QuantumNumbers { n: u32, l: u32, m: i32 },
    #[error("state needs mu > 0 and an attractive coupling, got mu={mu}, alpha={alpha}")]
    Parameters { mu: f64, alpha: f64 },
    #[error("grid does not resolve the state: need n >= {required_n} and box_length >= {required_box_length}")]
    Resolution {
        required_n: usize,
        required_box_length: f64,
    },
    #[error("supercritical coupling: |alpha| = {alpha} >= |kappa| = {kappa}")]
    Supercritical { alpha: f64, kappa: i32 },
    #[error("kappa = {kappa} is not allowed for n = {n}")]
    Kappa { n: u32, kappa: i32 },
    #[error("field is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error(transparent)]
    Field(#[from] SolverError),
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Generalized Laguerre polynomial L_k^(a)(x).
fn laguerre(k: u32, a: f64, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 1.0 + a - x);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let j = f64::from(j);
        let next = ((2.0 * j + 1.0 + a - x) * cur - (j + a) * prev) / (j + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Gegenbauer polynomial C_k^(λ)(x).
fn gegenbauer(k: u32, lambda: f64, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * lambda * x);
    if k == 0 {
        return prev;
    }
    for j in 2..=k {
        let j = f64::from(j);
        let next = (2.0 * x * (j + lambda - 1.0) * cur - (j + 2.0 * lambda - 2.0) * prev) / j;
        prev = cur;
        cur = next;
    }
    cur
}

/// Associated Legendre P_l^m(x), m ≥ 0, Condon-Shortley phase included.
fn legendre(l: u32, m: u32, x: f64) -> f64 {
    let mut pmm = 1.0;
    let s = (1.0 - x * x).max(0.0).sqrt();
    for i in 0..m {
        pmm *= -(2.0 * f64::from(i) + 1.0) * s;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = x * (2.0 * f64::from(m) + 1.0) * pmm;
    for ll in (m + 2)..=l {
        let ll_f = f64::from(ll);
        let next = ((2.0 * ll_f - 1.0) * x * pm1 - (ll_f + f64::from(m) - 1.0) * pmm) / (ll_f - f64::from(m));
        pmm = pm1;
        pm1 = next;
    }
    pm1
}

/// Y_lm of the direction of `v`; the z axis is used for the zero vector.
pub fn spherical_harmonic(l: u32, m: i32, v: [f64; 3]) -> Complex64 {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (ct, phi) = if r == 0.0 {
        (1.0, 0.0)
    } else {
        (v[2] / r, v[1].atan2(v[0]))
    };
    let am = m.unsigned_abs();
    let norm = ((2.0 * f64::from(l) + 1.0) / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let y = Complex64::from_polar(norm * legendre(l, am, ct), f64::from(am as i32) * phi);
    if m >= 0 {
        y
    } else if am % 2 == 0 {
        y.conj()
    } else {
        -y.conj()
    }
}

/// Bound eigenstate ψ_nlm of the nonrelativistic Coulomb problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydrogenicState {
    pub n: u32,
    pub l: u32,
    pub m: i32,
    pub mu: f64,
    pub alpha_eff: f64,
}

impl HydrogenicState {
    pub fn new(n: u32, l: u32, m: i32, mu: f64, alpha_eff: f64) -> Result<Self, OracleError> {
        if n == 0 || l >= n || m.unsigned_abs() > l {
            return Err(OracleError::QuantumNumbers { n, l, m });
        }
        if !(mu > 0.0 && alpha_eff > 0.0 && mu.is_finite() && alpha_eff.is_finite()) {
            return Err(OracleError::Parameters { mu, alpha: alpha_eff });
        }
        Ok(Self {
            n,
            l,
            m,
            mu,
            alpha_eff,
        })
    }

    pub fn ground(mu: f64, alpha_eff: f64) -> Result<Self, OracleError> {
        Self::new(1, 0, 0, mu, alpha_eff)
    }

    pub fn bohr_radius(&self) -> f64 {
        1.0 / (self.mu * self.alpha_eff)
    }

    pub fn energy(&self) -> f64 {
        -self.mu * self.alpha_eff * self.alpha_eff / (2.0 * f64::from(self.n * self.n))
    }

    /// R_nl(r).
    pub fn radial(&self, r: f64) -> f64 {
        let (n, l) = (self.n, self.l);
        let a = self.bohr_radius();
        let nf = f64::from(n);
        let rho = 2.0 * r / (nf * a);
        let norm = ((2.0 / (nf * a)).powi(3) * factorial(n - l - 1) / (2.0 * nf * factorial(n + l))).sqrt();
        norm * (-rho / 2.0).exp() * rho.powi(l as i32) * laguerre(n - l - 1, 2.0 * f64::from(l) + 1.0, rho)
    }

    /// ψ(r⃗) from the closed form.
    pub fn amplitude(&self, r: [f64; 3]) -> Complex64 {
        let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        spherical_harmonic(self.l, self.m, r) * self.radial(len)
    }

    /// ∫ ψ(r⃗) e^{−ik⃗·r⃗} d³r, from the closed momentum-space form.
    pub fn momentum_amplitude(&self, k: [f64; 3]) -> Complex64 {
        let (n, l) = (self.n, self.l);
        let a = self.bohr_radius();
        let nf = f64::from(n);
        let p = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt() * a;
        let np2 = nf * nf * p * p;
        let f = (2.0 / PI * factorial(n - l - 1) / factorial(n + l)).sqrt()
            * nf
            * nf
            * 2f64.powi(2 * l as i32 + 2)
            * factorial(l)
            * (nf * p).powi(l as i32)
            / (np2 + 1.0).powi(l as i32 + 2)
            * gegenbauer(n - l - 1, f64::from(l) + 1.0, (np2 - 1.0) / (np2 + 1.0));
        let phase = (-I).powu(l);
        phase * spherical_harmonic(l, self.m, k) * (f * (2.0 * PI).powf(1.5) * a.powf(1.5))
    }

    /// Check h ≤ a_B/4 and L ≥ 8n²a_B.
    pub fn check_resolution(&self, grid: &GridSpec) -> Result<(), OracleError> {
        let a = self.bohr_radius();
        let slack = 1.0 + 1e-12;
        let need_l = 8.0 * f64::from(self.n * self.n) * a;
        let length = grid.box_length.max(need_l);
        let mut need_n = (4.0 * length / a / slack).ceil() as usize;
        need_n += need_n % 2;
        if grid.spacing() > a / 4.0 * slack || grid.box_length * slack < need_l {
            return Err(OracleError::Resolution {
                required_n: need_n.max(grid.n),
                required_box_length: length,
            });
        }
        Ok(())
    }

    /// Grid values of the state's projection onto the grid's Fourier modes
    /// (not normalized).
    pub fn sample_scalar(&self, grid: &GridSpec) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = (0..grid.len())
            .into_par_iter()
            .map(|p| self.momentum_amplitude(grid.wavevector(p)))
            .collect();
        Fft3::new(grid.n).inverse(&mut c);
        let scale = grid.len() as f64 / grid.box_length.powi(3);
        c.iter_mut().for_each(|z| *z *= scale);
        c
    }
}

/// Normalized two-particle spin state, index `2·s₁ + s₂` with 0 = up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinState(pub [Complex64; 4]);

impl SpinState {
    pub fn product(s1: [Complex64; 2], s2: [Complex64; 2]) -> Self {
        let mut v = [ZERO; 4];
        for a in 0..2 {
            for b in 0..2 {
                v[2 * a + b] = s1[a] * s2[b];
            }
        }
        Self::normalized(v)
    }

    pub fn up_up() -> Self {
        Self([ONE, ZERO, ZERO, ZERO])
    }

    pub fn singlet() -> Self {
        Self::normalized([ZERO, ONE, -ONE, ZERO])
    }

    /// Triplet with S_z = `m_s` ∈ {−1, 0, 1}.
    pub fn triplet(m_s: i32) -> Self {
        match m_s {
            1 => Self::up_up(),
            0 => Self::normalized([ZERO, ONE, ONE, ZERO]),
            _ => Self([ZERO, ZERO, ZERO, ONE]),
        }
    }

    fn normalized(v: [Complex64; 4]) -> Self {
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        Self(v.map(|z| z / n))
    }
}

/// How a scalar orbital is dressed into a 16-component field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauliEmbedding {
    pub spin: SpinState,
    /// Lower components σ⃗·p⃗/(2m) per particle when `Some([m₁, m₂])`.
    pub small_components: Option<[f64; 2]>,
}

impl PauliEmbedding {
    pub fn upper_only(spin: SpinState) -> Self {
        Self {
            spin,
            small_components: None,
        }
    }

    pub fn with_small_components(spin: SpinState, m1: f64, m2: f64) -> Self {
        Self {
            spin,
            small_components: Some([m1, m2]),
        }
    }
}

type Mat2 = [[Complex64; 2]; 2];
type Mat4 = [[Complex64; 4]; 4];

fn sigma(i: usize) -> Mat2 {
    match i {
        0 => [[ZERO, ONE], [ONE, ZERO]],
        1 => [[ZERO, -I], [I, ZERO]],
        _ => [[ONE, ZERO], [ZERO, -ONE]],
    }
}

fn sigma_dot(v: [f64; 3]) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for (i, &vi) in v.iter().enumerate() {
        let s = sigma(i);
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] += s[r][c] * vi;
            }
        }
    }
    out
}

/// [[0, σ·v], [σ·v, 0]].
fn dirac_alpha(v: [f64; 3]) -> Mat4 {
    let s = sigma_dot(v);
    let mut out = [[ZERO; 4]; 4];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c + 2] = s[r][c];
            out[r + 2][c] = s[r][c];
        }
    }
    out
}

/// 4×2 map from a Pauli spinor to a bispinor at particle momentum `p`.
fn bispinor_map(p: [f64; 3], mass: Option<f64>) -> [[Complex64; 2]; 4] {
    let mut e = [[ZERO; 2]; 4];
    e[0][0] = ONE;
    e[1][1] = ONE;
    if let Some(m) = mass {
        let s = sigma_dot(p);
        for r in 0..2 {
            for c in 0..2 {
                e[r + 2][c] = s[r][c] / (2.0 * m);
            }
        }
    }
    e
}

/// Embed a hydrogenic orbital into a normalized 16-component field on `grid`.
pub fn sample_state(
    state: &HydrogenicState,
    emb: &PauliEmbedding,
    grid: &GridSpec,
) -> Result<BilocalField, OracleError> {
    state.check_resolution(grid)?;
    let chi = emb.spin.0;
    let masses = emb.small_components;
    let mut amps = vec![ZERO; grid.len() * SPIN_DIM];
    amps.par_chunks_mut(SPIN_DIM).enumerate().for_each(|(p, out)| {
        let k = grid.wavevector(p);
        let phi = state.momentum_amplitude(k);
        let e1 = bispinor_map(k, masses.map(|m| m[0]));
        let e2 = bispinor_map([-k[0], -k[1], -k[2]], masses.map(|m| m[1]));
        for a in 0..4 {
            for b in 0..4 {
                let mut acc = ZERO;
                for s1 in 0..2 {
                    for s2 in 0..2 {
                        acc += e1[a][s1] * e2[b][s2] * chi[2 * s1 + s2];
                    }
                }
                out[4 * a + b] = acc * phi;
            }
        }
    });
    Fft3::new(grid.n).inverse_spinor(&mut amps);
    let field = BilocalField::from_amplitudes(grid, amps)?;
    Ok(normalize(&field)?)
}

/// Which part of the interaction an expectation value is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPart {
    Gaunt,
    Retardation,
    /// e₁e₂ [f_a − f₀]: the change of the Coulomb energy when softening `a`
    /// is switched on.
    CoulombSofteningDelta { softening: f64 },
}

/// 4π ∫₀^R r² j₀(qr) / sqrt(r² + a²) dr.
fn sphere_transform(q: f64, a: f64, cutoff: f64) -> f64 {
    if a == 0.0 {
        return if q == 0.0 {
            2.0 * PI * cutoff * cutoff
        } else {
            8.0 * PI * (0.5 * q * cutoff).sin().powi(2) / (q * q)
        };
    }
    // Panels of roughly half a wavelength, refined near the softening scale.
    let rule = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
    let mut edges = vec![0.0, a.min(cutoff)];
    let step = (PI / q.max(1e-300)).min(cutoff / 24.0).max(cutoff / 4096.0);
    let mut x = a.min(cutoff);
    while x < cutoff {
        x = (x + step).min(cutoff);
        edges.push(x);
    }
    let f = |r: f64| {
        let qr = q * r;
        let j0 = if qr.abs() < 1e-6 { 1.0 - qr * qr / 6.0 } else { qr.sin() / qr };
        r * r * j0 / (r * r + a * a).sqrt()
    };
    4.0 * PI
        * edges
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| rule.integrate(w[0], w[1], f))
            .sum::<f64>()
}

/// Real-space radial profile (1/r regularized the same way the grid asks
/// for) with explicit softening.
fn profile(grid: &GridSpec, softening: f64) -> Vec<f64> {
    if grid.sampling == PotentialSampling::Pointwise {
        return (0..grid.len())
            .map(|p| {
                let r = grid.position(p);
                1.0 / (r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + softening * softening).sqrt()
            })
            .collect();
    }
    let cutoff = 0.5 * grid.box_length;
    let mut c: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let k = grid.wavevector(p);
            let q = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
            Complex64::from(sphere_transform(q, softening, cutoff))
        })
        .collect();
    Fft3::new(grid.n).inverse(&mut c);
    let scale = grid.len() as f64 / grid.box_length.powi(3);
    c.iter().map(|z| z.re * scale).collect()
}

/// Σ_ij ⟨x|(A ⊗ B)|y⟩ for one point.
fn sandwich(x: &[Complex64], a: &Mat4, b: &Mat4, y: &[Complex64]) -> Complex64 {
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            let xc = x[4 * i + j].conj();
            if xc == ZERO {
                continue;
            }
            for k in 0..4 {
                if a[i][k] == ZERO {
                    continue;
                }
                for l in 0..4 {
                    acc += xc * a[i][k] * b[j][l] * y[4 * k + l];
                }
            }
        }
    }
    acc
}

fn point_matrix_element(part: KernelPart, r: [f64; 3], x: &[Complex64], y: &[Complex64]) -> Complex64 {
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    match part {
        KernelPart::Gaunt => axes
            .iter()
            .map(|&e| {
                let a = dirac_alpha(e);
                sandwich(x, &a, &a, y)
            })
            .sum(),
        KernelPart::Retardation => {
            let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if len == 0.0 {
                axes.iter()
                    .map(|&e| {
                        let a = dirac_alpha(e);
                        sandwich(x, &a, &a, y)
                    })
                    .sum::<Complex64>()
                    / 3.0
            } else {
                let a = dirac_alpha([r[0] / len, r[1] / len, r[2] / len]);
                sandwich(x, &a, &a, y)
            }
        }
        KernelPart::CoulombSofteningDelta { .. } => (0..SPIN_DIM).map(|i| x[i].conj() * y[i]).sum(),
    }
}

/// Matrix of ⟨Ψ_i|V_part|Ψ_j⟩ by grid quadrature.
pub fn shift_matrix(states: &[BilocalField], part: KernelPart, coupling: &CouplingSpec) -> DMatrix<Complex64> {
    let k = states.len();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let grid = *states[0].grid();
    let (radial, prefactor) = match part {
        KernelPart::CoulombSofteningDelta { softening } => {
            let soft = profile(&grid, softening);
            let base = profile(&grid, if grid.sampling == PotentialSampling::Pointwise { grid.softening } else { 0.0 });
            (soft.iter().zip(&base).map(|(s, b)| s - b).collect::<Vec<_>>(), coupling.e1e2())
        }
        _ => (profile(&grid, grid.softening), -0.5 * coupling.e1e2()),
    };
    let h3 = grid.cell_volume();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let (xi, xj) = (states[i].amplitudes(), states[j].amplitudes());
            let v: Complex64 = (0..grid.len())
                .into_par_iter()
                .map(|p| {
                    let s = p * SPIN_DIM;
                    point_matrix_element(part, grid.position(p), &xi[s..s + SPIN_DIM], &xj[s..s + SPIN_DIM])
                        * radial[p]
                })
                .sum();
            out[(i, j)] = v * (prefactor * h3);
            out[(j, i)] = out[(i, j)].conj();
        }
        out[(i, i)].im = 0.0;
    }
    out
}

/// ⟨Ψ|V_part|Ψ⟩ for a normalized field.
pub fn first_order_shift(psi: &BilocalField, part: KernelPart, coupling: &CouplingSpec) -> Result<f64, OracleError> {
    let n = psi.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(OracleError::NotNormalized(n));
    }
    Ok(shift_matrix(std::slice::from_ref(psi), part, coupling)[(0, 0)].re)
}

/// First-order shifts of a (near-)degenerate multiplet: eigenvalues of
/// diag(E⁰) + V restricted to the multiplet, minus the sorted E⁰.
pub fn degenerate_shifts(
    states: &[BilocalField],
    unperturbed: &[f64],
    parts: &[KernelPart],
    coupling: &CouplingSpec,
) -> Vec<f64> {
    let k = states.len();
    let mut h = DMatrix::<Complex64>::zeros(k, k);
    for part in parts {
        h += shift_matrix(states, *part, coupling);
    }
    for (i, e) in unperturbed.iter().enumerate() {
        h[(i, i)] += Complex64::from(*e);
    }
    let mut vals: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    let mut base = unperturbed.to_vec();
    base.sort_by(f64::total_cmp);
    vals.iter().zip(&base).map(|(v, b)| v - b).collect()
}

/// Gaunt expectation value by direct convolution in momentum space,
/// (1/L⁶) Σ_{k,k'} Ψ̂†(k) Ṽ_G(k − k') Ψ̂(k'), with Ṽ evaluated from its
/// closed form on the full difference lattice (zero-padded correlation).
pub fn gaunt_shift_momentum(psi: &BilocalField, coupling: &CouplingSpec) -> f64 {
    let grid = *psi.grid();
    let (n, big) = (grid.n, 2 * grid.n);
    let h3 = grid.cell_volume();
    // Ψ̂(k) = h³ Σ_j Ψ(r_j) e^{−ik·r_j}.
    let mut hat = psi.amplitudes().to_vec();
    Fft3::new(n).forward_spinor(&mut hat);
    let pad = |m: usize| -> usize {
        let w = grid.wrap(m);
        (if w < 0 { w + big as i64 } else { w }) as usize
    };
    let alphas: Vec<Mat4> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().map(|&e| dirac_alpha(e)).collect();
    // M Ψ̂ with M = Σ α ⊗ α.
    let mut mhat = vec![ZERO; hat.len()];
    mhat.par_chunks_mut(SPIN_DIM).zip(hat.par_chunks(SPIN_DIM)).for_each(|(o, x)| {
        for a in &alphas {
            for i in 0..4 {
                for j in 0..4 {
                    for k in 0..4 {
                        for l in 0..4 {
                            o[4 * i + j] += a[i][k] * a[j][l] * x[4 * k + l];
                        }
                    }
                }
            }
        }
    });
    let fft = Fft3::new(big);
    let nb = big * big * big;
    let corr: Vec<Complex64> = (0..SPIN_DIM)
        .into_par_iter()
        .map(|c| {
            let mut a = vec![ZERO; nb];
            let mut b = vec![ZERO; nb];
            for p in 0..grid.len() {
                let (ix, iy, iz) = grid.unindex(p);
                let q = (pad(ix) * big + pad(iy)) * big + pad(iz);
                a[q] = hat[p * SPIN_DIM + c] * h3;
                b[q] = mhat[p * SPIN_DIM + c] * h3;
            }
            fft.inverse(&mut a);
            fft.inverse(&mut b);
            let mut prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
            fft.inverse(&mut prod);
            let s = (nb as f64).powi(2);
            prod.iter_mut().for_each(|z| *z *= s);
            prod
        })
        .reduce(|| vec![ZERO; nb], |mut acc, v| {
            acc.iter_mut().zip(v).for_each(|(x, y)| *x += y);
            acc
        });
    // corr(q) = Σ_k Ψ̂†(k) M Ψ̂(k − q).
    let dk = 2.0 * PI / grid.box_length;
    let cutoff = 0.5 * grid.box_length;
    let signed = |i: usize| -> f64 { if i < n { i as f64 } else { i as f64 - big as f64 } };
    let sum: Complex64 = (0..nb)
        .into_par_iter()
        .map(|q| {
            let (qx, rest) = (q / (big * big), q % (big * big));
            let (qy, qz) = (rest / big, rest % big);
            let m2 = signed(qx).powi(2) + signed(qy).powi(2) + signed(qz).powi(2);
            corr[q] * sphere_transform(dk * m2.sqrt(), grid.softening, cutoff)
        })
        .sum();
    -0.5 * coupling.e1e2() * sum.re / grid.box_length.powi(6)
}

/// Exact Dirac-Coulomb energy of a particle of mass `mass`:
/// m[1 + (α/(n − |κ| + sqrt(κ² − α²)))²]^{−1/2}.
pub fn dirac_coulomb_reference(mass: f64, alpha_eff: f64, n: u32, kappa: i32) -> Result<f64, OracleError> {
    let ka = kappa.unsigned_abs();
    if kappa == 0 || ka > n || (ka == n && kappa > 0) {
        return Err(OracleError::Kappa { n, kappa });
    }
    if alpha_eff.abs() >= f64::from(ka) {
        return Err(OracleError::Supercritical { alpha: alpha_eff, kappa });
    }
    let gamma = (f64::from(ka * ka) - alpha_eff * alpha_eff).sqrt();
    let d = alpha_eff / (f64::from(n - ka) + gamma);
    Ok(mass / (1.0 + d * d).sqrt())
}

/// One line of a solver-vs-oracle comparison.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComparisonRow {
    pub alpha_eff: f64,
    pub term: String,
    pub solver_delta: f64,
    pub oracle_value: f64,
    pub ratio: f64,
}

impl ComparisonRow {
    pub fn new(alpha_eff: f64, term: &str, solver_delta: f64, oracle_value: f64) -> Self {
        Self {
            alpha_eff,
            term: term.to_owned(),
            solver_delta,
            oracle_value,
            ratio: solver_delta / oracle_value,
        }
    }
}

/// Smallest C with |ratio − 1| ≤ C α² on every row.
pub fn fitted_constant(rows: &[ComparisonRow]) -> f64 {
    rows.iter()
        .map(|r| (r.ratio - 1.0).abs() / (r.alpha_eff * r.alpha_eff))
        .fold(0.0, f64::max)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "alpha_eff,term,solver_delta,oracle_value,ratio")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{:e},{}", r.alpha_eff, r.term, r.solver_delta, r.oracle_value, r.ratio)?;
    }
    Ok(())
}
