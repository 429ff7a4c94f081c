//! Classical N-charge dynamics from the Darwin Lagrangian
//!
//! L = −c²Σm + ½Σmv² + Σmv⁴/8c² − ½ΣΣ e_a e_b/r
//!     + (1/4c²)ΣΣ (e_a e_b/r)(v⃗_a·v⃗_b + (n̂·v⃗_a)(n̂·v⃗_b)).

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::model::ParticleParams;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum DarwinError {
    #[error("system needs at least one particle")]
    Empty,
    #[error("light speed must be positive and finite")]
    LightSpeed,
    #[error("particles {0} and {1} coincide")]
    Coincident(usize, usize),
    #[error("particle {particle} moves at {speed} ≥ c")]
    Superluminal { particle: usize, speed: f64 },
    #[error("state has {got} particles, system has {expected}")]
    Shape { expected: usize, got: usize },
    #[error("fixed point did not converge (contraction estimate {contraction:.3e})")]
    FixedPoint { contraction: f64 },
    #[error("step at t = {t} rejected: implicit solve did not converge")]
    StepRejected { t: f64 },
    #[error("no circular orbit found in the bracket")]
    NoRoot,
    #[error("circular orbits need an attractive two-body system")]
    NotAttractivePair,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalState {
    pub t: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// Canonical momenta consistent with `velocities`.
    pub momenta: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarwinSystem {
    pub particles: Vec<ParticleParams>,
    pub c: f64,
    /// Relative tolerance of the fixed-point solves.
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// Geometry of one ordered pair: r⃗_ab = r⃗_a − r⃗_b.
struct Pair {
    r: f64,
    n: Vec3,
}

fn pair(x: &[Vec3], a: usize, b: usize) -> Result<Pair, DarwinError> {
    let d = x[a] - x[b];
    let r = d.norm();
    if r == 0.0 {
        return Err(DarwinError::Coincident(a.min(b), a.max(b)));
    }
    Ok(Pair { r, n: d / r })
}

impl DarwinSystem {
    pub fn new(particles: Vec<ParticleParams>, c: f64) -> Result<Self, DarwinError> {
        if particles.is_empty() {
            return Err(DarwinError::Empty);
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(DarwinError::LightSpeed);
        }
        Ok(Self {
            particles,
            c,
            tolerance: 1e-15,
            max_iterations: 200,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    fn coupling(&self, a: usize, b: usize) -> f64 {
        self.particles[a].charge * self.particles[b].charge
    }

    fn check(&self, x: &[Vec3], v: &[Vec3]) -> Result<(), DarwinError> {
        for len in [x.len(), v.len()] {
            if len != self.len() {
                return Err(DarwinError::Shape {
                    expected: self.len(),
                    got: len,
                });
            }
        }
        for (i, vi) in v.iter().enumerate() {
            let s = vi.norm();
            if s >= self.c || !s.is_finite() {
                return Err(DarwinError::Superluminal { particle: i, speed: s });
            }
        }
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                pair(x, a, b)?;
            }
        }
        Ok(())
    }

    /// L without the constant rest-energy term −c²Σm.
    pub fn lagrangian_dynamic(&self, x: &[Vec3], v: &[Vec3]) -> Result<f64, DarwinError> {
        self.check(x, v)?;
        let c2 = self.c * self.c;
        let mut l = 0.0;
        for (p, vi) in self.particles.iter().zip(v) {
            let v2 = vi.norm_squared();
            l += 0.5 * p.mass * v2 + p.mass * v2 * v2 / (8.0 * c2);
        }
        for a in 0..self.len() {
            for b in 0..self.len() {
                if a == b {
                    continue;
                }
                let g = pair(x, a, b)?;
                let ee = self.coupling(a, b);
                l -= 0.5 * ee / g.r;
                l += ee / (4.0 * c2 * g.r) * (v[a].dot(&v[b]) + g.n.dot(&v[a]) * g.n.dot(&v[b]));
            }
        }
        Ok(l)
    }

    pub fn lagrangian(&self, x: &[Vec3], v: &[Vec3]) -> Result<f64, DarwinError> {
        Ok(self.lagrangian_dynamic(x, v)? - self.c * self.c * self.total_mass())
    }

    /// p⃗_a = m v⃗_a (1 + v_a²/2c²) + Σ_b (e_a e_b/2c² r)(v⃗_b + n̂(n̂·v⃗_b)).
    pub fn canonical_momenta(&self, x: &[Vec3], v: &[Vec3]) -> Result<Vec<Vec3>, DarwinError> {
        self.check(x, v)?;
        let c2 = self.c * self.c;
        let mut out = Vec::with_capacity(self.len());
        for a in 0..self.len() {
            let m = self.particles[a].mass;
            let mut p = v[a] * (m * (1.0 + v[a].norm_squared() / (2.0 * c2)));
            for b in 0..self.len() {
                if a == b {
                    continue;
                }
                let g = pair(x, a, b)?;
                p += (v[b] + g.n * g.n.dot(&v[b])) * (self.coupling(a, b) / (2.0 * c2 * g.r));
            }
            out.push(p);
        }
        Ok(out)
    }

    /// E = Σ v⃗·p⃗ − L without the rest energy.
    pub fn binding_energy(&self, x: &[Vec3], v: &[Vec3]) -> Result<f64, DarwinError> {
        let p = self.canonical_momenta(x, v)?;
        let vp: f64 = v.iter().zip(&p).map(|(a, b)| a.dot(b)).sum();
        Ok(vp - self.lagrangian_dynamic(x, v)?)
    }

    pub fn energy(&self, x: &[Vec3], v: &[Vec3]) -> Result<f64, DarwinError> {
        Ok(self.binding_energy(x, v)? + self.c * self.c * self.total_mass())
    }

    pub fn state(&self, t: f64, positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<ClassicalState, DarwinError> {
        let momenta = self.canonical_momenta(&positions, &velocities)?;
        Ok(ClassicalState {
            t,
            positions,
            velocities,
            momenta,
        })
    }

    /// ∂L/∂r⃗_a.
    fn forces(&self, x: &[Vec3], v: &[Vec3]) -> Result<Vec<Vec3>, DarwinError> {
        let c2 = self.c * self.c;
        let mut f = vec![Vec3::zeros(); self.len()];
        for a in 0..self.len() {
            for b in 0..self.len() {
                if a == b {
                    continue;
                }
                let g = pair(x, a, b)?;
                let ee = self.coupling(a, b);
                let (na, nb) = (g.n.dot(&v[a]), g.n.dot(&v[b]));
                let w = (-g.n * (v[a].dot(&v[b]) + 3.0 * na * nb) + v[a] * nb + v[b] * na) / (g.r * g.r);
                f[a] += g.n * (ee / (g.r * g.r)) + w * (ee / (2.0 * c2));
            }
        }
        Ok(f)
    }

    /// Velocity-dependent inertia m[(1 + v²/2c²)I + v⃗v⃗ᵀ/c²] inverted in
    /// closed form.
    fn inverse_inertia(&self, a: usize, v: &Vec3) -> Matrix3<f64> {
        let c2 = self.c * self.c;
        let m = self.particles[a].mass;
        let s = 1.0 + v.norm_squared() / (2.0 * c2);
        let t = s + v.norm_squared() / c2;
        (Matrix3::identity() / s - v * v.transpose() / (c2 * s * t)) / m
    }

    /// Coupling of particle a's momentum to particle b's acceleration,
    /// (e_a e_b/2c²)(I + n̂n̂ᵀ)/r, and its time derivative along the motion.
    fn cross_terms(&self, x: &[Vec3], v: &[Vec3], a: usize, b: usize) -> Result<(Matrix3<f64>, Matrix3<f64>), DarwinError> {
        let g = pair(x, a, b)?;
        let k = self.coupling(a, b) / (2.0 * self.c * self.c);
        let nn = g.n * g.n.transpose();
        let u = v[a] - v[b];
        let rdot = g.n.dot(&u);
        let ndot = (u - g.n * rdot) / g.r;
        let kmat = (Matrix3::identity() + nn) * (k / g.r);
        let kdot = ((ndot * g.n.transpose() + g.n * ndot.transpose()) / g.r - (Matrix3::identity() + nn) * (rdot / (g.r * g.r))) * k;
        Ok((kmat, kdot))
    }

    /// Residual of the Euler–Lagrange equations for trial accelerations:
    /// d/dt(∂L/∂v⃗_a) − ∂L/∂r⃗_a.
    pub fn euler_lagrange_residual(&self, x: &[Vec3], v: &[Vec3], acc: &[Vec3]) -> Result<Vec<Vec3>, DarwinError> {
        self.check(x, v)?;
        let f = self.forces(x, v)?;
        let c2 = self.c * self.c;
        let mut out = Vec::with_capacity(self.len());
        for a in 0..self.len() {
            let m = self.particles[a].mass;
            let s = 1.0 + v[a].norm_squared() / (2.0 * c2);
            let mut r = (v[a] * (m * v[a].dot(&acc[a]) / c2)) + acc[a] * (m * s) - f[a];
            for b in 0..self.len() {
                if a != b {
                    let (k, kd) = self.cross_terms(x, v, a, b)?;
                    r += k * acc[b] + kd * v[b];
                }
            }
            out.push(r);
        }
        Ok(out)
    }

    /// Accelerations solving the Euler–Lagrange equations; the coupling
    /// between particles' inertia is resolved by fixed-point iteration.
    pub fn accelerations(&self, x: &[Vec3], v: &[Vec3]) -> Result<Vec<Vec3>, DarwinError> {
        self.check(x, v)?;
        let n = self.len();
        let f = self.forces(x, v)?;
        let mut kmats = vec![Vec::new(); n];
        let mut rhs = f.clone();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let (k, kd) = self.cross_terms(x, v, a, b)?;
                    rhs[a] -= kd * v[b];
                    kmats[a].push((b, k));
                }
            }
        }
        let inv: Vec<Matrix3<f64>> = (0..n).map(|a| self.inverse_inertia(a, &v[a])).collect();
        let mut acc: Vec<Vec3> = (0..n).map(|a| inv[a] * rhs[a]).collect();
        let mut prev_change = f64::INFINITY;
        let mut contraction = 0.0;
        for _ in 0..self.max_iterations {
            let next: Vec<Vec3> = (0..n)
                .map(|a| {
                    let mut r = rhs[a];
                    for (b, k) in &kmats[a] {
                        r -= k * acc[*b];
                    }
                    inv[a] * r
                })
                .collect();
            let change = next.iter().zip(&acc).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            let scale = next.iter().map(|p| p.norm()).fold(0.0, f64::max);
            if prev_change.is_finite() && prev_change > 0.0 {
                contraction = change / prev_change;
            }
            acc = next;
            if change <= self.tolerance * scale || scale == 0.0 {
                return Ok(acc);
            }
            prev_change = change;
        }
        Err(DarwinError::FixedPoint { contraction })
    }

    /// Invert the momentum relation for the velocities by fixed-point
    /// iteration: v⃗_a ← (p⃗_a − Σ_b K_ab v⃗_b) / (m_a(1 + v_a²/2c²)).
    pub fn velocities_from_momenta(&self, x: &[Vec3], p: &[Vec3]) -> Result<Vec<Vec3>, DarwinError> {
        let n = self.len();
        if p.len() != n {
            return Err(DarwinError::Shape { expected: n, got: p.len() });
        }
        let c2 = self.c * self.c;
        let mut kmats = vec![Vec::new(); n];
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let g = pair(x, a, b)?;
                    let k = self.coupling(a, b) / (2.0 * c2 * g.r);
                    kmats[a].push((b, (Matrix3::identity() + g.n * g.n.transpose()) * k));
                }
            }
        }
        let mut v: Vec<Vec3> = (0..n).map(|a| p[a] / self.particles[a].mass).collect();
        let mut prev_change = f64::INFINITY;
        let mut contraction = 0.0;
        for _ in 0..self.max_iterations {
            let next: Vec<Vec3> = (0..n)
                .map(|a| {
                    let mut q = p[a];
                    for (b, k) in &kmats[a] {
                        q -= k * v[*b];
                    }
                    q / (self.particles[a].mass * (1.0 + v[a].norm_squared() / (2.0 * c2)))
                })
                .collect();
            let change = next.iter().zip(&v).map(|(u, w)| (u - w).norm()).fold(0.0, f64::max);
            let scale = next.iter().map(|u| u.norm()).fold(0.0, f64::max);
            if prev_change.is_finite() && prev_change > 0.0 {
                contraction = change / prev_change;
            }
            v = next;
            if change <= self.tolerance * scale || scale == 0.0 {
                self.check(x, &v)?;
                return Ok(v);
            }
            prev_change = change;
        }
        Err(DarwinError::FixedPoint { contraction })
    }

    /// One implicit-midpoint step in the canonical variables (x⃗, p⃗):
    /// ẋ⃗ = v⃗(x⃗, p⃗), ṗ⃗ = ∂L/∂x⃗. The pairwise forces cancel exactly, so the
    /// total canonical momentum is kept to roundoff.
    pub fn step(&self, s: &ClassicalState, dt: f64) -> Result<ClassicalState, DarwinError> {
        let n = self.len();
        let reject = |_| DarwinError::StepRejected { t: s.t };
        let f0 = self.forces(&s.positions, &s.velocities).map_err(reject)?;
        let mut x1: Vec<Vec3> = (0..n).map(|i| s.positions[i] + s.velocities[i] * dt).collect();
        let mut p1: Vec<Vec3> = (0..n).map(|i| s.momenta[i] + f0[i] * dt).collect();
        let mut last = f64::INFINITY;
        for it in 0..self.max_iterations {
            let xm: Vec<Vec3> = (0..n).map(|i| (s.positions[i] + x1[i]) * 0.5).collect();
            let pm: Vec<Vec3> = (0..n).map(|i| (s.momenta[i] + p1[i]) * 0.5).collect();
            let vm = self.velocities_from_momenta(&xm, &pm).map_err(reject)?;
            let fm = self.forces(&xm, &vm).map_err(reject)?;
            let xn: Vec<Vec3> = (0..n).map(|i| s.positions[i] + vm[i] * dt).collect();
            let pn: Vec<Vec3> = (0..n).map(|i| s.momenta[i] + fm[i] * dt).collect();
            let dx = xn.iter().zip(&x1).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
                / xn.iter().map(|a| a.norm()).fold(f64::MIN_POSITIVE, f64::max);
            let dp = pn.iter().zip(&p1).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
                / pn.iter().map(|a| a.norm()).fold(f64::MIN_POSITIVE, f64::max);
            x1 = xn;
            p1 = pn;
            let change = dx.max(dp);
            // Converged, or stalled at roundoff after the contraction phase.
            if change <= 2.0 * f64::EPSILON || (it > 3 && change >= last && change < 1e-13) {
                let v1 = self.velocities_from_momenta(&x1, &p1).map_err(reject)?;
                return Ok(ClassicalState {
                    t: s.t + dt,
                    positions: x1,
                    velocities: v1,
                    momenta: p1,
                });
            }
            last = change;
        }
        Err(DarwinError::StepRejected { t: s.t })
    }

    pub fn integrate(&self, initial: &ClassicalState, dt: f64, n_steps: usize) -> Result<Trajectory, DarwinError> {
        let mut points = Vec::with_capacity(n_steps + 1);
        let mut s = initial.clone();
        points.push(self.record(&s)?);
        for _ in 0..n_steps {
            s = self.step(&s, dt)?;
            points.push(self.record(&s)?);
        }
        Ok(Trajectory { points })
    }

    fn record(&self, s: &ClassicalState) -> Result<TrajectoryPoint, DarwinError> {
        let binding = self.binding_energy(&s.positions, &s.velocities)?;
        Ok(TrajectoryPoint {
            state: s.clone(),
            energy: binding + self.c * self.c * self.total_mass(),
            binding_energy: binding,
            total_momentum: s.momenta.iter().sum(),
        })
    }

    /// Uniform circular motion of an attractive pair at separation `radius`
    /// about a common center.
    pub fn circular_orbit(&self, radius: f64) -> Result<CircularOrbit, DarwinError> {
        if self.len() != 2 {
            return Err(DarwinError::NotAttractivePair);
        }
        let ee = self.coupling(0, 1);
        if ee >= 0.0 || !(radius > 0.0) {
            return Err(DarwinError::NotAttractivePair);
        }
        let (m1, m2) = (self.particles[0].mass, self.particles[1].mass);
        let mu = m1 * m2 / (m1 + m2);
        let kepler = (-ee / (mu * radius.powi(3))).sqrt();
        let c2 = self.c * self.c;

        // Share of the separation carried by particle 1 that makes the total
        // canonical momentum vanish.
        let share = |w: f64| -> Result<f64, DarwinError> {
            let g = |f: f64| {
                let (r1, r2) = (f * radius, (1.0 - f) * radius);
                m1 * r1 * (1.0 + w * w * r1 * r1 / (2.0 * c2)) - m2 * r2 * (1.0 + w * w * r2 * r2 / (2.0 * c2))
                    + ee / (2.0 * c2 * radius) * (r1 - r2)
            };
            illinois(g, 0.0, 1.0, 1e-16).ok_or(DarwinError::NoRoot)
        };
        let configuration = |w: f64| -> Result<(Vec<Vec3>, Vec<Vec3>), DarwinError> {
            let f = share(w)?;
            let x = vec![Vec3::new(f * radius, 0.0, 0.0), Vec3::new(-(1.0 - f) * radius, 0.0, 0.0)];
            let v = vec![Vec3::new(0.0, w * f * radius, 0.0), Vec3::new(0.0, -w * (1.0 - f) * radius, 0.0)];
            Ok((x, v))
        };
        let radial = |w: f64| -> Result<f64, DarwinError> {
            let (x, v) = configuration(w)?;
            let acc: Vec<Vec3> = x.iter().map(|p| -p * (w * w)).collect();
            let r = self.euler_lagrange_residual(&x, &v, &acc)?;
            Ok(r[0].x)
        };
        let wmax = 0.999 * self.c / radius;
        let (lo, hi) = (0.5 * kepler, (2.0 * kepler).min(wmax));
        if !(hi > lo) {
            return Err(DarwinError::NoRoot);
        }
        let mut err = None;
        let omega = illinois(
            |w| {
                radial(w).unwrap_or_else(|e| {
                    err = Some(e);
                    f64::NAN
                })
            },
            lo,
            hi,
            1e-16,
        );
        if let Some(e) = err {
            return Err(e);
        }
        let omega = omega.ok_or(DarwinError::NoRoot)?;
        let (x, v) = configuration(omega)?;
        let state = self.state(0.0, x, v)?;
        Ok(CircularOrbit {
            radius,
            omega,
            kepler_omega: kepler,
            state,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircularOrbit {
    pub radius: f64,
    pub omega: f64,
    pub kepler_omega: f64,
    /// Initial condition on the circle, particle 1 on +x.
    pub state: ClassicalState,
}

impl CircularOrbit {
    pub fn relative_shift(&self) -> f64 {
        (self.omega - self.kepler_omega) / self.kepler_omega
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }
}

/// Bracketed root by the Illinois variant of regula falsi.
pub fn illinois(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> Option<f64> {
    let (mut fa, mut fb) = (f(a), f(b));
    if !(fa.is_finite() && fb.is_finite()) || fa * fb > 0.0 {
        return None;
    }
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    let mut side = 0i8;
    for _ in 0..500 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if !fc.is_finite() {
            return None;
        }
        if fc == 0.0 || (b - a).abs() <= rel_tol * c.abs().max(f64::MIN_POSITIVE) {
            return Some(c);
        }
        if fc * fb > 0.0 {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        let width = (b - a).abs();
        if width <= 2.0 * f64::EPSILON * a.abs().max(b.abs()) {
            return Some(0.5 * (a + b));
        }
    }
    Some((a * fb - b * fa) / (fb - fa))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub state: ClassicalState,
    pub energy: f64,
    pub binding_energy: f64,
    pub total_momentum: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory holds the initial point")
    }

    /// max |E(t) − E(0)| computed from the binding part.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.points[0].binding_energy;
        self.points.iter().map(|p| (p.binding_energy - e0).abs()).fold(0.0, f64::max)
    }

    pub fn momentum_drift(&self) -> f64 {
        let p0 = self.points[0].total_momentum;
        self.points.iter().map(|p| (p.total_momentum - p0).norm()).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DarwinError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(&mut w)?;
        Ok(())
    }

    pub fn write_csv_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let n = self.points.first().map_or(0, |p| p.state.positions.len());
        let mut header = vec!["t".to_owned()];
        for a in 1..=n {
            for q in ["x", "v", "p"] {
                for c in ["x", "y", "z"] {
                    header.push(format!("{q}{a}_{c}"));
                }
            }
        }
        header.extend(["E", "P_x", "P_y", "P_z"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for p in &self.points {
            let s = &p.state;
            let mut row = vec![s.t];
            for a in 0..n {
                for vec in [&s.positions[a], &s.velocities[a], &s.momenta[a]] {
                    row.extend(vec.iter());
                }
            }
            row.push(p.energy);
            row.extend(p.total_momentum.iter());
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(charges: &[(f64, f64)], c: f64) -> DarwinSystem {
        DarwinSystem::new(charges.iter().map(|&(m, e)| ParticleParams::new(m, e).unwrap()).collect(), c).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, vmax: f64) -> (Vec<Vec3>, Vec<Vec3>) {
        let x = (0..n)
            .map(|a| Vec3::new(rng.gen_range(-1.0..1.0) + 3.0 * a as f64, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let v = (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (vmax / 3f64.sqrt()))
            .collect();
        (x, v)
    }

    #[test]
    fn static_and_free_values() {
        let s = system(&[(1.0, 1.0), (2.0, -1.0)], 3.0);
        let x = vec![Vec3::zeros(), Vec3::new(0.0, 2.0, 0.0)];
        let v = vec![Vec3::zeros(); 2];
        assert!((s.lagrangian(&x, &v).unwrap() - (-9.0 * 3.0 + 0.5)).abs() < 1e-14);
        let one = system(&[(2.0, 1.0)], 3.0);
        let vx = vec![Vec3::new(0.5, 0.0, 0.0)];
        let expect = -2.0 * 9.0 + 0.5 * 2.0 * 0.25 + 2.0 * 0.0625 / 72.0;
        assert!((one.lagrangian(&[Vec3::zeros()], &vx).unwrap() - expect).abs() < 1e-14);
        let p = one.canonical_momenta(&[Vec3::zeros()], &vx).unwrap();
        assert!((p[0].x - 2.0 * 0.5 * (1.0 + 0.25 / 18.0)).abs() < 1e-15);
    }

    #[test]
    fn interaction_correction_scales_with_inverse_c_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, v) = random_state(&mut rng, 2, 0.1);
        let corr = |c: f64| {
            let s = system(&[(1.0, 1.0), (1.0, -1.0)], c);
            let free = system(&[(1.0, 0.0), (1.0, 0.0)], c);
            let coulomb = 1.0 / (x[0] - x[1]).norm();
            s.lagrangian_dynamic(&x, &v).unwrap() - free.lagrangian_dynamic(&x, &v).unwrap() - coulomb
        };
        assert!((corr(1.0) / corr(10.0) - 100.0).abs() < 1e-8);
    }

    #[test]
    fn momenta_match_numerical_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let n = 1 + trial % 3;
            let charges: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0))).collect();
            let s = system(&charges, 1.0);
            let (x, v) = random_state(&mut rng, n, 0.3);
            let p = s.canonical_momenta(&x, &v).unwrap();
            let h = 1e-5;
            for a in 0..n {
                for i in 0..3 {
                    let mut vp = v.clone();
                    let mut vm = v.clone();
                    vp[a][i] += h;
                    vm[a][i] -= h;
                    let fd = (s.lagrangian(&x, &vp).unwrap() - s.lagrangian(&x, &vm).unwrap()) / (2.0 * h);
                    let scale = p[a].norm().max(1e-3);
                    assert!((fd - p[a][i]).abs() <= 1e-8 * scale, "{trial} {a} {i}: {fd} {}", p[a][i]);
                }
            }
        }
    }

    #[test]
    fn forces_match_numerical_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = system(&[(1.0, 1.0), (1.5, -0.7), (0.8, 0.4)], 1.0);
        let (x, v) = random_state(&mut rng, 3, 0.3);
        let f = s.forces(&x, &v).unwrap();
        let h = 1e-5;
        for a in 0..3 {
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a][i] += h;
                xm[a][i] -= h;
                let fd = (s.lagrangian_dynamic(&xp, &v).unwrap() - s.lagrangian_dynamic(&xm, &v).unwrap()) / (2.0 * h);
                assert!((fd - f[a][i]).abs() < 1e-8 * f[a].norm(), "{fd} {}", f[a][i]);
            }
        }
    }

    #[test]
    fn static_acceleration_approaches_coulomb_as_inverse_c_squared() {
        // At rest the inertia coupling (ee/2c²r)(I + n̂n̂ᵀ) still mixes the
        // accelerations, so the Coulomb value is reached only as c → ∞.
        let x = vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
        let rest = [Vec3::zeros(), Vec3::zeros()];
        let coulomb = [Vec3::new(0.5, 0.0, 0.0), Vec3::new(-2.0 / 12.0, 0.0, 0.0)];
        let dev = |c: f64| {
            let a = system(&[(1.0, 1.0), (3.0, -2.0)], c).accelerations(&x, &rest).unwrap();
            (a[1] - coulomb[1]).norm()
        };
        assert!(dev(1e7) < 1e-13);
        assert!((dev(100.0) / dev(200.0) - 4.0).abs() < 1e-3);
    }

    #[test]
    fn infinite_light_speed_is_coulomb_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, v) = random_state(&mut rng, 3, 0.5);
        let s = system(&[(1.0, 1.0), (2.0, -1.0), (1.0, 0.5)], 1e12);
        let a = s.accelerations(&x, &v).unwrap();
        for i in 0..3 {
            let mut f = Vec3::zeros();
            for j in 0..3 {
                if i != j {
                    let d = x[i] - x[j];
                    f += d * (s.coupling(i, j) / d.norm().powi(3));
                }
            }
            let coulomb = f / s.particles[i].mass;
            assert!((a[i] - coulomb).norm() <= 1e-10 * coulomb.norm());
        }
    }

    #[test]
    fn accelerations_solve_euler_lagrange() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = system(&[(1.0, 1.0), (1.0, -1.0)], 1.0);
        let (x, v) = random_state(&mut rng, 2, 0.3);
        let a = s.accelerations(&x, &v).unwrap();
        let r = s.euler_lagrange_residual(&x, &v, &a).unwrap();
        assert!(r.iter().all(|e| e.norm() < 1e-14));
    }

    #[test]
    fn superluminal_and_coincident_states_are_rejected() {
        let s = system(&[(1.0, 1.0), (1.0, -1.0)], 1.0);
        let x = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            s.canonical_momenta(&x, &[Vec3::new(1.0, 0.0, 0.0), Vec3::zeros()]),
            Err(DarwinError::Superluminal { particle: 0, .. })
        ));
        assert!(matches!(
            s.lagrangian(&[Vec3::zeros(), Vec3::zeros()], &[Vec3::zeros(), Vec3::zeros()]),
            Err(DarwinError::Coincident(0, 1))
        ));
    }

    #[test]
    fn free_particle_moves_in_a_straight_line() {
        let s = system(&[(1.0, 0.0)], 1.0);
        let st = s.state(0.0, vec![Vec3::new(1.0, 2.0, 3.0)], vec![Vec3::new(0.1, -0.2, 0.3)]).unwrap();
        let tr = s.integrate(&st, 0.1, 1000).unwrap();
        let end = &tr.last().state;
        let exact = Vec3::new(1.0, 2.0, 3.0) + Vec3::new(0.1, -0.2, 0.3) * 100.0;
        assert!((end.positions[0] - exact).norm() < 1e-12);
    }

    #[test]
    fn kepler_limit_of_circular_orbit() {
        let s = system(&[(1.0, 1.0), (3.0, -1.0)], 1e9);
        let o = s.circular_orbit(2.0).unwrap();
        assert!(o.relative_shift().abs() < 1e-10);
    }

    fn rotate(r: &nalgebra::Rotation3<f64>, s: &[Vec3]) -> Vec<Vec3> {
        s.iter().map(|v| r * v).collect()
    }

    #[test]
    fn rotated_initial_conditions_rotate_the_trajectory() {
        let s = system(&[(1.0, 1.0), (2.0, -1.0), (0.5, 0.3)], 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, v) = random_state(&mut rng, 3, 0.2);
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let a = s.integrate(&s.state(0.0, x.clone(), v.clone()).unwrap(), 1e-3, 1000).unwrap();
        let b = s.integrate(&s.state(0.0, rotate(&rot, &x), rotate(&rot, &v)).unwrap(), 1e-3, 1000).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            for (u, w) in p.state.positions.iter().zip(&q.state.positions) {
                assert!((rot * u - w).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn euler_lagrange_holds_along_the_trajectory() {
        let s = system(&[(1.0, 1.0), (1.7, -1.0)], 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, v) = random_state(&mut rng, 2, 0.2);
        let dt = 1e-3;
        let tr = s.integrate(&s.state(0.0, x, v).unwrap(), dt, 40).unwrap();
        for k in 2..38 {
            let st = &tr.points[k].state;
            let f = s.forces(&st.positions, &st.velocities).unwrap();
            for a in 0..2 {
                // Fourth-order central difference of the canonical momentum.
                let p = |j: usize| tr.points[j].state.momenta[a];
                let dp = (p(k - 2) - p(k - 1) * 8.0 + p(k + 1) * 8.0 - p(k + 2)) / (12.0 * dt);
                assert!((dp - f[a]).norm() <= 1e-6 * f[a].norm(), "{}", (dp - f[a]).norm());
            }
        }
    }

    #[test]
    fn unequal_masses_conserve_total_momentum() {
        let s = system(&[(1.0, 1.0), (4.0, -1.0), (2.0, -0.2)], 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, v) = random_state(&mut rng, 3, 0.2);
        let tr = s.integrate(&s.state(0.0, x, v).unwrap(), 1e-3, 10_000).unwrap();
        assert!(tr.momentum_drift() <= 1e-10, "{}", tr.momentum_drift());
    }

    #[test]
    fn trajectory_csv_has_expected_columns() {
        let s = system(&[(1.0, 1.0), (1.0, -1.0)], 10.0);
        let o = s.circular_orbit(1.0).unwrap();
        let tr = s.integrate(&o.state, 0.01, 3).unwrap();
        let mut buf = Vec::new();
        tr.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0].split(',').count(), 1 + 18 + 4);
        assert!(lines[0].starts_with("t,x1_x,x1_y,x1_z,v1_x"));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-r..r).prop_map(Vec3::from)
    }

    fn pair() -> DarwinSystem {
        DarwinSystem::new(
            vec![ParticleParams::new(1.0, 0.5).unwrap(), ParticleParams::new(2.0, -0.8).unwrap()],
            1.0,
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn velocities_invert_momenta(d in vec3(3.0), v1 in vec3(0.3), v2 in vec3(0.3)) {
            prop_assume!(d.norm() > 0.5);
            let sys = pair();
            let x = [Vec3::zeros(), d];
            let v = [v1, v2];
            let p = sys.canonical_momenta(&x, &v).unwrap();
            let back = sys.velocities_from_momenta(&x, &p).unwrap();
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn lagrangian_is_galilean_in_position(d in vec3(3.0), shift in vec3(10.0), v1 in vec3(0.3), v2 in vec3(0.3)) {
            prop_assume!(d.norm() > 0.5);
            let sys = pair();
            let v = [v1, v2];
            let l1 = sys.lagrangian(&[Vec3::zeros(), d], &v).unwrap();
            let l2 = sys.lagrangian(&[shift, d + shift], &v).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        }

        // At rest dP/dt = 0 reads m₁a₁ + m₂a₂ + K(a₁ + a₂) = 0 with the
        // cross-inertia K = (e₁e₂/2c²r)(I + n̂n̂).
        #[test]
        fn total_momentum_is_stationary_at_rest(d in vec3(3.0)) {
            prop_assume!(d.norm() > 0.5);
            let sys = pair();
            let x = [Vec3::zeros(), d];
            let v = [Vec3::zeros(), Vec3::zeros()];
            let a = sys.accelerations(&x, &v).unwrap();
            let r = d.norm();
            let n = d / r;
            let k = (Matrix3::identity() + n * n.transpose()) * (0.5 * -0.4 / r);
            let total = a[0] * 1.0 + a[1] * 2.0 + k * (a[0] + a[1]);
            prop_assert!(total.norm() < 1e-12 * a[0].norm());
        }
    }
}
