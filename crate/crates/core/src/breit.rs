//! The two-body interaction kernel
//!
//! ```text
//! V(r) = e₁e₂/r · [1 − ½(α⃗₁·α⃗₂ + (α⃗₁·n̂)(α⃗₂·n̂))]
//! ```
//!
//! split into its Coulomb, Gaunt and retardation parts. The radial factor
//! 1/r is regularized as 1/sqrt(r² + a²); the direction n̂ is always the
//! exact one.

use std::f64::consts::PI;
use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::fft::Fft3;
use crate::model::{CouplingSpec, GridSpec, PotentialSampling, TermFlags};
use crate::spinor::{alpha_dot, alphas, embed, Particle, SpinMatrix16};
use crate::SPIN_DIM;

#[derive(Debug, Error, PartialEq)]
pub enum BreitError {
    #[error("kernel is singular at r = 0 without softening")]
    Singular,
    #[error("softening must be finite and >= 0, got {0}")]
    Softening(f64),
}

/// The kernel at one relative position, split into its three parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BreitKernelSample {
    pub r_vec: [f64; 3],
    pub coulomb: SpinMatrix16,
    pub gaunt: SpinMatrix16,
    pub retardation: SpinMatrix16,
    pub total: SpinMatrix16,
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Σᵢ αᵢ ⊗ αᵢ.
pub fn alpha_alpha() -> SpinMatrix16 {
    alphas()
        .iter()
        .map(|a| embed(a, Particle::One) * embed(a, Particle::Two))
        .fold(SpinMatrix16::zeros(), |acc, m| acc + m)
}

/// (α⃗₁·n̂)(α⃗₂·n̂). At the origin, where n̂ is undefined, the angular average
/// ⅓ Σᵢ αᵢ ⊗ αᵢ is used.
pub fn alpha_n_alpha_n(direction: Option<[f64; 3]>) -> SpinMatrix16 {
    match direction {
        Some(n) => {
            let an = alpha_dot(n);
            embed(&an, Particle::One) * embed(&an, Particle::Two)
        }
        None => alpha_alpha() * Complex64::from(1.0 / 3.0),
    }
}

fn unit(r: [f64; 3]) -> Option<[f64; 3]> {
    let len = norm3(r);
    (len > 0.0).then(|| [r[0] / len, r[1] / len, r[2] / len])
}

fn assemble(r_vec: [f64; 3], coulomb_coeff: f64) -> BreitKernelSample {
    let magnetic = Complex64::from(-0.5 * coulomb_coeff);
    let coulomb = SpinMatrix16::identity() * Complex64::from(coulomb_coeff);
    let gaunt = alpha_alpha() * magnetic;
    let retardation = alpha_n_alpha_n(unit(r_vec)) * magnetic;
    let total = coulomb + gaunt + retardation;
    BreitKernelSample {
        r_vec,
        coulomb,
        gaunt,
        retardation,
        total,
    }
}

/// Pointwise kernel with radial factor 1/sqrt(|r|² + a²).
pub fn breit_kernel(
    r_vec: [f64; 3],
    coupling: &CouplingSpec,
    softening: f64,
) -> Result<BreitKernelSample, BreitError> {
    if !(softening.is_finite() && softening >= 0.0) {
        return Err(BreitError::Softening(softening));
    }
    let r = norm3(r_vec);
    if r == 0.0 && softening == 0.0 {
        return Err(BreitError::Singular);
    }
    let r_s = (r * r + softening * softening).sqrt();
    Ok(assemble(r_vec, coupling.e1e2() / r_s))
}

/// Radial Fourier transform of the softened profile truncated at radius
/// `cutoff`: 4π ∫₀^R r² j₀(qr) / sqrt(r² + a²) dr.
pub fn truncated_profile_transform(q: f64, softening: f64, cutoff: f64) -> f64 {
    if softening == 0.0 {
        if q == 0.0 {
            return 2.0 * PI * cutoff * cutoff;
        }
        return 4.0 * PI * (1.0 - (q * cutoff).cos()) / (q * q);
    }
    let a2 = softening * softening;
    let integrand = |r: f64| {
        let j0 = if q * r < 1e-8 { 1.0 } else { (q * r).sin() / (q * r) };
        r * r * j0 / (r * r + a2).sqrt()
    };
    let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
    let panels = 32 + (2.0 * q * cutoff / PI).ceil() as usize;
    let w = cutoff / panels as f64;
    let sum: f64 = (0..panels)
        .map(|k| rule.integrate(k as f64 * w, (k + 1) as f64 * w, integrand))
        .sum();
    4.0 * PI * sum
}

/// Grid values of the regularized 1/r profile (positive, coupling not
/// included).
///
/// Band-limited sampling keeps only the Fourier modes the grid carries,
/// with the profile truncated on the sphere inscribed in the box so that no
/// periodic image contributes.
pub fn radial_profile(grid: &GridSpec) -> Vec<f64> {
    match grid.sampling {
        PotentialSampling::Pointwise => (0..grid.len())
            .map(|p| {
                let r = norm3(grid.position(p));
                1.0 / (r * r + grid.softening * grid.softening).sqrt()
            })
            .collect(),
        PotentialSampling::BandLimited => band_limited_profile(grid),
    }
}

fn band_limited_profile(grid: &GridSpec) -> Vec<f64> {
    let n = grid.n;
    let half = (n / 2) as i64;
    let max_m2 = (3 * half * half) as usize;
    let dk = 2.0 * PI / grid.box_length;
    let cutoff = grid.box_length / 2.0;
    // Transform depends only on the integer |m|², so tabulate once.
    let table: Vec<f64> = (0..=max_m2)
        .into_par_iter()
        .map(|m2| truncated_profile_transform(dk * (m2 as f64).sqrt(), grid.softening, cutoff))
        .collect();
    let mut spectrum: Vec<Complex64> = (0..grid.len())
        .map(|p| {
            let (ix, iy, iz) = grid.unindex(p);
            let (a, b, c) = (grid.wrap(ix), grid.wrap(iy), grid.wrap(iz));
            Complex64::from(table[(a * a + b * b + c * c) as usize])
        })
        .collect();
    Fft3::new(n).inverse(&mut spectrum);
    let scale = grid.len() as f64 / grid.box_length.powi(3);
    spectrum.iter().map(|z| z.re * scale).collect()
}

type Block = [[Complex64; 4]; 4];

fn to_block(m: &crate::spinor::SpinMatrix4) -> Block {
    let mut b = [[Complex64::default(); 4]; 4];
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    b
}

/// out += s · A X Aᵀ, i.e. (A ⊗ A) acting on the two-body spinor X.
#[inline]
fn add_sandwich(a: &Block, x: &[Complex64], s: Complex64, out: &mut [Complex64]) {
    let mut ax = [[Complex64::default(); 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            for j in 0..4 {
                ax[i][j] += aik * x[4 * k + j];
            }
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = Complex64::default();
            for l in 0..4 {
                acc += ax[i][l] * a[j][l];
            }
            out[4 * i + j] += s * acc;
        }
    }
}

/// The kernel over every grid point of a periodic box (minimum-image
/// relative coordinates), stored compactly as a radial coefficient and a
/// direction per point.
#[derive(Debug, Clone)]
pub struct KernelField {
    grid: GridSpec,
    coupling: CouplingSpec,
    profile: Vec<f64>,
    directions: Vec<Option<[f64; 3]>>,
    alphas: [Block; 3],
}

impl KernelField {
    pub fn new(grid: &GridSpec, coupling: &CouplingSpec) -> Self {
        let profile = radial_profile(grid);
        let directions = (0..grid.len()).map(|p| unit(grid.position(p))).collect();
        let a = alphas();
        Self {
            grid: *grid,
            coupling: *coupling,
            profile,
            directions,
            alphas: [to_block(&a[0]), to_block(&a[1]), to_block(&a[2])],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.profile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profile.is_empty()
    }

    /// e₁e₂ times the regularized 1/r at point `p`.
    pub fn coulomb_coefficient(&self, p: usize) -> f64 {
        self.coupling.e1e2() * self.profile[p]
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn sample(&self, p: usize) -> BreitKernelSample {
        assemble(self.grid.position(p), self.coulomb_coefficient(p))
    }

    pub fn samples(&self) -> impl Iterator<Item = BreitKernelSample> + '_ {
        (0..self.len()).map(|p| self.sample(p))
    }

    /// out += V_terms(p) x for one 16-component spinor.
    pub fn apply_point(&self, p: usize, terms: TermFlags, x: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(x.len(), SPIN_DIM);
        let c = self.coulomb_coefficient(p);
        if terms.coulomb {
            for (o, v) in out.iter_mut().zip(x) {
                *o += v * c;
            }
        }
        let m = Complex64::from(-0.5 * c);
        if terms.gaunt {
            for a in &self.alphas {
                add_sandwich(a, x, m, out);
            }
        }
        if terms.retardation {
            match self.directions[p] {
                Some(n) => add_sandwich(&to_block(&alpha_dot(n)), x, m, out),
                None => {
                    let third = m / 3.0;
                    for a in &self.alphas {
                        add_sandwich(a, x, third, out);
                    }
                }
            }
        }
    }

    /// V_terms ψ for a whole point-major field.
    pub fn apply(&self, terms: TermFlags, psi: &[Complex64], out: &mut [Complex64]) {
        out.par_chunks_mut(SPIN_DIM)
            .zip(psi.par_chunks(SPIN_DIM))
            .enumerate()
            .for_each(|(p, (o, x))| self.apply_point(p, terms, x, o));
    }
}

/// Scalar coefficients of the three parts at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRow {
    pub r: f64,
    pub coulomb: f64,
    pub gaunt: f64,
    pub retardation: f64,
}

pub fn ray_profile(coupling: &CouplingSpec, softening: f64, radii: &[f64]) -> Vec<RayRow> {
    radii
        .iter()
        .map(|&r| {
            let c = coupling.e1e2() / (r * r + softening * softening).sqrt();
            RayRow {
                r,
                coulomb: c,
                gaunt: -0.5 * c,
                retardation: -0.5 * c,
            }
        })
        .collect()
}

pub fn write_ray_csv<W: Write>(rows: &[RayRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "r,coulomb,gaunt,retardation")?;
    for row in rows {
        writeln!(w, "{},{},{},{}", row.r, row.coulomb, row.gaunt, row.retardation)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinor::{alpha, hermiticity_defect, max_abs};

    fn cpl(a: f64) -> CouplingSpec {
        CouplingSpec::new(a).unwrap()
    }

    #[test]
    fn z_axis_structure() {
        let k = breit_kernel([0.0, 0.0, 1.7], &cpl(0.3), 0.2).unwrap();
        let r_s = (1.7f64 * 1.7 + 0.04).sqrt();
        let e12 = -0.3;
        let ax = alpha(1).unwrap();
        let ay = alpha(2).unwrap();
        let az = alpha(3).unwrap();
        let expect = (embed(&ax, Particle::One) * embed(&ax, Particle::Two)
            + embed(&ay, Particle::One) * embed(&ay, Particle::Two)
            + embed(&az, Particle::One) * embed(&az, Particle::Two) * Complex64::from(2.0))
            * Complex64::from(-e12 / (2.0 * r_s));
        assert!(max_abs(&(k.gaunt + k.retardation - expect)) < 1e-15);
    }

    #[test]
    fn gaunt_traceless_and_coulomb_value() {
        let k = breit_kernel([2.0, 0.0, 0.0], &cpl(0.3), 0.0).unwrap();
        assert_eq!(k.gaunt.trace(), Complex64::default());
        assert!((k.coulomb[(0, 0)].re + 0.15).abs() < 1e-15);
        assert_eq!(k.coulomb, SpinMatrix16::identity() * k.coulomb[(0, 0)]);
        assert!(max_abs(&(k.total - k.coulomb - k.gaunt - k.retardation)) < 1e-16);
    }

    #[test]
    fn singular_without_softening() {
        assert_eq!(breit_kernel([0.0; 3], &cpl(0.3), 0.0), Err(BreitError::Singular));
        assert!(breit_kernel([0.0; 3], &cpl(0.3), 0.1).is_ok());
        assert!(breit_kernel([1.0, 0.0, 0.0], &cpl(0.3), -1.0).is_err());
    }

    #[test]
    fn retardation_square_and_spectrum() {
        let n = [0.3, -0.4, 0.866];
        let m = alpha_n_alpha_n(unit(n));
        let sq = m * m;
        assert!(max_abs(&(sq - SpinMatrix16::identity())) < 1e-14);
        assert!(m.trace().norm() < 1e-14);
        let eig = m.symmetric_eigen().eigenvalues;
        assert_eq!(eig.iter().filter(|e| (*e - 1.0).abs() < 1e-12).count(), 8);
        assert_eq!(eig.iter().filter(|e| (*e + 1.0).abs() < 1e-12).count(), 8);
    }

    #[test]
    fn gaunt_times_radius_constant() {
        let c = cpl(0.2);
        let a = 0.3;
        let reference = {
            let k = breit_kernel([1.0, 0.0, 0.0], &c, a).unwrap();
            max_abs(&k.gaunt) * (1.0f64 + a * a).sqrt()
        };
        for i in 1..=12 {
            let r = 0.25 * i as f64;
            let k = breit_kernel([0.0, r / 2f64.sqrt(), r / 2f64.sqrt()], &c, a).unwrap();
            let v = max_abs(&k.gaunt) * (r * r + a * a).sqrt();
            assert!((v - reference).abs() < 1e-14 * reference);
        }
    }

    #[test]
    fn field_shape_hermitian_parity() {
        for sampling in [PotentialSampling::Pointwise, PotentialSampling::BandLimited] {
            let g = GridSpec::new(8, 12.0, sampling).unwrap();
            let f = KernelField::new(&g, &cpl(0.3));
            assert_eq!(f.len(), 512);
            for p in 0..g.len() {
                let s = f.sample(p);
                assert!(hermiticity_defect(&s.total) < 1e-15);
                assert!(hermiticity_defect(&s.gaunt) < 1e-15);
                assert!(hermiticity_defect(&s.retardation) < 1e-15);
                let m = f.sample(g.mirror(p));
                assert!((s.coulomb[(0, 0)] - m.coulomb[(0, 0)]).norm() < 1e-13);
                // On the Nyquist planes the minimum image is not point-symmetric.
                let (ix, iy, iz) = g.unindex(p);
                if [ix, iy, iz].contains(&(g.n / 2)) {
                    continue;
                }
                assert!(max_abs(&(s.retardation - m.retardation)) < 1e-13);
                assert!(max_abs(&(s.total - m.total)) < 1e-13);
            }
        }
    }

    #[test]
    fn origin_uses_softened_radius() {
        let g = GridSpec::new(8, 8.0, PotentialSampling::Pointwise).unwrap();
        let f = KernelField::new(&g, &cpl(0.3));
        assert!((f.coulomb_coefficient(0) + 0.3 / g.softening).abs() < 1e-14);
    }

    #[test]
    fn apply_point_matches_dense_total() {
        let g = GridSpec::new(8, 10.0, PotentialSampling::BandLimited).unwrap();
        let f = KernelField::new(&g, &cpl(0.25));
        let x: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
            .collect();
        for p in [0, 1, 9, 77, 300, 511] {
            let s = f.sample(p);
            let dense = s.total * nalgebra::SVector::<Complex64, 16>::from_column_slice(&x);
            let mut out = vec![Complex64::default(); 16];
            f.apply_point(p, TermFlags::BREIT, &x, &mut out);
            for i in 0..16 {
                assert!((out[i] - dense[i]).norm() < 1e-14, "p={p}");
            }
        }
    }

    #[test]
    fn band_limited_profile_tracks_coulomb() {
        let g = GridSpec::new(32, 32.0, PotentialSampling::BandLimited).unwrap();
        let prof = radial_profile(&g);
        // Away from the origin and the truncation sphere the projection is
        // close to 1/r.
        for &(ix, iy, iz) in &[(4usize, 0usize, 0usize), (5, 3, 0), (6, 2, 2)] {
            let p = g.index(ix, iy, iz);
            let r = norm3(g.position(p));
            assert!((prof[p] * r - 1.0).abs() < 0.05, "{} at r={r}", prof[p]);
        }
        assert!(prof[0].is_finite() && prof[0] > 1.0);
    }

    #[test]
    fn transform_with_tiny_softening_approaches_closed_form() {
        let (r, q) = (10.0, 0.9);
        let exact = truncated_profile_transform(q, 0.0, r);
        let soft = truncated_profile_transform(q, 1e-4, r);
        assert!((exact - soft).abs() < 1e-5 * exact.abs().max(1.0));
        let exact0 = truncated_profile_transform(0.0, 0.0, r);
        assert!((exact0 - truncated_profile_transform(0.0, 1e-4, r)).abs() < 1e-4);
    }

    #[test]
    fn ray_csv() {
        let rows = ray_profile(&cpl(0.3), 0.0, &[1.0, 2.0]);
        assert_eq!(rows[1].coulomb, -0.15);
        let mut buf = Vec::new();
        write_ray_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("r,coulomb,gaunt,retardation\n1,-0.3,0.15,0.15\n"));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::model::CouplingSpec;
    use crate::spinor::{hermiticity_defect, max_abs};
    use proptest::prelude::*;

    fn direction() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(-5.0f64..5.0).prop_filter("away from origin", |v| norm3(*v) > 1e-3)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kernel_is_hermitian_and_splits(r in direction(), alpha in 0.0f64..1.0, a in 0.0f64..1.0) {
            let k = breit_kernel(r, &CouplingSpec::new(alpha).unwrap(), a).unwrap();
            prop_assert!(hermiticity_defect(&k.total) < 1e-14);
            prop_assert!(max_abs(&(k.total - k.coulomb - k.gaunt - k.retardation)) < 1e-14);
        }

        #[test]
        fn unsoftened_kernel_scales_as_inverse_distance(r in direction(), s in 0.1f64..10.0) {
            let c = CouplingSpec::new(0.3).unwrap();
            let k1 = breit_kernel(r, &c, 0.0).unwrap();
            let k2 = breit_kernel(r.map(|x| x * s), &c, 0.0).unwrap();
            prop_assert!(max_abs(&(k2.total * Complex64::from(s) - k1.total)) < 1e-12);
        }

        #[test]
        fn kernel_is_even_in_direction(r in direction()) {
            let c = CouplingSpec::new(0.5).unwrap();
            let k1 = breit_kernel(r, &c, 0.2).unwrap();
            let k2 = breit_kernel(r.map(|x| -x), &c, 0.2).unwrap();
            prop_assert!(max_abs(&(k1.total - k2.total)) < 1e-15);
        }
    }
}
