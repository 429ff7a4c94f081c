//! Dirac matrices in the standard (Dirac) representation and their
//! two-particle tensor-product embedding.
//!
//! Two-body spinor components are indexed `4 * a + b`, with `a` the spinor
//! index of particle 1 and `b` that of particle 2, so that
//! `embed(A, One) = A ⊗ I₄` and `embed(B, Two) = I₄ ⊗ B`.

use nalgebra::{Matrix2, SMatrix};
use num_complex::Complex64;
use thiserror::Error;

pub type SpinMatrix2 = Matrix2<Complex64>;
pub type SpinMatrix4 = SMatrix<Complex64, 4, 4>;
pub type SpinMatrix16 = SMatrix<Complex64, 16, 16>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpinorError {
    #[error("Lorentz index {0} out of range 0..=3")]
    LorentzIndex(usize),
    #[error("spatial index {0} out of range 1..=3")]
    SpatialIndex(usize),
}

/// Metric with signature (+, −, −, −).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MinkowskiMetric;

impl MinkowskiMetric {
    pub const DIAG: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

    /// η_{μν} (equal to η^{μν} in this signature).
    pub fn get(&self, mu: usize, nu: usize) -> f64 {
        if mu == nu {
            Self::DIAG[mu]
        } else {
            0.0
        }
    }

    /// a·b = η_{μν} a^μ b^ν.
    pub fn dot(&self, a: &[f64; 4], b: &[f64; 4]) -> f64 {
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    }

    /// Lower (or raise) an index.
    pub fn lower<T: Copy + std::ops::Neg<Output = T>>(&self, a: [T; 4]) -> [T; 4] {
        [a[0], -a[1], -a[2], -a[3]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Particle {
    One,
    Two,
}

/// Pauli matrix σ_i, i ∈ {1, 2, 3}.
pub fn pauli(i: usize) -> Result<SpinMatrix2, SpinorError> {
    Ok(match i {
        1 => Matrix2::new(ZERO, ONE, ONE, ZERO),
        2 => Matrix2::new(ZERO, -I, I, ZERO),
        3 => Matrix2::new(ONE, ZERO, ZERO, -ONE),
        _ => return Err(SpinorError::SpatialIndex(i)),
    })
}

fn blocks(a: &SpinMatrix2, b: &SpinMatrix2, c: &SpinMatrix2, d: &SpinMatrix2) -> SpinMatrix4 {
    let mut m = SpinMatrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(a);
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(b);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(c);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(d);
    m
}

pub fn beta() -> SpinMatrix4 {
    SpinMatrix4::from_diagonal(&nalgebra::Vector4::new(ONE, ONE, -ONE, -ONE))
}

/// α_i = γ⁰γ^i, i ∈ {1, 2, 3}.
pub fn alpha(i: usize) -> Result<SpinMatrix4, SpinorError> {
    let s = pauli(i)?;
    let z = SpinMatrix2::zeros();
    Ok(blocks(&z, &s, &s, &z))
}

/// γ^μ with γ⁰ = β and γ^i = βα_i.
pub fn gamma(mu: usize) -> Result<SpinMatrix4, SpinorError> {
    match mu {
        0 => Ok(beta()),
        1..=3 => Ok(beta() * alpha(mu)?),
        _ => Err(SpinorError::LorentzIndex(mu)),
    }
}

/// The three α matrices, indexed 0..3 for convenience in vector expressions.
pub fn alphas() -> [SpinMatrix4; 3] {
    [alpha(1).unwrap(), alpha(2).unwrap(), alpha(3).unwrap()]
}

/// α⃗·v for a real 3-vector.
pub fn alpha_dot(v: [f64; 3]) -> SpinMatrix4 {
    let a = alphas();
    a[0] * Complex64::from(v[0]) + a[1] * Complex64::from(v[1]) + a[2] * Complex64::from(v[2])
}

/// Kronecker embedding of a one-body operator into the 16-dimensional
/// two-body spin space.
pub fn embed(m: &SpinMatrix4, particle: Particle) -> SpinMatrix16 {
    let id = SpinMatrix4::identity();
    match particle {
        Particle::One => m.kronecker(&id),
        Particle::Two => id.kronecker(m),
    }
}

pub fn anticommutator(a: &SpinMatrix4, b: &SpinMatrix4) -> SpinMatrix4 {
    a * b + b * a
}

/// Largest entry of |A − A†|.
pub fn hermiticity_defect<const D: usize>(m: &SMatrix<Complex64, D, D>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs<const D: usize>(m: &SMatrix<Complex64, D, D>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma0_is_beta() {
        let g0 = gamma(0).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| g0[(i, i)].re).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(g0, beta());
    }

    #[test]
    fn clifford_relation_exact() {
        let eta = MinkowskiMetric;
        for mu in 0..4 {
            for nu in 0..4 {
                let ac = anticommutator(&gamma(mu).unwrap(), &gamma(nu).unwrap());
                let expect = SpinMatrix4::identity() * Complex64::from(2.0 * eta.get(mu, nu));
                assert_eq!(ac, expect, "mu={mu} nu={nu}");
            }
        }
        assert_eq!(
            anticommutator(&gamma(1).unwrap(), &gamma(2).unwrap()),
            SpinMatrix4::zeros()
        );
    }

    #[test]
    fn hermiticity_of_gammas() {
        assert_eq!(hermiticity_defect(&gamma(0).unwrap()), 0.0);
        for i in 1..4 {
            let g = gamma(i).unwrap();
            assert_eq!(g + g.adjoint(), SpinMatrix4::zeros());
        }
    }

    #[test]
    fn alpha_properties() {
        let b = beta();
        for i in 1..4 {
            let a = alpha(i).unwrap();
            assert_eq!(a, gamma(0).unwrap() * gamma(i).unwrap());
            assert_eq!(hermiticity_defect(&a), 0.0);
            assert_eq!(a.trace(), ZERO);
            assert_eq!(a * a, SpinMatrix4::identity());
            assert_eq!(b * a + a * b, SpinMatrix4::zeros());
        }
        assert_eq!(b * b, SpinMatrix4::identity());
    }

    #[test]
    fn index_errors() {
        assert_eq!(gamma(4), Err(SpinorError::LorentzIndex(4)));
        assert_eq!(alpha(0), Err(SpinorError::SpatialIndex(0)));
        assert_eq!(alpha(4), Err(SpinorError::SpatialIndex(4)));
    }

    #[test]
    fn embed_beta_spectrum() {
        let e = embed(&beta(), Particle::One);
        let eig = e.symmetric_eigen().eigenvalues;
        let plus = eig.iter().filter(|v| (*v - 1.0).abs() < 1e-14).count();
        let minus = eig.iter().filter(|v| (*v + 1.0).abs() < 1e-14).count();
        assert_eq!((plus, minus), (8, 8));
    }

    #[test]
    fn embed_identity_and_commutation() {
        assert_eq!(embed(&SpinMatrix4::identity(), Particle::Two), SpinMatrix16::identity());
        let a = embed(&alpha(1).unwrap(), Particle::One);
        let b = embed(&alpha(2).unwrap(), Particle::Two);
        assert_eq!(a * b - b * a, SpinMatrix16::zeros());
    }

    #[test]
    fn embed_index_convention() {
        // (A ⊗ I)_{4a+b, 4a'+b'} = A_{aa'} δ_{bb'}
        let a = gamma(2).unwrap();
        let e = embed(&a, Particle::One);
        for r in 0..16 {
            for c in 0..16 {
                let expect = if r % 4 == c % 4 { a[(r / 4, c / 4)] } else { ZERO };
                assert_eq!(e[(r, c)], expect);
            }
        }
    }

    fn hermitian4() -> impl Strategy<Value = SpinMatrix4> {
        proptest::collection::vec(-1.0f64..1.0, 32).prop_map(|v| {
            let m = SpinMatrix4::from_fn(|i, j| Complex64::new(v[4 * i + j], v[16 + 4 * i + j]));
            (m + m.adjoint()) * Complex64::from(0.5)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn cross_particle_embeddings_commute(a in hermitian4(), b in hermitian4()) {
            let ea = embed(&a, Particle::One);
            let eb = embed(&b, Particle::Two);
            prop_assert!(max_abs(&(ea * eb - eb * ea)) <= 1e-13);
            prop_assert!(hermiticity_defect(&ea) <= 1e-15);
            prop_assert!(hermiticity_defect(&eb) <= 1e-15);
        }
    }
}
