//! Numerical laboratory for the two-fermion Breit equation.

pub mod breit;
pub mod cli;
pub mod darwin;
pub mod derivation;
pub mod eigen;
pub mod fft;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod spinor;

/// Number of two-body spinor components (4 ⊗ 4).
pub const SPIN_DIM: usize = 16;
