//! Three-dimensional FFTs on an n³ periodic grid, row-major `(ix, iy, iz)`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::SPIN_DIM;

#[derive(Clone)]
pub struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform, e^{−ik·r} convention.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform including the 1/n³ factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n, "buffer does not match grid");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);

        let mut tmp = vec![Complex64::default(); n * n];
        for slab in data.chunks_mut(n * n) {
            transpose(slab, &mut tmp, n, n);
            plan.process_with_scratch(&mut tmp, &mut scratch);
            transpose(&tmp, slab, n, n);
        }

        let mut tmp = vec![Complex64::default(); n * n * n];
        transpose(data, &mut tmp, n, n * n);
        plan.process_with_scratch(&mut tmp, &mut scratch);
        transpose(&tmp, data, n * n, n);
    }

    /// Transform each of the 16 interleaved spin components of a
    /// point-major field in place.
    pub fn forward_spinor(&self, field: &mut [Complex64]) {
        self.spinor(field, true);
    }

    pub fn inverse_spinor(&self, field: &mut [Complex64]) {
        self.spinor(field, false);
    }

    fn spinor(&self, field: &mut [Complex64], forward: bool) {
        let npts = self.n * self.n * self.n;
        assert_eq!(field.len(), npts * SPIN_DIM, "field does not match grid");
        let comps: Vec<Vec<Complex64>> = (0..SPIN_DIM)
            .into_par_iter()
            .map(|c| {
                let mut buf: Vec<Complex64> = (0..npts).map(|p| field[p * SPIN_DIM + c]).collect();
                if forward {
                    self.forward(&mut buf);
                } else {
                    self.inverse(&mut buf);
                }
                buf
            })
            .collect();
        for (c, buf) in comps.iter().enumerate() {
            for (p, z) in buf.iter().enumerate() {
                field[p * SPIN_DIM + c] = *z;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(data: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); data.len()];
        let w = -2.0 * std::f64::consts::PI / n as f64;
        for kx in 0..n {
            for ky in 0..n {
                for kz in 0..n {
                    let mut acc = Complex64::default();
                    for x in 0..n {
                        for y in 0..n {
                            for z in 0..n {
                                let ph = w * ((kx * x + ky * y + kz * z) % n) as f64;
                                acc += data[(x * n + y) * n + z] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[(kx * n + ky) * n + kz] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft() {
        let n = 6;
        let data: Vec<Complex64> = (0..n * n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = data.clone();
        Fft3::new(n).forward(&mut fast);
        let slow = naive_dft(&data, n);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let n = 8;
        let fft = Fft3::new(n);
        let data: Vec<Complex64> = (0..n * n * n * SPIN_DIM)
            .map(|i| Complex64::new((i as f64).sqrt().sin(), 0.5 * (i as f64 * 0.3).cos()))
            .collect();
        let mut work = data.clone();
        fft.forward_spinor(&mut work);
        fft.inverse_spinor(&mut work);
        for (a, b) in work.iter().zip(&data) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn field() -> impl Strategy<Value = (usize, Vec<Complex64>)> {
        (2usize..9).prop_flat_map(|n| {
            (Just(n), prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n * n))
        })
        .prop_map(|(n, v)| (n, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn inverse_undoes_forward((n, x) in field()) {
            let f = Fft3::new(n);
            let mut y = x.clone();
            f.forward(&mut y);
            f.inverse(&mut y);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).norm() < 1e-13);
            }
        }

        #[test]
        fn parseval((n, x) in field()) {
            let f = Fft3::new(n);
            let mut y = x.clone();
            f.forward(&mut y);
            let ex: f64 = x.iter().map(|z| z.norm_sqr()).sum();
            let ey: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64;
            prop_assert!((ex - ey).abs() <= 1e-12 * ex.max(1.0));
        }
    }
}
