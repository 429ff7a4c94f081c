//! Block LOBPCG for the lowest eigenpairs of a Hermitian operator that is
//! only available as a matrix-vector product.
//!
//! Restart policy: the images `A·X` and `A·P` are updated by the same linear
//! combinations as the vectors themselves, which accumulates roundoff. Every
//! `refresh_every` iterations, and before convergence is declared, `A·X` is
//! recomputed from scratch and the conjugate directions `P` are discarded
//! (one steepest-descent step). `P` is also discarded whenever
//! orthogonalization removes most of a direction.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type Vector = Vec<Complex64>;

/// A Hermitian operator on `C^dim`.
pub trait HermitianOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);

    /// Approximate inverse of (A − σ) applied in place to a residual. `sigma`
    /// is the current lowest Ritz value.
    fn precondition(&self, _r: &mut [Complex64], _sigma: f64) {}

    /// Map a vector back into the admissible subspace (identity by default).
    fn restrict(&self, _x: &mut [Complex64]) {}
}

#[derive(Debug, Clone)]
pub struct LobpcgOptions {
    pub n_wanted: usize,
    /// Extra block columns beyond `n_wanted`; they absorb near-degenerate
    /// partners of the wanted states.
    pub guard: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub refresh_every: usize,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self {
            n_wanted: 1,
            guard: 3,
            tol: 1e-7,
            max_iter: 300,
            seed: 0,
            refresh_every: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LobpcgOutcome {
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<Vector>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.par_iter()
        .zip(b.par_iter())
        .map(|(x, y)| x.conj() * y)
        .reduce(Complex64::default, |p, q| p + q)
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.par_iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [Complex64], a: Complex64, x: &[Complex64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += a * xi);
}

fn scale(y: &mut [Complex64], s: f64) {
    y.par_iter_mut().for_each(|z| *z *= s);
}

/// Σ_j coeffs[j] · vs[j].
fn combine(vs: &[&Vector], coeffs: &[Complex64]) -> Vector {
    let n = vs[0].len();
    let mut out = vec![Complex64::default(); n];
    out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
        let off = c * 4096;
        for (v, &a) in vs.iter().zip(coeffs) {
            if a == Complex64::default() {
                continue;
            }
            for (i, o) in chunk.iter_mut().enumerate() {
                *o += a * v[off + i];
            }
        }
    });
    out
}

/// Orthonormalize `vs` against the orthonormal `basis` and among
/// themselves (two Gram-Schmidt passes). Vectors that lose more than
/// `1 − drop_tol` of their norm are dropped. When `images` are given, the
/// same operations are applied to them using `basis_images`.
fn orthonormalize(
    basis: &[&Vector],
    basis_images: Option<&[&Vector]>,
    vs: Vec<Vector>,
    images: Option<Vec<Vector>>,
    drop_tol: f64,
) -> (Vec<Vector>, Option<Vec<Vector>>) {
    let mut kept: Vec<Vector> = Vec::new();
    let mut kept_img: Vec<Vector> = Vec::new();
    let track = images.is_some();
    let mut img_iter = images.map(|v| v.into_iter());
    for mut v in vs {
        let mut av = img_iter.as_mut().and_then(|it| it.next());
        let n0 = norm(&v);
        if n0 == 0.0 {
            continue;
        }
        for _pass in 0..2 {
            for (j, b) in basis.iter().enumerate() {
                let c = dot(b, &v);
                axpy(&mut v, -c, b);
                if let (Some(av), Some(bi)) = (av.as_mut(), basis_images) {
                    axpy(av, -c, bi[j]);
                }
            }
            for (j, b) in kept.iter().enumerate() {
                let c = dot(b, &v);
                axpy(&mut v, -c, b);
                if let Some(av) = av.as_mut() {
                    axpy(av, -c, &kept_img[j]);
                }
            }
        }
        let n1 = norm(&v);
        if n1 <= drop_tol * n0 {
            continue;
        }
        scale(&mut v, 1.0 / n1);
        if let Some(mut av) = av {
            scale(&mut av, 1.0 / n1);
            kept_img.push(av);
        }
        kept.push(v);
    }
    (kept, track.then_some(kept_img))
}

fn hermitian_eigen(g: DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

fn apply_all<O: HermitianOperator>(op: &O, xs: &[Vector]) -> Vec<Vector> {
    xs.iter()
        .map(|x| {
            let mut y = vec![Complex64::default(); x.len()];
            op.apply(x, &mut y);
            y
        })
        .collect()
}

fn gram(s: &[&Vector], a_s: &[&Vector]) -> DMatrix<Complex64> {
    let k = s.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = dot(s[i], a_s[j]);
            let w = dot(s[j], a_s[i]).conj();
            let h = 0.5 * (v + w);
            g[(i, j)] = h;
            g[(j, i)] = h.conj();
        }
        g[(i, i)].im = 0.0;
    }
    g
}

/// Random starting block, restricted and orthonormalized.
pub fn random_block<O: HermitianOperator>(op: &O, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vector = (0..op.dim())
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        op.restrict(&mut v);
        let refs: Vec<&Vector> = out.iter().collect();
        let (mut kept, _) = orthonormalize(&refs, None, vec![v], None, 1e-8);
        out.append(&mut kept);
    }
    out
}

/// Lowest `n_wanted` eigenpairs. `initial` vectors, if given, seed the block
/// (missing columns are filled randomly).
pub fn lobpcg<O: HermitianOperator>(
    op: &O,
    opts: &LobpcgOptions,
    initial: Option<Vec<Vector>>,
) -> LobpcgOutcome {
    let m = (opts.n_wanted + opts.guard).min(op.dim());
    let mut x: Vec<Vector> = {
        let mut start = initial.unwrap_or_default();
        start.truncate(m);
        for v in &mut start {
            op.restrict(v);
        }
        let (mut kept, _) = orthonormalize(&[], None, start, None, 1e-8);
        if kept.len() < m {
            let extra = random_block(op, m, opts.seed);
            let refs: Vec<&Vector> = kept.iter().collect();
            let (mut more, _) = orthonormalize(&refs, None, extra, None, 1e-8);
            more.truncate(m - kept.len());
            kept.append(&mut more);
        }
        kept
    };
    let mut ax = apply_all(op, &x);

    // Initial Rayleigh-Ritz on the starting block.
    let (mut lambda, c) = {
        let xr: Vec<&Vector> = x.iter().collect();
        let axr: Vec<&Vector> = ax.iter().collect();
        hermitian_eigen(gram(&xr, &axr))
    };
    {
        let xr: Vec<&Vector> = x.iter().collect();
        let axr: Vec<&Vector> = ax.iter().collect();
        let cols: Vec<Vec<Complex64>> = (0..m).map(|i| c.column(i).iter().copied().collect()).collect();
        x = cols.iter().map(|cc| combine(&xr, cc)).collect();
        ax = cols.iter().map(|cc| combine(&axr, cc)).collect();
    }

    let mut p: Vec<Vector> = Vec::new();
    let mut ap: Vec<Vector> = Vec::new();
    let mut residuals = vec![f64::INFINITY; m];
    let mut iterations = 0;
    let mut since_refresh = 0;
    let mut converged = false;

    loop {
        // Residuals R = AX − XΛ.
        let r: Vec<Vector> = (0..m)
            .map(|i| {
                let mut ri = ax[i].clone();
                axpy(&mut ri, Complex64::from(-lambda[i]), &x[i]);
                ri
            })
            .collect();
        for i in 0..m {
            residuals[i] = norm(&r[i]);
        }
        let wanted_done = residuals[..opts.n_wanted].iter().all(|&v| v <= opts.tol);
        if wanted_done || since_refresh >= opts.refresh_every || iterations >= opts.max_iter {
            if since_refresh > 0 {
                // Recompute images before trusting the residuals.
                ax = apply_all(op, &x);
                let xr: Vec<&Vector> = x.iter().collect();
                let axr: Vec<&Vector> = ax.iter().collect();
                let (l, c) = hermitian_eigen(gram(&xr, &axr));
                let cols: Vec<Vec<Complex64>> =
                    (0..m).map(|i| c.column(i).iter().copied().collect()).collect();
                x = cols.iter().map(|cc| combine(&xr, cc)).collect();
                ax = cols.iter().map(|cc| combine(&axr, cc)).collect();
                lambda = l;
                p.clear();
                ap.clear();
                since_refresh = 0;
                continue;
            }
            if wanted_done {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
        }
        iterations += 1;
        since_refresh += 1;

        // Soft locking: converged columns stay in X but get no new direction.
        let active: Vec<usize> = (0..m).filter(|&i| residuals[i] > opts.tol).collect();
        let mut w: Vec<Vector> = active
            .iter()
            .map(|&i| {
                let mut wi = r[i].clone();
                op.precondition(&mut wi, lambda[0]);
                op.restrict(&mut wi);
                wi
            })
            .collect();

        let xr: Vec<&Vector> = x.iter().collect();
        let axr: Vec<&Vector> = ax.iter().collect();
        let p_count_in = p.len();
        let (p_on, ap_on) = orthonormalize(
            &xr,
            Some(&axr),
            std::mem::take(&mut p),
            Some(std::mem::take(&mut ap)),
            1e-3,
        );
        let mut ap_on = ap_on.unwrap_or_default();
        let mut p_on = p_on;
        if p_on.len() < p_count_in {
            p_on.clear();
            ap_on.clear();
        }

        let mut basis: Vec<&Vector> = x.iter().collect();
        basis.extend(p_on.iter());
        let (w_on, _) = orthonormalize(&basis, None, std::mem::take(&mut w), None, 1e-10);
        let aw_on = apply_all(op, &w_on);

        let s: Vec<&Vector> = x.iter().chain(w_on.iter()).chain(p_on.iter()).collect();
        let a_s: Vec<&Vector> = ax.iter().chain(aw_on.iter()).chain(ap_on.iter()).collect();
        let (l, c) = hermitian_eigen(gram(&s, &a_s));

        let k = s.len();
        let cols: Vec<Vec<Complex64>> = (0..m).map(|i| c.column(i).iter().copied().collect()).collect();
        let new_x: Vec<Vector> = cols.iter().map(|cc| combine(&s, cc)).collect();
        let new_ax: Vec<Vector> = cols.iter().map(|cc| combine(&a_s, cc)).collect();
        let mut new_p = Vec::new();
        let mut new_ap = Vec::new();
        if k > m {
            for (i, cc) in cols.iter().enumerate() {
                if residuals[i] <= opts.tol {
                    continue;
                }
                let mut tail = cc.clone();
                tail[..m].iter_mut().for_each(|z| *z = Complex64::default());
                new_p.push(combine(&s, &tail));
                new_ap.push(combine(&a_s, &tail));
            }
        }
        x = new_x;
        ax = new_ax;
        p = new_p;
        ap = new_ap;
        lambda = l[..m].to_vec();
    }

    LobpcgOutcome {
        eigenvalues: lambda[..opts.n_wanted].to_vec(),
        vectors: x.into_iter().take(opts.n_wanted).collect(),
        residuals: residuals[..opts.n_wanted].to_vec(),
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Hermitian test operator.
    struct Dense(DMatrix<Complex64>);

    impl HermitianOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
            let v = nalgebra::DVector::from_column_slice(x);
            y.copy_from_slice((&self.0 * v).as_slice());
        }
    }

    fn test_matrix(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let mut h = (&a + a.adjoint()) * Complex64::from(0.1);
        for i in 0..n {
            h[(i, i)] += Complex64::from(i as f64 * 0.05);
        }
        h
    }

    #[test]
    fn matches_dense_eigenvalues() {
        let h = test_matrix(120, 3);
        let (exact, _) = hermitian_eigen(h.clone());
        let out = lobpcg(
            &Dense(h),
            &LobpcgOptions {
                n_wanted: 4,
                tol: 1e-9,
                max_iter: 500,
                ..Default::default()
            },
            None,
        );
        assert!(out.converged, "{:?}", out.residuals);
        for i in 0..4 {
            assert!((out.eigenvalues[i] - exact[i]).abs() < 1e-10, "{i}");
        }
    }

    #[test]
    fn degenerate_cluster_resolved() {
        let n = 80;
        let mut h = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = Complex64::from(if i < 3 { -1.0 } else { i as f64 * 0.1 });
        }
        let q = {
            let a = test_matrix(n, 9);
            a.qr().q()
        };
        let h = &q * h * q.adjoint();
        let out = lobpcg(
            &Dense(h),
            &LobpcgOptions {
                n_wanted: 3,
                tol: 1e-9,
                max_iter: 400,
                ..Default::default()
            },
            None,
        );
        assert!(out.converged);
        for e in &out.eigenvalues {
            assert!((e + 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn orthonormalize_drops_dependent_vectors() {
        let a: Vector = vec![Complex64::from(1.0), Complex64::default(), Complex64::default()];
        let b: Vector = vec![Complex64::from(2.0), Complex64::default(), Complex64::default()];
        let c: Vector = vec![Complex64::from(1.0), Complex64::from(1.0), Complex64::default()];
        let (kept, _) = orthonormalize(&[], None, vec![a, b, c], None, 1e-8);
        assert_eq!(kept.len(), 2);
        assert!(dot(&kept[0], &kept[1]).norm() < 1e-15);
    }
}
