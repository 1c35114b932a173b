//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use retrofit_core::{Matrix, SaddleProblem, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    gaussian_matrix(rng, n, n).qr().q()
}

/// `U diag(eigs) U'` with a random orthogonal `U`.
pub fn sym_with_spectrum(rng: &mut ChaCha8Rng, eigs: &[f64]) -> Matrix {
    let u = orthogonal(rng, eigs.len());
    let m = &u * Matrix::from_diagonal(&Vector::from_row_slice(eigs)) * u.transpose();
    (&m + m.transpose()) * 0.5
}

/// Eigenvalues with `mu` and `l` attained and the rest uniform in between.
pub fn spectrum_between(rng: &mut ChaCha8Rng, n: usize, mu: f64, l: f64) -> Vec<f64> {
    let mut e: Vec<f64> = (0..n).map(|_| rng.gen_range(mu..=l)).collect();
    e[0] = mu;
    if n > 1 {
        e[n - 1] = l;
    }
    e
}

/// `(mu, L)` with `0.1 <= mu <= L <= 10`.
pub fn mu_l(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let a: f64 = rng.gen_range(0.1..10.0);
    let b: f64 = rng.gen_range(0.1..10.0);
    (a.min(b), a.max(b))
}

/// Matrix with the given singular values (length `m <= n`), `m x n`.
pub fn with_singular_values(rng: &mut ChaCha8Rng, m: usize, n: usize, sv: &[f64]) -> Matrix {
    let u = orthogonal(rng, m);
    let v = orthogonal(rng, n);
    let mut s = Matrix::zeros(m, n);
    for (i, &x) in sv.iter().enumerate() {
        s[(i, i)] = x;
    }
    u * s * v.transpose()
}

/// Random strongly convex saddle instance with full-row-rank `B` (`m < n`).
pub fn saddle(rng: &mut ChaCha8Rng, eps1: f64, eps2: f64) -> SaddleProblem {
    let n = rng.gen_range(2..=8);
    let m = rng.gen_range(1..n);
    let (mu, l) = mu_l(rng);
    let eigs = spectrum_between(rng, n, mu, l);
    let q = sym_with_spectrum(rng, &eigs);
    let smin: f64 = rng.gen_range(0.2..1.0);
    let smax: f64 = rng.gen_range(1.0..3.0);
    let mut sv: Vec<f64> = (0..m).map(|_| rng.gen_range(smin..=smax)).collect();
    sv[0] = smax;
    sv[m - 1] = sv[m - 1].min(smin);
    let b_mat = with_singular_values(rng, m, n, &sv);
    let r = gaussian_vector(rng, n);
    let b = gaussian_vector(rng, m);
    SaddleProblem::new(q, r, b_mat, b, eps1, eps2).unwrap()
}

/// Condition number of a symmetric positive definite matrix.
pub fn spd_cond(m: &Matrix) -> f64 {
    let e = m.clone().symmetric_eigen().eigenvalues;
    e.max() / e.min()
}

/// Brute-force `||A^k x||` growth test: true when the orbit of a random vector
/// stays bounded by `bound` over `steps` steps.
pub fn orbit_bounded(a: &Matrix, x: &Vector, steps: usize, bound: f64) -> bool {
    let mut v = x.clone();
    let x0 = x.norm().max(1e-300);
    for _ in 0..steps {
        v = a * v;
        if !(v.norm() / x0 <= bound) {
            return false;
        }
    }
    true
}

/// `(A = I - P Q, C w = -P r)` with `P` SPD, `Q` PSD (rank `rank`), `r` in the
/// range of `Q` and `lambda_max(PQ) <= 1.9`.
pub struct GradientInstance {
    pub sys: retrofit_core::LtiSystem,
    pub p: Matrix,
    pub q: Matrix,
    pub r: Vector,
}

pub fn gradient_instance(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> GradientInstance {
    let pe: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let p = sym_with_spectrum(rng, &pe);
    let mut qe: Vec<f64> = (0..n).map(|i| if i < rank { rng.gen_range(0.05..1.0) } else { 0.0 }).collect();
    qe.reverse();
    let mut q = sym_with_spectrum(rng, &qe);
    let top = (&p * &q).complex_eigenvalues().iter().map(|z| z.re).fold(0.0, f64::max);
    if top > 0.0 {
        q *= rng.gen_range(0.3..1.9) / top;
    }
    let r = &q * gaussian_vector(rng, n);
    let n_ = p.nrows();
    let a = Matrix::identity(n_, n_) - &p * &q;
    let sys = retrofit_core::LtiSystem::with_offset(a, -(&p * &r)).unwrap();
    GradientInstance { sys, p, q, r }
}

/// `S D S^-1` with a well-conditioned random `S`.
pub fn similar_to(rng: &mut ChaCha8Rng, d: &Matrix) -> Matrix {
    let n = d.nrows();
    let s = Matrix::identity(n, n) + gaussian_matrix(rng, n, n) * (0.3 / (n as f64).sqrt());
    &s * d * s.try_inverse().unwrap()
}

/// Real block-diagonal matrix with the given real eigenvalues and complex pairs `(re, im)`.
pub fn real_block_diag(real: &[f64], pairs: &[(f64, f64)]) -> Matrix {
    let n = real.len() + 2 * pairs.len();
    let mut d = Matrix::zeros(n, n);
    for (i, &v) in real.iter().enumerate() {
        d[(i, i)] = v;
    }
    for (k, &(re, im)) in pairs.iter().enumerate() {
        let i = real.len() + 2 * k;
        d[(i, i)] = re;
        d[(i + 1, i + 1)] = re;
        d[(i, i + 1)] = im;
        d[(i + 1, i)] = -im;
    }
    d
}
