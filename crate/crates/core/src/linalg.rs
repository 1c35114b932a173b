//! Dense linear-algebra helpers shared by every other module.
//!
//! Everything is double precision and dense. Eigenvalues come from a real
//! Schur form; eigenvectors are recovered cluster by cluster from the
//! nullspace of `M - lambda I`, which is what lets the diagonalizability
//! verdict see defective eigenvalues.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Dyn, Schur, SymmetricEigen};
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
type CMatrix = DMatrix<Complex64>;

/// Numerical tolerances used across the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Reconstruction residual bound for factorizations and recovered problems.
    pub recon: f64,
    /// Residual bound for the coupling-equation feasibility search.
    pub feas: f64,
    /// Eigenvalues above `-psd` count as nonnegative.
    pub psd: f64,
    /// Relative singular-value cutoff for rank decisions.
    pub rank: f64,
    /// Eigenvector-matrix condition number above which a matrix is treated as defective.
    pub diag: f64,
    /// Relative imaginary-part cutoff for the real-spectrum verdict.
    pub real: f64,
    /// Relative distance below which eigenvalues are treated as one cluster.
    pub cluster: f64,
    /// Distance from the unit circle below which an eigenvalue is "on" it.
    pub unit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            recon: 1e-8,
            feas: 1e-8,
            psd: 1e-10,
            rank: 1e-10,
            diag: 1e8,
            real: 1e-9,
            cluster: 1e-6,
            unit: 1e-9,
        }
    }
}

impl Tolerances {
    /// Overrides one tolerance by name. Returns `false` for unknown names.
    pub fn set(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "recon" | "tol_recon" => &mut self.recon,
            "feas" | "tol_feas" => &mut self.feas,
            "psd" | "tol_psd" => &mut self.psd,
            "rank" | "tol_rank" => &mut self.rank,
            "diag" | "tol_diag" => &mut self.diag,
            "real" | "tol_real" => &mut self.real,
            "cluster" | "tol_cluster" => &mut self.cluster,
            "unit" | "tol_unit" => &mut self.unit,
            _ => return false,
        };
        *slot = value;
        true
    }
}

/// A group of numerically coincident eigenvalues and the eigenvectors found for it.
#[derive(Debug, Clone)]
pub struct EigenCluster {
    pub value: Complex64,
    pub multiplicity: usize,
    /// Number of independent eigenvectors found (geometric multiplicity).
    pub geometric: usize,
}

impl EigenCluster {
    pub fn is_semisimple(&self) -> bool {
        self.geometric == self.multiplicity
    }
}

/// Result of [`spectrum`].
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<Complex64>,
    pub clusters: Vec<EigenCluster>,
    pub real_spectrum: bool,
    pub diagonalizable: bool,
    /// 2-norm condition number of the eigenvector matrix (infinite when defective).
    pub eigvec_condition: f64,
    /// Real factors `(J, Lambda)` with `M = J diag(Lambda) J^-1`, eigenvalues
    /// grouped by cluster. Present only for diagonalizable real spectra.
    pub factors: Option<(Matrix, Vector)>,
}

impl SpectrumReport {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Column ranges of `J` belonging to each cluster, in order.
    pub fn cluster_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.clusters
            .iter()
            .map(|c| {
                let r = (start, c.multiplicity);
                start += c.multiplicity;
                r
            })
            .collect()
    }
}

/// Thin singular value decomposition `m = U diag(s) V^H`, `s` descending.
pub(crate) struct Svd<T: nalgebra::ComplexField<RealField = f64>> {
    pub u: DMatrix<T>,
    pub s: Vec<f64>,
    /// Square, `ncols x ncols`.
    pub v: DMatrix<T>,
}

/// One-sided Jacobi SVD. nalgebra's bidiagonal SVD stops early on some small
/// well-conditioned inputs (around 1e-8 relative reconstruction error), which
/// is too coarse for the fixed-point and rank tests built on it.
/// Wide inputs are padded with zero rows.
pub(crate) fn svd<T: nalgebra::ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Svd<T> {
    let (rows, n) = m.shape();
    let r = rows.max(n);
    let mut a = DMatrix::<T>::zeros(r, n);
    a.view_mut((0, 0), (rows, n)).copy_from(m);
    let mut v = DMatrix::<T>::identity(n, n);
    let rotate = |x: &mut DMatrix<T>, p: usize, q: usize, c: f64, s: f64, e: T| {
        for i in 0..x.nrows() {
            let xp = x[(i, p)].clone();
            let yq = x[(i, q)].clone() * e.clone().conjugate();
            x[(i, p)] = xp.clone().scale(c) - yq.clone().scale(s);
            x[(i, q)] = (xp.scale(s) + yq.scale(c)) * e.clone();
        }
    };
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, T::zero());
                for i in 0..r {
                    alpha += a[(i, p)].clone().modulus_squared();
                    beta += a[(i, q)].clone().modulus_squared();
                    gamma += a[(i, p)].clone().conjugate() * a[(i, q)].clone();
                }
                let g = gamma.clone().modulus();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = if zeta >= 0.0 { 1.0 } else { -1.0 } / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let e = gamma.unscale(g);
                rotate(&mut a, p, q, c, c * t, e.clone());
                rotate(&mut v, p, q, c, c * t, e);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(core::cmp::Ordering::Equal));
    let smax = norms.iter().copied().fold(0.0, f64::max);
    let mut u = DMatrix::<T>::zeros(r, n);
    let mut vs = DMatrix::<T>::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        vs.set_column(k, &v.column(j));
        if norms[j] > f64::EPSILON * smax && norms[j] > 0.0 {
            u.set_column(k, &a.column(j).unscale(norms[j]));
        } else {
            complete_column(&mut u, k);
        }
    }
    Svd {
        u: u.rows(0, rows).into_owned(),
        s,
        v: vs,
    }
}

/// Fills column `k` with a unit vector orthogonal to columns `0..k`.
fn complete_column<T: nalgebra::ComplexField<RealField = f64>>(u: &mut DMatrix<T>, k: usize) {
    let r = u.nrows();
    let mut best: Option<(f64, DVector<T>)> = None;
    for e in 0..r {
        let mut w = DVector::<T>::zeros(r);
        w[e] = T::one();
        for _ in 0..2 {
            for j in 0..k {
                let col = u.column(j).into_owned();
                let proj = col.dotc(&w);
                w -= col * proj;
            }
        }
        let nw = w.norm();
        if best.as_ref().map_or(true, |(b, _)| nw > *b) {
            best = Some((nw, w));
        }
    }
    if let Some((nw, w)) = best {
        if nw > 0.0 {
            u.set_column(k, &w.unscale(nw));
        }
    }
}

pub(crate) fn sym_eigen(m: &Matrix) -> SymmetricEigen<f64, Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &Matrix) -> Vec<Complex64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let h = m.clone().hessenberg().h();
    hessenberg_eigenvalues(h).unwrap_or_else(|| {
        Schur::try_new(m.clone(), f64::EPSILON, 10_000 * n)
            .map(|s| s.complex_eigenvalues().iter().copied().collect())
            .unwrap_or_else(|| (0..n).map(|i| Complex64::new(m[(i, i)], 0.0)).collect())
    })
}

/// Francis double-shift QR on an upper Hessenberg matrix, with the usual
/// exceptional shifts. nalgebra's Schur iteration can stall forever on exactly
/// repeated eigenvalues, which similarity-built test matrices hit routinely.
fn hessenberg_eigenvalues(mut h: Matrix) -> Option<Vec<Complex64>> {
    let nn = h.nrows();
    let mut d = alloc::vec![0.0; nn];
    let mut e = alloc::vec![0.0; nn];
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }
    let mut n = nn as isize - 1;
    let mut iter = 0usize;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut x, mut y, mut w);
    while n >= 0 {
        let nu = n as usize;
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }
        if l == nu {
            d[nu] = h[(nu, nu)] + exshift;
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            x = h[(nu, nu)] + exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = if z != 0.0 { x - w / z } else { x + z };
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            if iter > 100 * nn.max(10) {
                return None;
            }
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let lhs = h[(m, m - 1)].abs() * (q.abs() + r.abs());
                let rhs = eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }
    Some(d.into_iter().zip(e).map(|(re, im)| Complex64::new(re, im)).collect())
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn is_real(z: Complex64, tol: &Tolerances) -> bool {
    z.im.abs() <= tol.real * (1.0 + z.norm())
}

fn cluster_eigenvalues(eigs: &[Complex64], tol: &Tolerances) -> Vec<(Complex64, usize)> {
    let mut sorted: Vec<Complex64> = eigs.to_vec();
    sorted.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(core::cmp::Ordering::Equal))
    });
    let mut groups: Vec<(Complex64, usize, Complex64)> = Vec::new(); // (sum, count, last)
    for z in sorted {
        let joined = groups.iter_mut().find(|(sum, count, _)| {
            let center = *sum / (*count as f64);
            (z - center).norm() <= tol.cluster * (1.0 + z.norm())
        });
        match joined {
            Some(g) => {
                g.0 += z;
                g.1 += 1;
                g.2 = z;
            }
            None => groups.push((z, 1, z)),
        }
    }
    groups
        .into_iter()
        .map(|(sum, count, _)| {
            let mut c = sum / (count as f64);
            if is_real(c, tol) {
                c.im = 0.0;
            }
            (c, count)
        })
        .collect()
}

/// Right singular vectors for the `k` smallest singular values, plus the
/// largest of those `k` singular values.
fn smallest_right_vectors(m: &CMatrix, k: usize) -> (CMatrix, f64) {
    let d = svd(m);
    let n = m.ncols();
    let out = d.v.columns(n - k, k).into_owned();
    let worst = if k == 0 { 0.0 } else { d.s[n - k] };
    (out, worst)
}

/// Eigen decomposition report: eigenvalues, diagonalizability and real factors.
pub fn spectrum(m: &Matrix, tol: &Tolerances) -> SpectrumReport {
    assert!(m.is_square(), "spectrum needs a square matrix");
    let n = m.nrows();
    let eigs = eigenvalues(m);
    let real_spectrum = eigs.iter().all(|z| is_real(*z, tol));
    let groups = cluster_eigenvalues(&eigs, tol);
    let scale = m.norm().max(1.0);
    let null_tol = 1e3 * tol.cluster * scale;

    let mc: CMatrix = m.map(|x| Complex64::new(x, 0.0));
    let mut clusters = Vec::with_capacity(groups.len());
    let mut jcols: Vec<CMatrix> = Vec::with_capacity(groups.len());
    let mut defective = false;
    for (value, mult) in &groups {
        let shifted = &mc - CMatrix::identity(n, n) * *value;
        let (vecs, worst) = smallest_right_vectors(&shifted, *mult);
        let geometric = if worst <= null_tol {
            *mult
        } else {
            // count how many of the smallest singular values are below the cutoff
            let (_, w1) = smallest_right_vectors(&shifted, 1);
            if w1 <= null_tol {
                let mut g = 1;
                while g < *mult {
                    let (_, wg) = smallest_right_vectors(&shifted, g + 1);
                    if wg > null_tol {
                        break;
                    }
                    g += 1;
                }
                g
            } else {
                0
            }
        };
        if geometric < *mult {
            defective = true;
        }
        clusters.push(EigenCluster {
            value: *value,
            multiplicity: *mult,
            geometric,
        });
        jcols.push(vecs);
    }

    let mut j = CMatrix::zeros(n, n);
    let mut col = 0;
    for block in &jcols {
        j.view_mut((0, col), (n, block.ncols())).copy_from(block);
        col += block.ncols();
    }
    let eigvec_condition = if defective || n == 0 {
        if n == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        let sv = svd(&j).s;
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        }
    };
    let diagonalizable = !defective && eigvec_condition <= tol.diag;

    let factors = if diagonalizable && real_spectrum {
        // Real eigenvalues give real nullspaces; redo the basis in real arithmetic.
        let mut jr = Matrix::zeros(n, n);
        let mut lam = Vector::zeros(n);
        let mut col = 0;
        for c in &clusters {
            let shifted = m - Matrix::identity(n, n) * c.value.re;
            let shifted_c: CMatrix = shifted.map(|x| Complex64::new(x, 0.0));
            let (vecs, _) = smallest_right_vectors(&shifted_c, c.multiplicity);
            let real_vecs = realify(&vecs);
            jr.view_mut((0, col), (n, c.multiplicity)).copy_from(&real_vecs);
            for k in 0..c.multiplicity {
                lam[col + k] = c.value.re;
            }
            col += c.multiplicity;
        }
        Some((jr, lam))
    } else {
        None
    };

    SpectrumReport {
        eigenvalues: eigs,
        clusters,
        real_spectrum,
        diagonalizable,
        eigvec_condition,
        factors,
    }
}

/// Turns a complex basis of a real invariant subspace into a real orthonormal basis.
fn realify(vecs: &CMatrix) -> Matrix {
    let n = vecs.nrows();
    let k = vecs.ncols();
    let mut stacked = Matrix::zeros(n, 2 * k);
    for j in 0..k {
        for i in 0..n {
            stacked[(i, j)] = vecs[(i, j)].re;
            stacked[(i, k + j)] = vecs[(i, j)].im;
        }
    }
    svd(&stacked).u.columns(0, k).into_owned()
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s = svd(m).s;
    s.truncate(m.nrows().min(m.ncols()));
    s
}

/// Numerical rank with singular values below `rel * sigma_max` treated as zero.
pub fn rank(m: &Matrix, rel: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel * smax).count()
}

/// Orthonormal basis of the nullspace, as columns.
pub fn nullspace(m: &Matrix, rel: f64) -> Matrix {
    let d = svd(m);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let kept: Vec<usize> = (0..d.s.len()).filter(|&i| d.s[i] <= rel * smax).collect();
    Matrix::from_fn(m.ncols(), kept.len(), |i, j| d.v[(i, kept[j])])
}

/// Minimum-norm least-squares solution of `a x = b` by truncated SVD.
/// Returns the solution and whether `a` had full column rank.
pub fn min_norm_solve(a: &Matrix, b: &Vector, rel: f64) -> (Vector, bool) {
    let d = svd(a);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let mut x = Vector::zeros(a.ncols());
    let mut full = a.nrows() >= a.ncols();
    for (i, &sv) in d.s.iter().enumerate() {
        if sv <= rel * smax || sv == 0.0 {
            full = false;
            continue;
        }
        x += d.v.column(i) * (d.u.column(i).dot(b) / sv);
    }
    (x, full)
}

/// Moore-Penrose pseudo-inverse with relative cutoff.
pub fn pinv(a: &Matrix, rel: f64) -> Matrix {
    let d = svd(a);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    for (i, &sv) in d.s.iter().enumerate() {
        if sv > rel * smax && sv > 0.0 {
            out += d.v.column(i) * d.u.column(i).transpose() / sv;
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = sym_eigen(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    ev
}

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn sym_extremes(m: &Matrix) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    (ev.first().copied().unwrap_or(0.0), ev.last().copied().unwrap_or(0.0))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).norm()
}

/// Symmetric square root of a symmetric PSD matrix (negative dust clamped).
pub fn sym_sqrt(m: &Matrix) -> Matrix {
    let eig = sym_eigen(m);
    let d = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Spectral norm.
pub fn norm2(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// 2-norm condition number; infinite when singular.
pub fn cond2(m: &Matrix) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Roots of `z^2 - t z + d` (the characteristic polynomial of a 2x2 companion block).
pub fn quadratic_roots(t: f64, d: f64) -> [Complex64; 2] {
    let mut disc = t * t - 4.0 * d;
    // within rounding of a double root
    if disc.abs() <= 8.0 * f64::EPSILON * (t * t).max(4.0 * d.abs()) {
        disc = 0.0;
    }
    if disc >= 0.0 {
        let s = disc.sqrt();
        // avoid cancellation
        let q = if t >= 0.0 { 0.5 * (t + s) } else { 0.5 * (t - s) };
        let r1 = q;
        let r2 = if q != 0.0 { d / q } else { 0.5 * (t - s) };
        [Complex64::new(r1, 0.0), Complex64::new(r2, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(0.5 * t, 0.5 * s), Complex64::new(0.5 * t, -0.5 * s)]
    }
}

/// JSON layout `{"rows": n, "cols": m, "data": [row-major]}` for matrices.
pub mod serde_matrix {
    use super::Matrix;
    use alloc::vec::Vec;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn to_repr_parts(m: &Matrix) -> (usize, usize, Vec<f64>) {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        (m.nrows(), m.ncols(), data)
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let (rows, cols, data) = to_repr_parts(m);
        Repr { rows, cols, data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.rows * r.cols != r.data.len() {
            return Err(D::Error::custom("matrix data length does not match rows*cols"));
        }
        Ok(Matrix::from_row_slice(r.rows, r.cols, &r.data))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
            match m {
                Some(m) => {
                    let (rows, cols, data) = to_repr_parts(m);
                    s.serialize_some(&Repr { rows, cols, data })
                }
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
            match Option::<Repr>::deserialize(d)? {
                Some(r) => {
                    if r.rows * r.cols != r.data.len() {
                        return Err(D::Error::custom("matrix data length does not match rows*cols"));
                    }
                    Ok(Some(Matrix::from_row_slice(r.rows, r.cols, &r.data)))
                }
                None => Ok(None),
            }
        }
    }
}

/// Vectors as plain JSON arrays.
pub mod serde_vector {
    use super::Vector;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(Vector::from_vec(data))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<Vector>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => s.serialize_some(v.as_slice()),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vector>, D::Error> {
            Ok(Option::<Vec<f64>>::deserialize(d)?.map(Vector::from_vec))
        }
    }
}
