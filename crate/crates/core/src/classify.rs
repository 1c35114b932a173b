//! Membership tests for gradient-type (class O) and primal-dual-type (class S)
//! systems, and the reverse-engineering constructions.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, Matrix, SpectrumReport, Tolerances, Vector};
use crate::model::{
    self, FunctionClassParams, LtiSystem, PartitionedLtiSystem, QuadraticObjective, SaddleProblem,
    Stability,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    EmptyFixedPointSet,
    Unstable,
    ComplexSpectrum,
    NotDiagonalizable,
    ComplexBlockSpectrum,
    PositiveBlockEigenvalue,
    BlockNotDiagonalizable,
    CouplingInfeasible,
    DualBlockNotIdentity,
    NoPartition,
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReasonCode::EmptyFixedPointSet => "empty fixed-point set",
            ReasonCode::Unstable => "unstable",
            ReasonCode::ComplexSpectrum => "complex spectrum",
            ReasonCode::NotDiagonalizable => "not diagonalizable",
            ReasonCode::ComplexBlockSpectrum => "complex block spectrum",
            ReasonCode::PositiveBlockEigenvalue => "positive block eigenvalue",
            ReasonCode::BlockNotDiagonalizable => "block not diagonalizable",
            ReasonCode::CouplingInfeasible => "coupling equation infeasible",
            ReasonCode::DualBlockNotIdentity => "A11 is not the identity",
            ReasonCode::NoPartition => "no partition supplied",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOVerdict {
    pub member: bool,
    /// Failed conditions in checking order; the first one is the primary reason.
    pub reasons: Vec<ReasonCode>,
    pub stability: Stability,
    /// Whether the fixed point is unique (only meaningful when one exists).
    pub unique_fixed_point: bool,
}

/// Negative definite `(V1, V2)` solving the coupling equation, with the eigen
/// factors they were built against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingWitness {
    #[serde(with = "serde_matrix")]
    pub v1: Matrix,
    #[serde(with = "serde_matrix")]
    pub v2: Matrix,
    #[serde(with = "serde_matrix")]
    pub j1: Matrix,
    #[serde(with = "serde_matrix")]
    pub j2: Matrix,
    #[serde(with = "crate::linalg::serde_vector")]
    pub lambda1: Vector,
    #[serde(with = "crate::linalg::serde_vector")]
    pub lambda2: Vector,
    /// Frobenius norm of `J1^-T V1 J1^-1 A12 + A21^T J2^-T V2 J2^-1`.
    pub coupling_residual: f64,
    /// `||V1 L1 - L1 V1|| + ||V2 L2 - L2 V2||`.
    pub commutation_residual: f64,
    pub v1_max_eig: f64,
    pub v2_max_eig: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSVerdict {
    pub member: bool,
    pub reasons: Vec<ReasonCode>,
    pub n1: usize,
    pub n2: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<CouplingWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVerdict {
    pub class_o: ClassOVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_s: Option<ClassSVerdict>,
}

pub fn classify(sys: &LtiSystem, partition: Option<usize>, tol: &Tolerances) -> ClassVerdict {
    let class_o = classify_o(sys, tol);
    let class_s = partition.map(|n1| match PartitionedLtiSystem::new(sys.clone(), n1) {
        Ok(p) => classify_s(&p, tol),
        Err(_) => ClassSVerdict {
            member: false,
            reasons: vec![ReasonCode::NoPartition],
            n1,
            n2: sys.dim().saturating_sub(n1),
            witness: None,
        },
    });
    ClassVerdict { class_o, class_s }
}

fn identity_minus(a: &Matrix) -> Matrix {
    Matrix::identity(a.nrows(), a.ncols()) - a
}

/// Checks, in order: nonempty fixed-point set, stability, real spectrum of
/// `I - A`, diagonalizability of `I - A`.
pub fn classify_o(sys: &LtiSystem, tol: &Tolerances) -> ClassOVerdict {
    let mut reasons = Vec::new();
    let unique_fixed_point = match model::fixed_point(sys, tol) {
        Ok(fp) => fp.unique,
        Err(_) => {
            reasons.push(ReasonCode::EmptyFixedPointSet);
            false
        }
    };
    let stability = model::stability_verdict(sys, tol);
    if stability == Stability::Unstable {
        reasons.push(ReasonCode::Unstable);
    }
    let rep = linalg::spectrum(&identity_minus(sys.a()), tol);
    if !rep.real_spectrum {
        reasons.push(ReasonCode::ComplexSpectrum);
    }
    if !rep.diagonalizable {
        reasons.push(ReasonCode::NotDiagonalizable);
    }
    ClassOVerdict {
        member: reasons.is_empty(),
        reasons,
        stability,
        unique_fixed_point,
    }
}

/// Recovers `(P, Q, r)` with `x - P (Q x + r) = A x + C w`, using `P = J J'`
/// and `Q = J^-T Lambda J^-1` from `I - A = J Lambda J^-1`.
pub fn reverse_engineer_o(sys: &LtiSystem, tol: &Tolerances) -> Result<QuadraticObjective> {
    let verdict = classify_o(sys, tol);
    if let Some(&reason) = verdict.reasons.first() {
        return Err(Error::NotInClass { class: 'O', reason });
    }
    let rep = linalg::spectrum(&identity_minus(sys.a()), tol);
    let (j, lam) = rep.factors.ok_or(Error::NotInClass {
        class: 'O',
        reason: ReasonCode::NotDiagonalizable,
    })?;
    let j_inv = j.clone().try_inverse().ok_or(Error::NotInClass {
        class: 'O',
        reason: ReasonCode::NotDiagonalizable,
    })?;
    let p = linalg::symmetrize(&(&j * j.transpose()));
    let q = linalg::symmetrize(&(j_inv.transpose() * Matrix::from_diagonal(&lam) * &j_inv));
    // -P r = C w
    let cw = sys.cw();
    let r = -(&j_inv.transpose() * (&j_inv * &cw));
    let obj = QuadraticObjective {
        q,
        r,
        p,
        eps_nominal: 1.0,
    };
    let n = sys.dim();
    let recon = ((Matrix::identity(n, n) - &obj.p * &obj.q) - sys.a()).norm();
    if recon > tol.recon * sys.a().norm().max(1.0) {
        return Err(Error::Degenerate { residual: recon });
    }
    Ok(obj)
}

fn block_reasons(rep: &SpectrumReport, tol: &Tolerances, reasons: &mut Vec<ReasonCode>) {
    if !rep.real_spectrum {
        reasons.push(ReasonCode::ComplexBlockSpectrum);
    } else if rep
        .eigenvalues
        .iter()
        .any(|z| z.re > tol.real * (1.0 + z.norm()))
    {
        reasons.push(ReasonCode::PositiveBlockEigenvalue);
    }
    if !rep.diagonalizable && !reasons.contains(&ReasonCode::BlockNotDiagonalizable) {
        reasons.push(ReasonCode::BlockNotDiagonalizable);
    }
}

/// Class-S test: stability, non-positive real diagonalizable spectra of
/// `A11 - I` and `A22 - I`, and a negative definite solution of the coupling equation.
pub fn classify_s(sys: &PartitionedLtiSystem, tol: &Tolerances) -> ClassSVerdict {
    let (n1, n2) = (sys.n1, sys.n2());
    let mut reasons = Vec::new();
    if model::fixed_point(&sys.base, tol).is_err() {
        reasons.push(ReasonCode::EmptyFixedPointSet);
    }
    if model::stability_verdict(&sys.base, tol) == Stability::Unstable {
        reasons.push(ReasonCode::Unstable);
    }
    let rep1 = linalg::spectrum(&(sys.a11() - Matrix::identity(n1, n1)), tol);
    let rep2 = linalg::spectrum(&(sys.a22() - Matrix::identity(n2, n2)), tol);
    block_reasons(&rep1, tol, &mut reasons);
    block_reasons(&rep2, tol, &mut reasons);

    let mut witness = None;
    if let (Some(f1), Some(f2)) = (&rep1.factors, &rep2.factors) {
        witness = coupling_witness(sys, (f1, &rep1), (f2, &rep2), tol);
        if witness.is_none() {
            reasons.push(ReasonCode::CouplingInfeasible);
        }
    }
    ClassSVerdict {
        member: reasons.is_empty(),
        reasons,
        n1,
        n2,
        witness,
    }
}

/// Symmetric blocks of `V1` and `V2`: `(which, offset, size)`.
struct BlockLayout {
    blocks: Vec<(usize, usize, usize)>,
    dims: [usize; 2],
}

impl BlockLayout {
    fn new(r1: &SpectrumReport, r2: &SpectrumReport) -> Self {
        let mut blocks = Vec::new();
        for (which, rep) in [r1, r2].into_iter().enumerate() {
            for (off, size) in rep.cluster_ranges() {
                blocks.push((which, off, size));
            }
        }
        let dims = [r1.eigenvalues.len(), r2.eigenvalues.len()];
        BlockLayout { blocks, dims }
    }

    fn params(&self) -> usize {
        self.blocks.iter().map(|&(_, _, s)| s * (s + 1) / 2).sum()
    }

    /// Parameter vector to `(V1, V2)`; off-diagonal entries carry a `1/sqrt 2`
    /// weight so the parametrization is an isometry for the Frobenius norm.
    fn assemble(&self, p: &Vector) -> [Matrix; 2] {
        let mut v = [
            Matrix::zeros(self.dims[0], self.dims[0]),
            Matrix::zeros(self.dims[1], self.dims[1]),
        ];
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let mut idx = 0;
        for &(which, off, size) in &self.blocks {
            for i in 0..size {
                for j in i..size {
                    if i == j {
                        v[which][(off + i, off + i)] = p[idx];
                    } else {
                        v[which][(off + i, off + j)] = p[idx] * h;
                        v[which][(off + j, off + i)] = p[idx] * h;
                    }
                    idx += 1;
                }
            }
        }
        v
    }

    fn flatten(&self, v: &[Matrix; 2]) -> Vector {
        let mut p = Vector::zeros(self.params());
        let s2 = core::f64::consts::SQRT_2;
        let mut idx = 0;
        for &(which, off, size) in &self.blocks {
            for i in 0..size {
                for j in i..size {
                    p[idx] = if i == j {
                        v[which][(off + i, off + i)]
                    } else {
                        0.5 * (v[which][(off + i, off + j)] + v[which][(off + j, off + i)]) * s2
                    };
                    idx += 1;
                }
            }
        }
        p
    }

    /// Replaces every block by its projection onto `{V <= -I}`.
    fn clip(&self, v: &mut [Matrix; 2]) {
        for &(which, off, size) in &self.blocks {
            let block = v[which].view((off, off), (size, size)).into_owned();
            let eig = linalg::sym_eigen(&block);
            let d = eig.eigenvalues.map(|x| x.min(-1.0));
            let clipped = &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose();
            v[which].view_mut((off, off), (size, size)).copy_from(&clipped);
        }
    }
}

fn coupling_map(v: &[Matrix; 2], k1: &Matrix, k2: &Matrix, a12: &Matrix, a21: &Matrix) -> Matrix {
    // W_i = J_i^-T V_i J_i^-1
    let w1 = k1.transpose() * &v[0] * k1;
    let w2 = k2.transpose() * &v[1] * k2;
    w1 * a12 + a21.transpose() * w2
}

fn coupling_witness(
    sys: &PartitionedLtiSystem,
    (f1, r1): (&(Matrix, Vector), &SpectrumReport),
    (f2, r2): (&(Matrix, Vector), &SpectrumReport),
    tol: &Tolerances,
) -> Option<CouplingWitness> {
    let (j1, l1) = f1;
    let (j2, l2) = f2;
    let k1 = j1.clone().try_inverse()?;
    let k2 = j2.clone().try_inverse()?;
    let a12 = sys.a12();
    let a21 = sys.a21();
    let layout = BlockLayout::new(r1, r2);
    let np = layout.params();

    // Linear map from parameters to the vectorized coupling residual.
    let rows = sys.n1 * sys.n2();
    let mut g = Matrix::zeros(rows, np);
    for k in 0..np {
        let mut e = Vector::zeros(np);
        e[k] = 1.0;
        let out = coupling_map(&layout.assemble(&e), &k1, &k2, &a12, &a21);
        g.column_mut(k).copy_from_slice(out.as_slice());
    }
    let null = linalg::nullspace(&g, 1e-10);
    if null.ncols() == 0 {
        return None;
    }
    let project = |p: &Vector| -> Vector { &null * (null.transpose() * p) };

    let neg_ident = [
        -Matrix::identity(layout.dims[0], layout.dims[0]),
        -Matrix::identity(layout.dims[1], layout.dims[1]),
    ];
    let margin_ok = |v: &[Matrix; 2]| {
        v.iter().all(|vi| {
            let (_, hi) = linalg::sym_extremes(vi);
            hi <= -1e-6 * vi.norm() && hi <= -1e-10
        })
    };

    let mut candidates: Vec<Vector> = Vec::new();
    // One side fixed at -I, the other solved in least squares.
    let n1_params: usize = layout
        .blocks
        .iter()
        .filter(|b| b.0 == 0)
        .map(|&(_, _, s)| s * (s + 1) / 2)
        .sum();
    let p_ident = layout.flatten(&neg_ident);
    for fixed_side in [1usize, 0] {
        let (free_lo, free_len) = if fixed_side == 1 {
            (0, n1_params)
        } else {
            (n1_params, np - n1_params)
        };
        let mut fixed = p_ident.clone();
        fixed.rows_mut(free_lo, free_len).fill(0.0);
        let rhs = -(&g * &fixed);
        let g_free = g.columns(free_lo, free_len).into_owned();
        let (sol, _) = linalg::min_norm_solve(&g_free, &rhs, 1e-12);
        let mut p = fixed;
        p.rows_mut(free_lo, free_len).copy_from(&sol);
        candidates.push(p);
    }

    let mut found: Option<[Matrix; 2]> = None;
    for p in &candidates {
        let p = project(p);
        let v = layout.assemble(&p);
        if margin_ok(&v) {
            found = Some(v);
            break;
        }
    }
    if found.is_none() {
        // alternating projections between null(G) and {V <= -I}
        let mut p = project(&p_ident);
        for _ in 0..2000 {
            let v = layout.assemble(&p);
            if margin_ok(&v) {
                found = Some(v);
                break;
            }
            let mut clipped = v;
            layout.clip(&mut clipped);
            p = project(&layout.flatten(&clipped));
        }
    }

    let mut v = found?;
    let scale = v[0].norm().max(v[1].norm());
    if scale > 0.0 {
        v[0] /= scale;
        v[1] /= scale;
    }
    let resid = coupling_map(&v, &k1, &k2, &a12, &a21).norm();
    let w_scale = (k1.norm().powi(2) * a12.norm() + a21.norm() * k2.norm().powi(2)).max(1.0);
    if resid > tol.feas * w_scale {
        return None;
    }
    let d1 = Matrix::from_diagonal(l1);
    let d2 = Matrix::from_diagonal(l2);
    let commutation = (&v[0] * &d1 - &d1 * &v[0]).norm() + (&v[1] * &d2 - &d2 * &v[1]).norm();
    let v1_max_eig = linalg::sym_extremes(&v[0]).1;
    let v2_max_eig = linalg::sym_extremes(&v[1]).1;
    let [v1, v2] = v;
    Some(CouplingWitness {
        v1,
        v2,
        j1: j1.clone(),
        j2: j2.clone(),
        lambda1: l1.clone(),
        lambda2: l2.clone(),
        coupling_residual: resid,
        commutation_residual: commutation,
        v1_max_eig,
        v2_max_eig,
    })
}

/// Step sizes assumed when reading a saddle problem off a class-S system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleSteps {
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for SaddleSteps {
    fn default() -> Self {
        SaddleSteps { eps1: 1.0, eps2: 1.0 }
    }
}

/// Reads the primal-dual pattern `lambda += eps2 S (B x - b)`,
/// `x -= eps1 (Q x + r + B' lambda)` off a class-S system with `A11 = I`.
///
/// `B` comes from the primal row; the dual row then fixes a symmetric positive
/// definite preconditioner `S` (identity for plain primal-dual systems).
pub fn reverse_engineer_s(
    sys: &PartitionedLtiSystem,
    steps: SaddleSteps,
    tol: &Tolerances,
) -> Result<SaddleProblem> {
    let (m, n) = (sys.n1, sys.n2());
    let a11 = sys.a11();
    if (&a11 - Matrix::identity(m, m)).norm() > tol.recon {
        return Err(Error::NotInClass {
            class: 'S',
            reason: ReasonCode::DualBlockNotIdentity,
        });
    }
    let verdict = classify_s(sys, tol);
    if let Some(&reason) = verdict.reasons.first() {
        return Err(Error::NotInClass { class: 'S', reason });
    }
    let SaddleSteps { eps1, eps2 } = steps;
    if !(eps1 > 0.0 && eps2 > 0.0) {
        return Err(Error::InvalidCoefficient(alloc::format!(
            "step sizes must be positive (eps1 = {eps1}, eps2 = {eps2})"
        )));
    }
    let (cw1, cw2) = sys.cw_blocks();
    let b_mat = sys.a21().transpose() * (-1.0 / eps1);
    let q_raw = (Matrix::identity(n, n) - sys.a22()) / eps1;
    let asym = linalg::asymmetry(&q_raw);
    if asym > tol.recon * q_raw.norm().max(1.0) {
        return Err(Error::InconsistentScaling { residual: asym });
    }
    let q = linalg::symmetrize(&q_raw);
    let r = cw2 * (-1.0 / eps1);

    let s = solve_dual_metric(&sys.a12(), &(&b_mat * eps2), tol)?;
    let s_inv = s.clone().try_inverse().ok_or(Error::InconsistentScaling {
        residual: f64::INFINITY,
    })?;
    let b = -(&s_inv * cw1) / eps2;
    let mut prob = SaddleProblem::new(q, r, b_mat, b, eps1, eps2)?;
    if (&s - Matrix::identity(m, m)).norm() > tol.recon {
        prob.dual_metric = Some(s);
    }
    Ok(prob)
}

/// Symmetric positive definite `S` with `S * eb = a12` in least squares.
fn solve_dual_metric(a12: &Matrix, eb: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    let m = a12.nrows();
    let n = a12.ncols();
    let np = m * (m + 1) / 2;
    let mut g = Matrix::zeros(m * n, np);
    let mut idx = 0;
    for i in 0..m {
        for j in i..m {
            let mut e = Matrix::zeros(m, m);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let out = e * eb;
            g.column_mut(idx).copy_from_slice(out.as_slice());
            idx += 1;
        }
    }
    let rhs = Vector::from_column_slice(a12.as_slice());
    let (sol, _) = linalg::min_norm_solve(&g, &rhs, 1e-13);
    let mut s = Matrix::zeros(m, m);
    let mut idx = 0;
    for i in 0..m {
        for j in i..m {
            s[(i, j)] = sol[idx];
            s[(j, i)] = sol[idx];
            idx += 1;
        }
    }
    let residual = (&s * eb - a12).norm();
    let (lo, _) = linalg::sym_extremes(&s);
    if residual > tol.recon * a12.norm().max(1.0) || lo <= 0.0 {
        return Err(Error::InconsistentScaling { residual });
    }
    Ok(s)
}

/// `mu = max(0, lambda_min(H))`, `L = lambda_max(H)`.
///
/// `mu` is snapped to zero when it is below `tol.psd * L`.
pub fn extract_params(hessian: &Matrix, tol: &Tolerances) -> Result<FunctionClassParams> {
    let (lo, hi) = linalg::sym_extremes(hessian);
    if !(hi > 0.0) {
        return Err(Error::DegenerateObjective("largest Hessian eigenvalue is not positive"));
    }
    let mu = if lo <= tol.psd * hi { 0.0 } else { lo };
    FunctionClassParams::new(mu, hi)
}

/// Parameters of a reverse-engineered class-O objective, taken in the
/// coordinates where the metric is the identity (spectrum of `I - A`).
pub fn extract_params_o(obj: &QuadraticObjective, tol: &Tolerances) -> Result<FunctionClassParams> {
    extract_params(&obj.scaled_hessian(), tol)
}

pub fn extract_params_s(prob: &SaddleProblem, tol: &Tolerances) -> Result<FunctionClassParams> {
    extract_params(&prob.q, tol)
}
