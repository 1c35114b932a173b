//! System and problem data types, fixed points and stability.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, serde_vector, Matrix, Tolerances, Vector};

/// `x_{k+1} = A x_k + C w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiSystem {
    #[serde(with = "serde_matrix")]
    a: Matrix,
    #[serde(with = "serde_matrix")]
    c: Matrix,
    #[serde(with = "serde_vector")]
    w: Vector,
}

impl LtiSystem {
    pub fn new(a: Matrix, c: Matrix, w: Vector) -> Result<Self> {
        let sys = LtiSystem { a, c, w };
        sys.validate()?;
        Ok(sys)
    }

    /// System with `C = I` and `w` equal to the given offset.
    pub fn with_offset(a: Matrix, offset: Vector) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, Matrix::identity(n, n), offset)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_square() {
            return Err(Error::dim(format!(
                "A is {}x{}, expected square",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.c.nrows() != self.a.nrows() {
            return Err(Error::dim(format!(
                "C has {} rows, A has dimension {}",
                self.c.nrows(),
                self.a.nrows()
            )));
        }
        if self.w.len() != self.c.ncols() {
            return Err(Error::dim(format!(
                "w has length {}, C has {} columns",
                self.w.len(),
                self.c.ncols()
            )));
        }
        if self.a.nrows() == 0 {
            return Err(Error::dim("empty state"));
        }
        if !linalg::all_finite(&self.a) {
            return Err(Error::NonFinite("A"));
        }
        if !linalg::all_finite(&self.c) {
            return Err(Error::NonFinite("C"));
        }
        if !self.w.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("w"));
        }
        Ok(())
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn cw(&self) -> Vector {
        &self.c * &self.w
    }

    /// Same dynamics with a different exogenous input.
    pub fn with_input(&self, w: Vector) -> Result<Self> {
        Self::new(self.a.clone(), self.c.clone(), w)
    }

    pub fn step(&self, x: &Vector) -> Vector {
        &self.a * x + &self.c * &self.w
    }
}

/// An [`LtiSystem`] with its state split as `(x^(1), x^(2))`, `x^(1)` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionedLtiSystem {
    pub base: LtiSystem,
    pub n1: usize,
}

impl PartitionedLtiSystem {
    pub fn new(base: LtiSystem, n1: usize) -> Result<Self> {
        if n1 == 0 || n1 >= base.dim() {
            return Err(Error::dim(format!(
                "partition n1 = {} must lie in 1..{}",
                n1,
                base.dim()
            )));
        }
        Ok(PartitionedLtiSystem { base, n1 })
    }

    pub fn n2(&self) -> usize {
        self.base.dim() - self.n1
    }

    pub fn a11(&self) -> Matrix {
        self.base.a.view((0, 0), (self.n1, self.n1)).into_owned()
    }

    pub fn a12(&self) -> Matrix {
        self.base.a.view((0, self.n1), (self.n1, self.n2())).into_owned()
    }

    pub fn a21(&self) -> Matrix {
        self.base.a.view((self.n1, 0), (self.n2(), self.n1)).into_owned()
    }

    pub fn a22(&self) -> Matrix {
        self.base.a.view((self.n1, self.n1), (self.n2(), self.n2())).into_owned()
    }

    /// `(Cw)` split into the two blocks.
    pub fn cw_blocks(&self) -> (Vector, Vector) {
        let cw = self.base.cw();
        (
            cw.rows(0, self.n1).into_owned(),
            cw.rows(self.n1, self.n2()).into_owned(),
        )
    }
}

/// Reverse-engineered unconstrained objective `f = 1/2 x'Qx + x'r` with metric `P`.
///
/// The source system is the gradient step `x - P (Q x + r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticObjective {
    #[serde(with = "serde_matrix")]
    pub q: Matrix,
    #[serde(with = "serde_vector")]
    pub r: Vector,
    #[serde(with = "serde_matrix")]
    pub p: Matrix,
    pub eps_nominal: f64,
}

impl QuadraticObjective {
    /// Objective with identity metric.
    pub fn euclidean(q: Matrix, r: Vector) -> Self {
        let n = q.nrows();
        QuadraticObjective {
            q,
            r,
            p: Matrix::identity(n, n),
            eps_nominal: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + x.dot(&self.r)
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.q * x + &self.r
    }

    /// Hessian in the coordinates where the metric is the identity: `P^1/2 Q P^1/2`.
    /// Its spectrum equals that of `P Q = I - A`.
    pub fn scaled_hessian(&self) -> Matrix {
        let s = linalg::sym_sqrt(&self.p);
        linalg::symmetrize(&(&s * &self.q * &s))
    }

    /// Norm in the metric-free coordinates, `sqrt(v' P^-1 v)`.
    pub fn metric_norm(&self, v: &Vector) -> f64 {
        if self.p == Matrix::identity(self.dim(), self.dim()) {
            return v.norm();
        }
        let pinv = self
            .p
            .clone()
            .cholesky()
            .map(|c| c.solve(v))
            .unwrap_or_else(|| linalg::pinv(&self.p, 1e-14) * v);
        v.dot(&pinv).max(0.0).sqrt()
    }

    /// Minimizer closest (in the metric) to `x0`.
    pub fn closest_minimizer(&self, x0: &Vector) -> Vector {
        // x* = x0 - (PQ)^+ P (Q x0 + r) restricted to the stationary set
        let g = self.gradient(x0);
        let (d, _) = linalg::min_norm_solve(&self.q, &g, 1e-10);
        x0 - d
    }

    /// The one-step map this objective reproduces: `x - eps P (Q x + r)`.
    pub fn gd_step(&self, x: &Vector, eps: f64) -> Vector {
        x - &self.p * self.gradient(x) * eps
    }
}

/// `max_lambda min_x f(x) + lambda'(Bx - b)` with quadratic `f = 1/2 x'Qx + r'x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleProblem {
    /// Hessian of `f` (the `Q22` block).
    #[serde(with = "serde_matrix")]
    pub q: Matrix,
    #[serde(with = "serde_vector")]
    pub r: Vector,
    /// Constraint matrix `B` (m x n).
    #[serde(with = "serde_matrix")]
    pub b_mat: Matrix,
    #[serde(with = "serde_vector")]
    pub b: Vector,
    pub eps1: f64,
    pub eps2: f64,
    /// Symmetric positive definite dual preconditioner `S` in `lambda += eps2 S (Bx - b)`.
    /// `None` means identity (plain primal-dual gradient).
    #[serde(with = "serde_matrix::option", default, skip_serializing_if = "Option::is_none")]
    pub dual_metric: Option<Matrix>,
}

impl SaddleProblem {
    pub fn new(q: Matrix, r: Vector, b_mat: Matrix, b: Vector, eps1: f64, eps2: f64) -> Result<Self> {
        let n = q.nrows();
        if !q.is_square() || r.len() != n || b_mat.ncols() != n || b.len() != b_mat.nrows() {
            return Err(Error::dim(format!(
                "saddle data: Q {}x{}, r {}, B {}x{}, b {}",
                q.nrows(),
                q.ncols(),
                r.len(),
                b_mat.nrows(),
                b_mat.ncols(),
                b.len()
            )));
        }
        if !(eps1 > 0.0 && eps2 > 0.0) {
            return Err(Error::InvalidCoefficient(format!(
                "step sizes must be positive (eps1 = {eps1}, eps2 = {eps2})"
            )));
        }
        Ok(SaddleProblem {
            q,
            r,
            b_mat,
            b,
            eps1,
            eps2,
            dual_metric: None,
        })
    }

    pub fn primal_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn dual_dim(&self) -> usize {
        self.b_mat.nrows()
    }

    pub fn objective(&self) -> QuadraticObjective {
        QuadraticObjective::euclidean(self.q.clone(), self.r.clone())
    }

    /// `(sigma_min, sigma_max)` of `B` over its `m` singular values.
    pub fn constraint_sigmas(&self) -> (f64, f64) {
        let sv = linalg::singular_values(&self.b_mat);
        let smax = sv.first().copied().unwrap_or(0.0);
        let smin = if sv.len() < self.dual_dim() {
            0.0
        } else {
            sv.last().copied().unwrap_or(0.0)
        };
        (smin, smax)
    }

    pub fn assert_full_row_rank(&self, tol: &Tolerances) -> Result<()> {
        let m = self.dual_dim();
        let rank = linalg::rank(&self.b_mat, tol.rank);
        if rank < m {
            return Err(Error::RankDeficient { rank, rows: m });
        }
        Ok(())
    }

    /// `grad f*(-B' lambda)`: the minimizer of `f(x) + lambda' B x`.
    pub fn dual_minimizer(&self, lambda: &Vector) -> Result<Vector> {
        let rhs = -(&self.r + self.b_mat.transpose() * lambda);
        let chol = self.q.clone().cholesky().ok_or(Error::SingularHessian)?;
        Ok(chol.solve(&rhs))
    }

    /// Saddle point `(x*, lambda*)` from the KKT system. The flag is false when the
    /// KKT matrix was singular and a minimum-norm solution was used.
    pub fn kkt_solve(&self) -> (Vector, Vector, bool) {
        let n = self.primal_dim();
        let m = self.dual_dim();
        let mut k = Matrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&self.q);
        k.view_mut((0, n), (n, m)).copy_from(&self.b_mat.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(&self.b_mat);
        let mut rhs = Vector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&self.r));
        rhs.rows_mut(n, m).copy_from(&self.b);
        let (sol, unique) = match k.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) && linalg::cond2(&k) < 1e14 => (s, true),
            _ => linalg::min_norm_solve(&k, &rhs, 1e-12),
        };
        (
            sol.rows(0, n).into_owned(),
            sol.rows(n, m).into_owned(),
            unique,
        )
    }

    /// The primal-dual gradient iteration as a partitioned LTI system with state `(lambda, x)`.
    pub fn to_system(&self) -> PartitionedLtiSystem {
        let n = self.primal_dim();
        let m = self.dual_dim();
        let s = self
            .dual_metric
            .clone()
            .unwrap_or_else(|| Matrix::identity(m, m));
        let mut a = Matrix::identity(n + m, n + m);
        a.view_mut((0, m), (m, n)).copy_from(&(&s * &self.b_mat * self.eps2));
        a.view_mut((m, 0), (n, m))
            .copy_from(&(self.b_mat.transpose() * (-self.eps1)));
        a.view_mut((m, m), (n, n))
            .copy_from(&(Matrix::identity(n, n) - &self.q * self.eps1));
        let mut offset = Vector::zeros(n + m);
        offset.rows_mut(0, m).copy_from(&(&s * &self.b * (-self.eps2)));
        offset.rows_mut(m, n).copy_from(&(&self.r * (-self.eps1)));
        let base = LtiSystem::with_offset(a, offset).expect("consistent dimensions");
        PartitionedLtiSystem { base, n1: m }
    }
}

/// Strong convexity and smoothness constants of an objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClassParams {
    pub mu: f64,
    pub l_lip: f64,
    /// `l_lip / mu`, or infinity when `mu = 0`.
    pub kappa: f64,
}

impl FunctionClassParams {
    pub fn new(mu: f64, l_lip: f64) -> Result<Self> {
        if !(mu >= 0.0 && l_lip > 0.0 && mu <= l_lip * (1.0 + 1e-12)) {
            return Err(Error::InvalidCoefficient(format!(
                "need 0 <= mu <= L with L > 0 (mu = {mu}, L = {l_lip})"
            )));
        }
        let mu = mu.min(l_lip);
        let kappa = if mu > 0.0 { l_lip / mu } else { f64::INFINITY };
        Ok(FunctionClassParams { mu, l_lip, kappa })
    }

    pub fn strongly_convex(&self) -> bool {
        self.mu > 0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub scenario: String,
    pub redesign: String,
    pub steps: usize,
    /// Size of the leading `x^(1)` block when the state is partitioned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<usize>,
}

/// Recorded rollout. `states[k]` is `x_k`, contiguous from `k = 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub aux: BTreeMap<String, Vec<Vector>>,
    pub meta: TrajectoryMeta,
    /// Step at which the overflow guard stopped the rollout.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn last(&self) -> Option<&Vector> {
        self.states.last()
    }

    /// `x^(2)` block of each state, or the whole state when unpartitioned.
    pub fn primal(&self) -> Vec<Vector> {
        match self.meta.partition {
            Some(n1) => self
                .states
                .iter()
                .map(|x| x.rows(n1, x.len() - n1).into_owned())
                .collect(),
            None => self.states.clone(),
        }
    }

    /// `x^(1)` block of each state; empty when unpartitioned.
    pub fn dual(&self) -> Vec<Vector> {
        match self.meta.partition {
            Some(n1) => self.states.iter().map(|x| x.rows(0, n1).into_owned()).collect(),
            None => Vec::new(),
        }
    }

    pub fn check_invariants(&self) -> bool {
        let n = self.dim();
        self.states.iter().all(|x| x.len() == n)
            && self.aux.values().all(|seq| seq.len() <= self.states.len())
    }
}

/// Minimum-norm solution of `(I - A) x = C w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub x: Vector,
    pub unique: bool,
}

pub fn fixed_point(sys: &LtiSystem, tol: &Tolerances) -> Result<FixedPoint> {
    let n = sys.dim();
    let m = Matrix::identity(n, n) - sys.a();
    let cw = sys.cw();
    let (x, unique) = linalg::min_norm_solve(&m, &cw, tol.rank);
    let residual = (&m * &x - &cw).norm();
    let scale = linalg::norm2(&m).max(1.0);
    if residual > 1e-10 * (1.0 + cw.norm()) * scale {
        return Err(Error::Degenerate { residual });
    }
    Ok(FixedPoint { x, unique })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Asymptotic,
    Marginal,
    Unstable,
}

/// Discrete-time verdict: spectral radius at most one, unit-circle eigenvalues semisimple.
pub fn stability_verdict(sys: &LtiSystem, tol: &Tolerances) -> Stability {
    matrix_stability(sys.a(), tol)
}

pub fn matrix_stability(a: &Matrix, tol: &Tolerances) -> Stability {
    let rep = linalg::spectrum(a, tol);
    let mut on_circle = false;
    for c in &rep.clusters {
        let r = c.value.norm();
        if r > 1.0 + tol.unit {
            return Stability::Unstable;
        }
        if r >= 1.0 - tol.unit {
            if !c.is_semisimple() {
                return Stability::Unstable;
            }
            on_circle = true;
        }
    }
    if on_circle {
        Stability::Marginal
    } else {
        Stability::Asymptotic
    }
}
