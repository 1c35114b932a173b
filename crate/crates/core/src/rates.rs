//! Convergence-rate certificates and the checks that compare them with
//! simulated trajectories.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Tolerances, Vector};
use crate::model::{FunctionClassParams, QuadraticObjective, SaddleProblem, Trajectory};
use crate::redesign::BetaSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// Gradient descent, `f(x_k) - f* <= 2 R^2 / (eps k)`.
    GdSublinear,
    /// Gradient descent, `||x_k - x*|| <= (1 - mu eps)^k R`.
    GdLinear,
    /// Gradient descent at `eps = 2/(mu + L)`, ratio `(L - mu)/(L + mu)`.
    GdOptimal,
    /// Heavy ball, ratio `(sqrt L - sqrt mu)/(sqrt L + sqrt mu)`.
    HeavyBall,
    /// Nesterov with the `(k-1)/(k+2)` schedule, `8 R^2 / (3 eps (k+1)^2)`.
    AgdSublinear,
    /// Nesterov with constant momentum, ratio `1 - sqrt(mu/L)`.
    AgdLinear,
    /// Primal-dual gradient potential decay `V_{k+1} <= c V_k`.
    PdgPotential,
    /// Primal-dual gradient at the balanced step sizes.
    PdgOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    /// `f(x_k) - f* <= coeff ||x_0 - x*||^2 / k`.
    InverseK { coeff: f64 },
    /// `f(x_k) - f* <= coeff ||x_0 - x*||^2 / (k + 1)^2`.
    InverseKSquared { coeff: f64 },
    /// Error (or potential) contracting by `ratio` per step.
    Geometric { ratio: f64 },
}

/// Outcome of comparing a certificate with data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Whether a failure counts against the certificate; informational checks
    /// (pathwise momentum transients) are reported only.
    pub asserted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_step: Option<usize>,
    /// Largest `lhs - rhs` seen (negative when every step has room).
    pub worst_excess: f64,
    pub steps_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub kind: CertificateKind,
    pub constants: BTreeMap<String, f64>,
    pub bound: Bound,
    pub applicability: String,
    /// False when the constants violate a requirement of the bound (e.g. `c >= 1`).
    pub feasible: bool,
    #[serde(default)]
    pub checks: Vec<CheckResult>,
}

impl RateCertificate {
    fn new(kind: CertificateKind, bound: Bound, applicability: &str, constants: &[(&str, f64)]) -> Self {
        RateCertificate {
            kind,
            constants: constants.iter().map(|(k, v)| (String::from(*k), *v)).collect(),
            bound,
            applicability: String::from(applicability),
            feasible: true,
            checks: Vec::new(),
        }
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    /// Geometric ratio, if the bound is geometric.
    pub fn ratio(&self) -> Option<f64> {
        match self.bound {
            Bound::Geometric { ratio } => Some(ratio),
            _ => None,
        }
    }

    /// True when feasible and every asserted check passed.
    pub fn holds(&self) -> bool {
        self.feasible && self.checks.iter().all(|c| c.passed || !c.asserted)
    }

    pub fn push_check(&mut self, check: CheckResult) {
        self.checks.push(check);
    }
}

fn out_of_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Error {
    Error::StepSizeOutOfRange { name, value, lo, hi }
}

/// Rate for plain gradient descent with step `eps`.
///
/// Geometric when `mu > 0` and `eps <= 2/(mu + L)` (the optimal ratio exactly at
/// the boundary), sublinear otherwise for `eps < 2/L`.
pub fn gd_certificate(params: &FunctionClassParams, eps: f64) -> Result<RateCertificate> {
    let (mu, l) = (params.mu, params.l_lip);
    if !(eps > 0.0 && eps < 2.0 / l) {
        return Err(out_of_range("eps", eps, 0.0, 2.0 / l));
    }
    let boundary = 2.0 / (mu + l);
    let base = [("eps", eps), ("mu", mu), ("L", l), ("kappa", params.kappa)];
    if mu > 0.0 && (eps - boundary).abs() <= 1e-12 * boundary {
        let ratio = (l - mu) / (l + mu);
        return Ok(RateCertificate::new(
            CertificateKind::GdOptimal,
            Bound::Geometric { ratio },
            "mu > 0, eps = 2/(mu + L)",
            &base,
        ));
    }
    if mu > 0.0 && eps <= boundary {
        return Ok(RateCertificate::new(
            CertificateKind::GdLinear,
            Bound::Geometric { ratio: 1.0 - mu * eps },
            "mu > 0, 0 < eps <= 2/(mu + L)",
            &base,
        ));
    }
    Ok(RateCertificate::new(
        CertificateKind::GdSublinear,
        Bound::InverseK { coeff: 2.0 / eps },
        "convex, L-smooth, 0 < eps < 2/L",
        &base,
    ))
}

pub fn hb_certificate(params: &FunctionClassParams) -> Result<RateCertificate> {
    if params.mu <= 0.0 {
        return Err(Error::NotApplicable("heavy-ball rate needs mu > 0"));
    }
    let (sl, sm) = (params.l_lip.sqrt(), params.mu.sqrt());
    let ratio = (sl - sm) / (sl + sm);
    let eps = 4.0 / (sl + sm).powi(2);
    Ok(RateCertificate::new(
        CertificateKind::HeavyBall,
        Bound::Geometric { ratio },
        "mu > 0, twice differentiable, eps = 4/(sqrt L + sqrt mu)^2",
        &[
            ("eps", eps),
            ("beta", ratio),
            ("mu", params.mu),
            ("L", params.l_lip),
            ("kappa", params.kappa),
        ],
    ))
}

pub fn agd_certificate(params: &FunctionClassParams, eps: f64, schedule: BetaSchedule) -> Result<RateCertificate> {
    let (mu, l) = (params.mu, params.l_lip);
    match schedule {
        BetaSchedule::Nesterov => {
            if !(eps > 0.0 && eps <= (1.0 / l) * (1.0 + 1e-12)) {
                return Err(out_of_range("eps", eps, 0.0, 1.0 / l));
            }
            Ok(RateCertificate::new(
                CertificateKind::AgdSublinear,
                Bound::InverseKSquared {
                    coeff: 8.0 / (3.0 * eps),
                },
                "convex, L-smooth, 0 < eps <= 1/L, beta_k = (k-1)/(k+2)",
                &[("eps", eps), ("mu", mu), ("L", l)],
            ))
        }
        BetaSchedule::Constant => {
            if mu <= 0.0 {
                return Err(Error::NotApplicable("constant-momentum rate needs mu > 0"));
            }
            if (eps * l - 1.0).abs() > 1e-9 {
                return Err(out_of_range("eps", eps, 1.0 / l, 1.0 / l));
            }
            let (sl, sm) = (l.sqrt(), mu.sqrt());
            Ok(RateCertificate::new(
                CertificateKind::AgdLinear,
                Bound::Geometric {
                    ratio: 1.0 - (mu / l).sqrt(),
                },
                "mu > 0, eps = 1/L, constant beta",
                &[
                    ("eps", eps),
                    ("beta", (sl - sm) / (sl + sm)),
                    ("mu", mu),
                    ("L", l),
                    ("kappa", params.kappa),
                ],
            ))
        }
    }
}

/// `(sigma_min, sigma_max)` of `B` after checking full row rank.
fn sigmas(prob: &SaddleProblem, tol: &Tolerances) -> Result<(f64, f64)> {
    prob.assert_full_row_rank(tol)?;
    Ok(prob.constraint_sigmas())
}

/// `gamma = mu^2 sigma_min^2 / (2 L sigma_max^3)`.
pub fn default_gamma(params: &FunctionClassParams, smin: f64, smax: f64) -> f64 {
    params.mu.powi(2) * smin.powi(2) / (2.0 * params.l_lip * smax.powi(3))
}

/// `(c1, c2)` of the potential-decay bound.
pub fn pdg_constants(params: &FunctionClassParams, smin: f64, smax: f64, gamma: f64, eps1: f64, eps2: f64) -> (f64, f64) {
    let (mu, l) = (params.mu, params.l_lip);
    let c1 = 1.0 - mu * eps1 + eps2 * smax.powi(2) / mu + eps2 * smax / gamma;
    let c2 = 1.0 - eps2 * smin.powi(2) / l + eps2 * gamma * smax.powi(3) / mu.powi(2);
    (c1, c2)
}

/// Potential decay certificate for the primal-dual gradient method.
pub fn pdg_certificate(
    prob: &SaddleProblem,
    params: &FunctionClassParams,
    gamma: Option<f64>,
    eps1: f64,
    eps2: f64,
    tol: &Tolerances,
) -> Result<RateCertificate> {
    let (smin, smax) = sigmas(prob, tol)?;
    let (mu, l) = (params.mu, params.l_lip);
    if mu <= 0.0 {
        return Err(Error::NotApplicable("primal-dual rate needs mu > 0"));
    }
    let e1_max = 2.0 / (l + mu);
    if !(eps1 > 0.0 && eps1 <= e1_max * (1.0 + 1e-12)) {
        return Err(out_of_range("eps1", eps1, 0.0, e1_max));
    }
    let e2_max = 2.0 / (smin.powi(2) / l + smax.powi(2) / mu);
    if !(eps2 > 0.0 && eps2 <= e2_max * (1.0 + 1e-12)) {
        return Err(out_of_range("eps2", eps2, 0.0, e2_max));
    }
    let gamma = gamma.unwrap_or_else(|| default_gamma(params, smin, smax));
    let gamma_limit = mu.powi(2) * smin.powi(2) / (l * smax.powi(3));
    let (c1, c2) = pdg_constants(params, smin, smax, gamma, eps1, eps2);
    let c = c1.max(c2);
    let mut cert = RateCertificate::new(
        CertificateKind::PdgPotential,
        Bound::Geometric { ratio: c },
        "mu > 0, B full row rank, gamma < mu^2 smin^2/(L smax^3), c < 1",
        &[
            ("eps1", eps1),
            ("eps2", eps2),
            ("gamma", gamma),
            ("gamma_limit", gamma_limit),
            ("c", c),
            ("c1", c1),
            ("c2", c2),
            ("mu", mu),
            ("L", l),
            ("sigma_min", smin),
            ("sigma_max", smax),
            ("kappa", params.kappa),
            ("tau", (smax / smin).powi(2)),
        ],
    );
    cert.feasible = c < 1.0 && c >= 0.0 && gamma > 0.0 && gamma < gamma_limit;
    Ok(cert)
}

/// Balanced step sizes for the primal-dual method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdgTuning {
    pub eps1: f64,
    pub eps2: f64,
    pub gamma: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    /// `1 - 1/(kappa^3 (4 tau^2 + 2 tau + 1))`.
    pub condition_bound: f64,
    pub bound_holds: bool,
}

pub fn optimal_pdg_steps(prob: &SaddleProblem, params: &FunctionClassParams, tol: &Tolerances) -> Result<PdgTuning> {
    let (smin, smax) = sigmas(prob, tol)?;
    let (mu, l) = (params.mu, params.l_lip);
    if mu <= 0.0 {
        return Err(Error::NotApplicable("primal-dual rate needs mu > 0"));
    }
    let gamma = default_gamma(params, smin, smax);
    let eps1 = 2.0 / (l + mu);
    let denom = smax.powi(2) / mu + smax / gamma + smin.powi(2) / l - gamma * smax.powi(3) / mu.powi(2);
    let eps2 = 2.0 * mu / ((l + mu) * denom);
    let (c1, c2) = pdg_constants(params, smin, smax, gamma, eps1, eps2);
    let c = c1.max(c2);
    let kappa = l / mu;
    let tau = (smax / smin).powi(2);
    let condition_bound = 1.0 - 1.0 / (kappa.powi(3) * (4.0 * tau * tau + 2.0 * tau + 1.0));
    Ok(PdgTuning {
        eps1,
        eps2,
        gamma,
        c,
        c1,
        c2,
        condition_bound,
        bound_holds: c <= condition_bound,
    })
}

/// Certificate at the balanced step sizes.
pub fn pdg_optimal_certificate(prob: &SaddleProblem, params: &FunctionClassParams, tol: &Tolerances) -> Result<RateCertificate> {
    let t = optimal_pdg_steps(prob, params, tol)?;
    let mut cert = pdg_certificate(prob, params, Some(t.gamma), t.eps1, t.eps2, tol)?;
    cert.kind = CertificateKind::PdgOptimal;
    cert.constants.insert(String::from("condition_bound"), t.condition_bound);
    cert.feasible = cert.feasible && t.bound_holds;
    Ok(cert)
}

/// `V_k = gamma a_k + b_k` along a primal-dual trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTrace {
    /// `||x_k - grad f*(-B' lambda_k)||`.
    pub a: Vec<f64>,
    /// `||lambda_k - lambda*||`.
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: f64,
}

pub fn potential_trace(prob: &SaddleProblem, traj: &Trajectory, gamma: f64) -> Result<PotentialTrace> {
    let m = prob.dual_dim();
    if traj.meta.partition != Some(m) {
        return Err(Error::dim("trajectory does not carry a dual block of the problem's size"));
    }
    let (_, lambda_star, _) = prob.kkt_solve();
    let chol = prob.q.clone().cholesky().ok_or(Error::SingularHessian)?;
    let bt = prob.b_mat.transpose();
    let mut a = Vec::with_capacity(traj.len());
    let mut b = Vec::with_capacity(traj.len());
    let mut v = Vec::with_capacity(traj.len());
    for state in &traj.states {
        let lambda = state.rows(0, m);
        let x = state.rows(m, state.len() - m);
        let x_tilde = chol.solve(&(-(&prob.r + &bt * lambda)));
        let ak = (x - x_tilde).norm();
        let bk = (lambda - &lambda_star).norm();
        a.push(ak);
        b.push(bk);
        v.push(gamma * ak + bk);
    }
    Ok(PotentialTrace { a, b, v, gamma })
}

/// Strong convexity and smoothness of the dual function `g`.
pub fn conjugate_params(params: &FunctionClassParams, prob: &SaddleProblem, tol: &Tolerances) -> Result<FunctionClassParams> {
    let (smin, smax) = sigmas(prob, tol)?;
    if params.mu <= 0.0 {
        return Err(Error::NotApplicable("dual parameters need mu > 0"));
    }
    FunctionClassParams::new(smin.powi(2) / params.l_lip, smax.powi(2) / params.mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderVerdict {
    pub max_eigs: (f64, f64),
    pub min_eigs: (f64, f64),
    pub holds: bool,
}

/// For `A1 <= A2` (Loewner), confirms `lambda_max(A1) <= lambda_max(A2)` and
/// `lambda_min(A1) <= lambda_min(A2)`.
pub fn matrix_order_check(a1: &Matrix, a2: &Matrix, tol: &Tolerances) -> Result<OrderVerdict> {
    if a1.shape() != a2.shape() || !a1.is_square() {
        return Err(Error::dim("matrix_order_check needs square matrices of equal size"));
    }
    let scale = a1.norm().max(a2.norm()).max(1.0);
    let (gap_min, _) = linalg::sym_extremes(&(a2 - a1));
    if gap_min < -tol.psd * scale {
        return Err(Error::NotOrdered { min_eig: gap_min });
    }
    let (lo1, hi1) = linalg::sym_extremes(a1);
    let (lo2, hi2) = linalg::sym_extremes(a2);
    let slack = 1e-12 * scale;
    Ok(OrderVerdict {
        max_eigs: (hi1, hi2),
        min_eigs: (lo1, lo2),
        holds: hi1 <= hi2 + slack && lo1 <= lo2 + slack,
    })
}

/// Spectral radius of a momentum iteration on a quadratic whose (metric-free)
/// Hessian has the given eigenvalues, from the 2x2 modal blocks.
///
/// Heavy ball: `z^2 - (1 + beta - eps h) z + beta`;
/// Nesterov: `z^2 - (1 + beta)(1 - eps h) z + beta (1 - eps h)`.
pub fn momentum_spectral_radius(hessian_eigs: &[f64], eps: f64, beta: f64, nesterov: bool) -> f64 {
    hessian_eigs
        .iter()
        .map(|&h| {
            let (t, d) = if nesterov {
                ((1.0 + beta) * (1.0 - eps * h), beta * (1.0 - eps * h))
            } else {
                (1.0 + beta - eps * h, beta)
            };
            let [z1, z2] = linalg::quadratic_roots(t, d);
            z1.norm().max(z2.norm())
        })
        .fold(0.0, f64::max)
}

/// Compares a geometric ratio with a spectral radius (slack `1e-8`).
pub fn check_spectral(cert: &RateCertificate, spectral_radius: f64) -> CheckResult {
    let ratio = cert.ratio().unwrap_or(f64::NAN);
    let excess = spectral_radius - ratio;
    CheckResult {
        name: String::from("spectral_radius"),
        passed: excess <= 1e-8,
        asserted: true,
        worst_step: None,
        worst_excess: excess,
        steps_checked: 0,
    }
}

/// Pathwise `||x_k - x*|| <= ratio^k ||x_0 - x*|| + slack` for `k >= skip`.
/// `norm` measures errors (identity or a metric norm).
pub fn check_distance(
    cert: &RateCertificate,
    states: &[Vector],
    x_star: &Vector,
    norm: &dyn Fn(&Vector) -> f64,
    skip: usize,
    slack: f64,
    asserted: bool,
) -> CheckResult {
    let ratio = cert.ratio().unwrap_or(f64::NAN);
    let r0 = states.first().map_or(0.0, |x| norm(&(x - x_star)));
    let mut worst = f64::NEG_INFINITY;
    let mut worst_step = None;
    let mut pow = 1.0;
    let mut checked = 0;
    for (k, x) in states.iter().enumerate() {
        if k > 0 {
            pow *= ratio;
        }
        if k < skip {
            continue;
        }
        let excess = norm(&(x - x_star)) - (pow * r0 + slack);
        checked += 1;
        if excess > worst {
            worst = excess;
            worst_step = Some(k);
        }
    }
    CheckResult {
        name: String::from("distance"),
        passed: worst <= 0.0,
        asserted,
        worst_step,
        worst_excess: worst,
        steps_checked: checked,
    }
}

/// Pathwise function-gap check of a sublinear bound for `k >= 1`; `r0_sq` is
/// `||x_0 - x*||^2` in the metric the bound is stated in.
pub fn check_function_gap(
    cert: &RateCertificate,
    states: &[Vector],
    objective: &QuadraticObjective,
    f_star: f64,
    r0_sq: f64,
    slack: f64,
) -> CheckResult {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_step = None;
    let mut checked = 0;
    for (k, x) in states.iter().enumerate().skip(1) {
        let kf = k as f64;
        let rhs = match cert.bound {
            Bound::InverseK { coeff } => coeff * r0_sq / kf,
            Bound::InverseKSquared { coeff } => coeff * r0_sq / ((kf + 1.0) * (kf + 1.0)),
            Bound::Geometric { .. } => f64::NAN,
        };
        let excess = objective.value(x) - f_star - (rhs + slack);
        checked += 1;
        if excess > worst || excess.is_nan() {
            worst = excess;
            worst_step = Some(k);
        }
    }
    CheckResult {
        name: String::from("function_gap"),
        passed: worst <= 0.0,
        asserted: true,
        worst_step,
        worst_excess: worst,
        steps_checked: checked,
    }
}

/// `V_{k+1} <= c V_k + rel * V_0` at every step.
pub fn check_potential(cert: &RateCertificate, trace: &PotentialTrace, rel: f64) -> CheckResult {
    let c = cert.ratio().unwrap_or(f64::NAN);
    let v0 = trace.v.first().copied().unwrap_or(0.0);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_step = None;
    for (k, w) in trace.v.windows(2).enumerate() {
        let excess = w[1] - (c * w[0] + rel * v0);
        if excess > worst {
            worst = excess;
            worst_step = Some(k + 1);
        }
    }
    CheckResult {
        name: String::from("potential_decay"),
        passed: worst <= 0.0,
        asserted: true,
        worst_step,
        worst_excess: worst,
        steps_checked: trace.v.len().saturating_sub(1),
    }
}
