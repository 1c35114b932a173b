//! Retrofits: momentum (heavy ball, Nesterov), augmented Lagrangian and
//! hat-x, each expressed as extra dynamics `Delta u_k` added to the original step.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Tolerances, Vector};
use crate::model::{FunctionClassParams, PartitionedLtiSystem, SaddleProblem};
use crate::simulate::Plant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hb,
    Agd,
    Al,
    Hatx,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Hb => "hb",
            Method::Agd => "agd",
            Method::Al => "al",
            Method::Hatx => "hatx",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hb" => Some(Method::Hb),
            "agd" => Some(Method::Agd),
            "al" => Some(Method::Al),
            "hatx" | "hat-x" | "hat" => Some(Method::Hatx),
            _ => None,
        }
    }

    /// Whether the method applies to gradient (class O) or primal-dual (class S) systems.
    pub fn for_saddle(&self) -> bool {
        matches!(self, Method::Al | Method::Hatx)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    #[default]
    Constant,
    /// `beta_j = (j - 1) / (j + 2)` for the `j`-th step, `j = 1, 2, ...`
    Nesterov,
}

impl BetaSchedule {
    /// Momentum used when computing `x_{k+1}` (zero-based step `k`).
    pub fn beta_at(&self, k: usize, beta: f64) -> f64 {
        match self {
            BetaSchedule::Constant => beta,
            BetaSchedule::Nesterov => {
                let j = (k + 1) as f64;
                (j - 1.0) / (j + 2.0)
            }
        }
    }
}

/// Heavy-ball momentum tuning when `beta` is not supplied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HbTuning {
    /// `beta = (sqrt L - sqrt mu) / (sqrt L + sqrt mu)`.
    #[default]
    AsStated,
    /// `beta` equal to the square of that ratio (Polyak's tuning).
    Polyak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedesignSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub beta_schedule: BetaSchedule,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_star: Option<f64>,
    #[serde(default = "default_true")]
    pub retune_step: bool,
    #[serde(default)]
    pub hb_tuning: HbTuning,
}

fn default_true() -> bool {
    true
}

impl RedesignSpec {
    pub fn new(method: Method) -> Self {
        RedesignSpec {
            method,
            beta: None,
            beta_schedule: BetaSchedule::Constant,
            alpha: 0.0,
            eps_star: None,
            retune_step: true,
            hb_tuning: HbTuning::AsStated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config("redesign.beta", format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(
                "redesign.alpha",
                format!("must be a nonnegative number, got {}", self.alpha),
            ));
        }
        if let Some(e) = self.eps_star {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("redesign.eps_star", format!("must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

/// The extra dynamics, in the form the simulator executes.
#[derive(Debug, Clone, PartialEq)]
pub enum Retrofit {
    None,
    /// `Delta u = beta (x_k - x_{k-1})`.
    HeavyBall { beta: f64 },
    /// `Delta u = beta_k (y_{k+1} - y_k)` with `y_{k+1}` the plain step from `x_k`.
    Nesterov { beta: f64, schedule: BetaSchedule },
    /// `Delta u = gain x + offset` (nonzero on primal rows only).
    AugmentedLagrangian { gain: Matrix, offset: Vector },
    /// `Delta u = -rate (x - xhat)` on primal rows, `xhat += rate (x - xhat)`.
    HatX { rate: f64, primal_start: usize },
}

/// Coefficients actually used and the conditioning analysis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RedesignReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Condition number of the original objective.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_0: Option<f64>,
    /// Condition number of `H_f + alpha B'B`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_g: Option<f64>,
    /// `kappa_g < kappa_0`; when false the advice is `alpha = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_advised: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_h_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedesignedSystem {
    /// The original system; the retrofit adds to its step.
    pub plant: Plant,
    /// Size of the leading dual block for primal-dual plants.
    pub partition: Option<usize>,
    pub retrofit: Retrofit,
    /// `eps* / eps_nominal` when the gradient step is retuned.
    pub step_scale: Option<f64>,
    pub spec: RedesignSpec,
    pub report: RedesignReport,
}

fn ratio(params: &FunctionClassParams) -> f64 {
    let (sl, sm) = (params.l_lip.sqrt(), params.mu.sqrt());
    (sl - sm) / (sl + sm)
}

fn resolve_step(plant: &Plant, spec: &RedesignSpec, prescribed: Option<f64>) -> Result<(Option<f64>, Option<f64>)> {
    if !spec.retune_step {
        return Ok((None, None));
    }
    let eps = match spec.eps_star.or(prescribed) {
        Some(e) => e,
        None => return Err(Error::MissingCoefficient("eps_star")),
    };
    Ok((Some(eps / plant.nominal_step()), Some(eps)))
}

/// Heavy-ball retrofit `x_{k+1} = x_k - eps* grad f(x_k) + beta (x_k - x_{k-1})`.
///
/// Without overrides, `eps* = 4 / (sqrt L + sqrt mu)^2` and `beta` follows
/// `spec.hb_tuning`; both need `mu > 0`. With `retune_step = false` the plant
/// step is kept as is and only momentum is added.
pub fn hb_redesign(plant: &Plant, params: Option<&FunctionClassParams>, spec: &RedesignSpec) -> Result<RedesignedSystem> {
    spec.validate()?;
    let strongly = params.filter(|p| p.mu > 0.0);
    let beta = match (spec.beta, strongly) {
        (Some(b), _) => b,
        (None, Some(p)) => match spec.hb_tuning {
            HbTuning::AsStated => ratio(p),
            HbTuning::Polyak => ratio(p).powi(2),
        },
        (None, None) => return Err(Error::MissingCoefficient("beta")),
    };
    let prescribed = params.map(|p| {
        if p.mu > 0.0 {
            4.0 / (p.l_lip.sqrt() + p.mu.sqrt()).powi(2)
        } else {
            1.0 / p.l_lip
        }
    });
    let (step_scale, eps_star) = resolve_step(plant, spec, prescribed)?;
    Ok(RedesignedSystem {
        plant: plant.clone(),
        partition: None,
        retrofit: Retrofit::HeavyBall { beta },
        step_scale,
        spec: spec.clone(),
        report: RedesignReport {
            eps_star,
            beta: Some(beta),
            ..Default::default()
        },
    })
}

/// Nesterov retrofit in combined form,
/// `x_{k+1} = y_{k+1} + beta_k (y_{k+1} - y_k)`, `y_{k+1} = x_k - eps grad f(x_k)`.
///
/// Defaults: `eps = 1/L`; constant `beta = (sqrt L - sqrt mu)/(sqrt L + sqrt mu)`
/// when `mu > 0`, otherwise the schedule must be `Nesterov` or `beta` supplied.
pub fn agd_redesign(plant: &Plant, params: Option<&FunctionClassParams>, spec: &RedesignSpec) -> Result<RedesignedSystem> {
    spec.validate()?;
    let beta = match (spec.beta_schedule, spec.beta, params.filter(|p| p.mu > 0.0)) {
        (BetaSchedule::Nesterov, _, _) => 0.0,
        (BetaSchedule::Constant, Some(b), _) => b,
        (BetaSchedule::Constant, None, Some(p)) => ratio(p),
        (BetaSchedule::Constant, None, None) => return Err(Error::MissingCoefficient("beta")),
    };
    let prescribed = params.map(|p| 1.0 / p.l_lip);
    let (step_scale, eps_star) = resolve_step(plant, spec, prescribed)?;
    Ok(RedesignedSystem {
        plant: plant.clone(),
        partition: None,
        retrofit: Retrofit::Nesterov {
            beta,
            schedule: spec.beta_schedule,
        },
        step_scale,
        spec: spec.clone(),
        report: RedesignReport {
            eps_star,
            beta: (spec.beta_schedule == BetaSchedule::Constant).then_some(beta),
            ..Default::default()
        },
    })
}

fn cond_sym(m: &Matrix) -> f64 {
    let (lo, hi) = linalg::sym_extremes(m);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn check_plant(plant: &PartitionedLtiSystem, prob: &SaddleProblem) -> Result<()> {
    if plant.n1 != prob.dual_dim() || plant.n2() != prob.primal_dim() {
        return Err(Error::dim(format!(
            "plant blocks {}+{} do not match problem dual/primal sizes {}+{}",
            plant.n1,
            plant.n2(),
            prob.dual_dim(),
            prob.primal_dim()
        )));
    }
    Ok(())
}

/// Augmented-Lagrangian retrofit: `Delta u = -eps1 alpha B'(B x - b)` on the primal rows.
pub fn al_redesign(plant: &PartitionedLtiSystem, prob: &SaddleProblem, alpha: f64) -> Result<RedesignedSystem> {
    let spec = RedesignSpec {
        alpha,
        retune_step: false,
        ..RedesignSpec::new(Method::Al)
    };
    spec.validate()?;
    check_plant(plant, prob)?;
    let (m, n) = (plant.n1, plant.n2());
    let btb = prob.b_mat.transpose() * &prob.b_mat;
    let k = prob.eps1 * alpha;
    let mut gain = Matrix::zeros(m + n, m + n);
    gain.view_mut((m, m), (n, n)).copy_from(&(&btb * -k));
    let mut offset = Vector::zeros(m + n);
    offset.rows_mut(m, n).copy_from(&(prob.b_mat.transpose() * &prob.b * k));
    let kappa_0 = cond_sym(&prob.q);
    let kappa_g = cond_sym(&(&prob.q + &btb * alpha));
    Ok(RedesignedSystem {
        plant: Plant::Linear(plant.base.clone()),
        partition: Some(m),
        retrofit: Retrofit::AugmentedLagrangian { gain, offset },
        step_scale: None,
        spec,
        report: RedesignReport {
            alpha: Some(alpha),
            kappa_0: Some(kappa_0),
            kappa_g: Some(kappa_g),
            alpha_advised: Some(kappa_g < kappa_0),
            ..Default::default()
        },
    })
}

/// Hat-x retrofit on the state `(lambda, x, xhat)`:
/// `Delta u = -eps1 alpha (x - xhat)`, `xhat += eps1 alpha (x - xhat)`.
pub fn hatx_redesign(plant: &PartitionedLtiSystem, prob: &SaddleProblem, alpha: f64, tol: &Tolerances) -> Result<RedesignedSystem> {
    let spec = RedesignSpec {
        alpha,
        retune_step: false,
        ..RedesignSpec::new(Method::Hatx)
    };
    spec.validate()?;
    check_plant(plant, prob)?;
    let kappa_0 = cond_sym(&prob.q);
    let kappa_h = (alpha > 0.0).then(|| cond_sym(&hat_hessian(&prob.q, alpha)));
    let kappa_h_bounds = crate::classify::extract_params(&prob.q, tol)
        .ok()
        .and_then(|p| kappa_h_bounds(&p, alpha).ok());
    Ok(RedesignedSystem {
        plant: Plant::Linear(plant.base.clone()),
        partition: Some(plant.n1),
        retrofit: Retrofit::HatX {
            rate: prob.eps1 * alpha,
            primal_start: plant.n1,
        },
        step_scale: None,
        spec,
        report: RedesignReport {
            alpha: Some(alpha),
            kappa_0: Some(kappa_0),
            kappa_h,
            kappa_h_bounds,
            ..Default::default()
        },
    })
}

/// Hessian of `f(x) + alpha/2 ||x - xhat||^2` over `(x, xhat)`.
pub fn hat_hessian(hf: &Matrix, alpha: f64) -> Matrix {
    let n = hf.nrows();
    let mut h = Matrix::zeros(2 * n, 2 * n);
    let ai = Matrix::identity(n, n) * alpha;
    h.view_mut((0, 0), (n, n)).copy_from(&(hf + &ai));
    h.view_mut((0, n), (n, n)).copy_from(&(-&ai));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&ai));
    h.view_mut((n, n), (n, n)).copy_from(&ai);
    h
}

/// Bracket on the condition number of the hat-x Hessian for `mu I <= H_f <= L I`.
pub fn kappa_h_bounds(params: &FunctionClassParams, alpha: f64) -> Result<(f64, f64)> {
    if params.mu <= 0.0 {
        return Err(Error::DegenerateObjective("kappa_h bracket needs mu > 0"));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidCoefficient(format!("alpha must be positive, got {alpha}")));
    }
    let (mu, l) = (params.mu, params.l_lip);
    let sm = (mu * mu + 4.0 * alpha * alpha).sqrt();
    let sl = (l * l + 4.0 * alpha * alpha).sqrt();
    // 2a + x - sqrt(x^2 + 4a^2) rewritten to avoid cancellation for small alpha
    let small = |x: f64, s: f64| 2.0 * alpha + (x * x - s * s) / (x + s);
    let lower = (2.0 * alpha + mu + sm) / small(l, sl);
    let upper = (2.0 * alpha + l + sl) / small(mu, sm);
    Ok((lower, upper))
}

/// Smallest `alpha` (to 1e-6 relative) with `lambda_min(H_f + alpha B'B) >= 1e-10`.
pub fn convexification_alpha(hf: &Matrix, b_mat: &Matrix, tol: &Tolerances) -> Result<f64> {
    const MARGIN: f64 = 1e-10;
    if !hf.is_square() || b_mat.ncols() != hf.nrows() {
        return Err(Error::dim(format!(
            "H_f is {}x{}, B is {}x{}",
            hf.nrows(),
            hf.ncols(),
            b_mat.nrows(),
            b_mat.ncols()
        )));
    }
    let hf = linalg::symmetrize(hf);
    let min_eig = |alpha: f64| linalg::sym_extremes(&(&hf + b_mat.transpose() * b_mat * alpha)).0;
    if min_eig(0.0) >= MARGIN {
        return Ok(0.0);
    }
    let z = linalg::nullspace(b_mat, tol.rank);
    if z.ncols() > 0 {
        let projected = z.transpose() * &hf * &z;
        let (lo, _) = linalg::sym_extremes(&projected);
        if lo <= tol.psd * hf.norm().max(1.0) {
            return Err(Error::NotConvexifiable { min_eig: lo });
        }
    }
    let mut hi = 1.0;
    while min_eig(hi) < MARGIN {
        hi *= 2.0;
        if hi > 2f64.powi(60) {
            return Err(Error::NotConvexifiable { min_eig: min_eig(hi) });
        }
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if min_eig(mid) >= MARGIN {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

impl RedesignedSystem {
    /// Dimension of the full iteration state (plant plus retrofit memory).
    pub fn extended_dim(&self) -> usize {
        let n = self.plant.dim();
        match &self.retrofit {
            Retrofit::None | Retrofit::AugmentedLagrangian { .. } => n,
            Retrofit::HeavyBall { .. } | Retrofit::Nesterov { .. } => 2 * n,
            Retrofit::HatX { primal_start, .. } => 2 * n - primal_start,
        }
    }

    /// Linear map `(M, c)` of the full iteration on the extended state, for
    /// linear plants with constant coefficients. History retrofits use the
    /// state `(x_k, x_{k-1})`; hat-x uses `(lambda, x, xhat)`.
    pub fn extended_iteration(&self) -> Option<(Matrix, Vector)> {
        let sys = match &self.plant {
            Plant::Linear(s) => s,
            Plant::Field(_) => return None,
        };
        let n = sys.dim();
        let eye = Matrix::identity(n, n);
        let (s, cs) = match self.step_scale {
            Some(t) => (&eye + (sys.a() - &eye) * t, sys.cw() * t),
            None => (sys.a().clone(), sys.cw()),
        };
        let history = |top_left: Matrix, top_right: Matrix| {
            let mut m = Matrix::zeros(2 * n, 2 * n);
            m.view_mut((0, 0), (n, n)).copy_from(&top_left);
            m.view_mut((0, n), (n, n)).copy_from(&top_right);
            m.view_mut((n, 0), (n, n)).copy_from(&eye);
            let mut c = Vector::zeros(2 * n);
            c.rows_mut(0, n).copy_from(&cs);
            (m, c)
        };
        match &self.retrofit {
            Retrofit::None => Some((s, cs)),
            Retrofit::HeavyBall { beta } => Some(history(&s + &eye * *beta, &eye * -*beta)),
            Retrofit::Nesterov { beta, schedule } => match schedule {
                BetaSchedule::Constant => Some(history(&s * (1.0 + beta), &s * -*beta)),
                BetaSchedule::Nesterov => None,
            },
            Retrofit::AugmentedLagrangian { gain, offset } => Some((s + gain, cs + offset)),
            Retrofit::HatX { rate, primal_start } => {
                let np = n - primal_start;
                let mut m = Matrix::zeros(n + np, n + np);
                m.view_mut((0, 0), (n, n)).copy_from(&s);
                for i in 0..np {
                    let xi = primal_start + i;
                    let hi = n + i;
                    m[(xi, xi)] -= rate;
                    m[(xi, hi)] += rate;
                    m[(hi, xi)] = *rate;
                    m[(hi, hi)] = 1.0 - rate;
                }
                let mut c = Vector::zeros(n + np);
                c.rows_mut(0, n).copy_from(&cs);
                Some((m, c))
            }
        }
    }

    /// Extended initial state with history/hat variables copied from `x0`.
    pub fn extend_state(&self, x0: &Vector) -> Vector {
        let n = x0.len();
        match &self.retrofit {
            Retrofit::HeavyBall { .. } | Retrofit::Nesterov { .. } => {
                let mut z = Vector::zeros(2 * n);
                z.rows_mut(0, n).copy_from(x0);
                z.rows_mut(n, n).copy_from(x0);
                z
            }
            Retrofit::HatX { primal_start, .. } => {
                let np = n - primal_start;
                let mut z = Vector::zeros(n + np);
                z.rows_mut(0, n).copy_from(x0);
                z.rows_mut(n, np).copy_from(&x0.rows(*primal_start, np));
                z
            }
            _ => x0.clone(),
        }
    }

    /// Plant node each extended-state index belongs to.
    fn node_map(&self) -> Vec<usize> {
        let n = self.plant.dim();
        let mut map: Vec<usize> = (0..n).collect();
        match &self.retrofit {
            Retrofit::HeavyBall { .. } | Retrofit::Nesterov { .. } => map.extend(0..n),
            Retrofit::HatX { primal_start, .. } => map.extend(*primal_start..n),
            _ => {}
        }
        map
    }

    /// Whether every interaction in the extended iteration matrix is a self
    /// edge, an edge of the original matrix, or (augmented Lagrangian only) a
    /// primal-primal edge between two primal nodes coupled to a common dual node.
    pub fn structure_preserved(&self) -> Option<bool> {
        let original = match &self.plant {
            Plant::Linear(s) => s.a(),
            Plant::Field(_) => return None,
        };
        let (ext, _) = self.extended_iteration()?;
        let map = self.node_map();
        let duals = match (&self.retrofit, self.partition) {
            (Retrofit::AugmentedLagrangian { .. }, Some(m)) => m,
            _ => 0,
        };
        let nz = |i: usize, j: usize| original[(i, j)] != 0.0;
        for r in 0..ext.nrows() {
            for c in 0..ext.ncols() {
                if ext[(r, c)] == 0.0 {
                    continue;
                }
                let (i, j) = (map[r], map[c]);
                // B is read from the primal rows, so a shared constraint shows up there
                let ok = i == j || nz(i, j) || (0..duals).any(|l| nz(i, l) && nz(j, l));
                if !ok {
                    return Some(false);
                }
            }
        }
        Some(true)
    }
}
