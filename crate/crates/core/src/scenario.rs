//! Builders for the two worked applications: primal congestion control and
//! distributed PI consensus control.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, serde_vector, Matrix, Vector};
use crate::model::{LtiSystem, PartitionedLtiSystem};
use crate::simulate::{CongestionField, DelayConfig, Event, EventSchedule, Mutation, Penalty, Utility};

/// Heavy-ball momentum used on the bundled congestion scenario.
pub const CONGESTION_HB_BETA: f64 = 0.54;
/// Nesterov momentum used on the bundled congestion scenario.
pub const CONGESTION_AGD_BETA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CongestionScenario {
    /// Link-by-source 0/1 matrix `R`.
    #[serde(with = "serde_matrix")]
    pub routing: Matrix,
    pub utility: Utility,
    #[serde(with = "serde_vector")]
    pub gains: Vector,
    pub penalty: Penalty,
    #[serde(with = "serde_vector")]
    pub capacities: Vector,
    pub eps: f64,
    #[serde(default)]
    pub clamp_nonnegative: bool,
    #[serde(with = "serde_vector")]
    pub x0: Vector,
    #[serde(default)]
    pub schedule: EventSchedule,
}

impl CongestionScenario {
    /// Two links, three users: user 1 on link A, user 2 on both, user 3 on
    /// link B. Log utilities, Kelly penalty, capacities `(2, 4)` switching to
    /// `(3, 1)` at step 500.
    pub fn two_link_three_user() -> Self {
        CongestionScenario {
            routing: Matrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]),
            utility: Utility::Log,
            gains: Vector::from_element(3, 0.1),
            penalty: Penalty::Kelly { sigma: 1.0 },
            capacities: Vector::from_row_slice(&[2.0, 4.0]),
            eps: 1.0,
            clamp_nonnegative: false,
            x0: Vector::from_element(3, 0.1),
            schedule: EventSchedule {
                events: vec![Event {
                    step: 500,
                    mutation: Mutation::Capacities {
                        c: Vector::from_row_slice(&[3.0, 1.0]),
                    },
                }],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.routing.shape();
        if m == 0 || n == 0 {
            return Err(Error::config("routing", "routing matrix is empty"));
        }
        if self.routing.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::config("routing", "entries must be 0 or 1"));
        }
        for i in 0..n {
            if self.routing.column(i).sum() < 1.0 {
                return Err(Error::config("routing", format!("source {i} uses no link")));
            }
        }
        if self.gains.len() != n || self.x0.len() != n {
            return Err(Error::config("gains", format!("gains and x0 need {n} entries")));
        }
        if self.gains.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::config("gains", "gains must be positive"));
        }
        check_capacities(&self.capacities, m, "capacities")?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "step size must be positive"));
        }
        match &self.utility {
            Utility::Log => {
                if self.x0.iter().any(|&v| v <= 0.0) {
                    return Err(Error::config("x0", "log utilities need positive initial rates"));
                }
            }
            Utility::Quadratic { q, r1 } => {
                if q.len() != n || r1.len() != n {
                    return Err(Error::config("utility", format!("q and r1 need {n} entries")));
                }
                if q.iter().any(|&v| v < 0.0) {
                    return Err(Error::config("utility", "q must be nonnegative"));
                }
            }
        }
        match &self.penalty {
            Penalty::Kelly { sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config("penalty.sigma", "sigma must be positive"));
                }
            }
            Penalty::Linear { r2, s2 } => {
                if r2.len() != m || s2.len() != m {
                    return Err(Error::config("penalty", format!("r2 and s2 need {m} entries")));
                }
                if r2.iter().any(|&v| v < 0.0) {
                    return Err(Error::config("penalty.r2", "r2 must be nonnegative"));
                }
            }
        }
        self.schedule.validate()?;
        for ev in &self.schedule.events {
            match &ev.mutation {
                Mutation::Capacities { c } => check_capacities(c, m, "schedule")?,
                Mutation::Input { .. } => {
                    return Err(Error::config("schedule", "congestion events must change capacities"))
                }
            }
        }
        Ok(())
    }
}

fn check_capacities(c: &Vector, links: usize, field: &str) -> Result<()> {
    if c.len() != links {
        return Err(Error::config(field, format!("expected {links} capacities, got {}", c.len())));
    }
    if c.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::config(field, "capacities must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CongestionBuild {
    pub field: CongestionField,
    /// `x_{k+1} = A x_k + C w` when utilities are quadratic and penalties linear.
    pub linear: Option<LtiSystem>,
}

pub fn build_congestion(sc: &CongestionScenario) -> Result<CongestionBuild> {
    sc.validate()?;
    let field = CongestionField {
        routing: sc.routing.clone(),
        gains: sc.gains.clone(),
        capacities: sc.capacities.clone(),
        eps: sc.eps,
        utility: sc.utility.clone(),
        penalty: sc.penalty.clone(),
        clamp_nonnegative: sc.clamp_nonnegative,
    };
    let linear = match (&sc.utility, &sc.penalty, sc.clamp_nonnegative) {
        (Utility::Quadratic { q, r1 }, Penalty::Linear { r2, s2 }, false) => {
            let n = sc.routing.ncols();
            let rt = sc.routing.transpose();
            let ek = Matrix::from_diagonal(&(&sc.gains * sc.eps));
            let hess = Matrix::from_diagonal(q) + &rt * Matrix::from_diagonal(r2) * &sc.routing;
            let a = Matrix::identity(n, n) - &ek * hess;
            let offset = &ek * (r1 - &rt * s2);
            Some(LtiSystem::with_offset(a, offset)?)
        }
        _ => None,
    };
    Ok(CongestionBuild { field, linear })
}

/// Equilibrium of the congestion field (`U'(x) = R' f(R x)`) by damped Newton.
pub fn congestion_equilibrium(field: &CongestionField, guess: &Vector) -> Result<Vector> {
    let positive = matches!(field.utility, Utility::Log);
    let mut x = guess.clone();
    let mut res = field.direction(&x).norm();
    for _ in 0..200 {
        if res <= 1e-14 * (1.0 + x.norm()) {
            return Ok(x);
        }
        let jac = field.direction_jacobian(&x);
        let dx = jac
            .lu()
            .solve(&(-field.direction(&x)))
            .ok_or(Error::Degenerate { residual: res })?;
        let mut t = 1.0;
        loop {
            let cand = &x + &dx * t;
            let ok = !positive || cand.iter().all(|&v| v > 0.0);
            if ok {
                let r = field.direction(&cand).norm();
                if r < res || t < 1e-12 {
                    x = cand;
                    res = r;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 && !ok {
                return Err(Error::Degenerate { residual: res });
            }
        }
    }
    if res <= 1e-10 * (1.0 + x.norm()) {
        Ok(x)
    } else {
        Err(Error::Degenerate { residual: res })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiScenario {
    /// Symmetric nonnegative weighted adjacency matrix.
    #[serde(with = "serde_matrix")]
    pub adjacency: Matrix,
    pub rho1: f64,
    pub rho2: f64,
    pub delta: f64,
    #[serde(with = "serde_vector")]
    pub d: Vector,
    #[serde(with = "serde_vector")]
    pub y0: Vector,
    pub eps1: f64,
    pub eps2: f64,
    #[serde(default)]
    pub delay_steps: usize,
}

/// Cycle graph on `n` nodes.
pub fn ring_adjacency(n: usize) -> Matrix {
    let mut adj = Matrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        if i != j {
            adj[(i, j)] = 1.0;
            adj[(j, i)] = 1.0;
        }
    }
    adj
}

pub fn laplacian(adj: &Matrix) -> Matrix {
    let deg = Vector::from_fn(adj.nrows(), |i, _| adj.row(i).sum());
    Matrix::from_diagonal(&deg) - adj
}

fn connected(adj: &Matrix) -> bool {
    let n = adj.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && adj[(i, j)] > 0.0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

impl PiScenario {
    /// Six agents on a ring with `d = [0,2,0,0,0,0]`, `y(0) = [5,-6,8,2,-4,0]`,
    /// `rho1 = 10`, `rho2 = 0.5`, `delta = 1` and a one-step communication delay.
    pub fn six_agent_ring() -> Self {
        PiScenario {
            adjacency: ring_adjacency(6),
            rho1: 10.0,
            rho2: 0.5,
            delta: 1.0,
            d: Vector::from_row_slice(&[0.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
            y0: Vector::from_row_slice(&[5.0, -6.0, 8.0, 2.0, -4.0, 0.0]),
            eps1: 0.02,
            eps2: 0.04,
            delay_steps: 1,
        }
    }

    pub fn agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.nrows();
        if n < 2 || !self.adjacency.is_square() {
            return Err(Error::config("adjacency", "need a square adjacency on at least 2 agents"));
        }
        if !linalg::all_finite(&self.adjacency) || linalg::asymmetry(&self.adjacency) > 0.0 {
            return Err(Error::config("adjacency", "adjacency must be finite and symmetric"));
        }
        if self.adjacency.iter().any(|&v| v < 0.0) || (0..n).any(|i| self.adjacency[(i, i)] != 0.0) {
            return Err(Error::config("adjacency", "weights must be nonnegative with an empty diagonal"));
        }
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2), ("delta", self.delta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "gain must be positive"));
            }
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "step size must be positive"));
            }
        }
        if self.d.len() != n || self.y0.len() != n {
            return Err(Error::config("d", format!("d and y0 need {n} entries")));
        }
        if !connected(&self.adjacency) {
            return Err(Error::DisconnectedGraph);
        }
        Ok(())
    }

    /// `[z(0); y(0)]` with `z(0) = 0`.
    pub fn x0(&self) -> Vector {
        let n = self.agents();
        let mut x = Vector::zeros(2 * n - 1);
        x.rows_mut(n - 1, n).copy_from(&self.y0);
        x
    }

    /// Agent `i` owns `z_i` and `y_i`.
    pub fn owners(&self) -> Vec<usize> {
        let n = self.agents();
        (0..n - 1).chain(0..n).collect()
    }

    pub fn delay(&self) -> DelayConfig {
        DelayConfig {
            delay_steps: self.delay_steps,
            owners: Some(self.owners()),
        }
    }

    /// Consensus value `(sum d + delta sum y(0)) / (delta n)`.
    pub fn consensus_value(&self) -> f64 {
        (self.d.sum() + self.delta * self.y0.sum()) / (self.delta * self.agents() as f64)
    }
}

/// Assembles the `(2n-1)`-state partitioned PI system, state `(z, y)`.
pub fn build_pi(sc: &PiScenario) -> Result<PartitionedLtiSystem> {
    sc.validate()?;
    let n = sc.agents();
    let lap = laplacian(&sc.adjacency);
    let lt = lap.columns(0, n - 1).into_owned();
    let mut dmat = Matrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        dmat[(i, i)] = 1.0;
        dmat[(i, n - 1)] = -1.0;
    }
    let dim = 2 * n - 1;
    let mut a = Matrix::identity(dim, dim);
    a.view_mut((0, n - 1), (n - 1, n)).copy_from(&(&dmat * sc.eps2));
    a.view_mut((n - 1, 0), (n, n - 1)).copy_from(&(&lt * (-sc.eps1 * sc.rho1)));
    let a22 = Matrix::identity(n, n) * (1.0 - sc.eps1 * sc.delta) - &lap * (sc.eps1 * sc.rho2);
    a.view_mut((n - 1, n - 1), (n, n)).copy_from(&a22);
    let mut offset = Vector::zeros(dim);
    offset
        .rows_mut(n - 1, n)
        .copy_from(&((&sc.d + &sc.y0 * sc.delta) * sc.eps1));
    PartitionedLtiSystem::new(LtiSystem::with_offset(a, offset)?, n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Tolerances;
    use crate::model::fixed_point;

    fn quad_identity() -> CongestionScenario {
        CongestionScenario {
            routing: Matrix::identity(2, 2),
            utility: Utility::Quadratic {
                q: Vector::from_element(2, 1.0),
                r1: Vector::from_row_slice(&[1.0, 2.0]),
            },
            gains: Vector::from_element(2, 0.1),
            penalty: Penalty::Linear {
                r2: Vector::from_element(2, 1.0),
                s2: Vector::zeros(2),
            },
            capacities: Vector::from_element(2, 1.0),
            eps: 1.0,
            clamp_nonnegative: false,
            x0: Vector::zeros(2),
            schedule: EventSchedule::default(),
        }
    }

    #[test]
    fn quadratic_identity_routing_gives_scaled_identity() {
        let b = build_congestion(&quad_identity()).unwrap();
        let sys = b.linear.unwrap();
        assert!((sys.a() - Matrix::identity(2, 2) * 0.8).norm() < 1e-15);
        assert!((sys.cw() - Vector::from_row_slice(&[0.1, 0.2])).norm() < 1e-15);
    }

    #[test]
    fn log_utilities_stay_nonlinear() {
        let b = build_congestion(&CongestionScenario::two_link_three_user()).unwrap();
        assert!(b.linear.is_none());
    }

    #[test]
    fn congestion_validation() {
        let mut sc = quad_identity();
        sc.capacities[1] = 0.0;
        assert!(matches!(build_congestion(&sc), Err(Error::Config { .. })));
        let mut sc = quad_identity();
        sc.routing[(0, 0)] = 0.5;
        assert!(build_congestion(&sc).is_err());
        let mut sc = quad_identity();
        sc.routing[(0, 0)] = 0.0;
        assert!(build_congestion(&sc).is_err());
        let mut sc = CongestionScenario::two_link_three_user();
        sc.penalty = Penalty::Kelly { sigma: 0.0 };
        assert!(build_congestion(&sc).is_err());
    }

    #[test]
    fn bundled_equilibrium_balances_prices() {
        let sc = CongestionScenario::two_link_three_user();
        let field = build_congestion(&sc).unwrap().field;
        let x = congestion_equilibrium(&field, &sc.x0).unwrap();
        assert!(field.direction(&x).norm() < 1e-12);
        assert!(x.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn two_agent_pi_blocks() {
        let sc = PiScenario {
            adjacency: ring_adjacency(2),
            rho1: 1.0,
            rho2: 1.0,
            delta: 1.0,
            d: Vector::from_row_slice(&[1.0, 0.0]),
            y0: Vector::from_row_slice(&[2.0, 0.0]),
            eps1: 0.1,
            eps2: 0.1,
            delay_steps: 0,
        };
        let sys = build_pi(&sc).unwrap();
        assert_eq!(sys.n1, 1);
        assert_eq!(sys.a11(), Matrix::identity(1, 1));
        assert_eq!(sys.a12(), Matrix::from_row_slice(1, 2, &[0.1, -0.1]));
        assert!((sys.a21() - Matrix::from_row_slice(2, 1, &[-0.1, 0.1])).norm() < 1e-15);
        let expect = Matrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.8]);
        assert!((sys.a22() - expect).norm() < 1e-15);
        let (c1, c2) = sys.cw_blocks();
        assert_eq!(c1, Vector::zeros(1));
        assert!((c2 - Vector::from_row_slice(&[0.3, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let mut sc = PiScenario::six_agent_ring();
        sc.adjacency = Matrix::zeros(6, 6);
        sc.adjacency[(0, 1)] = 1.0;
        sc.adjacency[(1, 0)] = 1.0;
        assert!(matches!(build_pi(&sc), Err(Error::DisconnectedGraph)));
    }

    #[test]
    fn ring_fixed_point_is_consensus() {
        let sc = PiScenario::six_agent_ring();
        let sys = build_pi(&sc).unwrap();
        let fp = fixed_point(&sys.base, &Tolerances::default()).unwrap();
        let y = fp.x.rows(5, 6);
        let target = sc.consensus_value();
        assert!((target - 7.0 / 6.0).abs() < 1e-15);
        assert!(y.iter().all(|&v| (v - target).abs() < 1e-9));
        assert_eq!(sc.owners(), vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 5]);
    }
}
