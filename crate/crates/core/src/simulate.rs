//! Rollouts of original and redesigned iterations, with input events,
//! buffered communication delay and trajectory metrics.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{serde_matrix, serde_vector, Matrix, Vector};
use crate::model::{LtiSystem, QuadraticObjective, Trajectory, TrajectoryMeta};
use crate::redesign::{RedesignedSystem, Retrofit};

/// Norm above which a rollout is declared divergent and truncated.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Utility {
    /// `U_i(x) = log x`.
    Log,
    /// `U(x) = -1/2 q_i x_i^2 + r1_i x_i`.
    Quadratic {
        #[serde(with = "serde_vector")]
        q: Vector,
        #[serde(with = "serde_vector")]
        r1: Vector,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Penalty {
    /// `f_l(y) = max(y - c_l + sigma, 0) / sigma^2`.
    Kelly { sigma: f64 },
    /// `f(y) = r2 * y + s2` (elementwise).
    Linear {
        #[serde(with = "serde_vector")]
        r2: Vector,
        #[serde(with = "serde_vector")]
        s2: Vector,
    },
}

/// Primal congestion control: `x += eps diag(k) (U'(x) - R' f(R x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CongestionField {
    /// Link-by-source 0/1 routing matrix.
    #[serde(with = "serde_matrix")]
    pub routing: Matrix,
    #[serde(with = "serde_vector")]
    pub gains: Vector,
    #[serde(with = "serde_vector")]
    pub capacities: Vector,
    pub eps: f64,
    pub utility: Utility,
    pub penalty: Penalty,
    #[serde(default)]
    pub clamp_nonnegative: bool,
}

impl CongestionField {
    pub fn sources(&self) -> usize {
        self.routing.ncols()
    }

    pub fn links(&self) -> usize {
        self.routing.nrows()
    }

    pub fn prices(&self, x: &Vector) -> Vector {
        let y = &self.routing * x;
        match &self.penalty {
            Penalty::Kelly { sigma } => Vector::from_fn(y.len(), |l, _| {
                (y[l] - self.capacities[l] + sigma).max(0.0) / (sigma * sigma)
            }),
            Penalty::Linear { r2, s2 } => y.component_mul(r2) + s2,
        }
    }

    pub fn marginal_utility(&self, x: &Vector) -> Vector {
        match &self.utility {
            Utility::Log => x.map(|v| 1.0 / v),
            Utility::Quadratic { q, r1 } => r1 - q.component_mul(x),
        }
    }

    /// Ascent direction `U'(x) - R' f(R x)`.
    pub fn direction(&self, x: &Vector) -> Vector {
        self.marginal_utility(x) - self.routing.transpose() * self.prices(x)
    }

    /// Jacobian of [`direction`](Self::direction), using the right derivative at the penalty kink.
    pub fn direction_jacobian(&self, x: &Vector) -> Matrix {
        let n = self.sources();
        let du = match &self.utility {
            Utility::Log => x.map(|v| -1.0 / (v * v)),
            Utility::Quadratic { q, .. } => -q.clone(),
        };
        let y = &self.routing * x;
        let dp = match &self.penalty {
            Penalty::Kelly { sigma } => Vector::from_fn(y.len(), |l, _| {
                if y[l] - self.capacities[l] + sigma >= 0.0 {
                    1.0 / (sigma * sigma)
                } else {
                    0.0
                }
            }),
            Penalty::Linear { r2, .. } => r2.clone(),
        };
        let mut jac = -(self.routing.transpose() * Matrix::from_diagonal(&dp) * &self.routing);
        for i in 0..n {
            jac[(i, i)] += du[i];
        }
        jac
    }

    pub fn step(&self, x: &Vector) -> Vector {
        let mut next = x + self.direction(x).component_mul(&self.gains) * self.eps;
        if self.clamp_nonnegative {
            next.apply(|v| *v = v.max(0.0));
        }
        next
    }
}

/// A nonlinear (or closed-form) gradient iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientField {
    /// `x - eps P (Q x + r)`.
    Quadratic { objective: QuadraticObjective, eps: f64 },
    Congestion(CongestionField),
}

impl GradientField {
    pub fn dim(&self) -> usize {
        match self {
            GradientField::Quadratic { objective, .. } => objective.dim(),
            GradientField::Congestion(c) => c.sources(),
        }
    }

    pub fn step(&self, x: &Vector) -> Vector {
        match self {
            GradientField::Quadratic { objective, eps } => objective.gd_step(x, *eps),
            GradientField::Congestion(c) => c.step(x),
        }
    }

    /// Step size the field applies to its own descent direction.
    pub fn nominal_step(&self) -> f64 {
        match self {
            GradientField::Quadratic { eps, .. } => *eps,
            GradientField::Congestion(c) => c.eps,
        }
    }
}

/// The system being driven: linear dynamics or a gradient field.
#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    Linear(LtiSystem),
    Field(GradientField),
}

impl Plant {
    pub fn dim(&self) -> usize {
        match self {
            Plant::Linear(s) => s.dim(),
            Plant::Field(f) => f.dim(),
        }
    }

    /// Step size implicit in one plant step (1 for reverse-engineered linear systems).
    pub fn nominal_step(&self) -> f64 {
        match self {
            Plant::Linear(_) => 1.0,
            Plant::Field(f) => f.nominal_step(),
        }
    }

    pub fn step(&self, x: &Vector) -> Vector {
        match self {
            Plant::Linear(s) => s.step(x),
            Plant::Field(f) => f.step(x),
        }
    }

    fn apply(&mut self, m: &Mutation) -> Result<()> {
        match (self, m) {
            (Plant::Linear(s), Mutation::Input { w }) => {
                *s = s.with_input(w.clone())?;
                Ok(())
            }
            (Plant::Field(GradientField::Congestion(c)), Mutation::Capacities { c: caps }) => {
                if caps.len() != c.links() {
                    return Err(Error::dim(format!(
                        "capacity event has {} entries for {} links",
                        caps.len(),
                        c.links()
                    )));
                }
                c.capacities = caps.clone();
                Ok(())
            }
            _ => Err(Error::config("events", "mutation does not apply to this plant")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mutation {
    /// New exogenous input `w`.
    Input {
        #[serde(with = "serde_vector")]
        w: Vector,
    },
    /// New link capacities.
    Capacities {
        #[serde(with = "serde_vector")]
        c: Vector,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    /// The mutation takes effect for the step computing `x_{step+1}`.
    pub step: usize,
    pub mutation: Mutation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSchedule {
    pub events: Vec<Event>,
}

impl EventSchedule {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        let s = EventSchedule { events };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.events.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::config("events", "event steps must be strictly increasing"));
            }
        }
        Ok(())
    }
}

/// Fixed buffered delay on reads of states owned by other agents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub delay_steps: usize,
    /// Owning agent of each plant state; `None` makes every state its own agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owners: Option<Vec<usize>>,
}

impl DelayConfig {
    fn owner(&self, i: usize) -> usize {
        self.owners.as_ref().map_or(i, |o| o[i])
    }
}

/// `M x` where entry `(i, j)` reads `x_old[j]` unless `i` and `j` share an owner.
fn delayed_product(m: &Matrix, x: &Vector, x_old: &Vector, delay: &DelayConfig) -> Vector {
    let mut out = Vector::zeros(m.nrows());
    for i in 0..m.nrows() {
        let oi = delay.owner(i);
        let mut acc = 0.0;
        for j in 0..m.ncols() {
            let a = m[(i, j)];
            if a == 0.0 {
                continue;
            }
            let v = if delay.owner(j) == oi { x[j] } else { x_old[j] };
            acc += a * v;
        }
        out[i] = acc;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub steps: usize,
    pub schedule: Option<EventSchedule>,
    pub delay: Option<DelayConfig>,
    pub scenario: String,
}

impl RunOptions {
    pub fn steps(steps: usize) -> Self {
        RunOptions {
            steps,
            ..Default::default()
        }
    }
}

/// What to roll out.
#[derive(Debug, Clone, Copy)]
pub enum Iteration<'a> {
    Original { plant: &'a Plant, partition: Option<usize> },
    Redesigned(&'a RedesignedSystem),
}

impl<'a> From<&'a RedesignedSystem> for Iteration<'a> {
    fn from(r: &'a RedesignedSystem) -> Self {
        Iteration::Redesigned(r)
    }
}

impl<'a> From<&'a Plant> for Iteration<'a> {
    fn from(p: &'a Plant) -> Self {
        Iteration::Original {
            plant: p,
            partition: None,
        }
    }
}

struct Engine {
    plant: Plant,
    retrofit: Retrofit,
    step_scale: Option<f64>,
    delay: Option<DelayConfig>,
    history: VecDeque<Vector>,
    x_prev: Vector,
    y_prev: Option<Vector>,
    xhat: Option<Vector>,
}

impl Engine {
    fn base_step(&self, x: &Vector) -> Vector {
        let x_old = self.delayed_state(x);
        let base = match (&self.plant, &self.delay, x_old) {
            (Plant::Linear(sys), Some(d), Some(old)) => {
                delayed_product(sys.a(), x, old, d) + sys.cw()
            }
            _ => self.plant.step(x),
        };
        match self.step_scale {
            Some(s) => x + (base - x) * s,
            None => base,
        }
    }

    fn delayed_state(&self, _x: &Vector) -> Option<&Vector> {
        match &self.delay {
            Some(d) if d.delay_steps > 0 => self.history.front(),
            _ => None,
        }
    }

    fn step(&mut self, k: usize, x: &Vector, aux: &mut BTreeMap<String, Vec<Vector>>) -> Vector {
        let s = self.base_step(x);
        let next = match &self.retrofit {
            Retrofit::None => s,
            Retrofit::HeavyBall { beta } => {
                let n = &s + (x - &self.x_prev) * *beta;
                push(aux, "x_prev", x.clone());
                n
            }
            Retrofit::Nesterov { beta, schedule } => {
                let bk = schedule.beta_at(k, *beta);
                let y_prev = self.y_prev.take().unwrap_or_else(|| s.clone());
                let n = &s + (&s - &y_prev) * bk;
                push(aux, "y", s.clone());
                self.y_prev = Some(s);
                n
            }
            Retrofit::AugmentedLagrangian { gain, offset } => {
                let du = match (&self.delay, self.delayed_state(x)) {
                    (Some(d), Some(old)) => delayed_product(gain, x, old, d),
                    _ => gain * x,
                };
                s + du + offset
            }
            Retrofit::HatX { rate, primal_start } => {
                let xhat = self.xhat.as_mut().expect("hat state initialized");
                let np = xhat.len();
                let diff = x.rows(*primal_start, np) - &*xhat;
                let mut n = s;
                let mut rows = n.rows_mut(*primal_start, np);
                rows -= &diff * *rate;
                *xhat += &diff * *rate;
                push(aux, "xhat", xhat.clone());
                n
            }
        };
        self.x_prev = x.clone();
        if let Some(d) = &self.delay {
            if d.delay_steps > 0 {
                self.history.push_back(x.clone());
                while self.history.len() > d.delay_steps {
                    self.history.pop_front();
                }
            }
        }
        next
    }
}

fn push(aux: &mut BTreeMap<String, Vec<Vector>>, key: &str, v: Vector) {
    aux.entry(String::from(key)).or_default().push(v);
}

/// Deterministic rollout from `x0` for `opts.steps` steps.
///
/// History-based retrofits start from `x_{-1} = x_0`. A state whose norm exceeds
/// [`OVERFLOW_GUARD`] (or is non-finite) ends the rollout and sets `diverged_at`.
pub fn simulate<'a>(iter: impl Into<Iteration<'a>>, x0: &Vector, opts: &RunOptions) -> Result<Trajectory> {
    let iter = iter.into();
    let (plant, retrofit, step_scale, partition, redesign_name) = match iter {
        Iteration::Original { plant, partition } => {
            (plant.clone(), Retrofit::None, None, partition, String::from("original"))
        }
        Iteration::Redesigned(r) => (
            r.plant.clone(),
            r.retrofit.clone(),
            r.step_scale,
            r.partition,
            String::from(r.spec.method.name()),
        ),
    };
    if x0.len() != plant.dim() {
        return Err(Error::dim(format!(
            "x0 has length {}, plant has dimension {}",
            x0.len(),
            plant.dim()
        )));
    }
    if opts.steps == 0 {
        return Err(Error::config("steps", "must be at least 1"));
    }
    if let Some(s) = &opts.schedule {
        s.validate()?;
    }
    if let Some(d) = &opts.delay {
        if let Some(o) = &d.owners {
            if o.len() != plant.dim() {
                return Err(Error::dim(format!(
                    "delay owners has {} entries, plant has dimension {}",
                    o.len(),
                    plant.dim()
                )));
            }
        }
        if d.delay_steps > 0 && matches!(plant, Plant::Field(_)) {
            return Err(Error::config("delay", "delay is only modelled for linear plants"));
        }
    }
    let xhat = match &retrofit {
        Retrofit::HatX { primal_start, .. } => {
            Some(x0.rows(*primal_start, x0.len() - primal_start).into_owned())
        }
        _ => None,
    };
    let mut engine = Engine {
        plant,
        retrofit,
        step_scale,
        delay: opts.delay.clone(),
        history: VecDeque::new(),
        x_prev: x0.clone(),
        y_prev: None,
        xhat,
    };
    if let Some(d) = &engine.delay {
        for _ in 0..d.delay_steps {
            engine.history.push_back(x0.clone());
        }
    }

    let mut aux: BTreeMap<String, Vec<Vector>> = BTreeMap::new();
    match &engine.retrofit {
        Retrofit::HeavyBall { .. } => {}
        Retrofit::Nesterov { .. } => push(&mut aux, "y", x0.clone()),
        Retrofit::HatX { .. } => push(&mut aux, "xhat", engine.xhat.clone().unwrap_or_default()),
        _ => {}
    }
    let mut states = Vec::with_capacity(opts.steps + 1);
    states.push(x0.clone());
    let mut events = opts
        .schedule
        .as_ref()
        .map(|s| s.events.as_slice())
        .unwrap_or(&[])
        .iter()
        .peekable();
    let mut diverged_at = None;
    let mut x = x0.clone();
    for k in 0..opts.steps {
        while let Some(ev) = events.peek() {
            if ev.step > k {
                break;
            }
            engine.plant.apply(&ev.mutation)?;
            events.next();
        }
        let next = engine.step(k, &x, &mut aux);
        let norm = next.norm();
        if !norm.is_finite() || norm > OVERFLOW_GUARD {
            diverged_at = Some(k + 1);
            // keep aux sequences aligned with states
            for seq in aux.values_mut() {
                seq.truncate(states.len());
            }
            break;
        }
        states.push(next.clone());
        x = next;
    }
    if let Some(seq) = aux.get_mut("x_prev") {
        // x_prev[k] = x_{k-1}; aligned with states, x_{-1} = x_0
        seq.insert(0, x0.clone());
        seq.truncate(states.len());
    }
    Ok(Trajectory {
        meta: TrajectoryMeta {
            scenario: opts.scenario.clone(),
            redesign: redesign_name,
            steps: states.len() - 1,
            partition,
        },
        states,
        aux,
        diverged_at,
    })
}

/// Error-norm report against a reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub errors: Vec<f64>,
    /// `(threshold, first k with error <= threshold)`.
    pub first_reach: Vec<(f64, Option<usize>)>,
    /// `(threshold, first k after which the error stays <= threshold)`.
    pub settled: Vec<(f64, Option<usize>)>,
    /// `sum_k ||x_{k+1} - x_k||`.
    pub total_variation: f64,
    pub final_error: f64,
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [1e-2, 1e-4, 1e-6];

impl ErrorMetrics {
    pub fn first_reach_at(&self, threshold: f64) -> Option<usize> {
        self.first_reach
            .iter()
            .find(|(t, _)| *t == threshold)
            .and_then(|(_, k)| *k)
    }

    pub fn settled_at(&self, threshold: f64) -> Option<usize> {
        self.settled.iter().find(|(t, _)| *t == threshold).and_then(|(_, k)| *k)
    }
}

/// Per-step `||x_k - reference||` with threshold crossings and total variation.
pub fn error_metrics(states: &[Vector], reference: &Vector, thresholds: &[f64]) -> Result<ErrorMetrics> {
    if let Some(x) = states.first() {
        if x.len() != reference.len() {
            return Err(Error::dim(format!(
                "reference has length {}, states have length {}",
                reference.len(),
                x.len()
            )));
        }
    }
    let errors: Vec<f64> = states.iter().map(|x| (x - reference).norm()).collect();
    let first_reach = thresholds
        .iter()
        .map(|&t| (t, errors.iter().position(|&e| e <= t)))
        .collect();
    let settled = thresholds
        .iter()
        .map(|&t| {
            let k = match errors.iter().rposition(|&e| e > t) {
                None => Some(0),
                Some(last) if last + 1 < errors.len() => Some(last + 1),
                Some(_) => None,
            };
            (t, k)
        })
        .collect();
    let total_variation = states.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
    let final_error = errors.last().copied().unwrap_or(0.0);
    Ok(ErrorMetrics {
        errors,
        first_reach,
        settled,
        total_variation,
        final_error,
    })
}

/// Per-step `max_ij |y_i - y_j|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMetrics {
    pub disagreement: Vec<f64>,
    pub final_disagreement: f64,
}

pub fn consensus_metrics(states: &[Vector]) -> ConsensusMetrics {
    let disagreement: Vec<f64> = states
        .iter()
        .map(|y| {
            if y.is_empty() {
                0.0
            } else {
                y.max() - y.min()
            }
        })
        .collect();
    let final_disagreement = disagreement.last().copied().unwrap_or(0.0);
    ConsensusMetrics {
        disagreement,
        final_disagreement,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_plant() -> Plant {
        Plant::Linear(
            LtiSystem::with_offset(Matrix::from_element(1, 1, 0.5), Vector::from_element(1, 1.0)).unwrap(),
        )
    }

    #[test]
    fn scalar_geometric_series() {
        let p = scalar_plant();
        let t = simulate(&p, &Vector::zeros(1), &RunOptions::steps(40)).unwrap();
        assert_eq!(t.states[1][0], 1.0);
        assert_eq!(t.states[2][0], 1.5);
        assert!((t.states[40][0] - 2.0).abs() < 1e-11);
        let m = error_metrics(&t.states, &Vector::from_element(1, 2.0), &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(&m.errors[..4], &[2.0, 1.0, 0.5, 0.25]);
        assert_eq!(m.first_reach_at(1e-2), Some(8));
        assert_eq!(m.settled_at(1e-2), Some(8));
    }

    #[test]
    fn fixed_point_start_is_constant() {
        let p = scalar_plant();
        let t = simulate(&p, &Vector::from_element(1, 2.0), &RunOptions::steps(10)).unwrap();
        assert!(t.states.iter().all(|x| x[0] == 2.0));
        let m = error_metrics(&t.states, &Vector::from_element(1, 2.0), &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(m.total_variation, 0.0);
        assert!(m.errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn divergence_truncates() {
        let p = Plant::Linear(
            LtiSystem::with_offset(Matrix::from_element(1, 1, 10.0), Vector::zeros(1)).unwrap(),
        );
        let t = simulate(&p, &Vector::from_element(1, 1.0), &RunOptions::steps(100)).unwrap();
        assert_eq!(t.diverged_at, Some(13));
        assert_eq!(t.states.len(), 13);
    }

    #[test]
    fn input_event_switches_offset() {
        let p = scalar_plant();
        let sched = EventSchedule::new(vec![Event {
            step: 2,
            mutation: Mutation::Input { w: Vector::from_element(1, 0.0) },
        }])
        .unwrap();
        let opts = RunOptions {
            steps: 4,
            schedule: Some(sched),
            ..Default::default()
        };
        let t = simulate(&p, &Vector::zeros(1), &opts).unwrap();
        let xs: Vec<f64> = t.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 1.5, 0.75, 0.375]);
    }

    #[test]
    fn unordered_events_rejected() {
        let ev = |step| Event {
            step,
            mutation: Mutation::Input { w: Vector::zeros(1) },
        };
        assert!(EventSchedule::new(vec![ev(3), ev(3)]).is_err());
    }

    #[test]
    fn delay_reads_other_agents_late() {
        // x1 <- x2, x2 <- x1 with each state its own agent
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = Plant::Linear(LtiSystem::with_offset(a, Vector::zeros(2)).unwrap());
        let opts = RunOptions {
            steps: 3,
            delay: Some(DelayConfig { delay_steps: 1, owners: None }),
            ..Default::default()
        };
        let t = simulate(&p, &Vector::from_row_slice(&[1.0, 2.0]), &opts).unwrap();
        // step 0 reads x_{-1} = x_0; step 1 reads x_0
        assert_eq!(t.states[1], Vector::from_row_slice(&[2.0, 1.0]));
        assert_eq!(t.states[2], Vector::from_row_slice(&[2.0, 1.0]));
        assert_eq!(t.states[3], Vector::from_row_slice(&[1.0, 2.0]));
    }

    #[test]
    fn consensus_of_equal_states() {
        let states = vec![Vector::from_element(3, 1.5); 4];
        let c = consensus_metrics(&states);
        assert!(c.disagreement.iter().all(|&d| d == 0.0));
        let single = vec![Vector::from_element(1, 3.0), Vector::from_element(1, -1.0)];
        assert_eq!(consensus_metrics(&single).final_disagreement, 0.0);
    }
}
