//! Classify, reverse-engineer, redesign, simulate, certify.

use std::thread;

use retrofit_core::classify::{
    classify, extract_params_o, extract_params_s, reverse_engineer_o, reverse_engineer_s, ClassVerdict,
    SaddleSteps,
};
use retrofit_core::linalg::{self, serde_vector};
use retrofit_core::model::fixed_point;
use retrofit_core::rates::{
    agd_certificate, check_distance, check_function_gap, check_potential, check_spectral, gd_certificate,
    hb_certificate, momentum_spectral_radius, pdg_certificate, potential_trace, Bound, RateCertificate,
};
use retrofit_core::redesign::{
    agd_redesign, al_redesign, hatx_redesign, hb_redesign, BetaSchedule, Method, RedesignReport, RedesignSpec,
    RedesignedSystem,
};
use retrofit_core::scenario::{build_congestion, build_pi, congestion_equilibrium};
use retrofit_core::simulate::{
    consensus_metrics, error_metrics, simulate, ConsensusMetrics, ErrorMetrics, GradientField, Iteration, Mutation,
    Plant, RunOptions,
};
use retrofit_core::{
    FunctionClassParams, LtiSystem, PartitionedLtiSystem, QuadraticObjective, SaddleProblem, Tolerances, Trajectory,
    Vector,
};
use serde::{Deserialize, Serialize};

use crate::config::{Config, ScenarioSection};
use crate::error::{AppError, Result};

/// Slack for pathwise distance and function-gap checks.
pub const PATH_SLACK: f64 = 1e-10;
/// Relative slack (against `V_0`) for the potential-decay check.
pub const POTENTIAL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    /// Gradient descent on an unconstrained quadratic.
    Gradient,
    /// Primal-dual gradient on a saddle problem.
    PrimalDual,
    /// A nonlinear gradient field given by construction.
    Field,
}

/// The system under study, resolved from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub label: String,
    pub plant: Plant,
    pub partition: Option<usize>,
    pub steps: Option<SaddleSteps>,
    pub x0: Vector,
    pub opts: RunOptions,
    /// `(start, len)` of the per-agent output block (consensus scenarios).
    pub agents: Option<(usize, usize)>,
}

impl Prepared {
    pub fn linear(&self) -> Option<&LtiSystem> {
        match &self.plant {
            Plant::Linear(s) => Some(s),
            Plant::Field(_) => None,
        }
    }

    fn partitioned(&self) -> Result<PartitionedLtiSystem> {
        let (sys, n1) = match (self.linear(), self.partition) {
            (Some(s), Some(n1)) => (s, n1),
            _ => {
                return Err(AppError::Config(String::from(
                    "primal-dual retrofits need a linear system with `partition`",
                )))
            }
        };
        PartitionedLtiSystem::new(sys.clone(), n1).map_err(AppError::stage("system"))
    }
}

fn x0_or(run_x0: &Option<Vec<f64>>, fallback: Vector) -> Result<Vector> {
    match run_x0 {
        Some(v) if v.len() != fallback.len() => Err(AppError::Config(format!(
            "run.x0: expected {} entries, got {}",
            fallback.len(),
            v.len()
        ))),
        Some(v) => Ok(Vector::from_row_slice(v)),
        None => Ok(fallback),
    }
}

pub fn prepare(cfg: &Config) -> Result<Prepared> {
    let run = &cfg.run;
    let mut opts = RunOptions {
        steps: run.steps,
        schedule: run.events.clone(),
        delay: run.delay.clone(),
        scenario: String::new(),
    };
    let prepared = if let Some(section) = &cfg.system {
        let sys = section.build()?;
        let x0 = x0_or(&run.x0, Vector::zeros(sys.dim()))?;
        opts.scenario = String::from("system");
        Prepared {
            label: opts.scenario.clone(),
            plant: Plant::Linear(sys),
            partition: section.partition,
            steps: section.steps,
            x0,
            opts,
            agents: None,
        }
    } else {
        match cfg.scenario.as_ref().expect("validated config") {
            ScenarioSection::Congestion(sc) => {
                let build = build_congestion(sc).map_err(AppError::stage("scenario"))?;
                let plant = match build.linear {
                    // capacity events only act on the field form
                    Some(lin) if sc.schedule.events.is_empty() => Plant::Linear(lin),
                    _ => Plant::Field(GradientField::Congestion(build.field)),
                };
                if !sc.schedule.events.is_empty() {
                    opts.schedule = Some(sc.schedule.clone());
                }
                opts.scenario = String::from("congestion");
                Prepared {
                    label: opts.scenario.clone(),
                    plant,
                    partition: None,
                    steps: None,
                    x0: x0_or(&run.x0, sc.x0.clone())?,
                    opts,
                    agents: None,
                }
            }
            ScenarioSection::Pi(sc) => {
                let sys = build_pi(sc).map_err(AppError::stage("scenario"))?;
                if opts.delay.is_none() && sc.delay_steps > 0 {
                    opts.delay = Some(sc.delay());
                }
                opts.scenario = String::from("pi");
                let n = sc.agents();
                Prepared {
                    label: opts.scenario.clone(),
                    partition: Some(sys.n1),
                    plant: Plant::Linear(sys.base),
                    steps: Some(SaddleSteps {
                        eps1: sc.eps1,
                        eps2: sc.eps2,
                    }),
                    x0: x0_or(&run.x0, sc.x0())?,
                    opts,
                    agents: Some((n - 1, n)),
                }
            }
        }
    };
    if prepared.x0.len() != prepared.plant.dim() {
        return Err(AppError::Config(format!(
            "run.x0: expected {} entries, got {}",
            prepared.plant.dim(),
            prepared.x0.len()
        )));
    }
    Ok(prepared)
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub class: Class,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ClassVerdict>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Problem {
    Quadratic(QuadraticObjective),
    Saddle(SaddleProblem),
    Field,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reverse {
    pub problem: Problem,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<FunctionClassParams>,
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub system: RedesignedSystem,
}

#[derive(Debug, Clone, Serialize)]
pub struct RedesignEntry {
    pub variant: String,
    pub spec: RedesignSpec,
    pub report: RedesignReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure_preserved: Option<bool>,
}

impl From<&Variant> for RedesignEntry {
    fn from(v: &Variant) -> Self {
        RedesignEntry {
            variant: v.name.clone(),
            spec: v.system.spec.clone(),
            report: v.system.report.clone(),
            structure_preserved: v.system.structure_preserved(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Run {
    pub name: String,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    /// Index of the first state in this segment.
    pub start: usize,
    /// One past the last state.
    pub end: usize,
    #[serde(with = "serde_vector")]
    pub reference: Vector,
    /// `fixed_point`, `equilibrium`, or `original_limit`.
    pub reference_kind: &'static str,
    pub metrics: ErrorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMetrics {
    pub error: ErrorMetrics,
    pub consensus: ConsensusMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantMetrics {
    pub variant: String,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
    pub segments: Vec<Segment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<AgentMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateEntry {
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<RateCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CertificateEntry {
    fn skipped(variant: &str, note: impl Into<String>) -> Self {
        CertificateEntry {
            variant: variant.to_string(),
            certificate: None,
            note: Some(note.into()),
        }
    }

    /// Names of asserted checks that failed.
    pub fn failures(&self) -> Vec<String> {
        self.certificate
            .iter()
            .flat_map(|c| c.checks.iter().filter(|k| k.asserted && !k.passed))
            .map(|k| format!("{}:{}", self.variant, k.name))
            .collect()
    }
}

pub struct Pipeline {
    pub config: Config,
    pub tol: Tolerances,
    pub prepared: Prepared,
}

impl Pipeline {
    pub fn new(config: Config, tol: Tolerances) -> Result<Self> {
        let prepared = prepare(&config)?;
        Ok(Pipeline { config, tol, prepared })
    }

    fn wants_saddle(&self) -> Result<bool> {
        let specs = &self.config.redesign;
        let saddle = specs.iter().filter(|s| s.method.for_saddle()).count();
        if saddle > 0 && saddle < specs.len() {
            return Err(AppError::Config(String::from(
                "redesign: cannot mix gradient (hb, agd) and primal-dual (al, hatx) methods",
            )));
        }
        Ok(saddle > 0 || (specs.is_empty() && self.prepared.partition.is_some()))
    }

    pub fn classify(&self) -> Result<Classification> {
        let saddle = self.wants_saddle()?;
        let sys = match self.prepared.linear() {
            Some(s) => s,
            None if saddle => return Err(AppError::Config(String::from("al/hatx need a linear primal-dual system"))),
            None => {
                return Ok(Classification {
                    class: Class::Field,
                    verdict: None,
                })
            }
        };
        if saddle && self.prepared.partition.is_none() {
            return Err(AppError::Config(String::from("system.partition is required for al/hatx")));
        }
        let verdict = classify(sys, self.prepared.partition, &self.tol);
        let class = if saddle {
            let s = verdict.class_s.as_ref().expect("partition given");
            if !s.member {
                return Err(AppError::Rejected {
                    class: 'S',
                    reasons: s.reasons.clone(),
                });
            }
            Class::PrimalDual
        } else {
            if !verdict.class_o.member {
                return Err(AppError::Rejected {
                    class: 'O',
                    reasons: verdict.class_o.reasons.clone(),
                });
            }
            Class::Gradient
        };
        Ok(Classification {
            class,
            verdict: Some(verdict),
        })
    }

    pub fn reverse(&self, c: &Classification) -> Result<Reverse> {
        match c.class {
            Class::Field => Ok(Reverse {
                problem: Problem::Field,
                params: None,
            }),
            Class::Gradient => {
                let sys = self.prepared.linear().expect("linear plant");
                let obj = reverse_engineer_o(sys, &self.tol).map_err(AppError::stage("reverse"))?;
                let params = extract_params_o(&obj, &self.tol).map_err(AppError::stage("reverse"))?;
                Ok(Reverse {
                    problem: Problem::Quadratic(obj),
                    params: Some(params),
                })
            }
            Class::PrimalDual => {
                let sys = self.prepared.partitioned()?;
                let steps = self.prepared.steps.unwrap_or_default();
                let prob = reverse_engineer_s(&sys, steps, &self.tol).map_err(AppError::stage("reverse"))?;
                let params = extract_params_s(&prob, &self.tol).map_err(AppError::stage("reverse"))?;
                Ok(Reverse {
                    problem: Problem::Saddle(prob),
                    params: Some(params),
                })
            }
        }
    }

    pub fn redesign(&self, r: &Reverse) -> Result<Vec<Variant>> {
        let mut out: Vec<Variant> = Vec::new();
        for spec in &self.config.redesign {
            let system = match (spec.method, &r.problem) {
                (Method::Hb, _) => hb_redesign(&self.prepared.plant, r.params.as_ref(), spec),
                (Method::Agd, _) => agd_redesign(&self.prepared.plant, r.params.as_ref(), spec),
                (Method::Al, Problem::Saddle(p)) => al_redesign(&self.prepared.partitioned()?, p, spec.alpha),
                (Method::Hatx, Problem::Saddle(p)) => {
                    hatx_redesign(&self.prepared.partitioned()?, p, spec.alpha, &self.tol)
                }
                _ => return Err(AppError::Config(format!("{} needs a primal-dual system", spec.method.name()))),
            }
            .map_err(AppError::stage("redesign"))?;
            let base = spec.method.name();
            let taken = out.iter().filter(|v| v.name.starts_with(base)).count();
            let name = if taken == 0 { base.to_string() } else { format!("{base}{}", taken + 1) };
            out.push(Variant { name, system });
        }
        Ok(out)
    }

    /// Original plus every variant; rollouts run on scoped threads.
    pub fn simulate(&self, variants: &[Variant]) -> Result<Vec<Run>> {
        let p = &self.prepared;
        let original = Iteration::Original {
            plant: &p.plant,
            partition: p.partition,
        };
        let mut jobs: Vec<(String, Iteration<'_>)> = vec![(String::from("original"), original)];
        jobs.extend(variants.iter().map(|v| (v.name.clone(), Iteration::Redesigned(&v.system))));
        let results: Vec<(String, retrofit_core::Result<Trajectory>)> = thread::scope(|s| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|(name, it)| s.spawn(move || (name, simulate(it, &p.x0, &p.opts))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("rollout thread")).collect()
        });
        results
            .into_iter()
            .map(|(name, t)| {
                t.map(|trajectory| Run { name, trajectory })
                    .map_err(AppError::stage("simulate"))
            })
            .collect()
    }

    /// Segment boundaries: each event starts a new segment at its step.
    fn segments(&self, len: usize) -> Vec<(usize, usize, Vec<&Mutation>)> {
        let events = self.prepared.opts.schedule.as_ref().map(|s| &s.events[..]).unwrap_or(&[]);
        let mut out = Vec::new();
        let mut start = 0;
        let mut applied: Vec<&Mutation> = Vec::new();
        for ev in events.iter().filter(|e| e.step < len) {
            out.push((start, (ev.step + 1).min(len), applied.clone()));
            applied.push(&ev.mutation);
            start = ev.step;
        }
        out.push((start, len, applied));
        out
    }

    fn reference(&self, mutations: &[&Mutation], original: &[Vector]) -> (Vector, &'static str) {
        let fallback = || (original.last().cloned().unwrap_or_default(), "original_limit");
        match &self.prepared.plant {
            Plant::Linear(sys) => {
                let mut sys = sys.clone();
                for m in mutations {
                    if let Mutation::Input { w } = m {
                        match sys.with_input(w.clone()) {
                            Ok(s) => sys = s,
                            Err(_) => return fallback(),
                        }
                    }
                }
                match fixed_point(&sys, &self.tol) {
                    Ok(fp) if fp.unique => (fp.x, "fixed_point"),
                    _ => fallback(),
                }
            }
            Plant::Field(GradientField::Congestion(field)) => {
                let mut field = field.clone();
                for m in mutations {
                    if let Mutation::Capacities { c } = m {
                        field.capacities = c.clone();
                    }
                }
                let guess = original.first().cloned().unwrap_or_default();
                match congestion_equilibrium(&field, &guess) {
                    Ok(x) => (x, "equilibrium"),
                    Err(_) => fallback(),
                }
            }
            Plant::Field(_) => fallback(),
        }
    }

    pub fn metrics(&self, runs: &[Run]) -> Result<Vec<VariantMetrics>> {
        let original = &runs[0].trajectory.states;
        let thresholds = &self.config.run.thresholds;
        let plan: Vec<_> = self
            .segments(original.len())
            .into_iter()
            .map(|(start, end, muts)| {
                let (reference, kind) = self.reference(&muts, &original[start..end.min(original.len())]);
                (start, end, reference, kind)
            })
            .collect();
        let mut out = Vec::new();
        for run in runs {
            let states = &run.trajectory.states;
            let mut segments = Vec::new();
            for (start, end, reference, kind) in &plan {
                let end = (*end).min(states.len());
                if *start >= end {
                    continue;
                }
                let metrics = error_metrics(&states[*start..end], reference, thresholds)
                    .map_err(AppError::stage("metrics"))?;
                segments.push(Segment {
                    start: *start,
                    end,
                    reference: reference.clone(),
                    reference_kind: kind,
                    metrics,
                });
            }
            let agents = match (self.prepared.agents, plan.last()) {
                (Some((s, n)), Some((_, _, reference, _))) => {
                    let ys: Vec<Vector> = states.iter().map(|x| x.rows(s, n).into_owned()).collect();
                    let error = error_metrics(&ys, &reference.rows(s, n).into_owned(), thresholds)
                        .map_err(AppError::stage("metrics"))?;
                    Some(AgentMetrics {
                        error,
                        consensus: consensus_metrics(&ys),
                    })
                }
                _ => None,
            };
            out.push(VariantMetrics {
                variant: run.name.clone(),
                steps: states.len().saturating_sub(1),
                diverged_at: run.trajectory.diverged_at,
                segments,
                agents,
            });
        }
        Ok(out)
    }

    pub fn certify(&self, r: &Reverse, variants: &[Variant], runs: &[Run]) -> Vec<CertificateEntry> {
        let first_end = self.segments(runs[0].trajectory.len())[0].1;
        let mut out = Vec::new();
        let params = match r.params {
            Some(p) => p,
            None => {
                for run in runs {
                    out.push(CertificateEntry::skipped(
                        &run.name,
                        "no closed-form (mu, L) for a nonlinear plant",
                    ));
                }
                return out;
            }
        };
        match &r.problem {
            Problem::Quadratic(obj) => {
                let eigs = linalg::sym_eigenvalues(&obj.scaled_hessian());
                out.push(self.certify_gd(obj, &params, &runs[0].trajectory.states[..first_end]));
                for (v, run) in variants.iter().zip(&runs[1..]) {
                    out.push(self.certify_momentum(v, obj, &params, &eigs, &run.trajectory, first_end));
                }
            }
            Problem::Saddle(prob) => {
                out.push(self.certify_pdg(prob, &params, &runs[0].trajectory, first_end));
                for v in variants {
                    out.push(CertificateEntry::skipped(
                        &v.name,
                        "no rate certificate for this retrofit; see the conditioning analysis in the redesign report",
                    ));
                }
            }
            Problem::Field => unreachable!("field problems carry no params"),
        }
        out
    }

    fn certify_gd(&self, obj: &QuadraticObjective, params: &FunctionClassParams, states: &[Vector]) -> CertificateEntry {
        let mut cert = match gd_certificate(params, 1.0) {
            Ok(c) => c,
            Err(e) => return CertificateEntry::skipped("original", e.to_string()),
        };
        let x0 = &states[0];
        let x_star = obj.closest_minimizer(x0);
        let norm = |v: &Vector| obj.metric_norm(v);
        let check = match cert.bound {
            Bound::Geometric { .. } => check_distance(&cert, states, &x_star, &norm, 0, PATH_SLACK, true),
            _ => {
                let r0 = norm(&(x0 - &x_star));
                check_function_gap(&cert, states, obj, obj.value(&x_star), r0 * r0, PATH_SLACK)
            }
        };
        cert.push_check(check);
        CertificateEntry {
            variant: String::from("original"),
            certificate: Some(cert),
            note: None,
        }
    }

    fn certify_momentum(
        &self,
        v: &Variant,
        obj: &QuadraticObjective,
        params: &FunctionClassParams,
        eigs: &[f64],
        traj: &Trajectory,
        first_end: usize,
    ) -> CertificateEntry {
        let sys = &v.system;
        let eps = sys.report.eps_star.unwrap_or(1.0);
        let spec = &sys.spec;
        let cert = match spec.method {
            Method::Hb => hb_certificate(params),
            _ => agd_certificate(params, eps, spec.beta_schedule),
        };
        let mut cert = match cert {
            Ok(c) => c,
            Err(e) => return CertificateEntry::skipped(&v.name, e.to_string()),
        };
        match (spec.method, spec.beta_schedule) {
            (Method::Agd, BetaSchedule::Nesterov) => {
                let y = traj.aux.get("y").map(|s| &s[..first_end.min(s.len())]).unwrap_or(&[]);
                let x0 = &traj.states[0];
                let x_star = obj.closest_minimizer(x0);
                let r0 = obj.metric_norm(&(x0 - &x_star));
                let chk = check_function_gap(&cert, y, obj, obj.value(&x_star), r0 * r0, PATH_SLACK);
                cert.push_check(chk);
            }
            (method, _) => {
                let beta = sys.report.beta.unwrap_or(0.0);
                let rho = momentum_spectral_radius(eigs, eps, beta, method == Method::Agd);
                cert.push_check(check_spectral(&cert, rho));
            }
        }
        CertificateEntry {
            variant: v.name.clone(),
            certificate: Some(cert),
            note: None,
        }
    }

    fn certify_pdg(
        &self,
        prob: &SaddleProblem,
        params: &FunctionClassParams,
        traj: &Trajectory,
        first_end: usize,
    ) -> CertificateEntry {
        let mut cert = match pdg_certificate(prob, params, None, prob.eps1, prob.eps2, &self.tol) {
            Ok(c) => c,
            Err(e) => return CertificateEntry::skipped("original", e.to_string()),
        };
        if !cert.feasible {
            return CertificateEntry {
                variant: String::from("original"),
                certificate: Some(cert),
                note: Some(String::from("step sizes give c >= 1 or gamma out of range; no decay asserted")),
            };
        }
        if prob.dual_metric.is_some() || self.prepared.opts.delay.as_ref().is_some_and(|d| d.delay_steps > 0) {
            return CertificateEntry {
                variant: String::from("original"),
                certificate: Some(cert),
                note: Some(String::from(
                    "potential decay is stated for the undelayed iteration with identity dual scaling; not checked",
                )),
            };
        }
        let mut head = traj.clone();
        head.states.truncate(first_end);
        match potential_trace(prob, &head, cert.constant("gamma").unwrap_or(0.0)) {
            Ok(trace) => {
                let chk = check_potential(&cert, &trace, POTENTIAL_SLACK);
                cert.push_check(chk);
                CertificateEntry {
                    variant: String::from("original"),
                    certificate: Some(cert),
                    note: None,
                }
            }
            Err(e) => CertificateEntry {
                variant: String::from("original"),
                certificate: Some(cert),
                note: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Status {
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub start: usize,
    pub end: usize,
    pub reference_kind: &'static str,
    /// Steps (from the segment start) to enter and stay within each threshold.
    pub settled: Vec<(f64, Option<usize>)>,
    pub first_reach: Vec<(f64, Option<usize>)>,
    pub total_variation: f64,
    pub final_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
    pub segments: Vec<SegmentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_disagreement: Option<f64>,
}

impl From<&VariantMetrics> for VariantSummary {
    fn from(m: &VariantMetrics) -> Self {
        VariantSummary {
            variant: m.variant.clone(),
            steps: m.steps,
            diverged_at: m.diverged_at,
            segments: m
                .segments
                .iter()
                .map(|s| SegmentSummary {
                    start: s.start,
                    end: s.end,
                    reference_kind: s.reference_kind,
                    settled: s.metrics.settled.clone(),
                    first_reach: s.metrics.first_reach.clone(),
                    total_variation: s.metrics.total_variation,
                    final_error: s.metrics.final_error,
                })
                .collect(),
            final_disagreement: m.agents.as_ref().map(|a| a.consensus.final_disagreement),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub source: String,
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reverse: Option<Reverse>,
    pub redesigns: Vec<RedesignEntry>,
    pub certificates: Vec<CertificateEntry>,
    pub variants: Vec<VariantSummary>,
    pub status: Status,
}

/// Everything a full run produced, including partial results on failure.
pub struct Outcome {
    pub report: Report,
    pub runs: Vec<Run>,
    pub metrics: Vec<VariantMetrics>,
    pub error: Option<AppError>,
}

impl Pipeline {
    pub fn run(&self) -> Outcome {
        let mut out = Outcome {
            report: Report {
                source: self.prepared.label.clone(),
                tolerances: self.tol,
                classification: None,
                reverse: None,
                redesigns: Vec::new(),
                certificates: Vec::new(),
                variants: Vec::new(),
                status: Status {
                    exit_code: 0,
                    message: String::from("ok"),
                },
            },
            runs: Vec::new(),
            metrics: Vec::new(),
            error: None,
        };
        if let Err(e) = self.run_into(&mut out) {
            out.report.status = Status {
                exit_code: e.exit_code(),
                message: e.to_string(),
            };
            out.error = Some(e);
        }
        out
    }

    fn run_into(&self, out: &mut Outcome) -> Result<()> {
        let c = self.classify();
        let c = match c {
            Err(AppError::Rejected { class, reasons }) => {
                // keep the verdict in the report
                if let Some(sys) = self.prepared.linear() {
                    out.report.classification = Some(Classification {
                        class: if class == 'S' { Class::PrimalDual } else { Class::Gradient },
                        verdict: Some(classify(sys, self.prepared.partition, &self.tol)),
                    });
                }
                return Err(AppError::Rejected { class, reasons });
            }
            other => other?,
        };
        out.report.classification = Some(c.clone());
        let r = self.reverse(&c)?;
        out.report.reverse = Some(r.clone());
        let variants = self.redesign(&r)?;
        out.report.redesigns = variants.iter().map(RedesignEntry::from).collect();
        out.runs = self.simulate(&variants)?;
        out.metrics = self.metrics(&out.runs)?;
        out.report.variants = out.metrics.iter().map(VariantSummary::from).collect();
        out.report.certificates = self.certify(&r, &variants, &out.runs);
        if let Some(run) = out.runs.iter().find(|r| r.trajectory.diverged_at.is_some()) {
            return Err(AppError::Diverged {
                variant: run.name.clone(),
                step: run.trajectory.diverged_at.unwrap_or_default(),
            });
        }
        let failures: Vec<String> = out.report.certificates.iter().flat_map(|c| c.failures()).collect();
        if self.config.run.certify && !failures.is_empty() {
            return Err(AppError::Certificate(failures));
        }
        Ok(())
    }
}
