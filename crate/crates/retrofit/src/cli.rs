use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use retrofit_core::classify::classify;
use retrofit_core::redesign::{BetaSchedule, Method};
use serde::Serialize;

use crate::config::{tolerances_from_env, Config, Overrides};
use crate::error::{AppError, Result};
use crate::output;
use crate::pipeline::{CertificateEntry, Pipeline, RedesignEntry, VariantSummary};

#[derive(Parser, Debug)]
#[command(name = "retrofit", version, about = "Classify, reverse-engineer and accelerate LTI systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Test class membership and print the verdict
    Classify(Common),
    /// Print the optimization problem the system solves
    Reverse(Common),
    /// Print the retrofit coefficients and conditioning analysis
    Redesign(Common),
    /// Simulate the original and redesigned dynamics, writing CSV and metrics
    Simulate(Common),
    /// Evaluate rate certificates; exit 4 if an asserted check fails
    Certify(Common),
    /// Run every stage and write report.json plus artifacts
    Pipeline(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the configured redesigns with a single method
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub retune_step: Option<bool>,
    #[arg(long, value_enum)]
    pub beta_schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub plot: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MethodArg {
    Hb,
    Agd,
    Al,
    Hatx,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ScheduleArg {
    Constant,
    Nesterov,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            method: self.method.map(|m| match m {
                MethodArg::Hb => Method::Hb,
                MethodArg::Agd => Method::Agd,
                MethodArg::Al => Method::Al,
                MethodArg::Hatx => Method::Hatx,
            }),
            beta: self.beta,
            alpha: self.alpha,
            retune_step: self.retune_step,
            beta_schedule: self.beta_schedule.map(|s| match s {
                ScheduleArg::Constant => BetaSchedule::Constant,
                ScheduleArg::Nesterov => BetaSchedule::Nesterov,
            }),
            steps: self.steps,
            out: self.out.clone(),
            plot: self.plot,
        }
    }

    fn pipeline(&self) -> Result<Pipeline> {
        let mut cfg = Config::load(&self.config)?;
        cfg.apply(&self.overrides())?;
        Pipeline::new(cfg, tolerances_from_env()?)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(AppError::io("<stdout>"))
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Classify(c) => {
            let p = c.pipeline()?;
            match p.classify() {
                Ok(verdict) => print_json(&verdict).map(|_| 0),
                Err(e @ AppError::Rejected { .. }) => {
                    if let Some(sys) = p.prepared.linear() {
                        print_json(&classify(sys, p.prepared.partition, &p.tol))?;
                    }
                    Err(e)
                }
                Err(e) => Err(e),
            }
        }
        Command::Reverse(c) => {
            let p = c.pipeline()?;
            let r = p.reverse(&p.classify()?)?;
            print_json(&r).map(|_| 0)
        }
        Command::Redesign(c) => {
            let p = c.pipeline()?;
            let r = p.reverse(&p.classify()?)?;
            let entries: Vec<RedesignEntry> = p.redesign(&r)?.iter().map(RedesignEntry::from).collect();
            print_json(&entries).map(|_| 0)
        }
        Command::Simulate(c) => {
            let p = c.pipeline()?;
            let r = p.reverse(&p.classify()?)?;
            let variants = p.redesign(&r)?;
            let runs = p.simulate(&variants)?;
            let metrics = p.metrics(&runs)?;
            output::write_runs(&p.config.output.dir, &runs, &metrics, p.config.output.plot)?;
            let summary: Vec<VariantSummary> = metrics.iter().map(VariantSummary::from).collect();
            print_json(&summary)?;
            match runs.iter().find(|r| r.trajectory.diverged_at.is_some()) {
                Some(run) => Err(AppError::Diverged {
                    variant: run.name.clone(),
                    step: run.trajectory.diverged_at.unwrap_or_default(),
                }),
                None => Ok(0),
            }
        }
        Command::Certify(c) => {
            let p = c.pipeline()?;
            let r = p.reverse(&p.classify()?)?;
            let variants = p.redesign(&r)?;
            let runs = p.simulate(&variants)?;
            let certs: Vec<CertificateEntry> = p.certify(&r, &variants, &runs);
            print_json(&certs)?;
            let failures: Vec<String> = certs.iter().flat_map(|c| c.failures()).collect();
            if failures.is_empty() {
                Ok(0)
            } else {
                Err(AppError::Certificate(failures))
            }
        }
        Command::Pipeline(c) => {
            let p = c.pipeline()?;
            let outcome = p.run();
            let written = output::write_outcome(&p.config.output.dir, &outcome, p.config.output.plot)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            match outcome.error {
                Some(e) => Err(e),
                None => Ok(0),
            }
        }
    }
}
