//! Acceptance suite: one line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::Instant;

use rand::Rng;
use retrofit::config::Config;
use retrofit::pipeline::{Pipeline, VariantMetrics};
use retrofit_core::classify::{classify_o, classify_s, extract_params, ReasonCode};
use retrofit_core::linalg::{spectral_radius, sym_extremes};
use retrofit_core::rates::*;
use retrofit_core::redesign::*;
use retrofit_core::simulate::{simulate, GradientField, Plant, RunOptions};
use retrofit_core::{Error, FunctionClassParams, LtiSystem, Matrix, QuadraticObjective, Tolerances, Vector};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn euclid(v: &Vector) -> f64 {
    v.norm()
}

fn quadratic(r: &mut rand_chacha::ChaCha8Rng, eigs: &[f64]) -> QuadraticObjective {
    let q = common::sym_with_spectrum(r, eigs);
    let rv = &q * common::gaussian_vector(r, eigs.len());
    QuadraticObjective::euclidean(q, rv)
}

fn gd_pathwise() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(1001);
    let mut worst = f64::NEG_INFINITY;
    let mut failed = 0;
    for _ in 0..200 {
        let n = r.gen_range(1..=20);
        let (mu, l) = common::mu_l(&mut r);
        let eigs = common::spectrum_between(&mut r, n, mu, l);
        let obj = quadratic(&mut r, &eigs);
        let eps = 2.0 / (mu + l);
        let cert = gd_certificate(&FunctionClassParams::new(mu, l).unwrap(), eps).unwrap();
        let plant = Plant::Field(GradientField::Quadratic { objective: obj.clone(), eps });
        let x0 = common::gaussian_vector(&mut r, n);
        let traj = simulate(&plant, &x0, &RunOptions::steps(1000)).unwrap();
        let x_star = obj.closest_minimizer(&x0);
        let chk = check_distance(&cert, &traj.states, &x_star, &euclid, 0, 1e-10, true);
        worst = worst.max(chk.worst_excess);
        failed += usize::from(!chk.passed);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failed == 0 && secs < 10.0,
        format!("200 instances, {failed} violations, worst excess {worst:.3e}, {secs:.2}s"),
    )
}

fn sublinear_bounds() -> Outcome {
    let mut r = common::rng(1002);
    let (mut gd_fail, mut agd_fail, mut order_fail, mut ordered) = (0, 0, 0, 0);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        let n = r.gen_range(2..=20);
        let zeros = r.gen_range(1..n);
        let l: f64 = r.gen_range(0.1..10.0);
        // positive eigenvalues log-uniform over three decades so some instances are ill conditioned
        let mut eigs: Vec<f64> = (0..n)
            .map(|i| if i < zeros { 0.0 } else { l * 10f64.powf(-r.gen_range(0.0..3.0)) })
            .collect();
        eigs[n - 1] = l;
        let obj = quadratic(&mut r, &eigs);
        let params = FunctionClassParams::new(0.0, l).unwrap();
        let eps = 1.0 / l;
        let x0 = common::gaussian_vector(&mut r, n);
        let x_star = obj.closest_minimizer(&x0);
        let r0_sq = (&x0 - &x_star).norm_squared();
        let f_star = obj.value(&x_star);
        let plant = Plant::Field(GradientField::Quadratic { objective: obj.clone(), eps });

        let gd = simulate(&plant, &x0, &RunOptions::steps(1000)).unwrap();
        let cert = gd_certificate(&params, eps).unwrap();
        gd_fail += usize::from(!check_function_gap(&cert, &gd.states, &obj, f_star, r0_sq, 1e-10).passed);

        let spec = RedesignSpec {
            beta_schedule: BetaSchedule::Nesterov,
            retune_step: false,
            ..RedesignSpec::new(Method::Agd)
        };
        let red = agd_redesign(&plant, Some(&params), &spec).unwrap();
        let agd = simulate(&red, &x0, &RunOptions::steps(1000)).unwrap();
        let cert = agd_certificate(&params, eps, BetaSchedule::Nesterov).unwrap();
        let y = &agd.aux["y"];
        agd_fail += usize::from(!check_function_gap(&cert, y, &obj, f_star, r0_sq, 1e-10).passed);

        let smallest = eigs.iter().copied().filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
        if l / smallest >= 100.0 {
            ordered += 1;
            let ratio = (obj.value(&y[100]) - f_star) / (obj.value(&gd.states[100]) - f_star);
            worst_ratio = worst_ratio.max(ratio);
            order_fail += usize::from(!(ratio <= 0.1));
        }
    }
    outcome(
        gd_fail == 0 && agd_fail == 0 && order_fail == 0 && ordered > 0,
        format!(
            "GD violations {gd_fail}/100, AGD violations {agd_fail}/100; AGD/GD gap at k=100 on {ordered} instances with kappa_eff >= 100: worst ratio {worst_ratio:.3}, {order_fail} above 0.1"
        ),
    )
}

fn hb_spectral() -> Outcome {
    let mut r = common::rng(1003);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_polyak = f64::NEG_INFINITY;
    let mut failed = 0;
    for _ in 0..200 {
        let n = r.gen_range(1..=10);
        let (mu, l) = common::mu_l(&mut r);
        if mu == l {
            continue;
        }
        let eigs = common::spectrum_between(&mut r, n, mu, l);
        let q = common::sym_with_spectrum(&mut r, &eigs);
        let sys = LtiSystem::with_offset(Matrix::identity(n, n) - &q, Vector::zeros(n)).unwrap();
        let params = FunctionClassParams::new(mu, l).unwrap();
        let cert = hb_certificate(&params).unwrap();
        let plant = Plant::Linear(sys);
        for tuning in [HbTuning::AsStated, HbTuning::Polyak] {
            let spec = RedesignSpec {
                hb_tuning: tuning,
                ..RedesignSpec::new(Method::Hb)
            };
            let (m, _) = hb_redesign(&plant, Some(&params), &spec).unwrap().extended_iteration().unwrap();
            let chk = check_spectral(&cert, spectral_radius(&m));
            if tuning == HbTuning::AsStated {
                worst = worst.max(chk.worst_excess);
                failed += usize::from(!chk.passed);
            } else {
                worst_polyak = worst_polyak.max(chk.worst_excess);
            }
        }
    }
    outcome(
        failed == 0,
        format!(
            "{failed}/200 exceed the ratio by more than 1e-8 (worst excess {worst:.3e}); with beta = ratio^2 the worst excess is {worst_polyak:.3e}"
        ),
    )
}

fn potential_decay() -> Outcome {
    let tol = Tolerances::default();
    let mut r = common::rng(1004);
    let (mut decay_fail, mut balance_fail, mut bound_fail) = (0, 0, 0);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..100 {
        let mut prob = common::saddle(&mut r, 1.0, 1.0);
        prob.assert_full_row_rank(&tol).unwrap();
        let params = extract_params(&prob.q, &tol).unwrap();
        let t = optimal_pdg_steps(&prob, &params, &tol).unwrap();
        let (smin, smax) = prob.constraint_sigmas();
        let gamma = params.mu.powi(2) * smin.powi(2) / (2.0 * params.l_lip * smax.powi(3));
        prob.eps1 = t.eps1;
        prob.eps2 = t.eps2;
        let cert = pdg_certificate(&prob, &params, Some(gamma), t.eps1, t.eps2, &tol).unwrap();
        let sys = prob.to_system();
        let plant = Plant::Linear(sys.base.clone());
        let x0 = common::gaussian_vector(&mut r, sys.base.dim());
        let traj = simulate(
            retrofit_core::simulate::Iteration::Original {
                plant: &plant,
                partition: Some(sys.n1),
            },
            &x0,
            &RunOptions::steps(300),
        )
        .unwrap();
        let trace = potential_trace(&prob, &traj, gamma).unwrap();
        decay_fail += usize::from(!check_potential(&cert, &trace, 1e-12).passed);
        let gap = (t.c1 - t.c2).abs();
        worst_gap = worst_gap.max(gap);
        balance_fail += usize::from(gap > 1e-12);
        let (kappa, tau) = (params.l_lip / params.mu, (smax / smin).powi(2));
        bound_fail += usize::from(!(t.c <= 1.0 - 1.0 / (kappa.powi(3) * (4.0 * tau * tau + 2.0 * tau + 1.0))));
    }
    outcome(
        decay_fail + balance_fail + bound_fail == 0,
        format!(
            "decay violations {decay_fail}/100, |c1 - c2| worst {worst_gap:.2e} ({balance_fail} above 1e-12), condition-bound violations {bound_fail}/100"
        ),
    )
}

fn dual_hessian_bracket() -> Outcome {
    let mut r = common::rng(1005);
    let mut failed = 0;
    for _ in 0..50 {
        let prob = common::saddle(&mut r, 1.0, 1.0);
        let eig = prob.q.clone().symmetric_eigen().eigenvalues;
        let (mu, l) = (eig.min(), eig.max());
        let bbt = (&prob.b_mat * prob.b_mat.transpose()).symmetric_eigen().eigenvalues;
        let (s2min, s2max) = (bbt.min(), bbt.max());
        let qinv = prob.q.clone().try_inverse().unwrap();
        let h = &prob.b_mat * qinv * prob.b_mat.transpose();
        let he = ((&h + h.transpose()) * 0.5).symmetric_eigen().eigenvalues;
        let (lo, hi) = (s2min / l, s2max / mu);
        let slack = 1e-10 * hi;
        failed += usize::from(!(he.min() >= lo - slack && he.max() <= hi + slack));
    }
    outcome(failed == 0, format!("{failed}/50 instances with an eigenvalue outside the bracket"))
}

fn kappa_h_bracket() -> Outcome {
    let mut r = common::rng(1006);
    let mut failed = 0;
    for _ in 0..100 {
        let n = r.gen_range(1..=10);
        let (mu, l) = common::mu_l(&mut r);
        let alpha: f64 = r.gen_range(0.01..20.0);
        let eigs = common::spectrum_between(&mut r, n, mu, l);
        let hf = common::sym_with_spectrum(&mut r, &eigs);
        let (lo, hi) = kappa_h_bounds(&FunctionClassParams::new(mu, l).unwrap(), alpha).unwrap();
        let exact = common::spd_cond(&hat_hessian(&hf, alpha));
        failed += usize::from(!(exact >= lo * (1.0 - 1e-9) && exact <= hi * (1.0 + 1e-9)));
    }
    let (lo, hi) = kappa_h_bounds(&FunctionClassParams::new(1.0, 4.0).unwrap(), 2.0).unwrap();
    let spot = (lo - 3.8936).abs() <= 1e-3 && (hi - 15.574).abs() <= 1e-3;
    outcome(
        failed == 0 && spot,
        format!("{failed}/100 outside the bracket; mu=1, L=4, alpha=2 gives [{lo:.4}, {hi:.3}]"),
    )
}

fn classification_oracle() -> Outcome {
    let tol = Tolerances::default();
    let mut r = common::rng(1007);
    let mut members_missed = 0;
    for _ in 0..200 {
        let n = r.gen_range(1..=10);
        let rank = r.gen_range(1..=n);
        let inst = common::gradient_instance(&mut r, n, rank);
        members_missed += usize::from(!classify_o(&inst.sys, &tol).member);
    }
    let mut non_members_missed = 0;
    for i in 0..200 {
        let (d, expect) = match i % 3 {
            0 => {
                let im = r.gen_range(0.1..0.5);
                (common::real_block_diag(&[0.4, 1.2], &[(0.6, im)]), ReasonCode::ComplexSpectrum)
            }
            1 => {
                let neg = -r.gen_range(0.1..0.5);
                (common::real_block_diag(&[0.4, neg, 1.0], &[]), ReasonCode::Unstable)
            }
            _ => {
                let mut j = Matrix::from_diagonal(&Vector::from_row_slice(&[0.5, 0.5, 1.5]));
                j[(0, 1)] = 1.0;
                (j, ReasonCode::NotDiagonalizable)
            }
        };
        let m = common::similar_to(&mut r, &d);
        let n = m.nrows();
        let sys = LtiSystem::with_offset(Matrix::identity(n, n) - m, Vector::from_element(n, 1.0)).unwrap();
        let v = classify_o(&sys, &tol);
        non_members_missed += usize::from(v.member || !v.reasons.contains(&expect));
    }
    let mut s_missed = 0;
    let mut worst_residual: f64 = 0.0;
    for _ in 0..50 {
        let mut prob = common::saddle(&mut r, 1.0, 1.0);
        let eig = prob.q.clone().symmetric_eigen().eigenvalues;
        let smax = (&prob.b_mat * prob.b_mat.transpose()).symmetric_eigen().eigenvalues.max();
        prob.eps1 = r.gen_range(0.1..1.0) / eig.max();
        prob.eps2 = r.gen_range(0.05..0.5) * eig.min() / smax;
        let v = classify_s(&prob.to_system(), &tol);
        match &v.witness {
            Some(w) if v.member => {
                worst_residual = worst_residual.max(w.coupling_residual);
                s_missed += usize::from(w.coupling_residual > 1e-8);
            }
            _ => s_missed += 1,
        }
    }
    outcome(
        members_missed + non_members_missed + s_missed == 0,
        format!(
            "class O members missed {members_missed}/200, non-members mislabeled {non_members_missed}/200, class S missed {s_missed}/50 (worst witness residual {worst_residual:.2e})"
        ),
    )
}

fn fixed_point_of(m: &Matrix, c: &Vector) -> Vector {
    let n = m.nrows();
    (Matrix::identity(n, n) - m).lu().solve(c).unwrap()
}

fn optimum_preservation() -> Outcome {
    let tol = Tolerances::default();
    let mut r = common::rng(1008);
    let (mut failed, mut unstable) = (0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut prob = common::saddle(&mut r, 1.0, 1.0);
        let eig = prob.q.clone().symmetric_eigen().eigenvalues;
        let s2max = (&prob.b_mat * prob.b_mat.transpose()).symmetric_eigen().eigenvalues.max();
        prob.eps1 = 0.5 / eig.max();
        prob.eps2 = 0.2 * eig.min() / s2max;
        let (x, lam, _) = prob.kkt_solve();
        let sys = prob.to_system();
        let (k, n) = (sys.n1, x.len());
        let alpha_al = r.gen_range(0.1..1.0) * eig.max() / s2max;
        let alpha_hat = r.gen_range(0.1..1.0);
        for red in [
            al_redesign(&sys, &prob, alpha_al).unwrap(),
            hatx_redesign(&sys, &prob, alpha_hat, &tol).unwrap(),
        ] {
            let (m, c) = red.extended_iteration().unwrap();
            unstable += usize::from(spectral_radius(&m) >= 1.0);
            let z = fixed_point_of(&m, &c);
            let err = ((z.rows(0, k) - &lam).norm() / (1.0 + lam.norm()))
                .max((z.rows(k, n) - &x).norm() / (1.0 + x.norm()));
            worst = worst.max(err);
            failed += usize::from(err > 1e-8);
        }
    }
    outcome(
        failed + unstable == 0,
        format!("{failed}/200 fixed points off by more than 1e-8 (worst {worst:.2e}), {unstable} unstable redesigns"),
    )
}

fn bundled(name: &str, text: &str) -> (Vec<VariantMetrics>, f64) {
    let start = Instant::now();
    let cfg = Config::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
    let p = Pipeline::new(cfg, Tolerances::default()).unwrap();
    let out = p.run();
    assert!(out.error.is_none(), "{name}: {:?}", out.error);
    (out.metrics, start.elapsed().as_secs_f64())
}

fn congestion_reproduction() -> Outcome {
    let (metrics, secs) = bundled("congestion", include_str!("../configs/congestion.json"));
    let settle = |m: &VariantMetrics, seg: usize| m.segments[seg].metrics.settled_at(1e-3);
    let od = &metrics[0];
    let mut ok = secs < 5.0;
    let mut parts = Vec::new();
    for m in &metrics[1..] {
        for seg in 0..2 {
            let (a, b) = (settle(m, seg), settle(od, seg));
            ok &= matches!((a, b), (Some(a), Some(b)) if a < b);
        }
        parts.push(format!(
            "{} {:?}/{:?} vs original {:?}/{:?}",
            m.variant,
            settle(m, 0),
            settle(m, 1),
            settle(od, 0),
            settle(od, 1)
        ));
    }
    outcome(ok, format!("steps to 1e-3 before/after the capacity change: {}; {secs:.2}s", parts.join(", ")))
}

fn pi_reproduction() -> Outcome {
    let (metrics, secs) = bundled("pi", include_str!("../configs/pi.json"));
    let agents = |m: &VariantMetrics| m.agents.clone().unwrap();
    let od = agents(&metrics[0]);
    let od_settle = od.error.settled_at(1e-3);
    let mut ok = secs < 5.0;
    let mut parts = Vec::new();
    for m in &metrics {
        let a = agents(m);
        ok &= a.consensus.final_disagreement <= 1e-6;
        if m.variant != "original" {
            ok &= matches!((a.error.settled_at(1e-3), od_settle), (Some(x), Some(y)) if x <= y);
        }
        if m.variant == "hatx" {
            ok &= metrics.iter().all(|o| agents(o).error.total_variation >= a.error.total_variation);
        }
        parts.push(format!(
            "{} settles at {:?}, TV {:.1}, disagreement {:.1e}",
            m.variant,
            a.error.settled_at(1e-3),
            a.error.total_variation,
            a.consensus.final_disagreement
        ));
    }
    outcome(ok, format!("{}; {secs:.2}s", parts.join("; ")))
}

fn convexification() -> Outcome {
    let tol = Tolerances::default();
    let mut r = common::rng(1011);
    let (mut failed, mut missed) = (0, 0);
    for _ in 0..50 {
        let n = r.gen_range(2..=8);
        let m = r.gen_range(1..n);
        let b = common::gaussian_matrix(&mut r, m, n);
        let z = retrofit_core::linalg::nullspace(&b, 1e-10);
        let bt = b.transpose();
        let dz = Matrix::from_diagonal(&Vector::from_fn(z.ncols(), |_, _| r.gen_range(0.5..2.0)));
        let hf = &z * dz * z.transpose() - &bt * &b * r.gen_range(0.5..2.0);
        let hf = (&hf + hf.transpose()) * 0.5;
        if sym_extremes(&hf).0 >= 0.0 {
            failed += 1;
            continue;
        }
        match convexification_alpha(&hf, &b, &tol) {
            Ok(a) => failed += usize::from(!(sym_extremes(&(&hf + &bt * &b * (1.01 * a))).0 > 0.0)),
            Err(_) => failed += 1,
        }
        let v = z.column(0).into_owned();
        let bad = &hf - &v * v.transpose() * 10.0;
        missed += usize::from(!matches!(convexification_alpha(&bad, &b, &tol), Err(Error::NotConvexifiable { .. })));
    }
    outcome(
        failed + missed == 0,
        format!("{failed}/50 convexifiable instances not fixed, {missed}/50 violating instances accepted"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient descent linear rate holds pathwise", gd_pathwise),
        ("sublinear GD and AGD bounds, AGD ahead at k = 100", sublinear_bounds),
        ("heavy-ball spectral radius within the stated rate", hb_spectral),
        ("primal-dual potential decays at balanced steps", potential_decay),
        ("dual Hessian eigenvalues bracketed", dual_hessian_bracket),
        ("hat-x Hessian condition number bracketed", kappa_h_bracket),
        ("classification matches constructed labels", classification_oracle),
        ("AL and hat-x keep the saddle point", optimum_preservation),
        ("congestion control: momentum converges faster", congestion_reproduction),
        ("PI consensus: AL and hat-x settle earlier, hat-x smoothest", pi_reproduction),
        ("convexification by augmented Lagrangian", convexification),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failures += usize::from(!o.passed);
        println!(
            "criterion {:>2} [{}] {name}: {}",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
