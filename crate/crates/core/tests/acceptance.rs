//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::io::Write;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ddoco::costs::{ogd_step, quadratic_tracking, StageCost};
use ddoco::equilibria::{
    compute_steady_maps, is_equilibrium_by_definition, nearest_steady_input, EQUILIBRIUM_TOLERANCE,
    STEADY_RANK_CUTOFF,
};
use ddoco::hankel::{build_hankel, expand, trajectory_residual};
use ddoco::harness::{check_invariants, prepare, run_closed_loop, run_experiment, ExperimentConfig, NoiseCase};
use ddoco::numerics::{factorization_count, weighted_min_norm_solve, DEFAULT_FEASIBILITY};
use ddoco::{Controller, RankTolerance};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// 500 random systems: data-driven trajectory membership and expansion.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (mut worst_member, mut worst_expand) = (0.0f64, 0.0f64);
    for seed in 0..500u64 {
        let mut rng = common::rng(seed);
        let n = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=3);
        let p = rng.gen_range(1..=3);
        let sys = common::stable_system(seed, n, m, p, rng.gen_range(0.3..0.99));
        let depth = n + rng.gen_range(1..=3);
        let data = common::pe_data(&sys, depth + n, &mut rng);
        let hu = build_hankel(data.inputs(), depth).unwrap();
        let hy = build_hankel(data.outputs(), depth).unwrap();
        for _ in 0..3 {
            let cand = common::random_data(&sys, depth, &mut rng);
            let r = trajectory_residual(&cand, &hu, &hy, RankTolerance::auto()).unwrap();
            worst_member = worst_member.max(r);
            let alpha = common::uniform_vec(&mut rng, hu.ncols(), 1.0);
            let t = expand(&alpha, &hu, &hy).unwrap();
            worst_expand = worst_expand.max(sys.trajectory_mismatch(&t).unwrap());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_member <= 1e-8 && worst_expand <= 1e-8 && elapsed <= Duration::from_secs(60),
        format!(
            "max membership residual {worst_member:.2e}, max expansion mismatch {worst_expand:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// 1000 equilibrium / non-equilibrium cases and the nearest steady input.
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let steady_tol = RankTolerance::relative(STEADY_RANK_CUTOFF).unwrap();
    let (mut disagreements, mut worst_kkt, mut cases) = (0usize, 0.0f64, 0usize);
    let mut seed = 0u64;
    while cases < 1000 {
        seed += 1;
        let mut rng = common::rng(1_000_000 + seed);
        let n = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=3);
        let p = rng.gen_range(1..=3);
        let sys = common::stable_system(seed, n, m, p, rng.gen_range(0.3..0.95));
        let data = common::pe_data(&sys, 2 * n + 2, &mut rng);
        let maps = compute_steady_maps(&data, n, steady_tol).unwrap();
        let hu = build_hankel(data.inputs(), n + 1).unwrap();
        let hy = build_hankel(data.outputs(), n + 1).unwrap();
        for _ in 0..5 {
            let u = common::uniform_vec(&mut rng, m, 1.0);
            let (_, y_eq) = common::model_equilibrium(&sys, &u);
            let y = if rng.gen_bool(0.5) {
                y_eq
            } else {
                let d = common::uniform_vec(&mut rng, p, 1.0);
                &y_eq + &d * (rng.gen_range(0.1..1.0) / d.norm())
            };
            let by_model = sys.equilibrium_residual(&u, &y).unwrap() <= EQUILIBRIUM_TOLERANCE;
            let by_kernel = maps.is_equilibrium_within(&u, &y, EQUILIBRIUM_TOLERANCE);
            let scale = 1.0 + (u.norm_squared() + y.norm_squared()).sqrt();
            let by_def = is_equilibrium_by_definition(&hu, &hy, &u, &y, RankTolerance::auto()).unwrap()
                <= EQUILIBRIUM_TOLERANCE * scale;
            if by_model != by_kernel || by_model != by_def {
                disagreements += 1;
            }

            // Nearest steady input for a feasible output.
            let v = common::uniform_vec(&mut rng, m, 1.0);
            let (_, y_feasible) = common::model_equilibrium(&sys, &common::uniform_vec(&mut rng, m, 1.0));
            let u_s = nearest_steady_input(&maps, &v, &y_feasible, EQUILIBRIUM_TOLERANCE).unwrap();
            let kkt = common::nearest_input_kkt(maps.s_u(), maps.s_y(), &v, &y_feasible);
            worst_kkt = worst_kkt.max((&u_s - &kkt).norm() / (1.0 + kkt.norm()));
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        disagreements == 0 && worst_kkt <= 1e-8 && elapsed <= Duration::from_secs(30),
        format!(
            "{cases} cases, {disagreements} disagreements, max nearest-input error {worst_kkt:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// 200 consistent weighted minimum-norm problems against a KKT solve.
fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let mut rng = common::rng(2_000_000 + seed);
        let rows = rng.gen_range(2..=30);
        let cols = rows + rng.gen_range(1..=40);
        let rank = rows - rng.gen_range(0..=rows.min(3) - 1);
        let h = common::uniform_mat(&mut rng, rows, rank) * common::uniform_mat(&mut rng, rank, cols);
        let q_rows = rng.gen_range(cols - rank..=cols + 10).max(1);
        let q = common::uniform_mat(&mut rng, q_rows, cols);
        let g = &h * common::uniform_vec(&mut rng, cols, 1.0);
        let beta = weighted_min_norm_solve(&h, &g, &q, RankTolerance::auto(), DEFAULT_FEASIBILITY).unwrap();
        let oracle = common::weighted_kkt(&h, &q, &g);
        worst = worst.max((&beta - &oracle).norm() / oracle.norm().max(f64::MIN_POSITIVE));
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} over 200 triples"))
}

/// Noiseless closed-loop identities over T = 500.
fn criterion_4() -> Outcome {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut passed = true;
    for seed in 0..3 {
        let exp = run_experiment(&ExperimentConfig::reference(seed, 500)).unwrap();
        for c in check_invariants(&exp).unwrap() {
            if matches!(c.name, "recursive-predictions" | "terminal-output" | "prediction-soundness") {
                passed &= c.value <= 1e-6;
                match worst.iter_mut().find(|(n, _)| *n == c.name) {
                    Some(w) => w.1 = w.1.max(c.value),
                    None => worst.push((c.name, c.value)),
                }
            }
        }
    }
    let detail = worst.iter().map(|(n, v)| format!("{n} {v:.2e}")).collect::<Vec<_>>().join(", ");
    outcome(passed && worst.len() == 3, format!("{detail} (3 seeds, T = 500)"))
}

fn switch_config(seed: u64, horizon: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference(seed, horizon);
    cfg.schedule.switches = 5;
    cfg.schedule.switch_interval = Some(25);
    cfg
}

/// Convergence after the last switch.
fn criterion_5() -> Outcome {
    let last = 125;
    let (mut worst_30, mut worst_100) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let exp = run_experiment(&switch_config(seed, last + 150)).unwrap();
        let c = exp.schedule.at(last);
        for t in last + 30..=last + 150 {
            let e = (&exp.closed_loop.outputs[t] - &c.theta)
                .norm()
                .max((&exp.closed_loop.inputs[t] - &c.eta).norm());
            worst_30 = worst_30.max(e);
            if t >= last + 100 {
                worst_100 = worst_100.max(e);
            }
        }
    }
    outcome(
        worst_30 <= 1e-3 && worst_100 <= 1e-6,
        format!("max error {worst_30:.2e} after 30 steps, {worst_100:.2e} after 100 steps (20 seeds)"),
    )
}

/// Regret saturates in the horizon for a fixed number of switches.
fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let totals: Vec<f64> = [200, 400, 800]
            .iter()
            .map(|&t| run_experiment(&switch_config(seed, t)).unwrap().regret.total())
            .collect();
        let lo = totals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((hi - lo) / lo.abs().max(f64::MIN_POSITIVE));
    }
    outcome(worst < 0.01, format!("max relative spread of R(T) {worst:.2e} (10 seeds, K = 5)"))
}

/// Contraction of one gradient step.
fn criterion_7() -> Outcome {
    let mut rng = common::rng(7);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let dim = rng.gen_range(1..=5);
        let target = common::uniform_vec(&mut rng, dim, 10.0);
        let c = quadratic_tracking(target.clone(), target.clone()).unwrap();
        let params = c.curvature();
        let gamma = rng.gen_range(0.0..=1.0) * params.max_step_u();
        let z = common::uniform_vec(&mut rng, dim, 10.0);
        let next = ogd_step(&z, &c.grad_u(&z), gamma).unwrap();
        let bound = (1.0 - params.convexity_u * gamma) * (&z - &target).norm();
        worst = worst.max((&next - &target).norm() - bound);
    }
    outcome(worst <= 1e-12, format!("max excess over the contraction bound {worst:.2e} (10^4 samples)"))
}

/// Bounded outputs and tracking error under the two noise cases.
fn criterion_8() -> Outcome {
    let (mut worst_ratio, mut worst_bound) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let base = switch_config(seed, 300);
        let clean = run_experiment(&base).unwrap().summary(&base);
        for case in [2, 3] {
            let mut cfg = base.clone();
            cfg.noise = NoiseCase::from_case_number(case).unwrap();
            let exp = run_experiment(&cfg).unwrap();
            let s = exp.summary(&cfg);
            let theta_max = exp.schedule.segments().iter().map(|(_, c)| c.theta.norm()).fold(0.0, f64::max);
            worst_bound = worst_bound.max(s.max_output_norm / (10.0 * theta_max));
            worst_ratio = worst_ratio.max(s.mean_tracking_error / clean.mean_tracking_error);
        }
    }
    outcome(
        worst_bound <= 1.0 && worst_ratio <= 10.0,
        format!(
            "max ||y|| / (10 max ||theta||) {worst_bound:.3}, max noisy/noiseless mean error {worst_ratio:.2} (10 seeds)"
        ),
    )
}

/// A T = 1000 run in under two seconds, with no factorization online.
fn criterion_9() -> Outcome {
    let cfg = ExperimentConfig::reference(0, 1000);
    let start = Instant::now();
    let exp = run_experiment(&cfg).unwrap();
    let elapsed = start.elapsed();

    let (sys, _, mats, ctrl_cfg) = prepare(&cfg).unwrap();
    let mut plant = sys.clone();
    let warmup = plant.simulate(&vec![DVector::zeros(2); 5]).unwrap();
    let mut ctrl = Controller::new(mats, &ctrl_cfg, &warmup).unwrap();
    let before = factorization_count();
    let log = run_closed_loop(&mut ctrl, &mut plant, &exp.schedule, None::<(f64, &mut ChaCha8Rng)>).unwrap();
    let online = factorization_count() - before;
    outcome(
        elapsed < Duration::from_secs(2) && online == 0 && log.len() == 1001,
        format!("{:.3}s for T = 1000, {online} factorizations in {} online steps", elapsed.as_secs_f64(), log.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(usize, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut stdout = std::io::stdout();
    let mut failed = 0;
    for (k, run) in criteria {
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.passed { "PASS" } else { "FAIL" };
        writeln!(stdout, "criterion {k}: {tag} {}", result.detail).unwrap();
        failed += usize::from(!result.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        writeln!(stdout, "{failed} criteria failed").unwrap();
        ExitCode::FAILURE
    }
}
