//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. A FAIL
//! is reported, not raised: the process exits 0 unless a check itself panics.

use std::time::Instant;

use nalgebra::DMatrix;
use parity_superposition::control::{cost, optimize, OptimizerConfig, Stage, TargetSpec};
use parity_superposition::diabatic::estimate_td;
use parity_superposition::dynamics::{propagate_full, PropagationOptions};
use parity_superposition::effective::{build_effective, direct_rotation_oracle, resolvent_oracle};
use parity_superposition::experiments::{
    default_error_grid, freeze_grid, scan_ergodicity, scan_robustness, strength_grid,
};
use parity_superposition::hamiltonian::{diagonal_energies, spectrum_of, Schedule};
use parity_superposition::model::{four_spin_lhz, hamming, logical_to_physical, BitString};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T: f64 = 100.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: usize, name: &str, budget_s: f64, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = check();
    let secs = start.elapsed().as_secs_f64();
    let pass = out.pass && secs < budget_s;
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id} [{verdict}] {name}: {} ({secs:.2} s, budget {budget_s} s)",
        out.detail
    );
    pass
}

fn random_c(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Closed-form coefficients of the four-spin example, transcribed term by term.
fn closed_form(c: [f64; 3]) -> ([f64; 3], f64, f64, f64) {
    let [c1, c2, c3] = c;
    let r = |x: f64| 1.0 / x;
    let a = 1.0 - c1 - c2 - c3;
    let e1 = 0.5
        * (-r(1.0 + c2) - r(c3) - r(1.0 + c1 + c3) - r(c2 + c3) + r(a) - r(1.0 + c1));
    let e2 = 0.5
        * (-r(1.0 + c2) - r(c3) + r(1.0 - c1 - c3) - r(c2 + c3) - r(1.0 + c1 + c2 + c3)
            - r(1.0 + c1));
    let e3 = 0.5
        * (-r(1.0 + c2) - r(c3) - r(1.0 + c1 + c3) - r(c2 + c3) - r(1.0 + c1 + c2 + c3)
            + r(1.0 - c1));
    let g13 = 0.25
        * (-(r(c2 + c3) + r(1.0 + c1)) / (1.0 + c1 + c2 + c3) - (r(a) - r(c2 + c3)) / (1.0 - c1)
            + (r(a) - r(1.0 + c1)) / (c2 + c3));
    let g23 = 0.25
        * (-(r(1.0 + c1) + r(c3)) / (1.0 + c1 + c3) + (r(1.0 - c1 - c3) - r(1.0 + c1)) / c3
            - (r(1.0 - c1 - c3) - r(c3)) / (1.0 - c1));
    let t1 = (-(r(c2 + c3) + r(1.0 + c1 + c3)) / (1.0 + c1 + c2)
        + (r(a) - r(1.0 + c1 + c3)) / c2
        - (r(a) - r(c2 + c3)) / (1.0 - c1))
        / c3;
    let t2 = ((-r(c2 + c3) - r(c3)) / c2
        - (r(a) - r(c2 + c3)) / (1.0 - c1)
        - (r(a) - r(c3)) / (1.0 - c1 - c2))
        / (1.0 - c1 - c3);
    let t3 = (-(r(1.0 + c1 + c3) + r(c3)) / (1.0 + c1) + (r(a) - r(1.0 + c1 + c3)) / c2
        - (r(a) - r(c3)) / (1.0 - c1 - c2))
        / (c2 + c3);
    let t4 = (-(r(1.0 + c1 + c3) + r(c3)) / (1.0 + c1)
        - (r(c2 + c3) + r(c3)) / c2
        - (r(c2 + c3) + r(1.0 + c1 + c3)) / (1.0 + c1 + c2))
        / (1.0 + c1 + c2 + c3);
    let g12 = 0.125 * (t1 - t2 + t3 + t4);
    ([e1, e2, e3], g13, g23, g12)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = random_c(&mut rng, 0.5, 10.0);
        let heff = match four_spin_lhz(&c).and_then(|m| build_effective(&m)) {
            Ok(h) => h,
            Err(e) => return outcome(false, format!("C={c:?}: {e}")),
        };
        let (e, g13, g23, g12) = closed_form(c);
        for n in 0..3 {
            worst = worst.max((heff.e[n] - e[n]).abs());
        }
        worst = worst
            .max((heff.g[0][2] - g13).abs())
            .max((heff.g[1][2] - g23).abs())
            .max((heff.g[0][1] - g12).abs());
    }
    outcome(worst <= 1e-12, format!("max |implementation - closed form| = {worst:.2e} over 100 draws"))
}

fn criterion_2() -> Outcome {
    let schedule = Schedule::linear(T).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draws = vec![[4.0, 4.0, 4.0]];
    draws.extend((0..20).map(|_| random_c(&mut rng, 1.0, 10.0)));
    let mut worst = 0.0f64;
    for c in &draws {
        let model = four_spin_lhz(c).unwrap();
        let heff = build_effective(&model).unwrap();
        for s in [0.5, 0.7, 0.9] {
            let a = heff.evaluate(s * T, &schedule).unwrap();
            let b = match resolvent_oracle(&model, s * T, &schedule) {
                Ok(b) => b,
                Err(e) => return outcome(false, format!("C={c:?}: {e}")),
            };
            worst = worst.max(max_abs_diff(&a, &b));
        }
    }
    outcome(worst <= 1e-10, format!("max entrywise difference {worst:.2e} over 21 configurations x 3 times"))
}

fn criterion_3() -> Outcome {
    let schedule = Schedule::linear(T).unwrap();
    let model = four_spin_lhz(&[8.0, 8.0, 8.0]).unwrap();
    let heff = build_effective(&model).unwrap();
    let mut errors = Vec::new();
    for s in [0.8, 0.9, 0.95] {
        let a = heff.evaluate(s * T, &schedule).unwrap();
        let b = direct_rotation_oracle(&model, s * T, &schedule).unwrap();
        errors.push(max_abs_diff(&a, &b));
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let mut ev = heff.evaluate(0.95 * T, &schedule).unwrap().symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(f64::total_cmp);
    let spectrum = diagonal_energies(&model).unwrap();
    let exact = spectrum_of(&model, &spectrum, &schedule, 0.95 * T, 3).unwrap();
    let gap = ev
        .iter()
        .zip(&exact.eigenvalues)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        monotone && gap <= 1e-2,
        format!(
            "errors at s=0.8/0.9/0.95: {:.2e}/{:.2e}/{:.2e}; eigenvalue mismatch at 0.95: {gap:.2e}",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn criterion_4() -> Outcome {
    let schedule = Schedule::linear(T).unwrap();
    let td = |c: &[f64]| estimate_td(&build_effective(&four_spin_lhz(c).unwrap()).unwrap(), &schedule).unwrap().td;
    let fair = td(&[5.73, 0.19, 6.07]) / T;
    let biased = td(&[5.53, 0.86, 2.44]) / T;
    outcome(
        (0.4..=0.6).contains(&fair) && (0.5..=0.7).contains(&biased),
        format!("t_d/T = {fair:.3} (fair, want [0.4, 0.6]), {biased:.3} (biased, want [0.5, 0.7])"),
    )
}

fn criterion_5(baseline: &mut Option<Vec<f64>>) -> Outcome {
    let schedule = Schedule::linear(T).unwrap();
    let model = four_spin_lhz(&[4.0, 4.0, 4.0]).unwrap();
    let targets = TargetSpec::uniform(3).unwrap();
    let results = match optimize(&model, &targets, &schedule, Stage::Exact, &OptimizerConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let c = results.last().unwrap().c.clone();
    let run = propagate_full(&model, &schedule, &c, &PropagationOptions::default()).unwrap();
    let dev = run.final_probabilities.iter().map(|p| (p - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    let reference = propagate_full(&model, &schedule, &[9.31, 0.40, 9.82], &PropagationOptions::default()).unwrap();
    let ref_dev = reference
        .final_probabilities
        .iter()
        .map(|p| (p - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    *baseline = Some(c.clone());
    outcome(
        dev <= 0.01 && run.leakage < 1e-2 && ref_dev <= 0.05,
        format!(
            "optimized C={:.3?} -> P={:.4?}, max dev {dev:.4}, leakage {:.2e}; reference C -> max dev {ref_dev:.4}",
            c, run.final_probabilities, run.leakage
        ),
    )
}

fn criterion_6() -> Outcome {
    let schedule = Schedule::linear(T).unwrap();
    let model = four_spin_lhz(&[4.0, 4.0, 4.0]).unwrap();
    let targets = TargetSpec::new(vec![0.2, 0.3, 0.5]).unwrap();
    let results = match optimize(&model, &targets, &schedule, Stage::Iterative, &OptimizerConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let c = results.last().unwrap().c.clone();
    let run = propagate_full(&model, &schedule, &c, &PropagationOptions::default()).unwrap();
    let dev = run
        .final_probabilities
        .iter()
        .zip(targets.probabilities())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    outcome(
        dev <= 0.03,
        format!(
            "iterative C={:.3?} -> full-dynamics P={:.4?}, max |P - target| = {dev:.4} (want <= 0.03)",
            c, run.final_probabilities
        ),
    )
}

fn criterion_7(baseline: Option<Vec<f64>>) -> Outcome {
    let Some(c) = baseline else {
        return outcome(false, "no exact baseline available".into());
    };
    let schedule = Schedule::linear(T).unwrap();
    let model = four_spin_lhz(&c).unwrap();
    let scan = match scan_robustness(
        &model,
        &c,
        &default_error_grid(9),
        &[0, 1, 2],
        &schedule,
        &PropagationOptions::default(),
    ) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("scan failed: {e}")),
    };
    let missing = scan.points.iter().filter(|p| p.probabilities.is_none()).count();
    let dev = scan.relative_deviation(0, 1.2).unwrap_or(f64::INFINITY);
    let jumps: Vec<f64> = (0..3).map(|p| scan.max_jump(p)).collect();
    let worst_jump = jumps.iter().cloned().fold(0.0, f64::max);
    outcome(
        missing == 0 && dev <= 0.15 && worst_jump <= 0.05,
        format!(
            "C_1 x 1.2 -> max relative deviation {:.1}% (want <= 15%); largest adjacent jump per constraint {:.4?} (want <= 0.05); {missing} missing points",
            100.0 * dev,
            jumps
        ),
    )
}

fn criterion_8() -> Outcome {
    let model = four_spin_lhz(&[4.0, 4.0, 4.0]).unwrap();
    let grid = strength_grid(0.1, 4.0, 0.1).unwrap();
    let scan = scan_ergodicity(&model, &grid, &freeze_grid(30), 20, false).unwrap();
    let h = &scan.histogram;
    let empty: Vec<[f64; 3]> = h.bins().into_iter().filter(|b| b.2 == 0).map(|b| b.1).collect();
    let low_p2 = empty.iter().filter(|c| c[1] < 0.25).count();
    outcome(
        h.coverage() >= 0.9,
        format!(
            "coverage {:.3} ({} of {} bins; want >= 0.90); {} of {} empty bins have p2 < 0.25; {} points evaluated, {} singular skipped",
            h.coverage(),
            h.occupied_bins(),
            h.total_bins(),
            low_p2,
            empty.len(),
            scan.evaluated,
            scan.skipped
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    let schedule = Schedule::linear(T).unwrap();

    // ground manifold at t = T
    let mut worst_overlap = 0.0f64;
    for _ in 0..50 {
        let c = random_c(&mut rng, 1.0, 10.0);
        let model = four_spin_lhz(&c).unwrap();
        let spectrum = diagonal_energies(&model).unwrap();
        let s = spectrum_of(&model, &spectrum, &schedule, T, 3).unwrap();
        let o = DMatrix::from_fn(3, 3, |a, b| s.eigenvectors[b][model.ground_strings()[a].to_index() as usize]);
        worst_overlap = worst_overlap.max((o.transpose() * &o - DMatrix::identity(3, 3)).amax());
    }
    if worst_overlap > 1e-10 {
        failures.push(format!("ground manifold overlap error {worst_overlap:.2e}"));
    }

    // integrator
    let model = four_spin_lhz(&[4.0, 4.0, 4.0]).unwrap();
    let mut worst_drift = 0.0f64;
    let mut worst_halving = 0.0f64;
    for c in [[4.0, 4.0, 4.0], [9.31, 0.40, 9.82], [5.80, 1.25, 2.68]] {
        let a = propagate_full(&model, &schedule, &c, &PropagationOptions::default()).unwrap();
        let b = propagate_full(&model, &schedule, &c, &PropagationOptions::with_steps(2 * a.steps)).unwrap();
        worst_drift = worst_drift.max(a.norm_drift).max(b.norm_drift);
        let d = a
            .final_probabilities
            .iter()
            .zip(&b.final_probabilities)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst_halving = worst_halving.max(d);
    }
    if worst_drift >= 1e-9 {
        failures.push(format!("norm drift {worst_drift:.2e}"));
    }
    if worst_halving >= 1e-6 {
        failures.push(format!("step halving changed P by {worst_halving:.2e}"));
    }

    // Hamming metric and Z2 collapse
    let strings: Vec<BitString> = (0..40)
        .map(|_| BitString::new((0..7).map(|_| rng.gen_range(0..2u8)).collect()).unwrap())
        .collect();
    for a in &strings {
        if hamming(a, a).unwrap() != 0 {
            failures.push("d(a, a) != 0".into());
        }
        if logical_to_physical(a) != logical_to_physical(&a.complement()) {
            failures.push(format!("{a} and its complement map apart"));
        }
        for b in &strings {
            let ab = hamming(a, b).unwrap();
            if ab != hamming(b, a).unwrap() || (ab == 0) != (a == b) {
                failures.push(format!("metric axioms fail for {a}, {b}"));
            }
            if a != b && *a != b.complement() && logical_to_physical(a) == logical_to_physical(b) {
                failures.push(format!("{a} and {b} collide"));
            }
            for c in &strings {
                if hamming(a, c).unwrap() > ab + hamming(b, c).unwrap() {
                    failures.push(format!("triangle inequality fails for {a}, {b}, {c}"));
                }
            }
        }
    }

    // cost
    let targets = TargetSpec::new(vec![0.2, 0.3, 0.5]).unwrap();
    if cost(targets.probabilities(), &targets).unwrap() != 0.0 {
        failures.push("cost of an exact match is not zero".into());
    }
    for _ in 0..200 {
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let b: Vec<f64> = raw.iter().map(|x| x / total).collect();
        if cost(&b, &targets).unwrap() <= 0.0 {
            failures.push(format!("cost not positive at {b:?}"));
        }
    }

    let pass = failures.is_empty();
    let detail = if pass {
        format!(
            "ground manifold overlap error {worst_overlap:.1e}, norm drift {worst_drift:.1e}, halving change {worst_halving:.1e}, metric/Z2/cost checks clean"
        )
    } else {
        failures.truncate(5);
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn main() {
    // libtest flags such as --list are irrelevant here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut baseline = None;
    let results = [
        report(1, "closed-form coefficients", 1.0, criterion_1),
        report(2, "path sum vs resolvent oracle", 5.0, criterion_2),
        report(3, "perturbative accuracy scaling", 5.0, criterion_3),
        report(4, "freeze time", 1.0, criterion_4),
        report(5, "fair sampling, exact level", 30.0, || criterion_5(&mut baseline)),
        report(6, "biased targets, iterative level", 60.0, criterion_6),
        report(7, "robustness to constraint errors", 600.0, || criterion_7(baseline.clone())),
        report(8, "simplex coverage", 1200.0, criterion_8),
        report(9, "property suites", 30.0, criterion_9),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
}
