//! Constraint-strength optimization in three stages of increasing fidelity:
//!
//! * **static**: ground state of `H_eff(t_d)` with `t_d` re-estimated per trial;
//! * **iterative**: final probabilities of the effective-model dynamics from `t0`;
//! * **exact**: final probabilities of the full-space dynamics.
//!
//! Each stage minimizes `Ω = Σ_n (|b_n|² − p_n)²` with a box-bounded
//! Nelder-Mead simplex; configurations where the perturbative expansion is
//! singular receive a fixed penalty instead of an error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diabatic::estimate_td;
use crate::dynamics::{propagate_effective, propagate_full, PropagationOptions, MAX_PROPAGATION_QUBITS};
use crate::effective::build_effective;
use crate::error::{Error, Result};
use crate::hamiltonian::Schedule;
use crate::model::LhzModel;
use crate::nelder_mead::{minimize, NelderMeadOptions};

/// Largest `K` for which the exact stage runs inside an optimization loop.
pub const MAX_EXACT_QUBITS: usize = 14;
const NORMALIZATION_TOL: f64 = 1e-9;
/// Static-stage costs closer than this count as ties, broken by smaller `|C|`.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetSpec {
    probabilities: Vec<f64>,
}

impl TargetSpec {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidTargets("no target probabilities".into()));
        }
        if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidTargets(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidTargets(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probabilities })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidTargets("no target probabilities".into()));
        }
        Ok(Self {
            probabilities: vec![1.0 / m as f64; m],
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Static,
    Iterative,
    Exact,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Static => "static",
            Stage::Iterative => "iterative",
            Stage::Exact => "exact",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Stage::Static),
            "iterative" => Ok(Stage::Iterative),
            "exact" => Ok(Stage::Exact),
            other => Err(Error::Parse(format!("unknown optimization level {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlResult {
    pub c: Vec<f64>,
    pub stage: Stage,
    pub cost_value: f64,
    pub td: f64,
    pub achieved: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    pub lower: f64,
    pub upper: f64,
    pub restarts: usize,
    pub seed: u64,
    pub static_evals: usize,
    pub refine_evals: usize,
    /// Initial simplex edge for the refinement stages, as a fraction of the box.
    pub refine_step: f64,
    pub t0_fraction: f64,
    pub effective_steps: usize,
    pub full_steps: usize,
    pub singular_penalty: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lower: 0.1,
            upper: 20.0,
            restarts: 8,
            seed: 0,
            static_evals: 1500,
            refine_evals: 200,
            refine_step: 0.02,
            t0_fraction: 0.1,
            effective_steps: 2000,
            full_steps: crate::dynamics::DEFAULT_STEPS,
            singular_penalty: 1e3,
        }
    }
}

impl OptimizerConfig {
    fn check(&self, n: usize, m: usize, targets: &TargetSpec) -> Result<()> {
        if !(self.lower > 0.0 && self.upper > self.lower) {
            return Err(Error::OutOfRange(format!(
                "bounds [{}, {}] must satisfy 0 < lo < hi",
                self.lower, self.upper
            )));
        }
        if !(self.t0_fraction > 0.0 && self.t0_fraction < 1.0) {
            return Err(Error::OutOfRange(format!(
                "t0 fraction {} outside (0, 1)",
                self.t0_fraction
            )));
        }
        if targets.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {m} ground strings",
                targets.len()
            )));
        }
        if n == 0 {
            return Err(Error::ShapeMismatch("model has no constraints".into()));
        }
        if m < 2 {
            return Err(Error::NoPairs);
        }
        Ok(())
    }

    fn bounds(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![self.lower; n], vec![self.upper; n])
    }
}

pub fn cost(b: &[f64], targets: &TargetSpec) -> Result<f64> {
    if b.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} targets",
            b.len(),
            targets.len()
        )));
    }
    Ok(b.iter()
        .zip(targets.probabilities())
        .map(|(x, p)| (x - p).powi(2))
        .sum())
}

/// Model with the given strengths, provided its ground strings remain the
/// exact ground states of `H_0`; the effective model is meaningless otherwise.
pub fn admissible_model(model: &LhzModel, strengths: &[f64]) -> Result<LhzModel> {
    let m = model.with_strengths(strengths)?;
    let exact = if m.k() <= MAX_PROPAGATION_QUBITS {
        m.ground_manifold_is_exact()?
    } else {
        m.ground_strings().iter().all(|z| {
            (0..m.k()).all(|i| m.energy(&z.flipped(&[i])) > m.energy(z))
        })
    };
    if exact {
        Ok(m)
    } else {
        Err(Error::Inadmissible(strengths.to_vec()))
    }
}

/// Squared components of the ground state of `H_eff(t_d)` and `t_d`.
pub fn ground_amplitudes_at_td(
    model: &LhzModel,
    strengths: &[f64],
    schedule: &Schedule,
) -> Result<(Vec<f64>, f64)> {
    let heff = build_effective(&admissible_model(model, strengths)?)?;
    let td = estimate_td(&heff, schedule)?.td;
    let v = heff.ground_state(td / schedule.total_time())?;
    Ok((v.iter().map(|x| x * x).collect(), td))
}

/// Final probabilities of the effective-model dynamics started at `t0`.
pub fn effective_final_probabilities(
    model: &LhzModel,
    strengths: &[f64],
    schedule: &Schedule,
    t0: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let heff = build_effective(&admissible_model(model, strengths)?)?;
    Ok(propagate_effective(&heff, schedule, t0, &PropagationOptions::with_steps(steps))?
        .final_probabilities)
}

fn td_or_nan(model: &LhzModel, strengths: &[f64], schedule: &Schedule) -> f64 {
    model
        .with_strengths(strengths)
        .and_then(|m| build_effective(&m))
        .and_then(|h| estimate_td(&h, schedule))
        .map(|e| e.td)
        .unwrap_or(f64::NAN)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

struct Candidate {
    c: Vec<f64>,
    value: f64,
    evals: usize,
    index: usize,
}

/// Multi-start minimization of the static objective.
pub fn optimize_static(
    model: &LhzModel,
    targets: &TargetSpec,
    schedule: &Schedule,
    config: &OptimizerConfig,
) -> Result<ControlResult> {
    let n = model.constraints().len();
    config.check(n, model.m(), targets)?;
    let (lo, hi) = config.bounds(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..config.restarts.max(1))
        .map(|_| {
            // log-uniform: strengths are scale parameters spanning decades
            let (a, b) = (config.lower.ln(), config.upper.ln());
            (0..n).map(|_| rng.gen_range(a..b).exp()).collect()
        })
        .collect();
    let opts = NelderMeadOptions {
        max_evals: config.static_evals,
        f_tol: 1e-14,
        x_tol: 1e-7,
        initial_step: 0.1,
        penalty: config.singular_penalty,
    };
    let objective = |c: &[f64]| match ground_amplitudes_at_td(model, c, schedule) {
        Ok((b, _)) => cost(&b, targets).unwrap_or(config.singular_penalty),
        Err(_) => config.singular_penalty,
    };
    let candidates: Vec<Candidate> = starts
        .par_iter()
        .enumerate()
        .map(|(index, x0)| {
            let m = minimize(objective, x0, &lo, &hi, &opts);
            Candidate {
                c: m.x,
                value: m.value,
                evals: m.evals,
                index,
            }
        })
        .collect();
    let evaluations = candidates.iter().map(|c| c.evals).sum();
    let best = candidates
        .iter()
        .filter(|c| c.value < config.singular_penalty)
        .min_by(|a, b| {
            if (a.value - b.value).abs() <= TIE_TOL {
                norm(&a.c)
                    .total_cmp(&norm(&b.c))
                    .then(a.index.cmp(&b.index))
            } else {
                a.value.total_cmp(&b.value)
            }
        })
        .ok_or_else(|| {
            Error::OptimizationFailed(format!(
                "all {} starts hit singular configurations",
                candidates.len()
            ))
        })?;
    let (achieved, td) = ground_amplitudes_at_td(model, &best.c, schedule)?;
    Ok(ControlResult {
        c: best.c.clone(),
        stage: Stage::Static,
        cost_value: cost(&achieved, targets)?,
        td,
        achieved,
        evaluations,
    })
}

fn check_init(c_init: &[f64], n: usize, config: &OptimizerConfig) -> Result<()> {
    if c_init.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} initial strengths for {n} constraints",
            c_init.len()
        )));
    }
    if c_init.iter().any(|c| !(config.lower..=config.upper).contains(c)) {
        return Err(Error::OutOfRange(format!(
            "initial strengths {c_init:?} outside [{}, {}]",
            config.lower, config.upper
        )));
    }
    Ok(())
}

fn refine<F>(
    objective: F,
    c_init: &[f64],
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> f64,
{
    let n = c_init.len();
    let (lo, hi) = config.bounds(n);
    let start_value = objective(c_init);
    if start_value >= config.singular_penalty {
        return Err(Error::OptimizationFailed(format!(
            "initial strengths {c_init:?} are singular"
        )));
    }
    let opts = NelderMeadOptions {
        max_evals: config.refine_evals,
        f_tol: 1e-12,
        x_tol: 1e-4,
        initial_step: config.refine_step,
        penalty: config.singular_penalty,
    };
    let m = minimize(&objective, c_init, &lo, &hi, &opts);
    // never return something worse than the seed
    if m.value <= start_value {
        Ok((m.x, m.evals + 1))
    } else {
        Ok((c_init.to_vec(), m.evals + 1))
    }
}

/// Refines `c_init` against the effective-model dynamics started at
/// `t0 = t0_fraction·T` from the ground state of `H_eff(t0)`.
pub fn optimize_iterative(
    model: &LhzModel,
    targets: &TargetSpec,
    c_init: &[f64],
    schedule: &Schedule,
    config: &OptimizerConfig,
) -> Result<ControlResult> {
    let n = model.constraints().len();
    config.check(n, model.m(), targets)?;
    check_init(c_init, n, config)?;
    let t0 = config.t0_fraction * schedule.total_time();
    let run = |c: &[f64]| {
        effective_final_probabilities(model, c, schedule, t0, config.effective_steps)
    };
    let objective = |c: &[f64]| match run(c) {
        Ok(p) => cost(&p, targets).unwrap_or(config.singular_penalty),
        Err(_) => config.singular_penalty,
    };
    let (c, evaluations) = refine(objective, c_init, config)?;
    let achieved = run(&c)?;
    Ok(ControlResult {
        cost_value: cost(&achieved, targets)?,
        td: td_or_nan(model, &c, schedule),
        c,
        stage: Stage::Iterative,
        achieved,
        evaluations,
    })
}

/// Refines `c_init` against the full-space dynamics.
pub fn optimize_exact(
    model: &LhzModel,
    targets: &TargetSpec,
    c_init: &[f64],
    schedule: &Schedule,
    config: &OptimizerConfig,
) -> Result<ControlResult> {
    let n = model.constraints().len();
    config.check(n, model.m(), targets)?;
    check_init(c_init, n, config)?;
    let limit = MAX_EXACT_QUBITS.min(MAX_PROPAGATION_QUBITS);
    if model.k() > limit {
        return Err(Error::TooLarge {
            what: "exact-stage qubit count",
            size: model.k(),
            limit,
        });
    }
    let opts = PropagationOptions::with_steps(config.full_steps);
    let run = |c: &[f64]| propagate_full(model, schedule, c, &opts).map(|r| r.final_probabilities);
    let objective = |c: &[f64]| match run(c) {
        Ok(p) => cost(&p, targets).unwrap_or(config.singular_penalty),
        Err(_) => config.singular_penalty,
    };
    let (c, evaluations) = refine(objective, c_init, config)?;
    let achieved = run(&c)?;
    Ok(ControlResult {
        cost_value: cost(&achieved, targets)?,
        td: td_or_nan(model, &c, schedule),
        c,
        stage: Stage::Exact,
        achieved,
        evaluations,
    })
}

/// Runs the stages up to `level`, each seeding the next.
pub fn optimize(
    model: &LhzModel,
    targets: &TargetSpec,
    schedule: &Schedule,
    level: Stage,
    config: &OptimizerConfig,
) -> Result<Vec<ControlResult>> {
    let mut results = vec![optimize_static(model, targets, schedule, config)?];
    if level == Stage::Static {
        return Ok(results);
    }
    let seed = results[0].c.clone();
    results.push(optimize_iterative(model, targets, &seed, schedule, config)?);
    if level == Stage::Iterative {
        return Ok(results);
    }
    let seed = results[1].c.clone();
    results.push(optimize_exact(model, targets, &seed, schedule, config)?);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::example_model;

    #[test]
    fn cost_examples() {
        let uniform = TargetSpec::uniform(3).unwrap();
        assert_eq!(cost(uniform.probabilities(), &uniform).unwrap(), 0.0);
        let c = cost(&[1.0, 0.0, 0.0], &uniform).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
        let c = cost(&[0.344, 0.347, 0.309], &uniform).unwrap();
        assert!((c - 8.9e-4).abs() < 0.05e-4, "{c}");
        assert!(cost(&[0.5, 0.5], &uniform).is_err());
    }

    #[test]
    fn target_validation() {
        assert!(TargetSpec::new(vec![0.2, 0.3, 0.5]).is_ok());
        assert!(TargetSpec::new(vec![0.2, 0.3, 0.4]).is_err());
        assert!(TargetSpec::new(vec![1.2, -0.2]).is_err());
        assert!(TargetSpec::new(vec![]).is_err());
        assert!("exact".parse::<Stage>().is_ok());
        assert!("fast".parse::<Stage>().is_err());
    }

    #[test]
    fn ground_amplitudes_are_taken_at_the_freeze_time() {
        let schedule = Schedule::linear(100.0).unwrap();
        let model = example_model();
        let c = [5.73, 0.19, 6.07];
        let (b, td) = ground_amplitudes_at_td(&model, &c, &schedule).unwrap();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let heff = build_effective(&model.with_strengths(&c).unwrap()).unwrap();
        let est = estimate_td(&heff, &schedule).unwrap();
        assert_eq!(td, est.td);
        let v = heff.ground_state(td / 100.0).unwrap();
        for (p, a) in b.iter().zip(v.iter()) {
            assert!((p - a * a).abs() < 1e-12);
        }
    }

    #[test]
    fn inadmissible_strengths_are_rejected() {
        let schedule = Schedule::linear(100.0).unwrap();
        let err = ground_amplitudes_at_td(&example_model(), &[0.5, 0.1, 0.1], &schedule);
        assert!(matches!(err, Err(Error::Inadmissible(_))), "{err:?}");
    }

    #[test]
    fn static_stage_reaches_biased_targets() {
        let schedule = Schedule::linear(100.0).unwrap();
        let targets = TargetSpec::new(vec![0.2, 0.3, 0.5]).unwrap();
        let config = OptimizerConfig {
            restarts: 4,
            ..Default::default()
        };
        let r = optimize_static(&example_model(), &targets, &schedule, &config).unwrap();
        for (a, p) in r.achieved.iter().zip(targets.probabilities()) {
            assert!((a - p).abs() < 0.02, "{:?}", r.achieved);
        }
        assert!(r.c.iter().all(|c| (0.1..=20.0).contains(c)));
        let again = optimize_static(&example_model(), &targets, &schedule, &config).unwrap();
        assert_eq!(r.c, again.c);
    }
}
