//! Schrödinger propagation in the full `2^K` space and in the effective
//! `M`-level model, with adiabatic-manifold (AMF) population tracking.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::effective::EffectiveHamiltonian;
use crate::error::{Error, Result};
use crate::hamiltonian::{diagonal_energies, spectrum_of, DiagonalSpectrum, Schedule, SpinOperator};
use crate::model::LhzModel;

/// Largest `K` for full propagation.
pub const MAX_PROPAGATION_QUBITS: usize = 20;
/// Above this fraction of `T`, AMF populations use a subspace projection.
pub const PROJECTION_THRESHOLD: f64 = 0.98;
pub const DEFAULT_STEPS: usize = 4000;
pub const DEFAULT_SAMPLES: usize = 300;

const TAYLOR_TOL: f64 = 1e-16;
const SUBSTEP_NORM: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
    pub t: f64,
}

impl StateVector {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryPoint {
    pub t_over_t: f64,
    pub populations: Vec<f64>,
    pub leakage: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PreparationResult {
    pub final_probabilities: Vec<f64>,
    pub leakage: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub norm_drift: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct PropagationOptions {
    pub steps: usize,
    /// Times (as fractions of `T`) at which AMF populations are recorded.
    pub samples: Vec<f64>,
    pub norm_tolerance: f64,
    pub max_halvings: u32,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            samples: Vec::new(),
            norm_tolerance: 1e-7,
            max_halvings: 3,
        }
    }
}

impl PropagationOptions {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn sampled(mut self, samples: Vec<f64>) -> Self {
        self.samples = samples;
        self
    }
}

/// `n` uniform sample fractions covering `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Ground state of `H(0)`: every amplitude `2^{−K/2}`.
pub fn initial_state_full(k: usize) -> Result<StateVector> {
    if k == 0 {
        return Err(Error::ShapeMismatch("need at least one qubit".into()));
    }
    if k > MAX_PROPAGATION_QUBITS {
        return Err(Error::TooLarge {
            what: "propagation qubit count",
            size: k,
            limit: MAX_PROPAGATION_QUBITS,
        });
    }
    let dim = 1usize << k;
    let a = Complex64::new((dim as f64).sqrt().recip(), 0.0);
    Ok(StateVector {
        amplitudes: vec![a; dim],
        t: 0.0,
    })
}

/// `ψ ← exp(−i H dt) ψ` by scaled Taylor series.
fn taylor_step(op: &SpinOperator, psi: &mut [Complex64], dt: f64, bound: f64, scratch: &mut [Vec<Complex64>; 2]) {
    let substeps = ((bound * dt.abs()) / SUBSTEP_NORM).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;
    for _ in 0..substeps {
        let [term, next] = scratch;
        term.copy_from_slice(psi);
        for k in 1..64 {
            op.apply(term, next);
            let factor = Complex64::new(0.0, -h / k as f64);
            let mut size = 0.0f64;
            for ((t, n), p) in term.iter_mut().zip(next.iter()).zip(psi.iter_mut()) {
                *t = n * factor;
                *p += *t;
                size = size.max(t.norm_sqr());
            }
            if size.sqrt() < TAYLOR_TOL {
                break;
            }
        }
    }
}

fn sample_steps(samples: &[f64], steps: usize) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = samples
        .iter()
        .filter(|f| (0.0..=1.0).contains(*f))
        .map(|&f| ((f * steps as f64).round() as usize, f))
        .collect();
    out.sort_by_key(|&(i, _)| i);
    out.dedup_by_key(|&mut (i, _)| i);
    out
}

fn run_full(
    model: &LhzModel,
    spectrum: &DiagonalSpectrum,
    schedule: &Schedule,
    steps: usize,
    samples: &[f64],
) -> Result<(StateVector, Vec<TrajectoryPoint>, f64)> {
    let total = schedule.total_time();
    let dt = total / steps as f64;
    let mut psi = initial_state_full(model.k())?;
    let dim = psi.amplitudes.len();
    let mut scratch = [vec![Complex64::default(); dim], vec![Complex64::default(); dim]];
    let marks = sample_steps(samples, steps);
    let mut next_mark = 0;
    let mut trajectory = Vec::with_capacity(marks.len());
    let mut drift = 0.0f64;

    for step in 0..=steps {
        while next_mark < marks.len() && marks[next_mark].0 == step {
            let t = step as f64 * dt;
            psi.t = t;
            let (populations, leakage) = amf_with(&psi, model, spectrum, schedule, t)?;
            trajectory.push(TrajectoryPoint {
                t_over_t: step as f64 / steps as f64,
                populations,
                leakage,
            });
            drift = drift.max((psi.norm() - 1.0).abs());
            next_mark += 1;
        }
        if step == steps {
            break;
        }
        let t_mid = (step as f64 + 0.5) * dt;
        let op = SpinOperator::new(spectrum, schedule, t_mid);
        let bound = op.norm_bound();
        taylor_step(&op, &mut psi.amplitudes, dt, bound, &mut scratch);
    }
    psi.t = total;
    drift = drift.max((psi.norm() - 1.0).abs());
    Ok((psi, trajectory, drift))
}

/// Full-space evolution from the uniform superposition at `t = 0` to `T`
/// with constraint strengths `strengths`.
pub fn propagate_full(
    model: &LhzModel,
    schedule: &Schedule,
    strengths: &[f64],
    options: &PropagationOptions,
) -> Result<PreparationResult> {
    if options.steps == 0 {
        return Err(Error::OutOfRange("step count must be positive".into()));
    }
    let model = model.with_strengths(strengths)?;
    let spectrum = diagonal_energies(&model)?;
    let mut steps = options.steps;
    let mut last_drift = f64::NAN;
    for _ in 0..=options.max_halvings {
        let (psi, trajectory, drift) = run_full(&model, &spectrum, schedule, steps, &options.samples)?;
        if drift <= options.norm_tolerance {
            let final_probabilities: Vec<f64> = model
                .ground_strings()
                .iter()
                .map(|z| psi.amplitudes[z.to_index() as usize].norm_sqr())
                .collect();
            let leakage = 1.0 - final_probabilities.iter().sum::<f64>();
            return Ok(PreparationResult {
                final_probabilities,
                leakage,
                trajectory,
                norm_drift: drift,
                steps,
            });
        }
        last_drift = drift;
        steps *= 2;
    }
    Err(Error::IntegratorFailure(format!("norm drift {last_drift:e} after step refinement")))
}

/// Final state of a full propagation, for callers needing amplitudes.
pub fn final_state_full(
    model: &LhzModel,
    schedule: &Schedule,
    strengths: &[f64],
    steps: usize,
) -> Result<StateVector> {
    let model = model.with_strengths(strengths)?;
    let spectrum = diagonal_energies(&model)?;
    Ok(run_full(&model, &spectrum, schedule, steps.max(1), &[])?.0)
}

/// Populations of the `M` lowest instantaneous eigenstates and the leakage
/// `1 − Σ P_n`.
///
/// Above `PROJECTION_THRESHOLD·T` the eigenvectors are replaced by the
/// orthonormal frame of their span closest to the ground strings, ordered
/// by energy; at `t = T` this gives `P_n = |⟨z_n|ψ⟩|²`.
pub fn amf_populations(
    state: &StateVector,
    model: &LhzModel,
    schedule: &Schedule,
    t: f64,
) -> Result<(Vec<f64>, f64)> {
    schedule.check_time(t)?;
    let spectrum = diagonal_energies(model)?;
    if state.amplitudes.len() != spectrum.energies().len() {
        return Err(Error::ShapeMismatch(format!(
            "state of dimension {} for K = {}",
            state.amplitudes.len(),
            model.k()
        )));
    }
    amf_with(state, model, &spectrum, schedule, t)
}

fn overlap(v: &DVector<f64>, psi: &[Complex64]) -> Complex64 {
    v.iter().zip(psi).map(|(a, b)| b * *a).sum()
}

fn amf_with(
    state: &StateVector,
    model: &LhzModel,
    spectrum: &DiagonalSpectrum,
    schedule: &Schedule,
    t: f64,
) -> Result<(Vec<f64>, f64)> {
    let m = model.m();
    let spec = spectrum_of(model, spectrum, schedule, t, m)?;
    let psi = &state.amplitudes;
    let populations: Vec<f64> = if schedule.fraction(t) <= PROJECTION_THRESHOLD {
        spec.eigenvectors.iter().map(|v| overlap(v, psi).norm_sqr()).collect()
    } else {
        let idx: Vec<usize> = model
            .ground_strings()
            .iter()
            .map(|z| z.to_index() as usize)
            .collect();
        let o = DMatrix::from_fn(m, m, |n, j| spec.eigenvectors[j][idx[n]]);
        let svd = o.svd(true, true);
        if svd.singular_values.min() < 1e-8 {
            return Err(Error::IllConditioned(format!("AMF frame at t = {t}")));
        }
        let w = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
        // frame vector n = Σ_j W_nj φ_j
        let frame: Vec<DVector<f64>> = (0..m)
            .map(|n| {
                (0..m).fold(DVector::zeros(spectrum.energies().len()), |acc, j| {
                    acc + &spec.eigenvectors[j] * w[(n, j)]
                })
            })
            .collect();
        let energy = |n: usize| -> f64 {
            (0..m)
                .map(|j| w[(n, j)] * w[(n, j)] * spec.eigenvalues[j])
                .sum()
        };
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| energy(a).total_cmp(&energy(b)));
        order.iter().map(|&n| overlap(&frame[n], psi).norm_sqr()).collect()
    };
    let leakage = 1.0 - populations.iter().sum::<f64>();
    Ok((populations, leakage))
}

/// `exp(−i H dt)` for a small real symmetric `H`.
fn small_propagator(h: &DMatrix<f64>, dt: f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(h.clone());
    let m = h.nrows();
    let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        m,
        eig.eigenvalues.iter().map(|&e| Complex64::from_polar(1.0, -e * dt)),
    ));
    &v * phases * v.transpose()
}

/// Effective-model evolution from the ground state of `H_eff(t0)` to `T`.
/// Populations are recorded in the instantaneous eigenbasis of `H_eff`.
pub fn propagate_effective(
    heff: &EffectiveHamiltonian,
    schedule: &Schedule,
    t0: f64,
    options: &PropagationOptions,
) -> Result<PreparationResult> {
    let total = schedule.total_time();
    if !(t0 > 0.0 && t0 < total) {
        return Err(Error::OutOfRange(format!("t0 = {t0} must lie in (0, T = {total})")));
    }
    if options.steps == 0 {
        return Err(Error::OutOfRange("step count must be positive".into()));
    }
    let start = heff.ground_state(t0 / total)?;
    let mut beta: DVector<Complex64> = start.map(|x| Complex64::new(x, 0.0));
    let steps = options.steps;
    let dt = (total - t0) / steps as f64;
    let at = |step: usize| t0 + step as f64 * dt;

    // sample fractions are of T; map each onto the nearest step after t0
    let marks: Vec<(usize, f64)> = {
        let mut v: Vec<(usize, f64)> = options
            .samples
            .iter()
            .filter(|&&f| f * total >= t0 - 1e-12 && f <= 1.0)
            .map(|&f| (((f * total - t0) / dt).round() as usize, f))
            .collect();
        v.sort_by_key(|&(i, _)| i);
        v.dedup_by_key(|&mut (i, _)| i);
        v
    };
    let mut next_mark = 0;
    let mut trajectory = Vec::with_capacity(marks.len());
    let mut drift = 0.0f64;

    for step in 0..=steps {
        while next_mark < marks.len() && marks[next_mark].0 == step {
            let s = at(step) / total;
            let eig = SymmetricEigen::new(heff.at_fraction(s)?);
            let mut order: Vec<usize> = (0..heff.m).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let populations: Vec<f64> = order
                .iter()
                .map(|&j| {
                    eig.eigenvectors
                        .column(j)
                        .iter()
                        .zip(beta.iter())
                        .map(|(v, b)| b * *v)
                        .sum::<Complex64>()
                        .norm_sqr()
                })
                .collect();
            trajectory.push(TrajectoryPoint {
                t_over_t: s,
                populations,
                leakage: 0.0,
            });
            next_mark += 1;
        }
        if step == steps {
            break;
        }
        let h = heff.at_fraction((at(step) + 0.5 * dt) / total)?;
        beta = small_propagator(&h, dt) * beta;
        drift = drift.max((beta.norm() - 1.0).abs());
    }
    if drift > options.norm_tolerance {
        return Err(Error::IntegratorFailure(format!("norm drift {drift:e}")));
    }
    Ok(PreparationResult {
        final_probabilities: beta.iter().map(|b| b.norm_sqr()).collect(),
        leakage: 0.0,
        trajectory,
        norm_drift: drift,
        steps,
    })
}
