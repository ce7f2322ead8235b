//! Time-dependent lattice-gauge Hamiltonian on the full `2^K` space.
//!
//! `H(t) = b(t) (H_J + H_C) − a(t) Σ_i σ^x_i`, with the linear ramps
//! `b(t) = t/T` (problem weight) and `a(t) = 1 − t/T` (transverse weight).

use std::fmt;
use std::ops::{Add, Mul};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lanczos::{self, LanczosOptions};
use crate::model::{BitString, LhzModel};

/// Largest `K` for which the full diagonal is tabulated.
pub const MAX_DIAGONAL_QUBITS: usize = 26;
/// Largest `K` diagonalized with a dense eigensolver.
pub const DENSE_QUBITS: usize = 10;
/// Largest `K` handled by the matrix-free eigensolver.
pub const MAX_ITERATIVE_QUBITS: usize = 20;

const PARALLEL_DIM: usize = 1 << 14;

type Ramp = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Run time and switching functions. Ramps take the time fraction `t/T`.
#[derive(Clone)]
pub struct Schedule {
    total_time: f64,
    ramps: Option<(Ramp, Ramp)>,
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule")
            .field("total_time", &self.total_time)
            .field("linear", &self.ramps.is_none())
            .finish()
    }
}

impl Schedule {
    pub fn linear(total_time: f64) -> Result<Self> {
        if !(total_time > 0.0 && total_time.is_finite()) {
            return Err(Error::OutOfRange(format!("run time T = {total_time} must be positive")));
        }
        Ok(Self {
            total_time,
            ramps: None,
        })
    }

    /// Schedule with custom transverse and problem weights as functions of `t/T`.
    pub fn with_ramps(
        total_time: f64,
        transverse: impl Fn(f64) -> f64 + Send + Sync + 'static,
        problem: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let mut s = Self::linear(total_time)?;
        s.ramps = Some((Arc::new(transverse), Arc::new(problem)));
        Ok(s)
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn is_linear(&self) -> bool {
        self.ramps.is_none()
    }

    pub fn fraction(&self, t: f64) -> f64 {
        t / self.total_time
    }

    pub fn transverse_weight(&self, t: f64) -> f64 {
        let s = self.fraction(t);
        match &self.ramps {
            None => 1.0 - s,
            Some((a, _)) => a(s),
        }
    }

    pub fn problem_weight(&self, t: f64) -> f64 {
        let s = self.fraction(t);
        match &self.ramps {
            None => s,
            Some((_, b)) => b(s),
        }
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.total_time * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::OutOfRange(format!(
                "t = {t} outside [0, T = {}]",
                self.total_time
            )));
        }
        Ok(())
    }
}

/// Classical energies of every basis string at unit problem weight.
#[derive(Clone, Debug)]
pub struct DiagonalSpectrum {
    k: usize,
    energies: Vec<f64>,
}

impl DiagonalSpectrum {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, z: &BitString) -> f64 {
        self.energies[z.to_index() as usize]
    }
}

pub fn diagonal_energies(model: &LhzModel) -> Result<DiagonalSpectrum> {
    let k = model.k();
    if k > MAX_DIAGONAL_QUBITS {
        return Err(Error::TooLarge {
            what: "physical qubit count",
            size: k,
            limit: MAX_DIAGONAL_QUBITS,
        });
    }
    let dim = 1u64 << k;
    let energies = if dim as usize >= PARALLEL_DIM {
        (0..dim).into_par_iter().map(|i| model.energy_of_index(i)).collect()
    } else {
        (0..dim).map(|i| model.energy_of_index(i)).collect()
    };
    Ok(DiagonalSpectrum { k, energies })
}

/// Energy of `z` with the bits in `flipped` inverted, minus the energy of
/// `z`, at unit problem weight.
pub fn excitation_energy(model: &LhzModel, z: &BitString, flipped: &[usize]) -> Result<f64> {
    if z.len() != model.k() {
        return Err(Error::ShapeMismatch(format!(
            "string of length {} for K = {}",
            z.len(),
            model.k()
        )));
    }
    if let Some(&i) = flipped.iter().find(|&&i| i >= model.k()) {
        return Err(Error::ShapeMismatch(format!("flip index {i} out of range")));
    }
    let base = z.to_index();
    let excited = flipped.iter().fold(base, |acc, &i| acc ^ (1u64 << i));
    Ok(model.energy_of_index(excited) - model.energy_of_index(base))
}

/// Matrix-free action of `H(t) = b ε − a Σ σ^x` on a basis-indexed vector.
#[derive(Clone, Copy)]
pub struct SpinOperator<'a> {
    diagonal: &'a [f64],
    problem: f64,
    transverse: f64,
    k: usize,
}

impl<'a> SpinOperator<'a> {
    pub fn new(spectrum: &'a DiagonalSpectrum, schedule: &Schedule, t: f64) -> Self {
        Self::from_weights(
            spectrum,
            schedule.problem_weight(t),
            schedule.transverse_weight(t),
        )
    }

    pub fn from_weights(spectrum: &'a DiagonalSpectrum, problem: f64, transverse: f64) -> Self {
        Self {
            diagonal: &spectrum.energies,
            problem,
            transverse,
            k: spectrum.k,
        }
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    /// Upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let dmax = self.diagonal.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        self.problem.abs() * dmax + self.transverse.abs() * self.k as f64
    }

    #[inline]
    fn row<T>(&self, a: usize, x: &[T]) -> T
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T>,
    {
        let mut flips = x[a ^ 1];
        for i in 1..self.k {
            flips = flips + x[a ^ (1 << i)];
        }
        x[a] * (self.problem * self.diagonal[a]) + flips * (-self.transverse)
    }

    /// `y = H x`.
    pub fn apply<T>(&self, x: &[T], y: &mut [T])
    where
        T: Copy + Send + Sync + Add<Output = T> + Mul<f64, Output = T>,
    {
        debug_assert_eq!(x.len(), self.dim());
        if self.dim() >= PARALLEL_DIM {
            y.par_iter_mut().enumerate().for_each(|(a, out)| *out = self.row(a, x));
        } else {
            for (a, out) in y.iter_mut().enumerate() {
                *out = self.row(a, x);
            }
        }
    }

    pub fn apply_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.apply(x, y)
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            h[(a, a)] = self.problem * self.diagonal[a];
            for i in 0..self.k {
                h[(a, a ^ (1 << i))] = -self.transverse;
            }
        }
        h
    }
}

/// Dense `H(t)`; only for `K ≤ DENSE_QUBITS`.
pub fn dense_hamiltonian(model: &LhzModel, schedule: &Schedule, t: f64) -> Result<DMatrix<f64>> {
    if model.k() > DENSE_QUBITS {
        return Err(Error::TooLarge {
            what: "dense Hamiltonian qubit count",
            size: model.k(),
            limit: DENSE_QUBITS,
        });
    }
    let spectrum = diagonal_energies(model)?;
    Ok(SpinOperator::new(&spectrum, schedule, t).dense())
}

/// Lowest eigenpairs of `H(t)`. `H(t)` is real symmetric, so the
/// eigenvectors are real.
#[derive(Clone, Debug)]
pub struct InstantaneousSpectrum {
    pub t: f64,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<DVector<f64>>,
}

/// Sign convention: the largest-magnitude component is positive.
pub(crate) fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best + 1e-12 {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

pub fn instantaneous_spectrum(
    model: &LhzModel,
    schedule: &Schedule,
    t: f64,
    k: usize,
) -> Result<InstantaneousSpectrum> {
    schedule.check_time(t)?;
    let spectrum = diagonal_energies(model)?;
    spectrum_of(model, &spectrum, schedule, t, k)
}

/// Same as [`instantaneous_spectrum`] with a precomputed diagonal.
pub fn spectrum_of(
    model: &LhzModel,
    spectrum: &DiagonalSpectrum,
    schedule: &Schedule,
    t: f64,
    k: usize,
) -> Result<InstantaneousSpectrum> {
    let dim = spectrum.energies.len();
    if k == 0 || k > dim {
        return Err(Error::OutOfRange(format!("k = {k} for dimension {dim}")));
    }
    let op = SpinOperator::new(spectrum, schedule, t);

    if op.transverse == 0.0 {
        return Ok(diagonal_spectrum(model, spectrum, op.problem, t, k));
    }

    if model.k() <= DENSE_QUBITS {
        let eig = SymmetricEigen::new(op.dense());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = order[..k]
            .iter()
            .map(|&i| {
                let mut v = eig.eigenvectors.column(i).into_owned();
                fix_sign(&mut v);
                v
            })
            .collect();
        return Ok(InstantaneousSpectrum {
            t,
            eigenvalues,
            eigenvectors,
        });
    }

    if model.k() > MAX_ITERATIVE_QUBITS {
        return Err(Error::TooLarge {
            what: "eigensolver qubit count",
            size: model.k(),
            limit: MAX_ITERATIVE_QUBITS,
        });
    }
    let (eigenvalues, vectors) = lanczos::lowest_eigenpairs(
        |x, y| op.apply(x, y),
        dim,
        k,
        &LanczosOptions::default(),
    )?;
    let eigenvectors = vectors
        .into_iter()
        .map(|v| {
            let mut v = DVector::from_vec(v);
            fix_sign(&mut v);
            v
        })
        .collect();
    Ok(InstantaneousSpectrum {
        t,
        eigenvalues,
        eigenvectors,
    })
}

/// Exact spectrum when the transverse field vanishes. Degenerate levels are
/// resolved in the basis of ground strings first, then by basis index.
fn diagonal_spectrum(
    model: &LhzModel,
    spectrum: &DiagonalSpectrum,
    weight: f64,
    t: f64,
    k: usize,
) -> InstantaneousSpectrum {
    let dim = spectrum.energies.len();
    let ground_rank = |idx: usize| {
        model
            .ground_strings()
            .iter()
            .position(|z| z.to_index() as usize == idx)
            .unwrap_or(usize::MAX)
    };
    let mut order: Vec<usize> = (0..dim).collect();
    let tol = 1e-12 * spectrum.energies.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    order.sort_by(|&a, &b| {
        let (ea, eb) = (weight * spectrum.energies[a], weight * spectrum.energies[b]);
        if (ea - eb).abs() > tol * weight.abs().max(1.0) {
            ea.total_cmp(&eb)
        } else {
            ground_rank(a).cmp(&ground_rank(b)).then(a.cmp(&b))
        }
    });
    let eigenvalues = order[..k]
        .iter()
        .map(|&i| weight * spectrum.energies[i])
        .collect();
    let eigenvectors = order[..k]
        .iter()
        .map(|&i| {
            let mut v = DVector::zeros(dim);
            v[i] = 1.0;
            v
        })
        .collect();
    InstantaneousSpectrum {
        t,
        eigenvalues,
        eigenvectors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{example_model, example_model_with};

    #[test]
    fn linear_schedule_boundaries() {
        let s = Schedule::linear(10.0).unwrap();
        assert_eq!(s.transverse_weight(0.0), 1.0);
        assert_eq!(s.problem_weight(0.0), 0.0);
        assert_eq!(s.transverse_weight(10.0), 0.0);
        assert_eq!(s.problem_weight(10.0), 1.0);
        assert!(Schedule::linear(0.0).is_err());
    }

    #[test]
    fn ground_energy_matches_closed_form() {
        let model = example_model_with(&[4.0, 4.0, 4.0]);
        let spec = diagonal_energies(&model).unwrap();
        // -(Σ_i J_i s_i + Σ_p C_p) with Σ_i J_i s_i = 2 on every ground string
        for z in model.ground_strings() {
            assert!((spec.energy(z) + (2.0 + 12.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_hamiltonian_has_zero_energies() {
        let model = example_model().with_strengths(&[0.0, 0.0, 0.0]).unwrap();
        let zero = LhzModel::new(4, vec![0.0; 6], &model.strengths(), model.ground_strings().to_vec())
            .unwrap();
        assert!(diagonal_energies(&zero).unwrap().energies().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn diagonal_matches_dense_at_end() {
        let model = example_model_with(&[4.0, 4.0, 4.0]);
        let spec = diagonal_energies(&model).unwrap();
        let schedule = Schedule::linear(1.0).unwrap();
        let h = dense_hamiltonian(&model, &schedule, 1.0).unwrap();
        let eig = SymmetricEigen::new(h.clone());
        let mut a: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let mut b = spec.energies().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
        for i in 0..64 {
            assert_eq!(h[(i, i)], spec.energies()[i]);
        }
    }

    #[test]
    fn single_flip_excitation() {
        let model = example_model_with(&[2.0, 3.0, 5.0]);
        let c = model.strengths();
        for z in model.ground_strings() {
            for i in 0..model.k() {
                let expected = 2.0
                    * (model.local_fields()[i] * z.spin(i)
                        + model.member_sets()[i].iter().map(|&p| c[p]).sum::<f64>());
                let got = excitation_energy(&model, z, &[i]).unwrap();
                assert!((got - expected).abs() < 1e-12);
                assert!(got > 0.0);
            }
            assert_eq!(excitation_energy(&model, z, &[]).unwrap(), 0.0);
        }
        assert!(excitation_energy(&model, &model.ground_strings()[0], &[6]).is_err());
    }

    #[test]
    fn double_flip_matches_table() {
        let model = example_model_with(&[4.0, 4.0, 4.0]);
        let spec = diagonal_energies(&model).unwrap();
        let z = &model.ground_strings()[1];
        for i in 0..6 {
            for j in (i + 1)..6 {
                let direct = spec.energy(&z.flipped(&[i, j])) - spec.energy(z);
                let got = excitation_energy(&model, z, &[i, j]).unwrap();
                assert!((got - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn start_of_sweep_is_uniform_superposition() {
        let model = example_model();
        let schedule = Schedule::linear(100.0).unwrap();
        let spec = instantaneous_spectrum(&model, &schedule, 0.0, 2).unwrap();
        assert!((spec.eigenvalues[0] + 6.0).abs() < 1e-10);
        for &a in spec.eigenvectors[0].iter() {
            assert!((a - 0.125).abs() < 1e-10);
        }
    }

    #[test]
    fn end_of_sweep_is_ground_manifold() {
        let model = example_model();
        let schedule = Schedule::linear(100.0).unwrap();
        let spec = instantaneous_spectrum(&model, &schedule, 100.0, 3).unwrap();
        let e0 = spec.eigenvalues[0];
        for (n, z) in model.ground_strings().iter().enumerate() {
            assert!((spec.eigenvalues[n] - e0).abs() < 1e-12);
            assert_eq!(spec.eigenvectors[n][z.to_index() as usize], 1.0);
        }
    }

    #[test]
    fn three_low_levels_below_gap() {
        let model = example_model_with(&[4.0, 4.0, 4.0]);
        let schedule = Schedule::linear(1.0).unwrap();
        let spec = instantaneous_spectrum(&model, &schedule, 0.9, 4).unwrap();
        let e = &spec.eigenvalues;
        let spread = e[2] - e[0];
        let gap = e[3] - e[2];
        assert!(spread < 0.05, "spread {spread}");
        assert!(gap > 0.5, "gap {gap}");
        for (i, u) in spec.eigenvectors.iter().enumerate() {
            for (j, v) in spec.eigenvectors.iter().enumerate() {
                let d = u.dot(v) - if i == j { 1.0 } else { 0.0 };
                assert!(d.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dense_is_symmetric_and_matches_operator() {
        let model = example_model_with(&[1.5, 2.5, 3.5]);
        let schedule = Schedule::linear(1.0).unwrap();
        let spec = diagonal_energies(&model).unwrap();
        let op = SpinOperator::new(&spec, &schedule, 0.37);
        let h = op.dense();
        assert_eq!(h, h.transpose());
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 64];
        op.apply(&x, &mut y);
        let y2 = &h * DVector::from_vec(x);
        for i in 0..64 {
            assert!((y[i] - y2[i]).abs() < 1e-12);
        }
    }
}
