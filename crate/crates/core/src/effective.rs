//! Perturbative effective Hamiltonian of the `M`-dimensional ground manifold.
//!
//! With `s = t/T`, the transverse term is `V = −(1−s) Σ σ^x` and the problem
//! term is `s·ε`. To leading order in `V`:
//!
//! * `H_nn(s)  = s·e0 + ((1−s)²/s)·e_n`, with `e_n = −Σ_i 1/Δε_i` over single flips;
//! * `H_nn'(s) = s^{−(h−1)} (1−s)^h · g_nn'`, with
//!   `g_nn' = −Σ_paths Π_{k<h} 1/Δε_k` over all orderings of the `h` differing bits.
//!
//! `Δε` is an excitation energy at unit problem weight. Intermediate states
//! lying in the ground manifold are projected out and contribute nothing.
//!
//! Two independent oracles check these coefficients: a resolvent product in
//! the full `2^K` space, and the direct rotation built from exact eigenpairs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{diagonal_energies, instantaneous_spectrum, Schedule, MAX_ITERATIVE_QUBITS};
use crate::model::{differing_positions, hamming, LhzModel};

/// Excitation energies below this magnitude are treated as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-6;
/// Hamming distance above which the path sum switches from explicit
/// permutations to a subset recursion with the same value.
pub const MAX_PERMUTATION_ORDER: usize = 8;
const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct EffectiveHamiltonian {
    pub m: usize,
    pub e0: f64,
    pub e: Vec<f64>,
    /// Symmetric, zero diagonal.
    pub g: Vec<Vec<f64>>,
    /// Pairwise Hamming distances of the ground strings.
    pub h: Vec<Vec<usize>>,
    /// Number of permutations visited per pair (0 when the subset recursion was used).
    #[serde(skip)]
    pub path_counts: Vec<Vec<u64>>,
    pub strengths: Vec<f64>,
}

/// Rearranges `v` into the next lexicographic permutation; false at the last one.
fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

struct PathContext<'a> {
    model: &'a LhzModel,
    e0: f64,
    ground: Vec<u64>,
}

impl PathContext<'_> {
    /// `1/Δε` of basis state `index`, or 0 inside the ground manifold.
    fn inverse_gap(&self, index: u64) -> Result<f64> {
        if self.ground.contains(&index) {
            return Ok(0.0);
        }
        let gap = self.model.energy_of_index(index) - self.e0;
        if gap.abs() < SINGULAR_THRESHOLD {
            return Err(Error::SingularDenominator {
                strengths: self.model.strengths(),
                energy: gap,
            });
        }
        Ok(1.0 / gap)
    }

    fn second_order(&self, base: u64) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.model.k() {
            total += self.inverse_gap(base ^ (1 << i))?;
        }
        Ok(-total)
    }

    /// Path sum from `start` over every ordering of `flips`, with the
    /// number of permutations visited.
    fn path_sum(&self, start: u64, flips: &[usize]) -> Result<(f64, u64)> {
        let h = flips.len();
        if h == 0 {
            return Ok((0.0, 0));
        }
        if h > MAX_PERMUTATION_ORDER {
            return Ok((self.subset_sum(start, flips)?, 0));
        }
        let mut order: Vec<usize> = flips.to_vec();
        order.sort_unstable();
        let mut total = 0.0;
        let mut count = 0u64;
        loop {
            let mut state = start;
            let mut product = 1.0;
            for &q in &order[..h - 1] {
                state ^= 1 << q;
                product *= self.inverse_gap(state)?;
            }
            total += product;
            count += 1;
            if !next_permutation(&mut order) {
                break;
            }
        }
        Ok((-total, count))
    }

    /// Same sum via `F(S) = w(S) Σ_{i∈S} F(S∖i)` over flip subsets.
    fn subset_sum(&self, start: u64, flips: &[usize]) -> Result<f64> {
        let h = flips.len();
        let full = (1usize << h) - 1;
        let mut f = vec![0.0; 1 << h];
        f[0] = 1.0;
        let mut subsets: Vec<usize> = (1..full).collect();
        subsets.sort_by_key(|s| s.count_ones());
        for s in subsets {
            let state = (0..h)
                .filter(|b| s >> b & 1 == 1)
                .fold(start, |acc, b| acc ^ (1 << flips[b]));
            let w = self.inverse_gap(state)?;
            if w == 0.0 {
                continue;
            }
            let inner: f64 = (0..h).filter(|b| s >> b & 1 == 1).map(|b| f[s ^ (1 << b)]).sum();
            f[s] = w * inner;
        }
        let total: f64 = (0..h).map(|b| f[full ^ (1 << b)]).sum();
        Ok(-total)
    }
}

pub fn build_effective(model: &LhzModel) -> Result<EffectiveHamiltonian> {
    let m = model.m();
    let ground: Vec<u64> = model.ground_strings().iter().map(|z| z.to_index()).collect();
    let energies: Vec<f64> = ground.iter().map(|&i| model.energy_of_index(i)).collect();
    let e0 = energies[0];
    if energies
        .iter()
        .any(|e| (e - e0).abs() > DEGENERACY_TOL * e0.abs().max(1.0))
    {
        return Err(Error::NotDegenerate(energies));
    }
    let ctx = PathContext { model, e0, ground };

    let e = ctx
        .ground
        .iter()
        .map(|&z| ctx.second_order(z))
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|a| ((a + 1)..m).map(move |b| (a, b)))
        .collect();
    let zs = model.ground_strings();
    let sums = pairs
        .par_iter()
        .map(|&(a, b)| {
            let flips = differing_positions(&zs[a], &zs[b]);
            ctx.path_sum(ctx.ground[b], &flips)
        })
        .collect::<Vec<_>>();

    let mut g = vec![vec![0.0; m]; m];
    let mut h = vec![vec![0usize; m]; m];
    let mut path_counts = vec![vec![0u64; m]; m];
    for (&(a, b), sum) in pairs.iter().zip(sums) {
        let (value, count) = sum?;
        let d = hamming(&zs[a], &zs[b])?;
        g[a][b] = value;
        g[b][a] = value;
        h[a][b] = d;
        h[b][a] = d;
        path_counts[a][b] = count;
        path_counts[b][a] = count;
    }
    Ok(EffectiveHamiltonian {
        m,
        e0,
        e,
        g,
        h,
        path_counts,
        strengths: model.strengths(),
    })
}

impl EffectiveHamiltonian {
    /// Diagonal entry `n` at time fraction `s`.
    pub fn diagonal(&self, n: usize, s: f64) -> f64 {
        s * self.e0 + (1.0 - s).powi(2) / s * self.e[n]
    }

    /// Off-diagonal time prefactor `s^{−(h−1)} (1−s)^h`.
    pub fn coupling_factor(h: usize, s: f64) -> f64 {
        let h = h as i32;
        (1.0 - s).powi(h) / s.powi(h - 1)
    }

    /// Off-diagonal entry `(a, b)` at time fraction `s`.
    pub fn coupling(&self, a: usize, b: usize, s: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        Self::coupling_factor(self.h[a][b], s) * self.g[a][b]
    }

    /// `M × M` matrix at time fraction `s ∈ (0, 1]`.
    pub fn at_fraction(&self, s: f64) -> Result<DMatrix<f64>> {
        if !(s > 0.0) {
            return Err(Error::DivergentExpansion(s));
        }
        if s > 1.0 + 1e-12 {
            return Err(Error::OutOfRange(format!("t/T = {s} exceeds 1")));
        }
        let s = s.min(1.0);
        Ok(DMatrix::from_fn(self.m, self.m, |a, b| {
            if a == b {
                self.diagonal(a, s)
            } else {
                self.coupling(a, b, s)
            }
        }))
    }

    /// `H_eff(t)`; only defined for the linear schedule.
    pub fn evaluate(&self, t: f64, schedule: &Schedule) -> Result<DMatrix<f64>> {
        require_linear(schedule)?;
        if !(t > 0.0) {
            return Err(Error::DivergentExpansion(t));
        }
        self.at_fraction(schedule.fraction(t))
    }

    /// Normalized ground eigenvector of `H_eff` at fraction `s`, with the
    /// largest-magnitude component positive.
    pub fn ground_state(&self, s: f64) -> Result<DVector<f64>> {
        let eig = SymmetricEigen::new(self.at_fraction(s)?);
        let i = eig.eigenvalues.imin();
        let mut v = eig.eigenvectors.column(i).into_owned();
        crate::hamiltonian::fix_sign(&mut v);
        Ok(v)
    }
}

pub(crate) fn require_linear(schedule: &Schedule) -> Result<()> {
    if schedule.is_linear() {
        Ok(())
    } else {
        Err(Error::UnsupportedSchedule(
            "the effective model assumes linear ramps".into(),
        ))
    }
}

pub fn evaluate(heff: &EffectiveHamiltonian, t: f64, schedule: &Schedule) -> Result<DMatrix<f64>> {
    heff.evaluate(t, schedule)
}

/// Full-space ingredients of the resolvent expansion at one instant:
/// the projector onto the ground strings and `Q/(E_0 − H_0)` on the rest.
#[derive(Clone, Debug)]
pub struct ResolventOracle {
    k: usize,
    ground: Vec<u64>,
    /// `1/(E_0 − b ε)` off the ground manifold, 0 on it.
    resolvent: Vec<f64>,
    ground_energy: f64,
    transverse: f64,
}

impl ResolventOracle {
    pub fn new(model: &LhzModel, t: f64, schedule: &Schedule) -> Result<Self> {
        if model.k() > MAX_ITERATIVE_QUBITS {
            return Err(Error::TooLarge {
                what: "resolvent oracle qubit count",
                size: model.k(),
                limit: MAX_ITERATIVE_QUBITS,
            });
        }
        if !(t > 0.0) {
            return Err(Error::DivergentExpansion(t));
        }
        schedule.check_time(t)?;
        let spectrum = diagonal_energies(model)?;
        let ground: Vec<u64> = model.ground_strings().iter().map(|z| z.to_index()).collect();
        let e0 = spectrum.energies()[ground[0] as usize];
        let b = schedule.problem_weight(t);
        let a = schedule.transverse_weight(t);
        let resolvent = spectrum
            .energies()
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                if ground.contains(&(i as u64)) {
                    0.0
                } else {
                    let gap = e - e0;
                    if gap.abs() < SINGULAR_THRESHOLD {
                        f64::NAN
                    } else {
                        1.0 / (b * (e0 - e))
                    }
                }
            })
            .collect();
        Ok(Self {
            k: model.k(),
            ground,
            resolvent,
            ground_energy: b * e0,
            transverse: a,
        })
    }

    /// `P + Q = 1`: true for indices in the ground manifold.
    pub fn in_p(&self, index: usize) -> bool {
        self.ground.contains(&(index as u64))
    }

    fn apply_v(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (i, out) in y.iter_mut().enumerate() {
            let s: f64 = (0..self.k).map(|q| x[i ^ (1 << q)]).sum();
            *out = -self.transverse * s;
        }
        y
    }

    fn apply_resolvent(&self, x: &mut [f64], strengths: &[f64]) -> Result<()> {
        for (i, xi) in x.iter_mut().enumerate() {
            let r = self.resolvent[i];
            if r.is_nan() {
                if *xi != 0.0 {
                    return Err(Error::SingularDenominator {
                        strengths: strengths.to_vec(),
                        energy: 0.0,
                    });
                }
            } else {
                *xi *= r;
            }
        }
        Ok(())
    }

    /// `⟨z_n|(V R)^{h−1} V|z_n'⟩` off the diagonal and
    /// `E_0 + ⟨z_n|V R V|z_n⟩` on it.
    pub fn matrix(&self, hamming: &[Vec<usize>], strengths: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.ground.len();
        let dim = self.resolvent.len();
        let mut out = DMatrix::zeros(m, m);
        for b in 0..m {
            let mut basis = vec![0.0; dim];
            basis[self.ground[b] as usize] = 1.0;
            let first = self.apply_v(&basis);
            let max_h = (0..m).map(|a| hamming[a][b]).max().unwrap_or(1).max(2);
            let mut x = first;
            for order in 1..=max_h {
                for a in 0..m {
                    let h = if a == b { 2 } else { hamming[a][b] };
                    if h == order {
                        let v = x[self.ground[a] as usize];
                        out[(a, b)] = if a == b { self.ground_energy + v } else { v };
                    }
                }
                if order < max_h {
                    self.apply_resolvent(&mut x, strengths)?;
                    x = self.apply_v(&x);
                }
            }
        }
        Ok(out)
    }
}

/// Effective Hamiltonian from repeated full-space applications of `V` and
/// the resolvent; independent of the closed-form coefficients.
pub fn resolvent_oracle(model: &LhzModel, t: f64, schedule: &Schedule) -> Result<DMatrix<f64>> {
    let oracle = ResolventOracle::new(model, t, schedule)?;
    let zs = model.ground_strings();
    let m = zs.len();
    let mut h = vec![vec![0usize; m]; m];
    for a in 0..m {
        for b in 0..m {
            h[a][b] = hamming(&zs[a], &zs[b])?;
        }
    }
    oracle.matrix(&h, &model.strengths())
}

/// Numerically exact effective Hamiltonian: `W Λ Wᵀ` where `Λ` holds the
/// `M` lowest exact eigenvalues of `H(t)` and `W` is the orthogonal polar
/// factor of the overlap matrix `O_nm = ⟨z_n|φ_m(t)⟩`.
pub fn direct_rotation_oracle(model: &LhzModel, t: f64, schedule: &Schedule) -> Result<DMatrix<f64>> {
    let m = model.m();
    let spectrum = instantaneous_spectrum(model, schedule, t, m)?;
    let idx: Vec<usize> = model
        .ground_strings()
        .iter()
        .map(|z| z.to_index() as usize)
        .collect();
    let overlap = DMatrix::from_fn(m, m, |n, j| spectrum.eigenvectors[j][idx[n]]);
    let svd = overlap.clone().svd(true, true);
    let smallest = svd.singular_values.min();
    if smallest < 1e-8 {
        return Err(Error::IllConditioned(format!(
            "smallest overlap singular value {smallest:e} at t = {t}"
        )));
    }
    let w = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
    let lambda = DMatrix::from_diagonal(&DVector::from_vec(spectrum.eigenvalues));
    let h = &w * lambda * w.transpose();
    Ok((&h + h.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{example_model, example_model_with};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Closed forms for the four-spin example, labels in the order 1111, 1100, 1011.
    fn e1_closed(c: [f64; 3]) -> f64 {
        let [c1, c2, c3] = c;
        0.5 * (-1.0 / (1.0 + c2) - 1.0 / c3 - 1.0 / (1.0 + c1 + c3) - 1.0 / (c2 + c3)
            + 1.0 / (1.0 - c1 - c2 - c3)
            - 1.0 / (1.0 + c1))
    }

    #[test]
    fn next_permutation_is_lexicographic() {
        let mut v = vec![0, 1, 2];
        let mut seen = vec![v.clone()];
        while next_permutation(&mut v) {
            seen.push(v.clone());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[1], vec![0, 2, 1]);
        assert_eq!(seen[5], vec![2, 1, 0]);
    }

    #[test]
    fn diagonal_coefficient_matches_closed_form() {
        let heff = build_effective(&example_model()).unwrap();
        assert!((heff.e[0] - e1_closed([4.0, 4.0, 4.0])).abs() < 1e-12);
        assert!((heff.e0 + 14.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_counter_is_factorial() {
        let heff = build_effective(&example_model()).unwrap();
        assert_eq!(heff.h[0][1], 4);
        assert_eq!(heff.path_counts[0][1], 24);
        assert_eq!(heff.h[0][2], 3);
        assert_eq!(heff.path_counts[0][2], 6);
        assert_eq!(heff.path_counts[1][2], 6);
    }

    #[test]
    fn subset_recursion_equals_permutations() {
        let model = example_model_with(&[2.3, 5.1, 0.7]);
        let e0 = model.energy(&model.ground_strings()[0]);
        let ctx = PathContext {
            model: &model,
            e0,
            ground: model.ground_strings().iter().map(|z| z.to_index()).collect(),
        };
        for flips in [vec![0, 1, 2, 4], vec![1, 2, 3, 5], vec![0, 3, 4]] {
            let (p, _) = ctx.path_sum(ctx.ground[0], &flips).unwrap();
            let s = ctx.subset_sum(ctx.ground[0], &flips).unwrap();
            assert!((p - s).abs() < 1e-13 * p.abs().max(1.0));
        }
    }

    #[test]
    fn singular_configuration_is_reported() {
        // 1 − C1 − C2 − C3 = 0 makes a single-flip denominator vanish
        let err = build_effective(&example_model_with(&[0.5, 0.25, 0.25])).unwrap_err();
        assert!(matches!(err, Error::SingularDenominator { .. }));
    }

    #[test]
    fn single_string_has_no_couplings() {
        let base = example_model();
        let one = LhzModel::new(4, base.local_fields().to_vec(), &base.strengths(), vec![
            base.ground_strings()[0].clone(),
        ])
        .unwrap();
        let heff = build_effective(&one).unwrap();
        assert_eq!(heff.m, 1);
        assert_eq!(heff.e.len(), 1);
        assert_eq!(heff.g, vec![vec![0.0]]);
    }

    #[test]
    fn end_of_sweep_is_scaled_identity() {
        let heff = build_effective(&example_model()).unwrap();
        let s = Schedule::linear(50.0).unwrap();
        let h = heff.evaluate(50.0, &s).unwrap();
        assert_eq!(h, DMatrix::from_diagonal_element(3, 3, heff.e0));
        assert!(matches!(heff.evaluate(0.0, &s), Err(Error::DivergentExpansion(_))));
    }

    #[test]
    fn higher_order_couplings_vanish_faster() {
        let heff = build_effective(&example_model()).unwrap();
        let r = |s: f64| (heff.coupling(0, 1, s) / heff.coupling(0, 2, s)).abs();
        assert!(r(0.99) < r(0.9) && r(0.9) < r(0.5));
        assert!(r(0.999) < 1e-2);
    }

    #[test]
    fn oracles_agree_with_closed_form() {
        let model = example_model();
        let heff = build_effective(&model).unwrap();
        let sched = Schedule::linear(1.0).unwrap();
        for t in [0.5, 0.7, 0.9] {
            let a = heff.evaluate(t, &sched).unwrap();
            let b = resolvent_oracle(&model, t, &sched).unwrap();
            assert!((a - b).amax() < 1e-10);
        }
        let r = resolvent_oracle(&model, 1.0, &sched).unwrap();
        assert_eq!(r, DMatrix::from_diagonal_element(3, 3, heff.e0));
    }

    #[test]
    fn random_strengths_agree_with_resolvent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sched = Schedule::linear(1.0).unwrap();
        for _ in 0..10 {
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(1.0..10.0)).collect();
            let model = example_model_with(&c);
            let heff = build_effective(&model).unwrap();
            let a = heff.evaluate(0.6, &sched).unwrap();
            let b = resolvent_oracle(&model, 0.6, &sched).unwrap();
            assert!((&a - &b).amax() < 1e-10 * b.amax().max(1.0));
        }
    }

    #[test]
    fn direct_rotation_preserves_spectrum() {
        let model = example_model_with(&[8.0, 8.0, 8.0]);
        let sched = Schedule::linear(1.0).unwrap();
        let h = direct_rotation_oracle(&model, 0.9, &sched).unwrap();
        let exact = instantaneous_spectrum(&model, &sched, 0.9, 3).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&exact.eigenvalues) {
            assert!((a - b).abs() < 1e-10);
        }
        let end = direct_rotation_oracle(&model, 1.0, &sched).unwrap();
        assert!((end - DMatrix::from_diagonal_element(3, 3, -26.0)).amax() < 1e-12);
    }

    #[test]
    fn custom_ramps_are_rejected() {
        let heff = build_effective(&example_model()).unwrap();
        let s = Schedule::with_ramps(1.0, |s| (1.0 - s).powi(2), |s| s).unwrap();
        assert!(matches!(heff.evaluate(0.5, &s), Err(Error::UnsupportedSchedule(_))));
    }
}
