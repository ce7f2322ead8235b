//! Freeze-in time from pairwise Landau-Zener parameters of the effective model.
//!
//! For a pair `(n, n')`, `v = |d/dt (H_nn − H_n'n')|` and `Δ = H_nn'`. The
//! pair turns diabatic where `v/Δ² = π`; the earliest such time over all
//! coupled pairs is the freeze-in time `t_d`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::effective::{require_linear, EffectiveHamiltonian};
use crate::error::{Error, Result};
use crate::hamiltonian::Schedule;

/// Search bracket in units of `T`.
pub const BRACKET_START: f64 = 0.05;
pub const BRACKET_END_GAP: f64 = 1e-4;
/// Bisection tolerance in units of `T`.
pub const TOLERANCE: f64 = 1e-6;
const SCAN_POINTS: usize = 2000;

#[derive(Clone, Debug, Serialize)]
pub struct PairEstimate {
    pub pair: (usize, usize),
    pub td: f64,
    pub v: f64,
    pub delta: f64,
    /// False when `g_nn' = 0`; such pairs never mix and do not bound `t_d`.
    pub coupled: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiabaticEstimate {
    pub per_pair: Vec<PairEstimate>,
    pub td: f64,
    pub limiting_pair: (usize, usize),
    pub v_at_td: f64,
    pub delta_at_td: f64,
}

fn velocity(heff: &EffectiveHamiltonian, a: usize, b: usize, s: f64, total: f64) -> f64 {
    // d/dt [(1−s)²/s] = −(1−s²)/(s² T)
    (heff.e[a] - heff.e[b]).abs() * (1.0 - s * s) / (s * s * total)
}

/// `(v, Δ)` for the pair at time `t ∈ (0, T)`.
pub fn lz_parameters(
    heff: &EffectiveHamiltonian,
    pair: (usize, usize),
    t: f64,
    schedule: &Schedule,
) -> Result<(f64, f64)> {
    require_linear(schedule)?;
    let (a, b) = pair;
    if a >= heff.m || b >= heff.m || a == b {
        return Err(Error::ShapeMismatch(format!("pair ({a}, {b}) for M = {}", heff.m)));
    }
    let total = schedule.total_time();
    if !(t > 0.0) {
        return Err(Error::DivergentExpansion(t));
    }
    if t >= total {
        return Err(Error::OutOfRange(format!("t = {t} must be below T = {total}")));
    }
    let s = t / total;
    Ok((velocity(heff, a, b, s, total), heff.coupling(a, b, s)))
}

fn pair_td(heff: &EffectiveHamiltonian, a: usize, b: usize, total: f64) -> f64 {
    let f = |s: f64| {
        let delta = heff.coupling(a, b, s);
        velocity(heff, a, b, s, total) / (delta * delta) - PI
    };
    let lo = BRACKET_START;
    let hi = 1.0 - BRACKET_END_GAP;
    if !(f(hi) >= 0.0) {
        return hi;
    }
    // latest upward crossing on a uniform grid, then bisection
    let step = (hi - lo) / SCAN_POINTS as f64;
    let mut right = hi;
    let mut left = None;
    for i in (0..SCAN_POINTS).rev() {
        let s = lo + step * i as f64;
        if f(s) < 0.0 {
            left = Some(s);
            break;
        }
        right = s;
    }
    let Some(mut left) = left else {
        return lo;
    };
    while right - left > TOLERANCE {
        let mid = 0.5 * (left + right);
        if f(mid) < 0.0 {
            left = mid;
        } else {
            right = mid;
        }
    }
    0.5 * (left + right)
}

pub fn estimate_td(heff: &EffectiveHamiltonian, schedule: &Schedule) -> Result<DiabaticEstimate> {
    require_linear(schedule)?;
    if heff.m < 2 {
        return Err(Error::NoPairs);
    }
    let total = schedule.total_time();
    let mut per_pair = Vec::new();
    for a in 0..heff.m {
        for b in (a + 1)..heff.m {
            let coupled = heff.g[a][b] != 0.0;
            let s = if coupled {
                pair_td(heff, a, b, total)
            } else {
                BRACKET_START
            };
            per_pair.push(PairEstimate {
                pair: (a, b),
                td: s * total,
                v: velocity(heff, a, b, s, total),
                delta: heff.coupling(a, b, s),
                coupled,
            });
        }
    }
    let any_coupled = per_pair.iter().any(|p| p.coupled);
    let best = per_pair
        .iter()
        .filter(|p| p.coupled || !any_coupled)
        .min_by(|x, y| x.td.total_cmp(&y.td))
        .expect("at least one pair");
    let (td, limiting_pair, v_at_td, delta_at_td) = (best.td, best.pair, best.v, best.delta);
    Ok(DiabaticEstimate {
        per_pair,
        td,
        limiting_pair,
        v_at_td,
        delta_at_td,
    })
}
