//! Parameter scans: robustness of the prepared state to constraint errors,
//! and reachability of the probability simplex by frozen effective ground
//! states.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{propagate_full, PropagationOptions};
use crate::effective::build_effective;
use crate::error::{Error, Result};
use crate::hamiltonian::Schedule;
use crate::model::LhzModel;

/// `n` evenly spaced relative errors over `[0.6, 1.4]`.
pub fn default_error_grid(n: usize) -> Vec<f64> {
    linspace(0.6, 1.4, n)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `lo, lo+step, …` up to `hi` inclusive, rounded to suppress drift.
pub fn strength_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo) {
        return Err(Error::OutOfRange(format!("grid {lo}:{step}:{hi}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9)
        .collect())
}

/// Freeze-time fractions `(k − ½)/n`, `k = 1..n`.
pub fn freeze_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 - 0.5) / n as f64).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustnessPoint {
    pub constraint: usize,
    pub e: f64,
    /// `None` when the perturbed configuration could not be simulated.
    pub probabilities: Option<Vec<f64>>,
    pub leakage: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustnessScan {
    pub baseline_c: Vec<f64>,
    pub baseline: Vec<f64>,
    pub error_factors: Vec<f64>,
    pub points: Vec<RobustnessPoint>,
}

impl RobustnessScan {
    pub fn curve(&self, constraint: usize) -> impl Iterator<Item = &RobustnessPoint> {
        self.points.iter().filter(move |p| p.constraint == constraint)
    }

    /// Largest `|P_n(e) − P_n(1)| / P_n(1)` over `n` at the sample nearest `e`.
    pub fn relative_deviation(&self, constraint: usize, e: f64) -> Option<f64> {
        let point = self
            .curve(constraint)
            .min_by(|a, b| (a.e - e).abs().total_cmp(&(b.e - e).abs()))?;
        let probs = point.probabilities.as_ref()?;
        Some(
            probs
                .iter()
                .zip(&self.baseline)
                .map(|(p, b)| ((p - b) / b).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Largest change of any probability between adjacent samples.
    pub fn max_jump(&self, constraint: usize) -> f64 {
        let curve: Vec<&Vec<f64>> = self
            .curve(constraint)
            .filter_map(|p| p.probabilities.as_ref())
            .collect();
        curve
            .windows(2)
            .flat_map(|w| w[0].iter().zip(w[1]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let m = self.baseline.len();
        let header: Vec<String> = (1..=m).map(|n| format!("p{n}")).collect();
        writeln!(out, "constraint_index,e,{},leakage", header.join(","))?;
        for p in &self.points {
            match &p.probabilities {
                Some(probs) => {
                    let cols: Vec<String> = probs.iter().map(|x| format!("{x:.10}")).collect();
                    writeln!(out, "{},{:.6},{},{:.3e}", p.constraint + 1, p.e, cols.join(","), p.leakage)?;
                }
                None => {
                    let cols = vec!["nan"; m].join(",");
                    writeln!(out, "{},{:.6},{},nan", p.constraint + 1, p.e, cols)?;
                }
            }
        }
        Ok(())
    }
}

/// Full-dynamics final probabilities with one constraint scaled by each
/// factor of `error_factors`, the others held at `baseline_c`.
pub fn scan_robustness(
    model: &LhzModel,
    baseline_c: &[f64],
    error_factors: &[f64],
    constraints: &[usize],
    schedule: &Schedule,
    options: &PropagationOptions,
) -> Result<RobustnessScan> {
    let n = model.constraints().len();
    if baseline_c.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} baseline strengths for {n} constraints",
            baseline_c.len()
        )));
    }
    if let Some(p) = constraints.iter().find(|&&p| p >= n) {
        return Err(Error::ShapeMismatch(format!("constraint index {p} out of range")));
    }
    let options = PropagationOptions {
        samples: Vec::new(),
        ..options.clone()
    };
    let baseline = propagate_full(model, schedule, baseline_c, &options)?.final_probabilities;
    let jobs: Vec<(usize, f64)> = constraints
        .iter()
        .flat_map(|&p| error_factors.iter().map(move |&e| (p, e)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(p, e)| {
            let mut c = baseline_c.to_vec();
            c[p] *= e;
            match propagate_full(model, schedule, &c, &options) {
                Ok(r) => RobustnessPoint {
                    constraint: p,
                    e,
                    probabilities: Some(r.final_probabilities),
                    leakage: r.leakage,
                },
                Err(_) => RobustnessPoint {
                    constraint: p,
                    e,
                    probabilities: None,
                    leakage: f64::NAN,
                },
            }
        })
        .collect();
    Ok(RobustnessScan {
        baseline_c: baseline_c.to_vec(),
        baseline,
        error_factors: error_factors.to_vec(),
        points,
    })
}

/// Histogram over the 2-simplex with triangular bins of side `1/divisions`.
///
/// A point `p` falls in the bin keyed by `(⌊d·p_1⌋, ⌊d·p_2⌋, upward)`, where
/// the bin is upward-pointing when the three floors sum to `d − 1`.
/// There are `d²` bins in total.
#[derive(Clone, Debug, Serialize)]
pub struct SimplexHistogram {
    pub divisions: usize,
    counts: BTreeMap<(usize, usize, bool), u64>,
}

impl SimplexHistogram {
    pub fn new(divisions: usize) -> Self {
        assert!(divisions > 0, "need at least one division");
        Self {
            divisions,
            counts: BTreeMap::new(),
        }
    }

    pub fn bin_of(&self, p: &[f64]) -> (usize, usize, bool) {
        let d = self.divisions;
        let f = |x: f64| ((x * d as f64).floor().max(0.0) as usize).min(d - 1);
        let (mut i, mut j, mut k) = (f(p[0]), f(p[1]), f(p[2]));
        // points on the outer edges belong to the adjacent interior bin
        while i + j + k > d - 1 {
            let largest = if i >= j && i >= k {
                &mut i
            } else if j >= k {
                &mut j
            } else {
                &mut k
            };
            *largest -= 1;
        }
        // otherwise the floors sum to d − 2 (up to rounding): a downward bin
        (i, j, i + j + k == d - 1)
    }

    pub fn add(&mut self, p: &[f64]) {
        let key = self.bin_of(p);
        *self.counts.entry(key).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &SimplexHistogram) {
        for (k, v) in &other.counts {
            *self.counts.entry(*k).or_insert(0) += v;
        }
    }

    pub fn total_bins(&self) -> usize {
        self.divisions * self.divisions
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn coverage(&self) -> f64 {
        self.occupied_bins() as f64 / self.total_bins() as f64
    }

    /// Every bin with its barycentric center and count, in key order.
    pub fn bins(&self) -> Vec<((usize, usize, bool), [f64; 3], u64)> {
        let d = self.divisions;
        let mut out = Vec::with_capacity(self.total_bins());
        for i in 0..d {
            for j in 0..(d - i) {
                for upward in [false, true] {
                    if !upward && i + j + 2 > d {
                        continue;
                    }
                    let k = if upward { d - 1 - i - j } else { d - 2 - i - j };
                    let shift = if upward { 1.0 / 3.0 } else { 2.0 / 3.0 };
                    let center = [
                        (i as f64 + shift) / d as f64,
                        (j as f64 + shift) / d as f64,
                        (k as f64 + shift) / d as f64,
                    ];
                    let count = self.counts.get(&(i, j, upward)).copied().unwrap_or(0);
                    out.push(((i, j, upward), center, count));
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "i,j,orientation,center_p1,center_p2,center_p3,count")?;
        for ((i, j, up), c, n) in self.bins() {
            let o = if up { "up" } else { "down" };
            writeln!(out, "{i},{j},{o},{:.6},{:.6},{:.6},{n}", c[0], c[1], c[2])?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicityScan {
    pub c_grid: Vec<f64>,
    pub td_grid: Vec<f64>,
    /// Rows of `c_1..c_n, t/T, p_1..p_M`; empty unless points were kept.
    #[serde(skip)]
    pub points: Vec<Vec<f64>>,
    pub evaluated: usize,
    pub skipped: usize,
    pub histogram: SimplexHistogram,
}

impl ErgodicityScan {
    pub fn write_points_csv<W: Write>(&self, out: &mut W, n: usize, m: usize) -> Result<()> {
        let cs: Vec<String> = (1..=n).map(|i| format!("c{i}")).collect();
        let ps: Vec<String> = (1..=m).map(|i| format!("p{i}")).collect();
        writeln!(out, "{},t_over_T,{}", cs.join(","), ps.join(","))?;
        for row in &self.points {
            let cols: Vec<String> = row[..n]
                .iter()
                .map(|x| format!("{x:.2}"))
                .chain(std::iter::once(format!("{:.6}", row[n])))
                .chain(row[n + 1..].iter().map(|x| format!("{x:.8}")))
                .collect();
            writeln!(out, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Ground-state probabilities of `H_eff(t)` for every strength combination
/// on `c_grid` (per constraint) and every freeze fraction in `td_grid`.
/// Singular configurations are skipped and counted.
pub fn scan_ergodicity(
    model: &LhzModel,
    c_grid: &[f64],
    td_grid: &[f64],
    divisions: usize,
    keep_points: bool,
) -> Result<ErgodicityScan> {
    let n = model.constraints().len();
    let m = model.m();
    if m != 3 {
        return Err(Error::ShapeMismatch(format!(
            "simplex histogram needs M = 3, got {m}"
        )));
    }
    if let Some(s) = td_grid.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(Error::OutOfRange(format!("freeze fraction {s} outside (0, 1]")));
    }
    let combos = c_grid.len().checked_pow(n as u32).ok_or(Error::TooLarge {
        what: "ergodicity grid",
        size: usize::MAX,
        limit: usize::MAX,
    })?;
    let decode = |mut idx: usize| -> Vec<f64> {
        let mut c = vec![0.0; n];
        for slot in c.iter_mut().rev() {
            *slot = c_grid[idx % c_grid.len()];
            idx /= c_grid.len();
        }
        c
    };

    struct Chunk {
        rows: Vec<Vec<f64>>,
        hist: SimplexHistogram,
        evaluated: usize,
        skipped: usize,
    }
    let chunks: Vec<Chunk> = (0..combos)
        .into_par_iter()
        .map(|idx| {
            let c = decode(idx);
            let mut chunk = Chunk {
                rows: Vec::new(),
                hist: SimplexHistogram::new(divisions),
                evaluated: 0,
                skipped: 0,
            };
            let heff = match model.with_strengths(&c).and_then(|mm| build_effective(&mm)) {
                Ok(h) => h,
                Err(_) => {
                    chunk.skipped = td_grid.len();
                    return chunk;
                }
            };
            for &s in td_grid {
                match heff.ground_state(s) {
                    Ok(v) => {
                        let p: Vec<f64> = v.iter().map(|x| x * x).collect();
                        chunk.hist.add(&p);
                        chunk.evaluated += 1;
                        if keep_points {
                            let mut row = c.clone();
                            row.push(s);
                            row.extend(p);
                            chunk.rows.push(row);
                        }
                    }
                    Err(_) => chunk.skipped += 1,
                }
            }
            chunk
        })
        .collect();

    let mut histogram = SimplexHistogram::new(divisions);
    let mut points = Vec::new();
    let (mut evaluated, mut skipped) = (0, 0);
    for chunk in chunks {
        histogram.merge(&chunk.hist);
        evaluated += chunk.evaluated;
        skipped += chunk.skipped;
        points.extend(chunk.rows);
    }
    Ok(ErgodicityScan {
        c_grid: c_grid.to_vec(),
        td_grid: td_grid.to_vec(),
        points,
        evaluated,
        skipped,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::example_model;

    #[test]
    fn grids() {
        let g = default_error_grid(9);
        assert_eq!(g.len(), 9);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[8] - 1.4).abs() < 1e-15);
        assert!((g[4] - 1.0).abs() < 1e-15);
        let c = strength_grid(0.1, 4.0, 0.1).unwrap();
        assert_eq!(c.len(), 40);
        assert_eq!(c[39], 4.0);
        let f = freeze_grid(30);
        assert_eq!(f.len(), 30);
        assert!((f[0] - 1.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_has_d_squared_bins() {
        let h = SimplexHistogram::new(20);
        assert_eq!(h.bins().len(), 400);
        assert_eq!(h.total_bins(), 400);
        for (_, c, _) in h.bins() {
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_binning() {
        let mut h = SimplexHistogram::new(20);
        h.add(&[1.0, 0.0, 0.0]);
        h.add(&[0.0, 0.0, 1.0]);
        h.add(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(h.occupied_bins(), 3);
        let keys: Vec<_> = h.bins().into_iter().filter(|b| b.2 > 0).map(|b| b.0).collect();
        assert!(keys.contains(&(19, 0, true)));
        assert!(keys.contains(&(0, 0, true)));
        // every bin center maps to its own bin
        let fresh = SimplexHistogram::new(20);
        for (key, center, _) in fresh.bins() {
            assert_eq!(fresh.bin_of(&center), key);
        }
    }

    #[test]
    fn late_freeze_is_near_a_vertex() {
        let scan = scan_ergodicity(&example_model(), &[4.0], &[0.999], 20, true).unwrap();
        let p = &scan.points[0][4..];
        assert!(p.iter().cloned().fold(0.0, f64::max) > 0.95, "{p:?}");
    }

    #[test]
    fn points_are_normalized() {
        let grid = strength_grid(1.0, 3.0, 1.0).unwrap();
        let scan = scan_ergodicity(&example_model(), &grid, &freeze_grid(5), 20, true).unwrap();
        assert_eq!(scan.evaluated + scan.skipped, 27 * 5);
        for row in &scan.points {
            assert!((row[4..].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
