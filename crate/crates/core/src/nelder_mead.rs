//! Box-constrained Nelder-Mead simplex minimizer.
//!
//! Trial points outside the box are clamped before evaluation and charged a
//! quadratic penalty on the clamped distance, so the objective is only ever
//! called inside the box.

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the simplex values spread less than this...
    pub f_tol: f64,
    /// ...and its vertices lie within this distance of the best one.
    pub x_tol: f64,
    /// Initial edge length as a fraction of each box width.
    pub initial_step: f64,
    pub penalty: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-12,
            x_tol: 1e-6,
            initial_step: 0.1,
            penalty: 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

pub fn clamp(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &h))| v.clamp(l, h))
        .collect()
}

pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n > 0 && lo.len() == n && hi.len() == n, "dimension mismatch");
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| -> (Vec<f64>, f64) {
        let c = clamp(x, lo, hi);
        let outside: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
        evals.set(evals.get() + 1);
        let v = f(&c);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        (c, v + opts.penalty * outside)
    };

    let start = clamp(x0, lo, hi);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let (_, v0) = eval(&start);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let width = hi[i] - lo[i];
        let mut x = start.clone();
        let step = opts.initial_step * width;
        x[i] = if x[i] + step <= hi[i] { x[i] + step } else { x[i] - step };
        let (_, v) = eval(&x);
        simplex.push((x, v));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= opts.f_tol && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        if evals.get() >= opts.max_evals {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let worst_x = simplex[n].0.clone();

        let reflected = toward(1.0, &worst_x);
        let (_, fr) = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = toward(2.0, &worst_x);
            let (_, fe) = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[n].1 {
            let x = toward(0.5, &worst_x);
            let (_, v) = eval(&x);
            (x, v)
        } else {
            let x = toward(-0.5, &worst_x);
            let (_, v) = eval(&x);
            (x, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = anchor
                .iter()
                .zip(&vertex.0)
                .map(|(a, b)| a + 0.5 * (b - a))
                .collect();
            let (_, v) = eval(&x);
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x: clamp(&x, lo, hi),
        value,
        evals: evals.get(),
        converged,
    }
}
