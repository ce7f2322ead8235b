//! Restarted block Lanczos for the lowest eigenpairs of a real symmetric
//! operator given only through its action `y = A x`.
//!
//! Full reorthogonalization keeps the Krylov basis orthonormal to machine
//! precision; the block size exceeds the number of wanted pairs so that
//! degenerate levels are captured.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    pub tolerance: f64,
    pub max_restarts: usize,
    pub max_basis: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_restarts: 200,
            max_basis: 96,
            seed: 0x5eed,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Orthogonalizes `v` against `basis` (two passes) and normalizes it.
/// Returns false if `v` lies numerically in the span.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let n0 = dot(v, v).sqrt();
    if n0 == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, v);
            axpy(-c, b, v);
        }
    }
    let n = dot(v, v).sqrt();
    if n < 1e-10 * n0.max(1.0) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Lowest `k` eigenvalues (ascending) and orthonormal eigenvectors.
pub fn lowest_eigenpairs<F>(
    apply: F,
    dim: usize,
    k: usize,
    opts: &LanczosOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: Fn(&[f64], &mut [f64]),
{
    if k == 0 || k > dim {
        return Err(Error::OutOfRange(format!("k = {k} for dimension {dim}")));
    }
    let block = (k + 2).min(dim);
    let max_basis = opts.max_basis.max(3 * block).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut start: Vec<Vec<f64>> = Vec::with_capacity(block);
    while start.len() < block {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        if orthonormalize(&mut v, &start) {
            start.push(v);
        }
    }

    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
        let mut images: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
        for mut v in start.drain(..) {
            if orthonormalize(&mut v, &basis) {
                basis.push(v);
            }
        }
        let mut frontier = 0;
        while basis.len() < max_basis && frontier < basis.len() {
            let end = basis.len();
            for j in frontier..end {
                let mut w = vec![0.0; dim];
                apply(&basis[j], &mut w);
                images.push(w);
            }
            let mut added = 0;
            for j in frontier..end {
                if basis.len() >= max_basis {
                    break;
                }
                let mut w = images[j].clone();
                if orthonormalize(&mut w, &basis) {
                    basis.push(w);
                    added += 1;
                }
            }
            frontier = end;
            if added == 0 {
                break;
            }
        }
        for j in images.len()..basis.len() {
            let mut w = vec![0.0; dim];
            apply(&basis[j], &mut w);
            images.push(w);
        }

        let m = basis.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let keep = block.min(m);
        let mut values = Vec::with_capacity(keep);
        let mut vectors = Vec::with_capacity(keep);
        residual = 0.0f64;
        for (rank, &c) in order[..keep].iter().enumerate() {
            let theta = eig.eigenvalues[c];
            let coeffs = eig.eigenvectors.column(c);
            let mut x = vec![0.0; dim];
            let mut ax = vec![0.0; dim];
            for j in 0..m {
                axpy(coeffs[j], &basis[j], &mut x);
                axpy(coeffs[j], &images[j], &mut ax);
            }
            if rank < k {
                let r: f64 = ax
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - theta * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                residual = residual.max(r / theta.abs().max(1.0));
            }
            values.push(theta);
            vectors.push(x);
        }
        if residual < opts.tolerance || m == dim {
            values.truncate(k);
            vectors.truncate(k);
            return Ok((values, vectors));
        }
        start = vectors;
    }
    Err(Error::SolverFailure { residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(x: &[f64], y: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut v = 2.0 * x[i];
            if i > 0 {
                v -= x[i - 1];
            }
            if i + 1 < n {
                v -= x[i + 1];
            }
            y[i] = v;
        }
    }

    #[test]
    fn path_graph_spectrum() {
        let n = 300;
        let (vals, vecs) =
            lowest_eigenpairs(path_laplacian, n, 3, &LanczosOptions::default()).unwrap();
        for (j, v) in vals.iter().enumerate() {
            let exact =
                2.0 - 2.0 * (std::f64::consts::PI * (j + 1) as f64 / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-9, "{v} vs {exact}");
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&vecs[i], &vecs[j]) - if i == j { 1.0 } else { 0.0 };
                assert!(d.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_levels_are_resolved() {
        // diag(0, 0, 0, 1, 2, ...) has a threefold degenerate bottom
        let n = 200;
        let diag: Vec<f64> = (0..n).map(|i| if i < 3 { 0.0 } else { (i - 2) as f64 }).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = diag[i] * x[i];
            }
        };
        let (vals, _) = lowest_eigenpairs(apply, n, 4, &LanczosOptions::default()).unwrap();
        assert!(vals[..3].iter().all(|v| v.abs() < 1e-9));
        assert!((vals[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_k() {
        assert!(lowest_eigenpairs(path_laplacian, 5, 0, &LanczosOptions::default()).is_err());
        assert!(lowest_eigenpairs(path_laplacian, 5, 6, &LanczosOptions::default()).is_err());
    }
}
