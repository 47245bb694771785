//! Brute-force references for checking the estimator: tensor Gauss–Legendre
//! quadrature over the parameter box, dense generalized eigensolves,
//! closed-form discrete Laplacian eigenvalues, and exhaustive CBC search.
//!
//! Nothing in here is on the estimator's code path.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::fem::AssembledPair;
use crate::lattice::{bernoulli2, PodWeights};
use crate::{Error, Result};

/// Largest problem `dense_reference_eigenpairs` accepts.
pub const DENSE_MAX_DOFS: usize = 512;
const TENSOR_MAX_DIM: usize = 4;
const TENSOR_MAX_NODES: usize = 32;

/// Gauss–Legendre nodes and weights on `[-1/2, 1/2]`, weights summing to 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton on P_n from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1, 1] -> [-1/2, 1/2] and normalize to probability weights
        nodes[i] = -0.5 * x;
        nodes[n - 1 - i] = 0.5 * x;
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Full tensor-product Gauss–Legendre rule on `[-1/2, 1/2]^s`.
#[derive(Clone, Debug)]
pub struct TensorQuadrature {
    pub s: usize,
    pub n: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TensorQuadrature {
    pub fn new(s: usize, n: usize) -> Result<Self> {
        if s > TENSOR_MAX_DIM || n > TENSOR_MAX_NODES || n == 0 {
            return Err(Error::Guard(format!(
                "tensor rule with s = {s}, n = {n} exceeds s <= {TENSOR_MAX_DIM}, 1 <= n <= {TENSOR_MAX_NODES}"
            )));
        }
        let (nodes, weights) = gauss_legendre(n);
        Ok(TensorQuadrature { s, n, nodes, weights })
    }

    pub fn num_points(&self) -> usize {
        self.n.pow(self.s as u32)
    }

    /// Grid point `idx` (mixed radix, first coordinate fastest) and its weight.
    pub fn point(&self, mut idx: usize, out: &mut [f64]) -> f64 {
        let mut w = 1.0;
        for o in out.iter_mut().take(self.s) {
            let i = idx % self.n;
            idx /= self.n;
            *o = self.nodes[i];
            w *= self.weights[i];
        }
        w
    }
}

/// Tensor-product quadrature of `f`; parallel over grid points, summed in index order.
pub fn expect_tensor<F>(f: F, quad: &TensorQuadrature) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let terms: Vec<Result<f64>> = (0..quad.num_points())
        .into_par_iter()
        .map(|idx| {
            let mut y = vec![0.0; quad.s];
            let w = quad.point(idx, &mut y);
            f(&y).map(|v| w * v)
        })
        .collect();
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// The `k` smallest generalized eigenpairs by Cholesky reduction of `M` and a
/// dense symmetric eigendecomposition. Eigenvectors are `M`-normalized.
pub fn dense_reference_eigenpairs(sys: &AssembledPair, k: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = sys.dim();
    if n > DENSE_MAX_DOFS {
        return Err(Error::Guard(format!("{n} dofs exceeds the dense limit {DENSE_MAX_DOFS}")));
    }
    let a = DMatrix::from_fn(n, n, |i, j| sys.a.get(i, j));
    let m = DMatrix::from_fn(n, n, |i, j| sys.m.get(i, j));
    let chol = m
        .cholesky()
        .ok_or(Error::Factorization { pivot: 0, value: f64::NAN })?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(Error::Factorization { pivot: 0, value: f64::NAN })?;
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| {
            let w = eig.eigenvectors.column(i).into_owned();
            // u = L^{-T} w has u^T M u = w^T w = 1
            let u = lt
                .clone()
                .solve_upper_triangular(&w)
                .expect("triangular factor is nonsingular");
            (eig.eigenvalues[i], u.iter().cloned().collect())
        })
        .collect())
}

/// `k`-th eigenvalue of the P1 Laplacian (exact mass matrix) on a uniform 1D mesh.
pub fn discrete_laplacian_eigenvalue(h: f64, k: usize) -> f64 {
    let c = (k as f64 * std::f64::consts::PI * h).cos();
    6.0 / (h * h) * (1.0 - c) / (2.0 + c)
}

/// Worst-case error by explicit enumeration of all nonempty subsets.
pub fn naive_worst_case_error_sq(z: &[u64], n: usize, weights: &PodWeights) -> f64 {
    let s = z.len();
    let mut total = 0.0;
    for mask in 1u64..(1u64 << s) {
        let u: Vec<usize> = (0..s).filter(|j| mask >> j & 1 == 1).collect();
        let gamma = weights.gamma_u(&u);
        let mut inner = 0.0;
        for k in 0..n as u64 {
            inner += u
                .iter()
                .map(|&j| bernoulli2(((k * z[j]) % n as u64) as f64 / n as f64))
                .product::<f64>();
        }
        total += gamma * inner / n as f64;
    }
    total
}

/// Exhaustive search for the next component after `prefix`: the minimum of
/// the naive error over all odd candidates, and every candidate attaining it
/// to within `rel_tol`.
pub fn exhaustive_next_component(
    prefix: &[u64],
    n: usize,
    weights: &PodWeights,
    rel_tol: f64,
) -> (f64, Vec<u64>) {
    let scored: Vec<(u64, f64)> = (1..n as u64)
        .step_by(2)
        .map(|c| {
            let mut z = prefix.to_vec();
            z.push(c);
            (c, naive_worst_case_error_sq(&z, n, weights))
        })
        .collect();
    let best = scored.iter().map(|(_, e)| *e).fold(f64::INFINITY, f64::min);
    let ties = scored
        .into_iter()
        .filter(|(_, e)| *e <= best * (1.0 + rel_tol))
        .map(|(c, _)| c)
        .collect();
    (best, ties)
}
