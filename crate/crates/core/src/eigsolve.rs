//! Smallest eigenpair of `A u = lambda M u` by inverse iteration.
//!
//! `A` is symmetric positive definite, so the shift is zero and a single
//! banded Cholesky factorization of `A` serves every iteration. The returned
//! eigenvector is `M`-normalized and its sign is fixed by `M(u, 1) >= 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::{dot, BandCholesky};
use crate::coeff::CoefficientExpansion;
use crate::fem::AssembledPair;
use crate::{Error, Result};

/// Seed of the fallback start vector.
const FALLBACK_SEED: u64 = 0x5eed_e1ce;
/// Iterations without residual progress before the start vector is replaced.
const STAGNATION_WINDOW: usize = 25;

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative Rayleigh-quotient stagnation tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Gaps below this are reported as degenerate.
    pub gap_min: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 500,
            gap_min: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    pub u: Vec<f64>,
    /// `||A u - lambda M u||_2`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gap: f64,
    /// Set when `gap < gap_min`.
    pub degenerate: bool,
}

struct Iterate {
    lambda: f64,
    x: Vec<f64>,
    residual: f64,
    iterations: usize,
    stagnated: bool,
}

/// Inverse iteration from `x`.
fn inverse_iteration(
    sys: &AssembledPair,
    chol: &BandCholesky,
    mut x: Vec<f64>,
    opts: &SolverOptions,
) -> Result<Iterate> {
    let n = sys.dim();
    let m_normalize = |x: &mut Vec<f64>| -> bool {
        let nrm = sys.m.bilinear(x, x).sqrt();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return false;
        }
        x.iter_mut().for_each(|v| *v /= nrm);
        true
    };
    if !m_normalize(&mut x) {
        return Err(Error::invalid("start vector vanishes"));
    }
    let mut ax = vec![0.0; n];
    let mut mx = vec![0.0; n];
    sys.a.matvec(&x, &mut ax);
    let mut lambda = dot(&x, &ax);
    let mut best_residual = f64::INFINITY;
    let mut since_progress = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        sys.m.matvec(&x, &mut mx);
        let mut w = mx.clone();
        chol.solve_in_place(&mut w);
        if !m_normalize(&mut w) {
            return Err(Error::NoConvergence { iterations: it, residual });
        }
        x = w;
        sys.a.matvec(&x, &mut ax);
        sys.m.matvec(&x, &mut mx);
        let next = dot(&x, &ax);
        let r: f64 = ax
            .iter()
            .zip(&mx)
            .map(|(a, m)| (a - next * m).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = r;
        let scale = next * dot(&mx, &mx).sqrt();
        let converged =
            (next - lambda).abs() <= opts.tol * lambda.abs() && r <= opts.tol.sqrt() * scale;
        lambda = next;
        if converged {
            return Ok(Iterate { lambda, x, residual, iterations: it, stagnated: false });
        }
        if r < 0.99 * best_residual {
            best_residual = r;
            since_progress = 0;
        } else {
            since_progress += 1;
            if since_progress >= STAGNATION_WINDOW {
                return Ok(Iterate { lambda, x, residual, iterations: it, stagnated: true });
            }
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual })
}

fn random_start(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
    (0..n).map(|_| rng.gen_range(0.5..1.5)).collect()
}

/// Smallest eigenpair via zero-shift inverse iteration.
pub fn smallest_eigenpair(sys: &AssembledPair, opts: &SolverOptions) -> Result<EigenPair> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let n = sys.dim();
    if n == 0 {
        return Err(Error::invalid("empty system"));
    }
    let chol = sys.a.cholesky()?;
    let mut run = inverse_iteration(sys, &chol, vec![1.0; n], opts)?;
    // A start vector M-orthogonal to the ground state converges to a higher
    // mode. Stagnation is one symptom; the other is a complement direction
    // whose Rayleigh quotient drops below the converged value after a couple
    // of inverse-iteration steps.
    if run.stagnated || (n > 1 && lower_mode_suspected(sys, &chol, &run)) {
        let retry = inverse_iteration(sys, &chol, random_start(n), opts)?;
        if retry.stagnated {
            return Err(Error::NoConvergence { iterations: retry.iterations, residual: retry.residual });
        }
        if retry.lambda <= run.lambda || run.stagnated {
            run = Iterate { iterations: run.iterations + retry.iterations, ..retry };
        }
    }
    let mut u = run.x;
    let nrm = sys.m.bilinear(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= nrm);
    if dot(&sys.load, &u) < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let lambda = sys.a.bilinear(&u, &u);
    Ok(EigenPair { lambda, u, residual: run.residual, iterations: run.iterations })
}

fn lower_mode_suspected(sys: &AssembledPair, chol: &BandCholesky, run: &Iterate) -> bool {
    let mut w = random_start(sys.dim());
    for _ in 0..2 {
        let c = sys.m.bilinear(&run.x, &w);
        w.iter_mut().zip(&run.x).for_each(|(wi, xi)| *wi -= c * xi);
        let mut mw = sys.m.apply(&w);
        chol.solve_in_place(&mut mw);
        w = mw;
    }
    let c = sys.m.bilinear(&run.x, &w);
    w.iter_mut().zip(&run.x).for_each(|(wi, xi)| *wi -= c * xi);
    let mass = sys.m.bilinear(&w, &w);
    if !(mass > 0.0) {
        return false;
    }
    sys.a.bilinear(&w, &w) / mass < run.lambda * (1.0 - 1e-8)
}

/// Block size of the deflated subspace iteration used for the second mode.
const SECOND_MODE_BLOCK: usize = 3;

/// Smallest Ritz pair of the pencil restricted to the `M`-orthogonal
/// complement of `first`, by inverse subspace iteration with Rayleigh-Ritz.
/// A block is used because the second and third modes are often nearly
/// degenerate (exactly so for the Laplacian on the square), where
/// single-vector iteration stalls.
fn deflated_subspace(
    sys: &AssembledPair,
    chol: &BandCholesky,
    first: &[f64],
    opts: &SolverOptions,
) -> Result<Iterate> {
    let n = sys.dim();
    let p = SECOND_MODE_BLOCK.min(n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
    let mut block: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut lambda = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        for x in block.iter_mut() {
            let mut y = sys.m.apply(x);
            chol.solve_in_place(&mut y);
            let c = sys.m.bilinear(first, &y);
            y.iter_mut().zip(first).for_each(|(yi, fi)| *yi -= c * fi);
            *x = y;
        }
        let ay: Vec<Vec<f64>> = block.iter().map(|y| sys.a.apply(y)).collect();
        let my: Vec<Vec<f64>> = block.iter().map(|y| sys.m.apply(y)).collect();
        let ap = DMatrix::from_fn(p, p, |i, j| dot(&block[i], &ay[j]));
        let mp = DMatrix::from_fn(p, p, |i, j| dot(&block[i], &my[j]));
        let (values, vectors) = ritz(ap, mp).ok_or(Error::NoConvergence { iterations: it, residual })?;
        block = (0..p)
            .map(|k| {
                let mut x = vec![0.0; n];
                for (i, y) in block.iter().enumerate() {
                    let c = vectors[(i, k)];
                    x.iter_mut().zip(y).for_each(|(xi, yi)| *xi += c * yi);
                }
                x
            })
            .collect();
        let next = values[0];
        let x = &block[0];
        let ax = sys.a.apply(x);
        let mx = sys.m.apply(x);
        residual = ax
            .iter()
            .zip(&mx)
            .map(|(a, m)| (a - next * m).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = next * dot(&mx, &mx).sqrt();
        let converged =
            (next - lambda).abs() <= opts.tol * next.abs() && residual <= opts.tol.sqrt() * scale;
        lambda = next;
        if converged {
            return Ok(Iterate { lambda, x: block.swap_remove(0), residual, iterations: it, stagnated: false });
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual })
}

/// Ascending eigenvalues and `Mp`-orthonormal eigenvectors of the small pencil `(Ap, Mp)`.
fn ritz(ap: DMatrix<f64>, mp: DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let l = mp.cholesky()?.l();
    let linv = l.clone().try_inverse()?;
    let c = &linv * ap * linv.transpose();
    let eig = SymmetricEigen::new((&c + c.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..c.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let w = DMatrix::from_fn(c.nrows(), c.nrows(), |i, k| eig.eigenvectors[(i, order[k])]);
    let v = linv.transpose() * w;
    Some((order.iter().map(|&i| eig.eigenvalues[i]).collect(), v))
}

/// Second eigenvalue, from the pencil deflated by `first.u`.
pub fn second_eigenvalue(
    sys: &AssembledPair,
    first: &EigenPair,
    opts: &SolverOptions,
) -> Result<GapReport> {
    let second = second_eigenpair(sys, first, opts)?;
    let gap = second.lambda - first.lambda;
    Ok(GapReport {
        lambda1: first.lambda,
        lambda2: second.lambda,
        gap,
        degenerate: gap < opts.gap_min,
    })
}

/// Second eigenpair as well, for orthogonality diagnostics.
pub fn second_eigenpair(
    sys: &AssembledPair,
    first: &EigenPair,
    opts: &SolverOptions,
) -> Result<EigenPair> {
    let n = sys.dim();
    if n < 2 {
        return Err(Error::invalid("a 1x1 problem has no second eigenvalue"));
    }
    let chol = sys.a.cholesky()?;
    let run = deflated_subspace(sys, &chol, &first.u, opts)?;
    Ok(EigenPair { lambda: run.lambda, u: run.x, residual: run.residual, iterations: run.iterations })
}

/// Checks `(amin/amax) chi_1h <= lambda_h <= (amax/amin)(chi_1h + 1)`, where
/// `chi_1h` is the discrete Laplacian eigenvalue on the same mesh.
pub fn sandwich_check(pair: &EigenPair, exp: &CoefficientExpansion, chi1h: f64) -> bool {
    let lo = exp.amin / exp.amax * chi1h;
    let hi = exp.amax / exp.amin * (chi1h + 1.0);
    lo <= pair.lambda && pair.lambda <= hi
}
