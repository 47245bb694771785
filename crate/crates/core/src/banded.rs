//! Symmetric banded storage and an in-place banded Cholesky factorization.
//!
//! Only the lower band is stored, so a matrix built here is symmetric by
//! construction. Structured P1 meshes with lexicographic numbering have a
//! small fixed bandwidth, which keeps factorization at `O(n w^2)`.

use crate::{Error, Result};

/// Symmetric matrix with `a[i][j] = 0` for `|i - j| > bandwidth`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bandwidth: usize,
    /// Row-major lower band: entry `(i, i - k)` lives at `i * (w + 1) + k`.
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        SymBandMatrix {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = SymBandMatrix::zeros(diag.len(), 0);
        for (i, d) in diag.iter().enumerate() {
            m.add(i, i, *d);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        (k <= self.bandwidth).then(|| hi * (self.bandwidth + 1) + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)`; the pair shares one slot.
    ///
    /// # Panics
    ///
    /// If `(i, j)` lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside bandwidth {}", self.bandwidth));
        self.data[s] += v;
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let w = self.bandwidth;
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let row = &self.data[i * (w + 1)..(i + 1) * (w + 1)];
            y[i] += row[0] * x[i];
            for k in 1..=w.min(i) {
                let v = row[k];
                y[i] += v * x[i - k];
                y[i - k] += v * x[i];
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.apply(y))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Banded Cholesky `A = L L^T`.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let w = self.bandwidth;
        let mut l = self.data.clone();
        let idx = |i: usize, k: usize| i * (w + 1) + k;
        for i in 0..n {
            let jmin = i.saturating_sub(w);
            for j in jmin..=i {
                // L[i][j] = (A[i][j] - sum_{m < j} L[i][m] L[j][m]) / L[j][j]
                let mut sum = l[idx(i, i - j)];
                let mmin = jmin.max(j.saturating_sub(w));
                for m in mmin..j {
                    sum -= l[idx(i, i - m)] * l[idx(j, j - m)];
                }
                if j == i {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::Factorization { pivot: i, value: sum });
                    }
                    l[idx(i, 0)] = sum.sqrt();
                } else {
                    l[idx(i, i - j)] = sum / l[idx(j, 0)];
                }
            }
        }
        Ok(BandCholesky { n, bandwidth: w, l })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bandwidth: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.bandwidth;
        let l = &self.l;
        for i in 0..self.n {
            let mut s = b[i];
            for k in 1..=w.min(i) {
                s -= l[i * (w + 1) + k] * b[i - k];
            }
            b[i] = s / l[i * (w + 1)];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in 1..=w.min(self.n - 1 - i) {
                s -= l[(i + k) * (w + 1) + k] * b[i + k];
            }
            b[i] = s / l[i * (w + 1)];
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
