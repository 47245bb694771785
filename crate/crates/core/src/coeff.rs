//! Parametric coefficient series and their dimension truncations.
//!
//! The diffusion and reaction coefficients are affine in the parameters,
//!
//! ```text
//! a(x, y) = a_0(x) + sum_j y_j a_j(x),   b(x, y) = b_0(x) + sum_j y_j b_j(x),
//! ```
//!
//! with each `y_j` uniform on `[-1/2, 1/2]`, and the mass weight `c(x)` does
//! not depend on `y`. Truncating to `s` dimensions sets `y_j = 0` for `j > s`.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Which coefficient of the operator to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coefficient {
    A,
    B,
    C,
}

/// Built-in coefficient families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    /// `a_j(x) = j^{-theta} sin(j pi x_1)`.
    SineDecay,
    /// `a_j(x) = j^{-theta}` on the dyadic patch with index `j` along `x_1`,
    /// zero elsewhere. Patch `j = 2^k + m` covers `[m 2^{-k}, (m+1) 2^{-k})`.
    IndicatorPatches,
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine-decay" => Ok(FamilyKind::SineDecay),
            "indicator-patches" => Ok(FamilyKind::IndicatorPatches),
            other => Err(Error::invalid(format!("unknown coefficient family '{other}'"))),
        }
    }
}

/// A point in the truncated parameter box `[-1/2, 1/2]^s`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPoint(Vec<f64>);

impl ParamPoint {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if let Some((j, v)) = y
            .iter()
            .enumerate()
            .find(|(_, v)| !(-0.5..=0.5).contains(*v))
        {
            return Err(Error::invalid(format!(
                "parameter y_{} = {v} outside [-1/2, 1/2]",
                j + 1
            )));
        }
        Ok(ParamPoint(y))
    }

    pub fn zeros(s: usize) -> Self {
        ParamPoint(vec![0.0; s])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The first `s` coordinates.
    pub fn truncate(&self, s: usize) -> ParamPoint {
        ParamPoint(self.0[..s.min(self.0.len())].to_vec())
    }
}

/// The coefficient series `a`, `b`, `c` together with the decay metadata that
/// drives the lattice weights.
#[derive(Clone, Debug)]
pub struct CoefficientExpansion {
    pub kind: FamilyKind,
    /// Spatial dimension of `D = (0,1)^dim`.
    pub dim: usize,
    pub theta: f64,
    /// Number of terms carried; `y` may have at most this many coordinates.
    pub s_max: usize,
    /// Whether the reaction term `b` is switched on (`b_0 = a_0`, `b_j = a_j`).
    pub with_reaction: bool,
    pub decay_p: f64,
    pub decay_q: f64,
    pub amin: f64,
    pub amax: f64,
}

impl CoefficientExpansion {
    /// Instantiates one of the built-in families with `a_0 = c = 1`.
    ///
    /// `amin` and `amax` bound the whole infinite family, `1 -/+ zeta(theta)/2`,
    /// so they hold for every truncation. With `s_max = 0` the problem has
    /// constant coefficients and `amin = amax = 1`.
    pub fn builtin(
        kind: FamilyKind,
        dim: usize,
        theta: f64,
        s_max: usize,
        with_reaction: bool,
    ) -> Result<Self> {
        if !(theta > 1.0) {
            return Err(Error::invalid(format!(
                "decay exponent theta = {theta} must exceed 1"
            )));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::invalid(format!("spatial dimension {dim} not in {{1, 2}}")));
        }
        let (amin, amax) = if s_max == 0 {
            (1.0, 1.0)
        } else {
            let tail = 0.5 * zeta(theta);
            (1.0 - tail, 1.0 + tail)
        };
        if amin <= 0.0 {
            return Err(Error::invalid(format!(
                "theta = {theta} gives a_min = {amin} <= 0"
            )));
        }
        let decay_p = 1.0 / theta + 0.25 * (1.0 - 1.0 / theta);
        let decay_q = match kind {
            // sum_j |grad a_j|^q = pi^q sum_j j^{q(1-theta)} needs q > 1/(theta-1)
            FamilyKind::SineDecay if theta > 2.0 => {
                let qmin = 1.0 / (theta - 1.0);
                (qmin + 0.25 * (1.0 - qmin)).max(decay_p)
            }
            FamilyKind::SineDecay => 1.0 - 0.25 * (1.0 - decay_p),
            FamilyKind::IndicatorPatches => decay_p,
        };
        Ok(CoefficientExpansion {
            kind,
            dim,
            theta,
            s_max,
            with_reaction,
            decay_p,
            decay_q,
            amin,
            amax,
        })
    }

    /// `a_j(x)` for `j >= 1`.
    pub fn term(&self, j: usize, x: &[f64]) -> f64 {
        let scale = (j as f64).powf(-self.theta);
        match self.kind {
            FamilyKind::SineDecay => scale * (j as f64 * PI * x[0]).sin(),
            FamilyKind::IndicatorPatches => {
                let level = usize::BITS - 1 - j.leading_zeros();
                let width = 1usize << level;
                let m = j - width;
                let lo = m as f64 / width as f64;
                let hi = (m + 1) as f64 / width as f64;
                if x[0] >= lo && x[0] < hi {
                    scale
                } else {
                    0.0
                }
            }
        }
    }

    /// `||a_j||_inf` (equal to `||b_j||_inf` when the reaction term is on).
    pub fn term_sup(&self, j: usize) -> f64 {
        (j as f64).powf(-self.theta)
    }

    /// `||grad a_j||_inf`, infinite for the discontinuous indicator family.
    pub fn term_grad_sup(&self, j: usize) -> f64 {
        match self.kind {
            FamilyKind::SineDecay => PI * (j as f64).powf(1.0 - self.theta),
            FamilyKind::IndicatorPatches => f64::INFINITY,
        }
    }

    /// `max(||a_j||, ||b_j||)` for `j = 1..=s`, the input to the `beta` sequence.
    pub fn beta_base(&self, s: usize) -> Vec<f64> {
        (1..=s).map(|j| self.term_sup(j)).collect()
    }

    /// `max(||a_j||, ||b_j||, ||grad a_j||)` for `j = 1..=s`. For the indicator
    /// family, where the gradient is unbounded, this falls back to the sup norm.
    pub fn beta_hat_base(&self, s: usize) -> Vec<f64> {
        (1..=s)
            .map(|j| {
                let g = self.term_grad_sup(j);
                if g.is_finite() {
                    g.max(self.term_sup(j))
                } else {
                    self.term_sup(j)
                }
            })
            .collect()
    }

    /// Truncated coefficient value `a^s(x, y)` (resp. `b^s`, `c`) with `s = y.dim()`.
    pub fn eval_truncated(&self, which: Coefficient, x: &[f64], y: &ParamPoint) -> Result<f64> {
        if y.dim() > self.s_max {
            return Err(Error::invalid(format!(
                "parameter dimension {} exceeds s_max = {}",
                y.dim(),
                self.s_max
            )));
        }
        if x.len() < self.dim {
            return Err(Error::invalid("spatial point has too few coordinates"));
        }
        Ok(self.eval_unchecked(which, x, y.as_slice()))
    }

    pub(crate) fn eval_unchecked(&self, which: Coefficient, x: &[f64], y: &[f64]) -> f64 {
        match which {
            Coefficient::C => 1.0,
            Coefficient::B if !self.with_reaction => 0.0,
            Coefficient::A | Coefficient::B => {
                let mut v = 1.0;
                for (j, yj) in y.iter().enumerate() {
                    if *yj != 0.0 {
                        v += yj * self.term(j + 1, x);
                    }
                }
                v
            }
        }
    }
}

/// Riemann zeta for real `t > 1`: direct sum plus an Euler–Maclaurin tail.
pub fn zeta(t: f64) -> f64 {
    const N: usize = 1000;
    let n = N as f64;
    let head: f64 = (1..N).map(|j| (j as f64).powf(-t)).sum();
    let tail = n.powf(1.0 - t) / (t - 1.0) + 0.5 * n.powf(-t) + t * n.powf(-t - 1.0) / 12.0
        - t * (t + 1.0) * (t + 2.0) * n.powf(-t - 3.0) / 720.0;
    head + tail
}
