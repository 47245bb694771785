//! Randomly shifted rank-1 lattice rules.
//!
//! Generating vectors are built component by component (CBC) against the
//! shift-averaged worst-case error of the unanchored weighted Sobolev space
//! with product-and-order-dependent (POD) weights,
//!
//! ```text
//! e^2(z) = sum_{u != {}} gamma_u (1/N) sum_k prod_{j in u} B2({k z_j / N}),
//! B2(x)  = x^2 - x + 1/6,
//! gamma_u = Gamma_{|u|} prod_{j in u} w_j.
//! ```
//!
//! The sum over subsets is evaluated order by order, so the cost is
//! `O(s^2 N)` rather than `O(2^s N)`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coeff::{zeta, CoefficientExpansion};
use crate::{Error, Result};

/// Second Bernoulli polynomial.
#[inline]
pub fn bernoulli2(x: f64) -> f64 {
    x * x - x + 1.0 / 6.0
}

/// POD weights `gamma_u = Gamma_{|u|} prod_{j in u} w_j`, with `Gamma_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PodWeights {
    /// Exponent `xi` in `(1/2, 1]` of the CBC error bound the weights were chosen for.
    pub xi: f64,
    pub upeps: f64,
    /// Per-dimension sequence `gamma_j`.
    pub gamma_j: Vec<f64>,
    order: Vec<f64>,
    product: Vec<f64>,
}

/// `xi = 1/(2 - delta)` for `q <= 2/3`, else `q/(2 - q)`.
pub fn xi_for(q: f64, delta: f64) -> f64 {
    if q <= 2.0 / 3.0 {
        1.0 / (2.0 - delta)
    } else {
        q / (2.0 - q)
    }
}

impl PodWeights {
    /// Weights of the form
    /// `gamma_u = ((|u|+3)!^{2(1+eps)} prod_{j in u} (2 pi^2)^xi / (2 zeta(2 xi)) gamma_j^2)^{1/(1+xi)}`.
    pub fn new(gamma_j: Vec<f64>, xi: f64, upeps: f64) -> Result<Self> {
        if !(xi > 0.5 && xi <= 1.0) {
            return Err(Error::invalid(format!("xi = {xi} not in (1/2, 1]")));
        }
        if !(upeps >= 0.0) {
            return Err(Error::invalid(format!("epsilon = {upeps} must be non-negative")));
        }
        if let Some(g) = gamma_j.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::invalid(format!("per-dimension weight {g} must be positive")));
        }
        let s = gamma_j.len();
        let exponent = 1.0 / (1.0 + xi);
        let mut order = Vec::with_capacity(s + 1);
        order.push(1.0);
        let mut ln_fact: f64 = (1..=3).map(|i| (i as f64).ln()).sum();
        for l in 1..=s {
            ln_fact += ((l + 3) as f64).ln();
            let v = (2.0 * (1.0 + upeps) * exponent * ln_fact).exp();
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "order weight overflows at |u| = {l}; reduce the dimension"
                )));
            }
            order.push(v);
        }
        let factor = (2.0 * PI * PI).powf(xi) / (2.0 * zeta(2.0 * xi));
        let product = gamma_j
            .iter()
            .map(|g| (factor * g * g).powf(exponent))
            .collect();
        Ok(PodWeights { xi, upeps, gamma_j, order, product })
    }

    /// Arbitrary POD weights from order weights `Gamma_0..=Gamma_s` and
    /// per-dimension factors `w_1..=w_s`. `Gamma_0` is forced to 1.
    pub fn from_parts(mut order: Vec<f64>, product: Vec<f64>) -> Result<Self> {
        if order.len() < product.len() + 1 {
            return Err(Error::invalid("need an order weight for every subset size"));
        }
        order.truncate(product.len() + 1);
        order[0] = 1.0;
        Ok(PodWeights { xi: 1.0, upeps: 0.0, gamma_j: product.clone(), order, product })
    }

    /// Product weights `gamma_u = prod_{j in u} w_j`.
    pub fn product_weights(product: Vec<f64>) -> Self {
        let order = vec![1.0; product.len() + 1];
        PodWeights { xi: 1.0, upeps: 0.0, gamma_j: product.clone(), order, product }
    }

    pub fn dim(&self) -> usize {
        self.product.len()
    }

    /// `Gamma_l`.
    pub fn order_weight(&self, l: usize) -> f64 {
        self.order[l]
    }

    /// `w_j` for the zero-based coordinate `j`.
    pub fn product_weight(&self, j: usize) -> f64 {
        self.product[j]
    }

    /// `gamma_u` for a set of zero-based coordinates; the empty set has weight 1.
    pub fn gamma_u(&self, u: &[usize]) -> f64 {
        self.order[u.len()] * u.iter().map(|&j| self.product[j]).product::<f64>()
    }

    /// The weights restricted to the first `s` coordinates.
    pub fn truncated(&self, s: usize) -> PodWeights {
        let s = s.min(self.dim());
        PodWeights {
            xi: self.xi,
            upeps: self.upeps,
            gamma_j: self.gamma_j[..s].to_vec(),
            order: self.order[..=s].to_vec(),
            product: self.product[..s].to_vec(),
        }
    }

    /// Canonical text form, used to key cached generating vectors.
    pub fn canonical(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        format!(
            "xi={:e};eps={:e};order=[{}];product=[{}]",
            self.xi,
            self.upeps,
            join(&self.order),
            join(&self.product)
        )
    }
}

/// Weights from the `beta` and `beta-hat` sequences:
/// `gamma_j = max(beta_hat_j, beta_j^{p/q})`, with `xi` and `eps` chosen from
/// `q` and `delta`.
pub fn compute_pod_weights(
    beta: &[f64],
    beta_hat: &[f64],
    p: f64,
    q: f64,
    delta: f64,
) -> Result<PodWeights> {
    if !(p > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("summability exponents p = {p}, q = {q} not in (0, 1)")));
    }
    if p > q {
        return Err(Error::invalid(format!("p = {p} exceeds q = {q}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta = {delta} not in (0, 1)")));
    }
    if beta.len() != beta_hat.len() {
        return Err(Error::invalid("beta and beta-hat lengths differ"));
    }
    let xi = xi_for(q, delta);
    let upeps = (1.0 - xi) / (4.0 * xi);
    let gamma_j = beta
        .iter()
        .zip(beta_hat)
        .map(|(b, bh)| bh.max(b.powf(p / q)))
        .collect();
    PodWeights::new(gamma_j, xi, upeps)
}

/// Weights for the first `s` terms of a coefficient expansion, with the
/// constants in front of both `beta` sequences set to `c_beta`.
pub fn weights_for_expansion(
    exp: &CoefficientExpansion,
    s: usize,
    delta: f64,
    c_beta: f64,
) -> Result<PodWeights> {
    if !(c_beta > 0.0) {
        return Err(Error::invalid(format!("weight constant {c_beta} must be positive")));
    }
    let beta: Vec<f64> = exp.beta_base(s).into_iter().map(|b| c_beta * b).collect();
    let beta_hat: Vec<f64> = exp.beta_hat_base(s).into_iter().map(|b| c_beta * b).collect();
    compute_pod_weights(&beta, &beta_hat, exp.decay_p, exp.decay_q, delta)
}

/// Per-point, per-order partial sums `P_l(k) = sum_{|u| = l} prod_{j in u} w_j B2(x_{k,j})`.
struct OrderState {
    n: usize,
    /// Points kept: `k = 0..=n/2` (the rest mirror them).
    half: usize,
    /// `sums[l][k]`.
    sums: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

impl OrderState {
    fn new(n: usize, s: usize) -> Self {
        let half = n / 2 + 1;
        let mut sums = vec![vec![0.0; half]; s + 1];
        sums[0].iter_mut().for_each(|v| *v = 1.0);
        let b2 = (0..n).map(|i| bernoulli2(i as f64 / n as f64)).collect();
        OrderState { n, half, sums, b2 }
    }

    /// Multiplicity of stored point `k` in the full set `0..n`.
    #[inline]
    fn multiplicity(&self, k: usize) -> f64 {
        if k == 0 || 2 * k == self.n {
            1.0
        } else {
            2.0
        }
    }

    fn push(&mut self, depth: usize, z: u64, w: f64) {
        let mask = self.n as u64 - 1;
        for l in (1..=depth + 1).rev() {
            let (lo, hi) = self.sums.split_at_mut(l);
            let prev = &lo[l - 1];
            let cur = &mut hi[0];
            let mut idx = 0u64;
            for k in 0..self.half {
                cur[k] += w * self.b2[idx as usize] * prev[k];
                idx = (idx + z) & mask;
            }
        }
    }

    fn error_sq(&self, depth: usize, weights: &PodWeights) -> f64 {
        let mut total = 0.0;
        for k in 0..self.half {
            let mut v = 0.0;
            for l in 1..=depth {
                v += weights.order_weight(l) * self.sums[l][k];
            }
            total += self.multiplicity(k) * v;
        }
        total / self.n as f64
    }
}

fn check_power_of_two(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("point count {n} is not a power of two")));
    }
    Ok(())
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Shift-averaged squared worst-case error of the lattice rule with generating vector `z`.
pub fn worst_case_error_sq(z: &[u64], n: usize, weights: &PodWeights) -> Result<f64> {
    check_power_of_two(n)?;
    if z.len() > weights.dim() {
        return Err(Error::invalid(format!(
            "generating vector has {} components but weights cover {}",
            z.len(),
            weights.dim()
        )));
    }
    if let Some(zj) = z.iter().find(|&&zj| gcd(zj, n as u64) != 1) {
        return Err(Error::invalid(format!("component {zj} is not coprime with N = {n}")));
    }
    if n == 1 {
        // the single point 0: B2(0) = 1/6 in every coordinate
        let mut sums = vec![0.0; z.len() + 1];
        sums[0] = 1.0;
        for j in 0..z.len() {
            for l in (1..=j + 1).rev() {
                sums[l] += weights.product_weight(j) * sums[l - 1] / 6.0;
            }
        }
        return Ok((1..=z.len()).map(|l| weights.order_weight(l) * sums[l]).sum());
    }
    let mut state = OrderState::new(n, z.len());
    for (j, &zj) in z.iter().enumerate() {
        state.push(j, zj % n as u64, weights.product_weight(j));
    }
    Ok(state.error_sq(z.len(), weights))
}

/// Plain CBC construction: `z_1 = 1`, then each `z_j` is the odd residue
/// minimizing the error of the length-`j` prefix, smallest candidate on ties.
pub fn cbc_construct(n: usize, s: usize, weights: &PodWeights) -> Result<Vec<u64>> {
    check_power_of_two(n)?;
    if s > weights.dim() {
        return Err(Error::invalid(format!("weights cover {} < {s} dimensions", weights.dim())));
    }
    if s == 0 {
        return Ok(Vec::new());
    }
    if n <= 2 {
        return Ok(vec![1; s]);
    }
    let mut state = OrderState::new(n, s);
    let mut z = Vec::with_capacity(s);
    z.push(1u64);
    state.push(0, 1, weights.product_weight(0));
    // B2(1 - x) = B2(x), so candidates c and N - c score identically
    let candidates: Vec<u64> = (1..=n as u64 / 2).step_by(2).collect();
    for j in 1..s {
        let coupling: Vec<f64> = (0..state.half)
            .map(|k| {
                let b: f64 = (0..=j)
                    .map(|l| weights.order_weight(l + 1) * state.sums[l][k])
                    .sum();
                state.multiplicity(k) * b
            })
            .collect();
        let scores: Vec<f64> = candidates
            .par_iter()
            .map(|&c| {
                let mask = n as u64 - 1;
                let mut idx = 0u64;
                let mut acc = 0.0;
                for ck in &coupling {
                    acc += ck * state.b2[idx as usize];
                    idx = (idx + c) & mask;
                }
                acc
            })
            .collect();
        let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale: f64 = coupling.iter().map(|c| c.abs()).sum::<f64>() / 6.0;
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        let pick = candidates
            .iter()
            .zip(&scores)
            .find(|(_, sc)| **sc <= best + tol)
            .map(|(c, _)| *c)
            .expect("non-empty candidate set");
        z.push(pick);
        state.push(j, pick, weights.product_weight(j));
    }
    Ok(z)
}

/// Uniform shifts in `[0,1)^s`; shift `r` of `stream` depends only on `(seed, stream, r)`
/// and its first coordinates do not depend on `s`.
pub fn random_shifts(seed: u64, stream: u64, count: usize, s: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count)
        .map(|r| {
            rng.set_word_pos((r as u128) << 21);
            (0..s).map(|_| rng.gen::<f64>()).collect()
        })
        .collect()
}

/// A rank-1 lattice rule with its random shifts.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeRule {
    z: Vec<u64>,
    n: usize,
    shifts: Vec<Vec<f64>>,
}

impl LatticeRule {
    pub fn new(z: Vec<u64>, n: usize, shifts: Vec<Vec<f64>>) -> Result<Self> {
        check_power_of_two(n)?;
        if let Some(zj) = z.iter().find(|&&zj| gcd(zj, n as u64) != 1) {
            return Err(Error::invalid(format!("component {zj} is not coprime with N = {n}")));
        }
        for sh in &shifts {
            if sh.len() != z.len() {
                return Err(Error::invalid("shift dimension differs from generating vector"));
            }
            if sh.iter().any(|v| !(0.0..1.0).contains(v)) {
                return Err(Error::invalid("shift component outside [0, 1)"));
            }
        }
        Ok(LatticeRule { z, n, shifts })
    }

    pub fn z(&self) -> &[u64] {
        &self.z
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn num_shifts(&self) -> usize {
        self.shifts.len()
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn shift(&self, r: usize) -> &[f64] {
        &self.shifts[r]
    }

    /// Point `k` under shift `r`, mapped to `[-1/2, 1/2)^s`.
    pub fn point_into(&self, k: usize, r: usize, out: &mut [f64]) {
        let n = self.n as u64;
        for ((o, &zj), d) in out.iter_mut().zip(&self.z).zip(&self.shifts[r]) {
            let t = ((k as u64 * zj) % n) as f64 / n as f64 + d;
            *o = t - t.floor() - 0.5;
        }
    }

    /// All `N` points under shift `r`.
    pub fn generate_points(&self, r: usize) -> Result<Vec<Vec<f64>>> {
        if r >= self.shifts.len() {
            return Err(Error::invalid(format!("shift index {r} out of range")));
        }
        Ok((0..self.n)
            .map(|k| {
                let mut p = vec![0.0; self.dim()];
                self.point_into(k, r, &mut p);
                p
            })
            .collect())
    }
}

/// Shift-averaged QMC estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedEstimate {
    pub mean: f64,
    /// `1/(R(R-1)) sum_r (mean - Q_r)^2`; `None` for a single shift.
    pub sample_variance: Option<f64>,
    pub per_shift: Vec<f64>,
    pub n_evals: usize,
}

impl ShiftedEstimate {
    pub fn from_per_shift(per_shift: Vec<f64>, n_evals: usize) -> Self {
        let r = per_shift.len();
        let mean = per_shift.iter().sum::<f64>() / r as f64;
        let sample_variance = (r >= 2).then(|| {
            per_shift.iter().map(|q| (mean - q).powi(2)).sum::<f64>() / (r * (r - 1)) as f64
        });
        ShiftedEstimate { mean, sample_variance, per_shift, n_evals }
    }
}

/// Applies the shifted rule to `f`. Evaluations run in parallel; the
/// reduction order is fixed, so the result does not depend on thread count.
pub fn shifted_qmc<F>(f: F, rule: &LatticeRule) -> Result<ShiftedEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = rule.n;
    let rcount = rule.num_shifts();
    if rcount == 0 {
        return Err(Error::invalid("lattice rule has no shifts"));
    }
    let values: Vec<Result<f64>> = (0..n * rcount)
        .into_par_iter()
        .map_init(
            || vec![0.0; rule.dim()],
            |buf, idx| {
                let (r, k) = (idx / n, idx % n);
                rule.point_into(k, r, buf);
                f(buf).map_err(|e| Error::Integrand { k, r, source: Box::new(e) })
            },
        )
        .collect();
    let mut per_shift = Vec::with_capacity(rcount);
    for chunk in values.chunks(n) {
        let mut sum = 0.0;
        for v in chunk {
            sum += match v {
                Ok(v) => *v,
                Err(_) => {
                    let first = values.into_iter().find_map(|v| v.err()).expect("error present");
                    return Err(first);
                }
            };
        }
        per_shift.push(sum / n as f64);
    }
    Ok(ShiftedEstimate::from_per_shift(per_shift, n * rcount))
}

/// Contents of a generating-vector file.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFile {
    pub n: usize,
    pub z: Vec<u64>,
    pub digest: Option<String>,
}

/// Writes `# lattice N=<n> s=<s> [digest=<d>]` followed by one component per line.
pub fn write_generating_vector<W: Write>(
    mut w: W,
    n: usize,
    z: &[u64],
    digest: Option<&str>,
) -> std::io::Result<()> {
    write!(w, "# lattice N={n} s={}", z.len())?;
    if let Some(d) = digest {
        write!(w, " digest={d}")?;
    }
    writeln!(w)?;
    for zj in z {
        writeln!(w, "{zj}")?;
    }
    Ok(())
}

pub fn read_generating_vector<R: BufRead>(r: R) -> Result<VectorFile> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::VectorFormat("empty file".into()))??;
    let rest = header
        .strip_prefix("# lattice")
        .ok_or_else(|| Error::VectorFormat(format!("bad header '{header}'")))?;
    let (mut n, mut s, mut digest) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::VectorFormat(format!("bad header field '{field}'")))?;
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::VectorFormat(format!("bad integer '{v}'")))
        };
        match key {
            "N" => n = Some(parse(value)?),
            "s" => s = Some(parse(value)?),
            "digest" => digest = Some(value.to_string()),
            other => return Err(Error::VectorFormat(format!("unknown header key '{other}'"))),
        }
    }
    let n = n.ok_or_else(|| Error::VectorFormat("header lacks N".into()))?;
    let s = s.ok_or_else(|| Error::VectorFormat("header lacks s".into()))?;
    let mut z = Vec::with_capacity(s);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        z.push(
            t.parse::<u64>()
                .map_err(|_| Error::VectorFormat(format!("bad component '{t}'")))?,
        );
    }
    if z.len() != s {
        return Err(Error::VectorFormat(format!("header says s={s}, found {} components", z.len())));
    }
    if n == 0 || !n.is_power_of_two() || z.iter().any(|zj| gcd(*zj, n as u64) != 1) {
        return Err(Error::VectorFormat("components not coprime with N".into()));
    }
    Ok(VectorFile { n, z, digest })
}
