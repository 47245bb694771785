//! Multilevel QMC estimator over a hierarchy of (mesh, truncation) levels.
//!
//! Level `l` estimates `E[Q_l - Q_{l-1}]` with its own shifted lattice rule,
//! where `Q_l` is the eigenvalue (or a linear functional of the eigenfunction)
//! on mesh `h_l` with the parameter truncated to `s_l` coordinates, and
//! `Q_{-1} = 0`. The coarse term is evaluated at the prefix of the same point.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::banded::dot;
use crate::coeff::{CoefficientExpansion, ParamPoint};
use crate::eigsolve::{smallest_eigenpair, SolverOptions};
use crate::fem::{assemble, MeshLevel};
use crate::lattice::{cbc_construct, random_shifts, shifted_qmc, LatticeRule, PodWeights};
use crate::{Error, Result};

/// What is being estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    /// The smallest eigenvalue.
    Eigenvalue,
    /// `G(u) = int_D u dx` of the normalized, sign-fixed eigenfunction.
    Functional,
}

impl Quantity {
    /// Default bias-decay exponent for the Richardson bias test: 2 for the
    /// eigenvalue, `1 + t = 2` for the functional with `t = 1`.
    pub fn default_alpha(self) -> f64 {
        2.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Eigenvalue => "eigenvalue",
            Quantity::Functional => "functional",
        }
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigenvalue" => Ok(Quantity::Eigenvalue),
            "functional" => Ok(Quantity::Functional),
            other => Err(Error::invalid(format!("unknown quantity '{other}'"))),
        }
    }
}

/// Coefficients, solver settings and the target quantity.
#[derive(Clone, Debug)]
pub struct Problem {
    pub expansion: CoefficientExpansion,
    pub solver: SolverOptions,
    pub quantity: Quantity,
}

impl Problem {
    /// `Q_h(y)` on `mesh`, plus the solver iteration count.
    pub fn evaluate(&self, mesh: &MeshLevel, y: &[f64]) -> Result<(f64, usize)> {
        let y = ParamPoint::new(y.to_vec())?;
        let sys = assemble(mesh, &self.expansion, &y)?;
        let pair = smallest_eigenpair(&sys, &self.solver)?;
        let value = match self.quantity {
            Quantity::Eigenvalue => pair.lambda,
            Quantity::Functional => dot(mesh.phi_integrals(), &pair.u),
        };
        Ok((value, pair.iterations))
    }
}

/// Truncation dimension per level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    /// `s_l = s` on every level.
    Fixed(usize),
    /// `s_l = min(s_max, s0 2^l)`.
    Geometric { s0: usize, s_max: usize },
}

impl Truncation {
    pub fn s(&self, ell: usize) -> usize {
        match *self {
            Truncation::Fixed(s) => s,
            Truncation::Geometric { s0, s_max } => {
                let scaled = s0.checked_shl(ell as u32).filter(|v| *v >> ell == s0);
                scaled.map_or(s_max, |v| v.min(s_max))
            }
        }
    }

    pub fn max_dim(&self) -> usize {
        match *self {
            Truncation::Fixed(s) => s,
            Truncation::Geometric { s_max, .. } => s_max,
        }
    }
}

/// Cost of one level-difference sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CostModel {
    /// Wall-clock seconds per sample, measured during the level run.
    Measured,
    /// `c_l = s_l h_l^{-d} + h_l^{-gamma}` per solve, summed over the fine and coarse solve.
    Model { gamma: f64 },
}

/// Meshes `h_l = h_0 2^{-l}` and truncation dimensions, created on demand.
#[derive(Debug)]
pub struct LevelHierarchy {
    pub dim: usize,
    /// Intervals per side on level 0.
    pub n0: usize,
    pub truncation: Truncation,
    meshes: Mutex<HashMap<usize, Arc<MeshLevel>>>,
}

impl Clone for LevelHierarchy {
    fn clone(&self) -> Self {
        LevelHierarchy::new(self.dim, self.n0, self.truncation)
    }
}

impl LevelHierarchy {
    pub fn new(dim: usize, n0: usize, truncation: Truncation) -> Self {
        LevelHierarchy { dim, n0, truncation, meshes: Mutex::new(HashMap::new()) }
    }

    /// Hierarchy whose level 0 is the mesh with meshwidth closest to `h0` from below.
    pub fn from_h0(dim: usize, h0: f64, truncation: Truncation) -> Result<Self> {
        let meshes = crate::fem::build_hierarchy(dim, h0, 0)?;
        Ok(LevelHierarchy::new(dim, meshes[0].n, truncation))
    }

    pub fn mesh(&self, ell: usize) -> Result<Arc<MeshLevel>> {
        let mut cache = self.meshes.lock().expect("mesh cache poisoned");
        if let Some(m) = cache.get(&ell) {
            return Ok(m.clone());
        }
        let m = Arc::new(MeshLevel::uniform(self.dim, self.n0 << ell)?);
        cache.insert(ell, m.clone());
        Ok(m)
    }

    pub fn h(&self, ell: usize) -> f64 {
        let side = 1.0 / (self.n0 << ell) as f64;
        if self.dim == 2 {
            std::f64::consts::SQRT_2 * side
        } else {
            side
        }
    }

    pub fn s(&self, ell: usize) -> usize {
        self.truncation.s(ell)
    }

    /// A one-level hierarchy consisting of level `ell` of this one.
    pub fn single(&self, ell: usize) -> LevelHierarchy {
        LevelHierarchy::new(self.dim, self.n0 << ell, Truncation::Fixed(self.s(ell)))
    }

    /// Model cost of one solve on level `ell`.
    pub fn solve_cost(&self, ell: usize, gamma: f64) -> f64 {
        let h = self.h(ell);
        self.s(ell) as f64 * h.powi(-(self.dim as i32)) + h.powf(-gamma)
    }

    /// Model cost of one level-difference sample.
    pub fn sample_cost(&self, ell: usize, gamma: f64) -> f64 {
        let fine = self.solve_cost(ell, gamma);
        if ell == 0 {
            fine
        } else {
            fine + self.solve_cost(ell - 1, gamma)
        }
    }
}

/// Supplies generating vectors for `(level, N, s)`.
pub trait VectorSource: Sync {
    fn generating_vector(&self, ell: usize, n: usize, s: usize) -> Result<Vec<u64>>;
}

/// How per-level generating vectors relate to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorMode {
    /// One CBC construction per `(N, s_l)`.
    PerLevel,
    /// One CBC construction per `N` at the maximal dimension, truncated per level.
    Master,
}

/// CBC constructions kept in memory.
#[derive(Debug)]
pub struct CbcSource {
    weights: PodWeights,
    mode: VectorMode,
    cache: Mutex<HashMap<(usize, usize), Vec<u64>>>,
    builds: AtomicUsize,
}

impl CbcSource {
    /// `weights` must cover the largest dimension that will be requested.
    pub fn new(weights: PodWeights, mode: VectorMode) -> Self {
        CbcSource { weights, mode, cache: Mutex::new(HashMap::new()), builds: AtomicUsize::new(0) }
    }

    /// Number of CBC constructions performed so far.
    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::Relaxed)
    }
}

impl VectorSource for CbcSource {
    fn generating_vector(&self, _ell: usize, n: usize, s: usize) -> Result<Vec<u64>> {
        let build_dim = match self.mode {
            VectorMode::PerLevel => s,
            VectorMode::Master => self.weights.dim(),
        };
        if s > build_dim {
            return Err(Error::invalid(format!("weights cover {build_dim} < {s} dimensions")));
        }
        let key = (n, build_dim);
        if let Some(z) = self.cache.lock().expect("cbc cache poisoned").get(&key) {
            return Ok(z[..s].to_vec());
        }
        let z = cbc_construct(n, build_dim, &self.weights.truncated(build_dim))?;
        self.builds.fetch_add(1, Ordering::Relaxed);
        self.cache.lock().expect("cbc cache poisoned").insert(key, z.clone());
        Ok(z[..s].to_vec())
    }
}

/// One level of the estimator: mesh, truncation and shifted lattice rule.
#[derive(Clone, Debug)]
pub struct LevelSpec {
    pub ell: usize,
    pub mesh: Arc<MeshLevel>,
    pub s: usize,
    pub rule: LatticeRule,
}

impl LevelSpec {
    /// Level `ell` with `n` points and `r` shifts drawn from stream `ell` of `seed`.
    pub fn build(
        hierarchy: &LevelHierarchy,
        ell: usize,
        n: usize,
        r: usize,
        seed: u64,
        source: &dyn VectorSource,
    ) -> Result<Self> {
        let s = hierarchy.s(ell);
        let z = source.generating_vector(ell, n, s)?;
        let shifts = random_shifts(seed, ell as u64, r, s);
        Ok(LevelSpec { ell, mesh: hierarchy.mesh(ell)?, s, rule: LatticeRule::new(z, n, shifts)? })
    }

    pub fn h(&self) -> f64 {
        self.mesh.h
    }

    pub fn n(&self) -> usize {
        self.rule.num_points()
    }
}

/// Checks the hierarchy invariants: `h` strictly decreasing, `s` nondecreasing.
pub fn check_levels(levels: &[LevelSpec]) -> Result<()> {
    for w in levels.windows(2) {
        if !(w[1].h() < w[0].h()) || w[1].s < w[0].s {
            return Err(Error::invalid(format!(
                "levels {} and {} violate h decreasing / s nondecreasing",
                w[0].ell, w[1].ell
            )));
        }
    }
    Ok(())
}

/// `Q_l(y) - Q_{l-1}(y_{1:s_{l-1}})`, with `Q_{-1} = 0`. Returns the value
/// and the total solver iterations.
pub fn level_difference(
    problem: &Problem,
    levels: &[LevelSpec],
    ell: usize,
    y: &[f64],
) -> Result<(f64, usize)> {
    let spec = levels
        .get(ell)
        .ok_or_else(|| Error::invalid(format!("level {ell} not in hierarchy")))?;
    if y.len() != spec.s {
        return Err(Error::invalid(format!(
            "level {ell} expects {} parameters, got {}",
            spec.s,
            y.len()
        )));
    }
    let tag = |e: Error| Error::Level { ell, y: y.to_vec(), source: Box::new(e) };
    let (fine, it_f) = problem.evaluate(&spec.mesh, y).map_err(tag)?;
    if ell == 0 {
        return Ok((fine, it_f));
    }
    let coarse_spec = &levels[ell - 1];
    let (coarse, it_c) = problem
        .evaluate(&coarse_spec.mesh, &y[..coarse_spec.s])
        .map_err(tag)?;
    Ok((fine - coarse, it_f + it_c))
}

/// Per-level output of a shifted-QMC run.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelStats {
    pub ell: usize,
    pub h: f64,
    pub s: usize,
    pub n: usize,
    pub r: usize,
    pub mean: f64,
    pub variance: f64,
    pub per_shift: Vec<f64>,
    /// Cost of one sample in the units the allocator uses.
    pub cost_per_sample: f64,
    /// Wall-clock seconds spent on this level.
    pub wall_seconds: f64,
    pub solver_iters_mean: f64,
}

impl LevelStats {
    /// `N R cost_per_sample`.
    pub fn cost(&self) -> f64 {
        (self.n * self.r) as f64 * self.cost_per_sample
    }
}

/// Multilevel estimate with its error decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct MLEstimate {
    pub quantity: Quantity,
    pub levels: Vec<LevelStats>,
    pub total: f64,
    pub per_level_mean: Vec<f64>,
    pub per_level_variance: Vec<f64>,
    pub bias_estimate: f64,
    pub statistical_error: f64,
    pub cost_total: f64,
}

impl MLEstimate {
    pub fn from_levels(quantity: Quantity, levels: Vec<LevelStats>, alpha_hat: f64) -> Self {
        let per_level_mean: Vec<f64> = levels.iter().map(|l| l.mean).collect();
        let per_level_variance: Vec<f64> = levels.iter().map(|l| l.variance).collect();
        let total = per_level_mean.iter().sum();
        let var_sum: f64 = per_level_variance.iter().sum();
        let bias_estimate = per_level_mean
            .last()
            .map_or(f64::INFINITY, |m| richardson_bias(*m, alpha_hat));
        let cost_total = levels.iter().map(LevelStats::cost).sum();
        MLEstimate {
            quantity,
            levels,
            total,
            per_level_mean,
            per_level_variance,
            bias_estimate,
            statistical_error: var_sum.sqrt(),
            cost_total,
        }
    }

    pub fn variance_sum(&self) -> f64 {
        self.per_level_variance.iter().sum()
    }

    pub fn allocation(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.n).collect()
    }
}

/// `|E[Y_L]| / (2^alpha - 1)`, the Richardson estimate of the remaining bias.
pub fn richardson_bias(last_mean: f64, alpha_hat: f64) -> f64 {
    last_mean.abs() / (2f64.powf(alpha_hat) - 1.0)
}

/// Runs shifted QMC on level `ell` of `levels`. With a single shift the
/// variance is NaN.
pub fn estimate_level(
    problem: &Problem,
    levels: &[LevelSpec],
    ell: usize,
    cost_per_sample: Option<f64>,
) -> Result<LevelStats> {
    let spec = &levels[ell];
    let r = spec.rule.num_shifts();
    let iters = AtomicUsize::new(0);
    let start = Instant::now();
    let est = shifted_qmc(
        |y| {
            let (v, it) = level_difference(problem, levels, ell, y)?;
            iters.fetch_add(it, Ordering::Relaxed);
            Ok(v)
        },
        &spec.rule,
    )?;
    let wall = start.elapsed().as_secs_f64();
    let samples = est.n_evals;
    Ok(LevelStats {
        ell,
        h: spec.h(),
        s: spec.s,
        n: spec.n(),
        r,
        mean: est.mean,
        variance: est.sample_variance.unwrap_or(f64::NAN),
        per_shift: est.per_shift,
        cost_per_sample: cost_per_sample.unwrap_or(wall / samples as f64),
        wall_seconds: wall,
        solver_iters_mean: iters.into_inner() as f64 / samples as f64,
    })
}

/// Options shared by the fixed-allocation and adaptive estimators.
#[derive(Clone, Copy, Debug)]
pub struct MlOptions {
    /// Random shifts per level.
    pub r: usize,
    pub seed: u64,
    pub alpha_hat: f64,
    pub cost: CostModel,
}

/// Multilevel estimate with a fixed number of points per level. Level `l`
/// uses shift stream `l`, so each level is reproducible in isolation.
pub fn ml_estimate(
    problem: &Problem,
    hierarchy: &LevelHierarchy,
    points: &[usize],
    source: &dyn VectorSource,
    opts: &MlOptions,
) -> Result<MLEstimate> {
    let levels: Vec<LevelSpec> = points
        .iter()
        .enumerate()
        .map(|(ell, &n)| LevelSpec::build(hierarchy, ell, n, opts.r, opts.seed, source))
        .collect::<Result<_>>()?;
    check_levels(&levels)?;
    let mut stats = Vec::with_capacity(levels.len());
    for ell in 0..levels.len() {
        let model = model_cost(hierarchy, ell, opts.cost);
        match estimate_level(problem, &levels, ell, model) {
            Ok(s) => stats.push(s),
            Err(e) => {
                let partial = MLEstimate::from_levels(problem.quantity, stats, opts.alpha_hat);
                return Err(Error::LevelFailed { ell, partial: Box::new(partial), source: Box::new(e) });
            }
        }
    }
    Ok(MLEstimate::from_levels(problem.quantity, stats, opts.alpha_hat))
}

fn model_cost(hierarchy: &LevelHierarchy, ell: usize, cost: CostModel) -> Option<f64> {
    match cost {
        CostModel::Measured => None,
        CostModel::Model { gamma } => Some(hierarchy.sample_cost(ell, gamma)),
    }
}

/// Produces level statistics for a requested `(level, N)`.
pub trait LevelEstimator {
    fn estimate(&mut self, ell: usize, n: usize) -> Result<LevelStats>;
}

/// The PDE-backed level estimator.
pub struct PdeLevelEstimator<'a> {
    pub problem: &'a Problem,
    pub hierarchy: &'a LevelHierarchy,
    pub source: &'a dyn VectorSource,
    pub opts: MlOptions,
    levels: Vec<LevelSpec>,
}

impl<'a> PdeLevelEstimator<'a> {
    pub fn new(
        problem: &'a Problem,
        hierarchy: &'a LevelHierarchy,
        source: &'a dyn VectorSource,
        opts: MlOptions,
    ) -> Self {
        PdeLevelEstimator { problem, hierarchy, source, opts, levels: Vec::new() }
    }
}

impl LevelEstimator for PdeLevelEstimator<'_> {
    fn estimate(&mut self, ell: usize, n: usize) -> Result<LevelStats> {
        let o = self.opts;
        while self.levels.len() <= ell {
            let l = self.levels.len();
            self.levels.push(LevelSpec::build(self.hierarchy, l, n, o.r, o.seed, self.source)?);
        }
        if self.levels[ell].n() != n {
            self.levels[ell] = LevelSpec::build(self.hierarchy, ell, n, o.r, o.seed, self.source)?;
        }
        estimate_level(
            self.problem,
            &self.levels,
            ell,
            model_cost(self.hierarchy, ell, o.cost),
        )
    }
}

/// Knobs of the adaptive allocator.
#[derive(Clone, Copy, Debug)]
pub struct AdaptOptions {
    /// Target root-mean-square error.
    pub eps: f64,
    pub alpha_hat: f64,
    pub n_min: usize,
    /// Levels at start (at least 1).
    pub initial_levels: usize,
    pub max_levels: usize,
    pub max_total_cost: f64,
}

/// One row of the allocation trace: level `ell` now has `n_after` points.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptStep {
    pub step: usize,
    pub ell: usize,
    pub n_after: usize,
    pub var_sum: f64,
    pub bias_estimate: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub estimate: MLEstimate,
    pub trace: Vec<AdaptStep>,
}

/// Adaptive allocation: while `sum V_l > eps^2/2`, double `N` on the level with
/// the largest `V_l / (N_l C_l)`; then, if the Richardson bias estimate
/// exceeds `eps/sqrt(2)`, append a level and repeat.
pub fn adapt<E: LevelEstimator>(
    estimator: &mut E,
    quantity: Quantity,
    opts: &AdaptOptions,
) -> Result<AdaptOutcome> {
    if !(opts.eps > 0.0) {
        return Err(Error::invalid("target tolerance must be positive"));
    }
    if opts.n_min == 0 || !opts.n_min.is_power_of_two() {
        return Err(Error::invalid(format!("N_min = {} is not a power of two", opts.n_min)));
    }
    if opts.initial_levels == 0 || opts.initial_levels > opts.max_levels {
        return Err(Error::invalid("initial level count must be in 1..=max_levels"));
    }
    let var_target = opts.eps * opts.eps / 2.0;
    let bias_target = opts.eps / std::f64::consts::SQRT_2;
    let mut stats: Vec<LevelStats> = Vec::new();
    let mut trace = Vec::new();
    let snapshot = |stats: &[LevelStats]| MLEstimate::from_levels(quantity, stats.to_vec(), opts.alpha_hat);
    let record = |trace: &mut Vec<AdaptStep>, stats: &[LevelStats], ell: usize| {
        let est = snapshot(stats);
        trace.push(AdaptStep {
            step: trace.len(),
            ell,
            n_after: stats[ell].n,
            var_sum: est.variance_sum(),
            bias_estimate: est.bias_estimate,
        });
    };
    for ell in 0..opts.initial_levels {
        stats.push(estimator.estimate(ell, opts.n_min)?);
        if stats[ell].variance.is_nan() {
            return Err(Error::invalid("adaptive allocation needs at least two random shifts"));
        }
        record(&mut trace, &stats, ell);
    }
    loop {
        loop {
            let est = snapshot(&stats);
            if est.cost_total > opts.max_total_cost {
                return Err(Error::BudgetExceeded {
                    reason: format!(
                        "cost {:e} exceeds cap {:e} with {} levels",
                        est.cost_total,
                        opts.max_total_cost,
                        stats.len()
                    ),
                    partial: Some(Box::new(est)),
                });
            }
            if est.variance_sum() <= var_target {
                break;
            }
            let target = stats
                .iter()
                .enumerate()
                .map(|(l, st)| (l, st.variance / (st.n as f64 * st.cost_per_sample)))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            let n = stats[target].n * 2;
            stats[target] = estimator.estimate(target, n)?;
            record(&mut trace, &stats, target);
        }
        let est = snapshot(&stats);
        if est.bias_estimate <= bias_target {
            return Ok(AdaptOutcome { estimate: est, trace });
        }
        if stats.len() >= opts.max_levels {
            return Err(Error::BudgetExceeded {
                reason: format!(
                    "bias estimate {:e} above {:e} with the maximum of {} levels",
                    est.bias_estimate, bias_target, opts.max_levels
                ),
                partial: Some(Box::new(est)),
            });
        }
        let ell = stats.len();
        stats.push(estimator.estimate(ell, opts.n_min)?);
        record(&mut trace, &stats, ell);
    }
}

/// Single-level counterpart of [`adapt`]: doubles `N` on level 0 until its
/// variance is at most `eps^2/2`. No bias test.
pub fn single_level_adapt<E: LevelEstimator>(
    estimator: &mut E,
    eps: f64,
    n_min: usize,
    max_total_cost: f64,
) -> Result<LevelStats> {
    let mut st = estimator.estimate(0, n_min)?;
    while st.variance > eps * eps / 2.0 {
        if st.cost() > max_total_cost {
            return Err(Error::BudgetExceeded {
                reason: format!("single-level cost {:e} exceeds cap {:e}", st.cost(), max_total_cost),
                partial: None,
            });
        }
        st = estimator.estimate(0, st.n * 2)?;
    }
    Ok(st)
}

/// Least-squares slope of `log2(ys)` against `log2(xs)`.
pub fn fit_rates(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::invalid("rate fit needs at least three (x, y) pairs"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("rate fit needs positive finite data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.log2()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log2()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 * n {
        return Err(Error::invalid("rate fit abscissae are all equal"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::FamilyKind;
    use crate::lattice::weights_for_expansion;
    use crate::oracle::discrete_laplacian_eigenvalue;
    use approx::assert_relative_eq;

    fn problem(s_max: usize, quantity: Quantity) -> Problem {
        Problem {
            expansion: CoefficientExpansion::builtin(FamilyKind::SineDecay, 1, 2.0, s_max, false)
                .unwrap(),
            solver: SolverOptions::default(),
            quantity,
        }
    }

    fn setup(s: usize, levels: usize, n: usize) -> (Problem, LevelHierarchy, CbcSource, Vec<usize>) {
        let p = problem(s, Quantity::Eigenvalue);
        let hier = LevelHierarchy::new(1, 4, Truncation::Fixed(s));
        let w = weights_for_expansion(&p.expansion, s.max(1), 0.1, 1.0).unwrap();
        (p, hier, CbcSource::new(w, VectorMode::PerLevel), vec![n; levels])
    }

    const OPTS: MlOptions = MlOptions { r: 4, seed: 7, alpha_hat: 2.0, cost: CostModel::Model { gamma: 1.0 } };

    #[test]
    fn level_zero_is_plain_value() {
        let (p, hier, src, _) = setup(2, 1, 8);
        let levels = vec![LevelSpec::build(&hier, 0, 8, 2, 1, &src).unwrap()];
        let y = [0.2, -0.1];
        let (d, _) = level_difference(&p, &levels, 0, &y).unwrap();
        assert_eq!(d, p.evaluate(&hier.mesh(0).unwrap(), &y).unwrap().0);
    }

    #[test]
    fn closed_form_level_difference() {
        let p = problem(0, Quantity::Eigenvalue);
        let hier = LevelHierarchy::new(1, 2, Truncation::Fixed(0));
        let src = CbcSource::new(PodWeights::product_weights(vec![]), VectorMode::PerLevel);
        let levels: Vec<LevelSpec> =
            (0..2).map(|l| LevelSpec::build(&hier, l, 4, 2, 1, &src).unwrap()).collect();
        let (d, _) = level_difference(&p, &levels, 1, &[]).unwrap();
        let expected = discrete_laplacian_eigenvalue(0.25, 1) - 12.0;
        assert_relative_eq!(d, expected, max_relative = 1e-9);
        assert!((d + 1.613358).abs() < 1e-6);
    }

    #[test]
    fn constant_coefficients_decrease_under_refinement() {
        let p = problem(0, Quantity::Eigenvalue);
        let hier = LevelHierarchy::new(1, 2, Truncation::Fixed(0));
        let src = CbcSource::new(PodWeights::product_weights(vec![]), VectorMode::PerLevel);
        let levels: Vec<LevelSpec> =
            (0..4).map(|l| LevelSpec::build(&hier, l, 4, 2, 1, &src).unwrap()).collect();
        for ell in 1..4 {
            assert!(level_difference(&p, &levels, ell, &[]).unwrap().0 < 0.0);
        }
    }

    #[test]
    fn wrong_parameter_dimension_is_rejected() {
        let (p, hier, src, _) = setup(3, 1, 8);
        let levels = vec![LevelSpec::build(&hier, 0, 8, 2, 1, &src).unwrap()];
        assert!(level_difference(&p, &levels, 0, &[0.1]).is_err());
        assert!(level_difference(&p, &levels, 1, &[0.1, 0.0, 0.0]).is_err());
    }

    #[test]
    fn single_level_matches_shifted_qmc() {
        let (p, hier, src, pts) = setup(4, 1, 16);
        let est = ml_estimate(&p, &hier, &pts, &src, &OPTS).unwrap();
        let spec = LevelSpec::build(&hier, 0, 16, OPTS.r, OPTS.seed, &src).unwrap();
        let direct = shifted_qmc(|y| Ok(p.evaluate(&spec.mesh, y)?.0), &spec.rule).unwrap();
        assert_eq!(est.total, direct.mean);
        assert_eq!(est.per_level_variance[0], direct.sample_variance.unwrap());
    }

    #[test]
    fn estimate_invariants() {
        let (p, hier, src, pts) = setup(4, 3, 16);
        let est = ml_estimate(&p, &hier, &pts, &src, &OPTS).unwrap();
        let sum: f64 = est.per_level_mean.iter().sum();
        assert_eq!(est.total, sum);
        let var: f64 = est.per_level_variance.iter().sum();
        assert_relative_eq!(est.statistical_error * est.statistical_error, var, max_relative = 1e-14);
        assert_eq!(est.levels.len(), 3);
        assert_relative_eq!(est.bias_estimate, est.per_level_mean[2].abs() / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn deterministic_integrand_has_zero_variance() {
        let p = problem(0, Quantity::Eigenvalue);
        let hier = LevelHierarchy::new(1, 2, Truncation::Fixed(0));
        let src = CbcSource::new(PodWeights::product_weights(vec![]), VectorMode::PerLevel);
        let est = ml_estimate(&p, &hier, &[8, 8, 8], &src, &OPTS).unwrap();
        assert!(est.per_level_variance.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn levels_reproduce_in_isolation() {
        let (p, hier, src, pts) = setup(4, 3, 16);
        let full = ml_estimate(&p, &hier, &pts, &src, &OPTS).unwrap();
        let mut est = PdeLevelEstimator::new(&p, &hier, &src, OPTS);
        let lvl2 = est.estimate(2, 16).unwrap();
        assert_eq!(lvl2.per_shift, full.levels[2].per_shift);
    }

    #[test]
    fn geometric_truncation() {
        let t = Truncation::Geometric { s0: 2, s_max: 10 };
        assert_eq!((0..5).map(|l| t.s(l)).collect::<Vec<_>>(), vec![2, 4, 8, 10, 10]);
        assert_eq!(t.s(200), 10);
        assert_eq!(Truncation::Fixed(7).s(3), 7);
    }

    #[test]
    fn master_and_per_level_vectors_agree() {
        let p = problem(8, Quantity::Eigenvalue);
        let w = weights_for_expansion(&p.expansion, 8, 0.1, 1.0).unwrap();
        let per = CbcSource::new(w.clone(), VectorMode::PerLevel);
        let master = CbcSource::new(w, VectorMode::Master);
        assert_eq!(per.generating_vector(0, 64, 5).unwrap(), master.generating_vector(0, 64, 5).unwrap());
        master.generating_vector(1, 64, 8).unwrap();
        assert_eq!(master.builds(), 1);
    }

    #[test]
    fn model_cost_per_level() {
        let hier = LevelHierarchy::new(1, 4, Truncation::Fixed(3));
        // c_0 = 3 * 4 + 4, c_1 = 3 * 8 + 8
        assert_relative_eq!(hier.sample_cost(0, 1.0), 16.0);
        assert_relative_eq!(hier.sample_cost(1, 1.0), 48.0);
    }

    /// Level `l` has mean `bias0 4^{-l}`, variance `v0 4^{-l} / N`, unit cost.
    struct Synthetic {
        bias0: f64,
        v0: f64,
        calls: Vec<(usize, usize)>,
    }

    impl LevelEstimator for Synthetic {
        fn estimate(&mut self, ell: usize, n: usize) -> Result<LevelStats> {
            self.calls.push((ell, n));
            let decay = 0.25f64.powi(ell as i32);
            Ok(LevelStats {
                ell,
                h: 0.5f64.powi(ell as i32),
                s: 1,
                n,
                r: 8,
                mean: self.bias0 * decay,
                variance: self.v0 * decay / n as f64,
                per_shift: vec![],
                cost_per_sample: 1.0,
                wall_seconds: 0.0,
                solver_iters_mean: 0.0,
            })
        }
    }

    fn adapt_opts(eps: f64, initial_levels: usize) -> AdaptOptions {
        AdaptOptions {
            eps,
            alpha_hat: 2.0,
            n_min: 16,
            initial_levels,
            max_levels: 8,
            max_total_cost: 1e12,
        }
    }

    #[test]
    fn adapt_returns_immediately_when_converged() {
        let eps = 0.1;
        let mut syn = Synthetic { bias0: 0.0, v0: 16.0 * eps * eps / 4.0, calls: vec![] };
        let out = adapt(&mut syn, Quantity::Eigenvalue, &adapt_opts(eps, 1)).unwrap();
        assert_eq!(syn.calls, vec![(0, 16)]);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn adapt_doubles_exactly_twice() {
        let eps = 0.1;
        // V(16) = 4 eps^2 / 2
        let mut syn = Synthetic { bias0: 0.0, v0: 16.0 * 4.0 * eps * eps / 2.0, calls: vec![] };
        let out = adapt(&mut syn, Quantity::Eigenvalue, &adapt_opts(eps, 1)).unwrap();
        assert_eq!(syn.calls, vec![(0, 16), (0, 32), (0, 64)]);
        assert_eq!(out.estimate.allocation(), vec![64]);
        assert!(out.estimate.variance_sum() <= eps * eps / 2.0);
    }

    #[test]
    fn bias_test_arithmetic() {
        let eps = 0.1;
        let target = eps / std::f64::consts::SQRT_2;
        assert_relative_eq!(richardson_bias(3.0 * target, 2.0), target, max_relative = 1e-15);
        // bias estimate 3 eps/sqrt(2) on the last level forces a new level
        let mut syn = Synthetic { bias0: 9.0 * target, v0: 0.0, calls: vec![] };
        let out = adapt(&mut syn, Quantity::Eigenvalue, &adapt_opts(eps, 1)).unwrap();
        assert_eq!(out.estimate.levels.len(), 2);
        assert!(out.estimate.bias_estimate <= target);
        // just above the threshold also adds a level; just below does not
        let mut above = Synthetic { bias0: 3.0 * target * (1.0 + 1e-9), v0: 0.0, calls: vec![] };
        assert_eq!(adapt(&mut above, Quantity::Eigenvalue, &adapt_opts(eps, 1)).unwrap().estimate.levels.len(), 2);
        let mut below = Synthetic { bias0: 3.0 * target * (1.0 - 1e-9), v0: 0.0, calls: vec![] };
        assert_eq!(adapt(&mut below, Quantity::Eigenvalue, &adapt_opts(eps, 1)).unwrap().estimate.levels.len(), 1);
    }

    #[test]
    fn adapt_reports_budget_exhaustion() {
        let mut syn = Synthetic { bias0: 1.0, v0: 0.0, calls: vec![] };
        let opts = AdaptOptions { max_levels: 2, ..adapt_opts(1e-9, 1) };
        match adapt(&mut syn, Quantity::Eigenvalue, &opts) {
            Err(Error::BudgetExceeded { partial: Some(p), .. }) => assert_eq!(p.levels.len(), 2),
            other => panic!("expected budget error, got {other:?}"),
        }
        let mut syn = Synthetic { bias0: 0.0, v0: 1.0, calls: vec![] };
        let opts = AdaptOptions { max_total_cost: 1e4, ..adapt_opts(1e-6, 1) };
        assert!(matches!(adapt(&mut syn, Quantity::Eigenvalue, &opts), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn adapt_doubles_where_variance_per_cost_is_largest() {
        let eps = 0.05;
        let mut syn = Synthetic { bias0: 0.01, v0: 1.0, calls: vec![] };
        let out = adapt(&mut syn, Quantity::Eigenvalue, &adapt_opts(eps, 2)).unwrap();
        let alloc = out.estimate.allocation();
        assert!(alloc[0] >= alloc[1]);
        assert!(out.estimate.variance_sum() <= eps * eps / 2.0);
        assert!(out.estimate.bias_estimate <= eps / std::f64::consts::SQRT_2);
        for (i, st) in out.trace.iter().enumerate() {
            assert_eq!(st.step, i);
        }
    }

    #[test]
    fn single_level_doubling() {
        let eps = 0.1;
        let mut syn = Synthetic { bias0: 0.0, v0: 16.0 * 4.0 * eps * eps / 2.0, calls: vec![] };
        let st = single_level_adapt(&mut syn, eps, 16, 1e12).unwrap();
        assert_eq!(st.n, 64);
    }

    #[test]
    fn fit_rates_exact_powers() {
        assert_relative_eq!(fit_rates(&[1.0, 0.5, 0.25], &[1.0, 0.25, 0.0625]).unwrap(), 2.0, max_relative = 1e-14);
        assert_eq!(fit_rates(&[1.0, 0.5, 0.25], &[1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn fit_rates_noisy_quartic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..8).map(|i| 0.5f64.powi(i)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powi(4) * (1.0 + rng.gen_range(-0.01..0.01))).collect();
        let slope = fit_rates(&xs, &ys).unwrap();
        assert!(slope > 3.8 && slope < 4.2, "{slope}");
    }

    #[test]
    fn fit_rates_rejects_degenerate_input() {
        assert!(fit_rates(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_rates(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_rates(&[1.0, 2.0, 3.0], &[1.0, 0.0, 3.0]).is_err());
    }
}
