//! Experiment configuration: a TOML file with `[problem]`, `[discretization]`,
//! `[qmc]`, `[solver]` and `[run]` sections. Unknown keys are rejected and
//! every section may be omitted to take its defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mlqmc_evp::coeff::{CoefficientExpansion, FamilyKind};
use mlqmc_evp::eigsolve::SolverOptions;
use mlqmc_evp::mlqmc::{CostModel, Problem, Quantity, Truncation, VectorMode};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    pub qmc: QmcConfig,
    pub solver: SolverConfig,
    pub run: RunConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SineDecay,
    IndicatorPatches,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantityName {
    Eigenvalue,
    Functional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    pub kind: Family,
    /// Decay exponent of the coefficient series.
    pub theta: f64,
    /// Number of series terms available; bounds every truncation dimension.
    pub s_max: usize,
    /// Switch on the reaction term `b = a`.
    pub reaction: bool,
    pub quantity: QuantityName,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            dim: 1,
            kind: Family::SineDecay,
            theta: 2.0,
            s_max: 32,
            reaction: false,
            quantity: QuantityName::Eigenvalue,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationName {
    Fixed,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    /// Requested coarsest meshwidth; the realized `h_0` is the largest uniform one not above it.
    pub h0: f64,
    /// Finest level index `L` (adaptive runs start with levels `0..=L`).
    pub levels: usize,
    pub truncation: TruncationName,
    /// Truncation dimension for the fixed schedule.
    pub s: usize,
    /// Level-0 dimension for the geometric schedule `min(s_max, s0 2^l)`.
    pub s0: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig {
            h0: 0.25,
            levels: 2,
            truncation: TruncationName::Fixed,
            s: 16,
            s0: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorModeName {
    PerLevel,
    Master,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QmcConfig {
    pub delta: f64,
    /// Random shifts per level, `R`.
    pub shifts: usize,
    /// Starting points per level in adaptive runs.
    pub n_min: usize,
    /// Points per level in single, ml, rates and validate runs.
    pub points: usize,
    /// Replaces both constants in front of the weight sequences.
    pub weight_constant: f64,
    pub seed: u64,
    pub vectors: VectorModeName,
}

impl Default for QmcConfig {
    fn default() -> Self {
        QmcConfig {
            delta: 0.1,
            shifts: 8,
            n_min: 16,
            points: 128,
            weight_constant: 1.0,
            seed: 1,
            vectors: VectorModeName::PerLevel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub gap_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig { tol: d.tol, max_iter: d.max_iter, gap_min: d.gap_min }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Single,
    Ml,
    Adaptive,
    Validate,
    Rates,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostName {
    Model,
    Measured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Target RMSE of adaptive runs.
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub max_levels: usize,
    pub max_total_cost: f64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub cost: CostName,
    /// Exponent `gamma` of the cost model; defaults to the spatial dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_gamma: Option<f64>,
    /// Bias-decay exponent of the Richardson test; defaults to 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<f64>,
    /// Gauss-Legendre nodes per dimension for validate runs.
    pub oracle_nodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Ml,
            eps: 0.01,
            output_dir: None,
            max_levels: 10,
            max_total_cost: 1e12,
            workers: 0,
            cost: CostName::Model,
            cost_gamma: None,
            alpha_hat: None,
            oracle_nodes: 16,
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Range checks that do not depend on the run mode.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        let d = &self.discretization;
        let q = &self.qmc;
        let r = &self.run;
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(config_error(msg)) };
        check((1..=2).contains(&p.dim), format!("problem.dim = {} not in {{1, 2}}", p.dim))?;
        check(p.theta > 1.0, format!("problem.theta = {} must exceed 1", p.theta))?;
        check(d.h0 > 0.0 && d.h0 < 1.0, format!("discretization.h0 = {} not in (0, 1)", d.h0))?;
        match d.truncation {
            TruncationName::Fixed => check(
                d.s <= p.s_max,
                format!("discretization.s = {} exceeds problem.s_max = {}", d.s, p.s_max),
            )?,
            TruncationName::Geometric => check(
                d.s0 >= 1 && d.s0 <= p.s_max,
                format!("discretization.s0 = {} not in 1..=s_max", d.s0),
            )?,
        }
        check(q.delta > 0.0 && q.delta < 1.0, format!("qmc.delta = {} not in (0, 1)", q.delta))?;
        check(q.shifts >= 1, "qmc.shifts must be at least 1".into())?;
        check(q.n_min.is_power_of_two(), format!("qmc.n_min = {} is not a power of two", q.n_min))?;
        check(q.points.is_power_of_two(), format!("qmc.points = {} is not a power of two", q.points))?;
        check(q.weight_constant > 0.0, "qmc.weight_constant must be positive".into())?;
        check(self.solver.tol > 0.0 && self.solver.tol < 1.0, "solver.tol not in (0, 1)".into())?;
        check(self.solver.max_iter >= 1, "solver.max_iter must be at least 1".into())?;
        check(r.max_levels >= 1, "run.max_levels must be at least 1".into())?;
        check(r.max_total_cost > 0.0, "run.max_total_cost must be positive".into())?;
        check(r.cost_gamma.is_none_or(|g| g > 0.0), "run.cost_gamma must be positive".into())?;
        check(r.alpha_hat.is_none_or(|a| a > 0.0), "run.alpha_hat must be positive".into())?;
        Ok(())
    }

    /// Checks that apply to one particular mode.
    pub fn validate_mode(&self, mode: Mode) -> Result<(), CliError> {
        let d = &self.discretization;
        let needs_variance = matches!(mode, Mode::Adaptive | Mode::Rates);
        if needs_variance && self.qmc.shifts < 2 {
            return Err(config_error("adaptive and rates runs need qmc.shifts >= 2"));
        }
        match mode {
            Mode::Adaptive => {
                if !(self.run.eps > 0.0) {
                    return Err(config_error("run.eps must be positive"));
                }
                if d.levels + 1 > self.run.max_levels {
                    return Err(config_error("discretization.levels + 1 exceeds run.max_levels"));
                }
            }
            Mode::Rates if d.levels < 3 => {
                return Err(config_error("rates need discretization.levels >= 3 (three level differences)"));
            }
            Mode::Validate => {
                let s_top = self.truncation().s(d.levels);
                if s_top > 4 {
                    return Err(config_error(format!(
                        "validate compares against tensor quadrature, which needs s <= 4 (finest level has {s_top})"
                    )));
                }
                if !(1..=32).contains(&self.run.oracle_nodes) {
                    return Err(config_error("run.oracle_nodes not in 1..=32"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn expansion(&self) -> Result<CoefficientExpansion, CliError> {
        let kind = match self.problem.kind {
            Family::SineDecay => FamilyKind::SineDecay,
            Family::IndicatorPatches => FamilyKind::IndicatorPatches,
        };
        let p = &self.problem;
        CoefficientExpansion::builtin(kind, p.dim, p.theta, p.s_max, p.reaction)
            .map_err(|e| config_error(e.to_string()))
    }

    pub fn quantity(&self) -> Quantity {
        match self.problem.quantity {
            QuantityName::Eigenvalue => Quantity::Eigenvalue,
            QuantityName::Functional => Quantity::Functional,
        }
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        Ok(Problem {
            expansion: self.expansion()?,
            solver: SolverOptions {
                tol: self.solver.tol,
                max_iter: self.solver.max_iter,
                gap_min: self.solver.gap_min,
            },
            quantity: self.quantity(),
        })
    }

    pub fn truncation(&self) -> Truncation {
        match self.discretization.truncation {
            TruncationName::Fixed => Truncation::Fixed(self.discretization.s),
            TruncationName::Geometric => Truncation::Geometric {
                s0: self.discretization.s0,
                s_max: self.problem.s_max,
            },
        }
    }

    pub fn vector_mode(&self) -> VectorMode {
        match self.qmc.vectors {
            VectorModeName::PerLevel => VectorMode::PerLevel,
            VectorModeName::Master => VectorMode::Master,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        match self.run.cost {
            CostName::Measured => CostModel::Measured,
            CostName::Model => CostModel::Model {
                gamma: self.run.cost_gamma.unwrap_or(self.problem.dim as f64),
            },
        }
    }

    pub fn alpha_hat(&self) -> f64 {
        self.run.alpha_hat.unwrap_or_else(|| self.quantity().default_alpha())
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration, ignoring settings that cannot
    /// change any result (output location and worker count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.output_dir = None;
        c.run.workers = 0;
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
