//! Mode dispatch: builds the problem, hierarchy and vector cache from a
//! config and writes the artifacts of one run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mlqmc_evp::coeff::ParamPoint;
use mlqmc_evp::eigsolve::smallest_eigenpair;
use mlqmc_evp::fem::assemble;
use mlqmc_evp::lattice::weights_for_expansion;
use mlqmc_evp::mlqmc::{
    adapt, fit_rates, ml_estimate, AdaptOptions, AdaptStep, LevelHierarchy, MLEstimate, MlOptions,
    PdeLevelEstimator, Problem, VectorSource,
};
use mlqmc_evp::oracle::{dense_reference_eigenpairs, expect_tensor, TensorQuadrature, DENSE_MAX_DOFS};

use crate::artifacts::{self, ErrorReport, Manifest, Metadata, RateRow, ValidateRow};
use crate::cache::DiskCbcSource;
use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    /// Runs `run.mode`.
    Run,
    /// Builds (or reuses) the generating vectors of every level.
    Cbc,
    Validate,
    Rates,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Cbc => "cbc",
            Command::Validate => "validate",
            Command::Rates => "rates",
        }
    }

    fn mode(self, cfg: &ExperimentConfig) -> Option<Mode> {
        match self {
            Command::Run => Some(cfg.run.mode),
            Command::Cbc => None,
            Command::Validate => Some(Mode::Validate),
            Command::Rates => Some(Mode::Rates),
        }
    }
}

fn mode_name(mode: Option<Mode>) -> &'static str {
    match mode {
        None => "cbc",
        Some(Mode::Single) => "single",
        Some(Mode::Ml) => "ml",
        Some(Mode::Adaptive) => "adaptive",
        Some(Mode::Validate) => "validate",
        Some(Mode::Rates) => "rates",
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub estimate: Option<MLEstimate>,
    pub rates: Vec<(String, f64)>,
    pub cbc_built: usize,
    pub cbc_reused: usize,
    pub files: Vec<PathBuf>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs `command` with `cfg`, writing artifacts into `out`.
///
/// On failure an `error.toml` report is written next to the manifest, and an
/// available partial estimate goes to `partial_levels.csv` / `partial_summary.csv`.
pub fn execute(cfg: &ExperimentConfig, command: Command, out: &Path) -> Result<RunOutcome, CliError> {
    let mode = command.mode(cfg);
    if let Some(m) = mode {
        cfg.validate_mode(m)?;
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let version = env!("CARGO_PKG_VERSION");
    artifacts::write_toml(
        &out.join("manifest.toml"),
        &Manifest {
            version,
            command: command.name(),
            mode: mode_name(mode),
            seed: cfg.qmc.seed,
            config_sha256: cfg.hash(),
            config: cfg,
        },
    )?;
    let _ = fs::remove_file(out.join("error.toml"));

    let started = unix_now();
    let clock = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| CliError::Other(format!("cannot start worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    let mut ctx = None;
    let result = pool.install(|| run_mode(cfg, mode, out, &mut ctx));

    let mut meta = Metadata {
        started_unix: started,
        finished_unix: unix_now(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        workers,
        ..Metadata::default()
    };
    if let Some(src) = &ctx {
        let src: &DiskCbcSource = src;
        meta.cbc_built = src.built();
        meta.cbc_reused = src.reused();
        meta.warnings = src.warnings();
    }
    match result {
        Ok(mut outcome) => {
            if let Some(est) = &outcome.estimate {
                meta.level_wall_seconds = est.levels.iter().map(|l| l.wall_seconds).collect();
            }
            artifacts::write_toml(&out.join("metadata.toml"), &meta)?;
            outcome.cbc_built = meta.cbc_built;
            outcome.cbc_reused = meta.cbc_reused;
            Ok(outcome)
        }
        Err(err) => {
            if let CliError::Core(
                mlqmc_evp::Error::BudgetExceeded { partial: Some(p), .. }
                | mlqmc_evp::Error::LevelFailed { partial: p, .. },
            ) = &err
            {
                meta.level_wall_seconds = p.levels.iter().map(|l| l.wall_seconds).collect();
                artifacts::write_levels(&out.join("partial_levels.csv"), &p.levels)?;
                artifacts::write_summary(&out.join("partial_summary.csv"), p)?;
            }
            artifacts::write_toml(&out.join("metadata.toml"), &meta)?;
            artifacts::write_toml(
                &out.join("error.toml"),
                &ErrorReport { kind: err.kind().into(), exit_code: err.exit_code(), message: err.to_string() },
            )?;
            Err(err)
        }
    }
}

fn run_mode(
    cfg: &ExperimentConfig,
    mode: Option<Mode>,
    out: &Path,
    ctx: &mut Option<DiskCbcSource>,
) -> Result<RunOutcome, CliError> {
    let problem = cfg.problem()?;
    let truncation = cfg.truncation();
    let hierarchy = LevelHierarchy::from_h0(cfg.problem.dim, cfg.discretization.h0, truncation)?;
    let weights = weights_for_expansion(
        &problem.expansion,
        truncation.max_dim(),
        cfg.qmc.delta,
        cfg.qmc.weight_constant,
    )?;
    let source: &DiskCbcSource = ctx.insert(DiskCbcSource::new(out.join("cbc"), weights, cfg.vector_mode()));
    let opts = MlOptions {
        r: cfg.qmc.shifts,
        seed: cfg.qmc.seed,
        alpha_hat: cfg.alpha_hat(),
        cost: cfg.cost_model(),
    };
    let big_l = cfg.discretization.levels;
    let points = cfg.qmc.points;
    let mut outcome = RunOutcome {
        out_dir: out.to_path_buf(),
        estimate: None,
        rates: vec![],
        cbc_built: 0,
        cbc_reused: 0,
        files: vec![],
    };
    let mut trace: Option<Vec<AdaptStep>> = None;
    let est = match mode {
        None => {
            for ell in 0..=big_l {
                let path = source.path(ell, points, hierarchy.s(ell));
                source.generating_vector(ell, points, hierarchy.s(ell))?;
                outcome.files.push(path);
            }
            return Ok(outcome);
        }
        Some(Mode::Single) => {
            // the finest level on its own, labelled level 0
            ml_estimate(&problem, &hierarchy.single(big_l), &[points], source, &opts)?
        }
        Some(Mode::Ml) | Some(Mode::Rates) | Some(Mode::Validate) => {
            ml_estimate(&problem, &hierarchy, &vec![points; big_l + 1], source, &opts)?
        }
        Some(Mode::Adaptive) => {
            let mut estimator = PdeLevelEstimator::new(&problem, &hierarchy, source, opts);
            let adapted = adapt(
                &mut estimator,
                problem.quantity,
                &AdaptOptions {
                    eps: cfg.run.eps,
                    alpha_hat: opts.alpha_hat,
                    n_min: cfg.qmc.n_min,
                    initial_levels: big_l + 1,
                    max_levels: cfg.run.max_levels,
                    max_total_cost: cfg.run.max_total_cost,
                },
            )?;
            trace = Some(adapted.trace);
            adapted.estimate
        }
    };

    let mut emit = |name: &str| {
        let p = out.join(name);
        outcome.files.push(p.clone());
        p
    };
    artifacts::write_levels(&emit("levels.csv"), &est.levels)?;
    artifacts::write_summary(&emit("summary.csv"), &est)?;
    if let Some(trace) = &trace {
        artifacts::write_trace(&emit("adapt_trace.csv"), trace)?;
    }
    if mode == Some(Mode::Rates) {
        let rates = level_rates(&est)?;
        let rows: Vec<RateRow> = rates
            .iter()
            .map(|(rate, slope)| RateRow {
                quantity: est.quantity.name().into(),
                rate: rate.clone(),
                slope: *slope,
                points: big_l,
            })
            .collect();
        artifacts::write_rates(&emit("rates.csv"), &rows)?;
        outcome.rates = rates;
    }
    if mode == Some(Mode::Validate) {
        let checks = oracle_checks(cfg, &problem, &hierarchy, &est)?;
        artifacts::write_validate(&emit("validate.csv"), &checks)?;
    }
    outcome.estimate = Some(est);
    Ok(outcome)
}

/// Slopes of `V_l` and `|E[Y_l]|` against `h_{l-1}` over levels `l >= 1`.
fn level_rates(est: &MLEstimate) -> Result<Vec<(String, f64)>, CliError> {
    let coarse_h: Vec<f64> = est.levels[..est.levels.len() - 1].iter().map(|l| l.h).collect();
    let var: Vec<f64> = est.levels[1..].iter().map(|l| l.variance).collect();
    let mean: Vec<f64> = est.levels[1..].iter().map(|l| l.mean.abs()).collect();
    Ok(vec![
        ("variance_vs_h".into(), fit_rates(&coarse_h, &var)?),
        ("mean_vs_h".into(), fit_rates(&coarse_h, &mean)?),
    ])
}

fn oracle_checks(
    cfg: &ExperimentConfig,
    problem: &Problem,
    hierarchy: &LevelHierarchy,
    est: &MLEstimate,
) -> Result<Vec<ValidateRow>, CliError> {
    let big_l = cfg.discretization.levels;
    let mesh = hierarchy.mesh(big_l)?;
    let s = hierarchy.s(big_l);
    let expected = if s == 0 {
        problem.evaluate(&mesh, &[])?.0
    } else {
        let quad = TensorQuadrature::new(s, cfg.run.oracle_nodes)?;
        expect_tensor(|y| Ok(problem.evaluate(&mesh, y)?.0), &quad)?
    };
    let quantity = problem.quantity.name().to_string();
    let mut rows = vec![ValidateRow {
        check: "ml_total_vs_tensor_quadrature".into(),
        quantity,
        estimator: est.total,
        oracle: expected,
    }];
    if mesh.num_dofs() <= DENSE_MAX_DOFS {
        let sys = assemble(&mesh, &problem.expansion, &ParamPoint::zeros(s))?;
        let pair = smallest_eigenpair(&sys, &problem.solver)?;
        let dense = dense_reference_eigenpairs(&sys, 1)?;
        rows.push(ValidateRow {
            check: "eigensolver_vs_dense_at_y0".into(),
            quantity: "eigenvalue".into(),
            estimator: pair.lambda,
            oracle: dense[0].0,
        });
    }
    Ok(rows)
}
