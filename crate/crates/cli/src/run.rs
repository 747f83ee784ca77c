//! Command dispatch and exit codes.

use serde::Serialize;

use curved_nbody::dynamics::{self, BodySystem, PhaseState, EPS_SING};
use curved_nbody::equilibria::{self, REProblem, SolverOptions};
use curved_nbody::probe::{self, ScanOptions};
use curved_nbody::{Error, RotationSpec, Sigma, SpacePoint};

use crate::config::{Command, ConfigError, Format, RunConfig};
use crate::export;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SINGULARITY: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Singularity(Error),
    #[error("{0}")]
    NoConvergence(String),
    #[error("verification failed: max deviation {max_deviation} exceeds {tol_dyn}")]
    VerificationFailed { max_deviation: f64, tol_dyn: f64 },
    #[error("{0}")]
    Internal(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Singularity(_) => EXIT_SINGULARITY,
            RunError::NoConvergence(_) | RunError::VerificationFailed { .. } => EXIT_NO_CONVERGENCE,
            RunError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Singularity(_) => "singularity",
            RunError::NoConvergence(_) => "non-convergence",
            RunError::VerificationFailed { .. } => "verification-failed",
            RunError::Internal(_) => "internal",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            exit_code: i32,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
            message: String,
        }
        let field = match self {
            RunError::Config(e) => Some(e.field.as_str()),
            _ => None,
        };
        let message = match self {
            RunError::Config(e) => e.message.clone(),
            other => other.to_string(),
        };
        serde_json::to_string(&Record {
            error: self.kind(),
            exit_code: self.exit_code(),
            field,
            message,
        })
        .expect("error record serializes")
    }

    /// Maps a library error raised while handling `field`.
    fn from_core(e: Error, field: &str) -> Self {
        match e {
            Error::Singularity { .. } => RunError::Singularity(e),
            Error::StepUnderflow { .. } => RunError::NoConvergence(e.to_string()),
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::OffManifold { .. }
            | Error::UnsupportedMetric => RunError::Config(ConfigError::new(field, e.to_string())),
        }
    }
}

/// What a run produced: the artifact (possibly partial) and the failure, if
/// any.
#[derive(Debug)]
pub struct Outcome {
    pub artifact: Option<Vec<u8>>,
    pub failure: Option<RunError>,
}

impl Outcome {
    fn ok(artifact: Vec<u8>) -> Self {
        Self {
            artifact: Some(artifact),
            failure: None,
        }
    }

    fn failed(artifact: Option<Vec<u8>>, failure: RunError) -> Self {
        Self {
            artifact,
            failure: Some(failure),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(EXIT_OK, RunError::exit_code)
    }
}

impl From<RunError> for Outcome {
    fn from(e: RunError) -> Self {
        Outcome::failed(None, e)
    }
}

pub fn run(config: &RunConfig) -> Outcome {
    let result = match config.command {
        Command::Simulate => simulate(config),
        Command::FindEq => find_eq(config),
        Command::Verify => verify(config),
        Command::Scan => scan(config),
        Command::Diagnose => diagnose(config),
    };
    result.unwrap_or_else(Outcome::from)
}

fn sigma(config: &RunConfig) -> Result<Sigma, RunError> {
    Sigma::from_sign(config.sigma).map_err(|e| RunError::from_core(e, "sigma"))
}

fn problem(config: &RunConfig) -> Result<REProblem<f64>, RunError> {
    let spec = RotationSpec::new(config.rates.clone(), config.k)
        .map_err(|e| RunError::from_core(e, "rates"))?;
    REProblem::new(config.masses.clone(), spec).map_err(|e| RunError::from_core(e, "masses"))
}

fn bodies(config: &RunConfig) -> Result<BodySystem<f64>, RunError> {
    let sigma = sigma(config)?;
    let rows = config.positions.as_ref().ok_or_else(|| {
        ConfigError::new("positions", format!("required by `{}`", config.command))
    })?;
    let points = rows
        .iter()
        .map(|r| SpacePoint::new(r.clone(), sigma))
        .collect::<curved_nbody::Result<Vec<_>>>()
        .map_err(|e| RunError::from_core(e, "positions"))?;
    let sys = BodySystem::new(config.masses.clone(), points)
        .map_err(|e| RunError::from_core(e, "positions"))?;
    sys.check_nonsingular(EPS_SING)
        .map_err(|e| RunError::from_core(e, "positions"))?;
    Ok(sys)
}

fn simulate(config: &RunConfig) -> Result<Outcome, RunError> {
    let sys = bodies(config)?;
    let state = match &config.velocities {
        Some(rows) => {
            let v = rows
                .iter()
                .map(|r| nalgebra::DVector::from_vec(r.clone()))
                .collect();
            PhaseState::new(sys, v).map_err(|e| RunError::from_core(e, "velocities"))?
        }
        None if sys.sigma() == Sigma::Sphere => {
            let spec = RotationSpec::new(config.rates.clone(), config.k)
                .map_err(|e| RunError::from_core(e, "rates"))?;
            let v = dynamics::tangent_velocity(&sys, &spec)
                .map_err(|e| RunError::from_core(e, "rates"))?;
            PhaseState::projected(sys, v).map_err(|e| RunError::from_core(e, "positions"))?
        }
        None => PhaseState::at_rest(sys),
    };
    let write = |traj: &dynamics::Trajectory<f64>| match config.format {
        Format::Csv => export::trajectory_csv(traj),
        Format::Json => export::trajectory_json(traj),
    };
    match dynamics::integrate(&state, config.t_end, config.tol) {
        Ok(traj) => Ok(Outcome::ok(write(&traj))),
        Err(interrupted) => {
            let artifact = write(&interrupted.partial);
            Ok(Outcome::failed(
                Some(artifact),
                RunError::from_core(interrupted.cause, "t_end"),
            ))
        }
    }
}

fn solver_options(config: &RunConfig) -> SolverOptions<f64> {
    SolverOptions::new(config.tol, config.max_iter)
}

fn find_eq(config: &RunConfig) -> Result<Outcome, RunError> {
    let problem = problem(config)?;
    let solutions = if config.positions.is_some() {
        let start = bodies(config)?;
        let sol = equilibria::solve_re(&problem, &start, &solver_options(config))
            .map_err(|e| RunError::from_core(e, "positions"))?;
        if !sol.converged {
            let artifact = export::solutions_json(std::slice::from_ref(&sol), &problem);
            let msg = format!(
                "residual {} above tol {} after {} iterations",
                sol.residual_norm, config.tol, sol.iterations
            );
            return Ok(Outcome::failed(
                Some(artifact),
                RunError::NoConvergence(msg),
            ));
        }
        vec![sol]
    } else {
        scan_result(config, &problem)?.solutions
    };
    let artifact = export::solutions_json(&solutions, &problem);
    if solutions.is_empty() {
        let msg = format!("none of {} starts converged", config.starts);
        return Ok(Outcome::failed(
            Some(artifact),
            RunError::NoConvergence(msg),
        ));
    }
    Ok(Outcome::ok(artifact))
}

fn scan_result(
    config: &RunConfig,
    problem: &REProblem<f64>,
) -> Result<probe::BoundScanResult<f64>, RunError> {
    let opts = ScanOptions {
        solver: solver_options(config),
        match_tol: config.match_tol,
    };
    probe::scan_bound_with(problem, config.starts, config.seed, &opts)
        .map_err(|e| RunError::from_core(e, "starts"))
}

fn scan(config: &RunConfig) -> Result<Outcome, RunError> {
    let problem = problem(config)?;
    let result = scan_result(config, &problem)?;
    let artifact = export::scan_json(&result);
    if result.solutions.is_empty() {
        let msg = format!("none of {} starts converged", config.starts);
        return Ok(Outcome::failed(
            Some(artifact),
            RunError::NoConvergence(msg),
        ));
    }
    Ok(Outcome::ok(artifact))
}

fn verify(config: &RunConfig) -> Result<Outcome, RunError> {
    let problem = problem(config)?;
    let sys = bodies(config)?;
    let residual =
        equilibria::re_residual(&problem, &sys).map_err(|e| RunError::from_core(e, "positions"))?;
    let report = equilibria::verify_configuration(
        &sys,
        &problem,
        config.periods,
        config.tol_dyn,
        config.tol,
    )
    .map_err(|e| RunError::from_core(e, "positions"))?;
    let artifact = export::verify_json(
        &problem,
        &sys,
        residual.norm,
        config.periods,
        config.tol_dyn,
        &report,
    );
    if !report.pass {
        let failure = RunError::VerificationFailed {
            max_deviation: report.max_deviation,
            tol_dyn: config.tol_dyn,
        };
        return Ok(Outcome::failed(Some(artifact), failure));
    }
    Ok(Outcome::ok(artifact))
}

fn diagnose(config: &RunConfig) -> Result<Outcome, RunError> {
    let problem = problem(config)?;
    let base = bodies(config)?;
    let table = probe::shrink_family_probe(&problem, &base, &config.cluster, &config.d_values)
        .map_err(|e| RunError::from_core(e, "d_values"))?;
    Ok(Outcome::ok(match config.format {
        Format::Csv => export::probe_csv(&table),
        Format::Json => export::probe_json(&problem, &config.cluster, &table),
    }))
}
