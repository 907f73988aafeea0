//! The `check`, `reduce` and `simulate` commands as library functions.

use std::fmt::Write as _;

use dirac_core::integrate::{self, IntegratorConfig, Monitor, Trajectory};
use dirac_core::morse::{Classification, NewtonOptions};
use dirac_core::reduction::{self, assemble, run_ladder, GeneralizedDiracSystem, LadderOptions, ReducedSystem};
use dirac_core::ScalarField;

use crate::error::CliError;
use crate::model::ModelFile;
use crate::report::{classification_line, LadderReport};

/// Name of the environment variable overriding the rank tolerance.
pub const RANK_TOL_ENV: &str = "DIRAC_RANK_TOL";

/// Settings that do not come from the model file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub rank_tol: Option<f64>,
}

impl RunOptions {
    /// Reads [`RANK_TOL_ENV`].
    pub fn from_env() -> Result<Self, CliError> {
        match std::env::var(RANK_TOL_ENV) {
            Ok(text) => {
                let tol: f64 = text
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Input(format!("{} is not a number: `{}`", RANK_TOL_ENV, text)))?;
                if !(tol > 0.0 && tol.is_finite()) {
                    return Err(CliError::Input(format!("{} must be positive", RANK_TOL_ENV)));
                }
                Ok(RunOptions { rank_tol: Some(tol) })
            }
            Err(_) => Ok(RunOptions::default()),
        }
    }
}

/// A built system with its classification at the seed.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub system: GeneralizedDiracSystem,
    pub config: IntegratorConfig,
    pub seed: Vec<f64>,
    pub classification: Classification,
    pub morse_rank: usize,
}

fn config(model: &ModelFile, run: &RunOptions) -> IntegratorConfig {
    let s = &model.integrator;
    let mut cfg = IntegratorConfig::new(s.dt, s.t_final);
    if let Some(t) = s.newton_tol {
        cfg.newton_tol = t;
    }
    if let Some(t) = s.proj_tol {
        cfg.proj_tol = t;
    }
    if let Some(t) = run.rank_tol.or(s.rank_tol) {
        cfg.rank_tol = t;
    }
    cfg
}

fn newton_options(cfg: &IntegratorConfig) -> NewtonOptions {
    NewtonOptions {
        tol: cfg.newton_tol,
        max_iter: cfg.max_newton,
        rank_tol: cfg.rank_tol,
    }
}

/// A fiber-critical point near `point`: fibers first, then all variables.
fn critical_point(system: &GeneralizedDiracSystem, point: &[f64], opts: &NewtonOptions) -> Result<Vec<f64>, CliError> {
    let family = system.family();
    let n = family.fibration().n_base();
    match family.solve_fiber(&point[..n], &point[n..], opts) {
        Ok(y) => Ok(point[..n].iter().chain(&y).copied().collect()),
        Err(_) => Ok(family.project_to_critical_set(point, opts)?),
    }
}

/// Builds the system and classifies it at the seed and any extra samples.
pub fn analyze(model: &ModelFile, run: &RunOptions) -> Result<Analysis, CliError> {
    let system = model.spec()?.build()?;
    let fib = system.family().fibration();
    if fib.base_names() != model.coordinates.base.as_slice() || fib.fiber_names() != model.coordinates.fiber.as_slice() {
        return Err(CliError::Input(format!(
            "coordinates do not match preset `{}`: expected base [{}] and fiber [{}]",
            model.preset,
            fib.base_names().join(", "),
            fib.fiber_names().join(", ")
        )));
    }
    let seed = model.seed_point()?;
    let samples = model.sample_points()?;
    let cfg = config(model, run);
    let opts = newton_options(&cfg);
    let at_seed = critical_point(&system, &seed, &opts)?;
    let mut points = vec![at_seed.clone()];
    for s in &samples {
        points.push(critical_point(&system, s, &opts)?);
    }
    let classification = system.family().classify(&points, cfg.rank_tol)?;
    let morse_rank = system.family().morse_rank(&at_seed, cfg.rank_tol)?;
    Ok(Analysis {
        system,
        config: cfg,
        seed,
        classification,
        morse_rank,
    })
}

/// `check`: the classification line. Irregular families are structural
/// failures.
pub fn check(model: &ModelFile, run: &RunOptions) -> Result<String, CliError> {
    let a = analyze(model, run)?;
    let k = a.system.family().fibration().n_fiber();
    let line = classification_line(&a.classification.to_string(), a.morse_rank, k);
    if let Classification::Irregular { ranks } = &a.classification {
        return Err(CliError::Structural(format!("{} (ranks {:?})", line, ranks)));
    }
    Ok(format!("{}\n", line))
}

/// Runs the ladder and packages the reduced system.
pub fn reduce(model: &ModelFile, run: &RunOptions) -> Result<(LadderReport, ReducedSystem), CliError> {
    let a = analyze(model, run)?;
    if let Classification::Irregular { ranks } = &a.classification {
        return Err(CliError::Structural(format!("irregular family (ranks {:?})", ranks)));
    }
    let dae = assemble(&a.system)?;
    let opts = LadderOptions {
        rank_tol: a.config.rank_tol,
        newton: newton_options(&a.config),
        proj_tol: a.config.proj_tol,
        initial_constraints: Vec::new(),
    };
    let ladder = run_ladder(&dae, &a.seed, &opts)?;
    let tangency = reduction::tangency_residual(&dae, &ladder, &ladder.seed)?;
    let report = LadderReport::new(
        &model.name,
        a.classification.to_string(),
        a.morse_rank,
        &model.coordinates.base,
        &model.coordinates.fiber,
        &ladder,
        tangency,
    );
    let mut rs = reduction::reduce(ladder, dae, &model.gauge_values()?)?;
    rs.newton = newton_options(&a.config);
    rs.proj_tol = a.config.proj_tol;
    Ok((report, rs))
}

/// Overrides for `simulate`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulateOptions {
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
}

/// Integrates from the projected seed.
pub fn simulate(
    model: &ModelFile,
    run: &RunOptions,
    sim: &SimulateOptions,
) -> Result<(Trajectory, ReducedSystem), CliError> {
    let (_, rs) = reduce(model, run)?;
    let mut cfg = config(model, run);
    if let Some(t) = sim.t_final {
        cfg.t_final = t;
    }
    if let Some(dt) = sim.dt {
        cfg.dt = dt;
    }
    let space = rs.dae.fibration().space().clone();
    let monitors = model
        .monitors
        .iter()
        .map(|text| {
            Ok(Monitor {
                name: text.clone(),
                field: ScalarField::parse(text, &space)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let x0 = rs.ladder.seed[..rs.n_base()].to_vec();
    let traj = integrate::integrate(&rs, &x0, &cfg, &monitors)?;
    Ok((traj, rs))
}

fn csv_field(name: &str) -> String {
    if name.contains([',', '"', '\n']) {
        format!("\"{}\"", name.replace('"', "\"\""))
    } else {
        name.to_string()
    }
}

/// `t,<base>,<fiber>,<monitors>` with 17 significant digits per value.
pub fn trajectory_csv(model: &ModelFile, traj: &Trajectory) -> String {
    let mut out = String::new();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(model.total_names())
        .chain(traj.monitors.iter().map(|(n, _)| n.clone()))
        .map(|h| csv_field(&h))
        .collect();
    let _ = writeln!(out, "{}", header.join(","));
    for i in 0..traj.len() {
        let row: Vec<String> = std::iter::once(traj.times[i])
            .chain(traj.states[i].iter().copied())
            .chain(traj.fibers[i].iter().copied())
            .chain(traj.monitors.iter().map(|(_, v)| v[i]))
            .map(|v| format!("{:.16e}", v))
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}
