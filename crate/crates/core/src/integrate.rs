//! Projected RK4 integration of reduced systems and numerical certificates.
//!
//! Each RK4 stage solves the determined fibers at the stage point. After each
//! step the base point is projected back onto the final constraints by a
//! minimum-norm Newton correction and the fibers are re-solved.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::conventions;
use crate::dirac_field::{DiracKind, FieldError};
use crate::expr::{ExprError, ScalarField};
use crate::linalg::DEFAULT_RANK_TOL;
use crate::linear_dirac::{DiracError, LinearMap};
use crate::morse::{MAX_NEWTON, NEWTON_TOL};
use crate::reduction::{ReducedSystem, ReductionError, PROJ_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Dirac(#[from] DiracError),
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("Newton failure at t = {t}: {source}")]
    NewtonFailure { t: f64, source: ReductionError },
    #[error("rank of the {what} changed from {expected} to {found} at t = {t}")]
    RankDrift {
        t: f64,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("presymplecticity check needs the canonical structure")]
    NotCanonical,
    #[error("presymplecticity check is only defined when the final manifold is the whole chart")]
    ReducedManifoldProper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_final: f64,
    pub newton_tol: f64,
    pub proj_tol: f64,
    pub max_newton: usize,
    pub rank_tol: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        IntegratorConfig {
            dt,
            t_final,
            newton_tol: NEWTON_TOL,
            proj_tol: PROJ_TOL,
            max_newton: MAX_NEWTON,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }

    fn validate(&self) -> Result<(), IntegrateError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(IntegrateError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(IntegrateError::InvalidConfig(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        Ok(())
    }

    /// Number of equal steps covering `[0, t_final]` with step at most `dt`.
    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }
}

/// A named scalar evaluated at every accepted state.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub name: String,
    pub field: ScalarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub fibers: Vec<Vec<f64>>,
    pub monitors: Vec<(String, Vec<f64>)>,
    pub max_constraint_residual: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn monitor(&self, name: &str) -> Option<&[f64]> {
        self.monitors.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Total-space point `(x, y)` of row `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.states[i].iter().chain(&self.fibers[i]).copied().collect()
    }
}

fn with_config(rs: &ReducedSystem, cfg: &IntegratorConfig) -> ReducedSystem {
    let mut rs = rs.clone();
    rs.newton.tol = cfg.newton_tol;
    rs.newton.max_iter = cfg.max_newton;
    rs.newton.rank_tol = cfg.rank_tol;
    rs.proj_tol = cfg.proj_tol;
    rs
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn newton_at(t: f64) -> impl Fn(ReductionError) -> IntegrateError {
    move |e| match e {
        ReductionError::Expr(e) => IntegrateError::Expr(e),
        other => IntegrateError::NewtonFailure { t, source: other },
    }
}

/// One projected RK4 step of size `h` from `(x, y)`.
pub fn step(rs: &ReducedSystem, x: &[f64], y: &[f64], h: f64, t: f64) -> Result<(Vec<f64>, Vec<f64>), IntegrateError> {
    let err = newton_at(t);
    let (k1, y1) = rs.vector_field(x, y).map_err(&err)?;
    let (k2, y2) = rs.vector_field(&axpy(x, h / 2.0, &k1), &y1).map_err(&err)?;
    let (k3, y3) = rs.vector_field(&axpy(x, h / 2.0, &k2), &y2).map_err(&err)?;
    let (k4, _) = rs.vector_field(&axpy(x, h, &k3), &y3).map_err(&err)?;
    let xn: Vec<f64> = (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let xn = rs.project_base(&xn, y).map_err(&err)?;
    let yn = rs.solve_fibers(&xn, y).map_err(&err)?;
    Ok((xn, yn))
}

/// Integrates from `x0` (fibers started from the ladder seed).
pub fn integrate(
    rs: &ReducedSystem,
    x0: &[f64],
    cfg: &IntegratorConfig,
    monitors: &[Monitor],
) -> Result<Trajectory, IntegrateError> {
    cfg.validate()?;
    let n = rs.n_base();
    if x0.len() != n {
        return Err(IntegrateError::InvalidConfig(format!(
            "initial state has {} components, expected {}",
            x0.len(),
            n
        )));
    }
    let rs = with_config(rs, cfg);
    let y_seed = rs.ladder.seed[n..].to_vec();
    let (mut x, mut y) = rs.project(x0, &y_seed).map_err(newton_at(0.0))?;

    let z0: Vec<f64> = x.iter().chain(&y).copied().collect();
    let det_rank = rs.determining_rank(&z0)?;
    let con_rank = rs.constraint_rank(&z0)?;

    let steps = cfg.steps();
    let h = cfg.t_final / steps as f64;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        fibers: Vec::with_capacity(steps + 1),
        monitors: monitors.iter().map(|m| (m.name.clone(), Vec::with_capacity(steps + 1))).collect(),
        max_constraint_residual: 0.0,
    };
    let record = |traj: &mut Trajectory, t: f64, x: &[f64], y: &[f64]| -> Result<(), IntegrateError> {
        let z: Vec<f64> = x.iter().chain(y).copied().collect();
        let found = rs.determining_rank(&z)?;
        if found != det_rank {
            return Err(IntegrateError::RankDrift {
                t,
                what: "determining block",
                expected: det_rank,
                found,
            });
        }
        let found = rs.constraint_rank(&z)?;
        if found != con_rank {
            return Err(IntegrateError::RankDrift {
                t,
                what: "base-constraint gradient",
                expected: con_rank,
                found,
            });
        }
        traj.max_constraint_residual = traj.max_constraint_residual.max(rs.constraint_residual(&z)?);
        for (slot, m) in traj.monitors.iter_mut().zip(monitors) {
            slot.1.push(m.field.eval(&z)?);
        }
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.fibers.push(y.to_vec());
        Ok(())
    };
    record(&mut traj, 0.0, &x, &y)?;
    for i in 0..steps {
        let t = i as f64 * h;
        let (xn, yn) = step(&rs, &x, &y, h, t)?;
        x = xn;
        y = yn;
        let t_next = if i + 1 == steps { cfg.t_final } else { (i + 1) as f64 * h };
        record(&mut traj, t_next, &x, &y)?;
    }
    Ok(traj)
}

/// Worst violation, over interior trajectory points, of the lifted curve
/// `m(t) = (x(t), y(t))` solving `ṁ ⊕ dE(m) ∈ D_M`, where `D_M` is the
/// backward image of the base structure along the projection. Velocities
/// are central differences. Also includes `‖∂E/∂y‖∞` at every point.
pub fn check_projection_theorem(rs: &ReducedSystem, traj: &Trajectory) -> Result<f64, IntegrateError> {
    let n = rs.n_base();
    let k = rs.n_fiber();
    let dae = &rs.dae;
    let mut proj = DMatrix::zeros(n, n + k);
    proj.view_mut((0, 0), (n, n)).fill_with_identity();
    let proj = LinearMap::new(proj);
    let mut worst: f64 = 0.0;
    for i in 0..traj.len() {
        let z = traj.point(i);
        let g = dae.eval_g(&z)?;
        worst = worst.max(g.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        if i == 0 || i + 1 == traj.len() {
            continue;
        }
        let zp = traj.point(i + 1);
        let zm = traj.point(i - 1);
        let dt = traj.times[i + 1] - traj.times[i - 1];
        let zdot: Vec<f64> = zp.iter().zip(&zm).map(|(a, b)| (a - b) / dt).collect();
        let alpha: Vec<f64> = dae.eval_mu(&z)?.into_iter().chain(g).collect();
        let dm = dae.dirac().at(&traj.states[i])?.backward(&proj)?;
        worst = worst.max(dm.residual(&zdot, &alpha)?);
    }
    Ok(worst)
}

/// `‖JᵀΩJ − Ω‖∞` for the time-`h` flow map, `J` by central differences of
/// step `delta`. Only defined for the canonical structure without base
/// constraints, where the leaf is the whole chart.
pub fn check_flow_presymplectic(rs: &ReducedSystem, x0: &[f64], h: f64, delta: f64) -> Result<f64, IntegrateError> {
    let (q, p) = match rs.dae.dirac().kind() {
        DiracKind::CanonicalSymplectic { q, p } => (q.clone(), p.clone()),
        _ => return Err(IntegrateError::NotCanonical),
    };
    if !rs.base_constraints().is_empty() {
        return Err(IntegrateError::ReducedManifoldProper);
    }
    let n = rs.n_base();
    let m = q.len();
    let canon = conventions::canonical_two_form(m);
    let order: Vec<usize> = q.iter().chain(&p).copied().collect();
    let mut omega = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            omega[(order[i], order[j])] = canon[(i, j)];
        }
    }
    if h == 0.0 {
        return Ok(0.0);
    }
    let y_seed = rs.ladder.seed[n..].to_vec();
    let flow = |x: &[f64]| -> Result<Vec<f64>, IntegrateError> {
        let y = rs.solve_fibers(x, &y_seed).map_err(newton_at(0.0))?;
        Ok(step(rs, x, &y, h, 0.0)?.0)
    };
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x0.to_vec();
        let mut xm = x0.to_vec();
        xp[j] += delta;
        xm[j] -= delta;
        let fp = flow(&xp)?;
        let fm = flow(&xm)?;
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * delta);
        }
    }
    Ok((jac.transpose() * &omega * &jac - omega).amax())
}
