//! Semi-explicit DAE assembly and the constraint ladder.
//!
//! A generalized Dirac system on a fibered chart becomes the DAE
//! `ẋ = f(x, y)`, `0 = g(x, y)` with `f = Λ(x) ∂E/∂x` and `g = ∂E/∂y`.
//! The ladder repeatedly splits the active equations into a block that fixes
//! fiber variables and combinations free of `y`, which are constraints on the
//! base; the time derivative of every new base constraint along `f` is added
//! to the active equations until nothing new appears.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dirac_field::{DiracField, FieldError};
use crate::expr::{ExprError, FieldMatrix, ScalarField};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::morse::{Fibration, MorseError, MorseFamily, NewtonOptions, M0_TOL};

/// Relative factor on `‖∂g/∂y‖` below which a combination counts as free of `y`.
pub const FIBER_FREE_FACTOR: f64 = 1e-7;

/// Residual allowed after projecting onto the base constraints.
pub const PROJ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Morse(#[from] MorseError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("base variables of the Dirac field {field:?} differ from the Morse family's {family:?}")]
    BaseMismatch { field: Vec<String>, family: Vec<String> },
    #[error("constraint ladder did not stabilize within {levels} levels")]
    LadderDiverged { levels: usize },
    #[error("final constraint manifold is empty near the seed: {reason}")]
    EmptyFinalManifold { reason: String },
    #[error("determining block has rank {rank}, expected {expected}")]
    SingularDeterminingBlock { rank: usize, expected: usize },
    #[error("Newton iteration failed: residual {residual:e}")]
    NewtonFailure { residual: f64 },
    #[error("point has {got} coordinates, expected {expected}")]
    PointLength { expected: usize, got: usize },
}

/// Dirac structure on the base plus an energy on a fibered chart over it.
#[derive(Debug, Clone)]
pub struct GeneralizedDiracSystem {
    dirac: DiracField,
    family: MorseFamily,
}

impl GeneralizedDiracSystem {
    pub fn new(dirac: DiracField, family: MorseFamily) -> Result<Self, ReductionError> {
        let field: Vec<String> = dirac.space().names().to_vec();
        let fam: Vec<String> = family.fibration().base_names().to_vec();
        if field != fam {
            return Err(ReductionError::BaseMismatch { field, family: fam });
        }
        Ok(GeneralizedDiracSystem { dirac, family })
    }

    pub fn dirac(&self) -> &DiracField {
        &self.dirac
    }

    pub fn family(&self) -> &MorseFamily {
        &self.family
    }
}

/// `ẋ = f(x, y)`, `0 = g(x, y)`, plus the covector `μ = ∂E/∂x`.
#[derive(Debug, Clone)]
pub struct SemiExplicitDAE {
    fib: Fibration,
    f: Vec<ScalarField>,
    g: Vec<ScalarField>,
    mu: Vec<ScalarField>,
    energy: ScalarField,
    dirac: DiracField,
}

fn eval_all(fields: &[ScalarField], z: &[f64]) -> Result<Vec<f64>, ExprError> {
    fields.iter().map(|f| f.eval(z)).collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Builds the DAE. The Dirac field must be a bivector graph.
pub fn assemble(sys: &GeneralizedDiracSystem) -> Result<SemiExplicitDAE, ReductionError> {
    let fib = sys.family.fibration().clone();
    let space = fib.space().clone();
    let lambda: FieldMatrix = sys.dirac.bivector_fields()?.rebase(&space)?;
    let mu: Vec<ScalarField> = sys.family.grad_base().to_vec();
    let f = lambda.mul_vec(&mu);
    Ok(SemiExplicitDAE {
        fib,
        f,
        g: sys.family.grad_fiber().to_vec(),
        mu,
        energy: sys.family.energy().clone(),
        dirac: sys.dirac.clone(),
    })
}

impl SemiExplicitDAE {
    pub fn fibration(&self) -> &Fibration {
        &self.fib
    }

    pub fn n_base(&self) -> usize {
        self.fib.n_base()
    }

    pub fn n_fiber(&self) -> usize {
        self.fib.n_fiber()
    }

    pub fn f(&self) -> &[ScalarField] {
        &self.f
    }

    pub fn g(&self) -> &[ScalarField] {
        &self.g
    }

    pub fn mu(&self) -> &[ScalarField] {
        &self.mu
    }

    pub fn energy(&self) -> &ScalarField {
        &self.energy
    }

    pub fn dirac(&self) -> &DiracField {
        &self.dirac
    }

    pub fn eval_f(&self, z: &[f64]) -> Result<Vec<f64>, ExprError> {
        eval_all(&self.f, z)
    }

    pub fn eval_g(&self, z: &[f64]) -> Result<Vec<f64>, ExprError> {
        eval_all(&self.g, z)
    }

    pub fn eval_mu(&self, z: &[f64]) -> Result<Vec<f64>, ExprError> {
        eval_all(&self.mu, z)
    }

    /// `∇ₓc · f`, the derivative of a base constraint along the flow.
    pub fn lie_derivative(&self, c: &ScalarField) -> ScalarField {
        let space = self.fib.space();
        let terms: Vec<ScalarField> = self
            .fib
            .base_indices()
            .map(|i| &c.diff_at(i) * &self.f[i])
            .collect();
        ScalarField::sum(&terms, space)
    }
}

/// Where a base constraint came from: a combination of active equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// `(label of active equation, weight)` pairs with nonzero weight.
    pub terms: Vec<(String, f64)>,
    /// False when the `y`-independence was only verified numerically.
    pub symbolic: bool,
}

#[derive(Debug, Clone)]
pub struct BaseConstraint {
    pub field: ScalarField,
    pub level: Option<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct Level {
    pub index: usize,
    /// Number of active equations considered.
    pub active: usize,
    /// Rank of the active equations' `y`-Jacobian.
    pub fiber_rank: usize,
    /// Labels of the rows chosen to determine fibers.
    pub determining: Vec<String>,
    /// Fiber indices determined for the first time at this level.
    pub newly_determined: Vec<usize>,
    /// Indices into [`ConstraintLadder::base_constraints`] added here.
    pub new_constraints: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ConstraintLadder {
    pub levels: Vec<Level>,
    pub base_constraints: Vec<BaseConstraint>,
    /// Final determining rows (fields over the total space).
    pub determining: Vec<ScalarField>,
    pub determining_labels: Vec<String>,
    /// Fiber indices determined by the final block.
    pub determined_fibers: Vec<usize>,
    pub gauge_fibers: Vec<usize>,
    pub stabilized_at: usize,
    /// Seed after projection onto the final manifold, as `x` then `y`.
    pub seed: Vec<f64>,
    /// Dimension of the final manifold in the base.
    pub final_dimension: usize,
}

impl ConstraintLadder {
    pub fn constraint_fields(&self) -> Vec<ScalarField> {
        self.base_constraints.iter().map(|c| c.field.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LadderOptions {
    pub rank_tol: f64,
    pub newton: NewtonOptions,
    pub proj_tol: f64,
    /// Base constraints imposed before the first level.
    pub initial_constraints: Vec<ScalarField>,
}

impl Default for LadderOptions {
    fn default() -> Self {
        LadderOptions {
            rank_tol: DEFAULT_RANK_TOL,
            newton: NewtonOptions::default(),
            proj_tol: PROJ_TOL,
            initial_constraints: Vec::new(),
        }
    }
}

struct Active {
    field: ScalarField,
    label: String,
}

fn jacobian_at(fields: &[ScalarField], cols: &[usize], z: &[f64]) -> Result<DMatrix<f64>, ExprError> {
    let mut m = DMatrix::zeros(fields.len(), cols.len());
    for (i, f) in fields.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            m[(i, j)] = f.diff_at(c).eval(z)?;
        }
    }
    Ok(m)
}

/// Minimum-norm Newton on `fields(z) = 0` over the coordinates `cols` of `z`,
/// with `jac` the Jacobian of `fields` with respect to `cols`. Returns the
/// final residual; stops when the residual or the step vanishes.
fn newton_project(
    fields: &[ScalarField],
    jac: &FieldMatrix,
    cols: &[usize],
    z: &mut [f64],
    opts: &NewtonOptions,
) -> Result<f64, ExprError> {
    let mut residual = inf_norm(&eval_all(fields, z)?);
    if fields.is_empty() || cols.is_empty() {
        return Ok(residual);
    }
    for _ in 0..opts.max_iter {
        if residual <= opts.tol {
            break;
        }
        let r = DVector::from_vec(eval_all(fields, z)?);
        let j = jac.eval(z)?;
        let step = linalg::min_norm_solve(&j, &(-r), opts.rank_tol);
        if step.amax() == 0.0 {
            break;
        }
        for (k, &c) in cols.iter().enumerate() {
            z[c] += step[k];
        }
        residual = inf_norm(&eval_all(fields, z)?);
        let scale = 1.0 + cols.iter().map(|&c| z[c].abs()).fold(0.0, f64::max);
        if step.amax() <= 1e-15 * scale {
            break;
        }
    }
    Ok(residual)
}

fn newton_symbolic(
    fields: &[ScalarField],
    cols: &[usize],
    z: &mut [f64],
    opts: &NewtonOptions,
) -> Result<f64, ExprError> {
    let Some(first) = fields.first() else {
        return Ok(0.0);
    };
    let jac = FieldMatrix::jacobian(fields, cols, first.space());
    newton_project(fields, &jac, cols, z, opts)
}

/// Columns of `j` (in `preferred` order) forming a maximal independent set.
fn pick_columns(j: &DMatrix<f64>, preferred: &[usize], rank_tol: f64, count: usize) -> Vec<usize> {
    let permuted = DMatrix::from_fn(preferred.len(), j.nrows(), |r, c| j[(c, preferred[r])]);
    let mut picked: Vec<usize> = linalg::independent_rows(&permuted, rank_tol, count)
        .into_iter()
        .map(|i| preferred[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Runs the constraint ladder from `seed = (x₀, y₀)`.
pub fn run_ladder(
    dae: &SemiExplicitDAE,
    seed: &[f64],
    opts: &LadderOptions,
) -> Result<ConstraintLadder, ReductionError> {
    let fib = &dae.fib;
    let n = fib.n_base();
    let k = fib.n_fiber();
    if seed.len() != n + k {
        return Err(ReductionError::PointLength {
            expected: n + k,
            got: seed.len(),
        });
    }
    let space = fib.space().clone();
    let base_cols: Vec<usize> = fib.base_indices().collect();
    let fiber_cols: Vec<usize> = fib.fiber_indices().collect();
    let mut z = seed.to_vec();

    let mut active: Vec<Active> = dae
        .g
        .iter()
        .zip(fib.fiber_names())
        .map(|(g, name)| Active {
            field: g.clone(),
            label: format!("dE/d{}", name),
        })
        .collect();
    let mut base: Vec<BaseConstraint> = Vec::new();
    for (i, c) in opts.initial_constraints.iter().enumerate() {
        let c = c.rebase(&space)?;
        active.push(Active {
            field: dae.lie_derivative(&c),
            label: format!("L_f({})", c),
        });
        base.push(BaseConstraint {
            field: c,
            level: None,
            provenance: Provenance {
                terms: vec![(format!("initial[{}]", i), 1.0)],
                symbolic: true,
            },
        });
    }

    let base_fields = |base: &[BaseConstraint]| base.iter().map(|b| b.field.clone()).collect::<Vec<_>>();
    let project_base = |base: &[BaseConstraint], z: &mut Vec<f64>| -> Result<(), ReductionError> {
        let fields = base_fields(base);
        let residual = newton_symbolic(&fields, &base_cols, z, &opts.newton)?;
        if residual > opts.proj_tol {
            return Err(ReductionError::EmptyFinalManifold {
                reason: format!("projection onto the base constraints stalls at residual {:e}", residual),
            });
        }
        Ok(())
    };

    project_base(&base, &mut z)?;
    {
        let pool: Vec<ScalarField> = active.iter().map(|a| a.field.clone()).collect();
        newton_symbolic(&pool, &fiber_cols, &mut z, &opts.newton)?;
    }

    let cap = n + k + 1;
    let mut levels: Vec<Level> = Vec::new();
    let mut determined_once: Vec<bool> = vec![false; k];
    let mut level = 0usize;
    loop {
        if level > cap {
            return Err(ReductionError::LadderDiverged { levels: level });
        }
        let pool: Vec<ScalarField> = active.iter().map(|a| a.field.clone()).collect();
        let jy = jacobian_at(&pool, &fiber_cols, &z)?;
        let r = linalg::rank(&jy, opts.rank_tol);
        let jnorm = if jy.is_empty() { 0.0 } else { jy.norm() };

        // Determining block and the fibers it fixes.
        let det_rows = linalg::independent_rows(&jy, opts.rank_tol, r);
        let det_fields: Vec<ScalarField> = det_rows.iter().map(|&i| pool[i].clone()).collect();
        let det_labels: Vec<String> = det_rows.iter().map(|&i| active[i].label.clone()).collect();
        let det_j = DMatrix::from_fn(det_rows.len(), k, |a, b| jy[(det_rows[a], b)]);
        let preferred: Vec<usize> = (0..k)
            .filter(|&a| determined_once[a])
            .chain((0..k).filter(|&a| !determined_once[a]))
            .collect();
        let det_cols = pick_columns(&det_j, &preferred, opts.rank_tol, r);
        let newly: Vec<usize> = det_cols.iter().copied().filter(|&a| !determined_once[a]).collect();
        for &a in &det_cols {
            determined_once[a] = true;
        }

        // Combinations free of y.
        let mut new_idx = Vec::new();
        if pool.len() > r {
            let w = linalg::left_null_space(&jy, opts.rank_tol);
            let w = linalg::rref(&w.transpose(), 1e-12);
            for row in 0..w.nrows() {
                let weights: Vec<(usize, f64)> =
                    (0..w.ncols()).filter(|&i| w[(row, i)] != 0.0).map(|i| (i, w[(row, i)])).collect();
                if weights.is_empty() {
                    continue;
                }
                let terms: Vec<ScalarField> = weights.iter().map(|&(i, wt)| pool[i].scale(wt)).collect();
                let cand = ScalarField::sum(&terms, &space).normalized();
                if cand.is_zero() {
                    continue;
                }
                if let Some(v) = cand.as_constant() {
                    return Err(ReductionError::EmptyFinalManifold {
                        reason: format!("derived constraint reduces to {} = 0", v),
                    });
                }
                let gy: Vec<f64> = fiber_cols
                    .iter()
                    .map(|&c| cand.diff_at(c).eval(&z))
                    .collect::<Result<_, _>>()?;
                if inf_norm(&gy) > FIBER_FREE_FACTOR * (1.0 + jnorm) {
                    continue;
                }
                let symbolic = !fiber_cols.iter().any(|&c| cand.depends_on(c));
                // Skip combinations already implied by the known constraints.
                let mut fields = base_fields(&base);
                let before = linalg::rank(&jacobian_at(&fields, &base_cols, &z)?, opts.rank_tol);
                fields.push(cand.clone());
                let after = linalg::rank(&jacobian_at(&fields, &base_cols, &z)?, opts.rank_tol);
                if after == before && cand.eval(&z)?.abs() <= M0_TOL {
                    continue;
                }
                new_idx.push(base.len());
                base.push(BaseConstraint {
                    field: cand,
                    level: Some(level),
                    provenance: Provenance {
                        terms: weights.iter().map(|&(i, wt)| (active[i].label.clone(), wt)).collect(),
                        symbolic,
                    },
                });
            }
        }

        levels.push(Level {
            index: level,
            active: pool.len(),
            fiber_rank: r,
            determining: det_labels.clone(),
            newly_determined: newly,
            new_constraints: new_idx.clone(),
        });

        if new_idx.is_empty() {
            let det_cols_z: Vec<usize> = det_cols.iter().map(|&a| n + a).collect();
            let residual = newton_symbolic(&det_fields, &det_cols_z, &mut z, &opts.newton)?;
            if residual > M0_TOL {
                return Err(ReductionError::EmptyFinalManifold {
                    reason: format!("determining equations stall at residual {:e}", residual),
                });
            }
            let fields = base_fields(&base);
            let rank_c = linalg::rank(&jacobian_at(&fields, &base_cols, &z)?, opts.rank_tol);
            let gauge: Vec<usize> = (0..k).filter(|a| !det_cols.contains(a)).collect();
            return Ok(ConstraintLadder {
                levels,
                base_constraints: base,
                determining: det_fields,
                determining_labels: det_labels,
                determined_fibers: det_cols,
                gauge_fibers: gauge,
                stabilized_at: level,
                seed: z,
                final_dimension: n - rank_c,
            });
        }

        for &i in &new_idx {
            let c = base[i].field.clone();
            active.push(Active {
                field: dae.lie_derivative(&c),
                label: format!("L_f({})", c),
            });
        }
        project_base(&base, &mut z)?;
        let det_cols_z: Vec<usize> = det_cols.iter().map(|&a| n + a).collect();
        newton_symbolic(&det_fields, &det_cols_z, &mut z, &opts.newton)?;
        level += 1;
    }
}

/// Index-1 system on the final manifold.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub dae: SemiExplicitDAE,
    pub ladder: ConstraintLadder,
    /// Values of all fibers used for gauge fibers; length `k`.
    pub gauge_values: Vec<f64>,
    pub newton: NewtonOptions,
    pub proj_tol: f64,
    det_cols: Vec<usize>,
    det_jac: FieldMatrix,
    constraints: Vec<ScalarField>,
    constraint_jac: FieldMatrix,
    lie: Vec<ScalarField>,
}

/// Packages a stabilized ladder. `gauge_values` maps gauge fiber indices to
/// fixed values; unlisted gauge fibers are 0.
pub fn reduce(
    ladder: ConstraintLadder,
    dae: SemiExplicitDAE,
    gauge_values: &[(usize, f64)],
) -> Result<ReducedSystem, ReductionError> {
    let k = dae.n_fiber();
    let n = dae.n_base();
    let space = dae.fib.space().clone();
    let mut values = vec![0.0; k];
    for &(i, v) in gauge_values {
        if ladder.gauge_fibers.contains(&i) {
            values[i] = v;
        }
    }
    let det_cols: Vec<usize> = ladder.determined_fibers.iter().map(|&a| n + a).collect();
    let det_jac = FieldMatrix::jacobian(&ladder.determining, &det_cols, &space);
    let constraints = ladder.constraint_fields();
    let base_cols: Vec<usize> = (0..n).collect();
    let constraint_jac = FieldMatrix::jacobian(&constraints, &base_cols, &space);
    let lie = constraints.iter().map(|c| dae.lie_derivative(c)).collect();
    let rs = ReducedSystem {
        dae,
        ladder,
        gauge_values: values,
        newton: NewtonOptions::default(),
        proj_tol: PROJ_TOL,
        det_cols,
        det_jac,
        constraints,
        constraint_jac,
        lie,
    };
    rs.check_determining_block(&rs.ladder.seed)?;
    Ok(rs)
}

impl ReducedSystem {
    pub fn n_base(&self) -> usize {
        self.dae.n_base()
    }

    pub fn n_fiber(&self) -> usize {
        self.dae.n_fiber()
    }

    pub fn base_constraints(&self) -> &[ScalarField] {
        &self.constraints
    }

    /// Rank of the determining block's Jacobian in the determined fibers.
    pub fn determining_rank(&self, z: &[f64]) -> Result<usize, ReductionError> {
        Ok(linalg::rank(&self.det_jac.eval(z)?, self.newton.rank_tol))
    }

    /// Rank of the base constraints' gradients.
    pub fn constraint_rank(&self, z: &[f64]) -> Result<usize, ReductionError> {
        Ok(linalg::rank(&self.constraint_jac.eval(z)?, self.newton.rank_tol))
    }

    pub fn check_determining_block(&self, z: &[f64]) -> Result<(), ReductionError> {
        let rank = self.determining_rank(z)?;
        let expected = self.det_cols.len();
        if rank != expected || rank != self.ladder.determining.len() {
            return Err(ReductionError::SingularDeterminingBlock { rank, expected });
        }
        Ok(())
    }

    /// Solves the determined fibers at base point `x`, starting from `y_guess`;
    /// gauge fibers take their fixed values.
    pub fn solve_fibers(&self, x: &[f64], y_guess: &[f64]) -> Result<Vec<f64>, ReductionError> {
        let n = self.n_base();
        let mut z: Vec<f64> = x.iter().chain(y_guess).copied().collect();
        for &a in &self.ladder.gauge_fibers {
            z[n + a] = self.gauge_values[a];
        }
        let residual = newton_project(&self.ladder.determining, &self.det_jac, &self.det_cols, &mut z, &self.newton)?;
        if residual > self.newton.tol.max(1e-10) {
            self.check_determining_block(&z)?;
            return Err(ReductionError::NewtonFailure { residual });
        }
        Ok(z[n..].to_vec())
    }

    /// Min-norm Newton projection of `x` onto the final base constraints.
    pub fn project_base(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, ReductionError> {
        let n = self.n_base();
        let mut z: Vec<f64> = x.iter().chain(y).copied().collect();
        let cols: Vec<usize> = (0..n).collect();
        let residual = newton_project(&self.constraints, &self.constraint_jac, &cols, &mut z, &self.newton)?;
        if residual > self.proj_tol {
            return Err(ReductionError::NewtonFailure { residual });
        }
        z.truncate(n);
        Ok(z)
    }

    /// Largest base-constraint violation at `z`.
    pub fn constraint_residual(&self, z: &[f64]) -> Result<f64, ReductionError> {
        Ok(inf_norm(&eval_all(&self.constraints, z)?))
    }

    /// Projects onto the final manifold and solves the fibers there.
    pub fn project(&self, x: &[f64], y_guess: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ReductionError> {
        let x = self.project_base(x, y_guess)?;
        let y = self.solve_fibers(&x, y_guess)?;
        Ok((x, y))
    }

    /// `(ẋ, y)` at base point `x`.
    pub fn vector_field(&self, x: &[f64], y_guess: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ReductionError> {
        let y = self.solve_fibers(x, y_guess)?;
        let z: Vec<f64> = x.iter().chain(&y).copied().collect();
        Ok((self.dae.eval_f(&z)?, y))
    }

    /// Largest `|∇c · f|` over the final base constraints at `z = (x, y)`.
    pub fn tangency_residual(&self, z: &[f64]) -> Result<f64, ReductionError> {
        Ok(inf_norm(&eval_all(&self.lie, z)?))
    }
}

/// Largest `|∇c · f|` over the ladder's base constraints at `z`.
pub fn tangency_residual(dae: &SemiExplicitDAE, ladder: &ConstraintLadder, z: &[f64]) -> Result<f64, ReductionError> {
    let mut worst: f64 = 0.0;
    for c in &ladder.base_constraints {
        worst = worst.max(dae.lie_derivative(&c.field).eval(z)?.abs());
    }
    Ok(worst)
}
