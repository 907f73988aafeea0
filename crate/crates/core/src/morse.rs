//! Fibered charts and Morse families.
//!
//! The submersion is the coordinate projection `(x, y) ↦ x`. Points of the
//! total space are stored as `x` followed by `y`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{ExprError, FieldMatrix, ScalarField, VarSpace};
use crate::linalg;

/// Default fiber-Newton tolerance on `‖∂E/∂y‖∞`.
pub const NEWTON_TOL: f64 = 1e-12;

/// Membership tolerance for the critical set of `E` along the fibers.
pub const M0_TOL: f64 = 1e-8;

pub const MAX_NEWTON: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MorseError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("base and fiber variables overlap: `{0}`")]
    OverlappingNames(String),
    #[error("point has {got} coordinates, expected {expected}")]
    PointLength { expected: usize, got: usize },
    #[error("no samples to classify")]
    EmptySampleSet,
    #[error("fiber Newton did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence {
        y: Vec<f64>,
        residual: f64,
        iterations: usize,
    },
    #[error("point is off the fiber-critical set: residual {residual:e}")]
    NotOnM0 { residual: f64 },
}

/// Base and fiber coordinate names of a fibered chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Fibration {
    space: VarSpace,
    n_base: usize,
}

impl Fibration {
    pub fn new<S: AsRef<str>>(base: &[S], fiber: &[S]) -> Result<Self, MorseError> {
        let names: Vec<&str> = base.iter().chain(fiber).map(|s| s.as_ref()).collect();
        let space = VarSpace::new(&names).map_err(|e| match e {
            ExprError::DuplicateVariable(n) => MorseError::OverlappingNames(n),
            other => MorseError::Expr(other),
        })?;
        Ok(Fibration {
            space,
            n_base: base.len(),
        })
    }

    /// Space of all coordinates, base first.
    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn n_fiber(&self) -> usize {
        self.space.len() - self.n_base
    }

    pub fn base_names(&self) -> &[String] {
        &self.space.names()[..self.n_base]
    }

    pub fn fiber_names(&self) -> &[String] {
        &self.space.names()[self.n_base..]
    }

    pub fn base_indices(&self) -> std::ops::Range<usize> {
        0..self.n_base
    }

    pub fn fiber_indices(&self) -> std::ops::Range<usize> {
        self.n_base..self.space.len()
    }

    pub fn join(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, MorseError> {
        if x.len() != self.n_base {
            return Err(MorseError::PointLength {
                expected: self.n_base,
                got: x.len(),
            });
        }
        if y.len() != self.n_fiber() {
            return Err(MorseError::PointLength {
                expected: self.n_fiber(),
                got: y.len(),
            });
        }
        Ok(x.iter().chain(y).copied().collect())
    }
}

/// Morse / weak Morse verdict over a sample set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    Morse,
    WeakMorse(usize),
    Irregular { ranks: Vec<usize> },
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Morse => write!(f, "Morse"),
            Classification::WeakMorse(r) => write!(f, "WeakMorse({})", r),
            Classification::Irregular { .. } => write!(f, "Irregular"),
        }
    }
}

/// A point of the generated Lagrangian submanifold together with its lift.
#[derive(Debug, Clone, PartialEq)]
pub struct SEPoint {
    pub x: Vec<f64>,
    pub y_star: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub rank_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: NEWTON_TOL,
            max_iter: MAX_NEWTON,
            rank_tol: linalg::DEFAULT_RANK_TOL,
        }
    }
}

/// An energy function on a fibered chart.
#[derive(Debug, Clone)]
pub struct MorseFamily {
    fib: Fibration,
    energy: ScalarField,
    grad_x: Vec<ScalarField>,
    grad_y: Vec<ScalarField>,
    morse: FieldMatrix,
    hess_yy: FieldMatrix,
}

impl MorseFamily {
    /// `energy` may be expressed over any space whose names all appear in the
    /// fibration.
    pub fn new(fib: Fibration, energy: &ScalarField) -> Result<Self, MorseError> {
        let space = fib.space().clone();
        let energy = energy.rebase(&space)?;
        let grad_x: Vec<ScalarField> = fib.base_indices().map(|i| energy.diff_at(i)).collect();
        let grad_y: Vec<ScalarField> = fib.fiber_indices().map(|i| energy.diff_at(i)).collect();
        let all: Vec<usize> = (0..space.len()).collect();
        let fibers: Vec<usize> = fib.fiber_indices().collect();
        let morse = FieldMatrix::jacobian(&grad_y, &all, &space);
        let hess_yy = FieldMatrix::jacobian(&grad_y, &fibers, &space);
        Ok(MorseFamily {
            fib,
            energy,
            grad_x,
            grad_y,
            morse,
            hess_yy,
        })
    }

    pub fn fibration(&self) -> &Fibration {
        &self.fib
    }

    pub fn energy(&self) -> &ScalarField {
        &self.energy
    }

    /// `∂E/∂x` as fields over the total space.
    pub fn grad_base(&self) -> &[ScalarField] {
        &self.grad_x
    }

    /// `∂E/∂y` as fields over the total space.
    pub fn grad_fiber(&self) -> &[ScalarField] {
        &self.grad_y
    }

    fn check_len(&self, point: &[f64]) -> Result<(), MorseError> {
        let n = self.fib.space().len();
        if point.len() != n {
            return Err(MorseError::PointLength {
                expected: n,
                got: point.len(),
            });
        }
        Ok(())
    }

    /// `k x (N+k)` matrix `(∂²E/∂y∂x | ∂²E/∂y∂y)`.
    pub fn morse_matrix(&self, point: &[f64]) -> Result<DMatrix<f64>, MorseError> {
        self.check_len(point)?;
        Ok(self.morse.eval(point)?)
    }

    pub fn morse_rank(&self, point: &[f64], rank_tol: f64) -> Result<usize, MorseError> {
        Ok(linalg::rank(&self.morse_matrix(point)?, rank_tol))
    }

    /// `‖∂E/∂y‖∞` at a total-space point.
    pub fn fiber_residual(&self, point: &[f64]) -> Result<f64, MorseError> {
        self.check_len(point)?;
        let mut r: f64 = 0.0;
        for g in &self.grad_y {
            r = r.max(g.eval(point)?.abs());
        }
        Ok(r)
    }

    /// Verdict from the Morse-matrix ranks at `samples`, each on the critical set.
    pub fn classify(&self, samples: &[Vec<f64>], rank_tol: f64) -> Result<Classification, MorseError> {
        if samples.is_empty() {
            return Err(MorseError::EmptySampleSet);
        }
        let k = self.fib.n_fiber();
        let mut ranks = Vec::with_capacity(samples.len());
        for s in samples {
            let residual = self.fiber_residual(s)?;
            if residual > M0_TOL {
                return Err(MorseError::NotOnM0 { residual });
            }
            ranks.push(self.morse_rank(s, rank_tol)?);
        }
        let first = ranks[0];
        Ok(if ranks.iter().any(|&r| r != first) {
            Classification::Irregular { ranks }
        } else if first == k {
            Classification::Morse
        } else {
            Classification::WeakMorse(first)
        })
    }

    /// Newton on `∂E/∂y(x, ·) = 0` from `y0` with minimum-norm steps.
    pub fn solve_fiber(&self, x: &[f64], y0: &[f64], opts: &NewtonOptions) -> Result<Vec<f64>, MorseError> {
        let mut point = self.fib.join(x, y0)?;
        let n = self.fib.n_base();
        let k = self.fib.n_fiber();
        let mut residual = f64::INFINITY;
        for iter in 0..=opts.max_iter {
            let g = DVector::from_vec(
                self.grad_y
                    .iter()
                    .map(|f| f.eval(&point))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            residual = if k == 0 { 0.0 } else { g.amax() };
            if residual <= opts.tol {
                return Ok(point[n..].to_vec());
            }
            if iter == opts.max_iter {
                break;
            }
            let jac = self.hess_yy.eval(&point)?;
            let step = linalg::min_norm_solve(&jac, &(-g), opts.rank_tol);
            if step.amax() == 0.0 {
                return Err(MorseError::NoConvergence {
                    y: point[n..].to_vec(),
                    residual,
                    iterations: iter,
                });
            }
            for a in 0..k {
                point[n + a] += step[a];
            }
        }
        Err(MorseError::NoConvergence {
            y: point[n..].to_vec(),
            residual,
            iterations: opts.max_iter,
        })
    }

    /// Fiber-critical point near `point`: Newton on `∂E/∂y = 0` over the whole
    /// total space with minimum-norm steps. Used when `x` itself is not in
    /// the image of the critical set.
    pub fn project_to_critical_set(&self, point: &[f64], opts: &NewtonOptions) -> Result<Vec<f64>, MorseError> {
        let total = self.fib.space().len();
        if point.len() != total {
            return Err(MorseError::PointLength {
                expected: total,
                got: point.len(),
            });
        }
        let n = self.fib.n_base();
        let mut z = point.to_vec();
        let mut residual = f64::INFINITY;
        for iter in 0..=opts.max_iter {
            let g = DVector::from_vec(self.grad_y.iter().map(|f| f.eval(&z)).collect::<Result<Vec<_>, _>>()?);
            residual = if g.is_empty() { 0.0 } else { g.amax() };
            if residual <= opts.tol {
                return Ok(z);
            }
            if iter == opts.max_iter {
                break;
            }
            let step = linalg::min_norm_solve(&self.morse_matrix(&z)?, &(-g), opts.rank_tol);
            if step.amax() == 0.0 {
                break;
            }
            for (zi, s) in z.iter_mut().zip(step.iter()) {
                *zi += s;
            }
        }
        Err(MorseError::NoConvergence {
            y: z[n..].to_vec(),
            residual,
            iterations: opts.max_iter,
        })
    }

    /// The covector `∂E/∂x` at a fiber-critical point.
    pub fn se_point(&self, x: &[f64], y_star: &[f64]) -> Result<SEPoint, MorseError> {
        let point = self.fib.join(x, y_star)?;
        let residual = self.fiber_residual(&point)?;
        if residual > M0_TOL {
            return Err(MorseError::NotOnM0 { residual });
        }
        let mu = self
            .grad_x
            .iter()
            .map(|f| f.eval(&point))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SEPoint {
            x: x.to_vec(),
            y_star: y_star.to_vec(),
            mu,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_RANK_TOL;

    fn family(base: &[&str], fiber: &[&str], e: &str) -> MorseFamily {
        let fib = Fibration::new(base, fiber).unwrap();
        let energy = ScalarField::parse(e, fib.space()).unwrap();
        MorseFamily::new(fib, &energy).unwrap()
    }

    #[test]
    fn morse_matrix_of_lagrangian_energy() {
        let mf = family(&["q", "p"], &["v"], "p*v - v^2/2");
        let m = mf.morse_matrix(&[0.3, 0.7, 0.7]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(1, 3, &[0.0, 1.0, -1.0]));
        assert_eq!(mf.classify(&[vec![0.3, 0.7, 0.7]], DEFAULT_RANK_TOL).unwrap(), Classification::Morse);
    }

    #[test]
    fn pullback_is_weak_morse_zero() {
        let mf = family(&["q", "p"], &["v"], "q^2 + p");
        let m = mf.morse_matrix(&[1.0, 2.0, 5.0]).unwrap();
        assert_eq!(m.amax(), 0.0);
        let c = mf.classify(&[vec![1.0, 2.0, 5.0], vec![0.0, 0.0, 0.0]], DEFAULT_RANK_TOL).unwrap();
        assert_eq!(c, Classification::WeakMorse(0));
        assert_eq!(c.to_string(), "WeakMorse(0)");
        let y = mf.solve_fiber(&[1.0, 2.0], &[4.5], &NewtonOptions::default()).unwrap();
        assert_eq!(y, vec![4.5]);
        let se = mf.se_point(&[1.0, 2.0], &y).unwrap();
        assert_eq!(se.mu, vec![2.0, 1.0]);
    }

    #[test]
    fn degenerate_lagrangian_has_identity_block() {
        let mf = family(&["q1", "q2", "p1", "p2"], &["v1", "v2"], "p1*v1 + p2*v2 - v1^2/2 - q2*v1");
        assert_eq!(mf.morse_rank(&[0.0, 1.0, 2.0, 0.0, 1.0, 0.5], DEFAULT_RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn cubic_and_quartic_energies_stay_morse() {
        let cubic = family(&["q", "p"], &["v"], "p*v - v^3/3");
        let samples = vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]];
        assert_eq!(cubic.classify(&samples, DEFAULT_RANK_TOL).unwrap(), Classification::Morse);
        let quartic = family(&["q", "p"], &["v"], "p*v - v^4/4");
        let samples = vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]];
        assert_eq!(quartic.classify(&samples, DEFAULT_RANK_TOL).unwrap(), Classification::Morse);
    }

    #[test]
    fn fiber_newton_linear_case() {
        let mf = family(&["q", "p"], &["v"], "p*v - v^2/2");
        let opts = NewtonOptions::default();
        assert_eq!(mf.solve_fiber(&[0.0, 2.0], &[0.0], &opts).unwrap(), vec![2.0]);
        assert_eq!(mf.solve_fiber(&[0.0, 2.0], &[-17.0], &opts).unwrap(), vec![2.0]);
    }

    #[test]
    fn se_point_of_lagrangian() {
        let mf = family(&["q", "p"], &["v"], "p*v - v^2/2");
        let se = mf.se_point(&[0.0, 2.0], &[2.0]).unwrap();
        assert_eq!(se.mu, vec![0.0, 2.0]);
        assert!(matches!(mf.se_point(&[0.0, 2.0], &[1.0]), Err(MorseError::NotOnM0 { .. })));
    }

    #[test]
    fn empty_samples_and_overlap() {
        let mf = family(&["q"], &["v"], "v^2");
        assert_eq!(mf.classify(&[], DEFAULT_RANK_TOL), Err(MorseError::EmptySampleSet));
        assert!(matches!(Fibration::new(&["q"], &["q"]), Err(MorseError::OverlappingNames(_))));
    }
}
