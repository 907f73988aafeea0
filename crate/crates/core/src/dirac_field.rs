//! Point-dependent Dirac structures over a base chart.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conventions;
use crate::expr::{ExprError, FieldMatrix, ScalarField, VarSpace};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::linear_dirac::{DiracError, LinearDirac, LinearMap};

/// Tolerance on `C^D_{AB} + C^D_{BA}` at evaluation points.
pub const ANTISYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Dirac(DiracError),
    #[error("matrix field is not skew at this point (deviation {deviation:e})")]
    NonSkewAtPoint { deviation: f64 },
    #[error("structure functions are not antisymmetric in the lower indices (deviation {deviation:e})")]
    NonAntisymmetric { deviation: f64 },
    #[error("map Jacobian has rank {rank}, neither full row nor full column rank ({rows}x{cols})")]
    RankDeficientMap { rank: usize, rows: usize, cols: usize },
    #[error("Dirac structure is not the graph of a bivector")]
    NotAGraph,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl From<DiracError> for FieldError {
    fn from(e: DiracError) -> Self {
        match e {
            DiracError::NotSkew { deviation } => FieldError::NonSkewAtPoint { deviation },
            DiracError::NotAGraph => FieldError::NotAGraph,
            other => FieldError::Dirac(other),
        }
    }
}

/// Structure functions `C^D_{AB}` stored densely as `[d][a][b]`.
#[derive(Debug, Clone)]
pub struct StructureFunctions {
    n: usize,
    entries: Vec<ScalarField>,
}

impl StructureFunctions {
    pub fn new(n: usize, entries: Vec<ScalarField>) -> Result<Self, FieldError> {
        if entries.len() != n * n * n {
            return Err(FieldError::Shape(format!(
                "{} structure functions for dimension {}",
                entries.len(),
                n
            )));
        }
        Ok(StructureFunctions { n, entries })
    }

    /// Constants `c[d][a][b] = c^D_{AB}`.
    pub fn constant(c: &[Vec<Vec<f64>>], space: &VarSpace) -> Result<Self, FieldError> {
        let n = c.len();
        let mut entries = Vec::with_capacity(n * n * n);
        for d in c {
            if d.len() != n || d.iter().any(|row| row.len() != n) {
                return Err(FieldError::Shape("structure constants must be n x n x n".into()));
            }
            for row in d {
                for &v in row {
                    entries.push(ScalarField::constant(v, space));
                }
            }
        }
        Ok(StructureFunctions { n, entries })
    }

    pub fn zero(n: usize, space: &VarSpace) -> Self {
        StructureFunctions {
            n,
            entries: vec![ScalarField::zero(space); n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, d: usize, a: usize, b: usize) -> &ScalarField {
        &self.entries[(d * self.n + a) * self.n + b]
    }

    pub fn scaled(&self, k: f64) -> Self {
        StructureFunctions {
            n: self.n,
            entries: self.entries.iter().map(|e| e.scale(k)).collect(),
        }
    }

    pub fn rebase(&self, space: &VarSpace) -> Result<Self, ExprError> {
        Ok(StructureFunctions {
            n: self.n,
            entries: self.entries.iter().map(|e| e.rebase(space)).collect::<Result<_, _>>()?,
        })
    }

    /// Largest `|C^D_{AB} + C^D_{BA}|` at `point`.
    pub fn antisymmetry_defect(&self, point: &[f64]) -> Result<f64, ExprError> {
        let mut worst: f64 = 0.0;
        for d in 0..self.n {
            for a in 0..self.n {
                for b in a..self.n {
                    let s = self.get(d, a, b).eval(point)? + self.get(d, b, a).eval(point)?;
                    worst = worst.max(s.abs());
                }
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone)]
pub enum DiracKind {
    /// Canonical structure with the given positions of `q` and `p` in the base.
    CanonicalSymplectic { q: Vec<usize>, p: Vec<usize> },
    TwoForm(FieldMatrix),
    Bivector(FieldMatrix),
    /// Linear almost-Poisson structure on `(q, p)`; `rho` is `m x n_A`.
    AlmostPoissonLinear {
        q: Vec<usize>,
        p: Vec<usize>,
        rho: FieldMatrix,
        c: StructureFunctions,
    },
    /// Backward image of `inner` along `map`, whose components are fields
    /// over this base giving the coordinates of `inner`'s base.
    Backward {
        map: Vec<ScalarField>,
        jacobian: FieldMatrix,
        inner: Box<DiracField>,
    },
}

/// A Dirac structure at every point of a base chart.
#[derive(Debug, Clone)]
pub struct DiracField {
    space: VarSpace,
    kind: DiracKind,
}

impl DiracField {
    /// Canonical structure on a base ordered `(q¹..qⁿ, p₁..pₙ)`.
    pub fn canonical(space: &VarSpace) -> Result<Self, FieldError> {
        let n2 = space.len();
        if n2 % 2 != 0 {
            return Err(FieldError::Shape(format!("canonical chart of odd dimension {}", n2)));
        }
        let n = n2 / 2;
        Ok(DiracField {
            space: space.clone(),
            kind: DiracKind::CanonicalSymplectic {
                q: (0..n).collect(),
                p: (n..n2).collect(),
            },
        })
    }

    pub fn two_form(omega: FieldMatrix) -> Result<Self, FieldError> {
        Self::square_check(&omega)?;
        Ok(DiracField {
            space: omega.space().clone(),
            kind: DiracKind::TwoForm(omega),
        })
    }

    pub fn bivector(lambda: FieldMatrix) -> Result<Self, FieldError> {
        Self::square_check(&lambda)?;
        Ok(DiracField {
            space: lambda.space().clone(),
            kind: DiracKind::Bivector(lambda),
        })
    }

    fn square_check(m: &FieldMatrix) -> Result<(), FieldError> {
        let (r, c) = m.shape();
        if r != c || r != m.space().len() {
            return Err(FieldError::Shape(format!(
                "{}x{} matrix over a {}-dimensional base",
                r,
                c,
                m.space().len()
            )));
        }
        Ok(())
    }

    /// Linear almost-Poisson structure on a base ordered `(q, p)`.
    pub fn almost_poisson(
        space: &VarSpace,
        n_q: usize,
        rho: FieldMatrix,
        c: StructureFunctions,
    ) -> Result<Self, FieldError> {
        let n_p = space.len().checked_sub(n_q).ok_or_else(|| {
            FieldError::Shape(format!("{} q coordinates on a {}-dimensional base", n_q, space.len()))
        })?;
        if rho.shape() != (n_q, n_p) || c.dim() != n_p {
            return Err(FieldError::Shape(format!(
                "anchor {:?} and structure functions of dimension {} for m = {}, n_A = {}",
                rho.shape(),
                c.dim(),
                n_q,
                n_p
            )));
        }
        let rho = rho.rebase(space)?;
        let c = c.rebase(space)?;
        Ok(DiracField {
            space: space.clone(),
            kind: DiracKind::AlmostPoissonLinear {
                q: (0..n_q).collect(),
                p: (n_q..space.len()).collect(),
                rho,
                c,
            },
        })
    }

    /// Backward image of `inner` along `map: base → inner base`.
    pub fn backward(space: &VarSpace, map: Vec<ScalarField>, inner: DiracField) -> Result<Self, FieldError> {
        if map.len() != inner.dim() {
            return Err(FieldError::Shape(format!(
                "map has {} components, inner base has dimension {}",
                map.len(),
                inner.dim()
            )));
        }
        let map = map.iter().map(|f| f.rebase(space)).collect::<Result<Vec<_>, _>>()?;
        let all: Vec<usize> = (0..space.len()).collect();
        let jacobian = FieldMatrix::jacobian(&map, &all, space);
        Ok(DiracField {
            space: space.clone(),
            kind: DiracKind::Backward {
                map,
                jacobian,
                inner: Box::new(inner),
            },
        })
    }

    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn kind(&self) -> &DiracKind {
        &self.kind
    }

    pub fn is_canonical(&self) -> bool {
        matches!(self.kind, DiracKind::CanonicalSymplectic { .. })
    }

    fn check_len(&self, x: &[f64]) -> Result<(), FieldError> {
        if x.len() != self.dim() {
            return Err(FieldError::Shape(format!(
                "point of length {} on a {}-dimensional base",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Symbolic bivector `Λ(x)` when the structure is a bivector graph.
    pub fn bivector_fields(&self) -> Result<FieldMatrix, FieldError> {
        let s = &self.space;
        match &self.kind {
            DiracKind::CanonicalSymplectic { q, p } => {
                let n = q.len();
                let lam = conventions::canonical_bivector(n);
                let blocks: Vec<Vec<ScalarField>> = (0..2 * n)
                    .map(|i| (0..2 * n).map(|j| ScalarField::constant(lam[(i, j)], s)).collect())
                    .collect();
                Ok(self.place(q, p, blocks))
            }
            DiracKind::Bivector(m) => Ok(m.clone()),
            DiracKind::TwoForm(omega) => {
                if omega.determinant().normalized().is_zero() {
                    return Err(FieldError::NotAGraph);
                }
                Ok(omega.inverse())
            }
            DiracKind::AlmostPoissonLinear { q, p, rho, c } => {
                let n_p = p.len();
                let rho_rows: Vec<Vec<ScalarField>> = (0..q.len())
                    .map(|i| (0..n_p).map(|a| rho.get(i, a).clone()).collect())
                    .collect();
                let cp: Vec<Vec<ScalarField>> = (0..n_p)
                    .map(|a| {
                        (0..n_p)
                            .map(|b| {
                                let terms: Vec<ScalarField> = (0..n_p)
                                    .map(|d| c.get(d, a, b) * &ScalarField::coordinate(p[d], s))
                                    .collect();
                                ScalarField::sum(&terms, s)
                            })
                            .collect()
                    })
                    .collect();
                let blocks = conventions::almost_poisson_blocks(&rho_rows, &cp, &ScalarField::zero(s), |f| -f);
                Ok(self.place(q, p, blocks))
            }
            DiracKind::Backward { .. } => Err(FieldError::NotAGraph),
        }
    }

    /// Scatters blocks given in `(q, p)` order into base order.
    fn place(&self, q: &[usize], p: &[usize], blocks: Vec<Vec<ScalarField>>) -> FieldMatrix {
        let order: Vec<usize> = q.iter().chain(p).copied().collect();
        let mut m = FieldMatrix::zeros(self.dim(), self.dim(), &self.space);
        for (i, row) in blocks.into_iter().enumerate() {
            for (j, f) in row.into_iter().enumerate() {
                m.set(order[i], order[j], f);
            }
        }
        m
    }

    /// The linear Dirac structure at `x`.
    pub fn at(&self, x: &[f64]) -> Result<LinearDirac, FieldError> {
        self.check_len(x)?;
        match &self.kind {
            DiracKind::CanonicalSymplectic { .. } | DiracKind::Bivector(_) => {
                let lam = self.bivector_fields()?.eval(x)?;
                Ok(LinearDirac::from_bivector(&lam)?)
            }
            DiracKind::TwoForm(omega) => Ok(LinearDirac::from_two_form(&omega.eval(x)?)?),
            DiracKind::AlmostPoissonLinear { c, .. } => {
                let deviation = c.antisymmetry_defect(x)?;
                if deviation > ANTISYMMETRY_TOL {
                    return Err(FieldError::NonAntisymmetric { deviation });
                }
                let lam = self.bivector_fields()?.eval(x)?;
                Ok(LinearDirac::from_bivector(&lam)?)
            }
            DiracKind::Backward { map, jacobian, inner } => {
                let y = map.iter().map(|f| f.eval(x)).collect::<Result<Vec<_>, _>>()?;
                let j = jacobian.eval(x)?;
                let rank = linalg::rank(&j, DEFAULT_RANK_TOL);
                if rank != j.nrows() && rank != j.ncols() {
                    return Err(FieldError::RankDeficientMap {
                        rank,
                        rows: j.nrows(),
                        cols: j.ncols(),
                    });
                }
                Ok(inner.at(&y)?.backward(&LinearMap::new(j))?)
            }
        }
    }

    pub fn contains(&self, x: &[f64], v: &[f64], alpha: &[f64], tol: f64) -> Result<bool, FieldError> {
        Ok(self.at(x)?.residual(v, alpha)? <= tol)
    }

    /// The unique `v` with `(v, α)` in the structure at `x`.
    pub fn sharp(&self, x: &[f64], alpha: &[f64]) -> Result<DVector<f64>, FieldError> {
        self.check_len(x)?;
        if alpha.len() != self.dim() {
            return Err(FieldError::Shape(format!("covector of length {}", alpha.len())));
        }
        match &self.kind {
            DiracKind::Backward { .. } => Err(FieldError::NotAGraph),
            DiracKind::TwoForm(_) => Ok(self.at(x)?.sharp(alpha)?),
            _ => {
                self.at(x)?;
                let lam: DMatrix<f64> = self.bivector_fields()?.eval(x)?;
                Ok(lam * DVector::from_column_slice(alpha))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn so3(space: &VarSpace) -> StructureFunctions {
        let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
        let eps = [(0, 1, 2), (1, 2, 0), (2, 0, 1)];
        for &(a, b, d) in &eps {
            c[d][a][b] = 1.0;
            c[d][b][a] = -1.0;
        }
        StructureFunctions::constant(&c, space).unwrap()
    }

    #[test]
    fn canonical_sharp_and_membership() {
        let s = VarSpace::new(&["q", "p"]).unwrap();
        let d = DiracField::canonical(&s).unwrap();
        let v = d.sharp(&[0.3, -0.2], &[1.0, 0.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.0, -1.0]);
        assert!(d.contains(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 1e-14).unwrap());
        // ṗ + α = 1 violates the structure.
        assert!(!d.contains(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], 1e-3).unwrap());
    }

    #[test]
    fn lie_poisson_sharp_is_cross_product() {
        let s = VarSpace::new(&["m1", "m2", "m3"]).unwrap();
        let d = DiracField::almost_poisson(&s, 0, FieldMatrix::zeros(0, 3, &s), so3(&s)).unwrap();
        let mu = [1.0, 2.0, 3.0];
        let v = d.sharp(&mu, &[1.0, 0.0, 0.0]).unwrap();
        // μ × e₁ = (0, 3, −2), the `+ad*` evolution of C = c.
        assert_eq!(v.as_slice(), &[0.0, 3.0, -2.0]);
    }

    #[test]
    fn backward_of_canonical_under_projection() {
        let big = VarSpace::new(&["q", "v", "p"]).unwrap();
        let small = VarSpace::new(&["q", "p"]).unwrap();
        let inner = DiracField::canonical(&small).unwrap();
        let map = vec![
            ScalarField::variable("q", &big).unwrap(),
            ScalarField::variable("p", &big).unwrap(),
        ];
        let d = DiracField::backward(&big, map, inner).unwrap();
        let at = d.at(&[0.1, 0.2, 0.3]).unwrap();
        // (q̇, v̇, ṗ; α, γ, β) = (β, anything, −α; α, 0, β)
        assert!(at.contains(&[2.0, 7.0, -1.0], &[1.0, 0.0, 2.0], 1e-12).unwrap());
        assert!(!at.contains(&[2.0, 7.0, -1.0], &[1.0, 0.5, 2.0], 1e-3).unwrap());
        assert!(matches!(d.sharp(&[0.0; 3], &[0.0; 3]), Err(FieldError::NotAGraph)));
    }

    #[test]
    fn non_antisymmetric_constants_rejected() {
        let s = VarSpace::new(&["m1", "m2"]).unwrap();
        let c = vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![0.0; 2]; 2]];
        let c = StructureFunctions::constant(&c, &s).unwrap();
        let d = DiracField::almost_poisson(&s, 0, FieldMatrix::zeros(0, 2, &s), c).unwrap();
        assert!(matches!(d.at(&[1.0, 1.0]), Err(FieldError::NonAntisymmetric { .. })));
    }
}
