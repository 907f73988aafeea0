//! Linear Dirac structures on `U ⊕ U* = R^n ⊕ R^n`.
//!
//! Elements are stacked as `(u, α)` with the vector part first. The pairing is
//! `⟨α, u'⟩ + ⟨α', u⟩`, i.e. `e1ᵀ P e2` with `P = [[0, I], [I, 0]]`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, DEFAULT_RANK_TOL};

/// Absolute tolerance on pairwise pairings of an orthonormal basis.
pub const ISOTROPY_TOL: f64 = 1e-10;

/// Skewness tolerance for 2-forms and bivectors, relative to `max(1, ‖M‖∞)`.
pub const SKEW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiracError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not skew-symmetric (deviation {deviation:e})")]
    NotSkew { deviation: f64 },
    #[error("subspace is not Lagrangian: rank {rank} for n = {n}, isotropy defect {defect:e}")]
    NotLagrangian { rank: usize, n: usize, defect: f64 },
    #[error("structure is not the graph of a map from covectors to vectors")]
    NotAGraph,
}

/// Symmetric pairing of `(u, α)` and `(u', α')`.
pub fn pairing(e1: &[f64], e2: &[f64]) -> Result<f64, DiracError> {
    if e1.len() != e2.len() {
        return Err(DiracError::DimensionMismatch {
            expected: e1.len(),
            got: e2.len(),
        });
    }
    if e1.len() % 2 != 0 {
        return Err(DiracError::DimensionMismatch {
            expected: e1.len() + 1,
            got: e1.len(),
        });
    }
    let n = e1.len() / 2;
    Ok((0..n).map(|i| e1[n + i] * e2[i] + e2[n + i] * e1[i]).sum())
}

fn pairing_matrix(n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        p[(i, n + i)] = 1.0;
        p[(n + i, i)] = 1.0;
    }
    p
}

/// Nearest exactly Lagrangian subspace to the span of the orthonormal `q`.
///
/// In the coordinates `s = (u + α)/√2`, `d = (u − α)/√2` the pairing is
/// `s·s' − d·d'`, and Lagrangian subspaces are the graphs `d = U s` of
/// orthogonal `U`. Replacing `U` by its polar factor removes the roundoff
/// isotropy defect.
fn snap_to_lagrangian(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.ncols();
    if n == 0 {
        return q.clone();
    }
    let top = q.rows(0, n);
    let bottom = q.rows(n, n);
    let s = &top + &bottom;
    let d = &top - &bottom;
    let Some(s_inv) = s.try_inverse() else {
        return q.clone();
    };
    let svd = (d * s_inv).svd(true, true);
    let (Some(w), Some(vt)) = (svd.u, svd.v_t) else {
        return q.clone();
    };
    let u = w * vt;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut out = DMatrix::zeros(2 * n, n);
    out.view_mut((0, 0), (n, n)).copy_from(&((&eye + &u) * 0.5));
    out.view_mut((n, 0), (n, n)).copy_from(&((&eye - &u) * 0.5));
    out
}

/// Largest pairwise pairing among the orthonormalised columns of `s`.
pub fn isotropy_defect(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows() / 2;
    let q = linalg::column_space(s, DEFAULT_RANK_TOL);
    if q.ncols() == 0 {
        return 0.0;
    }
    (q.transpose() * pairing_matrix(n) * &q).amax()
}

/// True iff the column span of the `2n x k` matrix `s` is Lagrangian.
pub fn is_dirac(s: &DMatrix<f64>) -> bool {
    if s.nrows() % 2 != 0 {
        return false;
    }
    let n = s.nrows() / 2;
    linalg::rank(s, DEFAULT_RANK_TOL) == n && isotropy_defect(s) <= ISOTROPY_TOL
}

fn skew_deviation(m: &DMatrix<f64>) -> f64 {
    let dev = (m + m.transpose()).amax();
    dev / m.amax().max(1.0)
}

/// A linear map `φ: U → V` stored as its `dim V x dim U` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap(DMatrix<f64>);

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        LinearMap(matrix)
    }

    pub fn identity(n: usize) -> Self {
        LinearMap(DMatrix::identity(n, n))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn source_dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.0.nrows()
    }

    /// `self ∘ first`.
    pub fn after(&self, first: &LinearMap) -> LinearMap {
        LinearMap(&self.0 * &first.0)
    }
}

/// A Lagrangian subspace of `R^n ⊕ R^n` with image and kernel representations.
#[derive(Debug, Clone)]
pub struct LinearDirac {
    n: usize,
    image: DMatrix<f64>,
    kernel: DMatrix<f64>,
}

impl LinearDirac {
    /// Builds from a spanning set, verifying dimension and isotropy.
    pub fn from_span(s: &DMatrix<f64>) -> Result<Self, DiracError> {
        if s.nrows() % 2 != 0 {
            return Err(DiracError::DimensionMismatch {
                expected: s.nrows() + 1,
                got: s.nrows(),
            });
        }
        let n = s.nrows() / 2;
        let q = linalg::column_space(s, DEFAULT_RANK_TOL);
        let defect = if q.ncols() == 0 {
            0.0
        } else {
            (q.transpose() * pairing_matrix(n) * &q).amax()
        };
        if q.ncols() != n || defect > ISOTROPY_TOL {
            return Err(DiracError::NotLagrangian {
                rank: q.ncols(),
                n,
                defect,
            });
        }
        let q = snap_to_lagrangian(&q);
        let kernel = (pairing_matrix(n) * &q).transpose();
        Ok(LinearDirac { n, image: q, kernel })
    }

    /// Builds from `{(v, α) : A v + B α = 0}`.
    pub fn from_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self, DiracError> {
        if a.shape() != b.shape() || a.nrows() != a.ncols() {
            return Err(DiracError::DimensionMismatch {
                expected: a.ncols(),
                got: b.ncols(),
            });
        }
        let n = a.ncols();
        let mut k = DMatrix::zeros(a.nrows(), 2 * n);
        k.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        k.view_mut((0, n), (a.nrows(), n)).copy_from(b);
        Self::from_span(&linalg::null_space(&k, DEFAULT_RANK_TOL))
    }

    /// Graph `{(v, Ω v)}` of a skew matrix.
    pub fn from_two_form(omega: &DMatrix<f64>) -> Result<Self, DiracError> {
        if omega.nrows() != omega.ncols() {
            return Err(DiracError::DimensionMismatch {
                expected: omega.nrows(),
                got: omega.ncols(),
            });
        }
        let deviation = skew_deviation(omega);
        if deviation > SKEW_TOL {
            return Err(DiracError::NotSkew { deviation });
        }
        let n = omega.nrows();
        let mut s = DMatrix::zeros(2 * n, n);
        s.view_mut((0, 0), (n, n)).fill_with_identity();
        s.view_mut((n, 0), (n, n)).copy_from(omega);
        Self::from_span(&s)
    }

    /// Graph `{(Λ α, α)}` of a skew matrix, so that `⟨β, ♯α⟩ = βᵀ Λ α`.
    pub fn from_bivector(lambda: &DMatrix<f64>) -> Result<Self, DiracError> {
        if lambda.nrows() != lambda.ncols() {
            return Err(DiracError::DimensionMismatch {
                expected: lambda.nrows(),
                got: lambda.ncols(),
            });
        }
        let deviation = skew_deviation(lambda);
        if deviation > SKEW_TOL {
            return Err(DiracError::NotSkew { deviation });
        }
        let n = lambda.nrows();
        let mut s = DMatrix::zeros(2 * n, n);
        s.view_mut((0, 0), (n, n)).copy_from(lambda);
        s.view_mut((n, 0), (n, n)).fill_with_identity();
        Self::from_span(&s)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Orthonormal `2n x n` basis, vector part in the first `n` rows.
    pub fn image(&self) -> &DMatrix<f64> {
        &self.image
    }

    /// `n x 2n` matrix `[A | B]` with orthonormal rows.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn kernel_a(&self) -> DMatrix<f64> {
        self.kernel.columns(0, self.n).into_owned()
    }

    pub fn kernel_b(&self) -> DMatrix<f64> {
        self.kernel.columns(self.n, self.n).into_owned()
    }

    /// `‖A v + B α‖∞`.
    pub fn residual(&self, v: &[f64], alpha: &[f64]) -> Result<f64, DiracError> {
        for len in [v.len(), alpha.len()] {
            if len != self.n {
                return Err(DiracError::DimensionMismatch {
                    expected: self.n,
                    got: len,
                });
            }
        }
        let e = DVector::from_iterator(2 * self.n, v.iter().chain(alpha).copied());
        Ok((&self.kernel * e).amax())
    }

    pub fn contains(&self, v: &[f64], alpha: &[f64], tol: f64) -> Result<bool, DiracError> {
        Ok(self.residual(v, alpha)? <= tol)
    }

    /// The unique `v` with `(v, α) ∈ D`; fails unless `A` is invertible.
    pub fn sharp(&self, alpha: &[f64]) -> Result<DVector<f64>, DiracError> {
        if alpha.len() != self.n {
            return Err(DiracError::DimensionMismatch {
                expected: self.n,
                got: alpha.len(),
            });
        }
        let a = self.kernel_a();
        if linalg::rank(&a, DEFAULT_RANK_TOL) < self.n {
            return Err(DiracError::NotAGraph);
        }
        let rhs = -(self.kernel_b() * DVector::from_column_slice(alpha));
        a.lu().solve(&rhs).ok_or(DiracError::NotAGraph)
    }

    /// Spectral distance between the two subspaces.
    pub fn distance(&self, other: &LinearDirac) -> f64 {
        if self.n != other.n {
            return f64::INFINITY;
        }
        linalg::subspace_distance(&self.image, &other.image, DEFAULT_RANK_TOL)
    }

    /// `{(u, φᵀ v*) : (φ u, v*) ∈ self}`, a structure on the source of `φ`.
    pub fn backward(&self, phi: &LinearMap) -> Result<LinearDirac, DiracError> {
        if phi.target_dim() != self.n {
            return Err(DiracError::DimensionMismatch {
                expected: self.n,
                got: phi.target_dim(),
            });
        }
        let m = phi.source_dim();
        let n = self.n;
        let mut sys = DMatrix::zeros(n, m + n);
        sys.view_mut((0, 0), (n, m)).copy_from(&(self.kernel_a() * phi.matrix()));
        sys.view_mut((0, m), (n, n)).copy_from(&self.kernel_b());
        let null = linalg::null_space(&sys, DEFAULT_RANK_TOL);
        let mut lift = DMatrix::zeros(2 * m, m + n);
        lift.view_mut((0, 0), (m, m)).fill_with_identity();
        lift.view_mut((m, m), (m, n)).copy_from(&phi.matrix().transpose());
        Self::from_span(&(lift * null))
    }

    /// `{(φ u, v*) : (u, φᵀ v*) ∈ self}`, a structure on the target of `φ`.
    pub fn forward(&self, phi: &LinearMap) -> Result<LinearDirac, DiracError> {
        if phi.source_dim() != self.n {
            return Err(DiracError::DimensionMismatch {
                expected: self.n,
                got: phi.source_dim(),
            });
        }
        let m = self.n;
        let n = phi.target_dim();
        let mut sys = DMatrix::zeros(m, m + n);
        sys.view_mut((0, 0), (m, m)).copy_from(&self.kernel_a());
        sys.view_mut((0, m), (m, n)).copy_from(&(self.kernel_b() * phi.matrix().transpose()));
        let null = linalg::null_space(&sys, DEFAULT_RANK_TOL);
        let mut push = DMatrix::zeros(2 * n, m + n);
        push.view_mut((0, 0), (n, m)).copy_from(phi.matrix());
        push.view_mut((n, m), (n, n)).fill_with_identity();
        Self::from_span(&(push * null))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn pairing_examples() {
        assert_eq!(pairing(&[1.0, 0.0, 0.0, 1.0], &[0.0, 1.0, 1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(pairing(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(pairing(&[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn two_form_graph() {
        let d = LinearDirac::from_two_form(&m(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert!(d.contains(&[1.0, 0.0], &[0.0, -1.0], 1e-14).unwrap());
        assert!(d.contains(&[0.0, 1.0], &[1.0, 0.0], 1e-14).unwrap());
        assert!(!d.contains(&[1.0, 0.0], &[0.0, 1.0], 1e-3).unwrap());
        let tm = LinearDirac::from_two_form(&DMatrix::zeros(2, 2)).unwrap();
        assert!(tm.contains(&[3.0, 4.0], &[0.0, 0.0], 1e-14).unwrap());
        assert!(matches!(
            LinearDirac::from_two_form(&m(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            Err(DiracError::NotSkew { .. })
        ));
    }

    #[test]
    fn bivector_graph_sign() {
        let lam = m(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let d = LinearDirac::from_bivector(&lam).unwrap();
        let v = d.sharp(&[1.0, 0.0]).unwrap();
        // ⟨β, ♯α⟩ = βᵀ Λ α for every basis β.
        for (i, beta) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
            let lhs = beta[0] * v[0] + beta[1] * v[1];
            let rhs = (0..2).map(|k| beta[k] * lam[(k, 0)]).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-14, "component {}", i);
        }
        let zero = LinearDirac::from_bivector(&DMatrix::zeros(2, 2)).unwrap();
        assert!(zero.contains(&[0.0, 0.0], &[5.0, -1.0], 1e-14).unwrap());
    }

    #[test]
    fn is_dirac_examples() {
        assert!(!is_dirac(&m(2, 2, &[1.0, 0.0, 0.0, 1.0])));
        assert!(!is_dirac(&m(4, 1, &[1.0, 0.0, 0.0, 0.0])));
        assert!(is_dirac(&m(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 0.0])));
    }

    #[test]
    fn kernel_is_isotropic() {
        let d = LinearDirac::from_two_form(&m(2, 2, &[0.0, 3.0, -3.0, 0.0])).unwrap();
        let a = d.kernel_a();
        let b = d.kernel_b();
        assert!((&a * b.transpose() + &b * a.transpose()).amax() < 1e-12);
    }

    #[test]
    fn backward_by_identity() {
        let d = LinearDirac::from_two_form(&m(2, 2, &[0.0, 2.0, -2.0, 0.0])).unwrap();
        let b = d.backward(&LinearMap::identity(2)).unwrap();
        assert!(d.distance(&b) < 1e-12);
        let f = d.forward(&LinearMap::identity(2)).unwrap();
        assert!(d.distance(&f) < 1e-12);
    }
}
