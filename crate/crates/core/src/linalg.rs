//! Dense linear algebra on top of nalgebra's SVD.
//!
//! Numerical rank counts singular values above `rel * sigma_max` and above a
//! tiny absolute floor, so that an all-roundoff matrix has rank zero.

use nalgebra::{DMatrix, DVector};

/// Relative rank tolerance shared by every rank decision in the crate.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Singular values below this are zero regardless of scale.
pub const ABS_RANK_FLOOR: f64 = 1e-13;

/// Singular values sorted in decreasing order with matching singular vectors.
pub struct SortedSvd {
    /// `nrows x p` with `p = min(nrows, ncols)` for thin, `ncols` when padded.
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// `ncols x ncols` (full) right singular vectors as columns.
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        let cut = (tol * smax).max(ABS_RANK_FLOOR);
        self.sigma.iter().filter(|&&s| s > cut).count()
    }
}

/// SVD with a full right factor: short matrices are padded with zero rows.
pub fn full_svd(m: &DMatrix<f64>) -> SortedSvd {
    let (r, c) = m.shape();
    if c == 0 {
        return SortedSvd {
            u: DMatrix::zeros(r, 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(0, 0),
        };
    }
    if r == 0 {
        return SortedSvd {
            u: DMatrix::zeros(0, 0),
            sigma: vec![0.0; c],
            v: DMatrix::identity(c, c),
        };
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut us = DMatrix::zeros(u.nrows(), order.len());
    let mut vs = DMatrix::zeros(c, order.len());
    for (k, &i) in order.iter().enumerate() {
        us.set_column(k, &u.column(i));
        vs.set_column(k, &vt.row(i).transpose());
    }
    let us = if r < c { us.rows(0, r).into_owned() } else { us };
    SortedSvd { u: us, sigma, v: vs }
}

pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    full_svd(m).rank(tol)
}

/// Orthonormal basis (as columns) of `{x : m x = 0}`.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let c = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(c, c);
    }
    let svd = full_svd(m);
    let r = svd.rank(tol);
    svd.v.columns(r, c - r).into_owned()
}

/// Orthonormal basis (as columns) of `{w : wᵀ m = 0}`.
pub fn left_null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    null_space(&m.transpose(), tol)
}

/// Orthonormal basis (as columns) of the column space.
pub fn column_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = full_svd(&m.transpose());
    let r = svd.rank(tol);
    svd.v.columns(0, r).into_owned()
}

/// Minimum-norm least-squares solution of `m x = b`.
pub fn min_norm_solve(m: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    let c = m.ncols();
    if m.nrows() == 0 || c == 0 {
        return DVector::zeros(c);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = (tol * smax).max(ABS_RANK_FLOOR);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut x = DVector::zeros(c);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            let coef = u.column(i).dot(b) / s;
            x += vt.row(i).transpose() * coef;
        }
    }
    x
}

/// Orthogonal projector onto the column span of `basis`.
pub fn projector(basis: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let q = column_space(basis, tol);
    &q * q.transpose()
}

/// Spectral distance between the projectors onto two column spans. Zero iff
/// the spans coincide; at least one when dimensions differ.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> f64 {
    assert_eq!(a.nrows(), b.nrows(), "subspaces of different ambient spaces");
    let diff = projector(a, tol) - projector(b, tol);
    if diff.is_empty() {
        return 0.0;
    }
    diff.svd(false, false).singular_values.max()
}

/// Reduced row echelon form with partial pivoting. Entries below
/// `tol * max|m|` are zeroed and entries within `1e-10` of an integer snap to
/// it, so that exact rational structure survives roundoff.
pub fn rref(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let eps = tol * scale;
    let mut lead = 0;
    for col in 0..cols {
        if lead >= rows {
            break;
        }
        let (piv, pval) = (lead..rows)
            .map(|i| (i, a[(i, col)].abs()))
            .fold((lead, -1.0), |best, x| if x.1 > best.1 { x } else { best });
        if pval <= eps {
            for i in lead..rows {
                a[(i, col)] = 0.0;
            }
            continue;
        }
        a.swap_rows(lead, piv);
        let p = a[(lead, col)];
        for j in 0..cols {
            a[(lead, j)] /= p;
        }
        for i in 0..rows {
            if i != lead {
                let f = a[(i, col)];
                if f != 0.0 {
                    for j in 0..cols {
                        a[(i, j)] -= f * a[(lead, j)];
                    }
                }
            }
        }
        lead += 1;
    }
    for x in a.iter_mut() {
        let r = x.round();
        if (*x - r).abs() <= 1e-10 {
            *x = r;
        } else if x.abs() <= eps {
            *x = 0.0;
        }
    }
    a
}

/// Greedy selection of `count` linearly independent rows, scanning in order.
pub fn independent_rows(m: &DMatrix<f64>, tol: f64, count: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        if chosen.len() == count {
            break;
        }
        let mut r: DVector<f64> = m.row(i).transpose();
        let norm0 = r.norm();
        if norm0 <= tol * scale {
            continue;
        }
        for b in &basis {
            let d = b.dot(&r);
            r -= b * d;
        }
        for b in &basis {
            let d = b.dot(&r);
            r -= b * d;
        }
        let n = r.norm();
        if n > 1e-8 * norm0.max(scale) {
            basis.push(r / n);
            chosen.push(i);
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 2.0, 4.0, 0.0, 2.0]);
        assert_eq!(rank(&m, DEFAULT_RANK_TOL), 1);
        let n = null_space(&m, DEFAULT_RANK_TOL);
        assert_eq!(n.ncols(), 3);
        assert!((&m * &n).amax() < 1e-14);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        assert_eq!(rank(&DMatrix::zeros(3, 2), DEFAULT_RANK_TOL), 0);
        assert_eq!(rank(&DMatrix::from_element(2, 2, 1e-16), DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn min_norm_solution() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = min_norm_solve(&m, &DVector::from_vec(vec![2.0]), DEFAULT_RANK_TOL);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rref_snaps_integers() {
        let m = DMatrix::from_row_slice(1, 2, &[0.7071067811865476, 0.7071067811865475]);
        let r = rref(&m, 1e-12);
        assert_eq!(r[(0, 0)], 1.0);
        assert_eq!(r[(0, 1)], 1.0);
    }

    #[test]
    fn subspace_distance_detects_difference() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
        let c = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(subspace_distance(&a, &b, DEFAULT_RANK_TOL) < 1e-15);
        assert!((subspace_distance(&a, &c, DEFAULT_RANK_TOL) - 1.0).abs() < 1e-15);
    }
}
