//! Natural maps between tangent and cotangent bundles, as coordinate maps,
//! and numerical checks of the identities relating them to the canonical and
//! linear almost-Poisson Dirac structures.
//!
//! A Dirac-structure element is laid out as `(x, ẋ, α)`: base point, tangent
//! vector, covector. For the canonical structure on `(q, p)` that reads
//! `(q, p, q̇, ṗ, α, β)`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::conventions::EPSILON_COVECTOR_SIGN;
use crate::dirac_field::{DiracField, DiracKind, FieldError};
use crate::expr::ExprError;
use crate::linear_dirac::{DiracError, LinearDirac, LinearMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TulczyjewError {
    #[error("point has {got} coordinates, map expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown diagram `{0}`")]
    UnknownDiagram(String),
    #[error("diagram `{0}` needs a different setting")]
    WrongSetting(String),
    #[error("a linear almost-Poisson structure is required")]
    NotABundle,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Dirac(#[from] DiracError),
}

/// Where a `Ψ` map is defined.
#[derive(Debug, Clone)]
pub enum Setting {
    /// Canonical structure on `T*Q`, `dim Q = n`.
    Canonical { n: usize },
    /// Linear almost-Poisson structure on the dual of a bundle with base
    /// dimension `m` and rank `n_a`.
    Bundle { m: usize, n_a: usize },
}

impl Setting {
    fn base_dim(&self) -> usize {
        match *self {
            Setting::Canonical { n } => 2 * n,
            Setting::Bundle { m, n_a } => m + n_a,
        }
    }

    fn split(&self) -> (usize, usize) {
        match *self {
            Setting::Canonical { n } => (n, n),
            Setting::Bundle { m, n_a } => (m, n_a),
        }
    }
}

#[derive(Debug, Clone)]
pub enum NaturalMap {
    /// `TT*Q → T*T*Q`, `(q, p, q̇, ṗ) ↦ (q, p, −ṗ, q̇)`.
    FlatOmega { n: usize },
    /// Inverse of `FlatOmega`, `(q, p, a, b) ↦ (q, p, b, −a)`.
    SharpOmega { n: usize },
    /// `TT*Q → T*TQ`, `(q, p, q̇, ṗ) ↦ (q, q̇, ṗ, p)`.
    AlphaQ { n: usize },
    /// `T*A* → T*A`, `(q, p, α, β) ↦ (q, β, −α, p)`.
    RIso { m: usize, n_a: usize },
    /// `T*A → TA*`,
    /// `(q, v, α, γ) ↦ (q, γ, ρ v, C^D_{BA} v^B γ_D − ρⁱ_A α_i)`.
    /// Holds the almost-Poisson field supplying `ρ(q)` and `C(q)`.
    Epsilon(Box<DiracField>),
    /// `D_M → D_{ω_Q}`, forgets `v`, `v̇` and `γ`.
    PhiMap { n: usize },
    /// Tangent part of a Dirac element.
    Psi1(Setting),
    /// Covector part of a Dirac element.
    Psi2(Setting),
    /// `(x, ẋ, (α, β)) ↦ (q, β, −α, p)`, the common coordinate form of
    /// `α_Q ∘ Ψ₁` (canonical) and `ℛ ∘ Ψ₂` (bundle).
    Psi3(Setting),
}

fn check_len(point: &[f64], expected: usize) -> Result<(), TulczyjewError> {
    if point.len() != expected {
        return Err(TulczyjewError::DimensionMismatch {
            expected,
            got: point.len(),
        });
    }
    Ok(())
}

fn bundle_parts(field: &DiracField) -> Result<(usize, usize), TulczyjewError> {
    match field.kind() {
        DiracKind::AlmostPoissonLinear { q, p, .. } => Ok((q.len(), p.len())),
        _ => Err(TulczyjewError::NotABundle),
    }
}

impl NaturalMap {
    pub fn domain_dim(&self) -> Result<usize, TulczyjewError> {
        Ok(match self {
            NaturalMap::FlatOmega { n } | NaturalMap::SharpOmega { n } | NaturalMap::AlphaQ { n } => 4 * n,
            NaturalMap::RIso { m, n_a } => 2 * (m + n_a),
            NaturalMap::Epsilon(f) => {
                let (m, n_a) = bundle_parts(f)?;
                2 * (m + n_a)
            }
            NaturalMap::PhiMap { n } => 9 * n,
            NaturalMap::Psi1(s) | NaturalMap::Psi2(s) | NaturalMap::Psi3(s) => 3 * s.base_dim(),
        })
    }

    pub fn apply(&self, point: &[f64]) -> Result<Vec<f64>, TulczyjewError> {
        check_len(point, self.domain_dim()?)?;
        let out = match self {
            NaturalMap::FlatOmega { n } => {
                let n = *n;
                let (qp, qd, pd) = (&point[..2 * n], &point[2 * n..3 * n], &point[3 * n..]);
                qp.iter().copied().chain(pd.iter().map(|x| -x)).chain(qd.iter().copied()).collect()
            }
            NaturalMap::SharpOmega { n } => {
                let n = *n;
                let (qp, a, b) = (&point[..2 * n], &point[2 * n..3 * n], &point[3 * n..]);
                qp.iter().copied().chain(b.iter().copied()).chain(a.iter().map(|x| -x)).collect()
            }
            NaturalMap::AlphaQ { n } => {
                let n = *n;
                let (q, p, qd, pd) = (&point[..n], &point[n..2 * n], &point[2 * n..3 * n], &point[3 * n..]);
                [q, qd, pd, p].concat()
            }
            NaturalMap::RIso { m, n_a } => r_iso(point, *m, *n_a),
            NaturalMap::Epsilon(field) => epsilon(field, point)?,
            NaturalMap::PhiMap { n } => {
                let n = *n;
                let s = |k: usize| &point[k * n..(k + 1) * n];
                // (q, v, p, q̇, v̇, ṗ, α, γ, β)
                [s(0), s(2), s(3), s(5), s(6), s(8)].concat()
            }
            NaturalMap::Psi1(s) => {
                let d = s.base_dim();
                point[..2 * d].to_vec()
            }
            NaturalMap::Psi2(s) => {
                let d = s.base_dim();
                [&point[..d], &point[2 * d..]].concat()
            }
            NaturalMap::Psi3(s) => {
                let d = s.base_dim();
                let (m, n_a) = s.split();
                r_iso(&[&point[..d], &point[2 * d..]].concat(), m, n_a)
            }
        };
        Ok(out)
    }
}

fn r_iso(point: &[f64], m: usize, n_a: usize) -> Vec<f64> {
    let d = m + n_a;
    let (q, p, a, b) = (&point[..m], &point[m..d], &point[d..d + m], &point[d + m..]);
    q.iter()
        .copied()
        .chain(b.iter().copied())
        .chain(a.iter().map(|x| -x))
        .chain(p.iter().copied())
        .collect()
}

fn epsilon(field: &DiracField, point: &[f64]) -> Result<Vec<f64>, TulczyjewError> {
    let (rho, c) = match field.kind() {
        DiracKind::AlmostPoissonLinear { rho, c, .. } => (rho, c),
        _ => return Err(TulczyjewError::NotABundle),
    };
    let (m, n_a) = bundle_parts(field)?;
    let d = m + n_a;
    let (q, v, alpha, gamma) = (&point[..m], &point[m..d], &point[d..d + m], &point[d + m..]);
    // ρ and C are functions of q only; evaluate with the fiber slot at zero.
    let x: Vec<f64> = q.iter().copied().chain(std::iter::repeat(0.0).take(n_a)).collect();
    let rho_m = rho.eval(&x)?;
    let mut c_m = vec![vec![vec![0.0; n_a]; n_a]; n_a];
    for (dd, slab) in c_m.iter_mut().enumerate() {
        for (a, row) in slab.iter_mut().enumerate() {
            for (b, val) in row.iter_mut().enumerate() {
                *val = c.get(dd, a, b).eval(&x)?;
            }
        }
    }
    let qdot: Vec<f64> = (0..m).map(|i| (0..n_a).map(|a| rho_m[(i, a)] * v[a]).sum()).collect();
    let last: Vec<f64> = (0..n_a)
        .map(|a| {
            let bracket: f64 = (0..n_a)
                .flat_map(|b| (0..n_a).map(move |dd| (b, dd)))
                .map(|(b, dd)| c_m[dd][b][a] * v[b] * gamma[dd])
                .sum();
            let anchor: f64 = (0..m).map(|i| rho_m[(i, a)] * alpha[i]).sum();
            bracket - anchor
        })
        .collect();
    Ok([q, gamma, &qdot, &last].concat())
}

/// A Dirac element `(x, ♯α, α)` of `field` at `x`.
pub fn d_element(field: &DiracField, x: &[f64], alpha: &[f64]) -> Result<Vec<f64>, TulczyjewError> {
    let v = field.sharp(x, alpha)?;
    Ok(x.iter().chain(v.iter()).chain(alpha).copied().collect())
}

/// An element of `D_M` on `M = TQ ⊕ T*Q` at `(q, v, p)`, with free tangent
/// component `v̇` and covector `(α, β)`:
/// `(q, v, p, β, v̇, −α, α, 0, β)`.
pub fn dm_element(point: &[f64], vdot: &[f64], alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let neg: Vec<f64> = alpha.iter().map(|a| -a).collect();
    [point, beta, vdot, &neg, alpha, &vec![0.0; n], beta].concat()
}

/// `D_M` at any point as the backward image of `D_{ω_Q}` along
/// `(q, v, p) ↦ (q, p)`.
pub fn dm_by_projection(n: usize) -> Result<LinearDirac, TulczyjewError> {
    let mut pr = DMatrix::zeros(2 * n, 3 * n);
    for i in 0..n {
        pr[(i, i)] = 1.0;
        pr[(n + i, 2 * n + i)] = 1.0;
    }
    let d = LinearDirac::from_bivector(&crate::conventions::canonical_bivector(n))?;
    Ok(d.backward(&LinearMap::new(pr))?)
}

/// `D_M` as the backward image of the canonical structure on `T*TQ`, with
/// coordinates `(q, v, a_q, a_v)`, along `(q, v, p) ↦ (q, v, p, 0)`.
pub fn dm_by_inclusion(n: usize) -> Result<LinearDirac, TulczyjewError> {
    let mut inc = DMatrix::zeros(4 * n, 3 * n);
    for i in 0..3 * n {
        inc[(i, i)] = 1.0;
    }
    let d = LinearDirac::from_bivector(&crate::conventions::canonical_bivector(2 * n))?;
    Ok(d.backward(&LinearMap::new(inc))?)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Names accepted by [`diagram_check`].
pub const DIAGRAMS: &[&str] = &[
    "psi3_alpha_psi1",
    "psi3_r_psi2",
    "epsilon",
    "sharp_flat",
    "flat_graph",
    "phi_into_d",
    "dm_backward",
];

/// Sup-norm violation of a named identity over `samples`.
///
/// Sample kinds: `psi3_alpha_psi1` and `flat_graph` take canonical Dirac
/// elements; `psi3_r_psi2` and `epsilon` take elements of `field`'s
/// almost-Poisson structure; `sharp_flat` takes points of `TT*Q`;
/// `phi_into_d` takes `D_M` elements; `dm_backward` takes `(q, v, p)` points
/// and returns the subspace distance of the two backward images.
pub fn diagram_check(name: &str, field: &DiracField, samples: &[Vec<f64>]) -> Result<f64, TulczyjewError> {
    let canonical_n = || match field.kind() {
        DiracKind::CanonicalSymplectic { q, .. } => Ok(q.len()),
        _ => Err(TulczyjewError::WrongSetting(name.to_string())),
    };
    let bundle = || {
        let (m, n_a) = bundle_parts(field).map_err(|_| TulczyjewError::WrongSetting(name.to_string()))?;
        Ok::<_, TulczyjewError>(Setting::Bundle { m, n_a })
    };
    let mut worst: f64 = 0.0;
    match name {
        "psi3_alpha_psi1" => {
            let n = canonical_n()?;
            let s = Setting::Canonical { n };
            for d in samples {
                let lhs = NaturalMap::Psi3(s.clone()).apply(d)?;
                let rhs = NaturalMap::AlphaQ { n }.apply(&NaturalMap::Psi1(s.clone()).apply(d)?)?;
                worst = worst.max(max_abs_diff(&lhs, &rhs));
            }
        }
        "psi3_r_psi2" => {
            let s = bundle()?;
            let (m, n_a) = s.split();
            for d in samples {
                let lhs = NaturalMap::Psi3(s.clone()).apply(d)?;
                let rhs = NaturalMap::RIso { m, n_a }.apply(&NaturalMap::Psi2(s.clone()).apply(d)?)?;
                worst = worst.max(max_abs_diff(&lhs, &rhs));
            }
        }
        "epsilon" => {
            let s = bundle()?;
            let (m, _) = s.split();
            let eps = NaturalMap::Epsilon(Box::new(field.clone()));
            for d in samples {
                let mut p3 = NaturalMap::Psi3(s.clone()).apply(d)?;
                let a_start = s.base_dim();
                for x in &mut p3[a_start..a_start + m] {
                    *x *= EPSILON_COVECTOR_SIGN;
                }
                let lhs = eps.apply(&p3)?;
                let rhs = NaturalMap::Psi1(s.clone()).apply(d)?;
                worst = worst.max(max_abs_diff(&lhs, &rhs));
            }
        }
        "sharp_flat" => {
            let n = canonical_n()?;
            for x in samples {
                let back = NaturalMap::SharpOmega { n }.apply(&NaturalMap::FlatOmega { n }.apply(x)?)?;
                worst = worst.max(max_abs_diff(&back, x));
            }
        }
        "flat_graph" => {
            let n = canonical_n()?;
            let s = Setting::Canonical { n };
            for d in samples {
                let flat = NaturalMap::FlatOmega { n }.apply(&NaturalMap::Psi1(s.clone()).apply(d)?)?;
                let cov = NaturalMap::Psi2(s.clone()).apply(d)?;
                worst = worst.max(max_abs_diff(&flat, &cov));
            }
        }
        "phi_into_d" => {
            let n = canonical_n()?;
            let d = LinearDirac::from_bivector(&crate::conventions::canonical_bivector(n))?;
            for e in samples {
                let img = NaturalMap::PhiMap { n }.apply(e)?;
                worst = worst.max(d.residual(&img[2 * n..4 * n], &img[4 * n..])?);
            }
        }
        "dm_backward" => {
            let n = canonical_n()?;
            for x in samples {
                check_len(x, 3 * n)?;
                // Both structures are constant in these coordinates.
                worst = worst.max(dm_by_projection(n)?.distance(&dm_by_inclusion(n)?));
            }
        }
        other => return Err(TulczyjewError::UnknownDiagram(other.to_string())),
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarSpace;

    #[test]
    fn coordinate_examples() {
        assert_eq!(NaturalMap::FlatOmega { n: 1 }.apply(&[0.0, 0.0, 1.0, 2.0]).unwrap(), vec![0.0, 0.0, -2.0, 1.0]);
        assert_eq!(NaturalMap::AlphaQ { n: 1 }.apply(&[0.0, 0.0, 1.0, 2.0]).unwrap(), vec![0.0, 1.0, 2.0, 0.0]);
        assert_eq!(NaturalMap::RIso { m: 1, n_a: 1 }.apply(&[0.0, 5.0, 3.0, 7.0]).unwrap(), vec![0.0, 7.0, -3.0, 5.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let err = NaturalMap::AlphaQ { n: 2 }.apply(&[0.0; 4]).unwrap_err();
        assert_eq!(err, TulczyjewError::DimensionMismatch { expected: 8, got: 4 });
    }

    #[test]
    fn unknown_diagram() {
        let f = DiracField::canonical(&VarSpace::new(&["q", "p"]).unwrap()).unwrap();
        assert!(matches!(diagram_check("nope", &f, &[]), Err(TulczyjewError::UnknownDiagram(_))));
    }

    #[test]
    fn dm_has_explicit_constraints() {
        let dm = dm_by_projection(1).unwrap();
        // (q̇, v̇, ṗ) = (β, 4, −α), covector (α, 0, β).
        assert!(dm.contains(&[2.0, 4.0, -3.0], &[3.0, 0.0, 2.0], 1e-12).unwrap());
        assert!(!dm.contains(&[2.0, 4.0, -3.0], &[3.0, 1.0, 2.0], 1e-6).unwrap());
    }
}
