//! Sign conventions, collected in one place.
//!
//! Every other module builds its matrices through these functions, so a sign
//! question has exactly one answer in the crate.
//!
//! - 2-form graphs are `{(v, Ω v)}`.
//! - Bivector graphs are `{(Λ α, α)}`, i.e. `⟨β, ♯α⟩ = βᵀ Λ α`.
//! - Canonical coordinates are ordered `(q, p)`. The canonical structure is
//!   `ṗ + α = 0`, `q̇ − β = 0` for covectors `(α, β)`, so `♯(α, β) = (β, −α)`.
//! - The linear almost-Poisson structure on `(q, p)` with anchor `ρ` and
//!   structure functions `C` has `q̇ = ρ β` and
//!   `ṗ_A = −ρⁱ_A α_i − C^D_{AB} p_D β^B`, giving `{p_A, p_B} = −C^D_{AB} p_D`.
//! - With `C = c` this yields `μ̇ = +ad*_ξ μ`, where
//!   `(ad*_ξ μ)_B = c^D_{AB} ξ^A μ_D`. On so(3) with `c^D_{AB} = ε_{ABD}`,
//!   `ad*_ξ μ = μ × ξ`.

use nalgebra::DMatrix;

/// Sign of a Lie–Poisson system: `Plus` evolves `μ̇ = −ad*_ξ μ`,
/// `Minus` evolves `μ̇ = +ad*_ξ μ` (the rigid body, `Ṁ = M × Ω`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiePoissonSign {
    Plus,
    Minus,
}

impl LiePoissonSign {
    /// Factor `C = factor · c` turning Lie algebra structure constants into
    /// almost-Poisson structure functions.
    pub fn structure_factor(self) -> f64 {
        match self {
            LiePoissonSign::Plus => -1.0,
            LiePoissonSign::Minus => 1.0,
        }
    }
}

/// `[[0, I], [−I, 0]]` over `(q, p)`.
pub fn canonical_bivector(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = 1.0;
        m[(n + i, i)] = -1.0;
    }
    m
}

/// The 2-form whose graph is the canonical structure: `[[0, −I], [I, 0]]`,
/// the inverse of [`canonical_bivector`].
pub fn canonical_two_form(n: usize) -> DMatrix<f64> {
    -canonical_bivector(n)
}

/// Bivector blocks of the linear almost-Poisson structure:
/// `[[0, ρ], [−ρᵀ, −Cp]]` with `(Cp)_{AB} = C^D_{AB} p_D`.
pub fn almost_poisson_blocks<T: Clone>(
    rho: &[Vec<T>],
    cp: &[Vec<T>],
    zero: &T,
    neg: impl Fn(&T) -> T,
) -> Vec<Vec<T>> {
    let m = rho.len();
    let na = cp.len();
    let n = m + na;
    let mut out = vec![vec![zero.clone(); n]; n];
    for i in 0..m {
        for a in 0..na {
            out[i][m + a] = rho[i][a].clone();
            out[m + a][i] = neg(&rho[i][a]);
        }
    }
    for a in 0..na {
        for b in 0..na {
            out[m + a][m + b] = neg(&cp[a][b]);
        }
    }
    out
}

/// Bivector over `(a, μ)` for Euler–Poincaré with advected parameters, read
/// off `♯(α, β) = (−Φ(β) a, ad*_β μ + J(α))` with `J(α)_A = ⟨α, Φ_A a⟩`:
/// `Λ_{a_i μ_A} = −(Φ_A a)_i`, `Λ_{μ_A a_i} = (Φ_A a)_i`,
/// `Λ_{μ_A μ_B} = −c^D_{AB} μ_D`.
///
/// `phi_a[A][i] = (Φ_A a)_i` and `cmu[A][B] = c^D_{AB} μ_D`.
pub fn advected_blocks<T: Clone>(
    phi_a: &[Vec<T>],
    cmu: &[Vec<T>],
    zero: &T,
    neg: impl Fn(&T) -> T,
) -> Vec<Vec<T>> {
    let n = cmu.len();
    let d = phi_a.first().map_or(0, |r| r.len());
    let mut out = vec![vec![zero.clone(); d + n]; d + n];
    for a in 0..n {
        for i in 0..d {
            out[i][d + a] = neg(&phi_a[a][i]);
            out[d + a][i] = phi_a[a][i].clone();
        }
        for b in 0..n {
            out[d + a][d + b] = neg(&cmu[a][b]);
        }
    }
    out
}

/// Sign flip applied to the covector slot before comparing `ε ∘ Ψ₃` with
/// `Ψ₁`. With `ρ = I`, `C = 0`, the coordinate formula of `ε` sends
/// `(q, γ, α, ·)` to a last slot `−α`, while the canonical structure pairs
/// `ṗ` with `−α`; the two agree once `α` is negated.
pub const EPSILON_COVECTOR_SIGN: f64 = -1.0;
