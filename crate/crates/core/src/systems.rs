//! Builders for the mechanical system classes.
//!
//! Every builder returns a [`GeneralizedDiracSystem`]: a fibered chart, an
//! energy on it and a Dirac structure on the base. Expressions are given as
//! text over the coordinate names they may use.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::conventions::{self, LiePoissonSign};
use crate::dirac_field::{DiracField, FieldError, StructureFunctions};
use crate::expr::{ExprError, FieldMatrix, ScalarField, VarSpace};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::morse::{Classification, Fibration, MorseError, MorseFamily, NewtonOptions};
use crate::reduction::{GeneralizedDiracSystem, ReductionError};

/// Tolerance for numeric antisymmetry and symmetry checks of builder data.
pub const DATA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Morse(#[from] MorseError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("structure constants are not antisymmetric in the lower indices")]
    NonAntisymmetric,
    #[error("metric is not symmetric positive definite at a check point")]
    DegenerateMetric,
    #[error("frame vectors are linearly dependent at a check point")]
    DegenerateFrame,
}

fn space_of<S: AsRef<str>>(groups: &[&[S]]) -> Result<VarSpace, ExprError> {
    let names: Vec<&str> = groups.iter().flat_map(|g| g.iter().map(|s| s.as_ref())).collect();
    VarSpace::new(&names)
}

fn parse(text: &str, space: &VarSpace) -> Result<ScalarField, ExprError> {
    ScalarField::parse(text, space)
}

fn owned<S: AsRef<str>>(names: &[S]) -> Vec<String> {
    names.iter().map(|s| s.as_ref().to_string()).collect()
}

/// Velocity and momentum names derived from configuration names:
/// `q1 → (v1, p1)`, `x → (v_x, p_x)`.
pub fn default_names<S: AsRef<str>>(q: &[S]) -> (Vec<String>, Vec<String>) {
    q.iter()
        .map(|s| {
            let s = s.as_ref();
            match s.strip_prefix('q') {
                Some(rest) if !rest.is_empty() => (format!("v{}", rest), format!("p{}", rest)),
                _ if s == "q" => ("v".to_string(), "p".to_string()),
                _ => (format!("v_{}", s), format!("p_{}", s)),
            }
        })
        .unzip()
}

/// Assembles the system from base names, fiber names, energy and structure.
fn finish(base: &[String], fiber: &[String], energy: &ScalarField, dirac: DiracField) -> Result<GeneralizedDiracSystem, SystemError> {
    let fib = Fibration::new(base, fiber)?;
    let family = MorseFamily::new(fib, energy)?;
    Ok(GeneralizedDiracSystem::new(dirac, family)?)
}

/// `Σ pᵢ vᵢ` over the given space.
fn pairing_sum(p: &[String], v: &[String], space: &VarSpace) -> Result<ScalarField, ExprError> {
    let mut acc = ScalarField::zero(space);
    for (a, b) in p.iter().zip(v) {
        acc = &acc + &(&ScalarField::variable(a, space)? * &ScalarField::variable(b, space)?);
    }
    Ok(acc)
}

/// Anchor `ρ` (rows over `q`) and structure functions `C` given as text over `q`.
#[derive(Debug, Clone)]
pub struct BundleData {
    /// `rho[i][A] = ρⁱ_A`.
    pub rho: Vec<Vec<String>>,
    /// `c[D][A][B] = C^D_{AB}`.
    pub c: Vec<Vec<Vec<String>>>,
}

impl BundleData {
    fn fields(&self, q: &[String], n_a: usize, base: &VarSpace) -> Result<(FieldMatrix, StructureFunctions), SystemError> {
        if self.rho.len() != q.len() || self.rho.iter().any(|r| r.len() != n_a) {
            return Err(SystemError::Shape(format!("anchor must be {} x {}", q.len(), n_a)));
        }
        if self.c.len() != n_a || self.c.iter().any(|d| d.len() != n_a || d.iter().any(|r| r.len() != n_a)) {
            return Err(SystemError::Shape(format!("structure functions must be {0} x {0} x {0}", n_a)));
        }
        let qs = VarSpace::new(q)?;
        let rho = self
            .rho
            .iter()
            .map(|row| row.iter().map(|t| parse(t, &qs)?.rebase(base)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut entries = Vec::new();
        for d in &self.c {
            for row in d {
                for t in row {
                    entries.push(parse(t, &qs)?.rebase(base)?);
                }
            }
        }
        Ok((FieldMatrix::from_rows(rho, base), StructureFunctions::new(n_a, entries)?))
    }
}

/// `E = p·v − L(q, v)` with the canonical structure on `(q, p)`.
pub fn lagrangian<S: AsRef<str>>(q: &[S], v: &[S], p: &[S], l: &str) -> Result<GeneralizedDiracSystem, SystemError> {
    let (q, v, p) = (owned(q), owned(v), owned(p));
    if v.len() != q.len() || p.len() != q.len() {
        return Err(SystemError::Shape("q, v and p must have equal length".into()));
    }
    let lspace = space_of(&[&q, &v])?;
    let total = space_of(&[&q, &p, &v])?;
    let l = parse(l, &lspace)?.rebase(&total)?;
    let energy = &pairing_sum(&p, &v, &total)? - &l;
    let base: Vec<String> = q.iter().chain(&p).cloned().collect();
    let dirac = DiracField::canonical(&VarSpace::new(&base)?)?;
    finish(&base, &v, &energy, dirac)
}

/// `E = H(q, p)` with no fibers and the canonical structure.
pub fn hamiltonian<S: AsRef<str>>(q: &[S], p: &[S], h: &str) -> Result<GeneralizedDiracSystem, SystemError> {
    let (q, p) = (owned(q), owned(p));
    if p.len() != q.len() {
        return Err(SystemError::Shape("q and p must have equal length".into()));
    }
    let base: Vec<String> = q.iter().chain(&p).cloned().collect();
    let space = VarSpace::new(&base)?;
    let energy = parse(h, &space)?;
    let dirac = DiracField::canonical(&space)?;
    finish(&base, &[], &energy, dirac)
}

/// `E = p_A v^A − L(q, v)` with the linear almost-Poisson structure of
/// `(ρ, C)` on `(q, p)`.
pub fn almost_poisson<S: AsRef<str>>(
    q: &[S],
    v: &[S],
    p: &[S],
    bundle: &BundleData,
    l: &str,
) -> Result<GeneralizedDiracSystem, SystemError> {
    let (q, v, p) = (owned(q), owned(v), owned(p));
    if v.len() != p.len() {
        return Err(SystemError::Shape("v and p must have equal length".into()));
    }
    let lspace = space_of(&[&q, &v])?;
    let total = space_of(&[&q, &p, &v])?;
    let l = parse(l, &lspace)?.rebase(&total)?;
    let energy = &pairing_sum(&p, &v, &total)? - &l;
    let base: Vec<String> = q.iter().chain(&p).cloned().collect();
    let bspace = VarSpace::new(&base)?;
    let (rho, c) = bundle.fields(&q, p.len(), &bspace)?;
    let dirac = DiracField::almost_poisson(&bspace, q.len(), rho, c)?;
    finish(&base, &v, &energy, dirac)
}

/// `E = H(q, p)` with no fibers and the linear almost-Poisson structure.
pub fn almost_poisson_hamiltonian<S: AsRef<str>>(
    q: &[S],
    p: &[S],
    bundle: &BundleData,
    h: &str,
) -> Result<GeneralizedDiracSystem, SystemError> {
    let (q, p) = (owned(q), owned(p));
    let base: Vec<String> = q.iter().chain(&p).cloned().collect();
    let bspace = VarSpace::new(&base)?;
    let energy = parse(h, &bspace)?;
    let (rho, c) = bundle.fields(&q, p.len(), &bspace)?;
    let dirac = DiracField::almost_poisson(&bspace, q.len(), rho, c)?;
    finish(&base, &[], &energy, dirac)
}

fn check_structure_constants(c: &[Vec<Vec<f64>>]) -> Result<usize, SystemError> {
    let n = c.len();
    if c.iter().any(|d| d.len() != n || d.iter().any(|r| r.len() != n)) {
        return Err(SystemError::Shape(format!("structure constants must be {0} x {0} x {0}", n)));
    }
    for d in c {
        for a in 0..n {
            for b in 0..n {
                if (d[a][b] + d[b][a]).abs() > DATA_TOL {
                    return Err(SystemError::NonAntisymmetric);
                }
            }
        }
    }
    Ok(n)
}

/// Structure constants of so(3): `c^D_{AB} = ε_{ABD}`.
pub fn so3_structure_constants() -> Vec<Vec<Vec<f64>>> {
    let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
    for &(a, b, d) in &[(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        c[d][a][b] = 1.0;
        c[d][b][a] = -1.0;
    }
    c
}

/// Lie–Poisson / Euler–Poincaré: base `μ`, fiber `ξ`, `E = μ·ξ − L(ξ)`.
pub fn lie_poisson<S: AsRef<str>>(
    mu: &[S],
    xi: &[S],
    c: &[Vec<Vec<f64>>],
    sign: LiePoissonSign,
    l: &str,
) -> Result<GeneralizedDiracSystem, SystemError> {
    let (mu, xi) = (owned(mu), owned(xi));
    let n = check_structure_constants(c)?;
    if mu.len() != n || xi.len() != n {
        return Err(SystemError::Shape(format!("algebra of dimension {} needs {} momenta and velocities", n, n)));
    }
    let lspace = VarSpace::new(&xi)?;
    let total = space_of(&[&mu, &xi])?;
    let l = parse(l, &lspace)?.rebase(&total)?;
    let energy = &pairing_sum(&mu, &xi, &total)? - &l;
    let bspace = VarSpace::new(&mu)?;
    let cf = StructureFunctions::constant(c, &bspace)?.scaled(sign.structure_factor());
    let dirac = DiracField::almost_poisson(&bspace, 0, FieldMatrix::zeros(0, n, &bspace), cf)?;
    finish(&mu, &xi, &energy, dirac)
}

/// Euler–Poincaré with advected parameters: base `(a, μ)`, fiber `ξ`,
/// `E = μ·ξ − L(a, ξ)`; `actions[A]` is the matrix of `Φ_A` on `a`.
pub fn advected<S: AsRef<str>>(
    a: &[S],
    mu: &[S],
    xi: &[S],
    c: &[Vec<Vec<f64>>],
    actions: &[DMatrix<f64>],
    l: &str,
) -> Result<GeneralizedDiracSystem, SystemError> {
    let (a, mu, xi) = (owned(a), owned(mu), owned(xi));
    let n = check_structure_constants(c)?;
    let d = a.len();
    if mu.len() != n || xi.len() != n || actions.len() != n {
        return Err(SystemError::Shape(format!("algebra of dimension {} needs {} momenta, velocities and actions", n, n)));
    }
    if actions.iter().any(|m| m.shape() != (d, d)) {
        return Err(SystemError::Shape(format!("actions must be {0} x {0}", d)));
    }
    let lspace = space_of(&[&a, &xi])?;
    let total = space_of(&[&a, &mu, &xi])?;
    let l = parse(l, &lspace)?.rebase(&total)?;
    let energy = &pairing_sum(&mu, &xi, &total)? - &l;
    let base: Vec<String> = a.iter().chain(&mu).cloned().collect();
    let bspace = VarSpace::new(&base)?;
    let coord = |name: &str| ScalarField::variable(name, &bspace);
    let a_fields = a.iter().map(|s| coord(s)).collect::<Result<Vec<_>, _>>()?;
    let mu_fields = mu.iter().map(|s| coord(s)).collect::<Result<Vec<_>, _>>()?;
    let lin = |coefs: Vec<(f64, &ScalarField)>| {
        let terms: Vec<ScalarField> = coefs.into_iter().filter(|(k, _)| *k != 0.0).map(|(k, f)| f.scale(k)).collect();
        ScalarField::sum(&terms, &bspace)
    };
    let phi_a: Vec<Vec<ScalarField>> = actions
        .iter()
        .map(|m| (0..d).map(|i| lin((0..d).map(|j| (m[(i, j)], &a_fields[j])).collect())).collect())
        .collect();
    let cmu: Vec<Vec<ScalarField>> = (0..n)
        .map(|x| (0..n).map(|y| lin((0..n).map(|z| (c[z][x][y], &mu_fields[z])).collect())).collect())
        .collect();
    let blocks = conventions::advected_blocks(&phi_a, &cmu, &ScalarField::zero(&bspace), |f| -f);
    let dirac = DiracField::bivector(FieldMatrix::from_rows(blocks, &bspace))?;
    finish(&base, &xi, &energy, dirac)
}

/// Nonholonomic mechanics in quasi-velocities.
#[derive(Debug, Clone)]
pub struct NonholonomicData {
    pub q: Vec<String>,
    /// Quasi-velocity names, one per frame vector.
    pub w: Vec<String>,
    /// Momentum names, one per frame vector.
    pub p: Vec<String>,
    /// `metric[i][j] = g_ij(q)`.
    pub metric: Vec<Vec<String>>,
    /// `frame[a][i] = Xⁱ_a(q)`.
    pub frame: Vec<Vec<String>>,
    pub potential: String,
    /// Configurations at which the metric and frame are checked.
    pub check_points: Vec<Vec<f64>>,
}

/// Geometric data of a constrained frame derived symbolically over `q`.
#[derive(Debug, Clone)]
pub struct FrameGeometry {
    pub gram: FieldMatrix,
    pub gram_inverse: FieldMatrix,
    /// `structure[c][a][b] = 𝒞ᶜ_{ab}` with `𝒫[X_a, X_b] = 𝒞ᶜ_{ab} X_c`.
    pub structure: Vec<Vec<Vec<ScalarField>>>,
}

/// Gram matrix, its inverse and the structure functions of the frame.
pub fn frame_geometry(data: &NonholonomicData) -> Result<FrameGeometry, SystemError> {
    let n = data.q.len();
    let r = data.frame.len();
    if data.metric.len() != n || data.metric.iter().any(|row| row.len() != n) {
        return Err(SystemError::Shape(format!("metric must be {0} x {0}", n)));
    }
    if data.frame.iter().any(|x| x.len() != n) || data.w.len() != r || data.p.len() != r {
        return Err(SystemError::Shape(format!("{} frame vectors with {} components each", r, n)));
    }
    let qs = VarSpace::new(&data.q)?;
    let g: Vec<Vec<ScalarField>> = data
        .metric
        .iter()
        .map(|row| row.iter().map(|t| parse(t, &qs)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let x: Vec<Vec<ScalarField>> = data
        .frame
        .iter()
        .map(|row| row.iter().map(|t| parse(t, &qs)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    for pt in &data.check_points {
        let gm = FieldMatrix::from_rows(g.clone(), &qs).eval(pt)?;
        if (&gm - gm.transpose()).amax() > DATA_TOL * gm.amax().max(1.0) || gm.clone().cholesky().is_none() {
            return Err(SystemError::DegenerateMetric);
        }
        let xm = FieldMatrix::from_rows(x.clone(), &qs).eval(pt)?;
        if linalg::rank(&xm, DEFAULT_RANK_TOL) < r {
            return Err(SystemError::DegenerateFrame);
        }
    }
    // ⟨U, W⟩_g for component lists.
    let inner = |u: &[ScalarField], w: &[ScalarField]| {
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                terms.push(&(&g[i][j] * &u[i]) * &w[j]);
            }
        }
        ScalarField::sum(&terms, &qs)
    };
    let gram_rows: Vec<Vec<ScalarField>> = (0..r).map(|a| (0..r).map(|b| inner(&x[a], &x[b])).collect()).collect();
    let gram = FieldMatrix::from_rows(gram_rows, &qs);
    if gram.determinant().normalized().is_zero() {
        return Err(SystemError::DegenerateFrame);
    }
    let gram_inverse = gram.inverse();
    let bracket = |a: usize, b: usize| -> Vec<ScalarField> {
        (0..n)
            .map(|i| {
                let terms: Vec<ScalarField> = (0..n)
                    .map(|j| &(&x[a][j] * &x[b][i].diff_at(j)) - &(&x[b][j] * &x[a][i].diff_at(j)))
                    .collect();
                ScalarField::sum(&terms, &qs)
            })
            .collect()
    };
    let mut structure = vec![vec![vec![ScalarField::zero(&qs); r]; r]; r];
    for a in 0..r {
        for b in 0..r {
            let br = bracket(a, b);
            let proj: Vec<ScalarField> = (0..r).map(|d| inner(&x[d], &br)).collect();
            for (cidx, slot) in structure.iter_mut().enumerate() {
                let terms: Vec<ScalarField> = (0..r).map(|d| gram_inverse.get(cidx, d) * &proj[d]).collect();
                slot[a][b] = ScalarField::sum(&terms, &qs);
            }
        }
    }
    Ok(FrameGeometry {
        gram,
        gram_inverse,
        structure,
    })
}

/// Nonholonomic system with `l = ½ G_ab wᵃ wᵇ − V`, anchor `ρ = X` and `C = 𝒞`.
pub fn nonholonomic(data: &NonholonomicData) -> Result<GeneralizedDiracSystem, SystemError> {
    let geo = frame_geometry(data)?;
    let r = data.frame.len();
    let n = data.q.len();
    let rho: Vec<Vec<String>> = (0..n).map(|i| (0..r).map(|a| data.frame[a][i].clone()).collect()).collect();
    let c: Vec<Vec<Vec<String>>> = geo
        .structure
        .iter()
        .map(|m| m.iter().map(|row| row.iter().map(|f| f.to_string()).collect()).collect())
        .collect();
    let mut kinetic = Vec::new();
    for a in 0..r {
        for b in 0..r {
            let gab = geo.gram.get(a, b);
            if !gab.normalized().is_zero() {
                kinetic.push(format!("({})*{}*{}", gab, data.w[a], data.w[b]));
            }
        }
    }
    let kinetic = if kinetic.is_empty() { "0".to_string() } else { kinetic.join(" + ") };
    let l = format!("({})/2 - ({})", kinetic, data.potential);
    almost_poisson(&data.q, &data.w, &data.p, &BundleData { rho, c }, &l)
}

/// Vakonomic mechanics: velocities of the free coordinates are fibers and the
/// constrained ones follow `φᵃ`.
#[derive(Debug, Clone)]
pub struct VakonomicData {
    pub q: Vec<String>,
    /// Momenta, one per velocity slot (per configuration coordinate in the
    /// canonical case, per bundle coordinate otherwise).
    pub p: Vec<String>,
    /// Which velocity slots are free; the others are constrained.
    pub free: Vec<bool>,
    /// Names of the free velocities.
    pub v: Vec<String>,
    /// `φᵃ(q, v)` for the constrained slots, in slot order.
    pub phi: Vec<String>,
    pub lagrangian: String,
    pub bundle: Option<BundleData>,
}

/// A vakonomic system plus what is needed to report multipliers.
#[derive(Debug, Clone)]
pub struct VakonomicSystem {
    pub system: GeneralizedDiracSystem,
    n_q: usize,
    constrained_p: Vec<usize>,
    dl_dq: Option<Vec<ScalarField>>,
}

/// Multipliers of the constrained slots at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    /// `λ_a = ∂L/∂qᵃ − p_a` (canonical case only).
    pub configuration_formula: Option<Vec<f64>>,
    /// `λ_a = p_a`, the multiplier of `q̇ᵃ − φᵃ = 0` in `L + λ_a (q̇ᵃ − φᵃ)`.
    pub velocity_formula: Vec<f64>,
}

impl VakonomicSystem {
    /// Multipliers at a total-space point `(q, p, v)`.
    pub fn multipliers(&self, z: &[f64]) -> Result<Multipliers, ExprError> {
        let p_vals: Vec<f64> = self.constrained_p.iter().map(|&i| z[self.n_q + i]).collect();
        let configuration_formula = match &self.dl_dq {
            Some(fields) => Some(
                fields
                    .iter()
                    .zip(&p_vals)
                    .map(|(f, p)| Ok(f.eval(z)? - p))
                    .collect::<Result<Vec<_>, ExprError>>()?,
            ),
            None => None,
        };
        Ok(Multipliers {
            configuration_formula,
            velocity_formula: p_vals,
        })
    }
}

/// `E = p_A v^A + p_a φᵃ(q, v) − L(q, v)`.
pub fn vakonomic(data: &VakonomicData) -> Result<VakonomicSystem, SystemError> {
    let n_slots = data.p.len();
    if data.free.len() != n_slots {
        return Err(SystemError::Shape("`free` must flag every momentum slot".into()));
    }
    let free: Vec<usize> = (0..n_slots).filter(|&i| data.free[i]).collect();
    let constrained: Vec<usize> = (0..n_slots).filter(|&i| !data.free[i]).collect();
    if data.v.len() != free.len() || data.phi.len() != constrained.len() {
        return Err(SystemError::Shape(format!(
            "{} free slots need {} velocities; {} constrained slots need {} constraint functions",
            free.len(),
            data.v.len(),
            constrained.len(),
            data.phi.len()
        )));
    }
    if data.bundle.is_none() && n_slots != data.q.len() {
        return Err(SystemError::Shape("canonical case needs one momentum per coordinate".into()));
    }
    let lspace = space_of(&[&data.q, &data.v])?;
    let total = space_of(&[&data.q, &data.p, &data.v])?;
    let l = parse(&data.lagrangian, &lspace)?.rebase(&total)?;
    let mut energy = -&l;
    for (j, &slot) in free.iter().enumerate() {
        let term = &ScalarField::variable(&data.p[slot], &total)? * &ScalarField::variable(&data.v[j], &total)?;
        energy = &term + &energy;
    }
    for (j, &slot) in constrained.iter().enumerate() {
        let phi = parse(&data.phi[j], &lspace)?.rebase(&total)?;
        let term = &ScalarField::variable(&data.p[slot], &total)? * &phi;
        energy = &energy + &term;
    }
    let energy = energy.normalized();
    let base: Vec<String> = data.q.iter().chain(&data.p).cloned().collect();
    let bspace = VarSpace::new(&base)?;
    let (dirac, dl_dq) = match &data.bundle {
        None => {
            let dl = constrained
                .iter()
                .map(|&slot| l.diff(&data.q[slot]))
                .collect::<Result<Vec<_>, _>>()?;
            (DiracField::canonical(&bspace)?, Some(dl))
        }
        Some(b) => {
            let (rho, c) = b.fields(&data.q, n_slots, &bspace)?;
            (DiracField::almost_poisson(&bspace, data.q.len(), rho, c)?, None)
        }
    };
    let system = finish(&base, &data.v, &energy, dirac)?;
    Ok(VakonomicSystem {
        system,
        n_q: data.q.len(),
        constrained_p: constrained,
        dl_dq,
    })
}

/// Optimal control with Pontryagin energy `E = p·F(q, u) − L(q, u)`.
#[derive(Debug, Clone)]
pub struct ControlData {
    pub q: Vec<String>,
    pub u: Vec<String>,
    pub p: Vec<String>,
    /// `F^A(q, u)`, one per momentum.
    pub dynamics: Vec<String>,
    pub cost: String,
    pub bundle: Option<BundleData>,
}

/// An optimal-control system with the classification of its energy.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub system: GeneralizedDiracSystem,
    pub classification: Classification,
}

/// The optimal-control system without classification.
pub fn optimal_control_system(data: &ControlData) -> Result<GeneralizedDiracSystem, SystemError> {
    if data.dynamics.len() != data.p.len() {
        return Err(SystemError::Shape("one dynamics component per momentum".into()));
    }
    if data.bundle.is_none() && data.p.len() != data.q.len() {
        return Err(SystemError::Shape("canonical case needs one momentum per coordinate".into()));
    }
    let lspace = space_of(&[&data.q, &data.u])?;
    let total = space_of(&[&data.q, &data.p, &data.u])?;
    let mut energy = -&parse(&data.cost, &lspace)?.rebase(&total)?;
    for (p, f) in data.p.iter().zip(&data.dynamics) {
        let term = &ScalarField::variable(p, &total)? * &parse(f, &lspace)?.rebase(&total)?;
        energy = &energy + &term;
    }
    let base: Vec<String> = data.q.iter().chain(&data.p).cloned().collect();
    let bspace = VarSpace::new(&base)?;
    let dirac = match &data.bundle {
        None => DiracField::canonical(&bspace)?,
        Some(b) => {
            let (rho, c) = b.fields(&data.q, data.p.len(), &bspace)?;
            DiracField::almost_poisson(&bspace, data.q.len(), rho, c)?
        }
    };
    finish(&base, &data.u, &energy, dirac)
}

/// Builds the system and classifies `E` at the fiber-critical points reached
/// from `samples` (total-space guesses, `(q, p, u)`).
pub fn optimal_control(data: &ControlData, samples: &[Vec<f64>]) -> Result<ControlSystem, SystemError> {
    let system = optimal_control_system(data)?;
    let classification = classify_from_guesses(system.family(), samples, DEFAULT_RANK_TOL)?;
    Ok(ControlSystem { system, classification })
}

/// Fiber-solves each guess and classifies the family at the results.
pub fn classify_from_guesses(
    family: &MorseFamily,
    guesses: &[Vec<f64>],
    rank_tol: f64,
) -> Result<Classification, SystemError> {
    let n = family.fibration().n_base();
    let opts = NewtonOptions {
        rank_tol,
        ..NewtonOptions::default()
    };
    let mut points = Vec::with_capacity(guesses.len());
    for g in guesses {
        if g.len() != family.fibration().space().len() {
            return Err(SystemError::Shape(format!("sample of length {}", g.len())));
        }
        let y = family.solve_fiber(&g[..n], &g[n..], &opts)?;
        points.push(g[..n].iter().chain(&y).copied().collect());
    }
    Ok(family.classify(&points, rank_tol)?)
}

/// Dirac structure choices for [`raw`].
#[derive(Debug, Clone)]
pub enum RawDirac {
    /// Base ordered `(q, p)`.
    Canonical,
    /// `Ω_ij` as text over the base.
    TwoForm(Vec<Vec<String>>),
    /// `Λ_ij` as text over the base.
    Bivector(Vec<Vec<String>>),
    /// Base ordered `(q, p)` with `n_q` configuration coordinates.
    AlmostPoisson { n_q: usize, bundle: BundleData },
}

/// Arbitrary energy over `(base, fiber)` with a chosen base structure.
pub fn raw<S: AsRef<str>>(base: &[S], fiber: &[S], energy: &str, dirac: &RawDirac) -> Result<GeneralizedDiracSystem, SystemError> {
    let (base, fiber) = (owned(base), owned(fiber));
    let total = space_of(&[&base, &fiber])?;
    let energy = parse(energy, &total)?;
    let bspace = VarSpace::new(&base)?;
    let matrix = |rows: &Vec<Vec<String>>| -> Result<FieldMatrix, SystemError> {
        if rows.len() != base.len() || rows.iter().any(|r| r.len() != base.len()) {
            return Err(SystemError::Shape(format!("matrix must be {0} x {0}", base.len())));
        }
        let fields = rows
            .iter()
            .map(|r| r.iter().map(|t| parse(t, &bspace)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FieldMatrix::from_rows(fields, &bspace))
    };
    let dirac = match dirac {
        RawDirac::Canonical => DiracField::canonical(&bspace)?,
        RawDirac::TwoForm(m) => DiracField::two_form(matrix(m)?)?,
        RawDirac::Bivector(m) => DiracField::bivector(matrix(m)?)?,
        RawDirac::AlmostPoisson { n_q, bundle } => {
            if *n_q > base.len() {
                return Err(SystemError::Shape("more configuration coordinates than base coordinates".into()));
            }
            let (rho, c) = bundle.fields(&base[..*n_q], base.len() - n_q, &bspace)?;
            DiracField::almost_poisson(&bspace, *n_q, rho, c)?
        }
    };
    finish(&base, &fiber, &energy, dirac)
}

/// Identity anchor and zero structure functions: the canonical case of the
/// bundle builders.
pub fn trivial_bundle(n: usize) -> BundleData {
    BundleData {
        rho: (0..n)
            .map(|i| (0..n).map(|a| if i == a { "1".to_string() } else { "0".to_string() }).collect())
            .collect(),
        c: vec![vec![vec!["0".to_string(); n]; n]; n],
    }
}

/// Matrices of `a ↦ e_A × a`, the action of so(3) on R³ used by the heavy top.
pub fn so3_hat_actions() -> Vec<DMatrix<f64>> {
    (0..3)
        .map(|k| {
            let mut m = DMatrix::zeros(3, 3);
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            m[(j, i)] = 1.0;
            m[(i, j)] = -1.0;
            m
        })
        .collect()
}

/// Typed description of any system the builders produce.
#[derive(Debug, Clone)]
pub enum SystemSpec {
    Lagrangian {
        q: Vec<String>,
        v: Vec<String>,
        p: Vec<String>,
        lagrangian: String,
    },
    Hamiltonian {
        q: Vec<String>,
        p: Vec<String>,
        hamiltonian: String,
    },
    AlmostPoisson {
        q: Vec<String>,
        v: Vec<String>,
        p: Vec<String>,
        bundle: BundleData,
        lagrangian: String,
    },
    AlmostPoissonHamiltonian {
        q: Vec<String>,
        p: Vec<String>,
        bundle: BundleData,
        hamiltonian: String,
    },
    LiePoisson {
        mu: Vec<String>,
        xi: Vec<String>,
        structure_constants: Vec<Vec<Vec<f64>>>,
        sign: LiePoissonSign,
        lagrangian: String,
    },
    Advected {
        a: Vec<String>,
        mu: Vec<String>,
        xi: Vec<String>,
        structure_constants: Vec<Vec<Vec<f64>>>,
        actions: Vec<DMatrix<f64>>,
        lagrangian: String,
    },
    Nonholonomic(NonholonomicData),
    Vakonomic(VakonomicData),
    OptimalControl(ControlData),
    Raw {
        base: Vec<String>,
        fiber: Vec<String>,
        energy: String,
        dirac: RawDirac,
    },
}

impl SystemSpec {
    pub fn build(&self) -> Result<GeneralizedDiracSystem, SystemError> {
        match self {
            SystemSpec::Lagrangian { q, v, p, lagrangian: l } => lagrangian(q, v, p, l),
            SystemSpec::Hamiltonian { q, p, hamiltonian: h } => hamiltonian(q, p, h),
            SystemSpec::AlmostPoisson { q, v, p, bundle, lagrangian } => almost_poisson(q, v, p, bundle, lagrangian),
            SystemSpec::AlmostPoissonHamiltonian { q, p, bundle, hamiltonian } => {
                almost_poisson_hamiltonian(q, p, bundle, hamiltonian)
            }
            SystemSpec::LiePoisson {
                mu,
                xi,
                structure_constants,
                sign,
                lagrangian,
            } => lie_poisson(mu, xi, structure_constants, *sign, lagrangian),
            SystemSpec::Advected {
                a,
                mu,
                xi,
                structure_constants,
                actions,
                lagrangian,
            } => advected(a, mu, xi, structure_constants, actions, lagrangian),
            SystemSpec::Nonholonomic(d) => nonholonomic(d),
            SystemSpec::Vakonomic(d) => Ok(vakonomic(d)?.system),
            SystemSpec::OptimalControl(d) => optimal_control_system(d),
            SystemSpec::Raw { base, fiber, energy, dirac } => raw(base, fiber, energy, dirac),
        }
    }
}
