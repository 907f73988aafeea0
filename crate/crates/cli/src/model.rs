//! Model files: one TOML document per system.

use std::collections::BTreeMap;
use std::path::Path;

use dirac_core::conventions::LiePoissonSign;
use dirac_core::systems::{
    so3_hat_actions, so3_structure_constants, BundleData, ControlData, NonholonomicData, RawDirac, SystemSpec,
    VakonomicData,
};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub preset: String,
    #[serde(default)]
    pub monitors: Vec<String>,
    pub coordinates: Coordinates,
    #[serde(default)]
    pub data: toml::Table,
    pub seed: BTreeMap<String, f64>,
    #[serde(default)]
    pub integrator: IntegratorSection,
    /// Values for gauge fibers, by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gauge: BTreeMap<String, f64>,
    /// Extra total-space guesses used for classification.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coordinates {
    pub base: Vec<String>,
    #[serde(default)]
    pub fiber: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proj_tol: Option<f64>,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_t_final() -> f64 {
    1.0
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            dt: default_dt(),
            t_final: default_t_final(),
            newton_tol: None,
            rank_tol: None,
            proj_tol: None,
        }
    }
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("invalid model file: {}", e)))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Input(format!("cannot serialize model: {}", e)))
    }

    /// Total-space names, base then fiber.
    pub fn total_names(&self) -> Vec<String> {
        self.coordinates.base.iter().chain(&self.coordinates.fiber).cloned().collect()
    }

    fn point_from(&self, values: &BTreeMap<String, f64>, what: &str) -> Result<Vec<f64>, CliError> {
        let names = self.total_names();
        for key in values.keys() {
            if !names.contains(key) {
                return Err(CliError::Input(format!("{} assigns unknown variable `{}`", what, key)));
            }
        }
        names
            .iter()
            .map(|n| {
                values
                    .get(n)
                    .copied()
                    .ok_or_else(|| CliError::Input(format!("{} does not assign variable `{}`", what, n)))
            })
            .collect()
    }

    /// The seed as a total-space point; every variable must be assigned.
    pub fn seed_point(&self) -> Result<Vec<f64>, CliError> {
        self.point_from(&self.seed, "seed")
    }

    pub fn sample_points(&self) -> Result<Vec<Vec<f64>>, CliError> {
        self.samples.iter().map(|s| self.point_from(s, "sample")).collect()
    }

    /// Gauge values as `(fiber index, value)`.
    pub fn gauge_values(&self) -> Result<Vec<(usize, f64)>, CliError> {
        self.gauge
            .iter()
            .map(|(name, &v)| {
                self.coordinates
                    .fiber
                    .iter()
                    .position(|f| f == name)
                    .map(|i| (i, v))
                    .ok_or_else(|| CliError::Input(format!("gauge value for unknown fiber `{}`", name)))
            })
            .collect()
    }

    fn data<T: DeserializeOwned>(&self) -> Result<T, CliError> {
        toml::Value::Table(self.data.clone())
            .try_into()
            .map_err(|e| CliError::Input(format!("invalid data for preset `{}`: {}", self.preset, e)))
    }

    fn split_base(&self, n_first: usize) -> Result<(Vec<String>, Vec<String>), CliError> {
        let base = &self.coordinates.base;
        if n_first > base.len() {
            return Err(CliError::Input(format!(
                "preset `{}` needs at least {} base coordinates",
                self.preset, n_first
            )));
        }
        Ok((base[..n_first].to_vec(), base[n_first..].to_vec()))
    }

    fn halves(&self) -> Result<(Vec<String>, Vec<String>), CliError> {
        let base = &self.coordinates.base;
        if base.len() % 2 != 0 {
            return Err(CliError::Input(format!(
                "preset `{}` needs an even number of base coordinates (q then p)",
                self.preset
            )));
        }
        self.split_base(base.len() / 2)
    }

    /// Typed system description.
    pub fn spec(&self) -> Result<SystemSpec, CliError> {
        let fiber = self.coordinates.fiber.clone();
        let spec = match self.preset.as_str() {
            "lagrangian" => {
                let d: LagrangianData = self.data()?;
                let (q, p) = self.halves()?;
                SystemSpec::Lagrangian {
                    q,
                    v: fiber,
                    p,
                    lagrangian: d.lagrangian,
                }
            }
            "hamiltonian" => {
                let d: HamiltonianData = self.data()?;
                let (q, p) = self.halves()?;
                self.no_fiber()?;
                SystemSpec::Hamiltonian {
                    q,
                    p,
                    hamiltonian: d.hamiltonian,
                }
            }
            "almost_poisson" => {
                let d: AlmostPoissonData = self.data()?;
                let (q, p) = self.split_base(d.n_q)?;
                SystemSpec::AlmostPoisson {
                    q,
                    v: fiber,
                    p,
                    bundle: required_bundle(d.anchor, d.structure)?,
                    lagrangian: d.lagrangian,
                }
            }
            "almost_poisson_hamiltonian" => {
                let d: AlmostPoissonHamiltonianData = self.data()?;
                let (q, p) = self.split_base(d.n_q)?;
                self.no_fiber()?;
                SystemSpec::AlmostPoissonHamiltonian {
                    q,
                    p,
                    bundle: required_bundle(d.anchor, d.structure)?,
                    hamiltonian: d.hamiltonian,
                }
            }
            "lie_poisson" => {
                let d: LiePoissonData = self.data()?;
                SystemSpec::LiePoisson {
                    mu: self.coordinates.base.clone(),
                    xi: fiber,
                    structure_constants: d.algebra.constants()?,
                    sign: d.sign.into(),
                    lagrangian: d.lagrangian,
                }
            }
            "advected" => {
                let d: AdvectedData = self.data()?;
                let (a, mu) = self.split_base(d.n_advected)?;
                let actions = match (&d.action, &d.actions) {
                    (Some(NamedAction::So3Hat), None) => so3_hat_actions(),
                    (None, Some(m)) => m
                        .iter()
                        .map(|rows| matrix(rows))
                        .collect::<Result<Vec<_>, _>>()?,
                    _ => {
                        return Err(CliError::Input(
                            "advected preset needs exactly one of `action` and `actions`".into(),
                        ))
                    }
                };
                SystemSpec::Advected {
                    a,
                    mu,
                    xi: fiber,
                    structure_constants: d.algebra.constants()?,
                    actions,
                    lagrangian: d.lagrangian,
                }
            }
            "nonholonomic" => {
                let d: NonholonomicFileData = self.data()?;
                let (q, p) = self.split_base(d.n_q)?;
                SystemSpec::Nonholonomic(NonholonomicData {
                    q,
                    w: fiber,
                    p,
                    metric: d.metric,
                    frame: d.frame,
                    potential: d.potential,
                    check_points: d.check_points,
                })
            }
            "vakonomic" => {
                let d: VakonomicFileData = self.data()?;
                let (q, p) = self.split_base(d.n_q)?;
                SystemSpec::Vakonomic(VakonomicData {
                    q,
                    p,
                    free: d.free,
                    v: fiber,
                    phi: d.phi,
                    lagrangian: d.lagrangian,
                    bundle: bundle(d.anchor, d.structure)?,
                })
            }
            "optimal_control" => {
                let d: ControlFileData = self.data()?;
                let (q, p) = self.split_base(d.n_q)?;
                SystemSpec::OptimalControl(ControlData {
                    q,
                    u: fiber,
                    p,
                    dynamics: d.dynamics,
                    cost: d.cost,
                    bundle: bundle(d.anchor, d.structure)?,
                })
            }
            "raw" => {
                let d: RawData = self.data()?;
                let dirac = match d.kind.as_str() {
                    "canonical" => RawDirac::Canonical,
                    "two_form" => RawDirac::TwoForm(d.matrix.ok_or_else(|| missing("matrix"))?),
                    "bivector" => RawDirac::Bivector(d.matrix.ok_or_else(|| missing("matrix"))?),
                    "almost_poisson" => RawDirac::AlmostPoisson {
                        n_q: d.n_q.ok_or_else(|| missing("n_q"))?,
                        bundle: required_bundle(d.anchor, d.structure)?,
                    },
                    other => return Err(CliError::Input(format!("unknown raw structure kind `{}`", other))),
                };
                SystemSpec::Raw {
                    base: self.coordinates.base.clone(),
                    fiber,
                    energy: d.energy,
                    dirac,
                }
            }
            other => return Err(CliError::Input(format!("unknown preset `{}`", other))),
        };
        Ok(spec)
    }

    fn no_fiber(&self) -> Result<(), CliError> {
        if self.coordinates.fiber.is_empty() {
            Ok(())
        } else {
            Err(CliError::Input(format!("preset `{}` takes no fiber coordinates", self.preset)))
        }
    }
}

fn missing(what: &str) -> CliError {
    CliError::Input(format!("raw preset is missing `{}`", what))
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Input("action matrices must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LagrangianData {
    lagrangian: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HamiltonianData {
    hamiltonian: String,
}

type Anchor = Option<Vec<Vec<String>>>;
type Structure = Option<Vec<Vec<Vec<String>>>>;

/// Both or neither of `anchor` and `structure`.
fn bundle(anchor: Anchor, structure: Structure) -> Result<Option<BundleData>, CliError> {
    match (anchor, structure) {
        (Some(rho), Some(c)) => Ok(Some(BundleData { rho, c })),
        (None, None) => Ok(None),
        _ => Err(CliError::Input("`anchor` and `structure` must be given together".into())),
    }
}

fn required_bundle(anchor: Anchor, structure: Structure) -> Result<BundleData, CliError> {
    bundle(anchor, structure)?.ok_or_else(|| CliError::Input("preset needs `anchor` and `structure`".into()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlmostPoissonData {
    n_q: usize,
    lagrangian: String,
    #[serde(default)]
    anchor: Anchor,
    #[serde(default)]
    structure: Structure,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlmostPoissonHamiltonianData {
    n_q: usize,
    hamiltonian: String,
    #[serde(default)]
    anchor: Anchor,
    #[serde(default)]
    structure: Structure,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Algebra {
    Named(String),
    Constants(Vec<Vec<Vec<f64>>>),
}

impl Algebra {
    fn constants(&self) -> Result<Vec<Vec<Vec<f64>>>, CliError> {
        match self {
            Algebra::Named(n) if n == "so3" => Ok(so3_structure_constants()),
            Algebra::Named(n) => Err(CliError::Input(format!("unknown algebra `{}`", n))),
            Algebra::Constants(c) => Ok(c.clone()),
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum SignName {
    Plus,
    Minus,
}

impl From<SignName> for LiePoissonSign {
    fn from(s: SignName) -> Self {
        match s {
            SignName::Plus => LiePoissonSign::Plus,
            SignName::Minus => LiePoissonSign::Minus,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LiePoissonData {
    algebra: Algebra,
    sign: SignName,
    lagrangian: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum NamedAction {
    So3Hat,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvectedData {
    n_advected: usize,
    algebra: Algebra,
    #[serde(default)]
    action: Option<NamedAction>,
    #[serde(default)]
    actions: Option<Vec<Vec<Vec<f64>>>>,
    lagrangian: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NonholonomicFileData {
    n_q: usize,
    metric: Vec<Vec<String>>,
    frame: Vec<Vec<String>>,
    #[serde(default = "zero_text")]
    potential: String,
    #[serde(default)]
    check_points: Vec<Vec<f64>>,
}

fn zero_text() -> String {
    "0".to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VakonomicFileData {
    n_q: usize,
    free: Vec<bool>,
    #[serde(default)]
    phi: Vec<String>,
    lagrangian: String,
    #[serde(default)]
    anchor: Anchor,
    #[serde(default)]
    structure: Structure,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlFileData {
    n_q: usize,
    dynamics: Vec<String>,
    cost: String,
    #[serde(default)]
    anchor: Anchor,
    #[serde(default)]
    structure: Structure,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    energy: String,
    kind: String,
    #[serde(default)]
    matrix: Option<Vec<Vec<String>>>,
    #[serde(default)]
    n_q: Option<usize>,
    #[serde(default)]
    anchor: Anchor,
    #[serde(default)]
    structure: Structure,
}
