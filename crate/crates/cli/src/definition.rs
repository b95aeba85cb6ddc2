//! JSON system definitions.
//!
//! Every coefficient is an [`Entry`]: either a number or a list of terms
//! `c * prod x_i^pow_i * prod sin(x_j) * prod cos(x_k)`, where `sin` and `cos`
//! list coordinate indices (repeats allowed).
//!
//! ```json
//! {
//!   "schema": 1,
//!   "name": "oscillator",
//!   "n": 1, "m": 1, "k": 1,
//!   "anchor": [[1]],
//!   "mass": [[1]],
//!   "potential": [{"c": 0.5, "pow": [2]}],
//!   "initial": {"x": [1], "w": [0], "p": [0]}
//! }
//! ```

use std::path::Path;

use algebroid_mechanics::algebroid::{build_atiyah, LieAlgebroid, PrincipalBundleData, Subbundle};
use algebroid_mechanics::dynamics::{ConstrainedState, LagrangianSystem};
use algebroid_mechanics::optimal_control::{ExtremalState, MechanicalLagrangian};
use algebroid_mechanics::sampling::SampleBox;
use algebroid_mechanics::smooth::{Jet, MatrixField, ScalarField};
use nalgebra::DMatrix;
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DefinitionError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed definition: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {0}, expected {SCHEMA_VERSION}")]
    Schema(u32),
    #[error("invalid definition: {0}")]
    Invalid(String),
    #[error(transparent)]
    Library(#[from] algebroid_mechanics::Error),
}

type Result<T> = std::result::Result<T, DefinitionError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DefinitionError::Invalid(msg.into()))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub c: f64,
    #[serde(default)]
    pub pow: Vec<u32>,
    #[serde(default)]
    pub sin: Vec<usize>,
    #[serde(default)]
    pub cos: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Constant(f64),
    Terms(Vec<Term>),
}

pub type Table = Vec<Vec<Entry>>;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtiyahBlock {
    /// Slices `C^g_ab` of the Lie algebra, one `r x r` matrix per `g`.
    pub lie_constants: Vec<Vec<Vec<f64>>>,
    /// Connection coefficients `A^a_i`, `r x n`.
    pub connection: Table,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Definition {
    pub schema: u32,
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// `n x m`; required unless `atiyah` is given.
    #[serde(default)]
    pub anchor: Option<Table>,
    /// `m` slices of `m x m`; zero when omitted.
    #[serde(default)]
    pub structure: Option<Vec<Table>>,
    #[serde(default)]
    pub atiyah: Option<AtiyahBlock>,
    /// `m x k`; identity when omitted.
    #[serde(default)]
    pub injection: Option<Table>,
    /// Metric `g_ab(x)` of the kinetic energy `1/2 v^T g v`, `m x m`.
    #[serde(default)]
    pub mass: Option<Table>,
    #[serde(default)]
    pub potential: Option<Entry>,
    /// Base-point box; `[-1, 1]^n` when omitted.
    #[serde(default, rename = "box")]
    pub sample_box: Option<BoxSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
}

/// A parsed definition turned into library objects.
#[derive(Clone, Debug)]
pub struct CustomSystem {
    pub name: String,
    pub algebroid: LieAlgebroid,
    pub base_box: SampleBox,
    pub system: Option<LagrangianSystem>,
    pub mechanical: Option<MechanicalLagrangian>,
    pub extremal_initial: Option<ExtremalState>,
}

impl Entry {
    fn check(&self, n: usize, at: &str) -> Result<()> {
        if let Entry::Terms(terms) = self {
            for t in terms {
                if t.pow.len() > n || t.sin.iter().chain(&t.cos).any(|&i| i >= n) {
                    return invalid(format!("{at}: term refers to a coordinate beyond n = {n}"));
                }
            }
        }
        Ok(())
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Entry::Constant(c) => Some(*c),
            Entry::Terms(t) if t.is_empty() => Some(0.0),
            Entry::Terms(t) if t.iter().all(|t| t.pow.iter().all(|&p| p == 0) && t.sin.is_empty() && t.cos.is_empty()) => {
                Some(t.iter().map(|t| t.c).sum())
            }
            Entry::Terms(_) => None,
        }
    }

    pub fn eval(&self, x: &[Jet]) -> Jet {
        match self {
            Entry::Constant(c) => Jet::constant(*c),
            Entry::Terms(terms) => terms
                .iter()
                .map(|t| {
                    let mut acc = Jet::constant(t.c);
                    for (i, &p) in t.pow.iter().enumerate() {
                        if p > 0 {
                            acc = acc * x[i].powi(p as i32);
                        }
                    }
                    for &i in &t.sin {
                        acc = acc * x[i].sin();
                    }
                    for &i in &t.cos {
                        acc = acc * x[i].cos();
                    }
                    acc
                })
                .sum(),
        }
    }
}

fn matrix_field(table: &Table, rows: usize, cols: usize, n: usize, what: &str) -> Result<MatrixField> {
    if table.len() != rows || table.iter().any(|r| r.len() != cols) {
        return invalid(format!("{what} must be {rows}x{cols}"));
    }
    for (i, row) in table.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            e.check(n, &format!("{what}[{i}][{j}]"))?;
        }
    }
    let constants: Option<Vec<f64>> = table.iter().flatten().map(Entry::constant).collect();
    if let Some(values) = constants {
        return Ok(MatrixField::constant(&DMatrix::from_row_slice(rows, cols, &values), n));
    }
    let entries: Vec<Entry> = table.iter().flatten().cloned().collect();
    Ok(MatrixField::from_fn(rows, cols, n, move |x| {
        entries.iter().map(|e| e.eval(x)).collect()
    }))
}

impl Definition {
    pub fn from_json(text: &str) -> Result<Self> {
        let def: Definition = serde_json::from_str(text)?;
        if def.schema != SCHEMA_VERSION {
            return Err(DefinitionError::Schema(def.schema));
        }
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DefinitionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Definition::from_json(&text)
    }

    fn algebroid(&self) -> Result<LieAlgebroid> {
        let (n, m) = (self.n, self.m);
        match (&self.atiyah, &self.anchor, &self.structure) {
            (Some(at), None, None) => {
                let r = at.lie_constants.len();
                if n + r != m {
                    return invalid(format!("Atiyah algebroid has rank n + r = {}, but m = {m}", n + r));
                }
                let mut constants = Vec::with_capacity(r);
                for (g, slice) in at.lie_constants.iter().enumerate() {
                    if slice.len() != r || slice.iter().any(|row| row.len() != r) {
                        return invalid(format!("lie_constants[{g}] must be {r}x{r}"));
                    }
                    constants.push(DMatrix::from_fn(r, r, |i, j| slice[i][j]));
                }
                let conn = matrix_field(&at.connection, r, n, n, "connection")?;
                Ok(build_atiyah(&PrincipalBundleData::new(n, r, constants, conn)?)?)
            }
            (Some(_), _, _) => invalid("atiyah excludes anchor and structure"),
            (None, None, _) => invalid("anchor is required without an atiyah block"),
            (None, Some(anchor), structure) => {
                let anchor = matrix_field(anchor, n, m, n, "anchor")?;
                let structure = match structure {
                    None => vec![MatrixField::zeros(m, m, n); m],
                    Some(slices) if slices.len() == m => slices
                        .iter()
                        .enumerate()
                        .map(|(c, s)| matrix_field(s, m, m, n, &format!("structure[{c}]")))
                        .collect::<Result<_>>()?,
                    Some(slices) => return invalid(format!("structure needs {m} slices, got {}", slices.len())),
                };
                Ok(LieAlgebroid::new(n, m, anchor, structure)?)
            }
        }
    }

    fn base_box(&self) -> Result<SampleBox> {
        match &self.sample_box {
            None => Ok(SampleBox::cube(self.n, -1.0, 1.0)),
            Some(b) if b.lo.len() == self.n && b.hi.len() == self.n => Ok(SampleBox::new(b.lo.clone(), b.hi.clone())?),
            Some(_) => invalid(format!("box bounds must have {} entries", self.n)),
        }
    }

    /// Builds the algebroid and, when a mass matrix is given, the mechanical
    /// system on the subbundle.
    pub fn resolve(&self) -> Result<CustomSystem> {
        let (n, m, k) = (self.n, self.m, self.k);
        let algebroid = self.algebroid()?;
        let base_box = self.base_box()?;
        if let Some(p) = &self.potential {
            p.check(n, "potential")?;
        }
        let mechanical = match &self.mass {
            None => None,
            Some(mass) => {
                let metric = matrix_field(mass, m, m, n, "mass")?;
                let potential = self.potential.clone().unwrap_or(Entry::Constant(0.0));
                Some(MechanicalLagrangian::new(metric, ScalarField::new(n, move |x| potential.eval(x)))?)
            }
        };
        let injection = match &self.injection {
            Some(t) => matrix_field(t, m, k, n, "injection")?,
            None if k == m => MatrixField::identity(m, n),
            None => return invalid("injection is required when k != m"),
        };
        let subbundle = Subbundle::new(&algebroid, injection)?;
        let initial: Vec<ConstrainedState> = self
            .initial
            .iter()
            .map(|s| ConstrainedState::new(s.x.clone(), s.w.clone()))
            .collect();
        let system = match &mechanical {
            None => None,
            Some(mech) => {
                let mut lo = base_box.lo.clone();
                let mut hi = base_box.hi.clone();
                lo.extend(std::iter::repeat_n(-1.0, k));
                hi.extend(std::iter::repeat_n(1.0, k));
                Some(LagrangianSystem::new(
                    &self.name,
                    subbundle,
                    mech.lagrangian(),
                    SampleBox::new(lo, hi)?,
                    initial,
                )?)
            }
        };
        let extremal_initial = self
            .initial
            .as_ref()
            .and_then(|s| s.p.as_ref().map(|p| ExtremalState::new(s.x.clone(), p.clone())));
        Ok(CustomSystem {
            name: self.name.clone(),
            algebroid,
            base_box,
            system,
            mechanical,
            extremal_initial,
        })
    }
}
