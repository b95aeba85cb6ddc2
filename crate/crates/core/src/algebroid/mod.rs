//! Lie algebroids in local coordinates.
//!
//! An algebroid over an `n`-dimensional base with fibre rank `m` is described
//! by its anchor `rho^i_a(x)` (an `n x m` matrix field) and its structure
//! functions `C^c_ab(x)`, stored as `m` slices where slice `c` is the `m x m`
//! matrix `C^c_..`. Lie algebras are algebroids with `n = 0`.

mod atiyah;
mod forms;
mod subbundle;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::sampling::SampleBox;
use crate::smooth::MatrixField;

pub use atiyah::{build_atiyah, curvature, PrincipalBundleData};
pub use forms::{
    d2_residual, d_function, d_one_form, delta_of_function, delta_of_one_form, OneForm,
};
pub use subbundle::{subalgebroid_defect, SubalgebroidDefect, Subbundle, SUBALGEBROID_THRESHOLD};

#[derive(Clone, Debug)]
pub struct LieAlgebroid {
    n: usize,
    m: usize,
    anchor: MatrixField,
    structure: Vec<MatrixField>,
}

/// Anchor and structure functions at one base point, with first derivatives.
///
/// `anchor_grad[k]` and `structure_grad[c][k]` are partials along `x^k`.
#[derive(Clone, Debug)]
pub struct LocalStructure {
    pub anchor: DMatrix<f64>,
    pub anchor_grad: Vec<DMatrix<f64>>,
    pub structure: Vec<DMatrix<f64>>,
    pub structure_grad: Vec<Vec<DMatrix<f64>>>,
}

impl LieAlgebroid {
    pub fn new(n: usize, m: usize, anchor: MatrixField, structure: Vec<MatrixField>) -> Result<Self> {
        if anchor.shape() != (n, m) || anchor.arity() != n {
            return Err(Error::InvalidInput(format!(
                "anchor must be a {n}x{m} field over {n} coordinates, got {:?} over {}",
                anchor.shape(),
                anchor.arity()
            )));
        }
        check_len("structure slices", m, structure.len())?;
        for (c, s) in structure.iter().enumerate() {
            if s.shape() != (m, m) || s.arity() != n {
                return Err(Error::InvalidInput(format!(
                    "structure slice {c} must be {m}x{m} over {n} coordinates"
                )));
            }
        }
        Ok(LieAlgebroid {
            n,
            m,
            anchor,
            structure,
        })
    }

    /// Tangent bundle of `R^n` in the coordinate frame: identity anchor, zero brackets.
    pub fn tangent(n: usize) -> Self {
        LieAlgebroid {
            n,
            m: n,
            anchor: MatrixField::identity(n, n),
            structure: vec![MatrixField::zeros(n, n, n); n],
        }
    }

    /// A Lie algebra viewed as an algebroid over a point. `constants[c]` is `C^c_..`.
    pub fn lie_algebra(constants: &[DMatrix<f64>]) -> Result<Self> {
        let m = constants.len();
        let structure = constants
            .iter()
            .map(|c| {
                if c.shape() != (m, m) {
                    return Err(Error::InvalidInput(format!(
                        "structure constant slice must be {m}x{m}"
                    )));
                }
                Ok(MatrixField::constant(c, 0))
            })
            .collect::<Result<Vec<_>>>()?;
        LieAlgebroid::new(0, m, MatrixField::zeros(0, m, 0), structure)
    }

    /// Base dimension `n`.
    pub fn base_dim(&self) -> usize {
        self.n
    }

    /// Fibre rank `m`.
    pub fn rank(&self) -> usize {
        self.m
    }

    pub fn anchor(&self) -> &MatrixField {
        &self.anchor
    }

    pub fn structure(&self) -> &[MatrixField] {
        &self.structure
    }

    pub fn is_constant(&self) -> bool {
        self.anchor.is_constant() && self.structure.iter().all(MatrixField::is_constant)
    }

    pub fn anchor_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.anchor.value(x)
    }

    pub fn structure_at(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.structure.iter().map(|s| s.value(x)).collect()
    }

    pub fn local(&self, x: &[f64]) -> Result<LocalStructure> {
        let (anchor, anchor_grad) = self.anchor.value_and_gradient(x)?;
        let mut structure = Vec::with_capacity(self.m);
        let mut structure_grad = Vec::with_capacity(self.m);
        for s in &self.structure {
            let (v, g) = s.value_and_gradient(x)?;
            structure.push(v);
            structure_grad.push(g);
        }
        Ok(LocalStructure {
            anchor,
            anchor_grad,
            structure,
            structure_grad,
        })
    }
}

/// Largest residual of one axiom over the sampled points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomResidual {
    pub max: f64,
    pub worst_point: Vec<f64>,
}

impl AxiomResidual {
    fn new() -> Self {
        AxiomResidual {
            max: 0.0,
            worst_point: Vec::new(),
        }
    }

    fn record(&mut self, r: f64, x: &[f64]) {
        // NaN must surface as a failure
        if r > self.max || r.is_nan() {
            self.max = r;
            self.worst_point = x.to_vec();
        } else if self.worst_point.is_empty() && !x.is_empty() {
            self.worst_point = x.to_vec();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    pub antisymmetry: AxiomResidual,
    pub anchor_compatibility: AxiomResidual,
    pub jacobi: AxiomResidual,
}

impl ValidationReport {
    pub fn max_residual(&self) -> f64 {
        self.axioms()
            .iter()
            .map(|(_, r)| r.max)
            .fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) })
    }

    pub fn axioms(&self) -> [(&'static str, &AxiomResidual); 3] {
        [
            ("antisymmetry", &self.antisymmetry),
            ("anchor_compatibility", &self.anchor_compatibility),
            ("jacobi", &self.jacobi),
        ]
    }

    /// Names of the axioms whose residual is not below `threshold`.
    pub fn failing(&self, threshold: f64) -> Vec<&'static str> {
        self.axioms()
            .into_iter()
            .filter(|(_, r)| !(r.max < threshold))
            .map(|(name, _)| name)
            .collect()
    }
}

/// Antisymmetry, anchor-compatibility and Jacobi residuals at one base point.
pub fn axiom_residuals(a: &LieAlgebroid, x: &[f64]) -> Result<[f64; 3]> {
    let (n, m) = (a.n, a.m);
    let loc = a.local(x)?;
    let c = &loc.structure;

    let mut anti = 0.0f64;
    for slice in c {
        anti = anti.max((slice + slice.transpose()).amax());
    }

    // rho^j_a d_j rho^i_b - rho^j_b d_j rho^i_a - C^c_ab rho^i_c
    let mut anchor = 0.0f64;
    for av in 0..m {
        for bv in 0..m {
            for i in 0..n {
                let mut r = 0.0;
                for j in 0..n {
                    r += loc.anchor[(j, av)] * loc.anchor_grad[j][(i, bv)]
                        - loc.anchor[(j, bv)] * loc.anchor_grad[j][(i, av)];
                }
                for (cc, slice) in c.iter().enumerate() {
                    r -= slice[(av, bv)] * loc.anchor[(i, cc)];
                }
                anchor = anchor.max(r.abs());
            }
        }
    }

    // cyclic sum over (a, b, d) of C^e_ab C^c_ed - rho^i_a d_i C^c_bd
    let term = |av: usize, bv: usize, dv: usize, cv: usize| -> f64 {
        let mut t = 0.0;
        for (e, slice) in c.iter().enumerate() {
            t += slice[(av, bv)] * c[cv][(e, dv)];
        }
        for i in 0..n {
            t -= loc.anchor[(i, av)] * loc.structure_grad[cv][i][(bv, dv)];
        }
        t
    };
    let mut jacobi = 0.0f64;
    for av in 0..m {
        for bv in 0..m {
            for dv in 0..m {
                for cv in 0..m {
                    let r = term(av, bv, dv, cv) + term(bv, dv, av, cv) + term(dv, av, bv, cv);
                    jacobi = jacobi.max(r.abs());
                }
            }
        }
    }
    Ok([anti, anchor, jacobi])
}

/// Checks the algebroid axioms at `n_samples` seeded uniform points of `sample_box`.
///
/// A broken algebroid is not an error: it yields large residuals.
pub fn validate_algebroid(
    a: &LieAlgebroid,
    sample_box: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("validation needs at least one sample".into()));
    }
    check_len("sample box dimension", a.n, sample_box.dim())?;
    let mut report = ValidationReport {
        samples: n_samples,
        seed,
        antisymmetry: AxiomResidual::new(),
        anchor_compatibility: AxiomResidual::new(),
        jacobi: AxiomResidual::new(),
    };
    for x in sample_box.sample(n_samples, seed) {
        let [anti, anchor, jacobi] = axiom_residuals(a, &x)?;
        report.antisymmetry.record(anti, &x);
        report.anchor_compatibility.record(anchor, &x);
        report.jacobi.record(jacobi, &x);
    }
    Ok(report)
}

/// Structure constants of so(3): `C^c_ab = eps_abc`.
pub fn so3_constants() -> Vec<DMatrix<f64>> {
    let mut c = vec![DMatrix::zeros(3, 3); 3];
    for (a, b, cc) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        c[cc][(a, b)] = 1.0;
        c[cc][(b, a)] = -1.0;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::Jet;

    /// rho(e1) = d/dx1, rho(e2) = x1 d/dx2 with C = 0: the anchor is not a bracket morphism.
    pub(crate) fn broken_algebroid() -> LieAlgebroid {
        let anchor = MatrixField::from_fn(2, 2, 2, |x| {
            vec![Jet::constant(1.0), Jet::constant(0.0), Jet::constant(0.0), x[0].clone()]
        });
        LieAlgebroid::new(2, 2, anchor, vec![MatrixField::zeros(2, 2, 2); 2]).unwrap()
    }

    #[test]
    fn tangent_algebroid_is_valid() {
        let r = validate_algebroid(&LieAlgebroid::tangent(2), &SampleBox::cube(2, -1.0, 1.0), 20, 1)
            .unwrap();
        assert_eq!(r.max_residual(), 0.0);
    }

    #[test]
    fn so3_over_a_point_is_valid() {
        let a = LieAlgebroid::lie_algebra(&so3_constants()).unwrap();
        let r = validate_algebroid(&a, &SampleBox::cube(0, -1.0, 1.0), 5, 0).unwrap();
        assert_eq!(r.max_residual(), 0.0);
    }

    #[test]
    fn broken_anchor_has_unit_compatibility_residual() {
        let r = validate_algebroid(&broken_algebroid(), &SampleBox::cube(2, -1.0, 1.0), 30, 3).unwrap();
        assert_eq!(r.anchor_compatibility.max, 1.0);
        assert_eq!(r.antisymmetry.max, 0.0);
        assert_eq!(r.failing(1e-7), vec!["anchor_compatibility"]);
        for x in SampleBox::cube(2, -1.0, 1.0).sample(10, 4) {
            assert_eq!(axiom_residuals(&broken_algebroid(), &x).unwrap()[1], 1.0);
        }
    }

    #[test]
    fn non_antisymmetric_structure_is_reported() {
        let mut c = so3_constants();
        c[2][(1, 0)] = 0.5;
        let a = LieAlgebroid::lie_algebra(&c).unwrap();
        let r = validate_algebroid(&a, &SampleBox::cube(0, 0.0, 0.0), 1, 0).unwrap();
        assert!(r.antisymmetry.max > 1.0);
        assert!(r.failing(1e-7).contains(&"antisymmetry"));
    }

    #[test]
    fn zero_samples_rejected() {
        let err = validate_algebroid(&LieAlgebroid::tangent(1), &SampleBox::cube(1, -1.0, 1.0), 0, 0);
        assert!(err.is_err());
    }

    #[test]
    fn shape_checks_on_construction() {
        let bad = LieAlgebroid::new(2, 2, MatrixField::identity(3, 2), vec![MatrixField::zeros(2, 2, 2); 2]);
        assert!(bad.is_err());
        let bad = LieAlgebroid::new(2, 2, MatrixField::identity(2, 2), vec![MatrixField::zeros(2, 2, 2)]);
        assert!(bad.is_err());
    }
}
