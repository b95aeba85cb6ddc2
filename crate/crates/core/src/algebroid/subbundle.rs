use nalgebra::{DMatrix, DVector};

use super::LieAlgebroid;
use crate::error::{check_len, Error, Result};
use crate::linalg::numerical_rank;
use crate::sampling::SampleBox;
use crate::smooth::MatrixField;

/// Least-squares residual below which a subbundle counts as closed under the bracket.
pub const SUBALGEBROID_THRESHOLD: f64 = 1e-10;

const RANK_TOL: f64 = 1e-10;

/// A rank-`k` subbundle `W` of an algebroid, given by its injection `i^a_A(x)`.
#[derive(Clone, Debug)]
pub struct Subbundle {
    parent: LieAlgebroid,
    injection: MatrixField,
}

impl Subbundle {
    pub fn new(parent: &LieAlgebroid, injection: MatrixField) -> Result<Self> {
        let (m, n) = (parent.rank(), parent.base_dim());
        if injection.shape().0 != m || injection.arity() != n {
            return Err(Error::InvalidInput(format!(
                "injection must have {m} rows over {n} coordinates, got {:?} over {}",
                injection.shape(),
                injection.arity()
            )));
        }
        if injection.shape().1 > m {
            return Err(Error::SingularInjection {
                rank: m,
                k: injection.shape().1,
            });
        }
        Ok(Subbundle {
            parent: parent.clone(),
            injection,
        })
    }

    /// `W = V`.
    pub fn identity(parent: &LieAlgebroid) -> Self {
        Subbundle {
            parent: parent.clone(),
            injection: MatrixField::identity(parent.rank(), parent.base_dim()),
        }
    }

    pub fn parent(&self) -> &LieAlgebroid {
        &self.parent
    }

    pub fn rank(&self) -> usize {
        self.injection.shape().1
    }

    pub fn injection(&self) -> &MatrixField {
        &self.injection
    }

    pub fn injection_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.injection.value(x)
    }

    /// Injection at `x`, failing if its columns are numerically dependent.
    pub fn checked_injection_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let inj = self.injection_at(x)?;
        let k = self.rank();
        let rank = numerical_rank(&inj, RANK_TOL);
        if rank < k {
            return Err(Error::SingularInjection { rank, k });
        }
        Ok(inj)
    }

    /// Restricted anchor `lambda^i_A = rho^i_a i^a_A`.
    pub fn restricted_anchor(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.parent.anchor_at(x)? * self.injection_at(x)?)
    }

    /// Checks full column rank at seeded sample points.
    pub fn check_rank(&self, sample_box: &SampleBox, n_samples: usize, seed: u64) -> Result<()> {
        check_len("sample box dimension", self.parent.base_dim(), sample_box.dim())?;
        for x in sample_box.sample(n_samples, seed) {
            self.checked_injection_at(&x)?;
        }
        Ok(())
    }

    /// Components of `[e_A, e_B]` in the parent frame at `x`: slice `c` holds
    /// `D^c_AB + lambda^i_A d_i i^c_B - lambda^i_B d_i i^c_A`.
    pub fn bracket_components(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let (m, k) = (self.parent.rank(), self.rank());
        let (inj, inj_grad) = self.injection.value_and_gradient(x)?;
        let lambda = self.parent.anchor_at(x)? * &inj;
        let structure = self.parent.structure_at(x)?;
        let mut out = Vec::with_capacity(m);
        for (c, slice) in structure.iter().enumerate() {
            let mut t = inj.transpose() * slice * &inj;
            for cap in 0..k {
                for b in 0..k {
                    let mut s = 0.0;
                    for (i, g) in inj_grad.iter().enumerate() {
                        s += lambda[(i, cap)] * g[(c, b)] - lambda[(i, b)] * g[(c, cap)];
                    }
                    t[(cap, b)] += s;
                }
            }
            out.push(t);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct SubalgebroidDefect {
    /// Induced structure slices `D^C_AB`, present only when `defect` is below
    /// [`SUBALGEBROID_THRESHOLD`].
    pub induced: Option<Vec<DMatrix<f64>>>,
    pub defect: f64,
}

/// Measures how far `W` is from being closed under the bracket at `x`.
///
/// Brackets of the frame of `W` are expanded in the parent frame and projected
/// back onto the columns of the injection by least squares; the defect is the
/// infinity norm of what remains.
pub fn subalgebroid_defect(w: &Subbundle, x: &[f64]) -> Result<SubalgebroidDefect> {
    let inj = w.checked_injection_at(x)?;
    let (m, k) = (w.parent.rank(), w.rank());
    let t = w.bracket_components(x)?;
    let qr = inj.clone().col_piv_qr();
    let q = qr.q();
    let r = qr.r();
    let p = qr.p();
    let mut induced = vec![DMatrix::zeros(k, k); k];
    let mut defect = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            let rhs = DVector::from_fn(m, |c, _| t[c][(a, b)]);
            let mut d = r
                .solve_upper_triangular(&(q.transpose() * &rhs))
                .ok_or(Error::SingularInjection { rank: k - 1, k })?;
            p.inv_permute_rows(&mut d);
            defect = defect.max((&inj * &d - &rhs).amax());
            for (cc, slice) in induced.iter_mut().enumerate() {
                slice[(a, b)] = d[cc];
            }
        }
    }
    Ok(SubalgebroidDefect {
        induced: (defect <= SUBALGEBROID_THRESHOLD).then_some(induced),
        defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::so3_constants;
    use crate::smooth::Jet;

    #[test]
    fn identity_subbundle_induces_parent_structure() {
        let a = LieAlgebroid::lie_algebra(&so3_constants()).unwrap();
        let d = subalgebroid_defect(&Subbundle::identity(&a), &[]).unwrap();
        assert_eq!(d.defect, 0.0);
        let induced = d.induced.unwrap();
        for (c, slice) in induced.iter().enumerate() {
            assert!((slice - &so3_constants()[c]).amax() < 1e-15);
        }
    }

    #[test]
    fn single_coordinate_direction_is_a_subalgebroid() {
        let a = LieAlgebroid::tangent(2);
        let inj = MatrixField::constant(&DMatrix::from_row_slice(2, 1, &[1.0, 0.0]), 2);
        let d = subalgebroid_defect(&Subbundle::new(&a, inj).unwrap(), &[0.3, -0.2]).unwrap();
        assert_eq!(d.defect, 0.0);
        assert_eq!(d.induced.unwrap(), vec![DMatrix::zeros(1, 1)]);
    }

    fn contact_distribution() -> Subbundle {
        // span(d/dx + y d/dz, d/dy)
        let inj = MatrixField::from_fn(3, 2, 3, |x| {
            vec![
                Jet::constant(1.0),
                Jet::constant(0.0),
                Jet::constant(0.0),
                Jet::constant(1.0),
                x[1].clone(),
                Jet::constant(0.0),
            ]
        });
        Subbundle::new(&LieAlgebroid::tangent(3), inj).unwrap()
    }

    #[test]
    fn contact_distribution_is_not_involutive() {
        let w = contact_distribution();
        let d = subalgebroid_defect(&w, &[0.1, 0.0, -0.3]).unwrap();
        assert!((d.defect - 1.0).abs() < 1e-14, "{}", d.defect);
        assert!(d.induced.is_none());
        // [e_1, e_2] = -d/dz; residual off W is (y, 0, -1) / (1 + y^2) up to sign
        let y: f64 = 0.5;
        let d = subalgebroid_defect(&w, &[0.0, y, 0.0]).unwrap();
        assert!((d.defect - 1.0 / (1.0 + y * y)).abs() < 1e-14);
    }

    #[test]
    fn bracket_components_match_vector_field_bracket() {
        let t = contact_distribution().bracket_components(&[0.0, 0.7, 0.0]).unwrap();
        // [d/dx + y d/dz, d/dy] = -d/dz
        assert_eq!(t[2][(0, 1)], -1.0);
        assert_eq!(t[2][(1, 0)], 1.0);
        assert_eq!(t[0].amax() + t[1].amax(), 0.0);
    }

    #[test]
    fn rank_deficient_injection_is_rejected() {
        let inj = MatrixField::from_fn(2, 2, 2, |x| {
            vec![Jet::constant(1.0), Jet::constant(1.0), x[0].clone(), x[0].clone()]
        });
        let w = Subbundle::new(&LieAlgebroid::tangent(2), inj).unwrap();
        assert!(matches!(
            subalgebroid_defect(&w, &[0.5, 0.0]),
            Err(Error::SingularInjection { rank: 1, k: 2 })
        ));
        assert!(w.check_rank(&SampleBox::cube(2, -1.0, 1.0), 5, 0).is_err());
    }
}
