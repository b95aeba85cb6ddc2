use nalgebra::{DMatrix, DVector};

use super::{LieAlgebroid, Subbundle};
use crate::error::{check_len, Error, Result};
use crate::smooth::{Jet, MatrixField, ScalarField};

/// A 1-form on sections of an algebroid: coefficient `theta_a(x)` stored as an `m x 1` field.
#[derive(Clone, Debug)]
pub struct OneForm {
    coefficients: MatrixField,
}

impl OneForm {
    pub fn new(coefficients: MatrixField) -> Result<Self> {
        if coefficients.shape().1 != 1 {
            return Err(Error::InvalidInput(format!(
                "1-form coefficients must be a column field, got shape {:?}",
                coefficients.shape()
            )));
        }
        Ok(OneForm { coefficients })
    }

    /// The exact form `df`, `(df)_a = rho^i_a df/dx^i`, as a field exact to first order.
    pub fn exact(a: &LieAlgebroid, f: &ScalarField) -> Result<Self> {
        check_len("scalar field arity", a.base_dim(), f.arity())?;
        let (n, m) = (a.base_dim(), a.rank());
        let anchor = a.anchor().clone();
        let f = f.clone();
        let field = MatrixField::from_fn(m, 1, n, move |x| {
            let x0: Vec<f64> = x.iter().map(Jet::value).collect();
            let local = f.evaluate_jet(&x0).expect("arity checked at construction");
            let partials: Vec<Jet> = (0..n)
                .map(|j| {
                    let row: Vec<f64> = (0..n).map(|i| local.hessian[(j, i)]).collect();
                    Jet::compose(local.gradient[j], &row, None, x)
                })
                .collect();
            let rho = anchor.eval_jets(x);
            (0..m)
                .map(|av| (0..n).map(|j| &rho[j * m + av] * &partials[j]).sum())
                .collect()
        });
        Ok(OneForm { coefficients: field })
    }

    pub fn len(&self) -> usize {
        self.coefficients.shape().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coefficients(&self) -> &MatrixField {
        &self.coefficients
    }

    pub fn value(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.coefficients.value(x)?.column(0).into_owned())
    }
}

/// `(df)_a = rho^i_a df/dx^i` at `x`.
pub fn d_function(a: &LieAlgebroid, f: &ScalarField, x: &[f64]) -> Result<DVector<f64>> {
    check_len("scalar field arity", a.base_dim(), f.arity())?;
    let (_, grad) = f.gradient(x)?;
    Ok(a.anchor_at(x)?.transpose() * grad)
}

/// `(d theta)_ab = rho^i_a d_i theta_b - rho^i_b d_i theta_a - C^c_ab theta_c` at `x`.
pub fn d_one_form(a: &LieAlgebroid, theta: &OneForm, x: &[f64]) -> Result<DMatrix<f64>> {
    let m = a.rank();
    check_len("1-form length", m, theta.len())?;
    let loc = a.local(x)?;
    let (th, th_grad) = theta.coefficients.value_and_gradient(x)?;
    // dth[(i, b)] = d_i theta_b
    let mut dth = DMatrix::zeros(a.base_dim(), m);
    for (i, g) in th_grad.iter().enumerate() {
        dth.row_mut(i).copy_from(&g.column(0).transpose());
    }
    let deriv = loc.anchor.transpose() * dth;
    let mut out = &deriv - deriv.transpose();
    for (c, slice) in loc.structure.iter().enumerate() {
        out -= slice * th[(c, 0)];
    }
    Ok(out)
}

/// Infinity norm of `d(df)` at `x`, computed from exact first and second
/// derivatives of `f`. Vanishes identically on a valid algebroid.
pub fn d2_residual(a: &LieAlgebroid, f: &ScalarField, x: &[f64]) -> Result<f64> {
    check_len("scalar field arity", a.base_dim(), f.arity())?;
    let n = a.base_dim();
    let jet = f.evaluate_jet(x)?;
    let loc = a.local(x)?;
    let df = loc.anchor.transpose() * &jet.gradient;
    // d_i (df)_b = d_i rho^j_b d_j f + rho^j_b d_ij f
    let mut ddf = &jet.hessian * &loc.anchor;
    for i in 0..n {
        let row = loc.anchor_grad[i].transpose() * &jet.gradient;
        for (b, v) in row.iter().enumerate() {
            ddf[(i, b)] += v;
        }
    }
    let deriv = loc.anchor.transpose() * ddf;
    let mut out = &deriv - deriv.transpose();
    for (c, slice) in loc.structure.iter().enumerate() {
        out -= slice * df[c];
    }
    Ok(out.amax())
}

/// `(delta f)_A = lambda^i_A df/dx^i`, the pull-back of `df` to the subbundle.
pub fn delta_of_function(w: &Subbundle, f: &ScalarField, x: &[f64]) -> Result<DVector<f64>> {
    let df = d_function(w.parent(), f, x)?;
    Ok(w.injection_at(x)?.transpose() * df)
}

/// Pull-back of `d theta` to the subbundle: `i^a_A (d theta)_ab i^b_B`.
pub fn delta_of_one_form(w: &Subbundle, theta: &OneForm, x: &[f64]) -> Result<DMatrix<f64>> {
    let dth = d_one_form(w.parent(), theta, x)?;
    let inj = w.injection_at(x)?;
    Ok(inj.transpose() * dth * inj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::tests::broken_algebroid;
    use crate::algebroid::{build_atiyah, so3_constants, PrincipalBundleData};
    use crate::sampling::SampleBox;

    fn x2() -> ScalarField {
        ScalarField::new(2, |x| x[1].clone())
    }

    #[test]
    fn d2_vanishes_on_tangent_bundle() {
        let f = ScalarField::new(2, |x| x[0].clone());
        assert_eq!(d2_residual(&LieAlgebroid::tangent(2), &f, &[0.3, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn d2_is_one_on_broken_algebroid() {
        for x in SampleBox::cube(2, -1.0, 1.0).sample(10, 2) {
            assert_eq!(d2_residual(&broken_algebroid(), &x2(), &x).unwrap(), 1.0);
        }
    }

    #[test]
    fn direct_d2_agrees_with_d_of_exact_form() {
        let a = build_atiyah(
            &PrincipalBundleData::new(
                2,
                3,
                so3_constants(),
                MatrixField::from_fn(3, 2, 2, |x| {
                    vec![
                        x[1].sin(),
                        &x[0] * &x[1],
                        Jet::constant(0.5),
                        x[0].cos(),
                        x[0].square(),
                        &x[1] * 2.0,
                    ]
                }),
            )
            .unwrap(),
        )
        .unwrap();
        let f = ScalarField::new(2, |x| (&x[0] * &x[1]).sin() + x[1].exp());
        let exact = OneForm::exact(&a, &f).unwrap();
        for x in SampleBox::cube(2, -1.0, 1.0).sample(10, 11) {
            let via_form = d_one_form(&a, &exact, &x).unwrap().amax();
            let direct = d2_residual(&a, &f, &x).unwrap();
            assert!(via_form < 1e-12 && direct < 1e-12, "{via_form} {direct}");
        }
        let on_broken = d_one_form(&broken_algebroid(), &OneForm::exact(&broken_algebroid(), &x2()).unwrap(), &[0.2, 0.7]).unwrap();
        assert_eq!(on_broken[(0, 1)], 1.0);
        assert_eq!(on_broken[(1, 0)], -1.0);
    }

    #[test]
    fn delta_with_identity_injection_is_d() {
        let a = broken_algebroid();
        let w = Subbundle::identity(&a);
        let f = ScalarField::new(2, |x| &x[0] * &x[1].square());
        let x = [0.7, -0.4];
        assert_eq!(delta_of_function(&w, &f, &x).unwrap(), d_function(&a, &f, &x).unwrap());
        let c = ScalarField::constant(2, 3.0);
        assert_eq!(delta_of_function(&w, &c, &x).unwrap().amax(), 0.0);
    }

    #[test]
    fn one_form_must_be_a_column() {
        assert!(OneForm::new(MatrixField::zeros(1, 2, 1)).is_err());
        let th = OneForm::new(MatrixField::zeros(3, 1, 1)).unwrap();
        assert_eq!(th.len(), 3);
        assert!(d_one_form(&LieAlgebroid::tangent(1), &th, &[0.0]).is_err());
    }
}
