//! Exact differentiation of user-defined scalar and matrix fields.
//!
//! Fields are closures over [`Jet`]; evaluating them on seeded jets yields the
//! value together with exact first and second derivatives. Finite differences
//! live here only as the independent cross-check [`fd_residual`].

mod jet;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

pub use jet::Jet;

type ScalarFn = dyn Fn(&[Jet]) -> Jet + Send + Sync;
type MatrixFn = dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync;

/// Value, gradient and Hessian of a scalar field at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// A smooth map `R^arity -> R`.
#[derive(Clone)]
pub struct ScalarField {
    arity: usize,
    f: Arc<ScalarFn>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("arity", &self.arity).finish()
    }
}

impl ScalarField {
    pub fn new<F>(arity: usize, f: F) -> Self
    where
        F: Fn(&[Jet]) -> Jet + Send + Sync + 'static,
    {
        ScalarField {
            arity,
            f: Arc::new(f),
        }
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        ScalarField::new(arity, move |_| Jet::constant(c))
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Evaluates on caller-supplied jets, for composing fields.
    pub fn eval_jets(&self, x: &[Jet]) -> Jet {
        (self.f)(x)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("scalar field input", self.arity, x.len())?;
        let args: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
        Ok((self.f)(&args).value())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<(f64, DVector<f64>)> {
        check_len("scalar field input", self.arity, x.len())?;
        let out = (self.f)(&Jet::seed(x, false));
        Ok((
            out.value(),
            DVector::from_vec(out.gradient_padded(self.arity)),
        ))
    }

    /// Value, gradient and symmetric Hessian at `x`.
    pub fn evaluate_jet(&self, x: &[f64]) -> Result<ScalarJet> {
        check_len("scalar field input", self.arity, x.len())?;
        let n = self.arity;
        let out = (self.f)(&Jet::seed(x, true));
        let mut hessian = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let h = out.hessian_entry(i, j);
                hessian[(i, j)] = h;
                hessian[(j, i)] = h;
            }
        }
        Ok(ScalarJet {
            value: out.value(),
            gradient: DVector::from_vec(out.gradient_padded(n)),
            hessian,
        })
    }
}

/// Free-function form of [`ScalarField::evaluate_jet`].
pub fn evaluate_jet(f: &ScalarField, x: &[f64]) -> Result<ScalarJet> {
    f.evaluate_jet(x)
}

/// Infinity-norm gap between the exact gradient and central differences with step `h`.
pub fn fd_residual(f: &ScalarField, x: &[f64], h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    let (_, grad) = f.gradient(x)?;
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f.value(&probe)?;
        probe[i] = x[i] - h;
        let down = f.value(&probe)?;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
    }
    Ok(worst)
}

#[derive(Clone)]
enum MatrixSource {
    Constant(Arc<[f64]>),
    Closure(Arc<MatrixFn>),
}

/// A smooth map from base points `R^arity` to `rows x cols` matrices.
///
/// Closures return entries in row-major order.
#[derive(Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    arity: usize,
    source: MatrixSource,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("arity", &self.arity)
            .field("constant", &self.is_constant())
            .finish()
    }
}

impl MatrixField {
    pub fn from_fn<F>(rows: usize, cols: usize, arity: usize, f: F) -> Self
    where
        F: Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static,
    {
        MatrixField {
            rows,
            cols,
            arity,
            source: MatrixSource::Closure(Arc::new(f)),
        }
    }

    pub fn constant(m: &DMatrix<f64>, arity: usize) -> Self {
        let (rows, cols) = m.shape();
        let entries: Vec<f64> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)])
            .collect();
        MatrixField {
            rows,
            cols,
            arity,
            source: MatrixSource::Constant(entries.into()),
        }
    }

    pub fn zeros(rows: usize, cols: usize, arity: usize) -> Self {
        MatrixField::constant(&DMatrix::zeros(rows, cols), arity)
    }

    pub fn identity(n: usize, arity: usize) -> Self {
        MatrixField::constant(&DMatrix::identity(n, n), arity)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.source, MatrixSource::Constant(_))
    }

    /// Row-major entries evaluated on caller-supplied jets.
    pub fn eval_jets(&self, x: &[Jet]) -> Vec<Jet> {
        match &self.source {
            MatrixSource::Constant(e) => e.iter().map(|&v| Jet::constant(v)).collect(),
            MatrixSource::Closure(f) => {
                let out = f(x);
                assert_eq!(
                    out.len(),
                    self.rows * self.cols,
                    "matrix field closure returned {} entries for a {}x{} shape",
                    out.len(),
                    self.rows,
                    self.cols
                );
                out
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_len("matrix field input", self.arity, x.len())?;
        match &self.source {
            MatrixSource::Constant(e) => Ok(DMatrix::from_row_slice(self.rows, self.cols, e)),
            MatrixSource::Closure(_) => {
                let args: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
                let vals: Vec<f64> = self.eval_jets(&args).iter().map(Jet::value).collect();
                Ok(DMatrix::from_row_slice(self.rows, self.cols, &vals))
            }
        }
    }

    /// Value and entrywise gradient; `grads[k]` holds the partial along `x^k`.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        check_len("matrix field input", self.arity, x.len())?;
        let n = self.arity;
        match &self.source {
            MatrixSource::Constant(e) => Ok((
                DMatrix::from_row_slice(self.rows, self.cols, e),
                vec![DMatrix::zeros(self.rows, self.cols); n],
            )),
            MatrixSource::Closure(_) => {
                let out = self.eval_jets(&Jet::seed(x, false));
                let mut value = DMatrix::zeros(self.rows, self.cols);
                let mut grads = vec![DMatrix::zeros(self.rows, self.cols); n];
                for (idx, j) in out.iter().enumerate() {
                    let (r, c) = (idx / self.cols, idx % self.cols);
                    value[(r, c)] = j.value();
                    for (k, g) in j.gradient().iter().enumerate() {
                        grads[k][(r, c)] = *g;
                    }
                }
                Ok((value, grads))
            }
        }
    }
}

/// Central-difference entrywise gradient of a matrix field, the independent
/// check used by tests of [`MatrixField::value_and_gradient`].
pub fn fd_matrix_gradient(field: &MatrixField, x: &[f64], h: f64) -> Result<Vec<DMatrix<f64>>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = field.value(&probe)?;
        probe[i] = x[i] - h;
        let down = field.value(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin_plus_cube() -> ScalarField {
        ScalarField::new(2, |x| x[0].sin() + x[1].powi(3))
    }

    #[test]
    fn jet_of_square() {
        let f = ScalarField::new(1, |x| &x[0] * &x[0]);
        let j = f.evaluate_jet(&[3.0]).unwrap();
        assert_eq!(j.value, 9.0);
        assert_eq!(j.gradient[0], 6.0);
        assert_eq!(j.hessian[(0, 0)], 2.0);
    }

    #[test]
    fn jet_of_bilinear_at_origin() {
        let f = ScalarField::new(2, |x| &x[0] * &x[1]);
        let j = f.evaluate_jet(&[0.0, 0.0]).unwrap();
        assert_eq!(j.value, 0.0);
        assert_eq!(j.gradient.as_slice(), &[0.0, 0.0]);
        assert_eq!(j.hessian, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn jet_of_sin_plus_cube_matches_hand_derivatives() {
        let j = sin_plus_cube().evaluate_jet(&[0.0, 2.0]).unwrap();
        assert_eq!(j.value, 8.0);
        assert_eq!(j.gradient.as_slice(), &[1.0, 12.0]);
        assert_eq!(j.hessian, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 12.0]));
        // and the hand values agree with central differences
        assert!(fd_residual(&sin_plus_cube(), &[0.0, 2.0], 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn arity_mismatch_is_an_input_shape_error() {
        let err = sin_plus_cube().evaluate_jet(&[1.0]).unwrap_err();
        assert!(matches!(err, Error::InputShape { expected: 2, got: 1, .. }));
    }

    #[test]
    fn fd_residual_examples() {
        let linear = ScalarField::new(3, |x| 2.0 * &x[0] - &x[1] + 0.5 * &x[2] + 7.0);
        assert!(fd_residual(&linear, &[0.3, -0.2, 0.9], 1e-5).unwrap() < 1e-10);

        let quad = ScalarField::new(1, |x| x[0].square());
        assert!(fd_residual(&quad, &[1.0], 1e-5).unwrap() < 1e-9);

        // Taylor error of central differences: h^2 f'''/6 = e/6 * 1e-6 ~ 4.5e-7
        let exp = ScalarField::new(1, |x| x[0].exp());
        let r = fd_residual(&exp, &[1.0], 1e-3).unwrap();
        assert!(r > 1e-8 && r < 1e-5, "residual {r}");
        let predicted = std::f64::consts::E * 1e-6 / 6.0;
        assert!((r - predicted).abs() / predicted < 1e-3);
    }

    #[test]
    fn fd_residual_rejects_nonpositive_step() {
        assert!(fd_residual(&sin_plus_cube(), &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let f = ScalarField::new(3, |x| {
            (&x[0] * &x[1]).sin() * x[2].exp() + (&x[1] / (2.0 + x[0].cos())).powi(3)
        });
        let j = f.evaluate_jet(&[0.3, -0.7, 0.2]).unwrap();
        assert_eq!(j.hessian, j.hessian.transpose());
    }

    #[test]
    fn matrix_field_gradient_matches_fd() {
        let m = MatrixField::from_fn(2, 2, 2, |x| {
            vec![x[0].cos(), &x[0] * &x[1], x[1].sin().square(), Jet::constant(3.0)]
        });
        let x = [0.4, -1.1];
        let (v, g) = m.value_and_gradient(&x).unwrap();
        assert_eq!(v[(1, 1)], 3.0);
        let fd = fd_matrix_gradient(&m, &x, 1e-5).unwrap();
        for k in 0..2 {
            let scale = 1.0 + g[k].amax();
            assert!((&g[k] - &fd[k]).amax() < 1e-6 * scale);
        }
    }

    #[test]
    fn constant_matrix_field_has_zero_gradient() {
        let m = MatrixField::identity(3, 2);
        let (v, g) = m.value_and_gradient(&[1.0, 2.0]).unwrap();
        assert_eq!(v, DMatrix::identity(3, 3));
        assert_eq!(g.len(), 2);
        assert!(g.iter().all(|d| d.amax() == 0.0));
    }
}
