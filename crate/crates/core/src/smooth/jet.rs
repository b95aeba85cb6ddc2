//! Truncated second-order Taylor jets.
//!
//! A [`Jet`] carries a value, its gradient with respect to `dim` seed
//! variables, and (optionally) the Hessian stored as a packed upper triangle.
//! Arithmetic propagates all three exactly, so a closure written over jets
//! yields machine-precision first and second derivatives.
//!
//! Constants have `dim == 0` and mix freely with seeded jets. A jet without a
//! Hessian is first order; combining it with anything drops second-order
//! information rather than inventing it.

use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

#[inline]
fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index of `(i, j)` with `i <= j` in the packed upper triangle of an `n x n` matrix.
#[inline]
pub(crate) fn packed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * (2 * n - i + 1) / 2 + (j - i)
}

impl Jet {
    pub fn constant(value: f64) -> Self {
        Jet {
            value,
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    /// Seed variable `index` of `dim`, carrying second-order data when `second_order`.
    pub fn variable(value: f64, index: usize, dim: usize, second_order: bool) -> Self {
        assert!(index < dim, "seed index {index} out of range for dim {dim}");
        let mut grad = vec![0.0; dim];
        grad[index] = 1.0;
        let hess = if second_order {
            vec![0.0; packed_len(dim)]
        } else {
            Vec::new()
        };
        Jet { value, grad, hess }
    }

    /// Seeds every coordinate of `x` as an independent variable.
    pub fn seed(x: &[f64], second_order: bool) -> Vec<Jet> {
        let n = x.len();
        x.iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(v, i, n, second_order))
            .collect()
    }

    /// Builds a first-order jet directly from a value and gradient.
    pub fn from_parts(value: f64, grad: Vec<f64>) -> Self {
        Jet {
            value,
            grad,
            hess: Vec::new(),
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Number of seed variables (0 for constants).
    #[inline]
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    #[inline]
    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    #[inline]
    pub fn is_second_order(&self) -> bool {
        !self.hess.is_empty()
    }

    #[inline]
    fn is_constant(&self) -> bool {
        self.grad.is_empty()
    }

    /// Hessian entry `(i, j)`; zero for constants and first-order jets.
    pub fn hessian_entry(&self, i: usize, j: usize) -> f64 {
        if self.hess.is_empty() {
            return 0.0;
        }
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.hess[packed_index(self.dim(), i, j)]
    }

    /// Gradient padded with zeros to `n` entries (constants have an empty gradient).
    pub fn gradient_padded(&self, n: usize) -> Vec<f64> {
        if self.grad.is_empty() {
            vec![0.0; n]
        } else {
            self.grad.clone()
        }
    }

    /// Chain rule for `z = F(a)` given `F(a)`, `F'(a)`, `F''(a)`.
    fn unary(&self, f: f64, d1: f64, d2: f64) -> Jet {
        if self.is_constant() {
            return Jet::constant(f);
        }
        let grad: Vec<f64> = self.grad.iter().map(|g| d1 * g).collect();
        let hess = if self.is_second_order() {
            let n = self.dim();
            let mut h = Vec::with_capacity(packed_len(n));
            let mut p = 0;
            for i in 0..n {
                let gi = self.grad[i];
                for j in i..n {
                    h.push(d1 * self.hess[p] + d2 * gi * self.grad[j]);
                    p += 1;
                }
            }
            h
        } else {
            Vec::new()
        };
        Jet {
            value: f,
            grad,
            hess,
        }
    }

    /// Chain rule for `z = F(a, b)` given the value and all partials up to order two.
    #[allow(clippy::too_many_arguments)]
    fn binary(a: &Jet, b: &Jet, f: f64, fa: f64, fb: f64, faa: f64, fab: f64, fbb: f64) -> Jet {
        match (a.is_constant(), b.is_constant()) {
            (true, true) => return Jet::constant(f),
            (false, true) => return a.unary(f, fa, faa),
            (true, false) => return b.unary(f, fb, fbb),
            _ => {}
        }
        let n = a.dim();
        assert_eq!(n, b.dim(), "jets seeded with different dimensions");
        let grad: Vec<f64> = a
            .grad
            .iter()
            .zip(&b.grad)
            .map(|(ga, gb)| fa * ga + fb * gb)
            .collect();
        let hess = if a.is_second_order() && b.is_second_order() {
            let mut h = Vec::with_capacity(packed_len(n));
            let mut p = 0;
            for i in 0..n {
                let (ai, bi) = (a.grad[i], b.grad[i]);
                for j in i..n {
                    let (aj, bj) = (a.grad[j], b.grad[j]);
                    h.push(
                        fa * a.hess[p]
                            + fb * b.hess[p]
                            + faa * ai * aj
                            + fab * (ai * bj + bi * aj)
                            + fbb * bi * bj,
                    );
                    p += 1;
                }
            }
            h
        } else {
            Vec::new()
        };
        Jet {
            value: f,
            grad,
            hess,
        }
    }

    /// Linear combination `ca * a + cb * b`.
    fn linear(a: &Jet, ca: f64, b: &Jet, cb: f64) -> Jet {
        Jet::binary(a, b, ca * a.value + cb * b.value, ca, cb, 0.0, 0.0, 0.0)
    }

    /// Evaluates a function known only through its local Taylor data at the
    /// point `inputs[..].value()`, composed with the input jets.
    ///
    /// `local_grad[k]` is the partial with respect to input `k`. When the inputs
    /// carry Hessians but `local_hess` is `None`, the output Hessian is filled
    /// with NaN so that missing third-order information cannot pass silently.
    pub fn compose(value: f64, local_grad: &[f64], local_hess: Option<&[f64]>, inputs: &[Jet]) -> Jet {
        assert_eq!(local_grad.len(), inputs.len());
        let dim = inputs.iter().map(Jet::dim).max().unwrap_or(0);
        if dim == 0 {
            return Jet::constant(value);
        }
        let mut grad = vec![0.0; dim];
        for (k, input) in inputs.iter().enumerate() {
            if input.is_constant() {
                continue;
            }
            assert_eq!(input.dim(), dim, "jets seeded with different dimensions");
            for (g, gi) in grad.iter_mut().zip(&input.grad) {
                *g += local_grad[k] * gi;
            }
        }
        let second = inputs
            .iter()
            .filter(|j| !j.is_constant())
            .all(Jet::is_second_order);
        let hess = if !second {
            Vec::new()
        } else if let Some(lh) = local_hess {
            let nl = inputs.len();
            let mut h = vec![0.0; packed_len(dim)];
            for (k, input) in inputs.iter().enumerate() {
                if input.is_constant() {
                    continue;
                }
                for (hp, ih) in h.iter_mut().zip(&input.hess) {
                    *hp += local_grad[k] * ih;
                }
            }
            for k in 0..nl {
                for l in 0..nl {
                    let (a, b) = if k <= l { (k, l) } else { (l, k) };
                    let c = lh[packed_index(nl, a, b)];
                    if c == 0.0 || inputs[k].is_constant() || inputs[l].is_constant() {
                        continue;
                    }
                    let (gk, gl) = (&inputs[k].grad, &inputs[l].grad);
                    let mut p = 0;
                    for i in 0..dim {
                        for j in i..dim {
                            h[p] += c * gk[i] * gl[j];
                            p += 1;
                        }
                    }
                }
            }
            h
        } else {
            vec![f64::NAN; packed_len(dim)]
        };
        Jet { value, grad, hess }
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.unary(s, c, -s)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.unary(c, -s, -c)
    }

    pub fn tan(&self) -> Jet {
        let t = self.value.tan();
        let sec2 = 1.0 + t * t;
        self.unary(t, sec2, 2.0 * t * sec2)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value.exp();
        self.unary(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        let x = self.value;
        self.unary(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    pub fn sqrt(&self) -> Jet {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s, -0.25 / (s * self.value))
    }

    pub fn tanh(&self) -> Jet {
        let t = self.value.tanh();
        let d1 = 1.0 - t * t;
        self.unary(t, d1, -2.0 * t * d1)
    }

    pub fn powi(&self, n: i32) -> Jet {
        let x = self.value;
        let nf = n as f64;
        let d1 = if n == 0 { 0.0 } else { nf * x.powi(n - 1) };
        let d2 = if n == 0 || n == 1 {
            0.0
        } else {
            nf * (nf - 1.0) * x.powi(n - 2)
        };
        self.unary(x.powi(n), d1, d2)
    }

    pub fn powf(&self, p: f64) -> Jet {
        let x = self.value;
        self.unary(
            x.powf(p),
            p * x.powf(p - 1.0),
            p * (p - 1.0) * x.powf(p - 2.0),
        )
    }

    pub fn square(&self) -> Jet {
        self.powi(2)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.unary(-self.value, -1.0, 0.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        -&self
    }
}

fn add(a: &Jet, b: &Jet) -> Jet {
    Jet::linear(a, 1.0, b, 1.0)
}

fn sub(a: &Jet, b: &Jet) -> Jet {
    Jet::linear(a, 1.0, b, -1.0)
}

fn mul(a: &Jet, b: &Jet) -> Jet {
    Jet::binary(a, b, a.value * b.value, b.value, a.value, 0.0, 1.0, 0.0)
}

fn div(a: &Jet, b: &Jet) -> Jet {
    let (x, y) = (a.value, b.value);
    let inv = 1.0 / y;
    Jet::binary(
        a,
        b,
        x * inv,
        inv,
        -x * inv * inv,
        0.0,
        -inv * inv,
        2.0 * x * inv * inv * inv,
    )
}

macro_rules! jet_binop {
    ($trait:ident, $method:ident, $func:ident, $scalar_rhs:expr, $scalar_lhs:expr) => {
        impl $trait<&Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                $func(self, rhs)
            }
        }
        impl $trait<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                $func(&self, &rhs)
            }
        }
        impl $trait<&Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                $func(&self, rhs)
            }
        }
        impl $trait<Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                $func(self, &rhs)
            }
        }
        impl $trait<f64> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: f64) -> Jet {
                let f: fn(&Jet, f64) -> Jet = $scalar_rhs;
                f(self, rhs)
            }
        }
        impl $trait<f64> for Jet {
            type Output = Jet;
            fn $method(self, rhs: f64) -> Jet {
                let f: fn(&Jet, f64) -> Jet = $scalar_rhs;
                f(&self, rhs)
            }
        }
        impl $trait<&Jet> for f64 {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                let f: fn(f64, &Jet) -> Jet = $scalar_lhs;
                f(self, rhs)
            }
        }
        impl $trait<Jet> for f64 {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                let f: fn(f64, &Jet) -> Jet = $scalar_lhs;
                f(self, &rhs)
            }
        }
    };
}

jet_binop!(
    Add,
    add,
    add,
    |a, c| a.unary(a.value + c, 1.0, 0.0),
    |c, b| b.unary(c + b.value, 1.0, 0.0)
);
jet_binop!(
    Sub,
    sub,
    sub,
    |a, c| a.unary(a.value - c, 1.0, 0.0),
    |c, b| b.unary(c - b.value, -1.0, 0.0)
);
jet_binop!(
    Mul,
    mul,
    mul,
    |a, c| a.unary(a.value * c, c, 0.0),
    |c, b| b.unary(c * b.value, c, 0.0)
);
jet_binop!(
    Div,
    div,
    div,
    |a, c| a.unary(a.value / c, 1.0 / c, 0.0),
    |c, b| {
        let y = b.value;
        b.unary(c / y, -c / (y * y), 2.0 * c / (y * y * y))
    }
);

impl Sum for Jet {
    fn sum<I: Iterator<Item = Jet>>(iter: I) -> Jet {
        iter.fold(Jet::constant(0.0), |acc, j| acc + j)
    }
}

impl<'a> Sum<&'a Jet> for Jet {
    fn sum<I: Iterator<Item = &'a Jet>>(iter: I) -> Jet {
        iter.fold(Jet::constant(0.0), |acc, j| acc + j)
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Self {
        Jet::constant(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_and_cross_hessian() {
        let x = Jet::seed(&[2.0, 3.0], true);
        let f = &x[0] * &x[1];
        assert_eq!(f.value(), 6.0);
        assert_eq!(f.gradient(), &[3.0, 2.0]);
        assert_eq!(f.hessian_entry(0, 1), 1.0);
        assert_eq!(f.hessian_entry(1, 0), 1.0);
        assert_eq!(f.hessian_entry(0, 0), 0.0);
    }

    #[test]
    fn quotient_second_derivative() {
        // f = 1 / x at x = 2: f' = -1/4, f'' = 2/8
        let x = Jet::seed(&[2.0], true);
        let f = 1.0 / &x[0];
        assert_eq!(f.gradient(), &[-0.25]);
        assert_eq!(f.hessian_entry(0, 0), 0.25);
        let g = &x[0] / &x[0];
        assert_eq!(g.value(), 1.0);
        assert!(g.gradient()[0].abs() < 1e-16);
        assert!(g.hessian_entry(0, 0).abs() < 1e-15);
    }

    #[test]
    fn constants_mix_with_variables() {
        let x = Jet::seed(&[1.5], true);
        let c = Jet::constant(4.0);
        let f = &c * &x[0] + 1.0;
        assert_eq!(f.value(), 7.0);
        assert_eq!(f.gradient(), &[4.0]);
        assert!((&c * &c).gradient().is_empty());
    }

    #[test]
    fn first_order_jets_drop_hessian() {
        let x = Jet::seed(&[0.3, 0.4], false);
        let f = x[0].sin() * &x[1];
        assert!(!f.is_second_order());
        assert_eq!(f.hessian_entry(0, 1), 0.0);
        assert!((f.gradient()[0] - 0.3f64.cos() * 0.4).abs() < 1e-16);
    }

    #[test]
    fn compose_matches_direct_evaluation() {
        // g(u, v) = u * v^2 evaluated through compose at u = sin t, v = t^2
        let t = Jet::seed(&[0.7], true);
        let u = t[0].sin();
        let v = t[0].powi(2);
        let direct = &u * &v.powi(2);
        let (uv, vv) = (u.value(), v.value());
        let lg = [vv * vv, 2.0 * uv * vv];
        let lh = [0.0, 2.0 * vv, 2.0 * uv];
        let composed = Jet::compose(uv * vv * vv, &lg, Some(&lh), &[u.clone(), v.clone()]);
        assert!((composed.gradient()[0] - direct.gradient()[0]).abs() < 1e-14);
        assert!((composed.hessian_entry(0, 0) - direct.hessian_entry(0, 0)).abs() < 1e-13);
        let no_hess = Jet::compose(uv * vv * vv, &lg, None, &[u, v]);
        assert!(no_hess.hessian_entry(0, 0).is_nan());
    }
}
