//! Normal extremals of the maximum principle for mechanical Lagrangians on a
//! Lie algebroid, with the cost multiplier fixed to `p0 = -1`.
//!
//! The control is eliminated through `v* = g^{-1} rho^T p`, leaving the
//! Hamiltonian `H(x, p) = 1/2 p^T rho g^{-1} rho^T p + V(x)` on `T*M`.

use nalgebra::{DMatrix, DVector};

use crate::algebroid::LieAlgebroid;
use crate::error::{check_len, Error, Result};
use crate::integrate::{integrate, IntegratorOptions, Trajectory};
use crate::linalg::{numerical_rank, solve_lu};
use crate::sampling::SampleBox;
use crate::smooth::{Jet, MatrixField, ScalarField};

const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl ExtremalState {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Self {
        ExtremalState { x, p }
    }

    pub fn from_flat(s: &[f64], n: usize) -> Self {
        ExtremalState {
            x: s[..n].to_vec(),
            p: s[n..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut s = self.x.clone();
        s.extend_from_slice(&self.p);
        s
    }
}

/// `L(x, v) = 1/2 v^T g(x) v - V(x)`.
#[derive(Clone, Debug)]
pub struct MechanicalLagrangian {
    metric: MatrixField,
    potential: ScalarField,
}

impl MechanicalLagrangian {
    pub fn new(metric: MatrixField, potential: ScalarField) -> Result<Self> {
        let (r, c) = metric.shape();
        if r != c {
            return Err(Error::InvalidInput(format!("metric must be square, got {r}x{c}")));
        }
        if potential.arity() != metric.arity() {
            return Err(Error::InvalidInput(format!(
                "metric and potential live on bases of dimension {} and {}",
                metric.arity(),
                potential.arity()
            )));
        }
        Ok(MechanicalLagrangian { metric, potential })
    }

    /// Kinetic energy of a constant metric, no potential.
    pub fn kinetic(metric: &DMatrix<f64>, n: usize) -> Result<Self> {
        MechanicalLagrangian::new(MatrixField::constant(metric, n), ScalarField::constant(n, 0.0))
    }

    pub fn metric(&self) -> &MatrixField {
        &self.metric
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn base_dim(&self) -> usize {
        self.metric.arity()
    }

    pub fn rank(&self) -> usize {
        self.metric.shape().0
    }

    /// The Lagrangian as a field on `(x, v)`.
    pub fn lagrangian(&self) -> ScalarField {
        let (n, m) = (self.base_dim(), self.rank());
        let (g, pot) = (self.metric.clone(), self.potential.clone());
        ScalarField::new(n + m, move |z| {
            let x = &z[..n];
            let v = &z[n..];
            let gv = g.eval_jets(x);
            let mut t = Jet::constant(0.0);
            for a in 0..m {
                for b in 0..m {
                    t = t + &gv[a * m + b] * &(&v[a] * &v[b]);
                }
            }
            0.5 * t - pot.eval_jets(x)
        })
    }

    /// Fails unless the metric is symmetric positive definite at every sample.
    pub fn check_metric(&self, sample_box: &SampleBox, n_samples: usize, seed: u64) -> Result<()> {
        check_len("sample box dimension", self.base_dim(), sample_box.dim())?;
        for x in sample_box.sample(n_samples, seed) {
            let g = self.metric.value(&x)?;
            let asym = (&g - g.transpose()).amax();
            if asym > 1e-12 * (1.0 + g.amax()) {
                return Err(Error::InvalidInput(format!("metric is not symmetric at {x:?}")));
            }
            let min_eig = g.symmetric_eigenvalues().min();
            if !(min_eig > 0.0) {
                return Err(Error::DegenerateMetric {
                    pivot_ratio: min_eig / g.amax().max(f64::MIN_POSITIVE),
                });
            }
        }
        Ok(())
    }
}

fn check_compatible(a: &LieAlgebroid, l: &MechanicalLagrangian) -> Result<()> {
    check_len("metric base dimension", a.base_dim(), l.base_dim())?;
    check_len("metric rank", a.rank(), l.rank())
}

fn solve_metric(g: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    solve_lu(g, b).map_err(|pivot_ratio| Error::DegenerateMetric { pivot_ratio })
}

/// `v* = g^{-1} rho^T p`, the maximizer of `p rho v - L(x, v)` over `v`.
pub fn eliminate_control(a: &LieAlgebroid, l: &MechanicalLagrangian, x: &[f64], p: &[f64]) -> Result<DVector<f64>> {
    check_compatible(a, l)?;
    check_len("costate", a.base_dim(), p.len())?;
    let rho = a.anchor_at(x)?;
    solve_metric(l.metric.value(x)?, &(rho.transpose() * DVector::from_column_slice(p)))
}

/// `|rho^T p - g v|_inf`: the gradient in `v` of `p rho v - L` at `v`.
pub fn stationarity(a: &LieAlgebroid, l: &MechanicalLagrangian, x: &[f64], p: &[f64], v: &[f64]) -> Result<f64> {
    check_compatible(a, l)?;
    let rho = a.anchor_at(x)?;
    let g = l.metric.value(x)?;
    Ok((rho.transpose() * DVector::from_column_slice(p) - g * DVector::from_column_slice(v)).amax())
}

/// `H(x, p) = p rho v* - L(x, v*)`.
pub fn hamiltonian(a: &LieAlgebroid, l: &MechanicalLagrangian, e: &ExtremalState) -> Result<f64> {
    let v = eliminate_control(a, l, &e.x, &e.p)?;
    let rho = a.anchor_at(&e.x)?;
    let pv = (rho.transpose() * DVector::from_column_slice(&e.p)).dot(&v);
    Ok(0.5 * pv + l.potential.value(&e.x)?)
}

/// Hamiltonian vector field at `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct PmpValue {
    pub xdot: DVector<f64>,
    pub pdot: DVector<f64>,
    pub control: DVector<f64>,
    /// Set when the base is a point, so there is no motion to speak of.
    pub degenerate_base: bool,
}

/// `xdot = rho v*`, `pdot_i = -p_j d_i rho^j_a v*^a + dL/dx^i (x, v*)`.
pub fn pmp_vector_field(a: &LieAlgebroid, l: &MechanicalLagrangian, e: &ExtremalState) -> Result<PmpValue> {
    check_compatible(a, l)?;
    let n = a.base_dim();
    check_len("base point", n, e.x.len())?;
    check_len("costate", n, e.p.len())?;
    let v = eliminate_control(a, l, &e.x, &e.p)?;
    let (rho, rho_grad) = a.anchor().value_and_gradient(&e.x)?;
    let (_, g_grad) = l.metric.value_and_gradient(&e.x)?;
    let (_, v_grad) = l.potential.gradient(&e.x)?;
    let p = DVector::from_column_slice(&e.p);
    let mut pdot = DVector::zeros(n);
    for i in 0..n {
        pdot[i] = -p.dot(&(&rho_grad[i] * &v)) + 0.5 * v.dot(&(&g_grad[i] * &v)) - v_grad[i];
    }
    Ok(PmpValue {
        xdot: rho * &v,
        pdot,
        control: v,
        degenerate_base: n == 0,
    })
}

/// Right-hand side on the flat state `(x, p)`.
pub fn pmp_rhs<'a>(
    a: &'a LieAlgebroid,
    l: &'a MechanicalLagrangian,
) -> impl FnMut(f64, &[f64]) -> Result<Vec<f64>> + 'a {
    let n = a.base_dim();
    move |_, s| {
        let f = pmp_vector_field(a, l, &ExtremalState::from_flat(s, n))?;
        Ok(f.xdot.iter().chain(f.pdot.iter()).copied().collect())
    }
}

/// Integrates an extremal, recording `hamiltonian` and `stationarity`.
pub fn simulate_extremal(
    a: &LieAlgebroid,
    l: &MechanicalLagrangian,
    e0: &ExtremalState,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    check_compatible(a, l)?;
    let n = a.base_dim();
    if n == 0 {
        return Err(Error::InvalidInput("extremals need a base of positive dimension".into()));
    }
    let mut traj = integrate(pmp_rhs(a, l), &e0.to_flat(), t_span, opts)?;
    traj.record("hamiltonian", |_, s| hamiltonian(a, l, &ExtremalState::from_flat(s, n)))?;
    traj.record("stationarity", |_, s| {
        let e = ExtremalState::from_flat(s, n);
        let v = eliminate_control(a, l, &e.x, &e.p)?;
        stationarity(a, l, &e.x, &e.p, v.as_slice())
    })?;
    Ok(traj)
}

/// Basis of `W_x = g^{-1} rho^T (T*_x M)`, orthonormal for `g`; one column per dimension.
pub fn normal_subbundle(a: &LieAlgebroid, l: &MechanicalLagrangian, x: &[f64]) -> Result<DMatrix<f64>> {
    check_compatible(a, l)?;
    let (n, m) = (a.base_dim(), a.rank());
    let g = l.metric.value(x)?;
    let chol = g.clone().cholesky().ok_or(Error::DegenerateMetric { pivot_ratio: 0.0 })?;
    if n == 0 {
        return Ok(DMatrix::zeros(m, 0));
    }
    let lower = chol.l();
    let ginv_rho_t = chol.solve(&a.anchor_at(x)?.transpose());
    let y = lower.transpose() * ginv_rho_t;
    let svd = y.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.amax();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| smax > 0.0 && svd.singular_values[j] > RANK_TOL * smax)
        .collect();
    let mut basis = DMatrix::zeros(m, keep.len());
    let lt = lower.transpose();
    for (col, &j) in keep.iter().enumerate() {
        let b = lt
            .solve_upper_triangular(&u.column(j).into_owned())
            .ok_or(Error::DegenerateMetric { pivot_ratio: 0.0 })?;
        basis.set_column(col, &b);
    }
    Ok(basis)
}

/// Weights of the derivative at `times[at]` of the Lagrange interpolant through `times`.
fn derivative_weights(times: &[f64], at: usize) -> Vec<f64> {
    let t = times[at];
    let n = times.len();
    (0..n)
        .map(|k| {
            let mut sum = 0.0;
            for m in 0..n {
                if m == k {
                    continue;
                }
                let mut prod = 1.0 / (times[k] - times[m]);
                for l in 0..n {
                    if l != k && l != m {
                        prod *= (t - times[l]) / (times[k] - times[l]);
                    }
                }
                sum += prod;
            }
            sum
        })
        .collect()
}

/// Checks that an extremal solves the constrained Lagrangian equations on the
/// normal subbundle.
///
/// Momenta `mu = g v*` are differentiated with five-point stencils on the
/// sample grid, so the result carries the grid's discretization error. The
/// returned value is the largest infinity norm over samples of
/// `B^T [mu' - rho^T dL/dx + C(v*) mu]` with `B` the basis of
/// [`normal_subbundle`].
pub fn extremal_lagrangian_residual(a: &LieAlgebroid, l: &MechanicalLagrangian, traj: &Trajectory) -> Result<f64> {
    check_compatible(a, l)?;
    let (n, m) = (a.base_dim(), a.rank());
    const STENCIL: usize = 5;
    if traj.len() < STENCIL {
        return Err(Error::InvalidInput(format!(
            "extremal trajectory needs at least {STENCIL} samples, got {}",
            traj.len()
        )));
    }
    let lag = l.lagrangian();
    let mut momenta = Vec::with_capacity(traj.len());
    let mut controls = Vec::with_capacity(traj.len());
    let mut expected_rank = None;
    for (&t, s) in traj.times.iter().zip(&traj.states) {
        check_len("extremal state", 2 * n, s.len())?;
        let x = &s[..n];
        let rank = numerical_rank(&a.anchor_at(x)?, RANK_TOL);
        match expected_rank {
            None => expected_rank = Some(rank),
            Some(r) if r != rank => {
                return Err(Error::NonConstantRank {
                    t,
                    expected: r,
                    found: rank,
                })
            }
            _ => {}
        }
        let v = eliminate_control(a, l, x, &s[n..])?;
        momenta.push(l.metric.value(x)? * &v);
        controls.push(v);
    }
    let len = traj.len();
    let mut worst = 0.0f64;
    for j in 0..len {
        let start = j.saturating_sub(STENCIL / 2).min(len - STENCIL);
        let window = &traj.times[start..start + STENCIL];
        let wts = derivative_weights(window, j - start);
        let mut mu_dot = DVector::zeros(m);
        for (k, wk) in wts.iter().enumerate() {
            mu_dot += &momenta[start + k] * *wk;
        }
        let x = &traj.states[j][..n];
        let v = &controls[j];
        let mu = &momenta[j];
        let mut z = x.to_vec();
        z.extend(v.iter());
        let (_, grad) = lag.gradient(&z)?;
        let lx = grad.rows(0, n).into_owned();
        let mut r = mu_dot - a.anchor_at(x)?.transpose() * lx;
        for (c, slice) in a.structure_at(x)?.iter().enumerate() {
            r += slice * v * mu[c];
        }
        let basis = normal_subbundle(a, l, x)?;
        worst = worst.max((basis.transpose() * r).amax());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::so3_constants;
    use std::f64::consts::PI;

    fn flat(n: usize) -> (LieAlgebroid, MechanicalLagrangian) {
        (
            LieAlgebroid::tangent(n),
            MechanicalLagrangian::kinetic(&DMatrix::identity(n, n), n).unwrap(),
        )
    }

    fn harmonic() -> (LieAlgebroid, MechanicalLagrangian) {
        let l = MechanicalLagrangian::new(MatrixField::identity(1, 1), ScalarField::new(1, |x| 0.5 * x[0].square()))
            .unwrap();
        (LieAlgebroid::tangent(1), l)
    }

    #[test]
    fn control_elimination_examples() {
        let (a, l) = flat(2);
        assert_eq!(eliminate_control(&a, &l, &[0.0, 0.0], &[3.0, 4.0]).unwrap().as_slice(), &[3.0, 4.0]);
        let l2 = MechanicalLagrangian::kinetic(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), 2).unwrap();
        let v = eliminate_control(&a, &l2, &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 1.0]);
        assert_eq!(stationarity(&a, &l2, &[0.0, 0.0], &[2.0, 2.0], v.as_slice()).unwrap(), 0.0);
    }

    #[test]
    fn singular_metric_rejected() {
        let a = LieAlgebroid::tangent(2);
        let l = MechanicalLagrangian::kinetic(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), 2).unwrap();
        assert!(matches!(
            eliminate_control(&a, &l, &[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::DegenerateMetric { .. })
        ));
        assert!(l.check_metric(&SampleBox::cube(2, -1.0, 1.0), 3, 0).is_err());
    }

    #[test]
    fn free_extremal_is_a_straight_line() {
        let (a, l) = flat(2);
        let f = pmp_vector_field(&a, &l, &ExtremalState::new(vec![0.0, 0.0], vec![1.0, 0.0])).unwrap();
        assert_eq!(f.xdot.as_slice(), &[1.0, 0.0]);
        assert_eq!(f.pdot.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn point_base_is_flagged() {
        let a = LieAlgebroid::lie_algebra(&so3_constants()).unwrap();
        let l = MechanicalLagrangian::kinetic(&DMatrix::identity(3, 3), 0).unwrap();
        let f = pmp_vector_field(&a, &l, &ExtremalState::new(vec![], vec![])).unwrap();
        assert!(f.degenerate_base && f.xdot.is_empty() && f.pdot.is_empty());
        assert_eq!(normal_subbundle(&a, &l, &[]).unwrap().ncols(), 0);
    }

    #[test]
    fn harmonic_extremal_is_periodic() {
        let (a, l) = harmonic();
        let tr = simulate_extremal(&a, &l, &ExtremalState::new(vec![1.0], vec![0.0]), (0.0, 2.0 * PI), &IntegratorOptions::default())
            .unwrap();
        let end = tr.last_state().unwrap();
        assert!((end[0] - 1.0).abs() < 1e-8 && end[1].abs() < 1e-8);
        let h = tr.diagnostic("hamiltonian").unwrap();
        assert!(h.iter().all(|v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn extremal_residuals() {
        let opts = IntegratorOptions::default().with_max_step(0.01);
        let (a, l) = flat(2);
        let tr = simulate_extremal(&a, &l, &ExtremalState::new(vec![0.0, 0.0], vec![1.0, -0.5]), (0.0, 2.0), &opts)
            .unwrap();
        assert!(extremal_lagrangian_residual(&a, &l, &tr).unwrap() < 1e-9);

        let (a, l) = harmonic();
        let mut tr = simulate_extremal(&a, &l, &ExtremalState::new(vec![1.0], vec![0.0]), (0.0, 2.0 * PI), &opts).unwrap();
        assert!(extremal_lagrangian_residual(&a, &l, &tr).unwrap() < 1e-7);
        // a costate that is not an extremal one must be detected
        for (j, s) in tr.states.iter_mut().enumerate() {
            s[1] += 0.01 * ((j * 7919 % 13) as f64 - 6.0);
        }
        assert!(extremal_lagrangian_residual(&a, &l, &tr).unwrap() > 1e-3);
    }

    #[test]
    fn normal_subbundle_is_metric_orthonormal() {
        let a = LieAlgebroid::tangent(2);
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = MechanicalLagrangian::kinetic(&g, 2).unwrap();
        let b = normal_subbundle(&a, &l, &[0.0, 0.0]).unwrap();
        assert_eq!(b.ncols(), 2);
        assert!((b.transpose() * g * &b - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn derivative_weights_are_exact_for_quartics() {
        let t = [0.0, 0.1, 0.25, 0.3, 0.55];
        for at in 0..5 {
            let w = derivative_weights(&t, at);
            let d: f64 = w.iter().zip(&t).map(|(wk, tk)| wk * tk.powi(4)).sum();
            assert!((d - 4.0 * t[at].powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_check() {
        let l = MechanicalLagrangian::kinetic(&DMatrix::identity(2, 2), 1).unwrap();
        assert!(l.check_metric(&SampleBox::cube(1, -1.0, 1.0), 5, 0).is_ok());
        let skew = MechanicalLagrangian::kinetic(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), 1).unwrap();
        assert!(skew.check_metric(&SampleBox::cube(1, -1.0, 1.0), 5, 0).is_err());
    }
}
