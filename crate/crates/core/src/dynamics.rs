//! Constrained Lagrangian dynamics on a subbundle of a Lie algebroid.
//!
//! A state is a base point `x` together with constrained fibre coordinates
//! `w`; the algebroid velocity is `v = i(x) w`. The equations of motion are
//! the vector field `x' = lambda(x) w`, `w' = f(x, w)` where `f` is fixed by
//! requiring the Lagrange-d'Alembert equations contracted with the injection:
//!
//! `i^a_A [d/dt dL/dv^a - rho^i_a dL/dx^i + C^c_ab v^b dL/dv^c] = 0`.

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{LieAlgebroid, Subbundle};
use crate::error::{check_len, Error, Result};
use crate::integrate::{integrate, IntegratorOptions, Trajectory};
use crate::linalg::solve_lu;
use crate::sampling::SampleBox;
use crate::smooth::ScalarField;

/// Number of box samples checked for regularity when a system is built.
const REGULARITY_SAMPLES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ConstrainedState {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl ConstrainedState {
    pub fn new(x: Vec<f64>, w: Vec<f64>) -> Self {
        ConstrainedState { x, w }
    }

    /// Splits a flat `(x, w)` vector.
    pub fn from_flat(s: &[f64], n: usize) -> Self {
        ConstrainedState {
            x: s[..n].to_vec(),
            w: s[n..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut s = self.x.clone();
        s.extend_from_slice(&self.w);
        s
    }
}

/// Value of the equations of motion at a state.
#[derive(Clone, Debug, PartialEq)]
pub struct SodeValue {
    pub xdot: DVector<f64>,
    pub f: DVector<f64>,
}

/// A Lagrangian `L(x, v)` on an algebroid restricted to a subbundle.
#[derive(Clone, Debug)]
pub struct LagrangianSystem {
    name: String,
    subbundle: Subbundle,
    lagrangian: ScalarField,
    state_box: SampleBox,
    initial_states: Vec<ConstrainedState>,
}

impl LagrangianSystem {
    /// `state_box` spans `(x, w)`; the restricted Hessian is checked for
    /// invertibility at the initial states and at seeded samples of the box.
    pub fn new(
        name: &str,
        subbundle: Subbundle,
        lagrangian: ScalarField,
        state_box: SampleBox,
        initial_states: Vec<ConstrainedState>,
    ) -> Result<Self> {
        let (n, m, k) = (
            subbundle.parent().base_dim(),
            subbundle.parent().rank(),
            subbundle.rank(),
        );
        check_len("Lagrangian arity", n + m, lagrangian.arity())?;
        check_len("state box dimension", n + k, state_box.dim())?;
        let sys = LagrangianSystem {
            name: name.to_string(),
            subbundle,
            lagrangian,
            state_box,
            initial_states,
        };
        for s in &sys.initial_states {
            sys.check_state(s)?;
            sys.restricted_hessian(s)?;
        }
        for s in sys.recommended_states(REGULARITY_SAMPLES, 0) {
            sys.restricted_hessian(&s)?;
        }
        Ok(sys)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn subbundle(&self) -> &Subbundle {
        &self.subbundle
    }

    pub fn algebroid(&self) -> &LieAlgebroid {
        self.subbundle.parent()
    }

    pub fn lagrangian(&self) -> &ScalarField {
        &self.lagrangian
    }

    pub fn state_box(&self) -> &SampleBox {
        &self.state_box
    }

    pub fn initial_states(&self) -> &[ConstrainedState] {
        &self.initial_states
    }

    /// `(n, m, k)`: base dimension, algebroid rank, constrained rank.
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.algebroid().base_dim(),
            self.algebroid().rank(),
            self.subbundle.rank(),
        )
    }

    /// Seeded uniform states from the recommended box.
    pub fn recommended_states(&self, count: usize, seed: u64) -> Vec<ConstrainedState> {
        let n = self.algebroid().base_dim();
        self.state_box
            .sample(count, seed)
            .iter()
            .map(|s| ConstrainedState::from_flat(s, n))
            .collect()
    }

    pub fn check_state(&self, s: &ConstrainedState) -> Result<()> {
        let (n, _, k) = self.dims();
        check_len("base point", n, s.x.len())?;
        check_len("constrained velocity", k, s.w.len())?;
        if s.x.iter().chain(&s.w).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("state has non-finite entries".into()));
        }
        Ok(())
    }

    /// Algebroid velocity `v = i(x) w`.
    pub fn velocity(&self, s: &ConstrainedState) -> Result<DVector<f64>> {
        self.check_state(s)?;
        Ok(self.subbundle.injection_at(&s.x)? * DVector::from_column_slice(&s.w))
    }

    /// `M_AB = i^a_A H_ab i^b_B`, failing when it is numerically singular.
    pub fn restricted_hessian(&self, s: &ConstrainedState) -> Result<DMatrix<f64>> {
        let loc = Local::new(self, s)?;
        let id = DVector::zeros(loc.m_mat.nrows());
        solve_lu(loc.m_mat.clone(), &id).map_err(|pivot_ratio| Error::DegenerateLagrangian { pivot_ratio })?;
        Ok(loc.m_mat)
    }
}

/// Derivatives of `L`, `rho`, `C` and `i` at one state.
struct Local {
    inj: DMatrix<f64>,
    inj_grad: Vec<DMatrix<f64>>,
    rho: DMatrix<f64>,
    structure: Vec<DMatrix<f64>>,
    lambda: DMatrix<f64>,
    w: DVector<f64>,
    v: DVector<f64>,
    lx: DVector<f64>,
    lv: DVector<f64>,
    lvv: DMatrix<f64>,
    /// `lvx[(a, i)] = d^2 L / dv^a dx^i`
    lvx: DMatrix<f64>,
    value: f64,
    m_mat: DMatrix<f64>,
}

impl Local {
    fn new(sys: &LagrangianSystem, s: &ConstrainedState) -> Result<Self> {
        sys.check_state(s)?;
        let (n, m, _) = sys.dims();
        let a = sys.algebroid();
        let (inj, inj_grad) = sys.subbundle.injection().value_and_gradient(&s.x)?;
        let rho = a.anchor_at(&s.x)?;
        let structure = a.structure_at(&s.x)?;
        let w = DVector::from_column_slice(&s.w);
        let v = &inj * &w;
        let mut xv = s.x.clone();
        xv.extend(v.iter());
        let jet = sys.lagrangian.evaluate_jet(&xv)?;
        let lx = jet.gradient.rows(0, n).into_owned();
        let lv = jet.gradient.rows(n, m).into_owned();
        let lvv = jet.hessian.view((n, n), (m, m)).into_owned();
        let lvx = jet.hessian.view((n, 0), (m, n)).into_owned();
        let m_mat = inj.transpose() * &lvv * &inj;
        let lambda = &rho * &inj;
        Ok(Local {
            inj,
            inj_grad,
            rho,
            structure,
            lambda,
            w,
            v,
            lx,
            lv,
            lvv,
            lvx,
            value: jet.value,
            m_mat,
        })
    }

    fn xdot(&self) -> DVector<f64> {
        &self.lambda * &self.w
    }

    /// `sum_c C^c_ab v^b p_c` for each `a`.
    fn bracket_force(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.v.len());
        for (c, slice) in self.structure.iter().enumerate() {
            out += slice * &self.v * self.lv[c];
        }
        out
    }

    /// Time derivative of `v = i(x) w` from the motion of `x` alone.
    fn injection_rate(&self, xdot: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.v.len());
        for (i, g) in self.inj_grad.iter().enumerate() {
            u += g * &self.w * xdot[i];
        }
        u
    }

    /// Free part of the contracted equations: everything except `M f`.
    fn free_terms(&self) -> DVector<f64> {
        let xdot = self.xdot();
        let u = self.injection_rate(&xdot);
        let rhs = self.rho.transpose() * &self.lx - self.bracket_force() - &self.lvx * &xdot - &self.lvv * u;
        self.inj.transpose() * rhs
    }

    /// `dp_a / dx^i` at fixed `w`, stored `(i, a)`.
    fn momentum_x_derivative(&self) -> DMatrix<f64> {
        let mut dp = self.lvx.transpose();
        for (i, g) in self.inj_grad.iter().enumerate() {
            let row = &self.lvv * (g * &self.w);
            for (a, val) in row.iter().enumerate() {
                dp[(i, a)] += val;
            }
        }
        dp
    }
}

/// The equations of motion at `s`: `xdot = lambda w` and the fibre acceleration `f`.
pub fn pseudo_sode(sys: &LagrangianSystem, s: &ConstrainedState) -> Result<SodeValue> {
    let loc = Local::new(sys, s)?;
    let f = solve_lu(loc.m_mat.clone(), &loc.free_terms())
        .map_err(|pivot_ratio| Error::DegenerateLagrangian { pivot_ratio })?;
    Ok(SodeValue { xdot: loc.xdot(), f })
}

/// Infinity norm of the contracted Lagrange-d'Alembert equations with fibre
/// acceleration `f` in place of the solved one.
pub fn nheq_residual(sys: &LagrangianSystem, s: &ConstrainedState, f: &[f64]) -> Result<f64> {
    let loc = Local::new(sys, s)?;
    check_len("fibre acceleration", sys.subbundle.rank(), f.len())?;
    let r = &loc.m_mat * DVector::from_column_slice(f) - loc.free_terms();
    Ok(r.amax())
}

/// Euler-Lagrange acceleration on the full algebroid:
/// `H v' = rho^T dL/dx - C(v) dL/dv - d^2L/dv dx rho v`.
pub fn unconstrained_rhs(a: &LieAlgebroid, l: &ScalarField, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    let (n, m) = (a.base_dim(), a.rank());
    check_len("base point", n, x.len())?;
    check_len("algebroid velocity", m, v.len())?;
    check_len("Lagrangian arity", n + m, l.arity())?;
    let mut xv = x.to_vec();
    xv.extend_from_slice(v);
    let jet = l.evaluate_jet(&xv)?;
    let rho = a.anchor_at(x)?;
    let vv = DVector::from_column_slice(v);
    let lx = jet.gradient.rows(0, n);
    let lv = jet.gradient.rows(n, m);
    let h = jet.hessian.view((n, n), (m, m)).into_owned();
    let lvx = jet.hessian.view((n, 0), (m, n));
    let mut rhs = rho.transpose() * lx - lvx * (&rho * &vv);
    for (c, slice) in a.structure_at(x)?.iter().enumerate() {
        rhs -= slice * &vv * lv[c];
    }
    solve_lu(h, &rhs).map_err(|pivot_ratio| Error::DegenerateLagrangian { pivot_ratio })
}

/// Energy `w dL_c/dw - L_c`, equal to `p . v - L` at `v = i w`.
pub fn energy(sys: &LagrangianSystem, s: &ConstrainedState) -> Result<f64> {
    let loc = Local::new(sys, s)?;
    Ok(loc.lv.dot(&loc.v) - loc.value)
}

/// Momenta `dL/dv^a` at `(x, i(x) w)`: the coefficients of the Poincare-Cartan form.
pub fn theta_tilde(sys: &LagrangianSystem, s: &ConstrainedState) -> Result<DVector<f64>> {
    Ok(Local::new(sys, s)?.lv)
}

/// `gamma_A = w^B [e_B, e_A]^c dL/dv^c`, the bracket contribution to the
/// constrained equations, with `[e_B, e_A]` expanded in the parent frame.
pub fn gyroscopic_term(sys: &LagrangianSystem, s: &ConstrainedState) -> Result<DVector<f64>> {
    let loc = Local::new(sys, s)?;
    let t = sys.subbundle.bracket_components(&s.x)?;
    let k = sys.subbundle.rank();
    let mut g = DVector::zeros(k);
    for (c, slice) in t.iter().enumerate() {
        g += slice.transpose() * &loc.w * loc.lv[c];
    }
    Ok(g)
}

/// Infinity norm of `i_G d(theta) + d(E)` over the `2k` basis directions of
/// the prolongation, for `G = (w, f)`.
pub fn fundamental_form_residual_with(sys: &LagrangianSystem, s: &ConstrainedState, f: &[f64]) -> Result<f64> {
    let loc = Local::new(sys, s)?;
    check_len("fibre acceleration", sys.subbundle.rank(), f.len())?;
    let f = DVector::from_column_slice(f);
    let dp = loc.momentum_x_derivative();
    let mut p_c = DMatrix::zeros(loc.v.len(), loc.v.len());
    for (c, slice) in loc.structure.iter().enumerate() {
        p_c += slice * loc.lv[c];
    }
    let p = loc.lambda.transpose() * &dp * &loc.inj - 0.5 * loc.inj.transpose() * p_c * &loc.inj;
    let e_x = &dp * &loc.v - &loc.lx;
    let horizontal = p.transpose() * &loc.w - &p * &loc.w + &loc.m_mat * &f + loc.lambda.transpose() * e_x;
    let vertical = -(&loc.m_mat * &loc.w) + loc.inj.transpose() * &loc.lvv * &loc.v;
    Ok(horizontal.amax().max(vertical.amax()))
}

/// [`fundamental_form_residual_with`] at the solved fibre acceleration.
pub fn fundamental_form_residual(sys: &LagrangianSystem, s: &ConstrainedState) -> Result<f64> {
    let g = pseudo_sode(sys, s)?;
    fundamental_form_residual_with(sys, s, g.f.as_slice())
}

/// Right-hand side on the flat state `(x, w)`.
pub fn sode_rhs(sys: &LagrangianSystem) -> impl FnMut(f64, &[f64]) -> Result<Vec<f64>> + '_ {
    let n = sys.algebroid().base_dim();
    move |_, s| {
        let g = pseudo_sode(sys, &ConstrainedState::from_flat(s, n))?;
        Ok(g.xdot.iter().chain(g.f.iter()).copied().collect())
    }
}

/// Integrates the equations of motion from `s0`, recording `energy` and
/// `ff_residual` at every emitted sample.
pub fn simulate(
    sys: &LagrangianSystem,
    s0: &ConstrainedState,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    sys.check_state(s0)?;
    let n = sys.algebroid().base_dim();
    let mut traj = integrate(sode_rhs(sys), &s0.to_flat(), t_span, opts)?;
    traj.record("energy", |_, s| energy(sys, &ConstrainedState::from_flat(s, n)))?;
    traj.record("ff_residual", |_, s| {
        fundamental_form_residual(sys, &ConstrainedState::from_flat(s, n))
    })?;
    Ok(traj)
}
