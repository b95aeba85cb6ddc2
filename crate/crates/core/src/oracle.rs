//! Classical Lagrange-d'Alembert solver on tangent bundles, independent of the
//! algebroid machinery: constraints enter as annihilator rows and reaction
//! forces as Lagrange multipliers.

use nalgebra::{DMatrix, DVector};

use crate::algebroid::Subbundle;
use crate::error::{check_len, Error, Result};
use crate::integrate::{integrate, IntegratorOptions, Trajectory};
use crate::linalg::solve_lu;
use crate::smooth::{Jet, MatrixField, ScalarField};

/// Largest `|omega . xdot|` accepted by [`multiplier_accel`].
pub const CONSTRAINT_TOLERANCE: f64 = 1e-8;

/// A Lagrangian `L(x, xdot)` on `TR^n` with linear constraints `omega(x) xdot = 0`.
#[derive(Clone, Debug)]
pub struct TangentBundleSystem {
    n: usize,
    lagrangian: ScalarField,
    constraints: MatrixField,
}

impl TangentBundleSystem {
    /// `constraints` is the `p x n` field of annihilator rows.
    pub fn new(n: usize, lagrangian: ScalarField, constraints: MatrixField) -> Result<Self> {
        check_len("Lagrangian arity", 2 * n, lagrangian.arity())?;
        if constraints.shape().1 != n || constraints.arity() != n {
            return Err(Error::InvalidInput(format!(
                "constraint rows must be a p x {n} field over {n} coordinates, got {:?} over {}",
                constraints.shape(),
                constraints.arity()
            )));
        }
        Ok(TangentBundleSystem {
            n,
            lagrangian,
            constraints,
        })
    }

    pub fn from_connection(lagrangian: ScalarField, form: &ConnectionForm) -> Result<Self> {
        TangentBundleSystem::new(form.dim(), lagrangian, form.annihilator())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.shape().0
    }

    pub fn lagrangian(&self) -> &ScalarField {
        &self.lagrangian
    }

    pub fn constraints(&self) -> &MatrixField {
        &self.constraints
    }

    /// `|omega(x) xdot|_inf`.
    pub fn constraint_violation(&self, x: &[f64], xdot: &[f64]) -> Result<f64> {
        check_len("velocity", self.n, xdot.len())?;
        Ok((self.constraints.value(x)? * DVector::from_column_slice(xdot)).amax())
    }

    /// `|omega(x) i(x)|_inf` for a companion subbundle of the tangent algebroid.
    pub fn annihilation_residual(&self, companion: &Subbundle, x: &[f64]) -> Result<f64> {
        Ok((self.constraints.value(x)? * companion.restricted_anchor(x)?).amax())
    }

    fn lagrangian_derivatives(&self, x: &[f64], xdot: &[f64]) -> Result<LagrangianParts> {
        let n = self.n;
        check_len("configuration", n, x.len())?;
        check_len("velocity", n, xdot.len())?;
        let mut z = x.to_vec();
        z.extend_from_slice(xdot);
        let jet = self.lagrangian.evaluate_jet(&z)?;
        Ok(LagrangianParts {
            lx: jet.gradient.rows(0, n).into_owned(),
            h: jet.hessian.view((n, n), (n, n)).into_owned(),
            lvx: jet.hessian.view((n, 0), (n, n)).into_owned(),
        })
    }
}

struct LagrangianParts {
    lx: DVector<f64>,
    h: DMatrix<f64>,
    /// `lvx[(i, j)] = d^2 L / d xdot^i d x^j`
    lvx: DMatrix<f64>,
}

/// Acceleration and multipliers without checking that `xdot` is admissible.
///
/// Solves `H xddot - omega^T lambda = dL/dx - d^2L/dxdot dx xdot` together
/// with the differentiated constraint `omega xddot + (d_j omega xdot^j) xdot = 0`.
pub fn multiplier_accel_unchecked(
    s: &TangentBundleSystem,
    x: &[f64],
    xdot: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, p) = (s.n, s.constraint_count());
    let parts = s.lagrangian_derivatives(x, xdot)?;
    let (omega, omega_grad) = s.constraints.value_and_gradient(x)?;
    let qd = DVector::from_column_slice(xdot);
    let mut kkt = DMatrix::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(&parts.h);
    kkt.view_mut((0, n), (n, p)).copy_from(&(-omega.transpose()));
    kkt.view_mut((n, 0), (p, n)).copy_from(&omega);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(&parts.lx - &parts.lvx * &qd));
    let mut omega_dot = DMatrix::zeros(p, n);
    for (j, g) in omega_grad.iter().enumerate() {
        omega_dot += g * xdot[j];
    }
    rhs.rows_mut(n, p).copy_from(&(-(omega_dot * &qd)));
    let sol = solve_lu(kkt, &rhs).map_err(|pivot_ratio| {
        if p == 0 {
            Error::DegenerateLagrangian { pivot_ratio }
        } else {
            Error::DegenerateConstraint { pivot_ratio }
        }
    })?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned()))
}

/// [`multiplier_accel_unchecked`] for admissible velocities only.
pub fn multiplier_accel(s: &TangentBundleSystem, x: &[f64], xdot: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    let violation = s.constraint_violation(x, xdot)?;
    if !(violation <= CONSTRAINT_TOLERANCE) {
        return Err(Error::InconsistentState { violation });
    }
    multiplier_accel_unchecked(s, x, xdot)
}

fn tangent_injection(companion: &Subbundle, x: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let parent = companion.parent();
    let n = parent.base_dim();
    if parent.rank() != n || !parent.anchor().is_constant() || parent.anchor_at(x)? != DMatrix::identity(n, n) {
        return Err(Error::InvalidInput(
            "companion subbundle must live in a tangent algebroid with identity anchor".into(),
        ));
    }
    companion.injection().value_and_gradient(x)
}

/// `xddot = (xdot^i d_i iota) w + iota wdot` for `xdot = iota w`.
pub fn lift_acceleration(companion: &Subbundle, x: &[f64], w: &[f64], wdot: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    let (iota, grad) = tangent_injection(companion, x)?;
    check_len("constrained velocity", companion.rank(), w.len())?;
    check_len("constrained acceleration", companion.rank(), wdot.len())?;
    let wv = DVector::from_column_slice(w);
    let xdot = &iota * &wv;
    let mut xddot = &iota * DVector::from_column_slice(wdot);
    for (i, g) in grad.iter().enumerate() {
        xddot += g * &wv * xdot[i];
    }
    Ok((xdot, xddot))
}

/// Least-squares `wdot` with `iota wdot = xddot - (xdot^i d_i iota) w`.
pub fn project_acceleration(companion: &Subbundle, x: &[f64], w: &[f64], xddot: &[f64]) -> Result<DVector<f64>> {
    let k = companion.rank();
    let (_, drift) = lift_acceleration(companion, x, w, &vec![0.0; k])?;
    let iota = companion.checked_injection_at(x)?;
    let rhs = DVector::from_column_slice(xddot) - drift;
    let normal = iota.transpose() * &iota;
    solve_lu(normal, &(iota.transpose() * rhs)).map_err(|_| Error::SingularInjection { rank: k - 1, k })
}

/// Infinity norm of `iota^T [d/dt dL/dxdot - dL/dx]` along the jet
/// `xdot = iota w`, `xddot` from `wdot`.
pub fn dalembert_contracted_residual(
    s: &TangentBundleSystem,
    companion: &Subbundle,
    x: &[f64],
    w: &[f64],
    wdot: &[f64],
) -> Result<f64> {
    let (xdot, xddot) = lift_acceleration(companion, x, w, wdot)?;
    let parts = s.lagrangian_derivatives(x, xdot.as_slice())?;
    let iota = companion.injection_at(x)?;
    let r = iota.transpose() * (&parts.h * xddot + &parts.lvx * &xdot - &parts.lx);
    Ok(r.amax())
}

/// Right-hand side on the flat state `(x, xdot)`; constraint drift is not corrected.
pub fn oracle_rhs(s: &TangentBundleSystem) -> impl FnMut(f64, &[f64]) -> Result<Vec<f64>> + '_ {
    let n = s.n;
    move |_, z| {
        let (xddot, _) = multiplier_accel_unchecked(s, &z[..n], &z[n..])?;
        Ok(z[n..].iter().chain(xddot.iter()).copied().collect())
    }
}

/// Integrates the multiplier equations, recording `constraint_violation` and `energy`.
pub fn simulate_oracle(
    s: &TangentBundleSystem,
    x0: &[f64],
    xdot0: &[f64],
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    multiplier_accel(s, x0, xdot0)?;
    let n = s.n;
    let mut z0 = x0.to_vec();
    z0.extend_from_slice(xdot0);
    let mut traj = integrate(oracle_rhs(s), &z0, t_span, opts)?;
    traj.record("constraint_violation", |_, z| s.constraint_violation(&z[..n], &z[n..]))?;
    traj.record("energy", |_, z| {
        let (_, grad) = s.lagrangian.gradient(z)?;
        let l = s.lagrangian.value(z)?;
        Ok((0..n).map(|i| grad[n + i] * z[n + i]).sum::<f64>() - l)
    })?;
    Ok(traj)
}

/// Constraints solved for some velocities: `sdot^a = -A^a_I(x) rdot^I`.
///
/// `r_indices` and `s_indices` partition the coordinates; `coefficients` is
/// the `|s| x |r|` field `A^a_I`.
#[derive(Clone, Debug)]
pub struct ConnectionForm {
    r_indices: Vec<usize>,
    s_indices: Vec<usize>,
    coefficients: MatrixField,
}

impl ConnectionForm {
    pub fn new(r_indices: Vec<usize>, s_indices: Vec<usize>, coefficients: MatrixField) -> Result<Self> {
        let n = r_indices.len() + s_indices.len();
        let mut seen = vec![false; n];
        for &i in r_indices.iter().chain(&s_indices) {
            if i >= n || seen[i] {
                return Err(Error::InvalidInput("r and s indices must partition the coordinates".into()));
            }
            seen[i] = true;
        }
        if coefficients.shape() != (s_indices.len(), r_indices.len()) || coefficients.arity() != n {
            return Err(Error::InvalidInput(format!(
                "connection coefficients must be {}x{} over {n} coordinates",
                s_indices.len(),
                r_indices.len()
            )));
        }
        Ok(ConnectionForm {
            r_indices,
            s_indices,
            coefficients,
        })
    }

    pub fn dim(&self) -> usize {
        self.r_indices.len() + self.s_indices.len()
    }

    /// Rows `ds^a + A^a_I dr^I`.
    pub fn annihilator(&self) -> MatrixField {
        let (n, rr) = (self.dim(), self.r_indices.len());
        let (r_idx, s_idx, a) = (self.r_indices.clone(), self.s_indices.clone(), self.coefficients.clone());
        MatrixField::from_fn(s_idx.len(), n, n, move |x| {
            let av = a.eval_jets(x);
            let mut out = vec![Jet::constant(0.0); s_idx.len() * n];
            for (al, &si) in s_idx.iter().enumerate() {
                out[al * n + si] = Jet::constant(1.0);
                for (big_i, &ri) in r_idx.iter().enumerate() {
                    out[al * n + ri] = av[al * rr + big_i].clone();
                }
            }
            out
        })
    }

    /// Columns `d/dr^I - A^a_I d/ds^a` spanning the constraint distribution.
    pub fn injection(&self) -> MatrixField {
        let (n, rr) = (self.dim(), self.r_indices.len());
        let (r_idx, s_idx, a) = (self.r_indices.clone(), self.s_indices.clone(), self.coefficients.clone());
        MatrixField::from_fn(n, rr, n, move |x| {
            let av = a.eval_jets(x);
            let mut out = vec![Jet::constant(0.0); n * rr];
            for (big_i, &ri) in r_idx.iter().enumerate() {
                out[ri * rr + big_i] = Jet::constant(1.0);
                for (al, &si) in s_idx.iter().enumerate() {
                    out[si * rr + big_i] = -&av[al * rr + big_i];
                }
            }
            out
        })
    }

    /// `B^a_IJ = d_J A^a_I - d_I A^a_J + A^b_I d_{s^b} A^a_J - A^b_J d_{s^b} A^a_I`;
    /// slice `a` is an `|r| x |r|` antisymmetric matrix.
    pub fn curvature(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let (a, grad) = self.coefficients.value_and_gradient(x)?;
        let (rr, ss) = (self.r_indices.len(), self.s_indices.len());
        let mut out = vec![DMatrix::zeros(rr, rr); ss];
        for (al, b) in out.iter_mut().enumerate() {
            for i in 0..rr {
                for j in 0..rr {
                    let mut v = grad[self.r_indices[j]][(al, i)] - grad[self.r_indices[i]][(al, j)];
                    for be in 0..ss {
                        let ds = &grad[self.s_indices[be]];
                        v += a[(be, i)] * ds[(al, j)] - a[(be, j)] * ds[(al, i)];
                    }
                    b[(i, j)] = v;
                }
            }
        }
        Ok(out)
    }

    /// Residual of the reduced Lagrange-d'Alembert equations in `r`:
    ///
    /// `d/dt dL_c/drdot_I - dL_c/dr^I + A^a_I dL_c/ds^a + rdot^J B^a_IJ dL/dsdot^a`,
    ///
    /// where `L_c(x, rdot) = L(x, rdot, -A rdot)`.
    pub fn reduced_residual(&self, l: &ScalarField, x: &[f64], rdot: &[f64], rddot: &[f64]) -> Result<f64> {
        let (n, rr) = (self.dim(), self.r_indices.len());
        check_len("configuration", n, x.len())?;
        check_len("r velocity", rr, rdot.len())?;
        check_len("r acceleration", rr, rddot.len())?;
        let lc = self.constrained_lagrangian(l);
        let mut z = x.to_vec();
        z.extend_from_slice(rdot);
        let jet = lc.evaluate_jet(&z)?;
        let a = self.coefficients.value(x)?;
        let rd = DVector::from_column_slice(rdot);
        let sdot = -(&a * &rd);
        let mut qdot = DVector::zeros(n);
        for (big_i, &ri) in self.r_indices.iter().enumerate() {
            qdot[ri] = rdot[big_i];
        }
        for (al, &si) in self.s_indices.iter().enumerate() {
            qdot[si] = sdot[al];
        }
        let mut full = x.to_vec();
        full.extend(qdot.iter());
        let (_, lgrad) = l.gradient(&full)?;
        let b = self.curvature(x)?;
        let mut worst = 0.0f64;
        for big_i in 0..rr {
            let row = n + big_i;
            let mut r = 0.0;
            for j in 0..n {
                r += jet.hessian[(row, j)] * qdot[j];
            }
            for big_j in 0..rr {
                r += jet.hessian[(row, n + big_j)] * rddot[big_j];
            }
            r -= jet.gradient[self.r_indices[big_i]];
            for (al, &si) in self.s_indices.iter().enumerate() {
                r += a[(al, big_i)] * jet.gradient[si];
                let p_s = lgrad[n + si];
                for big_j in 0..rr {
                    r += rdot[big_j] * b[al][(big_i, big_j)] * p_s;
                }
            }
            worst = worst.max(r.abs());
        }
        Ok(worst)
    }

    /// `L_c` as a field on `(x, rdot)`.
    pub fn constrained_lagrangian(&self, l: &ScalarField) -> ScalarField {
        let (n, rr) = (self.dim(), self.r_indices.len());
        let (r_idx, s_idx, a, l) = (
            self.r_indices.clone(),
            self.s_indices.clone(),
            self.coefficients.clone(),
            l.clone(),
        );
        ScalarField::new(n + rr, move |z| {
            let x = &z[..n];
            let rdot = &z[n..];
            let av = a.eval_jets(x);
            let mut args: Vec<Jet> = x.to_vec();
            args.extend(vec![Jet::constant(0.0); n]);
            for (big_i, &ri) in r_idx.iter().enumerate() {
                args[n + ri] = rdot[big_i].clone();
            }
            for (al, &si) in s_idx.iter().enumerate() {
                args[n + si] = -(0..rr).map(|big_i| &av[al * rr + big_i] * &rdot[big_i]).sum::<Jet>();
            }
            l.eval_jets(&args)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::LieAlgebroid;

    fn kinetic(n: usize) -> ScalarField {
        ScalarField::new(2 * n, move |z| 0.5 * z[n..].iter().map(Jet::square).sum::<Jet>())
    }

    fn particle() -> TangentBundleSystem {
        let omega = MatrixField::from_fn(1, 3, 3, |x| vec![-&x[1], Jet::constant(0.0), Jet::constant(1.0)]);
        TangentBundleSystem::new(3, kinetic(3), omega).unwrap()
    }

    fn particle_companion() -> Subbundle {
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
    fn free_particle_has_no_acceleration() {
        let s = TangentBundleSystem::new(2, kinetic(2), MatrixField::zeros(0, 2, 2)).unwrap();
        let (a, l) = multiplier_accel(&s, &[0.1, 0.2], &[1.0, -2.0]).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 0.0]);
        assert_eq!(l.len(), 0);
    }

    #[test]
    fn nonholonomic_particle_by_hand() {
        let (a, l) = multiplier_accel(&particle(), &[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(a.as_slice(), &[-0.5, 0.0, 0.5]);
        assert_eq!(l.as_slice(), &[0.5]);
        // differentiated constraint: -y xddot + zddot - ydot xdot = 0
        assert_eq!(-a[0] + a[2] - 1.0, 0.0);
    }

    #[test]
    fn inadmissible_velocity_rejected() {
        assert!(matches!(
            multiplier_accel(&particle(), &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::InconsistentState { .. })
        ));
    }

    #[test]
    fn dependent_constraints_are_degenerate() {
        let omega = MatrixField::constant(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]), 2);
        let s = TangentBundleSystem::new(2, kinetic(2), omega).unwrap();
        assert!(matches!(
            multiplier_accel(&s, &[0.0, 0.0], &[0.0, 1.0]),
            Err(Error::DegenerateConstraint { .. })
        ));
    }

    #[test]
    fn contracted_residual_and_projection() {
        let s = particle();
        let w = particle_companion();
        let x = [0.3, -0.4, 0.8];
        let wv = [0.7, 0.2];
        assert_eq!(s.annihilation_residual(&w, &x).unwrap(), 0.0);
        let (xdot, _) = lift_acceleration(&w, &x, &wv, &[0.0, 0.0]).unwrap();
        let (xddot, _) = multiplier_accel(&s, &x, xdot.as_slice()).unwrap();
        let wdot = project_acceleration(&w, &x, &wv, xddot.as_slice()).unwrap();
        assert!(dalembert_contracted_residual(&s, &w, &x, &wv, wdot.as_slice()).unwrap() < 1e-14);
        let bumped = [wdot[0] + 1.0, wdot[1]];
        assert!(dalembert_contracted_residual(&s, &w, &x, &wv, &bumped).unwrap() >= 1.0);
    }

    fn disk_form(r: f64) -> ConnectionForm {
        // coordinates (x, y, theta, phi); xdot = R phidot cos theta, ydot = R phidot sin theta
        let a = MatrixField::from_fn(2, 2, 4, move |q| {
            vec![Jet::constant(0.0), -r * q[2].cos(), Jet::constant(0.0), -r * q[2].sin()]
        });
        ConnectionForm::new(vec![2, 3], vec![0, 1], a).unwrap()
    }

    #[test]
    fn connection_form_matches_direct_annihilator() {
        let form = disk_form(1.0);
        let q = [0.1, 0.2, 0.7, -0.3];
        let ann = form.annihilator().value(&q).unwrap();
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, -0.7f64.cos(), 0.0, 1.0, 0.0, -0.7f64.sin()]);
        assert!((ann.clone() - expected).amax() < 1e-15);
        assert!((ann * form.injection().value(&q).unwrap()).amax() < 1e-15);
        let b = form.curvature(&q).unwrap();
        assert_eq!(b[0][(0, 0)], 0.0);
        assert_eq!(b[0][(0, 1)], -b[0][(1, 0)]);
    }

    #[test]
    fn rolling_disk_keeps_constant_angular_rates() {
        let form = disk_form(1.0);
        let s = TangentBundleSystem::from_connection(kinetic(4), &form).unwrap();
        for (th, td, pd) in [(0.3, 1.0, 2.0), (-1.2, -0.5, 0.7)] {
            let xdot = [pd * f64::cos(th), pd * f64::sin(th), td, pd];
            let (a, _) = multiplier_accel(&s, &[0.0, 0.0, th, 0.0], &xdot).unwrap();
            assert!(a[2].abs() < 1e-14 && a[3].abs() < 1e-14);
            let r = form.reduced_residual(s.lagrangian(), &[0.0, 0.0, th, 0.0], &[td, pd], &[a[2], a[3]]).unwrap();
            assert!(r < 1e-13, "{r}");
        }
    }

    #[test]
    fn reduced_residual_matches_multipliers_on_nonholonomic_particle() {
        // z is solved: zdot = y xdot, so A^z_x = -y, A^z_y = 0
        let a = MatrixField::from_fn(1, 2, 3, |q| vec![-&q[1], Jet::constant(0.0)]);
        let form = ConnectionForm::new(vec![0, 1], vec![2], a).unwrap();
        let l = ScalarField::new(6, |z| 0.5 * (z[3].square() + 2.0 * z[4].square() + z[5].square()) - z[1].cos());
        let s = TangentBundleSystem::from_connection(l.clone(), &form).unwrap();
        let x = [0.2, 0.6, -0.1];
        let rdot = [0.9, -0.4];
        let xdot = [rdot[0], rdot[1], x[1] * rdot[0]];
        let (a, _) = multiplier_accel(&s, &x, &xdot).unwrap();
        assert!(form.reduced_residual(&l, &x, &rdot, &[a[0], a[1]]).unwrap() < 1e-13);
        assert!(form.reduced_residual(&l, &x, &rdot, &[a[0] + 0.1, a[1]]).unwrap() > 1e-2);
    }

    #[test]
    fn oracle_trajectory_preserves_constraints() {
        let tr = simulate_oracle(&particle(), &[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0], (0.0, 10.0), &IntegratorOptions::default())
            .unwrap();
        let v = tr.diagnostic("constraint_violation").unwrap();
        assert!(v.iter().all(|c| *c < 1e-7));
        let e = tr.diagnostic("energy").unwrap();
        assert!(e.iter().all(|c| (c - 1.5).abs() < 1e-8));
    }
}
