//! Catalog of benchmark systems.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{build_atiyah, so3_constants, LieAlgebroid, PrincipalBundleData, Subbundle};
use crate::dynamics::{ConstrainedState, LagrangianSystem};
use crate::error::{Error, Result};
use crate::optimal_control::{ExtremalState, MechanicalLagrangian};
use crate::oracle::{ConnectionForm, TangentBundleSystem};
use crate::sampling::SampleBox;
use crate::smooth::{Jet, MatrixField, ScalarField};

/// How a reference value was obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum FactSource {
    /// Follows directly from the form of the system.
    ByInspection,
    /// Computed by an independent method, named here.
    Oracle(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFact {
    pub name: &'static str,
    pub statement: &'static str,
    pub source: FactSource,
}

/// A fully specified system with its optional companions.
#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub system: LagrangianSystem,
    /// Base-point box for axiom validation.
    pub base_box: SampleBox,
    /// Multiplier formulation on the tangent bundle, for systems on `TQ`.
    pub oracle: Option<TangentBundleSystem>,
    /// Principal bundle whose Atiyah algebroid carries the system.
    pub bundle: Option<PrincipalBundleData>,
    pub mechanical: Option<MechanicalLagrangian>,
    pub extremal_initial: Option<ExtremalState>,
    pub reference_facts: Vec<ReferenceFact>,
}

impl CatalogEntry {
    /// `(n, m, k)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.system.dims()
    }
}

/// Catalog names in alphabetical order.
pub fn names() -> &'static [&'static str] {
    &[
        "chaplygin_sleigh",
        "disk_pmp",
        "euler_top",
        "free_particle",
        "nonholonomic_particle",
        "rolling_disk_full",
        "rolling_disk_reduced",
    ]
}

pub fn build(name: &str) -> Result<CatalogEntry> {
    match name {
        "chaplygin_sleigh" => chaplygin_sleigh(1.0, 1.0, 1.0),
        "disk_pmp" => disk_pmp(1.0),
        "euler_top" => euler_top([1.0, 2.0, 3.0]),
        "free_particle" => free_particle(),
        "nonholonomic_particle" => nonholonomic_particle(),
        "rolling_disk_full" => rolling_disk_full(1.0),
        "rolling_disk_reduced" => rolling_disk_reduced(DiskParameters::default()),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

fn c(v: f64) -> Jet {
    Jet::constant(v)
}

fn kinetic(n: usize) -> ScalarField {
    ScalarField::new(2 * n, move |z| 0.5 * z[n..].iter().map(Jet::square).sum::<Jet>())
}

fn state(x: &[f64], w: &[f64]) -> ConstrainedState {
    ConstrainedState::new(x.to_vec(), w.to_vec())
}

fn joined_box(base: &SampleBox, fibre: &SampleBox) -> SampleBox {
    SampleBox {
        lo: base.lo.iter().chain(&fibre.lo).copied().collect(),
        hi: base.hi.iter().chain(&fibre.hi).copied().collect(),
    }
}

pub fn free_particle() -> Result<CatalogEntry> {
    let a = LieAlgebroid::tangent(2);
    let base_box = SampleBox::cube(2, -1.0, 1.0);
    let system = LagrangianSystem::new(
        "free_particle",
        Subbundle::identity(&a),
        kinetic(2),
        joined_box(&base_box, &SampleBox::cube(2, -1.0, 1.0)),
        vec![state(&[0.0, 0.0], &[1.0, 0.5])],
    )?;
    Ok(CatalogEntry {
        name: "free_particle",
        system,
        base_box,
        oracle: Some(TangentBundleSystem::new(2, kinetic(2), MatrixField::zeros(0, 2, 2))?),
        bundle: None,
        mechanical: Some(MechanicalLagrangian::kinetic(&DMatrix::identity(2, 2), 2)?),
        extremal_initial: Some(ExtremalState::new(vec![0.0, 0.0], vec![1.0, 0.5])),
        reference_facts: vec![ReferenceFact {
            name: "zero_acceleration",
            statement: "f = 0 at every state",
            source: FactSource::ByInspection,
        }],
    })
}

/// Rigid body with principal moments `inertia`, on so(3) over a point.
pub fn euler_top(inertia: [f64; 3]) -> Result<CatalogEntry> {
    if inertia.iter().any(|i| !(*i > 0.0)) {
        return Err(Error::InvalidInput(format!("moments of inertia must be positive, got {inertia:?}")));
    }
    let a = LieAlgebroid::lie_algebra(&so3_constants())?;
    let l = ScalarField::new(3, move |v| {
        0.5 * (inertia[0] * v[0].square() + inertia[1] * v[1].square() + inertia[2] * v[2].square())
    });
    let base_box = SampleBox::cube(0, 0.0, 0.0);
    let system = LagrangianSystem::new(
        "euler_top",
        Subbundle::identity(&a),
        l,
        SampleBox::cube(3, -1.0, 1.0),
        vec![state(&[], &[1.0, 1.0, 1.0])],
    )?;
    let metric = DMatrix::from_diagonal(&DVector::from_row_slice(&inertia));
    Ok(CatalogEntry {
        name: "euler_top",
        system,
        base_box,
        oracle: None,
        bundle: None,
        mechanical: Some(MechanicalLagrangian::kinetic(&metric, 0)?),
        extremal_initial: None,
        reference_facts: vec![
            ReferenceFact {
                name: "euler_equations",
                statement: "f = (-1, 1, -1/3) at w = (1, 1, 1) for I = (1, 2, 3)",
                source: FactSource::Oracle("Euler equations I_a w_a' = (I_b - I_c) w_b w_c"),
            },
            ReferenceFact {
                name: "casimir",
                statement: "|I w|^2 is conserved",
                source: FactSource::ByInspection,
            },
        ],
    })
}

fn particle_injection() -> MatrixField {
    MatrixField::from_fn(3, 2, 3, |x| vec![c(1.0), c(0.0), c(0.0), c(1.0), x[1].clone(), c(0.0)])
}

/// Free particle in space with `zdot = y xdot`.
pub fn nonholonomic_particle() -> Result<CatalogEntry> {
    let a = LieAlgebroid::tangent(3);
    let base_box = SampleBox::cube(3, -1.0, 1.0);
    let system = LagrangianSystem::new(
        "nonholonomic_particle",
        Subbundle::new(&a, particle_injection())?,
        kinetic(3),
        joined_box(&base_box, &SampleBox::cube(2, -1.0, 1.0)),
        vec![state(&[0.0, 1.0, 0.0], &[1.0, 1.0])],
    )?;
    let omega = MatrixField::from_fn(1, 3, 3, |x| vec![-&x[1], c(0.0), c(1.0)]);
    Ok(CatalogEntry {
        name: "nonholonomic_particle",
        system,
        base_box,
        oracle: Some(TangentBundleSystem::new(3, kinetic(3), omega)?),
        bundle: None,
        mechanical: None,
        extremal_initial: None,
        reference_facts: vec![ReferenceFact {
            name: "acceleration",
            statement: "f = (-0.5, 0) at x = (0, 1, 0), w = (1, 1)",
            source: FactSource::Oracle("Lagrange multiplier solve"),
        }],
    })
}

fn disk_connection(r: f64, arity: usize, theta: usize) -> MatrixField {
    MatrixField::from_fn(2, 2, arity, move |q| vec![c(0.0), -r * q[theta].cos(), c(0.0), -r * q[theta].sin()])
}

/// Vertically rolling disk on `Q = (x, y, theta, phi)` with unit mass and inertias.
pub fn rolling_disk_full(radius: f64) -> Result<CatalogEntry> {
    let a = LieAlgebroid::tangent(4);
    let form = ConnectionForm::new(vec![2, 3], vec![0, 1], disk_connection(radius, 4, 2))?;
    let base_box = SampleBox::new(vec![-1.0, -1.0, -PI, -PI], vec![1.0, 1.0, PI, PI])?;
    let system = LagrangianSystem::new(
        "rolling_disk_full",
        Subbundle::new(&a, form.injection())?,
        kinetic(4),
        joined_box(&base_box, &SampleBox::cube(2, -2.0, 2.0)),
        vec![state(&[0.0, 0.0, 0.0, 0.0], &[1.0, 2.0])],
    )?;
    Ok(CatalogEntry {
        name: "rolling_disk_full",
        system,
        base_box,
        oracle: Some(TangentBundleSystem::from_connection(kinetic(4), &form)?),
        bundle: Some(disk_bundle(radius)?),
        mechanical: None,
        extremal_initial: None,
        reference_facts: vec![
            ReferenceFact {
                name: "constant_rates",
                statement: "theta and phi rotate at constant rates",
                source: FactSource::Oracle("Lagrange multiplier solve"),
            },
            ReferenceFact {
                name: "circle",
                statement: "(x, y) traces a circle of radius R |phidot / thetadot|",
                source: FactSource::ByInspection,
            },
        ],
    })
}

/// Abelian translation symmetry of the rolling disk over the shape space `(theta, phi)`.
pub fn disk_bundle(radius: f64) -> Result<PrincipalBundleData> {
    PrincipalBundleData::new(2, 2, vec![DMatrix::zeros(2, 2); 2], disk_connection(radius, 2, 0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskParameters {
    pub mass: f64,
    pub radius: f64,
    /// Moment of inertia about the vertical axis.
    pub inertia_theta: f64,
    /// Moment of inertia about the rolling axis.
    pub inertia_phi: f64,
}

impl Default for DiskParameters {
    fn default() -> Self {
        DiskParameters {
            mass: 1.0,
            radius: 1.0,
            inertia_theta: 1.0,
            inertia_phi: 1.0,
        }
    }
}

/// Rolling disk on the Atiyah algebroid of [`disk_bundle`]; fibre coordinates
/// `(thetadot, phidot, vx, vy)` with `v` the connection-corrected translation.
pub fn rolling_disk_reduced(p: DiskParameters) -> Result<CatalogEntry> {
    let bundle = disk_bundle(p.radius)?;
    let a = build_atiyah(&bundle)?;
    let horizontal = MatrixField::constant(&DMatrix::identity(4, 2), 2);
    let l = ScalarField::new(6, move |z| {
        let th = &z[0];
        let (td, pd, vx, vy) = (&z[2], &z[3], &z[4], &z[5]);
        let ux = vx + p.radius * (pd * th.cos());
        let uy = vy + p.radius * (pd * th.sin());
        0.5 * p.mass * (ux.square() + uy.square()) + 0.5 * p.inertia_theta * td.square() + 0.5 * p.inertia_phi * pd.square()
    });
    let base_box = SampleBox::cube(2, -PI, PI);
    let system = LagrangianSystem::new(
        "rolling_disk_reduced",
        Subbundle::new(&a, horizontal)?,
        l,
        joined_box(&base_box, &SampleBox::cube(2, -2.0, 2.0)),
        vec![state(&[0.0, 0.0], &[1.0, 2.0])],
    )?;
    Ok(CatalogEntry {
        name: "rolling_disk_reduced",
        system,
        base_box,
        oracle: None,
        bundle: Some(bundle),
        mechanical: None,
        extremal_initial: None,
        reference_facts: vec![ReferenceFact {
            name: "constant_velocity",
            statement: "f = 0 at every state",
            source: FactSource::Oracle("multiplier solve on rolling_disk_full"),
        }],
    })
}

/// Kinetic-energy control problem on the rolling-disk Atiyah algebroid with
/// the identity metric; its normal subbundle is the horizontal one.
pub fn disk_pmp(radius: f64) -> Result<CatalogEntry> {
    let bundle = disk_bundle(radius)?;
    let a = build_atiyah(&bundle)?;
    let base_box = SampleBox::cube(2, -PI, PI);
    let system = LagrangianSystem::new(
        "disk_pmp",
        Subbundle::new(&a, MatrixField::constant(&DMatrix::identity(4, 2), 2))?,
        ScalarField::new(6, |z| 0.5 * z[2..].iter().map(Jet::square).sum::<Jet>()),
        joined_box(&base_box, &SampleBox::cube(2, -2.0, 2.0)),
        vec![state(&[0.0, 0.0], &[1.0, 0.5])],
    )?;
    Ok(CatalogEntry {
        name: "disk_pmp",
        system,
        base_box,
        oracle: None,
        bundle: Some(bundle),
        mechanical: Some(MechanicalLagrangian::kinetic(&DMatrix::identity(4, 4), 2)?),
        extremal_initial: Some(ExtremalState::new(vec![0.0, 0.0], vec![1.0, 0.5])),
        reference_facts: vec![ReferenceFact {
            name: "normal_rank",
            statement: "the normal subbundle has rank 2 in the rank-4 fibre",
            source: FactSource::Oracle("singular values of g^-1 rho^T"),
        }],
    })
}

/// Knife-edge sleigh on `(x, y, theta)`: mass `m` centred at distance `a`
/// ahead of the blade, inertia `i` about the centre of mass.
pub fn chaplygin_sleigh(m: f64, i: f64, a: f64) -> Result<CatalogEntry> {
    let alg = LieAlgebroid::tangent(3);
    let inj = MatrixField::from_fn(3, 2, 3, |q| vec![q[2].cos(), c(0.0), q[2].sin(), c(0.0), c(0.0), c(1.0)]);
    let l = ScalarField::new(6, move |z| {
        let th = &z[2];
        let (xd, yd, td) = (&z[3], &z[4], &z[5]);
        let ux = xd - a * (td * th.sin());
        let uy = yd + a * (td * th.cos());
        0.5 * m * (ux.square() + uy.square()) + 0.5 * i * td.square()
    });
    let omega = MatrixField::from_fn(1, 3, 3, |q| vec![-q[2].sin(), q[2].cos(), c(0.0)]);
    let base_box = SampleBox::new(vec![-1.0, -1.0, -PI], vec![1.0, 1.0, PI])?;
    let system = LagrangianSystem::new(
        "chaplygin_sleigh",
        Subbundle::new(&alg, inj)?,
        l.clone(),
        joined_box(&base_box, &SampleBox::cube(2, -1.0, 1.0)),
        vec![state(&[0.0, 0.0, 0.0], &[0.5, 1.0])],
    )?;
    Ok(CatalogEntry {
        name: "chaplygin_sleigh",
        system,
        base_box,
        oracle: Some(TangentBundleSystem::new(3, l, omega)?),
        bundle: None,
        mechanical: None,
        extremal_initial: None,
        reference_facts: vec![ReferenceFact {
            name: "body_frame_equations",
            statement: "u' = a w^2, w' = -m a u w / (I + m a^2) for forward speed u and turning rate w",
            source: FactSource::Oracle("body-frame equations of the sleigh"),
        }],
    })
}

/// Linear momentum of the sleigh's centre of mass at `(q, qdot)`, for unit mass
/// and offset.
pub fn sleigh_momentum(q: &[f64], qdot: &[f64]) -> [f64; 2] {
    [qdot[0] - qdot[2] * q[2].sin(), qdot[1] + qdot[2] * q[2].cos()]
}

/// The isomorphism `TQ/G -> TM + g` induced by the connection of `bundle` on a
/// trivial bundle whose coordinates are `base` followed by `group` (given as
/// index lists into `q`): returns `(qdot_base, qdot_group + A qdot_base)`.
pub fn atiyah_isomorphism(
    bundle: &PrincipalBundleData,
    base: &[usize],
    group: &[usize],
    q: &[f64],
    qdot: &[f64],
) -> Result<Vec<f64>> {
    let xb: Vec<f64> = base.iter().map(|&j| q[j]).collect();
    let vb: Vec<f64> = base.iter().map(|&j| qdot[j]).collect();
    let a = bundle.connection().value(&xb)?;
    let corr = a * DVector::from_column_slice(&vb);
    let mut out = vb;
    out.extend(group.iter().enumerate().map(|(g, &j)| qdot[j] + corr[g]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::validate_algebroid;
    use crate::dynamics::pseudo_sode;

    #[test]
    fn names_sorted_and_buildable() {
        let mut sorted = names().to_vec();
        sorted.sort();
        assert_eq!(sorted, names());
        for name in names() {
            let e = build(name).unwrap();
            assert_eq!(&e.name, name);
            let rep = validate_algebroid(e.system.algebroid(), &e.base_box, 20, 0).unwrap();
            assert!(rep.max_residual() < 1e-12, "{name}: {rep:?}");
        }
        assert!(matches!(build("snakeboard"), Err(Error::UnknownSystem(_))));
    }

    #[test]
    fn dimensions() {
        assert_eq!(build("euler_top").unwrap().dims(), (0, 3, 3));
        assert_eq!(build("rolling_disk_reduced").unwrap().dims(), (2, 4, 2));
        assert_eq!(build("rolling_disk_full").unwrap().dims(), (4, 4, 2));
        assert_eq!(build("disk_pmp").unwrap().dims(), (2, 4, 2));
    }

    #[test]
    fn sleigh_body_frame_equations() {
        let e = build("chaplygin_sleigh").unwrap();
        for s in e.system.recommended_states(20, 3) {
            let (u, w) = (s.w[0], s.w[1]);
            let f = pseudo_sode(&e.system, &s).unwrap().f;
            assert!((f[0] - w * w).abs() < 1e-13);
            assert!((f[1] + u * w / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn reduced_disk_has_no_acceleration() {
        let p = DiskParameters {
            mass: 2.0,
            radius: 0.7,
            inertia_theta: 0.3,
            inertia_phi: 1.5,
        };
        let e = rolling_disk_reduced(p).unwrap();
        for s in e.system.recommended_states(20, 4) {
            assert!(pseudo_sode(&e.system, &s).unwrap().f.amax() < 1e-13);
        }
    }

    #[test]
    fn isomorphism_kills_admissible_group_velocity() {
        let b = disk_bundle(1.0).unwrap();
        let (th, td, pd) = (0.4f64, 1.0, 2.0);
        let q = [0.3, 0.1, th, 0.0];
        let qdot = [pd * th.cos(), pd * th.sin(), td, pd];
        let out = atiyah_isomorphism(&b, &[2, 3], &[0, 1], &q, &qdot).unwrap();
        assert_eq!(&out[..2], &[td, pd]);
        assert!(out[2].abs() < 1e-15 && out[3].abs() < 1e-15);
    }

    #[test]
    fn companion_injections_annihilated() {
        for name in names() {
            let e = build(name).unwrap();
            if let Some(o) = &e.oracle {
                for s in e.system.recommended_states(10, 1) {
                    assert!(o.annihilation_residual(e.system.subbundle(), &s.x).unwrap() < 1e-15, "{name}");
                }
            }
        }
    }

    #[test]
    fn invalid_inertia_rejected() {
        assert!(euler_top([1.0, 0.0, 1.0]).is_err());
    }
}
