use nalgebra::DMatrix;

use super::LieAlgebroid;
use crate::error::{check_len, Error, Result};
use crate::smooth::{Jet, MatrixField};

const LIE_TOL: f64 = 1e-10;

/// A principal connection on a trivial bundle `R^n x G`.
///
/// `lie_constants[g]` is the slice `C^g_..` of the Lie algebra and
/// `connection` the `r x n` field `A^g_i(x)`.
#[derive(Clone, Debug)]
pub struct PrincipalBundleData {
    n: usize,
    r: usize,
    lie_constants: Vec<DMatrix<f64>>,
    connection: MatrixField,
}

impl PrincipalBundleData {
    pub fn new(
        n: usize,
        r: usize,
        lie_constants: Vec<DMatrix<f64>>,
        connection: MatrixField,
    ) -> Result<Self> {
        check_len("Lie constant slices", r, lie_constants.len())?;
        if lie_constants.iter().any(|c| c.shape() != (r, r)) {
            return Err(Error::InvalidInput(format!("Lie constant slices must be {r}x{r}")));
        }
        if connection.shape() != (r, n) || connection.arity() != n {
            return Err(Error::InvalidInput(format!(
                "connection must be an {r}x{n} field over {n} coordinates, got {:?} over {}",
                connection.shape(),
                connection.arity()
            )));
        }
        let scale = 1.0 + lie_constants.iter().fold(0.0f64, |m, c| m.max(c.amax()));
        let anti = lie_constants
            .iter()
            .fold(0.0f64, |m, c| m.max((c + c.transpose()).amax()));
        if !(anti <= LIE_TOL * scale) {
            return Err(Error::InvalidInput(format!(
                "Lie constants are not antisymmetric (residual {anti:.3e})"
            )));
        }
        let jac = lie_jacobi_residual(&lie_constants);
        if !(jac <= LIE_TOL * scale * scale) {
            return Err(Error::InvalidInput(format!(
                "Lie constants violate the Jacobi identity (residual {jac:.3e})"
            )));
        }
        Ok(PrincipalBundleData {
            n,
            r,
            lie_constants,
            connection,
        })
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn group_dim(&self) -> usize {
        self.r
    }

    pub fn lie_constants(&self) -> &[DMatrix<f64>] {
        &self.lie_constants
    }

    pub fn connection(&self) -> &MatrixField {
        &self.connection
    }
}

fn lie_jacobi_residual(c: &[DMatrix<f64>]) -> f64 {
    let r = c.len();
    let mut worst = 0.0f64;
    for a in 0..r {
        for b in 0..r {
            for d in 0..r {
                for g in 0..r {
                    let mut s = 0.0;
                    for e in 0..r {
                        s += c[e][(a, b)] * c[g][(e, d)]
                            + c[e][(b, d)] * c[g][(e, a)]
                            + c[e][(d, a)] * c[g][(e, b)];
                    }
                    worst = worst.max(s.abs());
                }
            }
        }
    }
    worst
}

/// Curvature `omega^g_ij = d_i A^g_j - d_j A^g_i + C^g_ab A^a_j A^b_i` at `x`;
/// slice `g` is an `n x n` antisymmetric matrix.
pub fn curvature(p: &PrincipalBundleData, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let (a, grad) = p.connection.value_and_gradient(x)?;
    let (n, r) = (p.n, p.r);
    let mut out = vec![DMatrix::zeros(n, n); r];
    for (g, omega) in out.iter_mut().enumerate() {
        for i in 0..n {
            for j in (i + 1)..n {
                let mut v = grad[i][(g, j)] - grad[j][(g, i)];
                for al in 0..r {
                    for be in 0..r {
                        v += p.lie_constants[g][(al, be)] * a[(al, j)] * a[(be, i)];
                    }
                }
                omega[(i, j)] = v;
                omega[(j, i)] = -v;
            }
        }
    }
    Ok(out)
}

/// Connection entries `A^g_i` and their partials `d_k A^g_i` as jets over `x`.
///
/// The partials are exact to first order: the connection is differentiated
/// twice at the point underlying `x` and the result composed with `x`.
fn connection_with_partials(conn: &MatrixField, x: &[Jet]) -> (Vec<Jet>, Vec<Vec<Jet>>) {
    let n = x.len();
    let values = conn.eval_jets(x);
    let x0: Vec<f64> = x.iter().map(Jet::value).collect();
    let local = conn.eval_jets(&Jet::seed(&x0, true));
    let partials = local
        .iter()
        .map(|e| {
            let g = e.gradient_padded(n);
            (0..n)
                .map(|k| {
                    let row: Vec<f64> = (0..n).map(|l| e.hessian_entry(k, l)).collect();
                    Jet::compose(g[k], &row, None, x)
                })
                .collect()
        })
        .collect();
    (values, partials)
}

/// The Atiyah algebroid `T(R^n x G)/G` of the connection, in the frame of
/// horizontal lifts `e_i` and the Lie algebra basis `e_g`.
///
/// Brackets: `[e_i, e_j] = -omega^g_ij e_g`, `[e_i, e_a] = Gamma^g_ia e_g` with
/// `Gamma^g_ia = C^g_ab A^b_i`, and `[e_a, e_b] = C^g_ab e_g`.
pub fn build_atiyah(p: &PrincipalBundleData) -> Result<LieAlgebroid> {
    let (n, r) = (p.n, p.r);
    let m = n + r;
    let mut anchor = DMatrix::zeros(n, m);
    anchor.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut structure = vec![MatrixField::zeros(m, m, n); n];
    for g in 0..r {
        let lie = p.lie_constants.clone();
        let conn = p.connection.clone();
        let abelian = lie.iter().all(|c| c.amax() == 0.0);
        if abelian && conn.is_constant() {
            structure.push(MatrixField::zeros(m, m, n));
            continue;
        }
        structure.push(MatrixField::from_fn(m, m, n, move |x| {
            let (a, da) = connection_with_partials(&conn, x);
            let cg = &lie[g];
            let mut out = vec![Jet::constant(0.0); m * m];
            for i in 0..n {
                for j in (i + 1)..n {
                    // omega^g_ij; entry (g, j) of A is a[g * n + j], d_i of it is da[g * n + j][i]
                    let mut w = &da[g * n + j][i] - &da[g * n + i][j];
                    for al in 0..r {
                        for be in 0..r {
                            let c = cg[(al, be)];
                            if c != 0.0 {
                                w = w + c * (&a[al * n + j] * &a[be * n + i]);
                            }
                        }
                    }
                    out[i * m + j] = -&w;
                    out[j * m + i] = w;
                }
                for al in 0..r {
                    let mut gamma = Jet::constant(0.0);
                    for be in 0..r {
                        let c = cg[(al, be)];
                        if c != 0.0 {
                            gamma = gamma + c * &a[be * n + i];
                        }
                    }
                    out[i * m + n + al] = gamma.clone();
                    out[(n + al) * m + i] = -gamma;
                }
            }
            for al in 0..r {
                for be in 0..r {
                    out[(n + al) * m + n + be] = Jet::constant(cg[(al, be)]);
                }
            }
            out
        }));
    }
    LieAlgebroid::new(n, m, MatrixField::constant(&anchor, n), structure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::{so3_constants, validate_algebroid};
    use crate::sampling::SampleBox;
    use crate::smooth::fd_matrix_gradient;

    const R: f64 = 1.3;

    fn disk_bundle() -> PrincipalBundleData {
        // base (theta, phi), abelian R^2 fibre
        let conn = MatrixField::from_fn(2, 2, 2, |x| {
            vec![
                Jet::constant(0.0),
                -R * x[0].cos(),
                Jet::constant(0.0),
                -R * x[0].sin(),
            ]
        });
        PrincipalBundleData::new(2, 2, vec![DMatrix::zeros(2, 2); 2], conn).unwrap()
    }

    fn so3_bundle() -> PrincipalBundleData {
        let conn = MatrixField::from_fn(3, 2, 2, |x| {
            vec![
                x[1].sin(),
                &x[0] * &x[1],
                x[0].cos() * 0.5,
                x[1].exp(),
                x[0].square(),
                &x[0] - &x[1] * 2.0,
            ]
        });
        PrincipalBundleData::new(2, 3, so3_constants(), conn).unwrap()
    }

    #[test]
    fn flat_abelian_bundle_has_zero_brackets() {
        let p = PrincipalBundleData::new(2, 2, vec![DMatrix::zeros(2, 2); 2], MatrixField::zeros(2, 2, 2))
            .unwrap();
        let a = build_atiyah(&p).unwrap();
        assert_eq!(a.rank(), 4);
        for s in a.structure_at(&[0.4, 0.1]).unwrap() {
            assert_eq!(s.amax(), 0.0);
        }
        assert_eq!(a.anchor_at(&[0.0, 0.0]).unwrap(), DMatrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 1., 0., 0.]));
    }

    #[test]
    fn disk_curvature_by_hand() {
        let p = disk_bundle();
        for th in [0.0, 0.4, std::f64::consts::FRAC_PI_2, 2.5] {
            let om = curvature(&p, &[th, 0.3]).unwrap();
            assert!((om[0][(0, 1)] - R * th.sin()).abs() < 1e-15);
            assert!((om[1][(0, 1)] + R * th.cos()).abs() < 1e-15);
            assert_eq!(om[0][(1, 0)], -om[0][(0, 1)]);
        }
        let c = build_atiyah(&p).unwrap().structure_at(&[0.4, 0.0]).unwrap();
        assert!((c[2][(0, 1)] + R * 0.4f64.sin()).abs() < 1e-15);
        assert!((c[3][(0, 1)] - R * 0.4f64.cos()).abs() < 1e-15);
        let nonzero: usize = c.iter().map(|s| s.iter().filter(|v| **v != 0.0).count()).sum();
        assert_eq!(nonzero, 4);
    }

    #[test]
    fn curvature_with_linear_connection() {
        let conn = MatrixField::from_fn(1, 2, 2, |x| vec![x[1].clone(), Jet::constant(0.0)]);
        let p = PrincipalBundleData::new(2, 1, vec![DMatrix::zeros(1, 1)], conn).unwrap();
        let om = curvature(&p, &[0.2, 0.9]).unwrap();
        assert_eq!(om[0][(1, 0)], 1.0);
        assert_eq!(om[0][(0, 1)], -1.0);
    }

    #[test]
    fn flat_so3_keeps_lie_brackets() {
        let p = PrincipalBundleData::new(1, 3, so3_constants(), MatrixField::zeros(3, 1, 1)).unwrap();
        let c = build_atiyah(&p).unwrap().structure_at(&[0.7]).unwrap();
        assert_eq!(c[0].amax(), 0.0);
        for g in 0..3 {
            assert_eq!(c[g + 1].view((1, 1), (3, 3)), so3_constants()[g]);
            assert_eq!(c[g + 1].row(0).amax(), 0.0);
        }
    }

    #[test]
    fn atiyah_algebroids_satisfy_the_axioms() {
        for p in [disk_bundle(), so3_bundle()] {
            let a = build_atiyah(&p).unwrap();
            let rep = validate_algebroid(&a, &SampleBox::cube(2, -1.5, 1.5), 50, 9).unwrap();
            assert!(rep.max_residual() < 1e-12, "{rep:?}");
        }
    }

    #[test]
    fn structure_gradients_match_finite_differences() {
        let a = build_atiyah(&so3_bundle()).unwrap();
        let x = [0.3, -0.6];
        let loc = a.local(&x).unwrap();
        for (c, field) in a.structure().iter().enumerate() {
            let fd = fd_matrix_gradient(field, &x, 1e-6).unwrap();
            for k in 0..2 {
                assert!((&loc.structure_grad[c][k] - &fd[k]).amax() < 1e-7);
            }
        }
    }

    #[test]
    fn invalid_lie_constants_rejected() {
        // [e0, e1] = e2, [e1, e2] = e1: antisymmetric but not a Lie algebra
        let mut c = vec![DMatrix::zeros(3, 3); 3];
        c[2][(0, 1)] = 1.0;
        c[2][(1, 0)] = -1.0;
        c[1][(1, 2)] = 1.0;
        c[1][(2, 1)] = -1.0;
        assert!(matches!(
            PrincipalBundleData::new(1, 3, c, MatrixField::zeros(3, 1, 1)),
            Err(Error::InvalidInput(_))
        ));
        let mut c = so3_constants();
        c[0][(1, 2)] = 0.0;
        assert!(PrincipalBundleData::new(1, 3, c, MatrixField::zeros(3, 1, 1)).is_err());
    }
}
