use nalgebra::{DMatrix, DVector};

/// Pivot ratio below which an LU factorization is declared singular.
pub const PIVOT_RATIO_THRESHOLD: f64 = 1e-12;

/// Solves `a x = b` by partial-pivoted LU.
///
/// On failure returns the pivot ratio `min |u_ii| / max |u_ii|`, which doubles
/// as a cheap condition estimate.
pub(crate) fn solve_lu(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, f64> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = a.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.amax();
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio >= PIVOT_RATIO_THRESHOLD) {
        return Err(ratio);
    }
    lu.solve(b).ok_or(ratio)
}

/// Numerical rank: singular values above `rel_tol * sigma_max`.
pub(crate) fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.amax();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}
