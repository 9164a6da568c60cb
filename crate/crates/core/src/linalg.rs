//! Small dense helpers shared by the operator, null-space and solver code.

use nalgebra::{DMatrix, DVector};

/// Trace inner product `<A, B> = sum_ij A_ij B_ij`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Thin SVD with factors reordered so that singular values are descending.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut su = DMatrix::zeros(a.nrows(), k);
    let mut sv = DMatrix::zeros(a.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v_t.row(src).transpose());
        s.push(svd.singular_values[src]);
    }
    SortedSvd { u: su, s, v: sv }
}

/// Orthonormal basis for the span of the columns of `a`, via modified
/// Gram-Schmidt with one re-orthogonalisation pass. Columns whose residual
/// falls below `tol` times their original norm are dropped.
pub fn orthonormal_columns(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(a.ncols());
    for c in a.column_iter() {
        let norm0 = c.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut r: DVector<f64> = c.into_owned();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&r);
                r.axpy(-proj, b, 1.0);
            }
        }
        let nr = r.norm();
        if nr > tol * norm0 {
            basis.push(r / nr);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(a.nrows(), 0);
    }
    DMatrix::from_columns(&basis)
}

/// Squared norm of the orthogonal projection of `x` onto the span of the
/// orthonormal columns of `basis`.
pub fn projected_energy(basis: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    basis.tr_mul(x).norm_squared()
}

/// `P = B B^T` for a basis with orthonormal columns.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

pub fn outer(x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    x * y.transpose()
}

/// Largest absolute entry, zero for empty inputs.
pub fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
