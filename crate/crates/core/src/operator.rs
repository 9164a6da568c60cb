//! Bilinear maps and their lifted linear operators.
//!
//! A bilinear map `S(x, y)` with `q` outputs is represented by `q` basis
//! matrices `S_j` of shape `m x n`, with `z_j = x^T S_j y = <x y^T, S_j>`.
//! The lifted operator acts on an arbitrary `m x n` matrix `W` through the
//! same trace inner products.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::frobenius_inner;

/// How an operator was built. Convolution operators carry a fast path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Generic,
    LinearConvolution,
    DictionaryTransformed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedOperator {
    m: usize,
    n: usize,
    basis: Vec<DMatrix<f64>>,
    kind: OperatorKind,
}

/// A vector of observations `z`, one entry per basis matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub DVector<f64>);

impl Observation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl SignalPair {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        SignalPair { x, y }
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Self {
        SignalPair {
            x: DVector::from_column_slice(x),
            y: DVector::from_column_slice(y),
        }
    }

    /// The lifted matrix `x y^T`.
    pub fn lift(&self) -> DMatrix<f64> {
        &self.x * self.y.transpose()
    }
}

/// Lifts the linear convolution `z = x * y` with `x` of length `m` and `y` of
/// length `n`. Basis matrix `S_k` (1-based `k`) has ones exactly on the
/// anti-diagonal `i + j = k + 1`.
pub fn lift_linear_convolution(m: usize, n: usize) -> Result<LiftedOperator> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimension(format!(
            "convolution needs m >= 1 and n >= 1, got ({m}, {n})"
        )));
    }
    let q = m + n - 1;
    let mut basis = vec![DMatrix::zeros(m, n); q];
    for i in 0..m {
        for j in 0..n {
            // 0-based: i + j = k
            basis[i + j][(i, j)] = 1.0;
        }
    }
    Ok(LiftedOperator {
        m,
        n,
        basis,
        kind: OperatorKind::LinearConvolution,
    })
}

/// Wraps externally supplied basis matrices as a generic operator.
pub fn lift_from_matrices(basis: Vec<DMatrix<f64>>) -> Result<LiftedOperator> {
    let first = basis
        .first()
        .ok_or_else(|| Error::InvalidDimension("operator basis must be nonempty".into()))?;
    let (m, n) = first.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimension(format!("basis matrices are {m}x{n}")));
    }
    for (j, s) in basis.iter().enumerate() {
        if s.shape() != (m, n) {
            return Err(Error::shape(
                format!("{m}x{n}"),
                format!("{}x{} at basis index {j}", s.nrows(), s.ncols()),
            ));
        }
    }
    Ok(LiftedOperator {
        m,
        n,
        basis,
        kind: OperatorKind::Generic,
    })
}

impl LiftedOperator {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.basis.len()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    fn check_matrix(&self, w: &DMatrix<f64>) -> Result<()> {
        if w.shape() != (self.m, self.n) {
            return Err(Error::shape(
                format!("{}x{}", self.m, self.n),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        Ok(())
    }

    /// `z_j = <W, S_j>`.
    pub fn apply(&self, w: &DMatrix<f64>) -> Result<Observation> {
        self.check_matrix(w)?;
        if self.kind == OperatorKind::LinearConvolution {
            let mut z = DVector::zeros(self.q());
            for j in 0..self.n {
                for i in 0..self.m {
                    z[i + j] += w[(i, j)];
                }
            }
            return Ok(Observation(z));
        }
        Ok(self.apply_by_basis(w))
    }

    /// Reference evaluation through the basis matrices, ignoring any
    /// structured fast path.
    pub fn apply_by_basis(&self, w: &DMatrix<f64>) -> Observation {
        Observation(DVector::from_iterator(
            self.q(),
            self.basis.iter().map(|s| frobenius_inner(w, s)),
        ))
    }

    /// `z_j = x^T S_j y`, without forming `x y^T`.
    pub fn apply_bilinear(&self, pair: &SignalPair) -> Result<Observation> {
        if pair.x.len() != self.m || pair.y.len() != self.n {
            return Err(Error::shape(
                format!("(x: {}, y: {})", self.m, self.n),
                format!("(x: {}, y: {})", pair.x.len(), pair.y.len()),
            ));
        }
        if self.kind == OperatorKind::LinearConvolution {
            let mut z = DVector::zeros(self.q());
            for (i, xi) in pair.x.iter().enumerate() {
                for (j, yj) in pair.y.iter().enumerate() {
                    z[i + j] += xi * yj;
                }
            }
            return Ok(Observation(z));
        }
        Ok(Observation(DVector::from_iterator(
            self.q(),
            self.basis.iter().map(|s| pair.x.dot(&(s * &pair.y))),
        )))
    }

    /// `sum_j z_j S_j`, the adjoint of [`apply`](Self::apply).
    pub fn adjoint_apply(&self, z: &Observation) -> Result<DMatrix<f64>> {
        if z.len() != self.q() {
            return Err(Error::shape(format!("length {}", self.q()), format!("length {}", z.len())));
        }
        let mut w = DMatrix::zeros(self.m, self.n);
        for (s, zj) in self.basis.iter().zip(z.0.iter()) {
            w += s * *zj;
        }
        Ok(w)
    }

    /// Absorbs dictionaries `x = A beta`, `y = B gamma` into the operator:
    /// the new basis is `A^T S_j B`.
    pub fn transform_with_dictionaries(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LiftedOperator> {
        if a.nrows() != self.m {
            return Err(Error::shape(format!("A with {} rows", self.m), format!("{} rows", a.nrows())));
        }
        if b.nrows() != self.n {
            return Err(Error::shape(format!("B with {} rows", self.n), format!("{} rows", b.nrows())));
        }
        if a.ncols() == 0 || b.ncols() == 0 {
            return Err(Error::InvalidDimension("dictionaries need at least one atom".into()));
        }
        let basis = self.basis.iter().map(|s| a.tr_mul(s) * b).collect();
        Ok(LiftedOperator {
            m: a.ncols(),
            n: b.ncols(),
            basis,
            kind: OperatorKind::DictionaryTransformed,
        })
    }

    /// The `q x mn` matrix whose rows are the column-major vectorised basis
    /// matrices, so that `vec(W) -> z` is a matrix-vector product.
    pub fn flattened(&self) -> DMatrix<f64> {
        let mn = self.m * self.n;
        let mut a = DMatrix::zeros(self.q(), mn);
        for (j, s) in self.basis.iter().enumerate() {
            for (k, v) in s.iter().enumerate() {
                a[(j, k)] = *v;
            }
        }
        a
    }
}

/// A rank-one matrix `x y^T = sigma u v^T` with unit factors.
///
/// The sign is canonical: the first nonzero entry of `u` is positive, so two
/// members of the same scaling equivalence class `(a x, y / a)` produce the
/// same `(sigma, u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneInstance {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub sigma: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl RankOneInstance {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        let nx = x.norm();
        let ny = y.norm();
        if x.is_empty() || y.is_empty() {
            return Err(Error::InvalidDimension("rank-one factors must be nonempty".into()));
        }
        if !(nx > 0.0 && ny > 0.0) || !nx.is_finite() || !ny.is_finite() {
            return Err(Error::param("x, y", "both factors must be nonzero and finite"));
        }
        let mut u = &x / nx;
        let mut v = &y / ny;
        if let Some(first) = u.iter().find(|c| **c != 0.0) {
            if *first < 0.0 {
                u.neg_mut();
                v.neg_mut();
            }
        }
        Ok(RankOneInstance {
            x,
            y,
            sigma: nx * ny,
            u,
            v,
        })
    }

    pub fn from_pair(pair: &SignalPair) -> Result<Self> {
        Self::new(pair.x.clone(), pair.y.clone())
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    /// `sigma u v^T`.
    pub fn matrix(&self) -> DMatrix<f64> {
        (&self.u * self.v.transpose()) * self.sigma
    }

    /// Same instance rescaled so that `||M||_F = 1`.
    pub fn normalized(&self) -> Self {
        RankOneInstance {
            x: self.u.clone(),
            y: self.v.clone(),
            sigma: 1.0,
            u: self.u.clone(),
            v: self.v.clone(),
        }
    }

    /// Whether both instances lie in the same scaling equivalence class.
    pub fn equivalent(&self, other: &RankOneInstance, tol: f64) -> bool {
        self.m() == other.m()
            && self.n() == other.n()
            && (self.sigma - other.sigma).abs() <= tol * self.sigma.max(other.sigma)
            && (&self.u - &other.u).amax() <= tol
            && (&self.v - &other.v).amax() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(m: usize, n: usize, i: usize, j: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(m, n);
        a[(i, j)] = 1.0;
        a
    }

    #[test]
    fn convolution_basis_3_by_4() {
        let op = lift_linear_convolution(3, 4).unwrap();
        assert_eq!(op.q(), 6);
        assert_eq!(op.kind(), OperatorKind::LinearConvolution);
        assert_eq!(op.basis()[0], e(3, 4, 0, 0));
        assert_eq!(op.basis()[5], e(3, 4, 2, 3));
        let s3 = &op.basis()[2];
        let ones: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| s3[(i, j)] == 1.0)
            .collect();
        assert_eq!(ones, vec![(0, 2), (1, 1), (2, 0)]);
    }

    #[test]
    fn convolution_degenerate_and_small() {
        let op = lift_linear_convolution(1, 1).unwrap();
        assert_eq!(op.q(), 1);
        assert_eq!(op.basis()[0], DMatrix::from_element(1, 1, 1.0));

        let op = lift_linear_convolution(2, 2).unwrap();
        assert_eq!(op.q(), 3);
        assert_eq!(op.basis()[1], DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]));
    }

    #[test]
    fn convolution_rejects_zero_dims() {
        assert!(lift_linear_convolution(0, 3).is_err());
        assert!(lift_linear_convolution(3, 0).is_err());
    }

    #[test]
    fn convolution_basis_partitions_the_ones_matrix() {
        let op = lift_linear_convolution(5, 7).unwrap();
        let total = op.basis().iter().fold(DMatrix::zeros(5, 7), |acc, s| acc + s);
        assert_eq!(total, DMatrix::from_element(5, 7, 1.0));
    }

    #[test]
    fn from_matrices_checks_shapes() {
        assert!(lift_from_matrices(vec![]).is_err());
        let op = lift_from_matrices(vec![e(1, 1, 0, 0)]).unwrap();
        assert_eq!((op.m(), op.n(), op.q()), (1, 1, 1));
        assert_eq!(op.kind(), OperatorKind::Generic);
        assert!(lift_from_matrices(vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)]).is_err());
    }

    #[test]
    fn apply_rejects_bad_shapes() {
        let op = lift_linear_convolution(3, 4).unwrap();
        assert!(op.apply(&DMatrix::zeros(4, 3)).is_err());
        assert!(op.apply_bilinear(&SignalPair::from_slices(&[1.0], &[1.0])).is_err());
        assert!(op.adjoint_apply(&Observation(DVector::zeros(5))).is_err());
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let op = lift_linear_convolution(3, 4).unwrap();
        assert_eq!(op.apply(&DMatrix::zeros(3, 4)).unwrap().max_abs(), 0.0);
        let z = op.apply_bilinear(&SignalPair::from_slices(&[0.0; 3], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert_eq!(op.adjoint_apply(&Observation(DVector::zeros(6))).unwrap(), DMatrix::zeros(3, 4));
    }

    #[test]
    fn adjoint_of_first_unit_vector() {
        let op = lift_linear_convolution(2, 2).unwrap();
        let w = op.adjoint_apply(&Observation(DVector::from_vec(vec![1.0, 0.0, 0.0]))).unwrap();
        assert_eq!(w, e(2, 2, 0, 0));
    }

    #[test]
    fn identity_dictionaries_leave_basis_unchanged() {
        let op = lift_linear_convolution(3, 4).unwrap();
        let t = op
            .transform_with_dictionaries(&DMatrix::identity(3, 3), &DMatrix::identity(4, 4))
            .unwrap();
        assert_eq!(t.kind(), OperatorKind::DictionaryTransformed);
        assert_eq!(t.basis(), op.basis());
        assert!(op
            .transform_with_dictionaries(&DMatrix::identity(2, 2), &DMatrix::identity(4, 4))
            .is_err());
    }

    #[test]
    fn rank_one_instance_canonical_sign() {
        let r = RankOneInstance::new(DVector::from_vec(vec![0.0, -3.0, 4.0]), DVector::from_vec(vec![2.0, 0.0]))
            .unwrap();
        assert!((r.sigma - 10.0).abs() < 1e-15);
        assert!(r.u[1] > 0.0);
        assert!((r.u.norm() - 1.0).abs() < 1e-12 && (r.v.norm() - 1.0).abs() < 1e-12);
        let xy = &r.x * r.y.transpose();
        assert!((r.matrix() - xy).amax() < 1e-12);
        assert!(RankOneInstance::new(DVector::zeros(3), DVector::from_element(2, 1.0)).is_err());
    }

    #[test]
    fn rank_one_instance_scaling_class() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = DVector::from_vec(vec![0.3, 1.0]);
        let a = RankOneInstance::new(x.clone(), y.clone()).unwrap();
        let b = RankOneInstance::new(&x * -2.5, &y / -2.5).unwrap();
        assert!(a.equivalent(&b, 1e-12));
    }
}
