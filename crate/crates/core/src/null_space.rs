//! Restricted rank-two null spaces.
//!
//! Two representations are supported. Finite families list every
//! `(column space, row space)` pair of the rank-two null-space matrices, which
//! is all an identifiability scan needs. The parametric family wraps the
//! two-factor construction that lies in the kernel of the lifted linear
//! convolution for every choice of its parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_columns, sorted_svd};

/// Default relative tolerance for numerical rank decisions on `sigma_k / sigma_1`.
pub const DEFAULT_SUBSPACE_TOL: f64 = 1e-8;

/// Hard cap on the number of parts a finite family may hold.
pub const MAX_FAMILY_PARTS: u128 = 10_000_000;

/// `X = U V^T` with two-column factors.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTwoElement {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl RankTwoElement {
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }
}

/// Orthonormal bases for the column space and row space of a rank-two matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspacePair {
    pub column: DMatrix<f64>,
    pub row: DMatrix<f64>,
}

impl SubspacePair {
    /// Orthonormalises two spanning columns on each side.
    pub fn from_spanning_columns(column: &DMatrix<f64>, row: &DMatrix<f64>) -> Result<Self> {
        let c = orthonormal_columns(column, DEFAULT_SUBSPACE_TOL);
        let r = orthonormal_columns(row, DEFAULT_SUBSPACE_TOL);
        if c.ncols() != 2 || r.ncols() != 2 || column.ncols() != 2 || row.ncols() != 2 {
            return Err(Error::RankCondition(format!(
                "expected two independent columns on each side, found {} and {}",
                c.ncols(),
                r.ncols()
            )));
        }
        Ok(SubspacePair { column: c, row: r })
    }

    pub fn m(&self) -> usize {
        self.column.nrows()
    }

    pub fn n(&self) -> usize {
        self.row.nrows()
    }
}

/// Extracts the column and row spaces of a matrix of numerical rank two.
///
/// Fails when `sigma_2 / sigma_1 < tol` (rank below two) or when
/// `sigma_3 / sigma_1 >= tol` (rank above two).
pub fn subspace_pair(x: &DMatrix<f64>, tol: f64) -> Result<SubspacePair> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::param("tol", format!("must lie in (0, 1), got {tol}")));
    }
    if x.nrows() < 2 || x.ncols() < 2 {
        return Err(Error::RankCondition(format!("{}x{} matrix cannot have rank two", x.nrows(), x.ncols())));
    }
    let f = sorted_svd(x);
    let s1 = f.s[0];
    if s1 == 0.0 || f.s[1] / s1 < tol {
        return Err(Error::RankCondition(format!(
            "numerical rank below two (sigma2/sigma1 = {:.3e})",
            if s1 == 0.0 { 0.0 } else { f.s[1] / s1 }
        )));
    }
    if f.s.len() > 2 && f.s[2] / s1 >= tol {
        return Err(Error::RankCondition(format!(
            "numerical rank above two (sigma3/sigma1 = {:.3e})",
            f.s[2] / s1
        )));
    }
    Ok(SubspacePair {
        column: f.u.columns(0, 2).into_owned(),
        row: f.v.columns(0, 2).into_owned(),
    })
}

/// The rank-two kernel element of the `m x n` linear convolution built from
/// `u` (length `m - 1`) and `v` (length `n - 1`):
/// `U = [(u; 0), (0; -u)]`, `V = [(0; v), (v; 0)]`.
pub fn conv_rank2_element(u: &DVector<f64>, v: &DVector<f64>) -> Result<RankTwoElement> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::InvalidDimension("u and v must have length at least one".into()));
    }
    let m = u.len() + 1;
    let n = v.len() + 1;
    let mut uf = DMatrix::zeros(m, 2);
    let mut vf = DMatrix::zeros(n, 2);
    for (k, uk) in u.iter().enumerate() {
        uf[(k, 0)] = *uk;
        uf[(k + 1, 1)] = -*uk;
    }
    for (k, vk) in v.iter().enumerate() {
        vf[(k + 1, 0)] = *vk;
        vf[(k, 1)] = *vk;
    }
    Ok(RankTwoElement { u: uf, v: vf })
}

/// Label of one part of a finite family, in the family's own indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartId {
    pub i: usize,
    pub j: usize,
}

impl std::fmt::Display for PartId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// A borrowed view of one part.
#[derive(Debug, Clone, Copy)]
pub struct Part<'a> {
    pub id: PartId,
    pub column: &'a DMatrix<f64>,
    pub row: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    /// Every combination of column and row subspace, row-major in `(i, j)`.
    Product,
    /// Explicit `(column index, row index)` list.
    Pairs(Vec<(usize, usize)>),
}

/// A finite family of `(column space, row space)` pairs.
///
/// Column and row subspaces are stored once each; product families such as
/// the synthetic examples then cost `O(#columns + #rows)` memory instead of
/// one stored pair per part.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteFamily {
    m: usize,
    n: usize,
    columns: Vec<DMatrix<f64>>,
    column_labels: Vec<usize>,
    rows: Vec<DMatrix<f64>>,
    row_labels: Vec<usize>,
    layout: Layout,
}

impl FiniteFamily {
    pub fn empty(m: usize, n: usize) -> Self {
        FiniteFamily {
            m,
            n,
            columns: Vec::new(),
            column_labels: Vec::new(),
            rows: Vec::new(),
            row_labels: Vec::new(),
            layout: Layout::Pairs(Vec::new()),
        }
    }

    /// Builds a family from explicit pairs; part `k` is labelled `(k, 0)`.
    pub fn from_pairs(m: usize, n: usize, pairs: Vec<SubspacePair>) -> Result<Self> {
        let mut fam = FiniteFamily::empty(m, n);
        let mut index = Vec::with_capacity(pairs.len());
        for (k, p) in pairs.into_iter().enumerate() {
            if p.m() != m || p.n() != n {
                return Err(Error::shape(format!("pairs in R^{m} x R^{n}"), format!("R^{} x R^{}", p.m(), p.n())));
            }
            fam.columns.push(p.column);
            fam.column_labels.push(k);
            fam.rows.push(p.row);
            fam.row_labels.push(0);
            index.push((k, k));
        }
        fam.layout = Layout::Pairs(index);
        Ok(fam)
    }

    fn product(
        m: usize,
        n: usize,
        columns: Vec<DMatrix<f64>>,
        column_labels: Vec<usize>,
        rows: Vec<DMatrix<f64>>,
        row_labels: Vec<usize>,
    ) -> Self {
        FiniteFamily {
            m,
            n,
            columns,
            column_labels,
            rows,
            row_labels,
            layout: Layout::Product,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of parts, `f` in the scaling laws.
    pub fn len(&self) -> usize {
        match &self.layout {
            Layout::Product => self.columns.len() * self.rows.len(),
            Layout::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The distinct column subspaces with their labels.
    pub fn column_subspaces(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.column_labels.iter().copied().zip(self.columns.iter())
    }

    /// The distinct row subspaces with their labels.
    pub fn row_subspaces(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.row_labels.iter().copied().zip(self.rows.iter())
    }

    /// Positions of part `k`'s column and row subspaces in
    /// [`column_subspaces`](Self::column_subspaces) and
    /// [`row_subspaces`](Self::row_subspaces).
    pub fn slots(&self, k: usize) -> (usize, usize) {
        match &self.layout {
            Layout::Product => (k / self.rows.len(), k % self.rows.len()),
            Layout::Pairs(p) => p[k],
        }
    }

    /// Part number `k` in the deterministic scan order.
    pub fn part(&self, k: usize) -> Part<'_> {
        let (ci, ri) = self.slots(k);
        let id = match &self.layout {
            Layout::Product => PartId {
                i: self.column_labels[ci],
                j: self.row_labels[ri],
            },
            Layout::Pairs(_) => PartId { i: k, j: 0 },
        };
        Part {
            id,
            column: &self.columns[ci],
            row: &self.rows[ri],
        }
    }

    pub fn parts(&self) -> impl Iterator<Item = Part<'_>> + '_ {
        (0..self.len()).map(move |k| self.part(k))
    }

    /// Materialises part `k` as an owned pair.
    pub fn subspace_pair(&self, k: usize) -> SubspacePair {
        let p = self.part(k);
        SubspacePair {
            column: p.column.clone(),
            row: p.row.clone(),
        }
    }
}

/// The parametric kernel family of the `m x n` linear convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvolutionFamily {
    pub m: usize,
    pub n: usize,
}

impl ConvolutionFamily {
    /// Degrees of freedom of the parametrisation, `m + n - 3`.
    pub fn dof(&self) -> usize {
        self.m + self.n - 3
    }

    pub fn generate(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<RankTwoElement> {
        if u.len() + 1 != self.m || v.len() + 1 != self.n {
            return Err(Error::shape(
                format!("u in R^{}, v in R^{}", self.m - 1, self.n - 1),
                format!("u in R^{}, v in R^{}", u.len(), v.len()),
            ));
        }
        conv_rank2_element(u, v)
    }

    /// Draws `u`, `v` with i.i.d. standard normal entries.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RankTwoElement {
        let u = DVector::from_fn(self.m - 1, |_, _| rng.sample(StandardNormal));
        let v = DVector::from_fn(self.n - 1, |_, _| rng.sample(StandardNormal));
        conv_rank2_element(&u, &v).expect("dimensions fixed by the family")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cardinality {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NullSpaceFamily {
    Finite(FiniteFamily),
    Parametric(ConvolutionFamily),
}

impl NullSpaceFamily {
    pub fn cardinality(&self) -> Cardinality {
        match self {
            NullSpaceFamily::Finite(f) => Cardinality::Finite(f.len()),
            NullSpaceFamily::Parametric(_) => Cardinality::Infinite,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            NullSpaceFamily::Finite(f) => (f.m, f.n),
            NullSpaceFamily::Parametric(c) => (c.m, c.n),
        }
    }

    pub fn as_finite(&self) -> Option<&FiniteFamily> {
        match self {
            NullSpaceFamily::Finite(f) => Some(f),
            NullSpaceFamily::Parametric(_) => None,
        }
    }
}

fn floor_sqrt(k: usize) -> usize {
    let mut r = (k as f64).sqrt() as usize;
    while r * r > k {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= k {
        r += 1;
    }
    r
}

fn canonical_pair_basis(dim: usize, first: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(dim, 2);
    b[(first, 0)] = 1.0;
    b[(first + 1, 1)] = 1.0;
    b
}

/// The small-complexity synthetic family: `floor(sqrt m) * floor(sqrt n)`
/// parts, part `(i, j)` (1-based) spanning `{e_i, e_(i+1)}` on the column
/// side and `{f_j, f_(j+1)}` on the row side.
pub fn family_biorthogonal(m: usize, n: usize) -> Result<NullSpaceFamily> {
    if m < 4 || n < 4 {
        return Err(Error::InvalidDimension(format!("bi-orthogonal family needs m, n >= 4, got ({m}, {n})")));
    }
    let (pm, pn) = (floor_sqrt(m), floor_sqrt(n));
    let columns = (0..pm).map(|i| canonical_pair_basis(m, i)).collect();
    let rows = (0..pn).map(|j| canonical_pair_basis(n, j)).collect();
    Ok(NullSpaceFamily::Finite(FiniteFamily::product(
        m,
        n,
        columns,
        (1..=pm).collect(),
        rows,
        (1..=pn).collect(),
    )))
}

/// `floor(tau * k)`, robust to representation error in products such as
/// `0.29 * 100`.
pub fn bits_for(tau: f64, k: usize) -> usize {
    (tau * k as f64 + 1e-9).floor().max(0.0) as usize
}

/// Binary word of `index` with `bits` digits, most significant first, in
/// the alphabet `{-1, +1}` (0 maps to -1).
pub fn sign_word(index: usize, bits: usize) -> Vec<f64> {
    (0..bits)
        .map(|k| if (index >> (bits - 1 - k)) & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Generator vector `(g; 1)` of length `dim - 1` for the Bernoulli family.
fn bernoulli_generator(word: &[f64], dim: usize) -> DVector<f64> {
    let mut g = DVector::from_element(dim - 1, 1.0);
    for (k, s) in word.iter().enumerate() {
        g[k] = *s;
    }
    g
}

/// Two spanning columns `(g; 0)` and `(0; -g)` of a Bernoulli part.
pub fn bernoulli_factor_columns(index: usize, bits: usize, dim: usize) -> DMatrix<f64> {
    let g = bernoulli_generator(&sign_word(index, bits), dim);
    let mut c = DMatrix::zeros(dim, 2);
    for (k, gk) in g.iter().enumerate() {
        c[(k, 0)] = *gk;
        c[(k + 1, 1)] = -*gk;
    }
    c
}

/// The large-complexity synthetic family with `2^floor(tau m) * 2^floor(tau n)`
/// parts indexed from zero.
///
/// Part `(i, j)` has the two-factor shape of the convolution kernel
/// elements with generators `(g_i; 1)` and `(h_j; 1)`, where `g_i` is the
/// sign word of `i`. The stacked ones blocks take whatever length makes the
/// factors `m x 2` and `n x 2`: `g_i` fills the first `floor(tau m)` rows of
/// the generator, ones fill the remaining `m - 1 - floor(tau m)` rows.
pub fn family_bernoulli(m: usize, n: usize, tau: f64) -> Result<NullSpaceFamily> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", format!("must lie in (0, 1), got {tau}")));
    }
    let (a, b) = (bits_for(tau, m), bits_for(tau, n));
    if a < 1 || b < 1 {
        return Err(Error::param(
            "tau",
            format!("floor(tau m) = {a} and floor(tau n) = {b} must both be >= 1"),
        ));
    }
    if m <= a || n <= b {
        return Err(Error::InvalidDimension(format!(
            "need m > floor(tau m) and n > floor(tau n), got m={m}, a={a}, n={n}, b={b}"
        )));
    }
    let requested = if a + b >= 120 { u128::MAX } else { 1u128 << (a + b) };
    if requested > MAX_FAMILY_PARTS {
        return Err(Error::BudgetExceeded {
            what: "family parts",
            requested,
            limit: MAX_FAMILY_PARTS,
        });
    }
    let build = |bits: usize, dim: usize| -> Result<Vec<DMatrix<f64>>> {
        (0..1usize << bits)
            .map(|i| {
                let c = orthonormal_columns(&bernoulli_factor_columns(i, bits, dim), DEFAULT_SUBSPACE_TOL);
                if c.ncols() != 2 {
                    return Err(Error::RankCondition(format!("part {i} factor columns are dependent")));
                }
                Ok(c)
            })
            .collect()
    };
    let columns = build(a, m)?;
    let rows = build(b, n)?;
    Ok(NullSpaceFamily::Finite(FiniteFamily::product(
        m,
        n,
        columns,
        (0..1usize << a).collect(),
        rows,
        (0..1usize << b).collect(),
    )))
}

/// The parametric convolution family with `m + n - 3` degrees of freedom.
pub fn family_convolution(m: usize, n: usize) -> Result<NullSpaceFamily> {
    if m < 2 || n < 2 {
        return Err(Error::InvalidDimension(format!("convolution family needs m, n >= 2, got ({m}, {n})")));
    }
    Ok(NullSpaceFamily::Parametric(ConvolutionFamily { m, n }))
}
