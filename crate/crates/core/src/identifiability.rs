//! Deterministic identifiability tests against a restricted rank-two null
//! space.
//!
//! Exact subspace membership is replaced by the soft event
//! `||P_C u||^2 >= 1 - delta` (and likewise for `v`), which reduces to exact
//! membership as `delta -> 0`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{projected_energy, sorted_svd};
use crate::null_space::{FiniteFamily, NullSpaceFamily, PartId, RankTwoElement, MAX_FAMILY_PARTS};
use crate::operator::RankOneInstance;

/// Default soft-membership tolerance for deterministic checks.
pub const DEFAULT_DELTA_TEST: f64 = 1e-9;

/// Default relative tolerance on `|sigma_1 - sigma_2| / sigma_1` and on
/// subspace membership in [`check_corollary2`].
pub const DEFAULT_COR2_TOL: f64 = 1e-8;

/// Families at least this large are scanned in parallel.
const PARALLEL_SCAN_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Identifiable,
    SufficientConditionFailed,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    Part(PartId),
    Element(RankTwoElement),
}

/// Per-part pair `(||P_C u||^2, ||P_R v||^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub part: PartId,
    pub column: f64,
    pub row: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityVerdict {
    pub outcome: Outcome,
    pub witness: Option<Witness>,
    pub margins: Vec<Margin>,
}

/// Whether every observation is recovered: true iff the restricted rank-two
/// null space is trivial, i.e. the finite family has no parts.
pub fn check_universal(family: &NullSpaceFamily) -> Result<bool> {
    match family {
        NullSpaceFamily::Finite(f) => Ok(f.is_empty()),
        NullSpaceFamily::Parametric(c) => Err(Error::Unsupported(format!(
            "parametric family is nontrivial by construction (dof = {})",
            c.dof()
        ))),
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::param("delta_test", format!("must lie in [0, 1), got {delta}")));
    }
    Ok(())
}

fn check_dims(m: &RankOneInstance, family: &FiniteFamily) -> Result<()> {
    if m.m() != family.m() || m.n() != family.n() {
        return Err(Error::shape(
            format!("{}x{} instance", family.m(), family.n()),
            format!("{}x{}", m.m(), m.n()),
        ));
    }
    Ok(())
}

/// Energies of `u` on every distinct column subspace and of `v` on every
/// distinct row subspace.
struct Energies {
    columns: Vec<f64>,
    rows: Vec<f64>,
}

fn energies(m: &RankOneInstance, family: &FiniteFamily) -> Energies {
    Energies {
        columns: family.column_subspaces().map(|(_, b)| projected_energy(b, &m.u)).collect(),
        rows: family.row_subspaces().map(|(_, b)| projected_energy(b, &m.v)).collect(),
    }
}

/// Scans every part for the soft failure event of the sufficient condition.
///
/// Parametric families yield [`Outcome::Unknown`]: no finite scan can
/// certify them. The caller is responsible for the rank-one null space being
/// trivial; that cannot be checked from a family alone.
pub fn check_sufficient_instance(
    m: &RankOneInstance,
    family: &NullSpaceFamily,
    delta_test: f64,
) -> Result<IdentifiabilityVerdict> {
    check_delta(delta_test)?;
    let fam = match family {
        NullSpaceFamily::Finite(f) => f,
        NullSpaceFamily::Parametric(c) => {
            if (c.m, c.n) != (m.m(), m.n()) {
                return Err(Error::shape(format!("{}x{} instance", c.m, c.n), format!("{}x{}", m.m(), m.n())));
            }
            return Ok(IdentifiabilityVerdict {
                outcome: Outcome::Unknown,
                witness: None,
                margins: Vec::new(),
            });
        }
    };
    check_dims(m, fam)?;
    let threshold = 1.0 - delta_test;
    let mut margins = Vec::with_capacity(fam.len());
    let mut witness = None;
    // Energies per part are recomputed from the stored bases; families fed
    // here are small enough for that to be cheap.
    for part in fam.parts() {
        let column = projected_energy(part.column, &m.u);
        let row = projected_energy(part.row, &m.v);
        if witness.is_none() && column >= threshold && row >= threshold {
            witness = Some(Witness::Part(part.id));
        }
        margins.push(Margin {
            part: part.id,
            column,
            row,
        });
    }
    Ok(IdentifiabilityVerdict {
        outcome: if witness.is_some() {
            Outcome::SufficientConditionFailed
        } else {
            Outcome::Identifiable
        },
        witness,
        margins,
    })
}

/// First part, in the family's deterministic order, on which both `u` and
/// `v` lie within the soft tolerance of the part's subspaces.
///
/// Large families are scanned in parallel; the lowest failing index is
/// returned regardless of scheduling.
pub fn detect_ambiguity_exhaustive(
    m: &RankOneInstance,
    family: &NullSpaceFamily,
    delta_test: f64,
) -> Result<Option<PartId>> {
    check_delta(delta_test)?;
    let fam = family
        .as_finite()
        .ok_or_else(|| Error::Unsupported("exhaustive search needs a finite family".into()))?;
    check_dims(m, fam)?;
    if fam.len() as u128 > MAX_FAMILY_PARTS {
        return Err(Error::BudgetExceeded {
            what: "family parts",
            requested: fam.len() as u128,
            limit: MAX_FAMILY_PARTS,
        });
    }
    if fam.is_empty() {
        return Ok(None);
    }
    let threshold = 1.0 - delta_test;
    let e = energies(m, fam);
    let fails = |k: usize| {
        let (ci, ri) = fam.slots(k);
        e.columns[ci] >= threshold && e.rows[ri] >= threshold
    };
    let hit = if fam.len() >= PARALLEL_SCAN_THRESHOLD {
        (0..fam.len()).into_par_iter().find_first(|&k| fails(k))
    } else {
        (0..fam.len()).find(|&k| fails(k))
    };
    Ok(hit.map(|k| fam.part(k).id))
}

/// Representation of `u` and `v` in the singular bases of an equal
/// singular value rank-two matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corollary2Analysis {
    pub sigma1: f64,
    pub sigma2: f64,
    pub alpha: [f64; 4],
    pub inner: f64,
}

/// Sharp test for a rank-two null-space matrix `X` with `sigma_1 = sigma_2`
/// whose subspaces contain `u` and `v`: `M` stays identifiable against `X`
/// iff `alpha_1 alpha_3 + alpha_2 alpha_4 <= 0`.
///
/// The inner product does not depend on which singular basis the SVD picks,
/// since any admissible pair of bases differs by a common rotation.
pub fn check_corollary2(
    m: &RankOneInstance,
    x: &DMatrix<f64>,
    tol: f64,
) -> Result<(Corollary2Analysis, bool)> {
    if x.shape() != (m.m(), m.n()) {
        return Err(Error::shape(format!("{}x{}", m.m(), m.n()), format!("{}x{}", x.nrows(), x.ncols())));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::param("tol", format!("must lie in (0, 1), got {tol}")));
    }
    if x.nrows() < 2 || x.ncols() < 2 {
        return Err(Error::NotApplicable("X must have rank two".into()));
    }
    let f = sorted_svd(x);
    let (s1, s2) = (f.s[0], f.s[1]);
    if s1 == 0.0 || s2 / s1 < tol {
        return Err(Error::NotApplicable("X has rank below two".into()));
    }
    if f.s.len() > 2 && f.s[2] / s1 >= tol {
        return Err(Error::NotApplicable("X has rank above two".into()));
    }
    if (s1 - s2).abs() > tol * s1 {
        return Err(Error::Unsupported(format!(
            "unequal singular values (sigma1 = {s1:.6e}, sigma2 = {s2:.6e})"
        )));
    }
    let a1 = f.u.column(0).dot(&m.u);
    let a2 = f.u.column(1).dot(&m.u);
    let a3 = f.v.column(0).dot(&m.v);
    let a4 = f.v.column(1).dot(&m.v);
    if 1.0 - (a1 * a1 + a2 * a2) > tol || 1.0 - (a3 * a3 + a4 * a4) > tol {
        return Err(Error::NotApplicable(
            "u or v lies outside the subspaces of X; the sufficient condition already decides".into(),
        ));
    }
    let inner = a1 * a3 + a2 * a4;
    Ok((
        Corollary2Analysis {
            sigma1: s1,
            sigma2: s2,
            alpha: [a1, a2, a3, a4],
            inner,
        },
        inner <= 0.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::null_space::{family_bernoulli, family_biorthogonal, family_convolution};
    use nalgebra::DVector;

    fn unit(dim: usize, k: usize) -> DVector<f64> {
        let mut e = DVector::zeros(dim);
        e[k] = 1.0;
        e
    }

    fn instance(x: DVector<f64>, y: DVector<f64>) -> RankOneInstance {
        RankOneInstance::new(x, y).unwrap()
    }

    #[test]
    fn universal_check() {
        let empty = NullSpaceFamily::Finite(FiniteFamily::empty(5, 5));
        assert!(check_universal(&empty).unwrap());
        assert!(!check_universal(&family_biorthogonal(9, 9).unwrap()).unwrap());
        assert!(matches!(
            check_universal(&family_convolution(3, 4).unwrap()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn instance_outside_every_part_is_identifiable() {
        let fam = family_biorthogonal(9, 9).unwrap();
        let v = check_sufficient_instance(&instance(unit(9, 8), unit(9, 8)), &fam, 1e-9).unwrap();
        assert_eq!(v.outcome, Outcome::Identifiable);
        assert_eq!(v.margins.len(), 9);
        assert!(v.witness.is_none());
    }

    #[test]
    fn instance_on_first_part_fails() {
        let fam = family_biorthogonal(9, 9).unwrap();
        let v = check_sufficient_instance(&instance(unit(9, 0), unit(9, 0)), &fam, 1e-9).unwrap();
        assert_eq!(v.outcome, Outcome::SufficientConditionFailed);
        assert_eq!(v.witness, Some(Witness::Part(PartId { i: 1, j: 1 })));
        let m = v.margins[0];
        assert!(m.column >= 1.0 - 1e-9 && m.row >= 1.0 - 1e-9);
    }

    #[test]
    fn empty_family_is_identifiable() {
        let fam = NullSpaceFamily::Finite(FiniteFamily::empty(3, 3));
        let inst = instance(DVector::from_element(3, 1.0), DVector::from_element(3, 1.0));
        assert_eq!(check_sufficient_instance(&inst, &fam, 0.5).unwrap().outcome, Outcome::Identifiable);
        assert_eq!(detect_ambiguity_exhaustive(&inst, &fam, 0.5).unwrap(), None);
    }

    #[test]
    fn parametric_family_is_unknown() {
        let fam = family_convolution(3, 3).unwrap();
        let inst = instance(DVector::from_element(3, 1.0), DVector::from_element(3, 1.0));
        assert_eq!(check_sufficient_instance(&inst, &fam, 0.1).unwrap().outcome, Outcome::Unknown);
        assert!(detect_ambiguity_exhaustive(&inst, &fam, 0.1).is_err());
    }

    #[test]
    fn dimension_and_delta_errors() {
        let fam = family_biorthogonal(9, 9).unwrap();
        let inst = instance(unit(8, 0), unit(9, 0));
        assert!(check_sufficient_instance(&inst, &fam, 1e-9).is_err());
        let inst = instance(unit(9, 0), unit(9, 0));
        assert!(check_sufficient_instance(&inst, &fam, 1.0).is_err());
        assert!(check_sufficient_instance(&inst, &fam, -0.1).is_err());
    }

    #[test]
    fn exhaustive_scan_first_witness() {
        let fam = family_biorthogonal(9, 9).unwrap();
        let w = detect_ambiguity_exhaustive(&instance(unit(9, 1), unit(9, 2)), &fam, 1e-9).unwrap();
        // index 2 is covered by parts 1 and 2, index 3 by parts 2 and 3
        assert_eq!(w, Some(PartId { i: 1, j: 2 }));
    }

    #[test]
    fn exhaustive_scan_matches_part_by_part_projectors() {
        let fam = family_bernoulli(10, 15, 0.2).unwrap();
        let finite = fam.as_finite().unwrap();
        let x = DVector::from_fn(10, |k, _| if k % 3 == 0 { -1.0 } else { 1.0 });
        let y = DVector::from_fn(15, |k, _| if k < 4 { -1.0 } else { 1.0 });
        let inst = instance(x, y);
        for delta in [0.05, 0.3, 0.6, 0.9] {
            let fast = detect_ambiguity_exhaustive(&inst, &fam, delta).unwrap();
            let slow = finite.parts().find(|p| {
                let pc = p.column * p.column.transpose();
                let pr = p.row * p.row.transpose();
                (&pc * &inst.u).norm_squared() >= 1.0 - delta && (&pr * &inst.v).norm_squared() >= 1.0 - delta
            });
            assert_eq!(fast, slow.map(|p| p.id), "delta = {delta}");
        }
    }

    #[test]
    fn equal_singular_values_in_orthonormal_coordinates() {
        let (u1, u2) = (unit(4, 0), unit(4, 1));
        let (v1, v2) = (unit(5, 2), unit(5, 3));
        let x = &u1 * v1.transpose() + &u2 * v2.transpose();
        let (a, ok) = check_corollary2(&instance(u1.clone(), v2.clone()), &x, 1e-8).unwrap();
        assert!(a.inner.abs() < 1e-12);
        assert!(ok);
        let (a, ok) = check_corollary2(&instance(u1.clone(), v1.clone()), &x, 1e-8).unwrap();
        assert!((a.inner - 1.0).abs() < 1e-12);
        assert!(!ok);
    }

    #[test]
    fn equal_singular_values_refusals() {
        let (u1, u2) = (unit(4, 0), unit(4, 1));
        let (v1, v2) = (unit(4, 0), unit(4, 1));
        let unequal = &u1 * v1.transpose() + (&u2 * v2.transpose()) * 0.5;
        assert!(matches!(
            check_corollary2(&instance(u1.clone(), v1.clone()), &unequal, 1e-8),
            Err(Error::Unsupported(_))
        ));
        let x = &u1 * v1.transpose() + &u2 * v2.transpose();
        assert!(matches!(
            check_corollary2(&instance(unit(4, 3), v1.clone()), &x, 1e-8),
            Err(Error::NotApplicable(_))
        ));
    }
}
