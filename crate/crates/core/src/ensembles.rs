//! Random signal ensembles and Monte Carlo checks of their moment
//! assumptions (zero mean, identity covariance, independence of norm and
//! direction, an almost-sure norm floor).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of draws accepted by [`validate_assumptions`].
pub const MIN_VALIDATION_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// `+-` a uniformly chosen column of an orthonormal basis, times an
    /// independent magnitude.
    BiorthogonalUniform,
    GaussianIid,
    /// Independent fair `+-1` entries.
    BernoulliIid,
}

/// Law of `||x||` for the bi-orthogonal ensemble. Both satisfy
/// `E ||x||^2 = dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeLaw {
    /// `||x|| = sqrt(dim)` on every draw.
    #[default]
    ConstantSqrtDim,
    /// `||x||^2` chi-square with `dim` degrees of freedom.
    ChiDim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub dim: usize,
    /// Orthonormal basis for the bi-orthogonal ensemble; canonical if absent.
    pub basis: Option<DMatrix<f64>>,
    pub magnitude_law: MagnitudeLaw,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, dim: usize) -> Self {
        EnsembleSpec {
            kind,
            dim,
            basis: None,
            magnitude_law: MagnitudeLaw::default(),
        }
    }

    pub fn biorthogonal(dim: usize) -> Self {
        Self::new(EnsembleKind::BiorthogonalUniform, dim)
    }

    pub fn gaussian(dim: usize) -> Self {
        Self::new(EnsembleKind::GaussianIid, dim)
    }

    pub fn bernoulli(dim: usize) -> Self {
        Self::new(EnsembleKind::BernoulliIid, dim)
    }

    pub fn with_basis(mut self, basis: DMatrix<f64>) -> Self {
        self.basis = Some(basis);
        self
    }

    pub fn with_magnitude(mut self, law: MagnitudeLaw) -> Self {
        self.magnitude_law = law;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDimension("ensemble dimension must be positive".into()));
        }
        if let Some(b) = &self.basis {
            if self.kind != EnsembleKind::BiorthogonalUniform {
                return Err(Error::param("basis", "only the bi-orthogonal ensemble takes a basis"));
            }
            if b.shape() != (self.dim, self.dim) {
                return Err(Error::shape(
                    format!("{0}x{0}", self.dim),
                    format!("{}x{}", b.nrows(), b.ncols()),
                ));
            }
            let gram = b.tr_mul(b) - DMatrix::identity(self.dim, self.dim);
            if gram.amax() > 1e-10 {
                return Err(Error::param("basis", "columns are not orthonormal"));
            }
        }
        Ok(())
    }

    /// Almost-sure lower bound on `||x||`, when the ensemble has one.
    pub fn norm_floor(&self) -> Option<f64> {
        match (self.kind, self.magnitude_law) {
            (EnsembleKind::BiorthogonalUniform, MagnitudeLaw::ConstantSqrtDim) | (EnsembleKind::BernoulliIid, _) => {
                Some((self.dim as f64).sqrt())
            }
            _ => None,
        }
    }
}

/// Draws one vector. The spec is validated on every call; use
/// [`Sampler`] to validate once.
pub fn sample<R: Rng + ?Sized>(spec: &EnsembleSpec, rng: &mut R) -> Result<DVector<f64>> {
    spec.validate()?;
    Ok(draw(spec, rng))
}

fn draw<R: Rng + ?Sized>(spec: &EnsembleSpec, rng: &mut R) -> DVector<f64> {
    let m = spec.dim;
    match spec.kind {
        EnsembleKind::GaussianIid => DVector::from_fn(m, |_, _| StandardNormal.sample(rng)),
        EnsembleKind::BernoulliIid => DVector::from_fn(m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
        EnsembleKind::BiorthogonalUniform => {
            let j = rng.random_range(0..m);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let magnitude = match spec.magnitude_law {
                MagnitudeLaw::ConstantSqrtDim => (m as f64).sqrt(),
                MagnitudeLaw::ChiDim => ChiSquared::new(m as f64)
                    .expect("positive degrees of freedom")
                    .sample(rng)
                    .sqrt(),
            };
            match &spec.basis {
                Some(b) => b.column(j) * (sign * magnitude),
                None => {
                    let mut x = DVector::zeros(m);
                    x[j] = sign * magnitude;
                    x
                }
            }
        }
    }
}

/// A validated spec, ready for repeated draws.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: EnsembleSpec,
}

impl Sampler {
    pub fn new(spec: EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Sampler { spec })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        draw(&self.spec, rng)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one Monte Carlo trial, a pure function of
/// `(master_seed, m, n, trial)`.
///
/// ```
/// use bilift::ensembles::trial_rng;
/// use rand::Rng;
///
/// let a: u64 = trial_rng(7, 4, 6, 12).random();
/// let b: u64 = trial_rng(7, 4, 6, 12).random();
/// let c: u64 = trial_rng(7, 4, 6, 13).random();
/// assert_eq!(a, b);
/// assert_ne!(a, c);
/// ```
pub fn trial_rng(master_seed: u64, m: usize, n: usize, trial: u64) -> ChaCha8Rng {
    let mut h = splitmix64(master_seed);
    for word in [m as u64, n as u64, trial] {
        h = splitmix64(h ^ word);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `||mean(x)||_2`.
    pub empirical_mean_norm: f64,
    /// `||E[x x^T] - I||_F / sqrt(m)` with the second moment estimated
    /// empirically.
    pub covariance_deviation: f64,
    pub min_norm_observed: f64,
    /// Largest absolute correlation between `||x||` and a squared direction
    /// coordinate `(x_j / ||x||)^2`.
    pub norm_direction_corr: f64,
    pub trials: usize,
    pub dim: usize,
}

impl ValidationReport {
    /// `3 sqrt(m / trials)`.
    pub fn mean_threshold(&self) -> f64 {
        3.0 * (self.dim as f64 / self.trials as f64).sqrt()
    }

    /// `5 sqrt(m) / sqrt(trials)`.
    pub fn covariance_threshold(&self) -> f64 {
        5.0 * (self.dim as f64).sqrt() / (self.trials as f64).sqrt()
    }

    pub fn passes_default_thresholds(&self) -> bool {
        self.empirical_mean_norm <= self.mean_threshold() && self.covariance_deviation <= self.covariance_threshold()
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / k, b.iter().sum::<f64>() / k);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn validate_assumptions<R: Rng + ?Sized>(spec: &EnsembleSpec, trials: usize, rng: &mut R) -> Result<ValidationReport> {
    if trials < MIN_VALIDATION_TRIALS {
        return Err(Error::param(
            "trials",
            format!("at least {MIN_VALIDATION_TRIALS} draws are required, got {trials}"),
        ));
    }
    let sampler = Sampler::new(spec.clone())?;
    let m = spec.dim;
    let mut sum = DVector::zeros(m);
    let mut second = DMatrix::zeros(m, m);
    let mut norms = Vec::with_capacity(trials);
    let mut directions = vec![Vec::with_capacity(trials); m];
    for _ in 0..trials {
        let x = sampler.draw(rng);
        sum += &x;
        second.ger(1.0, &x, &x, 1.0);
        let norm = x.norm();
        norms.push(norm);
        for (j, d) in directions.iter_mut().enumerate() {
            d.push(if norm > 0.0 { (x[j] / norm).powi(2) } else { 0.0 });
        }
    }
    let t = trials as f64;
    let covariance = second / t - DMatrix::identity(m, m);
    let norm_direction_corr = directions
        .iter()
        .map(|d| correlation(&norms, d).abs())
        .fold(0.0, f64::max);
    Ok(ValidationReport {
        empirical_mean_norm: (sum / t).norm(),
        covariance_deviation: covariance.norm() / (m as f64).sqrt(),
        min_norm_observed: norms.iter().cloned().fold(f64::INFINITY, f64::min),
        norm_direction_corr,
        trials,
        dim: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_has_constant_modulus() {
        let mut rng = trial_rng(1, 5, 5, 0);
        for _ in 0..100 {
            let x = sample(&EnsembleSpec::bernoulli(5), &mut rng).unwrap();
            assert!(x.iter().all(|v| *v == 1.0 || *v == -1.0));
            assert_eq!(x.norm_squared(), 5.0);
        }
    }

    #[test]
    fn biorthogonal_default_is_scaled_signed_basis_vector() {
        let mut rng = trial_rng(2, 9, 9, 0);
        for _ in 0..100 {
            let x = sample(&EnsembleSpec::biorthogonal(9), &mut rng).unwrap();
            let nonzero: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nonzero.len(), 1);
            assert_eq!(nonzero[0].abs(), 3.0);
        }
    }

    #[test]
    fn biorthogonal_rotated_basis() {
        let q = nalgebra::linalg::QR::new(DMatrix::from_fn(4, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 + 0.5)).q();
        let spec = EnsembleSpec::biorthogonal(4).with_basis(q.clone());
        let x = sample(&spec, &mut trial_rng(3, 4, 4, 0)).unwrap();
        let coords = q.tr_mul(&x);
        assert_eq!(coords.iter().filter(|c| c.abs() > 1e-9).count(), 1);
        assert!((x.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_basis_is_rejected() {
        let spec = EnsembleSpec::biorthogonal(3).with_basis(DMatrix::from_element(3, 3, 1.0));
        assert!(sample(&spec, &mut trial_rng(0, 0, 0, 0)).is_err());
        let spec = EnsembleSpec::gaussian(3).with_basis(DMatrix::identity(3, 3));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn gaussian_norm_concentrates() {
        let x = sample(&EnsembleSpec::gaussian(10_000), &mut trial_rng(4, 1, 1, 0)).unwrap();
        let r = x.norm_squared() / 10_000.0;
        assert!((0.9..=1.1).contains(&r));
    }

    #[test]
    fn identical_state_gives_identical_draws() {
        let spec = EnsembleSpec::gaussian(6);
        let a: Vec<_> = (0..5).map(|t| sample(&spec, &mut trial_rng(9, 2, 3, t)).unwrap()).collect();
        let b: Vec<_> = (0..5).map(|t| sample(&spec, &mut trial_rng(9, 2, 3, t)).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_validation_trials() {
        assert!(validate_assumptions(&EnsembleSpec::gaussian(3), 999, &mut trial_rng(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn chi_magnitude_has_unit_second_moment_per_coordinate() {
        let spec = EnsembleSpec::biorthogonal(6).with_magnitude(MagnitudeLaw::ChiDim);
        let r = validate_assumptions(&spec, 20_000, &mut trial_rng(5, 6, 6, 0)).unwrap();
        assert!(r.passes_default_thresholds(), "{r:?}");
        assert!(spec.norm_floor().is_none());
    }
}
