//! Closed-form probability bounds and scaling laws.
//!
//! Every evaluator returns the raw value of its formula. Probabilities that
//! fall outside `[0, 1]` are kept as they are; [`Reported`] flags them as
//! vacuous instead of clamping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A raw bound together with its reporting-layer view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reported {
    pub raw: f64,
    pub clamped: f64,
    /// The raw value says nothing about the probability it bounds.
    pub vacuous: bool,
}

impl Reported {
    pub fn new(raw: f64) -> Self {
        let vacuous = !(0.0..=1.0).contains(&raw) || raw.is_nan();
        Reported {
            raw,
            clamped: if raw.is_nan() { f64::NAN } else { raw.clamp(0.0, 1.0) },
            vacuous,
        }
    }
}

/// The constant hidden in `Theta(1/eps)`, taken from the covering upper
/// bound `(2 + 1/eps)^n`.
pub fn default_theta(epsilon: f64) -> f64 {
    2.0 + 1.0 / epsilon
}

/// Metric entropy exponent `m + n - 3` of the convolution rank-two family.
pub fn convolution_entropy(m: usize, n: usize) -> Result<f64> {
    if m < 2 || n < 2 {
        return Err(Error::InvalidDimension(format!(
            "convolution entropy needs m, n >= 2, got ({m}, {n})"
        )));
    }
    Ok((m + n - 3) as f64)
}

fn check_delta_half_open(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::param("delta", format!("must lie in [0, 1), got {delta}")));
    }
    Ok(())
}

fn check_delta_open(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::param(name, format!("must be positive, got {v}")));
    }
    Ok(())
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimension(format!("dimensions must be positive, got ({m}, {n})")));
    }
    Ok(())
}

/// `Pr(||P_C u||^2 >= 1 - delta) <= 2 / (m (1 - delta))`.
pub fn lemma1_bound(m: usize, delta: f64) -> Result<f64> {
    check_dims(m, 1)?;
    check_delta_half_open(delta)?;
    Ok(2.0 / (m as f64 * (1.0 - delta)))
}

/// Norm-floor variant of [`lemma1_bound`]: `2 / (r^2 (1 - delta))`.
pub fn lemma2_bound(r: f64, delta: f64) -> Result<f64> {
    check_positive("r", r)?;
    check_delta_half_open(delta)?;
    Ok(2.0 / (r * r * (1.0 - delta)))
}

/// Exponent of [`lemma3_gaussian_bound`].
pub fn lemma3_gaussian_exponent(m: usize, delta: f64) -> Result<f64> {
    check_dims(m, 1)?;
    check_delta_open(delta)?;
    let m = m as f64;
    Ok(-m * (1.0 / delta.sqrt()).ln() + 2.0 * m.ln() - 2.0 / m + 2.0 - (2.0 * delta / (1.0 - delta)).ln())
}

/// Gaussian concentration bound on `Pr(||P_C x||^2 >= (1 - delta) ||x||^2)`.
pub fn lemma3_gaussian_bound(m: usize, delta: f64) -> Result<f64> {
    Ok(lemma3_gaussian_exponent(m, delta)?.exp())
}

/// Bernoulli concentration bound `exp(-m (1 - delta) / 4 + log 4)`.
pub fn lemma4_bernoulli_bound(m: usize, delta: f64) -> Result<f64> {
    check_dims(m, 1)?;
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::param("delta", format!("must lie in [0, 1], got {delta}")));
    }
    Ok((-(m as f64) * (1.0 - delta) / 4.0 + 4f64.ln()).exp())
}

/// Lower bound `1 - 4 f / (m n (1 - delta))` on the probability that the
/// sufficient conditions hold for a family with `f` subspace pairs.
pub fn theorem3_prob(f: u64, m: usize, n: usize, delta: f64) -> Result<f64> {
    check_dims(m, n)?;
    check_delta_half_open(delta)?;
    Ok(1.0 - 4.0 * f as f64 / (m as f64 * n as f64 * (1.0 - delta)))
}

/// [`theorem3_prob`] with the norm floors `r_x, r_y` in place of
/// `sqrt(m), sqrt(n)`.
pub fn corollary3_prob(f: u64, r_x: f64, r_y: f64, delta: f64) -> Result<f64> {
    check_positive("r_x", r_x)?;
    check_positive("r_y", r_y)?;
    check_delta_half_open(delta)?;
    Ok(1.0 - 4.0 * f as f64 / (r_x * r_x * r_y * r_y * (1.0 - delta)))
}

/// `delta = 1 - (sqrt(1 - delta') - sqrt(2) eps)^2`.
pub fn delta_from_prime(delta_prime: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::param("epsilon", format!("must lie in [0, 1), got {epsilon}")));
    }
    let upper = 1.0 - 2.0 * epsilon * epsilon;
    if !(0.0..=upper).contains(&delta_prime) {
        return Err(Error::param(
            "delta_prime",
            format!("must lie in [0, {upper}] for epsilon = {epsilon}, got {delta_prime}"),
        ));
    }
    let root = (1.0 - delta_prime).sqrt() - 2f64.sqrt() * epsilon;
    Ok(1.0 - root * root)
}

fn check_entropy(p: f64, epsilon: f64, theta: f64) -> Result<()> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::param("p", format!("must be nonnegative, got {p}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon", format!("must lie in (0, 1), got {epsilon}")));
    }
    check_positive("theta_constant", theta)
}

/// Bernoulli-prior lower bound
/// `1 - 16 exp(p log theta - (m + n)(1 - delta) / 4)` with `delta` from
/// [`delta_from_prime`]; `theta` plays the role of `Theta(1/eps)`.
pub fn theorem4_prob(p: f64, m: usize, n: usize, epsilon: f64, delta_prime: f64, theta_constant: f64) -> Result<f64> {
    check_dims(m, n)?;
    check_entropy(p, epsilon, theta_constant)?;
    let delta = delta_from_prime(delta_prime, epsilon)?;
    let exponent = p * theta_constant.ln() - (m + n) as f64 * (1.0 - delta) / 4.0;
    Ok(1.0 - 16.0 * exponent.exp())
}

/// `log C(m, n, delta) = 2 log(mn) + 4 - 2 log(2 delta / (1 - delta))`.
pub fn theorem5_log_constant(m: usize, n: usize, delta: f64) -> Result<f64> {
    check_dims(m, n)?;
    check_delta_open(delta)?;
    Ok(2.0 * ((m * n) as f64).ln() + 4.0 - 2.0 * (2.0 * delta / (1.0 - delta)).ln())
}

/// Natural log of the Gaussian-prior failure term
/// `C(m, n, delta) exp(p log theta - (m + n) log(1 / sqrt(delta)))`.
pub fn theorem5_log_failure(p: f64, m: usize, n: usize, delta: f64, theta_constant: f64) -> Result<f64> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::param("p", format!("must be nonnegative, got {p}")));
    }
    check_positive("theta_constant", theta_constant)?;
    Ok(theorem5_log_constant(m, n, delta)? + p * theta_constant.ln() - (m + n) as f64 * (1.0 / delta.sqrt()).ln())
}

/// Gaussian-prior lower bound `1 - C(m, n, delta) exp(...)` with `delta`
/// from [`delta_from_prime`].
pub fn theorem5_prob(p: f64, m: usize, n: usize, epsilon: f64, delta_prime: f64, theta_constant: f64) -> Result<f64> {
    check_entropy(p, epsilon, theta_constant)?;
    let delta = delta_from_prime(delta_prime, epsilon)?;
    Ok(1.0 - theorem5_log_failure(p, m, n, delta, theta_constant)?.exp())
}

/// `((1/eps)^n, (2 + 1/eps)^n)`.
pub fn covering_number_bounds(n: usize, epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon", format!("must lie in (0, 1), got {epsilon}")));
    }
    let n = i32::try_from(n).map_err(|_| Error::param("n", "too large"))?;
    Ok(((1.0 / epsilon).powi(n), (2.0 + 1.0 / epsilon).powi(n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    pub failure_bound: f64,
    pub log_failure_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Figure1Params {
    pub epsilon: f64,
    pub delta: f64,
    /// `None` selects [`default_theta`].
    pub theta_constant: Option<f64>,
}

impl Default for Figure1Params {
    fn default() -> Self {
        Figure1Params {
            epsilon: 0.1,
            delta: 1e-4,
            theta_constant: None,
        }
    }
}

/// Theoretical failure probability of the Gaussian-prior convolution
/// problem as a function of `n`, with `p = m + n - 3` and `delta` used
/// directly.
///
/// ```
/// use bilift::bounds::{figure1_curve, Figure1Params};
///
/// let curve = figure1_curve(20, 20..=60, &Figure1Params::default()).unwrap();
/// assert!(curve.windows(2).all(|w| w[1].failure_bound < w[0].failure_bound));
/// ```
pub fn figure1_curve(
    m: usize,
    n_range: impl IntoIterator<Item = usize>,
    params: &Figure1Params,
) -> Result<Vec<CurvePoint>> {
    check_entropy(0.0, params.epsilon, 1.0)?;
    let theta = params.theta_constant.unwrap_or_else(|| default_theta(params.epsilon));
    n_range
        .into_iter()
        .map(|n| {
            let p = convolution_entropy(m, n)?;
            let log_failure_bound = theorem5_log_failure(p, m, n, params.delta, theta)?;
            Ok(CurvePoint {
                n,
                failure_bound: log_failure_bound.exp(),
                log_failure_bound,
            })
        })
        .collect()
}

/// `d/dn` of the log failure term along [`figure1_curve`].
pub fn figure1_log_slope(n: f64, params: &Figure1Params) -> f64 {
    let theta = params.theta_constant.unwrap_or_else(|| default_theta(params.epsilon));
    2.0 / n + theta.ln() - (1.0 / params.delta.sqrt()).ln()
}

/// Inputs shared by the bound evaluators, for callers that carry them
/// around as one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    pub m: usize,
    pub n: usize,
    pub delta: f64,
    pub delta_prime: f64,
    pub epsilon: f64,
    pub p: f64,
    pub p_c: f64,
    pub p_r: f64,
    pub f: u64,
    pub r_x: f64,
    pub r_y: f64,
    pub theta_constant: f64,
}

impl BoundParams {
    /// Defaults for an `m x n` problem: `r = sqrt(dim)`, `p = p_c + p_r`
    /// with the convolution entropy split evenly, `theta = 2 + 1/eps`.
    pub fn for_dims(m: usize, n: usize) -> Self {
        let epsilon = 0.1;
        let p = (m + n).saturating_sub(3) as f64;
        BoundParams {
            m,
            n,
            delta: 0.5,
            delta_prime: 0.3,
            epsilon,
            p,
            p_c: p / 2.0,
            p_r: p / 2.0,
            f: 0,
            r_x: (m as f64).sqrt(),
            r_y: (n as f64).sqrt(),
            theta_constant: default_theta(epsilon),
        }
    }

    /// Every bound at these parameters, by name, in a fixed order.
    pub fn evaluate_all(&self) -> Vec<(&'static str, Result<Reported>)> {
        let r = |v: Result<f64>| v.map(Reported::new);
        vec![
            ("lemma1_column", r(lemma1_bound(self.m, self.delta))),
            ("lemma1_row", r(lemma1_bound(self.n, self.delta))),
            ("lemma2_column", r(lemma2_bound(self.r_x, self.delta))),
            ("lemma2_row", r(lemma2_bound(self.r_y, self.delta))),
            ("lemma3_column", r(lemma3_gaussian_bound(self.m, self.delta))),
            ("lemma3_row", r(lemma3_gaussian_bound(self.n, self.delta))),
            ("lemma4_column", r(lemma4_bernoulli_bound(self.m, self.delta))),
            ("lemma4_row", r(lemma4_bernoulli_bound(self.n, self.delta))),
            ("theorem3", r(theorem3_prob(self.f, self.m, self.n, self.delta))),
            ("corollary3", r(corollary3_prob(self.f, self.r_x, self.r_y, self.delta))),
            (
                "theorem4",
                r(theorem4_prob(self.p, self.m, self.n, self.epsilon, self.delta_prime, self.theta_constant)),
            ),
            (
                "theorem5",
                r(theorem5_prob(self.p, self.m, self.n, self.epsilon, self.delta_prime, self.theta_constant)),
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn column_bound_values() {
        assert_eq!(lemma1_bound(8, 0.5).unwrap(), 0.5);
        assert_eq!(lemma1_bound(2, 0.0).unwrap(), 1.0);
        assert!(lemma1_bound(4, 1.0).is_err());
        let seq: Vec<f64> = (1..50).map(|m| lemma1_bound(m, 0.3).unwrap()).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn row_bound_values() {
        assert!(close(lemma2_bound(3f64.sqrt(), 0.0).unwrap(), 2.0 / 3.0, 1e-15));
        assert!(close(lemma2_bound(2f64.sqrt(), 0.0).unwrap(), 1.0, 1e-15));
        assert!(lemma2_bound(1.0, 1.0 - 1e-12).unwrap() > 1e11);
    }

    #[test]
    fn gaussian_bound_hand_evaluation() {
        let e = lemma3_gaussian_exponent(100, 0.25).unwrap();
        let hand = -100.0 * 2f64.ln() + 2.0 * 100f64.ln() - 0.02 + 2.0 - (2.0f64 / 3.0).ln();
        assert!(close(e, hand, 1e-14));
        assert!((e + 58.0).abs() < 0.3, "{e}");
        let b = lemma3_gaussian_bound(100, 0.25).unwrap();
        assert!(close(b, hand.exp(), 1e-12));
        assert!((6e-26..1e-25).contains(&b), "{b}");
        let seq: Vec<f64> = (10..200).map(|m| lemma3_gaussian_bound(m, 0.25).unwrap()).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
        // as delta -> 1 the -log(2 delta / (1 - delta)) term drives the raw
        // value to zero rather than past one
        assert!(lemma3_gaussian_bound(10, 1.0 - 1e-9).unwrap() < 1e-6);
        assert!(lemma3_gaussian_bound(10, 0.0).is_err());
    }

    /// For Gaussian `x` and a two-dimensional subspace,
    /// `||P x||^2 / ||x||^2 ~ Beta(1, (m - 2) / 2)`, so the bounded
    /// probability is exactly `delta^((m - 2) / 2)`.
    fn gaussian_exact(m: usize, delta: f64) -> f64 {
        delta.powf((m as f64 - 2.0) / 2.0)
    }

    #[test]
    fn gaussian_bound_dominates_exact_probability_away_from_one() {
        // the bound holds exactly when 1 - delta >= 2 / (m^2 e^(2 - 2/m))
        for m in [4, 8, 10, 32, 128, 512] {
            let crossover = 2.0 / ((m * m) as f64 * (2.0 - 2.0 / m as f64).exp());
            for delta in [0.01, 0.1, 0.5, 0.9, 0.99, 0.999, 0.9999] {
                let holds = lemma3_gaussian_bound(m, delta).unwrap() >= gaussian_exact(m, delta);
                assert_eq!(holds, 1.0 - delta >= crossover, "m={m} delta={delta}");
            }
        }
        assert!(lemma3_gaussian_bound(10, 0.999).unwrap() < gaussian_exact(10, 0.999));
    }

    #[test]
    fn bernoulli_bound_values() {
        assert!(close(lemma4_bernoulli_bound(4, 0.0).unwrap(), 4.0 / std::f64::consts::E, 1e-15));
        assert!(close(lemma4_bernoulli_bound(100, 0.0).unwrap(), 4.0 * (-25f64).exp(), 1e-13));
        assert!(close(lemma4_bernoulli_bound(7, 1.0).unwrap(), 4.0, 1e-15));
        assert!(Reported::new(lemma4_bernoulli_bound(4, 0.0).unwrap()).vacuous);
    }

    #[test]
    fn finite_family_bounds() {
        assert!(close(theorem3_prob(100, 100, 100, 0.5).unwrap(), 0.92, 1e-15));
        assert_eq!(theorem3_prob(0, 7, 9, 0.3).unwrap(), 1.0);
        assert!(theorem3_prob(1250, 100, 100, 0.5).unwrap().abs() < 1e-15);
        assert!(close(corollary3_prob(100, 10.0, 10.0, 0.5).unwrap(), 0.92, 1e-14));
        assert_eq!(corollary3_prob(0, 2.0, 3.0, 0.9).unwrap(), 1.0);
        assert!(corollary3_prob(5, 2.0, 2.0, 1.0 - 1e-12).unwrap() < -1e11);
    }

    #[test]
    fn delta_prime_mapping() {
        let d = delta_from_prime(0.3, 0.1).unwrap();
        assert!((d - 0.5166).abs() < 1e-3, "{d}");
        assert!((delta_from_prime(0.3, 0.0).unwrap() - 0.3).abs() < 1e-15);
        let eps: f64 = 0.2;
        assert!((delta_from_prime(1.0 - 2.0 * eps * eps, eps).unwrap() - 1.0).abs() < 1e-12);
        assert!(delta_from_prime(0.95, 0.2).is_err());
    }

    #[test]
    fn entropy_bound_shape() {
        let entropy_free = theorem4_prob(0.0, 20, 30, 0.1, 0.2, 12.0).unwrap();
        let delta = delta_from_prime(0.2, 0.1).unwrap();
        assert!(close(entropy_free, 1.0 - 16.0 * (-(50.0) * (1.0 - delta) / 4.0).exp(), 1e-14));
        let vac = theorem4_prob(40.0, 20, 20, 0.5, 0.01, default_theta(0.5)).unwrap();
        assert!(Reported::new(vac).vacuous);
        let seq: Vec<f64> = (10..60).map(|k| theorem4_prob(30.0, k, k, 0.1, 0.01, 12.0).unwrap()).collect();
        assert!(seq.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn gaussian_family_constant_forms_agree() {
        for &(m, n, d) in &[(5usize, 7usize, 0.3f64), (50, 50, 1e-4), (3, 200, 0.9)] {
            let direct = theorem5_log_constant(m, n, d).unwrap().exp();
            let alt = (1.0 / d - 1.0).powi(2) * ((m * n) as f64).powi(2) * (4.0f64).exp() / 4.0;
            assert!(close(direct, alt, 1e-12));
        }
    }

    #[test]
    fn gaussian_family_entropy_free_limit() {
        let fs: Vec<f64> = [1e-4, 1e-8, 1e-12]
            .iter()
            .map(|&d| theorem5_log_failure(0.0, 10, 10, d, 12.0).unwrap().exp())
            .collect();
        assert!(fs.windows(2).all(|w| w[1] < w[0] * 1e-20), "{fs:?}");
        assert!(fs[2] < 1e-80);
        // per-dimension decay beats the entropy growth at delta = 1e-4
        assert!((1.0 / 1e-4f64.sqrt()).ln() > default_theta(0.1).ln());
    }

    #[test]
    fn covering_numbers() {
        assert_eq!(covering_number_bounds(1, 0.5).unwrap(), (2.0, 4.0));
        assert_eq!(covering_number_bounds(0, 0.3).unwrap(), (1.0, 1.0));
        let (lo, hi) = covering_number_bounds(2, 0.1).unwrap();
        assert!(close(lo, 100.0, 1e-14) && close(hi, 144.0, 1e-14));
    }

    #[test]
    fn theory_curve_slope_matches_closed_form() {
        let params = Figure1Params::default();
        let curve = figure1_curve(30, 30..=200, &params).unwrap();
        for w in curve.windows(2) {
            let fd = w[1].log_failure_bound - w[0].log_failure_bound;
            let mid = (w[0].n + w[1].n) as f64 / 2.0;
            assert!((fd - figure1_log_slope(mid, &params)).abs() < 1e-3 * fd.abs());
        }
    }

    #[test]
    fn theory_curve_larger_m_is_lower_eventually() {
        let params = Figure1Params::default();
        let a = figure1_curve(10, 40..=120, &params).unwrap();
        let b = figure1_curve(20, 40..=120, &params).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| q.failure_bound <= p.failure_bound));
    }

    #[test]
    fn evaluate_all_is_complete() {
        let mut bp = BoundParams::for_dims(16, 16);
        bp.f = 16;
        let all = bp.evaluate_all();
        assert_eq!(all.len(), 12);
        assert!(all.iter().all(|(_, r)| r.is_ok()));
    }
}
