//! Monte Carlo failure-frequency curves for the three synthetic examples and
//! slope fits over them.
//!
//! Every trial draws from its own generator, keyed by
//! `(master_seed, m, n, trial)`, and per-cell counts are order-independent
//! sums. A curve is therefore bit-identical for any worker count.
//!
//! ```
//! use bilift::experiments::{run, Example, ExperimentConfig};
//!
//! let cfg = ExperimentConfig::new(Example::A, vec![16], vec![16, 25], 400, 3);
//! let curve = run(&cfg, Some(2)).unwrap();
//! assert_eq!(curve.cells.len(), 2);
//! // (floor(sqrt 16) + 1)^2 / 256 = 0.098
//! assert!((curve.cells[0].failure_rate - 25.0 / 256.0).abs() < 0.05);
//! ```

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{trial_rng, EnsembleSpec, Sampler};
use crate::error::{Error, Result};
use crate::identifiability::detect_ambiguity_exhaustive;
use crate::linalg::{orthonormal_columns, projected_energy, sorted_svd};
use crate::null_space::{bits_for, conv_rank2_element, family_bernoulli, family_biorthogonal, NullSpaceFamily};
use crate::operator::{lift_linear_convolution, RankOneInstance};
use crate::solver::{MinRankSolver, SolverConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest accepted `trials_per_cell`.
pub const MIN_TRIALS_PER_CELL: usize = 100;

/// Share of non-converged solver trials above which a cell is flagged.
pub const NONCONVERGED_FLAG_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Example {
    /// Bi-orthogonal draws against the `floor(sqrt m) floor(sqrt n)`-part family.
    A,
    /// Bernoulli draws against the `2^floor(tau m) 2^floor(tau n)`-part family.
    B,
    /// Gaussian draws under linear convolution, decided by the reweighted
    /// nuclear norm heuristic.
    C,
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Example::A => "A",
            Example::B => "B",
            Example::C => "C",
        })
    }
}

/// Energy level a Bernoulli trial must reach on both sides of a common part
/// to count as a failure in example B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyThreshold {
    /// `||P_C x||^2 >= (1 - delta') ||x||^2`.
    OneMinusDeltaPrime,
    /// `||P_C x||^2 >= delta' ||x||^2`.
    #[default]
    DeltaPrime,
}

impl EnergyThreshold {
    pub fn level(self, delta_prime: f64) -> f64 {
        match self {
            EnergyThreshold::OneMinusDeltaPrime => 1.0 - delta_prime,
            EnergyThreshold::DeltaPrime => delta_prime,
        }
    }
}

/// Source of the rank-one instances in example C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    /// `x`, `y` i.i.d. standard Gaussian.
    #[default]
    Gaussian,
    /// Rank-one truncation of a random rank-two kernel element; E2 holds by
    /// construction.
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub example: Example,
    pub m_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub trials_per_cell: usize,
    pub master_seed: u64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_delta_prime")]
    pub delta_prime: f64,
    #[serde(default)]
    pub threshold: EnergyThreshold,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_delta_test")]
    pub delta_test: f64,
    #[serde(default)]
    pub instances: InstanceSource,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_tau() -> f64 {
    0.2
}

fn default_delta_prime() -> f64 {
    0.3
}

fn default_mu() -> f64 {
    0.8
}

fn default_delta_test() -> f64 {
    crate::identifiability::DEFAULT_DELTA_TEST
}

impl ExperimentConfig {
    pub fn new(example: Example, m_values: Vec<usize>, n_values: Vec<usize>, trials_per_cell: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            example,
            m_values,
            n_values,
            trials_per_cell,
            master_seed,
            tau: default_tau(),
            delta_prime: default_delta_prime(),
            threshold: EnergyThreshold::default(),
            mu: default_mu(),
            delta_test: default_delta_test(),
            instances: InstanceSource::default(),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::param(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.m_values.is_empty() || self.n_values.is_empty() {
            return Err(Error::param("m_values, n_values", "both grids must be nonempty"));
        }
        if self.trials_per_cell < MIN_TRIALS_PER_CELL {
            return Err(Error::param(
                "trials_per_cell",
                format!("must be at least {MIN_TRIALS_PER_CELL}, got {}", self.trials_per_cell),
            ));
        }
        match self.example {
            Example::A => {
                if !(0.0..1.0).contains(&self.delta_test) {
                    return Err(Error::param("delta_test", format!("must lie in [0, 1), got {}", self.delta_test)));
                }
            }
            Example::B => {
                if !(self.tau > 0.0 && self.tau < 1.0) {
                    return Err(Error::param("tau", format!("must lie in (0, 1), got {}", self.tau)));
                }
                if !(0.0..=1.0).contains(&self.delta_prime) {
                    return Err(Error::param("delta_prime", format!("must lie in [0, 1], got {}", self.delta_prime)));
                }
            }
            Example::C => {
                if !(self.mu > 0.0 && self.mu.is_finite()) {
                    return Err(Error::param("mu", format!("must be positive, got {}", self.mu)));
                }
                self.solver_config().validate()?;
                if self.cells().is_empty() {
                    return Err(Error::param("n_values", "example C needs at least one cell with n >= m"));
                }
            }
        }
        Ok(())
    }

    /// Grid cells in row-major `(m, n)` order; example C keeps `n >= m` only.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &m in &self.m_values {
            for &n in &self.n_values {
                if self.example != Example::C || n >= m {
                    out.push((m, n));
                }
            }
        }
        out
    }

    /// Solver settings with the experiment's `mu` in force.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            mu: self.mu,
            ..self.solver.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub stderr: f64,
    /// Trials where the solver stopped without converging (counted as no
    /// failure).
    pub nonconverged: usize,
    /// Trials whose ball misses the kernel (no failure possible).
    pub infeasible: usize,
}

impl Cell {
    pub fn from_counts(m: usize, n: usize, trials: usize, failures: usize) -> Self {
        let p = failures as f64 / trials as f64;
        Cell {
            m,
            n,
            trials,
            failures,
            failure_rate: p,
            stderr: binomial_stderr(p, trials),
            nonconverged: 0,
            infeasible: 0,
        }
    }

    pub fn flagged(&self) -> bool {
        self.nonconverged as f64 > NONCONVERGED_FLAG_FRACTION * self.trials as f64
    }
}

/// `sqrt(p (1 - p) / trials)`.
pub fn binomial_stderr(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureCurve {
    pub example: Example,
    pub cells: Vec<Cell>,
}

impl FailureCurve {
    /// Cells with the given `m`, in ascending `n`.
    pub fn row(&self, m: usize) -> Vec<&Cell> {
        let mut r: Vec<&Cell> = self.cells.iter().filter(|c| c.m == m).collect();
        r.sort_by_key(|c| c.n);
        r
    }

    pub fn m_values(&self) -> Vec<usize> {
        let mut ms: Vec<usize> = self.cells.iter().map(|c| c.m).collect();
        ms.sort_unstable();
        ms.dedup();
        ms
    }

    /// Writes `example,m,n,trials,failures,failure_rate,stderr`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["example", "m", "n", "trials", "failures", "failure_rate", "stderr"])
            .map_err(io)?;
        for c in &self.cells {
            w.write_record([
                self.example.to_string(),
                c.m.to_string(),
                c.n.to_string(),
                c.trials.to_string(),
                c.failures.to_string(),
                c.failure_rate.to_string(),
                c.stderr.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrialOutcome {
    Clear,
    Failure,
    NonConverged,
    Infeasible,
}

/// Per-cell state shared by all trials of the cell.
enum CellModel {
    Exhaustive { family: NullSpaceFamily, x: Sampler, y: Sampler, delta: f64 },
    Heuristic { solver: MinRankSolver, source: InstanceSource },
}

fn cell_model(cfg: &ExperimentConfig, m: usize, n: usize) -> Result<CellModel> {
    Ok(match cfg.example {
        Example::A => CellModel::Exhaustive {
            family: family_biorthogonal(m, n)?,
            x: Sampler::new(EnsembleSpec::biorthogonal(m))?,
            y: Sampler::new(EnsembleSpec::biorthogonal(n))?,
            delta: cfg.delta_test,
        },
        Example::B => CellModel::Exhaustive {
            family: family_bernoulli(m, n, cfg.tau)?,
            x: Sampler::new(EnsembleSpec::bernoulli(m))?,
            y: Sampler::new(EnsembleSpec::bernoulli(n))?,
            // the scan tests energy >= 1 - delta
            delta: 1.0 - cfg.threshold.level(cfg.delta_prime),
        },
        Example::C => CellModel::Heuristic {
            solver: MinRankSolver::new(&lift_linear_convolution(m, n)?, cfg.solver_config())?,
            source: cfg.instances,
        },
    })
}

fn run_trial<R: Rng + ?Sized>(model: &CellModel, m: usize, n: usize, rng: &mut R) -> Result<TrialOutcome> {
    match model {
        CellModel::Exhaustive { family, x, y, delta } => {
            let inst = RankOneInstance::new(x.draw(rng), y.draw(rng))?;
            if *delta >= 1.0 {
                let empty = family.as_finite().is_none_or(|f| f.is_empty());
                return Ok(if empty { TrialOutcome::Clear } else { TrialOutcome::Failure });
            }
            let hit = detect_ambiguity_exhaustive(&inst, family, delta.max(0.0))?;
            Ok(if hit.is_some() { TrialOutcome::Failure } else { TrialOutcome::Clear })
        }
        CellModel::Heuristic { solver, source } => {
            let inst = match source {
                InstanceSource::Gaussian => {
                    let x = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
                    let y = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                    RankOneInstance::new(x, y)?.normalized()
                }
                InstanceSource::Planted => planted_instance(m, n, solver.config().mu, rng)?,
            };
            match solver.solve(&inst.matrix()) {
                Err(Error::Infeasible { .. }) => Ok(TrialOutcome::Infeasible),
                Err(e) => Err(e),
                Ok(r) if !r.converged => Ok(TrialOutcome::NonConverged),
                Ok(r) if r.numerical_rank == 2 && r.x.norm() > 0.0 => Ok(TrialOutcome::Failure),
                Ok(_) => Ok(TrialOutcome::Clear),
            }
        }
    }
}

/// Rank-one truncation `M = u_1 v_1^T` of a random rank-two convolution
/// kernel element `X0 = sigma_1 u_1 v_1^T + sigma_2 u_2 v_2^T`, scaled so that
/// `||M||_F = 1`. Draws with `sigma_2 / sigma_1 > mu` are rejected, so
/// `||X0 / sigma_1 - M||_F <= mu` and the event E2 holds.
pub fn planted_instance<R: Rng + ?Sized>(m: usize, n: usize, mu: f64, rng: &mut R) -> Result<RankOneInstance> {
    if m < 2 || n < 2 {
        return Err(Error::InvalidDimension(format!("planted instances need m, n >= 2, got ({m}, {n})")));
    }
    if !(mu > 0.0) {
        return Err(Error::param("mu", format!("must be positive, got {mu}")));
    }
    loop {
        let u = DVector::from_fn(m - 1, |_, _| StandardNormal.sample(rng));
        let v = DVector::from_fn(n - 1, |_, _| StandardNormal.sample(rng));
        let x0 = conv_rank2_element(&u, &v)?.matrix();
        let f = sorted_svd(&x0);
        if f.s[1] <= mu * f.s[0] {
            return RankOneInstance::new(f.u.column(0).into_owned(), f.v.column(0).into_owned());
        }
    }
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(0) => Err(Error::param("workers", "must be at least 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Io(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Runs every cell of the configured example. `workers` sizes a dedicated
/// thread pool; `None` uses the global rayon pool.
pub fn run(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<FailureCurve> {
    cfg.validate()?;
    let cells = cfg.cells();
    let models: Vec<CellModel> = cells.iter().map(|&(m, n)| cell_model(cfg, m, n)).collect::<Result<_>>()?;
    let trials = cfg.trials_per_cell;
    let outcomes: Vec<TrialOutcome> = with_workers(workers, || {
        (0..cells.len() * trials)
            .into_par_iter()
            .map(|k| {
                let (c, t) = (k / trials, k % trials);
                let (m, n) = cells[c];
                let mut rng = trial_rng(cfg.master_seed, m, n, t as u64);
                run_trial(&models[c], m, n, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let cells = cells
        .iter()
        .zip(outcomes.chunks(trials))
        .map(|(&(m, n), chunk)| {
            let count = |o: TrialOutcome| chunk.iter().filter(|&&x| x == o).count();
            let mut cell = Cell::from_counts(m, n, trials, count(TrialOutcome::Failure));
            cell.nonconverged = count(TrialOutcome::NonConverged);
            cell.infeasible = count(TrialOutcome::Infeasible);
            cell
        })
        .collect();
    Ok(FailureCurve {
        example: cfg.example,
        cells,
    })
}

fn expect_example(cfg: &ExperimentConfig, want: Example) -> Result<()> {
    if cfg.example != want {
        return Err(Error::param("example", format!("expected {want}, got {}", cfg.example)));
    }
    Ok(())
}

pub fn run_example_a(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<FailureCurve> {
    expect_example(cfg, Example::A)?;
    run(cfg, workers)
}

pub fn run_example_b(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<FailureCurve> {
    expect_example(cfg, Example::B)?;
    run(cfg, workers)
}

pub fn run_example_c(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<FailureCurve> {
    expect_example(cfg, Example::C)?;
    run(cfg, workers)
}

/// Exact example A failure probability for constant-magnitude canonical
/// draws: `(floor(sqrt m) + 1)(floor(sqrt n) + 1) / (m n)`.
pub fn example_a_exact_rate(m: usize, n: usize) -> f64 {
    let r = |k: usize| ((k as f64).sqrt().floor() + 1.0) / k as f64;
    r(m) * r(n)
}

/// Brute-force example B failure flag that rebuilds every part from its
/// index, without the family's cached subspaces.
pub fn example_b_scan(x: &DVector<f64>, y: &DVector<f64>, tau: f64, level: f64) -> bool {
    let (m, n) = (x.len(), y.len());
    let (a, b) = (bits_for(tau, m), bits_for(tau, n));
    let col_hits: Vec<bool> = (0..1usize << a).map(|i| spanned_energy(x, i, a) >= level).collect();
    let row_hits: Vec<bool> = (0..1usize << b).map(|j| spanned_energy(y, j, b) >= level).collect();
    col_hits.iter().any(|&c| c) && row_hits.iter().any(|&r| r)
}

/// `||P w||^2 / ||w||^2` for the span of `(g; 0)` and `(0; -g)`, with `g`
/// the sign word of `index` padded by ones, via the 2x2 Gram system.
fn spanned_energy(w: &DVector<f64>, index: usize, bits: usize) -> f64 {
    let d = w.len();
    let g: Vec<f64> = (0..d - 1)
        .map(|k| {
            if k < bits && (index >> (bits - 1 - k)) & 1 == 0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let (mut g11, mut g12, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..d - 1 {
        g11 += g[k] * g[k];
        b1 += g[k] * w[k];
        b2 -= g[k] * w[k + 1];
        if k + 1 < d - 1 {
            g12 -= g[k + 1] * g[k];
        }
    }
    let det = g11 * g11 - g12 * g12;
    let energy = (g11 * (b1 * b1 + b2 * b2) - 2.0 * g12 * b1 * b2) / det;
    energy / w.norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// `log rate` against `log n`.
    Loglog,
    /// `log rate` against `n`.
    Semilog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub m: usize,
    pub mode: FitMode,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Cells left out because they recorded no failures.
    pub zero_cells: Vec<usize>,
}

impl fmt::Display for SlopeFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            FitMode::Loglog => "loglog",
            FitMode::Semilog => "semilog",
        };
        write!(
            f,
            "m={} mode={mode} slope={:.6} intercept={:.6} r_squared={:.6} points={} zero_cells={:?}",
            self.m, self.slope, self.intercept, self.r_squared, self.points, self.zero_cells
        )
    }
}

/// Ordinary least squares `y = slope x + intercept`, returning
/// `(slope, intercept, r_squared)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 paired points, got {}/{}", xs.len(), ys.len())));
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

/// Fits `log failure_rate` over the cells of one `m`.
pub fn fit_slope(curve: &FailureCurve, m: usize, mode: FitMode) -> Result<SlopeFit> {
    let row = curve.row(m);
    let (used, zero): (Vec<&Cell>, Vec<&Cell>) = row.into_iter().partition(|c| c.failure_rate > 0.0);
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "m = {m}: {} cells with nonzero failures, need 3",
            used.len()
        )));
    }
    let xs: Vec<f64> = used
        .iter()
        .map(|c| match mode {
            FitMode::Loglog => (c.n as f64).ln(),
            FitMode::Semilog => c.n as f64,
        })
        .collect();
    let ys: Vec<f64> = used.iter().map(|c| c.failure_rate.ln()).collect();
    let (slope, intercept, r_squared) = ols(&xs, &ys)?;
    Ok(SlopeFit {
        m,
        mode,
        slope,
        intercept,
        r_squared,
        points: used.len(),
        zero_cells: zero.iter().map(|c| c.n).collect(),
    })
}

/// Natural fit mode of each example.
pub fn default_fit_mode(example: Example) -> FitMode {
    match example {
        Example::A => FitMode::Loglog,
        Example::B | Example::C => FitMode::Semilog,
    }
}

/// Whether `rate` never rises along `n` by more than `k` combined standard
/// errors of the two cells.
pub fn non_increasing(cells: &[&Cell], k: f64) -> bool {
    cells.windows(2).all(|w| {
        let tol = k * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        w[1].failure_rate <= w[0].failure_rate + tol
    })
}

/// The subspace-energy lemmas and the ensemble each applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    /// Markov bound, constant-magnitude bi-orthogonal draws.
    Markov,
    /// Markov bound with a norm floor, Bernoulli draws with `r = sqrt m`.
    MarkovFloor,
    /// Gaussian concentration.
    Gaussian,
    /// Bernoulli concentration.
    Bernoulli,
}

impl Lemma {
    pub const ALL: [Lemma; 4] = [Lemma::Markov, Lemma::MarkovFloor, Lemma::Gaussian, Lemma::Bernoulli];

    pub fn bound(self, m: usize, delta: f64) -> Result<f64> {
        use crate::bounds::*;
        match self {
            Lemma::Markov => lemma1_bound(m, delta),
            Lemma::MarkovFloor => lemma2_bound((m as f64).sqrt(), delta),
            Lemma::Gaussian => lemma3_gaussian_bound(m, delta),
            Lemma::Bernoulli => lemma4_bernoulli_bound(m, delta),
        }
    }

    fn ensemble(self, m: usize) -> EnsembleSpec {
        match self {
            Lemma::Markov => EnsembleSpec::biorthogonal(m),
            Lemma::MarkovFloor | Lemma::Bernoulli => EnsembleSpec::bernoulli(m),
            Lemma::Gaussian => EnsembleSpec::gaussian(m),
        }
    }

    fn stream(self) -> usize {
        self as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceCell {
    pub lemma: Lemma,
    pub m: usize,
    pub delta: f64,
    pub trials: usize,
    pub hits: usize,
    pub rate: f64,
    pub stderr: f64,
    pub bound: f64,
}

impl DominanceCell {
    /// `rate <= bound + k stderr`.
    pub fn dominated(&self, k: f64) -> bool {
        self.rate <= self.bound + k * self.stderr
    }
}

/// Monte Carlo estimate of `Pr(||P_C x||^2 >= (1 - delta) ||x||^2)` where
/// each trial draws a fresh column space `C` of a random rank-two convolution
/// kernel element and an independent `x` from the lemma's ensemble.
pub fn lemma_dominance(lemma: Lemma, m: usize, delta: f64, trials: usize, master_seed: u64) -> Result<DominanceCell> {
    if m < 3 {
        return Err(Error::InvalidDimension(format!("need m >= 3 for a proper two-dimensional subspace, got {m}")));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be positive"));
    }
    let bound = lemma.bound(m, delta)?;
    let sampler = Sampler::new(lemma.ensemble(m))?;
    let level = 1.0 - delta;
    let hits = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, m, lemma.stream(), t as u64);
            let u: DVector<f64> = DVector::from_fn(m - 1, |_, _| StandardNormal.sample(&mut rng));
            let mut span = DMatrix::zeros(m, 2);
            for k in 0..m - 1 {
                span[(k, 0)] = u[k];
                span[(k + 1, 1)] = -u[k];
            }
            let basis = orthonormal_columns(&span, 1e-12);
            let x = sampler.draw(&mut rng);
            projected_energy(&basis, &x) >= level * x.norm_squared()
        })
        .filter(|&h| h)
        .count();
    let rate = hits as f64 / trials as f64;
    Ok(DominanceCell {
        lemma,
        m,
        delta,
        trials,
        hits,
        rate,
        stderr: binomial_stderr(rate, trials),
        bound,
    })
}
