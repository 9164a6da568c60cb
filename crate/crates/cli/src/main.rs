//! `bilift`: operator inspection, identifiability checks, bound evaluation
//! and Monte Carlo experiment runs.
//!
//! Exit codes: 0 success (or identifiable), 1 runtime failure, 2 malformed
//! input or configuration, 3 sufficient condition failed or ambiguity
//! witnessed, 4 undecided.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use bilift::bounds::{figure1_curve, BoundParams, Figure1Params};
use bilift::experiments::{default_fit_mode, fit_slope, run, Cell, Example, ExperimentConfig, FailureCurve, FitMode};
use bilift::identifiability::{check_sufficient_instance, Outcome, Witness, DEFAULT_DELTA_TEST};
use bilift::linalg::singular_values;
use bilift::null_space::{family_bernoulli, family_biorthogonal, family_convolution, FiniteFamily, NullSpaceFamily};
use bilift::operator::{lift_linear_convolution, RankOneInstance, SignalPair};
use bilift::solver::{kernel_basis, MinRankSolver, SolverConfig, MAX_KERNEL_ENTRIES};

mod signal;

#[derive(Parser)]
#[command(name = "bilift", version, about = "Identifiability analysis for lifted bilinear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dimensions of the lifted linear convolution operator.
    LiftInfo { m: usize, n: usize },
    /// Tests a signal pair against a restricted rank-two null-space family.
    Check(CheckArgs),
    /// Evaluates every probability bound at one parameter point.
    Bounds(BoundsArgs),
    /// Runs a Monte Carlo experiment from a TOML config and writes CSV.
    Run(RunArgs),
    /// Fits log failure rate against n for each m of an experiment CSV.
    Fit(FitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Empty,
    Biorthogonal,
    Bernoulli,
    Convolution,
}

#[derive(clap::Args)]
struct CheckArgs {
    /// Signal file: header "m n", then the m entries of x and n entries of y.
    signal: PathBuf,
    #[arg(long, value_enum, default_value = "convolution")]
    family: FamilyArg,
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA_TEST)]
    delta_test: f64,
    /// Second signal pair; equal convolutions from inequivalent pairs witness
    /// non-identifiability.
    #[arg(long)]
    alt: Option<PathBuf>,
    /// Runs the rank-two search within this Frobenius radius of the
    /// normalised lifted matrix (convolution family only).
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(clap::Args)]
struct BoundsArgs {
    m: usize,
    n: usize,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    delta_prime: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of distinct subspace pairs, for the finite-family bounds.
    #[arg(long)]
    f: Option<u64>,
    /// Metric entropy; defaults to `m + n - 3`.
    #[arg(long)]
    p: Option<f64>,
    /// Also print the Gaussian-prior theory curve for n' in m..=n.
    #[arg(long)]
    curve: bool,
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides a top-level or `solver.` key, e.g. `--set trials_per_cell=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(clap::Args)]
struct FitArgs {
    csv: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Loglog,
    Semilog,
}

/// An error together with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::LiftInfo { m, n } => lift_info(m, n),
        Command::Check(a) => check(&a),
        Command::Bounds(a) => bounds(&a),
        Command::Run(a) => run_experiment(&a),
        Command::Fit(a) => fit(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn lift_info(m: usize, n: usize) -> Result<u8, Failure> {
    let op = lift_linear_convolution(m, n).map_err(|e| usage(e.into()))?;
    let kernel_dim = if m * n <= MAX_KERNEL_ENTRIES {
        kernel_basis(&op).map_err(|e| runtime(e.into()))?.dim()
    } else {
        m * n - op.q()
    };
    println!("m = {m}");
    println!("n = {n}");
    println!("q = {}", op.q());
    println!("kernel_dim = {kernel_dim}");
    match family_convolution(m, n) {
        Ok(NullSpaceFamily::Parametric(c)) => println!("rank2_dof = {}", c.dof()),
        _ => println!("rank2_dof = none"),
    }
    Ok(0)
}

fn read_signal(path: &Path) -> Result<SignalPair, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    signal::parse(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(usage)
}

fn check(a: &CheckArgs) -> Result<u8, Failure> {
    let pair = read_signal(&a.signal)?;
    let inst = RankOneInstance::from_pair(&pair).map_err(|e| usage(e.into()))?;
    let (m, n) = (inst.m(), inst.n());
    println!("instance: m = {m}, n = {n}, sigma = {:.6e}", inst.sigma);

    if let Some(alt) = &a.alt {
        return check_alternative(&pair, &inst, &read_signal(alt)?);
    }

    let family = match a.family {
        FamilyArg::Empty => Ok(NullSpaceFamily::Finite(FiniteFamily::empty(m, n))),
        FamilyArg::Biorthogonal => family_biorthogonal(m, n),
        FamilyArg::Bernoulli => family_bernoulli(m, n, a.tau),
        FamilyArg::Convolution => family_convolution(m, n),
    }
    .map_err(|e| usage(e.into()))?;
    let verdict = check_sufficient_instance(&inst, &family, a.delta_test).map_err(|e| usage(e.into()))?;
    match verdict.outcome {
        Outcome::Identifiable => {
            println!("family parts: {}", verdict.margins.len());
            println!("outcome: identifiable");
            Ok(0)
        }
        Outcome::SufficientConditionFailed => {
            println!("family parts: {}", verdict.margins.len());
            if let Some(Witness::Part(id)) = verdict.witness {
                println!("witness part: {id}");
            }
            println!("outcome: sufficient condition failed");
            Ok(3)
        }
        Outcome::Unknown => match a.mu {
            Some(mu) => rank_two_search(&inst, mu),
            None => {
                println!("outcome: unknown (parametric family; pass --mu to search for a nearby rank-two kernel matrix)");
                Ok(4)
            }
        },
    }
}

fn check_alternative(pair: &SignalPair, inst: &RankOneInstance, alt: &SignalPair) -> Result<u8, Failure> {
    let other = RankOneInstance::from_pair(alt).map_err(|e| usage(e.into()))?;
    if (other.m(), other.n()) != (inst.m(), inst.n()) {
        return Err(usage(anyhow!(
            "alternative pair is {}x{}, expected {}x{}",
            other.m(),
            other.n(),
            inst.m(),
            inst.n()
        )));
    }
    let op = lift_linear_convolution(inst.m(), inst.n()).map_err(|e| runtime(e.into()))?;
    let z1 = op.apply_bilinear(pair).map_err(|e| runtime(e.into()))?;
    let z2 = op.apply_bilinear(alt).map_err(|e| runtime(e.into()))?;
    let gap = (&z1.0 - &z2.0).amax();
    let scale = z1.max_abs().max(z2.max_abs());
    println!("observation gap: {gap:.3e} (max |z| = {scale:.3e})");
    let diff = pair.lift() - alt.lift();
    let s = singular_values(&diff);
    let rank = s.iter().filter(|v| **v > 1e-10 * s[0].max(f64::MIN_POSITIVE)).count();
    println!("lifted difference rank: {rank}");
    if gap <= 1e-12 * scale && !inst.equivalent(&other, 1e-9) {
        println!("outcome: not identifiable (inequivalent pairs with identical observations)");
        Ok(3)
    } else {
        println!("outcome: unknown (pairs do not witness an ambiguity)");
        Ok(4)
    }
}

fn rank_two_search(inst: &RankOneInstance, mu: f64) -> Result<u8, Failure> {
    let op = lift_linear_convolution(inst.m(), inst.n()).map_err(|e| runtime(e.into()))?;
    let solver = MinRankSolver::new(&op, SolverConfig::with_mu(mu)).map_err(|e| usage(e.into()))?;
    let m = inst.normalized().matrix();
    match solver.solve(&m) {
        Err(bilift::Error::Infeasible { distance, .. }) => {
            println!("distance to kernel: {distance:.6e} > mu");
            println!("outcome: unknown (no kernel matrix within mu)");
            Ok(4)
        }
        Err(e) => Err(runtime(e.into())),
        Ok(r) => {
            println!(
                "solver: rank {} converged {} after {} outer / {} inner iterations",
                r.numerical_rank, r.converged, r.outer_iterations, r.inner_iterations
            );
            if r.converged && r.numerical_rank == 2 && r.x.norm() > 0.0 {
                println!("outcome: sufficient condition failed (rank-two kernel matrix within mu)");
                Ok(3)
            } else {
                println!("outcome: unknown");
                Ok(4)
            }
        }
    }
}

fn bounds(a: &BoundsArgs) -> Result<u8, Failure> {
    let mut p = BoundParams::for_dims(a.m, a.n);
    if let Some(d) = a.delta {
        p.delta = d;
    }
    if let Some(d) = a.delta_prime {
        p.delta_prime = d;
    }
    if let Some(e) = a.epsilon {
        p.epsilon = e;
        p.theta_constant = bilift::bounds::default_theta(e);
    }
    if let Some(f) = a.f {
        p.f = f;
    }
    if let Some(v) = a.p {
        p.p = v;
        p.p_c = v / 2.0;
        p.p_r = v / 2.0;
    }
    println!("{:<14} {:>14} {:>14} vacuous", "bound", "raw", "clamped");
    for (name, r) in p.evaluate_all() {
        match r {
            Ok(r) => println!("{name:<14} {:>14.6e} {:>14.6e} {}", r.raw, r.clamped, r.vacuous),
            Err(e) => println!("{name:<14} error: {e}"),
        }
    }
    if a.curve {
        let params = Figure1Params {
            epsilon: a.epsilon.unwrap_or(0.1),
            delta: a.delta.unwrap_or(1e-4),
            theta_constant: None,
        };
        let curve = figure1_curve(a.m, a.m..=a.n.max(a.m), &params).map_err(|e| usage(e.into()))?;
        println!();
        println!("n,failure_bound,log_failure_bound");
        for pt in curve {
            println!("{},{:e},{}", pt.n, pt.failure_bound, pt.log_failure_bound);
        }
    }
    Ok(0)
}

/// Loads a TOML config, applies `KEY=VALUE` overrides and validates it.
fn load_config(path: &Path, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("override `{o}` is not KEY=VALUE"))?;
        let value = parse_override_value(raw.trim());
        let mut target = &mut table;
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let last = parts.pop().unwrap_or_default();
        for p in parts {
            target = target
                .entry(p)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a table"))?;
        }
        target.insert(last.to_string(), value);
    }
    let cfg: ExperimentConfig = toml::Value::Table(table).try_into().context("invalid config")?;
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn run_experiment(a: &RunArgs) -> Result<u8, Failure> {
    let cfg = load_config(&a.config, &a.overrides).map_err(usage)?;
    if a.workers == Some(0) {
        return Err(usage(anyhow!("--workers must be at least 1")));
    }
    let curve = run(&cfg, a.workers).map_err(|e| runtime(e.into()))?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).map_err(|e| runtime(e.into()))?;
    match &a.output {
        Some(p) => fs::write(p, &buf)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(runtime)?,
        None => io::stdout().write_all(&buf).map_err(|e| runtime(e.into()))?,
    }
    // slope records go to stdout only when the CSV went to a file
    let mut report: Box<dyn Write> = if a.output.is_some() {
        Box::new(io::stdout())
    } else {
        Box::new(io::stderr())
    };
    report_fits(&curve, default_fit_mode(cfg.example), &mut report).map_err(|e| runtime(e.into()))?;
    for c in curve.cells.iter().filter(|c| c.flagged()) {
        writeln!(report, "flagged: m={} n={} nonconverged={}/{}", c.m, c.n, c.nonconverged, c.trials)
            .map_err(|e| runtime(e.into()))?;
    }
    Ok(0)
}

fn report_fits(curve: &FailureCurve, mode: FitMode, out: &mut dyn Write) -> io::Result<usize> {
    let mut fitted = 0;
    for m in curve.m_values() {
        match fit_slope(curve, m, mode) {
            Ok(f) => {
                writeln!(out, "{f}")?;
                fitted += 1;
            }
            Err(e) => writeln!(out, "m={m} fit unavailable: {e}")?,
        }
    }
    Ok(fitted)
}

fn read_curve(path: &Path) -> anyhow::Result<FailureCurve> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let expected = ["example", "m", "n", "trials", "failures", "failure_rate", "stderr"];
    if headers.iter().collect::<Vec<_>>() != expected {
        bail!("unexpected CSV header {:?}, expected {}", headers, expected.join(","));
    }
    let mut example = None;
    let mut cells = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("CSV row {}", line + 2);
        let ex = match &rec[0] {
            "A" => Example::A,
            "B" => Example::B,
            "C" => Example::C,
            other => bail!("{}: unknown example `{other}`", ctx()),
        };
        if *example.get_or_insert(ex) != ex {
            bail!("{}: mixed examples in one file", ctx());
        }
        let m: usize = rec[1].parse().with_context(ctx)?;
        let n: usize = rec[2].parse().with_context(ctx)?;
        let trials: usize = rec[3].parse().with_context(ctx)?;
        let failures: usize = rec[4].parse().with_context(ctx)?;
        if trials == 0 || failures > trials {
            bail!("{}: need 0 <= failures <= trials and trials > 0", ctx());
        }
        cells.push(Cell::from_counts(m, n, trials, failures));
    }
    let example = example.ok_or_else(|| anyhow!("{} has no data rows", path.display()))?;
    Ok(FailureCurve { example, cells })
}

fn fit(a: &FitArgs) -> Result<u8, Failure> {
    let curve = read_curve(&a.csv).map_err(usage)?;
    let mode = match a.mode {
        Some(ModeArg::Loglog) => FitMode::Loglog,
        Some(ModeArg::Semilog) => FitMode::Semilog,
        None => default_fit_mode(curve.example),
    };
    let fitted = report_fits(&curve, mode, &mut io::stdout()).map_err(|e| runtime(e.into()))?;
    Ok(if fitted == 0 { 1 } else { 0 })
}
