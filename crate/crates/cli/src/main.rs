//! Batch front end: simulate cohorts, sample risk sets, estimate rate ratios,
//! emit baseline-hazard and efficiency tables, and run replicated experiments.

mod config;
mod svg;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{ConfigError, EstimatorConfig, RunConfig};
use mh_core::asymptotics::{are_curve, write_are_csv};
use mh_core::baseline::{baseline_variance, write_baseline_csv};
use mh_core::cohort::{build_cohort, read_event_csv, write_event_csv, Cohort, CohortError, LevelSet};
use mh_core::design::{
    read_sampled_csv, sample_failures, write_sampled_csv, DesignError, DesignKind, DesignSpec,
    FailureStats, SampledFailure,
};
use mh_core::enumerate::enumerate_design;
use mh_core::estimator::{estimate, estimate_stratified, EstimateError, EstimateOptions};
use mh_core::montecarlo::{run_mc_outcomes, simulate_events, McError, MCSummary, ReplicationOutcome};
use mh_core::population::{cm_mix, PopulationModel, SensSpecModel};

#[derive(Debug)]
enum AppError {
    Usage(String),
    Io(String),
    Schema(String),
    Numeric(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Io(_) => 2,
            AppError::Schema(_) => 3,
            AppError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Io(m) | AppError::Schema(m) | AppError::Numeric(m) => m,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(err) => AppError::Io(err.to_string()),
            other => AppError::Schema(other.to_string()),
        }
    }
}

impl From<CohortError> for AppError {
    fn from(e: CohortError) -> Self {
        match &e {
            CohortError::Csv(c) if c.is_io_error() => AppError::Io(e.to_string()),
            _ => AppError::Schema(e.to_string()),
        }
    }
}

impl From<DesignError> for AppError {
    fn from(e: DesignError) -> Self {
        match &e {
            DesignError::Csv(c) if c.is_io_error() => AppError::Io(e.to_string()),
            DesignError::BadRow(_, _) | DesignError::MalformedSample(_, _) => AppError::Schema(e.to_string()),
            DesignError::BadSrsSize(_) | DesignError::BadStratumSizes | DesignError::StratumCountMismatch { .. } => {
                AppError::Schema(e.to_string())
            }
            _ => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<EstimateError> for AppError {
    fn from(e: EstimateError) -> Self {
        match &e {
            EstimateError::BadCustomWeights { .. } | EstimateError::EmptyFailures | EstimateError::MixedStrata(_) => {
                AppError::Schema(e.to_string())
            }
            _ => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<McError> for AppError {
    fn from(e: McError) -> Self {
        match e {
            McError::Cohort(c) => c.into(),
            McError::Design(d) => d.into(),
            McError::Estimate(s) => s.into(),
            McError::TooFewResults(_) => AppError::Numeric(e_to_string(&e)),
            _ => AppError::Schema(e_to_string(&e)),
        }
    }
}

fn e_to_string<E: std::fmt::Display>(e: &E) -> String {
    e.to_string()
}

#[derive(Parser)]
#[command(name = "mh", version, about = "Rate-ratio estimation from sampled risk sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort under the multiplicative-intensity model
    Simulate(SimulateArgs),
    /// Draw sampled risk sets at every failure of an event-record file
    Sample(SampleArgs),
    /// Estimate the rate ratio from sampled risk sets
    Estimate(EstimateArgs),
    /// Cumulative baseline hazard with pointwise standard errors
    Baseline(BaselineArgs),
    /// Asymptotic efficiency table relative to the partial likelihood
    Are(AreArgs),
    /// Replicated simulate-sample-estimate experiment
    Mc(McArgs),
    /// Verify the design probability identities on a small fixture
    Check(CheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML experiment config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    phi0: Option<f64>,
    /// Exposure prevalence for the dichotomous shortcut
    #[arg(long)]
    f1: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    censor_max: Option<f64>,
    /// Replicate index to draw (streams are keyed by it)
    #[arg(long, default_value_t = 0)]
    rep: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DesignArgs {
    /// full | srs | matching | cm
    #[arg(long)]
    design: Option<String>,
    /// Sampled-set size for srs
    #[arg(long)]
    m: Option<usize>,
    /// Comma-separated per-stratum sizes for matching/cm, e.g. 1,1
    #[arg(long)]
    m_per_stratum: Option<String>,
    /// Shrink requests in deficient strata instead of failing
    #[arg(long, default_value_t = false)]
    clamp: bool,
}

impl DesignArgs {
    fn name(&self) -> Result<&str, AppError> {
        self.design.as_deref().ok_or_else(|| AppError::Usage("missing --design".into()))
    }

    fn to_spec(&self) -> Result<DesignSpec, AppError> {
        let kind = match self.name()? {
            "full" => DesignKind::FullCohort,
            "srs" => DesignKind::Srs {
                m: self.m.ok_or_else(|| AppError::Usage("srs needs --m".into()))?,
            },
            kind @ ("matching" | "cm") => {
                let raw = self
                    .m_per_stratum
                    .as_ref()
                    .ok_or_else(|| AppError::Usage(format!("{} needs --m-per-stratum", kind)))?;
                let m: Result<Vec<usize>, _> = raw.split(',').map(|s| s.trim().parse()).collect();
                let m = m.map_err(|_| AppError::Usage("bad --m-per-stratum".into()))?;
                if kind == "matching" {
                    DesignKind::Matching { m }
                } else {
                    DesignKind::CounterMatching { m }
                }
            }
            other => return Err(AppError::Usage(format!("unknown design {:?}", other))),
        };
        let spec = DesignSpec::new(kind).map_err(|e| AppError::Schema(e.to_string()))?;
        Ok(spec.with_clamp(self.clamp))
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Event-record CSV: subject_id,time,event,value
    #[arg(long)]
    events: PathBuf,
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long)]
    seed: u64,
    /// Comma-separated exposure scores, first must be 0
    #[arg(long, default_value = "0,1")]
    levels: String,
    /// Time horizon
    #[arg(long)]
    tau: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Sampled-risk-set CSV from `mh sample`
    #[arg(long, conflicts_with = "events")]
    sampled: Option<PathBuf>,
    /// Run the sample step in-process from this event file
    #[arg(long, requires = "seed")]
    events: Option<PathBuf>,
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "0,1")]
    levels: String,
    #[arg(long)]
    tau: Option<f64>,
    /// Cohort size; defaults to the largest n_at_risk in the file
    #[arg(long)]
    n: Option<usize>,
    /// equal | optimal
    #[arg(long, default_value = "equal")]
    c: String,
    /// optional | model
    #[arg(long, default_value = "optional")]
    variance: String,
    /// Per-stratum baseline model (matched data)
    #[arg(long, default_value_t = false)]
    stratified: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    sampled: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value = "0,1")]
    levels: String,
    /// Rate ratio override; the variance of its estimator is then taken as 0
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct AreArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 0.2)]
    f1: f64,
    /// At-risk probability
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Surrogate sensitivity (two-stratum designs)
    #[arg(long)]
    delta: Option<f64>,
    /// Surrogate specificity (two-stratum designs)
    #[arg(long)]
    gamma: Option<f64>,
    /// Grid as lo:hi:step on the log scale
    #[arg(long, default_value = "-3:3:0.1", allow_hyphen_values = true)]
    grid: String,
    #[arg(long, short)]
    out: PathBuf,
    /// Also render the curve as an SVG polyline
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Write the merged config back out as normalized TOML
    #[arg(long)]
    echo_config: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Fixture risk-set size
    #[arg(long, default_value_t = 6)]
    n: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mh: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Are(args) => cmd_are(args),
        Command::Mc(args) => cmd_mc(args),
        Command::Check(args) => cmd_check(args),
    }
}

fn parse_levels(raw: &str) -> Result<LevelSet, AppError> {
    let scores: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse()).collect();
    let scores = scores.map_err(|_| AppError::Usage("bad --levels".into()))?;
    LevelSet::new(scores).map_err(|e| AppError::Schema(e.to_string()))
}

fn load_cohort(path: &Path, levels: LevelSet, tau: f64) -> Result<Cohort, AppError> {
    let file = File::open(path).map_err(|e| AppError::Io(format!("{}: {}", path.display(), e)))?;
    let records = read_event_csv(file)?;
    Ok(build_cohort(&records, levels, tau)?.0)
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    let mut f = File::create(path).map_err(|e| AppError::Io(format!("{}: {}", path.display(), e)))?;
    f.write_all(bytes)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), AppError> {
    let bytes = to_json(value);
    match out {
        Some(path) => write_out(path, &bytes),
        None => {
            std::io::stdout().write_all(&bytes)?;
            Ok(())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), AppError> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_str(&format!(
            "n = {}\nphi0 = {}\ntau = {}\nf = [{}, {}]\n[design]\nkind = \"full_cohort\"\n",
            args.n.ok_or_else(|| AppError::Usage("simulate needs --n or --config".into()))?,
            args.phi0.ok_or_else(|| AppError::Usage("simulate needs --phi0 or --config".into()))?,
            args.tau.ok_or_else(|| AppError::Usage("simulate needs --tau or --config".into()))?,
            1.0 - args.f1.unwrap_or(0.2),
            args.f1.unwrap_or(0.2),
        ))?,
    };
    let mut cfg = base;
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(phi0) = args.phi0 {
        cfg.phi0 = phi0;
    }
    if let Some(tau) = args.tau {
        cfg.tau = tau;
    }
    if let Some(lambda0) = args.lambda0 {
        cfg.lambda0 = lambda0;
    }
    if let Some(f1) = args.f1 {
        cfg.f = Some(vec![1.0 - f1, f1]);
        cfg.q = None;
        cfg.f_within = None;
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(max) = args.censor_max {
        cfg.censor_uniform_max = Some(max);
    }
    cfg.reps = Some(cfg.reps.unwrap_or(1));
    if cfg.seed.is_none() {
        return Err(AppError::Schema("simulate needs a seed".into()));
    }
    let scenario = cfg.to_scenario()?;
    let records = simulate_events(&scenario, args.rep)?;
    let mut buf = Vec::new();
    write_event_csv(&mut buf, &records).map_err(AppError::from)?;
    write_out(&args.out, &buf)
}

fn cmd_sample(args: SampleArgs) -> Result<(), AppError> {
    let levels = parse_levels(&args.levels)?;
    let cohort = load_cohort(&args.events, levels, args.tau)?;
    let design = args.design.to_spec()?;
    let sampled = sample_failures(&cohort, &design, args.seed)?;
    let mut buf = Vec::new();
    write_sampled_csv(&mut buf, &sampled).map_err(AppError::from)?;
    write_out(&args.out, &buf)
}

fn load_sampled(args_sampled: &Path) -> Result<Vec<SampledFailure>, AppError> {
    let file = File::open(args_sampled)
        .map_err(|e| AppError::Io(format!("{}: {}", args_sampled.display(), e)))?;
    Ok(read_sampled_csv(file)?)
}

fn estimator_options(c: &str, variance: &str) -> Result<EstimateOptions, AppError> {
    let cfg = EstimatorConfig { c: c.into(), c_custom: None, variance: variance.into() };
    Ok(cfg.to_options()?)
}

fn sampled_for_estimate(args: &EstimateArgs) -> Result<(Vec<SampledFailure>, LevelSet), AppError> {
    let levels = parse_levels(&args.levels)?;
    if let Some(path) = &args.sampled {
        return Ok((load_sampled(path)?, levels));
    }
    let events = args
        .events
        .as_ref()
        .ok_or_else(|| AppError::Usage("estimate needs --sampled or --events".into()))?;
    let tau = args.tau.ok_or_else(|| AppError::Usage("--events needs --tau".into()))?;
    let seed = args.seed.ok_or_else(|| AppError::Schema("sampling needs a seed".into()))?;
    let cohort = load_cohort(events, levels.clone(), tau)?;
    let design = args.design.to_spec()?;
    Ok((sample_failures(&cohort, &design, seed)?, levels))
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), AppError> {
    let (sampled, levels) = sampled_for_estimate(&args)?;
    let n = args
        .n
        .or_else(|| sampled.iter().map(|sf| sf.n_t).max())
        .ok_or_else(|| AppError::Schema("no failures in input".into()))?;
    let options = estimator_options(&args.c, &args.variance)?;
    let result = if args.stratified {
        estimate_stratified(&sampled, &levels, n, &options)?
    } else {
        let stats: Vec<FailureStats> =
            sampled.iter().map(|sf| FailureStats::from_sampled(sf, levels.count())).collect();
        estimate(&stats, &levels, n, &options)?
    };
    emit_json(&args.out, &result)
}

fn cmd_baseline(args: BaselineArgs) -> Result<(), AppError> {
    let levels = parse_levels(&args.levels)?;
    let sampled = load_sampled(&args.sampled)?;
    let n = args
        .n
        .or_else(|| sampled.iter().map(|sf| sf.n_t).max())
        .ok_or_else(|| AppError::Schema("no failures in input".into()))?;
    let stats: Vec<FailureStats> =
        sampled.iter().map(|sf| FailureStats::from_sampled(sf, levels.count())).collect();
    let (phi, sigma2_n) = match args.phi {
        Some(phi) => (phi, 0.0),
        None => {
            let result = estimate(&stats, &levels, n, &EstimateOptions::default())?;
            let sigma2 = result
                .sigma2
                .ok_or_else(|| AppError::Numeric("degenerate estimate; pass --phi".into()))?;
            (result.phi_hat, sigma2)
        }
    };
    let report = baseline_variance(&stats, levels.alphas(), phi, sigma2_n, n);
    let mut buf = Vec::new();
    write_baseline_csv(&mut buf, &report).map_err(|e| AppError::Schema(e.to_string()))?;
    write_out(&args.out, &buf)
}

fn parse_grid(raw: &str) -> Result<Vec<f64>, AppError> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(AppError::Usage("grid must be lo:hi:step".into()));
    }
    let lo: f64 = parts[0].parse().map_err(|_| AppError::Usage("bad grid lo".into()))?;
    let hi: f64 = parts[1].parse().map_err(|_| AppError::Usage("bad grid hi".into()))?;
    let step: f64 = parts[2].parse().map_err(|_| AppError::Usage("bad grid step".into()))?;
    if !(step > 0.0 && hi >= lo) {
        return Err(AppError::Usage("grid must have positive step and hi >= lo".into()));
    }
    let count = ((hi - lo) / step).round() as usize;
    Ok((0..=count).map(|i| lo + step * i as f64).collect())
}

fn cmd_are(args: AreArgs) -> Result<(), AppError> {
    let design = args.design.to_spec()?;
    let needs_strata = matches!(design.kind, DesignKind::Matching { .. } | DesignKind::CounterMatching { .. });
    let population = if needs_strata {
        let delta = args.delta.ok_or_else(|| AppError::Usage("stratified designs need --delta".into()))?;
        let gamma = args.gamma.ok_or_else(|| AppError::Usage("stratified designs need --gamma".into()))?;
        let model = SensSpecModel::new(args.f1, delta, gamma).map_err(|e| AppError::Schema(e.to_string()))?;
        let (q, fw) = cm_mix::<f64>(&model).map_err(|e| AppError::Schema(e.to_string()))?;
        PopulationModel::time_constant_strata(args.p, q, fw, args.lambda0, args.tau)
    } else {
        PopulationModel::time_constant(args.p, vec![1.0 - args.f1, args.f1], args.lambda0, args.tau)
    }
    .map_err(|e| AppError::Schema(e.to_string()))?;
    let grid = parse_grid(&args.grid)?;
    let rows = are_curve(&design.kind, &population, &grid).map_err(|e| AppError::Numeric(e.to_string()))?;
    let mut buf = Vec::new();
    write_are_csv(&mut buf, &rows).map_err(|e| AppError::Schema(e.to_string()))?;
    write_out(&args.out, &buf)?;
    if let Some(svg_path) = &args.svg {
        let label = format!("{} f1={}", args.design.name()?, args.f1);
        write_out(svg_path, svg::render_are(&rows, &label).as_bytes())?;
    }
    Ok(())
}

/// Monte Carlo output: the summary when at least two replicates are usable,
/// otherwise the raw outcomes, plus the config echo either way.
#[derive(Serialize)]
struct McOutput {
    config: RunConfig,
    summary: Option<MCSummary>,
    outcomes: Option<Vec<ReplicationOutcome>>,
}

fn cmd_mc(args: McArgs) -> Result<(), AppError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(reps) = args.reps {
        cfg.reps = Some(reps);
    }
    if let Some(path) = &args.echo_config {
        write_out(path, cfg.echo().as_bytes())?;
    }
    let scenario = cfg.to_scenario()?;
    let outcomes = run_mc_outcomes(&scenario).map_err(AppError::from)?;
    let output = match mh_core::montecarlo::mc_summary(&outcomes, &scenario) {
        Ok(summary) => McOutput { config: cfg, summary: Some(summary), outcomes: None },
        Err(McError::TooFewResults(_)) => McOutput { config: cfg, summary: None, outcomes: Some(outcomes) },
        Err(e) => return Err(e.into()),
    };
    emit_json(&args.out, &output)
}

fn cmd_check(args: CheckArgs) -> Result<(), AppError> {
    use mh_core::cohort::{EventKind, EventRecord};
    let n = args.n.clamp(2, 12);
    let mut records = Vec::new();
    for i in 0..n {
        let id = format!("s{:02}", i);
        records.push(EventRecord { subject_id: id.clone(), time: 0.0, event: EventKind::Enter, value: String::new() });
        if i % 2 == 0 {
            records.push(EventRecord { subject_id: id.clone(), time: 0.0, event: EventKind::Cov, value: "1".into() });
        }
        records.push(EventRecord {
            subject_id: id,
            time: 0.0,
            event: EventKind::Stratum,
            value: if i % 3 == 0 { "a".into() } else { "b".into() },
        });
    }
    let (cohort, _) = build_cohort(&records, LevelSet::classical(), 1.0).map_err(AppError::from)?;
    let rs = cohort.risk_set(0.5).map_err(AppError::from)?;
    let mut designs = vec![
        ("full", DesignSpec::new(DesignKind::FullCohort).unwrap()),
        ("srs m=2", DesignSpec::new(DesignKind::Srs { m: 2 }).unwrap()),
    ];
    let (ca, cb) = (rs.stratum_counts[0], rs.stratum_counts[1]);
    if ca >= 2 && cb >= 1 {
        designs.push(("matching m=(2,1)", DesignSpec::new(DesignKind::Matching { m: vec![2, 1] }).unwrap()));
        designs.push(("cm m=(1,1)", DesignSpec::new(DesignKind::CounterMatching { m: vec![1, 1] }).unwrap()));
    }
    let mut failed = false;
    for (name, design) in designs {
        match enumerate_design(&rs, &design) {
            Ok(table) => {
                let ok = table.verify();
                println!(
                    "check {}: {} ({} rows)",
                    name,
                    if ok { "ok" } else { "FAILED" },
                    table.rows.len()
                );
                failed |= !ok;
            }
            Err(e) => {
                println!("check {}: FAILED ({})", name, e);
                failed = true;
            }
        }
    }
    if failed {
        return Err(AppError::Numeric("design identity verification failed".into()));
    }
    Ok(())
}
