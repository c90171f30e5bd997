//! Command line front end: run simulations, rank strategies from the
//! summary CSV, and check configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vanetsim::config::{parse_override, ScenarioConfig};
use vanetsim::engine::{desk_profile, paper_profile, run_experiment};
use vanetsim::metrics::median;
use vanetsim::stats::{aligned_friedman, Direction, ResultMatrix};

#[derive(Parser)]
#[command(
    name = "vanetsim",
    version,
    about = "Beacon-rate congestion control simulator for vehicular networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write records, summary, and manifest files
    Simulate(SimulateArgs),
    /// Rank strategies in a summary CSV with the aligned Friedman test
    Rank(RankArgs),
    /// Check a configuration and print its resolved form
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config file (key = value lines); repeat to run several
    /// scenarios as one experiment. Defaults apply when omitted.
    #[arg(long)]
    config: Vec<PathBuf>,
    /// Expand a built-in experiment profile from the (first) config
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Override the base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent replications (default: one per core)
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write per-window vehicle position traces
    #[arg(long)]
    trace: bool,
    /// Override one config key, e.g. --set channel.max_q=400 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// 2 km ring, densities {100,200,400}, 20 replications, 60 s
    Desk,
    /// 10 km ring, densities 500..=2000, 50 replications, 150 s
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Br,
    Eta,
    Sigma,
    Adaptations,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Br => "br",
            Metric::Eta => "eta",
            Metric::Sigma => "sigma",
            Metric::Adaptations => "adaptations",
        }
    }

    /// Conventional reading: rates and occupancy are goods, imbalance and
    /// adaptation churn are costs.
    fn default_direction(self) -> Direction {
        match self {
            Metric::Br | Metric::Eta => Direction::HigherIsBetter,
            Metric::Sigma | Metric::Adaptations => Direction::LowerIsBetter,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Higher,
    Lower,
}

#[derive(Args)]
struct RankArgs {
    /// Directory containing summary.csv (as written by simulate)
    #[arg(long = "in")]
    in_dir: PathBuf,
    /// Metric column to rank on
    #[arg(long, value_enum)]
    metric: Metric,
    /// Which end of the metric is better (defaults per metric)
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    /// Ranking CSV path (default: <in>/ranking_<metric>.csv)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario config file to check
    #[arg(long)]
    config: PathBuf,
    /// Apply overrides before checking (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Rank(args) => rank(args),
        Command::Validate(args) => validate(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>, set: &[String], seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::from_file(p)
            .with_context(|| format!("loading config {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if !set.is_empty() {
        let pairs = set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        cfg.apply_overrides(&pairs)?;
    }
    if let Some(seed) = seed {
        cfg.base_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let cfgs: Vec<ScenarioConfig> = match args.profile {
        Some(profile) => {
            if args.config.len() > 1 {
                bail!("--profile expands a single base config; pass at most one --config");
            }
            let base = load_config(args.config.first().map(|p| p.as_path()), &args.set, args.seed)?;
            match profile {
                Profile::Desk => desk_profile(&base),
                Profile::Paper => paper_profile(&base),
            }
        }
        None if args.config.is_empty() => {
            vec![load_config(None, &args.set, args.seed)?]
        }
        None => args
            .config
            .iter()
            .map(|p| load_config(Some(p), &args.set, args.seed))
            .collect::<Result<Vec<_>>>()?,
    };

    let replications: u32 = cfgs.iter().map(|c| c.replications).sum();
    println!("scenarios: {}, replications: {}", cfgs.len(), replications);

    let outcome = run_experiment(&cfgs, args.workers, &args.out, args.trace)?;
    for file in &outcome.files {
        println!("wrote {}", args.out.join(file).display());
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!(
                "failed: {} {} replication {}: {}",
                f.strategy, f.scenario, f.replication, f.error
            );
        }
        eprintln!("{} of {} replications failed", outcome.failures.len(), replications);
        Ok(ExitCode::FAILURE)
    }
}

struct SummaryLine {
    strategy: String,
    vehicles: u32,
    value: Option<f64>,
}

fn read_summary(path: &Path, metric: Metric) -> Result<Vec<SummaryLine>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| {
            h == match metric {
                Metric::Br => "median_br",
                Metric::Eta => "median_eta",
                Metric::Sigma => "median_sigma",
                Metric::Adaptations => "adaptations",
            }
        })
        .with_context(|| format!("{} lacks a column for {}", path.display(), metric.name()))?;

    let mut lines = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2; // header is line 1
        let strategy = record
            .get(0)
            .with_context(|| format!("line {row}: missing strategy"))?
            .to_string();
        let vehicles: u32 = record
            .get(1)
            .with_context(|| format!("line {row}: missing vehicles"))?
            .parse()
            .with_context(|| format!("line {row}: bad vehicles"))?;
        let cell = record
            .get(col)
            .with_context(|| format!("line {row}: missing {}", metric.name()))?;
        let value = if cell.is_empty() {
            None
        } else {
            Some(
                cell.parse::<f64>()
                    .with_context(|| format!("line {row}: bad {} value {cell:?}", metric.name()))?,
            )
        };
        lines.push(SummaryLine {
            strategy,
            vehicles,
            value,
        });
    }
    Ok(lines)
}

fn rank(args: RankArgs) -> Result<ExitCode> {
    let summary_path = args.in_dir.join("summary.csv");
    let metric = args.metric;
    let lines = read_summary(&summary_path, metric)?;
    if lines.is_empty() {
        bail!("{} has no data rows", summary_path.display());
    }

    // One cell per (density block, strategy): median over replications.
    let mut cells: BTreeMap<(u32, String), Vec<f64>> = BTreeMap::new();
    for line in &lines {
        let entry = cells.entry((line.vehicles, line.strategy.clone())).or_default();
        if let Some(v) = line.value {
            entry.push(v);
        }
    }
    let mut methods: Vec<String> = lines.iter().map(|l| l.strategy.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut blocks: Vec<u32> = lines.iter().map(|l| l.vehicles).collect();
    blocks.sort_unstable();
    blocks.dedup();

    let mut values = Vec::with_capacity(blocks.len());
    for &b in &blocks {
        let mut row = Vec::with_capacity(methods.len());
        for m in &methods {
            let reps = cells
                .get(&(b, m.clone()))
                .filter(|v| !v.is_empty())
                .with_context(|| format!("no {} values for {m} at {b} vehicles", metric.name()))?;
            row.push(median(reps));
        }
        values.push(row);
    }

    let direction = match args.direction {
        Some(DirectionArg::Higher) => Direction::HigherIsBetter,
        Some(DirectionArg::Lower) => Direction::LowerIsBetter,
        None => metric.default_direction(),
    };
    let matrix = ResultMatrix::new(
        methods,
        blocks.iter().map(|b| b.to_string()).collect(),
        values,
    )?;
    let result = aligned_friedman(&matrix, direction);

    let reading = match direction {
        Direction::HigherIsBetter => "higher is better",
        Direction::LowerIsBetter => "lower is better",
    };
    println!(
        "aligned Friedman ranking on {} ({reading}), {} blocks x {} methods",
        metric.name(),
        matrix.blocks().len(),
        matrix.methods().len()
    );
    println!("{:<5} {:<20} {:>10}", "rank", "method", "mean_rank");
    for (i, (method, mean_rank)) in result.ranking.iter().enumerate() {
        println!("{:<5} {:<20} {:>10.4}", i + 1, method, mean_rank);
    }
    println!("statistic = {:.4} (chi-square, {} df)", result.statistic, matrix.methods().len() - 1);
    println!("p-value   = {}", format_p(result.p_value));

    let out_path = args
        .out
        .unwrap_or_else(|| args.in_dir.join(format!("ranking_{}.csv", metric.name())));
    let mut writer = csv::Writer::from_path(&out_path)
        .with_context(|| format!("creating {}", out_path.display()))?;
    writer.write_record(["rank", "method", "mean_rank"])?;
    for (i, (method, mean_rank)) in result.ranking.iter().enumerate() {
        writer.write_record([(i + 1).to_string(), method.clone(), format!("{mean_rank:.4}")])?;
    }
    writer.flush()?;
    println!("wrote {}", out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn format_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.3e}")
    } else {
        format!("{p:.4}")
    }
}

fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let cfg = load_config(Some(&args.config), &args.set, None)?;
    println!("ok: {} ({} windows per replication)", cfg.strategy_label(), cfg.windows());
    print!("{}", cfg.to_kv_string());
    Ok(ExitCode::SUCCESS)
}
