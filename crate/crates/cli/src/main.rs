use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fidelity_core::harness::{self, GridChoice, TrainSettings};
use fidelity_core::synthworld::{self, CANNED_WORLDS};
use fidelity_core::{
    assign_folds, load_records, run_cv, train_bank, CalibrationMethod, CostProfile, CvOptions, EvalReport,
    FeaturizerConfig, GridSpec, ModelArtifacts, Policy, PolicyConfig, RoutingDecision, WorldSpec,
};
use indexmap::IndexMap;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "fidelity",
    version,
    about = "Cost-aware fidelity routing for question answering"
)]
struct Cli {
    /// Seed for every random choice (corpus generation, fold assignment).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Built-in profile name or path to a profile JSON file.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its truth sidecar.
    Gen(GenArgs),
    /// Train a predictor bank and save it as model artifacts.
    Train(TrainArgs),
    /// Route one question through a saved model.
    Route(RouteArgs),
    /// Cross-validate policies and write reports plus a Pareto CSV.
    Eval(EvalArgs),
    /// Print the normalized cost table of a profile.
    Costs {
        /// Profile name or path (overrides --profile).
        profile: Option<String>,
    },
    /// Write a Pareto CSV from a reports JSON file.
    Pareto {
        #[arg(long)]
        reports: PathBuf,
    },
}

#[derive(Args)]
struct GenArgs {
    /// Canned world name or path to a world spec JSON file.
    #[arg(long)]
    world: String,
    /// Override the number of questions.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct TrainOpts {
    /// Calibration method: none, isotonic, isotonic-sigmoid or temperature.
    #[arg(long, default_value = "isotonic")]
    calibration: CalibrationMethod,
    /// Grid spec JSON file (defaults to the built-in grid).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Keep at most this many vocabulary terms.
    #[arg(long)]
    max_terms: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus JSONL file.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Fix lambda instead of grid-searching it (needs --tau).
    #[arg(long, requires = "tau")]
    lambda: Option<f64>,
    #[arg(long, requires = "lambda")]
    tau: Option<f64>,
}

#[derive(Args)]
struct RouteArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Corpus JSONL file.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',', default_value = "voi")]
    policies: Vec<String>,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Truth sidecar from `gen`, needed by the oracle policy.
    #[arg(long, requires = "world")]
    truth: Option<PathBuf>,
    /// World the corpus was generated from (canned name or spec path).
    #[arg(long, requires = "truth")]
    world: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let profile_name = cli.profile.clone();
    let profile = || -> Result<CostProfile> {
        let name = profile_name.as_deref().unwrap_or("edge-cloud");
        CostProfile::resolve(name).with_context(|| format!("loading profile {name:?}"))
    };
    match cli.command {
        Command::Gen(args) => gen(&args, cli.seed, &cli.out),
        Command::Train(args) => train(&args, cli.seed, &profile()?, &cli.out),
        Command::Route(args) => route(&args, profile_name.as_deref()),
        Command::Eval(args) => eval(&args, cli.seed, &profile()?, &cli.out),
        Command::Costs { profile: p } => {
            let name = p.or(profile_name).unwrap_or_else(|| "edge-cloud".into());
            let profile = CostProfile::resolve(&name).with_context(|| format!("loading profile {name:?}"))?;
            costs(&profile)
        }
        Command::Pareto { reports } => pareto(&reports, &cli.out),
    }
}

fn load_world(world: &str, seed: u64) -> Result<WorldSpec> {
    if CANNED_WORLDS.contains(&world) {
        Ok(WorldSpec::canned(world, 1000, seed)?)
    } else {
        let mut spec = WorldSpec::load(world).with_context(|| format!("loading world spec {world:?}"))?;
        spec.seed = seed;
        Ok(spec)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen(args: &GenArgs, seed: u64, out: &Path) -> Result<()> {
    let mut spec = load_world(&args.world, seed)?;
    if let Some(n) = args.n {
        spec.n_questions = n;
    }
    spec.validate()?;
    let corpus = synthworld::generate(&spec)?;
    create_dir(out)?;
    let corpus_path = out.join("corpus.jsonl");
    let truth_path = out.join("truth.jsonl");
    corpus.write(&corpus_path, &truth_path)?;
    println!(
        "wrote {} records ({} questions) to {}",
        corpus.dataset.records().len(),
        corpus.dataset.n_questions(),
        corpus_path.display()
    );
    Ok(())
}

fn settings(opts: &TrainOpts) -> TrainSettings {
    TrainSettings {
        featurizer: FeaturizerConfig {
            max_terms: opts.max_terms,
        },
        calibration: opts.calibration,
    }
}

fn grid(opts: &TrainOpts) -> Result<GridSpec> {
    match &opts.grid {
        None => Ok(GridSpec::default()),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(text
                .parse()
                .with_context(|| format!("parsing grid {}", path.display()))?)
        }
    }
}

fn train(args: &TrainArgs, seed: u64, profile: &CostProfile, out: &Path) -> Result<()> {
    let dataset = load_records(&args.data)?;
    let settings = settings(&args.opts);
    let (train_config, policy) = match (args.lambda, args.tau) {
        (Some(lambda), Some(tau)) => {
            let gbr = grid(&args.opts)?.gbr_configs[0];
            (gbr, PolicyConfig::new(lambda, tau)?)
        }
        _ => {
            let folds = assign_folds(&dataset, 5, seed)?;
            let all: Vec<usize> = (0..5).collect();
            let GridChoice {
                train_config, policy, ..
            } = harness::grid_search(&dataset, &folds, &all, &grid(&args.opts)?, profile, &settings)?.choice;
            (train_config, policy)
        }
    };
    let bank = train_bank(
        &dataset,
        &profile.ids(),
        &settings.featurizer,
        &train_config,
        settings.calibration,
    )?;
    let artifacts = ModelArtifacts {
        bank,
        train_config: Some(train_config),
        calibration: Some(settings.calibration),
        policy: Some(policy),
        profile: Some(profile.clone()),
    };
    artifacts.save(out)?;
    println!(
        "saved model to {} (lambda={}, tau={})",
        out.display(),
        policy.lambda,
        policy.tau
    );
    Ok(())
}

#[derive(Serialize)]
struct TimedDecision {
    #[serde(flatten)]
    decision: RoutingDecision,
    routing_time_us: f64,
}

fn route(args: &RouteArgs, profile: Option<&str>) -> Result<()> {
    let artifacts = ModelArtifacts::load(&args.model)
        .with_context(|| format!("loading model from {}", args.model.display()))?;
    let profile = match (profile, artifacts.profile) {
        (Some(name), _) => CostProfile::resolve(name)?,
        (None, Some(p)) => p,
        (None, None) => CostProfile::builtin("edge-cloud")?,
    };
    let saved = artifacts.policy.unwrap_or(PolicyConfig::new(0.001, 0.0)?);
    let cfg = PolicyConfig::new(args.lambda.unwrap_or(saved.lambda), args.tau.unwrap_or(saved.tau))?;
    let start = Instant::now();
    let decision = fidelity_core::route_greedy(&artifacts.bank, &args.question, &cfg, &profile)?;
    let micros = start.elapsed().as_secs_f64() * 1e6;
    let timed = TimedDecision {
        decision,
        routing_time_us: micros,
    };
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&timed)?)?;
    Ok(())
}

fn eval(args: &EvalArgs, seed: u64, profile: &CostProfile, out: &Path) -> Result<()> {
    let policies = args
        .policies
        .iter()
        .map(|name| Policy::parse(name, profile))
        .collect::<fidelity_core::Result<Vec<_>>>()?;
    if policies.contains(&Policy::Oracle) && args.truth.is_none() {
        bail!("the oracle policy needs --truth and --world");
    }
    let dataset = load_records(&args.data)?;
    let opts = CvOptions {
        k: args.folds,
        seed,
        grid: grid(&args.opts)?,
        settings: settings(&args.opts),
        policies,
        keep_outcomes: false,
    };
    let reports = match (&args.truth, &args.world) {
        (Some(truth_path), Some(world)) => {
            let spec = load_world(world, seed)?;
            let truth = synthworld::load_truth(truth_path)?;
            let lookup = |qid: &str| synthworld::true_vector(&spec, &truth, qid);
            run_cv(&dataset, profile, &opts, Some(&lookup))?.reports
        }
        _ => run_cv(&dataset, profile, &opts, None)?.reports,
    };

    create_dir(out)?;
    let report_path = out.join("reports.json");
    fs::write(&report_path, serde_json::to_string_pretty(&reports)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    write_pareto(&reports, &out.join("pareto.csv"))?;

    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{:<20} {:>9} {:>9}", "policy", "acc (%)", "avg cost")?;
    for r in reports.values() {
        writeln!(
            stdout,
            "{:<20} {:>9.1} {:>9.1}",
            r.policy,
            100.0 * r.accuracy,
            r.avg_cost
        )?;
    }
    Ok(())
}

fn write_pareto(reports: &IndexMap<String, EvalReport>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    harness::write_pareto_csv(&mut buf, reports)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn costs(profile: &CostProfile) -> Result<()> {
    let mut stdout = io::stdout().lock();
    for (id, c) in profile.cost_table() {
        writeln!(stdout, "{id:<12} {c:>6.1}")?;
    }
    Ok(())
}

fn pareto(reports: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(reports).with_context(|| format!("reading {}", reports.display()))?;
    let reports: IndexMap<String, EvalReport> = serde_json::from_str(&text)?;
    create_dir(out)?;
    let path = out.join("pareto.csv");
    write_pareto(&reports, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
