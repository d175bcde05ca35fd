use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gbql::commands::{self, DataConfig, RunConfig};
use gbql::io;
use gbql::simulation::SimulationConfig;
use gbql::{BaselineMethod, Error};

#[derive(Parser)]
#[command(name = "gbql", version, about = "Prevalence estimation from classifier outputs under dataset shift")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "GBQL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the generalized posterior and write a result document.
    Fit(FitArgs),
    /// Classical estimators (cc, pa, acc, apa) only.
    Baseline(BaselineArgs),
    /// Run a simulation study from a preset or scenario file.
    Simulate(SimulateArgs),
    /// Convergence diagnostics for a result document or a run configuration.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Result path; overrides output.path in the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Include retained draws in the result.
    #[arg(long)]
    draws: bool,
    /// Rescale rows that do not sum to one.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BaselineArgs {
    /// Run configuration supplying the data paths.
    #[arg(long, conflicts_with = "unlabeled")]
    config: Option<PathBuf>,
    /// Unlabeled predictions CSV.
    #[arg(long, required_unless_present = "config")]
    unlabeled: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    labeled: Option<PathBuf>,
    #[arg(long, requires = "labeled")]
    labels: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "cc,pa")]
    method: Vec<BaselineMethod>,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in study design.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    /// Simulation file (TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Directory for summary.json and the per-replicate CSV.
    #[arg(long, default_value = "simulation-output")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Result document written by `fit --draws`.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    result: Option<PathBuf>,
    /// Run configuration; the sampler is run afresh.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also run the Metropolis reference sampler and compare means.
    #[arg(long, requires = "config")]
    reference: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn emit(text: &str, output: Option<&Path>) -> gbql::Result<()> {
    match output {
        Some(path) => io::write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_fit(args: FitArgs) -> gbql::Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    config.data.normalize |= args.normalize;
    config.output.draws |= args.draws;
    if let Some(seed) = args.seed {
        config.sampler.seed = seed;
    }
    let output = args.output.or_else(|| config.output.path.as_ref().map(|p| base_dir(&args.config).join(p)));
    let result = commands::fit(&config, &base_dir(&args.config))?;
    emit(&result.to_json()?, output.as_deref())
}

fn run_baseline(args: BaselineArgs) -> gbql::Result<()> {
    let (mut config, base) = match &args.config {
        Some(path) => (RunConfig::load(path)?, base_dir(path)),
        None => {
            let data = DataConfig {
                unlabeled: args.unlabeled.clone().unwrap_or_default(),
                labeled: args.labeled.clone(),
                labels: args.labels.clone(),
                classifiers: None,
                normalize: false,
            };
            let config = RunConfig {
                data,
                prior: Default::default(),
                sampler: Default::default(),
                intervals: Default::default(),
                baselines: Vec::new(),
                output: Default::default(),
            };
            (config, PathBuf::new())
        }
    };
    config.data.normalize |= args.normalize;
    let report = commands::baseline(&config, &base, &args.method)?;
    emit(&io::to_json(&report)?, args.output.as_deref())
}

fn run_simulate(args: SimulateArgs) -> gbql::Result<()> {
    let mut config = match (&args.preset, &args.scenario) {
        (Some(name), _) => SimulationConfig::preset(name)?,
        (None, Some(path)) => io::from_toml::<SimulationConfig>(&io::read_text(path)?)?,
        (None, None) => return Err(Error::InvalidConfig("give --preset or --scenario".into())),
    };
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(c) = args.chains {
        config.sampler.chains = c;
    }
    if let Some(i) = args.iterations {
        config.sampler.iterations = i;
    }
    if let Some(b) = args.burn_in {
        config.sampler.burn_in = b;
    }
    config.sampler.validate()?;
    let report = commands::simulate(&config, &args.out_dir)?;
    match &report.result {
        gbql::simulation::StudyResult::Ccnaa(study) => {
            println!("{:<16} {:>10} {:>12} {:>10} {:>10}", "method", "replicates", "mean_ccnaa", "sd_ccnaa", "seconds");
            for s in &study.summaries {
                println!(
                    "{:<16} {:>10} {:>12.4} {:>10.4} {:>10.4}",
                    s.method, s.replicates, s.mean_ccnaa, s.sd_ccnaa, s.mean_seconds
                );
            }
        }
        gbql::simulation::StudyResult::Coverage(study) => {
            println!("{:<8} {:>8} {:>10} {:>10} {:>12} {:>12}", "param", "truth", "delta", "percentile", "delta_width", "pct_width");
            for c in &study.components {
                println!(
                    "p[{}]     {:>8.3} {:>10.3} {:>10.3} {:>12.4} {:>12.4}",
                    c.class + 1,
                    c.truth,
                    c.delta_coverage,
                    c.percentile_coverage,
                    c.delta_width,
                    c.percentile_width
                );
            }
            if study.delta_failures > 0 {
                log::warn!("delta intervals unavailable in {} replicate(s)", study.delta_failures);
            }
        }
    }
    Ok(())
}

fn run_diagnose(args: DiagnoseArgs) -> gbql::Result<()> {
    let report = match (&args.result, &args.config) {
        (Some(path), _) => commands::diagnose_result(&commands::FitResult::read(path)?)?,
        (None, Some(path)) => commands::diagnose_config(&RunConfig::load(path)?, &base_dir(path), args.reference)?,
        (None, None) => return Err(Error::InvalidConfig("give --result or --config".into())),
    };
    if !report.converged {
        log::warn!("max split R-hat {:.4} exceeds {}", report.max_rhat, report.threshold);
    }
    emit(&io::to_json(&report)?, args.output.as_deref())
}

fn error_json(e: &Error) -> serde_json::Value {
    let kind = if e.is_numerical() { "numerical" } else { "input" };
    match e {
        Error::Input { file, row, column, message } => serde_json::json!({
            "error": kind,
            "message": e.to_string(),
            "file": file.display().to_string(),
            "row": row,
            "column": column,
            "detail": message,
        }),
        _ => serde_json::json!({ "error": kind, "message": e.to_string() }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Baseline(a) => run_baseline(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Diagnose(a) => run_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
