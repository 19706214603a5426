mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use expvolt::harness::Variant;

use config::{BackendKind, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "expvolt", version, about = "Day-ahead voltage control driven by stored experiences")]
struct Cli {
    /// Worker threads (default: available processors, 1 for `train`).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of daily load and PV profiles.
    GenData(GenDataArgs),
    /// Seed an experience store with rule-based decisions.
    Bootstrap(RunArgs),
    /// Train stores and write test curves.
    Train(RunArgs),
    /// Evaluate a store on the held-out days.
    Eval(RunArgs),
    /// Evaluate the full method and its four ablations.
    Ablate(RunArgs),
    /// Print one stored experience.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 120, value_parser = clap::value_parser!(u64).range(1..))]
    days: u64,
    /// Network document (default: bundled 141-bus feeder).
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value = "dataset.json")]
    out: PathBuf,
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    full_store: Option<PathBuf>,
    #[arg(long)]
    nor_store: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    episodes_per_iteration: Option<usize>,
    /// Store capacity.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_p: Option<usize>,
    #[arg(long)]
    k_s: Option<usize>,
    /// Modification rounds per training episode.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Days held out for testing; `bootstrap` skips them.
    #[arg(long)]
    test_days: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    bootstrap_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    store: PathBuf,
    /// Experience id, e.g. `e000003` or `3`.
    #[arg(long)]
    id: String,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

impl RunArgs {
    /// The config file (or defaults) with every given flag applied.
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v.into(); })*
            };
        }
        set!(
            network => network, dataset => dataset, store => store, full_store => full_store,
            nor_store => nor_store, out => out, templates => templates, transcript => transcript,
        );
        set!(
            variant => variant, seeds => seeds, iterations => iterations,
            episodes_per_iteration => episodes_per_iteration, k => k, k_p => k_p, k_s => k_s,
            rounds => rounds, backend => backend, sigma => noise_sigma, test_days => test_days,
            split_seed => split_seed, bootstrap_seed => bootstrap_seed,
        );
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    // Training defaults to one worker; its results do not depend on the count.
    let jobs = match (&cli.command, cli.jobs) {
        (_, Some(0)) => return Err(CliError::Usage("--jobs must be positive".into())),
        (Command::Train(_), None) => Some(1),
        (_, jobs) => jobs,
    };
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data(a.seed, a.days as usize, a.network.as_deref(), &a.out),
        Command::Bootstrap(a) => commands::bootstrap(&a.resolve()?),
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Eval(a) => commands::eval(&a.resolve()?),
        Command::Ablate(a) => commands::ablate(&a.resolve()?),
        Command::Inspect(a) => commands::inspect(&a.store, &a.id, matches!(a.format, Format::Json)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
