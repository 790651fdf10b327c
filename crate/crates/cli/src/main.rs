use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mindseek::{Method, UserKind};
use mindseek_cli::config::ServiceConfig;
use mindseek_cli::experiment::{self, ExperimentSettings, Preset};
use mindseek_cli::{describe, generate_to, generator_config};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "mindseek", version, about = "Query-free target search: catalogs, simulations and the session service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic catalog manifest (JSONL, one item per line).
    Generate(GenerateArgs),
    /// Load a manifest and print its summary.
    Inspect {
        catalog: PathBuf,
    },
    /// Run an experiment preset and export its tables.
    #[command(after_help = EXPERIMENT_HELP)]
    Experiment(ExperimentArgs),
    /// Serve the session API until interrupted.
    Serve {
        /// TOML service config; MINDSEEK_PORT and MINDSEEK_CATALOG override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

const EXPERIMENT_HELP: &str = "\
Outputs (in --out):
  games.csv     condition,game,method,user,target,seed,status,iterations,weights
  summary.csv   condition,games,approved_by_system,approved_by_user,abandoned,success_rate,mean_iterations,mean_iterations_all,std_iterations_all,mean_weights
  cdf.csv       condition,t,p
  summary.json  settings and summary rows

Weight vectors are ';'-separated. Flags override values from --config.";

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Number of feature channels.
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Channel dimensions, cycled across channels.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    dims: Vec<usize>,
    /// Clusters per channel, cycled across channels (default 4, 8, 16, ...).
    #[arg(long, value_delimiter = ',')]
    clusters: Vec<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "catalog.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    preset: Preset,
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Games per condition (default 124).
    #[arg(long)]
    games: Option<usize>,
    /// Catalog sizes for the scaling preset (default 250,500,1000,2000).
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    n_display: Option<usize>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    user: Option<UserKind>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl ExperimentArgs {
    fn settings(&self) -> Result<ExperimentSettings> {
        let mut s = match &self.config {
            Some(path) => ExperimentSettings::load(path)?,
            None => ExperimentSettings::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => { $(if let Some(v) = self.$field.clone() { s.$field = v; })* };
        }
        apply!(seed, games, sizes, n_display, method, temperature, epsilon, max_iters);
        if self.catalog.is_some() {
            s.catalog = self.catalog.clone();
        }
        if self.user.is_some() {
            s.user = self.user;
        }
        if self.workers.is_some() {
            s.workers = self.workers;
        }
        Ok(s)
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    tracing::info!("shutdown requested");
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"))).with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Generate(a) => {
            let config = generator_config(a.n, a.m, &a.dims, &a.clusters, a.separation, a.seed);
            let catalog = generate_to(&config, &a.out)?;
            println!("wrote {}: {}", a.out.display(), describe(&catalog));
        }
        Command::Inspect { catalog } => {
            let catalog = mindseek::Catalog::load(&catalog)?;
            println!("{}", describe(&catalog));
        }
        Command::Experiment(a) => {
            let settings = a.settings()?;
            let output = experiment::run(a.preset, &settings)?;
            for row in &output.summary {
                let m = &row.report;
                let e_t = m.mean_iterations.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
                println!("{:<14} games {:>4}  success {:>6.1}%  E(T) {e_t:>6}  mean T {:>6.2}", row.condition, m.games, 100.0 * m.success_rate, m.mean_iterations_all);
            }
            if let Some(fit) = output.fit {
                println!("E(T) = {:.3} ln N + {:.3} (R^2 {:.3})", fit.slope, fit.intercept, fit.r_squared);
            }
            for path in experiment::write_outputs(&output, &a.out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Serve { config } => {
            let config = ServiceConfig::load(config.as_deref())?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(mindseek_cli::service::serve(config, shutdown_signal()))?;
        }
    }
    Ok(())
}
