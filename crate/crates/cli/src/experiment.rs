//! Experiment presets and their CSV/JSON exports.
//!
//! Every preset writes four files into the output directory:
//!
//! * `games.csv`: one row per game,
//!   `condition,game,method,user,target,seed,status,iterations,weights`
//! * `summary.csv`: one row per condition,
//!   `condition,games,approved_by_system,approved_by_user,abandoned,success_rate,mean_iterations,mean_iterations_all,std_iterations_all,mean_weights`
//! * `cdf.csv`: `condition,t,p` with `p = P(T <= t)` over successful games
//! * `summary.json`: the settings used plus every summary row
//!
//! Weight vectors are `;`-separated. A condition is the method name
//! (`compare-methods`), the catalog size (`scaling`), `all` or a channel name
//! (`weights`), or `target-<id>` (`consistency`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mindseek::catalog::{generate_catalog, Catalog, ChannelSpec, GeneratorConfig, SimilarityProvider};
use mindseek::simulate::{
    compare_methods, consistency_experiment, derive_seed, draw_targets, mean_std, scaling_experiment, summarize, weight_experiment, LinearFit,
};
use mindseek::{GameRecord, Method, MetricsReport, SessionConfig, UserKind, UserModel};
use serde::{Deserialize, Serialize};

use crate::store::join_floats;

pub const GAME_COLUMNS: [&str; 9] = ["condition", "game", "method", "user", "target", "seed", "status", "iterations", "weights"];
pub const SUMMARY_COLUMNS: [&str; 10] = [
    "condition",
    "games",
    "approved_by_system",
    "approved_by_user",
    "abandoned",
    "success_rate",
    "mean_iterations",
    "mean_iterations_all",
    "std_iterations_all",
    "mean_weights",
];
pub const CDF_COLUMNS: [&str; 3] = ["condition", "t", "p"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CompareMethods,
    Scaling,
    Weights,
    Consistency,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::CompareMethods, Preset::Scaling, Preset::Weights, Preset::Consistency];

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::CompareMethods => "compare-methods",
            Preset::Scaling => "scaling",
            Preset::Weights => "weights",
            Preset::Consistency => "consistency",
        }
    }

    /// Catalog generated when no manifest is given.
    pub fn default_generator(&self, seed: u64) -> GeneratorConfig {
        match self {
            Preset::CompareMethods => {
                let mut channels = vec![ChannelSpec::new(4, 8, 3.0)];
                channels.extend((0..3).map(|_| ChannelSpec::new(4, 32, 1.0)));
                GeneratorConfig { n: 1000, channels, seed }
            }
            Preset::Scaling => GeneratorConfig::new(0, 5, &[4], seed),
            Preset::Weights => GeneratorConfig {
                n: 500,
                channels: vec![ChannelSpec::new(4, 32, 1.0), ChannelSpec::new(4, 8, 3.0), ChannelSpec::new(4, 32, 1.0)],
                seed,
            },
            Preset::Consistency => GeneratorConfig::new(1000, 3, &[4], seed),
        }
    }

    pub fn default_user(&self) -> UserKind {
        match self {
            Preset::CompareMethods => UserKind::Noisy,
            _ => UserKind::Ideal,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.as_str() == s).with_context(|| format!("unknown preset {s:?}"))
    }
}

/// Experiment parameters, read from TOML and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Manifest to run on; a synthetic catalog is generated when unset.
    pub catalog: Option<PathBuf>,
    pub tags: BTreeMap<String, String>,
    pub generator: Option<GeneratorConfig>,
    pub seed: u64,
    pub games: usize,
    pub sizes: Vec<usize>,
    pub n_display: usize,
    pub max_iters: usize,
    pub method: Method,
    pub user: Option<UserKind>,
    pub temperature: f64,
    pub epsilon: f64,
    pub targets: usize,
    pub sessions_per_target: usize,
    /// Thread count; results do not depend on it.
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            catalog: None,
            tags: BTreeMap::new(),
            generator: None,
            seed: 1,
            games: 124,
            sizes: vec![250, 500, 1000, 2000],
            n_display: 8,
            max_iters: 50,
            method: Method::Reweight,
            user: None,
            temperature: 0.5,
            epsilon: 0.1,
            targets: 10,
            sessions_per_target: 5,
            workers: None,
        }
    }
}

impl ExperimentSettings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid experiment config {}", path.display()))
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig { n_display: self.n_display, max_iters: self.max_iters, method: self.method, ..SessionConfig::default() }
    }

    pub fn user_model(&self, preset: Preset) -> Result<UserModel> {
        let user = match self.user.unwrap_or(preset.default_user()) {
            UserKind::Ideal => UserModel::ideal(),
            UserKind::Random => UserModel::random(),
            UserKind::Noisy => UserModel::noisy(self.temperature, self.epsilon)?,
        };
        Ok(user)
    }

    fn validate(&self, preset: Preset) -> Result<()> {
        anyhow::ensure!(self.games > 0, "games must be positive");
        anyhow::ensure!(self.n_display > 0 && self.max_iters > 0, "n_display and max_iters must be positive");
        if preset == Preset::Scaling {
            anyhow::ensure!(!self.sizes.is_empty(), "scaling needs at least one size");
            anyhow::ensure!(self.catalog.is_none(), "scaling generates its own catalogs; drop --catalog");
        }
        if preset == Preset::Consistency {
            anyhow::ensure!(self.targets > 0 && self.sessions_per_target > 0, "targets and sessions_per_target must be positive");
        }
        Ok(())
    }

    fn generator(&self, preset: Preset) -> GeneratorConfig {
        self.generator.clone().unwrap_or_else(|| preset.default_generator(derive_seed(self.seed, 0)))
    }

    fn provider(&self, preset: Preset) -> Result<Arc<SimilarityProvider>> {
        let catalog = match &self.catalog {
            Some(path) => Catalog::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => generate_catalog(&self.generator(preset))?,
        };
        let subset = catalog.filter(&self.tags)?;
        Ok(Arc::new(SimilarityProvider::new(&catalog, &subset)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRow {
    pub condition: String,
    pub seed: Option<u64>,
    pub record: GameRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub std_iterations_all: f64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub preset: Preset,
    pub settings: ExperimentSettings,
    pub summary: Vec<SummaryRow>,
    /// `E(T)` against `ln N` for the scaling preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<LinearFit>,
    #[serde(skip)]
    pub games: Vec<GameRow>,
}

fn summary_row(condition: String, records: &[GameRecord]) -> Result<SummaryRow> {
    let iterations: Vec<usize> = records.iter().map(|r| r.iterations).collect();
    let (_, std_iterations_all) = mean_std(&iterations);
    Ok(SummaryRow { condition, std_iterations_all, report: summarize(records)? })
}

fn rows(condition: &str, records: &[GameRecord], seeds: Option<&[u64]>) -> Vec<GameRow> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| GameRow { condition: condition.to_string(), seed: seeds.map(|s| s[i]), record: r.clone() })
        .collect()
}

/// Runs `preset`, on a dedicated pool when `settings.workers` is set.
pub fn run(preset: Preset, settings: &ExperimentSettings) -> Result<ExperimentOutput> {
    settings.validate(preset)?;
    match settings.workers {
        Some(workers) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
            pool.install(|| run_inline(preset, settings))
        }
        None => run_inline(preset, settings),
    }
}

fn run_inline(preset: Preset, settings: &ExperimentSettings) -> Result<ExperimentOutput> {
    let user = settings.user_model(preset)?;
    let config = settings.session_config();
    let seed = settings.seed;
    let mut games = Vec::new();
    let mut summary = Vec::new();
    let mut fit = None;
    match preset {
        Preset::CompareMethods => {
            let provider = settings.provider(preset)?;
            for outcome in compare_methods(&provider, &Method::ALL, settings.games, &user, &config, seed)? {
                let condition = outcome.method.to_string();
                games.extend(rows(&condition, &outcome.records, None));
                summary.push(summary_row(condition, &outcome.records)?);
            }
        }
        Preset::Scaling => {
            let report = scaling_experiment(&settings.sizes, settings.games, &user, &config, &settings.generator(preset), seed)?;
            for row in &report.rows {
                let condition = row.items.to_string();
                games.extend(rows(&condition, &row.records, None));
                summary.push(summary_row(condition, &row.records)?);
            }
            fit = report.fit;
        }
        Preset::Weights => {
            let provider = settings.provider(preset)?;
            let report = weight_experiment(&provider, settings.games, &user, &config, seed)?;
            games.extend(rows("all", &report.records, None));
            summary.push(summary_row("all".into(), &report.records)?);
            for (name, records) in provider.channel_names().iter().zip(&report.solo_records) {
                games.extend(rows(name, records, None));
                summary.push(summary_row(name.clone(), records)?);
            }
        }
        Preset::Consistency => {
            let provider = settings.provider(preset)?;
            let targets = draw_targets(&provider, settings.targets, derive_seed(seed, 1));
            let per_target = settings.sessions_per_target;
            let study = consistency_experiment(&provider, &targets, per_target, &user, &config, seed)?;
            // the study only reports iteration counts, so rerun for full records
            let plan: Vec<(usize, u64)> = targets
                .iter()
                .enumerate()
                .flat_map(|(ti, &t)| (0..per_target).map(move |s| (t, derive_seed(seed, (ti * per_target + s) as u64))))
                .collect();
            let records = mindseek::simulate::run_games(&provider, &plan, &user, &config)?;
            for ((row, chunk), seeds) in study.iter().zip(records.chunks(per_target)).zip(plan.chunks(per_target)) {
                let got: Vec<usize> = chunk.iter().map(|r| r.iterations).collect();
                if got != row.iterations {
                    bail!("consistency rerun diverged for target {}", row.target);
                }
                let condition = format!("target-{}", row.target);
                let seeds: Vec<u64> = seeds.iter().map(|&(_, s)| s).collect();
                games.extend(rows(&condition, chunk, Some(&seeds)));
                summary.push(summary_row(condition, chunk)?);
            }
        }
    }
    Ok(ExperimentOutput { preset, settings: settings.clone(), summary, fit, games })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

/// Writes `games.csv`, `summary.csv`, `cdf.csv` and `summary.json` into
/// `dir` and returns their paths.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let paths: Vec<PathBuf> = ["games.csv", "summary.csv", "cdf.csv", "summary.json"].iter().map(|f| dir.join(f)).collect();

    let mut w = csv_writer(&paths[0])?;
    w.write_record(GAME_COLUMNS)?;
    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    for row in &output.games {
        let game = counters.entry(row.condition.as_str()).or_default();
        let r = &row.record;
        w.write_record([
            row.condition.clone(),
            game.to_string(),
            r.method.to_string(),
            r.user.to_string(),
            r.target.to_string(),
            row.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.status.to_string(),
            r.iterations.to_string(),
            join_floats(r.final_weights()),
        ])?;
        *game += 1;
    }
    w.flush()?;

    let mut w = csv_writer(&paths[1])?;
    w.write_record(SUMMARY_COLUMNS)?;
    for row in &output.summary {
        let m = &row.report;
        w.write_record([
            row.condition.clone(),
            m.games.to_string(),
            m.approved_by_system.to_string(),
            m.approved_by_user.to_string(),
            m.abandoned.to_string(),
            m.success_rate.to_string(),
            m.mean_iterations.map(|v| v.to_string()).unwrap_or_default(),
            m.mean_iterations_all.to_string(),
            row.std_iterations_all.to_string(),
            join_floats(&m.mean_weights),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&paths[2])?;
    w.write_record(CDF_COLUMNS)?;
    for row in &output.summary {
        for (t, p) in row.report.cumulative.iter().enumerate() {
            w.write_record([row.condition.clone(), (t + 1).to_string(), p.to_string()])?;
        }
    }
    w.flush()?;

    let mut json = serde_json::to_string_pretty(output)?;
    json.push('\n');
    std::fs::write(&paths[3], json).with_context(|| format!("writing {}", paths[3].display()))?;
    Ok(paths)
}
