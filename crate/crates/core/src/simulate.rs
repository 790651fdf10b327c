//! Simulated users, the "mental image game" runner, evaluation metrics and
//! the experiment presets.
//!
//! A game shows the initial random display as iteration 1. Whenever the
//! target appears on screen the game ends as approved-by-system with `T`
//! equal to the iteration index; a game that reaches `max_iters` displays
//! without success ends as abandoned with `T = max_iters`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{generate_catalog, GeneratorConfig, SimilarityProvider, SubsetView};
use crate::error::{Error, Result};
use crate::session::{engine_provider, Method, Session, SessionConfig, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKind {
    /// Always clicks the displayed item the system metric ranks closest to
    /// the target.
    Ideal,
    /// Clicks uniformly at random.
    Random,
    /// Tempered sampling from the system-metric click distribution, with an
    /// `epsilon` chance of a uniformly random click.
    Noisy,
}

impl UserKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UserKind::Ideal => "ideal",
            UserKind::Random => "random",
            UserKind::Noisy => "noisy",
        }
    }
}

impl fmt::Display for UserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(UserKind::Ideal),
            "random" => Ok(UserKind::Random),
            "noisy" => Ok(UserKind::Noisy),
            other => Err(Error::InvalidParameter(format!("unknown user kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub kind: UserKind,
    pub temperature: f64,
    pub epsilon: f64,
}

impl UserModel {
    pub fn ideal() -> Self {
        UserModel { kind: UserKind::Ideal, temperature: 0.5, epsilon: 0.1 }
    }

    pub fn random() -> Self {
        UserModel { kind: UserKind::Random, temperature: 0.5, epsilon: 0.1 }
    }

    pub fn noisy(temperature: f64, epsilon: f64) -> Result<Self> {
        let model = UserModel { kind: UserKind::Noisy, temperature, epsilon };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter("temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter("epsilon must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// One click on the session's current display for target `target`.
    pub fn click(&self, session: &Session, target: usize, rng: &mut impl Rng) -> Result<usize> {
        match self.kind {
            UserKind::Ideal => ideal_click(session, target),
            UserKind::Random => Ok(random_click(session, rng)),
            UserKind::Noisy => noisy_click(session, target, self, rng),
        }
    }
}

/// `P(X = i | Y = target)` for every displayed item `i` (display order):
/// the answer model mixed over the engine's channel weights for the target.
pub fn click_distribution(session: &Session, target: usize) -> Result<Vec<f64>> {
    let provider = session.provider();
    let q = provider.local_index(target).ok_or(Error::OutOfRange { what: "item", index: target, len: provider.len() })?;
    let shown: Vec<usize> = session.display().iter().map(|&id| provider.local_index(id).expect("displayed items belong to the subset")).collect();
    let weights = session.channel_weights_for(q);
    let mut probs = vec![0.0; shown.len()];
    for (j, &wj) in weights.iter().enumerate() {
        let row = provider.row(j, q);
        let denominator: f64 = shown.iter().map(|&l| row[l]).sum();
        for (pr, &i) in probs.iter_mut().zip(&shown) {
            *pr += wj * row[i] / denominator;
        }
    }
    Ok(probs)
}

/// Displayed item with the highest [`click_distribution`] value, ties to the
/// lowest id.
pub fn ideal_click(session: &Session, target: usize) -> Result<usize> {
    let probs = click_distribution(session, target)?;
    let display = session.display();
    let mut best = 0;
    for i in 1..display.len() {
        match probs[i].partial_cmp(&probs[best]) {
            Some(Ordering::Greater) => best = i,
            Some(Ordering::Equal) if display[i] < display[best] => best = i,
            _ => {}
        }
    }
    Ok(display[best])
}

pub fn random_click(session: &Session, rng: &mut impl Rng) -> usize {
    let display = session.display();
    display[rng.gen_range(0..display.len())]
}

/// Tempered click probabilities `P(i)^(1/T) / sum_l P(l)^(1/T)`, i.e. the
/// softmax of the log click probabilities at temperature `T`.
pub fn tempered_distribution(probs: &[f64], temperature: f64) -> Vec<f64> {
    let logs: Vec<f64> = probs.iter().map(|p| p.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn noisy_click(session: &Session, target: usize, model: &UserModel, rng: &mut impl Rng) -> Result<usize> {
    let display = session.display();
    if rng.gen::<f64>() < model.epsilon {
        return Ok(display[rng.gen_range(0..display.len())]);
    }
    let probs = tempered_distribution(&click_distribution(session, target)?, model.temperature);
    let mut r = rng.gen::<f64>();
    for (i, &p) in probs.iter().enumerate() {
        if r < p {
            return Ok(display[i]);
        }
        r -= p;
    }
    // rounding left r just above the last bucket
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(display.len() - 1);
    Ok(display[last])
}

/// One completed game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub target: usize,
    pub status: Status,
    /// `T`: number of displays shown until the game ended.
    pub iterations: usize,
    /// Feature weights in effect at each of the `T` displays.
    pub weight_trace: Vec<Vec<f64>>,
    pub method: Method,
    pub user: UserKind,
}

impl GameRecord {
    pub fn final_weights(&self) -> &[f64] {
        self.weight_trace.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// splitmix64 step: decorrelated per-game / per-stream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Plays one game against a precomputed engine provider.
pub fn run_game_with_engine(
    provider: &Arc<SimilarityProvider>,
    engine: &Arc<SimilarityProvider>,
    target: usize,
    user: &UserModel,
    config: &SessionConfig,
    seed: u64,
) -> Result<GameRecord> {
    run_game_observed(provider, engine, target, user, config, seed, &mut |_| {})
}

/// Like [`run_game_with_engine`], calling `observe` on the session after it
/// starts and after every click.
pub fn run_game_observed(
    provider: &Arc<SimilarityProvider>,
    engine: &Arc<SimilarityProvider>,
    target: usize,
    user: &UserModel,
    config: &SessionConfig,
    seed: u64,
    observe: &mut dyn FnMut(&Session),
) -> Result<GameRecord> {
    if provider.local_index(target).is_none() {
        return Err(Error::OutOfRange { what: "target", index: target, len: provider.len() });
    }
    user.validate()?;
    let mut session = Session::with_engine(provider.clone(), engine.clone(), config.clone(), seed)?;
    observe(&session);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7573_6572));
    let budget = config.max_iters.max(1);
    let mut trace = Vec::new();
    for iteration in 1..=budget {
        trace.push(session.weights());
        if session.display().contains(&target) {
            session.mark_approved_by_system()?;
            return Ok(record(target, Status::ApprovedBySystem, iteration, trace, config, user));
        }
        if iteration == budget {
            break;
        }
        let click = user.click(&session, target, &mut rng)?;
        session.submit_click(click)?;
        observe(&session);
    }
    session.mark_abandoned()?;
    Ok(record(target, Status::Abandoned, budget, trace, config, user))
}

fn record(target: usize, status: Status, iterations: usize, weight_trace: Vec<Vec<f64>>, config: &SessionConfig, user: &UserModel) -> GameRecord {
    GameRecord { target, status, iterations, weight_trace, method: config.method, user: user.kind }
}

/// Plays one game; `config.method` selects the inference scheme.
pub fn run_game(provider: &Arc<SimilarityProvider>, target: usize, user: &UserModel, config: &SessionConfig, seed: u64) -> Result<GameRecord> {
    let engine = engine_provider(provider, config.method);
    run_game_with_engine(provider, &engine, target, user, config, seed)
}

/// `(target, game seed)` pairs, targets drawn uniformly from the subset.
pub fn draw_games(provider: &SimilarityProvider, games: usize, seed: u64) -> Vec<(usize, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..games)
        .map(|i| (provider.ids()[rng.gen_range(0..provider.len())], derive_seed(seed, i as u64)))
        .collect()
}

#[cfg(feature = "parallel")]
fn map_games<F>(games: &[(usize, u64)], f: F) -> Result<Vec<GameRecord>>
where
    F: Fn(usize, u64) -> Result<GameRecord> + Sync + Send,
{
    use rayon::prelude::*;
    games.par_iter().map(|&(t, s)| f(t, s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_games<F>(games: &[(usize, u64)], f: F) -> Result<Vec<GameRecord>>
where
    F: Fn(usize, u64) -> Result<GameRecord>,
{
    games.iter().map(|&(t, s)| f(t, s)).collect()
}

/// Runs every `(target, seed)` game; results keep the input order.
pub fn run_games(provider: &Arc<SimilarityProvider>, games: &[(usize, u64)], user: &UserModel, config: &SessionConfig) -> Result<Vec<GameRecord>> {
    let engine = engine_provider(provider, config.method);
    map_games(games, |target, seed| run_game_with_engine(provider, &engine, target, user, config, seed))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub games: usize,
    pub approved_by_system: usize,
    pub approved_by_user: usize,
    pub abandoned: usize,
    /// `(AS + AU) / games`.
    pub success_rate: f64,
    /// `E(T)` over successful games (`None` without successes).
    pub mean_iterations: Option<f64>,
    /// Mean `T` over all games, abandoned games counting their full budget.
    pub mean_iterations_all: f64,
    /// `P(t <= T)` over successful games for `t = 1..=max T` (`cumulative[t - 1]`).
    pub cumulative: Vec<f64>,
    /// Mean final weight vector over all games.
    pub mean_weights: Vec<f64>,
}

fn record_order(a: &GameRecord, b: &GameRecord) -> Ordering {
    let bits = |r: &GameRecord| r.final_weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
    (a.method, a.user, a.target, a.iterations, a.status.as_str())
        .cmp(&(b.method, b.user, b.target, b.iterations, b.status.as_str()))
        .then_with(|| bits(a).cmp(&bits(b)))
}

/// Aggregates game records. Records are put in a canonical order first, so
/// the report does not depend on input order.
pub fn summarize(records: &[GameRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut sorted: Vec<&GameRecord> = records.iter().collect();
    sorted.sort_by(|a, b| record_order(a, b));

    let count = |s: Status| sorted.iter().filter(|r| r.status == s).count();
    let (as_count, au_count, ga_count) = (count(Status::ApprovedBySystem), count(Status::ApprovedByUser), count(Status::Abandoned));
    let games = sorted.len();
    let successes: Vec<usize> = sorted.iter().filter(|r| r.status.is_success()).map(|r| r.iterations).collect();

    let mean_iterations = (!successes.is_empty()).then(|| successes.iter().sum::<usize>() as f64 / successes.len() as f64);
    let mean_iterations_all = sorted.iter().map(|r| r.iterations).sum::<usize>() as f64 / games as f64;
    let max_t = successes.iter().copied().max().unwrap_or(0);
    let cumulative = (1..=max_t)
        .map(|t| successes.iter().filter(|&&s| s <= t).count() as f64 / successes.len() as f64)
        .collect();

    let width = sorted.iter().map(|r| r.final_weights().len()).max().unwrap_or(0);
    let mut mean_weights = vec![0.0; width];
    for r in &sorted {
        for (acc, w) in mean_weights.iter_mut().zip(r.final_weights()) {
            *acc += w;
        }
    }
    mean_weights.iter_mut().for_each(|w| *w /= games as f64);

    Ok(MetricsReport {
        games,
        approved_by_system: as_count,
        approved_by_user: au_count,
        abandoned: ga_count,
        success_rate: (as_count + au_count) as f64 / games as f64,
        mean_iterations,
        mean_iterations_all,
        cumulative,
        mean_weights,
    })
}

/// Least-squares line `y = slope * x + intercept` with its R².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `None` with fewer than two distinct `x` values.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len() as f64;
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r_squared })
}

// ---------------------------------------------------------------------------
// Experiment presets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub records: Vec<GameRecord>,
    pub report: MetricsReport,
}

/// Runs the same `(target, seed)` games under each method.
pub fn compare_methods(
    provider: &Arc<SimilarityProvider>,
    methods: &[Method],
    games: usize,
    user: &UserModel,
    config: &SessionConfig,
    seed: u64,
) -> Result<Vec<MethodOutcome>> {
    let plan = draw_games(provider, games, seed);
    methods
        .iter()
        .map(|&method| {
            let records = run_games(provider, &plan, user, &config.clone().with_method(method))?;
            let report = summarize(&records)?;
            Ok(MethodOutcome { method, records, report })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub items: usize,
    pub records: Vec<GameRecord>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Fit of `E(T)` against `ln N`.
    pub fit: Option<LinearFit>,
}

/// Generates one synthetic catalog per size from `template` (its `n` is
/// replaced) and measures `E(T)`.
pub fn scaling_experiment(
    sizes: &[usize],
    games_per_size: usize,
    user: &UserModel,
    config: &SessionConfig,
    template: &GeneratorConfig,
    seed: u64,
) -> Result<ScalingReport> {
    let mut rows = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        if size < config.n_display {
            return Err(Error::SubsetTooSmall { available: size, required: config.n_display });
        }
        let generator = GeneratorConfig { n: size, seed: derive_seed(template.seed, i as u64), ..template.clone() };
        let catalog = generate_catalog(&generator)?;
        let provider = Arc::new(SimilarityProvider::new(&catalog, &SubsetView::all(&catalog))?);
        let plan = draw_games(&provider, games_per_size, derive_seed(seed, i as u64));
        let records = run_games(&provider, &plan, user, config)?;
        let report = summarize(&records)?;
        rows.push(ScalingRow { items: size, records, report });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.items as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.report.mean_iterations.unwrap_or(f64::NAN)).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(ScalingReport { rows, fit })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightReport {
    /// Mean final weight per channel under re-weighting.
    pub mean_weights: Vec<f64>,
    /// `E(T)` with each channel used alone.
    pub solo_mean_iterations: Vec<f64>,
    pub records: Vec<GameRecord>,
    pub solo_records: Vec<Vec<GameRecord>>,
}

/// Average learned weights, plus the discriminative power of each channel on
/// its own (same targets and seeds).
pub fn weight_experiment(provider: &Arc<SimilarityProvider>, games: usize, user: &UserModel, config: &SessionConfig, seed: u64) -> Result<WeightReport> {
    let config = config.clone().with_method(Method::Reweight);
    let plan = draw_games(provider, games, seed);
    let records = run_games(provider, &plan, user, &config)?;
    let mean_weights = summarize(&records)?.mean_weights;
    let mut solo_mean_iterations = Vec::with_capacity(provider.channels());
    let mut solo_records = Vec::with_capacity(provider.channels());
    for j in 0..provider.channels() {
        let solo = Arc::new(provider.select_channels(&[j])?);
        let recs = run_games(&solo, &plan, user, &config)?;
        solo_mean_iterations.push(summarize(&recs)?.mean_iterations_all);
        solo_records.push(recs);
    }
    Ok(WeightReport { mean_weights, solo_mean_iterations, records, solo_records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConsistency {
    pub target: usize,
    pub iterations: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

/// Fixes each target and varies only the session seed (hence the initial
/// display).
pub fn consistency_experiment(
    provider: &Arc<SimilarityProvider>,
    targets: &[usize],
    sessions_per_target: usize,
    user: &UserModel,
    config: &SessionConfig,
    seed: u64,
) -> Result<Vec<TargetConsistency>> {
    let plan: Vec<(usize, u64)> = targets
        .iter()
        .enumerate()
        .flat_map(|(ti, &t)| (0..sessions_per_target).map(move |s| (t, derive_seed(seed, (ti * sessions_per_target + s) as u64))))
        .collect();
    let records = run_games(provider, &plan, user, config)?;
    Ok(records
        .chunks(sessions_per_target.max(1))
        .map(|chunk| {
            let iterations: Vec<usize> = chunk.iter().map(|r| r.iterations).collect();
            let (mean, std_dev) = mean_std(&iterations);
            TargetConsistency { target: chunk[0].target, iterations, mean, std_dev }
        })
        .collect())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[usize]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<usize>() as f64 / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `count` distinct targets drawn from the subset.
pub fn draw_targets(provider: &SimilarityProvider, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, provider.len(), count.min(provider.len())).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|k| provider.ids()[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::generate_catalog;

    fn provider(n: usize, m: usize, seed: u64) -> Arc<SimilarityProvider> {
        let c = generate_catalog(&GeneratorConfig::new(n, m, &[3], seed)).unwrap();
        Arc::new(SimilarityProvider::new(&c, &SubsetView::all(&c)).unwrap())
    }

    fn game(target: usize, status: Status, t: usize, w: Vec<f64>) -> GameRecord {
        GameRecord { target, status, iterations: t, weight_trace: vec![w; t], method: Method::Reweight, user: UserKind::Ideal }
    }

    #[test]
    fn success_rate_counts_user_approvals() {
        let mut records = Vec::new();
        records.extend((0..192).map(|i| game(i, Status::ApprovedBySystem, 5, vec![1.0])));
        records.extend((0..59).map(|i| game(i, Status::ApprovedByUser, 7, vec![1.0])));
        records.extend((0..61).map(|i| game(i, Status::Abandoned, 50, vec![1.0])));
        let r = summarize(&records).unwrap();
        assert_eq!(format!("{:.2}%", 100.0 * r.success_rate), "80.45%");
    }

    #[test]
    fn single_game_summary() {
        let r = summarize(&[game(3, Status::ApprovedBySystem, 5, vec![0.5, 0.5])]).unwrap();
        assert_eq!(r.mean_iterations, Some(5.0));
        assert_eq!(r.cumulative, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(r.mean_weights, vec![0.5, 0.5]);
        assert!(matches!(summarize(&[]), Err(Error::NoRecords)));
    }

    #[test]
    fn cumulative_is_a_cdf() {
        let records: Vec<GameRecord> = (0..30).map(|i| game(i, Status::ApprovedBySystem, 1 + (i * 7) % 11, vec![1.0])).collect();
        let r = summarize(&records).unwrap();
        assert!(r.cumulative.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*r.cumulative.last().unwrap(), 1.0);
    }

    #[test]
    fn immediate_hit_and_full_display() {
        let p = provider(40, 2, 3);
        let config = SessionConfig::default();
        let s = Session::new(p.clone(), config.clone(), 11).unwrap();
        let target = s.display()[4];
        let r = run_game(&p, target, &UserModel::ideal(), &config, 11).unwrap();
        assert_eq!((r.status, r.iterations), (Status::ApprovedBySystem, 1));
        assert_eq!(r.weight_trace.len(), 1);

        let small = provider(8, 2, 3);
        for target in 0..8 {
            let r = run_game(&small, target, &UserModel::random(), &config, target as u64).unwrap();
            assert_eq!(r.iterations, 1);
        }
        assert!(run_game(&small, 99, &UserModel::ideal(), &config, 0).is_err());
    }

    #[test]
    fn ideal_click_single_channel_is_nearest() {
        let p = provider(80, 1, 5);
        let s = Session::new(p.clone(), SessionConfig::default(), 5).unwrap();
        let target = (0..80).find(|t| !s.display().contains(t)).unwrap();
        let expect = *s.display().iter().max_by(|&&a, &&b| p.sim(0, a, target).total_cmp(&p.sim(0, b, target)).then(b.cmp(&a))).unwrap();
        assert_eq!(ideal_click(&s, target).unwrap(), expect);
    }

    #[test]
    fn ideal_click_ties_go_to_lowest_id() {
        let n = 10;
        let provider = Arc::new(SimilarityProvider::from_matrices((0..n).collect(), vec![vec![1.0; n * n]]).unwrap());
        let s = Session::new(provider, SessionConfig::default(), 1).unwrap();
        let target = (0..n).find(|t| !s.display().contains(t)).unwrap();
        assert_eq!(ideal_click(&s, target).unwrap(), *s.display().iter().min().unwrap());
    }

    #[test]
    fn tempered_distribution_limits() {
        let probs = [0.5, 0.3, 0.2];
        assert_eq!(tempered_distribution(&probs, 1.0).iter().map(|v| (v * 1e12).round()).collect::<Vec<_>>(), vec![5e11, 3e11, 2e11]);
        let cold = tempered_distribution(&probs, 1e-6);
        assert!((cold[0] - 1.0).abs() < 1e-12);
        let sq = tempered_distribution(&probs, 0.5);
        assert!((sq[0] - 0.25 / 0.38).abs() < 1e-12);
    }

    #[test]
    fn user_model_validation() {
        assert!(UserModel::noisy(0.0, 0.1).is_err());
        assert!(UserModel::noisy(0.5, 1.0).is_err());
        assert!(UserModel::noisy(0.5, 0.0).is_ok());
    }

    #[test]
    fn linear_fit_exact_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn scaling_at_display_size_is_one() {
        let report = scaling_experiment(&[8], 5, &UserModel::ideal(), &SessionConfig::default(), &GeneratorConfig::new(8, 2, &[2], 1), 3).unwrap();
        assert_eq!(report.rows[0].report.mean_iterations, Some(1.0));
        assert!(report.fit.is_none());
    }

    #[test]
    fn one_session_per_target_has_zero_spread() {
        let p = provider(60, 2, 8);
        let targets = draw_targets(&p, 3, 1);
        let out = consistency_experiment(&p, &targets, 1, &UserModel::ideal(), &SessionConfig::default(), 2).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c.std_dev == 0.0));
    }
}
