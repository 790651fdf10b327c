//! One retrieval session: initial random display, click intake, model
//! update, next display, and terminal status bookkeeping.
//!
//! The session never learns the target. Detecting that the target has been
//! displayed is the caller's job (simulation harness or HTTP service), which
//! then calls [`Session::mark_approved_by_system`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{solve_posteriors, AuxiliaryState, Feedback, Posteriors, SolverOptions};
use crate::catalog::{Catalog, SimilarityProvider};
use crate::display::{partition_masses, select_display, DisplayOptions, DisplaySet};
use crate::error::{Error, Result};

/// How feedback is turned into beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Joint target and channel-weight inference.
    #[default]
    Reweight,
    /// Single tracker on the unweighted mean of all channel similarities.
    FixedWeight,
    /// One independent tracker per channel, averaged for display ranking.
    LateFusion,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Reweight, Method::FixedWeight, Method::LateFusion];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Reweight => "reweight",
            Method::FixedWeight => "fixed_weight",
            Method::LateFusion => "late_fusion",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "reweight" => Ok(Method::Reweight),
            "fixed_weight" | "fixed" => Ok(Method::FixedWeight),
            "late_fusion" => Ok(Method::LateFusion),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    ApprovedBySystem,
    ApprovedByUser,
    Abandoned,
}

impl Status {
    pub fn is_terminal(&self) -> bool {
        *self != Status::Running
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Status::ApprovedBySystem | Status::ApprovedByUser)
    }

    /// AS / AU / GA, or "running".
    pub fn code(&self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::ApprovedBySystem => "AS",
            Status::ApprovedByUser => "AU",
            Status::Abandoned => "GA",
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::ApprovedBySystem => "approved_by_system",
            Status::ApprovedByUser => "approved_by_user",
            Status::Abandoned => "abandoned",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "running" => Ok(Status::Running),
            "approved_by_system" | "AS" => Ok(Status::ApprovedBySystem),
            "approved_by_user" | "AU" => Ok(Status::ApprovedByUser),
            "abandoned" | "GA" => Ok(Status::Abandoned),
            other => Err(Error::InvalidParameter(format!("unknown status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub n_display: usize,
    /// Iteration budget after which harnesses record the game as abandoned.
    pub max_iters: usize,
    pub method: Method,
    pub candidate_pool: usize,
    /// Keep items shown in the previous round (other than the click) off the
    /// next display.
    pub exclude_previous: bool,
    pub refine: bool,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            n_display: 8,
            max_iters: 50,
            method: Method::Reweight,
            candidate_pool: 64,
            exclude_previous: true,
            refine: true,
            tolerance: 1e-12,
            max_sweeps: 10_000,
        }
    }
}

impl SessionConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions { tolerance: self.tolerance, max_sweeps: self.max_sweeps }
    }

    fn display(&self) -> DisplayOptions {
        DisplayOptions { pool: self.candidate_pool, refine: self.refine }
    }
}

/// Everything needed to rebuild a session by replay: the probability tables
/// are recomputed, not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub config: SessionConfig,
    pub seed: u64,
    /// Rounds of feedback in catalog ids.
    pub history: Vec<Feedback>,
    pub status: Status,
}

/// The similarity provider a method runs its tracker on.
pub fn engine_provider(provider: &Arc<SimilarityProvider>, method: Method) -> Arc<SimilarityProvider> {
    match method {
        Method::FixedWeight if provider.channels() > 1 => Arc::new(provider.aggregate()),
        _ => provider.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    provider: Arc<SimilarityProvider>,
    engine: Arc<SimilarityProvider>,
    config: SessionConfig,
    seed: u64,
    aux: AuxiliaryState,
    posteriors: Posteriors,
    history: Vec<Feedback>,
    display: DisplaySet,
    status: Status,
}

impl Session {
    /// Filters the catalog and opens a session over the matching items.
    pub fn start(catalog: &Catalog, tag_query: &BTreeMap<String, String>, config: SessionConfig, seed: u64) -> Result<Self> {
        let subset = catalog.filter(tag_query)?;
        if subset.len() < config.n_display {
            return Err(Error::SubsetTooSmall { available: subset.len(), required: config.n_display });
        }
        let provider = Arc::new(SimilarityProvider::new(catalog, &subset)?);
        Self::new(provider, config, seed)
    }

    pub fn new(provider: Arc<SimilarityProvider>, config: SessionConfig, seed: u64) -> Result<Self> {
        let engine = engine_provider(&provider, config.method);
        Self::with_engine(provider, engine, config, seed)
    }

    /// Like [`Session::new`] with a precomputed [`engine_provider`].
    pub fn with_engine(
        provider: Arc<SimilarityProvider>,
        engine: Arc<SimilarityProvider>,
        config: SessionConfig,
        seed: u64,
    ) -> Result<Self> {
        let n = config.n_display;
        if n == 0 {
            return Err(Error::InvalidParameter("display size must be positive".into()));
        }
        if provider.len() < n {
            return Err(Error::SubsetTooSmall { available: provider.len(), required: n });
        }
        if engine.len() != provider.len() {
            return Err(Error::InvalidParameter("engine provider covers a different subset".into()));
        }
        let items = provider.len();
        let aux = AuxiliaryState::uniform(items, engine.channels());
        let posteriors = Posteriors::uniform(items, engine.channels());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local = rand::seq::index::sample(&mut rng, items, n).into_vec();
        let partition_mass = partition_masses(&engine, &aux, &posteriors.p, &local);
        let display = DisplaySet { seeds: local.iter().map(|&k| provider.ids()[k]).collect(), partition_mass };

        Ok(Session { provider, engine, config, seed, aux, posteriors, history: Vec::new(), display, status: Status::Running })
    }

    /// Rebuilds a session from its snapshot, checking every recorded display
    /// against the recomputed one.
    pub fn replay(provider: Arc<SimilarityProvider>, snapshot: &SessionSnapshot) -> Result<Self> {
        let mut session = Self::new(provider, snapshot.config.clone(), snapshot.seed)?;
        for (i, round) in snapshot.history.iter().enumerate() {
            if round.display != session.display.seeds {
                return Err(Error::ReplayMismatch(i + 1));
            }
            session.submit_click(round.click)?;
        }
        session.status = snapshot.status;
        Ok(session)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot { config: self.config.clone(), seed: self.seed, history: self.history.clone(), status: self.status }
    }

    pub fn provider(&self) -> &Arc<SimilarityProvider> {
        &self.provider
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn history(&self) -> &[Feedback] {
        &self.history
    }

    /// 1-based index of the round whose display is currently shown.
    pub fn iteration(&self) -> usize {
        self.history.len() + 1
    }

    /// Currently displayed catalog ids, seed order.
    pub fn display(&self) -> &[usize] {
        &self.display.seeds
    }

    pub fn display_set(&self) -> &DisplaySet {
        &self.display
    }

    pub fn aux(&self) -> &AuxiliaryState {
        &self.aux
    }

    /// Engine posteriors; `p` is indexed by subset position.
    pub fn posteriors(&self) -> &Posteriors {
        &self.posteriors
    }

    /// Posterior probability that catalog item `id` is the target.
    pub fn target_probability(&self, id: usize) -> Option<f64> {
        self.provider.local_index(id).map(|k| self.posteriors.p[k])
    }

    /// Feature weights over the provider's channels. Only the re-weighting
    /// method moves away from uniform.
    pub fn weights(&self) -> Vec<f64> {
        match self.config.method {
            Method::Reweight => self.posteriors.w.clone(),
            _ => uniform(self.provider.channels()),
        }
    }

    /// The engine's channel distribution for subset item `k`: `omega(., k)`
    /// under re-weighting, uniform otherwise.
    pub fn channel_weights_for(&self, k: usize) -> Vec<f64> {
        match self.config.method {
            Method::Reweight => self.aux.omega_column(k).to_vec(),
            _ => uniform(self.provider.channels()),
        }
    }

    fn ensure_running(&self) -> Result<()> {
        if self.status.is_terminal() {
            return Err(Error::NotRunning(self.status));
        }
        Ok(())
    }

    /// Absorbs one click (a catalog id from the current display), updates the
    /// auxiliary tables, then the posteriors, then selects the next display.
    pub fn submit_click(&mut self, clicked: usize) -> Result<&DisplaySet> {
        self.ensure_running()?;
        if !self.display.seeds.contains(&clicked) {
            return Err(Error::NotDisplayed(clicked));
        }
        let local = |id: usize| self.provider.local_index(id).ok_or(Error::NotDisplayed(id));
        let shown: Vec<usize> = self.display.seeds.iter().map(|&id| local(id)).collect::<Result<_>>()?;
        let feedback = Feedback::new(shown, local(clicked)?);

        match self.config.method {
            Method::Reweight | Method::FixedWeight => {
                self.aux = self.aux.update(&self.engine, &feedback)?;
                self.posteriors = solve_posteriors(&self.aux, Some(&self.posteriors), self.config.solver()).posteriors;
            }
            Method::LateFusion => {
                self.aux = self.aux.update_independent(&self.engine, &feedback)?;
                let m = self.aux.channels();
                let mut p = vec![0.0; self.aux.items()];
                for j in 0..m {
                    for (pk, r) in p.iter_mut().zip(self.aux.rho_column(j)) {
                        *pk += r / m as f64;
                    }
                }
                self.posteriors = Posteriors { p, w: uniform(m) };
            }
        }

        let exclude: Vec<usize> = if self.config.exclude_previous {
            feedback.display.iter().copied().filter(|&k| k != feedback.click).collect()
        } else {
            Vec::new()
        };
        let next = select_display(&self.posteriors.p, &self.aux, &self.engine, self.config.n_display, &exclude, self.config.display())?;

        self.history.push(Feedback::new(self.display.seeds.clone(), clicked));
        self.display = DisplaySet {
            seeds: next.seeds.iter().map(|&k| self.provider.ids()[k]).collect(),
            partition_mass: next.partition_mass,
        };
        Ok(&self.display)
    }

    /// The user pressed "found it".
    pub fn mark_found(&mut self) -> Result<()> {
        self.ensure_running()?;
        self.status = Status::ApprovedByUser;
        Ok(())
    }

    pub fn mark_abandoned(&mut self) -> Result<()> {
        self.ensure_running()?;
        self.status = Status::Abandoned;
        Ok(())
    }

    /// The caller saw the target in the current display.
    pub fn mark_approved_by_system(&mut self) -> Result<()> {
        self.ensure_running()?;
        self.status = Status::ApprovedBySystem;
        Ok(())
    }
}

fn uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}
