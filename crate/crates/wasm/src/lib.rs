//! WebAssembly bindings for the single-page demo in `www/`.
//!
//! The page plays a target-search game on a synthetic catalog: a hidden
//! target is drawn, the player (or the simulated ideal user) clicks the
//! displayed item closest to it, and the page redraws the new screen and the
//! learned channel weights.

use std::sync::Arc;

use mindseek::catalog::{generate_catalog, GeneratorConfig, SimilarityProvider, SubsetView};
use mindseek::simulate::{derive_seed, draw_games, ideal_click, run_games, summarize};
use mindseek::{Catalog, Method, Session, SessionConfig, Status, UserModel};
use wasm_bindgen::prelude::*;

/// Game state without any JS types, so it can be tested natively.
pub struct Game {
    catalog: Catalog,
    session: Session,
    target: usize,
}

impl Game {
    pub fn new(items: usize, channels: usize, method: Method, seed: u64) -> Result<Game, String> {
        let catalog = generate_catalog(&GeneratorConfig::new(items, channels, &[3], seed)).map_err(|e| e.to_string())?;
        let provider = Arc::new(SimilarityProvider::new(&catalog, &SubsetView::all(&catalog)).map_err(|e| e.to_string())?);
        let (target, session_seed) = draw_games(&provider, 1, derive_seed(seed, 1))[0];
        let session = Session::new(provider, SessionConfig::default().with_method(method), session_seed).map_err(|e| e.to_string())?;
        let mut game = Game { catalog, session, target };
        game.check_target();
        Ok(game)
    }

    fn check_target(&mut self) {
        if self.session.status() == Status::Running && self.session.display().contains(&self.target) {
            self.session.mark_approved_by_system().expect("session is running");
        }
    }

    pub fn click(&mut self, item: usize) -> Result<(), String> {
        self.session.submit_click(item).map_err(|e| e.to_string())?;
        self.check_target();
        Ok(())
    }

    /// The ideal user's click, applied.
    pub fn auto_step(&mut self) -> Result<usize, String> {
        let item = ideal_click(&self.session, self.target).map_err(|e| e.to_string())?;
        self.click(item)?;
        Ok(item)
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// One CSS colour per channel, from the first three feature values.
    pub fn colors(&self, item: usize) -> Vec<String> {
        let Some(item) = self.catalog.item(item) else { return Vec::new() };
        item.features
            .iter()
            .map(|v| {
                let c = |i: usize| (255.0 * (0.5 + 0.5 * (v.get(i).copied().unwrap_or(0.0) / 3.0).tanh())).round() as u8;
                format!("#{:02x}{:02x}{:02x}", c(0), c(1), c(2))
            })
            .collect()
    }
}

fn method(name: &str) -> Result<Method, JsError> {
    name.parse().map_err(|e: mindseek::Error| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct DemoGame(Game);

#[wasm_bindgen]
impl DemoGame {
    /// `method` is `reweight`, `fixed_weight` or `late_fusion`.
    #[wasm_bindgen(constructor)]
    pub fn new(items: usize, channels: usize, method_name: &str, seed: u32) -> Result<DemoGame, JsError> {
        Game::new(items, channels, method(method_name)?, seed as u64).map(DemoGame).map_err(|e| JsError::new(&e))
    }

    pub fn display(&self) -> Vec<u32> {
        self.0.session.display().iter().map(|&id| id as u32).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.0.session.weights()
    }

    /// Posterior target probability of each displayed item.
    pub fn probabilities(&self) -> Vec<f64> {
        self.0.session.display().iter().map(|&id| self.0.session.target_probability(id).unwrap_or(0.0)).collect()
    }

    pub fn iteration(&self) -> usize {
        self.0.session.iteration()
    }

    pub fn status(&self) -> String {
        self.0.session.status().to_string()
    }

    pub fn target(&self) -> u32 {
        self.0.target as u32
    }

    #[wasm_bindgen(js_name = channelNames)]
    pub fn channel_names(&self) -> Vec<String> {
        self.0.session.provider().channel_names().to_vec()
    }

    pub fn colors(&self, item: u32) -> Vec<String> {
        self.0.colors(item as usize)
    }

    pub fn click(&mut self, item: u32) -> Result<(), JsError> {
        self.0.click(item as usize).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = autoStep)]
    pub fn auto_step(&mut self) -> Result<u32, JsError> {
        self.0.auto_step().map(|i| i as u32).map_err(|e| JsError::new(&e))
    }
}

/// `[success rate, E(T), P(T <= 1), P(T <= 2), ...]` for `games` simulated
/// ideal-user games.
pub fn simulate(items: usize, channels: usize, method: Method, games: usize, seed: u64) -> Result<Vec<f64>, String> {
    let catalog = generate_catalog(&GeneratorConfig::new(items, channels, &[3], seed)).map_err(|e| e.to_string())?;
    let provider = Arc::new(SimilarityProvider::new(&catalog, &SubsetView::all(&catalog)).map_err(|e| e.to_string())?);
    let plan = draw_games(&provider, games, derive_seed(seed, 2));
    let records = run_games(&provider, &plan, &UserModel::ideal(), &SessionConfig::default().with_method(method)).map_err(|e| e.to_string())?;
    let report = summarize(&records).map_err(|e| e.to_string())?;
    let mut out = vec![report.success_rate, report.mean_iterations.unwrap_or(f64::NAN)];
    out.extend(report.cumulative);
    Ok(out)
}

#[wasm_bindgen(js_name = simulateGames)]
pub fn simulate_games(items: usize, channels: usize, method_name: &str, games: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    simulate(items, channels, method(method_name)?, games, seed as u64).map_err(|e| JsError::new(&e))
}
