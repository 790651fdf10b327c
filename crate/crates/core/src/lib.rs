//! Query-free ("mental image") target search driven by one-click relevance
//! feedback.
//!
//! The engine keeps two coupled beliefs during a search session: which
//! catalog item the user is looking for, and which feature channel drives the
//! user's notion of similarity. Every click refreshes a pair of auxiliary
//! conditional tables ([`bayes::AuxiliaryState`]), from which both marginals
//! are recovered as the fixed point of a column-stochastic system
//! ([`bayes::solve_posteriors`]). The next screen of candidates is picked by
//! balancing posterior mass across Voronoi cells under the expected
//! similarity ([`display::select_display`]).
//!
//! [`simulate`] drives whole sessions with simulated users and reproduces
//! the evaluation protocol (success rates, `E(T)`, `P(t <= T)`, method
//! comparisons, scaling, weight and consistency studies).

pub mod bayes;
pub mod catalog;
pub mod display;
mod error;
pub mod session;
pub mod simulate;

pub use bayes::{AuxiliaryState, Feedback, JointLikelihood, Posteriors};
pub use catalog::{Catalog, ChannelSpec, FeatureChannel, GeneratorConfig, Item, SimilarityProvider, SubsetView};
pub use display::DisplaySet;
pub use error::{Error, Result};
pub use session::{Method, Session, SessionConfig, SessionSnapshot, Status};
pub use simulate::{GameRecord, MetricsReport, UserKind, UserModel};
