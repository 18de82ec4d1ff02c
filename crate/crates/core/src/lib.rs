//! Topic-level Bayesian surprise and serendipity.
//!
//! Online learners track a user's drifting preference over LDA topics; the
//! surprise of an item is the KL divergence between the preference beliefs
//! before and after it was rated. Serendipitous items are found by searching
//! other users' preference snapshots for positively rated, surprising next
//! items.

#[cfg(test)]
#[macro_use]
mod testutil;

pub mod error;
pub mod eval;
pub mod gaussian;
pub mod history;
pub mod models;
pub mod neighbors;
pub mod synth;

pub use error::{Error, Result};
pub use gaussian::{clip_eigenvalues, floor_and_symmetrize, kl_divergence, GaussianBelief};
pub use history::{center_rating, load_corpus, Corpus, Interaction, ItemRecord, SurpriseAnnotation, TopicVector, UserHistory};
pub use models::{init_state, run_history, EnvelopeSource, ModelConfig, ModelKind, PreferenceState, StepOutcome, StepRecord, UserRun};
pub use neighbors::{build_index, find_serendipity, preference_distance, query_top_n, Snapshot, SnapshotIndex};
pub use eval::{metrics_from_counts, ConfusionCounts, Metrics};
pub use synth::{generate_population, SynthConfig};

/// Default number of leading interactions excluded from evaluation.
pub const DEFAULT_BURN_IN: usize = 15;
