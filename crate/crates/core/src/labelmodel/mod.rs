//! Turning a label matrix into one label per scenario.

pub mod aggregate;
pub mod borda;
pub mod generative;
pub mod vote;

pub use aggregate::{aggregate, fit_aggregator, hard_labels, Aggregate, AggregatorSpec, FittedAggregator, ModelKind, TieKind, WeightSource};
pub use borda::{borda_counts, scale_weights, Scaling, StrategyRanking};
pub use generative::{fit_generative, Correlations, GenerativeConfig, GenerativeModel, GradientMode};
pub use vote::{majority_vote, round_labels, weighted_vote, TiePolicy, VoteWeights, TIE_TOLERANCE};
