//! Bayesian decision-tree classification by reversible-jump MCMC.
//!
//! Trees are sampled from their posterior with birth, death, change-split
//! and change-rule moves, either under the standard strategy (proposals that
//! leave a partition with fewer than `p_min` points are resampled) or under
//! the sweeping strategy (such partitions are swept out of the tree). The
//! post-burn-in samples form an [`Ensemble`](rjmcmc::Ensemble) whose votes are
//! scored by the uncertainty envelope: every datum is labelled confident and
//! correct, confident but incorrect, or uncertain.
//!
//! Module map:
//!
//! * [`dataset`]: CSV ingestion with schema sidecars, the XOR3 generator,
//!   fold plans and the per-feature candidate-rule index.
//! * [`tree`]: tree structure, routing, leaf statistics.
//! * [`likelihood`]: Dirichlet-multinomial marginal likelihood.
//! * [`rjmcmc`]: moves, acceptance and the chain driver.
//! * [`sweeping`]: rule draws of the sweeping strategy and its resolution of
//!   undersized partitions.
//! * [`envelope`]: ensemble votes, consistency and outcome tallies.
//! * [`balance`]: standalone emulation of move-type balance under
//!   unavailability.
//! * [`crossval`]: k-fold harness tying chains to envelope reports.

pub mod balance;
pub mod crossval;
pub mod dataset;
pub mod envelope;
pub mod likelihood;
pub mod rjmcmc;
pub mod seed;
pub mod sweeping;
pub mod tree;

pub use dataset::{Dataset, FeatureIndex, FeatureKind, FoldPlan};
pub use envelope::{EnvelopeReport, Outcome, VoteMatrix};
pub use likelihood::{PriorConfig, TreePrior};
pub use rjmcmc::{ChainConfig, ChainDiagnostics, Ensemble, ProposalConfig, Strategy};
pub use tree::{SplitRule, Tree};
