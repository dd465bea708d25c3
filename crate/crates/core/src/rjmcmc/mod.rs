//! Reversible-jump sampler over decision trees.
//!
//! Four moves — birth, death, change-split, change-rule — are proposed and
//! accepted with Metropolis–Hastings. Birth and death carry the
//! dimension-matching ratio built from the Catalan count of tree shapes;
//! change moves are accepted on the likelihood ratio alone because their
//! proposals are draws from the rule prior or symmetric walks.

mod chain;
mod moves;
mod output;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::likelihood::TreePrior;
use crate::tree::{Node, Tree};

pub use chain::{run_chain, Chain, ChainError, Ensemble, StepRecord};
pub use moves::{
    propose, propose_birth, propose_change_rule, propose_change_split, propose_death, MoveContext,
    MoveError, Proposal,
};
pub use output::{read_chain_jsonl, write_chain_dir, ChainSummary};

pub use crate::likelihood::PriorConfig;

/// Upper bound on consecutive unavailable draws within one iteration;
/// past it the chain stays where it is for that iteration.
pub const MAX_DRAWS_PER_ITERATION: u32 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Birth,
    Death,
    ChangeSplit,
    ChangeRule,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::ChangeSplit,
        MoveKind::ChangeRule,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::ChangeSplit => "change_split",
            MoveKind::ChangeRule => "change_rule",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Proposals that leave a partition under `p_min` are redrawn.
    Standard,
    /// Rules drawn over the root range; undersized partitions are swept.
    Sweeping,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(Strategy::Standard),
            "sweeping" => Ok(Strategy::Sweeping),
            other => Err(format!("unknown strategy {other:?} (expected standard or sweeping)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub p_birth: f64,
    pub p_death: f64,
    pub p_change_split: f64,
    pub p_change_rule: f64,
    /// Standard deviation of the Gaussian change-rule walk (sweeping only).
    pub sigma: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            p_birth: 0.1,
            p_death: 0.1,
            p_change_split: 0.2,
            p_change_rule: 0.6,
            sigma: 1.0,
        }
    }
}

impl ProposalConfig {
    pub fn probabilities(&self) -> [f64; 4] {
        [self.p_birth, self.p_death, self.p_change_split, self.p_change_rule]
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = self.probabilities();
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(format!("move probabilities must be >= 0, got {p:?}"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("move probabilities must sum to 1, got {total}"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(format!("sigma must be > 0, got {}", self.sigma));
        }
        Ok(())
    }

    /// Move probabilities at `k` leaves; illegal moves are dropped and the
    /// rest renormalized. All zero if nothing may be proposed.
    pub fn weights_at(&self, k: usize, max_leaves: usize) -> [f64; 4] {
        let mut w = self.probabilities();
        if k >= max_leaves {
            w[0] = 0.0;
        }
        if k < 2 {
            w[1] = 0.0;
            w[2] = 0.0;
            w[3] = 0.0;
        }
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        }
        w
    }

    pub fn draw_kind<R: Rng + ?Sized>(&self, k: usize, max_leaves: usize, rng: &mut R) -> Option<MoveKind> {
        let w = self.weights_at(k, max_leaves);
        if w.iter().sum::<f64>() <= 0.0 {
            return None;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (kind, p) in MoveKind::ALL.iter().zip(w) {
            acc += p;
            if u < acc {
                return Some(*kind);
            }
        }
        MoveKind::ALL.iter().zip(w).rev().find(|(_, p)| *p > 0.0).map(|(k, _)| *k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub post_burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub prior: PriorConfig,
    pub proposal: ProposalConfig,
}

impl ChainConfig {
    pub fn new(strategy: Strategy, prior: PriorConfig, seed: u64) -> Self {
        ChainConfig {
            burn_in: 20_000,
            post_burn_in: 10_000,
            thin: 7,
            seed,
            strategy,
            prior,
            proposal: ProposalConfig::default(),
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<(), String> {
        if self.post_burn_in < 1 {
            return Err("post_burn_in must be at least 1".into());
        }
        if self.thin < 1 {
            return Err("thin must be at least 1".into());
        }
        self.prior.validate(class_count).map_err(|e| e.to_string())?;
        self.proposal.validate()
    }

    pub fn iterations(&self) -> usize {
        self.burn_in + self.post_burn_in
    }

    pub fn ensemble_size(&self) -> usize {
        self.post_burn_in / self.thin
    }
}

/// Counters over the post-burn-in phase plus the full per-iteration trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub trace: Vec<StepRecord>,
    /// Accepted over executed proposals (unavailable draws excluded).
    pub acceptance_rate: f64,
    /// Unavailable draws over all draws.
    pub resample_rate: f64,
    pub proposed: u64,
    pub accepted: u64,
    pub unavailable: u64,
    /// Sweeping change moves that turned into a death.
    pub swept: u64,
    /// Iterations that hit [`MAX_DRAWS_PER_ITERATION`] and stayed put.
    pub stalled: u64,
    pub move_counts: [u64; 4],
}

impl ChainDiagnostics {
    pub fn mean_split_count(&self, from_iteration: usize) -> f64 {
        let rows = &self.trace[from_iteration.min(self.trace.len())..];
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| r.split_count as f64).sum::<f64>() / rows.len() as f64
    }
}

/// `ln S_k = lnG(2k+1) - 2 lnG(k+1) - ln(k+1)`.
pub fn log_catalan(k: usize) -> Option<f64> {
    if k < 1 {
        return None;
    }
    let k = k as f64;
    Some(ln_gamma(2.0 * k + 1.0) - 2.0 * ln_gamma(k + 1.0) - (k + 1.0).ln())
}

fn lc(k: usize) -> f64 {
    log_catalan(k).expect("leaf counts are positive")
}

/// `gamma (1 + depth)^-delta`, clamped to [0, 1].
pub fn chipman_split_prior(depth: usize, gamma: f64, delta: f64) -> Result<f64, String> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(format!("gamma must lie in [0, 1], got {gamma}"));
    }
    if !(delta >= 0.0) {
        return Err(format!("delta must be >= 0, got {delta}"));
    }
    Ok((gamma * (1.0 + depth as f64).powf(-delta)).clamp(0.0, 1.0))
}

/// `sum ln P_split` over splits plus `sum ln(1 - P_split)` over leaves.
pub fn chipman_log_prior(t: &Tree, gamma: f64, delta: f64) -> f64 {
    fn walk(n: &Node, depth: usize, gamma: f64, delta: f64) -> f64 {
        let p = (gamma * (1.0 + depth as f64).powf(-delta)).clamp(0.0, 1.0);
        match n {
            Node::Leaf(_) => (1.0 - p).ln(),
            Node::Split { left, right, .. } => {
                p.ln() + walk(left, depth + 1, gamma, delta) + walk(right, depth + 1, gamma, delta)
            }
        }
    }
    walk(t.root(), 0, gamma, delta)
}

/// Extra log-prior term on top of the birth/death ratios. Those already
/// include the uniform shape prior `1/S_k`; under the depth prior it is
/// swapped for the depth terms.
pub fn log_tree_prior_adjustment(prior: &TreePrior, current: &Tree, candidate: &Tree) -> f64 {
    match *prior {
        TreePrior::Uniform => 0.0,
        TreePrior::Chipman { gamma, delta } => {
            let (k, k2) = (current.leaf_count(), candidate.leaf_count());
            chipman_log_prior(candidate, gamma, delta) - chipman_log_prior(current, gamma, delta)
                - (lc(k) - lc(k2))
        }
    }
}

/// Metropolis–Hastings on a log acceptance ratio; NaN rejects.
pub fn accept_log_ratio<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    rng.random::<f64>() < log_ratio.exp()
}

/// Accepts `candidate` over `current` given the move's log proposal ratio.
pub fn accept<R: Rng + ?Sized>(
    current: &Tree,
    candidate: &Tree,
    log_proposal_ratio: f64,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<bool, crate::likelihood::LikelihoodError> {
    let ll = |t: &Tree| match t.cached_log_likelihood() {
        Some(v) => Ok(v),
        None => crate::likelihood::log_marginal_likelihood(t, prior),
    };
    let delta = ll(candidate)? - ll(current)?;
    let adj = log_tree_prior_adjustment(&prior.tree_prior, current, candidate);
    Ok(accept_log_ratio(delta + log_proposal_ratio + adj, rng))
}

#[cfg(test)]
mod tests;
