use rand::seq::IndexedRandom;
use rand::Rng;

use super::{lc, MoveKind, ProposalConfig, Strategy};
use crate::dataset::{Dataset, FeatureIndex, FeatureKind};
use crate::likelihood::{log_likelihood_delta, LeafScorer};
use crate::sweeping::{self, SweepMove, SweepOutcome};
use crate::tree::{NodePath, Predicate, SplitRule, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MoveError {
    #[error("proposal unavailable")]
    Unavailable,
    #[error("tree already has the maximum number of leaves")]
    NoSplittableLeaf,
    #[error("tree has no prunable split")]
    NoPrunableNode,
    #[error("tree has no split to change")]
    NoSplitNode,
}

/// Everything a move needs besides the current tree.
#[derive(Debug, Clone, Copy)]
pub struct MoveContext<'a> {
    pub data: &'a Dataset,
    pub index: &'a FeatureIndex,
    pub scorer: &'a LeafScorer,
    pub strategy: Strategy,
    pub proposal: &'a ProposalConfig,
    pub p_min: usize,
    pub max_leaves: usize,
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: MoveKind,
    /// Refitted, with its log-likelihood cached.
    pub candidate: Tree,
    pub log_likelihood_delta: f64,
    pub log_proposal_ratio: f64,
    /// A sweeping change that removed an undersized leaf.
    pub swept: bool,
}

pub fn propose<R: Rng + ?Sized>(
    kind: MoveKind,
    t: &Tree,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<Proposal, MoveError> {
    match kind {
        MoveKind::Birth => propose_birth(t, ctx, rng),
        MoveKind::Death => propose_death(t, ctx, rng),
        MoveKind::ChangeSplit => propose_change_split(t, ctx, rng),
        MoveKind::ChangeRule => propose_change_rule(t, ctx, rng),
    }
}

impl MoveContext<'_> {
    fn birth_log_ratio(&self, k: usize, prunable_after: usize) -> f64 {
        let b = self.proposal.weights_at(k, self.max_leaves)[0];
        let d = self.proposal.weights_at(k + 1, self.max_leaves)[1];
        (d / b).ln() + (k as f64).ln() - (prunable_after as f64).ln() + lc(k) - lc(k + 1)
    }

    fn death_log_ratio(&self, k: usize, prunable_before: usize) -> f64 {
        let b = self.proposal.weights_at(k - 1, self.max_leaves)[0];
        let d = self.proposal.weights_at(k, self.max_leaves)[1];
        (b / d).ln() + (prunable_before as f64).ln() - ((k - 1) as f64).ln() + lc(k) - lc(k - 1)
    }

    /// A rule for `feature` from the strategy's rule prior.
    fn draw_rule<R: Rng + ?Sized>(&self, feature: usize, rng: &mut R) -> Result<SplitRule, MoveError> {
        match self.strategy {
            Strategy::Standard => Ok(observed_rule(self.index, feature, rng)),
            Strategy::Sweeping => {
                sweeping::draw_rule_uniform(feature, self.index, rng).map_err(|_| MoveError::Unavailable)
            }
        }
    }

    fn undersized_under(&self, t: &Tree, path: &NodePath) -> bool {
        t.leaves_under(path).iter().any(|l| l.n() < self.p_min)
    }

    fn finish(
        &self,
        kind: MoveKind,
        current: &Tree,
        mut candidate: Tree,
        path: &NodePath,
        log_proposal_ratio: f64,
        swept: bool,
    ) -> Proposal {
        let before: Vec<&[u32]> = current.leaves_under(path).iter().map(|l| l.counts()).collect();
        let after: Vec<&[u32]> = candidate.leaves_under(path).iter().map(|l| l.counts()).collect();
        let delta = log_likelihood_delta(self.scorer, &before, &after)
            .expect("a move keeps the rows of the subtree it rewrites");
        let base = current
            .cached_log_likelihood()
            .unwrap_or_else(|| current.leaves().iter().map(|l| self.scorer.score(l.counts())).sum());
        candidate.set_cached_log_likelihood(base + delta);
        Proposal {
            kind,
            candidate,
            log_likelihood_delta: delta,
            log_proposal_ratio,
            swept,
        }
    }
}

/// Uniform over the feature's observed values (thresholds) or categories.
fn observed_rule<R: Rng + ?Sized>(index: &FeatureIndex, feature: usize, rng: &mut R) -> SplitRule {
    let values = index.get(feature);
    let v = *values.values.choose(rng).expect("feature index entries are non-empty");
    match values.kind {
        FeatureKind::Continuous => SplitRule::threshold(feature, v),
        FeatureKind::Nominal(_) => SplitRule::category(feature, v as usize),
    }
}

pub fn propose_birth<R: Rng + ?Sized>(t: &Tree, ctx: &MoveContext<'_>, rng: &mut R) -> Result<Proposal, MoveError> {
    let k = t.leaf_count();
    if k >= ctx.max_leaves {
        return Err(MoveError::NoSplittableLeaf);
    }
    let path = t.leaf_paths().choose(rng).expect("a tree has leaves").clone();
    let feature = rng.random_range(0..ctx.data.m());
    let rule = ctx.draw_rule(feature, rng)?;
    let mut candidate = t.clone();
    candidate
        .split_leaf(&path, rule, ctx.data)
        .expect("path was taken from the tree's leaves");
    let candidate = match ctx.strategy {
        Strategy::Standard if ctx.undersized_under(&candidate, &path) => return Err(MoveError::Unavailable),
        Strategy::Standard => candidate,
        Strategy::Sweeping => match sweeping::resolve(SweepMove::Birth, candidate, &path, ctx.p_min, ctx.data) {
            SweepOutcome::Proceed(c) => c,
            _ => return Err(MoveError::Unavailable),
        },
    };
    let ratio = ctx.birth_log_ratio(k, candidate.prunable_count());
    Ok(ctx.finish(MoveKind::Birth, t, candidate, &path, ratio, false))
}

pub fn propose_death<R: Rng + ?Sized>(t: &Tree, ctx: &MoveContext<'_>, rng: &mut R) -> Result<Proposal, MoveError> {
    let k = t.leaf_count();
    let prunable = t.prunable_paths();
    if k < 2 || prunable.is_empty() {
        return Err(MoveError::NoPrunableNode);
    }
    let path = prunable.choose(rng).expect("checked non-empty").clone();
    let mut candidate = t.clone();
    candidate.merge(&path).expect("path is prunable");
    let ratio = ctx.death_log_ratio(k, prunable.len());
    Ok(ctx.finish(MoveKind::Death, t, candidate, &path, ratio, false))
}

pub fn propose_change_split<R: Rng + ?Sized>(
    t: &Tree,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<Proposal, MoveError> {
    let (path, old) = pick_split(t, rng)?;
    let m = ctx.data.m();
    let rule = match ctx.strategy {
        Strategy::Standard => ctx.draw_rule(rng.random_range(0..m), rng)?,
        // with a single feature there is nothing to switch to
        Strategy::Sweeping if m < 2 => return change_rule_at(t, ctx, path, old, MoveKind::ChangeSplit, rng),
        Strategy::Sweeping => {
            let feature = sweeping::draw_variable_excluding(old.feature, m, rng).expect("m >= 2");
            ctx.draw_rule(feature, rng)?
        }
    };
    apply_change(t, ctx, path, rule, MoveKind::ChangeSplit)
}

pub fn propose_change_rule<R: Rng + ?Sized>(
    t: &Tree,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<Proposal, MoveError> {
    let (path, old) = pick_split(t, rng)?;
    change_rule_at(t, ctx, path, old, MoveKind::ChangeRule, rng)
}

fn pick_split<R: Rng + ?Sized>(t: &Tree, rng: &mut R) -> Result<(NodePath, SplitRule), MoveError> {
    let splits = t.split_paths();
    let path = splits.choose(rng).ok_or(MoveError::NoSplitNode)?.clone();
    let rule = t.rule_at(&path).expect("path was taken from the tree's splits");
    Ok((path, rule))
}

fn change_rule_at<R: Rng + ?Sized>(
    t: &Tree,
    ctx: &MoveContext<'_>,
    path: NodePath,
    old: SplitRule,
    kind: MoveKind,
    rng: &mut R,
) -> Result<Proposal, MoveError> {
    let rule = match ctx.strategy {
        Strategy::Standard => observed_rule(ctx.index, old.feature, rng),
        Strategy::Sweeping => {
            let rule = sweeping::draw_rule_gaussian(&old, ctx.proposal.sigma, ctx.index, rng)
                .map_err(|_| MoveError::Unavailable)?;
            if let Predicate::Threshold(x) = rule.predicate {
                let values = ctx.index.get(rule.feature);
                if x < values.min() || x > values.max() {
                    return Err(MoveError::Unavailable);
                }
            }
            rule
        }
    };
    apply_change(t, ctx, path, rule, kind)
}

fn apply_change(
    t: &Tree,
    ctx: &MoveContext<'_>,
    path: NodePath,
    rule: SplitRule,
    kind: MoveKind,
) -> Result<Proposal, MoveError> {
    let mut candidate = t.clone();
    candidate
        .set_rule(&path, rule, ctx.data)
        .expect("path was taken from the tree's splits");
    match ctx.strategy {
        Strategy::Standard if ctx.undersized_under(&candidate, &path) => Err(MoveError::Unavailable),
        Strategy::Standard => Ok(ctx.finish(kind, t, candidate, &path, 0.0, false)),
        Strategy::Sweeping => match sweeping::resolve(SweepMove::Change, candidate, &path, ctx.p_min, ctx.data) {
            SweepOutcome::Proceed(c) => Ok(ctx.finish(kind, t, c, &path, 0.0, false)),
            SweepOutcome::SweptToDeath(c) => {
                let ratio = ctx.death_log_ratio(t.leaf_count(), t.prunable_count());
                Ok(ctx.finish(kind, t, c, &path, ratio, true))
            }
            SweepOutcome::Resample => Err(MoveError::Unavailable),
        },
    }
}
