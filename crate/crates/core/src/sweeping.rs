//! The sweeping strategy.
//!
//! The prior probability of splitting a node shrinks with the range of
//! values left at its partition level. That prior is never evaluated
//! directly: new rules are drawn across the feature's full root-level range
//! and partitions left with fewer than `p_min` points are swept away.

use rand::Rng;
use rand::seq::IndexedRandom;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, FeatureIndex, FeatureKind};
use crate::tree::{NodePath, SplitRule, Tree};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("feature range [{0}, {1}] is degenerate")]
    DegenerateRange(f64, f64),
    #[error("level range is not contained in the root range")]
    LevelOutsideRoot,
    #[error("excluding the current feature leaves nothing to draw from (m = {0})")]
    TooFewFeatures(usize),
    #[error("proposal sd must be positive, got {0}")]
    NonPositiveSigma(f64),
}

pub type Result<T> = std::result::Result<T, SweepError>;

/// `(level_max - level_min) / (root_max - root_min)`.
pub fn split_probability(level: (f64, f64), root: (f64, f64)) -> Result<f64> {
    let width = root.1 - root.0;
    if !(width > 0.0) {
        return Err(SweepError::DegenerateRange(root.0, root.1));
    }
    if level.0 > level.1 || level.0 < root.0 || level.1 > root.1 {
        return Err(SweepError::LevelOutsideRoot);
    }
    Ok(((level.1 - level.0) / width).clamp(0.0, 1.0))
}

/// Threshold uniform over the feature's root-level range, or a uniformly
/// chosen observed category for nominal features.
pub fn draw_rule_uniform<R: Rng + ?Sized>(
    feature: usize,
    index: &FeatureIndex,
    rng: &mut R,
) -> Result<SplitRule> {
    let values = index.get(feature);
    match values.kind {
        FeatureKind::Nominal(_) => Ok(uniform_category(feature, &values.values, rng)),
        FeatureKind::Continuous => {
            let (lo, hi) = (values.min(), values.max());
            if !(hi > lo) {
                return Err(SweepError::DegenerateRange(lo, hi));
            }
            Ok(SplitRule::threshold(feature, rng.random_range(lo..hi)))
        }
    }
}

fn uniform_category<R: Rng + ?Sized>(feature: usize, categories: &[f64], rng: &mut R) -> SplitRule {
    let v = *categories.choose(rng).expect("feature index entries are non-empty");
    SplitRule::category(feature, v as usize)
}

/// Uniform over the `m - 1` features other than `current`.
pub fn draw_variable_excluding<R: Rng + ?Sized>(current: usize, m: usize, rng: &mut R) -> Result<usize> {
    if m < 2 {
        return Err(SweepError::TooFewFeatures(m));
    }
    let j = rng.random_range(0..m - 1);
    Ok(if j >= current { j + 1 } else { j })
}

/// Gaussian walk `N(t, sigma)` around the current threshold; nominal rules
/// are redrawn uniformly over the observed categories.
pub fn draw_rule_gaussian<R: Rng + ?Sized>(
    rule: &SplitRule,
    sigma: f64,
    index: &FeatureIndex,
    rng: &mut R,
) -> Result<SplitRule> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SweepError::NonPositiveSigma(sigma));
    }
    match rule.predicate {
        crate::tree::Predicate::Threshold(t) => {
            let step = Normal::new(t, sigma).expect("sigma checked above");
            Ok(SplitRule::threshold(rule.feature, step.sample(rng)))
        }
        crate::tree::Predicate::Category(_) => Ok(uniform_category(
            rule.feature,
            &index.get(rule.feature).values,
            rng,
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMove {
    Birth,
    Change,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Proceed(Tree),
    /// The single undersized leaf and its parent split were removed.
    SweptToDeath(Tree),
    Resample,
}

/// Sorts out a refitted candidate whose modified node sits at `modified`.
/// Only the leaves below that node count as new partitions.
pub fn resolve(
    kind: SweepMove,
    mut candidate: Tree,
    modified: &NodePath,
    p_min: usize,
    d: &Dataset,
) -> SweepOutcome {
    let mut undersized = candidate
        .leaf_paths()
        .into_iter()
        .filter(|p| modified.is_prefix_of(p))
        .filter(|p| {
            candidate
                .node(p)
                .is_some_and(|n| matches!(n, crate::tree::Node::Leaf(l) if l.n() < p_min))
        });
    let first = undersized.next();
    let more = undersized.next().is_some();
    match (first, more, kind) {
        (None, _, _) => SweepOutcome::Proceed(candidate),
        (Some(_), _, SweepMove::Birth) | (Some(_), true, _) => SweepOutcome::Resample,
        (Some(path), false, SweepMove::Change) => match candidate.remove_leaf(&path, d) {
            Ok(()) => SweepOutcome::SweptToDeath(candidate),
            // an undersized single-leaf tree has nothing to sweep into
            Err(_) => SweepOutcome::Resample,
        },
    }
}
