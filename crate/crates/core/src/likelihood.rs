//! Dirichlet-multinomial marginal likelihood of the training data given a
//! tree, in natural-log space.
//!
//! With leaf class probabilities integrated out under a Dirichlet(`alpha`)
//! prior, each leaf with counts `m_i1..m_iC` (total `n_i`) contributes
//!
//! ```text
//! ln G(sum a) - sum_j ln G(a_j) + sum_j ln G(m_ij + a_j) - ln G(n_i + sum a)
//! ```
//!
//! and the tree's log-likelihood is the sum over leaves.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::tree::Tree;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LikelihoodError {
    #[error("tree has no data routed through it")]
    Unfitted,
    #[error("alpha has {alpha} entries but there are {classes} classes")]
    AlphaLength { alpha: usize, classes: usize },
    #[error("affected leaves before and after the move hold different points")]
    InconsistentMove,
    #[error("invalid prior: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, LikelihoodError>;

/// Prior over tree structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreePrior {
    /// Every tree with the same number of leaves is equally likely.
    Uniform,
    /// A leaf at depth `d` splits with probability `gamma * (1 + d)^-delta`.
    Chipman { gamma: f64, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Dirichlet concentration per class.
    pub alpha: Vec<f64>,
    /// Minimum number of points allowed in a leaf.
    pub p_min: usize,
    pub tree_prior: TreePrior,
}

impl PriorConfig {
    /// `alpha = 1` for every class, uniform tree prior.
    pub fn new(class_count: usize, p_min: usize) -> Self {
        PriorConfig {
            alpha: vec![1.0; class_count],
            p_min,
            tree_prior: TreePrior::Uniform,
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.alpha.len() != class_count {
            return Err(LikelihoodError::AlphaLength {
                alpha: self.alpha.len(),
                classes: class_count,
            });
        }
        if let Some(a) = self.alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(LikelihoodError::Invalid(format!("alpha entries must be > 0, got {a}")));
        }
        if self.p_min < 1 {
            return Err(LikelihoodError::Invalid("p_min must be at least 1".into()));
        }
        if let TreePrior::Chipman { gamma, delta } = self.tree_prior {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(LikelihoodError::Invalid(format!("gamma must lie in [0, 1], got {gamma}")));
            }
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(LikelihoodError::Invalid(format!("delta must be >= 0, got {delta}")));
            }
        }
        Ok(())
    }
}

/// Per-leaf scorer with the count-independent terms precomputed.
#[derive(Debug, Clone)]
pub struct LeafScorer {
    alpha: Vec<f64>,
    alpha_sum: f64,
    normalizer: f64,
}

impl LeafScorer {
    pub fn new(alpha: &[f64]) -> Self {
        let alpha_sum: f64 = alpha.iter().sum();
        let normalizer = ln_gamma(alpha_sum) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        LeafScorer {
            alpha: alpha.to_vec(),
            alpha_sum,
            normalizer,
        }
    }

    pub fn score(&self, counts: &[u32]) -> f64 {
        let mut n = 0u64;
        let mut s = self.normalizer;
        for (&m, &a) in counts.iter().zip(&self.alpha) {
            n += u64::from(m);
            s += ln_gamma(f64::from(m) + a);
        }
        s - ln_gamma(n as f64 + self.alpha_sum)
    }
}

pub fn leaf_log_term(counts: &[u32], alpha: &[f64]) -> f64 {
    LeafScorer::new(alpha).score(counts)
}

pub fn log_marginal_likelihood(t: &Tree, prior: &PriorConfig) -> Result<f64> {
    if !t.is_fitted() {
        return Err(LikelihoodError::Unfitted);
    }
    if prior.alpha.len() != t.class_count() {
        return Err(LikelihoodError::AlphaLength {
            alpha: prior.alpha.len(),
            classes: t.class_count(),
        });
    }
    let scorer = LeafScorer::new(&prior.alpha);
    Ok(t.leaves().iter().map(|l| scorer.score(l.counts())).sum())
}

/// New-minus-old log-likelihood from the leaves a move replaced (`before`)
/// and the leaves it created (`after`). The two sides must hold the same
/// points, class by class.
pub fn log_likelihood_delta(scorer: &LeafScorer, before: &[&[u32]], after: &[&[u32]]) -> Result<f64> {
    let classes = scorer.alpha.len();
    let totals = |side: &[&[u32]]| -> Result<Vec<u64>> {
        let mut t = vec![0u64; classes];
        for counts in side {
            if counts.len() != classes {
                return Err(LikelihoodError::InconsistentMove);
            }
            for (acc, &c) in t.iter_mut().zip(counts.iter()) {
                *acc += u64::from(c);
            }
        }
        Ok(t)
    };
    if totals(before)? != totals(after)? {
        return Err(LikelihoodError::InconsistentMove);
    }
    let sum = |side: &[&[u32]]| side.iter().map(|c| scorer.score(c)).sum::<f64>();
    Ok(sum(after) - sum(before))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::tests::toy;
    use crate::tree::{Node, SplitRule};

    /// ln of (n-1)! for small integer n, by direct product.
    fn ln_fact_gamma(n: u32) -> f64 {
        (1..n).map(|k| (k as f64).ln()).sum()
    }

    /// Closed form for alpha = (1, 1): (a)! (b)! / (a + b + 1)!.
    fn closed_form(a: u32, b: u32) -> f64 {
        ln_fact_gamma(2) + ln_fact_gamma(a + 1) + ln_fact_gamma(b + 1) - ln_fact_gamma(a + b + 2)
    }

    #[test]
    fn hand_values() {
        let a = [1.0, 1.0];
        assert!((leaf_log_term(&[1, 1], &a) - (1.0f64 / 6.0).ln()).abs() < 1e-12);
        assert!((leaf_log_term(&[2, 0], &a) - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        for (x, y) in [(0, 0), (5, 3), (40, 2), (100, 100)] {
            assert!((leaf_log_term(&[x, y], &a) - closed_form(x, y)).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_split_beats_mixed_leaf() {
        let d = toy(&[0, 0, 1, 1], &[1., 2., 3., 4.]);
        let prior = PriorConfig::new(2, 1);
        let mixed = log_marginal_likelihood(&Tree::single_leaf(&d), &prior).unwrap();
        let split = Tree::fit(
            Node::split(SplitRule::threshold(0, 2.0), Node::leaf(2), Node::leaf(2)),
            &d,
        );
        let pure = log_marginal_likelihood(&split, &prior).unwrap();
        assert!(pure > mixed);
        assert!((pure - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((mixed - closed_form(2, 2)).abs() < 1e-12);
    }

    #[test]
    fn unfitted_tree_is_an_error() {
        let t = Tree::from_root(Node::leaf(2), 2);
        assert_eq!(
            log_marginal_likelihood(&t, &PriorConfig::new(2, 1)),
            Err(LikelihoodError::Unfitted)
        );
    }

    #[test]
    fn birth_delta() {
        let s = LeafScorer::new(&[1.0, 1.0]);
        let before: [&[u32]; 1] = [&[2, 2]];
        let after: [&[u32]; 2] = [&[2, 0], &[0, 2]];
        let delta = log_likelihood_delta(&s, &before, &after).unwrap();
        let expected = 2.0 * (1.0f64 / 3.0).ln() - (1.0f64 / 30.0).ln();
        assert!((delta - expected).abs() < 1e-12);
        assert_eq!(log_likelihood_delta(&s, &before, &before).unwrap(), 0.0);
        let bad: [&[u32]; 2] = [&[2, 0], &[0, 1]];
        assert_eq!(
            log_likelihood_delta(&s, &before, &bad),
            Err(LikelihoodError::InconsistentMove)
        );
    }

    #[test]
    fn purest_counts_maximize_single_leaf_likelihood() {
        let a = [1.0, 1.0];
        for n in 1..=12u32 {
            let best = (0..=n)
                .max_by(|&x, &y| {
                    leaf_log_term(&[x, n - x], &a).total_cmp(&leaf_log_term(&[y, n - y], &a))
                })
                .unwrap();
            assert!(best == 0 || best == n, "n={n} best={best}");
            for x in 0..=n {
                assert!(leaf_log_term(&[x, n - x], &a) <= 0.0);
            }
        }
    }

    #[test]
    fn prior_validation() {
        let mut p = PriorConfig::new(2, 1);
        assert!(p.validate(2).is_ok());
        assert!(p.validate(3).is_err());
        p.p_min = 0;
        assert!(p.validate(2).is_err());
        p.p_min = 1;
        p.alpha = vec![1.0, 0.0];
        assert!(p.validate(2).is_err());
        p.alpha = vec![1.0, 1.0];
        p.tree_prior = TreePrior::Chipman { gamma: 1.5, delta: 1.0 };
        assert!(p.validate(2).is_err());
    }
}
