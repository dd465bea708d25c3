use serde::{Deserialize, Serialize};

use super::moves::{propose, MoveContext, MoveError};
use super::{accept_log_ratio, log_tree_prior_adjustment, ChainConfig, ChainDiagnostics, MoveKind, Strategy};
use crate::dataset::{feature_index, Dataset, DatasetError, FeatureIndex, FeatureKind};
use crate::likelihood::{log_marginal_likelihood, LeafScorer};
use crate::seed::{self, Rng};
use crate::tree::{NodePath, SplitRule, Tree};

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("invalid chain configuration: {0}")]
    Config(String),
    #[error("{n} points cannot fill two leaves of at least {p_min}")]
    TooSmall { n: usize, p_min: usize },
    #[error("no split of the training data leaves both sides with at least {0} points")]
    NoLegalSplit(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One iteration of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub split_count: usize,
    /// `None` if every draw this iteration was unavailable.
    pub kind: Option<MoveKind>,
    pub accepted: bool,
    pub unavailable: u32,
    pub swept: bool,
}

/// Thinned post-burn-in snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
    /// Iteration each snapshot was taken at.
    pub iterations: Vec<usize>,
    pub config: ChainConfig,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn mean_split_count(&self) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.split_count() as f64).sum::<f64>() / self.trees.len() as f64
    }
}

/// A chain advanced one iteration at a time.
pub struct Chain<'a> {
    data: &'a Dataset,
    config: ChainConfig,
    index: FeatureIndex,
    scorer: LeafScorer,
    max_leaves: usize,
    rng: Rng,
    current: Tree,
    iteration: usize,
}

impl<'a> Chain<'a> {
    pub fn new(data: &'a Dataset, config: ChainConfig) -> Result<Self, ChainError> {
        config.validate(data.class_count()).map_err(ChainError::Config)?;
        let p_min = config.prior.p_min;
        let n = data.n();
        if n < 2 * p_min {
            return Err(ChainError::TooSmall { n, p_min });
        }
        let index = feature_index(data)?;
        let scorer = LeafScorer::new(&config.prior.alpha);
        let mut rng = seed::rng(config.seed);
        let legal = legal_root_splits(data, &index, p_min);
        let rule = *rand::seq::IndexedRandom::choose(legal.as_slice(), &mut rng)
            .ok_or(ChainError::NoLegalSplit(p_min))?;
        let mut current = Tree::single_leaf(data);
        current
            .split_leaf(&NodePath::root(), rule, data)
            .expect("the root of a single-leaf tree is a leaf");
        let ll = log_marginal_likelihood(&current, &config.prior).map_err(|e| ChainError::Config(e.to_string()))?;
        current.set_cached_log_likelihood(ll);
        Ok(Chain {
            data,
            config,
            index,
            scorer,
            max_leaves: n / p_min,
            rng,
            current,
            iteration: 0,
        })
    }

    pub fn current(&self) -> &Tree {
        &self.current
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Most leaves a tree can hold with every leaf at `p_min` or more.
    pub fn max_leaves(&self) -> usize {
        self.max_leaves
    }

    pub fn step(&mut self) -> StepRecord {
        let ctx = MoveContext {
            data: self.data,
            index: &self.index,
            scorer: &self.scorer,
            strategy: self.config.strategy,
            proposal: &self.config.proposal,
            p_min: self.config.prior.p_min,
            max_leaves: self.max_leaves,
        };
        let k = self.current.leaf_count();
        let mut unavailable = 0u32;
        let mut record = StepRecord {
            iteration: self.iteration,
            log_likelihood: 0.0,
            split_count: 0,
            kind: None,
            accepted: false,
            unavailable: 0,
            swept: false,
        };
        while unavailable < super::MAX_DRAWS_PER_ITERATION {
            let Some(kind) = self.config.proposal.draw_kind(k, self.max_leaves, &mut self.rng) else {
                break;
            };
            match propose(kind, &self.current, &ctx, &mut self.rng) {
                Ok(p) => {
                    let adj = log_tree_prior_adjustment(&self.config.prior.tree_prior, &self.current, &p.candidate);
                    let log_ratio = p.log_likelihood_delta + p.log_proposal_ratio + adj;
                    record.kind = Some(p.kind);
                    record.swept = p.swept;
                    if accept_log_ratio(log_ratio, &mut self.rng) {
                        record.accepted = true;
                        self.current = p.candidate;
                    }
                    break;
                }
                Err(MoveError::Unavailable) => unavailable += 1,
                // excluded by the move weights; treat like an unavailable draw
                Err(_) => unavailable += 1,
            }
        }
        record.unavailable = unavailable;
        record.log_likelihood = self.current.cached_log_likelihood().expect("chain state is scored");
        record.split_count = self.current.split_count();
        debug_assert!(
            !self.iteration.is_multiple_of(4096) || {
                let full: f64 = self.current.leaves().iter().map(|l| self.scorer.score(l.counts())).sum();
                (full - record.log_likelihood).abs() <= 1e-6 * (1.0 + full.abs())
            },
            "cached log-likelihood drifted"
        );
        self.iteration += 1;
        record
    }
}

/// Every (feature, observed value) rule that splits the root legally.
fn legal_root_splits(d: &Dataset, index: &FeatureIndex, p_min: usize) -> Vec<SplitRule> {
    let n = d.n();
    let mut out = Vec::new();
    for (j, values) in index.iter().enumerate() {
        for &v in &values.values {
            let rule = match values.kind {
                FeatureKind::Continuous => SplitRule::threshold(j, v),
                FeatureKind::Nominal(_) => SplitRule::category(j, v as usize),
            };
            let left = (0..n).filter(|&i| rule.goes_left(d.value(i, j))).count();
            if left >= p_min && n - left >= p_min {
                out.push(rule);
            }
        }
    }
    out
}

pub fn run_chain(d: &Dataset, cfg: &ChainConfig) -> Result<(Ensemble, ChainDiagnostics), ChainError> {
    let mut chain = Chain::new(d, cfg.clone())?;
    let total = cfg.iterations();
    let mut ensemble = Ensemble {
        trees: Vec::with_capacity(cfg.ensemble_size()),
        iterations: Vec::with_capacity(cfg.ensemble_size()),
        config: cfg.clone(),
    };
    let mut diag = ChainDiagnostics {
        trace: Vec::with_capacity(total),
        ..ChainDiagnostics::default()
    };
    for it in 0..total {
        let r = chain.step();
        if it >= cfg.burn_in {
            diag.unavailable += u64::from(r.unavailable);
            if let Some(kind) = r.kind {
                diag.proposed += 1;
                diag.move_counts[kind as usize] += 1;
                diag.accepted += u64::from(r.accepted);
                diag.swept += u64::from(r.swept);
            } else {
                diag.stalled += 1;
            }
            if (it - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
                ensemble.trees.push(chain.current().snapshot());
                ensemble.iterations.push(it);
            }
        }
        diag.trace.push(r);
    }
    let draws = diag.unavailable + diag.proposed;
    diag.acceptance_rate = ratio(diag.accepted, diag.proposed);
    diag.resample_rate = ratio(diag.unavailable, draws);
    debug_assert_eq!(ensemble.len(), cfg.ensemble_size());
    if cfg.strategy == Strategy::Standard {
        debug_assert!(ensemble
            .trees
            .iter()
            .all(|t| t.leaves().iter().all(|l| l.n() >= cfg.prior.p_min)));
    }
    Ok((ensemble, diag))
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
