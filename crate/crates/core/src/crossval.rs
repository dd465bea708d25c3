//! k-fold evaluation: one chain per training fold, run in parallel, each
//! scored on its held-out fold with the Uncertainty Envelope.

use rayon::prelude::*;

use crate::dataset::{kfold_split, Dataset, DatasetError, FoldPlan};
use crate::envelope::{aggregate_report, ensemble_votes, evaluate, DatumResult, EnvelopeError, EnvelopeReport, FoldTally};
use crate::rjmcmc::{run_chain, ChainConfig, ChainDiagnostics, ChainError, Ensemble};
use crate::seed::{derive, Stream};

#[derive(Debug, thiserror::Error)]
pub enum CrossvalError {
    #[error("cross-validation needs at least 2 folds, got {0}; use `sample` for a single chain")]
    TooFewFolds(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("fold {fold}: {source}")]
    Chain { fold: usize, source: ChainError },
    #[error("fold {fold}: {source}")]
    Tree { fold: usize, source: crate::tree::TreeError },
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: usize,
    pub seed: u64,
    pub test: Vec<usize>,
    pub ensemble: Ensemble,
    pub diagnostics: ChainDiagnostics,
    /// Indexed by position within `test`.
    pub datums: Vec<DatumResult>,
    pub tally: FoldTally,
}

#[derive(Debug, Clone)]
pub struct CrossvalResult {
    pub plan: FoldPlan,
    pub folds: Vec<FoldRun>,
    pub report: EnvelopeReport,
}

/// Seed of the fold partition for master seed `seed`.
pub fn fold_seed(seed: u64) -> u64 {
    derive(seed, Stream::Folds, 0)
}

/// Seed of the chain trained on fold `j`.
pub fn chain_seed(seed: u64, j: usize) -> u64 {
    derive(seed, Stream::Chain, j as u64)
}

/// `chain.seed` is the master seed; fold partition and chains derive from it.
pub fn crossval(d: &Dataset, folds: usize, gamma0: f64, chain: &ChainConfig) -> Result<CrossvalResult, CrossvalError> {
    if folds < 2 {
        return Err(CrossvalError::TooFewFolds(folds));
    }
    let plan = kfold_split(d, folds, fold_seed(chain.seed))?;
    let runs = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(j, fold)| {
            let train = d.subset(&fold.train);
            let test = d.subset(&fold.test);
            let cfg = ChainConfig {
                seed: chain_seed(chain.seed, j),
                ..chain.clone()
            };
            let (ensemble, diagnostics) =
                run_chain(&train, &cfg).map_err(|source| CrossvalError::Chain { fold: j, source })?;
            let votes = ensemble_votes(&ensemble, &test, &cfg.prior.alpha)
                .map_err(|source| CrossvalError::Tree { fold: j, source })?;
            let leaves = ensemble.trees.iter().map(|t| t.leaf_count() as f64).sum::<f64>()
                / ensemble.len().max(1) as f64;
            let (datums, tally) = evaluate(&votes, gamma0, ensemble.mean_split_count(), leaves)?;
            Ok(FoldRun {
                fold: j,
                seed: cfg.seed,
                test: fold.test.clone(),
                ensemble,
                diagnostics,
                datums,
                tally,
            })
        })
        .collect::<Result<Vec<_>, CrossvalError>>()?;
    let tallies: Vec<FoldTally> = runs.iter().map(|r| r.tally.clone()).collect();
    let report = aggregate_report(&tallies, gamma0)?;
    Ok(CrossvalResult { plan, folds: runs, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_xor3;
    use crate::likelihood::PriorConfig;
    use crate::rjmcmc::Strategy;

    fn small_cfg(seed: u64) -> ChainConfig {
        ChainConfig {
            burn_in: 300,
            post_burn_in: 140,
            ..ChainConfig::new(Strategy::Sweeping, PriorConfig::new(2, 5), seed)
        }
    }

    #[test]
    fn rejects_single_fold() {
        let d = gen_xor3(60, 1).unwrap();
        assert!(matches!(
            crossval(&d, 1, 0.99, &small_cfg(1)),
            Err(CrossvalError::TooFewFolds(1))
        ));
    }

    #[test]
    fn deterministic_and_complete() {
        let d = gen_xor3(100, 2).unwrap();
        let a = crossval(&d, 3, 0.99, &small_cfg(9)).unwrap();
        let b = crossval(&d, 3, 0.99, &small_cfg(9)).unwrap();
        assert_eq!(a.report, b.report);
        let tested: usize = a.folds.iter().map(|f| f.tally.n).sum();
        assert_eq!(tested, 100);
        for f in &a.folds {
            assert_eq!(f.ensemble.len(), 20);
        }
        assert_ne!(a.folds[0].seed, a.folds[1].seed);
    }
}
