//! Uncertainty Envelope.
//!
//! Each ensemble member casts a hard vote; the fraction agreeing with the
//! plurality is the consistency `gamma`. At threshold `gamma0` a datum is
//! confident-correct, confident-incorrect, or uncertain.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::rjmcmc::Ensemble;
use crate::tree::{predict_leaf_posterior, Tree, TreeError};

pub const DEFAULT_GAMMA0: f64 = 0.99;

/// `votes[member][datum]`, 0-based class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    pub class_count: usize,
    pub votes: Vec<Vec<usize>>,
    pub targets: Option<Vec<usize>>,
    /// Eq.-17-style averaged class posterior, `soft[datum][class]`.
    pub soft: Option<Vec<Vec<f64>>>,
}

impl VoteMatrix {
    pub fn new(class_count: usize, votes: Vec<Vec<usize>>, targets: Option<Vec<usize>>) -> Self {
        VoteMatrix {
            class_count,
            votes,
            targets,
            soft: None,
        }
    }

    pub fn members(&self) -> usize {
        self.votes.len()
    }

    pub fn data_len(&self) -> usize {
        self.votes.first().map_or(0, Vec::len)
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Hard votes of every tree on every row of `d`, plus the averaged posterior.
pub fn ensemble_votes(e: &Ensemble, d: &Dataset, alpha: &[f64]) -> Result<VoteMatrix, TreeError> {
    trees_votes(&e.trees, d, alpha)
}

pub fn trees_votes(trees: &[Tree], d: &Dataset, alpha: &[f64]) -> Result<VoteMatrix, TreeError> {
    let c = d.class_count();
    let kinds = d.kinds();
    let mut soft = vec![vec![0.0; c]; d.n()];
    let mut votes = Vec::with_capacity(trees.len());
    for t in trees {
        t.check_schema(&kinds)?;
        let mut row = Vec::with_capacity(d.n());
        for (i, acc) in soft.iter_mut().enumerate() {
            let post = predict_leaf_posterior(t.route_leaf(d.row(i))?, alpha);
            for (a, p) in acc.iter_mut().zip(&post) {
                *a += p;
            }
            row.push(argmax_lowest(&post));
        }
        votes.push(row);
    }
    if !trees.is_empty() {
        let n = trees.len() as f64;
        soft.iter_mut().flatten().for_each(|p| *p /= n);
    }
    Ok(VoteMatrix {
        class_count: c,
        votes,
        targets: Some(d.labels().to_vec()),
        soft: Some(soft),
    })
}

/// Plurality class (lowest id on ties) and the fraction voting for it.
pub fn consistency(v: &VoteMatrix, datum: usize) -> (usize, f64) {
    let mut counts = vec![0usize; v.class_count];
    for member in &v.votes {
        counts[member[datum]] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    (best, counts[best] as f64 / v.members() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "CC")]
    ConfidentCorrect,
    #[serde(rename = "CI")]
    ConfidentIncorrect,
    #[serde(rename = "U")]
    Uncertain,
}

impl Outcome {
    pub fn code(self) -> &'static str {
        match self {
            Outcome::ConfidentCorrect => "CC",
            Outcome::ConfidentIncorrect => "CI",
            Outcome::Uncertain => "U",
        }
    }
}

pub fn classify_outcome(predicted: usize, gamma: f64, target: usize, gamma0: f64) -> Outcome {
    if gamma < gamma0 {
        Outcome::Uncertain
    } else if predicted == target {
        Outcome::ConfidentCorrect
    } else {
        Outcome::ConfidentIncorrect
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("gamma0 = {gamma0} must lie in (1/C, 1] = ({}, 1]", 1.0 / *.classes as f64)]
    Gamma0 { gamma0: f64, classes: usize },
    #[error("vote matrix has no targets")]
    MissingTargets,
    #[error("vote matrix has no members")]
    Empty,
    #[error("no folds to aggregate")]
    NoFolds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatumResult {
    pub index: usize,
    pub target: usize,
    pub predicted: usize,
    pub gamma: f64,
    pub outcome: Outcome,
    /// Averaged posterior of the predicted class.
    pub soft_prob: Option<f64>,
}

/// Outcome counts of one test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTally {
    pub n: usize,
    pub correct: usize,
    pub cc: usize,
    pub ci: usize,
    pub u: usize,
    /// Mean split-node count over the fold's ensemble.
    pub nodes: f64,
    pub leaves: f64,
}

impl FoldTally {
    fn pct(&self, x: usize) -> f64 {
        100.0 * x as f64 / self.n as f64
    }
    pub fn accuracy(&self) -> f64 {
        self.pct(self.correct)
    }
    pub fn cc_pct(&self) -> f64 {
        self.pct(self.cc)
    }
    pub fn ci_pct(&self) -> f64 {
        self.pct(self.ci)
    }
    pub fn u_pct(&self) -> f64 {
        self.pct(self.u)
    }
}

/// Per-datum outcomes and their tally. `nodes`/`leaves` are carried into the
/// tally unchanged.
pub fn evaluate(v: &VoteMatrix, gamma0: f64, nodes: f64, leaves: f64) -> Result<(Vec<DatumResult>, FoldTally), EnvelopeError> {
    let c = v.class_count;
    if !(gamma0 > 1.0 / c as f64 && gamma0 <= 1.0) {
        return Err(EnvelopeError::Gamma0 { gamma0, classes: c });
    }
    let targets = v.targets.as_ref().ok_or(EnvelopeError::MissingTargets)?;
    if v.members() == 0 {
        return Err(EnvelopeError::Empty);
    }
    let mut tally = FoldTally {
        n: targets.len(),
        correct: 0,
        cc: 0,
        ci: 0,
        u: 0,
        nodes,
        leaves,
    };
    let mut rows = Vec::with_capacity(targets.len());
    for (i, &target) in targets.iter().enumerate() {
        let (predicted, gamma) = consistency(v, i);
        let outcome = classify_outcome(predicted, gamma, target, gamma0);
        tally.correct += usize::from(predicted == target);
        match outcome {
            Outcome::ConfidentCorrect => tally.cc += 1,
            Outcome::ConfidentIncorrect => tally.ci += 1,
            Outcome::Uncertain => tally.u += 1,
        }
        rows.push(DatumResult {
            index: i,
            target,
            predicted,
            gamma,
            outcome,
            soft_prob: v.soft.as_ref().map(|s| s[i][predicted]),
        });
    }
    Ok((rows, tally))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub two_sigma: f64,
}

impl Band {
    /// Mean and twice the sample (n - 1) standard deviation; 0 for one value.
    pub fn of(xs: &[f64]) -> Band {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Band { mean, two_sigma: 2.0 * sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Band,
    pub cc: Band,
    pub ci: Band,
    pub u: Band,
    /// Split nodes per tree.
    pub nodes: Band,
    pub leaves: Band,
}

/// The aggregate under the table's column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(rename = "Number of DT nodes")]
    pub nodes: Band,
    #[serde(rename = "Perform, %")]
    pub perform: Band,
    #[serde(rename = "Sure correct, %")]
    pub sure_correct: Band,
    #[serde(rename = "Uncertain, %")]
    pub uncertain: Band,
    #[serde(rename = "Sure incorrect, %")]
    pub sure_incorrect: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub gamma0: f64,
    pub per_fold: Vec<FoldTally>,
    pub aggregate: Aggregate,
    pub table: TableRow,
}

pub fn aggregate_report(folds: &[FoldTally], gamma0: f64) -> Result<EnvelopeReport, EnvelopeError> {
    if folds.is_empty() {
        return Err(EnvelopeError::NoFolds);
    }
    let band = |f: fn(&FoldTally) -> f64| Band::of(&folds.iter().map(f).collect::<Vec<_>>());
    let aggregate = Aggregate {
        accuracy: band(FoldTally::accuracy),
        cc: band(FoldTally::cc_pct),
        ci: band(FoldTally::ci_pct),
        u: band(FoldTally::u_pct),
        nodes: band(|f| f.nodes),
        leaves: band(|f| f.leaves),
    };
    let table = TableRow {
        nodes: aggregate.nodes,
        perform: aggregate.accuracy,
        sure_correct: aggregate.cc,
        uncertain: aggregate.u,
        sure_incorrect: aggregate.ci,
    };
    Ok(EnvelopeReport {
        gamma0,
        per_fold: folds.to_vec(),
        aggregate,
        table,
    })
}

/// `index,target,predicted,gamma,outcome,soft_prob`, class names for classes.
pub fn write_datum_csv<W: Write>(out: W, rows: &[DatumResult], class_names: &[String]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "target", "predicted", "gamma", "outcome", "soft_prob"])?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            class_names[r.target].clone(),
            class_names[r.predicted].clone(),
            format!("{:.6}", r.gamma),
            r.outcome.code().to_string(),
            r.soft_prob.map_or(String::new(), |p| format!("{p:.6}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}
