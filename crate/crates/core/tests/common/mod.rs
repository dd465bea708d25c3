//! Brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use bdt_core::dataset::{Dataset, Feature};
use bdt_core::likelihood::{log_marginal_likelihood, PriorConfig};
use bdt_core::rjmcmc::{log_catalan, ProposalConfig};
use bdt_core::tree::{Node, NodePath, SplitRule, Tree};

pub fn one_feature(xs: &[f64], labels: &[usize]) -> Dataset {
    Dataset::new(
        vec![Feature::continuous("x")],
        xs.to_vec(),
        labels.to_vec(),
        vec!["a".into(), "b".into()],
        None,
    )
    .unwrap()
}

pub fn key(t: &Tree) -> String {
    format!("{:?}", t.to_record())
}

/// Every tree with at most `max_leaves` leaves whose splits use thresholds in
/// `values` on feature 0.
fn shapes(values: &[f64], max_leaves: usize) -> Vec<Node> {
    let mut out = vec![Node::leaf(2)];
    if max_leaves < 2 {
        return out;
    }
    for budget_left in 1..max_leaves {
        let lefts = shapes(values, budget_left);
        for left in &lefts {
            if left.leaf_count() != budget_left {
                continue;
            }
            for right in shapes(values, max_leaves - budget_left) {
                for &v in values {
                    out.push(Node::split(SplitRule::threshold(0, v), left.clone(), right.clone()));
                }
            }
        }
    }
    out
}

fn legal(t: &Tree, p_min: usize) -> bool {
    t.leaves().iter().all(|l| l.n() >= p_min)
}

/// Probability that one (move, location, rule) draw at `t` is executable
/// under the standard strategy with a single continuous feature.
fn availability(t: &Tree, d: &Dataset, values: &[f64], p_min: usize, p: &ProposalConfig, max_leaves: usize) -> f64 {
    let k = t.leaf_count();
    let w = p.weights_at(k, max_leaves);
    let nv = values.len() as f64;
    let mut a = w[1] * f64::from(u8::from(k >= 2));
    if w[0] > 0.0 {
        let mut ok = 0.0;
        for path in t.leaf_paths() {
            for &v in values {
                let mut c = t.clone();
                c.split_leaf(&path, SplitRule::threshold(0, v), d).unwrap();
                ok += f64::from(u8::from(legal(&c, p_min)));
            }
        }
        a += w[0] * ok / (k as f64 * nv);
    }
    if k >= 2 {
        let splits: Vec<NodePath> = t.split_paths();
        let mut ok = 0.0;
        for path in &splits {
            for &v in values {
                let mut c = t.clone();
                c.set_rule(path, SplitRule::threshold(0, v), d).unwrap();
                ok += f64::from(u8::from(legal(&c, p_min)));
            }
        }
        a += (w[2] + w[3]) * ok / (splits.len() as f64 * nv);
    }
    a
}

/// Stationary law of the standard-strategy chain on a one-feature problem.
///
/// Redrawing unavailable proposals makes the chain reversible with respect
/// to `pi(T) A(T)`, where `pi` is the tree posterior (likelihood times the
/// `1/S_k` shape prior times `1/N` per rule) and `A(T)` is the probability
/// that a single draw at `T` is available.
pub fn standard_stationary(d: &Dataset, p_min: usize, p: &ProposalConfig) -> HashMap<String, f64> {
    let mut values: Vec<f64> = (0..d.n()).map(|i| d.value(i, 0)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let max_leaves = d.n() / p_min;
    let prior = PriorConfig::new(2, p_min);
    let mut weights = HashMap::new();
    for root in shapes(&values, max_leaves) {
        let t = Tree::fit(root, d);
        if !legal(&t, p_min) {
            continue;
        }
        let k = t.leaf_count();
        let log_post = log_marginal_likelihood(&t, &prior).unwrap()
            - log_catalan(k).unwrap()
            - (k - 1) as f64 * (values.len() as f64).ln();
        let w = log_post.exp() * availability(&t, d, &values, p_min, p, max_leaves);
        weights.insert(key(&t), w);
    }
    let z: f64 = weights.values().sum();
    weights.values_mut().for_each(|w| *w /= z);
    weights
}

pub fn total_variation(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}
