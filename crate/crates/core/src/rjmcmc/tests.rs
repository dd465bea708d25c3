use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use super::Strategy;
use crate::dataset::{feature_index, gen_xor3, Dataset, Feature, FeatureIndex};
use crate::likelihood::{log_marginal_likelihood, LeafScorer};
use crate::seed::rng;
use crate::tree::{NodePath, Predicate, SplitRule};

/// Exact Catalan numbers by the recurrence `C_{k+1} = C_k 2(2k+1)/(k+2)`.
fn catalan_exact(k: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c
}

#[test]
fn catalan_matches_integers() {
    assert_eq!(catalan_exact(3), 5);
    assert_eq!(catalan_exact(25), 4_861_946_401_452);
    assert!(log_catalan(1).unwrap().abs() < 1e-14);
    assert!((log_catalan(3).unwrap() - 5f64.ln()).abs() < 1e-12);
    for k in 1..=30 {
        let exact = (catalan_exact(k) as f64).ln();
        let got = log_catalan(k).unwrap();
        let rel = if exact == 0.0 { got.abs() } else { ((got - exact) / exact).abs() };
        assert!(rel < 1e-10, "k={k}: {got} vs {exact}");
    }
    assert!((log_catalan(25).unwrap() - 4.86e12f64.ln()).abs() < 0.01);
    assert_eq!(log_catalan(0), None);
}

#[test]
fn chipman_values() {
    for d in 0..5 {
        assert_eq!(chipman_split_prior(d, 0.7, 0.0).unwrap(), 0.7);
    }
    assert!((chipman_split_prior(1, 0.5, 1.0).unwrap() - 0.25).abs() < 1e-15);
    let mut last = 1.0;
    for d in 0..50 {
        let p = chipman_split_prior(d, 0.9, 2.0).unwrap();
        assert!(p < last);
        last = p;
    }
    assert!(last < 1e-3);
    assert!(chipman_split_prior(0, 1.1, 1.0).is_err());
    assert!(chipman_split_prior(0, -0.1, 1.0).is_err());
}

#[test]
fn proposal_config_checks_and_boundary_weights() {
    let p = ProposalConfig::default();
    assert!(p.validate().is_ok());
    assert!(ProposalConfig { p_birth: 0.2, ..p.clone() }.validate().is_err());
    assert!(ProposalConfig { sigma: 0.0, ..p.clone() }.validate().is_err());
    assert_eq!(p.weights_at(1, 10), [1.0, 0.0, 0.0, 0.0]);
    let top = p.weights_at(10, 10);
    assert_eq!(top[0], 0.0);
    assert!((top[1] - 0.1 / 0.9).abs() < 1e-15);
    assert_eq!(p.weights_at(5, 10), p.probabilities());
    let mut r = rng(4);
    let mut hits = [0usize; 4];
    for _ in 0..20_000 {
        hits[p.draw_kind(5, 10, &mut r).unwrap() as usize] += 1;
    }
    for (h, q) in hits.iter().zip(p.probabilities()) {
        let se = (q * (1.0 - q) / 20_000.0).sqrt();
        assert!((*h as f64 / 20_000.0 - q).abs() < 4.0 * se, "{hits:?}");
    }
}

fn line_data(xs: &[f64], labels: &[usize]) -> Dataset {
    Dataset::new(
        vec![Feature::continuous("x")],
        xs.to_vec(),
        labels.to_vec(),
        vec!["a".into(), "b".into()],
        None,
    )
    .unwrap()
}

struct Fixture {
    data: Dataset,
    index: FeatureIndex,
    scorer: LeafScorer,
    proposal: ProposalConfig,
}

impl Fixture {
    fn new(data: Dataset) -> Self {
        let index = feature_index(&data).unwrap();
        let scorer = LeafScorer::new(&vec![1.0; data.class_count()]);
        Fixture { data, index, scorer, proposal: ProposalConfig::default() }
    }

    fn ctx(&self, strategy: Strategy, p_min: usize) -> MoveContext<'_> {
        MoveContext {
            data: &self.data,
            index: &self.index,
            scorer: &self.scorer,
            strategy,
            proposal: &self.proposal,
            p_min,
            max_leaves: self.data.n() / p_min.max(1),
        }
    }
}

fn scored(mut t: Tree, f: &Fixture) -> Tree {
    let ll = t.leaves().iter().map(|l| f.scorer.score(l.counts())).sum();
    t.set_cached_log_likelihood(ll);
    t
}

#[test]
fn first_birth_and_last_death_ratios() {
    let f = Fixture::new(line_data(&[0., 1., 2., 3., 4., 5.], &[0, 0, 0, 1, 1, 1]));
    let ctx = f.ctx(Strategy::Standard, 1);
    let t = scored(Tree::single_leaf(&f.data), &f);
    let mut r = rng(1);
    let p = loop {
        if let Ok(p) = propose_birth(&t, &ctx, &mut r) {
            break p;
        }
    };
    let b1 = f.proposal.weights_at(1, ctx.max_leaves)[0];
    let d2 = f.proposal.weights_at(2, ctx.max_leaves)[1];
    // with b = d the ratio is ln 1 - ln 1 + ln(S_1 / S_2) = -ln 2
    assert!((p.log_proposal_ratio - (d2 / b1).ln() + 2f64.ln()).abs() < 1e-12);

    let back = propose_death(&p.candidate, &ctx, &mut r).unwrap();
    assert_eq!(back.candidate.leaf_count(), 1);
    assert_eq!(back.candidate.leaves()[0].counts(), &[3, 3]);
    assert!((back.log_proposal_ratio - (b1 / d2).ln() - 2f64.ln()).abs() < 1e-12);
    assert!((back.candidate.cached_log_likelihood().unwrap() - t.cached_log_likelihood().unwrap()).abs() < 1e-12);
    assert_eq!(propose_death(&t, &ctx, &mut r).unwrap_err(), MoveError::NoPrunableNode);
}

#[test]
fn change_moves_edge_cases() {
    let xs: Vec<f64> = (0..10).map(f64::from).collect();
    let f = Fixture::new(line_data(&xs, &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]));
    let t = scored(
        Tree::fit(
            crate::tree::Node::split(SplitRule::threshold(0, 4.0), crate::tree::Node::leaf(2), crate::tree::Node::leaf(2)),
            &f.data,
        ),
        &f,
    );
    let mut r = rng(3);
    // p_min = 5 admits only the current threshold: every other draw is unavailable
    let ctx = f.ctx(Strategy::Standard, 5);
    let mut same = 0;
    for _ in 0..200 {
        match propose_change_rule(&t, &ctx, &mut r) {
            Ok(p) => {
                assert_eq!(p.candidate.to_record(), t.to_record());
                assert_eq!(p.log_likelihood_delta, 0.0);
                same += 1;
            }
            Err(e) => assert_eq!(e, MoveError::Unavailable),
        }
    }
    assert!(same > 0 && same < 200);
    let single = scored(Tree::single_leaf(&f.data), &f);
    assert_eq!(propose_change_split(&single, &ctx, &mut r).unwrap_err(), MoveError::NoSplitNode);
}

#[test]
fn change_on_xor3_to_noise_feature_lowers_likelihood() {
    let d = gen_xor3(400, 5).unwrap();
    let f = Fixture::new(d);
    use crate::tree::Node;
    let oracle = Node::split(
        SplitRule::threshold(0, 0.0),
        Node::split(SplitRule::threshold(1, 0.0), Node::leaf(2), Node::leaf(2)),
        Node::split(SplitRule::threshold(1, 0.0), Node::leaf(2), Node::leaf(2)),
    );
    let t = scored(Tree::fit(oracle, &f.data), &f);
    let mut c = t.clone();
    c.set_rule(&NodePath::root(), SplitRule::threshold(2, 0.0), &f.data).unwrap();
    let full = log_marginal_likelihood(&c, &crate::likelihood::PriorConfig::new(2, 1)).unwrap();
    assert!(full < t.cached_log_likelihood().unwrap());
    let flipped = c
        .leaves()
        .iter()
        .zip(t.leaves())
        .any(|(a, b)| (a.counts()[0] > a.counts()[1]) != (b.counts()[0] > b.counts()[1]));
    assert!(flipped);
}

#[test]
fn standard_change_rule_is_uniform_over_observed_values() {
    // values {1, 2, 3}; p_min = 0 so every draw is executed
    let f = Fixture::new(line_data(&[1., 1., 2., 2., 3., 3.], &[0, 1, 0, 1, 0, 1]));
    use crate::tree::Node;
    let t = scored(
        Tree::fit(Node::split(SplitRule::threshold(0, 1.0), Node::leaf(2), Node::leaf(2)), &f.data),
        &f,
    );
    let ctx = f.ctx(Strategy::Standard, 0);
    let mut r = rng(11);
    let mut hits = [0f64; 3];
    let draws = 10_000;
    for _ in 0..draws {
        let p = propose_change_rule(&t, &ctx, &mut r).unwrap();
        let Predicate::Threshold(x) = p.candidate.rule_at(&NodePath::root()).unwrap().predicate else {
            panic!()
        };
        hits[x as usize - 1] += 1.0;
    }
    let e = draws as f64 / 3.0;
    let chi2: f64 = hits.iter().map(|h| (h - e).powi(2) / e).sum();
    // chi-square, 2 degrees of freedom, 1% critical value
    assert!(chi2 < 9.21, "{hits:?} chi2={chi2}");
}

#[test]
fn sweeping_gaussian_walk_law() {
    let f = Fixture::new(line_data(&[-100., 100.], &[0, 1]));
    let rule = SplitRule::threshold(0, 0.0);
    let mut r = rng(12);
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let got = crate::sweeping::draw_rule_gaussian(&rule, 1.0, &f.index, &mut r).unwrap();
            let Predicate::Threshold(x) = got.predicate else { panic!() };
            x
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    // standard errors of the mean and of the sd
    assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    assert!((sd - 1.0).abs() < 3.0 / (2.0 * n as f64).sqrt(), "sd {sd}");
}

#[test]
fn accept_rules() {
    let f = Fixture::new(line_data(&[0., 1., 2., 3.], &[0, 0, 1, 1]));
    let t = scored(Tree::single_leaf(&f.data), &f);
    let prior = crate::likelihood::PriorConfig::new(2, 1);
    let mut r = rng(1);
    for _ in 0..100 {
        assert!(accept(&t, &t, 0.0, &prior, &mut r).unwrap());
    }
    assert!(!accept_log_ratio(f64::NEG_INFINITY, &mut r));
    assert!(!accept_log_ratio(f64::NAN, &mut r));
    assert!(accept_log_ratio(f64::INFINITY, &mut r));
    let hits = (0..20_000).filter(|_| accept_log_ratio(0.5f64.ln(), &mut r)).count();
    assert!((hits as f64 / 20_000.0 - 0.5).abs() < 0.015);
}

#[test]
fn chipman_adjustment_swaps_the_shape_prior() {
    let f = Fixture::new(line_data(&[0., 1., 2., 3.], &[0, 0, 1, 1]));
    let one = Tree::single_leaf(&f.data);
    let mut two = one.clone();
    two.split_leaf(&NodePath::root(), SplitRule::threshold(0, 1.0), &f.data).unwrap();
    assert_eq!(log_tree_prior_adjustment(&crate::likelihood::TreePrior::Uniform, &one, &two), 0.0);
    let (g, d) = (0.5, 1.0);
    // P(one) = 1 - 0.5; P(two) = 0.5 (1 - 0.25)^2
    let want = (0.5f64 * 0.75 * 0.75).ln() - 0.5f64.ln() - (0.0 - 2f64.ln());
    let got = log_tree_prior_adjustment(&crate::likelihood::TreePrior::Chipman { gamma: g, delta: d }, &one, &two);
    assert!((got - want).abs() < 1e-12);
}

fn random_tree(f: &Fixture, ctx: &MoveContext<'_>, births: usize, r: &mut crate::seed::Rng) -> Tree {
    let mut t = scored(Tree::single_leaf(&f.data), f);
    for _ in 0..births * 20 {
        if t.leaf_count() > births {
            break;
        }
        if let Ok(p) = propose_birth(&t, ctx, r) {
            t = p.candidate;
        }
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn birth_death_reciprocity(seed in any::<u64>(), births in 0usize..8, strategy in prop_oneof![Just(Strategy::Standard), Just(Strategy::Sweeping)]) {
        let f = Fixture::new(gen_xor3(80, seed).unwrap());
        let ctx = f.ctx(strategy, 2);
        let mut r = rng(seed ^ 0xabc);
        let t = random_tree(&f, &ctx, births, &mut r);
        for _ in 0..16 {
            let Ok(p) = propose_birth(&t, &ctx, &mut r) else { continue };
            let back = propose_death(&p.candidate, &ctx, &mut r).unwrap();
            prop_assert!((p.log_proposal_ratio + back.log_proposal_ratio).abs() < 1e-10);
        }
    }

    #[test]
    fn proposals_keep_leaves_legal(seed in any::<u64>(), strategy in prop_oneof![Just(Strategy::Standard), Just(Strategy::Sweeping)]) {
        let f = Fixture::new(gen_xor3(60, seed).unwrap());
        let ctx = f.ctx(strategy, 4);
        let mut r = rng(seed);
        let mut t = random_tree(&f, &ctx, 4, &mut r);
        for _ in 0..200 {
            let kind = MoveKind::ALL[r.random_range(0..4)];
            if let Ok(p) = propose(kind, &t, &ctx, &mut r) {
                prop_assert!(p.candidate.leaves().iter().all(|l| l.n() >= 4));
                let full: f64 = p.candidate.leaves().iter().map(|l| f.scorer.score(l.counts())).sum();
                prop_assert!((full - p.candidate.cached_log_likelihood().unwrap()).abs() < 1e-9);
                t = p.candidate;
            }
        }
    }
}

fn cfg(strategy: Strategy, p_min: usize, burn_in: usize, post: usize, seed: u64) -> ChainConfig {
    ChainConfig {
        burn_in,
        post_burn_in: post,
        ..ChainConfig::new(strategy, crate::likelihood::PriorConfig::new(2, p_min), seed)
    }
}

#[test]
fn incremental_likelihood_tracks_full_recompute() {
    let d = gen_xor3(300, 21).unwrap();
    let prior = crate::likelihood::PriorConfig::new(2, 3);
    for strategy in [Strategy::Standard, Strategy::Sweeping] {
        let mut chain = Chain::new(&d, cfg(strategy, 3, 0, 1, 5)).unwrap();
        for _ in 0..1000 {
            let rec = chain.step();
            let full = log_marginal_likelihood(chain.current(), &prior).unwrap();
            assert!((full - rec.log_likelihood).abs() < 1e-9, "{full} vs {}", rec.log_likelihood);
            assert_eq!(rec.split_count + 1, chain.current().leaf_count());
        }
    }
}

#[test]
fn ensemble_size_and_trace_length() {
    let d = gen_xor3(100, 1).unwrap();
    let (e, diag) = run_chain(&d, &cfg(Strategy::Sweeping, 5, 10, 7, 1)).unwrap();
    assert_eq!(e.len(), 1);
    assert_eq!(e.iterations, vec![16]);
    assert_eq!(diag.trace.len(), 17);
    let (e, diag) = run_chain(&d, &cfg(Strategy::Standard, 5, 50, 100, 1)).unwrap();
    assert_eq!(e.len(), 14);
    assert_eq!(diag.trace.len(), 150);
    assert!((0.0..=1.0).contains(&diag.acceptance_rate));
    assert!((0.0..=1.0).contains(&diag.resample_rate));
    assert_eq!(diag.proposed + diag.stalled, 100);
}

#[test]
fn same_seed_same_chain() {
    let d = gen_xor3(120, 2).unwrap();
    for strategy in [Strategy::Standard, Strategy::Sweeping] {
        let a = run_chain(&d, &cfg(strategy, 5, 200, 300, 77)).unwrap();
        let b = run_chain(&d, &cfg(strategy, 5, 200, 300, 77)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        let c = run_chain(&d, &cfg(strategy, 5, 200, 300, 78)).unwrap();
        assert_ne!(a.1.trace, c.1.trace);
    }
}

#[test]
fn too_small_or_unsplittable_data() {
    let d = line_data(&[0., 1., 2., 3.], &[0, 1, 0, 1]);
    assert!(matches!(
        Chain::new(&d, cfg(Strategy::Standard, 3, 0, 1, 1)),
        Err(ChainError::TooSmall { .. })
    ));
    let constant = line_data(&[1., 1., 1., 1.], &[0, 1, 0, 1]);
    assert!(matches!(
        Chain::new(&constant, cfg(Strategy::Standard, 1, 0, 1, 1)),
        Err(ChainError::NoLegalSplit(1))
    ));
    let mut bad = cfg(Strategy::Standard, 1, 0, 1, 1);
    bad.thin = 0;
    assert!(matches!(Chain::new(&d, bad), Err(ChainError::Config(_))));
}

#[test]
fn chain_artifacts_round_trip() {
    let d = gen_xor3(100, 3).unwrap();
    let (e, diag) = run_chain(&d, &cfg(Strategy::Sweeping, 5, 20, 70, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_chain_dir(dir.path(), &e, &diag).unwrap();
    let back = read_chain_jsonl(&dir.path().join("chain.jsonl"), 2).unwrap();
    assert_eq!(back.len(), e.len());
    for ((it, t), (t0, it0)) in back.iter().zip(e.trees.iter().zip(&e.iterations)) {
        assert_eq!(it, it0);
        assert_eq!(t.to_record(), t0.to_record());
    }
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 91);
    let raw = std::fs::read_to_string(dir.path().join("diag.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(json["swept_count"], diag.swept);
    assert_eq!(json["resampled_count"], diag.unavailable);
    let summary: ChainSummary = serde_json::from_str(&raw).unwrap();
    assert_eq!(summary.ensemble_size, 10);
    assert_eq!(summary.config, e.config);
}
