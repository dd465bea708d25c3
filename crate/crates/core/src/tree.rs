//! Binary decision trees with per-leaf class statistics.
//!
//! Nodes are addressed by [`NodePath`], the sequence of left/right turns from
//! the root. Leaves keep the indices of the training rows they hold so that a
//! move only has to redistribute the rows of the subtree it touches.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("rule on feature {feature} but the input has {len} features")]
    DimensionMismatch { feature: usize, len: usize },
    #[error("rule on feature {feature} does not match the feature kind")]
    KindMismatch { feature: usize },
    #[error("no node at {0}")]
    NoSuchNode(NodePath),
    #[error("node at {0} is not a leaf")]
    NotALeaf(NodePath),
    #[error("node at {0} is not a split with two leaf children")]
    NotPrunable(NodePath),
    #[error("node at {0} has no parent")]
    NoParent(NodePath),
    #[error("tree has no splits")]
    NoSplits,
}

pub type Result<T> = std::result::Result<T, TreeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predicate {
    /// `x <= t` goes left.
    Threshold(f64),
    /// `x == v` goes left.
    Category(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub predicate: Predicate,
}

impl SplitRule {
    pub fn threshold(feature: usize, t: f64) -> Self {
        SplitRule {
            feature,
            predicate: Predicate::Threshold(t),
        }
    }

    pub fn category(feature: usize, v: usize) -> Self {
        SplitRule {
            feature,
            predicate: Predicate::Category(v),
        }
    }

    /// Flagged (`NaN`) cells never go left.
    #[inline]
    pub fn goes_left(&self, x: f64) -> bool {
        match self.predicate {
            Predicate::Threshold(t) => x <= t,
            Predicate::Category(v) => x == v as f64,
        }
    }

    pub fn check(&self, kinds: &[FeatureKind]) -> Result<()> {
        let kind = kinds.get(self.feature).ok_or(TreeError::DimensionMismatch {
            feature: self.feature,
            len: kinds.len(),
        })?;
        match (self.predicate, kind) {
            (Predicate::Threshold(_), FeatureKind::Continuous) => Ok(()),
            (Predicate::Category(v), FeatureKind::Nominal(count)) if v < *count => Ok(()),
            _ => Err(TreeError::KindMismatch {
                feature: self.feature,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePath(Vec<Side>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, side: Side) -> Self {
        let mut p = self.0.clone();
        p.push(side);
        NodePath(p)
    }

    pub fn parent(&self) -> Option<NodePath> {
        let (_, head) = self.0.split_last()?;
        Some(NodePath(head.to_vec()))
    }

    pub fn last(&self) -> Option<Side> {
        self.0.last().copied()
    }

    /// Number of splits above the node.
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_prefix_of(&self, other: &NodePath) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn sides(&self) -> &[Side] {
        &self.0
    }
}

impl std::fmt::Display for NodePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        for s in &self.0 {
            f.write_str(match s {
                Side::Left => "L",
                Side::Right => "R",
            })?;
        }
        Ok(())
    }
}

impl From<Vec<Side>> for NodePath {
    fn from(v: Vec<Side>) -> Self {
        NodePath(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    members: Vec<u32>,
    counts: Vec<u32>,
}

impl Leaf {
    pub fn empty(class_count: usize) -> Self {
        Leaf {
            members: Vec::new(),
            counts: vec![0; class_count],
        }
    }

    pub fn with_counts(counts: Vec<u32>) -> Self {
        Leaf {
            members: Vec::new(),
            counts,
        }
    }

    fn assign(&mut self, members: Vec<u32>, d: &Dataset) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for &i in &members {
            self.counts[d.label(i as usize)] += 1;
        }
        self.members = members;
    }

    /// Number of training points `n_i`.
    pub fn n(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Per-class counts `m_ij`.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Leaf),
    Split {
        rule: SplitRule,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn split(rule: SplitRule, left: Node, right: Node) -> Node {
        Node::Split {
            rule,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn leaf(class_count: usize) -> Node {
        Node::Leaf(Leaf::empty(class_count))
    }

    fn child(&self, side: Side) -> Option<&Node> {
        match self {
            Node::Leaf(_) => None,
            Node::Split { left, right, .. } => Some(match side {
                Side::Left => left,
                Side::Right => right,
            }),
        }
    }

    fn child_mut(&mut self, side: Side) -> Option<&mut Node> {
        match self {
            Node::Leaf(_) => None,
            Node::Split { left, right, .. } => Some(match side {
                Side::Left => left,
                Side::Right => right,
            }),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn visit<'a>(&'a self, path: &mut Vec<Side>, f: &mut impl FnMut(&[Side], &'a Node)) {
        f(path, self);
        if let Node::Split { left, right, .. } = self {
            path.push(Side::Left);
            left.visit(path, f);
            path.pop();
            path.push(Side::Right);
            right.visit(path, f);
            path.pop();
        }
    }

    /// Leaves in preorder.
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.visit(&mut Vec::new(), &mut |_, n| {
            if let Node::Leaf(l) = n {
                out.push(l);
            }
        });
        out
    }

    fn take_members(&mut self, out: &mut Vec<u32>) {
        match self {
            Node::Leaf(l) => out.append(&mut l.members),
            Node::Split { left, right, .. } => {
                left.take_members(out);
                right.take_members(out);
            }
        }
    }

    fn distribute(&mut self, members: Vec<u32>, d: &Dataset) {
        match self {
            Node::Leaf(l) => l.assign(members, d),
            Node::Split { rule, left, right } => {
                let (l, r): (Vec<u32>, Vec<u32>) = members
                    .into_iter()
                    .partition(|&i| rule.goes_left(d.value(i as usize, rule.feature)));
                left.distribute(l, d);
                right.distribute(r, d);
            }
        }
    }

    /// Routes every member of this subtree down again from here.
    pub fn refit(&mut self, d: &Dataset) {
        let mut members = Vec::new();
        self.take_members(&mut members);
        members.sort_unstable();
        self.distribute(members, d);
    }

    fn strip(&mut self) {
        match self {
            Node::Leaf(l) => l.members = Vec::new(),
            Node::Split { left, right, .. } => {
                left.strip();
                right.strip();
            }
        }
    }
}

/// Preorder leaf ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    root: Node,
    class_count: usize,
    fitted: bool,
    log_likelihood: Option<f64>,
}

impl Tree {
    /// One leaf holding every row of `d`.
    pub fn single_leaf(d: &Dataset) -> Tree {
        let mut leaf = Leaf::empty(d.class_count());
        leaf.assign((0..d.n() as u32).collect(), d);
        Tree {
            root: Node::Leaf(leaf),
            class_count: d.class_count(),
            fitted: true,
            log_likelihood: None,
        }
    }

    /// A tree with the given structure and no data routed yet.
    pub fn from_root(root: Node, class_count: usize) -> Tree {
        Tree {
            root,
            class_count,
            fitted: false,
            log_likelihood: None,
        }
    }

    /// Structure of `root` with all rows of `d` routed through it.
    pub fn fit(root: Node, d: &Dataset) -> Tree {
        let mut t = Tree::from_root(root, d.class_count());
        t.refit_leaves(d);
        t
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn cached_log_likelihood(&self) -> Option<f64> {
        self.log_likelihood
    }

    pub fn set_cached_log_likelihood(&mut self, value: f64) {
        self.log_likelihood = Some(value);
    }

    /// Number of leaves `k`.
    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn split_count(&self) -> usize {
        self.leaf_count() - 1
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        self.root.leaves()
    }

    fn paths_where(&self, pred: impl Fn(&Node) -> bool) -> Vec<NodePath> {
        let mut out = Vec::new();
        self.root.visit(&mut Vec::new(), &mut |p, n| {
            if pred(n) {
                out.push(NodePath(p.to_vec()));
            }
        });
        out
    }

    pub fn leaf_paths(&self) -> Vec<NodePath> {
        self.paths_where(Node::is_leaf)
    }

    pub fn split_paths(&self) -> Vec<NodePath> {
        self.paths_where(|n| !n.is_leaf())
    }

    /// Splits whose two children are both leaves.
    pub fn prunable_paths(&self) -> Vec<NodePath> {
        self.paths_where(is_prunable)
    }

    pub fn prunable_count(&self) -> usize {
        let mut count = 0;
        self.root.visit(&mut Vec::new(), &mut |_, n| {
            if is_prunable(n) {
                count += 1;
            }
        });
        count
    }

    pub fn node(&self, path: &NodePath) -> Option<&Node> {
        path.0.iter().try_fold(&self.root, |n, &s| n.child(s))
    }

    fn node_mut(&mut self, path: &NodePath) -> Result<&mut Node> {
        let mut n = &mut self.root;
        for &s in &path.0 {
            n = n
                .child_mut(s)
                .ok_or_else(|| TreeError::NoSuchNode(path.clone()))?;
        }
        Ok(n)
    }

    pub fn rule_at(&self, path: &NodePath) -> Option<SplitRule> {
        match self.node(path)? {
            Node::Split { rule, .. } => Some(*rule),
            Node::Leaf(_) => None,
        }
    }

    /// Leaves of the subtree at `path`, preorder.
    pub fn leaves_under(&self, path: &NodePath) -> Vec<&Leaf> {
        self.node(path).map(Node::leaves).unwrap_or_default()
    }

    pub fn check_schema(&self, kinds: &[FeatureKind]) -> Result<()> {
        let mut res = Ok(());
        self.root.visit(&mut Vec::new(), &mut |_, n| {
            if let Node::Split { rule, .. } = n {
                if res.is_ok() {
                    res = rule.check(kinds);
                }
            }
        });
        res
    }

    /// The leaf `x` falls into.
    pub fn route_leaf(&self, x: &[f64]) -> Result<&Leaf> {
        let mut n = &self.root;
        loop {
            match n {
                Node::Leaf(l) => return Ok(l),
                Node::Split { rule, left, right } => {
                    let v = *x.get(rule.feature).ok_or(TreeError::DimensionMismatch {
                        feature: rule.feature,
                        len: x.len(),
                    })?;
                    n = if rule.goes_left(v) { left } else { right };
                }
            }
        }
    }

    pub fn route(&self, x: &[f64]) -> Result<LeafId> {
        let mut n = &self.root;
        let mut skipped = 0;
        loop {
            match n {
                Node::Leaf(_) => return Ok(LeafId(skipped)),
                Node::Split { rule, left, right } => {
                    let v = *x.get(rule.feature).ok_or(TreeError::DimensionMismatch {
                        feature: rule.feature,
                        len: x.len(),
                    })?;
                    if rule.goes_left(v) {
                        n = left;
                    } else {
                        skipped += left.leaf_count();
                        n = right;
                    }
                }
            }
        }
    }

    /// Recomputes every leaf's membership and counts from all rows of `d`.
    pub fn refit_leaves(&mut self, d: &Dataset) {
        self.root.distribute((0..d.n() as u32).collect(), d);
        self.fitted = true;
        self.log_likelihood = None;
    }

    /// Replaces the leaf at `path` by a split on `rule` and routes its rows.
    pub fn split_leaf(&mut self, path: &NodePath, rule: SplitRule, d: &Dataset) -> Result<()> {
        let class_count = self.class_count;
        let node = self.node_mut(path)?;
        let Node::Leaf(leaf) = node else {
            return Err(TreeError::NotALeaf(path.clone()));
        };
        let members = std::mem::take(&mut leaf.members);
        let mut split = Node::split(rule, Node::leaf(class_count), Node::leaf(class_count));
        split.distribute(members, d);
        *node = split;
        self.log_likelihood = None;
        Ok(())
    }

    /// Turns a split with two leaf children into one leaf holding both.
    pub fn merge(&mut self, path: &NodePath) -> Result<()> {
        let node = self.node_mut(path)?;
        let Node::Split { left, right, .. } = node else {
            return Err(TreeError::NotPrunable(path.clone()));
        };
        let (Node::Leaf(l), Node::Leaf(r)) = (left.as_mut(), right.as_mut()) else {
            return Err(TreeError::NotPrunable(path.clone()));
        };
        let mut members = std::mem::take(&mut l.members);
        members.append(&mut r.members);
        members.sort_unstable();
        let counts = l.counts.iter().zip(&r.counts).map(|(a, b)| a + b).collect();
        *node = Node::Leaf(Leaf { members, counts });
        self.log_likelihood = None;
        Ok(())
    }

    /// Sets the rule of the split at `path` and refits its subtree.
    pub fn set_rule(&mut self, path: &NodePath, new_rule: SplitRule, d: &Dataset) -> Result<()> {
        let node = self.node_mut(path)?;
        let Node::Split { rule, .. } = node else {
            return Err(TreeError::NoSuchNode(path.clone()));
        };
        *rule = new_rule;
        node.refit(d);
        self.log_likelihood = None;
        Ok(())
    }

    /// Removes the leaf at `path` together with its parent split; the sibling
    /// subtree takes the parent's place and receives the parent's rows.
    pub fn remove_leaf(&mut self, path: &NodePath, d: &Dataset) -> Result<()> {
        let side = path.last().ok_or_else(|| TreeError::NoParent(path.clone()))?;
        let parent_path = path.parent().expect("non-root path has a parent");
        let parent = self.node_mut(&parent_path)?;
        let Node::Split { left, right, .. } = parent else {
            return Err(TreeError::NoSuchNode(path.clone()));
        };
        let (removed, sibling) = match side {
            Side::Left => (left.as_mut(), right.as_mut()),
            Side::Right => (right.as_mut(), left.as_mut()),
        };
        let Node::Leaf(gone) = removed else {
            return Err(TreeError::NotALeaf(path.clone()));
        };
        let mut members = std::mem::take(&mut gone.members);
        let mut sibling = std::mem::replace(sibling, Node::leaf(0));
        sibling.take_members(&mut members);
        members.sort_unstable();
        sibling.distribute(members, d);
        *parent = sibling;
        self.log_likelihood = None;
        Ok(())
    }

    /// Copy without row memberships, for ensemble snapshots.
    pub fn snapshot(&self) -> Tree {
        let mut t = self.clone();
        t.root.strip();
        t
    }

    pub fn to_record(&self) -> Vec<NodeRecord> {
        let mut out = Vec::new();
        self.root.visit(&mut Vec::new(), &mut |_, n| {
            out.push(match n {
                Node::Leaf(l) => NodeRecord::Leaf {
                    counts: l.counts.clone(),
                },
                Node::Split { rule, .. } => NodeRecord::Split {
                    feature: rule.feature,
                    predicate: rule.predicate,
                },
            })
        });
        out
    }

    /// Rebuilds a (membership-free) tree from its preorder record.
    pub fn from_record(nodes: &[NodeRecord], class_count: usize) -> Option<Tree> {
        fn build(it: &mut std::slice::Iter<'_, NodeRecord>) -> Option<Node> {
            Some(match it.next()? {
                NodeRecord::Leaf { counts } => Node::Leaf(Leaf::with_counts(counts.clone())),
                NodeRecord::Split { feature, predicate } => {
                    let left = build(it)?;
                    let right = build(it)?;
                    Node::split(
                        SplitRule {
                            feature: *feature,
                            predicate: *predicate,
                        },
                        left,
                        right,
                    )
                }
            })
        }
        let mut it = nodes.iter();
        let root = build(&mut it)?;
        if it.next().is_some() {
            return None;
        }
        Some(Tree {
            root,
            class_count,
            fitted: true,
            log_likelihood: None,
        })
    }
}

fn is_prunable(n: &Node) -> bool {
    matches!(n, Node::Split { left, right, .. } if left.is_leaf() && right.is_leaf())
}

/// One preorder node of a serialized tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeRecord {
    Split {
        feature: usize,
        predicate: Predicate,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

/// Posterior mean of the leaf's class probabilities under a Dirichlet
/// prior: `(m_ij + a_j) / (n_i + sum a)`.
pub fn predict_leaf_posterior(leaf: &Leaf, alpha: &[f64]) -> Vec<f64> {
    let alpha_sum: f64 = alpha.iter().sum();
    let denom = leaf.n() as f64 + alpha_sum;
    leaf.counts
        .iter()
        .zip(alpha)
        .map(|(&m, &a)| (m as f64 + a) / denom)
        .collect()
}
