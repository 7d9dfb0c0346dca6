//! Sparse binary decision trees over binary features.
//!
//! A split on feature `f` routes rows with `x[f] == 0` to the `zero` child
//! and rows with `x[f] == 1` to the `one` child. Trees are immutable and
//! share subtrees through `Arc`, so the enumerator can build large families
//! of trees without copying.

mod ted;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};

pub use ted::tree_edit_distance;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tree {
    Leaf(Label),
    Split { feature: usize, zero: Arc<Tree>, one: Arc<Tree> },
}

/// Regularized empirical objective of a tree on a dataset:
/// misclassified / n + lambda * leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveRecord {
    pub misclassified: usize,
    pub n: usize,
    pub leaves: usize,
    pub lambda: f64,
    pub value: f64,
}

/// The one place objective values are computed, so every code path that
/// compares values agrees bit-for-bit.
pub fn objective_value(misclassified: usize, n: usize, leaves: usize, lambda: f64) -> f64 {
    let loss = if n == 0 { 0.0 } else { misclassified as f64 / n as f64 };
    loss + lambda * leaves as f64
}

impl ObjectiveRecord {
    pub fn new(misclassified: usize, n: usize, leaves: usize, lambda: f64) -> Self {
        ObjectiveRecord { misclassified, n, leaves, lambda, value: objective_value(misclassified, n, leaves, lambda) }
    }
}

/// Pre-order byte serialization; equal keys iff equal trees.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalKey(pub Vec<u8>);

const KEY_SPLIT: u8 = 0;
const KEY_LEAF: u8 = 1;

impl Tree {
    pub fn leaf(label: Label) -> Tree {
        Tree::Leaf(label)
    }

    pub fn split(feature: usize, zero: Tree, one: Tree) -> Tree {
        Tree::Split { feature, zero: Arc::new(zero), one: Arc::new(one) }
    }

    pub fn split_shared(feature: usize, zero: Arc<Tree>, one: Arc<Tree>) -> Tree {
        Tree::Split { feature, zero, one }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf(_))
    }

    pub fn leaves(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Split { zero, one, .. } => zero.leaves() + one.leaves(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Split { zero, one, .. } => 1 + zero.node_count() + one.node_count(),
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Split { zero, one, .. } => 1 + zero.depth().max(one.depth()),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            Tree::Leaf(_) => None,
            Tree::Split { feature, zero, one } => {
                Some((*feature).max(zero.max_feature().unwrap_or(0)).max(one.max_feature().unwrap_or(0)))
            }
        }
    }

    /// True when no root-to-leaf path splits on the same feature twice.
    pub fn has_distinct_path_features(&self) -> bool {
        fn walk(t: &Tree, path: &mut Vec<usize>) -> bool {
            match t {
                Tree::Leaf(_) => true,
                Tree::Split { feature, zero, one } => {
                    if path.contains(feature) {
                        return false;
                    }
                    path.push(*feature);
                    let ok = walk(zero, path) && walk(one, path);
                    path.pop();
                    ok
                }
            }
        }
        walk(self, &mut Vec::new())
    }

    fn check_width(&self, width: usize) -> Result<()> {
        match self.max_feature() {
            Some(index) if index >= width => Err(Error::FeatureIndexOutOfRange { index, width }),
            _ => Ok(()),
        }
    }

    /// Routes `x` to a leaf without bounds checking beyond slice indexing.
    pub fn predict_unchecked(&self, x: &[u8]) -> Label {
        let mut node = self;
        loop {
            match node {
                Tree::Leaf(l) => return *l,
                Tree::Split { feature, zero, one } => {
                    node = if x[*feature] == 0 { zero } else { one };
                }
            }
        }
    }

    pub fn predict(&self, x: &[u8]) -> Result<Label> {
        self.check_width(x.len())?;
        Ok(self.predict_unchecked(x))
    }

    /// Pre-order index (among leaves only) of the leaf `x` reaches.
    pub fn leaf_index(&self, x: &[u8]) -> usize {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                Tree::Leaf(_) => return offset,
                Tree::Split { feature, zero, one } => {
                    if x[*feature] == 0 {
                        node = zero;
                    } else {
                        offset += zero.leaves();
                        node = one;
                    }
                }
            }
        }
    }

    pub fn misclassified(&self, ds: &Dataset) -> Result<usize> {
        self.check_width(ds.p())?;
        Ok(ds.rows().zip(ds.labels()).filter(|(x, &y)| self.predict_unchecked(x) != y).count())
    }

    pub fn objective(&self, ds: &Dataset, lambda: f64) -> Result<ObjectiveRecord> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        let mis = self.misclassified(ds)?;
        Ok(ObjectiveRecord::new(mis, ds.n(), self.leaves(), lambda))
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        if ds.n() == 0 {
            return Ok(0.0);
        }
        let mis = self.misclassified(ds)?;
        Ok((ds.n() - mis) as f64 / ds.n() as f64)
    }

    /// Per-leaf class counts of `ds`, leaves in pre-order.
    pub fn leaf_frequencies(&self, ds: &Dataset) -> Result<LeafFrequencies> {
        self.check_width(ds.p())?;
        let mut counts = vec![vec![0usize; ds.n_classes()]; self.leaves()];
        for (x, &y) in ds.rows().zip(ds.labels()) {
            counts[self.leaf_index(x)][y as usize] += 1;
        }
        Ok(LeafFrequencies { counts })
    }

    pub fn canonical_key(&self) -> CanonicalKey {
        let mut out = Vec::with_capacity(self.node_count() * 5);
        self.write_key(&mut out);
        CanonicalKey(out)
    }

    fn write_key(&self, out: &mut Vec<u8>) {
        match self {
            Tree::Leaf(l) => {
                out.push(KEY_LEAF);
                out.extend_from_slice(&l.to_be_bytes());
            }
            Tree::Split { feature, zero, one } => {
                out.push(KEY_SPLIT);
                out.extend_from_slice(&(*feature as u32).to_be_bytes());
                zero.write_key(out);
                one.write_key(out);
            }
        }
    }
}

/// Class counts at each leaf, used for least-confidence scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafFrequencies {
    pub counts: Vec<Vec<usize>>,
}

impl LeafFrequencies {
    /// Largest class frequency at a leaf; 1.0 for leaves that saw no data.
    pub fn confidence(&self, leaf: usize) -> f64 {
        let c = &self.counts[leaf];
        let total: usize = c.iter().sum();
        if total == 0 {
            return 1.0;
        }
        *c.iter().max().unwrap() as f64 / total as f64
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf(l) => write!(f, "l{l}"),
            Tree::Split { feature, zero, one } => write!(f, "(f{feature} {zero} {one})"),
        }
    }
}

/// Serialized as the text form.
impl Serialize for Tree {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Tree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tree> {
        let spaced = s.replace('(', " ( ").replace(')', " ) ");
        let mut tokens = spaced.split_whitespace().peekable();
        let tree = parse_node(&mut tokens)?;
        if tokens.next().is_some() {
            return Err(Error::invalid("trailing tokens in tree text"));
        }
        Ok(tree)
    }
}

fn parse_node<'a>(tokens: &mut std::iter::Peekable<impl Iterator<Item = &'a str>>) -> Result<Tree> {
    let bad = |t: &str| Error::invalid(format!("unexpected token `{t}` in tree text"));
    match tokens.next() {
        Some("(") => {
            let head = tokens.next().ok_or_else(|| bad("<eof>"))?;
            let feature = head.strip_prefix('f').and_then(|v| v.parse().ok()).ok_or_else(|| bad(head))?;
            let zero = parse_node(tokens)?;
            let one = parse_node(tokens)?;
            match tokens.next() {
                Some(")") => Ok(Tree::split(feature, zero, one)),
                other => Err(bad(other.unwrap_or("<eof>"))),
            }
        }
        Some(t) => t.strip_prefix('l').and_then(|v| v.parse().ok()).map(Tree::Leaf).ok_or_else(|| bad(t)),
        None => Err(bad("<eof>")),
    }
}
