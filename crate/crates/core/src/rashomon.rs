//! Exact optimal sparse tree search and complete ε-Rashomon set enumeration.
//!
//! Subproblems are sample subsets (bitsets) with a remaining depth. The
//! optimal objective of every subproblem is memoized and serves as the
//! admissible lower bound during enumeration: a split is expanded only if
//! the two children's optima fit the remaining budget, and each child is
//! enumerated with the budget left over after the sibling's optimum. Since
//! optima are exact, nothing within the threshold is ever pruned.
//!
//! Enumeration covers every tree whose root-to-leaf paths use distinct
//! features, including splits on features that happen to be constant on a
//! subset (one child then receives no rows).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::floatfmt::fmt17;
use crate::tree::{objective_value, ObjectiveRecord, Tree};

/// Absolute tolerance for objective comparisons and the threshold test.
pub const OBJECTIVE_TOL: f64 = 1e-12;
// Looser slack for intermediate budgets built from float sums.
const BUDGET_SLACK: f64 = 1e-9;

pub const DEFAULT_SET_SIZE_CAP: usize = 500_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub max_depth: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub set_size_cap: usize,
}

impl SearchConfig {
    pub fn new(max_depth: usize, lambda: f64, epsilon: f64) -> Self {
        SearchConfig { max_depth, lambda, epsilon, set_size_cap: DEFAULT_SET_SIZE_CAP }
    }

    fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub tree: Arc<Tree>,
    pub objective: ObjectiveRecord,
}

#[derive(Debug, Clone)]
pub struct RashomonSet {
    /// Sorted by canonical key.
    pub members: Vec<Member>,
    pub optimum: f64,
    pub threshold: f64,
    pub epsilon: f64,
}

impl RashomonSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.objective.value).collect()
    }

    pub fn trees(&self) -> Vec<Arc<Tree>> {
        self.members.iter().map(|m| m.tree.clone()).collect()
    }

    /// One member per line: tree text, misclassified, leaves, objective.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("tree\tmisclassified\tleaves\tobjective\n");
        for m in &self.members {
            let o = &m.objective;
            let _ = writeln!(out, "{}\t{}\t{}\t{}", m.tree, o.misclassified, o.leaves, fmt17(o.value));
        }
        out
    }
}

type Bits = Box<[u64]>;

fn popcount(a: &[u64]) -> u32 {
    a.iter().map(|w| w.count_ones()).sum()
}

fn and_count(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

fn and(a: &[u64], b: &[u64]) -> Bits {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn and_not(a: &[u64], b: &[u64]) -> Bits {
    a.iter().zip(b).map(|(x, y)| x & !y).collect()
}

#[derive(Clone)]
struct Best {
    misclassified: u32,
    leaves: u32,
    value: f64,
    tree: Arc<Tree>,
}

#[derive(Clone, Copy)]
enum Small {
    Leaf(u32),
    Split(usize, u32, u32),
}

impl Small {
    fn tree(self) -> Tree {
        match self {
            Small::Leaf(l) => Tree::Leaf(l),
            Small::Split(g, a, b) => Tree::split(g, Tree::Leaf(a), Tree::Leaf(b)),
        }
    }
}

enum Memo {
    Exact(Best),
    /// The optimum exceeds this value.
    Above(f64),
}

#[derive(Clone)]
struct Entry {
    tree: Arc<Tree>,
    misclassified: u32,
    leaves: u32,
    value: f64,
}

/// Prefix of a shared, value-sorted entry list.
#[derive(Clone)]
struct EntryList {
    all: Arc<Vec<Entry>>,
    len: usize,
}

impl EntryList {
    fn as_slice(&self) -> &[Entry] {
        &self.all[..self.len]
    }
}

type EnumKey = (Bits, u8, Vec<u32>);

/// Bitset index of a dataset plus the memo tables for one value of lambda.
pub struct Searcher {
    n: usize,
    p: usize,
    lambda: f64,
    root: Bits,
    columns: Vec<Bits>,
    classes: Vec<Bits>,
    /// Indexed by remaining depth.
    best_memo: Vec<FxHashMap<Bits, Memo>>,
    enum_memo: FxHashMap<EnumKey, (f64, Arc<Vec<Entry>>)>,
    cap: usize,
    /// Use the pairwise-count solver at depth two.
    specialize: bool,
}

impl Searcher {
    pub fn new(ds: &Dataset, lambda: f64) -> Result<Self> {
        if ds.n() == 0 {
            return Err(Error::invalid("tree search needs a non-empty dataset"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        let n = ds.n();
        let words = n.div_ceil(64);
        let empty = || vec![0u64; words].into_boxed_slice();
        let mut root = empty();
        let mut columns: Vec<Bits> = (0..ds.p()).map(|_| empty()).collect();
        let mut classes: Vec<Bits> = (0..ds.n_classes()).map(|_| empty()).collect();
        for (i, (row, &y)) in ds.rows().zip(ds.labels()).enumerate() {
            let (w, b) = (i / 64, 1u64 << (i % 64));
            root[w] |= b;
            classes[y as usize][w] |= b;
            for (col, &v) in columns.iter_mut().zip(row) {
                if v == 1 {
                    col[w] |= b;
                }
            }
        }
        Ok(Searcher {
            n,
            p: ds.p(),
            lambda,
            root,
            columns,
            classes,
            best_memo: Vec::new(),
            enum_memo: FxHashMap::default(),
            cap: DEFAULT_SET_SIZE_CAP,
            specialize: true,
        })
    }

    fn value(&self, misclassified: u32, leaves: u32) -> f64 {
        objective_value(misclassified as usize, self.n, leaves as usize, self.lambda)
    }

    fn class_counts(&self, s: &[u64]) -> Vec<u32> {
        self.classes.iter().map(|c| and_count(s, c)).collect()
    }

    fn majority_leaf(&self, counts: &[u32]) -> Best {
        let size: u32 = counts.iter().sum();
        // highest count, smallest label on ties
        let (label, &top) =
            counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).expect("at least one class");
        let misclassified = size - top;
        Best {
            misclassified,
            leaves: 1,
            value: self.value(misclassified, 1),
            tree: Arc::new(Tree::Leaf(label as Label)),
        }
    }

    /// Tie-broken comparison: value (with tolerance), then leaves, then key.
    fn better(a: &Best, b: &Best) -> bool {
        if a.value < b.value - OBJECTIVE_TOL {
            return true;
        }
        if a.value > b.value + OBJECTIVE_TOL {
            return false;
        }
        match a.leaves.cmp(&b.leaves) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.tree.canonical_key() < b.tree.canonical_key(),
        }
    }

    /// A leaf is optimal when its error rate is at most lambda: every split
    /// tree costs at least 2·lambda and has more leaves.
    fn leaf_is_optimal(&self, leaf: &Best) -> bool {
        (leaf.misclassified as f64 / self.n as f64) <= self.lambda + OBJECTIVE_TOL
    }

    fn best(&mut self, s: &[u64], depth: usize) -> Best {
        self.best_within(s, depth, f64::INFINITY).expect("unbounded search always succeeds")
    }

    /// Known lower bound on the optimum of a subproblem, without searching.
    fn lower_bound(&self, s: &[u64], depth: usize) -> f64 {
        match self.best_memo.get(depth).and_then(|m| m.get(s)) {
            Some(Memo::Exact(b)) => b.value,
            Some(Memo::Above(ub)) => ub.max(self.lambda),
            None => self.lambda,
        }
    }

    /// Optimal tree of the subproblem if its value is at most `ub`, else
    /// `None`. Results are memoized either exactly or as "nothing within ub".
    fn best_within(&mut self, s: &[u64], depth: usize, ub: f64) -> Option<Best> {
        let within = |b: Best| (b.value <= ub + OBJECTIVE_TOL).then_some(b);
        if self.lambda > ub + OBJECTIVE_TOL {
            return None;
        }
        let counts = self.class_counts(s);
        let leaf = self.majority_leaf(&counts);
        if depth == 0 || self.leaf_is_optimal(&leaf) {
            return within(leaf);
        }
        if depth == 1 {
            return within(self.best_depth_one(s, &counts, leaf));
        }
        if self.best_memo.len() <= depth {
            self.best_memo.resize_with(depth + 1, FxHashMap::default);
        }
        match self.best_memo[depth].get(s) {
            Some(Memo::Exact(b)) => return within(b.clone()),
            Some(Memo::Above(known)) if ub <= *known => return None,
            _ => {}
        }
        if depth == 2 && self.specialize {
            let b = self.best_depth_two(s, &counts, leaf);
            self.best_memo[depth].insert(Bits::from(s), Memo::Exact(b.clone()));
            return within(b);
        }
        let size = counts.iter().sum::<u32>();
        let mut limit = ub.min(leaf.value);
        let mut best = (leaf.value <= ub + OBJECTIVE_TOL).then_some(leaf);
        for f in self.split_order(s, &counts) {
            let s1 = and(s, &self.columns[f]);
            let c1 = popcount(&s1);
            if c1 == 0 || c1 == size {
                continue;
            }
            let s0 = and_not(s, &self.columns[f]);
            let lb1 = self.lower_bound(&s1, depth - 1);
            let Some(b0) = self.best_within(&s0, depth - 1, limit - lb1) else {
                continue;
            };
            let Some(b1) = self.best_within(&s1, depth - 1, limit - b0.value) else {
                continue;
            };
            let cand = self.combine(f, &b0, &b1);
            if best.as_ref().is_none_or(|b| Self::better(&cand, b)) {
                limit = limit.min(cand.value);
                best = Some(cand);
            }
        }
        let memo = match &best {
            Some(b) => Memo::Exact(b.clone()),
            None => Memo::Above(ub),
        };
        self.best_memo[depth].insert(Bits::from(s), memo);
        best
    }

    /// Features ordered by the error of a single split, so strong incumbents
    /// appear early and tighten the bound. The result does not depend on it.
    fn split_order(&self, s: &[u64], counts: &[u32]) -> Vec<usize> {
        let mut ones = vec![0u32; counts.len()];
        let mut zeros = vec![0u32; counts.len()];
        let mut keyed: Vec<(u32, usize)> = (0..self.p)
            .map(|f| {
                let sf = and(s, &self.columns[f]);
                for (c, class) in self.classes.iter().enumerate() {
                    ones[c] = and_count(&sf, class);
                    zeros[c] = counts[c] - ones[c];
                }
                (Self::majority(&ones).1 + Self::majority(&zeros).1, f)
            })
            .collect();
        keyed.sort_unstable();
        keyed.into_iter().map(|(_, f)| f).collect()
    }

    /// Majority label and its misclassification count.
    fn majority(counts: &[u32]) -> (u32, u32) {
        let mut label = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[label] {
                label = i;
            }
        }
        (label as u32, counts.iter().sum::<u32>() - counts[label])
    }

    /// Best depth-one tree from class counts; `ones(g, out)` fills the class
    /// counts of the rows with feature g set. Same tie-breaking as the
    /// general search: the first strictly better split wins.
    fn small_depth_one(&self, counts: &[u32], mut ones: impl FnMut(usize, &mut [u32])) -> (u32, u32, Small) {
        let size: u32 = counts.iter().sum();
        let (label, mis) = Self::majority(counts);
        let mut best = (mis, 1, Small::Leaf(label));
        if (mis as f64 / self.n as f64) <= self.lambda + OBJECTIVE_TOL {
            return best;
        }
        let mut best_value = self.value(mis, 1);
        let k = counts.len();
        let mut o = vec![0u32; k];
        let mut z = vec![0u32; k];
        for g in 0..self.p {
            ones(g, &mut o);
            let c1: u32 = o.iter().sum();
            if c1 == 0 || c1 == size {
                continue;
            }
            for c in 0..k {
                z[c] = counts[c] - o[c];
            }
            let (lz, mz) = Self::majority(&z);
            let (lo, mo) = Self::majority(&o);
            let v = self.value(mz + mo, 2);
            if v < best_value - OBJECTIVE_TOL {
                best_value = v;
                best = (mz + mo, 2, Small::Split(g, lz, lo));
            }
        }
        best
    }

    /// Two-class version of `small_depth_one` without allocation.
    fn binary_depth_one(&self, n0: u32, n1: u32, ones: impl Fn(usize) -> (u32, u32)) -> (u32, u32, Small) {
        let leaf_label = u32::from(n1 > n0);
        let mis = n0.min(n1);
        let mut best = (mis, 1, Small::Leaf(leaf_label));
        if (mis as f64 / self.n as f64) <= self.lambda + OBJECTIVE_TOL {
            return best;
        }
        // a split wins only with strictly fewer mistakes than this
        let mut best_value = self.value(mis, 1);
        let size = n0 + n1;
        for g in 0..self.p {
            let (o0, o1) = ones(g);
            let c1 = o0 + o1;
            if c1 == 0 || c1 == size {
                continue;
            }
            let (z0, z1) = (n0 - o0, n1 - o1);
            let m = z0.min(z1) + o0.min(o1);
            let v = self.value(m, 2);
            if v < best_value - OBJECTIVE_TOL {
                best_value = v;
                best = (m, 2, Small::Split(g, u32::from(z1 > z0), u32::from(o1 > o0)));
                if m == 0 {
                    break;
                }
            }
        }
        best
    }

    /// Exact depth-two search from pairwise class counts, no recursion.
    fn best_depth_two(&self, s: &[u64], counts: &[u32], leaf: Best) -> Best {
        let (p, k) = (self.p, counts.len());
        let size: u32 = counts.iter().sum();
        // single[f*k + c] = |s & f & c|, pair[(f*p + g)*k + c] = |s & f & g & c|
        let mut single = vec![0u32; p * k];
        let mut pair = vec![0u32; p * p * k];
        for (c, class) in self.classes.iter().enumerate() {
            let sc = and(s, class);
            for f in 0..p {
                let sfc = and(&sc, &self.columns[f]);
                single[f * k + c] = popcount(&sfc);
                pair[(f * p + f) * k + c] = single[f * k + c];
                for g in f + 1..p {
                    let v = and_count(&sfc, &self.columns[g]);
                    pair[(f * p + g) * k + c] = v;
                    pair[(g * p + f) * k + c] = v;
                }
            }
        }
        let mut best: (f64, u32, u32, Option<(usize, Small, Small)>) = (leaf.value, leaf.misclassified, 1, None);
        let mut c0 = vec![0u32; k];
        for f in 0..p {
            let c1 = &single[f * k..(f + 1) * k];
            let n1: u32 = c1.iter().sum();
            if n1 == 0 || n1 == size {
                continue;
            }
            for c in 0..k {
                c0[c] = counts[c] - c1[c];
            }
            let ((m1, l1, t1), (m0, l0, t0)) = if k == 2 {
                let pf = &pair[f * p * 2..(f + 1) * p * 2];
                let one = self.binary_depth_one(c1[0], c1[1], |g| (pf[2 * g], pf[2 * g + 1]));
                let zero = self
                    .binary_depth_one(c0[0], c0[1], |g| (single[2 * g] - pf[2 * g], single[2 * g + 1] - pf[2 * g + 1]));
                (one, zero)
            } else {
                let one = self.small_depth_one(c1, |g, out| {
                    out.copy_from_slice(&pair[(f * p + g) * k..(f * p + g + 1) * k]);
                });
                let zero = self.small_depth_one(&c0, |g, out| {
                    for c in 0..k {
                        out[c] = single[g * k + c] - pair[(f * p + g) * k + c];
                    }
                });
                (one, zero)
            };
            let (mis, leaves) = (m0 + m1, l0 + l1);
            let v = self.value(mis, leaves);
            if v < best.0 - OBJECTIVE_TOL || (v <= best.0 + OBJECTIVE_TOL && leaves < best.2) {
                best = (v, mis, leaves, Some((f, t0, t1)));
            }
        }
        match best.3 {
            None => leaf,
            Some((f, t0, t1)) => Best {
                misclassified: best.1,
                leaves: best.2,
                value: best.0,
                tree: Arc::new(Tree::split(f, t0.tree(), t1.tree())),
            },
        }
    }

    fn combine(&self, f: usize, zero: &Best, one: &Best) -> Best {
        let misclassified = zero.misclassified + one.misclassified;
        let leaves = zero.leaves + one.leaves;
        Best {
            misclassified,
            leaves,
            value: self.value(misclassified, leaves),
            tree: Arc::new(Tree::split_shared(f, zero.tree.clone(), one.tree.clone())),
        }
    }

    fn best_depth_one(&self, s: &[u64], counts: &[u32], leaf: Best) -> Best {
        let mut best = leaf;
        let size: u32 = counts.iter().sum();
        let mut ones = vec![0u32; counts.len()];
        for f in 0..self.p {
            let col = &self.columns[f];
            let c1 = and_count(s, col);
            if c1 == 0 || c1 == size {
                continue;
            }
            for (o, class) in ones.iter_mut().zip(&self.classes) {
                *o = s.iter().zip(col.iter()).zip(class.iter()).map(|((a, b), c)| (a & b & c).count_ones()).sum();
            }
            let zeros: Vec<u32> = counts.iter().zip(&ones).map(|(c, o)| c - o).collect();
            let b0 = self.majority_leaf(&zeros);
            let b1 = self.majority_leaf(&ones);
            let cand = self.combine(f, &b0, &b1);
            if Self::better(&cand, &best) {
                best = cand;
            }
        }
        best
    }

    pub fn optimal(&mut self, max_depth: usize) -> (Tree, ObjectiveRecord) {
        let root = self.root.clone();
        let best = self.best(&root, max_depth);
        let rec = ObjectiveRecord::new(best.misclassified as usize, self.n, best.leaves as usize, self.lambda);
        ((*best.tree).clone(), rec)
    }

    fn enumerate_sub(&mut self, s: &[u64], depth: usize, used: &mut Vec<u32>, budget: f64) -> Result<EntryList> {
        let mut used_key = used.clone();
        used_key.sort_unstable();
        let key: EnumKey = (Bits::from(s), depth as u8, used_key);
        if let Some((cached_budget, list)) = self.enum_memo.get(&key) {
            if budget <= *cached_budget {
                let len = list.partition_point(|e| e.value <= budget + BUDGET_SLACK);
                return Ok(EntryList { all: list.clone(), len });
            }
        }

        let counts = self.class_counts(s);
        let size: u32 = counts.iter().sum();
        let mut out: Vec<Entry> = Vec::new();
        for (label, &c) in counts.iter().enumerate() {
            let misclassified = size - c;
            let value = self.value(misclassified, 1);
            if value <= budget + BUDGET_SLACK {
                out.push(Entry { tree: Arc::new(Tree::Leaf(label as Label)), misclassified, leaves: 1, value });
            }
        }

        if depth > 0 && 2.0 * self.lambda <= budget + BUDGET_SLACK {
            for f in 0..self.p {
                if used.contains(&(f as u32)) {
                    continue;
                }
                let s0 = and_not(s, &self.columns[f]);
                let s1 = and(s, &self.columns[f]);
                let lb1 = self.lower_bound(&s1, depth - 1);
                let Some(b0) = self.best_within(&s0, depth - 1, budget + BUDGET_SLACK - lb1) else {
                    continue;
                };
                let Some(b1) = self.best_within(&s1, depth - 1, budget + BUDGET_SLACK - b0.value) else {
                    continue;
                };
                let (lb0, lb1) = (b0.value, b1.value);
                used.push(f as u32);
                let children = self.enumerate_sub(&s0, depth - 1, used, budget - lb1).and_then(|z| {
                    let o = self.enumerate_sub(&s1, depth - 1, used, budget - lb0)?;
                    Ok((z, o))
                });
                used.pop();
                let (zeros, ones) = children?;
                for l in zeros.as_slice() {
                    for r in ones.as_slice() {
                        if l.value + r.value > budget + BUDGET_SLACK {
                            break;
                        }
                        let misclassified = l.misclassified + r.misclassified;
                        let leaves = l.leaves + r.leaves;
                        out.push(Entry {
                            tree: Arc::new(Tree::split_shared(f, l.tree.clone(), r.tree.clone())),
                            misclassified,
                            leaves,
                            value: self.value(misclassified, leaves),
                        });
                    }
                    // each zero-side entry pairs with at least the optimal one-side
                    // subtree, so a long list here already means overflow
                    if out.len() > self.cap {
                        return Err(Error::RashomonSetOverflow { cap: self.cap, found: out.len() });
                    }
                }
            }
        }
        out.sort_by(|a, b| a.value.total_cmp(&b.value));
        let list = Arc::new(out);
        let len = list.len();
        self.enum_memo.insert(key, (budget, list.clone()));
        Ok(EntryList { all: list, len })
    }

    /// All trees of depth at most `max_depth` with objective within
    /// `(1 + epsilon)` of the optimum.
    pub fn enumerate(&mut self, max_depth: usize, epsilon: f64, cap: usize) -> Result<RashomonSet> {
        self.cap = cap;
        let (_, opt) = self.optimal(max_depth);
        let threshold = (1.0 + epsilon) * opt.value;
        let root = self.root.clone();
        let list = self.enumerate_sub(&root, max_depth, &mut Vec::new(), threshold)?;
        let mut members: Vec<Member> = list
            .as_slice()
            .iter()
            .filter(|e| e.value <= threshold + OBJECTIVE_TOL)
            .map(|e| Member {
                tree: e.tree.clone(),
                objective: ObjectiveRecord::new(e.misclassified as usize, self.n, e.leaves as usize, self.lambda),
            })
            .collect();
        if members.len() > cap {
            return Err(Error::RashomonSetOverflow { cap, found: members.len() });
        }
        let mut keyed: Vec<_> = members.drain(..).map(|m| (m.tree.canonical_key(), m)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.dedup_by(|a, b| a.0 == b.0);
        let members: Vec<Member> = keyed.into_iter().map(|(_, m)| m).collect();
        let optimum = members.iter().map(|m| m.objective.value).fold(f64::INFINITY, f64::min);
        debug_assert!((optimum - opt.value).abs() <= OBJECTIVE_TOL);
        Ok(RashomonSet { members, optimum: opt.value, threshold, epsilon })
    }
}

/// Exactly optimal tree of depth at most `cfg.max_depth`. Ties go to fewer
/// leaves, then the smaller canonical key.
pub fn optimal_tree(ds: &Dataset, cfg: &SearchConfig) -> Result<(Tree, ObjectiveRecord)> {
    cfg.validate()?;
    Ok(Searcher::new(ds, cfg.lambda)?.optimal(cfg.max_depth))
}

pub fn enumerate_rashomon(ds: &Dataset, cfg: &SearchConfig) -> Result<RashomonSet> {
    cfg.validate()?;
    Searcher::new(ds, cfg.lambda)?.enumerate(cfg.max_depth, cfg.epsilon, cfg.set_size_cap)
}
