//! Bagged greedy trees with per-node feature subsampling, used as the
//! committee for the random-forest query-by-committee baselines.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::seeding;
use crate::tree::Tree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// `ceil(sqrt(p))` features per node.
    Sqrt,
    All,
    Fixed(usize),
}

impl SubsetMode {
    pub fn size(self, p: usize) -> usize {
        match self {
            SubsetMode::Sqrt => (p as f64).sqrt().ceil() as usize,
            SubsetMode::All => p,
            SubsetMode::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub subset: SubsetMode,
    pub max_depth: usize,
    /// Penalty used for the per-tree objective.
    pub lambda: f64,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(subset: SubsetMode, max_depth: usize, lambda: f64, seed: u64) -> Self {
        ForestConfig { n_trees: 100, subset, max_depth, lambda, seed }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<Arc<Tree>>,
    /// Objective of each tree on the full training set.
    pub losses: Vec<f64>,
}

pub fn train_forest(ds: &Dataset, cfg: &ForestConfig) -> Result<Forest> {
    if cfg.n_trees < 2 {
        return Err(Error::invalid("a forest needs at least two trees"));
    }
    if let SubsetMode::Fixed(k) = cfg.subset {
        if k == 0 || k > ds.p() {
            return Err(Error::invalid(format!("subset size {k} outside 1..={}", ds.p())));
        }
    }
    let present = ds.class_counts().iter().filter(|&&c| c > 0).count();
    if ds.n() < 2 || present < 2 {
        return Err(Error::DegenerateLabels);
    }
    let m = cfg.subset.size(ds.p()).max(1);
    let trained: Vec<(Arc<Tree>, f64)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeding::rng(cfg.seed, &[t as u64]);
            let sample: Vec<usize> = (0..ds.n()).map(|_| rng.random_range(0..ds.n())).collect();
            let tree = grow(ds, &sample, cfg.max_depth, m, &mut rng);
            let loss = tree.objective(ds, cfg.lambda).expect("tree built on ds columns").value;
            (Arc::new(tree), loss)
        })
        .collect();
    let (trees, losses) = trained.into_iter().unzip();
    Ok(Forest { trees, losses })
}

/// Greedy Gini tree on the rows `sample` (repeats allowed).
pub fn grow(ds: &Dataset, sample: &[usize], max_depth: usize, m: usize, rng: &mut seeding::Rng) -> Tree {
    let mut used = vec![false; ds.p()];
    grow_node(ds, sample, max_depth, m, &mut used, rng)
}

fn counts(ds: &Dataset, rows: &[usize]) -> Vec<usize> {
    let mut c = vec![0usize; ds.n_classes()];
    for &i in rows {
        c[ds.label(i) as usize] += 1;
    }
    c
}

fn majority(c: &[usize]) -> Label {
    let mut best = 0;
    for (i, &v) in c.iter().enumerate() {
        if v > c[best] {
            best = i;
        }
    }
    best as Label
}

fn gini_mass(c: &[usize]) -> f64 {
    let n: usize = c.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let sq: f64 = c.iter().map(|&v| (v as f64 / n).powi(2)).sum();
    n * (1.0 - sq)
}

fn grow_node(ds: &Dataset, rows: &[usize], depth: usize, m: usize, used: &mut [bool], rng: &mut seeding::Rng) -> Tree {
    let c = counts(ds, rows);
    let label = majority(&c);
    let pure = c.iter().filter(|&&v| v > 0).count() <= 1;
    if depth == 0 || pure {
        return Tree::leaf(label);
    }
    let free: Vec<usize> = (0..ds.p()).filter(|&f| !used[f]).collect();
    if free.is_empty() {
        return Tree::leaf(label);
    }
    let mut candidates: Vec<usize> = sample(rng, free.len(), m.min(free.len())).into_iter().map(|i| free[i]).collect();
    candidates.sort_unstable();

    let mut best: Option<(f64, usize)> = None;
    for &f in &candidates {
        let mut c0 = vec![0usize; ds.n_classes()];
        let mut c1 = vec![0usize; ds.n_classes()];
        for &i in rows {
            let y = ds.label(i) as usize;
            if ds.row(i)[f] == 0 {
                c0[y] += 1;
            } else {
                c1[y] += 1;
            }
        }
        let (n0, n1): (usize, usize) = (c0.iter().sum(), c1.iter().sum());
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let score = gini_mass(&c0) + gini_mass(&c1);
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, f));
        }
    }
    let Some((_, f)) = best else {
        return Tree::leaf(label);
    };
    let (zero_rows, one_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| ds.row(i)[f] == 0);
    used[f] = true;
    let zero = grow_node(ds, &zero_rows, depth - 1, m, used, rng);
    let one = grow_node(ds, &one_rows, depth - 1, m, used, rng);
    used[f] = false;
    Tree::split(f, zero, one)
}
