//! Query selection rules. Every rule breaks ties toward the smallest pool
//! position, so results do not depend on evaluation order.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::committee::{vote_entropy, WeightedCommittee, Weighting};
use crate::error::{Error, Result};
use crate::forest::SubsetMode;
use crate::seeding;
use crate::tree::{LeafFrequencies, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Random,
    Uncertainty,
    Coreset,
    QbcRf { subset: SubsetMode, weighting: Weighting },
    Unreal,
    Breal,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::Random,
        StrategyKind::Uncertainty,
        StrategyKind::Coreset,
        StrategyKind::QbcRf { subset: SubsetMode::Sqrt, weighting: Weighting::Uniform },
        StrategyKind::QbcRf { subset: SubsetMode::Sqrt, weighting: Weighting::Gibbs },
        StrategyKind::QbcRf { subset: SubsetMode::All, weighting: Weighting::Uniform },
        StrategyKind::QbcRf { subset: SubsetMode::All, weighting: Weighting::Gibbs },
        StrategyKind::Unreal,
        StrategyKind::Breal,
    ];

    pub fn name(self) -> String {
        match self {
            StrategyKind::Random => "random".into(),
            StrategyKind::Uncertainty => "uncertainty".into(),
            StrategyKind::Coreset => "coreset".into(),
            StrategyKind::Unreal => "unreal".into(),
            StrategyKind::Breal => "breal".into(),
            StrategyKind::QbcRf { subset, weighting } => {
                let s = match subset {
                    SubsetMode::Sqrt => "sqrt".to_string(),
                    SubsetMode::All => "all".to_string(),
                    SubsetMode::Fixed(k) => format!("f{k}"),
                };
                match weighting {
                    Weighting::Uniform => format!("qbc_rf_{s}"),
                    Weighting::Gibbs => format!("qbc_rf_{s}_gibbs"),
                }
            }
        }
    }

    pub fn is_rashomon(self) -> bool {
        matches!(self, StrategyKind::Unreal | StrategyKind::Breal)
    }

    /// Whether the strategy needs a Gibbs temperature.
    pub fn uses_beta(self) -> bool {
        matches!(self, StrategyKind::Breal | StrategyKind::QbcRf { weighting: Weighting::Gibbs, .. })
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(k) = StrategyKind::ALL.iter().find(|k| k.name() == s) {
            return Ok(*k);
        }
        // fixed-size subsets: qbc_rf_f3, qbc_rf_f3_gibbs
        let fixed = s.strip_prefix("qbc_rf_f").and_then(|rest| {
            let (num, weighting) = match rest.strip_suffix("_gibbs") {
                Some(num) => (num, Weighting::Gibbs),
                None => (rest, Weighting::Uniform),
            };
            let k: usize = num.parse().ok()?;
            (k > 0).then_some(StrategyKind::QbcRf { subset: SubsetMode::Fixed(k), weighting })
        });
        fixed.ok_or_else(|| {
            Error::Config(format!("unknown strategy `{s}`; valid names: {}", StrategyKind::valid_names()))
        })
    }
}

impl Serialize for StrategyKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for StrategyKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|e| match e {
            Error::Config(m) => serde::de::Error::custom(m),
            other => serde::de::Error::custom(other),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Position in the pool slice.
    pub index: usize,
    /// Per-pool-point score; empty for random selection.
    pub scores: Vec<f64>,
    pub tie_count: usize,
}

impl QueryResult {
    pub fn score(&self) -> Option<f64> {
        self.scores.get(self.index).copied()
    }
}

fn pick(scores: Vec<f64>, maximize: bool) -> QueryResult {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        let better = if maximize { s > scores[best] } else { s < scores[best] };
        if better {
            best = i;
        }
    }
    let tie_count = scores.iter().filter(|&&s| s == scores[best]).count();
    QueryResult { index: best, scores, tie_count }
}

/// Pool point with the largest weighted vote entropy.
pub fn select_query_entropy(committee: &WeightedCommittee, pool: &[&[u8]]) -> Result<QueryResult> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if let Some(x) = pool.first() {
        committee.vote_distribution(x)?;
    }
    let width = pool[0].len();
    if pool.iter().any(|x| x.len() != width) {
        return Err(Error::invalid("pool rows differ in width"));
    }
    let scores: Vec<f64> = pool.par_iter().map(|x| vote_entropy(&committee.vote_unchecked(x))).collect();
    Ok(pick(scores, true))
}

/// Pool point whose leaf has the lowest majority-class frequency.
pub fn select_query_uncertainty(tree: &Tree, freqs: &LeafFrequencies, pool: &[&[u8]]) -> Result<QueryResult> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if freqs.counts.len() != tree.leaves() {
        return Err(Error::invalid("leaf frequencies do not match the tree"));
    }
    let mut scores = Vec::with_capacity(pool.len());
    for x in pool {
        tree.predict(x)?;
        scores.push(freqs.confidence(tree.leaf_index(x)));
    }
    Ok(pick(scores, false))
}

/// Pool point farthest (Euclidean) from its nearest labeled point.
pub fn select_query_coreset(labeled: &[&[u8]], pool: &[&[u8]]) -> Result<QueryResult> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if labeled.is_empty() {
        return Err(Error::invalid("coreset selection needs a labeled point"));
    }
    let scores: Vec<f64> = pool
        .par_iter()
        .map(|x| {
            let d2 = labeled.iter().map(|l| l.iter().zip(x.iter()).filter(|(a, b)| a != b).count()).min().unwrap();
            (d2 as f64).sqrt()
        })
        .collect();
    Ok(pick(scores, true))
}

pub fn select_query_random(pool_len: usize, rng: &mut seeding::Rng) -> Result<QueryResult> {
    if pool_len == 0 {
        return Err(Error::EmptyPool);
    }
    Ok(QueryResult { index: rng.random_range(0..pool_len), scores: Vec::new(), tie_count: 1 })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::committee::compute_weights;

    fn committee(trees: Vec<Tree>, weights: Vec<f64>) -> WeightedCommittee {
        let k = trees.len();
        WeightedCommittee {
            members: trees.into_iter().map(Arc::new).collect(),
            losses: vec![0.0; k],
            weights,
            mode: Weighting::Gibbs,
            beta: 1.0,
            n_classes: 2,
        }
    }

    #[test]
    fn names_round_trip() {
        let names: Vec<String> = StrategyKind::ALL.iter().map(|s| s.name()).collect();
        assert_eq!(
            names,
            [
                "random",
                "uncertainty",
                "coreset",
                "qbc_rf_sqrt",
                "qbc_rf_sqrt_gibbs",
                "qbc_rf_all",
                "qbc_rf_all_gibbs",
                "unreal",
                "breal"
            ]
        );
        for s in StrategyKind::ALL {
            assert_eq!(s.name().parse::<StrategyKind>().unwrap(), s);
        }
        let f3: StrategyKind = "qbc_rf_f3_gibbs".parse().unwrap();
        assert_eq!(f3, StrategyKind::QbcRf { subset: SubsetMode::Fixed(3), weighting: Weighting::Gibbs });
        let err = "bogus".parse::<StrategyKind>().unwrap_err().to_string();
        assert!(err.contains("breal") && err.contains("qbc_rf_all_gibbs"));
    }

    #[test]
    fn entropy_examples() {
        let pool: Vec<&[u8]> = vec![&[0], &[1], &[0]];
        let c = committee(vec![Tree::leaf(1), Tree::leaf(1)], vec![0.5, 0.5]);
        let q = select_query_entropy(&c, &pool).unwrap();
        assert_eq!((q.index, q.tie_count), (0, 3));

        let split = Tree::split(0, Tree::leaf(1), Tree::leaf(0));
        let c = committee(vec![Tree::leaf(1), split.clone()], vec![0.5, 0.5]);
        let q = select_query_entropy(&c, &pool).unwrap();
        assert_eq!(q.index, 1);
        assert_eq!(q.score(), Some(2f64.ln()));

        let w = compute_weights(&[0.04, 0.06], Weighting::Gibbs, 50.0).unwrap();
        let c = committee(vec![Tree::leaf(1), split], w.clone());
        let q = select_query_entropy(&c, &pool).unwrap();
        let h = -(w[0] * w[0].ln() + w[1] * w[1].ln());
        assert_eq!(q.index, 1);
        assert!((q.score().unwrap() - h).abs() < 1e-15);
        assert_eq!(q.scores[0], 0.0);

        assert!(matches!(select_query_entropy(&c, &[]), Err(Error::EmptyPool)));
    }

    #[test]
    fn entropy_invariant_to_label_swap() {
        let a = Tree::split(0, Tree::leaf(1), Tree::leaf(0));
        let b = Tree::split(1, Tree::leaf(0), Tree::leaf(1));
        let swap = |t: &Tree| -> Tree {
            t.to_string().replace("l0", "lx").replace("l1", "l0").replace("lx", "l1").parse().unwrap()
        };
        let pool: Vec<&[u8]> = vec![&[0, 0], &[0, 1], &[1, 0], &[1, 1]];
        let w = vec![0.3, 0.7];
        let q1 = select_query_entropy(&committee(vec![a.clone(), b.clone()], w.clone()), &pool).unwrap();
        let q2 = select_query_entropy(&committee(vec![swap(&a), swap(&b)], w), &pool).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn uncertainty_examples() {
        let t = Tree::split(0, Tree::leaf(0), Tree::leaf(0));
        let freqs = LeafFrequencies { counts: vec![vec![9, 1], vec![6, 4]] };
        let q = select_query_uncertainty(&t, &freqs, &[&[0], &[1], &[0]]).unwrap();
        assert_eq!(q.index, 1);
        assert_eq!(q.score(), Some(0.6));
        let pure = LeafFrequencies { counts: vec![vec![3, 0], vec![0, 2]] };
        let q = select_query_uncertainty(&t, &pure, &[&[1], &[0]]).unwrap();
        assert_eq!((q.index, q.tie_count), (0, 2));
        let q = select_query_uncertainty(&t, &freqs, &[&[0]]).unwrap();
        assert_eq!(q.index, 0);
    }

    #[test]
    fn coreset_examples() {
        let origin: &[u8] = &[0, 0, 0];
        let q = select_query_coreset(&[origin], &[&[1, 0, 0], &[1, 1, 0]]).unwrap();
        assert_eq!(q.index, 1);
        assert_eq!(q.score(), Some(2f64.sqrt()));
        let q = select_query_coreset(&[origin, &[1, 0, 0]], &[&[0, 0, 0], &[1, 0, 0]]).unwrap();
        assert_eq!((q.index, q.tie_count, q.score()), (0, 2, Some(0.0)));
        let q = select_query_coreset(&[origin], &[&[0, 0, 0], &[0, 1, 0]]).unwrap();
        assert_eq!(q.index, 1);
        assert!(q.scores.iter().all(|&s| s <= q.scores[q.index]));
    }

    #[test]
    fn random_is_uniform_and_deterministic() {
        assert_eq!(select_query_random(1, &mut seeding::rng(3, &[])).unwrap().index, 0);
        let draw = |seed| {
            let mut rng = seeding::rng(seed, &[]);
            (0..20).map(|_| select_query_random(7, &mut rng).unwrap().index).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));

        let mut rng = seeding::rng(11, &[]);
        let mut hits = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            hits[select_query_random(4, &mut rng).unwrap().index] += 1;
        }
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for h in hits {
            assert!((h as f64 - 2500.0).abs() <= 3.0 * sigma, "{hits:?}");
        }
        assert!(matches!(select_query_random(0, &mut rng), Err(Error::EmptyPool)));
    }
}
