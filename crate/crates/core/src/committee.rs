//! Committee weighting, weighted vote distributions, vote entropy and
//! effective committee size. Works for any set of trees, whether they come
//! from a Rashomon set or a random forest.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::tree::Tree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Gibbs,
}

/// Normalized committee weights.
///
/// Gibbs weights are `exp(-beta * loss)` normalized, computed after
/// subtracting the smallest loss so the largest exponent is zero.
pub fn compute_weights(losses: &[f64], mode: Weighting, beta: f64) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::invalid("committee needs at least one member"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("losses must be finite"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta must be finite and >= 0"));
    }
    let k = losses.len() as f64;
    match mode {
        Weighting::Uniform => Ok(vec![1.0 / k; losses.len()]),
        Weighting::Gibbs => {
            let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
            let raw: Vec<f64> = losses.iter().map(|l| (-beta * (l - min)).exp()).collect();
            let total: f64 = raw.iter().sum();
            Ok(raw.into_iter().map(|r| r / total).collect())
        }
    }
}

/// Probability of each class under the weighted committee vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteDistribution(pub Vec<f64>);

impl VoteDistribution {
    /// Class with the largest mass, smallest label on ties.
    pub fn majority(&self) -> Label {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best as Label
    }
}

#[derive(Debug, Clone)]
pub struct WeightedCommittee {
    pub members: Vec<Arc<Tree>>,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub mode: Weighting,
    pub beta: f64,
    pub n_classes: usize,
}

impl WeightedCommittee {
    pub fn new(
        members: Vec<Arc<Tree>>,
        losses: Vec<f64>,
        mode: Weighting,
        beta: f64,
        n_classes: usize,
    ) -> Result<Self> {
        if members.len() != losses.len() {
            return Err(Error::invalid("one loss per member required"));
        }
        let weights = compute_weights(&losses, mode, beta)?;
        Ok(WeightedCommittee { members, losses, weights, mode, beta, n_classes })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn vote_distribution(&self, x: &[u8]) -> Result<VoteDistribution> {
        for m in &self.members {
            m.predict(x)?;
        }
        Ok(self.vote_unchecked(x))
    }

    pub(crate) fn vote_unchecked(&self, x: &[u8]) -> VoteDistribution {
        let mut probs = vec![0.0; self.n_classes];
        for (m, &w) in self.members.iter().zip(&self.weights) {
            probs[m.predict_unchecked(x) as usize] += w;
        }
        VoteDistribution(probs)
    }

    pub fn effective_size(&self) -> f64 {
        effective_committee_size(&self.weights)
    }
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
pub fn vote_entropy(dist: &VoteDistribution) -> f64 {
    shannon(&dist.0)
}

fn shannon(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `exp` of the weight entropy: 1 for a point mass, k for uniform over k.
pub fn effective_committee_size(weights: &[f64]) -> f64 {
    shannon(weights).exp()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn e_inv() -> f64 {
        (-1.0f64).exp()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(compute_weights(&[0.1, 0.5, 0.9], Weighting::Gibbs, 0.0).unwrap(), vec![1.0 / 3.0; 3]);
        // softmax of (-2, -3) by hand: exp(-1) ratio between the two
        let w = compute_weights(&[0.04, 0.06], Weighting::Gibbs, 50.0).unwrap();
        let expect = [1.0 / (1.0 + e_inv()), e_inv() / (1.0 + e_inv())];
        assert!((w[0] - expect[0]).abs() < 1e-12 && (w[1] - expect[1]).abs() < 1e-12);
        assert!((w[0] - 0.7311).abs() < 1e-4);
        assert_eq!(compute_weights(&[0.3], Weighting::Gibbs, 10.0).unwrap(), vec![1.0]);
        assert_eq!(compute_weights(&[0.3, 0.1], Weighting::Uniform, 10.0).unwrap(), vec![0.5, 0.5]);
    }

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
    fn vote_examples() {
        let c = committee(vec![Tree::leaf(1), Tree::leaf(1)], vec![0.5, 0.5]);
        assert_eq!(c.vote_distribution(&[0]).unwrap().0, vec![0.0, 1.0]);
        let c = committee(vec![Tree::leaf(1), Tree::leaf(0)], vec![0.5, 0.5]);
        assert_eq!(c.vote_distribution(&[0]).unwrap().0, vec![0.5, 0.5]);
        let w = compute_weights(&[0.04, 0.06], Weighting::Gibbs, 50.0).unwrap();
        let c = committee(vec![Tree::leaf(1), Tree::leaf(0)], w.clone());
        let d = c.vote_distribution(&[0]).unwrap();
        assert_eq!(d.0[1], w[0]);
        assert!((d.0[1] - 0.7311).abs() < 1e-4);
        let bad = committee(vec![Tree::split(4, Tree::leaf(0), Tree::leaf(1))], vec![1.0]);
        assert!(bad.vote_distribution(&[0, 1]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(vote_entropy(&VoteDistribution(vec![1.0, 0.0])), 0.0);
        assert!((vote_entropy(&VoteDistribution(vec![0.5, 0.5])) - 2f64.ln()).abs() < 1e-15);
        let p = 1.0 / (1.0 + e_inv());
        let h = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((vote_entropy(&VoteDistribution(vec![p, 1.0 - p])) - h).abs() < 1e-15);
        assert!((h - 0.5822).abs() < 1e-4);
    }

    #[test]
    fn ecs_examples() {
        assert!((effective_committee_size(&[0.5, 0.5]) - 2.0).abs() < 1e-12);
        assert_eq!(effective_committee_size(&[1.0]), 1.0);
        let direct = (-(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln())).exp();
        assert!((effective_committee_size(&[0.8, 0.2]) - direct).abs() < 1e-15);
        assert!((direct - 1.6494).abs() < 1e-4);
        assert!(effective_committee_size(&[0.8, 0.2]) < effective_committee_size(&[0.5, 0.5]));
    }

    #[test]
    fn majority_tie_goes_to_smaller_label() {
        assert_eq!(VoteDistribution(vec![0.5, 0.5]).majority(), 0);
        assert_eq!(VoteDistribution(vec![0.2, 0.8]).majority(), 1);
    }

    proptest! {
        #[test]
        fn weights_normalized_and_shift_invariant(
            losses in proptest::collection::vec(0.0f64..1.0, 1..50),
            beta in 0.0f64..500.0,
            shift in -1.0f64..1.0,
        ) {
            let w = compute_weights(&losses, Weighting::Gibbs, beta).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
            let w2 = compute_weights(&shifted, Weighting::Gibbs, beta).unwrap();
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let ecs = effective_committee_size(&w);
            prop_assert!(ecs >= 1.0 - 1e-9 && ecs <= losses.len() as f64 + 1e-9);
        }

        #[test]
        fn votes_sum_to_one(
            leaves in proptest::collection::vec((0u32..2, 0u32..2, 0usize..3), 1..20),
            x in proptest::collection::vec(0u8..2, 3),
            beta in 0.0f64..100.0,
        ) {
            let trees: Vec<Arc<Tree>> = leaves
                .iter()
                .map(|&(a, b, f)| Arc::new(Tree::split(f, Tree::leaf(a), Tree::leaf(b))))
                .collect();
            let losses: Vec<f64> = (0..trees.len()).map(|i| i as f64 * 0.01).collect();
            let c = WeightedCommittee::new(trees, losses, Weighting::Gibbs, beta, 2).unwrap();
            let d = c.vote_distribution(&x).unwrap();
            prop_assert!((d.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn duplicating_a_member_keeps_votes(
            leaves in proptest::collection::vec((0u32..2, 0u32..2, 0usize..3), 1..10),
            dup in 0usize..10,
            x in proptest::collection::vec(0u8..2, 3),
        ) {
            let trees: Vec<Arc<Tree>> = leaves
                .iter()
                .map(|&(a, b, f)| Arc::new(Tree::split(f, Tree::leaf(a), Tree::leaf(b))))
                .collect();
            let k = trees.len();
            let dup = dup % k;
            let weights = vec![1.0 / k as f64; k];
            let base = WeightedCommittee { members: trees.clone(), losses: vec![0.0; k], weights: weights.clone(), mode: Weighting::Uniform, beta: 0.0, n_classes: 2 };
            let mut members = trees;
            members.push(members[dup].clone());
            let mut split_weights = weights;
            split_weights[dup] /= 2.0;
            split_weights.push(split_weights[dup]);
            let split = WeightedCommittee { members, losses: vec![0.0; k + 1], weights: split_weights, mode: Weighting::Uniform, beta: 0.0, n_classes: 2 };
            let a = base.vote_distribution(&x).unwrap();
            let b = split.vote_distribution(&x).unwrap();
            for (p, q) in a.0.iter().zip(&b.0) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
