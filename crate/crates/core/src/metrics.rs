//! Post-hoc evaluation of accuracy traces. A trace is indexed from t = 1,
//! where A(1) is the accuracy of the pilot-only predictor.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tree::Tree;

pub const MILESTONES: [f64; 3] = [0.7, 0.8, 0.9];
pub const DEFAULT_AUC_K: f64 = 0.7;

/// T = floor(K * N), guarded against representation error in K * N.
pub fn truncation_length(n: usize, k: f64) -> usize {
    (k * n as f64 + 1e-9).floor() as usize
}

/// Trapezoidal area under the first floor(K * N) points of the trace.
pub fn truncated_auc(trace: &[f64], k: f64) -> Result<f64> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::invalid("K must lie in (0, 1]"));
    }
    let t = truncation_length(trace.len(), k);
    if t < 2 {
        return Err(Error::TruncationTooShort(t));
    }
    Ok(trace[..t].windows(2).map(|w| (w[0] + w[1]) / 2.0).sum())
}

pub fn efficiency_ratio(auc: f64, auc_reference: f64) -> Result<f64> {
    if auc_reference == 0.0 {
        return Err(Error::DivisionByZero);
    }
    Ok(auc / auc_reference)
}

/// Smallest t (1-based) with A(t) at or above A(1) + milestone * (max A - A(1)).
pub fn labels_to_milestone(trace: &[f64], milestone: f64) -> Result<usize> {
    let first = *trace.first().ok_or_else(|| Error::invalid("empty trace"))?;
    let top = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let target = first + milestone * (top - first);
    trace.iter().position(|&a| a >= target - 1e-12).map(|i| i + 1).ok_or(Error::MilestoneUnreached(milestone))
}

/// Ratio of labels a method needs to reach the milestone to what random
/// sampling needs. Each trace uses its own start and maximum.
pub fn relative_label_efficiency(trace: &[f64], random: &[f64], milestone: f64) -> Result<f64> {
    if trace.len() != random.len() {
        return Err(Error::invalid("traces differ in length"));
    }
    let m = labels_to_milestone(trace, milestone)?;
    let r = labels_to_milestone(random, milestone)?;
    Ok(m as f64 / r as f64)
}

/// Fraction of test rows on which the two trees predict the same label.
pub fn oracle_agreement(predictor: &Tree, oracle: &Tree, test: &Dataset) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::invalid("empty test set"));
    }
    let mut same = 0;
    for x in test.rows() {
        same += (predictor.predict(x)? == oracle.predict(x)?) as usize;
    }
    Ok(same as f64 / test.n() as f64)
}

pub fn mean_trace(traces: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = traces.first().ok_or_else(|| Error::invalid("no traces"))?;
    if traces.iter().any(|t| t.len() != first.len()) {
        return Err(Error::invalid("traces differ in length"));
    }
    let k = traces.len() as f64;
    Ok((0..first.len()).map(|i| traces.iter().map(|t| t[i]).sum::<f64>() / k).collect())
}

/// Per-iteration sample standard deviation (zero for a single trace).
pub fn std_trace(traces: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mean = mean_trace(traces)?;
    if traces.len() < 2 {
        return Ok(vec![0.0; mean.len()]);
    }
    let k = traces.len() as f64;
    Ok(mean
        .iter()
        .enumerate()
        .map(|(i, m)| (traces.iter().map(|t| (t[i] - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub strategy: String,
    pub seeds: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub auc_k: Option<f64>,
    /// Relative to `breal` on the same dataset.
    pub rho: Option<f64>,
    /// Relative to `random` at each of `MILESTONES`.
    pub nrel: [Option<f64>; 3],
}

/// Aggregates the per-seed traces of every strategy on one dataset.
pub fn aggregate(dataset: &str, runs: &[(String, Vec<Vec<f64>>)], k: f64) -> Result<Vec<AggregateRow>> {
    let mut rows = Vec::new();
    for (strategy, traces) in runs {
        let mean = mean_trace(traces)?;
        let std = std_trace(traces)?;
        let auc_k = truncated_auc(&mean, k).ok();
        rows.push(AggregateRow {
            dataset: dataset.to_string(),
            strategy: strategy.clone(),
            seeds: traces.len(),
            mean,
            std,
            auc_k,
            rho: None,
            nrel: [None; 3],
        });
    }
    let breal = rows.iter().find(|r| r.strategy == "breal").and_then(|r| r.auc_k);
    let random = rows.iter().find(|r| r.strategy == "random").map(|r| r.mean.clone());
    for row in &mut rows {
        row.rho = match (row.auc_k, breal) {
            (Some(a), Some(b)) => efficiency_ratio(a, b).ok(),
            _ => None,
        };
        if let Some(random) = &random {
            for (slot, &m) in row.nrel.iter_mut().zip(&MILESTONES) {
                *slot = relative_label_efficiency(&row.mean, random, m).ok();
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(truncated_auc(&[0.5, 0.7, 0.9], 1.0).unwrap(), 1.4);
        let c = 0.75;
        assert_eq!(truncated_auc(&[c; 9], 1.0).unwrap(), c * 8.0);
        assert_eq!(truncation_length(10, 0.7), 7);
        let trace: Vec<f64> = (0..10).map(|i| i as f64).collect();
        // 6 trapezoids over 0..=6
        assert_eq!(truncated_auc(&trace, 0.7).unwrap(), 18.0);
        assert!(matches!(truncated_auc(&[0.5, 0.6], 0.7), Err(Error::TruncationTooShort(1))));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(efficiency_ratio(1.4, 1.4).unwrap(), 1.0);
        assert!((efficiency_ratio(1.26, 1.4).unwrap() - 0.9).abs() < 1e-15);
        assert!(matches!(efficiency_ratio(1.0, 0.0), Err(Error::DivisionByZero)));
    }

    #[test]
    fn nrel_examples() {
        let ramp = |hit: usize| -> Vec<f64> { (1..=200).map(|t| if t >= hit { 1.0 } else { 0.5 }).collect() };
        assert_eq!(relative_label_efficiency(&ramp(50), &ramp(100), 0.7).unwrap(), 0.5);
        let t = [0.5, 0.6, 0.55, 0.9, 0.8];
        assert_eq!(relative_label_efficiency(&t, &t, 0.9).unwrap(), 1.0);
        // the target is relative to each trace's own maximum, so only an
        // unattainable milestone fails
        assert!(matches!(labels_to_milestone(&t, 1.5), Err(Error::MilestoneUnreached(_))));
        assert_eq!(labels_to_milestone(&[0.6; 4], 0.9).unwrap(), 1);
    }

    #[test]
    fn agreement_examples() {
        let ds = Dataset::binary(&[vec![0], vec![1], vec![0], vec![1]], vec![0, 0, 1, 1]).unwrap();
        let stump = Tree::split(0, Tree::leaf(0), Tree::leaf(1));
        assert_eq!(oracle_agreement(&stump, &stump, &ds).unwrap(), 1.0);
        assert_eq!(oracle_agreement(&stump, &Tree::leaf(0), &ds).unwrap(), 0.5);
        assert_eq!(oracle_agreement(&Tree::leaf(1), &Tree::leaf(1), &ds).unwrap(), 1.0);
    }

    #[test]
    fn mean_of_three_seeds() {
        let traces = vec![vec![0.5, 0.6], vec![0.7, 0.6], vec![0.6, 0.9]];
        let m = mean_trace(&traces).unwrap();
        assert!((m[0] - 0.6).abs() < 1e-15 && (m[1] - 0.7).abs() < 1e-15);
        let s = std_trace(&traces).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn aggregate_ratios() {
        let runs = vec![
            ("breal".to_string(), vec![vec![0.5, 0.7, 0.9, 0.9]]),
            ("random".to_string(), vec![vec![0.5, 0.6, 0.7, 0.9]]),
        ];
        let rows = aggregate("d", &runs, 0.75).unwrap();
        assert_eq!(rows[0].rho, Some(1.0));
        assert_eq!(rows[0].auc_k, Some(1.4));
        assert!((rows[1].rho.unwrap() - 1.2 / 1.4).abs() < 1e-12);
        assert_eq!(rows[1].nrel, [Some(1.0); 3]);
        // breal hits 0.78 at t=3, random at t=4
        assert_eq!(rows[0].nrel[0], Some(0.75));
    }

    proptest! {
        #[test]
        fn auc_monotone(base in proptest::collection::vec(0.0f64..1.0, 2..40), bump in proptest::collection::vec(0.0f64..0.1, 40), k in 0.1f64..1.0) {
            let high: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            if let (Ok(a), Ok(b)) = (truncated_auc(&base, k), truncated_auc(&high, k)) {
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn nrel_self_is_one(trace in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            for m in MILESTONES {
                prop_assert_eq!(relative_label_efficiency(&trace, &trace, m).unwrap(), 1.0);
            }
        }
    }
}
