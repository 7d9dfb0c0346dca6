//! Selector calibration on the pilot set and the pool-based active learning
//! loop.

use serde::{Deserialize, Serialize};

use crate::committee::{vote_entropy, WeightedCommittee, Weighting};
use crate::data::{Dataset, Label, SplitSpec};
use crate::error::{Error, Result};
use crate::forest::{train_forest, ForestConfig};
use crate::rashomon::{RashomonSet, Searcher, DEFAULT_SET_SIZE_CAP};
use crate::seeding;
use crate::strategy::{
    select_query_coreset, select_query_entropy, select_query_random, select_query_uncertainty, StrategyKind,
};
use crate::tree::Tree;

/// Candidate (depth, lambda) pairs in tie-break order: shallower first,
/// then the larger penalty.
pub const STRUCTURE_GRID: [(usize, f64); 4] = [(3, 0.01), (3, 0.001), (5, 0.01), (5, 0.001)];
pub const BETA_GRID: [f64; 8] = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0];
pub const EPSILON_STEP: f64 = 0.05;
pub const DEFAULT_EPSILON_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub depth: usize,
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
}

/// Number of leave-one-out mistakes of the optimal tree at (depth, lambda).
pub fn loo_mistakes(pilot: &Dataset, depth: usize, lambda: f64) -> Result<usize> {
    let mut mistakes = 0;
    let all: Vec<usize> = (0..pilot.n()).collect();
    for held in 0..pilot.n() {
        let rest: Vec<usize> = all.iter().copied().filter(|&i| i != held).collect();
        let (tree, _) = Searcher::new(&pilot.select(&rest), lambda)?.optimal(depth);
        if tree.predict(pilot.row(held))? != pilot.label(held) {
            mistakes += 1;
        }
    }
    Ok(mistakes)
}

fn check_pilot(pilot: &Dataset) -> Result<()> {
    let present = pilot.class_counts().iter().filter(|&&c| c > 0).count();
    if pilot.n() < 2 || present < 2 {
        return Err(Error::StratificationInfeasible(format!(
            "calibration needs two rows and two classes, pilot has {} rows and {present} classes",
            pilot.n()
        )));
    }
    Ok(())
}

pub fn calibrate_structure(pilot: &Dataset) -> Result<(usize, f64)> {
    check_pilot(pilot)?;
    let mut best: Option<(usize, (usize, f64))> = None;
    for (d, lambda) in STRUCTURE_GRID {
        let m = loo_mistakes(pilot, d, lambda)?;
        if best.is_none_or(|(b, _)| m < b) {
            best = Some((m, (d, lambda)));
        }
    }
    Ok(best.unwrap().1)
}

/// Smallest multiple of the step whose Rashomon set has two or more trees.
pub fn calibrate_epsilon(pilot: &Dataset, depth: usize, lambda: f64, epsilon_max: f64, cap: usize) -> Result<f64> {
    let mut searcher = Searcher::new(pilot, lambda)?;
    let mut k = 0u32;
    loop {
        let epsilon = k as f64 * EPSILON_STEP;
        if epsilon > epsilon_max + 1e-9 {
            return Err(Error::EpsilonExhausted { max: epsilon_max });
        }
        if searcher.enumerate(depth, epsilon, cap)?.len() >= 2 {
            return Ok(epsilon);
        }
        k += 1;
    }
}

/// Grid value maximizing the precision-recall area of vote entropy against
/// in-sample committee errors. Falls back to the smallest value when no
/// grid point produces an error.
pub fn calibrate_beta(pilot: &Dataset, set: &RashomonSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("empty Rashomon set"));
    }
    let mut best: Option<(f64, f64)> = None;
    for beta in BETA_GRID {
        let committee = WeightedCommittee::new(set.trees(), set.losses(), Weighting::Gibbs, beta, pilot.n_classes())?;
        let mut scores = Vec::with_capacity(pilot.n());
        let mut errors = Vec::with_capacity(pilot.n());
        for (x, &y) in pilot.rows().zip(pilot.labels()) {
            let dist = committee.vote_distribution(x)?;
            scores.push(vote_entropy(&dist));
            errors.push(dist.majority() != y);
        }
        let area = match auprc(&scores, &errors) {
            Ok(a) => a,
            Err(Error::NoPositives) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(a, _)| area > a) {
            best = Some((area, beta));
        }
    }
    Ok(best.map_or(BETA_GRID[0], |(_, b)| b))
}

/// Step-wise area under the precision-recall curve. Tied scores are
/// consumed as one group before precision is measured.
pub fn auprc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += positives[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total as f64;
        area += (tp as f64 / seen as f64) * (recall - prev_recall);
        prev_recall = recall;
    }
    Ok(area)
}

pub trait Oracle {
    fn label(&self, index: usize) -> Label;
}

/// Answers queries from the dataset's own labels.
pub struct HeldOutOracle<'a>(pub &'a Dataset);

impl Oracle for HeldOutOracle<'_> {
    fn label(&self, index: usize) -> Label {
        self.0.label(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub budget: usize,
    pub strategy: StrategyKind,
    pub predictor_depth: usize,
    pub predictor_lambda: f64,
    pub epsilon_max: f64,
    pub set_size_cap: usize,
    pub forest_trees: usize,
    pub seed: u64,
}

impl LoopConfig {
    pub fn new(strategy: StrategyKind, budget: usize, seed: u64) -> Self {
        LoopConfig {
            budget,
            strategy,
            predictor_depth: 5,
            predictor_lambda: 0.001,
            epsilon_max: DEFAULT_EPSILON_MAX,
            set_size_cap: DEFAULT_SET_SIZE_CAP,
            forest_trees: 100,
            seed,
        }
    }
}

/// State after `iteration` acquisitions. For `iteration >= 1` the committee
/// statistics and query are those of the selection step that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub labeled: usize,
    pub accuracy: f64,
    pub set_size: Option<usize>,
    pub ecs: Option<f64>,
    pub selector_objective: Option<f64>,
    /// Dataset row index of the queried point.
    pub queried: Option<usize>,
    pub score: Option<f64>,
    pub predictor: Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub strategy: StrategyKind,
    pub calibration: Option<CalibrationResult>,
    pub records: Vec<IterationRecord>,
}

impl RunHistory {
    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }

    pub fn final_predictor(&self) -> &Tree {
        &self.records.last().expect("history is never empty").predictor
    }
}

/// Hook called with every committee before it scores the pool.
pub trait Observer {
    fn committee(
        &mut self,
        _iteration: usize,
        _labeled: &Dataset,
        _set: Option<&RashomonSet>,
        _committee: &WeightedCommittee,
    ) {
    }
}

pub struct NoObserver;

impl Observer for NoObserver {}

/// Calibrates only the Selector parameters the strategy consumes.
pub fn calibrate_for(strategy: StrategyKind, pilot: &Dataset, cfg: &LoopConfig) -> Result<Option<CalibrationResult>> {
    if matches!(strategy, StrategyKind::Random | StrategyKind::Coreset) {
        return Ok(None);
    }
    let (depth, lambda) = calibrate_structure(pilot)?;
    let mut out = CalibrationResult { depth, lambda, epsilon: None, beta: None };
    let needs_set = strategy.is_rashomon() || strategy.uses_beta();
    if needs_set {
        let epsilon = calibrate_epsilon(pilot, depth, lambda, cfg.epsilon_max, cfg.set_size_cap)?;
        out.epsilon = Some(epsilon);
        if strategy.uses_beta() {
            let set = Searcher::new(pilot, lambda)?.enumerate(depth, epsilon, cfg.set_size_cap)?;
            out.beta = Some(calibrate_beta(pilot, &set)?);
        }
    }
    Ok(Some(out))
}

pub fn run_active_learning(
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &LoopConfig,
    oracle: &dyn Oracle,
) -> Result<RunHistory> {
    run_active_learning_observed(ds, split, cfg, oracle, &mut NoObserver)
}

pub fn run_active_learning_observed(
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &LoopConfig,
    oracle: &dyn Oracle,
    observer: &mut dyn Observer,
) -> Result<RunHistory> {
    let in_range = |v: &[usize]| v.iter().all(|&i| i < ds.n());
    if !(in_range(&split.test) && in_range(&split.pool) && in_range(&split.pilot)) {
        return Err(Error::invalid("split index out of range"));
    }
    if split.test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    if cfg.budget > split.pool.len() {
        return Err(Error::invalid(format!("budget {} exceeds pool of {}", cfg.budget, split.pool.len())));
    }
    let test = ds.select(&split.test);
    let mut labeled = ds.select(&split.pilot).with_labels(split.pilot.iter().map(|&i| oracle.label(i)).collect());
    let mut labeled_rows: Vec<usize> = split.pilot.clone();
    let mut pool = split.pool.clone();

    let calibration = calibrate_for(cfg.strategy, &labeled, cfg)?;
    let stream = seeding::derive(cfg.seed, &[seeding::name_id(&cfg.strategy.name())]);
    let mut rng = seeding::rng(stream, &[0]);

    let predictor = |labeled: &Dataset| -> Result<(Tree, f64)> {
        let (tree, _) = Searcher::new(labeled, cfg.predictor_lambda)?.optimal(cfg.predictor_depth);
        let acc = tree.accuracy(&test)?;
        Ok((tree, acc))
    };
    let (tree, accuracy) = predictor(&labeled)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        labeled: labeled.n(),
        accuracy,
        set_size: None,
        ecs: None,
        selector_objective: None,
        queried: None,
        score: None,
        predictor: tree,
    }];

    for iteration in 1..=cfg.budget {
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        let pool_rows: Vec<&[u8]> = pool.iter().map(|&i| ds.row(i)).collect();
        let (mut set_size, mut ecs, mut objective) = (None, None, None);
        let query = match cfg.strategy {
            StrategyKind::Random => select_query_random(pool.len(), &mut rng)?,
            StrategyKind::Coreset => {
                let lab: Vec<&[u8]> = labeled_rows.iter().map(|&i| ds.row(i)).collect();
                select_query_coreset(&lab, &pool_rows)?
            }
            StrategyKind::Uncertainty => {
                let cal = calibration.expect("calibrated");
                let (tree, record) = Searcher::new(&labeled, cal.lambda)?.optimal(cal.depth);
                objective = Some(record.value);
                let freqs = tree.leaf_frequencies(&labeled)?;
                select_query_uncertainty(&tree, &freqs, &pool_rows)?
            }
            StrategyKind::Unreal | StrategyKind::Breal => {
                let cal = calibration.expect("calibrated");
                let set = Searcher::new(&labeled, cal.lambda)?.enumerate(
                    cal.depth,
                    cal.epsilon.expect("epsilon calibrated"),
                    cfg.set_size_cap,
                )?;
                let (mode, beta) = match cfg.strategy {
                    StrategyKind::Breal => (Weighting::Gibbs, cal.beta.expect("beta calibrated")),
                    _ => (Weighting::Uniform, 0.0),
                };
                let committee = WeightedCommittee::new(set.trees(), set.losses(), mode, beta, ds.n_classes())?;
                observer.committee(iteration, &labeled, Some(&set), &committee);
                set_size = Some(set.len());
                ecs = Some(committee.effective_size());
                objective = Some(set.optimum);
                select_query_entropy(&committee, &pool_rows)?
            }
            StrategyKind::QbcRf { subset, weighting } => {
                let cal = calibration.expect("calibrated");
                let forest_cfg = ForestConfig {
                    n_trees: cfg.forest_trees,
                    subset,
                    max_depth: cal.depth,
                    lambda: cal.lambda,
                    seed: seeding::derive(stream, &[1, iteration as u64]),
                };
                let forest = train_forest(&labeled, &forest_cfg)?;
                let beta = match weighting {
                    Weighting::Gibbs => cal.beta.expect("beta calibrated"),
                    Weighting::Uniform => 0.0,
                };
                let committee = WeightedCommittee::new(forest.trees, forest.losses, weighting, beta, ds.n_classes())?;
                observer.committee(iteration, &labeled, None, &committee);
                ecs = Some(committee.effective_size());
                select_query_entropy(&committee, &pool_rows)?
            }
        };
        let score = query.score();
        let chosen = pool.remove(query.index);
        labeled.push(ds.row(chosen), oracle.label(chosen));
        labeled_rows.push(chosen);

        let (tree, accuracy) = predictor(&labeled)?;
        records.push(IterationRecord {
            iteration,
            labeled: labeled.n(),
            accuracy,
            set_size,
            ecs,
            selector_objective: objective,
            queried: Some(chosen),
            score,
            predictor: tree,
        });
    }
    Ok(RunHistory { strategy: cfg.strategy, calibration, records })
}
