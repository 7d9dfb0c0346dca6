//! Experiment configuration, replication scheduling and result files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{run_active_learning, HeldOutOracle, LoopConfig, RunHistory, DEFAULT_EPSILON_MAX};
use crate::data::{
    binarize, gen_parity, gen_xor_mixture, load_csv, split_dataset, Dataset, SplitSpec, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::floatfmt::fmt17;
use crate::metrics::{aggregate, oracle_agreement, AggregateRow, DEFAULT_AUC_K};
use crate::rashomon::{Searcher, DEFAULT_SET_SIZE_CAP};
use crate::seeding;
use crate::strategy::StrategyKind;
use crate::tree::{tree_edit_distance, Tree};

pub const DEFAULT_SEED_COUNT: u64 = 25;
pub const DEFAULT_BUDGET_CAP: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParityConfig {
    pub n: usize,
    #[serde(default)]
    pub noise_dims: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label: String,
    #[serde(default = "default_max_thresholds")]
    pub max_thresholds: usize,
}

fn default_max_thresholds() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Xor(SyntheticConfig),
    Parity(ParityConfig),
    Csv(CsvSource),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Xor(cfg) => gen_xor_mixture(cfg),
            DatasetSource::Parity(cfg) => gen_parity(cfg.n, cfg.noise_dims, cfg.seed),
            DatasetSource::Csv(src) => {
                let raw = load_csv(&src.path, &src.label)?;
                Ok(binarize(&raw, src.max_thresholds)?.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub source: DatasetSource,
}

/// Either an explicit list of seeds or a count `n` meaning `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Count(DEFAULT_SEED_COUNT)
    }
}

impl Seeds {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSpec>,
    pub strategies: Vec<StrategyKind>,
    #[serde(default)]
    pub seeds: Seeds,
    /// Labels to acquire; defaults to min(pool size, 300).
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_auc_k")]
    pub auc_k: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_pilot_size")]
    pub pilot_size: usize,
    #[serde(default = "default_predictor_depth")]
    pub predictor_depth: usize,
    #[serde(default = "default_predictor_lambda")]
    pub predictor_lambda: f64,
    #[serde(default = "default_epsilon_max")]
    pub epsilon_max: f64,
    #[serde(default = "default_set_size_cap")]
    pub set_size_cap: usize,
    #[serde(default = "default_forest_trees")]
    pub forest_trees: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_auc_k() -> f64 {
    DEFAULT_AUC_K
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_pilot_size() -> usize {
    20
}
fn default_predictor_depth() -> usize {
    5
}
fn default_predictor_lambda() -> f64 {
    0.001
}
fn default_epsilon_max() -> f64 {
    DEFAULT_EPSILON_MAX
}
fn default_set_size_cap() -> usize {
    DEFAULT_SET_SIZE_CAP
}
fn default_forest_trees() -> usize {
    100
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.datasets.is_empty() {
            return fail("at least one dataset is required".into());
        }
        if self.strategies.is_empty() {
            return fail("at least one strategy is required".into());
        }
        if self.seeds.resolve().is_empty() {
            return fail("at least one seed is required".into());
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if d.name.is_empty() || d.name.contains([',', '/', '\\', '"', '\n']) {
                return fail(format!("dataset name `{}` must be non-empty without , / \\ or quotes", d.name));
            }
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                return fail(format!("duplicate dataset name `{}`", d.name));
            }
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return fail(format!("duplicate strategy `{s}`"));
            }
        }
        let seeds = self.seeds.resolve();
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return fail(format!("duplicate seed {s}"));
            }
        }
        if !(self.auc_k > 0.0 && self.auc_k <= 1.0) {
            return fail("auc_k must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return fail("test_fraction must lie in [0, 1)".into());
        }
        if self.predictor_depth == 0 || self.pilot_size == 0 || self.forest_trees < 2 {
            return fail("predictor_depth and pilot_size must be positive, forest_trees at least 2".into());
        }
        if !(self.predictor_lambda >= 0.0 && self.epsilon_max >= 0.0) {
            return fail("predictor_lambda and epsilon_max must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-iteration agreement with and edit distance to the oracle tree.
#[derive(Debug, Clone, PartialEq)]
pub struct StructurePoint {
    pub agreement: f64,
    pub edit_distance: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub split: SplitSpec,
    pub history: RunHistory,
    pub structure: Vec<StructurePoint>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dataset: String,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub seconds: f64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub outcomes: Vec<RunOutcome>,
    pub aggregates: Vec<AggregateRow>,
}

impl ResultBundle {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.outcomes.iter().filter(|o| o.result.is_err())
    }
}

struct Prepared {
    name: String,
    id: u64,
    data: Dataset,
    oracle_tree: Tree,
}

/// Split seed depends only on (seed, dataset) so strategies share splits.
pub fn split_seed(seed: u64, dataset: &str) -> u64 {
    seeding::derive(seed, &[seeding::name_id(dataset), 1])
}

pub fn loop_seed(seed: u64, dataset: &str) -> u64 {
    seeding::derive(seed, &[seeding::name_id(dataset), 2])
}

fn run_one(cfg: &ExperimentConfig, d: &Prepared, strategy: StrategyKind, seed: u64) -> Result<RunResult> {
    debug_assert_eq!(d.id, seeding::name_id(&d.name));
    let split = split_dataset(&d.data, cfg.test_fraction, cfg.pilot_size, split_seed(seed, &d.name))?;
    let budget = cfg.budget.unwrap_or_else(|| split.pool.len().min(DEFAULT_BUDGET_CAP));
    let loop_cfg = LoopConfig {
        budget,
        strategy,
        predictor_depth: cfg.predictor_depth,
        predictor_lambda: cfg.predictor_lambda,
        epsilon_max: cfg.epsilon_max,
        set_size_cap: cfg.set_size_cap,
        forest_trees: cfg.forest_trees,
        seed: loop_seed(seed, &d.name),
    };
    let history = run_active_learning(&d.data, &split, &loop_cfg, &HeldOutOracle(&d.data))?;
    let test = d.data.select(&split.test);
    let structure = history
        .records
        .iter()
        .map(|r| {
            Ok(StructurePoint {
                agreement: oracle_agreement(&r.predictor, &d.oracle_tree, &test)?,
                edit_distance: tree_edit_distance(&r.predictor, &d.oracle_tree),
            })
        })
        .collect::<Result<_>>()?;
    Ok(RunResult { split, history, structure })
}

/// Runs every (dataset, strategy, seed) combination on `jobs` threads.
/// Individual run failures are recorded, not propagated.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ResultBundle> {
    cfg.validate()?;
    let mut prepared = Vec::new();
    for spec in &cfg.datasets {
        let data = spec
            .source
            .load()
            .map_err(|e| Error::Run { context: format!("dataset {}", spec.name), source: Box::new(e) })?;
        let (oracle_tree, _) = Searcher::new(&data, cfg.predictor_lambda)?.optimal(cfg.predictor_depth);
        prepared.push(Prepared { id: seeding::name_id(&spec.name), name: spec.name.clone(), data, oracle_tree });
    }
    let seeds = cfg.seeds.resolve();
    let mut plan = Vec::new();
    for d in 0..prepared.len() {
        for &s in &cfg.strategies {
            for &seed in &seeds {
                plan.push((d, s, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        plan.par_iter()
            .map(|&(d, strategy, seed)| {
                let start = Instant::now();
                let result = run_one(cfg, &prepared[d], strategy, seed).map_err(|e| {
                    Error::Run {
                        context: format!("{}/{}/seed {}", prepared[d].name, strategy, seed),
                        source: Box::new(e),
                    }
                    .to_string()
                });
                RunOutcome {
                    dataset: prepared[d].name.clone(),
                    strategy,
                    seed,
                    seconds: start.elapsed().as_secs_f64(),
                    result,
                }
            })
            .collect()
    });
    let aggregates = aggregate_outcomes(cfg, &outcomes)?;
    Ok(ResultBundle { config: cfg.clone(), outcomes, aggregates })
}

fn aggregate_outcomes(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> Result<Vec<AggregateRow>> {
    let mut rows = Vec::new();
    for spec in &cfg.datasets {
        let mut runs = Vec::new();
        for s in &cfg.strategies {
            let traces: Vec<Vec<f64>> = outcomes
                .iter()
                .filter(|o| o.dataset == spec.name && o.strategy == *s)
                .filter_map(|o| o.result.as_ref().ok().map(|r| r.history.accuracies()))
                .collect();
            if !traces.is_empty() {
                runs.push((s.name(), traces));
            }
        }
        rows.extend(aggregate(&spec.name, &runs, cfg.auc_k)?);
    }
    Ok(rows)
}

fn opt17(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub const ACCURACY_HEADER: [&str; 5] = ["dataset", "strategy", "seed", "iteration", "accuracy"];
pub const RASHOMON_HEADER: [&str; 6] = ["dataset", "strategy", "seed", "iteration", "set_size", "ecs"];
pub const QUERIES_HEADER: [&str; 6] = ["dataset", "strategy", "seed", "iteration", "queried_index", "score"];
pub const AGGREGATE_HEADER: [&str; 7] = ["dataset", "strategy", "auc_k", "rho", "nrel_70", "nrel_80", "nrel_90"];
pub const RUNTIME_HEADER: [&str; 4] = ["dataset", "strategy", "seed", "seconds"];
pub const STRUCTURE_HEADER: [&str; 6] =
    ["dataset", "strategy", "seed", "iteration", "oracle_agreement", "edit_distance"];
pub const SUMMARY_HEADER: [&str; 6] = ["dataset", "strategy", "seeds", "iteration", "mean_accuracy", "std_accuracy"];
pub const FAILURES_HEADER: [&str; 4] = ["dataset", "strategy", "seed", "error"];

fn successes(outcomes: &[RunOutcome]) -> impl Iterator<Item = (&RunOutcome, &RunResult)> {
    outcomes.iter().filter_map(|o| o.result.as_ref().ok().map(|r| (o, r)))
}

fn key(o: &RunOutcome) -> Vec<String> {
    vec![o.dataset.clone(), o.strategy.name(), o.seed.to_string()]
}

fn write_aggregates(dir: &Path, rows: &[AggregateRow]) -> Result<()> {
    let agg = rows.iter().map(|r| {
        let mut v = vec![r.dataset.clone(), r.strategy.clone(), opt17(r.auc_k), opt17(r.rho)];
        v.extend(r.nrel.iter().map(|x| opt17(*x)));
        v
    });
    write_atomic(&dir.join("aggregate.csv"), &csv_bytes(&AGGREGATE_HEADER, agg)?)?;
    let summary = rows.iter().flat_map(|r| {
        r.mean.iter().zip(&r.std).enumerate().map(move |(t, (m, s))| {
            vec![r.dataset.clone(), r.strategy.clone(), r.seeds.to_string(), t.to_string(), fmt17(*m), fmt17(*s)]
        })
    });
    write_atomic(&dir.join("accuracy_summary.csv"), &csv_bytes(&SUMMARY_HEADER, summary)?)
}

#[derive(Serialize)]
struct RunFile<'a> {
    dataset: &'a str,
    strategy: StrategyKind,
    seed: u64,
    split: &'a SplitSpec,
    history: &'a RunHistory,
}

#[derive(Serialize, Deserialize)]
pub struct ManifestRun {
    pub dataset: String,
    pub strategy: String,
    pub seed: u64,
    pub status: String,
    pub file: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub runs: Vec<ManifestRun>,
}

pub fn run_file_name(dataset: &str, strategy: StrategyKind, seed: u64) -> String {
    format!("{dataset}__{strategy}__seed{seed}.json")
}

/// Writes every result file under `dir`. Aggregates are written last.
pub fn write_outputs(bundle: &ResultBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("runs"))?;
    let outcomes = &bundle.outcomes;

    let acc = successes(outcomes).flat_map(|(o, r)| {
        r.history.records.iter().map(move |rec| {
            let mut v = key(o);
            v.extend([rec.iteration.to_string(), fmt17(rec.accuracy)]);
            v
        })
    });
    write_atomic(&dir.join("accuracy_history.csv"), &csv_bytes(&ACCURACY_HEADER, acc)?)?;

    let rash = successes(outcomes).flat_map(|(o, r)| {
        r.history.records.iter().filter(|rec| rec.ecs.is_some()).map(move |rec| {
            let mut v = key(o);
            v.extend([
                rec.iteration.to_string(),
                rec.set_size.map(|s| s.to_string()).unwrap_or_default(),
                opt17(rec.ecs),
            ]);
            v
        })
    });
    write_atomic(&dir.join("rashomon_history.csv"), &csv_bytes(&RASHOMON_HEADER, rash)?)?;

    let queries = successes(outcomes).flat_map(|(o, r)| {
        r.history.records.iter().filter_map(move |rec| {
            let q = rec.queried?;
            let mut v = key(o);
            v.extend([rec.iteration.to_string(), q.to_string(), opt17(rec.score)]);
            Some(v)
        })
    });
    write_atomic(&dir.join("queries.csv"), &csv_bytes(&QUERIES_HEADER, queries)?)?;

    let structure = successes(outcomes).flat_map(|(o, r)| {
        r.structure.iter().enumerate().map(move |(t, p)| {
            let mut v = key(o);
            v.extend([t.to_string(), fmt17(p.agreement), p.edit_distance.to_string()]);
            v
        })
    });
    write_atomic(&dir.join("structure_history.csv"), &csv_bytes(&STRUCTURE_HEADER, structure)?)?;

    let runtime = outcomes.iter().map(|o| {
        let mut v = key(o);
        v.push(format!("{:.6}", o.seconds));
        v
    });
    write_atomic(&dir.join("runtime.csv"), &csv_bytes(&RUNTIME_HEADER, runtime)?)?;

    let failures = outcomes.iter().filter_map(|o| {
        let e = o.result.as_ref().err()?;
        let mut v = key(o);
        v.push(e.clone());
        Some(v)
    });
    write_atomic(&dir.join("failures.csv"), &csv_bytes(&FAILURES_HEADER, failures)?)?;

    let mut runs = Vec::new();
    for o in outcomes {
        let file = match &o.result {
            Ok(r) => {
                let name = run_file_name(&o.dataset, o.strategy, o.seed);
                let body = RunFile {
                    dataset: &o.dataset,
                    strategy: o.strategy,
                    seed: o.seed,
                    split: &r.split,
                    history: &r.history,
                };
                write_atomic(&dir.join("runs").join(&name), &serde_json::to_vec_pretty(&body)?)?;
                Some(format!("runs/{name}"))
            }
            Err(_) => None,
        };
        runs.push(ManifestRun {
            dataset: o.dataset.clone(),
            strategy: o.strategy.name(),
            seed: o.seed,
            status: if o.result.is_ok() { "ok".into() } else { "failed".into() },
            file,
        });
    }
    let manifest = Manifest { version: env!("CARGO_PKG_VERSION").to_string(), config: bundle.config.clone(), runs };
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;

    write_aggregates(dir, &bundle.aggregates)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path, message: e.to_string() })
}

/// Recomputes the aggregate files of a result directory from its
/// accuracy history and manifest.
type Traces = BTreeMap<u64, Vec<(usize, f64)>>;

pub fn report(dir: &Path) -> Result<Vec<AggregateRow>> {
    let manifest = read_manifest(dir)?;
    let path = dir.join("accuracy_history.csv");
    let mut reader = csv::Reader::from_path(&path)?;
    if reader.headers()?.iter().ne(ACCURACY_HEADER) {
        return Err(Error::Format { path, message: "unexpected header".into() });
    }
    // dataset -> strategy -> seed -> trace, in config order
    // (dataset, strategy) -> seed -> (iteration, accuracy)
    let mut traces: BTreeMap<(usize, usize), Traces> = BTreeMap::new();
    let cfg = &manifest.config;
    let bad = |m: String| Error::Format { path: path.clone(), message: m };
    for rec in reader.records() {
        let rec = rec?;
        let d = cfg
            .datasets
            .iter()
            .position(|s| s.name == rec[0])
            .ok_or_else(|| bad(format!("unknown dataset {}", &rec[0])))?;
        let s = cfg
            .strategies
            .iter()
            .position(|s| s.name() == rec[1])
            .ok_or_else(|| bad(format!("unknown strategy {}", &rec[1])))?;
        let seed: u64 = rec[2].parse().map_err(|_| bad(format!("bad seed {}", &rec[2])))?;
        let it: usize = rec[3].parse().map_err(|_| bad(format!("bad iteration {}", &rec[3])))?;
        let acc: f64 = rec[4].parse().map_err(|_| bad(format!("bad accuracy {}", &rec[4])))?;
        traces.entry((d, s)).or_default().entry(seed).or_default().push((it, acc));
    }
    let mut rows = Vec::new();
    for (d, spec) in cfg.datasets.iter().enumerate() {
        let mut runs = Vec::new();
        for (s, strategy) in cfg.strategies.iter().enumerate() {
            let Some(by_seed) = traces.get(&(d, s)) else { continue };
            // keep config seed order
            let order = cfg.seeds.resolve();
            let mut list = Vec::new();
            for seed in order {
                if let Some(points) = by_seed.get(&seed) {
                    let mut points = points.clone();
                    points.sort_by_key(|p| p.0);
                    list.push(points.into_iter().map(|p| p.1).collect());
                }
            }
            runs.push((strategy.name(), list));
        }
        rows.extend(aggregate(&spec.name, &runs, cfg.auc_k)?);
    }
    write_aggregates(dir, &rows)?;
    Ok(rows)
}
