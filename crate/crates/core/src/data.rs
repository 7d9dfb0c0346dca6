//! Dataset ingestion, binarization, synthetic generators, label noise and
//! train/test/pilot splitting.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Class index into a dataset's `label_names`.
pub type Label = u32;

/// A column of the raw input, typed by inference.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw tabular data as read from CSV, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub feature_names: Vec<String>,
    pub columns: Vec<Column>,
    pub label_column: String,
    pub labels: Vec<String>,
}

impl RawDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

/// Binary feature matrix with class labels.
///
/// `x` is row-major with one byte (0 or 1) per entry. `label_names` is the
/// full label set; subsets produced by [`Dataset::select`] keep it even when
/// some classes are absent from the selected rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    x: Vec<u8>,
    y: Vec<Label>,
    p: usize,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from rows of 0/1 values.
    pub fn from_rows(
        rows: &[Vec<u8>],
        y: Vec<Label>,
        feature_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let p = feature_names.len();
        if p == 0 {
            return Err(Error::NoFeatures);
        }
        if rows.len() != y.len() {
            return Err(Error::invalid("row count differs from label count"));
        }
        let mut x = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::invalid("row width differs from feature count"));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::invalid("feature values must be 0 or 1"));
            }
            x.extend_from_slice(row);
        }
        let k = label_names.len();
        if let Some(&bad) = y.iter().find(|&&l| l as usize >= k) {
            return Err(Error::invalid(format!("label {bad} outside label set of size {k}")));
        }
        Ok(Dataset { x, y, p, feature_names, label_names })
    }

    /// Binary-labelled dataset with generated feature names `x0..x{p-1}`.
    pub fn binary(rows: &[Vec<u8>], y: Vec<Label>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let names = (0..p).map(|j| format!("x{j}")).collect();
        Self::from_rows(rows, y, names, vec!["0".into(), "1".into()])
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.x.chunks_exact(self.p)
    }

    pub fn labels(&self) -> &[Label] {
        &self.y
    }

    pub fn label(&self, i: usize) -> Label {
        self.y[i]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.y {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Copies the given rows (in the given order) into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.p);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset { x, y, p: self.p, feature_names: self.feature_names.clone(), label_names: self.label_names.clone() }
    }

    pub fn with_labels(&self, y: Vec<Label>) -> Dataset {
        assert_eq!(y.len(), self.n());
        Dataset { y, ..self.clone() }
    }

    /// Appends one labelled row.
    pub fn push(&mut self, row: &[u8], label: Label) {
        debug_assert_eq!(row.len(), self.p);
        self.x.extend_from_slice(row);
        self.y.push(label);
    }

    /// Writes the dataset as CSV with a trailing `label` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header)?;
        for (row, &l) in self.rows().zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(u8::to_string).collect();
            rec.push(self.label_names[l as usize].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<RawDataset> {
    let file = File::open(path.as_ref())?;
    read_csv(file, label_column)
}

pub fn read_csv<R: Read>(input: R, label_column: &str) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyFile);
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            let line = rec.position().map_or(0, |p| p.line());
            return Err(Error::RaggedRow(line));
        }
        for (col, v) in cells.iter_mut().zip(rec.iter()) {
            col.push(v.trim().to_string());
        }
    }
    if cells[label_idx].is_empty() {
        return Err(Error::EmptyFile);
    }

    let labels = cells.remove(label_idx);
    let mut feature_names = header;
    feature_names.remove(label_idx);
    let columns = cells
        .into_iter()
        .map(|vals| {
            let parsed: Option<Vec<f64>> = vals.iter().map(|v| v.parse::<f64>().ok()).collect();
            match parsed {
                Some(nums) if nums.iter().all(|v| v.is_finite()) => Column::Numeric(nums),
                _ => Column::Categorical(vals),
            }
        })
        .collect();
    Ok(RawDataset { feature_names, columns, label_column: label_column.to_string(), labels })
}

/// How one binary column is derived from a source feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinaryRule {
    /// 1 iff the categorical value equals `level`.
    OneHot { source: usize, level: String },
    /// 1 iff the numeric value is `<= threshold`.
    AtMost { source: usize, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarizationMap {
    pub rules: Vec<BinaryRule>,
    pub label_names: Vec<String>,
}

impl BinarizationMap {
    /// Applies the rules to raw data, reproducing the binarized matrix.
    pub fn apply(&self, raw: &RawDataset) -> Result<Dataset> {
        let n = raw.n_rows();
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|i| self.rules.iter().map(|r| rule_bit(r, raw, i)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let y = raw
            .labels
            .iter()
            .map(|l| {
                self.label_names
                    .iter()
                    .position(|name| name == l)
                    .map(|p| p as Label)
                    .ok_or_else(|| Error::invalid(format!("unknown label `{l}`")))
            })
            .collect::<Result<_>>()?;
        let names = self.rules.iter().map(|r| rule_name(r, raw)).collect();
        Dataset::from_rows(&rows, y, names, self.label_names.clone())
    }
}

fn rule_bit(rule: &BinaryRule, raw: &RawDataset, i: usize) -> Result<u8> {
    match rule {
        BinaryRule::OneHot { source, level } => match &raw.columns[*source] {
            Column::Categorical(v) => Ok((v[i] == *level) as u8),
            Column::Numeric(_) => Err(Error::invalid("one-hot rule on numeric column")),
        },
        BinaryRule::AtMost { source, threshold } => match &raw.columns[*source] {
            Column::Numeric(v) => Ok((v[i] <= *threshold) as u8),
            Column::Categorical(_) => Err(Error::invalid("threshold rule on categorical column")),
        },
    }
}

fn rule_name(rule: &BinaryRule, raw: &RawDataset) -> String {
    match rule {
        BinaryRule::OneHot { source, level } => format!("{}={}", raw.feature_names[*source], level),
        BinaryRule::AtMost { source, threshold } => {
            format!("{}<={}", raw.feature_names[*source], threshold)
        }
    }
}

fn sorted_label_names(labels: &[String]) -> Vec<String> {
    let uniq: BTreeSet<&String> = labels.iter().collect();
    let mut names: Vec<String> = uniq.into_iter().cloned().collect();
    let numeric: Option<Vec<f64>> = names.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(vals) = numeric {
        let mut paired: Vec<(f64, String)> = vals.into_iter().zip(names).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = paired.into_iter().map(|(_, s)| s).collect();
    }
    names
}

/// Midpoints between consecutive distinct values, subsampled to at most
/// `cap` thresholds at evenly spaced quantile positions.
fn numeric_thresholds(values: &[f64], cap: usize) -> Vec<f64> {
    let mut uniq: Vec<f64> = values.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mids: Vec<f64> = uniq.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    if mids.len() <= cap {
        return mids;
    }
    let m = mids.len();
    (0..cap).map(|i| mids[((2 * i + 1) * m) / (2 * cap)]).collect()
}

pub fn binarize(raw: &RawDataset, max_thresholds_per_feature: usize) -> Result<(Dataset, BinarizationMap)> {
    if raw.n_rows() == 0 {
        return Err(Error::EmptyFile);
    }
    let label_names = sorted_label_names(&raw.labels);
    if label_names.len() < 2 {
        return Err(Error::ConstantLabel);
    }
    let mut rules = Vec::new();
    for (source, col) in raw.columns.iter().enumerate() {
        match col {
            Column::Categorical(vals) => {
                let levels: BTreeSet<&String> = vals.iter().collect();
                rules.extend(levels.into_iter().map(|l| BinaryRule::OneHot { source, level: l.clone() }));
            }
            Column::Numeric(vals) => {
                rules.extend(
                    numeric_thresholds(vals, max_thresholds_per_feature)
                        .into_iter()
                        .map(|threshold| BinaryRule::AtMost { source, threshold }),
                );
            }
        }
    }
    if rules.is_empty() {
        return Err(Error::NoFeatures);
    }
    let map = BinarizationMap { rules, label_names };
    let ds = map.apply(raw)?;
    Ok((ds, map))
}

/// Parameters of the XOR / linear-threshold mixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub phi: f64,
    /// Weights of the linear labeller; drawn N(0,1) from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_p() -> usize {
    20
}

impl SyntheticConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SyntheticConfig { n, p: 20, alpha: 0.0, phi: 0.0, linear_weights: None, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::invalid("synthetic generator needs p >= 2"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if !(0.0..0.5).contains(&self.phi) {
            return Err(Error::invalid("phi must lie in [0, 0.5)"));
        }
        if let Some(w) = &self.linear_weights {
            if w.len() != self.p {
                return Err(Error::invalid("linear_weights must have length p"));
            }
        }
        Ok(())
    }
}

const STREAM_FEATURES: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;
const STREAM_MIXTURE: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// XOR-on-the-first-two-features labels mixed with a linear threshold
/// labeller, followed by symmetric label noise at rate `phi`.
///
/// The linear branch uses the raw 0/1 features: `y = 1[w·x > 0]`.
pub fn gen_xor_mixture(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let mut rng = seeding::rng(cfg.seed, &[STREAM_FEATURES]);
    let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..p).map(|_| rng.random_bool(0.5) as u8).collect()).collect();

    let w = match &cfg.linear_weights {
        Some(w) => w.clone(),
        None => {
            let mut wr = seeding::rng(cfg.seed, &[STREAM_WEIGHTS]);
            (0..p).map(|_| StandardNormal.sample(&mut wr)).collect()
        }
    };
    let mut mix = seeding::rng(cfg.seed, &[STREAM_MIXTURE]);
    let y: Vec<Label> = rows
        .iter()
        .map(|x| {
            let use_linear = mix.random_bool(cfg.alpha);
            if use_linear {
                let score: f64 = x.iter().zip(&w).map(|(&xi, wi)| xi as f64 * wi).sum();
                (score > 0.0) as Label
            } else {
                (x[0] ^ x[1]) as Label
            }
        })
        .collect();
    let ds = Dataset::binary(&rows, y)?;
    apply_label_noise(&ds, cfg.phi, seeding::derive(cfg.seed, &[STREAM_NOISE]))
}

/// Number of labels flipped at rate `phi` over `n` rows.
pub fn noise_count(phi: f64, n: usize) -> usize {
    (phi * n as f64 + 1e-9).floor() as usize
}

/// Flips exactly `floor(phi * n)` labels chosen uniformly without
/// replacement. Binary labels are swapped; with more classes a flipped label
/// moves to a uniformly chosen other class.
pub fn apply_label_noise(ds: &Dataset, phi: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..0.5).contains(&phi) {
        return Err(Error::invalid("phi must lie in [0, 0.5)"));
    }
    let n = ds.n();
    let k = noise_count(phi, n);
    if k == 0 {
        return Ok(ds.clone());
    }
    let mut rng = seeding::rng(seed, &[]);
    let picked = rand::seq::index::sample(&mut rng, n, k);
    let classes = ds.n_classes() as Label;
    let mut y = ds.labels().to_vec();
    for i in picked.iter() {
        y[i] = if classes == 2 {
            1 - y[i]
        } else {
            let shift = rng.random_range(1..classes);
            (y[i] + shift) % classes
        };
    }
    Ok(ds.with_labels(y))
}

/// 3-bit parity core plus `noise_dims` independent Bernoulli(0.5) columns.
/// `y = 1` iff `x0 + x1 + x2` is even.
pub fn gen_parity(n: usize, noise_dims: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("parity generator needs n >= 1"));
    }
    let p = 3 + noise_dims;
    let mut rng = seeding::rng(seed, &[STREAM_FEATURES]);
    let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..p).map(|_| rng.random_bool(0.5) as u8).collect()).collect();
    let y = rows.iter().map(|r| ((r[0] + r[1] + r[2]) % 2 == 0) as Label).collect();
    Dataset::binary(&rows, y)
}

/// Disjoint test / pool / pilot index sets covering `0..n`, each sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test: Vec<usize>,
    pub pool: Vec<usize>,
    pub pilot: Vec<usize>,
}

/// Largest-remainder apportionment of `total` slots by `counts`, ties broken
/// by class order, then topped up so every present class gets one slot.
fn stratified_quota(counts: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = counts.iter().sum();
    let mut quota: Vec<usize> = counts.iter().map(|&c| c * total / sum).collect();
    let mut rem: Vec<(usize, usize)> = counts.iter().enumerate().map(|(i, &c)| ((c * total) % sum, i)).collect();
    // largest remainder first, lower class index on ties
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = quota.iter().sum();
    for &(_, i) in rem.iter().take(total - assigned) {
        quota[i] += 1;
    }
    for i in 0..counts.len() {
        if counts[i] > 0 && quota[i] == 0 {
            let donor = (0..counts.len()).max_by_key(|&j| (quota[j], usize::MAX - j)).unwrap();
            quota[donor] -= 1;
            quota[i] = 1;
        }
    }
    quota
}

pub fn split_dataset(ds: &Dataset, test_fraction: f64, pilot_size: usize, seed: u64) -> Result<SplitSpec> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid("test_fraction must lie in [0, 1)"));
    }
    let n = ds.n();
    let mut rng = seeding::rng(seed, &[]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_test = (test_fraction * n as f64).round() as usize;
    let (test, rest) = order.split_at(n_test);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for &i in rest {
        by_class[ds.label(i) as usize].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::StratificationInfeasible("pool holds fewer than two classes".into()));
    }
    if pilot_size < present || pilot_size > rest.len() {
        return Err(Error::StratificationInfeasible(format!(
            "pilot of {pilot_size} cannot cover {present} classes from {} rows",
            rest.len()
        )));
    }
    let quota = stratified_quota(&counts, pilot_size);
    let mut pilot = Vec::with_capacity(pilot_size);
    let mut pool = Vec::with_capacity(rest.len() - pilot_size);
    for (members, &q) in by_class.iter().zip(&quota) {
        pilot.extend_from_slice(&members[..q]);
        pool.extend_from_slice(&members[q..]);
    }
    let mut test = test.to_vec();
    test.sort_unstable();
    pool.sort_unstable();
    pilot.sort_unstable();
    Ok(SplitSpec { test, pool, pilot })
}

const CACHE_MAGIC: &[u8; 5] = b"RLTD1";

/// Writes the columnar binary cache: magic, dimensions, names, bit-packed
/// feature columns, then labels. All integers little-endian u32.
pub fn write_cache(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    for v in [ds.n(), ds.p(), ds.n_classes()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for name in ds.feature_names.iter().chain(&ds.label_names) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    let bytes_per_col = ds.n().div_ceil(8);
    for j in 0..ds.p() {
        let mut col = vec![0u8; bytes_per_col];
        for (i, row) in ds.rows().enumerate() {
            col[i / 8] |= row[j] << (i % 8);
        }
        w.write_all(&col)?;
    }
    for &l in ds.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bad = |message: &str| Error::Format { path: path.to_path_buf(), message: message.into() };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let read_u32 = |r: &mut BufReader<File>| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let n = read_u32(&mut r)?;
    let p = read_u32(&mut r)?;
    let k = read_u32(&mut r)?;
    let mut names = Vec::with_capacity(p + k);
    for _ in 0..p + k {
        let len = read_u32(&mut r)?;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        names.push(String::from_utf8(buf).map_err(|_| bad("name is not UTF-8"))?);
    }
    let label_names = names.split_off(p);
    let mut rows = vec![vec![0u8; p]; n];
    let mut col = vec![0u8; n.div_ceil(8)];
    for j in 0..p {
        r.read_exact(&mut col)?;
        for (i, row) in rows.iter_mut().enumerate() {
            row[j] = (col[i / 8] >> (i % 8)) & 1;
        }
    }
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        y.push(read_u32(&mut r)? as Label);
    }
    Dataset::from_rows(&rows, y, names, label_names)
}
