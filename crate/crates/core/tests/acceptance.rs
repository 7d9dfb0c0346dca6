//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realtrees::active::{
    auprc, calibrate_epsilon, calibrate_structure, run_active_learning_observed, HeldOutOracle, LoopConfig, Observer,
    DEFAULT_EPSILON_MAX,
};
use realtrees::committee::{compute_weights, effective_committee_size, WeightedCommittee, Weighting};
use realtrees::data::{gen_xor_mixture, split_dataset, Dataset, SyntheticConfig};
use realtrees::experiment::{loop_seed, run_experiment, split_seed, write_outputs, ExperimentConfig, Seeds};
use realtrees::metrics::{relative_label_efficiency, truncated_auc};
use realtrees::rashomon::{enumerate_rashomon, optimal_tree, RashomonSet, SearchConfig, DEFAULT_SET_SIZE_CAP};
use realtrees::strategy::StrategyKind;
use realtrees::tree::{CanonicalKey, Tree};

type Check = Result<String, String>;

// Brute-force reference, independent of the library's search.
#[derive(Clone)]
enum Bt {
    Leaf(u8),
    Split(usize, Box<Bt>, Box<Bt>),
}

impl Bt {
    fn predict(&self, x: &[u8]) -> u8 {
        match self {
            Bt::Leaf(c) => *c,
            Bt::Split(f, z, o) => {
                if x[*f] == 0 {
                    z.predict(x)
                } else {
                    o.predict(x)
                }
            }
        }
    }

    fn leaves(&self) -> usize {
        match self {
            Bt::Leaf(_) => 1,
            Bt::Split(_, z, o) => z.leaves() + o.leaves(),
        }
    }

    fn to_tree(&self) -> Tree {
        match self {
            Bt::Leaf(c) => Tree::leaf(*c as _),
            Bt::Split(f, z, o) => Tree::split(*f, z.to_tree(), o.to_tree()),
        }
    }
}

fn all_legal(p: usize, k: u8, depth: usize, used: &mut Vec<usize>) -> Vec<Bt> {
    let mut out: Vec<Bt> = (0..k).map(Bt::Leaf).collect();
    if depth == 0 {
        return out;
    }
    for f in 0..p {
        if used.contains(&f) {
            continue;
        }
        used.push(f);
        let subs = all_legal(p, k, depth - 1, used);
        used.pop();
        for z in &subs {
            for o in &subs {
                out.push(Bt::Split(f, Box::new(z.clone()), Box::new(o.clone())));
            }
        }
    }
    out
}

fn brute_objective(t: &Bt, rows: &[Vec<u8>], y: &[u8], lambda: f64) -> f64 {
    let mis = rows.iter().zip(y).filter(|(x, &l)| t.predict(x) != l).count();
    mis as f64 / rows.len() as f64 + lambda * t.leaves() as f64
}

/// Keys and objectives of every legal tree within (1 + eps) of the optimum.
fn brute_set(rows: &[Vec<u8>], y: &[u8], k: u8, depth: usize, lambda: f64, eps: f64) -> Vec<(CanonicalKey, f64)> {
    let p = rows[0].len();
    let scored: Vec<(Bt, f64)> = all_legal(p, k, depth, &mut Vec::new())
        .into_iter()
        .map(|t| {
            let v = brute_objective(&t, rows, y, lambda);
            (t, v)
        })
        .collect();
    let best = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let mut out: Vec<(CanonicalKey, f64)> = scored
        .into_iter()
        .filter(|(_, v)| *v <= (1.0 + eps) * best + 1e-12)
        .map(|(t, v)| (t.to_tree().canonical_key(), v))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn compare_with_brute(rows: &[Vec<u8>], y: &[u8], k: u8, depth: usize, lambda: f64, eps: f64) -> Result<usize, String> {
    let names = (0..rows[0].len()).map(|j| format!("x{j}")).collect();
    let labels = (0..k).map(|c| c.to_string()).collect();
    let ds = Dataset::from_rows(rows, y.iter().map(|&l| l as _).collect(), names, labels).map_err(|e| e.to_string())?;
    let set = enumerate_rashomon(&ds, &SearchConfig::new(depth, lambda, eps)).map_err(|e| e.to_string())?;
    let expected = brute_set(rows, y, k, depth, lambda, eps);
    let mut got: Vec<(CanonicalKey, f64)> =
        set.members.iter().map(|m| (m.tree.canonical_key(), m.objective.value)).collect();
    got.sort_by(|a, b| a.0.cmp(&b.0));
    let keys = |v: &[(CanonicalKey, f64)]| v.iter().map(|e| e.0.clone()).collect::<Vec<_>>();
    if keys(&got) != keys(&expected) {
        return Err(format!("set of {} trees, brute force found {}", got.len(), expected.len()));
    }
    if let Some((a, b)) = got.iter().zip(&expected).find(|(a, b)| (a.1 - b.1).abs() > 1e-12) {
        return Err(format!("objective {} vs brute force {}", a.1, b.1));
    }
    Ok(got.len())
}

fn enumeration_matches_brute_force() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut sizes = 0;
    for case in 0..100 {
        let n = rng.random_range(1..=30);
        let p = rng.random_range(1..=5);
        let depth = rng.random_range(1..=2);
        let k = if rng.random_bool(0.8) { 2 } else { 3 };
        let lambda = [0.01, 0.001][rng.random_range(0..2)];
        let eps = [0.0, 0.05, 0.25][rng.random_range(0..3)];
        let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(0..2)).collect()).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..k)).collect();
        sizes += compare_with_brute(&rows, &y, k, depth, lambda, eps)
            .map_err(|e| format!("case {case} (n={n} p={p} d={depth} lambda={lambda} eps={eps}): {e}"))?;
    }
    Ok(format!("100 instances, {sizes} trees in total"))
}

fn xor(n: usize, phi: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig { phi, ..SyntheticConfig::new(n, seed) }
}

fn optimal_tree_fits_clean_xor() -> Check {
    let mut shapes = Vec::new();
    for seed in [7, 8, 9] {
        let ds = gen_xor_mixture(&xor(500, 0.0, seed)).map_err(|e| e.to_string())?;
        let (tree, obj) = optimal_tree(&ds, &SearchConfig::new(5, 0.001, 0.0)).map_err(|e| e.to_string())?;
        let acc = tree.accuracy(&ds).map_err(|e| e.to_string())?;
        if acc != 1.0 {
            return Err(format!("seed {seed}: accuracy {acc} of {tree}"));
        }
        shapes.push(format!("{} leaves", obj.leaves));
    }
    Ok(format!("accuracy 1.0 on seeds 7, 8, 9 ({})", shapes.join(", ")))
}

fn xor_sets_hold_alternatives() -> Check {
    let ds = gen_xor_mixture(&xor(500, 0.0, 7)).map_err(|e| e.to_string())?;
    let split = split_dataset(&ds, 0.2, 20, 3).map_err(|e| e.to_string())?;
    let pilot = ds.select(&split.pilot);
    let (depth, lambda) = calibrate_structure(&pilot).map_err(|e| e.to_string())?;
    let eps = calibrate_epsilon(&pilot, depth, lambda, DEFAULT_EPSILON_MAX, DEFAULT_SET_SIZE_CAP)
        .map_err(|e| e.to_string())?;
    let set = enumerate_rashomon(&pilot, &SearchConfig::new(depth, lambda, eps)).map_err(|e| e.to_string())?;
    if set.len() < 2 {
        return Err(format!("calibrated set at eps={eps} has {} member", set.len()));
    }
    let rows = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    let y = [0, 1, 1, 0];
    let pure = compare_with_brute(&rows, &y, 2, 2, 0.01, 0.0)?;
    if pure != 2 {
        return Err(format!("pure XOR set has {pure} trees, expected 2"));
    }
    Ok(format!("calibrated eps={eps} gives {} trees; pure XOR gives 2", set.len()))
}

fn weighting_identities() -> Check {
    for k in [1usize, 2, 10, 1000] {
        let losses: Vec<f64> = (0..k).map(|i| 0.1 + i as f64 * 1e-3).collect();
        let w = compute_weights(&losses, Weighting::Uniform, 1.0).map_err(|e| e.to_string())?;
        let ecs = effective_committee_size(&w);
        if (ecs - k as f64).abs() > 1e-9 * k as f64 {
            return Err(format!("uniform ECS over {k} is {ecs}"));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("uniform weights over {k} do not sum to 1"));
        }
        let g0 = compute_weights(&losses, Weighting::Gibbs, 0.0).map_err(|e| e.to_string())?;
        if g0.iter().zip(&w).any(|(a, b)| (a - b).abs() > 1e-15) {
            return Err(format!("Gibbs at beta=0 differs from uniform for {k} members"));
        }
    }
    let losses = [0.2, 0.25, 0.3];
    let g = compute_weights(&losses, Weighting::Gibbs, 10.0).map_err(|e| e.to_string())?;
    let raw: Vec<f64> = losses.iter().map(|l: &f64| (-10.0 * l).exp()).collect();
    let z: f64 = raw.iter().sum();
    if g.iter().zip(&raw).any(|(a, r)| (a - r / z).abs() > 1e-15) {
        return Err(format!("Gibbs weights {g:?}"));
    }
    if (g.iter().sum::<f64>() - 1.0).abs() > 1e-9 || !(g[0] > g[1] && g[1] > g[2]) {
        return Err("Gibbs weights not normalized and decreasing in loss".into());
    }
    let shifted = compute_weights(&[1000.2, 1000.25, 1000.3], Weighting::Gibbs, 10.0).map_err(|e| e.to_string())?;
    if shifted.iter().zip(&g).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err("Gibbs weights change under a constant loss shift".into());
    }
    let point = effective_committee_size(&[1.0, 0.0, 0.0]);
    if point != 1.0 {
        return Err(format!("point-mass ECS is {point}"));
    }
    let trees = vec![Arc::new(Tree::leaf(0)), Arc::new(Tree::leaf(1))];
    let c = WeightedCommittee::new(trees, vec![0.1, 0.1], Weighting::Gibbs, 5.0, 2).map_err(|e| e.to_string())?;
    let votes = c.vote_distribution(&[0]).map_err(|e| e.to_string())?;
    if votes.0 != vec![0.5, 0.5] {
        return Err(format!("tied committee votes {:?}", votes.0));
    }
    Ok("uniform ECS = k for k in 1, 2, 10, 1000; Gibbs normalized and shift-invariant".into())
}

fn metric_examples() -> Check {
    let auc = truncated_auc(&[0.5, 0.7, 0.9], 1.0).map_err(|e| e.to_string())?;
    if (auc - 1.4).abs() > 1e-12 {
        return Err(format!("AUC {auc}, expected 1.4"));
    }
    let perfect = auprc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).map_err(|e| e.to_string())?;
    if perfect != 1.0 {
        return Err(format!("AUPRC of a perfect ranking is {perfect}"));
    }
    let reversed = auprc(&[0.1, 0.9], &[true, false]).map_err(|e| e.to_string())?;
    if (reversed - 0.5).abs() > 1e-12 {
        return Err(format!("AUPRC of a reversed pair is {reversed}"));
    }
    let trace = [0.55, 0.6, 0.58, 0.7, 0.82, 0.81, 0.9];
    for m in [0.7, 0.8, 0.9] {
        let r = relative_label_efficiency(&trace, &trace, m).map_err(|e| e.to_string())?;
        if r != 1.0 {
            return Err(format!("self N_rel at {m} is {r}"));
        }
    }
    Ok("AUC 1.4, AUPRC 1.0 and 0.5, self N_rel 1".into())
}

fn xor_config(seeds: u64) -> ExperimentConfig {
    let text = r#"{"datasets": [{"name": "xor", "source": {"xor": {"n": 500, "phi": 0.1, "seed": 11}}}],
                   "strategies": ["breal", "random"], "budget": 150}"#;
    let mut cfg = ExperimentConfig::from_json(text).expect("acceptance config parses");
    cfg.seeds = Seeds::Count(seeds);
    cfg
}

fn per_seed_aucs(bundle: &realtrees::experiment::ResultBundle, strategy: StrategyKind) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for o in bundle.outcomes.iter().filter(|o| o.strategy == strategy) {
        let run = o.result.as_ref().map_err(|e| e.clone())?;
        out.push(truncated_auc(&run.history.accuracies(), 0.7).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn breal_beats_random(bundle: &realtrees::experiment::ResultBundle) -> Check {
    let b = per_seed_aucs(bundle, StrategyKind::Breal)?;
    let r = per_seed_aucs(bundle, StrategyKind::Random)?;
    if b.len() != 5 || r.len() != 5 {
        return Err(format!("{} breal and {} random runs, expected 5 each", b.len(), r.len()));
    }
    let wins = b.iter().zip(&r).filter(|(x, y)| x > y).count();
    let detail = b.iter().zip(&r).map(|(x, y)| format!("{x:.2}/{y:.2}")).collect::<Vec<_>>().join(" ");
    if wins >= 4 {
        Ok(format!("breal ahead on {wins}/5 seeds (breal/random AUC: {detail})"))
    } else {
        Err(format!("breal ahead on only {wins}/5 seeds (breal/random AUC: {detail})"))
    }
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let path = e.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.into_iter().collect()
}

fn outputs_reproducible(first: &realtrees::experiment::ResultBundle, cfg: &ExperimentConfig) -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_outputs(first, &a).map_err(|e| e.to_string())?;
    let second = run_experiment(cfg, 3).map_err(|e| e.to_string())?;
    write_outputs(&second, &b).map_err(|e| e.to_string())?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    if fa != fb {
        return Err(format!("file lists differ: {fa:?} vs {fb:?}"));
    }
    let mut compared = 0;
    for f in fa.iter().filter(|f| f.as_str() != "runtime.csv") {
        if fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() {
            return Err(format!("{f} differs between 1 and 3 jobs"));
        }
        compared += 1;
    }
    Ok(format!("{compared} files identical across 1 and 3 jobs"))
}

struct Audit {
    lambda: f64,
    checked: usize,
    problems: Vec<String>,
}

impl Observer for Audit {
    fn committee(
        &mut self,
        iteration: usize,
        labeled: &Dataset,
        set: Option<&RashomonSet>,
        committee: &WeightedCommittee,
    ) {
        let Some(set) = set else {
            self.problems.push(format!("iteration {iteration}: no Rashomon set"));
            return;
        };
        let best = set.members.iter().filter_map(|m| m.tree.objective(labeled, self.lambda).ok()).map(|o| o.value);
        let best = best.fold(f64::INFINITY, f64::min);
        if (best - set.optimum).abs() > 1e-12 {
            self.problems.push(format!("iteration {iteration}: optimum {} but best member {best}", set.optimum));
        }
        for m in &set.members {
            match m.tree.objective(labeled, self.lambda) {
                Ok(o) if o.value <= set.threshold + 1e-12 => {}
                Ok(o) => self
                    .problems
                    .push(format!("iteration {iteration}: {} at {} above {}", m.tree, o.value, set.threshold)),
                Err(e) => self.problems.push(format!("iteration {iteration}: {e}")),
            }
        }
        let ecs = committee.effective_size();
        if !(ecs >= 1.0 - 1e-9 && ecs <= set.len() as f64 + 1e-9) {
            self.problems.push(format!("iteration {iteration}: ECS {ecs} outside [1, {}]", set.len()));
        }
        self.checked += 1;
    }
}

fn breal_committees_within_threshold() -> Check {
    let name = "xor";
    let seed = 2;
    let ds = gen_xor_mixture(&xor(500, 0.1, 11)).map_err(|e| e.to_string())?;
    let split = split_dataset(&ds, 0.2, 20, split_seed(seed, name)).map_err(|e| e.to_string())?;
    let cfg = LoopConfig::new(StrategyKind::Breal, 60, loop_seed(seed, name));
    let pilot = ds.select(&split.pilot);
    let (_, lambda) = calibrate_structure(&pilot).map_err(|e| e.to_string())?;
    let mut audit = Audit { lambda, checked: 0, problems: Vec::new() };
    let history =
        run_active_learning_observed(&ds, &split, &cfg, &HeldOutOracle(&ds), &mut audit).map_err(|e| e.to_string())?;
    if history.calibration.as_ref().map(|c| c.lambda) != Some(lambda) {
        return Err("loop calibrated a different lambda".into());
    }
    if audit.checked != 60 {
        return Err(format!("observed {} committees over 60 iterations", audit.checked));
    }
    match audit.problems.first() {
        Some(p) => Err(format!("{} problems, first: {p}", audit.problems.len())),
        None => Ok(format!("{} committees audited", audit.checked)),
    }
}

fn report(name: &str, result: Check) -> bool {
    match result {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report("1 enumeration matches brute force", enumeration_matches_brute_force());
    ok &= report("2 optimal tree fits clean XOR", optimal_tree_fits_clean_xor());
    ok &= report("3 XOR sets hold alternatives", xor_sets_hold_alternatives());
    ok &= report("4 weighting identities", weighting_identities());
    ok &= report("5 metric examples", metric_examples());

    let cfg = xor_config(5);
    let bundle = run_experiment(&cfg, 1);
    match &bundle {
        Ok(bundle) => {
            ok &= report("6 breal beats random on noisy XOR", breal_beats_random(bundle));
            ok &= report("7 outputs reproducible across job counts", outputs_reproducible(bundle, &cfg));
        }
        Err(e) => {
            ok &= report("6 breal beats random on noisy XOR", Err(e.to_string()));
            ok &= report("7 outputs reproducible across job counts", Err(e.to_string()));
        }
    }
    ok &= report("8 breal committees stay within threshold", breal_committees_within_threshold());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
