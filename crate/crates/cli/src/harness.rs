//! The `gen-shifts`, `train`, `eval` and `selfcheck` commands.
//!
//! Output tree under the output directory:
//!
//! ```text
//! manifest.json
//! splits/<split>/{split.json, ood_flags.npy, id_nodes.npy, ood_nodes.npy, id_graph/, ood_graph/}
//! models/index.json
//! models/<key>/seed-<s>/{masks.npy, train.json, tnt.ckpt, tnt_log.csv, gcn.ckpt, gcn_log.csv}
//! eval/<split>/<method>.json, <method>.<graph>.csv, <method>.<graph>.json
//! eval/runs.csv, eval/aggregate.csv, eval/summary.json
//! ```
//!
//! `<key>` is `base` for models trained on the unperturbed dataset, which
//! serves every paired split, and the split name for label and temporal
//! splits, whose ID graph is a subgraph.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trn_ood_core::detect::{
    elign_score, energy_score, msp_score, propagate_scores, MahalanobisModel, ScoreParams, ScoreVector,
};
use trn_ood_core::diagnostics::{all_checks, CheckResult};
use trn_ood_core::metrics::{id_accuracy, MetricReport};
use trn_ood_core::model::{forward, gcn_forward, train, train_gcn, EpochLog, GcnModel, TntConfig};
use trn_ood_core::shift::{generate, OodSplit, ShiftKind, ShiftSpec};
use trn_ood_core::{Rng, Tensor, TrnGraph};

use crate::checkpoint::{Checkpoint, CheckpointHeader, ModelRecord};
use crate::config::{Experiment, MethodConfig, MethodKind};
use crate::error::{HarnessError, Result};
use crate::formats::{
    csv_bytes, json_bytes, load_graph, read_file, read_json, read_npy, save_graph, sha256_hex, usize_npy,
    write_atomic,
};
use crate::npy::Npy;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const BASE_KEY: &str = "base";

const TRAIN: u8 = 0;
const VAL: u8 = 1;
const TEST: u8 = 2;

/// Runs `f` on a pool capped by `TRN_OOD_THREADS` when set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var("TRN_OOD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn check_hash(found: &str, expected: &str, what: &str, force: bool) -> Result<()> {
    if found == expected || force {
        Ok(())
    } else {
        Err(HarnessError::HashMismatch(format!("{what} has {found}, config has {expected}")))
    }
}

// ---------------------------------------------------------------------------
// gen-shifts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub dir: String,
    /// Experiment seed the split belongs to.
    pub seed: u64,
    pub spec: ShiftSpec,
    pub paired: bool,
    pub model_key: String,
    pub id_nodes: usize,
    pub ood_graph_nodes: usize,
    pub ood_flagged: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub name: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub config_hash: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub splits: Vec<SplitEntry>,
    pub failures: Vec<Failure>,
}

/// Contents of `split.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub toolkit_version: String,
    pub config_hash: String,
    pub spec: ShiftSpec,
    pub seed: u64,
    pub paired: bool,
    pub id_num_classes: usize,
    pub ood_num_classes: usize,
    pub ood_flags: String,
    pub id_nodes: String,
    pub ood_nodes: String,
    pub class_map: Option<Vec<Option<usize>>>,
    pub warnings: Vec<String>,
    /// Relative path → SHA-256 of every data file in the split directory.
    pub files: BTreeMap<String, String>,
}

pub fn model_key(spec: &ShiftSpec) -> String {
    if spec.kind.is_paired() {
        BASE_KEY.to_string()
    } else {
        spec.label()
    }
}

fn save_split(dir: &Path, split: &OodSplit, seed: u64, hash: &str) -> Result<()> {
    let mut files = BTreeMap::new();
    for (sub, g) in [("id_graph", &split.id_graph), ("ood_graph", &split.ood_graph)] {
        for (name, digest) in save_graph(&dir.join(sub), g)? {
            files.insert(format!("{sub}/{name}"), digest);
        }
    }
    let flags: Vec<u8> = split.ood_flags.iter().map(|&f| f as u8).collect();
    let arrays = [
        ("ood_flags.npy", Npy::from_u8(&[flags.len()], &flags)),
        ("id_nodes.npy", usize_npy(&split.id_nodes)),
        ("ood_nodes.npy", usize_npy(&split.ood_nodes)),
    ];
    for (name, a) in arrays {
        let bytes = a.to_bytes();
        write_atomic(&dir.join(name), &bytes)?;
        files.insert(name.to_string(), sha256_hex(&bytes));
    }
    let record = SplitRecord {
        toolkit_version: TOOLKIT_VERSION.into(),
        config_hash: hash.into(),
        spec: split.spec.clone(),
        seed,
        paired: split.paired,
        id_num_classes: split.id_graph.num_classes(),
        ood_num_classes: split.ood_graph.num_classes(),
        ood_flags: "ood_flags.npy".into(),
        id_nodes: "id_nodes.npy".into(),
        ood_nodes: "ood_nodes.npy".into(),
        class_map: split.class_map.clone(),
        warnings: split.warnings.clone(),
        files,
    };
    write_atomic(&dir.join("split.json"), &json_bytes(&record))
}

/// A split read back from disk.
pub struct LoadedSplit {
    pub record: SplitRecord,
    pub id_graph: TrnGraph,
    pub ood_graph: TrnGraph,
    pub ood_flags: Vec<bool>,
    pub id_nodes: Vec<usize>,
    pub ood_nodes: Vec<usize>,
}

pub fn load_split(dir: &Path) -> Result<LoadedSplit> {
    let record: SplitRecord = read_json(&dir.join("split.json"))?;
    let idx = |name: &str| -> Result<Vec<usize>> {
        Ok(read_npy(&dir.join(name))?.to_i64()?.into_iter().map(|v| v as usize).collect())
    };
    let split = LoadedSplit {
        id_graph: load_graph(&dir.join("id_graph"), record.id_num_classes)?,
        ood_graph: load_graph(&dir.join("ood_graph"), record.ood_num_classes)?,
        ood_flags: read_npy(&dir.join(&record.ood_flags))?.to_i64()?.into_iter().map(|v| v != 0).collect(),
        id_nodes: idx(&record.id_nodes)?,
        ood_nodes: idx(&record.ood_nodes)?,
        record,
    };
    if split.ood_flags.len() != split.ood_graph.n() || split.id_nodes.len() != split.id_graph.n() {
        return Err(HarnessError::Format(format!("{}: index arrays do not match the graphs", dir.display())));
    }
    Ok(split)
}

/// Generates every (shift, seed) split. Failing specs are recorded in the
/// manifest and reported after the others are written.
pub fn cmd_gen_shifts(exp: &Experiment) -> Result<Manifest> {
    let out = &exp.output;
    let cells: Vec<(u64, ShiftSpec)> = exp
        .config
        .seeds
        .iter()
        .flat_map(|&s| exp.config.shifts_for_seed(s).into_iter().map(move |spec| (s, spec)))
        .collect();
    let results: Vec<std::result::Result<SplitEntry, Failure>> = with_pool(|| {
        cells
            .par_iter()
            .map(|(seed, spec)| {
                let dir = spec.label();
                let run = || -> Result<SplitEntry> {
                    let split = generate(&exp.graph, spec, exp.lexicon.as_ref())?;
                    save_split(&out.join("splits").join(&dir), &split, *seed, &exp.hash)?;
                    Ok(SplitEntry {
                        dir: dir.clone(),
                        seed: *seed,
                        spec: spec.clone(),
                        paired: split.paired,
                        model_key: model_key(spec),
                        id_nodes: split.id_graph.n(),
                        ood_graph_nodes: split.ood_graph.n(),
                        ood_flagged: split.ood_flags.iter().filter(|&&f| f).count(),
                        warnings: split.warnings,
                    })
                };
                run().map_err(|e| Failure {
                    name: dir.clone(),
                    seed: *seed,
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let mut manifest = Manifest {
        toolkit_version: TOOLKIT_VERSION.into(),
        config_hash: exp.hash.clone(),
        dataset: exp.dataset_name.clone(),
        seeds: exp.config.seeds.clone(),
        splits: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(e) => manifest.splits.push(e),
            Err(f) => manifest.failures.push(f),
        }
    }
    write_atomic(&out.join("manifest.json"), &json_bytes(&manifest))?;
    if manifest.failures.is_empty() {
        Ok(manifest)
    } else {
        let names: Vec<String> = manifest.failures.iter().map(|f| format!("{}: {}", f.name, f.error)).collect();
        Err(HarnessError::Runtime(format!("{} split(s) failed: {}", names.len(), names.join("; "))))
    }
}

pub fn read_manifest(exp: &Experiment, force: bool) -> Result<Manifest> {
    let path = exp.output.join("manifest.json");
    if !path.exists() {
        return Err(HarnessError::Runtime(format!("{} not found; run gen-shifts first", path.display())));
    }
    let m: Manifest = read_json(&path)?;
    check_hash(&m.config_hash, &exp.hash, "manifest.json", force)?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// train

/// Stratified assignment: per class, a seeded shuffle then `round(train·n_c)`
/// training and `round(val·n_c)` validation nodes, the rest for testing.
pub fn stratified_split(labels: &[usize], num_classes: usize, train: f64, val: f64, seed: u64) -> Vec<u8> {
    let mut rng = Rng::new(seed, "harness/split");
    let mut codes = vec![TEST; labels.len()];
    for c in 0..num_classes {
        let mut nodes: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut nodes);
        let n = nodes.len();
        let n_train = ((train * n as f64).round() as usize).min(n);
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        for &i in &nodes[..n_train] {
            codes[i] = TRAIN;
        }
        for &i in &nodes[n_train..n_train + n_val] {
            codes[i] = VAL;
        }
    }
    codes
}

fn nodes_with(codes: &[u8], code: u8) -> Vec<usize> {
    (0..codes.len()).filter(|&i| codes[i] == code).collect()
}

fn mask_of(codes: &[u8], code: u8) -> Vec<bool> {
    codes.iter().map(|&c| c == code).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    /// `None` when the set is empty.
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

/// Contents of `train.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub toolkit_version: String,
    pub config_hash: String,
    pub key: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub tnt: Option<Accuracies>,
    pub gcn: Option<Accuracies>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIndex {
    pub toolkit_version: String,
    pub config_hash: String,
    pub models: Vec<TrainRecord>,
}

#[derive(Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub cls_loss: f64,
    pub cont_loss: f64,
    pub total: f64,
}

fn log_rows(log: &[EpochLog]) -> Vec<LogRow> {
    log.iter()
        .map(|l| LogRow {
            epoch: l.epoch,
            cls_loss: l.cls_loss,
            cont_loss: l.cont_loss,
            total: l.total,
        })
        .collect()
}

pub fn model_dir(out: &Path, key: &str, seed: u64) -> PathBuf {
    out.join("models").join(key).join(format!("seed-{seed}"))
}

/// ID graph and the split codes over its nodes for a training cell.
fn training_graph(exp: &Experiment, key: &str, seed: u64, force: bool) -> Result<(TrnGraph, Vec<u8>)> {
    let (g, id_nodes) = if key == BASE_KEY {
        (exp.graph.clone(), (0..exp.graph.n()).collect::<Vec<_>>())
    } else {
        let dir = exp.output.join("splits").join(key);
        let s = load_split(&dir)?;
        check_hash(&s.record.config_hash, &exp.hash, &format!("splits/{key}"), force)?;
        (s.id_graph, s.id_nodes)
    };
    let codes = match &exp.masks {
        Some(m) => id_nodes.iter().map(|&i| m[i]).collect(),
        None => {
            let sp = &exp.config.split;
            stratified_split(g.labels(), g.num_classes(), sp.train, sp.val, sp.seed.unwrap_or(seed))
        }
    };
    Ok((g, codes))
}

fn accuracies(logits: &Tensor<f32>, g: &TrnGraph, codes: &[u8], log: &[EpochLog]) -> Result<Accuracies> {
    let acc = |code| -> Result<Option<f64>> {
        let mask = mask_of(codes, code);
        if mask.iter().any(|&m| m) {
            Ok(Some(id_accuracy(logits, g.labels(), &mask)?))
        } else {
            Ok(None)
        }
    };
    Ok(Accuracies {
        train_acc: acc(TRAIN)?,
        val_acc: acc(VAL)?,
        test_acc: acc(TEST)?,
        epochs: log.len(),
        final_loss: log.last().map(|l| l.total),
    })
}

fn train_cell(exp: &Experiment, key: &str, seed: u64, force: bool) -> Result<TrainRecord> {
    let ctx = format!("model {key} seed {seed}");
    let (g, codes) = training_graph(exp, key, seed, force).map_err(|e| e.context(&ctx))?;
    let dir = model_dir(&exp.output, key, seed);
    let train_nodes = nodes_with(&codes, TRAIN);
    if train_nodes.is_empty() {
        return Err(HarnessError::Runtime(format!("{ctx}: no training nodes")));
    }
    write_atomic(&dir.join("masks.npy"), &Npy::from_u8(&[codes.len()], &codes).to_bytes())?;
    let header = |model| CheckpointHeader {
        toolkit_version: TOOLKIT_VERSION.into(),
        config_hash: exp.hash.clone(),
        seed,
        num_classes: g.num_classes(),
        model,
    };
    let mut record = TrainRecord {
        toolkit_version: TOOLKIT_VERSION.into(),
        config_hash: exp.hash.clone(),
        key: key.into(),
        seed,
        n_train: train_nodes.len(),
        n_val: nodes_with(&codes, VAL).len(),
        n_test: nodes_with(&codes, TEST).len(),
        tnt: None,
        gcn: None,
    };
    if exp.config.needs_tnt() {
        let cfg = TntConfig {
            seed: exp.config.model.seed.wrapping_add(seed),
            ..exp.config.model
        };
        cfg.check_budget(g.n()).map_err(|e| HarnessError::Config(format!("{ctx}: {e}")))?;
        let (state, log) = train(&g, &train_nodes, &cfg).map_err(|e| HarnessError::from(e).context(&ctx))?;
        let out = forward(&g, &state.params, &cfg)?;
        record.tnt = Some(accuracies(&out.logits, &g, &codes, &log)?);
        let ckpt = Checkpoint {
            header: header(ModelRecord::Tnt { config: cfg }),
            params: state.params,
        };
        write_atomic(&dir.join("tnt.ckpt"), &ckpt.to_bytes())?;
        write_atomic(&dir.join("tnt_log.csv"), &csv_bytes(&exp.hash, &log_rows(&log)))?;
    }
    if exp.config.needs_baseline() {
        let cfg = trn_ood_core::model::GcnConfig {
            seed: exp.config.baseline.seed.wrapping_add(seed),
            ..exp.config.baseline
        };
        let (model, log) = train_gcn(&g, &train_nodes, &cfg).map_err(|e| HarnessError::from(e).context(&ctx))?;
        let out = gcn_forward(&g, &model)?;
        record.gcn = Some(accuracies(&out.logits, &g, &codes, &log)?);
        let ckpt = Checkpoint {
            header: header(ModelRecord::Gcn { config: cfg, d: model.d }),
            params: model.params,
        };
        write_atomic(&dir.join("gcn.ckpt"), &ckpt.to_bytes())?;
        write_atomic(&dir.join("gcn_log.csv"), &csv_bytes(&exp.hash, &log_rows(&log)))?;
    }
    write_atomic(&dir.join("train.json"), &json_bytes(&record))?;
    Ok(record)
}

/// Trains the base model for every seed plus one model per label or
/// temporal split.
pub fn cmd_train(exp: &Experiment, force: bool) -> Result<ModelIndex> {
    let manifest = read_manifest(exp, force)?;
    let mut cells: Vec<(String, u64)> = exp.config.seeds.iter().map(|&s| (BASE_KEY.to_string(), s)).collect();
    for e in &manifest.splits {
        if e.model_key != BASE_KEY {
            cells.push((e.model_key.clone(), e.seed));
        }
    }
    let results: Vec<Result<TrainRecord>> =
        with_pool(|| cells.par_iter().map(|(k, s)| train_cell(exp, k, *s, force)).collect());
    let mut index = ModelIndex {
        toolkit_version: TOOLKIT_VERSION.into(),
        config_hash: exp.hash.clone(),
        models: Vec::new(),
    };
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rec) => index.models.push(rec),
            Err(e) => errors.push(e),
        }
    }
    write_atomic(&exp.output.join("models").join("index.json"), &json_bytes(&index))?;
    match errors.into_iter().next() {
        None => Ok(index),
        Some(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// eval

/// Model outputs on one graph, as needed by the scoring methods.
#[derive(Debug, Clone)]
pub struct ModelView {
    pub logits: Tensor<f32>,
    /// GCN penultimate features.
    pub hidden: Option<Tensor<f32>>,
    /// Row-normalized text and structure projections of the TNT model.
    pub aligned: Option<(Tensor<f32>, Tensor<f32>)>,
}

/// Scores every node of `g` with `m`. Mahalanobis needs the fitted model.
pub fn method_scores(
    m: &MethodConfig,
    view: &ModelView,
    g: &TrnGraph,
    maha: Option<&MahalanobisModel>,
) -> Result<ScoreVector> {
    let missing = |what: &str| HarnessError::Runtime(format!("{}: model view lacks {what}", m.label()));
    let base = match m.method {
        MethodKind::Msp => msp_score(&view.logits)?,
        MethodKind::Energy | MethodKind::Gnnsafe => energy_score(&view.logits)?,
        MethodKind::Mahalanobis => {
            let h = view.hidden.as_ref().ok_or_else(|| missing("hidden features"))?;
            maha.ok_or_else(|| missing("a fitted Mahalanobis model"))?.score(h)?
        }
        MethodKind::Tnt => {
            let (p, gt) = view.aligned.as_ref().ok_or_else(|| missing("alignment inputs"))?;
            elign_score(&energy_score(&view.logits)?, p, gt, m.temperature)?
        }
    };
    if m.k() > 0 {
        Ok(propagate_scores(&base, g, m.k(), m.alpha)?)
    } else {
        Ok(base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Id,
    Ood,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Id => "id_graph",
            Side::Ood => "ood_graph",
        }
    }
}

/// Evaluation nodes: `(graph, node, is_ood)`. Paired splits compare the ID
/// test nodes with the same nodes in the perturbed graph; other splits
/// compare the ID test nodes present in the evaluation graph with every
/// flagged node.
pub fn eval_nodes(
    paired: bool,
    id_test: &[usize],
    id_nodes: &[usize],
    ood_nodes: &[usize],
    ood_flags: &[bool],
) -> Vec<(Side, usize, bool)> {
    if paired {
        id_test
            .iter()
            .map(|&i| (Side::Id, i, false))
            .chain(id_test.iter().map(|&i| (Side::Ood, i, true)))
            .collect()
    } else {
        let pos: BTreeMap<usize, usize> = ood_nodes.iter().enumerate().map(|(k, &src)| (src, k)).collect();
        id_test
            .iter()
            .filter_map(|&i| pos.get(&id_nodes[i]).copied())
            .filter(|&k| !ood_flags[k])
            .map(|k| (Side::Ood, k, false))
            .chain((0..ood_flags.len()).filter(|&k| ood_flags[k]).map(|k| (Side::Ood, k, true)))
            .collect()
    }
}

/// Gathers the per-graph scores at `nodes` and computes the metrics.
pub fn cell_report(
    nodes: &[(Side, usize, bool)],
    id_scores: Option<&ScoreVector>,
    ood_scores: &ScoreVector,
    id_acc: f64,
) -> Result<(MetricReport, Vec<f64>)> {
    let mut scores = Vec::with_capacity(nodes.len());
    for &(side, i, _) in nodes {
        let s = match side {
            Side::Id => id_scores.ok_or_else(|| HarnessError::Runtime("ID-graph scores missing".into()))?,
            Side::Ood => ood_scores,
        };
        scores.push(s.scores()[i]);
    }
    let flags: Vec<bool> = nodes.iter().map(|n| n.2).collect();
    Ok((MetricReport::evaluate(&scores, &flags, id_acc)?, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    pub shift: String,
    pub method: String,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub id_acc: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRow {
    pub dataset: String,
    /// `config` rows pool seeds of one shift configuration; `family` rows
    /// pool every configuration of a generator.
    pub level: String,
    pub shift: String,
    pub method: String,
    pub n: usize,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub aupr_mean: f64,
    pub aupr_std: f64,
    pub fpr95_mean: f64,
    pub fpr95_std: f64,
    pub id_acc_mean: f64,
    pub id_acc_std: f64,
}

/// Mean and sample standard deviation (0 for a single value). Deviations are
/// taken from the first value so identical inputs give exactly zero spread.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let x0 = v[0];
    let n = v.len() as f64;
    let shift = v.iter().map(|x| x - x0).sum::<f64>() / n;
    let mean = x0 + shift;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - x0 - shift).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn family(shift: &str) -> &str {
    shift.split('-').next().unwrap_or(shift)
}

/// Per-configuration rows then per-family rows, in first-seen order.
pub fn aggregate(runs: &[RunRow]) -> Vec<AggRow> {
    let mut out = Vec::new();
    for level in ["config", "family"] {
        let mut groups: Vec<((String, String, String), Vec<&RunRow>)> = Vec::new();
        for r in runs {
            let shift = if level == "config" { r.shift.as_str() } else { family(&r.shift) };
            let key = (r.dataset.clone(), shift.to_string(), r.method.clone());
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => groups.push((key, vec![r])),
            }
        }
        for ((dataset, shift, method), rows) in groups {
            let col = |f: fn(&RunRow) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (auroc_mean, auroc_std) = col(|r| r.auroc);
            let (aupr_mean, aupr_std) = col(|r| r.aupr);
            let (fpr95_mean, fpr95_std) = col(|r| r.fpr95);
            let (id_acc_mean, id_acc_std) = col(|r| r.id_acc);
            out.push(AggRow {
                dataset,
                level: level.into(),
                shift,
                method,
                n: rows.len(),
                auroc_mean,
                auroc_std,
                aupr_mean,
                aupr_std,
                fpr95_mean,
                fpr95_std,
                id_acc_mean,
                id_acc_std,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub config_hash: String,
    pub dataset: String,
    pub split: String,
    pub shift: String,
    pub seed: u64,
    pub method: String,
    pub method_config: MethodConfig,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub id_acc: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    node_id: usize,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct ScoreSidecar {
    config_hash: String,
    method: String,
    graph: String,
    temperature: Option<f64>,
    k: Option<usize>,
    alpha: Option<f64>,
    nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub split: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub toolkit_version: String,
    pub config_hash: String,
    pub runs: usize,
    pub skipped: Vec<Note>,
    pub missing: Vec<Note>,
}

struct Trained {
    tnt: Option<Checkpoint>,
    gcn: Option<Checkpoint>,
    codes: Vec<u8>,
}

fn load_trained(exp: &Experiment, key: &str, seed: u64, force: bool) -> Result<Trained> {
    let dir = model_dir(&exp.output, key, seed);
    let load = |name: &str, needed: bool| -> Result<Option<Checkpoint>> {
        if !needed {
            return Ok(None);
        }
        let path = dir.join(name);
        if !path.exists() {
            return Err(HarnessError::Runtime(format!("missing checkpoint {}", path.display())));
        }
        let c = Checkpoint::from_bytes(&read_file(&path)?)?;
        check_hash(&c.header.config_hash, &exp.hash, &path.display().to_string(), force)?;
        Ok(Some(c))
    };
    let codes = read_npy(&dir.join("masks.npy"))
        .map_err(|_| HarnessError::Runtime(format!("missing masks for model {key} seed {seed}")))?
        .to_i64()?
        .into_iter()
        .map(|c| c as u8)
        .collect();
    Ok(Trained {
        tnt: load("tnt.ckpt", exp.config.needs_tnt())?,
        gcn: load("gcn.ckpt", exp.config.needs_baseline())?,
        codes,
    })
}

fn tnt_view(c: &Checkpoint, g: &TrnGraph) -> Result<ModelView> {
    let ModelRecord::Tnt { config } = &c.header.model else {
        return Err(HarnessError::Format("tnt.ckpt holds a different model".into()));
    };
    let out = forward(g, &c.params, config)?;
    let aligned = out.normalized();
    Ok(ModelView {
        logits: out.logits,
        hidden: None,
        aligned: Some(aligned),
    })
}

fn gcn_view(c: &Checkpoint, g: &TrnGraph) -> Result<ModelView> {
    let ModelRecord::Gcn { config, d } = &c.header.model else {
        return Err(HarnessError::Format("gcn.ckpt holds a different model".into()));
    };
    let model = GcnModel {
        config: *config,
        d: *d,
        num_classes: c.header.num_classes,
        params: c.params.clone(),
    };
    let out = gcn_forward(g, &model)?;
    Ok(ModelView {
        logits: out.logits,
        hidden: Some(out.hidden),
        aligned: None,
    })
}

fn eval_split(exp: &Experiment, entry: &SplitEntry, force: bool) -> Result<Vec<RunRow>> {
    let split_dir = exp.output.join("splits").join(&entry.dir);
    let split = load_split(&split_dir)?;
    check_hash(&split.record.config_hash, &exp.hash, &format!("splits/{}/split.json", entry.dir), force)?;
    let trained = load_trained(exp, &entry.model_key, entry.seed, force)?;
    if trained.codes.len() != split.id_graph.n() {
        return Err(HarnessError::Runtime(format!("{}: masks do not match the ID graph", entry.dir)));
    }
    let id_test = nodes_with(&trained.codes, TEST);
    let test_mask = mask_of(&trained.codes, TEST);
    let nodes = eval_nodes(split.record.paired, &id_test, &split.id_nodes, &split.ood_nodes, &split.ood_flags);

    let views = |c: &Option<Checkpoint>, f: fn(&Checkpoint, &TrnGraph) -> Result<ModelView>| -> Result<Option<(ModelView, ModelView)>> {
        match c {
            Some(c) => Ok(Some((f(c, &split.id_graph)?, f(c, &split.ood_graph)?))),
            None => Ok(None),
        }
    };
    let tnt = views(&trained.tnt, tnt_view)?;
    let gcn = views(&trained.gcn, gcn_view)?;
    let maha = match (&gcn, exp.config.effective_methods().iter().any(|m| m.method == MethodKind::Mahalanobis)) {
        (Some((id_view, _)), true) => {
            let train_nodes = nodes_with(&trained.codes, TRAIN);
            let h = id_view.hidden.as_ref().expect("GCN view has hidden features");
            let labels: Vec<usize> = train_nodes.iter().map(|&i| split.id_graph.labels()[i]).collect();
            Some(MahalanobisModel::fit(&h.select_rows(&train_nodes), &labels, split.id_graph.num_classes())?)
        }
        _ => None,
    };

    let out_dir = exp.output.join("eval").join(&entry.dir);
    let shift = entry.spec.kind.label();
    let mut rows = Vec::new();
    for m in exp.config.effective_methods() {
        let (id_view, ood_view) = if m.method.uses_baseline() { &gcn } else { &tnt }
            .as_ref()
            .ok_or_else(|| HarnessError::Runtime(format!("no model for {}", m.label())))?;
        let id_acc = id_accuracy(&id_view.logits, split.id_graph.labels(), &test_mask)?;
        let ood_sv = method_scores(&m, ood_view, &split.ood_graph, maha.as_ref())?;
        let id_sv = if split.record.paired {
            Some(method_scores(&m, id_view, &split.id_graph, maha.as_ref())?)
        } else {
            None
        };
        let (report, _) = cell_report(&nodes, id_sv.as_ref(), &ood_sv, id_acc)?;
        let label = m.label();
        for (side, sv) in [(Side::Id, id_sv.as_ref()), (Side::Ood, Some(&ood_sv))] {
            let Some(sv) = sv else { continue };
            let picked: Vec<usize> = nodes.iter().filter(|n| n.0 == side).map(|n| n.1).collect();
            let rows: Vec<ScoreRow> = picked
                .iter()
                .map(|&i| ScoreRow {
                    node_id: i,
                    score: sv.scores()[i],
                })
                .collect();
            let stem = format!("{label}.{}", side.as_str());
            write_atomic(&out_dir.join(format!("{stem}.csv")), &csv_bytes(&exp.hash, &rows))?;
            let ScoreParams {
                temperature, k, alpha, ..
            } = *sv.params();
            let sidecar = ScoreSidecar {
                config_hash: exp.hash.clone(),
                method: sv.method().to_string(),
                graph: side.as_str().into(),
                temperature,
                k,
                alpha,
                nodes: rows.len(),
            };
            write_atomic(&out_dir.join(format!("{stem}.json")), &json_bytes(&sidecar))?;
        }
        let run = RunReport {
            toolkit_version: TOOLKIT_VERSION.into(),
            config_hash: exp.hash.clone(),
            dataset: exp.dataset_name.clone(),
            split: entry.dir.clone(),
            shift: shift.clone(),
            seed: entry.seed,
            method: label.clone(),
            method_config: m.clone(),
            auroc: report.auroc,
            aupr: report.aupr,
            fpr95: report.fpr95,
            id_acc: report.id_acc,
            n_id: report.n_id,
            n_ood: report.n_ood,
        };
        write_atomic(&out_dir.join(format!("{label}.json")), &json_bytes(&run))?;
        rows.push(RunRow {
            dataset: run.dataset,
            shift: run.shift,
            method: label,
            auroc: run.auroc,
            aupr: run.aupr,
            fpr95: run.fpr95,
            id_acc: run.id_acc,
            seed: run.seed,
        });
    }
    Ok(rows)
}

/// Scores every split with every method. Text-augmentation splits are
/// skipped (their features must be re-embedded first); splits whose model
/// is missing are listed and make the command fail after the rest is written.
pub fn cmd_eval(exp: &Experiment, force: bool) -> Result<EvalSummary> {
    let manifest = read_manifest(exp, force)?;
    let mut skipped = Vec::new();
    let mut cells = Vec::new();
    for e in &manifest.splits {
        if matches!(e.spec.kind, ShiftKind::TextAugment { .. }) {
            skipped.push(Note {
                split: e.dir.clone(),
                reason: "text augmentation changes texts only; re-embed the OOD graph before evaluating".into(),
            });
        } else {
            cells.push(e);
        }
    }
    let results: Vec<Result<Vec<RunRow>>> = with_pool(|| cells.par_iter().map(|e| eval_split(exp, e, force)).collect());
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for (e, r) in cells.iter().zip(results) {
        match r {
            Ok(rows) => runs.extend(rows),
            Err(err @ HarnessError::HashMismatch(_)) => return Err(err),
            Err(err) => missing.push(Note {
                split: e.dir.clone(),
                reason: err.to_string(),
            }),
        }
    }
    // Seed-minor order: shift configuration, then method, then seed.
    let key = |r: &RunRow| {
        let shift_pos = exp.config.shifts.iter().position(|s| s.kind.label() == r.shift).unwrap_or(usize::MAX);
        let method_pos = exp
            .config
            .effective_methods()
            .iter()
            .position(|m| m.label() == r.method)
            .unwrap_or(usize::MAX);
        let seed_pos = exp.config.seeds.iter().position(|&s| s == r.seed).unwrap_or(usize::MAX);
        (shift_pos, method_pos, seed_pos)
    };
    runs.sort_by_key(key);
    let eval = exp.output.join("eval");
    write_atomic(&eval.join("runs.csv"), &csv_bytes(&exp.hash, &runs))?;
    write_atomic(&eval.join("aggregate.csv"), &csv_bytes(&exp.hash, &aggregate(&runs)))?;
    let summary = EvalSummary {
        toolkit_version: TOOLKIT_VERSION.into(),
        config_hash: exp.hash.clone(),
        runs: runs.len(),
        skipped,
        missing,
    };
    write_atomic(&eval.join("summary.json"), &json_bytes(&summary))?;
    if summary.missing.is_empty() {
        Ok(summary)
    } else {
        let list: Vec<String> = summary.missing.iter().map(|n| format!("{}: {}", n.split, n.reason)).collect();
        Err(HarnessError::Runtime(format!("{} split(s) not evaluated: {}", list.len(), list.join("; "))))
    }
}

// ---------------------------------------------------------------------------
// selfcheck

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub millis: f64,
    pub detail: String,
}

fn io_round_trip() -> CheckResult {
    use trn_ood_core::synth::{planted_partition, PlantedPartition};
    let g = planted_partition(&PlantedPartition {
        n: 60,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_graph(dir.path(), &g).map_err(|e| e.to_string())?;
    let back = load_graph(dir.path(), g.num_classes()).map_err(|e| e.to_string())?;
    if back != g {
        return Err("graph directory does not round-trip".into());
    }
    Ok(format!("n={} d={} m={}", g.n(), g.dim(), g.edges().len()))
}

/// Runs every check and times it.
pub fn run_checks() -> Vec<CheckRow> {
    let mut checks: Vec<(&str, fn() -> CheckResult)> = all_checks().into_iter().map(|c| (c.name, c.run)).collect();
    checks.push(("io/graph_round_trip", io_round_trip));
    checks
        .into_iter()
        .map(|(name, run)| {
            let t = Instant::now();
            let r = run();
            let millis = t.elapsed().as_secs_f64() * 1e3;
            let (passed, detail) = match r {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckRow {
                name: name.into(),
                passed,
                millis,
                detail,
            }
        })
        .collect()
}

pub fn render_checks(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$}  {:<4}  {:>10}  detail\n", "check", "ok", "ms");
    for r in rows {
        s += &format!(
            "{:<width$}  {:<4}  {:>10.1}  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.millis,
            r.detail
        );
    }
    s
}

pub fn cmd_selfcheck() -> Result<Vec<CheckRow>> {
    let rows = run_checks();
    print!("{}", render_checks(&rows));
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(rows)
    } else {
        Err(HarnessError::Selfcheck(failed.join(", ")))
    }
}
