use std::path::{Path, PathBuf};
use std::process::Command;

use trn_ood::checkpoint::{Checkpoint, ModelRecord};
use trn_ood::formats::{csv_config_hash, read_csv, read_json};
use trn_ood::harness::{
    aggregate, cell_report, cmd_eval, cmd_gen_shifts, cmd_train, eval_nodes, mean_std, method_scores, model_dir,
    AggRow, EvalSummary, Manifest, ModelView, RunRow, Side, TrainRecord,
};
use trn_ood::{Experiment, ExperimentConfig, MethodConfig, MethodKind};
use trn_ood_core::diagnostics::softmax_canary;
use trn_ood_core::model::{init_params, TntConfig};
use trn_ood_core::shift::{ShiftKind, ShiftSpec};
use trn_ood_core::{Tensor, TrnGraph};

const SMALL: &str = r#"
seeds = [0]
[dataset.synthetic]
n = 90
d = 8
[[shifts]]
kind = "feature_mix"
alpha = 0.7
[[shifts]]
kind = "label_leave_out"
ood_classes = [2]
[[methods]]
method = "tnt"
[[methods]]
method = "msp"
[model]
d = 8
d_p = 8
r = 4
hyper_hidden = 8
epochs = 20
[baseline]
epochs = 20
"#;

fn setup(toml: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, toml).unwrap();
    (dir, path)
}

fn run_all(exp: &Experiment) {
    cmd_gen_shifts(exp).unwrap();
    cmd_train(exp, false).unwrap();
    cmd_eval(exp, false).unwrap();
}

#[test]
fn outputs_are_laid_out_and_hash_stamped() {
    let (dir, path) = setup(SMALL);
    let exp = Experiment::load(&path, None, None).unwrap();
    run_all(&exp);
    let out = dir.path().join("out");
    let m: Manifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(m.config_hash, exp.hash);
    assert_eq!(m.splits.len(), 2);
    for e in &m.splits {
        let split = out.join("splits").join(&e.dir);
        for f in ["split.json", "ood_flags.npy", "id_nodes.npy", "ood_nodes.npy", "ood_graph/features.npy"] {
            assert!(split.join(f).is_file(), "{}/{f}", e.dir);
        }
    }
    let base = model_dir(&out, "base", 0);
    for f in ["tnt.ckpt", "gcn.ckpt", "masks.npy", "train.json"] {
        assert!(base.join(f).is_file(), "{f}");
    }
    for f in ["tnt_log.csv", "gcn_log.csv"] {
        assert_eq!(csv_config_hash(&base.join(f)).unwrap().as_deref(), Some(exp.hash.as_str()));
    }
    assert!(model_dir(&out, &m.splits[1].model_key, 0).join("tnt.ckpt").is_file());
    let runs: Vec<RunRow> = read_csv(&out.join("eval/runs.csv")).unwrap();
    let labels: Vec<(&str, &str)> = runs.iter().map(|r| (r.shift.as_str(), r.method.as_str())).collect();
    assert_eq!(
        labels,
        [
            ("feature_mix-a0.7", "tnt"),
            ("feature_mix-a0.7", "msp"),
            ("label_leave_out-2", "tnt"),
            ("label_leave_out-2", "msp")
        ]
    );
    for r in &runs {
        assert!((0.0..=1.0).contains(&r.auroc) && (0.0..=1.0).contains(&r.id_acc));
    }
    let split = &m.splits[0].dir;
    for g in ["id_graph", "ood_graph"] {
        let scores = out.join("eval").join(split).join(format!("msp.{g}.csv"));
        assert_eq!(csv_config_hash(&scores).unwrap().as_deref(), Some(exp.hash.as_str()));
    }
}

#[test]
fn rerunning_reproduces_every_byte() {
    let (dir, path) = setup(SMALL);
    let tree = |out: &Path| {
        let mut files = Vec::new();
        let mut stack = vec![out.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.strip_prefix(out).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_all(&Experiment::load(&path, Some(&a), None).unwrap());
    run_all(&Experiment::load(&path, Some(&b), None).unwrap());
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn empty_shift_list_gives_an_empty_manifest() {
    let (dir, path) = setup("[dataset.synthetic]\nn = 30\nd = 16\n[model]\nd = 16\n");
    let exp = Experiment::load(&path, None, None).unwrap();
    let m = cmd_gen_shifts(&exp).unwrap();
    assert!(m.splits.is_empty() && m.failures.is_empty());
    let back: Manifest = read_json(&dir.path().join("out/manifest.json")).unwrap();
    assert!(back.splits.is_empty());
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let toml = SMALL.replace("epochs = 20\n[baseline]", "epochs = 0\nseed = 7\n[baseline]");
    let (dir, path) = setup(&toml);
    let exp = Experiment::load(&path, None, Some(&[2])).unwrap();
    cmd_gen_shifts(&exp).unwrap();
    cmd_train(&exp, false).unwrap();
    let bytes = std::fs::read(model_dir(&dir.path().join("out"), "base", 2).join("tnt.ckpt")).unwrap();
    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let ModelRecord::Tnt { config } = &ckpt.header.model else {
        panic!("expected a TNT checkpoint")
    };
    assert_eq!(config.seed, 9);
    let want = init_params::<f32>(config, 3).unwrap();
    assert_eq!(ckpt.params, want);
    assert_eq!(ckpt.header.config_hash, exp.hash);
}

#[test]
fn every_seed_gets_a_checkpoint_and_log() {
    let toml = SMALL.replace("seeds = [0]", "seeds = [0, 1, 2]");
    let (dir, path) = setup(&toml);
    let exp = Experiment::load(&path, None, None).unwrap();
    cmd_gen_shifts(&exp).unwrap();
    let idx = cmd_train(&exp, false).unwrap();
    assert_eq!(idx.models.len(), 6);
    let out = dir.path().join("out");
    let mut params = Vec::new();
    for s in 0..3 {
        let d = model_dir(&out, "base", s);
        let log: Vec<trn_ood::harness::LogRow> = read_csv(&d.join("tnt_log.csv")).unwrap();
        assert_eq!(log.len(), 20);
        params.push(Checkpoint::from_bytes(&std::fs::read(d.join("tnt.ckpt")).unwrap()).unwrap().params);
    }
    assert_ne!(params[0], params[1]);
    assert_ne!(params[1], params[2]);
}

#[test]
fn hash_mismatch_is_refused_unless_forced() {
    let (_dir, path) = setup(SMALL);
    let exp = Experiment::load(&path, None, None).unwrap();
    cmd_gen_shifts(&exp).unwrap();
    let mut changed = exp.config.clone();
    changed.model.epochs = 5;
    let base = path.parent().unwrap();
    let other = Experiment::prepare(changed, base, None).unwrap();
    assert_ne!(other.hash, exp.hash);
    let e = cmd_train(&other, false).unwrap_err();
    assert_eq!(e.exit_code(), 1, "{e}");
    cmd_train(&other, true).unwrap();
    assert_eq!(cmd_eval(&other, false).unwrap_err().exit_code(), 1);
    cmd_eval(&other, true).unwrap();
}

#[test]
fn missing_checkpoints_are_listed() {
    let (dir, path) = setup(SMALL);
    let exp = Experiment::load(&path, None, None).unwrap();
    cmd_gen_shifts(&exp).unwrap();
    cmd_train(&exp, false).unwrap();
    std::fs::remove_file(model_dir(&dir.path().join("out"), "base", 0).join("tnt.ckpt")).unwrap();
    let e = cmd_eval(&exp, false).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let s: EvalSummary = read_json(&dir.path().join("out/eval/summary.json")).unwrap();
    assert_eq!(s.missing.len(), 1);
    assert!(s.missing[0].reason.contains("tnt.ckpt"), "{}", s.missing[0].reason);
    // the leave-out split has its own model and is still evaluated
    assert_eq!(s.runs, 2);
}

#[test]
fn msp_cell_matches_a_hand_computation() {
    // four nodes, two classes; logits chosen so max softmax is easy to read
    let ln3 = 3f32.ln();
    let id_logits = Tensor::new(&[4, 2], vec![ln3, 0.0, 0.0, ln3, 0.0, 0.0, ln3, 0.0]).unwrap();
    let ood_logits = Tensor::new(&[4, 2], vec![0.0, 0.0, ln3, 0.0, 0.0, 0.0, 0.0, ln3]).unwrap();
    let g = TrnGraph::new(Tensor::zeros(&[4, 1]), vec![(0, 1), (2, 3)], vec![0, 1, 0, 0], 2).unwrap();
    let m = MethodConfig::new(MethodKind::Msp);
    let view = |logits: &Tensor<f32>| ModelView {
        logits: logits.clone(),
        hidden: None,
        aligned: None,
    };
    let id = method_scores(&m, &view(&id_logits), &g, None).unwrap();
    let ood = method_scores(&m, &view(&ood_logits), &g, None).unwrap();
    // −max softmax: 3/4 for a ln 3 gap, 1/2 for a tie
    let want_id = [-0.75, -0.75, -0.5, -0.75];
    for (s, w) in id.scores().iter().zip(want_id) {
        assert!((s - w).abs() < 1e-6, "{s} vs {w}");
    }
    let nodes = eval_nodes(true, &[0, 2, 3], &[0, 1, 2, 3], &[0, 1, 2, 3], &[true; 4]);
    assert_eq!(
        nodes,
        [
            (Side::Id, 0, false),
            (Side::Id, 2, false),
            (Side::Id, 3, false),
            (Side::Ood, 0, true),
            (Side::Ood, 2, true),
            (Side::Ood, 3, true)
        ]
    );
    let (report, scores) = cell_report(&nodes, Some(&id), &ood, 0.5).unwrap();
    // ID scores −.75, −.5, −.75; OOD scores −.5, −.5, −.75.
    // pairs (ood > id): −.5 → 1 + .5 + 1, −.5 → the same, −.75 → .5 + 0 + .5; 6 / 9
    assert_eq!(scores.len(), 6);
    assert!((report.auroc - 6.0 / 9.0).abs() < 1e-12, "{}", report.auroc);
    assert_eq!((report.n_id, report.n_ood, report.id_acc), (3, 3, 0.5));
}

#[test]
fn unpaired_cells_use_mapped_id_nodes_and_every_flagged_node() {
    // ID graph nodes 0..4 came from source nodes [0, 2, 3, 5]; the OOD graph
    // holds source nodes [0, 1, 2, 3, 4, 5] with 1 and 4 flagged.
    let flags = [false, true, false, false, true, false];
    let nodes = eval_nodes(false, &[0, 3], &[0, 2, 3, 5], &[0, 1, 2, 3, 4, 5], &flags);
    assert_eq!(nodes, [(Side::Ood, 0, false), (Side::Ood, 5, false), (Side::Ood, 1, true), (Side::Ood, 4, true)]);
}

#[test]
fn identical_runs_aggregate_with_zero_spread() {
    let row = |seed, auroc| RunRow {
        dataset: "d".into(),
        shift: "feature_mix-a0.5".into(),
        method: "tnt".into(),
        auroc,
        aupr: 0.3,
        fpr95: 0.1,
        id_acc: 0.7,
        seed,
    };
    let agg: Vec<AggRow> = aggregate(&[row(0, 0.1), row(1, 0.1), row(2, 0.1)]);
    assert_eq!(agg.len(), 2);
    assert_eq!((agg[0].level.as_str(), agg[1].level.as_str()), ("config", "family"));
    assert_eq!(agg[1].shift, "feature_mix");
    assert_eq!((agg[0].auroc_mean, agg[0].auroc_std, agg[0].aupr_std), (0.1, 0.0, 0.0));
    assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn energy_and_gnnsafe_differ_only_by_propagation() {
    let g = trn_ood_core::synth::planted_partition(&Default::default()).unwrap();
    let logits = Tensor::from_fn(&[g.n(), 3], |i| ((i * 7919) % 13) as f32 / 5.0 - 1.0);
    let view = ModelView {
        logits,
        hidden: None,
        aligned: None,
    };
    let energy = method_scores(&MethodConfig::new(MethodKind::Energy), &view, &g, None).unwrap();
    let gnnsafe = method_scores(&MethodConfig::new(MethodKind::Gnnsafe), &view, &g, None).unwrap();
    let by_hand = trn_ood_core::detect::propagate_scores(&energy, &g, 3, 0.5).unwrap();
    assert_eq!(gnnsafe.scores(), by_hand.scores());
    assert_ne!(gnnsafe.scores(), energy.scores());
    let energy_k3 = MethodConfig {
        k: Some(3),
        ..MethodConfig::new(MethodKind::Energy)
    };
    assert_eq!(method_scores(&energy_k3, &view, &g, None).unwrap().scores(), gnnsafe.scores());
}

#[test]
fn toy_fixture_is_learnable() {
    let toml = SMALL.replace("epochs = 20\n[baseline]", "epochs = 150\n[baseline]");
    let (dir, path) = setup(&toml);
    let exp = Experiment::load(&path, None, None).unwrap();
    cmd_gen_shifts(&exp).unwrap();
    cmd_train(&exp, false).unwrap();
    let rec: TrainRecord = read_json(&model_dir(&dir.path().join("out"), "base", 0).join("train.json")).unwrap();
    let tnt = rec.tnt.unwrap();
    assert!(tnt.train_acc.unwrap() >= 0.95, "{:?}", tnt);
    assert!(tnt.test_acc.unwrap() >= 0.9, "{:?}", tnt);
}

#[test]
fn failing_shifts_are_recorded_and_fail_the_command() {
    let mut c = ExperimentConfig::from_toml(SMALL).unwrap();
    c.shifts.push(ShiftSpec::new(ShiftKind::LabelLeaveOut { ood_classes: vec![0, 1, 2] }, 0));
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::prepare(c, dir.path(), None).unwrap();
    let e = cmd_gen_shifts(&exp).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let m: Manifest = read_json(&dir.path().join("out/manifest.json")).unwrap();
    assert_eq!((m.splits.len(), m.failures.len()), (2, 1));
}

#[test]
fn checkpoint_headers_record_the_model() {
    let (dir, path) = setup(SMALL);
    let exp = Experiment::load(&path, None, None).unwrap();
    cmd_gen_shifts(&exp).unwrap();
    cmd_train(&exp, false).unwrap();
    let d = model_dir(&dir.path().join("out"), "base", 0);
    let gcn = Checkpoint::from_bytes(&std::fs::read(d.join("gcn.ckpt")).unwrap()).unwrap();
    assert!(matches!(gcn.header.model, ModelRecord::Gcn { d: 8, .. }));
    assert_eq!(gcn.header.num_classes, 3);
    let tnt = Checkpoint::from_bytes(&std::fs::read(d.join("tnt.ckpt")).unwrap()).unwrap();
    assert!(matches!(tnt.header.model, ModelRecord::Tnt { config: TntConfig { d: 8, .. } }));
}

#[test]
fn fault_injection_canary_is_caught() {
    assert!(softmax_canary().is_err());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trn-ood"))
}

#[test]
fn binary_exit_codes() {
    let (dir, path) = setup("[dataset.synthetic]\nn = 30\nd = 4\n");
    let st = bin().args(["gen-shifts", "--config"]).arg(&path).status().unwrap();
    assert_eq!(st.code(), Some(1), "model.d mismatch is a config error");
    assert_eq!(bin().args(["train", "--bogus"]).status().unwrap().code(), Some(1));
    let missing = dir.path().join("nope.toml");
    assert_eq!(bin().args(["eval", "--config"]).arg(&missing).status().unwrap().code(), Some(1));

    let (_d, ok) = setup(SMALL);
    let out = bin().args(["train", "--config"]).arg(&ok).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "train before gen-shifts");

    let out = bin().arg("selfcheck").output().unwrap();
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{table}");
    assert!(table.contains("io/graph_round_trip") && !table.contains("FAIL"), "{table}");
}
