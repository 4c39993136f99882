use std::path::Path;
use std::process::{Command, Output};

use mlmjepa::encoder::checkpoint::read_manifest;
use mlmjepa::evalsuite::{read_results, save_store, EmbeddingMatrix, TaskResult};
use mlmjepa::seqdata::Split;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mlmjepa"));
    c.env_remove(mlmjepa_cli::OUT_ROOT_ENV);
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_toy_config(dir: &Path) -> std::path::PathBuf {
    let out = run(&["synth", "--out", dir.to_str().unwrap(), "--n", "60"]);
    assert!(out.status.success());
    let cfg = serde_json::json!({
        "corpus": "corpus.fasta",
        "run_name": "toy",
        "encoder": {
            "n_layers": 2, "hidden_size": 16, "n_heads": 4,
            "ffn_kind": "gelu_mlp", "norm_kind": "layer_norm", "position_kind": "rope",
            "attention_pattern": {"kind": "global"}, "conv_stem": {"kind": "none"},
            "max_len": 128, "vocab_size": 30, "framing": true
        },
        "objective": {"kind": "mlm_jepa_masked", "sigreg": {"n_projections": 16}},
        "learning_rate": 1e-3,
        "warmup_steps": 5,
        "batch_size": 4,
        "budget": {"kind": "steps", "checkpoints": [50]},
        "checkpoint_dtype": "f64"
    });
    let path = dir.join("pretrain.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn pretrain_writes_checkpoint_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_toy_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["pretrain", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let m = read_manifest(&a.join("toy/ckpt_50")).unwrap();
    assert_eq!(m.step, 50);
    let pa = std::fs::read(a.join("toy/ckpt_50/params.bin")).unwrap();
    let pb = std::fs::read(b.join("toy/ckpt_50/params.bin")).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn objective_override_sets_zero_mlm_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_toy_config(tmp.path());
    let o = bin()
        .args(["pretrain", "--config", cfg.to_str().unwrap(), "--objective", "jepa_only", "--steps", "3"])
        .env(mlmjepa_cli::OUT_ROOT_ENV, tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_manifest(&tmp.path().join("root/toy/ckpt_3")).unwrap();
    assert_eq!(m.meta["mlm_weight"], 0.0);
    assert_eq!(m.meta["objective_kind"], "jepa_only");
}

fn separable_store(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut csv = String::from("id,sequence,label,split\n");
    for i in 0..60 {
        let c = i % 2;
        let split = ["test", "valid", "train", "train", "train"][i % 5];
        ids.push(format!("s{i}"));
        data.extend([c as f64 * 4.0 + (i as f64).sin() * 0.3, (i as f64 * 0.7).cos()]);
        csv.push_str(&format!("s{i},ACDE,{c},{split}\n"));
    }
    let store = dir.join("emb");
    let m = EmbeddingMatrix::new(ids, 2, data, false).unwrap();
    save_store(&store, &m, serde_json::json!({"run": "toy", "checkpoint_step": 7})).unwrap();
    let task = dir.join("sep.csv");
    std::fs::write(&task, csv).unwrap();
    (store, task)
}

#[test]
fn probe_on_separable_task_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (store, task) = separable_store(tmp.path());
    let results = tmp.path().join("results.jsonl");
    let o = run(&[
        "probe", "--embeddings", store.to_str().unwrap(), "--task", task.to_str().unwrap(),
        "--metric", "auc", "--results", results.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_results(&results).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.value == 1.0 && r.run == "toy" && r.checkpoint_step == 7));
    // rerunning replaces rather than duplicates
    let o = run(&[
        "probe", "--embeddings", store.to_str().unwrap(), "--task", task.to_str().unwrap(),
        "--metric", "auc", "--results", results.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(read_results(&results).unwrap().len(), 6);
}

#[test]
fn retrieve_emits_nondecreasing_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (store, task) = separable_store(tmp.path());
    let results = tmp.path().join("results.jsonl");
    let o = run(&[
        "retrieve", "--embeddings", store.to_str().unwrap(), "--labels", task.to_str().unwrap(),
        "--k", "1,10,11", "--results", results.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_results(&results).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].value <= w[1].value));
}

#[test]
fn missing_file_and_parse_failure_exit_differently() {
    let tmp = tempfile::tempdir().unwrap();
    let (store, _) = separable_store(tmp.path());
    let missing = run(&["probe", "--embeddings", store.to_str().unwrap(), "--task", "/nonexistent.csv", "--metric", "auc"]);
    let parse = run(&["probe", "--embeddings", store.to_str().unwrap(), "--task", "x.csv", "--metric", "auc", "--nope"]);
    let bad_metric = run(&["probe", "--embeddings", store.to_str().unwrap(), "--task", "x.csv", "--metric", "bleu"]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(parse.status.code(), Some(2));
    assert_eq!(bad_metric.status.code(), Some(2));
    let no_root = run(&["pretrain", "--config", "/nonexistent.json"]);
    assert_ne!(no_root.status.code(), Some(0));
}

fn inject(path: &Path, run: &str, values: &[f64]) {
    let rows: Vec<TaskResult> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| TaskResult {
            run: run.into(),
            checkpoint_step: 100,
            task: format!("task{i:02}"),
            metric: "auc".into(),
            split: Split::Test,
            probe_seed: 42,
            value: v,
            probe: "linear".into(),
        })
        .collect();
    mlmjepa::evalsuite::append_results(path, &rows).unwrap();
}

#[test]
fn report_reproduces_ten_three_three() {
    let tmp = tempfile::tempdir().unwrap();
    let results = tmp.path().join("results.jsonl");
    let base: Vec<f64> = (0..16).map(|i| 0.6 + 0.01 * i as f64).collect();
    let a: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(i, v)| if i < 10 { v + 0.02 } else if i < 13 { v - 0.02 } else { v + 0.001 })
        .collect();
    inject(&results, "base", &base);
    inject(&results, "a", &a);
    let out = tmp.path().join("scoreboard.json");
    let o = run(&[
        "report", "--runs", "a,base", "--baseline", "base", "--out", out.to_str().unwrap(),
        "--results", results.to_str().unwrap(), "--wilcoxon", "--holm", "m=15",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("10/3/3") && text.contains(" 0.046 "), "{text}");
    assert!(out.with_extension("csv").is_file());
    let boards: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let w = boards[0]["wilcoxon"]["p"].as_f64().unwrap();
    let h = boards[0]["holm_p"].as_f64().unwrap();
    assert!((h - (15.0 * w).min(1.0)).abs() < 1e-12);
}

#[test]
fn report_of_identical_runs_is_all_ties() {
    let tmp = tempfile::tempdir().unwrap();
    let results = tmp.path().join("results.jsonl");
    inject(&results, "a", &[0.5, 0.6, 0.7]);
    inject(&results, "b", &[0.5, 0.6, 0.7]);
    let out = tmp.path().join("sb.json");
    let o = run(&["report", "--runs", "a,b", "--baseline", "b", "--out", out.to_str().unwrap(), "--results", results.to_str().unwrap()]);
    assert!(o.status.success());
    let boards: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(boards[0]["sign"]["ties"], 3);
    assert_eq!(boards[0]["delta_delta"], 0.0);
}

#[test]
fn report_lists_misaligned_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let results = tmp.path().join("results.jsonl");
    inject(&results, "a", &[0.5, 0.6, 0.7]);
    inject(&results, "b", &[0.5, 0.6]);
    let out = tmp.path().join("sb.json");
    let o = run(&["report", "--runs", "a,b", "--baseline", "b", "--out", out.to_str().unwrap(), "--results", results.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("task02"));
}

#[test]
fn help_lists_every_flag() {
    let expected: &[(&str, &[&str])] = &[
        ("pretrain", &["--config", "--out", "--objective", "--corpus", "--steps", "--resume", "--seed-init", "--seed-data", "--seed-mask", "--seed-projection"]),
        ("embed", &["--ckpt", "--fasta", "--l2", "--out"]),
        ("probe", &["--embeddings", "--task", "--metric", "--knn", "--seed", "--results"]),
        ("retrieve", &["--embeddings", "--labels", "--k", "--results"]),
        ("report", &["--runs", "--baseline", "--out", "--wilcoxon", "--holm", "--step", "--split"]),
        ("synth", &["--out", "--n", "--seed"]),
        ("experiment", &["--spec", "--out"]),
    ];
    for (cmd, flags) in expected {
        let o = run(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = stdout(&o);
        for f in *flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}
