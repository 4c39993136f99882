use std::path::Path;

use mlmjepa::blob::Dtype;
use mlmjepa::encoder::checkpoint::{read_manifest, Checkpoint};
use mlmjepa::encoder::{param_count, EncoderConfig};
use mlmjepa::objectives::{ObjectiveConfig, ObjectiveKind, TargetMode};
use mlmjepa::seqdata::synth::{generate, SynthConfig};
use mlmjepa::trainer::{read_ledger, read_log, tokenize_corpus, Budget, TrainConfig, Trainer};

fn corpus(enc: &EncoderConfig, n: usize) -> Vec<Vec<usize>> {
    let cfg = SynthConfig {
        n_sequences: n,
        min_len: 20,
        max_len: 30,
        max_motifs: 2,
        ..SynthConfig::default()
    };
    let records = generate(&cfg).unwrap();
    tokenize_corpus(records.iter().map(|r| r.sequence.as_str()), &enc.tokenizer()).unwrap()
}

fn toy(kind: ObjectiveKind, checkpoints: Vec<u64>) -> TrainConfig {
    let mut enc = EncoderConfig::esm2_style(2, 16, 4);
    enc.max_len = 64;
    let mut obj = ObjectiveConfig::new(kind);
    obj.sigreg.n_projections = 32;
    let mut cfg = TrainConfig::new("toy", enc, obj, Budget::Steps { checkpoints });
    cfg.batch_size = 4;
    cfg.warmup_steps = 5;
    cfg.learning_rate = 1e-3;
    cfg
}

fn run(cfg: &TrainConfig, out: &Path) -> Trainer {
    let mut t = Trainer::new(cfg.clone(), corpus(&cfg.encoder, 40)).unwrap();
    t.run(out).unwrap();
    t
}

#[test]
fn ten_step_budget_gives_ten_steps_and_one_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(ObjectiveKind::MlmJepaMasked, vec![10]);
    run(&cfg, tmp.path());
    let run_dir = tmp.path().join("toy");
    let ckpts: Vec<_> = std::fs::read_dir(&run_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("ckpt_"))
        .collect();
    assert_eq!(ckpts.len(), 1);
    assert!(run_dir.join("ckpt_10/manifest.json").is_file());
    let ledger = read_ledger(&run_dir).unwrap();
    assert_eq!(ledger.rows.len(), 1);
    let row = ledger.rows[0];
    assert_eq!(row.optimizer_steps + row.skipped_steps, 10);
    assert_eq!(row.optimizer_steps, 10);
    assert_eq!(row.samples_seen, row.optimizer_steps * 4);
    let log = read_log(&run_dir).unwrap();
    assert_eq!(log.len(), 10);
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    assert!(log.iter().all(|r| r.total.is_finite() && r.pred_proj_std.is_some()));
    assert_eq!(log[0].lr, 1e-3 / 5.0);
    let m = read_manifest(&run_dir.join("ckpt_10")).unwrap();
    assert_eq!(m.meta["objective_kind"], "mlm_jepa_masked");
    assert_eq!(m.meta["mlm_weight"], 1.0);
}

#[test]
fn identical_seeds_give_byte_identical_checkpoints() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = toy(ObjectiveKind::MlmJepaMasked, vec![4, 8]);
    run(&cfg, a.path());
    run(&cfg, b.path());
    for step in [4, 8] {
        for file in ["manifest.json", "params.bin", "adam_m.bin", "adam_v.bin"] {
            let rel = format!("toy/ckpt_{step}/{file}");
            let x = std::fs::read(a.path().join(&rel)).unwrap();
            let y = std::fs::read(b.path().join(&rel)).unwrap();
            assert!(x == y, "{rel} differs");
        }
    }
    let mut other = cfg.clone();
    other.seeds.mask += 1;
    let c = tempfile::tempdir().unwrap();
    run(&other, c.path());
    let x = std::fs::read(a.path().join("toy/ckpt_8/params.bin")).unwrap();
    let y = std::fs::read(c.path().join("toy/ckpt_8/params.bin")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn resume_matches_uninterrupted_run_bitwise() {
    for target in [TargetMode::Detached, TargetMode::Ema { decay: 0.9 }] {
        let mut cfg = toy(ObjectiveKind::MlmJepaMasked, vec![5, 9]);
        cfg.checkpoint_dtype = Dtype::F64;
        cfg.objective.target_mode = target;
        let full = tempfile::tempdir().unwrap();
        let uninterrupted = run(&cfg, full.path());

        // stop at 5, then resume in a fresh trainer
        let part = tempfile::tempdir().unwrap();
        let mut first = cfg.clone();
        first.budget = Budget::Steps { checkpoints: vec![5] };
        run(&first, part.path());
        let ckpt = part.path().join("toy/ckpt_5");
        let mut resumed = Trainer::resume(cfg.clone(), corpus(&cfg.encoder, 40), &ckpt).unwrap();
        assert_eq!(resumed.steps_taken(), 5);

        let mut reference = Trainer::resume(cfg.clone(), corpus(&cfg.encoder, 40), &full.path().join("toy/ckpt_5")).unwrap();
        let a = resumed.peek_loss().unwrap();
        let b = reference.peek_loss().unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());

        resumed.run(part.path()).unwrap();
        assert_eq!(resumed.params(), uninterrupted.params());
        let x = std::fs::read(full.path().join("toy/ckpt_9/params.bin")).unwrap();
        let y = std::fs::read(part.path().join("toy/ckpt_9/params.bin")).unwrap();
        assert!(x == y);
        let ledger = read_ledger(&part.path().join("toy")).unwrap();
        assert_eq!(ledger.rows.iter().map(|r| r.checkpoint_step).collect::<Vec<_>>(), vec![5, 9]);
        assert_eq!(read_log(&part.path().join("toy")).unwrap().len(), 9);
    }
}

#[test]
fn detached_mode_holds_one_encoder_and_one_predictor() {
    let cfg = toy(ObjectiveKind::MlmJepaMasked, vec![1]);
    let t = Trainer::new(cfg.clone(), corpus(&cfg.encoder, 8)).unwrap();
    let predictor = 3 * 16 * mlmjepa::encoder::swiglu_width(16);
    assert_eq!(t.params().n_scalars(), param_count(&cfg.encoder) + predictor);
    assert!(t.ema().is_none());
    let ck = t.checkpoint();
    assert!(!ck.aux.contains_key("ema"));

    let mut ema = cfg.clone();
    ema.objective.target_mode = TargetMode::Ema { decay: 0.99 };
    let t = Trainer::new(ema.clone(), corpus(&ema.encoder, 8)).unwrap();
    assert!(t.checkpoint().aux.contains_key("ema"));

    let mlm = toy(ObjectiveKind::Mlm, vec![1]);
    let t = Trainer::new(mlm.clone(), corpus(&mlm.encoder, 8)).unwrap();
    assert_eq!(t.params().n_scalars(), param_count(&mlm.encoder));
}

#[test]
fn ema_teacher_limits_during_training() {
    let mut cfg = toy(ObjectiveKind::MlmJepaMasked, vec![3]);
    cfg.objective.target_mode = TargetMode::Ema { decay: 1.0 };
    let tmp = tempfile::tempdir().unwrap();
    let frozen = run(&cfg, tmp.path());
    let init = Trainer::new(cfg.clone(), corpus(&cfg.encoder, 8)).unwrap();
    assert_eq!(frozen.ema().unwrap(), init.params());
    assert_ne!(frozen.params(), init.params());

    cfg.objective.target_mode = TargetMode::Ema { decay: 0.0 };
    let tmp = tempfile::tempdir().unwrap();
    let follow = run(&cfg, tmp.path());
    assert_eq!(follow.ema().unwrap(), follow.params());
}

#[test]
fn jepa_only_manifest_records_zero_mlm_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(ObjectiveKind::JepaOnly, vec![2]);
    run(&cfg, tmp.path());
    let ck = Checkpoint::load(&tmp.path().join("toy/ckpt_2")).unwrap();
    assert_eq!(ck.meta["mlm_weight"], 0.0);
    assert_eq!(ck.meta["objective_kind"], "jepa_only");
}

#[test]
fn checkpoint_failure_flushes_partial_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(ObjectiveKind::Mlm, vec![2, 4]);
    let run_dir = tmp.path().join("toy");
    std::fs::create_dir_all(&run_dir).unwrap();
    // a plain file where the second checkpoint directory must go
    std::fs::write(run_dir.join("ckpt_4"), b"occupied").unwrap();
    let mut t = Trainer::new(cfg.clone(), corpus(&cfg.encoder, 20)).unwrap();
    assert!(t.run(tmp.path()).is_err());
    let ledger = read_ledger(&run_dir).unwrap();
    assert_eq!(ledger.rows.len(), 1);
    assert_eq!(ledger.rows[0].checkpoint_step, 2);
}

#[test]
fn ledger_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let t = run(&toy(ObjectiveKind::MlmJepaAllpos, vec![2, 3, 6]), tmp.path());
    let rows = t.ledger().rows;
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[0].optimizer_steps <= w[1].optimizer_steps);
        assert!(w[0].samples_seen <= w[1].samples_seen);
        assert!(w[0].tokens_seen <= w[1].tokens_seen);
        assert!(w[0].wall_seconds <= w[1].wall_seconds);
    }
}

#[test]
fn wall_clock_budget_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = toy(ObjectiveKind::Mlm, vec![1]);
    cfg.budget = Budget::WallSeconds {
        checkpoints: vec![0.05, 0.1],
    };
    let t = run(&cfg, tmp.path());
    let rows = t.ledger().rows;
    assert_eq!(rows.len(), 2);
    assert!(rows[0].wall_seconds >= 0.05 && rows[1].wall_seconds >= 0.1);
    assert!(rows[0].checkpoint_step < rows[1].checkpoint_step);
}

#[test]
fn mlm_loss_decreases_on_motif_corpus() {
    let mut cfg = toy(ObjectiveKind::Mlm, vec![300]);
    cfg.batch_size = 16;
    cfg.learning_rate = 3e-3;
    let mut t = Trainer::new(cfg.clone(), corpus(&cfg.encoder, 256)).unwrap();
    let ce: Vec<f64> = (0..300).map(|_| t.step_once().unwrap().loss.mlm_ce).collect();
    let first = ce[..100].iter().sum::<f64>() / 100.0;
    let last = ce[200..].iter().sum::<f64>() / 100.0;
    assert!(last < first, "first {first} last {last}");
}
