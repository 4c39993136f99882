use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mlmjepa::encoder::checkpoint::Checkpoint;
use mlmjepa::evalsuite::{
    append_results, embed, evaluate_retrieval, evaluate_task, load_store, read_results, save_store, Metric, ProbeTask, TaskResult,
};
use mlmjepa::objectives::ObjectiveKind;
use mlmjepa::seqdata::synth::{generate, write_fasta, write_task_csv, SynthConfig, SynthTask};
use mlmjepa::seqdata::{read_fasta, Split};
use mlmjepa::stats::{render_table, Selection};
use mlmjepa::trainer::{tokenize_corpus, Budget, TrainConfig, Trainer};
use mlmjepa::{fsutil, Error, Result};
use mlmjepa_cli::experiment::{build_boards, run_experiment, write_boards, ExperimentSpec, DEFAULT_PROBE_SEEDS};
use mlmjepa_cli::{exit_code, OUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "mlmjepa", version, about = "Pretrain protein encoders with MLM+JEPA objectives and evaluate frozen embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write checkpoints, train_log.jsonl and ledger.json.
    Pretrain(PretrainArgs),
    /// Mean-pool a checkpoint's embeddings for a FASTA file.
    Embed(EmbedArgs),
    /// Fit a probe on the train split and score valid/test.
    Probe(ProbeArgs),
    /// Recall@k over the test split by cosine similarity.
    Retrieve(RetrieveArgs),
    /// Scoreboards (W/L/T, macro deltas, sign test) from results.jsonl.
    Report(ReportArgs),
    /// Write a synthetic motif corpus and its three probe tasks.
    Synth(SynthArgs),
    /// Pretrain several objectives, embed, probe and report in one go.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SeedArgs {
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_mask: Option<u64>,
    #[arg(long)]
    seed_projection: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    /// JSON training config, with a `corpus` FASTA path.
    #[arg(long)]
    config: PathBuf,
    /// Output root; falls back to $MLMJEPA_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the objective kind (mlm, mlm_jepa_masked, mlm_jepa_allpos, jepa_only).
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    /// Override the pretraining corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    run_name: Option<String>,
    /// Override the step budget, e.g. `--steps 50,100`.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<u64>>,
    /// Resume from this checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    seeds: SeedArgs,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    fasta: PathBuf,
    /// L2-normalize each pooled embedding.
    #[arg(long)]
    l2: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// CSV with `id,sequence,label[,split]`.
    #[arg(long)]
    task: PathBuf,
    /// f1_macro, auc or spearman.
    #[arg(long)]
    metric: Metric,
    /// KNN probe (k = 20, Euclidean) instead of a linear one.
    #[arg(long)]
    knn: bool,
    /// Probe seeds.
    #[arg(long = "seed", value_delimiter = ',', default_values_t = DEFAULT_PROBE_SEEDS)]
    seeds: Vec<u64>,
    /// Task name; the file stem by default.
    #[arg(long)]
    name: Option<String>,
    /// Results file; `<out root>/results.jsonl` by default.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// CSV whose labels are fold ids.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 30])]
    k: Vec<usize>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Comparison `A,B`; repeat for several.
    #[arg(long = "runs", required = true)]
    runs: Vec<String>,
    #[arg(long)]
    baseline: String,
    /// Scoreboard JSON path; a CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    results: Option<PathBuf>,
    /// Add paired Wilcoxon signed-rank tests.
    #[arg(long)]
    wilcoxon: bool,
    /// Holm family size over the Wilcoxon p-values (`15` or `m=15`).
    #[arg(long, value_parser = parse_holm)]
    holm: Option<usize>,
    /// Checkpoint step; the latest of each run by default.
    #[arg(long)]
    step: Option<u64>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Restrict to `linear` or `knn` probe rows.
    #[arg(long)]
    probe: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_holm(s: &str) -> std::result::Result<usize, String> {
    s.trim_start_matches("m=").parse().map_err(|e| format!("{e}"))
}

/// Pretrain config file: a training config plus the corpus path.
#[derive(Serialize, Deserialize)]
struct PretrainFile {
    corpus: PathBuf,
    #[serde(flatten)]
    train: TrainConfig,
}

fn out_root(flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Config(format!("no output root: pass --out or set {OUT_ROOT_ENV}")))
}

fn results_path(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_default()
            .join("results.jsonl")
    })
}

fn must_exist(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} does not exist", p.display())))
    }
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let text = fsutil::read_to_string(&a.config)?;
    let file: PretrainFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    let mut cfg = file.train;
    let corpus_path = match a.corpus {
        Some(p) => p,
        None if file.corpus.is_relative() => a.config.parent().unwrap_or(Path::new("")).join(file.corpus),
        None => file.corpus,
    };
    if let Some(kind) = a.objective {
        cfg.objective.kind = kind;
    }
    if let Some(name) = a.run_name {
        cfg.run_name = name;
    }
    if let Some(steps) = a.steps {
        cfg.budget = Budget::Steps { checkpoints: steps };
    }
    let s = &mut cfg.seeds;
    s.init = a.seeds.seed_init.unwrap_or(s.init);
    s.data = a.seeds.seed_data.unwrap_or(s.data);
    s.mask = a.seeds.seed_mask.unwrap_or(s.mask);
    s.projection = a.seeds.seed_projection.unwrap_or(s.projection);
    cfg.validate()?;
    let out = out_root(a.out)?;
    let records = read_fasta(&corpus_path)?;
    let corpus = tokenize_corpus(records.iter().map(|r| r.sequence.as_str()), &cfg.encoder.tokenizer())?;
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::resume(cfg, corpus, dir)?,
        None => Trainer::new(cfg, corpus)?,
    };
    let output = trainer.run(&out)?;
    for c in &output.checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

fn embed_cmd(a: EmbedArgs) -> Result<()> {
    must_exist(&a.ckpt)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let records = read_fasta(&a.fasta)?;
    let m = embed(&ckpt.params, &ckpt.encoder, &records, a.l2)?;
    let run = ckpt.meta.get("run_name").and_then(|v| v.as_str()).unwrap_or("unnamed");
    save_store(&a.out, &m, serde_json::json!({"run": run, "checkpoint_step": ckpt.step}))?;
    println!("{} embeddings of width {} -> {}", m.n(), m.dim, a.out.display());
    Ok(())
}

fn load_task(path: &Path, name: Option<String>) -> Result<ProbeTask> {
    must_exist(path)?;
    let mut task = ProbeTask::load(path)?;
    if let Some(n) = name {
        task.name = n;
    }
    Ok(task)
}

fn provenance(meta: &serde_json::Value) -> (String, u64) {
    let run = meta.get("run").and_then(|v| v.as_str()).unwrap_or("unnamed").to_string();
    let step = meta.get("checkpoint_step").and_then(|v| v.as_u64()).unwrap_or(0);
    (run, step)
}

fn record(rows: &mut [TaskResult], meta: &serde_json::Value, results: Option<PathBuf>) -> Result<()> {
    let (run, step) = provenance(meta);
    for r in rows.iter_mut() {
        r.run = run.clone();
        r.checkpoint_step = step;
        println!(
            "{}\t{}\t{}\t{:?}\tseed={}\t{:.6}",
            r.run, r.task, r.metric, r.split, r.probe_seed, r.value
        );
    }
    append_results(&results_path(results), rows)
}

fn probe(a: ProbeArgs) -> Result<()> {
    let task = load_task(&a.task, a.name)?;
    must_exist(&a.embeddings)?;
    let (manifest, emb) = load_store(&a.embeddings)?;
    let mut rows = Vec::new();
    for seed in &a.seeds {
        rows.extend(evaluate_task(&task, &emb, a.metric, a.knn, *seed)?);
    }
    record(&mut rows, &manifest.meta, a.results)
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let task = load_task(&a.labels, a.name)?;
    must_exist(&a.embeddings)?;
    let (manifest, emb) = load_store(&a.embeddings)?;
    let mut rows = evaluate_retrieval(&task, &emb, &a.k)?;
    record(&mut rows, &manifest.meta, a.results)
}

fn report(a: ReportArgs) -> Result<()> {
    let path = results_path(a.results);
    must_exist(&path)?;
    let results = read_results(&path)?;
    let pairs = a
        .runs
        .iter()
        .map(|s| match s.split_once(',') {
            Some((x, y)) if !x.is_empty() && !y.is_empty() => Ok((x.to_string(), y.to_string())),
            _ => Err(Error::Config(format!("--runs expects `A,B`, got `{s}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let sel = Selection {
        checkpoint_step: a.step,
        split: a.split,
        probe: a.probe,
    };
    let boards = build_boards(&results, &pairs, &a.baseline, &sel, a.wilcoxon, a.holm)?;
    write_boards(&a.out, &boards)?;
    print!("{}", render_table(&boards));
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_sequences: a.n,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let records = generate(&cfg)?;
    write_fasta(&records, &a.out.join("corpus.fasta"))?;
    for task in SynthTask::ALL {
        write_task_csv(&records, task, &a.out.join(format!("{}.csv", task.name())))?;
    }
    fsutil::write_atomic(&a.out.join("synth.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    println!("{} sequences -> {}", records.len(), a.out.display());
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    must_exist(&a.spec)?;
    let spec = ExperimentSpec::load(&a.spec)?;
    let out = out_root(a.out)?;
    let result = run_experiment(&spec, &out)?;
    print!("{}", result.table);
    println!("scoreboard -> {}", result.scoreboard_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => pretrain(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Probe(a) => probe(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
