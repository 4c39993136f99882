use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mlmjepa::evalsuite::{
    append_results, evaluate_retrieval, evaluate_task, read_results, save_store, EmbeddingMatrix, Metric, ProbeTask, TaskResult,
};
use mlmjepa::objectives::ObjectiveKind;
use mlmjepa::seqdata::{read_fasta, FastaRecord};
use mlmjepa::stats::{apply_holm, render_csv, render_table, scoreboard, task_scores, Scoreboard, Selection};
use mlmjepa::trainer::{tokenize_corpus, TrainConfig, Trainer};
use mlmjepa::{fsutil, Error, Result};

pub const DEFAULT_PROBE_SEEDS: [u64; 3] = [42, 123, 456];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeChoice {
    #[default]
    Linear,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// CSV with `id,sequence,label[,split]`.
    pub path: PathBuf,
    pub metric: Metric,
    #[serde(default)]
    pub probe: ProbeChoice,
    /// Recall depths for `recall_at_k` tasks.
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![1, 10, 30]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: ObjectiveKind,
    pub b: ObjectiveKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Pretraining FASTA.
    pub corpus: PathBuf,
    /// Template for every run; `run_name` and the objective kind are set per run.
    pub train: TrainConfig,
    pub objectives: Vec<ObjectiveKind>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "default_seeds")]
    pub probe_seeds: Vec<u64>,
    #[serde(default)]
    pub l2: bool,
    pub baseline: ObjectiveKind,
    pub comparisons: Vec<Comparison>,
    #[serde(default)]
    pub wilcoxon: bool,
    /// Holm family size; the number of comparisons when absent.
    #[serde(default)]
    pub holm_m: Option<usize>,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_PROBE_SEEDS.to_vec()
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec = serde_json::from_str(&fsutil::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        spec.resolve_paths(base);
        Ok(spec)
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        self.tasks.iter_mut().for_each(|t| fix(&mut t.path));
    }

    pub fn run_name(&self, kind: ObjectiveKind) -> String {
        format!("{}-{}", self.name, kind.name())
    }

    pub fn run_config(&self, kind: ObjectiveKind) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.run_name = self.run_name(kind);
        cfg.objective.kind = kind;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.objectives.is_empty() || self.tasks.is_empty() || self.probe_seeds.is_empty() {
            return fail("an experiment needs objectives, tasks and probe seeds".into());
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.objectives.iter().find(|k| !seen.insert(**k)) {
            return fail(format!("objective `{}` listed twice", dup.name()));
        }
        let mut names = HashSet::new();
        if let Some(dup) = self.tasks.iter().find(|t| !names.insert(t.name.as_str())) {
            return fail(format!("task `{}` listed twice", dup.name));
        }
        let listed = |k: &ObjectiveKind| self.objectives.contains(k);
        if !listed(&self.baseline) || self.comparisons.iter().any(|c| !listed(&c.a) || !listed(&c.b)) {
            return fail("baseline and comparisons must use listed objectives".into());
        }
        for k in &self.objectives {
            self.run_config(*k).validate()?;
        }
        for p in std::iter::once(&self.corpus).chain(self.tasks.iter().map(|t| &t.path)) {
            if !p.is_file() {
                return Err(Error::Data(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Union of task sequences keyed by id, in first-seen order.
fn task_sequences(tasks: &[ProbeTask]) -> Result<Vec<FastaRecord>> {
    let mut by_id: BTreeMap<String, String> = BTreeMap::new();
    let mut order = Vec::new();
    for t in tasks {
        for (r, _) in &t.rows {
            let id = r
                .id
                .clone()
                .ok_or_else(|| Error::Data(format!("task `{}`: rows need an id column", t.name)))?;
            match by_id.get(&id) {
                Some(s) if *s != r.sequence => {
                    return Err(Error::Data(format!("id `{id}` maps to two different sequences")));
                }
                Some(_) => {}
                None => {
                    by_id.insert(id.clone(), r.sequence.clone());
                    order.push(id);
                }
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|id| FastaRecord {
            sequence: by_id[&id].clone(),
            id,
        })
        .collect())
}

/// Probes every task on one embedding set; rows are tagged with run and step.
pub fn evaluate_all(
    tasks: &[(TaskSpec, ProbeTask)],
    emb: &EmbeddingMatrix,
    seeds: &[u64],
    run: &str,
    step: u64,
) -> Result<Vec<TaskResult>> {
    let mut rows = Vec::new();
    for (spec, task) in tasks {
        if spec.metric == Metric::RecallAtK {
            rows.extend(evaluate_retrieval(task, emb, &spec.ks)?);
            continue;
        }
        for &seed in seeds {
            rows.extend(evaluate_task(task, emb, spec.metric, spec.probe == ProbeChoice::Knn, seed)?);
        }
    }
    for r in &mut rows {
        r.run = run.to_string();
        r.checkpoint_step = step;
    }
    Ok(rows)
}

/// Builds one board per comparison from `results` (latest step of each run,
/// test split), adding Wilcoxon and Holm when asked.
pub fn build_boards(
    results: &[TaskResult],
    comparisons: &[(String, String)],
    baseline: &str,
    sel: &Selection,
    wilcoxon: bool,
    holm_m: Option<usize>,
) -> Result<Vec<Scoreboard>> {
    let base = task_scores(results, baseline, sel)?.1;
    let mut boards = comparisons
        .iter()
        .map(|(a, b)| {
            let sa = task_scores(results, a, sel)?.1;
            let sb = task_scores(results, b, sel)?.1;
            let board = scoreboard([a, b, baseline], &sa, &sb, &base)?;
            Ok(if wilcoxon { board.with_wilcoxon() } else { board })
        })
        .collect::<Result<Vec<_>>>()?;
    if wilcoxon {
        apply_holm(&mut boards, holm_m)?;
    }
    Ok(boards)
}

/// Writes `scoreboard.json` (or the given path) and a sibling `.csv`.
pub fn write_boards(path: &Path, boards: &[Scoreboard]) -> Result<()> {
    fsutil::write_atomic(path, serde_json::to_string_pretty(boards)?.as_bytes())?;
    fsutil::write_atomic(&path.with_extension("csv"), render_csv(boards)?.as_bytes())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results_path: PathBuf,
    pub scoreboard_path: PathBuf,
    pub boards: Vec<Scoreboard>,
    pub table: String,
}

/// Pretrains every objective at the same budget, embeds the final
/// checkpoint, probes every task and reports the comparisons.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentOutput> {
    spec.validate()?;
    let corpus_records = read_fasta(&spec.corpus)?;
    let tasks = spec
        .tasks
        .iter()
        .map(|t| {
            let mut task = ProbeTask::load(&t.path)?;
            task.name = t.name.clone();
            Ok((t.clone(), task))
        })
        .collect::<Result<Vec<_>>>()?;
    let probe_tasks: Vec<ProbeTask> = tasks.iter().map(|(_, t)| t.clone()).collect();
    let eval_records = task_sequences(&probe_tasks)?;
    let results_path = out.join("results.jsonl");

    for &kind in &spec.objectives {
        let cfg = spec.run_config(kind);
        let corpus = tokenize_corpus(corpus_records.iter().map(|r| r.sequence.as_str()), &cfg.encoder.tokenizer())?;
        let mut trainer = Trainer::new(cfg.clone(), corpus)?;
        let run = trainer.run(out)?;
        let step = trainer.steps_taken();
        let emb = mlmjepa::evalsuite::embed(trainer.params(), &cfg.encoder, &eval_records, spec.l2)?;
        save_store(
            &run.run_dir.join(format!("embeddings_{step}")),
            &emb,
            serde_json::json!({"run": cfg.run_name, "checkpoint_step": step}),
        )?;
        let rows = evaluate_all(&tasks, &emb, &spec.probe_seeds, &cfg.run_name, step)?;
        append_results(&results_path, &rows)?;
    }

    let results = read_results(&results_path)?;
    let pairs: Vec<(String, String)> = spec
        .comparisons
        .iter()
        .map(|c| (spec.run_name(c.a), spec.run_name(c.b)))
        .collect();
    let boards = build_boards(
        &results,
        &pairs,
        &spec.run_name(spec.baseline),
        &Selection::default(),
        spec.wilcoxon,
        spec.holm_m,
    )?;
    let scoreboard_path = out.join("scoreboard.json");
    write_boards(&scoreboard_path, &boards)?;
    Ok(ExperimentOutput {
        results_path,
        scoreboard_path,
        table: render_table(&boards),
        boards,
    })
}
