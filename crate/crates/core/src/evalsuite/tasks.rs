use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingMatrix;
use super::metrics::{auc, f1_macro, spearman};
use super::probes::{fit, Predictions, ProbeKind, ProbeSpec, Targets};
use super::retrieval::recall_at_k;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::seqdata::synth::split_of;
use crate::seqdata::{LabeledRecord, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1Macro,
    Auc,
    Spearman,
    RecallAtK,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::F1Macro => "f1_macro",
            Metric::Auc => "auc",
            Metric::Spearman => "spearman",
            Metric::RecallAtK => "recall_at_k",
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Spearman => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1_macro" | "f1" => Ok(Metric::F1Macro),
            "auc" => Ok(Metric::Auc),
            "spearman" => Ok(Metric::Spearman),
            "recall_at_k" | "recall" => Ok(Metric::RecallAtK),
            other => Err(Error::Config(format!(
                "unknown metric `{other}` (expected f1_macro, auc, spearman or recall_at_k)"
            ))),
        }
    }
}

/// One evaluated cell, as stored in `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub run: String,
    pub checkpoint_step: u64,
    pub task: String,
    /// `f1_macro`, `auc`, `spearman` or `recall_at_<k>`.
    pub metric: String,
    pub split: Split,
    pub probe_seed: u64,
    pub value: f64,
    /// `linear` or `knn`; `retrieval` for Recall@k.
    #[serde(default = "default_probe")]
    pub probe: String,
}

fn default_probe() -> String {
    "linear".into()
}

impl TaskResult {
    fn key(&self) -> (&str, u64, &str, &str, Split, u64, &str) {
        (
            &self.run,
            self.checkpoint_step,
            &self.task,
            &self.metric,
            self.split,
            self.probe_seed,
            &self.probe,
        )
    }
}

pub fn read_results(path: &Path) -> Result<Vec<TaskResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fsutil::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Appends rows, replacing existing rows with the same
/// (run, step, task, metric, split, seed, probe) key.
pub fn append_results(path: &Path, rows: &[TaskResult]) -> Result<()> {
    let mut all = read_results(path)?;
    for r in rows {
        match all.iter().position(|a| a.key() == r.key()) {
            Some(i) => all[i] = r.clone(),
            None => all.push(r.clone()),
        }
    }
    let mut body = String::new();
    for r in &all {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    fsutil::write_atomic(path, body.as_bytes())
}

/// Labeled task rows with their effective split (index-based when the
/// file has no split column).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTask {
    pub name: String,
    pub rows: Vec<(LabeledRecord, Split)>,
}

impl ProbeTask {
    pub fn new(name: impl Into<String>, records: Vec<LabeledRecord>) -> Self {
        let rows = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let s = r.split.unwrap_or_else(|| split_of(i));
                (r, s)
            })
            .collect();
        ProbeTask { name: name.into(), rows }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy())
            .map(|n| n.trim_end_matches(".gz").trim_end_matches(".csv").to_string())
            .unwrap_or_default();
        Ok(Self::new(name, crate::seqdata::read_labeled_csv(path)?))
    }

    /// Embedding-row index and label for every row of `split`.
    fn split_rows(&self, emb: &EmbeddingMatrix, split: Split) -> Result<(Vec<usize>, Vec<&str>)> {
        let pos = emb.position_map();
        let mut idx = Vec::new();
        let mut labels = Vec::new();
        for (r, _) in self.rows.iter().filter(|(_, s)| *s == split) {
            let id = r
                .id
                .as_deref()
                .ok_or_else(|| Error::Data(format!("task `{}`: rows need ids to match embeddings", self.name)))?;
            let i = *pos
                .get(id)
                .ok_or_else(|| Error::Data(format!("task `{}`: no embedding for id `{id}`", self.name)))?;
            idx.push(i);
            labels.push(r.label.as_str());
        }
        Ok((idx, labels))
    }

    fn has_split(&self, split: Split) -> bool {
        self.rows.iter().any(|(_, s)| *s == split)
    }
}

/// Sorted distinct labels, numerically when every label parses as a number.
fn class_order<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<&str> = labels.collect();
    v.sort_unstable();
    v.dedup();
    let numeric: Option<Vec<f64>> = v.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, &str)> = nums.into_iter().zip(v).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        return pairs.into_iter().map(|(_, l)| l.to_string()).collect();
    }
    v.into_iter().map(String::from).collect()
}

fn encode_targets(task: &str, metric: Metric, labels: &[&str], classes: &[String]) -> Result<Targets> {
    match metric {
        Metric::Spearman => labels
            .iter()
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("task `{task}`: label `{l}` is not numeric")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Targets::Values),
        _ => Ok(Targets::Classes {
            ids: labels
                .iter()
                .map(|l| classes.iter().position(|c| c == l).expect("label in class list"))
                .collect(),
            n_classes: classes.len(),
        }),
    }
}

fn score(task: &str, metric: Metric, pred: &Predictions, y: &Targets) -> Result<f64> {
    match (metric, pred, y) {
        (Metric::Spearman, Predictions::Values(p), Targets::Values(v)) => spearman(p, v),
        (Metric::F1Macro, Predictions::Scores { .. }, Targets::Classes { ids, .. }) => {
            f1_macro(&pred.classes().expect("scores"), ids)
        }
        (Metric::Auc, Predictions::Scores { probs, n_classes: 2 }, Targets::Classes { ids, .. }) => {
            let pos: Vec<f64> = probs.chunks(2).map(|r| r[1]).collect();
            let lab: Vec<bool> = ids.iter().map(|&c| c == 1).collect();
            auc(&pos, &lab)
        }
        (Metric::Auc, _, _) => Err(Error::Config(format!("task `{task}`: auc needs exactly two classes"))),
        _ => Err(Error::Config(format!("task `{task}`: metric {} does not fit the probe", metric.name()))),
    }
}

/// Trains a probe on the train split and scores the valid and test splits
/// that exist. Rows come back without run/step filled in.
pub fn evaluate_task(task: &ProbeTask, emb: &EmbeddingMatrix, metric: Metric, knn: bool, seed: u64) -> Result<Vec<TaskResult>> {
    if metric == Metric::RecallAtK {
        return Err(Error::Config("use retrieval for recall_at_k".into()));
    }
    let (train_idx, train_labels) = task.split_rows(emb, Split::Train)?;
    if train_idx.is_empty() {
        return Err(Error::Data(format!("task `{}` has no training rows", task.name)));
    }
    let classes = class_order(task.rows.iter().map(|(r, _)| r.label.as_str()));
    let y = encode_targets(&task.name, metric, &train_labels, &classes)?;
    let kind = match (knn, metric) {
        (true, _) => ProbeKind::Knn,
        (false, Metric::Spearman) => ProbeKind::LinearRegressor,
        (false, _) => ProbeKind::LinearClassifier,
    };
    let probe = fit(&task.name, &emb.select(&train_idx), emb.dim, &y, &ProbeSpec::new(kind, seed))?;
    let mut out = Vec::new();
    for split in [Split::Valid, Split::Test] {
        if !task.has_split(split) {
            continue;
        }
        let (idx, labels) = task.split_rows(emb, split)?;
        let yt = encode_targets(&task.name, metric, &labels, &classes)?;
        let pred = probe.predict(&emb.select(&idx))?;
        out.push(TaskResult {
            run: String::new(),
            checkpoint_step: 0,
            task: task.name.clone(),
            metric: metric.name().into(),
            split,
            probe_seed: seed,
            value: score(&task.name, metric, &pred, &yt)?,
            probe: if knn { "knn" } else { "linear" }.into(),
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("task `{}` has no valid or test rows", task.name)));
    }
    Ok(out)
}

/// Recall@k over the test split (every row when the task has none), one
/// row per `k`.
pub fn evaluate_retrieval(task: &ProbeTask, emb: &EmbeddingMatrix, ks: &[usize]) -> Result<Vec<TaskResult>> {
    let split = if task.has_split(Split::Test) { Split::Test } else { Split::Train };
    let (idx, labels) = task.split_rows(emb, split)?;
    let labels: Vec<String> = labels.into_iter().map(String::from).collect();
    let x = emb.select(&idx);
    ks.iter()
        .map(|&k| {
            Ok(TaskResult {
                run: String::new(),
                checkpoint_step: 0,
                task: task.name.clone(),
                metric: format!("recall_at_{k}"),
                split: Split::Test,
                probe_seed: 0,
                value: recall_at_k(&x, emb.dim, &labels, k)?,
                probe: "retrieval".into(),
            })
        })
        .collect()
}

/// Population standard deviation of values grouped by (task, metric, split, probe).
pub fn seed_spread(rows: &[TaskResult]) -> BTreeMap<(String, String, Split, String), f64> {
    let mut groups: BTreeMap<(String, String, Split, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.task.clone(), r.metric.clone(), r.split, r.probe.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|(k, v)| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
            (k, var.sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: &str, split: Split) -> LabeledRecord {
        LabeledRecord {
            id: Some(id.into()),
            sequence: "A".into(),
            label: label.into(),
            split: Some(split),
        }
    }

    fn toy() -> (ProbeTask, EmbeddingMatrix) {
        let mut records = Vec::new();
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for i in 0..100 {
            let c = i % 2;
            let split = match i % 5 {
                0 => Split::Test,
                1 => Split::Valid,
                _ => Split::Train,
            };
            let id = format!("p{i}");
            records.push(rec(&id, &c.to_string(), split));
            ids.push(id);
            data.extend([c as f64 * 3.0 + (i as f64 * 0.37).sin() * 0.2, (i as f64).cos()]);
        }
        (
            ProbeTask::new("sep", records),
            EmbeddingMatrix::new(ids, 2, data, false).unwrap(),
        )
    }

    #[test]
    fn separable_task_scores_one() {
        let (task, emb) = toy();
        for metric in [Metric::Auc, Metric::F1Macro] {
            for knn in [false, true] {
                let rows = evaluate_task(&task, &emb, metric, knn, 42).unwrap();
                assert_eq!(rows.len(), 2);
                assert!(rows.iter().all(|r| r.value == 1.0), "{metric:?} knn={knn}: {rows:?}");
            }
        }
    }

    #[test]
    fn missing_embedding_is_a_data_error() {
        let (mut task, emb) = toy();
        task.rows.push((rec("ghost", "1", Split::Train), Split::Train));
        assert!(matches!(evaluate_task(&task, &emb, Metric::Auc, false, 1), Err(Error::Data(_))));
    }

    #[test]
    fn numeric_class_order() {
        assert_eq!(class_order(["10", "2", "1"].into_iter()), vec!["1", "2", "10"]);
        assert_eq!(class_order(["b", "a", "b"].into_iter()), vec!["a", "b"]);
    }

    #[test]
    fn append_deduplicates_by_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        let (task, emb) = toy();
        let mut rows = evaluate_task(&task, &emb, Metric::Auc, false, 1).unwrap();
        append_results(&path, &rows).unwrap();
        rows[0].value = 0.5;
        append_results(&path, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].value, 0.5);
    }

    #[test]
    fn retrieval_rows_per_k() {
        let (task, emb) = toy();
        let rows = evaluate_retrieval(&task, &emb, &[1, 2, 5]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].value <= w[1].value));
        assert_eq!(rows[0].metric, "recall_at_1");
    }
}
