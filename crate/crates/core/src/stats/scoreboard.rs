use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::holm::holm_within;
use super::sign::{sign_test, SignTest};
use super::wilcoxon::{wilcoxon_signed_rank, Wilcoxon};
use crate::error::{Error, Result};
use crate::evalsuite::TaskResult;
use crate::seqdata::Split;

/// Per-task scores of one run, keyed by task.
pub type TaskScores = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub task: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Aligned per-task deltas `A − B`.
pub fn paired_deltas(a: &TaskScores, b: &TaskScores) -> Result<Vec<PairedDelta>> {
    check_aligned(a, b)?;
    a.iter()
        .map(|(task, &va)| {
            let vb = b[task];
            let delta = va - vb;
            if !delta.is_finite() {
                return Err(Error::InvalidArgument(format!("task `{task}`: non-finite delta")));
            }
            Ok(PairedDelta {
                task: task.clone(),
                a: va,
                b: vb,
                delta,
            })
        })
        .collect()
}

fn check_aligned(a: &TaskScores, b: &TaskScores) -> Result<()> {
    let only_a: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).cloned().collect();
    let only_b: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    if only_a.is_empty() && only_b.is_empty() {
        Ok(())
    } else {
        Err(Error::MisalignedTasks { only_a, only_b })
    }
}

fn macro_mean(d: &[PairedDelta]) -> f64 {
    d.iter().map(|x| x.delta).sum::<f64>() / d.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoreboard {
    pub a: String,
    pub b: String,
    pub baseline: String,
    pub n_tasks: usize,
    /// Per-task `A − B`.
    pub deltas: Vec<PairedDelta>,
    pub sign: SignTest,
    /// Macro mean of `A − baseline`.
    pub macro_delta_a: f64,
    /// Macro mean of `B − baseline`.
    pub macro_delta_b: f64,
    /// `macro_delta_a − macro_delta_b`
    pub delta_delta: f64,
    pub wilcoxon: Option<Wilcoxon>,
    /// Holm-adjusted Wilcoxon p over the comparison family.
    pub holm_p: Option<f64>,
}

/// Compares A with B on aligned tasks, each also measured against `baseline`.
pub fn scoreboard(names: [&str; 3], a: &TaskScores, b: &TaskScores, baseline: &TaskScores) -> Result<Scoreboard> {
    if a.is_empty() {
        return Err(Error::Data("no task scores to compare".into()));
    }
    let deltas = paired_deltas(a, b)?;
    let da = paired_deltas(a, baseline)?;
    let db = paired_deltas(b, baseline)?;
    let d: Vec<f64> = deltas.iter().map(|x| x.delta).collect();
    let (macro_delta_a, macro_delta_b) = (macro_mean(&da), macro_mean(&db));
    Ok(Scoreboard {
        a: names[0].into(),
        b: names[1].into(),
        baseline: names[2].into(),
        n_tasks: deltas.len(),
        sign: sign_test(&d),
        deltas,
        macro_delta_a,
        macro_delta_b,
        delta_delta: macro_delta_a - macro_delta_b,
        wilcoxon: None,
        holm_p: None,
    })
}

impl Scoreboard {
    /// Adds the Wilcoxon test; left empty when undefined for these deltas.
    pub fn with_wilcoxon(mut self) -> Self {
        let d: Vec<f64> = self.deltas.iter().map(|x| x.delta).collect();
        self.wilcoxon = wilcoxon_signed_rank(&d).ok();
        self
    }
}

/// Holm-adjusts the Wilcoxon p of every board that has one, as a family
/// of `m` cells (default: the boards with a Wilcoxon p).
pub fn apply_holm(boards: &mut [Scoreboard], m: Option<usize>) -> Result<()> {
    let idx: Vec<usize> = (0..boards.len()).filter(|&i| boards[i].wilcoxon.is_some()).collect();
    let p: Vec<f64> = idx.iter().map(|&i| boards[i].wilcoxon.expect("filtered").p).collect();
    let adj = holm_within(&p, m.unwrap_or(p.len()))?;
    for (i, a) in idx.into_iter().zip(adj) {
        boards[i].holm_p = Some(a);
    }
    Ok(())
}

/// `ΔΔ` between two boards that share a baseline.
pub fn delta_delta(x: &Scoreboard, y: &Scoreboard) -> Result<f64> {
    if x.baseline != y.baseline {
        return Err(Error::InvalidArgument(format!(
            "boards use different baselines `{}` and `{}`",
            x.baseline, y.baseline
        )));
    }
    Ok(x.macro_delta_a - y.macro_delta_a)
}

/// Which results rows make up a run's task scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Latest step present for the run when `None`.
    pub checkpoint_step: Option<u64>,
    pub split: Split,
    /// `linear` or `knn`; any probe when `None`. Retrieval rows enter as
    /// Recall@1 only.
    pub probe: Option<String>,
}

impl Default for Selection {
    fn default() -> Self {
        Selection {
            checkpoint_step: None,
            split: Split::Test,
            probe: None,
        }
    }
}

/// Seed-averaged scores of `run`, keyed `task`, or `task/metric` when a task
/// carries several metrics, or `task/metric/probe` when several probe kinds
/// share a metric. Returns the step used.
pub fn task_scores(rows: &[TaskResult], run: &str, sel: &Selection) -> Result<(u64, TaskScores)> {
    let keep = |r: &&TaskResult| {
        r.run == run
            && r.split == sel.split
            && if r.probe == "retrieval" {
                r.metric == "recall_at_1"
            } else {
                sel.probe.as_ref().is_none_or(|p| *p == r.probe)
            }
    };
    let step = match sel.checkpoint_step {
        Some(s) => s,
        None => rows
            .iter()
            .filter(keep)
            .map(|r| r.checkpoint_step)
            .max()
            .ok_or_else(|| Error::Data(format!("no results for run `{run}`")))?,
    };
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(keep).filter(|r| r.checkpoint_step == step) {
        groups
            .entry((r.task.clone(), r.metric.clone(), r.probe.clone()))
            .or_default()
            .push(r.value);
    }
    if groups.is_empty() {
        return Err(Error::Data(format!("no results for run `{run}` at step {step}")));
    }
    let mut per_task: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_metric: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (t, m, _) in groups.keys() {
        *per_task.entry(t).or_default() += 1;
        *per_metric.entry((t, m)).or_default() += 1;
    }
    let scores = groups
        .iter()
        .map(|((t, m, p), v)| {
            let key = if per_metric[&(t.as_str(), m.as_str())] > 1 {
                format!("{t}/{m}/{p}")
            } else if per_task[t.as_str()] > 1 {
                format!("{t}/{m}")
            } else {
                t.clone()
            };
            (key, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok((step, scores))
}

/// Plain-text table: comparison, W/L/T, macro deltas, ΔΔ and p-values.
pub fn render_table(boards: &[Scoreboard]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<32} {:>9} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8}", "comparison", "W/L/T", "macro_a", "macro_b", "dd", "p_sign", "p_wilc", "p_holm").ok();
    let fmt = |p: Option<f64>| p.map_or("-".to_string(), |v| format!("{v:.3}"));
    for b in boards {
        writeln!(
            s,
            "{:<32} {:>9} {:>+10.4} {:>+10.4} {:>+10.4} {:>8} {:>8} {:>8}",
            format!("{} vs {}", b.a, b.b),
            format!("{}/{}/{}", b.sign.wins, b.sign.losses, b.sign.ties),
            b.macro_delta_a,
            b.macro_delta_b,
            b.delta_delta,
            fmt(b.sign.p),
            fmt(b.wilcoxon.map(|w| w.p)),
            fmt(b.holm_p),
        )
        .ok();
    }
    s
}

/// CSV with the same columns as [`render_table`].
pub fn render_csv(boards: &[Scoreboard]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["a", "b", "baseline", "wins", "losses", "ties", "macro_delta_a", "macro_delta_b", "delta_delta", "p_sign", "p_wilcoxon", "p_holm"])?;
    let opt = |p: Option<f64>| p.map_or(String::new(), |v| v.to_string());
    for b in boards {
        w.write_record([
            b.a.clone(),
            b.b.clone(),
            b.baseline.clone(),
            b.sign.wins.to_string(),
            b.sign.losses.to_string(),
            b.sign.ties.to_string(),
            b.macro_delta_a.to_string(),
            b.macro_delta_b.to_string(),
            b.delta_delta.to_string(),
            opt(b.sign.p),
            opt(b.wilcoxon.map(|x| x.p)),
            opt(b.holm_p),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
