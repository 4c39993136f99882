use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Budget, TrainConfig};
use super::optim::{lr_schedule, AdamState, AdamW};
use crate::encoder::checkpoint::{self, Checkpoint};
use crate::encoder::init_params;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::gradcore::{Graph, Var};
use crate::objectives::{
    combined_loss, ema_update, init_predictor, jepa_targets, LossBreakdown, LossGraph, StepInputs, TargetMode,
};
use crate::params::ParamStore;
use crate::seeds;
use crate::seqdata::{make_mask_plan, BatchSampler, Tokenizer, TokenBatch};

/// One row of `train_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub wall_ms: f64,
    pub mlm_ce: f64,
    pub jepa_latent: f64,
    pub sigreg: f64,
    pub total: f64,
    pub lr: f64,
    #[serde(default)]
    pub pred_proj_std: Option<f64>,
    #[serde(default)]
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub checkpoint_step: u64,
    pub optimizer_steps: u64,
    pub skipped_steps: u64,
    pub samples_seen: u64,
    pub tokens_seen: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_name: String,
    pub batch_size: usize,
    pub rows: Vec<LedgerRow>,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Steps taken including this one.
    pub step: u64,
    pub wall_ms: f64,
    pub lr: f64,
    pub applied: bool,
    pub loss: LossBreakdown,
}

impl StepRecord {
    fn log_row(&self) -> LogRow {
        LogRow {
            step: self.step,
            wall_ms: self.wall_ms,
            mlm_ce: self.loss.mlm_ce,
            jepa_latent: self.loss.jepa_latent,
            sigreg: self.loss.sigreg,
            total: self.loss.total,
            lr: self.lr,
            pred_proj_std: self.loss.pred_proj_std,
            skipped: !self.applied,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub ledger: RunLedger,
}

/// Tokenizes every sequence with `tokenizer`.
pub fn tokenize_corpus<'a>(sequences: impl IntoIterator<Item = &'a str>, tokenizer: &Tokenizer) -> Result<Vec<Vec<usize>>> {
    sequences.into_iter().map(|s| tokenizer.tokenize(s)).collect()
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct Counters {
    step: u64,
    optimizer_steps: u64,
    skipped_steps: u64,
    tokens_seen: u64,
}

#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    corpus: Vec<Vec<usize>>,
    sampler: BatchSampler,
    params: ParamStore,
    adam: AdamState,
    opt: AdamW,
    ema: Option<ParamStore>,
    counters: Counters,
    wall_seconds: f64,
    ledger: Vec<LedgerRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig, corpus: Vec<Vec<usize>>) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::Data("training corpus is empty".into()));
        }
        if let Some(s) = corpus.iter().find(|s| s.is_empty() || s.len() > config.encoder.max_len) {
            return Err(Error::Data(format!(
                "corpus sequence of {} tokens outside 1..={}",
                s.len(),
                config.encoder.max_len
            )));
        }
        let mut params = init_params(&config.encoder, config.seeds.init)?;
        if config.objective.kind.has_jepa() {
            params.extend(&init_predictor(config.encoder.hidden_size, config.seeds.init));
        }
        let ema = matches!(config.objective.target_mode, TargetMode::Ema { .. }).then(|| params.clone());
        Ok(Trainer {
            sampler: BatchSampler::new(corpus.len(), config.batch_size, config.seeds.data)?,
            adam: AdamState::zeros_like(&params),
            opt: AdamW {
                weight_decay: config.weight_decay,
                ..AdamW::default()
            },
            params,
            ema,
            counters: Counters::default(),
            wall_seconds: 0.0,
            ledger: Vec::new(),
            config,
            corpus,
        })
    }

    /// Restores parameters, optimizer moments, teacher and counters from a
    /// checkpoint written by [`Trainer::run`].
    pub fn resume(config: TrainConfig, corpus: Vec<Vec<usize>>, ckpt_dir: &Path) -> Result<Self> {
        let mut t = Trainer::new(config, corpus)?;
        let ck = Checkpoint::load(ckpt_dir)?;
        if ck.encoder != t.config.encoder {
            return Err(Error::Config("checkpoint encoder differs from the configured one".into()));
        }
        if !ck.params.same_layout(&t.params) {
            return Err(Error::Config("checkpoint parameters do not match the objective".into()));
        }
        let take = |name: &str| {
            ck.aux
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{name}` state needed to resume")))
        };
        let adam_t = ck.meta["adam_t"].as_u64().ok_or_else(|| Error::Data("checkpoint lacks adam_t".into()))?;
        t.adam = AdamState {
            m: take("adam_m")?,
            v: take("adam_v")?,
            t: adam_t,
        };
        if t.ema.is_some() {
            t.ema = Some(take("ema")?);
        }
        t.counters = serde_json::from_value(ck.meta["counters"].clone())?;
        t.params = ck.params;
        if let Some(run_dir) = ckpt_dir.parent() {
            if let Ok(ledger) = read_ledger(run_dir) {
                t.ledger = ledger.rows.into_iter().filter(|r| r.checkpoint_step <= t.counters.step).collect();
                t.wall_seconds = t.ledger.last().map_or(0.0, |r| r.wall_seconds);
            }
        }
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn ema(&self) -> Option<&ParamStore> {
        self.ema.as_ref()
    }

    pub fn steps_taken(&self) -> u64 {
        self.counters.step
    }

    pub fn batch_for(&mut self, step: u64) -> Result<TokenBatch> {
        let seqs: Vec<Vec<usize>> = self
            .sampler
            .indices(step)
            .into_iter()
            .map(|i| self.corpus[i].clone())
            .collect();
        TokenBatch::from_sequences(&seqs, self.config.encoder.max_len)
    }

    /// Loss of the batch for the next step under current parameters, with
    /// no update.
    pub fn peek_loss(&mut self) -> Result<LossBreakdown> {
        let step = self.counters.step;
        let clean = self.batch_for(step)?;
        let (_, _, lg) = self.build_loss(&clean, step)?;
        Ok(lg.breakdown)
    }

    fn build_loss(&self, clean: &TokenBatch, step: u64) -> Result<(Graph, Vec<Var>, LossGraph)> {
        let cfg = &self.config;
        let mask_seed = seeds::derive(cfg.seeds.mask, seeds::tag::MASK, step);
        let plan = make_mask_plan(clean, cfg.objective.mask_rate, mask_seed)?;
        let targets = if cfg.objective.kind.has_jepa() {
            let source = self.ema.as_ref().unwrap_or(&self.params);
            Some(jepa_targets(source, &cfg.encoder, clean)?)
        } else {
            None
        };
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true)?;
        let inputs = StepInputs {
            clean,
            plan: &plan,
            targets: targets.as_deref(),
            step,
            projection_seed: cfg.seeds.projection,
        };
        let lg = combined_loss(&mut g, &cfg.objective, &cfg.encoder, &bound, inputs)?;
        let vars = bound.vars().to_vec();
        Ok((g, vars, lg))
    }

    pub fn step_once(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let step = self.counters.step;
        let clean = self.batch_for(step)?;
        let lr = lr_schedule(step + 1, self.config.warmup_steps, self.config.learning_rate);
        let (mut g, vars, lg) = self.build_loss(&clean, step)?;
        let mut applied = false;
        if g.requires_grad(lg.total) {
            g.backward(lg.total)?;
            let mut grads: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
            drop(g);
            if let Some(clip) = self.config.grad_clip_norm {
                let norm = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
                if norm > clip {
                    grads.iter_mut().flatten().for_each(|x| *x *= clip / norm);
                }
            }
            applied = self.opt.step(&mut self.params, &grads, &mut self.adam, lr)?;
        }
        if applied {
            self.counters.optimizer_steps += 1;
            self.counters.tokens_seen += clean.n_real_tokens() as u64;
            if let (Some(ema), TargetMode::Ema { decay }) = (self.ema.as_mut(), self.config.objective.target_mode) {
                ema_update(ema, &self.params, decay)?;
            }
        } else {
            self.counters.skipped_steps += 1;
        }
        self.counters.step += 1;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        self.wall_seconds += wall_ms / 1e3;
        Ok(StepRecord {
            step: self.counters.step,
            wall_ms,
            lr,
            applied,
            loss: lg.breakdown,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut aux = BTreeMap::new();
        aux.insert("adam_m".to_string(), self.adam.m.clone());
        aux.insert("adam_v".to_string(), self.adam.v.clone());
        if let Some(ema) = &self.ema {
            aux.insert("ema".to_string(), ema.clone());
        }
        let cfg = &self.config;
        Checkpoint {
            step: self.counters.step,
            encoder: cfg.encoder.clone(),
            params: self.params.clone(),
            aux,
            meta: json!({
                "run_name": cfg.run_name,
                "objective_kind": cfg.objective.kind,
                "mlm_weight": cfg.objective.mlm_weight(),
                "seeds": cfg.seeds,
                "adam_t": self.adam.t,
                "counters": self.counters,
                "train_config": cfg,
            }),
        }
    }

    fn ledger_row(&self) -> LedgerRow {
        LedgerRow {
            checkpoint_step: self.counters.step,
            optimizer_steps: self.counters.optimizer_steps,
            skipped_steps: self.counters.skipped_steps,
            samples_seen: self.counters.optimizer_steps * self.config.batch_size as u64,
            tokens_seen: self.counters.tokens_seen,
            wall_seconds: self.wall_seconds,
        }
    }

    pub fn ledger(&self) -> RunLedger {
        RunLedger {
            run_name: self.config.run_name.clone(),
            batch_size: self.config.batch_size,
            rows: self.ledger.clone(),
        }
    }

    fn flush_ledger(&self, run_dir: &Path) -> Result<()> {
        fsutil::write_atomic(&run_dir.join("ledger.json"), serde_json::to_string_pretty(&self.ledger())?.as_bytes())
    }

    /// Trains until every budget point is reached, writing
    /// `<out_root>/<run_name>/{ckpt_<step>/, train_log.jsonl, ledger.json}`.
    /// On error the ledger rows written so far are flushed before returning.
    pub fn run(&mut self, out_root: &Path) -> Result<RunOutput> {
        let run_dir = out_root.join(&self.config.run_name);
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        fsutil::write_atomic(&run_dir.join("config.json"), serde_json::to_string_pretty(&self.config)?.as_bytes())?;
        let result = self.run_inner(&run_dir);
        if result.is_err() {
            let _ = self.flush_ledger(&run_dir);
        }
        result
    }

    fn run_inner(&mut self, run_dir: &Path) -> Result<RunOutput> {
        let log_path = run_dir.join("train_log.jsonl");
        let kept = retained_log(&log_path, self.counters.step)?;
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(file);
        for line in kept {
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        let mut written = Vec::new();
        let n_points = match &self.config.budget {
            Budget::Steps { checkpoints } => checkpoints.len(),
            Budget::WallSeconds { checkpoints } => checkpoints.len(),
        };
        for i in 0..n_points {
            let reached = |t: &Trainer| match &t.config.budget {
                Budget::Steps { checkpoints } => t.counters.step >= checkpoints[i],
                Budget::WallSeconds { checkpoints } => t.wall_seconds >= checkpoints[i],
            };
            if reached(self) && self.ledger.iter().any(|r| r.checkpoint_step == self.counters.step) {
                continue;
            }
            while !reached(self) {
                let rec = self.step_once()?;
                serde_json::to_writer(&mut log, &rec.log_row())?;
                writeln!(log).map_err(|e| Error::io(&log_path, e))?;
            }
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            let dir = checkpoint::dir_for(run_dir, self.counters.step);
            self.checkpoint().save(&dir, self.config.checkpoint_dtype)?;
            self.ledger.retain(|r| r.checkpoint_step != self.counters.step);
            self.ledger.push(self.ledger_row());
            self.flush_ledger(run_dir)?;
            written.push(dir);
        }
        Ok(RunOutput {
            run_dir: run_dir.to_path_buf(),
            checkpoints: written,
            ledger: self.ledger(),
        })
    }
}

fn retained_log(path: &Path, upto: u64) -> Result<Vec<String>> {
    if upto == 0 || !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let Ok(row) = serde_json::from_str::<LogRow>(&line) else {
            continue;
        };
        if row.step <= upto {
            kept.push(line);
        }
    }
    Ok(kept)
}

pub fn read_ledger(run_dir: &Path) -> Result<RunLedger> {
    Ok(serde_json::from_str(&fsutil::read_to_string(&run_dir.join("ledger.json"))?)?)
}

pub fn read_log(run_dir: &Path) -> Result<Vec<LogRow>> {
    fsutil::read_to_string(&run_dir.join("train_log.jsonl"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
