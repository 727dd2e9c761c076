use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainSection;
use super::data::Sample;
use super::synth::shuffled;
use crate::error::{Error, Result};
use crate::model::{average_checkpoints, Checkpoint, Example, Graph, LossReport, Model, Network, VocabFingerprint};
use crate::tensor::{AdamConfig, OptimizerState, Tensor};

/// Which loss drives the updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Asr,
    Mt,
    Joint,
}

impl Objective {
    /// Name of the model directory this objective trains by default.
    pub fn system(self) -> &'static str {
        match self {
            Objective::Asr => "ext-asr",
            Objective::Mt => "ext-mt",
            Objective::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asr" => Ok(Objective::Asr),
            "mt" => Ok(Objective::Mt),
            "joint" => Ok(Objective::Joint),
            _ => Err(Error::InvalidArgument(format!("unknown objective {s:?}"))),
        }
    }
}

/// Loss and gradients of `objective` on one sample. The ASR objective on a
/// joint model only builds the ASR half of the graph, so no gradient
/// reaches the MT parameters.
pub fn objective_grads(
    model: &Model,
    objective: Objective,
    sample: &Sample,
    dropout_seed: Option<u64>,
) -> Result<(LossReport, Vec<Option<Tensor>>)> {
    let ex = Example { features: Some(&sample.features), transcript: &sample.transcript, target: &sample.target };
    match (objective, &model.network) {
        (Objective::Asr, Network::Joint(j)) => {
            let mut g = Graph::training(&model.params, dropout_seed);
            let out = j.asr.forward(&mut g, &sample.features, &sample.transcript)?;
            let l = g.tape.value(out.loss).item();
            let grads = g.tape.backward(out.loss)?;
            let report = LossReport { l_total: l, l_mt: 0.0, l_asr: l, mt_tokens: 0, asr_tokens: out.tokens };
            Ok((report, g.param_grads(&grads)))
        }
        (Objective::Asr, Network::Asr(_)) | (Objective::Mt, Network::Mt(_)) | (Objective::Joint, Network::Joint(_)) => {
            model.loss_and_grads(&ex, dropout_seed)
        }
        _ => Err(Error::InvalidArgument(format!("objective {objective:?} does not fit this model"))),
    }
}

fn objective_loss(model: &Model, objective: Objective, sample: &Sample) -> Result<f64> {
    let ex = Example { features: Some(&sample.features), transcript: &sample.transcript, target: &sample.target };
    match (objective, &model.network) {
        (Objective::Asr, Network::Joint(j)) => {
            let mut g = Graph::inference(&model.params);
            let out = j.asr.forward(&mut g, &sample.features, &sample.transcript)?;
            Ok(g.tape.value(out.loss).item())
        }
        _ => Ok(model.loss(&ex)?.l_total),
    }
}

/// Mean objective over a held-out set, without dropout.
pub fn dev_loss(model: &Model, objective: Objective, dev: &[Sample]) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::Empty("dev set".into()));
    }
    let losses = dev.par_iter().map(|s| objective_loss(model, objective, s)).collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / dev.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub l_total: f64,
    pub l_mt: f64,
    pub l_asr: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u64,
    pub path: PathBuf,
    pub dev_loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoints: Vec<CheckpointRecord>,
    pub log: Vec<LogEntry>,
    pub averaged: Vec<u64>,
    pub final_path: PathBuf,
    pub final_dev_loss: f64,
}

fn mean_grads(per_example: Vec<Vec<Option<Tensor>>>) -> Result<Vec<Option<Tensor>>> {
    let n = per_example.len() as f64;
    let mut acc: Vec<Option<(Vec<usize>, Vec<f64>)>> = Vec::new();
    for grads in per_example {
        acc.resize(grads.len(), None);
        for (slot, g) in acc.iter_mut().zip(grads) {
            let Some(t) = g else { continue };
            match slot {
                Some((_, a)) => a.iter_mut().zip(t.data()).for_each(|(x, y)| *x += y),
                None => *slot = Some((t.shape().to_vec(), t.data().to_vec())),
            }
        }
    }
    acc.into_iter()
        .map(|slot| {
            slot.map(|(shape, mut data)| {
                data.iter_mut().for_each(|x| *x /= n);
                Tensor::new(shape, data)
            })
            .transpose()
        })
        .collect()
}

/// Trains `model` in place on `train`, evaluating `dev` at every
/// checkpoint, and writes `out_dir/step-<n>.ckpt`, `out_dir/train_log.tsv`
/// and `out_dir/final.ckpt` (the mean of the `average_best` checkpoints
/// with the lowest dev loss).
///
/// On a non-finite loss or gradient training stops with
/// [`Error::Diverged`]; checkpoints already written are kept.
pub fn train_model(
    model: &mut Model,
    objective: Objective,
    train: &[Sample],
    dev: &[Sample],
    opts: &TrainSection,
    adam: AdamConfig,
    vocabs: &[VocabFingerprint],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut optimizer = OptimizerState::new(adam, &model.params);
    let dropout_on = match &model.config {
        crate::model::ModelConfig::Joint(j) => j.asr.dropout > 0.0 || j.mt.dropout > 0.0,
        crate::model::ModelConfig::Asr(c) | crate::model::ModelConfig::Mt(c) => c.dropout > 0.0,
    };

    let mut order = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut log = Vec::new();
    let mut interval = (0.0, 0.0, 0.0, 0usize);
    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut log_text = String::from("step\tl_total\tl_mt\tl_asr\tlr\n");

    for step in 1..=opts.steps {
        let mut batch = Vec::with_capacity(opts.batch_size);
        while batch.len() < opts.batch_size.min(train.len()) {
            if cursor == order.len() {
                order = shuffled(train.len(), opts.seed.wrapping_mul(1_000_003).wrapping_add(epoch));
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let results = batch
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let seed = dropout_on.then(|| opts.seed ^ (step << 20) ^ k as u64);
                objective_grads(model, objective, &train[i], seed)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| if matches!(e, Error::NonFinite { .. }) { Error::Diverged { step } } else { e })?;
        let mut grads = Vec::with_capacity(results.len());
        for (report, g) in results {
            if !report.l_total.is_finite() {
                return Err(Error::Diverged { step });
            }
            interval.0 += report.l_total;
            interval.1 += report.l_mt;
            interval.2 += report.l_asr;
            interval.3 += 1;
            grads.push(g);
        }
        let grads = mean_grads(grads)?;
        match optimizer.step(&mut model.params, &grads) {
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
            Ok(_) => {}
        }
        if model.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged { step });
        }

        if step % opts.log_every == 0 || step == opts.steps {
            let n = interval.3.max(1) as f64;
            let entry = LogEntry {
                step,
                l_total: interval.0 / n,
                l_mt: interval.1 / n,
                l_asr: interval.2 / n,
                learning_rate: optimizer.learning_rate(step),
            };
            log::info!("step {step} loss {:.4} (mt {:.4}, asr {:.4})", entry.l_total, entry.l_mt, entry.l_asr);
            let _ = writeln!(
                log_text,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}",
                entry.step, entry.l_total, entry.l_mt, entry.l_asr, entry.learning_rate
            );
            fs::write(out_dir.join("train_log.tsv"), &log_text)?;
            log.push(entry);
            interval = (0.0, 0.0, 0.0, 0);
        }

        if step % opts.checkpoint_every == 0 {
            let path = out_dir.join(format!("step-{step:06}.ckpt"));
            let dev_loss = if dev.is_empty() { f64::NAN } else { dev_loss(model, objective, dev)? };
            Checkpoint { model: model.clone(), vocabs: vocabs.to_vec(), step }.save(&path)?;
            log::info!("checkpoint {} dev loss {dev_loss:.4}", path.display());
            checkpoints.push(CheckpointRecord { step, path, dev_loss });
        }
    }

    let mut ranked: Vec<&CheckpointRecord> = checkpoints.iter().collect();
    ranked.sort_by(|a, b| a.dev_loss.total_cmp(&b.dev_loss).then(b.step.cmp(&a.step)));
    let chosen: Vec<&CheckpointRecord> = ranked.into_iter().take(opts.average_best).collect();
    let final_ckpt = if chosen.is_empty() {
        Checkpoint { model: model.clone(), vocabs: vocabs.to_vec(), step: opts.steps }
    } else {
        let loaded = chosen.iter().map(|c| Checkpoint::load(&c.path)).collect::<Result<Vec<_>>>()?;
        average_checkpoints(&loaded)?
    };
    let final_path = out_dir.join("final.ckpt");
    final_ckpt.save(&final_path)?;
    let final_dev_loss = if dev.is_empty() { f64::NAN } else { dev_loss(&final_ckpt.model, objective, dev)? };
    *model = final_ckpt.model;
    let outcome = TrainOutcome {
        averaged: chosen.iter().map(|c| c.step).collect(),
        checkpoints,
        log,
        final_path,
        final_dev_loss,
    };
    // paths in the summary are relative to the model directory
    let mut summary = outcome.clone();
    let rel = |p: &mut PathBuf| *p = p.strip_prefix(out_dir).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
    summary.checkpoints.iter_mut().for_each(|c| rel(&mut c.path));
    rel(&mut summary.final_path);
    fs::write(out_dir.join("train_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(outcome)
}
