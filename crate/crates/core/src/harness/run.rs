//! The experiment commands: data generation, vocabularies, training,
//! decoding, scoring and report tables, all under one run directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::data::{load_split, RunDir, Sample, Vocabularies};
use super::manifest::Manifest;
use super::synth::generate_synthetic_task;
use super::train::{train_model, Objective, TrainOutcome};
use crate::decode::{write_nbest, AsrSide, CoupledResult, DecodeOptions, MtSide, NBestRecord, Recipe, Systems};
use crate::error::{Error, Result};
use crate::eval::{corpus_bleu, mwer_segment, read_references, wer, write_references, BleuReport, Reference, Table, Talk};
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::text::{normalize_text, SubwordModel};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// Generates the synthetic corpus under `<run>/data` and writes the
/// reference files of every split.
pub fn gen_data(config: &ExperimentConfig, run: &RunDir) -> Result<Manifest> {
    let manifest = generate_synthetic_task(&config.task, &run.data())?;
    write_split_references(&manifest, run)?;
    Ok(manifest)
}

pub fn write_split_references(manifest: &Manifest, run: &RunDir) -> Result<()> {
    for split in SPLITS {
        for side in ["source", "target"] {
            let refs: Vec<Reference> = manifest
                .split(split)
                .iter()
                .map(|u| Reference {
                    talk: u.talk.clone(),
                    segment: u.id.clone(),
                    text: normalize_text(if side == "source" { &u.source } else { &u.target }),
                })
                .collect();
            let path = run.references(split, side);
            fs::create_dir_all(path.parent().expect("references live in a directory"))?;
            write_references(&path, &refs)?;
        }
    }
    Ok(())
}

pub fn load_manifest(config: &ExperimentConfig, run: &RunDir) -> Result<Manifest> {
    Manifest::load(&run.manifest_path(config))
}

pub fn build_vocab(config: &ExperimentConfig, run: &RunDir) -> Result<Vocabularies> {
    let manifest = load_manifest(config, run)?;
    let vocabs = Vocabularies::build(config, &manifest)?;
    vocabs.save(&run.vocab())?;
    Ok(vocabs)
}

/// Model configs for the vocabularies actually built.
pub fn model_configs(config: &ExperimentConfig, vocabs: &Vocabularies) -> (ModelConfig, ModelConfig, ModelConfig) {
    config.models_for(vocabs.source.vocab_size(), vocabs.target.vocab_size())
}

fn config_for(config: &ExperimentConfig, vocabs: &Vocabularies, system: &str) -> Result<ModelConfig> {
    let (asr, mt, joint) = model_configs(config, vocabs);
    match system {
        "ext-asr" => Ok(asr),
        "ext-mt" => Ok(mt),
        "joint" => Ok(joint),
        _ => Err(Error::InvalidArgument(format!("unknown system {system:?}"))),
    }
}

/// Trains one objective; the model lands in `<run>/models/<system>/`.
pub fn train(config: &ExperimentConfig, run: &RunDir, objective: Objective) -> Result<TrainOutcome> {
    let manifest = load_manifest(config, run)?;
    let vocabs = Vocabularies::load(&run.vocab())?;
    let train = load_split(&manifest, "train", &vocabs)?;
    let dev = load_split(&manifest, "dev", &vocabs)?;
    train_loaded(config, run, objective, &vocabs, &train, &dev)
}

/// [`train`] on samples already in memory.
pub fn train_loaded(
    config: &ExperimentConfig,
    run: &RunDir,
    objective: Objective,
    vocabs: &Vocabularies,
    train: &[Sample],
    dev: &[Sample],
) -> Result<TrainOutcome> {
    let system = objective.system();
    let seed = config.train.seed.wrapping_add(match objective {
        Objective::Asr => 11,
        Objective::Mt => 23,
        Objective::Joint => 37,
    });
    let mut model = Model::new(config_for(config, vocabs, system)?, seed)?;
    if objective == Objective::Joint && config.train.warm_start_joint {
        warm_start_asr(&mut model, config, run, vocabs)?;
    }
    train_model(
        &mut model,
        objective,
        train,
        dev,
        &config.train,
        config.adam(),
        &vocabs.fingerprints(),
        &run.model_dir(system),
    )
}

/// Copies the trained Ext-ASR parameters into the `asr.` half of a joint model.
fn warm_start_asr(joint: &mut Model, config: &ExperimentConfig, run: &RunDir, vocabs: &Vocabularies) -> Result<()> {
    let path = run.final_model("ext-asr");
    if !path.exists() {
        return Err(Error::MissingModels(vec!["ext-asr".into()]));
    }
    let ext = Checkpoint::load_checked(&path, &config_for(config, vocabs, "ext-asr")?, &vocabs.fingerprints())?;
    for (name, t) in ext.model.params.iter() {
        joint.params.set(&format!("asr.{name}"), t.clone())?;
    }
    Ok(())
}

fn required_systems(recipe: Recipe) -> Vec<&'static str> {
    let mut out = Vec::new();
    if recipe.needs_ext_asr() {
        out.push("ext-asr");
    }
    if recipe.needs_ext_mt() {
        out.push("ext-mt");
    }
    if recipe.needs_joint() {
        out.push("joint");
    }
    out
}

/// Final checkpoints of every system `recipe` uses, checked against the
/// run's configuration and vocabularies. Fails before loading anything if
/// a model file is missing.
pub fn load_systems(config: &ExperimentConfig, run: &RunDir, recipe: Recipe) -> Result<BTreeMap<&'static str, Model>> {
    let needed = required_systems(recipe);
    let missing: Vec<String> =
        needed.iter().filter(|s| !run.final_model(s).exists()).map(|s| s.to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingModels(missing));
    }
    let vocabs = Vocabularies::load(&run.vocab())?;
    let prints = vocabs.fingerprints();
    let mut out = BTreeMap::new();
    for s in needed {
        let ckpt = Checkpoint::load_checked(&run.final_model(s), &config_for(config, &vocabs, s)?, &prints)?;
        out.insert(s, ckpt.model);
    }
    Ok(out)
}

fn systems_of<'m>(models: &'m BTreeMap<&'static str, Model>) -> Systems<'m> {
    Systems { ext_asr: models.get("ext-asr"), ext_mt: models.get("ext-mt"), joint: models.get("joint") }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedUtterance {
    pub id: String,
    pub talk: String,
    /// 1-best of the ASR side.
    pub asr_1best: String,
    /// Source chosen jointly with the translation.
    pub source: String,
    pub translation: String,
    /// 1-best translation of the 1-best source.
    pub pipeline_translation: String,
    pub combined_score: f64,
    pub pipeline_score: f64,
    pub seconds: f64,
    #[serde(skip)]
    pub asr_nbest: Vec<NBestRecord>,
    #[serde(skip)]
    pub mt_nbest: Vec<NBestRecord>,
}

fn text_of(vocab: &SubwordModel, tokens: &[u32]) -> Result<String> {
    vocab.decode(tokens)
}

fn summarize(r: &CoupledResult, sample: &Sample, vocabs: &Vocabularies, seconds: f64) -> Result<DecodedUtterance> {
    let records = |list: &crate::decode::NBestList, vocab: &SubwordModel| -> Result<Vec<NBestRecord>> {
        list.hypotheses
            .iter()
            .enumerate()
            .map(|(k, h)| {
                Ok(NBestRecord {
                    utt_id: sample.id.clone(),
                    rank: k + 1,
                    log_likelihood: h.log_likelihood,
                    score: h.score(list.alpha),
                    text: text_of(vocab, h.body())?,
                })
            })
            .collect()
    };
    let first_source = r.sources.best().ok_or_else(|| Error::Empty("ASR n-best".into()))?;
    let first_translation = r.translations[0].best().ok_or_else(|| Error::Empty("MT n-best".into()))?;
    Ok(DecodedUtterance {
        id: sample.id.clone(),
        talk: sample.talk.clone(),
        asr_1best: text_of(&vocabs.source, first_source.body())?,
        source: text_of(&vocabs.source, r.source().body())?,
        translation: text_of(&vocabs.target, r.translation().body())?,
        pipeline_translation: text_of(&vocabs.target, first_translation.body())?,
        combined_score: r.combined_score(),
        pipeline_score: r.pipeline_score(),
        seconds,
        asr_nbest: records(&r.sources, &vocabs.source)?,
        mt_nbest: records(&r.translations[r.best.0], &vocabs.target)?,
    })
}

/// Decodes `samples` with `recipe`, in parallel over utterances; output
/// order follows `samples`.
pub fn decode_samples(
    models: &BTreeMap<&'static str, Model>,
    recipe: Recipe,
    samples: &[Sample],
    options: &DecodeOptions,
    vocabs: &Vocabularies,
) -> Result<Vec<DecodedUtterance>> {
    let systems = systems_of(models);
    systems.check(recipe)?;
    samples
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let r = systems.decode(recipe, &s.features, options)?;
            summarize(&r, s, vocabs, start.elapsed().as_secs_f64())
        })
        .collect()
}

fn write_lines(path: &Path, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut body = String::new();
    for r in rows {
        body.push_str(&r);
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

/// `id<TAB>text` per line.
pub fn write_hypotheses(path: &Path, hyps: &[(String, String)]) -> Result<()> {
    write_lines(path, hyps.iter().map(|(id, t)| format!("{id}\t{t}")))
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, String)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(n, l)| {
            l.split_once('\t')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Error::format("hypotheses", format!("line {}: missing tab", n + 1)))
        })
        .collect()
}

/// Paths written by [`run_decode`] for one split.
#[derive(Clone, Debug)]
pub struct DecodeFiles {
    pub dir: PathBuf,
    pub split: String,
}

impl DecodeFiles {
    pub fn new(run: &RunDir, recipe: Recipe, split: &str) -> Self {
        DecodeFiles { dir: run.decode_dir(&recipe.slug()), split: split.to_string() }
    }

    pub fn file(&self, kind: &str) -> PathBuf {
        self.dir.join(format!("{}.{kind}", self.split))
    }

    /// Coupled translations.
    pub fn translations(&self) -> PathBuf {
        self.file("mt.txt")
    }

    /// 1-best translations of the 1-best transcripts.
    pub fn pipeline(&self) -> PathBuf {
        self.file("pipeline.txt")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.file("asr.txt")
    }
}

/// Decodes one split with `recipe` and writes hypothesis, n-best, score
/// and timing files under `<run>/decode/<recipe-slug>/`.
pub fn run_decode(config: &ExperimentConfig, run: &RunDir, recipe: Recipe, split: &str) -> Result<Vec<DecodedUtterance>> {
    let models = load_systems(config, run, recipe)?;
    let vocabs = Vocabularies::load(&run.vocab())?;
    let manifest = load_manifest(config, run)?;
    let samples = load_split(&manifest, split, &vocabs)?;
    let out = decode_samples(&models, recipe, &samples, &config.decode_options(), &vocabs)?;
    write_decode_files(&DecodeFiles::new(run, recipe, split), &out)?;
    Ok(out)
}

pub fn write_decode_files(files: &DecodeFiles, out: &[DecodedUtterance]) -> Result<()> {
    fs::create_dir_all(&files.dir)?;
    let pairs = |f: fn(&DecodedUtterance) -> &String| -> Vec<(String, String)> {
        out.iter().map(|u| (u.id.clone(), f(u).clone())).collect()
    };
    write_hypotheses(&files.transcripts(), &pairs(|u| &u.asr_1best))?;
    write_hypotheses(&files.file("source.txt"), &pairs(|u| &u.source))?;
    write_hypotheses(&files.translations(), &pairs(|u| &u.translation))?;
    write_hypotheses(&files.pipeline(), &pairs(|u| &u.pipeline_translation))?;
    write_nbest(&files.file("asr.nbest"), &out.iter().flat_map(|u| u.asr_nbest.clone()).collect::<Vec<_>>())?;
    write_nbest(&files.file("mt.nbest"), &out.iter().flat_map(|u| u.mt_nbest.clone()).collect::<Vec<_>>())?;
    write_lines(
        &files.file("scores.tsv"),
        out.iter().map(|u| format!("{}\t{:.6}\t{:.6}", u.id, u.combined_score, u.pipeline_score)),
    )?;
    write_lines(&files.file("timing.tsv"), out.iter().map(|u| format!("{}\t{:.6}", u.id, u.seconds)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Hypotheses are scored against the reference of the same segment.
    Segmented,
    /// Hypotheses of a talk are concatenated and re-segmented against its
    /// references before scoring.
    MwerStream,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmented" => Ok(EvalMode::Segmented),
            "mwer-stream" => Ok(EvalMode::MwerStream),
            _ => Err(Error::InvalidArgument(format!("unknown eval mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub bleu: BleuReport,
    /// Word error rate in percent.
    pub wer: f64,
    pub word_errors: usize,
    pub reference_words: usize,
    pub segments: usize,
}

/// Scores hypotheses (`id -> text`) against references grouped by talk.
/// Every reference id needs a hypothesis and vice versa.
pub fn evaluate(hypotheses: &[(String, String)], references: &[Reference], mode: EvalMode) -> Result<EvalReport> {
    let hyp: HashMap<&str, &str> = hypotheses.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let ref_ids: HashSet<&str> = references.iter().map(|r| r.segment.as_str()).collect();
    let mut missing: Vec<String> =
        references.iter().filter(|r| !hyp.contains_key(r.segment.as_str())).map(|r| r.segment.clone()).collect();
    missing.extend(hypotheses.iter().filter(|(id, _)| !ref_ids.contains(id.as_str())).map(|(id, _)| id.clone()));
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    if references.is_empty() {
        return Err(Error::Empty("references".into()));
    }

    let mut talks: Vec<(String, Vec<&Reference>)> = Vec::new();
    for r in references {
        match talks.iter_mut().find(|(t, _)| *t == r.talk) {
            Some((_, v)) => v.push(r),
            None => talks.push((r.talk.clone(), vec![r])),
        }
    }
    let mut bleu_talks = Vec::with_capacity(talks.len());
    let (mut errors, mut words) = (0, 0);
    for (talk, refs) in &talks {
        let hyps: Vec<String> = match mode {
            EvalMode::Segmented => refs.iter().map(|r| normalize_text(hyp[r.segment.as_str()])).collect(),
            EvalMode::MwerStream => {
                let stream: Vec<String> = refs
                    .iter()
                    .flat_map(|r| normalize_text(hyp[r.segment.as_str()]).split_whitespace().map(String::from).collect::<Vec<_>>())
                    .collect();
                let ref_words: Vec<Vec<String>> =
                    refs.iter().map(|r| r.text.split_whitespace().map(String::from).collect()).collect();
                mwer_segment(&stream, &ref_words)?.segments.into_iter().map(|s| s.join(" ")).collect()
            }
        };
        let mut pairs = Vec::with_capacity(refs.len());
        for (r, h) in refs.iter().zip(hyps) {
            let rw: Vec<&str> = r.text.split_whitespace().collect();
            let hw: Vec<&str> = h.split_whitespace().collect();
            if rw.is_empty() {
                errors += hw.len();
            } else {
                errors += wer(&rw, &hw)?.errors();
            }
            words += rw.len();
            pairs.push((r.text.clone(), h));
        }
        bleu_talks.push(Talk { id: talk.clone(), pairs });
    }
    Ok(EvalReport {
        mode,
        bleu: corpus_bleu(&bleu_talks)?,
        wer: if words == 0 { 0.0 } else { 100.0 * errors as f64 / words as f64 },
        word_errors: errors,
        reference_words: words,
        segments: references.len(),
    })
}

pub fn run_eval(hypotheses: &Path, references: &Path, mode: EvalMode) -> Result<EvalReport> {
    if !references.exists() {
        return Err(Error::MissingFile(references.to_path_buf()));
    }
    evaluate(&read_hypotheses(hypotheses)?, &read_references(references)?, mode)
}

/// Translation and transcript scores of one recipe on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeScores {
    pub recipe: String,
    pub split: String,
    pub translation: EvalReport,
    pub pipeline: EvalReport,
    pub transcript: EvalReport,
}

/// Scores the decode files of `recipe` on `split` and stores the result in
/// `<run>/eval/<slug>.<split>.json`.
pub fn score_recipe(run: &RunDir, recipe: Recipe, split: &str, mode: EvalMode) -> Result<RecipeScores> {
    let files = DecodeFiles::new(run, recipe, split);
    let target = run.references(split, "target");
    let source = run.references(split, "source");
    let scores = RecipeScores {
        recipe: recipe.to_string(),
        split: split.to_string(),
        translation: run_eval(&files.translations(), &target, mode)?,
        pipeline: run_eval(&files.pipeline(), &target, mode)?,
        transcript: run_eval(&files.transcripts(), &source, mode)?,
    };
    fs::create_dir_all(run.eval_dir())?;
    fs::write(
        run.eval_dir().join(format!("{}.{split}.json", recipe.slug())),
        serde_json::to_string_pretty(&scores)? + "\n",
    )?;
    Ok(scores)
}

fn asr_name(a: AsrSide) -> &'static str {
    match a {
        AsrSide::Ext => "Ext-ASR",
        AsrSide::Joint => "Joint-ASR",
        AsrSide::ExtJoint => "Ext-ASR + Joint-ASR",
    }
}

/// System table: one row per recipe in the canonical order, a BLEU and a
/// WER column per split. WER belongs to the ASR side, so it is shown once
/// per ASR group, on the Joint-MT row.
pub fn recipe_table(title: &str, corner: &str, splits: &[&str], scores: &[RecipeScores]) -> Result<Table> {
    let columns: Vec<String> = splits.iter().flat_map(|s| [format!("{s} BLEU"), format!("{s} WER")]).collect();
    let col_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut table = Table::new(title, corner, &col_refs);
    for recipe in Recipe::ALL {
        let name = recipe.to_string();
        let mut row = Vec::with_capacity(columns.len());
        for split in splits {
            let s = scores.iter().find(|s| s.recipe == name && s.split == *split);
            row.push(s.map(|s| round2(s.translation.bleu.mean)));
            row.push(s.filter(|_| recipe.mt == MtSide::Joint).map(|s| round2(s.transcript.wer)));
        }
        if row.iter().any(Option::is_some) {
            table.push_row(&name, row)?;
        }
    }
    Ok(table)
}

/// ASR table: WER of each ASR side per split.
pub fn asr_table(title: &str, splits: &[&str], scores: &[RecipeScores]) -> Result<Table> {
    let mut table = Table::new(title, "ASR", splits);
    for side in [AsrSide::Ext, AsrSide::Joint, AsrSide::ExtJoint] {
        let row: Vec<Option<f64>> = splits
            .iter()
            .map(|split| {
                Recipe::ALL
                    .iter()
                    .filter(|r| r.asr == side)
                    .find_map(|r| scores.iter().find(|s| s.recipe == r.to_string() && s.split == *split))
                    .map(|s| round2(s.transcript.wer))
            })
            .collect();
        if row.iter().any(Option::is_some) {
            table.push_row(asr_name(side), row)?;
        }
    }
    Ok(table)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Collects every `<run>/eval/*.json` and writes `<run>/report/tables.txt`.
pub fn report(run: &RunDir, corner: &str, splits: &[&str]) -> Result<(Table, Table)> {
    let dir = run.eval_dir();
    if !dir.exists() {
        return Err(Error::MissingFile(dir));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let scores = paths
        .iter()
        .map(|p| Ok(serde_json::from_str::<RecipeScores>(&fs::read_to_string(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let asr = asr_table("ASR word error rate", splits, &scores)?;
    let slt = recipe_table("Speech translation systems", corner, splits, &scores)?;
    let out = run.root.join("report");
    fs::create_dir_all(&out)?;
    fs::write(out.join("tables.txt"), format!("{asr}\n{slt}"))?;
    Ok((asr, slt))
}

/// Rewrites `<run>/artifacts.json`: every file under the run directory
/// with its size and SHA-256.
pub fn record_artifacts(run: &RunDir) -> Result<BTreeMap<String, (u64, String)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    if run.root.exists() {
        walk(&run.root, &mut files)?;
    }
    let manifest_path = run.root.join("artifacts.json");
    let mut out = BTreeMap::new();
    for p in files.into_iter().filter(|p| *p != manifest_path) {
        let bytes = fs::read(&p)?;
        let rel = p.strip_prefix(&run.root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        out.insert(rel, (bytes.len() as u64, digest));
    }
    fs::create_dir_all(&run.root)?;
    fs::write(&manifest_path, serde_json::to_string_pretty(&out)? + "\n")?;
    Ok(out)
}
