use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cascade_core::audio::{extract, MelConfig};
use cascade_core::decode::{beam_search, AsrScorer, MtScorer, Recipe};
use cascade_core::eval::{Reference, Table};
use cascade_core::harness::*;
use cascade_core::model::{Example, Model};
use cascade_core::text::Granularity;
use cascade_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.task = SyntheticTaskSpec {
        seed: 3,
        vocabulary: 4,
        min_words: 1,
        max_words: 3,
        train: 40,
        dev: 8,
        test: 6,
        talk_size: 3,
        ..SyntheticTaskSpec::default()
    };
    c.model = ModelSection {
        d_model: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        d_ff: 32,
        heads: 2,
        dropout: 0.1,
        label_smoothing: 0.1,
        lambda: 0.5,
    };
    c.train.steps = 6;
    c.train.batch_size = 4;
    c.train.checkpoint_every = 3;
    c.train.average_best = 2;
    c.train.log_every = 3;
    c.train.warm_start_joint = false;
    c.decode.asr_beam = 3;
    c.decode.mt_beam = 2;
    c.decode.max_len = 8;
    c
}

fn prepared(cfg: &ExperimentConfig, dir: &Path) -> (RunDir, Manifest, Vocabularies) {
    let run = RunDir::new(dir);
    let m = gen_data(cfg, &run).unwrap();
    let v = build_vocab(cfg, &run).unwrap();
    (run, m, v)
}

fn file_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generation_is_deterministic() {
    let cfg = tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_synthetic_task(&cfg.task, a.path()).unwrap();
    let mb = generate_synthetic_task(&cfg.task, b.path()).unwrap();
    assert_eq!(ma.utterances, mb.utterances);
    let (fa, fb) = (file_bytes(a.path()), file_bytes(b.path()));
    assert_eq!(fa.len(), 1 + 40 + 8 + 6);
    assert_eq!(fa, fb);

    let other = SyntheticTaskSpec { seed: 4, ..cfg.task.clone() };
    let c = tempfile::tempdir().unwrap();
    generate_synthetic_task(&other, c.path()).unwrap();
    assert_ne!(file_bytes(c.path())["manifest.json"], fa["manifest.json"]);
}

#[test]
fn manifest_targets_follow_the_rule() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic_task(&cfg.task, dir.path()).unwrap();
    let src = cfg.task.source_words();
    let tgt = cfg.task.target_words();
    for u in &m.utterances {
        let s: Vec<usize> = u.source.split(' ').map(|w| src.iter().position(|x| x == w).unwrap()).collect();
        let t: Vec<usize> = u.target.split(' ').map(|w| tgt.iter().position(|x| x == w).unwrap()).collect();
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(t, rev);
    }
    // talks group consecutive utterances
    assert_eq!(m.split("train").iter().filter(|u| u.talk == "train-talk000").count(), 3);

    let reloaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(reloaded.utterances, m.utterances);
    fs::remove_file(dir.path().join("wav/dev-00001.wav")).unwrap();
    assert!(matches!(Manifest::load(&dir.path().join("manifest.json")), Err(Error::MissingFile(_))));
}

#[test]
fn duplicate_ids_are_rejected() {
    let u = Utterance {
        id: "x".into(),
        talk: "t".into(),
        split: "train".into(),
        wav: "a.wav".into(),
        source: "ka".into(),
        target: "pe".into(),
    };
    assert!(Manifest::new(".".into(), vec![u.clone(), u]).is_err());
}

#[test]
fn tiny_vocabulary_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticTaskSpec { vocabulary: 1, ..tiny_config().task };
    assert!(generate_synthetic_task(&spec, dir.path()).is_err());
}

#[test]
fn noiseless_renderings_have_identical_features() {
    let spec = SyntheticTaskSpec { noise: 0.0, ..tiny_config().task };
    let words = [2, 0, 1];
    let a = spec.render(&words, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = spec.render(&words, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let fa = extract(&a, &MelConfig::default()).unwrap();
    let fb = extract(&b, &MelConfig::default()).unwrap();
    assert_eq!(fa, fb);
    let noisy = SyntheticTaskSpec { noise: 0.05, ..spec };
    let c = noisy.render(&words, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_ne!(c.samples, a.samples);
}

#[test]
fn checkpoint_cadence_and_final_average() {
    let mut cfg = tiny_config();
    cfg.train.steps = 50;
    cfg.train.checkpoint_every = 10;
    cfg.train.average_best = 3;
    let dir = tempfile::tempdir().unwrap();
    let (run, m, v) = prepared(&cfg, dir.path());
    let train = load_split(&m, "train", &v).unwrap();
    let dev = load_split(&m, "dev", &v).unwrap();
    let out = train_loaded(&cfg, &run, Objective::Mt, &v, &train, &dev).unwrap();
    let ckpts: Vec<_> = fs::read_dir(run.model_dir("ext-mt"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("step-"))
        .collect();
    assert_eq!(ckpts.len(), 5);
    assert_eq!(out.checkpoints.len(), 5);
    assert_eq!(out.averaged.len(), 3);
    // the averaged checkpoints are the three lowest dev losses
    let mut losses: Vec<(f64, u64)> = out.checkpoints.iter().map(|c| (c.dev_loss, c.step)).collect();
    losses.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Vec<u64> = losses[..3].iter().map(|x| x.1).collect();
    let mut averaged = out.averaged.clone();
    best.sort();
    averaged.sort();
    assert_eq!(best, averaged);
    let log = fs::read_to_string(run.model_dir("ext-mt").join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step\tl_total\tl_mt\tl_asr\tlr");
    assert_eq!(log.lines().count(), 1 + 50 / 3 + 1);
    assert!(run.final_model("ext-mt").exists());
}

#[test]
fn asr_objective_leaves_mt_parameters_untouched() {
    let mut cfg = tiny_config();
    cfg.train.steps = 5;
    let dir = tempfile::tempdir().unwrap();
    let (_, m, v) = prepared(&cfg, dir.path());
    let train = load_split(&m, "train", &v).unwrap();
    let joint_cfg = model_configs(&cfg, &v).2;
    let initial = Model::new(joint_cfg, 5).unwrap();
    let mut model = initial.clone();
    train_model(&mut model, Objective::Asr, &train, &[], &cfg.train, cfg.adam(), &v.fingerprints(), &dir.path().join("m"))
        .unwrap();
    let (mut mt_same, mut asr_moved) = (0, 0);
    for ((name, before), (_, after)) in initial.params.iter().zip(model.params.iter()) {
        if name.starts_with("mt.") {
            assert_eq!(before.data(), after.data(), "{name}");
            mt_same += 1;
        } else if before.data() != after.data() {
            asr_moved += 1;
        }
    }
    assert!(mt_same > 0);
    assert!(asr_moved > 0);
}

fn mean_dev_l_mt(model: &Model, dev: &[Sample]) -> f64 {
    dev.iter()
        .map(|s| {
            let ex = Example { features: Some(&s.features), transcript: &s.transcript, target: &s.target };
            model.loss(&ex).unwrap().l_mt
        })
        .sum::<f64>()
        / dev.len() as f64
}

#[test]
fn joint_training_halves_dev_mt_loss() {
    let mut cfg = tiny_config();
    cfg.task.train = 200;
    cfg.task.dev = 20;
    cfg.model.dropout = 0.0;
    cfg.model.d_model = 32;
    cfg.model.d_ff = 64;
    cfg.model.heads = 4;
    cfg.train.steps = 150;
    cfg.train.batch_size = 8;
    cfg.train.checkpoint_every = 50;
    cfg.train.average_best = 1;
    cfg.train.lr_scale = 0.25;
    cfg.train.warmup = 50;
    cfg.train.log_every = 50;
    let dir = tempfile::tempdir().unwrap();
    let (run, m, v) = prepared(&cfg, dir.path());
    let train = load_split(&m, "train", &v).unwrap();
    let dev = load_split(&m, "dev", &v).unwrap();
    let initial = Model::new(model_configs(&cfg, &v).2, cfg.train.seed.wrapping_add(37)).unwrap();
    let before = mean_dev_l_mt(&initial, &dev);
    train_loaded(&cfg, &run, Objective::Joint, &v, &train, &dev).unwrap();
    let trained = cascade_core::model::Checkpoint::load(&run.final_model("joint")).unwrap().model;
    let after = mean_dev_l_mt(&trained, &dev);
    eprintln!("dev l_mt {before:.4} -> {after:.4}");
    assert!(after <= 0.5 * before, "dev l_mt {before} -> {after}");
}

#[test]
fn divergence_keeps_the_last_good_checkpoint() {
    let mut cfg = tiny_config();
    cfg.train.steps = 40;
    cfg.train.checkpoint_every = 1;
    cfg.train.lr_scale = 1e300;
    cfg.train.clip_norm = None;
    let dir = tempfile::tempdir().unwrap();
    let (run, m, v) = prepared(&cfg, dir.path());
    let train = load_split(&m, "train", &v).unwrap();
    let err = train_loaded(&cfg, &run, Objective::Mt, &v, &train, &[]).unwrap_err();
    let Error::Diverged { step } = err else { panic!("expected divergence, got {err}") };
    assert!(step >= 1);
    assert!(!run.final_model("ext-mt").exists());
    if step > 1 {
        let last = run.model_dir("ext-mt").join(format!("step-{:06}.ckpt", step - 1));
        let ckpt = cascade_core::model::Checkpoint::load(&last).unwrap();
        assert!(ckpt.model.params.iter().all(|(_, t)| t.is_finite()));
    }
}

/// Trains all three systems briefly and returns the run.
fn trained_run(cfg: &ExperimentConfig, dir: &Path) -> (RunDir, Vocabularies) {
    let (run, m, v) = prepared(cfg, dir);
    let train = load_split(&m, "train", &v).unwrap();
    let dev = load_split(&m, "dev", &v).unwrap();
    for o in [Objective::Asr, Objective::Mt, Objective::Joint] {
        train_loaded(cfg, &run, o, &v, &train, &dev).unwrap();
    }
    (run, v)
}

#[test]
fn missing_models_fail_before_decoding() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let (run, m, v) = prepared(&cfg, dir.path());
    let train = load_split(&m, "train", &v).unwrap();
    train_loaded(&cfg, &run, Objective::Asr, &v, &train, &[]).unwrap();
    let recipe: Recipe = "[Ext-ASR]⟹[Joint-MT + Ext-MT]".parse().unwrap();
    match run_decode(&cfg, &run, recipe, "test") {
        Err(Error::MissingModels(ids)) => assert_eq!(ids, ["ext-mt", "joint"]),
        other => panic!("{other:?}"),
    }
    assert!(!run.decode_dir(&recipe.slug()).exists());
}

#[test]
fn decoding_recipes_end_to_end() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let (run, v) = trained_run(&cfg, dir.path());

    // the pipeline recipe with one ASR hypothesis is ASR 1-best chained into MT
    let mut one = cfg.clone();
    one.decode.asr_beam = 1;
    let recipe: Recipe = "[Ext-ASR]⟹[Ext-MT]".parse().unwrap();
    let out = run_decode(&one, &run, recipe, "test").unwrap();
    let models = load_systems(&one, &run, recipe).unwrap();
    let manifest = load_manifest(&one, &run).unwrap();
    let samples = load_split(&manifest, "test", &v).unwrap();
    let opts = one.decode_options();
    for (s, u) in samples.iter().zip(&out) {
        let asr = &models["ext-asr"];
        let z = beam_search(&mut AsrScorer::new(asr.asr().unwrap(), &asr.params, &s.features).unwrap(), 1, opts.asr_max_len, opts.asr_alpha)
            .unwrap();
        let z = z.best().unwrap();
        let text = v.source.decode(z.body()).unwrap();
        let mt = &models["ext-mt"];
        let y = beam_search(&mut MtScorer::from_tokens(mt.mt().unwrap(), &mt.params, z.body()).unwrap(), opts.mt_beam, opts.mt_max_len, opts.mt_alpha)
            .unwrap();
        assert_eq!(u.asr_1best, text);
        assert_eq!(u.pipeline_translation, v.target.decode(y.best().unwrap().body()).unwrap());
        assert!(u.combined_score >= u.pipeline_score);
    }

    // every recipe runs and decoding twice gives identical files
    for recipe in Recipe::ALL {
        run_decode(&cfg, &run, recipe, "test").unwrap();
        let files = DecodeFiles::new(&run, recipe, "test");
        let first: Vec<Vec<u8>> =
            ["mt.txt", "asr.txt", "mt.nbest", "asr.nbest", "scores.tsv"].iter().map(|k| fs::read(files.file(k)).unwrap()).collect();
        run_decode(&cfg, &run, recipe, "test").unwrap();
        let second: Vec<Vec<u8>> =
            ["mt.txt", "asr.txt", "mt.nbest", "asr.nbest", "scores.tsv"].iter().map(|k| fs::read(files.file(k)).unwrap()).collect();
        assert_eq!(first, second, "{recipe}");
        score_recipe(&run, recipe, "test", EvalMode::Segmented).unwrap();
    }
    let (asr, slt) = report(&run, "BPE-BPE", &["test"]).unwrap();
    assert_eq!(slt.rows.len(), 9);
    assert_eq!(asr.rows.len(), 3);
    let text = fs::read_to_string(run.root.join("report/tables.txt")).unwrap();
    assert!(text.contains("[Ext-ASR + Joint-ASR]⟹[Joint-MT + Ext-MT]"));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let mut cfg = tiny_config();
    cfg.train.steps = 4;
    cfg.train.checkpoint_every = 2;
    let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let (run, _) = trained_run(&cfg, dir.path());
            let recipe: Recipe = "[Ext-ASR + Joint-ASR]⟹[Joint-MT + Ext-MT]".parse().unwrap();
            run_decode(&cfg, &run, recipe, "test").unwrap();
            score_recipe(&run, recipe, "test", EvalMode::MwerStream).unwrap();
            let mut files = file_bytes(dir.path());
            files.retain(|k, _| !k.ends_with("timing.tsv"));
            files
        })
        .collect();
    assert_eq!(runs[0].keys().collect::<Vec<_>>(), runs[1].keys().collect::<Vec<_>>());
    for (k, v) in &runs[0] {
        assert!(runs[1][k] == *v, "{k} differs");
    }
}

fn refs() -> Vec<Reference> {
    let r = |t: &str, s: &str, x: &str| Reference { talk: t.into(), segment: s.into(), text: x.into() };
    vec![
        r("t1", "a", "pe su ne"),
        r("t1", "b", "le pu"),
        r("t1", "c", "sy ny le pe"),
        r("t2", "d", "pu pu"),
        r("t2", "e", "ne le sy"),
    ]
}

fn hyps_of(refs: &[Reference]) -> Vec<(String, String)> {
    refs.iter().map(|r| (r.segment.clone(), r.text.clone())).collect()
}

#[test]
fn eval_identity_in_both_modes() {
    let refs = refs();
    for mode in [EvalMode::Segmented, EvalMode::MwerStream] {
        let r = evaluate(&hyps_of(&refs), &refs, mode).unwrap();
        assert_eq!(r.bleu.mean, 100.0);
        assert_eq!(r.wer, 0.0);
        assert_eq!(r.bleu.talks.len(), 2);
    }
}

#[test]
fn mwer_stream_recovers_correct_boundaries() {
    let refs = refs();
    let mut hyps = hyps_of(&refs);
    hyps[0].1 = "pe su".into();
    hyps[2].1 = "sy ny le pe pe".into();
    hyps[3].1 = "pu ne".into();
    let seg = evaluate(&hyps, &refs, EvalMode::Segmented).unwrap();
    let stream = evaluate(&hyps, &refs, EvalMode::MwerStream).unwrap();
    assert_eq!(seg.word_errors, stream.word_errors);
    assert_eq!(seg.bleu, stream.bleu);
    assert!(seg.bleu.mean < 100.0 && seg.wer > 0.0);
}

#[test]
fn mwer_stream_fixes_shifted_boundaries() {
    let refs = refs();
    let mut hyps = hyps_of(&refs);
    // move one word across the a/b boundary
    hyps[0].1 = "pe su".into();
    hyps[1].1 = "ne le pu".into();
    let seg = evaluate(&hyps, &refs, EvalMode::Segmented).unwrap();
    let stream = evaluate(&hyps, &refs, EvalMode::MwerStream).unwrap();
    assert_eq!(seg.word_errors, 2);
    assert_eq!(stream.word_errors, 0);
    assert_eq!(stream.bleu.mean, 100.0);
}

#[test]
fn missing_ids_are_listed() {
    let refs = refs();
    let mut hyps = hyps_of(&refs);
    hyps.retain(|(id, _)| id != "b" && id != "e");
    hyps.push(("zz".into(), "x".into()));
    match evaluate(&hyps, &refs, EvalMode::Segmented) {
        Err(Error::MissingIds(ids)) => assert_eq!(ids, ["b", "e", "zz"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn run_eval_reads_files() {
    let dir = tempfile::tempdir().unwrap();
    let refs = refs();
    cascade_core::eval::write_references(&dir.path().join("r.tsv"), &refs).unwrap();
    write_hypotheses(&dir.path().join("h.txt"), &hyps_of(&refs)).unwrap();
    assert_eq!(read_hypotheses(&dir.path().join("h.txt")).unwrap(), hyps_of(&refs));
    let r = run_eval(&dir.path().join("h.txt"), &dir.path().join("r.tsv"), EvalMode::MwerStream).unwrap();
    assert_eq!(r.bleu.mean, 100.0);
    assert!(matches!(
        run_eval(&dir.path().join("nope.txt"), &dir.path().join("r.tsv"), EvalMode::Segmented),
        Err(Error::MissingFile(_))
    ));
}

#[test]
fn report_table_uses_split_headers_and_parses_back() {
    let names = ["dev-2010", "tst2010", "tst-2013", "tst-2014", "tst-2015"];
    let refs = refs();
    let ok = evaluate(&hyps_of(&refs), &refs, EvalMode::Segmented).unwrap();
    let scores: Vec<RecipeScores> = Recipe::ALL
        .iter()
        .flat_map(|r| {
            names.iter().map(|s| RecipeScores {
                recipe: r.to_string(),
                split: s.to_string(),
                translation: ok.clone(),
                pipeline: ok.clone(),
                transcript: ok.clone(),
            })
        })
        .collect::<Vec<_>>();
    let t = recipe_table("Joint SLT", "BPE-BPE", &names, &scores).unwrap();
    let header = t.to_string().lines().nth(1).unwrap().to_string();
    let mut at = 0;
    for n in names {
        at += header[at..].find(&format!("{n} BLEU")).expect(n);
    }
    assert_eq!(Table::parse(&t.to_string()).unwrap(), t);
    assert_eq!(t.rows[0].0, "[Ext-ASR]⟹[Ext-MT]");
    assert_eq!(t.get("[Ext-ASR]⟹[Joint-MT]", "tst-2014 WER"), Some(0.0));
    assert_eq!(t.get("[Ext-ASR]⟹[Ext-MT]", "tst-2014 WER"), None);
    let asr = asr_table("WER", &names, &scores).unwrap();
    assert_eq!(asr.columns, names);
}

#[test]
fn character_transcripts_use_the_character_penalty() {
    let mut cfg = tiny_config();
    cfg.vocab.source_granularity = Granularity::Character;
    let dir = tempfile::tempdir().unwrap();
    let (_, _, v) = prepared(&cfg, dir.path());
    assert_eq!(v.source.mode(), Granularity::Character);
    assert_eq!(cfg.decode_options().asr_alpha, 0.3);
}
