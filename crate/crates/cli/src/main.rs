use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cascade_core::decode::Recipe;
use cascade_core::harness::{
    build_vocab, gen_data, record_artifacts, report, run_decode, run_eval, score_recipe, train, EvalMode,
    ExperimentConfig, Objective, RunDir,
};
use cascade_core::model::{average_checkpoints, Checkpoint};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascade", about = "Jointly trained cascade speech translation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); built-in desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory holding every artifact.
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    asr_beam: Option<usize>,
    #[arg(long)]
    mt_beam: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    average_best: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, RunDir)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.train.seed = v;
            cfg.task.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.train.steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.lambda {
            cfg.model.lambda = v;
        }
        if let Some(v) = self.asr_beam {
            cfg.decode.asr_beam = v;
        }
        if let Some(v) = self.mt_beam {
            cfg.decode.mt_beam = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.train.checkpoint_every = v;
        }
        if let Some(v) = self.average_best {
            cfg.train.average_best = v;
        }
        cfg.validate()?;
        Ok((cfg, RunDir::new(&self.run_dir)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration in canonical form.
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Generate the synthetic corpus and reference files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Learn source and target vocabularies from the training split.
    BuildVocab {
        #[command(flatten)]
        common: Common,
    },
    /// Train one objective: asr (Ext-ASR), mt (Ext-MT) or joint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        objective: Objective,
    },
    /// Decode a split with an ensemble recipe and score it.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Recipe name, e.g. "[Ext-ASR]=>[Joint-MT + Ext-MT]" or "ext.joint+ext"; all nine when omitted.
        #[arg(long)]
        recipe: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "segmented")]
        mode: EvalMode,
    },
    /// Score a hypothesis file (`id<TAB>text`) against references (`talk<TAB>id<TAB>text`).
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "segmented")]
        mode: EvalMode,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Element-wise mean of checkpoints with identical configs and vocabularies.
    AverageCkpt {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Collect scores under the run directory into report tables.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "dev,test")]
        splits: Vec<String>,
        #[arg(long, default_value = "BPE-BPE")]
        corner: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { common } => {
            print!("{}", common.load()?.0.to_toml());
        }
        Command::GenData { common } => {
            let (cfg, run) = common.load()?;
            let m = gen_data(&cfg, &run)?;
            cfg.save(&run.root.join("config.toml"))?;
            println!("{} utterances under {}", m.utterances.len(), run.data().display());
            record_artifacts(&run)?;
        }
        Command::BuildVocab { common } => {
            let (cfg, run) = common.load()?;
            let v = build_vocab(&cfg, &run)?;
            println!("source vocabulary {}, target vocabulary {}", v.source.vocab_size(), v.target.vocab_size());
            record_artifacts(&run)?;
        }
        Command::Train { common, objective } => {
            let (cfg, run) = common.load()?;
            let out = train(&cfg, &run, objective)?;
            println!(
                "{} checkpoints, averaged steps {:?}, dev loss {:.4} -> {}",
                out.checkpoints.len(),
                out.averaged,
                out.final_dev_loss,
                out.final_path.display()
            );
            record_artifacts(&run)?;
        }
        Command::Decode { common, recipe, split, mode } => {
            let (cfg, run) = common.load()?;
            let recipes = match recipe {
                Some(r) => vec![r.parse::<Recipe>()?],
                None => Recipe::ALL.to_vec(),
            };
            for recipe in recipes {
                let out = run_decode(&cfg, &run, recipe, &split)?;
                let s = score_recipe(&run, recipe, &split, mode)?;
                let secs: f64 = out.iter().map(|u| u.seconds).sum();
                println!(
                    "{recipe}\t{split}\tBLEU {:.2}\tpipeline BLEU {:.2}\tWER {:.2}\t{:.1}s",
                    s.translation.bleu.mean, s.pipeline.bleu.mean, s.transcript.wer, secs
                );
            }
            record_artifacts(&run)?;
        }
        Command::Eval { hyp, reference, mode, out } => {
            let r = run_eval(&hyp, &reference, mode)?;
            let json = serde_json::to_string_pretty(&r)? + "\n";
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => print!("{json}"),
            }
        }
        Command::AverageCkpt { out, inputs } => {
            let loaded = inputs
                .iter()
                .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            average_checkpoints(&loaded)?.save(&out)?;
            println!("averaged {} checkpoints into {}", loaded.len(), out.display());
        }
        Command::Report { common, splits, corner } => {
            let (_, run) = common.load()?;
            if splits.is_empty() {
                bail!("no splits given");
            }
            let names: Vec<&str> = splits.iter().map(String::as_str).collect();
            let (asr, slt) = report(&run, &corner, &names)?;
            print!("{asr}\n{slt}");
            record_artifacts(&run)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
