//! Command-line entry point.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{gen_synthetic, load_corpus, write_corpus, CorpusFormat, LoadOptions};
use crate::numerics::GradCheckConfig;
use crate::pipeline::{
    evaluate, grad_check_toy, inspect_attention, restore, run_training, train_counts, write_eval, write_synthetic,
    Dataset, EvalOptions,
};
use crate::util::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "cora", version, about = "Hierarchical relation-augmented attention for distantly supervised relation extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with manifests into --out.
    GenSynth(Common),
    /// Train on --data, writing logs and checkpoints into --out.
    Train(Common),
    /// Evaluate --checkpoint on the test split of --data, writing metric files into --out.
    Eval(Common),
    /// Check analytic gradients against finite differences on a toy model.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Print the top-k sentence-to-relation attention for test bags.
    InspectAttention {
        #[command(flatten)]
        common: Common,
        /// Bag keys (`head_id|tail_id`), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        bags: Vec<String>,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
    /// Convert a corpus file between nyt-text and jsonl.
    Convert {
        #[command(flatten)]
        common: Common,
        /// Output format (`nyt-text` or `jsonl`).
        #[arg(long)]
        format: String,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    m_levels: Option<usize>,
    #[arg(long)]
    no_sent2rel: bool,
    #[arg(long)]
    no_attention_pool: bool,
    #[arg(long)]
    no_aux_obj: bool,
    #[arg(long)]
    no_entity_emb: bool,
    /// `key=value` overrides applied after the configuration file.
    overrides: Vec<String>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(m) = self.m_levels {
            cfg.train.m_levels = m;
        }
        let t = &mut cfg.train;
        t.no_sent2rel |= self.no_sent2rel;
        t.no_attention_pool |= self.no_attention_pool;
        t.no_aux_obj |= self.no_aux_obj;
        t.no_entity_emb |= self.no_entity_emb;
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::input("--out is required"))
    }

    fn data(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::input("--data is required"))
    }

    fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::input("--checkpoint is required"))
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenSynth(c) => {
            let cfg = c.run_config()?;
            cfg.synth.validate()?;
            let corpus = gen_synthetic(&cfg.synth)?;
            write_synthetic(c.out()?, &corpus)?;
            println!(
                "wrote {} training and {} test sentences to {}",
                corpus.train.records.len(),
                corpus.test.records.len(),
                c.out()?.display()
            );
        }
        Command::Train(c) => {
            let cfg = c.run_config()?;
            let data = Dataset::load(c.data()?)?;
            let resume = c.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let out = run_training(&data, &cfg.train, resume.as_ref(), Some(c.out()?))?;
            if let Some(last) = out.epochs.last() {
                println!("epoch {} mean loss {:.6}", last.epoch, last.mean_loss);
            }
        }
        Command::Eval(c) => {
            let cfg = c.run_config()?;
            let data = Dataset::load(c.data()?)?;
            let (model, vocab, hierarchy) = restore(&Checkpoint::load(c.checkpoint()?)?)?;
            let opts = EvalOptions {
                seed: cfg.train.seed,
                thresholds: cfg.eval.hits_thresholds.clone(),
                ks: cfg.eval.hits_ks.clone(),
                bins: cfg.eval.histogram_bins,
                parallelism: cfg.train.parallelism,
            };
            let counts = train_counts(&data.train, &hierarchy);
            let report = evaluate(&model, &vocab, &hierarchy, &data.test, &counts, &opts)?;
            write_eval(c.out()?, &report)?;
            println!("auc {:.4}", report.auc);
        }
        Command::GradCheck { common, tolerance } => {
            let cfg = common.run_config()?;
            cfg.train.validate()?;
            let check = GradCheckConfig {
                tolerance,
                seed: cfg.train.seed,
                parallelism: cfg.train.parallelism,
                ..GradCheckConfig::default()
            };
            let report = grad_check_toy(&cfg.train, &check)?;
            print!("{report}");
            if !report.passed() {
                return Err(Error::Invariant(format!(
                    "gradient check failed: max relative error {:e} exceeds {tolerance:e}",
                    report.max_rel_error()
                )));
            }
        }
        Command::InspectAttention { common, bags, top_k } => {
            let data = Dataset::load(common.data()?)?;
            let (model, vocab, hierarchy) = restore(&Checkpoint::load(common.checkpoint()?)?)?;
            let text = inspect_attention(&model, &vocab, &hierarchy, &data.test, &bags, top_k)?;
            match &common.out {
                Some(p) => write_atomic(p, |w| w.write_all(text.as_bytes()))?,
                None => print!("{text}"),
            }
        }
        Command::Convert { common, format } => {
            let format: CorpusFormat = format.parse()?;
            let input = common.data()?;
            let records = load_corpus(input, CorpusFormat::from_path(input), &LoadOptions::default())?.records;
            write_atomic(common.out()?, |w| write_corpus(w, &records, format))?;
        }
    }
    Ok(())
}
