//! End-to-end stages shared by the command line and the test suites:
//! corpus directories, training runs, evaluation and attention inspection.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{
    build_bags, load_corpus, write_corpus, write_manifest, Bag, CorpusFormat, Grouping, LoadOptions, ManifestEntry,
    RelationHierarchy, SentenceRecord, SyntheticCorpus, NA,
};
use crate::embedding::{SentenceInput, Vocab};
use crate::metrics::{
    attention_diagnostics, hits_at_k_macro, pr_curve_and_auc, precision_at_standard, predict_from_attention,
    write_curve, write_histogram, write_predictions, AttentionMode, CurvePoint, LevelDiagnostics, PredictionRecord,
    Retention,
};
use crate::model::{BagInput, Model};
use crate::numerics::{grad_check, GradCheckConfig, GradCheckReport, Graph};
use crate::parallel::{par_map, Parallelism};
use crate::training::{attention_terms, bag_objective, EpochSummary, StepMetrics, Trainer};
use crate::util::write_atomic;
use crate::{Error, Result};

pub const TRAIN_STEM: &str = "train";
pub const TEST_STEM: &str = "test";
pub const RELATIONS_FILE: &str = "relations.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_LOG: &str = "metrics.log";
pub const EPOCH_LOG: &str = "epochs.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const CURVE_FILE: &str = "pr_curve.tsv";
pub const HISTOGRAM_FILE: &str = "attention_hist.tsv";
pub const EVAL_METRICS_FILE: &str = "metrics.tsv";

pub fn manifest_file(stem: &str) -> String {
    format!("{stem}.manifest.tsv")
}

/// Writes the corpus, manifests and relation inventory into `dir`.
pub fn write_synthetic(dir: &Path, corpus: &SyntheticCorpus) -> Result<()> {
    for (stem, split) in [(TRAIN_STEM, &corpus.train), (TEST_STEM, &corpus.test)] {
        write_atomic(&dir.join(format!("{stem}.txt")), |w| {
            write_corpus(w, &split.records, CorpusFormat::NytText)
        })?;
        write_atomic(&dir.join(manifest_file(stem)), |w| write_manifest(w, &split.manifest))?;
    }
    write_atomic(&dir.join(RELATIONS_FILE), |w| {
        corpus.relations.iter().try_for_each(|r| writeln!(w, "{r}"))
    })
}

/// `<stem>.jsonl` or `<stem>.txt` inside `dir`.
pub fn find_split(dir: &Path, stem: &str) -> Option<(PathBuf, CorpusFormat)> {
    [("jsonl", CorpusFormat::Jsonl), ("txt", CorpusFormat::NytText)]
        .into_iter()
        .map(|(ext, f)| (dir.join(format!("{stem}.{ext}")), f))
        .find(|(p, _)| p.is_file())
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Fine-grained relation inventory.
    pub relations: Vec<String>,
    pub train: Vec<SentenceRecord>,
    pub test: Vec<SentenceRecord>,
}

impl Dataset {
    /// Reads `train`, optional `test` and optional `relations.txt` from `dir`.
    /// Without an inventory file the relations of both splits are used.
    pub fn load(dir: &Path) -> Result<Self> {
        let opts = LoadOptions::default();
        let (train_path, fmt) = find_split(dir, TRAIN_STEM)
            .ok_or_else(|| Error::input(format!("{}: no train.txt or train.jsonl", dir.display())))?;
        let train = load_corpus(&train_path, fmt, &opts)?.records;
        let test = match find_split(dir, TEST_STEM) {
            Some((p, f)) => load_corpus(&p, f, &opts)?.records,
            None => Vec::new(),
        };
        let inventory = dir.join(RELATIONS_FILE);
        let relations = if inventory.is_file() {
            std::fs::read_to_string(&inventory)
                .map_err(|e| Error::io(&inventory, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect()
        } else {
            let set: BTreeSet<String> = train.iter().chain(&test).map(|r| r.relation.clone()).collect();
            set.into_iter().collect()
        };
        Ok(Self { relations, train, test })
    }

    pub fn hierarchy(&self, depth: usize) -> Result<RelationHierarchy> {
        RelationHierarchy::from_relations(
            std::iter::once(NA).chain(self.relations.iter().map(String::as_str)),
            depth,
        )
    }
}

/// Training sentences per fine-grained relation id.
pub fn train_counts(records: &[SentenceRecord], hierarchy: &RelationHierarchy) -> Vec<usize> {
    let mut counts = vec![0; hierarchy.level_sizes()[0]];
    for r in records {
        if let Some(id) = hierarchy.id(0, &r.relation) {
            counts[id] += 1;
        }
    }
    counts
}

pub fn sentence_input(r: &SentenceRecord, vocab: &Vocab) -> SentenceInput {
    SentenceInput {
        tokens: vocab.encode(&r.tokens),
        head: r.head_pos,
        tail: r.tail_pos,
    }
}

pub fn bag_inputs(records: &[SentenceRecord], bags: &[Bag], vocab: &Vocab) -> Vec<BagInput> {
    bags.iter()
        .map(|b| BagInput {
            id: b.key.to_string(),
            sentences: b.members.iter().map(|&i| sentence_input(&records[i], vocab)).collect(),
            labels: b.labels.clone(),
        })
        .collect()
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub vocab: Vocab,
    pub hierarchy: RelationHierarchy,
    pub epochs: Vec<EpochSummary>,
    pub steps: Vec<StepMetrics>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.trainer, &self.vocab, self.hierarchy.relations())
    }
}

fn write_step_log(path: &Path, steps: &[StepMetrics]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "step\tL\tL_re\tL_att")?;
        steps
            .iter()
            .try_for_each(|m| writeln!(w, "{}\t{}\t{}\t{}", m.step, m.loss, m.loss_re, m.loss_att))
    })
}

fn write_epoch_log(path: &Path, epochs: &[EpochSummary]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "epoch\tsteps\tL\tL_re\tL_att")?;
        epochs.iter().try_for_each(|e| {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                e.epoch, e.steps, e.mean_loss, e.mean_loss_re, e.mean_loss_att
            )
        })
    })
}

/// Trains on `data.train`, from scratch or from `resume`, until
/// `cfg.epochs`. With `out`, writes the step log, epoch log, periodic
/// checkpoints and the final checkpoint there.
pub fn run_training(
    data: &Dataset,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::input("empty training set"));
    }
    let (mut trainer, vocab, hierarchy) = match resume {
        Some(c) => {
            let mut trainer = c.trainer()?;
            trainer.config.epochs = cfg.epochs;
            trainer.config.parallelism = cfg.parallelism;
            let depth = trainer.model.config.depth();
            let hierarchy = RelationHierarchy::from_relations(c.relations.iter().map(String::as_str), depth)?;
            (trainer, c.vocab()?, hierarchy)
        }
        None => {
            let hierarchy = data.hierarchy(cfg.m_levels)?;
            let vocab = Vocab::build(data.train.iter().flat_map(|r| r.tokens.iter().map(String::as_str)));
            let model = Model::init(cfg.model_config(hierarchy.level_sizes()), vocab.len(), cfg.seed)?;
            (Trainer::new(model, cfg.clone()), vocab, hierarchy)
        }
    };
    if hierarchy.level_sizes() != trainer.model.config.level_sizes {
        return Err(Error::input("checkpoint hierarchy does not match the model"));
    }
    let bags = build_bags(&data.train, Grouping::PairRelation, &hierarchy);
    let inputs = bag_inputs(&data.train, &bags, &vocab);
    let mut steps = Vec::new();
    let every = trainer.config.checkpoint_every;
    let relations = hierarchy.relations().to_vec();
    let epochs = trainer.train(&inputs, &mut |m| steps.push(*m), &mut |t, e| {
        if let (Some(dir), true) = (out, every > 0 && e.epoch % every.max(1) == 0) {
            Checkpoint::capture(t, &vocab, &relations).save(&dir.join(format!("checkpoint-epoch{}.json", e.epoch)))?;
        }
        Ok(())
    })?;
    let outcome = TrainOutcome {
        trainer,
        vocab,
        hierarchy,
        epochs,
        steps,
    };
    if let Some(dir) = out {
        write_step_log(&dir.join(METRICS_LOG), &outcome.steps)?;
        write_epoch_log(&dir.join(EPOCH_LOG), &outcome.epochs)?;
        outcome.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
    }
    Ok(outcome)
}

/// Predictions for evaluation bags after retention sampling.
pub fn predict_bags(
    model: &Model,
    vocab: &Vocab,
    records: &[SentenceRecord],
    bags: &[Bag],
    retention: Retention,
    seed: u64,
    parallelism: Parallelism,
) -> Result<Vec<PredictionRecord>> {
    par_map(parallelism, bags, |i, bag| {
        let keep = retention.subset(bag.len(), seed, i);
        let sentences: Vec<SentenceInput> = keep
            .iter()
            .map(|&j| sentence_input(&records[bag.members[j]], vocab))
            .collect();
        let p = model.predict(&sentences)?;
        let has_alpha = p.alphas.iter().all(|a| !a.is_empty());
        Ok(PredictionRecord {
            key: bag.key.to_string(),
            gold: bag.gold.clone(),
            labels: bag.labels.clone(),
            scores: p.probs,
            alphas: has_alpha.then_some(p.alphas),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Seed for retention sampling.
    pub seed: u64,
    pub thresholds: Vec<usize>,
    pub ks: Vec<usize>,
    pub bins: usize,
    pub parallelism: Parallelism,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            thresholds: vec![100, 200],
            ks: vec![10, 15, 20],
            bins: 10,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub seed: u64,
    /// All sentences retained.
    pub predictions: Vec<PredictionRecord>,
    pub curve: Vec<CurvePoint>,
    pub auc: f64,
    /// `[P@100, P@200, P@300, mean]` per retention setting; `None` when the
    /// test set has too few candidate pairs.
    pub precision: Vec<(Retention, Option<[f64; 4]>)>,
    /// `(threshold, k, hits)`; `None` when no relation is under the threshold.
    pub hits: Vec<(usize, usize, Option<f64>)>,
    pub attention: Option<Vec<LevelDiagnostics>>,
    /// AUC when ranking by attention alone, fine level and product.
    pub attention_auc: Option<(f64, f64)>,
}

pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    hierarchy: &RelationHierarchy,
    test: &[SentenceRecord],
    counts: &[usize],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let bags = build_bags(test, Grouping::Pair, hierarchy);
    let mut precision = Vec::new();
    let mut predictions = Vec::new();
    for retention in Retention::ALL_SETTINGS {
        let preds = predict_bags(model, vocab, test, &bags, retention, opts.seed, opts.parallelism)?;
        let p = match precision_at_standard(&preds) {
            Ok(p) => Some(p),
            Err(Error::Input(msg)) => {
                log::warn!("P@N ({}): {msg}", retention.name());
                None
            }
            Err(e) => return Err(e),
        };
        precision.push((retention, p));
        if retention == Retention::All {
            predictions = preds;
        }
    }
    let (curve, auc) = pr_curve_and_auc(&predictions)?;
    let mut hits = Vec::new();
    for &t in &opts.thresholds {
        for &k in &opts.ks {
            let h = match hits_at_k_macro(&predictions, counts, t, k) {
                Ok(h) => Some(h),
                Err(Error::Input(msg)) => {
                    log::warn!("Hits@{k} (<{t}): {msg}");
                    None
                }
                Err(e) => return Err(e),
            };
            hits.push((t, k, h));
        }
    }
    let with_alpha = predictions.iter().all(|p| p.alphas.is_some());
    let attention = with_alpha.then(|| attention_diagnostics(&predictions, opts.bins)).transpose()?;
    let attention_auc = if with_alpha {
        let level0 = predict_from_attention(&predictions, AttentionMode::Level0, Some(hierarchy))?;
        let product = predict_from_attention(&predictions, AttentionMode::Product, Some(hierarchy))?;
        Some((pr_curve_and_auc(&level0)?.1, pr_curve_and_auc(&product)?.1))
    } else {
        None
    };
    Ok(EvalReport {
        seed: opts.seed,
        predictions,
        curve,
        auc,
        precision,
        hits,
        attention,
        attention_auc,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

pub fn format_eval_metrics(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# retention_seed\t{}", report.seed);
    let _ = writeln!(s, "metric\tvalue");
    let _ = writeln!(s, "auc\t{}", report.auc);
    for (r, p) in &report.precision {
        for (i, name) in ["p@100", "p@200", "p@300", "p@mean"].iter().enumerate() {
            let _ = writeln!(s, "{name}_{}\t{}", r.name(), fmt_opt(p.map(|p| p[i])));
        }
    }
    for (t, k, h) in &report.hits {
        let _ = writeln!(s, "hits@{k}_lt{t}\t{}", fmt_opt(*h));
    }
    if let Some(levels) = &report.attention {
        for d in levels {
            let _ = writeln!(s, "attention_accuracy_l{}\t{}", d.level, d.accuracy());
        }
    }
    if let Some((level0, product)) = report.attention_auc {
        let _ = writeln!(s, "attention_auc_level0\t{level0}");
        let _ = writeln!(s, "attention_auc_product\t{product}");
    }
    s
}

/// Writes the metric summary, predictions, PR curve and attention histogram.
pub fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    write_atomic(&dir.join(EVAL_METRICS_FILE), |w| {
        w.write_all(format_eval_metrics(report).as_bytes())
    })?;
    write_atomic(&dir.join(PREDICTIONS_FILE), |w| write_predictions(w, &report.predictions))?;
    write_atomic(&dir.join(CURVE_FILE), |w| write_curve(w, &report.curve))?;
    if let Some(levels) = &report.attention {
        write_atomic(&dir.join(HISTOGRAM_FILE), |w| write_histogram(w, levels))?;
    }
    Ok(())
}

/// Mean attention-pool weight of flagged and clean sentences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolWeightSplit {
    pub mislabeled_mean: f64,
    pub mislabeled_count: usize,
    pub clean_mean: f64,
    pub clean_count: usize,
}

impl PoolWeightSplit {
    pub fn margin(&self) -> f64 {
        self.clean_mean - self.mislabeled_mean
    }
}

/// Pool weights of sentences in evaluation bags with at least `min_size`
/// members, split by the manifest's mislabeled flag. Only bags that hold
/// both kinds contribute.
pub fn pool_weights_by_flag(
    model: &Model,
    vocab: &Vocab,
    hierarchy: &RelationHierarchy,
    records: &[SentenceRecord],
    manifest: &[ManifestEntry],
    min_size: usize,
) -> Result<PoolWeightSplit> {
    if manifest.len() != records.len() || manifest.iter().enumerate().any(|(i, m)| m.sentence_id != i) {
        return Err(Error::input("manifest does not line up with the corpus"));
    }
    let bags = build_bags(records, Grouping::Pair, hierarchy);
    let (mut noisy, mut clean) = ((0.0, 0), (0.0, 0));
    for bag in bags.iter().filter(|b| b.len() >= min_size) {
        let flags: Vec<bool> = bag.members.iter().map(|&i| manifest[i].mislabeled).collect();
        if flags.iter().all(|&f| f) || !flags.iter().any(|&f| f) {
            continue;
        }
        let sentences: Vec<SentenceInput> = bag.members.iter().map(|&i| sentence_input(&records[i], vocab)).collect();
        let p = model.predict(&sentences)?;
        for (&w, &f) in p.pool_weights.iter().zip(&flags) {
            let acc = if f { &mut noisy } else { &mut clean };
            acc.0 += w;
            acc.1 += 1;
        }
    }
    if noisy.1 == 0 {
        return Err(Error::input("no bag mixes mislabeled and clean sentences"));
    }
    Ok(PoolWeightSplit {
        mislabeled_mean: noisy.0 / noisy.1 as f64,
        mislabeled_count: noisy.1,
        clean_mean: clean.0 / clean.1 as f64,
        clean_count: clean.1,
    })
}

/// Model, vocabulary and hierarchy restored from a checkpoint.
pub fn restore(c: &Checkpoint) -> Result<(Model, Vocab, RelationHierarchy)> {
    let model = c.model()?;
    let hierarchy = RelationHierarchy::from_relations(c.relations.iter().map(String::as_str), model.config.depth())?;
    if hierarchy.level_sizes() != model.config.level_sizes {
        return Err(Error::input("checkpoint relation inventory does not match the model"));
    }
    Ok((model, c.vocab()?, hierarchy))
}

/// Top-`k` attention per level for every sentence of the requested
/// evaluation bags (`head|tail` keys).
pub fn inspect_attention(
    model: &Model,
    vocab: &Vocab,
    hierarchy: &RelationHierarchy,
    records: &[SentenceRecord],
    keys: &[String],
    k: usize,
) -> Result<String> {
    let bags = build_bags(records, Grouping::Pair, hierarchy);
    let index: HashMap<String, &Bag> = bags.iter().map(|b| (b.key.to_string(), b)).collect();
    let mut out = String::new();
    for key in keys {
        let bag = index
            .get(key)
            .ok_or_else(|| Error::input(format!("unknown bag key {key:?}")))?;
        let sentences: Vec<SentenceInput> = bag.members.iter().map(|&i| sentence_input(&records[i], vocab)).collect();
        let p = model.predict(&sentences)?;
        let gold: Vec<&str> = bag.gold.iter().map(|&g| hierarchy.name(0, g)).collect();
        let _ = writeln!(out, "bag {key}\tgold {}", gold.join(","));
        for (j, (&m, alphas)) in bag.members.iter().zip(&p.alphas).enumerate() {
            let _ = writeln!(out, "sentence {j}: {}", records[m].tokens.join(" "));
            if alphas.is_empty() {
                let _ = writeln!(out, "  (no relation attention)");
                continue;
            }
            let header: Vec<String> = (0..alphas.len()).map(|l| format!("level {l}")).collect();
            let _ = writeln!(out, "  {}", header.join("\t"));
            let tops: Vec<Vec<(usize, f64)>> = alphas
                .iter()
                .map(|a| {
                    let mut idx: Vec<(usize, f64)> = a.iter().copied().enumerate().collect();
                    idx.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal).then(x.0.cmp(&y.0)));
                    idx.truncate(k);
                    idx
                })
                .collect();
            for row in 0..k.min(tops.iter().map(Vec::len).min().unwrap_or(0)) {
                let cells: Vec<String> = tops
                    .iter()
                    .enumerate()
                    .map(|(l, t)| format!("{} {:.10}", hierarchy.name(l, t[row].0), t[row].1))
                    .collect();
                let _ = writeln!(out, "  {}", cells.join("\t"));
            }
        }
    }
    Ok(out)
}

/// Fine relations of the toy hierarchy used for gradient checks: with NA
/// this gives level sizes 5, 4 and 3.
pub const TOY_RELATIONS: [&str; 4] = ["/a/x/one", "/a/x/two", "/a/y/three", "/b/z/four"];

/// Two bags of two sentences over a toy vocabulary, labelled at depth 2.
pub fn toy_bags(hierarchy: &RelationHierarchy) -> Vec<BagInput> {
    let s = |tokens: Vec<usize>, head, tail| SentenceInput { tokens, head, tail };
    vec![
        BagInput {
            id: "toy|0".into(),
            sentences: vec![s(vec![2, 3, 4, 5, 6], 0, 3), s(vec![7, 2, 8, 5], 1, 3)],
            labels: hierarchy.labels(TOY_RELATIONS[2]).expect("toy relation"),
        },
        BagInput {
            id: "toy|1".into(),
            sentences: vec![s(vec![9, 4, 3], 2, 0), s(vec![6, 9, 7, 8, 2, 3], 1, 4)],
            labels: hierarchy.labels(TOY_RELATIONS[0]).expect("toy relation"),
        },
    ]
}

/// Finite-difference check of `L_re + L_att` on the toy bags with the
/// dimensions, architecture and ablations of `cfg`; dropout is off.
pub fn grad_check_toy(cfg: &TrainConfig, check: &GradCheckConfig) -> Result<GradCheckReport> {
    let hierarchy = RelationHierarchy::from_relations(std::iter::once(NA).chain(TOY_RELATIONS), cfg.m_levels.min(2))?;
    let bags = toy_bags(&hierarchy);
    let model = Model::init(cfg.model_config(hierarchy.level_sizes()), 10, cfg.seed)?;
    let aux = cfg.uses_aux();
    let terms: usize = bags.iter().map(|b| attention_terms(&model, b)).sum();
    let att_scale = (aux && terms > 0).then(|| 1.0 / terms as f64);
    let re_scale = 1.0 / bags.len() as f64;
    grad_check(
        &model.store,
        |g: &mut Graph<'_>| {
            let mut total = None;
            for bag in &bags {
                let obj = bag_objective(g, &model, bag, None, re_scale, att_scale)?;
                total = Some(match total {
                    None => obj.loss,
                    Some(t) => g.add(t, obj.loss)?,
                });
            }
            Ok(total.expect("two bags"))
        },
        check,
    )
}
