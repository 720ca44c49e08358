//! Fixtures, brute-force metric oracles and randomized invariant suites
//! shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use cora::config::TrainConfig;
use cora::data::{derive_hierarchy, RelationHierarchy, NA};
use cora::embedding::{gate_inputs, SentenceInput};
use cora::metrics::{attention_diagnostics, hits_at_k_macro, pr_curve_and_auc, precision_at_n, PredictionRecord};
use cora::model::Model;
use cora::numerics::{softmax, Array, Graph};
use cora::relattn::attention_pool;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_RELATIONS: usize = 10;
pub const FIXTURE_LEVELS: [usize; 3] = [10, 4, 2];

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3) + 1e-9).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Prediction records with coarse score grids (to force ties), multi-label
/// bags, negative bags and attention vectors on three levels.
pub fn metric_fixture(n: usize, seed: u64) -> (Vec<PredictionRecord>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds = (0..n)
        .map(|i| {
            let gold = if rng.random::<f64>() < 0.5 {
                vec![0]
            } else {
                let a = rng.random_range(1..FIXTURE_RELATIONS);
                let b = rng.random_range(1..FIXTURE_RELATIONS);
                if rng.random::<f64>() < 0.2 && a != b {
                    let mut g = vec![a.min(b), a.max(b)];
                    g.dedup();
                    g
                } else {
                    vec![a]
                }
            };
            let labels: Vec<usize> = (0..FIXTURE_LEVELS.len())
                .map(|l| if gold[0] == 0 { 0 } else { 1 + (gold[0] - 1) % (FIXTURE_LEVELS[l] - 1) })
                .collect();
            let scores = (0..FIXTURE_RELATIONS)
                .map(|_| (rng.random_range(0..20) as f64) * 0.05)
                .collect();
            let sentences = rng.random_range(1..4);
            let alphas = (0..sentences)
                .map(|_| FIXTURE_LEVELS.iter().map(|&k| random_simplex(&mut rng, k)).collect())
                .collect();
            PredictionRecord {
                key: format!("e{i}|e{}", i + n),
                gold,
                labels,
                scores,
                alphas: Some(alphas),
            }
        })
        .collect();
    let counts = (0..FIXTURE_RELATIONS).map(|_| rng.random_range(0..300)).collect();
    (preds, counts)
}

/// Hit flags in ranked order; each pair's position is the number of pairs
/// that precede it.
pub fn oracle_hit_sequence(preds: &[PredictionRecord]) -> Vec<bool> {
    let mut pairs = Vec::new();
    for p in preds {
        for r in 1..p.scores.len() {
            pairs.push((p.scores[r], r, p.key.as_str(), r != 0 && p.gold.contains(&r)));
        }
    }
    let mut seq = vec![None; pairs.len()];
    for (i, a) in pairs.iter().enumerate() {
        let mut before = 0;
        for (j, b) in pairs.iter().enumerate() {
            if i == j {
                continue;
            }
            let precedes = b.0 > a.0 || (b.0 == a.0 && (b.1 < a.1 || (b.1 == a.1 && b.2 < a.2)));
            if precedes {
                before += 1;
            }
        }
        assert!(seq[before].is_none(), "ranking oracle needs distinct keys");
        seq[before] = Some(a.3);
    }
    seq.into_iter().map(|h| h.expect("positions form a permutation")).collect()
}

pub fn oracle_precision_at_n(preds: &[PredictionRecord], n: usize) -> f64 {
    let seq = oracle_hit_sequence(preds);
    let mut hits = 0;
    for h in &seq[..n] {
        if *h {
            hits += 1;
        }
    }
    100.0 * hits as f64 / n as f64
}

/// Area accumulated only where recall moves: each gold hit adds a
/// `1 / facts` wide trapezoid between the precision just before it and at it.
pub fn oracle_auc(preds: &[PredictionRecord]) -> f64 {
    let facts: usize = preds.iter().map(|p| p.gold.iter().filter(|&&g| g != 0).count()).sum();
    let seq = oracle_hit_sequence(preds);
    let precision = |i: usize| seq[..i].iter().filter(|h| **h).count() as f64 / i as f64;
    let mut area = 0.0;
    for i in 1..=seq.len() {
        if seq[i - 1] {
            let before = if i == 1 { precision(1) } else { precision(i - 1) };
            area += (before + precision(i)) / 2.0 / facts as f64;
        }
    }
    area
}

pub fn oracle_hits_at_k(preds: &[PredictionRecord], counts: &[usize], threshold: usize, k: usize) -> f64 {
    let mut sum = 0.0;
    let mut relations = 0;
    for (r, &count) in counts.iter().enumerate().skip(1) {
        if count >= threshold {
            continue;
        }
        let (mut hit, mut total) = (0, 0);
        for p in preds.iter().filter(|p| p.gold.contains(&r)) {
            let mut order: Vec<usize> = (1..p.scores.len()).collect();
            // stable: equal scores keep ascending ids
            order.sort_by(|a, b| p.scores[*b].partial_cmp(&p.scores[*a]).unwrap());
            let rank = order.iter().position(|&x| x == r).unwrap() + 1;
            total += 1;
            if rank <= k {
                hit += 1;
            }
        }
        if total > 0 {
            sum += hit as f64 / total as f64;
            relations += 1;
        }
    }
    100.0 * sum / relations as f64
}

/// `(accuracy, per-bin counts)` per level.
pub fn oracle_attention(preds: &[PredictionRecord], bins: usize) -> Vec<(f64, Vec<usize>)> {
    let levels = preds[0].labels.len();
    (0..levels)
        .map(|l| {
            let (mut correct, mut total) = (0usize, 0usize);
            let mut counts = vec![0; bins];
            for p in preds {
                for sentence in p.alphas.as_ref().unwrap() {
                    let a = &sentence[l];
                    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let top = a.iter().position(|&x| x == max).unwrap();
                    total += 1;
                    if top == p.labels[l] {
                        correct += 1;
                    }
                    let bin = (0..bins)
                        .find(|&b| max < (b + 1) as f64 / bins as f64)
                        .unwrap_or(bins - 1);
                    counts[bin] += 1;
                }
            }
            (100.0 * correct as f64 / total as f64, counts)
        })
        .collect()
}

/// Compares every metric with its oracle on a fixture; returns the largest
/// absolute deviation or a description of the first exact-count mismatch.
pub fn check_metric_oracles(n: usize, seed: u64) -> Result<f64, String> {
    let (preds, counts) = metric_fixture(n, seed);
    let mut worst = 0.0f64;
    let mut track = |name: &str, got: f64, want: f64| -> Result<(), String> {
        let d = (got - want).abs();
        worst = worst.max(d);
        if d > 1e-9 {
            return Err(format!("{name}: {got} vs oracle {want}"));
        }
        Ok(())
    };
    for n in [1, 100, 200, 300, 1000] {
        track(&format!("P@{n}"), precision_at_n(&preds, n).unwrap(), oracle_precision_at_n(&preds, n))?;
    }
    track("AUC", pr_curve_and_auc(&preds).unwrap().1, oracle_auc(&preds))?;
    for t in [50, 100, 200] {
        for k in [1, 2, 3, 5] {
            track(
                &format!("Hits@{k}<{t}"),
                hits_at_k_macro(&preds, &counts, t, k).unwrap(),
                oracle_hits_at_k(&preds, &counts, t, k),
            )?;
        }
    }
    let bins = 10;
    let diag = attention_diagnostics(&preds, bins).unwrap();
    for (d, (acc, oracle_counts)) in diag.iter().zip(oracle_attention(&preds, bins)) {
        track(&format!("attention accuracy l{}", d.level), d.accuracy(), acc)?;
        let got: Vec<usize> = d.bins.iter().map(|b| b.count).collect();
        if got != oracle_counts {
            return Err(format!("histogram l{}: {got:?} vs oracle {oracle_counts:?}", d.level));
        }
    }
    Ok(worst)
}

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        word_dim: 4,
        position_dim: 2,
        channels: 4,
        window: 3,
        max_dist: 5,
        m_levels: 2,
        dropout_p: 0.0,
        seed: 1,
        ..TrainConfig::default()
    }
}

pub const TINY_VOCAB: usize = 12;

pub fn tiny_model(seed: u64, level_sizes: Vec<usize>) -> Model {
    let cfg = TrainConfig {
        m_levels: level_sizes.len() - 1,
        ..tiny_train_config()
    };
    Model::init(cfg.model_config(level_sizes), TINY_VOCAB, seed).unwrap()
}

pub fn sentence_strategy() -> impl Strategy<Value = SentenceInput> {
    (3usize..9)
        .prop_flat_map(|n| (prop::collection::vec(1..TINY_VOCAB, n), 0..n, 0..n))
        .prop_filter("distinct entities", |(_, h, t)| h != t)
        .prop_map(|(tokens, head, tail)| SentenceInput { tokens, head, tail })
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn prop_softmax_normalized(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&prop::collection::vec(-60.0f64..60.0, 1..40), |x| {
            let a = Array::vector(x.clone()).unwrap();
            let s = softmax(&a).unwrap();
            let store = cora::numerics::ParameterStore::new();
            let mut g = Graph::new(&store);
            let v = g.constant(a);
            let v = g.softmax(v).unwrap();
            for out in [s.data(), g.value(v).data()] {
                let total: f64 = out.iter().sum();
                ensure((total - 1.0).abs() < 1e-12, || format!("sum {total} for {x:?}"))?;
                ensure(out.iter().all(|p| (0.0..=1.0).contains(p)), || format!("out of range for {x:?}"))?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// The entity gate lies in `[0, 1]` and the fused embedding is the gated
/// mix of its two branches, so every entry lies between them.
pub fn prop_gate_range(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(any::<u64>(), sentence_strategy(), 0.01f64..20.0), |(seed, s, lambda)| {
            let cfg = TrainConfig {
                lambda,
                ..tiny_train_config()
            };
            let model = Model::init(cfg.model_config(vec![5, 3, 2]), TINY_VOCAB, seed).unwrap();
            let emb = &model.embedding;
            let (w1, b1) = emb.fusion.entity_gate.unwrap();
            let mut g = Graph::new(&model.store);
            let x = cora::embedding::embed_sentence(&mut g, emb, &s).unwrap();
            let inputs = gate_inputs(&mut g, emb, &s).unwrap();
            let w1 = g.param(w1);
            let b1 = g.param(b1);
            let pre = g.matmul(w1, inputs.entity_aware).unwrap();
            let pre = g.add_bias(pre, b1).unwrap();
            let pre = g.affine(pre, lambda, 0.0);
            let gate = g.sigmoid(pre);
            let w2 = g.param(emb.fusion.w_pos);
            let b2 = g.param(emb.fusion.b_pos);
            let pos = g.matmul(w2, inputs.position_aware).unwrap();
            let pos = g.add_bias(pos, b2).unwrap();
            let pos = g.tanh(pos);
            let (a, xe, xp, xv) = (g.value(gate), g.value(inputs.entity_aware), g.value(pos), g.value(x));
            for i in 0..a.len() {
                let (ai, e, p, v) = (a.data()[i], xe.data()[i], xp.data()[i], xv.data()[i]);
                ensure((0.0..=1.0).contains(&ai), || format!("gate {ai}"))?;
                let lo = e.min(p) - 1e-12;
                let hi = e.max(p) + 1e-12;
                ensure(v >= lo && v <= hi, || format!("fused {v} outside [{e}, {p}]"))?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Pool weights form a distribution and the pooled vector lies inside the
/// per-row range of the pooled columns.
pub fn prop_convex_pooling(cases: u32) -> Result<(), String> {
    let strategy = (1usize..6, 1usize..7).prop_flat_map(|(d, m)| {
        (
            prop::collection::vec(-5.0f64..5.0, d * m),
            prop::collection::vec(-3.0f64..3.0, d),
            Just((d, m)),
        )
    });
    runner(cases)
        .run(&strategy, |(u, w, (d, m))| {
            let store = cora::numerics::ParameterStore::new();
            let mut g = Graph::new(&store);
            let uu = g.constant(Array::matrix(d, m, u.clone()).unwrap());
            let ww = g.constant(Array::vector(w).unwrap());
            let (b, weights) = attention_pool(&mut g, uu, Some(ww)).unwrap();
            let weights = g.value(weights).data();
            let total: f64 = weights.iter().sum();
            ensure((total - 1.0).abs() < 1e-12, || format!("weights sum {total}"))?;
            ensure(weights.iter().all(|&x| x >= 0.0), || "negative weight".into())?;
            for (r, &v) in g.value(b).data().iter().enumerate() {
                let row = &u[r * m..(r + 1) * m];
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min) - 1e-12;
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1e-12;
                ensure(v >= lo && v <= hi, || format!("row {r}: {v} outside [{lo}, {hi}]"))?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Reordering the sentences of a bag leaves its relation distribution
/// unchanged up to summation order.
pub fn prop_permutation_invariance(cases: u32) -> Result<(), String> {
    let strategy = (any::<u64>(), prop::collection::vec(sentence_strategy(), 1..5))
        .prop_flat_map(|(seed, bag)| (Just(seed), Just(bag.clone()), Just(bag).prop_shuffle()));
    runner(cases)
        .run(&strategy, |(seed, bag, shuffled)| {
            let model = tiny_model(seed, vec![5, 3, 2]);
            let a = model.predict(&bag).unwrap().probs;
            let b = model.predict(&shuffled).unwrap().probs;
            for (x, y) in a.iter().zip(&b) {
                ensure((x - y).abs() < 1e-12, || format!("{a:?} vs {b:?}"))?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Each coarser label is a strict path prefix of the finer one, and the
/// hierarchy's ids agree with its names.
pub fn prop_hierarchy_prefix(cases: u32) -> Result<(), String> {
    let path = prop::collection::vec("[a-z]{1,4}", 3..6).prop_map(|parts| format!("/{}", parts.join("/")));
    let strategy = (prop::collection::vec(path, 1..12), 0usize..3);
    runner(cases)
        .run(&strategy, |(relations, depth)| {
            for r in &relations {
                let chain = derive_hierarchy(r, depth).unwrap();
                ensure(chain[0] == *r, || format!("level 0 of {r} is {}", chain[0]))?;
                for w in chain.windows(2) {
                    let (fine, coarse) = (&w[0], &w[1]);
                    let strict = fine.len() > coarse.len()
                        && fine.starts_with(coarse.as_str())
                        && fine.as_bytes()[coarse.len()] == b'/';
                    ensure(strict, || format!("{coarse} is not a strict path prefix of {fine}"))?;
                }
            }
            let h = RelationHierarchy::from_relations(
                std::iter::once(NA).chain(relations.iter().map(String::as_str)),
                depth,
            )
            .unwrap();
            for r in &relations {
                let labels = h.labels(r).unwrap();
                let chain = derive_hierarchy(r, depth).unwrap();
                for (l, &id) in labels.iter().enumerate() {
                    ensure(h.name(l, id) == chain[l], || format!("level {l} of {r}"))?;
                    if l > 0 {
                        ensure(h.ancestor(l, labels[0]) == id, || format!("ancestor {l} of {r}"))?;
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub type Suite = (&'static str, fn(u32) -> Result<(), String>);

pub const INVARIANT_SUITES: [Suite; 5] = [
    ("softmax normalization", prop_softmax_normalized),
    ("gate range", prop_gate_range),
    ("convex-combination pooling", prop_convex_pooling),
    ("permutation invariance", prop_permutation_invariance),
    ("hierarchy prefix consistency", prop_hierarchy_prefix),
];
