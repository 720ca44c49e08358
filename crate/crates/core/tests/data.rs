use cora::data::{gen_synthetic, parse_corpus, write_corpus, CorpusFormat, LoadOptions, RelationHierarchy, SynthConfig, NA};

#[test]
fn nyt_inventory_level_sizes() {
    let text = include_str!("fixtures/nyt_relations.txt");
    let h = RelationHierarchy::from_relations(text.lines().map(str::trim).filter(|l| !l.is_empty()), 2).unwrap();
    assert_eq!(h.level_sizes(), vec![53, 36, 9]);
    assert_eq!(h.name(0, 0), NA);
    assert_eq!(h.name(1, 0), NA);
}

#[test]
fn mislabeled_fraction_tracks_noise_rate() {
    let c = gen_synthetic(&SynthConfig {
        num_bags: 5500,
        num_entities: 2000,
        na_fraction: 0.0,
        noise_rate: 0.3,
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    let entries: Vec<_> = c.train.manifest.iter().chain(&c.test.manifest).collect();
    assert!(entries.len() >= 10_000, "{} sentences", entries.len());
    let flagged = entries.iter().filter(|m| m.mislabeled).count();
    let rate = flagged as f64 / entries.len() as f64;
    assert!((rate - 0.3).abs() <= 0.02, "rate {rate}");
    for m in &entries {
        assert_eq!(m.mislabeled, m.true_relation != m.bag_label);
    }
}

fn relation_bag_counts(cfg: &SynthConfig) -> Vec<usize> {
    let c = gen_synthetic(cfg).unwrap();
    let mut counts = vec![0; c.relations.len()];
    for split in [&c.train, &c.test] {
        let mut last = None;
        for (r, m) in split.records.iter().zip(&split.manifest) {
            let key = (&r.head_id, &r.tail_id);
            if last != Some(key) {
                counts[c.relations.iter().position(|x| *x == m.bag_label).unwrap()] += 1;
            }
            last = Some(key);
        }
    }
    counts[1..].to_vec()
}

#[test]
fn zero_exponent_gives_uniform_relations() {
    let counts = relation_bag_counts(&SynthConfig {
        num_bags: 16_000,
        num_entities: 3000,
        na_fraction: 0.0,
        zipf_exponent: 0.0,
        seed: 5,
        ..SynthConfig::default()
    });
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 7 degrees of freedom, upper 0.1% point
    assert!(chi2 < 24.32, "chi2 {chi2} for {counts:?}");
}

#[test]
fn long_tail_share_grows_with_exponent() {
    let mut shares = Vec::new();
    for exponent in [0.0, 1.2, 2.5] {
        let c = gen_synthetic(&SynthConfig {
            zipf_exponent: exponent,
            num_entities: 600,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let counts = c.train_counts();
        let rare = counts.iter().filter(|(r, &n)| *r != NA && n < 50).count();
        shares.push(rare as f64 / (counts.len() - 1) as f64);
    }
    assert!(shares.windows(2).all(|w| w[0] <= w[1]), "{shares:?}");
    assert!(shares[2] > shares[0], "{shares:?}");
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let c = gen_synthetic(&SynthConfig {
        num_bags: 100,
        num_entities: 300,
        ..SynthConfig::default()
    })
    .unwrap();
    let records = c.train.records;
    let mut jsonl = Vec::new();
    write_corpus(&mut jsonl, &records, CorpusFormat::Jsonl).unwrap();
    let back = parse_corpus(jsonl.as_slice(), CorpusFormat::Jsonl, &LoadOptions::default()).unwrap();
    let mut text = Vec::new();
    write_corpus(&mut text, &back.records, CorpusFormat::NytText).unwrap();
    let again = parse_corpus(text.as_slice(), CorpusFormat::NytText, &LoadOptions::default()).unwrap();
    assert_eq!(again.records, records);
    assert!(again.rejected.is_empty());
}
