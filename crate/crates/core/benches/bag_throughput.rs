use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use cora::config::TrainConfig;
use cora::data::{build_bags, gen_synthetic, Grouping, SynthConfig};
use cora::embedding::Vocab;
use cora::metrics::Retention;
use cora::model::{BagInput, Model};
use cora::parallel::Parallelism;
use cora::pipeline::{bag_inputs, predict_bags, Dataset};
use cora::training::{joint_step, AdamState};

const BATCH: usize = 32;

struct Fixture {
    data: Dataset,
    vocab: Vocab,
    bags: Vec<cora::data::Bag>,
    inputs: Vec<BagInput>,
    model: Model,
    cfg: TrainConfig,
}

fn fixture() -> Fixture {
    let corpus = gen_synthetic(&SynthConfig {
        num_bags: 400,
        num_entities: 600,
        ..SynthConfig::default()
    })
    .unwrap();
    let data = Dataset {
        relations: corpus.relations,
        train: corpus.train.records,
        test: corpus.test.records,
    };
    let cfg = TrainConfig {
        word_dim: 16,
        position_dim: 4,
        channels: 16,
        max_dist: 15,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let hierarchy = data.hierarchy(cfg.m_levels).unwrap();
    let vocab = Vocab::build(data.train.iter().flat_map(|r| r.tokens.iter().map(String::as_str)));
    let bags = build_bags(&data.train, Grouping::PairRelation, &hierarchy);
    let inputs = bag_inputs(&data.train, &bags, &vocab);
    let model = Model::init(cfg.model_config(hierarchy.level_sizes()), vocab.len(), 1).unwrap();
    Fixture {
        data,
        vocab,
        bags,
        inputs,
        model,
        cfg,
    }
}

fn training_step(c: &mut Criterion) {
    let f = fixture();
    let batch: Vec<&BagInput> = f.inputs.iter().take(BATCH).collect();
    let mut group = c.benchmark_group("joint_step");
    group.throughput(Throughput::Elements(batch.len() as u64));
    for mode in [Parallelism::Sequential, Parallelism::Rayon] {
        let cfg = TrainConfig {
            parallelism: mode,
            ..f.cfg.clone()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &cfg, |b, cfg| {
            let mut model = f.model.clone();
            let mut adam = AdamState::new(&model.store);
            b.iter(|| joint_step(&mut model, &mut adam, &batch, cfg).unwrap());
        });
    }
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let f = fixture();
    let mut group = c.benchmark_group("predict_bags");
    group.throughput(Throughput::Elements(f.bags.len() as u64));
    for mode in [Parallelism::Sequential, Parallelism::Rayon] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| predict_bags(&f.model, &f.vocab, &f.data.train, &f.bags, Retention::All, 1, mode).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, training_step, prediction);
criterion_main!(benches);
