mod common;

use std::time::Instant;

use common::tiny_train_config;
use cora::config::TrainConfig;
use cora::numerics::GradCheckConfig;
use cora::pipeline::grad_check_toy;
use cora::relattn::Architecture;

fn check(cfg: &TrainConfig) {
    let report = grad_check_toy(cfg, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{report}");
    assert!(report.max_rel_error() < 1e-3);
}

#[test]
fn joint_objective_matches_finite_differences() {
    let start = Instant::now();
    check(&tiny_train_config());
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn ablations_and_depths_match_finite_differences() {
    let base = tiny_train_config();
    let variants = [
        TrainConfig { no_aux_obj: true, ..base.clone() },
        TrainConfig { no_sent2rel: true, ..base.clone() },
        TrainConfig { no_attention_pool: true, ..base.clone() },
        TrainConfig { no_entity_emb: true, ..base.clone() },
        TrainConfig { m_levels: 1, ..base.clone() },
        TrainConfig { m_levels: 0, ..base.clone() },
        TrainConfig { m_levels: 0, architecture: Architecture::Base, ..base.clone() },
    ];
    for cfg in &variants {
        check(cfg);
    }
}
