//! Training the reference system on copy tasks.

use std::time::Instant;

use inmt_al::model::{NmtSystem, SystemConfig, TrainConfig, TranslationModel};
use inmt_al::synthetic::copy_corpus;

fn copy_config(epochs: usize, budget: f64) -> SystemConfig {
    SystemConfig {
        num_merges: 200,
        dims: 24,
        max_target_len: 16,
        train: TrainConfig {
            epochs,
            learning_rate: 0.01,
            patience: 4,
            time_budget_secs: Some(budget),
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn copy_task_is_reproduced_on_training_samples() {
    let data = copy_corpus(500, 1);
    let (sys, report) = NmtSystem::train_initial(&copy_config(40, 120.0), &data, &data[..100]).unwrap();
    let exact = data
        .iter()
        .filter(|p| sys.translate(p.source.surface(), 4).unwrap().surface == p.target.surface())
        .count();
    let rate = exact as f64 / data.len() as f64;
    assert!(rate >= 0.95, "reproduced {exact}/500 after {report:?}");
}

#[test]
fn copy_task_reaches_high_dev_bleu_within_budget() {
    let started = Instant::now();
    // same seed, so the same word list; the last 100 pairs are held out
    let all = copy_corpus(2100, 2);
    let (data, dev) = all.split_at(2000);
    let budget = 180.0;
    let (sys, report) = NmtSystem::train_initial(&copy_config(30, budget), data, dev).unwrap();
    let bleu = sys.bleu(dev, 1).unwrap();
    assert!(bleu >= 0.9, "dev BLEU {bleu} after {report:?}");
    assert_eq!(report.best_dev, Some(bleu));
    assert!(started.elapsed().as_secs_f64() < budget + 60.0);
}

#[test]
fn saved_system_translates_identically() {
    let data = copy_corpus(200, 4);
    let (sys, _) = NmtSystem::train_initial(&copy_config(3, 60.0), &data, &data[..20]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sys.save(dir.path()).unwrap();
    let back = NmtSystem::load(dir.path()).unwrap();
    for p in &data[..30] {
        let a = sys.translate(p.source.surface(), 3).unwrap();
        let b = back.translate(p.source.surface(), 3).unwrap();
        assert_eq!(a, b);
    }
}
