use std::sync::OnceLock;

use inmt_al::corpus::ParallelPair;
use inmt_al::model::{NmtSystem, SystemConfig, TrainConfig};
use inmt_al::synthetic::ToyGrammar;

pub struct Fixture {
    pub system: NmtSystem,
    pub stream: Vec<ParallelPair>,
}

/// Small trained system and a shifted stream; trained once per test binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let g = ToyGrammar::new(2);
        let train = g.corpus(400, 0.02, 1);
        let cfg = SystemConfig {
            num_merges: 200,
            dims: 16,
            max_target_len: 24,
            train: TrainConfig {
                epochs: 6,
                learning_rate: 0.01,
                patience: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let (system, _) = NmtSystem::train_initial(&cfg, &train, &train[..40]).unwrap();
        Fixture {
            system,
            stream: g.corpus(45, 0.5, 2),
        }
    })
}

pub fn sources(f: &Fixture) -> Vec<String> {
    f.stream.iter().map(|p| p.source.surface().to_string()).collect()
}

pub fn references(f: &Fixture) -> Vec<String> {
    f.stream.iter().map(|p| p.target.surface().to_string()).collect()
}
