#![allow(dead_code)]

use std::path::Path;

use modno::bench::config::exp3;
use modno::bench::ExperimentConfig;
use modno::trainer::BatchSize;

/// A three-operator experiment small enough to train in about a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = exp3();
    cfg.name = "tiny".into();
    cfg.n_train = 12;
    cfg.n_test = 4;
    cfg.n_sensors = 16;
    cfg.network.basis = 4;
    cfg.network.branch_hidden = vec![8];
    cfg.network.trunk_hidden = vec![8];
    cfg.network.fourier_features = 2;
    cfg.train.epochs = 4;
    cfg.train.minibatch_size = BatchSize::Functions(4);
    cfg.q_values = vec![1.0, 0.5];
    cfg
}

pub fn write_tiny(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(&path, tiny_config().to_json().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}
