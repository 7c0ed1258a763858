//! Trainer-level checks on small synthetic problems.

use modno::autodiff::{Activation, Matrix, MlpParams, OptimizerKind};
use modno::models::{DonModel, FunctionBatch, ModnoModel};
use modno::trainer::{train_single_don, BatchSize, ModnoTrainer, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEGENERACY_TOL: f64 = 1e-12;
pub const DEGENERACY_EPOCHS: usize = 50;

pub const N_SENSORS: usize = 8;
pub const BASIS: usize = 6;

/// Random smooth inputs `u(x) = a sin 2πx + b cos 2πx + c` sampled on the
/// sensors, and targets `a cos 2πy − b sin 2πy + c` for operator index 0,
/// shifted and scaled per operator so the trunks have distinct jobs.
pub fn synthetic_shard(op: usize, n: usize, rng: &mut ChaCha8Rng) -> FunctionBatch {
    use std::f64::consts::PI;
    let ys: Vec<f64> = (0..10).map(|j| (j as f64 + 0.5) / 10.0).collect();
    let mut inputs = Vec::with_capacity(n * N_SENSORS);
    let mut targets = Vec::with_capacity(n * ys.len());
    for _ in 0..n {
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5));
        for s in 0..N_SENSORS {
            let x = s as f64 / N_SENSORS as f64;
            inputs.push(a * (2.0 * PI * x).sin() + b * (2.0 * PI * x).cos() + c);
        }
        let scale = 1.0 + op as f64;
        for &y in &ys {
            targets.push(scale * (a * (2.0 * PI * y).cos() - b * (2.0 * PI * y).sin()) + c);
        }
    }
    FunctionBatch::shared(
        Matrix::from_vec(n, N_SENSORS, inputs).unwrap(),
        Matrix::column_vector(&ys),
        Matrix::from_vec(n, ys.len(), targets).unwrap(),
    )
    .unwrap()
}

pub fn synthetic_model(n_op: usize, seed: u64) -> ModnoModel {
    let branch = MlpParams::init(&[N_SENSORS, 16, BASIS], Activation::Tanh, seed).unwrap();
    let trunks = (0..n_op)
        .map(|i| MlpParams::init(&[1, 16, BASIS], Activation::Tanh, seed + 1 + i as u64).unwrap())
        .collect();
    ModnoModel::new(branch, trunks).unwrap()
}

fn flat(m: &DonModel) -> Vec<f64> {
    let mut v = m.branch.flatten();
    v.extend(m.trunk.flatten());
    v
}

/// Largest parameter or loss difference between a one-operator shared-branch
/// run (q = 1, SGD, full batch) and a single DeepONet, epoch by epoch.
pub fn degeneracy_gap(epochs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shard = synthetic_shard(0, 24, &mut rng);
    let model = synthetic_model(1, 41);
    let cfg = TrainConfig {
        epochs,
        trunk_lr: 0.05,
        branch_lr: 0.05,
        shared_data_fraction: 1.0,
        minibatch_size: BatchSize::Full,
        optimizer: OptimizerKind::Sgd,
        rng_seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = ModnoTrainer::new(model.clone(), vec![shard.clone()], cfg.clone()).unwrap();
    let mut gap: f64 = 0.0;
    for e in 1..=epochs {
        let modno_loss = trainer.run_epoch().unwrap().global_loss;
        let single_cfg = TrainConfig { epochs: e, ..cfg.clone() };
        let (single, hist) = train_single_don(model.operator_model(0).unwrap(), &shard, &single_cfg, None).unwrap();
        let reassembled = trainer.model().operator_model(0).unwrap();
        for (a, b) in flat(&reassembled).iter().zip(flat(&single)) {
            gap = gap.max((a - b).abs());
        }
        gap = gap.max((modno_loss - hist.last().unwrap().global_loss).abs());
    }
    gap
}

/// Result of perturbing one operator's data before a single trunk and
/// branch step.
pub struct IsolationOutcome {
    /// Whether every other operator's trunk update was bit-identical.
    pub others_identical: bool,
    /// Whether the perturbed operator's own trunk update changed.
    pub own_trunk_changed: bool,
    /// Whether the shared branch update changed.
    pub branch_changed: bool,
}

pub fn isolation_outcome(j: usize) -> IsolationOutcome {
    let n_op = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shards: Vec<FunctionBatch> = (0..n_op).map(|i| synthetic_shard(i, 16, &mut rng)).collect();
    let cfg = TrainConfig {
        epochs: 1,
        trunk_lr: 1e-2,
        branch_lr: 1e-2,
        shared_data_fraction: 0.75,
        minibatch_size: BatchSize::Functions(8),
        optimizer: OptimizerKind::Adam,
        rng_seed: 13,
        ..TrainConfig::default()
    };
    let mut a = ModnoTrainer::new(synthetic_model(n_op, 77), shards.clone(), cfg).unwrap();
    let mut b = a.clone();
    let mut other = ChaCha8Rng::seed_from_u64(1234);
    b.replace_shard(j, synthetic_shard(j, 16, &mut other)).unwrap();

    let plan_a = a.plan_epoch().unwrap();
    let plan_b = b.plan_epoch().unwrap();
    assert_eq!(plan_a, plan_b, "the epoch plan must not depend on data values");
    a.trunk_phase(&plan_a, 0).unwrap();
    b.trunk_phase(&plan_b, 0).unwrap();
    let others_identical = (0..n_op)
        .filter(|&i| i != j)
        .all(|i| a.model().trunks[i] == b.model().trunks[i]);
    let own_trunk_changed = a.model().trunks[j] != b.model().trunks[j];
    a.branch_phase(&plan_a, 0).unwrap();
    b.branch_phase(&plan_b, 0).unwrap();
    IsolationOutcome {
        others_identical,
        own_trunk_changed,
        branch_changed: a.model().branch != b.model().branch,
    }
}
