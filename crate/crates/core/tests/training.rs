//! Whole-trainer behaviour: the one-operator degeneracy, per-operator data
//! isolation and convergence on a learnable synthetic problem.

mod support;

use modno::autodiff::OptimizerKind;
use modno::trainer::{train_modno, BatchSize, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::training::*;

#[test]
fn single_operator_run_matches_single_don() {
    let gap = degeneracy_gap(DEGENERACY_EPOCHS);
    assert!(gap < DEGENERACY_TOL, "trajectories differ by {gap:e}");
}

#[test]
fn perturbing_one_shard_leaves_other_trunks_alone() {
    for j in 0..3 {
        let o = isolation_outcome(j);
        assert!(o.others_identical, "shard {j} leaked into another trunk");
        assert!(o.own_trunk_changed, "shard {j} did not affect its own trunk");
        assert!(o.branch_changed, "shard {j} did not affect the branch");
    }
}

/// Plain SGD: block-alternating Adam on this small bilinear problem is
/// erratic at any step size that makes progress in a short budget.
#[test]
fn learns_a_linear_operator_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let train: Vec<_> = (0..2).map(|i| synthetic_shard(i, 64, &mut rng)).collect();
    let test: Vec<_> = (0..2).map(|i| synthetic_shard(i, 32, &mut rng)).collect();
    let model = synthetic_model(2, 3);
    let before: Vec<f64> = (0..2).map(|i| model.relative_error(i, &test[i]).unwrap()).collect();
    let cfg = TrainConfig {
        epochs: 2000,
        trunk_lr: 0.05,
        branch_lr: 0.05,
        shared_data_fraction: 0.8,
        minibatch_size: BatchSize::Functions(16),
        optimizer: OptimizerKind::Sgd,
        rng_seed: 1,
        ..TrainConfig::default()
    };
    let (trained, hist) = train_modno(model, &train, &cfg).unwrap();
    let losses = hist.global_losses();
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last < 0.05 * first, "loss {first} -> {last}");
    for i in 0..2 {
        let after = trained.relative_error(i, &test[i]).unwrap();
        assert!(after < 0.5 * before[i], "operator {i}: {} -> {after}", before[i]);
    }
}

#[test]
fn training_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let train: Vec<_> = (0..3).map(|i| synthetic_shard(i, 20, &mut rng)).collect();
    let cfg = TrainConfig {
        epochs: 5,
        shared_data_fraction: 0.7,
        minibatch_size: BatchSize::Functions(6),
        rng_seed: 8,
        ..TrainConfig::default()
    };
    let (a, ha) = train_modno(synthetic_model(3, 4), &train, &cfg).unwrap();
    let (b, hb) = train_modno(synthetic_model(3, 4), &train, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha.global_losses(), hb.global_losses());
}
