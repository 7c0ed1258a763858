//! Mean-of-training-solutions predictor.

use super::shard::DatasetShard;
use super::spectral::FourierInterpolant;
use crate::bench::metrics::relative_l2;
use crate::{Error, Result};

/// Pointwise mean of the training targets, carried to the test mesh by
/// trigonometric interpolation in `x`. With a time axis, each test time uses
/// the nearest training time.
pub fn mean_baseline_prediction(train: &DatasetShard, test: &DatasetShard) -> Result<Vec<f64>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::config("mean baseline needs non-empty train and test shards"));
    }
    let length = train.operator.grid.length;
    if (test.operator.grid.length - length).abs() > 1e-12 {
        return Err(Error::config("train and test shards live on different domains"));
    }
    if train.mesh.query_dim() != test.mesh.query_dim() {
        return Err(Error::config("train and test meshes have different dimensions"));
    }
    let mean: Vec<f64> = train
        .targets
        .column_sums()
        .into_iter()
        .map(|s| s / train.len() as f64)
        .collect();
    let m = train.mesh.n_points;
    let shift = train.mesh.offset * length / m as f64;
    let train_times = train.mesh.times.clone().unwrap_or_else(|| vec![train.operator.pde.final_time]);
    let test_times = test.mesh.times.clone().unwrap_or_else(|| vec![test.operator.pde.final_time]);
    let interps: Vec<FourierInterpolant> = (0..train_times.len())
        .map(|a| FourierInterpolant::new(&mean[a * m..(a + 1) * m], length))
        .collect();
    let xs: Vec<f64> = test.mesh.xs(length).iter().map(|x| x - shift).collect();
    let mut pred = Vec::with_capacity(test.targets.cols());
    for &t in &test_times {
        let nearest = train_times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap();
        pred.extend(interps[nearest].eval_many(&xs));
    }
    Ok(pred)
}

/// Mean per-sample relative L2 error of the mean predictor on `test`.
pub fn mean_baseline_error(train: &DatasetShard, test: &DatasetShard) -> Result<f64> {
    let pred = mean_baseline_prediction(train, test)?;
    let mut total = 0.0;
    for r in 0..test.len() {
        total += relative_l2(&pred, test.targets.row(r))?;
    }
    Ok(total / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::datagen::grid::Grid1D;
    use crate::datagen::ic::InitialConditionSpec;
    use crate::datagen::pde::{Equation, PdeSpec};
    use crate::datagen::shard::{OperatorSpec, QueryMesh, Split};

    fn shard(targets: Vec<Vec<f64>>, offset: f64, split: Split) -> DatasetShard {
        let n = targets[0].len();
        let mesh = QueryMesh::spatial(n, offset);
        DatasetShard {
            operator_id: 0,
            operator: OperatorSpec {
                pde: PdeSpec::new(Equation::Advection, 0.1),
                ic: InitialConditionSpec::gaussian_mix_b(),
                grid: Grid1D::new(1.0, 16).unwrap(),
                ic_offset: 0.0,
            },
            sensors: vec![0],
            points: mesh.points(1.0),
            mesh,
            split,
            dt: 1e-3,
            inputs: Matrix::zeros(targets.len(), 1),
            targets: Matrix::from_rows(&targets).unwrap(),
        }
    }

    #[test]
    fn test_equal_to_mean_gives_zero() {
        let train = shard(vec![vec![1.0; 8], vec![3.0; 8]], 0.0, Split::Train);
        let test = shard(vec![vec![2.0; 8], vec![2.0; 8]], 0.5, Split::Test);
        assert!(mean_baseline_error(&train, &test).unwrap() < 1e-12);
    }

    #[test]
    fn doubled_single_sample_gives_one_half() {
        let row: Vec<f64> = (0..8).map(|j| 1.0 + (j as f64 * std::f64::consts::PI / 4.0).sin()).collect();
        let train = shard(vec![row.clone()], 0.0, Split::Train);
        let test = shard(vec![row.iter().map(|v| 2.0 * v).collect()], 0.0, Split::Test);
        assert!((mean_baseline_error(&train, &test).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_shards_are_rejected() {
        let train = shard(vec![vec![1.0; 8]], 0.0, Split::Train);
        let mut empty = train.clone();
        empty.targets = Matrix::zeros(0, 8);
        empty.inputs = Matrix::zeros(0, 1);
        assert!(mean_baseline_error(&train, &empty).is_err());
        assert!(mean_baseline_error(&empty, &train).is_err());
    }
}
