//! Central finite-difference gradients, used as the oracle for the analytic
//! backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::mlp::{Activation, MlpGrads, MlpParams};
use crate::{Error, Result};

/// `(f(θ + h e_j) − f(θ − h e_j)) / 2h` for every parameter `j`.
pub fn finite_difference_grad<F>(f: F, params: &MlpParams, h: f64) -> Result<MlpGrads>
where
    F: Fn(&MlpParams) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {h}")));
    }
    let theta = params.flatten();
    let mut probe = theta.clone();
    let mut grad = vec![0.0; theta.len()];
    for j in 0..theta.len() {
        probe[j] = theta[j] + h;
        let plus = f(&params.unflatten_from(&probe)?)?;
        probe[j] = theta[j] - h;
        let minus = f(&params.unflatten_from(&probe)?)?;
        probe[j] = theta[j];
        grad[j] = (plus - minus) / (2.0 * h);
    }
    MlpGrads::from_flat_like(params, &grad)
}

/// Mean squared error `Σ (net(x) − y)² / n_elements`.
pub fn mse_loss(params: &MlpParams, batch: &Matrix, targets: &Matrix) -> Result<f64> {
    let out = params.forward(batch)?;
    let diff = out.sub(targets)?;
    Ok(diff.as_slice().iter().map(|d| d * d).sum::<f64>() / diff.as_slice().len() as f64)
}

/// Analytic gradient of [`mse_loss`].
pub fn mse_loss_grad(params: &MlpParams, batch: &Matrix, targets: &Matrix) -> Result<MlpGrads> {
    let out = params.forward(batch)?;
    let n = out.as_slice().len() as f64;
    let upstream = out.sub(targets)?.scale(2.0 / n);
    Ok(params.backward(batch, &upstream)?.0)
}

/// Largest per-parameter `|analytic − fd| / (|fd| + floor)`.
pub fn max_relative_error(analytic: &MlpGrads, fd: &MlpGrads, floor: f64) -> f64 {
    analytic
        .flatten()
        .iter()
        .zip(fd.flatten())
        .map(|(a, f)| (a - f).abs() / (f.abs() + floor))
        .fold(0.0, f64::max)
}

/// Denominator floor of the per-parameter relative error in the suite, so
/// parameters with vanishing gradients are compared absolutely.
pub const SUITE_FLOOR: f64 = 1e-6;
/// Central-difference step used by the suite.
pub const SUITE_STEP: f64 = 1e-5;

/// Worst-case comparison for one random network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCase {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub max_relative_error: f64,
}

/// Random smooth MLPs with random MSE targets; each case compares the
/// analytic gradient against central differences on every parameter.
pub fn random_mlp_suite(seed: u64, cases: usize) -> Result<Vec<GradcheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases);
    for c in 0..cases {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(1..=4)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(2..=6));
        }
        sizes.push(rng.gen_range(1..=3));
        let activation = if c % 2 == 0 { Activation::Tanh } else { Activation::Sine };
        let params = MlpParams::init_with_rng(&sizes, activation, &mut rng)?;
        let n = rng.gen_range(1..=5);
        let batch = random_matrix(n, sizes[0], &mut rng)?;
        let targets = random_matrix(n, *sizes.last().unwrap(), &mut rng)?;
        let analytic = mse_loss_grad(&params, &batch, &targets)?;
        let fd = finite_difference_grad(|p| mse_loss(p, &batch, &targets), &params, SUITE_STEP)?;
        out.push(GradcheckCase {
            layer_sizes: sizes,
            activation,
            max_relative_error: max_relative_error(&analytic, &fd, SUITE_FLOOR),
        });
    }
    Ok(out)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_gradient() {
        let p = MlpParams::init(&[2, 3, 1], Activation::Tanh, 1).unwrap();
        let g = finite_difference_grad(|_| Ok(4.0), &p, 1e-4).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn half_squared_norm_recovers_parameters() {
        let p = MlpParams::init(&[2, 3, 2], Activation::Tanh, 2).unwrap();
        let f = |q: &MlpParams| Ok(q.flatten().iter().map(|v| v * v).sum::<f64>() / 2.0);
        let g = finite_difference_grad(f, &p, 1e-4).unwrap();
        for (a, b) in g.flatten().iter().zip(p.flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = MlpParams::init(&[1, 2, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(finite_difference_grad(|_| Ok(0.0), &p, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = random_mlp_suite(3, 6).unwrap();
        assert_eq!(a, random_mlp_suite(3, 6).unwrap());
        for case in &a {
            assert!(case.max_relative_error < 1e-6, "{case:?}");
        }
    }
}
