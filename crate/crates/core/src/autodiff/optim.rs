use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Optimizer state for one network. Adam moments are allocated lazily on the
/// first step so a fresh state does not need the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    kind: OptimizerKind,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimState {
            kind,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn sgd() -> Self {
        Self::new(OptimizerKind::Sgd)
    }

    pub fn adam() -> Self {
        Self::new(OptimizerKind::Adam)
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Update `params` in place.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &MlpGrads, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if !grads.is_congruent(params) {
            return Err(Error::shape("gradients are not congruent with parameters"));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.weights.iter_mut().zip(&grads.weights) {
                    for (p, d) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *p -= lr * d;
                    }
                }
                for (b, g) in params.biases.iter_mut().zip(&grads.biases) {
                    for (p, d) in b.iter_mut().zip(g) {
                        *p -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let n = params.num_params();
                if self.first_moment.len() != n {
                    if self.step != 1 {
                        return Err(Error::shape("adam moments do not match parameter count"));
                    }
                    self.first_moment = vec![0.0; n];
                    self.second_moment = vec![0.0; n];
                }
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let mut k = 0;
                let mut update = |p: &mut f64, g: f64| {
                    let m = &mut self.first_moment[k];
                    let v = &mut self.second_moment[k];
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    k += 1;
                };
                for (w, (gw, (b, gb))) in params
                    .weights
                    .iter_mut()
                    .zip(grads.weights.iter().zip(params.biases.iter_mut().zip(&grads.biases)))
                {
                    for (p, &d) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                        update(p, d);
                    }
                    for (p, &d) in b.iter_mut().zip(gb) {
                        update(p, d);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Pure form of [`OptimState::apply`]: returns updated parameters and state.
/// A learning rate of zero is rejected here.
pub fn optimizer_step(
    params: &MlpParams,
    grads: &MlpGrads,
    state: &OptimState,
    lr: f64,
) -> Result<(MlpParams, OptimState)> {
    if !(lr > 0.0) {
        return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
    }
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p, grads, lr)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, Matrix};

    fn unit_params(value: f64) -> MlpParams {
        MlpParams::from_parts(
            vec![Matrix::filled(1, 1, value), Matrix::filled(1, 1, value)],
            vec![vec![value], vec![value]],
            Activation::Tanh,
        )
        .unwrap()
    }

    fn uniform_grads(p: &MlpParams, g: f64) -> MlpGrads {
        let n = p.num_params();
        MlpGrads::from_flat_like(p, &vec![g; n]).unwrap()
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let p = MlpParams::init(&[2, 4, 1], Activation::Tanh, 3).unwrap();
        let (q, s) = optimizer_step(&p, &p.zero_grads(), &OptimState::sgd(), 0.1).unwrap();
        assert_eq!(p, q);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let p = unit_params(1.0);
        let (q, _) = optimizer_step(&p, &uniform_grads(&p, 2.0), &OptimState::sgd(), 0.1).unwrap();
        for v in q.flatten() {
            assert!((v - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // m̂ = g, v̂ = g², so the first update is lr · g / (|g| + eps).
        for g in [1e-3, 0.5, 40.0, -7.0] {
            let p = unit_params(0.0);
            let (q, _) =
                optimizer_step(&p, &uniform_grads(&p, g), &OptimState::adam(), 0.01).unwrap();
            for v in q.flatten() {
                assert!((v.abs() / 0.01 - 1.0).abs() < 1e-4, "g={g} v={v}");
                assert_eq!(v.signum(), -g.signum());
            }
        }
    }

    #[test]
    fn bad_learning_rate_and_shapes() {
        let p = unit_params(1.0);
        let g = uniform_grads(&p, 1.0);
        assert!(matches!(optimizer_step(&p, &g, &OptimState::sgd(), 0.0), Err(Error::Config(_))));
        assert!(matches!(optimizer_step(&p, &g, &OptimState::sgd(), -1.0), Err(Error::Config(_))));
        let other = MlpParams::init(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(
            optimizer_step(&other, &g, &OptimState::adam(), 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let mut p = MlpParams::init(&[2, 5, 1], Activation::Tanh, 8).unwrap();
            let mut s = OptimState::adam();
            for k in 0..5 {
                let g = uniform_grads(&p, 0.1 * k as f64 - 0.2);
                s.apply(&mut p, &g, 1e-2).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
