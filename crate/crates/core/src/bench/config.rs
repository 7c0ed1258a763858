//! Experiment configuration and the five named presets.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Activation;
use crate::datagen::{Equation, Grid1D, InitialConditionSpec, OperatorSpec, PdeSpec, QueryMesh};
use crate::trainer::{BatchSize, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub label: String,
    pub spec: OperatorSpec,
    pub train_mesh: QueryMesh,
    pub test_mesh: QueryMesh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Basis size `K`.
    pub basis: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Harmonics of `x / L` fed to the trunk in place of the raw coordinate;
    /// 0 feeds `x / L` itself.
    #[serde(default)]
    pub fourier_features: usize,
    /// Standardize branch inputs with the pooled training mean and deviation.
    #[serde(default)]
    pub standardize_inputs: bool,
    /// Center each operator's targets on their training mean and rescale
    /// them to this standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub operators: Vec<OperatorConfig>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_sensors: usize,
    pub network: NetworkConfig,
    /// Shared by the single DONs and every MODNO run; the shared data
    /// fraction is overridden per sweep entry.
    pub train: TrainConfig,
    pub q_values: Vec<f64>,
    pub seeds: Seeds,
}

/// Operator count of each named experiment.
pub fn expected_operators(name: &str) -> Option<usize> {
    match name {
        "exp1" | "exp2" | "exp3" | "exp4" => Some(3),
        "exp5" => Some(4),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() {
            return Err(Error::config("experiment has no operators"));
        }
        if let Some(n) = expected_operators(&self.name) {
            if self.operators.len() != n {
                return Err(Error::config(format!(
                    "{} needs {n} operators, config has {}",
                    self.name,
                    self.operators.len()
                )));
            }
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("n_train and n_test must be at least 1"));
        }
        if self.network.basis == 0 {
            return Err(Error::config("basis size must be positive"));
        }
        if let Some(r) = self.network.target_std {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config(format!("target_std must be positive, got {r}")));
            }
        }
        for &q in &self.q_values {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::config(format!("q = {q} outside [0, 1]")));
            }
        }
        for op in &self.operators {
            op.spec.validate()?;
            op.train_mesh.validate(&op.spec.pde)?;
            op.test_mesh.validate(&op.spec.pde)?;
            if op.train_mesh.query_dim() != op.test_mesh.query_dim() {
                return Err(Error::config(format!("{}: train/test mesh dimensions differ", op.label)));
            }
            if op.spec.grid.n_points % self.n_sensors != 0 {
                return Err(Error::config(format!(
                    "{}: {} sensors do not divide the {}-point grid",
                    op.label, self.n_sensors, op.spec.grid.n_points
                )));
            }
        }
        self.train.validate(self.operators.len())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Output directory name: experiment name plus a short content hash.
    pub fn run_dir_name(&self) -> Result<String> {
        Ok(format!("{}-{}", self.name, &self.content_hash()?[..12]))
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "exp1" => Ok(exp1()),
            "exp2" => Ok(exp2()),
            "exp3" => Ok(exp3()),
            "exp4" => Ok(exp4()),
            "exp5" => Ok(exp5()),
            _ => Err(Error::config(format!("unknown experiment preset {name:?}"))),
        }
    }
}

fn op(label: &str, pde: PdeSpec, ic: InitialConditionSpec, length: f64, n: usize, offset: f64, mesh: usize) -> OperatorConfig {
    OperatorConfig {
        label: label.to_string(),
        spec: OperatorSpec {
            pde,
            ic,
            grid: Grid1D {
                length,
                n_points: n,
            },
            ic_offset: offset,
        },
        train_mesh: QueryMesh::spatial(mesh, 0.0),
        test_mesh: QueryMesh::spatial(mesh, 0.5),
    }
}

/// Train on `n_t` equispaced times up to `train_time`, test at `T`.
fn extrapolating(mut o: OperatorConfig, train_time: f64, n_t: usize) -> OperatorConfig {
    let t_final = o.spec.pde.final_time;
    o.spec.pde.train_time = Some(train_time);
    let times: Vec<f64> = (1..=n_t).map(|j| train_time * j as f64 / n_t as f64).collect();
    o.train_mesh = o.train_mesh.with_times(times);
    o.test_mesh = o.test_mesh.with_times(vec![t_final]);
    o
}

fn base(name: &str, operators: Vec<OperatorConfig>, q_values: Vec<f64>, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        operators,
        n_train: 1000,
        n_test: 200,
        n_sensors: 64,
        network: NetworkConfig {
            basis: 64,
            branch_hidden: vec![128, 128],
            trunk_hidden: vec![128, 128],
            activation: Activation::Tanh,
            fourier_features: 6,
            standardize_inputs: true,
            target_std: Some(3.0),
        },
        train: TrainConfig {
            epochs,
            trunk_lr: 5e-4,
            trunk_lrs: None,
            branch_lr: 5e-4,
            shared_data_fraction: 1.0,
            minibatch_size: BatchSize::Functions(100),
            optimizer: crate::autodiff::OptimizerKind::Adam,
            rng_seed: 7,
            subsample_mode: Default::default(),
            lr_decay: 0.995,
        },
        q_values,
        seeds: Seeds { data: 2024, init: 17 },
    }
}

const Q4: [f64; 4] = [1.0, 0.9, 0.8, 0.7];
const Q3: [f64; 3] = [1.0, 0.9, 0.8];
const EXTRAPOLATION_TIMES: usize = 8;
const EPOCHS: usize = 600;

pub fn exp1() -> ExperimentConfig {
    let ic = InitialConditionSpec::fourier_a();
    base(
        "exp1",
        vec![
            op("Wave", PdeSpec::new(Equation::Wave, 1.0), ic.clone(), 2.0, 64, 0.0, 64),
            op(
                "Klein-Gordon",
                PdeSpec::new(Equation::KleinGordon { m: 0.1, c: 10.0 }, 2.0),
                ic.clone(),
                2.0,
                64,
                0.0,
                64,
            ),
            op("Sine-Gordon", PdeSpec::new(Equation::SineGordon { c: 1.0 }, 2.0), ic, 2.0, 128, 0.0, 64),
        ],
        Q4.to_vec(),
        EPOCHS,
    )
}

pub fn exp2() -> ExperimentConfig {
    let ic = InitialConditionSpec::fourier_b();
    let porous = |label: &str, m: u32| {
        extrapolating(
            op(label, PdeSpec::new(Equation::PorousMedia { degree: m }, 0.01), ic.clone(), 2.0, 64, 1.0, 32),
            0.008,
            EXTRAPOLATION_TIMES,
        )
    };
    base(
        "exp2",
        vec![porous("Degree 2", 2), porous("Degree 3", 3), porous("Degree 4", 4)],
        Q3.to_vec(),
        EPOCHS,
    )
}

pub fn exp3() -> ExperimentConfig {
    let ic = InitialConditionSpec::gaussian_mix_a();
    let l = 2.0 * PI;
    base(
        "exp3",
        vec![
            op("Parabolic", PdeSpec::new(Equation::Parabolic, 0.5), ic.clone(), l, 128, 0.0, 64),
            op(
                "Viscous Burgers",
                PdeSpec::new(Equation::ViscousBurgers { nu: 0.1 }, 1.0),
                ic.clone(),
                l,
                128,
                0.0,
                64,
            ),
            op("Burgers", PdeSpec::new(Equation::Burgers, 0.4), ic, l, 128, 0.0, 64),
        ],
        Q4.to_vec(),
        EPOCHS,
    )
}

pub fn exp4() -> ExperimentConfig {
    let ic = InitialConditionSpec::gaussian_mix_b();
    base(
        "exp4",
        vec![
            op("KdV", PdeSpec::new(Equation::Kdv { delta: 0.022 }, 1.0), ic.clone(), 1.0, 128, 0.0, 64),
            op(
                "Cahn-Hilliard",
                PdeSpec::new(Equation::CahnHilliard { epsilon: 0.01 }, 1.0),
                ic.clone(),
                1.0,
                64,
                0.0,
                64,
            ),
            op("Advection", PdeSpec::new(Equation::Advection, 0.1), ic, 1.0, 64, 0.0, 64),
        ],
        Q4.to_vec(),
        EPOCHS,
    )
}

pub fn exp5() -> ExperimentConfig {
    let ic = InitialConditionSpec::fourier_b();
    let t = EXTRAPOLATION_TIMES;
    base(
        "exp5",
        vec![
            extrapolating(
                op("Porous Media", PdeSpec::new(Equation::PorousMedia { degree: 2 }, 0.01), ic.clone(), 2.0, 64, 1.0, 32),
                0.008,
                t,
            ),
            extrapolating(
                op(
                    "Cahn Hilliard",
                    PdeSpec::new(Equation::CahnHilliard { epsilon: 0.01 }, 0.5),
                    ic.clone(),
                    2.0,
                    64,
                    1.0,
                    32,
                ),
                0.4,
                t,
            ),
            extrapolating(
                op("Sine Gordon", PdeSpec::new(Equation::SineGordon { c: 1.0 }, 2.0), ic.clone(), 2.0, 128, 0.0, 32),
                1.6,
                t,
            ),
            extrapolating(
                op("Parabolic", PdeSpec::new(Equation::Parabolic, 0.02), ic, 2.0, 64, 0.0, 32),
                0.016,
                t,
            ),
        ],
        Q3.to_vec(),
        EPOCHS,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_have_table_shapes() {
        for (name, n_op, n_q) in [("exp1", 3, 4), ("exp2", 3, 3), ("exp3", 3, 4), ("exp4", 3, 4), ("exp5", 4, 3)] {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.operators.len(), n_op);
            assert_eq!(cfg.q_values.len(), n_q);
        }
        assert!(ExperimentConfig::preset("exp6").is_err());
    }

    #[test]
    fn json_round_trip_and_hash_stability() {
        let cfg = exp5();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash().unwrap(), cfg.content_hash().unwrap());
        let mut other = cfg.clone();
        other.seeds.data += 1;
        assert_ne!(other.content_hash().unwrap(), cfg.content_hash().unwrap());
    }

    #[test]
    fn wrong_operator_count_is_rejected() {
        let mut cfg = exp1();
        cfg.operators.pop();
        assert!(cfg.validate().is_err());
        cfg.name = "custom".into();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn test_meshes_never_touch_training_points() {
        for name in ["exp1", "exp2", "exp3", "exp4", "exp5"] {
            let cfg = ExperimentConfig::preset(name).unwrap();
            for op in &cfg.operators {
                let l = op.spec.grid.length;
                let tr = op.train_mesh.points(l);
                let te = op.test_mesh.points(l);
                for a in 0..te.rows() {
                    for b in 0..tr.rows() {
                        assert_ne!(te.row(a), tr.row(b), "{name} {}", op.label);
                    }
                }
            }
        }
    }
}
