//! Random initial-condition families.

use std::f64::consts::PI;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::Grid1D;
use crate::{Error, Result};

/// Number of periodic images summed on each side for the Gaussian families.
pub const IMAGE_SHIFTS: i32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConditionSpec {
    /// `Σ w_i sin/cos(ω_i x) + w_9` with `ω ∈ {π, 2π, 4π, 6π}`.
    FourierA {
        coeff_range: [f64; 2],
        offset_range: [f64; 2],
    },
    /// `a (w1 sin πx + w2 sin 2πx + w3 sin 3πx + w4 cos 2πx + w5 cos 4πx + w6 cos 6πx)`.
    FourierB { coeff_range: [f64; 2], amplitude: f64 },
    /// Two periodized Gaussian densities with shared mean range.
    GaussianMixA {
        weight_range: [f64; 2],
        mean_range: [f64; 2],
        sigma_range: [f64; 2],
    },
    /// Two periodized Gaussian densities with separate mean ranges.
    GaussianMixB {
        weight_range: [f64; 2],
        mean1_range: [f64; 2],
        mean2_range: [f64; 2],
        sigma_range: [f64; 2],
    },
}

impl InitialConditionSpec {
    pub fn fourier_a() -> Self {
        InitialConditionSpec::FourierA {
            coeff_range: [-2.0, 2.0],
            offset_range: [0.1, 2.0],
        }
    }

    pub fn fourier_b() -> Self {
        InitialConditionSpec::FourierB {
            coeff_range: [-1.0, 1.0],
            amplitude: 0.1,
        }
    }

    pub fn gaussian_mix_a() -> Self {
        InitialConditionSpec::GaussianMixA {
            weight_range: [0.0, 0.5],
            mean_range: [2.0 * PI, 4.0 * PI],
            sigma_range: [0.3, 1.0],
        }
    }

    pub fn gaussian_mix_b() -> Self {
        InitialConditionSpec::GaussianMixB {
            weight_range: [0.0, 0.5],
            mean1_range: [0.1, 0.9],
            mean2_range: [0.8, 1.5],
            sigma_range: [0.1, 0.5],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitialConditionSpec::FourierA { .. } => "fourier_a",
            InitialConditionSpec::FourierB { .. } => "fourier_b",
            InitialConditionSpec::GaussianMixA { .. } => "gaussian_mix_a",
            InitialConditionSpec::GaussianMixB { .. } => "gaussian_mix_b",
        }
    }

    fn ranges(&self) -> Vec<[f64; 2]> {
        match *self {
            InitialConditionSpec::FourierA {
                coeff_range,
                offset_range,
            } => vec![coeff_range, offset_range],
            InitialConditionSpec::FourierB { coeff_range, .. } => vec![coeff_range],
            InitialConditionSpec::GaussianMixA {
                weight_range,
                mean_range,
                sigma_range,
            } => vec![weight_range, mean_range, sigma_range],
            InitialConditionSpec::GaussianMixB {
                weight_range,
                mean1_range,
                mean2_range,
                sigma_range,
            } => vec![weight_range, mean1_range, mean2_range, sigma_range],
        }
    }

    /// Checks bounds and that the family is periodic on `length`.
    pub fn validate(&self, length: f64) -> Result<()> {
        for r in self.ranges() {
            if !r[0].is_finite() || !r[1].is_finite() || r[0] > r[1] {
                return Err(Error::config(format!("{}: bad range {:?}", self.name(), r)));
            }
        }
        match *self {
            InitialConditionSpec::FourierA { .. } | InitialConditionSpec::FourierB { .. } => {
                // Every mode has period dividing 2.
                let periods = length / 2.0;
                if (periods - periods.round()).abs() > 1e-12 || periods.round() < 1.0 {
                    return Err(Error::config(format!(
                        "{} needs a domain length that is a multiple of 2, got {length}",
                        self.name()
                    )));
                }
            }
            InitialConditionSpec::GaussianMixA { sigma_range, .. }
            | InitialConditionSpec::GaussianMixB { sigma_range, .. } => {
                if sigma_range[0] <= 0.0 {
                    return Err(Error::config("gaussian sigma must be positive"));
                }
            }
        }
        if let InitialConditionSpec::FourierB { amplitude, .. } = *self {
            if !amplitude.is_finite() {
                return Err(Error::config("fourier_b amplitude must be finite"));
            }
        }
        Ok(())
    }

    /// Draws one realization.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> InitialCondition {
        let u = |r: [f64; 2], rng: &mut R| -> f64 {
            if r[0] == r[1] {
                r[0]
            } else {
                Uniform::new_inclusive(r[0], r[1]).sample(rng)
            }
        };
        match *self {
            InitialConditionSpec::FourierA {
                coeff_range,
                offset_range,
            } => {
                let mut w = [0.0; 8];
                for wi in w.iter_mut() {
                    *wi = u(coeff_range, rng);
                }
                let w9 = u(offset_range, rng);
                let freqs = [1.0, 2.0, 4.0, 6.0];
                let mut sin = Vec::new();
                let mut cos = Vec::new();
                for (i, f) in freqs.iter().enumerate() {
                    sin.push((f * PI, w[i]));
                    cos.push((f * PI, w[i + 4]));
                }
                InitialCondition::Fourier { constant: w9, sin, cos }
            }
            InitialConditionSpec::FourierB {
                coeff_range,
                amplitude,
            } => {
                let mut w = [0.0; 6];
                for wi in w.iter_mut() {
                    *wi = u(coeff_range, rng);
                }
                let a = amplitude;
                InitialCondition::Fourier {
                    constant: 0.0,
                    sin: vec![(PI, a * w[0]), (2.0 * PI, a * w[1]), (3.0 * PI, a * w[2])],
                    cos: vec![(2.0 * PI, a * w[3]), (4.0 * PI, a * w[4]), (6.0 * PI, a * w[5])],
                }
            }
            InitialConditionSpec::GaussianMixA {
                weight_range,
                mean_range,
                sigma_range,
            } => {
                let w1 = u(weight_range, rng);
                let w2 = u(weight_range, rng);
                let m1 = u(mean_range, rng);
                let m2 = u(mean_range, rng);
                let s1 = u(sigma_range, rng);
                let s2 = u(sigma_range, rng);
                InitialCondition::Gaussians(vec![(w1, m1, s1), (w2, m2, s2)])
            }
            InitialConditionSpec::GaussianMixB {
                weight_range,
                mean1_range,
                mean2_range,
                sigma_range,
            } => {
                let w1 = u(weight_range, rng);
                let w2 = u(weight_range, rng);
                let m1 = u(mean1_range, rng);
                let m2 = u(mean2_range, rng);
                let s1 = u(sigma_range, rng);
                let s2 = u(sigma_range, rng);
                InitialCondition::Gaussians(vec![(w1, m1, s1), (w2, m2, s2)])
            }
        }
    }
}

/// A drawn initial condition, evaluable at any point.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Fourier {
        constant: f64,
        /// `(angular frequency, weight)`
        sin: Vec<(f64, f64)>,
        cos: Vec<(f64, f64)>,
    },
    /// `(weight, mean, sigma)` for each normal density.
    Gaussians(Vec<(f64, f64, f64)>),
}

impl InitialCondition {
    pub fn eval(&self, x: f64, length: f64) -> f64 {
        match self {
            InitialCondition::Fourier { constant, sin, cos } => {
                let mut v = *constant;
                for &(f, w) in sin {
                    v += w * (f * x).sin();
                }
                for &(f, w) in cos {
                    v += w * (f * x).cos();
                }
                v
            }
            InitialCondition::Gaussians(bumps) => {
                let norm = 1.0 / (2.0 * PI).sqrt();
                let mut v = 0.0;
                for &(w, mu, s) in bumps {
                    for m in -IMAGE_SHIFTS..=IMAGE_SHIFTS {
                        let z = (x + m as f64 * length - mu) / s;
                        v += w * norm / s * (-0.5 * z * z).exp();
                    }
                }
                v
            }
        }
    }

    pub fn eval_many(&self, xs: &[f64], length: f64) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x, length)).collect()
    }
}

/// Samples one realization of `spec` on the grid.
pub fn sample_ic<R: Rng + ?Sized>(
    spec: &InitialConditionSpec,
    grid: &Grid1D,
    rng: &mut R,
) -> Result<Vec<f64>> {
    grid.validate()?;
    spec.validate(grid.length)?;
    Ok(spec.draw(rng).eval_many(&grid.points(), grid.length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fourier_a_with_only_offset_is_constant() {
        let spec = InitialConditionSpec::FourierA {
            coeff_range: [0.0, 0.0],
            offset_range: [1.0, 1.0],
        };
        let g = Grid1D::new(2.0, 32).unwrap();
        let u = sample_ic(&spec, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(u.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn fourier_b_is_bounded() {
        let g = Grid1D::new(2.0, 128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let u = sample_ic(&InitialConditionSpec::fourier_b(), &g, &mut rng).unwrap();
            assert!(u.iter().all(|v| v.abs() <= 0.6));
        }
    }

    #[test]
    fn gaussian_mixtures_are_periodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (spec, l) in [
            (InitialConditionSpec::gaussian_mix_a(), 2.0 * PI),
            (InitialConditionSpec::gaussian_mix_b(), 1.0),
        ] {
            for _ in 0..50 {
                let ic = spec.draw(&mut rng);
                assert!((ic.eval(0.0, l) - ic.eval(l, l)).abs() < 1e-8);
                // Derivative continuity across the seam, by one-sided differences.
                let h = 1e-5;
                let left = (ic.eval(l, l) - ic.eval(l - h, l)) / h;
                let right = (ic.eval(h, l) - ic.eval(0.0, l)) / h;
                assert!((left - right).abs() < 1e-3 * (1.0 + left.abs()));
            }
        }
    }

    #[test]
    fn family_domain_mismatch_is_rejected() {
        assert!(InitialConditionSpec::fourier_a().validate(1.0).is_err());
        assert!(InitialConditionSpec::fourier_b().validate(2.0).is_ok());
        let bad = InitialConditionSpec::FourierA {
            coeff_range: [2.0, -2.0],
            offset_range: [0.1, 2.0],
        };
        assert!(bad.validate(2.0).is_err());
    }

    #[test]
    fn draws_are_deterministic() {
        let g = Grid1D::new(2.0 * PI, 64).unwrap();
        let spec = InitialConditionSpec::gaussian_mix_a();
        let a = sample_ic(&spec, &g, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_ic(&spec, &g, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
