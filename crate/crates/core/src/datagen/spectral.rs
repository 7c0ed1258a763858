//! FFT plumbing for periodic grids: wavenumbers, derivatives, 2/3-rule
//! dealiasing, and trigonometric interpolation.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::Grid1D;

pub struct Spectral {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers `2π j / L` in FFT order; the Nyquist entry is
    /// `+π N / L`.
    k: Vec<f64>,
    dealias: Vec<bool>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl Spectral {
    pub fn new(grid: &Grid1D) -> Self {
        let n = grid.n_points;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scale = 2.0 * PI / grid.length;
        let k = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                m * scale
            })
            .collect();
        let dealias = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j } else { n - j };
                3 * m < n
            })
            .collect();
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Spectral {
            n,
            length: grid.length,
            forward,
            inverse,
            k,
            dealias,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// Wavenumber for odd-order derivatives: the Nyquist mode is zeroed so
    /// derivatives of real data stay real.
    pub fn odd_wavenumber(&self, j: usize) -> f64 {
        if j == self.n / 2 {
            0.0
        } else {
            self.k[j]
        }
    }

    pub fn max_wavenumber(&self) -> f64 {
        PI * self.n as f64 / self.length
    }

    pub fn keeps(&self, j: usize) -> bool {
        self.dealias[j]
    }

    /// Unnormalized forward transform of real samples.
    pub fn fft(&mut self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process_with_scratch(&mut buf, &mut self.scratch);
        buf
    }

    pub fn fft_into(&mut self, values: &[f64], out: &mut [Complex64]) {
        for (o, &v) in out.iter_mut().zip(values) {
            *o = Complex64::new(v, 0.0);
        }
        self.forward.process_with_scratch(out, &mut self.scratch);
    }

    /// Inverse transform (normalized by `1/N`), real part.
    pub fn ifft(&mut self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.inverse.process_with_scratch(&mut buf, &mut self.scratch);
        let s = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    pub fn ifft_into(&mut self, coeffs: &[Complex64], work: &mut [Complex64], out: &mut [f64]) {
        work.copy_from_slice(coeffs);
        self.inverse.process_with_scratch(work, &mut self.scratch);
        let s = 1.0 / self.n as f64;
        for (o, c) in out.iter_mut().zip(work.iter()) {
            *o = c.re * s;
        }
    }

    /// Zero the modes removed by the 2/3 rule.
    pub fn dealias_in_place(&self, coeffs: &mut [Complex64]) {
        for (c, &keep) in coeffs.iter_mut().zip(&self.dealias) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Spectral derivative of order `order`.
    pub fn derivative(&mut self, values: &[f64], order: u32) -> Vec<f64> {
        let mut c = self.fft(values);
        for (j, cj) in c.iter_mut().enumerate() {
            let k = if order % 2 == 1 { self.odd_wavenumber(j) } else { self.k[j] };
            *cj *= Complex64::new(0.0, k).powu(order);
        }
        self.ifft(&c)
    }
}

/// Evaluates the trigonometric interpolant of equispaced periodic samples at
/// arbitrary points. The Nyquist mode is split symmetrically so the
/// interpolant of real data is real.
#[derive(Debug, Clone)]
pub struct FourierInterpolant {
    length: f64,
    /// `(wavenumber index m ≥ 0, a_m, b_m)`: `u(x) = Σ a_m cos + b_m sin`.
    terms: Vec<(f64, f64, f64)>,
}

impl FourierInterpolant {
    pub fn new(values: &[f64], length: f64) -> Self {
        let n = values.len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut c);
        let nf = n as f64;
        let mut terms = Vec::with_capacity(n / 2 + 1);
        terms.push((0.0, c[0].re / nf, 0.0));
        let half = n / 2;
        for (m, cm) in c.iter().enumerate().take(half.max(1)).skip(1) {
            // c_m e^{ikx} + c_{-m} e^{-ikx} = 2 Re(c_m) cos − 2 Im(c_m) sin
            terms.push((m as f64, 2.0 * cm.re / nf, -2.0 * cm.im / nf));
        }
        if n % 2 == 0 && n >= 2 {
            terms.push((half as f64, c[half].re / nf, 0.0));
        }
        FourierInterpolant { length, terms }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let theta = 2.0 * PI * x / self.length;
        self.terms
            .iter()
            .map(|&(m, a, b)| {
                let (s, c) = (m * theta).sin_cos();
                a * c + b * s
            })
            .sum()
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Trigonometric interpolation of grid samples onto `xs`.
pub fn interpolate(values: &[f64], length: f64, xs: &[f64]) -> Vec<f64> {
    FourierInterpolant::new(values, length).eval_many(xs)
}
