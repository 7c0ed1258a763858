//! Pseudo-spectral solvers for the periodic 1-D equations.
//!
//! First-order equations use ETDRK4 (Cox-Matthews coefficients computed by
//! contour integrals, Kassam-Trefethen); for advection the linear part is the
//! whole equation and the scheme reduces to an exact phase shift.
//! Second-order-in-time equations are integrated as first-order systems with
//! classical RK4.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::Grid1D;
use super::spectral::Spectral;
use crate::autodiff::Matrix;
use crate::{Error, Result};

/// Divergence threshold on `max |u|`.
pub const BLOWUP_LIMIT: f64 = 1e6;
/// Target relative difference between solves at `dt` and `dt/2`.
pub const SELF_CONVERGENCE_TOL: f64 = 1e-6;
const MAX_HALVINGS: usize = 14;
const CONTOUR_POINTS: usize = 64;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "equation", rename_all = "snake_case", deny_unknown_fields)]
pub enum Equation {
    /// `u_tt = u_xx`
    Wave,
    /// `u_tt + m²c⁴ u = c² u_xx`
    KleinGordon { m: f64, c: f64 },
    /// `u_tt + c sin u = u_xx`
    SineGordon { c: f64 },
    /// `u_t = (u^m)_xx`
    PorousMedia { degree: u32 },
    /// `u_t = u_xx + 1`
    Parabolic,
    /// `u_t + (u²/2)_x = ν u_xx`
    ViscousBurgers { nu: f64 },
    /// `u_t + (u²/2)_x = 0`
    Burgers,
    /// `u_t + δ² u_xxx + u u_x = 0`
    Kdv { delta: f64 },
    /// `u_t = −ε² u_xxxx + 6 (u u_x)_x`
    CahnHilliard { epsilon: f64 },
    /// `u_t + u_x = 0`
    Advection,
}

impl Equation {
    pub fn name(&self) -> &'static str {
        match self {
            Equation::Wave => "wave",
            Equation::KleinGordon { .. } => "klein_gordon",
            Equation::SineGordon { .. } => "sine_gordon",
            Equation::PorousMedia { .. } => "porous_media",
            Equation::Parabolic => "parabolic",
            Equation::ViscousBurgers { .. } => "viscous_burgers",
            Equation::Burgers => "burgers",
            Equation::Kdv { .. } => "kdv",
            Equation::CahnHilliard { .. } => "cahn_hilliard",
            Equation::Advection => "advection",
        }
    }

    pub fn id(&self) -> u8 {
        match self {
            Equation::Wave => 0,
            Equation::KleinGordon { .. } => 1,
            Equation::SineGordon { .. } => 2,
            Equation::PorousMedia { .. } => 3,
            Equation::Parabolic => 4,
            Equation::ViscousBurgers { .. } => 5,
            Equation::Burgers => 6,
            Equation::Kdv { .. } => 7,
            Equation::CahnHilliard { .. } => 8,
            Equation::Advection => 9,
        }
    }

    pub fn is_second_order(&self) -> bool {
        matches!(
            self,
            Equation::Wave | Equation::KleinGordon { .. } | Equation::SineGordon { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{}: {name} must be positive, got {v}", self.name())))
            }
        };
        match *self {
            Equation::KleinGordon { m, c } => {
                pos("m", m)?;
                pos("c", c)
            }
            Equation::SineGordon { c } => pos("c", c),
            Equation::PorousMedia { degree } => {
                if (2..=4).contains(&degree) {
                    Ok(())
                } else {
                    Err(Error::config(format!("porous_media degree must be 2, 3 or 4, got {degree}")))
                }
            }
            Equation::ViscousBurgers { nu } => pos("nu", nu),
            Equation::Kdv { delta } => pos("delta", delta),
            Equation::CahnHilliard { epsilon } => pos("epsilon", epsilon),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    #[serde(flatten)]
    pub equation: Equation,
    /// Terminal time `T`.
    pub final_time: f64,
    /// Upper end of the training time window when the trunk takes `(x, t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_time: Option<f64>,
}

impl PdeSpec {
    pub fn new(equation: Equation, final_time: f64) -> Self {
        PdeSpec {
            equation,
            final_time,
            train_time: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.equation.validate()?;
        if !(self.final_time > 0.0) || !self.final_time.is_finite() {
            return Err(Error::config(format!("final time must be positive, got {}", self.final_time)));
        }
        if let Some(t) = self.train_time {
            if !(t > 0.0) || t > self.final_time {
                return Err(Error::config(format!(
                    "train time {t} must lie in (0, {}]",
                    self.final_time
                )));
            }
        }
        Ok(())
    }

    /// Rejects initial data outside the equation's regime of validity:
    /// inviscid Burgers must stay shock-free up to `T`, and porous media
    /// needs `u0 > 0`.
    pub fn admissible(&self, u0: &[f64], grid: &Grid1D) -> bool {
        if u0.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self.equation {
            Equation::Burgers => {
                let mut sp = Spectral::new(grid);
                let du = sp.derivative(u0, 1);
                let steepest = du.iter().fold(0.0_f64, |m, &d| m.max(-d));
                steepest * self.final_time < BURGERS_SHOCK_MARGIN
            }
            Equation::PorousMedia { .. } => u0.iter().all(|&v| v > 0.0),
            _ => true,
        }
    }
}

/// Inviscid Burgers samples need `T · max(−u0') < margin` (the shock forms at
/// `max(−u0')⁻¹`); the margin keeps the terminal profile resolvable.
pub const BURGERS_SHOCK_MARGIN: f64 = 0.8;

/// Solves with `dt` chosen by the built-in heuristic and halved until two
/// successive solves agree to [`SELF_CONVERGENCE_TOL`].
pub fn solve_pde(spec: &PdeSpec, u0: &[f64], grid: &Grid1D, save_times: &[f64]) -> Result<Matrix> {
    let dt = calibrate_dt(spec, &[u0.to_vec()], grid, save_times, SELF_CONVERGENCE_TOL)?;
    solve_pde_with_dt(spec, u0, grid, save_times, dt)
}

/// Largest step from the heuristic, halved until every probe converges.
pub fn calibrate_dt(
    spec: &PdeSpec,
    probes: &[Vec<f64>],
    grid: &Grid1D,
    save_times: &[f64],
    tol: f64,
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::config("calibrate_dt needs at least one probe"));
    }
    let mut dt = probes
        .iter()
        .map(|u| heuristic_dt(spec, u, grid))
        .fold(f64::INFINITY, f64::min);
    let mut coarse: Vec<Matrix> = probes
        .iter()
        .map(|u| solve_pde_with_dt(spec, u, grid, save_times, dt))
        .collect::<Result<_>>()?;
    for _ in 0..MAX_HALVINGS {
        let fine: Vec<Matrix> = probes
            .iter()
            .map(|u| solve_pde_with_dt(spec, u, grid, save_times, dt / 2.0))
            .collect::<Result<_>>()?;
        let worst = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| snapshot_difference(a, b))
            .fold(0.0, f64::max);
        dt /= 2.0;
        if worst < tol {
            return Ok(dt);
        }
        coarse = fine;
    }
    Err(Error::SolverDivergence {
        equation: format!("{} (time step did not converge)", spec.equation.name()),
        time: 0.0,
    })
}

/// Worst per-snapshot relative L2 difference.
pub fn snapshot_difference(a: &Matrix, b: &Matrix) -> f64 {
    (0..a.rows())
        .map(|r| {
            let (x, y) = (a.row(r), b.row(r));
            let num: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let den: f64 = y.iter().map(|q| q * q).sum::<f64>().sqrt();
            num / den.max(1e-12)
        })
        .fold(0.0, f64::max)
}

/// Stability/accuracy-motivated starting step.
pub fn heuristic_dt(spec: &PdeSpec, u0: &[f64], grid: &Grid1D) -> f64 {
    let kmax = PI * grid.n_points as f64 / grid.length;
    let kdeal = kmax * 2.0 / 3.0;
    let umax = u0.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-3);
    let dt = match spec.equation {
        Equation::Wave => 1.0 / kmax,
        Equation::KleinGordon { m, c } => 1.0 / (c * c * kmax * kmax + m * m * c.powi(4)).sqrt(),
        Equation::SineGordon { c } => 1.0 / (kmax * kmax + c).sqrt(),
        Equation::Advection => 1.0 / kmax,
        Equation::Parabolic => 0.1,
        Equation::ViscousBurgers { .. } | Equation::Burgers | Equation::Kdv { .. } => 1.0 / (umax * kdeal),
        Equation::PorousMedia { degree } => {
            let m = degree as f64;
            1.0 / (m * umax.powi(degree as i32 - 1) * kdeal * kdeal).sqrt().max(1.0) * 0.1
        }
        Equation::CahnHilliard { .. } => 0.1 / (6.0 * umax * kdeal).max(1.0),
    };
    dt.min(spec.final_time / 4.0)
}

/// Integrates with a fixed nominal step; each interval between save times is
/// split into equal substeps no longer than `dt`.
pub fn solve_pde_with_dt(
    spec: &PdeSpec,
    u0: &[f64],
    grid: &Grid1D,
    save_times: &[f64],
    dt: f64,
) -> Result<Matrix> {
    spec.validate()?;
    grid.validate()?;
    if u0.len() != grid.n_points {
        return Err(Error::shape(format!(
            "initial condition has {} values, grid has {}",
            u0.len(),
            grid.n_points
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("initial condition is not finite"));
    }
    if !(dt > 0.0) {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    let mut prev = 0.0;
    for &t in save_times {
        if !(t >= prev) || t > spec.final_time * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "save times must be sorted within [0, {}], got {t}",
                spec.final_time
            )));
        }
        prev = t;
    }

    let mut stepper = Stepper::new(spec, u0, grid);
    let mut out = Matrix::zeros(save_times.len(), grid.n_points);
    let mut t = 0.0;
    for (r, &ts) in save_times.iter().enumerate() {
        let span = ts - t;
        if span > 0.0 {
            let n = (span / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for i in 0..n {
                stepper.step(h);
                if !stepper.healthy() {
                    return Err(Error::SolverDivergence {
                        equation: spec.equation.name().to_string(),
                        time: t + (i + 1) as f64 * h,
                    });
                }
            }
        }
        t = ts;
        out.row_mut(r).copy_from_slice(&stepper.values());
    }
    Ok(out)
}

struct EtdCoeffs {
    e: Vec<C>,
    e2: Vec<C>,
    q: Vec<C>,
    f1: Vec<C>,
    f2: Vec<C>,
    f3: Vec<C>,
}

impl EtdCoeffs {
    fn new(lin: &[C], h: f64) -> Self {
        let roots: Vec<C> = (0..CONTOUR_POINTS)
            .map(|j| C::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let n = lin.len();
        let mut c = EtdCoeffs {
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        let m = CONTOUR_POINTS as f64;
        for &l in lin {
            let lh = l * h;
            c.e.push(lh.exp());
            c.e2.push((lh / 2.0).exp());
            let (mut q, mut f1, mut f2, mut f3) = (ZERO, ZERO, ZERO, ZERO);
            for &r in &roots {
                let z = lh + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z / 2.0).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            c.q.push(q * h / m);
            c.f1.push(f1 * h / m);
            c.f2.push(f2 * h / m);
            c.f3.push(f3 * h / m);
        }
        c
    }
}

#[derive(Clone, Copy)]
enum Nonlinear {
    /// Constant source `s`.
    Source(f64),
    /// `−(u²/2)_x`
    BurgersFlux,
    /// `3 (u²)_xx − D u_xx`
    ChFlux { diffusivity: f64 },
    /// `(u^m)_xx − D u_xx`, the remainder after the linear split `D u_xx`.
    Porous { degree: i32, diffusivity: f64 },
}

enum Stepper {
    Etd(EtdStepper),
    Rk4(Rk4Stepper),
}

impl Stepper {
    fn new(spec: &PdeSpec, u0: &[f64], grid: &Grid1D) -> Self {
        let mut sp = Spectral::new(grid);
        let n = grid.n_points;
        let k: Vec<f64> = sp.wavenumbers().to_vec();
        let kodd: Vec<f64> = (0..n).map(|j| sp.odd_wavenumber(j)).collect();
        let u_hat = sp.fft(u0);
        let umax = u0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let etd = |sp: Spectral, lin: Vec<C>, nl: Option<Nonlinear>| {
            Stepper::Etd(EtdStepper {
                sp,
                lin,
                nl,
                kodd: kodd.clone(),
                k2: k.iter().map(|k| k * k).collect(),
                v: u_hat.clone(),
                cache: HashMap::new(),
                work: Work::new(n),
            })
        };
        let rk4 = |sp: Spectral, omega2: Vec<f64>, sine: Option<f64>| {
            let w = vec![ZERO; n];
            Stepper::Rk4(Rk4Stepper {
                sp,
                omega2,
                sine,
                u: u_hat.clone(),
                w,
                work: Work::new(n),
            })
        };
        match spec.equation {
            Equation::Wave => rk4(sp, k.iter().map(|k| k * k).collect(), None),
            Equation::KleinGordon { m, c } => {
                rk4(sp, k.iter().map(|k| c * c * k * k + m * m * c.powi(4)).collect(), None)
            }
            Equation::SineGordon { c } => rk4(sp, k.iter().map(|k| k * k).collect(), Some(c)),
            Equation::Advection => etd(sp, kodd.iter().map(|k| C::new(0.0, -k)).collect(), None),
            Equation::Parabolic => etd(sp, k.iter().map(|k| C::new(-k * k, 0.0)).collect(), Some(Nonlinear::Source(1.0))),
            Equation::ViscousBurgers { nu } => etd(
                sp,
                k.iter().map(|k| C::new(-nu * k * k, 0.0)).collect(),
                Some(Nonlinear::BurgersFlux),
            ),
            Equation::Burgers => etd(sp, vec![ZERO; n], Some(Nonlinear::BurgersFlux)),
            Equation::Kdv { delta } => etd(
                sp,
                kodd.iter().map(|k| C::new(0.0, delta * delta * k * k * k)).collect(),
                Some(Nonlinear::BurgersFlux),
            ),
            Equation::CahnHilliard { epsilon } => {
                // The linear split carries the diffusive part of 6(u u_x)_x at
                // its largest rate; the remainder is treated explicitly.
                let d = 6.0 * umax;
                let e2 = epsilon * epsilon;
                let lin = k.iter().map(|k| C::new(-e2 * k.powi(4) - d * k * k, 0.0)).collect();
                etd(sp, lin, Some(Nonlinear::ChFlux { diffusivity: d }))
            }
            Equation::PorousMedia { degree } => {
                let m = degree as f64;
                let d = m * umax.powi(degree as i32 - 1);
                let lin = k.iter().map(|k| C::new(-d * k * k, 0.0)).collect();
                etd(
                    sp,
                    lin,
                    Some(Nonlinear::Porous {
                        degree: degree as i32,
                        diffusivity: d,
                    }),
                )
            }
        }
    }

    fn step(&mut self, h: f64) {
        match self {
            Stepper::Etd(s) => s.step(h),
            Stepper::Rk4(s) => s.step(h),
        }
    }

    fn values(&mut self) -> Vec<f64> {
        match self {
            Stepper::Etd(s) => s.sp.ifft(&s.v),
            Stepper::Rk4(s) => s.sp.ifft(&s.u),
        }
    }

    fn healthy(&mut self) -> bool {
        let v = self.values();
        v.iter().all(|x| x.is_finite() && x.abs() <= BLOWUP_LIMIT)
    }
}

struct Work {
    cbuf: Vec<C>,
    rbuf: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Work {
            cbuf: vec![ZERO; n],
            rbuf: vec![0.0; n],
        }
    }
}

struct EtdStepper {
    sp: Spectral,
    lin: Vec<C>,
    nl: Option<Nonlinear>,
    kodd: Vec<f64>,
    k2: Vec<f64>,
    v: Vec<C>,
    cache: HashMap<u64, EtdCoeffs>,
    work: Work,
}

impl EtdStepper {
    /// `N(v)` in Fourier space.
    fn nonlinear(&mut self, v: &[C], out: &mut [C]) {
        let n = v.len();
        match self.nl {
            None => out.iter_mut().for_each(|o| *o = ZERO),
            Some(Nonlinear::Source(s)) => {
                out.iter_mut().for_each(|o| *o = ZERO);
                out[0] = C::new(s * n as f64, 0.0);
            }
            Some(kind) => {
                self.sp.ifft_into(v, &mut self.work.cbuf, &mut self.work.rbuf);
                let pw = match kind {
                    Nonlinear::Porous { degree, .. } => degree,
                    _ => 2,
                };
                for x in self.work.rbuf.iter_mut() {
                    *x = x.powi(pw);
                }
                self.sp.fft_into(&self.work.rbuf, out);
                for j in 0..n {
                    out[j] = match kind {
                        Nonlinear::BurgersFlux => C::new(0.0, -0.5 * self.kodd[j]) * out[j],
                        Nonlinear::ChFlux { diffusivity } => {
                            -3.0 * self.k2[j] * out[j] + diffusivity * self.k2[j] * v[j]
                        }
                        Nonlinear::Porous { diffusivity, .. } => {
                            -self.k2[j] * out[j] + diffusivity * self.k2[j] * v[j]
                        }
                        Nonlinear::Source(_) => unreachable!(),
                    };
                }
                self.sp.dealias_in_place(out);
            }
        }
    }

    fn step(&mut self, h: f64) {
        let key = h.to_bits();
        if !self.cache.contains_key(&key) {
            if self.cache.len() > 8 {
                self.cache.clear();
            }
            self.cache.insert(key, EtdCoeffs::new(&self.lin, h));
        }
        let n = self.v.len();
        let v = self.v.clone();
        let mut nv = vec![ZERO; n];
        let mut na = vec![ZERO; n];
        let mut nb = vec![ZERO; n];
        let mut nc = vec![ZERO; n];
        self.nonlinear(&v, &mut nv);
        let co = &self.cache[&key];
        let a: Vec<C> = (0..n).map(|j| co.e2[j] * v[j] + co.q[j] * nv[j]).collect();
        self.nonlinear(&a, &mut na);
        let co = &self.cache[&key];
        let b: Vec<C> = (0..n).map(|j| co.e2[j] * v[j] + co.q[j] * na[j]).collect();
        self.nonlinear(&b, &mut nb);
        let co = &self.cache[&key];
        let c: Vec<C> = (0..n).map(|j| co.e2[j] * a[j] + co.q[j] * (2.0 * nb[j] - nv[j])).collect();
        self.nonlinear(&c, &mut nc);
        let co = &self.cache[&key];
        for j in 0..n {
            self.v[j] = co.e[j] * v[j] + nv[j] * co.f1[j] + 2.0 * (na[j] + nb[j]) * co.f2[j] + nc[j] * co.f3[j];
        }
    }
}

/// `u_tt = −ω² u − c sin u` as the first-order system `(u, w = u_t)`.
struct Rk4Stepper {
    sp: Spectral,
    omega2: Vec<f64>,
    sine: Option<f64>,
    u: Vec<C>,
    w: Vec<C>,
    work: Work,
}

impl Rk4Stepper {
    fn rhs(&mut self, u: &[C], w: &[C], du: &mut [C], dw: &mut [C]) {
        du.copy_from_slice(w);
        for j in 0..u.len() {
            dw[j] = -self.omega2[j] * u[j];
        }
        if let Some(c) = self.sine {
            self.sp.ifft_into(u, &mut self.work.cbuf, &mut self.work.rbuf);
            for x in self.work.rbuf.iter_mut() {
                *x = x.sin();
            }
            let mut s = vec![ZERO; u.len()];
            self.sp.fft_into(&self.work.rbuf, &mut s);
            self.sp.dealias_in_place(&mut s);
            for j in 0..u.len() {
                dw[j] -= c * s[j];
            }
        }
    }

    fn step(&mut self, h: f64) {
        let n = self.u.len();
        let (u0, w0) = (self.u.clone(), self.w.clone());
        let mut ku = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
        let mut kw = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
        let mut us = u0.clone();
        let mut ws = w0.clone();
        let frac = [0.5, 0.5, 1.0];
        for s in 0..4 {
            let (du, dw) = (&mut ku[s], &mut kw[s]);
            self.rhs(&us, &ws, du, dw);
            if s < 3 {
                for j in 0..n {
                    us[j] = u0[j] + frac[s] * h * ku[s][j];
                    ws[j] = w0[j] + frac[s] * h * kw[s][j];
                }
            }
        }
        for j in 0..n {
            self.u[j] = u0[j] + h / 6.0 * (ku[0][j] + 2.0 * ku[1][j] + 2.0 * ku[2][j] + ku[3][j]);
            self.w[j] = w0[j] + h / 6.0 * (kw[0][j] + 2.0 * kw[1][j] + 2.0 * kw[2][j] + kw[3][j]);
        }
    }
}
