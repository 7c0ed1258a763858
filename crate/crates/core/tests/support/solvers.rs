//! Solver checks against closed-form solutions, conservation laws and grid
//! refinement.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use modno::bench::config::{exp1, exp2, exp3, exp4, exp5};
use modno::bench::OperatorConfig;
use modno::datagen::{sample_ic, solve_pde, Equation, Grid1D, PdeSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ADVECTION_TOL: f64 = 1e-8;
pub const WAVE_TOL: f64 = 1e-6;
pub const PARABOLIC_TOL: f64 = 1e-10;
pub const MASS_TOL: f64 = 1e-8;
pub const REFINEMENT_TOL: f64 = 1e-5;

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn advection_error() -> f64 {
    let grid = Grid1D::new(1.0, 64).unwrap();
    let u = |x: f64| (2.0 * PI * x).sin() + 0.5 * (6.0 * PI * x).cos();
    let t = 0.1;
    let u0: Vec<f64> = grid.points().iter().map(|&x| u(x)).collect();
    let sol = solve_pde(&PdeSpec::new(Equation::Advection, t), &u0, &grid, &[t]).unwrap();
    let exact: Vec<f64> = grid.points().iter().map(|&x| u(x - t)).collect();
    max_abs(sol.row(0), &exact)
}

pub fn wave_error() -> f64 {
    let grid = Grid1D::new(2.0, 64).unwrap();
    let u0: Vec<f64> = grid.points().iter().map(|&x| (PI * x).sin()).collect();
    let times = [0.25, 1.0];
    let sol = solve_pde(&PdeSpec::new(Equation::Wave, 1.0), &u0, &grid, &times).unwrap();
    times
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let exact: Vec<f64> = grid.points().iter().map(|&x| (PI * t).cos() * (PI * x).sin()).collect();
            max_abs(sol.row(r), &exact)
        })
        .fold(0.0, f64::max)
}

pub fn parabolic_constant_error() -> f64 {
    let grid = Grid1D::new(2.0 * PI, 128).unwrap();
    let (c, t) = (0.7, 0.5);
    let sol = solve_pde(&PdeSpec::new(Equation::Parabolic, t), &vec![c; 128], &grid, &[t]).unwrap();
    sol.row(0).iter().map(|v| (v - (c + t)).abs()).fold(0.0, f64::max)
}

pub fn porous_mass_drift() -> f64 {
    let grid = Grid1D::new(2.0, 64).unwrap();
    let u0: Vec<f64> = grid.points().iter().map(|&x| 1.0 + 0.5 * (PI * x).sin() + 0.2 * (3.0 * PI * x).cos()).collect();
    let mass = |u: &[f64]| u.iter().sum::<f64>() * grid.dx();
    let mut worst: f64 = 0.0;
    for degree in 2..=4 {
        let times = [0.005, 0.01];
        let sol = solve_pde(&PdeSpec::new(Equation::PorousMedia { degree }, 0.01), &u0, &grid, &times).unwrap();
        for r in 0..times.len() {
            worst = worst.max((mass(sol.row(r)) - mass(&u0)).abs());
        }
    }
    worst
}

/// One operator per equation, drawn from the experiment presets.
fn equation_representatives() -> BTreeMap<u8, OperatorConfig> {
    let mut out = BTreeMap::new();
    for cfg in [exp1(), exp2(), exp3(), exp4(), exp5()] {
        for op in cfg.operators {
            out.entry(op.spec.pde.equation.id()).or_insert(op);
        }
    }
    out
}

/// Worst relative L2 difference between solves on the preset grid and on the
/// doubled grid, compared at the shared nodes, per equation name.
pub fn refinement_differences() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    for op in equation_representatives().into_values() {
        let pde = op.spec.pde;
        let coarse = op.spec.grid;
        let fine = coarse.refined();
        let u0 = loop {
            let draw = sample_ic(&op.spec.ic, &fine, &mut rng).unwrap();
            let draw: Vec<f64> = draw.iter().map(|v| v + op.spec.ic_offset).collect();
            let sub: Vec<f64> = draw.iter().step_by(2).copied().collect();
            if pde.admissible(&draw, &fine) && pde.admissible(&sub, &coarse) {
                break draw;
            }
        };
        let times = [pde.final_time / 20.0, pde.final_time / 2.0, pde.final_time];
        let u_fine = solve_pde(&pde, &u0, &fine, &times).unwrap();
        let u0_coarse: Vec<f64> = u0.iter().step_by(2).copied().collect();
        let u_coarse = solve_pde(&pde, &u0_coarse, &coarse, &times).unwrap();
        let worst = (0..times.len())
            .map(|r| {
                let f: Vec<f64> = u_fine.row(r).iter().step_by(2).copied().collect();
                rel_l2(u_coarse.row(r), &f)
            })
            .fold(0.0, f64::max);
        out.push((pde.equation.name().to_string(), worst));
    }
    out
}
