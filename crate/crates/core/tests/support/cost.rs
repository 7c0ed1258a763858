//! Cost-formula identities on random workloads.

use modno::trainer::cost::{ModnoCounts, ModnoOperatorCounts, SolCounts, SolOperatorCounts};
use modno::trainer::{cost_modno, cost_sol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RATIO_TOL: f64 = 1e-12;
pub const RATIO_QS: [f64; 3] = [0.9, 0.8, 0.7];

/// Random shared-branch workload and the matching single-operator workload:
/// same data, same per-sample trunk passes, and `N'_a = N_a`.
pub fn random_instance(rng: &mut ChaCha8Rng, equal_passes: bool) -> (ModnoCounts, SolCounts) {
    let n_op = rng.gen_range(1..=5);
    let n_a = rng.gen_range(1..=2000i64);
    let mut modno = ModnoCounts {
        operators: Vec::new(),
        shared_passes: n_a,
    };
    let mut sol = SolCounts { operators: Vec::new() };
    for _ in 0..n_op {
        let n_u = rng.gen_range(0..=300);
        let counts: Vec<i64> = (0..n_u).map(|_| rng.gen_range(0..=1024)).collect();
        let n_b = if equal_passes { n_a } else { rng.gen_range(1..=2000) };
        modno.operators.push(ModnoOperatorCounts {
            query_counts: counts.clone(),
            trunk_passes: n_b,
        });
        sol.operators.push(SolOperatorCounts {
            query_counts: counts,
            trunk_passes: n_b,
            branch_passes: n_a,
        });
    }
    (modno, sol)
}

/// Number of instances (out of `n`) where `C_MOL(q = 1)` and `C_SOL` differ
/// in any bit.
pub fn q1_mismatches(seed: u64, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let (m, s) = random_instance(&mut rng, false);
            cost_modno(&m, 1.0).unwrap().to_bits() != cost_sol(&s).unwrap().to_bits()
        })
        .count()
}

/// Worst `|C_MOL / C_SOL − (1 + q)/2|` over `n` equal-pass instances and the
/// fractions in [`RATIO_QS`].
pub fn worst_ratio_deviation(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n {
        let (m, s) = random_instance(&mut rng, true);
        let c_sol = cost_sol(&s).unwrap();
        if c_sol == 0.0 {
            continue;
        }
        for q in RATIO_QS {
            let r = cost_modno(&m, q).unwrap() / c_sol;
            worst = worst.max((r - (1.0 + q) / 2.0).abs());
        }
        done += 1;
    }
    worst
}
