//! Forward/backward pass accounting for shared-branch training versus
//! independent single-operator models.
//!
//! With `P_i = Σ_j N_{p,i,j}` the number of training values of operator `i`:
//!
//! ```text
//! C_MOL = Σ_i P_i · N_{b,i} + q · P_i · N_a
//! C_SOL = Σ_i P'_i · (N'_{b,i} + N'_{a,i})
//! ```
//!
//! Pass costs count one forward plus one backward pass per training sample
//! per epoch, so a run of `N_I` epochs has `N_b = N_a = 2 N_I` for identical
//! networks.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dedicated-network workload of one operator in the shared-branch model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModnoOperatorCounts {
    /// `N_{p,i,j}`: one entry per input function, so `len() = N_{u,i}`.
    pub query_counts: Vec<i64>,
    /// `N_{b,i}`: passes per training sample through the operator's trunk.
    pub trunk_passes: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModnoCounts {
    pub operators: Vec<ModnoOperatorCounts>,
    /// `N_a`: passes per training sample through the shared branch.
    pub shared_passes: i64,
}

/// Workload of one independently trained single-operator model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolOperatorCounts {
    pub query_counts: Vec<i64>,
    pub trunk_passes: i64,
    pub branch_passes: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolCounts {
    pub operators: Vec<SolOperatorCounts>,
}

fn total_queries(counts: &[i64]) -> Result<i64> {
    if let Some(bad) = counts.iter().find(|&&c| c < 0) {
        return Err(Error::config(format!("negative query count {bad}")));
    }
    Ok(counts.iter().sum())
}

fn non_negative(name: &str, v: i64) -> Result<i64> {
    if v < 0 {
        return Err(Error::config(format!("{name} must be >= 0, got {v}")));
    }
    Ok(v)
}

/// `C_MOL` for shared-data fraction `q`.
pub fn cost_modno(counts: &ModnoCounts, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config(format!("shared data fraction must be in [0, 1], got {q}")));
    }
    let n_a = non_negative("shared pass count", counts.shared_passes)?;
    let mut dedicated: i64 = 0;
    let mut shared: i64 = 0;
    for op in &counts.operators {
        let p = total_queries(&op.query_counts)?;
        dedicated += p * non_negative("trunk pass count", op.trunk_passes)?;
        shared += p * n_a;
    }
    // Both terms are exact integers; at q = 1 the sum rounds exactly like
    // the integer total used by `cost_sol`.
    Ok(dedicated as f64 + q * shared as f64)
}

/// `C_SOL` for independently trained single-operator models.
pub fn cost_sol(counts: &SolCounts) -> Result<f64> {
    let mut total: i64 = 0;
    for op in &counts.operators {
        let p = total_queries(&op.query_counts)?;
        let b = non_negative("trunk pass count", op.trunk_passes)?;
        let a = non_negative("branch pass count", op.branch_passes)?;
        total += p * (b + a);
    }
    Ok(total as f64)
}

/// Cost comparison at one shared-data fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub modno: ModnoCounts,
    pub sol: SolCounts,
    pub q: f64,
    pub c_mol: f64,
    pub c_sol: f64,
}

impl CostLedger {
    pub fn new(modno: ModnoCounts, sol: SolCounts, q: f64) -> Result<Self> {
        let c_mol = cost_modno(&modno, q)?;
        let c_sol = cost_sol(&sol)?;
        Ok(CostLedger {
            modno,
            sol,
            q,
            c_mol,
            c_sol,
        })
    }

    /// Ledger for identical networks trained on the same data for `epochs`
    /// epochs: every pass cost is `2 · epochs`.
    pub fn matched(query_counts: &[Vec<i64>], epochs: i64, q: f64) -> Result<Self> {
        let passes = 2 * epochs;
        let modno = ModnoCounts {
            operators: query_counts
                .iter()
                .map(|c| ModnoOperatorCounts {
                    query_counts: c.clone(),
                    trunk_passes: passes,
                })
                .collect(),
            shared_passes: passes,
        };
        let sol = SolCounts {
            operators: query_counts
                .iter()
                .map(|c| SolOperatorCounts {
                    query_counts: c.clone(),
                    trunk_passes: passes,
                    branch_passes: passes,
                })
                .collect(),
        };
        Self::new(modno, sol, q)
    }

    pub fn ratio(&self) -> f64 {
        if self.c_sol == 0.0 {
            return 0.0;
        }
        self.c_mol / self.c_sol
    }
}
