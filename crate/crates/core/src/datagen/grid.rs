use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Periodic uniform grid `x_j = j L / N`, `j = 0..N-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub length: f64,
    pub n_points: usize,
}

impl Grid1D {
    pub fn new(length: f64, n_points: usize) -> Result<Self> {
        let g = Grid1D { length, n_points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::config(format!("domain length must be positive, got {}", self.length)));
        }
        if self.n_points < 8 || self.n_points % 2 != 0 {
            return Err(Error::config(format!(
                "grid needs an even point count >= 8, got {}",
                self.n_points
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_points as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| j as f64 * self.dx()).collect()
    }

    /// Same domain with twice the resolution.
    pub fn refined(&self) -> Grid1D {
        Grid1D {
            length: self.length,
            n_points: 2 * self.n_points,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_increasing_and_exclude_endpoint() {
        let g = Grid1D::new(2.0, 16).unwrap();
        let x = g.points();
        assert_eq!(x.len(), 16);
        assert_eq!(x[0], 0.0);
        assert!(x.windows(2).all(|w| w[1] > w[0]));
        assert!(*x.last().unwrap() < 2.0);
    }

    #[test]
    fn rejects_small_or_odd_grids() {
        assert!(Grid1D::new(1.0, 6).is_err());
        assert!(Grid1D::new(1.0, 17).is_err());
        assert!(Grid1D::new(0.0, 16).is_err());
    }
}
