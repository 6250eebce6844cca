//! State types of the three processes: integer particle counts per cell,
//! real virus mass per cell, and the dual triple (q, marks, log-weight).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-limit state: one entry per cell holding an exact particle count.
/// The mass of cell `i` is `zeta * counts[i]`; it is never stored as a
/// float. Cells with count 0 are retained (cells never die).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleState {
    pub counts: Vec<u64>,
}

impl ParticleState {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn cell_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total_particles(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Materialized cell masses `zeta * n_i`.
    pub fn masses(&self, zeta: f64) -> Vec<f64> {
        self.counts.iter().map(|&n| zeta * n as f64).collect()
    }
}

/// Limit state: nonnegative virus mass per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitState {
    pub masses: Vec<f64>,
}

impl LimitState {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::Domain("cell masses must be nonnegative".into()));
        }
        Ok(Self { masses })
    }

    pub fn cell_count(&self) -> usize {
        self.masses.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Dual state: q in (0,1], the marks x_1..x_m (m >= 1) and the accumulated
/// Feynman-Kac log-weight `r * sum over pieces of M^2 * int q ds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub q: f64,
    pub marks: Vec<f64>,
    #[serde(default)]
    pub log_weight: f64,
}

impl DualState {
    pub fn new(q: f64, marks: Vec<f64>) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Domain(format!("q must lie in (0,1], got {q}")));
        }
        if marks.is_empty() {
            return Err(Error::Domain("dual state needs at least one mark".into()));
        }
        if marks.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::Domain("marks must be nonnegative".into()));
        }
        Ok(Self {
            q,
            marks,
            log_weight: 0.0,
        })
    }

    pub fn mark_count(&self) -> usize {
        self.marks.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn particle_masses_materialize() {
        let s = ParticleState::new(vec![0, 2, 5]);
        assert_eq!(s.masses(0.5), vec![0.0, 1.0, 2.5]);
        assert_eq!(s.total_particles(), 7);
        assert_eq!(s.cell_count(), 3);
    }

    #[test]
    fn limit_state_rejects_negative_mass() {
        assert!(LimitState::new(vec![1.0, -0.1]).is_err());
        assert!(LimitState::new(vec![]).is_ok());
    }

    #[test]
    fn dual_state_validation() {
        assert!(DualState::new(0.0, vec![1.0]).is_err());
        assert!(DualState::new(1.1, vec![1.0]).is_err());
        assert!(DualState::new(0.5, vec![]).is_err());
        assert!(DualState::new(0.5, vec![0.0, 2.0]).is_ok());
    }
}
