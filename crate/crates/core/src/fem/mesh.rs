use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on `h_max / h_min`.
pub const DEFAULT_QUASI_UNIFORMITY: f64 = 2.0;

/// A partition `0 = x_0 < x_1 < ... < x_n = 1` of the unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    h_max: f64,
    h_min: f64,
}

impl Mesh1D {
    pub fn uniform(intervals: usize) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::InvalidMesh(format!(
                "a uniform mesh needs at least 2 intervals for an interior node, got {intervals}"
            )));
        }
        let nodes = (0..=intervals).map(|j| j as f64 / intervals as f64).collect();
        Self::with_bound(nodes, DEFAULT_QUASI_UNIFORMITY)
    }

    /// Uniform mesh of width `2^-level`.
    pub fn dyadic(level: u32) -> Result<Self> {
        Self::uniform(1usize << level)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        Self::with_bound(nodes, DEFAULT_QUASI_UNIFORMITY)
    }

    pub fn with_bound(nodes: Vec<f64>, quasi_uniformity: f64) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least one interior node, got {} nodes",
                nodes.len()
            )));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::InvalidMesh("endpoints must be exactly 0 and 1".into()));
        }
        if let Some(x) = nodes.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidMesh(format!("non-finite node {x}")));
        }
        let mut h_max: f64 = 0.0;
        let mut h_min = f64::INFINITY;
        for (j, w) in nodes.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if gap <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "nodes {j} and {} are not strictly increasing ({} >= {})",
                    j + 1,
                    w[0],
                    w[1]
                )));
            }
            h_max = h_max.max(gap);
            h_min = h_min.min(gap);
        }
        let ratio = h_max / h_min;
        if ratio > quasi_uniformity * (1.0 + 1e-12) {
            return Err(Error::NotQuasiUniform {
                ratio,
                bound: quasi_uniformity,
            });
        }
        Ok(Mesh1D { nodes, h_max, h_min })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    pub fn interior_count(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    /// Interval widths, `widths[j] = x_{j+1} - x_j`.
    pub fn widths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Whether all intervals agree to rounding.
    pub fn is_uniform(&self) -> bool {
        let n = (self.nodes.len() - 1) as f64;
        self.nodes
            .iter()
            .enumerate()
            .all(|(j, x)| (x - j as f64 / n).abs() <= 1e-14)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_properties() {
        let m = Mesh1D::uniform(8).unwrap();
        assert_eq!(m.interior_count(), 7);
        assert!((m.h_max() - 0.125).abs() < 1e-15);
        assert!(m.is_uniform());
    }

    #[test]
    fn rejects_duplicates_and_bad_endpoints() {
        assert!(matches!(
            Mesh1D::from_nodes(vec![0.0, 0.5, 0.5, 1.0]),
            Err(Error::InvalidMesh(_))
        ));
        assert!(Mesh1D::from_nodes(vec![0.0, 0.5, 0.9]).is_err());
        assert!(Mesh1D::from_nodes(vec![0.0, 1.0]).is_err());
        assert!(Mesh1D::uniform(1).is_err());
    }

    #[test]
    fn rejects_non_quasi_uniform() {
        let r = Mesh1D::from_nodes(vec![0.0, 0.1, 0.6, 1.0]);
        assert!(matches!(r, Err(Error::NotQuasiUniform { .. })));
        assert!(Mesh1D::with_bound(vec![0.0, 0.1, 0.6, 1.0], 6.0).is_ok());
    }

    #[test]
    fn graded_mesh_is_not_uniform() {
        let m = Mesh1D::from_nodes(vec![0.0, 0.3, 0.55, 0.8, 1.0]).unwrap();
        assert!(!m.is_uniform());
        assert!((m.h_max() - 0.3).abs() < 1e-15);
        assert!((m.h_min() - 0.2).abs() < 1e-15);
    }
}
