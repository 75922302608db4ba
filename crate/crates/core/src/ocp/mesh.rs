use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized collocation nodes on `[0, 1]`; real time is `tf * tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    nodes: Vec<f64>,
}

impl Mesh {
    /// `count` equally spaced nodes (so `count - 1` intervals).
    pub fn uniform(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidArgument(format!("mesh needs >= 2 nodes, got {count}")));
        }
        let last = (count - 1) as f64;
        let mut nodes: Vec<f64> = (0..count).map(|k| k as f64 / last).collect();
        nodes[count - 1] = 1.0;
        Ok(Mesh { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        let ok = nodes.len() >= 2
            && nodes[0] == 0.0
            && *nodes.last().unwrap() == 1.0
            && nodes.windows(2).all(|w| w[1] > w[0]);
        if !ok {
            return Err(Error::InvalidArgument(
                "mesh nodes must increase strictly from 0 to 1".into(),
            ));
        }
        Ok(Mesh { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes.
    pub fn count(&self) -> usize {
        self.nodes.len()
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Normalized width of interval `k`.
    pub fn width(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Mesh with each flagged interval split at its midpoint.
    pub fn split(&self, flagged: &[bool]) -> Mesh {
        assert_eq!(flagged.len(), self.intervals());
        let mut nodes = Vec::with_capacity(self.nodes.len() + flagged.len());
        for k in 0..self.intervals() {
            nodes.push(self.nodes[k]);
            if flagged[k] {
                nodes.push(0.5 * (self.nodes[k] + self.nodes[k + 1]));
            }
        }
        nodes.push(1.0);
        Mesh { nodes }
    }
}
