//! On-disk framework description: JSON with one-based vertex indices and
//! row-major rotation matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use anglerig_core::error::{Error, Result};
use anglerig_core::{DirectedGraph, Framework, JointState};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameworkFile {
    pub d: usize,
    pub positions: Vec<Vec<f64>>,
    /// Row-major d x d matrices, one per vertex; omit for angle-only files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotations: Option<Vec<Vec<f64>>>,
    /// One-based (observer, observed) pairs.
    pub edges: Vec<Vec<usize>>,
}

impl FrameworkFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_framework(&self) -> Result<Framework> {
        let n = self.positions.len();
        let positions: Vec<DVector<f64>> = self
            .positions
            .iter()
            .map(|p| {
                if p.len() != self.d {
                    Err(Error::InvalidConfig(format!(
                        "position with {} coordinates in a d = {} file",
                        p.len(),
                        self.d
                    )))
                } else {
                    Ok(DVector::from_vec(p.clone()))
                }
            })
            .collect::<Result<_>>()?;
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            if e.len() != 2 {
                return Err(Error::InvalidConfig(format!(
                    "edge {e:?} must have exactly two vertices"
                )));
            }
            if e[0] == 0 || e[1] == 0 {
                return Err(Error::InvalidConfig(
                    "vertex indices are one-based; 0 is out of range".into(),
                ));
            }
            edges.push((e[0] - 1, e[1] - 1));
        }
        let graph = DirectedGraph::new(n, edges)?;
        let state = match &self.rotations {
            Some(rows) => {
                let rotations: Vec<DMatrix<f64>> = rows
                    .iter()
                    .map(|r| {
                        if r.len() != self.d * self.d {
                            Err(Error::InvalidConfig(format!(
                                "rotation with {} entries in a d = {} file",
                                r.len(),
                                self.d
                            )))
                        } else {
                            Ok(DMatrix::from_row_slice(self.d, self.d, r))
                        }
                    })
                    .collect::<Result<_>>()?;
                JointState::from_poses(positions, rotations)?
            }
            None => JointState::from_positions(positions)?,
        };
        Framework::new(graph, state)
    }
}
