//! Configuration file for standalone localization runs: a fixed truth, a
//! family of sensing graphs cycled round-robin, and the estimator settings.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use anglerig_core::error::{Error, Result};
use anglerig_core::simulation::IntegratorConfig;
use anglerig_core::DirectedGraph;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeFileConfig {
    pub dimension: usize,
    pub seed: u64,
    /// Fixed true positions, meters.
    pub truth: Vec<Vec<f64>>,
    /// Family of sensing graphs as one-based edge lists.
    pub graphs: Vec<Vec<Vec<usize>>>,
    /// Dwell time of the round-robin switching signal, seconds.
    pub dwell: f64,
    pub gamma_a: f64,
    pub gamma_s: f64,
    /// One-based (iota, kappa) scale pair.
    pub scale_edge: (usize, usize),
    pub init_noise_std: f64,
    pub integrator: IntegratorConfig,
}

impl LocalizeFileConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: LocalizeFileConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dimension == 2 || self.dimension == 3) {
            return Err(Error::InvalidConfig(format!(
                "dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        let n = self.truth.len();
        if n < 3 {
            return Err(Error::InvalidConfig(format!(
                "localization needs at least 3 robots, got {n}"
            )));
        }
        if self.truth.iter().any(|p| p.len() != self.dimension) {
            return Err(Error::InvalidConfig(
                "truth position with the wrong dimension".into(),
            ));
        }
        if self.graphs.is_empty() {
            return Err(Error::InvalidConfig("at least one graph is required".into()));
        }
        if self.dwell <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "dwell must be positive, got {}",
                self.dwell
            )));
        }
        if self.dwell < self.integrator.dt {
            return Err(Error::InvalidConfig(format!(
                "dwell time {} is shorter than one integrator step {}",
                self.dwell, self.integrator.dt
            )));
        }
        if self.gamma_a <= 0.0 || self.gamma_s <= 0.0 {
            return Err(Error::InvalidConfig("gains must be positive".into()));
        }
        if self.init_noise_std < 0.0 {
            return Err(Error::InvalidConfig("noise std cannot be negative".into()));
        }
        let (iota, kappa) = self.scale_edge;
        if iota < 1 || iota > n || kappa < 1 || kappa > n || iota == kappa {
            return Err(Error::InvalidConfig(format!(
                "scale edge ({iota}, {kappa}) out of range for {n} robots"
            )));
        }
        if self.integrator.dt <= 0.0 || self.integrator.t_end < self.integrator.dt {
            return Err(Error::InvalidConfig("bad integrator settings".into()));
        }
        Ok(())
    }

    pub fn truth_vectors(&self) -> Vec<DVector<f64>> {
        self.truth
            .iter()
            .map(|p| DVector::from_vec(p.clone()))
            .collect()
    }

    pub fn graph_family(&self) -> Result<Vec<DirectedGraph>> {
        let n = self.truth.len();
        self.graphs
            .iter()
            .map(|edges| {
                let converted: Vec<(usize, usize)> = edges
                    .iter()
                    .map(|e| {
                        if e.len() != 2 || e[0] == 0 || e[1] == 0 {
                            Err(Error::InvalidConfig(format!(
                                "edge {e:?} must be a one-based pair"
                            )))
                        } else {
                            Ok((e[0] - 1, e[1] - 1))
                        }
                    })
                    .collect::<Result<_>>()?;
                DirectedGraph::new(n, converted)
            })
            .collect()
    }

    pub fn scale_edge_zero_based(&self) -> (usize, usize) {
        (self.scale_edge.0 - 1, self.scale_edge.1 - 1)
    }
}
