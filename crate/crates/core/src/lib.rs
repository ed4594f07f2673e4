//! Angle and bearing rigidity for directed multi-robot sensing graphs.
//!
//! The crate covers four layers:
//!
//! * [`geometry`] and [`graph`]: kinematics on SE(d) for d in {2, 3} and the
//!   directed sensing graphs with the angle triples they induce.
//! * [`rigidity`]: rigidity matrices, rank and degeneracy tests, the rigidity
//!   eigenvalue, the bearing/angle equivalence checker, and the stacked
//!   cross-product solver.
//! * [`localization`]: the angle-based position estimator under switching
//!   sensing topologies, with alignment-based error metrics.
//! * [`control`] and [`simulation`]: sensing-constrained edge generation,
//!   smooth weights, the weighted rigidity eigenvalue with its body-frame
//!   gradient controller, collision avoidance, target tracking, and the
//!   scenario integrator that ties them together.
//!
//! [`fdcheck`] holds the finite-difference oracles used both by the test
//! suites and by the `gradcheck` verification command in the CLI.

pub mod control;
pub mod error;
pub mod fdcheck;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod localization;
pub mod rigidity;
pub mod simulation;

pub use error::{Error, Result};
pub use geometry::{JointState, Pose};
pub use graph::{angle_set, AngleSet, DirectedGraph};
pub use rigidity::{Framework, RigidityReport};

use serde::{Deserialize, Serialize};

/// Fixed-step integration schemes shared by the estimator and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}
