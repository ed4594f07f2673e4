//! Scenario configuration: a single JSON document holding every parameter of
//! a run. All robot and target indices in files are one-based; conversion to
//! the zero-based internal convention happens in the accessors here.

use serde::{Deserialize, Serialize};

use crate::control::{CameraParams, Gains, WeightParams};
use crate::error::{Error, Result};
use crate::simulation::targets::TargetTrajectory;
use crate::Integrator;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    pub center: Vec<f64>,
    pub side: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    pub gamma_a: f64,
    pub gamma_s: f64,
    /// One-based pair (iota, kappa): iota measures the distance to kappa.
    pub scale_edge: (usize, usize),
    pub init_noise_std: f64,
    /// Std of the optional Gaussian noise on measured cosines (0 = noise-free).
    #[serde(default)]
    pub measurement_noise_std: f64,
    /// Internal integrator substeps per simulation step. Measurements are
    /// sampled once per step and held; the substeps resolve the stiff
    /// estimator flow that a high angle gain produces.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    20
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Integrator,
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dimension: usize,
    pub robots: usize,
    pub seed: u64,
    pub placement: PlacementConfig,
    pub camera: CameraParams,
    pub weights: WeightParams,
    pub gains: Gains,
    #[serde(default)]
    pub localization: Option<LocalizationConfig>,
    #[serde(default)]
    pub targets: Vec<TargetTrajectory>,
    /// One-based target index per robot (entry `i` is robot `i + 1`);
    /// required exactly when targets are present.
    #[serde(default)]
    pub assignments: Vec<usize>,
    pub integrator: IntegratorConfig,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dimension == 2 || self.dimension == 3) {
            return Err(Error::InvalidConfig(format!(
                "dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        if self.robots < 3 {
            return Err(Error::InvalidConfig(format!(
                "a scenario needs at least 3 robots, got {}",
                self.robots
            )));
        }
        if self.placement.center.len() != self.dimension {
            return Err(Error::InvalidConfig(format!(
                "placement center has {} coordinates, expected {}",
                self.placement.center.len(),
                self.dimension
            )));
        }
        if self.placement.side <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "placement side must be positive, got {}",
                self.placement.side
            )));
        }
        self.camera.validate()?;
        self.weights.validate_against(&self.camera)?;
        self.gains.validate()?;
        if let Some(loc) = &self.localization {
            if loc.gamma_a <= 0.0 || loc.gamma_s <= 0.0 {
                return Err(Error::InvalidConfig(
                    "localization gains must be positive".into(),
                ));
            }
            if loc.init_noise_std < 0.0 || loc.measurement_noise_std < 0.0 {
                return Err(Error::InvalidConfig(
                    "localization noise levels cannot be negative".into(),
                ));
            }
            if loc.substeps == 0 {
                return Err(Error::InvalidConfig(
                    "localization needs at least one substep".into(),
                ));
            }
            let (iota, kappa) = loc.scale_edge;
            for (name, v) in [("iota", iota), ("kappa", kappa)] {
                if v < 1 || v > self.robots {
                    return Err(Error::InvalidConfig(format!(
                        "scale edge {name} = {v} out of range 1..={}",
                        self.robots
                    )));
                }
            }
            if iota == kappa {
                return Err(Error::InvalidConfig(
                    "scale edge needs two distinct robots".into(),
                ));
            }
        }
        for target in &self.targets {
            target.validate(self.dimension)?;
        }
        if self.targets.is_empty() {
            if !self.assignments.is_empty() {
                return Err(Error::InvalidConfig(
                    "assignments given but no targets defined".into(),
                ));
            }
        } else {
            if self.assignments.len() != self.robots {
                return Err(Error::InvalidConfig(format!(
                    "{} assignments for {} robots",
                    self.assignments.len(),
                    self.robots
                )));
            }
            for (robot, &target) in self.assignments.iter().enumerate() {
                if target < 1 || target > self.targets.len() {
                    return Err(Error::InvalidConfig(format!(
                        "robot {} assigned to target {target}, have {} targets",
                        robot + 1,
                        self.targets.len()
                    )));
                }
            }
        }
        if self.integrator.dt <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.integrator.dt
            )));
        }
        if self.integrator.t_end < self.integrator.dt {
            return Err(Error::InvalidConfig(format!(
                "t_end = {} is shorter than one step",
                self.integrator.t_end
            )));
        }
        Ok(())
    }

    /// Zero-based target index for a robot, when missions are configured.
    pub fn target_of(&self, robot: usize) -> Option<usize> {
        self.assignments.get(robot).map(|&t| t - 1)
    }

    /// Zero-based scale edge of the localization co-run.
    pub fn scale_edge_zero_based(&self) -> Option<(usize, usize)> {
        self.localization
            .as_ref()
            .map(|l| (l.scale_edge.0 - 1, l.scale_edge.1 - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ScenarioConfig {
        ScenarioConfig {
            dimension: 3,
            robots: 5,
            seed: 1,
            placement: PlacementConfig {
                center: vec![80.0, 20.0, 20.0],
                side: 40.0,
            },
            camera: CameraParams {
                range: 30.0,
                fov_cos: 0.5,
            },
            weights: WeightParams {
                a_r: 24.0,
                b_r: 30.0,
                a_f: 0.5,
                b_f: 0.7,
            },
            gains: Gains {
                gamma_r: 5.0,
                gamma_c: 1.0,
                gamma_m: 25.0,
                gamma_r_ang: 0.5,
                gamma_m_ang: 2.5,
                mu_r: 6.0,
                mu_f: 1.0,
                rho_t: 20.0,
                u_max: 10.0,
            },
            localization: Some(LocalizationConfig {
                gamma_a: 1000.0,
                gamma_s: 0.05,
                scale_edge: (1, 2),
                init_noise_std: 2.0,
                measurement_noise_std: 0.0,
                substeps: 20,
            }),
            targets: vec![TargetTrajectory::Fixed {
                position: vec![50.0, 50.0, 20.0],
            }],
            assignments: vec![1, 1, 1, 1, 1],
            integrator: IntegratorConfig {
                method: Integrator::Rk4,
                dt: 0.01,
                t_end: 1.0,
            },
        }
    }

    #[test]
    fn round_trips_through_json() {
        let config = base_config();
        let text = config.to_json();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(back.robots, config.robots);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn missing_field_is_named_in_the_error() {
        let err = ScenarioConfig::from_json("{\"dimension\": 3}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing field"), "{msg}");
        assert!(msg.contains("robots"), "{msg}");
    }

    #[test]
    fn validation_failures_are_specific() {
        let mut c = base_config();
        c.assignments = vec![1, 1, 1];
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.assignments = vec![2, 1, 1, 1, 1];
        assert!(c.validate().unwrap_err().to_string().contains("target 2"));

        let mut c = base_config();
        c.localization.as_mut().unwrap().scale_edge = (1, 6);
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.weights.b_r = 40.0;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.integrator.dt = 0.0;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.targets.clear();
        assert!(c.validate().is_err());
        c.assignments.clear();
        assert!(c.validate().is_ok());
    }

    #[test]
    fn one_based_accessors_convert() {
        let c = base_config();
        assert_eq!(c.target_of(0), Some(0));
        assert_eq!(c.scale_edge_zero_based(), Some((0, 1)));
    }
}
