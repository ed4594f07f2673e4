//! Target motion models. Parameters live in scenario files, not in code, so
//! new missions are a config edit.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A moving (or fixed) target with a continuous position in time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetTrajectory {
    Fixed {
        position: Vec<f64>,
    },
    /// Closed Catmull-Rom loop through the waypoints, traversed once per
    /// `period` seconds.
    Waypoints {
        points: Vec<Vec<f64>>,
        period: f64,
    },
    /// Azimuth/elevation sweep on a sphere; a circle in the plane.
    SphereLissajous {
        center: Vec<f64>,
        radius: f64,
        rate_az: f64,
        rate_el: f64,
        phase: f64,
    },
}

impl TargetTrajectory {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            TargetTrajectory::Fixed { position } => {
                if position.len() != dim {
                    return Err(Error::InvalidConfig(format!(
                        "fixed target has {} coordinates, expected {dim}",
                        position.len()
                    )));
                }
            }
            TargetTrajectory::Waypoints { points, period } => {
                if points.len() < 2 {
                    return Err(Error::InvalidConfig(
                        "waypoint trajectory needs at least two points".into(),
                    ));
                }
                if points.iter().any(|p| p.len() != dim) {
                    return Err(Error::InvalidConfig(format!(
                        "waypoint with wrong dimension (expected {dim})"
                    )));
                }
                if *period <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "waypoint period must be positive, got {period}"
                    )));
                }
            }
            TargetTrajectory::SphereLissajous { center, radius, .. } => {
                if center.len() != dim {
                    return Err(Error::InvalidConfig(format!(
                        "sphere center has {} coordinates, expected {dim}",
                        center.len()
                    )));
                }
                if *radius <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "sphere radius must be positive, got {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self, t: f64) -> DVector<f64> {
        match self {
            TargetTrajectory::Fixed { position } => DVector::from_vec(position.clone()),
            TargetTrajectory::Waypoints { points, period } => {
                catmull_rom_loop(points, t / period)
            }
            TargetTrajectory::SphereLissajous {
                center,
                radius,
                rate_az,
                rate_el,
                phase,
            } => {
                let c = DVector::from_vec(center.clone());
                let az = rate_az * t + phase;
                let el = rate_el * t;
                if center.len() == 2 {
                    c + *radius * DVector::from_vec(vec![az.cos(), az.sin()])
                } else {
                    c + *radius
                        * DVector::from_vec(vec![
                            az.cos() * el.cos(),
                            az.sin() * el.cos(),
                            el.sin(),
                        ])
                }
            }
        }
    }
}

/// Closed-loop Catmull-Rom interpolation: `u` counts loops, so `u = 0` and
/// `u = 1` are the first waypoint again. C^1 by construction.
fn catmull_rom_loop(points: &[Vec<f64>], u: f64) -> DVector<f64> {
    let k = points.len();
    let s = (u.rem_euclid(1.0)) * k as f64;
    let seg = (s.floor() as usize).min(k - 1);
    let frac = s - seg as f64;
    let at = |idx: isize| -> DVector<f64> {
        let wrapped = idx.rem_euclid(k as isize) as usize;
        DVector::from_vec(points[wrapped].clone())
    };
    let (p0, p1, p2, p3) = (
        at(seg as isize - 1),
        at(seg as isize),
        at(seg as isize + 1),
        at(seg as isize + 2),
    );
    let t = frac;
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p1.clone())
        + (&p2 - &p0) * t
        + (2.0 * &p0 - 5.0 * &p1 + 4.0 * &p2 - &p3) * t2
        + (3.0 * &p1 - &p0 - 3.0 * &p2 + &p3) * t3)
}
