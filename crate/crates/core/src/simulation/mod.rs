//! Scenario execution: integrate the robot fleet under the composite
//! controller, regenerate the sensing graph every step, co-run the position
//! estimator, and log the metrics a run is judged by.
//!
//! The loop is single-threaded and all randomness flows from the one seed in
//! the scenario, so identical configurations produce identical traces.

pub mod config;
pub mod random;
pub mod targets;

pub use config::{IntegratorConfig, LocalizationConfig, PlacementConfig, ScenarioConfig};
pub use random::{random_framework, random_rotation};
pub use targets::TargetTrajectory;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::control::{
    all_rigidity_controls, collision_control, composite_control, distance_scaled_eigenvalue,
    mission_control, sensing_edges, target_collision_control, weighted_rigidity, ControlInput,
    WeightedRigidity, MULTIPLICITY_GAP_TOL,
};
use crate::error::{Error, Result};
use crate::geometry::{rotation_step, skew, JointState};
use crate::graph::DirectedGraph;
use crate::localization::{estimator_step, EstimatorState, Measurements};
use crate::rigidity::{is_inf_angle_rigid, rigidity_eigenvalue_index, RANK_TOL};
use crate::Integrator;

/// The weighted eigenvalue gap fell under the multiplicity tolerance and the
/// previous rigidity action was reused.
pub const FLAG_MULTIPLICITY: u32 = 1;
/// The eigenvalue floor clamped the rigidity action magnitude.
pub const FLAG_CLAMP: u32 = 2;
/// The sensing framework failed the angle-rigidity rank test this step.
pub const FLAG_NOT_IAR: u32 = 4;

/// Robots closer than this abort the run.
pub const COLLISION_ABORT_DISTANCE: f64 = 1e-3;

const SEED_OFFSET_PLACEMENT: u64 = 1;
const SEED_OFFSET_ESTIMATOR_INIT: u64 = 2;
const SEED_OFFSET_MEASUREMENT_NOISE: u64 = 3;

/// Everything logged at one time stamp.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub positions: Vec<DVector<f64>>,
    pub rotations: Vec<DMatrix<f64>>,
    pub edges: Vec<(usize, usize)>,
    /// Distance-scaled unweighted rigidity eigenvalue of the active graph.
    pub lambda: f64,
    /// Weighted rigidity eigenvalue (sensing margins included).
    pub lambda_weighted: f64,
    pub is_iar: bool,
    /// Aim error toward the assigned target in degrees; NaN without a target.
    pub aim_deg: Vec<f64>,
    /// Per-robot estimate error `||p_hat - p||`; empty when the estimator is off.
    pub loc_err: Vec<f64>,
    pub flags: u32,
    pub min_distance: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AbortRecord {
    pub t: f64,
    pub reason: String,
    pub min_distance: f64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub dimension: usize,
    pub n_robots: usize,
    pub records: Vec<StepRecord>,
    pub abort: Option<AbortRecord>,
}

impl SimTrace {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// Rotation whose first column points from `from` toward `target`, completed
/// against the gravity axis (last coordinate) by Gram-Schmidt. The camera
/// convention fixes only the axis; the roll follows gravity.
pub fn aim_frame(from: &DVector<f64>, target: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = from.len();
    let diff = target - from;
    if diff.norm() < 1e-12 {
        return Err(Error::CoincidentPoints(diff.norm()));
    }
    let axis = diff.normalize();
    let mut m = DMatrix::zeros(d, d);
    m.set_column(0, &axis);
    if d == 2 {
        m[(0, 1)] = -axis[1];
        m[(1, 1)] = axis[0];
    } else {
        let mut up = DVector::zeros(3);
        up[2] = 1.0;
        if (axis[2].abs() - 1.0).abs() < 1e-9 {
            // camera axis along gravity: fall back to the second basis vector
            up = DVector::zeros(3);
            up[1] = 1.0;
        }
        let second = (&up - axis.dot(&up) * &axis).normalize();
        let third = skew(&axis)? * &second;
        m.set_column(1, &second);
        m.set_column(2, &third);
    }
    Ok(m)
}

/// Draws the initial fleet: positions uniform in the placement cube, cameras
/// aimed at the barycenter, estimator seeded around the truth, and the
/// sensing graph of that pose.
///
/// Deployment assumes the fleet starts mutually sensing and angle rigid, so
/// draws whose sensing framework fails the rigidity test are rejected and
/// redrawn (still driven by the one placement seed).
pub fn initialize(
    config: &ScenarioConfig,
) -> Result<(JointState, Option<EstimatorState>, DirectedGraph)> {
    let d = config.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SEED_OFFSET_PLACEMENT));
    let center = DVector::from_vec(config.placement.center.clone());
    let half = config.placement.side / 2.0;
    let has_eigen_index = d * config.robots > rigidity_eigenvalue_index(d);
    let mut state_or = None;
    for _ in 0..1000 {
        let positions: Vec<DVector<f64>> = (0..config.robots)
            .map(|_| &center + DVector::from_fn(d, |_, _| rng.random_range(-half..half)))
            .collect();
        let mut bary = DVector::zeros(d);
        for p in &positions {
            bary += p;
        }
        bary /= config.robots as f64;
        let rotations: Vec<DMatrix<f64>>= match positions
            .iter()
            .map(|p| aim_frame(p, &bary))
            .collect::<Result<_>>()
        {
            Ok(r) => r,
            Err(_) => continue,
        };
        let candidate = match JointState::from_poses(positions, rotations) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if candidate.min_pairwise_distance() < 2.0 * COLLISION_ABORT_DISTANCE {
            continue;
        }
        if has_eigen_index {
            let wr = weighted_rigidity(&candidate, &config.camera, &config.weights)?;
            let (iar, _) =
                is_inf_angle_rigid(candidate.positions(), &wr.angles, RANK_TOL)?;
            // demand a margin, not bare rank: a barely-rigid start leaves the
            // maintenance controller no room before the first reconfiguration
            if !iar || wr.eigenpair.eigenvalue < 2e-2 {
                continue;
            }
        }
        state_or = Some(candidate);
        break;
    }
    let state = state_or.ok_or(Error::ResampleLimit(1000))?;

    let estimator = match &config.localization {
        Some(loc) => {
            let mut noise_rng =
                ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SEED_OFFSET_ESTIMATOR_INIT));
            let estimates: Vec<DVector<f64>> = state
                .positions()
                .iter()
                .map(|p| {
                    p + DVector::from_fn(d, |_, _| {
                        let n: f64 = noise_rng.sample(StandardNormal);
                        loc.init_noise_std * n
                    })
                })
                .collect();
            Some(EstimatorState::new(estimates, loc.gamma_a, loc.gamma_s)?)
        }
        None => None,
    };
    let graph = sensing_edges(&state, &config.camera)?;
    Ok((state, estimator, graph))
}

/// Holds what the controller remembers across steps: the last well-defined
/// rigidity actions, reused when the eigenvalue direction degenerates.
#[derive(Debug, Default)]
pub struct ControllerMemory {
    last_rigidity: Option<Vec<ControlInput>>,
}

/// Per-robot velocities (global-frame linear, body-frame angular) plus the
/// weighted-rigidity snapshot and flags of the evaluation.
struct Derivative {
    velocities: Vec<(DVector<f64>, DVector<f64>)>,
    rigidity: Option<WeightedRigidity>,
    flags: u32,
}

/// One full controller evaluation at a given state and time: sensing graph,
/// weighted eigenpair, two-phase rigidity exchange, collision and mission
/// actions, composed per robot.
fn closed_loop_derivative(
    state: &JointState,
    config: &ScenarioConfig,
    t: f64,
    memory: &mut ControllerMemory,
) -> Result<Derivative> {
    let d = config.dimension;
    let n = config.robots;
    let rotations = state.rotations()?.to_vec();
    let mut flags = 0;

    let has_eigen_index = d * n > rigidity_eigenvalue_index(d);
    let (rigidity, rig_inputs) = if has_eigen_index {
        let wr = weighted_rigidity(state, &config.camera, &config.weights)?;
        let inputs = if wr.eigenpair.multiplicity_gap < MULTIPLICITY_GAP_TOL {
            flags |= FLAG_MULTIPLICITY;
            match &memory.last_rigidity {
                Some(last) => last.clone(),
                None => vec![ControlInput::zeros(d); n],
            }
        } else {
            let (inputs, clamped) =
                all_rigidity_controls(state, &wr, &config.weights, config.gains.u_max)?;
            if clamped {
                flags |= FLAG_CLAMP;
            }
            memory.last_rigidity = Some(inputs.clone());
            inputs
        };
        (Some(wr), inputs)
    } else {
        (None, vec![ControlInput::zeros(d); n])
    };

    let graph = match &rigidity {
        Some(wr) => wr.graph.clone(),
        None => sensing_edges(state, &config.camera)?,
    };

    let mut velocities = Vec::with_capacity(n);
    for i in 0..n {
        let mut collision = collision_control(i, state, &graph, &config.camera)?;
        let mission = match config.target_of(i) {
            Some(target_idx) => {
                let target = config.targets[target_idx].position(t);
                if (&target - state.position(i)).norm() < 1e-9 {
                    ControlInput::zeros(d)
                } else {
                    collision +=
                        target_collision_control(i, state, &target, config.gains.rho_t)?;
                    mission_control(i, state, &target, &config.gains)?
                }
            }
            None => ControlInput::zeros(d),
        };
        let input = composite_control(&rig_inputs[i], &collision, &mission, &config.gains);
        if !input.is_finite() {
            return Err(Error::Precondition(format!(
                "non-finite control input for robot {}",
                i + 1
            )));
        }
        let v_global = &rotations[i] * &input.linear;
        velocities.push((v_global, input.angular));
    }
    Ok(Derivative {
        velocities,
        rigidity,
        flags,
    })
}

/// Advances every pose by the given velocities over `h` seconds: positions
/// linearly, rotations through the closed-form exponential.
fn retract(
    state: &JointState,
    velocities: &[(DVector<f64>, DVector<f64>)],
    h: f64,
) -> Result<JointState> {
    let positions: Vec<DVector<f64>> = state
        .positions()
        .iter()
        .zip(velocities)
        .map(|(p, (v, _))| p + v * h)
        .collect();
    let rotations: Vec<DMatrix<f64>> = state
        .rotations()?
        .iter()
        .zip(velocities)
        .map(|(r, (_, w))| {
            if w.norm() == 0.0 {
                Ok(r.clone())
            } else {
                rotation_step(r, w, h)
            }
        })
        .collect::<Result<_>>()?;
    // skip the constructor's pairwise re-validation: the caller checks the
    // collision abort threshold right after
    let mut next = state.clone();
    for i in 0..positions.len() {
        next.set_pose_unchecked(i, positions[i].clone(), rotations[i].clone());
    }
    Ok(next)
}

/// One closed-loop integration step from time `t`; returns the advanced state
/// together with the flags and rigidity snapshot of the step-start evaluation.
pub fn step(
    state: &JointState,
    config: &ScenarioConfig,
    t: f64,
    memory: &mut ControllerMemory,
) -> Result<(JointState, u32, Option<WeightedRigidity>)> {
    let dt = config.integrator.dt;
    let k1 = closed_loop_derivative(state, config, t, memory)?;
    let next = match config.integrator.method {
        Integrator::Euler => retract(state, &k1.velocities, dt)?,
        Integrator::Rk4 => {
            let mid1 = retract(state, &k1.velocities, dt / 2.0)?;
            let k2 = closed_loop_derivative(&mid1, config, t + dt / 2.0, memory)?;
            let mid2 = retract(state, &k2.velocities, dt / 2.0)?;
            let k3 = closed_loop_derivative(&mid2, config, t + dt / 2.0, memory)?;
            let end = retract(state, &k3.velocities, dt)?;
            let k4 = closed_loop_derivative(&end, config, t + dt, memory)?;
            let combined: Vec<(DVector<f64>, DVector<f64>)> = (0..config.robots)
                .map(|i| {
                    let v = (&k1.velocities[i].0
                        + 2.0 * &k2.velocities[i].0
                        + 2.0 * &k3.velocities[i].0
                        + &k4.velocities[i].0)
                        / 6.0;
                    let w = (&k1.velocities[i].1
                        + 2.0 * &k2.velocities[i].1
                        + 2.0 * &k3.velocities[i].1
                        + &k4.velocities[i].1)
                        / 6.0;
                    (v, w)
                })
                .collect();
            retract(state, &combined, dt)?
        }
    };
    Ok((next, k1.flags, k1.rigidity))
}

/// Builds the record for one time stamp from an already-computed rigidity
/// snapshot.
fn record_at(
    t: f64,
    state: &JointState,
    estimator: &Option<EstimatorState>,
    rigidity: &Option<WeightedRigidity>,
    config: &ScenarioConfig,
    flags_in: u32,
) -> Result<StepRecord> {
    let mut flags = flags_in;
    let (edges, lambda, lambda_weighted, is_iar) = match rigidity {
        Some(wr) => {
            let lambda = distance_scaled_eigenvalue(state.positions(), &wr.angles)?;
            let (iar, _) = is_inf_angle_rigid(state.positions(), &wr.angles, RANK_TOL)?;
            (
                wr.graph.edges().to_vec(),
                lambda,
                wr.eigenpair.eigenvalue,
                iar,
            )
        }
        None => (
            sensing_edges(state, &config.camera)?.edges().to_vec(),
            0.0,
            0.0,
            false,
        ),
    };
    if !is_iar {
        flags |= FLAG_NOT_IAR;
    }
    let rotations = state.rotations()?;
    let aim_deg: Vec<f64> = (0..config.robots)
        .map(|i| match config.target_of(i) {
            Some(target_idx) => {
                let target = config.targets[target_idx].position(t);
                let diff = &target - state.position(i);
                if diff.norm() < 1e-12 {
                    f64::NAN
                } else {
                    let zeta = diff.normalize().dot(&rotations[i].column(0));
                    zeta.clamp(-1.0, 1.0).acos().to_degrees()
                }
            }
            None => f64::NAN,
        })
        .collect();
    // estimation error modulo the frame the estimator cannot observe: the
    // per-robot residual of the best rigid alignment onto the truth
    let loc_err = match estimator {
        Some(est) => crate::localization::alignment_residuals(&est.estimates, state.positions())?,
        None => Vec::new(),
    };
    Ok(StepRecord {
        t,
        positions: state.positions().to_vec(),
        rotations: rotations.to_vec(),
        edges,
        lambda,
        lambda_weighted,
        is_iar,
        aim_deg,
        loc_err,
        flags,
        min_distance: state.min_pairwise_distance(),
    })
}

/// Runs a scenario to completion (or abort): deterministic in the config.
pub fn run(config: &ScenarioConfig) -> Result<SimTrace> {
    config.validate()?;
    let (mut state, mut estimator, _) = initialize(config)?;
    let mut memory = ControllerMemory::default();
    let mut noise_rng =
        ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SEED_OFFSET_MEASUREMENT_NOISE));
    let dt = config.integrator.dt;
    let steps = (config.integrator.t_end / dt).floor() as usize;

    let mut trace = SimTrace {
        dimension: config.dimension,
        n_robots: config.robots,
        records: Vec::with_capacity(steps + 1),
        abort: None,
    };

    for k in 0..=steps {
        let t = k as f64 * dt;
        let min_distance = state.min_pairwise_distance();
        if min_distance < COLLISION_ABORT_DISTANCE {
            trace.abort = Some(AbortRecord {
                t,
                reason: format!(
                    "collision: minimum pairwise distance {min_distance:.3e} m under {COLLISION_ABORT_DISTANCE:.0e} m"
                ),
                min_distance,
            });
            return Ok(trace);
        }
        if !state
            .positions()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
        {
            trace.abort = Some(AbortRecord {
                t,
                reason: "non-finite state".into(),
                min_distance,
            });
            return Ok(trace);
        }

        if k < steps {
            let (next, flags, rigidity) = step(&state, config, t, &mut memory)?;
            trace
                .records
                .push(record_at(t, &state, &estimator, &rigidity, config, flags)?);
            state = next;

            // estimator update from the new truth under the new sensing graph
            if let (Some(est), Some(loc)) = (&mut estimator, &config.localization) {
                let graph = sensing_edges(&state, &config.camera)?;
                let scale_edge = config.scale_edge_zero_based().unwrap();
                let meas = if loc.measurement_noise_std > 0.0 {
                    Measurements::from_truth_noisy(
                        state.positions(),
                        &graph,
                        scale_edge,
                        loc.measurement_noise_std,
                        &mut noise_rng,
                    )?
                } else {
                    Measurements::from_truth(state.positions(), &graph, scale_edge)?
                };
                let sub_dt = dt / loc.substeps as f64;
                for _ in 0..loc.substeps {
                    *est = estimator_step(est, &meas, sub_dt, config.integrator.method)?;
                }
            }
        } else {
            // terminal record: evaluate the metrics snapshot only
            let mut throwaway = ControllerMemory::default();
            let derivative = closed_loop_derivative(&state, config, t, &mut throwaway)?;
            trace.records.push(record_at(
                t,
                &state,
                &estimator,
                &derivative.rigidity,
                config,
                derivative.flags,
            )?);
        }
    }
    Ok(trace)
}
