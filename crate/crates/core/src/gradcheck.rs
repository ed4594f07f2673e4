//! Analytic-versus-finite-difference verification suites.
//!
//! Every analytic derivative in the crate is checked against central
//! differences of the quantity it claims to differentiate, on freshly drawn
//! random states. The suites power the `gradcheck` command and double as the
//! regression harness for the gradient formulas; the finite-difference side
//! lives in [`crate::fdcheck`] and never touches the analytic code paths.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{
    all_rigidity_controls, collision_control, collision_cost, mission_control, mission_cost,
    sensing_edges, weighted_rigidity, CameraParams, Gains, WeightParams,
};
use crate::error::Result;
use crate::fdcheck;
use crate::geometry::{rotation_exp, so_gradient_quadratic, spin_dim, JointState};
use crate::localization::{
    localization_cost, localization_gradient, EstimatorState, Measurements,
};
use crate::rigidity::{
    angle_function, angle_rigidity_matrix, bearing_function, bearing_rigidity_matrix, Framework,
};
use crate::simulation::random::{random_framework, random_rotation};

/// Result of one verification family.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FamilyReport {
    pub name: &'static str,
    pub trials: usize,
    pub worst_rel_err: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Random states per family and dimension.
    pub trials: usize,
    pub seed: u64,
    /// Test fixture: negates one analytic gradient so a broken formula is
    /// provably caught. Never set outside negative-control tests.
    pub sign_flip: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 7,
            sign_flip: false,
        }
    }
}

const JACOBIAN_THRESHOLD: f64 = 1e-6;
const POTENTIAL_THRESHOLD: f64 = 1e-6;
const EIGEN_GRADIENT_THRESHOLD: f64 = 1e-4;

fn camera() -> CameraParams {
    CameraParams {
        range: 30.0,
        fov_cos: 0.5,
    }
}

fn weight_params() -> WeightParams {
    WeightParams {
        a_r: 24.0,
        b_r: 30.0,
        a_f: 0.5,
        b_f: 0.7,
    }
}

fn gains() -> Gains {
    Gains {
        gamma_r: 5.0,
        gamma_c: 1.0,
        gamma_m: 25.0,
        gamma_r_ang: 0.5,
        gamma_m_ang: 2.5,
        mu_r: 6.0,
        mu_f: 1.0,
        rho_t: 20.0,
        u_max: 10.0,
    }
}

/// Rotation whose first column points at `target`.
fn aim(from: &DVector<f64>, target: &DVector<f64>) -> DMatrix<f64> {
    crate::simulation::aim_frame(from, target).expect("distinct points")
}

/// A camera-constrained team used by the control-side families: clustered
/// positions, cameras near the barycenter, resampled until the weighted
/// eigenvalue is healthy, its gap wide enough for differentiability, and all
/// ramp arguments clear of the C^1 kinks (where central differences degrade).
fn random_team_state(rng: &mut ChaCha8Rng, n: usize, d: usize) -> JointState {
    let wp = weight_params();
    'outer: loop {
        let positions: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-9.0..9.0)))
            .collect();
        let mut bary = DVector::zeros(d);
        for p in &positions {
            bary += p;
        }
        bary /= n as f64;
        let rotations: Vec<DMatrix<f64>> = positions
            .iter()
            .map(|p| {
                let dp = spin_dim(d);
                let tweak = DVector::from_fn(dp, |_, _| rng.random_range(-0.25..0.25));
                aim(p, &bary) * rotation_exp(&tweak).unwrap()
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let diff = &positions[j] - &positions[i];
                let dist = diff.norm();
                if dist < 1.0 {
                    continue 'outer;
                }
                let zeta = diff.normalize().dot(&rotations[i].column(0));
                if [wp.a_r, wp.b_r].iter().any(|k| (dist - k).abs() < 1e-3) {
                    continue 'outer;
                }
                if [wp.a_f, wp.b_f].iter().any(|k| (zeta - k).abs() < 1e-3) {
                    continue 'outer;
                }
            }
        }
        let state = match JointState::from_poses(positions, rotations) {
            Ok(s) => s,
            Err(_) => continue,
        };
        match weighted_rigidity(&state, &camera(), &wp) {
            Ok(wr)
                if wr.eigenpair.eigenvalue > 1e-6 && wr.eigenpair.multiplicity_gap > 1e-4 =>
            {
                return state
            }
            _ => continue,
        }
    }
}

fn worst(acc: &mut f64, err: f64) {
    if err > *acc {
        *acc = err;
    }
}

/// Bearing rigidity matrix against finite differences of the bearing
/// function over stacked linear and (world-frame) angular velocities.
fn check_bearing_jacobian(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    for d in [2usize, 3] {
        let dp = spin_dim(d);
        for k in 0..opts.trials {
            let n = 4 + (k % 3);
            let fw = random_framework(
                rng.random_range(0..u64::MAX / 2),
                n,
                d,
                (2, n - 1),
            )?;
            let analytic = bearing_rigidity_matrix(&fw)?;
            let rows = analytic.nrows();
            let mut fd = DMatrix::zeros(rows, (d + dp) * n);
            let base_pos = fw.state.positions().to_vec();
            let base_rot = fw.state.rotations()?.to_vec();
            let eval = |pos: &[DVector<f64>], rot: &[DMatrix<f64>]| -> DVector<f64> {
                let f = Framework::new(
                    fw.graph.clone(),
                    JointState::from_poses(pos.to_vec(), rot.to_vec()).unwrap(),
                )
                .unwrap();
                bearing_function(&f).unwrap()
            };
            let h = 1e-6;
            let mut probe = base_pos.clone();
            for v in 0..n {
                for c in 0..d {
                    let orig = probe[v][c];
                    probe[v][c] = orig + h;
                    let plus = eval(&probe, &base_rot);
                    probe[v][c] = orig - h;
                    let minus = eval(&probe, &base_rot);
                    probe[v][c] = orig;
                    fd.set_column(v * d + c, &((plus - minus) / (2.0 * h)));
                }
            }
            for v in 0..n {
                for l in 0..dp {
                    let mut w = DVector::zeros(dp);
                    w[l] = h;
                    let mut plus_rot = base_rot.clone();
                    plus_rot[v] = rotation_exp(&w)? * &base_rot[v];
                    let plus = eval(&base_pos, &plus_rot);
                    w[l] = -h;
                    let mut minus_rot = base_rot.clone();
                    minus_rot[v] = rotation_exp(&w)? * &base_rot[v];
                    let minus = eval(&base_pos, &minus_rot);
                    fd.set_column(d * n + v * dp + l, &((plus - minus) / (2.0 * h)));
                }
            }
            worst(&mut worst_err, fdcheck::relative_error_mat(&analytic, &fd, 1e-9));
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "bearing-jacobian",
        trials,
        worst_rel_err: worst_err,
        threshold: JACOBIAN_THRESHOLD,
        passed: worst_err < JACOBIAN_THRESHOLD,
    })
}

/// Angle rigidity matrix against finite differences of the angle function.
fn check_angle_jacobian(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    for d in [2usize, 3] {
        for k in 0..opts.trials {
            let n = 4 + (k % 3);
            let fw = random_framework(rng.random_range(0..u64::MAX / 2), n, d, (2, n - 1))?;
            let angles = fw.angle_set();
            let analytic = angle_rigidity_matrix(fw.state.positions(), &angles)?;
            let fd = fdcheck::jacobian_positions(
                |pos| angle_function(pos, &angles).unwrap(),
                fw.state.positions(),
                1e-6,
            );
            worst(&mut worst_err, fdcheck::relative_error_mat(&analytic, &fd, 1e-9));
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "angle-jacobian",
        trials,
        worst_rel_err: worst_err,
        threshold: JACOBIAN_THRESHOLD,
        passed: worst_err < JACOBIAN_THRESHOLD,
    })
}

/// Body-frame gradient of the quadratic form on SO(d) against manifold
/// directional derivatives.
fn check_so_quadratic(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    for d in [2usize, 3] {
        for _ in 0..opts.trials {
            let r = random_rotation(&mut rng, d);
            let x = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let y = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let analytic = so_gradient_quadratic(&r, &x, &y)?;
            let fd = fdcheck::so_body_gradient(
                |rot| (x.transpose() * rot * &y)[0],
                &r,
                1e-6,
            );
            worst(&mut worst_err, fdcheck::relative_error(&analytic, &fd, 1e-9));
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "so-quadratic-gradient",
        trials,
        worst_rel_err: worst_err,
        threshold: JACOBIAN_THRESHOLD,
        passed: worst_err < JACOBIAN_THRESHOLD,
    })
}

/// Estimator flow against finite differences of the localization potential.
fn check_localization_gradient(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(4));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    for d in [2usize, 3] {
        for k in 0..opts.trials {
            let n = 4 + (k % 3);
            let fw = random_framework(rng.random_range(0..u64::MAX / 2), n, d, (2, n - 1))?;
            let truth = fw.state.positions();
            let meas = Measurements::from_truth(truth, &fw.graph, (0, 1))?;
            let estimates: Vec<DVector<f64>> = truth
                .iter()
                .map(|p| p + DVector::from_fn(d, |_, _| rng.random_range(-0.15..0.15)))
                .collect();
            let (gamma_a, gamma_s) = (2.0, 1.5);
            let state = EstimatorState::new(estimates.clone(), gamma_a, gamma_s)?;
            let flow = localization_gradient(&state, &meas)?;
            let mut flow_stacked = DVector::zeros(d * n);
            for (i, f) in flow.iter().enumerate() {
                flow_stacked.rows_mut(i * d, d).copy_from(f);
            }
            let mut stacked = DVector::zeros(d * n);
            for (i, e) in estimates.iter().enumerate() {
                stacked.rows_mut(i * d, d).copy_from(e);
            }
            let fd = fdcheck::gradient(
                |x| {
                    let est: Vec<DVector<f64>> = (0..n)
                        .map(|i| DVector::from(x.rows(i * d, d).clone_owned()))
                        .collect();
                    localization_cost(&est, &meas, gamma_a, gamma_s).unwrap()
                },
                &stacked,
                1e-6,
            );
            worst(
                &mut worst_err,
                fdcheck::relative_error(&flow_stacked, &(-fd), 1e-9),
            );
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "localization-gradient",
        trials,
        worst_rel_err: worst_err,
        threshold: POTENTIAL_THRESHOLD,
        passed: worst_err < POTENTIAL_THRESHOLD,
    })
}

/// Collision action against finite differences of the collision potential.
fn check_collision_gradient(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(5));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    let cam = camera();
    for d in [2usize, 3] {
        for _ in 0..opts.trials {
            let n = 5;
            let state = random_team_state(&mut rng, n, d);
            let graph = sensing_edges(&state, &cam)?;
            let rotations = state.rotations()?.to_vec();
            let positions = state.positions().to_vec();
            for i in 0..n {
                let analytic = collision_control(i, &state, &graph, &cam)?;
                let mut fd = DVector::zeros(d);
                for c in 0..d {
                    let h = 1e-6 * positions[i][c].abs().max(1.0);
                    let mut plus = positions.clone();
                    plus[i][c] += h;
                    let mut minus = positions.clone();
                    minus[i][c] -= h;
                    fd[c] = (collision_cost(&plus, &graph, cam.range)
                        - collision_cost(&minus, &graph, cam.range))
                        / (2.0 * h);
                }
                let expected = -rotations[i].transpose() * fd;
                worst(
                    &mut worst_err,
                    fdcheck::relative_error(&analytic, &expected, 1e-9),
                );
            }
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "collision-gradient",
        trials,
        worst_rel_err: worst_err,
        threshold: POTENTIAL_THRESHOLD,
        passed: worst_err < POTENTIAL_THRESHOLD,
    })
}

/// Mission action (linear and angular) against finite differences of the
/// tracking potential. Optionally carries the injected sign flip.
fn check_mission_gradient(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(6));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    let g = gains();
    let flip = if opts.sign_flip { -1.0 } else { 1.0 };
    for d in [2usize, 3] {
        for _ in 0..opts.trials {
            let state = random_team_state(&mut rng, 4, d);
            let target = DVector::from_fn(d, |_, _| rng.random_range(-15.0..15.0));
            let dist = (&target - state.position(0)).norm();
            if dist < 0.5 || (dist - g.rho_t).abs() < 1e-3 {
                continue;
            }
            let control = mission_control(0, &state, &target, &g)?;
            let rotations = state.rotations()?.to_vec();
            let positions = state.positions().to_vec();
            let mut fd = DVector::zeros(d);
            for c in 0..d {
                let h = 1e-6 * positions[0][c].abs().max(1.0);
                let eval = |x: f64| {
                    let mut p = positions.clone();
                    p[0][c] = x;
                    let s = JointState::from_poses(p, rotations.clone()).unwrap();
                    mission_cost(0, &s, &target, &g).unwrap()
                };
                fd[c] = (eval(positions[0][c] + h) - eval(positions[0][c] - h)) / (2.0 * h);
            }
            let expected_lin = -rotations[0].transpose() * fd;
            worst(
                &mut worst_err,
                fdcheck::relative_error(&(flip * &control.linear), &expected_lin, 1e-9),
            );
            let fd_ang = fdcheck::so_body_gradient(
                |r| {
                    let mut rots = rotations.clone();
                    rots[0] = r.clone();
                    let s = JointState::from_poses(positions.clone(), rots).unwrap();
                    mission_cost(0, &s, &target, &g).unwrap()
                },
                &rotations[0],
                1e-6,
            );
            worst(
                &mut worst_err,
                fdcheck::relative_error(&(flip * &control.angular), &(-fd_ang), 1e-9),
            );
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "mission-gradient",
        trials,
        worst_rel_err: worst_err,
        threshold: POTENTIAL_THRESHOLD,
        passed: worst_err < POTENTIAL_THRESHOLD,
    })
}

/// The weighted rigidity eigenvalue reassembled as a plain function of the
/// joint pose, for the finite-difference side of the rigidity families.
fn lambda_of(positions: &[DVector<f64>], rotations: &[DMatrix<f64>]) -> f64 {
    let state = JointState::from_poses(positions.to_vec(), rotations.to_vec()).unwrap();
    weighted_rigidity(&state, &camera(), &weight_params())
        .unwrap()
        .eigenpair
        .eigenvalue
}

/// Linear rigidity action against central differences of the weighted
/// eigenvalue through full reassembly (graph, weights, matrix, spectrum).
fn check_rigidity_gradient_linear(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(7));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    for d in [2usize, 3] {
        for _ in 0..opts.trials {
            let n = 5;
            let state = random_team_state(&mut rng, n, d);
            let wr = weighted_rigidity(&state, &camera(), &weight_params())?;
            let (inputs, _) = all_rigidity_controls(&state, &wr, &weight_params(), 10.0)?;
            let lambda = wr.eigenpair.eigenvalue;
            let rotations = state.rotations()?.to_vec();
            let positions = state.positions().to_vec();
            for i in 0..n {
                let analytic = lambda * &rotations[i] * &inputs[i].linear;
                let mut fd = DVector::zeros(d);
                for c in 0..d {
                    let h = 1e-6 * positions[i][c].abs().max(1.0);
                    let mut plus = positions.clone();
                    plus[i][c] += h;
                    let mut minus = positions.clone();
                    minus[i][c] -= h;
                    fd[c] =
                        (lambda_of(&plus, &rotations) - lambda_of(&minus, &rotations)) / (2.0 * h);
                }
                worst(&mut worst_err, fdcheck::relative_error(&analytic, &fd, 1e-10));
            }
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "rigidity-gradient-linear",
        trials,
        worst_rel_err: worst_err,
        threshold: EIGEN_GRADIENT_THRESHOLD,
        passed: worst_err < EIGEN_GRADIENT_THRESHOLD,
    })
}

/// Angular rigidity action against body directional derivatives of the
/// weighted eigenvalue.
fn check_rigidity_gradient_angular(opts: &GradcheckOptions) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(8));
    let mut worst_err: f64 = 0.0;
    let mut trials = 0;
    for d in [2usize, 3] {
        for _ in 0..opts.trials {
            let n = 5;
            let state = random_team_state(&mut rng, n, d);
            let wr = weighted_rigidity(&state, &camera(), &weight_params())?;
            let (inputs, _) = all_rigidity_controls(&state, &wr, &weight_params(), 10.0)?;
            let lambda = wr.eigenpair.eigenvalue;
            let rotations = state.rotations()?.to_vec();
            let positions = state.positions().to_vec();
            for i in 0..n {
                let analytic = lambda * &inputs[i].angular;
                let fd = fdcheck::so_body_gradient(
                    |r| {
                        let mut rots = rotations.clone();
                        rots[i] = r.clone();
                        lambda_of(&positions, &rots)
                    },
                    &rotations[i],
                    1e-6,
                );
                worst(&mut worst_err, fdcheck::relative_error(&analytic, &fd, 1e-10));
            }
            trials += 1;
        }
    }
    Ok(FamilyReport {
        name: "rigidity-gradient-angular",
        trials,
        worst_rel_err: worst_err,
        threshold: EIGEN_GRADIENT_THRESHOLD,
        passed: worst_err < EIGEN_GRADIENT_THRESHOLD,
    })
}

/// Runs every family and returns their reports in a fixed order.
pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<FamilyReport>> {
    Ok(vec![
        check_bearing_jacobian(opts)?,
        check_angle_jacobian(opts)?,
        check_so_quadratic(opts)?,
        check_localization_gradient(opts)?,
        check_collision_gradient(opts)?,
        check_mission_gradient(opts)?,
        check_rigidity_gradient_linear(opts)?,
        check_rigidity_gradient_angular(opts)?,
    ])
}
