//! Angle-based position estimation under switching sensing graphs.
//!
//! Each robot integrates the negative gradient of
//!
//! ```text
//! L_m(p_hat) = (gamma_a / 2) ||alpha_m(p_hat) - alpha_meas||^2
//!            + (gamma_s / 4) (d_hat^2 - d_meas^2)^2
//! ```
//!
//! where `alpha_m` is the angle function of the active graph and the single
//! measured distance pins the otherwise unobservable scale. The estimate is
//! only determined up to a rigid motion, so error metrics align the estimate
//! onto the truth with a special orthogonal Procrustes solve first.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{bearing_and_distance, nearest_rotation, projection};
use crate::graph::{angle_set, AngleSet, DirectedGraph};
use crate::rigidity::{is_inf_angle_rigid, RANK_TOL};
use crate::Integrator;

/// Angle cosines measured under one sensing graph, plus the single scale
/// distance `d(iota, kappa)` measured by robot `iota`. The scale pair need
/// not be an edge of the active graph.
#[derive(Debug, Clone)]
pub struct Measurements {
    pub angles: AngleSet,
    pub cosines: DVector<f64>,
    pub scale_edge: (usize, usize),
    pub scale_distance: f64,
}

impl Measurements {
    pub fn new(
        angles: AngleSet,
        cosines: DVector<f64>,
        scale_edge: (usize, usize),
        scale_distance: f64,
    ) -> Result<Self> {
        if cosines.len() != angles.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} cosines for {} angle triples",
                cosines.len(),
                angles.len()
            )));
        }
        if cosines.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::Precondition(
                "angle cosines must lie in [-1, 1]".into(),
            ));
        }
        if scale_distance <= 0.0 {
            return Err(Error::Precondition(format!(
                "scale distance must be positive, got {scale_distance}"
            )));
        }
        if scale_edge.0 == scale_edge.1 {
            return Err(Error::Precondition("scale edge needs two robots".into()));
        }
        Ok(Self {
            angles,
            cosines,
            scale_edge,
            scale_distance,
        })
    }

    /// Noise-free measurements generated from the true configuration under
    /// the given graph.
    pub fn from_truth(
        positions: &[DVector<f64>],
        graph: &DirectedGraph,
        scale_edge: (usize, usize),
    ) -> Result<Self> {
        let angles = angle_set(graph);
        let cosines = crate::rigidity::angle_function(positions, &angles)?;
        let dist = (&positions[scale_edge.1] - &positions[scale_edge.0]).norm();
        Self::new(angles, cosines, scale_edge, dist)
    }

    /// Measurements with additive Gaussian noise on the cosines, clamped back
    /// to [-1, 1].
    pub fn from_truth_noisy<R: Rng>(
        positions: &[DVector<f64>],
        graph: &DirectedGraph,
        scale_edge: (usize, usize),
        noise_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut meas = Self::from_truth(positions, graph, scale_edge)?;
        if noise_std > 0.0 {
            for a in meas.cosines.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *a = (*a + noise_std * n).clamp(-1.0, 1.0);
            }
        }
        Ok(meas)
    }
}

/// Estimator state: one position estimate per robot plus the two gains.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub estimates: Vec<DVector<f64>>,
    pub gamma_a: f64,
    pub gamma_s: f64,
}

impl EstimatorState {
    pub fn new(estimates: Vec<DVector<f64>>, gamma_a: f64, gamma_s: f64) -> Result<Self> {
        if gamma_a <= 0.0 || gamma_s <= 0.0 {
            return Err(Error::Precondition(format!(
                "estimator gains must be positive (gamma_a = {gamma_a}, gamma_s = {gamma_s})"
            )));
        }
        if estimates.is_empty() {
            return Err(Error::Precondition(
                "estimator needs at least one robot".into(),
            ));
        }
        Ok(Self {
            estimates,
            gamma_a,
            gamma_s,
        })
    }
}

/// The potential driving the estimator, evaluated at arbitrary estimates.
pub fn localization_cost(
    estimates: &[DVector<f64>],
    meas: &Measurements,
    gamma_a: f64,
    gamma_s: f64,
) -> Result<f64> {
    let alpha_hat = crate::rigidity::angle_function(estimates, &meas.angles)?;
    let residual = alpha_hat - &meas.cosines;
    let (iota, kappa) = meas.scale_edge;
    let d_hat2 = (&estimates[kappa] - &estimates[iota]).norm_squared();
    let scale_res = d_hat2 - meas.scale_distance * meas.scale_distance;
    Ok(0.5 * gamma_a * residual.norm_squared() + 0.25 * gamma_s * scale_res * scale_res)
}

/// The estimator flow: the time derivative of every estimate, i.e. the
/// negative gradient of [`localization_cost`]. Per robot this is the pair of
/// angle-residual sums plus the scale term on the two scale robots.
pub fn localization_gradient(
    state: &EstimatorState,
    meas: &Measurements,
) -> Result<Vec<DVector<f64>>> {
    let d = state.estimates[0].len();
    let mut flow = vec![DVector::zeros(d); state.estimates.len()];
    accumulate_angle_flow(&state.estimates, meas, state.gamma_a, |idx, contribution| {
        flow[idx] += contribution
    })?;
    let (iota, kappa) = meas.scale_edge;
    let diff = &state.estimates[iota] - &state.estimates[kappa];
    let scale_res = diff.norm_squared() - meas.scale_distance * meas.scale_distance;
    flow[iota] -= state.gamma_s * scale_res * &diff;
    flow[kappa] += state.gamma_s * scale_res * &diff;
    Ok(flow)
}

/// Shared angle-residual accumulation: calls `sink(robot, flow_contribution)`
/// for every (triple, robot) pair. `eta_ijk = P_ij beta_ik / d_ij` evaluated
/// at the estimates is the gradient of the estimated cosine in the first
/// neighbor's position.
fn accumulate_angle_flow<F>(
    estimates: &[DVector<f64>],
    meas: &Measurements,
    gamma_a: f64,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(usize, DVector<f64>),
{
    for (row, &(i, j, k)) in meas.angles.triples().iter().enumerate() {
        let (bij, dij) = bearing_and_distance(&estimates[i], &estimates[j])?;
        let (bik, dik) = bearing_and_distance(&estimates[i], &estimates[k])?;
        let alpha_hat = bij.dot(&bik);
        let residual = gamma_a * (alpha_hat - meas.cosines[row]);
        let eta_ijk = projection(&bij)? * &bik / dij;
        let eta_ikj = projection(&bik)? * &bij / dik;
        sink(i, residual * (&eta_ijk + &eta_ikj));
        sink(j, -residual * eta_ijk);
        sink(k, -residual * eta_ikj);
    }
    Ok(())
}

/// What robot `i` can see of the estimation problem: its own measured
/// triples with the neighbors' estimates, the residual-weighted messages
/// from observers that measure it, and the scale measurement when it is one
/// of the two scale robots. Built by [`RobotEstimateView::gather`], which
/// plays the communication round.
#[derive(Debug, Clone)]
pub struct RobotEstimateView {
    pub index: usize,
    pub own_estimate: DVector<f64>,
    /// `(p_hat_j, p_hat_k, measured cosine)` for each own triple `(i, j, k)`.
    pub own_triples: Vec<(DVector<f64>, DVector<f64>, f64)>,
    /// `(alpha_hat - alpha) * eta_hat` terms computed and sent by observers.
    pub observer_messages: Vec<DVector<f64>>,
    /// `(own role sign, p_hat_iota - p_hat_kappa, d_hat^2 - d^2)` when this
    /// robot is iota (+1) or kappa (-1).
    pub scale_term: Option<(f64, DVector<f64>, f64)>,
}

impl RobotEstimateView {
    /// Collects exactly the quantities the decentralized protocol grants
    /// robot `i`: measured cosines and neighbor estimates for its own
    /// triples, and one vector message per triple in which it is measured.
    pub fn gather(i: usize, state: &EstimatorState, meas: &Measurements) -> Result<Self> {
        let estimates = &state.estimates;
        let mut own_triples = Vec::new();
        let mut observer_messages = Vec::new();
        for (row, &(a, j, k)) in meas.angles.triples().iter().enumerate() {
            if a == i {
                own_triples.push((
                    estimates[j].clone(),
                    estimates[k].clone(),
                    meas.cosines[row],
                ));
            } else if j == i || k == i {
                // observer `a` computes the residual-weighted eta for the slot
                // `i` occupies and transmits the finished vector
                let (baj, daj) = bearing_and_distance(&estimates[a], &estimates[j])?;
                let (bak, dak) = bearing_and_distance(&estimates[a], &estimates[k])?;
                let residual = state.gamma_a * (baj.dot(&bak) - meas.cosines[row]);
                let eta = if j == i {
                    projection(&baj)? * &bak / daj
                } else {
                    projection(&bak)? * &baj / dak
                };
                observer_messages.push(residual * eta);
            }
        }
        let (iota, kappa) = meas.scale_edge;
        let scale_term = if i == iota || i == kappa {
            let diff = &estimates[iota] - &estimates[kappa];
            let res = diff.norm_squared() - meas.scale_distance * meas.scale_distance;
            let sign = if i == iota { 1.0 } else { -1.0 };
            Some((sign, diff, res))
        } else {
            None
        };
        Ok(Self {
            index: i,
            own_estimate: estimates[i].clone(),
            own_triples,
            observer_messages,
            scale_term,
        })
    }

    /// Robot `i`'s flow entry computed from the restricted view only.
    pub fn flow(&self, gamma_a: f64, gamma_s: f64) -> Result<DVector<f64>> {
        let d = self.own_estimate.len();
        let mut flow = DVector::zeros(d);
        for (pj, pk, alpha) in &self.own_triples {
            let (bij, dij) = bearing_and_distance(&self.own_estimate, pj)?;
            let (bik, dik) = bearing_and_distance(&self.own_estimate, pk)?;
            let residual = gamma_a * (bij.dot(&bik) - alpha);
            let eta_ijk = projection(&bij)? * &bik / dij;
            let eta_ikj = projection(&bik)? * &bij / dik;
            flow += residual * (eta_ijk + eta_ikj);
        }
        for msg in &self.observer_messages {
            flow -= msg;
        }
        if let Some((sign, diff, res)) = &self.scale_term {
            flow -= gamma_s * res * *sign * diff;
        }
        Ok(flow)
    }
}

/// One integrator step of the estimator flow with the measurements held
/// fixed (switching is sample-and-hold at step boundaries).
pub fn estimator_step(
    state: &EstimatorState,
    meas: &Measurements,
    dt: f64,
    method: Integrator,
) -> Result<EstimatorState> {
    if dt <= 0.0 {
        return Err(Error::Precondition(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let advance = |base: &EstimatorState, dir: &[DVector<f64>], h: f64| -> EstimatorState {
        let estimates = base
            .estimates
            .iter()
            .zip(dir)
            .map(|(p, v)| p + v * h)
            .collect();
        EstimatorState {
            estimates,
            gamma_a: base.gamma_a,
            gamma_s: base.gamma_s,
        }
    };
    let next = match method {
        Integrator::Euler => {
            let k1 = localization_gradient(state, meas)?;
            advance(state, &k1, dt)
        }
        Integrator::Rk4 => {
            let k1 = localization_gradient(state, meas)?;
            let k2 = localization_gradient(&advance(state, &k1, dt / 2.0), meas)?;
            let k3 = localization_gradient(&advance(state, &k2, dt / 2.0), meas)?;
            let k4 = localization_gradient(&advance(state, &k3, dt), meas)?;
            let combo: Vec<DVector<f64>> = k1
                .iter()
                .zip(&k2)
                .zip(&k3)
                .zip(&k4)
                .map(|(((a, b), c), d)| (a + b * 2.0 + c * 2.0 + d) / 6.0)
                .collect();
            advance(state, &combo, dt)
        }
    };
    Ok(next)
}

/// Per-robot residuals of the best rigid alignment of the truth onto the
/// estimate: entry `i` is `||Q p_i + r - p_hat_i||` at the optimal
/// `(r, Q) in SE(d)`, solved by centroid subtraction plus special orthogonal
/// Procrustes. These residuals measure estimation quality modulo the frame
/// the estimator cannot observe.
pub fn alignment_residuals(
    estimates: &[DVector<f64>],
    truth: &[DVector<f64>],
) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {} true positions",
            estimates.len(),
            truth.len()
        )));
    }
    let d = truth[0].len();
    let n = truth.len() as f64;
    let mut c_truth = DVector::zeros(d);
    let mut c_est = DVector::zeros(d);
    for (p, q) in truth.iter().zip(estimates) {
        c_truth += p;
        c_est += q;
    }
    c_truth /= n;
    c_est /= n;

    let mut h = DMatrix::zeros(d, d);
    for (p, q) in truth.iter().zip(estimates) {
        h += (p - &c_truth) * (q - &c_est).transpose();
    }
    // Maximizing Tr(Q H) over SO(d) is the nearest-rotation problem for H^T.
    let q = nearest_rotation(&h.transpose())?;
    Ok(truth
        .iter()
        .zip(estimates)
        .map(|(p, est)| (&q * (p - &c_truth) - (est - &c_est)).norm())
        .collect())
}

/// Least-squares distance from the estimate to the rigid orbit of the truth:
/// the root sum of squares of [`alignment_residuals`].
pub fn alignment_error(estimates: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    let residuals = alignment_residuals(estimates, truth)?;
    Ok(residuals.iter().map(|r| r * r).sum::<f64>().sqrt())
}

/// A finite family of sensing graphs with a piecewise-constant switching
/// signal: `signal[k] = (time, graph index)` activates a graph from its time
/// until the next entry.
#[derive(Debug, Clone)]
pub struct SwitchingSchedule {
    pub graphs: Vec<DirectedGraph>,
    pub signal: Vec<(f64, usize)>,
}

impl SwitchingSchedule {
    pub fn new(graphs: Vec<DirectedGraph>, signal: Vec<(f64, usize)>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Precondition(
                "schedule needs at least one graph".into(),
            ));
        }
        if signal.is_empty() || signal[0].0 != 0.0 {
            return Err(Error::Precondition(
                "switching signal must start at t = 0".into(),
            ));
        }
        for w in signal.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Precondition(
                    "switching times must be strictly increasing".into(),
                ));
            }
        }
        for &(_, idx) in &signal {
            if idx >= graphs.len() {
                return Err(Error::Precondition(format!(
                    "switching signal references graph {idx} of {}",
                    graphs.len()
                )));
            }
        }
        Ok(Self { graphs, signal })
    }

    /// Cycles through the family with a fixed dwell time until `t_end`.
    pub fn round_robin(graphs: Vec<DirectedGraph>, dwell: f64, t_end: f64) -> Result<Self> {
        if dwell <= 0.0 {
            return Err(Error::Precondition(format!(
                "dwell time must be positive, got {dwell}"
            )));
        }
        let m = graphs.len();
        let mut signal = Vec::new();
        let mut t = 0.0;
        let mut idx = 0;
        while t < t_end {
            signal.push((t, idx % m));
            idx += 1;
            t += dwell;
        }
        Self::new(graphs, signal)
    }

    pub fn active_at(&self, t: f64) -> usize {
        let mut current = self.signal[0].1;
        for &(time, idx) in &self.signal {
            if time <= t {
                current = idx;
            } else {
                break;
            }
        }
        current
    }
}

/// Time series produced by [`run_localization`].
#[derive(Debug, Clone)]
pub struct LocalizationTrace {
    pub times: Vec<f64>,
    /// Alignment error of the whole estimate against the fixed truth.
    pub errors: Vec<f64>,
    pub active_graph: Vec<usize>,
    /// Indices of schedule graphs that are not infinitesimally angle rigid
    /// at the given truth; empty when the proposition's hypotheses hold.
    pub non_rigid_graphs: Vec<usize>,
}

/// Runs the estimator against a fixed truth under the switching schedule,
/// regenerating noise-free measurements from the active graph at every step.
#[allow(clippy::too_many_arguments)]
pub fn run_localization(
    truth: &[DVector<f64>],
    schedule: &SwitchingSchedule,
    init: Vec<DVector<f64>>,
    gamma_a: f64,
    gamma_s: f64,
    scale_edge: (usize, usize),
    dt: f64,
    t_end: f64,
    method: Integrator,
) -> Result<LocalizationTrace> {
    let mut non_rigid = Vec::new();
    for (idx, g) in schedule.graphs.iter().enumerate() {
        let (iar, _) = is_inf_angle_rigid(truth, &angle_set(g), RANK_TOL)?;
        if !iar {
            non_rigid.push(idx);
        }
    }
    let measurements: Vec<Measurements> = schedule
        .graphs
        .iter()
        .map(|g| Measurements::from_truth(truth, g, scale_edge))
        .collect::<Result<_>>()?;

    let steps = (t_end / dt).floor() as usize;
    let mut state = EstimatorState::new(init, gamma_a, gamma_s)?;
    let mut trace = LocalizationTrace {
        times: Vec::with_capacity(steps + 1),
        errors: Vec::with_capacity(steps + 1),
        active_graph: Vec::with_capacity(steps + 1),
        non_rigid_graphs: non_rigid,
    };
    for step in 0..=steps {
        let t = step as f64 * dt;
        let active = schedule.active_at(t);
        trace.times.push(t);
        trace.errors.push(alignment_error(&state.estimates, truth)?);
        trace.active_graph.push(active);
        if step < steps {
            state = estimator_step(&state, &measurements[active], dt, method)?;
        }
    }
    Ok(trace)
}

/// Least-squares slope and R^2 of `log(error)` against time over the decay
/// segment, defined as the samples after the error first drops below a tenth
/// of its initial value and before it reaches the numerical floor. Returns
/// `None` when fewer than two samples qualify.
pub fn fit_decay_rate(times: &[f64], errors: &[f64]) -> Option<(f64, f64)> {
    let initial = errors.first().copied()?;
    let upper = 0.1 * initial;
    let floor = 1e-8_f64.max(initial * 1e-14);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > floor && e <= upper)
        .map(|(&t, &e)| (t, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = (sxy * sxy) / (sxx * syy);
    Some((slope, r2))
}
