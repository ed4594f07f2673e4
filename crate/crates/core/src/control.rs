//! Decentralized rigidity maintenance under camera constraints, collision
//! avoidance, and target tracking.
//!
//! The sensing graph follows from range and field-of-view predicates, so the
//! plain rigidity eigenvalue jumps when edges appear or vanish. Each angle is
//! therefore weighted by a smooth margin function that goes to zero exactly
//! when its edges leave the camera, making the weighted eigenvalue a C^1
//! function of the joint pose; the rigidity action follows its gradient,
//! expressed per robot in body-frame quantities only (bearings, distances,
//! relative rotations, and eigenvector blocks). Terms a robot cannot compute
//! itself are produced by the observing robot and delivered as messages, a
//! two-phase step the simulator replays explicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_angular, bearing_and_distance, projection, spin_dim, JointState};
use crate::graph::{angle_set, AngleSet, DirectedGraph};
use crate::rigidity::{angle_rigidity_matrix, rigidity_eigenvalue_index};

/// Below this weighted eigenvalue the 1/lambda factor is floored and the
/// rigidity action magnitude-clamped; the controller has already failed at
/// that point and the clamp only keeps the numbers finite for diagnosis.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Eigenvalue gap under which the weighted eigenvector direction is treated
/// as undefined and the previous rigidity action is reused.
pub const MULTIPLICITY_GAP_TOL: f64 = 1e-8;

/// Camera model: detection range and cosine of the half field-of-view angle.
/// The optical axis is the body-frame first basis vector by convention.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraParams {
    pub range: f64,
    pub fov_cos: f64,
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if self.range <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "camera range must be positive, got {}",
                self.range
            )));
        }
        if !(0.0..1.0).contains(&self.fov_cos) {
            return Err(Error::InvalidConfig(format!(
                "camera fov_cos must lie in [0, 1), got {}",
                self.fov_cos
            )));
        }
        Ok(())
    }
}

/// Ramp boundaries of the range and field-of-view weights. The range weight
/// is 1 below `a_r` and 0 above `b_r`; the view weight is 0 below `a_f` and
/// 1 above `b_f` (in cosine units).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightParams {
    pub a_r: f64,
    pub b_r: f64,
    pub a_f: f64,
    pub b_f: f64,
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_r < self.b_r) {
            return Err(Error::InvalidConfig(format!(
                "weight bounds need a_r < b_r, got {} and {}",
                self.a_r, self.b_r
            )));
        }
        if !(self.a_f < self.b_f) {
            return Err(Error::InvalidConfig(format!(
                "weight bounds need a_f < b_f, got {} and {}",
                self.a_f, self.b_f
            )));
        }
        Ok(())
    }

    /// The couplings that make weights vanish no later than the sensing
    /// predicates cut edges, keeping the weighted matrix continuous across
    /// topology changes. Checked when a scenario is loaded.
    pub fn validate_against(&self, cam: &CameraParams) -> Result<()> {
        self.validate()?;
        if self.a_r < 0.0 || self.b_r > cam.range {
            return Err(Error::InvalidConfig(format!(
                "range ramp [{}, {}] must sit inside [0, {}]",
                self.a_r, self.b_r, cam.range
            )));
        }
        if self.a_f < cam.fov_cos || self.b_f > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "view ramp [{}, {}] must sit inside [{}, 1]",
                self.a_f, self.b_f, cam.fov_cos
            )));
        }
        Ok(())
    }
}

/// Controller gains and mission constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub gamma_r: f64,
    pub gamma_c: f64,
    pub gamma_m: f64,
    pub gamma_r_ang: f64,
    pub gamma_m_ang: f64,
    pub mu_r: f64,
    pub mu_f: f64,
    /// Tracking radius: the range ramp of the mission potential.
    pub rho_t: f64,
    /// Magnitude cap applied to the rigidity action when the eigenvalue
    /// floor is hit.
    pub u_max: f64,
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_r", self.gamma_r),
            ("gamma_c", self.gamma_c),
            ("gamma_m", self.gamma_m),
            ("gamma_r_ang", self.gamma_r_ang),
            ("gamma_m_ang", self.gamma_m_ang),
            ("mu_r", self.mu_r),
            ("mu_f", self.mu_f),
            ("rho_t", self.rho_t),
            ("u_max", self.u_max),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "gain {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A body-frame velocity command: linear part in R^d, angular part in R^{d'}.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub linear: DVector<f64>,
    pub angular: DVector<f64>,
}

impl ControlInput {
    pub fn zeros(d: usize) -> Self {
        Self {
            linear: DVector::zeros(d),
            angular: DVector::zeros(spin_dim(d)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().all(|v| v.is_finite()) && self.angular.iter().all(|v| v.is_finite())
    }
}

/// The weighted rigidity eigenvalue with its unit eigenvector and the
/// distance to the adjacent eigenvalues.
#[derive(Debug, Clone)]
pub struct RigidityEigenpair {
    pub eigenvalue: f64,
    pub eigenvector: DVector<f64>,
    pub multiplicity_gap: f64,
}

/// Sensing graph induced by the cameras: edge `(i, j)` exists when `j` is
/// within range and inside the field-of-view cone of `i`.
pub fn sensing_edges(state: &JointState, cam: &CameraParams) -> Result<DirectedGraph> {
    let rotations = state.rotations()?;
    let n = state.len();
    let mut edges = Vec::new();
    for i in 0..n {
        let axis = rotations[i].column(0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let (beta, dist) = bearing_and_distance(state.position(i), state.position(j))?;
            let zeta = beta.dot(&axis);
            if dist < cam.range && zeta > cam.fov_cos {
                edges.push((i, j));
            }
        }
    }
    DirectedGraph::new(n, edges)
}

/// Cosine ramp from 0 at `a` to 1 at `b`, constant outside.
pub fn smoothstep(x: f64, a: f64, b: f64) -> Result<f64> {
    if a >= b {
        return Err(Error::Precondition(format!(
            "smoothstep needs a < b, got {a} and {b}"
        )));
    }
    Ok(if x < a {
        0.0
    } else if x > b {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * (x - a) / (b - a)).cos())
    })
}

/// Derivative of [`smoothstep`]: zero outside `[a, b]`, a sine bump inside.
pub fn smoothstep_deriv(x: f64, a: f64, b: f64) -> Result<f64> {
    if a >= b {
        return Err(Error::Precondition(format!(
            "smoothstep needs a < b, got {a} and {b}"
        )));
    }
    Ok(if x < a || x > b {
        0.0
    } else {
        let w = std::f64::consts::PI / (b - a);
        0.5 * w * (w * (x - a)).sin()
    })
}

/// Everything the weight of one edge contributes: distance, aim cosine,
/// range and view factors with their ramp derivatives, and the body-frame
/// bearing. Computed once per edge and reused by the weight gradients.
#[derive(Debug, Clone)]
struct EdgeWeightParts {
    dist: f64,
    body_bearing: DVector<f64>,
    w_r: f64,
    w_f: f64,
    /// sigma_r'(dist): derivative of the range ramp (enters with a minus
    /// sign since w_r = 1 - sigma_r).
    sr: f64,
    /// sigma_f'(zeta)
    sf: f64,
}

impl EdgeWeightParts {
    fn compute(
        state: &JointState,
        i: usize,
        j: usize,
        wp: &WeightParams,
    ) -> Result<Self> {
        let rotations = state.rotations()?;
        let (beta, dist) = bearing_and_distance(state.position(i), state.position(j))?;
        let body_bearing = rotations[i].transpose() * beta;
        let zeta = body_bearing[0];
        Ok(Self {
            dist,
            body_bearing,
            w_r: 1.0 - smoothstep(dist, wp.a_r, wp.b_r)?,
            w_f: smoothstep(zeta, wp.a_f, wp.b_f)?,
            sr: smoothstep_deriv(dist, wp.a_r, wp.b_r)?,
            sf: smoothstep_deriv(zeta, wp.a_f, wp.b_f)?,
        })
    }
}

/// The weight of one angle triple:
/// `d_ij d_ik w_r(ij) w_f(ij) w_r(ik) w_f(ik)`. The distance factor makes
/// the weighted matrix scale invariant; the ramps encode sensing margins.
pub fn angle_weight(
    i: usize,
    j: usize,
    k: usize,
    state: &JointState,
    wp: &WeightParams,
) -> Result<f64> {
    let ij = EdgeWeightParts::compute(state, i, j, wp)?;
    let ik = EdgeWeightParts::compute(state, i, k, wp)?;
    Ok(ij.dist * ik.dist * ij.w_r * ij.w_f * ik.w_r * ik.w_f)
}

/// The weighted symmetric angle rigidity matrix bundled with everything the
/// per-step controller consumes: the active graph, its angle set, the
/// per-triple weights, and the eigenpair at the rigidity index.
#[derive(Debug, Clone)]
pub struct WeightedRigidity {
    pub graph: DirectedGraph,
    pub angles: AngleSet,
    pub weights: Vec<f64>,
    pub eigenpair: RigidityEigenpair,
}

/// Eigenpair of `A^T W A` at the rigidity index for explicit weights, with
/// the eigenvector sign fixed by making its largest-magnitude entry positive.
pub fn weighted_eigenpair(
    positions: &[DVector<f64>],
    angles: &AngleSet,
    weights: &[f64],
) -> Result<RigidityEigenpair> {
    let d = positions[0].len();
    let dn = d * positions.len();
    let idx = rigidity_eigenvalue_index(d);
    if dn <= idx {
        return Err(Error::Precondition(format!(
            "weighted rigidity eigenvalue needs d*N > {idx}, got {dn}"
        )));
    }
    if weights.len() != angles.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} angle triples",
            weights.len(),
            angles.len()
        )));
    }
    let a = angle_rigidity_matrix(positions, angles)?;
    let mut sym = DMatrix::zeros(dn, dn);
    for (row, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let r = a.row(row);
        sym += w * r.transpose() * r;
    }
    let eig = sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dn).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
    let eigenvalue = eig.eigenvalues[order[idx]].max(0.0);
    let mut eigenvector: DVector<f64> = eig.eigenvectors.column(order[idx]).into();
    let max_entry = eigenvector
        .iter()
        .cloned()
        .max_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap())
        .unwrap();
    if max_entry < 0.0 {
        eigenvector = -eigenvector;
    }
    eigenvector /= eigenvector.norm();
    let below = eig.eigenvalues[order[idx - 1]];
    let above = if idx + 1 < dn {
        eig.eigenvalues[order[idx + 1]] - eigenvalue
    } else {
        f64::INFINITY
    };
    let multiplicity_gap = (eigenvalue - below).min(above).max(0.0);
    Ok(RigidityEigenpair {
        eigenvalue,
        eigenvector,
        multiplicity_gap,
    })
}

/// Builds the sensing graph from the cameras, weights every induced angle,
/// and returns the weighted eigenpair.
pub fn weighted_rigidity(
    state: &JointState,
    cam: &CameraParams,
    wp: &WeightParams,
) -> Result<WeightedRigidity> {
    let graph = sensing_edges(state, cam)?;
    let angles = angle_set(&graph);
    let weights: Vec<f64> = angles
        .triples()
        .iter()
        .map(|&(i, j, k)| angle_weight(i, j, k, state, wp))
        .collect::<Result<_>>()?;
    let eigenpair = weighted_eigenpair(state.positions(), &angles, &weights)?;
    Ok(WeightedRigidity {
        graph,
        angles,
        weights,
        eigenpair,
    })
}

/// Eigenvalue of the distance-scaled symmetric matrix (weights
/// `d_ij d_ik` with no sensing ramps), the scale-invariant reference the
/// weighted eigenvalue is compared against in the logs.
pub fn distance_scaled_eigenvalue(
    positions: &[DVector<f64>],
    angles: &AngleSet,
) -> Result<f64> {
    let weights: Vec<f64> = angles
        .triples()
        .iter()
        .map(|&(i, j, k)| {
            let dij = (&positions[j] - &positions[i]).norm();
            let dik = (&positions[k] - &positions[i]).norm();
            dij * dik
        })
        .collect();
    Ok(weighted_eigenpair(positions, angles, &weights)?.eigenvalue)
}

/// Body-frame quantities robot `i` senses about neighbor `j`: bearing,
/// distance, the relative rotation `R_ij = R_i^T R_j`, and `j`'s own
/// eigenvector block expressed in `j`'s frame.
struct NeighborView {
    bearing: DVector<f64>,
    dist: f64,
    rel_rot: DMatrix<f64>,
    eigvec_block: DVector<f64>,
    weight: EdgeWeightParts,
}

/// Per-robot view assembled at the start of a control step. All fields are
/// relative or body-frame quantities; global poses never enter the control
/// formulas directly.
struct RigidityView {
    own_block: DVector<f64>,
    neighbors: Vec<(usize, NeighborView)>,
}

impl RigidityView {
    fn gather(
        i: usize,
        state: &JointState,
        wr: &WeightedRigidity,
        wp: &WeightParams,
    ) -> Result<Self> {
        let d = state.dim();
        let rotations = state.rotations()?;
        let nu = &wr.eigenpair.eigenvector;
        let block = |v: usize| -> DVector<f64> {
            rotations[v].transpose() * DVector::from(nu.rows(v * d, d).clone_owned())
        };
        let mut neighbors = Vec::new();
        for j in wr.graph.out_neighbors(i) {
            let weight = EdgeWeightParts::compute(state, i, j, wp)?;
            neighbors.push((
                j,
                NeighborView {
                    bearing: weight.body_bearing.clone(),
                    dist: weight.dist,
                    rel_rot: rotations[i].transpose() * &rotations[j],
                    eigvec_block: block(j),
                    weight,
                },
            ));
        }
        Ok(Self {
            own_block: block(i),
            neighbors,
        })
    }

    fn neighbor(&self, j: usize) -> &NeighborView {
        &self
            .neighbors
            .iter()
            .find(|(v, _)| *v == j)
            .expect("neighbor present in view")
            .1
    }
}

/// `eta^i_ijk = P^i_ij beta^i_ik / d_ij`.
fn eta(bij: &DVector<f64>, dij: f64, bik: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(projection(bij)? * bik / dij)
}

/// The perturbation row contracted with the eigenvector,
/// `A_ijk nu`, from body-frame quantities of observer `i` (eq. pattern:
/// eta terms against rotated neighbor blocks minus the own block).
fn row_times_eigenvector(
    own_block: &DVector<f64>,
    j: &NeighborView,
    k: &NeighborView,
) -> Result<f64> {
    let ej = eta(&j.bearing, j.dist, &k.bearing)?;
    let ek = eta(&k.bearing, k.dist, &j.bearing)?;
    let dj = &j.rel_rot * &j.eigvec_block - own_block;
    let dk = &k.rel_rot * &k.eigvec_block - own_block;
    Ok(ej.dot(&dj) + ek.dot(&dk))
}

/// Body-frame gradient of the triple weight in the observer's position, in
/// the cancelled form: every ramp factor that would appear in a denominator
/// has been multiplied through, so plateau boundaries never divide by zero.
fn weight_gradient_own(j: &EdgeWeightParts, k: &EdgeWeightParts, e1: &DVector<f64>) -> Result<DVector<f64>> {
    let half = |a: &EdgeWeightParts, other: &EdgeWeightParts| -> Result<DVector<f64>> {
        let shared = other.dist * other.w_r * other.w_f;
        let radial = (a.dist * a.sr * a.w_f - a.w_r * a.w_f) * &a.body_bearing;
        let aim = projection(&a.body_bearing)? * e1 * (a.sf * a.w_r);
        Ok(shared * (radial - aim))
    };
    Ok(half(j, k)? + half(k, j)?)
}

/// Spin-space gradient of the triple weight in the observer's orientation,
/// cancelled form of the camera-axis term.
fn weight_gradient_rotation(j: &EdgeWeightParts, k: &EdgeWeightParts) -> Result<DVector<f64>> {
    let scale = j.dist * k.dist;
    let v = (j.sf * j.w_r * k.w_r * k.w_f) * &j.body_bearing
        + (k.sf * k.w_r * j.w_r * j.w_f) * &k.body_bearing;
    axis_angular(&(scale * v))
}

/// Body-frame gradient of observer `j`'s triple weight with respect to the
/// observed robot's position, cancelled form; computed by `j` and shipped.
fn weight_gradient_observed(
    ji: &EdgeWeightParts,
    jk: &EdgeWeightParts,
    e1: &DVector<f64>,
) -> Result<DVector<f64>> {
    let shared = jk.dist * jk.w_r * jk.w_f;
    let radial = (ji.w_r * ji.w_f - ji.dist * ji.sr * ji.w_f) * &ji.body_bearing;
    let aim = projection(&ji.body_bearing)? * e1 * (ji.sf * ji.w_r);
    Ok(shared * (radial + aim))
}

/// `D^i_ijk`: the curvature block of the perturbation row in the observer's
/// own position, first-edge part.
fn curvature_d(bij: &DVector<f64>, dij: f64, bik: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = projection(bij)?;
    let m = &p * bik * bij.transpose() + bij * bik.transpose() * &p + bij.dot(bik) * &p;
    Ok(m / (dij * dij))
}

/// `E^i_ijk = P^i_ij P^i_ik / (d_ij d_ik)`.
fn curvature_e(
    bij: &DVector<f64>,
    dij: f64,
    bik: &DVector<f64>,
    dik: f64,
) -> Result<DMatrix<f64>> {
    Ok(projection(bij)? * projection(bik)? / (dij * dik))
}

/// Gradient of `A_ijk nu` in the observer's own position, body frame.
fn row_gradient_own(
    own_block: &DVector<f64>,
    j: &NeighborView,
    k: &NeighborView,
) -> Result<DVector<f64>> {
    let dj = &j.rel_rot * &j.eigvec_block - own_block;
    let dk = &k.rel_rot * &k.eigvec_block - own_block;
    let term_j = (curvature_d(&j.bearing, j.dist, &k.bearing)?
        - curvature_e(&k.bearing, k.dist, &j.bearing, j.dist)?)
        * dj;
    let term_k = (curvature_d(&k.bearing, k.dist, &j.bearing)?
        - curvature_e(&j.bearing, j.dist, &k.bearing, k.dist)?)
        * dk;
    Ok(term_j + term_k)
}

/// Gradient of observer `j`'s row `A_jik nu` in the observed robot `i`'s
/// position, expressed in `j`'s body frame; the message content of the
/// two-phase exchange.
fn row_gradient_observed(
    own_block_j: &DVector<f64>,
    i: &NeighborView,
    k: &NeighborView,
) -> Result<DVector<f64>> {
    let di = &i.rel_rot * &i.eigvec_block - own_block_j;
    let dk = &k.rel_rot * &k.eigvec_block - own_block_j;
    let term_i = curvature_d(&i.bearing, i.dist, &k.bearing)? * di;
    let term_k = curvature_e(&i.bearing, i.dist, &k.bearing, k.dist)? * dk;
    Ok(term_k - term_i)
}

/// One message of the two-phase rigidity step: the second-summation term for
/// recipient `to`, expressed in the sender's body frame. The recipient
/// rotates it by the relative rotation it measures.
#[derive(Debug, Clone)]
pub struct SharedRigidityTerm {
    pub from: usize,
    pub to: usize,
    pub vector: DVector<f64>,
}

/// Phase one: observer `j` produces, for every triple it measures and each
/// of the two observed robots, the weight-gradient and row-gradient term of
/// the eigenvalue gradient in that robot's position.
pub fn rigidity_shared_terms(
    j: usize,
    state: &JointState,
    wr: &WeightedRigidity,
    wp: &WeightParams,
) -> Result<Vec<SharedRigidityTerm>> {
    let d = state.dim();
    let mut e1 = DVector::zeros(d);
    e1[0] = 1.0;
    let view = RigidityView::gather(j, state, wr, wp)?;
    let mut terms = Vec::new();
    for (row, &(obs, a, b)) in wr.angles.triples().iter().enumerate() {
        if obs != j {
            continue;
        }
        let w = wr.weights[row];
        let va = view.neighbor(a);
        let vb = view.neighbor(b);
        let a_val = row_times_eigenvector(&view.own_block, va, vb)?;
        for (target, t, o) in [(a, va, vb), (b, vb, va)] {
            let grad_w = weight_gradient_observed(&t.weight, &o.weight, &e1)?;
            let grad_row = row_gradient_observed(&view.own_block, t, o)?;
            terms.push(SharedRigidityTerm {
                from: j,
                to: target,
                vector: a_val * a_val * grad_w + 2.0 * w * a_val * grad_row,
            });
        }
    }
    Ok(terms)
}

/// Outcome of the rigidity action for one robot.
#[derive(Debug, Clone)]
pub struct RigidityControlOutput {
    pub input: ControlInput,
    /// True when the eigenvalue floor forced a magnitude clamp.
    pub clamped: bool,
}

/// Phase two: robot `i` assembles its rigidity action from its own triples
/// plus the received shared terms, scaled by the inverse eigenvalue. The
/// messages arrive in their senders' frames; `i` rotates each by the
/// relative rotation it measures toward the sender.
pub fn rigidity_control(
    i: usize,
    state: &JointState,
    wr: &WeightedRigidity,
    wp: &WeightParams,
    received: &[SharedRigidityTerm],
    u_max: f64,
) -> Result<RigidityControlOutput> {
    let d = state.dim();
    let rotations = state.rotations()?;
    let mut e1 = DVector::zeros(d);
    e1[0] = 1.0;
    let view = RigidityView::gather(i, state, wr, wp)?;

    let mut linear = DVector::zeros(d);
    let mut angular = DVector::zeros(spin_dim(d));
    for (row, &(obs, a, b)) in wr.angles.triples().iter().enumerate() {
        if obs != i {
            continue;
        }
        let w = wr.weights[row];
        let va = view.neighbor(a);
        let vb = view.neighbor(b);
        let a_val = row_times_eigenvector(&view.own_block, va, vb)?;
        let grad_w = weight_gradient_own(&va.weight, &vb.weight, &e1)?;
        let grad_row = row_gradient_own(&view.own_block, va, vb)?;
        linear += a_val * a_val * &grad_w + 2.0 * w * a_val * grad_row;
        angular += a_val * a_val * weight_gradient_rotation(&va.weight, &vb.weight)?;
    }
    for term in received.iter().filter(|t| t.to == i) {
        // R_(i, sender): measured relative rotation toward the sender
        let rel = rotations[i].transpose() * &rotations[term.from];
        linear += rel * &term.vector;
    }

    let lambda = wr.eigenpair.eigenvalue;
    let clamped = lambda < EIGENVALUE_FLOOR;
    let inv = 1.0 / lambda.max(EIGENVALUE_FLOOR);
    linear *= inv;
    angular *= inv;
    if clamped {
        let ln = linear.norm();
        if ln > u_max {
            linear *= u_max / ln;
        }
        let an = angular.norm();
        if an > u_max {
            angular *= u_max / an;
        }
    }
    Ok(RigidityControlOutput {
        input: ControlInput { linear, angular },
        clamped,
    })
}

/// Runs both phases for every robot against one weighted-rigidity snapshot.
pub fn all_rigidity_controls(
    state: &JointState,
    wr: &WeightedRigidity,
    wp: &WeightParams,
    u_max: f64,
) -> Result<(Vec<ControlInput>, bool)> {
    let n = state.len();
    let mut inbox = Vec::new();
    for j in 0..n {
        inbox.extend(rigidity_shared_terms(j, state, wr, wp)?);
    }
    let mut inputs = Vec::with_capacity(n);
    let mut any_clamped = false;
    for i in 0..n {
        let out = rigidity_control(i, state, wr, wp, &inbox, u_max)?;
        any_clamped |= out.clamped;
        inputs.push(out.input);
    }
    Ok((inputs, any_clamped))
}

/// The inter-robot collision potential over the sensing edges:
/// `sum over edges of ((d - rho) / d)^2`, unbounded at contact and flat at
/// the sensing range.
pub fn collision_cost(positions: &[DVector<f64>], graph: &DirectedGraph, rho: f64) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let d = (&positions[j] - &positions[i]).norm();
            let t = (d - rho) / d;
            t * t
        })
        .sum()
}

/// Body-frame collision avoidance action: the negative own-position gradient
/// of [`collision_cost`], with the terms of observers of `i` delivered as
/// body-frame bearings and rotated by the measured relative rotations.
pub fn collision_control(
    i: usize,
    state: &JointState,
    graph: &DirectedGraph,
    cam: &CameraParams,
) -> Result<DVector<f64>> {
    let d = state.dim();
    let rotations = state.rotations()?;
    let rho = cam.range;
    let mut out = DVector::zeros(d);
    for j in graph.out_neighbors(i) {
        let (beta, dist) = bearing_and_distance(state.position(i), state.position(j))?;
        let body = rotations[i].transpose() * beta;
        out += 2.0 * rho * (dist - rho) / dist.powi(3) * body;
    }
    for j in graph.in_neighbors(i) {
        // j observes i and sends its own body-frame bearing toward i
        let (beta_ji, dist) = bearing_and_distance(state.position(j), state.position(i))?;
        let body_ji = rotations[j].transpose() * beta_ji;
        let rel = rotations[i].transpose() * &rotations[j];
        out -= 2.0 * rho * (dist - rho) / dist.powi(3) * (rel * body_ji);
    }
    Ok(out)
}

/// The same barrier shape as [`collision_cost`] for a robot-target pair,
/// with the tracking radius in place of the sensing range.
pub fn target_collision_cost(position: &DVector<f64>, target: &DVector<f64>, rho_t: f64) -> f64 {
    let d = (target - position).norm();
    let t = (d - rho_t) / d;
    t * t
}

/// Body-frame repulsion from the assigned target; one-sided since the target
/// is not controlled.
pub fn target_collision_control(
    i: usize,
    state: &JointState,
    target: &DVector<f64>,
    rho_t: f64,
) -> Result<DVector<f64>> {
    let rotations = state.rotations()?;
    let (beta, dist) = bearing_and_distance(state.position(i), target)?;
    let body = rotations[i].transpose() * beta;
    Ok(2.0 * rho_t * (dist - rho_t) / dist.powi(3) * body)
}

/// The tracking potential of one robot: range ramp toward the target plus an
/// aim penalty on the camera-axis cosine.
pub fn mission_cost(
    i: usize,
    state: &JointState,
    target: &DVector<f64>,
    gains: &Gains,
) -> Result<f64> {
    let rotations = state.rotations()?;
    let (beta, dist) = bearing_and_distance(state.position(i), target)?;
    let zeta = beta.dot(&rotations[i].column(0));
    Ok(gains.mu_r * smoothstep(dist, 0.0, gains.rho_t)?
        + gains.mu_f * (1.0 - smoothstep(zeta, -1.0, 1.0)?))
}

/// Mission action: negative body-frame gradient of [`mission_cost`]. The
/// linear part attracts within the tracking radius and swings the position
/// to face the target; the angular part turns the camera axis onto it.
pub fn mission_control(
    i: usize,
    state: &JointState,
    target: &DVector<f64>,
    gains: &Gains,
) -> Result<ControlInput> {
    let d = state.dim();
    let rotations = state.rotations()?;
    let (beta, dist) = bearing_and_distance(state.position(i), target)?;
    let body = rotations[i].transpose() * beta;
    let zeta = body[0];
    let mut e1 = DVector::zeros(d);
    e1[0] = 1.0;
    let sr = smoothstep_deriv(dist, 0.0, gains.rho_t)?;
    let sf = smoothstep_deriv(zeta, -1.0, 1.0)?;
    let linear = gains.mu_r * sr * &body - gains.mu_f * sf / dist * (projection(&body)? * e1);
    let angular = gains.mu_f * sf * axis_angular(&body)?;
    Ok(ControlInput { linear, angular })
}

/// Gain-weighted composition of the three objectives.
pub fn composite_control(
    rigidity: &ControlInput,
    collision: &DVector<f64>,
    mission: &ControlInput,
    gains: &Gains,
) -> ControlInput {
    ControlInput {
        linear: gains.gamma_r * &rigidity.linear
            + gains.gamma_c * collision
            + gains.gamma_m * &mission.linear,
        angular: gains.gamma_r_ang * &rigidity.angular + gains.gamma_m_ang * &mission.angular,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck;
    use crate::geometry::rotation_exp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec3(x: f64, y: f64, z: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y, z])
    }

    fn test_camera() -> CameraParams {
        CameraParams {
            range: 30.0,
            fov_cos: 0.5,
        }
    }

    fn test_weights() -> WeightParams {
        WeightParams {
            a_r: 24.0,
            b_r: 30.0,
            a_f: 0.5,
            b_f: 0.7,
        }
    }

    /// Rotation whose first column is the unit vector toward `target`.
    fn aim_rotation(from: &DVector<f64>, target: &DVector<f64>) -> DMatrix<f64> {
        let d = from.len();
        let axis = (target - from).normalize();
        let mut m = DMatrix::zeros(d, d);
        m.set_column(0, &axis);
        if d == 2 {
            m[(0, 1)] = -axis[1];
            m[(1, 1)] = axis[0];
        } else {
            let helper = if axis[2].abs() < 0.9 {
                vec3(0.0, 0.0, 1.0)
            } else {
                vec3(0.0, 1.0, 0.0)
            };
            let second = (&helper - axis.dot(&helper) * &axis).normalize();
            let third = crate::geometry::skew(&axis).unwrap() * &second;
            m.set_column(1, &second);
            m.set_column(2, &third);
        }
        m
    }

    /// Random cluster with cameras roughly aimed at the barycenter, resampled
    /// until the weighted eigenvalue is healthy, its gap comfortable, and all
    /// ramp arguments clear of the plateau kinks (central differences lose an
    /// order of accuracy on top of a C^1 kink).
    fn random_sensing_state(rng: &mut ChaCha8Rng, n: usize, d: usize) -> JointState {
        let wp = test_weights();
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
                    let dp = crate::geometry::spin_dim(d);
                    let tweak =
                        DVector::from_fn(dp, |_, _| rng.random_range(-0.25..0.25));
                    aim_rotation(p, &bary) * rotation_exp(&tweak).unwrap()
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let (beta, dist) =
                        bearing_and_distance(&positions[i], &positions[j]).unwrap();
                    if dist < 1.0 {
                        continue 'outer;
                    }
                    let zeta = beta.dot(&rotations[i].column(0));
                    for kink in [wp.a_r, wp.b_r] {
                        if (dist - kink).abs() < 1e-3 {
                            continue 'outer;
                        }
                    }
                    for kink in [wp.a_f, wp.b_f] {
                        if (zeta - kink).abs() < 1e-3 {
                            continue 'outer;
                        }
                    }
                }
            }
            let state = JointState::from_poses(positions, rotations).unwrap();
            match weighted_rigidity(&state, &test_camera(), &wp) {
                Ok(wr)
                    if wr.eigenpair.eigenvalue > 1e-6
                        && wr.eigenpair.multiplicity_gap > 1e-4 =>
                {
                    return state;
                }
                _ => continue,
            }
        }
    }

    #[test]
    fn sensing_predicate_cases() {
        // robot 0 at origin aiming +x with zeta = 0.6 toward robot 1
        let cam = test_camera();
        let dir = vec3(0.6, 0.8, 0.0);
        for (dist, zeta, expect) in [(29.0, 0.6, true), (31.0, 0.6, false), (29.0, 0.4, false)] {
            let p1 = dist * &dir;
            // camera axis tilted away from the bearing so that beta . axis = zeta
            let beta = dir.clone();
            let ortho = vec3(-beta[1], beta[0], 0.0);
            let axis = zeta * &beta + (1.0 - zeta * zeta).sqrt() * ortho;
            let r0 = {
                let mut m = DMatrix::zeros(3, 3);
                m.set_column(0, &axis);
                let helper = vec3(0.0, 0.0, 1.0);
                let second = (&helper - axis.dot(&helper) * &axis).normalize();
                let third = crate::geometry::skew(&axis).unwrap() * &second;
                m.set_column(1, &second);
                m.set_column(2, &third);
                m
            };
            let state = JointState::from_poses(
                vec![vec3(0.0, 0.0, 0.0), p1],
                vec![r0, DMatrix::identity(3, 3)],
            )
            .unwrap();
            let g = sensing_edges(&state, &cam).unwrap();
            assert_eq!(
                g.has_edge(0, 1),
                expect,
                "dist {dist}, zeta {zeta} should give edge = {expect}"
            );
        }
    }

    #[test]
    fn smoothstep_boundaries() {
        assert_eq!(smoothstep(1.0, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(smoothstep(2.0, 1.0, 2.0).unwrap(), 1.0);
        assert_relative_eq!(smoothstep(1.5, 1.0, 2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(smoothstep_deriv(1.0, 1.0, 2.0).unwrap(), 0.0);
        assert!(smoothstep_deriv(2.0, 1.0, 2.0).unwrap() < 1e-15);
        assert!(smoothstep(0.0, 2.0, 2.0).is_err());

        // derivative matches central differences away from the kinks
        for x in [1.1, 1.3, 1.77] {
            let fd = fdcheck::derivative(|t| smoothstep(t, 1.0, 2.0).unwrap(), x, 1e-7);
            assert_relative_eq!(
                smoothstep_deriv(x, 1.0, 2.0).unwrap(),
                fd,
                max_relative = 1e-7
            );
        }
    }

    #[test]
    fn angle_weight_cases() {
        let wp = test_weights();
        // both neighbors deep in the plateau: weight is exactly d_ij * d_ik
        let p0 = vec3(0.0, 0.0, 0.0);
        let p1 = vec3(10.0, 0.5, 0.0);
        let p2 = vec3(12.0, -0.8, 0.3);
        let r0 = aim_rotation(&p0, &vec3(11.0, 0.0, 0.0));
        let state = JointState::from_poses(
            vec![p0.clone(), p1.clone(), p2.clone()],
            vec![r0, DMatrix::identity(3, 3), DMatrix::identity(3, 3)],
        )
        .unwrap();
        let w = angle_weight(0, 1, 2, &state, &wp).unwrap();
        let d1 = (&p1 - &p0).norm();
        let d2 = (&p2 - &p0).norm();
        assert_relative_eq!(w, d1 * d2, max_relative = 1e-12);

        // out-of-range neighbor kills the weight
        let p2_far = vec3(31.0, 0.0, 0.0);
        let state2 = JointState::from_poses(
            vec![p0.clone(), p1.clone(), p2_far],
            vec![
                aim_rotation(&p0, &vec3(11.0, 0.0, 0.0)),
                DMatrix::identity(3, 3),
                DMatrix::identity(3, 3),
            ],
        )
        .unwrap();
        assert_eq!(angle_weight(0, 1, 2, &state2, &wp).unwrap(), 0.0);

        // neighbor outside the view ramp kills it too
        let p2_side = vec3(0.0, 12.0, 0.0); // zeta roughly 0 < a_f
        let state3 = JointState::from_poses(
            vec![p0.clone(), p1, p2_side],
            vec![
                aim_rotation(&p0, &vec3(11.0, 0.0, 0.0)),
                DMatrix::identity(3, 3),
                DMatrix::identity(3, 3),
            ],
        )
        .unwrap();
        assert_eq!(angle_weight(0, 1, 2, &state3, &wp).unwrap(), 0.0);
    }

    #[test]
    fn weight_support_iff_strict_interior_predicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let wp = test_weights();
        let state = random_sensing_state(&mut rng, 5, 3);
        let wr = weighted_rigidity(&state, &test_camera(), &wp).unwrap();
        let rotations = state.rotations().unwrap();
        for (row, &(i, j, k)) in wr.angles.triples().iter().enumerate() {
            let mut interior = true;
            for v in [j, k] {
                let (beta, dist) =
                    bearing_and_distance(state.position(i), state.position(v)).unwrap();
                let zeta = beta.dot(&rotations[i].column(0));
                interior &= dist < wp.b_r && zeta > wp.a_f;
            }
            assert_eq!(wr.weights[row] > 0.0, interior, "triple ({i},{j},{k})");
        }
    }

    #[test]
    fn unit_weights_reduce_to_unweighted_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for d in [2usize, 3] {
            let n = 5;
            let graph = DirectedGraph::complete(n);
            let angles = angle_set(&graph);
            let positions: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(d, |_, _| rng.random_range(0.0..3.0)))
                .collect();
            let ones = vec![1.0; angles.len()];
            let pair = weighted_eigenpair(&positions, &angles, &ones).unwrap();
            let plain = crate::rigidity::rigidity_eigenvalue(&positions, &angles).unwrap();
            assert_relative_eq!(pair.eigenvalue, plain, max_relative = 1e-8, epsilon = 1e-12);
            // eigenpair residual
            let a = angle_rigidity_matrix(&positions, &angles).unwrap();
            let sym = a.transpose() * &a;
            let res = (&sym * &pair.eigenvector - pair.eigenvalue * &pair.eigenvector).norm();
            assert!(res < 1e-8, "eigenpair residual {res}");
        }
    }

    #[test]
    fn weighted_eigenvalue_scale_invariant_without_ramps() {
        // With the range ramp pushed to infinity and the view ramp saturated,
        // the distance factors cancel the row scaling exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cam = CameraParams {
            range: 1e15,
            fov_cos: 0.0,
        };
        let wp = WeightParams {
            a_r: 1e12,
            b_r: 2e12,
            a_f: -2.0,
            b_f: -1.5,
        };
        let state = random_sensing_state(&mut rng, 5, 3);
        let wr = weighted_rigidity(&state, &cam, &wp).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled_positions: Vec<DVector<f64>> =
                state.positions().iter().map(|p| p * c).collect();
            let scaled = JointState::from_poses(
                scaled_positions,
                state.rotations().unwrap().to_vec(),
            )
            .unwrap();
            let wr_scaled = weighted_rigidity(&scaled, &cam, &wp).unwrap();
            assert_relative_eq!(
                wr_scaled.eigenpair.eigenvalue,
                wr.eigenpair.eigenvalue,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn floppy_configuration_has_zero_weighted_eigenvalue() {
        // two robots see nothing, the rest too few angles
        let p = vec![
            vec3(0.0, 0.0, 0.0),
            vec3(10.0, 0.0, 0.0),
            vec3(0.0, 10.0, 0.0),
            vec3(10.0, 10.0, 0.0),
            vec3(5.0, 5.0, 8.0),
        ];
        let rots: Vec<DMatrix<f64>> = p
            .iter()
            .map(|x| aim_rotation(x, &vec3(5.0, 5.0, 0.0)))
            .collect();
        let state = JointState::from_poses(p, rots).unwrap();
        // shrink the camera range so almost no edges survive
        let cam = CameraParams {
            range: 3.0,
            fov_cos: 0.5,
        };
        let wr = weighted_rigidity(&state, &cam, &test_weights()).unwrap();
        assert!(wr.eigenpair.eigenvalue < 1e-12);
    }

    /// Full reassembly of the weighted eigenvalue as a plain function of the
    /// joint pose, for finite differencing.
    fn lambda_of(positions: &[DVector<f64>], rotations: &[DMatrix<f64>]) -> f64 {
        let state =
            JointState::from_poses(positions.to_vec(), rotations.to_vec()).unwrap();
        weighted_rigidity(&state, &test_camera(), &test_weights())
            .unwrap()
            .eigenpair
            .eigenvalue
    }

    #[test]
    fn rigidity_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let n = 5;
        let mut checked = 0;
        while checked < 8 {
            let state = random_sensing_state(&mut rng, n, 3);
            let wr = weighted_rigidity(&state, &test_camera(), &test_weights()).unwrap();
            let (inputs, clamped) =
                all_rigidity_controls(&state, &wr, &test_weights(), 10.0).unwrap();
            assert!(!clamped);
            let lambda = wr.eigenpair.eigenvalue;
            let rotations = state.rotations().unwrap().to_vec();
            let positions = state.positions().to_vec();
            for i in 0..n {
                // linear: grad_{p_i} lambda = lambda * R_i * u_r(i)
                let analytic = lambda * &rotations[i] * &inputs[i].linear;
                let mut fd = DVector::zeros(3);
                for c in 0..3 {
                    let mut plus = positions.clone();
                    let mut minus = positions.clone();
                    let h = 1e-6 * positions[i][c].abs().max(1.0);
                    plus[i][c] += h;
                    minus[i][c] -= h;
                    fd[c] = (lambda_of(&plus, &rotations) - lambda_of(&minus, &rotations))
                        / (2.0 * h);
                }
                let err = fdcheck::relative_error(&analytic, &fd, 1e-10);
                assert!(err < 1e-4, "linear rigidity gradient err {err} robot {i}");

                // angular: body directional derivatives give lambda * omega_r
                let analytic_ang = lambda * &inputs[i].angular;
                let fd_ang = fdcheck::so_body_gradient(
                    |r| {
                        let mut rots = rotations.clone();
                        rots[i] = r.clone();
                        lambda_of(&positions, &rots)
                    },
                    &rotations[i],
                    1e-6,
                );
                let err_ang = fdcheck::relative_error(&analytic_ang, &fd_ang, 1e-10);
                assert!(err_ang < 1e-4, "angular rigidity gradient err {err_ang} robot {i}");
            }
            checked += 1;
        }
    }

    #[test]
    fn rigidity_control_invariant_under_global_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let state = random_sensing_state(&mut rng, 5, 3);
        let wp = test_weights();
        let cam = test_camera();
        let wr = weighted_rigidity(&state, &cam, &wp).unwrap();
        let (inputs, _) = all_rigidity_controls(&state, &wr, &wp, 10.0).unwrap();

        let q = rotation_exp(&vec3(0.7, -0.3, 1.2)).unwrap();
        let shift = vec3(100.0, -50.0, 30.0);
        let moved_positions: Vec<DVector<f64>> =
            state.positions().iter().map(|p| &q * p + &shift).collect();
        let moved_rotations: Vec<DMatrix<f64>> = state
            .rotations()
            .unwrap()
            .iter()
            .map(|r| &q * r)
            .collect();
        let moved = JointState::from_poses(moved_positions, moved_rotations).unwrap();
        let wr2 = weighted_rigidity(&moved, &cam, &wp).unwrap();
        assert_relative_eq!(
            wr2.eigenpair.eigenvalue,
            wr.eigenpair.eigenvalue,
            max_relative = 1e-9
        );
        let (inputs2, _) = all_rigidity_controls(&moved, &wr2, &wp, 10.0).unwrap();
        for (a, b) in inputs.iter().zip(&inputs2) {
            assert!(
                (&a.linear - &b.linear).amax() < 1e-9,
                "body-frame linear input changed under a global rigid motion"
            );
            assert!((&a.angular - &b.angular).amax() < 1e-9);
        }
    }

    #[test]
    fn plateau_states_have_zero_angular_rigidity_action() {
        // a loose forward-looking chain: every sensed pair sits deep in both
        // ramps' plateaus, every sigma' vanishes, and the angular action (a
        // pure view-weight term) is identically zero
        let p = vec![
            vec3(0.0, 0.0, 0.0),
            vec3(3.0, 0.4, -0.2),
            vec3(6.0, -0.3, 0.35),
            vec3(9.0, 0.2, 0.3),
        ];
        let far = vec3(1000.0, 0.0, 0.0);
        let rots: Vec<DMatrix<f64>> = p.iter().map(|x| aim_rotation(x, &far)).collect();
        let state = JointState::from_poses(p, rots).unwrap();
        let wp = test_weights();
        let wr = weighted_rigidity(&state, &test_camera(), &wp).unwrap();
        // plateau check: every weight equals the bare distance product
        for (row, &(i, j, k)) in wr.angles.triples().iter().enumerate() {
            let dij = (state.position(j) - state.position(i)).norm();
            let dik = (state.position(k) - state.position(i)).norm();
            assert_relative_eq!(wr.weights[row], dij * dik, max_relative = 1e-12);
        }
        let (inputs, _) = all_rigidity_controls(&state, &wr, &wp, 10.0).unwrap();
        for input in &inputs {
            assert!(input.angular.norm() < 1e-12);
        }
    }

    #[test]
    fn collision_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let cam = test_camera();
        for _ in 0..20 {
            let state = random_sensing_state(&mut rng, 5, 3);
            let graph = sensing_edges(&state, &cam).unwrap();
            let rotations = state.rotations().unwrap().to_vec();
            for i in 0..5 {
                let analytic = collision_control(i, &state, &graph, &cam).unwrap();
                // -R_i^T grad_{p_i} C
                let mut fd = DVector::zeros(3);
                let positions = state.positions().to_vec();
                for c in 0..3 {
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
                let err = fdcheck::relative_error(&analytic, &expected, 1e-10);
                assert!(err < 1e-6, "collision gradient err {err}");
            }
        }
    }

    #[test]
    fn collision_action_boundary_cases() {
        // neighbors exactly at the sensing range: zero action
        let p = vec![vec3(0.0, 0.0, 0.0), vec3(30.0, 0.0, 0.0)];
        let rots = vec![DMatrix::identity(3, 3), DMatrix::identity(3, 3)];
        let state = JointState::from_poses(p, rots).unwrap();
        let graph = DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let cam = test_camera();
        let out = collision_control(0, &state, &graph, &cam).unwrap();
        assert!(out.norm() < 1e-12);

        // close pair: action separates and grows
        let near = JointState::from_poses(
            vec![vec3(0.0, 0.0, 0.0), vec3(0.05, 0.0, 0.0)],
            vec![DMatrix::identity(3, 3), DMatrix::identity(3, 3)],
        )
        .unwrap();
        let out_near = collision_control(0, &near, &graph, &cam).unwrap();
        // robot 0 must accelerate away from robot 1, i.e. in -x
        assert!(out_near[0] < -1e4);
    }

    #[test]
    fn mission_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let gains = Gains {
            gamma_r: 5.0,
            gamma_c: 1.0,
            gamma_m: 25.0,
            gamma_r_ang: 0.5,
            gamma_m_ang: 2.5,
            mu_r: 6.0,
            mu_f: 1.0,
            rho_t: 20.0,
            u_max: 10.0,
        };
        for _ in 0..30 {
            let state = random_sensing_state(&mut rng, 4, 3);
            let target = DVector::from_fn(3, |_, _| rng.random_range(-15.0..15.0));
            let dist = (&target - state.position(0)).norm();
            if dist < 0.5 || (dist - gains.rho_t).abs() < 1e-3 {
                continue;
            }
            let got = mission_control(0, &state, &target, &gains).unwrap();
            let rotations = state.rotations().unwrap().to_vec();
            let positions = state.positions().to_vec();

            let mut fd = DVector::zeros(3);
            for c in 0..3 {
                let h = 1e-6 * positions[0][c].abs().max(1.0);
                let eval = |x: f64| {
                    let mut p = positions.clone();
                    p[0][c] = x;
                    let s = JointState::from_poses(p, rotations.clone()).unwrap();
                    mission_cost(0, &s, &target, &gains).unwrap()
                };
                fd[c] = (eval(positions[0][c] + h) - eval(positions[0][c] - h)) / (2.0 * h);
            }
            let expected_lin = -rotations[0].transpose() * fd;
            let err = fdcheck::relative_error(&got.linear, &expected_lin, 1e-10);
            assert!(err < 1e-6, "mission linear gradient err {err}");

            let fd_ang = fdcheck::so_body_gradient(
                |r| {
                    let mut rots = rotations.clone();
                    rots[0] = r.clone();
                    let s = JointState::from_poses(positions.clone(), rots).unwrap();
                    mission_cost(0, &s, &target, &gains).unwrap()
                },
                &rotations[0],
                1e-6,
            );
            let err_ang = fdcheck::relative_error(&got.angular, &(-fd_ang), 1e-10);
            assert!(err_ang < 1e-6, "mission angular gradient err {err_ang}");
        }
    }

    #[test]
    fn mission_action_special_cases() {
        let gains = Gains {
            gamma_r: 5.0,
            gamma_c: 1.0,
            gamma_m: 25.0,
            gamma_r_ang: 0.5,
            gamma_m_ang: 2.5,
            mu_r: 6.0,
            mu_f: 1.0,
            rho_t: 20.0,
            u_max: 10.0,
        };
        // camera aimed exactly at the target: angular action vanishes
        let p0 = vec3(0.0, 0.0, 0.0);
        let target = vec3(10.0, 0.0, 0.0);
        let state = JointState::from_poses(
            vec![p0.clone(), vec3(0.0, 5.0, 0.0)],
            vec![aim_rotation(&p0, &target), DMatrix::identity(3, 3)],
        )
        .unwrap();
        let out = mission_control(0, &state, &target, &gains).unwrap();
        assert!(out.angular.norm() < 1e-12);

        // beyond the tracking radius the range attraction is off
        let far = vec3(25.0, 0.0, 0.0);
        let out_far = mission_control(0, &state, &far, &gains).unwrap();
        // with the camera aimed at the target the view term vanishes too
        assert!(out_far.linear.norm() < 1e-12);
    }

    #[test]
    fn composite_is_gain_linear() {
        let gains = Gains {
            gamma_r: 5.0,
            gamma_c: 1.0,
            gamma_m: 25.0,
            gamma_r_ang: 0.5,
            gamma_m_ang: 2.5,
            mu_r: 6.0,
            mu_f: 1.0,
            rho_t: 20.0,
            u_max: 10.0,
        };
        let rig = ControlInput {
            linear: vec3(1.0, 0.0, -1.0),
            angular: vec3(0.1, 0.2, 0.3),
        };
        let coll = vec3(0.0, 2.0, 0.0);
        let miss = ControlInput {
            linear: vec3(-1.0, 1.0, 0.0),
            angular: vec3(0.0, -0.1, 0.0),
        };
        let out = composite_control(&rig, &coll, &miss, &gains);
        assert_relative_eq!(
            out.linear,
            5.0 * &rig.linear + 1.0 * &coll + 25.0 * &miss.linear,
            epsilon = 1e-15
        );
        let mut doubled = gains;
        doubled.gamma_r = 10.0;
        let out2 = composite_control(&rig, &coll, &miss, &doubled);
        assert_relative_eq!(
            DVector::from(out2.linear - out.linear),
            5.0 * rig.linear,
            epsilon = 1e-12
        );

        let zero = composite_control(
            &ControlInput::zeros(3),
            &DVector::zeros(3),
            &ControlInput::zeros(3),
            &gains,
        );
        assert!(zero.linear.norm() == 0.0 && zero.angular.norm() == 0.0);
    }

    #[test]
    fn eigenvalue_floor_clamps_magnitude() {
        // a configuration with no usable angles: lambda = 0, so the action is
        // clamped rather than infinite
        let p = vec![
            vec3(0.0, 0.0, 0.0),
            vec3(100.0, 0.0, 0.0),
            vec3(0.0, 100.0, 0.0),
            vec3(100.0, 100.0, 0.0),
            vec3(50.0, 50.0, 100.0),
        ];
        let rots: Vec<DMatrix<f64>> = p
            .iter()
            .map(|x| aim_rotation(x, &vec3(50.0, 50.0, 20.0)))
            .collect();
        let state = JointState::from_poses(p, rots).unwrap();
        let wr = weighted_rigidity(&state, &test_camera(), &test_weights()).unwrap();
        assert!(wr.eigenpair.eigenvalue < EIGENVALUE_FLOOR);
        let (inputs, clamped) =
            all_rigidity_controls(&state, &wr, &test_weights(), 10.0).unwrap();
        assert!(clamped);
        for input in inputs {
            assert!(input.linear.norm() <= 10.0 + 1e-9);
            assert!(input.is_finite());
        }
    }

    #[test]
    fn weighted_lambda_continuous_across_view_boundary() {
        // sweep one robot across the field-of-view cone of an observer and
        // check the eigenvalue moves by O(step), halving with the step
        let base = vec![
            vec3(0.0, 0.0, 0.0),
            vec3(10.0, 0.0, 0.0),
            vec3(10.0, 6.0, 0.0),
            vec3(4.0, -6.0, 2.0),
            vec3(6.0, 2.0, -5.0),
        ];
        let bary = {
            let mut b = DVector::zeros(3);
            for p in &base {
                b += p;
            }
            b / 5.0
        };
        let rots: Vec<DMatrix<f64>> = base.iter().map(|p| aim_rotation(p, &bary)).collect();
        let sweep = |step: f64| -> f64 {
            let mut max_jump: f64 = 0.0;
            let mut prev: Option<f64> = None;
            let kmax = (8.0 / step) as usize;
            for k in 0..=kmax {
                let mut p = base.clone();
                // robot 2 slides sideways, leaving several view cones
                p[2] = vec3(10.0, 6.0 + step * k as f64, 0.0);
                let state = JointState::from_poses(p, rots.clone()).unwrap();
                let wr =
                    weighted_rigidity(&state, &test_camera(), &test_weights()).unwrap();
                let lambda = wr.eigenpair.eigenvalue;
                if let Some(last) = prev {
                    max_jump = max_jump.max((lambda - last).abs());
                }
                prev = Some(lambda);
            }
            max_jump
        };
        let coarse = sweep(8.0 / 1000.0);
        let fine = sweep(8.0 / 2000.0);
        assert!(
            fine < 0.75 * coarse,
            "eigenvalue jump did not shrink with the step: {coarse} -> {fine}"
        );
    }

    #[test]
    fn param_validation() {
        assert!(test_camera().validate().is_ok());
        assert!(CameraParams {
            range: -1.0,
            fov_cos: 0.5
        }
        .validate()
        .is_err());
        assert!(CameraParams {
            range: 1.0,
            fov_cos: 1.0
        }
        .validate()
        .is_err());
        assert!(test_weights().validate_against(&test_camera()).is_ok());
        let mut wp = test_weights();
        wp.b_r = 31.0;
        assert!(wp.validate_against(&test_camera()).is_err());
        wp = test_weights();
        wp.a_f = 0.4;
        assert!(wp.validate_against(&test_camera()).is_err());
        wp = test_weights();
        wp.a_r = 30.0;
        assert!(wp.validate().is_err());
    }
}
