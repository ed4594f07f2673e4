//! Kinematic and linear-algebra primitives on R^d and SE(d), d in {2, 3}.
//!
//! The ambient dimension is a runtime parameter throughout: every operation
//! accepts d = 2 or d = 3 and rejects anything else. Rotations live in SO(d)
//! and their tangent parameters in R^{d'} with d' = binom(d, 2), so d' = 1
//! in the plane and d' = 3 in space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for unit-norm and orthogonality checks.
pub const UNIT_TOL: f64 = 1e-9;
/// Inputs whose norm deviates by less than this are renormalized instead of rejected.
pub const UNIT_RENORM_TOL: f64 = 1e-6;
/// Two points closer than this are treated as coincident.
pub const COINCIDENT_TOL: f64 = 1e-12;

/// Number of rotational degrees of freedom for ambient dimension `d`.
pub fn spin_dim(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Ambient dimension recovered from a spin-space vector length.
fn ambient_from_spin(dp: usize) -> Option<usize> {
    match dp {
        1 => Some(2),
        3 => Some(3),
        _ => None,
    }
}

/// The linear map S from R^{d'} onto the skew-symmetric d x d matrices.
///
/// For d = 2, `S(x) y = x [-y2; y1]`; for d = 3, `S(x) y = x × y`.
pub fn skew(x: &DVector<f64>) -> Result<DMatrix<f64>> {
    match x.len() {
        1 => Ok(DMatrix::from_row_slice(2, 2, &[0.0, -x[0], x[0], 0.0])),
        3 => Ok(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, -x[2], x[1], x[2], 0.0, -x[0], -x[1], x[0], 0.0],
        )),
        n => Err(Error::DimensionMismatch(format!(
            "skew expects a 1- or 3-vector, got length {n}"
        ))),
    }
}

/// Inverse of [`skew`]. Rejects matrices that are not skew-symmetric to `UNIT_TOL`.
pub fn unskew(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = m.nrows();
    if m.ncols() != d || !(d == 2 || d == 3) {
        return Err(Error::DimensionMismatch(format!(
            "unskew expects a 2x2 or 3x3 matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = (m + m.transpose()).norm();
    if sym > UNIT_TOL {
        return Err(Error::NonSkewMatrix(sym));
    }
    if d == 2 {
        Ok(DVector::from_vec(vec![m[(1, 0)]]))
    } else {
        Ok(DVector::from_vec(vec![m[(2, 1)], m[(0, 2)], m[(1, 0)]]))
    }
}

/// Closed-form exponential of `skew(w)`: a planar rotation for d = 2,
/// Rodrigues' formula for d = 3.
pub fn rotation_exp(w: &DVector<f64>) -> Result<DMatrix<f64>> {
    match w.len() {
        1 => {
            let (s, c) = w[0].sin_cos();
            Ok(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
        }
        3 => {
            let theta = w.norm();
            let s = skew(w)?;
            // sin(t)/t and (1-cos(t))/t^2 with series fallbacks near zero.
            let (a, b) = if theta < 1e-6 {
                let t2 = theta * theta;
                (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
            } else {
                (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
            };
            Ok(DMatrix::identity(3, 3) + &s * a + (&s * &s) * b)
        }
        n => Err(Error::DimensionMismatch(format!(
            "rotation_exp expects a 1- or 3-vector, got length {n}"
        ))),
    }
}

/// One exact integration step of `Rdot = R S(w)` over `dt` seconds:
/// returns `R exp(S(w) dt)`, which stays on SO(d) for any step size.
pub fn rotation_step(r: &DMatrix<f64>, w: &DVector<f64>, dt: f64) -> Result<DMatrix<f64>> {
    if dt <= 0.0 {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    let expected = ambient_from_spin(w.len())
        .ok_or_else(|| Error::DimensionMismatch(format!("angular velocity length {}", w.len())))?;
    if r.nrows() != expected || r.ncols() != expected {
        return Err(Error::DimensionMismatch(format!(
            "rotation is {}x{}, angular velocity implies d = {}",
            r.nrows(),
            r.ncols(),
            expected
        )));
    }
    Ok(r * rotation_exp(&(w * dt))?)
}

/// Unit bearing from `p_i` toward `p_j` and the separating distance.
pub fn bearing_and_distance(
    p_i: &DVector<f64>,
    p_j: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    if p_i.len() != p_j.len() {
        return Err(Error::DimensionMismatch(format!(
            "points of length {} and {}",
            p_i.len(),
            p_j.len()
        )));
    }
    let diff = p_j - p_i;
    let dist = diff.norm();
    if dist < COINCIDENT_TOL {
        return Err(Error::CoincidentPoints(dist));
    }
    Ok((diff / dist, dist))
}

/// Orthogonal projection `I - b b^T` onto the complement of a unit vector.
///
/// Inputs within `UNIT_RENORM_TOL` of unit length are renormalized; anything
/// farther off is rejected.
pub fn projection(b: &DVector<f64>) -> Result<DMatrix<f64>> {
    let norm = b.norm();
    if (norm - 1.0).abs() > UNIT_RENORM_TOL {
        return Err(Error::NonUnitVector(norm));
    }
    let unit = b / norm;
    Ok(DMatrix::identity(b.len(), b.len()) - &unit * unit.transpose())
}

/// Body-frame gradient of the quadratic `f(R) = x^T R y` on SO(d) under the
/// metric `<A, B> = Tr(A^T B) / 2`, returned as the spin-space vector
/// `S^{-1}(R^T x y^T - y x^T R)`.
pub fn so_gradient_quadratic(
    r: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = r.nrows();
    if r.ncols() != d || x.len() != d || y.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "rotation {}x{}, x length {}, y length {}",
            r.nrows(),
            r.ncols(),
            x.len(),
            y.len()
        )));
    }
    let rtx = r.transpose() * x;
    let m = &rtx * y.transpose() - y * rtx.transpose();
    unskew(&m)
}

/// Spin-space vector `S^{-1}(v e1^T - e1 v^T)`, the recurring angular factor
/// of camera-axis gradients. Equals `S(e1) v` (i.e. `e1 × v`) for d = 3 and
/// the second component of `v` for d = 2.
pub fn axis_angular(v: &DVector<f64>) -> Result<DVector<f64>> {
    match v.len() {
        2 => Ok(DVector::from_vec(vec![v[1]])),
        3 => Ok(DVector::from_vec(vec![0.0, -v[2], v[1]])),
        n => Err(Error::DimensionMismatch(format!(
            "axis_angular expects a 2- or 3-vector, got length {n}"
        ))),
    }
}

/// Nearest rotation to `m` in Frobenius norm (special orthogonal Procrustes).
pub fn nearest_rotation(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    // the SVD iteration does not terminate on non-finite input
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotARotation("matrix has non-finite entries".into()));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut ortho = u * v_t;
    if ortho.determinant() < 0.0 {
        // Flip the weakest singular direction to land on SO(d).
        let mut flip = DMatrix::identity(d, d);
        flip[(d - 1, d - 1)] = -1.0;
        ortho = u * flip * v_t;
    }
    Ok(ortho)
}

/// Checks that `r` is orthogonal with determinant +1 to `UNIT_TOL`
/// (measured in Frobenius norm against its re-orthonormalization).
pub fn check_rotation(r: &DMatrix<f64>) -> Result<()> {
    let d = r.nrows();
    if r.ncols() != d || !(d == 2 || d == 3) {
        return Err(Error::NotARotation(format!(
            "expected a 2x2 or 3x3 matrix, got {}x{}",
            r.nrows(),
            r.ncols()
        )));
    }
    if r.determinant() < 0.0 {
        return Err(Error::NotARotation("determinant is negative".into()));
    }
    let nearest = nearest_rotation(r)?;
    let dev = (r - &nearest).norm();
    if dev > UNIT_TOL {
        return Err(Error::NotARotation(format!(
            "distance {dev:.3e} from the nearest rotation"
        )));
    }
    Ok(())
}

/// A single robot pose: position plus camera orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub position: DVector<f64>,
    pub rotation: DMatrix<f64>,
}

impl Pose {
    pub fn new(position: DVector<f64>, rotation: DMatrix<f64>) -> Result<Self> {
        let d = position.len();
        if !(d == 2 || d == 3) {
            return Err(Error::UnsupportedDimension(d));
        }
        if rotation.nrows() != d || rotation.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "position has dimension {d} but rotation is {}x{}",
                rotation.nrows(),
                rotation.ncols()
            )));
        }
        check_rotation(&rotation)?;
        Ok(Self { position, rotation })
    }
}

/// The joint configuration of all robots: positions, and orientations when
/// the analysis needs them (angle-only work runs without).
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    positions: Vec<DVector<f64>>,
    rotations: Option<Vec<DMatrix<f64>>>,
}

impl JointState {
    /// Positions-only state, for angle-based analyses.
    pub fn from_positions(positions: Vec<DVector<f64>>) -> Result<Self> {
        Self::build(positions, None)
    }

    /// Full SE(d) state.
    pub fn from_poses(positions: Vec<DVector<f64>>, rotations: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::build(positions, Some(rotations))
    }

    fn build(positions: Vec<DVector<f64>>, rotations: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Precondition("state needs at least one robot".into()));
        }
        let d = positions[0].len();
        if !(d == 2 || d == 3) {
            return Err(Error::UnsupportedDimension(d));
        }
        for (i, p) in positions.iter().enumerate() {
            if p.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "position {i} has length {}, expected {d}",
                    p.len()
                )));
            }
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                let sep = (&positions[i] - &positions[j]).norm();
                if sep < COINCIDENT_TOL {
                    return Err(Error::CoincidentPoints(sep));
                }
            }
        }
        if let Some(rots) = &rotations {
            if rots.len() != positions.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} rotations for {} positions",
                    rots.len(),
                    positions.len()
                )));
            }
            for r in rots {
                if r.nrows() != d || r.ncols() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "rotation is {}x{}, expected {d}x{d}",
                        r.nrows(),
                        r.ncols()
                    )));
                }
                check_rotation(r)?;
            }
        }
        Ok(Self { positions, rotations })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn position(&self, i: usize) -> &DVector<f64> {
        &self.positions[i]
    }

    pub fn positions(&self) -> &[DVector<f64>] {
        &self.positions
    }

    pub fn has_rotations(&self) -> bool {
        self.rotations.is_some()
    }

    pub fn rotation(&self, i: usize) -> Result<&DMatrix<f64>> {
        self.rotations
            .as_ref()
            .map(|r| &r[i])
            .ok_or(Error::MissingOrientations)
    }

    pub fn rotations(&self) -> Result<&[DMatrix<f64>]> {
        self.rotations
            .as_deref()
            .ok_or(Error::MissingOrientations)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.positions.len() {
            for j in (i + 1)..self.positions.len() {
                min = min.min((&self.positions[i] - &self.positions[j]).norm());
            }
        }
        min
    }

    /// Replaces pose `i` without re-running the pairwise-distance validation;
    /// integrators call this on every step and guard separation themselves.
    pub fn set_pose_unchecked(&mut self, i: usize, position: DVector<f64>, rotation: DMatrix<f64>) {
        self.positions[i] = position;
        if let Some(rots) = &mut self.rotations {
            rots[i] = rotation;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vec3(x: f64, y: f64, z: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y, z])
    }

    #[test]
    fn skew_cross_product_cases() {
        // e3 x e1 = e2
        let s = skew(&vec3(0.0, 0.0, 1.0)).unwrap();
        let out = &s * vec3(1.0, 0.0, 0.0);
        assert_relative_eq!(out, vec3(0.0, 1.0, 0.0), epsilon = 1e-15);

        // planar case: S(1) e1 = e2
        let s2 = skew(&DVector::from_vec(vec![1.0])).unwrap();
        let out2 = &s2 * DVector::from_vec(vec![1.0, 0.0]);
        assert_relative_eq!(out2, DVector::from_vec(vec![0.0, 1.0]), epsilon = 1e-15);

        // x cross x = 0
        let x = vec3(1.0, 2.0, 3.0);
        assert!((skew(&x).unwrap() * &x).norm() < 1e-15);
    }

    #[test]
    fn skew_rejects_bad_lengths() {
        assert!(skew(&DVector::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn unskew_round_trip_and_definition() {
        let x = vec3(0.0, 0.0, 1.0);
        assert_relative_eq!(unskew(&skew(&x).unwrap()).unwrap(), x, epsilon = 1e-15);

        let zero = DMatrix::zeros(3, 3);
        assert_eq!(unskew(&zero).unwrap(), vec3(0.0, 0.0, 0.0));

        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_eq!(unskew(&m).unwrap(), DVector::from_vec(vec![1.0]));

        let not_skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(unskew(&not_skew), Err(Error::NonSkewMatrix(_))));
    }

    #[test]
    fn rotation_step_quarter_turn() {
        let r = DMatrix::identity(3, 3);
        let w = vec3(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let stepped = rotation_step(&r, &w, 1.0).unwrap();
        // Closed-form exponential of a quarter turn about e3 sends e1 to e2.
        let e1 = vec3(1.0, 0.0, 0.0);
        assert_relative_eq!(&stepped * e1, vec3(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn rotation_step_zero_velocity_keeps_r() {
        let r = rotation_exp(&vec3(0.3, -0.2, 0.9)).unwrap();
        let stepped = rotation_step(&r, &vec3(0.0, 0.0, 0.0), 0.5).unwrap();
        assert_relative_eq!(stepped, r, epsilon = 1e-14);
    }

    #[test]
    fn rotation_step_many_compositions_stay_orthogonal() {
        let mut r = DMatrix::identity(3, 3);
        let w = vec3(0.02, -0.013, 0.007);
        for _ in 0..100_000 {
            r = rotation_step(&r, &w, 0.01).unwrap();
        }
        let dev = (r.transpose() * &r - DMatrix::identity(3, 3)).norm();
        assert!(dev < 1e-9, "orthogonality drift {dev}");
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bearing_basic_cases() {
        let (b, dist) = bearing_and_distance(&vec3(0.0, 0.0, 0.0), &vec3(2.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(b, vec3(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(dist, 2.0);

        let p = DVector::from_vec(vec![1.0, 1.0]);
        let q = DVector::from_vec(vec![0.0, 1.0]);
        let (b2, d2) = bearing_and_distance(&p, &q).unwrap();
        assert_relative_eq!(b2, DVector::from_vec(vec![-1.0, 0.0]), epsilon = 1e-15);
        assert_eq!(d2, 1.0);

        assert!(matches!(
            bearing_and_distance(&p, &p),
            Err(Error::CoincidentPoints(_))
        ));
    }

    #[test]
    fn projection_hand_values() {
        let p = projection(&vec3(1.0, 0.0, 0.0)).unwrap();
        let diag = DMatrix::from_diagonal(&vec3(0.0, 1.0, 1.0));
        assert_relative_eq!(p, diag, epsilon = 1e-15);

        let b = vec3(1.0, 1.0, 0.0) / 2.0_f64.sqrt();
        let p2 = projection(&b).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, -0.5, 0.0, -0.5, 0.5, 0.0, 0.0, 0.0, 1.0],
        );
        assert_relative_eq!(p2, expected, epsilon = 1e-12);
        assert!((p2 * &b).norm() < 1e-12);

        assert!(projection(&vec3(2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn so_gradient_hand_values() {
        let r = DMatrix::identity(3, 3);
        let e1 = vec3(1.0, 0.0, 0.0);
        let e2 = vec3(0.0, 1.0, 0.0);
        // x = y makes x y^T symmetric, so the skew part vanishes.
        let g = so_gradient_quadratic(&r, &e1, &e1).unwrap();
        assert!(g.norm() < 1e-15);

        let g2 = so_gradient_quadratic(&r, &e1, &e2).unwrap();
        let m = &e1 * e2.transpose() - &e2 * e1.transpose();
        assert_relative_eq!(g2, unskew(&m).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn axis_angular_matches_cross_with_e1() {
        let v = vec3(0.4, -0.7, 0.2);
        let e1 = vec3(1.0, 0.0, 0.0);
        let cross = skew(&e1).unwrap() * &v;
        assert_relative_eq!(axis_angular(&v).unwrap(), cross, epsilon = 1e-15);

        let v2 = DVector::from_vec(vec![0.3, -0.8]);
        assert_eq!(axis_angular(&v2).unwrap()[0], -0.8);
    }

    #[test]
    fn joint_state_rejects_coincident_positions() {
        let err = JointState::from_positions(vec![vec3(0.0, 0.0, 0.0), vec3(0.0, 0.0, 0.0)]);
        assert!(matches!(err, Err(Error::CoincidentPoints(_))));
    }

    #[test]
    fn pose_rejects_reflections() {
        let refl = DMatrix::from_diagonal(&vec3(1.0, 1.0, -1.0));
        assert!(Pose::new(vec3(0.0, 0.0, 0.0), refl).is_err());
    }

    proptest! {
        #[test]
        fn skew_is_linear(
            a in -5.0..5.0f64, b in -5.0..5.0f64,
            x0 in -1.0..1.0f64, x1 in -1.0..1.0f64, x2 in -1.0..1.0f64,
            z0 in -1.0..1.0f64, z1 in -1.0..1.0f64, z2 in -1.0..1.0f64,
        ) {
            let x = vec3(x0, x1, x2);
            let z = vec3(z0, z1, z2);
            let lhs = skew(&(&x * a + &z * b)).unwrap();
            let rhs = skew(&x).unwrap() * a + skew(&z).unwrap() * b;
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn projection_is_idempotent_symmetric(
            x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
        ) {
            prop_assume!(x * x + y * y + z * z > 1e-3);
            let b = vec3(x, y, z).normalize();
            let p = projection(&b).unwrap();
            prop_assert!((&p * &p - &p).norm() < 1e-12);
            prop_assert!((&p - p.transpose()).norm() < 1e-15);
            // Eigenvalues are {0, 1} with a single zero along the bearing.
            let eig = p.clone().symmetric_eigen();
            let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!(vals[0].abs() < 1e-12);
            for v in &vals[1..] {
                prop_assert!((v - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn binet_cauchy_identity(
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rv = || vec3(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (x, y, v, w) = (rv(), rv(), rv(), rv());
            let lhs = (skew(&x).unwrap() * &y).dot(&(skew(&v).unwrap() * &w));
            let rhs = x.dot(&v) * y.dot(&w) - x.dot(&w) * y.dot(&v);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
