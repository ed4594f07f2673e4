//! Rigidity matrices, trivial-motion bases, rigidity and degeneracy tests,
//! the rigidity eigenvalue, the bearing/angle equivalence checker, and the
//! paired-cross-product solver used in its proof.
//!
//! A framework in R^d with N vertices is infinitesimally angle rigid (IAR)
//! when the angle rigidity matrix has rank `d N - (d + d' + 1)`, and its
//! SE(d) counterpart is infinitesimally bearing rigid (IBR) when the bearing
//! rigidity matrix has rank `(d + d') N - (d + d' + 1)`. The rigidity
//! eigenvalue is the `(d + d' + 2)`-th smallest eigenvalue of `A^T A`:
//! index 5 in the plane, index 8 in space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bearing_and_distance, projection, skew, JointState};
use crate::graph::{angle_set, AngleSet, DirectedGraph};

/// Default multiplier for the scale-aware numerical-rank threshold
/// `tol * sigma_max * max(rows, cols)`.
pub const RANK_TOL: f64 = 1e-10;

/// Residual below which the stacked cross-product system counts as solved.
pub const LEMMA1_RESIDUAL_TOL: f64 = 1e-9;

/// A directed graph paired with a joint configuration. Orientations are
/// optional; bearing-side operations reject their absence.
#[derive(Debug, Clone)]
pub struct Framework {
    pub graph: DirectedGraph,
    pub state: JointState,
}

impl Framework {
    pub fn new(graph: DirectedGraph, state: JointState) -> Result<Self> {
        if graph.n_vertices() != state.len() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} vertices but state has {} poses",
                graph.n_vertices(),
                state.len()
            )));
        }
        Ok(Self { graph, state })
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    pub fn angle_set(&self) -> AngleSet {
        angle_set(&self.graph)
    }
}

/// Stacked body-frame bearings, one unit d-vector per edge in edge order.
pub fn bearing_function(fw: &Framework) -> Result<DVector<f64>> {
    let d = fw.dim();
    let rotations = fw.state.rotations()?;
    let mut out = DVector::zeros(d * fw.graph.n_edges());
    for (row, &(i, j)) in fw.graph.edges().iter().enumerate() {
        let (beta, _) = bearing_and_distance(fw.state.position(i), fw.state.position(j))?;
        let body = rotations[i].transpose() * beta;
        out.rows_mut(row * d, d).copy_from(&body);
    }
    Ok(out)
}

/// Stacked angle cosines, one per triple in angle-set order. Frame-free, so
/// only positions are needed.
pub fn angle_function(positions: &[DVector<f64>], angles: &AngleSet) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(angles.len());
    for (row, &(i, j, k)) in angles.triples().iter().enumerate() {
        let (bij, _) = bearing_and_distance(&positions[i], &positions[j])?;
        let (bik, _) = bearing_and_distance(&positions[i], &positions[k])?;
        out[row] = bij.dot(&bik);
    }
    Ok(out)
}

/// Bearing rigidity matrix: the differential of the bearing function, mapping
/// stacked `[v; w]` (linear velocities first, then body angular velocities)
/// to bearing velocities. One d-row block per edge.
pub fn bearing_rigidity_matrix(fw: &Framework) -> Result<DMatrix<f64>> {
    let d = fw.dim();
    let dp = crate::geometry::spin_dim(d);
    let n = fw.state.len();
    let rotations = fw.state.rotations()?;
    let mut b = DMatrix::zeros(d * fw.graph.n_edges(), (d + dp) * n);
    for (row, &(i, j)) in fw.graph.edges().iter().enumerate() {
        let (beta, dist) = bearing_and_distance(fw.state.position(i), fw.state.position(j))?;
        let rit = rotations[i].transpose();
        let block = &rit * projection(&beta)? / dist;
        // velocity columns of i and j
        let r0 = row * d;
        b.view_mut((r0, j * d), (d, d)).copy_from(&block);
        b.view_mut((r0, i * d), (d, d)).copy_from(&(-&block));
        // angular-velocity column(s) of i: the derivative of -S(w) beta in w
        if d == 3 {
            let ang = &rit * skew(&beta)?;
            b.view_mut((r0, d * n + i * dp), (d, dp)).copy_from(&ang);
        } else {
            let ang = &rit * DVector::from_vec(vec![beta[1], -beta[0]]);
            b.view_mut((r0, d * n + i), (d, 1)).copy_from(&ang);
        }
    }
    Ok(b)
}

/// Angle rigidity matrix: the differential of the angle function with respect
/// to stacked positions. One row per triple.
pub fn angle_rigidity_matrix(
    positions: &[DVector<f64>],
    angles: &AngleSet,
) -> Result<DMatrix<f64>> {
    let d = positions[0].len();
    let n = positions.len();
    let mut a = DMatrix::zeros(angles.len(), d * n);
    for (row, &(i, j, k)) in angles.triples().iter().enumerate() {
        let (coeff_j, coeff_k) = angle_row_blocks(positions, i, j, k)?;
        let coeff_i = -(&coeff_j + &coeff_k);
        a.view_mut((row, j * d), (1, d)).copy_from(&coeff_j.transpose());
        a.view_mut((row, k * d), (1, d)).copy_from(&coeff_k.transpose());
        a.view_mut((row, i * d), (1, d)).copy_from(&coeff_i.transpose());
    }
    Ok(a)
}

/// Per-neighbor gradient blocks of one angle row: `(P_ij b_ik / d_ij,
/// P_ik b_ij / d_ik)`, the gradients of `alpha_ijk` in `p_j` and `p_k`.
fn angle_row_blocks(
    positions: &[DVector<f64>],
    i: usize,
    j: usize,
    k: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (bij, dij) = bearing_and_distance(&positions[i], &positions[j])?;
    let (bik, dik) = bearing_and_distance(&positions[i], &positions[k])?;
    let gj = projection(&bij)? * &bik / dij;
    let gk = projection(&bik)? * &bij / dik;
    Ok((gj, gk))
}

/// Basis of the similarity motions of a configuration: d translations,
/// d' rotations, one scaling, as columns of a `dN x (d + d' + 1)` matrix.
pub fn trivial_basis_angle(positions: &[DVector<f64>]) -> DMatrix<f64> {
    let d = positions[0].len();
    let dp = crate::geometry::spin_dim(d);
    let n = positions.len();
    let mut basis = DMatrix::zeros(d * n, d + dp + 1);
    for (v, p) in positions.iter().enumerate() {
        for l in 0..d {
            basis[(v * d + l, l)] = 1.0;
        }
        for l in 0..dp {
            let mut e = DVector::zeros(dp);
            e[l] = 1.0;
            let col = skew(&e).expect("unit spin vector") * p;
            basis.view_mut((v * d, d + l), (d, 1)).copy_from(&col);
        }
        basis.view_mut((v * d, d + dp), (d, 1)).copy_from(p);
    }
    basis
}

/// Basis of the similarity motions on SE(d): the same velocity fields as
/// [`trivial_basis_angle`] with the common angular rate filled in on the
/// rotation columns and zero elsewhere.
pub fn trivial_basis_bearing(positions: &[DVector<f64>]) -> DMatrix<f64> {
    let d = positions[0].len();
    let dp = crate::geometry::spin_dim(d);
    let n = positions.len();
    let velocity = trivial_basis_angle(positions);
    let mut basis = DMatrix::zeros((d + dp) * n, d + dp + 1);
    basis.view_mut((0, 0), (d * n, d + dp + 1)).copy_from(&velocity);
    for v in 0..n {
        for l in 0..dp {
            basis[(d * n + v * dp + l, d + l)] = 1.0;
        }
    }
    basis
}

/// Numerical rank with the scale-aware threshold
/// `tol * sigma_max * max(rows, cols)`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    assert!(
        m.iter().all(|v| v.is_finite()),
        "rank of a matrix with non-finite entries"
    );
    let sv = m.clone().singular_values();
    let sigma_max = sv.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    let threshold = tol * sigma_max * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > threshold).count()
}

/// Infinitesimal angle rigidity: rank test against `dN - (d + d' + 1)`.
pub fn is_inf_angle_rigid(
    positions: &[DVector<f64>],
    angles: &AngleSet,
    tol: f64,
) -> Result<(bool, usize)> {
    let d = positions[0].len();
    let dp = crate::geometry::spin_dim(d);
    let a = angle_rigidity_matrix(positions, angles)?;
    let rank = numerical_rank(&a, tol);
    Ok((rank == d * positions.len() - (d + dp + 1), rank))
}

/// Infinitesimal bearing rigidity: rank test against
/// `(d + d')N - (d + d' + 1)`. Needs orientations.
pub fn is_inf_bearing_rigid(fw: &Framework, tol: f64) -> Result<(bool, usize)> {
    let d = fw.dim();
    let dp = crate::geometry::spin_dim(d);
    let b = bearing_rigidity_matrix(fw)?;
    let rank = numerical_rank(&b, tol);
    Ok((rank == (d + dp) * fw.state.len() - (d + dp + 1), rank))
}

/// Zero-based index of the rigidity eigenvalue in the ascending spectrum:
/// `d + d' + 1`, i.e. the 5th value in the plane and the 8th in space.
pub fn rigidity_eigenvalue_index(d: usize) -> usize {
    d + crate::geometry::spin_dim(d) + 1
}

/// Ascending eigenvalues of `M^T M` computed from the singular values of `M`,
/// padded with the implicit zeros when `M` has fewer rows than columns. Using
/// the factor instead of the Gram matrix keeps small eigenvalues accurate and
/// keeps the eigenvalue test consistent with the rank test, which counts the
/// very same singular values.
fn gram_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let cols = m.ncols();
    let mut vals: Vec<f64> = if m.nrows() == 0 {
        Vec::new()
    } else {
        m.clone().singular_values().iter().map(|s| s * s).collect()
    };
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    while vals.len() < cols {
        vals.insert(0, 0.0);
    }
    vals
}

/// The angle rigidity eigenvalue: `(d + d' + 2)`-th smallest eigenvalue of
/// `A^T A`. Strictly positive exactly when the framework is IAR.
pub fn rigidity_eigenvalue(positions: &[DVector<f64>], angles: &AngleSet) -> Result<f64> {
    let d = positions[0].len();
    let idx = rigidity_eigenvalue_index(d);
    if d * positions.len() <= idx {
        return Err(Error::Precondition(format!(
            "rigidity eigenvalue needs d*N > {idx}; got {} coordinates",
            d * positions.len()
        )));
    }
    let a = angle_rigidity_matrix(positions, angles)?;
    Ok(gram_eigenvalues(&a)[idx])
}

/// Dimension of the span of each vertex's out-bearings.
pub fn bearing_span_dims(positions: &[DVector<f64>], graph: &DirectedGraph) -> Result<Vec<usize>> {
    let d = positions[0].len();
    let mut dims = Vec::with_capacity(graph.n_vertices());
    for i in 0..graph.n_vertices() {
        let nbrs = graph.out_neighbors(i);
        if nbrs.is_empty() {
            dims.push(0);
            continue;
        }
        let mut stacked = DMatrix::zeros(nbrs.len(), d);
        for (r, &j) in nbrs.iter().enumerate() {
            let (beta, _) = bearing_and_distance(&positions[i], &positions[j])?;
            stacked.view_mut((r, 0), (1, d)).copy_from(&beta.transpose());
        }
        dims.push(numerical_rank(&stacked, RANK_TOL));
    }
    Ok(dims)
}

/// Degeneracy test: some vertex has at least d out-bearings, yet they span a
/// proper subspace. Returns the verdict together with all span dimensions.
pub fn is_degenerate(
    positions: &[DVector<f64>],
    graph: &DirectedGraph,
) -> Result<(bool, Vec<usize>)> {
    let d = positions[0].len();
    let dims = bearing_span_dims(positions, graph)?;
    let degenerate = (0..graph.n_vertices())
        .any(|i| graph.out_degree(i) >= d && dims[i] <= d - 1);
    Ok((degenerate, dims))
}

/// Outcome of one bearing/angle equivalence check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Theorem1Verdict {
    pub ibr: bool,
    pub iar: bool,
    /// True when every vertex's out-bearings span at least d - 1 dimensions.
    pub min_span_ok: bool,
    /// `ibr == (iar && min_span_ok)`, which must hold on every
    /// non-degenerate framework.
    pub consistent: bool,
}

/// Checks `IBR <=> (IAR and min-span)` on one framework, with the two sides
/// computed from independent rank tests on the bearing and angle matrices.
/// Degenerate frameworks are rejected, since the equivalence excludes them.
pub fn check_theorem1(fw: &Framework, tol: f64) -> Result<Theorem1Verdict> {
    let d = fw.dim();
    let (degenerate, dims) = is_degenerate(fw.state.positions(), &fw.graph)?;
    if degenerate {
        let vertex = (0..fw.graph.n_vertices())
            .find(|&i| fw.graph.out_degree(i) >= d && dims[i] <= d - 1)
            .unwrap();
        return Err(Error::DegenerateFramework {
            vertex,
            out_degree: fw.graph.out_degree(vertex),
            span_dim: dims[vertex],
        });
    }
    let angles = fw.angle_set();
    let (iar, _) = is_inf_angle_rigid(fw.state.positions(), &angles, tol)?;
    let (ibr, _) = is_inf_bearing_rigid(fw, tol)?;
    let min_span_ok = dims.iter().all(|&s| s + 1 >= d);
    Ok(Theorem1Verdict {
        ibr,
        iar,
        min_span_ok,
        consistent: ibr == (iar && min_span_ok),
    })
}

/// Solves `S(z1) x = y1, S(z2) x = y2` for `x` when consistent.
///
/// Preconditions (each reported distinctly): `z1`, `z2` unit length,
/// not (anti-)parallel, and `y_l` orthogonal to `z_l`. The stacked 6x3
/// system is solved in the minimum-norm least-squares sense and accepted
/// when both residuals come out below [`LEMMA1_RESIDUAL_TOL`]; by the
/// solvability characterization this happens exactly when
/// `(S(z1) y1 - S(z2) y2)^T S(z1) z2 = 0`.
pub fn lemma1_solve(
    z1: &DVector<f64>,
    z2: &DVector<f64>,
    y1: &DVector<f64>,
    y2: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    for (name, v) in [("z1", z1), ("z2", z2), ("y1", y1), ("y2", y2)] {
        if v.len() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "{name} must be a 3-vector, got length {}",
                v.len()
            )));
        }
    }
    for (name, z) in [("z1", z1), ("z2", z2)] {
        if (z.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "{name} must be unit length (norm {})",
                z.norm()
            )));
        }
    }
    let cross = skew(z1)? * z2;
    if cross.norm() <= 1e-9 {
        return Err(Error::Precondition(
            "z1 and z2 must not be parallel or anti-parallel".into(),
        ));
    }
    for (name, z, y) in [("y1", z1, y1), ("y2", z2, y2)] {
        if z.dot(y).abs() > 1e-9 * y.norm().max(1.0) {
            return Err(Error::Precondition(format!(
                "{name} must be orthogonal to its z (inner product {})",
                z.dot(y)
            )));
        }
    }

    let s1 = skew(z1)?;
    let s2 = skew(z2)?;
    let mut m = DMatrix::zeros(6, 3);
    m.view_mut((0, 0), (3, 3)).copy_from(&s1);
    m.view_mut((3, 0), (3, 3)).copy_from(&s2);
    let mut rhs = DVector::zeros(6);
    rhs.rows_mut(0, 3).copy_from(y1);
    rhs.rows_mut(3, 3).copy_from(y2);

    let svd = m.clone().svd(true, true);
    let x = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Precondition(format!("least-squares solve failed: {e}")))?;
    let r1 = (&s1 * &x - y1).norm();
    let r2 = (&s2 * &x - y2).norm();
    if r1 < LEMMA1_RESIDUAL_TOL && r2 < LEMMA1_RESIDUAL_TOL {
        Ok(Some(x))
    } else {
        Ok(None)
    }
}

/// One-shot rigidity analysis of a framework.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityReport {
    pub dimension: usize,
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_angles: usize,
    pub rank_angle: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_bearing: Option<usize>,
    /// The rigidity eigenvalue; zero when too few coordinates exist for the
    /// index to be defined (then the rank verdict alone decides).
    pub eigenvalue: f64,
    pub is_iar: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_ibr: Option<bool>,
    pub is_degenerate: bool,
    pub per_vertex_bearing_span_dim: Vec<usize>,
}

/// Runs every rigidity test that the framework's data admits: the bearing
/// side only when orientations are present.
pub fn analyze(fw: &Framework, tol: f64) -> Result<RigidityReport> {
    let d = fw.dim();
    let angles = fw.angle_set();
    let positions = fw.state.positions();
    let (is_iar, rank_angle) = is_inf_angle_rigid(positions, &angles, tol)?;
    let (bearing, rank_bearing) = if fw.state.has_rotations() {
        let (ibr, rank) = is_inf_bearing_rigid(fw, tol)?;
        (Some(ibr), Some(rank))
    } else {
        (None, None)
    };
    let eigenvalue = if d * positions.len() > rigidity_eigenvalue_index(d) {
        rigidity_eigenvalue(positions, &angles)?
    } else {
        0.0
    };
    let (degenerate, dims) = is_degenerate(positions, &fw.graph)?;
    Ok(RigidityReport {
        dimension: d,
        n_vertices: fw.state.len(),
        n_edges: fw.graph.n_edges(),
        n_angles: angles.len(),
        rank_angle,
        rank_bearing,
        eigenvalue,
        is_iar,
        is_ibr: bearing,
        is_degenerate: degenerate,
        per_vertex_bearing_span_dim: dims,
    })
}
