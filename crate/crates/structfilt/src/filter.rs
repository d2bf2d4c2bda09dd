//! Greedy projection onto the feasible set of pointwise convex constraints.
//!
//! Each iteration finds the spatial point and constraint family where the
//! signed distance is most negative and projects onto that supporting
//! hyperplane, repeating until the worst violation is within tolerance.
//! At the default relaxation of 1 the projection is exact: the iteration
//! keeps the hyperplanes it has touched as an active set and re-projects
//! the original vector onto their intersection, dropping planes whose
//! multipliers turn negative. A feasible point reached by raw one-at-a-time
//! hyperplane steps is generally not the least-distance point when several
//! constraints end up active; re-projection from the input closes that gap
//! while collapsing to the identical single step in the common
//! one-active-point case. With relaxation != 1 the literal relaxed
//! hyperplane update is used instead. When the zero vector is feasible the
//! projection never grows the norm, which is what makes the operation a
//! filter inside a timestepper.
//!
//! Linear equality constraints (boundary values, mass) are handled by
//! splitting coefficient space along an orthonormal basis Q of the
//! constraint vectors and an orthonormal completion P: the fixed component
//! Q Q^T v is carried into the bound, the free component is projected in the
//! reduced coordinates, and the output is reassembled as Q Q^T v + P z*.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::constraint::{
    ConstraintError, ConstraintFamily, ProfileMin, RealizedFamily, ViolatedPin,
};

/// Iteration controls for the greedy projection.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Terminate once every family has min_x s >= -tolerance.
    pub tolerance: f64,
    /// Hard cap on hyperplane projections per call.
    pub max_iterations: usize,
    /// Step scaling in (0, 2]; 1 is the pure hyperplane projection.
    pub relaxation: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
            relaxation: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    /// Pinned gaps within this margin of the bound count as touching.
    pub(crate) fn gap_tol(&self) -> f64 {
        10.0 * self.tolerance
    }
}

/// Diagnostics of one projection call.
#[derive(Debug, Clone)]
pub struct FilterReport {
    /// Number of hyperplane projections performed.
    pub iterations: usize,
    pub converged: bool,
    /// min over families and x of the signed distance at exit.
    pub final_min_distance: f64,
    /// Seconds spent inside the projection.
    pub wall_time: f64,
    /// How often each family supplied the active hyperplane.
    pub constraint_activations: Vec<usize>,
}

impl FilterReport {
    /// Report of a call that had nothing to do.
    pub fn trivial(families: usize) -> Self {
        Self {
            iterations: 0,
            converged: true,
            final_min_distance: f64::INFINITY,
            wall_time: 0.0,
            constraint_activations: vec![0; families],
        }
    }

    /// Combine per-element reports into a whole-field report.
    pub fn merge(&mut self, other: &FilterReport) {
        self.iterations += other.iterations;
        self.converged &= other.converged;
        self.final_min_distance = self.final_min_distance.min(other.final_min_distance);
        self.wall_time += other.wall_time;
        if self.constraint_activations.len() < other.constraint_activations.len() {
            self.constraint_activations
                .resize(other.constraint_activations.len(), 0);
        }
        for (a, b) in self
            .constraint_activations
            .iter_mut()
            .zip(&other.constraint_activations)
        {
            *a += b;
        }
    }
}

#[derive(Debug, Error)]
pub enum FilterError {
    /// The iteration cap was reached; the best iterate and its report are
    /// returned alongside.
    #[error("projection did not converge within {} iterations (min s = {})",
            .report.iterations, .report.final_min_distance)]
    NotConverged {
        coeffs: Vec<f64>,
        report: FilterReport,
    },
    /// The constraints admit no feasible point (e.g. an equality pins a
    /// violating value, or progress stalled across many iterations).
    #[error("constraints are infeasible near x = {x} (gap {gap:.3e})")]
    Infeasible { x: f64, gap: f64 },
    #[error(transparent)]
    DegenerateNormal(#[from] ConstraintError),
    /// Equality constraint vectors are linearly dependent.
    #[error("equality constraint vectors are linearly dependent")]
    RankDeficient,
    /// The equality constraints use up every degree of freedom.
    #[error("{constraints} equality constraints leave no freedom in dimension {dim}")]
    TooManyEqualities { dim: usize, constraints: usize },
}

/// Orthonormal splitting of coefficient space induced by a set of linear
/// equality constraints: Q spans the constraint vectors, P is an orthonormal
/// completion of Q.
#[derive(Debug, Clone)]
pub struct EqualityConstraintSet {
    vectors: Vec<Vec<f64>>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
}

impl EqualityConstraintSet {
    /// Coefficient-space dimension n.
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Number of equality constraints K.
    pub fn constraint_count(&self) -> usize {
        self.q.ncols()
    }

    /// The original constraint vectors.
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// n x K matrix with orthonormal columns spanning the vectors.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// n x (n-K) orthonormal completion of Q.
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
}

/// Orthogonalize the constraint vectors into Q and complete them to a full
/// orthonormal basis; dependent inputs signal redundant equalities.
pub fn build_equality_set(vectors: &[Vec<f64>]) -> Result<EqualityConstraintSet, FilterError> {
    assert!(!vectors.is_empty(), "need at least one equality vector");
    let n = vectors[0].len();
    assert!(
        vectors.iter().all(|v| v.len() == n),
        "equality vectors must share one dimension"
    );
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    for v in vectors {
        let original = DVector::from_column_slice(v);
        let norm0 = original.norm();
        if norm0 == 0.0 {
            return Err(FilterError::RankDeficient);
        }
        let w = orthogonalize_against(original, &basis);
        if w.norm() <= 1e-12 * norm0 {
            return Err(FilterError::RankDeficient);
        }
        basis.push(w.normalize());
    }
    let k = basis.len();
    if k > n {
        return Err(FilterError::RankDeficient);
    }
    // complete with the best-aligned coordinate directions
    for i in 0..n {
        if basis.len() == n {
            break;
        }
        let e = DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
        let w = orthogonalize_against(e, &basis);
        if w.norm() > 1e-6 {
            basis.push(w.normalize());
        }
    }
    assert_eq!(basis.len(), n, "orthonormal completion failed");
    let mut q = DMatrix::zeros(n, k);
    let mut p = DMatrix::zeros(n, n - k);
    for (j, b) in basis.iter().enumerate() {
        if j < k {
            q.set_column(j, b);
        } else {
            p.set_column(j - k, b);
        }
    }
    Ok(EqualityConstraintSet {
        vectors: vectors.to_vec(),
        q,
        p,
    })
}

/// Two rounds of modified Gram-Schmidt against an orthonormal set.
fn orthogonalize_against(mut v: DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    for _ in 0..2 {
        for b in basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
    }
    v
}

/// One signed-distance minimization result across all families of an oracle.
pub(crate) struct OracleMin {
    pub s: f64,
    pub family: usize,
    pub x: f64,
    pub normal: Option<Vec<f64>>,
}

/// The state the greedy loop needs per iteration: the global argmin of the
/// signed distance over every (family, point) site, with its unit normal.
///
/// DG elements and reduced problems use realized families directly; the CG
/// field supplies a mesh-wide implementation over piecewise series.
pub(crate) trait DistanceOracle {
    fn family_count(&self) -> usize;
    fn global_min(&self, v: &[f64]) -> Result<OracleMin, FilterError>;
}

pub(crate) struct FamiliesOracle {
    pub realized: Vec<RealizedFamily>,
    pub gap_tol: f64,
}

impl FamiliesOracle {
    pub fn standard(families: &[ConstraintFamily], dim: usize, gap_tol: f64) -> Self {
        Self {
            realized: families
                .iter()
                .map(|f| RealizedFamily::standard(f, dim))
                .collect(),
            gap_tol,
        }
    }
}

impl DistanceOracle for FamiliesOracle {
    fn family_count(&self) -> usize {
        self.realized.len()
    }

    fn global_min(&self, v: &[f64]) -> Result<OracleMin, FilterError> {
        let mut best: Option<(usize, ProfileMin)> = None;
        for (k, fam) in self.realized.iter().enumerate() {
            let m = fam
                .minimize(v, self.gap_tol)
                .map_err(|pin: ViolatedPin| FilterError::Infeasible {
                    x: pin.x,
                    gap: pin.gap,
                })?;
            if let Some(m) = m {
                let better = match &best {
                    None => true,
                    Some((bk, bm)) => {
                        m.s < bm.s || (m.s == bm.s && (k < *bk || (k == *bk && m.x < bm.x)))
                    }
                };
                if better {
                    best = Some((k, m));
                }
            }
        }
        match best {
            Some((k, m)) => {
                let normal = self.realized[k].normal(m.x, m.kind)?;
                Ok(OracleMin {
                    s: m.s,
                    family: k,
                    x: m.x,
                    normal: Some(normal),
                })
            }
            // no family pins any hyperplane: trivially feasible
            None => Ok(OracleMin {
                s: f64::INFINITY,
                family: 0,
                x: -1.0,
                normal: None,
            }),
        }
    }
}

/// Number of consecutive non-improving iterations after which the equality
/// -reduced iteration is declared infeasible.
const STALL_LIMIT: usize = 50;

/// One touched supporting hyperplane {v : normal . v = offset}, with the
/// feasible side normal . v >= offset.
struct ActivePlane {
    normal: Vec<f64>,
    offset: f64,
}

/// The greedy iteration shared by every projection entry point.
pub(crate) fn greedy_core(
    v0: &[f64],
    oracle: &dyn DistanceOracle,
    config: &FilterConfig,
    detect_stall: bool,
) -> Result<(Vec<f64>, FilterReport), FilterError> {
    assert!(config.tolerance > 0.0);
    assert!(config.max_iterations >= 1);
    assert!(config.relaxation > 0.0 && config.relaxation <= 2.0);
    let mut exact_projection = config.relaxation == 1.0;
    let start = Instant::now();
    let mut v = v0.to_vec();
    let mut active: Vec<ActivePlane> = Vec::new();
    // planes closer in angle than sqrt(2 * merge_tol) collapse to one; the
    // threshold tightens when progress stalls so tangential contacts can be
    // bracketed ever more finely without unbounded working sets
    let mut merge_tol = 1e-6;
    let mut activations = vec![0usize; oracle.family_count()];
    let mut iterations = 0usize;
    let mut best_min = f64::NEG_INFINITY;
    let mut stalled = 0usize;
    loop {
        let m = oracle.global_min(&v)?;
        if m.s >= -config.tolerance {
            return Ok((
                v,
                FilterReport {
                    iterations,
                    converged: true,
                    final_min_distance: m.s,
                    wall_time: start.elapsed().as_secs_f64(),
                    constraint_activations: activations,
                },
            ));
        }
        if iterations >= config.max_iterations {
            let report = FilterReport {
                iterations,
                converged: false,
                final_min_distance: m.s,
                wall_time: start.elapsed().as_secs_f64(),
                constraint_activations: activations,
            };
            return Err(FilterError::NotConverged { coeffs: v, report });
        }
        if m.s > best_min + config.tolerance {
            best_min = m.s;
            stalled = 0;
        } else {
            stalled += 1;
            if exact_projection && stalled >= POLISH_LIMIT {
                stalled = 0;
                if merge_tol > 2e-15 {
                    merge_tol *= 1e-3;
                } else {
                    // bracket resolution is exhausted; close the last bit of
                    // feasibility with raw hyperplane steps, which move the
                    // iterate by at most about the residual violation
                    exact_projection = false;
                }
            } else if detect_stall && stalled >= STALL_LIMIT {
                return Err(FilterError::Infeasible { x: m.x, gap: m.s });
            }
        }
        let h = m.normal.expect("violating site carries a normal");
        if exact_projection {
            // s is affine with unit gradient h, so the plane's offset is
            // h . v - s at the current iterate
            let offset = dot(&h, &v) - m.s;
            upsert_plane(&mut active, ActivePlane { normal: h, offset }, merge_tol);
            v = reproject_active(v0, &mut active);
        } else {
            let step = config.relaxation * (-m.s);
            for (vi, hi) in v.iter_mut().zip(&h) {
                *vi += step * hi;
            }
        }
        activations[m.family] += 1;
        iterations += 1;
    }
}

/// Non-improving exact-exchange iterations tolerated before tightening the
/// plane-merge threshold (and ultimately falling back to polish steps).
const POLISH_LIMIT: usize = 30;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Insert the plane, replacing an existing one whose normal is nearly
/// parallel: as the iteration converges the most-violated point drifts by
/// tiny amounts, and refreshing the stale copy keeps the working set at one
/// plane per geometric contact point instead of growing without bound.
fn upsert_plane(active: &mut Vec<ActivePlane>, plane: ActivePlane, merge_tol: f64) {
    for existing in active.iter_mut() {
        if dot(&existing.normal, &plane.normal) > 1.0 - merge_tol {
            *existing = plane;
            return;
        }
    }
    active.push(plane);
}

/// Least-distance point from v0 subject to normal_i . v >= offset_i over the
/// working set, via Lawson-Hanson nonnegative least squares on the dual
/// multipliers: v = v0 + sum mu_i h_i with mu >= 0 maximizing
/// mu^T q - mu^T G mu / 2, q_i = offset_i - h_i . v0. At the optimum the
/// dual gradient q - G mu equals b - H^T v, so no working-set plane remains
/// violated and the outer exchange can only add genuinely new contacts.
fn reproject_active(v0: &[f64], active: &mut [ActivePlane]) -> Vec<f64> {
    let k = active.len();
    let mut gram = DMatrix::zeros(k, k);
    let mut q = DVector::zeros(k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = dot(&active[i].normal, &active[j].normal);
        }
        q[i] = active[i].offset - dot(&active[i].normal, v0);
    }
    let scale = q.amax().max(1.0);
    let mut mu = DVector::zeros(k);
    let mut passive = vec![false; k];
    for _outer in 0..(16 * (k + 1)) {
        // most negative dual gradient among zero multipliers
        let grad = &q - &gram * &mu;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..k {
            if !passive[i] && grad[i] > 1e-12 * scale {
                if best.map_or(true, |(_, g)| grad[i] > g) {
                    best = Some((i, grad[i]));
                }
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;
        // inner loop: equality solve on the passive set with line-search
        // clipping that moves blocking multipliers back to zero
        for _inner in 0..(4 * (k + 1)) {
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let m = idx.len();
            let mut g_p = DMatrix::zeros(m, m);
            let mut q_p = DVector::zeros(m);
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    g_p[(a, b)] = gram[(i, j)];
                }
                q_p[a] = q[i];
            }
            let z = g_p
                .svd(true, true)
                .solve(&q_p, 1e-13)
                .expect("gram solve");
            if z.iter().all(|&zi| zi > 0.0) {
                for (a, &i) in idx.iter().enumerate() {
                    mu[i] = z[a];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (a, &i) in idx.iter().enumerate() {
                if z[a] <= 0.0 {
                    let denom = mu[i] - z[a];
                    if denom > 0.0 {
                        alpha = alpha.min(mu[i] / denom);
                    }
                }
            }
            for (a, &i) in idx.iter().enumerate() {
                mu[i] += alpha * (z[a] - mu[i]);
                if mu[i] <= 1e-14 * scale {
                    mu[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    let mut v = v0.to_vec();
    for (plane, &m) in active.iter().zip(mu.iter()) {
        for (vi, hi) in v.iter_mut().zip(&plane.normal) {
            *vi += m * hi;
        }
    }
    v
}

/// Project a coefficient vector onto the feasible set of the families.
///
/// The input must be in orthonormal coordinates. Feasible inputs are
/// returned unchanged with zero iterations.
pub fn greedy_project(
    coeffs: &[f64],
    families: &[ConstraintFamily],
    config: &FilterConfig,
) -> Result<(Vec<f64>, FilterReport), FilterError> {
    assert!(!families.is_empty(), "need at least one constraint family");
    let oracle = FamiliesOracle::standard(families, coeffs.len(), config.gap_tol());
    greedy_core(coeffs, &oracle, config, false)
}

/// Project onto the families while preserving the equality functionals
/// <q_k, v> of the input exactly.
///
/// The problem is reduced to the orthonormal completion coordinates
/// z = P^T v with the fixed component shifted into the bounds, solved by the
/// same greedy iteration, and reassembled as Q Q^T v + P z*. Equalities that
/// pin values violating an inequality make the problem infeasible.
pub fn project_with_equalities(
    coeffs: &[f64],
    families: &[ConstraintFamily],
    eq: &EqualityConstraintSet,
    config: &FilterConfig,
) -> Result<(Vec<f64>, FilterReport), FilterError> {
    assert!(!families.is_empty(), "need at least one constraint family");
    let n = coeffs.len();
    let full: Vec<RealizedFamily> = families
        .iter()
        .map(|f| RealizedFamily::standard(f, n))
        .collect();
    let protos = reduce_families(&full, eq)?;
    project_reduced(coeffs, &full, &protos, eq, config)
}

/// Precompute the equality-reduced realizations of families; everything but
/// the bound shift is independent of the projected vector.
pub(crate) fn reduce_families(
    full: &[RealizedFamily],
    eq: &EqualityConstraintSet,
) -> Result<Vec<RealizedFamily>, FilterError> {
    let n = eq.dim();
    let k = eq.constraint_count();
    if n <= k {
        return Err(FilterError::TooManyEqualities {
            dim: n,
            constraints: k,
        });
    }
    let zeros = vec![0.0; n];
    Ok(full.iter().map(|f| f.reduce(eq.p(), &zeros)).collect())
}

/// Equality-constrained projection with reductions precomputed by
/// [`reduce_families`]; only the bound shift depends on the input.
pub(crate) fn project_reduced(
    coeffs: &[f64],
    full: &[RealizedFamily],
    protos: &[RealizedFamily],
    eq: &EqualityConstraintSet,
    config: &FilterConfig,
) -> Result<(Vec<f64>, FilterReport), FilterError> {
    assert_eq!(eq.dim(), coeffs.len(), "equality set dimension mismatch");
    let v = DVector::from_column_slice(coeffs);
    let fixed = eq.q() * (eq.q().transpose() * &v);
    let z0 = eq.p().transpose() * &v;
    let fixed_slice: Vec<f64> = fixed.iter().copied().collect();
    let realized: Vec<RealizedFamily> = protos
        .iter()
        .zip(full)
        .map(|(proto, base)| proto.with_bound_shift(base, &fixed_slice))
        .collect();
    let oracle = FamiliesOracle {
        realized,
        gap_tol: config.gap_tol(),
    };
    let lift = |z: &[f64]| -> Vec<f64> {
        let out = &fixed + eq.p() * DVector::from_column_slice(z);
        out.iter().copied().collect()
    };
    match greedy_core(z0.as_slice(), &oracle, config, true) {
        Ok((z, report)) => Ok((lift(&z), report)),
        Err(FilterError::NotConverged { coeffs, report }) => Err(FilterError::NotConverged {
            coeffs: lift(&coeffs),
            report,
        }),
        Err(e) => Err(e),
    }
}
