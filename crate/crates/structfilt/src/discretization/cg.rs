//! Continuous Galerkin fields on nodal hat + internal bubble bases.
//!
//! CG degrees of freedom couple across elements through the mass matrix, so
//! the projection filter runs globally: coefficients are mapped to
//! orthonormal coordinates w = R v through the Cholesky factor M = R^T R,
//! the signed distance is minimized element by element (it is piecewise
//! smooth), and hyperplane updates act on w. Filtering in the continuous
//! basis's coordinates keeps the output continuous by construction.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FieldError, Mesh1D};
use crate::constraint::{
    minimize_profile, ConstraintFamily, Operator, ProfileMin, SampleKind, Sense,
};
use crate::filter::{
    greedy_core, DistanceOracle, FilterConfig, FilterError, FilterReport, OracleMin,
};
use crate::orthopoly::{linear_combination, LegendreSeries, QuadratureRule};

/// Shared, immutable discretization data for one (mesh, degree) pair:
/// local shape functions, global mass and stiffness matrices, and the
/// Cholesky factor used for orthonormalization.
#[derive(Debug)]
pub struct CgBasis {
    mesh: Mesh1D,
    degree: usize,
    n_global: usize,
    /// Local shapes on the reference interval: hat at -1, hat at +1, then
    /// integrated-Legendre bubbles of degree 2..=degree.
    shape: Vec<LegendreSeries>,
    shape_deriv: Vec<LegendreSeries>,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    /// Lower Cholesky factor L with M = L L^T; R = L^T maps to orthonormal
    /// coordinates.
    chol_l: DMatrix<f64>,
    /// Integrals of the global basis functions.
    phi_integrals: Vec<f64>,
}

impl CgBasis {
    pub fn new(mesh: Mesh1D, degree: usize) -> Result<Arc<Self>, FieldError> {
        assert!(degree >= 1);
        let elements = mesh.element_count();
        let n_global = elements * degree + 1;
        let shape = local_shapes(degree);
        let shape_deriv: Vec<LegendreSeries> = shape.iter().map(|s| s.derivative()).collect();

        // local Gram matrices are exact coefficient dot products
        let local = degree + 1;
        let mut local_mass = DMatrix::zeros(local, local);
        let mut local_stiff = DMatrix::zeros(local, local);
        for i in 0..local {
            for j in 0..local {
                local_mass[(i, j)] = series_dot(&shape[i], &shape[j]);
                local_stiff[(i, j)] = series_dot(&shape_deriv[i], &shape_deriv[j]);
            }
        }

        let mut mass = DMatrix::zeros(n_global, n_global);
        let mut stiffness = DMatrix::zeros(n_global, n_global);
        let mut phi_integrals = vec![0.0; n_global];
        for e in 0..elements {
            let h = mesh.element_width(e);
            for m in 0..local {
                let gm = global_dof(elements, degree, e, m);
                phi_integrals[gm] += 0.5 * h * shape[m].integrate();
                for mm in 0..local {
                    let gmm = global_dof(elements, degree, e, mm);
                    mass[(gm, gmm)] += 0.5 * h * local_mass[(m, mm)];
                    stiffness[(gm, gmm)] += (2.0 / h) * local_stiff[(m, mm)];
                }
            }
        }

        let chol = mass.clone().cholesky().ok_or(FieldError::NotSpd)?;
        Ok(Arc::new(Self {
            mesh,
            degree,
            n_global,
            shape,
            shape_deriv,
            mass,
            stiffness,
            chol_l: chol.l(),
            phi_integrals,
        }))
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_global(&self) -> usize {
        self.n_global
    }

    pub fn mass_matrix(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness_matrix(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    /// Upper-triangular R with M = R^T R.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol_l.transpose()
    }

    pub fn global_dof(&self, element: usize, local: usize) -> usize {
        global_dof(self.mesh.element_count(), self.degree, element, local)
    }

    /// w = R v.
    pub fn to_orthonormal(&self, v: &[f64]) -> Vec<f64> {
        let w = self.chol_l.transpose() * DVector::from_column_slice(v);
        w.iter().copied().collect()
    }

    /// v = R^{-1} w by a triangular solve.
    pub fn from_orthonormal(&self, w: &[f64]) -> Vec<f64> {
        let v = self
            .chol_l
            .transpose()
            .solve_upper_triangular(&DVector::from_column_slice(w))
            .expect("Cholesky factor is nonsingular");
        v.iter().copied().collect()
    }

    /// Boundary DOF indices (the endpoint hats).
    pub fn boundary_dofs(&self) -> (usize, usize) {
        (0, self.mesh.element_count())
    }

    /// Local reference shape m (hats first, then bubbles).
    pub(crate) fn shape(&self, m: usize) -> &LegendreSeries {
        &self.shape[m]
    }

    fn local_count(&self) -> usize {
        self.degree + 1
    }
}

/// DOF layout: hats at the E+1 vertices first, then (degree-1) bubbles per
/// element, element-major.
fn global_dof(elements: usize, degree: usize, e: usize, local: usize) -> usize {
    match local {
        0 => e,
        1 => e + 1,
        m => (elements + 1) + e * (degree - 1) + (m - 2),
    }
}

/// Hat endpoints and normalized integrated-Legendre bubbles
/// (P_k - P_{k-2}) / sqrt(2(2k-1)), which vanish at both endpoints.
fn local_shapes(degree: usize) -> Vec<LegendreSeries> {
    let mut shapes = Vec::with_capacity(degree + 1);
    shapes.push(LegendreSeries::linear(0.5, -0.5));
    shapes.push(LegendreSeries::linear(0.5, 0.5));
    for k in 2..=degree {
        let norm = (2.0 * (2.0 * k as f64 - 1.0)).sqrt();
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0 / ((k as f64 + 0.5).sqrt() * norm);
        coeffs[k - 2] = -1.0 / ((k as f64 - 2.0 + 0.5).sqrt() * norm);
        shapes.push(LegendreSeries::new(coeffs));
    }
    shapes
}

/// L2([-1,1]) inner product of two series (orthonormal coefficients).
fn series_dot(a: &LegendreSeries, b: &LegendreSeries) -> f64 {
    a.coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(x, y)| x * y)
        .sum()
}

/// A continuous piecewise-polynomial field in hat/bubble coordinates.
#[derive(Debug, Clone)]
pub struct CGField {
    basis: Arc<CgBasis>,
    coeffs: Vec<f64>,
}

impl CGField {
    pub fn zeros(basis: Arc<CgBasis>) -> Self {
        let len = basis.n_global();
        Self {
            basis,
            coeffs: vec![0.0; len],
        }
    }

    pub fn from_coeffs(basis: Arc<CgBasis>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), basis.n_global());
        Self { basis, coeffs }
    }

    /// Global L2 projection: solve M v = load.
    pub fn project_function(basis: Arc<CgBasis>, f: impl Fn(f64) -> f64) -> Self {
        let rule = QuadratureRule::gauss_legendre(basis.degree() + 3);
        let load = assemble_load(&basis, &rule, |x| f(x));
        let v = basis
            .chol_l
            .clone()
            .cholesky_unchecked_solve(&load)
            .expect("mass matrix factored");
        Self {
            basis,
            coeffs: v.iter().copied().collect(),
        }
    }

    pub fn basis(&self) -> &Arc<CgBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// The restriction to element e as a reference-interval series (physical
    /// values, no extra scale).
    pub fn element_series(&self, e: usize) -> LegendreSeries {
        let local = self.basis.local_count();
        let weights: Vec<f64> = (0..local)
            .map(|m| self.coeffs[self.basis.global_dof(e, m)])
            .collect();
        linear_combination(&self.basis.shape, &weights)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let e = self.basis.mesh().locate(x);
        let xi = self.basis.mesh().to_reference(e, x);
        self.element_series(e).eval(xi)
    }

    pub fn total_mass(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.basis.phi_integrals)
            .map(|(c, q)| c * q)
            .sum()
    }

    /// w = R v for this field's coefficients.
    pub fn to_orthonormal(&self) -> Vec<f64> {
        self.basis.to_orthonormal(&self.coeffs)
    }

    pub fn from_orthonormal(basis: Arc<CgBasis>, w: &[f64]) -> Self {
        let coeffs = basis.from_orthonormal(w);
        Self { basis, coeffs }
    }

    /// L2 norm via the mass matrix.
    pub fn l2_norm(&self) -> f64 {
        let v = DVector::from_column_slice(&self.coeffs);
        (v.dot(&(&self.basis.mass * &v))).max(0.0).sqrt()
    }

    /// Minimum over per-element grids plus exact interior extrema.
    pub fn min_value(&self, per_element: usize) -> f64 {
        let mut min = f64::INFINITY;
        for e in 0..self.basis.mesh().element_count() {
            let s = self.element_series(e);
            min = min.min(s.eval(-1.0)).min(s.eval(1.0));
            for i in 1..per_element {
                let xi = -1.0 + 2.0 * i as f64 / per_element as f64;
                min = min.min(s.eval(xi));
            }
            for xi in s.derivative().root_candidates() {
                min = min.min(s.eval(xi));
            }
        }
        min
    }
}

/// Load vector <f, phi_i> assembled with the given reference rule.
pub(crate) fn assemble_load(
    basis: &CgBasis,
    rule: &QuadratureRule,
    f: impl Fn(f64) -> f64,
) -> DVector<f64> {
    let mesh = basis.mesh();
    let local = basis.local_count();
    let mut load = DVector::zeros(basis.n_global());
    // tabulate shapes once per rule
    let shape_vals: Vec<Vec<f64>> = rule
        .nodes()
        .iter()
        .map(|&xi| basis.shape.iter().map(|s| s.eval(xi)).collect())
        .collect();
    for e in 0..mesh.element_count() {
        let (l, r) = mesh.element_interval(e);
        let h = r - l;
        for (i, (&xi, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
            let fx = f(0.5 * (l + r) + 0.5 * h * xi);
            for m in 0..local {
                load[basis.global_dof(e, m)] += 0.5 * h * w * fx * shape_vals[i][m];
            }
        }
    }
    load
}

trait CholeskySolve {
    fn cholesky_unchecked_solve(self, b: &DVector<f64>) -> Option<DVector<f64>>;
}

impl CholeskySolve for DMatrix<f64> {
    /// Solve L L^T x = b given the lower factor L.
    fn cholesky_unchecked_solve(self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let y = self.solve_lower_triangular(b)?;
        self.transpose().solve_upper_triangular(&y)
    }
}

/// Options for the global CG projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CgFilterOptions {
    /// Preserve the integral of the field over the whole domain.
    pub preserve_total_mass: bool,
}

/// Per-element data realized in global orthonormal coordinates for one
/// family: bound, operator-applied local shapes, and the series form of
/// q(xi) = sum_j (L_xi psi_j)^2 built from the local Gram of M^{-1}.
struct CgElementFamily {
    sign: f64,
    bound: LegendreSeries,
    bound_deriv: LegendreSeries,
    op_shape: Vec<LegendreSeries>,
    op_shape_deriv: Vec<LegendreSeries>,
    gram: DMatrix<f64>,
    q: LegendreSeries,
    q_deriv: LegendreSeries,
    q_tol: f64,
    rule: QuadratureRule,
    /// Mass-deflation coefficients c = T_e^T q_w restricted to this element,
    /// as a series over the operator-applied shapes.
    deflate: Option<(LegendreSeries, LegendreSeries)>,
}

struct CgElementContext {
    /// T_e = R^{-T} S_e: orthonormal-coordinate expansion of local shapes.
    t_mat: DMatrix<f64>,
    families: Vec<CgElementFamily>,
}

/// Precomputed global filter for a CG basis. Construction performs the dense
/// triangular solves once; apply() reuses them every timestep.
pub struct CgFilter {
    basis: Arc<CgBasis>,
    n_families: usize,
    config: FilterConfig,
    elements: Vec<CgElementContext>,
    /// Unit vector of the mass functional in orthonormal coordinates.
    mass_w: Option<DVector<f64>>,
}

impl CgFilter {
    pub fn new(
        basis: &Arc<CgBasis>,
        families: &[ConstraintFamily],
        options: CgFilterOptions,
        config: &FilterConfig,
    ) -> Result<Self, FieldError> {
        assert!(!families.is_empty(), "need at least one constraint family");
        let n = basis.n_global();
        let local = basis.local_count();
        let mesh = basis.mesh();

        // mass functional in w coordinates: <q, w> = integral of the field;
        // q solves R^T q = phi_integrals
        let mass_w = if options.preserve_total_mass {
            let q = basis
                .chol_l
                .solve_lower_triangular(&DVector::from_column_slice(&basis.phi_integrals))
                .expect("Cholesky factor is nonsingular");
            let norm = q.norm();
            if norm == 0.0 {
                return Err(FieldError::Filter {
                    element: None,
                    source: FilterError::RankDeficient,
                });
            }
            Some(q / norm)
        } else {
            None
        };

        let mut elements = Vec::with_capacity(mesh.element_count());
        for e in 0..mesh.element_count() {
            let h = mesh.element_width(e);
            let (l, r) = mesh.element_interval(e);
            // T_e columns: L^{-1} e_{gdof}
            let mut t_mat = DMatrix::zeros(n, local);
            for m in 0..local {
                let mut rhs = DVector::zeros(n);
                rhs[basis.global_dof(e, m)] = 1.0;
                let col = basis
                    .chol_l
                    .solve_lower_triangular(&rhs)
                    .expect("Cholesky factor is nonsingular");
                t_mat.set_column(m, &col);
            }
            let gram = t_mat.transpose() * &t_mat;

            let fams = families
                .iter()
                .map(|fam| {
                    build_cg_family(basis, fam, &t_mat, &gram, mass_w.as_ref(), h, l, r)
                })
                .collect();
            elements.push(CgElementContext {
                t_mat,
                families: fams,
            });
        }
        Ok(Self {
            basis: basis.clone(),
            n_families: families.len(),
            config: config.clone(),
            elements,
            mass_w,
        })
    }

    /// Elements on which some family is violated, by the exact extremum
    /// check of the bound gap; cheap enough to run every timestep.
    pub fn violating_elements(&self, field: &CGField) -> Vec<usize> {
        let mesh = self.basis.mesh();
        (0..mesh.element_count())
            .filter(|&e| {
                let local: Vec<f64> = (0..self.basis.local_count())
                    .map(|m| field.coeffs[self.basis.global_dof(e, m)])
                    .collect();
                self.elements[e].families.iter().any(|fam| {
                    let g = linear_combination(&fam.op_shape, &local).sub(&fam.bound);
                    if fam.sign * g.eval(-1.0) < 0.0 || fam.sign * g.eval(1.0) < 0.0 {
                        return true;
                    }
                    g.derivative()
                        .root_candidates()
                        .into_iter()
                        .any(|xi| fam.sign * g.eval(xi) < 0.0)
                })
            })
            .collect()
    }

    /// Filter the field globally; returns the filtered field, the report,
    /// and the elements that were in violation before the projection.
    pub fn apply(
        &self,
        field: &CGField,
    ) -> Result<(CGField, FilterReport, Vec<usize>), FieldError> {
        let violating = self.violating_elements(field);
        if violating.is_empty() {
            return Ok((
                field.clone(),
                FilterReport::trivial(self.n_families),
                violating,
            ));
        }
        let w = field.to_orthonormal();
        let oracle = CgOracle { filter: self };
        let (w_out, report) =
            greedy_core(&w, &oracle, &self.config, self.mass_w.is_some()).map_err(|source| {
                FieldError::Filter {
                    element: None,
                    source,
                }
            })?;
        let out = CGField::from_orthonormal(self.basis.clone(), &w_out);
        Ok((out, report, violating))
    }
}

#[allow(clippy::too_many_arguments)]
fn build_cg_family(
    basis: &CgBasis,
    fam: &ConstraintFamily,
    t_mat: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    mass_w: Option<&DVector<f64>>,
    h: f64,
    l: f64,
    r: f64,
) -> CgElementFamily {
    let chain = 2.0 / h;
    let op_shape: Vec<LegendreSeries> = basis
        .shape
        .iter()
        .zip(&basis.shape_deriv)
        .map(|(s, ds)| match fam.operator {
            Operator::PointValue => s.clone(),
            Operator::PointDerivative => ds.scaled(chain),
        })
        .collect();
    let op_shape_deriv: Vec<LegendreSeries> = op_shape.iter().map(|s| s.derivative()).collect();
    let bound = fam.bound.compose_affine(0.5 * (l + r), 0.5 * (r - l));
    let sign = match fam.sense {
        Sense::LowerBound => 1.0,
        Sense::UpperBound => -1.0,
    };
    let op_deg = op_shape.iter().map(|s| s.degree()).max().unwrap();
    let max_deg = op_deg.max(bound.degree());
    let rule = QuadratureRule::gauss_legendre(3 * max_deg + 2);

    // q(xi) = phi_op(xi)^T G phi_op(xi), projected onto degree 2*op_deg
    let quad_form = |shapes: &[LegendreSeries], xi: f64| -> f64 {
        let vals: Vec<f64> = shapes.iter().map(|s| s.eval(xi)).collect();
        let mut acc = 0.0;
        for (i, vi) in vals.iter().enumerate() {
            for (j, vj) in vals.iter().enumerate() {
                acc += vi * gram[(i, j)] * vj;
            }
        }
        acc
    };
    let mut q = crate::orthopoly::project_function(|xi| quad_form(&op_shape, xi), 2 * op_deg, &rule);

    // deflation by the unit mass functional: c(xi) = sum_m (T_e^T q_w)_m phi_op_m
    let deflate = mass_w.map(|qw| {
        let c_loc = t_mat.transpose() * qw;
        let c_slice: Vec<f64> = c_loc.iter().copied().collect();
        let c = linear_combination(&op_shape, &c_slice);
        let c_deriv = c.derivative();
        (c, c_deriv)
    });
    if let Some((c, _)) = &deflate {
        q = q.sub(&c.multiply_with_rule(c, &rule));
    }
    let q_deriv = q.derivative();
    let q_tol = 1e-12 * (1.0 + gram.trace());
    let bound_deriv = bound.derivative();
    CgElementFamily {
        sign,
        bound,
        bound_deriv,
        op_shape,
        op_shape_deriv,
        gram: gram.clone(),
        q,
        q_deriv,
        q_tol,
        rule,
        deflate,
    }
}

impl CgElementFamily {
    fn q_at(&self, local_vals: &dyn Fn(&[LegendreSeries], f64) -> Vec<f64>, xi: f64) -> f64 {
        let vals = local_vals(&self.op_shape, xi);
        let mut acc = 0.0;
        for (i, vi) in vals.iter().enumerate() {
            for (j, vj) in vals.iter().enumerate() {
                acc += vi * self.gram[(i, j)] * vj;
            }
        }
        if let Some((c, _)) = &self.deflate {
            acc -= c.eval(xi).powi(2);
        }
        acc
    }

    fn q_lim_at(&self, local_vals: &dyn Fn(&[LegendreSeries], f64) -> Vec<f64>, xi: f64) -> f64 {
        let vals = local_vals(&self.op_shape_deriv, xi);
        let mut acc = 0.0;
        for (i, vi) in vals.iter().enumerate() {
            for (j, vj) in vals.iter().enumerate() {
                acc += vi * self.gram[(i, j)] * vj;
            }
        }
        if let Some((_, cd)) = &self.deflate {
            acc -= cd.eval(xi).powi(2);
        }
        acc
    }
}

struct CgOracle<'a> {
    filter: &'a CgFilter,
}

impl DistanceOracle for CgOracle<'_> {
    fn family_count(&self) -> usize {
        self.filter.n_families
    }

    fn global_min(&self, w: &[f64]) -> Result<OracleMin, FilterError> {
        let basis = &self.filter.basis;
        let mesh = basis.mesh();
        let v = basis.from_orthonormal(w);
        let eval_vals = |shapes: &[LegendreSeries], xi: f64| -> Vec<f64> {
            shapes.iter().map(|s| s.eval(xi)).collect()
        };
        let mut best: Option<(usize, usize, ProfileMin, f64)> = None;
        for (e, ctx) in self.filter.elements.iter().enumerate() {
            let local: Vec<f64> = (0..basis.local_count())
                .map(|m| v[basis.global_dof(e, m)])
                .collect();
            for (k, fam) in ctx.families.iter().enumerate() {
                let g = linear_combination(&fam.op_shape, &local).sub(&fam.bound);
                let gd =
                    linear_combination(&fam.op_shape_deriv, &local).sub(&fam.bound_deriv);
                let m = minimize_profile(
                    &g,
                    &gd,
                    fam.sign,
                    &fam.q,
                    &fam.q_deriv,
                    |xi| fam.q_at(&eval_vals, xi),
                    |xi| fam.q_lim_at(&eval_vals, xi),
                    &fam.rule,
                    fam.q_tol,
                    self.filter.config.gap_tol(),
                )
                .map_err(|pin| FilterError::Infeasible {
                    x: mesh.from_reference(e, pin.x),
                    gap: pin.gap,
                })?;
                if let Some(m) = m {
                    let x_phys = mesh.from_reference(e, m.x);
                    let better = match &best {
                        None => true,
                        Some((bk, _, bm, bx)) => {
                            m.s < bm.s || (m.s == bm.s && (k < *bk || (k == *bk && x_phys < *bx)))
                        }
                    };
                    if better {
                        best = Some((k, e, m, x_phys));
                    }
                }
            }
        }
        let Some((k, e, m, x_phys)) = best else {
            return Ok(OracleMin {
                s: f64::INFINITY,
                family: 0,
                x: mesh.bounds().0,
                normal: None,
            });
        };
        // lift the normal into global orthonormal coordinates
        let ctx = &self.filter.elements[e];
        let fam = &ctx.families[k];
        let shapes = match m.kind {
            SampleKind::Regular => &fam.op_shape,
            SampleKind::Limit { .. } => &fam.op_shape_deriv,
        };
        let side = match m.kind {
            SampleKind::Regular => 1.0,
            SampleKind::Limit { side } => side,
        };
        let vals = DVector::from_iterator(shapes.len(), shapes.iter().map(|s| s.eval(m.x)));
        let mut raw = &ctx.t_mat * vals;
        if let Some(qw) = &self.filter.mass_w {
            let proj = qw.dot(&raw);
            raw -= qw * proj;
        }
        let norm = raw.norm();
        if norm == 0.0 {
            return Err(FilterError::DegenerateNormal(
                crate::constraint::ConstraintError::DegenerateNormal { x: x_phys },
            ));
        }
        let normal: Vec<f64> = raw.iter().map(|c| fam.sign * side * c / norm).collect();
        Ok(OracleMin {
            s: m.s,
            family: k,
            x: x_phys,
            normal: Some(normal),
        })
    }
}
