//! Pointwise inequality-constraint families and their signed distance
//! function.
//!
//! A family constrains a linear pointwise operator of the field (its value
//! or derivative) against a polynomial bound at every x in [-1, 1]. For a
//! coefficient vector v in an orthonormal basis, each point x induces a
//! halfspace; the signed distance
//!
//!   s(x) = lambda(x) * g(x),   lambda(x) = 1 / sqrt(sum_j (L_x psi_j)^2)
//!
//! measures the Euclidean coefficient-space distance from v to the
//! supporting hyperplane at x, with s >= 0 exactly on the feasible side.
//! Its global minimizer over [-1, 1] is found through the critical-point
//! polynomial 2 g' q - g q' (q = 1/lambda^2), whose real roots come from the
//! comrade matrix.

use thiserror::Error;

use crate::orthopoly::{linear_combination, LegendreSeries, QuadratureRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    /// The constraint operator annihilates every basis function at x, so no
    /// unit normal exists there (e.g. derivative constraints on constants).
    #[error("constraint normal vanishes at x = {x}")]
    DegenerateNormal { x: f64 },
}

/// The pointwise linear operator realized by a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    PointValue,
    PointDerivative,
}

/// Which side of the bound is feasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// L_x(u) >= bound(x)
    LowerBound,
    /// L_x(u) <= bound(x)
    UpperBound,
}

/// One family of pointwise inequality constraints over an interval.
///
/// A two-sided bound (0 <= u <= 1) is expressed as two families.
#[derive(Debug, Clone)]
pub struct ConstraintFamily {
    pub operator: Operator,
    pub bound: LegendreSeries,
    pub sense: Sense,
    pub label: String,
}

impl ConstraintFamily {
    pub fn new(
        operator: Operator,
        bound: LegendreSeries,
        sense: Sense,
        label: impl Into<String>,
    ) -> Self {
        Self {
            operator,
            bound,
            sense,
            label: label.into(),
        }
    }

    /// u(x) >= 0 everywhere.
    pub fn positivity() -> Self {
        Self::new(
            Operator::PointValue,
            LegendreSeries::constant(0.0),
            Sense::LowerBound,
            "positivity",
        )
    }

    /// u(x) <= c everywhere.
    pub fn upper_bound(c: f64) -> Self {
        Self::new(
            Operator::PointValue,
            LegendreSeries::constant(c),
            Sense::UpperBound,
            format!("upper-bound {c}"),
        )
    }

    /// u'(x) >= 0 everywhere.
    pub fn monotone_increasing() -> Self {
        Self::new(
            Operator::PointDerivative,
            LegendreSeries::constant(0.0),
            Sense::LowerBound,
            "monotone-increasing",
        )
    }

    fn sign(&self) -> f64 {
        match self.sense {
            Sense::LowerBound => 1.0,
            Sense::UpperBound => -1.0,
        }
    }
}

/// A signed-distance evaluation at one point of one family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDistanceSample {
    pub x: f64,
    pub value: f64,
    pub family_index: usize,
}

/// How the sample at the minimizer was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SampleKind {
    /// q(x) > 0: the ordinary quotient g / sqrt(q).
    Regular,
    /// q(x) = 0 with a vanishing gap: the one-sided limit of s approaching x
    /// from inside the interval along `side`. Arises at points pinned by
    /// equality constraints, where the hyperplane degenerates into a
    /// first-order (derivative) condition.
    Limit { side: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ProfileMin {
    pub s: f64,
    pub x: f64,
    pub kind: SampleKind,
}

/// A point where equality constraints pin a value that violates the family;
/// no feasible iterate exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ViolatedPin {
    pub x: f64,
    pub gap: f64,
}

/// Minimize s = sign * g_raw / sqrt(q) over [-1, 1].
///
/// `q_series`/`q_deriv_series` enter the critical-point polynomial
/// 2 g' q - g q', whose near-real comrade eigenvalues plus the endpoints
/// form the candidate set; `q_at`/`q_lim_at` evaluate q and sum_j (r_j')^2
/// pointwise and must agree with the hyperplane normals exactly. Where q
/// vanishes the one-sided limits of s are used; a pinned gap below -gap_tol
/// is reported as a `ViolatedPin`.
///
/// Returns Ok(None) when every candidate has unbounded margin (the family
/// pins no hyperplane anywhere).
#[allow(clippy::too_many_arguments)]
pub(crate) fn minimize_profile(
    g_raw: &LegendreSeries,
    g_raw_deriv: &LegendreSeries,
    sign: f64,
    q_series: &LegendreSeries,
    q_deriv_series: &LegendreSeries,
    q_at: impl Fn(f64) -> f64,
    q_lim_at: impl Fn(f64) -> f64,
    rule: &QuadratureRule,
    q_tol: f64,
    gap_tol: f64,
) -> Result<Option<ProfileMin>, ViolatedPin> {
    let crit = g_raw_deriv
        .multiply_with_rule(q_series, rule)
        .scaled(2.0)
        .sub(&g_raw.multiply_with_rule(q_deriv_series, rule));
    let mut candidates = vec![-1.0, 1.0];
    candidates.extend(crit.root_candidates());
    let mut best: Option<ProfileMin> = None;
    let consider = |s: f64, x: f64, kind: SampleKind, best: &mut Option<ProfileMin>| {
        let better = match best {
            None => true,
            Some(b) => s < b.s || (s == b.s && x < b.x),
        };
        if better {
            *best = Some(ProfileMin { s, x, kind });
        }
    };
    for &x in &candidates {
        let qv = q_at(x);
        let gv = sign * g_raw.eval(x);
        if qv > q_tol {
            consider(gv / qv.sqrt(), x, SampleKind::Regular, &mut best);
            continue;
        }
        // The normal vanishes at x: the value there is pinned independently
        // of the free coordinates.
        if gv < -gap_tol {
            return Err(ViolatedPin { x, gap: gv });
        }
        if gv > gap_tol {
            continue; // satisfied with unbounded margin
        }
        let qlv = q_lim_at(x);
        if qlv <= q_tol {
            continue; // degenerate beyond first order; gap is within tolerance
        }
        let gdv = sign * g_raw_deriv.eval(x);
        let denom = qlv.sqrt();
        if x > -1.0 + 1e-12 {
            consider(-gdv / denom, x, SampleKind::Limit { side: -1.0 }, &mut best);
        }
        if x < 1.0 - 1e-12 {
            consider(gdv / denom, x, SampleKind::Limit { side: 1.0 }, &mut best);
        }
    }
    Ok(best)
}

/// A constraint family realized on a concrete finite basis: the operator
/// applied to each basis function, expressed as reference-interval series.
///
/// This is the common ground for the standard orthonormal basis, bases
/// mapped onto mesh elements (scale factors fold into the series), and
/// bases reduced by equality constraints.
#[derive(Debug, Clone)]
pub(crate) struct RealizedFamily {
    op_basis: Vec<LegendreSeries>,
    op_basis_deriv: Vec<LegendreSeries>,
    bound: LegendreSeries,
    bound_deriv: LegendreSeries,
    sign: f64,
    q: LegendreSeries,
    q_deriv: LegendreSeries,
    q_tol: f64,
    rule: QuadratureRule,
}

impl RealizedFamily {
    /// Realize on the standard orthonormal basis psi_0..psi_{dim-1}.
    pub fn standard(family: &ConstraintFamily, dim: usize) -> Self {
        Self::mapped(family, dim, 1.0, 1.0, 0.0, 1.0)
    }

    /// Realize on a basis mapped onto a physical element: basis functions
    /// carry `basis_scale` (sqrt(2/h) for L2(Omega)-orthonormal mapped
    /// Legendre functions), derivatives the chain-rule factor `dxi_dx`
    /// (2/h), and the bound is composed with x = center + half * xi.
    pub fn mapped(
        family: &ConstraintFamily,
        dim: usize,
        basis_scale: f64,
        dxi_dx: f64,
        center: f64,
        half: f64,
    ) -> Self {
        assert!(dim >= 1);
        let op_basis: Vec<LegendreSeries> = (0..dim)
            .map(|j| {
                let e = LegendreSeries::unit(j);
                match family.operator {
                    Operator::PointValue => e.scaled(basis_scale),
                    Operator::PointDerivative => e.derivative().scaled(basis_scale * dxi_dx),
                }
            })
            .collect();
        let bound = family.bound.compose_affine(center, half);
        Self::from_parts(op_basis, bound, family.sign())
    }

    pub fn from_parts(op_basis: Vec<LegendreSeries>, bound: LegendreSeries, sign: f64) -> Self {
        let op_basis_deriv: Vec<LegendreSeries> =
            op_basis.iter().map(|r| r.derivative()).collect();
        let max_deg = op_basis
            .iter()
            .map(|r| r.degree())
            .chain(std::iter::once(bound.degree()))
            .max()
            .unwrap();
        // one rule covers q = sum r^2 and both products in 2 g' q - g q'
        let rule = QuadratureRule::gauss_legendre(3 * max_deg + 2);
        let mut q = LegendreSeries::zeros(1);
        let mut sq_norms = 0.0;
        for r in &op_basis {
            q = q.add(&r.multiply_with_rule(r, &rule));
            sq_norms += r.norm().powi(2);
        }
        let q_deriv = q.derivative();
        let bound_deriv = bound.derivative();
        Self {
            op_basis,
            op_basis_deriv,
            bound,
            bound_deriv,
            sign,
            q,
            q_deriv,
            q_tol: 1e-12 * (1.0 + sq_norms),
            rule,
        }
    }

    /// Push the family through an equality reduction: the free coordinates
    /// become z with basis columns of `p`, and the fixed component of the
    /// field shifts the bound.
    pub fn reduce(&self, p: &nalgebra::DMatrix<f64>, fixed: &[f64]) -> Self {
        assert_eq!(p.nrows(), self.op_basis.len());
        let reduced: Vec<LegendreSeries> = (0..p.ncols())
            .map(|j| {
                let w: Vec<f64> = p.column(j).iter().copied().collect();
                linear_combination(&self.op_basis, &w)
            })
            .collect();
        let shift = linear_combination(&self.op_basis, fixed);
        let bound = self.bound.sub(&shift);
        Self::from_parts(reduced, bound, self.sign)
    }

    /// Same realization with the bound shifted by an updated fixed
    /// component, for reuse of precomputed reductions across calls.
    pub fn with_bound_shift(&self, base: &RealizedFamily, fixed: &[f64]) -> Self {
        let shift = linear_combination(&base.op_basis, fixed);
        let mut out = self.clone();
        out.bound = base.bound.sub(&shift);
        out.bound_deriv = out.bound.derivative();
        out
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    /// The unsigned gap polynomial sum_j v_j r_j - bound and its derivative.
    pub fn gap_series(&self, v: &[f64]) -> (LegendreSeries, LegendreSeries) {
        let g = linear_combination(&self.op_basis, v).sub(&self.bound);
        let gd = linear_combination(&self.op_basis_deriv, v).sub(&self.bound_deriv);
        (g, gd)
    }

    /// Pointwise q(x) = sum_j r_j(x)^2, evaluated directly so that signed
    /// distances and normals share one value to the last bit.
    fn q_at(&self, x: f64) -> f64 {
        self.op_basis.iter().map(|r| r.eval(x).powi(2)).sum()
    }

    fn q_lim_at(&self, x: f64) -> f64 {
        self.op_basis_deriv.iter().map(|r| r.eval(x).powi(2)).sum()
    }

    /// Signed distance at a fixed point; errors where the normal vanishes.
    pub fn signed_distance_at(&self, v: &[f64], x: f64) -> Result<f64, ConstraintError> {
        let qv = self.q_at(x);
        if qv <= self.q_tol {
            return Err(ConstraintError::DegenerateNormal { x });
        }
        let (g, _) = self.gap_series(v);
        Ok(self.sign * g.eval(x) / qv.sqrt())
    }

    /// Global minimum of s over [-1, 1].
    pub fn minimize(&self, v: &[f64], gap_tol: f64) -> Result<Option<ProfileMin>, ViolatedPin> {
        let (g, gd) = self.gap_series(v);
        minimize_profile(
            &g,
            &gd,
            self.sign,
            &self.q,
            &self.q_deriv,
            |x| self.q_at(x),
            |x| self.q_lim_at(x),
            &self.rule,
            self.q_tol,
            gap_tol,
        )
    }

    /// Unit normal of the supporting hyperplane at the sampled point,
    /// oriented toward the feasible halfspace.
    pub fn normal(&self, x: f64, kind: SampleKind) -> Result<Vec<f64>, ConstraintError> {
        match kind {
            SampleKind::Regular => {
                let qv = self.q_at(x);
                if qv <= self.q_tol {
                    return Err(ConstraintError::DegenerateNormal { x });
                }
                let lambda = 1.0 / qv.sqrt();
                Ok(self
                    .op_basis
                    .iter()
                    .map(|r| self.sign * lambda * r.eval(x))
                    .collect())
            }
            SampleKind::Limit { side } => {
                let qlv = self.q_lim_at(x);
                if qlv <= self.q_tol {
                    return Err(ConstraintError::DegenerateNormal { x });
                }
                let lambda = 1.0 / qlv.sqrt();
                Ok(self
                    .op_basis_deriv
                    .iter()
                    .map(|r| self.sign * side * lambda * r.eval(x))
                    .collect())
            }
        }
    }
}

/// Signed distance s(x) of the field with the given coefficients from the
/// family's supporting hyperplane at x; s >= 0 iff the constraint holds at x.
pub fn signed_distance(
    family: &ConstraintFamily,
    coeffs: &[f64],
    x: f64,
) -> Result<f64, ConstraintError> {
    RealizedFamily::standard(family, coeffs.len()).signed_distance_at(coeffs, x)
}

/// Unit normal h(x) of the supporting hyperplane at x in an n-dimensional
/// coefficient space, pointing toward the feasible halfspace. Moving a
/// coefficient vector by t * h changes s(x) by exactly t.
pub fn unit_normal(
    family: &ConstraintFamily,
    x: f64,
    n: usize,
) -> Result<Vec<f64>, ConstraintError> {
    RealizedFamily::standard(family, n).normal(x, SampleKind::Regular)
}

/// Global minimizer of the signed distance over [-1, 1]. Candidates are the
/// endpoints and the real roots of the critical-point polynomial; ties are
/// broken toward smaller x.
pub fn minimize_signed_distance(
    family: &ConstraintFamily,
    coeffs: &[f64],
) -> Result<SignedDistanceSample, ConstraintError> {
    let realized = RealizedFamily::standard(family, coeffs.len());
    match realized.minimize(coeffs, DEFAULT_GAP_TOL) {
        Ok(Some(m)) => Ok(SignedDistanceSample {
            x: m.x,
            value: m.s,
            family_index: 0,
        }),
        // On the standard basis the normal only degenerates when the
        // operator kills the whole space (derivative constraints on
        // constants), and a pinned violation cannot arise.
        Ok(None) => Err(ConstraintError::DegenerateNormal { x: 0.0 }),
        Err(pin) => Err(ConstraintError::DegenerateNormal { x: pin.x }),
    }
}

/// Pinned gaps within this tolerance of zero count as touching the bound.
pub(crate) const DEFAULT_GAP_TOL: f64 = 1e-9;
