//! Orthonormal Legendre series on the reference interval [-1, 1].
//!
//! The basis is psi_j(x) = sqrt((2j+1)/2) * P_j(x) with P_j the classical
//! Legendre polynomial, so that <psi_i, psi_j> = delta_ij in the unweighted
//! L2 inner product on [-1, 1]. With this normalization the L2 norm of a
//! polynomial equals the Euclidean norm of its coefficient vector, which is
//! what turns coefficient-space projections into distances on functions.

use nalgebra::DMatrix;
use thiserror::Error;

/// Trailing coefficients with |c| <= COEFF_DROP_TOL * max|c| are trimmed
/// before building the comrade matrix.
pub const COEFF_DROP_TOL: f64 = 1e-13;
/// Eigenvalues within this distance outside [-1, 1] are accepted as roots
/// and clipped onto the interval.
pub const EDGE_TOL: f64 = 1e-10;
/// |Im| <= IMAG_TOL * (1 + |Re|) counts as a real eigenvalue.
const IMAG_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrthopolyError {
    /// Every coefficient is below the drop tolerance; the zero polynomial
    /// has no isolated roots.
    #[error("series is numerically zero; roots are not isolated")]
    DegenerateSeries,
}

/// Off-diagonal entry beta_j of the Jacobi matrix for the orthonormal
/// Legendre recurrence x psi_j = beta_{j+1} psi_{j+1} + beta_j psi_{j-1}.
pub(crate) fn recurrence_beta(j: usize) -> f64 {
    let j = j as f64;
    j / ((2.0 * j - 1.0) * (2.0 * j + 1.0)).sqrt()
}

/// Norm ratio between psi_j and the classical P_j: psi_j = normalizer(j) * P_j.
fn normalizer(j: usize) -> f64 {
    (j as f64 + 0.5).sqrt()
}

/// Values of psi_0..psi_{count-1} at x by upward recurrence.
pub(crate) fn psi_values(x: f64, count: usize) -> Vec<f64> {
    let mut vals = Vec::with_capacity(count);
    if count == 0 {
        return vals;
    }
    vals.push(std::f64::consts::FRAC_1_SQRT_2);
    if count == 1 {
        return vals;
    }
    vals.push(x * (1.5f64).sqrt());
    for j in 1..count - 1 {
        let next = (x * vals[j] - recurrence_beta(j) * vals[j - 1]) / recurrence_beta(j + 1);
        vals.push(next);
    }
    vals
}

/// A polynomial expressed in the orthonormal Legendre basis.
///
/// Coefficient j multiplies psi_j; the represented degree is len - 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreSeries {
    coeffs: Vec<f64>,
}

impl LegendreSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "series needs at least one coefficient");
        Self { coeffs }
    }

    /// The zero polynomial stored with `len` coefficients.
    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    /// The basis coefficient vector e_j (the series of psi_j itself).
    pub fn unit(j: usize) -> Self {
        let mut coeffs = vec![0.0; j + 1];
        coeffs[j] = 1.0;
        Self::new(coeffs)
    }

    /// The constant function c (not the coefficient c: psi_0 = 1/sqrt(2)).
    pub fn constant(c: f64) -> Self {
        Self::new(vec![c * std::f64::consts::SQRT_2])
    }

    /// The affine function a + b x.
    pub fn linear(a: f64, b: f64) -> Self {
        Self::new(vec![a * std::f64::consts::SQRT_2, b * (2.0f64 / 3.0).sqrt()])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Euclidean coefficient norm, equal to the L2([-1,1]) norm of the
    /// represented function.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Evaluate by Clenshaw backward recurrence (stable for high degree).
    pub fn eval(&self, x: f64) -> f64 {
        let c = &self.coeffs;
        let n = c.len();
        let mut b1 = 0.0; // b_{k+1}
        let mut b2 = 0.0; // b_{k+2}
        for k in (0..n).rev() {
            let bk = c[k] + x / recurrence_beta(k + 1) * b1
                - recurrence_beta(k + 1) / recurrence_beta(k + 2) * b2;
            b2 = b1;
            b1 = bk;
        }
        b1 * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Derivative of the represented polynomial at x.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.derivative().eval(x)
    }

    /// The derivative as a series, exact up to roundoff.
    ///
    /// Uses the classical backward recurrence d_j = (2j+1)(c_{j+1} + c_{j+3} + ...)
    /// after rescaling to the P_j basis.
    pub fn derivative(&self) -> LegendreSeries {
        let n = self.coeffs.len();
        if n == 1 {
            return LegendreSeries::zeros(1);
        }
        let classical: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * normalizer(j))
            .collect();
        let mut dcl = vec![0.0; n - 1];
        for j in (0..n - 1).rev() {
            let carry = if j + 2 <= n - 2 {
                dcl[j + 2] / (2.0 * (j + 2) as f64 + 1.0)
            } else {
                0.0
            };
            dcl[j] = (2.0 * j as f64 + 1.0) * (classical[j + 1] + carry);
        }
        let coeffs = dcl
            .iter()
            .enumerate()
            .map(|(j, d)| d / normalizer(j))
            .collect();
        LegendreSeries::new(coeffs)
    }

    /// Exact product, formed by evaluation at a Gauss rule of
    /// deg(a) + deg(b) + 1 nodes and re-projection.
    pub fn multiply(&self, other: &LegendreSeries) -> LegendreSeries {
        let rule = QuadratureRule::gauss_legendre(self.degree() + other.degree() + 1);
        self.multiply_with_rule(other, &rule)
    }

    /// Product using a caller-provided rule, which must be exact for
    /// polynomials of degree 2(deg a + deg b).
    pub(crate) fn multiply_with_rule(
        &self,
        other: &LegendreSeries,
        rule: &QuadratureRule,
    ) -> LegendreSeries {
        let deg = self.degree() + other.degree();
        let vals: Vec<f64> = rule
            .nodes()
            .iter()
            .map(|&x| self.eval(x) * other.eval(x))
            .collect();
        project_values(&vals, deg, rule)
    }

    /// Integral over [-1, 1]; orthogonality kills every mode above psi_0.
    pub fn integrate(&self) -> f64 {
        self.coeffs[0] * std::f64::consts::SQRT_2
    }

    pub fn scaled(&self, a: f64) -> LegendreSeries {
        LegendreSeries::new(self.coeffs.iter().map(|c| c * a).collect())
    }

    pub fn add(&self, other: &LegendreSeries) -> LegendreSeries {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = vec![0.0; n];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs[i] += c;
        }
        for (i, c) in other.coeffs.iter().enumerate() {
            coeffs[i] += c;
        }
        LegendreSeries::new(coeffs)
    }

    pub fn sub(&self, other: &LegendreSeries) -> LegendreSeries {
        self.add(&other.scaled(-1.0))
    }

    /// The series of f(center + half * x), i.e. this polynomial pulled back
    /// through an affine map onto the reference interval.
    pub fn compose_affine(&self, center: f64, half: f64) -> LegendreSeries {
        let deg = self.degree();
        let rule = QuadratureRule::gauss_legendre(deg + 1);
        let vals: Vec<f64> = rule
            .nodes()
            .iter()
            .map(|&x| self.eval(center + half * x))
            .collect();
        project_values(&vals, deg, &rule)
    }

    /// All real roots in [-1, 1], from the spectrum of the comrade matrix of
    /// the Legendre three-term recurrence. Sorted ascending.
    pub fn comrade_roots(&self) -> Result<Vec<f64>, OrthopolyError> {
        let max_abs = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if max_abs == 0.0 {
            return Err(OrthopolyError::DegenerateSeries);
        }
        let tol = COEFF_DROP_TOL * max_abs;
        let deg = match self.coeffs.iter().rposition(|c| c.abs() > tol) {
            Some(d) => d,
            None => return Err(OrthopolyError::DegenerateSeries),
        };
        if deg == 0 {
            // nonzero constant: no roots
            return Ok(Vec::new());
        }
        let eig = comrade_matrix(&self.coeffs, deg).complex_eigenvalues();
        let trimmed = LegendreSeries::new(self.coeffs[..=deg].to_vec());
        let trimmed_deriv = trimmed.derivative();
        let mut roots: Vec<f64> = eig
            .iter()
            .filter(|z| z.im.abs() <= IMAG_TOL * (1.0 + z.re.abs()))
            .map(|z| z.re)
            .filter(|r| (-1.0 - EDGE_TOL..=1.0 + EDGE_TOL).contains(r))
            .map(|r| polish_root(&trimmed, &trimmed_deriv, r).clamp(-1.0, 1.0))
            .collect();
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(roots)
    }

    /// Candidate extrema locations for minimization: real parts of comrade
    /// eigenvalues accepted with deliberately loose tolerances, Newton
    /// polished against the full series and clamped into [-1, 1].
    ///
    /// Spurious candidates are harmless to a minimization over evaluated
    /// points, while rejecting a nearly-real pair (a flat extremum appears
    /// as a near-double root) would lose the true minimizer. The trim is
    /// far more aggressive than the root finder's: a leading coefficient
    /// near the roundoff floor scales the comrade matrix's last row by its
    /// reciprocal and corrupts every eigenvalue, whereas dropping it only
    /// perturbs candidates by an amount the polish absorbs.
    pub(crate) fn root_candidates(&self) -> Vec<f64> {
        let max_abs = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if max_abs == 0.0 {
            return Vec::new();
        }
        let tol = 1e-8 * max_abs;
        let deg = match self.coeffs.iter().rposition(|c| c.abs() > tol) {
            Some(d) if d > 0 => d,
            _ => return Vec::new(),
        };
        let eig = comrade_matrix(&self.coeffs, deg).complex_eigenvalues();
        let deriv = self.derivative();
        eig.iter()
            .filter(|z| z.im.abs() <= 1e-3 * (1.0 + z.re.abs()))
            .map(|z| z.re)
            .filter(|r| (-1.001..=1.001).contains(r))
            .map(|r| polish_root(self, &deriv, r).clamp(-1.0, 1.0))
            .collect()
    }
}

/// The comrade (colleague) matrix of a degree-`deg` series: the Jacobi
/// matrix of the three-term recurrence with its last row corrected so that
/// psi_deg is reduced modulo the polynomial. Eigenvalues are the roots.
fn comrade_matrix(coeffs: &[f64], deg: usize) -> DMatrix<f64> {
    let n = deg;
    let lead = coeffs[deg];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        if j + 1 < n {
            m[(j, j + 1)] = recurrence_beta(j + 1);
        }
        if j >= 1 {
            m[(j, j - 1)] = recurrence_beta(j);
        }
    }
    let scale = recurrence_beta(deg) / lead;
    for k in 0..n {
        m[(n - 1, k)] -= scale * coeffs[k];
    }
    m
}

/// A few guarded Newton steps to sharpen an eigenvalue-derived root.
/// Steps are kept only while they reduce |p| and stay near the interval,
/// so clustered or near-multiple roots cannot be made worse.
fn polish_root(p: &LegendreSeries, dp: &LegendreSeries, r: f64) -> f64 {
    let mut best = r;
    let mut best_abs = p.eval(r).abs();
    let mut x = r;
    for _ in 0..3 {
        let d = dp.eval(x);
        if d == 0.0 {
            break;
        }
        x -= p.eval(x) / d;
        if !(-1.0 - 1e-6..=1.0 + 1e-6).contains(&x) {
            break;
        }
        let fx = p.eval(x).abs();
        if fx < best_abs {
            best_abs = fx;
            best = x;
        } else {
            break;
        }
    }
    best
}

/// Weighted combination sum_j weights[j] * series[j]; series may have
/// different lengths.
pub(crate) fn linear_combination(series: &[LegendreSeries], weights: &[f64]) -> LegendreSeries {
    assert_eq!(series.len(), weights.len());
    let n = series.iter().map(|s| s.coeffs.len()).max().unwrap_or(1);
    let mut coeffs = vec![0.0; n];
    for (s, &w) in series.iter().zip(weights) {
        for (i, c) in s.coeffs.iter().enumerate() {
            coeffs[i] += w * c;
        }
    }
    LegendreSeries::new(coeffs)
}

/// L2 projection of sampled values onto span{psi_0..psi_degree}; exact when
/// the samples come from a polynomial the rule integrates exactly against
/// the basis.
fn project_values(vals: &[f64], degree: usize, rule: &QuadratureRule) -> LegendreSeries {
    let mut coeffs = vec![0.0; degree + 1];
    for (i, (&x, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
        let psi = psi_values(x, degree + 1);
        for (k, p) in psi.iter().enumerate() {
            coeffs[k] += w * vals[i] * p;
        }
    }
    LegendreSeries::new(coeffs)
}

/// L2 projection of a function onto span{psi_0..psi_degree} with the given rule.
pub fn project_function(
    f: impl Fn(f64) -> f64,
    degree: usize,
    rule: &QuadratureRule,
) -> LegendreSeries {
    let vals: Vec<f64> = rule.nodes().iter().map(|&x| f(x)).collect();
    project_values(&vals, degree, rule)
}

/// Gauss-Legendre quadrature on [-1, 1].
///
/// An m-node rule integrates polynomials of degree <= 2m-1 exactly.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Nodes and weights by the Golub-Welsch eigenvalue method.
    pub fn gauss_legendre(m: usize) -> Self {
        assert!(m >= 1, "quadrature rule needs at least one node");
        if m == 1 {
            return Self {
                nodes: vec![0.0],
                weights: vec![2.0],
            };
        }
        let mut j = DMatrix::<f64>::zeros(m, m);
        for i in 1..m {
            let b = recurrence_beta(i);
            j[(i - 1, i)] = b;
            j[(i, i - 1)] = b;
        }
        let eig = nalgebra::linalg::SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..m)
            .map(|i| {
                let first = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], 2.0 * first * first)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Monomial-basis oracle for psi_j at low degree.
    fn psi_oracle(j: usize, x: f64) -> f64 {
        let p = match j {
            0 => 1.0,
            1 => x,
            2 => (3.0 * x * x - 1.0) / 2.0,
            3 => (5.0 * x * x * x - 3.0 * x) / 2.0,
            _ => panic!("oracle only goes to degree 3"),
        };
        normalizer(j) * p
    }

    #[test]
    fn eval_matches_monomial_oracle() {
        assert!((LegendreSeries::new(vec![1.0]).eval(0.3) - 0.7071067811865476).abs() < 1e-15);
        assert!((LegendreSeries::new(vec![0.0, 1.0]).eval(1.0) - 1.224744871391589).abs() < 1e-15);
        // psi_2(0) by independent monomial evaluation
        let s = LegendreSeries::new(vec![0.0, 0.0, 1.0]);
        assert!((s.eval(0.0) - psi_oracle(2, 0.0)).abs() < 1e-15);
        assert!((s.eval(0.0) + 0.7905694150420949).abs() < 1e-15);
        for &x in &[-0.9, -0.3, 0.2, 0.77] {
            assert!((s.eval(x) - psi_oracle(2, x)).abs() < 1e-14);
        }
    }

    #[test]
    fn eval_stable_at_high_degree() {
        // psi_j(1) = sqrt(j + 1/2); a unit coefficient at j = 120 must still
        // evaluate accurately at the endpoint.
        let mut c = vec![0.0; 121];
        c[120] = 1.0;
        let s = LegendreSeries::new(c);
        let expect = normalizer(120);
        assert!((s.eval(1.0) - expect).abs() < 1e-10 * expect);
        assert!((s.eval(-1.0) - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(LegendreSeries::new(vec![1.0]).eval_derivative(0.3), 0.0);
        let s1 = LegendreSeries::new(vec![0.0, 1.0]);
        assert!((s1.eval_derivative(-0.4) - 1.224744871391589).abs() < 1e-15);
        let s2 = LegendreSeries::new(vec![0.0, 0.0, 1.0]);
        // 3 sqrt(5/2) x at x = 0.5, by the monomial oracle
        assert!((s2.eval_derivative(0.5) - 2.371708245126285).abs() < 1e-14);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let coeffs: Vec<f64> = (0..11).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = LegendreSeries::new(coeffs);
            for _ in 0..5 {
                let x: f64 = rng.gen_range(-0.99..0.99);
                let h = 1e-6;
                let fd = (s.eval(x + h) - s.eval(x - h)) / (2.0 * h);
                assert!((s.eval_derivative(x) - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parseval_holds_for_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let coeffs: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = LegendreSeries::new(coeffs);
            let rule = QuadratureRule::gauss_legendre(10);
            let l2sq = rule.integrate(|x| s.eval(x) * s.eval(x));
            let rel = (l2sq.sqrt() - s.norm()).abs() / s.norm();
            assert!(rel < 1e-12, "relative Parseval error {rel}");
        }
    }

    #[test]
    fn multiply_examples() {
        // constant 1 times anything is identity
        let one = LegendreSeries::new(vec![std::f64::consts::SQRT_2]);
        let b = LegendreSeries::new(vec![0.3, -0.2, 0.9]);
        let prod = one.multiply(&b);
        for (x, y) in prod.coeffs().iter().zip(b.coeffs()) {
            assert!((x - y).abs() < 1e-14);
        }
        // psi_1 * psi_1 = (3/2) x^2 = sqrt(2)/2 psi_0 + sqrt(2/5) psi_2
        let p1 = LegendreSeries::unit(1);
        let sq = p1.multiply(&p1);
        let expect = [0.7071067811865476, 0.0, 0.6324555320336759];
        for (c, e) in sq.coeffs().iter().zip(expect) {
            assert!((c - e).abs() < 1e-14, "got {c}, expected {e}");
        }
        // psi_0-scaled coefficient shuffle: [1,0] x [0,0,1] -> [0,0,1/sqrt(2)]
        let a = LegendreSeries::new(vec![1.0, 0.0]);
        let c = LegendreSeries::new(vec![0.0, 0.0, 1.0]);
        let prod = a.multiply(&c);
        assert!((prod.coeffs()[2] - 0.7071067811865476).abs() < 1e-14);
        assert!(prod.coeffs()[0].abs() < 1e-14 && prod.coeffs()[1].abs() < 1e-14);
    }

    #[test]
    fn multiply_agrees_with_pointwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = LegendreSeries::new((0..7).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = LegendreSeries::new((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let prod = a.multiply(&b);
        assert_eq!(prod.degree(), a.degree() + b.degree());
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let direct = a.eval(x) * b.eval(x);
            assert!((prod.eval(x) - direct).abs() < 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn integrate_examples() {
        assert!((LegendreSeries::new(vec![1.0]).integrate() - 1.4142135623730951).abs() < 1e-15);
        assert_eq!(LegendreSeries::new(vec![0.0, 1.0]).integrate(), 0.0);
        let s = LegendreSeries::new(vec![0.5, 2.0, -3.0]);
        assert!((s.integrate() - 0.7071067811865476).abs() < 1e-15);
        // quadrature cross-check
        let rule = QuadratureRule::gauss_legendre(4);
        assert!((s.integrate() - rule.integrate(|x| s.eval(x))).abs() < 1e-14);
    }

    #[test]
    fn comrade_roots_examples() {
        let p2 = LegendreSeries::new(vec![0.0, 0.0, 1.0]);
        let roots = p2.comrade_roots().unwrap();
        assert_eq!(roots.len(), 2);
        assert!((roots[0] + 0.5773502691896258).abs() < 1e-12);
        assert!((roots[1] - 0.5773502691896258).abs() < 1e-12);

        let p1 = LegendreSeries::new(vec![0.0, 1.0]);
        let roots = p1.comrade_roots().unwrap();
        assert_eq!(roots.len(), 1);
        assert!(roots[0].abs() < 1e-14);

        assert_eq!(
            LegendreSeries::zeros(4).comrade_roots(),
            Err(OrthopolyError::DegenerateSeries)
        );
        // nonzero constant has no roots
        assert!(LegendreSeries::constant(3.0).comrade_roots().unwrap().is_empty());
    }

    #[test]
    fn comrade_roots_recover_constructed_factors() {
        let target = [-0.7, 0.25, 0.9];
        let mut poly = LegendreSeries::constant(1.0);
        for &r in &target {
            poly = poly.multiply(&LegendreSeries::linear(-r, 1.0));
        }
        let roots = poly.comrade_roots().unwrap();
        assert_eq!(roots.len(), 3);
        for (r, t) in roots.iter().zip(target) {
            assert!((r - t).abs() < 1e-10, "root {r} vs {t}");
        }
    }

    #[test]
    fn comrade_roots_high_degree_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut target: Vec<f64> = Vec::new();
            while target.len() < 12 {
                let r: f64 = rng.gen_range(-0.95..0.95);
                if target.iter().all(|t: &f64| (t - r).abs() > 5e-2) {
                    target.push(r);
                }
            }
            target.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rule = QuadratureRule::gauss_legendre(target.len() + 1);
            let poly = project_function(
                |x| target.iter().map(|r| x - r).product::<f64>(),
                target.len(),
                &rule,
            );
            let roots = poly.comrade_roots().unwrap();
            assert_eq!(roots.len(), target.len());
            for (r, t) in roots.iter().zip(&target) {
                assert!((r - t).abs() < 1e-10, "root {r} vs {t}");
            }
        }
    }

    #[test]
    fn gauss_rule_integrates_monomials_exactly() {
        for m in 1..=12 {
            let rule = QuadratureRule::gauss_legendre(m);
            assert!((rule.weights().iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for k in 0..=(2 * m - 1) {
                let exact = if k % 2 == 0 {
                    2.0 / (k as f64 + 1.0)
                } else {
                    0.0
                };
                let got = rule.integrate(|x| x.powi(k as i32));
                assert!(
                    (got - exact).abs() < 1e-13,
                    "m={m} k={k}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn compose_affine_matches_direct_evaluation() {
        let s = LegendreSeries::new(vec![0.4, -1.1, 0.3, 0.8]);
        let mapped = s.compose_affine(0.25, 0.5);
        for &xi in &[-1.0, -0.3, 0.0, 0.9, 1.0] {
            let want = s.eval(0.25 + 0.5 * xi);
            assert!((mapped.eval(xi) - want).abs() < 1e-13);
        }
    }
}
