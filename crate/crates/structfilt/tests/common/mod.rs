//! Oracles shared by the acceptance suite. Everything here is implemented
//! independently of the library's evaluation and minimization paths: basis
//! values come from the classical three-term recurrence, and the reference
//! projection is an exact KKT active-set solve over sampled halfspaces with
//! tangential contacts pinned by value and derivative conditions.

use nalgebra::{DMatrix, DVector};

/// Orthonormal Legendre values psi_0..psi_{n-1}(x) by the classical
/// recurrence (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}, scaled by
/// sqrt(k + 1/2).
pub fn oracle_psi(x: f64, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n);
    if n == 0 {
        return p;
    }
    p.push(1.0);
    if n > 1 {
        p.push(x);
    }
    for k in 1..n.saturating_sub(1) {
        let next = ((2 * k + 1) as f64 * x * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
        p.push(next);
    }
    p.iter()
        .enumerate()
        .map(|(k, v)| v * (k as f64 + 0.5).sqrt())
        .collect()
}

/// Derivatives psi_0'..psi_{n-1}'(x) from (1-x^2) P_k' = k (P_{k-1} - x P_k),
/// with the endpoint limit P_k'(+-1) = (+-1)^{k-1} k(k+1)/2.
pub fn oracle_psi_deriv(x: f64, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n.max(1));
    p.push(1.0f64);
    if n > 1 {
        p.push(x);
    }
    for k in 1..n.saturating_sub(1) {
        let next = ((2 * k + 1) as f64 * x * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
        p.push(next);
    }
    (0..n)
        .map(|k| {
            let scale = (k as f64 + 0.5).sqrt();
            if (1.0 - x * x).abs() < 1e-12 {
                let sign = if x > 0.0 || k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (k * (k + 1)) as f64 / 2.0 * scale
            } else if k == 0 {
                0.0
            } else {
                scale * k as f64 * (p[k - 1] - x * p[k]) / (1.0 - x * x)
            }
        })
        .collect()
}

/// Evaluate a coefficient vector in the orthonormal basis.
pub fn oracle_eval(coeffs: &[f64], x: f64) -> f64 {
    oracle_psi(x, coeffs.len())
        .iter()
        .zip(coeffs)
        .map(|(p, c)| p * c)
        .sum()
}

/// Signed distance of the positivity constraint at x: u(x) / |psi(x)|.
pub fn oracle_positivity_distance(coeffs: &[f64], x: f64) -> f64 {
    let psi = oracle_psi(x, coeffs.len());
    let u: f64 = psi.iter().zip(coeffs).map(|(p, c)| p * c).sum();
    let q: f64 = psi.iter().map(|p| p * p).sum();
    u / q.sqrt()
}

/// Minimum of u over a dense grid.
pub fn oracle_grid_min(coeffs: &[f64], points: usize) -> f64 {
    (0..=points)
        .map(|i| oracle_eval(coeffs, -1.0 + 2.0 * i as f64 / points as f64))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy)]
struct Contact {
    x: f64,
    tangent: bool,
    hits: usize,
}

/// Reference projection of `v0` onto u(x) >= 0: active-set exchange over
/// the continuum, seeded from a 2000-point grid with golden refinement of
/// every dip. Contacts that keep recurring are tangential (the projection
/// touches zero with zero slope there); pinning them with value plus
/// derivative conditions resolves the projection far below the position
/// noise a value-only working set can reach.
pub fn qp_project_positivity(v0: &[f64]) -> Vec<f64> {
    let grid: Vec<f64> = (0..2000).map(|i| -1.0 + 2.0 * i as f64 / 1999.0).collect();
    let spacing = 2.0 / 1999.0;
    let mut contacts: Vec<Contact> = Vec::new();
    let mut v = v0.to_vec();
    // recurrence detector for tangential contacts, independent of the
    // working-set pruning
    let mut last_worst: Option<(f64, usize)> = None;
    for _outer in 0..600 {
        // deepest violation over every refined dip of the current iterate
        let us: Vec<f64> = grid.iter().map(|&x| oracle_eval(&v, x)).collect();
        let mut worst_x = grid[0];
        let mut worst_u = us[0];
        for i in 0..grid.len() {
            let interior_min = i > 0
                && i + 1 < grid.len()
                && us[i] <= us[i - 1]
                && us[i] <= us[i + 1];
            if !(interior_min || i == 0 || i + 1 == grid.len()) {
                continue;
            }
            let refined = refine_minimum(&v, grid[i], spacing);
            let refined_u = oracle_eval(&v, refined);
            let (x, u) = if refined_u < us[i] {
                (refined, refined_u)
            } else {
                (grid[i], us[i])
            };
            if u < worst_u {
                worst_u = u;
                worst_x = x;
            }
        }
        if worst_u >= -1e-12 {
            return v;
        }
        let recurrences = match last_worst {
            Some((x, count)) if (x - worst_x).abs() < 1e-3 => count + 1,
            _ => 1,
        };
        last_worst = Some((worst_x, recurrences));
        let promote = recurrences >= 4 && worst_x.abs() < 1.0 - 1e-9;
        match contacts
            .iter_mut()
            .find(|c| (c.x - worst_x).abs() < 1e-3)
        {
            Some(c) => {
                c.x = worst_x;
                c.hits += 1;
                // an interior contact that keeps recurring is tangential
                c.tangent |= promote || (c.hits >= 4 && worst_x.abs() < 1.0 - 1e-9);
            }
            None => contacts.push(Contact {
                x: worst_x,
                tangent: promote,
                hits: 1,
            }),
        }
        let (solution, mut retained) = project_kkt(v0, &contacts);
        // tangent anchors track the dip bottoms of the new solution; the
        // anchor/solution pair converges to the true tangency location over
        // the outer iterations
        for c in retained.iter_mut().filter(|c| c.tangent) {
            c.x = refine_minimum(&solution, c.x, 5e-3).clamp(-1.0, 1.0);
        }
        v = solution;
        contacts = retained;
    }
    panic!("reference projection did not converge");
}

/// Golden-section sharpening of a local minimum of u around x0.
fn refine_minimum(coeffs: &[f64], x0: f64, width: f64) -> f64 {
    let mut a = (x0 - width).max(-1.0);
    let mut b = (x0 + width).min(1.0);
    let phi = 0.618_033_988_749_894_9;
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if oracle_eval(coeffs, c) < oracle_eval(coeffs, d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Projection of v0 onto the contact constraints by KKT subset enumeration.
/// Tangent contacts always contribute u(x) = 0 and u'(x) = 0 (the latter
/// with a sign-free multiplier); value-only contacts are enumerated in and
/// out with their multipliers required nonnegative.
fn project_kkt(v0: &[f64], contacts: &[Contact]) -> (Vec<f64>, Vec<Contact>) {
    let n = v0.len();
    let tangents: Vec<&Contact> = contacts.iter().filter(|c| c.tangent).collect();
    let plain: Vec<&Contact> = contacts.iter().filter(|c| !c.tangent).collect();
    let m = plain.len();
    assert!(m <= 20, "working set blew up");
    let mut best: Option<(usize, Vec<f64>, Vec<Contact>)> = None;
    'subsets: for mask in 0u32..(1 << m) {
        let chosen: Vec<&Contact> = (0..m)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| plain[i])
            .collect();
        // rows: tangent values, tangent derivatives, chosen values
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut sign_constrained: Vec<bool> = Vec::new();
        for t in &tangents {
            rows.push(oracle_psi(t.x, n));
            sign_constrained.push(true);
            rows.push(oracle_psi_deriv(t.x, n));
            sign_constrained.push(false);
        }
        for c in &chosen {
            rows.push(oracle_psi(c.x, n));
            sign_constrained.push(true);
        }
        let k = rows.len();
        if k > n {
            continue;
        }
        let mut v = v0.to_vec();
        if k > 0 {
            let mut gram = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (a, ra) in rows.iter().enumerate() {
                for (b, rb) in rows.iter().enumerate() {
                    gram[(a, b)] = ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>();
                }
                rhs[a] = -ra.iter().zip(v0).map(|(x, y)| x * y).sum::<f64>();
            }
            let Some(mu) = gram.lu().solve(&rhs) else {
                continue;
            };
            for (i, &m) in mu.iter().enumerate() {
                if sign_constrained[i] && m < -1e-12 {
                    continue 'subsets;
                }
            }
            for (row, &m) in rows.iter().zip(mu.iter()) {
                for (vj, rj) in v.iter_mut().zip(row) {
                    *vj += m * rj;
                }
            }
        }
        // primal feasibility over every contact's value constraint
        for c in contacts {
            let u = oracle_eval(&v, c.x);
            if u < -1e-10 {
                continue 'subsets;
            }
        }
        let mut retained: Vec<Contact> = tangents.iter().map(|t| **t).collect();
        retained.extend(chosen.iter().map(|c| **c));
        match &best {
            Some((bk, _, _)) if *bk <= k => {}
            _ => best = Some((k, v, retained)),
        }
    }
    let (_, v, retained) = best.expect("some subset must satisfy the KKT conditions");
    (v, retained)
}

/// Deterministic xorshift generator so oracle data does not depend on crate
/// versions of rand.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}
