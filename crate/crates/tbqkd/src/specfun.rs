//! Special functions and the post-selection integrals of the key map.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest Hermite / Laguerre order the recurrences accept.
pub const MAX_ORDER: usize = 24;

/// Width of the outer integration panel beyond the threshold.
const TAIL_SPAN: f64 = 12.0;

/// Highest photon number for which acceptance integrals are tabulated.
pub const MAX_TAG: usize = 6;

fn check_order(n: usize) -> Result<()> {
    if n > MAX_ORDER {
        Err(Error::OrderOverflow { order: n, max: MAX_ORDER })
    } else {
        Ok(())
    }
}

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn hermite(n: usize, x: f64) -> Result<f64> {
    check_order(n)?;
    let (mut h0, mut h1) = (1.0, 2.0 * x);
    if n == 0 {
        return Ok(h0);
    }
    for k in 1..n {
        let h2 = 2.0 * x * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    Ok(h1)
}

/// Generalized Laguerre polynomial `L_n^d(x)`.
pub fn generalized_laguerre(n: usize, d: usize, x: f64) -> Result<f64> {
    check_order(n)?;
    check_order(d)?;
    Ok(laguerre_unchecked(n, d, x))
}

pub(crate) fn laguerre_unchecked(n: usize, d: usize, x: f64) -> f64 {
    let a = d as f64;
    let (mut l0, mut l1) = (1.0, 1.0 + a - x);
    if n == 0 {
        return l0;
    }
    for k in 1..n {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 + a - x) * l1 - (kf + a) * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// `ln(m!)`.
pub fn ln_factorial(m: usize) -> f64 {
    (2..=m).map(|k| (k as f64).ln()).sum()
}

pub fn factorial(m: usize) -> f64 {
    (2..=m).map(|k| k as f64).product()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Poisson probability `e^{-mu} mu^m / m!`, evaluated in log space.
pub fn poisson(mu: f64, m: usize) -> Result<f64> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("poisson mean must be finite and >= 0, got {mu}")));
    }
    Ok(poisson_unchecked(mu, m))
}

pub(crate) fn poisson_unchecked(mu: f64, m: usize) -> f64 {
    if mu == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    (-mu + m as f64 * mu.ln() - ln_factorial(m)).exp()
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("binary entropy needs p in [0,1], got {p}")));
    }
    Ok(h2(p))
}

pub(crate) fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Coordinate wavefunction of the Fock state `|n>` in the unit-vacuum-variance convention,
/// so that `psi_0(q)^2` is the standard normal density.
pub fn fock_wavefunction(n: usize, q: f64) -> Result<f64> {
    check_order(n)?;
    Ok(psi_unchecked(n, q))
}

pub(crate) fn psi_unchecked(n: usize, q: f64) -> f64 {
    // Normalized oscillator recurrence in x = q/sqrt(2); avoids the 2^n n! overflow.
    let x = q / SQRT_2;
    let scale = 2f64.powf(-0.25);
    let mut p0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if n == 0 {
        return scale * p0;
    }
    let mut p1 = SQRT_2 * x * p0;
    for k in 1..n {
        let kf = k as f64;
        let p2 = (2.0 / (kf + 1.0)).sqrt() * x * p1 - (kf / (kf + 1.0)).sqrt() * p0;
        p0 = p1;
        p1 = p2;
    }
    scale * p1
}

/// Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
    }
}

fn gl20() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(20))
}

/// Adaptive Gauss-Legendre quadrature by panel bisection.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let rule = gl20();
    let mut budget = 20_000usize;
    let whole = rule.integrate(&f, a, b);
    adapt(&f, rule, a, b, whole, tol, 0, &mut budget)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    budget: &mut usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = rule.integrate(f, a, m);
    let right = rule.integrate(f, m, b);
    if (left + right - whole).abs() <= tol {
        return Ok(left + right);
    }
    if depth >= 40 || *budget == 0 {
        return Err(Error::Numeric(format!("adaptive quadrature did not converge on [{a}, {b}]")));
    }
    *budget -= 1;
    Ok(adapt(f, rule, a, m, left, 0.5 * tol, depth + 1, budget)? + adapt(f, rule, m, b, right, 0.5 * tol, depth + 1, budget)?)
}

/// Which factor multiplies the vacuum gain in the reverse-reconciliation rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VacuumFactor {
    /// `2 ∫_{R0} psi_0^2(q1) psi_0^2(q2)`: the two-mode vacuum's acceptance probability.
    #[default]
    Physical,
    /// `2 ∫_{R0} psi_0^2(q1) psi_1^2(q2)`, the printed variant, opt-in only.
    Printed,
}

/// Acceptance integrals of the key map at threshold `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCoefficients {
    pub tau: f64,
    pub c1: f64,
    pub c2_02: f64,
    pub c2_11: f64,
    pub vac_accept: f64,
    /// `∫_{-tau}^{tau} psi_n^2` for n = 0..=MAX_TAG.
    pub inside: [f64; MAX_TAG + 1],
    /// `∫_{|q|>tau} psi_n^2` for n = 0..=MAX_TAG.
    pub outside: [f64; MAX_TAG + 1],
}

impl RegionCoefficients {
    /// Acceptance of `|0m>` or `|m0>` under either key decision.
    pub fn tag(&self, m: usize) -> f64 {
        assert!(m <= MAX_TAG, "tag {m} above {MAX_TAG}");
        match m {
            0 => 2.0 * self.inside[0] * self.outside[0],
            _ => self.inside[0] * self.outside[m] + self.inside[m] * self.outside[0],
        }
    }
}

fn density(n: usize) -> impl Fn(f64) -> f64 {
    move |q| {
        let p = psi_unchecked(n, q);
        p * p
    }
}

/// Computes `c1`, `c2^{02}`, `c2^{11}` and the vacuum acceptance factor.
pub fn region_coefficients(tau: f64, vacuum: VacuumFactor) -> Result<RegionCoefficients> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("threshold must be positive and finite, got {tau}")));
    }
    let mut inside = [0.0; MAX_TAG + 1];
    let mut outside = [0.0; MAX_TAG + 1];
    for n in 0..=MAX_TAG {
        // Symmetric integrands: integrate the positive half and double.
        inside[n] = 2.0 * integrate_adaptive(density(n), 0.0, tau, 1e-14)?;
        outside[n] = 2.0 * integrate_adaptive(density(n), tau, tau + TAIL_SPAN, 1e-15)?;
    }
    let (i, o) = (&inside, &outside);
    let c1 = i[0] * o[1] + i[1] * o[0];
    let c2_02 = i[0] * o[2] + i[2] * o[0];
    let c2_11 = 2.0 * i[1] * o[1];
    let vac_accept = match vacuum {
        VacuumFactor::Physical => 2.0 * i[0] * o[0],
        VacuumFactor::Printed => 2.0 * i[0] * o[1],
    };
    Ok(RegionCoefficients { tau, c1, c2_02, c2_11, vac_accept, inside, outside })
}

/// Probability that a unit-variance vacuum quadrature falls outside `[-tau, tau]`.
pub fn vacuum_exceed_prob(tau: f64) -> f64 {
    2.0 * normal_cdf(-tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite(0, 3.7).unwrap(), 1.0);
        assert_eq!(hermite(1, 2.0).unwrap(), 4.0);
        let x: f64 = 1.3;
        let expansion = 32.0 * x.powi(5) - 160.0 * x.powi(3) + 120.0 * x;
        assert!((hermite(5, x).unwrap() - expansion).abs() < 1e-10);
        assert!(matches!(hermite(25, 1.0), Err(Error::OrderOverflow { .. })));
    }

    #[test]
    fn laguerre_against_finite_sum() {
        assert_eq!(generalized_laguerre(0, 3, 5.0).unwrap(), 1.0);
        assert!((generalized_laguerre(1, 0, 2.0).unwrap() + 1.0).abs() < 1e-15);
        let (n, d, x) = (3usize, 2usize, 0.7f64);
        let sum: f64 = (0..=n).map(|k| (-1f64).powi(k as i32) * binomial(n + d, n - k) * x.powi(k as i32) / factorial(k)).sum();
        assert!((generalized_laguerre(n, d, x).unwrap() - sum).abs() < 1e-13);
        assert!(generalized_laguerre(3, 30, 1.0).is_err());
    }

    #[test]
    fn poisson_values() {
        assert_eq!(poisson(0.0, 0).unwrap(), 1.0);
        let direct = (-1.487f64).exp() * 1.487f64.powi(2) / 2.0;
        assert!((poisson(1.487, 2).unwrap() - direct).abs() < 1e-14);
        assert!((direct - 0.2499).abs() < 1e-4);
        assert!(poisson(-0.1, 1).is_err());
        let total: f64 = (0..60).map(|m| poisson(3.3, m).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // 0.1052: high-precision value computed with mpmath at 30 digits.
        assert!((binary_entropy(0.1052).unwrap() - 0.485_265_732_536_199_7).abs() < 1e-13);
        assert!(binary_entropy(1.2).is_err());
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let rule = GaussLegendre::new(7);
        let v = rule.integrate(&|x: f64| x.powi(12) + 3.0 * x.powi(5), -1.0, 2.0);
        let exact = (2f64.powi(13) + 1.0) / 13.0 + 3.0 * (64.0 - 1.0) / 6.0;
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn vacuum_tail_probability() {
        assert!((vacuum_exceed_prob(1.645) - 0.0999).abs() < 2e-4);
        let c = region_coefficients(1.645, VacuumFactor::Physical).unwrap();
        // erfc(1.645/sqrt 2) from mpmath at 30 digits.
        assert!((c.outside[0] - 0.099_969_811_078_242_73).abs() < 1e-15);
        assert!((c.outside[0] - vacuum_exceed_prob(1.645)).abs() < 1e-10);
    }
}
