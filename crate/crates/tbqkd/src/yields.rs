//! Exact yields of Fock-projector observables for phase-randomized coherent sources.
//!
//! Every observed yield has the form `Y(mu) = exp(-kappa eta mu) P(mu)` with `P` a
//! polynomial of degree at most four, so per-photon yields follow exactly from
//! `y_k = k! [mu^k] exp(mu) Y(mu)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::specfun::{binomial, factorial};

/// Source configuration: key-basis emission or a two-mode coherent state with relative phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceConfig {
    Z,
    Phi0,
    Phi90,
    Phi180,
    Phi270,
}

impl SourceConfig {
    pub const ALL: [SourceConfig; 5] =
        [SourceConfig::Z, SourceConfig::Phi0, SourceConfig::Phi90, SourceConfig::Phi180, SourceConfig::Phi270];
    pub const PHASES: [SourceConfig; 4] = [SourceConfig::Phi0, SourceConfig::Phi90, SourceConfig::Phi180, SourceConfig::Phi270];

    /// Relative phase of the second mode, `None` for the key basis.
    pub fn phase(self) -> Option<f64> {
        match self {
            SourceConfig::Z => None,
            SourceConfig::Phi0 => Some(0.0),
            SourceConfig::Phi90 => Some(0.5 * PI),
            SourceConfig::Phi180 => Some(PI),
            SourceConfig::Phi270 => Some(1.5 * PI),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            SourceConfig::Z => "Z",
            SourceConfig::Phi0 => "phi0",
            SourceConfig::Phi90 => "phi90",
            SourceConfig::Phi180 => "phi180",
            SourceConfig::Phi270 => "phi270",
        }
    }
}

impl fmt::Display for SourceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for SourceConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SourceConfig::ALL.into_iter().find(|c| c.id() == s).ok_or_else(|| Error::Unsupported(format!("source config '{s}'")))
    }
}

/// Two-mode observables used for parameter estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observable {
    P00,
    P01,
    P10,
    P11,
    P02,
    P20,
    Psi1Plus,
    Psi1Minus,
    Psi2Plus,
    Psi2Minus,
    /// `|01><01| + |10><10|`
    OnePhoton,
    /// `|02><02| + |20><20|`
    TwoPhotonSplit,
}

/// One term `coef * <ab|rho|cd>` of an observable's expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockTerm {
    pub coef: f64,
    pub bra: (usize, usize),
    pub ket: (usize, usize),
}

impl Observable {
    pub const ALL: [Observable; 12] = [
        Observable::P00,
        Observable::P01,
        Observable::P10,
        Observable::P11,
        Observable::P02,
        Observable::P20,
        Observable::Psi1Plus,
        Observable::Psi1Minus,
        Observable::Psi2Plus,
        Observable::Psi2Minus,
        Observable::OnePhoton,
        Observable::TwoPhotonSplit,
    ];

    /// The projectors that parameter estimation measures directly.
    pub const PROJECTORS: [Observable; 10] = [
        Observable::P00,
        Observable::P01,
        Observable::P10,
        Observable::P11,
        Observable::Psi1Plus,
        Observable::Psi1Minus,
        Observable::Psi2Plus,
        Observable::Psi2Minus,
        Observable::P02,
        Observable::P20,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Observable::P00 => "00",
            Observable::P01 => "01",
            Observable::P10 => "10",
            Observable::P11 => "11",
            Observable::P02 => "02",
            Observable::P20 => "20",
            Observable::Psi1Plus => "psi1+",
            Observable::Psi1Minus => "psi1-",
            Observable::Psi2Plus => "psi2+",
            Observable::Psi2Minus => "psi2-",
            Observable::OnePhoton => "01+10",
            Observable::TwoPhotonSplit => "02+20",
        }
    }

    /// Total photon number of the subspace the observable lives in.
    pub fn photon_number(self) -> usize {
        match self {
            Observable::P00 => 0,
            Observable::P01 | Observable::P10 | Observable::Psi1Plus | Observable::Psi1Minus | Observable::OnePhoton => 1,
            _ => 2,
        }
    }

    pub fn terms(self) -> Vec<FockTerm> {
        let diag = |a: usize, b: usize| FockTerm { coef: 1.0, bra: (a, b), ket: (a, b) };
        let cat = |a: (usize, usize), b: (usize, usize), sign: f64| {
            vec![
                FockTerm { coef: 0.5, bra: a, ket: a },
                FockTerm { coef: 0.5, bra: b, ket: b },
                FockTerm { coef: 0.5 * sign, bra: a, ket: b },
                FockTerm { coef: 0.5 * sign, bra: b, ket: a },
            ]
        };
        match self {
            Observable::P00 => vec![diag(0, 0)],
            Observable::P01 => vec![diag(0, 1)],
            Observable::P10 => vec![diag(1, 0)],
            Observable::P11 => vec![diag(1, 1)],
            Observable::P02 => vec![diag(0, 2)],
            Observable::P20 => vec![diag(2, 0)],
            Observable::Psi1Plus => cat((0, 1), (1, 0), 1.0),
            Observable::Psi1Minus => cat((0, 1), (1, 0), -1.0),
            Observable::Psi2Plus => cat((0, 2), (2, 0), 1.0),
            Observable::Psi2Minus => cat((0, 2), (2, 0), -1.0),
            Observable::OnePhoton => vec![diag(0, 1), diag(1, 0)],
            Observable::TwoPhotonSplit => vec![diag(0, 2), diag(2, 0)],
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Observable::ALL.into_iter().find(|o| o.id() == s).ok_or_else(|| Error::Unsupported(format!("observable '{s}'")))
    }
}

/// `Y(mu) = exp(-rate * mu) * sum_i coeffs[i] mu^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldCurve {
    pub rate: f64,
    pub coeffs: Vec<f64>,
}

impl YieldCurve {
    pub fn eval(&self, mu: f64) -> f64 {
        let poly = self.coeffs.iter().rev().fold(0.0, |acc, c| acc * mu + c);
        (-self.rate * mu).exp() * poly
    }

    /// Yield conditioned on the source emitting exactly `k` photons.
    pub fn per_photon(&self, k: usize) -> f64 {
        let s = 1.0 - self.rate;
        let kf = factorial(k);
        self.coeffs.iter().enumerate().take(k + 1).map(|(i, c)| c * kf / factorial(k - i) * s.powi((k - i) as i32)).sum()
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Polynomial part (in `mu`) of the single-mode element `<a|rho|c>` without the
/// `kappa exp(-kappa |alpha|^2)`, phase and `(kappa |alpha|)^{|a-c|}` factors;
/// `weight` is the share of `eta * mu` the mode carries.
fn mode_poly(a: usize, c: usize, kappa: f64, weight: f64) -> Vec<f64> {
    let (hi, lo) = if a >= c { (a, c) } else { (c, a) };
    let norm = (factorial(lo) / factorial(hi)).sqrt();
    (0..=lo)
        .map(|j| norm * binomial(hi, lo - j) * (kappa * kappa * weight).powi(j as i32) * (1.0 - kappa).powi((lo - j) as i32) / factorial(j))
        .collect()
}

/// Exact yield curve of `obs` for source `config` through `channel`.
pub fn yield_curve(config: SourceConfig, obs: Observable, channel: &ChannelParams) -> Result<YieldCurve> {
    channel.validate()?;
    let eta = channel.eta();
    let kappa = channel.kappa();
    let delta = channel.misalignment_delta;
    // (weight of the key-bit branch, intensity share of mode 1, of mode 2, relative phase)
    let branches: Vec<(f64, f64, f64, f64)> = match config.phase() {
        None => vec![(0.5, 0.0, 1.0, 0.0), (0.5, 1.0, 0.0, 0.0)],
        Some(phi) => vec![(1.0, 0.5, 0.5, phi)],
    };
    let mut coeffs = vec![0.0; 5];
    for (bw, s1, s2, phi) in branches {
        for term in obs.terms() {
            let (a, b) = term.bra;
            let (c, d) = term.ket;
            if a + b != c + d {
                continue;
            }
            let t = a.abs_diff(c);
            let shares = (s1 * s2).powf(0.5 * t as f64);
            if t > 0 && shares == 0.0 {
                continue;
            }
            // Phase of <ab|rho|cd> after averaging the common phase: exp(i (b-d)(phi + delta)).
            let phase = ((b as f64 - d as f64) * (phi + delta)).cos();
            let scale = bw * term.coef * phase * kappa * kappa * kappa.powi(2 * t as i32) * shares * eta.powi(t as i32);
            let mut p = poly_mul(&mode_poly(a, c, kappa, eta * s1), &mode_poly(b, d, kappa, eta * s2));
            p.splice(0..0, std::iter::repeat_n(0.0, t));
            for (i, v) in p.iter().enumerate() {
                coeffs[i] += scale * v;
            }
        }
    }
    Ok(YieldCurve { rate: kappa * eta, coeffs })
}

/// Expectation of `obs` for the source `config` at intensity `mu`.
pub fn observed_yield(config: SourceConfig, obs: Observable, mu: f64, channel: &ChannelParams) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("intensity must be >= 0, got {mu}")));
    }
    Ok(yield_curve(config, obs, channel)?.eval(mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::poisson_unchecked;

    #[test]
    fn vacuum_source_vacuum_projector() {
        let ch = ChannelParams::ideal(0.0);
        assert_eq!(observed_yield(SourceConfig::Z, Observable::P00, 0.0, &ch).unwrap(), 1.0);
    }

    #[test]
    fn key_basis_photon_statistics_are_poissonian() {
        let ch = ChannelParams::ideal(0.0);
        for mu in [0.1, 0.7, 2.3] {
            let y = observed_yield(SourceConfig::Z, Observable::OnePhoton, mu, &ch).unwrap();
            assert!((y - poisson_unchecked(mu, 1)).abs() < 1e-14);
            let y2 = observed_yield(SourceConfig::Z, Observable::TwoPhotonSplit, mu, &ch).unwrap();
            assert!((y2 - poisson_unchecked(mu, 2)).abs() < 1e-14);
        }
    }

    #[test]
    fn cat_states_from_relative_phase() {
        let ch = ChannelParams::ideal(0.0);
        let mu = 0.8;
        let pr1 = poisson_unchecked(mu, 1);
        let plus0 = observed_yield(SourceConfig::Phi0, Observable::Psi1Plus, mu, &ch).unwrap();
        let minus0 = observed_yield(SourceConfig::Phi0, Observable::Psi1Minus, mu, &ch).unwrap();
        let minus_pi = observed_yield(SourceConfig::Phi180, Observable::Psi1Minus, mu, &ch).unwrap();
        assert!((plus0 - pr1).abs() < 1e-14);
        assert!(minus0.abs() < 1e-15);
        assert!((minus_pi - pr1).abs() < 1e-14);
    }

    #[test]
    fn per_photon_yields_of_identity_channel() {
        let ch = ChannelParams::ideal(0.0);
        let curve = yield_curve(SourceConfig::Z, Observable::OnePhoton, &ch).unwrap();
        assert!((curve.per_photon(1) - 1.0).abs() < 1e-15);
        for k in [0, 2, 3, 7] {
            assert!(curve.per_photon(k).abs() < 1e-15);
        }
    }

    #[test]
    fn ids_round_trip() {
        for o in Observable::ALL {
            assert_eq!(o.id().parse::<Observable>().unwrap(), o);
        }
        for c in SourceConfig::ALL {
            assert_eq!(c.id().parse::<SourceConfig>().unwrap(), c);
        }
    }
}
