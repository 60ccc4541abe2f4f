//! Thermal-loss channel statistics for the time-bin protocol.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{binomial, factorial, normal_cdf, poisson_unchecked, RegionCoefficients, MAX_TAG};

/// Transmittance at or above this is treated as a lossless channel.
pub const UNIT_ETA: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub distance_km: f64,
    pub attenuation_db_per_km: f64,
    pub detector_efficiency: f64,
    /// Excess noise referred to the channel output, in shot-noise units.
    pub excess_noise_xi: f64,
    /// Phase misalignment between the two time bins, radians.
    pub misalignment_delta: f64,
    /// Photon-number cutoff of the thermal-noise decomposition.
    pub cutoff_nc: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            distance_km: 0.0,
            attenuation_db_per_km: 0.2,
            detector_efficiency: 1.0,
            excess_noise_xi: 0.0,
            misalignment_delta: 0.0,
            cutoff_nc: 3,
        }
    }
}

impl ChannelParams {
    pub fn ideal(distance_km: f64) -> Self {
        ChannelParams { distance_km, ..Default::default() }
    }

    pub fn practical(distance_km: f64, xi: f64, delta: f64) -> Self {
        ChannelParams { distance_km, excess_noise_xi: xi, misalignment_delta: delta, ..Default::default() }
    }

    pub fn eta(&self) -> f64 {
        self.detector_efficiency * 10f64.powf(-self.attenuation_db_per_km * self.distance_km / 10.0)
    }

    pub fn kappa(&self) -> f64 {
        2.0 / (2.0 + self.excess_noise_xi)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.distance_km >= 0.0 && self.distance_km.is_finite()) {
            return bad("distance_km must be finite and >= 0");
        }
        if !(self.attenuation_db_per_km >= 0.0 && self.attenuation_db_per_km.is_finite()) {
            return bad("attenuation_db_per_km must be finite and >= 0");
        }
        if !(self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0) {
            return bad("detector_efficiency must lie in (0, 1]");
        }
        if !(self.excess_noise_xi >= 0.0 && self.excess_noise_xi.is_finite()) {
            return bad("excess_noise_xi must be finite and >= 0");
        }
        if !self.misalignment_delta.is_finite() {
            return bad("misalignment_delta must be finite");
        }
        if !(self.eta() > 0.0) {
            return bad("transmittance underflows to zero");
        }
        Ok(())
    }

    /// Mean thermal photon number of the environment, `xi / (2(1 - eta))`.
    ///
    /// At unit transmittance the environment is not coupled in and no noise
    /// photons are injected; the excess noise then only widens the quadratures.
    pub fn thermal_mean(&self) -> f64 {
        let eta = self.eta();
        if self.excess_noise_xi == 0.0 || eta >= UNIT_ETA {
            0.0
        } else {
            self.excess_noise_xi / (2.0 * (1.0 - eta))
        }
    }

    /// Thermal weights `P_th(k)` for `k = 0..=cutoff_nc`.
    pub fn thermal_weights(&self) -> Vec<f64> {
        thermal_weights(self.thermal_mean(), self.cutoff_nc)
    }
}

pub fn thermal_weights(kbar: f64, nc: usize) -> Vec<f64> {
    (0..=nc)
        .map(|k| {
            if kbar == 0.0 {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (kbar / (kbar + 1.0)).powi(k as i32) / (kbar + 1.0)
            }
        })
        .collect()
}

/// Concatenation of two thermal channels `(eta, xi)` then `(eta', xi')`.
pub fn compose_channels(first: (f64, f64), second: (f64, f64)) -> (f64, f64) {
    let (eta, xi) = first;
    let (eta2, xi2) = second;
    (eta * eta2, eta2 * xi + xi2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZStats {
    pub q_z: f64,
    pub e_z: f64,
}

const PHASE_POINTS: usize = 512;
const PHASE_POINTS_MAX: usize = 1 << 16;

fn trapezoid_periodic<F: Fn(f64) -> f64>(f: &F, n: usize) -> f64 {
    (0..n).map(|j| f(2.0 * PI * j as f64 / n as f64)).sum::<f64>() / n as f64
}

/// Phase average over `[0, 2pi)` with a halved-grid consistency check.
fn phase_average<F: Fn(f64) -> f64>(f: F) -> Result<f64> {
    let mut n = PHASE_POINTS;
    let mut coarse = trapezoid_periodic(&f, n / 2);
    loop {
        let fine = trapezoid_periodic(&f, n);
        if (fine - coarse).abs() <= 1e-13 * fine.abs().max(1e-300) + 1e-300 {
            return Ok(fine);
        }
        if n >= PHASE_POINTS_MAX {
            return Err(Error::Numeric("phase average did not converge".into()));
        }
        coarse = fine;
        n *= 2;
    }
}

/// Acceptance probability and bit-error rate of the key-generation rounds.
pub fn z_gain_and_error(mu: f64, eta: f64, xi: f64, tau: f64) -> Result<ZStats> {
    if !(mu >= 0.0) || !(tau > 0.0) || !(xi >= 0.0) || !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("z statistics need mu>=0, tau>0, xi>=0, eta in (0,1]; got mu={mu} tau={tau} xi={xi} eta={eta}")));
    }
    let s = (1.0 + xi).sqrt();
    let p_in = |m: f64| normal_cdf((tau - m) / s) - normal_cdf((-tau - m) / s);
    let p_out = |m: f64| normal_cdf((-tau - m) / s) + normal_cdf((m - tau) / s);
    let amp = 2.0 * (eta * mu).sqrt();
    let sig_in = phase_average(|t| p_in(amp * t.cos()))?;
    let sig_out = phase_average(|t| p_out(amp * t.cos()))?;
    let corr = p_in(0.0) * sig_out;
    let err = p_out(0.0) * sig_in;
    let q_z = corr + err;
    if !(q_z > 0.0) {
        return Err(Error::Numeric(format!("zero key-round acceptance at tau={tau}")));
    }
    Ok(ZStats { q_z, e_z: err / q_z })
}

/// Probability that both received modes are vacuum in a key-generation round.
pub fn vacuum_receive_prob(mu: f64, eta: f64, xi: f64) -> f64 {
    let kappa = 2.0 / (2.0 + xi);
    kappa * kappa * (-kappa * eta * mu).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalTags {
    pub q11: f64,
    pub e11: f64,
    pub q22: f64,
    pub e22: f64,
}

struct TagInputs {
    mu: f64,
    eta: f64,
    delta: f64,
    weights: Vec<f64>,
}

impl TagInputs {
    fn new(mu: f64, channel: &ChannelParams) -> Result<Self> {
        channel.validate()?;
        if !(mu >= 0.0) {
            return Err(Error::Domain(format!("intensity must be >= 0, got {mu}")));
        }
        Ok(TagInputs { mu, eta: channel.eta(), delta: channel.misalignment_delta, weights: channel.thermal_weights() })
    }

    fn sum<F: Fn(f64, f64) -> f64>(&self, term: F) -> f64 {
        let mut acc = 0.0;
        for (k, pk) in self.weights.iter().enumerate() {
            for (l, pl) in self.weights.iter().enumerate() {
                if *pk == 0.0 || *pl == 0.0 {
                    continue;
                }
                acc += pk * pl * term(k as f64, l as f64);
            }
        }
        acc
    }
}

fn q11_term(c1: f64, pr1: f64, eta: f64, k: f64, l: f64) -> f64 {
    let b = 1.0 - eta;
    c1 * pr1 * eta.powf(k + l - 1.0) * (((k + 1.0) * eta - k).powi(2) + l * (k + 1.0) * b * b)
}

fn e11_numerator_term(c1: f64, eta: f64, delta: f64, k: f64, l: f64) -> f64 {
    let b = 1.0 - eta;
    c1 / 4.0 * eta.powf(k + l - 1.0) * b * b * (k * k + l * l + k + l) + c1 * (delta / 2.0).sin().powi(2)
}

fn q22_02_half(c02: f64, pr2: f64, eta: f64, k: f64, l: f64) -> f64 {
    let b = 1.0 - eta;
    let first = eta * eta - 2.0 * k * eta * b + 0.5 * k * (k - 1.0) * b * b;
    0.5 * c02 * pr2 * eta.powf(k + l - 2.0) * (first * first + 0.25 * l * l * (l - 1.0).powi(2) * b.powi(4))
}

fn q22_11_half(c11: f64, pr2: f64, eta: f64, k: f64, l: f64) -> f64 {
    let b = 1.0 - eta;
    let inner = (2.0 * (k + 1.0) * l).sqrt() * eta * b - (0.5 * k * l * (k + 1.0)).sqrt() * b * b;
    0.5 * c11 * pr2 * eta.powf(k + l - 2.0) * inner * inner
}

fn e22_02_term(c02: f64, eta: f64, delta: f64, k: f64, l: f64) -> f64 {
    let b = 1.0 - eta;
    let inner = 2.0 * (k - l) * b * eta + (k * k - k - l * l - l) * b * b;
    c02 / 4.0 * eta.powf(k + l - 2.0) * inner * inner + c02 * delta.sin().powi(2)
}

fn e22_11_term(c11: f64, eta: f64, k: f64, l: f64) -> f64 {
    let b = 1.0 - eta;
    c11 * eta.powf(k + l - 2.0) * b * b * (l * (k + 1.0) * (eta - 0.5 * k * b).powi(2) + k * (l + 1.0) * (eta - 0.5 * l * b).powi(2))
}

/// Single-photon gain summed over injected noise photons.
pub fn tagged_gain_q11(mu: f64, channel: &ChannelParams, coeffs: &RegionCoefficients) -> Result<f64> {
    let t = TagInputs::new(mu, channel)?;
    let pr1 = poisson_unchecked(mu, 1);
    Ok(t.sum(|k, l| q11_term(coeffs.c1, pr1, t.eta, k, l)))
}

/// Single-photon phase-error rate, including the misalignment term.
///
/// The closed form divides noise and misalignment terms by the tagged gain and can exceed 1
/// when that gain is tiny; the result is capped at 1, which is still a valid upper bound.
pub fn tagged_error_e11(mu: f64, channel: &ChannelParams, coeffs: &RegionCoefficients) -> Result<f64> {
    let t = TagInputs::new(mu, channel)?;
    let q11 = tagged_gain_q11(mu, channel, coeffs)?;
    if !(q11 > 0.0) {
        return Err(Error::UndefinedRate("single-photon gain is zero".into()));
    }
    let pr1 = poisson_unchecked(t.mu, 1);
    Ok((pr1 / q11 * t.sum(|k, l| e11_numerator_term(coeffs.c1, t.eta, t.delta, k, l))).min(1.0))
}

/// Two-photon gain over the `|02>,|20>` and `|11>` acceptance sectors.
pub fn tagged_gain_q22(mu: f64, channel: &ChannelParams, coeffs: &RegionCoefficients) -> Result<f64> {
    let t = TagInputs::new(mu, channel)?;
    let pr2 = poisson_unchecked(mu, 2);
    let (c02, c11, eta) = (coeffs.c2_02, coeffs.c2_11, t.eta);
    Ok(t.sum(|k, l| {
        q22_02_half(c02, pr2, eta, k, l)
            + q22_02_half(c02, pr2, eta, l, k)
            + q22_11_half(c11, pr2, eta, k, l)
            + q22_11_half(c11, pr2, eta, l, k)
    }))
}

/// Two-photon phase-error rate, capped at 1 like [`tagged_error_e11`].
pub fn tagged_error_e22(mu: f64, channel: &ChannelParams, coeffs: &RegionCoefficients) -> Result<f64> {
    let t = TagInputs::new(mu, channel)?;
    let q22 = tagged_gain_q22(mu, channel, coeffs)?;
    if !(q22 > 0.0) {
        return Err(Error::UndefinedRate("two-photon gain is zero".into()));
    }
    let pr2 = poisson_unchecked(mu, 2);
    let (c02, c11, eta, delta) = (coeffs.c2_02, coeffs.c2_11, t.eta, t.delta);
    Ok((pr2 / q22 * t.sum(|k, l| e22_02_term(c02, eta, delta, k, l) + e22_11_term(c11, eta, k, l))).min(1.0))
}

pub fn thermal_tags(mu: f64, channel: &ChannelParams, coeffs: &RegionCoefficients) -> Result<ThermalTags> {
    Ok(ThermalTags {
        q11: tagged_gain_q11(mu, channel, coeffs)?,
        e11: tagged_error_e11(mu, channel, coeffs)?,
        q22: tagged_gain_q22(mu, channel, coeffs)?,
        e22: tagged_error_e22(mu, channel, coeffs)?,
    })
}

/// Gain and phase-error rate of an `m >= 3` tag: only the noise-free `k = l = 0` term is kept.
pub fn higher_tag(m: usize, mu: f64, channel: &ChannelParams, coeffs: &RegionCoefficients) -> Result<(f64, f64)> {
    if !(3..=MAX_TAG).contains(&m) {
        return Err(Error::Unsupported(format!("higher tag model covers 3..={MAX_TAG}, got {m}")));
    }
    channel.validate()?;
    let p0 = channel.thermal_weights()[0];
    let c = coeffs.tag(m);
    let prm = poisson_unchecked(mu, m);
    let q = c * prm * channel.eta().powi(m as i32) * p0 * p0;
    if !(q > 0.0) {
        return Ok((0.0, 0.0));
    }
    let e = c * (m as f64 * channel.misalignment_delta / 2.0).sin().powi(2) * prm / q;
    Ok((q, e.min(1.0)))
}

/// General Fock element `<m|rho|n>` of a displaced thermal state with amplitude `alpha`
/// and `kappa = 1/(1 + nbar)`.
pub fn displaced_thermal_element(alpha: Complex64, kappa: f64, m: usize, n: usize) -> Complex64 {
    if m < n {
        return displaced_thermal_element(alpha, kappa, n, m).conj();
    }
    let s = alpha.norm_sqr();
    let d = m - n;
    let poly: f64 =
        (0..=n).map(|j| binomial(m, n - j) * (kappa * kappa * s).powi(j as i32) * (1.0 - kappa).powi((n - j) as i32) / factorial(j)).sum();
    let pre = kappa * (-kappa * s).exp() * (factorial(n) / factorial(m)).sqrt();
    (alpha * kappa).powi(d as i32) * (pre * poly)
}

/// Fock elements of the channel output for a coherent input `alpha` (amplitude after loss).
pub fn coherent_output_fock_element(alpha: Complex64, xi: f64, m: usize, n: usize) -> Result<Complex64> {
    if !(xi >= 0.0) {
        return Err(Error::Domain(format!("excess noise must be >= 0, got {xi}")));
    }
    let kappa = 2.0 / (2.0 + xi);
    let s = alpha.norm_sqr();
    let g = kappa * (-kappa * s).exp();
    let k2 = kappa * kappa;
    let v = match (m, n) {
        (0, 0) => Complex64::new(g, 0.0),
        (1, 1) => Complex64::new(g * (k2 * s + 1.0 - kappa), 0.0),
        (0, 1) => alpha.conj() * (kappa * g),
        (1, 0) => alpha * (kappa * g),
        (2, 2) => Complex64::new(g * (0.5 * k2 * k2 * s * s + 2.0 * (k2 - k2 * kappa) * s + (1.0 - kappa).powi(2)), 0.0),
        (0, 2) => alpha.conj().powi(2) * (k2 * g / 2f64.sqrt()),
        (2, 0) => alpha.powi(2) * (k2 * g / 2f64.sqrt()),
        _ => return Err(Error::Unsupported(format!("Fock element <{m}|rho|{n}>"))),
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{region_coefficients, VacuumFactor};

    fn coeffs(tau: f64) -> RegionCoefficients {
        region_coefficients(tau, VacuumFactor::Physical).unwrap()
    }

    #[test]
    fn composition_examples() {
        assert_eq!(compose_channels((1.0, 0.0), (0.7, 0.02)), (0.7, 0.02));
        assert_eq!(compose_channels((0.7, 0.02), (1.0, 0.0)), (0.7, 0.02));
        let (e, x) = compose_channels((0.8, 0.01), (0.5, 0.002));
        assert!((e - 0.4).abs() < 1e-15 && (x - 0.007).abs() < 1e-15);
    }

    #[test]
    fn vacuum_only_source_gives_half_error() {
        for tau in [0.3, 1.0, 2.5] {
            for eta in [0.1, 0.6, 1.0] {
                let z = z_gain_and_error(0.0, eta, 0.0, tau).unwrap();
                assert!((z.e_z - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vacuum_probability_limits() {
        assert!((vacuum_receive_prob(1.3, 0.5, 0.0) - (-0.65f64).exp()).abs() < 1e-15);
        assert_eq!(vacuum_receive_prob(0.0, 0.5, 0.0), 1.0);
        let eta = 10f64.powf(-0.4);
        let kappa = 2.0 / 2.001;
        let direct = kappa * kappa * (-2.0 * eta * 1.487 / 2.001f64).exp();
        assert!((vacuum_receive_prob(1.487, eta, 0.001) - direct).abs() < 1e-15);
    }

    #[test]
    fn noiseless_tags_reduce_to_leading_term() {
        let c = coeffs(1.641);
        let ch = ChannelParams::ideal(10.0);
        let eta = ch.eta();
        let mu = 0.9;
        let q11 = tagged_gain_q11(mu, &ch, &c).unwrap();
        assert!((q11 - c.c1 * poisson_unchecked(mu, 1) * eta).abs() < 1e-12);
        assert_eq!(tagged_error_e11(mu, &ch, &c).unwrap(), 0.0);
        let q22 = tagged_gain_q22(mu, &ch, &c).unwrap();
        assert!((q22 - c.c2_02 * poisson_unchecked(mu, 2) * eta * eta).abs() < 1e-12);
        assert_eq!(tagged_error_e22(mu, &ch, &c).unwrap(), 0.0);
    }

    #[test]
    fn misalignment_term_at_unit_transmittance() {
        let c = coeffs(1.641);
        let ch = ChannelParams { misalignment_delta: 5f64.to_radians(), ..ChannelParams::ideal(0.0) };
        let e = tagged_error_e11(1.0, &ch, &c).unwrap();
        assert!((e - 2.5f64.to_radians().sin().powi(2)).abs() < 1e-15);
        assert!((e - 0.0019).abs() < 1e-4);
    }

    #[test]
    fn thermal_cutoff_is_converged() {
        let c = coeffs(2.457);
        let mut ch = ChannelParams { excess_noise_xi: 1e-3, ..ChannelParams::ideal(10.0) };
        let lo = tagged_gain_q11(0.924, &ch, &c).unwrap();
        ch.cutoff_nc = 6;
        let hi = tagged_gain_q11(0.924, &ch, &c).unwrap();
        assert!(((hi - lo) / hi).abs() < 1e-6);
    }

    #[test]
    fn fock_elements_match_laguerre_form() {
        let alpha = Complex64::new(0.5, 0.0);
        for xi in [0.0, 0.01, 0.3] {
            let kappa = 2.0 / (2.0 + xi);
            for (m, n) in [(0, 0), (1, 1), (0, 1), (1, 0), (2, 2), (0, 2), (2, 0)] {
                let a = coherent_output_fock_element(alpha, xi, m, n).unwrap();
                let b = displaced_thermal_element(alpha, kappa, m, n);
                assert!((a - b).norm() < 1e-14, "({m},{n}) xi={xi}");
            }
        }
        assert!(coherent_output_fock_element(alpha, 0.0, 3, 1).is_err());
        assert_eq!(coherent_output_fock_element(Complex64::new(0.0, 0.0), 0.1, 0, 1).unwrap(), Complex64::new(0.0, 0.0));
    }
}
