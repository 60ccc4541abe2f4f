//! Secret key rates from photon-number-tagged statistics.

use serde::{Deserialize, Serialize};

use crate::channel::{
    higher_tag, tagged_error_e11, tagged_error_e22, tagged_gain_q11, tagged_gain_q22, vacuum_receive_prob, z_gain_and_error, ChannelParams,
};
use crate::error::{Error, Result};
use crate::specfun::{h2, poisson_unchecked, region_coefficients, RegionCoefficients, VacuumFactor, MAX_TAG};

/// Gain and phase-error rate of the rounds where `m` photons are sent and `m` accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub m: usize,
    pub gain: f64,
    pub phase_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TagStats {
    pub q_star_0: f64,
    pub tags: Vec<Tag>,
    pub q_z: f64,
    pub e_z: f64,
}

impl TagStats {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = unit(self.q_star_0)
            && unit(self.q_z)
            && unit(self.e_z)
            && self.tags.iter().all(|t| unit(t.gain) && unit(t.phase_error) && (t.gain * t.phase_error).is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("tag statistics outside [0, 1]".into()))
        }
    }

    pub fn gain(&self, m: usize) -> Option<f64> {
        self.tags.iter().find(|t| t.m == m).map(|t| t.gain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateInput {
    pub stats: TagStats,
    /// Reconciliation efficiency, `f >= 1`.
    pub f: f64,
    pub max_m: usize,
}

/// Key rate per channel use; `raw` may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRate {
    pub raw: f64,
}

impl KeyRate {
    pub fn clamped(self) -> f64 {
        self.raw.max(0.0)
    }
}

fn tagged_sum(input: &KeyRateInput) -> f64 {
    input.stats.tags.iter().filter(|t| t.m >= 1 && t.m <= input.max_m).map(|t| t.gain * (1.0 - h2(t.phase_error.min(0.5)))).sum()
}

fn cost(input: &KeyRateInput) -> f64 {
    input.f * input.stats.q_z * h2(input.stats.e_z)
}

/// Reverse-reconciliation rate: vacuum gain plus tagged privacy minus error-correction cost.
pub fn key_rate_reverse(input: &KeyRateInput) -> KeyRate {
    KeyRate { raw: input.stats.q_star_0 + tagged_sum(input) - cost(input) }
}

/// Forward-reconciliation rate: as the reverse rate without the vacuum gain.
pub fn key_rate_forward(input: &KeyRateInput) -> KeyRate {
    KeyRate { raw: tagged_sum(input) - cost(input) }
}

/// Repeaterless bound `-log2(1 - eta)`.
pub fn plob_bound(eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("PLOB bound needs eta in (0,1), got {eta}")));
    }
    Ok(-(-eta).ln_1p() / std::f64::consts::LN_2)
}

/// Rate of the `i`-photon protocol with exact tagged quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealRate {
    pub rate: KeyRate,
    pub stats: TagStats,
    /// Upper bound on the gain of the dropped tags, `Pr(m > i)`.
    pub truncation_bound: f64,
}

/// Builds tagged statistics from the thermal-channel closed forms.
pub fn ideal_tag_stats(i: usize, mu: f64, coeffs: &RegionCoefficients, channel: &ChannelParams) -> Result<TagStats> {
    if !(1..=MAX_TAG).contains(&i) {
        return Err(Error::Domain(format!("tag count must lie in 1..={MAX_TAG}, got {i}")));
    }
    channel.validate()?;
    let eta = channel.eta();
    let xi = channel.excess_noise_xi;
    let z = z_gain_and_error(mu, eta, xi, coeffs.tau)?;
    let q_star_0 = vacuum_receive_prob(mu, eta, xi) * coeffs.vac_accept;
    let mut tags = Vec::with_capacity(i);
    for m in 1..=i {
        let (gain, phase_error) = match m {
            1 => {
                let g = tagged_gain_q11(mu, channel, coeffs)?;
                (g, if g > 0.0 { tagged_error_e11(mu, channel, coeffs)? } else { 0.0 })
            }
            2 => {
                let g = tagged_gain_q22(mu, channel, coeffs)?;
                (g, if g > 0.0 { tagged_error_e22(mu, channel, coeffs)? } else { 0.0 })
            }
            _ => higher_tag(m, mu, channel, coeffs)?,
        };
        tags.push(Tag { m, gain, phase_error });
    }
    Ok(TagStats { q_star_0, tags, q_z: z.q_z, e_z: z.e_z })
}

pub fn i_photon_key_rate_with(i: usize, mu: f64, coeffs: &RegionCoefficients, channel: &ChannelParams, f: f64) -> Result<IdealRate> {
    let stats = ideal_tag_stats(i, mu, coeffs, channel)?;
    let truncation_bound = 1.0 - (0..=i).map(|m| poisson_unchecked(mu, m)).sum::<f64>();
    let rate = key_rate_reverse(&KeyRateInput { stats: stats.clone(), f, max_m: i });
    Ok(IdealRate { rate, stats, truncation_bound: truncation_bound.max(0.0) })
}

/// Reverse-reconciliation rate of the `i`-photon protocol with `f = 1`.
pub fn i_photon_key_rate(i: usize, mu: f64, tau: f64, channel: &ChannelParams) -> Result<IdealRate> {
    let coeffs = region_coefficients(tau, VacuumFactor::Physical)?;
    i_photon_key_rate_with(i, mu, &coeffs, channel, 1.0)
}
