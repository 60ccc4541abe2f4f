//! Run configuration: one TOML file, physical quantities carry their unit in the key name.

use serde::{Deserialize, Serialize};
use tbqkd::channel::ChannelParams;
use tbqkd::decoy::{ProtocolParams, DEFAULT_CUTOFF};
use tbqkd::optimizer::{default_tau_grid, logspace, Objective, SearchSpace};
use tbqkd::sim::SettingProbs;
use tbqkd::specfun::VacuumFactor;
use tbqkd::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub channel: ChannelSection,
    pub protocol: Option<ProtocolSection>,
    pub sweep: Option<SweepSection>,
    pub search: Option<SearchSection>,
    pub decoy: Option<DecoySection>,
    pub tomography: Option<TomographySection>,
    pub finite: Option<FiniteSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub attenuation_db_per_km: f64,
    pub detector_efficiency: f64,
    pub excess_noise_snu: f64,
    pub misalignment_deg: f64,
    pub thermal_cutoff_photons: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let d = ChannelParams::default();
        ChannelSection {
            attenuation_db_per_km: d.attenuation_db_per_km,
            detector_efficiency: d.detector_efficiency,
            excess_noise_snu: d.excess_noise_xi,
            misalignment_deg: 0.0,
            thermal_cutoff_photons: d.cutoff_nc,
        }
    }
}

impl ChannelSection {
    pub fn at(&self, distance_km: f64) -> Result<ChannelParams> {
        let ch = ChannelParams {
            distance_km,
            attenuation_db_per_km: self.attenuation_db_per_km,
            detector_efficiency: self.detector_efficiency,
            excess_noise_xi: self.excess_noise_snu,
            misalignment_delta: self.misalignment_deg.to_radians(),
            cutoff_nc: self.thermal_cutoff_photons,
        };
        ch.validate()?;
        Ok(ch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VacuumChoice {
    #[default]
    Physical,
    /// The printed psi_1^2 variant, kept under its published option name.
    #[serde(rename = "paper-verbatim-vacuum-factor", alias = "printed-vacuum-factor")]
    PrintedVacuumFactor,
}

impl From<VacuumChoice> for VacuumFactor {
    fn from(v: VacuumChoice) -> Self {
        match v {
            VacuumChoice::Physical => VacuumFactor::Physical,
            VacuumChoice::PrintedVacuumFactor => VacuumFactor::Printed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub mu_photons: f64,
    pub tau_snu: f64,
    #[serde(default)]
    pub nu1_photons: Option<f64>,
    #[serde(default)]
    pub nu2_photons: Option<f64>,
    #[serde(default = "two")]
    pub max_tag: usize,
    #[serde(default = "default_cutoff")]
    pub decoy_cutoff_photons: usize,
    #[serde(default = "one")]
    pub reconciliation_efficiency: f64,
    #[serde(default)]
    pub vacuum_factor: VacuumChoice,
}

fn two() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

fn default_cutoff() -> usize {
    DEFAULT_CUTOFF
}

impl ProtocolSection {
    /// Decoy protocol; both decoy intensities must be set.
    pub fn decoy(&self) -> Result<ProtocolParams> {
        let (Some(nu1), Some(nu2)) = (self.nu1_photons, self.nu2_photons) else {
            return Err(Error::Config("protocol.nu1_photons and protocol.nu2_photons are required here".into()));
        };
        let p =
            ProtocolParams { mu: self.mu_photons, nu1, nu2, tau: self.tau_snu, max_m: self.max_tag, cutoff_nc: self.decoy_cutoff_photons };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModel {
    /// Ideal i-photon protocol from the thermal-channel closed forms.
    Ideal,
    /// Infinite decoy levels: exact per-photon yields.
    Exact,
    /// Four-intensity decoy LP on exact observed yields.
    Decoy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub distances_km: Vec<f64>,
    pub model: RateModel,
    #[serde(default = "photons_default")]
    pub photons: Vec<usize>,
}

fn photons_default() -> Vec<usize> {
    vec![2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveChoice {
    Ideal,
    Decoy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub distances_km: Vec<f64>,
    pub objective: ObjectiveChoice,
    /// Photon tags: `i` for the ideal objective, the largest tag for the decoy objective.
    #[serde(default = "two")]
    pub photons: usize,
    #[serde(default = "mu_range")]
    pub mu_log10_range: [f64; 2],
    #[serde(default = "thirty")]
    pub mu_points: usize,
    #[serde(default)]
    pub tau_snu: Option<Vec<f64>>,
    #[serde(default)]
    pub nu1_photons: Option<Vec<f64>>,
    #[serde(default)]
    pub nu2_photons: Option<Vec<f64>>,
    #[serde(default)]
    pub refine_sweeps: usize,
}

fn mu_range() -> [f64; 2] {
    [-2.0, 1.0]
}

fn thirty() -> usize {
    30
}

impl SearchSection {
    pub fn space(&self, protocol: Option<&ProtocolSection>) -> Result<SearchSpace> {
        if self.mu_points == 0 {
            return Err(Error::Config("search.mu_points must be positive".into()));
        }
        let mut s = match self.objective {
            ObjectiveChoice::Ideal => SearchSpace::ideal(self.photons),
            ObjectiveChoice::Decoy => SearchSpace::decoy(self.photons),
        };
        s.mu = logspace(self.mu_log10_range[0], self.mu_log10_range[1], self.mu_points);
        s.tau = self.tau_snu.clone().unwrap_or_else(default_tau_grid);
        if let Objective::Decoy { .. } = s.objective {
            if let Some(v) = &self.nu1_photons {
                s.nu1 = v.clone();
            }
            if let Some(v) = &self.nu2_photons {
                s.nu2 = v.clone();
            }
        }
        s.refine_sweeps = self.refine_sweeps;
        if let Some(p) = protocol {
            s.f = p.reconciliation_efficiency;
            s.vacuum = p.vacuum_factor.into();
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoySection {
    pub distances_km: Vec<f64>,
    /// Observed yields to use instead of the channel model (first distance only).
    #[serde(default)]
    pub yield_table_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    #[serde(default)]
    pub distance_km: f64,
    pub rounds: usize,
    #[serde(default = "half")]
    pub intensity_photons: f64,
    /// Estimate from a quadrature-record file (`phi1,q1,phi2,q2`) instead of simulating.
    #[serde(default)]
    pub records_csv: Option<String>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiniteSimulation {
    /// i.i.d. counter sums; tomography rounds are sampled, key rounds drawn as binomials.
    #[default]
    Counters,
    /// Every round simulated in order, optionally written out.
    Rounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSection {
    pub distance_km: f64,
    pub rounds: u64,
    #[serde(default = "eps")]
    pub epsilon: f64,
    #[serde(default = "eps")]
    pub epsilon_pa: f64,
    #[serde(default = "quarter")]
    pub intensity_probs: [f64; 4],
    #[serde(default = "half")]
    pub alice_z_prob: f64,
    #[serde(default = "half")]
    pub bob_key_prob: f64,
    #[serde(default)]
    pub simulation: FiniteSimulation,
    #[serde(default)]
    pub write_rounds: bool,
}

fn eps() -> f64 {
    1e-10
}

fn quarter() -> [f64; 4] {
    [0.25; 4]
}

impl FiniteSection {
    pub fn settings(&self) -> Result<SettingProbs> {
        let s = SettingProbs { intensity: self.intensity_probs, alice_z: self.alice_z_prob, bob_key: self.bob_key_prob };
        s.validate()?;
        Ok(s)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config("configuration file is empty".into()));
        }
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn protocol(&self) -> Result<&ProtocolSection> {
        self.protocol.as_ref().ok_or_else(|| Error::Config("missing [protocol] section".into()))
    }
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| Error::Config(format!("missing [{name}] section")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_a_config_error() {
        assert!(RunConfig::parse(" \n").unwrap_err().is_config());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[channel]\ndistance = 3\n").unwrap_err().is_config());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::parse(
            "seed = 4\n[channel]\nexcess_noise_snu = 1e-3\nmisalignment_deg = 5.0\n[protocol]\nmu_photons = 0.924\ntau_snu = 2.457\nnu1_photons = 0.03\nnu2_photons = 1e-4\n",
        )
        .unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        assert!((c.channel.at(10.0).unwrap().misalignment_delta - 5f64.to_radians()).abs() < 1e-15);
        assert_eq!(c.protocol().unwrap().decoy().unwrap().nu2, 1e-4);
    }
}
