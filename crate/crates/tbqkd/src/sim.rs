//! Per-round simulation of the practical protocol over the honest thermal channel.

use std::io::{Read, Write};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::decoy::ProtocolParams;
use crate::error::{Error, Result};
use crate::tomo::{block_rng, sample_quadrature, TwoModeState, BLOCK};
use crate::yields::SourceConfig;

/// How Alice and Bob pick their settings each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingProbs {
    /// Probabilities of `[mu, nu1, nu2, 0]`.
    pub intensity: [f64; 4],
    /// Probability Alice prepares a key-basis state; the four phase configurations share the rest.
    pub alice_z: f64,
    /// Probability Bob decodes a key bit rather than doing tomography.
    pub bob_key: f64,
}

impl Default for SettingProbs {
    fn default() -> Self {
        SettingProbs { intensity: [0.25; 4], alice_z: 0.5, bob_key: 0.5 }
    }
}

impl SettingProbs {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.intensity.iter().sum();
        let ok = self.intensity.iter().all(|&p| (0.0..=1.0).contains(&p))
            && (sum - 1.0).abs() < 1e-9
            && (0.0..=1.0).contains(&self.alice_z)
            && (0.0..=1.0).contains(&self.bob_key);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid setting probabilities {self:?}")))
        }
    }

    pub fn config_prob(&self, config: SourceConfig) -> f64 {
        match config {
            SourceConfig::Z => self.alice_z,
            _ => 0.25 * (1.0 - self.alice_z),
        }
    }

    /// Probability that a round is a tomography round with intensity `a` and source `config`.
    pub fn test_prob(&self, a: usize, config: SourceConfig) -> f64 {
        self.intensity[a] * self.config_prob(config) * (1.0 - self.bob_key)
    }

    /// Probability that a round is a signal-intensity key round.
    pub fn key_prob(&self) -> f64 {
        self.intensity[0] * self.alice_z * self.bob_key
    }
}

/// One simulated round. Quadratures are rescaled by the detector efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Index into `[mu, nu1, nu2, 0]`.
    pub intensity_index: u8,
    pub config: SourceConfig,
    pub bob_key: bool,
    pub alice_bit: Option<u8>,
    pub phi1: f64,
    pub q1: f64,
    pub phi2: f64,
    pub q2: f64,
    pub bob_bit: Option<u8>,
}

/// Key map: bit 0 for `|q1| < tau < |q2|`, bit 1 for the mirror image, nothing otherwise.
pub fn decode(q1: f64, q2: f64, tau: f64) -> Option<u8> {
    match (q1.abs() < tau, q2.abs() < tau) {
        (true, false) => Some(0),
        (false, true) => Some(1),
        _ => None,
    }
}

/// Everything that determines the round distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundModel {
    pub channel: ChannelParams,
    pub protocol: ProtocolParams,
    pub settings: SettingProbs,
}

impl RoundModel {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.protocol.validate()?;
        self.settings.validate()
    }

    fn draw<R: Rng + ?Sized>(&self, round: u64, pick: &WeightedIndex<f64>, rng: &mut R) -> RoundRecord {
        let a = pick.sample(rng);
        let config =
            if rng.random::<f64>() < self.settings.alice_z { SourceConfig::Z } else { SourceConfig::PHASES[rng.random_range(0..4)] };
        let bob_key = rng.random::<f64>() < self.settings.bob_key;
        let mu = self.protocol.intensities()[a];
        let (modes, alice_bit) = TwoModeState::source(config, mu, &self.channel).emit(rng);
        // Key rounds use one LO for both time bins; tomography rounds randomize them separately.
        let phi1 = rng.random::<f64>() * std::f64::consts::PI;
        let phi2 = if bob_key { phi1 } else { rng.random::<f64>() * std::f64::consts::PI };
        let q1 = sample_quadrature(&modes[0], phi1, rng);
        let q2 = sample_quadrature(&modes[1], phi2, rng);
        let bob_bit = if bob_key { decode(q1, q2, self.protocol.tau) } else { None };
        RoundRecord { round, intensity_index: a as u8, config, bob_key, alice_bit, phi1, q1, phi2, q2, bob_bit }
    }

    /// Rounds of block `b`; block `b` covers rounds `b * BLOCK ..` and uses stream `b` of `seed`.
    pub fn block(&self, n: u64, b: u64, seed: u64) -> Vec<RoundRecord> {
        let pick = WeightedIndex::new(self.settings.intensity).expect("validated intensity probabilities");
        let mut rng = block_rng(seed, b);
        let start = b * BLOCK as u64;
        (start..n.min(start + BLOCK as u64)).map(|i| self.draw(i, &pick, &mut rng)).collect()
    }

    /// Streams `n` rounds to `visit` in round order. Blocks are generated in parallel batches,
    /// so the sequence depends only on `(seed, n)`.
    pub fn for_each_round<F: FnMut(&RoundRecord) -> Result<()>>(&self, n: u64, seed: u64, mut visit: F) -> Result<()> {
        self.validate()?;
        let blocks = n.div_ceil(BLOCK as u64);
        let batch = (rayon::current_num_threads() as u64).max(1) * 2;
        let mut b = 0;
        while b < blocks {
            let end = blocks.min(b + batch);
            let rounds: Vec<Vec<RoundRecord>> = (b..end).into_par_iter().map(|k| self.block(n, k, seed)).collect();
            for r in rounds.iter().flatten() {
                visit(r)?;
            }
            b = end;
        }
        Ok(())
    }
}

/// Shortest decimal form of `x` rounded to 9 significant digits.
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let r: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    r.to_string()
}

pub const ROUND_HEADER: [&str; 11] =
    ["round", "intensity_index", "config", "bob_basis", "alice_bit", "phi1", "q1", "phi2", "q2", "bob_bit", "intensity"];

fn opt_bit(b: Option<u8>) -> String {
    b.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row in [`ROUND_HEADER`] order; `mus` are the four intensities.
pub fn round_row(r: &RoundRecord, mus: &[f64; 4]) -> [String; 11] {
    [
        r.round.to_string(),
        r.intensity_index.to_string(),
        r.config.id().to_string(),
        if r.bob_key { "key" } else { "test" }.to_string(),
        opt_bit(r.alice_bit),
        sig9(r.phi1),
        sig9(r.q1),
        sig9(r.phi2),
        sig9(r.q2),
        opt_bit(r.bob_bit),
        sig9(mus[r.intensity_index as usize]),
    ]
}

/// Writes `n` rounds as CSV with header [`ROUND_HEADER`]; `bob_basis` is `key` or `test`,
/// and empty bit fields mean no bit.
pub fn simulate_protocol_rounds<W: Write>(model: &RoundModel, n: u64, seed: u64, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ROUND_HEADER)?;
    let mus = model.protocol.intensities();
    model.for_each_round(n, seed, |r| Ok(w.write_record(round_row(r, &mus))?))?;
    w.flush()?;
    Ok(())
}

/// Reads records written by [`simulate_protocol_rounds`].
pub fn read_round_records<R: Read>(reader: R) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let bad = |what: &str, v: &str| Error::Io(format!("bad {what} field '{v}' in round record"));
    let bit = |v: &str| -> Result<Option<u8>> {
        match v {
            "" => Ok(None),
            "0" => Ok(Some(0)),
            "1" => Ok(Some(1)),
            _ => Err(bad("bit", v)),
        }
    };
    let num = |v: &str| -> Result<f64> { v.parse().map_err(|_| bad("numeric", v)) };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != ROUND_HEADER.len() {
            return Err(Error::Io(format!("round record has {} fields, expected {}", row.len(), ROUND_HEADER.len())));
        }
        let intensity_index: u8 = row[1].parse().map_err(|_| bad("intensity_index", &row[1]))?;
        if intensity_index > 3 {
            return Err(bad("intensity_index", &row[1]));
        }
        out.push(RoundRecord {
            round: row[0].parse().map_err(|_| bad("round", &row[0]))?,
            intensity_index,
            config: row[2].parse()?,
            bob_key: match &row[3] {
                "key" => true,
                "test" => false,
                v => return Err(bad("bob_basis", v)),
            },
            alice_bit: bit(&row[4])?,
            phi1: num(&row[5])?,
            q1: num(&row[6])?,
            phi2: num(&row[7])?,
            q2: num(&row[8])?,
            bob_bit: bit(&row[9])?,
        });
    }
    Ok(out)
}
