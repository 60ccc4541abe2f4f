//! Published figure and table setups, emitted as plot-ready CSV.

use clap::ValueEnum;
use serde::Serialize;
use tbqkd::channel::{z_gain_and_error, ChannelParams};
use tbqkd::decoy::{key_rate_exact_yields, key_rate_with_decoy, ProtocolParams, YieldTable, DEFAULT_CUTOFF};
use tbqkd::keyrate::ideal_tag_stats;
use tbqkd::optimizer::{optimize, Best, SearchSpace};
use tbqkd::specfun::{region_coefficients, VacuumFactor};
use tbqkd::Result;

use crate::artifacts::{cell, Artifacts};
use crate::commands::plob;
use crate::config::ChannelSection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Fig3a,
    Fig3b,
    Fig5a,
    Fig5b,
    Fig5c,
    Table3,
    Table5,
}

/// Optimized ideal-protocol parameters: (distance_km, photons, mu, tau, e_z in percent).
pub const IDEAL_OPTIMA: [(f64, usize, f64, f64, f64); 14] = [
    (0.0, 1, 0.356, 1.437, 30.95),
    (0.0, 2, 1.487, 1.641, 10.52),
    (0.0, 3, 2.395, 1.845, 5.31),
    (0.0, 4, 2.395, 1.845, 5.31),
    (10.0, 1, 0.137, 3.476, 29.80),
    (10.0, 2, 0.924, 2.253, 14.84),
    (10.0, 3, 1.887, 2.457, 5.66),
    (10.0, 4, 2.395, 2.457, 4.17),
    (20.0, 2, 0.728, 3.068, 15.48),
    (20.0, 3, 1.487, 3.068, 6.91),
    (20.0, 4, 1.887, 3.272, 3.85),
    (40.0, 2, 0.356, 4.495, 28.52),
    (40.0, 3, 0.728, 4.495, 17.07),
    (40.0, 4, 1.172, 4.699, 8.81),
];

/// Practical two-photon decoy setup (xi 1e-3, 5 degrees): (distance_km, mu, tau, nu1, nu2).
pub const PRACTICAL_DECOY: [(f64, f64, f64, f64, f64); 6] = [
    (0.0, 1.487, 1.641, 1.737e-1, 1.000e-4),
    (5.0, 1.172, 2.049, 3.406e-3, 2.740e-4),
    (10.0, 0.924, 2.457, 2.993e-2, 1.000e-4),
    (15.0, 0.924, 3.068, 1.861e-2, 1.000e-4),
    (20.0, 0.728, 3.476, 1.355e-2, 2.441e-4),
    (25.0, 0.728, 4.291, 1.355e-2, 1.562e-4),
];

const PRACTICAL_XI: f64 = 1e-3;
const PRACTICAL_DELTA_DEG: f64 = 5.0;

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

fn channel(base: &ChannelSection, d: f64, xi: f64, delta_deg: f64) -> Result<ChannelParams> {
    ChannelSection { excess_noise_snu: xi, misalignment_deg: delta_deg, ..base.clone() }.at(d)
}

fn two_photon(p: (f64, f64, f64, f64, f64)) -> ProtocolParams {
    ProtocolParams { mu: p.1, tau: p.2, nu1: p.3, nu2: p.4, max_m: 2, cutoff_nc: DEFAULT_CUTOFF }
}

/// LP and exact-yield rates for one decoy protocol.
fn decoy_pair(p: &ProtocolParams, ch: &ChannelParams) -> Result<(f64, f64, f64)> {
    let coeffs = region_coefficients(p.tau, VacuumFactor::Physical)?;
    let z = z_gain_and_error(p.mu, ch.eta(), ch.excess_noise_xi, p.tau)?;
    let lp = key_rate_with_decoy(&YieldTable::exact(&p.intensities(), ch)?, p, &coeffs, z, 1.0)?.raw;
    let exact = key_rate_exact_yields(p, ch, &coeffs, z, 1.0)?.raw;
    Ok((lp, exact, z.e_z))
}

fn ideal_rows(base: &ChannelSection, distances: &[f64], photons: &[usize], xi: f64, delta_deg: f64, key: f64) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for &d in distances {
        let ch = channel(base, d, xi, delta_deg)?;
        for &i in photons {
            let b = optimize(&SearchSpace::ideal(i), &ch)?;
            rows.push(vec![cell(key), cell(d), i.to_string(), cell(b.params.mu), cell(b.params.tau), cell(b.rate), cell(b.e_z)]);
        }
    }
    Ok(rows)
}

pub fn run(target: Target, base: &ChannelSection, out: &mut Artifacts) -> Result<()> {
    match target {
        Target::Fig3a => {
            let mut rows = Vec::new();
            let mut params = Vec::new();
            for d in steps(0.0, 40.0, 1.0) {
                let ch = channel(base, d, 0.0, 0.0)?;
                let mut row = vec![cell(d)];
                for i in 1..=4 {
                    let b = optimize(&SearchSpace::ideal(i), &ch)?;
                    row.push(cell(b.rate));
                    params.push(vec![cell(d), i.to_string(), cell(b.params.mu), cell(b.params.tau), cell(b.rate), cell(b.e_z)]);
                }
                row.push(cell(plob(ch.eta())?));
                rows.push(row);
            }
            out.csv("fig3a.csv", &["distance_km", "rate_i1", "rate_i2", "rate_i3", "rate_i4", "plob"], &rows)?;
            out.csv("fig3a_params.csv", &["distance_km", "photons", "mu", "tau", "rate", "e_z"], &params)
        }
        Target::Fig3b => {
            let mut rows = Vec::new();
            for (d, i, mu, tau, _) in IDEAL_OPTIMA {
                let ch = channel(base, d, 0.0, 0.0)?;
                let s = ideal_tag_stats(i, mu, &region_coefficients(tau, VacuumFactor::Physical)?, &ch)?;
                let total = s.q_star_0 + s.tags.iter().map(|t| t.gain).sum::<f64>();
                let mut row = vec![cell(d), i.to_string(), cell(s.q_star_0 / total)];
                for m in 1..=4 {
                    row.push(cell(s.gain(m).unwrap_or(0.0) / total));
                }
                rows.push(row);
            }
            out.csv("fig3b.csv", &["distance_km", "photons", "vacuum", "m1", "m2", "m3", "m4"], &rows)
        }
        Target::Fig5a => {
            let mut rows = Vec::new();
            for xi in [0.0, 1e-3, 2e-3, 5e-3, 1e-2] {
                rows.extend(ideal_rows(base, &steps(0.0, 40.0, 5.0), &[2], xi, 0.0, xi)?);
            }
            out.csv("fig5a.csv", &["excess_noise_snu", "distance_km", "photons", "mu", "tau", "rate", "e_z"], &rows)
        }
        Target::Fig5b => {
            let mut rows = Vec::new();
            for delta in [0.0, 5.0, 10.0, 15.0] {
                rows.extend(ideal_rows(base, &steps(0.0, 40.0, 5.0), &[2], 0.0, delta, delta)?);
            }
            out.csv("fig5b.csv", &["misalignment_deg", "distance_km", "photons", "mu", "tau", "rate", "e_z"], &rows)
        }
        Target::Fig5c => {
            let mut noiseless = Vec::new();
            for d in steps(0.0, 40.0, 5.0) {
                let ch = channel(base, d, 0.0, 0.0)?;
                let mut space = SearchSpace::decoy(2);
                space.nu1 = vec![1.2e-4];
                space.nu2 = vec![1e-4];
                let b = optimize(&space, &ch)?;
                let p = ProtocolParams { mu: b.params.mu, tau: b.params.tau, nu1: 1.2e-4, nu2: 1e-4, max_m: 2, cutoff_nc: DEFAULT_CUTOFF };
                let (lp, exact, _) = decoy_pair(&p, &ch)?;
                noiseless.push(vec![cell(d), cell(p.mu), cell(p.tau), cell(lp), cell(exact), cell(lp / exact - 1.0)]);
            }
            out.csv("fig5c_noiseless.csv", &["distance_km", "mu", "tau", "rate_decoy", "rate_infinite", "relative_gap"], &noiseless)?;
            let mut practical = Vec::new();
            for row in PRACTICAL_DECOY {
                let ch = channel(base, row.0, PRACTICAL_XI, PRACTICAL_DELTA_DEG)?;
                let (lp, exact, _) = decoy_pair(&two_photon(row), &ch)?;
                practical.push(vec![cell(row.0), cell(lp), cell(exact), cell(lp / exact - 1.0)]);
            }
            out.csv("fig5c_practical.csv", &["distance_km", "rate_decoy", "rate_infinite", "relative_gap"], &practical)
        }
        Target::Table3 => {
            let mut rows = Vec::new();
            for (d, i, mu, tau, e_ref) in IDEAL_OPTIMA {
                let ch = channel(base, d, 0.0, 0.0)?;
                let e_at_ref = 100.0 * z_gain_and_error(mu, ch.eta(), 0.0, tau)?.e_z;
                let b: Best = optimize(&SearchSpace::ideal(i), &ch)?;
                rows.push(vec![
                    cell(d),
                    i.to_string(),
                    cell(mu),
                    cell(tau),
                    cell(e_ref),
                    cell(e_at_ref),
                    ((e_at_ref - e_ref).abs() <= 0.1).to_string(),
                    cell(b.params.mu),
                    cell(b.params.tau),
                    cell(100.0 * b.e_z),
                    cell(b.rate),
                ]);
            }
            out.csv(
                "table3.csv",
                &[
                    "distance_km",
                    "photons",
                    "reference_mu",
                    "reference_tau",
                    "reference_e_z_percent",
                    "e_z_percent",
                    "within_0.1pp",
                    "optimized_mu",
                    "optimized_tau",
                    "optimized_e_z_percent",
                    "optimized_rate",
                ],
                &rows,
            )
        }
        Target::Table5 => {
            let mut rows = Vec::new();
            for row in PRACTICAL_DECOY {
                let ch = channel(base, row.0, PRACTICAL_XI, PRACTICAL_DELTA_DEG)?;
                let (reference_rate, _, _) = decoy_pair(&two_photon(row), &ch)?;
                let b = optimize(&SearchSpace::decoy(2), &ch)?;
                rows.push(vec![
                    cell(row.0),
                    cell(row.1),
                    cell(row.2),
                    cell(row.3),
                    cell(row.4),
                    cell(reference_rate),
                    cell(b.params.mu),
                    cell(b.params.tau),
                    cell(b.params.nu1),
                    cell(b.params.nu2),
                    cell(b.rate),
                ]);
            }
            out.csv(
                "table5.csv",
                &[
                    "distance_km",
                    "reference_mu",
                    "reference_tau",
                    "reference_nu1",
                    "reference_nu2",
                    "reference_rate",
                    "mu",
                    "tau",
                    "nu1",
                    "nu2",
                    "rate",
                ],
                &rows,
            )
        }
    }
}
