use std::fs::File;

use serde::Serialize;
use serde_json::json;
use tbqkd::channel::{z_gain_and_error, ChannelParams, ZStats};
use tbqkd::decoy::*;
use tbqkd::finite::{finite_report, series_kernels, simulate_counters, Counters, FiniteOptions, KernelScratch};
use tbqkd::keyrate::{i_photon_key_rate_with, plob_bound};
use tbqkd::optimizer::{optimize, write_csv, Best};
use tbqkd::sim::{round_row, RoundModel, ROUND_HEADER};
use tbqkd::specfun::{region_coefficients, MAX_TAG};
use tbqkd::tomo::{estimate_observables, read_records_csv, simulate_moments, ObservableKernels, TwoModeState};
use tbqkd::yields::{observed_yield, Observable, SourceConfig};
use tbqkd::{Error, Result};

use crate::artifacts::{cell, Artifacts};
use crate::config::*;

/// `-log2(1 - eta)`, infinite at unit transmittance.
pub fn plob(eta: f64) -> Result<f64> {
    if eta >= 1.0 {
        Ok(f64::INFINITY)
    } else {
        plob_bound(eta)
    }
}

fn channels(cfg: &RunConfig, distances: &[f64]) -> Result<Vec<ChannelParams>> {
    if distances.is_empty() {
        return Err(Error::Config("distances_km must not be empty".into()));
    }
    distances.iter().map(|&d| cfg.channel.at(d)).collect()
}

fn z_stats(p: &ProtocolParams, ch: &ChannelParams) -> Result<ZStats> {
    z_gain_and_error(p.mu, ch.eta(), ch.excess_noise_xi, p.tau)
}

pub fn sweep(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = require(&cfg.sweep, "sweep")?;
    let p = cfg.protocol()?;
    let chs = channels(cfg, &s.distances_km)?;
    let coeffs = region_coefficients(p.tau_snu, p.vacuum_factor.into())?;
    let f = p.reconciliation_efficiency;
    let decoy = match s.model {
        RateModel::Ideal => {
            if s.photons.is_empty() || s.photons.iter().any(|i| !(1..=MAX_TAG).contains(i)) {
                return Err(Error::Config(format!("sweep.photons must list tags in 1..={MAX_TAG}")));
            }
            None
        }
        _ => Some(p.decoy()?),
    };
    let mut rows = Vec::new();
    for ch in &chs {
        let bound = plob(ch.eta())?;
        match (s.model, &decoy) {
            (RateModel::Ideal, _) => {
                for &i in &s.photons {
                    let r = i_photon_key_rate_with(i, p.mu_photons, &coeffs, ch, f)?;
                    rows.push(vec![cell(ch.distance_km), "ideal".into(), i.to_string(), cell(r.rate.raw), cell(r.stats.e_z), cell(bound)]);
                }
            }
            (model, Some(dp)) => {
                let z = z_stats(dp, ch)?;
                let rate = if model == RateModel::Exact {
                    key_rate_exact_yields(dp, ch, &coeffs, z, f)?
                } else {
                    key_rate_with_decoy(&YieldTable::exact(&dp.intensities(), ch)?, dp, &coeffs, z, f)?
                };
                let name = if model == RateModel::Exact { "exact" } else { "decoy" };
                rows.push(vec![cell(ch.distance_km), name.into(), dp.max_m.to_string(), cell(rate.raw), cell(z.e_z), cell(bound)]);
            }
            _ => unreachable!("decoy parameters are built for non-ideal models"),
        }
    }
    out.csv("sweep.csv", &["distance_km", "model", "photons", "rate", "e_z", "plob"], &rows)
}

pub fn optimize_cmd(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = require(&cfg.search, "search")?;
    let space = s.space(cfg.protocol.as_ref())?;
    let chs = channels(cfg, &s.distances_km)?;
    let mut best: Vec<(f64, Best)> = Vec::new();
    for ch in &chs {
        best.push((ch.distance_km, optimize(&space, ch)?));
    }
    out.write("optimize.csv", |w| write_csv(&best, w))?;
    out.json(
        "optimize.json",
        &json!({ "space": space, "best": best.iter().map(|(d, b)| json!({"distance_km": d, "best": b})).collect::<Vec<_>>() }),
    )
}

#[derive(Serialize)]
struct DecoyRow {
    distance_km: f64,
    rate_decoy: f64,
    rate_infinite: f64,
    lp: TaggedBounds,
    exact: TaggedBounds,
}

pub fn decoy_compare(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = require(&cfg.decoy, "decoy")?;
    let pc = cfg.protocol()?;
    let p = pc.decoy()?;
    let chs = channels(cfg, &s.distances_km)?;
    let coeffs = region_coefficients(p.tau, pc.vacuum_factor.into())?;
    let measured = match &s.yield_table_csv {
        Some(path) => Some(YieldTable::read_csv(File::open(path).map_err(|e| Error::Config(format!("{path}: {e}")))?)?),
        None => None,
    };
    let f = pc.reconciliation_efficiency;
    let mut rows = Vec::new();
    let mut report = Vec::new();
    for (k, ch) in chs.iter().enumerate() {
        let z = z_stats(&p, ch)?;
        let table = match (&measured, k) {
            (Some(t), 0) => t.clone(),
            _ => YieldTable::exact(&p.intensities(), ch)?,
        };
        let q0 = vacuum_gain_bound(&table, p.mu, &coeffs)?;
        let lp = assemble_tagged_bounds(&LpYields { table: &table, nc: p.cutoff_nc }, q0, p.mu, &coeffs)?;
        let q0x = BoundPair::exact(observed_yield(SourceConfig::Z, Observable::P00, p.mu, ch)? * coeffs.vac_accept);
        let exact = assemble_tagged_bounds(&ExactYields(ch), q0x, p.mu, &coeffs)?;
        let rate_decoy = key_rate_with_decoy(&table, &p, &coeffs, z, f)?.raw;
        let rate_infinite = key_rate_exact_yields(&p, ch, &coeffs, z, f)?.raw;
        rows.push(vec![
            cell(ch.distance_km),
            cell(rate_decoy),
            cell(rate_infinite),
            cell(rate_decoy / rate_infinite - 1.0),
            cell(lp.q11.lower),
            cell(exact.q11.lower),
            cell(lp.q22.lower),
            cell(exact.q22.lower),
            cell(lp.e11()?.upper),
            cell(exact.e11()?.upper),
            cell(lp.e22()?.upper),
            cell(exact.e22()?.upper),
        ]);
        report.push(DecoyRow { distance_km: ch.distance_km, rate_decoy, rate_infinite, lp, exact });
    }
    out.csv(
        "decoy_compare.csv",
        &[
            "distance_km",
            "rate_decoy",
            "rate_infinite",
            "relative_gap",
            "q11_lower",
            "q11_exact",
            "q22_lower",
            "q22_exact",
            "e11_upper",
            "e11_exact",
            "e22_upper",
            "e22_exact",
        ],
        &rows,
    )?;
    out.json("decoy_compare.json", &report)
}

pub fn tomo_verify(cfg: &RunConfig, seed: u64, out: &mut Artifacts) -> Result<()> {
    let t = require(&cfg.tomography, "tomography")?;
    let obs = Observable::ALL;
    if let Some(path) = &t.records_csv {
        let recs = read_records_csv(File::open(path).map_err(|e| Error::Config(format!("{path}: {e}")))?)?;
        let est = estimate_observables(&recs, &obs, 1.0)?;
        let rows: Vec<Vec<String>> =
            obs.iter().zip(&est).map(|(o, e)| vec![o.id().to_string(), cell(e.value), cell(e.std_error)]).collect();
        out.csv("tomography.csv", &["observable", "estimate", "std_error"], &rows)?;
        return out.json("tomography.json", &json!({ "records": recs.len(), "estimates": est }));
    }
    if t.rounds < 2 {
        return Err(Error::Config("tomography.rounds must be at least 2".into()));
    }
    if t.intensity_photons.is_nan() || t.intensity_photons < 0.0 {
        return Err(Error::Config("tomography.intensity_photons must be >= 0".into()));
    }
    let ch = cfg.channel.at(t.distance_km)?;
    let kernels = ObservableKernels::new(&obs, 1.0)?;
    let mut rows = Vec::new();
    let (mut inside, mut total) = (0, 0);
    for (ci, &config) in SourceConfig::ALL.iter().enumerate() {
        let state = TwoModeState::source(config, t.intensity_photons, &ch);
        let m = simulate_moments(&state, &kernels, t.rounds, seed.wrapping_add(ci as u64));
        for (o, mk) in obs.iter().zip(&m) {
            let exact = observed_yield(config, *o, t.intensity_photons, &ch)?;
            let z = (mk.mean - exact) / mk.std_error();
            inside += (z.abs() <= 3.0) as u32;
            total += 1;
            rows.push(vec![config.id().into(), o.id().into(), cell(mk.mean), cell(mk.std_error()), cell(exact), cell(z)]);
        }
    }
    out.csv("tomography.csv", &["config", "observable", "estimate", "std_error", "exact", "z_score"], &rows)?;
    out.json("tomography.json", &json!({ "rounds_per_config": t.rounds, "within_3_std_errors": inside, "estimates": total }))
}

pub fn finite_size(cfg: &RunConfig, seed: u64, out: &mut Artifacts) -> Result<()> {
    let fs = require(&cfg.finite, "finite")?;
    let pc = cfg.protocol()?;
    let model = RoundModel { channel: cfg.channel.at(fs.distance_km)?, protocol: pc.decoy()?, settings: fs.settings()? };
    model.validate()?;
    if !(fs.epsilon > 0.0 && fs.epsilon < 1.0 && fs.epsilon_pa > 0.0 && fs.epsilon_pa <= 1.0) {
        return Err(Error::Config("finite.epsilon must lie in (0,1) and finite.epsilon_pa in (0,1]".into()));
    }
    if fs.write_rounds && fs.simulation != FiniteSimulation::Rounds {
        return Err(Error::Config("finite.write_rounds needs simulation = \"rounds\"".into()));
    }
    let opts = FiniteOptions { epsilon: fs.epsilon, ..Default::default() };
    let kernels = series_kernels(opts.eta_det)?;
    let (counters, virtual_counts) = match fs.simulation {
        FiniteSimulation::Counters => {
            let (c, v) = simulate_counters(&model, fs.rounds, seed, &kernels)?;
            (c, Some(v))
        }
        FiniteSimulation::Rounds => {
            let mut c = Counters::new();
            let mut scratch = KernelScratch::default();
            if fs.write_rounds {
                let mus = model.protocol.intensities();
                out.write("rounds.csv", |w| {
                    let mut csv = csv::Writer::from_writer(w);
                    csv.write_record(ROUND_HEADER)?;
                    model.for_each_round(fs.rounds, seed, |r| {
                        c.push(r, &kernels, &mut scratch);
                        Ok(csv.write_record(round_row(r, &mus))?)
                    })?;
                    csv.flush()?;
                    Ok(())
                })?;
            } else {
                model.for_each_round(fs.rounds, seed, |r| {
                    c.push(r, &kernels, &mut scratch);
                    Ok(())
                })?;
            }
            (c, None)
        }
    };
    let report = finite_report(&counters, &model, &opts, pc.reconciliation_efficiency, fs.epsilon_pa)?;
    out.json("finite_size.json", &json!({ "report": report, "counters": counters, "virtual_counts": virtual_counts }))
}
