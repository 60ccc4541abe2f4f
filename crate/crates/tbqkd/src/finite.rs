//! Finite-size parameter estimation with Azuma's inequality, and the finite key length.
//!
//! Counters sum kernel values over tomography rounds of each (intensity, source
//! configuration, observable). Azuma bounds their deviation from the sum of conditional
//! expectations, which turns them into intervals on round-averaged yields; the decoy
//! certificates are linear, so they bound round-averaged per-photon yields. A second
//! Azuma step carries the tagged gains over to the realized frequencies in key rounds.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::channel::z_gain_and_error;
use crate::decoy::{assemble_tagged_bounds, vacuum_gain_bound, BoundPair, ExactYields, LpYields, TaggedBounds, YieldEntry, YieldTable};
use crate::error::{Error, Result};
use crate::keyrate::{KeyRateInput, TagStats};
use crate::sim::{RoundModel, RoundRecord};
use crate::specfun::{h2, region_coefficients, VacuumFactor};
use crate::tomo::{observable_kernel_bound, simulate_moments, ObservableKernels, TwoModeState};
use crate::yields::{yield_curve, Observable, SourceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AzumaQuery {
    pub n: u64,
    /// Bound on every martingale difference.
    pub c: f64,
    pub epsilon: f64,
}

/// `delta = c sqrt(n ln(1/eps) / 2)`: `Pr(X_n - X_0 >= delta) <= eps`.
pub fn azuma_deviation(q: &AzumaQuery) -> Result<f64> {
    if q.n < 1 || !(q.c > 0.0) || !(q.epsilon > 0.0 && q.epsilon < 1.0) {
        return Err(Error::Domain(format!("Azuma query needs n >= 1, c > 0, epsilon in (0,1); got {q:?}")));
    }
    Ok(q.c * (q.n as f64 * (1.0 / q.epsilon).ln() / 2.0).sqrt())
}

/// Yields the tagged bounds are built from.
pub const SERIES: [(SourceConfig, Observable); 20] = {
    use Observable::*;
    use SourceConfig::*;
    [
        (Z, P00),
        (Z, OnePhoton),
        (Z, TwoPhotonSplit),
        (Z, P11),
        (Z, Psi2Plus),
        (Z, Psi2Minus),
        (Phi0, Psi1Minus),
        (Phi180, Psi1Plus),
        (Phi0, Psi2Plus),
        (Phi0, Psi2Minus),
        (Phi0, P11),
        (Phi90, Psi2Plus),
        (Phi90, Psi2Minus),
        (Phi90, P11),
        (Phi180, Psi2Plus),
        (Phi180, Psi2Minus),
        (Phi180, P11),
        (Phi270, Psi2Plus),
        (Phi270, Psi2Minus),
        (Phi270, P11),
    ]
};

/// Distinct observables of [`SERIES`], in the order kernels are evaluated.
pub const SERIES_OBSERVABLES: [Observable; 8] = [
    Observable::P00,
    Observable::OnePhoton,
    Observable::TwoPhotonSplit,
    Observable::P11,
    Observable::Psi2Plus,
    Observable::Psi2Minus,
    Observable::Psi1Minus,
    Observable::Psi1Plus,
];

fn obs_slot(o: Observable) -> usize {
    SERIES_OBSERVABLES.iter().position(|&x| x == o).expect("series observable")
}

/// Number of one-sided Azuma applications: both sides of every counter and of the five
/// key-round frequencies.
pub const AZUMA_APPLICATIONS: usize = 2 * (SERIES.len() * 4 + 5);

/// Counter sums over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub rounds: u64,
    /// `sums[a][config][slot]`: kernel sums over tomography rounds, configs in `SourceConfig::ALL` order.
    pub sums: [[[f64; 8]; 5]; 4],
    /// Tomography rounds per `[a][config]`.
    pub tests: [[u64; 5]; 4],
    /// Signal-intensity key rounds, those with a decoded bit, and those decoded wrongly.
    pub key_rounds: u64,
    pub key_accepted: u64,
    pub key_errors: u64,
}

fn config_slot(c: SourceConfig) -> usize {
    SourceConfig::ALL.iter().position(|&x| x == c).expect("config")
}

impl Counters {
    pub fn new() -> Self {
        Counters { rounds: 0, sums: [[[0.0; 8]; 5]; 4], tests: [[0; 5]; 4], key_rounds: 0, key_accepted: 0, key_errors: 0 }
    }

    /// Adds one round in order.
    pub fn push(&mut self, r: &RoundRecord, kernels: &ObservableKernels, scratch: &mut KernelScratch) {
        self.rounds += 1;
        let a = r.intensity_index as usize;
        if r.bob_key {
            if a == 0 && r.config == SourceConfig::Z {
                self.key_rounds += 1;
                if let Some(b) = r.bob_bit {
                    self.key_accepted += 1;
                    if Some(b) != r.alice_bit {
                        self.key_errors += 1;
                    }
                }
            }
            return;
        }
        let c = config_slot(r.config);
        self.tests[a][c] += 1;
        let rec = crate::tomo::QuadratureRecord { phi1: r.phi1, q1: r.q1, phi2: r.phi2, q2: r.q2 };
        scratch.out.resize(kernels.len(), 0.0);
        kernels.eval(&rec, &mut scratch.modes, &mut scratch.out);
        for (s, v) in self.sums[a][c].iter_mut().zip(&scratch.out) {
            *s += v;
        }
    }

    /// Sequential fold over records.
    pub fn fold<'a, I: IntoIterator<Item = &'a RoundRecord>>(records: I, eta_det: f64) -> Result<Self> {
        let kernels = series_kernels(eta_det)?;
        let mut scratch = KernelScratch::default();
        let mut c = Counters::new();
        for r in records {
            c.push(r, &kernels, &mut scratch);
        }
        Ok(c)
    }

    /// Counters equal to their expectations over `n` rounds: the infinite-data instance.
    pub fn expected(model: &RoundModel, n: u64) -> Result<Self> {
        model.validate()?;
        let mut c = Counters::new();
        c.rounds = n;
        let nf = n as f64;
        let mus = model.protocol.intensities();
        for (a, &mu) in mus.iter().enumerate() {
            for (ci, &config) in SourceConfig::ALL.iter().enumerate() {
                let w = model.settings.test_prob(a, config);
                c.tests[a][ci] = (w * nf).round() as u64;
                for (k, &obs) in SERIES_OBSERVABLES.iter().enumerate() {
                    c.sums[a][ci][k] = w * nf * yield_curve(config, obs, &model.channel)?.eval(mu);
                }
            }
        }
        let z = z_gain_and_error(model.protocol.mu, model.channel.eta(), model.channel.excess_noise_xi, model.protocol.tau)?;
        c.key_rounds = (model.settings.key_prob() * nf).round() as u64;
        c.key_accepted = (c.key_rounds as f64 * z.q_z).round() as u64;
        c.key_errors = (c.key_accepted as f64 * z.e_z).round() as u64;
        Ok(c)
    }

    pub fn sum(&self, a: usize, config: SourceConfig, obs: Observable) -> f64 {
        self.sums[a][config_slot(config)][obs_slot(obs)]
    }
}

impl Default for Counters {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Default)]
pub struct KernelScratch {
    modes: (Vec<num_complex::Complex64>, Vec<num_complex::Complex64>),
    out: Vec<f64>,
}

pub fn series_kernels(eta_det: f64) -> Result<ObservableKernels> {
    ObservableKernels::new(&SERIES_OBSERVABLES, eta_det)
}

/// `sum |coef| r_1 r_2` for an observable, cached per efficiency.
pub fn counter_kernel_bound(obs: Observable, eta_det: f64) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<(Observable, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (obs, eta_det.to_bits());
    if let Some(&r) = cache.lock().expect("bound cache poisoned").get(&key) {
        return Ok(r);
    }
    let r = observable_kernel_bound(obs, eta_det)?;
    cache.lock().expect("bound cache poisoned").insert(key, r);
    Ok(r)
}

/// Realized counts of the virtual tagged events in key rounds (simulation only).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VirtualCounts {
    pub q_star_0: u64,
    pub q11: u64,
    pub q11_e11: u64,
    pub q22: u64,
    pub q22_e22: u64,
}

/// Exact tagged quantities per signal key round for the honest channel.
pub fn true_tagged(model: &RoundModel) -> Result<TaggedBounds> {
    let coeffs = region_coefficients(model.protocol.tau, VacuumFactor::Physical)?;
    let mu = model.protocol.mu;
    let q0 = BoundPair::exact(yield_curve(SourceConfig::Z, Observable::P00, &model.channel)?.eval(mu) * coeffs.vac_accept);
    assemble_tagged_bounds(&ExactYields(&model.channel), q0, mu, &coeffs)
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability in (0,1)").sample(rng)
}

/// Counters of `n` i.i.d. rounds without materializing key rounds.
///
/// Setting counts are an exact multinomial draw. Tomography rounds are sampled and their
/// kernels evaluated; key-round outcomes and virtual tag counts are binomial draws from
/// the exact probabilities.
pub fn simulate_counters(model: &RoundModel, n: u64, seed: u64, kernels: &ObservableKernels) -> Result<(Counters, VirtualCounts)> {
    model.validate()?;
    let s = &model.settings;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Counters::new();
    c.rounds = n;
    // Multinomial by successive conditional binomials over (intensity, config, Bob's choice).
    let mut left = n;
    let mut mass = 1.0;
    let mus = model.protocol.intensities();
    for a in 0..4 {
        for (ci, &config) in SourceConfig::ALL.iter().enumerate() {
            for key in [true, false] {
                let p = s.intensity[a] * s.config_prob(config) * if key { s.bob_key } else { 1.0 - s.bob_key };
                let last = a == 3 && config == SourceConfig::Phi270 && !key;
                let k = if last { left } else { binomial(left, if mass > 0.0 { (p / mass).min(1.0) } else { 0.0 }, &mut rng) };
                left -= k;
                mass -= p;
                let cell_seed = rng.random::<u64>();
                if key {
                    if a == 0 && config == SourceConfig::Z {
                        c.key_rounds = k;
                    }
                } else if k > 0 {
                    c.tests[a][ci] = k;
                    let state = TwoModeState::source(config, mus[a], &model.channel);
                    let m = simulate_moments(&state, kernels, k as usize, cell_seed);
                    for (dst, src) in c.sums[a][ci].iter_mut().zip(&m) {
                        *dst = src.sum;
                    }
                }
            }
        }
    }
    let z = z_gain_and_error(model.protocol.mu, model.channel.eta(), model.channel.excess_noise_xi, model.protocol.tau)?;
    c.key_accepted = binomial(c.key_rounds, z.q_z, &mut rng);
    c.key_errors = binomial(c.key_accepted, z.e_z, &mut rng);
    let t = true_tagged(model)?;
    let (p0, p1, p2) = (t.q_star_0.lower, t.q11.lower, t.q22.lower);
    let nzz = c.key_rounds;
    let q_star_0 = binomial(nzz, p0, &mut rng);
    let q11 = binomial(nzz - q_star_0, p1 / (1.0 - p0), &mut rng);
    let q22 = binomial(nzz - q_star_0 - q11, p2 / (1.0 - p0 - p1), &mut rng);
    let e11 = if p1 > 0.0 { t.q11_e11.lower / p1 } else { 0.0 };
    let e22 = if p2 > 0.0 { t.q22_e22.lower / p2 } else { 0.0 };
    let v = VirtualCounts { q_star_0, q11, q11_e11: binomial(q11, e11, &mut rng), q22, q22_e22: binomial(q22, e22, &mut rng) };
    Ok((c, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteOptions {
    /// Total failure probability, split evenly over [`AZUMA_APPLICATIONS`].
    pub epsilon: f64,
    /// Kernel efficiency used by the counters.
    pub eta_det: f64,
    /// Drop all Azuma corrections (the infinite-data limit of the same pipeline).
    pub zero_corrections: bool,
}

impl Default for FiniteOptions {
    fn default() -> Self {
        FiniteOptions { epsilon: 1e-10, eta_det: 1.0, zero_corrections: false }
    }
}

/// Certified finite-size quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteEstimate {
    /// Bounds on round-averaged tagged gains per signal key round.
    pub average: TaggedBounds,
    /// Bounds on the realized tagged frequencies in the `key_rounds` key rounds.
    pub per_key_round: TaggedBounds,
    /// Observed yield intervals fed to the decoy certificates.
    pub table: Vec<YieldEntry>,
    pub key_rounds: u64,
    pub q_z: f64,
    pub e_z: f64,
    pub epsilon_each: f64,
    pub epsilon_total: f64,
}

/// Runs the two-step Azuma chain on `counters`.
pub fn finite_tagged_bounds(counters: &Counters, model: &RoundModel, opts: &FiniteOptions) -> Result<FiniteEstimate> {
    model.validate()?;
    if counters.rounds == 0 {
        return Err(Error::Missing("no rounds".into()));
    }
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::Budget(format!("total failure probability must lie in (0,1), got {}", opts.epsilon)));
    }
    let eps = opts.epsilon / AZUMA_APPLICATIONS as f64;
    let n = counters.rounds;
    let nf = n as f64;
    let deviation = |c: f64| -> Result<f64> {
        if opts.zero_corrections {
            Ok(0.0)
        } else {
            azuma_deviation(&AzumaQuery { n, c, epsilon: eps })
        }
    };
    let mus = model.protocol.intensities();
    let mut table = YieldTable::new();
    for &(config, obs) in &SERIES {
        let delta = deviation(2.0 * counter_kernel_bound(obs, opts.eta_det)?)?;
        for (a, &mu) in mus.iter().enumerate() {
            let w = model.settings.test_prob(a, config);
            if !(w > 0.0) || counters.tests[a][config_slot(config)] == 0 {
                return Err(Error::Missing(format!("no tomography rounds for intensity {mu}, source {config}")));
            }
            let scale = w * nf;
            table.insert(YieldEntry {
                intensity: mu,
                config,
                observable: obs,
                value: counters.sum(a, config, obs) / scale,
                halfwidth: delta / scale,
            })?;
        }
    }
    let coeffs = region_coefficients(model.protocol.tau, VacuumFactor::Physical)?;
    let q0 = vacuum_gain_bound(&table, model.protocol.mu, &coeffs)?;
    let average = assemble_tagged_bounds(&LpYields { table: &table, nc: model.protocol.cutoff_nc }, q0, model.protocol.mu, &coeffs)?;
    let nzz = counters.key_rounds;
    if nzz == 0 {
        return Err(Error::Missing("no signal-intensity key rounds".into()));
    }
    let d1 = deviation(1.0)?;
    let expected = model.settings.key_prob() * nf;
    let freq = |b: BoundPair| {
        let lo = ((expected * b.lower - d1) / nzz as f64).clamp(0.0, 1.0);
        let hi = ((expected * b.upper + d1) / nzz as f64).clamp(lo, 1.0);
        BoundPair::new(lo, hi, 2.0 * eps)
    };
    let per_key_round = TaggedBounds {
        q_star_0: freq(average.q_star_0),
        q11: freq(average.q11),
        q11_e11: freq(average.q11_e11),
        q22: freq(average.q22),
        q22_e22: freq(average.q22_e22),
    };
    let q_z = counters.key_accepted as f64 / nzz as f64;
    let e_z = if counters.key_accepted > 0 { counters.key_errors as f64 / counters.key_accepted as f64 } else { 0.0 };
    Ok(FiniteEstimate {
        average,
        per_key_round,
        table: table.entries().to_vec(),
        key_rounds: nzz,
        q_z,
        e_z,
        epsilon_each: eps,
        epsilon_total: eps * AZUMA_APPLICATIONS as f64,
    })
}

/// `N_zz Q11` bounds from counters: the single-photon part of [`finite_tagged_bounds`], as a count.
#[allow(non_snake_case)]
pub fn estimate_Q11_finite(counters: &Counters, model: &RoundModel, opts: &FiniteOptions) -> Result<BoundPair> {
    let e = finite_tagged_bounds(counters, model, opts)?;
    Ok(e.per_key_round.q11.scale(e.key_rounds as f64))
}

/// Total key bits
/// `N_zz [Q_*0 + sum_m (Q_mm (1 - h(e_mm)) + log2(eps_pa_m) / N_zz) - f Q^Z h(e^Z)]`,
/// from lower gains and upper phase errors. `epsilon_pa[i]` belongs to `stats.tags[i]`.
pub fn finite_key_length(n_zz: u64, input: &KeyRateInput, epsilon_pa: &[f64]) -> Result<f64> {
    let s = &input.stats;
    if epsilon_pa.len() != s.tags.len() || epsilon_pa.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::Domain("one privacy-amplification epsilon in (0,1] per tag".into()));
    }
    let n = n_zz as f64;
    let mut bits = n * s.q_star_0;
    for (t, &e) in s.tags.iter().zip(epsilon_pa) {
        if t.m >= 1 && t.m <= input.max_m {
            bits += n * t.gain * (1.0 - h2(t.phase_error.min(0.5))) + e.log2();
        }
    }
    Ok(bits - n * input.f * s.q_z * h2(s.e_z))
}

/// Report of one finite-size run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteReport {
    pub rounds: u64,
    pub estimate: FiniteEstimate,
    pub stats: TagStats,
    pub epsilon_pa: f64,
    pub key_bits: f64,
    pub key_rate_per_round: f64,
}

pub fn finite_report(counters: &Counters, model: &RoundModel, opts: &FiniteOptions, f: f64, epsilon_pa: f64) -> Result<FiniteReport> {
    let estimate = finite_tagged_bounds(counters, model, opts)?;
    let z = crate::channel::ZStats { q_z: estimate.q_z, e_z: estimate.e_z };
    let stats = estimate.per_key_round.worst_case_stats(model.protocol.max_m, z);
    let input = KeyRateInput { stats: stats.clone(), f, max_m: model.protocol.max_m };
    let key_bits = finite_key_length(estimate.key_rounds, &input, &vec![epsilon_pa; stats.tags.len()])?;
    Ok(FiniteReport {
        rounds: counters.rounds,
        key_rate_per_round: key_bits / counters.rounds as f64,
        estimate,
        stats,
        epsilon_pa,
        key_bits,
    })
}
