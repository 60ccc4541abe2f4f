//! Decoy-state estimation of photon-number-tagged gains and phase errors.
//!
//! Per-photon yields are bounded with a linear program over `y_0..=y_nc`. Bounds come
//! from dual certificates: any multipliers give a valid bound when evaluated directly,
//! so a bound never depends on how accurately the simplex pivoted, and the same
//! certificate can be re-applied to widened (finite-size) yield intervals.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, ZStats};
use crate::error::{Error, Result};
use crate::keyrate::{key_rate_reverse, KeyRate, KeyRateInput, Tag, TagStats};
use crate::simplex::{Constraint, LinearProgram, LpOutcome, Sense};
use crate::specfun::{poisson_unchecked, RegionCoefficients};
use crate::yields::{yield_curve, Observable, SourceConfig};

pub const DEFAULT_CUTOFF: usize = 10;

/// Relative slack added to every observed-yield constraint to absorb rounding.
const ROUNDING_SLACK: f64 = 4e-15;

/// Poisson weights below this are dropped from the LP matrix (never from certificates).
const LP_COEFF_FLOOR: f64 = 1e-20;

fn slack(lo: f64, hi: f64) -> f64 {
    ROUNDING_SLACK * lo.abs().max(hi.abs()) + f64::MIN_POSITIVE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
    /// Failure probability consumed to certify the pair.
    pub epsilon: f64,
}

impl BoundPair {
    pub fn exact(v: f64) -> Self {
        BoundPair { lower: v, upper: v, epsilon: 0.0 }
    }

    pub fn new(lower: f64, upper: f64, epsilon: f64) -> Self {
        BoundPair { lower, upper, epsilon }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lower - tol && v <= self.upper + tol
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// `c * [l, u]`, swapping ends for negative `c`.
    pub fn scale(self, c: f64) -> Self {
        let (a, b) = (c * self.lower, c * self.upper);
        BoundPair { lower: a.min(b), upper: a.max(b), epsilon: self.epsilon }
    }

    /// Intersects with `[lo, hi]`. A pair entirely outside collapses onto the nearer end,
    /// so the result is never inverted.
    pub fn clamp(self, lo: f64, hi: f64) -> Self {
        let lower = self.lower.clamp(lo, hi);
        let upper = self.upper.clamp(lo, hi).max(lower);
        BoundPair { lower, upper, epsilon: self.epsilon }
    }
}

/// Interval sum; failure probabilities add.
impl std::ops::Add for BoundPair {
    type Output = BoundPair;

    fn add(self, o: Self) -> Self {
        BoundPair { lower: self.lower + o.lower, upper: self.upper + o.upper, epsilon: self.epsilon + o.epsilon }
    }
}

impl std::ops::Sub for BoundPair {
    type Output = BoundPair;

    fn sub(self, o: Self) -> Self {
        self + o.scale(-1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldEntry {
    pub intensity: f64,
    pub config: SourceConfig,
    pub observable: Observable,
    pub value: f64,
    pub halfwidth: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    intensity: f64,
    config: String,
    observable: String,
    value: f64,
    halfwidth: f64,
}

/// Observed yields keyed by (intensity, source configuration, observable).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct YieldTable {
    entries: Vec<YieldEntry>,
}

impl YieldTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[YieldEntry] {
        &self.entries
    }

    /// Inserts or replaces the entry with the same key.
    pub fn insert(&mut self, e: YieldEntry) -> Result<()> {
        if !(e.intensity >= 0.0 && e.intensity.is_finite()) {
            return Err(Error::Domain(format!("intensity must be finite and >= 0, got {}", e.intensity)));
        }
        if !e.value.is_finite() || !(e.halfwidth >= 0.0) {
            return Err(Error::Domain(format!("bad yield value {} or halfwidth {}", e.value, e.halfwidth)));
        }
        match self.entries.iter_mut().find(|x| x.intensity == e.intensity && x.config == e.config && x.observable == e.observable) {
            Some(x) => *x = e,
            None => self.entries.push(e),
        }
        Ok(())
    }

    pub fn get(&self, intensity: f64, config: SourceConfig, observable: Observable) -> Option<&YieldEntry> {
        self.entries.iter().find(|x| x.intensity == intensity && x.config == config && x.observable == observable)
    }

    /// Entries for one (config, observable), sorted by intensity.
    pub fn series(&self, config: SourceConfig, observable: Observable) -> Vec<YieldEntry> {
        let mut v: Vec<YieldEntry> = self.entries.iter().filter(|x| x.config == config && x.observable == observable).copied().collect();
        v.sort_by(|a, b| a.intensity.total_cmp(&b.intensity));
        v
    }

    /// Infinite-data table: exact yields of every configuration and observable.
    pub fn exact(intensities: &[f64], channel: &ChannelParams) -> Result<Self> {
        let mut t = YieldTable::new();
        for config in SourceConfig::ALL {
            for obs in Observable::ALL {
                let curve = yield_curve(config, obs, channel)?;
                for &mu in intensities {
                    t.insert(YieldEntry { intensity: mu, config, observable: obs, value: curve.eval(mu), halfwidth: 0.0 })?;
                }
            }
        }
        Ok(t)
    }

    /// Reads `intensity,config,observable,value,halfwidth`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut t = YieldTable::new();
        for row in rdr.deserialize() {
            let r: CsvRow = row?;
            t.insert(YieldEntry {
                intensity: r.intensity,
                config: r.config.parse()?,
                observable: r.observable.parse()?,
                value: r.value,
                halfwidth: r.halfwidth,
            })?;
        }
        Ok(t)
    }

    /// Values are written in shortest round-trip form so a table reloads bit-exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["intensity", "config", "observable", "value", "halfwidth"])?;
        for e in &self.entries {
            w.write_record([
                e.intensity.to_string(),
                e.config.id().to_string(),
                e.observable.id().to_string(),
                e.value.to_string(),
                e.halfwidth.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Pr(k > nc | mu)`, summed upward so tiny tails keep full relative precision.
pub fn poisson_tail(mu: f64, nc: usize) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let mut term = poisson_unchecked(mu, nc + 1);
    let mut sum = 0.0;
    let mut k = nc + 1;
    while term > 0.0 && (term > 1e-18 * sum || (k as f64) < mu) {
        sum += term;
        k += 1;
        term *= mu / k as f64;
    }
    sum.min(1.0)
}

/// Dual certificate for a bound on one per-photon yield.
///
/// Every per-photon yield lies in `[box_lower, box_upper]`. With `lo_a <= Y_a <= hi_a`
/// for each intensity, `sign * y_m` is at least
/// `sum_a lambda_lower[a] (lo_a - box_upper tail_a) - sum_a lambda_upper[a] (hi_a - box_lower tail_a) - penalty`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyCertificate {
    pub m: usize,
    /// `+1` certifies a lower bound, `-1` an upper bound.
    pub sign: f64,
    pub box_lower: f64,
    pub box_upper: f64,
    pub intensities: Vec<f64>,
    pub tails: Vec<f64>,
    pub lambda_lower: Vec<f64>,
    pub lambda_upper: Vec<f64>,
    pub penalty: f64,
}

impl DecoyCertificate {
    /// Bound on `y_m` (lower if `sign > 0`, upper otherwise) for yield intervals given per intensity.
    pub fn bound(&self, intervals: &[(f64, f64)]) -> f64 {
        assert_eq!(intervals.len(), self.intensities.len(), "one interval per intensity");
        let mut v = -self.penalty;
        for (a, &(lo, hi)) in intervals.iter().enumerate() {
            let s = slack(lo, hi);
            if self.lambda_lower[a] > 0.0 {
                v += self.lambda_lower[a] * (lo - s - self.box_upper * self.tails[a]);
            }
            if self.lambda_upper[a] > 0.0 {
                v -= self.lambda_upper[a] * (hi + s - self.box_lower * self.tails[a]);
            }
        }
        self.sign * v
    }

    /// `lambda_lower[a] + lambda_upper[a]`, the sensitivity of the bound to the yield at intensity `a`.
    pub fn weight(&self, a: usize) -> f64 {
        self.lambda_lower[a] + self.lambda_upper[a]
    }
}

/// Certificate for a bound on `y_m` given yield intervals `(mu_a, lo_a, hi_a)` and the
/// a-priori range `[box_lower, box_upper]` of every per-photon yield.
///
/// The primal LP (shifted variables `y_k - box_lower`, well scaled) is solved and its
/// optimal duals become the multipliers; the penalty is then recomputed with exact
/// Poisson weights.
pub fn certify(intervals: &[(f64, f64, f64)], m: usize, nc: usize, range: (f64, f64), lower: bool) -> Result<DecoyCertificate> {
    let (bl, bu) = range;
    if m > nc {
        return Err(Error::Domain(format!("photon number {m} above cutoff {nc}")));
    }
    if !(bu > bl) || !bl.is_finite() || !bu.is_finite() {
        return Err(Error::Domain(format!("empty per-photon yield range [{bl}, {bu}]")));
    }
    let na = intervals.len();
    let sign = if lower { 1.0 } else { -1.0 };
    let tails: Vec<f64> = intervals.iter().map(|&(mu, _, _)| poisson_tail(mu, nc)).collect();
    let probs: Vec<Vec<f64>> = intervals.iter().map(|&(mu, _, _)| (0..=nc).map(|k| poisson_unchecked(mu, k)).collect()).collect();
    let mut objective = vec![0.0; nc + 1];
    objective[m] = sign;
    let mut constraints = Vec::with_capacity(2 * na + nc + 1);
    for (a, &(_, lo, hi)) in intervals.iter().enumerate() {
        let coeffs: Vec<f64> = probs[a].iter().map(|&p| if p < LP_COEFF_FLOOR { 0.0 } else { p }).collect();
        let s = slack(lo, hi);
        let head = 1.0 - tails[a];
        constraints.push(Constraint { coeffs: coeffs.clone(), sense: Sense::Ge, rhs: lo - s - bu * tails[a] - bl * head });
        constraints.push(Constraint { coeffs, sense: Sense::Le, rhs: hi + s - bl });
    }
    for k in 0..=nc {
        let mut coeffs = vec![0.0; nc + 1];
        coeffs[k] = 1.0;
        constraints.push(Constraint { coeffs, sense: Sense::Le, rhs: bu - bl });
    }
    let duals = match (LinearProgram { objective, constraints }).solve() {
        LpOutcome::Optimal { duals, .. } => duals,
        LpOutcome::Infeasible => return Err(Error::Infeasible("decoy constraints admit no yield vector".into())),
        LpOutcome::Unbounded => return Err(Error::Numeric("bounded decoy LP reported unbounded".into())),
    };
    let lambda_lower: Vec<f64> = (0..na).map(|a| duals[2 * a].max(0.0)).collect();
    let lambda_upper: Vec<f64> = (0..na).map(|a| (-duals[2 * a + 1]).max(0.0)).collect();
    let penalty = (0..=nc)
        .map(|k| {
            let g: f64 = (0..na).map(|a| (lambda_lower[a] - lambda_upper[a]) * probs[a][k]).sum::<f64>() - if k == m { sign } else { 0.0 };
            (g * bu).max(g * bl)
        })
        .sum();
    Ok(DecoyCertificate {
        m,
        sign,
        box_lower: bl,
        box_upper: bu,
        intensities: intervals.iter().map(|i| i.0).collect(),
        tails,
        lambda_lower,
        lambda_upper,
        penalty,
    })
}

/// Lower and upper certificates plus the bound they give on the nominal intervals.
pub fn certified_bounds(
    intervals: &[(f64, f64, f64)],
    m: usize,
    nc: usize,
    range: (f64, f64),
) -> Result<(BoundPair, [DecoyCertificate; 2])> {
    let lo = certify(intervals, m, nc, range, true)?;
    let hi = certify(intervals, m, nc, range, false)?;
    let iv: Vec<(f64, f64)> = intervals.iter().map(|&(_, l, h)| (l, h)).collect();
    let (l, u) = (lo.bound(&iv), hi.bound(&iv));
    if l > u + 1e-9 * (range.1 - range.0) {
        return Err(Error::Infeasible(format!("certified lower bound {l} exceeds upper bound {u}")));
    }
    Ok((BoundPair::new(l, u.max(l), 0.0).clamp(range.0, range.1), [lo, hi]))
}

/// Weighted sum `sum_i w_i y[config_i, observable_i]` of yields, all at the same photon number.
pub type Combination = [(f64, SourceConfig, Observable)];

/// A-priori range of a combination's per-photon yield, each term lying in `[0, 1]`.
pub fn combination_range(terms: &Combination) -> (f64, f64) {
    terms.iter().fold((0.0, 0.0), |(l, u), &(w, _, _)| (l + w.min(0.0), u + w.max(0.0)))
}

/// Combined yield series of `terms` at the intensities every term was measured at.
pub fn combined_series(table: &YieldTable, terms: &Combination) -> Result<Vec<(f64, f64, f64)>> {
    let (bl, bu) = combination_range(terms);
    let first = terms.first().ok_or_else(|| Error::Missing("empty yield combination".into()))?;
    let mut out = Vec::new();
    'intensity: for e in table.series(first.1, first.2) {
        let (mut v, mut hw) = (0.0, 0.0);
        for &(w, c, o) in terms {
            let Some(x) = table.get(e.intensity, c, o) else { continue 'intensity };
            v += w * x.value;
            hw += w.abs() * (x.halfwidth + ROUNDING_SLACK * x.value.abs());
        }
        out.push((e.intensity, (v - hw).clamp(bl, bu), (v + hw).clamp(bl, bu)));
    }
    if out.is_empty() {
        return Err(Error::Missing("no intensity shared by every term of the combination".into()));
    }
    Ok(out)
}

/// Bounds on the per-photon yield `y_m` of (config, observable) from every intensity in the table.
pub fn lp_yield_bounds(table: &YieldTable, config: SourceConfig, observable: Observable, m: usize, nc: usize) -> Result<BoundPair> {
    lp_combination_bounds(table, &[(1.0, config, observable)], m, nc)
}

/// Bounds on a combination's per-photon yield from one LP on the combined series.
pub fn lp_combination_bounds(table: &YieldTable, terms: &Combination, m: usize, nc: usize) -> Result<BoundPair> {
    let series = combined_series(table, terms)?;
    let range = combination_range(terms);
    // One intensity cannot separate photon numbers; report the a-priori range.
    if series.len() < 2 {
        return Ok(BoundPair::new(range.0, range.1, 0.0));
    }
    Ok(certified_bounds(&series, m, nc, range)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatSign {
    Plus,
    Minus,
}

/// Source of per-photon yield bounds `y_m[config, observable]`.
pub trait YieldBounds: Sync {
    fn per_photon(&self, config: SourceConfig, observable: Observable, m: usize) -> Result<BoundPair>;

    /// Bounds on `sum_i w_i y_m[c_i, o_i]`; by default interval arithmetic on the terms.
    fn combination(&self, terms: &Combination, m: usize) -> Result<BoundPair> {
        terms.iter().try_fold(BoundPair::exact(0.0), |acc, &(w, c, o)| Ok(acc + self.per_photon(c, o, m)?.scale(w)))
    }
}

/// Per-photon yields known exactly (infinite decoy states).
pub struct ExactYields<'a>(pub &'a ChannelParams);

impl YieldBounds for ExactYields<'_> {
    fn per_photon(&self, config: SourceConfig, observable: Observable, m: usize) -> Result<BoundPair> {
        Ok(BoundPair::exact(yield_curve(config, observable, self.0)?.per_photon(m)))
    }
}

/// Per-photon yields bounded by the decoy LP on a table.
pub struct LpYields<'a> {
    pub table: &'a YieldTable,
    pub nc: usize,
}

impl YieldBounds for LpYields<'_> {
    fn per_photon(&self, config: SourceConfig, observable: Observable, m: usize) -> Result<BoundPair> {
        lp_yield_bounds(self.table, config, observable, m, self.nc)
    }
}

impl<F> YieldBounds for F
where
    F: Fn(SourceConfig, Observable, usize) -> Result<BoundPair> + Sync,
{
    fn per_photon(&self, config: SourceConfig, observable: Observable, m: usize) -> Result<BoundPair> {
        self(config, observable, m)
    }
}

/// `Pr(m|mu) <O>` for the `m`-photon cat state `Psi_m^{sign}` sent through the channel,
/// by interval arithmetic on the per-configuration bounds, clamped to `[0, Pr(m)]`.
pub fn cat_state_combination<Y: YieldBounds + ?Sized>(
    m: usize,
    sign: CatSign,
    observable: Observable,
    mu: f64,
    yields: &Y,
) -> Result<BoundPair> {
    let pr = poisson_unchecked(mu, m);
    let v = cat_terms(m, sign, observable, 1.0)?
        .into_iter()
        .try_fold(BoundPair::exact(0.0), |acc, (w, c, o)| Ok::<_, Error>(acc + yields.per_photon(c, o, m)?.scale(w)))?;
    Ok(v.scale(pr).clamp(0.0, pr))
}

/// Photon-number-tagged quantities with gains and gain-weighted phase errors bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedBounds {
    pub q_star_0: BoundPair,
    pub q11: BoundPair,
    pub q11_e11: BoundPair,
    pub q22: BoundPair,
    pub q22_e22: BoundPair,
}

fn ratio(num: BoundPair, den: BoundPair, what: &str) -> Result<BoundPair> {
    if !(den.lower > 0.0) {
        return Err(Error::UndefinedRate(format!("lower bound on {what} gain is zero")));
    }
    let upper = if den.upper > 0.0 { num.upper / den.lower } else { 1.0 };
    let lower = if den.upper > 0.0 { num.lower / den.upper } else { 0.0 };
    Ok(BoundPair::new(lower, upper, num.epsilon + den.epsilon).clamp(0.0, 1.0))
}

impl TaggedBounds {
    pub fn e11(&self) -> Result<BoundPair> {
        ratio(self.q11_e11, self.q11, "single-photon")
    }

    pub fn e22(&self) -> Result<BoundPair> {
        ratio(self.q22_e22, self.q22, "two-photon")
    }

    pub fn epsilon(&self) -> f64 {
        self.q_star_0.epsilon + self.q11.epsilon + self.q11_e11.epsilon + self.q22.epsilon + self.q22_e22.epsilon
    }

    /// Worst-case statistics: lower gains, upper phase errors. Tags with a zero gain bound are dropped.
    pub fn worst_case_stats(&self, max_m: usize, z: ZStats) -> TagStats {
        let mut tags = Vec::new();
        let pairs = [(1, self.q11, self.e11()), (2, self.q22, self.e22())];
        for (m, q, e) in pairs {
            if m > max_m {
                continue;
            }
            if let Ok(e) = e {
                tags.push(Tag { m, gain: q.lower, phase_error: e.upper });
            }
        }
        TagStats { q_star_0: self.q_star_0.lower, tags, q_z: z.q_z, e_z: z.e_z }
    }
}

/// Terms of `<O>` for the `m`-photon cat state `Psi_m^{sign}` in per-photon yields, times `w`.
pub fn cat_terms(m: usize, sign: CatSign, observable: Observable, w: f64) -> Result<Vec<(f64, SourceConfig, Observable)>> {
    let s = if sign == CatSign::Plus { 1.0 } else { -1.0 };
    Ok(match m {
        1 => vec![(w, if sign == CatSign::Plus { SourceConfig::Phi0 } else { SourceConfig::Phi180 }, observable)],
        2 => vec![
            (w, SourceConfig::Z, observable),
            (0.5 * s * w, SourceConfig::Phi0, observable),
            (0.5 * s * w, SourceConfig::Phi180, observable),
            (-0.5 * s * w, SourceConfig::Phi90, observable),
            (-0.5 * s * w, SourceConfig::Phi270, observable),
        ],
        _ => return Err(Error::Unsupported(format!("cat-state combination for m = {m}"))),
    })
}

/// Combines per-photon yield bounds into tagged gains and error terms.
///
/// Each cat-state term is clamped to its physical range `[0, Pr(m)]` before it is weighted.
pub fn assemble_tagged_bounds<Y: YieldBounds + ?Sized>(
    yields: &Y,
    q_star_0: BoundPair,
    mu: f64,
    coeffs: &RegionCoefficients,
) -> Result<TaggedBounds> {
    use Observable::*;
    let p1 = poisson_unchecked(mu, 1);
    let p2 = poisson_unchecked(mu, 2);
    let (c1, c02, c11) = (coeffs.c1, coeffs.c2_02, coeffs.c2_11);
    let cat = |m, sign, obs| cat_state_combination(m, sign, obs, mu, yields);
    let (q11, q22) = rayon::join(
        || -> Result<_> {
            let q = yields.per_photon(SourceConfig::Z, OnePhoton, 1)?.scale(c1 * p1);
            let qe = (cat(1, CatSign::Plus, Psi1Minus)? + cat(1, CatSign::Minus, Psi1Plus)?).scale(0.5 * c1);
            Ok((q, qe))
        },
        || -> Result<_> {
            let q = (yields.per_photon(SourceConfig::Z, TwoPhotonSplit, 2)?.scale(c02)
                + yields.per_photon(SourceConfig::Z, P11, 2)?.scale(c11))
            .scale(p2);
            let qe = cat(2, CatSign::Plus, Psi2Minus)?.scale(0.5 * (c02 - c11))
                + cat(2, CatSign::Minus, Psi2Plus)?.scale(0.5 * (c02 + c11))
                + cat(2, CatSign::Minus, P11)?.scale(c11);
            Ok((q, qe))
        },
    );
    let (q11, q11_e11) = q11?;
    let (q22, q22_e22) = q22?;
    Ok(TaggedBounds {
        q_star_0: q_star_0.clamp(0.0, 1.0),
        q11: q11.clamp(0.0, 1.0),
        q11_e11: q11_e11.clamp(0.0, 1.0),
        q22: q22.clamp(0.0, 1.0),
        q22_e22: q22_e22.clamp(0.0, 1.0),
    })
}

/// Protocol parameters of the decoy-state scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub mu: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub tau: f64,
    /// Highest tag used in the rate, 1 or 2.
    pub max_m: usize,
    pub cutoff_nc: usize,
}

impl ProtocolParams {
    pub fn intensities(&self) -> [f64; 4] {
        [self.mu, self.nu1, self.nu2, 0.0]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.nu1 >= 0.0
            && self.nu2 >= 0.0
            && self.tau > 0.0
            && (1..=2).contains(&self.max_m)
            && self.cutoff_nc >= 2
            && [self.mu, self.nu1, self.nu2, self.tau].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid protocol parameters {self:?}")))
        }
    }
}

/// Vacuum-gain bound from the observed two-mode vacuum yield at the signal intensity.
pub fn vacuum_gain_bound(table: &YieldTable, mu: f64, coeffs: &RegionCoefficients) -> Result<BoundPair> {
    let e = table.get(mu, SourceConfig::Z, Observable::P00).ok_or_else(|| Error::Missing(format!("vacuum yield at intensity {mu}")))?;
    Ok(BoundPair::new(e.value - e.halfwidth, e.value + e.halfwidth, 0.0).clamp(0.0, 1.0).scale(coeffs.vac_accept))
}

/// Worst-case reverse-reconciliation rate using LP bounds on `table`.
pub fn key_rate_with_decoy(
    table: &YieldTable,
    protocol: &ProtocolParams,
    coeffs: &RegionCoefficients,
    z: ZStats,
    f: f64,
) -> Result<KeyRate> {
    protocol.validate()?;
    if table.is_empty() {
        return Err(Error::Missing("empty yield table".into()));
    }
    let q0 = vacuum_gain_bound(table, protocol.mu, coeffs)?;
    let yields = LpYields { table, nc: protocol.cutoff_nc };
    let bounds = assemble_tagged_bounds(&yields, q0, protocol.mu, coeffs)?;
    Ok(key_rate_reverse(&KeyRateInput { stats: bounds.worst_case_stats(protocol.max_m, z), f, max_m: protocol.max_m }))
}

/// Rate with per-photon yields known exactly (the infinite-decoy limit).
pub fn key_rate_exact_yields(
    protocol: &ProtocolParams,
    channel: &ChannelParams,
    coeffs: &RegionCoefficients,
    z: ZStats,
    f: f64,
) -> Result<KeyRate> {
    protocol.validate()?;
    let q0 = BoundPair::exact(yield_curve(SourceConfig::Z, Observable::P00, channel)?.eval(protocol.mu) * coeffs.vac_accept);
    let bounds = assemble_tagged_bounds(&ExactYields(channel), q0, protocol.mu, coeffs)?;
    Ok(key_rate_reverse(&KeyRateInput { stats: bounds.worst_case_stats(protocol.max_m, z), f, max_m: protocol.max_m }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(y: &[f64], mus: &[f64]) -> Vec<(f64, f64, f64)> {
        mus.iter()
            .map(|&mu| {
                let v: f64 = y.iter().enumerate().map(|(k, yk)| poisson_unchecked(mu, k) * yk).sum();
                (mu, v, v)
            })
            .collect()
    }

    #[test]
    fn bounds_bracket_truth() {
        let y = [0.02, 0.3, 0.5, 0.6, 0.7, 0.8, 0.5, 0.4, 0.3, 0.2, 0.1];
        let iv = synthetic(&y, &[0.0, 0.05, 0.2, 0.8]);
        for m in 0..=3 {
            let (b, _) = certified_bounds(&iv, m, 10, (0.0, 1.0)).unwrap();
            assert!(b.contains(y[m], 0.0), "m={m} {b:?} vs {}", y[m]);
        }
    }

    #[test]
    fn single_intensity_only_caps_by_its_own_weight() {
        let iv = synthetic(&[0.1, 0.4, 0.6, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7], &[0.5]);
        let (b, _) = certified_bounds(&iv, 1, 10, (0.0, 1.0)).unwrap();
        assert!(b.lower.abs() < 1e-12, "{b:?}");
        assert!((b.upper - iv[0].1 / poisson_unchecked(0.5, 1)).abs() < 1e-9, "{b:?}");
    }

    #[test]
    fn single_intensity_table_is_uninformative() {
        let mut t = YieldTable::new();
        t.insert(YieldEntry { intensity: 0.5, config: SourceConfig::Z, observable: Observable::P11, value: 0.02, halfwidth: 0.0 }).unwrap();
        let b = lp_yield_bounds(&t, SourceConfig::Z, Observable::P11, 1, 10).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 1.0));
    }

    #[test]
    fn inconsistent_yields_are_infeasible() {
        // The vacuum yield cannot exceed what the intensity-zero source allows.
        let iv = [(0.0, 0.9, 0.9), (1e-4, 0.1, 0.1)];
        assert!(matches!(certified_bounds(&iv, 1, 10, (0.0, 1.0)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn poisson_tail_matches_complement() {
        for mu in [0.3, 1.5, 4.0] {
            let head: f64 = (0..=10).map(|k| poisson_unchecked(mu, k)).sum();
            assert!((poisson_tail(mu, 10) - (1.0 - head)).abs() < 1e-15);
        }
        assert_eq!(poisson_tail(0.0, 10), 0.0);
        assert!(poisson_tail(1e-4, 10) > 0.0);
    }

    #[test]
    fn clamp_never_inverts() {
        let b = BoundPair::new(1.2, 1.5, 0.0).clamp(0.0, 1.0);
        assert!(b.lower <= b.upper);
        let b = BoundPair::new(-0.5, -0.1, 0.0).clamp(0.0, 1.0);
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let t = YieldTable::exact(&[0.5, 0.0], &ChannelParams::practical(10.0, 1e-3, 0.05)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"intensity,config,observable,value,halfwidth\n"));
        assert_eq!(YieldTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn exact_assembly_matches_thermal_closed_forms() {
        let ch = ChannelParams::practical(10.0, 1e-3, 0.0);
        let coeffs = crate::specfun::region_coefficients(2.457, crate::specfun::VacuumFactor::Physical).unwrap();
        let b = assemble_tagged_bounds(&ExactYields(&ch), BoundPair::exact(0.0), 0.924, &coeffs).unwrap();
        let t = crate::channel::thermal_tags(0.924, &ch, &coeffs).unwrap();
        assert!((b.q11.lower - t.q11).abs() < 1e-9 * t.q11);
        assert!((b.q22.lower - t.q22).abs() < 1e-9 * t.q22);
        assert!((b.e11().unwrap().upper - t.e11).abs() < 1e-9);
    }

    #[test]
    fn noiseless_aligned_channel_allows_zero_phase_error() {
        let ch = ChannelParams::practical(10.0, 0.0, 0.0);
        let coeffs = crate::specfun::region_coefficients(2.0, crate::specfun::VacuumFactor::Physical).unwrap();
        let p = ProtocolParams { mu: 0.9, nu1: 0.03, nu2: 1e-4, tau: 2.0, max_m: 2, cutoff_nc: 10 };
        let table = YieldTable::exact(&p.intensities(), &ch).unwrap();
        let b = assemble_tagged_bounds(&LpYields { table: &table, nc: 10 }, BoundPair::exact(0.0), p.mu, &coeffs).unwrap();
        assert!(b.e11().unwrap().contains(0.0, 1e-12));
        assert!(b.e22().unwrap().contains(0.0, 1e-12));
    }

    #[test]
    fn cat_states_stay_orthogonal_without_channel() {
        let ch = ChannelParams::ideal(0.0);
        let v = cat_state_combination(1, CatSign::Plus, Observable::Psi1Minus, 0.5, &ExactYields(&ch)).unwrap();
        assert!(v.upper.abs() < 1e-12, "{v:?}");
    }

    #[test]
    fn empty_table_is_an_error() {
        let p = ProtocolParams { mu: 0.9, nu1: 0.03, nu2: 1e-4, tau: 2.0, max_m: 2, cutoff_nc: 10 };
        let coeffs = crate::specfun::region_coefficients(2.0, crate::specfun::VacuumFactor::Physical).unwrap();
        let z = ZStats { q_z: 0.1, e_z: 0.01 };
        assert!(key_rate_with_decoy(&YieldTable::new(), &p, &coeffs, z, 1.0).is_err());
    }
}
