//! Homodyne tomography: pattern-function estimators of Fock-basis observables from
//! phase-randomized quadrature samples, plus a Gaussian sampler to validate them.
//!
//! Quadratures are in shot-noise units (`Q = a e^{-i phi} + a^dag e^{i phi}`, vacuum variance 1)
//! and rescaled by `1/sqrt(eta_det)` for a detector of efficiency `eta_det`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::specfun::{factorial, generalized_laguerre, integrate_adaptive, GaussLegendre};
use crate::yields::{Observable, SourceConfig};

/// Efficiency substituted for a perfect detector; the damped kernel stays well defined.
pub const UNIT_DETECTOR_ETA: f64 = 1.0 - 1e-9;
/// Lattice half-range; quadratures beyond it are evaluated exactly.
pub const LATTICE_Q_MAX: f64 = 20.0;
/// Records per deterministic sampling block.
pub const BLOCK: usize = 1 << 16;

const LATTICE_MAGIC: &[u8; 8] = b"TBQKDKL1";
const LATTICE_VERSION: u32 = 1;
const INTERP_BUDGET: f64 = 1e-7;
const BOUND_TAIL_Q: f64 = 30.0;

/// Estimator of `|n><n+d|` for a detector of efficiency `eta_det`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub n: usize,
    pub d: usize,
    pub eta_det: f64,
}

impl KernelSpec {
    pub fn new(n: usize, d: usize, eta_det: f64) -> Result<Self> {
        let s = KernelSpec { n, d, eta_det };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_det > 0.5 && self.eta_det <= 1.0) {
            return Err(Error::UnboundedKernel(self.eta_det));
        }
        Ok(())
    }

    fn eta(&self) -> f64 {
        self.eta_det.min(UNIT_DETECTOR_ETA)
    }

    /// Gaussian damping rate `(2 eta - 1) / (2 eta)` of the integrand.
    fn gamma(&self) -> f64 {
        let eta = self.eta();
        (2.0 * eta - 1.0) / (2.0 * eta)
    }

    fn norm(&self) -> f64 {
        (factorial(self.n) / factorial(self.n + self.d)).sqrt()
    }

    /// `R = exp(i d phi) * sign * 2 int_0^inf h(k) trig(kq) dk`; this is `sign` and whether trig is sine.
    fn parity(&self) -> (f64, bool) {
        let d = self.d;
        if d % 2 == 0 {
            (if (d / 2) % 2 == 0 { 1.0 } else { -1.0 }, false)
        } else {
            (if d.div_ceil(2) % 2 == 0 { -1.0 } else { 1.0 }, true)
        }
    }

    /// Radial integrand `k^{d+1} exp(-gamma k^2) L_n^d(k^2)`.
    fn radial(&self, k: f64) -> f64 {
        let l = generalized_laguerre(self.n, self.d, k * k).expect("laguerre order is small");
        k.powi(self.d as i32 + 1) * (-self.gamma() * k * k).exp() * l
    }

    /// Cutoff where `exp(-gamma k^2) k^p` has fallen below 1e-16.
    fn k_max(&self) -> f64 {
        let g = self.gamma();
        let p = (self.d + 1 + 2 * self.n) as f64;
        let mut k = (p / (2.0 * g)).sqrt().max(1.0);
        while (-g * k * k).exp() * k.powf(p) >= 1e-16 {
            k *= 1.05;
        }
        k
    }
}

/// Panels short enough that `cos(kq)` turns by at most one radian in each.
fn panels(k_max: f64, q: f64) -> Vec<(f64, f64)> {
    let w = (1.0 / (q.abs() + 1.0)).min(0.5);
    let n = (k_max / w).ceil() as usize;
    let w = k_max / n as f64;
    (0..n).map(|i| (i as f64 * w, (i + 1) as f64 * w)).collect()
}

/// Real profile `g(q)` with `R(q, phi) = exp(i d phi) g(q)`, by adaptive quadrature.
pub fn kernel_profile(spec: &KernelSpec, q: f64) -> Result<f64> {
    spec.validate()?;
    let (sign, sine) = spec.parity();
    let ps = panels(spec.k_max(), q);
    let tol = 1e-12;
    let mut acc = 0.0;
    for (a, b) in ps {
        acc += if sine {
            integrate_adaptive(|k| spec.radial(k) * (k * q).sin(), a, b, tol)?
        } else {
            integrate_adaptive(|k| spec.radial(k) * (k * q).cos(), a, b, tol)?
        };
    }
    Ok(2.0 * sign * spec.norm() * acc)
}

/// `R_eta[|n><n+d|](q, phi)`.
pub fn kernel_value(spec: &KernelSpec, q: f64, phi: f64) -> Result<Complex64> {
    Ok(Complex64::from_polar(1.0, spec.d as f64 * phi) * kernel_profile(spec, q)?)
}

/// `(g(q), g'(q))` by a fixed composite rule, for lattice construction.
fn profile_and_slope(spec: &KernelSpec, rule: &GaussLegendre, k_max: f64, q: f64) -> (f64, f64) {
    let (sign, sine) = spec.parity();
    let (mut g, mut dg) = (0.0, 0.0);
    for (a, b) in panels(k_max, q) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let k = mid + half * x;
            let h = spec.radial(k) * w * half;
            let (s, c) = (k * q).sin_cos();
            if sine {
                g += h * s;
                dg += h * k * c;
            } else {
                g += h * c;
                dg -= h * k * s;
            }
        }
    }
    let f = 2.0 * sign * spec.norm();
    (f * g, f * dg)
}

/// Tabulated profile with cubic Hermite interpolation on a uniform grid over `[-q_max, q_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelLattice {
    pub spec: KernelSpec,
    pub q_max: f64,
    pub step: f64,
    /// `(g, g')` at `-q_max + i step`.
    pub nodes: Vec<(f64, f64)>,
}

impl KernelLattice {
    /// Grid step from `|g''''| <= 2 s int k^4 |h|`, so the Hermite error stays within budget.
    pub fn build(spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        let k_max = spec.k_max();
        let m4 = 2.0 * spec.norm() * integrate_adaptive(|k| k.powi(4) * spec.radial(k).abs(), 0.0, k_max, 1e-10)?;
        let step = (384.0 * INTERP_BUDGET / m4).powf(0.25).min(0.05);
        let count = (2.0 * LATTICE_Q_MAX / step).ceil() as usize + 1;
        let step = 2.0 * LATTICE_Q_MAX / (count - 1) as f64;
        let rule = GaussLegendre::new(20);
        let nodes = (0..count).into_par_iter().map(|i| profile_and_slope(&spec, &rule, k_max, -LATTICE_Q_MAX + i as f64 * step)).collect();
        Ok(KernelLattice { spec, q_max: LATTICE_Q_MAX, step, nodes })
    }

    /// Interpolated `g(q)`; exact evaluation outside the grid.
    pub fn profile(&self, q: f64) -> f64 {
        let t = (q + self.q_max) / self.step;
        if !(t >= 0.0) || t >= (self.nodes.len() - 1) as f64 {
            return kernel_profile(&self.spec, q).unwrap_or(f64::NAN);
        }
        let i = t as usize;
        let u = t - i as f64;
        let (y0, d0) = self.nodes[i];
        let (y1, d1) = self.nodes[i + 1];
        let h = self.step;
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * y0 + (u3 - 2.0 * u2 + u) * h * d0 + (-2.0 * u3 + 3.0 * u2) * y1 + (u3 - u2) * h * d1
    }

    pub fn value(&self, q: f64, phi: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.spec.d as f64 * phi) * self.profile(q)
    }

    /// Binary cache: magic, u32 version, n, d as u32, eta, q_max, step as f64, u64 count, then pairs. Little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(LATTICE_MAGIC)?;
        w.write_all(&LATTICE_VERSION.to_le_bytes())?;
        w.write_all(&(self.spec.n as u32).to_le_bytes())?;
        w.write_all(&(self.spec.d as u32).to_le_bytes())?;
        for v in [self.spec.eta_det, self.q_max, self.step] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.nodes.len() as u64).to_le_bytes())?;
        for &(g, dg) in &self.nodes {
            w.write_all(&g.to_le_bytes())?;
            w.write_all(&dg.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != LATTICE_MAGIC {
            return Err(Error::Io("not a kernel lattice file".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut u32_ = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut b4)?;
            Ok(u32::from_le_bytes(b4))
        };
        let version = u32_(&mut r)?;
        if version != LATTICE_VERSION {
            return Err(Error::Io(format!("kernel lattice version {version}, expected {LATTICE_VERSION}")));
        }
        let n = u32_(&mut r)? as usize;
        let d = u32_(&mut r)? as usize;
        let mut f64_ = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let eta_det = f64_(&mut r)?;
        let q_max = f64_(&mut r)?;
        let step = f64_(&mut r)?;
        let mut b8c = [0u8; 8];
        r.read_exact(&mut b8c)?;
        let count = u64::from_le_bytes(b8c) as usize;
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            let g = f64_(&mut r)?;
            let dg = f64_(&mut r)?;
            nodes.push((g, dg));
        }
        if count < 2 {
            return Err(Error::Io("kernel lattice has fewer than two nodes".into()));
        }
        Ok(KernelLattice { spec: KernelSpec::new(n, d, eta_det)?, q_max, step, nodes })
    }

    /// Loads `dir/kernel_n{n}_d{d}_eta{eta}.bin`, building and writing it when missing or unreadable.
    pub fn load_or_build(dir: &Path, spec: KernelSpec) -> Result<Self> {
        let path = dir.join(format!("kernel_n{}_d{}_eta{:016x}.bin", spec.n, spec.d, spec.eta_det.to_bits()));
        if let Ok(f) = std::fs::File::open(&path) {
            if let Ok(l) = Self::read_from(std::io::BufReader::new(f)) {
                if l.spec == spec {
                    return Ok(l);
                }
            }
        }
        let l = Self::build(spec)?;
        std::fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        l.write_to(&mut w)?;
        w.flush()?;
        Ok(l)
    }
}

/// Process-wide lattice cache.
type LatticeCache = Mutex<HashMap<(usize, usize, u64), Arc<KernelLattice>>>;

pub fn lattice(spec: KernelSpec) -> Result<Arc<KernelLattice>> {
    static CACHE: OnceLock<LatticeCache> = OnceLock::new();
    let key = (spec.n, spec.d, spec.eta_det.to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(l) = cache.lock().expect("lattice cache poisoned").get(&key) {
        return Ok(l.clone());
    }
    let l = Arc::new(KernelLattice::build(spec)?);
    cache.lock().expect("lattice cache poisoned").insert(key, l.clone());
    Ok(l)
}

/// Upper bound on `|R_eta[|n><n+d|]|` over all `(q, phi)`.
///
/// Grid maximum over `|q| <= 30` refined by golden-section search, combined with the
/// integration-by-parts tail `|g(q)| <= 2 s (|h'(0)| + int |h''|) / q^2` beyond.
pub fn kernel_bound(spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    let k_max = spec.k_max();
    let rule = GaussLegendre::new(20);
    let g = |q: f64| profile_and_slope(spec, &rule, k_max, q).0.abs();
    let step = 0.01;
    let n = (BOUND_TAIL_Q / step) as usize;
    // The profile is even or odd, so |g| is even.
    let grid: Vec<f64> = (0..=n).into_par_iter().map(|i| g(i as f64 * step)).collect();
    let mut best = grid.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    for &i in order.iter().take(8) {
        let (mut a, mut b) = ((i as f64 - 1.0).max(0.0) * step, (i as f64 + 1.0) * step);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            if g(x1) > g(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        best = best.max(g(0.5 * (a + b)));
    }
    // Tail: second differences of the radial integrand.
    let hs = 1e-3;
    let m = (k_max / hs).ceil() as usize;
    let h = |k: f64| spec.radial(k);
    let dh0 = (h(hs) - h(0.0)) / hs;
    let curv: f64 = (1..m).map(|i| ((h((i + 1) as f64 * hs) - 2.0 * h(i as f64 * hs) + h((i - 1) as f64 * hs)) / hs).abs()).sum();
    let tail = 1.1 * 2.0 * spec.norm() * (dh0.abs() + curv) / (BOUND_TAIL_Q * BOUND_TAIL_Q);
    Ok(best.max(tail) * (1.0 + 1e-9))
}

/// A Gaussian single-mode state: displaced thermal with amplitude `alpha` and quadrature variance `1 + xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMode {
    pub alpha: Complex64,
    pub xi: f64,
}

impl GaussianMode {
    pub fn coherent(alpha: Complex64) -> Self {
        GaussianMode { alpha, xi: 0.0 }
    }

    pub fn vacuum() -> Self {
        Self::coherent(Complex64::new(0.0, 0.0))
    }

    /// Rescaled quadrature law after a detector of efficiency `eta_det`.
    pub fn detected(self, eta_det: f64) -> Self {
        GaussianMode { alpha: self.alpha, xi: self.xi + (1.0 - eta_det) / eta_det }
    }

    pub fn mean(&self, phi: f64) -> f64 {
        2.0 * (self.alpha * Complex64::from_polar(1.0, -phi)).re
    }

    /// Fock element `<m|rho|n>`.
    pub fn element(&self, m: usize, n: usize) -> Complex64 {
        crate::channel::displaced_thermal_element(self.alpha, 2.0 / (2.0 + self.xi), m, n)
    }
}

/// Draws from `N(2 Re(alpha e^{-i phi}), 1 + xi)`.
pub fn sample_quadrature<R: Rng + ?Sized>(mode: &GaussianMode, phi: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mode.mean(phi) + (1.0 + mode.xi).sqrt() * z
}

/// One two-mode homodyne outcome; LO phases lie in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRecord {
    pub phi1: f64,
    pub q1: f64,
    pub phi2: f64,
    pub q2: f64,
}

/// Two-mode states the sampler can draw from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TwoModeState {
    Product([GaussianMode; 2]),
    /// Phase-randomized source configuration at intensity `mu` through a thermal-loss channel.
    Source {
        config: SourceConfig,
        mu: f64,
        eta: f64,
        xi: f64,
        delta: f64,
    },
}

impl TwoModeState {
    pub fn source(config: SourceConfig, mu: f64, channel: &ChannelParams) -> Self {
        TwoModeState::Source { config, mu, eta: channel.eta(), xi: channel.excess_noise_xi, delta: channel.misalignment_delta }
    }

    /// The two output modes for one emission, with Alice's key bit for key-basis sources.
    ///
    /// Bit 0 leaves mode 1 empty and sends the pulse in mode 2.
    pub fn emit<R: Rng + ?Sized>(&self, rng: &mut R) -> ([GaussianMode; 2], Option<u8>) {
        match *self {
            TwoModeState::Product(m) => (m, None),
            TwoModeState::Source { config, mu, eta, xi, delta } => {
                let theta = rng.random::<f64>() * 2.0 * PI;
                let mode = |s: f64, ph: f64| GaussianMode { alpha: Complex64::from_polar((eta * mu * s).sqrt(), ph), xi };
                match config.phase() {
                    None => {
                        if rng.random::<bool>() {
                            ([mode(0.0, 0.0), mode(1.0, theta)], Some(0))
                        } else {
                            ([mode(1.0, theta), mode(0.0, 0.0)], Some(1))
                        }
                    }
                    Some(phi) => ([mode(0.5, theta), mode(0.5, theta + phi + delta)], None),
                }
            }
        }
    }

    pub fn modes<R: Rng + ?Sized>(&self, rng: &mut R) -> [GaussianMode; 2] {
        self.emit(rng).0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> QuadratureRecord {
        let [m1, m2] = self.modes(rng);
        let phi1 = rng.random::<f64>() * PI;
        let phi2 = rng.random::<f64>() * PI;
        QuadratureRecord { phi1, q1: sample_quadrature(&m1, phi1, rng), phi2, q2: sample_quadrature(&m2, phi2, rng) }
    }
}

/// Stream for block `block` of a run seeded with `seed`.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// `n` records in fixed-size blocks; the output does not depend on the thread count.
pub fn sample_records(state: &TwoModeState, n: usize, seed: u64) -> Vec<QuadratureRecord> {
    let blocks = n.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = block_rng(seed, b as u64);
            let len = BLOCK.min(n - b * BLOCK);
            (0..len).map(move |_| state.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Single-mode operator `|ket><bra|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeOp {
    pub ket: usize,
    pub bra: usize,
}

impl ModeOp {
    fn spec(self, eta_det: f64) -> KernelSpec {
        KernelSpec { n: self.ket.min(self.bra), d: self.ket.abs_diff(self.bra), eta_det }
    }

    /// `R[|ket><bra|] = conj R[|bra><ket|]`.
    fn conjugated(self) -> bool {
        self.ket > self.bra
    }
}

/// The single-mode operator pairs `(coef, mode 1, mode 2)` whose kernel products estimate `obs`.
pub fn kernel_terms(obs: Observable) -> Vec<(f64, ModeOp, ModeOp)> {
    // coef <ab|rho|cd> = coef Tr[(|c><a| x |d><b|) rho]
    obs.terms().into_iter().map(|t| (t.coef, ModeOp { ket: t.ket.0, bra: t.bra.0 }, ModeOp { ket: t.ket.1, bra: t.bra.1 })).collect()
}

/// Kernel bound of a two-mode observable: `sum |coef| r_1 r_2` over its terms.
pub fn observable_kernel_bound(obs: Observable, eta_det: f64) -> Result<f64> {
    let mut cache: HashMap<ModeOp, f64> = HashMap::new();
    let mut r = |op: ModeOp| -> Result<f64> {
        if let Some(&v) = cache.get(&op) {
            return Ok(v);
        }
        let v = kernel_bound(&op.spec(eta_det))?;
        cache.insert(op, v);
        Ok(v)
    };
    let mut total = 0.0;
    for (c, a, b) in kernel_terms(obs) {
        total += c.abs() * r(a)? * r(b)?;
    }
    Ok(total)
}

/// Evaluates several observables' kernels on a record, sharing single-mode lattice lookups.
pub struct ObservableKernels {
    ops: Vec<(ModeOp, Arc<KernelLattice>)>,
    /// Per observable: `(coef, op index on mode 1, op index on mode 2)`.
    plans: Vec<Vec<(f64, usize, usize)>>,
}

impl ObservableKernels {
    pub fn new(observables: &[Observable], eta_det: f64) -> Result<Self> {
        KernelSpec { n: 0, d: 0, eta_det }.validate()?;
        let mut ops: Vec<(ModeOp, Arc<KernelLattice>)> = Vec::new();
        let index = |op: ModeOp, ops: &mut Vec<(ModeOp, Arc<KernelLattice>)>| -> Result<usize> {
            if let Some(i) = ops.iter().position(|(o, _)| *o == op) {
                return Ok(i);
            }
            ops.push((op, lattice(op.spec(eta_det))?));
            Ok(ops.len() - 1)
        };
        let mut plans = Vec::with_capacity(observables.len());
        for &obs in observables {
            let mut plan = Vec::new();
            for (c, a, b) in kernel_terms(obs) {
                plan.push((c, index(a, &mut ops)?, index(b, &mut ops)?));
            }
            plans.push(plan);
        }
        Ok(ObservableKernels { ops, plans })
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    fn mode_values(&self, q: f64, phi: f64, out: &mut Vec<Complex64>) {
        out.clear();
        for (op, l) in &self.ops {
            let v = l.value(q, phi);
            out.push(if op.conjugated() { v.conj() } else { v });
        }
    }

    /// Writes the real kernel value of every observable for `rec` into `out`.
    pub fn eval(&self, rec: &QuadratureRecord, scratch: &mut (Vec<Complex64>, Vec<Complex64>), out: &mut [f64]) {
        let (v1, v2) = scratch;
        self.mode_values(rec.q1, rec.phi1, v1);
        self.mode_values(rec.q2, rec.phi2, v2);
        for (o, plan) in out.iter_mut().zip(&self.plans) {
            *o = plan.iter().map(|&(c, a, b)| c * (v1[a] * v2[b]).re).sum();
        }
    }
}

/// Running mean and sum of squared deviations (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
    pub sum: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n as f64;
        self.sum += o.sum;
        self.n = n;
    }

    /// Delete-one jackknife standard error of the mean; for a mean it equals `s / sqrt(n)`.
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        (self.m2 / (self.n as f64 * (self.n - 1) as f64)).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean, std_error: self.std_error() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Delete-one jackknife of a sample mean, computed from the leave-one-out means.
fn jackknife(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Missing("no quadrature records".into()));
    }
    let total: f64 = values.iter().sum();
    let mean = total / n as f64;
    if n == 1 {
        return Ok((mean, f64::INFINITY));
    }
    let loo = |x: f64| (total - x) / (n - 1) as f64;
    let loo_mean = values.iter().map(|&x| loo(x)).sum::<f64>() / n as f64;
    let var = values.iter().map(|&x| (loo(x) - loo_mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Ok((mean, var.sqrt()))
}

/// Mean of `R[obs1](q1, phi1) R[obs2](q2, phi2)` with jackknife standard errors of its real and imaginary parts.
pub fn estimate_two_mode(records: &[QuadratureRecord], obs1: KernelSpec, obs2: KernelSpec) -> Result<(Complex64, Complex64)> {
    if records.is_empty() {
        return Err(Error::Missing("no quadrature records".into()));
    }
    let (l1, l2) = (lattice(obs1)?, lattice(obs2)?);
    let prods: Vec<Complex64> = records.iter().map(|r| l1.value(r.q1, r.phi1) * l2.value(r.q2, r.phi2)).collect();
    let re: Vec<f64> = prods.iter().map(|z| z.re).collect();
    let im: Vec<f64> = prods.iter().map(|z| z.im).collect();
    let (mr, sr) = jackknife(&re)?;
    let (mi, si) = jackknife(&im)?;
    Ok((Complex64::new(mr, mi), Complex64::new(sr, si)))
}

/// Estimates of several two-mode observables from the same records.
pub fn estimate_observables(records: &[QuadratureRecord], observables: &[Observable], eta_det: f64) -> Result<Vec<Estimate>> {
    if records.is_empty() {
        return Err(Error::Missing("no quadrature records".into()));
    }
    let k = ObservableKernels::new(observables, eta_det)?;
    let mut acc = vec![Moments::default(); k.len()];
    let mut scratch = (Vec::new(), Vec::new());
    let mut out = vec![0.0; k.len()];
    for r in records {
        k.eval(r, &mut scratch, &mut out);
        for (a, &v) in acc.iter_mut().zip(&out) {
            a.push(v);
        }
    }
    Ok(acc.iter().map(Moments::estimate).collect())
}

/// Samples `n` records from `state` and accumulates kernel moments without storing them.
///
/// Blocks run in parallel and merge in block order, so results depend only on `(seed, n)`.
pub fn simulate_moments(state: &TwoModeState, kernels: &ObservableKernels, n: usize, seed: u64) -> Vec<Moments> {
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<Vec<Moments>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b as u64);
            let mut acc = vec![Moments::default(); kernels.len()];
            let mut scratch = (Vec::new(), Vec::new());
            let mut out = vec![0.0; kernels.len()];
            for _ in 0..BLOCK.min(n - b * BLOCK) {
                let r = state.sample(&mut rng);
                kernels.eval(&r, &mut scratch, &mut out);
                for (a, &v) in acc.iter_mut().zip(&out) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); kernels.len()];
    for p in &parts {
        for (t, m) in total.iter_mut().zip(p) {
            t.merge(m);
        }
    }
    total
}

/// Closed-form expectation of `obs` on a product state.
pub fn product_expectation(modes: &[GaussianMode; 2], obs: Observable) -> f64 {
    obs.terms().iter().map(|t| t.coef * (modes[0].element(t.bra.0, t.ket.0) * modes[1].element(t.bra.1, t.ket.1)).re).sum()
}

/// Reads `phi1,q1,phi2,q2` with a header.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<QuadratureRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: QuadratureRecord = row?;
        if !(0.0..PI).contains(&r.phi1) || !(0.0..PI).contains(&r.phi2) {
            return Err(Error::Domain(format!("LO phase outside [0, pi): {r:?}")));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(records: &[QuadratureRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["phi1", "q1", "phi2", "q2"])?;
    for r in records {
        w.write_record([r.phi1.to_string(), r.q1.to_string(), r.phi2.to_string(), r.q2.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_profile_matches_dawson_form() {
        // eta = 1: g(q) = 2 (1 - sqrt(2) q F(q / sqrt(2))), F the Dawson integral (scipy).
        let spec = KernelSpec::new(0, 0, 1.0).unwrap();
        let cases = [(0.0, 2.0), (1.0, 0.550443081985847), (2.5, -0.5093910598207536), (6.0, -0.0610006086861703)];
        for (q, want) in cases {
            let g = kernel_profile(&spec, q).unwrap();
            assert!((g - want).abs() < 1e-7, "q={q}: {g} vs {want}");
        }
    }

    #[test]
    fn zero_offset_kernel_is_real_and_phase_free() {
        let spec = KernelSpec::new(1, 0, 0.9).unwrap();
        let a = kernel_value(&spec, 0.7, 0.1).unwrap();
        let b = kernel_value(&spec, 0.7, 2.9).unwrap();
        assert!(a.im.abs() < 1e-10 && (a - b).norm() < 1e-10);
    }

    #[test]
    fn rejects_half_efficiency() {
        assert!(matches!(KernelSpec::new(0, 0, 0.5), Err(Error::UnboundedKernel(_))));
    }

    #[test]
    fn lattice_interpolation_within_budget() {
        for (n, d, eta) in [(0, 0, 1.0), (1, 0, 0.9), (2, 0, 1.0), (0, 1, 1.0), (0, 2, 0.8)] {
            let spec = KernelSpec::new(n, d, eta).unwrap();
            let l = KernelLattice::build(spec).unwrap();
            for i in 0..60 {
                let q = -19.3 + i as f64 * 0.6437;
                let e = (l.profile(q) - kernel_profile(&spec, q).unwrap()).abs();
                assert!(e < 1e-6, "({n},{d},{eta}) q={q}: {e}");
            }
        }
    }

    #[test]
    fn lattice_cache_round_trips() {
        let l = KernelLattice::build(KernelSpec::new(0, 1, 0.95).unwrap()).unwrap();
        let mut buf = Vec::new();
        l.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"TBQKDKL1");
        assert_eq!(KernelLattice::read_from(buf.as_slice()).unwrap(), l);
        buf[0] = b'X';
        assert!(KernelLattice::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = TwoModeState::Product([GaussianMode::coherent(Complex64::new(1.0, 0.0)), GaussianMode::vacuum()]);
        assert_eq!(sample_records(&s, 1000, 7), sample_records(&s, 1000, 7));
        assert_ne!(sample_records(&s, 1000, 7), sample_records(&s, 1000, 8));
    }

    #[test]
    fn jackknife_matches_moments() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let (m, se) = jackknife(&xs).unwrap();
        let mut acc = Moments::default();
        xs.iter().for_each(|&x| acc.push(x));
        assert!((m - acc.mean).abs() < 1e-14 && (se - acc.std_error()).abs() < 1e-12);
    }

    #[test]
    fn empty_records_are_an_error() {
        let s = KernelSpec::new(0, 0, 1.0).unwrap();
        assert!(estimate_two_mode(&[], s, s).is_err());
    }

    #[test]
    fn records_csv_round_trip() {
        let s = TwoModeState::Product([GaussianMode::vacuum(), GaussianMode::vacuum()]);
        let recs = sample_records(&s, 20, 1);
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        assert!(buf.starts_with(b"phi1,q1,phi2,q2\n"));
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), recs);
    }
}
