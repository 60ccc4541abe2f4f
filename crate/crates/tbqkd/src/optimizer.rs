//! Grid search with optional coordinate-descent refinement over protocol parameters.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{z_gain_and_error, ChannelParams};
use crate::decoy::{key_rate_with_decoy, ProtocolParams, YieldTable, DEFAULT_CUTOFF};
use crate::error::{Error, Result};
use crate::keyrate::i_photon_key_rate_with;
use crate::sim::sig9;
use crate::specfun::{region_coefficients, VacuumFactor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    /// Ideal `i`-photon protocol with exact tagged statistics.
    Ideal { photons: usize },
    /// Worst-case rate from the four-intensity decoy LP on exact yields.
    Decoy { max_m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub nu1: Vec<f64>,
    pub nu2: Vec<f64>,
    pub objective: Objective,
    /// Reconciliation efficiency.
    pub f: f64,
    /// Coordinate-descent sweeps after the grid search (at most 3); 0 is pure grid mode.
    pub refine_sweeps: usize,
    #[serde(default)]
    pub vacuum: VacuumFactor,
}

pub fn logspace(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(lo_exp)];
    }
    (0..n).map(|k| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / (n - 1) as f64)).collect()
}

/// Default threshold grid, steps of 0.203875 from 0.01.
pub fn default_tau_grid() -> Vec<f64> {
    (0..35).map(|k| 0.01 + 0.203875 * k as f64).collect()
}

impl SearchSpace {
    pub fn ideal(photons: usize) -> Self {
        SearchSpace {
            mu: logspace(-2.0, 1.0, 30),
            tau: default_tau_grid(),
            nu1: vec![0.0],
            nu2: vec![0.0],
            objective: Objective::Ideal { photons },
            f: 1.0,
            refine_sweeps: 0,
            vacuum: VacuumFactor::Physical,
        }
    }

    pub fn decoy(max_m: usize) -> Self {
        SearchSpace {
            mu: logspace(-2.0, 1.0, 30),
            tau: default_tau_grid(),
            nu1: logspace(-3.0, -0.5, 6),
            nu2: vec![1e-4],
            objective: Objective::Decoy { max_m },
            f: 1.0,
            refine_sweeps: 0,
            vacuum: VacuumFactor::Physical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("mu", &self.mu), ("tau", &self.tau), ("nu1", &self.nu1), ("nu2", &self.nu2)] {
            if g.is_empty() || g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} grid must be non-empty and strictly increasing")));
            }
        }
        if self.refine_sweeps > 3 {
            return Err(Error::Config("at most 3 refinement sweeps".into()));
        }
        if !(self.f >= 1.0) {
            return Err(Error::Config(format!("reconciliation efficiency must be >= 1, got {}", self.f)));
        }
        match self.objective {
            Objective::Ideal { photons } if (1..=crate::specfun::MAX_TAG).contains(&photons) => Ok(()),
            Objective::Decoy { max_m } if (1..=2).contains(&max_m) => Ok(()),
            o => Err(Error::Config(format!("unsupported objective {o:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub mu: f64,
    pub tau: f64,
    pub nu1: f64,
    pub nu2: f64,
}

impl Point {
    fn key(&self) -> [f64; 4] {
        [self.mu, self.tau, self.nu1, self.nu2]
    }

    fn get(&self, i: usize) -> f64 {
        self.key()[i]
    }

    fn with(mut self, i: usize, v: f64) -> Self {
        match i {
            0 => self.mu = v,
            1 => self.tau = v,
            2 => self.nu1 = v,
            _ => self.nu2 = v,
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub params: Point,
    pub rate: f64,
    pub e_z: f64,
}

/// Objective value at one point; infeasible points score `-inf`.
pub fn evaluate(space: &SearchSpace, channel: &ChannelParams, p: &Point) -> Result<(f64, f64)> {
    let coeffs = match region_coefficients(p.tau, space.vacuum) {
        Ok(c) => c,
        Err(_) => return Ok((f64::NEG_INFINITY, f64::NAN)),
    };
    let z = match z_gain_and_error(p.mu, channel.eta(), channel.excess_noise_xi, p.tau) {
        Ok(z) => z,
        Err(Error::Numeric(_)) => return Ok((f64::NEG_INFINITY, f64::NAN)),
        Err(e) => return Err(e),
    };
    let rate = match space.objective {
        Objective::Ideal { photons } => i_photon_key_rate_with(photons, p.mu, &coeffs, channel, space.f)?.rate.raw,
        Objective::Decoy { max_m } => {
            let protocol = ProtocolParams { mu: p.mu, nu1: p.nu1, nu2: p.nu2, tau: p.tau, max_m, cutoff_nc: DEFAULT_CUTOFF };
            let table = YieldTable::exact(&protocol.intensities(), channel)?;
            match key_rate_with_decoy(&table, &protocol, &coeffs, z, space.f) {
                Ok(r) => r.raw,
                Err(Error::UndefinedRate(_)) | Err(Error::Infeasible(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            }
        }
    };
    Ok((rate, z.e_z))
}

/// Higher rate wins; ties go to the lexicographically smaller parameters.
fn better(a: &Best, b: &Best) -> bool {
    match a.rate.total_cmp(&b.rate) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.params.key().partial_cmp(&b.params.key()) == Some(Ordering::Less),
    }
}

fn grid(space: &SearchSpace) -> Vec<Point> {
    let mut pts = Vec::new();
    for &mu in &space.mu {
        for &tau in &space.tau {
            for &nu1 in &space.nu1 {
                for &nu2 in &space.nu2 {
                    pts.push(Point { mu, tau, nu1, nu2 });
                }
            }
        }
    }
    pts
}

/// Best point of the grid, then up to `refine_sweeps` golden-section passes per coordinate
/// within the neighbouring grid cells.
pub fn optimize(space: &SearchSpace, channel: &ChannelParams) -> Result<Best> {
    space.validate()?;
    channel.validate()?;
    let pts = grid(space);
    let scored: Vec<Best> =
        pts.par_iter().map(|p| evaluate(space, channel, p).map(|(rate, e_z)| Best { params: *p, rate, e_z })).collect::<Result<_>>()?;
    let mut best = scored[0];
    for b in &scored[1..] {
        if better(b, &best) {
            best = *b;
        }
    }
    let grids = [&space.mu, &space.tau, &space.nu1, &space.nu2];
    for _ in 0..space.refine_sweeps {
        let before = best.rate;
        for (i, g) in grids.iter().enumerate() {
            if g.len() < 2 {
                continue;
            }
            let x = best.params.get(i);
            let k = g.iter().position(|&v| v >= x).unwrap_or(g.len() - 1);
            let (mut a, mut b) = (g[k.saturating_sub(1)], g[(k + 1).min(g.len() - 1)]);
            let r = 0.5 * (5f64.sqrt() - 1.0);
            let f = |v: f64| evaluate(space, channel, &best.params.with(i, v)).map(|(rate, _)| rate);
            for _ in 0..30 {
                let (x1, x2) = (b - r * (b - a), a + r * (b - a));
                if f(x1)? >= f(x2)? {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let cand = best.params.with(i, 0.5 * (a + b));
            let (rate, e_z) = evaluate(space, channel, &cand)?;
            if rate > best.rate {
                best = Best { params: cand, rate, e_z };
            }
        }
        if best.rate <= before {
            break;
        }
    }
    Ok(best)
}

pub const CSV_HEADER: [&str; 7] = ["distance_km", "mu", "tau", "nu1", "nu2", "rate", "e_z"];

/// Writes `distance_km,mu,tau,nu1,nu2,rate,e_z` rows with 9 significant digits.
pub fn write_csv<W: Write>(rows: &[(f64, Best)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for (d, b) in rows {
        let p = b.params;
        w.write_record([d, &p.mu, &p.tau, &p.nu1, &p.nu2, &b.rate, &b.e_z].map(|v| sig9(*v)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids_hold_tabulated_values() {
        let s = SearchSpace::ideal(2);
        assert!(s.mu.iter().any(|&m| (m - 1.487).abs() < 1e-3));
        assert!(s.tau.iter().any(|&t| (t - 1.641).abs() < 1e-3));
        s.validate().unwrap();
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let mut s = SearchSpace::ideal(1);
        s.mu = vec![0.5];
        s.tau = vec![1.2];
        let ch = ChannelParams::ideal(5.0);
        let b = optimize(&s, &ch).unwrap();
        assert_eq!((b.params.mu, b.params.tau), (0.5, 1.2));
        assert_eq!(b.rate, evaluate(&s, &ch, &b.params).unwrap().0);
    }

    #[test]
    fn bad_grid_is_a_config_error() {
        let mut s = SearchSpace::ideal(1);
        s.tau = vec![1.0, 1.0];
        assert!(optimize(&s, &ChannelParams::ideal(0.0)).unwrap_err().is_config());
    }

    #[test]
    fn ties_prefer_smaller_parameters() {
        let p = |mu| Best { params: Point { mu, tau: 1.0, nu1: 0.0, nu2: 0.0 }, rate: 0.1, e_z: 0.0 };
        assert!(better(&p(0.5), &p(0.6)));
        assert!(!better(&p(0.6), &p(0.5)));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let b = Best { params: Point { mu: 1.487, tau: 1.641, nu1: 0.0, nu2: 0.0 }, rate: 0.123456789123, e_z: 0.05 };
        let mut buf = Vec::new();
        write_csv(&[(0.0, b)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "distance_km,mu,tau,nu1,nu2,rate,e_z\n0,1.487,1.641,0,0,0.123456789,0.05\n");
    }
}
