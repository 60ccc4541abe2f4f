//! Python bindings: channel statistics, key rates, decoy bounds and the optimizer.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tbqkd::channel::{z_gain_and_error as z_stats, ChannelParams};
use tbqkd::decoy::{key_rate_exact_yields, key_rate_with_decoy, ProtocolParams, YieldTable, DEFAULT_CUTOFF};
use tbqkd::finite::{azuma_deviation as azuma, AzumaQuery};
use tbqkd::keyrate::{i_photon_key_rate as ideal_rate, plob_bound as plob};
use tbqkd::optimizer::{optimize, SearchSpace};
use tbqkd::specfun::{region_coefficients, VacuumFactor};
use tbqkd::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        e if e.is_config() => PyValueError::new_err(e.to_string()),
        Error::Io(m) => PyIOError::new_err(m),
        e => PyArithmeticError::new_err(e.to_string()),
    }
}

fn channel(distance_km: f64, xi: f64, delta_deg: f64) -> PyResult<ChannelParams> {
    let ch = ChannelParams::practical(distance_km, xi, delta_deg.to_radians());
    ch.validate().map_err(py_err)?;
    Ok(ch)
}

/// Transmittance of `distance_km` of fiber at the default attenuation.
#[pyfunction]
fn transmittance(distance_km: f64) -> PyResult<f64> {
    Ok(channel(distance_km, 0.0, 0.0)?.eta())
}

/// Z-basis gain and error rate as `(q_z, e_z)`.
#[pyfunction]
#[pyo3(signature = (mu, tau, distance_km, xi=0.0))]
fn z_gain_and_error(mu: f64, tau: f64, distance_km: f64, xi: f64) -> PyResult<(f64, f64)> {
    let ch = channel(distance_km, xi, 0.0)?;
    let z = z_stats(mu, ch.eta(), xi, tau).map_err(py_err)?;
    Ok((z.q_z, z.e_z))
}

/// Raw (possibly negative) reverse-reconciliation rate of the ideal `i`-photon protocol.
#[pyfunction]
#[pyo3(signature = (i, mu, tau, distance_km, xi=0.0, delta_deg=0.0))]
fn i_photon_key_rate(i: usize, mu: f64, tau: f64, distance_km: f64, xi: f64, delta_deg: f64) -> PyResult<f64> {
    Ok(ideal_rate(i, mu, tau, &channel(distance_km, xi, delta_deg)?).map_err(py_err)?.rate.raw)
}

#[pyfunction]
fn plob_bound(eta: f64) -> PyResult<f64> {
    plob(eta).map_err(py_err)
}

/// Two-photon rates `(decoy_lp, infinite_decoy)` for a four-intensity protocol.
#[pyfunction]
#[pyo3(signature = (mu, tau, nu1, nu2, distance_km, xi=0.0, delta_deg=0.0))]
fn decoy_key_rates(mu: f64, tau: f64, nu1: f64, nu2: f64, distance_km: f64, xi: f64, delta_deg: f64) -> PyResult<(f64, f64)> {
    let ch = channel(distance_km, xi, delta_deg)?;
    let p = ProtocolParams { mu, nu1, nu2, tau, max_m: 2, cutoff_nc: DEFAULT_CUTOFF };
    let run = || -> tbqkd::Result<(f64, f64)> {
        p.validate()?;
        let coeffs = region_coefficients(tau, VacuumFactor::Physical)?;
        let z = z_stats(mu, ch.eta(), ch.excess_noise_xi, tau)?;
        let table = YieldTable::exact(&p.intensities(), &ch)?;
        Ok((key_rate_with_decoy(&table, &p, &coeffs, z, 1.0)?.raw, key_rate_exact_yields(&p, &ch, &coeffs, z, 1.0)?.raw))
    };
    run().map_err(py_err)
}

/// Grid-searched optimum of the ideal `i`-photon protocol as a dict.
#[pyfunction]
#[pyo3(signature = (photons, distance_km, xi=0.0, delta_deg=0.0, refine_sweeps=0))]
fn optimize_ideal(py: Python<'_>, photons: usize, distance_km: f64, xi: f64, delta_deg: f64, refine_sweeps: usize) -> PyResult<Py<PyDict>> {
    let ch = channel(distance_km, xi, delta_deg)?;
    let space = SearchSpace { refine_sweeps, ..SearchSpace::ideal(photons) };
    let b = py.allow_threads(|| optimize(&space, &ch)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("mu", b.params.mu)?;
    d.set_item("tau", b.params.tau)?;
    d.set_item("rate", b.rate)?;
    d.set_item("e_z", b.e_z)?;
    Ok(d.unbind())
}

/// Azuma deviation `c sqrt(n ln(1/epsilon) / 2)`.
#[pyfunction]
fn azuma_deviation(n: u64, c: f64, epsilon: f64) -> PyResult<f64> {
    azuma(&AzumaQuery { n, c, epsilon }).map_err(py_err)
}

#[pymodule]
fn tbqkd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(transmittance, m)?)?;
    m.add_function(wrap_pyfunction!(z_gain_and_error, m)?)?;
    m.add_function(wrap_pyfunction!(i_photon_key_rate, m)?)?;
    m.add_function(wrap_pyfunction!(plob_bound, m)?)?;
    m.add_function(wrap_pyfunction!(decoy_key_rates, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_ideal, m)?)?;
    m.add_function(wrap_pyfunction!(azuma_deviation, m)?)?;
    Ok(())
}
