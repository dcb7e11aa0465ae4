//! Python bindings: a thin layer over `ecd-core` and the scenario runner.
//!
//! Four-vectors cross the boundary as 4-sequences of floats, complex
//! amplitudes as Python `complex`.

use std::path::PathBuf;

use ecd_core::classical::{integrate_worldline, FieldSpec, IntegratorConfig};
use ecd_core::currents::{free_charge_j0 as core_free_charge_j0, light_cone_profile as core_profile};
use ecd_core::ecd::{calibrate_with_hbar, consistency_residual as core_consistency, EcdPair};
use ecd_core::propagators::free_propagator_hbar;
use ecd_core::FourVector;
use ecd_lab::{LabError, RunOptions};
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ecdlab, NumericalError, PyException, "A computation in the ECD lab failed.");
create_exception!(ecdlab, AccuracyError, NumericalError, "An accuracy target was missed.");

fn core_err(e: ecd_core::EcdError) -> PyErr {
    use ecd_core::EcdError::*;
    match e {
        Domain(_) | Range(_) | Unsupported(_) => PyValueError::new_err(e.to_string()),
        Accuracy { .. } => AccuracyError::new_err(e.to_string()),
        _ => NumericalError::new_err(e.to_string()),
    }
}

fn lab_err(e: LabError) -> PyErr {
    match e {
        LabError::Validation(_) => PyValueError::new_err(e.to_string()),
        LabError::Io { .. } => PyOSError::new_err(e.to_string()),
        LabError::Accuracy(_) => AccuracyError::new_err(e.to_string()),
        LabError::Numeric(_) => NumericalError::new_err(e.to_string()),
    }
}

/// ε with 𝒩 = −1/(2π²ħ̄²ε), as a dict.
#[pyfunction]
#[pyo3(signature = (epsilon, hbar = 1.0))]
fn calibrate<'py>(py: Python<'py>, epsilon: f64, hbar: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = calibrate_with_hbar(epsilon, hbar).map_err(core_err)?;
    let d = PyDict::new(py);
    d.set_item("epsilon", c.epsilon)?;
    d.set_item("n", c.n)?;
    d.set_item("hbar", c.hbar)?;
    Ok(d)
}

/// Free proper-time propagator G(x, x′; s).
#[pyfunction]
#[pyo3(signature = (x, xp, s, hbar = 1.0))]
fn free_propagator(x: [f64; 4], xp: [f64; 4], s: f64, hbar: f64) -> PyResult<Complex64> {
    free_propagator_hbar(FourVector(x), FourVector(xp), s, hbar).map_err(core_err)
}

/// F(c) = ∫sinc²((t² + c)/2) dt.
#[pyfunction]
fn light_cone_profile(c: f64) -> PyResult<f64> {
    core_profile(c).map_err(core_err)
}

/// j⁰ of the free pair at distance r on the x axis.
#[pyfunction]
#[pyo3(signature = (r, epsilon, velocity = [1.0, 0.0, 0.0, 0.0], amplitude = Complex64::new(1.0, 0.0), q = 1.0))]
fn free_charge_j0(r: f64, epsilon: f64, velocity: [f64; 4], amplitude: Complex64, q: f64) -> PyResult<f64> {
    let cal = calibrate_with_hbar(epsilon, 1.0).map_err(core_err)?;
    core_free_charge_j0(r, FourVector(velocity), amplitude / epsilon, &cal, q).map_err(core_err)
}

/// Maximum relative self-consistency residual of the free pair over `s_samples`.
#[pyfunction]
#[pyo3(signature = (epsilon, s_samples, velocity = [1.0, 0.0, 0.0, 0.0], n_factor = 1.0))]
fn consistency_residual(epsilon: f64, s_samples: Vec<f64>, velocity: [f64; 4], n_factor: f64) -> PyResult<f64> {
    let mut pair = EcdPair::free(FourVector(velocity), Complex64::new(1.0, 0.0), epsilon, 1.0).map_err(core_err)?;
    pair.calibration = pair.calibration.with_n(pair.calibration.n * n_factor);
    Ok(core_consistency(&pair, &s_samples).map_err(core_err)?.max_residual)
}

/// Lorentz-force worldline in constant fields; returns (s, γ, γ̇) lists.
#[pyfunction]
#[pyo3(signature = (position, velocity, s_span, step, q = 1.0, e = [0.0; 3], b = [0.0; 3], tolerance = 1e-10))]
#[allow(clippy::type_complexity, clippy::too_many_arguments)]
fn integrate_orbit(
    position: [f64; 4],
    velocity: [f64; 4],
    s_span: (f64, f64),
    step: f64,
    q: f64,
    e: [f64; 3],
    b: [f64; 3],
    tolerance: f64,
) -> PyResult<(Vec<f64>, Vec<[f64; 4]>, Vec<[f64; 4]>)> {
    let cfg = IntegratorConfig::rk4(step, tolerance).map_err(core_err)?;
    let field = FieldSpec::Constant { e, b };
    let traj = integrate_worldline((FourVector(position), FourVector(velocity)), &field, q, s_span, &cfg)
        .map_err(core_err)?;
    let p = traj.samples();
    Ok((
        p.iter().map(|x| x.s).collect(),
        p.iter().map(|x| x.gamma.0).collect(),
        p.iter().map(|x| x.gamma_dot.0).collect(),
    ))
}

/// Schema diagnostics for a scenario file; empty when valid.
#[pyfunction]
fn validate_scenario(path: PathBuf) -> PyResult<Vec<String>> {
    let d = ecd_lab::validate(&path).map_err(lab_err)?;
    Ok(d.iter().map(ToString::to_string).collect())
}

/// Runs a scenario file and returns its manifest as a dict.
#[pyfunction]
#[pyo3(signature = (path, out = None, workers = None, overrides = Vec::new()))]
fn run_scenario<'py>(
    py: Python<'py>,
    path: PathBuf,
    out: Option<PathBuf>,
    workers: Option<usize>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = RunOptions {
        out_dir: out,
        workers,
        overrides,
    };
    let manifest = py.detach(|| ecd_lab::run(&path, &opts)).map_err(lab_err)?;
    let text = serde_json::to_string(&manifest).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
fn ecdlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("AccuracyError", m.py().get_type::<AccuracyError>())?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(free_propagator, m)?)?;
    m.add_function(wrap_pyfunction!(light_cone_profile, m)?)?;
    m.add_function(wrap_pyfunction!(free_charge_j0, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_residual, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_orbit, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
