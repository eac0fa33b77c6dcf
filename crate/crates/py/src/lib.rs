//! Python bindings: device presets, experiment construction, the Monte
//! Carlo engine, post-selection statistics, decay fits, and one-call shadow
//! tomography estimates.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use star422::analysis::{
    self, EncodingKind, PostselectRule, SigmaVariant,
};
use star422::circuit::{
    build_experiment, compile_noise, CircuitProgram, ErrorKind, ExperimentKind, NoiseOptions,
    ProductState, StabKind, StabOrder, TomoBasis, TomographySetting,
};
use star422::code::{Basis, CodeDefinition};
use star422::device::{DeviceModel, T2Choice};
use star422::engine::{self, ShotBatch};
use star422::shadows::{
    self, FidelityTarget, PurityScope, SettingMode, ShadowEstimator, TomographySource,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_order(order: &str) -> PyResult<StabOrder> {
    match order {
        "xz" => Ok(StabOrder::XThenZ),
        "zx" => Ok(StabOrder::ZThenX),
        other => Err(value_err(format!("stab order must be xz or zx, got {other:?}"))),
    }
}

fn parse_bases(bases: &str) -> PyResult<TomographySetting> {
    let parsed: Vec<TomoBasis> = bases
        .chars()
        .map(|c| match c.to_ascii_uppercase() {
            'Z' => Ok(TomoBasis::Z),
            'X' => Ok(TomoBasis::X),
            'Y' => Ok(TomoBasis::Y),
            other => Err(value_err(format!("bad basis {other:?}"))),
        })
        .collect::<PyResult<_>>()?;
    if parsed.len() != 4 {
        return Err(value_err("bases must have exactly 4 characters"));
    }
    Ok(TomographySetting([parsed[0], parsed[1], parsed[2], parsed[3]]))
}

fn noise_options(t2: &str, res_idle: bool, disable: Vec<String>) -> PyResult<NoiseOptions> {
    let t2 = match t2 {
        "star" => T2Choice::Star,
        "echo" => T2Choice::Echo,
        other => return Err(value_err(format!("t2 must be star or echo, got {other:?}"))),
    };
    let mut disabled = Vec::new();
    for name in disable {
        let kind = ErrorKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| value_err(format!("unknown error kind {name:?}")))?;
        disabled.push(kind);
    }
    Ok(NoiseOptions { t2, resonator_idling: res_idle, disabled })
}

/// Device calibration model (presets configA/configB or a TOML file).
#[pyclass(name = "Device", from_py_object)]
#[derive(Clone)]
struct PyDevice {
    inner: DeviceModel,
}

#[pymethods]
impl PyDevice {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self { inner: DeviceModel::preset(name).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: DeviceModel::load(std::path::Path::new(path)).map_err(value_err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn t_cycle_us(&self) -> f64 {
        self.inner.t_cycle_ns as f64 * 1e-3
    }

    #[getter]
    fn digest(&self) -> String {
        self.inner.digest_hex()
    }

    fn __repr__(&self) -> String {
        format!("Device({})", self.inner.name)
    }
}

/// A timed circuit program, optionally noise-compiled.
#[pyclass(name = "Program")]
struct PyProgram {
    inner: CircuitProgram,
}

#[pymethods]
impl PyProgram {
    /// Repeated-detection experiment with probabilistic encoding.
    #[staticmethod]
    #[pyo3(signature = (device, psi_in, cycles, order = "xz"))]
    fn lifetime(device: &PyDevice, psi_in: &str, cycles: usize, order: &str) -> PyResult<Self> {
        let kind = ExperimentKind::Lifetime {
            psi_in: ProductState::parse(psi_in).map_err(value_err)?,
            cycles,
        };
        Ok(Self {
            inner: build_experiment(&kind, &device.inner, parse_order(order)?)
                .map_err(value_err)?,
        })
    }

    /// Repeated detection of the deterministically encoded logical Bell state.
    #[staticmethod]
    #[pyo3(signature = (device, cycles, order = "xz"))]
    fn bell_lifetime(device: &PyDevice, cycles: usize, order: &str) -> PyResult<Self> {
        let kind = ExperimentKind::BellLifetime { cycles };
        Ok(Self {
            inner: build_experiment(&kind, &device.inner, parse_order(order)?)
                .map_err(value_err)?,
        })
    }

    /// One half-cycle measuring a single stabilizer ("X" or "Z").
    #[staticmethod]
    #[pyo3(signature = (device, stabilizer, psi_in, order = "xz"))]
    fn single_stabilizer(
        device: &PyDevice,
        stabilizer: &str,
        psi_in: &str,
        order: &str,
    ) -> PyResult<Self> {
        let stab = match stabilizer {
            "X" | "x" => StabKind::X,
            "Z" | "z" => StabKind::Z,
            other => return Err(value_err(format!("stabilizer must be X or Z, got {other:?}"))),
        };
        let kind = ExperimentKind::SingleStabilizer {
            stabilizer: stab,
            psi_in: ProductState::parse(psi_in).map_err(value_err)?,
            cycles: 1,
        };
        Ok(Self {
            inner: build_experiment(&kind, &device.inner, parse_order(order)?)
                .map_err(value_err)?,
        })
    }

    /// Tomography experiment: N cycles then rotated data readout.
    #[staticmethod]
    #[pyo3(signature = (device, psi_in, cycles, bases, order = "xz"))]
    fn tomography(
        device: &PyDevice,
        psi_in: &str,
        cycles: usize,
        bases: &str,
        order: &str,
    ) -> PyResult<Self> {
        let kind = ExperimentKind::Tomography {
            psi_in: ProductState::parse(psi_in).map_err(value_err)?,
            cycles,
            setting: parse_bases(bases)?,
        };
        Ok(Self {
            inner: build_experiment(&kind, &device.inner, parse_order(order)?)
                .map_err(value_err)?,
        })
    }

    /// Insert the device error model into the timed program.
    #[pyo3(signature = (device, t2 = "echo", res_idle = false, disable = vec![]))]
    fn compile_noise(
        &self,
        device: &PyDevice,
        t2: &str,
        res_idle: bool,
        disable: Vec<String>,
    ) -> PyResult<Self> {
        let opts = noise_options(t2, res_idle, disable)?;
        Ok(Self { inner: compile_noise(&self.inner, &device.inner, &opts).map_err(value_err)? })
    }

    #[getter]
    fn digest(&self) -> String {
        self.inner.digest_hex()
    }

    #[getter]
    fn compiled(&self) -> bool {
        self.inner.compiled
    }

    #[getter]
    fn cycles(&self) -> usize {
        self.inner.meta.cycles
    }

    #[getter]
    fn duration_ns(&self) -> u64 {
        self.inner.duration_ns
    }

    #[getter]
    fn measurement_names(&self) -> Vec<String> {
        self.inner.schema.iter().map(|t| t.name()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Program({} {} N={} compiled={})",
            self.inner.meta.experiment, self.inner.meta.state, self.inner.meta.cycles,
            self.inner.compiled
        )
    }
}

fn parse_rule(rule: &str) -> PyResult<PostselectRule> {
    match rule {
        "clean" => Ok(PostselectRule::AllSyndromesClean),
        "clean+subspace" => Ok(PostselectRule::CleanAndFinalSubspace),
        other => Err(value_err(format!(
            "rule must be clean or clean+subspace, got {other:?}"
        ))),
    }
}

/// Bit-packed measurement outcomes of one Monte Carlo batch.
#[pyclass(name = "Batch")]
struct PyBatch {
    inner: ShotBatch,
}

#[pymethods]
impl PyBatch {
    #[getter]
    fn shots(&self) -> usize {
        self.inner.shots
    }

    #[getter]
    fn basis(&self) -> String {
        self.inner.basis.name().to_string()
    }

    fn bit(&self, tag: usize, shot: usize) -> bool {
        self.inner.bit(tag, shot)
    }

    /// One shot as a dict with ancilla and data bits.
    fn record<'py>(&self, py: Python<'py>, shot: usize) -> PyResult<Bound<'py, PyDict>> {
        let rec = self.inner.record(shot);
        let dict = PyDict::new(py);
        dict.set_item("shot", rec.shot)?;
        dict.set_item("ancilla_x", rec.ancilla_x)?;
        dict.set_item("ancilla_z", rec.ancilla_z)?;
        dict.set_item("data", rec.data.to_vec())?;
        dict.set_item("basis", rec.basis.name())?;
        Ok(dict)
    }

    /// Post-selection: (fraction, std_err, accepted, total).
    #[pyo3(signature = (rule = "clean+subspace"))]
    fn acceptance(&self, rule: &str) -> PyResult<(f64, f64, usize, usize)> {
        let acc = analysis::postselect(&self.inner, parse_rule(rule)?);
        Ok((acc.fraction(), acc.std_err(), acc.accepted, acc.total))
    }

    /// Mean logical operator value over accepted shots: (mean, err, accepted).
    #[pyo3(signature = (qubit, rule = "clean+subspace"))]
    fn logical_expectation(&self, qubit: usize, rule: &str) -> PyResult<(f64, f64, usize)> {
        let acc = analysis::postselect(&self.inner, parse_rule(rule)?);
        let e = analysis::logical_expectation(&self.inner, &acc, qubit).map_err(value_err)?;
        Ok((e.mean, e.err, e.accepted))
    }

    /// Mean detector value per cycle without post-selection: (sigma_x, sigma_z).
    #[pyo3(signature = (variant = "composed"))]
    fn detection_fractions(&self, variant: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let v = match variant {
            "composed" => SigmaVariant::Composed,
            "value" => SigmaVariant::StabilizerValue,
            other => return Err(value_err(format!("unknown sigma variant {other:?}"))),
        };
        Ok(analysis::detection_fractions(&self.inner, v))
    }

    /// Serialize to the binary batch container.
    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = Vec::new();
        self.inner.write_to(&mut buf).map_err(value_err)?;
        Ok(PyBytes::new(py, &buf))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: ShotBatch::read_from(&mut &data[..]).map_err(value_err)? })
    }

    fn __repr__(&self) -> String {
        format!("Batch(shots={}, tags={})", self.inner.shots, self.inner.schema.len())
    }
}

/// Run a program on the bit-packed frame engine.
#[pyfunction]
fn run_shots(program: &PyProgram, shots: usize, seed: u64) -> PyResult<PyBatch> {
    Ok(PyBatch { inner: engine::run_shots(&program.inner, shots, seed).map_err(value_err)? })
}

/// Logical eigenvalue pair for four measured data bits.
#[pyfunction]
fn evaluate_logicals(bits: Vec<bool>, basis: &str) -> PyResult<(i8, i8)> {
    if bits.len() != 4 {
        return Err(value_err("need exactly 4 bits"));
    }
    let basis = match basis {
        "Z" | "z" => Basis::Z,
        "X" | "x" => Basis::X,
        other => return Err(value_err(format!("basis must be Z or X, got {other:?}"))),
    };
    Ok(CodeDefinition::new().evaluate_logicals([bits[0], bits[1], bits[2], bits[3]], basis))
}

/// Whether four data bits lie in the logical subspace (even parity).
#[pyfunction]
fn in_logical_subspace(bits: Vec<bool>) -> PyResult<bool> {
    if bits.len() != 4 {
        return Err(value_err("need exactly 4 bits"));
    }
    Ok(CodeDefinition::new().in_logical_subspace([bits[0], bits[1], bits[2], bits[3]]))
}

/// Weighted exponential decay fit a*exp(-N b) over (N, value, weight)
/// triples; returns a dict with a, b, tau_us, epsilon and errors.
#[pyfunction]
fn fit_decay<'py>(
    py: Python<'py>,
    points: Vec<(usize, f64, f64)>,
    t_cycle_us: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = analysis::fit_decay(&points, t_cycle_us).map_err(value_err)?;
    let dict = PyDict::new(py);
    dict.set_item("a", fit.a)?;
    dict.set_item("b", fit.b)?;
    dict.set_item("a_err", fit.a_err)?;
    dict.set_item("b_err", fit.b_err)?;
    dict.set_item("tau_us", fit.tau_us)?;
    dict.set_item("tau_err_us", fit.tau_err_us)?;
    dict.set_item("epsilon", fit.epsilon)?;
    dict.set_item("epsilon_err", fit.epsilon_err)?;
    dict.set_item("r_squared", fit.r_squared)?;
    dict.set_item("degenerate", fit.degenerate)?;
    Ok(dict)
}

/// Geometric acceptance fit over (N, eta) pairs; returns (p_s, p_l).
#[pyfunction]
#[pyo3(signature = (points, deterministic = false))]
fn acceptance_fit(points: Vec<(usize, f64)>, deterministic: bool) -> PyResult<(f64, f64)> {
    let pts: Vec<analysis::AcceptancePoint> = points
        .into_iter()
        .map(|(n, eta)| analysis::AcceptancePoint { cycles: n, eta, err: 0.0, accepted: 0, shots: 0 })
        .collect();
    let enc = if deterministic { EncodingKind::Deterministic } else { EncodingKind::Probabilistic };
    let fit = analysis::acceptance_fit(&pts, enc).map_err(value_err)?;
    Ok((fit.p_s, fit.p_l))
}

/// Full shadow-tomography estimate for one encoded state. Returns a dict
/// with f_l, p2_l, p2_phy, p_l (each with errors) and p_s.
#[pyfunction]
#[pyo3(signature = (device, psi_in, cycles = 1, meas_per_setting = 2000, seed = 1, order = "xz", t2 = "echo", uniform_settings = 0, noiseless = false))]
#[allow(clippy::too_many_arguments)]
fn shadow_tomography<'py>(
    py: Python<'py>,
    device: &PyDevice,
    psi_in: &str,
    cycles: usize,
    meas_per_setting: usize,
    seed: u64,
    order: &str,
    t2: &str,
    uniform_settings: usize,
    noiseless: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let code = CodeDefinition::new();
    let disable = if noiseless {
        ErrorKind::ALL.iter().map(|k| k.name().to_string()).collect()
    } else {
        vec![]
    };
    let opts = noise_options(t2, false, disable)?;
    let order = parse_order(order)?;
    let (mode, enumerated) = if uniform_settings == 0 {
        (SettingMode::Exhaustive81, true)
    } else {
        (SettingMode::Uniform(uniform_settings), false)
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let settings = shadows::sample_settings(mode, &mut rng).map_err(value_err)?;
    let (source, target) = if psi_in == "bell" {
        (TomographySource::Bell, star422::cli::bell_target_vector())
    } else {
        let state = ProductState::parse(psi_in).map_err(value_err)?;
        let target = star422::cli::logical_target_vector(&code, &state);
        (TomographySource::Product(state), target)
    };
    let dataset = shadows::collect_dataset(
        &device.inner,
        source,
        cycles,
        &settings,
        enumerated,
        meas_per_setting,
        seed,
        order,
        &opts,
    )
    .map_err(value_err)?;
    let est = ShadowEstimator::new(&dataset, &code).map_err(value_err)?;
    let resamples = 300;
    let (f_l, f_l_err) =
        est.fidelity(&FidelityTarget::Logical(target), resamples, seed).map_err(value_err)?;
    let (p2_l, p2_l_err) =
        est.purity(&PurityScope::Logical, resamples, seed).map_err(value_err)?;
    let (p2_phy, p2_phy_err) =
        est.purity(&PurityScope::Physical, resamples, seed).map_err(value_err)?;
    let density = est.estimate_density(resamples, seed).map_err(value_err)?;
    let kept: usize = (0..dataset.n_settings()).map(|r| dataset.kept(r)).sum();
    let raw = dataset.n_settings() * dataset.raw_shots_per_setting;
    let dict = PyDict::new(py);
    dict.set_item("f_l", f_l)?;
    dict.set_item("f_l_err", f_l_err)?;
    dict.set_item("p2_l", p2_l)?;
    dict.set_item("p2_l_err", p2_l_err)?;
    dict.set_item("p2_phy", p2_phy)?;
    dict.set_item("p2_phy_err", p2_phy_err)?;
    dict.set_item("p_l", density.p_l)?;
    dict.set_item("p_l_err", density.p_l_err)?;
    dict.set_item("yield", kept as f64 / raw as f64)?;
    Ok(dict)
}

#[pymodule]
fn star422_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDevice>()?;
    m.add_class::<PyProgram>()?;
    m.add_class::<PyBatch>()?;
    m.add_function(wrap_pyfunction!(run_shots, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_logicals, m)?)?;
    m.add_function(wrap_pyfunction!(in_logical_subspace, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    m.add_function(wrap_pyfunction!(acceptance_fit, m)?)?;
    m.add_function(wrap_pyfunction!(shadow_tomography, m)?)?;
    Ok(())
}
