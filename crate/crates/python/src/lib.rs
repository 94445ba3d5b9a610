//! Python bindings: cells, variation specs, characterization, Monte Carlo,
//! the analytical distributions and the device fitter.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sramyield::analytics::{self, OffsetVoltageDist};
use sramyield::characterize::{self, Metric};
use sramyield::fit::{default_init, fit_device, FitOptions};
use sramyield::mc::{self, wilson_ci};
use sramyield::{
    apply_assist, AssistConfig, AssistMode, CellConfig, DeviceLibrary, IvDataset, OracleMode, VariationSpec,
    WriteOutcome,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A bitcell at one operating point.
#[pyclass(name = "Cell", frozen)]
struct PyCell {
    inner: sramyield::Cell,
}

impl PyCell {
    fn wrap(config: CellConfig) -> PyResult<Self> {
        Ok(Self {
            inner: sramyield::Cell::new(config).map_err(value_err)?,
        })
    }
}

#[pymethods]
impl PyCell {
    /// Bundled default cell, or the given JSON config.
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let config = match config_json {
            Some(text) => CellConfig::from_json(text).map_err(value_err)?,
            None => CellConfig::bundled_default(),
        };
        Self::wrap(config)
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(self.inner.config()).map_err(runtime_err)
    }

    #[getter]
    fn vdd(&self) -> f64 {
        self.inner.config().vdd
    }

    #[getter]
    fn vwl(&self) -> f64 {
        self.inner.config().vwl
    }

    /// Same cell at another supply, wordline and trip point scaled along.
    fn with_supply(&self, vdd: f64) -> PyResult<Self> {
        Self::wrap(self.inner.config().with_supply(vdd))
    }

    /// Applies a read ("read") or write ("write") assist.
    #[pyo3(signature = (mode, wl_underdrive=0.0, wl_boost=0.0, cell_vdd_delta=0.0))]
    fn assisted(&self, mode: &str, wl_underdrive: f64, wl_boost: f64, cell_vdd_delta: f64) -> PyResult<Self> {
        let mode = match mode {
            "read" => AssistMode::Read,
            "write" => AssistMode::Write,
            other => return Err(PyValueError::new_err(format!("unknown assist mode '{other}'"))),
        };
        let assist = AssistConfig {
            wl_underdrive,
            wl_boost,
            cell_vdd_delta,
        };
        Self::wrap(apply_assist(self.inner.config(), &assist, mode).map_err(value_err)?)
    }

    /// Bitline swing (V) after `t_read` seconds.
    #[pyo3(signature = (vth_n, t_read, oracle="closed"))]
    fn delta_v(&self, vth_n: f64, t_read: f64, oracle: &str) -> PyResult<f64> {
        match parse::<OracleMode>(oracle)? {
            OracleMode::Closed => self.inner.delta_v_closed(vth_n, t_read),
            OracleMode::Ode => self.inner.delta_v_ode(vth_n, t_read),
        }
        .map_err(value_err)
    }

    /// Time for the bitline to swing by `dv`.
    fn read_time_for(&self, vth_n: f64, dv: f64) -> PyResult<f64> {
        self.inner.read_time_for(vth_n, dv).map_err(value_err)
    }

    /// Write time (s); `None` when the ODE run never reaches the trip point.
    #[pyo3(signature = (vth_n, vth_p=None, oracle="closed", t_max=None))]
    fn write_time(&self, vth_n: f64, vth_p: Option<f64>, oracle: &str, t_max: Option<f64>) -> PyResult<Option<f64>> {
        match parse::<OracleMode>(oracle)? {
            OracleMode::Closed => self.inner.write_time_closed(vth_n).map(Some).map_err(value_err),
            OracleMode::Ode => {
                let vth_p = vth_p.unwrap_or(self.inner.config().pmos.vth_nominal);
                let t_max = match t_max {
                    Some(t) => t,
                    None => self.inner.default_t_max().map_err(value_err)?,
                };
                match self.inner.write_time_ode(vth_n, vth_p, t_max).map_err(value_err)? {
                    WriteOutcome::Crossed(t) => Ok(Some(t)),
                    WriteOutcome::Censored => Ok(None),
                }
            }
        }
    }

    fn natural_t0(&self) -> f64 {
        self.inner.natural_t0()
    }

    fn default_t_max(&self) -> PyResult<f64> {
        self.inner.default_t_max().map_err(value_err)
    }

    /// Log-spaced read-deadline grid spanning the useful swing band.
    #[pyo3(signature = (points=characterize::DEFAULT_GRID_POINTS))]
    fn access_grid(&self, points: usize) -> PyResult<Vec<f64>> {
        characterize::default_access_grid(&self.inner, points).map_err(value_err)
    }
}

/// Threshold-voltage and sense-amp offset variation plus the RNG seed.
#[pyclass(name = "Variation", frozen)]
struct PyVariation {
    inner: VariationSpec,
}

#[pymethods]
impl PyVariation {
    #[new]
    #[pyo3(signature = (spec_json=None, seed=None))]
    fn new(spec_json: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut inner = match spec_json {
            Some(text) => VariationSpec::from_json(text).map_err(value_err)?,
            None => VariationSpec::bundled_default(),
        };
        if let Some(seed) = seed {
            inner = inner.with_seed(seed);
        }
        Ok(Self { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self {
            inner: self.inner.with_seed(seed),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(runtime_err)
    }
}

/// Fitted analytical distribution of one metric, ready for yield queries.
#[pyclass(name = "Characterization", frozen)]
struct PyCharacterization {
    inner: sramyield::Characterization,
}

fn offset_of(offset: Option<(f64, f64)>) -> PyResult<Option<OffsetVoltageDist>> {
    offset
        .map(|(mu, sigma)| OffsetVoltageDist::new(mu, sigma).map_err(value_err))
        .transpose()
}

#[pymethods]
impl PyCharacterization {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn metric(&self) -> &'static str {
        match self.inner.metric() {
            Metric::Access => "access",
            Metric::Write => "write",
        }
    }

    fn constraint_range(&self) -> (f64, f64) {
        self.inner.constraint_range()
    }

    /// Failure probability at `constraint`; `offset` is `(mu, sigma)` in V.
    #[pyo3(signature = (constraint, offset=None))]
    fn failure_probability(&self, constraint: f64, offset: Option<(f64, f64)>) -> PyResult<f64> {
        self.inner
            .failure_probability(constraint, offset_of(offset)?.as_ref())
            .map_err(value_err)
    }

    /// Constraint at which the failure probability equals `target_pf`.
    #[pyo3(signature = (target_pf, offset=None))]
    fn invert(&self, target_pf: f64, offset: Option<(f64, f64)>) -> PyResult<f64> {
        self.inner
            .invert(target_pf, offset_of(offset)?.as_ref())
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        let (lo, hi) = self.inner.constraint_range();
        format!("Characterization(metric={}, range=({lo:e}, {hi:e}))", self.metric())
    }
}

#[pyfunction]
#[pyo3(signature = (cell, variation, n=characterize::DEFAULT_ACCESS_SAMPLES, grid=None, oracle="closed"))]
fn characterize_access(
    py: Python<'_>,
    cell: &PyCell,
    variation: &PyVariation,
    n: u64,
    grid: Option<Vec<f64>>,
    oracle: &str,
) -> PyResult<PyCharacterization> {
    let mode = parse(oracle)?;
    let grid = match grid {
        Some(g) => g,
        None => characterize::default_access_grid(&cell.inner, characterize::DEFAULT_GRID_POINTS).map_err(value_err)?,
    };
    let inner = py
        .detach(|| characterize::characterize_access(&cell.inner, &variation.inner, n, &grid, mode))
        .map_err(value_err)?;
    Ok(PyCharacterization { inner })
}

#[pyfunction]
#[pyo3(signature = (cell, variation, n=characterize::DEFAULT_WRITE_SAMPLES, oracle="closed", t0=None, t_max=None))]
fn characterize_write(
    py: Python<'_>,
    cell: &PyCell,
    variation: &PyVariation,
    n: u64,
    oracle: &str,
    t0: Option<f64>,
    t_max: Option<f64>,
) -> PyResult<PyCharacterization> {
    let mode = parse(oracle)?;
    let inner = py
        .detach(|| characterize::characterize_write(&cell.inner, &variation.inner, n, mode, t0, t_max))
        .map_err(value_err)?;
    Ok(PyCharacterization { inner })
}

/// Plain Monte Carlo at one constraint; returns the result as a dict.
#[pyfunction]
#[pyo3(signature = (cell, variation, metric, constraint, n=100_000, oracle="closed", t_max=None))]
#[allow(clippy::too_many_arguments)]
fn run_mc<'py>(
    py: Python<'py>,
    cell: &PyCell,
    variation: &PyVariation,
    metric: &str,
    constraint: f64,
    n: u64,
    oracle: &str,
    t_max: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = parse(oracle)?;
    let result = match parse::<Metric>(metric)? {
        Metric::Access => py.detach(|| mc::run_access_mc(&cell.inner, &variation.inner, n, constraint, mode)),
        Metric::Write => py.detach(|| mc::run_write_mc(&cell.inner, &variation.inner, n, constraint, mode, t_max)),
    }
    .map_err(value_err)?;
    let out = to_py(py, &result)?;
    out.cast::<PyDict>()?.set_item("wall_time", result.wall_time)?;
    Ok(out)
}

/// Square-root-normal bitline swing distribution.
#[pyclass(name = "DeltaVDistribution", frozen)]
struct PyDeltaV {
    inner: analytics::DeltaVDistribution,
}

#[pymethods]
impl PyDeltaV {
    #[new]
    fn new(mu: f64, sigma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: analytics::DeltaVDistribution::new(mu, sigma).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn fit(samples: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: analytics::estimate_delta_params(&samples).map_err(value_err)?,
        })
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu_delta
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma_delta
    }

    fn pdf(&self, dv: f64) -> f64 {
        self.inner.pdf(dv)
    }

    fn cdf(&self, dv: f64) -> f64 {
        self.inner.cdf(dv)
    }

    fn quantile(&self, p: f64) -> f64 {
        self.inner.quantile(p)
    }

    /// Read failure probability against a fixed offset, or a Gaussian
    /// offset when `sigma_vos` is given.
    #[pyo3(signature = (v_os, sigma_vos=None))]
    fn fail_prob(&self, v_os: f64, sigma_vos: Option<f64>) -> PyResult<f64> {
        match sigma_vos {
            None => Ok(analytics::access_fail_prob_fixed(&self.inner, v_os)),
            Some(s) => {
                let offset = OffsetVoltageDist::new(v_os, s).map_err(value_err)?;
                analytics::access_fail_prob_ber(&self.inner, &offset).map_err(value_err)
            }
        }
    }
}

/// Write-time distribution with `sqrt(ln(t/t0))` normal.
#[pyclass(name = "WriteTimeDistribution", frozen)]
struct PyWriteTime {
    inner: analytics::WriteTimeDistribution,
}

#[pymethods]
impl PyWriteTime {
    #[new]
    fn new(mu: f64, sigma: f64, t0: f64) -> PyResult<Self> {
        Ok(Self {
            inner: analytics::WriteTimeDistribution::new(mu, sigma, t0).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn fit(samples: Vec<f64>, t0: f64) -> PyResult<Self> {
        Ok(Self {
            inner: analytics::estimate_write_params(&samples, t0).map_err(value_err)?,
        })
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu_w
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma_w
    }

    #[getter]
    fn t0(&self) -> f64 {
        self.inner.t0
    }

    fn pdf(&self, t: f64) -> f64 {
        self.inner.pdf(t)
    }

    fn cdf(&self, t: f64) -> f64 {
        self.inner.cdf(t)
    }

    fn quantile(&self, p: f64) -> f64 {
        self.inner.quantile(p)
    }

    fn fail_prob(&self, t_write: f64) -> f64 {
        analytics::write_fail_prob(&self.inner, t_write)
    }

    fn invert(&self, target_pf: f64) -> PyResult<f64> {
        analytics::invert_write(&self.inner, target_pf).map_err(value_err)
    }
}

/// Fits drain-current constants to I-V CSV text; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (csv_text, device="nch_svt", fit_n=false, max_iterations=500))]
fn fit_iv<'py>(
    py: Python<'py>,
    csv_text: &str,
    device: &str,
    fit_n: bool,
    max_iterations: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let lib = DeviceLibrary::bundled();
    let template = lib.get(device).map_err(value_err)?;
    let data = IvDataset::from_csv_reader(csv_text.as_bytes(), "python").map_err(value_err)?;
    let options = FitOptions {
        fit_n,
        max_iterations,
        ..FitOptions::default()
    };
    let report = py
        .detach(|| fit_device(&data, &default_init(&data, &template), &options))
        .map_err(runtime_err)?;
    to_py(py, &report)
}

/// Names of the bundled device parameter sets.
#[pyfunction]
fn devices() -> Vec<String> {
    DeviceLibrary::bundled().devices.keys().cloned().collect()
}

/// Wilson score interval for `failures` out of `n`.
#[pyfunction]
#[pyo3(signature = (failures, n, confidence=0.95))]
fn wilson_interval(failures: u64, n: u64, confidence: f64) -> (f64, f64) {
    wilson_ci(failures, n, confidence)
}

#[pymodule]
fn pysramyield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FOUR_SIGMA_PF", analytics::FOUR_SIGMA_PF)?;
    m.add_class::<PyCell>()?;
    m.add_class::<PyVariation>()?;
    m.add_class::<PyCharacterization>()?;
    m.add_class::<PyDeltaV>()?;
    m.add_class::<PyWriteTime>()?;
    m.add_function(wrap_pyfunction!(characterize_access, m)?)?;
    m.add_function(wrap_pyfunction!(characterize_write, m)?)?;
    m.add_function(wrap_pyfunction!(run_mc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_iv, m)?)?;
    m.add_function(wrap_pyfunction!(devices, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    Ok(())
}
