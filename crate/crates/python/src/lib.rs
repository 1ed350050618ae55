//! Python bindings: kernel parameters, the trait grid, the one-step
//! propagator and projection, the Cox likelihood, the simulators, and the
//! command-line workflows.

use std::sync::atomic::AtomicBool;

use ipmscale_core::cli::run_args;
use ipmscale_core::cox::{bin_counts, log_likelihood as core_ll, sample_gp as core_gp, Correlation, GPConfig};
use ipmscale_core::grid::{IntensityField, PointPattern, TraitGrid};
use ipmscale_core::kernel::{self, Covariates};
use ipmscale_core::propagation::{self, ProjectionMode, RecruitPlacement};
use ipmscale_core::{sim, IpmError};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: IpmError) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

#[pyclass(name = "KernelParams", skip_from_py_object)]
#[derive(Clone)]
struct PyKernelParams {
    #[pyo3(get, set)]
    q0: f64,
    #[pyo3(get, set)]
    q1: f64,
    #[pyo3(get, set)]
    mu: f64,
    #[pyo3(get, set)]
    sigma: f64,
    #[pyo3(get, set)]
    delta0: f64,
    #[pyo3(get, set)]
    delta1: f64,
    #[pyo3(get, set)]
    eta: f64,
    /// Intercept first, then one coefficient per covariate.
    #[pyo3(get, set)]
    beta: Vec<f64>,
}

impl PyKernelParams {
    fn core(&self) -> PyResult<kernel::KernelParams> {
        let p = kernel::KernelParams {
            q0: self.q0,
            q1: self.q1,
            mu: self.mu,
            sigma: self.sigma,
            delta0: self.delta0,
            delta1: self.delta1,
            eta: self.eta,
            beta: self.beta.clone(),
        };
        p.validate().map_err(err)?;
        Ok(p)
    }
}

impl From<kernel::KernelParams> for PyKernelParams {
    fn from(p: kernel::KernelParams) -> Self {
        Self {
            q0: p.q0,
            q1: p.q1,
            mu: p.mu,
            sigma: p.sigma,
            delta0: p.delta0,
            delta1: p.delta1,
            eta: p.eta,
            beta: p.beta,
        }
    }
}

#[pymethods]
impl PyKernelParams {
    #[new]
    #[pyo3(signature = (q0=1.0, q1=0.01, mu=0.0, sigma=0.25, delta0=0.3, delta1=0.0, eta=0.1, beta=vec![0.0, 0.01]))]
    #[allow(clippy::too_many_arguments)]
    fn new(q0: f64, q1: f64, mu: f64, sigma: f64, delta0: f64, delta1: f64, eta: f64, beta: Vec<f64>) -> PyResult<Self> {
        let p = Self {
            q0,
            q1,
            mu,
            sigma,
            delta0,
            delta1,
            eta,
            beta,
        };
        p.core()?;
        Ok(p)
    }

    #[staticmethod]
    fn simulation_truth() -> Self {
        kernel::KernelParams::simulation_truth().into()
    }

    fn survival(&self, gamma_dot: f64) -> PyResult<f64> {
        kernel::survival_prob(&self.core()?, gamma_dot).map_err(err)
    }

    fn recruitment(&self, gamma_dot: f64) -> PyResult<f64> {
        kernel::recruitment_rate(&self.core()?, gamma_dot).map_err(err)
    }

    fn growth_density(&self, increment: f64) -> PyResult<f64> {
        Ok(kernel::growth_density(increment, &self.core()?))
    }

    fn recruit_density(&self, y: f64, lower: f64) -> PyResult<f64> {
        kernel::recruit_density(y, &self.core()?, lower).map_err(err)
    }

    fn population_update(&self, gamma_dot: f64, z: Vec<f64>) -> PyResult<f64> {
        kernel::population_update(gamma_dot, &Covariates(z), &self.core()?).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "KernelParams(q0={}, q1={}, mu={}, sigma={}, delta0={}, delta1={}, eta={}, beta={:?})",
            self.q0, self.q1, self.mu, self.sigma, self.delta0, self.delta1, self.eta, self.beta
        )
    }
}

#[pyclass(name = "TraitGrid")]
struct PyGrid {
    inner: TraitGrid,
}

impl PyGrid {
    fn field(&self, values: Vec<f64>) -> PyResult<IntensityField> {
        IntensityField::new(self.inner.clone(), values).map_err(err)
    }
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (lower=0.0, upper=50.0, cells=100))]
    fn new(lower: f64, upper: f64, cells: usize) -> PyResult<Self> {
        Ok(Self {
            inner: TraitGrid::new(lower, upper, cells).map_err(err)?,
        })
    }

    #[getter]
    fn lower(&self) -> f64 {
        self.inner.lower()
    }

    #[getter]
    fn upper(&self) -> f64 {
        self.inner.upper()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells()
    }

    #[getter]
    fn width(&self) -> f64 {
        self.inner.width()
    }

    fn centers(&self) -> Vec<f64> {
        self.inner.centers().to_vec()
    }

    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        Ok(self.field(values)?.mass())
    }

    fn __repr__(&self) -> String {
        format!("TraitGrid({}, {}, {})", self.inner.lower(), self.inner.upper(), self.inner.cells())
    }
}

/// One pseudo-IPM step of `values` on `grid`.
#[pyfunction]
fn step(grid: &PyGrid, values: Vec<f64>, z: Vec<f64>, params: &PyKernelParams) -> PyResult<Vec<f64>> {
    let f = grid.field(values)?;
    propagation::pseudo_ipm_step(&f, &Covariates(z), &params.core()?, RecruitPlacement::default())
        .map(IntensityField::into_values)
        .map_err(err)
}

/// Chained projection for `horizon` years under fixed covariates; returns
/// `horizon + 1` fields.
#[pyfunction]
fn project(
    grid: &PyGrid,
    values: Vec<f64>,
    z: Vec<f64>,
    params: &PyKernelParams,
    horizon: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let f = grid.field(values)?;
    let zs = vec![Covariates(z); horizon];
    let path = propagation::project(
        &f,
        &zs,
        &params.core()?,
        horizon,
        ProjectionMode::Chained,
        RecruitPlacement::default(),
    )
    .map_err(err)?;
    Ok(path.into_iter().map(IntensityField::into_values).collect())
}

/// `(lambda, stable distribution)` of the kernel frozen at `gamma_dot`.
#[pyfunction]
#[pyo3(signature = (grid, z, params, gamma_dot=0.0))]
fn dominant_eigenpair(grid: &PyGrid, z: Vec<f64>, params: &PyKernelParams, gamma_dot: f64) -> PyResult<(f64, Vec<f64>)> {
    let k = propagation::build_kernel_matrix(
        &grid.inner,
        &Covariates(z),
        &params.core()?,
        gamma_dot,
        RecruitPlacement::default(),
    )
    .map_err(err)?;
    let ep = propagation::dominant_eigenpair(&k, 1e-12, 100_000).map_err(err)?;
    Ok((ep.lambda, ep.vector.into_values()))
}

/// Poisson log likelihood of a diameter list under intensity `lam`.
#[pyfunction]
#[pyo3(signature = (grid, diameters, lam, multiplicity=1))]
fn log_likelihood(grid: &PyGrid, diameters: Vec<f64>, lam: Vec<f64>, multiplicity: u64) -> PyResult<f64> {
    let counts = bin_counts(&PointPattern::new("py", 0, diameters), &grid.inner).map_err(err)?;
    core_ll(&counts, &grid.field(lam)?, multiplicity).map_err(err)
}

#[pyfunction]
fn sample_pattern(grid: &PyGrid, lam: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
    Ok(sim::sample_pattern(&grid.field(lam)?, seed).diameters)
}

/// Exponential-correlation GP draw on the grid centers.
#[pyfunction]
fn sample_gp(grid: &PyGrid, sigma2_eps: f64, phi: f64, seed: u64) -> PyResult<Vec<f64>> {
    let cfg = GPConfig {
        sigma2_eps,
        phi,
        family: Correlation::Exponential,
    };
    core_gp(&grid.inner, &cfg, seed).map_err(err)
}

/// Runs a command line such as `["fit", "--config", "fit.toml", "--out", "fit"]`
/// and returns its report.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<String> {
    let argv: Vec<String> = std::iter::once("ipmscale".to_string()).chain(args).collect();
    let cancel = AtomicBool::new(false);
    py.detach(|| run_args(argv, &cancel)).map_err(err)
}

#[pymodule]
fn ipmscale(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", ipmscale_core::cli::VERSION)?;
    m.add_class::<PyKernelParams>()?;
    m.add_class::<PyGrid>()?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(dominant_eigenpair, m)?)?;
    m.add_function(wrap_pyfunction!(log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(sample_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gp, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
