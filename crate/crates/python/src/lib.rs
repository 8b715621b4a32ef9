//! Python bindings for `designspace`.
//!
//! Networks cross the boundary as [`Spec`] objects (constructible from the
//! canonical JSON form); everything else uses plain Python lists, tuples and
//! floats.

use designspace::evalstore::{surrogate_error as surrogate, SurrogateConfig};
use designspace::popstats::{self, BootstrapConfig};
use designspace::quantlin;
use designspace::sampler::{self, SamplerConfig};
use designspace::{AnyNetSpec, DesignSpaceDef};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: designspace::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A fully resolved network.
#[pyclass(name = "Spec", module = "designspace_py", frozen)]
pub struct Spec {
    inner: AnyNetSpec,
}

#[pymethods]
impl Spec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        AnyNetSpec::from_json(text).map(|inner| Spec { inner }).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.canonical_json()
    }

    #[getter]
    fn spec_hash(&self) -> String {
        designspace::spec_hash(&self.inner)
    }

    #[getter]
    fn block_type(&self) -> String {
        self.inner.block_type.to_string()
    }

    /// `(depth, width, bottleneck, group_width)` per stage.
    #[getter]
    fn stages(&self) -> Vec<(u32, u32, f64, u32)> {
        self.inner
            .stages
            .iter()
            .map(|s| (s.depth, s.width, s.bottleneck, s.group_width))
            .collect()
    }

    fn block_widths(&self) -> Vec<f64> {
        self.inner.block_widths()
    }

    /// `(flops, params, acts)`.
    fn metrics(&self) -> PyResult<(u64, u64, u64)> {
        network_metrics(self)
    }

    fn __repr__(&self) -> String {
        format!("Spec({})", self.inner.canonical_json())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// `(flops, params, acts)` of a network.
#[pyfunction]
fn network_metrics(spec: &Spec) -> PyResult<(u64, u64, u64)> {
    let c = designspace::network_metrics(&spec.inner).map_err(py_err)?;
    Ok((c.flops, c.params, c.acts))
}

/// Quantized per-block widths of the linear rule.
#[pyfunction]
fn gen_block_widths(d: usize, w0: f64, wa: f64, wm: f64) -> PyResult<Vec<f64>> {
    Ok(quantlin::gen_block_widths(d, w0, wa, wm).map_err(py_err)?.w)
}

/// Grid-search fit; returns `(w0, wa, wm, e_fit)`.
#[pyfunction]
fn fit_linear(widths: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    let f = quantlin::fit_linear(&widths).map_err(py_err)?;
    Ok((f.w0, f.wa, f.wm, f.e_fit))
}

#[pyfunction]
fn design_space_size(space: &str) -> PyResult<f64> {
    let def = DesignSpaceDef::preset(space).map_err(py_err)?;
    Ok(designspace::design_space_size(&def))
}

/// Sample `n` networks from a preset inside `[flops_lo, flops_hi]`.
#[pyfunction]
#[pyo3(signature = (space, n, flops_lo=360e6, flops_hi=400e6, seed=0))]
fn sample_population(
    py: Python<'_>,
    space: &str,
    n: usize,
    flops_lo: f64,
    flops_hi: f64,
    seed: u64,
) -> PyResult<Vec<Spec>> {
    let def = DesignSpaceDef::preset(space).map_err(py_err)?;
    let cfg = SamplerConfig::new(def, (flops_lo, flops_hi), n, seed);
    cfg.check().map_err(py_err)?;
    let models = py
        .detach(|| sampler::sample_population(&cfg))
        .map_err(py_err)?;
    Ok(models.into_iter().map(|m| Spec { inner: m.spec }).collect())
}

/// EDF of `errors` evaluated at each point of `at`.
#[pyfunction]
fn edf(errors: Vec<f64>, at: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = popstats::Edf::new(&errors).map_err(py_err)?;
    Ok(at.iter().map(|&e| f.eval(e)).collect())
}

/// Empirical bootstrap of the best model's `x`; returns
/// `(ci_low, median, ci_high)`.
#[pyfunction]
#[pyo3(signature = (pairs, seed=0, frac=0.25, reps=10_000, ci=0.95))]
fn bootstrap_best(
    pairs: Vec<(f64, f64)>,
    seed: u64,
    frac: f64,
    reps: usize,
    ci: f64,
) -> PyResult<(f64, f64, f64)> {
    let cfg = BootstrapConfig { frac, reps, ci, seed };
    let r = popstats::bootstrap_best(&pairs, &cfg).map_err(py_err)?;
    Ok((r.ci_low, r.median, r.ci_high))
}

/// Expected best error per budget, `[(budget, mean, std_err)]`.
#[pyfunction]
#[pyo3(signature = (errors, budgets, trials=1000, seed=0))]
fn random_search_efficiency(
    errors: Vec<f64>,
    budgets: Vec<usize>,
    trials: usize,
    seed: u64,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let pts = popstats::random_search_efficiency(&errors, &budgets, trials, seed).map_err(py_err)?;
    Ok(pts.iter().map(|p| (p.budget, p.expected_best, p.std_err)).collect())
}

/// Surrogate error with the default coefficients.
#[pyfunction]
#[pyo3(signature = (spec, seed=0))]
fn surrogate_error(spec: &Spec, seed: u64) -> PyResult<f64> {
    surrogate(&spec.inner, seed, &SurrogateConfig::default()).map_err(py_err)
}

#[pymodule]
fn designspace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Spec>()?;
    m.add_function(wrap_pyfunction!(network_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(gen_block_widths, m)?)?;
    m.add_function(wrap_pyfunction!(fit_linear, m)?)?;
    m.add_function(wrap_pyfunction!(design_space_size, m)?)?;
    m.add_function(wrap_pyfunction!(sample_population, m)?)?;
    m.add_function(wrap_pyfunction!(edf, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_best, m)?)?;
    m.add_function(wrap_pyfunction!(random_search_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_error, m)?)?;
    Ok(())
}
