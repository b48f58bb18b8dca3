//! Python bindings: a thin `Model` class plus module-level helpers mirroring
//! the library's main entry points. Reports cross the boundary as plain
//! dicts and lists so the Python side needs no extra types.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use gibbstomo::chain::{chain_maxent_reconstruct, ChainEngine, ChainSpec};
use gibbstomo::cli::{derive_seed, hoeffding_linf_delta};
use gibbstomo::commuting::{contraction_coefficient, contraction_coefficient_max};
use gibbstomo::gibbs::{symmetric_divergence, ModelFile};
use gibbstomo::operators::trace_distance;
use gibbstomo::shadows::{estimate, plan_samples, sample_shadows};
use gibbstomo::solver::{solve, Certificate, ExactEngineOracle, SolveResult, SolverOptions};
use gibbstomo::wasserstein::{lr_growth_1d, shallow_surrogate, tc_constant_local};
use gibbstomo::{GibbsModel, HessianBackend, PauliString};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn certificate_dict<'py>(py: Python<'py>, cert: &Certificate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("c", cert.c)?;
    d.set_item("u", cert.u)?;
    d.set_item("beta", cert.beta)?;
    d.set_item("m", cert.m)?;
    d.set_item("delta_mu", cert.delta_mu)?;
    d.set_item("e_hat_delta", cert.e_hat_delta)?;
    d.set_item("delta_cert", cert.delta_cert)?;
    d.set_item("d_sym_bound", cert.d_sym_bound)?;
    d.set_item("trace_dist_bound", cert.trace_dist_bound)?;
    Ok(d)
}

fn result_dict<'py>(py: Python<'py>, result: &SolveResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mu", result.mu.clone())?;
    d.set_item("iterations", result.iterations)?;
    d.set_item("halt", format!("{:?}", result.halt))?;
    d.set_item("final_residual", result.final_residual)?;
    d.set_item("certificate", certificate_dict(py, &result.certificate)?)?;
    if let Some(audit) = &result.audit {
        let a = PyDict::new(py);
        a.set_item("checked", audit.checked)?;
        a.set_item("violations", audit.violations)?;
        a.set_item("worst_violation", audit.worst_violation)?;
        d.set_item("audit", a)?;
    }
    Ok(d)
}

fn solver_options(
    c: f64,
    u: Option<f64>,
    delta_mu: Option<f64>,
    e_hat_delta: f64,
    max_iters: usize,
    audit: bool,
) -> SolverOptions {
    SolverOptions {
        c,
        u,
        delta_mu,
        e_hat_delta,
        max_iters,
        trace_every: 0,
        audit_progress: audit,
    }
}

/// Gibbs family `sigma(mu) = exp(-beta sum_i mu_i E_i) / Z` over a fixed
/// Pauli basis.
#[pyclass]
struct Model {
    inner: GibbsModel,
}

#[pymethods]
impl Model {
    #[new]
    fn new(n: usize, beta: f64, basis: Vec<String>) -> PyResult<Self> {
        let refs: Vec<&str> = basis.iter().map(String::as_str).collect();
        Ok(Model { inner: GibbsModel::from_pauli_strings(n, beta, &refs).map_err(err)? })
    }

    /// Load a model file (TOML or JSON) and return the model with its
    /// stored parameters.
    #[staticmethod]
    fn load(path: &str) -> PyResult<(Self, Vec<f64>)> {
        let file = ModelFile::load(std::path::Path::new(path)).map_err(err)?;
        let (model, lambda) = file.to_model().map_err(err)?;
        Ok((Model { inner: model }, lambda.0))
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.sys().n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    #[getter]
    fn commuting(&self) -> bool {
        self.inner.is_commuting()
    }

    fn expectations(&self, mu: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.expectations(&mu).map_err(err)?.0)
    }

    fn dual_objective(&self, mu: Vec<f64>, e_target: Vec<f64>) -> PyResult<f64> {
        self.inner.dual_objective(&mu, &e_target).map_err(err)
    }

    fn dual_gradient(&self, mu: Vec<f64>, e_target: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.dual_gradient(&mu, &e_target).map_err(err)
    }

    fn dual_hessian(&self, mu: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let h = self.inner.dual_hessian(&mu, HessianBackend::Spectral).map_err(err)?;
        Ok((0..h.nrows())
            .map(|i| (0..h.ncols()).map(|j| h[(i, j)]).collect())
            .collect())
    }

    fn symmetric_divergence<'py>(
        &self,
        py: Python<'py>,
        lambda: Vec<f64>,
        mu: Vec<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let sd = symmetric_divergence(&self.inner, &lambda, &mu).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("forward", sd.forward)?;
        d.set_item("reverse", sd.reverse)?;
        d.set_item("sum", sd.sum)?;
        d.set_item("pairing", sd.pairing)?;
        d.set_item("residual", sd.residual)?;
        Ok(d)
    }

    fn trace_distance(&self, lambda: Vec<f64>, mu: Vec<f64>) -> PyResult<f64> {
        let a = self.inner.gibbs_state(&lambda).map_err(err)?;
        let b = self.inner.gibbs_state(&mu).map_err(err)?;
        Ok(trace_distance(a.matrix(), b.matrix()))
    }

    /// Maximum-entropy fit of the parameters behind measured expectations.
    #[pyo3(signature = (e_hat, c=11.0, u=None, delta_mu=None, e_hat_delta=0.0, max_iters=200_000, audit=false))]
    #[allow(clippy::too_many_arguments)]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        e_hat: Vec<f64>,
        c: f64,
        u: Option<f64>,
        delta_mu: Option<f64>,
        e_hat_delta: f64,
        max_iters: usize,
        audit: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let options = solver_options(c, u, delta_mu, e_hat_delta, max_iters, audit);
        let mut oracle = ExactEngineOracle::new(self.inner.clone());
        let result = solve(&mut oracle, &e_hat, &options).map_err(err)?;
        result_dict(py, &result)
    }

    /// KMS contraction of the single-site heat-bath map at `mu`
    /// (commuting models only).
    fn contraction_coefficient(&self, mu: Vec<f64>, site: usize) -> PyResult<f64> {
        contraction_coefficient(&self.inner, &mu, site).map_err(err)
    }

    /// Search the parameter ball for the largest contraction at `site`.
    #[pyo3(signature = (site, seed=0))]
    fn contraction_coefficient_max<'py>(
        &self,
        py: Python<'py>,
        site: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let search = contraction_coefficient_max(&self.inner, site, seed).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("c_max", search.c_max)?;
        d.set_item("argmax", search.argmax)?;
        d.set_item("evaluations", search.evaluations)?;
        Ok(d)
    }

    /// Classical-shadow estimates of Pauli observables on `sigma(lambda)`.
    #[pyo3(signature = (lambda, observables, count, batches, seed=0))]
    fn shadow_estimate<'py>(
        &self,
        py: Python<'py>,
        lambda: Vec<f64>,
        observables: Vec<String>,
        count: usize,
        batches: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let rho = self.inner.gibbs_state(&lambda).map_err(err)?;
        let parsed: Vec<PauliString> = observables
            .iter()
            .map(|s| PauliString::parse(s).map_err(err))
            .collect::<PyResult<_>>()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let batch = sample_shadows(rho.matrix(), self.inner.sys(), count, &mut rng).map_err(err)?;
        let report = estimate(&batch, &parsed, batches).map_err(err)?;
        let values = PyDict::new(py);
        for e in &report.estimates {
            values.set_item(&e.label, e.estimate)?;
        }
        let d = PyDict::new(py);
        d.set_item("estimates", values)?;
        d.set_item("snapshots", report.snapshots)?;
        d.set_item("batches", report.batches)?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(name = "plan_samples")]
fn plan_samples_py<'py>(
    py: Python<'py>,
    m: usize,
    locality: usize,
    epsilon: f64,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = plan_samples(m, locality, epsilon, delta).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("snapshots", plan.snapshots)?;
    d.set_item("batches", plan.batches)?;
    d.set_item("raw", plan.raw)?;
    Ok(d)
}

/// Exact transfer-matrix expectations of an Ising chain, flatten order
/// `[h_1..h_n, J_1..]`.
#[pyfunction]
fn chain_expectations(
    n: usize,
    beta: f64,
    periodic: bool,
    j: Vec<f64>,
    h: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let spec = ChainSpec::new(n, beta, j, h, periodic).map_err(err)?;
    Ok(ChainEngine::new(spec).expectations())
}

/// Fit an Ising chain to target expectations in flatten order.
#[pyfunction]
#[pyo3(signature = (n, beta, periodic, e_hat, c=11.0, delta_mu=None, e_hat_delta=0.0, max_iters=200_000))]
#[allow(clippy::too_many_arguments)]
fn reconstruct_chain<'py>(
    py: Python<'py>,
    n: usize,
    beta: f64,
    periodic: bool,
    e_hat: Vec<f64>,
    c: f64,
    delta_mu: Option<f64>,
    e_hat_delta: f64,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let options = solver_options(c, None, delta_mu, e_hat_delta, max_iters, false);
    let recon = chain_maxent_reconstruct(n, beta, periodic, &e_hat, &options).map_err(err)?;
    let d = result_dict(py, &recon.result)?;
    d.set_item("h", recon.spec.h.clone())?;
    d.set_item("j", recon.spec.j.clone())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(name = "tc_constant_local")]
fn tc_constant_local_py<'py>(
    py: Python<'py>,
    k: usize,
    g: f64,
    beta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let tc = tc_constant_local(k, g, beta).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("beta_c", tc.beta_c)?;
    d.set_item("tc_factor", tc.tc_factor)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(name = "shallow_surrogate")]
fn shallow_surrogate_py<'py>(py: Python<'py>, eps: f64, n: usize) -> PyResult<Bound<'py, PyDict>> {
    let s = shallow_surrogate(eps, n).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("beta_eps", s.beta_eps)?;
    d.set_item("d_exact_per_qubit", s.d_exact_per_qubit)?;
    d.set_item("d_total", s.d_total)?;
    d.set_item("bound", s.stated_bound)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(name = "lr_growth_1d")]
fn lr_growth_1d_py(k: usize, v: f64, mu: f64, t: f64, n: usize) -> PyResult<f64> {
    lr_growth_1d(k, v, mu, t, n).map_err(err)
}

#[pyfunction]
#[pyo3(name = "derive_seed")]
fn derive_seed_py(master: u64, label: &str, index: u64) -> u64 {
    derive_seed(master, label, index)
}

#[pyfunction]
#[pyo3(name = "hoeffding_linf_delta")]
fn hoeffding_linf_delta_py(count: usize, m: usize, delta: f64) -> f64 {
    hoeffding_linf_delta(count, m, delta)
}

#[pymodule]
fn gibbstomo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(plan_samples_py, m)?)?;
    m.add_function(wrap_pyfunction!(chain_expectations, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_chain, m)?)?;
    m.add_function(wrap_pyfunction!(tc_constant_local_py, m)?)?;
    m.add_function(wrap_pyfunction!(shallow_surrogate_py, m)?)?;
    m.add_function(wrap_pyfunction!(lr_growth_1d_py, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed_py, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_linf_delta_py, m)?)?;
    Ok(())
}
