use normsample::bench::{failure_rate, min_sample_size, wilson, TrialConfig, Z95};
use normsample::hardness::{check_failure, generate, GenParams};
use normsample::objective::{estimate_opt, full_objective, relative_error, RelError};
use normsample::sampler::draw_iid_with;
use normsample::{
    Convention, CountedSample, Error, HardKind, LossKind, LossSpec, ObjectiveSpec, RegKind,
    ScoreKind, WeightedSample,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Budget { .. } | Error::OptimizerFailure(_) | Error::Construction(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// Weighted point set: atoms with probability masses.
#[pyclass(name = "Instance", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyInstance(normsample::Instance);

#[pymethods]
impl PyInstance {
    /// Masses default to uniform and are normalized to sum to one.
    #[new]
    #[pyo3(signature = (rows, masses=None))]
    fn new(rows: Vec<Vec<f64>>, masses: Option<Vec<f64>>) -> PyResult<Self> {
        let inst = match masses {
            Some(m) => normsample::Instance::from_weights(rows, m),
            None => normsample::Instance::uniform(rows),
        };
        inst.map(PyInstance).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.0.masses().to_vec()
    }

    fn atoms(&self) -> Vec<Vec<f64>> {
        self.0.atoms().map(<[f64]>::to_vec).collect()
    }

    fn norms(&self) -> Vec<f64> {
        self.0.norms()
    }

    fn __repr__(&self) -> String {
        format!("Instance(n={}, dim={})", self.0.len(), self.0.dim())
    }
}

/// Regularized objective `f(x) = sum_i p_i g(<a_i, x>) + R(x)/k`.
#[pyclass(name = "Objective", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyObjective(ObjectiveSpec);

#[pymethods]
impl PyObjective {
    #[new]
    fn new(loss: &str, reg: &str, k: f64) -> PyResult<Self> {
        ObjectiveSpec::new(parse(loss)?, parse(reg)?, k)
            .map(PyObjective)
            .map_err(err)
    }

    #[getter]
    fn loss(&self) -> &'static str {
        self.0.loss.kind.name()
    }

    #[getter]
    fn reg(&self) -> &'static str {
        self.0.reg.name()
    }

    #[getter]
    fn k(&self) -> f64 {
        self.0.k
    }

    /// `(f0(x), f(x))`: the loss part alone and with the regularizer added.
    fn value(&self, instance: &PyInstance, x: Vec<f64>) -> PyResult<(f64, f64)> {
        full_objective(&instance.0, &self.0, &x).map_err(err)
    }

    /// `|f0(x) - f0_hat(x)| / f(x)`, or `None` when `f(x) = 0`.
    fn relative_error(&self, instance: &PyInstance, sample: &PySample, x: Vec<f64>) -> PyResult<Option<f64>> {
        let e = relative_error(&instance.0, &self.0, &sample.samples, &x).map_err(err)?;
        Ok(match e {
            RelError::Finite(v) => Some(v),
            RelError::ZeroObjective => None,
        })
    }

    /// Best objective value found and its minimizer.
    #[pyo3(signature = (instance, restarts=4, seed=0))]
    fn optimum(&self, py: Python<'_>, instance: &PyInstance, restarts: usize, seed: u64) -> PyResult<(f64, Vec<f64>)> {
        let r = py
            .detach(|| estimate_opt(&instance.0, &self.0, restarts, seed))
            .map_err(err)?;
        Ok((r.opt_value, r.minimizer))
    }

    fn __repr__(&self) -> String {
        format!("Objective(loss={}, reg={}, k={})", self.loss(), self.reg(), self.0.k)
    }
}

/// An importance-weighted sample drawn from an instance.
#[pyclass(name = "Sample", frozen)]
struct PySample {
    samples: Vec<WeightedSample>,
    convention: Convention,
}

#[pymethods]
impl PySample {
    fn __len__(&self) -> usize {
        self.samples.len()
    }

    #[getter]
    fn indices(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.atom_index).collect()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.w).collect()
    }

    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.s).collect()
    }

    #[getter]
    fn convention(&self) -> &'static str {
        self.convention.name()
    }
}

/// Draws `m` atoms i.i.d. from the score-based law with importance weights.
#[pyfunction]
#[pyo3(signature = (instance, m, seed=0, score="norm", convention="mixture"))]
fn draw(instance: &PyInstance, m: usize, seed: u64, score: &str, convention: &str) -> PyResult<PySample> {
    let convention: Convention = parse(convention)?;
    let samples = draw_iid_with(&instance.0, parse::<ScoreKind>(score)?, convention, m, seed).map_err(err)?;
    Ok(PySample { samples, convention })
}

/// Per-atom sampling probabilities and weights under a score and convention.
#[pyfunction]
#[pyo3(signature = (instance, score="norm", convention="mixture"))]
fn sampling_law(instance: &PyInstance, score: &str, convention: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = normsample::Sampler::new(&instance.0, parse(score)?, parse(convention)?).map_err(err)?;
    Ok((s.probabilities().to_vec(), s.weights().to_vec()))
}

#[pyfunction]
fn loss_value(loss: &str, r: f64) -> PyResult<f64> {
    Ok(LossSpec::new(parse::<LossKind>(loss)?).eval(r))
}

/// 95% Wilson score interval for `successes` out of `n`.
#[pyfunction]
fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    wilson(successes, n, Z95)
}

/// Adversarial instance on which sampling needs many draws.
#[pyclass(name = "HardInstance", frozen)]
struct PyHard(normsample::HardInstance);

#[pymethods]
impl PyHard {
    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.name()
    }

    #[getter]
    fn instance(&self) -> PyInstance {
        PyInstance(self.0.instance.clone())
    }

    #[getter]
    fn objective(&self) -> PyObjective {
        PyObjective(self.0.spec)
    }

    #[getter]
    fn convention(&self) -> &'static str {
        self.0.convention().name()
    }

    /// Stored adversarial queries with the atom each isolates, if any.
    fn queries(&self) -> Vec<(Vec<f64>, Option<usize>)> {
        self.0.adversarial().map(|(x, t)| (x.to_vec(), t)).collect()
    }

    /// Whether the sample fails the instance at tolerance `eps`, and the
    /// largest relative error seen.
    fn check_failure(&self, sample: &PySample, eps: f64) -> PyResult<(bool, f64)> {
        let counted = CountedSample::from_samples(self.0.instance.len(), &sample.samples, sample.convention)
            .map_err(err)?;
        let v = check_failure(&self.0, &counted, eps).map_err(err)?;
        Ok((v.failed, v.max_error))
    }

    /// Failure rate over `trials` samples of size `m`: `(rate, ci_lo, ci_hi)`.
    #[pyo3(signature = (m, eps, trials=200, seed=0, score="norm"))]
    fn failure_rate(&self, py: Python<'_>, m: usize, eps: f64, trials: usize, seed: u64, score: &str) -> PyResult<(f64, f64, f64)> {
        let mut cfg = TrialConfig::hard(self.0.clone(), eps, 0.5, seed).with_trials(trials);
        cfg.score = parse(score)?;
        let r = py.detach(|| failure_rate(&cfg, m)).map_err(err)?;
        Ok((r.rate, r.ci_lo, r.ci_hi))
    }

    /// Smallest sample size whose failure rate is confidently below `delta`.
    #[pyo3(signature = (eps, delta, trials=200, seed=0, m_cap=2_000_000))]
    fn min_sample_size(&self, py: Python<'_>, eps: f64, delta: f64, trials: usize, seed: u64, m_cap: usize) -> PyResult<usize> {
        let mut cfg = TrialConfig::hard(self.0.clone(), eps, delta, seed).with_trials(trials);
        cfg.m_cap = m_cap;
        py.detach(|| min_sample_size(&cfg)).map(|r| r.m_star).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "HardInstance(kind={}, n={}, dim={})",
            self.0.kind,
            self.0.instance.len(),
            self.0.instance.dim()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (kind, k=None, eps=None, reg=None, n=None, d=None, t_values=None))]
fn generate_hard(
    kind: &str,
    k: Option<f64>,
    eps: Option<f64>,
    reg: Option<&str>,
    n: Option<usize>,
    d: Option<usize>,
    t_values: Option<Vec<f64>>,
) -> PyResult<PyHard> {
    let params = GenParams {
        kind: parse::<HardKind>(kind)?,
        k,
        eps,
        reg: reg.map(parse::<RegKind>).transpose()?,
        n,
        d,
        t_values,
    };
    generate(&params).map(PyHard).map_err(err)
}

#[pymodule]
fn pynormsample(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PyObjective>()?;
    m.add_class::<PySample>()?;
    m.add_class::<PyHard>()?;
    m.add_function(wrap_pyfunction!(draw, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_law, m)?)?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(generate_hard, m)?)?;
    Ok(())
}
