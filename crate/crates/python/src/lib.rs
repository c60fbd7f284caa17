//! Python bindings: data worlds, experiment configs, training, bounds, the
//! finite-class Monte Carlo and function-space tools.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use funcreg_lab::bounds::{self, BoundQuery, Capacity, ClassSizes, Entropies, Variant, VcDims};
use funcreg_lab::experiment::embedding::functional_vectors;
use funcreg_lab::experiment::sweep::architecture_for;
use funcreg_lab::experiment::{self as exp, ExperimentConfig, RunData};
use funcreg_lab::funcspace::{self, EmbedConfig, EmbedMethod};
use funcreg_lab::numkit::{self, Matrix, RngStream};
use funcreg_lab::pacmc;
use funcreg_lab::synthgen::{self, WorldKind};
use funcreg_lab::trainer::{self, Pipeline, TrainConfig};

fn err(e: funcreg_lab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

#[pyclass(name = "DataSpec", frozen)]
struct PyDataSpec {
    inner: synthgen::DataSpec,
}

#[pymethods]
impl PyDataSpec {
    /// World `kind` ("ae" or "masked") with a random basis drawn from `seed`.
    #[staticmethod]
    #[pyo3(signature = (kind, d, r, seed, zero_mean = false, noise_variance = None))]
    fn generate(kind: &str, d: usize, r: usize, seed: u64, zero_mean: bool, noise_variance: Option<f64>) -> PyResult<Self> {
        let kind: WorldKind = kind.parse().map_err(err)?;
        let mut spec = synthgen::DataSpec::generate(kind, &mut RngStream::new(seed), d, r)
            .map_err(err)?
            .with_zero_mean(zero_mean);
        if let Some(v) = noise_variance {
            spec = spec.with_noise_variance(v);
        }
        Ok(Self { inner: spec })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn r(&self) -> usize {
        self.inner.r
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    /// `(inputs, labels)`; labels are `None` when `labeled` is false.
    #[pyo3(signature = (n, seed, labeled = true))]
    fn sample(&self, n: usize, seed: u64, labeled: bool) -> PyResult<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
        let data = self.inner.sample(n, &mut RngStream::new(seed), labeled).map_err(err)?;
        Ok((rows(&data.inputs), data.labels))
    }

    fn analytic_trailing_variance(&self, k: usize) -> PyResult<f64> {
        self.inner.analytic_trailing_variance(k).map_err(err)
    }
}

#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pyclass(name = "SweepRow", frozen, get_all)]
struct PySweepRow {
    axis: String,
    axis_value: usize,
    method: String,
    mean: f64,
    std: f64,
    runs: usize,
    failed: usize,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: exp::parse_config(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn desk() -> Self {
        Self {
            inner: ExperimentConfig::desk(),
        }
    }

    #[staticmethod]
    fn paper() -> Self {
        Self {
            inner: ExperimentConfig::paper(),
        }
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn runs(&self) -> usize {
        self.inner.runs
    }

    #[setter]
    fn set_runs(&mut self, runs: usize) {
        self.inner.runs = runs;
    }

    /// One row per axis value and pipeline.
    fn run_sweep(&self, py: Python<'_>) -> PyResult<Vec<PySweepRow>> {
        let cfg = self.inner.clone();
        let out = py.detach(move || exp::run_sweep(&cfg)).map_err(err)?;
        Ok(out
            .rows
            .iter()
            .map(|r| PySweepRow {
                axis: r.axis.name().to_string(),
                axis_value: r.axis_value,
                method: r.method.name().to_string(),
                mean: r.mean,
                std: r.std,
                runs: r.runs,
                failed: r.failed,
            })
            .collect())
    }

    /// `(vectors, tags)` of the function-space experiment.
    fn functional_vectors(&self, py: Python<'_>) -> PyResult<(Vec<Vec<f64>>, Vec<String>)> {
        let cfg = self.inner.clone();
        let (v, _) = py.detach(move || functional_vectors(&cfg)).map_err(err)?;
        Ok((
            v.iter().map(|x| x.values.clone()).collect(),
            v.iter().map(|x| x.tag.name().to_string()).collect(),
        ))
    }
}

#[pyclass(name = "TrainResult", frozen, get_all)]
struct PyTrainResult {
    pipeline: String,
    train_mse: f64,
    test_mse: Option<f64>,
    lr: f64,
    pretrain_reg_loss: Option<f64>,
    loss_trace: Vec<f64>,
}

/// Train one pipeline on run 0 data of `config` at its first axis point.
#[pyfunction]
#[pyo3(signature = (config, pipeline = "FuncReg"))]
fn train(py: Python<'_>, config: &PyConfig, pipeline: &str) -> PyResult<PyTrainResult> {
    let pipeline: Pipeline = pipeline.parse().map_err(err)?;
    let cfg = config.inner.clone();
    let res = py
        .detach(move || -> funcreg_lab::Result<_> {
            let (d, r, n) = cfg.axis_points()[0];
            let data = RunData::generate(
                cfg.world,
                d,
                r,
                cfg.zero_mean,
                cfg.noise_variance,
                (cfg.unlabeled, n, cfg.test),
                &RngStream::for_run(cfg.seed, 0),
            )?;
            let tc = TrainConfig {
                pipeline,
                seed: cfg.seed,
                ..cfg.train.clone()
            };
            trainer::train_pipeline(architecture_for(cfg.world), r, &data.labeled, Some(&data.unlabeled), Some(&data.test), &tc)
        })
        .map_err(err)?;
    Ok(PyTrainResult {
        pipeline: pipeline.name().to_string(),
        train_mse: res.train_loss,
        test_mse: res.test_loss,
        lr: res.chosen_lr,
        pretrain_reg_loss: res.pretrain_reg_loss,
        loss_trace: res.loss_trace,
    })
}

#[pyclass(name = "BoundResult", frozen, get_all)]
struct PyBoundResult {
    variant: String,
    m_u: f64,
    m_l: f64,
    m_u_ceil: u64,
    m_l_ceil: u64,
    m_l_unregularized: f64,
    reduction: f64,
}

/// Sample sizes of one bound variant. Thm1 takes log class sizes, thm2-5
/// metric entropies, thm6 VC dimensions.
#[pyfunction]
#[pyo3(signature = (
    variant, eps0, eps1, delta, *,
    ln_h = None, ln_f = None, ln_g = None, ln_htau = None,
    ln_n_g = None, ln_n_h = None, ln_n_f = None, ln_n_hpruned = None, ln_n_h_labeled = None,
    vc_gh = None, vc_fhpruned = None, vc_fh = None,
    eps_r = 0.0, eps_c = 0.0, c = 1.0, l = 1.0
))]
#[allow(clippy::too_many_arguments)]
fn compute_bounds(
    variant: &str,
    eps0: f64,
    eps1: f64,
    delta: f64,
    ln_h: Option<f64>,
    ln_f: Option<f64>,
    ln_g: Option<f64>,
    ln_htau: Option<f64>,
    ln_n_g: Option<f64>,
    ln_n_h: Option<f64>,
    ln_n_f: Option<f64>,
    ln_n_hpruned: Option<f64>,
    ln_n_h_labeled: Option<f64>,
    vc_gh: Option<f64>,
    vc_fhpruned: Option<f64>,
    vc_fh: Option<f64>,
    eps_r: f64,
    eps_c: f64,
    c: f64,
    l: f64,
) -> PyResult<PyBoundResult> {
    let variant: Variant = variant.parse().map_err(err)?;
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| PyValueError::new_err(format!("{variant} needs {name}")));
    let capacity = match variant {
        Variant::Thm1 => Capacity::Sizes(ClassSizes {
            ln_h: need(ln_h, "ln_h")?,
            ln_f: need(ln_f, "ln_f")?,
            ln_g: need(ln_g, "ln_g")?,
            ln_htau: need(ln_htau, "ln_htau")?,
        }),
        Variant::Thm6 => Capacity::Vc(VcDims {
            g_h: need(vc_gh, "vc_gh")?,
            f_hpruned: need(vc_fhpruned, "vc_fhpruned")?,
            f_h: vc_fh,
        }),
        _ => Capacity::Entropies(Entropies {
            ln_n_g: need(ln_n_g, "ln_n_g")?,
            ln_n_h: need(ln_n_h, "ln_n_h")?,
            ln_n_f: need(ln_n_f, "ln_n_f")?,
            ln_n_hpruned: need(ln_n_hpruned, "ln_n_hpruned")?,
            ln_n_h_labeled,
        }),
    };
    let q = BoundQuery {
        eps_r,
        eps_c,
        c,
        l,
        ..BoundQuery::new(variant, eps0, eps1, delta, capacity)
    };
    let b = bounds::compute_bounds(&q).map_err(err)?;
    Ok(PyBoundResult {
        variant: b.variant.name().to_string(),
        m_u: b.m_u,
        m_l: b.m_l,
        m_u_ceil: b.m_u_ceil,
        m_l_ceil: b.m_l_ceil,
        m_l_unregularized: b.m_l_unregularized,
        reduction: b.reduction,
    })
}

#[pyfunction]
fn log_binomial(n: u64, k: u64) -> PyResult<f64> {
    bounds::log_binomial(n, k).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (kind, d, eps, c = 1.0))]
fn reduction_vs_r(kind: &str, d: usize, eps: f64, c: f64) -> PyResult<Vec<(usize, f64)>> {
    let kind: WorldKind = kind.parse().map_err(err)?;
    bounds::reduction_vs_r(kind, d, eps, c, bounds::max_rank(kind, d)).map_err(err)
}

#[pyclass(name = "PacReport", frozen, get_all)]
struct PyPacReport {
    m_u: u64,
    m_l: u64,
    violations: u64,
    trials: u64,
    frequency: f64,
    threshold: f64,
    passed: bool,
}

/// Monte Carlo check on one world: "random", "coin_flip", "near_miss" or "trivial".
#[pyfunction]
#[pyo3(signature = (world = "random", eps0 = 0.1, eps1 = 0.1, delta = 0.1, trials = 2000, seed = 0))]
fn verify_theorem1(py: Python<'_>, world: &str, eps0: f64, eps1: f64, delta: f64, trials: u64, seed: u64) -> PyResult<PyPacReport> {
    let rng = RngStream::new(seed);
    let w = match world {
        "random" => pacmc::random_world(pacmc::RandomWorldSpec::default(), &mut rng.substream(1)),
        "coin_flip" => pacmc::coin_flip_world(),
        "near_miss" => pacmc::near_miss_world(0.12, 0.05),
        "trivial" => pacmc::trivial_world(),
        other => return Err(PyValueError::new_err(format!("unknown world '{other}'"))),
    }
    .map_err(err)?;
    let rep = py
        .detach(move || w.verify_theorem1(eps0, eps1, delta, trials, &rng.substream(2)))
        .map_err(err)?;
    Ok(PyPacReport {
        m_u: rep.counts.m_u,
        m_l: rep.counts.m_l,
        violations: rep.counts.violations,
        trials: rep.counts.trials,
        frequency: rep.counts.frequency(),
        threshold: rep.threshold,
        passed: rep.pass,
    })
}

/// Mean pairwise distance of functional vectors.
#[pyfunction]
fn dispersion(vectors: Vec<Vec<f64>>) -> PyResult<f64> {
    let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    funcspace::dispersion(&refs).map_err(err)
}

/// 2-D embedding ("tsne" or "pca"), one `(x, y)` per vector.
#[pyfunction]
#[pyo3(signature = (vectors, method = "tsne", perplexity = 30.0, iterations = 1000, seed = 0))]
fn embed(py: Python<'_>, vectors: Vec<Vec<f64>>, method: &str, perplexity: f64, iterations: usize, seed: u64) -> PyResult<Vec<(f64, f64)>> {
    let method: EmbedMethod = method.parse().map_err(err)?;
    let cfg = EmbedConfig {
        method,
        perplexity,
        iterations,
        seed,
        ..EmbedConfig::default()
    };
    let coords = py
        .detach(move || {
            let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
            funcspace::embed(&refs, &cfg)
        })
        .map_err(err)?;
    Ok((0..coords.rows()).map(|i| (coords[(i, 0)], coords[(i, 1)])).collect())
}

/// `min_O ||O a - b||_F^2` over orthonormal `O`.
#[pyfunction]
fn procrustes_min_distance_sq(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    numkit::procrustes_min_distance_sq(&matrix(&a)?, &matrix(&b)?).map_err(err)
}

#[pymodule]
fn funcreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", exp::VERSION)?;
    m.add_class::<PyDataSpec>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySweepRow>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_class::<PyBoundResult>()?;
    m.add_class::<PyPacReport>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compute_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(log_binomial, m)?)?;
    m.add_function(wrap_pyfunction!(reduction_vs_r, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theorem1, m)?)?;
    m.add_function(wrap_pyfunction!(dispersion, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes_min_distance_sq, m)?)?;
    Ok(())
}
