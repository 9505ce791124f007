//! Python bindings for `condreg`.
//!
//! Vectors cross the boundary as Python sequences of floats and designs as
//! lists of rows. Omitting a design means the location model (one column of
//! ones).

use std::sync::Arc;

use condreg::conddist::ConditionalLaw;
use condreg::distributions::{parse_density, DensityRef};
use condreg::intervals::{
    conditional_coverage, configuration_from_raw, default_levels, method_intervals, ConfidenceInterval, CoverageConfig,
    CoverageReport, IntervalMethod, MethodSpec, NpiScore, PiDensity, DEFAULT_EXACT_DRAWS, DEFAULT_PI_DRAWS,
    DEFAULT_RB_DRAWS, DRAWS_PER_ALPHA,
};
use condreg::kernel::{normal_reference_bandwidth, rate_bandwidths, Bandwidths, KernelSpec};
use condreg::model::{fit as fit_model, Dataset, Estimator, FitResult, ModelKind};
use condreg::polysampling::{
    bioptimal as bioptimal_rule, build_confrontation, cmse_quadratic as cmse_quadratic_of, cmse_simulation,
    minimax as minimax_rule, seeded_configuration, CmseQuadratic, CmseSimulation, ConfrontationKind, Equivariance,
    RuleChoice, RuleSpec,
};
use condreg::{Error, SeedTree};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(condreg_py, NumericalError, PyException, "A numerical routine could not produce a result.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidData(_)
        | Error::Parse(_)
        | Error::BadBandwidth(_)
        | Error::IndexOutOfRange { .. }
        | Error::OutOfDomain(_)
        | Error::InvalidConfrontation(_)
        | Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        _ => NumericalError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn design(x: Option<Vec<Vec<f64>>>, n: usize) -> PyResult<DMatrix<f64>> {
    let Some(rows) = x else {
        return Ok(DMatrix::from_element(n, 1, 1.0));
    };
    if rows.len() != n {
        return Err(PyValueError::new_err(format!("design has {} rows, response has {n}", rows.len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("design rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn dataset(y: Vec<f64>, x: Option<Vec<Vec<f64>>>) -> PyResult<Dataset> {
    let x = design(x, y.len())?;
    Dataset::new(x, DVector::from_vec(y)).map_err(to_py)
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Draws meeting the 20/α floor at the smallest α unless given.
fn draws_for(explicit: Option<usize>, default: usize, levels: &[f64]) -> usize {
    explicit.unwrap_or_else(|| {
        let alpha = levels.iter().map(|l| 1.0 - l).fold(1.0, f64::min);
        default.max((DRAWS_PER_ALPHA / alpha).ceil() as usize)
    })
}

/// Hierarchical seed: every derived path gives an independent stream.
#[pyclass(name = "SeedTree", module = "condreg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySeedTree(SeedTree);

#[pymethods]
impl PySeedTree {
    #[new]
    fn new(seed: u64) -> Self {
        Self(SeedTree::new(seed))
    }

    #[getter]
    fn master(&self) -> u64 {
        self.0.master()
    }

    fn derive(&self, label: &str, index: u64) -> Self {
        Self(self.0.derive(label, index))
    }

    /// First `n` standard normals of this node's stream.
    fn normals(&self, n: usize) -> Vec<f64> {
        self.0.stream().normals(n)
    }

    /// First `n` uniforms on [0, 1) of this node's stream.
    fn uniforms(&self, n: usize) -> Vec<f64> {
        self.0.stream().uniforms(n)
    }

    fn __repr__(&self) -> String {
        format!("SeedTree({}, path={:?})", self.0.master(), self.0.path())
    }
}

fn seed_of(seed: &Bound<'_, PyAny>) -> PyResult<SeedTree> {
    if let Ok(t) = seed.cast::<PySeedTree>() {
        return Ok(t.get().0.clone());
    }
    Ok(SeedTree::new(seed.extract::<u64>()?))
}

/// Error density from a name such as `normal`, `t(5)`, `cbeta(2,2)`,
/// `slash` or `mix-normal`; `name*s` rescales by s.
#[pyclass(name = "Density", module = "condreg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensity(DensityRef);

#[pymethods]
impl PyDensity {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        parse_density(spec).map(Self).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name()
    }

    #[getter]
    fn symmetric(&self) -> bool {
        self.0.is_symmetric()
    }

    #[getter]
    fn support(&self) -> (f64, f64) {
        self.0.support()
    }

    fn pdf(&self, z: f64) -> f64 {
        self.0.density(z)
    }

    fn log_pdf(&self, z: f64) -> f64 {
        self.0.log_density(z)
    }

    /// First derivative of the log density.
    fn score(&self, z: f64) -> PyResult<f64> {
        self.0.score(z).map_err(to_py)
    }

    fn sample(&self, n: usize, seed: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        Ok(self.0.sample(&mut seed_of(seed)?.stream(), n))
    }

    fn __repr__(&self) -> String {
        format!("Density({:?})", self.0.name())
    }
}

/// Fitted coefficients, scale and residual configuration.
#[pyclass(name = "Fit", module = "condreg_py", frozen, get_all)]
struct PyFit {
    estimator: String,
    model: String,
    beta_hat: Vec<f64>,
    sigma_hat: f64,
    residuals: Vec<f64>,
    studentized_residuals: Option<Vec<f64>>,
    /// Residuals the pivot law conditions on for this model.
    ancillary: Vec<f64>,
}

#[pymethods]
impl PyFit {
    fn __repr__(&self) -> String {
        format!("Fit(beta_hat={:?}, sigma_hat={})", self.beta_hat, self.sigma_hat)
    }
}

fn py_fit(f: &FitResult, kind: ModelKind) -> PyResult<PyFit> {
    Ok(PyFit {
        estimator: format!("{:?}", f.estimator),
        model: kind.to_string(),
        beta_hat: vec_of(&f.beta_hat),
        sigma_hat: f.sigma_hat,
        residuals: vec_of(&f.residuals_raw),
        studentized_residuals: f.residuals_studentized.as_ref().map(vec_of),
        ancillary: vec_of(&f.ancillary(kind).map_err(to_py)?),
    })
}

/// Fits `y = Xβ + σε` by least squares (`ls`) or least absolute deviations
/// (`median`).
#[pyfunction]
#[pyo3(signature = (y, x=None, estimator="ls", model="regscale"))]
fn fit(y: Vec<f64>, x: Option<Vec<Vec<f64>>>, estimator: &str, model: &str) -> PyResult<PyFit> {
    let data = dataset(y, x)?;
    let kind: ModelKind = parse(model)?;
    let f = fit_model(&data, parse(estimator)?, kind).map_err(to_py)?;
    py_fit(&f, kind)
}

/// Two-sided interval for every coefficient at one level.
#[pyclass(name = "Interval", module = "condreg_py", frozen, get_all)]
struct PyInterval {
    method: String,
    level: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[pymethods]
impl PyInterval {
    fn __repr__(&self) -> String {
        format!("Interval({}, level={}, lower={:?}, upper={:?})", self.method, self.level, self.lower, self.upper)
    }
}

impl From<ConfidenceInterval> for PyInterval {
    fn from(c: ConfidenceInterval) -> Self {
        Self {
            method: c.method.to_string(),
            level: c.level,
            lower: c.lower,
            upper: c.upper,
        }
    }
}

/// Options shared by every interval method.
struct MethodOptions {
    h: Option<f64>,
    h0: Option<f64>,
    h1: Option<f64>,
    kernel: KernelSpec,
    b: Option<usize>,
    draws: Option<usize>,
    oracle: bool,
}

impl MethodOptions {
    fn spec(&self, method: IntervalMethod, levels: &[f64], n: usize) -> PyResult<MethodSpec> {
        let kernel = self.kernel;
        Ok(match method {
            IntervalMethod::ExactUnconditional => MethodSpec::ExactUnconditional {
                b: draws_for(self.b, DEFAULT_EXACT_DRAWS, levels),
            },
            IntervalMethod::Rb => MethodSpec::Rb {
                b: draws_for(self.b, DEFAULT_RB_DRAWS, levels),
            },
            IntervalMethod::Pi => MethodSpec::Pi {
                density: if self.oracle {
                    PiDensity::True
                } else {
                    PiDensity::Kernel { h: self.h, kernel }
                },
                draws: self.draws,
            },
            IntervalMethod::Npi => MethodSpec::Npi {
                score: if self.oracle {
                    NpiScore::True
                } else {
                    let bandwidths = match (self.h0, self.h1) {
                        (Some(h0), Some(h1)) => Some(Bandwidths::with_default_trim(n, h0, h1).map_err(to_py)?),
                        (None, None) => None,
                        _ => return Err(PyValueError::new_err("give both h0 and h1 or neither")),
                    };
                    NpiScore::Plugin { bandwidths, kernel }
                },
            },
        })
    }
}

fn density_opt(dist: Option<&str>) -> PyResult<Option<DensityRef>> {
    dist.map(parse_density).transpose().map_err(to_py)
}

/// Confidence intervals by `exact`, `rb`, `pi` or `npi`.
///
/// `dist` names the true error density; `exact` needs it, as do `pi` and
/// `npi` with `oracle=True`. `draws=None` gives PI quadrature quantiles for
/// one coefficient.
#[pyfunction]
#[pyo3(signature = (
    y, method, seed, x=None, levels=vec![0.95], model="regscale", estimator="ls", dist=None,
    h=None, h0=None, h1=None, kernel="gaussian", b=None, draws=Some(DEFAULT_PI_DRAWS), oracle=false
))]
#[allow(clippy::too_many_arguments)]
fn intervals(
    py: Python<'_>,
    y: Vec<f64>,
    method: &str,
    seed: &Bound<'_, PyAny>,
    x: Option<Vec<Vec<f64>>>,
    levels: Vec<f64>,
    model: &str,
    estimator: &str,
    dist: Option<&str>,
    h: Option<f64>,
    h0: Option<f64>,
    h1: Option<f64>,
    kernel: &str,
    b: Option<usize>,
    draws: Option<usize>,
    oracle: bool,
) -> PyResult<Vec<PyInterval>> {
    let data = dataset(y, x)?;
    let kind: ModelKind = parse(model)?;
    let estimator: Estimator = parse(estimator)?;
    let opts = MethodOptions { h, h0, h1, kernel: parse(kernel)?, b, draws, oracle };
    let spec = opts.spec(parse(method)?, &levels, data.n())?;
    let dist = density_opt(dist)?;
    let seed = seed_of(seed)?;
    let f = fit_model(&data, estimator, kind).map_err(to_py)?;
    let cis = py
        .detach(|| method_intervals(&spec, &f, data.x(), kind, &levels, &seed, dist))
        .map_err(to_py)?;
    Ok(cis.into_iter().map(PyInterval::from).collect())
}

/// Configuration of a raw error sample after fitting it on design `x`.
#[pyfunction]
#[pyo3(signature = (raw, x=None, estimator="ls", model="regscale"))]
fn configuration(raw: Vec<f64>, x: Option<Vec<Vec<f64>>>, estimator: &str, model: &str) -> PyResult<Vec<f64>> {
    let x = design(x, raw.len())?;
    let a = configuration_from_raw(&DVector::from_vec(raw), &x, parse(estimator)?, parse(model)?).map_err(to_py)?;
    Ok(vec_of(&a))
}

/// Conditional coverage of one method at each level.
#[pyclass(name = "Coverage", module = "condreg_py", frozen, get_all)]
struct PyCoverage {
    method: String,
    levels: Vec<f64>,
    coverage: Vec<f64>,
    se: Vec<f64>,
    r: usize,
    failures: usize,
    n: usize,
    coordinate: usize,
    ancillary_hash: String,
    seed: u64,
}

#[pymethods]
impl PyCoverage {
    /// Coverage minus nominal level.
    #[getter]
    fn error(&self) -> Vec<f64> {
        self.coverage.iter().zip(&self.levels).map(|(c, l)| c - l).collect()
    }

    fn __repr__(&self) -> String {
        format!("Coverage({}, coverage={:?})", self.method, self.coverage)
    }
}

impl From<CoverageReport> for PyCoverage {
    fn from(r: CoverageReport) -> Self {
        Self {
            method: r.method.to_string(),
            levels: r.levels,
            coverage: r.coverage,
            se: r.se,
            r: r.r,
            failures: r.failures,
            n: r.n,
            coordinate: r.coordinate,
            ancillary_hash: r.ancillary_hash,
            seed: r.seed,
        }
    }
}

/// Coverage of each method over `r` datasets sharing the configuration
/// `ancillary`, with errors from `dist`.
#[pyfunction]
#[pyo3(signature = (
    ancillary, methods, dist, seed, x=None, levels=None, r=5000, model="regscale", estimator="ls",
    beta=0.0, sigma=1.0, coordinate=0, h=None, h0=None, h1=None, kernel="gaussian", b=None,
    draws=Some(DEFAULT_PI_DRAWS), oracle=false
))]
#[allow(clippy::too_many_arguments)]
fn coverage(
    py: Python<'_>,
    ancillary: Vec<f64>,
    methods: Vec<String>,
    dist: &str,
    seed: &Bound<'_, PyAny>,
    x: Option<Vec<Vec<f64>>>,
    levels: Option<Vec<f64>>,
    r: usize,
    model: &str,
    estimator: &str,
    beta: f64,
    sigma: f64,
    coordinate: usize,
    h: Option<f64>,
    h0: Option<f64>,
    h1: Option<f64>,
    kernel: &str,
    b: Option<usize>,
    draws: Option<usize>,
    oracle: bool,
) -> PyResult<Vec<PyCoverage>> {
    let n = ancillary.len();
    let x = design(x, n)?;
    let levels = levels.unwrap_or_else(default_levels);
    let opts = MethodOptions { h, h0, h1, kernel: parse(kernel)?, b, draws, oracle };
    let specs = methods
        .iter()
        .map(|m| opts.spec(parse(m)?, &levels, n))
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = CoverageConfig {
        beta_true: DVector::from_element(x.ncols(), beta),
        ancillary: DVector::from_vec(ancillary),
        x,
        kind: parse(model)?,
        estimator: parse(estimator)?,
        sigma_true: sigma,
        true_density: parse_density(dist).map_err(to_py)?,
        levels,
        r,
        seed: seed_of(seed)?,
        coordinate,
    };
    let reports = py.detach(|| conditional_coverage(&cfg, &specs)).map_err(to_py)?;
    Ok(reports.into_iter().map(PyCoverage::from).collect())
}

/// Law of the pivot given a residual configuration.
///
/// `model="reg"` gives the law of U = β̂ − β given raw residuals;
/// `model="regscale"` the law of T given studentized residuals.
#[pyclass(name = "ConditionalLaw", module = "condreg_py", frozen, skip_from_py_object)]
struct PyConditionalLaw(Arc<ConditionalLaw>);

#[pymethods]
impl PyConditionalLaw {
    #[new]
    #[pyo3(signature = (ancillary, density, x=None, model="regscale"))]
    fn new(ancillary: Vec<f64>, density: &PyDensity, x: Option<Vec<Vec<f64>>>, model: &str) -> PyResult<Self> {
        let x = design(x, ancillary.len())?;
        let kind: ModelKind = parse(model)?;
        let law = ConditionalLaw::new(kind.into(), DVector::from_vec(ancillary), x, density.0.clone()).map_err(to_py)?;
        Ok(Self(Arc::new(law)))
    }

    /// Normalized log density of the pivot.
    fn log_density(&self, v: Vec<f64>) -> PyResult<f64> {
        self.0.log_density(&v).map_err(to_py)
    }

    /// Unnormalized log density of the pivot.
    fn log_density_unnormalized(&self, v: Vec<f64>) -> PyResult<f64> {
        self.0.log_pivot_unnormalized(&v).map_err(to_py)
    }

    /// Pivot CDF (one coefficient only).
    fn cdf(&self, v: f64) -> PyResult<f64> {
        self.0.cdf(v).map_err(to_py)
    }

    /// Pivot quantile (one coefficient only).
    fn quantile(&self, prob: f64) -> PyResult<f64> {
        self.0.quantile(prob).map_err(to_py)
    }

    /// `n_draws` pivot draws as rows.
    fn sample(&self, py: Python<'_>, n_draws: usize, seed: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<f64>>> {
        let seed = seed_of(seed)?;
        let law = &self.0;
        let draws = py
            .detach(|| law.sample(n_draws, &seed, law.default_method(), false))
            .map_err(to_py)?;
        Ok(draws
            .pivot
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect())
    }
}

/// Conditional MSE parabola `k + c·(v − v_star)²` of a location rule.
#[pyclass(name = "CmseQuadratic", module = "condreg_py", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyCmseQuadratic {
    k: f64,
    c: f64,
    v_star: f64,
    density: String,
}

impl PyCmseQuadratic {
    fn inner(&self) -> PyResult<CmseQuadratic> {
        CmseQuadratic::new(self.k, self.c, self.v_star, self.density.clone()).map_err(to_py)
    }
}

impl From<CmseQuadratic> for PyCmseQuadratic {
    fn from(q: CmseQuadratic) -> Self {
        Self { k: q.k, c: q.c, v_star: q.v_star, density: q.density }
    }
}

#[pymethods]
impl PyCmseQuadratic {
    #[new]
    #[pyo3(signature = (k, c, v_star, density="custom"))]
    fn new(k: f64, c: f64, v_star: f64, density: &str) -> PyResult<Self> {
        CmseQuadratic::new(k, c, v_star, density).map(Self::from).map_err(to_py)
    }

    fn __call__(&self, v: f64) -> PyResult<f64> {
        Ok(self.inner()?.eval(v))
    }

    fn __repr__(&self) -> String {
        format!("CmseQuadratic(k={}, c={}, v_star={}, density={:?})", self.k, self.c, self.v_star, self.density)
    }
}

/// cMSE parabola of `density` given a location configuration.
#[pyfunction]
#[pyo3(signature = (density, ancillary, sigma=1.0))]
fn cmse_quadratic(density: &PyDensity, ancillary: Vec<f64>, sigma: f64) -> PyResult<PyCmseQuadratic> {
    let n = ancillary.len();
    let q = cmse_quadratic_of(density.0.clone(), &DVector::from_vec(ancillary), &DMatrix::from_element(n, 1, 1.0), sigma)
        .map_err(to_py)?;
    Ok(q.into())
}

fn choice(c: RuleChoice) -> (f64, f64, bool) {
    (c.v, c.value, c.equalized)
}

/// `(v, value, equalized)` minimizing the larger of the two cMSEs.
#[pyfunction]
fn minimax(qf: &PyCmseQuadratic, qg: &PyCmseQuadratic) -> PyResult<(f64, f64, bool)> {
    Ok(choice(minimax_rule(&qf.inner()?, &qg.inner()?)))
}

/// `(v, value, equalized)` minimizing `pf·cMSE_F + pg·cMSE_G`.
#[pyfunction]
#[pyo3(signature = (qf, qg, pf=1.0, pg=1.0))]
fn bioptimal(qf: &PyCmseQuadratic, qg: &PyCmseQuadratic, pf: f64, pg: f64) -> PyResult<(f64, f64, bool)> {
    bioptimal_rule(&qf.inner()?, &qg.inner()?, pf, pg).map(choice).map_err(to_py)
}

fn confrontation_kind(name: &str, c: f64, ha: f64, hb: f64) -> PyResult<ConfrontationKind> {
    Ok(match name {
        "i" => ConfrontationKind::NormalVsSlash,
        "ii" => ConfrontationKind::LsVsPi { c },
        "iii" => ConfrontationKind::BandwidthPair { ha, hb },
        other => match other.split_once(':') {
            Some((f, g)) => ConfrontationKind::Custom { f: f.trim().into(), g: g.trim().into() },
            None => return Err(PyValueError::new_err(format!("unknown confrontation {other:?}"))),
        },
    })
}

/// One row of a conditional MSE table.
#[pyclass(name = "CmseRow", module = "condreg_py", frozen, get_all)]
struct PyCmseRow {
    confrontation: String,
    params: String,
    estimator: String,
    error_dist: String,
    n: usize,
    r: usize,
    v: f64,
    cmse: f64,
    mc_se: f64,
    failures: usize,
    seed: u64,
}

#[pymethods]
impl PyCmseRow {
    fn __repr__(&self) -> String {
        format!("CmseRow({} {} {}, cmse={})", self.confrontation, self.estimator, self.error_dist, self.cmse)
    }
}

/// Conditional MSE of least squares and the polysampling rules for errors
/// from `dist` on one seeded configuration of size `n`.
///
/// `confrontations` holds `i`, `ii`, `iii` or `F:G`; `rules` holds
/// `minimax` and/or `bioptimal`.
#[pyfunction]
#[pyo3(signature = (
    dist, seed, confrontations=vec!["i".to_string()], rules=vec!["minimax".to_string()], n=15, r=10_000,
    c=1.0, ha=0.1, hb=2.0, prices=(1.0, 1.0), location_only=false, kernel="gaussian"
))]
#[allow(clippy::too_many_arguments)]
fn polysample(
    py: Python<'_>,
    dist: &str,
    seed: &Bound<'_, PyAny>,
    confrontations: Vec<String>,
    rules: Vec<String>,
    n: usize,
    r: usize,
    c: f64,
    ha: f64,
    hb: f64,
    prices: (f64, f64),
    location_only: bool,
    kernel: &str,
) -> PyResult<Vec<PyCmseRow>> {
    let eq = if location_only {
        Equivariance::Location
    } else {
        Equivariance::LocationScale
    };
    let kernel: KernelSpec = parse(kernel)?;
    let density = parse_density(dist).map_err(to_py)?;
    let master = seed_of(seed)?;
    let ancillary = seeded_configuration(&density, n, &master.derive(&density.name(), 0), eq).map_err(to_py)?;
    let mut specs = vec![RuleSpec::LeastSquares];
    for name in &confrontations {
        let conf = build_confrontation(confrontation_kind(name.trim(), c, ha, hb)?, &ancillary, kernel).map_err(to_py)?;
        for rule in &rules {
            match rule.trim() {
                "minimax" => specs.push(RuleSpec::Minimax(conf.clone())),
                "bioptimal" => specs.push(RuleSpec::Bioptimal(conf.clone().with_prices(prices.0, prices.1).map_err(to_py)?)),
                other => return Err(PyValueError::new_err(format!("unknown rule {other:?}"))),
            }
        }
    }
    let sim = CmseSimulation {
        ancillary,
        true_density: density,
        beta_true: 0.0,
        sigma_true: 1.0,
        r,
        seed: master.derive("sim", 0),
        equivariance: eq,
    };
    let rows = py.detach(|| cmse_simulation(&sim, &specs)).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|row| PyCmseRow {
            confrontation: row.confrontation,
            params: row.params,
            estimator: row.estimator,
            error_dist: row.error_dist,
            n: row.n,
            r: row.r,
            v: row.v,
            cmse: row.cmse,
            mc_se: row.mc_se,
            failures: row.failures,
            seed: row.seed,
        })
        .collect())
}

/// Rate-default `(h0, h1, trim)`: multiples of `scale·n^(−1/(5+2q))`.
#[pyfunction]
#[pyo3(signature = (n, q=2, scale=1.0))]
fn bandwidths(n: usize, q: u32, scale: f64) -> (f64, f64, f64) {
    let b = rate_bandwidths(n, q, scale);
    (b.h0, b.h1, b.trim)
}

/// Normal-reference density bandwidth of a sample.
#[pyfunction]
fn reference_bandwidth(points: Vec<f64>) -> f64 {
    normal_reference_bandwidth(&points)
}

#[pymodule]
fn condreg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PySeedTree>()?;
    m.add_class::<PyDensity>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyInterval>()?;
    m.add_class::<PyCoverage>()?;
    m.add_class::<PyConditionalLaw>()?;
    m.add_class::<PyCmseQuadratic>()?;
    m.add_class::<PyCmseRow>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(intervals, m)?)?;
    m.add_function(wrap_pyfunction!(configuration, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(cmse_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(minimax, m)?)?;
    m.add_function(wrap_pyfunction!(bioptimal, m)?)?;
    m.add_function(wrap_pyfunction!(polysample, m)?)?;
    m.add_function(wrap_pyfunction!(bandwidths, m)?)?;
    m.add_function(wrap_pyfunction!(reference_bandwidth, m)?)?;
    Ok(())
}
