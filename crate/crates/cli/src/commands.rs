use std::str::FromStr;

use condreg::distributions::{parse_density, DensityRef};
use condreg::intervals::{
    ancillary_hash, conditional_coverage, configuration_from_raw, default_levels, method_intervals, ConfidenceInterval,
    CoverageConfig, IntervalMethod, MethodSpec, NpiScore, PiDensity, DEFAULT_EXACT_DRAWS, DEFAULT_RB_DRAWS,
    DRAWS_PER_ALPHA,
};
use condreg::kernel::{normal_reference_bandwidth, Bandwidths, KernelSpec};
use condreg::model::{design_diagnostics, fit, Dataset, DesignDiagnostics, Estimator, ModelKind};
use condreg::polysampling::{
    build_confrontation, cmse_simulation, seeded_configuration, CmseSimulation, ConfrontationKind, Equivariance,
    RuleSpec,
};
use condreg::{Error, SeedTree};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::args::*;
use crate::error::CliError;
use crate::io::{parse_values, read_dataset, read_text, split_top_level, to_csv, to_json};

/// Error distributions of the default polysampling sweep.
pub const DEFAULT_DISTS: [&str; 6] = ["t(1)", "mix-normal", "cbeta(0.5,0.5)", "cbeta(2,2)", "normal", "slash"];

/// Darwin sample size.
pub const DARWIN_N: usize = 15;

pub fn dispatch(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Interval(a) => cmd_interval(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::Polysample(a) => cmd_polysample(a),
        Command::Darwin(a) => cmd_darwin(a),
    }
}

/// Flag values that fail to parse are argument errors, not data errors.
fn flag<T: FromStr<Err = Error>>(name: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|e: Error| CliError::invalid(format!("--{name}: {e}")))
}

fn density_flag(value: &str) -> Result<DensityRef, CliError> {
    parse_density(value).map_err(|e| CliError::invalid(format!("--dist: {e}")))
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn levels_of(m: &MethodArgs, default: Vec<f64>) -> Result<Vec<f64>, CliError> {
    let levels = match (&m.levels, &m.alpha) {
        (Some(l), _) => l.clone(),
        (None, Some(a)) => a.iter().map(|a| 1.0 - a).collect(),
        (None, None) => default,
    };
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(CliError::invalid("levels must lie strictly between 0 and 1"));
    }
    Ok(levels)
}

/// Draw count meeting the B ≥ 20/α floor at the smallest α, unless the user
/// fixed B.
fn draw_count(explicit: Option<usize>, default: usize, levels: &[f64]) -> usize {
    explicit.unwrap_or_else(|| {
        let alpha = levels.iter().map(|l| 1.0 - l).fold(1.0, f64::min);
        default.max((DRAWS_PER_ALPHA / alpha).ceil() as usize)
    })
}

fn method_spec(method: IntervalMethod, m: &MethodArgs, levels: &[f64], n: usize) -> Result<MethodSpec, CliError> {
    let kernel: KernelSpec = flag("kernel", &m.kernel)?;
    Ok(match method {
        IntervalMethod::ExactUnconditional => MethodSpec::ExactUnconditional {
            b: draw_count(m.b, DEFAULT_EXACT_DRAWS, levels),
        },
        IntervalMethod::Rb => MethodSpec::Rb {
            b: draw_count(m.b, DEFAULT_RB_DRAWS, levels),
        },
        IntervalMethod::Pi => MethodSpec::Pi {
            density: if m.oracle {
                PiDensity::True
            } else {
                PiDensity::Kernel { h: m.h, kernel }
            },
            draws: (!m.quadrature).then_some(m.draws),
        },
        IntervalMethod::Npi => MethodSpec::Npi {
            score: if m.oracle {
                NpiScore::True
            } else {
                let bandwidths = match (m.h0, m.h1) {
                    (Some(h0), Some(h1)) => Some(Bandwidths::with_default_trim(n, h0, h1)?),
                    _ => None,
                };
                NpiScore::Plugin { bandwidths, kernel }
            },
        },
    })
}

#[derive(Serialize)]
struct FitReport {
    model: ModelKind,
    estimator: Estimator,
    n: usize,
    p: usize,
    beta_hat: Vec<f64>,
    sigma_hat: f64,
    residuals: Vec<f64>,
    studentized_residuals: Option<Vec<f64>>,
    eta: f64,
    condition: DesignDiagnostics,
}

fn cmd_fit(a: &FitArgs) -> Result<String, CliError> {
    let data = read_dataset(&a.data.data)?;
    let kind: ModelKind = flag("model", &a.data.model)?;
    let estimator: Estimator = flag("estimator", &a.data.estimator)?;
    let condition = design_diagnostics(data.x(), a.eta)?;
    let f = fit(&data, estimator, kind)?;
    to_json(&FitReport {
        model: kind,
        estimator,
        n: data.n(),
        p: data.p(),
        beta_hat: vec_of(&f.beta_hat),
        sigma_hat: f.sigma_hat,
        residuals: vec_of(&f.residuals_raw),
        studentized_residuals: f.residuals_studentized.as_ref().map(vec_of),
        eta: a.eta,
        condition,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalRecord {
    pub method: IntervalMethod,
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub seed: u64,
}

impl IntervalRecord {
    fn new(ci: ConfidenceInterval, seed: u64) -> Self {
        Self {
            method: ci.method,
            level: ci.level,
            lower: ci.lower,
            upper: ci.upper,
            seed,
        }
    }
}

#[derive(Serialize)]
struct IntervalReport {
    method: IntervalMethod,
    model: ModelKind,
    estimator: Estimator,
    dist: Option<String>,
    n: usize,
    p: usize,
    beta_hat: Vec<f64>,
    sigma_hat: f64,
    seed: u64,
    intervals: Vec<IntervalRecord>,
}

fn cmd_interval(a: &IntervalArgs) -> Result<String, CliError> {
    let data = read_dataset(&a.data.data)?;
    let kind: ModelKind = flag("model", &a.data.model)?;
    let estimator: Estimator = flag("estimator", &a.data.estimator)?;
    let method: IntervalMethod = flag("method", &a.method)?;
    let dist = a.dist.as_deref().map(density_flag).transpose()?;
    let levels = levels_of(&a.methods, vec![0.95])?;
    let spec = method_spec(method, &a.methods, &levels, data.n())?;
    let f = fit(&data, estimator, kind)?;
    let seed = SeedTree::new(a.seed).derive("interval", 0);
    let cis = method_intervals(&spec, &f, data.x(), kind, &levels, &seed, dist.clone())?;
    to_json(&IntervalReport {
        method,
        model: kind,
        estimator,
        dist: dist.map(|d| d.name()),
        n: data.n(),
        p: data.p(),
        beta_hat: vec_of(&f.beta_hat),
        sigma_hat: f.sigma_hat,
        seed: a.seed,
        intervals: cis.into_iter().map(|c| IntervalRecord::new(c, a.seed)).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageRecord {
    pub method: IntervalMethod,
    pub level: f64,
    pub coverage: f64,
    pub coverage_error: f64,
    pub se: f64,
    #[serde(rename = "R")]
    pub r: usize,
    pub failures: usize,
    pub n: usize,
    pub coordinate: usize,
    pub dist: String,
    pub ancillary_hash: String,
    pub seed: u64,
}

/// Configuration drawn from `dist` on a location design. `inject = k`
/// replaces the first draw by k sample standard deviations.
fn drawn_configuration(
    dist: &DensityRef,
    n: usize,
    inject: Option<f64>,
    seed: u64,
    estimator: Estimator,
    kind: ModelKind,
) -> Result<(DVector<f64>, DMatrix<f64>), CliError> {
    if n < 3 {
        return Err(CliError::invalid("--n must be at least 3"));
    }
    let mut raw = DVector::from_vec(dist.sample(&mut SeedTree::new(seed).derive("ancillary", 0).stream(), n));
    if let Some(k) = inject {
        let m = raw.mean();
        let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        raw[0] = k * sd;
    }
    let x = DMatrix::from_element(n, 1, 1.0);
    Ok((configuration_from_raw(&raw, &x, estimator, kind)?, x))
}

fn cmd_coverage(a: &CoverageArgs) -> Result<String, CliError> {
    let kind: ModelKind = flag("model", &a.model)?;
    let estimator: Estimator = flag("estimator", &a.estimator)?;
    let dist = density_flag(&a.dist)?;
    let levels = levels_of(&a.methods, default_levels())?;
    let (ancillary, x) = match (&a.data, a.n) {
        (Some(path), _) => {
            let data = read_dataset(path)?;
            let f = fit(&data, estimator, kind)?;
            (f.ancillary(kind)?, data.x().clone())
        }
        (None, Some(n)) => drawn_configuration(&dist, n, a.inject, a.ancillary_seed.unwrap_or(a.seed), estimator, kind)?,
        (None, None) => return Err(CliError::invalid("give --data or --n")),
    };
    let n = x.nrows();
    let methods = a
        .method
        .iter()
        .map(|m| method_spec(flag("method", m)?, &a.methods, &levels, n))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = CoverageConfig {
        beta_true: DVector::from_element(x.ncols(), a.beta),
        ancillary,
        x,
        kind,
        estimator,
        sigma_true: a.sigma,
        true_density: dist.clone(),
        levels,
        r: a.r,
        seed: SeedTree::new(a.seed),
        coordinate: a.coordinate,
    };
    let reports = conditional_coverage(&cfg, &methods)?;
    let hash = ancillary_hash(&cfg.ancillary);
    let records: Vec<CoverageRecord> = reports
        .iter()
        .flat_map(|rep| {
            let dist = dist.name();
            let hash = hash.clone();
            (0..rep.levels.len()).map(move |k| CoverageRecord {
                method: rep.method,
                level: rep.levels[k],
                coverage: rep.coverage[k],
                coverage_error: rep.coverage_error(k),
                se: rep.se[k],
                r: rep.r,
                failures: rep.failures,
                n: rep.n,
                coordinate: rep.coordinate,
                dist: dist.clone(),
                ancillary_hash: hash.clone(),
                seed: rep.seed,
            })
        })
        .collect();
    match a.format {
        Format::Csv => to_csv(&records),
        Format::Json => to_json(&records),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolysampleRecord {
    pub confrontation: String,
    pub params: String,
    pub estimator: String,
    pub error_dist: String,
    pub n: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub v: f64,
    pub cmse: f64,
    pub mc_se: f64,
    pub failures: usize,
    pub seed: u64,
}

fn confrontation_kinds(a: &PolysampleArgs) -> Result<Vec<ConfrontationKind>, CliError> {
    let mut out = Vec::new();
    for name in a.confrontation.iter().map(|s| s.trim()) {
        match name {
            "i" => out.push(ConfrontationKind::NormalVsSlash),
            "ii" => {
                if a.c.is_empty() {
                    return Err(CliError::invalid("confrontation ii needs at least one --C value"));
                }
                out.extend(a.c.iter().map(|&c| ConfrontationKind::LsVsPi { c }));
            }
            "iii" => out.push(ConfrontationKind::BandwidthPair { ha: a.ha, hb: a.hb }),
            other => match other.split_once(':') {
                Some((f, g)) => out.push(ConfrontationKind::Custom { f: f.trim().into(), g: g.trim().into() }),
                None => return Err(CliError::invalid(format!("--confrontation: unknown {other:?}"))),
            },
        }
    }
    Ok(out)
}

fn cmd_polysample(a: &PolysampleArgs) -> Result<String, CliError> {
    let eq = if a.location_only {
        Equivariance::Location
    } else {
        Equivariance::LocationScale
    };
    let kernel: KernelSpec = flag("kernel", &a.kernel)?;
    let kinds = confrontation_kinds(a)?;
    let [pf, pg] = a.prices[..] else {
        return Err(CliError::invalid("--prices takes two values P_F,P_G"));
    };
    let (minimax, bioptimal) = {
        let mut mm = false;
        let mut bo = false;
        for r in &a.rule {
            match r.trim() {
                "minimax" => mm = true,
                "bioptimal" => bo = true,
                other => return Err(CliError::invalid(format!("--rule: unknown {other:?}"))),
            }
        }
        (mm, bo)
    };
    let dists: Vec<String> = if a.dist.is_empty() {
        DEFAULT_DISTS.iter().map(|s| s.to_string()).collect()
    } else {
        a.dist.iter().flat_map(|d| split_top_level(d)).collect()
    };
    let densities = dists.iter().map(|d| density_flag(d)).collect::<Result<Vec<_>, _>>()?;
    let fixed = match &a.data {
        Some(path) => {
            let data = read_dataset(path)?;
            if !data.is_location() {
                return Err(CliError::data("polysampling needs a location design (x1 = 1)"));
            }
            let kind = match eq {
                Equivariance::Location => ModelKind::Regression,
                Equivariance::LocationScale => ModelKind::RegressionScale,
            };
            Some(fit(&data, Estimator::LeastSquares, kind)?.ancillary(kind)?)
        }
        None => None,
    };
    let master = SeedTree::new(a.seed);
    let mut records = Vec::new();
    for density in densities {
        let name = density.name();
        let ancillary = match &fixed {
            Some(c) => c.clone(),
            None => seeded_configuration(&density, a.n, &master.derive(&name, 0), eq)?,
        };
        let mut rules = vec![RuleSpec::LeastSquares];
        for kind in &kinds {
            let c = build_confrontation(kind.clone(), &ancillary, kernel)?;
            if minimax {
                rules.push(RuleSpec::Minimax(c.clone()));
            }
            if bioptimal {
                rules.push(RuleSpec::Bioptimal(c.with_prices(pf, pg)?));
            }
        }
        let sim = CmseSimulation {
            ancillary,
            true_density: density,
            beta_true: 0.0,
            sigma_true: 1.0,
            r: a.r,
            seed: master.derive("sim", 0),
            equivariance: eq,
        };
        records.extend(cmse_simulation(&sim, &rules)?.into_iter().map(|row| PolysampleRecord {
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
        }));
    }
    to_csv(&records)
}

#[derive(Debug, Clone, Serialize)]
pub struct DarwinInterval {
    pub method: IntervalMethod,
    /// Multiple of the normal-reference bandwidth (PI only).
    pub multiplier: Option<f64>,
    /// Bandwidth used (PI only).
    pub h: Option<f64>,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DarwinCase {
    pub case: String,
    pub estimator: Estimator,
    pub beta_hat: f64,
    pub sigma_hat: f64,
    pub h0: f64,
    pub h1: f64,
    pub rb_resamples: usize,
    pub intervals: Vec<DarwinInterval>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DarwinReport {
    pub n: usize,
    pub model: ModelKind,
    pub seed: u64,
    pub cases: Vec<DarwinCase>,
}

fn cmd_darwin(a: &DarwinArgs) -> Result<String, CliError> {
    let values = parse_values(&read_text(&a.data)?)?;
    if values.len() != DARWIN_N {
        return Err(CliError::data(format!("expected {DARWIN_N} values, got {}", values.len())));
    }
    let kernel: KernelSpec = flag("kernel", &a.kernel)?;
    if a.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(CliError::invalid("levels must lie strictly between 0 and 1"));
    }
    let kind = ModelKind::RegressionScale;
    let data = Dataset::location(&values)?;
    let master = SeedTree::new(a.seed).derive("darwin", 0);
    let mut cases = Vec::new();
    for (ci, (case, estimator)) in [("mean", Estimator::LeastSquares), ("median", Estimator::Median)]
        .into_iter()
        .enumerate()
    {
        let f = fit(&data, estimator, kind)?;
        let ancillary = f.ancillary(kind)?;
        let h0 = normal_reference_bandwidth(ancillary.as_slice());
        let h1 = h0;
        let case_seed = master.derive(case, ci as u64);
        let mut intervals = Vec::new();
        let mut push = |spec: MethodSpec, label: &str, k: u64, mult: Option<f64>| -> Result<(), CliError> {
            let cis = method_intervals(&spec, &f, data.x(), kind, &a.levels, &case_seed.derive(label, k), None)?;
            intervals.extend(cis.into_iter().map(|c| DarwinInterval {
                method: c.method,
                multiplier: mult,
                h: mult.map(|m| m * h0),
                level: c.level,
                lower: c.lower[0],
                upper: c.upper[0],
                seed: a.seed,
            }));
            Ok(())
        };
        push(MethodSpec::Rb { b: a.b }, "rb", 0, None)?;
        push(
            MethodSpec::Npi {
                score: NpiScore::Plugin {
                    bandwidths: Some(Bandwidths::with_default_trim(DARWIN_N, h0, h1)?),
                    kernel,
                },
            },
            "npi",
            0,
            None,
        )?;
        for (k, &m) in a.multipliers.iter().enumerate() {
            if !(m > 0.0 && m.is_finite()) {
                return Err(CliError::invalid(format!("bandwidth multiplier must be positive, got {m}")));
            }
            let spec = MethodSpec::Pi {
                density: PiDensity::Kernel { h: Some(m * h0), kernel },
                draws: (!a.quadrature).then_some(a.draws),
            };
            push(spec, "pi", k as u64, Some(m))?;
        }
        cases.push(DarwinCase {
            case: case.into(),
            estimator,
            beta_hat: f.beta_hat[0],
            sigma_hat: f.sigma_hat,
            h0,
            h1,
            rb_resamples: a.b,
            intervals,
        });
    }
    to_json(&DarwinReport {
        n: DARWIN_N,
        model: kind,
        seed: a.seed,
        cases,
    })
}
