//! Equal-tailed confidence intervals from pivot laws, and the conditional
//! coverage harness.
//!
//! Every method reduces to a law for the pivot (U or T) given the residual
//! configuration. An interval at level 1−α inverts the α/2 and 1−α/2 pivot
//! quantiles: `[β̂ − s·q_{1−α/2}, β̂ − s·q_{α/2}]` with `s = σ̂` for T and
//! `s = 1` for U.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bootstrap::{exact_unconditional, residual_bootstrap, PivotDraws, Provenance};
use crate::conddist::{ConditionalGenerator, ConditionalLaw, GenerationMethod, LawKind};
use crate::distributions::DensityRef;
use crate::error::{Error, Result};
use crate::kernel::{rate_bandwidths, Bandwidths, KernelDensity, KernelSpec};
use crate::model::{Estimator, FitResult, ModelKind, Refitter};
use crate::npi::{normal_approx, plugin_quantities, npi_quantities_from_density, NormalApprox, Pivot};
use crate::rngsim::SeedTree;
use crate::stats::{normal_quantile, quantile_sorted};

/// Draw-count floor for empirical quantiles: B ≥ this / α.
pub const DRAWS_PER_ALPHA: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    ExactUnconditional,
    Rb,
    Pi,
    Npi,
}

impl From<Provenance> for IntervalMethod {
    fn from(p: Provenance) -> Self {
        match p {
            Provenance::ResidualBootstrap => Self::Rb,
            Provenance::ExactUnconditional => Self::ExactUnconditional,
            Provenance::ConditionalPi => Self::Pi,
            Provenance::ConditionalNpi => Self::Npi,
        }
    }
}

impl fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExactUnconditional => "exact",
            Self::Rb => "rb",
            Self::Pi => "pi",
            Self::Npi => "npi",
        })
    }
}

impl FromStr for IntervalMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" | "exact_unconditional" => Ok(Self::ExactUnconditional),
            "rb" | "bootstrap" => Ok(Self::Rb),
            "pi" => Ok(Self::Pi),
            "npi" => Ok(Self::Npi),
            _ => Err(Error::Parse(format!("unknown interval method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Nominal level 1 − α.
    pub level: f64,
    pub method: IntervalMethod,
}

impl ConfidenceInterval {
    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn center(&self, j: usize) -> f64 {
        0.5 * (self.upper[j] + self.lower[j])
    }

    pub fn contains(&self, j: usize, value: f64) -> bool {
        self.lower[j] <= value && value <= self.upper[j]
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfDomain(format!("α must lie in (0, 1), got {alpha}")))
    }
}

fn pivot_scale(pivot: Pivot, fit: &FitResult) -> Result<f64> {
    match pivot {
        Pivot::U => Ok(1.0),
        Pivot::T => Ok(fit.sigma_hat),
        Pivot::LogScale => Err(Error::InvalidArgument(
            "intervals for β need the T or U pivot".into(),
        )),
    }
}

fn invert(
    beta_hat: &DVector<f64>,
    scale: f64,
    quantiles: &[(f64, f64)],
    level: f64,
    method: IntervalMethod,
) -> Result<ConfidenceInterval> {
    let lower: Vec<f64> = beta_hat.iter().zip(quantiles).map(|(b, (_, hi))| b - scale * hi).collect();
    let upper: Vec<f64> = beta_hat.iter().zip(quantiles).map(|(b, (lo, _))| b - scale * lo).collect();
    if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure("non-finite interval endpoint".into()));
    }
    Ok(ConfidenceInterval {
        lower,
        upper,
        level,
        method,
    })
}

/// Pivot law of one method, fixed by the residual configuration.
#[derive(Debug, Clone)]
pub struct PivotLaw {
    pub pivot: Pivot,
    pub method: IntervalMethod,
    source: PivotSource,
}

#[derive(Debug, Clone)]
enum PivotSource {
    /// Sorted columns of Monte Carlo draws.
    Draws(Vec<Vec<f64>>),
    /// Marginal means and standard deviations of the pivot.
    Normal { mean: Vec<f64>, sd: Vec<f64> },
    /// Quadrature inverse CDF of a p = 1 conditional law.
    Law(Arc<ConditionalLaw>),
}

impl PivotLaw {
    pub fn from_draws(draws: &PivotDraws) -> Self {
        let cols = (0..draws.p())
            .map(|j| {
                let mut c = draws.column(j);
                c.sort_by(f64::total_cmp);
                c
            })
            .collect();
        Self {
            pivot: draws.pivot,
            method: draws.provenance.into(),
            source: PivotSource::Draws(cols),
        }
    }

    pub fn from_normal(approx: &NormalApprox, method: IntervalMethod) -> Result<Self> {
        let (mean, cov) = approx.pivot_moments();
        let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
        if sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::SingularInformation);
        }
        Ok(Self {
            pivot: approx.pivot,
            method,
            source: PivotSource::Normal {
                mean: mean.iter().copied().collect(),
                sd,
            },
        })
    }

    /// Quantiles straight from the law's inverse CDF; p = 1 only.
    pub fn from_law(law: Arc<ConditionalLaw>, method: IntervalMethod) -> Result<Self> {
        if law.p() != 1 {
            return Err(Error::DimensionTooHigh { p: law.p(), max: 1 });
        }
        let pivot = match law.kind() {
            LawKind::ScaleLocation => Pivot::T,
            LawKind::Location => Pivot::U,
        };
        Ok(Self {
            pivot,
            method,
            source: PivotSource::Law(law),
        })
    }

    pub fn p(&self) -> usize {
        match &self.source {
            PivotSource::Draws(c) => c.len(),
            PivotSource::Normal { mean, .. } => mean.len(),
            PivotSource::Law(_) => 1,
        }
    }

    /// (q_{α/2}, q_{1−α/2}) per coordinate.
    pub fn tail_quantiles(&self, alpha: f64) -> Result<Vec<(f64, f64)>> {
        check_alpha(alpha)?;
        let (pl, ph) = (alpha / 2.0, 1.0 - alpha / 2.0);
        match &self.source {
            PivotSource::Draws(cols) => {
                let have = cols[0].len();
                let needed = (DRAWS_PER_ALPHA / alpha - 1e-9).ceil() as usize;
                if have < needed {
                    return Err(Error::InsufficientDraws { needed, have });
                }
                Ok(cols
                    .iter()
                    .map(|c| (quantile_sorted(c, pl), quantile_sorted(c, ph)))
                    .collect())
            }
            PivotSource::Normal { mean, sd } => {
                let z = normal_quantile(ph);
                Ok(mean.iter().zip(sd).map(|(m, s)| (m - z * s, m + z * s)).collect())
            }
            PivotSource::Law(law) => Ok(vec![(law.quantile(pl)?, law.quantile(ph)?)]),
        }
    }

    pub fn interval(&self, fit: &FitResult, alpha: f64) -> Result<ConfidenceInterval> {
        self.interval_at(&fit.beta_hat, pivot_scale(self.pivot, fit)?, alpha)
    }

    /// Interval around an explicit β̂ with pivot scale `scale`.
    pub fn interval_at(&self, beta_hat: &DVector<f64>, scale: f64, alpha: f64) -> Result<ConfidenceInterval> {
        if beta_hat.len() != self.p() {
            return Err(Error::InvalidArgument("β̂ and pivot law differ in dimension".into()));
        }
        let q = self.tail_quantiles(alpha)?;
        invert(beta_hat, scale, &q, 1.0 - alpha, self.method)
    }
}

/// Empirical-quantile interval from pivot draws.
pub fn interval_from_draws(draws: &PivotDraws, fit: &FitResult, alpha: f64) -> Result<ConfidenceInterval> {
    PivotLaw::from_draws(draws).interval(fit, alpha)
}

/// Interval from the normal law of the pivot, mean shift included.
pub fn interval_from_normal(approx: &NormalApprox, fit: &FitResult, alpha: f64) -> Result<ConfidenceInterval> {
    PivotLaw::from_normal(approx, IntervalMethod::Npi)?.interval(fit, alpha)
}

/// Interval from the quadrature quantiles of a p = 1 conditional law.
pub fn interval_from_law(law: Arc<ConditionalLaw>, fit: &FitResult, alpha: f64) -> Result<ConfidenceInterval> {
    PivotLaw::from_law(law, IntervalMethod::Pi)?.interval(fit, alpha)
}

/// Density plugged into the conditional law for PI.
#[derive(Debug, Clone)]
pub enum PiDensity {
    /// The true error density (oracle PI, i.e. the exact conditional law).
    True,
    /// Symmetrized kernel estimate from the residual configuration; `None`
    /// bandwidth means the rate default `h0`.
    Kernel { h: Option<f64>, kernel: KernelSpec },
}

/// Score source for NPI.
#[derive(Debug, Clone)]
pub enum NpiScore {
    True,
    /// Kernel scores; `None` bandwidths means the rate defaults.
    Plugin { bandwidths: Option<Bandwidths>, kernel: KernelSpec },
}

#[derive(Debug, Clone)]
pub enum MethodSpec {
    ExactUnconditional { b: usize },
    Rb { b: usize },
    /// `draws = None` uses quadrature quantiles when p = 1 and
    /// [`DEFAULT_PI_DRAWS`] Monte Carlo draws otherwise.
    Pi { density: PiDensity, draws: Option<usize> },
    Npi { score: NpiScore },
}

pub const DEFAULT_PI_DRAWS: usize = 5000;
pub const DEFAULT_RB_DRAWS: usize = 1000;
pub const DEFAULT_EXACT_DRAWS: usize = 5000;

impl MethodSpec {
    pub fn method(&self) -> IntervalMethod {
        match self {
            Self::ExactUnconditional { .. } => IntervalMethod::ExactUnconditional,
            Self::Rb { .. } => IntervalMethod::Rb,
            Self::Pi { .. } => IntervalMethod::Pi,
            Self::Npi { .. } => IntervalMethod::Npi,
        }
    }

    /// Method with its default settings: rate bandwidths, gaussian kernel.
    pub fn default_for(method: IntervalMethod) -> Self {
        match method {
            IntervalMethod::ExactUnconditional => Self::ExactUnconditional { b: DEFAULT_EXACT_DRAWS },
            IntervalMethod::Rb => Self::Rb { b: DEFAULT_RB_DRAWS },
            IntervalMethod::Pi => Self::Pi {
                density: PiDensity::Kernel { h: None, kernel: KernelSpec::gaussian() },
                draws: None,
            },
            IntervalMethod::Npi => Self::Npi {
                score: NpiScore::Plugin { bandwidths: None, kernel: KernelSpec::gaussian() },
            },
        }
    }
}

/// Everything a method may need besides randomness.
#[derive(Debug, Clone)]
pub struct MethodContext {
    pub ancillary: DVector<f64>,
    pub x: DMatrix<f64>,
    pub kind: ModelKind,
    pub estimator: Estimator,
    /// Required by the exact-unconditional method and the oracle variants.
    pub true_density: Option<DensityRef>,
}

impl MethodContext {
    pub fn from_fit(fit: &FitResult, x: &DMatrix<f64>, kind: ModelKind, true_density: Option<DensityRef>) -> Result<Self> {
        Ok(Self {
            ancillary: fit.ancillary(kind)?,
            x: x.clone(),
            kind,
            estimator: fit.estimator,
            true_density,
        })
    }

    fn true_density(&self) -> Result<DensityRef> {
        self.true_density
            .clone()
            .ok_or_else(|| Error::InvalidArgument("this method needs a named true density".into()))
    }

    fn rms(&self) -> f64 {
        (self.ancillary.norm_squared() / self.ancillary.len() as f64).sqrt()
    }

    fn rate(&self) -> Bandwidths {
        rate_bandwidths(self.ancillary.len(), 2, self.rms().max(1e-300))
    }

    /// A fit with β̂ = 0, σ̂ = 1 and this residual configuration. Pivot laws
    /// depend on the data only through the configuration.
    fn canonical_fit(&self) -> FitResult {
        FitResult {
            estimator: self.estimator,
            beta_hat: DVector::zeros(self.x.ncols()),
            sigma_hat: 1.0,
            residuals_raw: self.ancillary.clone(),
            residuals_studentized: Some(self.ancillary.clone()),
        }
    }

    /// The plug-in or true density used by PI.
    pub fn pi_density(&self, density: &PiDensity) -> Result<DensityRef> {
        match density {
            PiDensity::True => self.true_density(),
            PiDensity::Kernel { h, kernel } => {
                let h = h.unwrap_or_else(|| self.rate().h0);
                KernelDensity::symmetrized(self.ancillary.as_slice(), h, *kernel)?.into_fast_ref()
            }
        }
    }
}

/// Builds the pivot law of `method` for the configuration in `ctx`.
pub fn build_pivot_law(method: &MethodSpec, ctx: &MethodContext, seed: &SeedTree) -> Result<PivotLaw> {
    match method {
        MethodSpec::ExactUnconditional { b } => {
            let f = ctx.true_density()?;
            let d = exact_unconditional(f.as_ref(), &ctx.x, ctx.estimator, *b, seed, ctx.kind)?;
            Ok(PivotLaw::from_draws(&d))
        }
        MethodSpec::Rb { b } => {
            let d = residual_bootstrap(&ctx.canonical_fit(), &ctx.x, *b, seed, ctx.kind)?;
            Ok(PivotLaw::from_draws(&d))
        }
        MethodSpec::Pi { density, draws } => {
            let f = ctx.pi_density(density)?;
            let law = Arc::new(ConditionalLaw::new(ctx.kind.into(), ctx.ancillary.clone(), ctx.x.clone(), f)?);
            match (draws, law.p()) {
                (None, 1) => PivotLaw::from_law(law, IntervalMethod::Pi),
                (d, _) => {
                    let b = d.unwrap_or(DEFAULT_PI_DRAWS);
                    let s = law.sample(b, seed, law.default_method(), false)?;
                    let pivot = match law.kind() {
                        LawKind::ScaleLocation => Pivot::T,
                        LawKind::Location => Pivot::U,
                    };
                    let pd = PivotDraws::new(pivot, s.pivot, Provenance::ConditionalPi, seed.clone())?;
                    Ok(PivotLaw::from_draws(&pd))
                }
            }
        }
        MethodSpec::Npi { score } => {
            let summary = match score {
                NpiScore::True => {
                    let f = ctx.true_density()?;
                    npi_quantities_from_density(&ctx.ancillary, &ctx.x, f.as_ref(), ctx.kind)?
                }
                NpiScore::Plugin { bandwidths, kernel } => {
                    let bw = bandwidths.unwrap_or_else(|| ctx.rate());
                    plugin_quantities(&ctx.ancillary, &ctx.x, &bw, kernel, ctx.kind)?
                }
            };
            PivotLaw::from_normal(&normal_approx(&summary)?, IntervalMethod::Npi)
        }
    }
}

/// Intervals of one method at each level for an observed fit.
pub fn method_intervals(
    method: &MethodSpec,
    fit: &FitResult,
    x: &DMatrix<f64>,
    kind: ModelKind,
    levels: &[f64],
    seed: &SeedTree,
    true_density: Option<DensityRef>,
) -> Result<Vec<ConfidenceInterval>> {
    let ctx = MethodContext::from_fit(fit, x, kind, true_density)?;
    let law = build_pivot_law(method, &ctx, seed)?;
    levels.iter().map(|&l| law.interval(fit, 1.0 - l)).collect()
}

/// Ten levels 0.90, 0.91, …, 0.99.
pub fn default_levels() -> Vec<f64> {
    (90..=99).map(|k| k as f64 / 100.0).collect()
}

/// SHA-256 of the little-endian bytes of the configuration, hex encoded.
pub fn ancillary_hash(ancillary: &DVector<f64>) -> String {
    let mut h = Sha256::new();
    for v in ancillary.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub method: IntervalMethod,
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
    pub se: Vec<f64>,
    /// Replicates requested.
    pub r: usize,
    /// Replicates whose interval could not be formed.
    pub failures: usize,
    pub n: usize,
    pub coordinate: usize,
    pub ancillary_hash: String,
    pub seed: u64,
}

impl CoverageReport {
    pub fn coverage_error(&self, k: usize) -> f64 {
        self.coverage[k] - self.levels[k]
    }
}

/// Conditional-coverage experiment on one fixed residual configuration.
#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub ancillary: DVector<f64>,
    pub x: DMatrix<f64>,
    pub kind: ModelKind,
    pub estimator: Estimator,
    pub beta_true: DVector<f64>,
    pub sigma_true: f64,
    pub true_density: DensityRef,
    pub levels: Vec<f64>,
    pub r: usize,
    pub seed: SeedTree,
    pub coordinate: usize,
}

/// Runs every method on the same R conditional replicates.
///
/// Each replicate is a dataset drawn by the exact conditional generator, so
/// it reproduces the configuration and every method's pivot law is built
/// once. Per replicate only (β̂, σ̂) change.
pub fn conditional_coverage(cfg: &CoverageConfig, methods: &[MethodSpec]) -> Result<Vec<CoverageReport>> {
    if cfg.r == 0 {
        return Err(Error::InvalidArgument("need R ≥ 1 replicates".into()));
    }
    if cfg.coordinate >= cfg.x.ncols() {
        return Err(Error::IndexOutOfRange { index: cfg.coordinate, len: cfg.x.ncols() });
    }
    for &l in &cfg.levels {
        check_alpha(1.0 - l)?;
    }
    let law = ConditionalLaw::new(cfg.kind.into(), cfg.ancillary.clone(), cfg.x.clone(), cfg.true_density.clone())?;
    let generator = ConditionalGenerator::new(&law, cfg.beta_true.clone(), cfg.sigma_true, cfg.estimator)?;
    let datasets = generator.generate(cfg.r, &cfg.seed.derive("replicates", 0), GenerationMethod::Exact)?;
    let refit = Refitter::new(cfg.estimator, &cfg.x)?;
    let fits: Vec<Option<(f64, f64)>> = datasets
        .par_iter()
        .map(|d| {
            let (b, s) = refit.beta_sigma(d.y());
            let scale = match cfg.kind {
                ModelKind::Regression => 1.0,
                ModelKind::RegressionScale => s,
            };
            let b = b[cfg.coordinate];
            (b.is_finite() && scale.is_finite() && scale > 0.0).then_some((b, scale))
        })
        .collect();
    let failures = fits.iter().filter(|f| f.is_none()).count();
    let ok = cfg.r - failures;
    let ctx = MethodContext {
        ancillary: cfg.ancillary.clone(),
        x: cfg.x.clone(),
        kind: cfg.kind,
        estimator: cfg.estimator,
        true_density: Some(cfg.true_density.clone()),
    };
    let target = cfg.beta_true[cfg.coordinate];
    let hash = ancillary_hash(&cfg.ancillary);
    methods
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let law = build_pivot_law(m, &ctx, &cfg.seed.derive("method", mi as u64))?;
            let mut coverage = Vec::with_capacity(cfg.levels.len());
            let mut se = Vec::with_capacity(cfg.levels.len());
            for &level in &cfg.levels {
                let (lo, hi) = law.tail_quantiles(1.0 - level)?[cfg.coordinate];
                let hits = fits
                    .iter()
                    .flatten()
                    .filter(|(b, s)| b - s * hi <= target && target <= b - s * lo)
                    .count();
                let c = if ok > 0 { hits as f64 / ok as f64 } else { f64::NAN };
                coverage.push(c);
                se.push((c * (1.0 - c) / ok.max(1) as f64).sqrt());
            }
            Ok(CoverageReport {
                method: m.method(),
                levels: cfg.levels.clone(),
                coverage,
                se,
                r: cfg.r,
                failures,
                n: cfg.x.nrows(),
                coordinate: cfg.coordinate,
                ancillary_hash: hash.clone(),
                seed: cfg.seed.master(),
            })
        })
        .collect()
}

/// Residual configuration of `raw` under `estimator` on design `x`,
/// studentized for the regression-scale model.
pub fn configuration_from_raw(raw: &DVector<f64>, x: &DMatrix<f64>, estimator: Estimator, kind: ModelKind) -> Result<DVector<f64>> {
    let refit = Refitter::new(estimator, x)?;
    let (b, s) = refit.beta_sigma(raw);
    let r = raw - x * b;
    match kind {
        ModelKind::Regression => Ok(r),
        ModelKind::RegressionScale => {
            if s <= 0.0 {
                return Err(Error::DegenerateFit);
            }
            Ok(r / s)
        }
    }
}
