//! Configural polysampling for the location(-scale) model: Pitman rules,
//! conditional-MSE quadratics, bioptimal and minimax compromises over a
//! confrontation of two error densities, and the conditional cMSE
//! simulation.
//!
//! An equivariant rule is a number `v`; applied to data it gives
//! `V(Y) = β̂ + σ̂·v` (location-scale) or `V(Y) = β̂ + v` (location only).
//! Given the configuration, its conditional MSE under a density F is a
//! parabola `K + c·(v − v*)²` in `v`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::conddist::{ConditionalGenerator, ConditionalLaw, GenerationMethod, LawKind};
use crate::distributions::{DensityRef, DensitySpec, Parametric, Scaled};
use crate::error::{Error, Result};
use crate::kernel::{KernelDensity, KernelSpec};
use crate::model::{Estimator, FitResult, Refitter};
use crate::rngsim::SeedTree;

/// Which equivariance the rules respect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Equivariance {
    /// `V(Y) = β̂ + σ̂·V(A)`, conditioning on studentized residuals.
    #[default]
    LocationScale,
    /// `V(Y) = β̂ + V(Ã)`, conditioning on raw residuals.
    Location,
}

/// `cMSE(v) = K + c·(v − v*)²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmseQuadratic {
    pub k: f64,
    pub c: f64,
    pub v_star: f64,
    pub density: String,
}

impl CmseQuadratic {
    pub fn new(k: f64, c: f64, v_star: f64, density: impl Into<String>) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && k.is_finite() && v_star.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid cMSE quadratic K={k}, c={c}, v*={v_star}"
            )));
        }
        Ok(Self {
            k: k.max(0.0),
            c,
            v_star,
            density: density.into(),
        })
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.k + self.c * (v - self.v_star).powi(2)
    }
}

fn check_location(x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != 1 {
        return Err(Error::DimensionTooHigh { p: x.ncols(), max: 1 });
    }
    Ok(())
}

/// Conditional-MSE parabola of density `f` given the configuration, for
/// true scale `sigma`.
pub fn cmse_quadratic(f: DensityRef, ancillary: &DVector<f64>, x: &DMatrix<f64>, sigma: f64) -> Result<CmseQuadratic> {
    cmse_quadratic_with(f, ancillary, x, sigma, Equivariance::LocationScale)
}

pub fn cmse_quadratic_with(
    f: DensityRef,
    ancillary: &DVector<f64>,
    x: &DMatrix<f64>,
    sigma: f64,
    eq: Equivariance,
) -> Result<CmseQuadratic> {
    check_location(x)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("σ must be positive, got {sigma}")));
    }
    let name = f.name();
    match eq {
        Equivariance::LocationScale => {
            let law = ConditionalLaw::new(LawKind::ScaleLocation, ancillary.clone(), x.clone(), f)?;
            let m = law.moments()?;
            let s2 = sigma * sigma;
            let v_star = -m.e_s2t / m.e_s2;
            let k = s2 * (m.e_s2t2 - m.e_s2t * m.e_s2t / m.e_s2);
            CmseQuadratic::new(k, s2 * m.e_s2, v_star, name)
        }
        Equivariance::Location => {
            let scaled: DensityRef = Arc::new(Scaled::new(f, sigma)?);
            let law = ConditionalLaw::new(LawKind::Location, ancillary.clone(), x.clone(), scaled)?;
            let (m1, m2) = law.location_moments()?;
            CmseQuadratic::new(m2 - m1 * m1, 1.0, -m1, name)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivariantEstimate {
    pub v: f64,
    pub estimate: f64,
    pub method: String,
}

impl EquivariantEstimate {
    /// `β̂ + σ̂·v` (or `β̂ + v` for location-only rules).
    pub fn realize(fit: &FitResult, v: f64, eq: Equivariance, method: impl Into<String>) -> Self {
        let scale = match eq {
            Equivariance::LocationScale => fit.sigma_hat,
            Equivariance::Location => 1.0,
        };
        Self {
            v,
            estimate: fit.beta_hat[0] + scale * v,
            method: method.into(),
        }
    }
}

/// Pitman rule of `f` applied to `fit`.
pub fn pitman_estimate(f: DensityRef, ancillary: &DVector<f64>, x: &DMatrix<f64>, fit: &FitResult) -> Result<EquivariantEstimate> {
    let q = cmse_quadratic(f, ancillary, x, 1.0)?;
    let method = format!("pitman({})", q.density);
    Ok(EquivariantEstimate::realize(fit, q.v_star, Equivariance::LocationScale, method))
}

/// Optimal rule for a criterion, with the criterion's value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuleChoice {
    pub v: f64,
    pub value: f64,
    /// The minimax optimum sits where the two parabolas cross.
    pub equalized: bool,
}

/// Minimizer of `P_F·cMSE_F + P_G·cMSE_G`.
pub fn bioptimal(qf: &CmseQuadratic, qg: &CmseQuadratic, pf: f64, pg: f64) -> Result<RuleChoice> {
    if !(pf > 0.0 && pg > 0.0 && pf.is_finite() && pg.is_finite()) {
        return Err(Error::InvalidArgument(format!("shadow prices must be positive, got {pf}, {pg}")));
    }
    let (wf, wg) = (pf * qf.c, pg * qg.c);
    let v = (wf * qf.v_star + wg * qg.v_star) / (wf + wg);
    Ok(RuleChoice {
        v,
        value: pf * qf.eval(v) + pg * qg.eval(v),
        equalized: false,
    })
}

/// Real roots of `a·v² + b·v + c = 0` (a may vanish).
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Minimizer of `max(cMSE_F, cMSE_G)`. The maximum of two convex parabolas
/// is minimized at a vertex where that parabola is on top, or where they
/// cross.
pub fn minimax(qf: &CmseQuadratic, qg: &CmseQuadratic) -> RuleChoice {
    let obj = |v: f64| qf.eval(v).max(qg.eval(v));
    let mut best = RuleChoice {
        v: qf.v_star,
        value: f64::INFINITY,
        equalized: false,
    };
    for (v, top, other) in [(qf.v_star, qf, qg), (qg.v_star, qg, qf)] {
        if top.eval(v) >= other.eval(v) && top.eval(v) < best.value {
            best = RuleChoice {
                v,
                value: top.eval(v),
                equalized: false,
            };
        }
    }
    // (c_F − c_G)v² − 2(c_F v_F − c_G v_G)v + c_F v_F² − c_G v_G² + K_F − K_G = 0
    let a = qf.c - qg.c;
    let b = -2.0 * (qf.c * qf.v_star - qg.c * qg.v_star);
    let c = qf.c * qf.v_star.powi(2) - qg.c * qg.v_star.powi(2) + qf.k - qg.k;
    for r in quadratic_roots(a, b, c) {
        let val = obj(r);
        if val < best.value {
            best = RuleChoice {
                v: r,
                value: val,
                equalized: true,
            };
        }
    }
    best
}

/// Member of a confrontation.
#[derive(Debug, Clone)]
pub struct Member {
    pub tag: String,
    pub density: DensityRef,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ConfrontationKind {
    NormalVsSlash,
    /// Normal against the plug-in density with `h = C·n^{−1/9}`.
    LsVsPi { c: f64 },
    BandwidthPair { ha: f64, hb: f64 },
    Custom { f: String, g: String },
}

impl ConfrontationKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::NormalVsSlash => "i",
            Self::LsVsPi { .. } => "ii",
            Self::BandwidthPair { .. } => "iii",
            Self::Custom { .. } => "custom",
        }
    }

    pub fn params(&self) -> String {
        match self {
            Self::NormalVsSlash => String::new(),
            Self::LsVsPi { c } => format!("C={c}"),
            Self::BandwidthPair { ha, hb } => format!("ha={ha};hb={hb}"),
            Self::Custom { f, g } => format!("F={f};G={g}"),
        }
    }
}

impl fmt::Display for ConfrontationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.params();
        if p.is_empty() {
            write!(f, "({})", self.label())
        } else {
            write!(f, "({}) {p}", self.label())
        }
    }
}

#[derive(Debug, Clone)]
pub struct Confrontation {
    pub kind: ConfrontationKind,
    pub f: Member,
    pub g: Member,
    pub prices: Option<(f64, f64)>,
}

impl Confrontation {
    pub fn with_prices(mut self, pf: f64, pg: f64) -> Result<Self> {
        if !(pf > 0.0 && pg > 0.0 && pf.is_finite() && pg.is_finite()) {
            return Err(Error::InvalidConfrontation(format!(
                "shadow prices must be positive, got {pf}, {pg}"
            )));
        }
        self.prices = Some((pf, pg));
        Ok(self)
    }

    pub fn tags(&self) -> (&str, &str) {
        (&self.f.tag, &self.g.tag)
    }
}

/// `C·n^{−1/9}`.
pub fn ls_vs_pi_bandwidth(c: f64, n: usize) -> f64 {
    c * (n as f64).powf(-1.0 / 9.0)
}

fn plugin_member(ancillary: &DVector<f64>, h: f64, kernel: KernelSpec) -> Result<Member> {
    let kd = KernelDensity::symmetrized(ancillary.as_slice(), h, kernel)?;
    Ok(Member {
        tag: format!("pi(h={h})"),
        density: kd.into_fast_ref()?,
    })
}

fn parametric_member(spec: DensitySpec) -> Member {
    Member {
        tag: spec.to_string(),
        density: Parametric::new(spec).into_ref(),
    }
}

/// Builds the members of a confrontation from the configuration.
pub fn build_confrontation(kind: ConfrontationKind, ancillary: &DVector<f64>, kernel: KernelSpec) -> Result<Confrontation> {
    let n = ancillary.len();
    let (f, g) = match &kind {
        ConfrontationKind::NormalVsSlash => (
            parametric_member(DensitySpec::Normal),
            parametric_member(DensitySpec::Slash),
        ),
        ConfrontationKind::LsVsPi { c } => {
            if !(*c > 0.0 && c.is_finite()) {
                return Err(Error::BadBandwidth(*c));
            }
            (
                parametric_member(DensitySpec::Normal),
                plugin_member(ancillary, ls_vs_pi_bandwidth(*c, n), kernel)?,
            )
        }
        ConfrontationKind::BandwidthPair { ha, hb } => {
            if ha == hb {
                return Err(Error::InvalidConfrontation(format!(
                    "both members use bandwidth {ha}"
                )));
            }
            (plugin_member(ancillary, *ha, kernel)?, plugin_member(ancillary, *hb, kernel)?)
        }
        ConfrontationKind::Custom { f, g } => {
            let (sf, sg): (DensitySpec, DensitySpec) = (f.parse()?, g.parse()?);
            if sf == sg {
                return Err(Error::InvalidConfrontation(format!("both members are {sf}")));
            }
            (parametric_member(sf), parametric_member(sg))
        }
    };
    Ok(Confrontation {
        kind,
        f,
        g,
        prices: None,
    })
}

/// Estimators compared in a cMSE simulation.
#[derive(Debug, Clone)]
pub enum RuleSpec {
    LeastSquares,
    Minimax(Confrontation),
    /// Uses the confrontation's prices (equal prices when unset).
    Bioptimal(Confrontation),
}

impl RuleSpec {
    fn labels(&self) -> (String, String, String) {
        match self {
            Self::LeastSquares => ("ls".into(), String::new(), "ls".into()),
            Self::Minimax(c) => (c.kind.label().into(), c.kind.params(), "minimax".into()),
            Self::Bioptimal(c) => {
                let (pf, pg) = c.prices.unwrap_or((1.0, 1.0));
                let mut p = c.kind.params();
                if !p.is_empty() {
                    p.push(';');
                }
                p.push_str(&format!("PF={pf};PG={pg}"));
                (c.kind.label().into(), p, "bioptimal".into())
            }
        }
    }

    /// The rule value `v` for the configuration.
    pub fn rule_value(&self, ancillary: &DVector<f64>, x: &DMatrix<f64>, eq: Equivariance) -> Result<f64> {
        let quads = |c: &Confrontation| -> Result<(CmseQuadratic, CmseQuadratic)> {
            Ok((
                cmse_quadratic_with(c.f.density.clone(), ancillary, x, 1.0, eq)?,
                cmse_quadratic_with(c.g.density.clone(), ancillary, x, 1.0, eq)?,
            ))
        };
        match self {
            Self::LeastSquares => Ok(0.0),
            Self::Minimax(c) => {
                let (qf, qg) = quads(c)?;
                Ok(minimax(&qf, &qg).v)
            }
            Self::Bioptimal(c) => {
                let (qf, qg) = quads(c)?;
                let (pf, pg) = c.prices.unwrap_or((1.0, 1.0));
                Ok(bioptimal(&qf, &qg, pf, pg)?.v)
            }
        }
    }
}

/// Setup of a conditional cMSE simulation on one configuration.
#[derive(Debug, Clone)]
pub struct CmseSimulation {
    pub ancillary: DVector<f64>,
    pub true_density: DensityRef,
    pub beta_true: f64,
    pub sigma_true: f64,
    pub r: usize,
    pub seed: SeedTree,
    pub equivariance: Equivariance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmseRow {
    pub confrontation: String,
    pub params: String,
    pub estimator: String,
    pub error_dist: String,
    pub n: usize,
    pub r: usize,
    pub v: f64,
    pub cmse: f64,
    pub mc_se: f64,
    pub failures: usize,
    pub seed: u64,
}

/// Draws R conditional datasets from the true density given the
/// configuration and averages each rule's squared error. All rules see
/// the same datasets.
pub fn cmse_simulation(sim: &CmseSimulation, rules: &[RuleSpec]) -> Result<Vec<CmseRow>> {
    if sim.r == 0 {
        return Err(Error::InvalidArgument("need R ≥ 1 replicates".into()));
    }
    let n = sim.ancillary.len();
    let x = DMatrix::from_element(n, 1, 1.0);
    let law_kind = match sim.equivariance {
        Equivariance::LocationScale => LawKind::ScaleLocation,
        Equivariance::Location => LawKind::Location,
    };
    let law = ConditionalLaw::new(law_kind, sim.ancillary.clone(), x.clone(), sim.true_density.clone())?;
    let gen = ConditionalGenerator::new(&law, DVector::from_element(1, sim.beta_true), sim.sigma_true, Estimator::LeastSquares)?;
    let data = gen.generate(sim.r, &sim.seed.derive("replicates", 0), GenerationMethod::Exact)?;
    let refit = Refitter::new(Estimator::LeastSquares, &x)?;
    let fits: Vec<(f64, f64)> = data
        .par_iter()
        .map(|d| {
            let (b, s) = refit.beta_sigma(d.y());
            (b[0], s)
        })
        .collect();
    let vs: Vec<f64> = rules
        .iter()
        .map(|r| r.rule_value(&sim.ancillary, &x, sim.equivariance))
        .collect::<Result<_>>()?;
    let dist = sim.true_density.name();
    Ok(rules
        .iter()
        .zip(&vs)
        .map(|(rule, &v)| {
            let errs: Vec<f64> = fits
                .iter()
                .map(|&(b, s)| {
                    let est = match sim.equivariance {
                        Equivariance::LocationScale => b + s * v,
                        Equivariance::Location => b + v,
                    };
                    (est - sim.beta_true).powi(2)
                })
                .filter(|e| e.is_finite())
                .collect();
            let m = errs.len();
            let mean = errs.iter().sum::<f64>() / m as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0).max(1.0);
            let (confrontation, params, estimator) = rule.labels();
            CmseRow {
                confrontation,
                params,
                estimator,
                error_dist: dist.clone(),
                n,
                r: sim.r,
                v,
                cmse: mean,
                mc_se: (var / m as f64).sqrt(),
                failures: sim.r - m,
                seed: sim.seed.master(),
            }
        })
        .collect())
}

/// Studentized (or raw) residual configuration of a seeded sample of size
/// `n` from `density`.
pub fn seeded_configuration(density: &DensityRef, n: usize, seed: &SeedTree, eq: Equivariance) -> Result<DVector<f64>> {
    let y = DVector::from_vec(density.sample(&mut seed.stream(), n));
    let m = y.mean();
    let r = y.map(|v| v - m);
    match eq {
        Equivariance::Location => Ok(r),
        Equivariance::LocationScale => {
            let s = (r.norm_squared() / n as f64).sqrt();
            if s <= 0.0 {
                return Err(Error::DegenerateFit);
            }
            Ok(r / s)
        }
    }
}
