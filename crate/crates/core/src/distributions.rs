//! Symmetric (and mean-centered) error densities.
//!
//! Everything that plays the role of an error density implements
//! [`ErrorDensity`]: the parametric families here, the [`Scaled`] wrapper,
//! and the kernel plug-in estimates in [`crate::kernel`]. Conditional-law code
//! only ever sees the trait.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Beta, Distribution, StudentT};
use serde::Serialize;
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rngsim::Stream;
use crate::stats::LN_SQRT_2PI;

/// An evaluable, samplable error density.
pub trait ErrorDensity: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// ℓ(z) = log f(z); −∞ outside the support.
    fn log_density(&self, z: f64) -> f64;

    fn density(&self, z: f64) -> f64 {
        self.log_density(z).exp()
    }

    /// ℓ′(z).
    fn score(&self, z: f64) -> Result<f64>;

    /// ℓ″(z).
    fn score2(&self, z: f64) -> Result<f64>;

    /// Closed support `(lo, hi)`; infinite ends for unbounded members.
    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn is_symmetric(&self) -> bool;

    fn sample_one(&self, stream: &mut Stream) -> f64;

    fn sample(&self, stream: &mut Stream, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(stream)).collect()
    }

    /// Rough spread, used only to seed integration brackets.
    fn scale_hint(&self) -> f64 {
        1.0
    }
}

pub type DensityRef = Arc<dyn ErrorDensity>;

pub fn log_density(dist: &dyn ErrorDensity, z: f64) -> f64 {
    dist.log_density(z)
}

/// ℓ′ (`order = 1`) or ℓ″ (`order = 2`).
pub fn score(dist: &dyn ErrorDensity, z: f64, order: u8) -> Result<f64> {
    match order {
        1 => dist.score(z),
        2 => dist.score2(z),
        _ => Err(Error::InvalidArgument(format!("score order must be 1 or 2, got {order}"))),
    }
}

pub fn sample(dist: &dyn ErrorDensity, n: usize, stream: &mut Stream) -> Vec<f64> {
    dist.sample(stream, n)
}

/// Parametric family identifiers, parsed from strings such as `normal`,
/// `slash`, `t(5)`, `mix-normal` or `cbeta(0.5,2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensitySpec {
    Normal,
    Slash,
    StudentT { df: f64 },
    /// ½N(−3, 1) + ½N(3, 1).
    NormalMixture,
    /// Beta(a, b) mapped affinely onto [−5, 5], then shifted to mean zero.
    CenteredBeta { a: f64, b: f64 },
}

impl fmt::Display for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Normal => write!(f, "normal"),
            Self::Slash => write!(f, "slash"),
            Self::StudentT { df } => write!(f, "t({df})"),
            Self::NormalMixture => write!(f, "mix-normal"),
            Self::CenteredBeta { a, b } => write!(f, "cbeta({a},{b})"),
        }
    }
}

fn parse_args(s: &str, head: &str) -> Option<Vec<f64>> {
    let rest = s.strip_prefix(head)?.strip_prefix('(')?.strip_suffix(')')?;
    rest.split(',').map(|v| v.trim().parse::<f64>().ok()).collect()
}

impl FromStr for DensitySpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("unknown density spec {s:?}"));
        match s {
            "normal" => return Ok(Self::Normal),
            "slash" => return Ok(Self::Slash),
            "mix-normal" => return Ok(Self::NormalMixture),
            _ => {}
        }
        if let Some(v) = parse_args(s, "t") {
            return match v[..] {
                [df] if df > 0.0 => Ok(Self::StudentT { df }),
                _ => Err(bad()),
            };
        }
        if let Some(v) = parse_args(s, "cbeta") {
            return match v[..] {
                [a, b] if a > 0.0 && b > 0.0 => Ok(Self::CenteredBeta { a, b }),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

/// A parametric member with its normalizing constants precomputed.
#[derive(Debug, Clone)]
pub struct Parametric {
    spec: DensitySpec,
    log_norm: f64,
    /// Mean of the [−5, 5]-mapped beta (zero for the other families).
    shift: f64,
}

const LN_HALF_PHI0: f64 = -LN_SQRT_2PI - std::f64::consts::LN_2;

impl Parametric {
    pub fn new(spec: DensitySpec) -> Self {
        let (log_norm, shift) = match spec {
            DensitySpec::Normal | DensitySpec::NormalMixture | DensitySpec::Slash => {
                (-LN_SQRT_2PI, 0.0)
            }
            DensitySpec::StudentT { df } => (
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * std::f64::consts::PI).ln(),
                0.0,
            ),
            DensitySpec::CenteredBeta { a, b } => {
                (-ln_beta(a, b) - 10f64.ln(), -5.0 + 10.0 * a / (a + b))
            }
        };
        Self {
            spec,
            log_norm,
            shift,
        }
    }

    pub fn spec(&self) -> DensitySpec {
        self.spec
    }

    pub fn into_ref(self) -> DensityRef {
        Arc::new(self)
    }

    /// Position in (0, 1) of the beta variable and its complement, computed
    /// from the nearest support end for accuracy.
    fn beta_coords(&self, z: f64) -> (f64, f64) {
        let lo = -5.0 - self.shift;
        let hi = 5.0 - self.shift;
        ((z - lo) / 10.0, (hi - z) / 10.0)
    }

    fn check_support(&self, z: f64) -> Result<()> {
        let (lo, hi) = self.support();
        if !(z > lo && z < hi) || !z.is_finite() {
            return Err(Error::UnsupportedPoint(z));
        }
        Ok(())
    }
}

/// Slash helper: ℓ′ and ℓ″ with a series for small |z|.
fn slash_scores(z: f64) -> (f64, f64) {
    if z.abs() < 1e-2 {
        let z2 = z * z;
        let z6 = z2 * z2 * z2;
        return (
            -0.5 * z + z * z2 / 24.0 - z * z6 / 5760.0,
            -0.5 + z2 / 8.0 - 7.0 * z6 / 5760.0,
        );
    }
    let w = 0.5 * z * z;
    let e = (-w).exp();
    let one_minus = -(-w).exp_m1();
    let inv = e / one_minus; // 1 / (e^w − 1)
    let l1 = z * inv - 2.0 / z;
    let l2 = inv - z * z * e / (one_minus * one_minus) + 2.0 / (z * z);
    (l1, l2)
}

impl ErrorDensity for Parametric {
    fn name(&self) -> String {
        self.spec.to_string()
    }

    fn log_density(&self, z: f64) -> f64 {
        match self.spec {
            DensitySpec::Normal => self.log_norm - 0.5 * z * z,
            DensitySpec::StudentT { df } => {
                self.log_norm - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
            }
            DensitySpec::Slash => {
                if z.abs() < 1e-4 {
                    LN_HALF_PHI0 + (-0.25 * z * z).ln_1p()
                } else {
                    // φ(0)(1 − e^{−z²/2}) / z²
                    -LN_SQRT_2PI + (-(-0.5 * z * z).exp_m1()).ln() - 2.0 * z.abs().ln()
                }
            }
            DensitySpec::NormalMixture => {
                // ½(φ(z−3) + φ(z+3)) = φ(z)e^{−9/2}cosh(3z)
                let x = 3.0 * z.abs();
                self.log_norm - 0.5 * z * z - 4.5 + x + (-2.0 * x).exp().ln_1p()
                    - std::f64::consts::LN_2
            }
            DensitySpec::CenteredBeta { a, b } => {
                let (u, v) = self.beta_coords(z);
                if !(u > 0.0 && v > 0.0) {
                    return f64::NEG_INFINITY;
                }
                self.log_norm + (a - 1.0) * u.ln() + (b - 1.0) * v.ln()
            }
        }
    }

    fn score(&self, z: f64) -> Result<f64> {
        self.check_support(z)?;
        Ok(match self.spec {
            DensitySpec::Normal => -z,
            DensitySpec::StudentT { df } => -(df + 1.0) * z / (df + z * z),
            DensitySpec::Slash => slash_scores(z).0,
            DensitySpec::NormalMixture => -z + 3.0 * (3.0 * z).tanh(),
            DensitySpec::CenteredBeta { a, b } => {
                let (u, v) = self.beta_coords(z);
                ((a - 1.0) / u - (b - 1.0) / v) / 10.0
            }
        })
    }

    fn score2(&self, z: f64) -> Result<f64> {
        self.check_support(z)?;
        Ok(match self.spec {
            DensitySpec::Normal => -1.0,
            DensitySpec::StudentT { df } => {
                let d = df + z * z;
                -(df + 1.0) * (df - z * z) / (d * d)
            }
            DensitySpec::Slash => slash_scores(z).1,
            DensitySpec::NormalMixture => {
                let t = (3.0 * z).tanh();
                -1.0 + 9.0 * (1.0 - t * t)
            }
            DensitySpec::CenteredBeta { a, b } => {
                let (u, v) = self.beta_coords(z);
                (-(a - 1.0) / (u * u) - (b - 1.0) / (v * v)) / 100.0
            }
        })
    }

    fn support(&self) -> (f64, f64) {
        match self.spec {
            DensitySpec::CenteredBeta { .. } => (-5.0 - self.shift, 5.0 - self.shift),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn is_symmetric(&self) -> bool {
        match self.spec {
            DensitySpec::CenteredBeta { a, b } => a == b,
            _ => true,
        }
    }

    fn sample_one(&self, stream: &mut Stream) -> f64 {
        match self.spec {
            DensitySpec::Normal => stream.normal(),
            DensitySpec::Slash => stream.normal() / stream.uniform_pos(),
            DensitySpec::StudentT { df } => StudentT::new(df)
                .expect("validated degrees of freedom")
                .sample(stream),
            DensitySpec::NormalMixture => 3.0 * stream.sign() + stream.normal(),
            DensitySpec::CenteredBeta { a, b } => {
                let x: f64 = Beta::new(a, b).expect("validated shapes").sample(stream);
                -5.0 + 10.0 * x - self.shift
            }
        }
    }

    fn scale_hint(&self) -> f64 {
        match self.spec {
            DensitySpec::NormalMixture => 3.2,
            DensitySpec::CenteredBeta { .. } => 2.0,
            _ => 1.0,
        }
    }
}

/// f(z) = f₀(z/σ)/σ.
#[derive(Debug, Clone)]
pub struct Scaled {
    inner: DensityRef,
    scale: f64,
}

impl Scaled {
    pub fn new(inner: DensityRef, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { inner, scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl ErrorDensity for Scaled {
    fn name(&self) -> String {
        format!("{}*{}", self.inner.name(), self.scale)
    }
    fn log_density(&self, z: f64) -> f64 {
        self.inner.log_density(z / self.scale) - self.scale.ln()
    }
    fn score(&self, z: f64) -> Result<f64> {
        Ok(self.inner.score(z / self.scale)? / self.scale)
    }
    fn score2(&self, z: f64) -> Result<f64> {
        Ok(self.inner.score2(z / self.scale)? / (self.scale * self.scale))
    }
    fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.inner.support();
        (lo * self.scale, hi * self.scale)
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
    fn sample_one(&self, stream: &mut Stream) -> f64 {
        self.scale * self.inner.sample_one(stream)
    }
    fn scale_hint(&self) -> f64 {
        self.scale * self.inner.scale_hint()
    }
}

/// Parses a parametric spec with an optional `*scale` suffix, e.g.
/// `t(5)*0.7746`.
pub fn parse_density(s: &str) -> Result<DensityRef> {
    match s.split_once('*') {
        Some((base, scale)) => {
            let scale: f64 = scale
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad scale in {s:?}")))?;
            let base = Parametric::new(base.parse()?).into_ref();
            Ok(Arc::new(Scaled::new(base, scale)?))
        }
        None => Ok(Parametric::new(s.parse()?).into_ref()),
    }
}

/// Cubic Hermite table of `log f` and `ℓ′` on a uniform grid, with exact
/// evaluation outside the table or next to nodes where `f` vanishes.
///
/// Symmetric inner densities are tabulated on `[0, hi]` and evaluated at
/// `|z|`, which keeps the table exactly even.
#[derive(Debug, Clone)]
pub struct Tabulated {
    inner: DensityRef,
    lo: f64,
    step: f64,
    log_f: Vec<f64>,
    score: Vec<f64>,
    symmetric: bool,
}

impl Tabulated {
    pub fn new(inner: DensityRef, lo: f64, hi: f64, step: f64) -> Result<Self> {
        let symmetric = inner.is_symmetric();
        let lo = if symmetric { 0.0 } else { lo };
        if !(lo.is_finite() && hi.is_finite() && hi > lo && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad table range [{lo}, {hi}] with step {step}"
            )));
        }
        let nodes = ((hi - lo) / step).ceil() as usize + 1;
        if nodes > 10_000_000 {
            return Err(Error::InvalidArgument("table too large".into()));
        }
        let mut log_f = Vec::with_capacity(nodes);
        let mut score = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let z = lo + k as f64 * step;
            let l = inner.log_density(z);
            let d = inner.score(z).unwrap_or(f64::NAN);
            let ok = l.is_finite() && d.is_finite();
            log_f.push(if ok { l } else { f64::NAN });
            score.push(if ok { d } else { f64::NAN });
        }
        Ok(Self {
            inner,
            lo,
            step,
            log_f,
            score,
            symmetric,
        })
    }

    pub fn inner(&self) -> &DensityRef {
        &self.inner
    }

    pub fn nodes(&self) -> usize {
        self.log_f.len()
    }

    /// Cell index and local coordinate, when the cell is usable.
    fn locate(&self, z: f64) -> Option<(usize, f64)> {
        let pos = (z - self.lo) / self.step;
        if !(pos >= 0.0) {
            return None;
        }
        let k = pos.floor() as usize;
        if k + 1 >= self.log_f.len() || self.log_f[k].is_nan() || self.log_f[k + 1].is_nan() {
            return None;
        }
        Some((k, pos - k as f64))
    }

    fn fold(&self, z: f64) -> (f64, f64) {
        if self.symmetric && z < 0.0 {
            (-z, -1.0)
        } else {
            (z, 1.0)
        }
    }
}

impl ErrorDensity for Tabulated {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn log_density(&self, z: f64) -> f64 {
        let (y, _) = self.fold(z);
        let Some((k, t)) = self.locate(y) else {
            return self.inner.log_density(z);
        };
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.log_f[k]
            + h10 * self.step * self.score[k]
            + h01 * self.log_f[k + 1]
            + h11 * self.step * self.score[k + 1]
    }

    fn score(&self, z: f64) -> Result<f64> {
        let (y, sign) = self.fold(z);
        let Some((k, t)) = self.locate(y) else {
            return self.inner.score(z);
        };
        let t2 = t * t;
        let d00 = (6.0 * t2 - 6.0 * t) / self.step;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / self.step;
        let d11 = 3.0 * t2 - 2.0 * t;
        let v = d00 * self.log_f[k]
            + d10 * self.score[k]
            + d01 * self.log_f[k + 1]
            + d11 * self.score[k + 1];
        Ok(sign * v)
    }

    fn score2(&self, z: f64) -> Result<f64> {
        self.inner.score2(z)
    }

    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn sample_one(&self, stream: &mut Stream) -> f64 {
        self.inner.sample_one(stream)
    }

    fn scale_hint(&self) -> f64 {
        self.inner.scale_hint()
    }
}
