//! Conditional laws of the estimation pivots given the residual configuration.
//!
//! For the regression-scale model the joint law of `S = σ̂/σ` and
//! `T = (β̂ − β)/σ̂` given studentized residuals `a` has density proportional to
//! `κ(s, t | a) = s^{n−1} ∏ f₀(s(a_i + x_iᵀt))`. For the regression model the
//! law of `U = β̂ − β` given raw residuals `ã` is proportional to
//! `∏ f(ã_i + x_iᵀu)`. Integrals over `s` are done in `w = log s`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::DensityRef;
use crate::error::{Error, Result};
use crate::model::{estimate_beta, Dataset, Estimator, FitResult, ModelKind};
use crate::quad::{
    integrate_panels, log_bracket, log_integrate, GridCdf, LogIntegral, LogQuadOptions,
    QuadOptions,
};
use crate::rngsim::{SeedTree, Stream};

/// Which pivot the law describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    /// (S, T) given studentized residuals A.
    ScaleLocation,
    /// U given raw residuals Ã.
    Location,
}

impl From<ModelKind> for LawKind {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::Regression => LawKind::Location,
            ModelKind::RegressionScale => LawKind::ScaleLocation,
        }
    }
}

/// Largest pivot dimension handled by nested quadrature.
pub const MAX_QUADRATURE_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Normalizer {
    pub log_norm: f64,
    pub rel_error: f64,
}

/// E[S²|A], E[S²T|A] and E[S²T²|A] for a one-dimensional pivot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleMoments {
    pub e_s2: f64,
    pub e_s2t: f64,
    pub e_s2t2: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetropolisConfig {
    /// Sweeps discarded while the proposal scales adapt.
    pub burn_in: usize,
    /// Sweeps between retained draws.
    pub thin: usize,
    pub target_accept: f64,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        Self {
            burn_in: 2000,
            thin: 3,
            target_accept: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMethod {
    /// Inverse trapezoid CDF on an adaptive grid; p = 1 only.
    GridInverseCdf,
    Metropolis(MetropolisConfig),
}

/// Draws of the pivot (rows) and, for the (S, T) law when requested, of S.
#[derive(Debug, Clone, PartialEq)]
pub struct LawDraws {
    pub pivot: DMatrix<f64>,
    pub scale: Option<Vec<f64>>,
    /// Post-burn-in acceptance rate per coordinate (Metropolis only).
    pub acceptance: Option<Vec<f64>>,
}

impl LawDraws {
    pub fn len(&self) -> usize {
        self.pivot.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.pivot.nrows() == 0
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.pivot.column(j).iter().copied().collect()
    }
}

pub(crate) const DRAW_BATCH: usize = 256;

/// A conditional law with its normalizing constant and sampling grid cached
/// after first use.
#[derive(Debug)]
pub struct ConditionalLaw {
    kind: LawKind,
    ancillary: DVector<f64>,
    x: DMatrix<f64>,
    density: DensityRef,
    quad: LogQuadOptions,
    /// Probe step per pivot coordinate.
    steps: Vec<f64>,
    norm: OnceLock<Result<Normalizer>>,
    grid: OnceLock<Result<Arc<GridCdf>>>,
}

impl ConditionalLaw {
    pub fn new(
        kind: LawKind,
        ancillary: DVector<f64>,
        x: DMatrix<f64>,
        density: DensityRef,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if ancillary.len() != n {
            return Err(Error::InvalidData(format!(
                "ancillary has length {} but the design has {n} rows",
                ancillary.len()
            )));
        }
        if n < p + 1 || p == 0 {
            return Err(Error::InvalidData(format!("need n ≥ p + 1, got n={n}, p={p}")));
        }
        if ancillary.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite ancillary or design".into()));
        }
        let base = match kind {
            LawKind::ScaleLocation => 1.0,
            LawKind::Location => (ancillary.norm_squared() / n as f64).sqrt().max(1e-300),
        };
        let steps = (0..p)
            .map(|j| {
                let ss = x.column(j).norm_squared();
                if ss > 0.0 {
                    0.5 * base / ss.sqrt()
                } else {
                    base
                }
            })
            .collect();
        Ok(Self {
            kind,
            ancillary,
            x,
            density,
            quad: LogQuadOptions::default(),
            steps,
            norm: OnceLock::new(),
            grid: OnceLock::new(),
        })
    }

    /// Law of the pivot for `kind` given the residual configuration of `fit`.
    pub fn for_fit(
        fit: &FitResult,
        data: &Dataset,
        kind: ModelKind,
        density: DensityRef,
    ) -> Result<Self> {
        Self::new(kind.into(), fit.ancillary(kind)?, data.x().clone(), density)
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn ancillary(&self) -> &DVector<f64> {
        &self.ancillary
    }
    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn density(&self) -> &DensityRef {
        &self.density
    }

    /// r_i = a_i + x_iᵀt.
    fn shifted(&self, t: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.ancillary.iter().copied().collect();
        for (j, &tj) in t.iter().enumerate() {
            if tj != 0.0 {
                for (ri, xij) in r.iter_mut().zip(self.x.column(j).iter()) {
                    *ri += xij * tj;
                }
            }
        }
        r
    }

    fn sum_log_density(&self, r: &[f64], s: f64) -> f64 {
        let mut acc = 0.0;
        for &ri in r {
            let v = self.density.log_density(s * ri);
            if v == f64::NEG_INFINITY {
                return v;
            }
            acc += v;
        }
        acc
    }

    fn check_dim(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.p() {
            return Err(Error::InvalidArgument(format!(
                "pivot point has dimension {} but p = {}",
                t.len(),
                self.p()
            )));
        }
        Ok(())
    }

    fn require(&self, kind: LawKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidArgument(format!(
                "operation needs a {kind:?} law, this one is {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// (n−1)·log s + Σ log f₀(s(a_i + x_iᵀt)), without the normalizing
    /// constant.
    pub fn log_kappa(&self, s: f64, t: &[f64]) -> Result<f64> {
        self.require(LawKind::ScaleLocation)?;
        self.check_dim(t)?;
        if !(s > 0.0) {
            return Err(Error::OutOfDomain(format!("scale must be positive, got {s}")));
        }
        let r = self.shifted(t);
        Ok((self.n() as f64 - 1.0) * s.ln() + self.sum_log_density(&r, s))
    }

    /// Σ log f(ã_i + x_iᵀu), without the normalizing constant.
    pub fn log_g_u(&self, u: &[f64]) -> Result<f64> {
        self.require(LawKind::Location)?;
        self.check_dim(u)?;
        Ok(self.sum_log_density(&self.shifted(u), 1.0))
    }

    /// Upper end of the feasible `w = log s` range when f₀ has compact
    /// support.
    fn w_upper(&self, r: &[f64]) -> f64 {
        let (lo, hi) = self.density.support();
        let mut w = f64::INFINITY;
        for &ri in r {
            let bound = if ri > 0.0 && hi.is_finite() {
                hi / ri
            } else if ri < 0.0 && lo.is_finite() {
                lo / ri
            } else {
                continue;
            };
            w = w.min(bound.ln());
        }
        w
    }

    /// log-integrand over the scale coordinate for residuals `r` and power
    /// `k`, with its domain, starting point and step. On a bounded support the
    /// coordinate is v with w = w_max − v², which flattens the inverse
    /// square-root blow-up of U-shaped densities at the support edge.
    fn scale_coordinate<'r>(&'r self, r: &'r [f64], k: f64) -> ScaleCoordinate<'r> {
        let rms = (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
        let hi = self.w_upper(r);
        let mut center = (self.density.scale_hint() / rms.max(1e-300)).ln();
        if center >= hi {
            center = hi - 0.5;
        }
        let step = 1.0 / (2.0 * k).sqrt();
        ScaleCoordinate {
            law: self,
            r,
            k,
            w_max: hi,
            center,
            step,
        }
    }

    /// log ∫ exp((n+m)·w + Σ ℓ(e^w r_i)) dw = log ∫ s^{n+m−1} ∏ f(s r_i) ds.
    fn log_s_integral(&self, r: &[f64], m: u32) -> Result<LogIntegral> {
        let sc = self.scale_coordinate(r, self.n() as f64 + m as f64);
        let (lo, hi, center, step) = sc.domain();
        let mut f = |x: f64| sc.log_integrand(x);
        log_integrate(&mut f, lo, hi, center, step, &self.quad)
    }

    /// log g_T(t) = log ∫₀^∞ κ(s, t | a) ds, unnormalized.
    pub fn log_marginal_g_t(&self, t: &[f64]) -> Result<f64> {
        self.require(LawKind::ScaleLocation)?;
        self.check_dim(t)?;
        Ok(self.log_s_integral(&self.shifted(t), 0)?.log_value)
    }

    pub fn marginal_g_t(&self, t: &[f64]) -> Result<f64> {
        Ok(self.log_marginal_g_t(t)?.exp())
    }

    /// Unnormalized log-density of the pivot (T or U).
    pub fn log_pivot_unnormalized(&self, v: &[f64]) -> Result<f64> {
        match self.kind {
            LawKind::ScaleLocation => self.log_marginal_g_t(v),
            LawKind::Location => self.log_g_u(v),
        }
    }

    /// Feasible interval of the last pivot coordinate with the others fixed,
    /// for the U-law under a compactly supported density.
    fn feasible_last(&self, head: &[f64]) -> (f64, f64) {
        let (lo, hi) = self.density.support();
        if self.kind == LawKind::ScaleLocation || !(lo.is_finite() || hi.is_finite()) {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        let j = self.p() - 1;
        let mut base: Vec<f64> = self.ancillary.iter().copied().collect();
        for (k, &v) in head.iter().enumerate() {
            for (b, xik) in base.iter_mut().zip(self.x.column(k).iter()) {
                *b += xik * v;
            }
        }
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
        for (bi, &xi) in base.iter().zip(self.x.column(j).iter()) {
            if xi > 0.0 {
                a = a.max((lo - bi) / xi);
                b = b.min((hi - bi) / xi);
            } else if xi < 0.0 {
                a = a.max((hi - bi) / xi);
                b = b.min((lo - bi) / xi);
            } else if !(*bi > lo && *bi < hi) {
                return (0.0, 0.0);
            }
        }
        (a, b)
    }

    /// log ∫ over the coordinates from `head.len()` on, optionally restricted
    /// to a box.
    fn log_integrate_tail(&self, head: &mut Vec<f64>, region: Option<&[(f64, f64)]>) -> Result<LogIntegral> {
        let j = head.len();
        let p = self.p();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if j == p - 1 {
            (lo, hi) = self.feasible_last(head);
        }
        if let Some(reg) = region {
            lo = lo.max(reg[j].0);
            hi = hi.min(reg[j].1);
        }
        if !(lo < hi) {
            return Ok(LogIntegral::zero());
        }
        let step = self.steps[j];
        let center = 0.0f64.clamp(lo, hi);
        let mut err: Option<Error> = None;
        let res = {
            let mut f = |v: f64| -> f64 {
                head.push(v);
                let out = if j + 1 == p {
                    self.log_pivot_unnormalized(head)
                } else {
                    self.log_integrate_tail(head, region).map(|r| r.log_value)
                };
                head.pop();
                match out {
                    Ok(x) => x,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            log_integrate(&mut f, lo, hi, center, step, &self.quad)
        };
        if let Some(e) = err {
            return Err(e);
        }
        res
    }

    /// Log normalizing constant of the pivot law (cached).
    pub fn normalize(&self) -> Result<Normalizer> {
        self.norm
            .get_or_init(|| {
                if self.p() > MAX_QUADRATURE_DIM {
                    return Err(Error::DimensionTooHigh {
                        p: self.p(),
                        max: MAX_QUADRATURE_DIM,
                    });
                }
                if self.bounded_scale_path() {
                    return Ok(self.bounded_integrals(false)?.0);
                }
                let r = self.log_integrate_tail(&mut Vec::new(), None)?;
                if !r.log_value.is_finite() {
                    return Err(Error::IntegrationFailure(
                        "conditional law has no mass".into(),
                    ));
                }
                Ok(Normalizer {
                    log_norm: r.log_value,
                    rel_error: r.rel_error,
                })
            })
            .clone()
    }

    /// Normalized log-density of the pivot.
    pub fn log_density(&self, v: &[f64]) -> Result<f64> {
        let norm = self.normalize()?;
        Ok(self.log_pivot_unnormalized(v)? - norm.log_norm)
    }

    /// Probability of the box `∏ [lo_j, hi_j]` (p ≤ 2).
    pub fn probability(&self, region: &[(f64, f64)]) -> Result<f64> {
        if region.len() != self.p() {
            return Err(Error::InvalidArgument("region dimension mismatch".into()));
        }
        let norm = self.normalize()?;
        let r = self.log_integrate_tail(&mut Vec::new(), Some(region))?;
        Ok((r.log_value - norm.log_norm).exp().min(1.0))
    }

    fn require_scalar(&self) -> Result<()> {
        if self.p() != 1 {
            return Err(Error::DimensionTooHigh { p: self.p(), max: 1 });
        }
        Ok(())
    }

    /// Inverse-CDF grid of the one-dimensional pivot (cached).
    pub fn pivot_grid(&self) -> Result<Arc<GridCdf>> {
        self.grid
            .get_or_init(|| {
                self.require_scalar()?;
                let (lo, hi) = self.feasible_last(&[]);
                let mut err: Option<Error> = None;
                let mut f = |v: f64| match self.log_pivot_unnormalized(&[v]) {
                    Ok(x) => x,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                };
                let center = 0.0f64.clamp(lo, hi);
                let bracket = log_bracket(&mut f, lo, hi, center, self.steps[0], &self.quad)?
                    .ok_or_else(|| Error::IntegrationFailure("pivot law has no mass".into()))?;
                let grid = GridCdf::build(&mut f, bracket.lo(), bracket.hi(), bracket.peak, 1e-9, 200_000)?;
                if let Some(e) = err {
                    return Err(e);
                }
                Ok(Arc::new(grid))
            })
            .clone()
    }

    pub fn quantile(&self, prob: f64) -> Result<f64> {
        Ok(self.pivot_grid()?.quantile(prob))
    }

    pub fn cdf(&self, v: f64) -> Result<f64> {
        Ok(self.pivot_grid()?.cdf(v))
    }

    /// One draw of S given T = t.
    pub fn sample_scale_given(&self, t: &[f64], stream: &mut Stream) -> Result<f64> {
        self.require(LawKind::ScaleLocation)?;
        let r = self.shifted(t);
        let sc = self.scale_coordinate(&r, self.n() as f64);
        let (lo, hi, center, step) = sc.domain();
        let mut f = |x: f64| sc.log_integrand(x);
        let bracket = log_bracket(&mut f, lo, hi, center, step, &self.quad)?
            .ok_or_else(|| Error::IntegrationFailure("scale law has no mass".into()))?;
        let grid = GridCdf::build(&mut f, bracket.lo(), bracket.hi(), bracket.peak, 1e-8, 20_000)?;
        Ok(sc.to_w(grid.quantile(stream.uniform())).exp())
    }

    /// Pivot draws (and S draws when `with_scale` and the law is the (S, T)
    /// law). Deterministic given `seed`, independent of the thread count.
    pub fn sample(
        &self,
        n_draws: usize,
        seed: &SeedTree,
        method: SampleMethod,
        with_scale: bool,
    ) -> Result<LawDraws> {
        let with_scale = with_scale && self.kind == LawKind::ScaleLocation;
        match method {
            SampleMethod::GridInverseCdf => self.sample_grid(n_draws, seed, with_scale),
            SampleMethod::Metropolis(cfg) => self.sample_metropolis(n_draws, seed, cfg, with_scale),
        }
    }

    /// Grid sampler for p = 1, Metropolis otherwise.
    pub fn default_method(&self) -> SampleMethod {
        if self.p() == 1 {
            SampleMethod::GridInverseCdf
        } else {
            SampleMethod::Metropolis(MetropolisConfig::default())
        }
    }

    fn sample_grid(&self, n_draws: usize, seed: &SeedTree, with_scale: bool) -> Result<LawDraws> {
        let grid = self.pivot_grid()?;
        let batches = n_draws.div_ceil(DRAW_BATCH);
        let parts: Vec<Result<Vec<(f64, f64)>>> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut st = seed.derive("draw-batch", b as u64).stream();
                let len = DRAW_BATCH.min(n_draws - b * DRAW_BATCH);
                let mut out = Vec::with_capacity(len);
                for _ in 0..len {
                    let t = grid.quantile(st.uniform());
                    let s = if with_scale {
                        self.sample_scale_given(&[t], &mut st)?
                    } else {
                        f64::NAN
                    };
                    out.push((t, s));
                }
                Ok(out)
            })
            .collect();
        let mut t = Vec::with_capacity(n_draws);
        let mut s = Vec::with_capacity(n_draws);
        for part in parts {
            for (ti, si) in part? {
                t.push(ti);
                s.push(si);
            }
        }
        Ok(LawDraws {
            pivot: DMatrix::from_column_slice(n_draws, 1, &t),
            scale: with_scale.then_some(s),
            acceptance: None,
        })
    }

    /// Log target of the chain state: (w, t) for the (S, T) law, u otherwise.
    fn chain_log_target(&self, state: &[f64]) -> f64 {
        match self.kind {
            LawKind::ScaleLocation => {
                let w = state[0];
                let r = self.shifted(&state[1..]);
                self.n() as f64 * w + self.sum_log_density(&r, w.exp())
            }
            LawKind::Location => self.sum_log_density(&self.shifted(state), 1.0),
        }
    }

    fn sample_metropolis(
        &self,
        n_draws: usize,
        seed: &SeedTree,
        cfg: MetropolisConfig,
        with_scale: bool,
    ) -> Result<LawDraws> {
        let p = self.p();
        let mut st = seed.derive("metropolis", 0).stream();
        let (mut state, mut steps): (Vec<f64>, Vec<f64>) = match self.kind {
            LawKind::ScaleLocation => {
                let w0 = (self.density.scale_hint()).ln().min(self.w_upper(self.ancillary.as_slice()) - 0.5);
                let mut s = vec![w0];
                s.extend(std::iter::repeat_n(0.0, p));
                let mut h = vec![2.4 / (2.0 * self.n() as f64).sqrt()];
                h.extend(self.steps.iter().map(|v| 4.0 * v));
                (s, h)
            }
            LawKind::Location => (vec![0.0; p], self.steps.iter().map(|v| 4.0 * v).collect()),
        };
        let dim = state.len();
        let mut cur = self.chain_log_target(&state);
        if !cur.is_finite() {
            return Err(Error::ChainDiagnosticsFailure(0.0));
        }
        let mut accepted = vec![0usize; dim];
        let mut tried = vec![0usize; dim];
        let sweep = |state: &mut Vec<f64>, cur: &mut f64, steps: &[f64], st: &mut Stream, acc: &mut [usize], tr: &mut [usize]| {
            for c in 0..dim {
                let old = state[c];
                state[c] = old + steps[c] * st.normal();
                let prop = self.chain_log_target(state);
                tr[c] += 1;
                if prop.is_finite() && (prop >= *cur || st.uniform() < (prop - *cur).exp()) {
                    *cur = prop;
                    acc[c] += 1;
                } else {
                    state[c] = old;
                }
            }
        };
        let window = 50;
        for it in 0..cfg.burn_in {
            sweep(&mut state, &mut cur, &steps, &mut st, &mut accepted, &mut tried);
            if (it + 1) % window == 0 {
                for c in 0..dim {
                    let rate = accepted[c] as f64 / tried[c] as f64;
                    steps[c] *= (2.0 * (rate - cfg.target_accept)).exp();
                    accepted[c] = 0;
                    tried[c] = 0;
                }
            }
        }
        accepted.iter_mut().for_each(|v| *v = 0);
        tried.iter_mut().for_each(|v| *v = 0);
        let thin = cfg.thin.max(1);
        let mut pivot = DMatrix::zeros(n_draws, p);
        let mut scale = Vec::with_capacity(if with_scale { n_draws } else { 0 });
        for i in 0..n_draws {
            for _ in 0..thin {
                sweep(&mut state, &mut cur, &steps, &mut st, &mut accepted, &mut tried);
            }
            match self.kind {
                LawKind::ScaleLocation => {
                    for j in 0..p {
                        pivot[(i, j)] = state[1 + j];
                    }
                    if with_scale {
                        scale.push(state[0].exp());
                    }
                }
                LawKind::Location => {
                    for j in 0..p {
                        pivot[(i, j)] = state[j];
                    }
                }
            }
        }
        let rates: Vec<f64> = accepted
            .iter()
            .zip(&tried)
            .map(|(&a, &t)| if t > 0 { a as f64 / t as f64 } else { 0.0 })
            .collect();
        if n_draws > 0 {
            for &r in &rates {
                if !(0.05..=0.95).contains(&r) {
                    return Err(Error::ChainDiagnosticsFailure(r));
                }
            }
        }
        Ok(LawDraws {
            pivot,
            scale: with_scale.then_some(scale),
            acceptance: Some(rates),
        })
    }

    /// E[S²|A], E[S²T|A], E[S²T²|A] by nested quadrature (p = 1).
    pub fn moments(&self) -> Result<ScaleMoments> {
        self.require(LawKind::ScaleLocation)?;
        self.require_scalar()?;
        if self.bounded_scale_path() {
            let m = self.bounded_integrals(true)?.1.expect("moments requested");
            if !(m.e_s2 > 0.0) || m.rel_error > 1e-3 {
                return Err(Error::IntegrationFailure(format!(
                    "moment quadrature relative error {:.2e}",
                    m.rel_error
                )));
            }
            return Ok(m);
        }
        let norm = self.normalize()?;
        let cache: RefCell<HashMap<u64, f64>> = RefCell::new(HashMap::new());
        let err: RefCell<Option<Error>> = RefCell::new(None);
        let l2 = |t: f64| -> f64 {
            if let Some(v) = cache.borrow().get(&t.to_bits()) {
                return *v;
            }
            let v = match self.log_s_integral(&self.shifted(&[t]), 2) {
                Ok(r) => r.log_value,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            };
            cache.borrow_mut().insert(t.to_bits(), v);
            v
        };
        let bracket = log_bracket(
            &mut |t| l2(t),
            f64::NEG_INFINITY,
            f64::INFINITY,
            0.0,
            self.steps[0],
            &self.quad,
        )?
        .ok_or_else(|| Error::IntegrationFailure("moment integrand has no mass".into()))?;
        let peak = bracket.peak;
        let opts = QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_panels: 4000,
        };
        let weight = |t: f64| {
            let v = (l2(t) - peak).exp();
            if v.is_nan() {
                0.0
            } else {
                v
            }
        };
        let m0 = integrate_panels(&mut |t| weight(t), &bracket.edges, opts);
        let m2 = integrate_panels(&mut |t| t * t * weight(t), &bracket.edges, opts);
        let m1 = integrate_panels(
            &mut |t| t * weight(t),
            &bracket.edges,
            QuadOptions {
                abs_tol: 1e-12 * (m0.value + m2.value),
                ..opts
            },
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let c = (peak - norm.log_norm).exp();
        let rel = (m0.abs_error / m0.value)
            .max(m2.abs_error / m2.value)
            .max(m1.abs_error / (m0.value + m2.value))
            + norm.rel_error;
        if !(m0.value > 0.0) || rel > 1e-3 {
            return Err(Error::IntegrationFailure(format!(
                "moment quadrature relative error {rel:.2e}"
            )));
        }
        Ok(ScaleMoments {
            e_s2: c * m0.value,
            e_s2t: c * m1.value,
            e_s2t2: c * m2.value,
            rel_error: rel,
        })
    }

    /// (E[U|Ã], E[U²|Ã]) by quadrature (p = 1).
    pub fn location_moments(&self) -> Result<(f64, f64)> {
        self.require(LawKind::Location)?;
        self.require_scalar()?;
        let (lo, hi) = self.feasible_last(&[]);
        let mut f = |u: f64| self.log_g_u(&[u]).unwrap_or(f64::NAN);
        let bracket = log_bracket(&mut f, lo, hi, 0.0f64.clamp(lo, hi), self.steps[0], &self.quad)?
            .ok_or_else(|| Error::IntegrationFailure("location law has no mass".into()))?;
        let peak = bracket.peak;
        let opts = QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_panels: 4000,
        };
        let weight = |u: f64| {
            let v = (self.log_g_u(&[u]).unwrap_or(f64::NAN) - peak).exp();
            if v.is_nan() {
                0.0
            } else {
                v
            }
        };
        let m0 = integrate_panels(&mut |u| weight(u), &bracket.edges, opts);
        let m2 = integrate_panels(&mut |u| u * u * weight(u), &bracket.edges, opts);
        let m1 = integrate_panels(
            &mut |u| u * weight(u),
            &bracket.edges,
            QuadOptions {
                abs_tol: 1e-12 * (m0.value + m2.value),
                ..opts
            },
        );
        if !(m0.value > 0.0 && m0.value.is_finite()) {
            return Err(Error::IntegrationFailure("location law has no mass".into()));
        }
        Ok((m1.value / m0.value, m2.value / m0.value))
    }
}

/// Mass and first two m-moments of `∏ f(s·a_i + x_i·m)` over the feasible
/// m-interval at fixed s.
#[derive(Debug, Clone, Copy)]
struct MSlice {
    log_mass: f64,
    mean: f64,
    second: f64,
    rel_error: f64,
}

/// (S, M = S·T) representation of the (S, T) law on a bounded support
/// (p = 1). The observations are `s·a_i + x_i·m`, so at fixed s the feasible
/// m form an interval whose ends are where some observation reaches a
/// support edge; `m = c + ½L·sin θ` absorbs inverse square-root blow-ups
/// there. Density of (s, m) is `s^{n−2} ∏ f(s·a_i + x_i·m)`.
impl ConditionalLaw {
    fn bounded_scale_path(&self) -> bool {
        let (lo, hi) = self.density.support();
        self.kind == LawKind::ScaleLocation && self.p() == 1 && lo.is_finite() && hi.is_finite()
    }

    fn m_interval(&self, s: f64) -> (f64, f64) {
        let (lo, hi) = self.density.support();
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
        for (ai, &xi) in self.ancillary.iter().zip(self.x.column(0).iter()) {
            let base = s * ai;
            if xi > 0.0 {
                a = a.max((lo - base) / xi);
                b = b.min((hi - base) / xi);
            } else if xi < 0.0 {
                a = a.max((hi - base) / xi);
                b = b.min((lo - base) / xi);
            } else if !(base > lo && base < hi) {
                return (0.0, 0.0);
            }
        }
        (a, b)
    }

    /// Largest s with a nonempty m-interval; the width is concave in s.
    fn s_max(&self) -> f64 {
        let width = |s: f64| {
            let (a, b) = self.m_interval(s);
            b - a
        };
        let mut hi = 1.0;
        while width(hi) > 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if !(mid > lo && mid < hi) {
                break;
            }
            if width(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn m_slice(&self, s: f64) -> Option<MSlice> {
        let (a, b) = self.m_interval(s);
        if !(b > a) {
            return None;
        }
        let (c, half) = (0.5 * (a + b), 0.5 * (b - a));
        let log_half = half.ln();
        let col = self.x.column(0);
        let log_f = |theta: f64| -> (f64, f64) {
            let m = c + half * theta.sin();
            let mut acc = log_half + theta.cos().ln();
            for (ai, xi) in self.ancillary.iter().zip(col.iter()) {
                acc += self.density.log_density(s * ai + xi * m);
                if acc == f64::NEG_INFINITY {
                    break;
                }
            }
            (m, acc)
        };
        let h = std::f64::consts::FRAC_PI_2;
        let scan = 64;
        let mut shift = f64::NEG_INFINITY;
        for k in 1..scan {
            let (_, v) = log_f(-h + 2.0 * h * k as f64 / scan as f64);
            if v > shift {
                shift = v;
            }
        }
        if !shift.is_finite() {
            return None;
        }
        let cache: RefCell<HashMap<u64, (f64, f64)>> = RefCell::new(HashMap::new());
        let weight = |theta: f64| -> (f64, f64) {
            if let Some(v) = cache.borrow().get(&theta.to_bits()) {
                return *v;
            }
            let (m, l) = log_f(theta);
            let w = (l - shift).exp();
            let out = (m, if w.is_nan() { 0.0 } else { w });
            cache.borrow_mut().insert(theta.to_bits(), out);
            out
        };
        let edges: Vec<f64> = (0..=8).map(|k| -h + 2.0 * h * k as f64 / 8.0).collect();
        let opts = QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_panels: 2000,
        };
        let m0 = integrate_panels(&mut |t| weight(t).1, &edges, opts);
        if !(m0.value > 0.0 && m0.value.is_finite()) {
            return None;
        }
        // moments about the interval centre keep the odd one well scaled
        let scale = half.max(c.abs()).max(1e-300);
        let m2 = integrate_panels(
            &mut |t| {
                let (m, w) = weight(t);
                let d = (m - c) / scale;
                d * d * w
            },
            &edges,
            opts,
        );
        let m1 = integrate_panels(
            &mut |t| {
                let (m, w) = weight(t);
                (m - c) / scale * w
            },
            &edges,
            QuadOptions {
                abs_tol: 1e-12 * (m0.value + m2.value),
                ..opts
            },
        );
        let d1 = m1.value / m0.value;
        let d2 = m2.value / m0.value;
        Some(MSlice {
            log_mass: shift + m0.value.ln(),
            mean: c + scale * d1,
            second: c * c + 2.0 * c * scale * d1 + scale * scale * d2,
            rel_error: (m0.abs_error / m0.value)
                .max(m2.abs_error / (m0.value + m2.value))
                .max(m1.abs_error / (m0.value + m2.value)),
        })
    }

    /// ∫ s^{n−2} ∏ f dm ds (the normalizer) and, when `moments`, the
    /// integrals of s², s·m and m² against the same density.
    fn bounded_integrals(&self, moments: bool) -> Result<(Normalizer, Option<ScaleMoments>)> {
        let n = self.n() as f64;
        let s_max = self.s_max();
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(Error::IntegrationFailure("empty scale range".into()));
        }
        let w_max = s_max.ln();
        // w = w_max − v²
        let cache: RefCell<HashMap<u64, Option<MSlice>>> = RefCell::new(HashMap::new());
        let slice = |v: f64| -> Option<MSlice> {
            if let Some(x) = cache.borrow().get(&v.to_bits()) {
                return *x;
            }
            let out = if v > 0.0 { self.m_slice((w_max - v * v).exp()) } else { None };
            cache.borrow_mut().insert(v.to_bits(), out);
            out
        };
        // log of e^{(n−1)w}·I₀ on the v scale, Jacobian 2v included
        let log0 = |v: f64| -> f64 {
            match slice(v) {
                Some(sl) => (n - 1.0) * (w_max - v * v) + sl.log_mass + (2.0 * v).ln(),
                None => f64::NEG_INFINITY,
            }
        };
        let v0 = (w_max - (self.density.scale_hint() / s_max).ln().min(w_max - 0.5)).max(0.25).sqrt();
        let step = (0.5 / (2.0 * n).sqrt() / v0).min(0.5 * v0);
        let mut lf = |v: f64| log0(v);
        let bracket = log_bracket(&mut lf, 0.0, f64::INFINITY, v0, step, &self.quad)?
            .ok_or_else(|| Error::IntegrationFailure("conditional law has no mass".into()))?;
        let peak = bracket.peak;
        let opts = QuadOptions {
            rel_tol: 1e-8,
            abs_tol: 0.0,
            max_panels: 3000,
        };
        let weight = |v: f64| -> f64 {
            let x = (log0(v) - peak).exp();
            if x.is_nan() {
                0.0
            } else {
                x
            }
        };
        let z = integrate_panels(&mut |v| weight(v), &bracket.edges, opts);
        if !(z.value > 0.0 && z.value.is_finite()) {
            return Err(Error::IntegrationFailure("conditional law has no mass".into()));
        }
        let slice_err = |v: f64| slice(v).map_or(0.0, |s| s.rel_error);
        let worst_slice = bracket.edges.iter().map(|&v| slice_err(v)).fold(0.0, f64::max);
        let norm = Normalizer {
            log_norm: peak + z.value.ln(),
            rel_error: z.abs_error / z.value + worst_slice,
        };
        if !moments {
            return Ok((norm, None));
        }
        let sv = |v: f64| (w_max - v * v).exp();
        let e_s2 = integrate_panels(&mut |v| sv(v).powi(2) * weight(v), &bracket.edges, opts);
        let e_m2 = integrate_panels(
            &mut |v| slice(v).map_or(0.0, |sl| sl.second) * weight(v),
            &bracket.edges,
            opts,
        );
        let e_sm = integrate_panels(
            &mut |v| sv(v) * slice(v).map_or(0.0, |sl| sl.mean) * weight(v),
            &bracket.edges,
            QuadOptions {
                abs_tol: 1e-12 * (e_s2.value + e_m2.value),
                ..opts
            },
        );
        let rel = (e_s2.abs_error / e_s2.value)
            .max(e_m2.abs_error / e_m2.value)
            .max(e_sm.abs_error / (e_s2.value + e_m2.value))
            + norm.rel_error;
        Ok((
            norm,
            Some(ScaleMoments {
                e_s2: e_s2.value / z.value,
                e_s2t: e_sm.value / z.value,
                e_s2t2: e_m2.value / z.value,
                rel_error: rel,
            }),
        ))
    }
}

struct ScaleCoordinate<'a> {
    law: &'a ConditionalLaw,
    r: &'a [f64],
    k: f64,
    w_max: f64,
    center: f64,
    step: f64,
}

impl ScaleCoordinate<'_> {
    fn bounded(&self) -> bool {
        self.w_max.is_finite()
    }

    /// (lo, hi, center, step) in the integration coordinate.
    fn domain(&self) -> (f64, f64, f64, f64) {
        if self.bounded() {
            let v0 = (self.w_max - self.center).sqrt();
            (0.0, f64::INFINITY, v0, (self.step / (2.0 * v0)).min(v0))
        } else {
            (f64::NEG_INFINITY, self.w_max, self.center, self.step)
        }
    }

    fn to_w(&self, x: f64) -> f64 {
        if self.bounded() {
            self.w_max - x * x
        } else {
            x
        }
    }

    fn log_integrand(&self, x: f64) -> f64 {
        let w = self.to_w(x);
        let base = self.k * w + self.law.sum_log_density(self.r, w.exp());
        if self.bounded() {
            if x <= 0.0 {
                return f64::NEG_INFINITY;
            }
            base + (2.0 * x).ln()
        } else {
            base
        }
    }
}

/// Free-function form of [`ConditionalLaw::log_kappa`].
pub fn log_kappa(law: &ConditionalLaw, s: f64, t: &[f64]) -> Result<f64> {
    law.log_kappa(s, t)
}

pub fn log_g_u(law: &ConditionalLaw, u: &[f64]) -> Result<f64> {
    law.log_g_u(u)
}

pub fn marginal_g_t(law: &ConditionalLaw, t: &[f64]) -> Result<f64> {
    law.marginal_g_t(t)
}

pub fn normalize(law: &ConditionalLaw) -> Result<Normalizer> {
    law.normalize()
}

pub fn sample_law(
    law: &ConditionalLaw,
    n_draws: usize,
    seed: &SeedTree,
    method: SampleMethod,
) -> Result<LawDraws> {
    law.sample(n_draws, seed, method, true)
}

pub fn conditional_moments(law: &ConditionalLaw) -> Result<ScaleMoments> {
    law.moments()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMethod {
    /// Draw the pivots from the conditional law and rebuild the response.
    Exact,
    /// Draw unconditional datasets until every residual is within `tol` of
    /// the target configuration (sup norm).
    Rejection { tol: f64, max_tries: u64 },
}

/// Builds datasets whose residual configuration equals the law's ancillary.
#[derive(Debug, Clone)]
pub struct ConditionalGenerator<'a> {
    pub law: &'a ConditionalLaw,
    pub beta: DVector<f64>,
    pub sigma: f64,
    pub estimator: Estimator,
}

impl<'a> ConditionalGenerator<'a> {
    pub fn new(law: &'a ConditionalLaw, beta: DVector<f64>, sigma: f64, estimator: Estimator) -> Result<Self> {
        if beta.len() != law.p() {
            return Err(Error::InvalidArgument("β has the wrong dimension".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("σ must be positive, got {sigma}")));
        }
        Ok(Self {
            law,
            beta,
            sigma,
            estimator,
        })
    }

    /// Response for pivot draw `t` (and `s` for the (S, T) law).
    pub fn response(&self, t: &[f64], s: f64) -> DVector<f64> {
        let x = self.law.design();
        let tv = DVector::from_column_slice(t);
        let a = self.law.ancillary();
        match self.law.kind() {
            LawKind::ScaleLocation => x * &self.beta + (x * tv + a) * (self.sigma * s),
            LawKind::Location => x * &self.beta + x * tv + a,
        }
    }

    /// `count` datasets; deterministic given `seed`.
    pub fn generate(&self, count: usize, seed: &SeedTree, method: GenerationMethod) -> Result<Vec<Dataset>> {
        match method {
            GenerationMethod::Exact => {
                let draws = self.law.sample(count, seed, self.law.default_method(), true)?;
                (0..count)
                    .map(|i| {
                        let t: Vec<f64> = draws.pivot.row(i).iter().copied().collect();
                        let s = draws.scale.as_ref().map_or(1.0, |v| v[i]);
                        Dataset::new(self.law.design().clone(), self.response(&t, s))
                    })
                    .collect()
            }
            GenerationMethod::Rejection { tol, max_tries } => {
                let batches = count.div_ceil(DRAW_BATCH);
                let parts: Vec<Result<Vec<Dataset>>> = (0..batches)
                    .into_par_iter()
                    .map(|b| {
                        let len = DRAW_BATCH.min(count - b * DRAW_BATCH);
                        let mut st = seed.derive("rejection-batch", b as u64).stream();
                        (0..len).map(|_| self.reject_one(tol, max_tries, &mut st)).collect()
                    })
                    .collect();
                let mut out = Vec::with_capacity(count);
                for p in parts {
                    out.extend(p?);
                }
                Ok(out)
            }
        }
    }

    fn reject_one(&self, tol: f64, max_tries: u64, st: &mut Stream) -> Result<Dataset> {
        let x = self.law.design();
        let n = self.law.n();
        let mean = x * &self.beta;
        let a = self.law.ancillary();
        let scaled = self.law.kind() == LawKind::ScaleLocation;
        let noise_scale = if scaled { self.sigma } else { 1.0 };
        for _ in 0..max_tries {
            let eps = self.law.density().sample(st, n);
            let y = &mean + DVector::from_vec(eps) * noise_scale;
            let b = estimate_beta(self.estimator, x, &y)?;
            let mut res = &y - x * b;
            if scaled {
                let sd = (res.norm_squared() / n as f64).sqrt();
                if sd <= 0.0 {
                    continue;
                }
                res /= sd;
            }
            if res.iter().zip(a.iter()).all(|(r, ai)| (r - ai).abs() <= tol) {
                return Dataset::new(x.clone(), y);
            }
        }
        Err(Error::RejectionBudgetExceeded(max_tries))
    }
}

/// One dataset drawn conditionally on the law's ancillary.
pub fn generate_conditional_dataset(
    law: &ConditionalLaw,
    beta: &DVector<f64>,
    sigma: f64,
    estimator: Estimator,
    seed: &SeedTree,
    method: GenerationMethod,
) -> Result<Dataset> {
    let g = ConditionalGenerator::new(law, beta.clone(), sigma, estimator)?;
    Ok(g.generate(1, seed, method)?.remove(0))
}
