//! Adaptive quadrature in linear and log space, and adaptive inverse-CDF
//! grids.
//!
//! Every conditional-law computation reduces to one-dimensional integrals of
//! `exp(L(x))` where `L` is a sum of log-densities and may be of order −1000.
//! [`log_integrate`] shifts by the running peak of `L` before exponentiating,
//! brackets the region where `L` is within `drop` of its peak, and then runs a
//! globally adaptive 7/15-point Gauss–Kronrod rule over that bracket.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: (Kronrod estimate, |Kronrod − Gauss|).
pub fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub converged: bool,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_panels: 4000,
        }
    }
}

const STALL_WINDOW: usize = 50;
const STALL_REL_TOL: f64 = 1e-7;

/// Globally adaptive Gauss–Kronrod over the panels delimited by `edges`
/// (sorted, at least two entries, all finite).
pub fn integrate_panels(
    f: &mut dyn FnMut(f64) -> f64,
    edges: &[f64],
    opts: QuadOptions,
) -> Integral {
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in edges.windows(2) {
        let (v, e) = gk15(f, w[0], w[1]);
        total += v;
        total_err += e;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    // panels this narrow only chase rounding noise near a singular edge
    let min_width = 1e-15 * (edges[edges.len() - 1] - edges[0]);
    let mut converged = false;
    let mut checkpoint = (0usize, f64::INFINITY);
    let mut splits = 0usize;
    while heap.len() < opts.max_panels {
        if total_err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            converged = true;
            break;
        }
        // error estimates stuck at a rounding-noise floor: stop refining once
        // the estimate is already good
        if splits >= checkpoint.0 + STALL_WINDOW {
            if total_err > 0.9 * checkpoint.1 && total_err <= STALL_REL_TOL * total.abs() {
                break;
            }
            checkpoint = (splits, total_err);
        }
        splits += 1;
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) || p.error == 0.0 || p.b - p.a < min_width {
            // cannot split further; park it with zero priority
            total_err -= p.error;
            heap.push(Panel { error: 0.0, ..p });
            if heap.iter().all(|q| q.error == 0.0) {
                break;
            }
            continue;
        }
        let (v1, e1) = gk15(f, p.a, m);
        let (v2, e2) = gk15(f, m, p.b);
        total += v1 + v2 - p.value;
        total_err += e1 + e2 - p.error;
        heap.push(Panel {
            a: p.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: m,
            b: p.b,
            value: v2,
            error: e2,
        });
    }
    if !converged {
        // recompute from scratch to shed accumulated rounding
        total = heap.iter().map(|p| p.value).sum();
        total_err = heap.iter().map(|p| p.error).sum();
        converged = total_err <= opts.abs_tol.max(opts.rel_tol * total.abs());
    }
    Integral {
        value: total,
        abs_error: total_err.max(0.0),
        converged,
    }
}

pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, opts: QuadOptions) -> Integral {
    integrate_panels(f, &[a, b], opts)
}

/// ∫_{−∞}^{∞} f via x = t / (1 − t²).
pub fn integrate_real_line(f: &mut dyn FnMut(f64) -> f64, opts: QuadOptions) -> Integral {
    let mut g = |t: f64| {
        let d = 1.0 - t * t;
        let x = t / d;
        f(x) * (1.0 + t * t) / (d * d)
    };
    let edges: Vec<f64> = (0..=16).map(|i| -1.0 + i as f64 / 8.0).collect();
    integrate_panels(&mut g, &edges, opts)
}

/// Options for [`log_integrate`].
#[derive(Debug, Clone, Copy)]
pub struct LogQuadOptions {
    pub rel_tol: f64,
    /// Log-units below the peak at which the bracket is closed.
    pub drop: f64,
    pub max_panels: usize,
    pub growth: f64,
}

impl Default for LogQuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            drop: 46.0,
            max_panels: 3000,
            growth: 1.6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogIntegral {
    /// log ∫ exp(L).
    pub log_value: f64,
    pub rel_error: f64,
    /// Effective integration bracket.
    pub lo: f64,
    pub hi: f64,
    /// Shift used before exponentiation.
    pub shift: f64,
}

impl LogIntegral {
    pub fn zero() -> Self {
        Self {
            log_value: f64::NEG_INFINITY,
            rel_error: 0.0,
            lo: 0.0,
            hi: 0.0,
            shift: f64::NEG_INFINITY,
        }
    }
}

/// Region where `logf` is within `drop` of its peak.
#[derive(Debug, Clone)]
pub struct LogBracket {
    /// Sorted probe points: geometrically spaced outward from the start, so
    /// they double as panel edges that are fine near the bulk.
    pub edges: Vec<f64>,
    /// Largest value of `logf` seen while probing.
    pub peak: f64,
}

impl LogBracket {
    pub fn lo(&self) -> f64 {
        self.edges[0]
    }
    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }
}

/// Marches outward from `center` in geometrically growing steps until `logf`
/// falls `drop` below the running peak or the domain ends. `None` when no
/// finite value of `logf` can be found.
pub fn log_bracket(
    logf: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    center: f64,
    step: f64,
    opts: &LogQuadOptions,
) -> Result<Option<LogBracket>> {
    assert!(lo < hi, "empty domain [{lo}, {hi}]");
    let step = if step > 0.0 && step.is_finite() {
        step
    } else {
        1.0
    };
    let Some((c, fc)) = find_finite(logf, lo, hi, center, step) else {
        return Ok(None);
    };
    let mut peak = fc;
    let mut march = |dir: f64, bound: f64, peak: &mut f64| -> Result<Vec<f64>> {
        let mut pts = Vec::new();
        let mut d = step;
        for _ in 0..400 {
            let x = c + dir * d;
            if (dir > 0.0 && x >= bound) || (dir < 0.0 && x <= bound) {
                pts.push(bound);
                return Ok(pts);
            }
            pts.push(x);
            let v = logf(x);
            if v > *peak {
                *peak = v;
            }
            if v < *peak - opts.drop {
                return Ok(pts);
            }
            d *= opts.growth;
        }
        Err(Error::IntegrationFailure(
            "integrand does not decay in log space".into(),
        ))
    };
    let right = march(1.0, hi, &mut peak)?;
    let left = march(-1.0, lo, &mut peak)?;
    let mut edges: Vec<f64> = left.into_iter().rev().collect();
    edges.push(c);
    edges.extend(right);
    Ok(Some(LogBracket { edges, peak }))
}

fn find_finite(
    logf: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    center: f64,
    step: f64,
) -> Option<(f64, f64)> {
    let c = if center > lo && center < hi {
        center
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo + step
    } else {
        hi - step
    };
    let v = logf(c);
    if v.is_finite() {
        return Some((c, v));
    }
    if lo.is_finite() && hi.is_finite() {
        // scan a refining grid over the bounded domain
        for level in 1..14 {
            let m = 1usize << level;
            for k in (1..m).step_by(2) {
                let x = lo + (hi - lo) * k as f64 / m as f64;
                let v = logf(x);
                if v.is_finite() {
                    return Some((x, v));
                }
            }
        }
        return None;
    }
    let mut d = step;
    for _ in 0..200 {
        for x in [c + d, c - d] {
            if x > lo && x < hi {
                let v = logf(x);
                if v.is_finite() {
                    return Some((x, v));
                }
            }
        }
        d *= 1.5;
    }
    None
}

/// log ∫_{lo}^{hi} exp(logf(x)) dx with a peak shift; `lo`/`hi` may be
/// infinite. Returns `log_value = −∞` when `logf` is −∞ everywhere probed.
pub fn log_integrate(
    logf: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    center: f64,
    step: f64,
    opts: &LogQuadOptions,
) -> Result<LogIntegral> {
    let Some(bracket) = log_bracket(logf, lo, hi, center, step, opts)? else {
        return Ok(LogIntegral::zero());
    };
    let (left, right, peak) = (bracket.lo(), bracket.hi(), bracket.peak);
    let edges = bracket.edges;
    let mut g = |x: f64| {
        let v = logf(x) - peak;
        if v.is_nan() {
            0.0
        } else {
            v.exp()
        }
    };
    let res = integrate_panels(
        &mut g,
        &edges,
        QuadOptions {
            rel_tol: opts.rel_tol,
            abs_tol: 0.0,
            max_panels: opts.max_panels,
        },
    );
    if !res.value.is_finite() || res.value <= 0.0 {
        return Err(Error::IntegrationFailure(format!(
            "non-finite or non-positive integral ({}) on [{left}, {right}]",
            res.value
        )));
    }
    let rel = res.abs_error / res.value;
    if rel > 1e-3 {
        return Err(Error::IntegrationFailure(format!(
            "relative error {rel:.2e} after {} panels",
            opts.max_panels
        )));
    }
    Ok(LogIntegral {
        log_value: peak + res.value.ln(),
        rel_error: rel,
        lo: left,
        hi: right,
        shift: peak,
    })
}

/// Piecewise-quadratic density on adaptive Simpson cells, with the cubic
/// CDF inverted inside each half-cell.
///
/// Nodes alternate cell edge, cell midpoint, cell edge, ... so cell `L`
/// spans nodes `2L ..= 2L + 2`.
#[derive(Debug, Clone)]
pub struct GridCdf {
    x: Vec<f64>,
    dens: Vec<f64>,
    cum: Vec<f64>,
}

/// Quadratic through (−1, f0), (0, fm), (1, f1) in u = (x − xm)/h.
#[derive(Clone, Copy)]
struct Cell {
    xm: f64,
    h: f64,
    fm: f64,
    b: f64,
    c: f64,
}

impl Cell {
    fn new(x0: f64, xm: f64, f0: f64, fm: f64, f1: f64) -> Self {
        Self {
            xm,
            h: xm - x0,
            fm,
            b: 0.5 * (f1 - f0),
            c: 0.5 * (f0 + f1) - fm,
        }
    }

    /// Mass on [−1, u].
    fn mass_to(&self, u: f64) -> f64 {
        self.h * (self.fm * (u + 1.0) + 0.5 * self.b * (u * u - 1.0) + self.c * (u * u * u + 1.0) / 3.0)
    }

    fn density(&self, u: f64) -> f64 {
        self.fm + self.b * u + self.c * u * u
    }
}

impl GridCdf {
    /// Builds the grid for `exp(logf − shift)` over `[lo, hi]` (both finite).
    /// Cells are bisected until the two-panel Simpson mass differs from the
    /// one-panel value by less than `15·tol` times the total.
    pub fn build(
        logf: &mut dyn FnMut(f64) -> f64,
        lo: f64,
        hi: f64,
        shift: f64,
        tol: f64,
        max_nodes: usize,
    ) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::IntegrationFailure(format!(
                "grid bracket [{lo}, {hi}] is not a finite interval"
            )));
        }
        let mut eval = |x: f64| -> f64 {
            let v = (logf(x) - shift).exp();
            if v.is_nan() {
                0.0
            } else {
                v
            }
        };
        let width = hi - lo;
        // endpoints may sit on an integrable singularity; step inside
        let (a, fa) = inset(&mut eval, lo, width * 1e-12, 1.0);
        let (b, fb) = inset(&mut eval, hi, width * 1e-12, -1.0);
        let cells0 = 64usize;
        let n0 = 2 * cells0 + 1;
        let xs: Vec<f64> = (0..n0).map(|k| a + (b - a) * k as f64 / (n0 - 1) as f64).collect();
        let fs: Vec<f64> = (0..n0)
            .map(|k| {
                if k == 0 {
                    fa
                } else if k == n0 - 1 {
                    fb
                } else {
                    eval(xs[k])
                }
            })
            .collect();
        let simpson = |h: f64, f0: f64, fm: f64, f1: f64| h / 3.0 * (f0 + 4.0 * fm + f1);
        let mut total: f64 = (0..cells0)
            .map(|c| {
                let k = 2 * c;
                simpson(xs[k + 1] - xs[k], fs[k], fs[k + 1], fs[k + 2])
            })
            .sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::IntegrationFailure(
                "grid density has no finite positive mass".into(),
            ));
        }
        let min_width = (b - a) * 1e-13;
        // accepted cells as (x0, xm, x1, f0, fm, f1)
        let mut cells: Vec<[f64; 6]> = Vec::new();
        for c in 0..cells0 {
            let k = 2 * c;
            let mut stack = vec![[xs[k], xs[k + 1], xs[k + 2], fs[k], fs[k + 1], fs[k + 2]]];
            let mut done: Vec<[f64; 6]> = Vec::new();
            while let Some(cell) = stack.pop() {
                let [x0, xm, x1, f0, fm, f1] = cell;
                let budget = 2 * (cells.len() + done.len() + stack.len()) + 4;
                if budget >= max_nodes || x1 - x0 < min_width {
                    done.push(cell);
                    continue;
                }
                let (xl, xr) = (0.5 * (x0 + xm), 0.5 * (xm + x1));
                let (fl, fr) = (eval(xl), eval(xr));
                let h = xm - x0;
                let whole = simpson(h, f0, fm, f1);
                let split = simpson(0.5 * h, f0, fl, fm) + simpson(0.5 * h, fm, fr, f1);
                let left = [x0, xl, xm, f0, fl, fm];
                let right = [xm, xr, x1, fm, fr, f1];
                if (split - whole).abs() > 15.0 * tol * total {
                    total += split - whole;
                    stack.push(left);
                    stack.push(right);
                } else {
                    done.push(left);
                    done.push(right);
                }
            }
            done.sort_by(|p, q| p[0].total_cmp(&q[0]));
            cells.extend(done);
        }
        let mut x = Vec::with_capacity(2 * cells.len() + 1);
        let mut dens = Vec::with_capacity(2 * cells.len() + 1);
        let mut cum = Vec::with_capacity(2 * cells.len() + 1);
        let mut acc = 0.0;
        for &[x0, xm, _x1, f0, mut fm, f1] in &cells {
            let mut cell = Cell::new(x0, xm, f0, fm, f1);
            if cell.mass_to(0.0) < 0.0 || cell.mass_to(1.0) < cell.mass_to(0.0) {
                // negligible tail cell whose parabola dips below zero
                fm = 0.5 * (f0 + f1);
                cell = Cell::new(x0, xm, f0, fm, f1);
            }
            x.push(x0);
            dens.push(f0);
            cum.push(acc);
            x.push(xm);
            dens.push(fm);
            cum.push(acc + cell.mass_to(0.0));
            acc += cell.mass_to(1.0);
        }
        let last = cells.last().expect("at least one cell");
        x.push(last[2]);
        dens.push(last[5]);
        cum.push(acc);
        Ok(Self { x, dens, cum })
    }

    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    pub fn total_mass(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn cell(&self, k: usize) -> (Cell, f64) {
        let l = 2 * (k / 2);
        let c = Cell::new(self.x[l], self.x[l + 1], self.dens[l], self.dens[l + 1], self.dens[l + 2]);
        (c, self.cum[l])
    }

    /// Inverse CDF at probability `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * self.total_mass();
        let k = match self.cum.binary_search_by(|c| c.total_cmp(&target)) {
            Ok(i) => return self.x[i],
            Err(i) => i.saturating_sub(1).min(self.x.len() - 2),
        };
        let (cell, base) = self.cell(k);
        let (mut ua, mut ub) = if k % 2 == 0 { (-1.0, 0.0) } else { (0.0, 1.0) };
        let f = |v: f64| base + cell.mass_to(v) - target;
        let (mut fa, fb) = (f(ua), f(ub));
        let mut v = if fb > fa { ua - fa * (ub - ua) / (fb - fa) } else { 0.5 * (ua + ub) };
        for _ in 0..100 {
            let fv = f(v);
            if fv == 0.0 {
                break;
            }
            if (fv < 0.0) == (fa < 0.0) {
                ua = v;
                fa = fv;
            } else {
                ub = v;
            }
            let d = cell.density(v) * cell.h;
            let newton = v - fv / d;
            v = if d > 0.0 && newton > ua && newton < ub { newton } else { 0.5 * (ua + ub) };
            if ub - ua < 1e-15 {
                break;
            }
        }
        cell.xm + cell.h * v
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.x[0] {
            return 0.0;
        }
        let last = self.x.len() - 1;
        if x >= self.x[last] {
            return 1.0;
        }
        let k = match self.x.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return self.cum[i] / self.total_mass(),
            Err(i) => i - 1,
        };
        let (cell, base) = self.cell(k);
        let m = (base + cell.mass_to((x - cell.xm) / cell.h)).clamp(self.cum[k], self.cum[k + 1]);
        m / self.total_mass()
    }
}

fn inset(eval: &mut dyn FnMut(f64) -> f64, x: f64, delta: f64, dir: f64) -> (f64, f64) {
    let v = eval(x);
    if v.is_finite() {
        return (x, v);
    }
    let mut d = delta;
    loop {
        let y = x + dir * d;
        let v = eval(y);
        if v.is_finite() || d > delta * 1e10 {
            return (y, if v.is_finite() { v } else { 0.0 });
        }
        d *= 10.0;
    }
}
