//! Kernel density and density-derivative estimates built from residuals.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Beta, Distribution};
use serde::Serialize;

use crate::distributions::{DensityRef, ErrorDensity, Tabulated};
use crate::error::{Error, Result};
use crate::rngsim::Stream;
use crate::stats::{normal_pdf, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Quartic,
    Triweight,
}

/// A symmetric second-order kernel together with its order and support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// First nonvanishing moment order.
    pub order: u32,
    /// Support half-width; infinite for the gaussian kernel.
    pub half_width: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::gaussian()
    }
}

impl KernelSpec {
    pub fn gaussian() -> Self {
        Self::new(KernelKind::Gaussian)
    }
    pub fn quartic() -> Self {
        Self::new(KernelKind::Quartic)
    }
    pub fn triweight() -> Self {
        Self::new(KernelKind::Triweight)
    }

    pub fn new(kind: KernelKind) -> Self {
        let half_width = match kind {
            KernelKind::Gaussian => f64::INFINITY,
            _ => 1.0,
        };
        Self {
            kind,
            order: 2,
            half_width,
        }
    }

    pub fn is_compact(&self) -> bool {
        self.half_width.is_finite()
    }

    /// k^{(m)}(u) for m ∈ {0, 1, 2}.
    pub fn eval(&self, u: f64, m: u32) -> f64 {
        match self.kind {
            KernelKind::Gaussian => {
                let p = normal_pdf(u);
                match m {
                    0 => p,
                    1 => -u * p,
                    2 => (u * u - 1.0) * p,
                    _ => panic!("kernel derivative order {m} not supported"),
                }
            }
            KernelKind::Quartic => {
                if u.abs() >= 1.0 {
                    return 0.0;
                }
                let w = 1.0 - u * u;
                match m {
                    0 => 15.0 / 16.0 * w * w,
                    1 => -15.0 / 4.0 * u * w,
                    2 => -15.0 / 4.0 * (1.0 - 3.0 * u * u),
                    _ => panic!("kernel derivative order {m} not supported"),
                }
            }
            KernelKind::Triweight => {
                if u.abs() >= 1.0 {
                    return 0.0;
                }
                let w = 1.0 - u * u;
                match m {
                    0 => 35.0 / 32.0 * w * w * w,
                    1 => -105.0 / 16.0 * u * w * w,
                    2 => -105.0 / 16.0 * w * (1.0 - 5.0 * u * u),
                    _ => panic!("kernel derivative order {m} not supported"),
                }
            }
        }
    }

    /// One draw from the kernel viewed as a density.
    pub fn sample_one(&self, stream: &mut Stream) -> f64 {
        let shape = match self.kind {
            KernelKind::Gaussian => return stream.normal(),
            KernelKind::Quartic => 3.0,
            KernelKind::Triweight => 4.0,
        };
        let b: f64 = Beta::new(shape, shape).expect("fixed shape").sample(stream);
        2.0 * b - 1.0
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.kind {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Quartic => "quartic",
            KernelKind::Triweight => "triweight",
        };
        f.write_str(s)
    }
}

impl FromStr for KernelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::gaussian()),
            "quartic" | "biweight" => Ok(Self::quartic()),
            "triweight" => Ok(Self::triweight()),
            other => Err(Error::Parse(format!("unknown kernel {other:?}"))),
        }
    }
}

/// Density bandwidth `h0`, derivative bandwidth `h1` and the floor applied to
/// score denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bandwidths {
    pub h0: f64,
    pub h1: f64,
    pub trim: f64,
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::BadBandwidth(h))
    }
}

impl Bandwidths {
    pub fn new(h0: f64, h1: f64, trim: f64) -> Result<Self> {
        check_h(h0)?;
        check_h(h1)?;
        if !(trim >= 0.0 && trim.is_finite()) {
            return Err(Error::InvalidArgument(format!("trim must be nonnegative, got {trim}")));
        }
        Ok(Self { h0, h1, trim })
    }

    /// Bandwidths with the default trimming floor for a sample of size `n`.
    pub fn with_default_trim(n: usize, h0: f64, h1: f64) -> Result<Self> {
        check_h(h0)?;
        Self::new(h0, h1, default_trim(n, h0))
    }
}

/// 0.01·(n·h0)^{−1/2}.
pub fn default_trim(n: usize, h0: f64) -> f64 {
    0.01 / (n as f64 * h0).sqrt()
}

/// Multiplier of `scale·n^{−1/(5+2q)}` for the density bandwidth.
pub const RATE_C0: f64 = 0.5;
/// Multiplier of `scale·n^{−1/(5+2q)}` for the derivative bandwidth.
pub const RATE_C1: f64 = 0.5;

/// `h_m = c_m·scale·n^{−1/(5+2q)}` with [`RATE_C0`], [`RATE_C1`] and the
/// default trim.
pub fn rate_bandwidths(n: usize, q: u32, scale: f64) -> Bandwidths {
    let r = (n as f64).powf(-1.0 / (5.0 + 2.0 * q as f64));
    let h0 = RATE_C0 * scale * r;
    let h1 = RATE_C1 * scale * r;
    Bandwidths {
        h0,
        h1,
        trim: default_trim(n, h0),
    }
}

/// Normal-reference bandwidth 1.06·sd·n^{−1/5}.
pub fn normal_reference_bandwidth(points: &[f64]) -> f64 {
    let n = points.len() as f64;
    let m = points.iter().sum::<f64>() / n;
    let sd = (points.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    1.06 * sd * n.powf(-0.2)
}

fn kernel_sum(points: &[f64], skip: Option<usize>, h: f64, k: &KernelSpec, m: u32, z: f64) -> f64 {
    let mut acc = 0.0;
    for (j, &a) in points.iter().enumerate() {
        if Some(j) != skip {
            acc += k.eval((z - a) / h, m);
        }
    }
    acc
}

/// `(n·h^{m+1})⁻¹ Σ k^{(m)}((z − a_i)/h)`.
pub fn kde(points: &[f64], h: f64, k: &KernelSpec, m: u32, z: f64) -> Result<f64> {
    check_h(h)?;
    if points.is_empty() {
        return Err(Error::InvalidData("kernel estimate needs at least one point".into()));
    }
    let n = points.len() as f64;
    Ok(kernel_sum(points, None, h, k, m, z) / (n * h.powi(m as i32 + 1)))
}

/// Leave-one-out estimate: point `i` removed, divisor `(n−1)h^{m+1}`.
pub fn kde_loo(points: &[f64], i: usize, h: f64, k: &KernelSpec, m: u32, z: f64) -> Result<f64> {
    check_h(h)?;
    let n = points.len();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    if n < 2 {
        return Err(Error::InvalidData("leave-one-out estimate needs n ≥ 2".into()));
    }
    Ok(kernel_sum(points, Some(i), h, k, m, z) / ((n - 1) as f64 * h.powi(m as i32 + 1)))
}

/// `(f̂_h(z) + f̂_h(−z)) / 2`.
pub fn symmetrize(points: &[f64], h: f64, k: &KernelSpec, z: f64) -> Result<f64> {
    Ok(0.5 * (kde(points, h, k, 0, z)? + kde(points, h, k, 0, -z)?))
}

fn trimmed_ratio(num: f64, den: f64, trim: f64) -> f64 {
    let den = den.max(trim);
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Anti-symmetrized leave-one-out estimate of ℓ′(a_i).
pub fn score_estimate(points: &[f64], i: usize, bw: &Bandwidths, k: &KernelSpec) -> Result<f64> {
    let z = *points
        .get(i)
        .ok_or(Error::IndexOutOfRange { index: i, len: points.len() })?;
    let plus = trimmed_ratio(
        kde_loo(points, i, bw.h1, k, 1, z)?,
        kde_loo(points, i, bw.h0, k, 0, z)?,
        bw.trim,
    );
    let minus = trimmed_ratio(
        kde_loo(points, i, bw.h1, k, 1, -z)?,
        kde_loo(points, i, bw.h0, k, 0, -z)?,
        bw.trim,
    );
    Ok(0.5 * (plus - minus))
}

/// Symmetrized leave-one-out estimate of ℓ″(a_i):
/// ½ Σ_± {f̂″_{h1}/f̂_{h0} − (f̂′_{h1}/f̂_{h0})²}(±a_i).
pub fn score2_estimate(points: &[f64], i: usize, bw: &Bandwidths, k: &KernelSpec) -> Result<f64> {
    let z = *points
        .get(i)
        .ok_or(Error::IndexOutOfRange { index: i, len: points.len() })?;
    let mut acc = 0.0;
    for v in [z, -z] {
        let f0 = kde_loo(points, i, bw.h0, k, 0, v)?;
        let r1 = trimmed_ratio(kde_loo(points, i, bw.h1, k, 1, v)?, f0, bw.trim);
        let r2 = trimmed_ratio(kde_loo(points, i, bw.h1, k, 2, v)?, f0, bw.trim);
        acc += r2 - r1 * r1;
    }
    Ok(0.5 * acc)
}

/// [`score_estimate`] at every point.
pub fn score_estimates(points: &[f64], bw: &Bandwidths, k: &KernelSpec) -> Result<Vec<f64>> {
    (0..points.len())
        .map(|i| score_estimate(points, i, bw, k))
        .collect()
}

/// A kernel density estimate usable wherever an [`ErrorDensity`] is.
///
/// With `symmetric = true` this is f̃_h, the estimate built from the points
/// and their mirror images.
#[derive(Debug, Clone)]
pub struct KernelDensity {
    atoms: Vec<f64>,
    h: f64,
    kernel: KernelSpec,
    symmetric: bool,
    log_norm: f64,
    spread: f64,
}

impl KernelDensity {
    pub fn new(points: &[f64], h: f64, kernel: KernelSpec, symmetric: bool) -> Result<Self> {
        check_h(h)?;
        if points.is_empty() || points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("kernel density needs finite points".into()));
        }
        let mut atoms: Vec<f64> = points.to_vec();
        if symmetric {
            atoms.extend(points.iter().map(|v| -v));
        }
        atoms.sort_by(f64::total_cmp);
        let n = atoms.len() as f64;
        let m = atoms.iter().sum::<f64>() / n;
        let spread = (atoms.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n + h * h).sqrt();
        Ok(Self {
            atoms,
            h,
            kernel,
            symmetric,
            log_norm: -(n * h).ln(),
            spread,
        })
    }

    /// Symmetrized estimate f̃_h.
    pub fn symmetrized(points: &[f64], h: f64, kernel: KernelSpec) -> Result<Self> {
        Self::new(points, h, kernel, true)
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Cubic Hermite table on a grid of spacing h/32 covering every atom
    /// plus 12h; exact beyond. Meant for the gaussian kernel: compact
    /// kernels have log-singular edges.
    pub fn tabulated(&self) -> Result<Tabulated> {
        let reach = 12.0 * self.h;
        let lo = self.atoms[0] - reach;
        let hi = self.atoms[self.atoms.len() - 1] + reach;
        Tabulated::new(Arc::new(self.clone()), lo, hi, self.h / 32.0)
    }

    /// Tabulated for the gaussian kernel, as is for compact kernels (whose
    /// evaluation only touches the atoms in reach).
    pub fn into_fast_ref(self) -> Result<DensityRef> {
        if self.kernel.is_compact() {
            Ok(Arc::new(self))
        } else {
            Ok(Arc::new(self.tabulated()?))
        }
    }

    /// Atoms whose kernels cover z (all atoms for the gaussian kernel).
    fn window(&self, z: f64) -> &[f64] {
        if !self.kernel.is_compact() {
            return &self.atoms;
        }
        let r = self.kernel.half_width * self.h;
        let lo = self.atoms.partition_point(|&a| a <= z - r);
        let hi = self.atoms.partition_point(|&a| a < z + r);
        &self.atoms[lo..hi]
    }

    /// (f′/f, f″/f) at z ≥ 0 or z < 0 directly.
    fn score_pair(&self, z: f64) -> Result<(f64, f64)> {
        let h = self.h;
        match self.kernel.kind {
            KernelKind::Gaussian => {
                // softmax weights avoid underflow far in the tails
                let us: Vec<f64> = self.atoms.iter().map(|a| (z - a) / h).collect();
                let mx = us
                    .iter()
                    .map(|u| -0.5 * u * u)
                    .fold(f64::NEG_INFINITY, f64::max);
                let (mut w, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for u in us {
                    let e = (-0.5 * u * u - mx).exp();
                    w += e;
                    s1 += e * u;
                    s2 += e * (u * u - 1.0);
                }
                Ok((-s1 / (w * h), s2 / (w * h * h)))
            }
            _ => {
                let win = self.window(z);
                let (mut f0, mut f1, mut f2) = (0.0, 0.0, 0.0);
                for &a in win {
                    let u = (z - a) / h;
                    f0 += self.kernel.eval(u, 0);
                    f1 += self.kernel.eval(u, 1);
                    f2 += self.kernel.eval(u, 2);
                }
                if f0 <= 0.0 {
                    return Err(Error::UnsupportedPoint(z));
                }
                Ok((f1 / (f0 * h), f2 / (f0 * h * h)))
            }
        }
    }

    fn log_density_direct(&self, z: f64) -> f64 {
        match self.kernel.kind {
            KernelKind::Gaussian => {
                let mut mx = f64::NEG_INFINITY;
                for &a in &self.atoms {
                    let u = (z - a) / self.h;
                    mx = mx.max(-0.5 * u * u);
                }
                let mut s = 0.0;
                for &a in &self.atoms {
                    let u = (z - a) / self.h;
                    s += (-0.5 * u * u - mx).exp();
                }
                self.log_norm - LN_SQRT_2PI + mx + s.ln()
            }
            _ => {
                let s: f64 = self
                    .window(z)
                    .iter()
                    .map(|&a| self.kernel.eval((z - a) / self.h, 0))
                    .sum();
                if s > 0.0 {
                    self.log_norm + s.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

impl ErrorDensity for KernelDensity {
    fn name(&self) -> String {
        let tag = if self.symmetric { "sym-kde" } else { "kde" };
        format!("{tag}({},h={})", self.kernel, self.h)
    }

    fn log_density(&self, z: f64) -> f64 {
        // evaluating at |z| makes the symmetrized estimate exactly even
        let z = if self.symmetric { z.abs() } else { z };
        self.log_density_direct(z)
    }

    fn score(&self, z: f64) -> Result<f64> {
        if self.symmetric && z < 0.0 {
            return Ok(-self.score_pair(-z)?.0);
        }
        Ok(self.score_pair(z)?.0)
    }

    fn score2(&self, z: f64) -> Result<f64> {
        let z = if self.symmetric { z.abs() } else { z };
        let (r1, r2) = self.score_pair(z)?;
        Ok(r2 - r1 * r1)
    }

    fn support(&self) -> (f64, f64) {
        if self.kernel.is_compact() {
            let r = self.kernel.half_width * self.h;
            (self.atoms[0] - r, self.atoms[self.atoms.len() - 1] + r)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn sample_one(&self, stream: &mut Stream) -> f64 {
        let a = self.atoms[stream.index(self.atoms.len())];
        a + self.h * self.kernel.sample_one(stream)
    }

    fn scale_hint(&self) -> f64 {
        self.spread
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DensitySpec, Parametric};
    use crate::quad::{integrate, integrate_real_line, QuadOptions};
    use crate::rngsim::SeedTree;
    use crate::stats::quantile;
    use proptest::prelude::*;

    const KERNELS: [KernelSpec; 3] = [
        KernelSpec {
            kind: KernelKind::Gaussian,
            order: 2,
            half_width: f64::INFINITY,
        },
        KernelSpec {
            kind: KernelKind::Quartic,
            order: 2,
            half_width: 1.0,
        },
        KernelSpec {
            kind: KernelKind::Triweight,
            order: 2,
            half_width: 1.0,
        },
    ];

    fn opts() -> QuadOptions {
        QuadOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_panels: 5000,
        }
    }

    fn moment(k: &KernelSpec, p: i32, m: u32) -> f64 {
        let mut f = |u: f64| u.powi(p) * k.eval(u, m);
        if k.is_compact() {
            integrate(&mut f, -1.0, 1.0, opts()).value
        } else {
            integrate_real_line(&mut f, opts()).value
        }
    }


    #[test]
    fn tabulated_density_tracks_exact_values() {
        let pts: Vec<f64> = SeedTree::new(12).stream().normals(40);
        for (h, kernel, stol) in [(0.3, KernelSpec::gaussian(), 1e-3), (0.1, KernelSpec::gaussian(), 1e-3)] {
            let kd = KernelDensity::symmetrized(&pts, h, kernel).unwrap();
            let tab = kd.tabulated().unwrap();
            for i in 0..400 {
                let z = -5.0 + i as f64 * 0.0251;
                let (a, b) = (kd.log_density(z), tab.log_density(z));
                if a.is_finite() {
                    assert!((a - b).abs() < 1e-6, "h={h} z={z}: {a} vs {b}");
                    let (sa, sb) = (kd.score(z).unwrap(), tab.score(z).unwrap());
                    assert!((sa - sb).abs() < stol * (1.0 / h + sa.abs()), "score h={h} z={z}: {sa} vs {sb}");
                } else {
                    assert_eq!(b, f64::NEG_INFINITY);
                }
                assert_eq!(tab.log_density(z), tab.log_density(-z));
            }
        }
    }
    #[test]
    fn kernel_moments() {
        for k in KERNELS {
            assert!((moment(&k, 0, 0) - 1.0).abs() < 1e-10, "{k}");
            assert!(moment(&k, 1, 0).abs() < 1e-12, "{k}");
            assert!(moment(&k, 2, 0) > 0.0, "{k}");
            assert!(moment(&k, 0, 1).abs() < 1e-12, "{k}");
            for u in [0.1, 0.5, 0.9] {
                assert_eq!(k.eval(u, 0), k.eval(-u, 0));
            }
        }
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        let d = 1e-6;
        for k in KERNELS {
            for u in [-0.8, -0.3, 0.05, 0.4, 0.7] {
                let fd1 = (k.eval(u + d, 0) - k.eval(u - d, 0)) / (2.0 * d);
                let fd2 = (k.eval(u + d, 1) - k.eval(u - d, 1)) / (2.0 * d);
                assert!((k.eval(u, 1) - fd1).abs() < 1e-7, "{k} k′({u})");
                assert!((k.eval(u, 2) - fd2).abs() < 1e-7, "{k} k″({u})");
            }
        }
    }

    #[test]
    fn kernel_samplers_have_the_right_variance() {
        for k in KERNELS {
            let mut s = SeedTree::new(3).stream();
            let x: Vec<f64> = (0..200_000).map(|_| k.sample_one(&mut s)).collect();
            let v = x.iter().map(|u| u * u).sum::<f64>() / x.len() as f64;
            let want = moment(&k, 2, 0);
            assert!((v - want).abs() < 0.01 * want, "{k}: {v} vs {want}");
        }
    }

    #[test]
    fn single_point_kde() {
        let v = kde(&[0.0], 1.0, &KernelSpec::gaussian(), 0, 0.0).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn bad_bandwidth() {
        assert_eq!(
            kde(&[0.0], 0.0, &KernelSpec::gaussian(), 0, 0.0),
            Err(Error::BadBandwidth(0.0))
        );
        assert!(Bandwidths::new(1.0, -1.0, 0.0).is_err());
    }

    fn sample_points(n: usize, seed: u64) -> Vec<f64> {
        SeedTree::new(seed).stream().normals(n)
    }

    #[test]
    fn kde_integrates_to_one() {
        let pts = sample_points(40, 1);
        for k in KERNELS {
            let mut f = |z: f64| kde(&pts, 0.4, &k, 0, z).unwrap();
            let total = integrate_real_line(&mut f, opts()).value;
            assert!((total - 1.0).abs() < 1e-6, "{k}: {total}");
            let mut g = |z: f64| symmetrize(&pts, 0.4, &k, z).unwrap();
            let total = integrate_real_line(&mut g, opts()).value;
            assert!((total - 1.0).abs() < 1e-6, "{k}: {total}");
        }
    }

    #[test]
    fn kde_derivative_matches_finite_differences() {
        let pts = sample_points(25, 2);
        let k = KernelSpec::gaussian();
        let d = 1e-5;
        for z in [-2.0, -0.5, 0.0, 0.3, 1.7] {
            let fd = (kde(&pts, 0.5, &k, 0, z + d).unwrap() - kde(&pts, 0.5, &k, 0, z - d).unwrap())
                / (2.0 * d);
            assert!((kde(&pts, 0.5, &k, 1, z).unwrap() - fd).abs() < 1e-5);
            let fd2 = (kde(&pts, 0.5, &k, 1, z + d).unwrap() - kde(&pts, 0.5, &k, 1, z - d).unwrap())
                / (2.0 * d);
            assert!((kde(&pts, 0.5, &k, 2, z).unwrap() - fd2).abs() < 1e-5);
        }
    }

    #[test]
    fn loo_reduces_to_single_point() {
        let k = KernelSpec::gaussian();
        for z in [-1.3, 0.0, 0.8] {
            let loo = kde_loo(&[-1.0, 1.0], 1, 0.7, &k, 0, z).unwrap();
            let single = kde(&[-1.0], 0.7, &k, 0, z).unwrap();
            assert!((loo - single).abs() < 1e-15);
        }
        assert_eq!(
            kde_loo(&[-1.0, 1.0], 2, 0.7, &k, 0, 0.0),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn loo_average_reproduces_full_estimate() {
        let pts = sample_points(100, 3);
        let k = KernelSpec::gaussian();
        for step in -20..=20 {
            let z = step as f64 * 0.15;
            let avg = (0..pts.len())
                .map(|i| kde_loo(&pts, i, 0.5, &k, 0, z).unwrap())
                .sum::<f64>()
                / pts.len() as f64;
            // direct summation oracle for the full estimate
            let full = pts
                .iter()
                .map(|a| normal_pdf((z - a) / 0.5))
                .sum::<f64>()
                / (0.5 * pts.len() as f64);
            assert!((avg - full).abs() < 1e-2);
        }
    }

    #[test]
    fn loo_far_outside_compact_support_is_zero() {
        let pts = [0.0, 0.5, 10.0];
        let v = kde_loo(&pts, 2, 1.0, &KernelSpec::quartic(), 0, 10.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn symmetric_points_are_left_unchanged() {
        let pts = [-1.0, 0.0, 1.0];
        let k = KernelSpec::gaussian();
        for step in -30..=30 {
            let z = step as f64 * 0.1;
            let a = symmetrize(&pts, 0.6, &k, z).unwrap();
            let b = kde(&pts, 0.6, &k, 0, z).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn normal_score_is_recovered_at_n_2000() {
        let pts = sample_points(2000, 11);
        let scale = (pts.iter().map(|v| v * v).sum::<f64>() / 2000.0).sqrt();
        let bw = rate_bandwidths(2000, 2, scale);
        let k = KernelSpec::gaussian();
        let est = score_estimates(&pts, &bw, &k).unwrap();
        let lo = quantile(&pts, 0.05);
        let hi = quantile(&pts, 0.95);
        let errs: Vec<f64> = pts
            .iter()
            .zip(&est)
            .filter(|(a, _)| **a >= lo && **a <= hi)
            .map(|(a, e)| (e + a).abs())
            .collect();
        let mae = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mae <= 0.15, "mae {mae}");
    }

    #[test]
    fn mirror_points_have_opposite_scores() {
        let half = sample_points(15, 5);
        let pts: Vec<f64> = half.iter().copied().chain(half.iter().map(|v| -v)).collect();
        let bw = Bandwidths::with_default_trim(pts.len(), 0.5, 0.6).unwrap();
        let k = KernelSpec::gaussian();
        for i in 0..15 {
            let a = score_estimate(&pts, i, &bw, &k).unwrap();
            let b = score_estimate(&pts, i + 15, &bw, &k).unwrap();
            assert!((a + b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn large_trim_bounds_the_score() {
        let pts = sample_points(30, 6);
        let bw = Bandwidths::new(0.5, 0.5, 10.0).unwrap();
        let k = KernelSpec::gaussian();
        for i in 0..pts.len() {
            let bound = 0.5
                * (kde_loo(&pts, i, 0.5, &k, 1, pts[i]).unwrap().abs()
                    + kde_loo(&pts, i, 0.5, &k, 1, -pts[i]).unwrap().abs())
                / 10.0;
            assert!(score_estimate(&pts, i, &bw, &k).unwrap().abs() <= bound + 1e-15);
        }
    }

    #[test]
    fn rate_bandwidth_scaling() {
        let a = rate_bandwidths(15, 2, 1.0);
        assert!((a.h1 / RATE_C1 - 15f64.powf(-1.0 / 9.0)).abs() < 1e-15);
        let b = rate_bandwidths(30, 2, 1.0);
        assert!((b.h1 / a.h1 - 2f64.powf(-1.0 / 9.0)).abs() < 1e-14);
        let c = rate_bandwidths(15, 2, 2.0);
        assert!((c.h0 - 2.0 * a.h0).abs() < 1e-15 && (c.h1 - 2.0 * a.h1).abs() < 1e-15);
    }

    #[test]
    fn kernel_density_matches_free_functions() {
        let pts = sample_points(20, 9);
        for k in KERNELS {
            let plain = KernelDensity::new(&pts, 0.7, k, false).unwrap();
            let sym = KernelDensity::symmetrized(&pts, 0.7, k).unwrap();
            for step in -12..=12 {
                let z = step as f64 * 0.21;
                let f = kde(&pts, 0.7, &k, 0, z).unwrap();
                let g = symmetrize(&pts, 0.7, &k, z).unwrap();
                if f > 0.0 {
                    assert!((plain.log_density(z) - f.ln()).abs() < 1e-12, "{k}");
                }
                if g > 0.0 {
                    assert!((sym.log_density(z) - g.ln()).abs() < 1e-12, "{k}");
                }
                assert_eq!(sym.log_density(z), sym.log_density(-z));
            }
        }
    }

    #[test]
    fn kernel_density_scores_match_finite_differences() {
        let pts = sample_points(20, 10);
        let d = 1e-5;
        for k in KERNELS {
            let kd = KernelDensity::symmetrized(&pts, 0.8, k).unwrap();
            for step in -10..=10 {
                let z = step as f64 * 0.17 + 0.01;
                if kd.density(z) < 1e-6 || kd.density(z + 2.0 * d) < 1e-6 || kd.density(z - 2.0 * d) < 1e-6 {
                    continue;
                }
                let fd = (kd.log_density(z + d) - kd.log_density(z - d)) / (2.0 * d);
                let s = kd.score(z).unwrap();
                assert!((s - fd).abs() < 1e-4 * (1.0 + s.abs()), "{k} {z}: {s} vs {fd}");
                let fd2 = (kd.score(z + d).unwrap() - kd.score(z - d).unwrap()) / (2.0 * d);
                let s2 = kd.score2(z).unwrap();
                assert!((s2 - fd2).abs() < 1e-4 * (1.0 + s2.abs()), "{k} {z}: {s2} vs {fd2}");
            }
        }
    }

    #[test]
    fn gaussian_kde_log_density_survives_far_tails() {
        let kd = KernelDensity::symmetrized(&[0.1, 0.5], 0.1, KernelSpec::gaussian()).unwrap();
        let v = kd.log_density(50.0);
        assert!(v.is_finite() && v < -1e4);
        assert!(kd.score(50.0).unwrap().is_finite());
        let q = KernelDensity::symmetrized(&[0.1, 0.5], 0.1, KernelSpec::quartic()).unwrap();
        assert_eq!(q.log_density(50.0), f64::NEG_INFINITY);
        assert!(q.score(50.0).is_err());
    }

    #[test]
    fn kernel_density_sampler_matches_its_cdf() {
        let pts = sample_points(10, 12);
        let kd = KernelDensity::symmetrized(&pts, 0.4, KernelSpec::gaussian()).unwrap();
        let x = kd.sample(&mut SeedTree::new(13).stream(), 50_000);
        let cdf = |z: f64| {
            kd.atoms()
                .iter()
                .map(|a| crate::stats::normal_cdf((z - a) / 0.4))
                .sum::<f64>()
                / kd.atoms().len() as f64
        };
        assert!(crate::stats::ks_statistic(&x, cdf) < 0.01);
    }

    #[test]
    fn huge_sample_kde_tracks_parametric_density() {
        let t = Parametric::new(DensitySpec::Normal);
        let pts = t.sample(&mut SeedTree::new(14).stream(), 20_000);
        let kd = KernelDensity::symmetrized(&pts, 0.1, KernelSpec::gaussian()).unwrap();
        for z in [-1.5, -0.5, 0.0, 0.7, 1.2] {
            assert!((kd.density(z) - t.density(z)).abs() < 0.01);
        }
    }

    proptest! {
        #[test]
        fn symmetrize_is_exactly_even(
            pts in proptest::collection::vec(-5.0f64..5.0, 1..30),
            z in -6.0f64..6.0,
            h in 0.05f64..3.0,
        ) {
            let k = KernelSpec::gaussian();
            prop_assert_eq!(symmetrize(&pts, h, &k, z).unwrap(), symmetrize(&pts, h, &k, -z).unwrap());
        }

        #[test]
        fn kde_is_continuous_in_h(
            pts in proptest::collection::vec(-3.0f64..3.0, 1..20),
            z in -4.0f64..4.0,
            h in 0.1f64..2.0,
        ) {
            let k = KernelSpec::quartic();
            let a = kde(&pts, h, &k, 0, z).unwrap();
            let b = kde(&pts, h * (1.0 + 1e-9), &k, 0, z).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn kde_is_linear_in_the_kernel(
            pts in proptest::collection::vec(-3.0f64..3.0, 1..20),
            z in -4.0f64..4.0,
            h in 0.1f64..2.0,
        ) {
            // the estimate with a kernel mixture equals the mixture of estimates
            let (g, q) = (KernelSpec::gaussian(), KernelSpec::quartic());
            let n = pts.len() as f64;
            let mixed: f64 = pts
                .iter()
                .map(|a| {
                    let u = (z - a) / h;
                    0.3 * g.eval(u, 0) + 0.7 * q.eval(u, 0)
                })
                .sum::<f64>() / (n * h);
            let lin = 0.3 * kde(&pts, h, &g, 0, z).unwrap() + 0.7 * kde(&pts, h, &q, 0, z).unwrap();
            prop_assert!((mixed - lin).abs() < 1e-12);
        }
    }
}
