//! Conditional normal approximations of the pivot laws and their kernel
//! plug-in estimates.
//!
//! With scores ℓ′, ℓ″ evaluated at the ancillary residuals:
//!
//! * 𝓘 = n⁻² XᵀX Σ ℓ′(A_i)²,  θ = n^{−1/2} Σ x_i ℓ′(A_i)
//! * 𝓙 = −n⁻¹ Σ {A_i ℓ′(A_i) + A_i² ℓ″(A_i)},  ψ = n^{−1/2} Σ {A_i ℓ′(A_i) + 1}
//!
//! and, conditionally on the ancillary, √n·T ≈ N(𝓘⁻¹θ, 𝓘⁻¹) and
//! √n·log S ≈ N(ψ/𝓙, 1/𝓙). The regression model uses raw residuals and the
//! density f in place of f₀, with no scale block.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::distributions::ErrorDensity;
use crate::error::{Error, Result};
use crate::kernel::{score2_estimate, score_estimate, Bandwidths, KernelSpec};
use crate::model::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    ExactScore,
    PluginScore,
}

/// Bandwidth-rate diagnostics for plug-in summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateDiagnostics {
    pub h0: f64,
    pub h1: f64,
    pub q: u32,
    pub delta1: f64,
    pub delta2: f64,
    pub warnings: Vec<String>,
}

/// δ₁ = h0^q + h1^q + n^{−1/2}(h0^{−1/2} + h1^{−3/2}) and
/// δ₂ = h0^q + h1^q + n^{−1/2}(h0^{−3/2} + h1^{−5/2}).
pub fn rate_diagnostics(n: usize, bw: &Bandwidths, q: u32) -> RateDiagnostics {
    let (h0, h1) = (bw.h0, bw.h1);
    let bias = h0.powi(q as i32) + h1.powi(q as i32);
    let rn = (n as f64).sqrt();
    let delta1 = bias + (h0.powf(-0.5) + h1.powf(-1.5)) / rn;
    let delta2 = bias + (h0.powf(-1.5) + h1.powf(-2.5)) / rn;
    let mut warnings = Vec::new();
    if delta1 >= 1.0 {
        warnings.push(format!("δ₁ = {delta1:.3} ≥ 1: information estimate may be unreliable"));
    }
    if delta2 >= 1.0 {
        warnings.push(format!("δ₂ = {delta2:.3} ≥ 1: scale estimate may be unreliable"));
    }
    RateDiagnostics {
        h0,
        h1,
        q,
        delta1,
        delta2,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalNormalSummary {
    /// 𝓘 (p×p).
    pub info: DMatrix<f64>,
    /// θ.
    pub theta: DVector<f64>,
    /// 𝓙; `None` for the regression model.
    pub scale_info: Option<f64>,
    /// ψ; `None` for the regression model.
    pub scale_theta: Option<f64>,
    pub n: usize,
    pub kind: ModelKind,
    pub source: ScoreSource,
    pub rates: Option<RateDiagnostics>,
}

fn summarize(
    ancillary: &DVector<f64>,
    x: &DMatrix<f64>,
    l1: &[f64],
    l2: Option<&[f64]>,
    kind: ModelKind,
    source: ScoreSource,
) -> Result<ConditionalNormalSummary> {
    let (n, p) = x.shape();
    if ancillary.len() != n {
        return Err(Error::InvalidData("ancillary length does not match the design".into()));
    }
    if let Some(bad) = l1.iter().find(|v| !v.is_finite()) {
        return Err(Error::ScoreSingularity(*bad));
    }
    let nf = n as f64;
    let ss: f64 = l1.iter().map(|v| v * v).sum();
    let info = x.transpose() * x * (ss / (nf * nf));
    let mut theta = DVector::zeros(p);
    for (i, &s) in l1.iter().enumerate() {
        for j in 0..p {
            theta[j] += x[(i, j)] * s;
        }
    }
    theta /= nf.sqrt();
    let (scale_info, scale_theta) = match (kind, l2) {
        (ModelKind::RegressionScale, Some(l2)) => {
            if let Some(bad) = l2.iter().find(|v| !v.is_finite()) {
                return Err(Error::ScoreSingularity(*bad));
            }
            let mut j = 0.0;
            let mut psi = 0.0;
            for i in 0..n {
                let a = ancillary[i];
                j += a * l1[i] + a * a * l2[i];
                psi += a * l1[i] + 1.0;
            }
            (Some(-j / nf), Some(psi / nf.sqrt()))
        }
        _ => (None, None),
    };
    Ok(ConditionalNormalSummary {
        info,
        theta,
        scale_info,
        scale_theta,
        n,
        kind,
        source,
        rates: None,
    })
}

/// Summary from explicit score functions ℓ′ and ℓ″.
pub fn npi_quantities(
    ancillary: &DVector<f64>,
    x: &DMatrix<f64>,
    score: &dyn Fn(f64) -> Result<f64>,
    score2: &dyn Fn(f64) -> Result<f64>,
    kind: ModelKind,
) -> Result<ConditionalNormalSummary> {
    let l1: Vec<f64> = ancillary.iter().map(|&a| score(a)).collect::<Result<_>>()?;
    let l2: Option<Vec<f64>> = match kind {
        ModelKind::RegressionScale => {
            Some(ancillary.iter().map(|&a| score2(a)).collect::<Result<_>>()?)
        }
        ModelKind::Regression => None,
    };
    summarize(ancillary, x, &l1, l2.as_deref(), kind, ScoreSource::ExactScore)
}

/// Summary from the scores of a known density.
pub fn npi_quantities_from_density(
    ancillary: &DVector<f64>,
    x: &DMatrix<f64>,
    density: &dyn ErrorDensity,
    kind: ModelKind,
) -> Result<ConditionalNormalSummary> {
    npi_quantities(ancillary, x, &|z| density.score(z), &|z| density.score2(z), kind)
}

/// Summary with leave-one-out anti-symmetrized kernel scores in place of ℓ′
/// (and symmetrized ℓ″ estimates for the scale block).
pub fn plugin_quantities(
    ancillary: &DVector<f64>,
    x: &DMatrix<f64>,
    bw: &Bandwidths,
    k: &KernelSpec,
    kind: ModelKind,
) -> Result<ConditionalNormalSummary> {
    let n = ancillary.len();
    if n < 3 {
        return Err(Error::InvalidData("plug-in quantities need n ≥ 3".into()));
    }
    let pts = ancillary.as_slice();
    let l1: Vec<f64> = (0..n)
        .map(|i| score_estimate(pts, i, bw, k))
        .collect::<Result<_>>()?;
    let l2: Option<Vec<f64>> = match kind {
        ModelKind::RegressionScale => Some(
            (0..n)
                .map(|i| score2_estimate(pts, i, bw, k))
                .collect::<Result<_>>()?,
        ),
        ModelKind::Regression => None,
    };
    let mut s = summarize(ancillary, x, &l1, l2.as_deref(), kind, ScoreSource::PluginScore)?;
    s.rates = Some(rate_diagnostics(n, bw, k.order));
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pivot {
    /// (β̂ − β)/σ̂.
    T,
    /// β̂ − β.
    U,
    /// log(σ̂/σ).
    LogScale,
}

/// Normal law of √n times a pivot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalApprox {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub pivot: Pivot,
    pub n: usize,
}

impl NormalApprox {
    /// (mean, cov) of the pivot itself, i.e. divided by √n and n.
    pub fn pivot_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let nf = self.n as f64;
        (&self.mean / nf.sqrt(), &self.cov / nf)
    }

    /// Inverse of [`NormalApprox::pivot_moments`].
    pub fn from_pivot_moments(mean: DVector<f64>, cov: DMatrix<f64>, pivot: Pivot, n: usize) -> Self {
        let nf = n as f64;
        Self {
            mean: mean * nf.sqrt(),
            cov: cov * nf,
            pivot,
            n,
        }
    }
}

/// √n·T (or √n·U) ≈ N(𝓘⁻¹θ, 𝓘⁻¹).
pub fn normal_approx(summary: &ConditionalNormalSummary) -> Result<NormalApprox> {
    let chol = summary
        .info
        .clone()
        .cholesky()
        .ok_or(Error::SingularInformation)?;
    let cov = chol.inverse();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInformation);
    }
    let mean = &cov * &summary.theta;
    Ok(NormalApprox {
        mean,
        cov,
        pivot: match summary.kind {
            ModelKind::RegressionScale => Pivot::T,
            ModelKind::Regression => Pivot::U,
        },
        n: summary.n,
    })
}

/// √n·log S ≈ N(ψ/𝓙, 1/𝓙).
pub fn scale_normal_approx(summary: &ConditionalNormalSummary) -> Result<NormalApprox> {
    let (Some(j), Some(psi)) = (summary.scale_info, summary.scale_theta) else {
        return Err(Error::InvalidArgument(
            "scale approximation needs the regression-scale model".into(),
        ));
    };
    if !(j > 0.0 && j.is_finite()) {
        return Err(Error::SingularInformation);
    }
    Ok(NormalApprox {
        mean: DVector::from_element(1, psi / j),
        cov: DMatrix::from_element(1, 1, 1.0 / j),
        pivot: Pivot::LogScale,
        n: summary.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conddist::{ConditionalLaw, LawKind, SampleMethod};
    use crate::distributions::{DensitySpec, Parametric};
    use crate::kernel::rate_bandwidths;
    use crate::model::{fit_least_squares, Dataset};
    use crate::rngsim::SeedTree;
    use crate::stats::variance;
    use proptest::prelude::*;

    fn studentized(y: &[f64]) -> DVector<f64> {
        let d = Dataset::location(y).unwrap();
        fit_least_squares(&d, ModelKind::RegressionScale)
            .unwrap()
            .residuals_studentized
            .unwrap()
    }

    fn ones(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn gaussian_location_identities() {
        let y = SeedTree::new(1).stream().normals(30);
        let a = studentized(&y);
        let s = npi_quantities(&a, &ones(30), &|z| Ok(-z), &|_| Ok(-1.0), ModelKind::RegressionScale).unwrap();
        assert!(s.theta[0].abs() < 1e-12);
        assert!((s.info[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(s.scale_theta.unwrap().abs() < 1e-12);
        assert!((s.scale_info.unwrap() - 2.0).abs() < 1e-12);
        let na = normal_approx(&s).unwrap();
        assert!(na.mean[0].abs() < 1e-12 && (na.cov[(0, 0)] - 1.0).abs() < 1e-12);
        let sc = scale_normal_approx(&s).unwrap();
        assert!(sc.mean[0].abs() < 1e-12 && (sc.cov[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_score_substitution() {
        let n = 7;
        let x = DMatrix::from_fn(n, 1, |i, _| 0.5 + i as f64);
        let a = DVector::from_fn(n, |i, _| (i as f64 - 3.0) / 2.0);
        let c = 1.7;
        let s = npi_quantities(&a, &x, &|_| Ok(c), &|_| Ok(0.0), ModelKind::Regression).unwrap();
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        assert!((s.theta[0] - c * sx / (n as f64).sqrt()).abs() < 1e-12);
        // n⁻²·Σx²·Σℓ′² with Σℓ′² = n·c²
        assert!((s.info[(0, 0)] - c * c * sxx * n as f64 / (n * n) as f64).abs() < 1e-12);
        assert!(s.scale_info.is_none());
    }

    #[test]
    fn t5_summary_matches_term_by_term_oracle() {
        let t5 = Parametric::new(DensitySpec::StudentT { df: 5.0 });
        let y = t5.sample(&mut SeedTree::new(2).stream(), 30);
        let a = studentized(&y);
        let s = npi_quantities_from_density(&a, &ones(30), &t5, ModelKind::RegressionScale).unwrap();
        let (mut ss, mut th, mut jj, mut ps) = (0.0, 0.0, 0.0, 0.0);
        for &z in a.iter() {
            let l1 = -6.0 * z / (5.0 + z * z);
            let l2 = -6.0 * (5.0 - z * z) / (5.0 + z * z).powi(2);
            ss += l1 * l1;
            th += l1;
            jj += z * l1 + z * z * l2;
            ps += z * l1 + 1.0;
        }
        let n = 30.0f64;
        assert!((s.info[(0, 0)] - ss / n).abs() < 1e-12);
        assert!((s.theta[0] - th / n.sqrt()).abs() < 1e-12);
        assert!((s.scale_info.unwrap() + jj / n).abs() < 1e-12);
        assert!((s.scale_theta.unwrap() - ps / n.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn non_finite_score_is_reported() {
        let a = DVector::from_vec(vec![-1.0, 0.0, 1.0]);
        let r = npi_quantities(&a, &ones(3), &|z| Ok(1.0 / z), &|_| Ok(0.0), ModelKind::Regression);
        assert!(matches!(r, Err(Error::ScoreSingularity(_))));
    }

    #[test]
    fn plugin_information_at_n_2000() {
        let y = SeedTree::new(3).stream().normals(2000);
        let a = studentized(&y);
        let bw = rate_bandwidths(2000, 2, 1.0);
        let k = KernelSpec::gaussian();
        let p = plugin_quantities(&a, &ones(2000), &bw, &k, ModelKind::RegressionScale).unwrap();
        let e = npi_quantities(&a, &ones(2000), &|z| Ok(-z), &|_| Ok(-1.0), ModelKind::RegressionScale).unwrap();
        let err = (p.info[(0, 0)] - e.info[(0, 0)]).abs();
        assert!(err <= 0.1, "|𝓘† − 𝓘| = {err}");
        assert!(p.rates.is_some());
    }

    #[test]
    fn mirrored_data_negates_plugin_theta() {
        let y = SeedTree::new(4).stream().normals(25);
        let a = studentized(&y);
        let bw = Bandwidths::with_default_trim(25, 0.5, 0.6).unwrap();
        let k = KernelSpec::gaussian();
        let p = plugin_quantities(&a, &ones(25), &bw, &k, ModelKind::RegressionScale).unwrap();
        let m = plugin_quantities(&(-&a), &ones(25), &bw, &k, ModelKind::RegressionScale).unwrap();
        assert!((p.theta[0] + m.theta[0]).abs() < 1e-12);
        assert!((p.info[(0, 0)] - m.info[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn mirrored_data_keeps_the_scale_block() {
        // reflection A → −A leaves ψ and 𝓙 unchanged for a symmetric density
        let t5 = Parametric::new(DensitySpec::StudentT { df: 5.0 });
        let a = studentized(&t5.sample(&mut SeedTree::new(5).stream(), 20));
        let s = npi_quantities_from_density(&a, &ones(20), &t5, ModelKind::RegressionScale).unwrap();
        let m = npi_quantities_from_density(&(-&a), &ones(20), &t5, ModelKind::RegressionScale).unwrap();
        assert!((s.scale_theta.unwrap() - m.scale_theta.unwrap()).abs() < 1e-12);
        assert!((s.scale_info.unwrap() - m.scale_info.unwrap()).abs() < 1e-12);
        assert!((s.theta[0] + m.theta[0]).abs() < 1e-12);
    }

    #[test]
    fn diagonal_information() {
        let s = ConditionalNormalSummary {
            info: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0])),
            theta: DVector::from_vec(vec![2.0, 4.0]),
            scale_info: None,
            scale_theta: None,
            n: 10,
            kind: ModelKind::Regression,
            source: ScoreSource::ExactScore,
            rates: None,
        };
        let na = normal_approx(&s).unwrap();
        assert!((na.mean[0] - 1.0).abs() < 1e-15 && (na.mean[1] - 0.5).abs() < 1e-15);
        assert!((na.cov[(0, 0)] - 0.5).abs() < 1e-15 && (na.cov[(1, 1)] - 0.125).abs() < 1e-15);
        let (m, c) = na.pivot_moments();
        let back = NormalApprox::from_pivot_moments(m, c, na.pivot, na.n);
        assert!((back.mean - &na.mean).amax() < 1e-15 && (back.cov - &na.cov).amax() < 1e-15);
    }

    #[test]
    fn singular_information_is_rejected() {
        let s = ConditionalNormalSummary {
            info: DMatrix::zeros(1, 1),
            theta: DVector::zeros(1),
            scale_info: Some(-1.0),
            scale_theta: Some(0.0),
            n: 5,
            kind: ModelKind::RegressionScale,
            source: ScoreSource::ExactScore,
            rates: None,
        };
        assert_eq!(normal_approx(&s), Err(Error::SingularInformation));
        assert_eq!(scale_normal_approx(&s), Err(Error::SingularInformation));
    }

    #[test]
    fn scale_law_variance_matches_exact_sampler() {
        let n = 30;
        let y = SeedTree::new(6).stream().normals(n);
        let a = studentized(&y);
        let normal = Parametric::new(DensitySpec::Normal).into_ref();
        let s = npi_quantities_from_density(&a, &ones(n), normal.as_ref(), ModelKind::RegressionScale).unwrap();
        let law = ConditionalLaw::new(LawKind::ScaleLocation, a, ones(n), normal).unwrap();
        let d = law.sample(3000, &SeedTree::new(7), SampleMethod::GridInverseCdf, true).unwrap();
        let v: Vec<f64> = d.scale.unwrap().iter().map(|s| (n as f64).sqrt() * s.ln()).collect();
        let target = 1.0 / s.scale_info.unwrap();
        assert!((variance(&v) - target).abs() < 0.25 * target, "{} vs {target}", variance(&v));
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in 0u64..500, shift in 0usize..20) {
            let n = 20;
            let mut st = SeedTree::new(seed).stream();
            let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { st.normal() });
            let a = DVector::from_vec(st.normals(n));
            let t5 = Parametric::new(DensitySpec::StudentT { df: 5.0 });
            let s = npi_quantities_from_density(&a, &x, &t5, ModelKind::RegressionScale).unwrap();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let xp = DMatrix::from_fn(n, 2, |i, j| x[(perm[i], j)]);
            let ap = DVector::from_fn(n, |i, _| a[perm[i]]);
            let sp = npi_quantities_from_density(&ap, &xp, &t5, ModelKind::RegressionScale).unwrap();
            prop_assert!((s.info - sp.info).amax() < 1e-12);
            prop_assert!((s.theta - sp.theta).amax() < 1e-12);
            prop_assert!((s.scale_info.unwrap() - sp.scale_info.unwrap()).abs() < 1e-12);
        }

        #[test]
        fn plugin_info_is_psd(seed in 0u64..200) {
            let n = 15;
            let mut st = SeedTree::new(seed).stream();
            let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { st.normal() });
            let a = DVector::from_vec(st.normals(n));
            let bw = Bandwidths::with_default_trim(n, 0.6, 0.6).unwrap();
            let s = plugin_quantities(&a, &x, &bw, &KernelSpec::gaussian(), ModelKind::Regression).unwrap();
            let eig = s.info.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-12));
        }

        #[test]
        fn symmetric_balanced_case_has_zero_mean(half in proptest::collection::vec(0.05f64..3.0, 3..12)) {
            let a: Vec<f64> = half.iter().copied().chain(half.iter().map(|v| -v)).collect();
            let n = a.len();
            let t5 = Parametric::new(DensitySpec::StudentT { df: 5.0 });
            let s = npi_quantities_from_density(&DVector::from_vec(a), &ones(n), &t5, ModelKind::Regression).unwrap();
            let na = normal_approx(&s).unwrap();
            prop_assert!(na.mean[0].abs() < 1e-12);
        }
    }
}
