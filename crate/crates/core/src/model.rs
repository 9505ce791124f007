//! Linear-model data, equivariant estimation and ancillary residuals.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Responses `y` and covariate rows `x_i` (as rows of `x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::InvalidData(format!(
                "X has {n} rows but y has {} entries",
                y.len()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidData("design has no columns".into()));
        }
        if n < p + 1 {
            return Err(Error::InvalidData(format!("need n ≥ p + 1, got n = {n}, p = {p}")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in data".into()));
        }
        Ok(Self { x, y })
    }

    /// Location model: a single column of ones.
    pub fn location(y: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_element(y.len(), 1, 1.0),
            DVector::from_column_slice(y),
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn is_location(&self) -> bool {
        self.p() == 1 && self.x.iter().all(|&v| v == 1.0)
    }

    /// Same design, new responses.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    /// Reads CSV with a header containing `y` and `x1..xp`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("header: {e}")))?
            .clone();
        let y_col = headers
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| Error::Parse("missing column `y`".into()))?;
        let mut x_cols = Vec::new();
        for j in 1.. {
            match headers.iter().position(|h| h == format!("x{j}")) {
                Some(c) => x_cols.push(c),
                None => break,
            }
        }
        if x_cols.is_empty() {
            return Err(Error::Parse("missing covariate column `x1`".into()));
        }
        let expected = x_cols.len() + 1;
        if headers.len() != expected {
            return Err(Error::Parse(format!(
                "unexpected columns: expected `y` and x1..x{} only",
                x_cols.len()
            )));
        }
        let p = x_cols.len();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
            let field = |c: usize| -> Result<f64> {
                let s = rec.get(c).unwrap_or("");
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {s:?}", line + 2)))
            };
            ys.push(field(y_col)?);
            for &c in &x_cols {
                xs.push(field(c)?);
            }
        }
        let n = ys.len();
        Self::new(
            DMatrix::from_row_slice(n, p, &xs),
            DVector::from_vec(ys),
        )
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("y");
        for j in 1..=self.p() {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&format!("{}", self.y[i]));
            for j in 0..self.p() {
                out.push_str(&format!(",{}", self.x[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Regression (`f` unknown, no scale; conditions on raw residuals Ã) or
/// regression-scale (`σ·f₀`; conditions on studentized residuals A).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "reg")]
    Regression,
    #[serde(rename = "regscale")]
    RegressionScale,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg" | "regression" => Ok(Self::Regression),
            "regscale" | "regression-scale" => Ok(Self::RegressionScale),
            _ => Err(Error::Parse(format!("unknown model kind {s:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Regression => "reg",
            Self::RegressionScale => "regscale",
        })
    }
}

/// Equivariant estimators of β. The scale estimate is always the root mean
/// squared residual about the fitted β̂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    LeastSquares,
    /// Sample median; location model only.
    Median,
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" | "mean" | "least_squares" => Ok(Self::LeastSquares),
            "median" => Ok(Self::Median),
            _ => Err(Error::Parse(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimator: Estimator,
    pub beta_hat: DVector<f64>,
    /// √(n⁻¹ Σ Ã_i²).
    pub sigma_hat: f64,
    /// Ã_i = Y_i − x_iᵀβ̂.
    pub residuals_raw: DVector<f64>,
    /// A_i = Ã_i / σ̂; `None` for a perfect fit.
    pub residuals_studentized: Option<DVector<f64>>,
}

impl FitResult {
    /// Ã for the regression model, A for the regression-scale model.
    pub fn ancillary(&self, kind: ModelKind) -> Result<DVector<f64>> {
        match kind {
            ModelKind::Regression => Ok(self.residuals_raw.clone()),
            ModelKind::RegressionScale => self
                .residuals_studentized
                .clone()
                .ok_or(Error::DegenerateFit),
        }
    }

    /// Scale that converts the pivot back to β: 1 for U, σ̂ for T.
    pub fn pivot_scale(&self, kind: ModelKind) -> f64 {
        match kind {
            ModelKind::Regression => 1.0,
            ModelKind::RegressionScale => self.sigma_hat,
        }
    }
}

pub fn ancillary(fit: &FitResult, kind: ModelKind) -> Result<DVector<f64>> {
    fit.ancillary(kind)
}

/// Solves min ‖y − Xβ‖ by Householder QR of X.
pub fn least_squares_beta(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    let r = qr.r();
    check_r_diagonal(&r)?;
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)
}

fn check_r_diagonal(r: &DMatrix<f64>) -> Result<()> {
    let d: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    if max == 0.0 || d.iter().any(|&v| v <= 1e-10 * max) {
        return Err(Error::SingularDesign);
    }
    Ok(())
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// β̂ only, for the given estimator.
pub fn estimate_beta(estimator: Estimator, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    match estimator {
        Estimator::LeastSquares => least_squares_beta(x, y),
        Estimator::Median => {
            if x.ncols() != 1 || x.iter().any(|&v| v != 1.0) {
                return Err(Error::InvalidArgument(
                    "median estimator requires the location model".into(),
                ));
            }
            Ok(DVector::from_element(1, median_of(y.as_slice())))
        }
    }
}

pub fn fit(data: &Dataset, estimator: Estimator, kind: ModelKind) -> Result<FitResult> {
    let beta_hat = estimate_beta(estimator, data.x(), data.y())?;
    let residuals_raw = data.y() - data.x() * &beta_hat;
    let sigma_hat = (residuals_raw.norm_squared() / data.n() as f64).sqrt();
    // a perfect fit relative to the data magnitude
    let degenerate = sigma_hat <= 1e-13 * (data.y().amax() + 1e-300);
    if degenerate && kind == ModelKind::RegressionScale {
        return Err(Error::DegenerateFit);
    }
    let residuals_studentized = (!degenerate).then(|| &residuals_raw / sigma_hat);
    Ok(FitResult {
        estimator,
        beta_hat,
        sigma_hat,
        residuals_raw,
        residuals_studentized,
    })
}

pub fn fit_least_squares(data: &Dataset, kind: ModelKind) -> Result<FitResult> {
    fit(data, Estimator::LeastSquares, kind)
}

/// Refits many responses on one design. The least-squares projector
/// `(XᵀX)⁻¹Xᵀ` is factored once.
#[derive(Debug, Clone)]
pub struct Refitter {
    estimator: Estimator,
    x: DMatrix<f64>,
    projector: Option<DMatrix<f64>>,
}

impl Refitter {
    pub fn new(estimator: Estimator, x: &DMatrix<f64>) -> Result<Self> {
        let projector = match estimator {
            Estimator::LeastSquares => {
                let qr = x.clone().qr();
                let r = qr.r();
                check_r_diagonal(&r)?;
                let qt = qr.q().transpose();
                Some(r.solve_upper_triangular(&qt).ok_or(Error::SingularDesign)?)
            }
            Estimator::Median => {
                estimate_beta(estimator, x, &DVector::zeros(x.nrows()))?;
                None
            }
        };
        Ok(Self {
            estimator,
            x: x.clone(),
            projector,
        })
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn beta(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.projector {
            Some(p) => p * y,
            None => DVector::from_element(1, median_of(y.as_slice())),
        }
    }

    /// (β̂, σ̂) with σ̂ the root mean squared residual.
    pub fn beta_sigma(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let b = self.beta(y);
        let r = y - &self.x * &b;
        let s = (r.norm_squared() / y.len() as f64).sqrt();
        (b, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Constant,
    Mixed,
}

fn trend(values: &[f64]) -> Trend {
    let tol = 1e-12;
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if diffs.iter().all(|d| d.abs() <= tol * scale) {
        Trend::Constant
    } else if diffs.iter().all(|&d| d >= -tol * scale) {
        Trend::Increasing
    } else if diffs.iter().all(|&d| d <= tol * scale) {
        Trend::Decreasing
    } else {
        Trend::Mixed
    }
}

/// Design diagnostics for one design.
#[derive(Debug, Clone, Serialize)]
pub struct DesignDiagnostics {
    pub n: usize,
    pub p: usize,
    /// Smallest eigenvalue of n⁻¹XᵀX.
    pub min_eigenvalue: f64,
    /// max_i x_iᵀ(XᵀX)⁻¹x_i.
    pub max_leverage: f64,
    /// n⁻¹ Σ (x_iᵀx_i)^{1+η}.
    pub moment: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub eta: f64,
    pub designs: Vec<DesignDiagnostics>,
    pub min_eigenvalue_trend: Trend,
    pub max_leverage_trend: Trend,
    pub moment_trend: Trend,
}

/// Leverages x_iᵀ(XᵀX)⁻¹x_i, as squared row norms of the thin Q factor.
pub fn leverages(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    check_r_diagonal(&qr.r())?;
    let q = qr.q();
    Ok(DVector::from_iterator(
        q.nrows(),
        q.row_iter().map(|r| r.norm_squared()),
    ))
}

pub fn design_diagnostics(x: &DMatrix<f64>, eta: f64) -> Result<DesignDiagnostics> {
    let (n, p) = x.shape();
    let gram = x.transpose() * x / n as f64;
    let eig = SymmetricEigen::new(gram);
    let max_eig = eig.eigenvalues.amax();
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 1e-12 * max_eig) {
        return Err(Error::SingularDesign);
    }
    let lev = leverages(x)?;
    let moment = x
        .row_iter()
        .map(|r| r.norm_squared().powf(1.0 + eta))
        .sum::<f64>()
        / n as f64;
    Ok(DesignDiagnostics {
        n,
        p,
        min_eigenvalue: min_eig,
        max_leverage: lev.max(),
        moment,
    })
}

/// Checks of positive-definiteness, maximal leverage and the (1+η) moment of
/// ‖x_i‖² across a sequence of designs, with monotone-trend flags.
pub fn check_design_conditions(designs: &[Dataset], eta: f64) -> Result<ConditionReport> {
    if designs.is_empty() {
        return Err(Error::InvalidArgument("no designs supplied".into()));
    }
    let diags = designs
        .iter()
        .map(|d| design_diagnostics(d.x(), eta))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&DesignDiagnostics) -> f64| diags.iter().map(f).collect::<Vec<_>>();
    Ok(ConditionReport {
        eta,
        min_eigenvalue_trend: trend(&col(|d| d.min_eigenvalue)),
        max_leverage_trend: trend(&col(|d| d.max_leverage)),
        moment_trend: trend(&col(|d| d.moment)),
        designs: diags,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub beta_violation: f64,
    pub sigma_violation: f64,
    pub max_violation: f64,
    pub within_tolerance: bool,
}

/// Refits on `Xc + dY` and measures the relative departure from
/// β̂ = c + dβ̂(Y), σ̂ = |d|σ̂(Y).
pub fn equivariance_check(
    estimator: Estimator,
    data: &Dataset,
    c: &DVector<f64>,
    d: f64,
) -> Result<EquivarianceReport> {
    if d == 0.0 {
        return Err(Error::InvalidArgument("d must be nonzero".into()));
    }
    let base = fit(data, estimator, ModelKind::Regression)?;
    let y2 = data.x() * c + data.y() * d;
    let moved = fit(&data.with_response(y2)?, estimator, ModelKind::Regression)?;
    let expected = c + &base.beta_hat * d;
    let beta_violation = (&moved.beta_hat - &expected)
        .iter()
        .zip(expected.iter())
        .map(|(e, v)| e.abs() / v.abs().max(1.0))
        .fold(0.0, f64::max);
    let s_expected = d.abs() * base.sigma_hat;
    let sigma_violation = (moved.sigma_hat - s_expected).abs() / s_expected.max(1.0);
    let max_violation = beta_violation.max(sigma_violation);
    Ok(EquivarianceReport {
        beta_violation,
        sigma_violation,
        max_violation,
        within_tolerance: max_violation <= 1e-9,
    })
}
