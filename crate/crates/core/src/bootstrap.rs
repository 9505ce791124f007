//! Unconditional pivot laws: residual bootstrap and exact simulation from a
//! known error density.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::conddist::DRAW_BATCH;
use crate::distributions::ErrorDensity;
use crate::error::{Error, Result};
use crate::model::{Estimator, FitResult, ModelKind, Refitter};
use crate::npi::Pivot;
use crate::rngsim::{par_batched, SeedTree, Stream};

/// Attempts per bootstrap draw before a resample with σ̂* = 0 is reported.
const MAX_DEGENERATE_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ResidualBootstrap,
    ExactUnconditional,
    ConditionalPi,
    ConditionalNpi,
}

/// `B × p` pivot draws, one row per draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PivotDraws {
    pub pivot: Pivot,
    pub draws: DMatrix<f64>,
    pub provenance: Provenance,
    pub seed: SeedTree,
}

impl PivotDraws {
    pub fn new(pivot: Pivot, draws: DMatrix<f64>, provenance: Provenance, seed: SeedTree) -> Result<Self> {
        if draws.nrows() == 0 || draws.ncols() == 0 {
            return Err(Error::InvalidArgument("pivot draws must be nonempty".into()));
        }
        if draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pivot draw".into()));
        }
        Ok(Self {
            pivot,
            draws,
            provenance,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn p(&self) -> usize {
        self.draws.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j).iter().copied().collect()
    }
}

fn pivot_for(kind: ModelKind) -> Pivot {
    match kind {
        ModelKind::Regression => Pivot::U,
        ModelKind::RegressionScale => Pivot::T,
    }
}

fn rows_to_matrix(rows: &[DVector<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// Uniform law on the 2n signed residuals ±r_i.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrizedEmpirical {
    atoms: Vec<f64>,
}

impl SymmetrizedEmpirical {
    pub fn new(residuals: &[f64]) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::InvalidArgument("no residuals to resample".into()));
        }
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidData("non-finite residual".into()));
        }
        let mut atoms: Vec<f64> = residuals.iter().flat_map(|&r| [r, -r]).collect();
        atoms.sort_by(f64::total_cmp);
        Ok(Self { atoms })
    }

    /// Sorted atoms, each with mass 1/(2n).
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Zero up to rounding: atoms come in ± pairs.
    pub fn mean(&self) -> f64 {
        self.atoms.iter().sum::<f64>() / self.atoms.len() as f64
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.atoms.partition_point(|&a| a <= z) as f64 / self.atoms.len() as f64
    }

    pub fn sample_one(&self, stream: &mut Stream) -> f64 {
        self.atoms[stream.index(self.atoms.len())]
    }

    pub fn sample(&self, stream: &mut Stream, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(stream)).collect()
    }
}

pub fn symmetrized_empirical(residuals: &[f64]) -> Result<SymmetrizedEmpirical> {
    SymmetrizedEmpirical::new(residuals)
}

/// Resamples `Y* = Xβ̂ + σ̂ε*` (regression-scale) or `Y* = Xβ̂ + ε*`
/// (regression) with ε* drawn from the symmetrized residuals, and returns
/// the draws of (β̂* − β̂)/σ̂* or β̂* − β̂.
pub fn residual_bootstrap(
    fit: &FitResult,
    x: &DMatrix<f64>,
    b: usize,
    seed: &SeedTree,
    kind: ModelKind,
) -> Result<PivotDraws> {
    if b == 0 {
        return Err(Error::InvalidArgument("need B ≥ 1 bootstrap draws".into()));
    }
    if x.nrows() != fit.residuals_raw.len() || x.ncols() != fit.beta_hat.len() {
        return Err(Error::InvalidArgument("design does not match the fit".into()));
    }
    let anc = fit.ancillary(kind)?;
    let emp = SymmetrizedEmpirical::new(anc.as_slice())?;
    let refit = Refitter::new(fit.estimator, x)?;
    let n = x.nrows();
    let center = x * &fit.beta_hat;
    let scale = fit.pivot_scale(kind);
    let rows = par_batched(b, DRAW_BATCH, seed, "bootstrap-batch", |st, _| {
        for _ in 0..MAX_DEGENERATE_REDRAWS {
            let eps = DVector::from_vec(emp.sample(st, n));
            let y = &center + eps * scale;
            let (bs, ss) = refit.beta_sigma(&y);
            let u = bs - &fit.beta_hat;
            match kind {
                ModelKind::Regression => return Ok(u),
                ModelKind::RegressionScale => {
                    if ss > 1e-13 * scale {
                        return Ok(u / ss);
                    }
                }
            }
        }
        Err(Error::DegenerateFit)
    })?;
    PivotDraws::new(
        pivot_for(kind),
        rows_to_matrix(&rows, x.ncols()),
        Provenance::ResidualBootstrap,
        seed.clone(),
    )
}

/// Simulates `Y = Xβ₀ + σ₀ε` with ε from `density` and returns the pivot
/// draws. Uses β₀ = 0, σ₀ = 1.
pub fn exact_unconditional(
    density: &dyn ErrorDensity,
    x: &DMatrix<f64>,
    estimator: Estimator,
    b: usize,
    seed: &SeedTree,
    kind: ModelKind,
) -> Result<PivotDraws> {
    let beta0 = DVector::zeros(x.ncols());
    exact_unconditional_at(density, x, estimator, b, seed, kind, &beta0, 1.0)
}

/// As [`exact_unconditional`] at an explicit (β₀, σ₀). σ₀ multiplies the
/// errors only for the regression-scale model.
#[allow(clippy::too_many_arguments)]
pub fn exact_unconditional_at(
    density: &dyn ErrorDensity,
    x: &DMatrix<f64>,
    estimator: Estimator,
    b: usize,
    seed: &SeedTree,
    kind: ModelKind,
    beta0: &DVector<f64>,
    sigma0: f64,
) -> Result<PivotDraws> {
    if b == 0 {
        return Err(Error::InvalidArgument("need B ≥ 1 draws".into()));
    }
    if beta0.len() != x.ncols() {
        return Err(Error::InvalidArgument("β₀ has the wrong dimension".into()));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidArgument(format!("σ₀ must be positive, got {sigma0}")));
    }
    let refit = Refitter::new(estimator, x)?;
    let n = x.nrows();
    let mean = x * beta0;
    let noise = match kind {
        ModelKind::Regression => 1.0,
        ModelKind::RegressionScale => sigma0,
    };
    let rows = par_batched(b, DRAW_BATCH, seed, "unconditional-batch", |st, _| {
        for _ in 0..MAX_DEGENERATE_REDRAWS {
            let eps = DVector::from_vec(density.sample(st, n));
            let y = &mean + eps * noise;
            let (bs, ss) = refit.beta_sigma(&y);
            let u = bs - beta0;
            match kind {
                ModelKind::Regression => return Ok(u),
                ModelKind::RegressionScale => {
                    if ss > 0.0 {
                        return Ok(u / ss);
                    }
                }
            }
        }
        Err(Error::DegenerateFit)
    })?;
    PivotDraws::new(
        pivot_for(kind),
        rows_to_matrix(&rows, x.ncols()),
        Provenance::ExactUnconditional,
        seed.clone(),
    )
}
