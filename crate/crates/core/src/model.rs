//! Conjugate Gaussian linear arm models.
//!
//! Each arm carries a Gaussian belief `β ~ N(mean, covariance)` over its
//! reward coefficients, with rewards `y = xᵀβ + η`, `η ~ N(0, σ²)` and σ
//! known. Two update routes are provided and kept independent:
//!
//! * [`ArmBelief::posterior_update`] works in precision form over a batch,
//!   `Λ = Σ₀⁻¹ + XᵀX/σ²`, `m = Λ⁻¹(Σ₀⁻¹β₀ + Xᵀy/σ²)`;
//! * [`ArmBelief::observe`] applies a single Sherman–Morrison rank-one step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, RcbError, Result};

/// One (covariate, reward) pair for a single arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: DVector<f64>,
    pub reward: f64,
}

impl Observation {
    pub fn new(x: DVector<f64>, reward: f64) -> Self {
        Self { x, reward }
    }
}

/// A logged `(x_t, a_t, y_t)` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub x: DVector<f64>,
    pub arm: usize,
    pub reward: f64,
}

/// Gaussian belief over one arm's coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmBelief {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    noise_sigma: f64,
}

impl ArmBelief {
    /// Validates shape, positive definiteness and `σ > 0`. The covariance
    /// is stored in exactly symmetric form.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, noise_sigma: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(invalid("mean", "dimension must be at least 1"));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(RcbError::DimensionMismatch {
                expected: d,
                actual: covariance.nrows().max(covariance.ncols()),
            });
        }
        if !(noise_sigma > 0.0 && noise_sigma.is_finite()) {
            return Err(invalid("noise_sigma", "must be positive and finite"));
        }
        let covariance = symmetrize(covariance);
        if Cholesky::new(covariance.clone()).is_none() {
            return Err(RcbError::NotPositiveDefinite);
        }
        Ok(Self {
            mean,
            covariance,
            noise_sigma,
        })
    }

    /// `N(mean, variance · I)`.
    pub fn isotropic(mean: DVector<f64>, variance: f64, noise_sigma: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance, noise_sigma)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(RcbError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Batch conjugate update. Returns a clone of `self` when `observations`
    /// is empty.
    pub fn posterior_update(&self, observations: &[Observation]) -> Result<ArmBelief> {
        if observations.is_empty() {
            return Ok(self.clone());
        }
        let mut stats = SufficientStats::new(self.dim());
        for obs in observations {
            stats.push(&obs.x, obs.reward)?;
        }
        stats.posterior(self)
    }

    /// Rank-one update with a single observation.
    pub fn observe(&self, x: &DVector<f64>, reward: f64) -> Result<ArmBelief> {
        self.check_dim(x)?;
        let s = &self.covariance * x;
        let denom = self.noise_sigma * self.noise_sigma + x.dot(&s);
        let covariance = symmetrize(&self.covariance - (&s * s.transpose()) / denom);
        let residual = reward - x.dot(&self.mean);
        let mean = &self.mean + &s * (residual / denom);
        Ok(Self {
            mean,
            covariance,
            noise_sigma: self.noise_sigma,
        })
    }

    /// `xᵀ mean`.
    pub fn predict_mean(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.mean.dot(x))
    }

    /// Copy of this belief with covariance multiplied by `schedule.scale(t)`.
    pub fn inflate(&self, schedule: &InflationSchedule, t: u64) -> ArmBelief {
        let scale = schedule.scale(t);
        if scale == 1.0 {
            return self.clone();
        }
        Self {
            mean: self.mean.clone(),
            covariance: &self.covariance * scale,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// Running `XᵀX`, `Xᵀy` for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    count: usize,
}

impl SufficientStats {
    pub fn new(d: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(d, d),
            xty: DVector::zeros(d),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &DVector<f64>, reward: f64) -> Result<()> {
        if x.len() != self.xty.len() {
            return Err(RcbError::DimensionMismatch {
                expected: self.xty.len(),
                actual: x.len(),
            });
        }
        self.xtx.ger(1.0, x, x, 1.0);
        self.xty.axpy(reward, x, 1.0);
        self.count += 1;
        Ok(())
    }

    /// Posterior of `prior` after conditioning on the accumulated data.
    pub fn posterior(&self, prior: &ArmBelief) -> Result<ArmBelief> {
        if self.xty.len() != prior.dim() {
            return Err(RcbError::DimensionMismatch {
                expected: prior.dim(),
                actual: self.xty.len(),
            });
        }
        if self.count == 0 {
            return Ok(prior.clone());
        }
        let prior_precision = spd_inverse(&prior.covariance)?;
        let inv_var = 1.0 / (prior.noise_sigma * prior.noise_sigma);
        let precision = symmetrize(&prior_precision + &self.xtx * inv_var);
        let covariance = spd_inverse(&precision)?;
        let shift = &prior_precision * &prior.mean + &self.xty * inv_var;
        let mean = &covariance * shift;
        Ok(ArmBelief {
            mean,
            covariance,
            noise_sigma: prior.noise_sigma,
        })
    }

    /// Posterior mean only, given a precomputed prior precision `Σ₀⁻¹`
    /// (possibly already divided by an inflation factor). One Cholesky solve.
    pub fn posterior_mean_from_precision(
        &self,
        prior_precision: &DMatrix<f64>,
        prior_mean: &DVector<f64>,
        noise_sigma: f64,
    ) -> Result<DVector<f64>> {
        let inv_var = 1.0 / (noise_sigma * noise_sigma);
        let precision = symmetrize(prior_precision + &self.xtx * inv_var);
        let shift = prior_precision * prior_mean + &self.xty * inv_var;
        let chol = Cholesky::new(precision).ok_or(RcbError::NotPositiveDefinite)?;
        Ok(chol.solve(&shift))
    }
}

/// `Σ⁻¹` for a symmetric positive-definite matrix.
pub fn precision_of(covariance: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_inverse(covariance)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol: Cholesky<f64, Dyn> =
        Cholesky::new(m.clone()).ok_or(RcbError::NotPositiveDefinite)?;
    Ok(symmetrize(chol.inverse()))
}

/// Smallest eigenvalue of the empirical second-moment matrix `mean(x xᵀ)`.
pub fn empirical_phi0<'a>(xs: impl IntoIterator<Item = &'a DVector<f64>>) -> Result<f64> {
    let mut acc: Option<DMatrix<f64>> = None;
    let mut n = 0usize;
    for x in xs {
        let m = acc.get_or_insert_with(|| DMatrix::zeros(x.len(), x.len()));
        if m.nrows() != x.len() {
            return Err(RcbError::DimensionMismatch {
                expected: m.nrows(),
                actual: x.len(),
            });
        }
        m.ger(1.0, x, x, 1.0);
        n += 1;
    }
    let m = acc.ok_or(RcbError::Empty("covariates"))? / n as f64;
    let eig = SymmetricEigen::new(symmetrize(m));
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflationKind {
    Linear,
    Sqrt,
    Log,
    None,
}

/// Time-varying multiplier on the prior covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationSchedule {
    pub kind: InflationKind,
    pub rate: f64,
    /// Base prior eigenvalue floor `λ_{i,0}`.
    pub base_lambda: f64,
}

impl InflationSchedule {
    pub fn none(base_lambda: f64) -> Self {
        Self {
            kind: InflationKind::None,
            rate: 0.0,
            base_lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(invalid("inflation.rate", "must be nonnegative and finite"));
        }
        if !(self.base_lambda > 0.0 && self.base_lambda.is_finite()) {
            return Err(invalid("inflation.base_lambda", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn scale(&self, t: u64) -> f64 {
        let t = t as f64;
        match self.kind {
            InflationKind::Linear => 1.0 + self.rate * t,
            InflationKind::Sqrt => 1.0 + self.rate * t.sqrt(),
            InflationKind::Log => 1.0 + self.rate * t.ln_1p(),
            InflationKind::None => 1.0,
        }
    }

    /// Real-valued time variant of [`scale`](Self::scale).
    pub fn scale_at(&self, t: f64) -> f64 {
        match self.kind {
            InflationKind::Linear => 1.0 + self.rate * t,
            InflationKind::Sqrt => 1.0 + self.rate * t.sqrt(),
            InflationKind::Log => 1.0 + self.rate * t.ln_1p(),
            InflationKind::None => 1.0,
        }
    }

    /// `λ_{i,t} = λ_{i,0} · scale(t)`.
    pub fn lambda_at(&self, t: u64) -> f64 {
        self.base_lambda * self.scale(t)
    }
}

/// Constants of the ridge prediction-error bound `c₃σ²d / (φ₀ n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MspeConfig {
    pub c3: f64,
    pub phi0: f64,
    pub d: usize,
    pub noise_sigma: f64,
}

impl MspeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c3 > 0.0) {
            return Err(invalid("c3", "must be positive"));
        }
        if !(self.phi0 > 0.0) {
            return Err(invalid("phi0", "must be positive"));
        }
        if self.d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn bound(&self, n: usize) -> Result<f64> {
        mspe_bound(self, n)
    }
}

pub fn mspe_bound(cfg: &MspeConfig, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "sample size must be at least 1"));
    }
    cfg.validate()?;
    let s2 = cfg.noise_sigma * cfg.noise_sigma;
    Ok(cfg.c3 * s2 * cfg.d as f64 / (cfg.phi0 * n as f64))
}

/// Where the exploitation stage takes its MSPE from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MspeEstimator {
    #[default]
    Analytic,
    CrossValidated { folds: usize, delta: f64 },
}

/// Smallest MSPE the cross-validated estimator will report.
pub const CV_MSPE_FLOOR: f64 = 1e-8;

/// K-fold estimate of `E[(μ̂ − μ)²]` on logged tuples: the held-out squared
/// error of per-arm posterior means, minus σ², floored at [`CV_MSPE_FLOOR`].
pub fn cross_validated_mspe(
    priors: &[ArmBelief],
    data: &[Interaction],
    folds: usize,
) -> Result<f64> {
    if folds < 2 {
        return Err(invalid("folds", "need at least 2 folds"));
    }
    if data.len() < folds {
        return Err(RcbError::Empty("cross-validation needs at least one row per fold"));
    }
    let sigma = priors.first().ok_or(RcbError::Empty("priors"))?.noise_sigma;
    let mut sq_err = 0.0;
    for fold in 0..folds {
        let train: Vec<Interaction> = data
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds != fold)
            .map(|(_, r)| r.clone())
            .collect();
        let fitted = fit_offline(priors, &train)?;
        for (_, row) in data.iter().enumerate().filter(|(i, _)| i % folds == fold) {
            let pred = fitted[row.arm].predict_mean(&row.x)?;
            sq_err += (pred - row.reward).powi(2);
        }
    }
    let mse = sq_err / data.len() as f64;
    Ok((mse - sigma * sigma).max(CV_MSPE_FLOOR))
}

/// Per-arm posterior update using each arm's own rows of `data`.
pub fn fit_offline(priors: &[ArmBelief], data: &[Interaction]) -> Result<Vec<ArmBelief>> {
    let k = priors.len();
    let d = priors.first().map(ArmBelief::dim).unwrap_or(0);
    let mut stats: Vec<SufficientStats> = (0..k).map(|_| SufficientStats::new(d)).collect();
    for row in data {
        let s = stats
            .get_mut(row.arm)
            .ok_or(RcbError::ArmOutOfRange { arm: row.arm, arms: k })?;
        s.push(&row.x, row.reward)?;
    }
    priors
        .iter()
        .zip(&stats)
        .map(|(prior, s)| s.posterior(prior))
        .collect()
}
