//! Cold-start stage: most-popular-arm collection (MPASC) followed by
//! rest-arm collection (RASC), plus the formulas that size the stage.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, RcbError, Result};
use crate::model::{ArmBelief, Observation};
use crate::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColdStartConfig {
    pub k: usize,
    pub d: usize,
    pub epsilon: f64,
    pub tau_prior: f64,
    pub rho_prior: f64,
    pub tau_post: f64,
    pub rho_post: f64,
    pub phi0: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub n_override: Option<usize>,
}

impl ColdStartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon", "epsilon must lie in [0,1)"));
        }
        if !(self.tau_prior > 0.0) {
            return Err(invalid("tau_prior", "must be positive"));
        }
        if !(self.rho_prior > 0.0 && self.rho_prior <= 1.0) {
            return Err(invalid("rho_prior", "must lie in (0,1]"));
        }
        if !(self.tau_post > 0.0) {
            return Err(invalid("tau_post", "must be positive"));
        }
        if !(self.rho_post > 0.0 && self.rho_post <= 1.0) {
            return Err(invalid("rho_post", "must lie in (0,1]"));
        }
        if !(self.phi0 > 0.0) {
            return Err(invalid("phi0", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma", "must be nonnegative"));
        }
        if self.n_override == Some(0) {
            return Err(invalid("n_override", "must be at least 1"));
        }
        Ok(())
    }

    /// Per-arm sample requirement from the sizing formula, ignoring any override.
    pub fn theorem_sample_size(&self) -> usize {
        let k = self.k as f64;
        let num = (self.noise_sigma * self.noise_sigma * self.d as f64 + 1.0) * k * k * k;
        let den = self.phi0 * (self.tau_post + self.epsilon).powi(2);
        ceil_tolerant(num / den).max(1)
    }
}

/// Ceiling that ignores floating-point noise within 1e-9 relative of an integer.
fn ceil_tolerant(v: f64) -> usize {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as usize
    } else {
        v.ceil() as usize
    }
}

/// `⌈(σ²d+1)K³ / (φ₀(τ_{P*}+ε)²)⌉`, or the override when set.
pub fn required_sample_size(cfg: &ColdStartConfig) -> usize {
    cfg.n_override.unwrap_or_else(|| cfg.theorem_sample_size())
}

/// `1 + (1−ε)/(τ_{P₀}ρ_{P₀}+ε)`.
pub fn required_exploration_rate(cfg: &ColdStartConfig) -> f64 {
    1.0 + (1.0 - cfg.epsilon) / (cfg.tau_prior * cfg.rho_prior + cfg.epsilon)
}

/// First exploitation epoch `⌈2 + log₂ n⌉`, computed in integer arithmetic.
pub fn m0_epoch(n: usize) -> usize {
    assert!(n >= 1, "m0_epoch needs n >= 1");
    let ceil_log2 = (usize::BITS - (n - 1).leading_zeros()) as usize;
    2 + ceil_log2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "MPASC")]
    Mpasc,
    #[serde(rename = "RASC")]
    Rasc,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Mpasc => "MPASC",
            Phase::Rasc => "RASC",
            Phase::Done => "Done",
        }
    }
}

/// Which RASC branch produced a recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Promoted,
    Organic,
}

/// Pull counts, completed set and per-arm samples of the cold-start stage.
///
/// Completed arms also carry their posterior given their own samples, which
/// is what the organic branch ranks them by.
#[derive(Debug, Clone)]
pub struct ColdStartState {
    n_required: usize,
    priors: Vec<ArmBelief>,
    pulls: Vec<usize>,
    completed: Vec<bool>,
    samples: Vec<Vec<Observation>>,
    posteriors: Vec<Option<ArmBelief>>,
    phase: Phase,
}

impl ColdStartState {
    pub fn new(n_required: usize, priors: Vec<ArmBelief>) -> Result<Self> {
        if n_required == 0 {
            return Err(invalid("n_required", "must be at least 1"));
        }
        if priors.is_empty() {
            return Err(RcbError::Empty("priors"));
        }
        let d = priors[0].dim();
        if let Some(p) = priors.iter().find(|p| p.dim() != d) {
            return Err(RcbError::DimensionMismatch { expected: d, actual: p.dim() });
        }
        let k = priors.len();
        Ok(Self {
            n_required,
            priors,
            pulls: vec![0; k],
            completed: vec![false; k],
            samples: vec![Vec::new(); k],
            posteriors: vec![None; k],
            phase: Phase::Mpasc,
        })
    }

    pub fn n_required(&self) -> usize {
        self.n_required
    }

    pub fn arms(&self) -> usize {
        self.priors.len()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pulls(&self) -> &[usize] {
        &self.pulls
    }

    pub fn completed(&self) -> &[bool] {
        &self.completed
    }

    pub fn completed_arms(&self) -> Vec<usize> {
        (0..self.arms()).filter(|&i| self.completed[i]).collect()
    }

    pub fn samples(&self) -> &[Vec<Observation>] {
        &self.samples
    }

    pub fn priors(&self) -> &[ArmBelief] {
        &self.priors
    }

    /// Prior mean rewards `xᵀβ_{i,0}`.
    pub fn prior_means(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.priors.iter().map(|p| p.predict_mean(x)).collect()
    }

    /// Expected rewards conditional on the completed arms' data: posterior
    /// means for completed arms, prior means for the rest.
    pub fn organic_means(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.priors
            .iter()
            .zip(&self.posteriors)
            .map(|(prior, post)| post.as_ref().unwrap_or(prior).predict_mean(x))
            .collect()
    }

    /// MPASC recommendation: prior-mean argmax.
    pub fn recommend_mpasc(&self, x: &DVector<f64>) -> Result<usize> {
        if self.phase != Phase::Mpasc {
            return Err(RcbError::WrongPhase { op: "mpasc", phase: self.phase.name() });
        }
        Ok(argmax(&self.prior_means(x)?))
    }

    /// RASC recommendation for the given coin: promoted arm (`promote`) or
    /// organic arm.
    pub fn recommend_rasc(&self, x: &DVector<f64>, promote: bool) -> Result<(usize, Branch)> {
        if self.phase != Phase::Rasc {
            return Err(RcbError::WrongPhase { op: "rasc", phase: self.phase.name() });
        }
        if promote {
            let means = self.prior_means(x)?;
            let arm = (0..self.arms())
                .filter(|&i| !self.completed[i])
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if means[b] >= means[i] => Some(b),
                    _ => Some(i),
                })
                .expect("RASC with every arm completed");
            Ok((arm, Branch::Promoted))
        } else {
            Ok((argmax(&self.organic_means(x)?), Branch::Organic))
        }
    }

    /// Record a collected sample for `arm`, completing it at `n_required` pulls.
    pub fn record(&mut self, arm: usize, x: DVector<f64>, reward: f64) -> Result<()> {
        if self.phase == Phase::Done {
            return Err(RcbError::WrongPhase { op: "record", phase: self.phase.name() });
        }
        let k = self.arms();
        if arm >= k {
            return Err(RcbError::ArmOutOfRange { arm, arms: k });
        }
        if x.len() != self.priors[arm].dim() {
            return Err(RcbError::DimensionMismatch {
                expected: self.priors[arm].dim(),
                actual: x.len(),
            });
        }
        self.samples[arm].push(Observation::new(x, reward));
        self.pulls[arm] += 1;
        if !self.completed[arm] && self.pulls[arm] >= self.n_required {
            self.completed[arm] = true;
            self.posteriors[arm] = Some(self.priors[arm].posterior_update(&self.samples[arm])?);
        }
        self.phase = if self.completed.iter().all(|&c| c) {
            Phase::Done
        } else if self.completed.iter().any(|&c| c) {
            Phase::Rasc
        } else {
            Phase::Mpasc
        };
        Ok(())
    }

    /// One MPASC round. `reward_source` plays the recommended arm and returns
    /// `None` when the recommendation was not followed, in which case nothing
    /// is recorded.
    pub fn mpasc_step<F>(&mut self, x: &DVector<f64>, mut reward_source: F) -> Result<usize>
    where
        F: FnMut(usize) -> Option<f64>,
    {
        let arm = self.recommend_mpasc(x)?;
        if let Some(y) = reward_source(arm) {
            self.record(arm, x.clone(), y)?;
        }
        Ok(arm)
    }

    /// One RASC round. Only the promoted branch records its sample.
    pub fn rasc_step<F>(
        &mut self,
        x: &DVector<f64>,
        promote: bool,
        mut reward_source: F,
    ) -> Result<(usize, Branch)>
    where
        F: FnMut(usize) -> Option<f64>,
    {
        let (arm, branch) = self.recommend_rasc(x, promote)?;
        let observed = reward_source(arm);
        if let (Branch::Promoted, Some(y)) = (branch, observed) {
            self.record(arm, x.clone(), y)?;
        }
        Ok((arm, branch))
    }

    /// Every collected sample as `(x, arm, y)` tuples, arm-major.
    pub fn interactions(&self) -> Vec<crate::model::Interaction> {
        self.samples
            .iter()
            .enumerate()
            .flat_map(|(arm, s)| {
                s.iter().map(move |o| crate::model::Interaction {
                    x: o.x.clone(),
                    arm,
                    reward: o.reward,
                })
            })
            .collect()
    }
}
