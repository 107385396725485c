//! Epoch-doubling exploitation with inverse-gap-weighted action sampling.
//!
//! Epoch `m` covers rounds `[2^{m-1}, 2^m)`. At the start of each epoch the
//! per-arm models are refitted from the shared prior on the previous epoch's
//! tuples and the spread `γ_m = 4√(K/MSPE)` is fixed; both stay frozen for
//! the whole epoch.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::argmax;
use crate::error::{invalid, Result};
use crate::model::{cross_validated_mspe, fit_offline, ArmBelief, Interaction, MspeConfig, MspeEstimator};

/// Epoch containing round `t ≥ 1`: the `m` with `2^{m-1} ≤ t < 2^m`.
pub fn epoch_of(t: u64) -> usize {
    assert!(t >= 1, "rounds are numbered from 1");
    (u64::BITS - t.leading_zeros()) as usize
}

/// First round of epoch `m` (`τ_{m-1} = 2^{m-1}`).
pub fn epoch_start(m: usize) -> u64 {
    1u64 << (m - 1)
}

/// Last round of epoch `m`.
pub fn epoch_end(m: usize) -> u64 {
    (1u64 << m) - 1
}

/// Nominal number of training rounds behind epoch `m`: the length of epoch
/// `m-1`, `2^{m-2}`.
pub fn training_size(m: usize) -> usize {
    assert!(m >= 2, "training size is defined from epoch 2 onwards");
    1usize << (m - 2)
}

/// `γ = 4√(K / mspe)`.
pub fn spread_parameter(k: usize, mspe: f64) -> Result<f64> {
    if !(mspe > 0.0) || !mspe.is_finite() {
        return Err(invalid("mspe", "must be positive and finite"));
    }
    Ok(4.0 * (k as f64 / mspe).sqrt())
}

/// Sampling law over arms for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
    best_arm: usize,
}

impl ActionDistribution {
    /// Non-best arms get `1/(K + γ·gap_i)`; the best predicted arm takes the
    /// remaining mass.
    pub fn from_estimates(mu_hats: &[f64], gamma: f64) -> Self {
        assert!(!mu_hats.is_empty(), "need at least one arm");
        let k = mu_hats.len() as f64;
        let best_arm = argmax(mu_hats);
        let best = mu_hats[best_arm];
        let mut probs: Vec<f64> = mu_hats
            .iter()
            .map(|&mu| 1.0 / (k + gamma * (best - mu)))
            .collect();
        probs[best_arm] = 0.0;
        let rest: f64 = probs.iter().sum();
        probs[best_arm] = 1.0 - rest;
        Self { probs, best_arm }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    /// Inverse-CDF draw over ascending arm indices.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Epoch boundaries and the spread recorded for every epoch entered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochSchedule {
    pub m0: usize,
    pub gammas: BTreeMap<usize, f64>,
}

impl EpochSchedule {
    pub fn new(m0: usize) -> Self {
        Self { m0, gammas: BTreeMap::new() }
    }

    /// Rounds covered by epoch `m`.
    pub fn rounds(&self, m: usize) -> std::ops::RangeInclusive<u64> {
        epoch_start(m)..=epoch_end(m)
    }
}

/// Round-level hooks used by [`ExploitationStage::run_epoch`].
pub trait ExploitDriver {
    fn context(&mut self, t: u64) -> Result<DVector<f64>>;
    /// Uniform draw in `[0, 1)` used for action sampling.
    fn uniform(&mut self) -> f64;
    /// Present the recommendation; return the tuple to buffer for the next
    /// epoch's fit, if any.
    fn respond(
        &mut self,
        t: u64,
        x: &DVector<f64>,
        dist: &ActionDistribution,
        recommended: usize,
        gamma: f64,
    ) -> Result<Option<Interaction>>;
}

#[derive(Debug, Clone)]
pub struct ExploitationStage {
    priors: Vec<ArmBelief>,
    mspe: MspeConfig,
    estimator: MspeEstimator,
    cold_start_data: Vec<Interaction>,
    schedule: EpochSchedule,
    current: Option<usize>,
    first_epoch: Option<(usize, u64)>,
    beliefs: Vec<ArmBelief>,
    gamma: f64,
    buffer: Vec<Interaction>,
    fits: usize,
}

impl ExploitationStage {
    pub fn new(
        priors: Vec<ArmBelief>,
        m0: usize,
        mspe: MspeConfig,
        estimator: MspeEstimator,
        cold_start_data: Vec<Interaction>,
    ) -> Result<Self> {
        if priors.is_empty() {
            return Err(invalid("priors", "need at least one arm"));
        }
        if m0 < 2 {
            return Err(invalid("m0", "first exploitation epoch must be at least 2"));
        }
        mspe.validate()?;
        Ok(Self {
            beliefs: priors.clone(),
            priors,
            mspe,
            estimator,
            cold_start_data,
            schedule: EpochSchedule::new(m0),
            current: None,
            first_epoch: None,
            gamma: f64::NAN,
            buffer: Vec::new(),
            fits: 0,
        })
    }

    pub fn arms(&self) -> usize {
        self.priors.len()
    }

    pub fn schedule(&self) -> &EpochSchedule {
        &self.schedule
    }

    pub fn current_epoch(&self) -> Option<usize> {
        self.current
    }

    pub fn beliefs(&self) -> &[ArmBelief] {
        &self.beliefs
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of offline fits performed so far.
    pub fn fits(&self) -> usize {
        self.fits
    }

    /// Tuples collected in the current epoch.
    pub fn buffer(&self) -> &[Interaction] {
        &self.buffer
    }

    /// Enter the epoch containing `t` if not already in it, refitting once.
    pub fn prepare(&mut self, t: u64) -> Result<()> {
        let m = epoch_of(t).max(self.schedule.m0);
        if self.current == Some(m) {
            return Ok(());
        }
        let training = match self.first_epoch {
            None => {
                self.first_epoch = Some((m, t));
                self.cold_start_data.clone()
            }
            Some((first, start)) if first + 1 == m && start > epoch_start(first) + 1 => {
                // The first epoch was entered mid-way; its buffer alone is short.
                let mut data = self.cold_start_data.clone();
                data.append(&mut self.buffer);
                data
            }
            Some(_) => std::mem::take(&mut self.buffer),
        };
        self.buffer.clear();
        self.beliefs = fit_offline(&self.priors, &training)?;
        let mspe = match self.estimator {
            MspeEstimator::Analytic => self.mspe.bound(training_size(m))?,
            MspeEstimator::CrossValidated { folds, .. } => {
                cross_validated_mspe(&self.priors, &training, folds)?
            }
        };
        self.gamma = spread_parameter(self.arms(), mspe)?;
        self.schedule.gammas.insert(m, self.gamma);
        self.current = Some(m);
        self.fits += 1;
        Ok(())
    }

    /// `μ̂(x, i) = xᵀβ̂_i` under the frozen epoch models.
    pub fn estimates(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.beliefs.iter().map(|b| b.predict_mean(x)).collect()
    }

    pub fn distribution(&self, x: &DVector<f64>) -> Result<ActionDistribution> {
        Ok(ActionDistribution::from_estimates(&self.estimates(x)?, self.gamma))
    }

    pub fn record(&mut self, row: Interaction) {
        self.buffer.push(row);
    }

    /// Run rounds `t_range` (all within one epoch), refitting at entry.
    pub fn run_epoch<D: ExploitDriver>(
        &mut self,
        t_range: std::ops::RangeInclusive<u64>,
        driver: &mut D,
    ) -> Result<()> {
        let (lo, hi) = (*t_range.start(), *t_range.end());
        if lo > hi {
            return Ok(());
        }
        if epoch_of(lo).max(self.schedule.m0) != epoch_of(hi).max(self.schedule.m0) {
            return Err(invalid("t_range", "must lie within a single epoch"));
        }
        self.prepare(lo)?;
        for t in t_range {
            let x = driver.context(t)?;
            let dist = self.distribution(&x)?;
            let arm = dist.sample(driver.uniform());
            if let Some(row) = driver.respond(t, &x, &dist, arm, self.gamma)? {
                self.record(row);
            }
        }
        Ok(())
    }

    /// Run every round in `[start, end]`, splitting at epoch boundaries.
    pub fn run_until<D: ExploitDriver>(&mut self, start: u64, end: u64, driver: &mut D) -> Result<()> {
        let mut t = start;
        while t <= end {
            let m = epoch_of(t).max(self.schedule.m0);
            let stop = epoch_end(m).min(end);
            self.run_epoch(t..=stop, driver)?;
            t = stop + 1;
        }
        Ok(())
    }
}
