//! Myopic Bayesian users.
//!
//! A user holds the shared prior plus the outcomes of rounds in which the
//! recommendation was followed. They follow a recommendation when its
//! incentive gain (expected reward of the recommended arm minus the best
//! alternative, under their own belief) is at least `-ε`, and otherwise
//! play their own argmax.

use nalgebra::{DMatrix, DVector};

use crate::argmax;
use crate::error::{RcbError, Result};
use crate::model::{precision_of, ArmBelief, InflationSchedule, InflationKind, SufficientStats};

#[derive(Debug, Clone)]
pub struct UserBelief {
    priors: Vec<ArmBelief>,
    prior_precisions: Vec<DMatrix<f64>>,
    stats: Vec<SufficientStats>,
    /// Uninflated posteriors, kept current by rank-one updates.
    posteriors: Vec<ArmBelief>,
    inflation: InflationSchedule,
    informed: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserDecision {
    pub followed: bool,
    pub chosen: usize,
    pub gain: f64,
}

impl UserBelief {
    pub fn new(priors: Vec<ArmBelief>, inflation: InflationSchedule) -> Result<Self> {
        if priors.is_empty() {
            return Err(RcbError::Empty("priors"));
        }
        inflation.validate()?;
        let d = priors[0].dim();
        let prior_precisions = priors
            .iter()
            .map(|p| precision_of(p.covariance()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stats: (0..priors.len()).map(|_| SufficientStats::new(d)).collect(),
            posteriors: priors.clone(),
            informed: vec![true; priors.len()],
            prior_precisions,
            priors,
            inflation,
        })
    }

    pub fn arms(&self) -> usize {
        self.priors.len()
    }

    pub fn inflation(&self) -> &InflationSchedule {
        &self.inflation
    }

    /// Restrict which arms' followed data the user conditions on; the
    /// others are judged by their prior mean.
    pub fn set_informed(&mut self, informed: &[bool]) {
        assert_eq!(informed.len(), self.arms());
        self.informed.copy_from_slice(informed);
    }

    /// Number of followed samples held for each arm.
    pub fn sample_counts(&self) -> Vec<usize> {
        self.stats.iter().map(SufficientStats::count).collect()
    }

    /// Add the outcome of a followed round.
    pub fn observe(&mut self, arm: usize, x: &DVector<f64>, reward: f64) -> Result<()> {
        let k = self.arms();
        let stats = self.stats.get_mut(arm).ok_or(RcbError::ArmOutOfRange { arm, arms: k })?;
        stats.push(x, reward)?;
        self.posteriors[arm] = self.posteriors[arm].observe(x, reward)?;
        Ok(())
    }

    /// Belief about `arm` at inflation clock `t`.
    pub fn belief(&self, arm: usize, t: u64) -> Result<ArmBelief> {
        let prior = self.priors[arm].inflate(&self.inflation, t);
        if !self.informed[arm] {
            return Ok(prior);
        }
        self.stats[arm].posterior(&prior)
    }

    /// Expected reward of every arm at `x`, with the prior covariance
    /// inflated to clock `t`.
    pub fn means(&self, x: &DVector<f64>, t: u64) -> Result<Vec<f64>> {
        let scale = self.inflation.scale(t);
        (0..self.arms())
            .map(|i| {
                if !self.informed[i] || self.stats[i].count() == 0 {
                    return self.priors[i].predict_mean(x);
                }
                if scale == 1.0 || self.inflation.kind == InflationKind::None {
                    return self.posteriors[i].predict_mean(x);
                }
                let precision = &self.prior_precisions[i] / scale;
                let mean = self.stats[i].posterior_mean_from_precision(
                    &precision,
                    self.priors[i].mean(),
                    self.priors[i].noise_sigma(),
                )?;
                Ok(mean.dot(x))
            })
            .collect()
    }
}

/// `means[rec] − max_{j≠rec} means[j]`; `+∞` when there is no alternative.
pub fn gain_from_means(means: &[f64], recommended: usize) -> f64 {
    means
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != recommended)
        .map(|(_, &m)| m)
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))))
        .map_or(f64::INFINITY, |best_other| means[recommended] - best_other)
}

pub fn incentive_gain(user: &UserBelief, x: &DVector<f64>, recommended: usize, t: u64) -> Result<f64> {
    if recommended >= user.arms() {
        return Err(RcbError::ArmOutOfRange { arm: recommended, arms: user.arms() });
    }
    Ok(gain_from_means(&user.means(x, t)?, recommended))
}

/// Follow/deviate decision from the user's means. The boundary `gain = −ε`
/// counts as following.
pub fn decide(means: &[f64], recommended: usize, epsilon: f64) -> UserDecision {
    let gain = gain_from_means(means, recommended);
    let followed = gain >= -epsilon;
    let chosen = if followed { recommended } else { argmax(means) };
    UserDecision { followed, chosen, gain }
}

/// One user interaction: decide, play the chosen arm through `reward_source`,
/// and absorb the outcome if the recommendation was followed.
pub fn user_step<F>(
    user: &mut UserBelief,
    x: &DVector<f64>,
    recommended: usize,
    epsilon: f64,
    t: u64,
    mut reward_source: F,
) -> Result<(UserDecision, f64)>
where
    F: FnMut(usize) -> f64,
{
    if recommended >= user.arms() {
        return Err(RcbError::ArmOutOfRange { arm: recommended, arms: user.arms() });
    }
    let decision = decide(&user.means(x, t)?, recommended, epsilon);
    let reward = reward_source(decision.chosen);
    if decision.followed {
        user.observe(decision.chosen, x, reward)?;
    }
    Ok((decision, reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn user_with_means(means: &[f64]) -> UserBelief {
        let priors = means
            .iter()
            .map(|&m| ArmBelief::isotropic(DVector::from_element(1, m), 0.2, 0.05).unwrap())
            .collect();
        UserBelief::new(priors, InflationSchedule::none(0.2)).unwrap()
    }

    fn one() -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }

    #[test]
    fn gain_examples() {
        let u = user_with_means(&[0.5, 0.4, 0.1]);
        assert_relative_eq!(incentive_gain(&u, &one(), 0, 0).unwrap(), 0.1, epsilon = 1e-12);
        let u = user_with_means(&[0.20, 0.25]);
        assert_relative_eq!(incentive_gain(&u, &one(), 0, 0).unwrap(), -0.05, epsilon = 1e-12);
        let single = user_with_means(&[0.3]);
        assert_eq!(incentive_gain(&single, &one(), 0, 0).unwrap(), f64::INFINITY);
        assert!(incentive_gain(&single, &one(), 1, 0).is_err());
    }

    #[test]
    fn follow_threshold() {
        let d = decide(&[0.5, 0.4], 0, 0.05);
        assert!(d.followed && d.chosen == 0);
        let d = decide(&[0.0, 0.06], 0, 0.05);
        assert!(!d.followed);
        assert_eq!(d.chosen, 1);
        // exactly representable boundary: gain = −0.5 with ε = 0.5
        let d = decide(&[0.0, 0.5], 0, 0.5);
        assert!(d.followed, "boundary gain must count as following");
        assert_eq!(d.gain, -0.5);
    }

    #[test]
    fn only_followed_rounds_update_the_user() {
        let mut u = user_with_means(&[0.0, 0.3]);
        let (d, _) = user_step(&mut u, &one(), 0, 0.05, 0, |_| 1.0).unwrap();
        assert!(!d.followed);
        assert_eq!(u.sample_counts(), vec![0, 0]);
        let (d, y) = user_step(&mut u, &one(), 1, 0.05, 0, |arm| arm as f64).unwrap();
        assert!(d.followed);
        assert_eq!(y, 1.0);
        assert_eq!(u.sample_counts(), vec![0, 1]);
    }

    #[test]
    fn uninformed_arms_use_prior_mean() {
        let mut u = user_with_means(&[0.0, 0.0]);
        for _ in 0..50 {
            u.observe(0, &one(), 0.8).unwrap();
        }
        assert!(u.means(&one(), 0).unwrap()[0] > 0.7);
        u.set_informed(&[false, true]);
        assert_eq!(u.means(&one(), 0).unwrap()[0], 0.0);
    }

    #[test]
    fn inflated_means_match_batch_posterior() {
        let sched = InflationSchedule { kind: InflationKind::Linear, rate: 0.5, base_lambda: 0.2 };
        let prior = ArmBelief::isotropic(DVector::from_row_slice(&[0.3, -0.2]), 0.2, 0.5).unwrap();
        let mut u = UserBelief::new(vec![prior.clone()], sched).unwrap();
        let xs = [[0.3, 0.1], [-0.2, 0.5], [0.4, 0.4]];
        for (i, x) in xs.iter().enumerate() {
            u.observe(0, &DVector::from_row_slice(x), i as f64 * 0.1).unwrap();
        }
        let probe = DVector::from_row_slice(&[0.5, -0.5]);
        let direct = u.belief(0, 10).unwrap().predict_mean(&probe).unwrap();
        assert_relative_eq!(u.means(&probe, 10).unwrap()[0], direct, epsilon = 1e-12);
        let plain = u.belief(0, 0).unwrap().predict_mean(&probe).unwrap();
        assert_relative_eq!(u.means(&probe, 0).unwrap()[0], plain, epsilon = 1e-12);
    }
}
