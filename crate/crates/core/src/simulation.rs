//! The full two-stage loop: cold start, then epoch-based exploitation, with
//! a myopic user deciding whether to follow every recommendation.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{decide, UserBelief, UserDecision};
use crate::cold_start::{
    m0_epoch, required_exploration_rate, required_sample_size, Branch, ColdStartConfig, ColdStartState, Phase,
};
use crate::environment::{draw_from_priors, CovariateSampler, Environment, Scenario, SyntheticEnv};
use crate::error::{invalid, RcbError, Result};
use crate::exploitation::{epoch_start, ActionDistribution, ExploitDriver, ExploitationStage};
use crate::metrics::{per_step_regret, RunLog, Stage, StepRecord};
use crate::model::{ArmBelief, InflationSchedule, Interaction, MspeConfig, MspeEstimator};
use crate::rng::{stream, Purpose};

/// Which means define the per-step regret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// True parameters.
    #[default]
    Truth,
    /// Posterior means given the prior and every observed round so far.
    Posterior,
}

/// What the platform does with rounds in which the user deviated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationPolicy {
    /// Deviant samples never enter the algorithm's data.
    #[default]
    Strict,
    /// Deviant samples are recorded for the arm actually played.
    Permissive,
}

/// Time origin of the user's prior-inflation clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflationOrigin {
    #[default]
    RunStart,
    ColdStartEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcbParams {
    pub horizon: u64,
    pub cold_start: ColdStartConfig,
    pub c3: f64,
    pub mspe_estimator: MspeEstimator,
    pub inflation: InflationSchedule,
    #[serde(default)]
    pub inflation_origin: InflationOrigin,
    #[serde(default)]
    pub strict_dbic: bool,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub deviation: DeviationPolicy,
}

impl RcbParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        self.cold_start.validate()?;
        if !(self.c3 > 0.0) {
            return Err(invalid("c3", "must be positive"));
        }
        if let MspeEstimator::CrossValidated { folds, delta } = self.mspe_estimator {
            if folds < 2 {
                return Err(invalid("mspe_estimator.folds", "need at least 2 folds"));
            }
            if !(delta > 0.0 && delta < 1.0) {
                return Err(invalid("mspe_estimator.delta", "must lie in (0,1)"));
            }
        }
        self.inflation.validate()
    }

    /// `−ε`, or `−ε/K` in strict mode.
    pub fn violation_threshold(&self) -> f64 {
        let eps = self.cold_start.epsilon;
        if self.strict_dbic {
            -eps / self.cold_start.k as f64
        } else {
            -eps
        }
    }

    pub fn mspe_config(&self) -> MspeConfig {
        MspeConfig {
            c3: self.c3,
            phi0: self.cold_start.phi0,
            d: self.cold_start.d,
            noise_sigma: self.cold_start.noise_sigma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub n_required: usize,
    pub n_theorem: usize,
    pub exploration_rate: f64,
    pub m0: usize,
    /// Last round of the sample-collection phases, if they finished.
    pub cold_start_end: Option<u64>,
    /// First exploitation round, if reached.
    pub exploit_start: Option<u64>,
    pub gammas: BTreeMap<usize, f64>,
    pub pulls: Vec<usize>,
}

impl RunOutcome {
    /// Total regret of the first and second halves of the exploitation rounds.
    pub fn exploitation_halves(&self) -> Option<(f64, f64)> {
        let rows: Vec<_> = self.log.rows().iter().filter(|r| r.stage == Stage::Exploit).collect();
        if rows.len() < 2 {
            return None;
        }
        let mid = rows.len() / 2;
        let first = rows[..mid].iter().map(|r| r.instant_regret).sum();
        let second = rows[mid..2 * mid].iter().map(|r| r.instant_regret).sum();
        Some((first, second))
    }
}

/// Per-round bookkeeping shared by both stages.
struct Round<'a, E, R> {
    env: &'a mut E,
    rng: &'a mut R,
    user: UserBelief,
    posterior_oracle: Option<Vec<ArmBelief>>,
    params: &'a RcbParams,
    cold_start_end: Option<u64>,
    log: RunLog,
}

impl<E: Environment, R: Rng> Round<'_, E, R> {
    fn clock(&self, t: u64) -> u64 {
        match self.params.inflation_origin {
            InflationOrigin::RunStart => t,
            InflationOrigin::ColdStartEnd => match self.cold_start_end {
                Some(end) if t > end => t - end,
                _ => 0,
            },
        }
    }

    /// Show `recommended` to the user, play their choice and log the round.
    fn play(&mut self, t: u64, x: &DVector<f64>, recommended: usize, stage: Stage) -> Result<(UserDecision, f64)> {
        let means = self.user.means(x, self.clock(t))?;
        let decision = decide(&means, recommended, self.params.cold_start.epsilon);
        let reward = self.env.reward(x, decision.chosen);
        if decision.followed {
            self.user.observe(decision.chosen, x, reward)?;
        }
        let oracle_means = match &self.posterior_oracle {
            Some(beliefs) => beliefs.iter().map(|b| b.predict_mean(x)).collect::<Result<Vec<_>>>()?,
            None => self.env.true_means(x),
        };
        let instant_regret = per_step_regret(&oracle_means, decision.chosen);
        if let Some(beliefs) = &mut self.posterior_oracle {
            beliefs[decision.chosen] = beliefs[decision.chosen].observe(x, reward)?;
        }
        self.log.push(StepRecord {
            t,
            stage,
            recommended,
            chosen: decision.chosen,
            reward,
            instant_regret,
            dbic_gain: if decision.gain.is_finite() { decision.gain } else { 0.0 },
            followed: decision.followed,
            optimal_arm: self.env.optimal_arm(x),
        });
        Ok((decision, reward))
    }

    fn keeps(&self, decision: &UserDecision) -> bool {
        decision.followed || self.params.deviation == DeviationPolicy::Permissive
    }
}

impl<E: Environment, R: Rng> ExploitDriver for Round<'_, E, R> {
    fn context(&mut self, t: u64) -> Result<DVector<f64>> {
        Ok(self.env.next_context(t))
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn respond(
        &mut self,
        t: u64,
        x: &DVector<f64>,
        _dist: &ActionDistribution,
        recommended: usize,
        _gamma: f64,
    ) -> Result<Option<Interaction>> {
        let (decision, reward) = self.play(t, x, recommended, Stage::Exploit)?;
        Ok(self.keeps(&decision).then(|| Interaction { x: x.clone(), arm: decision.chosen, reward }))
    }
}

/// Run the two-stage algorithm for `params.horizon` rounds.
///
/// `rng` supplies the platform's coins; the environment owns its own
/// randomness.
pub fn run_rcb<E: Environment, R: Rng>(
    params: &RcbParams,
    priors: &[ArmBelief],
    env: &mut E,
    rng: &mut R,
) -> Result<RunOutcome> {
    params.validate()?;
    let cfg = &params.cold_start;
    if priors.len() != cfg.k || env.arms() != cfg.k {
        return Err(invalid("k", format!("priors ({}) and environment ({}) must have k = {} arms", priors.len(), env.arms(), cfg.k)));
    }
    if let Some(p) = priors.iter().find(|p| p.dim() != cfg.d) {
        return Err(RcbError::DimensionMismatch { expected: cfg.d, actual: p.dim() });
    }
    if env.dim() != cfg.d {
        return Err(RcbError::DimensionMismatch { expected: cfg.d, actual: env.dim() });
    }

    let n_required = required_sample_size(cfg);
    let exploration_rate = required_exploration_rate(cfg);
    let m0 = m0_epoch(n_required);
    let mut cs = ColdStartState::new(n_required, priors.to_vec())?;
    let mut round = Round {
        env,
        rng,
        user: UserBelief::new(priors.to_vec(), params.inflation)?,
        posterior_oracle: (params.oracle == OracleMode::Posterior).then(|| priors.to_vec()),
        params,
        cold_start_end: None,
        log: RunLog::new(),
    };
    let horizon = params.horizon;
    let mut t = 1u64;

    while t <= horizon && cs.phase() != Phase::Done {
        let x = round.env.next_context(t);
        round.user.set_informed(cs.completed());
        let (recommended, stage, collects) = match cs.phase() {
            Phase::Mpasc => (cs.recommend_mpasc(&x)?, Stage::Mpasc, true),
            _ => {
                let promote = round.rng.random::<f64>() < 1.0 / exploration_rate;
                let (arm, branch) = cs.recommend_rasc(&x, promote)?;
                (arm, Stage::Rasc, branch == Branch::Promoted)
            }
        };
        let (decision, reward) = round.play(t, &x, recommended, stage)?;
        if decision.followed && collects {
            cs.record(recommended, x, reward)?;
        } else if !decision.followed && params.deviation == DeviationPolicy::Permissive {
            cs.record(decision.chosen, x, reward)?;
        }
        t += 1;
    }

    let mut exploit_start = None;
    let mut gammas = BTreeMap::new();
    if cs.phase() == Phase::Done {
        let end = t - 1;
        round.cold_start_end = Some(end);
        round.user.set_informed(&vec![true; cfg.k]);
        let start = epoch_start(m0).max(end) + 1;
        // Rounds left before the first exploitation epoch: recommend the
        // posterior-best arm given the collected samples.
        while t < start && t <= horizon {
            let x = round.env.next_context(t);
            let arm = crate::argmax(&cs.organic_means(&x)?);
            round.play(t, &x, arm, Stage::Rasc)?;
            t += 1;
        }
        if start <= horizon {
            exploit_start = Some(start);
            let mut stage = ExploitationStage::new(
                priors.to_vec(),
                m0,
                params.mspe_config(),
                params.mspe_estimator,
                cs.interactions(),
            )?;
            stage.run_until(start, horizon, &mut round)?;
            gammas = stage.schedule().gammas.clone();
        }
    }

    Ok(RunOutcome {
        log: round.log,
        n_required,
        n_theorem: cfg.theorem_sample_size(),
        exploration_rate,
        m0,
        cold_start_end: round.cold_start_end,
        exploit_start,
        gammas,
        pulls: cs.pulls().to_vec(),
    })
}

/// Knobs of a synthetic run that are not part of a preset grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOptions {
    #[serde(default = "default_c3")]
    pub c3: f64,
    #[serde(default)]
    pub mspe_estimator: MspeEstimator,
    #[serde(default)]
    pub sampler: CovariateSampler,
    /// Replaces the sizing formula when its value exceeds `T/K`.
    #[serde(default)]
    pub n_cap: Option<usize>,
    #[serde(default)]
    pub inflation_origin: InflationOrigin,
    #[serde(default)]
    pub strict_dbic: bool,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub deviation: DeviationPolicy,
    /// Use these parameters instead of drawing the truth from the prior.
    #[serde(default)]
    pub fixed_truth: Option<Vec<Vec<f64>>>,
}

fn default_c3() -> f64 {
    1.0
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            c3: default_c3(),
            mspe_estimator: MspeEstimator::default(),
            sampler: CovariateSampler::default(),
            n_cap: None,
            inflation_origin: InflationOrigin::default(),
            strict_dbic: false,
            oracle: OracleMode::default(),
            deviation: DeviationPolicy::default(),
            fixed_truth: None,
        }
    }
}

/// Resolve a scenario into algorithm parameters.
pub fn scenario_params(scenario: &Scenario, opts: &SimOptions) -> RcbParams {
    let mut cold_start = ColdStartConfig {
        k: scenario.k,
        d: scenario.d,
        epsilon: scenario.epsilon,
        tau_prior: scenario.tau_prior,
        rho_prior: scenario.rho_prior,
        tau_post: scenario.tau_post,
        rho_post: scenario.rho_post,
        phi0: opts.sampler.phi0(scenario.d),
        noise_sigma: scenario.noise_sigma,
        n_override: scenario.n_override,
    };
    if let (None, Some(cap)) = (cold_start.n_override, opts.n_cap) {
        let per_arm_budget = scenario.horizon / scenario.k as u64;
        if cold_start.theorem_sample_size() as u64 > per_arm_budget {
            cold_start.n_override = Some(cap);
        }
    }
    RcbParams {
        horizon: scenario.horizon,
        cold_start,
        c3: opts.c3,
        mspe_estimator: opts.mspe_estimator,
        inflation: scenario.inflation_schedule(),
        inflation_origin: opts.inflation_origin,
        strict_dbic: opts.strict_dbic,
        oracle: opts.oracle,
        deviation: opts.deviation,
    }
}

/// One replication: draw the truth from the prior (unless fixed), then run.
pub fn run_scenario(scenario: &Scenario, opts: &SimOptions, master_seed: u64, replication: u64) -> Result<RunOutcome> {
    let params = scenario_params(scenario, opts);
    let priors = scenario.priors()?;
    let betas = match &opts.fixed_truth {
        Some(fixed) => {
            if fixed.len() != scenario.k {
                return Err(invalid("fixed_truth", format!("expected {} arms, got {}", scenario.k, fixed.len())));
            }
            fixed.iter().map(|b| DVector::from_column_slice(b)).collect()
        }
        None => draw_from_priors(&priors, &mut stream(master_seed, replication, Purpose::Truth)),
    };
    let mut env = SyntheticEnv::new(
        betas,
        opts.sampler,
        scenario.noise_sigma,
        stream(master_seed, replication, Purpose::Environment),
    )?;
    let mut rng = stream(master_seed, replication, Purpose::Algorithm);
    run_rcb(&params, &priors, &mut env, &mut rng)
}
