//! Synthetic linear-reward environments and the experiment presets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, RcbError, Result};
use crate::model::{ArmBelief, InflationKind, InflationSchedule};

/// Largest admissible `‖β_i‖₂`.
pub const PARAM_NORM_BOUND: f64 = 1.0;

/// Covariate law over `{x : ‖x‖₂ ≤ 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSampler {
    /// Uniform on `[−1/√d, 1/√d]^d`.
    #[default]
    Box,
    /// Uniform on the unit sphere.
    Sphere,
}

impl CovariateSampler {
    pub fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> DVector<f64> {
        match self {
            CovariateSampler::Box => {
                let h = 1.0 / (d as f64).sqrt();
                let u = Uniform::new_inclusive(-h, h).expect("finite bounds");
                DVector::from_iterator(d, (0..d).map(|_| u.sample(rng)))
            }
            CovariateSampler::Sphere => loop {
                let g = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let n = g.norm();
                if n > 0.0 {
                    break g / n;
                }
            },
        }
    }

    /// `λ_min(E[x xᵀ])`: `1/(3d)` for the box, `1/d` for the sphere.
    pub fn phi0(&self, d: usize) -> f64 {
        match self {
            CovariateSampler::Box => 1.0 / (3.0 * d as f64),
            CovariateSampler::Sphere => 1.0 / d as f64,
        }
    }
}

/// Environment seen by the two-stage runner.
pub trait Environment {
    fn arms(&self) -> usize;
    fn dim(&self) -> usize;
    fn next_context(&mut self, t: u64) -> DVector<f64>;
    fn reward(&mut self, x: &DVector<f64>, arm: usize) -> f64;
    /// True mean reward of every arm at `x`.
    fn true_means(&self, x: &DVector<f64>) -> Vec<f64>;
    /// The arm counted as the correct decision for the current context.
    fn optimal_arm(&self, x: &DVector<f64>) -> usize {
        crate::argmax(&self.true_means(x))
    }
}

/// Linear rewards `y = xᵀβ_arm + η`, `η ~ N(0, σ²)`.
#[derive(Debug, Clone)]
pub struct SyntheticEnv<R> {
    true_betas: Vec<DVector<f64>>,
    sampler: CovariateSampler,
    noise_sigma: f64,
    rng: R,
}

impl<R: Rng> SyntheticEnv<R> {
    pub fn new(true_betas: Vec<DVector<f64>>, sampler: CovariateSampler, noise_sigma: f64, rng: R) -> Result<Self> {
        let d = true_betas.first().ok_or(RcbError::Empty("true_betas"))?.len();
        for b in &true_betas {
            if b.len() != d {
                return Err(RcbError::DimensionMismatch { expected: d, actual: b.len() });
            }
            if b.norm() > PARAM_NORM_BOUND * (1.0 + 1e-12) {
                return Err(invalid("true_betas", format!("norm {} exceeds {PARAM_NORM_BOUND}", b.norm())));
            }
        }
        if !(noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma", "must be nonnegative"));
        }
        Ok(Self { true_betas, sampler, noise_sigma, rng })
    }

    pub fn true_betas(&self) -> &[DVector<f64>] {
        &self.true_betas
    }

    pub fn sample_covariate(&mut self) -> DVector<f64> {
        let d = self.true_betas[0].len();
        self.sampler.sample(d, &mut self.rng)
    }

    pub fn realize_reward(&mut self, x: &DVector<f64>, arm: usize) -> f64 {
        let mean = x.dot(&self.true_betas[arm]);
        if self.noise_sigma == 0.0 {
            return mean;
        }
        let eta: f64 = self.rng.sample(StandardNormal);
        mean + self.noise_sigma * eta
    }
}

impl<R: Rng> Environment for SyntheticEnv<R> {
    fn arms(&self) -> usize {
        self.true_betas.len()
    }

    fn dim(&self) -> usize {
        self.true_betas[0].len()
    }

    fn next_context(&mut self, _t: u64) -> DVector<f64> {
        self.sample_covariate()
    }

    fn reward(&mut self, x: &DVector<f64>, arm: usize) -> f64 {
        self.realize_reward(x, arm)
    }

    fn true_means(&self, x: &DVector<f64>) -> Vec<f64> {
        self.true_betas.iter().map(|b| x.dot(b)).collect()
    }
}

/// Draw from `N(mean, cov)` using a symmetric square root, so singular
/// (including zero) covariances are allowed.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let d = mean.len();
    let eig = SymmetricEigen::new(cov.clone());
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let scaled = DVector::from_iterator(d, eig.eigenvalues.iter().zip(z.iter()).map(|(l, z)| l.max(0.0).sqrt() * z));
    mean + eig.eigenvectors * scaled
}

/// Project onto the ball of radius [`PARAM_NORM_BOUND`], keeping direction.
pub fn clip_to_ball(beta: DVector<f64>) -> DVector<f64> {
    let n = beta.norm();
    if n > PARAM_NORM_BOUND {
        beta * (PARAM_NORM_BOUND / n)
    } else {
        beta
    }
}

/// Truth drawn from `N(β_{i,0}, Σ_{i,0})` per arm, clipped to the unit ball.
pub fn draw_true_params<R: Rng + ?Sized>(
    means: &[DVector<f64>],
    covariances: &[DMatrix<f64>],
    rng: &mut R,
) -> Vec<DVector<f64>> {
    assert_eq!(means.len(), covariances.len());
    means
        .iter()
        .zip(covariances)
        .map(|(m, c)| clip_to_ball(sample_gaussian(m, c, rng)))
        .collect()
}

pub fn draw_from_priors<R: Rng + ?Sized>(priors: &[ArmBelief], rng: &mut R) -> Vec<DVector<f64>> {
    let means: Vec<_> = priors.iter().map(|p| p.mean().clone()).collect();
    let covs: Vec<_> = priors.iter().map(|p| p.covariance().clone()).collect();
    draw_true_params(&means, &covs, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingName {
    S1,
    S2,
    S3,
    S4,
}

impl SettingName {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(Self::S1),
            2 => Some(Self::S2),
            3 => Some(Self::S3),
            4 => Some(Self::S4),
            _ => None,
        }
    }
}

/// How prior means are laid out across arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PriorMean {
    /// `β_{i,0} = 0` for all arms.
    Zero,
    /// `β_{arm,0} = value·1`, every other arm `0`.
    OneArm { arm: usize, value: f64 },
}

impl PriorMean {
    pub fn means(&self, k: usize, d: usize) -> Vec<DVector<f64>> {
        (0..k)
            .map(|i| match *self {
                PriorMean::OneArm { arm, value } if arm == i => DVector::from_element(d, value),
                _ => DVector::zeros(d),
            })
            .collect()
    }
}

/// Parameter grid of one experiment setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingPreset {
    pub name: SettingName,
    pub horizon: u64,
    pub ks: Vec<usize>,
    pub ds: Vec<usize>,
    pub noise_sigma: f64,
    pub epsilons: Vec<f64>,
    pub tau_prior: f64,
    pub rho_prior: f64,
    pub tau_post: f64,
    pub rho_post: f64,
    pub prior_mean: PriorMean,
    pub prior_variances: Vec<f64>,
    pub n_overrides: Vec<usize>,
    pub schedules: Vec<InflationKind>,
    pub inflation_rate: f64,
}

/// Default posterior-gap constants `τ_{P*}`, `ρ_{P*}`.
pub const DEFAULT_TAU_POST: f64 = 0.01;
pub const DEFAULT_RHO_POST: f64 = 0.95;
/// Rate `c` used by the decaying-prior schedules.
pub const DEFAULT_INFLATION_RATE: f64 = 0.01;

pub fn make_setting(name: SettingName) -> SettingPreset {
    let s1 = SettingPreset {
        name: SettingName::S1,
        horizon: 100_000,
        ks: vec![2, 5, 10],
        ds: vec![3, 5, 10],
        noise_sigma: 0.05,
        epsilons: vec![0.05],
        tau_prior: 0.01,
        rho_prior: 0.95,
        tau_post: DEFAULT_TAU_POST,
        rho_post: DEFAULT_RHO_POST,
        prior_mean: PriorMean::Zero,
        prior_variances: vec![0.2],
        n_overrides: vec![],
        schedules: vec![InflationKind::None],
        inflation_rate: 0.0,
    };
    match name {
        SettingName::S1 => s1,
        SettingName::S2 => SettingPreset {
            name,
            n_overrides: vec![10, 100, 1000],
            ..s1
        },
        SettingName::S3 => SettingPreset {
            name,
            horizon: 50_000,
            ks: vec![5],
            ds: vec![5],
            epsilons: vec![0.01, 0.03, 0.05],
            prior_variances: vec![1.0 / 3.0, 1.0 / 5.0, 1.0 / 10.0],
            ..s1
        },
        SettingName::S4 => SettingPreset {
            name,
            horizon: 50_000,
            ks: vec![5],
            ds: vec![5],
            epsilons: vec![0.05],
            prior_mean: PriorMean::OneArm { arm: 0, value: 1.0 },
            prior_variances: vec![0.02, 0.04, 0.1],
            schedules: vec![InflationKind::Linear, InflationKind::Sqrt, InflationKind::Log],
            inflation_rate: DEFAULT_INFLATION_RATE,
            ..s1
        },
    }
}

/// One concrete point of a preset grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub horizon: u64,
    pub k: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub epsilon: f64,
    pub tau_prior: f64,
    pub rho_prior: f64,
    pub tau_post: f64,
    pub rho_post: f64,
    pub prior_mean: PriorMean,
    pub prior_variance: f64,
    #[serde(default)]
    pub n_override: Option<usize>,
    pub inflation: InflationKind,
    pub inflation_rate: f64,
}

impl SettingPreset {
    /// Cartesian product of every grid axis, in declaration order.
    pub fn variants(&self) -> Vec<Scenario> {
        let overrides: Vec<Option<usize>> = if self.n_overrides.is_empty() {
            vec![None]
        } else {
            self.n_overrides.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &k in &self.ks {
            for &d in &self.ds {
                for &epsilon in &self.epsilons {
                    for &prior_variance in &self.prior_variances {
                        for &n_override in &overrides {
                            for &inflation in &self.schedules {
                                out.push(Scenario {
                                    horizon: self.horizon,
                                    k,
                                    d,
                                    noise_sigma: self.noise_sigma,
                                    epsilon,
                                    tau_prior: self.tau_prior,
                                    rho_prior: self.rho_prior,
                                    tau_post: self.tau_post,
                                    rho_post: self.rho_post,
                                    prior_mean: self.prior_mean,
                                    prior_variance,
                                    n_override,
                                    inflation,
                                    inflation_rate: self.inflation_rate,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl Scenario {
    pub fn priors(&self) -> Result<Vec<ArmBelief>> {
        self.prior_mean
            .means(self.k, self.d)
            .into_iter()
            .map(|m| ArmBelief::isotropic(m, self.prior_variance, self.noise_sigma))
            .collect()
    }

    pub fn inflation_schedule(&self) -> InflationSchedule {
        InflationSchedule {
            kind: self.inflation,
            rate: if self.inflation == InflationKind::None { 0.0 } else { self.inflation_rate },
            base_lambda: self.prior_variance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::empirical_phi0;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn covariates_stay_in_unit_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1, 3, 10] {
            for s in [CovariateSampler::Box, CovariateSampler::Sphere] {
                for _ in 0..1000 {
                    assert!(s.sample(d, &mut rng).norm() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_interval_second_moment() {
        // ∫_{-1}^{1} x²/2 dx = 1/3
        assert_eq!(CovariateSampler::Box.phi0(1), 1.0 / 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<_> = (0..20_000).map(|_| CovariateSampler::Box.sample(1, &mut rng)).collect();
        assert!(xs.iter().all(|x| x[0].abs() <= 1.0));
        let m2 = xs.iter().map(|x| x[0] * x[0]).sum::<f64>() / xs.len() as f64;
        assert!((m2 - 1.0 / 3.0).abs() < 0.01, "{m2}");
    }

    #[test]
    fn box_phi0_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<_> = (0..100_000).map(|_| CovariateSampler::Box.sample(3, &mut rng)).collect();
        let phi = empirical_phi0(xs.iter()).unwrap();
        assert!((phi - 1.0 / 9.0).abs() / (1.0 / 9.0) < 0.05, "{phi}");
    }

    #[test]
    fn noiseless_rewards_are_linear() {
        let betas = vec![DVector::from_row_slice(&[0.3, -0.4]), DVector::zeros(2)];
        let mut env = SyntheticEnv::new(betas, CovariateSampler::Box, 0.0, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = DVector::from_row_slice(&[0.5, 0.5]);
        assert_eq!(env.realize_reward(&x, 0), x.dot(&DVector::from_row_slice(&[0.3, -0.4])));
        assert_eq!(env.realize_reward(&x, 1), 0.0);
    }

    #[test]
    fn noisy_reward_mean_matches_within_clt_band() {
        let beta = DVector::from_row_slice(&[0.6, 0.2]);
        let sigma = 0.05;
        let mut env = SyntheticEnv::new(vec![beta.clone()], CovariateSampler::Box, sigma, ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = DVector::from_row_slice(&[0.4, -0.3]);
        let n = 100_000;
        let mean = (0..n).map(|_| env.realize_reward(&x, 0)).sum::<f64>() / n as f64;
        assert!((mean - x.dot(&beta)).abs() <= 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn oversized_truth_is_rejected() {
        let r = SyntheticEnv::new(vec![DVector::from_element(2, 1.0)], CovariateSampler::Box, 0.1, ChaCha8Rng::seed_from_u64(0));
        assert!(r.is_err());
    }

    #[test]
    fn degenerate_prior_returns_mean() {
        let mean = DVector::from_row_slice(&[0.1, 0.2, -0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = draw_true_params(std::slice::from_ref(&mean), &[DMatrix::zeros(3, 3)], &mut rng);
        assert_eq!(b[0], mean);
    }

    #[test]
    fn truth_draws_are_seed_deterministic() {
        let priors = make_setting(SettingName::S1).variants()[0].priors().unwrap();
        let a = draw_from_priors(&priors, &mut ChaCha8Rng::seed_from_u64(42));
        let b = draw_from_priors(&priors, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_prior_draw_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = DVector::zeros(1);
        let c = DMatrix::from_element(1, 1, 0.2);
        let draws: Vec<f64> = (0..1000).map(|_| sample_gaussian(&m, &c, &mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / 1000.0;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((var - 0.2).abs() / 0.2 < 0.1, "{var}");
    }

    #[test]
    fn clipping_preserves_direction() {
        let b = DVector::from_row_slice(&[3.0, -4.0]);
        let c = clip_to_ball(b.clone());
        assert!((c.norm() - 1.0).abs() < 1e-15);
        assert!((c - b.normalize()).norm() < 1e-15);
        let small = DVector::from_row_slice(&[0.1, 0.2]);
        assert_eq!(clip_to_ball(small.clone()), small);
    }

    #[test]
    fn preset_values() {
        let s1 = make_setting(SettingName::S1);
        assert_eq!((s1.noise_sigma, s1.epsilons.clone(), s1.prior_variances.clone()), (0.05, vec![0.05], vec![0.2]));
        assert_eq!(s1.variants().len(), 9);
        let s2 = make_setting(SettingName::S2);
        assert_eq!(s2.n_overrides, vec![10, 100, 1000]);
        let s4 = make_setting(SettingName::S4);
        let priors = s4.variants()[0].priors().unwrap();
        assert_eq!(priors[0].mean().as_slice(), &[1.0; 5]);
        assert!(priors[1..].iter().all(|p| p.mean().iter().all(|&v| v == 0.0)));
        assert_eq!(s4.variants().len(), 9);
    }
}
