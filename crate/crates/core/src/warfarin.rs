//! Warfarin dosing replay on the PharmGKB export.
//!
//! Each patient becomes a 70-dimensional covariate built from a column
//! manifest shipped in `data/warfarin_features.json`. The three arms are
//! the dose buckets. The platform's learning reward is 1 when it picks the
//! patient's true bucket and 0 otherwise, while regret is measured against
//! per-bucket linear fits of the scaled optimal dose.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cold_start::{required_exploration_rate, ColdStartConfig};
use crate::environment::Environment;
use crate::error::{invalid, RcbError, Result};
use crate::metrics::{ConfusionTable, MetricsSummary, SummaryJson, DEFAULT_GAIN_WINDOW};
use crate::model::{empirical_phi0, ArmBelief, InflationKind, InflationSchedule, MspeEstimator};
use crate::rng::{stream, Purpose};
use crate::simulation::{run_rcb, DeviationPolicy, InflationOrigin, OracleMode, RcbParams, RunOutcome};

/// Manifest shipped with the crate.
pub const DEFAULT_MANIFEST: &str = include_str!("../data/warfarin_features.json");

/// Floor applied to the empirical feature eigenvalue.
pub const PHI0_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DoseBucket {
    Low,
    Medium,
    High,
}

impl DoseBucket {
    pub const ALL: [DoseBucket; 3] = [DoseBucket::Low, DoseBucket::Medium, DoseBucket::High];
    pub const LABELS: [&'static str; 3] = ["Low", "Medium", "High"];

    /// Arm index used by the bandit.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Low below 3 mg/day, Medium on `[3, 7]`, High above 7.
pub fn bucket_dose(dose_mg_per_day: f64) -> Result<DoseBucket> {
    if !(dose_mg_per_day > 0.0) || !dose_mg_per_day.is_finite() {
        return Err(invalid("dose", format!("must be a positive finite number, got {dose_mg_per_day}")));
    }
    Ok(if dose_mg_per_day < 3.0 {
        DoseBucket::Low
    } else if dose_mg_per_day <= 7.0 {
        DoseBucket::Medium
    } else {
        DoseBucket::High
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseBounds {
    pub min: f64,
    pub max: f64,
}

impl DoseBounds {
    pub fn of(doses: impl IntoIterator<Item = f64>) -> Option<Self> {
        doses.into_iter().fold(None, |acc, d| match acc {
            None => Some(Self { min: d, max: d }),
            Some(b) => Some(Self { min: b.min.min(d), max: b.max.max(d) }),
        })
    }
}

pub fn scale_dose(dose: f64, bounds: DoseBounds) -> Result<f64> {
    let span = bounds.max - bounds.min;
    if !(span > 0.0) {
        return Err(invalid("bounds", "max dose must exceed min dose"));
    }
    Ok((dose - bounds.min) / span)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub features: DVector<f64>,
    pub optimal_dose_mg_per_day: f64,
    pub dose_bucket: DoseBucket,
    pub scaled_dose: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Always 1.
    Constant,
    /// 1 when the cell equals `level` (case-insensitive).
    Level { level: String },
    /// Min-max scaled over the file; missing is 0.
    Numeric,
    /// 1 when the cell is `1`, `yes` or `true`.
    Flag,
    /// 1 when the cell holds any non-missing value.
    Present,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    /// Header, or a prefix of it after case and whitespace folding.
    #[serde(default)]
    pub column: Option<String>,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureManifest {
    pub version: u32,
    pub dose_column: String,
    /// The export reports mg/week; dividing by 7 gives mg/day.
    pub dose_divisor: f64,
    pub features: Vec<FeatureSpec>,
}

impl FeatureManifest {
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_MANIFEST).expect("bundled manifest is valid")
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }
}

fn fold(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim().to_lowercase().as_str(), "" | "na" | "n/a" | "nan" | "null")
}

/// Exact folded match first, then a unique prefix match.
fn locate(headers: &[String], column: &str) -> Result<usize> {
    let want = fold(column);
    if let Some(i) = headers.iter().position(|h| *h == want) {
        return Ok(i);
    }
    let hits: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(&want))
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [i] => Ok(*i),
        [] => Err(RcbError::Schema { column: column.to_string(), reason: "column not found".into() }),
        _ => Err(RcbError::Schema { column: column.to_string(), reason: "column name is ambiguous".into() }),
    }
}

/// Read the export with the bundled manifest.
pub fn ingest(path: impl AsRef<Path>) -> Result<Vec<PatientRecord>> {
    ingest_with(path, &FeatureManifest::builtin())
}

pub fn ingest_with(path: impl AsRef<Path>, manifest: &FeatureManifest) -> Result<Vec<PatientRecord>> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, manifest)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, manifest: &FeatureManifest) -> Result<Vec<PatientRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(fold).collect();
    let dose_col = locate(&headers, &manifest.dose_column)?;
    let cols: Vec<Option<usize>> = manifest
        .features
        .iter()
        .map(|f| match (&f.kind, &f.column) {
            (FeatureKind::Constant, _) => Ok(None),
            (_, Some(c)) => locate(&headers, c).map(Some),
            (_, None) => Err(RcbError::Schema { column: f.name.clone(), reason: "manifest entry has no column".into() }),
        })
        .collect::<Result<_>>()?;

    let mut raw: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut numeric_seen: HashMap<usize, (f64, f64)> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let dose_cell = cell(dose_col);
        if is_missing(dose_cell) {
            continue;
        }
        let weekly: f64 = dose_cell.trim().parse().map_err(|_| RcbError::Schema {
            column: manifest.dose_column.clone(),
            reason: format!("unparseable dose {dose_cell:?}"),
        })?;
        let dose = weekly / manifest.dose_divisor;
        if !(dose > 0.0) {
            continue;
        }
        let mut values = Vec::with_capacity(manifest.dim());
        for (j, (spec, col)) in manifest.features.iter().zip(&cols).enumerate() {
            let text = col.map(&cell).unwrap_or("");
            let v = match &spec.kind {
                FeatureKind::Constant => 1.0,
                FeatureKind::Level { level } => f64::from(u8::from(text.trim().eq_ignore_ascii_case(level.trim()))),
                FeatureKind::Flag => {
                    let t = text.trim().to_lowercase();
                    let on = t == "yes" || t == "true" || t.parse::<f64>().map(|x| x == 1.0).unwrap_or(false);
                    f64::from(u8::from(on))
                }
                FeatureKind::Present => f64::from(u8::from(!is_missing(text) && !text.trim().eq_ignore_ascii_case("unknown"))),
                FeatureKind::Numeric => {
                    if is_missing(text) {
                        f64::NAN
                    } else {
                        let x: f64 = text.trim().parse().map_err(|_| RcbError::Schema {
                            column: spec.column.clone().unwrap_or_default(),
                            reason: format!("unparseable number {text:?}"),
                        })?;
                        let e = numeric_seen.entry(j).or_insert((x, x));
                        *e = (e.0.min(x), e.1.max(x));
                        x
                    }
                }
            };
            values.push(v);
        }
        raw.push((values, dose));
    }
    if raw.is_empty() {
        return Err(RcbError::Empty("patients with a recorded dose"));
    }

    let bounds = DoseBounds::of(raw.iter().map(|r| r.1)).expect("non-empty");
    raw.into_iter()
        .map(|(mut values, dose)| {
            for (j, v) in values.iter_mut().enumerate() {
                if v.is_nan() {
                    *v = 0.0;
                } else if let Some(&(lo, hi)) = numeric_seen.get(&j) {
                    *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
                }
            }
            Ok(PatientRecord {
                features: DVector::from_vec(values),
                optimal_dose_mg_per_day: dose,
                dose_bucket: bucket_dose(dose)?,
                scaled_dose: if bounds.max > bounds.min { scale_dose(dose, bounds)? } else { 0.0 },
            })
        })
        .collect()
}

/// Share of patients in each bucket.
pub fn bucket_proportions(records: &[PatientRecord]) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for r in records {
        counts[r.dose_bucket.index()] += 1;
    }
    let n = records.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// One coefficient vector per bucket; zero for a bucket with no rows.
    pub betas: Vec<DVector<f64>>,
    pub bounds: DoseBounds,
    /// Pooled residual standard deviation of the per-bucket fits.
    pub noise_sigma: f64,
    /// Whether each fit needed the ridge fallback.
    pub ridge: Vec<bool>,
}

impl GroundTruth {
    /// Mean reward of giving `arm` to a patient whose best bucket is `bucket`.
    pub fn mean_reward(&self, features: &DVector<f64>, bucket: DoseBucket, arm: usize) -> f64 {
        if arm == bucket.index() {
            features.dot(&self.betas[arm])
        } else {
            0.0
        }
    }
}

/// Relative eigenvalue below which the normal equations count as singular.
const RANK_TOL: f64 = 1e-10;
/// Ridge strength relative to the largest eigenvalue when singular.
const RIDGE_SCALE: f64 = 1e-8;

/// Least squares, falling back to a tiny ridge when `XᵀX` is singular.
pub fn least_squares(xs: &[&DVector<f64>], ys: &[f64], d: usize) -> (DVector<f64>, bool) {
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    for (x, &y) in xs.iter().zip(ys) {
        xtx.ger(1.0, x, x, 1.0);
        xty.axpy(y, x, 1.0);
    }
    let eig = SymmetricEigen::new(xtx.clone());
    let max = eig.eigenvalues.max().max(0.0);
    let min = eig.eigenvalues.min();
    let singular = max == 0.0 || min <= RANK_TOL * max;
    if singular {
        let lambda = RIDGE_SCALE * max.max(1.0);
        for i in 0..d {
            xtx[(i, i)] += lambda;
        }
    }
    let beta = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .unwrap_or_else(|| DVector::zeros(d));
    (beta, singular)
}

/// Regress the scaled optimal dose on the features within each bucket.
pub fn fit_ground_truth(records: &[PatientRecord]) -> Result<GroundTruth> {
    let first = records.first().ok_or(RcbError::Empty("records"))?;
    let d = first.features.len();
    let bounds = DoseBounds::of(records.iter().map(|r| r.optimal_dose_mg_per_day)).expect("non-empty");
    let mut betas = Vec::with_capacity(3);
    let mut ridge = Vec::with_capacity(3);
    let mut ssr = 0.0;
    for bucket in DoseBucket::ALL {
        let rows: Vec<&PatientRecord> = records.iter().filter(|r| r.dose_bucket == bucket).collect();
        if rows.is_empty() {
            betas.push(DVector::zeros(d));
            ridge.push(false);
            continue;
        }
        let xs: Vec<&DVector<f64>> = rows.iter().map(|r| &r.features).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.scaled_dose).collect();
        let (beta, used_ridge) = least_squares(&xs, &ys, d);
        ssr += xs.iter().zip(&ys).map(|(x, y)| (y - x.dot(&beta)).powi(2)).sum::<f64>();
        betas.push(beta);
        ridge.push(used_ridge);
    }
    Ok(GroundTruth { betas, bounds, noise_sigma: (ssr / records.len() as f64).sqrt(), ridge })
}

/// Patients arriving in a fixed order; rewards are bucket matches.
#[derive(Debug, Clone)]
pub struct WarfarinEnv<'a> {
    records: &'a [PatientRecord],
    truth: &'a GroundTruth,
    order: Vec<usize>,
    current: usize,
}

impl<'a> WarfarinEnv<'a> {
    pub fn new(records: &'a [PatientRecord], truth: &'a GroundTruth, order: Vec<usize>) -> Result<Self> {
        if order.iter().any(|&i| i >= records.len()) {
            return Err(invalid("order", "index past the end of the records"));
        }
        Ok(Self { records, truth, order, current: 0 })
    }

    pub fn current(&self) -> &PatientRecord {
        &self.records[self.current]
    }
}

impl Environment for WarfarinEnv<'_> {
    fn arms(&self) -> usize {
        3
    }

    fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.features.len())
    }

    fn next_context(&mut self, t: u64) -> DVector<f64> {
        let slot = (t as usize - 1) % self.order.len();
        self.current = self.order[slot];
        self.records[self.current].features.clone()
    }

    fn reward(&mut self, _x: &DVector<f64>, arm: usize) -> f64 {
        f64::from(u8::from(arm == self.current().dose_bucket.index()))
    }

    fn true_means(&self, x: &DVector<f64>) -> Vec<f64> {
        let bucket = self.current().dose_bucket;
        (0..3).map(|arm| self.truth.mean_reward(x, bucket, arm)).collect()
    }

    fn optimal_arm(&self, _x: &DVector<f64>) -> usize {
        self.current().dose_bucket.index()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarfarinConfig {
    pub epsilon: f64,
    pub prior_variance: f64,
    /// Every coordinate of the Medium arm's prior mean.
    pub medium_prior_mean: f64,
    pub tau_prior: f64,
    pub rho_prior: f64,
    pub tau_post: f64,
    pub rho_post: f64,
    pub c3: f64,
    pub permutations: usize,
    pub seed: u64,
    /// Per-arm cold-start sample count; defaults to `⌈T/(20L)⌉`.
    #[serde(default)]
    pub n_override: Option<usize>,
    pub inflation: InflationKind,
    pub inflation_rate: f64,
    #[serde(default)]
    pub mspe_estimator: MspeEstimator,
    #[serde(default)]
    pub strict_dbic: bool,
    #[serde(default)]
    pub deviation: DeviationPolicy,
}

impl Default for WarfarinConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.025,
            prior_variance: 0.4,
            medium_prior_mean: 0.05,
            tau_prior: 0.005,
            rho_prior: 0.95,
            tau_post: crate::environment::DEFAULT_TAU_POST,
            rho_post: crate::environment::DEFAULT_RHO_POST,
            c3: 1.0,
            permutations: 10,
            seed: 0,
            n_override: None,
            inflation: InflationKind::Linear,
            inflation_rate: crate::environment::DEFAULT_INFLATION_RATE,
            mspe_estimator: MspeEstimator::Analytic,
            strict_dbic: false,
            deviation: DeviationPolicy::Strict,
        }
    }
}

impl WarfarinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(invalid("permutations", "must be at least 1"));
        }
        if !(self.prior_variance > 0.0) {
            return Err(invalid("prior_variance", "must be positive"));
        }
        Ok(())
    }

    pub fn priors(&self, d: usize, noise_sigma: f64) -> Result<Vec<ArmBelief>> {
        [0.0, self.medium_prior_mean, 0.0]
            .iter()
            .map(|&m| ArmBelief::isotropic(DVector::from_element(d, m), self.prior_variance, noise_sigma))
            .collect()
    }

    /// Resolve against a dataset of `horizon` patients.
    pub fn params(&self, horizon: u64, d: usize, phi0: f64, noise_sigma: f64) -> Result<RcbParams> {
        self.validate()?;
        let mut cold_start = ColdStartConfig {
            k: 3,
            d,
            epsilon: self.epsilon,
            tau_prior: self.tau_prior,
            rho_prior: self.rho_prior,
            tau_post: self.tau_post,
            rho_post: self.rho_post,
            phi0,
            noise_sigma,
            n_override: self.n_override,
        };
        cold_start.validate()?;
        if cold_start.n_override.is_none() {
            cold_start.n_override = Some(default_n_override(horizon, required_exploration_rate(&cold_start)));
        }
        let params = RcbParams {
            horizon,
            cold_start,
            c3: self.c3,
            mspe_estimator: self.mspe_estimator,
            inflation: InflationSchedule {
                kind: self.inflation,
                rate: if self.inflation == InflationKind::None { 0.0 } else { self.inflation_rate },
                base_lambda: self.prior_variance,
            },
            inflation_origin: InflationOrigin::ColdStartEnd,
            strict_dbic: self.strict_dbic,
            oracle: OracleMode::Truth,
            deviation: self.deviation,
        };
        params.validate()?;
        Ok(params)
    }
}

/// `⌈T / (20·L)⌉`: one twentieth of the horizon per collected arm, after
/// accounting for the `1/L` promotion rate.
pub fn default_n_override(horizon: u64, exploration_rate: f64) -> usize {
    ((horizon as f64 / (20.0 * exploration_rate)).ceil() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub runs: Vec<RunOutcome>,
    pub summaries: Vec<SummaryJson>,
    pub mean: SummaryJson,
    /// Pooled over permutations.
    pub confusion: ConfusionTable,
    pub params: RcbParams,
    pub truth: GroundTruth,
}

/// Run the algorithm over `config.permutations` arrival orders in parallel.
pub fn replay(records: &[PatientRecord], config: &WarfarinConfig) -> Result<ReplayOutcome> {
    let truth = fit_ground_truth(records)?;
    let d = records[0].features.len();
    let phi0 = empirical_phi0(records.iter().map(|r| &r.features))?.max(PHI0_FLOOR);
    let params = config.params(records.len() as u64, d, phi0, truth.noise_sigma)?;
    let priors = config.priors(d, truth.noise_sigma)?;

    let runs = (0..config.permutations as u64)
        .into_par_iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut stream(config.seed, p, Purpose::Permutation));
            let mut env = WarfarinEnv::new(records, &truth, order)?;
            let mut rng = stream(config.seed, p, Purpose::Algorithm);
            run_rcb(&params, &priors, &mut env, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let threshold = params.violation_threshold();
    let summaries = runs
        .iter()
        .map(|r| MetricsSummary::from_log(&r.log, 3, threshold, DEFAULT_GAIN_WINDOW).map(|m| m.to_json()))
        .collect::<Result<Vec<_>>>()?;
    let mean = SummaryJson::mean(&summaries).expect("at least one permutation");
    let confusion = ConfusionTable::from_pairs(
        3,
        runs.iter().flat_map(|r| r.log.rows().iter().map(|row| (row.optimal_arm, row.chosen))),
    );
    Ok(ReplayOutcome { runs, summaries, mean, confusion, params, truth })
}

/// The always-Medium fixed-dose policy.
pub fn physician_baseline(records: &[PatientRecord]) -> ConfusionTable {
    ConfusionTable::from_pairs(3, records.iter().map(|r| (r.dose_bucket.index(), DoseBucket::Medium.index())))
}
