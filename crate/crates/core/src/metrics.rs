//! Run logs, regret, incentive-gain series and decision-quality scores.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{RcbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "MPASC")]
    Mpasc,
    #[serde(rename = "RASC")]
    Rasc,
    #[serde(rename = "EXPLOIT")]
    Exploit,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Mpasc => "MPASC",
            Stage::Rasc => "RASC",
            Stage::Exploit => "EXPLOIT",
        }
    }
}

/// One round of a run. Arms are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub stage: Stage,
    pub recommended: usize,
    pub chosen: usize,
    pub reward: f64,
    pub instant_regret: f64,
    /// Incentive gain of the recommendation; `0` when there is no competing arm.
    pub dbic_gain: f64,
    pub followed: bool,
    /// Arm that counts as the correct decision (true best arm / true dose bucket).
    pub optimal_arm: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    rows: Vec<StepRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a row; `t` must continue the sequence and stages may only move
    /// forward (MPASC → RASC → EXPLOIT).
    pub fn push(&mut self, row: StepRecord) {
        if let Some(last) = self.rows.last() {
            assert_eq!(row.t, last.t + 1, "rounds must be consecutive");
            assert!(row.stage >= last.stage, "stage moved backwards at t={}", row.t);
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[StepRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn from_rows(rows: Vec<StepRecord>) -> Self {
        let mut log = Self::new();
        for r in rows {
            log.push(r);
        }
        log
    }
}

/// `max(means) − means[chosen]`.
pub fn per_step_regret(oracle_means: &[f64], chosen: usize) -> f64 {
    let best = oracle_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best - oracle_means[chosen]
}

pub fn cumulative_regret(log: &RunLog) -> Vec<f64> {
    log.rows
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r.instant_regret;
            Some(*acc)
        })
        .collect()
}

pub fn fraction_incorrect(log: &RunLog) -> Result<f64> {
    if log.is_empty() {
        return Err(RcbError::Empty("run log"));
    }
    let wrong = log.rows.iter().filter(|r| r.chosen != r.optimal_arm).count();
    Ok(wrong as f64 / log.len() as f64)
}

/// Rows with violated incentive constraint (`gain < threshold`) as a
/// fraction of the non-MPASC rows; `None` if there are no such rows.
pub fn violation_fraction(log: &RunLog, threshold: f64) -> Option<f64> {
    let eligible: Vec<_> = log.rows.iter().filter(|r| r.stage != Stage::Mpasc).collect();
    if eligible.is_empty() {
        return None;
    }
    let bad = eligible.iter().filter(|r| r.dbic_gain < threshold).count();
    Some(bad as f64 / eligible.len() as f64)
}

/// Counts of (true class, assigned class) and their row-normalized shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub counts: Vec<Vec<u64>>,
    /// Row `c` holds the share of class-`c` cases assigned to each class.
    pub proportions: Vec<Vec<f64>>,
    /// Share of all cases whose true class is `c`.
    pub class_weights: Vec<f64>,
}

impl ConfusionTable {
    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut counts = vec![vec![0u64; classes]; classes];
        for (truth, assigned) in pairs {
            counts[truth][assigned] += 1;
        }
        let total: u64 = counts.iter().flatten().sum();
        let proportions = counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect();
        let class_weights = counts
            .iter()
            .map(|row| {
                if total == 0 {
                    0.0
                } else {
                    row.iter().sum::<u64>() as f64 / total as f64
                }
            })
            .collect();
        Self { counts, proportions, class_weights }
    }

    pub fn from_log(log: &RunLog, classes: usize) -> Self {
        Self::from_pairs(classes, log.rows.iter().map(|r| (r.optimal_arm, r.chosen)))
    }

    pub fn weighted_risk_score(&self) -> f64 {
        weighted_risk_score(&self.proportions, &self.class_weights)
    }

    /// Rows = true class, columns = assigned class.
    pub fn write_csv<W: Write>(&self, labels: &[&str], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true_class".to_string()];
        header.extend(labels.iter().map(|l| l.to_string()));
        header.push("class_share".to_string());
        w.write_record(&header)?;
        for (c, row) in self.proportions.iter().enumerate() {
            let mut rec = vec![labels[c].to_string()];
            rec.extend(row.iter().map(|&p| fmt_f64(p)));
            rec.push(fmt_f64(self.class_weights[c]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Σ_c w_c · (acc_c − (1 − acc_c))`, where `acc_c` is the diagonal of the
/// row-normalized confusion proportions.
pub fn weighted_risk_score(proportions: &[Vec<f64>], class_weights: &[f64]) -> f64 {
    proportions
        .iter()
        .zip(class_weights)
        .enumerate()
        .map(|(c, (row, w))| w * (2.0 * row[c] - 1.0))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSeries {
    pub t: Vec<u64>,
    pub raw: Vec<f64>,
    pub rolling: Vec<f64>,
    /// The `−ε` reference level.
    pub reference: f64,
}

/// Trailing mean over the last `window` gains; the first `window − 1`
/// entries average the available prefix.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn gain_series(log: &RunLog, window: usize, epsilon: f64) -> GainSeries {
    let raw: Vec<f64> = log.rows.iter().map(|r| r.dbic_gain).collect();
    GainSeries {
        t: log.rows.iter().map(|r| r.t).collect(),
        rolling: rolling_mean(&raw, window),
        raw,
        reference: -epsilon,
    }
}

/// Default smoothing window for gain curves.
pub const DEFAULT_GAIN_WINDOW: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub cumulative_regret: Vec<f64>,
    pub rolling_gain: Vec<f64>,
    pub violation_fraction: Option<f64>,
    pub fraction_incorrect: f64,
    pub weighted_risk_score: f64,
    pub confusion: ConfusionTable,
}

impl MetricsSummary {
    pub fn from_log(log: &RunLog, classes: usize, violation_threshold: f64, window: usize) -> Result<Self> {
        let confusion = ConfusionTable::from_log(log, classes);
        Ok(Self {
            cumulative_regret: cumulative_regret(log),
            rolling_gain: rolling_mean(&log.rows.iter().map(|r| r.dbic_gain).collect::<Vec<_>>(), window),
            violation_fraction: violation_fraction(log, violation_threshold),
            fraction_incorrect: fraction_incorrect(log)?,
            weighted_risk_score: confusion.weighted_risk_score(),
            confusion,
        })
    }

    pub fn to_json(&self) -> SummaryJson {
        SummaryJson {
            cum_regret_final: self.cumulative_regret.last().copied().unwrap_or(0.0),
            violation_fraction: self.violation_fraction,
            fraction_incorrect: self.fraction_incorrect,
            weighted_risk_score: self.weighted_risk_score,
            confusion_table: self.confusion.proportions.clone(),
        }
    }
}

/// Per-run summary record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryJson {
    pub cum_regret_final: f64,
    pub violation_fraction: Option<f64>,
    pub fraction_incorrect: f64,
    pub weighted_risk_score: f64,
    pub confusion_table: Vec<Vec<f64>>,
}

impl SummaryJson {
    /// Field-wise mean; `violation_fraction` averages the runs that have one.
    pub fn mean(items: &[SummaryJson]) -> Option<SummaryJson> {
        let n = items.len();
        if n == 0 {
            return None;
        }
        let avg = |f: &dyn Fn(&SummaryJson) -> f64| items.iter().map(f).sum::<f64>() / n as f64;
        let vio: Vec<f64> = items.iter().filter_map(|s| s.violation_fraction).collect();
        let classes = items[0].confusion_table.len();
        let confusion_table = (0..classes)
            .map(|r| (0..classes).map(|c| avg(&|s| s.confusion_table[r][c])).collect())
            .collect();
        Some(SummaryJson {
            cum_regret_final: avg(&|s| s.cum_regret_final),
            violation_fraction: (!vio.is_empty()).then(|| vio.iter().sum::<f64>() / vio.len() as f64),
            fraction_incorrect: avg(&|s| s.fraction_incorrect),
            weighted_risk_score: avg(&|s| s.weighted_risk_score),
            confusion_table,
        })
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const STEPS_HEADER: [&str; 9] = [
    "t",
    "stage",
    "recommended",
    "chosen",
    "reward",
    "instant_regret",
    "dbic_gain",
    "followed",
    "optimal_arm",
];

pub fn step_fields(r: &StepRecord) -> [String; 9] {
    [
        r.t.to_string(),
        r.stage.as_str().to_string(),
        r.recommended.to_string(),
        r.chosen.to_string(),
        fmt_f64(r.reward),
        fmt_f64(r.instant_regret),
        fmt_f64(r.dbic_gain),
        (r.followed as u8).to_string(),
        r.optimal_arm.to_string(),
    ]
}

/// One row per step; `prefix` columns (e.g. replication id) come first.
pub fn write_steps_csv<W: Write>(runs: &[(Vec<(String, String)>, &RunLog)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let prefix_names: Vec<String> = runs
        .first()
        .map(|(p, _)| p.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header = prefix_names.clone();
    header.extend(STEPS_HEADER.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (prefix, log) in runs {
        for row in log.rows() {
            let mut rec: Vec<String> = prefix.iter().map(|(_, v)| v.clone()).collect();
            rec.extend(step_fields(row));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format `(series, t, value)` rows.
pub fn write_curves_csv<W: Write>(series: &[(String, Vec<u64>, Vec<f64>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", "t", "value"])?;
    for (name, ts, vs) in series {
        for (t, v) in ts.iter().zip(vs) {
            w.write_record([name.as_str(), &t.to_string(), &fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}
