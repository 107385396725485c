//! Experiment execution and artifact emission.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use rcb_core::metrics::{
    cumulative_regret, rolling_mean, write_curves_csv, write_steps_csv, MetricsSummary, RunLog, SummaryJson,
    DEFAULT_GAIN_WINDOW,
};
use rcb_core::simulation::{run_scenario, scenario_params, RunOutcome};
use rcb_core::warfarin::{ingest, physician_baseline, replay, DoseBucket};
use serde::Serialize;

use crate::config::{Mode, RunConfig};

pub const STEPS_FILE: &str = "steps.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const ECHO_FILE: &str = "config.echo";
pub const CONFUSION_FILE: &str = "confusion.csv";

/// What a finished run left on disk.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: SummaryJson,
}

/// Cold-start sizing of one replication.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub replication: u64,
    pub n_required: usize,
    pub n_theorem: usize,
    pub n_capped: bool,
    pub exploration_rate: f64,
    pub m0: usize,
    pub cold_start_end: Option<u64>,
    pub exploit_start: Option<u64>,
    pub summary: SummaryJson,
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    mean: &'a SummaryJson,
    replications: Vec<RunInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    physician_baseline: Option<Baseline>,
}

#[derive(Debug, Serialize)]
struct Baseline {
    fraction_incorrect: f64,
    weighted_risk_score: f64,
    class_shares: Vec<f64>,
}

/// Run a resolved configuration and write its artifacts.
pub fn execute(config: &RunConfig) -> anyhow::Result<Artifacts> {
    let config = config.clone().resolve()?;
    let dir = config.output_path();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();

    let echo = dir.join(ECHO_FILE);
    fs::write(&echo, config.to_toml()?).with_context(|| format!("writing {}", echo.display()))?;
    files.push(echo);

    let (runs, classes, threshold, epsilon, baseline) = match config.mode {
        Mode::Sim => {
            let sim = config.sim.as_ref().expect("resolved sim config");
            let scenario = sim.scenario.as_ref().expect("resolved scenario");
            let params = scenario_params(scenario, &sim.options);
            let runs = (0..config.replications)
                .into_par_iter()
                .map(|rep| run_scenario(scenario, &sim.options, config.seed, rep))
                .collect::<rcb_core::Result<Vec<_>>>()?;
            (runs, scenario.k, params.violation_threshold(), scenario.epsilon, None)
        }
        Mode::Warfarin => {
            let w = config.warfarin.as_ref().expect("resolved warfarin config");
            let records = ingest(&w.data).with_context(|| format!("reading {}", w.data.display()))?;
            let out = replay(&records, &w.replay)?;
            let base = physician_baseline(&records);
            let confusion = dir.join(CONFUSION_FILE);
            out.confusion.write_csv(&DoseBucket::LABELS, create(&confusion)?)?;
            files.push(confusion);
            let baseline = Baseline {
                fraction_incorrect: 1.0 - base.class_weights[DoseBucket::Medium.index()],
                weighted_risk_score: base.weighted_risk_score(),
                class_shares: base.class_weights.clone(),
            };
            let threshold = out.params.violation_threshold();
            (out.runs, 3, threshold, w.replay.epsilon, Some(baseline))
        }
    };

    let label = match config.mode {
        Mode::Sim => "replication",
        Mode::Warfarin => "permutation",
    };
    let steps = dir.join(STEPS_FILE);
    let tagged: Vec<(Vec<(String, String)>, &RunLog)> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| (vec![(label.to_string(), i.to_string())], &r.log))
        .collect();
    write_steps_csv(&tagged, create(&steps)?)?;
    files.push(steps);

    let infos = runs
        .iter()
        .enumerate()
        .map(|(i, r)| run_info(i as u64, r, classes, threshold))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let per_run: Vec<SummaryJson> = infos.iter().map(|i| i.summary.clone()).collect();
    let mean = SummaryJson::mean(&per_run).context("no runs to summarize")?;
    let summary = dir.join(SUMMARY_FILE);
    let body = SummaryFile { mean: &mean, replications: infos, physician_baseline: baseline };
    serde_json::to_writer_pretty(create(&summary)?, &body)?;
    files.push(summary);

    let curves = dir.join(CURVES_FILE);
    write_curves_csv(&curve_series(&runs, epsilon), create(&curves)?)?;
    files.push(curves);

    Ok(Artifacts { dir, files, summary: mean })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run_info(replication: u64, r: &RunOutcome, classes: usize, threshold: f64) -> anyhow::Result<RunInfo> {
    let summary = MetricsSummary::from_log(&r.log, classes, threshold, DEFAULT_GAIN_WINDOW)?.to_json();
    Ok(RunInfo {
        replication,
        n_required: r.n_required,
        n_theorem: r.n_theorem,
        n_capped: r.n_required != r.n_theorem,
        exploration_rate: r.exploration_rate,
        m0: r.m0,
        cold_start_end: r.cold_start_end,
        exploit_start: r.exploit_start,
        summary,
    })
}

/// Mean cumulative regret and mean rolling gain across runs, plus the
/// `−ε` reference line at the first and last step.
fn curve_series(runs: &[RunOutcome], epsilon: f64) -> Vec<(String, Vec<u64>, Vec<f64>)> {
    let len = runs.iter().map(|r| r.log.len()).min().unwrap_or(0);
    let n = runs.len().max(1) as f64;
    let mut regret = vec![0.0; len];
    let mut gain = vec![0.0; len];
    for r in runs {
        let c = cumulative_regret(&r.log);
        let raw: Vec<f64> = r.log.rows().iter().map(|row| row.dbic_gain).collect();
        let g = rolling_mean(&raw, DEFAULT_GAIN_WINDOW);
        for i in 0..len {
            regret[i] += c[i] / n;
            gain[i] += g[i] / n;
        }
    }
    let ts: Vec<u64> = (1..=len as u64).collect();
    let mut out = vec![
        ("cumulative_regret".to_string(), ts.clone(), regret),
        ("gain_rolling_mean".to_string(), ts, gain),
    ];
    if len > 0 {
        out.push(("gain_reference".to_string(), vec![1, len as u64], vec![-epsilon, -epsilon]));
    }
    out
}
