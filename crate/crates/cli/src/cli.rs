//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcb_core::model::{InflationKind, MspeEstimator};
use rcb_core::simulation::{DeviationPolicy, OracleMode};

use crate::config::RunConfig;
use crate::run::execute;

#[derive(Parser, Debug)]
#[command(name = "rcb", version, about = "Incentive-compatible contextual bandit experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a synthetic experiment
    RunSim(SimArgs),
    /// Replay the warfarin dosing data
    RunWarfarin(WarfarinArgs),
    /// Print the fully resolved configuration without running it
    ShowConfig {
        #[command(subcommand)]
        target: ShowTarget,
    },
}

#[derive(Subcommand, Debug)]
pub enum ShowTarget {
    RunSim(SimArgs),
    RunWarfarin(WarfarinArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum OracleArg {
    Truth,
    Posterior,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum MspeArg {
    Analytic,
    #[value(alias = "cv")]
    CrossValidated,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum InflationArg {
    None,
    Linear,
    Sqrt,
    Log,
}

impl From<InflationArg> for InflationKind {
    fn from(a: InflationArg) -> Self {
        match a {
            InflationArg::None => InflationKind::None,
            InflationArg::Linear => InflationKind::Linear,
            InflationArg::Sqrt => InflationKind::Sqrt,
            InflationArg::Log => InflationKind::Log,
        }
    }
}

/// Flags shared by both modes.
#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML configuration to start from; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<u64>,
    /// Output directory; relative paths go under $RCB_OUTPUT_ROOT when it is set
    #[arg(long, alias = "out")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub strict_dbic: bool,
    /// Record samples from rounds where the user deviated
    #[arg(long)]
    pub permissive: bool,
    #[arg(long, value_enum)]
    pub mspe: Option<MspeArg>,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = 0.05)]
    pub cv_delta: f64,
    #[arg(long)]
    pub c3: Option<f64>,
    #[arg(long)]
    pub n_override: Option<usize>,
    #[arg(long, value_enum)]
    pub inflation: Option<InflationArg>,
    #[arg(long)]
    pub prior_variance: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Preset number 1-4
    #[arg(long)]
    pub setting: Option<u8>,
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, alias = "T")]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Sample size used when the formula exceeds T/K
    #[arg(long)]
    pub n_cap: Option<usize>,
    #[arg(long, value_enum)]
    pub oracle: Option<OracleArg>,
}

#[derive(Args, Debug, Clone)]
pub struct WarfarinArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// PharmGKB export (CSV)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of arrival permutations
    #[arg(long)]
    pub perms: Option<u64>,
}

fn mspe(arg: Option<MspeArg>, c: &CommonArgs, current: MspeEstimator) -> MspeEstimator {
    match arg {
        None => current,
        Some(MspeArg::Analytic) => MspeEstimator::Analytic,
        Some(MspeArg::CrossValidated) => MspeEstimator::CrossValidated { folds: c.cv_folds, delta: c.cv_delta },
    }
}

fn base(c: &CommonArgs, fallback: RunConfig) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => fallback,
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.replications {
        cfg.replications = v;
    }
    if let Some(v) = &c.output_dir {
        cfg.output_dir = v.clone();
    }
    Ok(cfg)
}

impl SimArgs {
    pub fn to_config(&self) -> anyhow::Result<RunConfig> {
        let c = &self.common;
        let mut cfg = base(c, RunConfig::sim_default())?;
        let sim = cfg.sim.get_or_insert_with(|| RunConfig::sim_default().sim.unwrap());
        if let Some(s) = self.setting {
            sim.setting = Some(s);
            sim.scenario = None;
        }
        let o = &mut sim.overrides;
        o.k = self.k.or(o.k);
        o.d = self.d.or(o.d);
        o.horizon = self.horizon.or(o.horizon);
        o.noise_sigma = self.noise_sigma.or(o.noise_sigma);
        o.epsilon = c.epsilon.or(o.epsilon);
        o.n_override = c.n_override.or(o.n_override);
        o.prior_variance = c.prior_variance.or(o.prior_variance);
        o.inflation = c.inflation.map(Into::into).or(o.inflation);
        let opts = &mut sim.options;
        opts.n_cap = self.n_cap.or(opts.n_cap);
        opts.c3 = c.c3.unwrap_or(opts.c3);
        opts.strict_dbic |= c.strict_dbic;
        if c.permissive {
            opts.deviation = DeviationPolicy::Permissive;
        }
        opts.mspe_estimator = mspe(c.mspe, c, opts.mspe_estimator);
        if let Some(o) = self.oracle {
            opts.oracle = match o {
                OracleArg::Truth => OracleMode::Truth,
                OracleArg::Posterior => OracleMode::Posterior,
            };
        }
        cfg.resolve()
    }
}

impl WarfarinArgs {
    pub fn to_config(&self) -> anyhow::Result<RunConfig> {
        let c = &self.common;
        let data = self.data.clone().unwrap_or_default();
        let mut cfg = base(c, RunConfig::warfarin_default(data.clone()))?;
        if let Some(p) = self.perms {
            cfg.replications = p;
        }
        let run = cfg
            .warfarin
            .get_or_insert_with(|| RunConfig::warfarin_default(data.clone()).warfarin.unwrap());
        if self.data.is_some() {
            run.data = data;
        }
        if run.data.as_os_str().is_empty() {
            anyhow::bail!("data must name the warfarin CSV (--data)");
        }
        let r = &mut run.replay;
        r.epsilon = c.epsilon.unwrap_or(r.epsilon);
        r.prior_variance = c.prior_variance.unwrap_or(r.prior_variance);
        r.c3 = c.c3.unwrap_or(r.c3);
        r.n_override = c.n_override.or(r.n_override);
        if let Some(k) = c.inflation {
            r.inflation = k.into();
        }
        r.strict_dbic |= c.strict_dbic;
        if c.permissive {
            r.deviation = DeviationPolicy::Permissive;
        }
        r.mspe_estimator = mspe(c.mspe, c, r.mspe_estimator);
        cfg.resolve()
    }
}

/// Parse-and-dispatch entry point used by the binary.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::RunSim(a) => report(&execute(&a.to_config()?)?),
        Command::RunWarfarin(a) => report(&execute(&a.to_config()?)?),
        Command::ShowConfig { target } => {
            let cfg = match target {
                ShowTarget::RunSim(a) => a.to_config()?,
                ShowTarget::RunWarfarin(a) => a.to_config()?,
            };
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn report(a: &crate::run::Artifacts) -> anyhow::Result<()> {
    println!("wrote {} files to {}", a.files.len(), a.dir.display());
    println!("{}", serde_json::to_string_pretty(&a.summary)?);
    Ok(())
}
