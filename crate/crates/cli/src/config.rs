//! Run configuration: what to run, with which parameters, and where to
//! write the results.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rcb_core::environment::{make_setting, PriorMean, Scenario, SettingName};
use rcb_core::model::InflationKind;
use rcb_core::simulation::{scenario_params, SimOptions};
use rcb_core::warfarin::WarfarinConfig;
use serde::{Deserialize, Serialize};

/// Environment variable that, when set, prefixes relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "RCB_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sim,
    Warfarin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub replications: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warfarin: Option<WarfarinRun>,
}

/// Values that replace fields of a preset's first grid point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_override: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflation: Option<InflationKind>,
}

impl Overrides {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    fn apply(&self, s: &mut Scenario) {
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.k {
            s.k = v;
        }
        if let Some(v) = self.d {
            s.d = v;
        }
        if let Some(v) = self.epsilon {
            s.epsilon = v;
        }
        if let Some(v) = self.noise_sigma {
            s.noise_sigma = v;
        }
        if let Some(v) = self.prior_variance {
            s.prior_variance = v;
        }
        if let Some(v) = self.n_override {
            s.n_override = Some(v);
        }
        if let Some(v) = self.inflation {
            s.inflation = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Preset number 1-4, used when `scenario` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<u8>,
    #[serde(default, skip_serializing_if = "Overrides::is_empty")]
    pub overrides: Overrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub options: SimOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarfarinRun {
    pub data: PathBuf,
    #[serde(default)]
    pub replay: WarfarinConfig,
}

impl RunConfig {
    pub fn sim_default() -> Self {
        Self {
            mode: Mode::Sim,
            seed: 0,
            replications: 1,
            output_dir: PathBuf::from("runs/sim"),
            sim: Some(SimConfig { setting: Some(1), overrides: Overrides::default(), scenario: None, options: SimOptions::default() }),
            warfarin: None,
        }
    }

    pub fn warfarin_default(data: PathBuf) -> Self {
        Self {
            mode: Mode::Warfarin,
            seed: 0,
            replications: 10,
            output_dir: PathBuf::from("runs/warfarin"),
            sim: None,
            warfarin: Some(WarfarinRun { data, replay: WarfarinConfig::default() }),
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("parsing run configuration")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing run configuration")
    }

    /// Fold presets and overrides into a concrete scenario, copy the
    /// top-level seed and replication count into the replay settings, and
    /// validate everything.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if self.replications == 0 {
            bail!("replications must be at least 1");
        }
        match self.mode {
            Mode::Sim => {
                if self.warfarin.is_some() {
                    bail!("mode = sim does not accept a [warfarin] section");
                }
                let sim = self.sim.as_mut().context("mode = sim needs a [sim] section")?;
                if sim.scenario.is_none() {
                    let idx = sim.setting.context("sim needs either `setting` or `scenario`")?;
                    let name = SettingName::from_index(idx)
                        .with_context(|| format!("setting must be one of 1, 2, 3, 4 (got {idx})"))?;
                    sim.scenario = Some(make_setting(name).variants()[0].clone());
                }
                let scenario = sim.scenario.as_mut().expect("filled above");
                sim.overrides.apply(scenario);
                sim.overrides = Overrides::default();
                validate_scenario(scenario, &sim.options)?;
            }
            Mode::Warfarin => {
                if self.sim.is_some() {
                    bail!("mode = warfarin does not accept a [sim] section");
                }
                let run = self.warfarin.as_mut().context("mode = warfarin needs a [warfarin] section")?;
                run.replay.seed = self.seed;
                run.replay.permutations = self.replications as usize;
                validate_warfarin(&run.replay)?;
            }
        }
        Ok(self)
    }

    /// Output directory after applying the output-root variable.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

fn validate_scenario(s: &Scenario, opts: &SimOptions) -> anyhow::Result<()> {
    if !(0.0..1.0).contains(&s.epsilon) {
        bail!("epsilon must lie in [0,1)");
    }
    if s.k == 0 {
        bail!("k must be at least 1");
    }
    if s.d == 0 {
        bail!("d must be at least 1");
    }
    if !(s.prior_variance > 0.0) {
        bail!("prior_variance must be positive");
    }
    if !(s.noise_sigma > 0.0) {
        bail!("noise_sigma must be positive");
    }
    if let PriorMean::OneArm { arm, .. } = s.prior_mean {
        if arm >= s.k {
            bail!("prior_mean.arm must be below k = {}", s.k);
        }
    }
    if opts.n_cap == Some(0) {
        bail!("n_cap must be at least 1");
    }
    scenario_params(s, opts).validate()?;
    s.priors()?;
    Ok(())
}

fn validate_warfarin(c: &WarfarinConfig) -> anyhow::Result<()> {
    if !(0.0..1.0).contains(&c.epsilon) {
        bail!("epsilon must lie in [0,1)");
    }
    // dimension and noise are placeholders; only the user-facing fields matter here
    c.params(100, 1, 1.0, 0.1)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_resolution_applies_overrides() {
        let mut cfg = RunConfig::sim_default();
        cfg.sim.as_mut().unwrap().overrides.k = Some(5);
        cfg.sim.as_mut().unwrap().overrides.d = Some(5);
        let cfg = cfg.resolve().unwrap();
        let s = cfg.sim.unwrap().scenario.unwrap();
        assert_eq!((s.k, s.d, s.horizon), (5, 5, 100_000));
    }

    #[test]
    fn epsilon_out_of_range_is_named() {
        let mut cfg = RunConfig::sim_default();
        cfg.sim.as_mut().unwrap().overrides.epsilon = Some(1.5);
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("epsilon must lie in [0,1)"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "mode = \"sim\"\nseed = 1\nreplications = 1\noutput_dir = \"x\"\nbogus = 3\n";
        assert!(RunConfig::from_toml(text).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::sim_default().resolve().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap().resolve().unwrap();
        assert_eq!(cfg, back);
    }
}
