use rcb_core::environment::{make_setting, SettingName};
use rcb_core::metrics::{cumulative_regret, Stage};
use rcb_core::simulation::{run_scenario, scenario_params, OracleMode, SimOptions};

fn small() -> rcb_core::environment::Scenario {
    let mut s = make_setting(SettingName::S2).variants()[0].clone();
    s.k = 2;
    s.d = 3;
    s.horizon = 3000;
    s.n_override = Some(10);
    s
}

#[test]
fn log_is_complete_and_staged() {
    let out = run_scenario(&small(), &SimOptions::default(), 1, 0).unwrap();
    assert_eq!(out.log.len(), 3000);
    let rows = out.log.rows();
    assert!(rows.windows(2).all(|w| w[1].t == w[0].t + 1 && w[1].stage >= w[0].stage));
    assert_eq!(rows[0].stage, Stage::Mpasc);
    let end = out.cold_start_end.expect("cold start finishes");
    assert!(out.pulls.iter().all(|&p| p >= 10));
    let start = out.exploit_start.unwrap();
    assert!(start > end);
    assert!(rows[start as usize - 1..].iter().all(|r| r.stage == Stage::Exploit));
    let gammas: Vec<f64> = out.gammas.values().copied().collect();
    assert!(gammas.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn regret_is_nondecreasing_and_runs_are_deterministic() {
    let a = run_scenario(&small(), &SimOptions::default(), 4, 2).unwrap();
    let b = run_scenario(&small(), &SimOptions::default(), 4, 2).unwrap();
    assert_eq!(a.log.rows(), b.log.rows());
    let c = cumulative_regret(&a.log);
    assert!(c.windows(2).all(|w| w[1] >= w[0]));
    let other = run_scenario(&small(), &SimOptions::default(), 4, 3).unwrap();
    assert_ne!(a.log.rows(), other.log.rows());
}

#[test]
fn single_arm_run_has_no_regret() {
    let mut s = small();
    s.k = 1;
    s.noise_sigma = 1e-6;
    let out = run_scenario(&s, &SimOptions::default(), 1, 0).unwrap();
    assert!(out.log.rows().iter().all(|r| r.instant_regret == 0.0 && r.followed));
}

#[test]
fn posterior_oracle_and_fixed_truth() {
    let opts = SimOptions {
        oracle: OracleMode::Posterior,
        fixed_truth: Some(vec![vec![0.5, 0.0, 0.0], vec![-0.5, 0.0, 0.0]]),
        ..SimOptions::default()
    };
    let out = run_scenario(&small(), &opts, 1, 0).unwrap();
    assert!(out.log.rows().iter().all(|r| r.instant_regret >= 0.0));
    let bad = SimOptions { fixed_truth: Some(vec![vec![0.0; 3]]), ..SimOptions::default() };
    assert!(run_scenario(&small(), &bad, 1, 0).is_err());
}

#[test]
fn cap_applies_only_when_formula_exceeds_budget() {
    let mut s = make_setting(SettingName::S1).variants()[0].clone();
    s.k = 3;
    s.horizon = 20_000;
    let opts = SimOptions { n_cap: Some(500), ..SimOptions::default() };
    let p = scenario_params(&s, &opts);
    assert_eq!(p.cold_start.n_override, Some(500));
    assert!(p.cold_start.theorem_sample_size() > 20_000 / 3);
    s.horizon = 10_000_000;
    assert_eq!(scenario_params(&s, &opts).cold_start.n_override, None);
}
