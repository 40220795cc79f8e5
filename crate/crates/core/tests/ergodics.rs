mod common;

use std::sync::OnceLock;

use common::oracles::quantile_integral_w2;
use loadagg::agents::Logistic;
use loadagg::control::ControllerKind;
use loadagg::ergodics::{
    fairness_gap, long_run_average, mixing_sweep, mixing_time, wasserstein2_sq, EmpiricalDistribution,
    ErgodicsError,
};
use loadagg::sim::{run_closed_loop, run_ensemble_with, Retention, RunSet, SimConfig};
use proptest::prelude::*;

fn dist(v: &[f64]) -> EmpiricalDistribution {
    EmpiricalDistribution::new(v.to_vec()).unwrap()
}

fn lossless_runs(kind: ControllerKind, horizon: usize) -> RunSet {
    let mut cfg = SimConfig::lossless(kind);
    cfg.horizon = horizon;
    run_ensemble_with(&cfg, Retention::ControllerState, &Logistic).unwrap()
}

fn lag_runs() -> &'static RunSet {
    static RUNS: OnceLock<RunSet> = OnceLock::new();
    RUNS.get_or_init(|| lossless_runs(ControllerKind::Lag, 2000))
}

proptest! {
    #[test]
    fn w2_matches_quantile_oracle(
        a in prop::collection::vec(-20.0f64..20.0, 2..13),
        b in prop::collection::vec(-20.0f64..20.0, 2..13),
    ) {
        let lib = wasserstein2_sq(&dist(&a), &dist(&b));
        let oracle = quantile_integral_w2(&a, &b);
        prop_assert!((lib - oracle).abs() <= 1e-9 * (1.0 + oracle), "{} vs {}", lib, oracle);
    }

    #[test]
    fn larger_threshold_never_mixes_later(t1 in 0.001f64..0.5, t2 in 0.001f64..0.5) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = mixing_time(lag_runs(), lo).unwrap().time_or_horizon();
        let b = mixing_time(lag_runs(), hi).unwrap().time_or_horizon();
        prop_assert!(b <= a);
    }
}

#[test]
fn w2_hand_examples() {
    assert_eq!(wasserstein2_sq(&dist(&[0.0, 2.0]), &dist(&[1.0, 3.0])), 1.0);
    assert_eq!(quantile_integral_w2(&[0.0, 2.0], &[1.0, 3.0]), 1.0);
}

#[test]
fn coinciding_labels_mix_at_one_and_flag_degenerate() {
    let mut cfg = SimConfig::lossless(ControllerKind::Lag);
    cfg.horizon = 100;
    cfg.repetitions = 5;
    cfg.initial_states = Some(vec![3.0, 3.0]);
    let runs = run_ensemble_with(&cfg, Retention::ControllerState, &Logistic).unwrap();
    let r = mixing_time(&runs, 0.01).unwrap();
    assert_eq!(r.mixing_time, Some(1));
    assert!(r.degenerate);
    assert_eq!(r.delta_ref, vec![0.0]);
}

#[test]
fn lag_mixes_pi_does_not_within_short_horizon() {
    let lag = mixing_time(lag_runs(), 0.01).unwrap();
    assert!(lag.mixing_time.is_some_and(|k| k <= lag.horizon));
    assert!(!lag.degenerate);

    let pi = mixing_time(&lossless_runs(ControllerKind::Pi, 5000), 0.01).unwrap();
    assert_eq!(pi.mixing_time, None);
    assert!(pi.min_ratio_from(0, 2501) > 0.05);
}

#[test]
fn sweep_of_zero_equals_plain_mixing_time() {
    let mut cfg = SimConfig::lossless(ControllerKind::Lag);
    cfg.horizon = 2000;
    let sweep = mixing_sweep(&cfg, &[0.0], 0.01).unwrap();
    assert_eq!(sweep.len(), 1);
    assert_eq!(sweep[0], mixing_time(lag_runs(), 0.01).unwrap());
}

#[test]
fn sweep_requires_lag() {
    let cfg = SimConfig::lossless(ControllerKind::Pi);
    assert_eq!(mixing_sweep(&cfg, &[0.0], 0.01), Err(ErgodicsError::NotLag));
}

#[test]
fn mixing_needs_two_labels() {
    let mut cfg = SimConfig::lossless(ControllerKind::Lag);
    cfg.horizon = 10;
    cfg.repetitions = 3;
    cfg.initial_states = Some(vec![0.0]);
    let runs = run_ensemble_with(&cfg, Retention::ControllerState, &Logistic).unwrap();
    assert_eq!(mixing_time(&runs, 0.01), Err(ErgodicsError::TooFewLabels(1)));
}

#[test]
fn lag_is_fair_within_agent_kind() {
    let cfg = SimConfig::lossless(ControllerKind::Lag);
    let t = run_closed_loop(&cfg, 77, 0.0).unwrap();
    let avg = t.agent_averages();
    let (g1, g2) = avg.split_at(10);
    assert!(fairness_gap(&[g1.to_vec()]) < 0.05, "{g1:?}");
    assert!(fairness_gap(&[g2.to_vec()]) < 0.05, "{g2:?}");

    let mut cfg = cfg;
    cfg.horizon = 20_000;
    cfg.record_agents = vec![0, 1];
    let t = run_closed_loop(&cfg, 78, 0.0).unwrap();
    let a: Vec<f64> = t.agent_series[0].iter().map(|&b| f64::from(u8::from(b))).collect();
    let b: Vec<f64> = t.agent_series[1].iter().map(|&b| f64::from(u8::from(b))).collect();
    let (ra, rb) = (long_run_average(&a).unwrap(), long_run_average(&b).unwrap());
    // two exchangeable agents; the commitment series decorrelate within a few
    // steps, so the binomial spread is a fair scale
    let sd = (0.25f64 / 20_000.0).sqrt();
    assert!((ra - rb).abs() < 8.0 * sd, "{ra} vs {rb}");
}
