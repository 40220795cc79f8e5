//! The closed loop: ensemble → network → filter → error → controller →
//! ensemble, repeated over a horizon and over seeded repetitions.
//!
//! Step order for k = 1..=horizon, starting from the half-on commitment u(0)
//! whose network evaluation gives P(0) and losses(0):
//!
//! 1. p(k) = Σ P(k−1)
//! 2. p̂(k) = (p(k) + p(k−1)) / 2 + losses(k−1)
//! 3. e(k) = r − p̂(k)
//! 4. π(k) from the controller, or π(k−1) if |e(k)| < δ
//! 5. u(k) sampled from the agents' response to π(k)
//! 6. P(k), losses(k) from the network backend
//!
//! Record k holds (p(k), p̂(k), e(k), π(k), x_c(k), losses(k−1), |u(k−1)|),
//! so `p = capacity · committed` and `e = r − p̂` hold row by row.

use std::fmt::Write as _;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{ensemble_output, sample_commitments_in_place, EnsembleError, EnsembleState, Logistic, Response};
use crate::case_io::CaseData;
use crate::control::{tracking_error, ControllerKind, ControllerState, FilterState};
use crate::powerflow::{apply_commitment, solve_power_flow, solve_power_flow_warm, PfError, PfOptions};

/// Net output of the published case30 generator at bus 2, MW.
pub const CASE30_BUS2_MW: f64 = 60.97;

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMode {
    /// r given in MW.
    Fixed(f64),
    /// r = N · capacity / 2 (r = N/2 for unit capacity).
    HalfCapacity,
    /// r = base + losses(0), fixed once at k = 0.
    CasePlusLosses { base_mw: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// Identity network: losses ≡ 0.
    Lossless,
    /// AC power flow with the ensemble as one generator at `placement_bus`.
    Ac {
        case: CaseData,
        placement_bus: usize,
        pf: PfOptions,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Defaults to 0.5 / r.
    pub kp: Option<f64>,
    /// Defaults to 0.1 / r.
    pub ki: Option<f64>,
    /// δ / r.
    pub deadband_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSpec {
    pub xi: f64,
    pub x01: f64,
    pub x02: f64,
    /// MW per committed agent. Defaults to 1 for [`ReferenceMode::HalfCapacity`],
    /// otherwise to 2r/N so that the half-on ensemble produces r.
    pub capacity: Option<f64>,
}

impl Default for AgentSpec {
    fn default() -> Self {
        AgentSpec {
            xi: 1.0,
            x01: 0.0,
            x02: 0.0,
            capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_agents: usize,
    pub reference: ReferenceMode,
    pub backend: Backend,
    pub horizon: usize,
    pub controller: ControllerSpec,
    pub agents: AgentSpec,
    /// Initial controller states x_c(0), MW. Defaults to `[0, r]`.
    pub initial_states: Option<Vec<f64>>,
    pub seed: u64,
    pub repetitions: usize,
    /// Agents whose full commitment series is kept in the trajectory.
    pub record_agents: Vec<usize>,
}

impl SimConfig {
    /// The lossless N = 20, r = N/2 setup.
    pub fn lossless(kind: ControllerKind) -> Self {
        SimConfig {
            n_agents: 20,
            reference: ReferenceMode::HalfCapacity,
            backend: Backend::Lossless,
            horizon: 20_000,
            controller: ControllerSpec {
                kind,
                kp: None,
                ki: None,
                deadband_fraction: 0.0,
            },
            agents: AgentSpec::default(),
            initial_states: None,
            seed: 1,
            repetitions: 50,
            record_agents: Vec::new(),
        }
    }

    /// IEEE 30-bus, N = 50 agents at bus 2, r = 60.97 MW + losses(0).
    pub fn case30(kind: ControllerKind) -> Self {
        SimConfig {
            n_agents: 50,
            reference: ReferenceMode::CasePlusLosses {
                base_mw: CASE30_BUS2_MW,
            },
            backend: Backend::Ac {
                case: crate::case_io::builtin_case30(),
                placement_bus: 2,
                pf: PfOptions::default(),
            },
            horizon: 5_000,
            ..Self::lossless(kind)
        }
    }

    /// Stable 64-bit digest of the configuration (FNV-1a of its debug form).
    pub fn digest(&self) -> u64 {
        let text = format!("{self:?}");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("power flow failed at step {step}: {source}")]
    PowerFlow { step: usize, source: PfError },
}

/// Which trajectory columns to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    Full,
    /// Only x_c; enough for mixing analysis on long horizons.
    ControllerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub x_c0: f64,
    pub reference: f64,
    pub config_digest: u64,
    /// Records are k = 1..=len.
    pub p: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub e: Vec<f64>,
    pub pi: Vec<f64>,
    pub x_c: Vec<f64>,
    pub losses: Vec<f64>,
    pub committed: Vec<u32>,
    /// `false` where the deadband froze the controller.
    pub updated: Vec<bool>,
    /// Per agent, number of steps it was committed (over u(0)..u(horizon−1)).
    pub agent_on_steps: Vec<u64>,
    /// Series for `SimConfig::record_agents`, same order.
    pub agent_series: Vec<Vec<bool>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_c.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.p.len() == self.x_c.len()
    }

    pub fn frozen_steps(&self) -> usize {
        self.updated.iter().filter(|&&u| !u).count()
    }

    /// Long-run fraction of time each agent was committed.
    pub fn agent_averages(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.agent_on_steps.iter().map(|&c| c as f64 / n).collect()
    }

    pub const CSV_HEADER: &'static str = "k,p,p_hat,e,pi,x_c,losses,committed";

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        if !self.is_full() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "trajectory was recorded without full retention",
            ));
        }
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let mut line = String::with_capacity(128);
        for i in 0..self.len() {
            line.clear();
            let _ = writeln!(
                line,
                "{},{},{},{},{},{},{},{}",
                i + 1,
                self.p[i],
                self.p_hat[i],
                self.e[i],
                self.pi[i],
                self.x_c[i],
                self.losses[i],
                self.committed[i]
            );
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Per-run seed: the `(repetition + 1)`-th output of a SplitMix64 generator
/// started at `master`. All initial-state labels of one repetition share the
/// stream, so label-to-label differences come from x_c(0) alone.
pub fn derive_seed(master: u64, repetition: usize) -> u64 {
    let mut z = master.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(repetition as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

enum NetworkModel {
    Lossless,
    /// losses(count) for every committed count 0..=N.
    LossTable(Vec<Result<f64, PfError>>),
}

/// A configuration with every default resolved, ready to run.
pub struct PreparedSim {
    pub config: SimConfig,
    pub reference: f64,
    pub capacity: f64,
    pub kp: f64,
    pub ki: f64,
    pub deadband: f64,
    pub initial_states: Vec<f64>,
    network: NetworkModel,
}

impl PreparedSim {
    pub fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        if cfg.horizon < 2 {
            return Err(SimError::Config("horizon must be at least 2".into()));
        }
        if cfg.repetitions < 1 {
            return Err(SimError::Config("repetitions must be at least 1".into()));
        }
        let n = cfg.n_agents;
        if n < 2 || n % 2 != 0 {
            return Err(SimError::Config(format!("n_agents must be even and >= 2, got {n}")));
        }
        if !(cfg.controller.deadband_fraction >= 0.0) {
            return Err(SimError::Config("deadband_fraction must be >= 0".into()));
        }
        if let Some(&bad) = cfg.record_agents.iter().find(|&&i| i >= n) {
            return Err(SimError::Config(format!("record_agents index {bad} out of range")));
        }

        let capacity = match (&cfg.reference, cfg.agents.capacity) {
            (_, Some(c)) => c,
            (ReferenceMode::HalfCapacity, None) => 1.0,
            (ReferenceMode::Fixed(r), None) => 2.0 * r / n as f64,
            (ReferenceMode::CasePlusLosses { base_mw }, None) => 2.0 * base_mw / n as f64,
        };
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(SimError::Config(format!("capacity must be positive, got {capacity}")));
        }

        let network = match &cfg.backend {
            Backend::Lossless => NetworkModel::Lossless,
            Backend::Ac {
                case,
                placement_bus,
                pf,
            } => NetworkModel::LossTable(loss_table(case, *placement_bus, pf, n, capacity)?),
        };
        let losses0 = match &network {
            NetworkModel::Lossless => 0.0,
            NetworkModel::LossTable(t) => t[n / 2]
                .clone()
                .map_err(|source| SimError::PowerFlow { step: 0, source })?,
        };

        let reference = match cfg.reference {
            ReferenceMode::Fixed(r) => r,
            ReferenceMode::HalfCapacity => capacity * n as f64 / 2.0,
            ReferenceMode::CasePlusLosses { base_mw } => base_mw + losses0,
        };
        if !(reference > 0.0) {
            return Err(SimError::Config(format!("reference must be positive, got {reference}")));
        }

        let kp = cfg.controller.kp.unwrap_or(0.5 / reference);
        let ki = cfg.controller.ki.unwrap_or(0.1 / reference);
        let deadband = cfg.controller.deadband_fraction * reference;
        let initial_states = cfg
            .initial_states
            .clone()
            .unwrap_or_else(|| vec![0.0, reference]);
        if initial_states.is_empty() {
            return Err(SimError::Config("at least one initial controller state is required".into()));
        }

        Ok(PreparedSim {
            config: cfg.clone(),
            reference,
            capacity,
            kp,
            ki,
            deadband,
            initial_states,
            network,
        })
    }

    fn initial_ensemble(&self) -> Result<EnsembleState, SimError> {
        let a = &self.config.agents;
        Ok(EnsembleState::half_split(
            self.config.n_agents,
            a.xi,
            a.x01,
            a.x02,
            self.capacity,
        )?)
    }

    fn losses(&self, committed: usize, step: usize) -> Result<f64, SimError> {
        match &self.network {
            NetworkModel::Lossless => Ok(0.0),
            NetworkModel::LossTable(t) => t[committed]
                .clone()
                .map_err(|source| SimError::PowerFlow { step, source }),
        }
    }

    /// Run one trajectory from controller state `x_c0` with the given stream seed.
    pub fn run(
        &self,
        seed: u64,
        x_c0: f64,
        retention: Retention,
        response: &impl Response,
    ) -> Result<Trajectory, SimError> {
        let horizon = self.config.horizon;
        let full = retention == Retention::Full;
        let cap = |n: usize| if full { n } else { 0 };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ensemble = self.initial_ensemble()?;
        let mut ctrl = ControllerState::new(
            self.config.controller.kind,
            self.kp,
            self.ki,
            x_c0,
            self.deadband,
        );
        let mut filter = FilterState::new(ensemble_output(&ensemble));

        let mut t = Trajectory {
            seed,
            x_c0,
            reference: self.reference,
            config_digest: self.config.digest(),
            p: Vec::with_capacity(cap(horizon)),
            p_hat: Vec::with_capacity(cap(horizon)),
            e: Vec::with_capacity(cap(horizon)),
            pi: Vec::with_capacity(cap(horizon)),
            x_c: Vec::with_capacity(horizon),
            losses: Vec::with_capacity(cap(horizon)),
            committed: Vec::with_capacity(cap(horizon)),
            updated: Vec::with_capacity(cap(horizon)),
            agent_on_steps: vec![0; ensemble.len()],
            agent_series: vec![Vec::with_capacity(horizon); self.config.record_agents.len()],
        };

        for k in 1..=horizon {
            let committed = ensemble.committed_count();
            let p = ensemble_output(&ensemble);
            let losses = self.losses(committed, k - 1)?;
            let p_hat = filter.step(p, losses);
            let e = tracking_error(self.reference, p_hat);
            let (pi, updated) = ctrl.step(e);

            for (n, &on) in t.agent_on_steps.iter_mut().zip(&ensemble.commitments) {
                *n += u64::from(on);
            }
            for (series, &i) in t.agent_series.iter_mut().zip(&self.config.record_agents) {
                series.push(ensemble.commitments[i]);
            }
            t.x_c.push(ctrl.x_c);
            if full {
                t.p.push(p);
                t.p_hat.push(p_hat);
                t.e.push(e);
                t.pi.push(pi);
                t.losses.push(losses);
                t.committed.push(committed as u32);
                t.updated.push(updated);
            }

            sample_commitments_in_place(&mut ensemble, pi, response, &mut rng);
        }
        Ok(t)
    }
}

fn loss_table(
    case: &CaseData,
    bus: usize,
    pf: &PfOptions,
    n: usize,
    capacity: f64,
) -> Result<Vec<Result<f64, PfError>>, SimError> {
    let commit = |count: usize| -> Vec<bool> { (0..n).map(|i| i < count).collect() };
    let base_case = apply_commitment(case, bus, &commit(n / 2), capacity)
        .map_err(|source| SimError::PowerFlow { step: 0, source })?;
    let base = solve_power_flow(&base_case, pf).map_err(|source| SimError::PowerFlow { step: 0, source })?;

    Ok((0..=n)
        .map(|count| {
            let c = apply_commitment(case, bus, &commit(count), capacity)?;
            let sol = solve_power_flow_warm(&c, pf, &base)?;
            if sol.converged {
                Ok(sol.losses)
            } else {
                Err(PfError::NotConverged)
            }
        })
        .collect())
}

/// One closed-loop run with the logistic agent response.
pub fn run_closed_loop(cfg: &SimConfig, seed: u64, x_c0: f64) -> Result<Trajectory, SimError> {
    PreparedSim::new(cfg)?.run(seed, x_c0, Retention::Full, &Logistic)
}

/// All runs of an experiment, ordered by (repetition, initial-state label).
#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub initial_states: Vec<f64>,
    pub repetitions: usize,
    pub reference: f64,
    pub horizon: usize,
    pub deadband_fraction: f64,
    runs: Vec<Result<Trajectory, SimError>>,
}

impl RunSet {
    pub fn get(&self, repetition: usize, label: usize) -> &Result<Trajectory, SimError> {
        &self.runs[repetition * self.initial_states.len() + label]
    }

    pub fn labels(&self) -> usize {
        self.initial_states.len()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// (repetition, label, result) in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Result<Trajectory, SimError>)> {
        let labels = self.labels();
        self.runs
            .iter()
            .enumerate()
            .map(move |(i, r)| (i / labels, i % labels, r))
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.is_err()).count()
    }
}

pub fn run_ensemble_experiment(cfg: &SimConfig) -> Result<RunSet, SimError> {
    run_ensemble_with(cfg, Retention::Full, &Logistic)
}

/// Runs every (repetition, label) pair, in parallel; results are ordered
/// independently of scheduling.
pub fn run_ensemble_with<R: Response + Sync>(
    cfg: &SimConfig,
    retention: Retention,
    response: &R,
) -> Result<RunSet, SimError> {
    let prepared = PreparedSim::new(cfg)?;
    let labels = prepared.initial_states.len();
    let runs = (0..cfg.repetitions * labels)
        .into_par_iter()
        .map(|i| {
            let (rep, label) = (i / labels, i % labels);
            prepared.run(
                derive_seed(cfg.seed, rep),
                prepared.initial_states[label],
                retention,
                response,
            )
        })
        .collect();
    Ok(RunSet {
        initial_states: prepared.initial_states.clone(),
        repetitions: cfg.repetitions,
        reference: prepared.reference,
        horizon: cfg.horizon,
        deadband_fraction: cfg.controller.deadband_fraction,
        runs,
    })
}

/// Mean of the second half of a series.
pub fn trailing_half_mean(series: &[f64]) -> f64 {
    let tail = &series[series.len() / 2..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Fixed;

    #[test]
    fn wiring_identity_on_short_run() {
        let mut cfg = SimConfig::lossless(ControllerKind::Lag);
        cfg.horizon = 2;
        let t = run_closed_loop(&cfg, 9, 0.0).unwrap();
        assert_eq!(t.len(), 2);
        // k = 1: p(1) = p(0) = 10 (half on), filter memory holds p(0)
        assert_eq!(t.p[0], 10.0);
        assert_eq!(t.p_hat[0], (t.p[0] + 10.0) / 2.0);
        assert_eq!(t.p_hat[1], (t.p[1] + t.p[0]) / 2.0);
        for i in 0..2 {
            assert_eq!(t.e[i], 10.0 - t.p_hat[i]);
        }
    }

    #[test]
    fn saturated_ensemble() {
        let mut cfg = SimConfig::lossless(ControllerKind::Pi);
        cfg.horizon = 50;
        let prepared = PreparedSim::new(&cfg).unwrap();
        let t = prepared.run(3, 0.0, Retention::Full, &Fixed(1.0)).unwrap();
        assert!(t.p[1..].iter().all(|&p| p == 20.0));
        assert!(t.committed[1..].iter().all(|&c| c == 20));
    }

    #[test]
    fn record_rows_are_consistent() {
        let mut cfg = SimConfig::lossless(ControllerKind::Lag);
        cfg.horizon = 500;
        cfg.controller.deadband_fraction = 0.05;
        let t = run_closed_loop(&cfg, 4, 10.0).unwrap();
        let r = t.reference;
        let mut prev_p = 10.0;
        let mut prev_pi = 0.0;
        let mut prev_xc = 10.0;
        for i in 0..t.len() {
            assert_eq!(t.p[i], t.committed[i] as f64);
            assert_eq!(t.p_hat[i], (t.p[i] + prev_p) / 2.0 + t.losses[i]);
            assert_eq!(t.e[i], r - t.p_hat[i]);
            if t.e[i].abs() < 0.5 {
                assert!(!t.updated[i]);
                assert_eq!(t.pi[i], prev_pi);
                assert_eq!(t.x_c[i], prev_xc);
            } else {
                let x = 0.99 * prev_xc + t.e[i];
                assert_eq!(t.x_c[i], x);
                assert_eq!(t.pi[i], (0.5 / r) * t.e[i] + (0.1 / r) * x);
            }
            prev_p = t.p[i];
            prev_pi = t.pi[i];
            prev_xc = t.x_c[i];
        }
        assert!(t.frozen_steps() > 0);
    }

    #[test]
    fn zero_deadband_never_freezes() {
        let mut cfg = SimConfig::lossless(ControllerKind::Pi);
        cfg.horizon = 2000;
        let t = run_closed_loop(&cfg, 5, 0.0).unwrap();
        assert_eq!(t.frozen_steps(), 0);
    }

    #[test]
    fn run_set_shape_and_order() {
        let mut cfg = SimConfig::lossless(ControllerKind::Lag);
        cfg.horizon = 20;
        cfg.repetitions = 3;
        let rs = run_ensemble_experiment(&cfg).unwrap();
        assert_eq!(rs.len(), 6);
        let order: Vec<_> = rs.iter().map(|(r, l, _)| (r, l)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]);
        let t = rs.get(1, 1).as_ref().unwrap();
        assert_eq!(t.seed, derive_seed(cfg.seed, 1));
        assert_eq!(t.x_c0, 10.0);
    }

    #[test]
    fn seeds_differ_by_repetition() {
        let seeds: std::collections::HashSet<_> = (0..1000).map(|r| derive_seed(7, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SimConfig::lossless(ControllerKind::Lag);
        cfg.n_agents = 7;
        assert!(matches!(PreparedSim::new(&cfg), Err(SimError::Config(_))));
        let mut cfg = SimConfig::lossless(ControllerKind::Lag);
        cfg.horizon = 1;
        assert!(matches!(PreparedSim::new(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn lossless_defaults() {
        let p = PreparedSim::new(&SimConfig::lossless(ControllerKind::Lag)).unwrap();
        assert_eq!(p.reference, 10.0);
        assert_eq!(p.capacity, 1.0);
        assert_eq!(p.kp, 0.05);
        assert_eq!(p.ki, 0.01);
        assert_eq!(p.initial_states, vec![0.0, 10.0]);
    }

    #[test]
    fn deadband_scales_with_reference() {
        let mut cfg = SimConfig::lossless(ControllerKind::Lag);
        cfg.controller.deadband_fraction = 0.05;
        assert_eq!(PreparedSim::new(&cfg).unwrap().deadband, 0.5);
    }
}
