//! Command-line driver: `simulate`, `mixing`, `powerflow` and `check`.
//!
//! Failures print one line `error: <category>: <message>` on stderr and exit
//! with status 2 for usage errors and 1 for everything else.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::Logistic;
use crate::case_io::{builtin_case30, parse_case, CaseData};
use crate::config::{effective_config, parse_config_in, parse_document, ConfigError, ExperimentConfig, Section};
use crate::control::{ControllerKind, ControllerState};
use crate::ergodics::{mixing_time, MixingReport};
use crate::filippov::{
    check_average_contraction, check_matching_condition, check_measure_preservation, contraction_preset,
    convexify, piecewise_preset, probe_incremental_iss, IssVerdict, MeasureCheck, MeasureSpec, SamplingBox,
    SetValue,
};
use crate::powerflow::{solve_power_flow, PfOptions};
use crate::sim::{run_ensemble_with, trailing_half_mean, PreparedSim, Retention, RunSet};

/// Overrides the configured output directory (a `--out` flag still wins).
pub const OUT_DIR_ENV: &str = "LOADAGG_OUT";

#[derive(Debug, Parser)]
#[command(name = "loadagg", version, about = "Closed-loop load aggregation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed loop and write trajectory CSVs.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every run instead of repetition 0 only.
        #[arg(long)]
        all_runs: bool,
    },
    /// Mixing time of the controller state for each deadband fraction.
    Mixing {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated deadband fractions of r.
        #[arg(long, value_delimiter = ',')]
        deadbands: Option<Vec<f64>>,
    },
    /// Solve a power flow and print total losses.
    Powerflow {
        /// `case30` or a path to a Matpower case file.
        #[arg(long, default_value = "case30")]
        case: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long)]
        flat_start: bool,
        /// Write per-bus results to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the set-valued / stability checkers.
    Check {
        #[arg(value_enum)]
        kind: CheckKind,
        /// TOML scenario with the checker's parameters.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckKind {
    Convexify,
    Measure,
    Matching,
    Contraction,
    Iss,
}

#[derive(Debug)]
struct Failure {
    category: &'static str,
    message: String,
}

impl Failure {
    fn new(category: &'static str, message: impl ToString) -> Self {
        Failure {
            category,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new("config", e)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("io", format!("{}: {e}", path.display()))
}

/// Parse `argv` (including the program name) and run. Returns the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e
                .to_string()
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("error: usage: {first}");
            return 2;
        }
    };
    let mut stdout = String::new();
    match run(cli, &mut stdout) {
        Ok(()) => {
            print!("{stdout}");
            0
        }
        Err(f) => {
            print!("{stdout}");
            eprintln!("error: {}: {}", f.category, f.message.replace('\n', " "));
            1
        }
    }
}

fn run(cli: Cli, out: &mut String) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out: dir,
            all_runs,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            simulate(&cfg, &output_dir(&cfg, dir), all_runs, out)
        }
        Command::Mixing {
            config,
            seed,
            out: dir,
            deadbands,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(d) = deadbands {
                if d.is_empty() || d.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Failure::new("usage", "--deadbands must be non-negative fractions"));
                }
                cfg.analysis.deadbands = d;
            }
            mixing(&cfg, &output_dir(&cfg, dir), out)
        }
        Command::Powerflow {
            case,
            tol,
            max_iter,
            flat_start,
            out: csv,
        } => powerflow(&case, PfOptions { tol, max_iter, flat_start }, csv.as_deref(), out),
        Command::Check { kind, scenario, seed } => check(kind, scenario.as_deref(), seed, out),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        None => parse_config_in("", Path::new("."))?,
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            parse_config_in(&text, p.parent().unwrap_or(Path::new(".")))?
        }
    };
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.analysis.out_dir.clone())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(io_err(path))
}

fn prepare(cfg: &ExperimentConfig, dir: &Path) -> Result<PreparedSim, Failure> {
    let prepared = PreparedSim::new(&cfg.sim).map_err(|e| Failure::new("sim", e))?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&dir.join("effective_config.toml"), &effective_config(cfg, Some(&prepared)))?;
    Ok(prepared)
}

fn simulate(cfg: &ExperimentConfig, dir: &Path, all_runs: bool, out: &mut String) -> Result<(), Failure> {
    let prepared = prepare(cfg, dir)?;
    let runs = run_ensemble_with(&cfg.sim, Retention::Full, &Logistic).map_err(|e| Failure::new("sim", e))?;

    let mut summary = String::from("rep,label,x_c0,seed,status,mean_p_hat_tail,frozen_steps\n");
    let half = cfg.sim.n_agents / 2;
    for (rep, label, r) in runs.iter() {
        match r {
            Ok(t) => {
                let _ = writeln!(
                    summary,
                    "{rep},{label},{},{},ok,{},{}",
                    t.x_c0,
                    t.seed,
                    trailing_half_mean(&t.p_hat),
                    t.frozen_steps()
                );
                if rep == 0 || all_runs {
                    let path = dir.join(format!("trajectory_r{rep}_l{label}.csv"));
                    write(&path, &t.to_csv_string())?;
                    let mut agents = String::from("agent,kind,on_fraction\n");
                    for (i, a) in t.agent_averages().iter().enumerate() {
                        let kind = if i < half { "G1" } else { "G2" };
                        let _ = writeln!(agents, "{i},{kind},{a}");
                    }
                    write(&dir.join(format!("agents_r{rep}_l{label}.csv")), &agents)?;
                }
            }
            Err(e) => {
                let _ = writeln!(summary, "{rep},{label},{},,failed: {},,", runs.initial_states[label], e);
            }
        }
    }
    write(&dir.join("summary.csv"), &summary)?;
    let _ = writeln!(
        out,
        "runs={} failed={} reference={} out={}",
        runs.len(),
        runs.failures(),
        prepared.reference,
        dir.display()
    );
    Ok(())
}

fn mixing(cfg: &ExperimentConfig, dir: &Path, out: &mut String) -> Result<(), Failure> {
    prepare(cfg, dir)?;
    let mut reports: Vec<MixingReport> = Vec::new();
    for &fraction in &cfg.analysis.deadbands {
        let mut sim = cfg.sim.clone();
        sim.controller.deadband_fraction = fraction;
        let runs: RunSet =
            run_ensemble_with(&sim, Retention::ControllerState, &Logistic).map_err(|e| Failure::new("sim", e))?;
        let report = mixing_time(&runs, cfg.analysis.threshold_fraction).map_err(|e| Failure::new("mixing", e))?;
        reports.push(report);
    }

    let mut table = String::from("deadband_fraction,mixing_time,delta_ref\n");
    let mut trace = String::from("k,pair,W\n");
    for r in &reports {
        let time = r.mixing_time.map_or("NA".to_string(), |t| t.to_string());
        let _ = writeln!(table, "{},{time},{}", r.deadband_fraction, r.min_delta());
        let _ = writeln!(
            out,
            "deadband_fraction={} mixing_time={time} delta_ref={}{}",
            r.deadband_fraction,
            r.min_delta(),
            if r.degenerate { " degenerate" } else { "" }
        );
        for (p, &(a, b)) in r.pairs.iter().enumerate() {
            for (k, w) in r.trace[p].iter().enumerate() {
                let _ = writeln!(trace, "{},{a}-{b}@{},{w}", k + 1, r.deadband_fraction);
            }
        }
    }
    write(&dir.join("mixing.csv"), &table)?;
    write(&dir.join("wasserstein_trace.csv"), &trace)
}

fn load_case(spec: &str) -> Result<CaseData, Failure> {
    if spec == "case30" {
        return Ok(builtin_case30());
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_case(&text).map_err(|e| Failure::new("case", e))
}

fn powerflow(case: &str, opts: PfOptions, csv: Option<&Path>, out: &mut String) -> Result<(), Failure> {
    let data = load_case(case)?;
    let sol = solve_power_flow(&data, &opts).map_err(|e| Failure::new("powerflow", e))?;
    let _ = writeln!(
        out,
        "losses_mw={} iterations={} converged={} max_mismatch={:e}",
        sol.losses, sol.iterations, sol.converged, sol.max_mismatch
    );
    if let Some(path) = csv {
        let mut text = String::from("bus,v_mag,v_ang_deg,p_inj_mw,q_inj_mvar\n");
        for (i, b) in data.buses.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                b.id,
                sol.v_mag[i],
                sol.v_ang[i].to_degrees(),
                sol.p_inj[i],
                sol.q_inj[i]
            );
        }
        write(path, &text)?;
    }
    if !sol.converged {
        return Err(Failure::new("powerflow", "did not converge"));
    }
    Ok(())
}

fn check(kind: CheckKind, scenario: Option<&Path>, seed: Option<u64>, out: &mut String) -> Result<(), Failure> {
    let doc = match scenario {
        None => toml::Table::new(),
        Some(p) => parse_document(&fs::read_to_string(p).map_err(io_err(p))?)?,
    };
    let mut s = Section::new("", Some(&doc));
    let fail = |e: crate::filippov::FilippovError| Failure::new("check", e);
    let seed = match seed {
        Some(v) => v,
        None => s.u64("seed")?.unwrap_or(1),
    };
    let verdict = |pass: bool| if pass { "pass" } else { "fail" };

    match kind {
        CheckKind::Convexify => {
            let map = piecewise_preset(s.str("map")?.unwrap_or("deadband"), s.finite("param")?.unwrap_or(0.5))
                .map_err(fail)?;
            let points = s.f64_list("points")?.unwrap_or_else(|| vec![0.5, 1.0]);
            s.finish()?;
            for x in points {
                match convexify(&map, &[x]) {
                    SetValue::Point(p) => {
                        let _ = writeln!(out, "x={x} value=point {}", p[0]);
                    }
                    SetValue::Segment(a, b) => {
                        let _ = writeln!(out, "x={x} value=segment {} {}", a[0].min(b[0]), a[0].max(b[0]));
                    }
                }
            }
        }
        CheckKind::Measure => {
            let map = piecewise_preset(s.str("map")?.unwrap_or("shift"), s.finite("param")?.unwrap_or(0.3))
                .map_err(fail)?;
            let lo = s.finite("lo")?.unwrap_or(0.0);
            let hi = s.finite("hi")?.unwrap_or(1.0);
            let scaled = (s.finite("alpha_minus")?, s.finite("alpha_plus")?);
            let defaults = MeasureCheck::default();
            let cfg = MeasureCheck {
                n_sets: s.usize("n_sets")?.unwrap_or(defaults.n_sets),
                n_samples: s.usize("n_samples")?.unwrap_or(defaults.n_samples),
                k: s.usize("k")?.unwrap_or(defaults.k),
                cells_per_dim: s.usize("cells_per_dim")?.unwrap_or(defaults.cells_per_dim),
                seed,
            };
            s.finish()?;
            let measure = match scaled {
                (None, None) => MeasureSpec::uniform(vec![lo], vec![hi]),
                (am, ap) => MeasureSpec::piecewise_scaled(
                    vec![lo],
                    vec![hi],
                    am.unwrap_or(1.0),
                    ap.unwrap_or(1.0),
                    map.event_fn.clone(),
                ),
            };
            let r = check_measure_preservation(&map, &measure, &cfg).map_err(fail)?;
            for (i, set) in r.sets.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "set={i} mu_a={} image_lower={} image_upper={} band={} {}",
                    set.mu_set,
                    set.mu_image_lower,
                    set.mu_image_upper,
                    set.band,
                    verdict(set.pass)
                );
            }
            let _ = writeln!(out, "verdict={}", verdict(r.pass));
        }
        CheckKind::Matching => {
            let map = piecewise_preset(s.str("map")?.unwrap_or("split-affine"), s.finite("param")?.unwrap_or(0.0))
                .map_err(fail)?;
            let am = s.finite("alpha_minus")?.unwrap_or(1.0);
            let ap = s.finite("alpha_plus")?.unwrap_or(1.0);
            let points = s.f64_list("points")?.unwrap_or_else(|| vec![0.0]);
            let tol = s.finite("tol")?.unwrap_or(1e-9);
            s.finish()?;
            let pts: Vec<Vec<f64>> = points.into_iter().map(|p| vec![p]).collect();
            let r = check_matching_condition(&map, am, ap, &pts, tol).map_err(fail)?;
            let _ = writeln!(out, "max_residual={} verdict={}", r.max_residual, verdict(r.pass));
        }
        CheckKind::Contraction => {
            let family = contraction_preset(s.str("family")?.unwrap_or("affine-pair")).map_err(fail)?;
            let signals = s.f64_list("signals")?.unwrap_or_else(|| vec![0.0]);
            let pairs = s.usize("pairs")?.unwrap_or(1000);
            let lo = s.finite("lo")?.unwrap_or(-8.0);
            let hi = s.finite("hi")?.unwrap_or(8.0);
            let margin = s.finite("margin")?.unwrap_or(0.0);
            s.finish()?;
            let domain = SamplingBox::cube(family.dim, lo, hi);
            let r = check_average_contraction(&family, &signals, pairs, &domain, margin, seed).map_err(fail)?;
            let _ = writeln!(out, "max_ratio={} verdict={}", r.max_ratio, verdict(r.pass));
        }
        CheckKind::Iss => {
            let kind = match s.str("controller")?.unwrap_or("lag") {
                "lag" => ControllerKind::Lag,
                "pi" => ControllerKind::Pi,
                other => return Err(s.range("controller", format!("unknown controller {other:?}")).into()),
            };
            let kp = s.finite("kp")?.unwrap_or(0.05);
            let ki = s.finite("ki")?.unwrap_or(0.01);
            let xc_a = s.finite("xc_a")?.unwrap_or(0.0);
            let xc_b = s.finite("xc_b")?.unwrap_or(10.0);
            let k = s.usize("k")?.unwrap_or(500);
            let amplitude = s.finite("input_amplitude")?.unwrap_or(5.0);
            let tol = s.finite("tol")?.unwrap_or(1e-9);
            s.finish()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<f64> = (0..k)
                .map(|_| amplitude * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let template = ControllerState::new(kind, kp, ki, 0.0, 0.0);
            let r = probe_incremental_iss(&template, &inputs, &inputs, xc_a, xc_b, k, tol).map_err(fail)?;
            let verdict = match r.verdict {
                IssVerdict::Contractive => "contractive",
                IssVerdict::NonContractive => "non-contractive",
                IssVerdict::Inconclusive => "inconclusive",
            };
            let _ = writeln!(
                out,
                "rho={} final_gap={} deviation_from_leak={:e} verdict={verdict}",
                r.rho,
                r.gaps[k],
                r.deviation_from_leak
            );
        }
    }
    Ok(())
}
