//! Experiment configuration files.
//!
//! TOML with four optional sections. Every key has a default; unknown keys
//! are rejected with their full path.
//!
//! ```toml
//! [experiment]
//! case = "lossless"          # "lossless", "case30", or a path to a .m file
//! n_agents = 20
//! reference = "half-capacity" # "half-capacity", "case-plus-losses", "fixed"
//! reference_mw = 10.0         # with reference = "fixed"
//! base_mw = 60.97             # with reference = "case-plus-losses"
//! placement_bus = 2
//! capacity = 1.0              # MW per agent; derived from r when omitted
//! horizon = 20000
//! repetitions = 50
//! seed = 1
//! pf_tol = 1e-8
//! pf_max_iter = 50
//!
//! [controller]
//! kind = "lag"                # "lag" or "pi"
//! kp = 0.05                   # default 0.5 / r
//! ki = 0.01                   # default 0.1 / r
//! deadband_fraction = 0.0
//! initial_states = [0.0, 10.0] # default [0, r]
//!
//! [agents]
//! xi = 1.0
//! x01 = 0.0
//! x02 = 0.0
//! record = []
//!
//! [analysis]
//! deadbands = [0.0, 0.01, 0.02, 0.05]
//! threshold_fraction = 0.01
//! out_dir = "out"
//! ```
//!
//! With `case` other than `lossless` the defaults switch to the 30-bus setup:
//! 50 agents, reference `case-plus-losses`, horizon 5000.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::{Table, Value};

use crate::case_io::{builtin_case30, parse_case};
use crate::control::ControllerKind;
use crate::powerflow::PfOptions;
use crate::sim::{Backend, ReferenceMode, SimConfig, CASE30_BUS2_MW};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("type mismatch at {path}: expected {expected}")]
    TypeMismatch { path: String, expected: &'static str },
    #[error("out of range at {path}: {msg}")]
    OutOfRange { path: String, msg: String },
    #[error("case file {path}: {msg}")]
    Case { path: String, msg: String },
}

/// Reads typed keys from one table and remembers which were consumed.
pub struct Section<'a> {
    prefix: String,
    table: Option<&'a Table>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    pub fn new(prefix: &str, table: Option<&'a Table>) -> Self {
        Section {
            prefix: prefix.to_string(),
            table,
            used: BTreeSet::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.used.insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn mismatch(&self, key: &str, expected: &'static str) -> ConfigError {
        ConfigError::TypeMismatch {
            path: self.path(key),
            expected,
        }
    }

    pub fn range(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::OutOfRange {
            path: self.path(key),
            msg: msg.into(),
        }
    }

    pub fn f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.mismatch(key, "number")),
        }
    }

    pub fn finite(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.f64(key)? {
            Some(v) if !v.is_finite() => Err(self.range(key, "must be finite")),
            v => Ok(v),
        }
    }

    pub fn u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(Value::Integer(_)) => Err(self.range(key, "must be non-negative")),
            Some(_) => Err(self.mismatch(key, "integer")),
        }
    }

    pub fn usize(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn str(&mut self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(self.mismatch(key, "string")),
        }
    }

    pub fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(f) if f.is_finite() => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(self.mismatch(key, "array of finite numbers")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(self.mismatch(key, "array of numbers")),
        }
    }

    pub fn usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    _ => Err(self.mismatch(key, "array of non-negative integers")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(self.mismatch(key, "array of integers")),
        }
    }

    /// Errors on the first key that was never read.
    pub fn finish(self) -> Result<(), ConfigError> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !self.used.contains(*k)) {
                return Err(ConfigError::UnknownKey(self.path(k)));
            }
        }
        Ok(())
    }
}

/// Splits a document into named sections, rejecting unknown ones.
pub fn sections<'a>(doc: &'a Table, known: &[&str]) -> Result<Vec<Option<&'a Table>>, ConfigError> {
    for (k, v) in doc {
        if !known.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        if !v.is_table() {
            return Err(ConfigError::TypeMismatch {
                path: k.clone(),
                expected: "table",
            });
        }
    }
    Ok(known.iter().map(|k| doc.get(*k).and_then(Value::as_table)).collect())
}

pub fn parse_document(text: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>()
        .map_err(|e| ConfigError::Syntax(e.to_string().lines().next().unwrap_or("").to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub deadbands: Vec<f64>,
    pub threshold_fraction: f64,
    pub out_dir: PathBuf,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            deadbands: vec![0.0, 0.01, 0.02, 0.05],
            threshold_fraction: 0.01,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub analysis: AnalysisConfig,
    /// `lossless`, `case30`, or the path the case was read from.
    pub case: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

/// Parses a config, reading case files relative to the working directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_in(text, Path::new("."))
}

/// Parses a config, reading case files relative to `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let doc = parse_document(text)?;
    let secs = sections(&doc, &["experiment", "controller", "agents", "analysis"])?;

    let mut ex = Section::new("experiment", secs[0]);
    let case = ex.str("case")?.unwrap_or("lossless").to_string();
    let case_data = match case.as_str() {
        "lossless" => None,
        "case30" => Some(builtin_case30()),
        path => {
            let full = base.join(path);
            let text = std::fs::read_to_string(&full).map_err(|e| ConfigError::Case {
                path: path.to_string(),
                msg: e.to_string(),
            })?;
            Some(parse_case(&text).map_err(|e| ConfigError::Case {
                path: path.to_string(),
                msg: e.to_string(),
            })?)
        }
    };
    let mut sim = match case_data {
        None => SimConfig::lossless(ControllerKind::Lag),
        Some(_) => SimConfig::case30(ControllerKind::Lag),
    };

    if let Some(n) = ex.usize("n_agents")? {
        if n < 2 || n % 2 != 0 {
            return Err(ex.range("n_agents", "must be even and at least 2"));
        }
        sim.n_agents = n;
    }
    let reference_mw = ex.finite("reference_mw")?;
    let base_mw = ex.finite("base_mw")?;
    let reference_kind = ex.str("reference")?;
    sim.reference = match (reference_kind, &case_data) {
        (Some("half-capacity"), _) | (None, None) => ReferenceMode::HalfCapacity,
        (Some("case-plus-losses"), _) | (None, Some(_)) => {
            if case_data.is_none() {
                return Err(ex.range("reference", "case-plus-losses needs a network case"));
            }
            ReferenceMode::CasePlusLosses {
                base_mw: base_mw.unwrap_or(CASE30_BUS2_MW),
            }
        }
        (Some("fixed"), _) => match reference_mw {
            Some(r) if r > 0.0 => ReferenceMode::Fixed(r),
            Some(_) => return Err(ex.range("reference_mw", "must be positive")),
            None => return Err(ex.range("reference_mw", "required with reference = \"fixed\"")),
        },
        (Some(other), _) => {
            return Err(ex.range(
                "reference",
                format!("unknown mode {other:?}; expected half-capacity, case-plus-losses or fixed"),
            ))
        }
    };
    if let Some(c) = ex.finite("capacity")? {
        if c <= 0.0 {
            return Err(ex.range("capacity", "must be positive"));
        }
        sim.agents.capacity = Some(c);
    }
    let placement_bus = ex.usize("placement_bus")?.unwrap_or(2);
    let mut pf = PfOptions::default();
    if let Some(t) = ex.finite("pf_tol")? {
        if t <= 0.0 {
            return Err(ex.range("pf_tol", "must be positive"));
        }
        pf.tol = t;
    }
    if let Some(m) = ex.usize("pf_max_iter")? {
        if m == 0 {
            return Err(ex.range("pf_max_iter", "must be at least 1"));
        }
        pf.max_iter = m;
    }
    if let Some(case) = case_data {
        if case.bus_index(placement_bus).is_none() {
            return Err(ex.range("placement_bus", format!("bus {placement_bus} not in case")));
        }
        sim.backend = Backend::Ac {
            case,
            placement_bus,
            pf,
        };
    }
    if let Some(h) = ex.usize("horizon")? {
        if h < 2 {
            return Err(ex.range("horizon", "must be at least 2"));
        }
        sim.horizon = h;
    }
    if let Some(r) = ex.usize("repetitions")? {
        if r < 1 {
            return Err(ex.range("repetitions", "must be at least 1"));
        }
        sim.repetitions = r;
    }
    match ex.raw("seed") {
        None => {}
        // negative values are the bit-cast form of seeds above i64::MAX
        Some(Value::Integer(i)) => sim.seed = *i as u64,
        Some(_) => return Err(ex.mismatch("seed", "integer")),
    }
    ex.finish()?;

    let mut ct = Section::new("controller", secs[1]);
    sim.controller.kind = match ct.str("kind")? {
        None | Some("lag") => ControllerKind::Lag,
        Some("pi") => ControllerKind::Pi,
        Some(other) => return Err(ct.range("kind", format!("unknown controller {other:?}; expected lag or pi"))),
    };
    sim.controller.kp = ct.finite("kp")?;
    sim.controller.ki = ct.finite("ki")?;
    if let Some(d) = ct.finite("deadband_fraction")? {
        if d < 0.0 {
            return Err(ct.range("deadband_fraction", "must be non-negative"));
        }
        sim.controller.deadband_fraction = d;
    }
    if let Some(s) = ct.f64_list("initial_states")? {
        if s.is_empty() {
            return Err(ct.range("initial_states", "must not be empty"));
        }
        sim.initial_states = Some(s);
    }
    ct.finish()?;

    let mut ag = Section::new("agents", secs[2]);
    if let Some(v) = ag.finite("xi")? {
        sim.agents.xi = v;
    }
    if let Some(v) = ag.finite("x01")? {
        sim.agents.x01 = v;
    }
    if let Some(v) = ag.finite("x02")? {
        sim.agents.x02 = v;
    }
    if let Some(r) = ag.usize_list("record")? {
        if let Some(bad) = r.iter().find(|&&i| i >= sim.n_agents) {
            return Err(ag.range("record", format!("agent {bad} out of range")));
        }
        sim.record_agents = r;
    }
    ag.finish()?;

    let mut an = Section::new("analysis", secs[3]);
    let mut analysis = AnalysisConfig::default();
    if let Some(d) = an.f64_list("deadbands")? {
        if d.is_empty() || d.iter().any(|&v| v < 0.0) {
            return Err(an.range("deadbands", "must be a non-empty list of non-negative fractions"));
        }
        analysis.deadbands = d;
    }
    if let Some(t) = an.finite("threshold_fraction")? {
        if t <= 0.0 {
            return Err(an.range("threshold_fraction", "must be positive"));
        }
        analysis.threshold_fraction = t;
    }
    if let Some(o) = an.str("out_dir")? {
        analysis.out_dir = PathBuf::from(o);
    }
    an.finish()?;

    Ok(ExperimentConfig { sim, analysis, case })
}

/// The fully resolved configuration as TOML. Parsing the output again gives
/// the same configuration; gains and initial states are written resolved.
pub fn effective_config(cfg: &ExperimentConfig, resolved: Option<&crate::sim::PreparedSim>) -> String {
    let s = &cfg.sim;
    let mut ex = Table::new();
    ex.insert("case".into(), cfg.case.clone().into());
    ex.insert("n_agents".into(), (s.n_agents as i64).into());
    match s.reference {
        ReferenceMode::HalfCapacity => {
            ex.insert("reference".into(), "half-capacity".into());
        }
        ReferenceMode::Fixed(r) => {
            ex.insert("reference".into(), "fixed".into());
            ex.insert("reference_mw".into(), r.into());
        }
        ReferenceMode::CasePlusLosses { base_mw } => {
            ex.insert("reference".into(), "case-plus-losses".into());
            ex.insert("base_mw".into(), base_mw.into());
        }
    }
    if let Backend::Ac { placement_bus, pf, .. } = &s.backend {
        ex.insert("placement_bus".into(), (*placement_bus as i64).into());
        ex.insert("pf_tol".into(), pf.tol.into());
        ex.insert("pf_max_iter".into(), (pf.max_iter as i64).into());
    }
    let capacity = s.agents.capacity.or(resolved.map(|p| p.capacity));
    if let Some(c) = capacity {
        ex.insert("capacity".into(), c.into());
    }
    ex.insert("horizon".into(), (s.horizon as i64).into());
    ex.insert("repetitions".into(), (s.repetitions as i64).into());
    // toml integers are i64; seeds above i64::MAX are stored bit-cast
    ex.insert("seed".into(), (s.seed as i64).into());

    let mut ct = Table::new();
    ct.insert("kind".into(), s.controller.kind.name().into());
    let kp = s.controller.kp.or(resolved.map(|p| p.kp));
    let ki = s.controller.ki.or(resolved.map(|p| p.ki));
    if let Some(v) = kp {
        ct.insert("kp".into(), v.into());
    }
    if let Some(v) = ki {
        ct.insert("ki".into(), v.into());
    }
    ct.insert("deadband_fraction".into(), s.controller.deadband_fraction.into());
    let states = s.initial_states.clone().or(resolved.map(|p| p.initial_states.clone()));
    if let Some(v) = states {
        ct.insert("initial_states".into(), Value::Array(v.into_iter().map(Value::from).collect()));
    }

    let mut ag = Table::new();
    ag.insert("xi".into(), s.agents.xi.into());
    ag.insert("x01".into(), s.agents.x01.into());
    ag.insert("x02".into(), s.agents.x02.into());
    ag.insert(
        "record".into(),
        Value::Array(s.record_agents.iter().map(|&i| Value::from(i as i64)).collect()),
    );

    let mut an = Table::new();
    an.insert(
        "deadbands".into(),
        Value::Array(cfg.analysis.deadbands.iter().map(|&v| Value::from(v)).collect()),
    );
    an.insert("threshold_fraction".into(), cfg.analysis.threshold_fraction.into());
    an.insert("out_dir".into(), cfg.analysis.out_dir.display().to_string().into());

    let mut doc = Table::new();
    doc.insert("experiment".into(), ex.into());
    doc.insert("controller".into(), ct.into());
    doc.insert("agents".into(), ag.into());
    doc.insert("analysis".into(), an.into());
    format!("# config digest {:016x}\n{doc}", s.digest())
}
