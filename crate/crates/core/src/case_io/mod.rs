//! Matpower case files.
//!
//! Only the four matrices the power-flow routine needs are read: `baseMVA`,
//! `bus`, `gen` and `branch`. Any other `mpc.*` assignment (gencost, areas,
//! bus names, ...) is skipped and reported as a [`ParseWarning`].

mod parse;
mod validate;
mod write;

pub use parse::{parse_case, parse_case_with_warnings, ParseWarning};
pub use validate::{validate_case, ValidationReport, Violation, ViolationKind};
pub use write::write_case;

use thiserror::Error;

/// Text of the embedded IEEE 30-bus case (`data/case30.m`).
pub const CASE30_TEXT: &str = include_str!("../../data/case30.m");

/// Bus type code as used in the `BUS_TYPE` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
}

impl BusKind {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(BusKind::Pq),
            2 => Some(BusKind::Pv),
            3 => Some(BusKind::Slack),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Active load, MW.
    pub p_load: f64,
    /// Reactive load, MVAr.
    pub q_load: f64,
    /// Shunt conductance, MW demanded at 1 p.u.
    pub shunt_g: f64,
    /// Shunt susceptance, MVAr injected at 1 p.u.
    pub shunt_b: f64,
    pub v_mag: f64,
    /// Voltage angle, degrees.
    pub v_ang: f64,
    pub base_kv: f64,
    pub v_max: f64,
    pub v_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, p.u.
    pub b: f64,
    /// Off-nominal tap ratio. A file value of 0 is stored as 1.0.
    pub tap_ratio: f64,
    /// Phase shift, degrees.
    pub phase_shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_out: f64,
    pub q_out: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub v_set: f64,
    pub in_service: bool,
    pub p_max: f64,
    pub p_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
}

impl CaseData {
    /// Position of the bus with the given id in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Total active load, MW.
    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.p_load).sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required matrix `mpc.{0}`")]
    MissingMatrix(&'static str),
    #[error("non-numeric cell `{cell}` at line {line}")]
    NonNumeric { line: usize, cell: String },
    #[error("invalid {field} value {value} at line {line}")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("{element} at line {line} references unknown bus {bus}")]
    DanglingBus {
        line: usize,
        element: &'static str,
        bus: usize,
    },
}

/// The embedded IEEE 30-bus case.
pub fn builtin_case30() -> CaseData {
    parse_case(CASE30_TEXT).expect("embedded case30 parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case30_shape() {
        let case = builtin_case30();
        assert_eq!(case.buses.len(), 30);
        assert_eq!(case.branches.len(), 41);
        assert_eq!(case.gens.len(), 6);
        assert_eq!(case.base_mva, 100.0);
        let slack: Vec<_> = case
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .collect();
        assert_eq!(slack.len(), 1);
        assert_eq!(slack[0].id, 1);
    }

    #[test]
    fn case30_total_load() {
        // Sum of the PD column of the published file.
        let case = builtin_case30();
        assert!((case.total_load() - 189.2).abs() < 1e-9);
    }

    #[test]
    fn case30_is_stable_across_calls() {
        assert_eq!(builtin_case30(), builtin_case30());
        assert!(validate_case(&builtin_case30()).is_clean());
    }

    #[test]
    fn case30_gen_at_bus_two() {
        let case = builtin_case30();
        let g = case.gens.iter().find(|g| g.bus == 2).unwrap();
        assert_eq!(g.p_out, 60.97);
    }
}
