use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{BusKind, CaseData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonPositiveBaseMva,
    DuplicateBusId,
    NoSlackBus,
    MultipleSlackBuses,
    VoltageOutOfBounds,
    ZeroReactance,
    NegativeResistance,
    SelfLoop,
    DanglingReference,
    GeneratorOutOfLimits,
    Islanded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Element the violation refers to, e.g. `bus 3` or `branch 7`.
    pub subject: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::NonPositiveBaseMva => "base MVA must be positive",
            ViolationKind::DuplicateBusId => "duplicate bus id",
            ViolationKind::NoSlackBus => "no slack bus",
            ViolationKind::MultipleSlackBuses => "multiple slack buses",
            ViolationKind::VoltageOutOfBounds => "voltage magnitude outside [v_min, v_max]",
            ViolationKind::ZeroReactance => "in-service branch with zero reactance",
            ViolationKind::NegativeResistance => "negative branch resistance",
            ViolationKind::SelfLoop => "branch connects a bus to itself",
            ViolationKind::DanglingReference => "reference to unknown bus",
            ViolationKind::GeneratorOutOfLimits => "generator output outside [p_min, p_max]",
            ViolationKind::Islanded => "bus not connected to the slack bus",
        };
        write!(f, "{}: {}", self.subject, what)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, kind: ViolationKind, subject: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            subject: subject.into(),
        });
    }
}

/// Check the structural invariants a case must satisfy before it can be
/// solved. Never fails; an empty report means the case is simulable.
pub fn validate_case(case: &CaseData) -> ValidationReport {
    let mut report = ValidationReport::default();

    if !(case.base_mva > 0.0) {
        report.push(ViolationKind::NonPositiveBaseMva, "case");
    }

    let mut seen = HashSet::new();
    for b in &case.buses {
        if !seen.insert(b.id) {
            report.push(ViolationKind::DuplicateBusId, format!("bus {}", b.id));
        }
        if !(b.v_min <= b.v_mag && b.v_mag <= b.v_max) {
            report.push(ViolationKind::VoltageOutOfBounds, format!("bus {}", b.id));
        }
    }

    let slack: Vec<usize> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    match slack.len() {
        0 => report.push(ViolationKind::NoSlackBus, "case"),
        1 => {}
        _ => report.push(ViolationKind::MultipleSlackBuses, "case"),
    }

    for (i, br) in case.branches.iter().enumerate() {
        let subject = format!("branch {}", i + 1);
        if br.in_service && br.x == 0.0 {
            report.push(ViolationKind::ZeroReactance, subject.clone());
        }
        if br.r < 0.0 {
            report.push(ViolationKind::NegativeResistance, subject.clone());
        }
        if br.from_bus == br.to_bus {
            report.push(ViolationKind::SelfLoop, subject.clone());
        }
        if !seen.contains(&br.from_bus) || !seen.contains(&br.to_bus) {
            report.push(ViolationKind::DanglingReference, subject);
        }
    }

    for (i, g) in case.gens.iter().enumerate() {
        let subject = format!("generator {}", i + 1);
        if !seen.contains(&g.bus) {
            report.push(ViolationKind::DanglingReference, subject.clone());
        }
        if g.in_service && !(g.p_min <= g.p_out && g.p_out <= g.p_max) {
            report.push(ViolationKind::GeneratorOutOfLimits, subject);
        }
    }

    if slack.len() == 1 {
        for id in unreachable_buses(case, slack[0]) {
            report.push(ViolationKind::Islanded, format!("bus {id}"));
        }
    }

    report
}

fn unreachable_buses(case: &CaseData, root: usize) -> Vec<usize> {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for br in case.branches.iter().filter(|b| b.in_service) {
        adj.entry(br.from_bus).or_default().push(br.to_bus);
        adj.entry(br.to_bus).or_default().push(br.from_bus);
    }
    let mut visited = HashSet::from([root]);
    let mut stack = vec![root];
    while let Some(b) = stack.pop() {
        for &n in adj.get(&b).into_iter().flatten() {
            if visited.insert(n) {
                stack.push(n);
            }
        }
    }
    case.buses
        .iter()
        .map(|b| b.id)
        .filter(|id| !visited.contains(id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::parse_case;

    const TWO_BUS: &str = "mpc.baseMVA = 100;\n\
        mpc.bus = [1 3 0 0 0 0 1 1 0 135 1 1.1 0.9; 2 1 10 0 0 0 1 1 0 135 1 1.1 0.9];\n\
        mpc.gen = [1 0 0 100 -100 1 100 1 200 0];\n\
        mpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1];\n";

    #[test]
    fn valid_two_bus_is_clean() {
        assert!(validate_case(&parse_case(TWO_BUS).unwrap()).is_clean());
    }

    #[test]
    fn two_slack_buses() {
        let mut case = parse_case(TWO_BUS).unwrap();
        case.buses[1].kind = BusKind::Slack;
        let report = validate_case(&case);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::MultipleSlackBuses);
        assert!(report.violations[0].to_string().contains("multiple slack buses"));
    }

    #[test]
    fn zero_reactance_branch() {
        let mut case = parse_case(TWO_BUS).unwrap();
        case.branches[0].x = 0.0;
        let report = validate_case(&case);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::ZeroReactance);
    }

    #[test]
    fn zero_reactance_out_of_service_is_fine_but_islands() {
        let mut case = parse_case(TWO_BUS).unwrap();
        case.branches[0].x = 0.0;
        case.branches[0].in_service = false;
        let report = validate_case(&case);
        assert_eq!(report.count(ViolationKind::ZeroReactance), 0);
        assert_eq!(report.count(ViolationKind::Islanded), 1);
    }

    #[test]
    fn generator_limits_and_voltage() {
        let mut case = parse_case(TWO_BUS).unwrap();
        case.gens[0].p_out = 300.0;
        case.buses[0].v_mag = 1.2;
        let report = validate_case(&case);
        assert_eq!(report.count(ViolationKind::GeneratorOutOfLimits), 1);
        assert_eq!(report.count(ViolationKind::VoltageOutOfBounds), 1);
    }
}
