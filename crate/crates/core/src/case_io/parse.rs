use std::collections::HashSet;

use super::{Branch, Bus, BusKind, CaseData, CaseError, Generator};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub msg: String,
}

struct Row {
    line: usize,
    cells: Vec<f64>,
}

struct Matrix {
    rows: Vec<Row>,
}

enum State {
    Idle,
    /// Inside `mpc.<name> = [` or `{`; `skip` is set for matrices we ignore.
    Matrix {
        name: String,
        start: usize,
        close: char,
        skip: bool,
        rows: Vec<Row>,
    },
}

/// Parse a Matpower case file.
pub fn parse_case(text: &str) -> Result<CaseData, CaseError> {
    parse_case_with_warnings(text).map(|(case, _)| case)
}

/// Like [`parse_case`], also returning the list of skipped assignments.
pub fn parse_case_with_warnings(text: &str) -> Result<(CaseData, Vec<ParseWarning>), CaseError> {
    let mut warnings = Vec::new();
    let mut base_mva = None;
    let mut bus = None;
    let mut gen = None;
    let mut branch = None;
    let mut state = State::Idle;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        let mut rest = line.trim();

        loop {
            match &mut state {
                State::Idle => {
                    if rest.is_empty() {
                        break;
                    }
                    if is_preamble(rest) {
                        break;
                    }
                    let (name, rhs) = split_assignment(rest).ok_or_else(|| CaseError::Syntax {
                        line: line_no,
                        msg: format!("expected `mpc.<name> = ...`, found `{rest}`"),
                    })?;
                    let rhs = rhs.trim_start();
                    if let Some(body) = rhs.strip_prefix('[').or_else(|| rhs.strip_prefix('{')) {
                        let close = if rhs.starts_with('[') { ']' } else { '}' };
                        let skip = !matches!(name, "bus" | "gen" | "branch");
                        if skip {
                            warnings.push(ParseWarning {
                                line: line_no,
                                msg: format!("skipped matrix mpc.{name}"),
                            });
                        }
                        state = State::Matrix {
                            name: name.to_string(),
                            start: line_no,
                            close,
                            skip,
                            rows: Vec::new(),
                        };
                        rest = body;
                        continue;
                    }
                    let value = rhs.trim_end().trim_end_matches(';').trim();
                    if name == "baseMVA" {
                        let v = parse_number(value, line_no)?;
                        base_mva = Some(v);
                    } else if name != "version" {
                        warnings.push(ParseWarning {
                            line: line_no,
                            msg: format!("skipped assignment mpc.{name}"),
                        });
                    }
                    break;
                }
                State::Matrix {
                    name,
                    start,
                    close,
                    skip,
                    rows,
                    ..
                } => {
                    let (body, closed_at) = match rest.find(*close) {
                        Some(pos) => (&rest[..pos], Some(pos)),
                        None => (rest, None),
                    };
                    if rest.starts_with("mpc.") {
                        return Err(CaseError::Syntax {
                            line: *start,
                            msg: format!("matrix mpc.{name} is never closed"),
                        });
                    }
                    if !*skip {
                        for segment in body.split(';') {
                            let cells = segment
                                .split(|c: char| c.is_whitespace() || c == ',')
                                .filter(|s| !s.is_empty())
                                .map(|s| parse_number(s, line_no))
                                .collect::<Result<Vec<_>, _>>()?;
                            if !cells.is_empty() {
                                rows.push(Row {
                                    line: line_no,
                                    cells,
                                });
                            }
                        }
                    }
                    let Some(pos) = closed_at else { break };
                    let tail = rest[pos + 1..].trim();
                    if !(tail.is_empty() || tail == ";") {
                        return Err(CaseError::Syntax {
                            line: line_no,
                            msg: format!("unexpected `{tail}` after end of matrix"),
                        });
                    }
                    let done = Matrix {
                        rows: std::mem::take(rows),
                    };
                    match name.as_str() {
                        "bus" => bus = Some(done),
                        "gen" => gen = Some(done),
                        "branch" => branch = Some(done),
                        _ => {}
                    }
                    state = State::Idle;
                    break;
                }
            }
        }
    }

    if let State::Matrix { name, start, .. } = state {
        return Err(CaseError::Syntax {
            line: start,
            msg: format!("matrix mpc.{name} is never closed"),
        });
    }

    let base_mva = base_mva.ok_or(CaseError::MissingMatrix("baseMVA"))?;
    let bus = bus.ok_or(CaseError::MissingMatrix("bus"))?;
    let gen = gen.ok_or(CaseError::MissingMatrix("gen"))?;
    let branch = branch.ok_or(CaseError::MissingMatrix("branch"))?;

    let buses = bus
        .rows
        .iter()
        .map(bus_from_row)
        .collect::<Result<Vec<_>, _>>()?;
    let ids: HashSet<usize> = buses.iter().map(|b| b.id).collect();

    let gens = gen
        .rows
        .iter()
        .map(|row| {
            let g = gen_from_row(row)?;
            check_ref(&ids, g.bus, row.line, "generator")?;
            Ok(g)
        })
        .collect::<Result<Vec<_>, CaseError>>()?;

    let branches = branch
        .rows
        .iter()
        .map(|row| {
            let br = branch_from_row(row)?;
            check_ref(&ids, br.from_bus, row.line, "branch")?;
            check_ref(&ids, br.to_bus, row.line, "branch")?;
            Ok(br)
        })
        .collect::<Result<Vec<_>, CaseError>>()?;

    Ok((
        CaseData {
            base_mva,
            buses,
            branches,
            gens,
        },
        warnings,
    ))
}

fn check_ref(
    ids: &HashSet<usize>,
    bus: usize,
    line: usize,
    element: &'static str,
) -> Result<(), CaseError> {
    if ids.contains(&bus) {
        Ok(())
    } else {
        Err(CaseError::DanglingBus { line, element, bus })
    }
}

/// Removes a `%` comment, ignoring `%` inside single-quoted strings.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_str = !in_str,
            '%' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn is_preamble(line: &str) -> bool {
    line.starts_with("function ") || matches!(line, "end" | "end;" | "return" | "return;")
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix("mpc.")?;
    let (name, rhs) = rest.split_once('=')?;
    let name = name.trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    Some((name, rhs))
}

fn parse_number(cell: &str, line: usize) -> Result<f64, CaseError> {
    cell.parse::<f64>().map_err(|_| CaseError::NonNumeric {
        line,
        cell: cell.to_string(),
    })
}

fn need_cols(row: &Row, n: usize, what: &str) -> Result<(), CaseError> {
    if row.cells.len() < n {
        return Err(CaseError::Syntax {
            line: row.line,
            msg: format!(
                "{what} row has {} columns, expected at least {n}",
                row.cells.len()
            ),
        });
    }
    Ok(())
}

fn as_id(value: f64, line: usize, field: &'static str) -> Result<usize, CaseError> {
    if value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64 {
        return Err(CaseError::InvalidField { line, field, value });
    }
    Ok(value as usize)
}

fn as_status(value: f64, line: usize, field: &'static str) -> Result<bool, CaseError> {
    if value.fract() != 0.0 || !value.is_finite() {
        return Err(CaseError::InvalidField { line, field, value });
    }
    Ok(value > 0.0)
}

fn bus_from_row(row: &Row) -> Result<Bus, CaseError> {
    need_cols(row, BUS_COLS, "bus")?;
    let c = &row.cells;
    let kind = if c[1].fract() == 0.0 {
        BusKind::from_code(c[1] as i64)
    } else {
        None
    };
    let kind = kind.ok_or(CaseError::InvalidField {
        line: row.line,
        field: "BUS_TYPE",
        value: c[1],
    })?;
    Ok(Bus {
        id: as_id(c[0], row.line, "BUS_I")?,
        kind,
        p_load: c[2],
        q_load: c[3],
        shunt_g: c[4],
        shunt_b: c[5],
        // c[6] is AREA
        v_mag: c[7],
        v_ang: c[8],
        base_kv: c[9],
        // c[10] is ZONE
        v_max: c[11],
        v_min: c[12],
    })
}

fn gen_from_row(row: &Row) -> Result<Generator, CaseError> {
    need_cols(row, GEN_COLS, "gen")?;
    let c = &row.cells;
    Ok(Generator {
        bus: as_id(c[0], row.line, "GEN_BUS")?,
        p_out: c[1],
        q_out: c[2],
        q_max: c[3],
        q_min: c[4],
        v_set: c[5],
        // c[6] is MBASE
        in_service: as_status(c[7], row.line, "GEN_STATUS")?,
        p_max: c[8],
        p_min: c[9],
    })
}

fn branch_from_row(row: &Row) -> Result<Branch, CaseError> {
    need_cols(row, BRANCH_COLS, "branch")?;
    let c = &row.cells;
    Ok(Branch {
        from_bus: as_id(c[0], row.line, "F_BUS")?,
        to_bus: as_id(c[1], row.line, "T_BUS")?,
        r: c[2],
        x: c[3],
        b: c[4],
        // c[5..8] are RATE_A, RATE_B, RATE_C
        tap_ratio: if c[8] == 0.0 { 1.0 } else { c[8] },
        phase_shift: c[9],
        in_service: as_status(c[10], row.line, "BR_STATUS")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = "\
function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
    1 3 0  0 0 0 1 1 0 135 1 1.1 0.9;
    2 1 10 0 0 0 1 1 0 135 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
    1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;
];
";

    #[test]
    fn parses_two_bus() {
        let case = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.gens.len(), 1);
        assert_eq!(case.buses[1].p_load, 10.0);
        assert_eq!(case.branches[0].tap_ratio, 1.0);
        assert_eq!(case.buses[0].kind, BusKind::Slack);
    }

    #[test]
    fn missing_bus_matrix() {
        let text = "mpc.baseMVA = 100;\n\
            mpc.gen = [1 0 0 10 -10 1 100 1 50 0];\n\
            mpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];\n";
        assert_eq!(parse_case(text), Err(CaseError::MissingMatrix("bus")));
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let text = TWO_BUS.replace("2 1 10 0", "2 1 ten 0");
        match parse_case(&text) {
            Err(CaseError::NonNumeric { line, cell }) => {
                assert_eq!(line, 7);
                assert_eq!(cell, "ten");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_branch_reference() {
        let text = TWO_BUS.replace("1 2 0.01 0.1", "1 7 0.01 0.1");
        assert!(matches!(
            parse_case(&text),
            Err(CaseError::DanglingBus { bus: 7, element: "branch", .. })
        ));
    }

    #[test]
    fn unclosed_matrix() {
        let text = TWO_BUS.replace("    1 0 0 100 -100 1 100 1 200 0;\n];", "    1 0 0 100 -100 1 100 1 200 0;");
        assert!(matches!(parse_case(&text), Err(CaseError::Syntax { line: 9, .. })));
    }

    #[test]
    fn short_row_is_syntax_error() {
        let text = TWO_BUS.replace("1 0 0 100 -100 1 100 1 200 0;", "1 0 0 100;");
        assert!(matches!(parse_case(&text), Err(CaseError::Syntax { line: 10, .. })));
    }

    #[test]
    fn gencost_is_skipped_with_warning() {
        let text = format!("{TWO_BUS}mpc.gencost = [\n 2 0 0 3 0.1 1 0;\n];\n");
        let (case, warnings) = parse_case_with_warnings(&text).unwrap();
        assert_eq!(case.gens.len(), 1);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].msg.contains("gencost"));
    }

    #[test]
    fn inline_matrix_and_commas() {
        let text = "mpc.baseMVA = 100;\n\
            mpc.bus = [1, 3, 0, 0, 0, 0, 1, 1, 0, 135, 1, 1.1, 0.9; 2 1 5 1 0 0 1 1 0 135 1 1.1 0.9];\n\
            mpc.gen = [1 0 0 10 -10 1 100 1 50 0];\n\
            mpc.branch = [1 2 0 0.1 0 0 0 0 2 0 1];\n";
        let case = parse_case(text).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches[0].tap_ratio, 2.0);
    }

    #[test]
    fn bad_bus_type() {
        let text = TWO_BUS.replace("2 1 10 0", "2 4 10 0");
        assert!(matches!(
            parse_case(&text),
            Err(CaseError::InvalidField { field: "BUS_TYPE", .. })
        ));
    }

    #[test]
    fn comment_with_quote_in_string() {
        assert_eq!(strip_comment("mpc.version = '2%'; % x"), "mpc.version = '2%'; ");
    }
}
