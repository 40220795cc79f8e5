use std::fmt::Write;

use super::CaseData;

/// Serialise a case back to Matpower syntax.
///
/// Columns not stored in [`CaseData`] (AREA, ZONE, MBASE, RATE_A..C) are
/// written with neutral values. Floats use the shortest representation that
/// parses back to the same bits, so `parse_case(write_case(c)) == c`.
pub fn write_case(case: &CaseData) -> String {
    let mut out = String::new();
    out.push_str("function mpc = case\nmpc.version = '2';\n");
    let _ = writeln!(out, "mpc.baseMVA = {};", case.base_mva);

    out.push_str("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n");
    for b in &case.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t{}\t{};",
            b.id,
            b.kind.code(),
            b.p_load,
            b.q_load,
            b.shunt_g,
            b.shunt_b,
            b.v_mag,
            b.v_ang,
            b.base_kv,
            b.v_max,
            b.v_min
        );
    }
    out.push_str("];\n\n");

    out.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n");
    for g in &case.gens {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            g.bus,
            g.p_out,
            g.q_out,
            g.q_max,
            g.q_min,
            g.v_set,
            case.base_mva,
            u8::from(g.in_service),
            g.p_max,
            g.p_min
        );
    }
    out.push_str("];\n\n");

    out.push_str("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\nmpc.branch = [\n");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{};",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b,
            br.tap_ratio,
            br.phase_shift,
            u8::from(br.in_service)
        );
    }
    out.push_str("];\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::{builtin_case30, parse_case};

    #[test]
    fn case30_round_trip() {
        let case = builtin_case30();
        assert_eq!(parse_case(&write_case(&case)).unwrap(), case);
    }
}
