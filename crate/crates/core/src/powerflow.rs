//! AC power flow by Newton–Raphson in polar coordinates.
//!
//! The Jacobian is assembled densely and factorised with a partial-pivoting
//! LU; cases of a few dozen buses solve in well under a millisecond.
//! Generator reactive limits are not enforced (no PV to PQ switching).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::case_io::{BusKind, CaseData, Generator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("branch {branch} has zero series impedance")]
    ZeroImpedance { branch: usize },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("power flow did not converge")]
    NotConverged,
}

/// Bus admittance matrix in coordinate form, sorted by (row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub dimension: usize,
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl AdmittanceMatrix {
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(row, col)))
            .map(|i| self.entries[i].2)
            .unwrap_or_default()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dimension, self.dimension);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn is_pattern_symmetric(&self) -> bool {
        self.entries
            .iter()
            .all(|&(r, c, _)| self.entries.binary_search_by(|&(rr, cc, _)| (rr, cc).cmp(&(c, r))).is_ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    /// Mismatch tolerance, p.u.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from 1∠0 instead of the case voltages.
    pub flat_start: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 50,
            flat_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub v_mag: Vec<f64>,
    /// Radians.
    pub v_ang: Vec<f64>,
    /// Net active injection per bus, MW.
    pub p_inj: Vec<f64>,
    /// Net reactive injection per bus, MVAr.
    pub q_inj: Vec<f64>,
    /// Σ p_inj, MW.
    pub losses: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the last evaluated mismatch vector, p.u.
    pub max_mismatch: f64,
}

impl PfSolution {
    fn voltages(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

fn bus_positions(case: &CaseData) -> HashMap<usize, usize> {
    case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
}

fn lookup(pos: &HashMap<usize, usize>, id: usize) -> Result<usize, PfError> {
    pos.get(&id).copied().ok_or(PfError::UnknownBus(id))
}

/// Assemble the bus admittance matrix (π branch model with off-nominal taps
/// and phase shifters on the from side, plus bus shunts).
pub fn build_admittance(case: &CaseData) -> Result<AdmittanceMatrix, PfError> {
    let n = case.buses.len();
    let pos = bus_positions(case);
    let mut acc: HashMap<(usize, usize), Complex64> = HashMap::new();

    for (i, b) in case.buses.iter().enumerate() {
        let y = Complex64::new(b.shunt_g, b.shunt_b) / case.base_mva;
        *acc.entry((i, i)).or_default() += y;
    }

    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let z = Complex64::new(br.r, br.x);
        if z.norm() == 0.0 {
            return Err(PfError::ZeroImpedance { branch: k + 1 });
        }
        let f = lookup(&pos, br.from_bus)?;
        let t = lookup(&pos, br.to_bus)?;
        let ys = z.inv();
        let half_b = Complex64::new(0.0, br.b / 2.0);
        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift.to_radians());

        let ytt = ys + half_b;
        let yff = ytt / (tap * tap.conj());
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;

        *acc.entry((f, f)).or_default() += yff;
        *acc.entry((t, t)).or_default() += ytt;
        *acc.entry((f, t)).or_default() += yft;
        *acc.entry((t, f)).or_default() += ytf;
    }

    let mut entries: Vec<_> = acc.into_iter().map(|((r, c), v)| (r, c, v)).collect();
    entries.sort_by_key(|&(r, c, _)| (r, c));
    Ok(AdmittanceMatrix {
        dimension: n,
        entries,
    })
}

/// Per-bus data derived from the case that the solver iterates against.
struct BusSetup {
    slack: usize,
    pv: Vec<usize>,
    pq: Vec<usize>,
    /// Specified complex injection, p.u.
    s_spec: Vec<Complex64>,
    /// Voltage set-point for buses with a regulating generator.
    v_set: Vec<Option<f64>>,
}

fn setup_buses(case: &CaseData) -> Result<BusSetup, PfError> {
    let pos = bus_positions(case);
    let n = case.buses.len();
    let mut s_spec: Vec<Complex64> = case
        .buses
        .iter()
        .map(|b| -Complex64::new(b.p_load, b.q_load) / case.base_mva)
        .collect();
    let mut v_set = vec![None; n];
    for g in case.gens.iter().filter(|g| g.in_service) {
        let i = lookup(&pos, g.bus)?;
        s_spec[i] += Complex64::new(g.p_out, g.q_out) / case.base_mva;
        v_set[i].get_or_insert(g.v_set);
    }

    let slacks: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind == BusKind::Slack)
        .collect();
    if slacks.len() != 1 {
        return Err(PfError::InvalidCase(format!(
            "expected exactly one slack bus, found {}",
            slacks.len()
        )));
    }
    let slack = slacks[0];
    let pv = (0..n)
        .filter(|&i| case.buses[i].kind == BusKind::Pv && v_set[i].is_some())
        .collect();
    let pq = (0..n)
        .filter(|&i| {
            let kind = case.buses[i].kind;
            kind == BusKind::Pq || (kind == BusKind::Pv && v_set[i].is_none())
        })
        .collect();
    Ok(BusSetup {
        slack,
        pv,
        pq,
        s_spec,
        v_set,
    })
}

/// Solve the power flow starting from the case voltages (or a flat start).
pub fn solve_power_flow(case: &CaseData, opts: &PfOptions) -> Result<PfSolution, PfError> {
    let v0: Vec<Complex64> = case
        .buses
        .iter()
        .map(|b| {
            if opts.flat_start {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(b.v_mag, b.v_ang.to_radians())
            }
        })
        .collect();
    newton(case, opts, v0)
}

/// Solve the power flow starting from a previous solution of a case with
/// the same buses.
pub fn solve_power_flow_warm(
    case: &CaseData,
    opts: &PfOptions,
    start: &PfSolution,
) -> Result<PfSolution, PfError> {
    if start.v_mag.len() != case.buses.len() {
        return Err(PfError::InvalidCase(
            "warm start has a different bus count".into(),
        ));
    }
    newton(case, opts, start.voltages())
}

fn newton(case: &CaseData, opts: &PfOptions, mut v: Vec<Complex64>) -> Result<PfSolution, PfError> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(PfError::InvalidCase("tol must be > 0 and max_iter >= 1".into()));
    }
    let y = build_admittance(case)?.to_dense();
    let setup = setup_buses(case)?;
    let n = case.buses.len();

    for (i, vi) in v.iter_mut().enumerate() {
        if let (Some(vs), true) = (setup.v_set[i], i == setup.slack || setup.pv.contains(&i)) {
            *vi = Complex64::from_polar(vs, vi.arg());
        }
    }

    let pvpq: Vec<usize> = setup.pv.iter().chain(&setup.pq).copied().collect();
    let npvpq = pvpq.len();
    let npq = setup.pq.len();
    let dim = npvpq + npq;

    let mut vm: Vec<f64> = v.iter().map(|c| c.norm()).collect();
    let mut va: Vec<f64> = v.iter().map(|c| c.arg()).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut norm_f;
    loop {
        let current = &y * DVector::from_column_slice(&v);
        let mis: Vec<Complex64> = (0..n)
            .map(|i| v[i] * current[i].conj() - setup.s_spec[i])
            .collect();
        let f = DVector::from_iterator(
            dim,
            pvpq.iter()
                .map(|&i| mis[i].re)
                .chain(setup.pq.iter().map(|&i| mis[i].im)),
        );
        norm_f = f.amax();
        if norm_f <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }

        // dS/dVa and dS/dVm, element-wise forms of the usual complex
        // derivative expressions.
        let ds_dva = |i: usize, j: usize| -> Complex64 {
            let diag = if i == j { current[i] } else { Complex64::default() };
            Complex64::i() * v[i] * (diag - y[(i, j)] * v[j]).conj()
        };
        let ds_dvm = |i: usize, j: usize| -> Complex64 {
            let vn_j = v[j] / vm[j];
            let mut s = v[i] * (y[(i, j)] * vn_j).conj();
            if i == j {
                s += current[i].conj() * vn_j;
            }
            s
        };

        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &j) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva(i, j).re;
            }
            for (c, &j) in setup.pq.iter().enumerate() {
                jac[(r, npvpq + c)] = ds_dvm(i, j).re;
            }
        }
        for (r, &i) in setup.pq.iter().enumerate() {
            for (c, &j) in pvpq.iter().enumerate() {
                jac[(npvpq + r, c)] = ds_dva(i, j).im;
            }
            for (c, &j) in setup.pq.iter().enumerate() {
                jac[(npvpq + r, npvpq + c)] = ds_dvm(i, j).im;
            }
        }

        iterations += 1;
        let dx = jac
            .lu()
            .solve(&(-f))
            .filter(|dx| dx.iter().all(|x| x.is_finite()))
            .ok_or(PfError::SingularJacobian { iteration: iterations })?;

        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in setup.pq.iter().enumerate() {
            vm[i] += dx[npvpq + k];
        }
        for i in 0..n {
            v[i] = Complex64::from_polar(vm[i], va[i]);
        }
    }

    let current = &y * DVector::from_column_slice(&v);
    let s: Vec<Complex64> = (0..n)
        .map(|i| v[i] * current[i].conj() * case.base_mva)
        .collect();
    let p_inj: Vec<f64> = s.iter().map(|c| c.re).collect();
    let q_inj: Vec<f64> = s.iter().map(|c| c.im).collect();
    let losses = p_inj.iter().sum();

    Ok(PfSolution {
        v_mag: vm,
        v_ang: va,
        p_inj,
        q_inj,
        losses,
        iterations,
        converged,
        max_mismatch: norm_f,
    })
}

/// Total active losses (generation minus load), MW.
pub fn total_losses(sol: &PfSolution) -> Result<f64, PfError> {
    if sol.converged {
        Ok(sol.losses)
    } else {
        Err(PfError::NotConverged)
    }
}

/// Active power dissipated in branch series resistances plus bus shunt
/// conductances, MW. Computed from branch currents, independently of the
/// bus injections.
pub fn branch_dissipation(case: &CaseData, sol: &PfSolution) -> Result<f64, PfError> {
    let pos = bus_positions(case);
    let v = sol.voltages();
    let mut total = 0.0;
    for br in case.branches.iter().filter(|b| b.in_service) {
        let f = lookup(&pos, br.from_bus)?;
        let t = lookup(&pos, br.to_bus)?;
        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift.to_radians());
        let ys = Complex64::new(br.r, br.x).inv();
        let i_series = ys * (v[f] / tap - v[t]);
        total += i_series.norm_sqr() * br.r;
    }
    total *= case.base_mva;
    for (i, b) in case.buses.iter().enumerate() {
        total += b.shunt_g * sol.v_mag[i] * sol.v_mag[i];
    }
    Ok(total)
}

/// Largest absolute active/reactive mismatch of `sol` against `case`,
/// recomputed from scratch, p.u.
pub fn power_mismatch(case: &CaseData, sol: &PfSolution) -> Result<f64, PfError> {
    let y = build_admittance(case)?.to_dense();
    let setup = setup_buses(case)?;
    let v = DVector::from_vec(sol.voltages());
    let current = &y * &v;
    let mis = |i: usize| v[i] * current[i].conj() - setup.s_spec[i];
    let p = setup.pv.iter().chain(&setup.pq).map(|&i| mis(i).re.abs());
    let q = setup.pq.iter().map(|&i| mis(i).im.abs());
    Ok(p.chain(q).fold(0.0, f64::max))
}

/// Copy of `case` with one extra generator at `placement_bus` injecting
/// `capacity` MW per committed agent.
pub fn apply_commitment(
    case: &CaseData,
    placement_bus: usize,
    commitments: &[bool],
    capacity: f64,
) -> Result<CaseData, PfError> {
    let committed = commitments.iter().filter(|&&c| c).count();
    with_aggregate_injection(case, placement_bus, capacity * committed as f64, capacity * commitments.len() as f64)
}

/// Copy of `case` with one extra generator at `bus` producing `p_mw`.
pub(crate) fn with_aggregate_injection(
    case: &CaseData,
    bus: usize,
    p_mw: f64,
    p_max: f64,
) -> Result<CaseData, PfError> {
    let idx = case.bus_index(bus).ok_or(PfError::UnknownBus(bus))?;
    let v_set = case
        .gens
        .iter()
        .find(|g| g.bus == bus && g.in_service)
        .map_or(case.buses[idx].v_mag, |g| g.v_set);
    let mut out = case.clone();
    out.gens.push(Generator {
        bus,
        p_out: p_mw,
        q_out: 0.0,
        q_max: 0.0,
        q_min: 0.0,
        v_set,
        in_service: true,
        p_max,
        p_min: 0.0,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::{builtin_case30, parse_case};

    fn two_bus(r: f64, x: f64, load: f64, tap: f64) -> CaseData {
        parse_case(&format!(
            "mpc.baseMVA = 100;\n\
             mpc.bus = [1 3 0 0 0 0 1 1 0 135 1 1.1 0.9; 2 1 {load} 0 0 0 1 1 0 135 1 1.1 0.9];\n\
             mpc.gen = [1 0 0 100 -100 1 100 1 200 0];\n\
             mpc.branch = [1 2 {r} {x} 0 0 0 0 {tap} 0 1];\n"
        ))
        .unwrap()
    }

    #[test]
    fn single_branch_admittance() {
        let y = build_admittance(&two_bus(0.0, 0.1, 0.0, 0.0)).unwrap();
        let ys = Complex64::new(0.0, 0.1).inv();
        assert_eq!(y.get(0, 1), -ys);
        assert_eq!(y.get(1, 0), -ys);
        assert_eq!(y.get(0, 0), ys);
        assert_eq!(y.get(1, 1), ys);
    }

    #[test]
    fn tap_scales_from_side_diagonal() {
        let y1 = build_admittance(&two_bus(0.0, 0.1, 0.0, 1.0)).unwrap();
        let y2 = build_admittance(&two_bus(0.0, 0.1, 0.0, 2.0)).unwrap();
        assert!((y2.get(0, 0) - y1.get(0, 0) / 4.0).norm() < 1e-15);
        assert_eq!(y2.get(1, 1), y1.get(1, 1));
    }

    #[test]
    fn case30_admittance_structure() {
        let y = build_admittance(&builtin_case30()).unwrap();
        assert_eq!(y.dimension, 30);
        assert!(y.is_pattern_symmetric());
        // 30 diagonals + 2 per distinct branch pair (case30 has no parallel lines)
        assert_eq!(y.entries.len(), 30 + 2 * 41);
    }

    #[test]
    fn zero_impedance_is_an_error() {
        let mut case = two_bus(0.0, 0.1, 0.0, 0.0);
        case.branches[0].x = 0.0;
        assert_eq!(
            build_admittance(&case),
            Err(PfError::ZeroImpedance { branch: 1 })
        );
    }

    #[test]
    fn no_load_fixed_point() {
        let sol = solve_power_flow(&two_bus(0.0, 0.1, 0.0, 0.0), &PfOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 2);
        assert_eq!(total_losses(&sol).unwrap(), 0.0);
        assert!(sol.v_mag.iter().all(|&m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn lossless_line_has_no_losses() {
        let sol = solve_power_flow(&two_bus(0.0, 0.1, 10.0, 0.0), &PfOptions::default()).unwrap();
        assert!(total_losses(&sol).unwrap().abs() < 1e-9);
    }

    #[test]
    fn non_converged_solution_is_returned() {
        let opts = PfOptions {
            max_iter: 1,
            ..PfOptions::default()
        };
        let sol = solve_power_flow(&builtin_case30(), &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(total_losses(&sol), Err(PfError::NotConverged));
    }

    #[test]
    fn commitment_adds_one_generator() {
        let case = builtin_case30();
        let none = apply_commitment(&case, 2, &[false; 50], 2.4388).unwrap();
        assert_eq!(none.gens.len(), case.gens.len() + 1);
        assert_eq!(none.gens.last().unwrap().p_out, 0.0);
        assert_eq!(&none.gens[..6], &case.gens[..]);

        let mut half = vec![false; 50];
        half[25..].iter_mut().for_each(|c| *c = true);
        let half = apply_commitment(&case, 2, &half, 2.4388).unwrap();
        assert!((half.gens.last().unwrap().p_out - 60.97).abs() < 1e-9);

        let all = apply_commitment(&case, 2, &[true; 50], 2.4388).unwrap();
        assert!((all.gens.last().unwrap().p_out - 121.94).abs() < 1e-9);

        assert_eq!(apply_commitment(&case, 99, &[true], 1.0), Err(PfError::UnknownBus(99)));
    }
}
