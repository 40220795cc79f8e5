//! Gauss–Seidel power flow used as an independent oracle for the Newton
//! solver. Builds its own admittance matrix from the raw case data.

use loadagg::case_io::{BusKind, CaseData};
use num_complex::Complex64;

pub struct GsResult {
    pub v: Vec<Complex64>,
    pub losses_mw: f64,
    pub sweeps: usize,
}

fn ybus(case: &CaseData) -> Vec<Vec<Complex64>> {
    let n = case.buses.len();
    let idx = |id: usize| case.buses.iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (i, b) in case.buses.iter().enumerate() {
        y[i][i] += Complex64::new(b.shunt_g, b.shunt_b) / case.base_mva;
    }
    for br in case.branches.iter().filter(|b| b.in_service) {
        let (f, t) = (idx(br.from_bus), idx(br.to_bus));
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let bc = Complex64::new(0.0, br.b / 2.0);
        let a = Complex64::from_polar(br.tap_ratio, br.phase_shift.to_radians());
        y[f][f] += (ys + bc) / (a.norm_sqr());
        y[t][t] += ys + bc;
        y[f][t] -= ys / a.conj();
        y[t][f] -= ys / a;
    }
    y
}

/// Plain Gauss–Seidel sweeps until the largest voltage update is below `tol`.
pub fn solve(case: &CaseData, tol: f64, max_sweeps: usize) -> GsResult {
    let n = case.buses.len();
    let y = ybus(case);
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    let mut vset = vec![None; n];
    for (i, b) in case.buses.iter().enumerate() {
        s[i] -= Complex64::new(b.p_load, b.q_load) / case.base_mva;
        for g in case.gens.iter().filter(|g| g.in_service && g.bus == b.id) {
            s[i] += Complex64::new(g.p_out, g.q_out) / case.base_mva;
            if vset[i].is_none() {
                vset[i] = Some(g.v_set);
            }
        }
    }
    let mut v: Vec<Complex64> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| Complex64::from_polar(vset[i].unwrap_or(b.v_mag), b.v_ang.to_radians()))
        .collect();

    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut biggest: f64 = 0.0;
        for i in 0..n {
            let kind = case.buses[i].kind;
            if kind == BusKind::Slack {
                continue;
            }
            let sum: Complex64 = (0..n).filter(|&j| j != i).map(|j| y[i][j] * v[j]).sum();
            let mut si = s[i];
            let pv = kind == BusKind::Pv && vset[i].is_some();
            if pv {
                let inj = v[i] * (sum + y[i][i] * v[i]).conj();
                si = Complex64::new(s[i].re, inj.im);
            }
            let mut new = (si.conj() / v[i].conj() - sum) / y[i][i];
            if pv {
                new = Complex64::from_polar(vset[i].unwrap(), new.arg());
            }
            biggest = biggest.max((new - v[i]).norm());
            v[i] = new;
        }
        if biggest < tol || sweeps >= max_sweeps {
            break;
        }
    }

    let mut losses = 0.0;
    for i in 0..n {
        let current: Complex64 = (0..n).map(|j| y[i][j] * v[j]).sum();
        losses += (v[i] * current.conj()).re;
    }
    GsResult {
        v,
        losses_mw: losses * case.base_mva,
        sweeps,
    }
}
