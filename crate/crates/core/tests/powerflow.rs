mod common;

use common::gauss_seidel;
use loadagg::case_io::{builtin_case30, parse_case, BusKind, CaseData};
use loadagg::powerflow::{
    branch_dissipation, power_mismatch, solve_power_flow, total_losses, PfOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Losses of the case30 base case from a reference (PYPOWER 5.1, Matpower
/// port) run with PF_TOL = 1e-10, Q limits not enforced.
const CASE30_REFERENCE_LOSSES_MW: f64 = 2.4438031367774897;

fn two_bus_lossy() -> CaseData {
    parse_case(
        "mpc.baseMVA = 100;\n\
         mpc.bus = [1 3 0 0 0 0 1 1 0 135 1 1.1 0.9; 2 1 10 0 0 0 1 1 0 135 1 1.1 0.9];\n\
         mpc.gen = [1 0 0 100 -100 1 100 1 200 0];\n\
         mpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1];\n",
    )
    .unwrap()
}

#[test]
fn two_bus_losses_match_gauss_seidel() {
    let case = two_bus_lossy();
    let nr = solve_power_flow(&case, &PfOptions::default()).unwrap();
    let gs = gauss_seidel::solve(&case, 1e-14, 100_000);
    assert!(nr.converged);
    let nr_losses = total_losses(&nr).unwrap();
    assert!(nr_losses > 0.0);
    assert!((nr_losses - gs.losses_mw).abs() < 1e-6, "{nr_losses} vs {}", gs.losses_mw);
    let diss = branch_dissipation(&case, &nr).unwrap();
    assert!((nr_losses - diss).abs() < 1e-9);
}

#[test]
fn case30_base_case() {
    let case = builtin_case30();
    let sol = solve_power_flow(&case, &PfOptions::default()).unwrap();
    assert!(sol.converged);
    assert!(sol.iterations <= 10, "{} iterations", sol.iterations);
    let losses = total_losses(&sol).unwrap();
    assert!((losses - CASE30_REFERENCE_LOSSES_MW).abs() < 1e-6, "{losses}");

    let gs = gauss_seidel::solve(&case, 1e-13, 200_000);
    assert!((losses - gs.losses_mw).abs() < 1e-6, "{losses} vs {}", gs.losses_mw);
    for (i, v) in gs.v.iter().enumerate() {
        assert!((v.norm() - sol.v_mag[i]).abs() < 1e-7);
    }
}

#[test]
fn case30_slack_absorbs_imbalance_and_pv_holds_voltage() {
    let case = builtin_case30();
    let sol = solve_power_flow(&case, &PfOptions::default()).unwrap();
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.kind != BusKind::Pq {
            let g = case.gens.iter().find(|g| g.bus == bus.id).unwrap();
            assert!((sol.v_mag[i] - g.v_set).abs() < 1e-12);
        }
    }
    let gen_total: f64 = case.gens.iter().map(|g| g.p_out).sum();
    let slack_p = sol.p_inj[0];
    // slack picks up everything the other generators and loads leave over
    assert!((slack_p - (case.total_load() + sol.losses - (gen_total - 23.54))).abs() < 1e-6);
}

#[test]
fn mismatch_contract_and_loss_identity_under_perturbation() {
    let base = builtin_case30();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let opts = PfOptions::default();
    for _ in 0..20 {
        let mut case = base.clone();
        for bus in case.buses.iter_mut() {
            let f: f64 = rng.random_range(0.8..1.2);
            bus.p_load *= f;
            bus.q_load *= f;
        }
        let sol = solve_power_flow(&case, &opts).unwrap();
        assert!(sol.converged);
        assert!(power_mismatch(&case, &sol).unwrap() <= opts.tol);
        let losses = total_losses(&sol).unwrap();
        let diss = branch_dissipation(&case, &sol).unwrap();
        assert!((losses - diss).abs() < 1e-9, "{losses} vs {diss}");
        assert!(losses > 0.0);
    }
}

#[test]
fn solve_is_deterministic() {
    let case = builtin_case30();
    let a = solve_power_flow(&case, &PfOptions::default()).unwrap();
    let b = solve_power_flow(&case, &PfOptions::default()).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.v_ang.iter().zip(&b.v_ang) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn losses_grow_with_load_on_lossy_two_bus() {
    let mut prev = 0.0;
    for step in 0..20 {
        let mut case = two_bus_lossy();
        case.buses[1].p_load = 10.0 + step as f64 * 0.5;
        let sol = solve_power_flow(&case, &PfOptions::default()).unwrap();
        let losses = total_losses(&sol).unwrap();
        assert!(losses >= prev);
        prev = losses;
    }
}

#[test]
fn flat_start_reaches_same_point() {
    let case = builtin_case30();
    let a = solve_power_flow(&case, &PfOptions::default()).unwrap();
    let b = solve_power_flow(
        &case,
        &PfOptions {
            flat_start: true,
            ..PfOptions::default()
        },
    )
    .unwrap();
    assert!((a.losses - b.losses).abs() < 1e-8);
}
