mod common;

use common::{angle_gap, gauss_seidel, max_gap, oracle_networks};
use gridhaul::analytics::{count_violations, ViolationBand};
use gridhaul::io::load_network;
use gridhaul::pf::{
    compute_mismatch, export_voltages, solve_nr, solve_nr_from, ExtraLoads, PfOptions, DEFAULT_COLLAPSE_SENTINEL,
};

fn two_bus_v(p_pu: f64, x: f64) -> Option<(f64, f64)> {
    // |V|^4 - |V|^2 + (P x)^2 = 0 with a unit source, lossless line
    let disc = 1.0 - 4.0 * (p_pu * x).powi(2);
    if disc < 0.0 {
        return None;
    }
    let v = ((1.0 + disc.sqrt()) / 2.0).sqrt();
    Some((v, -(p_pu * x / v).asin()))
}

#[test]
fn newton_matches_gauss_seidel_oracle() {
    for (name, net) in oracle_networks() {
        let sol = solve_nr(&net, &ExtraLoads::new(), &PfOptions::default()).unwrap();
        assert!(sol.converged, "{name}");
        let (vm, va) = gauss_seidel(&net);
        assert!(max_gap(&sol.v_mag, &vm) < 1e-6, "{name}: {:?} vs {:?}", sol.v_mag, vm);
        assert!(angle_gap(&sol.v_ang, &va) < 1e-6, "{name}");
        assert!(sol.mismatch_norm <= 1e-8, "{name}: {}", sol.mismatch_norm);
    }
}

#[test]
fn oracle_reproduces_published_nine_bus_voltages() {
    // magnitudes as commonly tabulated for this system, three decimals
    let (_, nine) = oracle_networks().pop().unwrap();
    let (vm, _) = gauss_seidel(&nine);
    let published = [1.0, 1.0, 1.0, 0.987, 0.975, 1.003, 0.986, 0.996, 0.958];
    assert!(max_gap(&vm, &published) < 1e-3, "{vm:?}");
}

#[test]
fn independent_residual_is_small_at_solution() {
    for (name, net) in oracle_networks() {
        let extra = ExtraLoads::new();
        let sol = solve_nr(&net, &extra, &PfOptions::default()).unwrap();
        let m = compute_mismatch(&net, &extra, &sol.v_mag, &sol.v_ang).unwrap();
        assert!(m.norm() <= 1e-8, "{name}: {}", m.norm());
    }
}

#[test]
fn two_bus_closed_form() {
    let net = load_network(&common::data("case2_loaded.json")).unwrap();
    let sol = solve_nr(&net, &ExtraLoads::new(), &PfOptions::default()).unwrap();
    let (v, a) = two_bus_v(1.0, 0.1).unwrap();
    assert!((sol.v_mag[1] - v).abs() < 1e-8);
    assert!((sol.v_ang[1] - a).abs() < 1e-8);

    // just below and past the 5 pu transfer limit
    let mut extra = ExtraLoads::new();
    extra.add(2, 380.0, 0.0);
    let near = solve_nr(&net, &extra, &PfOptions::default()).unwrap();
    assert!(near.converged);
    assert!((near.v_mag[1] - two_bus_v(4.8, 0.1).unwrap().0).abs() < 1e-8);

    let mut extra = ExtraLoads::new();
    extra.add(2, 500.0, 0.0);
    assert!(two_bus_v(6.0, 0.1).is_none());
    let over = solve_nr(&net, &extra, &PfOptions::default()).unwrap();
    assert!(!over.converged && over.collapsed);
    assert_eq!(export_voltages(&over, DEFAULT_COLLAPSE_SENTINEL), vec![0.01, 0.01]);
}

#[test]
fn warm_start_agrees_with_flat_start() {
    let net = load_network(&common::data("case30.json")).unwrap();
    let mut extra = ExtraLoads::new();
    let flat = solve_nr(&net, &extra, &PfOptions::default()).unwrap();
    extra.add(4, 60.0, 0.0);
    extra.add(13, 40.0, 5.0);
    let cold = solve_nr(&net, &extra, &PfOptions::default()).unwrap();
    let opts = PfOptions {
        flat_start: false,
        ..PfOptions::default()
    };
    let warm = solve_nr_from(&net, &extra, &opts, Some(&flat)).unwrap();
    assert!(cold.converged && warm.converged);
    assert!(max_gap(&cold.v_mag, &warm.v_mag) < 1e-8);
    assert!(angle_gap(&cold.v_ang, &warm.v_ang) < 1e-8);
    assert!(warm.iterations <= cold.iterations);
}

#[test]
fn bundled_networks_solve_cleanly() {
    let band = ViolationBand::default();
    for file in ["case3.json", "case30.json"] {
        let net = load_network(&common::data(file)).unwrap();
        let sol = solve_nr(&net, &ExtraLoads::new(), &PfOptions::default()).unwrap();
        assert!(sol.converged, "{file}");
        assert_eq!(count_violations(&sol.v_mag, &band).count, 0, "{file}");
    }
}
