use std::sync::Arc;

use rbsde_core::forward::{simulate, TimeGrid};
use rbsde_core::model::catalog;
use rbsde_core::oracle::{solve_switching_dp, LatticeSpec};
use rbsde_core::regress::BasisSpec;
use rbsde_core::solver::{solve_penalized, solve_reflected_scheme, summarize, Picard};

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn solution_bits_do_not_depend_on_thread_count() {
    let spec = Arc::new(catalog::get(catalog::TWOMODE_SWITCH).unwrap());
    let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
    let run = || {
        let bundle = Arc::new(simulate(&spec, &grid, &[0.2], 9_000, 3).unwrap());
        let mut sol = solve_penalized(&spec, &bundle, &BasisSpec::default(), 16.0, Picard::default()).unwrap();
        sol.accumulate_k().unwrap();
        let s = summarize(&sol).unwrap();
        let mut bits: Vec<u64> = sol
            .y
            .iter()
            .chain(&sol.z)
            .chain(&sol.k_proc)
            .map(|v| v.to_bits())
            .collect();
        bits.push(s.complementarity.to_bits());
        bits.push(s.int_z_sq.to_bits());
        bits
    };
    let one = in_pool(1, run);
    let three = in_pool(3, run);
    assert_eq!(one, three);
}

#[test]
fn penalized_and_reflected_agree_with_the_lattice_value() {
    let spec = Arc::new(catalog::get(catalog::TWOMODE_SWITCH).unwrap());
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let bundle = Arc::new(simulate(&spec, &grid, &[0.0], 30_000, 5).unwrap());
    let basis = BasisSpec::default();
    let pen = solve_penalized(&spec, &bundle, &basis, 128.0, Picard::default()).unwrap();
    let refl = solve_reflected_scheme(&spec, &bundle, &basis, Picard::default()).unwrap();
    let lattice = LatticeSpec::around(&spec, &grid, 0.0, 401).unwrap();
    let dp = solve_switching_dp(&spec, &lattice, &grid).unwrap();
    for i in 0..2 {
        let v = dp.value(0, i, 0.0);
        assert!((pen.y0()[i] - v).abs() < 0.05, "{i}: {} vs {v}", pen.y0()[i]);
        assert!((refl.y0()[i] - v).abs() < 0.05, "{i}: {} vs {v}", refl.y0()[i]);
        assert!(pen.y0()[i] <= refl.y0()[i] + 1e-3);
    }
}
