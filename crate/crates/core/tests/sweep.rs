mod common;

use ddstab::experiment::{adversarial_theta_input, random_experiment};
use ddstab::plant::LinearPlant;
use ddstab::verify::{
    alpha_convergence_diagnostic, epsilon_sweep, simulate_closed_loop_stability, spectral_radius_closed_loop,
    SimSettings, SweepOptions, VerdictKind,
};
use ddstab::{Pendulum, Plant, ScalarQuadratic};
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulation_agrees_with_spectral_radius(k1 in -80.0..0.0f64, k2 in -30.0..0.0f64, seed in any::<u64>()) {
        let plant = Pendulum::default();
        let k = DMatrix::from_row_slice(1, 2, &[k1, k2]);
        let rho = spectral_radius_closed_loop(&Plant::<f64>::exact_linearization(&plant).unwrap(), &k).unwrap();
        prop_assume!(rho < 0.95);
        let check = simulate_closed_loop_stability(&plant, &k, SimSettings { seed, ..SimSettings::default() }).unwrap();
        prop_assert!(check.stable, "rho {rho}, worst ratio {}", check.worst_ratio);
    }

    #[test]
    fn scalar_simulation_agrees_with_spectral_radius(k in -0.95..0.95f64) {
        let check = simulate_closed_loop_stability(&ScalarQuadratic, &DMatrix::from_element(1, 1, k), SimSettings::default()).unwrap();
        prop_assert!(check.stable);
    }
}

#[test]
fn open_loop_pendulum_is_unstable() {
    let plant = Pendulum::default();
    let k = DMatrix::zeros(1, 2);
    let lin = Plant::<f64>::exact_linearization(&plant).unwrap();
    assert!(spectral_radius_closed_loop(&lin, &k).unwrap() > 1.0);
    assert!(!simulate_closed_loop_stability(&plant, &k, SimSettings::default()).unwrap().stable);
}

#[test]
fn pendulum_sweep_converges_and_certifies() {
    let plant = Pendulum::default();
    let base = random_experiment::<f64>(2, 1, 15, 5.0, 42).unwrap();
    let grid = [1.0, 0.5, 0.1, 0.01, 1e-3];
    let sweep = epsilon_sweep(&plant, &base, &grid, &SweepOptions::default()).unwrap();
    assert_eq!(sweep.verdict_kind, VerdictKind::Oracle);
    let dists: Vec<f64> = sweep.rows.iter().map(|r| r.alpha_dist.unwrap()).collect();
    for w in dists.windows(2) {
        assert!(w[1] <= w[0], "alpha distances {dists:?}");
    }
    let last = sweep.last().unwrap();
    assert!(last.fully_certified() && last.stability_achieved(), "{last:?}");
    for row in &sweep.rows {
        if row.fully_certified() {
            assert!(row.stability_achieved(), "certified but unstable at eps {}", row.epsilon);
        }
    }
    let conv = alpha_convergence_diagnostic(&sweep.rows).unwrap();
    assert!(conv.superlinear, "slope {}", conv.slope);
}

#[test]
fn linear_plant_sweep_matches_reference() {
    let mut rng = common::rng(7);
    let plant = LinearPlant { lin: common::random_controllable(&mut rng, 2, 1) };
    let base = random_experiment::<f64>(2, 1, 8, 1.0, 3).unwrap();
    let sweep = epsilon_sweep(&plant, &base, &[1.0, 0.1, 0.01], &SweepOptions::default()).unwrap();
    for row in &sweep.rows {
        assert!(row.alpha_dist.unwrap() <= 1e-6, "{row:?}");
        assert!(row.k_dist.unwrap() <= 1e-4 * (1.0 + common::max_abs(&sweep.reference.as_ref().unwrap().k)));
        assert!(row.gamma_min.unwrap() <= 1e-20);
        assert!(row.fully_certified() && row.stability_achieved());
    }
}

#[test]
fn adversarial_data_fail_the_rank_condition() {
    let base = adversarial_theta_input(0.1f64);
    let sweep = epsilon_sweep(&ScalarQuadratic, &base, &[1.0], &SweepOptions::default());
    // the linearized data are full rank, so a reference exists; the plant data are not
    let row = &sweep.unwrap().rows[0];
    assert!(!row.assumption1);
    assert!(!row.fully_certified());
}

#[test]
fn heuristic_mode_uses_successive_differences() {
    let plant = Pendulum::default();
    let base = random_experiment::<f64>(2, 1, 15, 5.0, 42).unwrap();
    let options = SweepOptions { oracle: false, ..SweepOptions::default() };
    let sweep = epsilon_sweep(&plant, &base, &[1.0, 0.1, 0.01], &options).unwrap();
    assert_eq!(sweep.verdict_kind, VerdictKind::Heuristic);
    assert!(sweep.reference.is_none());
    assert!(sweep.rows[0].alpha_dist.is_none());
    for i in 1..3 {
        let expect = (sweep.rows[i].alpha.unwrap() - sweep.rows[i - 1].alpha.unwrap()).abs();
        assert_eq!(sweep.rows[i].alpha_dist, Some(expect));
        assert!(sweep.rows[i].gamma_min.is_none() && sweep.rows[i].gamma_condition.is_none());
    }
}

#[test]
fn bad_grids_are_rejected() {
    let base = random_experiment::<f64>(2, 1, 15, 5.0, 42).unwrap();
    for grid in [vec![], vec![0.1, 1.0], vec![1.0, 1.0], vec![1.0, -0.1], vec![f64::NAN]] {
        assert!(epsilon_sweep(&Pendulum::default(), &base, &grid, &SweepOptions::default()).is_err(), "{grid:?}");
    }
}
