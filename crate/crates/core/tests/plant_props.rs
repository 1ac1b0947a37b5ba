mod common;

use ddstab::plant::{
    finite_difference_jacobian, linearize, remainder_sequence, simulate, FnPlant, LinearPlant, PendulumParams,
};
use ddstab::{Pendulum, Plant, ScalarQuadratic};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn fixed_point<P: Plant<f64>>(plant: &P) {
    let (xe, ue) = plant.equilibrium();
    let traj = simulate(plant, &xe, &vec![ue.clone(); 100]).unwrap();
    for x in traj.states() {
        assert!((x - &xe).amax() <= 1e-10, "drifted to {x}");
    }
}

#[test]
fn equilibria_are_fixed_points() {
    fixed_point(&ScalarQuadratic);
    fixed_point(&Pendulum::default());
    fixed_point(&LinearPlant::new(DMatrix::from_element(1, 1, 1.5), DMatrix::identity(1, 1)).unwrap());
    // x+ = x + 0.1 (x - 1)^2 + u - 2 around (1, 2)
    let shifted = FnPlant::new(DVector::from_element(1, 1.0), DVector::from_element(1, 2.0), |x: &DVector<f64>, u: &DVector<f64>| {
        DVector::from_element(1, x[0] + 0.1 * (x[0] - 1.0).powi(2) + u[0] - 2.0)
    });
    fixed_point(&shifted);
}

proptest! {
    #[test]
    fn finite_differences_match_exact_jacobians(
        dt in 0.01..0.2f64,
        mass in 0.2..5.0f64,
        length in 0.2..3.0f64,
        friction in 0.0..0.5f64,
        gravity in 1.0..20.0f64,
    ) {
        let p = Pendulum::new(PendulumParams { dt, mass, length, friction, gravity });
        let exact = Plant::<f64>::exact_linearization(&p).unwrap();
        let fd = finite_difference_jacobian::<f64, _>(&p);
        prop_assert!((&exact.a - &fd.a).amax() <= 1e-6);
        prop_assert!((&exact.b - &fd.b).amax() <= 1e-6);
    }

    #[test]
    fn remainder_is_zero_for_linear_plants(seed in any::<u64>(), t in 3usize..12) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let lin = common::random_controllable(&mut rng, 2, 1);
        let plant = LinearPlant { lin };
        let inputs: Vec<DVector<f64>> = (0..t).map(|_| DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0))).collect();
        let traj = simulate(&plant, &DVector::from_element(2, 0.3), &inputs).unwrap();
        let dm = remainder_sequence(&plant, &traj).unwrap();
        prop_assert!(dm.d0.unwrap().amax() <= 1e-14);
    }
}

/// `|d(k)| / |(x(k), u(k))|` shrinks at least linearly as the trajectory is
/// pulled toward the equilibrium.
fn remainder_ratio<P: Plant<f64> + ?Sized>(plant: &P, x0: &DVector<f64>, inputs: &[DVector<f64>], eps: f64) -> f64 {
    let us: Vec<_> = inputs.iter().map(|u| u * eps).collect();
    let traj = simulate(plant, &(x0 * eps), &us).unwrap();
    let dm = remainder_sequence(plant, &traj).unwrap();
    let d0 = dm.d0.clone().unwrap();
    (0..dm.horizon())
        .map(|k| {
            let z = dm.x0.column(k).norm_squared() + dm.u0.column(k).norm_squared();
            if z == 0.0 {
                0.0
            } else {
                d0.column(k).norm() / z.sqrt()
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn remainder_decays_with_scale() {
    let pend_in: Vec<DVector<f64>> = [1.0, -2.0, 0.5, 1.5, -1.0, 0.3].iter().map(|&u| DVector::from_element(1, u)).collect();
    let sq_in: Vec<DVector<f64>> = [0.3, -0.2, 0.1, 0.25].iter().map(|&u| DVector::from_element(1, u)).collect();
    let cases: [(&dyn Plant<f64>, DVector<f64>, &[DVector<f64>]); 2] = [
        (&Pendulum::default(), DVector::from_vec(vec![0.2, -0.1]), &pend_in),
        (&ScalarQuadratic, DVector::from_element(1, 0.5), &sq_in),
    ];
    for (plant, x0, inputs) in cases {
        let c = remainder_ratio(plant, &x0, inputs, 1e-1) / 1e-1;
        for eps in [1e-2, 1e-3] {
            let r = remainder_ratio(plant, &x0, inputs, eps);
            assert!(r <= c * eps * (1.0 + 1e-6), "ratio {r} at eps {eps}, bound {}", c * eps);
        }
    }
}

#[test]
fn linearize_prefers_exact_jacobians() {
    let lin = linearize::<f64, _>(&Pendulum::default());
    assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.9800000000000001, 0.999]));
    let f = FnPlant::new(DVector::zeros(1), DVector::zeros(1), |x: &DVector<f64>, u: &DVector<f64>| {
        DVector::from_element(1, 0.5 * x[0] + x[0].powi(3) + 2.0 * u[0])
    });
    let lin = linearize::<f64, _>(&f);
    assert!((lin.a[(0, 0)] - 0.5).abs() < 1e-8 && (lin.b[(0, 0)] - 2.0).abs() < 1e-8);
}
