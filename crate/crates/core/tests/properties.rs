use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pellet::collocation::{build_grid, Param, PelletState, PelletSystem};
use pellet::linalg::fd_jacobian;
use pellet::model::{Geometry, ModelParams};
use pellet::periodic::floquet_multipliers;
use pellet::steady::steady_states;

fn geometry() -> impl Strategy<Value = Geometry> {
    prop_oneof![Just(Geometry::Slab), Just(Geometry::Cylinder), Just(Geometry::Sphere)]
}

fn params() -> impl Strategy<Value = ModelParams> {
    (geometry(), 0.2..0.9f64, 0.0..10.0f64, 1.0..60.0f64).prop_map(|(a, theta0, gamma, lewis)| ModelParams {
        a,
        theta0,
        gamma,
        lewis,
        ..ModelParams::default()
    })
}

fn state(n: usize) -> impl Strategy<Value = PelletState> {
    (prop::collection::vec(0.05..1.0f64, n), 1.0..3.0f64).prop_map(|(y, z)| PelletState::new(DVector::from_vec(y), z))
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_matches_central_differences(
        (p, n, s) in (params(), prop_oneof![Just(4usize), Just(8), Just(12)])
            .prop_flat_map(|(p, n)| (Just(p), Just(n), state(n)))
    ) {
        let g = build_grid(p.a, n).unwrap();
        let sys = PelletSystem::new(p, &g).unwrap();
        let x = s.to_vector();
        let exact = sys.jacobian(&x).unwrap();
        let fd = fd_jacobian(|v| sys.rhs(v), &x, 1e-6).unwrap();
        prop_assert!(rel_err(&exact, &fd) < 1e-6, "relative error {}", rel_err(&exact, &fd));
    }

    #[test]
    fn parameter_derivatives_match_differences(p in params(), s in state(8)) {
        let g = build_grid(p.a, 8).unwrap();
        let x = s.to_vector();
        for (param, h) in [(Param::Theta0, 1e-6 * p.theta0), (Param::Gamma, 1e-6 * p.gamma.max(1.0))] {
            let shift = |d: f64| match param {
                Param::Theta0 => p.with_theta0(p.theta0 + d),
                Param::Gamma => p.with_gamma(p.gamma + d),
            };
            let fp = PelletSystem::new(shift(h), &g).unwrap().rhs(&x).unwrap();
            let fm = PelletSystem::new(shift(-h), &g).unwrap().rhs(&x).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let exact = PelletSystem::new(p, &g).unwrap().param_derivative(&x, param).unwrap();
            let err = (&exact - &fd).amax() / exact.amax().max(1.0);
            prop_assert!(err < 1e-6, "{param:?}: {err}");
        }
    }

    #[test]
    fn lewis_number_scales_only_the_heat_balance(p in params(), s in state(6), le in 1.0..60.0f64) {
        let g = build_grid(p.a, 6).unwrap();
        let x = s.to_vector();
        let f1 = PelletSystem::new(p, &g).unwrap().rhs(&x).unwrap();
        let f2 = PelletSystem::new(p.with_lewis(le), &g).unwrap().rhs(&x).unwrap();
        for i in 0..6 {
            prop_assert_eq!(f1[i], f2[i]);
        }
        prop_assert!((f1[6] / p.lewis - f2[6] / le).abs() <= 1e-12 * (f1[6] / p.lewis).abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn steady_states_do_not_depend_on_lewis(theta0 in 0.45..0.65f64, gamma in 7.0..9.0f64) {
        let g = build_grid(Geometry::Slab, 8).unwrap();
        let p = ModelParams::default().with_theta0(theta0).with_gamma(gamma);
        let a = steady_states(&p.with_lewis(10.0), &g).unwrap();
        let b = steady_states(&p.with_lewis(50.0), &g).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (sa, sb) in a.iter().zip(&b) {
            prop_assert!((sa.to_vector() - sb.to_vector()).amax() < 1e-10);
        }
    }

    #[test]
    fn cyclic_multipliers_match_the_product(seed in 0u64..1000, k in 2usize..6) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let m = 4;
        let blocks: Vec<DMatrix<f64>> = (0..k)
            .map(|_| DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3)))
            .collect();
        let mut prod = DMatrix::identity(m, m);
        for b in &blocks {
            prod = b * prod;
        }
        let direct = pellet::linalg::eigenvalues(&prod).unwrap();
        let cyclic = floquet_multipliers(&blocks).unwrap();
        prop_assert_eq!(cyclic.len(), m);
        for mu in &direct {
            let nearest = cyclic.iter().map(|c| (c - mu).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest < 1e-8 * mu.norm().max(1.0), "{mu} missing from {cyclic:?}");
        }
    }
}
