use nalgebra::DVector;
use pellet::collocation::{build_grid, CollocationGrid, PelletState, PelletSystem};
use pellet::linalg::eigenvalues;
use pellet::model::{Geometry, ModelParams};
use pellet::simulate::{
    basin_probe, integrate, phase_portrait, saddle_with_direction, seed_state, Fate, Landscape, ProbeCriteria,
    SimulationOptions,
};
use pellet::steady::{newton_steady, Stability};

fn grid() -> CollocationGrid {
    build_grid(Geometry::Slab, 8).unwrap()
}

#[test]
fn tiny_modulus_relaxes_to_rest() {
    let g = grid();
    let p = ModelParams::default().with_theta0(1e-4);
    let x0 = seed_state(&p, &g, 0.4, 1.4).unwrap();
    let t = integrate(&x0, &p, &g, 10.0, 1e-9).unwrap();
    let x = t.last_state().to_vector();
    let rest = DVector::from_element(x.len(), 1.0);
    assert!((x - rest).amax() < 1e-6);
}

#[test]
fn isothermal_transient_reaches_tanh() {
    let g = grid();
    let p = ModelParams {
        gamma: 0.0,
        theta0: 1.0,
        ..ModelParams::default()
    };
    let t = integrate(&PelletState::flat(&g, 1.5), &p, &g, 30.0, 1e-10).unwrap();
    let eta = *t.eta.last().unwrap();
    assert!((eta - 1f64.tanh()).abs() < 1e-6, "{eta}");
}

#[test]
fn restarting_from_a_stored_state_reproduces_the_rest() {
    let g = grid();
    let p = ModelParams::default().with_theta0(0.5486);
    let x0 = seed_state(&p, &g, 0.7, 1.1).unwrap();
    let whole = integrate(&x0, &p, &g, 40.0, 1e-10).unwrap();
    let k = whole.times.iter().position(|t| *t >= 17.3).unwrap();
    let rest = integrate(&whole.states[k], &p, &g, 40.0 - whole.times[k], 1e-10).unwrap();
    let diff = (whole.last_state().to_vector() - rest.last_state().to_vector()).amax();
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn halving_the_tolerance_moves_little() {
    let g = grid();
    let p = ModelParams::default().with_gamma(7.5).with_theta0(0.5);
    let x0 = seed_state(&p, &g, 0.6, 1.3).unwrap();
    for rtol in [1e-6, 1e-8] {
        let a = integrate(&x0, &p, &g, 30.0, rtol).unwrap();
        let b = integrate(&x0, &p, &g, 30.0, rtol / 2.0).unwrap();
        let diff = (a.last_state().to_vector() - b.last_state().to_vector()).amax();
        assert!(diff < 10.0 * rtol, "rtol {rtol}: {diff}");
    }
}

#[test]
fn perturbations_decay_at_the_slowest_rate() {
    let g = grid();
    let p = ModelParams::default().with_gamma(7.5).with_theta0(0.5);
    let steady = newton_steady(&PelletState::flat(&g, 1.1), &p, &g).unwrap();
    let x = steady.to_vector();
    let sys = PelletSystem::new(p, &g).unwrap();
    let eig = eigenvalues(&sys.jacobian(&x).unwrap()).unwrap();
    assert!(eig.iter().all(|l| l.re < 0.0));
    let slowest = eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);

    let kick = DVector::from_fn(x.len(), |i, _| 1e-5 * (1.0 + 0.1 * i as f64));
    let opts = SimulationOptions {
        sample_step: 0.1,
        ..SimulationOptions::with_rtol(1e-11)
    };
    let tau = 12.0 / -slowest;
    let t = pellet::simulate::integrate_with(&PelletState::from_vector(&(&x + kick)), &p, &g, tau, &opts).unwrap();
    // fit the log-distance over the second half, after faster modes are gone
    let pts: Vec<(f64, f64)> = t
        .times
        .iter()
        .zip(&t.states)
        .filter(|(s, _)| **s > tau / 2.0)
        .map(|(s, st)| (*s, (st.to_vector() - &x).norm().ln()))
        .collect();
    let n = pts.len() as f64;
    let (mt, ml) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope =
        pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    assert!((slope / slowest - 1.0).abs() < 0.2, "fitted {slope} vs {slowest}");
}

#[test]
fn portrait_of_a_rest_state_is_one_point() {
    let g = grid();
    let p = ModelParams::default().with_gamma(7.5).with_theta0(0.5);
    let steady = newton_steady(&PelletState::flat(&g, 1.1), &p, &g).unwrap();
    let t = integrate(&steady, &p, &g, 5.0, 1e-10).unwrap();
    let lines = phase_portrait(std::slice::from_ref(&t));
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].len(), t.len());
    let (e0, th0) = lines[0][0];
    assert!(lines[0]
        .iter()
        .all(|(e, th)| (e - e0).abs() < 1e-10 && (th - th0).abs() < 1e-10));
}

#[test]
fn every_seed_rests_at_tiny_modulus() {
    let g = grid();
    let p = ModelParams::default().with_theta0(1e-3);
    let seeds: Vec<PelletState> = [(0.3, 1.5), (0.9, 1.0), (0.6, 2.0)]
        .iter()
        .map(|(y, z)| PelletState::new(DVector::from_element(g.n_points, *y), *z))
        .collect();
    let probes = basin_probe(
        &p,
        &g,
        &seeds,
        100.0,
        &SimulationOptions::default(),
        &ProbeCriteria::default(),
    )
    .unwrap();
    assert!(probes.iter().all(|r| r.fate == Fate::LowerSteady));
}

fn kicked(state: &PelletState, dz: f64) -> PelletState {
    PelletState::new(state.y.clone(), state.z + dz)
}

#[test]
fn unstable_orbit_separates_two_steady_states() {
    let g = grid();
    let p = ModelParams::default().with_gamma(8.0).with_theta0(0.54332);
    let land = Landscape::new(&p, &g).unwrap();
    assert_eq!(land.points.len(), 3);
    assert_eq!(land.points[0].stability, Stability::Stable);
    assert_eq!(land.points[2].stability, Stability::Stable);
    let (saddle, _, v) = saddle_with_direction(&p, &g, land.points[1].state.z).unwrap();
    let inside = kicked(&land.points[0].state, 1e-3);
    let outside = PelletState::from_vector(&(saddle.state.to_vector() + v * 1e-3));
    let probes = basin_probe(
        &p,
        &g,
        &[inside, outside],
        600.0,
        &SimulationOptions::default(),
        &ProbeCriteria::default(),
    )
    .unwrap();
    assert_eq!(probes[0].fate, Fate::LowerSteady);
    assert_eq!(probes[1].fate, Fate::UpperSteady);
}

#[test]
fn inside_trajectory_dwells_at_the_saddle() {
    let g = grid();
    let p = ModelParams::default().with_theta0(0.5486205);
    let land = Landscape::new(&p, &g).unwrap();
    let saddle = land.saddles().next().unwrap();
    let t = integrate(&kicked(&land.points[0].state, 1e-3), &p, &g, 800.0, 1e-10).unwrap();
    let dwell = t.longest_dwell(saddle.eta, saddle.theta, 5e-3);
    assert!(dwell > 50.0, "dwell {dwell}");
}
