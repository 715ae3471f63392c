use std::f64::consts::PI;

use nalgebra::DVector;
use pellet::collocation::{build_grid, CollocationGrid, PelletState, PelletSystem};
use pellet::model::{Geometry, ModelParams};
use pellet::periodic::{
    cycle_from_hopf, cycles_from_hopf, detect_homoclinic, CycleBranch, CycleEnd, CycleStability, OrbitKind,
    PeriodicOrbit, ShootingSettings,
};
use pellet::simulate::integrate;
use pellet::steady::{continue_branch, steady_states, Branch, BranchPoint, BranchSettings};

fn grid() -> CollocationGrid {
    build_grid(Geometry::Slab, 8).unwrap()
}

fn branch(gamma: f64, g: &CollocationGrid) -> Branch {
    let p = ModelParams::default()
        .with_gamma(gamma)
        .with_lewis(10.0)
        .with_theta0(0.3);
    continue_branch(
        &p,
        (0.3, 0.8),
        &PelletState::flat(g, 1.0),
        g,
        &BranchSettings::default(),
    )
    .unwrap()
}

fn hopf_near(b: &Branch, theta0: f64) -> &BranchPoint {
    b.hopf_points()
        .into_iter()
        .min_by(|x, y| (x.theta0 - theta0).abs().total_cmp(&(y.theta0 - theta0).abs()))
        .unwrap()
}

fn cycles(b: &Branch, hb: &BranchPoint, g: &CollocationGrid) -> CycleBranch {
    cycles_from_hopf(hb, &b.params, 1e-3, (0.3, 0.8), g, &ShootingSettings::default()).unwrap()
}

fn trivial_ok(o: &PeriodicOrbit) {
    let err = (o.trivial_multiplier() - 1.0).norm();
    assert!(
        err < 1e-6,
        "theta0 {} period {}: trivial multiplier off by {err}",
        o.theta0,
        o.period
    );
}

#[test]
fn small_cycles_start_at_the_hopf_period() {
    let g = grid();
    let cases = [
        (7.9, 0.5511, CycleStability::Unstable),
        (7.9, 0.5538, CycleStability::Stable),
        (8.0, 0.5437, CycleStability::Unstable),
    ];
    for (gamma, near, stability) in cases {
        let b = branch(gamma, &g);
        let hb = hopf_near(&b, near);
        let w = hb.hopf_frequency().unwrap();
        let o = cycle_from_hopf(hb, &b.params, 1e-3, &g, &ShootingSettings::default()).unwrap();
        assert!(
            (o.period * w / (2.0 * PI) - 1.0).abs() < 0.1,
            "period {} vs {}",
            o.period,
            2.0 * PI / w
        );
        assert_eq!(o.stability, stability, "gamma {gamma}");
        trivial_ok(&o);
    }
}

#[test]
fn hopf_period_limit() {
    let g = grid();
    let b = branch(7.9, &g);
    let hb = hopf_near(&b, 0.5538);
    let target = 2.0 * PI / hb.hopf_frequency().unwrap();
    let err = |eps: f64| {
        (cycle_from_hopf(hb, &b.params, eps, &g, &ShootingSettings::default())
            .unwrap()
            .period
            - target)
            .abs()
    };
    assert!(err(1e-4) < err(1e-2));
}

#[test]
fn semistable_homoclinic_at_7_95() {
    let g = grid();
    let b = branch(7.95, &g);
    let hb = hopf_near(&b, 0.5482);
    let cb = cycles(&b, hb, &g);
    assert_eq!(cb.end, CycleEnd::ResolutionLimit);
    cb.orbits.iter().for_each(trivial_ok);
    let h = detect_homoclinic(&cb, &b, &g, &ShootingSettings::default()).unwrap();
    assert!((h.theta0 - 0.548621).abs() < 1e-3, "{}", h.theta0);
    assert!(
        (h.fit_slope * h.lambda_u - 1.0).abs() < 0.1,
        "slope {} vs {}",
        h.fit_slope,
        1.0 / h.lambda_u
    );
    assert_eq!(h.orbit_kind, OrbitKind::Semistable);
    assert!(h.saddle_distance < 1e-3);
}

#[test]
fn homoclinic_at_8_0() {
    let g = grid();
    let b = branch(8.0, &g);
    let hb = hopf_near(&b, 0.5437);
    assert!((hb.theta0 - 0.5437).abs() < 5e-4, "{}", hb.theta0);
    let cb = cycles(&b, hb, &g);
    cb.orbits.iter().for_each(trivial_ok);
    // born unstable, then a cycle fold
    assert_eq!(cb.orbits[0].stability, CycleStability::Unstable);
    assert!(cb.orbits.iter().any(|o| o.stability == CycleStability::Stable));
    let h = detect_homoclinic(&cb, &b, &g, &ShootingSettings::default()).unwrap();
    assert!((h.theta0 - 0.54332).abs() < 1e-3, "{}", h.theta0);
    assert!((h.fit_slope * h.lambda_u - 1.0).abs() < 0.1);
}

#[test]
fn amplitudes_surround_a_steady_state() {
    let g = grid();
    let b = branch(7.95, &g);
    let cb = cycles(&b, hopf_near(&b, 0.5482), &g);
    for o in cb.orbits.iter().step_by(5) {
        let p = b.params.with_theta0(o.theta0);
        let inside = steady_states(&p, &g).unwrap().into_iter().any(|s| {
            let bp = BranchPoint::evaluate(&p, &g, s, pellet::steady::Label::Regular).unwrap();
            let a = &o.amplitude;
            (a.eta_min..=a.eta_max).contains(&bp.eta) && (a.theta_min..=a.theta_max).contains(&bp.theta)
        });
        assert!(inside, "orbit at {} surrounds nothing", o.theta0);
    }
}

#[test]
fn branch_between_two_hopf_points_at_7_939() {
    let g = grid();
    let b = branch(7.939, &g);
    let hb = hopf_near(&b, 0.5482);
    let other = hopf_near(&b, 0.55);
    assert!(other.theta0 > hb.theta0);
    let cb = cycles(&b, hb, &g);
    cb.orbits.iter().for_each(trivial_ok);
    // born unstable, folds back below the first Hopf point, ends on the second
    assert!((cb.orbits[0].theta0 - hb.theta0).abs() < 1e-6);
    assert!(cb.orbits.iter().all(|o| o.theta0 < other.theta0 + 1e-6));
    assert!(cb.orbits.iter().any(|o| o.theta0 < hb.theta0 - 1e-4));
    let last = cb.orbits.last().unwrap();
    assert!(
        (last.theta0 - other.theta0).abs() < 1e-4,
        "{} vs {}",
        last.theta0,
        other.theta0
    );
}

/// Distance from `x` to the orbit through `x0`, found by sliding along the
/// orbit from time `t` until the offset is normal to the flow.
fn distance_to_orbit(x: &DVector<f64>, x0: &PelletState, p: &ModelParams, g: &CollocationGrid, mut t: f64) -> f64 {
    let sys = PelletSystem::new(*p, g).unwrap();
    let mut d = f64::INFINITY;
    for _ in 0..8 {
        let xr = integrate(x0, p, g, t, 1e-11).unwrap().last_state().to_vector();
        let f = sys.rhs(&xr).unwrap();
        let dt = (x - &xr).dot(&f) / f.norm_squared();
        d = (x - &xr).norm();
        t += dt;
        if dt.abs() < 1e-10 * t {
            break;
        }
    }
    d
}

/// Perturbs the first node across the flow and returns the distance to the
/// orbit after `periods` periods relative to the initial offset.
fn perturbation_ratio(o: &PeriodicOrbit, params: &ModelParams, g: &CollocationGrid, periods: usize) -> f64 {
    let p = params.with_theta0(o.theta0).with_gamma(o.gamma);
    let sys = PelletSystem::new(p, g).unwrap();
    let x0 = DVector::from_column_slice(&o.cycle[0]);
    let f = sys.rhs(&x0).unwrap().normalize();
    let dir = DVector::from_fn(x0.len(), |i, _| if i % 2 == 0 { 1.0 } else { -0.5 });
    let dir = &dir - &f * f.dot(&dir);
    let delta = dir.normalize() * 1e-4;
    let start = PelletState::from_vector(&(&x0 + &delta));
    let tau = o.period * periods as f64;
    let end = integrate(&start, &p, g, tau, 1e-11).unwrap().last_state().to_vector();
    distance_to_orbit(&end, &o.state(0), &p, g, tau) / delta.norm()
}

#[test]
fn multipliers_agree_with_simulation() {
    let g = grid();
    let b = branch(8.0, &g);
    let cb = cycles(&b, hopf_near(&b, 0.5437), &g);
    let stable = cb
        .orbits
        .iter()
        .filter(|o| o.stability == CycleStability::Stable && (0.3..0.9).contains(&o.dominant_nontrivial()))
        .take(3)
        .collect::<Vec<_>>();
    let unstable = cb
        .orbits
        .iter()
        .filter(|o| o.stability == CycleStability::Unstable && (1.1..3.0).contains(&o.dominant_nontrivial()))
        .take(3)
        .collect::<Vec<_>>();
    assert!(!stable.is_empty() && !unstable.is_empty());
    for o in stable {
        let r = perturbation_ratio(o, &b.params, &g, 4);
        assert!(r < 1.0, "stable orbit {} grew by {r}", o.theta0);
    }
    for o in unstable {
        let m = o.dominant_nontrivial();
        let k = (4.0f64.ln() / m.ln()).ceil().max(1.0) as usize;
        let r = perturbation_ratio(o, &b.params, &g, k);
        assert!(r > 1.0, "unstable orbit {} shrank to {r}", o.theta0);
    }
}
