use pellet::collocation::{build_grid, CollocationGrid, PelletState};
use pellet::loci::{continue_hb_locus, continue_lp_locus, LocusSettings, SpecialKind};
use pellet::model::{Geometry, ModelParams};
use pellet::steady::{continue_branch, Branch, BranchSettings, Label};

fn branch(gamma: f64, lewis: f64, grid: &CollocationGrid) -> Branch {
    let p = ModelParams::default()
        .with_gamma(gamma)
        .with_lewis(lewis)
        .with_theta0(0.3);
    continue_branch(
        &p,
        (0.3, 0.8),
        &PelletState::flat(grid, 1.0),
        grid,
        &BranchSettings::default(),
    )
    .unwrap()
}

fn slab(n: usize) -> CollocationGrid {
    build_grid(Geometry::Slab, n).unwrap()
}

#[test]
fn low_activation_branch_is_plain() {
    let g = slab(8);
    let b = branch(7.5, 10.0, &g);
    assert!(b.limit_points().is_empty());
    assert!(b.hopf_points().is_empty());
    assert!(b.points.windows(2).all(|w| w[1].theta0 > w[0].theta0));
}

#[test]
fn two_hopf_points_before_multiplicity() {
    let g = slab(8);
    let b = branch(7.8, 10.0, &g);
    assert!(b.limit_points().is_empty());
    assert_eq!(b.hopf_points().len(), 2);
}

#[test]
fn multiplicity_window_at_7_95() {
    let g = slab(8);
    let b = branch(7.95, 10.0, &g);
    let lps: Vec<f64> = b.limit_points().iter().map(|p| p.theta0).collect();
    assert_eq!(lps.len(), 2, "{lps:?}");
    let (lo, hi) = (lps[0].min(lps[1]), lps[0].max(lps[1]));
    assert!((hi - 0.5489).abs() < 5e-4, "upper fold {hi}");
    assert!(lo < 0.548621 && hi > 0.548621);
    assert!(!b.hopf_points().is_empty());
}

#[test]
fn labeled_points_satisfy_their_conditions() {
    let g = slab(8);
    let b = branch(7.95, 10.0, &g);
    for p in b.hopf_points() {
        let pair = p
            .eigenvalues
            .iter()
            .filter(|l| l.im > 0.0)
            .min_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
            .unwrap();
        assert!(pair.re.abs() < 1e-8 && pair.im > 1e-8, "{pair}");
    }
    for p in b.limit_points() {
        let zero = p.eigenvalues.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
        assert!(zero < 1e-8, "{zero}");
    }
}

#[test]
fn stability_changes_only_at_labels() {
    let g = slab(8);
    for gamma in [7.8, 7.95, 8.0] {
        let b = branch(gamma, 10.0, &g);
        for w in b.points.windows(2) {
            if w[0].stability != w[1].stability {
                assert!(
                    w[0].label != Label::Regular || w[1].label != Label::Regular,
                    "unlabeled change at theta0 {} (gamma {gamma})",
                    w[0].theta0
                );
            }
        }
    }
}

#[test]
fn branch_is_reversible() {
    let g = slab(8);
    let fwd = branch(7.95, 10.0, &g);
    let first = &fwd.points[0];
    let last = fwd.points.last().unwrap();
    let back = continue_branch(
        &fwd.params_at(last),
        (last.theta0, first.theta0),
        &last.state,
        &g,
        &BranchSettings::default(),
    )
    .unwrap();
    let end = back.points.last().unwrap();
    assert!((end.theta0 - first.theta0).abs() < 1e-8);
    let diff = (end.state.to_vector() - first.state.to_vector()).amax();
    assert!(diff < 1e-8, "{diff}");
    assert_eq!(back.limit_points().len(), fwd.limit_points().len());
}

#[test]
fn branch_does_not_depend_on_lewis() {
    let g = slab(8);
    let a = branch(7.95, 10.0, &g);
    let b = branch(7.95, 50.0, &g);
    // Hopf points move with Le; everything else must not
    let keep = |br: &Branch| {
        br.points
            .iter()
            .filter(|p| p.label != Label::Hopf)
            .cloned()
            .collect::<Vec<_>>()
    };
    let (a, b) = (keep(&a), keep(&b));
    assert_eq!(a.len(), b.len());
    for (p, q) in a.iter().zip(&b) {
        assert!((p.theta0 - q.theta0).abs() < 1e-10);
        assert!((p.eta - q.eta).abs() < 1e-10);
        assert!((p.theta - q.theta).abs() < 1e-10);
    }
}

#[test]
fn fold_locus_has_a_cusp_independent_of_lewis() {
    let g = slab(8);
    let settings = LocusSettings::default();
    let mut cusps = vec![];
    for le in [10.0, 50.0] {
        let b = branch(7.95, le, &g);
        let lp = b.limit_points()[0];
        let locus = continue_lp_locus(&b.params_at(lp), (7.5, 8.5), lp, &g, &settings).unwrap();
        let cusp: Vec<f64> = locus.specials(SpecialKind::Cusp).iter().map(|c| c.gamma).collect();
        assert!(!cusp.is_empty());
        cusps.push(cusp);
    }
    let first = cusps[0].iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((first - 7.94).abs() < 0.02, "{first}");
    assert_eq!(cusps[0].len(), cusps[1].len());
    for (x, y) in cusps[0].iter().zip(&cusps[1]) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn hopf_locus_ends_in_double_zero() {
    let g = slab(8);
    let b = branch(7.8, 10.0, &g);
    let hb = b.hopf_points()[0];
    let locus = continue_hb_locus(&b.params_at(hb), (7.0, 9.0), hb, &g, &LocusSettings::default()).unwrap();
    let (lo, _) = locus.gamma_extent().unwrap();
    assert!((lo - 7.65).abs() < 0.02, "{lo}");
    assert!(!locus.specials(SpecialKind::DoubleZero).is_empty());
    // traced both ways, so either end may sit on a double zero
    let n = locus.points.len();
    for q in &locus.points[1..n - 1] {
        assert!(q.omega.unwrap() > 0.0);
    }
}

#[test]
fn folds_are_grid_stable() {
    let folds = |n: usize| -> Vec<f64> {
        let g = slab(n);
        branch(7.95, 10.0, &g).limit_points().iter().map(|p| p.theta0).collect()
    };
    let (a, b) = (folds(8), folds(12));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 5e-4, "{x} vs {y}");
    }
}
