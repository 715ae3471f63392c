//! Steady states: Newton solves, root enumeration and one-parameter
//! continuation in `theta0` with fold and Hopf detection.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::collocation::{CollocationGrid, Param, PelletState, PelletSystem};
use crate::continuation::{self, ContinuationProblem, ContinuationSettings, Continuer};
use crate::error::{PelletError, Result};
use crate::linalg;
use crate::model::{self, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tol: 1e-11,
            max_iter: 30,
        }
    }
}

/// Newton's method on `rhs = 0` with backtracking.
pub fn newton_steady(guess: &PelletState, params: &ModelParams, grid: &CollocationGrid) -> Result<PelletState> {
    newton_steady_with(guess, params, grid, &NewtonSettings::default())
}

pub fn newton_steady_with(
    guess: &PelletState,
    params: &ModelParams,
    grid: &CollocationGrid,
    settings: &NewtonSettings,
) -> Result<PelletState> {
    let sys = PelletSystem::new(*params, grid)?;
    let x = newton_vector(&sys, guess.to_vector(), settings)?;
    Ok(PelletState::from_vector(&x))
}

pub(crate) fn newton_vector(
    sys: &PelletSystem,
    mut x: DVector<f64>,
    settings: &NewtonSettings,
) -> Result<DVector<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PelletError::Domain("non-finite initial guess".into()));
    }
    let mut f = sys.rhs(&x)?;
    let mut fnorm = f.amax();
    for _ in 0..settings.max_iter {
        if fnorm < settings.tol {
            return Ok(x);
        }
        let dx = linalg::solve(sys.jacobian(&x)?, &(-&f), "steady Newton")?;
        let mut lambda = 1.0;
        loop {
            let trial = &x + &dx * lambda;
            if let Ok(ft) = sys.rhs(&trial) {
                let n = ft.amax();
                if n.is_finite() && (n < fnorm || lambda < 1e-3) {
                    x = trial;
                    f = ft;
                    fnorm = n;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-3 {
                return Err(PelletError::NoConvergence {
                    what: "steady Newton line search",
                    iterations: settings.max_iter,
                    residual: fnorm,
                });
            }
        }
    }
    if fnorm < settings.tol {
        return Ok(x);
    }
    Err(PelletError::NoConvergence {
        what: "steady Newton",
        iterations: settings.max_iter,
        residual: fnorm,
    })
}

/// Interior profile of the steady concentration equation with the pellet
/// temperature held at `z`.
pub fn profile_at_temperature(params: &ModelParams, grid: &CollocationGrid, z: f64) -> Result<DVector<f64>> {
    let n = grid.n_points;
    let k = params.q() * params.theta0 * params.theta0 * model::arrhenius(z, params.gamma)?;
    let lap = grid.laplacian.columns(0, n).into_owned();
    let boundary = grid.laplacian.column(n).into_owned();
    let mut a = lap.clone();
    for i in 0..n {
        a[(i, i)] += k;
    }
    let mut y = a
        .lu()
        .solve(&(-&boundary))
        .ok_or(PelletError::Singular("fixed-temperature profile"))?;
    if params.n == 1.0 {
        return Ok(y);
    }
    y.iter_mut().for_each(|v| *v = v.clamp(1e-8, 1.0));
    for _ in 0..60 {
        let mut f = &lap * &y + &boundary;
        let mut jac = lap.clone();
        for i in 0..n {
            let (r, ry) = (
                y[i].max(0.0).powf(params.n),
                params.n * y[i].max(1e-300).powf(params.n - 1.0),
            );
            f[i] += k * r;
            jac[(i, i)] += k * ry;
        }
        if f.amax() < 1e-13 {
            return Ok(y);
        }
        let dx = linalg::solve(jac, &(-f), "fixed-temperature profile")?;
        y += dx;
        y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Err(PelletError::NoConvergence {
        what: "fixed-temperature profile",
        iterations: 60,
        residual: f64::NAN,
    })
}

/// Heat balance residual `1 - z + beta* theta0^2 <R>` after eliminating the
/// concentration profile.
fn heat_balance(params: &ModelParams, grid: &CollocationGrid, z: f64) -> Result<f64> {
    let y = profile_at_temperature(params, grid, z)?;
    let mut mean = 0.0;
    for i in 0..=grid.n_points {
        let yi = if i < grid.n_points { y[i] } else { 1.0 };
        mean += grid.weights[i] * model::reaction_rate(yi.max(0.0), z, params.gamma, params.n)?;
    }
    Ok(1.0 - z + params.beta_star * params.theta0 * params.theta0 * mean)
}

/// All steady states at `params`, sorted by increasing temperature.
///
/// The concentration equation is linear in the profile for fixed
/// temperature, so steady states are the roots of a scalar heat balance in
/// `z`, bracketed on a scan of `1/z` and polished by Newton on the full
/// system.
pub fn steady_states(params: &ModelParams, grid: &CollocationGrid) -> Result<Vec<PelletState>> {
    params.validate()?;
    let sys = PelletSystem::new(*params, grid)?;
    let t2 = params.theta0 * params.theta0;
    let z_max = 1.0 + params.beta_star * t2 * params.gamma.min(600.0).exp() + 1e-9;
    const SCAN: usize = 4000;
    let w_lo = 1.0 / z_max;
    let g = |z: f64| heat_balance(params, grid, z);
    let mut roots = Vec::new();
    let mut prev = (1.0, g(1.0)?);
    if prev.1 == 0.0 {
        roots.push(1.0);
    }
    for k in 1..=SCAN {
        let w = 1.0 - (1.0 - w_lo) * k as f64 / SCAN as f64;
        let z = 1.0 / w;
        let gz = g(z)?;
        if gz == 0.0 {
            roots.push(z);
        } else if prev.1 * gz < 0.0 {
            let (mut a, mut b, mut ga) = (prev.0, z, prev.1);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if b - a <= 1e-15 * b {
                    break;
                }
                let gm = g(m)?;
                if gm * ga <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    ga = gm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev = (z, gz);
    }
    let mut out: Vec<PelletState> = Vec::with_capacity(roots.len());
    for z in roots {
        let guess = PelletState::new(profile_at_temperature(params, grid, z)?, z);
        let x = newton_vector(&sys, guess.to_vector(), &NewtonSettings::default())?;
        let s = PelletState::from_vector(&x);
        if out.iter().all(|o| (o.z - s.z).abs() > 1e-9) {
            out.push(s);
        }
    }
    out.sort_by(|a, b| a.z.total_cmp(&b.z));
    Ok(out)
}

/// Newton starts at `z` in {1.01, 1.2, 1.5} with the `gamma = 0` profile.
pub fn multiplicity_seeds(params: &ModelParams, grid: &CollocationGrid) -> Result<Vec<PelletState>> {
    let shape = crate::collocation::isothermal_profile(grid, &params.with_gamma(0.0))?;
    Ok([1.01, 1.2, 1.5]
        .iter()
        .map(|&z| PelletState::new(shape.clone(), z))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Saddle,
    #[serde(rename = "unstable")]
    UnstableFocusOrNode,
}

impl Stability {
    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Saddle => "saddle",
            Stability::UnstableFocusOrNode => "unstable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "regular")]
    Regular,
    #[serde(rename = "LP")]
    LimitPoint,
    #[serde(rename = "HB")]
    Hopf,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Regular => "regular",
            Label::LimitPoint => "LP",
            Label::Hopf => "HB",
        }
    }
}

/// Eigenvalues with imaginary part below this are treated as real.
const REAL_TOL: f64 = 1e-10;

fn is_real(l: &Complex64) -> bool {
    l.im.abs() <= REAL_TOL * (1.0 + l.re.abs())
}

pub fn classify(eigenvalues: &[Complex64]) -> Stability {
    let unstable: Vec<&Complex64> = eigenvalues.iter().filter(|l| l.re > 0.0).collect();
    match unstable.len() {
        0 => Stability::Stable,
        1 if is_real(unstable[0]) => Stability::Saddle,
        _ => Stability::UnstableFocusOrNode,
    }
}

/// Fold test function: sign of the determinant times the smallest modulus
/// among real eigenvalues.
pub fn fold_test(eigenvalues: &[Complex64]) -> f64 {
    let mut sign = 1.0;
    let mut smallest = f64::INFINITY;
    for l in eigenvalues.iter().filter(|l| is_real(l)) {
        if l.re < 0.0 {
            sign = -sign;
        }
        smallest = smallest.min(l.re.abs());
    }
    if smallest.is_infinite() {
        // no real eigenvalue: the determinant is positive and cannot vanish
        smallest = eigenvalues.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
    }
    sign * smallest
}

/// Complex eigenvalues with positive imaginary part.
pub fn upper_pairs(eigenvalues: &[Complex64]) -> Vec<Complex64> {
    eigenvalues
        .iter()
        .filter(|l| !is_real(l) && l.im > 0.0)
        .copied()
        .collect()
}

fn nearest_pair(eigenvalues: &[Complex64], target: Complex64) -> Option<Complex64> {
    upper_pairs(eigenvalues)
        .into_iter()
        .min_by(|a, b| (a - target).norm().total_cmp(&(b - target).norm()))
}

/// One steady state on a branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub theta0: f64,
    #[serde(with = "state_serde")]
    pub state: PelletState,
    #[serde(with = "complex_serde")]
    pub eigenvalues: Vec<Complex64>,
    pub stability: Stability,
    pub label: Label,
    pub eta: f64,
    pub theta: f64,
}

impl BranchPoint {
    pub fn evaluate(params: &ModelParams, grid: &CollocationGrid, state: PelletState, label: Label) -> Result<Self> {
        let sys = PelletSystem::new(*params, grid)?;
        let x = state.to_vector();
        let eigenvalues = linalg::eigenvalues(&sys.jacobian(&x)?)?;
        Ok(BranchPoint {
            theta0: params.theta0,
            stability: classify(&eigenvalues),
            eta: sys.eta(&x),
            theta: sys.theta(&x)?,
            eigenvalues,
            label,
            state,
        })
    }

    /// Positive real eigenvalue of a saddle.
    pub fn unstable_eigenvalue(&self) -> Option<f64> {
        match self.stability {
            Stability::Saddle => self.eigenvalues.iter().find(|l| l.re > 0.0).map(|l| l.re),
            _ => None,
        }
    }

    /// Hopf frequency: imaginary part of the pair closest to the imaginary axis.
    pub fn hopf_frequency(&self) -> Option<f64> {
        upper_pairs(&self.eigenvalues)
            .into_iter()
            .min_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
            .map(|l| l.im)
    }
}

mod state_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        y: Vec<f64>,
        z: f64,
    }

    pub fn serialize<S: Serializer>(s: &PelletState, ser: S) -> std::result::Result<S::Ok, S::Error> {
        Raw {
            y: s.y.iter().copied().collect(),
            z: s.z,
        }
        .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<PelletState, D::Error> {
        let r = Raw::deserialize(de)?;
        Ok(PelletState::new(DVector::from_vec(r.y), r.z))
    }
}

pub(crate) mod complex_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], ser: S) -> std::result::Result<S::Ok, S::Error> {
        let raw: Vec<[f64; 2]> = v.iter().map(|c| [c.re, c.im]).collect();
        raw.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<Complex64>, D::Error> {
        let raw: Vec<[f64; 2]> = Vec::deserialize(de)?;
        Ok(raw.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

/// Ordered steady-state curve in `theta0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub params: ModelParams,
    pub points: Vec<BranchPoint>,
    /// Arclength step that produced each point (0 for the first).
    pub steps: Vec<f64>,
    /// +1 if the branch was started towards increasing `theta0`.
    pub direction: f64,
}

impl Branch {
    pub fn labeled(&self, label: Label) -> Vec<&BranchPoint> {
        self.points.iter().filter(|p| p.label == label).collect()
    }

    pub fn limit_points(&self) -> Vec<&BranchPoint> {
        self.labeled(Label::LimitPoint)
    }

    pub fn hopf_points(&self) -> Vec<&BranchPoint> {
        self.labeled(Label::Hopf)
    }

    /// Parameters at a given point of the branch.
    pub fn params_at(&self, point: &BranchPoint) -> ModelParams {
        self.params.with_theta0(point.theta0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSettings {
    pub continuation: ContinuationSettings,
    pub newton: NewtonSettings,
    /// Arclength tolerance of event refinement.
    pub event_tol: f64,
    pub max_points: usize,
}

impl Default for BranchSettings {
    fn default() -> Self {
        BranchSettings {
            continuation: ContinuationSettings::default(),
            newton: NewtonSettings::default(),
            event_tol: 1e-13,
            max_points: 4000,
        }
    }
}

/// Steady equations in `(y, z, theta0)`.
pub(crate) struct ThetaProblem<'g> {
    pub sys: PelletSystem<'g>,
}

impl<'g> ThetaProblem<'g> {
    pub fn system_at(&self, theta0: f64) -> Result<PelletSystem<'g>> {
        if !(theta0 > 0.0) {
            return Err(PelletError::Domain(format!(
                "theta0 = {theta0} left the admissible range"
            )));
        }
        Ok(self.sys.with_params(self.sys.params.with_theta0(theta0)))
    }
}

impl ContinuationProblem for ThetaProblem<'_> {
    fn dim(&self) -> usize {
        self.sys.dim() + 1
    }

    fn residual_jacobian(&mut self, xp: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.sys.dim();
        let sys = self.system_at(xp[m])?;
        let x = xp.rows(0, m).into_owned();
        let f = sys.rhs(&x)?;
        let mut jac = DMatrix::zeros(m, m + 1);
        jac.view_mut((0, 0), (m, m)).copy_from(&sys.jacobian(&x)?);
        jac.set_column(m, &sys.param_derivative(&x, Param::Theta0)?);
        Ok((f, jac))
    }
}

fn augment(x: &DVector<f64>, p: f64) -> DVector<f64> {
    let m = x.len();
    DVector::from_fn(m + 1, |i, _| if i < m { x[i] } else { p })
}

/// Follows the steady branch through `seed` over `theta0_range`.
pub fn continue_branch(
    params: &ModelParams,
    theta0_range: (f64, f64),
    seed: &PelletState,
    grid: &CollocationGrid,
    settings: &BranchSettings,
) -> Result<Branch> {
    let (start, end) = theta0_range;
    if !(start.is_finite() && end.is_finite()) || start == end {
        return Err(PelletError::InvalidParameter {
            field: "theta0_range",
            reason: format!("empty or non-finite interval [{start}, {end}]"),
        });
    }
    let (lo, hi) = (start.min(end), start.max(end));
    let p0 = params.with_theta0(start);
    p0.validate()?;
    let sys = PelletSystem::new(p0, grid)?;
    let x0 = newton_vector(&sys, seed.to_vector(), &settings.newton)?;
    let m = sys.dim();
    let direction = if end > start { 1.0 } else { -1.0 };
    let mut heading = DVector::zeros(m + 1);
    heading[m] = direction;

    let problem = ThetaProblem { sys };
    let mut cont = Continuer::new(problem, augment(&x0, start), &heading, settings.continuation)?;
    let mut branch = Branch {
        params: *params,
        points: vec![BranchPoint::evaluate(
            &p0,
            grid,
            PelletState::from_vector(&x0),
            Label::Regular,
        )?],
        steps: vec![0.0],
        direction,
    };

    while branch.points.len() < settings.max_points {
        let step = cont.advance()?;
        let theta = step.x[m];
        let prev = branch.points.last().unwrap().clone();
        let outside = theta < lo || theta > hi;
        let (length, xe) = if outside {
            // land exactly on the range boundary
            let bound = if theta < lo { lo } else { hi };
            let g0 = step.from[m] - bound;
            let g1 = theta - bound;
            let (s, x) = continuation::refine_event(
                |s| {
                    let x = cont.point_at(&step.from, &step.from_tangent, s)?;
                    let g = x[m] - bound;
                    Ok((x, g))
                },
                (0.0, g0),
                (step.length, g1),
                settings.event_tol,
                100,
            )?;
            let mut x = x;
            x[m] = bound;
            let sysb = cont.problem.system_at(bound)?;
            let xs = newton_vector(&sysb, x.rows(0, m).into_owned(), &settings.newton)?;
            (s, augment(&xs, bound))
        } else {
            (step.length, step.x.clone())
        };
        let pe = params.with_theta0(xe[m]);
        let end_point = BranchPoint::evaluate(
            &pe,
            grid,
            PelletState::from_vector(&xe.rows(0, m).into_owned()),
            Label::Regular,
        )?;

        let mut events = detect_events(
            &mut cont,
            &step.from,
            &step.from_tangent,
            length,
            &prev,
            &end_point,
            params,
            grid,
            settings,
        )?;
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (s, pt) in events {
            branch.steps.push(s);
            branch.points.push(pt);
        }
        branch.steps.push(length);
        branch.points.push(end_point);
        if outside {
            break;
        }
    }
    Ok(branch)
}

#[allow(clippy::too_many_arguments)]
fn detect_events<P: ContinuationProblem>(
    cont: &mut Continuer<P>,
    from: &DVector<f64>,
    t: &DVector<f64>,
    length: f64,
    a: &BranchPoint,
    b: &BranchPoint,
    params: &ModelParams,
    grid: &CollocationGrid,
    settings: &BranchSettings,
) -> Result<Vec<(f64, BranchPoint)>> {
    let m = grid.n_points + 1;
    let mut events = Vec::new();
    let at = |cont: &mut Continuer<P>, s: f64| -> Result<(DVector<f64>, Vec<Complex64>)> {
        let x = cont.point_at(from, t, s)?;
        let sys = PelletSystem::new(params.with_theta0(x[m]), grid)?;
        let ev = linalg::eigenvalues(&sys.jacobian(&x.rows(0, m).into_owned())?)?;
        Ok((x, ev))
    };
    let finish = |x: DVector<f64>, label: Label| -> Result<BranchPoint> {
        let p = params.with_theta0(x[m]);
        BranchPoint::evaluate(&p, grid, PelletState::from_vector(&x.rows(0, m).into_owned()), label)
    };

    let (ga, gb) = (fold_test(&a.eigenvalues), fold_test(&b.eigenvalues));
    if ga * gb < 0.0 {
        let (s, x) = continuation::refine_event(
            |s| {
                let (x, ev) = at(cont, s)?;
                Ok((x, fold_test(&ev)))
            },
            (0.0, ga),
            (length, gb),
            settings.event_tol,
            200,
        )?;
        events.push((s, finish(x, Label::LimitPoint)?));
    }

    for pa in upper_pairs(&a.eigenvalues) {
        let Some(pb) = nearest_pair(&b.eigenvalues, pa) else {
            continue;
        };
        if pa.re * pb.re >= 0.0 {
            continue;
        }
        let mut target = pa;
        let (s, x) = continuation::refine_event(
            |s| {
                let (x, ev) = at(cont, s)?;
                let guess = pa + (pb - pa) * (s / length);
                let l = nearest_pair(
                    &ev,
                    if (target - guess).norm() < (pb - pa).norm() {
                        target
                    } else {
                        guess
                    },
                )
                .ok_or_else(|| PelletError::NotFound("Hopf pair became real during refinement".into()))?;
                target = l;
                Ok((x, l.re))
            },
            (0.0, pa.re),
            (length, pb.re),
            settings.event_tol,
            200,
        )?;
        events.push((s, finish(x, Label::Hopf)?));
    }
    Ok(events)
}
