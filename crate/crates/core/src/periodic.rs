//! Limit cycles by multiple shooting: Hopf starts, branch continuation,
//! Floquet multipliers, homoclinic detection and the homoclinic locus.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::collocation::{CollocationGrid, PelletState, PelletSystem};
use crate::continuation::{ContinuationProblem, ContinuationSettings, Continuer};
use crate::error::{PelletError, Result};
use crate::linalg;
use crate::loci::{LocusKind, LocusPoint, SpecialKind, SpecialPoint, TwoParamLocus};
use crate::model::ModelParams;
use crate::radau::{self, RadauOptions};
use crate::steady::{self, complex_serde, Branch, BranchPoint, Label, Stability};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingSettings {
    pub segments: usize,
    /// Samples per period stored on each orbit.
    pub samples: usize,
    pub rtol: f64,
    pub atol: f64,
    pub continuation: ContinuationSettings,
    /// Period beyond which a cycle is taken as a homoclinic proxy.
    pub t_homoclinic: f64,
    /// Orbit-to-saddle distance in `(eta, theta)` required of a proxy.
    pub dist_tol: f64,
    /// Orbit-to-saddle distance at which a branch is stopped as having
    /// touched the saddle even though its period is still finite.
    pub contact_tol: f64,
    /// Amplitude in `theta` below which a branch has shrunk back onto a
    /// Hopf point.
    pub min_amplitude: f64,
    /// Largest accepted deviation of the trivial Floquet multiplier from 1.
    /// Orbits beyond it are too close to a saddle to be resolved and end
    /// the branch.
    pub floquet_tol: f64,
    pub max_orbits: usize,
}

impl Default for ShootingSettings {
    fn default() -> Self {
        ShootingSettings {
            segments: 8,
            samples: 512,
            rtol: 1e-10,
            atol: 1e-12,
            continuation: ContinuationSettings {
                initial_step: 1e-3,
                max_step: 0.5,
                residual_tol: 1e-9,
                step_tol: 1e-8,
                max_newton_iter: 8,
                fast_iter: 3,
                min_tangent_cos: 0.8,
                max_points: 2000,
                ..ContinuationSettings::default()
            },
            t_homoclinic: 500.0,
            dist_tol: 1e-3,
            contact_tol: 1e-7,
            min_amplitude: 1e-6,
            floquet_tol: 1e-6,
            max_orbits: 2000,
        }
    }
}

impl ShootingSettings {
    fn radau(&self) -> RadauOptions {
        RadauOptions {
            rtol: self.rtol,
            atol: self.atol,
            ..RadauOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amplitude {
    pub theta_min: f64,
    pub theta_max: f64,
    pub eta_min: f64,
    pub eta_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleStability {
    Stable,
    Unstable,
}

impl CycleStability {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleStability::Stable => "stable",
            CycleStability::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub theta0: f64,
    pub gamma: f64,
    pub period: f64,
    /// Sample times over one period; the last equals the period.
    pub times: Vec<f64>,
    /// States at `times`, flattened as `(y_1..y_N, z)`.
    pub cycle: Vec<Vec<f64>>,
    /// `(eta, theta)` at `times`.
    pub phase: Vec<(f64, f64)>,
    #[serde(with = "complex_serde")]
    pub floquet: Vec<Complex64>,
    pub amplitude: Amplitude,
    pub stability: CycleStability,
    /// Shooting nodes, one per segment.
    pub nodes: Vec<Vec<f64>>,
    /// Largest relative mismatch between a segment's transition matrix
    /// applied to the flow direction and the flow direction at the segment
    /// end, before it is corrected away.
    pub flow_defect: f64,
}

impl PeriodicOrbit {
    pub fn state(&self, k: usize) -> PelletState {
        PelletState::from_vector(&DVector::from_column_slice(&self.cycle[k]))
    }

    /// Multiplier closest to `+1`.
    pub fn trivial_multiplier(&self) -> Complex64 {
        *self
            .floquet
            .iter()
            .min_by(|a, b| (*a - 1.0).norm().total_cmp(&(*b - 1.0).norm()))
            .expect("orbit has multipliers")
    }

    /// Largest modulus among the nontrivial multipliers.
    pub fn dominant_nontrivial(&self) -> f64 {
        let t = self.trivial_multiplier();
        let mut skipped = false;
        let mut best = 0.0f64;
        for m in &self.floquet {
            if !skipped && *m == t {
                skipped = true;
                continue;
            }
            best = best.max(m.norm());
        }
        best
    }

    /// Distance between the first and last stored samples.
    pub fn closure_error(&self) -> f64 {
        let (a, b) = (&self.cycle[0], self.cycle.last().unwrap());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Smallest `(eta, theta)` distance from the cycle to a point.
    pub fn distance_to(&self, eta: f64, theta: f64) -> f64 {
        self.phase
            .iter()
            .map(|(e, t)| ((e - eta).powi(2) + (t - theta).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    fn shooting_vector(&self, free: (f64, f64)) -> DVector<f64> {
        let m = self.nodes[0].len();
        let k = self.nodes.len();
        let mut u = DVector::zeros(k * m + 2);
        for (i, s) in self.nodes.iter().enumerate() {
            u.rows_mut(i * m, m).copy_from_slice(s);
        }
        u[k * m] = free.0;
        u[k * m + 1] = free.1;
        u
    }
}

/// Which two scalars are free besides the shooting nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    /// `(ln T, theta0)` at fixed `gamma`.
    Period,
    /// `(theta0, gamma)` at fixed period.
    Homoclinic { period: f64 },
}

struct Shooting<'g> {
    sys: PelletSystem<'g>,
    segments: usize,
    mode: Mode,
    opts: RadauOptions,
    phase_point: DVector<f64>,
    phase_dir: DVector<f64>,
}

struct Unpacked<'g> {
    nodes: Vec<DVector<f64>>,
    sys: PelletSystem<'g>,
    period: f64,
}

impl<'g> Shooting<'g> {
    fn m(&self) -> usize {
        self.sys.dim()
    }

    fn unpack(&self, u: &DVector<f64>) -> Result<Unpacked<'g>> {
        let m = self.m();
        let k = self.segments;
        let nodes = (0..k).map(|i| u.rows(i * m, m).into_owned()).collect();
        let (p1, p2) = (u[k * m], u[k * m + 1]);
        let (theta0, gamma, period) = match self.mode {
            Mode::Period => (p2, self.sys.params.gamma, p1.exp()),
            Mode::Homoclinic { period } => (p1, p2, period),
        };
        if !(theta0 > 0.0) || !(gamma >= 0.0) || !(period.is_finite() && period > 0.0) {
            return Err(PelletError::Domain(format!(
                "shooting left the domain: theta0 = {theta0}, gamma = {gamma}, period = {period}"
            )));
        }
        let sys = self
            .sys
            .with_params(self.sys.params.with_theta0(theta0).with_gamma(gamma));
        Ok(Unpacked { nodes, sys, period })
    }

    fn params_needed(&self) -> &'static [usize] {
        match self.mode {
            Mode::Period => &[0],
            Mode::Homoclinic { .. } => &[0, 1],
        }
    }
}

impl ContinuationProblem for Shooting<'_> {
    fn dim(&self) -> usize {
        self.segments * self.m() + 2
    }

    fn weights(&self) -> DVector<f64> {
        let km = self.segments * self.m();
        let w = 1.0 / (self.segments as f64).sqrt();
        DVector::from_fn(km + 2, |i, _| if i < km { w } else { 1.0 })
    }

    fn residual(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.m();
        let k = self.segments;
        let up = self.unpack(u)?;
        let tau = up.period / k as f64;
        let mut f = DVector::zeros(k * m + 1);
        for i in 0..k {
            let end = radau::solve(&up.sys, &up.nodes[i], tau, &[], None, &self.opts)?.end;
            let next = &up.nodes[(i + 1) % k];
            f.rows_mut(i * m, m).copy_from(&(next - end));
        }
        f[k * m] = self.phase_dir.dot(&(&up.nodes[0] - &self.phase_point));
        Ok(f)
    }

    fn residual_jacobian(&mut self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.m();
        let k = self.segments;
        let up = self.unpack(u)?;
        let tau = up.period / k as f64;
        let mut f = DVector::zeros(k * m + 1);
        let mut jac = DMatrix::zeros(k * m + 1, k * m + 2);
        for i in 0..k {
            let sol = radau::solve(&up.sys, &up.nodes[i], tau, &[], Some(self.params_needed()), &self.opts)?;
            let j = (i + 1) % k;
            f.rows_mut(i * m, m).copy_from(&(&up.nodes[j] - &sol.end));
            let phi = sol.state_sensitivity.unwrap();
            let dp = sol.param_sensitivity.unwrap();
            for r in 0..m {
                jac[(i * m + r, j * m + r)] += 1.0;
            }
            let mut blk = jac.view_mut((i * m, i * m), (m, m));
            blk -= &phi;
            match self.mode {
                Mode::Period => {
                    let fe = up.sys.rhs(&sol.end)? * tau;
                    jac.view_mut((i * m, k * m), (m, 1)).copy_from(&(-fe));
                    jac.view_mut((i * m, k * m + 1), (m, 1)).copy_from(&(-dp.column(0)));
                }
                Mode::Homoclinic { .. } => {
                    jac.view_mut((i * m, k * m), (m, 1)).copy_from(&(-dp.column(0)));
                    jac.view_mut((i * m, k * m + 1), (m, 1)).copy_from(&(-dp.column(1)));
                }
            }
        }
        f[k * m] = self.phase_dir.dot(&(&up.nodes[0] - &self.phase_point));
        for r in 0..m {
            jac[(k * m, r)] = self.phase_dir[r];
        }
        Ok((f, jac))
    }

    fn accept(&mut self, u: &DVector<f64>) -> Result<()> {
        let up = self.unpack(u)?;
        let f = up.sys.rhs(&up.nodes[0])?;
        let n = f.norm();
        // the trivial orbit at a Hopf point has no flow direction; keep the
        // eigenvector-based reference there
        if n > 1e-10 {
            self.phase_point = up.nodes[0].clone();
            self.phase_dir = f / n;
        }
        Ok(())
    }
}

/// Floquet multipliers from the segment transition matrices. The
/// eigenvalues of the cyclic block matrix are the `K`-th roots of the
/// multipliers, which keeps the spread of magnitudes small.
pub fn floquet_multipliers(transitions: &[DMatrix<f64>]) -> Result<Vec<Complex64>> {
    let k = transitions.len();
    let m = transitions[0].nrows();
    let direct = || -> Result<Vec<Complex64>> {
        let mut mono = DMatrix::identity(m, m);
        for t in transitions {
            mono = t * mono;
        }
        linalg::eigenvalues(&mono)
    };
    if k == 1 {
        return direct();
    }
    let mut c = DMatrix::zeros(k * m, k * m);
    for (i, t) in transitions.iter().enumerate() {
        let row = ((i + 1) % k) * m;
        c.view_mut((row, i * m), (m, m)).copy_from(t);
    }
    let mut roots = linalg::eigenvalues(&c)?;
    roots.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let half = std::f64::consts::PI / k as f64;
    let in_sector = |l: &Complex64| {
        let a = l.arg();
        a.abs() < half - 1e-7 || ((a - half).abs() <= 1e-7 && l.im >= 0.0)
    };
    // roots of multipliers at roundoff level scatter in angle, so the
    // sector filter only applies above that level
    let noise = roots[0].norm() * 1e-5;
    let mut out: Vec<Complex64> = roots
        .iter()
        .filter(|l| l.norm() > noise && in_sector(l))
        .map(|l| l.powi(k as i32))
        .collect();
    let resolved = roots.iter().filter(|l| l.norm() > noise).count();
    if resolved != out.len() * k {
        return direct();
    }
    let mut rest = roots.iter().filter(|l| l.norm() <= noise);
    while out.len() < m {
        match rest.next() {
            Some(l) => out.push(l.powi(k as i32)),
            None => return direct(),
        }
    }
    linalg::sort_eigenvalues(&mut out);
    Ok(out)
}

fn orbit_from_vector(prob: &Shooting, u: &DVector<f64>, settings: &ShootingSettings) -> Result<PeriodicOrbit> {
    let k = prob.segments;
    let up = prob.unpack(u)?;
    let tau = up.period / k as f64;
    let per_seg = settings.samples.max(64).div_ceil(k);
    let mut times = Vec::new();
    let mut cycle = Vec::new();
    let mut transitions = Vec::with_capacity(k);
    let mut flow_defect = 0.0f64;
    for i in 0..k {
        let local: Vec<f64> = (0..per_seg).map(|j| tau * j as f64 / per_seg as f64).collect();
        let sol = radau::solve(&up.sys, &up.nodes[i], tau, &local, Some(&[]), &prob.opts)?;
        for (t, x) in local.iter().zip(&sol.samples) {
            times.push(i as f64 * tau + t);
            cycle.push(x.iter().copied().collect::<Vec<f64>>());
        }
        if i == k - 1 {
            times.push(up.period);
            cycle.push(sol.end.iter().copied().collect());
        }
        // the exact transition maps the flow direction at a node onto the
        // flow direction at the next node; restore that identity, which the
        // discrete map only satisfies to truncation error
        let mut phi = sol.state_sensitivity.unwrap();
        let fa = up.sys.rhs(&up.nodes[i])?;
        let fb = up.sys.rhs(&up.nodes[(i + 1) % k])?;
        let miss = &fb - &phi * &fa;
        flow_defect = flow_defect.max(miss.norm() / fb.norm().max(fa.norm()).max(1e-300));
        phi += &miss * (fa.transpose() / fa.norm_squared());
        transitions.push(phi);
    }
    let phase: Vec<(f64, f64)> = cycle
        .iter()
        .map(|c| up.sys.phase_point(&DVector::from_column_slice(c)))
        .collect::<Result<_>>()?;
    let amplitude = Amplitude {
        theta_min: phase.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        theta_max: phase.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        eta_min: phase.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        eta_max: phase.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    };
    let floquet = floquet_multipliers(&transitions)?;
    let mut orbit = PeriodicOrbit {
        theta0: up.sys.params.theta0,
        gamma: up.sys.params.gamma,
        period: up.period,
        times,
        cycle,
        phase,
        floquet,
        amplitude,
        stability: CycleStability::Stable,
        nodes: up.nodes.iter().map(|s| s.iter().copied().collect()).collect(),
        flow_defect,
    };
    if orbit.dominant_nontrivial() >= 1.0 {
        orbit.stability = CycleStability::Unstable;
    }
    Ok(orbit)
}

/// Complex eigenvector `a + i b` of `J` for the eigenvalue `i omega`, with
/// `a` orthogonal to `b` and unit norm.
fn hopf_eigenvector(jac: &DMatrix<f64>, omega: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = jac.nrows();
    let mut big = DMatrix::zeros(2 * m, 2 * m);
    big.view_mut((0, 0), (m, m)).copy_from(jac);
    big.view_mut((m, m), (m, m)).copy_from(jac);
    for i in 0..m {
        big[(i, m + i)] = omega;
        big[(m + i, i)] = -omega;
    }
    let v = linalg::null_vector(&big)?;
    let (a, b) = (v.rows(0, m).into_owned(), v.rows(m, m).into_owned());
    // rotate q = a + ib by exp(i phi) so that Re q and Im q are orthogonal
    let (aa, bb, ab) = (a.dot(&a), b.dot(&b), a.dot(&b));
    let phi = 0.5 * (2.0 * ab).atan2(bb - aa);
    let (c, s) = (phi.cos(), phi.sin());
    let ra = &a * c - &b * s;
    let rb = &a * s + &b * c;
    let n = (ra.norm_squared() + rb.norm_squared()).sqrt();
    Ok((ra / n, rb / n))
}

/// Why a cycle branch stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleEnd {
    RangeExhausted,
    PeriodBlowUp,
    SaddleContact,
    ReturnedToHopf,
    /// The next orbit failed the trivial multiplier check and was dropped.
    ResolutionLimit,
    StepUnderflow,
    MaxOrbits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleBranch {
    pub params: ModelParams,
    pub orbits: Vec<PeriodicOrbit>,
    pub end: CycleEnd,
}

fn shooting_for<'g>(
    params: &ModelParams,
    grid: &'g CollocationGrid,
    settings: &ShootingSettings,
    mode: Mode,
    phase_point: DVector<f64>,
    phase_dir: DVector<f64>,
) -> Result<Shooting<'g>> {
    if settings.segments == 0 {
        return Err(PelletError::InvalidParameter {
            field: "segments",
            reason: "at least one shooting segment is required".into(),
        });
    }
    Ok(Shooting {
        sys: PelletSystem::new(*params, grid)?,
        segments: settings.segments,
        mode,
        opts: settings.radau(),
        phase_point,
        phase_dir,
    })
}

/// Trivial orbit at a Hopf point and the tangent of the emerging cycle
/// family.
fn hopf_start<'g>(
    hb: &BranchPoint,
    params: &ModelParams,
    grid: &'g CollocationGrid,
    settings: &ShootingSettings,
) -> Result<(Shooting<'g>, DVector<f64>, DVector<f64>)> {
    if hb.label != Label::Hopf {
        return Err(PelletError::InvalidParameter {
            field: "hb",
            reason: "starting point is not a Hopf point".into(),
        });
    }
    let omega = hb
        .hopf_frequency()
        .filter(|w| *w > 0.0)
        .ok_or_else(|| PelletError::Invariant("Hopf point without a complex pair".into()))?;
    let p = params.with_theta0(hb.theta0);
    let sys = PelletSystem::new(p, grid)?;
    let x = hb.state.to_vector();
    let (a, b) = hopf_eigenvector(&sys.jacobian(&x)?, omega)?;
    let m = sys.dim();
    let k = settings.segments;
    let period = 2.0 * std::f64::consts::PI / omega;
    let mut u0 = DVector::zeros(k * m + 2);
    let mut t = DVector::zeros(k * m + 2);
    for i in 0..k {
        let ph = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
        u0.rows_mut(i * m, m).copy_from(&x);
        // Re(q exp(i omega t)) at t = i T / K
        t.rows_mut(i * m, m).copy_from(&(&a * ph.cos() - &b * ph.sin()));
    }
    u0[k * m] = period.ln();
    u0[k * m + 1] = hb.theta0;
    let dir = -&b / b.norm();
    let prob = shooting_for(&p, grid, settings, Mode::Period, x, dir)?;
    Ok((prob, u0, t))
}

/// Small cycle born at a Hopf point, with amplitude of order `epsilon`.
pub fn cycle_from_hopf(
    hb: &BranchPoint,
    params: &ModelParams,
    epsilon: f64,
    grid: &CollocationGrid,
    settings: &ShootingSettings,
) -> Result<PeriodicOrbit> {
    if !(epsilon > 0.0) {
        return Err(PelletError::InvalidParameter {
            field: "epsilon",
            reason: "amplitude must be positive".into(),
        });
    }
    let (prob, u0, t) = hopf_start(hb, params, grid, settings)?;
    let mut cs = settings.continuation;
    cs.initial_step = epsilon;
    cs.max_step = epsilon;
    let mut cont = Continuer::with_tangent(prob, u0, t, cs)?;
    let step = cont.advance()?;
    orbit_from_vector(&cont.problem, &step.x, settings)
}

/// Saddle states at `params` in `(eta, theta)` with their unstable eigenvalue.
fn saddles(params: &ModelParams, grid: &CollocationGrid) -> Result<Vec<BranchPoint>> {
    let mut out = Vec::new();
    for s in steady::steady_states(params, grid)? {
        let p = BranchPoint::evaluate(params, grid, s, Label::Regular)?;
        if p.stability == Stability::Saddle {
            out.push(p);
        }
    }
    Ok(out)
}

fn saddle_distance(orbit: &PeriodicOrbit, params: &ModelParams, grid: &CollocationGrid) -> Result<f64> {
    let p = params.with_theta0(orbit.theta0).with_gamma(orbit.gamma);
    Ok(saddles(&p, grid)?
        .iter()
        .map(|s| orbit.distance_to(s.eta, s.theta))
        .fold(f64::INFINITY, f64::min))
}

/// Continues the cycle family through `seed` in `theta0`, heading towards
/// larger amplitude.
pub fn continue_cycles(
    seed: &PeriodicOrbit,
    params: &ModelParams,
    theta0_range: (f64, f64),
    grid: &CollocationGrid,
    settings: &ShootingSettings,
) -> Result<CycleBranch> {
    let (lo, hi) = range(theta0_range)?;
    let p = params.with_theta0(seed.theta0).with_gamma(seed.gamma);
    let s = ShootingSettings {
        segments: seed.nodes.len(),
        ..*settings
    };
    let x0 = DVector::from_column_slice(&seed.nodes[0]);
    let sys = PelletSystem::new(p, grid)?;
    let f0 = sys.rhs(&x0)?;
    let prob = shooting_for(&p, grid, &s, Mode::Period, x0, &f0 / f0.norm())?;
    let u0 = seed.shooting_vector((seed.period.ln(), seed.theta0));
    let m = prob.m();
    let k = prob.segments;
    let mean = seed
        .nodes
        .iter()
        .fold(DVector::zeros(m), |acc, s| acc + DVector::from_column_slice(s))
        / k as f64;
    let mut heading = DVector::zeros(u0.len());
    for (i, node) in seed.nodes.iter().enumerate() {
        heading
            .rows_mut(i * m, m)
            .copy_from(&(DVector::from_column_slice(node) - &mean));
    }
    let cont = Continuer::new(prob, u0, &heading, s.continuation)?;
    follow(cont, vec![seed.clone()], params, (lo, hi), grid, &s)
}

/// Cycle branch emanating from a Hopf point.
pub fn cycles_from_hopf(
    hb: &BranchPoint,
    params: &ModelParams,
    epsilon: f64,
    theta0_range: (f64, f64),
    grid: &CollocationGrid,
    settings: &ShootingSettings,
) -> Result<CycleBranch> {
    let (lo, hi) = range(theta0_range)?;
    let (prob, u0, t) = hopf_start(hb, params, grid, settings)?;
    let mut cs = settings.continuation;
    cs.initial_step = epsilon;
    let mut cont = Continuer::with_tangent(prob, u0, t, cs)?;
    let step = cont.advance()?;
    let first = orbit_from_vector(&cont.problem, &step.x, settings)?;
    follow(cont, vec![first], params, (lo, hi), grid, settings)
}

fn range(r: (f64, f64)) -> Result<(f64, f64)> {
    if !(r.0.is_finite() && r.1.is_finite()) || r.0 >= r.1 {
        return Err(PelletError::InvalidParameter {
            field: "theta0_range",
            reason: format!("empty or non-finite interval [{}, {}]", r.0, r.1),
        });
    }
    Ok(r)
}

fn follow(
    mut cont: Continuer<Shooting>,
    mut orbits: Vec<PeriodicOrbit>,
    params: &ModelParams,
    (lo, hi): (f64, f64),
    grid: &CollocationGrid,
    settings: &ShootingSettings,
) -> Result<CycleBranch> {
    let mut peak_amp = orbits[0].amplitude.theta_max - orbits[0].amplitude.theta_min;
    let end = loop {
        if orbits.len() >= settings.max_orbits {
            break CycleEnd::MaxOrbits;
        }
        let step = match cont.advance() {
            Ok(s) => s,
            Err(PelletError::StepUnderflow { .. }) => break CycleEnd::StepUnderflow,
            Err(e) => return Err(e),
        };
        let orbit = orbit_from_vector(&cont.problem, &step.x, settings)?;
        if (orbit.trivial_multiplier() - 1.0).norm() > settings.floquet_tol {
            break CycleEnd::ResolutionLimit;
        }
        let theta0 = orbit.theta0;
        let amp = orbit.amplitude.theta_max - orbit.amplitude.theta_min;
        peak_amp = peak_amp.max(amp);
        let period = orbit.period;
        let contact = saddle_distance(&orbit, params, grid)?;
        orbits.push(orbit);
        if theta0 < lo || theta0 > hi {
            break CycleEnd::RangeExhausted;
        }
        if period >= settings.t_homoclinic {
            break CycleEnd::PeriodBlowUp;
        }
        if contact < settings.contact_tol {
            break CycleEnd::SaddleContact;
        }
        if amp < settings.min_amplitude.max(1e-3 * peak_amp) && orbits.len() > 3 {
            break CycleEnd::ReturnedToHopf;
        }
    };
    Ok(CycleBranch {
        params: *params,
        orbits,
        end,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitKind {
    Semistable,
    Unstable,
}

impl OrbitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OrbitKind::Semistable => "semistable",
            OrbitKind::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicPoint {
    pub gamma: f64,
    pub theta0: f64,
    pub saddle: BranchPoint,
    pub proxy_orbit: PeriodicOrbit,
    pub orbit_kind: OrbitKind,
    /// Unstable eigenvalue of the saddle.
    pub lambda_u: f64,
    /// Least-squares slope of period against `-ln|theta0 - theta0*|`.
    pub fit_slope: f64,
    /// Smallest distance from the proxy orbit to the saddle in `(eta, theta)`.
    pub saddle_distance: f64,
}

/// Extrapolates the end of a cycle branch to the homoclinic parameter.
pub fn detect_homoclinic(
    cycles: &CycleBranch,
    steady: &Branch,
    grid: &CollocationGrid,
    settings: &ShootingSettings,
) -> Result<HomoclinicPoint> {
    let orbits = &cycles.orbits;
    if orbits.len() < 3 {
        return Err(PelletError::NotFound(
            "cycle branch too short for homoclinic extrapolation".into(),
        ));
    }
    // tail of strictly increasing period
    let mut start = orbits.len() - 1;
    while start > 0 && orbits[start - 1].period < orbits[start].period {
        start -= 1;
    }
    let tail = &orbits[start..];
    if tail.len() < 3 {
        return Err(PelletError::NotFound(
            "period does not grow monotonically at the branch end".into(),
        ));
    }
    let last = tail.last().unwrap();
    let params = cycles.params.with_theta0(last.theta0).with_gamma(last.gamma);

    // saddle continued from the nearest saddle point of the steady branch
    let seed = steady
        .points
        .iter()
        .filter(|p| p.stability == Stability::Saddle)
        .min_by(|a, b| {
            (a.theta0 - last.theta0)
                .abs()
                .total_cmp(&(b.theta0 - last.theta0).abs())
        })
        .ok_or_else(|| PelletError::NotFound("steady branch has no saddle".into()))?;
    let saddle_at = |theta0: f64| -> Result<BranchPoint> {
        let p = params.with_theta0(theta0);
        let s = steady::newton_steady(&seed.state, &p, grid)?;
        let bp = BranchPoint::evaluate(&p, grid, s, Label::Regular)?;
        if bp.stability != Stability::Saddle {
            return Err(PelletError::NotFound(format!("no saddle near theta0 = {theta0}")));
        }
        Ok(bp)
    };
    let saddle_last = saddle_at(last.theta0)?;
    let lambda_u = saddle_last
        .unstable_eigenvalue()
        .ok_or_else(|| PelletError::Invariant("saddle without unstable eigenvalue".into()))?;

    let prev = &tail[tail.len() - 2];
    let r = (-(last.period - prev.period) * lambda_u).exp();
    let theta_star = (last.theta0 - r * prev.theta0) / (1.0 - r);

    // slope of T against -ln|theta0 - theta0*| over the tail
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|o| (o.theta0 - theta_star).abs() > 0.0)
        .map(|o| (-(o.theta0 - theta_star).abs().ln(), o.period))
        .collect();
    let fit_slope = slope(&pts[pts.len().saturating_sub(6)..]);

    let saddle = saddle_at(theta_star)?;
    let distance = last.distance_to(saddle_last.eta, saddle_last.theta);
    if distance >= settings.dist_tol {
        return Err(PelletError::NotFound(format!(
            "longest cycle stays {distance:.3e} away from the saddle"
        )));
    }
    let orbit_kind = match last.stability {
        CycleStability::Stable => OrbitKind::Semistable,
        CycleStability::Unstable => OrbitKind::Unstable,
    };
    Ok(HomoclinicPoint {
        gamma: params.gamma,
        theta0: theta_star,
        saddle,
        proxy_orbit: last.clone(),
        orbit_kind,
        lambda_u,
        fit_slope,
        saddle_distance: distance,
    })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Homoclinic curve approximated by the cycles of fixed large period
/// through the proxy orbit of `seed`.
pub fn continue_hcl_locus(
    seed: &HomoclinicPoint,
    params: &ModelParams,
    gamma_range: (f64, f64),
    grid: &CollocationGrid,
    settings: &ShootingSettings,
) -> Result<TwoParamLocus> {
    let (lo, hi) = (gamma_range.0, gamma_range.1);
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(PelletError::InvalidParameter {
            field: "gamma_range",
            reason: format!("invalid interval [{lo}, {hi}]"),
        });
    }
    let orbit = &seed.proxy_orbit;
    let period = orbit.period;
    let s = ShootingSettings {
        segments: orbit.nodes.len(),
        ..*settings
    };
    let p = params.with_theta0(orbit.theta0).with_gamma(orbit.gamma);
    let x0 = DVector::from_column_slice(&orbit.nodes[0]);
    let f0 = PelletSystem::new(p, grid)?.rhs(&x0)?;
    let make = || shooting_for(&p, grid, &s, Mode::Homoclinic { period }, x0.clone(), &f0 / f0.norm());
    let u0 = orbit.shooting_vector((orbit.theta0, orbit.gamma));
    let gi = u0.len() - 1;
    let to_point = |o: &PeriodicOrbit, saddle: &BranchPoint| LocusPoint {
        gamma: o.gamma,
        theta0: o.theta0,
        y: saddle.state.y.iter().copied().collect(),
        z: saddle.state.z,
        omega: None,
        period: Some(period),
    };
    let nearest_saddle = |o: &PeriodicOrbit| -> Result<Option<(BranchPoint, f64)>> {
        let pp = params.with_theta0(o.theta0).with_gamma(o.gamma);
        Ok(saddles(&pp, grid)?
            .into_iter()
            .map(|sd| {
                let d = o.distance_to(sd.eta, sd.theta);
                (sd, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1)))
    };

    let mut halves = Vec::new();
    let mut special = Vec::new();
    for sign in [-1.0, 1.0] {
        let mut pts = Vec::new();
        if lo == hi {
            halves.push(pts);
            continue;
        }
        let mut heading = DVector::zeros(u0.len());
        heading[gi] = sign;
        let mut cont = Continuer::new(make()?, u0.clone(), &heading, s.continuation)?;
        let mut last_good: Option<LocusPoint> = None;
        loop {
            if pts.len() >= s.continuation.max_points {
                break;
            }
            let step = match cont.advance() {
                Ok(st) => st,
                Err(PelletError::StepUnderflow { .. }) | Err(PelletError::NoConvergence { .. }) => {
                    if let Some(lg) = &last_good {
                        special.push(SpecialPoint {
                            kind: SpecialKind::Stalled,
                            gamma: lg.gamma,
                            theta0: lg.theta0,
                        });
                    }
                    break;
                }
                Err(e) => return Err(e),
            };
            let o = orbit_from_vector(&cont.problem, &step.x, &s)?;
            match nearest_saddle(&o)? {
                Some((sd, d)) if d < s.dist_tol => {
                    let lp = to_point(&o, &sd);
                    last_good = Some(lp.clone());
                    pts.push(lp);
                }
                _ => {
                    // the saddle merged away or the orbit detached from it
                    if let Some(lg) = &last_good {
                        special.push(SpecialPoint {
                            kind: SpecialKind::SaddleLoss,
                            gamma: lg.gamma,
                            theta0: lg.theta0,
                        });
                    }
                    break;
                }
            }
            if o.gamma < lo || o.gamma > hi {
                special.push(SpecialPoint {
                    kind: SpecialKind::RangeEnd,
                    gamma: o.gamma,
                    theta0: o.theta0,
                });
                break;
            }
        }
        halves.push(pts);
    }
    let mut points: Vec<LocusPoint> = halves[0].iter().rev().cloned().collect();
    points.push(to_point(orbit, &seed.saddle));
    if let Some(h) = halves.get(1) {
        points.extend(h.iter().cloned());
    }
    Ok(TwoParamLocus {
        kind: LocusKind::Hcl,
        points,
        special,
    })
}
