//! Transient integration of the discrete pellet equations and
//! classification of where trajectories settle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::collocation::{self, isothermal_profile, CollocationGrid, PelletState, PelletSystem};
use crate::error::{PelletError, Result};
use crate::linalg;
use crate::loci::{LocusKind, LocusPoint, SpecialKind, SpecialPoint, TwoParamLocus};
use crate::model::ModelParams;
use crate::radau::{self, RadauOptions};
use crate::steady::{self, BranchPoint, Label, Stability};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Spacing of the stored samples in `tau`.
    pub sample_step: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            rtol: 1e-9,
            atol: 1e-11,
            sample_step: 0.05,
        }
    }
}

impl SimulationOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        SimulationOptions {
            rtol,
            atol: rtol * 1e-2,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1e-12..=1e-4).contains(&self.rtol) {
            return Err(PelletError::InvalidParameter {
                field: "rtol",
                reason: format!("{} is outside [1e-12, 1e-4]", self.rtol),
            });
        }
        if !(self.atol > 0.0) {
            return Err(PelletError::InvalidParameter {
                field: "atol",
                reason: format!("must be positive, got {}", self.atol),
            });
        }
        if !(self.sample_step > 0.0 && self.sample_step.is_finite()) {
            return Err(PelletError::InvalidParameter {
                field: "sample_step",
                reason: format!("must be positive, got {}", self.sample_step),
            });
        }
        Ok(())
    }

    fn radau(&self) -> RadauOptions {
        RadauOptions {
            rtol: self.rtol,
            atol: self.atol,
            // concentrations may only undershoot zero by integration error
            floor: Some(-10.0 * self.rtol),
            ..RadauOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PelletState>,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &PelletState {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Distance in the `(eta, theta)` plane to a point, per sample.
    pub fn distances_to(&self, eta: f64, theta: f64) -> Vec<f64> {
        self.eta
            .iter()
            .zip(&self.theta)
            .map(|(e, t)| ((e - eta).powi(2) + (t - theta).powi(2)).sqrt())
            .collect()
    }

    /// Longest contiguous stretch of `tau` spent within `radius` of a point.
    pub fn longest_dwell(&self, eta: f64, theta: f64, radius: f64) -> f64 {
        let d = self.distances_to(eta, theta);
        let mut best = 0.0f64;
        let mut start: Option<f64> = None;
        for (t, di) in self.times.iter().zip(&d) {
            match (di < &radius, start) {
                (true, None) => start = Some(*t),
                (true, Some(s)) => best = best.max(t - s),
                (false, _) => start = None,
            }
        }
        best
    }

    fn append(&mut self, mut other: Trajectory) {
        let skip = usize::from(!self.is_empty());
        self.times.extend(other.times.drain(skip..));
        self.states.extend(other.states.drain(skip..));
        self.eta.extend(other.eta.drain(skip..));
        self.theta.extend(other.theta.drain(skip..));
    }
}

fn check_inputs(initial: &PelletState, grid: &CollocationGrid, tau_end: f64, opts: &SimulationOptions) -> Result<()> {
    opts.validate()?;
    initial.check(grid)?;
    if !(tau_end > 0.0 && tau_end.is_finite()) {
        return Err(PelletError::InvalidParameter {
            field: "tau_end",
            reason: format!("must be positive and finite, got {tau_end}"),
        });
    }
    Ok(())
}

/// Integrates from `initial` over `[0, tau_end]` with default sampling.
pub fn integrate(
    initial: &PelletState,
    params: &ModelParams,
    grid: &CollocationGrid,
    tau_end: f64,
    rtol: f64,
) -> Result<Trajectory> {
    integrate_with(initial, params, grid, tau_end, &SimulationOptions::with_rtol(rtol))
}

pub fn integrate_with(
    initial: &PelletState,
    params: &ModelParams,
    grid: &CollocationGrid,
    tau_end: f64,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    check_inputs(initial, grid, tau_end, opts)?;
    let sys = PelletSystem::new(*params, grid)?;
    segment(&sys, initial, 0.0, tau_end, opts)
}

/// One integration leg from `t0` to `t1`, sampled on the global grid of
/// multiples of the sample step plus both ends.
fn segment(
    sys: &PelletSystem,
    initial: &PelletState,
    t0: f64,
    t1: f64,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    let dt = opts.sample_step;
    let mut local = vec![0.0];
    let mut k = (t0 / dt).floor() as i64 + 1;
    loop {
        let t = k as f64 * dt - t0;
        if t >= (t1 - t0) - 1e-12 * t1.max(1.0) {
            break;
        }
        if t > 0.0 {
            local.push(t);
        }
        k += 1;
    }
    local.push(t1 - t0);
    let sol = radau::solve(sys, &initial.to_vector(), t1 - t0, &local, None, &opts.radau())?;
    let mut out = Trajectory {
        times: Vec::with_capacity(local.len()),
        states: Vec::with_capacity(local.len()),
        eta: Vec::with_capacity(local.len()),
        theta: Vec::with_capacity(local.len()),
    };
    for (t, x) in local.iter().zip(&sol.samples) {
        let (e, th) = sys.phase_point(x)?;
        out.times.push(t0 + t);
        out.states.push(PelletState::from_vector(x));
        out.eta.push(e);
        out.theta.push(th);
    }
    Ok(out)
}

/// Integrates in legs of length `leg` until `stop` says so or `tau_max` is
/// reached.
fn integrate_until<F: FnMut(&Trajectory) -> bool>(
    initial: &PelletState,
    sys: &PelletSystem,
    tau_max: f64,
    leg: f64,
    opts: &SimulationOptions,
    mut stop: F,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        eta: Vec::new(),
        theta: Vec::new(),
    };
    let mut t = 0.0;
    let mut x = initial.clone();
    while t < tau_max {
        let t1 = (t + leg).min(tau_max);
        let part = segment(sys, &x, t, t1, opts)?;
        x = part.last_state().clone();
        traj.append(part);
        t = t1;
        if stop(&traj) {
            break;
        }
    }
    Ok(traj)
}

/// Projection of trajectories onto the `(eta, theta)` plane.
pub fn phase_portrait(trajectories: &[Trajectory]) -> Vec<Vec<(f64, f64)>> {
    trajectories
        .iter()
        .map(|t| t.eta.iter().copied().zip(t.theta.iter().copied()).collect())
        .collect()
}

/// State with an isothermal (`gamma = 0`) concentration profile averaging
/// `eta`, at temperature `z`.
pub fn seed_state(params: &ModelParams, grid: &CollocationGrid, eta: f64, z: f64) -> Result<PelletState> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(PelletError::InvalidParameter {
            field: "eta",
            reason: format!("target average {eta} is outside (0, 1]"),
        });
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(PelletError::InvalidParameter {
            field: "z",
            reason: format!("temperature {z} must be positive"),
        });
    }
    // isothermal profile at whichever modulus gives the target average
    let average = |y: &DVector<f64>| collocation::eta_average(&PelletState::new(y.clone(), z), grid);
    let profile = |m: f64| isothermal_profile(grid, &params.with_gamma(0.0).with_theta0(m));
    let (mut lo, mut hi) = (0.0f64, 1e-3f64);
    while average(&profile(hi)?) > eta {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(PelletError::InvalidParameter {
                field: "eta",
                reason: format!("target average {eta} is too small"),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if average(&profile(mid)?) > eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shape = profile(hi)?;
    let base = average(&shape);
    let scale = if base < 1.0 { (1.0 - eta) / (1.0 - base) } else { 0.0 };
    let y = shape.map(|v| 1.0 - scale * (1.0 - v));
    if y.iter().any(|v| *v < 0.0) {
        return Err(PelletError::InvalidParameter {
            field: "eta",
            reason: format!("the isothermal profile averaging {eta} is negative on this grid"),
        });
    }
    Ok(PelletState::new(y, z))
}

/// Where a trajectory settles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fate {
    /// The coolest steady state (also the only one when unique).
    LowerSteady,
    /// The hottest of several steady states.
    UpperSteady,
    IntermediateSteady,
    LimitCycle,
    SaddleDwelling,
    Unresolved,
}

impl Fate {
    pub fn as_str(self) -> &'static str {
        match self {
            Fate::LowerSteady => "lower-steady",
            Fate::UpperSteady => "upper-steady",
            Fate::IntermediateSteady => "intermediate-steady",
            Fate::LimitCycle => "limit-cycle",
            Fate::SaddleDwelling => "saddle-dwelling",
            Fate::Unresolved => "unresolved",
        }
    }

    pub fn is_steady(self) -> bool {
        matches!(self, Fate::LowerSteady | Fate::UpperSteady | Fate::IntermediateSteady)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeCriteria {
    /// Distance in `(eta, theta)` counted as being at a steady state.
    pub steady_tol: f64,
    /// Span of `tau` over which that distance must hold at the end.
    pub steady_window: f64,
    pub saddle_radius: f64,
    pub saddle_window: f64,
    /// Agreement of successive peaks of a cycle, relative to its swing.
    pub cycle_tol: f64,
    /// Integration leg between checks.
    pub leg: f64,
}

impl Default for ProbeCriteria {
    fn default() -> Self {
        ProbeCriteria {
            steady_tol: 1e-4,
            steady_window: 20.0,
            saddle_radius: 5e-3,
            saddle_window: 50.0,
            cycle_tol: 1e-5,
            leg: 10.0,
        }
    }
}

/// Steady states of one parameter set, coolest first.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub points: Vec<BranchPoint>,
}

impl Landscape {
    pub fn new(params: &ModelParams, grid: &CollocationGrid) -> Result<Self> {
        let points = steady::steady_states(params, grid)?
            .into_iter()
            .map(|s| BranchPoint::evaluate(params, grid, s, Label::Regular))
            .collect::<Result<Vec<_>>>()?;
        Ok(Landscape { points })
    }

    pub fn saddles(&self) -> impl Iterator<Item = &BranchPoint> {
        self.points.iter().filter(|p| p.stability == Stability::Saddle)
    }

    fn position(&self, i: usize) -> Fate {
        if i == 0 {
            Fate::LowerSteady
        } else if i + 1 == self.points.len() {
            Fate::UpperSteady
        } else {
            Fate::IntermediateSteady
        }
    }

    /// Classifies the late behaviour of `traj`.
    pub fn classify(&self, traj: &Trajectory, c: &ProbeCriteria) -> Fate {
        let t_end = *traj.times.last().unwrap_or(&0.0);
        let tail_within = |eta: f64, theta: f64, tol: f64, window: f64| {
            t_end - traj.times[0] >= window
                && traj
                    .times
                    .iter()
                    .zip(traj.eta.iter().zip(&traj.theta))
                    .filter(|(t, _)| **t >= t_end - window)
                    .all(|(_, (e, th))| ((e - eta).powi(2) + (th - theta).powi(2)).sqrt() < tol)
        };
        for (i, p) in self.points.iter().enumerate() {
            if p.stability == Stability::Stable && tail_within(p.eta, p.theta, c.steady_tol, c.steady_window) {
                return self.position(i);
            }
        }
        if self
            .saddles()
            .any(|s| tail_within(s.eta, s.theta, c.saddle_radius, c.saddle_window))
        {
            return Fate::SaddleDwelling;
        }
        if settled_cycle(traj, c.cycle_tol) {
            return Fate::LimitCycle;
        }
        if self
            .saddles()
            .any(|s| traj.longest_dwell(s.eta, s.theta, c.saddle_radius) >= c.saddle_window)
        {
            return Fate::SaddleDwelling;
        }
        Fate::Unresolved
    }
}

/// Local maxima of `v` in the second half of the trajectory, refined by a
/// parabola through the neighbouring samples, as `(tau, value)`.
fn peaks(traj: &Trajectory, th: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in (traj.len() / 2).max(1)..traj.len().saturating_sub(1) {
        let (a, b, c) = (th[i - 1], th[i], th[i + 1]);
        if a < b && b >= c {
            let h = traj.times[i + 1] - traj.times[i];
            let curv = a - 2.0 * b + c;
            let s = if curv < 0.0 { 0.5 * (a - c) / curv } else { 0.0 };
            out.push((traj.times[i] + s * h, b - 0.25 * (a - c) * s));
        }
    }
    out
}

/// A cycle has settled when the peaks of `eta` or of `theta` repeat with
/// some lag of one to three peaks, in height relative to the swing of that
/// variable and in spacing.
fn settled_cycle(traj: &Trajectory, tol: f64) -> bool {
    let half = traj.len() / 2;
    [&traj.eta, &traj.theta].iter().any(|v| {
        let tail = &v[half..];
        let swing =
            tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - tail.iter().cloned().fold(f64::INFINITY, f64::min);
        swing > 1e-3 && repeats(&peaks(traj, v), tol * swing)
    })
}

fn repeats(pk: &[(f64, f64)], tol: f64) -> bool {
    let n = pk.len();
    (1..=3).any(|lag| {
        if n < 2 * lag + 2 {
            return false;
        }
        let (a, b, c) = (pk[n - 1], pk[n - 1 - lag], pk[n - 1 - 2 * lag]);
        let (p1, p2) = (a.0 - b.0, b.0 - c.0);
        (a.1 - b.1).abs() < tol && (b.1 - c.1).abs() < tol && (p1 - p2).abs() < 1e-3 * p1
    })
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub fate: Fate,
    pub trajectory: Trajectory,
}

/// Integrates every seed until its fate is clear or `tau_end` is reached.
pub fn basin_probe(
    params: &ModelParams,
    grid: &CollocationGrid,
    seeds: &[PelletState],
    tau_end: f64,
    opts: &SimulationOptions,
    criteria: &ProbeCriteria,
) -> Result<Vec<Probe>> {
    let land = Landscape::new(params, grid)?;
    let sys = PelletSystem::new(*params, grid)?;
    seeds
        .iter()
        .map(|s| {
            check_inputs(s, grid, tau_end, opts)?;
            let trajectory = integrate_until(
                s,
                &sys,
                tau_end,
                criteria.leg,
                opts,
                |t| matches!(land.classify(t, criteria), f if f.is_steady() || f == Fate::LimitCycle),
            )?;
            let fate = land.classify(&trajectory, criteria);
            Ok(Probe { fate, trajectory })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSettings {
    /// Initial displacement from the saddle along its unstable direction.
    pub offset: f64,
    pub tau_max: f64,
    /// Width in `theta0` at which bisection stops.
    pub theta0_tol: f64,
    pub simulation: SimulationOptions,
    pub criteria: ProbeCriteria,
}

impl Default for ManifoldSettings {
    fn default() -> Self {
        ManifoldSettings {
            offset: 1e-6,
            tau_max: 600.0,
            theta0_tol: 1e-9,
            simulation: SimulationOptions::default(),
            criteria: ProbeCriteria::default(),
        }
    }
}

/// Saddle nearest in temperature to `z_hint` and its unit unstable
/// direction, oriented towards higher temperature.
pub fn saddle_with_direction(
    params: &ModelParams,
    grid: &CollocationGrid,
    z_hint: f64,
) -> Result<(BranchPoint, f64, DVector<f64>)> {
    let land = Landscape::new(params, grid)?;
    let saddle = land
        .saddles()
        .min_by(|a, b| (a.state.z - z_hint).abs().total_cmp(&(b.state.z - z_hint).abs()))
        .cloned()
        .ok_or_else(|| PelletError::NotFound(format!("no saddle at theta0 = {}", params.theta0)))?;
    let lambda = saddle
        .unstable_eigenvalue()
        .ok_or_else(|| PelletError::Invariant("saddle without unstable eigenvalue".into()))?;
    let j = collocation::jacobian(&saddle.state, params, grid)?;
    let shifted = &j - DMatrix::identity(j.nrows(), j.ncols()) * lambda;
    let mut v = linalg::null_vector(&shifted)?;
    let n = v.len();
    if v[n - 1] < 0.0 {
        v = -v;
    }
    v /= v.norm();
    Ok((saddle, lambda, v))
}

/// Fate of the branch of the saddle's unstable manifold leaving in
/// direction `sign`.
pub fn manifold_fate(
    params: &ModelParams,
    grid: &CollocationGrid,
    z_hint: f64,
    sign: f64,
    settings: &ManifoldSettings,
) -> Result<(Fate, Trajectory)> {
    let (saddle, _, v) = saddle_with_direction(params, grid, z_hint)?;
    let x0 = saddle.state.to_vector() + v * (sign * settings.offset);
    let start = PelletState::from_vector(&x0);
    let land = Landscape::new(params, grid)?;
    let sys = PelletSystem::new(*params, grid)?;
    settings.simulation.validate()?;
    let c = settings.criteria;
    let traj = integrate_until(
        &start,
        &sys,
        settings.tau_max,
        c.leg,
        &settings.simulation,
        |t| matches!(land.classify(t, &c), f if f.is_steady() || f == Fate::LimitCycle),
    )?;
    Ok((land.classify(&traj, &c), traj))
}

/// Homoclinic parameter located by a switch in the fate of one branch of
/// the saddle's unstable manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldHomoclinic {
    pub gamma: f64,
    pub theta0: f64,
    /// Final bracket in `theta0`.
    pub bracket: (f64, f64),
    pub saddle: BranchPoint,
    pub lambda_u: f64,
    /// Orientation of the switching branch.
    pub sign: f64,
    /// Fates at the low and high ends of the bracket.
    pub fates: (Fate, Fate),
}

pub fn locate_homoclinic(
    params: &ModelParams,
    grid: &CollocationGrid,
    theta0_bracket: (f64, f64),
    z_hint: f64,
    settings: &ManifoldSettings,
) -> Result<ManifoldHomoclinic> {
    let (mut lo, mut hi) = theta0_bracket;
    if !(lo < hi) {
        return Err(PelletError::InvalidParameter {
            field: "theta0_bracket",
            reason: format!("empty interval [{lo}, {hi}]"),
        });
    }
    let fate = |t: f64, sign: f64| manifold_fate(&params.with_theta0(t), grid, z_hint, sign, settings).map(|f| f.0);
    let mut sign = 0.0;
    let (mut f_lo, mut f_hi) = (Fate::Unresolved, Fate::Unresolved);
    for s in [1.0, -1.0] {
        let (a, b) = (fate(lo, s)?, fate(hi, s)?);
        if a != b && a != Fate::Unresolved && b != Fate::Unresolved {
            sign = s;
            (f_lo, f_hi) = (a, b);
            break;
        }
    }
    if sign == 0.0 {
        return Err(PelletError::NotFound(format!(
            "unstable manifold keeps its fate across theta0 in [{lo}, {hi}]"
        )));
    }
    while hi - lo > settings.theta0_tol {
        let mid = 0.5 * (lo + hi);
        let f = fate(mid, sign)?;
        if f == f_lo {
            lo = mid;
        } else if f == f_hi {
            hi = mid;
        } else {
            // the branch returns to the saddle this closely only at the
            // connection itself
            lo = mid;
            hi = mid;
        }
    }
    let theta0 = 0.5 * (lo + hi);
    let p = params.with_theta0(theta0);
    let (saddle, lambda_u, _) = saddle_with_direction(&p, grid, z_hint)?;
    Ok(ManifoldHomoclinic {
        gamma: params.gamma,
        theta0,
        bracket: (lo, hi),
        saddle,
        lambda_u,
        sign,
        fates: (f_lo, f_hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldTraceSettings {
    pub gamma_step: f64,
    pub min_gamma_step: f64,
    /// Half width of the `theta0` bracket around each prediction.
    pub half_width: f64,
    pub max_points: usize,
}

impl Default for ManifoldTraceSettings {
    fn default() -> Self {
        ManifoldTraceSettings {
            gamma_step: 0.01,
            min_gamma_step: 5e-4,
            half_width: 2e-4,
            max_points: 400,
        }
    }
}

/// Follows a homoclinic connection in `gamma` from `start` towards
/// `gamma_end`, re-locating it by bisection at each step. The trace ends
/// where the connection can no longer be bracketed, which is recorded as a
/// special point.
pub fn trace_homoclinic(
    params: &ModelParams,
    grid: &CollocationGrid,
    start: &ManifoldHomoclinic,
    gamma_end: f64,
    trace: &ManifoldTraceSettings,
    settings: &ManifoldSettings,
) -> Result<TwoParamLocus> {
    let dir = (gamma_end - start.gamma).signum();
    let to_point = |h: &ManifoldHomoclinic| LocusPoint {
        gamma: h.gamma,
        theta0: h.theta0,
        y: h.saddle.state.y.iter().copied().collect(),
        z: h.saddle.state.z,
        omega: None,
        period: None,
    };
    let mut found = vec![start.clone()];
    let mut special = Vec::new();
    let mut step = trace.gamma_step;
    loop {
        let last = found.last().unwrap();
        if found.len() >= trace.max_points || dir == 0.0 {
            break;
        }
        if (gamma_end - last.gamma) * dir <= 0.0 {
            special.push(SpecialPoint {
                kind: SpecialKind::RangeEnd,
                gamma: last.gamma,
                theta0: last.theta0,
            });
            break;
        }
        let g = if (gamma_end - last.gamma).abs() < step {
            gamma_end
        } else {
            last.gamma + dir * step
        };
        let slope = match found.len() {
            1 => 0.0,
            n => (found[n - 1].theta0 - found[n - 2].theta0) / (found[n - 1].gamma - found[n - 2].gamma),
        };
        let guess = last.theta0 + slope * (g - last.gamma);
        let p = params.with_gamma(g);
        let mut width = trace.half_width;
        let mut located = None;
        for _ in 0..3 {
            match locate_homoclinic(&p, grid, (guess - width, guess + width), last.saddle.state.z, settings) {
                Ok(h) if h.sign == last.sign && h.fates == last.fates => {
                    located = Some(h);
                    break;
                }
                Ok(_) | Err(PelletError::NotFound(_)) | Err(PelletError::Invariant(_)) => width *= 4.0,
                Err(e) => return Err(e),
            }
        }
        match located {
            Some(h) => {
                found.push(h);
                step = (step * 1.5).min(trace.gamma_step);
            }
            None => {
                step *= 0.5;
                if step < trace.min_gamma_step {
                    special.push(SpecialPoint {
                        kind: SpecialKind::SaddleLoss,
                        gamma: last.gamma,
                        theta0: last.theta0,
                    });
                    break;
                }
            }
        }
    }
    Ok(TwoParamLocus {
        kind: LocusKind::Hcl,
        points: found.iter().map(to_point).collect(),
        special,
    })
}
