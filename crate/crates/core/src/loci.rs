//! Two-parameter continuation of fold and Hopf curves in `(gamma, theta0)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::collocation::{CollocationGrid, Param, PelletState, PelletSystem};
use crate::continuation::{self, ContinuationProblem, ContinuationSettings, Continuer};
use crate::error::{PelletError, Result};
use crate::linalg;
use crate::model::ModelParams;
use crate::steady::{BranchPoint, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocusKind {
    LP,
    HB,
    Hcl,
}

impl LocusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LocusKind::LP => "LP",
            LocusKind::HB => "HB",
            LocusKind::Hcl => "Hcl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusPoint {
    pub gamma: f64,
    pub theta0: f64,
    pub y: Vec<f64>,
    pub z: f64,
    /// Hopf frequency on HB curves.
    pub omega: Option<f64>,
    /// Fixed period on homoclinic curves.
    pub period: Option<f64>,
}

impl LocusPoint {
    pub fn state(&self) -> PelletState {
        PelletState::new(DVector::from_column_slice(&self.y), self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecialKind {
    /// Fold curve turns back in `gamma`.
    Cusp,
    /// Hopf frequency collapses on a fold curve.
    DoubleZero,
    /// The saddle of a homoclinic curve disappears.
    SaddleLoss,
    RangeEnd,
    /// Continuation could not take another step.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoint {
    pub kind: SpecialKind,
    pub gamma: f64,
    pub theta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoParamLocus {
    pub kind: LocusKind,
    pub points: Vec<LocusPoint>,
    pub special: Vec<SpecialPoint>,
}

impl TwoParamLocus {
    pub fn gamma_extent(&self) -> Option<(f64, f64)> {
        let mut it = self.points.iter().map(|p| p.gamma);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), g| (lo.min(g), hi.max(g))))
    }

    pub fn specials(&self, kind: SpecialKind) -> Vec<SpecialPoint> {
        self.special.iter().filter(|s| s.kind == kind).copied().collect()
    }

    /// Values of `theta0` where the curve crosses `gamma`, in curve order.
    pub fn theta0_at(&self, gamma: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let n = self.points.len();
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            // half-open so a crossing exactly at a shared point counts once
            let hit =
                (a.gamma - gamma) * (b.gamma - gamma) < 0.0 || a.gamma == gamma || (b.gamma == gamma && i + 2 == n);
            if hit && a.gamma != b.gamma {
                let t = (gamma - a.gamma) / (b.gamma - a.gamma);
                out.push(a.theta0 + t * (b.theta0 - a.theta0));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocusSettings {
    pub continuation: ContinuationSettings,
    /// Stop fold curves at their first cusp instead of tracing through it.
    pub stop_at_cusp: bool,
    pub event_tol: f64,
    /// Frequency below which a Hopf curve is declared to end at a double zero.
    pub omega_min: f64,
}

impl Default for LocusSettings {
    fn default() -> Self {
        LocusSettings {
            continuation: ContinuationSettings {
                residual_tol: 1e-10,
                max_points: 3000,
                ..ContinuationSettings::default()
            },
            stop_at_cusp: false,
            event_tol: 1e-12,
            omega_min: 1e-8,
        }
    }
}

const FD_STEP: f64 = 1e-6;

fn fd_param<F>(f: F, p: f64) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let h = FD_STEP * p.abs().max(1.0);
    Ok((f(p + h)? - f(p - h)?) / (2.0 * h))
}

fn fd_state<F>(f: F, x: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut out = DMatrix::zeros(rows, x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let h = FD_STEP * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        out.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    Ok(out)
}

fn system_at<'g>(base: &PelletSystem<'g>, theta0: f64, gamma: f64) -> Result<PelletSystem<'g>> {
    if !(theta0 > 0.0) || !(gamma >= 0.0) {
        return Err(PelletError::Domain(format!(
            "left the parameter domain at theta0 = {theta0}, gamma = {gamma}"
        )));
    }
    Ok(base.with_params(base.params.with_theta0(theta0).with_gamma(gamma)))
}

/// `{f = 0, J v = 0, c.v = 1}` in `(x, v, theta0, gamma)`.
struct FoldProblem<'g> {
    sys: PelletSystem<'g>,
    c: DVector<f64>,
}

impl FoldProblem<'_> {
    fn split(&self, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64, f64) {
        let m = self.sys.dim();
        (
            u.rows(0, m).into_owned(),
            u.rows(m, m).into_owned(),
            u[2 * m],
            u[2 * m + 1],
        )
    }
}

impl ContinuationProblem for FoldProblem<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.dim() + 2
    }

    fn residual(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.sys.dim();
        let (x, v, th, ga) = self.split(u);
        let sys = system_at(&self.sys, th, ga)?;
        let mut f = DVector::zeros(2 * m + 1);
        f.rows_mut(0, m).copy_from(&sys.rhs(&x)?);
        f.rows_mut(m, m).copy_from(&(sys.jacobian(&x)? * &v));
        f[2 * m] = self.c.dot(&v) - 1.0;
        Ok(f)
    }

    fn residual_jacobian(&mut self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.sys.dim();
        let (x, v, th, ga) = self.split(u);
        let sys = system_at(&self.sys, th, ga)?;
        let f = self.residual(u)?;
        let jac0 = sys.jacobian(&x)?;
        let mut jac = DMatrix::zeros(2 * m + 1, 2 * m + 2);
        jac.view_mut((0, 0), (m, m)).copy_from(&jac0);
        jac.view_mut((0, 2 * m), (m, 1))
            .copy_from(&sys.param_derivative(&x, Param::Theta0)?);
        jac.view_mut((0, 2 * m + 1), (m, 1))
            .copy_from(&sys.param_derivative(&x, Param::Gamma)?);
        let jv_x = fd_state(|xx| Ok(sys.jacobian(xx)? * &v), &x, m)?;
        jac.view_mut((m, 0), (m, m)).copy_from(&jv_x);
        jac.view_mut((m, m), (m, m)).copy_from(&jac0);
        let jv_th = fd_param(|p| Ok(system_at(&self.sys, p, ga)?.jacobian(&x)? * &v), th)?;
        let jv_ga = fd_param(|p| Ok(system_at(&self.sys, th, p)?.jacobian(&x)? * &v), ga)?;
        jac.view_mut((m, 2 * m), (m, 1)).copy_from(&jv_th);
        jac.view_mut((m, 2 * m + 1), (m, 1)).copy_from(&jv_ga);
        for j in 0..m {
            jac[(2 * m, m + j)] = self.c[j];
        }
        Ok((f, jac))
    }

    fn accept(&mut self, u: &DVector<f64>) -> Result<()> {
        let (_, v, _, _) = self.split(u);
        self.c = &v / v.norm_squared();
        Ok(())
    }
}

/// `{f = 0, (J^2 + kappa I) v = 0, c1.v = 1, c2.v = 0}` in
/// `(x, v, kappa, theta0, gamma)` with `kappa = omega^2`.
struct HopfProblem<'g> {
    sys: PelletSystem<'g>,
    c1: DVector<f64>,
    c2: DVector<f64>,
}

impl HopfProblem<'_> {
    fn split(&self, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64, f64, f64) {
        let m = self.sys.dim();
        (
            u.rows(0, m).into_owned(),
            u.rows(m, m).into_owned(),
            u[2 * m],
            u[2 * m + 1],
            u[2 * m + 2],
        )
    }

    fn refresh_normals(&mut self, x: &DVector<f64>, v: &DVector<f64>, th: f64, ga: f64) -> Result<()> {
        let jv = system_at(&self.sys, th, ga)?.jacobian(x)? * v;
        let vv = v.norm_squared();
        let w = &jv - v * (jv.dot(v) / vv);
        self.c1 = v / vv;
        self.c2 = &w / w.norm();
        Ok(())
    }
}

impl ContinuationProblem for HopfProblem<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.dim() + 3
    }

    fn residual(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.sys.dim();
        let (x, v, kappa, th, ga) = self.split(u);
        let sys = system_at(&self.sys, th, ga)?;
        let j = sys.jacobian(&x)?;
        let mut f = DVector::zeros(2 * m + 2);
        f.rows_mut(0, m).copy_from(&sys.rhs(&x)?);
        f.rows_mut(m, m).copy_from(&(&j * (&j * &v) + &v * kappa));
        f[2 * m] = self.c1.dot(&v) - 1.0;
        f[2 * m + 1] = self.c2.dot(&v);
        Ok(f)
    }

    fn residual_jacobian(&mut self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.sys.dim();
        let (x, v, kappa, th, ga) = self.split(u);
        let sys = system_at(&self.sys, th, ga)?;
        let f = self.residual(u)?;
        let j = sys.jacobian(&x)?;
        let j2v = |s: &PelletSystem, xx: &DVector<f64>| -> Result<DVector<f64>> {
            let jj = s.jacobian(xx)?;
            Ok(&jj * (&jj * &v))
        };
        let mut jac = DMatrix::zeros(2 * m + 2, 2 * m + 3);
        jac.view_mut((0, 0), (m, m)).copy_from(&j);
        jac.view_mut((0, 2 * m + 1), (m, 1))
            .copy_from(&sys.param_derivative(&x, Param::Theta0)?);
        jac.view_mut((0, 2 * m + 2), (m, 1))
            .copy_from(&sys.param_derivative(&x, Param::Gamma)?);
        jac.view_mut((m, 0), (m, m))
            .copy_from(&fd_state(|xx| j2v(&sys, xx), &x, m)?);
        let mut jk = &j * &j;
        for i in 0..m {
            jk[(i, i)] += kappa;
        }
        jac.view_mut((m, m), (m, m)).copy_from(&jk);
        jac.view_mut((m, 2 * m), (m, 1)).copy_from(&v);
        let d_th = fd_param(|p| j2v(&system_at(&self.sys, p, ga)?, &x), th)?;
        let d_ga = fd_param(|p| j2v(&system_at(&self.sys, th, p)?, &x), ga)?;
        jac.view_mut((m, 2 * m + 1), (m, 1)).copy_from(&d_th);
        jac.view_mut((m, 2 * m + 2), (m, 1)).copy_from(&d_ga);
        for k in 0..m {
            jac[(2 * m, m + k)] = self.c1[k];
            jac[(2 * m + 1, m + k)] = self.c2[k];
        }
        Ok((f, jac))
    }

    fn accept(&mut self, u: &DVector<f64>) -> Result<()> {
        let (x, v, _, th, ga) = self.split(u);
        self.refresh_normals(&x, &v, th, ga)
    }
}

fn unit(dim: usize, k: usize, sign: f64) -> DVector<f64> {
    let mut e = DVector::zeros(dim);
    e[k] = sign;
    e
}

/// Runs a locus continuation in both `gamma` directions and stitches the
/// halves into one ordered curve.
fn trace_both_ways<P, S, E>(
    make: impl Fn() -> P,
    u0: &DVector<f64>,
    gamma_index: usize,
    gamma_range: (f64, f64),
    settings: &LocusSettings,
    mut to_point: S,
    mut check_end: E,
) -> Result<(Vec<LocusPoint>, Vec<SpecialPoint>)>
where
    P: ContinuationProblem,
    S: FnMut(&DVector<f64>) -> LocusPoint,
    E: FnMut(&mut Continuer<P>, &continuation::Step) -> Result<EndCheck>,
{
    let (lo, hi) = (gamma_range.0.min(gamma_range.1), gamma_range.0.max(gamma_range.1));
    let mut halves: Vec<Vec<LocusPoint>> = Vec::new();
    let mut special = Vec::new();
    for sign in [-1.0, 1.0] {
        let mut pts = Vec::new();
        if lo == hi {
            halves.push(pts);
            continue;
        }
        let mut cont = Continuer::new(
            make(),
            u0.clone(),
            &unit(u0.len(), gamma_index, sign),
            settings.continuation,
        )?;
        'trace: while pts.len() < settings.continuation.max_points {
            let step = match cont.advance() {
                Ok(s) => s,
                Err(PelletError::StepUnderflow { .. }) if !pts.is_empty() => break,
                Err(e) => return Err(e),
            };
            let g = step.x[gamma_index];
            if g < lo || g > hi {
                let bound = if g < lo { lo } else { hi };
                let (_, u) = continuation::refine_event(
                    |s| {
                        let u = cont.point_at(&step.from, &step.from_tangent, s)?;
                        let d = u[gamma_index] - bound;
                        Ok((u, d))
                    },
                    (0.0, step.from[gamma_index] - bound),
                    (step.length, g - bound),
                    settings.event_tol,
                    100,
                )?;
                let p = to_point(&u);
                special.push(SpecialPoint {
                    kind: SpecialKind::RangeEnd,
                    gamma: p.gamma,
                    theta0: p.theta0,
                });
                pts.push(p);
                break;
            }
            match check_end(&mut cont, &step)? {
                EndCheck::Continue(found) => {
                    for (kind, u) in found {
                        let p = to_point(&u);
                        special.push(SpecialPoint {
                            kind,
                            gamma: p.gamma,
                            theta0: p.theta0,
                        });
                        pts.push(p);
                        if kind == SpecialKind::Cusp && settings.stop_at_cusp {
                            break 'trace;
                        }
                    }
                    pts.push(to_point(&step.x));
                }
                EndCheck::Stop(kind, u) => {
                    let p = to_point(&u);
                    special.push(SpecialPoint {
                        kind,
                        gamma: p.gamma,
                        theta0: p.theta0,
                    });
                    pts.push(p);
                    break;
                }
            }
        }
        halves.push(pts);
    }
    let mut points: Vec<LocusPoint> = halves[0].iter().rev().cloned().collect();
    points.push(to_point(u0));
    if let Some(h) = halves.get(1) {
        points.extend(h.iter().cloned());
    }
    Ok((points, special))
}

enum EndCheck {
    /// Keep going; carries special points found inside the step.
    Continue(Vec<(SpecialKind, DVector<f64>)>),
    Stop(SpecialKind, DVector<f64>),
}

fn seed_system<'g>(params: &ModelParams, seed: &BranchPoint, grid: &'g CollocationGrid) -> Result<PelletSystem<'g>> {
    PelletSystem::new(params.with_theta0(seed.theta0), grid)
}

/// Traces the fold curve through `seed_lp` over `gamma_range`.
pub fn continue_lp_locus(
    params: &ModelParams,
    gamma_range: (f64, f64),
    seed_lp: &BranchPoint,
    grid: &CollocationGrid,
    settings: &LocusSettings,
) -> Result<TwoParamLocus> {
    if seed_lp.label != Label::LimitPoint {
        return Err(PelletError::InvalidParameter {
            field: "seed_lp",
            reason: "seed point is not a limit point".into(),
        });
    }
    check_range(gamma_range)?;
    let sys = seed_system(params, seed_lp, grid)?;
    let m = sys.dim();
    let x = seed_lp.state.to_vector();
    let v = linalg::null_vector(&sys.jacobian(&x)?)?;
    let mut u0 = DVector::zeros(2 * m + 2);
    u0.rows_mut(0, m).copy_from(&x);
    u0.rows_mut(m, m).copy_from(&v);
    u0[2 * m] = seed_lp.theta0;
    u0[2 * m + 1] = params.gamma;
    let gi = 2 * m + 1;
    let make = || FoldProblem { sys, c: v.clone() };
    let mut problem = make();
    let e = unit(u0.len(), gi, 1.0);
    let (u0, _) = continuation::correct(&mut problem, &u0, &u0, &e, &settings.continuation)?;

    let to_point = |u: &DVector<f64>| LocusPoint {
        gamma: u[2 * m + 1],
        theta0: u[2 * m],
        y: u.rows(0, m - 1).iter().copied().collect(),
        z: u[m - 1],
        omega: None,
        period: None,
    };
    let check = |cont: &mut Continuer<FoldProblem>, step: &continuation::Step| -> Result<EndCheck> {
        let (ta, tb) = (step.from_tangent[gi], step.tangent[gi]);
        if ta * tb >= 0.0 {
            return Ok(EndCheck::Continue(vec![]));
        }
        let (_, u) = continuation::refine_event(
            |s| {
                let u = cont.point_at(&step.from, &step.from_tangent, s)?;
                let t = continuation::tangent(&mut cont.problem, &u, &step.from_tangent)?;
                Ok((u, t[gi]))
            },
            (0.0, ta),
            (step.length, tb),
            settings.event_tol,
            100,
        )?;
        Ok(EndCheck::Continue(vec![(SpecialKind::Cusp, u)]))
    };
    let (points, special) = trace_both_ways(make, &u0, gi, gamma_range, settings, to_point, check)?;
    Ok(TwoParamLocus {
        kind: LocusKind::LP,
        points,
        special,
    })
}

/// Traces the Hopf curve through `seed_hb` over `gamma_range`, stopping at
/// double-zero points where the frequency vanishes.
pub fn continue_hb_locus(
    params: &ModelParams,
    gamma_range: (f64, f64),
    seed_hb: &BranchPoint,
    grid: &CollocationGrid,
    settings: &LocusSettings,
) -> Result<TwoParamLocus> {
    if seed_hb.label != Label::Hopf {
        return Err(PelletError::InvalidParameter {
            field: "seed_hb",
            reason: "seed point is not a Hopf point".into(),
        });
    }
    check_range(gamma_range)?;
    let omega = seed_hb
        .hopf_frequency()
        .ok_or_else(|| PelletError::Invariant("Hopf point without a complex pair".into()))?;
    let sys = seed_system(params, seed_hb, grid)?;
    let m = sys.dim();
    let x = seed_hb.state.to_vector();
    let j = sys.jacobian(&x)?;
    let mut a = &j * &j;
    for i in 0..m {
        a[(i, i)] += omega * omega;
    }
    let (v1, _) = linalg::null_pair(&a)?;
    let mut base = HopfProblem {
        sys,
        c1: v1.clone(),
        c2: v1.clone(),
    };
    base.refresh_normals(&x, &v1, seed_hb.theta0, params.gamma)?;
    let v = &v1 / base.c1.dot(&v1);
    let mut u0 = DVector::zeros(2 * m + 3);
    u0.rows_mut(0, m).copy_from(&x);
    u0.rows_mut(m, m).copy_from(&v);
    u0[2 * m] = omega * omega;
    u0[2 * m + 1] = seed_hb.theta0;
    u0[2 * m + 2] = params.gamma;
    let gi = 2 * m + 2;
    let ki = 2 * m;
    let (c1, c2) = (base.c1.clone(), base.c2.clone());
    let make = || HopfProblem {
        sys,
        c1: c1.clone(),
        c2: c2.clone(),
    };
    let mut problem = make();
    let e = unit(u0.len(), gi, 1.0);
    let (u0, _) = continuation::correct(&mut problem, &u0, &u0, &e, &settings.continuation)?;

    let to_point = |u: &DVector<f64>| LocusPoint {
        gamma: u[gi],
        theta0: u[2 * m + 1],
        y: u.rows(0, m - 1).iter().copied().collect(),
        z: u[m - 1],
        omega: Some(u[ki].max(0.0).sqrt()),
        period: None,
    };
    let omega_min2 = settings.omega_min * settings.omega_min;
    let check = |cont: &mut Continuer<HopfProblem>, step: &continuation::Step| -> Result<EndCheck> {
        let (ka, kb) = (step.from[ki], step.x[ki]);
        if kb > omega_min2 {
            return Ok(EndCheck::Continue(vec![]));
        }
        if kb >= 0.0 || ka <= 0.0 {
            return Ok(EndCheck::Stop(SpecialKind::DoubleZero, step.x.clone()));
        }
        let (_, u) = continuation::refine_event(
            |s| {
                let u = cont.point_at(&step.from, &step.from_tangent, s)?;
                let k = u[ki];
                Ok((u, k))
            },
            (0.0, ka),
            (step.length, kb),
            settings.event_tol,
            100,
        )?;
        Ok(EndCheck::Stop(SpecialKind::DoubleZero, u))
    };
    let (points, special) = trace_both_ways(make, &u0, gi, gamma_range, settings, to_point, check)?;
    Ok(TwoParamLocus {
        kind: LocusKind::HB,
        points,
        special,
    })
}

fn check_range(r: (f64, f64)) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite()) || r.0 > r.1 {
        return Err(PelletError::InvalidParameter {
            field: "gamma_range",
            reason: format!("invalid interval [{}, {}]", r.0, r.1),
        });
    }
    Ok(())
}
