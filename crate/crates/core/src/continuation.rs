//! Generic pseudo-arclength predictor-corrector.
//!
//! A [`ContinuationProblem`] supplies `m - 1` equations in `m` unknowns;
//! the driver follows the one-dimensional solution curve with a secant
//! (tangent) predictor, a Newton corrector constrained to the hyperplane
//! orthogonal to the tangent, and an adaptive step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PelletError, Result};
use crate::linalg;

pub trait ContinuationProblem {
    /// Number of unknowns; the residual has one entry fewer.
    fn dim(&self) -> usize;

    fn residual_jacobian(&mut self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;

    fn residual(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.residual_jacobian(x).map(|(f, _)| f)
    }

    /// Per-unknown scale of the arclength metric.
    fn weights(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }

    /// Called once per accepted point; problems may refresh reference data
    /// (phase conditions, eigenvector normalizations) here.
    fn accept(&mut self, _x: &DVector<f64>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSettings {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub grow: f64,
    pub shrink: f64,
    pub max_newton_iter: usize,
    /// Newton iterations at or below which the step grows.
    pub fast_iter: usize,
    pub residual_tol: f64,
    pub step_tol: f64,
    /// Minimum cosine between successive tangents.
    pub min_tangent_cos: f64,
    pub max_points: usize,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            initial_step: 1e-3,
            min_step: 1e-9,
            max_step: 5e-2,
            grow: 1.3,
            shrink: 0.5,
            max_newton_iter: 10,
            fast_iter: 3,
            residual_tol: 1e-11,
            step_tol: 1e-10,
            min_tangent_cos: 0.9,
            max_points: 5000,
        }
    }
}

/// Weighted inner product `sum w_i^2 a_i b_i`.
pub fn wdot(w: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    w.iter()
        .zip(a.iter().zip(b.iter()))
        .map(|(w, (a, b))| w * w * a * b)
        .sum()
}

pub fn wnorm(w: &DVector<f64>, a: &DVector<f64>) -> f64 {
    wdot(w, a, a).sqrt()
}

/// Unit tangent of the curve at `x`, oriented along `reference`.
pub fn tangent<P: ContinuationProblem>(
    problem: &mut P,
    x: &DVector<f64>,
    reference: &DVector<f64>,
) -> Result<DVector<f64>> {
    let w = problem.weights();
    let (_, jac) = problem.residual_jacobian(x)?;
    let m = problem.dim();
    let mut aug = DMatrix::zeros(m, m);
    aug.view_mut((0, 0), (m - 1, m)).copy_from(&jac);
    for j in 0..m {
        aug[(m - 1, j)] = w[j] * w[j] * reference[j];
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let t = match linalg::solve(aug, &rhs, "continuation tangent") {
        Ok(t) => t,
        // reference orthogonal to the curve: fall back on the kernel of J
        Err(_) => linalg::null_vector(&jac)?,
    };
    let mut t = &t / wnorm(&w, &t);
    if wdot(&w, &t, reference) < 0.0 {
        t = -t;
    }
    Ok(t)
}

/// Newton corrector on `F(x) = 0` plus `<t, x - anchor>_W = 0`.
/// Returns the converged point and the iteration count.
pub fn correct<P: ContinuationProblem>(
    problem: &mut P,
    predictor: &DVector<f64>,
    anchor: &DVector<f64>,
    t: &DVector<f64>,
    settings: &ContinuationSettings,
) -> Result<(DVector<f64>, usize)> {
    let w = problem.weights();
    let m = problem.dim();
    let mut x = predictor.clone();
    let mut last_dx = f64::INFINITY;
    let mut last_res = f64::INFINITY;
    for it in 1..=settings.max_newton_iter {
        let (f, jac) = problem.residual_jacobian(&x)?;
        last_res = f.amax();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(PelletError::Domain("non-finite residual in corrector".into()));
        }
        let mut aug = DMatrix::zeros(m, m);
        aug.view_mut((0, 0), (m - 1, m)).copy_from(&jac);
        let mut rhs = DVector::zeros(m);
        rhs.rows_mut(0, m - 1).copy_from(&(-&f));
        for j in 0..m {
            aug[(m - 1, j)] = w[j] * w[j] * t[j];
        }
        rhs[m - 1] = -wdot(&w, t, &(&x - anchor));
        let dx = linalg::solve(aug, &rhs, "continuation corrector")?;
        let dxn = wnorm(&w, &dx);
        x += &dx;
        if !dxn.is_finite() {
            break;
        }
        if dxn <= settings.step_tol {
            let f = problem.residual(&x)?;
            // two negligible updates in a row: the residual sits at its
            // rounding floor, which for badly scaled systems exceeds the tolerance
            if f.amax() <= settings.residual_tol || last_dx <= settings.step_tol {
                return Ok((x, it));
            }
        }
        // growth at roundoff level is noise, not divergence
        if it > 2 && dxn > 2.0 * last_dx && dxn > settings.step_tol {
            break;
        }
        last_dx = dxn;
    }
    Err(PelletError::NoConvergence {
        what: "continuation corrector",
        iterations: settings.max_newton_iter,
        residual: last_res,
    })
}

/// Outcome of one accepted continuation step.
#[derive(Debug, Clone)]
pub struct Step {
    pub from: DVector<f64>,
    pub from_tangent: DVector<f64>,
    /// Arclength actually travelled along `from_tangent`.
    pub length: f64,
    pub x: DVector<f64>,
    pub tangent: DVector<f64>,
    pub newton_iter: usize,
}

/// Stateful path follower.
pub struct Continuer<P: ContinuationProblem> {
    pub problem: P,
    pub x: DVector<f64>,
    pub tangent: DVector<f64>,
    pub step: f64,
    pub settings: ContinuationSettings,
}

impl<P: ContinuationProblem> Continuer<P> {
    /// Starts at a converged point `x0`, heading along `direction`.
    pub fn new(
        mut problem: P,
        x0: DVector<f64>,
        direction: &DVector<f64>,
        settings: ContinuationSettings,
    ) -> Result<Self> {
        problem.accept(&x0)?;
        let tangent = tangent(&mut problem, &x0, direction)?;
        Ok(Continuer {
            problem,
            x: x0,
            tangent,
            step: settings.initial_step,
            settings,
        })
    }

    /// Like [`Continuer::new`] but with a prescribed initial tangent
    /// (branch switching).
    pub fn with_tangent(
        mut problem: P,
        x0: DVector<f64>,
        tangent: DVector<f64>,
        settings: ContinuationSettings,
    ) -> Result<Self> {
        problem.accept(&x0)?;
        let w = problem.weights();
        let t = &tangent / wnorm(&w, &tangent);
        Ok(Continuer {
            problem,
            x: x0,
            tangent: t,
            step: settings.initial_step,
            settings,
        })
    }

    /// Converged point at arclength `s` along the tangent of `base`.
    pub fn point_at(&mut self, base: &DVector<f64>, t: &DVector<f64>, s: f64) -> Result<DVector<f64>> {
        let pred = base + t * s;
        correct(&mut self.problem, &pred, &pred, t, &self.settings).map(|(x, _)| x)
    }

    /// Takes one accepted step, shrinking the step size on failure.
    pub fn advance(&mut self) -> Result<Step> {
        let w = self.problem.weights();
        loop {
            let h = self.step;
            let pred = &self.x + &self.tangent * h;
            let attempt =
                correct(&mut self.problem, &pred, &pred, &self.tangent, &self.settings).and_then(|(x, it)| {
                    let t = tangent(&mut self.problem, &x, &self.tangent)?;
                    Ok((x, t, it))
                });
            match attempt {
                Ok((x, t, it))
                    if wdot(&w, &t, &self.tangent) >= self.settings.min_tangent_cos || h <= self.settings.min_step =>
                {
                    self.problem.accept(&x)?;
                    let step = Step {
                        from: std::mem::replace(&mut self.x, x.clone()),
                        from_tangent: std::mem::replace(&mut self.tangent, t.clone()),
                        length: h,
                        x,
                        tangent: t,
                        newton_iter: it,
                    };
                    if it <= self.settings.fast_iter {
                        self.step = (h * self.settings.grow).min(self.settings.max_step);
                    }
                    return Ok(step);
                }
                _ => {
                    let next = h * self.settings.shrink;
                    if next < self.settings.min_step {
                        return Err(PelletError::StepUnderflow {
                            what: "pseudo-arclength continuation",
                            step: next,
                        });
                    }
                    self.step = next;
                }
            }
        }
    }
}

/// Illinois (modified regula falsi) root refinement of a scalar test
/// function along one continuation step. `eval(s)` returns the converged
/// point at arclength `s` and the test-function value there.
pub fn refine_event<F>(
    mut eval: F,
    mut lo: (f64, f64),
    mut hi: (f64, f64),
    s_tol: f64,
    max_iter: usize,
) -> Result<(f64, DVector<f64>)>
where
    F: FnMut(f64) -> Result<(DVector<f64>, f64)>,
{
    if lo.1 * hi.1 > 0.0 {
        return Err(PelletError::NotFound("test function does not change sign".into()));
    }
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let mut side = 0i8;
    for _ in 0..max_iter {
        let s = if hi.1 != lo.1 {
            (lo.0 * hi.1 - hi.0 * lo.1) / (hi.1 - lo.1)
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let s = if s.is_finite() && s > lo.0.min(hi.0) && s < lo.0.max(hi.0) {
            s
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let (x, g) = eval(s)?;
        if best.as_ref().is_none_or(|b| g.abs() < b.2.abs()) {
            best = Some((s, x.clone(), g));
        }
        if g == 0.0 || (hi.0 - lo.0).abs() <= s_tol {
            break;
        }
        if g * lo.1 < 0.0 {
            hi = (s, g);
            if side == -1 {
                lo.1 *= 0.5;
            }
            side = -1;
        } else {
            lo = (s, g);
            if side == 1 {
                hi.1 *= 0.5;
            }
            side = 1;
        }
        if (hi.0 - lo.0).abs() <= s_tol {
            break;
        }
    }
    best.map(|(s, x, _)| (s, x))
        .ok_or_else(|| PelletError::NotFound("event refinement produced no point".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit circle `x^2 + y^2 = 1`.
    struct Circle;

    impl ContinuationProblem for Circle {
        fn dim(&self) -> usize {
            2
        }
        fn residual_jacobian(&mut self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
            Ok((
                DVector::from_element(1, x[0] * x[0] + x[1] * x[1] - 1.0),
                DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
            ))
        }
    }

    #[test]
    fn follows_circle_through_turning_points() {
        let settings = ContinuationSettings {
            max_step: 0.1,
            ..Default::default()
        };
        let start = DVector::from_vec(vec![1.0, 0.0]);
        let mut c = Continuer::new(Circle, start.clone(), &DVector::from_vec(vec![0.0, 1.0]), settings).unwrap();
        let mut travelled = 0.0;
        let mut turns = 0;
        while travelled < 2.0 * std::f64::consts::PI - 0.2 {
            let s = c.advance().unwrap();
            travelled += (s.x.clone() - &s.from).norm();
            assert!((s.x.norm() - 1.0).abs() < 1e-10);
            if s.tangent[1] * s.from_tangent[1] < 0.0 {
                turns += 1;
            }
        }
        assert_eq!(turns, 2, "two folds in y along a full loop");
        assert!((c.x.clone() - start).norm() < 0.25);
    }

    #[test]
    fn illinois_finds_root() {
        let (s, _) = refine_event(
            |s| Ok((DVector::from_element(1, s), s.powi(3) - 0.2)),
            (0.0, -0.2),
            (1.0, 0.8),
            1e-14,
            100,
        )
        .unwrap();
        assert!((s - 0.2f64.cbrt()).abs() < 1e-12);
    }
}
