//! Three-stage Radau IIA (order 5) with embedded error control, dense
//! output and internal differentiation for flow sensitivities.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

use crate::collocation::{Param, PelletSystem};
use crate::error::{PelletError, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Derivative of the right-hand side with respect to parameter `k`.
    fn param_derivative(&self, _x: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
        Err(PelletError::NotFound("system has no parameter sensitivities".into()))
    }
}

/// Parameter order for sensitivities: 0 is `theta0`, 1 is `gamma`.
impl OdeSystem for PelletSystem<'_> {
    fn dim(&self) -> usize {
        PelletSystem::dim(self)
    }
    fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        PelletSystem::rhs(self, x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        PelletSystem::jacobian(self, x)
    }
    fn param_derivative(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        let p = match k {
            0 => Param::Theta0,
            1 => Param::Gamma,
            _ => return Err(PelletError::NotFound(format!("no parameter with index {k}"))),
        };
        PelletSystem::param_derivative(self, x, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadauOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub h_min: f64,
    pub max_steps: usize,
    /// Abort if any component falls below this value.
    pub floor: Option<f64>,
}

impl Default for RadauOptions {
    fn default() -> Self {
        RadauOptions {
            rtol: 1e-9,
            atol: 1e-11,
            h_init: None,
            h_max: None,
            h_min: 1e-14,
            max_steps: 2_000_000,
            floor: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stats {
    pub steps: usize,
    pub rejected: usize,
    pub newton_failures: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub end: DVector<f64>,
    /// Requested sample times and the dense-output states there.
    pub times: Vec<f64>,
    pub samples: Vec<DVector<f64>>,
    /// Derivative of the end state with respect to the initial state.
    pub state_sensitivity: Option<DMatrix<f64>>,
    /// Derivative of the end state with respect to the requested parameters.
    pub param_sensitivity: Option<DMatrix<f64>>,
    pub stats: Stats,
}

const SQ6: f64 = 2.449_489_742_783_178;
const C1: f64 = (4.0 - SQ6) / 10.0;
const C2: f64 = (4.0 + SQ6) / 10.0;
const NIT: usize = 7;
const SAFE: f64 = 0.9;
const UROUND: f64 = 1e-16;

fn butcher() -> [[f64; 3]; 3] {
    [
        [
            (88.0 - 7.0 * SQ6) / 360.0,
            (296.0 - 169.0 * SQ6) / 1800.0,
            (-2.0 + 3.0 * SQ6) / 225.0,
        ],
        [
            (296.0 + 169.0 * SQ6) / 1800.0,
            (88.0 + 7.0 * SQ6) / 360.0,
            (-2.0 - 3.0 * SQ6) / 225.0,
        ],
        [(16.0 - SQ6) / 36.0, (16.0 + SQ6) / 36.0, 1.0 / 9.0],
    ]
}

const DD1: f64 = -(13.0 + 7.0 * SQ6) / 3.0;
const DD2: f64 = (-13.0 + 7.0 * SQ6) / 3.0;
const DD3: f64 = -1.0 / 3.0;
const U1: f64 = 3.637_834_252_744_496;

/// Collocation polynomial of one step through `x0` at 0 and the stages at
/// `c1, c2, 1`, in the normalized step variable.
#[derive(Debug, Clone)]
struct StepPoly {
    t0: f64,
    h: f64,
    nodes: [DVector<f64>; 4],
}

impl StepPoly {
    fn eval(&self, t: f64) -> DVector<f64> {
        let s = (t - self.t0) / self.h;
        let c = [0.0, C1, C2, 1.0];
        let mut out = DVector::zeros(self.nodes[0].len());
        for i in 0..4 {
            let mut l = 1.0;
            for j in 0..4 {
                if i != j {
                    l *= (s - c[j]) / (c[i] - c[j]);
                }
            }
            out.axpy(l, &self.nodes[i], 1.0);
        }
        out
    }
}

fn scaled_rms(v: &DVector<f64>, scal: &DVector<f64>) -> f64 {
    let n = scal.len();
    let s: f64 = v.iter().enumerate().map(|(i, e)| (e / scal[i % n]).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

/// Integrates from `x0` over `[0, t_end]`, returning dense samples at
/// `sample_times` (which must be sorted within `[0, t_end]`) and, when
/// `sensitivity` is `Some(params)`, the flow derivatives.
pub fn solve<S: OdeSystem>(
    sys: &S,
    x0: &DVector<f64>,
    t_end: f64,
    sample_times: &[f64],
    sensitivity: Option<&[usize]>,
    opts: &RadauOptions,
) -> Result<Solution> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(PelletError::InvalidParameter {
            field: "initial",
            reason: format!("state has {} components, system has {n}", x0.len()),
        });
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(PelletError::InvalidParameter {
            field: "tau_end",
            reason: format!("must be finite and non-negative, got {t_end}"),
        });
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(PelletError::InvalidParameter {
            field: "rtol",
            reason: "tolerances must be positive".into(),
        });
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.iter().any(|&t| t < 0.0 || t > t_end) {
        return Err(PelletError::InvalidParameter {
            field: "sample_times",
            reason: "sample times must be sorted and lie inside the integration interval".into(),
        });
    }
    let a = butcher();
    // internal tolerances of the order-3 embedded estimate
    let rtol = 0.1 * opts.rtol.powf(2.0 / 3.0);
    let atol = rtol * opts.atol / opts.rtol;
    let fnewt = (10.0 * UROUND / rtol).max(rtol.sqrt().min(0.03));
    let h_max = opts.h_max.unwrap_or(t_end).max(opts.h_min);

    let n_par = sensitivity.map_or(0, |p| p.len());
    let mut phi = sensitivity.map(|_| DMatrix::<f64>::identity(n, n));
    let mut phi_p = sensitivity.map(|_| DMatrix::<f64>::zeros(n, n_par));

    let mut t = 0.0;
    let mut x = x0.clone();
    let mut f0 = sys.rhs(&x)?;
    let mut h = opts.h_init.unwrap_or_else(|| {
        let scale = x.iter().map(|v| atol + rtol * v.abs()).fold(f64::INFINITY, f64::min);
        let fn_ = f0.amax().max(1e-10);
        (0.01 * (scale / rtol).max(rtol) / fn_ * 1e-2).clamp(1e-8, 1e-3)
    });
    h = h.min(h_max);
    let mut stats = Stats::default();
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0;
    while next_sample < sample_times.len() && sample_times[next_sample] <= 0.0 {
        samples.push(x.clone());
        next_sample += 1;
    }
    let mut prev_poly: Option<StepPoly> = None;
    let mut first = true;
    let mut last_rejected = false;
    let mut faccon = 1.0f64;

    while t < t_end && t_end - t > 1e-14 * t_end.max(1.0) {
        if stats.steps + stats.rejected > opts.max_steps {
            return Err(PelletError::NoConvergence {
                what: "Radau step budget",
                iterations: opts.max_steps,
                residual: t,
            });
        }
        let mut last = false;
        if t + h >= t_end || t + 1.0001 * h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h < opts.h_min {
            return Err(PelletError::StepUnderflow {
                what: "Radau integrator",
                step: h,
            });
        }
        let scal = DVector::from_iterator(n, x.iter().map(|v| atol + rtol * v.abs()));
        let j0 = sys.jacobian(&x)?;

        // Newton matrix I - h (A kron J0)
        let mut m = DMatrix::<f64>::identity(3 * n, 3 * n);
        for i in 0..3 {
            for j in 0..3 {
                let mut blk = m.view_mut((i * n, j * n), (n, n));
                blk += &j0 * (-h * a[i][j]);
            }
        }
        let lu = m.lu();

        let mut z = DVector::<f64>::zeros(3 * n);
        if let (Some(p), false) = (&prev_poly, first) {
            for (i, c) in [C1, C2, 1.0].iter().enumerate() {
                let v = p.eval(t + c * h) - &x;
                z.rows_mut(i * n, n).copy_from(&v);
            }
        }

        // simplified Newton on the stage increments
        faccon = faccon.max(UROUND).powf(0.8);
        let mut converged = false;
        let mut newt = 0;
        let mut theta = 0.0;
        let mut dynold = 0.0f64;
        let mut thqold = 0.0;
        let mut h_shrink: Option<f64> = None;
        while newt < NIT {
            let mut fz = Vec::with_capacity(3);
            let mut bad = false;
            for i in 0..3 {
                let yi = &x + z.rows(i * n, n);
                match sys.rhs(&yi) {
                    Ok(f) if f.iter().all(|v| v.is_finite()) => fz.push(f),
                    _ => {
                        bad = true;
                        break;
                    }
                }
            }
            if bad {
                h_shrink = Some(0.5);
                break;
            }
            let mut g = DVector::zeros(3 * n);
            for i in 0..3 {
                let mut r = -z.rows(i * n, n).into_owned();
                for j in 0..3 {
                    r.axpy(h * a[i][j], &fz[j], 1.0);
                }
                g.rows_mut(i * n, n).copy_from(&r);
            }
            let dz = lu.solve(&g).ok_or(PelletError::Singular("Radau Newton matrix"))?;
            let dyno = scaled_rms(&dz, &scal);
            if newt >= 1 {
                let thq = dyno / dynold;
                theta = if newt == 1 { thq } else { (thq * thqold).sqrt() };
                thqold = thq;
                if theta < 0.99 {
                    faccon = theta / (1.0 - theta);
                    let dyth = faccon * dyno * theta.powi((NIT - 1 - newt) as i32) / fnewt;
                    if dyth >= 1.0 {
                        let qnewt = dyth.clamp(1e-4, 20.0);
                        h_shrink = Some(0.8 * qnewt.powf(-1.0 / (4.0 + NIT as f64 - 1.0 - newt as f64)));
                        break;
                    }
                } else {
                    h_shrink = Some(0.5);
                    break;
                }
            }
            dynold = dyno.max(UROUND);
            z += &dz;
            newt += 1;
            if faccon * dyno <= fnewt {
                converged = true;
                break;
            }
        }
        let _ = theta;
        if !converged {
            stats.newton_failures += 1;
            h *= h_shrink.unwrap_or(0.5);
            last_rejected = true;
            continue;
        }

        // error estimate
        let z1 = z.rows(0, n).into_owned();
        let z2 = z.rows(n, n).into_owned();
        let z3 = z.rows(2 * n, n).into_owned();
        let f2 = (&z1 * DD1 + &z2 * DD2 + &z3 * DD3) / h;
        let mut e1 = -j0.clone();
        for i in 0..n {
            e1[(i, i)] += U1 / h;
        }
        let e1 = e1.lu();
        let mut err_v = e1
            .solve(&(&f0 + &f2))
            .ok_or(PelletError::Singular("Radau error matrix"))?;
        let mut err = scaled_rms(&err_v, &scal).max(1e-10);
        if err >= 1.0 && (first || last_rejected) {
            if let Ok(ff) = sys.rhs(&(&x + &err_v)) {
                err_v = e1
                    .solve(&(ff + &f2))
                    .ok_or(PelletError::Singular("Radau error matrix"))?;
                err = scaled_rms(&err_v, &scal).max(1e-10);
            }
        }

        let cfac = SAFE * (1.0 + 2.0 * NIT as f64);
        let fac = SAFE.min(cfac / (newt as f64 + 2.0 * NIT as f64));
        let quot = (err.powf(0.25) / fac).clamp(0.125, 5.0);
        let mut h_new = h / quot;

        if err < 1.0 {
            let x1 = &x + &z3;
            if let Some(floor) = opts.floor {
                if let Some(v) = x1.iter().find(|v| **v < floor) {
                    return Err(PelletError::Invariant(format!(
                        "state component {v:.3e} fell below {floor:.3e} at tau = {:.6}",
                        t + h
                    )));
                }
            }
            if let (Some(phi), Some(phi_p), Some(params)) = (phi.as_mut(), phi_p.as_mut(), sensitivity) {
                let ys = [&x + &z1, &x + &z2, x1.clone()];
                let js: Vec<DMatrix<f64>> = ys.iter().map(|y| sys.jacobian(y)).collect::<Result<_>>()?;
                let mut s = DMatrix::<f64>::identity(3 * n, 3 * n);
                for i in 0..3 {
                    for j in 0..3 {
                        let mut blk = s.view_mut((i * n, j * n), (n, n));
                        blk += &js[j] * (-h * a[i][j]);
                    }
                }
                let cols = n + params.len();
                let mut rhs = DMatrix::zeros(3 * n, cols);
                for j in 0..3 {
                    let mut src = DMatrix::zeros(n, cols);
                    src.view_mut((0, 0), (n, n)).copy_from(&(&js[j] * &*phi));
                    let jp = &js[j] * &*phi_p;
                    for (k, &pk) in params.iter().enumerate() {
                        let col = jp.column(k) + sys.param_derivative(&ys[j], pk)?;
                        src.set_column(n + k, &col);
                    }
                    for i in 0..3 {
                        let mut blk = rhs.view_mut((i * n, 0), (n, cols));
                        blk += &src * (h * a[i][j]);
                    }
                }
                let dz = s.lu().solve(&rhs).ok_or(PelletError::Singular("Radau sensitivity"))?;
                *phi += dz.view((2 * n, 0), (n, n));
                *phi_p += dz.view((2 * n, n), (n, params.len()));
            }
            let poly = StepPoly {
                t0: t,
                h,
                nodes: [x.clone(), &x + &z1, &x + &z2, x1.clone()],
            };
            let t1 = if last { t_end } else { t + h };
            while next_sample < sample_times.len() && sample_times[next_sample] <= t1 {
                let ts = sample_times[next_sample];
                samples.push(if ts == t1 { x1.clone() } else { poly.eval(ts) });
                next_sample += 1;
            }
            t = t1;
            x = x1;
            f0 = sys.rhs(&x)?;
            prev_poly = Some(poly);
            stats.steps += 1;
            if last_rejected {
                h_new = h_new.min(h);
            }
            first = false;
            last_rejected = false;
            h = h_new.min(h_max);
        } else {
            stats.rejected += 1;
            h = if first { 0.1 * h } else { h_new };
            last_rejected = true;
        }
    }
    while next_sample < sample_times.len() {
        samples.push(x.clone());
        next_sample += 1;
    }
    Ok(Solution {
        end: x,
        times: sample_times.to_vec(),
        samples,
        state_sensitivity: phi,
        param_sensitivity: phi_p,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Linear system `x' = M x` with a parameter in one entry.
    struct Linear {
        m: DMatrix<f64>,
    }

    impl OdeSystem for Linear {
        fn dim(&self) -> usize {
            self.m.nrows()
        }
        fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(&self.m * x)
        }
        fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(self.m.clone())
        }
        fn param_derivative(&self, x: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
            // parameter multiplies the whole matrix: x' = p M x at p = 1
            Ok(&self.m * x)
        }
    }

    /// Van der Pol oscillator with stiffness `mu`.
    struct VanDerPol {
        mu: f64,
    }

    impl OdeSystem for VanDerPol {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![
                x[1],
                self.mu * ((1.0 - x[0] * x[0]) * x[1] - x[0]),
            ]))
        }
        fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(
                2,
                2,
                &[
                    0.0,
                    1.0,
                    self.mu * (-2.0 * x[0] * x[1] - 1.0),
                    self.mu * (1.0 - x[0] * x[0]),
                ],
            ))
        }
    }

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let sys = Linear {
            m: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        };
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let ts: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
        let sol = solve(&sys, &x0, 20.0, &ts, None, &RadauOptions::default()).unwrap();
        for (t, x) in ts.iter().zip(&sol.samples) {
            assert!((x[0] - t.cos()).abs() < 1e-7, "t {t}: {} vs {}", x[0], t.cos());
            assert!((x[1] + t.sin()).abs() < 1e-7);
        }
    }

    #[test]
    fn stiff_decay_is_stable() {
        let sys = Linear {
            m: DMatrix::from_row_slice(2, 2, &[-1e6, 0.0, 0.0, -1.0]),
        };
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let sol = solve(&sys, &x0, 5.0, &[], None, &RadauOptions::default()).unwrap();
        assert!(sol.end[0].abs() < 1e-10);
        assert!((sol.end[1] - (-5.0f64).exp()).abs() < 1e-8);
        assert!(sol.stats.steps < 2000, "{:?}", sol.stats);
    }

    #[test]
    fn sensitivities_match_matrix_exponential() {
        let m = DMatrix::from_row_slice(2, 2, &[-0.5, 2.0, -1.0, -0.3]);
        let sys = Linear { m: m.clone() };
        let x0 = DVector::from_vec(vec![0.7, -0.2]);
        let t = 3.0;
        let sol = solve(&sys, &x0, t, &[], Some(&[0]), &RadauOptions::default()).unwrap();
        let expm = (&m * t).exp();
        let phi = sol.state_sensitivity.unwrap();
        assert!((&phi - &expm).amax() < 1e-7, "{phi} vs {expm}");
        // d/dp exp(p M t) x0 at p = 1 is t M exp(M t) x0
        let dp = &m * &expm * &x0 * t;
        let got = sol.param_sensitivity.unwrap();
        assert!((got.column(0) - dp).amax() < 1e-7);
    }

    #[test]
    fn van_der_pol_sensitivity_matches_finite_differences() {
        let sys = VanDerPol { mu: 5.0 };
        let x0 = DVector::from_vec(vec![2.0, 0.0]);
        let opts = RadauOptions {
            rtol: 1e-11,
            atol: 1e-13,
            ..Default::default()
        };
        let sol = solve(&sys, &x0, 4.0, &[], Some(&[]), &opts).unwrap();
        let phi = sol.state_sensitivity.unwrap();
        for k in 0..2 {
            let h = 1e-6;
            let mut xp = x0.clone();
            xp[k] += h;
            let mut xm = x0.clone();
            xm[k] -= h;
            let fp = solve(&sys, &xp, 4.0, &[], None, &opts).unwrap().end;
            let fm = solve(&sys, &xm, 4.0, &[], None, &opts).unwrap().end;
            let col = (fp - fm) / (2.0 * h);
            assert!(
                (phi.column(k) - &col).amax() < 1e-4 * col.amax().max(1.0),
                "{} vs {}",
                phi.column(k),
                col
            );
        }
    }

    #[test]
    fn dense_output_hits_requested_times() {
        let sys = Linear {
            m: DMatrix::from_row_slice(1, 1, &[-1.0]),
        };
        let x0 = DVector::from_vec(vec![1.0]);
        let ts = [0.0, 0.123, 1.0, 2.5, 3.0];
        let sol = solve(&sys, &x0, 3.0, &ts, None, &RadauOptions::default()).unwrap();
        assert_eq!(sol.samples.len(), ts.len());
        for (t, x) in ts.iter().zip(&sol.samples) {
            assert!((x[0] - (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let sys = VanDerPol { mu: 1.0 };
        let x0 = DVector::from_vec(vec![2.0, 0.0]);
        assert!(solve(&sys, &x0, -1.0, &[], None, &RadauOptions::default()).is_err());
        assert!(solve(&sys, &x0, 1.0, &[2.0], None, &RadauOptions::default()).is_err());
        assert!(solve(&sys, &DVector::zeros(3), 1.0, &[], None, &RadauOptions::default()).is_err());
    }
}
