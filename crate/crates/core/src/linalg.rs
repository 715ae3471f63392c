//! Dense linear algebra for small nonsymmetric matrices.
//!
//! Eigenvalues come from balancing, Householder reduction to upper
//! Hessenberg form and the Francis implicit double-shift QR iteration.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{PelletError, Result};

const MAX_QR_SWEEPS: usize = 60;

/// Scales rows/columns by powers of two to equalize their norms.
fn balance(a: &mut DMatrix<f64>) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// Reduces `a` in place to upper Hessenberg form by Householder reflections.
pub fn hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|x| x * x).sum::<f64>();
        if vnorm2 == 0.0 {
            continue;
        }
        // H = I - 2 v v^T / (v^T v), applied from the left and the right
        for j in k..n {
            let s: f64 = (0..v.len()).map(|i| v[i] * a[(k + 1 + i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in 0..v.len() {
                a[(k + 1 + i, j)] -= s * v[i];
            }
        }
        for i in 0..n {
            let s: f64 = (0..v.len()).map(|j| a[(i, k + 1 + j)] * v[j]).sum::<f64>() * 2.0 / vnorm2;
            for j in 0..v.len() {
                a[(i, k + 1 + j)] -= s * v[j];
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix (destroyed on return).
fn hqr(a: &mut DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r);
    while nn >= 0 {
        let nu = nn as usize;
        let mut its = 0;
        loop {
            // look for a single small subdiagonal element
            let mut l = nu;
            while l >= 1 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() + s == s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[(nu, nu)];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[(nu - 1, nu - 1)];
            let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
            if l + 1 == nu {
                p = 0.5 * (y - x);
                q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = x + z;
                    if z != 0.0 {
                        wr[nu] = x - w / z;
                    }
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its == MAX_QR_SWEEPS {
                return Err(PelletError::NoConvergence {
                    what: "Hessenberg QR iteration",
                    iterations: its,
                    residual: a[(nu, nu - 1)].abs(),
                });
            }
            if its == 10 || its == 20 || its == 40 {
                // exceptional shift
                t += x;
                for i in 0..=nu {
                    a[(i, i)] -= x;
                }
                let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            // form shift and look for two consecutive small subdiagonals
            let mut m = nu - 2;
            loop {
                let z = a[(m, m)];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - r - s;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[(i, i - 3)] = 0.0;
                }
            }
            // double QR step on rows l..nu and columns m..nu
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = if k + 1 != nu { a[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[(k, k - 1)] = -a[(k, k - 1)];
                        }
                    } else {
                        a[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                        if k + 1 != nu {
                            pp += r * a[(k + 2, j)];
                            a[(k + 2, j)] -= pp * z;
                        }
                        a[(k + 1, j)] -= pp * y;
                        a[(k, j)] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                        if k + 1 != nu {
                            pp += z * a[(i, k + 2)];
                            a[(i, k + 2)] -= pp * r;
                        }
                        a[(i, k + 1)] -= pp * q;
                        a[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}

/// All eigenvalues of a real square matrix, sorted by real part descending
/// (ties by imaginary part descending).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(PelletError::Invariant("eigenvalues of a non-square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(PelletError::Domain("non-finite matrix entry".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    let mut ev = hqr(&mut h)?;
    sort_eigenvalues(&mut ev);
    Ok(ev)
}

pub fn sort_eigenvalues(ev: &mut [Complex64]) {
    ev.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Unit vector spanning the (numerical) null space of `a`: the right
/// singular vector of the smallest singular value.
pub fn null_vector(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.ok_or(PelletError::Singular("null vector"))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
        .ok_or(PelletError::Singular("null vector"))?;
    Ok(vt.row(idx).transpose())
}

/// Two orthonormal vectors spanning the two-dimensional near-null space of `a`.
pub fn null_pair(a: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.ok_or(PelletError::Singular("null pair"))?;
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[i].partial_cmp(&svd.singular_values[j]).unwrap());
    if idx.len() < 2 {
        return Err(PelletError::Singular("null pair"));
    }
    Ok((vt.row(idx[0]).transpose(), vt.row(idx[1]).transpose()))
}

/// Solves `a x = b`, reporting singular systems.
pub fn solve(a: DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let x = a.lu().solve(b).ok_or(PelletError::Singular(what))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(PelletError::Singular(what))
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        cols.push((f(&xp)? - f(&xm)?) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn reference(a: &DMatrix<f64>) -> Vec<Complex64> {
        let mut ev: Vec<Complex64> = a.clone().complex_eigenvalues().iter().cloned().collect();
        sort_eigenvalues(&mut ev);
        ev
    }

    fn matches(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        // greedy pairing; orderings of near-equal real parts may differ
        let mut used = vec![false; b.len()];
        a.iter().all(|x| {
            let best = (0..b.len())
                .filter(|&j| !used[j])
                .min_by(|&i, &j| (b[i] - x).norm().partial_cmp(&(b[j] - x).norm()).unwrap());
            match best {
                Some(j) if (b[j] - x).norm() <= tol * (1.0 + x.norm()) => {
                    used[j] = true;
                    true
                }
                _ => false,
            }
        })
    }

    #[test]
    fn known_spectra() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let ev = eigenvalues(&a).unwrap();
        assert!((ev[0] - Complex64::new(0.0, 2.0)).norm() < 1e-14);
        assert!((ev[1] - Complex64::new(0.0, -2.0)).norm() < 1e-14);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0, -7.0]));
        let ev = eigenvalues(&d).unwrap();
        let re: Vec<f64> = ev.iter().map(|c| c.re).collect();
        assert_eq!(re, vec![3.0, 2.0, -1.0, -7.0]);

        // companion matrix of (t - 1)(t - 2)(t - 3)
        let c = DMatrix::from_row_slice(3, 3, &[6.0, -11.0, 6.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ev = eigenvalues(&c).unwrap();
        for (e, want) in ev.iter().zip([3.0, 2.0, 1.0]) {
            assert!((e - Complex64::new(want, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn random_matrices_agree_with_schur_reference() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for n in [1, 2, 3, 5, 9, 13, 25, 40, 65] {
            for _ in 0..5 {
                let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
                let ev = eigenvalues(&a).unwrap();
                assert_eq!(ev.len(), n);
                assert!(matches(&ev, &reference(&a), 1e-9), "n={n}");
                let tr: f64 = ev.iter().map(|c| c.re).sum();
                assert!((tr - a.trace()).abs() < 1e-9 * n as f64);
            }
        }
    }

    #[test]
    fn badly_scaled_matrix() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let n = 9;
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        // diagonal similarity: same spectrum as b, entries spread over 16 decades
        let mut a = b.clone();
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] *= 10f64.powi(i as i32 - j as i32);
            }
        }
        assert!(matches(&eigenvalues(&a).unwrap(), &reference(&b), 1e-10));
    }

    #[test]
    fn null_vectors() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        let v = null_vector(&a).unwrap();
        assert!((&a * &v).amax() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }
}
