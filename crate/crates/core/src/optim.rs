//! Derivative-free minimizers: bounded Brent for one variable, Nelder–Mead
//! for small dimensions.

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum1d<T> {
    pub x: T,
    pub fx: T,
    pub evals: usize,
}

/// Minimizes `f` over `[lo, hi]` by Brent's method (golden section with
/// parabolic steps). Stops when the bracket shrinks below `xtol` around the
/// best point or after `max_iter` iterations.
pub fn brent_bounded<T: Scalar>(
    mut f: impl FnMut(T) -> T,
    lo: T,
    hi: T,
    xtol: T,
    max_iter: usize,
) -> Result<Minimum1d<T>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("bad bracket [{lo}, {hi}]")));
    }
    let golden = T::lit(0.381_966_011_250_105_1);
    let eps_sqrt = T::epsilon().sqrt();
    let (mut a, mut b) = (lo, hi);
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut evals = 1;
    let (mut d, mut e) = (T::zero(), T::zero());
    let half = T::lit(0.5);
    let two = T::lit(2.0);

    for _ in 0..max_iter {
        let mid = half * (a + b);
        let tol1 = eps_sqrt * x.abs() + xtol / T::lit(3.0);
        let tol2 = two * tol1;
        if (x - mid).abs() <= tol2 - half * (b - a) {
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            // parabola through x, w, v
            let r = (x - w) * (fx - fv);
            let q0 = (x - v) * (fx - fw);
            let mut p = (x - v) * q0 - (x - w) * r;
            let mut q = two * (q0 - r);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (half * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= mid { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        evals += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    if !fx.is_finite() {
        return Err(Error::Numerical("Brent objective is not finite at the minimum".into()));
    }
    Ok(Minimum1d { x, fx, evals })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig<T> {
    pub max_iter: usize,
    /// Largest vertex distance (per coordinate) from the best vertex.
    pub xtol: T,
    /// Largest objective spread across the simplex.
    pub ftol: T,
}

impl<T: Scalar> Default for NelderMeadConfig<T> {
    fn default() -> Self {
        Self {
            max_iter: 500,
            xtol: T::lit(1e-6),
            ftol: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimumNd<T> {
    pub x: Vec<T>,
    pub fx: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead with standard coefficients (reflect 1, expand 2, contract ½,
/// shrink ½). The initial simplex offsets `x0` by `steps[k]` along axis `k`.
pub fn nelder_mead<T: Scalar>(
    mut f: impl FnMut(&[T]) -> T,
    x0: &[T],
    steps: &[T],
    cfg: &NelderMeadConfig<T>,
) -> Result<MinimumNd<T>> {
    let n = x0.len();
    if n == 0 || steps.len() != n {
        return Err(Error::invalid("Nelder-Mead needs a non-empty start and one step per coordinate"));
    }
    let mut simplex: Vec<Vec<T>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] = v[k] + steps[k];
        simplex.push(v);
    }
    let mut fvals: Vec<T> = simplex.iter().map(|v| f(v)).collect();
    let half = T::lit(0.5);
    let mut iterations = 0;
    let mut converged = false;

    let point = |base: &[T], toward: &[T], t: T| -> Vec<T> {
        base.iter().zip(toward).map(|(&c, &w)| c + t * (w - c)).collect()
    };

    while iterations < cfg.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        // stable sort keeps the earlier vertex first among equal values
        order.sort_by(|&i, &j| fvals[i].partial_cmp(&fvals[j]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fvals = order.iter().map(|&i| fvals[i]).collect();

        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(&a, &b)| (a - b).abs()))
            .fold(T::zero(), T::max);
        let spread_f = fvals[1..].iter().map(|&fv| (fv - fvals[0]).abs()).fold(T::zero(), T::max);
        if spread_x <= cfg.xtol && spread_f <= cfg.ftol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<T> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<T>() / T::from_usize_lossy(n))
            .collect();
        let worst = simplex[n].clone();
        let reflected = point(&centroid, &worst, -T::one());
        let fr = f(&reflected);

        if fr < fvals[0] {
            let expanded = point(&centroid, &worst, -T::lit(2.0));
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                fvals[n] = fe;
            } else {
                simplex[n] = reflected;
                fvals[n] = fr;
            }
            continue;
        }
        if fr < fvals[n - 1] {
            simplex[n] = reflected;
            fvals[n] = fr;
            continue;
        }
        let (candidate, fc) = if fr < fvals[n] {
            let c = point(&centroid, &reflected, half);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = point(&centroid, &worst, half);
            let fc = f(&c);
            (c, fc)
        };
        if fc < fr.min(fvals[n]) {
            simplex[n] = candidate;
            fvals[n] = fc;
            continue;
        }
        for i in 1..=n {
            simplex[i] = point(&simplex[0], &simplex[i], half);
            fvals[i] = f(&simplex[i]);
        }
    }

    let best = (0..=n)
        .min_by(|&i, &j| fvals[i].partial_cmp(&fvals[j]).unwrap_or(std::cmp::Ordering::Equal))
        .expect("simplex is non-empty");
    if !fvals[best].is_finite() {
        return Err(Error::Numerical("Nelder-Mead found no finite objective value".into()));
    }
    Ok(MinimumNd {
        x: simplex[best].clone(),
        fx: fvals[best],
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_smooth_minima() {
        let m = brent_bounded(|x: f64| (x - 1.3).powi(2) + 0.5, 0.0, 5.0, 1e-8, 200).unwrap();
        assert!((m.x - 1.3).abs() < 1e-7, "{m:?}");
        let m = brent_bounded(|x: f64| x.cos(), 2.0, 4.0, 1e-8, 200).unwrap();
        assert!((m.x - std::f64::consts::PI).abs() < 1e-7);
        // minimum on the boundary
        let m = brent_bounded(|x: f64| x, 1.0, 2.0, 1e-8, 200).unwrap();
        assert!(m.x - 1.0 < 1e-7);
        assert!(brent_bounded(|x: f64| x, 2.0, 1.0, 1e-8, 10).is_err());
    }

    #[test]
    fn brent_in_f32() {
        let m = brent_bounded(|x: f32| (x - 0.25).abs(), -1.0, 1.0, 1e-5, 200).unwrap();
        assert!((m.x - 0.25).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |v: &[f64]| (1.0 - v[0]).powi(2) + 100.0 * (v[1] - v[0] * v[0]).powi(2);
        let cfg = NelderMeadConfig {
            max_iter: 5000,
            xtol: 1e-10,
            ftol: 1e-12,
        };
        let m = nelder_mead(rosen, &[-1.2, 1.0], &[0.1, 0.1], &cfg).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn nelder_mead_never_worse_than_start() {
        let bumpy = |v: &[f64]| ((v[0] * 7.0).sin() + (v[1] * 5.0).cos()).floor() + v[0] * v[0];
        let x0 = [0.4, -0.3];
        let m = nelder_mead(bumpy, &x0, &[0.2, 0.2], &NelderMeadConfig::default()).unwrap();
        assert!(m.fx <= bumpy(&x0));
        assert!(m.iterations <= 500);
    }
}
