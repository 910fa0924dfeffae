//! Small numerical kernels shared by the modules: central differences,
//! a classical RK4 step, adaptive Simpson quadrature and a bracketed
//! scalar root solver.

use nalgebra::{DMatrix, DVector};

/// Relative finite-difference step `1e-6 * max(1, |c|)`.
pub fn fd_step(c: f64) -> f64 {
    1e-6 * c.abs().max(1.0)
}

/// Central difference of a scalar function at `c`.
///
/// The divisor is the representable distance `(c + h) - (c - h)` rather than
/// `2h`, so linear functions are differentiated without rounding bias.
pub fn central_diff<F: FnMut(f64) -> f64>(mut g: F, c: f64) -> f64 {
    let h = fd_step(c);
    let cp = c + h;
    let cm = c - h;
    (g(cp) - g(cm)) / (cp - cm)
}

/// Central difference of a vector-valued function of one scalar.
pub fn central_diff_vec<F: FnMut(f64) -> DVector<f64>>(mut g: F, c: f64) -> DVector<f64> {
    let h = fd_step(c);
    let cp = c + h;
    let cm = c - h;
    (g(cp) - g(cm)) / (cp - cm)
}

/// Gradient of a scalar function of a vector by central differences.
pub fn gradient<F: FnMut(&DVector<f64>) -> f64>(mut g: F, at: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(at.len());
    let mut probe = at.clone();
    for i in 0..at.len() {
        let c = at[i];
        out[i] = central_diff(
            |v| {
                probe[i] = v;
                g(&probe)
            },
            c,
        );
        probe[i] = c;
    }
    out
}

/// Jacobian `J[i][j] = ∂g_i/∂v_j` of a vector function by central differences.
pub fn jacobian<F: FnMut(&DVector<f64>) -> DVector<f64>>(
    mut g: F,
    at: &DVector<f64>,
    rows: usize,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, at.len());
    let mut probe = at.clone();
    for j in 0..at.len() {
        let c = at[j];
        let col = central_diff_vec(
            |v| {
                probe[j] = v;
                g(&probe)
            },
            c,
        );
        probe[j] = c;
        out.set_column(j, &col);
    }
    out
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(rhs: &F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Time grid from `t0` to `t1` with spacing `step`; the final interval may be
/// shorter so that the last node is exactly `t1`.
pub fn time_grid(t0: f64, t1: f64, step: f64) -> Vec<f64> {
    let span = t1 - t0;
    let full = (span / step).floor() as usize;
    let mut grid: Vec<f64> = (0..=full).map(|k| t0 + k as f64 * step).collect();
    let last = *grid.last().expect("grid has at least t0");
    // Absorb a trailing sliver smaller than 1e-9 of a step into the last node.
    if t1 - last > 1e-9 * step || grid.len() == 1 {
        grid.push(t1);
    } else {
        *grid.last_mut().expect("nonempty") = t1;
    }
    grid
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Outcome of [`solve_scalar`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarRoot {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Finds a root of `g` near `init`.
///
/// A sign change is searched in windows `init ± w` with `w` doubling from
/// `1e-2` up to `1e3 * max(1, |init|)`; the bracket is bisected and then
/// polished by Newton steps kept inside the bracket. Without a sign change
/// (even-multiplicity roots) a plain Newton iteration from `init` is tried.
pub fn solve_scalar<G: Fn(f64) -> f64>(g: &G, init: f64, tol: f64) -> Option<ScalarRoot> {
    let g0 = g(init);
    if !g0.is_finite() {
        return None;
    }
    if g0.abs() <= tol {
        return Some(ScalarRoot {
            value: init,
            residual: g0.abs(),
            iterations: 0,
        });
    }
    let limit = 1e3 * init.abs().max(1.0);
    let mut w = 1e-2;
    let mut bracket = None;
    while w <= limit * 2.0 {
        let (lo, hi) = (init - w, init + w);
        let (glo, ghi) = (g(lo), g(hi));
        if glo.is_finite() && glo.signum() != g0.signum() {
            bracket = Some((lo, init, glo));
            break;
        }
        if ghi.is_finite() && ghi.signum() != g0.signum() {
            bracket = Some((init, hi, g0));
            break;
        }
        w *= 2.0;
    }
    let mut iterations = 0;
    let start = match bracket {
        Some((mut a, mut b, mut ga)) => {
            while (b - a).abs() > 1e-8 * a.abs().max(b.abs()).max(1.0) && iterations < 200 {
                let m = 0.5 * (a + b);
                let gm = g(m);
                iterations += 1;
                if gm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if gm.signum() == ga.signum() {
                    a = m;
                    ga = gm;
                } else {
                    b = m;
                }
            }
            Some((a, b))
        }
        None => None,
    };
    let (mut x, bounds) = match start {
        Some((a, b)) => (0.5 * (a + b), Some((a, b))),
        None => (init, None),
    };
    let max_newton = if bounds.is_some() { 30 } else { 200 };
    for _ in 0..max_newton {
        let gx = g(x);
        if gx.abs() <= tol {
            return Some(ScalarRoot {
                value: x,
                residual: gx.abs(),
                iterations,
            });
        }
        let slope = central_diff(g, x);
        iterations += 1;
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let mut next = x - gx / slope;
        if let Some((a, b)) = bounds {
            if next < a.min(b) || next > a.max(b) {
                next = 0.5 * (x + if gx.signum() == g(a).signum() { b } else { a });
            }
        }
        if next == x {
            break;
        }
        x = next;
    }
    let gx = g(x);
    (gx.abs() <= tol).then_some(ScalarRoot {
        value: x,
        residual: gx.abs(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_on_linear_functions() {
        for &c in &[0.0, 0.3, -7.25, 1234.5] {
            assert!((central_diff(|v| 3.0 * v - 1.0, c) - 3.0).abs() < 1e-9);
        }
        assert_eq!(central_diff(|v| 3.0 * v, 0.3), 3.0);
    }

    #[test]
    fn rk4_exponential() {
        let rhs = |_t: f64, y: &DVector<f64>| y.clone();
        let mut y = DVector::from_element(1, 1.0);
        for k in 0..1000 {
            y = rk4_step(&rhs, k as f64 * 1e-3, &y, 1e-3);
        }
        assert!((y[0] - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn time_grid_ends_exactly() {
        let g = time_grid(0.0, 1.0, 0.3);
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = time_grid(0.0, 1.0, 1e-3);
        assert_eq!(g.len(), 1001);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn simpson_integrates_exponential() {
        let v = adaptive_simpson(&|s: f64| s.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn scalar_root_finds_simple_and_double_roots() {
        let r = solve_scalar(&|v| v * v - 2.0, 1.0, 1e-13).unwrap();
        assert!((r.value - 2f64.sqrt()).abs() < 1e-12);
        let r = solve_scalar(&|v| -(v * v), 0.5, 1e-12).unwrap();
        assert!(r.value.abs() < 1e-5);
        assert!(solve_scalar(&|v| v * v + 1.0, 0.0, 1e-12).is_none());
    }
}
