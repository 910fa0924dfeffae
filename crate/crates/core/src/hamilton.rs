//! Hamiltonian lift `H = λ·f`, fixed-step RK4 integration of the canonical
//! pair `ẋ = f`, `λ̇ = −Aᵀλ`, fundamental matrices and energy diagnostics.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::numeric::{rk4_step, time_grid};
use crate::phasecore::{DynamicSystem, Matrix, PhaseState, Trajectory, Truncation, Vector};

/// Any state component beyond this magnitude truncates an integration.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// Determinants below this magnitude mark a fundamental matrix as singular.
pub const SINGULAR_DET: f64 = 1e-12;

pub const INTEGRATOR: &str = "rk4";

fn non_finite(what: &str, s: &PhaseState) -> Error {
    Error::NonFinite {
        what: what.into(),
        point: s.describe(),
    }
}

/// `H = λ·f(x, t)`.
pub fn hamiltonian(sys: &DynamicSystem, s: &PhaseState) -> Result<f64> {
    s.expect_dim(sys.dim())?;
    let h = s.lam.dot(&sys.field(&s.x, s.t));
    if h.is_finite() {
        Ok(h)
    } else {
        Err(non_finite("hamiltonian", s))
    }
}

/// Right-hand side of the canonical pair: `(f(x,t), −Aᵀλ)`.
pub fn canonical_rhs(sys: &DynamicSystem, s: &PhaseState) -> Result<(Vector, Vector)> {
    s.expect_dim(sys.dim())?;
    Ok(rhs_parts(sys, &s.x, &s.lam, s.t))
}

fn rhs_parts(sys: &DynamicSystem, x: &Vector, lam: &Vector, t: f64) -> (Vector, Vector) {
    let dx = sys.field(x, t);
    let dlam = -(sys.jacobian(x, t).transpose() * lam);
    (dx, dlam)
}

/// `L = λ·(ẋ − f)` for a supplied velocity `xdot`.
pub fn lagrangian(sys: &DynamicSystem, s: &PhaseState, xdot: &Vector) -> Result<f64> {
    s.expect_dim(sys.dim())?;
    check_dim(sys.dim(), xdot.len(), "velocity")?;
    Ok(s.lam.dot(&(xdot - sys.field(&s.x, s.t))))
}

/// Lagrangian evaluated with the extremal velocity `ẋ = f`; identically zero.
pub fn lagrangian_on_extremal(sys: &DynamicSystem, s: &PhaseState) -> Result<f64> {
    let (dx, _) = canonical_rhs(sys, s)?;
    lagrangian(sys, s, &dx)
}

/// Weierstrass excess `E = L(g) − L(ẋ) − (g − ẋ)·L_ẋ` of the lifted
/// Lagrangian. Since `L` is linear in the velocity, `E` vanishes identically.
pub fn weierstrass_excess(sys: &DynamicSystem, s: &PhaseState, xdot: &Vector, g: &Vector) -> Result<f64> {
    check_dim(sys.dim(), g.len(), "comparison velocity")?;
    let lg = lagrangian(sys, s, g)?;
    let lx = lagrangian(sys, s, xdot)?;
    Ok(lg - lx - s.lam.dot(&(g - xdot)))
}

fn pack(x: &Vector, lam: &Vector) -> Vector {
    let n = x.len();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, n).copy_from(lam);
    y
}

fn unpack(y: &Vector, n: usize, t: f64) -> PhaseState {
    PhaseState {
        x: y.rows(0, n).into_owned(),
        lam: y.rows(n, n).into_owned(),
        t,
    }
}

fn blow_up_reason(s: &PhaseState) -> Option<String> {
    if !s.is_finite() {
        return Some("non-finite state".into());
    }
    let big = s.x.iter().chain(s.lam.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    (big > BLOW_UP_LIMIT).then(|| format!("state component magnitude {big:.3e} exceeds {BLOW_UP_LIMIT:e}"))
}

fn check_span(t0: f64, t1: f64, step: f64) -> Result<()> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    if t1.is_nan() || t0.is_nan() || t1 <= t0 {
        return Err(Error::InvalidArgument(format!("end time {t1} must exceed start time {t0}")));
    }
    Ok(())
}

/// Integrates the canonical pair from `s0` to `t1` with classical RK4.
///
/// The last interval is shortened so the final sample sits at `t1`. A blow-up
/// or a failed domain guard stops the run early; the samples up to that point
/// are returned with [`Trajectory::truncation`] set.
pub fn integrate(sys: &DynamicSystem, s0: &PhaseState, t1: f64, step: f64) -> Result<Trajectory> {
    s0.expect_dim(sys.dim())?;
    check_span(s0.t, t1, step)?;
    let n = sys.dim();
    let grid = time_grid(s0.t, t1, step);
    let rhs = |t: f64, y: &Vector| {
        let x = y.rows(0, n).into_owned();
        let lam = y.rows(n, n).into_owned();
        let (dx, dl) = rhs_parts(sys, &x, &lam, t);
        pack(&dx, &dl)
    };
    let mut samples = Vec::with_capacity(grid.len());
    samples.push(s0.clone());
    let mut y = pack(&s0.x, &s0.lam);
    let mut truncation = sys
        .check_domain(&s0.x, s0.t)
        .map(|reason| Truncation { t: s0.t, reason });
    if truncation.is_none() {
        for w in grid.windows(2) {
            y = rk4_step(&rhs, w[0], &y, w[1] - w[0]);
            let s = unpack(&y, n, w[1]);
            if let Some(reason) = blow_up_reason(&s).or_else(|| sys.check_domain(&s.x, s.t)) {
                truncation = Some(Truncation { t: w[1], reason });
                break;
            }
            samples.push(s);
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("t0".into(), s0.t);
    meta.insert("t1".into(), t1);
    meta.insert("step".into(), step);
    meta.insert("blow_up_limit".into(), BLOW_UP_LIMIT);
    Ok(Trajectory {
        samples,
        step,
        integrator: INTEGRATOR.into(),
        meta,
        truncation,
    })
}

/// Which fundamental matrix to propagate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FundamentalKind {
    /// `Ḃ = −AᵀB`, so that `λ(t) = B(t)λ₀` solves the multiplier equation.
    B,
    /// `Ḋ = A·D`, the state-transition matrix; satisfies `B·Dᵀ = E`.
    D,
    /// `Ḃ = −A·B` taken literally; agrees with [`FundamentalKind::B`] only for
    /// symmetric `A`.
    BLiteral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    pub kind: FundamentalKind,
    pub t0: f64,
    pub times: Vec<f64>,
    pub values: Vec<Matrix>,
    /// First stored time whose determinant fell below [`SINGULAR_DET`].
    pub singular_at: Option<f64>,
}

impl FundamentalMatrix {
    pub fn at_index(&self, k: usize) -> &Matrix {
        &self.values[k]
    }

    pub fn last(&self) -> &Matrix {
        self.values.last().expect("nonempty")
    }

    pub fn min_abs_det(&self) -> f64 {
        self.values
            .iter()
            .map(|m| m.determinant().abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn generator(kind: FundamentalKind, a: &Matrix) -> Matrix {
    match kind {
        FundamentalKind::B => -a.transpose(),
        FundamentalKind::D => a.clone(),
        FundamentalKind::BLiteral => -a,
    }
}

/// Propagates a fundamental matrix alongside the state on the grid of `traj`.
///
/// The state is re-integrated together with the matrix (one joint RK4
/// system), so no interpolation of `A(t)` is involved.
pub fn fundamental_matrix(sys: &DynamicSystem, traj: &Trajectory, kind: FundamentalKind) -> Result<FundamentalMatrix> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let s0 = traj.first();
    s0.expect_dim(sys.dim())?;
    let n = sys.dim();
    let m0 = Matrix::identity(n, n);
    let mut y = DVector::zeros(n + n * n);
    y.rows_mut(0, n).copy_from(&s0.x);
    y.rows_mut(n, n * n).copy_from_slice(m0.as_slice());
    let rhs = |t: f64, y: &Vector| {
        let x = y.rows(0, n).into_owned();
        let m = Matrix::from_column_slice(n, n, y.rows(n, n * n).as_slice());
        let a = sys.jacobian(&x, t);
        let dm = generator(kind, &a) * m;
        let mut out = DVector::zeros(n + n * n);
        out.rows_mut(0, n).copy_from(&sys.field(&x, t));
        out.rows_mut(n, n * n).copy_from_slice(dm.as_slice());
        out
    };
    let times = traj.times();
    let mut values = Vec::with_capacity(times.len());
    values.push(m0);
    for w in times.windows(2) {
        y = rk4_step(&rhs, w[0], &y, w[1] - w[0]);
        values.push(Matrix::from_column_slice(n, n, y.rows(n, n * n).as_slice()));
    }
    let singular_at = times
        .iter()
        .zip(&values)
        .find(|(_, m)| {
            let d = m.determinant().abs();
            d.is_nan() || d < SINGULAR_DET
        })
        .map(|(t, _)| *t);
    Ok(FundamentalMatrix {
        kind,
        t0: s0.t,
        times,
        values,
        singular_at,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub h: Vec<f64>,
    pub h0: f64,
    /// Autonomous: `max|H − H₀|`. Otherwise `max|H − H₀ − ∫λ·f_t dt|`.
    pub max_drift: f64,
    /// Cumulative trapezoidal `∫_{t₀}^{t} λ·f_t dt` (zero for autonomous systems).
    pub work: Vec<f64>,
    pub autonomous: bool,
}

/// Energy balance along a trajectory, with `dH/dt = λ·f_t` integrated up to
/// the running time.
pub fn energy_drift(sys: &DynamicSystem, traj: &Trajectory) -> Result<EnergyReport> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let h = traj
        .samples
        .iter()
        .map(|s| hamiltonian(sys, s))
        .collect::<Result<Vec<_>>>()?;
    let h0 = h[0];
    let autonomous = sys.is_autonomous();
    let mut work = vec![0.0; h.len()];
    if !autonomous {
        let power: Vec<f64> = traj
            .samples
            .iter()
            .map(|s| s.lam.dot(&sys.time_derivative(&s.x, s.t)))
            .collect();
        for k in 1..h.len() {
            let dt = traj.samples[k].t - traj.samples[k - 1].t;
            work[k] = work[k - 1] + 0.5 * dt * (power[k] + power[k - 1]);
        }
    }
    let max_drift = h
        .iter()
        .zip(&work)
        .map(|(hk, wk)| (hk - h0 - wk).abs())
        .fold(0.0, f64::max);
    Ok(EnergyReport {
        h,
        h0,
        max_drift,
        work,
        autonomous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> DynamicSystem {
        DynamicSystem::linear(Matrix::from_element(1, 1, a)).unwrap()
    }

    fn st(x: &[f64], l: &[f64], t: f64) -> PhaseState {
        PhaseState::from_slices(x, l, t).unwrap()
    }

    #[test]
    fn hamiltonian_is_the_scalar_product() {
        assert_eq!(hamiltonian(&scalar(1.0), &st(&[3.0], &[2.0], 0.0)).unwrap(), 6.0);
        assert_eq!(hamiltonian(&scalar(1.0), &st(&[3.0], &[0.0], 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn multiplier_rhs_for_scalar_linear_field() {
        let (_, dl) = canonical_rhs(&scalar(-0.7), &st(&[1.0], &[2.0], 0.0)).unwrap();
        assert!((dl[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn exponential_oracle() {
        let traj = integrate(&scalar(1.0), &st(&[1.0], &[1.0], 0.0), 1.0, 1e-3).unwrap();
        let last = traj.last();
        assert_eq!(last.t, 1.0);
        assert!((last.x[0] / std::f64::consts::E - 1.0).abs() < 1e-10);
        assert!((last.lam[0] * std::f64::consts::E - 1.0).abs() < 1e-10);
        assert!(traj.validate().is_ok());
    }

    #[test]
    fn null_field_is_frozen() {
        let sys = DynamicSystem::linear(Matrix::zeros(2, 2)).unwrap();
        let s0 = st(&[1.0, -2.0], &[0.5, 3.0], 0.0);
        let traj = integrate(&sys, &s0, 1.0, 0.1).unwrap();
        assert!(traj.samples.iter().all(|s| s.x == s0.x && s.lam == s0.lam));
        let e = energy_drift(&sys, &traj).unwrap();
        assert_eq!(e.max_drift, 0.0);
    }

    #[test]
    fn blow_up_truncates() {
        let sys = DynamicSystem::new(1, |x, _| x.map(|v| v * v)).unwrap();
        let traj = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 2.0, 1e-3).unwrap();
        let tr = traj.truncation.as_ref().expect("finite-time singularity at t = 1");
        assert!(tr.t > 0.99 && tr.t < 1.01);
        assert!(traj.last().t < tr.t);
    }

    #[test]
    fn invalid_spans_are_rejected() {
        let s0 = st(&[1.0], &[1.0], 0.0);
        assert!(integrate(&scalar(1.0), &s0, 1.0, 0.0).is_err());
        assert!(integrate(&scalar(1.0), &s0, 0.0, 0.1).is_err());
    }

    #[test]
    fn scalar_fundamental_matrices() {
        let a = 0.8;
        let sys = scalar(a);
        let traj = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 1.0, 1e-3).unwrap();
        let b = fundamental_matrix(&sys, &traj, FundamentalKind::B).unwrap();
        let d = fundamental_matrix(&sys, &traj, FundamentalKind::D).unwrap();
        for (k, t) in traj.times().iter().enumerate() {
            assert!((b.values[k][(0, 0)] - (-a * t).exp()).abs() < 1e-10);
            assert!((d.values[k][(0, 0)] - (a * t).exp()).abs() < 1e-10);
        }
        assert!(b.singular_at.is_none());
    }

    #[test]
    fn literal_convention_differs_for_nonsymmetric_generator() {
        let sys = DynamicSystem::linear(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        let traj = integrate(&sys, &st(&[1.0, 1.0], &[1.0, 1.0], 0.0), 1.0, 1e-2).unwrap();
        let b = fundamental_matrix(&sys, &traj, FundamentalKind::B).unwrap();
        let bl = fundamental_matrix(&sys, &traj, FundamentalKind::BLiteral).unwrap();
        let lam = b.last() * &traj.first().lam;
        assert!((lam - &traj.last().lam).amax() < 1e-12);
        assert!((b.last() - bl.last()).amax() > 0.5);
    }

    #[test]
    fn time_dependent_energy_balance() {
        let sys = DynamicSystem::new(1, |_, t| Vector::from_element(1, t))
            .unwrap()
            .with_jacobian(|_, _| Matrix::zeros(1, 1))
            .with_time_derivative(|_, _| Vector::from_element(1, 1.0));
        let traj = integrate(&sys, &st(&[0.0], &[2.0], 0.0), 1.0, 1e-3).unwrap();
        let e = energy_drift(&sys, &traj).unwrap();
        assert!(!e.autonomous);
        assert!(e.max_drift < 1e-8);
        assert!((e.h.last().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weierstrass_excess_vanishes() {
        let sys = scalar(1.3);
        let s = st(&[0.4], &[-2.5], 0.0);
        let e = weierstrass_excess(&sys, &s, &Vector::from_element(1, 3.0), &Vector::from_element(1, -7.0)).unwrap();
        assert!(e.abs() < 1e-12);
        assert_eq!(lagrangian_on_extremal(&sys, &s).unwrap(), 0.0);
    }
}
