//! Independent verifiers: symplectic 2-form preservation, loop integrals of
//! `λ·dx − H·dt`, action functions, Hamilton–Jacobi residuals and the
//! controlling potential accumulated between an old and a new motion.

use std::f64::consts::PI;
use std::thread;

use crate::error::{check_dim, Error, Result};
use crate::hamilton::{hamiltonian, integrate};
use crate::mapping::{MapVariant, MappingSpec};
use crate::numeric;
use crate::phasecore::{ControllingFunction, DynamicSystem, Matrix, PhaseState, Trajectory, Vector};

/// Minimum number of distinct loop vertices accepted by the loop integral.
pub const MIN_LOOP_VERTICES: usize = 9;

/// The canonical structure matrix `I = [[0, E], [−E, 0]]`.
pub fn structure_matrix(n: usize) -> Matrix {
    let mut i = Matrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        i[(k, n + k)] = 1.0;
        i[(n + k, k)] = -1.0;
    }
    i
}

/// `‖JᵀIJ − I‖_max` for the finite-difference Jacobian `J` of `map` at `s`.
pub fn symplectic_test<F>(map: F, s: &PhaseState) -> f64
where
    F: Fn(&Vector, &Vector) -> (Vector, Vector),
{
    let n = s.dim();
    let stacked = |z: &Vector| {
        let (y, mu) = map(&z.rows(0, n).into_owned(), &z.rows(n, n).into_owned());
        let mut out = Vector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&y);
        out.rows_mut(n, n).copy_from(&mu);
        out
    };
    let mut z = Vector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(&s.x);
    z.rows_mut(n, n).copy_from(&s.lam);
    let j = numeric::jacobian(stacked, &z, 2 * n);
    symplectic_defect_of_jacobian(&j)
}

/// `‖JᵀIJ − I‖_max` for a given `2n×2n` Jacobian.
pub fn symplectic_defect_of_jacobian(j: &Matrix) -> f64 {
    let i = structure_matrix(j.nrows() / 2);
    (j.transpose() * &i * j - i).amax()
}

/// Symplectic defect of a controlled mapping at `s` (time held at `s.t`).
pub fn mapping_symplectic_defect(spec: &MappingSpec, s: &PhaseState) -> Result<f64> {
    s.expect_dim(spec.dim())?;
    let t = s.t;
    Ok(symplectic_test(
        |x, lam| {
            let p = PhaseState { x: x.clone(), lam: lam.clone(), t };
            crate::mapping::apply_map(spec, &p).expect("dimension checked")
        },
        s,
    ))
}

/// A closed polygon at a common time and its images under the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopEnsemble {
    /// Vertices with `loop0[M] = loop0[0]`.
    pub loop0: Vec<PhaseState>,
    pub flowed: Vec<Vec<PhaseState>>,
}

impl LoopEnsemble {
    /// Circle of `m` distinct vertices in the `(x_i, λ_i)` plane, traversed
    /// counter-clockwise, with the remaining coordinates at `center`.
    pub fn circle(center: &PhaseState, axis: usize, radius: f64, m: usize) -> Result<Vec<PhaseState>> {
        if axis >= center.dim() {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("loop needs vertices".into()));
        }
        let mut out: Vec<PhaseState> = (0..m)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / m as f64;
                let mut s = center.clone();
                s.x[axis] += radius * th.cos();
                s.lam[axis] += radius * th.sin();
                s
            })
            .collect();
        out.push(out[0].clone());
        Ok(out)
    }

    /// Flows every vertex of `loop0` to each of `times` (fixed-step RK4).
    /// Vertices are integrated in parallel; the result does not depend on
    /// the scheduling.
    pub fn flow(sys: &DynamicSystem, loop0: Vec<PhaseState>, times: &[f64], step: f64) -> Result<Self> {
        check_closed(&loop0)?;
        let distinct = &loop0[..loop0.len() - 1];
        let mut flowed = Vec::with_capacity(times.len());
        for &t in times {
            let mut verts = flow_vertices(sys, distinct, t, step)?;
            verts.push(verts[0].clone());
            flowed.push(verts);
        }
        Ok(Self { loop0, flowed })
    }
}

fn flow_vertices(sys: &DynamicSystem, verts: &[PhaseState], t: f64, step: f64) -> Result<Vec<PhaseState>> {
    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(verts.len()).max(1);
    let chunk = verts.len().div_ceil(workers);
    let parts: Vec<Result<Vec<PhaseState>>> = thread::scope(|scope| {
        let handles: Vec<_> = verts
            .chunks(chunk)
            .map(|c| {
                scope.spawn(move || {
                    c.iter()
                        .map(|v| {
                            let traj = integrate(sys, v, t, step)?;
                            if let Some(tr) = &traj.truncation {
                                return Err(Error::BlowUp { t: tr.t, reason: tr.reason.clone() });
                            }
                            Ok(traj.last().clone())
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("vertex worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(verts.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn check_closed(lp: &[PhaseState]) -> Result<()> {
    if lp.len() < 2 || lp.first() != lp.last() {
        return Err(Error::InvalidArgument("loop must be closed (last vertex equals first)".into()));
    }
    let distinct = lp.len() - 1;
    if distinct < MIN_LOOP_VERTICES {
        return Err(Error::InvalidArgument(format!(
            "loop has {distinct} vertices; at least {MIN_LOOP_VERTICES} are required for the quadrature"
        )));
    }
    Ok(())
}

/// `∮ λ·dx − H·dt` over a closed polygon by the trapezoidal rule on edges.
pub fn loop_integral(sys: &DynamicSystem, lp: &[PhaseState]) -> Result<f64> {
    check_closed(lp)?;
    let mut total = 0.0;
    for w in lp.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        a.expect_dim(sys.dim())?;
        let dx = &b.x - &a.x;
        total += 0.5 * (&a.lam + &b.lam).dot(&dx);
        let dt = b.t - a.t;
        if dt != 0.0 {
            total -= 0.5 * (hamiltonian(sys, a)? + hamiltonian(sys, b)?) * dt;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopReport {
    /// Loop integral of `loop0` followed by each flowed loop.
    pub values: Vec<f64>,
    /// `max |value − value₀|` over the flowed loops.
    pub drift: f64,
}

pub fn poincare_cartan_loop(sys: &DynamicSystem, ens: &LoopEnsemble) -> Result<LoopReport> {
    let mut values = vec![loop_integral(sys, &ens.loop0)?];
    for lp in &ens.flowed {
        if lp.len() != ens.loop0.len() {
            return Err(Error::GridMismatch("flowed loop has a different vertex count".into()));
        }
        values.push(loop_integral(sys, lp)?);
    }
    let v0 = values[0];
    let drift = values[1..].iter().map(|v| (v - v0).abs()).fold(0.0, f64::max);
    Ok(LoopReport { values, drift })
}

/// Richardson extrapolation of a second-order quadrature from loops with
/// `M` and `2M` vertices.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    /// `S = ∫ L dt` with `L = λ·(ẋ − f)` and `ẋ` from the canonical system.
    pub s: f64,
    /// Per-interval `λ·Δx − H·Δt` (trapezoidal).
    pub ds_series: Vec<f64>,
    pub ds_sum: f64,
    /// `max |−H + λ·f|` over samples.
    pub hj_residual: f64,
}

pub fn action_function(sys: &DynamicSystem, traj: &Trajectory) -> Result<ActionRecord> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut lag = Vec::with_capacity(traj.len());
    let mut ham = Vec::with_capacity(traj.len());
    let mut hj: f64 = 0.0;
    for s in &traj.samples {
        lag.push(crate::hamilton::lagrangian_on_extremal(sys, s)?);
        let h = hamiltonian(sys, s)?;
        hj = hj.max((-h + s.lam.dot(&sys.field(&s.x, s.t))).abs());
        ham.push(h);
    }
    let mut s_total = 0.0;
    let mut ds_series = Vec::with_capacity(traj.len().saturating_sub(1));
    for k in 1..traj.len() {
        let (a, b) = (&traj.samples[k - 1], &traj.samples[k]);
        let dt = b.t - a.t;
        s_total += 0.5 * dt * (lag[k - 1] + lag[k]);
        ds_series.push(0.5 * (&a.lam + &b.lam).dot(&(&b.x - &a.x)) - 0.5 * (ham[k - 1] + ham[k]) * dt);
    }
    let ds_sum = ds_series.iter().sum();
    Ok(ActionRecord {
        s: s_total,
        ds_series,
        ds_sum,
        hj_residual: hj,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub series: Vec<f64>,
    pub max: f64,
}

impl ResidualSeries {
    fn from_series(series: Vec<f64>) -> Self {
        let max = series.iter().cloned().fold(0.0, f64::max);
        Self { series, max }
    }
}

fn image(spec: &MappingSpec, p: &PhaseState) -> Result<(Vector, Vector)> {
    crate::mapping::apply_map(spec, p)
}

fn require_standard(spec: &MappingSpec) -> Result<()> {
    if spec.variant == MapVariant::Standard {
        Ok(())
    } else {
        Err(Error::UnsupportedVariant(spec.variant.name()))
    }
}

/// `|U_t − G(x + U_λ, λ − U_x, t)|` at each point.
pub fn hj_residual_u<G>(cf: &ControllingFunction, g: G, spec: &MappingSpec, points: &[PhaseState]) -> Result<ResidualSeries>
where
    G: Fn(&Vector, &Vector, f64) -> f64,
{
    require_standard(spec)?;
    check_dim(spec.dim(), cf.dim(), "controlling function")?;
    let mut series = Vec::with_capacity(points.len());
    for p in points {
        p.expect_dim(cf.dim())?;
        let (y, mu) = image(spec, p)?;
        series.push((cf.dt(p) - g(&y, &mu, p.t)).abs());
    }
    Ok(ResidualSeries::from_series(series))
}

/// `|U_t + H(x, λ, t) − G(x + U_λ, λ − U_x, t)|` at each point: the
/// transformation law of the Hamiltonian under the standard mapping.
pub fn hj_residual_transformed<G>(
    cf: &ControllingFunction,
    sys: &DynamicSystem,
    g: G,
    spec: &MappingSpec,
    points: &[PhaseState],
) -> Result<ResidualSeries>
where
    G: Fn(&Vector, &Vector, f64) -> f64,
{
    require_standard(spec)?;
    check_dim(sys.dim(), cf.dim(), "controlling function")?;
    let mut series = Vec::with_capacity(points.len());
    for p in points {
        let h = hamiltonian(sys, p)?;
        let (y, mu) = image(spec, p)?;
        series.push((cf.dt(p) + h - g(&y, &mu, p.t)).abs());
    }
    Ok(ResidualSeries::from_series(series))
}

/// `|U_t + λ·f(x, t)|` at each point.
pub fn hj_residual_h(cf: &ControllingFunction, sys: &DynamicSystem, points: &[PhaseState]) -> Result<ResidualSeries> {
    check_dim(sys.dim(), cf.dim(), "controlling function")?;
    let mut series = Vec::with_capacity(points.len());
    for p in points {
        series.push((cf.dt(p) + hamiltonian(sys, p)?).abs());
    }
    Ok(ResidualSeries::from_series(series))
}

/// Cumulative trapezoidal `∫ (λ·ẋ − μ·ẏ + G − H) dt` with `H = λ·f_old`,
/// `G = μ·f_new` and velocities from the respective fields.
pub fn controlling_potential(
    sys_old: &DynamicSystem,
    sys_new: &DynamicSystem,
    traj_old: &Trajectory,
    traj_new: &Trajectory,
) -> Result<Vec<f64>> {
    if traj_old.len() != traj_new.len() {
        return Err(Error::GridMismatch(format!(
            "trajectories have {} and {} samples",
            traj_old.len(),
            traj_new.len()
        )));
    }
    if traj_old.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut integrand = Vec::with_capacity(traj_old.len());
    for (a, b) in traj_old.samples.iter().zip(&traj_new.samples) {
        if (a.t - b.t).abs() > 1e-12 * a.t.abs().max(1.0) {
            return Err(Error::GridMismatch(format!("sample times {} and {} differ", a.t, b.t)));
        }
        a.expect_dim(sys_old.dim())?;
        b.expect_dim(sys_new.dim())?;
        let xdot = sys_old.field(&a.x, a.t);
        let ydot = sys_new.field(&b.x, b.t);
        let h = a.lam.dot(&xdot);
        let g = b.lam.dot(&ydot);
        integrand.push(a.lam.dot(&xdot) - b.lam.dot(&ydot) + g - h);
    }
    let mut out = vec![0.0; integrand.len()];
    for k in 1..out.len() {
        let dt = traj_old.samples[k].t - traj_old.samples[k - 1].t;
        out[k] = out[k - 1] + 0.5 * dt * (integrand[k] + integrand[k - 1]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(x: &[f64], l: &[f64], t: f64) -> PhaseState {
        PhaseState::from_slices(x, l, t).unwrap()
    }

    #[test]
    fn symplectic_defects_of_simple_maps() {
        let s = st(&[0.3], &[-0.8], 0.0);
        assert_eq!(symplectic_test(|x, l| (x.clone(), l.clone()), &s), 0.0);
        assert!(symplectic_test(|x, l| (l.clone(), -x), &s) < 1e-9);
        assert!((symplectic_test(|x, l| (x * 2.0, l.clone()), &s) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn loop_precondition() {
        let sys = DynamicSystem::linear(Matrix::zeros(1, 1)).unwrap();
        let c = st(&[1.0], &[1.0], 0.0);
        let lp = LoopEnsemble::circle(&c, 0, 1.0, 8).unwrap();
        assert!(loop_integral(&sys, &lp).is_err());
        let lp = LoopEnsemble::circle(&c, 0, 1.0, 9).unwrap();
        assert!(loop_integral(&sys, &lp).is_ok());
    }

    #[test]
    fn frozen_loop_has_no_drift() {
        let sys = DynamicSystem::linear(Matrix::zeros(1, 1)).unwrap();
        let lp = LoopEnsemble::circle(&st(&[1.0], &[1.0], 0.0), 0, 1.0, 64).unwrap();
        let ens = LoopEnsemble::flow(&sys, lp, &[0.5, 1.0], 0.1).unwrap();
        assert_eq!(poincare_cartan_loop(&sys, &ens).unwrap().drift, 0.0);
    }

    #[test]
    fn loop_integral_is_minus_enclosed_area() {
        let sys = DynamicSystem::linear(Matrix::zeros(1, 1)).unwrap();
        let m = 512;
        let lp = LoopEnsemble::circle(&st(&[1.0], &[1.0], 0.0), 0, 1.0, m).unwrap();
        let polygon_area = 0.5 * m as f64 * (2.0 * PI / m as f64).sin();
        assert!((loop_integral(&sys, &lp).unwrap() + polygon_area).abs() < 1e-12);
    }

    #[test]
    fn action_on_linear_extremal() {
        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let traj = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 1.0, 1e-3).unwrap();
        let rec = action_function(&sys, &traj).unwrap();
        assert!(rec.s.abs() < 1e-9);
        assert!(rec.hj_residual < 1e-12);
        assert!(rec.ds_sum.abs() < 1e-6);
    }

    #[test]
    fn hj_residuals_on_constructed_cases() {
        let spec = MappingSpec::new(MapVariant::Standard, ControllingFunction::zero(1));
        let pts = vec![st(&[0.2], &[1.0], 0.0), st(&[-1.0], &[3.0], 2.0)];
        assert_eq!(hj_residual_u(&spec.cf, |_, _, _| 0.0, &spec, &pts).unwrap().max, 0.0);
        let cf = ControllingFunction::new(1, |_, _, t| t)
            .with_time_derivative(|_, _, _| 1.0);
        let spec_t = MappingSpec::new(MapVariant::Standard, cf.clone());
        assert_eq!(hj_residual_u(&cf, |_, _, _| 0.0, &spec_t, &pts).unwrap().max, 1.0);
        let cross = MappingSpec::new(MapVariant::Cross, cf.clone());
        assert!(hj_residual_u(&cf, |_, _, _| 0.0, &cross, &pts).is_err());

        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let cf = ControllingFunction::new(1, |x, l, t| -l[0] * x[0] * t);
        let r = hj_residual_h(&cf, &sys, &pts).unwrap();
        assert!(r.series[0].abs() < 1e-9);
    }

    #[test]
    fn potential_of_identity_is_zero_and_grids_are_checked() {
        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let traj = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 1.0, 1e-2).unwrap();
        let u = controlling_potential(&sys, &sys, &traj, &traj).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
        let short = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 0.5, 1e-2).unwrap();
        assert!(matches!(
            controlling_potential(&sys, &sys, &traj, &short),
            Err(Error::GridMismatch(_))
        ));
    }
}
