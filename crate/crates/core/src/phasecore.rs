//! Core domain types: the vector field, points of extended phase space, the
//! controlling function, trajectories, and the finite-difference check of
//! user-supplied derivatives.
//!
//! Derivatives that are not supplied analytically are replaced by central
//! differences with step `1e-6 * max(1, |coordinate|)`; such objects report
//! themselves as FD-backed.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::numeric;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub type FieldFn = Arc<dyn Fn(&Vector, f64) -> Vector + Send + Sync>;
pub type FieldMatrixFn = Arc<dyn Fn(&Vector, f64) -> Matrix + Send + Sync>;
pub type GuardFn = Arc<dyn Fn(&Vector, f64) -> Option<String> + Send + Sync>;
pub type PhaseScalarFn = Arc<dyn Fn(&Vector, &Vector, f64) -> f64 + Send + Sync>;
pub type PhaseVectorFn = Arc<dyn Fn(&Vector, &Vector, f64) -> Vector + Send + Sync>;
pub type PhaseMatrixFn = Arc<dyn Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync>;

/// Vector field `ẋ = f(x, t)` with optional analytic Jacobian `A = f_x`
/// (`A[i][j] = ∂f_i/∂x_j`) and time derivative `f_t`.
#[derive(Clone)]
pub struct DynamicSystem {
    dim: usize,
    f: FieldFn,
    jac: Option<FieldMatrixFn>,
    ft: Option<FieldFn>,
    autonomous: bool,
    guard: Option<GuardFn>,
}

impl fmt::Debug for DynamicSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicSystem")
            .field("dim", &self.dim)
            .field("autonomous", &self.autonomous)
            .field("analytic_jacobian", &self.jac.is_some())
            .field("analytic_ft", &self.ft.is_some())
            .finish()
    }
}

impl DynamicSystem {
    pub fn new<F>(dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            f: Arc::new(f),
            jac: None,
            ft: None,
            autonomous: false,
            guard: None,
        })
    }

    /// Linear autonomous field `f(x) = M x` with its exact Jacobian.
    pub fn linear(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument("linear field needs a square matrix".into()));
        }
        let jm = m.clone();
        Ok(Self::new(m.nrows(), move |x, _| &m * x)?
            .with_jacobian(move |_, _| jm.clone())
            .autonomous())
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn with_time_derivative<T>(mut self, ft: T) -> Self
    where
        T: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    {
        self.ft = Some(Arc::new(ft));
        self
    }

    /// Marks the field as time-independent; `f_t` is then identically zero.
    pub fn autonomous(mut self) -> Self {
        self.autonomous = true;
        self
    }

    /// Domain check evaluated by the integrators after every step; returning
    /// `Some(reason)` truncates the trajectory.
    pub fn with_guard<G>(mut self, guard: G) -> Self
    where
        G: Fn(&Vector, f64) -> Option<String> + Send + Sync + 'static,
    {
        self.guard = Some(Arc::new(guard));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    /// True when the Jacobian or `f_t` falls back to finite differences.
    pub fn is_fd_backed(&self) -> bool {
        self.jac.is_none() || (!self.autonomous && self.ft.is_none())
    }

    pub fn field(&self, x: &Vector, t: f64) -> Vector {
        (self.f)(x, t)
    }

    pub fn jacobian(&self, x: &Vector, t: f64) -> Matrix {
        match &self.jac {
            Some(j) => j(x, t),
            None => numeric::jacobian(|p| (self.f)(p, t), x, self.dim),
        }
    }

    pub fn time_derivative(&self, x: &Vector, t: f64) -> Vector {
        if self.autonomous {
            return Vector::zeros(self.dim);
        }
        match &self.ft {
            Some(ft) => ft(x, t),
            None => numeric::central_diff_vec(|s| (self.f)(x, s), t),
        }
    }

    pub fn check_domain(&self, x: &Vector, t: f64) -> Option<String> {
        self.guard.as_ref().and_then(|g| g(x, t))
    }
}

/// A point `(x, λ, t)` of extended phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: Vector,
    pub lam: Vector,
    pub t: f64,
}

impl PhaseState {
    pub fn new(x: Vector, lam: Vector, t: f64) -> Result<Self> {
        let s = Self { x, lam, t };
        check_dim(s.x.len(), s.lam.len(), "multiplier vector")?;
        if !s.is_finite() {
            return Err(Error::NonFinite {
                what: "phase state".into(),
                point: s.describe(),
            });
        }
        Ok(s)
    }

    pub fn from_slices(x: &[f64], lam: &[f64], t: f64) -> Result<Self> {
        Self::new(Vector::from_column_slice(x), Vector::from_column_slice(lam), t)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(self.lam.iter()).all(|v| v.is_finite())
    }

    /// Verifies that the state belongs to an `n`-dimensional system.
    pub fn expect_dim(&self, n: usize) -> Result<()> {
        check_dim(n, self.x.len(), "phase coordinates")?;
        check_dim(n, self.lam.len(), "multipliers")
    }

    pub fn describe(&self) -> String {
        format!(
            "(x={:?}, lam={:?}, t={})",
            self.x.as_slice(),
            self.lam.as_slice(),
            self.t
        )
    }
}

/// Controlling function `U(x, λ, t)` with first derivatives and the
/// second-derivative blocks used by the canonicity criteria.
///
/// First derivatives are always available (analytic or FD). Second-derivative
/// blocks must be supplied, or explicitly FD-backed with
/// [`ControllingFunction::with_fd_second_derivatives`].
#[derive(Clone)]
pub struct ControllingFunction {
    dim: usize,
    u: PhaseScalarFn,
    ux: Option<PhaseVectorFn>,
    ulam: Option<PhaseVectorFn>,
    ut: Option<PhaseScalarFn>,
    uxlam: Option<PhaseMatrixFn>,
    uxx: Option<PhaseMatrixFn>,
    ulamlam: Option<PhaseMatrixFn>,
    uxt: Option<PhaseVectorFn>,
    ulamt: Option<PhaseVectorFn>,
    fd_second: bool,
}

impl fmt::Debug for ControllingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControllingFunction")
            .field("dim", &self.dim)
            .field("fd_backed", &self.is_fd_backed())
            .finish()
    }
}

impl ControllingFunction {
    pub fn new<U>(dim: usize, u: U) -> Self
    where
        U: Fn(&Vector, &Vector, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            u: Arc::new(u),
            ux: None,
            ulam: None,
            ut: None,
            uxlam: None,
            uxx: None,
            ulamlam: None,
            uxt: None,
            ulamt: None,
            fd_second: false,
        }
    }

    /// `U ≡ 0` with every derivative supplied exactly.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, |_, _, _| 0.0)
            .with_gradients(move |_, _, _| Vector::zeros(dim), move |_, _, _| Vector::zeros(dim))
            .with_time_derivative(|_, _, _| 0.0)
            .with_mixed(move |_, _, _| Matrix::zeros(dim, dim))
            .with_hessians(
                move |_, _, _| Matrix::zeros(dim, dim),
                move |_, _, _| Matrix::zeros(dim, dim),
            )
            .with_time_gradients(move |_, _, _| Vector::zeros(dim), move |_, _, _| Vector::zeros(dim))
    }

    pub fn with_gradients<X, L>(mut self, ux: X, ulam: L) -> Self
    where
        X: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
        L: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
    {
        self.ux = Some(Arc::new(ux));
        self.ulam = Some(Arc::new(ulam));
        self
    }

    pub fn with_time_derivative<T>(mut self, ut: T) -> Self
    where
        T: Fn(&Vector, &Vector, f64) -> f64 + Send + Sync + 'static,
    {
        self.ut = Some(Arc::new(ut));
        self
    }

    /// Mixed block `M[i][j] = ∂²U/∂x_i∂λ_j`.
    pub fn with_mixed<M>(mut self, uxlam: M) -> Self
    where
        M: Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.uxlam = Some(Arc::new(uxlam));
        self
    }

    pub fn with_hessians<X, L>(mut self, uxx: X, ulamlam: L) -> Self
    where
        X: Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync + 'static,
        L: Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.uxx = Some(Arc::new(uxx));
        self.ulamlam = Some(Arc::new(ulamlam));
        self
    }

    /// Time derivatives of the gradients, `∂U_x/∂t` and `∂U_λ/∂t`.
    pub fn with_time_gradients<X, L>(mut self, uxt: X, ulamt: L) -> Self
    where
        X: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
        L: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
    {
        self.uxt = Some(Arc::new(uxt));
        self.ulamt = Some(Arc::new(ulamt));
        self
    }

    /// Substitutes finite differences of the first derivatives for every
    /// missing second-derivative block.
    pub fn with_fd_second_derivatives(mut self) -> Self {
        self.fd_second = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_fd_backed(&self) -> bool {
        self.ux.is_none()
            || self.ulam.is_none()
            || self.ut.is_none()
            || self.second_blocks().iter().any(|(_, present)| !present)
    }

    fn second_blocks(&self) -> [(&'static str, bool); 5] {
        [
            ("uxlam", self.uxlam.is_some()),
            ("uxx", self.uxx.is_some()),
            ("ulamlam", self.ulamlam.is_some()),
            ("uxt", self.uxt.is_some()),
            ("ulamt", self.ulamt.is_some()),
        ]
    }

    /// True when every second-derivative block can be evaluated.
    pub fn has_second_derivatives(&self) -> bool {
        self.fd_second || self.second_blocks().iter().all(|(_, present)| *present)
    }

    pub fn value(&self, s: &PhaseState) -> f64 {
        (self.u)(&s.x, &s.lam, s.t)
    }

    pub fn grad_x(&self, s: &PhaseState) -> Vector {
        match &self.ux {
            Some(ux) => ux(&s.x, &s.lam, s.t),
            None => numeric::gradient(|p| (self.u)(p, &s.lam, s.t), &s.x),
        }
    }

    pub fn grad_lam(&self, s: &PhaseState) -> Vector {
        match &self.ulam {
            Some(ul) => ul(&s.x, &s.lam, s.t),
            None => numeric::gradient(|p| (self.u)(&s.x, p, s.t), &s.lam),
        }
    }

    pub fn dt(&self, s: &PhaseState) -> f64 {
        match &self.ut {
            Some(ut) => ut(&s.x, &s.lam, s.t),
            None => numeric::central_diff(|tt| (self.u)(&s.x, &s.lam, tt), s.t),
        }
    }

    fn missing(&self, block: &'static str) -> Result<()> {
        if self.fd_second {
            Ok(())
        } else {
            Err(Error::MissingSecondDerivative(block))
        }
    }

    /// `∂²U/∂x_i∂λ_j` at `s`.
    pub fn mixed(&self, s: &PhaseState) -> Result<Matrix> {
        if let Some(m) = &self.uxlam {
            return Ok(m(&s.x, &s.lam, s.t));
        }
        self.missing("uxlam")?;
        // Jacobian of U_λ in x has entries ∂(U_λ)_j/∂x_i; transpose to [i][j].
        let j = numeric::jacobian(
            |p| self.grad_lam(&PhaseState { x: p.clone(), lam: s.lam.clone(), t: s.t }),
            &s.x,
            self.dim,
        );
        Ok(j.transpose())
    }

    pub fn hess_xx(&self, s: &PhaseState) -> Result<Matrix> {
        if let Some(m) = &self.uxx {
            return Ok(m(&s.x, &s.lam, s.t));
        }
        self.missing("uxx")?;
        Ok(numeric::jacobian(
            |p| self.grad_x(&PhaseState { x: p.clone(), lam: s.lam.clone(), t: s.t }),
            &s.x,
            self.dim,
        ))
    }

    pub fn hess_lamlam(&self, s: &PhaseState) -> Result<Matrix> {
        if let Some(m) = &self.ulamlam {
            return Ok(m(&s.x, &s.lam, s.t));
        }
        self.missing("ulamlam")?;
        Ok(numeric::jacobian(
            |p| self.grad_lam(&PhaseState { x: s.x.clone(), lam: p.clone(), t: s.t }),
            &s.lam,
            self.dim,
        ))
    }

    pub fn dt_grad_x(&self, s: &PhaseState) -> Result<Vector> {
        if let Some(v) = &self.uxt {
            return Ok(v(&s.x, &s.lam, s.t));
        }
        self.missing("uxt")?;
        Ok(numeric::central_diff_vec(
            |tt| self.grad_x(&PhaseState { x: s.x.clone(), lam: s.lam.clone(), t: tt }),
            s.t,
        ))
    }

    pub fn dt_grad_lam(&self, s: &PhaseState) -> Result<Vector> {
        if let Some(v) = &self.ulamt {
            return Ok(v(&s.x, &s.lam, s.t));
        }
        self.missing("ulamt")?;
        Ok(numeric::central_diff_vec(
            |tt| self.grad_lam(&PhaseState { x: s.x.clone(), lam: s.lam.clone(), t: tt }),
            s.t,
        ))
    }
}

/// Where and why an integration stopped before its requested end time.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub t: f64,
    pub reason: String,
}

/// Time-ordered samples of a phase-space motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<PhaseState>,
    pub step: f64,
    pub integrator: String,
    pub meta: BTreeMap<String, f64>,
    pub truncation: Option<Truncation>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn first(&self) -> &PhaseState {
        &self.samples[0]
    }

    pub fn last(&self) -> &PhaseState {
        self.samples.last().expect("trajectory is nonempty")
    }

    pub fn is_truncated(&self) -> bool {
        self.truncation.is_some()
    }

    /// Checks the sample grid: strictly increasing times spaced by `step`,
    /// with only the final interval allowed to be shorter.
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::GridMismatch("trajectory needs at least two samples".into()));
        }
        let n = self.samples[0].dim();
        let last = self.samples.len() - 2;
        for (k, w) in self.samples.windows(2).enumerate() {
            w[1].expect_dim(n)?;
            let dt = w[1].t - w[0].t;
            let tol = 1e-9 * self.step.max(w[0].t.abs() * 1e-6);
            let ok = dt > 0.0
                && if k == last {
                    dt <= self.step + tol
                } else {
                    (dt - self.step).abs() <= tol
                };
            if !ok {
                return Err(Error::GridMismatch(format!(
                    "interval {k} has length {dt}, expected {}",
                    self.step
                )));
            }
        }
        Ok(())
    }
}

/// Largest relative error of one derivative block over the sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: &'static str,
    pub max_rel_error: f64,
    pub worst_point: usize,
    pub tolerance: f64,
    /// The block itself is a finite-difference substitute.
    pub fd_backed: bool,
}

impl BlockError {
    pub fn exceeds(&self) -> bool {
        self.max_rel_error > self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub blocks: Vec<BlockError>,
    pub rtol: f64,
    pub fd_backed: bool,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| !b.exceeds())
    }

    pub fn block(&self, name: &str) -> Option<&BlockError> {
        self.blocks.iter().find(|b| b.block == name)
    }

    pub fn flagged(&self) -> Vec<&'static str> {
        self.blocks.iter().filter(|b| b.exceeds()).map(|b| b.block).collect()
    }
}

/// Relative error with a unit floor on the denominator, so values near zero
/// are compared absolutely.
fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0)
}

fn max_rel_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| rel_error(*x, *y))
        .fold(0.0, f64::max)
}

/// Objects whose supplied derivatives can be checked against central
/// differences.
pub trait VerifyDerivatives {
    fn verify_derivatives(&self, points: &[PhaseState], rtol: f64) -> Result<DerivativeReport>;
}

/// Compares every derivative block of `target` with central differences at
/// `points`; second-derivative blocks use `max(rtol, 1e-4)`.
pub fn verify_derivatives<T: VerifyDerivatives + ?Sized>(
    target: &T,
    points: &[PhaseState],
    rtol: f64,
) -> Result<DerivativeReport> {
    target.verify_derivatives(points, rtol)
}

fn check_preconditions(points: &[PhaseState], rtol: f64, n: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    if rtol.is_nan() || rtol <= 0.0 {
        return Err(Error::InvalidArgument("rtol must be positive".into()));
    }
    points.iter().try_for_each(|p| p.expect_dim(n))
}

fn ensure_finite<'a>(vals: impl IntoIterator<Item = &'a f64>, what: &str, p: &PhaseState) -> Result<()> {
    if vals.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            point: p.describe(),
        })
    }
}

struct Accumulator {
    name: &'static str,
    tol: f64,
    fd_backed: bool,
    worst: f64,
    at: usize,
}

impl Accumulator {
    fn new(name: &'static str, tol: f64, fd_backed: bool) -> Self {
        Self { name, tol, fd_backed, worst: 0.0, at: 0 }
    }

    fn push(&mut self, err: f64, k: usize) {
        if err > self.worst || err.is_nan() {
            self.worst = err;
            self.at = k;
        }
    }

    fn finish(self) -> BlockError {
        BlockError {
            block: self.name,
            max_rel_error: self.worst,
            worst_point: self.at,
            tolerance: self.tol,
            fd_backed: self.fd_backed,
        }
    }
}

impl VerifyDerivatives for DynamicSystem {
    fn verify_derivatives(&self, points: &[PhaseState], rtol: f64) -> Result<DerivativeReport> {
        check_preconditions(points, rtol, self.dim)?;
        let mut jac = Accumulator::new("jac", rtol, self.jac.is_none());
        let mut ft = Accumulator::new("ft", rtol, !self.autonomous && self.ft.is_none());
        for (k, p) in points.iter().enumerate() {
            let fx = self.field(&p.x, p.t);
            ensure_finite(fx.iter(), "vector field", p)?;
            let fd_jac = numeric::jacobian(|q| self.field(q, p.t), &p.x, self.dim);
            ensure_finite(fd_jac.iter(), "vector field near sample", p)?;
            let an_jac = self.jacobian(&p.x, p.t);
            ensure_finite(an_jac.iter(), "jacobian", p)?;
            check_dim(self.dim, an_jac.nrows(), "jacobian rows")?;
            jac.push(max_rel_error(an_jac.iter(), fd_jac.iter()), k);

            let fd_t = numeric::central_diff_vec(|s| self.field(&p.x, s), p.t);
            let an_t = self.time_derivative(&p.x, p.t);
            ensure_finite(an_t.iter(), "time derivative", p)?;
            ft.push(max_rel_error(an_t.iter(), fd_t.iter()), k);
        }
        Ok(DerivativeReport {
            blocks: vec![jac.finish(), ft.finish()],
            rtol,
            fd_backed: self.is_fd_backed(),
        })
    }
}

impl VerifyDerivatives for ControllingFunction {
    fn verify_derivatives(&self, points: &[PhaseState], rtol: f64) -> Result<DerivativeReport> {
        check_preconditions(points, rtol, self.dim)?;
        let rtol2 = rtol.max(1e-4);
        let mut ux = Accumulator::new("ux", rtol, self.ux.is_none());
        let mut ulam = Accumulator::new("ulam", rtol, self.ulam.is_none());
        let mut ut = Accumulator::new("ut", rtol, self.ut.is_none());
        let second = self.has_second_derivatives();
        let mut uxlam = Accumulator::new("uxlam", rtol2, self.uxlam.is_none());
        let mut uxx = Accumulator::new("uxx", rtol2, self.uxx.is_none());
        let mut ulamlam = Accumulator::new("ulamlam", rtol2, self.ulamlam.is_none());
        let mut uxt = Accumulator::new("uxt", rtol2, self.uxt.is_none());
        let mut ulamt = Accumulator::new("ulamt", rtol2, self.ulamt.is_none());
        for (k, p) in points.iter().enumerate() {
            let u0 = self.value(p);
            ensure_finite([u0].iter(), "controlling function", p)?;
            let fd_ux = numeric::gradient(|q| (self.u)(q, &p.lam, p.t), &p.x);
            let fd_ul = numeric::gradient(|q| (self.u)(&p.x, q, p.t), &p.lam);
            let fd_ut = numeric::central_diff(|s| (self.u)(&p.x, &p.lam, s), p.t);
            ensure_finite(fd_ux.iter().chain(fd_ul.iter()).chain([fd_ut].iter()), "controlling function near sample", p)?;
            let gx = self.grad_x(p);
            let gl = self.grad_lam(p);
            let gt = self.dt(p);
            ensure_finite(gx.iter().chain(gl.iter()).chain([gt].iter()), "controlling gradients", p)?;
            ux.push(max_rel_error(gx.iter(), fd_ux.iter()), k);
            ulam.push(max_rel_error(gl.iter(), fd_ul.iter()), k);
            ut.push(rel_error(gt, fd_ut), k);

            if !second {
                continue;
            }
            let at = |x: &Vector, lam: &Vector, t: f64| PhaseState { x: x.clone(), lam: lam.clone(), t };
            let fd_mixed = numeric::jacobian(|q| self.grad_lam(&at(q, &p.lam, p.t)), &p.x, self.dim).transpose();
            uxlam.push(max_rel_error(self.mixed(p)?.iter(), fd_mixed.iter()), k);
            let fd_xx = numeric::jacobian(|q| self.grad_x(&at(q, &p.lam, p.t)), &p.x, self.dim);
            uxx.push(max_rel_error(self.hess_xx(p)?.iter(), fd_xx.iter()), k);
            let fd_ll = numeric::jacobian(|q| self.grad_lam(&at(&p.x, q, p.t)), &p.lam, self.dim);
            ulamlam.push(max_rel_error(self.hess_lamlam(p)?.iter(), fd_ll.iter()), k);
            let fd_xt = numeric::central_diff_vec(|s| self.grad_x(&at(&p.x, &p.lam, s)), p.t);
            uxt.push(max_rel_error(self.dt_grad_x(p)?.iter(), fd_xt.iter()), k);
            let fd_lt = numeric::central_diff_vec(|s| self.grad_lam(&at(&p.x, &p.lam, s)), p.t);
            ulamt.push(max_rel_error(self.dt_grad_lam(p)?.iter(), fd_lt.iter()), k);
        }
        let mut blocks = vec![ux.finish(), ulam.finish(), ut.finish()];
        if second {
            blocks.extend([uxlam.finish(), uxx.finish(), ulamlam.finish(), uxt.finish(), ulamt.finish()]);
        }
        Ok(DerivativeReport {
            blocks,
            rtol,
            fd_backed: self.is_fd_backed(),
        })
    }
}
