//! Built-in systems and end-to-end constructions: planar motion in a central
//! field, the phase-plane rotation, and the reduction of an autonomous
//! one-dimensional system to constant drift by solving `U + c·U_λ = F` along
//! characteristics.

use std::sync::Arc;
use std::thread;

use crate::error::{check_dim, Error, Result};
use crate::hamilton::{hamiltonian, integrate};
use crate::invariants::{hj_residual_transformed, hj_residual_u};
use crate::mapping::{MapVariant, MappingSpec};
use crate::numeric::{self, adaptive_simpson};
use crate::phasecore::{ControllingFunction, DynamicSystem, Matrix, PhaseState, Trajectory, Vector};

/// Radius below which the central-field integration is truncated.
pub const R_MIN: f64 = 1e-6;

/// State indices of the central-field system `(v_r, v_φ, r, φ)`.
pub const V_R: usize = 0;
pub const V_PHI: usize = 1;
pub const R: usize = 2;
pub const PHI: usize = 3;

/// Planar motion in a central field with `σ = √(γM)`, state `(v_r, v_φ, r, φ)`:
/// `v̇_r = v_φ²/r − σ²/r²`, `v̇_φ = −v_r v_φ/r`, `ṙ = v_r`, `φ̇ = v_φ/r`.
pub fn ballistic_system(sigma: f64) -> Result<DynamicSystem> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let s2 = sigma * sigma;
    let f = move |x: &Vector, _t: f64| {
        let (vr, vp, r) = (x[V_R], x[V_PHI], x[R]);
        Vector::from_vec(vec![vp * vp / r - s2 / (r * r), -vr * vp / r, vr, vp / r])
    };
    let jac = move |x: &Vector, _t: f64| {
        let (vr, vp, r) = (x[V_R], x[V_PHI], x[R]);
        let r2 = r * r;
        #[rustfmt::skip]
        let m = Matrix::from_row_slice(4, 4, &[
            0.0,      2.0 * vp / r, -vp * vp / r2 + 2.0 * s2 / (r2 * r), 0.0,
            -vp / r,  -vr / r,      vr * vp / r2,                        0.0,
            1.0,      0.0,          0.0,                                 0.0,
            0.0,      1.0 / r,      -vp / r2,                            0.0,
        ]);
        m
    };
    Ok(DynamicSystem::new(4, f)?
        .with_jacobian(jac)
        .autonomous()
        .with_guard(|x, _| (x[R] <= R_MIN).then(|| format!("radius {} fell below {R_MIN:e}", x[R]))))
}

/// Multiplier equations of the central-field system written out by hand:
///
/// `λ̇₁ = λ₂v_φ/r − λ₃`,
/// `λ̇₂ = −2λ₁v_φ/r + λ₂v_r/r − λ₄/r`,
/// `λ̇₃ = λ₁v_φ²/r² − 2λ₁σ²/r³ − λ₂v_r v_φ/r² + λ₄v_φ/r²`,
/// `λ̇₄ = 0`.
pub fn ballistic_adjoint(sigma: f64, s: &PhaseState) -> Result<Vector> {
    s.expect_dim(4)?;
    let (vr, vp, r) = (s.x[V_R], s.x[V_PHI], s.x[R]);
    let l = &s.lam;
    let r2 = r * r;
    Ok(Vector::from_vec(vec![
        l[1] * vp / r - l[2],
        -2.0 * l[0] * vp / r + l[1] * vr / r - l[3] / r,
        l[0] * vp * vp / r2 - 2.0 * l[0] * sigma * sigma / (r2 * r) - l[1] * vr * vp / r2 + l[3] * vp / r2,
        0.0,
    ]))
}

/// Area integral `r·v_φ = r²φ̇`.
pub fn area_integral(s: &PhaseState) -> f64 {
    s.x[R] * s.x[V_PHI]
}

/// Circular orbit of radius `r`: `v_r = 0`, `v_φ = σ/√r`, `φ = 0`.
pub fn circular_orbit(sigma: f64, r: f64, lam: &[f64; 4]) -> Result<PhaseState> {
    if r.is_nan() || r <= R_MIN {
        return Err(Error::InvalidArgument("radius must exceed the guard radius".into()));
    }
    PhaseState::from_slices(&[0.0, sigma / r.sqrt(), r, 0.0], lam, 0.0)
}

/// `U = c·x·λ` with exact derivatives.
pub fn bilinear_coupling(n: usize, c: f64) -> ControllingFunction {
    ControllingFunction::new(n, move |x, l, _| c * x.dot(l))
        .with_gradients(move |_, l, _| l * c, move |x, _, _| x * c)
        .with_time_derivative(|_, _, _| 0.0)
        .with_mixed(move |_, _, _| Matrix::identity(n, n) * c)
        .with_hessians(move |_, _, _| Matrix::zeros(n, n), move |_, _, _| Matrix::zeros(n, n))
        .with_time_gradients(move |_, _, _| Vector::zeros(n), move |_, _, _| Vector::zeros(n))
}

/// `U = λ²/2 − x²/2 + λx + u(t)` (n = 1) and the cross mapping, which sends
/// `(x, λ)` to `(λ, −x)` for every `u`. `u_dot` is the derivative of `u`.
pub fn rotation_example<P, D>(u: P, u_dot: D) -> (ControllingFunction, MappingSpec)
where
    P: Fn(f64) -> f64 + Send + Sync + 'static,
    D: Fn(f64) -> f64 + Send + Sync + 'static,
{
    let cf = ControllingFunction::new(1, move |x, l, t| 0.5 * l[0] * l[0] - 0.5 * x[0] * x[0] + l[0] * x[0] + u(t))
        .with_gradients(|x, l, _| l - x, |x, l, _| l + x)
        .with_time_derivative(move |_, _, t| u_dot(t))
        .with_mixed(|_, _, _| Matrix::identity(1, 1))
        .with_hessians(|_, _, _| -Matrix::identity(1, 1), |_, _, _| Matrix::identity(1, 1))
        .with_time_gradients(|_, _, _| Vector::zeros(1), |_, _, _| Vector::zeros(1));
    let spec = MappingSpec::new(MapVariant::Cross, cf.clone());
    (cf, spec)
}

/// Target data for the reduction to constant drift `ẏ = a`, `μ = c`, with new
/// Hamiltonian `G = a·μ` at energy `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct StraighteningProblem {
    pub c: Vector,
    pub a: Vector,
    pub h: f64,
    pub y0: Vector,
    /// Reference multiplier `λ_b` of the boundary condition `U(x, λ_b) = 0`;
    /// `None` selects `λ₀`.
    pub lam_b: Option<f64>,
}

impl StraighteningProblem {
    pub fn new(c: Vector, a: Vector, h: f64, y0: Vector) -> Result<Self> {
        check_dim(c.len(), a.len(), "drift vector")?;
        check_dim(c.len(), y0.len(), "initial image point")?;
        let ac = a.dot(&c);
        if (ac - h).abs() > 1e-9 * h.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!("energy level h = {h} must equal a·c = {ac}")));
        }
        Ok(Self { c, a, h, y0, lam_b: None })
    }

    pub fn with_reference_multiplier(mut self, lam_b: f64) -> Self {
        self.lam_b = Some(lam_b);
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    fn scalar(&self) -> Result<(f64, f64, f64)> {
        if self.dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "characteristic solver supports n = 1 only (got n = {})",
                self.dim()
            )));
        }
        Ok((self.c[0], self.a[0], self.y0[0]))
    }
}

type Field2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Right-hand side `F(x, λ)` of the straightening equation with its
/// derivatives; missing ones are taken by finite differences.
#[derive(Clone)]
pub struct Forcing {
    f: Field2,
    fx: Option<Field2>,
    fxx: Option<Field2>,
    flam: Option<Field2>,
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Forcing").finish_non_exhaustive()
    }
}

impl Forcing {
    pub fn new<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self {
            f: Arc::new(f),
            fx: None,
            fxx: None,
            flam: None,
        }
    }

    pub fn with_derivatives<X, XX, L>(mut self, fx: X, fxx: XX, flam: L) -> Self
    where
        X: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        XX: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        L: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.fx = Some(Arc::new(fx));
        self.fxx = Some(Arc::new(fxx));
        self.flam = Some(Arc::new(flam));
        self
    }

    pub fn value(&self, x: f64, lam: f64) -> f64 {
        (self.f)(x, lam)
    }

    fn dx(&self, x: f64, lam: f64) -> f64 {
        match &self.fx {
            Some(g) => g(x, lam),
            None => numeric::central_diff(|v| (self.f)(v, lam), x),
        }
    }

    fn dxx(&self, x: f64, lam: f64) -> f64 {
        match &self.fxx {
            Some(g) => g(x, lam),
            None => {
                let h = 1e-4 * x.abs().max(1.0);
                ((self.f)(x + h, lam) - 2.0 * (self.f)(x, lam) + (self.f)(x - h, lam)) / (h * h)
            }
        }
    }

    fn dlam(&self, x: f64, lam: f64) -> f64 {
        match &self.flam {
            Some(g) => g(x, lam),
            None => numeric::central_diff(|v| (self.f)(x, v), lam),
        }
    }
}

pub const QUADRATURE_TOL: f64 = 1e-10;

/// Pointwise solution of `U + c·U_λ = F` with `U(x, λ_b) = 0`:
/// `U = (1/c)∫_{λ_b}^{λ} e^{−(λ−s)/c} F(x, s) ds`.
#[derive(Debug, Clone)]
pub struct CharacteristicSolution {
    pub c: f64,
    pub lam_b: f64,
    /// `|c| < 1e-12`: the equation is algebraic and `U = F`.
    pub algebraic: bool,
    forcing: Forcing,
}

impl CharacteristicSolution {
    fn kernel<G: Fn(f64) -> f64>(&self, g: G, lam: f64) -> f64 {
        let c = self.c;
        adaptive_simpson(&|s: f64| (-(lam - s) / c).exp() * g(s), self.lam_b, lam, QUADRATURE_TOL) / c
    }

    pub fn value(&self, x: f64, lam: f64) -> f64 {
        if self.algebraic {
            return self.forcing.value(x, lam);
        }
        self.kernel(|s| self.forcing.value(x, s), lam)
    }

    pub fn d_lam(&self, x: f64, lam: f64) -> f64 {
        if self.algebraic {
            return self.forcing.dlam(x, lam);
        }
        (self.forcing.value(x, lam) - self.value(x, lam)) / self.c
    }

    pub fn d_x(&self, x: f64, lam: f64) -> f64 {
        if self.algebraic {
            return self.forcing.dx(x, lam);
        }
        self.kernel(|s| self.forcing.dx(x, s), lam)
    }

    pub fn d_xx(&self, x: f64, lam: f64) -> f64 {
        if self.algebraic {
            return self.forcing.dxx(x, lam);
        }
        self.kernel(|s| self.forcing.dxx(x, s), lam)
    }

    pub fn d_x_lam(&self, x: f64, lam: f64) -> f64 {
        if self.algebraic {
            return numeric::central_diff(|v| self.forcing.dx(x, v), lam);
        }
        (self.forcing.dx(x, lam) - self.d_x(x, lam)) / self.c
    }

    pub fn d_lam_lam(&self, x: f64, lam: f64) -> f64 {
        if self.algebraic {
            return numeric::central_diff(|v| self.forcing.dlam(x, v), lam);
        }
        (self.forcing.dlam(x, lam) - self.d_lam(x, lam)) / self.c
    }

    /// `U + c·U_λ − F` with `U_λ` from a five-point difference of the solved
    /// `U` (spacing `delta`).
    pub fn fd_residual(&self, x: f64, lam: f64, delta: f64) -> f64 {
        let u = |l: f64| self.value(x, l);
        let du = (u(lam - 2.0 * delta) - 8.0 * u(lam - delta) + 8.0 * u(lam + delta) - u(lam + 2.0 * delta))
            / (12.0 * delta);
        u(lam) + self.c * du - self.forcing.value(x, lam)
    }

    /// The solution as a time-independent controlling function (n = 1).
    pub fn controlling_function(&self) -> ControllingFunction {
        let s = Arc::new(self.clone());
        let (s0, s1, s2, s3, s4, s5) = (s.clone(), s.clone(), s.clone(), s.clone(), s.clone(), s);
        let one = |v: f64| Vector::from_element(1, v);
        let m = |v: f64| Matrix::from_element(1, 1, v);
        ControllingFunction::new(1, move |x, l, _| s0.value(x[0], l[0]))
            .with_gradients(move |x, l, _| one(s1.d_x(x[0], l[0])), move |x, l, _| one(s2.d_lam(x[0], l[0])))
            .with_time_derivative(|_, _, _| 0.0)
            .with_mixed(move |x, l, _| m(s3.d_x_lam(x[0], l[0])))
            .with_hessians(move |x, l, _| m(s4.d_xx(x[0], l[0])), move |x, l, _| m(s5.d_lam_lam(x[0], l[0])))
            .with_time_gradients(|_, _, _| Vector::zeros(1), |_, _, _| Vector::zeros(1))
    }
}

/// Rectangular `(x, λ)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub xs: Vec<f64>,
    pub lams: Vec<f64>,
}

impl Grid2 {
    pub fn uniform(x: (f64, f64), lam: (f64, f64), nx: usize, nl: usize) -> Result<Self> {
        if nx < 2 || nl < 2 {
            return Err(Error::InvalidArgument("grid needs at least two nodes per axis".into()));
        }
        let lin = |(a, b): (f64, f64), n: usize| (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect();
        Ok(Self { xs: lin(x, nx), lams: lin(lam, nl) })
    }
}

#[derive(Debug, Clone)]
pub struct StraighteningSolution {
    pub solution: CharacteristicSolution,
    pub grid: Grid2,
    /// `u[i][j] = U(xs[i], lams[j])`.
    pub u: Vec<Vec<f64>>,
    pub boundary: String,
}

impl StraighteningSolution {
    /// Largest `|U + c·U_λ − F|` over the grid with a five-point `U_λ`.
    pub fn max_fd_residual(&self, delta: f64) -> f64 {
        if self.solution.algebraic {
            return 0.0;
        }
        let sol = &self.solution;
        let cols = per_column(&self.grid.xs, |x| {
            self.grid
                .lams
                .iter()
                .map(|&l| sol.fd_residual(x, l, delta).abs())
                .fold(0.0, f64::max)
        });
        cols.into_iter().fold(0.0, f64::max)
    }
}

/// Evaluates `work` for every grid column, in parallel, preserving order.
fn per_column<T: Send, W: Fn(f64) -> T + Sync>(xs: &[f64], work: W) -> Vec<T> {
    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(xs.len()).max(1);
    let chunk = xs.len().div_ceil(workers);
    let work = &work;
    thread::scope(|scope| {
        let handles: Vec<_> = xs
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(|&x| work(x)).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("column worker panicked"))
            .collect()
    })
}

/// Solves `U + c·U_λ = F` on `grid` by the integrating factor along each
/// characteristic `x = const` (n = 1).
pub fn straightening_solve(prob: &StraighteningProblem, lam_b: f64, forcing: Forcing, grid: &Grid2) -> Result<StraighteningSolution> {
    let (c, _, _) = prob.scalar()?;
    let lam_b = prob.lam_b.unwrap_or(lam_b);
    let solution = CharacteristicSolution {
        c,
        lam_b,
        algebraic: c.abs() < 1e-12,
        forcing,
    };
    let u = per_column(&grid.xs, |x| grid.lams.iter().map(|&l| solution.value(x, l)).collect());
    let boundary = if solution.algebraic {
        "algebraic case |c| < 1e-12: U = F, no boundary condition".to_string()
    } else {
        format!("U(x, {lam_b}) = 0")
    };
    Ok(StraighteningSolution {
        solution,
        grid: grid.clone(),
        u,
        boundary,
    })
}

/// `∫ λ dx` along a monotone extremal, as a cubic Hermite interpolant in `x`
/// with slope `λ`, extended linearly beyond the sampled range.
#[derive(Debug, Clone)]
struct LineIntegral {
    xs: Vec<f64>,
    phi: Vec<f64>,
    slope: Vec<f64>,
}

impl LineIntegral {
    fn along(traj: &Trajectory) -> Result<Self> {
        let mut xs: Vec<f64> = traj.samples.iter().map(|s| s.x[0]).collect();
        let mut lam: Vec<f64> = traj.samples.iter().map(|s| s.lam[0]).collect();
        let span = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        if span <= 1e-14 * xs[0].abs().max(1.0) {
            return Ok(Self { xs: vec![xs[0]], phi: vec![0.0], slope: vec![lam[0]] });
        }
        let increasing = xs[1] > xs[0];
        if !xs.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] }) {
            return Err(Error::InvalidArgument("extremal is not monotone in x".into()));
        }
        let mut phi = vec![0.0; xs.len()];
        for k in 1..xs.len() {
            phi[k] = phi[k - 1] + 0.5 * (lam[k] + lam[k - 1]) * (xs[k] - xs[k - 1]);
        }
        if !increasing {
            xs.reverse();
            lam.reverse();
            phi.reverse();
        }
        Ok(Self { xs, phi, slope: lam })
    }

    /// Value, first and second derivative in `x`.
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let m = self.xs.len();
        if m == 1 || x <= self.xs[0] || x >= self.xs[m - 1] {
            let k = if m == 1 || x <= self.xs[0] { 0 } else { m - 1 };
            return (self.phi[k] + self.slope[k] * (x - self.xs[k]), self.slope[k], 0.0);
        }
        let i = match self.xs.binary_search_by(|p| p.partial_cmp(&x).expect("finite")) {
            Ok(i) => i.min(m - 2),
            Err(i) => i - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let s = (x - x0) / h;
        let (p0, p1, m0, m1) = (self.phi[i], self.phi[i + 1], self.slope[i] * h, self.slope[i + 1] * h);
        let (s2, s3) = (s * s, s * s * s);
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1;
        let d = ((6.0 * s2 - 6.0 * s) * p0 + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (-6.0 * s2 + 6.0 * s) * p1 + (3.0 * s2 - 2.0 * s) * m1) / h;
        let dd = ((12.0 * s - 6.0) * p0 + (6.0 * s - 4.0) * m0 + (-12.0 * s + 6.0) * p1 + (6.0 * s - 2.0) * m1) / (h * h);
        (v, d, dd)
    }
}

#[derive(Debug, Clone)]
pub struct ReductionReport {
    pub extremal: Trajectory,
    pub solution: StraighteningSolution,
    /// `max |U + c·U_λ − F|` on the grid (five-point `U_λ`).
    pub pde_residual: f64,
    /// `max |U_t + H − a·μ|` along the extremal.
    pub hj_transformed: f64,
    /// `max |U_t − a·μ|` along the extremal.
    pub hj_literal: f64,
    /// `max |λ − U_x − c|` along the extremal (reported, not enforced).
    pub compatibility: f64,
    /// Image trajectory `y(t) = x + U_λ`.
    pub mapped: Vec<f64>,
    /// `max |ẏ − a|` with `ẏ` by differences of the image trajectory.
    pub drift_error: f64,
    pub boundary: String,
}

/// Straightening of an autonomous one-dimensional system: builds
/// `F = ∫λdx + c(y₀ − x)` along the extremal from `(x₀, λ₀)`, solves for `U`
/// and checks the image motion against `ẏ = a`.
pub fn constant_field_reduction(
    prob: &StraighteningProblem,
    sys: &DynamicSystem,
    x0: f64,
    lam0: f64,
    t1: f64,
    step: f64,
    grid_nodes: usize,
) -> Result<ReductionReport> {
    let (c, a, y0) = prob.scalar()?;
    check_dim(1, sys.dim(), "system")?;
    if !sys.is_autonomous() {
        return Err(Error::InvalidArgument("reduction requires an autonomous system".into()));
    }
    let s0 = PhaseState::from_slices(&[x0], &[lam0], 0.0)?;
    let h0 = hamiltonian(sys, &s0)?;
    if (h0 - prob.h).abs() > 1e-9 * prob.h.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "energy level h = {} differs from H(x₀, λ₀) = {h0}",
            prob.h
        )));
    }
    let extremal = integrate(sys, &s0, t1, step)?;
    if let Some(tr) = &extremal.truncation {
        return Err(Error::BlowUp { t: tr.t, reason: tr.reason.clone() });
    }
    let line = Arc::new(LineIntegral::along(&extremal)?);
    let (l0, l1, l2) = (line.clone(), line.clone(), line);
    let forcing = Forcing::new(move |x, _| l0.eval(x).0 + c * (y0 - x))
        .with_derivatives(move |x, _| l1.eval(x).1 - c, move |x, _| l2.eval(x).2, |_, _| 0.0);

    let (xmin, xmax) = extremal
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.x[0]), hi.max(s.x[0])));
    let (lmin, lmax) = extremal
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.lam[0]), hi.max(s.lam[0])));
    let pad = |lo: f64, hi: f64| {
        let w = (hi - lo).max(0.1 * lo.abs().max(hi.abs()).max(1.0));
        (lo - 0.25 * w, hi + 0.25 * w)
    };
    let grid = Grid2::uniform(pad(xmin, xmax), pad(lmin, lmax), grid_nodes, grid_nodes)?;
    let solution = straightening_solve(prob, lam0, forcing, &grid)?;
    let pde_residual = solution.max_fd_residual(1e-2);

    let cf = solution.solution.controlling_function();
    let spec = MappingSpec::new(MapVariant::Standard, cf.clone());
    let g = move |_: &Vector, mu: &Vector, _: f64| a * mu[0];
    let hj_transformed = hj_residual_transformed(&cf, sys, g, &spec, &extremal.samples)?.max;
    let hj_literal = hj_residual_u(&cf, g, &spec, &extremal.samples)?.max;
    let compatibility = extremal
        .samples
        .iter()
        .map(|s| (s.lam[0] - cf.grad_x(s)[0] - c).abs())
        .fold(0.0, f64::max);
    let mapped: Vec<f64> = extremal.samples.iter().map(|s| s.x[0] + cf.grad_lam(s)[0]).collect();
    let times = extremal.times();
    let mut drift_error: f64 = 0.0;
    for k in 1..mapped.len() {
        let rate = (mapped[k] - mapped[k - 1]) / (times[k] - times[k - 1]);
        drift_error = drift_error.max((rate - a).abs());
    }
    let boundary = solution.boundary.clone();
    Ok(ReductionReport {
        extremal,
        solution,
        pde_residual,
        hj_transformed,
        hj_literal,
        compatibility,
        mapped,
        drift_error,
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamilton::canonical_rhs;
    use crate::mapping::apply_map;

    #[test]
    fn circular_orbit_is_balanced() {
        let sys = ballistic_system(1.0).unwrap();
        let s = circular_orbit(1.0, 1.0, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let (dx, dl) = canonical_rhs(&sys, &s).unwrap();
        assert_eq!(dx[V_R], 0.0);
        assert_eq!(dx[R], 0.0);
        assert_eq!(dl[3], 0.0);
        assert_eq!(hamiltonian(&sys, &s).unwrap(), 0.0);
    }

    #[test]
    fn hand_written_adjoint_matches_generic() {
        let sys = ballistic_system(1.3).unwrap();
        let s = PhaseState::from_slices(&[0.2, 0.9, 1.4, 0.3], &[0.5, -1.0, 0.7, 2.0], 0.0).unwrap();
        let (_, dl) = canonical_rhs(&sys, &s).unwrap();
        let hand = ballistic_adjoint(1.3, &s).unwrap();
        assert!((dl - hand).amax() < 1e-12);
        let s = PhaseState::from_slices(&[0.0, 1.0, 1.0, 0.0], &[0.0, 1.0, 1.0, 0.0], 0.0).unwrap();
        assert_eq!(ballistic_adjoint(1.0, &s).unwrap()[0], 0.0);
    }

    #[test]
    fn collapse_is_truncated() {
        let sys = ballistic_system(1.0).unwrap();
        let s = PhaseState::from_slices(&[-1.0, 0.0, 0.5, 0.0], &[0.0; 4], 0.0).unwrap();
        let traj = integrate(&sys, &s, 5.0, 1e-3).unwrap();
        assert!(traj.is_truncated());
    }

    #[test]
    fn rotation_map_cases() {
        let (_, spec) = rotation_example(|t| t.sin(), |t| t.cos());
        let map = |x: f64, l: f64| {
            let (y, m) = apply_map(&spec, &PhaseState::from_slices(&[x], &[l], 0.7).unwrap()).unwrap();
            (y[0], m[0])
        };
        assert_eq!(map(2.0, 3.0), (3.0, -2.0));
        assert_eq!(map(0.0, 0.0), (0.0, 0.0));
        let (y, m) = map(1.0, 0.0);
        assert_eq!(map(y, m), (-1.0, 0.0));
    }

    #[test]
    fn straightening_closed_form() {
        let prob = StraighteningProblem::new(Vector::from_element(1, 1.0), Vector::from_element(1, 1.0), 1.0, Vector::zeros(1)).unwrap();
        let grid = Grid2::uniform((0.0, 1.0), (0.0, 1.0), 3, 11).unwrap();
        let sol = straightening_solve(&prob, 0.0, Forcing::new(|_, _| 1.0), &grid).unwrap();
        assert!((sol.solution.value(0.5, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
        assert!(sol.max_fd_residual(1e-2) < 1e-8);
        let zero = straightening_solve(&prob, 0.0, Forcing::new(|_, _| 0.0), &grid).unwrap();
        assert!(zero.u.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn straightening_rejects_bad_problems() {
        let v = |x: f64| Vector::from_element(1, x);
        assert!(StraighteningProblem::new(v(1.0), v(2.0), 3.0, v(0.0)).is_err());
        let p2 = StraighteningProblem::new(Vector::from_vec(vec![1.0, 0.0]), Vector::from_vec(vec![1.0, 0.0]), 1.0, Vector::zeros(2)).unwrap();
        let grid = Grid2::uniform((0.0, 1.0), (0.0, 1.0), 2, 2).unwrap();
        let err = straightening_solve(&p2, 0.0, Forcing::new(|_, _| 1.0), &grid).unwrap_err();
        assert!(err.to_string().contains("n = 1 only"));
        let alg = StraighteningProblem::new(v(0.0), v(1.0), 0.0, v(0.0)).unwrap();
        let sol = straightening_solve(&alg, 0.0, Forcing::new(|x, l| x + l), &grid).unwrap();
        assert!(sol.solution.algebraic);
        assert_eq!(sol.solution.value(0.3, 0.4), 0.7);
    }

    #[test]
    fn reduction_of_constant_drift() {
        let v = 0.8;
        let lam0 = 1.5;
        let sys = DynamicSystem::new(1, move |_, _| Vector::from_element(1, v))
            .unwrap()
            .with_jacobian(|_, _| Matrix::zeros(1, 1))
            .autonomous();
        let h = lam0 * v;
        let prob = StraighteningProblem::new(Vector::from_element(1, lam0), Vector::from_element(1, h / lam0), h, Vector::from_element(1, 0.25)).unwrap();
        let rep = constant_field_reduction(&prob, &sys, 0.1, lam0, 1.0, 1e-2, 21).unwrap();
        assert!(rep.pde_residual < 1e-8);
        assert!(rep.drift_error < 1e-6);
        assert!(rep.hj_transformed < 1e-6);
        assert!(rep.compatibility < 1e-9);
        assert!((rep.mapped[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn reduction_requires_consistent_energy() {
        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let prob = StraighteningProblem::new(Vector::from_element(1, 1.0), Vector::from_element(1, 2.0), 2.0, Vector::zeros(1)).unwrap();
        assert!(constant_field_reduction(&prob, &sys, 1.0, 1.0, 1.0, 1e-2, 11).is_err());
        assert!(constant_field_reduction(&prob, &sys, 1.0, 2.0, 1.0, 1e-2, 11).is_ok());
    }
}
