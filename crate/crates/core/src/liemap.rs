//! Poisson brackets, near-identity mappings `y = x + Ω_λ·ε`, `μ = λ − Ω_x·ε`
//! and the first-order flow obtained by composing them.
//!
//! [`compose_flow`] is an explicit-Euler-equivalent scheme of order one in
//! the step `T/N`; it illustrates how the flow is built from infinitesimal
//! canonical steps and is not meant as an integrator.

use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::hamilton::BLOW_UP_LIMIT;
use crate::numeric;
use crate::phasecore::{DynamicSystem, PhaseState, PhaseVectorFn, Vector};

type ScalarFn = Arc<dyn Fn(&Vector, &Vector, f64) -> f64 + Send + Sync>;

/// A scalar phase function with optional analytic gradients.
#[derive(Clone)]
pub struct PhaseFunction {
    dim: usize,
    value: ScalarFn,
    grad_x: Option<PhaseVectorFn>,
    grad_lam: Option<PhaseVectorFn>,
}

impl std::fmt::Debug for PhaseFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhaseFunction").field("dim", &self.dim).finish()
    }
}

impl PhaseFunction {
    pub fn new<F>(dim: usize, value: F) -> Self
    where
        F: Fn(&Vector, &Vector, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(value),
            grad_x: None,
            grad_lam: None,
        }
    }

    pub fn with_gradients<X, L>(mut self, gx: X, gl: L) -> Self
    where
        X: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
        L: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
    {
        self.grad_x = Some(Arc::new(gx));
        self.grad_lam = Some(Arc::new(gl));
        self
    }

    /// A single coordinate `x_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        Self::new(dim, move |x, _, _| x[i]).with_gradients(
            move |_, _, _| unit(dim, i),
            move |_, _, _| Vector::zeros(dim),
        )
    }

    /// A single multiplier `λ_i`.
    pub fn multiplier(dim: usize, i: usize) -> Self {
        Self::new(dim, move |_, l, _| l[i]).with_gradients(
            move |_, _, _| Vector::zeros(dim),
            move |_, _, _| unit(dim, i),
        )
    }

    /// The Hamiltonian `H = λ·f` of a system, with `H_x = Aᵀλ` and `H_λ = f`.
    pub fn hamiltonian(sys: &DynamicSystem) -> Self {
        let (s1, s2, s3) = (sys.clone(), sys.clone(), sys.clone());
        Self::new(sys.dim(), move |x, l, t| l.dot(&s1.field(x, t))).with_gradients(
            move |x, l, t| s2.jacobian(x, t).transpose() * l,
            move |x, _, t| s3.field(x, t),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, s: &PhaseState) -> f64 {
        (self.value)(&s.x, &s.lam, s.t)
    }

    pub fn grad_x(&self, s: &PhaseState) -> Vector {
        match &self.grad_x {
            Some(g) => g(&s.x, &s.lam, s.t),
            None => numeric::gradient(|p| (self.value)(p, &s.lam, s.t), &s.x),
        }
    }

    pub fn grad_lam(&self, s: &PhaseState) -> Vector {
        match &self.grad_lam {
            Some(g) => g(&s.x, &s.lam, s.t),
            None => numeric::gradient(|p| (self.value)(&s.x, p, s.t), &s.lam),
        }
    }

    /// Largest relative deviation of the supplied gradients from central
    /// differences at `s`.
    pub fn gradient_error(&self, s: &PhaseState) -> f64 {
        let fx = numeric::gradient(|p| (self.value)(p, &s.lam, s.t), &s.x);
        let fl = numeric::gradient(|p| (self.value)(&s.x, p, s.t), &s.lam);
        let rel = |a: &Vector, b: &Vector| {
            a.iter()
                .zip(b.iter())
                .map(|(u, v)| (u - v).abs() / u.abs().max(v.abs()).max(1.0))
                .fold(0.0, f64::max)
        };
        rel(&self.grad_x(s), &fx).max(rel(&self.grad_lam(s), &fl))
    }
}

fn unit(n: usize, i: usize) -> Vector {
    let mut v = Vector::zeros(n);
    v[i] = 1.0;
    v
}

/// `{ψ, Ω} = Σ (ψ_{x_i} Ω_{λ_i} − ψ_{λ_i} Ω_{x_i})`.
pub fn poisson_bracket(psi: &PhaseFunction, omega: &PhaseFunction, s: &PhaseState) -> Result<f64> {
    check_dim(psi.dim(), omega.dim(), "bracket operands")?;
    s.expect_dim(psi.dim())?;
    Ok(psi.grad_x(s).dot(&omega.grad_lam(s)) - psi.grad_lam(s).dot(&omega.grad_x(s)))
}

/// Generator `Ω` of near-identity mappings with parameter `ε`.
///
/// The mapping is linear in `ε` by construction: `Ω` itself does not depend
/// on the parameter.
#[derive(Debug, Clone)]
pub struct Generator {
    pub omega: PhaseFunction,
    pub eps: f64,
}

impl Generator {
    pub fn new(omega: PhaseFunction, eps: f64) -> Result<Self> {
        if eps == 0.0 || !eps.is_finite() {
            return Err(Error::InvalidArgument("generator parameter must be finite and nonzero".into()));
        }
        Ok(Self { omega, eps })
    }

    /// Generator of the Hamiltonian flow of `sys`, `Ω = H`.
    pub fn hamiltonian(sys: &DynamicSystem, eps: f64) -> Result<Self> {
        Self::new(PhaseFunction::hamiltonian(sys), eps)
    }
}

/// `y = x + Ω_λ·ε`, `μ = λ − Ω_x·ε`.
pub fn infinitesimal_step(gen: &Generator, s: &PhaseState) -> Result<(Vector, Vector)> {
    s.expect_dim(gen.omega.dim())?;
    Ok(step_with(&gen.omega, s, gen.eps))
}

fn step_with(omega: &PhaseFunction, s: &PhaseState, eps: f64) -> (Vector, Vector) {
    (&s.x + omega.grad_lam(s) * eps, &s.lam - omega.grad_x(s) * eps)
}

/// Applies `N` near-identity steps with `ε = T/N`, advancing time by `ε`
/// each step. The generator's own `ε` is ignored.
pub fn compose_flow(gen: &Generator, s0: &PhaseState, t: f64, n: usize) -> Result<PhaseState> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of steps must be at least 1".into()));
    }
    s0.expect_dim(gen.omega.dim())?;
    let eps = t / n as f64;
    let mut s = s0.clone();
    for _ in 0..n {
        let (y, mu) = step_with(&gen.omega, &s, eps);
        s = PhaseState { x: y, lam: mu, t: s.t + eps };
        let big = s.x.iter().chain(s.lam.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        if !s.is_finite() || big > BLOW_UP_LIMIT {
            return Err(Error::BlowUp {
                t: s.t,
                reason: format!("composed flow state magnitude {big:.3e}"),
            });
        }
    }
    Ok(s)
}

/// `ψ(x, λ) − [ψ(y, μ) − {ψ, Ω}·ε]` for one step; `O(ε²)`.
pub fn first_order_variation(psi: &PhaseFunction, gen: &Generator, s: &PhaseState) -> Result<f64> {
    let (y, mu) = infinitesimal_step(gen, s)?;
    let image = PhaseState { x: y, lam: mu, t: s.t };
    Ok(psi.value(s) - (psi.value(&image) - poisson_bracket(psi, &gen.omega, s)? * gen.eps))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}
