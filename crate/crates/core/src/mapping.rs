//! Controlled mappings `(x, λ) → (y, μ)` driven by a controlling function,
//! canonicity criteria evaluated along trajectories, synthesis of one initial
//! multiplier so that a criterion holds, and construction of `U_λ` from the
//! state-transition matrix.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::hamilton::{fundamental_matrix, FundamentalKind, FundamentalMatrix};
use crate::numeric::{self, solve_scalar};
use crate::phasecore::{ControllingFunction, DynamicSystem, Matrix, PhaseState, Trajectory, Vector};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_DEGENERATE_TOLERANCE: f64 = 1e-12;
/// Pivot magnitude below which a single-multiplier solve is degenerate.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Residual required of a synthesized initial multiplier.
pub const ROOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// Controlled-mapping variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapVariant {
    /// `y = x + U_λ`, `μ = λ − U_x`.
    Standard,
    /// `(y; μ) = (x; λ) + ½·I·(U_x; U_λ)` with `I = [[0, E], [−E, 0]]`,
    /// i.e. `y = x + ½U_λ`, `μ = λ − ½U_x`.
    Symplectic,
    /// `y = x ± U_λ`, `μ = λ ± U_x`.
    Signed { sy: Sign, smu: Sign },
    /// `y = x ± U_x`, `μ = λ ± U_λ`.
    Swapped { sy: Sign, smu: Sign },
    /// `y = x + U_x`, `μ = λ − U_λ`.
    Cross,
}

impl MapVariant {
    pub fn name(&self) -> String {
        match self {
            MapVariant::Standard => "standard".into(),
            MapVariant::Symplectic => "symplectic".into(),
            MapVariant::Signed { sy, smu } => format!("signed({sy},{smu})"),
            MapVariant::Swapped { sy, smu } => format!("swapped({sy},{smu})"),
            MapVariant::Cross => "cross".into(),
        }
    }

    /// Coefficients of the map in one of two normal forms.
    fn form(&self) -> Form {
        match *self {
            MapVariant::Standard => Form::LamFirst(1.0, -1.0),
            MapVariant::Symplectic => Form::LamFirst(0.5, -0.5),
            MapVariant::Signed { sy, smu } => Form::LamFirst(sy.value(), smu.value()),
            MapVariant::Swapped { sy, smu } => Form::XFirst(sy.value(), smu.value()),
            MapVariant::Cross => Form::XFirst(1.0, -1.0),
        }
    }

    fn criterion(&self) -> Result<Criterion> {
        match self.form() {
            Form::LamFirst(a, b) if a == 1.0 && b == -1.0 => Ok(Criterion::Standard),
            Form::XFirst(a, b) if a == 1.0 && b == -1.0 => Ok(Criterion::Cross),
            _ => Err(Error::UnsupportedVariant(self.name())),
        }
    }
}

impl fmt::Display for MapVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy)]
enum Form {
    /// `y = x + a·U_λ`, `μ = λ + b·U_x`.
    LamFirst(f64, f64),
    /// `y = x + a·U_x`, `μ = λ + b·U_λ`.
    XFirst(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Criterion {
    Standard,
    Cross,
}

#[derive(Debug, Clone)]
pub struct MappingSpec {
    pub variant: MapVariant,
    pub cf: ControllingFunction,
}

impl MappingSpec {
    pub fn new(variant: MapVariant, cf: ControllingFunction) -> Self {
        Self { variant, cf }
    }

    pub fn dim(&self) -> usize {
        self.cf.dim()
    }
}

/// Forward map `(x, λ) → (y, μ)`.
pub fn apply_map(spec: &MappingSpec, s: &PhaseState) -> Result<(Vector, Vector)> {
    s.expect_dim(spec.dim())?;
    let ux = spec.cf.grad_x(s);
    let ul = spec.cf.grad_lam(s);
    Ok(match spec.variant.form() {
        Form::LamFirst(a, b) => (&s.x + ul * a, &s.lam + ux * b),
        Form::XFirst(a, b) => (&s.x + ux * a, &s.lam + ul * b),
    })
}

struct Blocks {
    /// `∂U_λ/∂x`, entry `[i][j] = ∂²U/∂λ_i∂x_j`.
    ulx: Matrix,
    /// `∂U_x/∂λ`, entry `[i][j] = ∂²U/∂x_i∂λ_j`.
    uxl: Matrix,
    uxx: Matrix,
    ull: Matrix,
}

fn blocks(cf: &ControllingFunction, s: &PhaseState) -> Result<Blocks> {
    let uxl = cf.mixed(s)?;
    Ok(Blocks {
        ulx: uxl.transpose(),
        uxl,
        uxx: cf.hess_xx(s)?,
        ull: cf.hess_lamlam(s)?,
    })
}

/// Full `2n×2n` Jacobian of the forward map from the second derivatives.
pub fn map_jacobian(spec: &MappingSpec, s: &PhaseState) -> Result<Matrix> {
    s.expect_dim(spec.dim())?;
    let n = spec.dim();
    let b = blocks(&spec.cf, s)?;
    let e = Matrix::identity(n, n);
    let (yx, yl, mx, ml) = match spec.variant.form() {
        Form::LamFirst(a, c) => (&e + &b.ulx * a, &b.ull * a, &b.uxx * c, &e + &b.uxl * c),
        Form::XFirst(a, c) => (&e + &b.uxx * a, &b.uxl * a, &b.ulx * c, &e + &b.ull * c),
    };
    let mut j = Matrix::zeros(2 * n, 2 * n);
    j.view_mut((0, 0), (n, n)).copy_from(&yx);
    j.view_mut((0, n), (n, n)).copy_from(&yl);
    j.view_mut((n, 0), (n, n)).copy_from(&mx);
    j.view_mut((n, n), (n, n)).copy_from(&ml);
    Ok(j)
}

/// Determinants of the blocks that make `y` solvable for `x` and `μ` for `λ`.
///
/// `Standard`/`Signed`: `det(E + a·∂U_λ/∂x)` and `det(E + b·∂U_x/∂λ)`.
/// `Swapped`/`Cross`: `det(E + a·U_xx)` and `det(E + b·U_λλ)`.
/// `Symplectic`: both equal `1 + ¼·det(U_xλ)`.
pub fn jacobian_condition(spec: &MappingSpec, s: &PhaseState) -> Result<(f64, f64)> {
    s.expect_dim(spec.dim())?;
    let n = spec.dim();
    let e = Matrix::identity(n, n);
    if spec.variant == MapVariant::Symplectic {
        let d = 1.0 + 0.25 * spec.cf.mixed(s)?.determinant();
        return Ok((d, d));
    }
    let b = blocks(&spec.cf, s)?;
    Ok(match spec.variant.form() {
        Form::LamFirst(a, c) => ((&e + &b.ulx * a).determinant(), (&e + &b.uxl * c).determinant()),
        Form::XFirst(a, c) => ((&e + &b.uxx * a).determinant(), (&e + &b.ull * c).determinant()),
    })
}

/// Inverts the forward map by damped Newton iteration on `(y, μ)` residuals.
pub fn invert_map(spec: &MappingSpec, y: &Vector, mu: &Vector, t: f64, guess: &PhaseState) -> Result<PhaseState> {
    let n = spec.dim();
    check_dim(n, y.len(), "image coordinates")?;
    check_dim(n, mu.len(), "image multipliers")?;
    guess.expect_dim(n)?;
    let mut target = Vector::zeros(2 * n);
    target.rows_mut(0, n).copy_from(y);
    target.rows_mut(n, n).copy_from(mu);
    let eval = |z: &Vector| -> Vector {
        let s = PhaseState {
            x: z.rows(0, n).into_owned(),
            lam: z.rows(n, n).into_owned(),
            t,
        };
        let (yy, mm) = apply_map(spec, &s).expect("dimension checked");
        let mut out = Vector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&yy);
        out.rows_mut(n, n).copy_from(&mm);
        out - &target
    };
    let mut z = Vector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(&guess.x);
    z.rows_mut(n, n).copy_from(&guess.lam);
    let mut r = eval(&z);
    let mut norm = r.amax();
    let scale = target.amax().max(1.0);
    for it in 0..50 {
        if norm <= 1e-12 * scale {
            return PhaseState::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned(), t);
        }
        let jac = numeric::jacobian(&eval, &z, 2 * n);
        let Some(dz) = jac.lu().solve(&r) else {
            return Err(Error::NoConvergence { iterations: it, residual: norm });
        };
        let mut damp = 1.0;
        loop {
            let cand = &z - &dz * damp;
            let rc = eval(&cand);
            if rc.amax() < norm || damp < 1e-4 {
                z = cand;
                r = rc;
                norm = r.amax();
                break;
            }
            damp *= 0.5;
        }
    }
    if norm <= 1e-12 * scale {
        PhaseState::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned(), t)
    } else {
        Err(Error::NoConvergence { iterations: 50, residual: norm })
    }
}

/// Coefficients of a criterion 1-form `cx·dx + clam·dλ + ct·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionForm {
    pub cx: Vector,
    pub clam: Vector,
    pub ct: f64,
    /// Per-sample scale `max(1, ‖λ‖·‖U_λ‖)`.
    pub scale: f64,
}

impl CriterionForm {
    pub fn along(&self, dx: &Vector, dlam: &Vector) -> f64 {
        self.cx.dot(dx) + self.clam.dot(dlam) + self.ct
    }

    pub fn coefficient_norm(&self) -> f64 {
        self.cx.amax().max(self.clam.amax()).max(self.ct.abs())
    }
}

fn criterion_form(kind: Criterion, cf: &ControllingFunction, s: &PhaseState) -> Result<CriterionForm> {
    let ux = cf.grad_x(s);
    let ul = cf.grad_lam(s);
    let uxl = cf.mixed(s)?;
    let scale = (s.lam.norm() * ul.norm()).max(1.0);
    Ok(match kind {
        // (U_x − λ)·dU_λ − U_λ·dλ
        Criterion::Standard => {
            let w = &ux - &s.lam;
            CriterionForm {
                cx: &uxl * &w,
                clam: cf.hess_lamlam(s)? * &w - &ul,
                ct: w.dot(&cf.dt_grad_lam(s)?),
                scale,
            }
        }
        // (λ − U_λ)·dU_x − (U_λ − U_x)·dx + U_λ·dλ
        Criterion::Cross => {
            let w = &s.lam - &ul;
            CriterionForm {
                cx: cf.hess_xx(s)? * &w - (&ul - &ux),
                clam: uxl.transpose() * &w + &ul,
                ct: w.dot(&cf.dt_grad_x(s)?),
                scale,
            }
        }
    })
}

/// Criterion 1-form of a mapping at a point.
pub fn criterion_form_at(spec: &MappingSpec, s: &PhaseState) -> Result<CriterionForm> {
    s.expect_dim(spec.dim())?;
    criterion_form(spec.variant.criterion()?, &spec.cf, s)
}

fn signed_residual(kind: Criterion, sys: &DynamicSystem, cf: &ControllingFunction, s: &PhaseState) -> Result<(f64, f64)> {
    let form = criterion_form(kind, cf, s)?;
    let dx = sys.field(&s.x, s.t);
    let dlam = -(sys.jacobian(&s.x, s.t).transpose() * &s.lam);
    Ok((form.along(&dx, &dlam), form.scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Canonical,
    Violated,
    Degenerate,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Canonical => "canonical",
            Verdict::Violated => "violated",
            Verdict::Degenerate => "degenerate",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicityOptions {
    pub tolerance: f64,
    pub degenerate_tolerance: f64,
}

impl Default for CanonicityOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            degenerate_tolerance: DEFAULT_DEGENERATE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicityReport {
    pub times: Vec<f64>,
    /// `|r(t)| / max(1, ‖λ‖·‖U_λ‖)` per sample.
    pub residual_series: Vec<f64>,
    pub max_residual: f64,
    pub det_y: Vec<f64>,
    pub det_mu: Vec<f64>,
    /// Smallest `|det|` of the full map Jacobian over the samples.
    pub jacobian_min_abs_det: f64,
    pub verdict: Verdict,
    pub options: CanonicityOptions,
}

fn verdict(max_residual: f64, min_det: f64, opts: &CanonicityOptions) -> Verdict {
    if min_det.is_nan() || min_det <= opts.degenerate_tolerance {
        Verdict::Degenerate
    } else if max_residual < opts.tolerance {
        Verdict::Canonical
    } else {
        Verdict::Violated
    }
}

/// Evaluates the canonicity criterion of `spec` along `traj` with default
/// tolerances.
pub fn canonicity_residual(sys: &DynamicSystem, spec: &MappingSpec, traj: &Trajectory) -> Result<CanonicityReport> {
    canonicity_residual_with(sys, spec, traj, CanonicityOptions::default())
}

/// Restricts the criterion 1-form to the flow (`dx = f dt`, `dλ = −Aᵀλ dt`)
/// and reports its scaled magnitude per sample.
pub fn canonicity_residual_with(
    sys: &DynamicSystem,
    spec: &MappingSpec,
    traj: &Trajectory,
    opts: CanonicityOptions,
) -> Result<CanonicityReport> {
    let kind = spec.variant.criterion()?;
    check_dim(sys.dim(), spec.dim(), "controlling function")?;
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let m = traj.len();
    let mut report = CanonicityReport {
        times: Vec::with_capacity(m),
        residual_series: Vec::with_capacity(m),
        max_residual: 0.0,
        det_y: Vec::with_capacity(m),
        det_mu: Vec::with_capacity(m),
        jacobian_min_abs_det: f64::INFINITY,
        verdict: Verdict::Canonical,
        options: opts,
    };
    for s in &traj.samples {
        s.expect_dim(sys.dim())?;
        let (r, scale) = signed_residual(kind, sys, &spec.cf, s)?;
        let res = r.abs() / scale;
        if !res.is_finite() {
            return Err(Error::NonFinite {
                what: "canonicity residual".into(),
                point: s.describe(),
            });
        }
        let (dy, dm) = jacobian_condition(spec, s)?;
        let full = map_jacobian(spec, s)?.determinant().abs();
        report.times.push(s.t);
        report.residual_series.push(res);
        report.max_residual = report.max_residual.max(res);
        report.det_y.push(dy);
        report.det_mu.push(dm);
        report.jacobian_min_abs_det = report.jacobian_min_abs_det.min(full);
    }
    report.verdict = verdict(report.max_residual, report.jacobian_min_abs_det, &opts);
    Ok(report)
}

/// Criterion checked as an identity in `(x, λ, t)`: the 1-form coefficients
/// themselves must vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct OffFlowReport {
    /// Scaled largest coefficient magnitude per point.
    pub coefficient_series: Vec<f64>,
    pub max_coefficient: f64,
    pub verdict: Verdict,
}

pub fn canonicity_off_flow(spec: &MappingSpec, points: &[PhaseState], opts: CanonicityOptions) -> Result<OffFlowReport> {
    let kind = spec.variant.criterion()?;
    if points.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    let mut series = Vec::with_capacity(points.len());
    let mut min_det = f64::INFINITY;
    for p in points {
        p.expect_dim(spec.dim())?;
        let form = criterion_form(kind, &spec.cf, p)?;
        series.push(form.coefficient_norm() / form.scale);
        min_det = min_det.min(map_jacobian(spec, p)?.determinant().abs());
    }
    let max_coefficient = series.iter().cloned().fold(0.0, f64::max);
    Ok(OffFlowReport {
        coefficient_series: series,
        max_coefficient,
        verdict: verdict(max_coefficient, min_det, &opts),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    /// The criterion does not depend on the chosen multiplier and already
    /// holds; the initial guess is returned.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lambda0Solution {
    pub value: f64,
    pub status: SolveStatus,
    /// `|g|` at the returned value (unscaled criterion residual at `t₀`).
    pub residual: f64,
    /// `∂g/∂λ₀ₖ` at the closed-form initializer.
    pub pivot: f64,
    /// Linear coefficients `C` (or `D` for the cross criterion) at `t₀`.
    pub coefficients: Vector,
    pub initializer: f64,
}

/// Solves the standard canonicity criterion at `t₀` for the multiplier
/// component `k`; the other components of `lam0` are held fixed and
/// `lam0[k]` is the starting guess.
pub fn synthesize_lambda0(
    sys: &DynamicSystem,
    cf: &ControllingFunction,
    x0: &Vector,
    lam0: &Vector,
    k: usize,
    t0: f64,
) -> Result<Lambda0Solution> {
    synthesize(Criterion::Standard, sys, cf, x0, lam0, k, t0)
}

/// As [`synthesize_lambda0`] for the cross criterion.
pub fn synthesize_lambda0_cross(
    sys: &DynamicSystem,
    cf: &ControllingFunction,
    x0: &Vector,
    lam0: &Vector,
    k: usize,
    t0: f64,
) -> Result<Lambda0Solution> {
    synthesize(Criterion::Cross, sys, cf, x0, lam0, k, t0)
}

/// Signed criterion residual at `(x₀, λ₀, t₀)` with `B = E`.
pub fn criterion_residual_at(sys: &DynamicSystem, spec: &MappingSpec, s: &PhaseState) -> Result<f64> {
    s.expect_dim(sys.dim())?;
    Ok(signed_residual(spec.variant.criterion()?, sys, &spec.cf, s)?.0)
}

/// Linear coefficients and right-hand side of the criterion written as
/// `coef·λ = rhs` at `B = E`.
fn linear_split(kind: Criterion, sys: &DynamicSystem, cf: &ControllingFunction, s: &PhaseState) -> Result<(Vector, f64)> {
    let a = sys.jacobian(&s.x, s.t);
    let dx = sys.field(&s.x, s.t);
    let dlam = -(a.transpose() * &s.lam);
    let ux = cf.grad_x(s);
    let ul = cf.grad_lam(s);
    let uxl = cf.mixed(s)?;
    Ok(match kind {
        Criterion::Standard => {
            let ul_dot = uxl.transpose() * &dx + cf.hess_lamlam(s)? * &dlam + cf.dt_grad_lam(s)?;
            (&ul_dot - &a * &ul, ux.dot(&ul_dot))
        }
        Criterion::Cross => {
            let ux_dot = cf.hess_xx(s)? * &dx + &uxl * &dlam + cf.dt_grad_x(s)?;
            (&ux_dot - &a * &ul, ul.dot(&ux_dot) + (&ul - &ux).dot(&dx))
        }
    })
}

fn synthesize(
    kind: Criterion,
    sys: &DynamicSystem,
    cf: &ControllingFunction,
    x0: &Vector,
    lam0: &Vector,
    k: usize,
    t0: f64,
) -> Result<Lambda0Solution> {
    let n = sys.dim();
    check_dim(n, cf.dim(), "controlling function")?;
    check_dim(n, x0.len(), "initial state")?;
    check_dim(n, lam0.len(), "initial multipliers")?;
    if k >= n {
        return Err(Error::InvalidArgument(format!("pivot index {k} out of range for n = {n}")));
    }
    let state = |v: f64| {
        let mut lam = lam0.clone();
        lam[k] = v;
        PhaseState { x: x0.clone(), lam, t: t0 }
    };
    let g = |v: f64| -> f64 {
        signed_residual(kind, sys, cf, &state(v))
            .map(|(r, _)| r)
            .unwrap_or(f64::NAN)
    };
    let guess_state = PhaseState::new(x0.clone(), lam0.clone(), t0)?;
    // Surface missing derivative blocks as errors before the scalar solve.
    signed_residual(kind, sys, cf, &guess_state)?;
    let (coef, rhs) = linear_split(kind, sys, cf, &guess_state)?;
    let initializer = if coef[k].abs() >= PIVOT_TOLERANCE {
        let others: f64 = (0..n).filter(|&i| i != k).map(|i| coef[i] * lam0[i]).sum();
        (rhs - others) / coef[k]
    } else {
        lam0[k]
    };
    let g_init = g(initializer);
    if !g_init.is_finite() {
        return Err(Error::NonFinite {
            what: "criterion residual".into(),
            point: state(initializer).describe(),
        });
    }
    let pivot = numeric::central_diff(g, initializer);
    let g_scale = g_init.abs().max(1.0);
    let flat = pivot.abs() < PIVOT_TOLERANCE
        && [-10.0, -1.0, 1.0, 10.0]
            .iter()
            .all(|d| (g(initializer + d) - g_init).abs() <= 1e-12 * g_scale);
    if flat {
        if g_init.abs() <= ROOT_TOLERANCE {
            return Ok(Lambda0Solution {
                value: initializer,
                status: SolveStatus::Indeterminate,
                residual: g_init.abs(),
                pivot,
                coefficients: coef,
                initializer,
            });
        }
        return Err(Error::DegeneratePivot { k, pivot });
    }
    let root = solve_scalar(&g, initializer, ROOT_TOLERANCE).ok_or_else(|| {
        Error::RootNotFound(format!(
            "criterion residual has no root near {initializer:.6e} for multiplier {k} (|g| = {:.3e})",
            g_init.abs()
        ))
    })?;
    Ok(Lambda0Solution {
        value: root.value,
        status: SolveStatus::Solved,
        residual: root.residual,
        pivot,
        coefficients: coef,
        initializer,
    })
}

/// Controlling function built from the state-transition matrix, together
/// with its construction diagnostics.
#[derive(Debug, Clone)]
pub struct SynthesizedU {
    pub cf: ControllingFunction,
    pub d: FundamentalMatrix,
    /// `|U_x·U̇_λ|` per trajectory sample.
    pub orthogonality_defect: Vec<f64>,
    /// `max‖U̇_λ − A·U_λ‖` on interior samples, with `U̇_λ` taken by a
    /// five-point difference of the sampled `U_λ`.
    pub generator_defect: f64,
}

/// Piecewise cubic Hermite interpolation of `D(t)` with nodal slopes `A·D`.
#[derive(Debug, Clone)]
struct HermiteMatrix {
    times: Vec<f64>,
    values: Vec<Matrix>,
    slopes: Vec<Matrix>,
}

impl HermiteMatrix {
    fn segment(&self, t: f64) -> usize {
        let m = self.times.len();
        match self.times.binary_search_by(|p| p.partial_cmp(&t).expect("finite time")) {
            Ok(i) => i.min(m - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(m - 2),
        }
    }

    /// Value and time derivative at `t`; beyond the grid the end segments
    /// are extended.
    fn eval(&self, t: f64) -> (Matrix, Matrix) {
        if let Ok(i) = self.times.binary_search_by(|p| p.partial_cmp(&t).expect("finite time")) {
            return (self.values[i].clone(), self.slopes[i].clone());
        }
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        let (p0, p1, m0, m1) = (&self.values[i], &self.values[i + 1], &self.slopes[i], &self.slopes[i + 1]);
        let value = p0 * h00 + m0 * (h10 * h) + p1 * h01 + m1 * (h11 * h);
        let rate = p0 * d00 + m0 * d10 + p1 * d01 + m1 * d11;
        (value, rate)
    }
}

/// Second-difference step for the user potential `u(x, t)`.
fn fd2_step(c: f64) -> f64 {
    1e-4 * c.abs().max(1.0)
}

/// Builds `U(x, λ, t) = (D(t)·ulam0)·λ + u(x, t)` with `D` the state-transition
/// matrix along `traj`, so that `U̇_λ = A·U_λ` on the trajectory.
///
/// Derivatives of `u` are taken by finite differences.
pub fn synthesize_ulam<P>(sys: &DynamicSystem, traj: &Trajectory, ulam0: &Vector, u: P) -> Result<SynthesizedU>
where
    P: Fn(&Vector, f64) -> f64 + Send + Sync + 'static,
{
    let n = sys.dim();
    check_dim(n, ulam0.len(), "initial U_λ")?;
    if ulam0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial U_λ must be finite".into()));
    }
    traj.validate()?;
    let d = fundamental_matrix(sys, traj, FundamentalKind::D)?;
    let slopes = traj
        .samples
        .iter()
        .zip(&d.values)
        .map(|(s, dm)| sys.jacobian(&s.x, s.t) * dm)
        .collect();
    let interp = Arc::new(HermiteMatrix {
        times: d.times.clone(),
        values: d.values.clone(),
        slopes,
    });
    let u = Arc::new(u);
    let w0 = Arc::new(ulam0.clone());

    let ux = {
        let u = u.clone();
        move |x: &Vector, t: f64| numeric::gradient(|p| u(p, t), x)
    };
    let ux = Arc::new(ux);
    let uxx = {
        let u = u.clone();
        move |x: &Vector, t: f64| {
            let mut m = Matrix::zeros(n, n);
            let mut p = x.clone();
            for i in 0..n {
                for j in 0..n {
                    let (hi, hj) = (fd2_step(x[i]), fd2_step(x[j]));
                    let mut corner = |si: f64, sj: f64| {
                        p.copy_from(x);
                        p[i] += si * hi;
                        p[j] += sj * hj;
                        u(&p, t)
                    };
                    m[(i, j)] = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                        / (4.0 * hi * hj);
                }
            }
            m
        }
    };
    let uxt = {
        let u = u.clone();
        move |x: &Vector, t: f64| {
            let ht = fd2_step(t);
            let g = |tt: f64| numeric::gradient(|p| u(p, tt), x);
            (g(t + ht) - g(t - ht)) / (2.0 * ht)
        }
    };

    let cf = {
        let (u_v, i_v, w_v) = (u.clone(), interp.clone(), w0.clone());
        let (i_l, w_l) = (interp.clone(), w0.clone());
        let (u_t, i_t, w_t) = (u.clone(), interp.clone(), w0.clone());
        let (i_lt, w_lt) = (interp.clone(), w0.clone());
        let ux_g = ux.clone();
        ControllingFunction::new(n, move |x, lam, t| (i_v.eval(t).0 * &*w_v).dot(lam) + u_v(x, t))
            .with_gradients(move |x, _, t| ux_g(x, t), move |_, _, t| i_l.eval(t).0 * &*w_l)
            .with_time_derivative(move |x, lam, t| {
                (i_t.eval(t).1 * &*w_t).dot(lam) + numeric::central_diff(|tt| u_t(x, tt), t)
            })
            .with_mixed(move |_, _, _| Matrix::zeros(n, n))
            .with_hessians(move |x, _, t| uxx(x, t), move |_, _, _| Matrix::zeros(n, n))
            .with_time_gradients(move |x, _, t| uxt(x, t), move |_, _, t| i_lt.eval(t).1 * &*w_lt)
    };

    let ulam_samples: Vec<Vector> = d.values.iter().map(|dm| dm * ulam0).collect();
    let orthogonality_defect = traj
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rate = &interp.slopes[k] * ulam0;
            ux(&s.x, s.t).dot(&rate).abs()
        })
        .collect();

    let mut generator_defect = 0.0f64;
    let h = traj.step;
    let uniform = |k: usize| ((traj.samples[k + 1].t - traj.samples[k].t) - h).abs() <= 1e-9 * h;
    for k in 2..traj.len().saturating_sub(2) {
        if !(k - 2..k + 2).all(uniform) {
            continue;
        }
        let rate = (&ulam_samples[k - 2] - &ulam_samples[k - 1] * 8.0 + &ulam_samples[k + 1] * 8.0 - &ulam_samples[k + 2])
            / (12.0 * h);
        let s = &traj.samples[k];
        let defect = (rate - sys.jacobian(&s.x, s.t) * &ulam_samples[k]).norm();
        generator_defect = generator_defect.max(defect);
    }

    Ok(SynthesizedU {
        cf,
        d,
        orthogonality_defect,
        generator_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamilton::integrate;

    fn st(x: &[f64], l: &[f64], t: f64) -> PhaseState {
        PhaseState::from_slices(x, l, t).unwrap()
    }

    /// `U = c·x·λ` with exact derivatives.
    fn bilinear(n: usize, c: f64) -> ControllingFunction {
        ControllingFunction::new(n, move |x, l, _| c * x.dot(l))
            .with_gradients(move |_, l, _| l * c, move |x, _, _| x * c)
            .with_time_derivative(|_, _, _| 0.0)
            .with_mixed(move |_, _, _| Matrix::identity(n, n) * c)
            .with_hessians(move |_, _, _| Matrix::zeros(n, n), move |_, _, _| Matrix::zeros(n, n))
            .with_time_gradients(move |_, _, _| Vector::zeros(n), move |_, _, _| Vector::zeros(n))
    }

    fn rotation_cf() -> ControllingFunction {
        ControllingFunction::new(1, |x, l, _| 0.5 * l[0] * l[0] - 0.5 * x[0] * x[0] + l[0] * x[0])
            .with_gradients(|x, l, _| l - x, |x, l, _| l + x)
            .with_time_derivative(|_, _, _| 0.0)
            .with_mixed(|_, _, _| Matrix::identity(1, 1))
            .with_hessians(|_, _, _| -Matrix::identity(1, 1), |_, _, _| Matrix::identity(1, 1))
            .with_time_gradients(|_, _, _| Vector::zeros(1), |_, _, _| Vector::zeros(1))
    }

    const ALL: [MapVariant; 5] = [
        MapVariant::Standard,
        MapVariant::Symplectic,
        MapVariant::Signed { sy: Sign::Minus, smu: Sign::Plus },
        MapVariant::Swapped { sy: Sign::Plus, smu: Sign::Plus },
        MapVariant::Cross,
    ];

    #[test]
    fn zero_function_gives_identity_for_every_variant() {
        let s = st(&[0.3, -1.2], &[2.0, 0.7], 0.5);
        for v in ALL {
            let spec = MappingSpec::new(v, ControllingFunction::zero(2));
            let (y, mu) = apply_map(&spec, &s).unwrap();
            assert_eq!((y, mu), (s.x.clone(), s.lam.clone()), "{v}");
        }
    }

    #[test]
    fn bilinear_standard_map() {
        let spec = MappingSpec::new(MapVariant::Standard, bilinear(1, 0.1));
        let (y, mu) = apply_map(&spec, &st(&[1.0], &[2.0], 0.0)).unwrap();
        assert!((y[0] - 1.1).abs() < 1e-15 && (mu[0] - 1.8).abs() < 1e-15);
        let (dy, dm) = jacobian_condition(&spec, &st(&[1.0], &[2.0], 0.0)).unwrap();
        assert!((dy - 1.1).abs() < 1e-15 && (dm - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rotation_under_cross_variant() {
        let spec = MappingSpec::new(MapVariant::Cross, rotation_cf());
        let (y, mu) = apply_map(&spec, &st(&[2.0], &[3.0], 0.0)).unwrap();
        assert_eq!((y[0], mu[0]), (3.0, -2.0));
        let j = map_jacobian(&spec, &st(&[2.0], &[3.0], 0.0)).unwrap();
        assert_eq!(j.determinant(), 1.0);
    }

    #[test]
    fn singular_block_is_degenerate() {
        let sys = DynamicSystem::linear(Matrix::zeros(1, 1)).unwrap();
        let spec = MappingSpec::new(MapVariant::Standard, bilinear(1, -1.0));
        let traj = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 0.1, 0.05).unwrap();
        let rep = canonicity_residual(&sys, &spec, &traj).unwrap();
        assert_eq!(rep.det_y[0], 0.0);
        assert_eq!(rep.verdict, Verdict::Degenerate);
    }

    #[test]
    fn unsupported_variant_has_no_criterion() {
        let sys = DynamicSystem::linear(Matrix::zeros(1, 1)).unwrap();
        let traj = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 0.1, 0.05).unwrap();
        let spec = MappingSpec::new(MapVariant::Symplectic, ControllingFunction::zero(1));
        assert!(matches!(canonicity_residual(&sys, &spec, &traj), Err(Error::UnsupportedVariant(_))));
        let signed = MapVariant::Signed { sy: Sign::Plus, smu: Sign::Minus };
        assert!(signed.criterion().is_ok());
    }

    #[test]
    fn missing_second_derivatives_is_reported() {
        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let traj = integrate(&sys, &st(&[1.0], &[1.0], 0.0), 0.1, 0.05).unwrap();
        let cf = ControllingFunction::new(1, |x, l, _| x[0] * l[0]);
        let spec = MappingSpec::new(MapVariant::Standard, cf);
        assert_eq!(
            canonicity_residual(&sys, &spec, &traj).unwrap_err(),
            Error::MissingSecondDerivative("uxlam")
        );
    }

    #[test]
    fn rotation_criterion_along_linear_flow_is_violated() {
        // Along ẋ = x the cross 1-form reduces to −x·dx + λ·dλ = −(x² + λ²) dt.
        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let spec = MappingSpec::new(MapVariant::Cross, rotation_cf());
        let s = st(&[0.5], &[1.5], 0.0);
        let r = criterion_residual_at(&sys, &spec, &s).unwrap();
        assert!((r + 2.5).abs() < 1e-14);
        let traj = integrate(&sys, &s, 0.5, 1e-2).unwrap();
        assert_eq!(canonicity_residual(&sys, &spec, &traj).unwrap().verdict, Verdict::Violated);
    }

    #[test]
    fn inverse_recovers_the_preimage() {
        let spec = MappingSpec::new(MapVariant::Standard, bilinear(2, 0.3));
        let s = st(&[0.4, -1.0], &[1.1, 0.2], 0.0);
        let (y, mu) = apply_map(&spec, &s).unwrap();
        let back = invert_map(&spec, &y, &mu, 0.0, &st(&[0.0, 0.0], &[0.0, 0.0], 0.0)).unwrap();
        assert!((&back.x - &s.x).amax() < 1e-9 && (&back.lam - &s.lam).amax() < 1e-9);
    }

    #[test]
    fn lambda0_on_rotation_field() {
        let sys = DynamicSystem::linear(Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        let cf = bilinear(2, 0.01);
        let x0 = Vector::from_vec(vec![0.7, -0.4]);
        let lam0 = Vector::from_vec(vec![0.0, 1.0]);
        for cross in [false, true] {
            let sol = if cross {
                synthesize_lambda0_cross(&sys, &cf, &x0, &lam0, 0, 0.0)
            } else {
                synthesize_lambda0(&sys, &cf, &x0, &lam0, 0, 0.0)
            }
            .unwrap();
            assert_eq!(sol.status, SolveStatus::Solved);
            let variant = if cross { MapVariant::Cross } else { MapVariant::Standard };
            let mut lam = lam0.clone();
            lam[0] = sol.value;
            let r = criterion_residual_at(&sys, &MappingSpec::new(variant, cf.clone()), &PhaseState::new(x0.clone(), lam, 0.0).unwrap()).unwrap();
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn lambda0_vacuous_and_degenerate_cases() {
        let sys = DynamicSystem::linear(Matrix::from_element(1, 1, 0.5)).unwrap();
        let x0 = Vector::from_element(1, 1.0);
        let lam0 = Vector::from_element(1, 0.3);
        let sol = synthesize_lambda0(&sys, &ControllingFunction::zero(1), &x0, &lam0, 0, 0.0).unwrap();
        assert_eq!(sol.status, SolveStatus::Indeterminate);
        assert_eq!(sol.value, 0.3);

        let a = 0.5;
        let cf = ControllingFunction::new(1, move |x, l, t| (a * t).exp() * l[0] + x[0])
            .with_gradients(|_, _, _| Vector::from_element(1, 1.0), move |_, _, t| Vector::from_element(1, (a * t).exp()))
            .with_time_derivative(move |_, l, t| a * (a * t).exp() * l[0])
            .with_mixed(|_, _, _| Matrix::zeros(1, 1))
            .with_hessians(|_, _, _| Matrix::zeros(1, 1), |_, _, _| Matrix::zeros(1, 1))
            .with_time_gradients(|_, _, _| Vector::zeros(1), move |_, _, t| Vector::from_element(1, a * (a * t).exp()));
        let err = synthesize_lambda0(&sys, &cf, &x0, &lam0, 0, 0.0).unwrap_err();
        assert!(matches!(err, Error::DegeneratePivot { k: 0, .. }));
        assert!(err.to_string().contains("choose another k"));
    }

    #[test]
    fn lambda0_double_root_of_rotation_criterion() {
        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let sol = synthesize_lambda0_cross(&sys, &rotation_cf(), &Vector::zeros(1), &Vector::from_element(1, 0.8), 0, 0.0).unwrap();
        assert!(sol.residual < 1e-10);
        assert!(sol.value.abs() < 1e-5);
    }

    #[test]
    fn transition_matrix_construction_scalar() {
        let a = 0.6;
        let sys = DynamicSystem::linear(Matrix::from_element(1, 1, a)).unwrap();
        let traj = integrate(&sys, &st(&[1.0], &[0.5], 0.0), 1.0, 1e-3).unwrap();
        let out = synthesize_ulam(&sys, &traj, &Vector::from_element(1, 2.0), |_, _| 0.0).unwrap();
        for s in traj.samples.iter().step_by(100) {
            let ul = out.cf.grad_lam(s);
            assert!((ul[0] - 2.0 * (a * s.t).exp()).abs() < 1e-10);
        }
        assert!(out.generator_defect < 1e-7);
        let rep = canonicity_residual(&sys, &MappingSpec::new(MapVariant::Standard, out.cf.clone()), &traj).unwrap();
        assert_eq!(rep.verdict, Verdict::Canonical);
        assert!(rep.max_residual < 1e-8);
    }
}
