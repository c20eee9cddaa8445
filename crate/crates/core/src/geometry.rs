//! Bregman divergences and Bregman projections onto affine sets and halfspaces.
//!
//! Projections are computed through the Fenchel dual
//! `Ψ(λ) = φ*(∇φ(x) + Aᵀλ) − φ*(∇φ(x)) − ⟨λ, b⟩`, whose minimizer `λ⋆`
//! gives the projection `x⋆ = ∇φ*(∇φ(x) + Aᵀλ⋆)`.
//!
//! * hyperplanes: the dual is one-dimensional and strictly monotone in its
//!   derivative; the root is bracketed inside the admissible multiplier interval
//!   and refined by safeguarded Newton (bisection fallback).
//! * general affine sets: damped Newton on `Ψ` with Hessian `A ∇²φ*(·) Aᵀ`.
//! * closed forms where they exist: quadratic generators, and
//!   Boltzmann-Shannon with constant-valued coefficient rows or OT marginals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre::{one_plus_r_log_minus_r, Legendre, Scalar};
use crate::linalg;
use crate::ot;

const ROUNDING_FLOOR: f64 = 16.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualSolveOptions {
    /// Stop when `‖Ax − b‖∞` falls below this.
    pub residual_tolerance: f64,
    pub max_newton_iterations: usize,
    pub line_search_shrink: f64,
}

impl Default for DualSolveOptions {
    fn default() -> Self {
        DualSolveOptions { residual_tolerance: 1e-10, max_newton_iterations: 100, line_search_shrink: 0.5 }
    }
}

impl DualSolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::invalid("residual_tolerance must be positive"));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::invalid("line_search_shrink must lie in (0,1)"));
        }
        if self.max_newton_iterations == 0 {
            return Err(Error::invalid("max_newton_iterations must be positive"));
        }
        Ok(())
    }
}

/// An affine constraint set `{x : A x = b}`.
#[derive(Debug, Clone, PartialEq)]
pub enum AffineSet {
    Hyperplane { a: DVector<f64>, b: f64 },
    General { a: DMatrix<f64>, b: DVector<f64> },
    /// `{π : marginal(π, axis) = target}` on a row-major flattened tensor.
    OtMarginal { shape: Vec<usize>, axis: usize, target: DVector<f64> },
}

/// `{x : ⟨a, x⟩ ≤ b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceSet {
    pub a: DVector<f64>,
    pub b: f64,
}

/// Any set the solver can project onto.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Affine(AffineSet),
    Halfspace(HalfspaceSet),
}

impl AffineSet {
    pub fn hyperplane(a: DVector<f64>, b: f64) -> Result<Self> {
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroOperator("hyperplane normal is zero".into()));
        }
        Ok(AffineSet::Hyperplane { a, b })
    }

    pub fn general(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension { expected: a.nrows(), got: b.len() });
        }
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroOperator("constraint operator is zero".into()));
        }
        Ok(AffineSet::General { a, b })
    }

    pub fn ot_marginal(shape: Vec<usize>, axis: usize, target: DVector<f64>) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::invalid(format!("axis {axis} out of range for {}-way tensor", shape.len())));
        }
        if target.len() != shape[axis] {
            return Err(Error::Dimension { expected: shape[axis], got: target.len() });
        }
        ot::check_simplex(&target)?;
        Ok(AffineSet::OtMarginal { shape, axis, target })
    }

    /// Ambient dimension (`None` for a hyperplane/general set is impossible; always known).
    pub fn ambient_dim(&self) -> usize {
        match self {
            AffineSet::Hyperplane { a, .. } => a.len(),
            AffineSet::General { a, .. } => a.ncols(),
            AffineSet::OtMarginal { shape, .. } => shape.iter().product(),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            AffineSet::Hyperplane { .. } => 1,
            AffineSet::General { a, .. } => a.nrows(),
            AffineSet::OtMarginal { target, .. } => target.len(),
        }
    }

    /// Dense `(A, b)` representation.
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            AffineSet::Hyperplane { a, b } => (DMatrix::from_row_slice(1, a.len(), a.as_slice()), DVector::from_element(1, *b)),
            AffineSet::General { a, b } => (a.clone(), b.clone()),
            AffineSet::OtMarginal { shape, axis, target } => (ot::marginal_operator(shape, *axis), target.clone()),
        }
    }

    /// `A x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            AffineSet::Hyperplane { a, .. } => DVector::from_element(1, a.dot(x)),
            AffineSet::General { a, .. } => a * x,
            AffineSet::OtMarginal { shape, axis, .. } => ot::marginal_flat(shape, *axis, x.as_slice()),
        }
    }

    pub fn rhs(&self) -> DVector<f64> {
        match self {
            AffineSet::Hyperplane { b, .. } => DVector::from_element(1, *b),
            AffineSet::General { b, .. } => b.clone(),
            AffineSet::OtMarginal { target, .. } => target.clone(),
        }
    }

    /// `‖A x − b‖∞`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (self.apply(x) - self.rhs()).amax()
    }

    pub fn project(&self, f: &Legendre, x: &DVector<f64>, opts: &DualSolveOptions) -> Result<DVector<f64>> {
        check_ambient(f, x, self.ambient_dim())?;
        match self {
            AffineSet::Hyperplane { a, b } => project_hyperplane(f, a, *b, x, opts).map(|p| p.0),
            AffineSet::General { a, b } => project_affine(f, a, b, x, opts).map(|p| p.0),
            AffineSet::OtMarginal { shape, axis, target } if f.is_boltzmann_shannon() => {
                if !f.in_interior(x) {
                    return Err(Error::domain("projection requires x in int(dom φ)"));
                }
                ot::kl_project_flat(shape, *axis, target, x)
            }
            AffineSet::OtMarginal { .. } => {
                let (a, b) = self.dense();
                project_affine(f, &a, &b, x, opts).map(|p| p.0)
            }
        }
    }

    /// Bregman distance `D_C(x)`, using closed forms when available.
    /// Returns the projection too whenever it had to be computed.
    pub(crate) fn distance_with_projection(
        &self,
        f: &Legendre,
        x: &DVector<f64>,
        opts: &DualSolveOptions,
    ) -> Result<(f64, Option<DVector<f64>>)> {
        check_ambient(f, x, self.ambient_dim())?;
        if !f.in_interior(x) {
            return Err(Error::domain("distance requires x in int(dom φ)"));
        }
        match self {
            AffineSet::OtMarginal { shape, axis, target } if f.is_boltzmann_shannon() => {
                let marg = ot::marginal_flat(shape, *axis, x.as_slice());
                Ok((ot::generalized_kl(target, &marg), None))
            }
            AffineSet::Hyperplane { a, b } if f.is_boltzmann_shannon() => {
                if (a.dot(x) - b).abs() <= opts.residual_tolerance {
                    return Ok((0.0, Some(x.clone())));
                }
                match constant_support_value(a) {
                    Some(c) => {
                        let mass: f64 = a.iter().zip(x.iter()).filter(|(&aj, _)| aj != 0.0).map(|(_, &xj)| xj).sum();
                        let factor = b / (c * mass);
                        if !(factor > 0.0) {
                            return Err(Error::Bracket { residual: a.dot(x) - b });
                        }
                        Ok((mass * one_plus_r_log_minus_r(factor - 1.0), None))
                    }
                    None => {
                        let p = self.project(f, x, opts)?;
                        Ok((divergence(f, &p, x), Some(p)))
                    }
                }
            }
            _ => {
                let p = self.project(f, x, opts)?;
                Ok((divergence(f, &p, x), Some(p)))
            }
        }
    }
}

impl HalfspaceSet {
    pub fn new(a: DVector<f64>, b: f64) -> Result<Self> {
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroOperator("halfspace normal is zero".into()));
        }
        Ok(HalfspaceSet { a, b })
    }

    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (self.a.dot(x) - self.b).max(0.0)
    }
}

impl ConstraintSet {
    pub fn ambient_dim(&self) -> usize {
        match self {
            ConstraintSet::Affine(s) => s.ambient_dim(),
            ConstraintSet::Halfspace(h) => h.a.len(),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, ConstraintSet::Affine(_))
    }

    pub fn as_affine(&self) -> Option<&AffineSet> {
        match self {
            ConstraintSet::Affine(s) => Some(s),
            ConstraintSet::Halfspace(_) => None,
        }
    }

    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConstraintSet::Affine(s) => s.residual(x),
            ConstraintSet::Halfspace(h) => h.residual(x),
        }
    }

    pub fn project(&self, f: &Legendre, x: &DVector<f64>, opts: &DualSolveOptions) -> Result<DVector<f64>> {
        match self {
            ConstraintSet::Affine(s) => s.project(f, x, opts),
            ConstraintSet::Halfspace(h) => project_halfspace(f, &h.a, h.b, x, opts),
        }
    }

    pub(crate) fn distance_with_projection(
        &self,
        f: &Legendre,
        x: &DVector<f64>,
        opts: &DualSolveOptions,
    ) -> Result<(f64, Option<DVector<f64>>)> {
        match self {
            ConstraintSet::Affine(s) => s.distance_with_projection(f, x, opts),
            ConstraintSet::Halfspace(h) => {
                let p = project_halfspace(f, &h.a, h.b, x, opts)?;
                Ok((divergence(f, &p, x), Some(p)))
            }
        }
    }
}

impl From<AffineSet> for ConstraintSet {
    fn from(s: AffineSet) -> Self {
        ConstraintSet::Affine(s)
    }
}

impl From<HalfspaceSet> for ConstraintSet {
    fn from(h: HalfspaceSet) -> Self {
        ConstraintSet::Halfspace(h)
    }
}

fn check_ambient(f: &Legendre, x: &DVector<f64>, n: usize) -> Result<()> {
    if f.dim() != n {
        return Err(Error::Dimension { expected: n, got: f.dim() });
    }
    if x.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len() });
    }
    Ok(())
}

/// `D_φ(x, y)`; `+∞` when `y ∉ int(dom φ)` or `x ∉ dom φ`.
pub fn divergence(f: &Legendre, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    if x.len() != f.dim() || y.len() != f.dim() || !f.in_interior(y) || !f.in_domain(x) {
        return f64::INFINITY;
    }
    match f.scalar() {
        Some(s) => x.iter().zip(y.iter()).map(|(&xi, &yi)| s.div(xi, yi)).sum(),
        None => {
            let d = x - y;
            0.5 * d.dot(&(f.quad_matrix() * &d))
        }
    }
}

/// `D_{φ*}(u, v)`; `+∞` outside `dom φ*`.
pub fn conj_divergence(f: &Legendre, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    if !f.in_conj_domain(u) || !f.in_conj_domain(v) {
        return f64::INFINITY;
    }
    match f.scalar() {
        Some(s) => u.iter().zip(v.iter()).map(|(&ui, &vi)| s.conj_div(ui, vi)).sum(),
        None => {
            let d = u - v;
            let chol = f.cholesky().expect("quadratic kind");
            0.5 * d.dot(&chol.solve(&d))
        }
    }
}

/// `Ψ^x_C(λ)`; `+∞` when `∇φ(x) + Aᵀλ ∉ dom φ*`.
///
/// Evaluated as `D_{φ*}(∇φ(x) + Aᵀλ, ∇φ(x)) + ⟨λ, Ax − b⟩`, which equals the
/// defining expression and avoids cancellation near the minimizer.
pub fn dual_objective(
    f: &Legendre,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<f64> {
    check_ambient(f, x, a.ncols())?;
    if lambda.len() != a.nrows() || b.len() != a.nrows() {
        return Err(Error::Dimension { expected: a.nrows(), got: lambda.len() });
    }
    let y = f.grad(x)?;
    let z = &y + a.transpose() * lambda;
    let r0 = a * x - b;
    Ok(conj_divergence(f, &z, &y) + lambda.dot(&r0))
}

/// `∇Ψ^x_C(λ) = A ∇φ*(∇φ(x) + Aᵀλ) − b`.
pub fn dual_gradient(
    f: &Legendre,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    let y = f.grad(x)?;
    let z = &y + a.transpose() * lambda;
    Ok(a * f.conj_grad(&z)? - b)
}

/// Returns `c` when every nonzero entry of `a` equals `c`.
fn constant_support_value(a: &DVector<f64>) -> Option<f64> {
    let mut value = None;
    for &v in a.iter().filter(|&&v| v != 0.0) {
        match value {
            None => value = Some(v),
            Some(c) if c == v => {}
            Some(_) => return None,
        }
    }
    value
}

/// Bregman projection onto `{z : ⟨a, z⟩ = b}`. Returns `(x⋆, λ⋆)`.
pub fn project_hyperplane(
    f: &Legendre,
    a: &DVector<f64>,
    b: f64,
    x: &DVector<f64>,
    opts: &DualSolveOptions,
) -> Result<(DVector<f64>, f64)> {
    opts.validate()?;
    check_ambient(f, x, a.len())?;
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroOperator("hyperplane normal is zero".into()));
    }
    if !f.in_interior(x) {
        return Err(Error::domain("projection requires x in int(dom φ)"));
    }
    let r0 = a.dot(x) - b;
    if r0.abs() <= opts.residual_tolerance {
        return Ok((x.clone(), 0.0));
    }

    let Some(scalar) = f.scalar() else {
        // quadratic: λ = −r0 / ⟨a, B⁻¹a⟩, x⋆ = x + λ B⁻¹a
        let w = f.cholesky().expect("quadratic kind").solve(a);
        let lambda = -r0 / a.dot(&w);
        return Ok((x + &w * lambda, lambda));
    };

    if f.is_boltzmann_shannon() {
        if let Some(c) = constant_support_value(a) {
            let mass: f64 = a.iter().zip(x.iter()).filter(|(&aj, _)| aj != 0.0).map(|(_, &xj)| xj).sum();
            let factor = b / (c * mass);
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Error::Bracket { residual: r0 });
            }
            let projected = DVector::from_iterator(
                x.len(),
                a.iter().zip(x.iter()).map(|(&aj, &xj)| if aj != 0.0 { xj * factor } else { xj }),
            );
            return Ok((projected, factor.ln() / c));
        }
    }

    let y = f.grad(x)?;
    let lambda = hyperplane_root(scalar, a, b, &y, r0, opts)?;
    let z = &y + a * lambda;
    Ok((f.conj_grad(&z)?, lambda))
}

/// Solves `⟨a, ∇φ*(y + λa)⟩ = b` for a separable generator.
fn hyperplane_root(
    s: Scalar,
    a: &DVector<f64>,
    b: f64,
    y: &DVector<f64>,
    r0: f64,
    opts: &DualSolveOptions,
) -> Result<f64> {
    let support: Vec<(f64, f64)> = a.iter().zip(y.iter()).filter(|(&aj, _)| aj != 0.0).map(|(&aj, &yj)| (aj, yj)).collect();
    let g = |lam: f64| -> f64 { support.iter().map(|&(aj, yj)| aj * s.dconj(yj + lam * aj)).sum::<f64>() - b };
    let dg = |lam: f64| -> f64 { support.iter().map(|&(aj, yj)| aj * aj * s.d2conj(yj + lam * aj)).sum() };

    // admissible multipliers keep y + λa inside the open conjugate domain
    let ub = s.conj_upper();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    if ub.is_finite() {
        for &(aj, yj) in &support {
            let edge = (ub - yj) / aj;
            if aj > 0.0 {
                hi = hi.min(edge);
            } else {
                lo = lo.max(edge);
            }
        }
    }
    let dir = if r0 > 0.0 { -1.0 } else { 1.0 };
    let limit = if dir < 0.0 { -lo } else { hi };

    let mut t_in = 0.0_f64;
    let mut t_out = None;
    let slope0 = dg(0.0);
    let mut t = if slope0 > 0.0 && slope0.is_finite() { r0.abs() / slope0 } else { 1.0 };
    if !(t > 0.0 && t.is_finite()) {
        t = 1.0;
    }
    if t >= limit {
        t = 0.5 * limit;
    }
    for _ in 0..400 {
        let val = g(dir * t);
        if val.is_nan() {
            t = 0.5 * (t_in + t);
            continue;
        }
        if val == 0.0 || val.signum() != r0.signum() {
            t_out = Some(t);
            break;
        }
        t_in = t;
        t = if limit.is_finite() { (2.0 * t).min(0.5 * (t + limit)) } else { 2.0 * t };
        if t == t_in {
            break;
        }
    }
    let Some(t_out) = t_out else {
        return Err(Error::Bracket { residual: r0 });
    };

    // g is increasing: keep g(lo_b) < 0 < g(hi_b)
    let (mut lo_b, mut hi_b) = if dir > 0.0 { (t_in, t_out) } else { (-t_out, -t_in) };
    let mut lam = if dir > 0.0 { hi_b } else { lo_b };
    // residuals below the rounding level of evaluating ⟨a, x⟩ − b count as zero
    let tol_at = |lam: f64| -> f64 {
        let scale = b.abs() + support.iter().map(|&(aj, yj)| (aj * s.dconj(yj + lam * aj)).abs()).sum::<f64>();
        opts.residual_tolerance.max(ROUNDING_FLOOR * scale)
    };
    for _ in 0..opts.max_newton_iterations {
        let val = g(lam);
        if val.abs() <= tol_at(lam) {
            // one polishing Newton step when it helps
            let d = dg(lam);
            if d > 0.0 {
                let cand = lam - val / d;
                if cand > lo_b && cand < hi_b && g(cand).abs() < val.abs() {
                    return Ok(cand);
                }
            }
            return Ok(lam);
        }
        if val < 0.0 {
            lo_b = lam;
        } else {
            hi_b = lam;
        }
        let d = dg(lam);
        let newton = lam - val / d;
        lam = if d > 0.0 && newton > lo_b && newton < hi_b { newton } else { 0.5 * (lo_b + hi_b) };
        if hi_b - lo_b <= 4.0 * f64::EPSILON * lo_b.abs().max(hi_b.abs()) {
            // the multiplier is resolved to machine precision
            return Ok(lam);
        }
    }
    let val = g(lam);
    if val.abs() <= tol_at(lam) {
        return Ok(lam);
    }
    Err(Error::NonConvergence { iterations: opts.max_newton_iterations, residual: val.abs() })
}

/// Bregman projection onto `{z : A z = b}` by damped Newton on the dual. Returns `(x⋆, λ⋆)`.
pub fn project_affine(
    f: &Legendre,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    opts: &DualSolveOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    opts.validate()?;
    check_ambient(f, x, a.ncols())?;
    if b.len() != a.nrows() {
        return Err(Error::Dimension { expected: a.nrows(), got: b.len() });
    }
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroOperator("constraint operator is zero".into()));
    }
    if !f.in_interior(x) {
        return Err(Error::domain("projection requires x in int(dom φ)"));
    }
    let m = a.nrows();
    let r0 = a * x - b;
    if r0.amax() <= opts.residual_tolerance {
        return Ok((x.clone(), DVector::zeros(m)));
    }
    if m == 1 {
        let row = a.row(0).transpose();
        let (p, lam) = project_hyperplane(f, &row, b[0], x, opts)?;
        return Ok((p, DVector::from_element(1, lam)));
    }

    let y = f.grad(x)?;
    let at = a.transpose();
    let mut lambda = DVector::zeros(m);
    let mut z = y.clone();
    let mut psi = 0.0_f64;
    let mut grad = r0.clone();
    for _ in 0..opts.max_newton_iterations {
        let hess = f.conj_hess(&z)?;
        let system = hess.congruence(a);
        let step = linalg::solve_psd(&system, &(-&grad)).ok_or(Error::StepUnderflow)?;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &lambda + &step * t;
            let zc = &y + &at * &cand;
            let psi_c = conj_divergence(f, &zc, &y) + cand.dot(&r0);
            let noise = 64.0 * f64::EPSILON * (psi.abs() + cand.dot(&r0).abs() + 1.0);
            if psi_c.is_finite() && psi_c <= psi + 1e-4 * t * slope.min(0.0) + noise {
                lambda = cand;
                z = zc;
                psi = psi_c;
                break;
            }
            t *= opts.line_search_shrink;
            if t < 1e-20 {
                return Err(Error::StepUnderflow);
            }
        }
        let xz = f.conj_grad(&z)?;
        grad = a * &xz - b;
        let floor = ROUNDING_FLOOR * (a.abs() * xz.abs() + b.abs()).amax();
        if grad.amax() <= opts.residual_tolerance.max(floor) {
            return Ok((xz, lambda));
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_newton_iterations, residual: grad.amax() })
}

/// Bregman projection onto `{z : ⟨a, z⟩ ≤ b}`.
pub fn project_halfspace(
    f: &Legendre,
    a: &DVector<f64>,
    b: f64,
    x: &DVector<f64>,
    opts: &DualSolveOptions,
) -> Result<DVector<f64>> {
    check_ambient(f, x, a.len())?;
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroOperator("halfspace normal is zero".into()));
    }
    if !f.in_interior(x) {
        return Err(Error::domain("projection requires x in int(dom φ)"));
    }
    if a.dot(x) <= b {
        return Ok(x.clone());
    }
    project_hyperplane(f, a, b, x, opts).map(|p| p.0)
}

/// `D_C(x) = min_{z∈C} D_φ(z, x)` and the minimizer.
pub fn distance_to_set(
    f: &Legendre,
    set: &ConstraintSet,
    x: &DVector<f64>,
    opts: &DualSolveOptions,
) -> Result<(f64, DVector<f64>)> {
    let p = set.project(f, x, opts)?;
    Ok((divergence(f, &p, x), p))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SetRepr {
    Hyperplane {
        a: Vec<f64>,
        b: f64,
    },
    General {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    OtMarginal {
        shape: Vec<usize>,
        axis: usize,
        target: Vec<f64>,
    },
    Halfspace {
        a: Vec<f64>,
        b: f64,
    },
}

impl TryFrom<SetRepr> for ConstraintSet {
    type Error = Error;

    fn try_from(r: SetRepr) -> Result<Self> {
        Ok(match r {
            SetRepr::Hyperplane { a, b } => AffineSet::hyperplane(DVector::from_vec(a), b)?.into(),
            SetRepr::General { a, b } => AffineSet::general(linalg::matrix_from_rows(&a)?, DVector::from_vec(b))?.into(),
            SetRepr::OtMarginal { shape, axis, target } => {
                AffineSet::ot_marginal(shape, axis, DVector::from_vec(target))?.into()
            }
            SetRepr::Halfspace { a, b } => HalfspaceSet::new(DVector::from_vec(a), b)?.into(),
        })
    }
}

impl From<&ConstraintSet> for SetRepr {
    fn from(s: &ConstraintSet) -> Self {
        match s {
            ConstraintSet::Affine(AffineSet::Hyperplane { a, b }) => SetRepr::Hyperplane { a: a.as_slice().to_vec(), b: *b },
            ConstraintSet::Affine(AffineSet::General { a, b }) => {
                SetRepr::General { a: linalg::matrix_to_rows(a), b: b.as_slice().to_vec() }
            }
            ConstraintSet::Affine(AffineSet::OtMarginal { shape, axis, target }) => {
                SetRepr::OtMarginal { shape: shape.clone(), axis: *axis, target: target.as_slice().to_vec() }
            }
            ConstraintSet::Halfspace(h) => SetRepr::Halfspace { a: h.a.as_slice().to_vec(), b: h.b },
        }
    }
}

impl Serialize for ConstraintSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SetRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConstraintSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ConstraintSet::try_from(SetRepr::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl Serialize for AffineSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SetRepr::from(&ConstraintSet::Affine(self.clone())).serialize(s)
    }
}

impl<'de> Deserialize<'de> for AffineSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ConstraintSet::deserialize(d)? {
            ConstraintSet::Affine(s) => Ok(s),
            ConstraintSet::Halfspace(_) => Err(serde::de::Error::custom("expected an affine set, found a halfspace")),
        }
    }
}
