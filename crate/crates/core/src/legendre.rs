//! Legendre generators and their conjugate calculus.
//!
//! Every generator exposes the primal value and gradient, the conjugate value,
//! gradient and Hessian, and domain predicates. Separable kinds act
//! coordinatewise through a scalar generator; the quadratic kind keeps a
//! Cholesky factor of its matrix.
//!
//! `eval` and `conj_eval` return `f64::INFINITY` outside the respective domains.
//! Interior checks are strict and carry no tolerance; callers that need slack
//! should go through [`Legendre::clamp_interior`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Floor used by [`Legendre::clamp_interior`] for open lower bounds.
pub const CLAMP_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub enum LegendreKind {
    BoltzmannShannon,
    Burg,
    FermiDirac,
    Hellinger,
    /// Positive power generator, `0 < beta < 1`.
    Power { beta: f64 },
    /// Tsallis entropy, `0 < q < 1`.
    Tsallis { q: f64 },
    /// `|t|^p / p` with `1 < p <= 2`.
    PNorm { p: f64 },
    /// `½⟨Bx, x⟩` with `B` symmetric positive definite.
    Quadratic { b: DMatrix<f64> },
}

impl LegendreKind {
    pub fn name(&self) -> &'static str {
        match self {
            LegendreKind::BoltzmannShannon => "boltzmann_shannon",
            LegendreKind::Burg => "burg",
            LegendreKind::FermiDirac => "fermi_dirac",
            LegendreKind::Hellinger => "hellinger",
            LegendreKind::Power { .. } => "power",
            LegendreKind::Tsallis { .. } => "tsallis",
            LegendreKind::PNorm { .. } => "p_norm",
            LegendreKind::Quadratic { .. } => "quadratic",
        }
    }
}

/// Hessian of the conjugate (or of the generator itself).
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Diagonal(d) => d.len(),
            Hessian::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Diagonal(d) => DMatrix::from_diagonal(d),
            Hessian::Dense(m) => m.clone(),
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::Diagonal(d) => d.component_mul(v),
            Hessian::Dense(m) => m * v,
        }
    }

    /// `A H Aᵀ`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Hessian::Diagonal(d) => {
                let mut scaled = a.clone();
                for (j, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= d[j];
                }
                scaled * a.transpose()
            }
            Hessian::Dense(m) => a * m * a.transpose(),
        }
    }

    /// Symmetric PSD square root; negative eigenvalues (roundoff) are clamped to zero.
    pub fn sqrt(&self) -> DMatrix<f64> {
        match self {
            Hessian::Diagonal(d) => DMatrix::from_diagonal(&d.map(|v| v.max(0.0).sqrt())),
            Hessian::Dense(m) => linalg::psd_sqrt(m),
        }
    }
}

/// Scalar generator behind the separable kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Scalar {
    Bs,
    Burg,
    Fd,
    Hellinger,
    Power(f64),
    Tsallis(f64),
    PNorm(f64),
}

fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// `(1+r)ln(1+r) - r` without cancellation near zero.
pub(crate) fn one_plus_r_log_minus_r(r: f64) -> f64 {
    if r.abs() < 0.1 {
        let mut sum = 0.0;
        let mut pow = r * r;
        for k in 2..60 {
            let kf = k as f64;
            let term = pow / (kf * (kf - 1.0));
            sum += if k % 2 == 0 { term } else { -term };
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            pow *= r;
        }
        sum
    } else {
        (1.0 + r) * r.ln_1p() - r
    }
}

/// `s - ln(1+s)` without cancellation near zero.
fn s_minus_log1p(s: f64) -> f64 {
    if s.abs() < 0.1 {
        let mut sum = 0.0;
        let mut pow = s * s;
        for k in 2..60 {
            let term = pow / k as f64;
            sum += if k % 2 == 0 { term } else { -term };
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            pow *= s;
        }
        sum
    } else {
        s - s.ln_1p()
    }
}

/// `e^d - 1 - d` without cancellation near zero.
fn expm1_minus(d: f64) -> f64 {
    if d.abs() < 0.1 {
        let mut sum = 0.0;
        let mut term = d;
        for k in 2..40 {
            term *= d / k as f64;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        d.exp_m1() - d
    }
}

fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

impl Scalar {
    pub(crate) fn in_dom(self, t: f64) -> bool {
        match self {
            Scalar::Bs | Scalar::Power(_) | Scalar::Tsallis(_) => t >= 0.0,
            Scalar::Burg => t > 0.0,
            Scalar::Fd => (0.0..=1.0).contains(&t),
            Scalar::Hellinger => (-1.0..=1.0).contains(&t),
            Scalar::PNorm(_) => t.is_finite(),
        }
    }

    pub(crate) fn in_int(self, t: f64) -> bool {
        match self {
            Scalar::Bs | Scalar::Burg | Scalar::Power(_) | Scalar::Tsallis(_) => {
                t > 0.0 && t.is_finite()
            }
            Scalar::Fd => t > 0.0 && t < 1.0,
            Scalar::Hellinger => t > -1.0 && t < 1.0,
            Scalar::PNorm(_) => t.is_finite(),
        }
    }

    /// Supremum of the (open) conjugate domain; `+inf` when it is all of R.
    pub(crate) fn conj_upper(self) -> f64 {
        match self {
            Scalar::Burg => 0.0,
            Scalar::Power(beta) => 1.0 / (1.0 - beta),
            Scalar::Tsallis(q) => 1.0 / (1.0 - q),
            _ => f64::INFINITY,
        }
    }

    pub(crate) fn in_conj_dom(self, y: f64) -> bool {
        y.is_finite() && y < self.conj_upper()
    }

    pub(crate) fn phi(self, t: f64) -> f64 {
        if !self.in_dom(t) {
            return f64::INFINITY;
        }
        match self {
            Scalar::Bs => xlogx(t) - t,
            Scalar::Burg => -t.ln(),
            Scalar::Fd => xlogx(t) + xlogx(1.0 - t),
            Scalar::Hellinger => -((1.0 - t) * (1.0 + t)).sqrt(),
            Scalar::Power(b) => (t.powf(b) - b * t + b - 1.0) / (b * (b - 1.0)),
            Scalar::Tsallis(q) => (t.powf(q) - t) / (q - 1.0),
            Scalar::PNorm(p) => t.abs().powf(p) / p,
        }
    }

    pub(crate) fn dphi(self, t: f64) -> f64 {
        match self {
            Scalar::Bs => t.ln(),
            Scalar::Burg => -1.0 / t,
            Scalar::Fd => t.ln() - (-t).ln_1p(),
            Scalar::Hellinger => t / ((1.0 - t) * (1.0 + t)).sqrt(),
            Scalar::Power(b) => (t.powf(b - 1.0) - 1.0) / (b - 1.0),
            Scalar::Tsallis(q) => (q * t.powf(q - 1.0) - 1.0) / (q - 1.0),
            Scalar::PNorm(p) => t.abs().powf(p - 1.0).copysign(t),
        }
    }

    pub(crate) fn d2phi(self, t: f64) -> f64 {
        match self {
            Scalar::Bs => 1.0 / t,
            Scalar::Burg => 1.0 / (t * t),
            Scalar::Fd => 1.0 / (t * (1.0 - t)),
            Scalar::Hellinger => ((1.0 - t) * (1.0 + t)).powf(-1.5),
            Scalar::Power(b) => t.powf(b - 2.0),
            Scalar::Tsallis(q) => q * t.powf(q - 2.0),
            Scalar::PNorm(p) => (p - 1.0) * t.abs().powf(p - 2.0),
        }
    }

    pub(crate) fn conj(self, y: f64) -> f64 {
        if !self.in_conj_dom(y) {
            return f64::INFINITY;
        }
        match self {
            Scalar::Bs => y.exp(),
            Scalar::Burg => -1.0 - (-y).ln(),
            Scalar::Fd => {
                if y > 0.0 {
                    y + (-y).exp().ln_1p()
                } else {
                    y.exp().ln_1p()
                }
            }
            Scalar::Hellinger => 1.0_f64.hypot(y),
            Scalar::Power(b) => {
                let s = 1.0 - (1.0 - b) * y;
                (s.powf(-b / (1.0 - b)) - 1.0) / b
            }
            Scalar::Tsallis(q) => {
                let s = (1.0 - (1.0 - q) * y) / q;
                s.powf(-q / (1.0 - q))
            }
            Scalar::PNorm(p) => {
                let q = p / (p - 1.0);
                y.abs().powf(q) / q
            }
        }
    }

    pub(crate) fn dconj(self, y: f64) -> f64 {
        match self {
            Scalar::Bs => y.exp(),
            Scalar::Burg => -1.0 / y,
            Scalar::Fd => sigmoid(y),
            Scalar::Hellinger => y / 1.0_f64.hypot(y),
            Scalar::Power(b) => (1.0 - (1.0 - b) * y).powf(-1.0 / (1.0 - b)),
            Scalar::Tsallis(q) => ((1.0 - (1.0 - q) * y) / q).powf(-1.0 / (1.0 - q)),
            Scalar::PNorm(p) => {
                let q = p / (p - 1.0);
                y.abs().powf(q - 1.0).copysign(y)
            }
        }
    }

    pub(crate) fn d2conj(self, y: f64) -> f64 {
        match self {
            Scalar::Bs => y.exp(),
            Scalar::Burg => 1.0 / (y * y),
            Scalar::Fd => sigmoid(y) * sigmoid(-y),
            Scalar::Hellinger => 1.0_f64.hypot(y).powi(-3),
            Scalar::Power(b) => (1.0 - (1.0 - b) * y).powf(-(2.0 - b) / (1.0 - b)),
            Scalar::Tsallis(q) => {
                let s = (1.0 - (1.0 - q) * y) / q;
                s.powf(-(2.0 - q) / (1.0 - q)) / q
            }
            Scalar::PNorm(p) => {
                let q = p / (p - 1.0);
                if q == 2.0 {
                    1.0
                } else {
                    (q - 1.0) * y.abs().powf(q - 2.0)
                }
            }
        }
    }

    /// Bregman divergence term for `x ∈ dom`, `y ∈ int dom`.
    pub(crate) fn div(self, x: f64, y: f64) -> f64 {
        match self {
            Scalar::Bs => {
                if x == 0.0 {
                    y
                } else {
                    y * one_plus_r_log_minus_r((x - y) / y)
                }
            }
            Scalar::Burg => s_minus_log1p((x - y) / y),
            Scalar::PNorm(p) if p == 2.0 => 0.5 * (x - y) * (x - y),
            _ => (self.phi(x) - self.phi(y) - (x - y) * self.dphi(y)).max(0.0),
        }
    }

    /// Divergence of the conjugate, `D_{φ*}(u, v)`, for `u, v ∈ dom φ*`.
    pub(crate) fn conj_div(self, u: f64, v: f64) -> f64 {
        match self {
            Scalar::Bs => v.exp() * expm1_minus(u - v),
            _ => (self.conj(u) - self.conj(v) - (u - v) * self.dconj(v)).max(0.0),
        }
    }

    fn gradient_zero(self) -> Option<f64> {
        match self {
            Scalar::Bs | Scalar::Power(_) => Some(1.0),
            Scalar::Burg => None,
            Scalar::Fd => Some(0.5),
            Scalar::Hellinger | Scalar::PNorm(_) => Some(0.0),
            Scalar::Tsallis(q) => Some(q.powf(1.0 / (1.0 - q))),
        }
    }

    fn clamp(self, t: f64) -> f64 {
        let below_one = 1.0 - f64::EPSILON / 2.0;
        match self {
            Scalar::Bs | Scalar::Burg | Scalar::Power(_) | Scalar::Tsallis(_) => t.max(CLAMP_FLOOR),
            Scalar::Fd => t.clamp(CLAMP_FLOOR, below_one),
            Scalar::Hellinger => t.clamp(-below_one, below_one),
            Scalar::PNorm(_) => t,
        }
    }
}

/// A Legendre generator on `R^dim`.
#[derive(Debug, Clone)]
pub struct Legendre {
    kind: LegendreKind,
    dim: usize,
    scalar: Option<Scalar>,
    chol: Option<Cholesky<f64, Dyn>>,
    b_inv: Option<DMatrix<f64>>,
}

impl PartialEq for Legendre {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.dim == other.dim
    }
}

impl Legendre {
    pub fn new(kind: LegendreKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let scalar = match &kind {
            LegendreKind::BoltzmannShannon => Some(Scalar::Bs),
            LegendreKind::Burg => Some(Scalar::Burg),
            LegendreKind::FermiDirac => Some(Scalar::Fd),
            LegendreKind::Hellinger => Some(Scalar::Hellinger),
            LegendreKind::Power { beta } => {
                if !(*beta > 0.0 && *beta < 1.0) {
                    return Err(Error::invalid(format!("power beta must lie in (0,1), got {beta}")));
                }
                Some(Scalar::Power(*beta))
            }
            LegendreKind::Tsallis { q } => {
                if !(*q > 0.0 && *q < 1.0) {
                    return Err(Error::invalid(format!("tsallis q must lie in (0,1), got {q}")));
                }
                Some(Scalar::Tsallis(*q))
            }
            LegendreKind::PNorm { p } => {
                if !(*p > 1.0 && *p <= 2.0) {
                    return Err(Error::invalid(format!("p-norm p must lie in (1,2], got {p}")));
                }
                Some(Scalar::PNorm(*p))
            }
            LegendreKind::Quadratic { .. } => None,
        };
        let (chol, b_inv) = match &kind {
            LegendreKind::Quadratic { b } => {
                if b.nrows() != dim || b.ncols() != dim {
                    return Err(Error::Dimension { expected: dim, got: b.nrows() });
                }
                let asym = (b - b.transpose()).amax();
                if asym > 1e-12 * b.amax().max(1.0) {
                    return Err(Error::invalid("quadratic matrix must be symmetric"));
                }
                let chol = Cholesky::new(b.clone())
                    .ok_or_else(|| Error::invalid("quadratic matrix must be positive definite"))?;
                let inv = chol.inverse();
                (Some(chol), Some(inv))
            }
            _ => (None, None),
        };
        Ok(Legendre { kind, dim, scalar, chol, b_inv })
    }

    pub fn boltzmann_shannon(dim: usize) -> Self {
        Self::new(LegendreKind::BoltzmannShannon, dim).expect("valid kind")
    }

    pub fn burg(dim: usize) -> Self {
        Self::new(LegendreKind::Burg, dim).expect("valid kind")
    }

    pub fn fermi_dirac(dim: usize) -> Self {
        Self::new(LegendreKind::FermiDirac, dim).expect("valid kind")
    }

    pub fn hellinger(dim: usize) -> Self {
        Self::new(LegendreKind::Hellinger, dim).expect("valid kind")
    }

    pub fn power(beta: f64, dim: usize) -> Result<Self> {
        Self::new(LegendreKind::Power { beta }, dim)
    }

    pub fn tsallis(q: f64, dim: usize) -> Result<Self> {
        Self::new(LegendreKind::Tsallis { q }, dim)
    }

    pub fn p_norm(p: f64, dim: usize) -> Result<Self> {
        Self::new(LegendreKind::PNorm { p }, dim)
    }

    pub fn quadratic(b: DMatrix<f64>) -> Result<Self> {
        let dim = b.nrows();
        Self::new(LegendreKind::Quadratic { b }, dim)
    }

    /// `½‖x‖²`.
    pub fn euclidean(dim: usize) -> Self {
        Self::quadratic(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn kind(&self) -> &LegendreKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn is_separable(&self) -> bool {
        self.scalar.is_some()
    }

    pub fn is_boltzmann_shannon(&self) -> bool {
        matches!(self.kind, LegendreKind::BoltzmannShannon)
    }

    pub(crate) fn scalar(&self) -> Option<Scalar> {
        self.scalar
    }

    /// Inverse of the quadratic matrix, when the kind is quadratic.
    pub fn quadratic_inverse(&self) -> Option<&DMatrix<f64>> {
        self.b_inv.as_ref()
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim
            && match self.scalar {
                Some(s) => x.iter().all(|&t| s.in_dom(t)),
                None => x.iter().all(|t| t.is_finite()),
            }
    }

    pub fn in_interior(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim
            && match self.scalar {
                Some(s) => x.iter().all(|&t| s.in_int(t)),
                None => x.iter().all(|t| t.is_finite()),
            }
    }

    /// Membership in `dom φ*`, which is open for every kind.
    pub fn in_conj_domain(&self, y: &DVector<f64>) -> bool {
        y.len() == self.dim
            && match self.scalar {
                Some(s) => y.iter().all(|&t| s.in_conj_dom(t)),
                None => y.iter().all(|t| t.is_finite()),
            }
    }

    /// Clamps `x` into `int(dom φ)` using [`CLAMP_FLOOR`] for open lower bounds.
    pub fn clamp_interior(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.scalar {
            Some(s) => x.map(|t| s.clamp(t)),
            None => x.clone(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        if x.len() != self.dim {
            return f64::INFINITY;
        }
        match self.scalar {
            Some(s) => x.iter().map(|&t| s.phi(t)).sum(),
            None => {
                if !x.iter().all(|t| t.is_finite()) {
                    return f64::INFINITY;
                }
                let b = self.quad_matrix();
                0.5 * x.dot(&(b * x))
            }
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        if !self.in_interior(x) {
            return Err(Error::domain(format!("{}: gradient requires x in int(dom φ)", self.name())));
        }
        Ok(match self.scalar {
            Some(s) => x.map(|t| s.dphi(t)),
            None => self.quad_matrix() * x,
        })
    }

    /// Hessian of φ on the interior (infinite entries where φ is not twice differentiable).
    pub fn hess(&self, x: &DVector<f64>) -> Result<Hessian> {
        self.check_dim(x)?;
        if !self.in_interior(x) {
            return Err(Error::domain(format!("{}: Hessian requires x in int(dom φ)", self.name())));
        }
        Ok(match self.scalar {
            Some(s) => Hessian::Diagonal(x.map(|t| s.d2phi(t))),
            None => Hessian::Dense(self.quad_matrix().clone()),
        })
    }

    pub fn conj_eval(&self, y: &DVector<f64>) -> f64 {
        if y.len() != self.dim {
            return f64::INFINITY;
        }
        match self.scalar {
            Some(s) => y.iter().map(|&t| s.conj(t)).sum(),
            None => {
                if !y.iter().all(|t| t.is_finite()) {
                    return f64::INFINITY;
                }
                let chol = self.chol.as_ref().expect("quadratic kind");
                0.5 * y.dot(&chol.solve(y))
            }
        }
    }

    pub fn conj_grad(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(y)?;
        if !self.in_conj_domain(y) {
            return Err(Error::domain(format!("{}: y outside dom φ*", self.name())));
        }
        Ok(match self.scalar {
            Some(s) => y.map(|t| s.dconj(t)),
            None => self.chol.as_ref().expect("quadratic kind").solve(y),
        })
    }

    pub fn conj_hess(&self, y: &DVector<f64>) -> Result<Hessian> {
        self.check_dim(y)?;
        if !self.in_conj_domain(y) {
            return Err(Error::domain(format!("{}: y outside dom φ*", self.name())));
        }
        Ok(match self.scalar {
            Some(s) => Hessian::Diagonal(y.map(|t| s.d2conj(t))),
            None => Hessian::Dense(self.b_inv.clone().expect("quadratic kind")),
        })
    }

    /// A point with `∇φ(x0) = 0`, when one exists (Burg has none).
    pub fn gradient_zero_point(&self) -> Result<DVector<f64>> {
        match self.scalar {
            Some(s) => s
                .gradient_zero()
                .map(|t| DVector::from_element(self.dim, t))
                .ok_or_else(|| Error::domain(format!("{}: ∇φ never vanishes", self.name()))),
            None => Ok(DVector::zeros(self.dim)),
        }
    }

    pub(crate) fn quad_matrix(&self) -> &DMatrix<f64> {
        match &self.kind {
            LegendreKind::Quadratic { b } => b,
            _ => unreachable!("quadratic kind only"),
        }
    }

    pub(crate) fn cholesky(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.chol.as_ref()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
struct LegendreParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    b: Option<Vec<Vec<f64>>>,
}

/// JSON form: `{"kind": ..., "params": {...}, "dim": n}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LegendreSpec {
    kind: String,
    #[serde(default)]
    params: LegendreParams,
    /// May be omitted when the dimension is implied elsewhere (see [`LegendreSpec::build`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl LegendreSpec {
    /// Builds the generator, using `fallback_dim` when `dim` is absent
    /// (a quadratic `B` also fixes the dimension).
    pub fn build(mut self, fallback_dim: usize) -> Result<Legendre> {
        if self.dim.is_none() {
            self.dim = Some(self.params.b.as_ref().map_or(fallback_dim, Vec::len));
        }
        Legendre::try_from(self)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }
}

impl TryFrom<LegendreSpec> for Legendre {
    type Error = Error;

    fn try_from(spec: LegendreSpec) -> Result<Self> {
        let dim = spec.dim.ok_or_else(|| Error::invalid("Legendre spec needs 'dim'"))?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::invalid(format!("{} requires parameter '{name}'", spec.kind)))
        };
        let kind = match spec.kind.as_str() {
            "boltzmann_shannon" => LegendreKind::BoltzmannShannon,
            "burg" => LegendreKind::Burg,
            "fermi_dirac" => LegendreKind::FermiDirac,
            "hellinger" => LegendreKind::Hellinger,
            "power" => LegendreKind::Power { beta: need(spec.params.beta, "beta")? },
            "tsallis" => LegendreKind::Tsallis { q: need(spec.params.q, "q")? },
            "p_norm" => LegendreKind::PNorm { p: need(spec.params.p, "p")? },
            "quadratic" => {
                let b = match &spec.params.b {
                    Some(rows) => linalg::matrix_from_rows(rows)?,
                    None => DMatrix::identity(dim, dim),
                };
                LegendreKind::Quadratic { b }
            }
            other => return Err(Error::invalid(format!("unknown Legendre kind '{other}'"))),
        };
        Legendre::new(kind, dim)
    }
}

impl From<&Legendre> for LegendreSpec {
    fn from(f: &Legendre) -> Self {
        let mut params = LegendreParams::default();
        match &f.kind {
            LegendreKind::Power { beta } => params.beta = Some(*beta),
            LegendreKind::Tsallis { q } => params.q = Some(*q),
            LegendreKind::PNorm { p } => params.p = Some(*p),
            LegendreKind::Quadratic { b } => params.b = Some(linalg::matrix_to_rows(b)),
            _ => {}
        }
        LegendreSpec { kind: f.name().to_string(), params, dim: Some(f.dim) }
    }
}

impl Serialize for Legendre {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LegendreSpec::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Legendre {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = LegendreSpec::deserialize(d)?;
        Legendre::try_from(spec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn all_kinds(dim: usize) -> Vec<Legendre> {
        vec![
            Legendre::boltzmann_shannon(dim),
            Legendre::burg(dim),
            Legendre::fermi_dirac(dim),
            Legendre::hellinger(dim),
            Legendre::power(0.5, dim).unwrap(),
            Legendre::tsallis(0.3, dim).unwrap(),
            Legendre::p_norm(1.5, dim).unwrap(),
            Legendre::quadratic(DMatrix::from_fn(dim, dim, |i, j| {
                if i == j {
                    2.0 + i as f64
                } else {
                    0.3
                }
            }))
            .unwrap(),
        ]
    }

    /// Maps u in (0,1) into the interior of each kind's domain.
    fn interior_point(f: &Legendre, u: f64) -> f64 {
        match f.kind() {
            LegendreKind::FermiDirac => u,
            LegendreKind::Hellinger => 2.0 * u - 1.0,
            LegendreKind::PNorm { .. } | LegendreKind::Quadratic { .. } => 6.0 * u - 3.0,
            _ => 0.01 + 5.0 * u,
        }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(Legendre::boltzmann_shannon(2).eval(&v(&[1.0, 1.0])), -2.0);
        assert_eq!(Legendre::euclidean(2).eval(&v(&[3.0, 4.0])), 12.5);
        assert_eq!(Legendre::burg(2).eval(&v(&[1.0, -1.0])), f64::INFINITY);
        // boundary points evaluate finitely under 0·log 0 = 0
        assert_eq!(Legendre::boltzmann_shannon(2).eval(&v(&[0.0, 1.0])), -1.0);
        assert_eq!(Legendre::fermi_dirac(1).eval(&v(&[1.0])), 0.0);
    }

    #[test]
    fn grad_examples() {
        assert_eq!(Legendre::boltzmann_shannon(2).grad(&v(&[1.0, 1.0])).unwrap(), v(&[0.0, 0.0]));
        let q = Legendre::quadratic(DMatrix::from_diagonal(&v(&[2.0, 3.0]))).unwrap();
        assert_eq!(q.grad(&v(&[1.0, 1.0])).unwrap(), v(&[2.0, 3.0]));
        let p = Legendre::p_norm(1.5, 1).unwrap();
        let g = p.grad(&v(&[4.0])).unwrap()[0];
        assert_relative_eq!(g, 2.0, max_relative = 1e-14);
        // finite-difference check of eval
        let h = 1e-6;
        let fd = (p.eval(&v(&[4.0 + h])) - p.eval(&v(&[4.0 - h]))) / (2.0 * h);
        assert_relative_eq!(fd, 2.0, max_relative = 1e-8);
    }

    #[test]
    fn grad_rejects_boundary() {
        let f = Legendre::boltzmann_shannon(2);
        assert!(matches!(f.grad(&v(&[0.0, 1.0])), Err(Error::Domain(_))));
        assert!(matches!(Legendre::burg(1).conj_grad(&v(&[0.0])), Err(Error::Domain(_))));
        let pw = Legendre::power(0.5, 1).unwrap();
        assert!(pw.conj_grad(&v(&[2.0])).is_err());
        assert!(pw.conj_grad(&v(&[1.999])).is_ok());
        assert_eq!(pw.conj_eval(&v(&[2.5])), f64::INFINITY);
    }

    #[test]
    fn conj_examples() {
        let f = Legendre::boltzmann_shannon(2);
        assert_eq!(f.conj_grad(&v(&[0.0, 0.0])).unwrap(), v(&[1.0, 1.0]));
        assert_eq!(Legendre::euclidean(2).conj_eval(&v(&[1.0, 0.0])), 0.5);
        let p = Legendre::p_norm(1.5, 1).unwrap();
        assert_relative_eq!(p.conj_eval(&v(&[2.0])), 8.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn conj_eval_matches_numerical_supremum() {
        // golden-section maximization of t*y - φ(t) on a bracket
        let p = Legendre::p_norm(1.5, 1).unwrap();
        let y = 2.0;
        let obj = |t: f64| t * y - p.eval(&v(&[t]));
        let (mut lo, mut hi) = (0.0_f64, 20.0_f64);
        let g = (5.0_f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if obj(a) > obj(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        assert_relative_eq!(obj(0.5 * (lo + hi)), 8.0 / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn conj_hess_examples() {
        let f = Legendre::boltzmann_shannon(2);
        assert_eq!(f.conj_hess(&v(&[0.0, 0.0])).unwrap(), Hessian::Diagonal(v(&[1.0, 1.0])));
        let q = Legendre::quadratic(DMatrix::from_diagonal(&v(&[2.0, 3.0]))).unwrap();
        let h = q.conj_hess(&v(&[7.0, -1.0])).unwrap().to_dense();
        assert_relative_eq!(h[(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(h[(1, 1)], 1.0 / 3.0, max_relative = 1e-14);
        let p = Legendre::p_norm(1.5, 1).unwrap();
        let hp = p.conj_hess(&v(&[2.0])).unwrap().to_dense()[(0, 0)];
        assert_relative_eq!(hp, 4.0, max_relative = 1e-14);
        let step = 1e-5;
        let fd = (p.conj_grad(&v(&[2.0 + step])).unwrap()[0] - p.conj_grad(&v(&[2.0 - step])).unwrap()[0])
            / (2.0 * step);
        assert_relative_eq!(fd, 4.0, max_relative = 1e-6);
    }

    #[test]
    fn hellinger_conjugate_hessian_matches_finite_differences() {
        let f = Legendre::hellinger(1);
        for &y in &[-3.0, -0.4, 0.0, 0.7, 5.0] {
            let h = 1e-5;
            let fd = (f.conj_grad(&v(&[y + h])).unwrap()[0] - f.conj_grad(&v(&[y - h])).unwrap()[0]) / (2.0 * h);
            let exact = f.conj_hess(&v(&[y])).unwrap().to_dense()[(0, 0)];
            assert_relative_eq!(fd, exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn gradient_zero_points() {
        for f in all_kinds(3) {
            match f.gradient_zero_point() {
                Ok(x0) => {
                    let g = f.grad(&x0).unwrap();
                    assert!(g.amax() < 1e-14, "{}: {g}", f.name());
                }
                Err(_) => assert_eq!(f.name(), "burg"),
            }
        }
    }

    #[test]
    fn clamp_lands_in_interior() {
        let x = v(&[0.0, -1.0, 1.0, 2.0]);
        for f in all_kinds(4) {
            let c = f.clamp_interior(&x);
            if f.is_separable() && !matches!(f.kind(), LegendreKind::PNorm { .. }) {
                assert!(f.in_interior(&c), "{}: {c}", f.name());
            }
        }
    }

    #[test]
    fn json_round_trip() {
        for f in all_kinds(2) {
            let s = serde_json::to_string(&f).unwrap();
            let back: Legendre = serde_json::from_str(&s).unwrap();
            assert_eq!(back, f);
        }
        let parsed: Legendre =
            serde_json::from_str(r#"{"kind":"tsallis","params":{"q":0.5},"dim":3}"#).unwrap();
        assert_eq!(parsed.dim(), 3);
        assert!(serde_json::from_str::<Legendre>(r#"{"kind":"tsallis","dim":3}"#).is_err());
        assert!(serde_json::from_str::<Legendre>(r#"{"kind":"power","params":{"beta":1.5},"dim":1}"#).is_err());
    }

    #[test]
    fn rejects_bad_quadratic() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Legendre::quadratic(b).is_err());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Legendre::quadratic(b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_fenchel_young(us in proptest::collection::vec(0.001f64..0.999, 3)) {
            for f in all_kinds(3) {
                let x = DVector::from_iterator(3, us.iter().map(|&u| interior_point(&f, u)));
                let y = f.grad(&x).unwrap();
                let back = f.conj_grad(&y).unwrap();
                prop_assert!((&back - &x).norm() <= 1e-10 * (1.0 + x.norm()), "{}", f.name());
                let lhs = f.eval(&x) + f.conj_eval(&y);
                let rhs = x.dot(&y);
                let scale = 1.0 + f.eval(&x).abs() + f.conj_eval(&y).abs() + rhs.abs();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "{}", f.name());
            }
        }

        #[test]
        fn conj_hessian_is_psd_and_matches_fd(us in proptest::collection::vec(0.01f64..0.99, 2)) {
            for f in all_kinds(2) {
                let x = DVector::from_iterator(2, us.iter().map(|&u| interior_point(&f, u)));
                let y = f.grad(&x).unwrap();
                let h = f.conj_hess(&y).unwrap().to_dense();
                let eig = h.clone().symmetric_eigen();
                prop_assert!(eig.eigenvalues.min() >= -1e-14);
                for j in 0..2 {
                    let step = 1e-6 * (1.0 + y[j].abs());
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[j] += step;
                    ym[j] -= step;
                    let col = (f.conj_grad(&yp).unwrap() - f.conj_grad(&ym).unwrap()) / (2.0 * step);
                    for i in 0..2 {
                        let scale = h.column(j).amax().max(1e-8);
                        prop_assert!((col[i] - h[(i, j)]).abs() <= 1e-5 * scale,
                            "{} ({i},{j}): {} vs {}", f.name(), col[i], h[(i, j)]);
                    }
                }
            }
        }

        #[test]
        fn midpoint_convexity(us in proptest::collection::vec(0.0f64..1.0, 4)) {
            for f in all_kinds(2) {
                let a = DVector::from_iterator(2, us[..2].iter().map(|&u| interior_point(&f, u)));
                let b = DVector::from_iterator(2, us[2..].iter().map(|&u| interior_point(&f, u)));
                let mid = (&a + &b) * 0.5;
                let avg = 0.5 * (f.eval(&a) + f.eval(&b));
                prop_assert!(f.eval(&mid) <= avg + 1e-12 * (1.0 + avg.abs()));
            }
        }
    }
}
