//! Local rate constants at a solution `x⋆` and the assumption checks behind them.
//!
//! With `H = [∇²φ*(∇φ(x⋆))]^{1/2}` and `Q_i` the orthogonal projector onto
//! `range(H A_iᵀ)`, the local contraction factors are `1 − γ` where
//!
//! * `γ_random = λ_min⁺(Σ μ_i Q_i)`
//! * `γ_greedy = min_{v ∈ V, ‖v‖=1} max_i ‖Q_i v‖²`, `V = range(H Aᵀ)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::check_probability;
use crate::error::{Error, Result};
use crate::geometry::ConstraintSet;
use crate::legendre::Legendre;
use crate::linalg;

/// `[∇²φ*(∇φ(x))]^{1/2}`.
pub fn hessian_root(f: &Legendre, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if x.len() != f.dim() {
        return Err(Error::Dimension { expected: f.dim(), got: x.len() });
    }
    if !f.in_interior(x) {
        return Err(Error::domain("rate constants need x⋆ in int(dom φ)"));
    }
    Ok(f.conj_hess(&f.grad(x)?)?.sqrt())
}

fn projector_from_weighted(g: &DMatrix<f64>) -> DMatrix<f64> {
    // g = A_i H; Q = gᵀ (g gᵀ)^† g
    let q = g.transpose() * linalg::pinv(&(g * g.transpose())) * g;
    (&q + q.transpose()) * 0.5
}

/// Orthogonal projector onto `range(H A_iᵀ)`; zero when `H A_iᵀ = 0`.
pub fn projector_q(f: &Legendre, a_i: &DMatrix<f64>, x_star: &DVector<f64>) -> Result<DMatrix<f64>> {
    let h = hessian_root(f, x_star)?;
    if a_i.ncols() != f.dim() {
        return Err(Error::Dimension { expected: f.dim(), got: a_i.ncols() });
    }
    Ok(projector_from_weighted(&(a_i * &h)))
}

fn operators(sets: &[ConstraintSet]) -> Result<Vec<DMatrix<f64>>> {
    if sets.is_empty() {
        return Err(Error::invalid("rate constants need at least one set"));
    }
    sets.iter()
        .map(|s| {
            s.as_affine()
                .map(|a| a.dense().0)
                .ok_or_else(|| Error::invalid("rate constants are defined for affine families only"))
        })
        .collect()
}

fn stacked(ops: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = ops[0].ncols();
    let rows: usize = ops.iter().map(|a| a.nrows()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut r = 0;
    for a in ops {
        out.rows_mut(r, a.nrows()).copy_from(a);
        r += a.nrows();
    }
    out
}

/// Shared ingredients: projectors and an orthonormal basis of `V`.
struct LocalGeometry {
    projectors: Vec<DMatrix<f64>>,
    basis: DMatrix<f64>,
}

impl LocalGeometry {
    fn new(f: &Legendre, sets: &[ConstraintSet], x_star: &DVector<f64>) -> Result<Self> {
        let ops = operators(sets)?;
        let h = hessian_root(f, x_star)?;
        let weighted: Vec<DMatrix<f64>> = ops.iter().map(|a| a * &h).collect();
        let projectors = weighted.iter().map(projector_from_weighted).collect();
        let basis = linalg::range_basis(&stacked(&weighted).transpose());
        if basis.ncols() == 0 {
            return Err(Error::ZeroOperator("V(x⋆) = range(H Aᵀ) is trivial".into()));
        }
        Ok(LocalGeometry { projectors, basis })
    }

    /// `Uᵀ Q_i U`.
    fn reduced(&self) -> Vec<DMatrix<f64>> {
        self.projectors.iter().map(|q| self.basis.transpose() * q * &self.basis).collect()
    }
}

fn gamma_random_from(geo: &LocalGeometry, mu: &[f64]) -> Result<f64> {
    let reduced = geo.reduced();
    let r = geo.basis.ncols();
    let mut mean = DMatrix::zeros(r, r);
    for (m, q) in mu.iter().zip(&reduced) {
        mean += q * *m;
    }
    let (values, _) = linalg::sorted_symmetric_eigen(&mean);
    let largest = values[r - 1];
    if largest <= 0.0 {
        return Err(Error::ZeroOperator("mean projector is numerically zero".into()));
    }
    let smallest = values[0];
    if smallest <= linalg::zero_threshold(r, largest) {
        // some direction of V is missed by every set with positive weight
        return Err(Error::ZeroOperator("mean projector is singular on V(x⋆)".into()));
    }
    Ok(smallest.min(1.0))
}

/// `λ_min⁺(Σ μ_i Q_i(x⋆))`; `mu = None` means uniform.
pub fn gamma_random(f: &Legendre, sets: &[ConstraintSet], mu: Option<&[f64]>, x_star: &DVector<f64>) -> Result<f64> {
    let geo = LocalGeometry::new(f, sets, x_star)?;
    let m = sets.len();
    let weights = match mu {
        Some(mu) => {
            check_probability(mu, m)?;
            mu.to_vec()
        }
        None => vec![1.0 / m as f64; m],
    };
    gamma_random_from(&geo, &weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedySearchOptions {
    pub starts: usize,
    /// Projected-gradient steps per smoothing level.
    pub steps: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
}

impl Default for GreedySearchOptions {
    fn default() -> Self {
        GreedySearchOptions { starts: 32, steps: 500, gradient_tolerance: 1e-8, seed: 0 }
    }
}

const TEMPERATURES: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

fn max_form(ms: &[DMatrix<f64>], w: &DVector<f64>) -> f64 {
    ms.iter().map(|m| w.dot(&(m * w))).fold(f64::NEG_INFINITY, f64::max)
}

/// `τ log Σ exp(wᵀ M_i w / τ)` and its Euclidean gradient.
fn smoothed(ms: &[DMatrix<f64>], w: &DVector<f64>, tau: f64) -> (f64, DVector<f64>) {
    let mw: Vec<DVector<f64>> = ms.iter().map(|m| m * w).collect();
    let vals: Vec<f64> = mw.iter().map(|x| w.dot(x)).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = vals.iter().map(|v| ((v - top) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let value = top + tau * total.ln();
    let mut grad = DVector::zeros(w.len());
    for (p, x) in weights.iter().zip(&mw) {
        grad += x * (2.0 * p / total);
    }
    (value, grad)
}

/// Projected gradient with backtracking on the sphere, continuing over temperatures.
fn descend(ms: &[DMatrix<f64>], start: DVector<f64>, opts: &GreedySearchOptions) -> f64 {
    let mut w = start.normalize();
    let mut best = max_form(ms, &w);
    for &tau in &TEMPERATURES {
        let mut step = 1.0;
        for _ in 0..opts.steps {
            let (val, grad) = smoothed(ms, &w, tau);
            let riem = &grad - &w * w.dot(&grad);
            let gnorm2 = riem.norm_squared();
            if riem.amax() < opts.gradient_tolerance {
                break;
            }
            let mut accepted = false;
            while step > 1e-16 {
                let cand = (&w - &riem * step).normalize();
                let (cv, _) = smoothed(ms, &cand, tau);
                if cv <= val - 1e-4 * step * gnorm2 {
                    w = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            step = (step * 2.0).min(1e3);
        }
        best = best.min(max_form(ms, &w));
    }
    best
}

fn minmax(ms: &[DMatrix<f64>], r: usize, extra_starts: &[DVector<f64>], opts: &GreedySearchOptions) -> f64 {
    let mut starts: Vec<DVector<f64>> = extra_starts.to_vec();
    for i in 0..r {
        if starts.len() >= opts.starts {
            break;
        }
        starts.push(DVector::from_fn(r, |j, _| if j == i { 1.0 } else { 0.0 }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while starts.len() < opts.starts.max(1) {
        starts.push(DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0)));
    }
    starts
        .into_par_iter()
        .filter(|s| s.norm() > 0.0)
        .map(|s| descend(ms, s, opts))
        .reduce(|| f64::INFINITY, f64::min)
}

/// `(certified lower bound, multi-start estimate)` of `γ_greedy`. The lower
/// bound is `γ_random` with uniform weights.
pub fn gamma_greedy(
    f: &Legendre,
    sets: &[ConstraintSet],
    x_star: &DVector<f64>,
    opts: &GreedySearchOptions,
) -> Result<(f64, f64)> {
    let geo = LocalGeometry::new(f, sets, x_star)?;
    let m = sets.len();
    let lower = gamma_random_from(&geo, &vec![1.0 / m as f64; m])?;
    let reduced = geo.reduced();
    let estimate = minmax_estimate(&reduced, opts);
    Ok((lower, estimate.clamp(lower, 1.0)))
}

fn minmax_estimate(reduced: &[DMatrix<f64>], opts: &GreedySearchOptions) -> f64 {
    let r = reduced[0].nrows();
    if r == 1 {
        return reduced.iter().map(|m| m[(0, 0)]).fold(f64::NEG_INFINITY, f64::max);
    }
    // eigenvectors of the mean form are natural starting directions
    let mut mean = DMatrix::zeros(r, r);
    for q in reduced {
        mean += q;
    }
    let (_, vecs) = linalg::sorted_symmetric_eigen(&mean);
    let extra: Vec<DVector<f64>> = (0..r.min(4)).map(|c| vecs.column(c).into_owned()).collect();
    minmax(reduced, r, &extra, opts)
}

/// Row-action (Kaczmarz) constants `(σ_greedy, σ_random)` with `Ā = D⁻¹ A H`.
pub fn kaczmarz_rates(f: &Legendre, a: &DMatrix<f64>, x_star: &DVector<f64>) -> Result<(f64, f64)> {
    kaczmarz_rates_with(f, a, x_star, &GreedySearchOptions::default())
}

pub fn kaczmarz_rates_with(
    f: &Legendre,
    a: &DMatrix<f64>,
    x_star: &DVector<f64>,
    opts: &GreedySearchOptions,
) -> Result<(f64, f64)> {
    if a.ncols() != f.dim() {
        return Err(Error::Dimension { expected: f.dim(), got: a.ncols() });
    }
    let h = hessian_root(f, x_star)?;
    let m = a.nrows();
    let mut abar = a * &h;
    for i in 0..m {
        let norm = abar.row(i).norm();
        if norm == 0.0 {
            return Err(Error::ZeroOperator(format!("row {i} vanishes after Hessian weighting")));
        }
        abar.row_mut(i).unscale_mut(norm);
    }
    let gram = abar.transpose() * &abar;
    let (values, _) = linalg::sorted_symmetric_eigen(&gram);
    let largest = values[values.len() - 1];
    let tol = linalg::zero_threshold(gram.nrows(), largest);
    let lmin = values.iter().copied().find(|&v| v > tol).ok_or_else(|| Error::ZeroOperator("ĀᵀĀ is zero".into()))?;
    let sigma_random = (1.0 - lmin / m as f64).max(0.0);

    // min over unit v in range(Āᵀ) of ‖Āv‖∞²
    let basis = linalg::range_basis(&abar.transpose());
    let reduced: Vec<DMatrix<f64>> = (0..m)
        .map(|i| {
            let u = basis.transpose() * abar.row(i).transpose();
            &u * u.transpose()
        })
        .collect();
    let gamma = minmax_estimate(&reduced, opts).clamp((lmin / m as f64).min(1.0), 1.0);
    Ok((1.0 - gamma, sigma_random))
}

/// `(holds, sup_i ‖A_iᵀ (A_i ∇²φ*(∇φ(x)) A_iᵀ)^† A_i‖)`; `holds` is `A ∇²φ*(∇φ(x)) ≠ 0`.
pub fn check_h2(f: &Legendre, sets: &[ConstraintSet], x_star: &DVector<f64>) -> Result<(bool, f64)> {
    let ops = operators(sets)?;
    if !f.in_interior(x_star) {
        return Err(Error::domain("H2 check needs x⋆ in int(dom φ)"));
    }
    let h2 = f.conj_hess(&f.grad(x_star)?)?.to_dense();
    let mut sup = 0.0_f64;
    for a in &ops {
        let inner = a * &h2 * a.transpose();
        let n = a.transpose() * linalg::pinv(&inner) * a;
        sup = sup.max(linalg::operator_norm(&n));
    }
    let full = stacked(&ops) * &h2;
    let scale = stacked(&ops).amax() * h2.amax();
    let holds = full.amax() > linalg::zero_threshold(full.nrows().max(full.ncols()), scale);
    Ok((holds, sup))
}

/// `E = Σ μ_i S_i (S_iᵀ A Aᵀ S_i)^† S_iᵀ` for sketches `S_i` with `A.nrows()` rows.
pub fn exactness_matrix(a: &DMatrix<f64>, sketches: &[DMatrix<f64>], mu: &[f64]) -> Result<DMatrix<f64>> {
    if sketches.len() != mu.len() {
        return Err(Error::Dimension { expected: sketches.len(), got: mu.len() });
    }
    let m = a.nrows();
    let gram = a * a.transpose();
    let mut e = DMatrix::zeros(m, m);
    for (s, &w) in sketches.iter().zip(mu) {
        if s.nrows() != m {
            return Err(Error::Dimension { expected: m, got: s.nrows() });
        }
        e += s * linalg::pinv(&(s.transpose() * &gram * s)) * s.transpose() * w;
    }
    Ok((&e + e.transpose()) * 0.5)
}

/// `range(A) ∩ Ker(E) = {0}`, decided by a rank test on the stacked bases.
pub fn check_exactness(a: &DMatrix<f64>, e: &DMatrix<f64>) -> bool {
    let range = linalg::range_basis(a);
    let kernel = linalg::psd_kernel_basis(e);
    if range.ncols() == 0 || kernel.ncols() == 0 {
        return true;
    }
    let mut both = DMatrix::zeros(a.nrows(), range.ncols() + kernel.ncols());
    both.columns_mut(0, range.ncols()).copy_from(&range);
    both.columns_mut(range.ncols(), kernel.ncols()).copy_from(&kernel);
    linalg::rank(&both) == range.ncols() + kernel.ncols()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub gamma_greedy: f64,
    pub gamma_greedy_lower: f64,
    pub gamma_random: f64,
    pub local_greedy_rate: f64,
    pub local_random_rate: f64,
    #[serde(rename = "H2_holds")]
    pub h2_holds: bool,
    #[serde(rename = "H2_sup_norm")]
    pub h2_sup_norm: f64,
    pub exactness: Option<bool>,
    pub notes: Vec<String>,
}

/// All local constants at `x⋆` in one report.
pub fn rate_report(
    f: &Legendre,
    sets: &[ConstraintSet],
    mu: Option<&[f64]>,
    x_star: &DVector<f64>,
    exactness: Option<bool>,
    opts: &GreedySearchOptions,
) -> Result<RateReport> {
    let gamma_random = gamma_random(f, sets, mu, x_star)?;
    let (lower, estimate) = gamma_greedy(f, sets, x_star, opts)?;
    let (h2_holds, h2_sup_norm) = check_h2(f, sets, x_star)?;
    let mut notes = vec!["gamma_greedy is a multi-start estimate; gamma_greedy_lower is certified".to_string()];
    if !h2_holds {
        notes.push("A ∇²φ*(∇φ(x⋆)) vanishes: local rates are not informative".to_string());
    }
    Ok(RateReport {
        gamma_greedy: estimate,
        gamma_greedy_lower: lower,
        gamma_random,
        local_greedy_rate: 1.0 - estimate,
        local_random_rate: 1.0 - gamma_random,
        h2_holds,
        h2_sup_norm,
        exactness,
        notes,
    })
}
