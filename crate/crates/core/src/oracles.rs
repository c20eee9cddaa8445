//! Brute-force reference computations for tests.
//!
//! Nothing here calls the projection, rate or transport code: the only shared
//! dependency is [`Legendre`] for gradient/Hessian evaluations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::legendre::Legendre;

const PINV_EPS: f64 = 1e-12;

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    m.clone().pseudo_inverse(PINV_EPS * scale).expect("nonnegative eps")
}

/// `x − B⁻¹Aᵀ(AB⁻¹Aᵀ)^†(Ax − b)`.
pub fn quadratic_projection_oracle(
    bmat: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let binv = bmat.clone().try_inverse().expect("B must be invertible");
    let inner = a * &binv * a.transpose();
    x - &binv * a.transpose() * pseudo_inverse(&inner) * (a * x - b)
}

/// Grid minimum of `v ↦ max_i ‖Q_i v‖²` over unit `v` in `span(basis)`.
/// Supports `dim V ≤ 3`; `resolution` is the number of angles per coordinate.
pub fn sphere_grid_minmax(qs: &[DMatrix<f64>], basis: &DMatrix<f64>, resolution: usize) -> Result<f64> {
    let r = basis.ncols();
    let eval = |coords: &DVector<f64>| -> f64 {
        let v = basis * coords;
        let v = &v / v.norm();
        qs.iter().map(|q| (q * &v).norm_squared()).fold(f64::NEG_INFINITY, f64::max)
    };
    let pi = std::f64::consts::PI;
    let res = resolution.max(1);
    match r {
        1 => Ok(eval(&DVector::from_element(1, 1.0))),
        2 => Ok((0..res)
            .map(|k| {
                let t = pi * k as f64 / res as f64;
                eval(&DVector::from_column_slice(&[t.cos(), t.sin()]))
            })
            .fold(f64::INFINITY, f64::min)),
        3 => {
            let mut best = f64::INFINITY;
            for i in 0..=res {
                let theta = pi * i as f64 / res as f64;
                for j in 0..res {
                    let psi = pi * j as f64 / res as f64;
                    let c = DVector::from_column_slice(&[theta.sin() * psi.cos(), theta.sin() * psi.sin(), theta.cos()]);
                    best = best.min(eval(&c));
                }
            }
            Ok(best)
        }
        _ => Err(Error::invalid(format!("sphere grid supports dim V ≤ 3, got {r}"))),
    }
}

/// Dense-eigensolver `γ_random`: smallest eigenvalue of `Σ μ_i Q_i` above the zero threshold.
pub fn gamma_random_oracle(f: &Legendre, ops: &[DMatrix<f64>], mu: &[f64], x_star: &DVector<f64>) -> f64 {
    let h2 = f.conj_hess(&f.grad(x_star).expect("interior point")).expect("conjugate domain").to_dense();
    let eig = h2.symmetric_eigen();
    let h = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt())) * eig.eigenvectors.transpose();
    let n = f.dim();
    let mut qbar = DMatrix::zeros(n, n);
    for (a, &w) in ops.iter().zip(mu) {
        let g = &h * a.transpose();
        let q = &g * pseudo_inverse(&(g.transpose() * &g)) * g.transpose();
        qbar += q * w;
    }
    let qbar = (&qbar + qbar.transpose()) * 0.5;
    let values = qbar.symmetric_eigenvalues();
    let largest = values.iter().copied().fold(0.0_f64, f64::max);
    let tol = n as f64 * largest * 2.2e-16;
    values.iter().copied().filter(|&l| l > tol).fold(f64::INFINITY, f64::min)
}

fn check_marginal(v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension { expected: n, got: v.len() });
    }
    Ok(())
}

/// Classical matrix scaling `π = diag(u) K diag(v)` with `K = exp(−C/η)`.
/// Returns the coupling once both marginal residuals are at most `tol`.
pub fn reference_sinkhorn(cost: &DMatrix<f64>, eta: f64, r: &DVector<f64>, c: &DVector<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_marginal(r, cost.nrows())?;
    check_marginal(c, cost.ncols())?;
    let k = cost.map(|x| (-x / eta).exp());
    let mut v = DVector::from_element(cost.ncols(), 1.0);
    let coupling = |u: &DVector<f64>, v: &DVector<f64>| DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| u[i] * k[(i, j)] * v[j]);
    for _ in 0..1_000_000 {
        let u = r.component_div(&(&k * &v));
        v = c.component_div(&(k.transpose() * &u));
        let pi = coupling(&u, &v);
        let row_res = (pi.column_sum() - r).amax();
        let col_res = (pi.row_sum().transpose() - c).amax();
        if row_res.max(col_res) <= tol {
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence { iterations: 1_000_000, residual: f64::NAN })
}

/// The first `steps` half-step Sinkhorn iterates, alternating full-row and
/// full-column scalings and starting on `first_axis` (0 = rows).
pub fn sinkhorn_iterates(
    cost: &DMatrix<f64>,
    eta: f64,
    r: &DVector<f64>,
    c: &DVector<f64>,
    first_axis: usize,
    steps: usize,
) -> Vec<DMatrix<f64>> {
    let k = cost.map(|x| (-x / eta).exp());
    let mut u = DVector::from_element(cost.nrows(), 1.0);
    let mut v = DVector::from_element(cost.ncols(), 1.0);
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        if (s + first_axis) % 2 == 0 {
            u = r.component_div(&(&k * &v));
        } else {
            v = c.component_div(&(k.transpose() * &u));
        }
        out.push(DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| u[i] * k[(i, j)] * v[j]));
    }
    out
}

/// `argmin Σ x log x − x` subject to `A x = b`, from the all-ones vector.
pub fn constrained_entropy_oracle(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    constrained_kl_oracle(a, b, &DVector::from_element(a.ncols(), 1.0), tol)
}

/// `argmin KL(x, prior)` subject to `A x = b`: Newton on the dual
/// `λ ↦ Σ prior ⊙ exp(Aᵀλ) − ⟨λ, b⟩`.
pub fn constrained_kl_oracle(a: &DMatrix<f64>, b: &DVector<f64>, prior: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let m = a.nrows();
    let primal = |lam: &DVector<f64>| prior.component_mul(&(a.transpose() * lam).map(f64::exp));
    let dual = |lam: &DVector<f64>| primal(lam).sum() - lam.dot(b);
    let mut lam = DVector::zeros(m);
    for it in 0..500 {
        let x = primal(&lam);
        let grad = a * &x - b;
        if grad.amax() <= tol {
            return Ok(x);
        }
        let hess = a * DMatrix::from_diagonal(&x) * a.transpose();
        let step = -pseudo_inverse(&hess) * &grad;
        let base = dual(&lam);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &lam + &step * t;
            let val = dual(&cand);
            if val.is_finite() && val <= base + 1e-4 * t * slope + 1e-15 * base.abs() {
                lam = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::NonConvergence { iterations: it, residual: grad.amax() });
            }
        }
    }
    let x = primal(&lam);
    Err(Error::NonConvergence { iterations: 500, residual: (a * &x - b).amax() })
}
