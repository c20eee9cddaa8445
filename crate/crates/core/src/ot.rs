//! Multimarginal entropic optimal transport on dense row-major tensors.
//!
//! The regularized problem is the Boltzmann-Shannon (KL) projection of the
//! Gibbs kernel `κ = exp(−α/η)` onto the intersection of the marginal sets
//! `{π : marginal(π, i) = ρ_i}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controls::ControlScheme;
use crate::error::{Error, Result};
use crate::geometry::{AffineSet, ConstraintSet};
use crate::legendre::Legendre;
use crate::solver::{self, FeasibilityProblem, IterationTrace, SolveOptions};

const SIMPLEX_TOL: f64 = 1e-12;
/// Largest `α/η` before `exp(−α/η)` leaves the normal double range.
pub const MAX_COST_RATIO: f64 = 700.0;

pub(crate) fn check_simplex(rho: &DVector<f64>) -> Result<()> {
    if rho.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::invalid("marginal entries must be finite and nonnegative"));
    }
    let total = rho.sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("marginal sums to {total}, expected 1")));
    }
    Ok(())
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::invalid("tensor shape must be non-empty with positive extents"));
    }
    Ok(shape.iter().product())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTensor {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<f64>,
}

impl CouplingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::Dimension { expected: len, got: data.len() });
        }
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("coupling entries must be finite and nonnegative"));
        }
        let strides = strides(&shape);
        Ok(CouplingTensor { shape, strides, data })
    }

    pub fn from_vector(shape: Vec<usize>, v: &DVector<f64>) -> Result<Self> {
        Self::new(shape, v.as_slice().to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let flat: usize = index.iter().zip(&self.strides).map(|(i, s)| i * s).sum();
        self.data[flat]
    }

    /// 2-way tensors as a matrix.
    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        (self.shape.len() == 2).then(|| DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.data))
    }
}

/// `κ = exp(−α/η)` for a row-major cost tensor `α`.
pub fn gibbs_kernel(shape: &[usize], cost: &[f64], eta: f64) -> Result<CouplingTensor> {
    let len = check_shape(shape)?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("regularization η must be positive"));
    }
    if cost.len() != len {
        return Err(Error::Dimension { expected: len, got: cost.len() });
    }
    if cost.iter().any(|&c| !c.is_finite()) {
        return Err(Error::invalid("cost entries must be finite"));
    }
    if let Some(&worst) = cost.iter().find(|&&c| c / eta > MAX_COST_RATIO) {
        return Err(Error::invalid(format!(
            "cost/η ratio {:.1} exceeds {MAX_COST_RATIO}: the Gibbs kernel underflows, use a larger η",
            worst / eta
        )));
    }
    CouplingTensor::new(shape.to_vec(), cost.iter().map(|&c| (-c / eta).exp()).collect())
}

pub(crate) fn marginal_flat(shape: &[usize], axis: usize, data: &[f64]) -> DVector<f64> {
    let stride: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = DVector::zeros(n);
    for (i, &v) in data.iter().enumerate() {
        out[(i / stride) % n] += v;
    }
    out
}

/// Sum of `π` over every index except `axis`.
pub fn marginal(pi: &CouplingTensor, axis: usize) -> Result<DVector<f64>> {
    if axis >= pi.shape.len() {
        return Err(Error::invalid(format!("axis {axis} out of range")));
    }
    Ok(marginal_flat(&pi.shape, axis, &pi.data))
}

/// Dense 0/1 matrix of the push-forward onto `axis`.
pub fn marginal_operator(shape: &[usize], axis: usize) -> DMatrix<f64> {
    let stride: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let len: usize = shape.iter().product();
    let mut a = DMatrix::zeros(n, len);
    for i in 0..len {
        a[((i / stride) % n, i)] = 1.0;
    }
    a
}

/// `Σ p log(p/q) − p + q`.
pub fn generalized_kl(p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                qi
            } else if qi <= 0.0 {
                f64::INFINITY
            } else {
                qi * crate::legendre::one_plus_r_log_minus_r(pi / qi - 1.0)
            }
        })
        .sum()
}

pub(crate) fn kl_project_flat(
    shape: &[usize],
    axis: usize,
    target: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let marg = marginal_flat(shape, axis, x.as_slice());
    let mut factor = DVector::zeros(target.len());
    for h in 0..target.len() {
        if target[h] > 0.0 {
            if !(marg[h] > 0.0) {
                return Err(Error::domain(format!("marginal entry {h} on axis {axis} is zero but its target is positive")));
            }
            factor[h] = target[h] / marg[h];
        }
    }
    let stride: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    Ok(DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, &v)| v * factor[(i / stride) % n])))
}

/// KL projection onto `{π : marginal(π, axis) = ρ}`: rescales every slice of `axis`.
pub fn kl_project_marginal(pi: &CouplingTensor, axis: usize, rho: &DVector<f64>) -> Result<CouplingTensor> {
    if axis >= pi.shape.len() {
        return Err(Error::invalid(format!("axis {axis} out of range")));
    }
    if rho.len() != pi.shape[axis] {
        return Err(Error::Dimension { expected: pi.shape[axis], got: rho.len() });
    }
    let out = kl_project_flat(&pi.shape, axis, rho, &pi.to_vector())?;
    Ok(CouplingTensor { shape: pi.shape.clone(), strides: pi.strides.clone(), data: out.as_slice().to_vec() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtProblem {
    shape: Vec<usize>,
    cost: Vec<f64>,
    eta: f64,
    marginals: Vec<DVector<f64>>,
    kernel: CouplingTensor,
}

impl OtProblem {
    /// Marginals must be strictly positive so every iterate stays in the open orthant.
    pub fn new(shape: Vec<usize>, cost: Vec<f64>, eta: f64, marginals: Vec<DVector<f64>>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::invalid("transport needs at least two marginals"));
        }
        let kernel = gibbs_kernel(&shape, &cost, eta)?;
        if marginals.len() != shape.len() {
            return Err(Error::Dimension { expected: shape.len(), got: marginals.len() });
        }
        for (i, rho) in marginals.iter().enumerate() {
            if rho.len() != shape[i] {
                return Err(Error::Dimension { expected: shape[i], got: rho.len() });
            }
            check_simplex(rho)?;
            if rho.iter().any(|&r| r <= 0.0) {
                return Err(Error::invalid(format!("marginal {i} has a zero entry; drop that support point instead")));
            }
        }
        Ok(OtProblem { shape, cost, eta, marginals, kernel })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn marginals(&self) -> &[DVector<f64>] {
        &self.marginals
    }

    pub fn kernel(&self) -> &CouplingTensor {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.kernel.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernel.data.is_empty()
    }

    /// `ρ_1 ⊗ … ⊗ ρ_m`, always feasible.
    pub fn product_measure(&self) -> CouplingTensor {
        let len = self.len();
        let strides = strides(&self.shape);
        let data = (0..len)
            .map(|flat| {
                self.shape
                    .iter()
                    .zip(&strides)
                    .zip(&self.marginals)
                    .map(|((&n, &s), rho)| rho[(flat / s) % n])
                    .product()
            })
            .collect();
        CouplingTensor { shape: self.shape.clone(), strides, data }
    }

    /// Largest marginal violation `max_i ‖marginal(π,i) − ρ_i‖∞`.
    pub fn marginal_residual(&self, pi: &CouplingTensor) -> f64 {
        (0..self.shape.len())
            .map(|i| (marginal_flat(&self.shape, i, &pi.data) - &self.marginals[i]).amax())
            .fold(0.0, f64::max)
    }

    /// `KL(π, κ)`.
    pub fn kl_to_kernel(&self, pi: &CouplingTensor) -> f64 {
        generalized_kl(&pi.to_vector(), &self.kernel.to_vector())
    }
}

/// One set per marginal constraint.
pub fn marginal_sets(problem: &OtProblem) -> Vec<ConstraintSet> {
    problem
        .marginals
        .iter()
        .enumerate()
        .map(|(i, rho)| AffineSet::OtMarginal { shape: problem.shape.clone(), axis: i, target: rho.clone() }.into())
        .collect()
}

/// One hyperplane per scalar marginal equation, with 0/1 slice indicators.
pub fn greenkhorn_sets(problem: &OtProblem) -> Vec<ConstraintSet> {
    let mut out = Vec::new();
    for (i, rho) in problem.marginals.iter().enumerate() {
        let op = marginal_operator(&problem.shape, i);
        for h in 0..rho.len() {
            out.push(AffineSet::Hyperplane { a: op.row(h).transpose(), b: rho[h] }.into());
        }
    }
    out
}

/// The full marginal system `A π = [ρ_1; …; ρ_m]` as one affine set.
pub fn stacked_system(problem: &OtProblem) -> Result<AffineSet> {
    solver::stack(&marginal_sets(problem))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OtAlgorithm {
    /// Cyclic full-marginal scalings.
    Sinkhorn,
    /// Greedy single-row scalings.
    Greenkhorn,
    /// Uniform i.i.d. marginal choice.
    Random,
    /// Distance-proportional marginal choice.
    Adaptive,
}

impl std::str::FromStr for OtAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinkhorn" => Ok(OtAlgorithm::Sinkhorn),
            "greenkhorn" => Ok(OtAlgorithm::Greenkhorn),
            "random" => Ok(OtAlgorithm::Random),
            "adaptive" => Ok(OtAlgorithm::Adaptive),
            other => Err(Error::invalid(format!("unknown OT algorithm '{other}'"))),
        }
    }
}

/// Feasibility problem over the marginal sets (or single-row sets), started at `κ`.
pub fn feasibility_problem(problem: &OtProblem, single_rows: bool) -> Result<FeasibilityProblem> {
    let sets = if single_rows { greenkhorn_sets(problem) } else { marginal_sets(problem) };
    let f = Legendre::boltzmann_shannon(problem.len());
    let p = FeasibilityProblem { f, sets, intersection: None, x0: problem.kernel.to_vector() };
    p.with_intersection(stacked_system(problem)?)
}

/// Runs the generic solver over the marginal sets with control `scheme`.
pub fn solve_ot(problem: &OtProblem, scheme: &ControlScheme, opts: &SolveOptions) -> Result<(CouplingTensor, IterationTrace)> {
    let fp = feasibility_problem(problem, false)?;
    let trace = solver::solve(&fp, scheme, opts)?;
    Ok((CouplingTensor::from_vector(problem.shape.clone(), &trace.x_final)?, trace))
}

/// Named algorithm front-end; `seed` feeds the random controls.
pub fn solve_ot_with(
    problem: &OtProblem,
    algo: OtAlgorithm,
    seed: u64,
    opts: &SolveOptions,
) -> Result<(CouplingTensor, IterationTrace)> {
    let (single_rows, scheme) = match algo {
        OtAlgorithm::Sinkhorn => (false, ControlScheme::cyclic()),
        OtAlgorithm::Greenkhorn => (true, ControlScheme::greedy()),
        OtAlgorithm::Random => (false, ControlScheme::random(None, seed)),
        OtAlgorithm::Adaptive => (false, ControlScheme::adaptive(None, seed)),
    };
    let fp = feasibility_problem(problem, single_rows)?;
    let trace = solver::solve(&fp, &scheme, opts)?;
    Ok((CouplingTensor::from_vector(problem.shape.clone(), &trace.x_final)?, trace))
}

/// JSON form: `{"shape", "cost" (row-major), "eta", "marginals"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OtSpec {
    pub shape: Vec<usize>,
    pub cost: Vec<f64>,
    pub eta: f64,
    pub marginals: Vec<Vec<f64>>,
}

impl TryFrom<OtSpec> for OtProblem {
    type Error = Error;

    fn try_from(s: OtSpec) -> Result<Self> {
        OtProblem::new(s.shape, s.cost, s.eta, s.marginals.into_iter().map(DVector::from_vec).collect())
    }
}

impl From<&OtProblem> for OtSpec {
    fn from(p: &OtProblem) -> Self {
        OtSpec {
            shape: p.shape.clone(),
            cost: p.cost.clone(),
            eta: p.eta,
            marginals: p.marginals.iter().map(|m| m.as_slice().to_vec()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{divergence, project_affine, project_hyperplane, DualSolveOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn gibbs_examples() {
        let k = gibbs_kernel(&[2, 2], &[0.0; 4], 0.7).unwrap();
        assert_eq!(k.data(), &[1.0; 4]);
        let eta = 0.3;
        let k = gibbs_kernel(&[3], &[eta * 2.0_f64.ln(); 3], eta).unwrap();
        assert!(k.data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let k = gibbs_kernel(&[2, 2], &[0.0, 1.0, 1.0, 0.0], 1.0).unwrap();
        let e = (-1.0_f64).exp();
        assert_eq!(k.data(), &[1.0, e, e, 1.0]);
        assert!(gibbs_kernel(&[2], &[0.0, 0.0], 0.0).is_err());
        assert!(gibbs_kernel(&[2], &[701.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn marginal_examples() {
        let u = CouplingTensor::new(vec![2, 2], vec![0.25; 4]).unwrap();
        assert_eq!(marginal(&u, 0).unwrap(), v(&[0.5, 0.5]));
        assert_eq!(marginal(&u, 1).unwrap(), v(&[0.5, 0.5]));
        let rho = [0.2, 0.8];
        let sigma = [0.1, 0.3, 0.6];
        let data: Vec<f64> = rho.iter().flat_map(|r| sigma.iter().map(move |s| r * s * 2.0)).collect();
        let t = CouplingTensor::new(vec![2, 3], data).unwrap();
        assert_relative_eq!(marginal(&t, 0).unwrap(), v(&rho) * 2.0, epsilon = 1e-15);
        assert_relative_eq!(marginal(&t, 1).unwrap(), v(&sigma) * 2.0, epsilon = 1e-15);
        let ones = CouplingTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        for i in 0..3 {
            assert_eq!(marginal(&ones, i).unwrap(), v(&[4.0, 4.0]));
        }
        // the strided reduction agrees with the dense operator
        let t3 = CouplingTensor::new(vec![2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        for i in 0..3 {
            assert_eq!(marginal(&t3, i).unwrap(), marginal_operator(&[2, 3, 4], i) * t3.to_vector());
        }
    }

    #[test]
    fn kl_projection_examples() {
        let pi = CouplingTensor::new(vec![2, 2], vec![0.25; 4]).unwrap();
        let rho = v(&[0.3, 0.7]);
        let p = kl_project_marginal(&pi, 0, &rho).unwrap();
        assert_relative_eq!(p.to_vector(), v(&[0.15, 0.15, 0.35, 0.35]), epsilon = 1e-15);
        let d = generalized_kl(&rho, &marginal(&pi, 0).unwrap());
        assert_relative_eq!(d, 0.3 * 0.6_f64.ln() + 0.7 * 1.4_f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(d, 0.082282, epsilon = 1e-6);
        let f = Legendre::boltzmann_shannon(4);
        assert_relative_eq!(divergence(&f, &p.to_vector(), &pi.to_vector()), d, epsilon = 1e-10);
        let same = kl_project_marginal(&pi, 1, &v(&[0.5, 0.5])).unwrap();
        assert_eq!(same, pi);
        // general dual solver on the equivalent system
        let a = marginal_operator(&[2, 2], 0);
        let (q, _) = project_affine(&f, &a, &rho, &pi.to_vector(), &DualSolveOptions::default()).unwrap();
        assert!((q - p.to_vector()).amax() <= 1e-8);
    }

    #[test]
    fn infeasible_scaling_detected() {
        let pi = CouplingTensor::new(vec![2, 2], vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        assert!(kl_project_marginal(&pi, 0, &v(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn greenkhorn_row_projection_is_slice_scaling() {
        let p = OtProblem::new(vec![2, 3], vec![0.0, 1.0, 2.0, 1.0, 0.0, 3.0], 1.0, vec![v(&[0.4, 0.6]), v(&[0.2, 0.3, 0.5])]).unwrap();
        let sets = greenkhorn_sets(&p);
        assert_eq!(sets.len(), 5);
        let f = Legendre::boltzmann_shannon(6);
        let x = p.kernel().to_vector();
        let opts = DualSolveOptions::default();
        for s in &sets {
            let ConstraintSet::Affine(AffineSet::Hyperplane { a, b }) = s else { panic!() };
            let closed = s.project(&f, &x, &opts).unwrap();
            let slice_mass = a.dot(&x);
            let scaled = DVector::from_iterator(6, x.iter().zip(a.iter()).map(|(&xi, &ai)| if ai == 1.0 { xi * b / slice_mass } else { xi }));
            assert_relative_eq!(closed, scaled, epsilon = 1e-15);
            // perturbing one coefficient slightly forces the bracketed 1-D root
            let mut a2 = a.clone();
            let j = a.iter().position(|&t| t == 1.0).unwrap();
            a2[j] = 1.0 + 1e-12;
            let (root, _) = project_hyperplane(&f, &a2, *b, &x, &opts).unwrap();
            assert!((root - closed).amax() < 1e-9);
        }
    }

    #[test]
    fn uniform_instance_solved_in_one_pass() {
        let p = OtProblem::new(vec![3, 3], vec![0.0; 9], 1.0, vec![v(&[1.0 / 3.0; 3]), v(&[1.0 / 3.0; 3])]).unwrap();
        let (pi, trace) = solve_ot_with(&p, OtAlgorithm::Sinkhorn, 0, &SolveOptions::default()).unwrap();
        assert!(trace.iterations <= 2);
        assert!(pi.data().iter().all(|&x| (x - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn three_marginal_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = vec![3, 3, 3];
        let cost: Vec<f64> = (0..27).map(|_| rng.random_range(0.0..1.0)).collect();
        let marg = |rng: &mut ChaCha8Rng| {
            let w = DVector::from_fn(3, |_, _| rng.random_range(0.2..1.0));
            let s = w.sum();
            w / s
        };
        let marginals = vec![marg(&mut rng), marg(&mut rng), marg(&mut rng)];
        let p = OtProblem::new(shape, cost, 1.0, marginals).unwrap();
        for algo in [OtAlgorithm::Sinkhorn, OtAlgorithm::Greenkhorn, OtAlgorithm::Random, OtAlgorithm::Adaptive] {
            let (pi, trace) = solve_ot_with(&p, algo, 4, &SolveOptions::default()).unwrap();
            assert_eq!(trace.status, solver::Status::Converged, "{algo:?}");
            assert!(p.marginal_residual(&pi) <= 1e-8);
            assert!(p.kl_to_kernel(&pi) <= p.kl_to_kernel(&p.product_measure()));
            assert_relative_eq!(pi.mass(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(OtProblem::new(vec![2, 2], vec![0.0; 4], 1.0, vec![v(&[0.5, 0.5])]).is_err());
        assert!(OtProblem::new(vec![2, 2], vec![0.0; 4], 1.0, vec![v(&[0.5, 0.6]), v(&[0.5, 0.5])]).is_err());
        assert!(OtProblem::new(vec![2, 2], vec![0.0; 4], 1.0, vec![v(&[1.0, 0.0]), v(&[0.5, 0.5])]).is_err());
        assert!(OtProblem::new(vec![2, 2], vec![0.0; 3], 1.0, vec![v(&[0.5, 0.5]), v(&[0.5, 0.5])]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn projection_mass_and_positivity(seed in any::<u64>(), axis in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = vec![2, 3, 4];
            let pi = CouplingTensor::new(shape.clone(), (0..24).map(|_| rng.random_range(0.01..2.0)).collect()).unwrap();
            let raw = DVector::from_fn(shape[axis], |_, _| rng.random_range(0.05..1.0));
            let rho = &raw / raw.sum();
            let p = kl_project_marginal(&pi, axis, &rho).unwrap();
            prop_assert!((p.mass() - 1.0).abs() <= 1e-14);
            prop_assert!((marginal(&p, axis).unwrap() - &rho).amax() <= 1e-14);
            prop_assert!(p.data().iter().all(|&x| x > 0.0));
            let f = Legendre::boltzmann_shannon(24);
            let d = divergence(&f, &p.to_vector(), &pi.to_vector());
            let closed = generalized_kl(&rho, &marginal(&pi, axis).unwrap());
            prop_assert!((d - closed).abs() <= 1e-10 * (1.0 + d));
        }
    }
}
