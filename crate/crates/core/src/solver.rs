//! Sequential Bregman projection method `x_{k+1} = P_{C_{ξ_k}}(x_k)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::ControlScheme;
use crate::error::{Error, Result};
use crate::geometry::{divergence, AffineSet, ConstraintSet, DualSolveOptions};
use crate::legendre::Legendre;

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityProblem {
    pub f: Legendre,
    pub sets: Vec<ConstraintSet>,
    /// Stacked system of all sets; filled in automatically when every set is affine.
    pub intersection: Option<AffineSet>,
    pub x0: DVector<f64>,
}

impl FeasibilityProblem {
    pub fn new(f: Legendre, sets: Vec<ConstraintSet>, x0: DVector<f64>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid("feasibility problem needs at least one set"));
        }
        let n = f.dim();
        if x0.len() != n {
            return Err(Error::Dimension { expected: n, got: x0.len() });
        }
        for s in &sets {
            if s.ambient_dim() != n {
                return Err(Error::Dimension { expected: n, got: s.ambient_dim() });
            }
        }
        if !f.in_interior(&x0) {
            return Err(Error::domain("x0 must lie in int(dom φ)"));
        }
        let intersection = if sets.iter().all(ConstraintSet::is_affine) { Some(stack(&sets)?) } else { None };
        Ok(FeasibilityProblem { f, sets, intersection, x0 })
    }

    /// Starts from the point where `∇φ` vanishes.
    pub fn from_gradient_zero(f: Legendre, sets: Vec<ConstraintSet>) -> Result<Self> {
        let x0 = f.gradient_zero_point()?;
        Self::new(f, sets, x0)
    }

    pub fn with_intersection(mut self, intersection: AffineSet) -> Result<Self> {
        if intersection.ambient_dim() != self.f.dim() {
            return Err(Error::Dimension { expected: self.f.dim(), got: intersection.ambient_dim() });
        }
        self.intersection = Some(intersection);
        Ok(self)
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.f.dim() {
            return Err(Error::Dimension { expected: self.f.dim(), got: x0.len() });
        }
        if !self.f.in_interior(&x0) {
            return Err(Error::domain("x0 must lie in int(dom φ)"));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.sets.len()
    }

    pub fn all_affine(&self) -> bool {
        self.sets.iter().all(ConstraintSet::is_affine)
    }

    /// `max_i` residual of set `i` at `x`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        self.sets.iter().map(|s| s.residual(x)).fold(0.0, f64::max)
    }

    /// `D_C(x)` through the intersection.
    pub fn distance_to_intersection(&self, x: &DVector<f64>, opts: &DualSolveOptions) -> Result<f64> {
        let c = self.intersection.as_ref().ok_or_else(|| Error::invalid("no intersection system available"))?;
        Ok(c.distance_with_projection(&self.f, x, opts)?.0)
    }
}

/// Stacks affine sets into one general system.
pub fn stack(sets: &[ConstraintSet]) -> Result<AffineSet> {
    let mut blocks = Vec::with_capacity(sets.len());
    for s in sets {
        let a = s.as_affine().ok_or_else(|| Error::invalid("cannot stack a halfspace into an affine system"))?;
        blocks.push(a.dense());
    }
    let n = blocks[0].0.ncols();
    let rows: usize = blocks.iter().map(|(a, _)| a.nrows()).sum();
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (ai, bi) in &blocks {
        a.rows_mut(r, ai.nrows()).copy_from(ai);
        b.rows_mut(r, bi.len()).copy_from(bi);
        r += ai.nrows();
    }
    AffineSet::general(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Stop once `max_i` residual falls to this level.
    pub stop_residual: f64,
    /// Keep every `trace_every`-th step record (the last step is always kept).
    pub trace_every: usize,
    /// Record `D_C(x_{k+1})` each step; costs one projection onto the intersection.
    pub compute_dc: bool,
    pub dual: DualSolveOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iterations: 10_000, stop_residual: 1e-8, trace_every: 1, compute_dc: false, dual: DualSolveOptions::default() }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_residual > 0.0) {
            return Err(Error::invalid("stop_residual must be positive"));
        }
        if self.trace_every == 0 {
            return Err(Error::invalid("trace_every must be positive"));
        }
        self.dual.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    BudgetExhausted,
}

/// One step `x_k → x_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub xi: usize,
    /// `D_{C_ξ}(x_k)`.
    pub d_sel: f64,
    /// Residual at `x_{k+1}`.
    pub res: f64,
    /// `D_C(x_{k+1})` when traced.
    #[serde(rename = "DC")]
    pub dc: Option<f64>,
    pub t_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<StepRecord>,
    /// `D_C(x_0)` when traced.
    pub dc0: Option<f64>,
    pub x_final: DVector<f64>,
    pub status: Status,
    pub iterations: usize,
    pub final_residual: f64,
}

impl IterationTrace {
    /// `D_C(x_0), D_C(x_1), …` when the full per-step trace is available.
    pub fn dc_sequence(&self) -> Option<Vec<f64>> {
        let mut out = vec![self.dc0?];
        for r in &self.records {
            out.push(r.dc?);
        }
        Some(out)
    }

    pub fn xi_sequence(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.xi).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&crate::json::to_string(r));
            out.push('\n');
        }
        out
    }
}

pub fn solve(problem: &FeasibilityProblem, scheme: &ControlScheme, opts: &SolveOptions) -> Result<IterationTrace> {
    solve_with(problem, scheme, opts, 0, |_, _| {})
}

/// Runs one solve on random stream `stream`, calling `observe(k, x_{k+1})` after every step.
pub fn solve_with<F>(
    problem: &FeasibilityProblem,
    scheme: &ControlScheme,
    opts: &SolveOptions,
    stream: u64,
    mut observe: F,
) -> Result<IterationTrace>
where
    F: FnMut(usize, &DVector<f64>),
{
    opts.validate()?;
    // inner solves must resolve residuals below the outer stopping level
    let mut opts = *opts;
    opts.dual.residual_tolerance = opts.dual.residual_tolerance.min(0.1 * opts.stop_residual);
    let opts = &opts;
    let f = &problem.f;
    if !f.in_interior(&problem.x0) {
        return Err(Error::domain("x0 must lie in int(dom φ)"));
    }
    if opts.compute_dc && problem.intersection.is_none() {
        return Err(Error::invalid("D_C tracing needs an intersection system"));
    }
    let dc_at = |x: &DVector<f64>, step: usize| -> Result<Option<f64>> {
        if !opts.compute_dc {
            return Ok(None);
        }
        problem.distance_to_intersection(x, &opts.dual).map(Some).map_err(|e| wrap(step, e))
    };

    let mut x = problem.x0.clone();
    let mut res = problem.residual(&x);
    let dc0 = dc_at(&x, 0)?;
    let mut records = Vec::new();
    if res <= opts.stop_residual {
        return Ok(IterationTrace { records, dc0, x_final: x, status: Status::Converged, iterations: 0, final_residual: res });
    }

    let m = problem.m();
    let mut state = scheme.start(m, stream)?;
    let needs_distances = scheme.needs_distances();
    let mut distances = vec![0.0; m];
    let mut cached: Vec<Option<DVector<f64>>> = vec![None; m];
    let mut status = Status::BudgetExhausted;
    let mut iterations = 0;

    for k in 0..opts.max_iterations {
        let start = Instant::now();
        let (xi, next, d_sel) = if needs_distances {
            for (i, s) in problem.sets.iter().enumerate() {
                let (d, p) = s.distance_with_projection(f, &x, &opts.dual).map_err(|e| wrap(k, e))?;
                distances[i] = d;
                cached[i] = p;
            }
            let xi = state.next_index(Some(&distances))?;
            let next = match cached[xi].take() {
                Some(p) => p,
                None => problem.sets[xi].project(f, &x, &opts.dual).map_err(|e| wrap(k, e))?,
            };
            (xi, next, distances[xi])
        } else {
            let xi = state.next_index(None)?;
            let next = problem.sets[xi].project(f, &x, &opts.dual).map_err(|e| wrap(k, e))?;
            let d = divergence(f, &next, &x);
            (xi, next, d)
        };
        if !f.in_interior(&next) {
            return Err(wrap(k, Error::domain("iterate left int(dom φ)")));
        }
        x = next;
        res = problem.residual(&x);
        let dc = dc_at(&x, k)?;
        iterations = k + 1;
        observe(k, &x);
        let done = res <= opts.stop_residual;
        let last = done || iterations == opts.max_iterations;
        if k % opts.trace_every == 0 || last {
            records.push(StepRecord { k, xi, d_sel, res, dc, t_ms: start.elapsed().as_secs_f64() * 1e3 });
        }
        if done {
            status = Status::Converged;
            break;
        }
    }
    Ok(IterationTrace { records, dc0, x_final: x, status, iterations, final_residual: res })
}

fn wrap(step: usize, e: Error) -> Error {
    match e {
        Error::Projection { .. } => e,
        other => Error::Projection { step, source: Box::new(other) },
    }
}

/// `P_C(x_0)` onto the stacked system.
pub fn fixed_target(problem: &FeasibilityProblem, opts: &DualSolveOptions) -> Result<DVector<f64>> {
    if !problem.all_affine() {
        return Err(Error::invalid("fixed target needs an affine family"));
    }
    let c = problem.intersection.as_ref().ok_or_else(|| Error::invalid("no intersection system available"))?;
    c.project(&problem.f, &problem.x0, opts)
}

/// `(max ratio, geometric mean of the last quartile of ratios)` of a `D_C` sequence.
/// The sequence is cut at its first zero.
pub fn estimate_rate(dc: &[f64]) -> Result<(f64, f64)> {
    let positive: Vec<f64> = dc.iter().copied().take_while(|&d| d > 0.0).collect();
    if positive.len() < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 positive D_C entries, have {}", positive.len())));
    }
    let ratios: Vec<f64> = positive.windows(2).map(|w| w[1] / w[0]).collect();
    let global = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail_len = (ratios.len() / 4).max(1);
    let tail = &ratios[ratios.len() - tail_len..];
    let log_mean = tail.iter().map(|r| r.ln()).sum::<f64>() / tail_len as f64;
    Ok((global, log_mean.exp()))
}

/// Independent trials on streams `0..trials`, run in parallel; output is ordered by trial.
pub fn run_batch(
    problem: &FeasibilityProblem,
    scheme: &ControlScheme,
    opts: &SolveOptions,
    trials: usize,
) -> Result<Vec<IterationTrace>> {
    (0..trials as u64).into_par_iter().map(|t| solve_with(problem, scheme, opts, t, |_, _| {})).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HalfspaceSet;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn lines() -> Vec<ConstraintSet> {
        vec![
            AffineSet::hyperplane(v(&[1.0, 1.0]), 1.0).unwrap().into(),
            AffineSet::hyperplane(v(&[1.0, -1.0]), 0.0).unwrap().into(),
        ]
    }

    #[test]
    fn feasible_start_is_immediate() {
        let p = FeasibilityProblem::new(Legendre::euclidean(2), lines(), v(&[0.5, 0.5])).unwrap();
        let t = solve(&p, &ControlScheme::greedy(), &SolveOptions::default()).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_eq!(t.iterations, 0);
        assert!(t.records.is_empty());
    }

    #[test]
    fn greedy_lines_match_alternating_projections() {
        let p = FeasibilityProblem::new(Legendre::euclidean(2), lines(), v(&[3.0, -1.0])).unwrap();
        let mut seen = Vec::new();
        let t = solve_with(&p, &ControlScheme::greedy(), &SolveOptions::default(), 0, |_, x| seen.push(x.clone())).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_relative_eq!(t.x_final, v(&[0.5, 0.5]), epsilon = 1e-8);
        // closed-form orthogonal projections onto each line, in the greedy order
        let proj = |i: usize, x: &DVector<f64>| -> DVector<f64> {
            let (a, b) = if i == 0 { (v(&[1.0, 1.0]), 1.0) } else { (v(&[1.0, -1.0]), 0.0) };
            x - &a * ((a.dot(x) - b) / a.dot(&a))
        };
        let mut x = v(&[3.0, -1.0]);
        for (k, xi) in t.xi_sequence().into_iter().enumerate() {
            x = proj(xi, &x);
            assert!((&x - &seen[k]).amax() <= 1e-8);
        }
        // alternation after the first step
        let xs = t.xi_sequence();
        assert!(xs.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn budget_exhaustion() {
        let p = FeasibilityProblem::new(Legendre::euclidean(2), lines(), v(&[3.0, -1.0])).unwrap();
        let opts = SolveOptions { max_iterations: 1, ..Default::default() };
        let t = solve(&p, &ControlScheme::cyclic(), &opts).unwrap();
        assert_eq!(t.status, Status::BudgetExhausted);
        assert_eq!(t.iterations, 1);
        assert_eq!(t.records.len(), 1);
    }

    #[test]
    fn trace_every_keeps_last() {
        let sets: Vec<ConstraintSet> = vec![
            AffineSet::hyperplane(v(&[1.0, 0.2]), 1.0).unwrap().into(),
            AffineSet::hyperplane(v(&[0.2, 1.0]), 1.0).unwrap().into(),
        ];
        let p = FeasibilityProblem::new(Legendre::euclidean(2), sets, v(&[0.0, 0.0])).unwrap();
        let opts = SolveOptions { trace_every: 3, ..Default::default() };
        let t = solve(&p, &ControlScheme::cyclic(), &opts).unwrap();
        assert_eq!(t.records.last().unwrap().k + 1, t.iterations);
        assert!(t.records.iter().rev().skip(1).all(|r| r.k % 3 == 0));
    }

    #[test]
    fn jsonl_schema() {
        let p = FeasibilityProblem::new(Legendre::euclidean(2), lines(), v(&[3.0, -1.0])).unwrap();
        let opts = SolveOptions { compute_dc: true, ..Default::default() };
        let t = solve(&p, &ControlScheme::cyclic(), &opts).unwrap();
        for line in t.to_jsonl().lines() {
            let rec: serde_json::Value = serde_json::from_str(line).unwrap();
            let obj = rec.as_object().unwrap();
            let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
            keys.sort();
            assert_eq!(keys, vec!["DC", "d_sel", "k", "res", "t_ms", "xi"]);
            assert!(obj["k"].is_u64() && obj["xi"].is_u64() && obj["DC"].is_f64());
        }
    }

    #[test]
    fn estimate_rate_examples() {
        let geo: Vec<f64> = (0..20).map(|k| 0.3_f64.powi(k)).collect();
        let (g, t) = estimate_rate(&geo).unwrap();
        assert_relative_eq!(g, 0.3, epsilon = 1e-12);
        assert_relative_eq!(t, 0.3, epsilon = 1e-12);
        let mut cut = geo.clone();
        cut[12] = 0.0;
        cut[13] = 5.0;
        let (g, _) = estimate_rate(&cut).unwrap();
        assert_relative_eq!(g, 0.3, epsilon = 1e-12);
        assert!(matches!(estimate_rate(&geo[..9]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fixed_target_examples() {
        let p = FeasibilityProblem::new(Legendre::euclidean(2), lines(), v(&[0.5, 0.5])).unwrap();
        assert_eq!(fixed_target(&p, &DualSolveOptions::default()).unwrap(), v(&[0.5, 0.5]));
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let sets = vec![AffineSet::general(a.clone(), v(&[1.0])).unwrap().into()];
        let x0 = v(&[1.0, -1.0, 0.5]);
        let p = FeasibilityProblem::new(Legendre::euclidean(3), sets, x0.clone()).unwrap();
        let oracle = &x0 - crate::linalg::pinv(&a) * (&a * &x0 - v(&[1.0]));
        assert_relative_eq!(fixed_target(&p, &DualSolveOptions::default()).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn halfspace_family_runs() {
        let sets: Vec<ConstraintSet> = vec![
            HalfspaceSet::new(v(&[1.0, 1.0]), 1.0).unwrap().into(),
            HalfspaceSet::new(v(&[-1.0, 2.0]), 0.5).unwrap().into(),
        ];
        let p = FeasibilityProblem::new(Legendre::boltzmann_shannon(2), sets, v(&[2.0, 3.0])).unwrap();
        assert!(p.intersection.is_none());
        let t = solve(&p, &ControlScheme::greedy(), &SolveOptions::default()).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert!(t.x_final.iter().all(|&x| x > 0.0));
        let opts = SolveOptions { compute_dc: true, ..Default::default() };
        assert!(solve(&p, &ControlScheme::greedy(), &opts).is_err());
    }

    #[test]
    fn projection_errors_carry_step() {
        // second hyperplane is unreachable under positivity, so step 1 fails
        let sets: Vec<ConstraintSet> = vec![
            AffineSet::hyperplane(v(&[1.0, 1.0]), 1.0).unwrap().into(),
            AffineSet::hyperplane(v(&[1.0, 1.0]), -1.0).unwrap().into(),
        ];
        let p = FeasibilityProblem::new(Legendre::boltzmann_shannon(2), sets, v(&[2.0, 3.0])).unwrap();
        match solve(&p, &ControlScheme::cyclic(), &SolveOptions::default()) {
            Err(Error::Projection { step, .. }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batch_is_ordered_and_deterministic() {
        let sets: Vec<ConstraintSet> = (0..3)
            .map(|i| {
                let mut a = DVector::zeros(3);
                a[i] = 1.0;
                AffineSet::hyperplane(a, 0.5).unwrap().into()
            })
            .collect();
        let p = FeasibilityProblem::new(Legendre::euclidean(3), sets, v(&[0.0, 0.0, 0.0])).unwrap();
        let scheme = ControlScheme::random(None, 17);
        let a = run_batch(&p, &scheme, &SolveOptions::default(), 16).unwrap();
        let b = run_batch(&p, &scheme, &SolveOptions::default(), 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.xi_sequence(), y.xi_sequence());
        }
        let single = solve_with(&p, &scheme, &SolveOptions::default(), 5, |_, _| {}).unwrap();
        assert_eq!(single.xi_sequence(), a[5].xi_sequence());
    }

    fn random_problem(rng: &mut ChaCha8Rng, f: Legendre, m: usize) -> FeasibilityProblem {
        let n = f.dim();
        let z = DVector::from_fn(n, |_, _| rng.random_range(0.3..2.0));
        let sets = (0..m)
            .map(|_| {
                let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let b = a.dot(&z);
                AffineSet::hyperplane(a, b).unwrap().into()
            })
            .collect();
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(0.3..2.0));
        FeasibilityProblem::new(f, sets, x0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn telescoping_monotone_fejer(seed in any::<u64>(), ctl in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = if seed % 2 == 0 { Legendre::euclidean(5) } else { Legendre::boltzmann_shannon(5) };
            let p = random_problem(&mut rng, f, 3);
            let scheme = match ctl {
                0 => ControlScheme::cyclic(),
                1 => ControlScheme::greedy(),
                2 => ControlScheme::random(None, seed),
                _ => ControlScheme::adaptive(None, seed),
            };
            let opts = SolveOptions { compute_dc: true, max_iterations: 60, ..Default::default() };
            let xstar = fixed_target(&p, &opts.dual).unwrap();
            let mut prev = p.x0.clone();
            let mut fejer_ok = true;
            let mut moves = 0.0;
            let t = solve_with(&p, &scheme, &opts, 0, |_, x| {
                fejer_ok &= divergence(&p.f, &xstar, x) <= divergence(&p.f, &xstar, &prev) + 1e-9;
                moves += divergence(&p.f, x, &prev);
                prev = x.clone();
            }).unwrap();
            prop_assert!(fejer_ok);
            let dc = t.dc_sequence().unwrap();
            let scale = 1.0 + dc[0];
            prop_assert!(moves <= divergence(&p.f, &xstar, &p.x0) + 1e-8 * scale);
            for (k, r) in t.records.iter().enumerate() {
                prop_assert!((dc[k + 1] + r.d_sel - dc[k]).abs() <= 1e-7 * scale);
                prop_assert!(dc[k + 1] <= dc[k] + 1e-9 * scale);
            }
        }
    }
}
