use std::hint::black_box;

use bregproj::ot::{kl_project_marginal, solve_ot};
use bregproj::{
    project_affine, project_hyperplane, solve, AffineSet, ConstraintSet, ControlScheme, DMatrix, DVector, DualSolveOptions,
    FeasibilityProblem, Legendre, OtProblem, SolveOptions,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

// deterministic, well-conditioned test data without pulling in an RNG
fn entry(i: usize, j: usize) -> f64 {
    let t = (i * 31 + j * 17) as f64;
    if i == j { 2.0 } else { 0.3 * (0.7 * t).sin() }
}

fn matrix(m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |i, j| entry(i, j).abs() + 0.05)
}

fn generators(n: usize) -> Vec<Legendre> {
    vec![Legendre::euclidean(n), Legendre::boltzmann_shannon(n), Legendre::burg(n), Legendre::hellinger(n)]
}

fn start(f: &Legendre, n: usize) -> DVector<f64> {
    let x = DVector::from_fn(n, |i, _| 0.2 + 0.6 * ((i as f64) * 0.37).sin().abs());
    f.clamp_interior(&x)
}

fn hyperplane(c: &mut Criterion) {
    let mut g = c.benchmark_group("hyperplane");
    let opts = DualSolveOptions::default();
    for n in [16, 256] {
        let a = matrix(1, n).row(0).transpose();
        for f in generators(n) {
            let x = start(&f, n);
            let b = a.dot(&x) * 1.3;
            g.bench_with_input(BenchmarkId::new(f.name(), n), &n, |bch, _| {
                bch.iter(|| project_hyperplane(&f, &a, black_box(b), &x, &opts).unwrap())
            });
        }
    }
    g.finish();
}

fn affine(c: &mut Criterion) {
    let mut g = c.benchmark_group("affine");
    let opts = DualSolveOptions::default();
    for (m, n) in [(4, 16), (16, 64)] {
        let a = matrix(m, n);
        for f in generators(n) {
            let x = start(&f, n);
            let b = &a * &x * 1.2;
            g.bench_with_input(BenchmarkId::new(f.name(), format!("{m}x{n}")), &n, |bch, _| {
                bch.iter(|| project_affine(&f, &a, &b, black_box(&x), &opts).unwrap())
            });
        }
    }
    g.finish();
}

fn ot_problem(k: usize) -> OtProblem {
    let cost: Vec<f64> = (0..k * k).map(|i| ((i / k) as f64 - (i % k) as f64).powi(2) / (k * k) as f64).collect();
    let mu = DVector::from_fn(k, |i, _| 1.0 + (i % 3) as f64);
    let nu = DVector::from_fn(k, |i, _| 1.0 + (i % 5) as f64);
    let (mu, nu) = (&mu / mu.sum(), &nu / nu.sum());
    OtProblem::new(vec![k, k], cost, 0.1, vec![mu, nu]).unwrap()
}

fn ot(c: &mut Criterion) {
    let mut g = c.benchmark_group("ot");
    for k in [32, 128] {
        let p = ot_problem(k);
        g.bench_with_input(BenchmarkId::new("marginal_projection", k), &k, |bch, _| {
            bch.iter(|| kl_project_marginal(p.kernel(), 1, &p.marginals()[1]).unwrap())
        });
        let opts = SolveOptions { stop_residual: 1e-9, ..SolveOptions::default() };
        g.bench_with_input(BenchmarkId::new("sinkhorn", k), &k, |bch, _| {
            bch.iter(|| solve_ot(&p, &ControlScheme::cyclic(), &opts).unwrap())
        });
    }
    g.finish();
}

fn feasibility(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(20);
    let (m, n) = (8, 32);
    let a = matrix(m, n);
    let opts = SolveOptions { stop_residual: 1e-9, ..SolveOptions::default() };
    for f in [Legendre::euclidean(n), Legendre::boltzmann_shannon(n)] {
        let x = start(&f, n);
        let b = &a * &x * 1.1;
        let sets: Vec<ConstraintSet> = (0..m)
            .map(|i| ConstraintSet::Affine(AffineSet::hyperplane(a.row(i).transpose(), b[i]).unwrap()))
            .collect();
        let x0 = f.gradient_zero_point().unwrap();
        let problem = FeasibilityProblem::new(f.clone(), sets, x0).unwrap();
        for scheme in [ControlScheme::cyclic(), ControlScheme::greedy(), ControlScheme::random(None, 7), ControlScheme::adaptive(None, 7)] {
            g.bench_function(BenchmarkId::new(f.name(), scheme.name()), |bch| {
                bch.iter(|| solve(&problem, &scheme, &opts).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, hyperplane, affine, ot, feasibility);
criterion_main!(benches);
