//! Sketched affine families `C_i = {x : S_iᵀ A x = S_iᵀ b}` built from a base system.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineSet, ConstraintSet};
use crate::rates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SketchKind {
    /// `S_i = e_i`.
    Rows,
    /// Consecutive blocks of `tau` rows; the last block may be shorter.
    Blocks { tau: usize },
    /// `count` dense standard-normal sketches of width `tau`.
    Gaussian { count: usize, tau: usize, #[serde(default)] seed: u64 },
}

impl std::str::FromStr for SketchKind {
    type Err = Error;

    /// `rows`, `blocks:<τ>` or `gaussian:<s>,<τ>` (seed 0).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse sketch '{s}'; expected rows|blocks:<τ>|gaussian:<s>,<τ>"));
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        if s == "rows" {
            return Ok(SketchKind::Rows);
        }
        if let Some(rest) = s.strip_prefix("blocks:") {
            return Ok(SketchKind::Blocks { tau: parse(rest)? });
        }
        if let Some(rest) = s.strip_prefix("gaussian:") {
            let (count, tau) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(SketchKind::Gaussian { count: parse(count)?, tau: parse(tau)?, seed: 0 });
        }
        Err(bad())
    }
}

impl SketchKind {
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            SketchKind::Gaussian { count, tau, .. } => SketchKind::Gaussian { count, tau, seed },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchFamily {
    kind: SketchKind,
    a: DMatrix<f64>,
    b: DVector<f64>,
    sketches: Vec<DMatrix<f64>>,
}

impl SketchFamily {
    /// Draws (and freezes) the sketches for the base system `A x = b`.
    pub fn new(kind: SketchKind, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || a.ncols() == 0 {
            return Err(Error::invalid("base system is empty"));
        }
        if b.len() != m {
            return Err(Error::Dimension { expected: m, got: b.len() });
        }
        let unit = |i: usize| DMatrix::from_fn(m, 1, |r, _| if r == i { 1.0 } else { 0.0 });
        let sketches = match kind {
            SketchKind::Rows => (0..m).map(unit).collect(),
            SketchKind::Blocks { tau } => {
                if tau == 0 {
                    return Err(Error::invalid("block size must be positive"));
                }
                (0..m)
                    .step_by(tau)
                    .map(|start| {
                        let w = tau.min(m - start);
                        DMatrix::from_fn(m, w, |r, c| if r == start + c { 1.0 } else { 0.0 })
                    })
                    .collect()
            }
            SketchKind::Gaussian { count, tau, seed } => {
                if count == 0 || tau == 0 {
                    return Err(Error::invalid("gaussian sketch needs positive count and width"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count).map(|_| DMatrix::from_fn(m, tau, |_, _| StandardNormal.sample(&mut rng))).collect()
            }
        };
        let family = SketchFamily { kind, a, b, sketches };
        for (i, s) in family.sketches.iter().enumerate() {
            if (s.transpose() * &family.a).iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroOperator(format!("sketched operator {i} is zero")));
            }
        }
        Ok(family)
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn system(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a, &self.b)
    }

    pub fn sketches(&self) -> &[DMatrix<f64>] {
        &self.sketches
    }

    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }

    /// Hyperplanes for row sketches, general affine sets otherwise.
    pub fn build_sets(&self) -> Result<Vec<ConstraintSet>> {
        self.sketches
            .iter()
            .map(|s| {
                let sa = s.transpose() * &self.a;
                let sb = s.transpose() * &self.b;
                let set = match self.kind {
                    SketchKind::Rows => AffineSet::hyperplane(sa.row(0).transpose(), sb[0])?,
                    _ => AffineSet::general(sa, sb)?,
                };
                Ok(set.into())
            })
            .collect()
    }

    /// The unsketched system as one affine set.
    pub fn full_system(&self) -> Result<AffineSet> {
        AffineSet::general(self.a.clone(), self.b.clone())
    }

    /// Whether the sketched family has the same solutions as `A x = b` under weights `mu`.
    pub fn is_exact(&self, mu: Option<&[f64]>) -> Result<bool> {
        let uniform = vec![1.0 / self.len() as f64; self.len()];
        let e = rates::exactness_matrix(&self.a, &self.sketches, mu.unwrap_or(&uniform))?;
        Ok(rates::check_exactness(&self.a, &e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::ControlScheme;
    use crate::legendre::Legendre;
    use crate::oracles;
    use crate::solver::{solve, FeasibilityProblem, SolveOptions, Status};
    use rand::Rng;

    #[test]
    fn parse_cli_syntax() {
        assert_eq!("rows".parse::<SketchKind>().unwrap(), SketchKind::Rows);
        assert_eq!("blocks:2".parse::<SketchKind>().unwrap(), SketchKind::Blocks { tau: 2 });
        assert_eq!("gaussian:5,2".parse::<SketchKind>().unwrap(), SketchKind::Gaussian { count: 5, tau: 2, seed: 0 });
        assert!("blocks".parse::<SketchKind>().is_err());
        assert!("gaussian:5".parse::<SketchKind>().is_err());
        let k: SketchKind = serde_json::from_str(r#"{"kind":"gaussian","count":3,"tau":1,"seed":4}"#).unwrap();
        assert_eq!(k, SketchKind::Gaussian { count: 3, tau: 1, seed: 4 });
    }

    #[test]
    fn rows_and_blocks() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 3.0, 0.0, 1.0]);
        let fam = SketchFamily::new(SketchKind::Rows, a.clone(), DVector::from_element(3, 1.0)).unwrap();
        let sets = fam.build_sets().unwrap();
        assert_eq!(sets.len(), 3);
        for (i, s) in sets.iter().enumerate() {
            let ConstraintSet::Affine(AffineSet::Hyperplane { a: row, b }) = s else { panic!("expected hyperplane") };
            assert_eq!(row, &a.row(i).transpose());
            assert_eq!(*b, 1.0);
        }
        let a4 = DMatrix::from_fn(4, 5, |i, j| (i + j) as f64 + 1.0);
        let fam = SketchFamily::new(SketchKind::Blocks { tau: 2 }, a4, DVector::zeros(4)).unwrap();
        let sets = fam.build_sets().unwrap();
        assert_eq!(sets.len(), 2);
        assert!(sets.iter().all(|s| matches!(s, ConstraintSet::Affine(AffineSet::General { a, .. }) if a.nrows() == 2)));
    }

    #[test]
    fn zero_sketched_operator_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(SketchFamily::new(SketchKind::Rows, a, DVector::zeros(2)), Err(Error::ZeroOperator(_))));
    }

    #[test]
    fn gaussian_families_are_frozen_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10 {
            let a = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
            let kind = SketchKind::Gaussian { count: 5, tau: 2, seed: trial };
            let f1 = SketchFamily::new(kind, a.clone(), DVector::zeros(4)).unwrap();
            let f2 = SketchFamily::new(kind, a, DVector::zeros(4)).unwrap();
            assert_eq!(f1, f2);
            assert!(f1.is_exact(None).unwrap());
        }
    }

    #[test]
    fn minimal_norm_solution_from_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (m, n) = (3, 6);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let bmat = &g * g.transpose() + DMatrix::identity(n, n);
        let fam = SketchFamily::new(SketchKind::Rows, a.clone(), b.clone()).unwrap();
        let f = Legendre::quadratic(bmat.clone()).unwrap();
        let p = FeasibilityProblem::from_gradient_zero(f, fam.build_sets().unwrap()).unwrap();
        let opts = SolveOptions { stop_residual: 1e-12, max_iterations: 100_000, ..Default::default() };
        let t = solve(&p, &ControlScheme::cyclic(), &opts).unwrap();
        assert_eq!(t.status, Status::Converged);
        let oracle = oracles::quadratic_projection_oracle(&bmat, &a, &b, &DVector::zeros(n));
        assert!((t.x_final - oracle).amax() < 1e-6);
    }
}
