//! Set-control sequences: which constraint set to project onto next.
//!
//! Indices are 0-based throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum ControlKind {
    Cyclic,
    /// Most remote set; ties go to the smallest index.
    Greedy,
    /// I.i.d. draws from `μ` (uniform when absent).
    Random { mu: Option<Vec<f64>> },
    /// Draws with probability proportional to `μ_i · D_{C_i}(x_k)`.
    Adaptive { mu: Option<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlScheme {
    pub kind: ControlKind,
    /// Ignored by the deterministic controls.
    pub seed: u64,
}

impl ControlScheme {
    pub fn cyclic() -> Self {
        ControlScheme { kind: ControlKind::Cyclic, seed: 0 }
    }

    pub fn greedy() -> Self {
        ControlScheme { kind: ControlKind::Greedy, seed: 0 }
    }

    pub fn random(mu: Option<Vec<f64>>, seed: u64) -> Self {
        ControlScheme { kind: ControlKind::Random { mu }, seed }
    }

    pub fn adaptive(mu: Option<Vec<f64>>, seed: u64) -> Self {
        ControlScheme { kind: ControlKind::Adaptive { mu }, seed }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ControlKind::Cyclic => "cyclic",
            ControlKind::Greedy => "greedy",
            ControlKind::Random { .. } => "random",
            ControlKind::Adaptive { .. } => "adaptive",
        }
    }

    /// Whether `next_index` needs the per-set distances at the current iterate.
    pub fn needs_distances(&self) -> bool {
        matches!(self.kind, ControlKind::Greedy | ControlKind::Adaptive { .. })
    }

    pub fn is_random(&self) -> bool {
        matches!(self.kind, ControlKind::Random { .. } | ControlKind::Adaptive { .. })
    }

    /// Sampling weights resolved against `m` sets (uniform for deterministic controls).
    pub fn weights(&self, m: usize) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(Error::invalid("control needs at least one set"));
        }
        match &self.kind {
            ControlKind::Random { mu: Some(mu) } | ControlKind::Adaptive { mu: Some(mu) } => {
                check_probability(mu, m)?;
                Ok(mu.clone())
            }
            _ => Ok(vec![1.0 / m as f64; m]),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Fresh state for one run over `m` sets. `stream` selects an independent
    /// random stream for the same seed (one per trial in batch runs).
    pub fn start(&self, m: usize, stream: u64) -> Result<ControlState> {
        let mu = self.weights(m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Ok(ControlState { kind: self.kind.clone(), m, mu, k: 0, rng })
    }
}

pub(crate) fn check_probability(mu: &[f64], m: usize) -> Result<()> {
    if mu.len() != m {
        return Err(Error::Dimension { expected: m, got: mu.len() });
    }
    if mu.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid("probability weights must be finite and nonnegative"));
    }
    let total: f64 = mu.iter().sum();
    if total == 0.0 {
        return Err(Error::invalid("probability weights are all zero"));
    }
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("probability weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Mutable per-run control state.
#[derive(Debug, Clone)]
pub struct ControlState {
    kind: ControlKind,
    m: usize,
    mu: Vec<f64>,
    k: usize,
    rng: ChaCha8Rng,
}

impl ControlState {
    pub fn step(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.mu
    }

    /// Chooses `ξ_k` and advances the step counter.
    pub fn next_index(&mut self, distances: Option<&[f64]>) -> Result<usize> {
        let idx = match &self.kind {
            ControlKind::Cyclic => self.k % self.m,
            ControlKind::Greedy => {
                let d = self.checked_distances(distances)?;
                argmax_first(d)
            }
            ControlKind::Random { .. } => sample(&mut self.rng, &self.mu),
            ControlKind::Adaptive { .. } => {
                let d = self.checked_distances(distances)?;
                let p = adaptive_probabilities(&self.mu, d)?;
                sample(&mut self.rng, &p)
            }
        };
        self.k += 1;
        Ok(idx)
    }

    fn checked_distances<'a>(&self, distances: Option<&'a [f64]>) -> Result<&'a [f64]> {
        let d = distances.ok_or(Error::MissingDistances)?;
        if d.len() != self.m {
            return Err(Error::Dimension { expected: self.m, got: d.len() });
        }
        check_distances(d)?;
        Ok(d)
    }
}

fn check_distances(d: &[f64]) -> Result<()> {
    if d.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("distances must be nonnegative"));
    }
    Ok(())
}

fn argmax_first(d: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in d.iter().enumerate().skip(1) {
        if v > d[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw; zero-weight entries are never returned.
fn sample(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let total: f64 = p.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// `p_i = μ_i d_i / Σ_j μ_j d_j`, or `μ` when every weighted distance vanishes.
pub fn adaptive_probabilities(mu: &[f64], distances: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != distances.len() {
        return Err(Error::Dimension { expected: mu.len(), got: distances.len() });
    }
    check_distances(distances)?;
    let weighted: Vec<f64> = mu.iter().zip(distances).map(|(&m, &d)| m * d).collect();
    let total: f64 = weighted.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(weighted.into_iter().map(|w| w / total).collect())
    } else {
        Ok(mu.to_vec())
    }
}

/// `β = 1 + Var_μ[d/Ē] = E_μ[d²] / Ē²` with `Ē = E_μ[d]`; 1 when all distances vanish.
pub fn beta_factor(mu: &[f64], distances: &[f64]) -> Result<f64> {
    if mu.len() != distances.len() {
        return Err(Error::Dimension { expected: mu.len(), got: distances.len() });
    }
    check_distances(distances)?;
    let mean: f64 = mu.iter().zip(distances).map(|(&m, &d)| m * d).sum();
    if mean == 0.0 {
        return Ok(1.0);
    }
    let second: f64 = mu.iter().zip(distances).map(|(&m, &d)| m * (d / mean) * (d / mean)).sum();
    Ok(second.max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ControlName {
    Cyclic,
    Greedy,
    Random,
    Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ControlSpec {
    control: ControlName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<Vec<f64>>,
    #[serde(default)]
    seed: u64,
}

impl Serialize for ControlScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (control, mu) = match &self.kind {
            ControlKind::Cyclic => (ControlName::Cyclic, None),
            ControlKind::Greedy => (ControlName::Greedy, None),
            ControlKind::Random { mu } => (ControlName::Random, mu.clone()),
            ControlKind::Adaptive { mu } => (ControlName::Adaptive, mu.clone()),
        };
        ControlSpec { control, mu, seed: self.seed }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ControlScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = ControlSpec::deserialize(d)?;
        if let Some(mu) = &spec.mu {
            check_probability(mu, mu.len()).map_err(serde::de::Error::custom)?;
        }
        let kind = match spec.control {
            ControlName::Cyclic => ControlKind::Cyclic,
            ControlName::Greedy => ControlKind::Greedy,
            ControlName::Random => ControlKind::Random { mu: spec.mu },
            ControlName::Adaptive => ControlKind::Adaptive { mu: spec.mu },
        };
        Ok(ControlScheme { kind, seed: spec.seed })
    }
}

impl std::str::FromStr for ControlScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(ControlScheme::cyclic()),
            "greedy" => Ok(ControlScheme::greedy()),
            "random" => Ok(ControlScheme::random(None, 0)),
            "adaptive" => Ok(ControlScheme::adaptive(None, 0)),
            other => Err(Error::invalid(format!("unknown control '{other}'"))),
        }
    }
}
