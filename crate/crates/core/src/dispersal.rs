//! Chunk-to-node assignment and the probabilistic bounds behind it.
//!
//! Each node receives `k = M / (N lambda)` chunk indices drawn i.i.d. and
//! uniformly with replacement, so an assignment is a multiset and coverage
//! counts distinct indices. All logarithms are natural.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Largest subset count `verify_design` will enumerate.
pub const EXHAUSTIVE_CAP: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DispersalError {
    #[error("invalid dispersal parameters: {0}")]
    Parameter(String),
    #[error("exhaustive check needs {subsets} subsets, above the cap of {cap}")]
    Complexity { subsets: u128, cap: u64 },
    #[error("bound inapplicable: {0}")]
    Domain(String),
    #[error("malformed design: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersalParams {
    /// Fraction of nodes a retriever hears from.
    pub gamma: f64,
    /// Fraction of distinct chunks those nodes must cover.
    pub eta: f64,
    /// Dispersal efficiency: `M / (N k)`.
    pub lambda: f64,
}

impl DispersalParams {
    pub fn validate(&self) -> Result<(), DispersalError> {
        for (name, v) in [("gamma", self.gamma), ("eta", self.eta), ("lambda", self.lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(DispersalError::Parameter(format!("{name}={v} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// `gamma / lambda`, the number of draws per chunk seen by a retriever.
    pub fn rho(&self) -> f64 {
        self.gamma / self.lambda
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feasibility {
    Infeasible,
    Feasible,
    /// `eta <= gamma/lambda <= ln(1/(1-eta))`: neither test decides.
    Indeterminate,
}

pub fn feasibility(p: &DispersalParams) -> Feasibility {
    let rho = p.rho();
    if rho < p.eta {
        Feasibility::Infeasible
    } else if rho > (1.0 / (1.0 - p.eta)).ln() {
        Feasibility::Feasible
    } else {
        Feasibility::Indeterminate
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DispersalDesign {
    pub m: usize,
    pub n: usize,
    pub k_per_node: usize,
    pub assignments: Vec<Vec<usize>>,
    pub seed: u64,
}

/// Chunks per node for a target efficiency, rounded to the nearest integer.
pub fn chunks_per_node(m: usize, n: usize, lambda: f64) -> Result<usize, DispersalError> {
    if m == 0 || n == 0 {
        return Err(DispersalError::Parameter("need at least one chunk and one node".into()));
    }
    if !(lambda > 0.0) {
        return Err(DispersalError::Parameter(format!("lambda={lambda} must be positive")));
    }
    let exact = m as f64 / (n as f64 * lambda);
    let k = exact.round();
    if k < 1.0 {
        return Err(DispersalError::Parameter(format!(
            "M/(N lambda) = {exact:.3} rounds to zero chunks per node"
        )));
    }
    Ok(k as usize)
}

/// Random design: every node draws `k` indices i.i.d. uniform in `[0, M)`.
pub fn assign_chunks(m: usize, n: usize, lambda: f64, seed: u64) -> Result<DispersalDesign, DispersalError> {
    let k = chunks_per_node(m, n, lambda)?;
    let assignments = (0..n)
        .map(|node| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, node as u64));
            (0..k).map(|_| rng.gen_range(0..m)).collect()
        })
        .collect();
    Ok(DispersalDesign {
        m,
        n,
        k_per_node: k,
        assignments,
        seed,
    })
}

impl DispersalDesign {
    /// `M / (N k)` after rounding `k`.
    pub fn effective_lambda(&self) -> f64 {
        self.m as f64 / (self.n as f64 * self.k_per_node as f64)
    }

    /// `M` over the number of chunks actually delivered, counting each
    /// node's repeated draws once.
    pub fn delivered_lambda(&self) -> f64 {
        let sent: usize = (0..self.n).map(|i| self.distinct_chunks(i).len()).sum();
        self.m as f64 / sent as f64
    }

    /// Fraction of distinct chunks held by the nodes in `subset`.
    pub fn coverage(&self, subset: &[usize]) -> f64 {
        let mut seen = vec![false; self.m];
        let mut distinct = 0;
        for &node in subset {
            for &c in &self.assignments[node] {
                if !seen[c] {
                    seen[c] = true;
                    distinct += 1;
                }
            }
        }
        distinct as f64 / self.m as f64
    }

    /// Distinct chunk indices assigned to `node`, ascending.
    pub fn distinct_chunks(&self, node: usize) -> Vec<usize> {
        self.assignments[node].iter().copied().sorted().dedup().collect()
    }

    /// One header line, then one line of chunk indices per node.
    pub fn to_text(&self) -> String {
        let mut s = format!("design {} {} {} {}\n", self.m, self.n, self.k_per_node, self.seed);
        for a in &self.assignments {
            s.push_str(&a.iter().join(" "));
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for DispersalDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for DispersalDesign {
    type Err = DispersalError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| DispersalError::Parse("empty input".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "design" {
            return Err(DispersalError::Parse(format!("bad header {header:?}")));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| DispersalError::Parse(format!("{s:?}: {e}")))
        };
        let (m, n, k, seed) = (
            num(fields[1])? as usize,
            num(fields[2])? as usize,
            num(fields[3])? as usize,
            num(fields[4])?,
        );
        let assignments: Vec<Vec<usize>> = lines
            .map(|l| l.split_whitespace().map(|t| num(t).map(|v| v as usize)).collect())
            .collect::<Result<_, _>>()?;
        if assignments.len() != n {
            return Err(DispersalError::Parse(format!(
                "expected {n} node lines, got {}",
                assignments.len()
            )));
        }
        for (node, a) in assignments.iter().enumerate() {
            if a.len() != k || a.iter().any(|&c| c >= m) {
                return Err(DispersalError::Parse(format!(
                    "node {node} needs {k} indices below {m}"
                )));
            }
        }
        Ok(Self {
            m,
            n,
            k_per_node: k,
            assignments,
            seed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyMode {
    Exhaustive,
    MonteCarlo { trials: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FailureEstimate {
    pub rate: f64,
    pub failures: u64,
    pub subsets_checked: u64,
    /// Binomial standard error of `rate`; zero in exhaustive mode.
    pub std_error: f64,
}

/// Number of nodes a retriever is guaranteed to hear from.
pub fn subset_size(n: usize, gamma: f64) -> usize {
    ((gamma * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Fraction of `ceil(gamma N)`-node subsets whose coverage falls below `eta`.
pub fn verify_design(
    design: &DispersalDesign,
    gamma: f64,
    eta: f64,
    mode: VerifyMode,
) -> Result<FailureEstimate, DispersalError> {
    let s = subset_size(design.n, gamma);
    let fails = |subset: &[usize]| design.coverage(subset) < eta - 1e-12;
    match mode {
        VerifyMode::Exhaustive => {
            let total = binomial(design.n as u64, s as u64);
            if total > EXHAUSTIVE_CAP as u128 {
                return Err(DispersalError::Complexity {
                    subsets: total,
                    cap: EXHAUSTIVE_CAP,
                });
            }
            let failures = (0..design.n)
                .combinations(s)
                .filter(|c| fails(c))
                .count() as u64;
            Ok(FailureEstimate {
                rate: failures as f64 / total as f64,
                failures,
                subsets_checked: total as u64,
                std_error: 0.0,
            })
        }
        VerifyMode::MonteCarlo { trials, seed } => {
            if trials == 0 {
                return Err(DispersalError::Parameter("need at least one trial".into()));
            }
            let failures = (0..trials)
                .into_par_iter()
                .filter(|&trial| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, trial));
                    let subset = sample(&mut rng, design.n, s).into_vec();
                    fails(&subset)
                })
                .count() as u64;
            let rate = failures as f64 / trials as f64;
            Ok(FailureEstimate {
                rate,
                failures,
                subsets_checked: trials,
                std_error: (rate * (1.0 - rate) / trials as f64).sqrt(),
            })
        }
    }
}

/// `f(eta, rho) = (x - 1)^2 / (e^rho (x + 1))` with `x = (1 - eta) e^rho`.
///
/// Drawing `rho M` balls into `M` bins leaves fewer than `eta M` distinct
/// bins with probability at most `exp(-f M)`. The bound needs `x > 1`.
pub fn tail_bound(eta: f64, rho: f64) -> Result<f64, DispersalError> {
    let e = rho.exp();
    let x = (1.0 - eta) * e;
    if !(x > 1.0 + 1e-12) {
        return Err(DispersalError::Domain(format!(
            "(1 - eta) e^rho = {x:.6} must exceed 1"
        )));
    }
    Ok((x - 1.0).powi(2) / (e * (x + 1.0)))
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

/// Union bound over all `gamma N` subsets:
/// `exp(N H(gamma) - M f(eta, gamma / lambda))`. May exceed one.
pub fn invalid_design_bound(
    n: usize,
    m: usize,
    gamma: f64,
    eta: f64,
    lambda: f64,
) -> Result<f64, DispersalError> {
    let p = DispersalParams { gamma, eta, lambda };
    p.validate()?;
    if feasibility(&p) != Feasibility::Feasible {
        return Err(DispersalError::Domain(format!(
            "gamma/lambda = {:.4} is not above ln(1/(1-eta)) = {:.4}",
            p.rho(),
            (1.0 / (1.0 - eta)).ln()
        )));
    }
    let f = tail_bound(eta, p.rho())?;
    Ok((n as f64 * binary_entropy(gamma) - m as f64 * f).exp())
}

/// Observed probability that `draws` uniform balls in `m` bins occupy fewer
/// than `eta m` bins.
pub fn simulate_shortfall(m: usize, draws: usize, eta: f64, trials: u64, seed: u64) -> f64 {
    let hits = (0..trials)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, trial));
            let mut seen = vec![false; m];
            let mut distinct = 0usize;
            for _ in 0..draws {
                let b = rng.gen_range(0..m);
                if !seen[b] {
                    seen[b] = true;
                    distinct += 1;
                }
            }
            (distinct as f64) < eta * m as f64
        })
        .count();
    hits as f64 / trials as f64
}
