//! Seeded sparse-graph erasure codes over byte-wise XOR.
//!
//! Every code in this module is systematic: coded symbols `[0, k)` are the
//! inputs and parity symbol `k + i` is the XOR of the systematic members of
//! parity equation `i`. Equation `i` therefore always contains exactly one
//! parity index, and the XOR of all of its members is the zero symbol.
//!
//! Codes are pure functions of `(k, rate, max_eq_degree, seed)`, so every
//! party that agrees on a seed also agrees on the code.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A coded symbol. All symbols handled by one code share a length.
pub type Symbol = Vec<u8>;

/// Errors raised by code construction, encoding and parsing.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("invalid code parameters: {0}")]
    Parameter(String),
    #[error("expected {expected} symbols, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("symbol {index} has length {actual}, expected {expected}")]
    SymbolSize {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("no code passed the undecodable-ratio gate after {attempts} attempts")]
    BadCode { attempts: u32 },
    #[error("malformed code description: {0}")]
    Parse(String),
}

/// XORs `src` into `dst`. Both slices must have the same length.
pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

/// A coding ratio of the form `1/m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rate {
    inverse: usize,
}

impl Rate {
    pub fn one_over(inverse: usize) -> Result<Self, CodecError> {
        if inverse == 0 {
            return Err(CodecError::Parameter("rate denominator must be positive".into()));
        }
        Ok(Self { inverse })
    }

    /// Accepts a ratio such as `0.25` whose reciprocal is an integer.
    pub fn from_f64(ratio: f64) -> Result<Self, CodecError> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(CodecError::Parameter(format!("rate {ratio} outside (0, 1]")));
        }
        let inverse = (1.0 / ratio).round();
        if ((1.0 / ratio) - inverse).abs() > 1e-9 {
            return Err(CodecError::Parameter(format!(
                "rate {ratio} is not of the form 1/m"
            )));
        }
        Self::one_over(inverse as usize)
    }

    pub fn inverse(self) -> usize {
        self.inverse
    }

    pub fn as_f64(self) -> f64 {
        1.0 / self.inverse as f64
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1/{}", self.inverse)
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ratio = f64::deserialize(deserializer)?;
        Rate::from_f64(ratio).map_err(serde::de::Error::custom)
    }
}

/// Sorted coded-symbol indices whose XOR must be the zero symbol.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParityEquation(Vec<usize>);

impl ParityEquation {
    fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// XOR of the equation's members over a full codeword.
    pub fn evaluate(&self, codeword: &[Symbol]) -> Symbol {
        let mut acc = vec![0u8; codeword[self.0[0]].len()];
        for &i in &self.0 {
            xor_into(&mut acc, &codeword[i]);
        }
        acc
    }
}

/// A systematic sparse erasure code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeSpec {
    n_systematic: usize,
    n_coded: usize,
    max_eq_degree: usize,
    seed: u64,
    parity_checks: Vec<ParityEquation>,
}

/// Number of systematic symbols mixed into each parity symbol.
///
/// Dense rows on small layers create tiny stopping sets (with `k = 8` and
/// seven inputs per row, any three erased inputs stall the peeler), so the
/// weight grows with `log2 k` and saturates at `d - 1`.
fn row_weight(n_systematic: usize, max_eq_degree: usize) -> usize {
    let log2_ceil = (usize::BITS - (n_systematic - 1).leading_zeros()) as usize;
    (log2_ceil.div_ceil(2) + 1)
        .min(max_eq_degree - 1)
        .min(n_systematic)
}

const SUPPORT_RESAMPLES: usize = 16;
const CONSTRUCTION_RETRIES: usize = 64;

/// Builds the code for `n_systematic` inputs at the given rate.
///
/// Layers with one or two inputs fall back to repetition. Larger layers deal
/// systematic indices from a shuffled, evenly filled pool so every input is
/// covered and column degrees stay within one of each other; a parity row
/// whose support duplicates an earlier row is resampled.
pub fn generate_code(
    n_systematic: usize,
    rate: Rate,
    max_eq_degree: usize,
    seed: u64,
) -> Result<CodeSpec, CodecError> {
    if n_systematic == 0 {
        return Err(CodecError::Parameter("need at least one systematic symbol".into()));
    }
    if max_eq_degree < 2 {
        return Err(CodecError::Parameter(format!(
            "max equation degree {max_eq_degree} < 2"
        )));
    }
    if rate.inverse() < 2 {
        return Err(CodecError::Parameter("coding ratio must be below one".into()));
    }
    let n_coded = n_systematic
        .checked_mul(rate.inverse())
        .ok_or_else(|| CodecError::Parameter("code length overflows".into()))?;
    let n_parity = n_coded - n_systematic;

    let parity_checks = if n_systematic <= 2 {
        (0..n_parity)
            .map(|i| ParityEquation::new(vec![i % n_systematic, n_systematic + i]))
            .collect()
    } else {
        let weight = row_weight(n_systematic, max_eq_degree);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut attempt = 0;
        loop {
            if let Some(rows) = deal_rows(n_systematic, n_parity, weight, &mut rng) {
                break rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut row)| {
                        row.push(n_systematic + i);
                        ParityEquation::new(row)
                    })
                    .collect();
            }
            attempt += 1;
            if attempt == CONSTRUCTION_RETRIES {
                return Err(CodecError::Parameter(format!(
                    "could not cover all {n_systematic} inputs with rows of weight {weight}"
                )));
            }
        }
    };

    Ok(CodeSpec {
        n_systematic,
        n_coded,
        max_eq_degree,
        seed,
        parity_checks,
    })
}

fn deal_rows(
    n_systematic: usize,
    n_rows: usize,
    weight: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<usize>>> {
    let mut pool: Vec<usize> = (0..n_systematic).cycle().take(n_rows * weight).collect();
    pool.shuffle(rng);
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(n_rows);
    let mut supports: HashSet<Vec<usize>> = HashSet::with_capacity(n_rows);
    let mut cursor = 0;
    for _ in 0..n_rows {
        let mut row = take_distinct(&mut pool, cursor, weight, rng)?;
        row.sort_unstable();
        let mut resamples = 0;
        while supports.contains(&row) && resamples < SUPPORT_RESAMPLES {
            // Reshuffle what is left of the pool and draw again.
            pool[cursor..].shuffle(rng);
            row = take_distinct(&mut pool, cursor, weight, rng)?;
            row.sort_unstable();
            resamples += 1;
        }
        cursor += weight;
        supports.insert(row.clone());
        rows.push(row);
    }
    let mut covered = vec![false; n_systematic];
    rows.iter().flatten().for_each(|&i| covered[i] = true);
    covered.iter().all(|&c| c).then_some(rows)
}

/// Moves `weight` distinct entries to `pool[cursor..cursor + weight]`.
fn take_distinct(
    pool: &mut [usize],
    cursor: usize,
    weight: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let mut row = Vec::with_capacity(weight);
    for slot in cursor..cursor + weight {
        let found = (slot..pool.len()).find(|&j| !row.contains(&pool[j]));
        match found {
            Some(j) => {
                pool.swap(slot, j);
                row.push(pool[slot]);
            }
            None => {
                // Tail of the pool is exhausted by duplicates; pick a fresh index.
                let n = pool.iter().copied().max()? + 1;
                if row.len() >= n {
                    return None;
                }
                let fresh = loop {
                    let candidate = rng.gen_range(0..n);
                    if !row.contains(&candidate) {
                        break candidate;
                    }
                };
                row.push(fresh);
            }
        }
    }
    Some(row)
}

impl CodeSpec {
    /// Assembles a code from explicit equations, checking the systematic form.
    pub fn from_parts(
        n_systematic: usize,
        n_coded: usize,
        max_eq_degree: usize,
        seed: u64,
        equations: Vec<Vec<usize>>,
    ) -> Result<Self, CodecError> {
        if n_systematic == 0 || n_coded <= n_systematic {
            return Err(CodecError::Parameter(format!(
                "need 0 < k < n, got k={n_systematic} n={n_coded}"
            )));
        }
        if n_coded % n_systematic != 0 {
            return Err(CodecError::Parameter(format!(
                "n={n_coded} is not an integral multiple of k={n_systematic}"
            )));
        }
        if max_eq_degree < 2 {
            return Err(CodecError::Parameter(format!(
                "max equation degree {max_eq_degree} < 2"
            )));
        }
        if equations.len() != n_coded - n_systematic {
            return Err(CodecError::Parameter(format!(
                "expected {} parity equations, got {}",
                n_coded - n_systematic,
                equations.len()
            )));
        }
        let mut parity_checks = Vec::with_capacity(equations.len());
        for (i, eq) in equations.into_iter().enumerate() {
            let eq = ParityEquation::new(eq);
            let idx = eq.indices();
            let strictly_increasing = idx.windows(2).all(|w| w[0] < w[1]);
            let parity = n_systematic + i;
            let shape_ok = idx.len() >= 2
                && idx.len() <= max_eq_degree
                && strictly_increasing
                && idx.last() == Some(&parity)
                && idx[..idx.len() - 1].iter().all(|&j| j < n_systematic);
            if !shape_ok {
                return Err(CodecError::Parameter(format!(
                    "equation {i} {idx:?} is not a systematic row for parity symbol {parity}"
                )));
            }
            parity_checks.push(eq);
        }
        Ok(Self {
            n_systematic,
            n_coded,
            max_eq_degree,
            seed,
            parity_checks,
        })
    }

    pub fn n_systematic(&self) -> usize {
        self.n_systematic
    }

    pub fn n_coded(&self) -> usize {
        self.n_coded
    }

    pub fn rate(&self) -> Rate {
        Rate {
            inverse: self.n_coded / self.n_systematic,
        }
    }

    pub fn max_eq_degree(&self) -> usize {
        self.max_eq_degree
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parity_checks(&self) -> &[ParityEquation] {
        &self.parity_checks
    }

    /// For every coded symbol, the equations it belongs to.
    pub fn symbol_to_equations(&self) -> Vec<Vec<usize>> {
        let mut adjacency = vec![Vec::new(); self.n_coded];
        for (e, eq) in self.parity_checks.iter().enumerate() {
            for &i in eq.indices() {
                adjacency[i].push(e);
            }
        }
        adjacency
    }

    /// Encodes `k` equal-length inputs into `n` coded symbols.
    ///
    /// Parity rows are computed independently of each other, so the work is
    /// spread over the rayon pool; the output does not depend on scheduling.
    pub fn encode(&self, inputs: &[Symbol]) -> Result<Vec<Symbol>, CodecError> {
        if inputs.len() != self.n_systematic {
            return Err(CodecError::LengthMismatch {
                expected: self.n_systematic,
                actual: inputs.len(),
            });
        }
        let len = inputs[0].len();
        if let Some((index, s)) = inputs.iter().enumerate().find(|(_, s)| s.len() != len) {
            return Err(CodecError::SymbolSize {
                index,
                expected: len,
                actual: s.len(),
            });
        }
        let parity: Vec<Symbol> = self
            .parity_checks
            .par_iter()
            .map(|eq| {
                let idx = eq.indices();
                let mut acc = vec![0u8; len];
                for &j in &idx[..idx.len() - 1] {
                    xor_into(&mut acc, &inputs[j]);
                }
                acc
            })
            .collect();
        let mut out = Vec::with_capacity(self.n_coded);
        out.extend_from_slice(inputs);
        out.extend(parity);
        Ok(out)
    }

    /// Canonical text form: a header line, then one equation per line.
    pub fn to_canonical_text(&self) -> String {
        let mut s = format!(
            "code {} {} {} {}\n",
            self.n_systematic, self.n_coded, self.max_eq_degree, self.seed
        );
        for eq in &self.parity_checks {
            let line: Vec<String> = eq.indices().iter().map(|i| i.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

impl FromStr for CodeSpec {
    type Err = CodecError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CodecError::Parse("empty input".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "code" {
            return Err(CodecError::Parse(format!("bad header {header:?}")));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| CodecError::Parse(format!("{s:?}: {e}")))
        };
        let k = num(fields[1])? as usize;
        let n = num(fields[2])? as usize;
        let d = num(fields[3])? as usize;
        let seed = num(fields[4])?;
        let equations = lines
            .map(|l| {
                l.split_whitespace()
                    .map(|t| num(t).map(|v| v as usize))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        CodeSpec::from_parts(k, n, d, seed, equations)
    }
}

/// Result of running the peeling decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeOutcome {
    Decoded(Vec<Symbol>),
    /// Peeling stalled; the listed indices are still unknown.
    Stuck(Vec<usize>),
    /// A fully known equation does not XOR to zero.
    Violation {
        equation: usize,
        symbols: Vec<(usize, Symbol)>,
    },
}

/// Peeling decoder.
///
/// Each pass scans the equations in ascending order: a fully known equation
/// that has not been checked yet is checked, and an equation with a single
/// unknown member is solved by XOR. Passes repeat until nothing changes.
pub fn peel_decode(code: &CodeSpec, known: &[Option<Symbol>]) -> Result<DecodeOutcome, CodecError> {
    if known.len() != code.n_coded {
        return Err(CodecError::LengthMismatch {
            expected: code.n_coded,
            actual: known.len(),
        });
    }
    let len = known.iter().flatten().map(Vec::len).next().unwrap_or(0);
    if let Some((index, s)) = known
        .iter()
        .enumerate()
        .find_map(|(i, s)| s.as_ref().filter(|s| s.len() != len).map(|s| (i, s)))
    {
        return Err(CodecError::SymbolSize {
            index,
            expected: len,
            actual: s.len(),
        });
    }

    let mut values: Vec<Option<Symbol>> = known.to_vec();
    let mut checked = vec![false; code.parity_checks.len()];
    loop {
        let mut progress = false;
        for (e, eq) in code.parity_checks.iter().enumerate() {
            if checked[e] {
                continue;
            }
            let mut unknown = eq.indices().iter().filter(|&&i| values[i].is_none());
            match (unknown.next(), unknown.next()) {
                (None, _) => {
                    checked[e] = true;
                    let mut acc = vec![0u8; len];
                    for &i in eq.indices() {
                        xor_into(&mut acc, values[i].as_ref().expect("known"));
                    }
                    if acc.iter().any(|&b| b != 0) {
                        let symbols = eq
                            .indices()
                            .iter()
                            .map(|&i| (i, values[i].clone().expect("known")))
                            .collect();
                        return Ok(DecodeOutcome::Violation {
                            equation: e,
                            symbols,
                        });
                    }
                }
                (Some(&target), None) => {
                    let mut acc = vec![0u8; len];
                    for &i in eq.indices() {
                        if i != target {
                            xor_into(&mut acc, values[i].as_ref().expect("known"));
                        }
                    }
                    values[target] = Some(acc);
                    checked[e] = true;
                    progress = true;
                }
                _ => {}
            }
        }
        if !progress {
            break;
        }
    }

    let missing: Vec<usize> = (0..code.n_coded).filter(|&i| values[i].is_none()).collect();
    if missing.is_empty() {
        Ok(DecodeOutcome::Decoded(
            values.into_iter().map(|v| v.expect("decoded")).collect(),
        ))
    } else {
        Ok(DecodeOutcome::Stuck(missing))
    }
}

/// Erasure-only peeling: returns the indices that stay unresolved.
///
/// The residual set is the largest stopping set inside `erased`, so it does
/// not depend on the order in which degree-one equations are processed.
pub fn residual_erasures(code: &CodeSpec, erased: &[bool], adjacency: &[Vec<usize>]) -> Vec<usize> {
    let mut erased = erased.to_vec();
    let eqs = code.parity_checks();
    let mut unknown: Vec<usize> = eqs
        .iter()
        .map(|eq| eq.indices().iter().filter(|&&i| erased[i]).count())
        .collect();
    let mut queue: Vec<usize> = (0..eqs.len()).filter(|&e| unknown[e] == 1).collect();
    while let Some(e) = queue.pop() {
        if unknown[e] != 1 {
            continue;
        }
        let target = *eqs[e]
            .indices()
            .iter()
            .find(|&&i| erased[i])
            .expect("one unknown");
        erased[target] = false;
        for &f in &adjacency[target] {
            unknown[f] -= 1;
            if unknown[f] == 1 {
                queue.push(f);
            }
        }
    }
    (0..erased.len()).filter(|&i| erased[i]).collect()
}

/// Monte-Carlo estimate of the undecodable ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UndecodableEstimate {
    /// Smallest erased fraction that stalled the peeler across all trials.
    pub ratio: f64,
    pub trials: u32,
}

/// Erases symbols in a random order and records the first erased fraction at
/// which peeling stalls; the estimate is the minimum over `trials` orders.
///
/// Stalling is monotone in the erased set, so each trial binary-searches
/// the prefix length. The estimate can only overstate the true minimum
/// stopping-set fraction.
pub fn estimate_undecodable_ratio(code: &CodeSpec, trials: u32, rng_seed: u64) -> UndecodableEstimate {
    let trials = trials.max(1);
    let n = code.n_coded;
    let adjacency = code.symbol_to_equations();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = n;
    for _ in 0..trials {
        order.shuffle(&mut rng);
        let stalls = |prefix: usize| {
            let mut erased = vec![false; n];
            order[..prefix].iter().for_each(|&i| erased[i] = true);
            !residual_erasures(code, &erased, &adjacency).is_empty()
        };
        // Smallest prefix that stalls; erasing everything always stalls.
        let (mut lo, mut hi) = (1, n.min(best));
        if !stalls(hi) {
            continue;
        }
        while lo < hi {
            let mid = (lo + hi) / 2;
            if stalls(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        best = best.min(lo);
    }
    UndecodableEstimate {
        ratio: best as f64 / n as f64,
        trials,
    }
}

pub fn is_bad_code(code: &CodeSpec, alpha_target: f64, trials: u32, rng_seed: u64) -> bool {
    estimate_undecodable_ratio(code, trials, rng_seed).ratio < alpha_target
}

/// Acceptance gate applied to freshly generated codes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeGate {
    pub alpha_target: f64,
    /// Monte-Carlo trials per candidate; zero disables the gate.
    pub trials: u32,
    pub max_attempts: u32,
}

/// Generates a code and regenerates with `seed + 1, seed + 2, ...` until the
/// undecodable-ratio estimate meets the gate.
pub fn generate_gated_code(
    n_systematic: usize,
    rate: Rate,
    max_eq_degree: usize,
    seed: u64,
    gate: &CodeGate,
) -> Result<CodeSpec, CodecError> {
    let attempts = gate.max_attempts.max(1);
    for attempt in 0..attempts {
        let candidate_seed = seed.wrapping_add(attempt as u64);
        let code = generate_code(n_systematic, rate, max_eq_degree, candidate_seed)?;
        if gate.trials == 0
            || !is_bad_code(&code, gate.alpha_target, gate.trials, gate_rng_seed(candidate_seed))
        {
            return Ok(code);
        }
    }
    Err(CodecError::BadCode { attempts })
}

/// Memoized [`generate_gated_code`]. Every party re-derives the same codes
/// from shared parameters, so a process-wide cache avoids re-running the gate.
pub fn cached_gated_code(
    n_systematic: usize,
    rate: Rate,
    max_eq_degree: usize,
    seed: u64,
    gate: &CodeGate,
) -> Result<CodeSpec, CodecError> {
    type Key = (usize, usize, usize, u64, u64, u32, u32);
    static CACHE: OnceLock<Mutex<HashMap<Key, CodeSpec>>> = OnceLock::new();
    let key = (
        n_systematic,
        rate.inverse(),
        max_eq_degree,
        seed,
        gate.alpha_target.to_bits(),
        gate.trials,
        gate.max_attempts,
    );
    let cache = CACHE.get_or_init(Default::default);
    if let Some(code) = cache.lock().expect("code cache poisoned").get(&key) {
        return Ok(code.clone());
    }
    let code = generate_gated_code(n_systematic, rate, max_eq_degree, seed, gate)?;
    cache
        .lock()
        .expect("code cache poisoned")
        .insert(key, code.clone());
    Ok(code)
}

/// Seed for the gate's Monte-Carlo stream, derived from the code seed.
pub fn gate_rng_seed(code_seed: u64) -> u64 {
    code_seed ^ 0x9e37_79b9_7f4a_7c15
}
