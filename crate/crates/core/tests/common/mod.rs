//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use aced_core::cit::TreeParams;
use aced_core::codec::{CodeSpec, Rate, Symbol};
use aced_core::dispersal::DispersalParams;
use aced_core::incentives::{expected_utility, Action, IncentiveParams, Role};
use aced_core::oracle::NodeBehavior;
use aced_core::simnet::{AdversaryConfig, ClientConfig, ProposerStrategy, ScenarioConfig};
use rand::Rng;

pub fn small_params() -> TreeParams {
    TreeParams {
        c: 16,
        t: 4,
        r: Rate::one_over(4).unwrap(),
        q: 8,
        d: 8,
        alpha: 0.125,
        code_seed: 5,
        gate_trials: 100,
        max_regenerations: 16,
    }
}

/// Same shape as `small_params` with 8 KiB base symbols: a 64 KiB block.
pub fn scaled_params() -> TreeParams {
    TreeParams {
        c: 8192,
        code_seed: 1,
        ..small_params()
    }
}

/// N = 20, 64 KiB blocks, beta = 0.2, gamma = 0.6, lambda = 0.2, three clients.
pub fn e2e_config(adversary: Option<NodeBehavior>, proposer: ProposerStrategy, seed: u64) -> ScenarioConfig {
    let mut clients = vec![
        ClientConfig {
            strategy: ProposerStrategy::Honest
        };
        3
    ];
    clients[0].strategy = proposer;
    ScenarioConfig {
        n: 20,
        beta: 0.2,
        block_size: 64 * 1024,
        tree: scaled_params(),
        dispersal: DispersalParams {
            gamma: 0.6,
            eta: 0.875,
            lambda: 0.2,
        },
        rounds: 1,
        clients,
        adversary: adversary.map(|strategy| AdversaryConfig { strategy, count: None }),
        behaviors: None,
        p_a: 0.0,
        stake: 1.0,
        verify_design: false,
        seed,
    }
}

/// Layer sizes root first: `t`, then each layer `q r` times the one above.
pub fn oracle_sizes(t: usize, q: usize, r_inv: usize, depth: usize) -> Vec<usize> {
    let mut sizes = vec![t];
    for _ in 1..depth {
        let last = *sizes.last().unwrap();
        sizes.push(last * q / r_inv);
    }
    sizes
}

/// Parent of symbol `x` in a layer of `m_child` symbols: hashes are dealt
/// round-robin over the `m_child / q` systematic symbols of the layer above.
pub fn oracle_parent(m_child: usize, q: usize, x: usize) -> usize {
    x % (m_child / q)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gf2Outcome {
    Unique(Vec<Symbol>),
    Ambiguous,
    Inconsistent,
}

/// Gauss-Jordan elimination over GF(2) on the erased positions, with
/// right-hand sides carried as byte vectors.
pub fn gf2_solve(code: &CodeSpec, known: &[Option<Symbol>], len: usize) -> Gf2Outcome {
    let n = code.n_coded();
    assert!(n <= 64);
    let erased: Vec<usize> = (0..n).filter(|&i| known[i].is_none()).collect();
    let column = |i: usize| erased.iter().position(|&e| e == i);
    let mut rows: Vec<(u64, Vec<u8>)> = code
        .parity_checks()
        .iter()
        .map(|eq| {
            let mut mask = 0u64;
            let mut rhs = vec![0u8; len];
            for &i in eq.indices() {
                match &known[i] {
                    Some(s) => rhs.iter_mut().zip(s).for_each(|(a, b)| *a ^= b),
                    None => mask ^= 1 << column(i).unwrap(),
                }
            }
            (mask, rhs)
        })
        .collect();
    let mut pivots = Vec::new();
    let mut next = 0;
    for col in 0..erased.len() {
        let Some(p) = (next..rows.len()).find(|&r| rows[r].0 >> col & 1 == 1) else {
            continue;
        };
        rows.swap(next, p);
        let (pm, pr) = rows[next].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != next && row.0 >> col & 1 == 1 {
                row.0 ^= pm;
                row.1.iter_mut().zip(&pr).for_each(|(a, b)| *a ^= b);
            }
        }
        pivots.push((col, next));
        next += 1;
    }
    if rows[next..].iter().any(|(m, rhs)| *m == 0 && rhs.iter().any(|&b| b != 0)) {
        return Gf2Outcome::Inconsistent;
    }
    if pivots.len() < erased.len() {
        return Gf2Outcome::Ambiguous;
    }
    let mut out: Vec<Symbol> = known.iter().map(|s| s.clone().unwrap_or_default()).collect();
    for (col, row) in pivots {
        out[erased[col]] = rows[row].1.clone();
    }
    Gf2Outcome::Unique(out)
}

/// Draws from fixed uniform ranges; the ranges do not depend on any check.
pub fn random_incentive_params(rng: &mut impl Rng) -> IncentiveParams {
    IncentiveParams {
        p_a: rng.gen_range(0.0..=1.0),
        stk_o: rng.gen_range(0.0..10.0),
        stk_m: rng.gen_range(0.0..10.0),
        stk_b: rng.gen_range(0.0..10.0),
        r_m: rng.gen_range(0.0..1.0),
        block_reward: rng.gen_range(0.0..100.0),
        eta_b: rng.gen_range(0.0..=1.0),
        c_s: rng.gen_range(0.0..5.0),
        c_m: rng.gen_range(0.0..5.0),
        k_sig: rng.gen_range(1..=100) as f64,
    }
}

/// All-C is an equilibrium for `role` iff every unilateral deviation loses
/// utility strictly, with payoffs read from the utility table.
pub fn allc_by_enumeration(role: Role, p: &IncentiveParams) -> bool {
    let stay = expected_utility(role, Action::Cooperate, p);
    [Action::Offline, Action::Defect]
        .into_iter()
        .all(|a| stay > expected_utility(role, a, p))
}

/// All-O is an equilibrium iff no lone deviator gains. Nothing is committed
/// when everyone else is offline: cooperating still pays the verification
/// cost, defecting earns and risks nothing.
pub fn allo_by_enumeration(p: &IncentiveParams) -> bool {
    let payoff = |a: Action| match a {
        Action::Cooperate => -p.c_s,
        Action::Offline | Action::Defect => 0.0,
    };
    [Action::Cooperate, Action::Defect]
        .into_iter()
        .all(|a| payoff(a) <= payoff(Action::Offline))
}
