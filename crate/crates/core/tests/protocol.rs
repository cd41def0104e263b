mod common;

use aced_core::cit::TreeParams;
use aced_core::dispersal::{assign_chunks, DispersalParams};
use aced_core::metrics;
use aced_core::oracle::{AuditOutcome, ChainEntry, NodeBehavior, TrustedChain};
use aced_core::simnet::{check_properties, measure, run_scenario, ClientConfig, ProposerStrategy, ScenarioConfig};
use common::*;

fn sweep_config(n: usize, adversary: Option<NodeBehavior>, proposer: ProposerStrategy, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n,
        block_size: 8 * 1024,
        tree: TreeParams {
            c: 1024,
            ..scaled_params()
        },
        rounds: 3,
        ..e2e_config(adversary, proposer, seed)
    }
}

#[test]
fn safety_holds_across_strategy_grid() {
    let adversaries = [
        None,
        Some(NodeBehavior::Silent),
        Some(NodeBehavior::WithholdAfterVote),
        Some(NodeBehavior::VoteWithoutStore),
    ];
    let proposers = [
        ProposerStrategy::Honest,
        ProposerStrategy::InvalidCoding,
        ProposerStrategy::Equivocating,
    ];
    for n in [10, 20, 40] {
        for (ai, adversary) in adversaries.iter().enumerate() {
            for (pi, proposer) in proposers.iter().enumerate() {
                let seed = (n * 100 + ai * 10 + pi) as u64;
                let config = sweep_config(n, *adversary, *proposer, seed);
                let gamma = config.dispersal.gamma;
                assert!(config.beta <= (1.0 - gamma) / 2.0 + 1e-12);
                assert!(gamma / config.dispersal.lambda > (1.0 / (1.0 - config.dispersal.eta)).ln());
                assert!(config.dispersal.eta >= 1.0 - config.tree.alpha);
                let trace = run_scenario(&config).unwrap();
                let report = check_properties(&config, &trace);
                assert!(
                    report.holds(),
                    "n={n} adversary={adversary:?} proposer={proposer:?}: {:?}",
                    report.violations
                );
            }
        }
    }
}

#[test]
fn honest_rounds_commit_under_every_node_strategy() {
    for adversary in [NodeBehavior::Silent, NodeBehavior::WithholdAfterVote, NodeBehavior::VoteWithoutStore] {
        let trace = run_scenario(&sweep_config(20, Some(adversary), ProposerStrategy::Honest, 5)).unwrap();
        for round in &trace.rounds {
            assert!(round.committed.is_some(), "{adversary:?} round {}", round.round);
            assert!(round.retrievals.iter().all(|r| r.outcome == "block"));
        }
    }
}

#[test]
fn commit_threshold_above_honest_count_stalls() {
    // gamma = 0.75 > 1 - 2 beta: 16 honest voters, threshold 19.
    let mut config = sweep_config(20, Some(NodeBehavior::Silent), ProposerStrategy::Honest, 9);
    config.dispersal.gamma = 0.75;
    let trace = run_scenario(&config).unwrap();
    assert!(trace.rounds.iter().all(|r| r.committed.is_none()));
    assert!(trace.rounds.iter().all(|r| r.votes == 16 && r.threshold == 19));
}

#[test]
fn equivocation_never_commits() {
    let trace = run_scenario(&sweep_config(20, None, ProposerStrategy::Equivocating, 3)).unwrap();
    let equivocated: Vec<_> = trace
        .rounds
        .iter()
        .filter(|r| r.proposer_strategy == ProposerStrategy::Equivocating)
        .collect();
    assert!(!equivocated.is_empty());
    assert!(equivocated.iter().all(|r| r.committed.is_none() && r.votes == 10));
}

#[test]
fn measured_dispersal_tracks_closed_form() {
    let config = e2e_config(None, ProposerStrategy::Honest, 21);
    let trace = run_scenario(&config).unwrap();
    let measured = measure(&trace).communication_bytes as f64;
    let round = &trace.rounds[0];
    let design = assign_chunks(32, config.n, config.dispersal.lambda, round.design_seed).unwrap();
    let delivered = DispersalParams {
        lambda: design.delivered_lambda(),
        ..config.dispersal
    };
    let formula = metrics::communication(config.block_size as f64, config.n, &config.tree, &delivered);
    let ratio = measured / formula;
    assert!((0.9..=1.1).contains(&ratio), "measured {measured}, formula {formula}");
}

#[test]
fn doubling_block_roughly_doubles_communication() {
    let small = e2e_config(None, ProposerStrategy::Honest, 4);
    let large = ScenarioConfig {
        block_size: 2 * small.block_size,
        ..small.clone()
    };
    let a = measure(&run_scenario(&small).unwrap()).communication_bytes as f64;
    let b = measure(&run_scenario(&large).unwrap()).communication_bytes as f64;
    assert!((1.8..=2.3).contains(&(b / a)), "ratio {}", b / a);
}

#[test]
fn audits_slash_voters_that_store_nothing() {
    let mut config = sweep_config(20, Some(NodeBehavior::VoteWithoutStore), ProposerStrategy::Honest, 8);
    config.rounds = 12;
    config.p_a = 1.0;
    let trace = run_scenario(&config).unwrap();
    let mut slashed = 0;
    for round in &trace.rounds {
        match round.audit.as_ref().unwrap() {
            AuditOutcome::Slashed { node, .. } => {
                assert_eq!(trace.behaviors[*node], NodeBehavior::VoteWithoutStore);
                slashed += 1;
            }
            AuditOutcome::Passed { node } => assert_ne!(trace.behaviors[*node], NodeBehavior::VoteWithoutStore),
            AuditOutcome::Skipped => panic!("p_a = 1 always audits"),
        }
    }
    assert!(slashed > 0);
    let slash_records = trace
        .chain
        .iter()
        .filter(|r| matches!(r.entry, ChainEntry::Slash { .. }))
        .count();
    assert_eq!(slash_records, slashed);
}

#[test]
fn chain_log_is_monotone_and_parses() {
    let mut config = sweep_config(10, None, ProposerStrategy::Honest, 2);
    config.clients = vec![
        ClientConfig {
            strategy: ProposerStrategy::Honest,
        },
        ClientConfig {
            strategy: ProposerStrategy::InvalidCoding,
        },
    ];
    config.rounds = 4;
    let trace = run_scenario(&config).unwrap();
    assert!(trace.chain.windows(2).all(|w| w[0].id < w[1].id));
    let log: String = trace
        .chain
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    assert_eq!(TrustedChain::parse_log(&log).unwrap(), trace.chain);
    let heights: Vec<usize> = trace.rounds.iter().map(|r| r.chain_height).collect();
    assert!(heights.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn scenario_json_round_trips() {
    let config = e2e_config(Some(NodeBehavior::Silent), ProposerStrategy::Honest, 1);
    let text = serde_json::to_string_pretty(&config).unwrap();
    let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, config);
}
