//! Deterministic synchronous-round simulator: clients propose blocks in
//! round-robin order, nodes verify and vote, the chain commits, every client
//! retrieves, and a voter may be audited.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cit::{build_tree, build_tree_with_tamper, hash_bytes, CitError, Commitment, Tamper, TreeParams};
use crate::dispersal::{assign_chunks, verify_design, DispersalDesign, DispersalError, DispersalParams, VerifyMode};
use crate::oracle::{
    audit, bad_code_round, client_retrieve, commitment_id, disperse_tree, node_on_dispersal, AuditOutcome,
    BadCodeOutcome, ChainRecord, NodeBehavior, OracleError, OracleNode, SubmitOutcome, TrustedChain,
};
use crate::retrieval::{ReconstructionResult, RetrievalError};
use crate::seed::derive_labeled;
use crate::wire;

/// Encoded size of a vote: node id, commitment id, flag.
pub const VOTE_BYTES: usize = 8 + 32 + 1;
const DESIGN_ATTEMPTS: u32 = 64;
const DESIGN_MC_TRIALS: u64 = 2000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Dispersal(#[from] DispersalError),
    #[error(transparent)]
    Cit(#[from] CitError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposerStrategy {
    Honest,
    /// Commits to a tree with one corrupted base parity symbol.
    InvalidCoding,
    /// Sends odd-numbered nodes chunks of a different block under the same commitment.
    Equivocating,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub strategy: ProposerStrategy,
}

impl ClientConfig {
    pub fn honest(&self) -> bool {
        self.strategy == ProposerStrategy::Honest
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub strategy: NodeBehavior,
    /// Defaults to `floor(beta N)`.
    #[serde(default)]
    pub count: Option<usize>,
}

fn default_stake() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub beta: f64,
    pub block_size: usize,
    pub tree: TreeParams,
    pub dispersal: DispersalParams,
    pub rounds: usize,
    pub clients: Vec<ClientConfig>,
    /// Adversarial nodes placed at seeded positions. Ignored if `behaviors` is set.
    #[serde(default)]
    pub adversary: Option<AdversaryConfig>,
    #[serde(default)]
    pub behaviors: Option<Vec<NodeBehavior>>,
    #[serde(default)]
    pub p_a: f64,
    /// Stake each node deposits; an audit failure forfeits it.
    #[serde(default = "default_stake")]
    pub stake: f64,
    /// Redraw each round's design to minimise the fraction of `ceil(gamma N)`
    /// node subsets that miss the `eta` coverage target.
    #[serde(default)]
    pub verify_design: bool,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn max_adversaries(&self) -> usize {
        (self.beta * self.n as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Config("n must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(SimError::Config(format!("beta={} outside [0, 0.5)", self.beta)));
        }
        if self.block_size == 0 {
            return Err(SimError::Config("block_size must be positive".into()));
        }
        if self.clients.is_empty() {
            return Err(SimError::Config("need at least one client".into()));
        }
        if !(0.0..=1.0).contains(&self.p_a) {
            return Err(SimError::Config(format!("p_a={} outside [0, 1]", self.p_a)));
        }
        if !(self.stake >= 0.0) {
            return Err(SimError::Config(format!("stake={} is negative", self.stake)));
        }
        self.tree.validate()?;
        self.tree.geometry(self.block_size as u64)?;
        self.dispersal.validate()?;
        if self.beta + self.dispersal.gamma > 1.0 + 1e-12 {
            return Err(SimError::Config(format!(
                "beta + gamma = {} exceeds 1",
                self.beta + self.dispersal.gamma
            )));
        }
        let adversaries = match (&self.behaviors, &self.adversary) {
            (Some(b), _) => {
                if b.len() != self.n {
                    return Err(SimError::Config(format!("{} behaviors for {} nodes", b.len(), self.n)));
                }
                b.iter().filter(|&&x| x != NodeBehavior::Honest).count()
            }
            (None, Some(a)) if a.strategy != NodeBehavior::Honest => a.count.unwrap_or(self.max_adversaries()),
            _ => 0,
        };
        if adversaries > self.max_adversaries() {
            return Err(SimError::Config(format!(
                "{adversaries} adversarial nodes exceed floor(beta N) = {}",
                self.max_adversaries()
            )));
        }
        Ok(())
    }

    /// Behavior of every node, adversaries placed by the master seed.
    pub fn node_behaviors(&self) -> Vec<NodeBehavior> {
        if let Some(b) = &self.behaviors {
            return b.clone();
        }
        let mut out = vec![NodeBehavior::Honest; self.n];
        if let Some(a) = &self.adversary {
            let count = a.count.unwrap_or(self.max_adversaries()).min(self.n);
            let mut ids: Vec<usize> = (0..self.n).collect();
            ids.shuffle(&mut rng_for(self.seed, "adversaries"));
            for &i in &ids[..count] {
                out[i] = a.strategy;
            }
        }
        out
    }
}

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_labeled(seed, label))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub from: String,
    pub to: String,
    pub kind: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub client: usize,
    pub honest: bool,
    /// `block`, `fraud`, `insufficient` or `bad_code`.
    pub outcome: String,
    pub block_sha256: Option<String>,
    pub responders: usize,
    pub bytes_downloaded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub proposer: usize,
    pub proposer_strategy: ProposerStrategy,
    pub block_sha256: String,
    pub commitment: String,
    pub design_seed: u64,
    /// Fraction of responder subsets below the coverage target, when checked.
    pub design_failure_rate: Option<f64>,
    pub messages: Vec<MessageLog>,
    pub votes: usize,
    pub threshold: usize,
    pub committed: Option<u64>,
    pub retrievals: Vec<RetrievalLog>,
    pub audit: Option<AuditOutcome>,
    pub bad_code_seed: Option<u64>,
    pub chain_height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    /// Hash of the block the client accepted; `None` is the empty output.
    pub output: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientLedger {
    pub client: usize,
    pub honest: bool,
    pub entries: Vec<LedgerEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub dispersal_bytes: usize,
    pub vote_bytes: usize,
    pub fraud_proof_bytes: usize,
    pub stored_bytes: Vec<usize>,
    pub downloaded_bytes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub behaviors: Vec<NodeBehavior>,
    pub rounds: Vec<RoundTrace>,
    pub chain: Vec<ChainRecord>,
    pub ledgers: Vec<ClientLedger>,
    pub counters: Counters,
    /// Proofs recorded on chain, kept out of the JSON trace.
    #[serde(skip)]
    pub fraud_proofs: Vec<FraudProofRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FraudProofRecord {
    pub record: u64,
    pub round: usize,
    pub commitment: Commitment,
    /// Wire encoding of the proof.
    pub proof: Vec<u8>,
}

impl Trace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes") + "\n"
    }

    /// `entity,index,metric,bytes` rows.
    pub fn counters_csv(&self) -> String {
        let c = &self.counters;
        let mut s = String::from("entity,index,metric,bytes\n");
        s.push_str(&format!("network,,dispersal,{}\n", c.dispersal_bytes));
        s.push_str(&format!("network,,votes,{}\n", c.vote_bytes));
        s.push_str(&format!("network,,fraud_proofs,{}\n", c.fraud_proof_bytes));
        for (i, b) in c.stored_bytes.iter().enumerate() {
            s.push_str(&format!("node,{i},stored,{b}\n"));
        }
        for (i, b) in c.downloaded_bytes.iter().enumerate() {
            s.push_str(&format!("client,{i},downloaded,{b}\n"));
        }
        s
    }
}

/// Draws the round's design. With verification on, redraws up to
/// `DESIGN_ATTEMPTS` times and keeps the draw with the lowest failure rate.
fn choose_design(config: &ScenarioConfig, m: usize, round: usize) -> Result<(DispersalDesign, Option<f64>), SimError> {
    let d = &config.dispersal;
    let mut best: Option<(DispersalDesign, f64)> = None;
    for attempt in 0..DESIGN_ATTEMPTS {
        let seed = derive_labeled(config.seed, &format!("design/{round}/{attempt}"));
        let design = assign_chunks(m, config.n, d.lambda, seed)?;
        if !config.verify_design {
            return Ok((design, None));
        }
        let estimate = match verify_design(&design, d.gamma, d.eta, VerifyMode::Exhaustive) {
            Err(DispersalError::Complexity { .. }) => verify_design(
                &design,
                d.gamma,
                d.eta,
                VerifyMode::MonteCarlo {
                    trials: DESIGN_MC_TRIALS,
                    seed: derive_labeled(seed, "verify"),
                },
            )?,
            other => other?,
        };
        if best.as_ref().is_none_or(|(_, rate)| estimate.rate < *rate) {
            best = Some((design, estimate.rate));
        }
        if estimate.failures == 0 {
            break;
        }
    }
    let (design, rate) = best.expect("at least one attempt");
    Ok((design, Some(rate)))
}

fn hex_hash(data: &[u8]) -> String {
    hex::encode(hash_bytes(data))
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<Trace, SimError> {
    config.validate()?;
    let behaviors = config.node_behaviors();
    let mut nodes: Vec<OracleNode> = behaviors
        .iter()
        .enumerate()
        .map(|(i, &b)| OracleNode::new(i, b, config.stake))
        .collect();
    let mut chain = TrustedChain::new(config.n, config.beta, config.dispersal.gamma)?;
    let mut tree_params = config.tree.clone();
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut ledgers: Vec<ClientLedger> = config
        .clients
        .iter()
        .enumerate()
        .map(|(client, c)| ClientLedger {
            client,
            honest: c.honest(),
            entries: Vec::new(),
        })
        .collect();
    let mut counters = Counters {
        downloaded_bytes: vec![0; config.clients.len()],
        ..Counters::default()
    };
    let mut fraud_proofs = Vec::new();

    for round in 0..config.rounds {
        let proposer = round % config.clients.len();
        let strategy = config.clients[proposer].strategy;
        let mut block = vec![0u8; config.block_size];
        rng_for(config.seed, &format!("block/{round}")).fill_bytes(&mut block);

        let tree = match strategy {
            ProposerStrategy::InvalidCoding => {
                let geometry = tree_params.geometry(config.block_size as u64)?;
                let depth = geometry.depth();
                let mut rng = rng_for(config.seed, &format!("tamper/{round}"));
                let tamper = Tamper {
                    layer: depth,
                    index: rng.gen_range(geometry.systematic(depth)..geometry.size(depth)),
                    mask: vec![rng.gen_range(1..=255u8)],
                };
                build_tree_with_tamper(&block, &tree_params, Some(&tamper))?
            }
            _ => build_tree(&block, &tree_params)?,
        };
        let commitment = tree.commitment().clone();
        let cid = commitment_id(&commitment);
        let (design, design_failure_rate) = choose_design(config, tree.base_size(), round)?;
        let mut messages = disperse_tree(&tree, &design)?;
        if strategy == ProposerStrategy::Equivocating {
            let mut other = block.clone();
            rng_for(config.seed, &format!("equivocate/{round}")).fill_bytes(&mut other);
            let alt = build_tree(&other, &tree_params)?;
            let alt_messages = disperse_tree(&alt, &design)?;
            for (m, a) in messages.iter_mut().zip(alt_messages) {
                if m.node % 2 == 1 {
                    m.units = a.units;
                }
            }
        }

        let mut log = Vec::new();
        let mut votes = Vec::new();
        for (node, message) in nodes.iter_mut().zip(&messages) {
            let bytes = message.wire_len();
            counters.dispersal_bytes += bytes;
            log.push(MessageLog {
                from: format!("client/{proposer}"),
                to: format!("node/{}", node.id),
                kind: "disperse".into(),
                bytes,
            });
            if let Some(vote) = node_on_dispersal(node, &design, message) {
                counters.vote_bytes += VOTE_BYTES;
                log.push(MessageLog {
                    from: format!("node/{}", node.id),
                    to: "chain".into(),
                    kind: "vote".into(),
                    bytes: VOTE_BYTES,
                });
                votes.push(vote);
            }
        }
        let committed = match chain.submit_votes(&cid, &votes) {
            SubmitOutcome::Committed { id } => Some(id),
            SubmitOutcome::Pending { .. } => None,
        };

        let mut retrievals = Vec::new();
        let mut audit_outcome = None;
        let mut bad_code_seed = None;
        if committed.is_some() {
            for (client, ledger) in ledgers.iter_mut().enumerate() {
                let (outcome, hash, responders, bytes) = match client_retrieve(&mut chain, &nodes, &commitment) {
                    Ok(report) => {
                        let (outcome, hash) = match &report.result {
                            ReconstructionResult::Block(b) => ("block", Some(hex_hash(b))),
                            ReconstructionResult::Fraud(proof) => {
                                if let Some(record) = report.fraud_record {
                                    if !fraud_proofs.iter().any(|f: &FraudProofRecord| f.record == record) {
                                        let encoded = wire::encode_fraud_proof(proof);
                                        counters.fraud_proof_bytes += encoded.len();
                                        fraud_proofs.push(FraudProofRecord {
                                            record,
                                            round,
                                            commitment: commitment.clone(),
                                            proof: encoded,
                                        });
                                    }
                                }
                                ("fraud", None)
                            }
                            ReconstructionResult::Insufficient(_) => ("insufficient", None),
                        };
                        (outcome, hash, report.responders, report.bytes_downloaded)
                    }
                    Err(OracleError::Retrieval(RetrievalError::BadCode { .. })) => {
                        if bad_code_seed.is_none() {
                            if let BadCodeOutcome::Replaced { params, .. } =
                                bad_code_round(&mut chain, &nodes, &commitment)?
                            {
                                bad_code_seed = Some(params.code_seed);
                                tree_params = params;
                            }
                        }
                        ("bad_code", None, 0, 0)
                    }
                    Err(e) => return Err(e.into()),
                };
                counters.downloaded_bytes[client] += bytes;
                ledger.entries.push(LedgerEntry {
                    round,
                    output: hash.clone(),
                });
                retrievals.push(RetrievalLog {
                    client,
                    honest: ledger.honest,
                    outcome: outcome.into(),
                    block_sha256: hash,
                    responders,
                    bytes_downloaded: bytes,
                });
            }
            let mut rng = rng_for(config.seed, &format!("audit/{round}"));
            audit_outcome = Some(audit(
                &mut chain,
                &mut nodes,
                &design,
                &commitment,
                config.p_a,
                config.stake,
                &mut rng,
            )?);
        } else {
            for ledger in ledgers.iter_mut() {
                ledger.entries.push(LedgerEntry { round, output: None });
            }
        }

        rounds.push(RoundTrace {
            round,
            proposer,
            proposer_strategy: strategy,
            block_sha256: hex_hash(&block),
            commitment: hex::encode(cid),
            design_seed: design.seed,
            design_failure_rate,
            messages: log,
            votes: votes.len(),
            threshold: chain.threshold(),
            committed,
            retrievals,
            audit: audit_outcome,
            bad_code_seed,
            chain_height: chain.records().len(),
        });
    }

    counters.stored_bytes = nodes.iter().map(|n| n.stored_bytes()).collect();
    Ok(Trace {
        behaviors,
        rounds,
        chain: chain.records().to_vec(),
        ledgers,
        counters,
        fraud_proofs,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Bytes the proposers sent to nodes.
    pub communication_bytes: usize,
    pub per_node_storage: Vec<usize>,
    pub per_client_download: Vec<usize>,
}

pub fn measure(trace: &Trace) -> Measurement {
    Measurement {
        communication_bytes: trace.counters.dispersal_bytes,
        per_node_storage: trace.counters.stored_bytes.clone(),
        per_client_download: trace.counters.downloaded_bytes.clone(),
    }
}

/// Protocol properties checked on a finished trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PropertyReport {
    pub termination: bool,
    pub availability: bool,
    pub correctness: bool,
    pub violations: Vec<String>,
}

impl PropertyReport {
    pub fn holds(&self) -> bool {
        self.termination && self.availability && self.correctness
    }
}

/// Termination: an honest proposal with at least threshold honest nodes commits.
/// Availability: a commit with at least `ceil(gamma N)` honest responders never
/// leaves an honest client with too few chunks.
/// Correctness: honest clients agree, output the block of an honest proposal,
/// and output nothing for an invalidly coded one.
pub fn check_properties(config: &ScenarioConfig, trace: &Trace) -> PropertyReport {
    let honest = trace.behaviors.iter().filter(|&&b| b == NodeBehavior::Honest).count();
    let responders_needed = (config.dispersal.gamma * config.n as f64 - 1e-9).ceil() as usize;
    let mut report = PropertyReport {
        termination: true,
        availability: true,
        correctness: true,
        violations: Vec::new(),
    };
    for r in &trace.rounds {
        let honest_proposal = r.proposer_strategy == ProposerStrategy::Honest;
        if honest_proposal && honest >= r.threshold && r.committed.is_none() {
            report.termination = false;
            report.violations.push(format!("round {}: honest proposal not committed", r.round));
        }
        if r.committed.is_none() {
            continue;
        }
        let honest_views: Vec<&RetrievalLog> = r.retrievals.iter().filter(|x| x.honest).collect();
        if honest >= responders_needed && honest_views.iter().any(|x| x.outcome == "insufficient") {
            report.availability = false;
            report.violations.push(format!("round {}: honest client left with too few chunks", r.round));
        }
        let first = honest_views.first().map(|x| (&x.outcome, &x.block_sha256));
        if honest_views.iter().any(|x| Some((&x.outcome, &x.block_sha256)) != first) {
            report.correctness = false;
            report.violations.push(format!("round {}: honest clients disagree", r.round));
        }
        if honest_proposal && honest_views.iter().any(|x| x.block_sha256.as_ref() != Some(&r.block_sha256)) {
            report.correctness = false;
            report.violations.push(format!("round {}: honest block not recovered", r.round));
        }
        if r.proposer_strategy == ProposerStrategy::InvalidCoding && honest_views.iter().any(|x| x.block_sha256.is_some()) {
            report.correctness = false;
            report.violations.push(format!("round {}: invalid block accepted", r.round));
        }
    }
    report
}
