//! Protocol state machines: client dispersal and retrieval, oracle nodes that
//! store chunks and vote, and a mock trusted chain that records commitments,
//! fraud proofs, bad-code markers and slashing.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cit::{build_tree, hash_bytes, verify_symbol, CitError, CodedTree, Commitment, Digest, ProofOfMembership, TreeParams};
use crate::codec::is_bad_code;
use crate::dispersal::{DispersalDesign, DispersalError};
use crate::retrieval::{reconstruct, verify_fraud_proof, ChunkSet, FraudProof, ReconstructionResult, RetrievalError};
use crate::wire;

/// Gate trials used when re-checking codes during a bad-code round.
pub const BAD_CODE_GATE_TRIALS: u32 = 100;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle parameters: {0}")]
    Parameter(String),
    #[error(transparent)]
    Cit(#[from] CitError),
    #[error(transparent)]
    Dispersal(#[from] DispersalError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("commitment {0} has not been committed")]
    NotCommitted(String),
    #[error("fraud proof rejected for commitment {0}")]
    InvalidFraudProof(String),
}

/// Stable identifier of a commitment: the hash of its wire encoding.
pub fn commitment_id(commitment: &Commitment) -> Digest {
    hash_bytes(&wire::encode_commitment(commitment))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeBehavior {
    Honest,
    Silent,
    WithholdAfterVote,
    VoteWithoutStore,
}

#[derive(Clone, Debug)]
pub struct OracleNode {
    pub id: usize,
    pub behavior: NodeBehavior,
    pub stake: f64,
    storage: BTreeMap<(Digest, usize), ProofOfMembership>,
}

impl OracleNode {
    pub fn new(id: usize, behavior: NodeBehavior, stake: f64) -> Self {
        Self {
            id,
            behavior,
            stake,
            storage: BTreeMap::new(),
        }
    }

    pub fn stored_units(&self, commitment: &Digest) -> Vec<&ProofOfMembership> {
        self.storage
            .range((*commitment, 0)..=(*commitment, usize::MAX))
            .map(|(_, pom)| pom)
            .collect()
    }

    /// Bytes held across all commitments, in wire encoding.
    pub fn stored_bytes(&self) -> usize {
        self.storage.values().map(|p| wire::encode_pom(p).len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DispersalMessage {
    pub node: usize,
    pub commitment: Commitment,
    pub units: Vec<ProofOfMembership>,
}

impl DispersalMessage {
    pub fn wire_len(&self) -> usize {
        wire::encode_commitment(&self.commitment).len()
            + self.units.iter().map(|p| wire::encode_pom(p).len()).sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub node: usize,
    pub commitment: Digest,
    pub accept: bool,
}

fn check_design(tree: &CodedTree, design: &DispersalDesign) -> Result<(), OracleError> {
    if design.m != tree.base_size() {
        return Err(OracleError::Parameter(format!(
            "design covers {} chunks but the tree has {} base symbols",
            design.m,
            tree.base_size()
        )));
    }
    Ok(())
}

/// Builds the tree and one message per node carrying its assigned chunks.
pub fn client_disperse(
    block: &[u8],
    params: &TreeParams,
    design: &DispersalDesign,
) -> Result<(CodedTree, Vec<DispersalMessage>), OracleError> {
    let tree = build_tree(block, params)?;
    let messages = disperse_tree(&tree, design)?;
    Ok((tree, messages))
}

/// Messages for an already built tree, which may be maliciously coded.
pub fn disperse_tree(tree: &CodedTree, design: &DispersalDesign) -> Result<Vec<DispersalMessage>, OracleError> {
    check_design(tree, design)?;
    (0..design.n)
        .map(|node| {
            let units = design
                .distinct_chunks(node)
                .into_iter()
                .map(|i| tree.sample_pom(i))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DispersalMessage {
                node,
                commitment: tree.commitment().clone(),
                units,
            })
        })
        .collect()
}

/// Handles a dispersal message; returns the vote, if any, the node sends.
pub fn node_on_dispersal(node: &mut OracleNode, design: &DispersalDesign, message: &DispersalMessage) -> Option<Vote> {
    let id = commitment_id(&message.commitment);
    let vote = Vote {
        node: node.id,
        commitment: id,
        accept: true,
    };
    match node.behavior {
        NodeBehavior::Silent => None,
        NodeBehavior::VoteWithoutStore => Some(vote),
        NodeBehavior::Honest | NodeBehavior::WithholdAfterVote => {
            if message.node != node.id || node.id >= design.n {
                return None;
            }
            let expected = design.distinct_chunks(node.id);
            let got: Vec<usize> = message.units.iter().map(|p| p.base_index).collect();
            if got != expected {
                return None;
            }
            let params = &message.commitment.params;
            if !message.units.iter().all(|p| verify_symbol(&message.commitment, params, p)) {
                return None;
            }
            for pom in &message.units {
                node.storage.insert((id, pom.base_index), pom.clone());
            }
            Some(vote)
        }
    }
}

/// Units a node returns to a retrieval query, or `None` if it stays silent.
pub fn node_respond(node: &OracleNode, commitment: &Digest) -> Option<Vec<ProofOfMembership>> {
    match node.behavior {
        NodeBehavior::Honest | NodeBehavior::VoteWithoutStore => {
            Some(node.stored_units(commitment).into_iter().cloned().collect())
        }
        NodeBehavior::Silent | NodeBehavior::WithholdAfterVote => None,
    }
}

/// Units a node hands over when audited. Nodes that vote answer audits
/// because the stake is at risk.
fn node_answer_audit(node: &OracleNode, commitment: &Digest) -> Vec<ProofOfMembership> {
    match node.behavior {
        NodeBehavior::Silent => Vec::new(),
        _ => node.stored_units(commitment).into_iter().cloned().collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainEntry {
    Commit {
        commitment: String,
        voters: Vec<usize>,
    },
    Fraud {
        commitment: String,
        layer: usize,
        proof_sha256: String,
        proof_bytes: usize,
    },
    BadCode {
        commitment: String,
        layer: usize,
        new_code_seed: u64,
    },
    Slash {
        commitment: String,
        node: usize,
        amount: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub id: u64,
    #[serde(flatten)]
    pub entry: ChainEntry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubmitOutcome {
    Committed { id: u64 },
    Pending { votes: usize, threshold: usize },
}

/// Append-only record of commitments and fraud proofs.
#[derive(Clone, Debug)]
pub struct TrustedChain {
    n: usize,
    threshold: usize,
    records: Vec<ChainRecord>,
    pending: BTreeMap<Digest, BTreeSet<usize>>,
    committed: BTreeMap<Digest, u64>,
    invalid: BTreeMap<Digest, u64>,
    proofs: BTreeMap<u64, FraudProof>,
}

impl TrustedChain {
    /// Commits need `ceil((beta + gamma) n)` distinct accepting votes.
    pub fn new(n: usize, beta: f64, gamma: f64) -> Result<Self, OracleError> {
        if n == 0 {
            return Err(OracleError::Parameter("chain needs at least one node".into()));
        }
        if !(0.0..1.0).contains(&beta) || !(gamma > 0.0 && beta + gamma <= 1.0 + 1e-12) {
            return Err(OracleError::Parameter(format!(
                "beta={beta}, gamma={gamma} must satisfy 0 <= beta, 0 < gamma, beta + gamma <= 1"
            )));
        }
        let threshold = (((beta + gamma) * n as f64) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            n,
            threshold,
            records: Vec::new(),
            pending: BTreeMap::new(),
            committed: BTreeMap::new(),
            invalid: BTreeMap::new(),
            proofs: BTreeMap::new(),
        })
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn records(&self) -> &[ChainRecord] {
        &self.records
    }

    pub fn commit_id(&self, commitment: &Digest) -> Option<u64> {
        self.committed.get(commitment).copied()
    }

    pub fn is_invalid(&self, commitment: &Digest) -> bool {
        self.invalid.contains_key(commitment)
    }

    pub fn fraud_proof(&self, record: u64) -> Option<&FraudProof> {
        self.proofs.get(&record)
    }

    /// Accepting voters recorded with the commit.
    pub fn voters(&self, commitment: &Digest) -> Vec<usize> {
        let Some(id) = self.commit_id(commitment) else {
            return Vec::new();
        };
        match &self.records[id as usize].entry {
            ChainEntry::Commit { voters, .. } => voters.clone(),
            _ => Vec::new(),
        }
    }

    fn append(&mut self, entry: ChainEntry) -> u64 {
        let id = self.records.len() as u64;
        self.records.push(ChainRecord { id, entry });
        id
    }

    pub fn submit_votes(&mut self, commitment: &Digest, votes: &[Vote]) -> SubmitOutcome {
        if let Some(id) = self.commit_id(commitment) {
            return SubmitOutcome::Committed { id };
        }
        let n = self.n;
        let tally = self.pending.entry(*commitment).or_default();
        tally.extend(
            votes
                .iter()
                .filter(|v| v.accept && v.commitment == *commitment && v.node < n)
                .map(|v| v.node),
        );
        if tally.len() < self.threshold {
            return SubmitOutcome::Pending {
                votes: tally.len(),
                threshold: self.threshold,
            };
        }
        let voters: Vec<usize> = self.pending.remove(commitment).unwrap_or_default().into_iter().collect();
        let id = self.append(ChainEntry::Commit {
            commitment: hex::encode(commitment),
            voters,
        });
        self.committed.insert(*commitment, id);
        SubmitOutcome::Committed { id }
    }

    /// Verifies and records a fraud proof; a second proof for the same
    /// commitment returns the first record.
    pub fn submit_fraud(&mut self, commitment: &Commitment, proof: &FraudProof) -> Result<u64, OracleError> {
        let id = commitment_id(commitment);
        if let Some(&record) = self.invalid.get(&id) {
            return Ok(record);
        }
        if !verify_fraud_proof(commitment, &commitment.params, proof) {
            return Err(OracleError::InvalidFraudProof(hex::encode(id)));
        }
        let bytes = wire::encode_fraud_proof(proof);
        let record = self.append(ChainEntry::Fraud {
            commitment: hex::encode(id),
            layer: proof.layer,
            proof_sha256: hex::encode(hash_bytes(&bytes)),
            proof_bytes: bytes.len(),
        });
        self.invalid.insert(id, record);
        self.proofs.insert(record, proof.clone());
        Ok(record)
    }

    /// One JSON object per line.
    pub fn to_log(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("chain records serialize") + "\n")
            .collect()
    }

    pub fn parse_log(text: &str) -> Result<Vec<ChainRecord>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

pub fn chain_submit_votes(chain: &mut TrustedChain, commitment: &Digest, votes: &[Vote]) -> SubmitOutcome {
    chain.submit_votes(commitment, votes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub result: ReconstructionResult,
    pub responders: usize,
    pub units_received: usize,
    pub bytes_downloaded: usize,
    /// Chain record holding the fraud proof, when one was found.
    pub fraud_record: Option<u64>,
}

/// Queries every node, reconstructs, and posts any fraud proof to the chain.
pub fn client_retrieve(
    chain: &mut TrustedChain,
    nodes: &[OracleNode],
    commitment: &Commitment,
) -> Result<RetrievalReport, OracleError> {
    let id = commitment_id(commitment);
    if chain.commit_id(&id).is_none() {
        return Err(OracleError::NotCommitted(hex::encode(id)));
    }
    let mut chunks = ChunkSet::new(commitment.clone());
    let mut responders = 0;
    let mut units_received = 0;
    let mut bytes_downloaded = 0;
    for node in nodes {
        let Some(units) = node_respond(node, &id) else {
            continue;
        };
        responders += 1;
        for pom in units {
            units_received += 1;
            bytes_downloaded += wire::encode_pom(&pom).len();
            // Invalid units are dropped; the sender is simply ignored.
            let _ = chunks.insert(pom);
        }
    }
    let result = reconstruct(commitment, &commitment.params, &chunks)?;
    let fraud_record = match &result {
        ReconstructionResult::Fraud(proof) => Some(chain.submit_fraud(commitment, proof)?),
        _ => None,
    };
    Ok(RetrievalReport {
        result,
        responders,
        units_received,
        bytes_downloaded,
        fraud_record,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AuditOutcome {
    Skipped,
    Passed { node: usize },
    Slashed { node: usize, amount: f64 },
}

/// With probability `p_a` picks one voter uniformly; it must hand over
/// exactly its assigned chunks or lose up to `stake_penalty`.
pub fn audit(
    chain: &mut TrustedChain,
    nodes: &mut [OracleNode],
    design: &DispersalDesign,
    commitment: &Commitment,
    p_a: f64,
    stake_penalty: f64,
    rng: &mut impl Rng,
) -> Result<AuditOutcome, OracleError> {
    if !(0.0..=1.0).contains(&p_a) {
        return Err(OracleError::Parameter(format!("p_a={p_a} outside [0, 1]")));
    }
    let id = commitment_id(commitment);
    let voters = chain.voters(&id);
    if voters.is_empty() {
        return Err(OracleError::NotCommitted(hex::encode(id)));
    }
    if !rng.gen_bool(p_a) {
        return Ok(AuditOutcome::Skipped);
    }
    let chosen = voters[rng.gen_range(0..voters.len())];
    let Some(node) = nodes.iter_mut().find(|n| n.id == chosen) else {
        return Err(OracleError::Parameter(format!("voter {chosen} is not a known node")));
    };
    let answer = node_answer_audit(node, &id);
    let indices: Vec<usize> = answer.iter().map(|p| p.base_index).collect();
    let complete = chosen < design.n
        && indices == design.distinct_chunks(chosen)
        && answer.iter().all(|p| verify_symbol(commitment, &commitment.params, p));
    if complete {
        return Ok(AuditOutcome::Passed { node: chosen });
    }
    let amount = stake_penalty.min(node.stake).max(0.0);
    node.stake -= amount;
    chain.append(ChainEntry::Slash {
        commitment: hex::encode(id),
        node: chosen,
        amount,
    });
    Ok(AuditOutcome::Slashed { node: chosen, amount })
}

#[derive(Clone, Debug, PartialEq)]
pub enum BadCodeOutcome {
    /// Every layer code passes the gate and decoding did not stall.
    Kept,
    Replaced { layer: usize, params: TreeParams, record: u64 },
}

/// Pools the chunks held by honest nodes and checks whether the code is bad:
/// decoding stalls with enough symbols, or a layer code fails the gate. A bad
/// code is replaced by the gated code at `code_seed + 1`, which every node
/// derives identically from the recorded seed.
pub fn bad_code_round(
    chain: &mut TrustedChain,
    nodes: &[OracleNode],
    commitment: &Commitment,
) -> Result<BadCodeOutcome, OracleError> {
    let id = commitment_id(commitment);
    let params = &commitment.params;
    let mut pooled = ChunkSet::new(commitment.clone());
    for node in nodes.iter().filter(|n| n.behavior == NodeBehavior::Honest) {
        for pom in node.stored_units(&id) {
            let _ = pooled.insert(pom.clone());
        }
    }
    let mut bad_layer = match reconstruct(commitment, params, &pooled) {
        Err(RetrievalError::BadCode { layer, .. }) => Some(layer),
        _ => None,
    };
    let geometry = commitment.geometry()?;
    if bad_layer.is_none() {
        let trials = params.gate_trials.max(BAD_CODE_GATE_TRIALS);
        let codes = params.layer_codes(&geometry)?;
        bad_layer = codes
            .iter()
            .enumerate()
            .find(|(_, code)| is_bad_code(code, params.alpha, trials, crate::codec::gate_rng_seed(code.seed())))
            .map(|(i, _)| i + 1);
    }
    let Some(layer) = bad_layer else {
        return Ok(BadCodeOutcome::Kept);
    };
    let replacement = TreeParams {
        code_seed: params.code_seed.wrapping_add(1),
        gate_trials: params.gate_trials.max(BAD_CODE_GATE_TRIALS),
        ..params.clone()
    };
    replacement.layer_codes(&geometry)?;
    let record = chain.append(ChainEntry::BadCode {
        commitment: hex::encode(id),
        layer,
        new_code_seed: replacement.code_seed,
    });
    Ok(BadCodeOutcome::Replaced {
        layer,
        params: replacement,
        record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cit::{build_tree_with_tamper, Tamper};
    use crate::codec::Rate;
    use crate::dispersal::assign_chunks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> TreeParams {
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

    fn block() -> Vec<u8> {
        (0..128u32).map(|i| (i * 37 % 251) as u8).collect()
    }

    fn honest_nodes(n: usize) -> Vec<OracleNode> {
        (0..n).map(|i| OracleNode::new(i, NodeBehavior::Honest, 10.0)).collect()
    }

    #[test]
    fn four_nodes_full_efficiency_get_eight_each() {
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        assert_eq!(design.k_per_node, 8);
        let (_, messages) = client_disperse(&block(), &params(), &design).unwrap();
        for (i, m) in messages.iter().enumerate() {
            assert_eq!(m.units.len(), design.distinct_chunks(i).len());
        }
    }

    #[test]
    fn empty_assignment_gets_commitment_only() {
        let mut design = assign_chunks(32, 4, 1.0, 3).unwrap();
        design.assignments[2].clear();
        let (tree, messages) = client_disperse(&block(), &params(), &design).unwrap();
        assert!(messages[2].units.is_empty());
        assert_eq!(&messages[2].commitment, tree.commitment());
    }

    #[test]
    fn node_behaviors_on_dispersal() {
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        let (_, mut messages) = client_disperse(&block(), &params(), &design).unwrap();
        let mut honest = OracleNode::new(0, NodeBehavior::Honest, 1.0);
        assert!(node_on_dispersal(&mut honest, &design, &messages[0]).unwrap().accept);
        assert_eq!(honest.stored_units(&commitment_id(&messages[0].commitment)).len(), messages[0].units.len());

        let mut lazy = OracleNode::new(1, NodeBehavior::VoteWithoutStore, 1.0);
        assert!(node_on_dispersal(&mut lazy, &design, &messages[1]).is_some());
        assert_eq!(lazy.stored_bytes(), 0);

        let mut silent = OracleNode::new(2, NodeBehavior::Silent, 1.0);
        assert!(node_on_dispersal(&mut silent, &design, &messages[2]).is_none());

        messages[3].units[0].base_symbol[0] ^= 1;
        let mut picky = OracleNode::new(3, NodeBehavior::Honest, 1.0);
        assert!(node_on_dispersal(&mut picky, &design, &messages[3]).is_none());
        assert_eq!(picky.stored_bytes(), 0);
    }

    #[test]
    fn threshold_boundary_and_dedup() {
        let mut chain = TrustedChain::new(20, 0.2, 0.6).unwrap();
        assert_eq!(chain.threshold(), 16);
        let c = [7u8; 32];
        let votes: Vec<Vote> = (0..15)
            .map(|node| Vote {
                node,
                commitment: c,
                accept: true,
            })
            .collect();
        let mut doubled = votes.clone();
        doubled.extend(votes.iter().copied());
        assert_eq!(
            chain.submit_votes(&c, &doubled),
            SubmitOutcome::Pending {
                votes: 15,
                threshold: 16
            }
        );
        let last = Vote {
            node: 15,
            commitment: c,
            accept: true,
        };
        assert_eq!(chain.submit_votes(&c, &[last]), SubmitOutcome::Committed { id: 0 });
        assert_eq!(chain.submit_votes(&c, &[last]), SubmitOutcome::Committed { id: 0 });
        assert_eq!(chain.records().len(), 1);
        let parsed = TrustedChain::parse_log(&chain.to_log()).unwrap();
        assert_eq!(parsed, chain.records());
    }

    fn commit(chain: &mut TrustedChain, nodes: &mut [OracleNode], design: &DispersalDesign, messages: &[DispersalMessage]) {
        let votes: Vec<Vote> = nodes
            .iter_mut()
            .zip(messages)
            .filter_map(|(node, m)| node_on_dispersal(node, design, m))
            .collect();
        let id = commitment_id(&messages[0].commitment);
        assert!(matches!(chain.submit_votes(&id, &votes), SubmitOutcome::Committed { .. }));
    }

    #[test]
    fn honest_round_trip() {
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        let (tree, messages) = client_disperse(&block(), &params(), &design).unwrap();
        let mut nodes = honest_nodes(4);
        let mut chain = TrustedChain::new(4, 0.0, 0.75).unwrap();
        commit(&mut chain, &mut nodes, &design, &messages);
        let report = client_retrieve(&mut chain, &nodes, tree.commitment()).unwrap();
        assert_eq!(report.result, ReconstructionResult::Block(block()));
        assert!(report.bytes_downloaded > 0);
    }

    #[test]
    fn invalid_coding_is_recorded_on_chain() {
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        let tamper = Tamper {
            layer: 4,
            index: 20,
            mask: vec![0xff],
        };
        let tree = build_tree_with_tamper(&block(), &params(), Some(&tamper)).unwrap();
        let messages = disperse_tree(&tree, &design).unwrap();
        let mut nodes = honest_nodes(4);
        let mut chain = TrustedChain::new(4, 0.0, 0.75).unwrap();
        commit(&mut chain, &mut nodes, &design, &messages);
        let report = client_retrieve(&mut chain, &nodes, tree.commitment()).unwrap();
        let ReconstructionResult::Fraud(proof) = &report.result else {
            panic!("expected fraud, got {:?}", report.result);
        };
        let record = report.fraud_record.unwrap();
        assert!(chain.is_invalid(&commitment_id(tree.commitment())));
        assert_eq!(chain.fraud_proof(record), Some(proof));
        let again = client_retrieve(&mut chain, &nodes, tree.commitment()).unwrap();
        assert_eq!(again.fraud_record, Some(record));
    }

    #[test]
    fn fabricated_fraud_is_refused() {
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        let tamper = Tamper {
            layer: 4,
            index: 20,
            mask: vec![0xff],
        };
        let bad = build_tree_with_tamper(&block(), &params(), Some(&tamper)).unwrap();
        let bad_msgs = disperse_tree(&bad, &design).unwrap();
        let mut nodes = honest_nodes(4);
        let mut chain = TrustedChain::new(4, 0.0, 0.75).unwrap();
        commit(&mut chain, &mut nodes, &design, &bad_msgs);
        let ReconstructionResult::Fraud(proof) = client_retrieve(&mut chain, &nodes, bad.commitment()).unwrap().result
        else {
            panic!("expected fraud");
        };
        let honest = build_tree(&block(), &params()).unwrap();
        let mut fresh = TrustedChain::new(4, 0.0, 0.75).unwrap();
        assert!(matches!(
            fresh.submit_fraud(honest.commitment(), &proof),
            Err(OracleError::InvalidFraudProof(_))
        ));
        assert!(fresh.records().is_empty());
    }

    #[test]
    fn retrieve_requires_commit() {
        let tree = build_tree(&block(), &params()).unwrap();
        let mut chain = TrustedChain::new(4, 0.0, 0.75).unwrap();
        assert!(matches!(
            client_retrieve(&mut chain, &honest_nodes(4), tree.commitment()),
            Err(OracleError::NotCommitted(_))
        ));
    }

    #[test]
    fn audits() {
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        let (tree, messages) = client_disperse(&block(), &params(), &design).unwrap();
        let mut nodes = vec![
            OracleNode::new(0, NodeBehavior::VoteWithoutStore, 10.0),
            OracleNode::new(1, NodeBehavior::Honest, 10.0),
            OracleNode::new(2, NodeBehavior::Honest, 10.0),
            OracleNode::new(3, NodeBehavior::WithholdAfterVote, 10.0),
        ];
        let mut chain = TrustedChain::new(4, 0.0, 1.0).unwrap();
        commit(&mut chain, &mut nodes, &design, &messages);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let outcome = audit(&mut chain, &mut nodes, &design, tree.commitment(), 0.0, 4.0, &mut rng).unwrap();
            assert_eq!(outcome, AuditOutcome::Skipped);
        }
        let mut slashed = 0;
        for _ in 0..40 {
            match audit(&mut chain, &mut nodes, &design, tree.commitment(), 1.0, 4.0, &mut rng).unwrap() {
                AuditOutcome::Passed { node } => assert_ne!(node, 0),
                AuditOutcome::Slashed { node, .. } => {
                    assert_eq!(node, 0);
                    slashed += 1;
                }
                AuditOutcome::Skipped => panic!("p_a = 1 always audits"),
            }
        }
        assert!(slashed > 0);
        assert_eq!(nodes[0].stake, 0.0);
        assert_eq!(nodes[1].stake, 10.0);
    }

    fn find_bad_seed(p: &TreeParams) -> u64 {
        let geometry = p.geometry(128).unwrap();
        (0..500u64)
            .find(|&seed| {
                let candidate = TreeParams {
                    code_seed: seed,
                    ..p.clone()
                };
                let codes = candidate.layer_codes(&geometry).unwrap();
                codes
                    .iter()
                    .any(|c| is_bad_code(c, p.alpha, BAD_CODE_GATE_TRIALS, crate::codec::gate_rng_seed(c.seed())))
            })
            .expect("some ungated seed fails a strict gate")
    }

    #[test]
    fn bad_code_is_replaced_deterministically() {
        // A strict target makes some ungated codes fail.
        let mut p = params();
        p.alpha = 0.3;
        p.gate_trials = 0;
        p.code_seed = find_bad_seed(&p);
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        let (tree, messages) = client_disperse(&block(), &p, &design).unwrap();
        let mut nodes = honest_nodes(4);
        let mut chain = TrustedChain::new(4, 0.0, 0.75).unwrap();
        commit(&mut chain, &mut nodes, &design, &messages);
        let mut other = chain.clone();
        let a = bad_code_round(&mut chain, &nodes, tree.commitment()).unwrap();
        let b = bad_code_round(&mut other, &nodes, tree.commitment()).unwrap();
        assert_eq!(a, b);
        let BadCodeOutcome::Replaced { params: new, .. } = a else {
            panic!("expected replacement");
        };
        assert_eq!(new.code_seed, p.code_seed + 1);
        let geometry = new.geometry(128).unwrap();
        for code in new.layer_codes(&geometry).unwrap() {
            assert!(!is_bad_code(&code, new.alpha, new.gate_trials, crate::codec::gate_rng_seed(code.seed())));
        }
    }

    #[test]
    fn good_code_is_kept() {
        let design = assign_chunks(32, 4, 1.0, 3).unwrap();
        let (tree, messages) = client_disperse(&block(), &params(), &design).unwrap();
        let mut nodes = honest_nodes(4);
        let mut chain = TrustedChain::new(4, 0.0, 0.75).unwrap();
        commit(&mut chain, &mut nodes, &design, &messages);
        assert_eq!(bad_code_round(&mut chain, &nodes, tree.commitment()).unwrap(), BadCodeOutcome::Kept);
        assert_eq!(chain.records().len(), 1);
    }
}
