//! Block reconstruction from verified chunks and incorrect-coding proofs.
//!
//! Decoding runs top-down. Once layer `j - 1` is fully known and checked,
//! every layer-`j` group of `q` children has a trusted parent value. Groups
//! that some collected proof climbed through also have a trusted hash per
//! child ("anchored" groups), so a symbol solved there is checked the moment
//! it is found. Symbols solved in other groups stay provisional until their
//! whole group is known and can be re-aggregated against the parent.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cit::{
    aggregate, hash_bytes, verify_symbol, CitError, Commitment, Digest, Geometry, MerklePath,
    ProofOfMembership, TreeParams,
};
use crate::codec::{xor_into, CodeSpec, Symbol};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RetrievalError {
    #[error("proof of membership for base index {index} does not verify")]
    InvalidUnit { index: usize },
    #[error("layer {layer} stalled with {known_fraction:.3} of its symbols known; the code is defective")]
    BadCode { layer: usize, known_fraction: f64 },
    #[error(transparent)]
    Cit(#[from] CitError),
}

/// Verified chunks collected for one commitment, keyed by base index.
#[derive(Clone, Debug)]
pub struct ChunkSet {
    commitment: Commitment,
    units: BTreeMap<usize, ProofOfMembership>,
}

impl ChunkSet {
    pub fn new(commitment: Commitment) -> Self {
        Self {
            commitment,
            units: BTreeMap::new(),
        }
    }

    /// Adds a unit after checking it. Returns false for a duplicate index.
    pub fn insert(&mut self, pom: ProofOfMembership) -> Result<bool, RetrievalError> {
        if !verify_symbol(&self.commitment, &self.commitment.params, &pom) {
            return Err(RetrievalError::InvalidUnit {
                index: pom.base_index,
            });
        }
        if self.units.contains_key(&pom.base_index) {
            return Ok(false);
        }
        self.units.insert(pom.base_index, pom);
        Ok(true)
    }

    pub fn commitment(&self) -> &Commitment {
        &self.commitment
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> impl Iterator<Item = &ProofOfMembership> {
        self.units.values()
    }
}

/// How a fraud proof obtains one symbol's value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Evidence {
    /// The value with a Merkle path from its hash to the root.
    Committed { value: Symbol, path: MerklePath },
    /// The XOR of the other members of `equation`, each with evidence.
    Derived {
        equation: usize,
        sources: Vec<(usize, Evidence)>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FraudKind {
    /// Every member of the equation is given and the XOR is nonzero.
    ParityViolation {
        equation: usize,
        members: Vec<(usize, Evidence)>,
    },
    /// The XOR of all members but `target` does not hash to the committed
    /// hash of `target`.
    HashMismatch {
        equation: usize,
        target: usize,
        members: Vec<(usize, Evidence)>,
        target_hash: Digest,
        target_path: MerklePath,
    },
    /// The hashes of a parent's children do not aggregate to the parent.
    /// `parent` indexes layer `layer - 1`.
    GroupMismatch {
        parent: usize,
        parent_hash: Digest,
        parent_path: MerklePath,
        children: Vec<(usize, Evidence)>,
    },
}

/// Proof that a commitment is not a correctly coded tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FraudProof {
    pub layer: usize,
    pub kind: FraudKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReconstructionResult {
    Block(Vec<u8>),
    Fraud(FraudProof),
    /// Known fraction per layer, root first.
    Insufficient(Vec<f64>),
}

pub fn reconstruct(
    commitment: &Commitment,
    params: &TreeParams,
    chunks: &ChunkSet,
) -> Result<ReconstructionResult, RetrievalError> {
    if *params != commitment.params {
        return Err(CitError::Parameter("parameters differ from the commitment".into()).into());
    }
    let geometry = commitment.geometry()?;
    let depth = geometry.depth();
    let codes = params.layer_codes(&geometry)?;

    let mut seeds: Vec<BTreeMap<usize, Symbol>> = vec![BTreeMap::new(); depth];
    let mut anchors: Vec<BTreeMap<usize, Vec<Digest>>> = vec![BTreeMap::new(); depth];
    for pom in chunks.units() {
        for (layer, index, value) in pom.symbols(&geometry) {
            seeds[layer - 1].insert(index, value.clone());
        }
        for (layer, parent, group) in pom.covered_groups(&geometry) {
            anchors[layer - 1].insert(parent, group);
        }
    }
    let fractions: Vec<f64> = (1..=depth)
        .map(|j| {
            if j == 1 {
                1.0
            } else {
                seeds[j - 1].len() as f64 / geometry.size(j) as f64
            }
        })
        .collect();

    let mut upper: Vec<Vec<Symbol>> = Vec::with_capacity(depth);
    let mut upper_hashes: Vec<Vec<Digest>> = Vec::with_capacity(depth);
    for layer in 1..=depth {
        let mut dec = LayerDecoder::new(
            commitment,
            &geometry,
            &codes[layer - 1],
            layer,
            &upper,
            &upper_hashes,
        );
        if layer == 1 {
            for (x, root) in commitment.root.iter().enumerate() {
                dec.values[x] = Some(root.to_vec());
                dec.authenticated[x] = true;
            }
        } else {
            for (&x, value) in &seeds[layer - 1] {
                dec.values[x] = Some(value.clone());
                dec.authenticated[x] = true;
            }
            for (&parent, group) in &anchors[layer - 1] {
                dec.covered[parent] = true;
                for (y, h) in geometry.children(layer, parent).zip(group) {
                    dec.anchors[y] = Some(*h);
                }
            }
        }
        if let Some(proof) = dec.run() {
            return Ok(ReconstructionResult::Fraud(proof));
        }
        if dec.values.iter().any(Option::is_none) {
            let known = fractions[layer - 1];
            if known >= 1.0 - params.alpha {
                return Err(RetrievalError::BadCode {
                    layer,
                    known_fraction: known,
                });
            }
            return Ok(ReconstructionResult::Insufficient(fractions));
        }
        let values: Vec<Symbol> = dec.values.into_iter().map(|v| v.expect("complete")).collect();
        upper_hashes.push(values.iter().map(|v| hash_bytes(v)).collect());
        upper.push(values);
    }

    let base = &upper[depth - 1];
    let mut block: Vec<u8> = base[..geometry.systematic(depth)].concat();
    block.truncate(commitment.block_len as usize);
    Ok(ReconstructionResult::Block(block))
}

struct LayerDecoder<'a> {
    commitment: &'a Commitment,
    geometry: &'a Geometry,
    code: &'a CodeSpec,
    layer: usize,
    upper: &'a [Vec<Symbol>],
    upper_hashes: &'a [Vec<Digest>],
    values: Vec<Option<Symbol>>,
    authenticated: Vec<bool>,
    /// Equation that produced a provisional value.
    origin: Vec<Option<usize>>,
    anchors: Vec<Option<Digest>>,
    covered: Vec<bool>,
    group_checked: Vec<bool>,
}

impl<'a> LayerDecoder<'a> {
    fn new(
        commitment: &'a Commitment,
        geometry: &'a Geometry,
        code: &'a CodeSpec,
        layer: usize,
        upper: &'a [Vec<Symbol>],
        upper_hashes: &'a [Vec<Digest>],
    ) -> Self {
        let m = geometry.size(layer);
        let groups = if layer > 1 { geometry.stride(layer) } else { 0 };
        Self {
            commitment,
            geometry,
            code,
            layer,
            upper,
            upper_hashes,
            values: vec![None; m],
            authenticated: vec![false; m],
            origin: vec![None; m],
            anchors: vec![None; m],
            covered: vec![false; groups],
            group_checked: vec![false; groups],
        }
    }

    /// Peels the layer; returns a proof as soon as an inconsistency shows.
    fn run(&mut self) -> Option<FraudProof> {
        let eqs = self.code.parity_checks();
        let mut checked = vec![false; eqs.len()];
        loop {
            let mut progress = false;
            for (e, eq) in eqs.iter().enumerate() {
                if checked[e] {
                    continue;
                }
                let mut unknown = eq.indices().iter().filter(|&&i| self.values[i].is_none());
                match (unknown.next(), unknown.next()) {
                    (None, _) => {
                        checked[e] = true;
                        let sum = self.xor_members(eq.indices(), None);
                        if sum.iter().any(|&b| b != 0) {
                            return Some(self.violation_proof(e));
                        }
                    }
                    (Some(&target), None) => {
                        checked[e] = true;
                        progress = true;
                        let value = self.xor_members(eq.indices(), Some(target));
                        if let Some(anchor) = self.anchors[target] {
                            if hash_bytes(&value) != anchor {
                                return Some(self.mismatch_proof(e, target, anchor));
                            }
                            self.authenticated[target] = true;
                        } else {
                            self.origin[target] = Some(e);
                        }
                        self.values[target] = Some(value);
                        if let Some(proof) = self.check_group(target) {
                            return Some(proof);
                        }
                    }
                    _ => {}
                }
            }
            if !progress {
                return None;
            }
        }
    }

    fn xor_members(&self, members: &[usize], skip: Option<usize>) -> Symbol {
        let len = self.geometry.symbol_len(self.layer, self.commitment.params.c);
        let mut acc = vec![0u8; len];
        for &i in members.iter().filter(|&&i| Some(i) != skip) {
            xor_into(&mut acc, self.values[i].as_ref().expect("member known"));
        }
        acc
    }

    /// Re-aggregates a completed group that has no anchored hashes.
    fn check_group(&mut self, x: usize) -> Option<FraudProof> {
        if self.layer == 1 {
            return None;
        }
        let parent = self.geometry.parent(self.layer, x);
        if self.covered[parent] || self.group_checked[parent] {
            return None;
        }
        let children: Vec<usize> = self.geometry.children(self.layer, parent).collect();
        if children.iter().any(|&y| self.values[y].is_none()) {
            return None;
        }
        self.group_checked[parent] = true;
        let hashes: Vec<Digest> = children
            .iter()
            .map(|&y| hash_bytes(self.values[y].as_ref().expect("known")))
            .collect();
        let expected = &self.upper[self.layer - 2][parent];
        if aggregate(&hashes).as_slice() != expected.as_slice() {
            let parent_path = MerklePath::build(self.geometry, self.layer - 1, parent, |l, y| {
                Some(self.upper_hashes[l - 1][y])
            })
            .expect("upper layers complete");
            return Some(FraudProof {
                layer: self.layer,
                kind: FraudKind::GroupMismatch {
                    parent,
                    parent_hash: self.upper_hashes[self.layer - 2][parent],
                    parent_path,
                    children: children.iter().map(|&y| (y, self.evidence(y))).collect(),
                },
            });
        }
        for &y in &children {
            self.authenticated[y] = true;
        }
        None
    }

    /// Committed hash of `x`, if one is known.
    fn committed_hash(&self, x: usize) -> Option<Digest> {
        self.anchors[x].or_else(|| {
            self.authenticated[x]
                .then(|| hash_bytes(self.values[x].as_ref().expect("authenticated")))
        })
    }

    fn path(&self, x: usize) -> MerklePath {
        MerklePath::build(self.geometry, self.layer, x, |l, y| {
            if l == self.layer {
                self.anchors[y].or_else(|| self.values[y].as_ref().map(|v| hash_bytes(v)))
            } else {
                Some(self.upper_hashes[l - 1][y])
            }
        })
        .expect("authenticated symbols have complete paths")
    }

    fn evidence(&self, x: usize) -> Evidence {
        let value = self.values[x].clone().expect("known");
        if self.authenticated[x] {
            return Evidence::Committed {
                value,
                path: self.path(x),
            };
        }
        let equation = self.origin[x].expect("provisional values have an origin");
        let sources = self.code.parity_checks()[equation]
            .indices()
            .iter()
            .filter(|&&y| y != x)
            .map(|&y| (y, self.evidence(y)))
            .collect();
        Evidence::Derived { equation, sources }
    }

    fn violation_proof(&self, equation: usize) -> FraudProof {
        let members = self.code.parity_checks()[equation].indices();
        let target = members
            .iter()
            .rev()
            .copied()
            .find(|&x| self.committed_hash(x).is_some());
        let kind = match target {
            Some(target) => FraudKind::HashMismatch {
                equation,
                target,
                members: members
                    .iter()
                    .filter(|&&y| y != target)
                    .map(|&y| (y, self.evidence(y)))
                    .collect(),
                target_hash: self.committed_hash(target).expect("chosen for its hash"),
                target_path: self.path(target),
            },
            None => FraudKind::ParityViolation {
                equation,
                members: members.iter().map(|&y| (y, self.evidence(y))).collect(),
            },
        };
        FraudProof {
            layer: self.layer,
            kind,
        }
    }

    fn mismatch_proof(&self, equation: usize, target: usize, anchor: Digest) -> FraudProof {
        let members = self.code.parity_checks()[equation]
            .indices()
            .iter()
            .filter(|&&y| y != target)
            .map(|&y| (y, self.evidence(y)))
            .collect();
        FraudProof {
            layer: self.layer,
            kind: FraudKind::HashMismatch {
                equation,
                target,
                members,
                target_hash: anchor,
                target_path: self.path(target),
            },
        }
    }
}

/// Checks a fraud proof against a commitment. Malformed proofs are rejected.
pub fn verify_fraud_proof(commitment: &Commitment, params: &TreeParams, proof: &FraudProof) -> bool {
    if *params != commitment.params {
        return false;
    }
    let Ok(geometry) = commitment.geometry() else {
        return false;
    };
    let layer = proof.layer;
    if layer == 0 || layer > geometry.depth() {
        return false;
    }
    let Ok(code) = params.layer_code(&geometry, layer) else {
        return false;
    };
    let checker = ProofChecker {
        commitment,
        geometry: &geometry,
        code: &code,
        layer,
        symbol_len: geometry.symbol_len(layer, params.c),
    };
    checker.check(&proof.kind).unwrap_or(false)
}

struct ProofChecker<'a> {
    commitment: &'a Commitment,
    geometry: &'a Geometry,
    code: &'a CodeSpec,
    layer: usize,
    symbol_len: usize,
}

impl ProofChecker<'_> {
    fn check(&self, kind: &FraudKind) -> Option<bool> {
        let eqs = self.code.parity_checks();
        match kind {
            FraudKind::ParityViolation { equation, members } => {
                let eq = eqs.get(*equation)?;
                let sum = self.xor_exact(eq.indices(), None, members, 0)?;
                Some(sum.iter().any(|&b| b != 0))
            }
            FraudKind::HashMismatch {
                equation,
                target,
                members,
                target_hash,
                target_path,
            } => {
                let eq = eqs.get(*equation)?;
                if !eq.contains(*target) {
                    return None;
                }
                let value = self.xor_exact(eq.indices(), Some(*target), members, 0)?;
                let committed = self.commitment.verify_path(
                    self.geometry,
                    self.layer,
                    *target,
                    *target_hash,
                    target_path,
                );
                Some(committed && hash_bytes(&value) != *target_hash)
            }
            FraudKind::GroupMismatch {
                parent,
                parent_hash,
                parent_path,
                children,
            } => {
                if self.layer < 2 || *parent >= self.geometry.stride(self.layer) {
                    return None;
                }
                let expected: Vec<usize> = self.geometry.children(self.layer, *parent).collect();
                if children.len() != expected.len() {
                    return None;
                }
                let mut hashes = Vec::with_capacity(expected.len());
                for ((x, ev), &want) in children.iter().zip(&expected) {
                    if *x != want {
                        return None;
                    }
                    hashes.push(hash_bytes(&self.resolve(*x, ev, 0)?));
                }
                let committed = self.commitment.verify_path(
                    self.geometry,
                    self.layer - 1,
                    *parent,
                    *parent_hash,
                    parent_path,
                );
                Some(committed && hash_bytes(&aggregate(&hashes)) != *parent_hash)
            }
        }
    }

    /// XOR of `members`, which must list exactly `indices` minus `skip`.
    fn xor_exact(
        &self,
        indices: &[usize],
        skip: Option<usize>,
        members: &[(usize, Evidence)],
        depth: usize,
    ) -> Option<Symbol> {
        let expected = indices.iter().filter(|&&i| Some(i) != skip);
        if expected.clone().count() != members.len() {
            return None;
        }
        let mut acc = vec![0u8; self.symbol_len];
        for (&want, (x, ev)) in expected.zip(members) {
            if want != *x {
                return None;
            }
            xor_into(&mut acc, &self.resolve(*x, ev, depth)?);
        }
        Some(acc)
    }

    fn resolve(&self, x: usize, evidence: &Evidence, depth: usize) -> Option<Symbol> {
        // A derivation chain longer than the layer cannot be minimal.
        if depth > self.geometry.size(self.layer) {
            return None;
        }
        match evidence {
            Evidence::Committed { value, path } => {
                let ok = value.len() == self.symbol_len
                    && self.commitment.verify_path(
                        self.geometry,
                        self.layer,
                        x,
                        hash_bytes(value),
                        path,
                    );
                ok.then(|| value.clone())
            }
            Evidence::Derived { equation, sources } => {
                let eq = self.code.parity_checks().get(*equation)?;
                if !eq.contains(x) {
                    return None;
                }
                self.xor_exact(eq.indices(), Some(x), sources, depth + 1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cit::{build_tree, build_tree_with_tamper, Tamper};
    use crate::codec::Rate;
    use rand::seq::SliceRandom;
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

    fn block(len: usize) -> Vec<u8> {
        (0..len).map(|i| (i * 7 + 3) as u8).collect()
    }

    fn chunks_for(tree: &crate::cit::CodedTree, indices: &[usize]) -> ChunkSet {
        let mut set = ChunkSet::new(tree.commitment().clone());
        for &i in indices {
            set.insert(tree.sample_pom(i).unwrap()).unwrap();
        }
        set
    }

    #[test]
    fn all_chunks_reconstruct() {
        let p = params();
        let tree = build_tree(&block(120), &p).unwrap();
        let all: Vec<usize> = (0..32).collect();
        let out = reconstruct(tree.commitment(), &p, &chunks_for(&tree, &all)).unwrap();
        assert_eq!(out, ReconstructionResult::Block(block(120)));
    }

    #[test]
    fn random_subsets_reconstruct() {
        let p = params();
        let tree = build_tree(&block(128), &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx: Vec<usize> = (0..32).collect();
        for _ in 0..200 {
            idx.shuffle(&mut rng);
            let out = reconstruct(tree.commitment(), &p, &chunks_for(&tree, &idx[..28])).unwrap();
            assert_eq!(out, ReconstructionResult::Block(block(128)));
        }
    }

    #[test]
    fn too_few_chunks_is_insufficient() {
        let p = params();
        let tree = build_tree(&block(128), &p).unwrap();
        let out = reconstruct(tree.commitment(), &p, &chunks_for(&tree, &[0, 1, 2])).unwrap();
        match out {
            ReconstructionResult::Insufficient(f) => {
                assert_eq!(f.len(), 4);
                assert_eq!(f[0], 1.0);
                assert!(f[3] < 0.2);
            }
            other => panic!("expected insufficient, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_invalid_units() {
        let p = params();
        let tree = build_tree(&block(128), &p).unwrap();
        let mut set = ChunkSet::new(tree.commitment().clone());
        assert!(set.insert(tree.sample_pom(3).unwrap()).unwrap());
        assert!(!set.insert(tree.sample_pom(3).unwrap()).unwrap());
        let mut bad = tree.sample_pom(4).unwrap();
        bad.base_symbol[0] ^= 1;
        assert_eq!(set.insert(bad), Err(RetrievalError::InvalidUnit { index: 4 }));
    }

    #[test]
    fn tampered_base_parity_is_caught() {
        let p = params();
        let data = block(128);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut idx: Vec<usize> = (0..32).collect();
        for target in 8..32 {
            let tamper = Tamper {
                layer: 4,
                index: target,
                mask: vec![0x5a; 3],
            };
            let tree = build_tree_with_tamper(&data, &p, Some(&tamper)).unwrap();
            for _ in 0..10 {
                idx.shuffle(&mut rng);
                let chunks = chunks_for(&tree, &idx[..28]);
                match reconstruct(tree.commitment(), &p, &chunks).unwrap() {
                    ReconstructionResult::Fraud(proof) => {
                        assert!(verify_fraud_proof(tree.commitment(), &p, &proof));
                    }
                    other => panic!("tampered symbol {target}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn tampered_upper_layers_are_caught() {
        let p = params();
        let data = block(128);
        for (layer, index) in [(1, 2), (2, 5), (3, 9), (4, 3)] {
            let tamper = Tamper {
                layer,
                index,
                mask: vec![1],
            };
            let tree = build_tree_with_tamper(&data, &p, Some(&tamper)).unwrap();
            let all: Vec<usize> = (0..28).collect();
            match reconstruct(tree.commitment(), &p, &chunks_for(&tree, &all)).unwrap() {
                ReconstructionResult::Fraud(proof) => {
                    assert_eq!(proof.layer, layer);
                    assert!(verify_fraud_proof(tree.commitment(), &p, &proof));
                }
                other => panic!("layer {layer}: {other:?}"),
            }
        }
    }

    #[test]
    fn fraud_proof_does_not_transfer_to_honest_tree() {
        let p = params();
        let data = block(128);
        let tamper = Tamper {
            layer: 4,
            index: 30,
            mask: vec![0xff],
        };
        let bad = build_tree_with_tamper(&data, &p, Some(&tamper)).unwrap();
        let honest = build_tree(&data, &p).unwrap();
        let all: Vec<usize> = (0..32).collect();
        let ReconstructionResult::Fraud(proof) =
            reconstruct(bad.commitment(), &p, &chunks_for(&bad, &all)).unwrap()
        else {
            panic!("expected fraud");
        };
        assert!(verify_fraud_proof(bad.commitment(), &p, &proof));
        assert!(!verify_fraud_proof(honest.commitment(), &p, &proof));
    }

    #[test]
    fn fabricated_proof_on_honest_tree_fails() {
        let p = params();
        let tree = build_tree(&block(128), &p).unwrap();
        let eq = tree.code(4).parity_checks()[0].clone();
        let members = eq
            .indices()
            .iter()
            .map(|&x| {
                (
                    x,
                    Evidence::Committed {
                        value: tree.symbols(4)[x].clone(),
                        path: tree.merkle_path(4, x).unwrap(),
                    },
                )
            })
            .collect();
        let proof = FraudProof {
            layer: 4,
            kind: FraudKind::ParityViolation {
                equation: 0,
                members,
            },
        };
        assert!(!verify_fraud_proof(tree.commitment(), &p, &proof));
    }
}
